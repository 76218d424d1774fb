use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

const SV_TRUTH: &str = r#"{"kappa":2,"theta":0.04,"sigma_v":0.3,"rho":-0.5,"v0":0.04}"#;
const NIG_BASE: &str = r#"{"alpha":6.1882,"beta":-3.8941,"delta":0.1622,"mu":0}"#;

fn levyspx(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_levyspx"))
        .args(args)
        .current_dir(dir)
        .env("SOURCE_DATE_EPOCH", "1700000000")
        .output()
        .expect("binary runs")
}

fn ok(dir: &Path, args: &[&str]) -> Output {
    let out = levyspx(dir, args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn json(path: PathBuf) -> Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

fn data_rows(path: PathBuf) -> usize {
    std::fs::read_to_string(path)
        .unwrap()
        .lines()
        .filter(|l| !l.starts_with('#'))
        .count()
        - 1
}

const HEADER: &str = "trade_date,spot,strike,maturity_days,bid,ask,rate,dividend_yield,implied_vol";

#[test]
fn filter_drops_the_arbitrage_violation() {
    let dir = tempfile::tempdir().unwrap();
    let mut csv = String::from(HEADER);
    csv.push('\n');
    for i in 0..9 {
        let k = 95 + i;
        csv.push_str(&format!("2013-01-02,100,{k},30,7.9,8.1,0.01,0.0,\n"));
    }
    // Mid 1.0 is below the intrinsic value 20.
    csv.push_str("2013-01-02,100,80,30,0.9,1.1,0.01,0.0,\n");
    std::fs::write(dir.path().join("q.csv"), csv).unwrap();
    ok(dir.path(), &["filter", "--quotes", "q.csv", "--out", "kept.csv"]);
    assert_eq!(data_rows(dir.path().join("kept.csv")), 9);
    let rejects = std::fs::read_to_string(dir.path().join("kept.rejects.csv")).unwrap();
    assert!(rejects.contains("no_arbitrage"), "{rejects}");
    assert!(dir.path().join("kept.csv.manifest.json").exists());
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let missing = levyspx(dir.path(), &["filter", "--quotes", "absent.csv", "--out", "k.csv"]);
    assert_eq!(missing.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&missing.stderr).contains("absent.csv"));

    std::fs::write(dir.path().join("bad.csv"), "a,b\n1,2\n").unwrap();
    let schema = levyspx(dir.path(), &["filter", "--quotes", "bad.csv", "--out", "k.csv"]);
    assert_eq!(schema.status.code(), Some(2));

    assert_eq!(levyspx(dir.path(), &["no-such-command"]).status.code(), Some(1));
    assert_eq!(levyspx(dir.path(), &["price", "--model", "heston"]).status.code(), Some(1));

    // No GH parameter vector with alpha in [0.1, 1] admits |beta| = 3.83.
    let gh = r#"{"alpha":3.8288,"beta":-3.8286,"delta":0.2375,"nu":-1.7555}"#;
    let numerical = levyspx(
        dir.path(),
        &["sweep", "--model", "gh", "--params", gh, "--target", "alpha", "--from", "0.1", "--to", "1"],
    );
    assert_eq!(numerical.status.code(), Some(3), "{}", String::from_utf8_lossy(&numerical.stderr));
}

#[test]
fn config_file_fills_in_and_flags_win() {
    let dir = tempfile::tempdir().unwrap();
    let mut csv = String::from(HEADER);
    csv.push('\n');
    for days in [5, 10, 20, 40] {
        csv.push_str(&format!("2013-01-02,100,100,{days},5.0,5.2,0.01,0.0,\n"));
    }
    std::fs::write(dir.path().join("q.csv"), csv).unwrap();
    std::fs::write(dir.path().join("cfg.json"), r#"{"min_days": 15, "quotes": "q.csv"}"#).unwrap();
    ok(dir.path(), &["filter", "--config", "cfg.json", "--out", "a.csv"]);
    assert_eq!(data_rows(dir.path().join("a.csv")), 2);
    ok(dir.path(), &["filter", "--config", "cfg.json", "--min-days", "6", "--out", "b.csv"]);
    assert_eq!(data_rows(dir.path().join("b.csv")), 3);
}

#[test]
fn synth_is_reproducible_under_a_seed() {
    let dir = tempfile::tempdir().unwrap();
    let args = |out: &'static str, seed: &'static str| {
        vec![
            "synth", "--model", "nig", "--params", NIG_BASE, "--noise", "0.01", "--seed", seed, "--out", out,
        ]
    };
    ok(dir.path(), &args("a.csv", "4"));
    ok(dir.path(), &args("b.csv", "4"));
    ok(dir.path(), &args("c.csv", "5"));
    let read = |n: &str| std::fs::read_to_string(dir.path().join(n)).unwrap();
    // The manifest line names the output file, so compare the quote rows.
    let rows = |n: &str| read(n).lines().skip(2).map(str::to_string).collect::<Vec<_>>();
    assert_eq!(rows("a.csv"), rows("b.csv"));
    assert_ne!(rows("a.csv"), rows("c.csv"));
    assert_eq!(data_rows(dir.path().join("a.csv")), 200);
}

#[test]
fn noisy_quotes_leave_positive_sse() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    ok(p, &["synth", "--model", "bs", "--params", r#"{"sigma":0.2}"#, "--noise", "0.05", "--seed", "1", "--out", "q.csv"]);
    ok(p, &["filter", "--quotes", "q.csv", "--out", "kept.csv"]);
    ok(p, &["calibrate", "--model", "bs", "--quotes", "kept.csv", "--out", "r.json"]);
    let r = json(p.join("r.json"));
    assert!(r["results"][0]["sse"].as_f64().unwrap() > 0.0);
}

#[test]
fn synth_calibrate_evaluate_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    ok(p, &["synth", "--model", "sv", "--params", SV_TRUTH, "--out", "a.csv"]);
    assert_eq!(data_rows(p.join("a.csv")), 200);
    ok(p, &["calibrate", "--model", "sv", "--quotes", "a.csv", "--out", "sv.json"]);
    let cal = json(p.join("sv.json"));
    let sse = cal["results"][0]["sse"].as_f64().unwrap();
    assert!(sse < 1e-6, "sse {sse}");

    ok(p, &["evaluate", "--model", "sv", "--result", "sv.json", "--quotes", "a.csv", "--out", "m.json"]);
    let m = json(p.join("m.json"));
    assert!((m["metrics"]["sse"].as_f64().unwrap() - sse).abs() < 1e-6);

    // Out of sample: another day generated with the same parameters.
    ok(
        p,
        &["synth", "--model", "sv", "--params", SV_TRUTH, "--trade-date", "2013-01-03", "--spot", "101", "--out", "b.csv"],
    );
    ok(p, &["evaluate", "--result", "sv.json", "--quotes", "b.csv", "--out", "oos.json"]);
    let oos = json(p.join("oos.json"));
    assert_eq!(oos["calibration_manifest"], cal["manifest"]);
    let b_manifest = std::fs::read_to_string(p.join("b.csv")).unwrap();
    let b_hash = b_manifest.lines().next().unwrap().trim_start_matches("# manifest=");
    assert_eq!(oos["quotes_manifest"].as_str(), Some(b_hash));
    assert!(oos["metrics"]["sse"].as_f64().unwrap() < 1e-4);

    // BS cannot fit SV quotes as well.
    ok(p, &["calibrate", "--model", "bs", "--quotes", "a.csv", "--out", "bs.json"]);
    ok(p, &["evaluate", "--result", "bs.json", "--quotes", "a.csv", "--out", "mbs.json"]);
    let bs = json(p.join("mbs.json"))["metrics"]["sse"].as_f64().unwrap();
    assert!(bs > m["metrics"]["sse"].as_f64().unwrap());

    let mismatch = levyspx(p, &["evaluate", "--model", "nig", "--result", "sv.json", "--quotes", "a.csv"]);
    assert_eq!(mismatch.status.code(), Some(2));
}

#[test]
fn nig_mu_sweep_reports_increasing() {
    let dir = tempfile::tempdir().unwrap();
    ok(
        dir.path(),
        &["sweep", "--model", "nig", "--params", NIG_BASE, "--target", "mu", "--from", "-1", "--to", "1", "--out", "s.csv"],
    );
    let text = std::fs::read_to_string(dir.path().join("s.csv")).unwrap();
    assert_eq!(text.lines().last(), Some("# direction=increasing"));
    assert_eq!(data_rows(dir.path().join("s.csv")), 25);
}

#[test]
fn price_single_contract_and_quote_file() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    let out = ok(
        p,
        &["price", "--model", "bs", "--params", r#"{"sigma":0.2}"#, "--spot", "100", "--strike", "100", "--maturity", "1", "--rate", "0.05"],
    );
    let v: Value = serde_json::from_slice(&out.stdout).unwrap();
    // Textbook value for S = K = 100, r = 5%, sigma = 20%, T = 1.
    assert!((v["price"].as_f64().unwrap() - 10.450583572185565).abs() < 1e-9);

    ok(p, &["synth", "--model", "bs", "--params", r#"{"sigma":0.2}"#, "--out", "q.csv"]);
    ok(p, &["price", "--model", "bs", "--params", r#"{"sigma":0.2}"#, "--quotes", "q.csv", "--out", "priced.csv"]);
    let text = std::fs::read_to_string(p.join("priced.csv")).unwrap();
    for line in text.lines().filter(|l| !l.starts_with('#')).skip(1) {
        let cols: Vec<f64> = line.split(',').skip(4).map(|c| c.parse().unwrap()).collect();
        assert!((cols[0] - cols[1]).abs() < 1e-12, "{line}");
    }
}

#[test]
fn summarize_counts_every_quote() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    ok(p, &["synth", "--model", "bs", "--params", r#"{"sigma":0.2}"#, "--out", "q.csv"]);
    ok(p, &["summarize", "--quotes", "q.csv", "--out", "s.csv"]);
    let text = std::fs::read_to_string(p.join("s.csv")).unwrap();
    let total: usize = text
        .lines()
        .filter(|l| !l.starts_with('#'))
        .skip(1)
        .map(|l| l.rsplit(',').next().unwrap().parse::<usize>().unwrap())
        .sum();
    assert_eq!(total, 200);
}
