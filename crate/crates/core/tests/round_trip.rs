use levyspx::calibration::{calibrate, evaluate_metrics, CalibrationMode, OptimizerConfig, ParamSpace, QuoteSet};
use levyspx::model::{ModelKind, ModelParams, PricerBinding};
use levyspx::quotes::{apply_filters, FilterConfig};
use levyspx::synthetic::{synthesize, QuoteGrid};

#[test]
fn bs_quotes_recover_their_volatility() {
    let b = PricerBinding::new(ModelKind::Bs);
    let truth = ModelParams::Bs { sigma: 0.23 };
    let quotes = synthesize(&b, &truth, &QuoteGrid::sized(5, 20), 0).unwrap().value;
    let kept = apply_filters(&quotes, &FilterConfig::default()).kept;
    assert!(!kept.is_empty());
    let r = calibrate(&b, &ParamSpace::defaults(&b), &kept, CalibrationMode::Pooled, &OptimizerConfig::default())
        .unwrap()
        .remove(0);
    assert!((r.params["sigma"] - 0.23).abs() < 1e-6, "{:?}", r.params);
    assert!(r.sse < 1e-10);
    assert!(r.trace_is_monotone());
}

#[test]
fn calibrated_nig_reprices_its_own_quotes() {
    let b = PricerBinding::new(ModelKind::Nig);
    let truth = b.params_from_vec(&[6.1882, -3.8941, 0.1622, 0.0]).unwrap().value;
    let quotes = synthesize(&b, &truth, &QuoteGrid::sized(3, 15), 1).unwrap().value;
    let metrics = evaluate_metrics(&b, &truth, &QuoteSet::new(&quotes)).unwrap().value;
    assert!(metrics.sse < 1e-16, "{metrics:?}");
}
