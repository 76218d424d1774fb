//! Unconstrained Nelder-Mead simplex search.

pub(crate) struct Settings {
    pub max_evals: usize,
    /// Simplex diameter below which the search stops, relative to the best vertex.
    pub xtol: f64,
    /// Minimum improvement of the best value over `window` evaluations.
    pub ftol: f64,
    pub window: usize,
    /// Improvement stalls are ignored while the best value is at or above this level.
    pub stall_floor: f64,
    /// How many times the simplex is rebuilt around the best point after converging.
    pub rebuilds: usize,
    /// Every trial point is clipped to `[-bound, bound]` in each coordinate.
    pub bound: f64,
}

pub(crate) struct Outcome {
    /// The caller tracks its own best point; tests read this one.
    #[cfg_attr(not(test), allow(dead_code))]
    pub x: Vec<f64>,
    pub f: f64,
    pub evals: usize,
    pub converged: bool,
}

enum Stop {
    Converged,
    Budget,
}

struct Search<'a, F> {
    f: &'a mut F,
    evals: usize,
    max_evals: usize,
    best: f64,
    bound: f64,
    /// Best-so-far value after each evaluation.
    history: Vec<f64>,
}

impl<F: FnMut(&[f64]) -> f64> Search<'_, F> {
    fn eval(&mut self, x: &mut [f64]) -> Option<f64> {
        if self.evals >= self.max_evals {
            return None;
        }
        for v in x.iter_mut() {
            *v = v.clamp(-self.bound, self.bound);
        }
        self.evals += 1;
        let v = (self.f)(x);
        let v = if v.is_nan() { f64::INFINITY } else { v };
        if v < self.best {
            self.best = v;
        }
        self.history.push(self.best);
        Some(v)
    }
}

pub(crate) fn minimize<F: FnMut(&[f64]) -> f64>(f: &mut F, x0: &[f64], step: f64, settings: &Settings) -> Outcome {
    let mut search = Search {
        f,
        evals: 0,
        max_evals: settings.max_evals,
        best: f64::INFINITY,
        history: Vec::new(),
        bound: settings.bound,
    };
    let mut start = x0.to_vec();
    let mut scale = step;
    let mut best_x = x0.to_vec();
    let mut best_f = f64::INFINITY;
    let mut converged = false;
    for round in 0..=settings.rebuilds {
        let before = best_f;
        let (x, fx, stop) = run(&mut search, &start, scale, settings);
        if fx < best_f {
            best_f = fx;
            best_x = x;
        }
        match stop {
            Stop::Budget => {
                converged = false;
                break;
            }
            Stop::Converged => converged = true,
        }
        if round > 0 && before - best_f < settings.ftol {
            break;
        }
        start = best_x.clone();
        scale = step * 0.1;
    }
    Outcome {
        x: best_x,
        f: best_f,
        evals: search.evals,
        converged,
    }
}

fn run<F: FnMut(&[f64]) -> f64>(search: &mut Search<'_, F>, x0: &[f64], step: f64, s: &Settings) -> (Vec<f64>, f64, Stop) {
    let n = x0.len();
    // Dimension-adapted coefficients (Gao and Han).
    let dim = n as f64;
    let expand = if n > 1 { 1.0 + 2.0 / dim } else { 2.0 };
    let contract = if n > 1 { 0.75 - 0.5 / dim } else { 0.5 };
    let shrink = if n > 1 { 1.0 - 1.0 / dim } else { 0.5 };
    let mut simplex: Vec<(Vec<f64>, f64)> = Vec::with_capacity(n + 1);
    let budget_out = |simplex: &mut Vec<(Vec<f64>, f64)>| {
        simplex.sort_by(|a, b| a.1.total_cmp(&b.1));
        let (x, f) = simplex.first().cloned().unwrap_or((x0.to_vec(), f64::INFINITY));
        (x, f, Stop::Budget)
    };
    let mut first = x0.to_vec();
    match search.eval(&mut first) {
        Some(v) => simplex.push((first.clone(), v)),
        None => return (x0.to_vec(), f64::INFINITY, Stop::Budget),
    }
    for i in 0..n {
        let mut x = first.clone();
        // Step towards the interior so clipped coordinates still move.
        x[i] += if x[i] > 0.0 { -step } else { step };
        match search.eval(&mut x) {
            Some(v) => simplex.push((x, v)),
            None => return budget_out(&mut simplex),
        }
    }
    let start_eval = search.evals;
    loop {
        simplex.sort_by(|a, b| a.1.total_cmp(&b.1));
        let best = &simplex[0];
        let diameter = simplex[1..]
            .iter()
            .flat_map(|(x, _)| x.iter().zip(&best.0).map(|(a, b)| (a - b).abs()))
            .fold(0.0, f64::max);
        let size = best.0.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        if diameter < s.xtol * (1.0 + size) {
            return (best.0.clone(), best.1, Stop::Converged);
        }
        let h = &search.history;
        if search.evals >= start_eval + s.window && search.best < s.stall_floor {
            let then = h[h.len() - 1 - s.window];
            if then - search.best < s.ftol {
                return (best.0.clone(), best.1, Stop::Converged);
            }
        }

        let centroid: Vec<f64> = (0..n)
            .map(|j| simplex[..n].iter().map(|(x, _)| x[j]).sum::<f64>() / n as f64)
            .collect();
        let worst = simplex[n].clone();
        let along = |t: f64| -> Vec<f64> {
            centroid
                .iter()
                .zip(&worst.0)
                .map(|(c, w)| c + t * (c - w))
                .collect()
        };
        let mut xr = along(1.0);
        let Some(fr) = search.eval(&mut xr) else {
            return budget_out(&mut simplex);
        };
        if fr < simplex[0].1 {
            let mut xe = along(expand);
            let Some(fe) = search.eval(&mut xe) else {
                return budget_out(&mut simplex);
            };
            simplex[n] = if fe < fr { (xe, fe) } else { (xr, fr) };
            continue;
        }
        if fr < simplex[n - 1].1 {
            simplex[n] = (xr, fr);
            continue;
        }
        let (xc, fc) = if fr < worst.1 {
            let mut xc = along(contract);
            let Some(fc) = search.eval(&mut xc) else {
                return budget_out(&mut simplex);
            };
            (xc, fc)
        } else {
            let mut xc = along(-contract);
            let Some(fc) = search.eval(&mut xc) else {
                return budget_out(&mut simplex);
            };
            (xc, fc)
        };
        if fc < fr.min(worst.1) {
            simplex[n] = (xc, fc);
            continue;
        }
        // Shrink towards the best vertex.
        let best_x = simplex[0].0.clone();
        for vertex in simplex.iter_mut().skip(1) {
            let mut x: Vec<f64> = vertex.0.iter().zip(&best_x).map(|(v, b)| b + shrink * (v - b)).collect();
            let Some(fx) = search.eval(&mut x) else {
                return budget_out(&mut simplex);
            };
            *vertex = (x, fx);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn settings(max_evals: usize) -> Settings {
        Settings {
            max_evals,
            xtol: 1e-10,
            ftol: 1e-14,
            window: 50,
            stall_floor: f64::INFINITY,
            rebuilds: 2,
            bound: 1e3,
        }
    }

    #[test]
    fn rosenbrock() {
        let mut f = |x: &[f64]| (1.0 - x[0]).powi(2) + 100.0 * (x[1] - x[0] * x[0]).powi(2);
        let out = minimize(&mut f, &[-1.2, 1.0], 0.5, &settings(5000));
        assert!(out.converged);
        assert!((out.x[0] - 1.0).abs() < 1e-5 && (out.x[1] - 1.0).abs() < 1e-5, "{:?}", out.x);
    }

    #[test]
    fn respects_budget() {
        let mut calls = 0;
        let mut f = |x: &[f64]| {
            calls += 1;
            x.iter().map(|v| v * v).sum()
        };
        let out = minimize(&mut f, &[5.0, 5.0, 5.0], 1.0, &settings(20));
        assert_eq!(out.evals, 20);
        assert!(!out.converged);
        assert_eq!(calls, 20);
    }

    #[test]
    fn nan_is_worse_than_anything() {
        let mut f = |x: &[f64]| if x[0] < 0.0 { f64::NAN } else { (x[0] - 2.0).powi(2) };
        let out = minimize(&mut f, &[1.0], 0.5, &settings(2000));
        assert!((out.x[0] - 2.0).abs() < 1e-6);
    }
}
