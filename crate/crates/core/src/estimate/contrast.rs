//! Least-squares contrast `Σ_i (∫ λ_i² − 2 ∫ λ_i dN^i)` over a
//! piecewise-constant kernel basis.
//!
//! The contrast is quadratic in `(μ, levels)`; every row shares the Gram
//! matrix of the regressors `(1, X_{jk}(t))`, where `X_{jk}(t)` counts events
//! of `j` whose lag to `t` falls in bin `k`.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::likelihood::EdgeWindow;
use super::nonparametric::MAX_CONDITION;
use super::{require_events, EstimationResult, ParameterEstimate};
use crate::error::{HawkesError, Result};
use crate::events::EventSequence;
use crate::kernels::{Kernel, KernelMatrix};
use crate::model::{HawkesModel, Transfer};
use crate::numerics::linalg::condition_number;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContrastConfig {
    /// Bin edges shared by all kernel entries, starting at 0.
    pub breaks: Vec<f64>,
    /// L1 weight on kernel levels (not on the baseline).
    pub penalty: f64,
    pub window: EdgeWindow,
    pub max_iterations: usize,
    pub tolerance: f64,
}

impl ContrastConfig {
    pub fn uniform(support: f64, bins: usize) -> Self {
        Self::with_breaks((0..=bins).map(|k| support * k as f64 / bins as f64).collect())
    }

    pub fn with_breaks(breaks: Vec<f64>) -> Self {
        Self { breaks, penalty: 0.0, window: EdgeWindow::KernelSupport, max_iterations: 20_000, tolerance: 1e-10 }
    }

    pub fn with_penalty(mut self, penalty: f64) -> Self {
        self.penalty = penalty;
        self
    }

    pub fn with_window(mut self, window: EdgeWindow) -> Self {
        self.window = window;
        self
    }
}

fn overlap(a: f64, b: f64, c: f64, d: f64) -> f64 {
    (b.min(d) - a.max(c)).max(0.0)
}

/// Gram matrix and right-hand sides of the normal equations.
fn normal_equations(events: &EventSequence, breaks: &[f64], t0: f64) -> (DMatrix<f64>, Vec<DVector<f64>>) {
    let d = events.dim();
    let nb = breaks.len() - 1;
    let support = breaks[nb];
    let t_end = events.horizon();
    let p = 1 + d * nb;
    let idx = |j: usize, k: usize| 1 + j * nb + k;
    let times = events.times();
    let comps = events.components();
    let mut g = DMatrix::zeros(p, p);
    g[(0, 0)] = t_end - t0;
    for (n, (&tn, &cn)) in times.iter().zip(comps).enumerate() {
        for k in 0..nb {
            let ov = overlap(tn + breaks[k], tn + breaks[k + 1], t0, t_end);
            g[(0, idx(cn, k))] += ov;
            g[(idx(cn, k), 0)] += ov;
        }
        for (m, (&tm, &cm)) in times.iter().zip(comps).enumerate().skip(n) {
            if tm - tn >= support {
                break;
            }
            // Merge the two shifted bin partitions.
            let (mut a, mut b) = (0, 0);
            while a < nb && b < nb {
                let (lo1, hi1) = (tn + breaks[a], tn + breaks[a + 1]);
                let (lo2, hi2) = (tm + breaks[b], tm + breaks[b + 1]);
                let lo = lo1.max(lo2).max(t0);
                let hi = hi1.min(hi2).min(t_end);
                if hi > lo {
                    let ov = hi - lo;
                    g[(idx(cn, a), idx(cm, b))] += ov;
                    if m != n {
                        g[(idx(cm, b), idx(cn, a))] += ov;
                    }
                }
                if hi1 <= hi2 {
                    a += 1;
                } else {
                    b += 1;
                }
            }
        }
    }
    let mut rhs = vec![DVector::zeros(p); d];
    let mut start = 0;
    for (m, (&tm, &cm)) in times.iter().zip(comps).enumerate() {
        if tm < t0 {
            continue;
        }
        rhs[cm][0] += 1.0;
        while tm - times[start] >= support {
            start += 1;
        }
        for n in start..m {
            let lag = tm - times[n];
            if lag > 0.0 {
                let k = breaks.partition_point(|b| *b <= lag) - 1;
                rhs[cm][idx(comps[n], k)] += 1.0;
            }
        }
    }
    (g, rhs)
}

fn fista(g: &DMatrix<f64>, r: &DVector<f64>, penalty: f64, x0: DVector<f64>, max_it: usize, tol: f64) -> (DVector<f64>, usize, bool) {
    let lip = g.clone().symmetric_eigenvalues().max();
    let step = 1.0 / lip;
    let mut x = x0.clone();
    let mut y = x0;
    let mut t: f64 = 1.0;
    for it in 1..=max_it {
        let grad = g * &y - r;
        let mut next = &y - grad * step;
        for v in next.iter_mut().skip(1) {
            *v = v.signum() * (v.abs() - penalty * step).max(0.0);
        }
        let tn = 0.5 * (1.0 + (1.0 + 4.0 * t * t).sqrt());
        let change = (&next - &x).amax();
        y = &next + (&next - &x) * ((t - 1.0) / tn);
        x = next;
        t = tn;
        if change < tol * x.amax().max(1e-12) {
            return (x, it, true);
        }
    }
    (x, max_it, false)
}

/// Minimizes the least-squares contrast over piecewise-constant kernels.
pub fn fit_contrast(events: &EventSequence, cfg: &ContrastConfig) -> Result<EstimationResult> {
    require_events(events)?;
    let breaks = &cfg.breaks;
    let nb = breaks.len().saturating_sub(1);
    if nb == 0 || breaks[0] != 0.0 || !breaks.windows(2).all(|w| w[0] < w[1]) || !breaks[nb].is_finite() {
        return Err(HawkesError::Input("basis breaks must start at 0, increase strictly and be finite".into()));
    }
    if !(cfg.penalty >= 0.0) {
        return Err(HawkesError::Domain("penalty must be >= 0".into()));
    }
    let d = events.dim();
    let t_end = events.horizon();
    let t0 = match cfg.window {
        EdgeWindow::KernelSupport => breaks[nb].min(0.1 * t_end),
        EdgeWindow::None => 0.0,
        EdgeWindow::Start(t) => t.clamp(0.0, t_end),
    };
    let (g, rhs) = normal_equations(events, breaks, t0);
    let cond = condition_number(&g);
    if !(cond <= MAX_CONDITION) {
        return Err(HawkesError::Conditioning { cond, hint: "use wider basis bins or a longer record".into() });
    }
    let chol = g.clone().cholesky().ok_or_else(|| HawkesError::Singular("contrast Gram matrix is not positive definite".into()))?;
    let mut sols = Vec::with_capacity(d);
    let mut iterations = 0;
    let mut converged = true;
    for r in &rhs {
        let ls = chol.solve(r);
        if cfg.penalty > 0.0 {
            let (x, it, ok) = fista(&g, r, cfg.penalty, ls, cfg.max_iterations, cfg.tolerance);
            iterations = iterations.max(it);
            converged &= ok;
            sols.push(x);
        } else {
            sols.push(ls);
        }
    }
    let objective: f64 = sols.iter().zip(&rhs).map(|(x, r)| (x.transpose() * &g * x)[(0, 0)] - 2.0 * r.dot(x)).sum();
    let mut kernels = vec![Kernel::Zero; d * d];
    let mut negative = false;
    let mut mu = Vec::with_capacity(d);
    let mut params = Vec::new();
    for (i, x) in sols.iter().enumerate() {
        mu.push(x[0].max(0.0));
        params.push(ParameterEstimate { name: format!("mu[{i}]"), value: x[0], std_error: None });
        for j in 0..d {
            let levels: Vec<f64> = (0..nb).map(|k| x[1 + j * nb + k]).collect();
            negative |= levels.iter().any(|v| *v < 0.0);
            for (k, v) in levels.iter().enumerate() {
                params.push(ParameterEstimate { name: format!("level[{i}][{j}][{k}]"), value: *v, std_error: None });
            }
            kernels[i * d + j] = if levels.iter().all(|v| *v == 0.0) { Kernel::Zero } else { Kernel::piecewise(breaks.clone(), levels)? };
        }
    }
    let transfer = if negative { Transfer::PositivePart } else { Transfer::Identity };
    let model = HawkesModel::with_options(mu, KernelMatrix::new(d, kernels)?, transfer, None)?;
    let mut res = EstimationResult::new(model, "contrast")?;
    res.objective_trace = vec![objective];
    res.gradient_trace = vec![None];
    res.converged = converged;
    res.iterations = iterations;
    res.parameters = params;
    if sols.iter().any(|x| x[0] < 0.0) {
        res.warnings.push("negative baseline estimate clamped to zero".into());
    }
    if !converged {
        res.warnings.push("proximal iterations hit the cap".into());
    }
    Ok(res)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::estimate::nonparametric::{fit_wiener_hopf, GridStyle, QuadratureConfig};
    use crate::simulate::{simulate_thinning, SimConfig};

    fn data(alpha: f64, t: f64, seed: u64) -> EventSequence {
        let k = if alpha > 0.0 { Kernel::exponential(alpha, 1.0).unwrap() } else { Kernel::Zero };
        simulate_thinning(&HawkesModel::univariate(1.0, k).unwrap(), &SimConfig::new(seed, t)).unwrap()
    }

    fn l2(k: &Kernel, grid: &[f64]) -> f64 {
        grid.windows(2).map(|w| k.eval(0.5 * (w[0] + w[1])).powi(2) * (w[1] - w[0])).sum::<f64>().sqrt()
    }

    #[test]
    fn gram_matrix_matches_brute_force() {
        let ev = EventSequence::new(2, 10.0, vec![1.0, 1.5, 3.2, 3.2, 7.0], vec![0, 1, 0, 1, 0], None).unwrap();
        let breaks = vec![0.0, 0.5, 2.0, 3.0];
        let (g, rhs) = normal_equations(&ev, &breaks, 0.5);
        let dt = 1e-4;
        let x = |t: f64, j: usize, k: usize| {
            ev.iter().filter(|&(s, c)| c == j && t - s >= breaks[k] && t - s < breaks[k + 1]).count() as f64
        };
        let n = ((10.0 - 0.5) / dt) as usize;
        for (j, k, j2, k2) in [(0, 0, 0, 0), (0, 1, 1, 2), (1, 2, 1, 1), (0, 2, 0, 2)] {
            let brute: f64 = (0..n).map(|s| 0.5 + (s as f64 + 0.5) * dt).map(|t| x(t, j, k) * x(t, j2, k2) * dt).sum();
            let got = g[(1 + j * 3 + k, 1 + j2 * 3 + k2)];
            assert!((got - brute).abs() < 1e-3, "({j},{k})x({j2},{k2}): {got} vs {brute}");
        }
        // t=3.2 ties: simultaneous events are not regressors of each other.
        assert_eq!(rhs[1][1 + 0 * 3 + 2], 1.0);
        assert_eq!(rhs[0][0], 3.0);
    }

    #[test]
    fn poisson_data_has_small_coefficients() {
        let ev = data(0.0, 20000.0, 1);
        let fit = fit_contrast(&ev, &ContrastConfig::uniform(5.0, 10)).unwrap();
        let norm = fit.model.kernels().integral_matrix()[(0, 0)];
        assert!(norm.abs() < 0.05, "{norm}");
        let rate = ev.len() as f64 / ev.horizon();
        assert!((fit.model.baseline()[0] - rate).abs() < 0.05 * rate);
    }

    #[test]
    fn recovers_exponential_norm() {
        let ev = data(0.5, 1e5, 2);
        let fit = fit_contrast(&ev, &ContrastConfig::uniform(15.0, 30)).unwrap();
        let norm = fit.model.kernels().integral_matrix()[(0, 0)];
        assert!((norm - 0.5).abs() < 0.05, "{norm}");
    }

    #[test]
    fn agrees_with_wiener_hopf_on_same_grid() {
        let ev = data(0.5, 1e5, 3);
        let wh = fit_wiener_hopf(&ev, &QuadratureConfig::new(15.0).with_nodes(32).with_grid(GridStyle::Linear)).unwrap();
        let Kernel::Piecewise { breaks, .. } = wh.model.kernels().get(0, 0).clone() else { panic!() };
        let ct = fit_contrast(&ev, &ContrastConfig::with_breaks(breaks.clone())).unwrap();
        let (a, b) = (wh.model.kernels().get(0, 0), ct.model.kernels().get(0, 0));
        let grid: Vec<f64> = (0..=3000).map(|k| 15.0 * k as f64 / 3000.0).collect();
        let diff = Kernel::piecewise(
            breaks.clone(),
            breaks.windows(2).map(|w| a.eval(0.5 * (w[0] + w[1])) - b.eval(0.5 * (w[0] + w[1]))).collect(),
        )
        .unwrap();
        let rel = l2(&diff, &grid) / l2(a, &grid);
        assert!(rel < 0.1, "{rel}");
    }

    #[test]
    fn l1_penalty_shrinks_levels() {
        let ev = data(0.3, 5000.0, 4);
        let plain = fit_contrast(&ev, &ContrastConfig::uniform(5.0, 10)).unwrap();
        let sparse = fit_contrast(&ev, &ContrastConfig::uniform(5.0, 10).with_penalty(200.0)).unwrap();
        let l1 = |r: &EstimationResult| r.model.kernels().stability().unwrap().spectral_radius;
        assert!(l1(&sparse) < l1(&plain));
        assert!(sparse.converged);
    }
}
