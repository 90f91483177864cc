//! Maximum-likelihood fitting by BFGS on log-parameters.
//!
//! Exponential kernels use the analytic recursive gradient. Power-law kernels
//! are evaluated through a sum-of-exponentials expansion of
//! `(1 + βt)^{-1-γ}` with a central-difference gradient.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use statrs::function::gamma::gamma;

use super::likelihood::{eval_exp_terms, EdgeWindow, TermSet};
use super::{require_events, EstimationResult, ParameterEstimate};
use crate::error::{HawkesError, Result};
use crate::events::EventSequence;
use crate::kernels::{ExpTerm, Kernel, KernelMatrix};
use crate::model::HawkesModel;
use crate::numerics::linalg::spectral_radius;
use crate::numerics::optimize::{central_gradient, minimize_bfgs, BfgsConfig};

/// Spectral radius above which the soft stability barrier switches on.
pub const BARRIER_RADIUS: f64 = 0.999;
const BARRIER_WEIGHT: f64 = 1e4;
const NUMERIC_STEP: f64 = 1e-6;

/// How exponential decay rates are parametrized.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BetaMode {
    /// One rate per kernel entry.
    Free,
    /// A single rate shared by all entries.
    Shared,
    /// Rates held at this value.
    Fixed(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MleFamily {
    Exponential(BetaMode),
    PowerLaw,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MleConfig {
    pub family: MleFamily,
    /// Starting model; must match the family. Moment-style defaults otherwise.
    pub init: Option<HawkesModel>,
    pub max_iterations: usize,
    pub gradient_tolerance: f64,
    pub window: EdgeWindow,
    pub standard_errors: bool,
}

impl Default for MleConfig {
    fn default() -> Self {
        Self {
            family: MleFamily::Exponential(BetaMode::Free),
            init: None,
            max_iterations: 500,
            gradient_tolerance: 1e-6,
            window: EdgeWindow::KernelSupport,
            standard_errors: true,
        }
    }
}

impl MleConfig {
    pub fn exponential(beta: BetaMode) -> Self {
        Self { family: MleFamily::Exponential(beta), ..Self::default() }
    }

    pub fn power_law() -> Self {
        Self { family: MleFamily::PowerLaw, ..Self::default() }
    }

    pub fn with_init(mut self, init: HawkesModel) -> Self {
        self.init = Some(init);
        self
    }

    pub fn with_window(mut self, window: EdgeWindow) -> Self {
        self.window = window;
        self
    }

    pub fn with_max_iterations(mut self, n: usize) -> Self {
        self.max_iterations = n;
        self
    }
}

/// Sum-of-exponentials expansion of `αβ(1+βt)^{-1-γ}` accurate on `[0, horizon]`.
///
/// Uses `(1+βt)^{-1-γ} = Γ(1+γ)^{-1} ∫ e^{(1+γ)x - e^x (1+βt)} dx` with a
/// trapezoid rule in `x`.
pub(crate) fn power_law_terms(alpha: f64, beta: f64, gamma_: f64, horizon: f64) -> Vec<ExpTerm> {
    let h = 0.25;
    let x_lo = -(beta * horizon).max(1.0).ln() - 12.0;
    let x_hi = 4.5;
    let n = ((x_hi - x_lo) / h).ceil() as usize;
    let norm = alpha * beta * h / gamma(1.0 + gamma_);
    (0..=n)
        .map(|k| {
            let x = x_lo + k as f64 * h;
            let rate = beta * x.exp();
            let amp = norm * ((1.0 + gamma_) * x - x.exp()).exp();
            ExpTerm { alpha: amp / rate, beta: rate }
        })
        .collect()
}

#[derive(Debug, Clone)]
struct Layout {
    d: usize,
    family: MleFamily,
}

impl Layout {
    fn n_beta(&self) -> usize {
        match self.family {
            MleFamily::Exponential(BetaMode::Free) | MleFamily::PowerLaw => self.d * self.d,
            MleFamily::Exponential(BetaMode::Shared) => 1,
            MleFamily::Exponential(BetaMode::Fixed(_)) => 0,
        }
    }

    fn n_gamma(&self) -> usize {
        if self.family == MleFamily::PowerLaw {
            self.d * self.d
        } else {
            0
        }
    }

    fn len(&self) -> usize {
        self.d + self.d * self.d + self.n_beta() + self.n_gamma()
    }

    /// Natural parameters `(μ, α, β per entry, γ per entry)`.
    fn unpack(&self, x: &[f64]) -> (Vec<f64>, Vec<f64>, Vec<f64>, Vec<f64>) {
        let d2 = self.d * self.d;
        let mu = x[..self.d].to_vec();
        let alpha = x[self.d..self.d + d2].to_vec();
        let rest = &x[self.d + d2..];
        let beta = match self.family {
            MleFamily::Exponential(BetaMode::Fixed(b)) => vec![b; d2],
            MleFamily::Exponential(BetaMode::Shared) => vec![rest[0]; d2],
            _ => rest[..d2].to_vec(),
        };
        let gamma_ = if self.family == MleFamily::PowerLaw { rest[d2..2 * d2].to_vec() } else { Vec::new() };
        (mu, alpha, beta, gamma_)
    }

    fn names(&self) -> Vec<String> {
        let d = self.d;
        let mut v: Vec<String> = (0..d).map(|i| format!("mu[{i}]")).collect();
        let entries = || (0..d).flat_map(move |i| (0..d).map(move |j| (i, j)));
        v.extend(entries().map(|(i, j)| format!("alpha[{i}][{j}]")));
        match self.family {
            MleFamily::Exponential(BetaMode::Fixed(_)) => {}
            MleFamily::Exponential(BetaMode::Shared) => v.push("beta".into()),
            _ => v.extend(entries().map(|(i, j)| format!("beta[{i}][{j}]"))),
        }
        if self.n_gamma() > 0 {
            v.extend(entries().map(|(i, j)| format!("gamma[{i}][{j}]")));
        }
        v
    }

    fn norms(&self, x: &[f64]) -> DMatrix<f64> {
        let (_, alpha, _, gamma_) = self.unpack(x);
        let d = self.d;
        DMatrix::from_fn(d, d, |i, j| {
            let a = alpha[i * d + j];
            if gamma_.is_empty() {
                a
            } else {
                a / gamma_[i * d + j]
            }
        })
    }

    fn model(&self, x: &[f64]) -> Result<HawkesModel> {
        let (mu, alpha, beta, gamma_) = self.unpack(x);
        let kernels = (0..self.d * self.d)
            .map(|q| match self.family {
                MleFamily::PowerLaw => Kernel::power_law(alpha[q], beta[q], gamma_[q]),
                _ => Kernel::exponential(alpha[q], beta[q]),
            })
            .collect::<Result<Vec<_>>>()?;
        HawkesModel::new(mu, KernelMatrix::new(self.d, kernels)?)
    }

    /// Natural parameters of `model`, if it belongs to the family.
    fn params_of(&self, model: &HawkesModel) -> Option<Vec<f64>> {
        let d = self.d;
        if model.dim() != d {
            return None;
        }
        let mut mu: Vec<f64> = model.baseline().iter().map(|m| m.max(1e-6)).collect();
        let mut alpha = Vec::new();
        let mut beta = Vec::new();
        let mut gamma_ = Vec::new();
        for (_, _, k) in model.kernels().iter() {
            match (k, self.family) {
                (Kernel::Exponential { alpha: a, beta: b }, MleFamily::Exponential(_)) => {
                    alpha.push(*a);
                    beta.push(*b);
                }
                (Kernel::PowerLaw { alpha: a, beta: b, gamma: g }, MleFamily::PowerLaw) => {
                    alpha.push(*a);
                    beta.push(*b);
                    gamma_.push(*g);
                }
                _ => return None,
            }
        }
        let mut x = Vec::new();
        x.append(&mut mu);
        x.append(&mut alpha);
        match self.n_beta() {
            0 => {}
            1 => x.push(beta.iter().sum::<f64>() / beta.len() as f64),
            _ => x.append(&mut beta),
        }
        x.append(&mut gamma_);
        Some(x)
    }

    fn default_params(&self, events: &EventSequence) -> Vec<f64> {
        let d = self.d;
        let t = events.horizon();
        let mut x: Vec<f64> = events.counts().iter().map(|&n| (0.5 * n as f64 / t).max(1e-6)).collect();
        let total = events.len() as f64 / t;
        let gamma0 = 0.5;
        let a0 = if self.family == MleFamily::PowerLaw { 0.3 * gamma0 / d as f64 } else { 0.3 / d as f64 };
        x.extend(std::iter::repeat_n(a0, d * d));
        match self.family {
            MleFamily::Exponential(BetaMode::Fixed(_)) => {}
            MleFamily::Exponential(BetaMode::Shared) => x.push(total),
            _ => x.extend(std::iter::repeat_n(total, d * d)),
        }
        if self.family == MleFamily::PowerLaw {
            x.extend(std::iter::repeat_n(gamma0, d * d));
        }
        x
    }
}

struct Objective<'a> {
    layout: Layout,
    events: &'a EventSequence,
    t0: f64,
    scale: f64,
}

impl Objective<'_> {
    /// Log-likelihood and its gradient in natural parameters.
    fn log_likelihood(&self, x: &[f64], with_gradient: bool) -> (f64, Vec<f64>) {
        let d = self.layout.d;
        let (mu, alpha, beta, gamma_) = self.layout.unpack(x);
        if self.layout.family == MleFamily::PowerLaw {
            let value = self.power_law_value(&mu, &alpha, &beta, &gamma_);
            if !with_gradient {
                return (value, Vec::new());
            }
            let g = central_gradient(
                |y| {
                    let (m, a, b, g) = self.layout.unpack(y);
                    self.power_law_value(&m, &a, &b, &g)
                },
                x,
                NUMERIC_STEP,
            );
            return (value, g);
        }
        let mut terms = TermSet::default();
        for q in 0..d * d {
            terms.push(q / d, q % d, alpha[q], beta[q]);
        }
        let ev = eval_exp_terms(&mu, &terms, self.events, self.t0, with_gradient);
        let value = ev.value();
        let Some(g) = ev.gradient else { return (value, Vec::new()) };
        let mut grad = g.mu;
        grad.extend_from_slice(&g.alpha);
        match self.layout.n_beta() {
            0 => {}
            1 => grad.push(g.beta.iter().sum()),
            _ => grad.extend_from_slice(&g.beta),
        }
        (value, grad)
    }

    fn power_law_value(&self, mu: &[f64], alpha: &[f64], beta: &[f64], gamma_: &[f64]) -> f64 {
        let d = self.layout.d;
        let horizon = self.events.horizon();
        let mut terms = TermSet::default();
        for q in 0..d * d {
            for t in power_law_terms(alpha[q], beta[q], gamma_[q], horizon) {
                terms.push(q / d, q % d, t.alpha, t.beta);
            }
        }
        let ev = eval_exp_terms(mu, &terms, self.events, self.t0, false);
        if ev.zero_at.is_some() {
            return f64::NEG_INFINITY;
        }
        let mut comp = ev.baseline_compensator;
        for (t, j) in self.events.iter() {
            for i in 0..d {
                let q = i * d + j;
                let k = Kernel::PowerLaw { alpha: alpha[q], beta: beta[q], gamma: gamma_[q] };
                comp += k.cumulative(horizon - t) - k.cumulative(self.t0 - t);
            }
        }
        ev.log_intensity - comp
    }

    fn barrier(&self, x: &[f64]) -> f64 {
        let (rho, _) = spectral_radius(&self.layout.norms(x));
        if rho > BARRIER_RADIUS {
            BARRIER_WEIGHT * (rho - BARRIER_RADIUS).powi(2)
        } else {
            0.0
        }
    }

    /// Scaled negative log-likelihood plus barrier, in log-parameters.
    fn eval(&self, theta: &[f64]) -> (f64, Vec<f64>) {
        let x: Vec<f64> = theta.iter().map(|v| v.exp()).collect();
        let (ll, g) = self.log_likelihood(&x, true);
        if !ll.is_finite() || g.iter().any(|v| !v.is_finite()) {
            return (f64::INFINITY, vec![0.0; theta.len()]);
        }
        let mut value = -ll / self.scale;
        let mut grad: Vec<f64> = g.iter().zip(&x).map(|(g, x)| -g * x / self.scale).collect();
        let pen = self.barrier(&x);
        if pen > 0.0 {
            value += pen;
            let pg = central_gradient(|th| self.barrier(&th.iter().map(|v| v.exp()).collect::<Vec<_>>()), theta, NUMERIC_STEP);
            for (g, p) in grad.iter_mut().zip(pg) {
                *g += p;
            }
        }
        (value, grad)
    }

    /// Observed-information standard errors in natural parameters.
    fn standard_errors(&self, x: &[f64]) -> Option<Vec<f64>> {
        let n = x.len();
        let mut h = DMatrix::zeros(n, n);
        let step = if self.layout.family == MleFamily::PowerLaw { 1e-4 } else { 1e-5 };
        let mut xp = x.to_vec();
        for j in 0..n {
            let dx = step * x[j].abs().max(1e-8);
            xp[j] = x[j] + dx;
            let (_, gp) = self.log_likelihood(&xp, true);
            xp[j] = x[j] - dx;
            let (_, gm) = self.log_likelihood(&xp, true);
            xp[j] = x[j];
            for i in 0..n {
                h[(i, j)] = -(gp[i] - gm[i]) / (2.0 * dx);
            }
        }
        let h = (&h + h.transpose()) * 0.5;
        let inv = h.cholesky()?.inverse();
        (0..n).map(|i| if inv[(i, i)] > 0.0 { Some(inv[(i, i)].sqrt()) } else { None }).collect()
    }
}

/// Maximum-likelihood fit of an exponential or power-law Hawkes model.
pub fn fit_mle(events: &EventSequence, cfg: &MleConfig) -> Result<EstimationResult> {
    require_events(events)?;
    let layout = Layout { d: events.dim(), family: cfg.family };
    if let MleFamily::Exponential(BetaMode::Fixed(b)) = cfg.family {
        if !(b.is_finite() && b > 0.0) {
            return Err(HawkesError::Domain(format!("fixed beta must be > 0, got {b}")));
        }
    }
    let x0 = match &cfg.init {
        Some(m) => layout.params_of(m).ok_or_else(|| {
            HawkesError::Input("initial model does not match the fitted family and dimension".into())
        })?,
        None => layout.default_params(events),
    };
    let t0 = cfg.window.start(&layout.model(&x0)?, events.horizon());
    let scored = events.times().iter().filter(|&&t| t >= t0).count();
    if scored == 0 {
        return Err(HawkesError::DegenerateData("no events after the edge window".into()));
    }
    let obj = Objective { layout: layout.clone(), events, t0, scale: scored as f64 };
    let theta0: Vec<f64> = x0.iter().map(|v| v.ln()).collect();
    let bfgs = BfgsConfig { max_iterations: cfg.max_iterations, gradient_tolerance: cfg.gradient_tolerance };
    let out = minimize_bfgs(|th| obj.eval(th), &theta0, &bfgs);
    let x: Vec<f64> = out.x.iter().map(|v| v.exp()).collect();

    let mut res = EstimationResult::new(layout.model(&x)?, &format!("mle-{}", family_label(cfg.family)))?;
    res.objective_trace = out.trace.iter().map(|r| -r.value * obj.scale).collect();
    res.gradient_trace = out.trace.iter().map(|r| Some(r.gradient_norm)).collect();
    res.converged = out.converged;
    res.iterations = out.iterations;
    res.log_likelihood = Some(obj.log_likelihood(&x, false).0);
    let se = if cfg.standard_errors { obj.standard_errors(&x) } else { None };
    res.parameters = layout
        .names()
        .into_iter()
        .enumerate()
        .map(|(k, name)| ParameterEstimate { name, value: x[k], std_error: se.as_ref().map(|s| s[k]) })
        .collect();
    if !out.converged {
        res.warnings.push(format!("optimizer stopped after {} iterations (gradient norm {:.3e})", out.iterations, out.gradient_norm));
    }
    if res.near_critical {
        res.warnings.push(format!("fit at the stability boundary (branching ratio {:.6})", res.branching_ratio()));
    }
    if scored < 10 * layout.len() {
        res.warnings.push(format!("{scored} events for {} parameters; estimates may be unidentified", layout.len()));
    }
    Ok(res)
}

fn family_label(f: MleFamily) -> &'static str {
    match f {
        MleFamily::Exponential(_) => "exponential",
        MleFamily::PowerLaw => "power_law",
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::estimate::likelihood::{log_likelihood_with, LikelihoodPath};
    use crate::simulate::{simulate_thinning, HistoryTruncation, SimConfig};

    #[test]
    fn power_law_expansion_is_accurate() {
        let (a, b, g) = (0.45, 1.0, 0.5);
        let k = Kernel::power_law(a, b, g).unwrap();
        let terms = power_law_terms(a, b, g, 1e5);
        for t in [0.0, 0.01, 0.3, 1.0, 10.0, 300.0, 1e4, 1e5] {
            let approx: f64 = terms.iter().map(|e| e.alpha * e.beta * (-e.beta * t).exp()).sum();
            let exact = k.eval(t);
            assert!((approx - exact).abs() < 1e-6 * exact, "t={t}: {approx} vs {exact}");
        }
    }

    #[test]
    fn recovers_exponential_parameters() {
        let truth = HawkesModel::univariate(1.0, Kernel::exponential(0.5, 2.0).unwrap()).unwrap();
        let ev = simulate_thinning(&truth, &SimConfig::new(11, 1e4)).unwrap();
        let fit = fit_mle(&ev, &MleConfig::exponential(BetaMode::Free)).unwrap();
        assert!(fit.converged, "{:?}", fit.warnings);
        for (name, want) in [("mu[0]", 1.0), ("alpha[0][0]", 0.5), ("beta[0][0]", 2.0)] {
            let p = fit.parameter(name).unwrap();
            let se = p.std_error.unwrap();
            assert!((p.value - want).abs() < 3.0 * se, "{name}: {} ± {se}", p.value);
        }
    }

    #[test]
    fn poisson_data_gives_small_alpha() {
        let truth = HawkesModel::univariate(1.0, Kernel::Zero).unwrap();
        let ev = simulate_thinning(&truth, &SimConfig::new(4, 1e4)).unwrap();
        let fit = fit_mle(&ev, &MleConfig::exponential(BetaMode::Free)).unwrap();
        assert!(fit.parameter("alpha[0][0]").unwrap().value < 0.05);
        let rate = ev.len() as f64 / ev.horizon();
        assert!((fit.parameter("mu[0]").unwrap().value - rate).abs() < 0.05 * rate);
    }

    #[test]
    fn optimum_matches_exact_likelihood() {
        let truth = HawkesModel::univariate(0.5, Kernel::exponential(0.6, 1.5).unwrap()).unwrap();
        let ev = simulate_thinning(&truth, &SimConfig::new(2, 2000.0)).unwrap();
        let cfg = MleConfig::exponential(BetaMode::Free).with_window(EdgeWindow::None);
        let fit = fit_mle(&ev, &cfg).unwrap();
        let exact = log_likelihood_with(&fit.model, &ev, EdgeWindow::None, LikelihoodPath::Direct(HistoryTruncation::Full))
            .unwrap()
            .value;
        assert!((fit.log_likelihood.unwrap() - exact).abs() < 1e-8 * exact.abs());
        let truth_ll = log_likelihood_with(&truth, &ev, EdgeWindow::None, LikelihoodPath::Auto).unwrap().value;
        assert!(exact >= truth_ll);
    }

    #[test]
    fn bivariate_shared_beta() {
        let km = KernelMatrix::new(
            2,
            vec![
                Kernel::exponential(0.3, 2.0).unwrap(),
                Kernel::exponential(0.2, 2.0).unwrap(),
                Kernel::exponential(0.1, 2.0).unwrap(),
                Kernel::exponential(0.4, 2.0).unwrap(),
            ],
        )
        .unwrap();
        let truth = HawkesModel::new(vec![0.5, 0.4], km).unwrap();
        let ev = simulate_thinning(&truth, &SimConfig::new(9, 5000.0)).unwrap();
        let fit = fit_mle(&ev, &MleConfig::exponential(BetaMode::Shared)).unwrap();
        let b = fit.parameter("beta").unwrap();
        assert!((b.value - 2.0).abs() < 3.0 * b.std_error.unwrap());
        let rho = truth.stability().unwrap().spectral_radius;
        assert!((fit.branching_ratio() - rho).abs() < 0.1);
    }

    #[test]
    fn fixed_beta_and_power_law_run() {
        let truth = HawkesModel::univariate(1.0, Kernel::power_law(0.3, 1.0, 0.6).unwrap()).unwrap();
        let ev = simulate_thinning(&truth, &SimConfig::new(1, 3000.0)).unwrap();
        let fit = fit_mle(&ev, &MleConfig::power_law().with_max_iterations(200)).unwrap();
        assert!((fit.branching_ratio() - 0.5).abs() < 0.15, "{}", fit.branching_ratio());
        let fixed = fit_mle(&ev, &MleConfig::exponential(BetaMode::Fixed(1.0))).unwrap();
        assert!(fixed.parameter("beta").is_none());
        assert_eq!(fixed.parameters.len(), 2);
    }

    #[test]
    fn empty_events_are_degenerate() {
        let ev = EventSequence::empty(1, 10.0);
        assert!(matches!(fit_mle(&ev, &MleConfig::default()), Err(HawkesError::DegenerateData(_))));
    }
}
