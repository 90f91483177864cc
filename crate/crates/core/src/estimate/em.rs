//! Expectation-maximization over the latent branching structure.
//!
//! The parametric version handles one exponential per kernel entry and uses an
//! ECM step for the decay rates; the non-parametric version fits a 1D
//! histogram kernel.

use serde::{Deserialize, Serialize};

use super::likelihood::EdgeWindow;
use super::mle::BetaMode;
use super::{require_events, EstimationResult, ParameterEstimate};
use crate::error::{HawkesError, Result};
use crate::events::EventSequence;
use crate::kernels::{Kernel, KernelMatrix};
use crate::model::HawkesModel;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmConfig {
    pub init: Option<HawkesModel>,
    pub beta: BetaMode,
    pub max_iterations: usize,
    /// Stop when the log-likelihood gain falls below `tolerance · max(1, |log L|)`.
    pub tolerance: f64,
    pub window: EdgeWindow,
}

impl Default for EmConfig {
    fn default() -> Self {
        Self { init: None, beta: BetaMode::Free, max_iterations: 5000, tolerance: 1e-12, window: EdgeWindow::KernelSupport }
    }
}

#[derive(Debug, Clone, Copy, Default)]
struct EntryStats {
    /// Expected number of children attributed to this entry.
    children: f64,
    /// Expected sum of parent-child lags.
    lag_sum: f64,
}

struct EStep {
    log_likelihood: f64,
    immigrants: Vec<f64>,
    entries: Vec<EntryStats>,
}

fn e_step(mu: &[f64], alpha: &[f64], beta: &[f64], events: &EventSequence, t0: f64) -> Result<EStep> {
    let d = mu.len();
    let times = events.times();
    let comps = events.components();
    let mut r = vec![0.0; d * d];
    let mut s = vec![0.0; d * d];
    let mut imm = vec![0.0; d];
    let mut st = vec![EntryStats::default(); d * d];
    let mut ll = 0.0;
    let mut last = 0.0;
    let mut m = 0;
    while m < times.len() {
        let t = times[m];
        let dt = t - last;
        if dt > 0.0 {
            for q in 0..d * d {
                let e = (-beta[q] * dt).exp();
                s[q] = e * (s[q] + dt * r[q]);
                r[q] *= e;
            }
            last = t;
        }
        let mut end = m;
        while end < times.len() && times[end] == t {
            end += 1;
        }
        if t >= t0 {
            for (n, &i) in comps.iter().enumerate().take(end).skip(m) {
                let row = i * d..(i + 1) * d;
                let lam = mu[i] + row.clone().map(|q| alpha[q] * beta[q] * r[q]).sum::<f64>();
                if lam <= 0.0 {
                    return Err(HawkesError::DegenerateData(format!("zero intensity at event {n}")));
                }
                ll += lam.ln();
                imm[i] += mu[i] / lam;
                for q in row {
                    let w = alpha[q] * beta[q] / lam;
                    st[q].children += w * r[q];
                    st[q].lag_sum += w * s[q];
                }
            }
        }
        for &j in &comps[m..end] {
            for i in 0..d {
                r[i * d + j] += 1.0;
            }
        }
        m = end;
    }
    let span = events.horizon() - t0;
    let mut comp: f64 = mu.iter().map(|m| m * span).sum();
    for i in 0..d {
        for j in 0..d {
            let q = i * d + j;
            comp += alpha[q] * exposure(events, j, beta[q], t0);
        }
    }
    Ok(EStep { log_likelihood: ll - comp, immigrants: imm, entries: st })
}

/// `G_j(β) = Σ_{n ∈ j} (e^{-β a_n} - e^{-β b_n})`, the compensator of a unit-norm kernel.
fn exposure(events: &EventSequence, j: usize, beta: f64, t0: f64) -> f64 {
    let t_end = events.horizon();
    events
        .iter()
        .filter(|&(_, c)| c == j)
        .map(|(t, _)| (-beta * (t0 - t).max(0.0)).exp() - (-beta * (t_end - t)).exp())
        .sum()
}

/// Expected complete-data log-likelihood with α profiled out.
fn profile(stats: &[(EntryStats, usize)], events: &EventSequence, beta: f64, t0: f64) -> f64 {
    stats
        .iter()
        .map(|(s, j)| {
            let p = s.children;
            if p <= 0.0 {
                return 0.0;
            }
            let g = exposure(events, *j, beta, t0);
            p * (p / g).ln() + p * beta.ln() - beta * s.lag_sum - p
        })
        .sum()
}

/// Golden-section search of `f` on `[lo, hi]` in log-space; returns the argmax.
fn golden_max<F: Fn(f64) -> f64>(f: F, lo: f64, hi: f64) -> f64 {
    let phi = 0.5 * (5f64.sqrt() - 1.0);
    let (mut a, mut b) = (lo.ln(), hi.ln());
    let mut c = b - phi * (b - a);
    let mut d = a + phi * (b - a);
    let (mut fc, mut fd) = (f(c.exp()), f(d.exp()));
    for _ in 0..80 {
        if fc > fd {
            b = d;
            d = c;
            fd = fc;
            c = b - phi * (b - a);
            fc = f(c.exp());
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + phi * (b - a);
            fd = f(d.exp());
        }
        if b - a < 1e-12 {
            break;
        }
    }
    (0.5 * (a + b)).exp()
}

fn beta_step(current: f64, stats: &[(EntryStats, usize)], events: &EventSequence, t0: f64) -> f64 {
    let p: f64 = stats.iter().map(|(s, _)| s.children).sum();
    let l: f64 = stats.iter().map(|(s, _)| s.lag_sum).sum();
    if p <= 0.0 || l <= 0.0 {
        return current;
    }
    let guess = p / l;
    let cand = golden_max(|b| profile(stats, events, b, t0), guess.min(current) * 1e-2, guess.max(current) * 1e2);
    if profile(stats, events, cand, t0) > profile(stats, events, current, t0) {
        cand
    } else {
        current
    }
}

/// Parametric EM for exponential kernels `α^{ij} β^{ij} e^{-β^{ij} t}`.
pub fn fit_em_parametric(events: &EventSequence, cfg: &EmConfig) -> Result<EstimationResult> {
    require_events(events)?;
    let d = events.dim();
    let t_end = events.horizon();
    let total = events.len() as f64 / t_end;
    let (mut mu, mut alpha, mut beta) = match &cfg.init {
        Some(m) => {
            if m.dim() != d {
                return Err(HawkesError::Input("initial model dimension does not match the events".into()));
            }
            let mut a = Vec::new();
            let mut b = Vec::new();
            for (_, _, k) in m.kernels().iter() {
                match k {
                    Kernel::Exponential { alpha, beta } => {
                        a.push(*alpha);
                        b.push(*beta);
                    }
                    Kernel::Zero => {
                        a.push(0.0);
                        b.push(total);
                    }
                    _ => return Err(HawkesError::UnsupportedFamily("parametric EM needs exponential kernels".into())),
                }
            }
            (m.baseline().iter().map(|v| v.max(1e-9)).collect::<Vec<_>>(), a, b)
        }
        None => {
            let mu: Vec<f64> = events.counts().iter().map(|&n| 0.5 * n as f64 / t_end).collect();
            (mu, vec![0.3 / d as f64; d * d], vec![total; d * d])
        }
    };
    match cfg.beta {
        BetaMode::Fixed(b) if b.is_finite() && b > 0.0 => beta = vec![b; d * d],
        BetaMode::Fixed(b) => return Err(HawkesError::Domain(format!("fixed beta must be > 0, got {b}"))),
        BetaMode::Shared => {
            let b = beta.iter().sum::<f64>() / beta.len() as f64;
            beta = vec![b; d * d];
        }
        BetaMode::Free => {}
    }
    let init = build_model(&mu, &alpha, &beta)?;
    let t0 = cfg.window.start(&init, t_end);
    let span = t_end - t0;

    let mut trace = Vec::new();
    let mut converged = false;
    let mut iterations = 0;
    let mut last = e_step(&mu, &alpha, &beta, events, t0)?;
    trace.push(last.log_likelihood);
    while iterations < cfg.max_iterations {
        iterations += 1;
        for i in 0..d {
            mu[i] = last.immigrants[i] / span;
        }
        let stats: Vec<(EntryStats, usize)> = (0..d * d).map(|q| (last.entries[q], q % d)).collect();
        match cfg.beta {
            BetaMode::Free => {
                for q in 0..d * d {
                    beta[q] = beta_step(beta[q], &stats[q..q + 1], events, t0);
                }
            }
            BetaMode::Shared => {
                let b = beta_step(beta[0], &stats, events, t0);
                beta.iter_mut().for_each(|v| *v = b);
            }
            BetaMode::Fixed(_) => {}
        }
        for q in 0..d * d {
            let g = exposure(events, q % d, beta[q], t0);
            alpha[q] = if g > 0.0 { stats[q].0.children / g } else { 0.0 };
        }
        let next = e_step(&mu, &alpha, &beta, events, t0)?;
        let gain = next.log_likelihood - last.log_likelihood;
        trace.push(next.log_likelihood);
        last = next;
        if gain.abs() < cfg.tolerance * last.log_likelihood.abs().max(1.0) {
            converged = true;
            break;
        }
    }

    let model = build_model(&mu, &alpha, &beta)?;
    let mut res = EstimationResult::new(model, "em-exponential")?;
    res.gradient_trace = vec![None; trace.len()];
    res.log_likelihood = trace.last().copied();
    res.objective_trace = trace;
    res.converged = converged;
    res.iterations = iterations;
    let mut params: Vec<ParameterEstimate> =
        (0..d).map(|i| ParameterEstimate { name: format!("mu[{i}]"), value: mu[i], std_error: None }).collect();
    for q in 0..d * d {
        params.push(ParameterEstimate { name: format!("alpha[{}][{}]", q / d, q % d), value: alpha[q], std_error: None });
    }
    match cfg.beta {
        BetaMode::Free => {
            for q in 0..d * d {
                params.push(ParameterEstimate { name: format!("beta[{}][{}]", q / d, q % d), value: beta[q], std_error: None });
            }
        }
        BetaMode::Shared => params.push(ParameterEstimate { name: "beta".into(), value: beta[0], std_error: None }),
        BetaMode::Fixed(_) => {}
    }
    res.parameters = params;
    if !converged {
        let lt = total * beta.iter().map(|b| 1.0 / b).fold(0.0, f64::max);
        res.warnings.push(format!(
            "EM stopped after {iterations} iterations without converging (rate x time scale = {lt:.2}; EM slows down when this is large)"
        ));
    }
    if res.near_critical {
        res.warnings.push(format!("fit at the stability boundary (branching ratio {:.6})", res.branching_ratio()));
    }
    Ok(res)
}

fn build_model(mu: &[f64], alpha: &[f64], beta: &[f64]) -> Result<HawkesModel> {
    let d = mu.len();
    let kernels = (0..d * d)
        .map(|q| if alpha[q] > 0.0 { Kernel::exponential(alpha[q], beta[q]) } else { Ok(Kernel::Zero) })
        .collect::<Result<Vec<_>>>()?;
    HawkesModel::new(mu.to_vec(), KernelMatrix::new(d, kernels)?)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NonparametricEmConfig {
    /// Bin edges of the histogram kernel, starting at 0.
    pub breaks: Vec<f64>,
    /// Weight of the `Σ (h_{k+1} - h_k)^2` roughness penalty.
    pub smoothing: f64,
    pub max_iterations: usize,
    pub tolerance: f64,
    pub window: EdgeWindow,
}

impl NonparametricEmConfig {
    /// `bins` equal bins on `[0, support]`.
    pub fn uniform(support: f64, bins: usize) -> Self {
        let breaks = (0..=bins).map(|k| support * k as f64 / bins as f64).collect();
        Self { breaks, smoothing: 0.0, max_iterations: 2000, tolerance: 1e-10, window: EdgeWindow::KernelSupport }
    }

    pub fn with_smoothing(mut self, w: f64) -> Self {
        self.smoothing = w;
        self
    }
}

/// Histogram-kernel EM for 1D data.
pub fn fit_em_nonparametric(events: &EventSequence, cfg: &NonparametricEmConfig) -> Result<EstimationResult> {
    require_events(events)?;
    if events.dim() != 1 {
        return Err(HawkesError::Input("non-parametric EM is 1D only".into()));
    }
    let breaks = &cfg.breaks;
    let nb = breaks.len().saturating_sub(1);
    if nb == 0 || breaks[0] != 0.0 || !breaks.windows(2).all(|w| w[0] < w[1]) {
        return Err(HawkesError::Input("lag grid must start at 0 and increase strictly".into()));
    }
    if !(cfg.smoothing >= 0.0) {
        return Err(HawkesError::Domain("smoothing weight must be >= 0".into()));
    }
    let support = breaks[nb];
    let t_end = events.horizon();
    let t0 = match cfg.window {
        EdgeWindow::KernelSupport => support.min(0.1 * t_end),
        EdgeWindow::None => 0.0,
        EdgeWindow::Start(t) => t.clamp(0.0, t_end),
    };
    let times = events.times();

    // Candidate parents per scored child, as bin indices.
    let mut offsets = vec![0usize];
    let mut bins: Vec<u32> = Vec::new();
    let mut start = 0;
    let mut children = 0usize;
    for (m, &t) in times.iter().enumerate() {
        if t < t0 {
            continue;
        }
        while t - times[start] >= support {
            start += 1;
        }
        for &tn in &times[start..m] {
            let lag = t - tn;
            if lag > 0.0 {
                bins.push((breaks.partition_point(|b| *b <= lag) - 1) as u32);
            }
        }
        offsets.push(bins.len());
        children += 1;
    }
    if children == 0 {
        return Err(HawkesError::DegenerateData("no events after the edge window".into()));
    }
    // Exposure of each bin: Σ_n |[t_n + b_k, t_n + b_{k+1}] ∩ [t0, T]|.
    let mut exposure = vec![0.0; nb];
    for &tn in times {
        for k in 0..nb {
            let lo = (tn + breaks[k]).max(t0);
            let hi = (tn + breaks[k + 1]).min(t_end);
            if hi > lo {
                exposure[k] += hi - lo;
            }
        }
    }
    let span = t_end - t0;
    let w = cfg.smoothing;
    let mut mu = 0.5 * children as f64 / span;
    let mut h: Vec<f64> = (0..nb).map(|_| 0.5 / support).collect();

    let objective = |mu: f64, h: &[f64]| -> f64 {
        let mut ll = 0.0;
        for c in 0..children {
            let lam = mu + bins[offsets[c]..offsets[c + 1]].iter().map(|&k| h[k as usize]).sum::<f64>();
            ll += lam.ln();
        }
        ll -= mu * span + h.iter().zip(&exposure).map(|(a, e)| a * e).sum::<f64>();
        ll - w * h.windows(2).map(|p| (p[1] - p[0]).powi(2)).sum::<f64>()
    };

    let mut trace = vec![objective(mu, &h)];
    let mut converged = false;
    let mut iterations = 0;
    let mut pk = vec![0.0; nb];
    while iterations < cfg.max_iterations {
        iterations += 1;
        pk.iter_mut().for_each(|p| *p = 0.0);
        let mut imm = 0.0;
        for c in 0..children {
            let row = &bins[offsets[c]..offsets[c + 1]];
            let lam = mu + row.iter().map(|&k| h[k as usize]).sum::<f64>();
            imm += mu / lam;
            for &k in row {
                pk[k as usize] += h[k as usize] / lam;
            }
        }
        mu = imm / span;
        for k in 0..nb {
            h[k] = if w == 0.0 || nb == 1 {
                pk[k] / exposure[k]
            } else {
                let nbrs: Vec<usize> = [k.wrapping_sub(1), k + 1].into_iter().filter(|&q| q < nb).collect();
                let s: f64 = nbrs.iter().map(|&q| h[q]).sum();
                let a = 2.0 * w * nbrs.len() as f64;
                let b = 2.0 * w * s - exposure[k];
                (b + (b * b + 4.0 * a * pk[k]).sqrt()) / (2.0 * a)
            };
        }
        let v = objective(mu, &h);
        let gain = v - trace.last().unwrap();
        trace.push(v);
        if gain.abs() < cfg.tolerance * v.abs().max(1.0) {
            converged = true;
            break;
        }
    }

    let kernel = Kernel::piecewise(breaks.clone(), h.clone())?;
    let model = HawkesModel::univariate(mu, kernel)?;
    let mut res = EstimationResult::new(model, "em-histogram")?;
    res.gradient_trace = vec![None; trace.len()];
    res.log_likelihood = trace.last().copied();
    res.objective_trace = trace;
    res.converged = converged;
    res.iterations = iterations;
    res.parameters.push(ParameterEstimate { name: "mu[0]".into(), value: mu, std_error: None });
    for (k, v) in h.iter().enumerate() {
        res.parameters.push(ParameterEstimate { name: format!("level[{k}]"), value: *v, std_error: None });
    }
    if !converged {
        res.warnings.push(format!(
            "histogram EM stopped after {iterations} iterations; slowly decaying kernels converge slowly"
        ));
    }
    Ok(res)
}
