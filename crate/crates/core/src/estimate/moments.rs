//! Method of moments on binned counts for exponential kernels.
//!
//! With `c(t) = Λ δ(t) + A e^{-κ|t|}` the covariance of counts in bins of width
//! `h` is exact:
//! `Var = Λh + 2A/κ² (κh − 1 + e^{-κh})` and, for lag `l ≥ 1`,
//! `Cov = A/κ² e^{-κ(l−1)h} (1 − e^{-κh})²`.
//! A 1D model has `A = Λβα(2−α)/(2(1−α))`, `κ = β(1−α)`; the symmetric
//! bivariate model decomposes into the modes `(N¹ ± N²)/√2` with `α = α_s ± α_c`.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::{require_events, EstimationResult, ParameterEstimate};
use crate::error::{HawkesError, Result};
use crate::events::EventSequence;
use crate::kernels::Kernel;
use crate::model::HawkesModel;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MomentFamily {
    Univariate,
    SymmetricBivariate,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MomentConfig {
    pub family: MomentFamily,
    /// Defaults to the mean inter-event time of one component.
    pub bin_width: Option<f64>,
    /// Autocovariances at lags `0..=max_lag` bins enter the fit.
    pub max_lag: usize,
    /// Contiguous blocks for the delete-one jackknife; 0 disables it.
    pub jackknife_blocks: usize,
}

impl MomentConfig {
    pub fn new(family: MomentFamily) -> Self {
        Self { family, bin_width: None, max_lag: 30, jackknife_blocks: 20 }
    }
}

/// Mean rate per component and binned autocovariance series.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MomentData {
    pub family: MomentFamily,
    pub bin_width: f64,
    pub rate: f64,
    /// One series for 1D; the `+` and `−` modes for the bivariate family.
    pub autocovariance: Vec<Vec<f64>>,
}

fn binned_cov(lambda: f64, a: f64, kappa: f64, h: f64, lag: usize) -> f64 {
    let x = kappa * h;
    if lag == 0 {
        lambda * h + 2.0 * a / (kappa * kappa) * (x - 1.0 + (-x).exp())
    } else {
        a / (kappa * kappa) * (-x * (lag - 1) as f64).exp() * (1.0 - (-x).exp()).powi(2)
    }
}

fn mode_params(lambda: f64, alpha: f64, beta: f64) -> (f64, f64) {
    (lambda * beta * alpha * (2.0 - alpha) / (2.0 * (1.0 - alpha)), beta * (1.0 - alpha))
}

fn exp_params(k: &Kernel) -> Option<(f64, f64)> {
    match k {
        Kernel::Exponential { alpha, beta } => Some((*alpha, *beta)),
        Kernel::Zero => Some((0.0, 1.0)),
        _ => None,
    }
}

/// Exact binned moments of a 1D or symmetric bivariate exponential model.
pub fn model_moments(model: &HawkesModel, bin_width: f64, max_lag: usize) -> Result<MomentData> {
    model.require_linear_stable()?;
    let lags = 0..=max_lag;
    let unsupported = || HawkesError::UnsupportedFamily("moments need 1D or symmetric bivariate exponential kernels".into());
    match model.dim() {
        1 => {
            let (alpha, beta) = exp_params(model.kernels().get(0, 0)).ok_or_else(unsupported)?;
            let lambda = model.baseline()[0] / (1.0 - alpha);
            let (a, kappa) = mode_params(lambda, alpha, beta);
            let s = lags.map(|l| binned_cov(lambda, a, kappa, bin_width, l)).collect();
            Ok(MomentData { family: MomentFamily::Univariate, bin_width, rate: lambda, autocovariance: vec![s] })
        }
        2 => {
            let km = model.kernels();
            let (s, c) = (exp_params(km.get(0, 0)).ok_or_else(unsupported)?, exp_params(km.get(0, 1)).ok_or_else(unsupported)?);
            let symmetric = km.get(0, 0) == km.get(1, 1) && km.get(0, 1) == km.get(1, 0) && model.baseline()[0] == model.baseline()[1];
            let beta = if s.0 > 0.0 { s.1 } else { c.1 };
            if !symmetric || (s.0 > 0.0 && c.0 > 0.0 && s.1 != c.1) {
                return Err(unsupported());
            }
            let lambda = model.baseline()[0] / (1.0 - s.0 - c.0);
            let series = [s.0 + c.0, s.0 - c.0]
                .iter()
                .map(|&a_mode| {
                    let (a, kappa) = mode_params(lambda, a_mode, beta);
                    lags.clone().map(|l| binned_cov(lambda, a, kappa, bin_width, l)).collect()
                })
                .collect();
            Ok(MomentData { family: MomentFamily::SymmetricBivariate, bin_width, rate: lambda, autocovariance: series })
        }
        _ => Err(unsupported()),
    }
}

/// Per-block sufficient statistics of a binned series.
#[derive(Debug, Clone)]
struct BlockStats {
    sum: f64,
    count: f64,
    products: Vec<f64>,
    pairs: Vec<f64>,
}

fn block_stats(x: &[f64], max_lag: usize) -> BlockStats {
    let n = x.len();
    let products = (0..=max_lag).map(|l| (0..n.saturating_sub(l)).map(|t| x[t] * x[t + l]).sum()).collect();
    let pairs = (0..=max_lag).map(|l| n.saturating_sub(l) as f64).collect();
    BlockStats { sum: x.iter().sum(), count: n as f64, products, pairs }
}

fn combine(blocks: &[BlockStats], skip: Option<usize>) -> (f64, Vec<f64>) {
    let kept = || blocks.iter().enumerate().filter(|(b, _)| Some(*b) != skip).map(|(_, s)| s);
    let sum: f64 = kept().map(|s| s.sum).sum();
    let count: f64 = kept().map(|s| s.count).sum();
    let mean = sum / count;
    let lags = blocks[0].products.len();
    let cov = (0..lags)
        .map(|l| kept().map(|s| s.products[l]).sum::<f64>() / kept().map(|s| s.pairs[l]).sum::<f64>() - mean * mean)
        .collect();
    (mean, cov)
}

struct Binned {
    /// `x` for 1D; `(x1 + x2)/√2` and `(x1 − x2)/√2` for the bivariate modes.
    series: Vec<Vec<f64>>,
    bin_width: f64,
}

fn bin_events(events: &EventSequence, cfg: &MomentConfig) -> Result<Binned> {
    require_events(events)?;
    let d = match cfg.family {
        MomentFamily::Univariate => 1,
        MomentFamily::SymmetricBivariate => 2,
    };
    if events.dim() != d {
        return Err(HawkesError::Input(format!("{:?} moments need {d}-dimensional events", cfg.family)));
    }
    let t_end = events.horizon();
    let h = cfg.bin_width.unwrap_or(d as f64 * t_end / events.len() as f64);
    if !(h.is_finite() && h > 0.0) {
        return Err(HawkesError::Input(format!("bin width must be > 0, got {h}")));
    }
    let nbins = (t_end / h).floor() as usize;
    if nbins < 2 * (cfg.max_lag + 1) {
        return Err(HawkesError::InsufficientData(format!("{nbins} bins for {} lags", cfg.max_lag + 1)));
    }
    let mut counts = vec![vec![0.0; nbins]; d];
    for (t, c) in events.iter() {
        let b = (t / h) as usize;
        if b < nbins {
            counts[c][b] += 1.0;
        }
    }
    let series = if d == 1 {
        counts
    } else {
        let r = std::f64::consts::FRAC_1_SQRT_2;
        vec![
            counts[0].iter().zip(&counts[1]).map(|(a, b)| (a + b) * r).collect(),
            counts[0].iter().zip(&counts[1]).map(|(a, b)| (a - b) * r).collect(),
        ]
    };
    Ok(Binned { series, bin_width: h })
}

fn moments_from_blocks(family: MomentFamily, h: f64, blocks: &[Vec<BlockStats>], skip: Option<usize>) -> MomentData {
    let per: Vec<(f64, Vec<f64>)> = blocks.iter().map(|b| combine(b, skip)).collect();
    let rate = match family {
        MomentFamily::Univariate => per[0].0 / h,
        MomentFamily::SymmetricBivariate => per[0].0 * std::f64::consts::FRAC_1_SQRT_2 / h,
    };
    MomentData { family, bin_width: h, rate, autocovariance: per.into_iter().map(|(_, c)| c).collect() }
}

fn blocks_of(binned: &Binned, max_lag: usize, n_blocks: usize) -> Vec<Vec<BlockStats>> {
    binned
        .series
        .iter()
        .map(|x| {
            let size = x.len().div_ceil(n_blocks.max(1));
            x.chunks(size).map(|c| block_stats(c, max_lag)).collect()
        })
        .collect()
}

/// Sample rate and binned autocovariances of the events.
pub fn empirical_moments(events: &EventSequence, cfg: &MomentConfig) -> Result<MomentData> {
    let binned = bin_events(events, cfg)?;
    Ok(moments_from_blocks(cfg.family, binned.bin_width, &blocks_of(&binned, cfg.max_lag, 1), None))
}

/// Levenberg–Marquardt with a forward-difference Jacobian.
fn levenberg_marquardt<F: Fn(&[f64]) -> Vec<f64>>(f: F, x0: &[f64], max_iterations: usize) -> (Vec<f64>, usize, bool) {
    let n = x0.len();
    let mut x = x0.to_vec();
    let mut r = DVector::from_vec(f(&x));
    let mut cost = r.norm_squared();
    let mut damping = 1e-3;
    for it in 1..=max_iterations {
        let mut jac = DMatrix::zeros(r.len(), n);
        for k in 0..n {
            let step = 1e-7 * x[k].abs().max(1e-3);
            let mut xp = x.clone();
            xp[k] += step;
            let rp = DVector::from_vec(f(&xp));
            jac.set_column(k, &((rp - &r) / step));
        }
        let jtj = jac.transpose() * &jac;
        let jtr = jac.transpose() * &r;
        let mut improved = false;
        while damping < 1e12 {
            let mut a = jtj.clone();
            for k in 0..n {
                a[(k, k)] += damping * jtj[(k, k)].max(1e-12);
            }
            let Some(delta) = a.lu().solve(&(-&jtr)) else {
                damping *= 10.0;
                continue;
            };
            let xn: Vec<f64> = x.iter().zip(delta.iter()).map(|(a, b)| a + b).collect();
            let rn = DVector::from_vec(f(&xn));
            let cn = rn.norm_squared();
            if cn.is_finite() && cn < cost {
                let small = delta.iter().zip(&x).all(|(d, x)| d.abs() <= 1e-12 * x.abs().max(1e-8));
                let rel = (cost - cn) / cost.max(1e-300);
                x = xn;
                r = rn;
                cost = cn;
                damping = (damping * 0.3).max(1e-15);
                improved = true;
                if small || rel < 1e-15 {
                    return (x, it, true);
                }
                break;
            }
            damping *= 10.0;
        }
        if !improved {
            return (x, it, true);
        }
    }
    (x, max_iterations, false)
}

/// Fits `(A, κ)` of one mode series by least squares, `Λ` fixed.
fn fit_mode(series: &[f64], lambda: f64, h: f64) -> (f64, f64) {
    let scale = series[0].abs().max(1e-12);
    let (c1, c2) = (series.get(1).copied().unwrap_or(0.0), series.get(2).copied().unwrap_or(0.0));
    let kappa0 = if c1 != 0.0 && c2 / c1 > 0.0 && c2 / c1 < 1.0 { -(c2 / c1).ln() / h } else { 1.0 / h };
    let a0 = c1 * kappa0 * kappa0 / (1.0 - (-kappa0 * h).exp()).powi(2);
    let resid = |p: &[f64]| -> Vec<f64> {
        let kappa = p[1].exp();
        series.iter().enumerate().map(|(l, s)| (binned_cov(lambda, p[0], kappa, h, l) - s) / scale).collect()
    };
    let (p, _, _) = levenberg_marquardt(resid, &[a0, kappa0.ln()], 500);
    (p[0], p[1].exp())
}

/// `α` and `β` of a mode from `(A, κ)`: `1 − α = (1 + 2A/(Λκ))^{-1/2}`.
fn invert_mode(lambda: f64, a: f64, kappa: f64) -> (f64, f64) {
    let r = (2.0 * a / (lambda * kappa)).max(-1.0 + 1e-12);
    let one_minus = 1.0 / (1.0 + r).sqrt();
    (1.0 - one_minus, kappa / one_minus)
}

/// Natural parameters: 1D `(μ, α, β)`; bivariate `(μ, α_s, α_c, β)`.
fn fit_params(data: &MomentData, init: Option<&[f64]>) -> Vec<f64> {
    let (lambda, h) = (data.rate, data.bin_width);
    match data.family {
        MomentFamily::Univariate => {
            let (a, kappa) = fit_mode(&data.autocovariance[0], lambda, h);
            let (alpha, beta) = invert_mode(lambda, a, kappa);
            vec![lambda * (1.0 - alpha), alpha, beta]
        }
        MomentFamily::SymmetricBivariate => {
            let start = match init {
                Some(p) => vec![p[1] + p[2], p[1] - p[2], p[3].ln()],
                None => {
                    let (ap, kp) = fit_mode(&data.autocovariance[0], lambda, h);
                    let (am, km) = fit_mode(&data.autocovariance[1], lambda, h);
                    let (a_plus, b_plus) = invert_mode(lambda, ap, kp);
                    let (a_minus, b_minus) = invert_mode(lambda, am, km);
                    let wp = a_plus.abs();
                    let wm = a_minus.abs();
                    let beta = if wp + wm > 0.0 { (wp * b_plus + wm * b_minus) / (wp + wm) } else { b_plus };
                    vec![a_plus, a_minus, beta.ln()]
                }
            };
            let scale: Vec<f64> = data.autocovariance.iter().map(|s| s[0].abs().max(1e-12)).collect();
            let resid = |p: &[f64]| -> Vec<f64> {
                let beta = p[2].exp();
                let mut out = Vec::new();
                for (m, a_mode) in [p[0], p[1]].into_iter().enumerate() {
                    let (a, kappa) = mode_params(lambda, a_mode.min(1.0 - 1e-9), beta);
                    for (l, s) in data.autocovariance[m].iter().enumerate() {
                        out.push((binned_cov(lambda, a, kappa, h, l) - s) / scale[m]);
                    }
                }
                out
            };
            let (p, _, _) = levenberg_marquardt(resid, &start, 500);
            let (a_plus, a_minus, beta) = (p[0], p[1], p[2].exp());
            vec![lambda * (1.0 - a_plus), 0.5 * (a_plus + a_minus), 0.5 * (a_plus - a_minus), beta]
        }
    }
}

fn param_names(family: MomentFamily) -> Vec<&'static str> {
    match family {
        MomentFamily::Univariate => vec!["mu[0]", "alpha[0][0]", "beta[0][0]"],
        MomentFamily::SymmetricBivariate => vec!["mu", "alpha_self", "alpha_cross", "beta"],
    }
}

fn check_identifiable(data: &MomentData) -> Result<()> {
    let lags = data.autocovariance.iter().map(|s| s.len()).sum::<usize>();
    let params = param_names(data.family).len();
    if 1 + lags < params.max(3) {
        return Err(HawkesError::Identifiability(format!("{} moment conditions for {params} parameters", 1 + lags)));
    }
    Ok(())
}

fn result_from(data: &MomentData, p: &[f64], se: Option<Vec<f64>>) -> Result<EstimationResult> {
    let mut warnings = Vec::new();
    let clamp = |v: f64, name: &str, w: &mut Vec<String>| {
        if v < 0.0 {
            w.push(format!("{name} estimate {v:.4} clamped to zero"));
        }
        v.max(0.0)
    };
    let kernel = |a: f64, b: f64| if a > 0.0 { Kernel::exponential(a, b) } else { Ok(Kernel::Zero) };
    let model = match data.family {
        MomentFamily::Univariate => {
            let a = clamp(p[1], "alpha", &mut warnings);
            HawkesModel::univariate(p[0].max(0.0), kernel(a, p[2])?)?
        }
        MomentFamily::SymmetricBivariate => {
            let s = clamp(p[1], "alpha_self", &mut warnings);
            let c = clamp(p[2], "alpha_cross", &mut warnings);
            HawkesModel::symmetric_bivariate(p[0].max(0.0), kernel(s, p[3])?, kernel(c, p[3])?)?
        }
    };
    let mut res = EstimationResult::new(model, "moments")?;
    res.converged = true;
    res.parameters = param_names(data.family)
        .into_iter()
        .enumerate()
        .map(|(k, n)| ParameterEstimate { name: n.to_string(), value: p[k], std_error: se.as_ref().map(|s| s[k]) })
        .collect();
    res.warnings = warnings;
    if res.near_critical {
        res.warnings.push(format!("fit at the stability boundary (branching ratio {:.6})", res.branching_ratio()));
    }
    Ok(res)
}

/// Fits from precomputed moments (no standard errors).
pub fn fit_moments_from(data: &MomentData) -> Result<EstimationResult> {
    check_identifiable(data)?;
    let p = fit_params(data, None);
    result_from(data, &p, None)
}

/// Moment fit with delete-one-block jackknife standard errors.
pub fn fit_moments(events: &EventSequence, cfg: &MomentConfig) -> Result<EstimationResult> {
    let binned = bin_events(events, cfg)?;
    let data = moments_from_blocks(cfg.family, binned.bin_width, &blocks_of(&binned, cfg.max_lag, 1), None);
    check_identifiable(&data)?;
    let p = fit_params(&data, None);
    let se = if cfg.jackknife_blocks >= 2 {
        let blocks = blocks_of(&binned, cfg.max_lag, cfg.jackknife_blocks);
        let nb = blocks[0].len();
        let reps: Vec<Vec<f64>> = (0..nb)
            .map(|b| fit_params(&moments_from_blocks(cfg.family, binned.bin_width, &blocks, Some(b)), Some(&p)))
            .collect();
        let k = nb as f64;
        Some(
            (0..p.len())
                .map(|q| {
                    let mean = reps.iter().map(|r| r[q]).sum::<f64>() / k;
                    ((k - 1.0) / k * reps.iter().map(|r| (r[q] - mean).powi(2)).sum::<f64>()).sqrt()
                })
                .collect(),
        )
    } else {
        None
    };
    result_from(&data, &p, se)
}
