//! Conditional intensity `g^{ij}(t) = E[dN^i_t | dN^j_0 = 1]/dt − Λ^i` and the
//! Wiener–Hopf kernel estimator built on it.
//!
//! The Wiener–Hopf system `g(t) = φ(t) + (φ * g)(t)`, `t > 0`, is discretized
//! by Nyström quadrature; the kernel at the nodes becomes a piecewise-constant
//! kernel whose bins carry the quadrature weights.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::{require_events, EstimationResult, ParameterEstimate};
use crate::error::{HawkesError, Result};
use crate::events::EventSequence;
use crate::kernels::{Kernel, KernelMatrix};
use crate::model::{HawkesModel, Transfer};
use crate::numerics::linalg::condition_number;
use crate::numerics::quadrature::gauss_legendre;

pub const MAX_CONDITION: f64 = 1e12;
const RECOMMENDED_EVENTS: usize = 1000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GridStyle {
    Linear,
    /// Geometric panels refined near zero, for slowly decaying kernels.
    Log,
    /// Log when the estimated `g` decays slower than `e^{-t/support}`.
    Auto,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BandwidthRule {
    /// `0.9 min(sd, IQR/1.34) n^{-1/5}` on the pooled pair lags.
    Silverman,
    Fixed(f64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuadratureConfig {
    pub nodes: usize,
    pub support: f64,
    pub grid: GridStyle,
    pub bandwidth: BandwidthRule,
    /// Resolution of the tabulated `g` on `(0, support]`.
    pub grid_points: usize,
}

impl QuadratureConfig {
    pub fn new(support: f64) -> Self {
        Self { nodes: 64, support, grid: GridStyle::Auto, bandwidth: BandwidthRule::Silverman, grid_points: 1024 }
    }

    pub fn with_nodes(mut self, nodes: usize) -> Self {
        self.nodes = nodes;
        self
    }

    pub fn with_grid(mut self, grid: GridStyle) -> Self {
        self.grid = grid;
        self
    }

    pub fn with_bandwidth(mut self, rule: BandwidthRule) -> Self {
        self.bandwidth = rule;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.nodes < 8 {
            return Err(HawkesError::Input(format!("need at least 8 quadrature nodes, got {}", self.nodes)));
        }
        if !(self.support.is_finite() && self.support > 0.0) {
            return Err(HawkesError::Input(format!("support must be > 0, got {}", self.support)));
        }
        if self.grid_points < 16 {
            return Err(HawkesError::Input("grid_points must be >= 16".into()));
        }
        if let BandwidthRule::Fixed(h) = self.bandwidth {
            if !(h.is_finite() && h > 0.0) {
                return Err(HawkesError::Input(format!("bandwidth must be > 0, got {h}")));
            }
        }
        Ok(())
    }

    /// Nodes and weights on `[0, support]` for a resolved grid style.
    pub fn rule(&self, style: GridStyle) -> (Vec<f64>, Vec<f64>) {
        let s = self.support;
        match style {
            GridStyle::Log => {
                let per = 8;
                let panels = (self.nodes / per).max(1);
                let (x, w) = gauss_legendre(per);
                let mut edges = vec![0.0];
                for k in 0..panels {
                    edges.push(s * 10f64.powf(-3.0 * (panels - 1 - k) as f64 / (panels.max(2) - 1) as f64));
                }
                let mut nodes = Vec::new();
                let mut weights = Vec::new();
                for e in edges.windows(2) {
                    let (c, h) = (0.5 * (e[0] + e[1]), 0.5 * (e[1] - e[0]));
                    for (xi, wi) in x.iter().zip(&w) {
                        nodes.push(c + h * xi);
                        weights.push(h * wi);
                    }
                }
                (nodes, weights)
            }
            _ => {
                let (x, w) = gauss_legendre(self.nodes);
                (x.iter().map(|v| 0.5 * s * (v + 1.0)).collect(), w.iter().map(|v| 0.5 * s * v).collect())
            }
        }
    }
}

/// Tabulated `g^{ij}` on a uniform lag grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConditionalIntensityEstimate {
    pub dim: usize,
    pub lags: Vec<f64>,
    /// `values[i * dim + j][k] = g^{ij}(lags[k])`.
    pub values: Vec<Vec<f64>>,
    pub std_errors: Vec<Vec<f64>>,
    pub bandwidth: f64,
    /// `Λ̂^i = N^i / T`.
    pub rates: Vec<f64>,
    pub warnings: Vec<String>,
}

impl ConditionalIntensityEstimate {
    pub fn entry(&self, i: usize, j: usize) -> &[f64] {
        &self.values[i * self.dim + j]
    }

    fn interp(&self, i: usize, j: usize, t: f64) -> f64 {
        let v = self.entry(i, j);
        let step = self.lags[1] - self.lags[0];
        let x = (t - self.lags[0]) / step;
        if x <= 0.0 {
            return v[0];
        }
        let k = x.floor() as usize;
        if k + 1 >= v.len() {
            return v[v.len() - 1];
        }
        let f = x - k as f64;
        v[k] * (1.0 - f) + v[k + 1] * f
    }

    /// `g^{ij}(t)` for any real `t`, using `g^{ij}(-t) = Λ^i g^{ji}(t) / Λ^j`.
    pub fn eval(&self, i: usize, j: usize, t: f64) -> f64 {
        if t > 0.0 {
            self.interp(i, j, t)
        } else if t < 0.0 {
            self.rates[i] * self.interp(j, i, -t) / self.rates[j]
        } else {
            0.5 * (self.interp(i, j, 0.0) + self.rates[i] * self.interp(j, i, 0.0) / self.rates[j])
        }
    }

    /// `lag,g_i_j,...` with one column per entry.
    pub fn write_csv<W: std::io::Write>(&self, mut w: W) -> Result<()> {
        let d = self.dim;
        let head: Vec<String> = (0..d * d).map(|q| format!("g_{}_{}", q / d, q % d)).collect();
        writeln!(w, "lag,{}", head.join(","))?;
        for (k, t) in self.lags.iter().enumerate() {
            let row: Vec<String> = (0..d * d).map(|q| format!("{:.16e}", self.values[q][k])).collect();
            writeln!(w, "{t:.16e},{}", row.join(","))?;
        }
        Ok(())
    }
}

fn silverman(events: &EventSequence, support: f64) -> f64 {
    let bins = 4096;
    let width = support / bins as f64;
    let mut hist = vec![0u64; bins];
    let times = events.times();
    let mut hi = 0;
    for (n, &t) in times.iter().enumerate() {
        hi = hi.max(n + 1);
        while hi < times.len() && times[hi] - t < support {
            hi += 1;
        }
        for &u in &times[n + 1..hi] {
            let lag = u - t;
            if lag > 0.0 {
                hist[((lag / width) as usize).min(bins - 1)] += 1;
            }
        }
    }
    let n: u64 = hist.iter().sum();
    if n < 2 {
        return support / 20.0;
    }
    let nf = n as f64;
    let centers = (0..bins).map(|b| (b as f64 + 0.5) * width);
    let mean = centers.clone().zip(&hist).map(|(c, &k)| c * k as f64).sum::<f64>() / nf;
    let var = centers.zip(&hist).map(|(c, &k)| (c - mean).powi(2) * k as f64).sum::<f64>() / nf;
    let quantile = |p: f64| {
        let target = p * nf;
        let mut acc = 0.0;
        for (b, &k) in hist.iter().enumerate() {
            acc += k as f64;
            if acc >= target {
                return (b as f64 + 0.5) * width;
            }
        }
        support
    };
    let iqr = quantile(0.75) - quantile(0.25);
    let spread = if iqr > 0.0 { var.sqrt().min(iqr / 1.34) } else { var.sqrt() };
    (0.9 * spread * nf.powf(-0.2)).max(width)
}

/// Kernel-density estimate of `g` with reflection at zero and an edge-corrected
/// trigger count.
pub fn estimate_conditional_intensity(events: &EventSequence, cfg: &QuadratureConfig) -> Result<ConditionalIntensityEstimate> {
    cfg.validate()?;
    require_events(events)?;
    let d = events.dim();
    let t_end = events.horizon();
    let s = cfg.support;
    let h = match cfg.bandwidth {
        BandwidthRule::Silverman => silverman(events, s),
        BandwidthRule::Fixed(h) => h,
    };
    let mut warnings = Vec::new();
    if events.len() < RECOMMENDED_EVENTS {
        warnings.push(format!("only {} events; at least {RECOMMENDED_EVENTS} are recommended", events.len()));
    }
    let rates = events.empirical_rates();
    let per: Vec<Vec<f64>> = (0..d).map(|i| events.component_times(i)).collect();
    let delta = h / 8.0;
    let reach = s + 5.0 * h;
    let nbins = (reach / delta).ceil() as usize;
    let lags: Vec<f64> = (0..cfg.grid_points).map(|k| (k as f64 + 0.5) * s / cfg.grid_points as f64).collect();
    let norm = 1.0 / (h * (2.0 * PI).sqrt());
    let mut values = vec![Vec::new(); d * d];
    let mut std_errors = vec![Vec::new(); d * d];
    for i in 0..d {
        for j in 0..d {
            let (ti, tj) = (&per[i], &per[j]);
            // Edge-corrected density histogram: each pair weighted by 1/N_j(τ).
            let mut dens = vec![0.0; nbins];
            let mut lo = 0;
            for &t in tj {
                while lo < ti.len() && ti[lo] <= t {
                    lo += 1;
                }
                for &u in &ti[lo..] {
                    let lag = u - t;
                    if lag >= reach {
                        break;
                    }
                    dens[(lag / delta) as usize] += 1.0;
                }
            }
            for (b, v) in dens.iter_mut().enumerate() {
                let tau = (b as f64 + 0.5) * delta;
                let triggers = tj.partition_point(|&x| x <= t_end - tau) as f64;
                *v = if triggers > 0.0 { *v / triggers } else { 0.0 };
            }
            let reach_bins = (5.0 * h / delta).ceil() as isize;
            let mut gv = Vec::with_capacity(lags.len());
            let mut se = Vec::with_capacity(lags.len());
            for &tau in &lags {
                let centre = (tau / delta) as isize;
                let mut acc = 0.0;
                for b in (centre - reach_bins).max(0)..=(centre + reach_bins).min(nbins as isize - 1) {
                    let c = (b as f64 + 0.5) * delta;
                    let z1 = (tau - c) / h;
                    let z2 = (tau + c) / h;
                    acc += dens[b as usize] * ((-0.5 * z1 * z1).exp() + (-0.5 * z2 * z2).exp());
                }
                let density = acc * norm;
                let triggers = tj.partition_point(|&x| x <= t_end - tau).max(1) as f64;
                gv.push(density - rates[i]);
                se.push((density.max(rates[i]) / (triggers * h * 2.0 * PI.sqrt())).sqrt());
            }
            values[i * d + j] = gv;
            std_errors[i * d + j] = se;
        }
    }
    Ok(ConditionalIntensityEstimate { dim: d, lags, values, std_errors, bandwidth: h, rates, warnings })
}

fn resolve_style(g: &ConditionalIntensityEstimate, cfg: &QuadratureConfig) -> GridStyle {
    if cfg.grid != GridStyle::Auto {
        return cfg.grid;
    }
    let d = g.dim;
    let (t1, t2) = (0.05 * cfg.support, 0.5 * cfg.support);
    let at = |t: f64| (0..d).map(|i| g.interp(i, i, t).abs()).sum::<f64>();
    let k2 = g.lags.partition_point(|&x| x < t2).min(g.lags.len() - 1);
    let noise: f64 = (0..d).map(|i| g.std_errors[i * d + i][k2]).sum();
    let (g1, g2) = (at(t1), at(t2));
    if g2 > 3.0 * noise && g2 > g1 * (-(t2 - t1) / cfg.support).exp() {
        GridStyle::Log
    } else {
        GridStyle::Linear
    }
}

/// Solves the discretized Wiener–Hopf system for `φ` at quadrature nodes.
pub fn fit_wiener_hopf(events: &EventSequence, cfg: &QuadratureConfig) -> Result<EstimationResult> {
    let g = estimate_conditional_intensity(events, cfg)?;
    wiener_hopf_from(&g, cfg)
}

pub(crate) fn wiener_hopf_from(g: &ConditionalIntensityEstimate, cfg: &QuadratureConfig) -> Result<EstimationResult> {
    let d = g.dim;
    let style = resolve_style(g, cfg);
    let (nodes, weights) = cfg.rule(style);
    let n = nodes.len();
    let size = n * d;
    let a = DMatrix::from_fn(size, size, |r, c| {
        let (nn, j) = (r / d, r % d);
        let (l, k) = (c / d, c % d);
        let delta = if r == c { 1.0 } else { 0.0 };
        delta + weights[l] * g.eval(k, j, nodes[nn] - nodes[l])
    });
    let cond = condition_number(&a);
    if !(cond <= MAX_CONDITION) {
        return Err(HawkesError::Conditioning {
            cond,
            hint: "increase the density bandwidth or reduce the number of quadrature nodes".into(),
        });
    }
    let lu = a.lu();
    let mut breaks = vec![0.0];
    let mut acc = 0.0;
    for w in &weights {
        acc += w;
        breaks.push(acc);
    }
    let mut kernels = vec![Kernel::Zero; d * d];
    let mut norms = DMatrix::zeros(d, d);
    let mut negative = false;
    for i in 0..d {
        let b = DVector::from_fn(size, |r, _| g.eval(i, r % d, nodes[r / d]));
        let x = lu.solve(&b).ok_or_else(|| HawkesError::Singular("Wiener-Hopf system is singular".into()))?;
        for k in 0..d {
            let levels: Vec<f64> = (0..n).map(|l| x[l * d + k]).collect();
            negative |= levels.iter().any(|v| *v < 0.0);
            norms[(i, k)] = levels.iter().zip(&weights).map(|(v, w)| v * w).sum::<f64>();
            kernels[i * d + k] = Kernel::piecewise(breaks.clone(), levels)?;
        }
    }
    let lambda = DVector::from_column_slice(&g.rates);
    let mu_raw = (DMatrix::identity(d, d) - &norms) * &lambda;
    let mut warnings = g.warnings.clone();
    if mu_raw.iter().any(|m| *m < 0.0) {
        warnings.push("negative baseline estimate clamped to zero".into());
    }
    let mu: Vec<f64> = mu_raw.iter().map(|m| m.max(0.0)).collect();
    let transfer = if negative { Transfer::PositivePart } else { Transfer::Identity };
    let model = HawkesModel::with_options(mu.clone(), KernelMatrix::new(d, kernels)?, transfer, None)?;
    let mut res = EstimationResult::new(model, "wiener-hopf")?;
    res.converged = true;
    res.parameters = (0..d).map(|i| ParameterEstimate { name: format!("mu[{i}]"), value: mu[i], std_error: None }).collect();
    for i in 0..d {
        for j in 0..d {
            res.parameters.push(ParameterEstimate { name: format!("norm[{i}][{j}]"), value: norms[(i, j)], std_error: None });
        }
    }
    if style == GridStyle::Log {
        res.warnings.push("log quadrature grid selected for a slowly decaying kernel".into());
    }
    res.warnings.extend(warnings);
    Ok(res)
}
