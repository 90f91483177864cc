//! Microstructure layer: tick price paths built from up/down event streams,
//! signature plots and Epps covariation, reflexivity reports, and meta-order
//! impact curves for the impulsive impact model.

use std::io::Write;

use log::warn;
use rand::Rng;
use rand_distr::{Exp1, Poisson};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{HawkesError, Result};
use crate::estimate::{
    branching_ratio_estimate, fit_mle, fit_wiener_hopf, MleConfig, QuadratureConfig,
};
use crate::events::EventSequence;
use crate::kernels::Kernel;
use crate::model::{check_radius, fmt_f64, kernel_from_spec, kernel_to_spec, parse_family, parse_f64, KeyValueDoc};
use crate::simulate::{rng_for, sample_lag};

/// Branching ratios above this are flagged as close to criticality.
pub const CRITICALITY_FLAG: f64 = 0.95;

/// Piecewise-constant tick price `P_t = P_0 + N¹_t − N²_t`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PricePath {
    /// Jump times, non-decreasing.
    pub times: Vec<f64>,
    /// Price in ticks right after each jump.
    pub levels: Vec<i64>,
    pub p0: i64,
    /// Currency per tick.
    pub tick: f64,
}

impl PricePath {
    /// Price in ticks at `t` (right-continuous).
    pub fn ticks_at(&self, t: f64) -> i64 {
        match self.times.partition_point(|&s| s <= t) {
            0 => self.p0,
            k => self.levels[k - 1],
        }
    }

    pub fn final_ticks(&self) -> i64 {
        self.levels.last().copied().unwrap_or(self.p0)
    }

    /// Ticks sampled on an increasing grid in one pass.
    fn sample(&self, grid: impl Iterator<Item = f64>) -> Vec<i64> {
        let mut k = 0;
        let mut out = Vec::new();
        for t in grid {
            while k < self.times.len() && self.times[k] <= t {
                k += 1;
            }
            out.push(if k == 0 { self.p0 } else { self.levels[k - 1] });
        }
        out
    }

    /// Path from components `up` and `down` of a sequence.
    pub fn from_sequence(events: &EventSequence, up: usize, down: usize, p0: i64, tick: f64) -> Result<Self> {
        if up >= events.dim() || down >= events.dim() || up == down {
            return Err(HawkesError::Input(format!("invalid up/down components {up}/{down} for dimension {}", events.dim())));
        }
        price_from_events(&events.component_times(up), &events.component_times(down), p0, tick)
    }
}

fn check_sorted(xs: &[f64], what: &str) -> Result<()> {
    if let Some(k) = xs.windows(2).position(|w| !(w[0] <= w[1])) {
        return Err(HawkesError::Input(format!("{what} times are not sorted at index {}", k + 1)));
    }
    if xs.iter().any(|x| !x.is_finite()) {
        return Err(HawkesError::Input(format!("{what} times contain non-finite values")));
    }
    Ok(())
}

/// Merges up and down jump streams into a price path. At equal times up
/// jumps are applied first.
pub fn price_from_events(up: &[f64], down: &[f64], p0: i64, tick: f64) -> Result<PricePath> {
    check_sorted(up, "up")?;
    check_sorted(down, "down")?;
    if !(tick.is_finite() && tick > 0.0) {
        return Err(HawkesError::Input(format!("tick must be > 0, got {tick}")));
    }
    let mut times = Vec::with_capacity(up.len() + down.len());
    let mut levels = Vec::with_capacity(up.len() + down.len());
    let (mut i, mut j, mut p) = (0, 0, p0);
    while i < up.len() || j < down.len() {
        if j == down.len() || (i < up.len() && up[i] <= down[j]) {
            times.push(up[i]);
            p += 1;
            i += 1;
        } else {
            times.push(down[j]);
            p -= 1;
            j += 1;
        }
        levels.push(p);
    }
    Ok(PricePath { times, levels, p0, tick })
}

/// Realized (co)variation per unit time as a function of the sampling scale.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScaleCurve {
    pub taus: Vec<f64>,
    pub values: Vec<f64>,
    /// Standard error from the spread of the per-interval products.
    pub std_errors: Vec<f64>,
    /// Number of complete intervals per scale.
    pub intervals: Vec<usize>,
}

/// `C(τ)`, in price² per unit time.
pub type SignatureCurve = ScaleCurve;

impl ScaleCurve {
    /// `tau,value,stderr` rows.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "tau,value,stderr")?;
        for k in 0..self.taus.len() {
            writeln!(w, "{},{:.12e},{:.6e}", fmt_f64(self.taus[k]), self.values[k], self.std_errors[k])?;
        }
        Ok(())
    }
}

fn check_scales(taus: &[f64], horizon: f64) -> Result<()> {
    if !(horizon.is_finite() && horizon > 0.0) {
        return Err(HawkesError::Input(format!("record length must be > 0, got {horizon}")));
    }
    if taus.is_empty() {
        return Err(HawkesError::Input("empty scale grid".into()));
    }
    for &tau in taus {
        if !(tau.is_finite() && tau > 0.0) {
            return Err(HawkesError::Input(format!("scale must be > 0, got {tau}")));
        }
        if tau > horizon {
            return Err(HawkesError::Input(format!("scale {tau} exceeds the record length {horizon}")));
        }
    }
    let max = taus.iter().cloned().fold(0.0, f64::max);
    if horizon < 100.0 * max {
        warn!("record length {horizon} is below 100 times the largest scale {max}; estimates are noisy");
    }
    Ok(())
}

/// `(1/(nτ)) Σ ΔA ΔB` over the `n = ⌊T/τ⌋` complete intervals, with its standard error.
fn covariation(a: &PricePath, b: &PricePath, tau: f64, horizon: f64) -> (f64, f64, usize) {
    let n = (horizon / tau).floor() as usize;
    let grid = || (0..=n).map(|i| i as f64 * tau);
    let pa = a.sample(grid());
    let pb = b.sample(grid());
    let prods: Vec<f64> = (0..n).map(|i| ((pa[i + 1] - pa[i]) * (pb[i + 1] - pb[i])) as f64).collect();
    let span = n as f64 * tau;
    let scale = a.tick * b.tick;
    let value = scale * prods.iter().sum::<f64>() / span;
    let se = if n > 1 {
        let (_, var) = crate::numerics::mean_var(&prods);
        scale * (n as f64 * var).sqrt() / span
    } else {
        f64::NAN
    };
    (value, se, n)
}

fn scale_curve(a: &PricePath, b: &PricePath, taus: &[f64], horizon: f64) -> Result<ScaleCurve> {
    check_scales(taus, horizon)?;
    let rows: Vec<_> = taus.par_iter().map(|&tau| covariation(a, b, tau, horizon)).collect();
    Ok(ScaleCurve {
        taus: taus.to_vec(),
        values: rows.iter().map(|r| r.0).collect(),
        std_errors: rows.iter().map(|r| r.1).collect(),
        intervals: rows.iter().map(|r| r.2).collect(),
    })
}

/// Signature plot `C(τ) = (1/T) Σ_i (P_{(i+1)τ} − P_{iτ})²` on `[0, horizon]`.
/// The sum runs over complete intervals and is normalized by their span.
pub fn signature_plot(path: &PricePath, taus: &[f64], horizon: f64) -> Result<SignatureCurve> {
    scale_curve(path, path, taus, horizon)
}

/// Realized covariance of τ-returns of two assets sampled on a common clock.
pub fn epps_covariation(a: &PricePath, b: &PricePath, taus: &[f64], horizon: f64) -> Result<ScaleCurve> {
    scale_curve(a, b, taus, horizon)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ReflexivityMethod {
    MleExponential,
    MlePowerLaw,
    WienerHopf,
    VarianceRatio,
}

impl ReflexivityMethod {
    pub const ALL: [ReflexivityMethod; 4] = [Self::MleExponential, Self::MlePowerLaw, Self::WienerHopf, Self::VarianceRatio];

    pub fn label(self) -> &'static str {
        match self {
            Self::MleExponential => "mle-exponential",
            Self::MlePowerLaw => "mle-power-law",
            Self::WienerHopf => "wiener-hopf",
            Self::VarianceRatio => "variance-ratio",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|m| m.label() == s)
            .ok_or_else(|| HawkesError::Input(format!("unknown reflexivity method {s:?}")))
    }
}

/// Scales are expressed relative to the record so the report is invariant
/// under a uniform rescaling of time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReflexivityConfig {
    pub methods: Vec<ReflexivityMethod>,
    /// Number of count windows for the variance ratio.
    pub variance_windows: usize,
    /// Wiener–Hopf kernel support in mean inter-event times.
    pub support_events: f64,
    pub quadrature_nodes: usize,
}

impl Default for ReflexivityConfig {
    fn default() -> Self {
        Self { methods: ReflexivityMethod::ALL.to_vec(), variance_windows: 100, support_events: 100.0, quadrature_nodes: 64 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReflexivityRow {
    pub method: ReflexivityMethod,
    pub estimate: f64,
    pub std_error: Option<f64>,
    pub note: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReflexivityReport {
    pub rows: Vec<ReflexivityRow>,
    /// Some estimate exceeds [`CRITICALITY_FLAG`].
    pub near_critical: bool,
    pub events: usize,
    pub warnings: Vec<String>,
}

impl ReflexivityReport {
    pub fn get(&self, method: ReflexivityMethod) -> Option<&ReflexivityRow> {
        self.rows.iter().find(|r| r.method == method)
    }

    /// `method,estimate,stderr,note` rows.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "method,estimate,stderr,note")?;
        for r in &self.rows {
            let se = r.std_error.map(|s| format!("{s:.6e}")).unwrap_or_default();
            let note = r.note.as_deref().unwrap_or("").replace(',', ";");
            writeln!(w, "{},{:.8},{se},{note}", r.method.label(), r.estimate)?;
        }
        Ok(())
    }
}

/// Side-by-side branching-ratio estimates for a 1D stream.
pub fn reflexivity_report(events: &EventSequence, cfg: &ReflexivityConfig) -> Result<ReflexivityReport> {
    if events.dim() != 1 {
        return Err(HawkesError::Input("reflexivity report needs a 1D stream".into()));
    }
    if events.is_empty() {
        return Err(HawkesError::DegenerateData("no events".into()));
    }
    let mut rows = Vec::new();
    let mut warnings = Vec::new();
    for &method in &cfg.methods {
        let row = match method {
            ReflexivityMethod::MleExponential => {
                let fit = fit_mle(events, &MleConfig::exponential(crate::estimate::BetaMode::Free))?;
                warnings.extend(fit.warnings.iter().map(|w| format!("{}: {w}", method.label())));
                ReflexivityRow {
                    method,
                    estimate: fit.branching_ratio(),
                    std_error: fit.parameter("alpha[0][0]").and_then(|p| p.std_error),
                    note: Some("exponential parametrization is biased when the true kernel has a long tail".into()),
                }
            }
            ReflexivityMethod::MlePowerLaw => {
                let fit = fit_mle(events, &MleConfig::power_law())?;
                warnings.extend(fit.warnings.iter().map(|w| format!("{}: {w}", method.label())));
                ReflexivityRow { method, estimate: fit.branching_ratio(), std_error: None, note: None }
            }
            ReflexivityMethod::WienerHopf => {
                let rate = events.len() as f64 / events.horizon();
                let support = (cfg.support_events / rate).min(0.1 * events.horizon());
                let q = QuadratureConfig::new(support).with_nodes(cfg.quadrature_nodes);
                let fit = fit_wiener_hopf(events, &q)?;
                warnings.extend(fit.warnings.iter().map(|w| format!("{}: {w}", method.label())));
                let norm = fit.model.kernels().integral_matrix()[(0, 0)];
                ReflexivityRow { method, estimate: norm, std_error: None, note: None }
            }
            ReflexivityMethod::VarianceRatio => {
                let window = events.horizon() / cfg.variance_windows as f64;
                let r = branching_ratio_estimate(events, window, Some(cfg.variance_windows))?;
                warnings.extend(r.warnings.iter().map(|w| format!("{}: {w}", method.label())));
                ReflexivityRow {
                    method,
                    estimate: r.estimate,
                    std_error: Some(r.std_error),
                    note: r.clamped.then(|| "clamped to [0, 1]".to_string()),
                }
            }
        };
        rows.push(row);
    }
    let near_critical = rows.iter().any(|r| r.estimate > CRITICALITY_FLAG);
    if near_critical {
        warnings.push(format!("branching ratio above {CRITICALITY_FLAG}: the stream is close to criticality"));
    }
    Ok(ReflexivityReport { rows, near_critical, events: events.len(), warnings })
}

/// Instantaneous impact `f(v) = k v^a`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ImpactFunction {
    pub scale: f64,
    pub exponent: f64,
}

impl Default for ImpactFunction {
    fn default() -> Self {
        Self { scale: 1.0, exponent: 1.0 }
    }
}

impl ImpactFunction {
    pub fn eval(&self, v: f64) -> f64 {
        if v <= 0.0 {
            0.0
        } else {
            self.scale * v.powf(self.exponent)
        }
    }
}

/// Impact model: the price components cross-excite each other through the
/// mean-reversion kernel `φ^{(s)}`; the meta-order adds `f(r_t)` directly to
/// the up intensity and `C φ^{(s)}/||φ^{(s)}|| ⋆ f(r)` to the down intensity.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HimConfig {
    pub kernel: Kernel,
    pub impact: ImpactFunction,
    /// Contrarian ratio `C ∈ [0, 1]`.
    pub contrarian: f64,
    pub baseline: f64,
}

impl HimConfig {
    pub fn new(kernel: Kernel, contrarian: f64) -> Result<Self> {
        let cfg = Self { kernel, impact: ImpactFunction::default(), contrarian, baseline: 1.0 };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn with_impact(mut self, impact: ImpactFunction) -> Self {
        self.impact = impact;
        self
    }

    pub fn with_baseline(mut self, baseline: f64) -> Self {
        self.baseline = baseline;
        self
    }

    pub fn validate(&self) -> Result<()> {
        self.kernel.validate()?;
        if self.kernel.is_zero() || !self.kernel.is_non_negative() {
            return Err(HawkesError::InvalidModel("the mean-reversion kernel must be non-negative and non-zero".into()));
        }
        check_radius(self.kernel.integral())?;
        if !(0.0..=1.0).contains(&self.contrarian) {
            return Err(HawkesError::InvalidModel(format!("contrarian ratio must lie in [0, 1], got {}", self.contrarian)));
        }
        let f = self.impact;
        if !(f.scale.is_finite() && f.scale >= 0.0 && f.exponent.is_finite() && f.exponent > 0.0) {
            return Err(HawkesError::InvalidModel(format!("invalid impact function k={} a={}", f.scale, f.exponent)));
        }
        if !(self.baseline.is_finite() && self.baseline >= 0.0) {
            return Err(HawkesError::InvalidModel(format!("baseline must be >= 0, got {}", self.baseline)));
        }
        Ok(())
    }

    /// Norm of the cross-channel kernel `φ^{(x)}`, equal to `C ||φ^{(s)}||`.
    pub fn cross_channel_norm(&self) -> f64 {
        self.contrarian * self.kernel.integral()
    }

    pub fn to_spec_string(&self) -> String {
        format!(
            "hawkes-him v1\nkernel = {}\nimpact = power scale={} exponent={}\ncontrarian = {}\nbaseline = {}\n",
            kernel_to_spec(&self.kernel),
            fmt_f64(self.impact.scale),
            fmt_f64(self.impact.exponent),
            fmt_f64(self.contrarian),
            fmt_f64(self.baseline)
        )
    }

    pub fn from_spec_str(text: &str) -> Result<Self> {
        let doc = KeyValueDoc::parse(text, "hawkes-him v1")?;
        let (kl, kv) = doc.require("kernel")?;
        let kernel = kernel_from_spec(kv, kl)?;
        let (cl, cv) = doc.require("contrarian")?;
        let contrarian = parse_f64(cv, cl)?;
        let impact = match doc.get("impact") {
            None => ImpactFunction::default(),
            Some((line, v)) => {
                let (fam, params) = parse_family(v, line)?;
                if fam != "power" {
                    return Err(HawkesError::Parse { line, message: format!("unknown impact family {fam:?}") });
                }
                let f = ImpactFunction { scale: params.scalar("scale")?, exponent: params.scalar("exponent")? };
                params.finish()?;
                f
            }
        };
        let baseline = match doc.get("baseline") {
            None => 1.0,
            Some((l, v)) => parse_f64(v, l)?,
        };
        if let Some(key) = doc.entries.keys().find(|k| !matches!(k.as_str(), "kernel" | "contrarian" | "impact" | "baseline")) {
            return Err(HawkesError::Parse { line: doc.entries[key].0, message: format!("unknown key {key:?}") });
        }
        let cfg = Self { kernel, impact, contrarian, baseline };
        cfg.validate()?;
        Ok(cfg)
    }
}

/// Piecewise-constant trading rate on `[breaks[0], breaks[last]]`, zero outside.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetaOrderProfile {
    pub breaks: Vec<f64>,
    pub rates: Vec<f64>,
}

impl MetaOrderProfile {
    pub fn new(breaks: Vec<f64>, rates: Vec<f64>) -> Result<Self> {
        if breaks.len() != rates.len() + 1 || rates.is_empty() {
            return Err(HawkesError::Input(format!("{} breaks for {} rates; need one more break than rates", breaks.len(), rates.len())));
        }
        if breaks[0] < 0.0 || breaks.iter().any(|b| !b.is_finite()) || breaks.windows(2).any(|w| w[1] <= w[0]) {
            return Err(HawkesError::Input("breaks must be finite, >= 0 and strictly increasing".into()));
        }
        if rates.iter().any(|r| !(r.is_finite() && *r >= 0.0)) {
            return Err(HawkesError::Input("trading rates must be finite and >= 0".into()));
        }
        Ok(Self { breaks, rates })
    }

    /// Constant rate over `[0, duration]`.
    pub fn constant(rate: f64, duration: f64) -> Result<Self> {
        Self::new(vec![0.0, duration], vec![rate])
    }

    pub fn end(&self) -> f64 {
        *self.breaks.last().unwrap()
    }

    pub fn rate_at(&self, t: f64) -> f64 {
        if t < self.breaks[0] || t >= self.end() {
            return 0.0;
        }
        self.rates[self.breaks.partition_point(|&b| b <= t) - 1]
    }

    /// Total shares traded.
    pub fn volume(&self) -> f64 {
        self.rates.iter().zip(self.breaks.windows(2)).map(|(r, w)| r * (w[1] - w[0])).sum()
    }
}

/// Monte Carlo impact curve `E[P_t]` with and without the meta-order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImpactCurve {
    pub grid: Vec<f64>,
    /// Mean price impact in ticks.
    pub values: Vec<f64>,
    pub std_errors: Vec<f64>,
    /// Mean excess drift `E[λ¹_t − λ²_t]`, i.e. the time derivative of the impact.
    pub drift: Vec<f64>,
    pub drift_std_errors: Vec<f64>,
    pub n_paths: usize,
    /// Instantaneous-impact integral `∫ f(r_t) dt`.
    pub impulse: f64,
}

impl ImpactCurve {
    /// `grid,value,stderr` rows.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "grid,value,stderr")?;
        for k in 0..self.grid.len() {
            writeln!(w, "{},{:.12e},{:.6e}", fmt_f64(self.grid[k]), self.values[k], self.std_errors[k])?;
        }
        Ok(())
    }

    /// `grid,drift,stderr` rows.
    pub fn write_drift_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "grid,drift,stderr")?;
        for k in 0..self.grid.len() {
            writeln!(w, "{},{:.12e},{:.6e}", fmt_f64(self.grid[k]), self.drift[k], self.drift_std_errors[k])?;
        }
        Ok(())
    }
}

/// Cap on meta-order-induced events per path.
const MAX_PATH_EVENTS: usize = 10_000_000;

/// Poisson points of rate `rate` on `[a, b)`.
fn poisson_points<R: Rng>(rate: f64, a: f64, b: f64, rng: &mut R, out: &mut Vec<f64>) {
    if rate <= 0.0 {
        return;
    }
    let mut t = a;
    loop {
        t += rng.sample::<f64, _>(Exp1) / rate;
        if t >= b {
            break;
        }
        out.push(t);
    }
}

struct HimPath {
    /// Events induced by the meta-order: `(time, component)`, component 0 = up.
    events: Vec<(f64, usize)>,
}

fn him_path(cfg: &HimConfig, meta: &MetaOrderProfile, horizon: f64, seed: u64, stream: u64) -> Result<HimPath> {
    let mut rng = rng_for(seed, stream);
    let norm = cfg.kernel.integral();
    let offspring = Poisson::new(norm).map_err(|e| HawkesError::InvalidModel(e.to_string()))?;
    let mut queue: Vec<(f64, usize)> = Vec::new();
    let mut pts = Vec::new();
    for (k, &r) in meta.rates.iter().enumerate() {
        let (a, b) = (meta.breaks[k], meta.breaks[k + 1]);
        let nu = cfg.impact.eval(r);
        pts.clear();
        poisson_points(nu, a, b.min(horizon), &mut rng, &mut pts);
        queue.extend(pts.iter().map(|&t| (t, 0)));
        // Down-side immigrants: a Poisson(C ν) stream delayed by lags drawn from φ/||φ||.
        pts.clear();
        poisson_points(cfg.contrarian * nu, a, b.min(horizon), &mut rng, &mut pts);
        for &s in &pts {
            let t = s + sample_lag(&cfg.kernel, &mut rng);
            if t < horizon {
                queue.push((t, 1));
            }
        }
    }
    let mut events = Vec::with_capacity(queue.len());
    while let Some((t, c)) = queue.pop() {
        events.push((t, c));
        if events.len() > MAX_PATH_EVENTS {
            return Err(HawkesError::Explosion { count: events.len() });
        }
        let n: f64 = rng.sample(offspring);
        for _ in 0..n as usize {
            let s = t + sample_lag(&cfg.kernel, &mut rng);
            if s < horizon {
                queue.push((s, 1 - c));
            }
        }
    }
    events.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    Ok(HimPath { events })
}

/// `(φ/||φ|| ⋆ f(r))(t)`.
fn smoothed_impulse(cfg: &HimConfig, meta: &MetaOrderProfile, t: f64) -> f64 {
    let norm = cfg.kernel.integral();
    let cum = |x: f64| if x > 0.0 { cfg.kernel.cumulative(x) } else { 0.0 };
    meta.rates
        .iter()
        .zip(meta.breaks.windows(2))
        .map(|(&r, w)| cfg.impact.eval(r) * (cum(t - w[0]) - cum(t - w[1])))
        .sum::<f64>()
        / norm
}

/// Impact curve on `grid` over `n_paths` Monte Carlo paths.
///
/// Paths with and without the meta-order share their seed. In a linear model
/// the events of the unperturbed run are reproduced exactly in the perturbed
/// one, so the paired difference of prices is the signed count of the extra
/// events triggered by the meta-order; only those are simulated. The drift
/// curve is the mean intensity difference given each path's history, an
/// unbiased and smoother estimate of `dE[P_t]/dt`.
pub fn him_impact_curve(cfg: &HimConfig, meta: &MetaOrderProfile, n_paths: usize, seed: u64, grid: &[f64]) -> Result<ImpactCurve> {
    cfg.validate()?;
    if n_paths < 2 {
        return Err(HawkesError::Input("need at least 2 Monte Carlo paths".into()));
    }
    if grid.is_empty() || grid.iter().any(|t| !(t.is_finite() && *t >= 0.0)) || grid.windows(2).any(|w| w[1] <= w[0]) {
        return Err(HawkesError::Input("grid must be non-empty, non-negative and strictly increasing".into()));
    }
    let horizon = *grid.last().unwrap() * (1.0 + 1e-12) + f64::MIN_POSITIVE;
    let deterministic: Vec<f64> = grid
        .iter()
        .map(|&t| cfg.impact.eval(meta.rate_at(t)) - cfg.contrarian * smoothed_impulse(cfg, meta, t))
        .collect();
    let per_path: Vec<(Vec<f64>, Vec<f64>)> = (0..n_paths as u64)
        .into_par_iter()
        .map(|p| {
            let path = him_path(cfg, meta, horizon, seed, p)?;
            let mut price = Vec::with_capacity(grid.len());
            let mut drift = Vec::with_capacity(grid.len());
            let mut k = 0;
            let mut level = 0i64;
            for (g, &t) in grid.iter().enumerate() {
                while k < path.events.len() && path.events[k].0 <= t {
                    level += if path.events[k].1 == 0 { 1 } else { -1 };
                    k += 1;
                }
                price.push(level as f64);
                // λ¹ gains φ(t − s) from down events, λ² from up events.
                let feedback: f64 = path.events[..k]
                    .iter()
                    .map(|&(s, c)| {
                        let v = cfg.kernel.eval(t - s);
                        if c == 0 {
                            -v
                        } else {
                            v
                        }
                    })
                    .sum();
                drift.push(deterministic[g] + feedback);
            }
            Ok((price, drift))
        })
        .collect::<Result<_>>()?;
    let n = n_paths as f64;
    let stats = |pick: &dyn Fn(&(Vec<f64>, Vec<f64>)) -> &Vec<f64>, g: usize| {
        let xs: Vec<f64> = per_path.iter().map(|p| pick(p)[g]).collect();
        let (m, v) = crate::numerics::mean_var(&xs);
        (m, (v / n).sqrt())
    };
    let mut curve = ImpactCurve {
        grid: grid.to_vec(),
        values: Vec::new(),
        std_errors: Vec::new(),
        drift: Vec::new(),
        drift_std_errors: Vec::new(),
        n_paths,
        impulse: meta.rates.iter().zip(meta.breaks.windows(2)).map(|(&r, w)| cfg.impact.eval(r) * (w[1] - w[0])).sum(),
    };
    for g in 0..grid.len() {
        let (m, s) = stats(&|p| &p.0, g);
        curve.values.push(m);
        curve.std_errors.push(s);
        let (m, s) = stats(&|p| &p.1, g);
        curve.drift.push(m);
        curve.drift_std_errors.push(s);
    }
    Ok(curve)
}

/// Long-time impact `F (1 − C) / (1 + ||φ||)` for total instantaneous impact `F`.
pub fn him_permanent_impact(cfg: &HimConfig, meta: &MetaOrderProfile) -> f64 {
    let f: f64 = meta.rates.iter().zip(meta.breaks.windows(2)).map(|(&r, w)| cfg.impact.eval(r) * (w[1] - w[0])).sum();
    f * (1.0 - cfg.contrarian) / (1.0 + cfg.kernel.integral())
}

/// Least-squares slope of `ln y` against `ln x`.
pub fn log_log_slope(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() || x.len() < 2 || x.iter().chain(y).any(|v| !(*v > 0.0)) {
        return Err(HawkesError::Input("log-log slope needs at least 2 positive points".into()));
    }
    let lx: Vec<f64> = x.iter().map(|v| v.ln()).collect();
    let ly: Vec<f64> = y.iter().map(|v| v.ln()).collect();
    let n = lx.len() as f64;
    let mx = lx.iter().sum::<f64>() / n;
    let my = ly.iter().sum::<f64>() / n;
    let sxy: f64 = lx.iter().zip(&ly).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = lx.iter().map(|a| (a - mx).powi(2)).sum();
    Ok(sxy / sxx)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::analytics::diffusion_coefficients;
    use crate::model::HawkesModel;
    use crate::simulate::{simulate_thinning, SimConfig};
    use proptest::prelude::*;

    #[test]
    fn trivial_paths() {
        let p = price_from_events(&[], &[], 100, 0.01).unwrap();
        assert_eq!(p.final_ticks(), 100);
        assert_eq!(p.ticks_at(5.0), 100);
        let p = price_from_events(&[1.0, 2.0, 3.0], &[1.5], 0, 1.0).unwrap();
        assert_eq!(p.final_ticks(), 2);
        assert_eq!(p.ticks_at(1.6), 0);
        assert_eq!(p.ticks_at(0.5), 0);
        assert_eq!(p.ticks_at(2.0), 1);
        assert!(price_from_events(&[2.0, 1.0], &[], 0, 1.0).is_err());
        assert!(price_from_events(&[1.0], &[], 0, 0.0).is_err());
    }

    #[test]
    fn simulated_path_matches_cumulative_sum() {
        let m = HawkesModel::symmetric_bivariate(1.0, Kernel::Zero, Kernel::exponential(0.4, 2.0).unwrap()).unwrap();
        let ev = simulate_thinning(&m, &SimConfig::new(9, 200.0)).unwrap();
        let path = PricePath::from_sequence(&ev, 0, 1, 10, 0.5).unwrap();
        let mut level = 10i64;
        for (k, (t, c)) in ev.iter().enumerate() {
            level += if c == 0 { 1 } else { -1 };
            assert_eq!(path.levels[k], level);
            assert_eq!(path.times[k], t);
        }
        let counts = ev.counts();
        assert_eq!(path.final_ticks() - 10, counts[0] as i64 - counts[1] as i64);
    }

    proptest! {
        #[test]
        fn count_conservation(mut up in proptest::collection::vec(0.0f64..100.0, 0..40),
                              mut down in proptest::collection::vec(0.0f64..100.0, 0..40), p0 in -50i64..50) {
            up.sort_by(f64::total_cmp);
            down.sort_by(f64::total_cmp);
            let p = price_from_events(&up, &down, p0, 1.0).unwrap();
            prop_assert_eq!(p.final_ticks() - p0, up.len() as i64 - down.len() as i64);
            prop_assert!(p.times.windows(2).all(|w| w[0] <= w[1]));
            prop_assert!(p.levels.iter().zip(std::iter::once(&p0).chain(&p.levels)).all(|(a, b)| (a - b).abs() == 1));
        }
    }

    #[test]
    fn signature_hand_value() {
        // Jumps +1 at 0.5, +1 at 1.5, -1 at 2.5 on [0, 4], τ = 1: increments 1, 1, -1, 0.
        let p = price_from_events(&[0.5, 1.5], &[2.5], 0, 2.0).unwrap();
        let c = signature_plot(&p, &[1.0, 2.0], 4.0).unwrap();
        assert!((c.values[0] - 4.0 * 3.0 / 4.0).abs() < 1e-12);
        // τ = 2: increments 2, -1.
        assert!((c.values[1] - 4.0 * 5.0 / 4.0).abs() < 1e-12);
        assert!(signature_plot(&p, &[5.0], 4.0).is_err());
        assert!(signature_plot(&p, &[0.0], 4.0).is_err());
    }

    #[test]
    fn poisson_walk_signature_is_flat() {
        let m = HawkesModel::new(vec![1.0, 1.0], crate::kernels::KernelMatrix::zeros(2)).unwrap();
        let ev = simulate_thinning(&m, &SimConfig::new(3, 20000.0)).unwrap();
        let p = PricePath::from_sequence(&ev, 0, 1, 0, 1.0).unwrap();
        let taus = [0.1, 0.5, 1.0, 5.0, 20.0, 100.0];
        let c = signature_plot(&p, &taus, ev.horizon()).unwrap();
        for k in 0..taus.len() {
            assert!((c.values[k] - 2.0).abs() < 3.0 * c.std_errors[k] + 0.02, "{c:?}");
        }
    }

    #[test]
    fn mean_reverting_signature_decreases_to_diffusion_variance() {
        let m = HawkesModel::symmetric_bivariate(1.0, Kernel::Zero, Kernel::exponential(0.6, 1.0).unwrap()).unwrap();
        let ev = simulate_thinning(&m, &SimConfig::new(4, 50000.0)).unwrap();
        let p = PricePath::from_sequence(&ev, 0, 1, 0, 1.0).unwrap();
        let taus = [0.05, 0.5, 2.0, 10.0, 50.0];
        let c = signature_plot(&p, &taus, ev.horizon()).unwrap();
        assert!(c.values.windows(2).all(|w| w[1] < w[0]), "{c:?}");
        let dm = diffusion_coefficients(&m).unwrap();
        let cov = &dm * dm.transpose();
        let limit = cov[(0, 0)] + cov[(1, 1)] - 2.0 * cov[(0, 1)];
        assert!((c.values[4] / limit - 1.0).abs() < 0.1, "{} vs {limit}", c.values[4]);
        assert!(c.values[0] / c.values[4] > 1.5);
    }

    #[test]
    fn epps_independent_and_hand_value() {
        let a = price_from_events(&[0.5], &[1.5], 0, 1.0).unwrap();
        let b = price_from_events(&[0.7, 1.2], &[], 0, 1.0).unwrap();
        // τ = 1: ΔA = (1, -1), ΔB = (1, 1) → 0; τ = 2: 0 · 2.
        let c = epps_covariation(&a, &b, &[1.0, 2.0], 2.0).unwrap();
        assert_eq!(c.values, vec![0.0, 0.0]);
        let m = HawkesModel::new(vec![1.0; 4], crate::kernels::KernelMatrix::zeros(4)).unwrap();
        let ev = simulate_thinning(&m, &SimConfig::new(5, 20000.0)).unwrap();
        let pa = PricePath::from_sequence(&ev, 0, 1, 0, 1.0).unwrap();
        let pb = PricePath::from_sequence(&ev, 2, 3, 0, 1.0).unwrap();
        let c = epps_covariation(&pa, &pb, &[0.5, 5.0, 50.0], ev.horizon()).unwrap();
        for k in 0..3 {
            assert!(c.values[k].abs() < 3.5 * c.std_errors[k], "{c:?}");
        }
    }

    #[test]
    fn reflexivity_poisson_and_rescaling() {
        let m = HawkesModel::univariate(2.0, Kernel::Zero).unwrap();
        let ev = simulate_thinning(&m, &SimConfig::new(6, 5000.0)).unwrap();
        let cfg = ReflexivityConfig {
            methods: vec![ReflexivityMethod::MleExponential, ReflexivityMethod::WienerHopf, ReflexivityMethod::VarianceRatio],
            ..Default::default()
        };
        let r = reflexivity_report(&ev, &cfg).unwrap();
        for row in &r.rows {
            assert!(row.estimate < 0.1, "{row:?}");
        }
        assert!(!r.near_critical);
        let scaled = reflexivity_report(&ev.rescaled(1000.0).unwrap(), &cfg).unwrap();
        for (a, b) in r.rows.iter().zip(&scaled.rows) {
            assert!((a.estimate - b.estimate).abs() < 1e-3, "{a:?} vs {b:?}");
        }
        let mut csv = Vec::new();
        r.write_csv(&mut csv).unwrap();
        assert!(String::from_utf8(csv).unwrap().starts_with("method,estimate,stderr,note\n"));
    }

    #[test]
    fn reflexivity_power_law_agreement() {
        let m = HawkesModel::univariate(0.5, Kernel::power_law(1.8, 1.0, 2.0).unwrap()).unwrap();
        let ev = simulate_thinning(&m, &SimConfig::new(7, 20000.0).with_burn_in(2000.0)).unwrap();
        let cfg = ReflexivityConfig {
            methods: vec![ReflexivityMethod::WienerHopf, ReflexivityMethod::VarianceRatio],
            variance_windows: 200,
            ..Default::default()
        };
        let r = reflexivity_report(&ev, &cfg).unwrap();
        let wh = r.get(ReflexivityMethod::WienerHopf).unwrap().estimate;
        let vr = r.get(ReflexivityMethod::VarianceRatio).unwrap().estimate;
        assert!((wh - vr).abs() < 0.1, "{r:?}");
        assert!((vr - 0.9).abs() < 0.1, "{r:?}");
    }

    #[test]
    fn near_critical_is_flagged() {
        let m = HawkesModel::univariate(0.05, Kernel::exponential(0.99, 1.0).unwrap()).unwrap();
        let ev = simulate_thinning(&m, &SimConfig::new(8, 20000.0).with_burn_in(5000.0)).unwrap();
        let cfg = ReflexivityConfig { methods: vec![ReflexivityMethod::MleExponential], ..Default::default() };
        let r = reflexivity_report(&ev, &cfg).unwrap();
        assert!(r.near_critical, "{r:?}");
    }

    #[test]
    fn him_spec_round_trip_and_validation() {
        let cfg = HimConfig::new(Kernel::power_law(0.25, 1.0, 0.5).unwrap(), 0.3)
            .unwrap()
            .with_impact(ImpactFunction { scale: 0.5, exponent: 0.6 });
        let back = HimConfig::from_spec_str(&cfg.to_spec_string()).unwrap();
        assert_eq!(back, cfg);
        assert!((cfg.cross_channel_norm() - 0.3 * 0.5).abs() < 1e-12);
        assert!(HimConfig::new(Kernel::exponential(1.2, 1.0).unwrap(), 0.5).is_err());
        assert!(HimConfig::new(Kernel::exponential(0.5, 1.0).unwrap(), 1.5).is_err());
        let bad = "hawkes-him v1\nkernel = exponential alpha=0.5 beta=1\ncontrarian = 0.5\nfoo = 1\n";
        assert!(matches!(HimConfig::from_spec_str(bad), Err(HawkesError::Parse { line: 4, .. })));
    }

    #[test]
    fn meta_order_profile() {
        let m = MetaOrderProfile::new(vec![0.0, 2.0, 5.0], vec![1.0, 0.5]).unwrap();
        assert_eq!(m.rate_at(1.0), 1.0);
        assert_eq!(m.rate_at(3.0), 0.5);
        assert_eq!(m.rate_at(5.0), 0.0);
        assert_eq!(m.rate_at(-1.0), 0.0);
        assert!((m.volume() - 3.5).abs() < 1e-12);
        assert!(MetaOrderProfile::new(vec![0.0, 1.0], vec![-1.0]).is_err());
        assert!(MetaOrderProfile::new(vec![1.0, 0.5], vec![1.0]).is_err());
    }

    fn grid(end: f64, n: usize) -> Vec<f64> {
        (1..=n).map(|k| end * k as f64 / n as f64).collect()
    }

    #[test]
    fn zero_rate_gives_zero_impact() {
        let cfg = HimConfig::new(Kernel::exponential(0.5, 1.0).unwrap(), 0.5).unwrap();
        let meta = MetaOrderProfile::constant(0.0, 10.0).unwrap();
        let c = him_impact_curve(&cfg, &meta, 100, 1, &grid(20.0, 10)).unwrap();
        assert!(c.values.iter().chain(&c.drift).all(|v| *v == 0.0));
    }

    #[test]
    fn contrarian_limits() {
        let k = Kernel::exponential(0.5, 1.0).unwrap();
        let meta = MetaOrderProfile::constant(1.0, 5.0).unwrap();
        let g = grid(60.0, 60);
        for c in [0.0, 0.5, 1.0] {
            let cfg = HimConfig::new(k.clone(), c).unwrap();
            let curve = him_impact_curve(&cfg, &meta, 4000, 2, &g).unwrap();
            let last = *curve.values.last().unwrap();
            let se = *curve.std_errors.last().unwrap();
            let expected = him_permanent_impact(&cfg, &meta);
            assert!((last - expected).abs() < 3.5 * se + 0.02, "C={c}: {last} ± {se} vs {expected}");
            // Rise during execution.
            let rise: Vec<f64> = curve.values[..5].to_vec();
            assert!(rise.windows(2).all(|w| w[1] > w[0] - 3.0 * se), "{rise:?}");
        }
    }

    #[test]
    fn deterministic_for_fixed_seed() {
        let cfg = HimConfig::new(Kernel::exponential(0.5, 1.0).unwrap(), 0.5).unwrap();
        let meta = MetaOrderProfile::constant(1.0, 5.0).unwrap();
        let a = him_impact_curve(&cfg, &meta, 200, 3, &grid(10.0, 5)).unwrap();
        let b = him_impact_curve(&cfg, &meta, 200, 3, &grid(10.0, 5)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn power_law_drift_decay() {
        let gamma = 1.0;
        let cfg = HimConfig::new(Kernel::power_law(0.5, 1.0, gamma).unwrap(), 0.0).unwrap();
        let meta = MetaOrderProfile::constant(500.0, 1.0).unwrap();
        let lags: Vec<f64> = (0..=10).map(|k| 20.0 * 10f64.powf(k as f64 / 10.0)).collect();
        let g: Vec<f64> = lags.iter().map(|l| 1.0 + l).collect();
        let c = him_impact_curve(&cfg, &meta, 4000, 4, &g).unwrap();
        let decay: Vec<f64> = c.drift.iter().map(|d| -d).collect();
        let slope = log_log_slope(&lags, &decay).unwrap();
        assert!((slope + gamma + 1.0).abs() < 0.3, "slope {slope}, {:?}", c.drift);
    }

    #[test]
    fn slope_helper() {
        let x = [1.0, 10.0, 100.0];
        let y: Vec<f64> = x.iter().map(|v: &f64| 3.0 * v.powf(-1.5)).collect();
        assert!((log_log_slope(&x, &y).unwrap() + 1.5).abs() < 1e-12);
    }
}
