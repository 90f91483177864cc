//! Exact sampling of Hawkes event streams: thinning, time change and the
//! cluster (branching) construction.
//!
//! Every run draws from a `ChaCha8` generator keyed by `(seed, stream)`, so
//! ensembles give each path its own independent stream and results do not
//! depend on thread scheduling.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp1, Poisson};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{HawkesError, Result};
use crate::events::{EventSequence, Genealogy};
use crate::kernels::Kernel;
use crate::model::{HawkesModel, MarkImpact, MarkLaw, Transfer};

pub const DEFAULT_MAX_EVENTS: usize = 20_000_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Algorithm {
    Thinning,
    TimeChange,
    Cluster,
}

/// What the thinning sampler keeps of the past.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HistoryTruncation {
    /// Drop events older than the largest kernel effective support
    /// (relative bias below the support tail mass, 1e-6 of the norm).
    EffectiveSupport,
    Full,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub seed: u64,
    /// Generator stream; ensembles use one stream per path.
    pub stream: u64,
    pub horizon: f64,
    /// Simulated but discarded lead-in; output times start at the end of it.
    pub burn_in: f64,
    pub algorithm: Algorithm,
    pub truncation: HistoryTruncation,
    pub max_events: usize,
}

impl SimConfig {
    pub fn new(seed: u64, horizon: f64) -> Self {
        Self {
            seed,
            stream: 0,
            horizon,
            burn_in: 0.0,
            algorithm: Algorithm::Thinning,
            truncation: HistoryTruncation::EffectiveSupport,
            max_events: DEFAULT_MAX_EVENTS,
        }
    }

    pub fn with_algorithm(mut self, algorithm: Algorithm) -> Self {
        self.algorithm = algorithm;
        self
    }

    pub fn with_burn_in(mut self, burn_in: f64) -> Self {
        self.burn_in = burn_in;
        self
    }

    pub fn with_stream(mut self, stream: u64) -> Self {
        self.stream = stream;
        self
    }

    pub fn with_max_events(mut self, max_events: usize) -> Self {
        self.max_events = max_events;
        self
    }

    pub fn with_truncation(mut self, truncation: HistoryTruncation) -> Self {
        self.truncation = truncation;
        self
    }

    fn validate(&self) -> Result<()> {
        if !(self.horizon.is_finite() && self.horizon > 0.0) {
            return Err(HawkesError::Input(format!("horizon must be finite and > 0, got {}", self.horizon)));
        }
        if !(self.burn_in.is_finite() && self.burn_in >= 0.0) {
            return Err(HawkesError::Input(format!("burn-in must be finite and >= 0, got {}", self.burn_in)));
        }
        Ok(())
    }

    fn total_time(&self) -> f64 {
        self.burn_in + self.horizon
    }
}

/// Generator for `(seed, stream)`.
pub fn rng_for(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Output of [`simulate`]; the genealogy is present for the cluster algorithm.
#[derive(Debug, Clone, PartialEq)]
pub struct Simulation {
    pub events: EventSequence,
    pub genealogy: Option<Genealogy>,
}

/// Dispatches on `cfg.algorithm`.
pub fn simulate(model: &HawkesModel, cfg: &SimConfig) -> Result<Simulation> {
    match cfg.algorithm {
        Algorithm::Thinning => Ok(Simulation { events: simulate_thinning(model, cfg)?, genealogy: None }),
        Algorithm::TimeChange => Ok(Simulation { events: simulate_time_change(model, cfg)?, genealogy: None }),
        Algorithm::Cluster => {
            let (events, g) = simulate_cluster(model, cfg)?;
            Ok(Simulation { events, genealogy: Some(g) })
        }
    }
}

/// `n_paths` independent runs; path `p` uses stream `cfg.stream + p`.
pub fn simulate_ensemble(model: &HawkesModel, cfg: &SimConfig, n_paths: usize) -> Result<Vec<Simulation>> {
    (0..n_paths as u64)
        .into_par_iter()
        .map(|p| simulate(model, &cfg.clone().with_stream(cfg.stream.wrapping_add(p))))
        .collect()
}

pub fn sample_mark<R: Rng + ?Sized>(law: &MarkLaw, rng: &mut R) -> f64 {
    match *law {
        MarkLaw::Constant { value } => value,
        MarkLaw::Exponential { mean } => mean * rng.sample::<f64, _>(Exp1),
        MarkLaw::Uniform { low, high } => low + (high - low) * rng.random::<f64>(),
    }
}

/// Draws a lag from the kernel normalized to a probability density.
/// Requires a non-negative, non-zero kernel.
pub fn sample_lag<R: Rng + ?Sized>(kernel: &Kernel, rng: &mut R) -> f64 {
    match kernel {
        Kernel::Zero => f64::INFINITY,
        Kernel::Exponential { beta, .. } => rng.sample::<f64, _>(Exp1) / beta,
        Kernel::SumExponential { terms } => {
            let total: f64 = terms.iter().map(|t| t.alpha).sum();
            let mut u = rng.random::<f64>() * total;
            let mut beta = terms.last().unwrap().beta;
            for t in terms {
                if u < t.alpha {
                    beta = t.beta;
                    break;
                }
                u -= t.alpha;
            }
            rng.sample::<f64, _>(Exp1) / beta
        }
        Kernel::PowerLaw { beta, gamma, .. } => {
            // Inverse of the CDF 1 - (1 + βt)^{-γ}.
            let u: f64 = rng.random();
            ((1.0 - u).powf(-1.0 / gamma) - 1.0) / beta
        }
        Kernel::Piecewise { breaks, levels } => {
            let weights: Vec<f64> = levels.iter().zip(breaks.windows(2)).map(|(l, w)| l.max(0.0) * (w[1] - w[0])).collect();
            let total: f64 = weights.iter().sum();
            let mut u = rng.random::<f64>() * total;
            let mut k = weights.len() - 1;
            for (n, w) in weights.iter().enumerate() {
                if u < *w {
                    k = n;
                    break;
                }
                u -= w;
            }
            breaks[k] + rng.random::<f64>() * (breaks[k + 1] - breaks[k])
        }
    }
}

/// Per-target mark factors `χ^{i,c}(ξ)` for an event of component `c`.
struct MarkFactors {
    law: Option<MarkLaw>,
    impact: Vec<MarkImpact>,
    dim: usize,
}

impl MarkFactors {
    fn new(model: &HawkesModel) -> Self {
        let d = model.dim();
        match model.marks() {
            Some(m) => Self { law: Some(m.law), impact: m.impact.clone(), dim: d },
            None => Self { law: None, impact: vec![MarkImpact::UNIT; d * d], dim: d },
        }
    }

    fn draw<R: Rng + ?Sized>(&self, rng: &mut R) -> Option<f64> {
        self.law.as_ref().map(|l| sample_mark(l, rng))
    }

    fn chi(&self, target: usize, source: usize, mark: Option<f64>) -> f64 {
        match mark {
            Some(xi) => self.impact[target * self.dim + source].eval(xi),
            None => 1.0,
        }
    }
}

struct Recorder {
    times: Vec<f64>,
    comps: Vec<usize>,
    marks: Option<Vec<f64>>,
    max_events: usize,
}

impl Recorder {
    fn new(with_marks: bool, max_events: usize) -> Self {
        Self { times: Vec::new(), comps: Vec::new(), marks: with_marks.then(Vec::new), max_events }
    }

    fn push(&mut self, t: f64, c: usize, mark: Option<f64>) -> Result<()> {
        self.times.push(t);
        self.comps.push(c);
        if let (Some(m), Some(x)) = (self.marks.as_mut(), mark) {
            m.push(x);
        }
        if self.times.len() > self.max_events {
            return Err(HawkesError::Explosion { count: self.times.len() });
        }
        Ok(())
    }

    fn finish(self, dim: usize, cfg: &SimConfig) -> Result<EventSequence> {
        let lo = self.times.partition_point(|t| *t < cfg.burn_in);
        let times = self.times[lo..].iter().map(|t| (t - cfg.burn_in).min(cfg.horizon)).collect();
        EventSequence::new(dim, cfg.horizon, times, self.comps[lo..].to_vec(), self.marks.map(|m| m[lo..].to_vec()))
    }
}

/// Exponential Markov state: one decaying term per (target, source, β).
struct ExpState {
    target: Vec<usize>,
    source: Vec<usize>,
    beta: Vec<f64>,
    jump: Vec<f64>,
    value: Vec<f64>,
}

impl ExpState {
    fn new(model: &HawkesModel) -> Option<Self> {
        let mut s = ExpState { target: vec![], source: vec![], beta: vec![], jump: vec![], value: vec![] };
        for (i, j, k) in model.kernels().iter() {
            for term in k.exp_terms()? {
                s.target.push(i);
                s.source.push(j);
                s.beta.push(term.beta);
                s.jump.push(term.alpha * term.beta);
                s.value.push(0.0);
            }
        }
        Some(s)
    }

    fn decay(&mut self, dt: f64) {
        for (v, b) in self.value.iter_mut().zip(&self.beta) {
            *v *= (-b * dt).exp();
        }
    }

    fn intensities(&self, mu: &[f64], out: &mut [f64]) {
        out.copy_from_slice(mu);
        for (v, &i) in self.value.iter().zip(&self.target) {
            out[i] += v;
        }
    }

    fn excite(&mut self, c: usize, mark: Option<f64>, marks: &MarkFactors) {
        for n in 0..self.value.len() {
            if self.source[n] == c {
                self.value[n] += self.jump[n] * marks.chi(self.target[n], c, mark);
            }
        }
    }
}

fn pick_component<R: Rng + ?Sized>(lambda: &[f64], total: f64, rng: &mut R) -> usize {
    let mut u = rng.random::<f64>() * total;
    for (i, l) in lambda.iter().enumerate() {
        if u < *l {
            return i;
        }
        u -= l;
    }
    lambda.iter().rposition(|l| *l > 0.0).unwrap_or(0)
}

/// Thinning sampler.
///
/// Candidates arrive at the rate of a non-increasing dominating intensity
/// (kernel envelopes, positive parts only) and are accepted with probability
/// `Σλ / M`; the accepted component is drawn proportionally to `λ^i`.
/// Marks, if configured, multiply each event's excitation by `χ(ξ)`.
pub fn simulate_thinning(model: &HawkesModel, cfg: &SimConfig) -> Result<EventSequence> {
    cfg.validate()?;
    let mut rng = rng_for(cfg.seed, cfg.stream);
    let d = model.dim();
    let mu = model.baseline().to_vec();
    let marks = MarkFactors::new(model);
    let mut rec = Recorder::new(marks.law.is_some(), cfg.max_events);
    let t_end = cfg.total_time();
    let mut lambda = vec![0.0; d];

    if let Some(mut state) = ExpState::new(model) {
        // Exponential kernels: intensity decreases between events, so its
        // current value dominates until the next event.
        let mut t = 0.0;
        state.intensities(&mu, &mut lambda);
        let mut bound: f64 = lambda.iter().sum();
        loop {
            if bound <= 0.0 {
                break;
            }
            let dt = rng.sample::<f64, _>(Exp1) / bound;
            t += dt;
            if t > t_end {
                break;
            }
            state.decay(dt);
            state.intensities(&mu, &mut lambda);
            let total: f64 = lambda.iter().sum();
            if rng.random::<f64>() * bound < total {
                let c = pick_component(&lambda, total, &mut rng);
                let mark = marks.draw(&mut rng);
                rec.push(t, c, mark)?;
                state.excite(c, mark, &marks);
                state.intensities(&mu, &mut lambda);
                bound = lambda.iter().sum();
            } else {
                bound = total;
            }
        }
        return rec.finish(d, cfg);
    }

    let km = model.kernels();
    let positive = model.transfer() == Transfer::PositivePart;
    let support = match cfg.truncation {
        HistoryTruncation::EffectiveSupport => km.effective_support(),
        HistoryTruncation::Full => f64::INFINITY,
    };
    // history entries: time, component, per-target mark factors
    let mut hist_t: Vec<f64> = Vec::new();
    let mut hist_c: Vec<usize> = Vec::new();
    let mut hist_chi: Vec<f64> = Vec::new();
    let mut start = 0usize;
    let mu_bound: f64 = mu.iter().sum();
    let mut bound = mu_bound;
    let mut t = 0.0;
    loop {
        if bound <= 0.0 {
            break;
        }
        t += rng.sample::<f64, _>(Exp1) / bound;
        if t > t_end {
            break;
        }
        while start < hist_t.len() && t - hist_t[start] > support {
            start += 1;
        }
        let mut next_bound = mu_bound;
        lambda.copy_from_slice(&mu);
        for n in start..hist_t.len() {
            let lag = t - hist_t[n];
            let c = hist_c[n];
            for (i, l) in lambda.iter_mut().enumerate() {
                let k = km.get(i, c);
                let chi = hist_chi[n * d + i];
                *l += chi * k.eval(lag);
                next_bound += chi * k.envelope(lag);
            }
        }
        if positive {
            for l in lambda.iter_mut() {
                *l = l.max(0.0);
            }
        }
        let total: f64 = lambda.iter().sum();
        if rng.random::<f64>() * bound < total {
            let c = pick_component(&lambda, total, &mut rng);
            let mark = marks.draw(&mut rng);
            rec.push(t, c, mark)?;
            hist_t.push(t);
            hist_c.push(c);
            for i in 0..d {
                let chi = marks.chi(i, c, mark);
                hist_chi.push(chi);
                next_bound += chi * km.get(i, c).envelope(0.0);
            }
        }
        bound = next_bound;
        // Compact the pruned prefix occasionally.
        if start > 4096 && start * 2 > hist_t.len() {
            hist_t.drain(..start);
            hist_c.drain(..start);
            hist_chi.drain(..start * d);
            start = 0;
        }
    }
    rec.finish(d, cfg)
}

/// Marked simulation: thinning with per-event boosts. Requires a mark law.
pub fn simulate_marked(model: &HawkesModel, cfg: &SimConfig) -> Result<EventSequence> {
    if model.marks().is_none() {
        return Err(HawkesError::InvalidModel("marked simulation needs a mark law".into()));
    }
    let r = model.effective_branching_ratio()?;
    if r >= 1.0 {
        log::warn!("effective branching ratio {r:.4} >= 1 with marks; the event cap will stop the run");
    }
    simulate_thinning(model, cfg)
}

/// Time-change sampler for (sums of) exponential kernels.
///
/// Between events the compensator is available in closed form; each
/// inter-event time solves `F(τ) = E` with `E ~ Exp(1)`.
pub fn simulate_time_change(model: &HawkesModel, cfg: &SimConfig) -> Result<EventSequence> {
    cfg.validate()?;
    let mut state = ExpState::new(model).ok_or_else(|| {
        HawkesError::UnsupportedFamily("time-change sampling requires exponential or sum-of-exponential kernels".into())
    })?;
    let mut rng = rng_for(cfg.seed, cfg.stream);
    let d = model.dim();
    let mu = model.baseline().to_vec();
    let mu_tot: f64 = mu.iter().sum();
    let marks = MarkFactors::new(model);
    let mut rec = Recorder::new(marks.law.is_some(), cfg.max_events);
    let t_end = cfg.total_time();
    let mut lambda = vec![0.0; d];
    let mut t = 0.0;
    loop {
        let e: f64 = rng.sample(Exp1);
        let excess: f64 = state.value.iter().zip(&state.beta).map(|(v, b)| v / b).sum();
        if mu_tot == 0.0 && excess <= e {
            break;
        }
        let f = |tau: f64| -> (f64, f64) {
            let mut v = mu_tot * tau;
            let mut dv = mu_tot;
            for (s, b) in state.value.iter().zip(&state.beta) {
                let decay = (-b * tau).exp();
                v -= s * (-b * tau).exp_m1() / b;
                dv += s * decay;
            }
            (v, dv)
        };
        // F is increasing and concave: Newton from the left stays below the root.
        let mut tau = e / (mu_tot + state.value.iter().sum::<f64>());
        let mut lo = tau;
        let mut hi = if mu_tot > 0.0 { e / mu_tot } else { f64::INFINITY };
        for _ in 0..200 {
            let (v, dv) = f(tau);
            let r = v - e;
            if r.abs() <= 1e-14 * e.max(1.0) {
                break;
            }
            if r < 0.0 {
                lo = lo.max(tau);
            } else {
                hi = hi.min(tau);
            }
            let mut next = tau - r / dv;
            if !(next > lo && next < hi) || !next.is_finite() {
                next = if hi.is_finite() { 0.5 * (lo + hi) } else { 2.0 * lo.max(1e-300) };
            }
            if next == tau {
                break;
            }
            tau = next;
        }
        t += tau;
        if t > t_end {
            break;
        }
        state.decay(tau);
        state.intensities(&mu, &mut lambda);
        let total: f64 = lambda.iter().sum();
        let c = pick_component(&lambda, total, &mut rng);
        let mark = marks.draw(&mut rng);
        rec.push(t, c, mark)?;
        state.excite(c, mark, &marks);
    }
    rec.finish(d, cfg)
}

/// Cluster (branching) sampler with genealogy.
///
/// Immigrants arrive as homogeneous Poisson streams of rate `μ^i`; an event
/// of component `j` begets `Poisson(||φ^{ij}|| χ^{ij}(ξ))` children of
/// component `i`, placed at lags drawn from the normalized kernel.
/// Children whose parent falls in the burn-in keep their generation but
/// lose the parent link.
pub fn simulate_cluster(model: &HawkesModel, cfg: &SimConfig) -> Result<(EventSequence, Genealogy)> {
    cfg.validate()?;
    if model.transfer() != Transfer::Identity || !model.kernels().is_non_negative() {
        return Err(HawkesError::InvalidModel("cluster sampling requires a linear model with non-negative kernels".into()));
    }
    let mut rng = rng_for(cfg.seed, cfg.stream);
    let d = model.dim();
    let km = model.kernels();
    let norms = km.norm_matrix()?;
    let marks = MarkFactors::new(model);
    let t_end = cfg.total_time();

    let mut time: Vec<f64> = Vec::new();
    let mut comp: Vec<usize> = Vec::new();
    let mut mark: Vec<Option<f64>> = Vec::new();
    let mut parent: Vec<Option<usize>> = Vec::new();
    let mut generation: Vec<u32> = Vec::new();

    let poisson = |lam: f64, rng: &mut ChaCha8Rng| -> u64 {
        if lam <= 0.0 {
            0
        } else {
            Poisson::new(lam).map(|p| p.sample(rng) as u64).unwrap_or(0)
        }
    };

    for (i, &m) in model.baseline().iter().enumerate() {
        let n = poisson(m * t_end, &mut rng);
        for _ in 0..n {
            time.push(rng.random::<f64>() * t_end);
            comp.push(i);
            mark.push(marks.draw(&mut rng));
            parent.push(None);
            generation.push(0);
        }
    }
    let mut k = 0;
    while k < time.len() {
        let (tk, ck, xk, gk) = (time[k], comp[k], mark[k], generation[k]);
        for i in 0..d {
            let lam = norms[(i, ck)] * marks.chi(i, ck, xk);
            let n = poisson(lam, &mut rng);
            for _ in 0..n {
                let tc = tk + sample_lag(km.get(i, ck), &mut rng);
                // the mark is drawn regardless so the stream does not depend on the cut
                let xc = marks.draw(&mut rng);
                if tc <= t_end {
                    time.push(tc);
                    comp.push(i);
                    mark.push(xc);
                    parent.push(Some(k));
                    generation.push(gk + 1);
                    if time.len() > cfg.max_events {
                        return Err(HawkesError::Explosion { count: time.len() });
                    }
                }
            }
        }
        k += 1;
    }

    let mut order: Vec<usize> = (0..time.len()).filter(|&n| time[n] >= cfg.burn_in).collect();
    order.sort_by(|&a, &b| time[a].total_cmp(&time[b]).then(comp[a].cmp(&comp[b])).then(a.cmp(&b)));
    let mut new_index = vec![usize::MAX; time.len()];
    for (pos, &n) in order.iter().enumerate() {
        new_index[n] = pos;
    }
    let times: Vec<f64> = order.iter().map(|&n| (time[n] - cfg.burn_in).min(cfg.horizon)).collect();
    let comps: Vec<usize> = order.iter().map(|&n| comp[n]).collect();
    let marks_out = marks.law.map(|_| order.iter().map(|&n| mark[n].unwrap_or(0.0)).collect());
    let genealogy = Genealogy {
        parent: order
            .iter()
            .map(|&n| parent[n].and_then(|p| (new_index[p] != usize::MAX).then_some(new_index[p])))
            .collect(),
        generation: order.iter().map(|&n| generation[n]).collect(),
    };
    Ok((EventSequence::new(d, cfg.horizon, times, comps, marks_out)?, genealogy))
}

/// Total progeny (including the root) of independent 1D clusters.
///
/// Uses the same offspring law as [`simulate_cluster`] on an unbounded
/// horizon; clusters larger than `cap` are truncated at `cap`.
pub fn cluster_sizes(model: &HawkesModel, n_clusters: usize, root: usize, seed: u64, cap: usize) -> Result<Vec<usize>> {
    let norms = model.effective_norm_matrix()?;
    let d = model.dim();
    let mut rng = rng_for(seed, 0);
    let mut out = Vec::with_capacity(n_clusters);
    let dists: Vec<Option<Poisson<f64>>> = (0..d * d).map(|n| Poisson::new(norms[(n / d, n % d)]).ok()).collect();
    for _ in 0..n_clusters {
        let mut pending = vec![root];
        let mut size = 0usize;
        while let Some(c) = pending.pop() {
            size += 1;
            if size >= cap {
                break;
            }
            for i in 0..d {
                if let Some(p) = &dists[i * d + c] {
                    let n = p.sample(&mut rng) as usize;
                    pending.extend(std::iter::repeat_n(i, n));
                }
            }
        }
        out.push(size);
    }
    Ok(out)
}
