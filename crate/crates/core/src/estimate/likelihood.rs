//! Point-process log-likelihood
//! `log L = Σ_m log λ^{k_m}(t_m) − Σ_i ∫ λ^i`.
//!
//! Intensities are predictable: simultaneous events do not excite each other.

use serde::{Deserialize, Serialize};

use crate::error::{HawkesError, Result};
use crate::events::EventSequence;
use crate::model::{HawkesModel, Transfer};
use crate::simulate::HistoryTruncation;

/// Start of the scored window; earlier events act as history only.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EdgeWindow {
    /// Score the whole record.
    None,
    /// Skip one effective kernel support (capped at a tenth of the record).
    KernelSupport,
    /// Skip everything before this time.
    Start(f64),
}

impl EdgeWindow {
    pub fn start(&self, model: &HawkesModel, horizon: f64) -> f64 {
        match *self {
            EdgeWindow::None => 0.0,
            EdgeWindow::KernelSupport => model.kernels().effective_support().min(0.1 * horizon),
            EdgeWindow::Start(t) => t.clamp(0.0, horizon),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LikelihoodPath {
    /// Markov recursion for exponential families, direct sum otherwise.
    Auto,
    /// `O(M·D)` recursion; exponential families only.
    Recursive,
    /// Pairwise sum, optionally truncated at the kernel effective support.
    Direct(HistoryTruncation),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LogLikelihood {
    /// `-inf` when the intensity vanishes at an event.
    pub value: f64,
    /// Index of the first event with non-positive intensity, if any.
    pub zero_intensity_at: Option<usize>,
    pub window_start: f64,
}

/// Exact log-likelihood over the whole record.
pub fn log_likelihood(model: &HawkesModel, events: &EventSequence) -> Result<LogLikelihood> {
    log_likelihood_with(model, events, EdgeWindow::None, LikelihoodPath::Auto)
}

pub fn log_likelihood_with(model: &HawkesModel, events: &EventSequence, window: EdgeWindow, path: LikelihoodPath) -> Result<LogLikelihood> {
    if model.marks().is_some() {
        return Err(HawkesError::UnsupportedFamily("marked likelihoods are not supported".into()));
    }
    if model.transfer() != Transfer::Identity {
        return Err(HawkesError::UnsupportedFamily("likelihood requires the identity transfer".into()));
    }
    if events.dim() != model.dim() {
        return Err(HawkesError::Input(format!("events have dimension {}, model {}", events.dim(), model.dim())));
    }
    let t0 = window.start(model, events.horizon());
    let exp = model.kernels().is_exponential_family();
    match path {
        LikelihoodPath::Recursive if !exp => {
            Err(HawkesError::UnsupportedFamily("recursive likelihood needs exponential kernels".into()))
        }
        LikelihoodPath::Recursive => Ok(recursive(model, events, t0)),
        LikelihoodPath::Auto if exp => Ok(recursive(model, events, t0)),
        LikelihoodPath::Auto => Ok(direct(model, events, t0, HistoryTruncation::EffectiveSupport)),
        LikelihoodPath::Direct(tr) => Ok(direct(model, events, t0, tr)),
    }
}

fn compensator(model: &HawkesModel, events: &EventSequence, t0: f64) -> f64 {
    let t_end = events.horizon();
    let km = model.kernels();
    let mut c: f64 = model.baseline().iter().map(|m| m * (t_end - t0)).sum();
    for (t, j) in events.iter() {
        for i in 0..model.dim() {
            let k = km.get(i, j);
            c += k.cumulative(t_end - t) - k.cumulative(t0 - t);
        }
    }
    c
}

/// Flattened exponential terms `α_k β_k e^{-β_k t}` from `source` onto `target`.
#[derive(Debug, Clone, Default)]
pub(crate) struct TermSet {
    pub target: Vec<usize>,
    pub source: Vec<usize>,
    pub alpha: Vec<f64>,
    pub beta: Vec<f64>,
}

impl TermSet {
    pub fn from_model(model: &HawkesModel) -> Option<Self> {
        let mut ts = TermSet::default();
        for (i, j, k) in model.kernels().iter() {
            for term in k.exp_terms()? {
                ts.push(i, j, term.alpha, term.beta);
            }
        }
        Some(ts)
    }

    pub fn push(&mut self, target: usize, source: usize, alpha: f64, beta: f64) {
        self.target.push(target);
        self.source.push(source);
        self.alpha.push(alpha);
        self.beta.push(beta);
    }

    pub fn len(&self) -> usize {
        self.alpha.len()
    }
}

/// Derivatives of the log-likelihood.
#[derive(Debug, Clone)]
pub(crate) struct ExpGradient {
    pub mu: Vec<f64>,
    pub alpha: Vec<f64>,
    pub beta: Vec<f64>,
}

#[derive(Debug, Clone)]
pub(crate) struct ExpEvaluation {
    pub log_intensity: f64,
    pub baseline_compensator: f64,
    pub term_compensator: f64,
    pub zero_at: Option<usize>,
    pub gradient: Option<ExpGradient>,
}

impl ExpEvaluation {
    pub fn value(&self) -> f64 {
        if self.zero_at.is_some() {
            f64::NEG_INFINITY
        } else {
            self.log_intensity - self.baseline_compensator - self.term_compensator
        }
    }
}

/// Recursive evaluation over exponential terms, optionally with the gradient.
///
/// `R_k(t) = Σ e^{-β_k (t - t_n)}` and `S_k(t) = Σ (t - t_n) e^{-β_k (t - t_n)}`
/// over source events strictly before `t`.
pub(crate) fn eval_exp_terms(mu: &[f64], terms: &TermSet, events: &EventSequence, t0: f64, gradient: bool) -> ExpEvaluation {
    let d = mu.len();
    let nk = terms.len();
    let by_source: Vec<Vec<usize>> = (0..d).map(|j| (0..nk).filter(|&q| terms.source[q] == j).collect()).collect();
    let by_target: Vec<Vec<usize>> = (0..d).map(|i| (0..nk).filter(|&q| terms.target[q] == i).collect()).collect();
    let jump: Vec<f64> = (0..nk).map(|q| terms.alpha[q] * terms.beta[q]).collect();
    let mut r = vec![0.0; nk];
    let mut s = vec![0.0; nk];
    let mut g_mu = vec![0.0; d];
    let mut g_a = vec![0.0; nk];
    let mut g_b = vec![0.0; nk];
    let times = events.times();
    let comps = events.components();
    let t_end = events.horizon();
    let mut ll = 0.0;
    let mut zero_at = None;
    let mut term_comp = 0.0;
    let mut last = 0.0;
    let mut m = 0;
    while m < times.len() {
        let t = times[m];
        let dt = t - last;
        if dt > 0.0 {
            for q in 0..nk {
                let e = (-terms.beta[q] * dt).exp();
                if gradient {
                    s[q] = e * (s[q] + dt * r[q]);
                }
                r[q] *= e;
            }
            last = t;
        }
        let mut end = m;
        while end < times.len() && times[end] == t {
            end += 1;
        }
        if t >= t0 && zero_at.is_none() {
            for (n, &c) in comps.iter().enumerate().take(end).skip(m) {
                let lam = mu[c] + by_target[c].iter().map(|&q| jump[q] * r[q]).sum::<f64>();
                if lam <= 0.0 {
                    zero_at = Some(n);
                    break;
                }
                ll += lam.ln();
                if gradient {
                    let inv = 1.0 / lam;
                    g_mu[c] += inv;
                    for &q in &by_target[c] {
                        g_a[q] += terms.beta[q] * r[q] * inv;
                        g_b[q] += terms.alpha[q] * (r[q] - terms.beta[q] * s[q]) * inv;
                    }
                }
            }
        }
        for &c in &comps[m..end] {
            let a = (t0 - t).max(0.0);
            let b = t_end - t;
            for &q in &by_source[c] {
                r[q] += 1.0;
                let (al, be) = (terms.alpha[q], terms.beta[q]);
                let ea = (-be * a).exp();
                let eb = (-be * b).exp();
                term_comp += al * (ea - eb);
                if gradient {
                    g_a[q] -= ea - eb;
                    g_b[q] -= al * (b * eb - a * ea);
                }
            }
        }
        m = end;
    }
    let span = t_end - t0;
    let baseline_comp: f64 = mu.iter().map(|m| m * span).sum();
    if gradient {
        for g in g_mu.iter_mut() {
            *g -= span;
        }
    }
    ExpEvaluation {
        log_intensity: ll,
        baseline_compensator: baseline_comp,
        term_compensator: term_comp,
        zero_at,
        gradient: gradient.then_some(ExpGradient { mu: g_mu, alpha: g_a, beta: g_b }),
    }
}

fn recursive(model: &HawkesModel, events: &EventSequence, t0: f64) -> LogLikelihood {
    let terms = TermSet::from_model(model).expect("exponential family");
    let ev = eval_exp_terms(model.baseline(), &terms, events, t0, false);
    LogLikelihood { value: ev.value(), zero_intensity_at: ev.zero_at, window_start: t0 }
}

fn direct(model: &HawkesModel, events: &EventSequence, t0: f64, truncation: HistoryTruncation) -> LogLikelihood {
    let km = model.kernels();
    let mu = model.baseline();
    let support = match truncation {
        HistoryTruncation::EffectiveSupport => km.effective_support(),
        HistoryTruncation::Full => f64::INFINITY,
    };
    let times = events.times();
    let comps = events.components();
    let mut ll = 0.0;
    let mut start = 0;
    for m in 0..times.len() {
        let t = times[m];
        if t < t0 {
            continue;
        }
        while t - times[start] > support {
            start += 1;
        }
        let c = comps[m];
        let mut lam = mu[c];
        for n in start..m {
            if times[n] < t {
                lam += km.get(c, comps[n]).eval(t - times[n]);
            }
        }
        if lam <= 0.0 {
            return LogLikelihood { value: f64::NEG_INFINITY, zero_intensity_at: Some(m), window_start: t0 };
        }
        ll += lam.ln();
    }
    LogLikelihood { value: ll - compensator(model, events, t0), zero_intensity_at: None, window_start: t0 }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernels::{Kernel, KernelMatrix};
    use crate::simulate::{simulate_thinning, SimConfig};

    fn seq(times: &[f64], t: f64) -> EventSequence {
        EventSequence::new(1, t, times.to_vec(), vec![0; times.len()], None).unwrap()
    }

    #[test]
    fn hand_values() {
        let ev = seq(&[1.0, 2.0], 10.0);
        let p = HawkesModel::univariate(1.0, Kernel::Zero).unwrap();
        assert!((log_likelihood(&p, &ev).unwrap().value + 10.0).abs() < 1e-14);
        let m = HawkesModel::univariate(1.0, Kernel::exponential(0.5, 1.0).unwrap()).unwrap();
        let want = -10.0 - 0.5 * (2.0 - (-9.0f64).exp() - (-8.0f64).exp()) + (1.0 + 0.5 * (-1.0f64).exp()).ln();
        let got = log_likelihood(&m, &ev).unwrap().value;
        assert!((got - want).abs() < 1e-12);
        assert!((got + 10.83094).abs() < 1e-4);
    }

    #[test]
    fn recursion_equals_direct_sum() {
        let km = KernelMatrix::new(
            2,
            vec![
                Kernel::exponential(0.2, 1.0).unwrap(),
                Kernel::sum_exponential(&[(0.1, 0.5), (0.1, 5.0)]).unwrap(),
                Kernel::exponential(0.3, 2.0).unwrap(),
                Kernel::Zero,
            ],
        )
        .unwrap();
        let m = HawkesModel::new(vec![0.7, 0.4], km).unwrap();
        let ev = simulate_thinning(&m, &SimConfig::new(3, 300.0)).unwrap();
        for w in [EdgeWindow::None, EdgeWindow::Start(20.0)] {
            let a = log_likelihood_with(&m, &ev, w, LikelihoodPath::Recursive).unwrap().value;
            let b = log_likelihood_with(&m, &ev, w, LikelihoodPath::Direct(HistoryTruncation::Full)).unwrap().value;
            assert!((a - b).abs() < 1e-10 * a.abs(), "{a} vs {b}");
        }
    }

    #[test]
    fn zero_intensity_reports_index() {
        let p = HawkesModel::univariate(0.0, Kernel::exponential(0.5, 1.0).unwrap()).unwrap();
        let r = log_likelihood(&p, &seq(&[1.0, 2.0], 5.0)).unwrap();
        assert_eq!(r.value, f64::NEG_INFINITY);
        assert_eq!(r.zero_intensity_at, Some(0));
    }

    #[test]
    fn simultaneous_events_do_not_excite_each_other() {
        let m = HawkesModel::univariate(1.0, Kernel::exponential(0.5, 1.0).unwrap()).unwrap();
        let ev = seq(&[1.0, 1.0], 2.0);
        let a = log_likelihood_with(&m, &ev, EdgeWindow::None, LikelihoodPath::Recursive).unwrap().value;
        let b = log_likelihood_with(&m, &ev, EdgeWindow::None, LikelihoodPath::Direct(HistoryTruncation::Full)).unwrap().value;
        assert!((a - b).abs() < 1e-14);
        let comp = 2.0 + 2.0 * 0.5 * (1.0 - (-1.0f64).exp());
        assert!((a + comp).abs() < 1e-14);
    }
    #[test]
    fn analytic_gradient_matches_differences() {
        let km = KernelMatrix::new(
            2,
            vec![
                Kernel::exponential(0.2, 1.0).unwrap(),
                Kernel::exponential(0.1, 0.5).unwrap(),
                Kernel::exponential(0.3, 2.0).unwrap(),
                Kernel::exponential(0.15, 3.0).unwrap(),
            ],
        )
        .unwrap();
        let m = HawkesModel::new(vec![0.7, 0.4], km).unwrap();
        let ev = simulate_thinning(&m, &SimConfig::new(5, 200.0)).unwrap();
        let terms = TermSet::from_model(&m).unwrap();
        let t0 = 10.0;
        let g = eval_exp_terms(m.baseline(), &terms, &ev, t0, true).gradient.unwrap();
        let f = |mu: &[f64], ts: &TermSet| eval_exp_terms(mu, ts, &ev, t0, false).value();
        let h = 1e-6;
        for q in 0..terms.len() {
            let (mut p, mut n) = (terms.clone(), terms.clone());
            p.alpha[q] += h;
            n.alpha[q] -= h;
            let num = (f(m.baseline(), &p) - f(m.baseline(), &n)) / (2.0 * h);
            assert!((num - g.alpha[q]).abs() < 1e-5 * (1.0 + num.abs()), "alpha {q}: {num} vs {}", g.alpha[q]);
            let (mut p, mut n) = (terms.clone(), terms.clone());
            p.beta[q] += h;
            n.beta[q] -= h;
            let num = (f(m.baseline(), &p) - f(m.baseline(), &n)) / (2.0 * h);
            assert!((num - g.beta[q]).abs() < 1e-5 * (1.0 + num.abs()), "beta {q}: {num} vs {}", g.beta[q]);
        }
        let num = (f(&[0.7 + h, 0.4], &terms) - f(&[0.7 - h, 0.4], &terms)) / (2.0 * h);
        assert!((num - g.mu[0]).abs() < 1e-5 * (1.0 + num.abs()));
    }
}
