//! Time-change residuals: under the true model the compensator increments
//! between consecutive events of a component are i.i.d. unit exponentials.

use serde::{Deserialize, Serialize};

use super::likelihood::TermSet;
use crate::error::{HawkesError, Result};
use crate::events::EventSequence;
use crate::model::{HawkesModel, Transfer};
use crate::numerics::ks::{ks_unit_exponential, KsTest};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GoodnessOfFit {
    /// Compensator increments per component, the first measured from time 0.
    pub residuals: Vec<Vec<f64>>,
    /// `None` for components without events.
    pub per_component: Vec<Option<KsTest>>,
    pub pooled: KsTest,
    /// Components skipped because they have no events.
    pub skipped: Vec<usize>,
}

impl GoodnessOfFit {
    /// `component,residual` rows.
    pub fn write_csv<W: std::io::Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "component,residual")?;
        for (i, r) in self.residuals.iter().enumerate() {
            for v in r {
                writeln!(w, "{i},{v:.16e}")?;
            }
        }
        Ok(())
    }
}

/// Compensator `Λ^{k_m}(t_m)` of each event's own component.
fn compensator_at_events(model: &HawkesModel, events: &EventSequence) -> Vec<f64> {
    match TermSet::from_model(model) {
        Some(terms) => exp_compensator(model, &terms, events),
        None => general_compensator(model, events),
    }
}

fn exp_compensator(model: &HawkesModel, terms: &TermSet, events: &EventSequence) -> Vec<f64> {
    let d = model.dim();
    let mu = model.baseline();
    let nk = terms.len();
    let mut v = vec![0.0; nk];
    let mut acc = vec![0.0; d];
    let mut last = 0.0;
    let mut out = Vec::with_capacity(events.len());
    for (t, c) in events.iter() {
        let dt = t - last;
        if dt > 0.0 {
            for i in 0..d {
                acc[i] += mu[i] * dt;
            }
            for q in 0..nk {
                let e = (-terms.beta[q] * dt).exp();
                acc[terms.target[q]] += v[q] * (1.0 - e) / terms.beta[q];
                v[q] *= e;
            }
            last = t;
        }
        out.push(acc[c]);
        for q in 0..nk {
            if terms.source[q] == c {
                v[q] += terms.alpha[q] * terms.beta[q];
            }
        }
    }
    out
}

/// Direct sum over events within the effective support; older events
/// contribute their full kernel mass.
fn general_compensator(model: &HawkesModel, events: &EventSequence) -> Vec<f64> {
    let km = model.kernels();
    let d = model.dim();
    let mu = model.baseline();
    let support = km.effective_support();
    let times = events.times();
    let comps = events.components();
    let mut settled = vec![0.0; d];
    let mut start = 0;
    let mut out = Vec::with_capacity(times.len());
    for (m, (&t, &c)) in times.iter().zip(comps).enumerate() {
        while start < m && t - times[start] > support {
            for (i, s) in settled.iter_mut().enumerate() {
                *s += km.get(i, comps[start]).integral();
            }
            start += 1;
        }
        let active: f64 = (start..m).map(|n| km.get(c, comps[n]).cumulative(t - times[n])).sum();
        out.push(mu[c] * t + settled[c] + active);
    }
    out
}

/// Per-component and pooled KS tests of the time-changed inter-event times.
pub fn goodness_of_fit(model: &HawkesModel, events: &EventSequence) -> Result<GoodnessOfFit> {
    if events.is_empty() {
        return Err(HawkesError::DegenerateData("no events".into()));
    }
    if events.dim() != model.dim() {
        return Err(HawkesError::Input(format!("events have dimension {}, model {}", events.dim(), model.dim())));
    }
    if model.marks().is_some() || model.transfer() != Transfer::Identity {
        return Err(HawkesError::UnsupportedFamily("time-change residuals need a linear, unmarked model".into()));
    }
    let d = model.dim();
    let comp = compensator_at_events(model, events);
    let mut prev = vec![0.0; d];
    let mut residuals = vec![Vec::new(); d];
    for (k, (_, c)) in events.iter().enumerate() {
        residuals[c].push(comp[k] - prev[c]);
        prev[c] = comp[k];
    }
    let skipped: Vec<usize> = (0..d).filter(|&i| residuals[i].is_empty()).collect();
    let per_component = residuals.iter().map(|r| (!r.is_empty()).then(|| ks_unit_exponential(r))).collect();
    let pooled: Vec<f64> = residuals.iter().flatten().copied().collect();
    Ok(GoodnessOfFit { pooled: ks_unit_exponential(&pooled), residuals, per_component, skipped })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernels::{Kernel, KernelMatrix};
    use crate::simulate::{simulate_thinning, SimConfig};

    #[test]
    fn true_model_passes() {
        let m = HawkesModel::univariate(1.0, Kernel::exponential(0.5, 2.0).unwrap()).unwrap();
        let ev = simulate_thinning(&m, &SimConfig::new(1, 5000.0)).unwrap();
        let g = goodness_of_fit(&m, &ev).unwrap();
        assert!(g.pooled.p_value > 0.01, "{:?}", g.pooled);
        let total: f64 = g.residuals[0].iter().sum();
        assert!((total / ev.len() as f64 - 1.0).abs() < 0.05);
    }

    #[test]
    fn poisson_model_rejected_on_clustered_data() {
        let m = HawkesModel::univariate(0.2, Kernel::exponential(0.8, 1.0).unwrap()).unwrap();
        let ev = simulate_thinning(&m, &SimConfig::new(2, 5000.0)).unwrap();
        let rate = ev.len() as f64 / ev.horizon();
        let poisson = HawkesModel::univariate(rate, Kernel::Zero).unwrap();
        assert!(goodness_of_fit(&poisson, &ev).unwrap().pooled.p_value < 0.001);
    }

    #[test]
    fn general_path_matches_exponential_recursion() {
        let km = KernelMatrix::new(
            2,
            vec![
                Kernel::exponential(0.3, 1.0).unwrap(),
                Kernel::exponential(0.2, 2.0).unwrap(),
                Kernel::Zero,
                Kernel::exponential(0.4, 0.5).unwrap(),
            ],
        )
        .unwrap();
        let m = HawkesModel::new(vec![0.5, 0.3], km).unwrap();
        let ev = simulate_thinning(&m, &SimConfig::new(3, 500.0)).unwrap();
        let a = exp_compensator(&m, &TermSet::from_model(&m).unwrap(), &ev);
        let b = general_compensator(&m, &ev);
        for (x, y) in a.iter().zip(&b) {
            assert!((x - y).abs() < 1e-4 * x.max(1.0), "{x} vs {y}");
        }
    }

    #[test]
    fn power_law_model_passes_on_own_data() {
        let m = HawkesModel::univariate(1.0, Kernel::power_law(0.3, 1.0, 1.0).unwrap()).unwrap();
        let ev = simulate_thinning(&m, &SimConfig::new(4, 3000.0)).unwrap();
        assert!(goodness_of_fit(&m, &ev).unwrap().pooled.p_value > 0.001);
    }

    #[test]
    fn empty_component_is_flagged_and_empty_events_error() {
        let m = HawkesModel::new(vec![1.0, 1.0], KernelMatrix::zeros(2)).unwrap();
        let ev = EventSequence::new(2, 10.0, vec![1.0, 2.5, 4.0], vec![0, 0, 0], None).unwrap();
        let g = goodness_of_fit(&m, &ev).unwrap();
        assert_eq!(g.skipped, vec![1]);
        assert!(g.per_component[1].is_none());
        assert_eq!(g.residuals[0], vec![1.0, 1.5, 1.5]);
        assert!(goodness_of_fit(&m, &EventSequence::empty(2, 10.0)).is_err());
    }
}
