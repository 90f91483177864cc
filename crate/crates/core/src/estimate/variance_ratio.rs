//! Model-free branching ratio from windowed counts:
//! `||φ|| ≈ 1 − (⟨N_T⟩ / Var N_T)^{1/2}`, since `Var N_T / ⟨N_T⟩ → (1 − ||φ||)^{-2}`.

use log::warn;
use serde::{Deserialize, Serialize};

use crate::error::{HawkesError, Result};
use crate::events::EventSequence;
use crate::numerics::mean_var;

pub const MIN_RECOMMENDED_WINDOWS: usize = 50;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BranchingRatioEstimate {
    /// Clamped to `[0, 1]`.
    pub estimate: f64,
    /// Before clamping (`-inf` for zero variance).
    pub raw: f64,
    pub clamped: bool,
    pub std_error: f64,
    /// 95% jackknife band, clamped to `[0, 1]`.
    pub lower: f64,
    pub upper: f64,
    pub windows: usize,
    pub mean: f64,
    pub variance: f64,
    pub warnings: Vec<String>,
}

fn ratio(mean: f64, var: f64) -> f64 {
    if var <= 0.0 {
        f64::NEG_INFINITY
    } else {
        1.0 - (mean / var).sqrt()
    }
}

/// Estimate from `n_windows` consecutive windows of length `window` (all that
/// fit in the record when `None`).
pub fn branching_ratio_estimate(events: &EventSequence, window: f64, n_windows: Option<usize>) -> Result<BranchingRatioEstimate> {
    if events.dim() != 1 {
        return Err(HawkesError::Input("the variance-ratio estimator is 1D only".into()));
    }
    if !(window.is_finite() && window > 0.0) {
        return Err(HawkesError::Input(format!("window must be > 0, got {window}")));
    }
    let fit = (events.horizon() / window).floor() as usize;
    let n = match n_windows {
        Some(n) if n > fit => {
            return Err(HawkesError::InsufficientData(format!("{n} windows of {window} do not fit in the record ({fit} do)")))
        }
        Some(n) => n,
        None => fit,
    };
    if n < 2 {
        return Err(HawkesError::InsufficientData(format!("{n} window(s); need at least 2")));
    }
    let mut counts = vec![0.0; n];
    for &t in events.times() {
        let k = (t / window) as usize;
        if k < n {
            counts[k] += 1.0;
        }
    }
    let mut warnings = Vec::new();
    if n < MIN_RECOMMENDED_WINDOWS {
        let msg = format!("only {n} windows; at least {MIN_RECOMMENDED_WINDOWS} are recommended");
        warn!("{msg}");
        warnings.push(msg);
    }
    let (mean, variance) = mean_var(&counts);
    let raw = ratio(mean, variance);
    let estimate = raw.clamp(0.0, 1.0);
    let clamped = estimate != raw;
    if mean > 0.0 && variance <= mean {
        warnings.push("count variance does not exceed the mean; estimate clamped to 0".into());
    }

    // Delete-one-window jackknife via running sums.
    let s1: f64 = counts.iter().sum();
    let s2: f64 = counts.iter().map(|c| c * c).sum();
    let k = n as f64;
    let reps: Vec<f64> = counts
        .iter()
        .map(|c| {
            let m = (s1 - c) / (k - 1.0);
            let v = if n > 2 { ((s2 - c * c) - (k - 1.0) * m * m) / (k - 2.0) } else { 0.0 };
            ratio(m, v).clamp(0.0, 1.0)
        })
        .collect();
    let rbar = reps.iter().sum::<f64>() / k;
    let std_error = ((k - 1.0) / k * reps.iter().map(|r| (r - rbar).powi(2)).sum::<f64>()).sqrt();
    Ok(BranchingRatioEstimate {
        estimate,
        raw,
        clamped,
        std_error,
        lower: (estimate - 1.96 * std_error).clamp(0.0, 1.0),
        upper: (estimate + 1.96 * std_error).clamp(0.0, 1.0),
        windows: n,
        mean,
        variance,
        warnings,
    })
}
