//! Estimators: likelihood, MLE, EM (parametric and histogram), conditional
//! intensity and Wiener–Hopf, least-squares contrast, method of moments,
//! the variance-ratio branching estimator and time-change goodness of fit.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{HawkesError, Result};
use crate::events::EventSequence;
use crate::kernels::StabilityReport;
use crate::model::HawkesModel;

pub mod contrast;
pub mod em;
pub mod gof;
pub mod likelihood;
pub mod mle;
pub mod moments;
pub mod nonparametric;
pub mod variance_ratio;

pub use contrast::{fit_contrast, ContrastConfig};
pub use em::{fit_em_nonparametric, fit_em_parametric, EmConfig, NonparametricEmConfig};
pub use gof::{goodness_of_fit, GoodnessOfFit};
pub use likelihood::{log_likelihood, log_likelihood_with, EdgeWindow, LikelihoodPath, LogLikelihood};
pub use mle::{fit_mle, BetaMode, MleConfig, MleFamily};
pub use moments::{empirical_moments, fit_moments, fit_moments_from, model_moments, MomentConfig, MomentData, MomentFamily};
pub use nonparametric::{
    estimate_conditional_intensity, fit_wiener_hopf, BandwidthRule, ConditionalIntensityEstimate, GridStyle, QuadratureConfig,
};
pub use variance_ratio::{branching_ratio_estimate, BranchingRatioEstimate};

/// One fitted parameter with its standard error.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParameterEstimate {
    pub name: String,
    pub value: f64,
    pub std_error: Option<f64>,
}

/// Output shared by all estimators.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimationResult {
    pub model: HawkesModel,
    pub method: String,
    /// Objective value per iteration (log-likelihood for likelihood methods).
    pub objective_trace: Vec<f64>,
    /// Gradient max-norm per iteration where the method has one.
    pub gradient_trace: Vec<Option<f64>>,
    pub converged: bool,
    pub iterations: usize,
    pub stability: StabilityReport,
    /// Set when the fitted branching ratio is at or above the stability boundary.
    pub near_critical: bool,
    pub parameters: Vec<ParameterEstimate>,
    pub log_likelihood: Option<f64>,
    pub warnings: Vec<String>,
}

impl EstimationResult {
    pub(crate) fn new(model: HawkesModel, method: &str) -> Result<Self> {
        let stability = model.stability()?;
        let near_critical = stability.spectral_radius >= mle::BARRIER_RADIUS;
        Ok(Self {
            model,
            method: method.to_string(),
            objective_trace: Vec::new(),
            gradient_trace: Vec::new(),
            converged: false,
            iterations: 0,
            stability,
            near_critical,
            parameters: Vec::new(),
            log_likelihood: None,
            warnings: Vec::new(),
        })
    }

    /// Branching ratio of the fitted model.
    pub fn branching_ratio(&self) -> f64 {
        self.stability.spectral_radius
    }

    pub fn parameter(&self, name: &str) -> Option<&ParameterEstimate> {
        self.parameters.iter().find(|p| p.name == name)
    }

    /// The fitted model in the text spec format.
    pub fn to_spec_string(&self) -> String {
        self.model.to_spec_string()
    }

    /// `iteration,objective,gradient_norm`.
    pub fn write_diagnostics_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "iteration,objective,gradient_norm")?;
        for (n, v) in self.objective_trace.iter().enumerate() {
            let g = self.gradient_trace.get(n).copied().flatten().map(|g| format!("{g:.16e}")).unwrap_or_default();
            writeln!(w, "{n},{v:.16e},{g}")?;
        }
        Ok(())
    }
}

pub(crate) fn require_events(events: &EventSequence) -> Result<()> {
    if events.is_empty() {
        return Err(HawkesError::DegenerateData("no events".into()));
    }
    if let Some(i) = events.counts().iter().position(|n| *n == 0) {
        return Err(HawkesError::DegenerateData(format!("component {i} has no events")));
    }
    Ok(())
}
