//! Python bindings: kernels, models, event sequences, simulation,
//! estimation, goodness of fit and the microstructure tools.

use std::collections::HashMap;

use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;

use hawkes::estimate::{
    fit_contrast, fit_em_parametric, fit_mle, fit_moments, fit_wiener_hopf, goodness_of_fit as gof, log_likelihood,
    BetaMode, ContrastConfig, EmConfig, EstimationResult, MleConfig, MomentConfig, MomentFamily, QuadratureConfig,
};
use hawkes::finance::{
    him_impact_curve, him_permanent_impact, reflexivity_report, signature_plot as signature, HimConfig, MetaOrderProfile,
    PricePath, ReflexivityConfig,
};
use hawkes::ingest::{ingest, IngestConfig};
use hawkes::model::kernel_to_spec;
use hawkes::{analytics, simulate, Algorithm, ErrorClass, EventSequence, HawkesError, HawkesModel, KernelMatrix, SimConfig};

fn py_err(e: HawkesError) -> PyErr {
    match e.class() {
        ErrorClass::Numerical => PyRuntimeError::new_err(e.to_string()),
        _ => PyValueError::new_err(e.to_string()),
    }
}

trait IntoPy<T> {
    fn py(self) -> PyResult<T>;
}

impl<T> IntoPy<T> for hawkes::Result<T> {
    fn py(self) -> PyResult<T> {
        self.map_err(py_err)
    }
}

/// A non-negative (or signed) interaction kernel.
#[pyclass(name = "Kernel", module = "hawkes_py", frozen)]
pub struct PyKernel(hawkes::Kernel);

#[pymethods]
impl PyKernel {
    #[staticmethod]
    fn zero() -> Self {
        Self(hawkes::Kernel::Zero)
    }

    /// `alpha * beta * exp(-beta t)`, norm `alpha`.
    #[staticmethod]
    fn exponential(alpha: f64, beta: f64) -> PyResult<Self> {
        hawkes::Kernel::exponential(alpha, beta).py().map(Self)
    }

    /// Sum of exponential terms given as `(alpha, beta)` pairs.
    #[staticmethod]
    fn sum_exponential(terms: Vec<(f64, f64)>) -> PyResult<Self> {
        hawkes::Kernel::sum_exponential(&terms).py().map(Self)
    }

    /// Power-law kernel with norm `alpha`, scale `beta` and tail `t^{-1-gamma}`.
    #[staticmethod]
    fn power_law(alpha: f64, beta: f64, gamma: f64) -> PyResult<Self> {
        hawkes::Kernel::power_law(alpha, beta, gamma).py().map(Self)
    }

    /// Piecewise-constant kernel: `levels[k]` on `[breaks[k], breaks[k+1])`.
    #[staticmethod]
    fn piecewise(breaks: Vec<f64>, levels: Vec<f64>) -> PyResult<Self> {
        hawkes::Kernel::piecewise(breaks, levels).py().map(Self)
    }

    fn eval(&self, t: f64) -> f64 {
        self.0.eval(t)
    }

    /// Signed integral over `[0, inf)`.
    fn integral(&self) -> f64 {
        self.0.integral()
    }

    fn l1_norm(&self) -> PyResult<f64> {
        self.0.l1_norm().py()
    }

    fn __repr__(&self) -> String {
        format!("Kernel({})", kernel_to_spec(&self.0))
    }
}

/// An event record on `[0, horizon]`.
#[pyclass(name = "Events", module = "hawkes_py", frozen)]
pub struct PyEvents(EventSequence);

#[pymethods]
impl PyEvents {
    #[new]
    #[pyo3(signature = (times, components, horizon, dim = None))]
    fn new(times: Vec<f64>, components: Vec<usize>, horizon: f64, dim: Option<usize>) -> PyResult<Self> {
        let dim = dim.unwrap_or_else(|| components.iter().max().map_or(1, |c| c + 1));
        EventSequence::new(dim, horizon, times, components, None).py().map(Self)
    }

    /// Read a CSV (`time,component[,mark]`) or NDJSON (`{"t","c","m"}`) file.
    #[staticmethod]
    #[pyo3(signature = (path, labels = None, time_scale = 1.0, horizon = None))]
    fn read(path: &str, labels: Option<&str>, time_scale: f64, horizon: Option<f64>) -> PyResult<Self> {
        let mut cfg = IngestConfig::from_path(path);
        if let Some(l) = labels {
            cfg.labels = IngestConfig::parse_labels(l).py()?;
        }
        cfg.time_scale = time_scale;
        cfg.horizon = horizon;
        ingest(&cfg).py().map(|(ev, _)| Self(ev))
    }

    #[getter]
    fn times(&self) -> Vec<f64> {
        self.0.times().to_vec()
    }

    #[getter]
    fn components(&self) -> Vec<usize> {
        self.0.components().to_vec()
    }

    #[getter]
    fn horizon(&self) -> f64 {
        self.0.horizon()
    }

    #[getter]
    fn dim(&self) -> usize {
        self.0.dim()
    }

    fn counts(&self) -> Vec<usize> {
        self.0.counts()
    }

    fn __len__(&self) -> usize {
        self.0.len()
    }

    fn __repr__(&self) -> String {
        format!("Events(n={}, dim={}, horizon={})", self.0.len(), self.0.dim(), self.0.horizon())
    }
}

/// A linear multivariate Hawkes model.
#[pyclass(name = "Model", module = "hawkes_py", frozen)]
pub struct PyModel(HawkesModel);

#[pymethods]
impl PyModel {
    /// `kernels[i][j]` is the effect of component `j` on component `i`.
    #[new]
    fn new(baseline: Vec<f64>, kernels: Vec<Vec<PyRef<'_, PyKernel>>>) -> PyResult<Self> {
        let rows = kernels.iter().map(|r| r.iter().map(|k| k.0.clone()).collect()).collect();
        let km = KernelMatrix::from_rows(rows).py()?;
        HawkesModel::new(baseline, km).py().map(Self)
    }

    #[staticmethod]
    fn univariate(mu: f64, kernel: PyRef<'_, PyKernel>) -> PyResult<Self> {
        HawkesModel::univariate(mu, kernel.0.clone()).py().map(Self)
    }

    #[staticmethod]
    fn symmetric_bivariate(mu: f64, self_kernel: PyRef<'_, PyKernel>, cross_kernel: PyRef<'_, PyKernel>) -> PyResult<Self> {
        HawkesModel::symmetric_bivariate(mu, self_kernel.0.clone(), cross_kernel.0.clone()).py().map(Self)
    }

    /// Parse the `hawkes-model v1` text format.
    #[staticmethod]
    fn from_spec(text: &str) -> PyResult<Self> {
        HawkesModel::from_spec_str(text).py().map(Self)
    }

    fn to_spec(&self) -> String {
        self.0.to_spec_string()
    }

    #[getter]
    fn dim(&self) -> usize {
        self.0.dim()
    }

    #[getter]
    fn baseline(&self) -> Vec<f64> {
        self.0.baseline().to_vec()
    }

    fn kernel(&self, i: usize, j: usize) -> PyResult<PyKernel> {
        if i >= self.0.dim() || j >= self.0.dim() {
            return Err(PyValueError::new_err(format!("kernel index ({i}, {j}) out of range")));
        }
        Ok(PyKernel(self.0.kernels().get(i, j).clone()))
    }

    /// Spectral radius of the kernel norm matrix.
    fn branching_ratio(&self) -> PyResult<f64> {
        self.0.stability().py().map(|s| s.spectral_radius)
    }

    fn mean_intensity(&self) -> PyResult<Vec<f64>> {
        analytics::mean_intensity(&self.0).py()
    }

    /// Diffusion matrix of the scaled counting process, row-major.
    fn diffusion_matrix(&self) -> PyResult<Vec<Vec<f64>>> {
        let m = analytics::diffusion_coefficients(&self.0).py()?;
        Ok(m.row_iter().map(|r| r.iter().copied().collect()).collect())
    }

    #[pyo3(signature = (horizon, seed = 0, algorithm = "thinning", burn_in = 0.0))]
    fn simulate(&self, horizon: f64, seed: u64, algorithm: &str, burn_in: f64) -> PyResult<PyEvents> {
        let alg = match algorithm {
            "thinning" => Algorithm::Thinning,
            "time-change" | "time_change" => Algorithm::TimeChange,
            "cluster" => Algorithm::Cluster,
            other => return Err(PyValueError::new_err(format!("unknown algorithm {other:?}"))),
        };
        let cfg = SimConfig::new(seed, horizon).with_algorithm(alg).with_burn_in(burn_in);
        simulate::simulate(&self.0, &cfg).py().map(|s| PyEvents(s.events))
    }

    fn log_likelihood(&self, events: PyRef<'_, PyEvents>) -> PyResult<f64> {
        log_likelihood(&self.0, &events.0).py().map(|l| l.value)
    }

    fn __repr__(&self) -> String {
        format!("Model(dim={})", self.0.dim())
    }
}

/// Output of `fit`.
#[pyclass(name = "FitResult", module = "hawkes_py", frozen)]
pub struct PyFitResult(EstimationResult);

#[pymethods]
impl PyFitResult {
    #[getter]
    fn model(&self) -> PyModel {
        PyModel(self.0.model.clone())
    }

    #[getter]
    fn method(&self) -> String {
        self.0.method.clone()
    }

    /// `name -> (value, std_error or None)`.
    #[getter]
    fn parameters(&self) -> HashMap<String, (f64, Option<f64>)> {
        self.0.parameters.iter().map(|p| (p.name.clone(), (p.value, p.std_error))).collect()
    }

    #[getter]
    fn log_likelihood(&self) -> Option<f64> {
        self.0.log_likelihood
    }

    #[getter]
    fn converged(&self) -> bool {
        self.0.converged
    }

    #[getter]
    fn objective_trace(&self) -> Vec<f64> {
        self.0.objective_trace.clone()
    }

    #[getter]
    fn warnings(&self) -> Vec<String> {
        self.0.warnings.clone()
    }

    fn branching_ratio(&self) -> f64 {
        self.0.branching_ratio()
    }

    fn __repr__(&self) -> String {
        format!("FitResult(method={:?}, branching_ratio={:.4})", self.0.method, self.0.branching_ratio())
    }
}

fn beta_mode(s: &str) -> PyResult<BetaMode> {
    match s {
        "free" => Ok(BetaMode::Free),
        "shared" => Ok(BetaMode::Shared),
        v => v.parse().map(BetaMode::Fixed).map_err(|_| PyValueError::new_err(format!("beta must be free, shared or a number, got {v:?}"))),
    }
}

/// Fit a model. Methods: `mle` (families `exponential`, `power-law`), `em`,
/// `moments`, `wiener-hopf` and `contrast` (the last two need `support`).
#[pyfunction]
#[pyo3(signature = (events, method = "mle", family = "exponential", beta = "free", support = None, bins = 20, nodes = 64))]
fn fit(
    events: PyRef<'_, PyEvents>,
    method: &str,
    family: &str,
    beta: &str,
    support: Option<f64>,
    bins: usize,
    nodes: usize,
) -> PyResult<PyFitResult> {
    let ev = &events.0;
    let need_support = || support.ok_or_else(|| PyValueError::new_err(format!("method {method:?} needs support")));
    let res = match method {
        "mle" => {
            let cfg = match family {
                "exponential" => MleConfig::exponential(beta_mode(beta)?),
                "power-law" | "power_law" => MleConfig::power_law(),
                other => return Err(PyValueError::new_err(format!("unknown family {other:?}"))),
            };
            fit_mle(ev, &cfg)
        }
        "em" => fit_em_parametric(ev, &EmConfig::default()),
        "moments" => {
            let fam = if ev.dim() == 2 { MomentFamily::SymmetricBivariate } else { MomentFamily::Univariate };
            fit_moments(ev, &MomentConfig::new(fam))
        }
        "wiener-hopf" | "wiener_hopf" => {
            let mut cfg = QuadratureConfig::new(need_support()?);
            cfg.nodes = nodes;
            fit_wiener_hopf(ev, &cfg)
        }
        "contrast" => fit_contrast(ev, &ContrastConfig::uniform(need_support()?, bins)),
        other => return Err(PyValueError::new_err(format!("unknown method {other:?}"))),
    };
    res.py().map(PyFitResult)
}

/// Time-change KS test; returns per-component and pooled `{statistic, p_value, n}`.
#[pyfunction]
fn goodness_of_fit(
    model: PyRef<'_, PyModel>,
    events: PyRef<'_, PyEvents>,
) -> PyResult<(Vec<Option<HashMap<&'static str, f64>>>, HashMap<&'static str, f64>)> {
    let g = gof(&model.0, &events.0).py()?;
    let ks = |k: &hawkes::numerics::KsTest| HashMap::from([("statistic", k.statistic), ("p_value", k.p_value), ("n", k.n)]);
    Ok((g.per_component.iter().map(|k| k.as_ref().map(ks)).collect(), ks(&g.pooled)))
}

/// Realized variance per unit time of the mid-price at each scale.
#[pyfunction]
#[pyo3(signature = (events, taus, up = 0, down = 1, tick = 1.0))]
fn signature_plot(events: PyRef<'_, PyEvents>, taus: Vec<f64>, up: usize, down: usize, tick: f64) -> PyResult<(Vec<f64>, Vec<f64>)> {
    let path = PricePath::from_sequence(&events.0, up, down, 0, tick).py()?;
    let c = signature(&path, &taus, events.0.horizon()).py()?;
    Ok((c.values, c.std_errors))
}

/// Branching-ratio estimates by method: `label -> (estimate, std_error)`.
#[pyfunction]
#[pyo3(signature = (events, windows = 100))]
fn reflexivity(events: PyRef<'_, PyEvents>, windows: usize) -> PyResult<HashMap<String, (f64, Option<f64>)>> {
    let cfg = ReflexivityConfig { variance_windows: windows, ..ReflexivityConfig::default() };
    let r = reflexivity_report(&events.0, &cfg).py()?;
    Ok(r.rows.iter().map(|row| (row.method.label().to_string(), (row.estimate, row.std_error))).collect())
}

/// Expected meta-order price impact on `grid`: `(values, std_errors, permanent)`.
#[pyfunction]
#[pyo3(signature = (kernel, contrarian, breaks, rates, grid, paths = 1000, seed = 0))]
fn impact_curve(
    kernel: PyRef<'_, PyKernel>,
    contrarian: f64,
    breaks: Vec<f64>,
    rates: Vec<f64>,
    grid: Vec<f64>,
    paths: usize,
    seed: u64,
) -> PyResult<(Vec<f64>, Vec<f64>, f64)> {
    let cfg = HimConfig::new(kernel.0.clone(), contrarian).py()?;
    let meta = MetaOrderProfile::new(breaks, rates).py()?;
    let curve = him_impact_curve(&cfg, &meta, paths, seed, &grid).py()?;
    Ok((curve.values, curve.std_errors, him_permanent_impact(&cfg, &meta)))
}

#[pymodule]
fn hawkes_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyKernel>()?;
    m.add_class::<PyModel>()?;
    m.add_class::<PyEvents>()?;
    m.add_class::<PyFitResult>()?;
    m.add_function(wrap_pyfunction!(fit, m)?)?;
    m.add_function(wrap_pyfunction!(goodness_of_fit, m)?)?;
    m.add_function(wrap_pyfunction!(signature_plot, m)?)?;
    m.add_function(wrap_pyfunction!(reflexivity, m)?)?;
    m.add_function(wrap_pyfunction!(impact_curve, m)?)?;
    Ok(())
}
