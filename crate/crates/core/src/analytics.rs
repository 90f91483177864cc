//! First- and second-order statistics of stationary linear Hawkes models.
//!
//! Conventions: `Ψ̂(z) = (I − Φ̂(z))^{-1} − I`, `Σ = diag(Λ)`, and the
//! covariance density `c^{ij}(t)` is that of `dN^i_s` and `dN^j_{s+t}`, so
//! `c(−t) = c(t)^T` and `ĉ(z) = (I + Ψ̂(−z)) Σ (I + Ψ̂(z))^T`.

use std::io::Write;

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::error::{HawkesError, Result};
use crate::events::EventSequence;
use crate::kernels::Kernel;
use crate::model::HawkesModel;

fn rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows()).map(|i| (0..m.ncols()).map(|j| m[(i, j)]).collect()).collect()
}

/// `(I − Φ̂(0))^{-1}` with the signed kernel integrals.
fn inverse_i_minus_k(model: &HawkesModel) -> Result<DMatrix<f64>> {
    let d = model.dim();
    let k = model.kernels().integral_matrix();
    (DMatrix::identity(d, d) - k)
        .try_inverse()
        .ok_or_else(|| HawkesError::Singular("I - ||Phi|| is not invertible".into()))
}

/// Stationary mean intensity `Λ = (I − ||Φ||)^{-1} μ`.
pub fn mean_intensity(model: &HawkesModel) -> Result<Vec<f64>> {
    model.require_linear_stable()?;
    let d = model.dim();
    let k = model.kernels().integral_matrix();
    let lu = (DMatrix::identity(d, d) - k).lu();
    let lambda = lu
        .solve(&model.baseline_vector())
        .ok_or_else(|| HawkesError::Singular("I - ||Phi|| is not invertible".into()))?;
    Ok(lambda.iter().copied().collect())
}

/// `Ψ̂(z) = (I − Φ̂(z))^{-1} − I`.
pub fn resolvent_laplace(model: &HawkesModel, z: Complex64) -> Result<DMatrix<Complex64>> {
    let d = model.dim();
    let phi = model.kernels().laplace(z)?;
    let id = DMatrix::<Complex64>::identity(d, d);
    let inv = (&id - phi).try_inverse().ok_or_else(|| HawkesError::NearCritical {
        radius: f64::NAN,
        detail: format!("I - Phi(z) is singular at z = {z}"),
    })?;
    Ok(inv - id)
}

/// `ĉ(z) = (I + Ψ̂(−z)) Σ (I + Ψ̂(z))^T`.
pub fn correlation_laplace(model: &HawkesModel, z: Complex64) -> Result<DMatrix<Complex64>> {
    let lambda = mean_intensity(model)?;
    correlation_laplace_with(model, &lambda, z)
}

fn correlation_laplace_with(model: &HawkesModel, lambda: &[f64], z: Complex64) -> Result<DMatrix<Complex64>> {
    let d = model.dim();
    let id = DMatrix::<Complex64>::identity(d, d);
    let left = resolvent_laplace(model, -z)? + &id;
    let right = resolvent_laplace(model, z)? + &id;
    let sigma = DMatrix::from_diagonal(&DVector::from_iterator(d, lambda.iter().map(|l| Complex64::new(*l, 0.0))));
    Ok(left * sigma * right.transpose())
}

/// How a [`CorrelationEstimate`] was produced.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "method", rename_all = "snake_case")]
pub enum CorrelationMethod {
    ClosedForm,
    /// Discrete inverse Fourier transform on `points` samples of the
    /// imaginary axis; the lag grid has spacing `dt` and period `period`.
    FourierInversion { dt: f64, period: f64, points: usize },
    /// Empirical estimate from event data.
    Empirical { bin_width: f64 },
}

/// Covariance density on a lag grid, with the `t = 0` atom split off.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrelationEstimate {
    pub lags: Vec<f64>,
    /// One row-major `D×D` matrix per lag (continuous part only).
    pub values: Vec<Vec<f64>>,
    /// Diagonal atom weights at `t = 0` (equal to `Λ`).
    pub atoms: Vec<f64>,
    pub dim: usize,
    pub method: CorrelationMethod,
}

impl CorrelationEstimate {
    pub fn entry(&self, lag_index: usize, i: usize, j: usize) -> f64 {
        self.values[lag_index][i * self.dim + j]
    }

    /// Series `c^{ij}` over the lag grid.
    pub fn series(&self, i: usize, j: usize) -> Vec<f64> {
        self.values.iter().map(|v| v[i * self.dim + j]).collect()
    }

    /// CSV with columns `lag, c_i_j...`; atoms in a leading comment line.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        let atoms: Vec<String> = self.atoms.iter().map(|a| format!("{a:.16e}")).collect();
        writeln!(w, "# atoms: {}", atoms.join(","))?;
        let mut header = vec!["lag".to_string()];
        for i in 0..self.dim {
            for j in 0..self.dim {
                header.push(format!("c_{i}_{j}"));
            }
        }
        writeln!(w, "{}", header.join(","))?;
        for (lag, v) in self.lags.iter().zip(&self.values) {
            let mut row = vec![format!("{lag:.16e}")];
            row.extend(v.iter().map(|x| format!("{x:.16e}")));
            writeln!(w, "{}", row.join(","))?;
        }
        Ok(())
    }
}

/// Grid limits for numerical inversion.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InversionConfig {
    pub max_points: usize,
    /// Lag spacing is at most `support / points_per_support`.
    pub points_per_support: usize,
    /// ... and at most `time_scale / points_per_scale`.
    pub points_per_scale: usize,
}

impl Default for InversionConfig {
    fn default() -> Self {
        Self { max_points: 1 << 22, points_per_support: 512, points_per_scale: 64 }
    }
}

/// Symmetric bivariate (or 1D) exponential model with a single `β`:
/// returns `(Λ0, α_s, α_c, β)`.
fn symmetric_exponential(model: &HawkesModel) -> Option<(f64, f64, f64, f64)> {
    let km = model.kernels();
    let exp_params = |k: &Kernel| match k {
        Kernel::Zero => Some((0.0, None)),
        Kernel::Exponential { alpha, beta } => Some((*alpha, Some(*beta))),
        _ => None,
    };
    let same_beta = |a: Option<f64>, b: Option<f64>| match (a, b) {
        (Some(x), Some(y)) => (x == y).then_some(Some(x)),
        (x, None) | (None, x) => Some(x),
    };
    match model.dim() {
        1 => {
            let (a, b) = exp_params(km.get(0, 0))?;
            Some((0.0, a, 0.0, b.unwrap_or(1.0)))
        }
        2 => {
            if km.get(0, 0) != km.get(1, 1) || km.get(0, 1) != km.get(1, 0) || model.baseline()[0] != model.baseline()[1] {
                return None;
            }
            let (s, bs) = exp_params(km.get(0, 0))?;
            let (c, bc) = exp_params(km.get(0, 1))?;
            let beta = same_beta(bs, bc)?;
            Some((0.0, s, c, beta.unwrap_or(1.0)))
        }
        _ => None,
    }
}

/// Continuous part of the mode covariance `c_±(t)` for the symmetric
/// exponential model: `Λ0 (β/2) a(2−a)/(1−a) e^{−(1−a)β|t|}` with `a = α_s ± α_c`.
pub fn exponential_mode_covariance(lambda0: f64, a: f64, beta: f64, t: f64) -> f64 {
    lambda0 * 0.5 * beta * a * (2.0 - a) / (1.0 - a) * (-(1.0 - a) * beta * t.abs()).exp()
}

/// Covariance density on `lags`.
///
/// Symmetric bivariate and 1D single-`β` exponential models use the closed
/// form; other models are inverted numerically after subtracting the atom
/// and the first-order terms `ΣΦ^T(t)` / `Φ(−t)Σ`, which are added back
/// exactly. At `t = 0` the continuous part is reported as the midpoint of
/// the one-sided limits.
pub fn correlation_time_domain(model: &HawkesModel, lags: &[f64]) -> Result<CorrelationEstimate> {
    correlation_time_domain_with(model, lags, &InversionConfig::default())
}

pub fn correlation_time_domain_with(model: &HawkesModel, lags: &[f64], cfg: &InversionConfig) -> Result<CorrelationEstimate> {
    let lambda = mean_intensity(model)?;
    let d = model.dim();
    if let Some(t) = lags.iter().find(|t| !t.is_finite()) {
        return Err(HawkesError::Input(format!("non-finite lag {t}")));
    }
    if let Some((_, s, c, beta)) = symmetric_exponential(model) {
        let l0 = lambda[0];
        let values = lags
            .iter()
            .map(|&t| {
                if d == 1 {
                    vec![exponential_mode_covariance(l0, s, beta, t)]
                } else {
                    let p = exponential_mode_covariance(l0, s + c, beta, t);
                    let m = exponential_mode_covariance(l0, s - c, beta, t);
                    let diag = 0.5 * (p + m);
                    let off = 0.5 * (p - m);
                    vec![diag, off, off, diag]
                }
            })
            .collect();
        return Ok(CorrelationEstimate { lags: lags.to_vec(), values, atoms: lambda, dim: d, method: CorrelationMethod::ClosedForm });
    }

    let km = model.kernels();
    if km.iter().any(|(_, _, k)| matches!(k, Kernel::PowerLaw { gamma, .. } if *gamma < 0.5)) {
        log::warn!("power-law tail exponent below 1/2: c(t) is long-range and the inversion is windowed by the grid period");
    }
    let max_lag = lags.iter().fold(0.0f64, |m, t| m.max(t.abs()));
    let scale = km.time_scale();
    let support = km.effective_support();
    let heavy = km.iter().any(|(_, _, k)| matches!(k, Kernel::PowerLaw { .. }));
    let radius = model.stability()?.spectral_radius;
    let mut dt = (support / cfg.points_per_support as f64).min(scale / cfg.points_per_scale as f64);
    if !(dt.is_finite() && dt > 0.0) {
        dt = (max_lag / 1024.0).max(1e-3);
    }
    let tail = if heavy { 4.0 * max_lag.max(100.0 * scale) } else { support / (1.0 - radius) };
    let period = 2.0 * (max_lag + tail);
    let n_req = (period / dt).ceil();
    if !(n_req <= cfg.max_points as f64) {
        return Err(HawkesError::Resolution(format!(
            "inversion needs {n_req:.3e} grid points (period {period:.3e}, spacing {dt:.3e}); maximum is {}",
            cfg.max_points
        )));
    }
    let n = (n_req as usize).next_power_of_two().max(64);
    let dt = period / n as f64;

    let sigma = DMatrix::from_diagonal(&DVector::from_iterator(d, lambda.iter().map(|l| Complex64::new(*l, 0.0))));
    let remainder = |w: f64| -> Result<DMatrix<Complex64>> {
        let z = Complex64::new(0.0, w);
        let c = correlation_laplace_with(model, &lambda, z)?;
        let phi_z = km.laplace(z)?;
        let phi_mz = km.laplace(-z)?;
        Ok(c - &sigma - &sigma * phi_z.transpose() - phi_mz * &sigma)
    };
    let half = n / 2;
    let samples: Vec<DMatrix<Complex64>> = {
        use rayon::prelude::*;
        (0..=half)
            .into_par_iter()
            .map(|k| remainder(2.0 * std::f64::consts::PI * k as f64 / period))
            .collect::<Result<_>>()?
    };
    let mut planner = FftPlanner::<f64>::new();
    let fft = planner.plan_fft_forward(n);
    let mut grid = vec![vec![0.0; n]; d * d];
    for i in 0..d {
        for j in 0..d {
            let mut buf: Vec<Complex64> = (0..n)
                .map(|k| if k <= half { samples[k][(i, j)] } else { samples[n - k][(i, j)].conj() })
                .collect();
            buf[half] = Complex64::new(buf[half].re, 0.0);
            fft.process(&mut buf);
            grid[i * d + j] = buf.iter().map(|v| v.re / period).collect();
        }
    }
    let interp = |series: &[f64], t: f64| -> f64 {
        let x = t / dt;
        let k0 = x.floor();
        let frac = x - k0;
        let idx = |k: i64| series[k.rem_euclid(n as i64) as usize];
        (1.0 - frac) * idx(k0 as i64) + frac * idx(k0 as i64 + 1)
    };
    let values = lags
        .iter()
        .map(|&t| {
            let mut v = vec![0.0; d * d];
            let phi_pos = km.eval(t.max(0.0));
            let phi_neg = km.eval((-t).max(0.0));
            for i in 0..d {
                for j in 0..d {
                    let first = if t > 0.0 {
                        lambda[i] * phi_pos[(j, i)]
                    } else if t < 0.0 {
                        phi_neg[(i, j)] * lambda[j]
                    } else {
                        0.5 * (lambda[i] * phi_pos[(j, i)] + phi_pos[(i, j)] * lambda[j])
                    };
                    v[i * d + j] = interp(&grid[i * d + j], t) + first;
                }
            }
            v
        })
        .collect();
    Ok(CorrelationEstimate {
        lags: lags.to_vec(),
        values,
        atoms: lambda,
        dim: d,
        method: CorrelationMethod::FourierInversion { dt, period, points: n },
    })
}

/// Rate decomposition by cause.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CausalityTables {
    /// Immigrant rate per component (`μ`).
    pub exogenous: Vec<f64>,
    /// `direct[i][j]`: rate of component-`i` events whose parent is of component `j`.
    pub direct: Vec<Vec<f64>>,
    /// `ancestor[i][j]`: rate of non-immigrant component-`i` events whose
    /// oldest ancestor is of component `j`.
    pub ancestor: Vec<Vec<f64>>,
}

pub fn causality_rates(model: &HawkesModel) -> Result<CausalityTables> {
    if !model.kernels().is_non_negative() {
        return Err(HawkesError::InvalidModel("causality decomposition requires non-negative kernels".into()));
    }
    let lambda = mean_intensity(model)?;
    let d = model.dim();
    let k = model.kernels().integral_matrix();
    let psi = inverse_i_minus_k(model)? - DMatrix::identity(d, d);
    let mu = model.baseline();
    Ok(CausalityTables {
        exogenous: mu.to_vec(),
        direct: (0..d).map(|i| (0..d).map(|j| k[(i, j)] * lambda[j]).collect()).collect(),
        ancestor: (0..d).map(|i| (0..d).map(|j| psi[(i, j)] * mu[j]).collect()).collect(),
    })
}

/// `(I + Ψ̂(0)) diag(Λ)^{1/2}`; `D D^T` is the asymptotic covariance of `N_T / √T`.
pub fn diffusion_coefficients(model: &HawkesModel) -> Result<DMatrix<f64>> {
    let lambda = mean_intensity(model)?;
    if model
        .kernels()
        .iter()
        .any(|(_, _, k)| matches!(k, Kernel::PowerLaw { gamma, .. } if *gamma <= 0.5))
    {
        log::warn!("power-law kernel with gamma <= 1/2: the functional CLT moment condition fails");
    }
    let sqrt = DMatrix::from_diagonal(&DVector::from_iterator(lambda.len(), lambda.iter().map(|l| l.sqrt())));
    Ok(inverse_i_minus_k(model)? * sqrt)
}

/// Summary of the stationary first-order quantities.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnalyticsResult {
    pub mean_intensity: Vec<f64>,
    /// `Ψ̂(0)`, row-major rows.
    pub resolvent_norms: Vec<Vec<f64>>,
    pub diffusion: Vec<Vec<f64>>,
    pub causality: CausalityTables,
}

pub fn analyze(model: &HawkesModel) -> Result<AnalyticsResult> {
    let d = model.dim();
    let psi = inverse_i_minus_k(model)? - DMatrix::identity(d, d);
    Ok(AnalyticsResult {
        mean_intensity: mean_intensity(model)?,
        resolvent_norms: rows(&psi),
        diffusion: rows(&diffusion_coefficients(model)?),
        causality: causality_rates(model)?,
    })
}

/// Conditional expected intensity on a time grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IntensityPath {
    pub times: Vec<f64>,
    /// `values[n][i]` is `λ^i` at `times[n]`.
    pub values: Vec<Vec<f64>>,
}

impl IntensityPath {
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        let d = self.values.first().map_or(0, Vec::len);
        let header: Vec<String> = std::iter::once("time".to_string()).chain((0..d).map(|i| format!("lambda_{i}"))).collect();
        writeln!(w, "{}", header.join(","))?;
        for (t, v) in self.times.iter().zip(&self.values) {
            let row: Vec<String> = std::iter::once(format!("{t:.16e}")).chain(v.iter().map(|x| format!("{x:.16e}"))).collect();
            writeln!(w, "{}", row.join(","))?;
        }
        Ok(())
    }
}

/// `E[λ_t | F_s]` for `t` on `grid` (all `>= s`), given the history up to `s`.
///
/// Exponential families are solved exactly as a linear ODE on the Markov
/// state; other kernels solve the renewal equation with trapezoidal steps.
pub fn predict_intensity(model: &HawkesModel, history: &EventSequence, s: f64, grid: &[f64]) -> Result<IntensityPath> {
    model.require_linear_stable()?;
    let d = model.dim();
    if history.dim() != d {
        return Err(HawkesError::Input(format!("history has dimension {}, model {d}", history.dim())));
    }
    if let Some(t) = history.times().iter().find(|t| **t > s) {
        return Err(HawkesError::Input(format!("history event at t={t} is after the prediction origin s={s}")));
    }
    if let Some(t) = grid.iter().find(|t| !(**t >= s)) {
        return Err(HawkesError::Input(format!("prediction time {t} precedes s={s}")));
    }
    let km = model.kernels();
    let mu = model.baseline();

    if km.is_exponential_family() {
        // State: one term per (i, j, k); y' = M y + b.
        let mut target = vec![];
        let mut source = vec![];
        let mut beta = vec![];
        let mut ab = vec![];
        for (i, j, k) in km.iter() {
            for term in k.exp_terms().unwrap() {
                target.push(i);
                source.push(j);
                beta.push(term.beta);
                ab.push(term.alpha * term.beta);
            }
        }
        let m = target.len();
        let mut y0 = DVector::<f64>::zeros(m + 1);
        for (t, c) in history.iter() {
            for n in 0..m {
                if source[n] == c {
                    y0[n] += ab[n] * (-beta[n] * (s - t)).exp();
                }
            }
        }
        y0[m] = 1.0;
        let mut a = DMatrix::<f64>::zeros(m + 1, m + 1);
        for n in 0..m {
            a[(n, n)] -= beta[n];
            let j = source[n];
            a[(n, m)] += ab[n] * mu[j];
            for l in 0..m {
                if target[l] == j {
                    a[(n, l)] += ab[n];
                }
            }
        }
        let values = grid
            .iter()
            .map(|&t| {
                let y = (&a * (t - s)).exp() * &y0;
                let mut lam = mu.to_vec();
                for n in 0..m {
                    lam[target[n]] += y[n];
                }
                lam
            })
            .collect();
        return Ok(IntensityPath { times: grid.to_vec(), values });
    }

    // Renewal equation m(t) = f(t) + ∫_s^t Φ(t−u) m(u) du on a uniform grid.
    let t_max = grid.iter().cloned().fold(s, f64::max);
    let span = t_max - s;
    let mut h = km.time_scale() / 32.0;
    let mut steps = if span > 0.0 { (span / h).ceil() as usize } else { 0 };
    if steps > 20_000 {
        steps = 20_000;
    }
    if steps > 0 {
        h = span / steps as f64;
    }
    let forcing = |t: f64| -> DVector<f64> {
        let mut f = DVector::from_column_slice(mu);
        for (te, c) in history.iter() {
            for i in 0..d {
                f[i] += km.get(i, c).eval(t - te);
            }
        }
        f
    };
    let phi: Vec<DMatrix<f64>> = (0..=steps).map(|n| km.eval(n as f64 * h)).collect();
    let mut sol: Vec<DVector<f64>> = Vec::with_capacity(steps + 1);
    sol.push(forcing(s));
    let lhs = DMatrix::identity(d, d) - &phi[0] * (0.5 * h);
    let lhs_lu = lhs.lu();
    for n in 1..=steps {
        let t = s + n as f64 * h;
        let mut rhs = forcing(t);
        rhs += &phi[n] * &sol[0] * (0.5 * h);
        for l in 1..n {
            rhs += &phi[n - l] * &sol[l] * h;
        }
        let v = lhs_lu.solve(&rhs).ok_or_else(|| HawkesError::Singular("renewal step matrix is singular".into()))?;
        sol.push(v);
    }
    let values = grid
        .iter()
        .map(|&t| {
            if steps == 0 {
                return sol[0].iter().copied().collect();
            }
            let x = (t - s) / h;
            let k = (x.floor() as usize).min(steps - 1);
            let frac = x - k as f64;
            (0..d).map(|i| (1.0 - frac) * sol[k][i] + frac * sol[k + 1][i]).collect()
        })
        .collect();
    Ok(IntensityPath { times: grid.to_vec(), values })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernels::KernelMatrix;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    fn example1() -> HawkesModel {
        HawkesModel::symmetric_bivariate(1.0, Kernel::exponential(0.2, 1.0).unwrap(), Kernel::exponential(0.3, 1.0).unwrap()).unwrap()
    }

    #[test]
    fn mean_intensity_examples() {
        let lam = mean_intensity(&example1()).unwrap();
        assert_eq!(lam, vec![2.0, 2.0]);
        let pl = HawkesModel::univariate(1.0, Kernel::power_law(0.25, 1.0, 0.5).unwrap()).unwrap();
        assert_eq!(mean_intensity(&pl).unwrap(), vec![2.0]);
        let poisson = HawkesModel::new(vec![1.0, 3.0], KernelMatrix::zeros(2)).unwrap();
        assert_eq!(mean_intensity(&poisson).unwrap(), vec![1.0, 3.0]);
    }

    #[test]
    fn unstable_and_near_critical_rejected() {
        let m = HawkesModel::univariate(1.0, Kernel::exponential(1.2, 1.0).unwrap()).unwrap();
        assert!(matches!(mean_intensity(&m), Err(HawkesError::Unstable { radius }) if (radius - 1.2).abs() < 1e-12));
        let m = HawkesModel::univariate(1.0, Kernel::exponential(1.0 - 1e-8, 1.0).unwrap()).unwrap();
        assert!(matches!(mean_intensity(&m), Err(HawkesError::NearCritical { .. })));
    }

    #[test]
    fn resolvent_path_agrees() {
        let m = example1();
        let psi = resolvent_laplace(&m, c(0.0, 0.0)).unwrap();
        let mu = m.baseline_vector();
        for i in 0..2 {
            let v = mu[i] + (0..2).map(|j| psi[(i, j)].re * mu[j]).sum::<f64>();
            assert!((v - 2.0).abs() < 1e-10);
        }
    }

    #[test]
    fn laplace_covariance_examples() {
        let poisson = HawkesModel::new(vec![1.5, 0.5], KernelMatrix::zeros(2)).unwrap();
        let cz = correlation_laplace(&poisson, c(0.0, 0.7)).unwrap();
        assert!((cz[(0, 0)] - c(1.5, 0.0)).norm() < 1e-15 && cz[(0, 1)].norm() < 1e-15);

        let m1 = HawkesModel::univariate(1.0, Kernel::exponential(0.5, 1.0).unwrap()).unwrap();
        assert!((correlation_laplace(&m1, c(0.0, 0.0)).unwrap()[(0, 0)].re - 8.0).abs() < 1e-12);

        let (s, x) = (0.2, 0.3);
        let cz = correlation_laplace(&example1(), c(0.0, 0.0)).unwrap();
        let plus = cz[(0, 0)].re + cz[(0, 1)].re;
        let minus = cz[(0, 0)].re - cz[(0, 1)].re;
        assert!((plus - 2.0 / (1.0f64 - s - x).powi(2)).abs() < 1e-10);
        assert!((minus - 2.0 / (1.0f64 - s + x).powi(2)).abs() < 1e-10);
    }

    #[test]
    fn closed_form_time_domain() {
        let m = HawkesModel::symmetric_bivariate(1.0, Kernel::Zero, Kernel::exponential(0.1, 1.0).unwrap()).unwrap();
        let est = correlation_time_domain(&m, &[0.0, 1.0, -2.0]).unwrap();
        assert_eq!(est.method, CorrelationMethod::ClosedForm);
        let plus = |n: usize| est.entry(n, 0, 0) + est.entry(n, 0, 1);
        assert!((plus(0) - 0.117284).abs() < 1e-6);
        assert!((plus(1) - 0.117284 * (-0.9f64).exp()).abs() < 1e-6);
        assert!((plus(2) - 0.117284 * (-1.8f64).exp()).abs() < 1e-6);
        let p = HawkesModel::univariate(2.0, Kernel::Zero).unwrap();
        let est = correlation_time_domain(&p, &[0.0, 1.0]).unwrap();
        assert_eq!(est.values, vec![vec![0.0], vec![0.0]]);
        assert_eq!(est.atoms, vec![2.0]);
    }

    /// Direct oracle: c(t) = ΣΨ^T(t) + ∫Ψ(u)ΣΨ^T(t+u)du for t > 0, with Ψ from a fine Volterra solve.
    fn time_domain_oracle(model: &HawkesModel, lags: &[f64], h: f64, u_max: f64) -> Vec<DMatrix<f64>> {
        let d = model.dim();
        let km = model.kernels();
        let lam = mean_intensity(model).unwrap();
        let n = ((u_max + lags.iter().cloned().fold(0.0, f64::max)) / h).ceil() as usize + 2;
        let phi: Vec<DMatrix<f64>> = (0..n).map(|k| km.eval(k as f64 * h)).collect();
        // Ψ = Φ + Φ*Ψ, trapezoid.
        let mut psi: Vec<DMatrix<f64>> = Vec::with_capacity(n);
        let lhs = (DMatrix::identity(d, d) - &phi[0] * (0.5 * h)).try_inverse().unwrap();
        psi.push(phi[0].clone());
        for k in 1..n {
            let mut rhs = phi[k].clone() + &phi[k] * &psi[0] * (0.5 * h);
            for l in 1..k {
                rhs += &phi[k - l] * &psi[l] * h;
            }
            psi.push(&lhs * rhs);
        }
        let sigma = DMatrix::from_diagonal(&DVector::from_column_slice(&lam));
        let m = (u_max / h) as usize;
        lags.iter()
            .map(|&t| {
                let kt = (t / h).round() as usize;
                let mut acc = &sigma * psi[kt].transpose();
                for u in 0..=m {
                    let w = if u == 0 || u == m { 0.5 * h } else { h };
                    acc += &psi[u] * &sigma * psi[u + kt].transpose() * w;
                }
                acc
            })
            .collect()
    }

    #[test]
    fn fourier_inversion_matches_direct_oracle() {
        let km = KernelMatrix::new(
            2,
            vec![
                Kernel::exponential(0.3, 1.0).unwrap(),
                Kernel::exponential(0.2, 3.0).unwrap(),
                Kernel::Zero,
                Kernel::sum_exponential(&[(0.2, 0.5), (0.1, 4.0)]).unwrap(),
            ],
        )
        .unwrap();
        let m = HawkesModel::new(vec![1.0, 0.5], km).unwrap();
        let lags = [0.5, 1.0, 2.0, 4.0];
        let est = correlation_time_domain(&m, &lags).unwrap();
        assert!(matches!(est.method, CorrelationMethod::FourierInversion { .. }));
        let oracle = time_domain_oracle(&m, &lags, 0.004, 80.0);
        for (n, o) in oracle.iter().enumerate() {
            for i in 0..2 {
                for j in 0..2 {
                    let got = est.entry(n, i, j);
                    assert!((got - o[(i, j)]).abs() < 2e-3 * o[(i, j)].abs().max(0.05), "lag {} ({i},{j}): {got} vs {}", lags[n], o[(i, j)]);
                }
            }
        }
        // symmetry c(−t) = c(t)^T
        let neg = correlation_time_domain(&m, &[-1.0, 1.0]).unwrap();
        assert!((neg.entry(0, 0, 1) - neg.entry(1, 1, 0)).abs() < 1e-12);
    }

    #[test]
    fn inversion_integrates_to_laplace_at_zero() {
        let m = HawkesModel::univariate(1.0, Kernel::sum_exponential(&[(0.3, 1.0), (0.2, 5.0)]).unwrap()).unwrap();
        let h = 0.005;
        let lags: Vec<f64> = (-16000..=16000).map(|k| k as f64 * h).collect();
        let est = correlation_time_domain(&m, &lags).unwrap();
        let s = est.series(0, 0);
        let integral: f64 = s.windows(2).map(|w| 0.5 * h * (w[0] + w[1])).sum::<f64>() + est.atoms[0];
        let want = correlation_laplace(&m, c(0.0, 0.0)).unwrap()[(0, 0)].re;
        assert!((integral - want).abs() < 1e-4 * want, "{integral} vs {want}");
    }

    #[test]
    fn causality_tables_sum_to_lambda() {
        let km = KernelMatrix::new(
            3,
            vec![
                Kernel::exponential(0.1, 1.0).unwrap(),
                Kernel::exponential(0.2, 1.0).unwrap(),
                Kernel::Zero,
                Kernel::exponential(0.3, 2.0).unwrap(),
                Kernel::power_law(0.05, 1.0, 0.5).unwrap(),
                Kernel::exponential(0.1, 1.0).unwrap(),
                Kernel::Zero,
                Kernel::exponential(0.25, 1.0).unwrap(),
                Kernel::exponential(0.2, 1.0).unwrap(),
            ],
        )
        .unwrap();
        let m = HawkesModel::new(vec![0.5, 1.0, 0.2], km).unwrap();
        let tab = causality_rates(&m).unwrap();
        let lam = mean_intensity(&m).unwrap();
        for i in 0..3 {
            let direct = tab.exogenous[i] + tab.direct[i].iter().sum::<f64>();
            let anc = tab.exogenous[i] + tab.ancestor[i].iter().sum::<f64>();
            assert!((direct - lam[i]).abs() < 1e-12 && (anc - lam[i]).abs() < 1e-12);
        }
        let one = HawkesModel::univariate(1.0, Kernel::exponential(0.4, 1.0).unwrap()).unwrap();
        let t = causality_rates(&one).unwrap();
        let lam = mean_intensity(&one).unwrap()[0];
        assert!((t.direct[0][0] / lam - 0.4).abs() < 1e-12);
    }

    #[test]
    fn diffusion_examples() {
        let p = HawkesModel::new(vec![4.0, 9.0], KernelMatrix::zeros(2)).unwrap();
        let dm = diffusion_coefficients(&p).unwrap();
        assert_eq!(dm, DMatrix::from_row_slice(2, 2, &[2.0, 0.0, 0.0, 3.0]));
        let (s, x) = (0.2, 0.3);
        let dm = diffusion_coefficients(&example1()).unwrap();
        let pre = 2f64.sqrt() / ((1.0 - s) * (1.0 - s) - x * x);
        let want = DMatrix::from_row_slice(2, 2, &[1.0 - s, x, x, 1.0 - s]) * pre;
        assert!((dm.clone() - want).amax() < 1e-12);
        // DD^T equals ĉ(0)
        let cz = correlation_laplace(&example1(), c(0.0, 0.0)).unwrap();
        let ddt = &dm * dm.transpose();
        for i in 0..2 {
            for j in 0..2 {
                assert!((ddt[(i, j)] - cz[(i, j)].re).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn prediction_exponential_matches_closed_form_and_rk4() {
        let (mu, a, b) = (1.0, 0.5, 1.0);
        let m = HawkesModel::univariate(mu, Kernel::exponential(a, b).unwrap()).unwrap();
        let hist = EventSequence::new(1, 10.0, vec![9.99], vec![0], None).unwrap();
        let s = 10.0;
        let grid: Vec<f64> = (0..50).map(|k| s + 0.1 * k as f64).collect();
        let path = predict_intensity(&m, &hist, s, &grid).unwrap();
        let lam = 2.0;
        let ls = mu + a * b * (-b * 0.01f64).exp();
        for (t, v) in grid.iter().zip(&path.values) {
            let want = lam + (ls - lam) * (-b * (1.0 - a) * (t - s)).exp();
            assert!((v[0] - want).abs() < 1e-10);
        }
        // RK4 oracle on y' = -βy + αβ(μ + y)
        let f = |y: f64| -b * y + a * b * (mu + y);
        let mut y = ls - mu;
        let h = 1e-4;
        let mut step = 0usize;
        for (k, v) in path.values.iter().enumerate() {
            while step < k * 1000 {
                step += 1;
                let k1 = f(y);
                let k2 = f(y + 0.5 * h * k1);
                let k3 = f(y + 0.5 * h * k2);
                let k4 = f(y + h * k3);
                y += h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
            }
            assert!((mu + y - v[0]).abs() < 1e-8);
        }
        let far = predict_intensity(&m, &hist, s, &[s + 200.0]).unwrap();
        assert!((far.values[0][0] - lam).abs() < 1e-10);
    }

    #[test]
    fn prediction_general_kernel_converges() {
        // Power law approaching the exponential: renewal solver vs exact ODE.
        let g = 400.0;
        let pl = HawkesModel::univariate(1.0, Kernel::power_law(0.5 * g, 1.0 / g, g).unwrap()).unwrap();
        let ex = HawkesModel::univariate(1.0, Kernel::exponential(0.5, 1.0).unwrap()).unwrap();
        let hist = EventSequence::new(1, 5.0, vec![3.0, 4.5], vec![0, 0], None).unwrap();
        let grid: Vec<f64> = (0..40).map(|k| 5.0 + 0.25 * k as f64).collect();
        let a = predict_intensity(&pl, &hist, 5.0, &grid).unwrap();
        let b = predict_intensity(&ex, &hist, 5.0, &grid).unwrap();
        for (x, y) in a.values.iter().zip(&b.values) {
            assert!((x[0] - y[0]).abs() < 5e-3, "{} vs {}", x[0], y[0]);
        }
        let bad = EventSequence::new(1, 10.0, vec![6.0], vec![0], None).unwrap();
        assert!(matches!(predict_intensity(&ex, &bad, 5.0, &grid), Err(HawkesError::Input(_))));
        let zero = HawkesModel::univariate(1.3, Kernel::Zero).unwrap();
        let p = predict_intensity(&zero, &hist, 5.0, &grid).unwrap();
        assert!(p.values.iter().all(|v| v[0] == 1.3));
    }
}
