use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

/// How a spectral radius was obtained.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RadiusMethod {
    PowerIteration,
    DenseEigen,
}

pub const POWER_TOLERANCE: f64 = 1e-12;
pub const POWER_MAX_ITERATIONS: usize = 10_000;

/// Spectral radius of a non-negative square matrix.
///
/// Power iteration from the all-ones vector; if it does not settle within
/// the iteration budget (periodic or badly separated spectra), the dense
/// eigenvalues are used instead.
pub fn spectral_radius(m: &DMatrix<f64>) -> (f64, RadiusMethod) {
    let n = m.nrows();
    if n == 0 {
        return (0.0, RadiusMethod::PowerIteration);
    }
    if n == 1 {
        return (m[(0, 0)].abs(), RadiusMethod::PowerIteration);
    }
    let mut v = nalgebra::DVector::from_element(n, 1.0);
    let mut prev = f64::NAN;
    for _ in 0..POWER_MAX_ITERATIONS {
        let w = m * &v;
        let norm = w.amax();
        if norm == 0.0 {
            return (0.0, RadiusMethod::PowerIteration);
        }
        let est = norm / v.amax();
        if (est - prev).abs() <= POWER_TOLERANCE * est.max(1.0) {
            return (est, RadiusMethod::PowerIteration);
        }
        prev = est;
        v = w / norm;
    }
    (dense_spectral_radius(m), RadiusMethod::DenseEigen)
}

/// Largest eigenvalue modulus via a dense Schur decomposition.
pub fn dense_spectral_radius(m: &DMatrix<f64>) -> f64 {
    m.clone()
        .complex_eigenvalues()
        .iter()
        .map(|z| z.norm())
        .fold(0.0, f64::max)
}

/// 2-norm condition number via singular values.
pub fn condition_number(m: &DMatrix<f64>) -> f64 {
    let sv = m.clone().singular_values();
    let max = sv.iter().cloned().fold(0.0, f64::max);
    let min = sv.iter().cloned().fold(f64::INFINITY, f64::min);
    if min == 0.0 {
        f64::INFINITY
    } else {
        max / min
    }
}
