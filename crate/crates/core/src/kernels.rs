//! Kernel families, their integrals and Laplace transforms, and matrix-level
//! stability analysis.
//!
//! A kernel `φ(t)` is causal (zero for `t < 0`) and integrable. The Laplace
//! transform convention used throughout the crate is
//!
//! ```text
//! φ̂(z) = ∫ φ(t) e^{z t} dt
//! ```
//!
//! so transforms converge for `Re z` below the kernel's decay rate, and
//! `φ̂(0)` is the signed integral of the kernel.

use nalgebra::DMatrix;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{HawkesError, Result};
use crate::numerics::linalg::{spectral_radius, RadiusMethod};
use crate::numerics::quadrature::GaussRule;

/// Relative tail mass beyond which a kernel is considered to have died out.
pub const SUPPORT_TAIL: f64 = 1e-6;

/// One `α β e^{-β t}` term.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExpTerm {
    pub alpha: f64,
    pub beta: f64,
}

/// A causal, integrable excitation kernel.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum Kernel {
    Zero,
    /// `α β e^{-β t}`; `α` is the L1 norm, `β` a rate.
    Exponential { alpha: f64, beta: f64 },
    SumExponential { terms: Vec<ExpTerm> },
    /// Regularized power law `α β / (1 + β t)^{1+γ}` with norm `α / γ`.
    PowerLaw { alpha: f64, beta: f64, gamma: f64 },
    /// Level `levels[k]` on `[breaks[k], breaks[k+1])`. Levels may be negative.
    Piecewise { breaks: Vec<f64>, levels: Vec<f64> },
}

fn positive(name: &str, v: f64) -> Result<()> {
    if v.is_finite() && v > 0.0 {
        Ok(())
    } else {
        Err(HawkesError::InvalidKernel(format!("{name} must be finite and > 0, got {v}")))
    }
}

impl Kernel {
    pub fn exponential(alpha: f64, beta: f64) -> Result<Self> {
        let k = Kernel::Exponential { alpha, beta };
        k.validate()?;
        Ok(k)
    }

    pub fn sum_exponential(terms: &[(f64, f64)]) -> Result<Self> {
        let k = Kernel::SumExponential {
            terms: terms.iter().map(|&(alpha, beta)| ExpTerm { alpha, beta }).collect(),
        };
        k.validate()?;
        Ok(k)
    }

    pub fn power_law(alpha: f64, beta: f64, gamma: f64) -> Result<Self> {
        let k = Kernel::PowerLaw { alpha, beta, gamma };
        k.validate()?;
        Ok(k)
    }

    pub fn piecewise(breaks: Vec<f64>, levels: Vec<f64>) -> Result<Self> {
        let k = Kernel::Piecewise { breaks, levels };
        k.validate()?;
        Ok(k)
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            Kernel::Zero => Ok(()),
            Kernel::Exponential { alpha, beta } => {
                positive("alpha", *alpha)?;
                positive("beta", *beta)
            }
            Kernel::SumExponential { terms } => {
                if terms.is_empty() {
                    return Err(HawkesError::InvalidKernel("sum of exponentials needs at least one term".into()));
                }
                for t in terms {
                    positive("alpha", t.alpha)?;
                    positive("beta", t.beta)?;
                }
                Ok(())
            }
            Kernel::PowerLaw { alpha, beta, gamma } => {
                positive("alpha", *alpha)?;
                positive("beta", *beta)?;
                if !(gamma.is_finite() && *gamma > 0.0) {
                    return Err(HawkesError::NonIntegrable(format!("power-law tail exponent gamma={gamma} must be > 0")));
                }
                Ok(())
            }
            Kernel::Piecewise { breaks, levels } => {
                if breaks.len() != levels.len() + 1 || levels.is_empty() {
                    return Err(HawkesError::InvalidKernel(format!(
                        "piecewise kernel needs n+1 breaks for n levels (got {} breaks, {} levels)",
                        breaks.len(),
                        levels.len()
                    )));
                }
                if breaks[0] < 0.0 || !breaks.iter().all(|b| b.is_finite()) {
                    return Err(HawkesError::InvalidKernel("piecewise breaks must be finite and start at t >= 0".into()));
                }
                if !breaks.windows(2).all(|w| w[0] < w[1]) {
                    return Err(HawkesError::InvalidKernel("piecewise breaks must be strictly increasing".into()));
                }
                if !levels.iter().all(|l| l.is_finite()) {
                    return Err(HawkesError::InvalidKernel("piecewise levels must be finite".into()));
                }
                Ok(())
            }
        }
    }

    pub fn family_name(&self) -> &'static str {
        match self {
            Kernel::Zero => "zero",
            Kernel::Exponential { .. } => "exponential",
            Kernel::SumExponential { .. } => "sum_exponential",
            Kernel::PowerLaw { .. } => "power_law",
            Kernel::Piecewise { .. } => "piecewise",
        }
    }

    pub fn is_zero(&self) -> bool {
        matches!(self, Kernel::Zero)
    }

    /// Exponential terms, if the kernel belongs to the (sum-of-)exponential family.
    /// The zero kernel has an empty term list.
    pub fn exp_terms(&self) -> Option<Vec<ExpTerm>> {
        match self {
            Kernel::Zero => Some(Vec::new()),
            Kernel::Exponential { alpha, beta } => Some(vec![ExpTerm { alpha: *alpha, beta: *beta }]),
            Kernel::SumExponential { terms } => Some(terms.clone()),
            _ => None,
        }
    }

    pub fn is_non_negative(&self) -> bool {
        match self {
            Kernel::Piecewise { levels, .. } => levels.iter().all(|l| *l >= 0.0),
            _ => true,
        }
    }

    /// `φ(t)`; exactly zero for `t < 0`.
    pub fn eval(&self, t: f64) -> f64 {
        if t < 0.0 {
            return 0.0;
        }
        match self {
            Kernel::Zero => 0.0,
            Kernel::Exponential { alpha, beta } => alpha * beta * (-beta * t).exp(),
            Kernel::SumExponential { terms } => terms.iter().map(|e| e.alpha * e.beta * (-e.beta * t).exp()).sum(),
            Kernel::PowerLaw { alpha, beta, gamma } => alpha * beta * (1.0 + beta * t).powf(-1.0 - gamma),
            Kernel::Piecewise { breaks, levels } => match locate(breaks, t) {
                Some(k) => levels[k],
                None => 0.0,
            },
        }
    }

    /// Signed integral `∫_0^∞ φ`.
    pub fn integral(&self) -> f64 {
        match self {
            Kernel::Zero => 0.0,
            Kernel::Exponential { alpha, .. } => *alpha,
            Kernel::SumExponential { terms } => terms.iter().map(|e| e.alpha).sum(),
            Kernel::PowerLaw { alpha, gamma, .. } => alpha / gamma,
            Kernel::Piecewise { breaks, levels } => {
                levels.iter().zip(breaks.windows(2)).map(|(l, w)| l * (w[1] - w[0])).sum()
            }
        }
    }

    /// L1 norm `∫ |φ|`.
    pub fn l1_norm(&self) -> Result<f64> {
        self.validate()?;
        Ok(match self {
            Kernel::Piecewise { breaks, levels } => {
                levels.iter().zip(breaks.windows(2)).map(|(l, w)| l.abs() * (w[1] - w[0])).sum()
            }
            other => other.integral(),
        })
    }

    /// Signed cumulative integral `∫_0^x φ`.
    pub fn cumulative(&self, x: f64) -> f64 {
        if x <= 0.0 {
            return 0.0;
        }
        match self {
            Kernel::Zero => 0.0,
            Kernel::Exponential { alpha, beta } => -alpha * (-beta * x).exp_m1(),
            Kernel::SumExponential { terms } => terms.iter().map(|e| -e.alpha * (-e.beta * x).exp_m1()).sum(),
            Kernel::PowerLaw { alpha, beta, gamma } => alpha / gamma * (1.0 - (1.0 + beta * x).powf(-gamma)),
            Kernel::Piecewise { breaks, levels } => {
                let mut s = 0.0;
                for (l, w) in levels.iter().zip(breaks.windows(2)) {
                    if x <= w[0] {
                        break;
                    }
                    s += l * (x.min(w[1]) - w[0]);
                }
                s
            }
        }
    }

    /// `sup_{u >= t} max(φ(u), 0)`: a non-increasing envelope of the positive part.
    pub fn envelope(&self, t: f64) -> f64 {
        let t = t.max(0.0);
        match self {
            Kernel::Piecewise { breaks, levels } => {
                let mut m = 0.0f64;
                for (k, l) in levels.iter().enumerate().rev() {
                    if breaks[k + 1] <= t {
                        break;
                    }
                    m = m.max(*l);
                }
                m
            }
            other => other.eval(t),
        }
    }

    /// Time beyond which the remaining absolute mass is below
    /// [`SUPPORT_TAIL`] of the norm.
    pub fn effective_support(&self) -> f64 {
        let ln_tail = -SUPPORT_TAIL.ln();
        match self {
            Kernel::Zero => 0.0,
            Kernel::Exponential { beta, .. } => ln_tail / beta,
            Kernel::SumExponential { terms } => {
                let total: f64 = terms.iter().map(|e| e.alpha).sum();
                let tail = |t: f64| terms.iter().map(|e| e.alpha * (-e.beta * t).exp()).sum::<f64>() / total;
                let mut hi = terms.iter().map(|e| ln_tail / e.beta).fold(0.0, f64::max);
                while tail(hi) > SUPPORT_TAIL {
                    hi *= 2.0;
                }
                let mut lo = 0.0;
                for _ in 0..100 {
                    let mid = 0.5 * (lo + hi);
                    if tail(mid) > SUPPORT_TAIL {
                        lo = mid;
                    } else {
                        hi = mid;
                    }
                }
                hi
            }
            Kernel::PowerLaw { beta, gamma, .. } => ((ln_tail / gamma).exp() - 1.0) / beta,
            Kernel::Piecewise { breaks, levels } => match levels.iter().rposition(|l| *l != 0.0) {
                Some(k) => breaks[k + 1],
                None => 0.0,
            },
        }
    }

    /// Shortest characteristic time scale of the kernel shape.
    pub fn time_scale(&self) -> f64 {
        match self {
            Kernel::Zero => f64::INFINITY,
            Kernel::Exponential { beta, .. } => 1.0 / beta,
            // initial log-decay rate of the power law is β(1+γ)
            Kernel::PowerLaw { beta, gamma, .. } => 1.0 / (beta * (1.0 + gamma)),
            Kernel::SumExponential { terms } => terms.iter().map(|e| 1.0 / e.beta).fold(f64::INFINITY, f64::min),
            Kernel::Piecewise { breaks, .. } => breaks.windows(2).map(|w| w[1] - w[0]).fold(f64::INFINITY, f64::min),
        }
    }

    /// Largest `Re z` (exclusive) for which the transform converges.
    /// Power laws converge on the closed half-plane `Re z <= 0`.
    pub fn convergence_abscissa(&self) -> f64 {
        match self {
            Kernel::Zero | Kernel::Piecewise { .. } => f64::INFINITY,
            Kernel::Exponential { beta, .. } => *beta,
            Kernel::SumExponential { terms } => terms.iter().map(|e| e.beta).fold(f64::INFINITY, f64::min),
            Kernel::PowerLaw { .. } => 0.0,
        }
    }

    /// Laplace transform `φ̂(z) = ∫ φ(t) e^{z t} dt`.
    pub fn laplace(&self, z: Complex64) -> Result<Complex64> {
        let one = Complex64::new(1.0, 0.0);
        match self {
            Kernel::Zero => Ok(Complex64::new(0.0, 0.0)),
            Kernel::Exponential { alpha, beta } => {
                if z.re >= *beta {
                    return Err(HawkesError::Domain(format!("exponential transform diverges for Re z = {} >= beta = {beta}", z.re)));
                }
                Ok(*alpha / (one - z / *beta))
            }
            Kernel::SumExponential { terms } => {
                let mut s = Complex64::new(0.0, 0.0);
                for e in terms {
                    if z.re >= e.beta {
                        return Err(HawkesError::Domain(format!("exponential transform diverges for Re z = {} >= beta = {}", z.re, e.beta)));
                    }
                    s += e.alpha / (one - z / e.beta);
                }
                Ok(s)
            }
            Kernel::PowerLaw { alpha, beta, gamma } => {
                if z.re > 0.0 {
                    return Err(HawkesError::Domain(format!("power-law transform requires Re z <= 0, got {}", z.re)));
                }
                Ok(*alpha * power_law_transform(z / *beta, *gamma))
            }
            Kernel::Piecewise { breaks, levels } => {
                let mut s = Complex64::new(0.0, 0.0);
                for (l, w) in levels.iter().zip(breaks.windows(2)) {
                    let seg = if z.norm() * (w[1] - w[0]).max(w[1].abs()) < 1e-8 {
                        // Series for tiny |z| avoids cancellation in the difference of exponentials.
                        let a = w[0];
                        let b = w[1];
                        Complex64::new(b - a, 0.0) + z * (b * b - a * a) / 2.0 + z * z * (b.powi(3) - a.powi(3)) / 6.0
                    } else {
                        ((z * w[1]).exp() - (z * w[0]).exp()) / z
                    };
                    s += *l * seg;
                }
                Ok(s)
            }
        }
    }
}

fn locate(breaks: &[f64], t: f64) -> Option<usize> {
    if t < breaks[0] || t >= *breaks.last().unwrap() {
        return None;
    }
    let k = breaks.partition_point(|b| *b <= t);
    Some(k - 1)
}

/// `∫_0^∞ (1+u)^{-1-γ} e^{s u} du` for `Re s <= 0`.
///
/// Gauss–Legendre on geometrically growing panels whose width is capped at
/// one oscillation period; once `|s|(1+u)` is large the remaining tail is
/// summed with the integration-by-parts asymptotic series.
fn power_law_transform(s: Complex64, gamma: f64) -> Complex64 {
    if s.norm() == 0.0 {
        return Complex64::new(1.0 / gamma, 0.0);
    }
    thread_local! {
        static RULE: GaussRule = GaussRule::new(20);
    }
    let f = |u: f64| (1.0 + u).powf(-1.0 - gamma);
    let abs_s = s.norm();
    let max_width = std::f64::consts::PI / abs_s;
    let mut acc = Complex64::new(0.0, 0.0);
    let mut u = 0.0f64;
    RULE.with(|rule| loop {
        // Stop on exponential damping or switch to the asymptotic tail.
        let damp = (s.re * u).exp() * (1.0 + u).powf(-gamma) / gamma;
        if damp < 1e-17 * acc.norm().max(1e-300) {
            break;
        }
        if abs_s * (1.0 + u) >= 60.0 {
            acc += asymptotic_tail(s, gamma, u);
            break;
        }
        let width = (1.0 + u).min(max_width);
        let hi = u + width;
        for (x, w) in rule.on(u, hi) {
            acc += w * f(x) * (s * x).exp();
        }
        u = hi;
    });
    acc
}

fn asymptotic_tail(s: Complex64, gamma: f64, u: f64) -> Complex64 {
    // ∫_U^∞ f e^{su} = -e^{sU} Σ_k (-1)^k f^{(k)}(U) / s^{k+1},
    // f^{(k)}(U) = (-1)^k (1+γ)…(k+γ) (1+U)^{-1-γ-k}.
    let x = 1.0 + u;
    let mut coeff = x.powf(-1.0 - gamma); // |f^{(k)}(U)|
    let mut inv_s_pow = 1.0 / s;
    let mut sum = Complex64::new(0.0, 0.0);
    for k in 0..40 {
        let term = coeff * inv_s_pow;
        sum += term;
        if term.norm() < 1e-18 * sum.norm() {
            break;
        }
        coeff *= (k as f64 + 1.0 + gamma) / x;
        inv_s_pow /= s;
    }
    -(s * u).exp() * sum
}

/// Square matrix of kernels; entry `(i, j)` is the effect of component `j`
/// events on the intensity of component `i`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KernelMatrix {
    dim: usize,
    entries: Vec<Kernel>,
}

impl KernelMatrix {
    /// Builds from row-major entries.
    pub fn new(dim: usize, entries: Vec<Kernel>) -> Result<Self> {
        if dim == 0 || entries.len() != dim * dim {
            return Err(HawkesError::InvalidModel(format!(
                "kernel matrix of dimension {dim} needs {} entries, got {}",
                dim * dim,
                entries.len()
            )));
        }
        for k in &entries {
            k.validate()?;
        }
        Ok(Self { dim, entries })
    }

    pub fn from_rows(rows: Vec<Vec<Kernel>>) -> Result<Self> {
        let dim = rows.len();
        if rows.iter().any(|r| r.len() != dim) {
            return Err(HawkesError::InvalidModel("kernel matrix must be square".into()));
        }
        Self::new(dim, rows.into_iter().flatten().collect())
    }

    pub fn zeros(dim: usize) -> Self {
        Self { dim, entries: vec![Kernel::Zero; dim * dim] }
    }

    pub fn diagonal(kernels: Vec<Kernel>) -> Result<Self> {
        let dim = kernels.len();
        let mut m = Self::zeros(dim);
        for (i, k) in kernels.into_iter().enumerate() {
            m.entries[i * dim + i] = k;
        }
        Self::new(dim, m.entries)
    }

    /// The bivariate layout `[[self, cross], [cross, self]]`.
    pub fn symmetric_bivariate(self_kernel: Kernel, cross_kernel: Kernel) -> Result<Self> {
        Self::new(2, vec![self_kernel.clone(), cross_kernel.clone(), cross_kernel, self_kernel])
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn get(&self, i: usize, j: usize) -> &Kernel {
        &self.entries[i * self.dim + j]
    }

    pub fn set(&mut self, i: usize, j: usize, k: Kernel) -> Result<()> {
        k.validate()?;
        self.entries[i * self.dim + j] = k;
        Ok(())
    }

    pub fn entries(&self) -> &[Kernel] {
        &self.entries
    }

    pub fn iter(&self) -> impl Iterator<Item = (usize, usize, &Kernel)> {
        let d = self.dim;
        self.entries.iter().enumerate().map(move |(n, k)| (n / d, n % d, k))
    }

    /// `||Φ||`: entry-wise L1 norms.
    pub fn norm_matrix(&self) -> Result<DMatrix<f64>> {
        let mut m = DMatrix::zeros(self.dim, self.dim);
        for (i, j, k) in self.iter() {
            m[(i, j)] = k.l1_norm()?;
        }
        Ok(m)
    }

    /// Entry-wise signed integrals, `Φ̂(0)`.
    pub fn integral_matrix(&self) -> DMatrix<f64> {
        DMatrix::from_fn(self.dim, self.dim, |i, j| self.get(i, j).integral())
    }

    pub fn eval(&self, t: f64) -> DMatrix<f64> {
        DMatrix::from_fn(self.dim, self.dim, |i, j| self.get(i, j).eval(t))
    }

    pub fn laplace(&self, z: Complex64) -> Result<DMatrix<Complex64>> {
        let mut m = DMatrix::zeros(self.dim, self.dim);
        for (i, j, k) in self.iter() {
            m[(i, j)] = k.laplace(z)?;
        }
        Ok(m)
    }

    pub fn is_non_negative(&self) -> bool {
        self.entries.iter().all(Kernel::is_non_negative)
    }

    /// All entries are zero or (sums of) exponentials.
    pub fn is_exponential_family(&self) -> bool {
        self.entries.iter().all(|k| k.exp_terms().is_some())
    }

    pub fn effective_support(&self) -> f64 {
        self.entries.iter().map(Kernel::effective_support).fold(0.0, f64::max)
    }

    pub fn time_scale(&self) -> f64 {
        self.entries.iter().map(Kernel::time_scale).fold(f64::INFINITY, f64::min)
    }

    pub fn stability(&self) -> Result<StabilityReport> {
        let norms = self.norm_matrix()?;
        let (radius, method) = spectral_radius(&norms);
        Ok(StabilityReport {
            norms: (0..self.dim).map(|i| (0..self.dim).map(|j| norms[(i, j)]).collect()).collect(),
            spectral_radius: radius,
            stable: radius < 1.0,
            method,
        })
    }
}

/// Result of the stability check on `||Φ||`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StabilityReport {
    /// Row-major norm matrix.
    pub norms: Vec<Vec<f64>>,
    pub spectral_radius: f64,
    pub stable: bool,
    pub method: RadiusMethod,
}
