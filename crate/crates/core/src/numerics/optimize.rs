//! BFGS with a strong-Wolfe line search, plus a central-difference gradient.

use nalgebra::{DMatrix, DVector};

#[derive(Debug, Clone)]
pub struct BfgsConfig {
    pub max_iterations: usize,
    /// Convergence when the max-norm of the gradient drops below this.
    pub gradient_tolerance: f64,
}

impl Default for BfgsConfig {
    fn default() -> Self {
        Self { max_iterations: 500, gradient_tolerance: 1e-6 }
    }
}

#[derive(Debug, Clone)]
pub struct IterationRecord {
    pub iteration: usize,
    pub value: f64,
    pub gradient_norm: f64,
}

#[derive(Debug, Clone)]
pub struct BfgsOutcome {
    pub x: Vec<f64>,
    pub value: f64,
    pub gradient_norm: f64,
    pub iterations: usize,
    pub converged: bool,
    pub trace: Vec<IterationRecord>,
}

fn max_norm(g: &DVector<f64>) -> f64 {
    g.iter().fold(0.0f64, |m, v| m.max(v.abs()))
}

/// Minimizes `f`, which returns the value and gradient at a point.
///
/// Non-finite values are treated as +∞ by the line search, so objectives may
/// signal infeasible regions that way.
pub fn minimize_bfgs<F>(mut f: F, x0: &[f64], cfg: &BfgsConfig) -> BfgsOutcome
where
    F: FnMut(&[f64]) -> (f64, Vec<f64>),
{
    let n = x0.len();
    let mut x = DVector::from_column_slice(x0);
    let (mut fx, g0) = f(x.as_slice());
    let mut g = DVector::from_vec(g0);
    let mut h = DMatrix::<f64>::identity(n, n);
    let mut trace = vec![IterationRecord { iteration: 0, value: fx, gradient_norm: max_norm(&g) }];
    let mut converged = max_norm(&g) < cfg.gradient_tolerance;
    let mut first_step = true;
    let mut iterations = 0;

    while !converged && iterations < cfg.max_iterations {
        iterations += 1;
        let mut p = -(&h * &g);
        if p.dot(&g) >= 0.0 {
            h = DMatrix::identity(n, n);
            p = -g.clone();
        }
        let mut alpha0 = 1.0;
        if first_step {
            // Scale the first trial step to unit length in parameter space.
            alpha0 = (1.0 / p.norm()).min(1.0);
            first_step = false;
        }
        let Some((alpha, fnew, gnew)) = wolfe_search(&mut f, &x, fx, &g, &p, alpha0) else {
            break;
        };
        let s = &p * alpha;
        let y = &gnew - &g;
        x += &s;
        let improvement = fx - fnew;
        fx = fnew;
        g = gnew;
        let sy = s.dot(&y);
        if sy > 1e-300 {
            if iterations == 1 {
                // Initial Hessian scaling (Nocedal & Wright 6.20).
                h = DMatrix::identity(n, n) * (sy / y.dot(&y));
            }
            let rho = 1.0 / sy;
            let i = DMatrix::<f64>::identity(n, n);
            let a = &i - (&s * y.transpose()) * rho;
            let b = &i - (&y * s.transpose()) * rho;
            h = &a * &h * &b + (&s * s.transpose()) * rho;
        }
        let gn = max_norm(&g);
        trace.push(IterationRecord { iteration: iterations, value: fx, gradient_norm: gn });
        converged = gn < cfg.gradient_tolerance;
        if !converged && improvement.abs() <= 1e-15 * fx.abs().max(1.0) && s.norm() < 1e-14 {
            break;
        }
    }
    BfgsOutcome {
        x: x.as_slice().to_vec(),
        value: fx,
        gradient_norm: max_norm(&g),
        iterations,
        converged,
        trace,
    }
}

type Probe = (f64, DVector<f64>);

fn eval<F>(f: &mut F, x: &DVector<f64>, p: &DVector<f64>, a: f64) -> Probe
where
    F: FnMut(&[f64]) -> (f64, Vec<f64>),
{
    let xa = x + p * a;
    let (v, g) = f(xa.as_slice());
    let v = if v.is_finite() { v } else { f64::INFINITY };
    (v, DVector::from_vec(g))
}

fn wolfe_search<F>(
    f: &mut F,
    x: &DVector<f64>,
    f0: f64,
    g0: &DVector<f64>,
    p: &DVector<f64>,
    alpha_init: f64,
) -> Option<(f64, f64, DVector<f64>)>
where
    F: FnMut(&[f64]) -> (f64, Vec<f64>),
{
    const C1: f64 = 1e-4;
    const C2: f64 = 0.9;
    let d0 = g0.dot(p);
    let mut a_prev = 0.0;
    let mut f_prev = f0;
    let mut d_prev = d0;
    let mut a = alpha_init;
    for i in 0..40 {
        let (fa, ga) = eval(f, x, p, a);
        if !fa.is_finite() {
            a = 0.5 * (a_prev + a);
            continue;
        }
        let da = ga.dot(p);
        if fa > f0 + C1 * a * d0 || (i > 0 && fa >= f_prev) {
            return zoom(f, x, f0, d0, p, (a_prev, f_prev, d_prev), (a, fa, da));
        }
        if da.abs() <= -C2 * d0 {
            return Some((a, fa, ga));
        }
        if da >= 0.0 {
            return zoom(f, x, f0, d0, p, (a, fa, da), (a_prev, f_prev, d_prev));
        }
        a_prev = a;
        f_prev = fa;
        d_prev = da;
        a *= 2.0;
    }
    None
}

fn zoom<F>(
    f: &mut F,
    x: &DVector<f64>,
    f0: f64,
    d0: f64,
    p: &DVector<f64>,
    mut lo: (f64, f64, f64),
    mut hi: (f64, f64, f64),
) -> Option<(f64, f64, DVector<f64>)>
where
    F: FnMut(&[f64]) -> (f64, Vec<f64>),
{
    const C1: f64 = 1e-4;
    const C2: f64 = 0.9;
    let mut best: Option<(f64, f64, DVector<f64>)> = None;
    for _ in 0..60 {
        // Cubic interpolation would be tighter; bisection with a quadratic
        // guess is robust enough here.
        let (al, fl, dl) = lo;
        let (ah, fh, _) = hi;
        let mut a = {
            let denom = 2.0 * (fh - fl - dl * (ah - al));
            if denom.abs() > 1e-300 {
                al - dl * (ah - al) * (ah - al) / denom
            } else {
                0.5 * (al + ah)
            }
        };
        let (mn, mx) = if al < ah { (al, ah) } else { (ah, al) };
        let margin = 0.1 * (mx - mn);
        if !a.is_finite() || a < mn + margin || a > mx - margin {
            a = 0.5 * (al + ah);
        }
        let (fa, ga) = eval(f, x, p, a);
        let da = ga.dot(p);
        if fa.is_finite() && fa < f0 && best.as_ref().is_none_or(|b| fa < b.1) {
            best = Some((a, fa, ga.clone()));
        }
        if fa > f0 + C1 * a * d0 || fa >= fl {
            hi = (a, fa, da);
        } else {
            if da.abs() <= -C2 * d0 {
                return Some((a, fa, ga));
            }
            if da * (ah - al) >= 0.0 {
                hi = lo;
            }
            lo = (a, fa, da);
        }
        if (hi.0 - lo.0).abs() < 1e-16 * lo.0.abs().max(1e-300) {
            break;
        }
    }
    best
}

/// Central-difference gradient with relative step `rel_step`.
pub fn central_gradient<F: FnMut(&[f64]) -> f64>(mut f: F, x: &[f64], rel_step: f64) -> Vec<f64> {
    let mut xp = x.to_vec();
    (0..x.len())
        .map(|i| {
            let h = rel_step * x[i].abs().max(1.0);
            xp[i] = x[i] + h;
            let fp = f(&xp);
            xp[i] = x[i] - h;
            let fm = f(&xp);
            xp[i] = x[i];
            (fp - fm) / (2.0 * h)
        })
        .collect()
}
