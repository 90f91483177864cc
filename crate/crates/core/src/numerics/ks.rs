//! Kolmogorov–Smirnov statistics.

use std::f64::consts::PI;

/// Result of a Kolmogorov–Smirnov test.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct KsTest {
    pub statistic: f64,
    pub p_value: f64,
    /// Effective sample size used for the asymptotic p-value.
    pub n: f64,
}

/// Survival function of the Kolmogorov distribution, `P(K > x)`.
pub fn kolmogorov_survival(x: f64) -> f64 {
    if x <= 0.0 {
        return 1.0;
    }
    if x < 1.18 {
        // Jacobi-theta form converges fast for small x.
        let c = -PI * PI / (8.0 * x * x);
        let mut s = 0.0;
        for k in 1..=20 {
            let m = (2 * k - 1) as f64;
            s += (c * m * m).exp();
        }
        (1.0 - (2.0 * PI).sqrt() / x * s).clamp(0.0, 1.0)
    } else {
        let mut s = 0.0;
        for k in 1..=100 {
            let kf = k as f64;
            let term = (-2.0 * kf * kf * x * x).exp();
            s += if k % 2 == 1 { term } else { -term };
            if term < 1e-17 {
                break;
            }
        }
        (2.0 * s).clamp(0.0, 1.0)
    }
}

fn p_value(d: f64, n_eff: f64) -> f64 {
    let sq = n_eff.sqrt();
    kolmogorov_survival((sq + 0.12 + 0.11 / sq) * d)
}

/// One-sample test of `samples` against a continuous CDF.
pub fn ks_one_sample<F: Fn(f64) -> f64>(samples: &[f64], cdf: F) -> KsTest {
    let n = samples.len();
    if n == 0 {
        return KsTest { statistic: 0.0, p_value: 1.0, n: 0.0 };
    }
    let mut xs = samples.to_vec();
    xs.sort_by(f64::total_cmp);
    let nf = n as f64;
    let mut d: f64 = 0.0;
    for (i, &x) in xs.iter().enumerate() {
        let f = cdf(x);
        d = d.max((i as f64 + 1.0) / nf - f).max(f - i as f64 / nf);
    }
    KsTest { statistic: d, p_value: p_value(d, nf), n: nf }
}

/// One-sample test against the unit-rate exponential law.
pub fn ks_unit_exponential(samples: &[f64]) -> KsTest {
    ks_one_sample(samples, |x| if x <= 0.0 { 0.0 } else { -(-x).exp_m1() })
}

/// Two-sample test.
pub fn ks_two_sample(a: &[f64], b: &[f64]) -> KsTest {
    if a.is_empty() || b.is_empty() {
        return KsTest { statistic: 0.0, p_value: 1.0, n: 0.0 };
    }
    let mut xa = a.to_vec();
    let mut xb = b.to_vec();
    xa.sort_by(f64::total_cmp);
    xb.sort_by(f64::total_cmp);
    let (na, nb) = (xa.len() as f64, xb.len() as f64);
    let (mut i, mut j) = (0usize, 0usize);
    let mut d: f64 = 0.0;
    while i < xa.len() && j < xb.len() {
        let x = xa[i].min(xb[j]);
        while i < xa.len() && xa[i] <= x {
            i += 1;
        }
        while j < xb.len() && xb[j] <= x {
            j += 1;
        }
        d = d.max((i as f64 / na - j as f64 / nb).abs());
    }
    let n_eff = na * nb / (na + nb);
    KsTest { statistic: d, p_value: p_value(d, n_eff), n: n_eff }
}
