//! Hawkes model definition: baseline, kernel matrix, transfer function and
//! optional mark law, plus the `hawkes-model v1` text format.
//!
//! ```text
//! hawkes-model v1
//! dimension = 2
//! baseline = 1.0, 1.0
//! transfer = identity
//! kernel.0.0 = exponential alpha=0.2 beta=1.0
//! kernel.0.1 = power_law alpha=0.1 beta=1.0 gamma=0.5
//! kernel.1.0 = sum_exponential alpha=0.1,0.05 beta=1.0,10.0
//! kernel.1.1 = piecewise breaks=0.0,1.0,2.0 levels=0.1,-0.05
//! mark.law = exponential mean=1.5
//! mark.impact.0.0 = power scale=1.0 exponent=1.0
//! ```
//!
//! Entries that are not listed are zero kernels; unlisted impacts are `χ ≡ 1`.
//! Serialization writes floats in shortest round-trip form, so
//! `parse(serialize(m)) == m` bit for bit.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{HawkesError, Result};
use crate::kernels::{ExpTerm, Kernel, KernelMatrix, StabilityReport};

/// Margin below 1 beyond which linear-theory operations refuse a model.
pub const CRITICALITY_MARGIN: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Transfer {
    #[default]
    Identity,
    /// `h(x) = max(x, 0)`.
    PositivePart,
}

/// I.i.d. mark distribution.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "law", rename_all = "snake_case")]
pub enum MarkLaw {
    Constant { value: f64 },
    Exponential { mean: f64 },
    Uniform { low: f64, high: f64 },
}

impl MarkLaw {
    fn validate(&self) -> Result<()> {
        let ok = match *self {
            MarkLaw::Constant { value } => value.is_finite() && value >= 0.0,
            MarkLaw::Exponential { mean } => mean.is_finite() && mean > 0.0,
            MarkLaw::Uniform { low, high } => low.is_finite() && high.is_finite() && 0.0 <= low && low < high,
        };
        if ok {
            Ok(())
        } else {
            Err(HawkesError::InvalidModel(format!("invalid mark law {self:?}")))
        }
    }

    /// `E[ξ^p]`.
    pub fn moment(&self, p: f64) -> f64 {
        match *self {
            MarkLaw::Constant { value } => value.powf(p),
            MarkLaw::Exponential { mean } => mean.powf(p) * statrs::function::gamma::gamma(1.0 + p),
            MarkLaw::Uniform { low, high } => {
                if (p + 1.0).abs() < 1e-12 {
                    (high.ln() - low.ln()) / (high - low)
                } else {
                    (high.powf(p + 1.0) - low.powf(p + 1.0)) / ((p + 1.0) * (high - low))
                }
            }
        }
    }

    pub fn cdf(&self, x: f64) -> f64 {
        match *self {
            MarkLaw::Constant { value } => {
                if x >= value {
                    1.0
                } else {
                    0.0
                }
            }
            MarkLaw::Exponential { mean } => {
                if x <= 0.0 {
                    0.0
                } else {
                    -(-x / mean).exp_m1()
                }
            }
            MarkLaw::Uniform { low, high } => ((x - low) / (high - low)).clamp(0.0, 1.0),
        }
    }
}

/// Factorized mark effect `χ(ξ) = scale · ξ^exponent`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MarkImpact {
    pub scale: f64,
    pub exponent: f64,
}

impl MarkImpact {
    pub const UNIT: MarkImpact = MarkImpact { scale: 1.0, exponent: 0.0 };

    pub fn eval(&self, xi: f64) -> f64 {
        if self.exponent == 0.0 {
            self.scale
        } else {
            self.scale * xi.powf(self.exponent)
        }
    }

    pub fn mean(&self, law: &MarkLaw) -> f64 {
        if self.exponent == 0.0 {
            self.scale
        } else {
            self.scale * law.moment(self.exponent)
        }
    }
}

/// Mark law together with the per-entry impact functions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MarkSpec {
    pub law: MarkLaw,
    /// Row-major `D×D` impacts.
    pub impact: Vec<MarkImpact>,
}

/// Baseline `μ`, kernel matrix `Φ`, transfer `h` and optional marks.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HawkesModel {
    baseline: Vec<f64>,
    kernels: KernelMatrix,
    transfer: Transfer,
    marks: Option<MarkSpec>,
}

impl HawkesModel {
    /// Linear model with identity transfer.
    pub fn new(baseline: Vec<f64>, kernels: KernelMatrix) -> Result<Self> {
        Self::with_options(baseline, kernels, Transfer::Identity, None)
    }

    pub fn with_options(baseline: Vec<f64>, kernels: KernelMatrix, transfer: Transfer, marks: Option<MarkSpec>) -> Result<Self> {
        let d = kernels.dim();
        if baseline.len() != d {
            return Err(HawkesError::InvalidModel(format!(
                "baseline has {} entries but kernel matrix is {d}x{d}",
                baseline.len()
            )));
        }
        if let Some(b) = baseline.iter().find(|b| !(b.is_finite() && **b >= 0.0)) {
            return Err(HawkesError::InvalidModel(format!("baseline rates must be finite and >= 0, got {b}")));
        }
        if transfer == Transfer::Identity && !kernels.is_non_negative() {
            return Err(HawkesError::InvalidModel(
                "identity transfer requires non-negative kernels; use positive_part for inhibition".into(),
            ));
        }
        if let Some(m) = &marks {
            m.law.validate()?;
            if m.impact.len() != d * d {
                return Err(HawkesError::InvalidModel(format!("mark impact needs {} entries", d * d)));
            }
            if m.impact.iter().any(|c| !(c.scale.is_finite() && c.scale >= 0.0 && c.exponent.is_finite())) {
                return Err(HawkesError::InvalidModel("mark impact scale must be >= 0 and exponents finite".into()));
            }
        }
        Ok(Self { baseline, kernels, transfer, marks })
    }

    /// 1D model `μ`, `φ`.
    pub fn univariate(mu: f64, kernel: Kernel) -> Result<Self> {
        Self::new(vec![mu], KernelMatrix::new(1, vec![kernel])?)
    }

    /// Symmetric bivariate model with self kernel `φ^(s)` and cross kernel `φ^(c)`.
    pub fn symmetric_bivariate(mu: f64, self_kernel: Kernel, cross_kernel: Kernel) -> Result<Self> {
        Self::new(vec![mu, mu], KernelMatrix::symmetric_bivariate(self_kernel, cross_kernel)?)
    }

    pub fn dim(&self) -> usize {
        self.kernels.dim()
    }

    pub fn baseline(&self) -> &[f64] {
        &self.baseline
    }

    pub fn kernels(&self) -> &KernelMatrix {
        &self.kernels
    }

    pub fn transfer(&self) -> Transfer {
        self.transfer
    }

    pub fn marks(&self) -> Option<&MarkSpec> {
        self.marks.as_ref()
    }

    pub fn baseline_vector(&self) -> DVector<f64> {
        DVector::from_column_slice(&self.baseline)
    }

    pub fn stability(&self) -> Result<StabilityReport> {
        self.kernels.stability()
    }

    /// Norm matrix including the mean mark boost `E[χ^{ij}(ξ)]`.
    pub fn effective_norm_matrix(&self) -> Result<DMatrix<f64>> {
        let mut n = self.kernels.norm_matrix()?;
        if let Some(m) = &self.marks {
            let d = self.dim();
            for i in 0..d {
                for j in 0..d {
                    n[(i, j)] *= m.impact[i * d + j].mean(&m.law);
                }
            }
        }
        Ok(n)
    }

    /// Branching ratio including mark boosts.
    pub fn effective_branching_ratio(&self) -> Result<f64> {
        Ok(crate::numerics::spectral_radius(&self.effective_norm_matrix()?).0)
    }

    /// Requires a linear, stable, not near-critical model.
    pub fn require_linear_stable(&self) -> Result<StabilityReport> {
        if self.transfer != Transfer::Identity {
            return Err(HawkesError::InvalidModel("operation requires the identity transfer".into()));
        }
        let rep = self.stability()?;
        check_radius(rep.spectral_radius)?;
        Ok(rep)
    }

    /// Builder-style replacement of the kernel matrix.
    pub fn with_kernels(&self, kernels: KernelMatrix) -> Result<Self> {
        Self::with_options(self.baseline.clone(), kernels, self.transfer, self.marks.clone())
    }

    pub fn with_baseline(&self, baseline: Vec<f64>) -> Result<Self> {
        Self::with_options(baseline, self.kernels.clone(), self.transfer, self.marks.clone())
    }

    /// Canonical `hawkes-model v1` text.
    pub fn to_spec_string(&self) -> String {
        let d = self.dim();
        let mut s = String::new();
        s.push_str("hawkes-model v1\n");
        let _ = writeln!(s, "dimension = {d}");
        let _ = writeln!(s, "baseline = {}", join(&self.baseline));
        let _ = writeln!(
            s,
            "transfer = {}",
            match self.transfer {
                Transfer::Identity => "identity",
                Transfer::PositivePart => "positive_part",
            }
        );
        for (i, j, k) in self.kernels.iter() {
            let _ = writeln!(s, "kernel.{i}.{j} = {}", kernel_to_spec(k));
        }
        if let Some(m) = &self.marks {
            let law = match m.law {
                MarkLaw::Constant { value } => format!("constant value={}", fmt_f64(value)),
                MarkLaw::Exponential { mean } => format!("exponential mean={}", fmt_f64(mean)),
                MarkLaw::Uniform { low, high } => format!("uniform low={} high={}", fmt_f64(low), fmt_f64(high)),
            };
            let _ = writeln!(s, "mark.law = {law}");
            for (n, c) in m.impact.iter().enumerate() {
                let _ = writeln!(
                    s,
                    "mark.impact.{}.{} = power scale={} exponent={}",
                    n / d,
                    n % d,
                    fmt_f64(c.scale),
                    fmt_f64(c.exponent)
                );
            }
        }
        s
    }

    pub fn from_spec_str(text: &str) -> Result<Self> {
        let doc = KeyValueDoc::parse(text, "hawkes-model v1")?;
        let (dl, dim) = doc.require("dimension")?;
        let d: usize = dim
            .parse()
            .ok()
            .filter(|d| *d > 0)
            .ok_or_else(|| HawkesError::Parse { line: dl, message: format!("invalid dimension {dim:?}") })?;
        let (bl, base) = doc.require("baseline")?;
        let baseline = parse_list(base, bl)?;
        let transfer = match doc.get("transfer") {
            None => Transfer::Identity,
            Some((_, "identity")) => Transfer::Identity,
            Some((_, "positive_part")) => Transfer::PositivePart,
            Some((l, other)) => return Err(HawkesError::Parse { line: l, message: format!("unknown transfer {other:?}") }),
        };
        let mut entries = vec![Kernel::Zero; d * d];
        let mut impacts: Vec<Option<MarkImpact>> = vec![None; d * d];
        let mut law = None;
        for (key, (line, value)) in &doc.entries {
            let line = *line;
            if let Some(rest) = key.strip_prefix("kernel.") {
                let (i, j) = parse_index_pair(rest, d, line)?;
                entries[i * d + j] = kernel_from_spec(value, line)?;
            } else if let Some(rest) = key.strip_prefix("mark.impact.") {
                let (i, j) = parse_index_pair(rest, d, line)?;
                let (fam, params) = parse_family(value, line)?;
                if fam != "power" {
                    return Err(HawkesError::Parse { line, message: format!("unknown impact family {fam:?}") });
                }
                impacts[i * d + j] = Some(MarkImpact {
                    scale: params.scalar("scale")?,
                    exponent: params.scalar("exponent")?,
                });
                params.finish()?;
            } else if key == "mark.law" {
                let (fam, params) = parse_family(value, line)?;
                law = Some(match fam {
                    "constant" => MarkLaw::Constant { value: params.scalar("value")? },
                    "exponential" => MarkLaw::Exponential { mean: params.scalar("mean")? },
                    "uniform" => MarkLaw::Uniform { low: params.scalar("low")?, high: params.scalar("high")? },
                    other => return Err(HawkesError::Parse { line, message: format!("unknown mark law {other:?}") }),
                });
                params.finish()?;
            } else if !matches!(key.as_str(), "dimension" | "baseline" | "transfer") {
                return Err(HawkesError::Parse { line, message: format!("unknown key {key:?}") });
            }
        }
        let marks = match law {
            Some(law) => Some(MarkSpec { law, impact: impacts.into_iter().map(|c| c.unwrap_or(MarkImpact::UNIT)).collect() }),
            None => {
                if impacts.iter().any(Option::is_some) {
                    return Err(HawkesError::InvalidModel("mark.impact given without mark.law".into()));
                }
                None
            }
        };
        Self::with_options(baseline, KernelMatrix::new(d, entries)?, transfer, marks)
    }
}

/// Maps a spectral radius onto the stability errors.
pub fn check_radius(radius: f64) -> Result<()> {
    if radius >= 1.0 {
        Err(HawkesError::Unstable { radius })
    } else if radius > 1.0 - CRITICALITY_MARGIN {
        Err(HawkesError::NearCritical {
            radius,
            detail: "only intermediate asymptotics (t well below the criticality time scale) are meaningful".into(),
        })
    } else {
        Ok(())
    }
}

/// Shortest representation that parses back to the same bits.
pub fn fmt_f64(x: f64) -> String {
    format!("{x:?}")
}

fn join(xs: &[f64]) -> String {
    xs.iter().map(|x| fmt_f64(*x)).collect::<Vec<_>>().join(", ")
}

fn join_compact(xs: impl Iterator<Item = f64>) -> String {
    xs.map(fmt_f64).collect::<Vec<_>>().join(",")
}

pub fn kernel_to_spec(k: &Kernel) -> String {
    match k {
        Kernel::Zero => "zero".into(),
        Kernel::Exponential { alpha, beta } => format!("exponential alpha={} beta={}", fmt_f64(*alpha), fmt_f64(*beta)),
        Kernel::SumExponential { terms } => format!(
            "sum_exponential alpha={} beta={}",
            join_compact(terms.iter().map(|t| t.alpha)),
            join_compact(terms.iter().map(|t| t.beta))
        ),
        Kernel::PowerLaw { alpha, beta, gamma } => format!(
            "power_law alpha={} beta={} gamma={}",
            fmt_f64(*alpha),
            fmt_f64(*beta),
            fmt_f64(*gamma)
        ),
        Kernel::Piecewise { breaks, levels } => format!(
            "piecewise breaks={} levels={}",
            join_compact(breaks.iter().copied()),
            join_compact(levels.iter().copied())
        ),
    }
}

pub fn kernel_from_spec(value: &str, line: usize) -> Result<Kernel> {
    let (fam, params) = parse_family(value, line)?;
    let k = match fam {
        "zero" => Kernel::Zero,
        "exponential" => Kernel::Exponential { alpha: params.scalar("alpha")?, beta: params.scalar("beta")? },
        "power_law" => Kernel::PowerLaw {
            alpha: params.scalar("alpha")?,
            beta: params.scalar("beta")?,
            gamma: params.scalar("gamma")?,
        },
        "sum_exponential" => {
            let a = params.list("alpha")?;
            let b = params.list("beta")?;
            if a.len() != b.len() {
                return Err(HawkesError::Parse { line, message: "alpha and beta lists differ in length".into() });
            }
            Kernel::SumExponential { terms: a.into_iter().zip(b).map(|(alpha, beta)| ExpTerm { alpha, beta }).collect() }
        }
        "piecewise" => Kernel::Piecewise { breaks: params.list("breaks")?, levels: params.list("levels")? },
        other => return Err(HawkesError::Parse { line, message: format!("unknown kernel family {other:?}") }),
    };
    params.finish()?;
    k.validate()?;
    Ok(k)
}

fn parse_index_pair(rest: &str, d: usize, line: usize) -> Result<(usize, usize)> {
    let mut it = rest.split('.');
    let parse = |s: Option<&str>| s.and_then(|s| s.parse::<usize>().ok()).filter(|v| *v < d);
    match (parse(it.next()), parse(it.next()), it.next()) {
        (Some(i), Some(j), None) => Ok((i, j)),
        _ => Err(HawkesError::Parse { line, message: format!("bad or out-of-range index {rest:?} for dimension {d}") }),
    }
}

pub(crate) fn parse_f64(s: &str, line: usize) -> Result<f64> {
    s.trim()
        .parse::<f64>()
        .map_err(|_| HawkesError::Parse { line, message: format!("not a number: {s:?}") })
}

pub(crate) fn parse_list(s: &str, line: usize) -> Result<Vec<f64>> {
    s.split(',').map(|x| parse_f64(x, line)).collect()
}

/// `family key=value key=value` parameters with use tracking.
pub(crate) struct Params<'a> {
    line: usize,
    map: BTreeMap<&'a str, &'a str>,
    used: std::cell::RefCell<Vec<&'a str>>,
}

impl<'a> Params<'a> {
    fn raw(&self, key: &'a str) -> Result<&'a str> {
        self.used.borrow_mut().push(key);
        self.map
            .get(key)
            .copied()
            .ok_or_else(|| HawkesError::Parse { line: self.line, message: format!("missing parameter {key:?}") })
    }

    pub fn scalar(&self, key: &'a str) -> Result<f64> {
        parse_f64(self.raw(key)?, self.line)
    }

    pub fn list(&self, key: &'a str) -> Result<Vec<f64>> {
        parse_list(self.raw(key)?, self.line)
    }

    pub fn finish(&self) -> Result<()> {
        let used = self.used.borrow();
        match self.map.keys().find(|k| !used.contains(k)) {
            Some(k) => Err(HawkesError::Parse { line: self.line, message: format!("unexpected parameter {k:?}") }),
            None => Ok(()),
        }
    }
}

pub(crate) fn parse_family(value: &str, line: usize) -> Result<(&str, Params<'_>)> {
    let mut tokens = value.split_whitespace();
    let fam = tokens.next().ok_or_else(|| HawkesError::Parse { line, message: "empty value".into() })?;
    let mut map = BTreeMap::new();
    for t in tokens {
        let (k, v) = t
            .split_once('=')
            .ok_or_else(|| HawkesError::Parse { line, message: format!("expected key=value, got {t:?}") })?;
        if map.insert(k, v).is_some() {
            return Err(HawkesError::Parse { line, message: format!("duplicate parameter {k:?}") });
        }
    }
    Ok((fam, Params { line, map, used: Default::default() }))
}

/// Line-oriented `key = value` document with a mandatory header line.
pub(crate) struct KeyValueDoc<'a> {
    pub entries: BTreeMap<String, (usize, &'a str)>,
}

impl<'a> KeyValueDoc<'a> {
    pub fn parse(text: &'a str, header: &str) -> Result<Self> {
        let mut lines = text.lines().enumerate().map(|(n, l)| (n + 1, l.trim()));
        let mut saw_header = false;
        let mut entries = BTreeMap::new();
        for (n, l) in lines.by_ref() {
            if l.is_empty() || l.starts_with('#') {
                continue;
            }
            if !saw_header {
                if l != header {
                    return Err(HawkesError::Parse { line: n, message: format!("expected header {header:?}, got {l:?}") });
                }
                saw_header = true;
                continue;
            }
            let (k, v) = l
                .split_once('=')
                .ok_or_else(|| HawkesError::Parse { line: n, message: format!("expected `key = value`, got {l:?}") })?;
            let k = k.trim().to_string();
            if entries.insert(k.clone(), (n, v.trim())).is_some() {
                return Err(HawkesError::Parse { line: n, message: format!("duplicate key {k:?}") });
            }
        }
        if !saw_header {
            return Err(HawkesError::Parse { line: 1, message: format!("missing header {header:?}") });
        }
        Ok(Self { entries })
    }

    pub fn get(&self, key: &str) -> Option<(usize, &'a str)> {
        self.entries.get(key).copied()
    }

    pub fn require(&self, key: &str) -> Result<(usize, &'a str)> {
        self.get(key).ok_or_else(|| HawkesError::Parse { line: 0, message: format!("missing key {key:?}") })
    }
}
