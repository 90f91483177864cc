//! Event streams and cluster genealogies, with their CSV formats.

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::error::{HawkesError, Result};

/// A realization of a `D`-variate point process on `[0, T]`.
///
/// Events are sorted by time; simultaneous events are ordered by component
/// and then by insertion order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EventSequence {
    dim: usize,
    horizon: f64,
    times: Vec<f64>,
    components: Vec<usize>,
    marks: Option<Vec<f64>>,
}

impl EventSequence {
    /// Validates an already sorted stream.
    pub fn new(dim: usize, horizon: f64, times: Vec<f64>, components: Vec<usize>, marks: Option<Vec<f64>>) -> Result<Self> {
        let s = Self { dim, horizon, times, components, marks };
        s.validate()?;
        Ok(s)
    }

    /// Sorts by `(time, component)` stably, then validates.
    pub fn from_unsorted(dim: usize, horizon: f64, times: Vec<f64>, components: Vec<usize>, marks: Option<Vec<f64>>) -> Result<Self> {
        if times.len() != components.len() || marks.as_ref().is_some_and(|m| m.len() != times.len()) {
            return Err(HawkesError::Input("times, components and marks differ in length".into()));
        }
        if let Some(t) = times.iter().find(|t| t.is_nan()) {
            return Err(HawkesError::Input(format!("event time {t} is not a number")));
        }
        let mut order: Vec<usize> = (0..times.len()).collect();
        order.sort_by(|&a, &b| times[a].total_cmp(&times[b]).then(components[a].cmp(&components[b])));
        let t = order.iter().map(|&k| times[k]).collect();
        let c = order.iter().map(|&k| components[k]).collect();
        let m = marks.map(|m| order.iter().map(|&k| m[k]).collect());
        Self::new(dim, horizon, t, c, m)
    }

    pub fn empty(dim: usize, horizon: f64) -> Self {
        Self { dim, horizon, times: Vec::new(), components: Vec::new(), marks: None }
    }

    fn validate(&self) -> Result<()> {
        if self.dim == 0 {
            return Err(HawkesError::Input("dimension must be positive".into()));
        }
        if !(self.horizon.is_finite() && self.horizon > 0.0) {
            return Err(HawkesError::Input(format!("horizon must be finite and > 0, got {}", self.horizon)));
        }
        if self.times.len() != self.components.len() || self.marks.as_ref().is_some_and(|m| m.len() != self.times.len()) {
            return Err(HawkesError::Input("times, components and marks differ in length".into()));
        }
        for (n, (&t, &c)) in self.times.iter().zip(&self.components).enumerate() {
            if !(0.0..=self.horizon).contains(&t) {
                return Err(HawkesError::Input(format!("event {n} at t={t} lies outside [0, {}]", self.horizon)));
            }
            if c >= self.dim {
                return Err(HawkesError::Input(format!("event {n} has component {c} >= dimension {}", self.dim)));
            }
            if n > 0 {
                let (tp, cp) = (self.times[n - 1], self.components[n - 1]);
                if t < tp || (t == tp && c < cp) {
                    return Err(HawkesError::Input(format!("events are not sorted at index {n}")));
                }
            }
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn components(&self) -> &[usize] {
        &self.components
    }

    pub fn marks(&self) -> Option<&[f64]> {
        self.marks.as_deref()
    }

    pub fn iter(&self) -> impl Iterator<Item = (f64, usize)> + '_ {
        self.times.iter().copied().zip(self.components.iter().copied())
    }

    /// Times of one component.
    pub fn component_times(&self, i: usize) -> Vec<f64> {
        self.iter().filter(|&(_, c)| c == i).map(|(t, _)| t).collect()
    }

    pub fn counts(&self) -> Vec<usize> {
        let mut n = vec![0; self.dim];
        for &c in &self.components {
            n[c] += 1;
        }
        n
    }

    /// `N^i / T`.
    pub fn empirical_rates(&self) -> Vec<f64> {
        self.counts().into_iter().map(|n| n as f64 / self.horizon).collect()
    }

    /// Events in `[start, end)` shifted to start at zero.
    pub fn window(&self, start: f64, end: f64) -> Result<Self> {
        let lo = self.times.partition_point(|t| *t < start);
        let hi = self.times.partition_point(|t| *t < end);
        Self::new(
            self.dim,
            end - start,
            self.times[lo..hi].iter().map(|t| t - start).collect(),
            self.components[lo..hi].to_vec(),
            self.marks.as_ref().map(|m| m[lo..hi].to_vec()),
        )
    }

    /// Same events with time multiplied by `factor`.
    pub fn rescaled(&self, factor: f64) -> Result<Self> {
        Self::new(
            self.dim,
            self.horizon * factor,
            self.times.iter().map(|t| t * factor).collect(),
            self.components.clone(),
            self.marks.clone(),
        )
    }

    /// Keeps only the listed components, renumbered in the given order.
    pub fn select(&self, keep: &[usize]) -> Result<Self> {
        let mut t = Vec::new();
        let mut c = Vec::new();
        let mut m = self.marks.as_ref().map(|_| Vec::new());
        for n in 0..self.len() {
            if let Some(pos) = keep.iter().position(|&k| k == self.components[n]) {
                t.push(self.times[n]);
                c.push(pos);
                if let (Some(out), Some(src)) = (m.as_mut(), self.marks.as_ref()) {
                    out.push(src[n]);
                }
            }
        }
        Self::from_unsorted(keep.len(), self.horizon, t, c, m)
    }

    /// Writes `time,component[,mark]` with 17 significant digits.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wr = csv::Writer::from_writer(w);
        let io = |e: csv::Error| HawkesError::Io(e.to_string());
        match &self.marks {
            Some(_) => wr.write_record(["time", "component", "mark"]).map_err(io)?,
            None => wr.write_record(["time", "component"]).map_err(io)?,
        }
        for n in 0..self.len() {
            let t = format!("{:.16e}", self.times[n]);
            let c = self.components[n].to_string();
            match &self.marks {
                Some(m) => wr.write_record([t, c, format!("{:.16e}", m[n])]).map_err(io)?,
                None => wr.write_record([t, c]).map_err(io)?,
            }
        }
        wr.flush()?;
        Ok(())
    }

    pub fn to_csv_string(&self) -> String {
        let mut buf = Vec::new();
        self.write_csv(&mut buf).expect("writing to memory");
        String::from_utf8(buf).expect("csv is utf-8")
    }

    /// Reads the numeric-component CSV format. `dim` defaults to the largest
    /// component + 1, `horizon` to the last event time.
    pub fn read_csv<R: Read>(r: R, dim: Option<usize>, horizon: Option<f64>) -> Result<Self> {
        let mut rd = csv::ReaderBuilder::new().has_headers(true).trim(csv::Trim::All).from_reader(r);
        let headers = rd.headers().map_err(|e| HawkesError::Parse { line: 1, message: e.to_string() })?.clone();
        let has_mark = match headers.iter().collect::<Vec<_>>().as_slice() {
            ["time", "component"] => false,
            ["time", "component", "mark"] => true,
            other => {
                return Err(HawkesError::Parse { line: 1, message: format!("expected header time,component[,mark], got {other:?}") })
            }
        };
        let mut times = Vec::new();
        let mut comps = Vec::new();
        let mut marks = Vec::new();
        for (n, rec) in rd.records().enumerate() {
            let line = n + 2;
            let rec = rec.map_err(|e| HawkesError::Parse { line, message: e.to_string() })?;
            let field = |k: usize| rec.get(k).ok_or_else(|| HawkesError::Parse { line, message: "missing field".into() });
            let t: f64 = field(0)?.parse().map_err(|_| HawkesError::Parse { line, message: format!("bad time {:?}", &rec[0]) })?;
            let c: usize = field(1)?
                .parse()
                .map_err(|_| HawkesError::Parse { line, message: format!("bad component {:?}", &rec[1]) })?;
            if !t.is_finite() {
                return Err(HawkesError::Parse { line, message: format!("non-finite time {t}") });
            }
            times.push(t);
            comps.push(c);
            if has_mark {
                let m: f64 = field(2)?.parse().map_err(|_| HawkesError::Parse { line, message: format!("bad mark {:?}", &rec[2]) })?;
                marks.push(m);
            }
        }
        let dim = dim.unwrap_or_else(|| comps.iter().max().map_or(1, |c| c + 1));
        let horizon = horizon.unwrap_or_else(|| times.iter().cloned().fold(0.0, f64::max));
        Self::from_unsorted(dim, horizon, times, comps, has_mark.then_some(marks))
    }
}

/// Parent links of a cluster simulation.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Genealogy {
    /// `None` for immigrants (and for children whose parent fell in the burn-in).
    pub parent: Vec<Option<usize>>,
    /// Immigrants are generation 0.
    pub generation: Vec<u32>,
}

impl Genealogy {
    pub fn len(&self) -> usize {
        self.parent.len()
    }

    pub fn is_empty(&self) -> bool {
        self.parent.is_empty()
    }

    /// Writes `index,parent_index,generation`; immigrants have an empty parent field.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wr = csv::Writer::from_writer(w);
        let io = |e: csv::Error| HawkesError::Io(e.to_string());
        wr.write_record(["index", "parent_index", "generation"]).map_err(io)?;
        for (n, (p, g)) in self.parent.iter().zip(&self.generation).enumerate() {
            let p = p.map(|p| p.to_string()).unwrap_or_default();
            wr.write_record([n.to_string(), p, g.to_string()]).map_err(io)?;
        }
        wr.flush()?;
        Ok(())
    }
}
