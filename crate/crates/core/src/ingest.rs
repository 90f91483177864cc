//! Ingestion of labelled event files (CSV or NDJSON) into an [`EventSequence`].
//!
//! Times are scaled to seconds, optionally restricted to a session window and
//! shifted to the session start. Duplicate timestamps are kept or jittered.

use std::collections::{BTreeMap, BTreeSet};
use std::io::{BufRead, BufReader, Read};
use std::path::PathBuf;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{HawkesError, Result};
use crate::events::EventSequence;
use crate::simulate::rng_for;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum InputFormat {
    Csv,
    Ndjson,
}

impl InputFormat {
    /// From a file extension; CSV unless it is `ndjson`, `jsonl` or `json`.
    pub fn from_path(path: &std::path::Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some("ndjson" | "jsonl" | "json") => Self::Ndjson,
            _ => Self::Csv,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum TiePolicy {
    /// Keep equal timestamps; they are ordered by component.
    Stable,
    /// Spread tied events by uniform offsets in `[0, amplitude)`.
    Jitter { amplitude: f64, seed: u64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IngestConfig {
    pub path: Option<PathBuf>,
    pub format: InputFormat,
    /// Seconds per input time unit.
    pub time_scale: f64,
    /// Label → component. Empty means components are given as integers.
    pub labels: BTreeMap<String, usize>,
    pub ties: TiePolicy,
    /// Keep `start <= t < end` (scaled units) and shift times by `start`.
    pub session: Option<(f64, f64)>,
    /// Apply the jitter to every event, not only to ties (randomization of
    /// throttled feeds). Requires [`TiePolicy::Jitter`].
    pub dejitter: bool,
    /// Record length; defaults to the session length or the last event time.
    pub horizon: Option<f64>,
    /// Dimension; defaults to the label count or the largest component + 1.
    pub dim: Option<usize>,
}

impl Default for IngestConfig {
    fn default() -> Self {
        Self {
            path: None,
            format: InputFormat::Csv,
            time_scale: 1.0,
            labels: BTreeMap::new(),
            ties: TiePolicy::Stable,
            session: None,
            dejitter: false,
            horizon: None,
            dim: None,
        }
    }
}

impl IngestConfig {
    pub fn from_path(path: impl Into<PathBuf>) -> Self {
        let path = path.into();
        Self { format: InputFormat::from_path(&path), path: Some(path), ..Default::default() }
    }

    /// `up=0,down=1` style label map.
    pub fn parse_labels(spec: &str) -> Result<BTreeMap<String, usize>> {
        let mut map = BTreeMap::new();
        for part in spec.split(',').map(str::trim).filter(|p| !p.is_empty()) {
            let (label, idx) = part
                .split_once('=')
                .ok_or_else(|| HawkesError::Input(format!("expected label=index, got {part:?}")))?;
            let idx: usize = idx.trim().parse().map_err(|_| HawkesError::Input(format!("bad component index in {part:?}")))?;
            if map.insert(label.trim().to_string(), idx).is_some() {
                return Err(HawkesError::Input(format!("label {label:?} mapped twice")));
            }
        }
        Ok(map)
    }

    fn validate(&self) -> Result<()> {
        if !(self.time_scale.is_finite() && self.time_scale > 0.0) {
            return Err(HawkesError::Input(format!("time scale must be > 0, got {}", self.time_scale)));
        }
        if !self.labels.is_empty() {
            let used: BTreeSet<usize> = self.labels.values().copied().collect();
            if used.len() != self.labels.len() || used.iter().enumerate().any(|(k, &c)| k != c) {
                return Err(HawkesError::Input("label map must assign the components 0..D-1 exactly once".into()));
            }
        }
        if let Some((a, b)) = self.session {
            if !(a.is_finite() && b.is_finite() && a < b) {
                return Err(HawkesError::Input(format!("invalid session window [{a}, {b})")));
            }
        }
        match self.ties {
            TiePolicy::Jitter { amplitude, .. } if !(amplitude.is_finite() && amplitude > 0.0) => {
                return Err(HawkesError::Input(format!("jitter amplitude must be > 0, got {amplitude}")))
            }
            TiePolicy::Stable if self.dejitter => {
                return Err(HawkesError::Input("dejittering needs a jitter amplitude".into()))
            }
            _ => {}
        }
        Ok(())
    }
}

/// What ingestion changed: `rows = events + dropped`.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct IngestReport {
    pub rows: usize,
    pub events: usize,
    /// Rows outside the session window.
    pub dropped: usize,
    /// Rows whose time was jittered.
    pub adjusted: usize,
    /// Groups of equal timestamps before tie handling.
    pub tie_groups: usize,
    pub warnings: Vec<String>,
}

struct Row {
    line: usize,
    time: f64,
    label: String,
    mark: Option<f64>,
}

fn parse_err(line: usize, message: impl Into<String>) -> HawkesError {
    HawkesError::Parse { line, message: message.into() }
}

fn read_csv_rows<R: Read>(r: R) -> Result<Vec<Row>> {
    let mut rd = csv::ReaderBuilder::new().has_headers(true).trim(csv::Trim::All).from_reader(r);
    let headers = rd.headers().map_err(|e| parse_err(1, e.to_string()))?.clone();
    let has_mark = match headers.iter().collect::<Vec<_>>().as_slice() {
        ["time", "component"] => false,
        ["time", "component", "mark"] => true,
        other => return Err(parse_err(1, format!("expected header time,component[,mark], got {other:?}"))),
    };
    let mut rows = Vec::new();
    for rec in rd.records() {
        let rec = rec.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line() as usize);
            parse_err(line, e.to_string())
        })?;
        let line = rec.position().map_or(0, |p| p.line() as usize);
        let time = rec[0].parse::<f64>().map_err(|_| parse_err(line, format!("bad time {:?}", &rec[0])))?;
        let mark = if has_mark {
            Some(rec[2].parse::<f64>().map_err(|_| parse_err(line, format!("bad mark {:?}", &rec[2])))?)
        } else {
            None
        };
        rows.push(Row { line, time, label: rec[1].to_string(), mark });
    }
    Ok(rows)
}

fn read_ndjson_rows<R: Read>(r: R) -> Result<Vec<Row>> {
    let mut rows = Vec::new();
    for (n, text) in BufReader::new(r).lines().enumerate() {
        let line = n + 1;
        let text = text?;
        if text.trim().is_empty() {
            continue;
        }
        let v: serde_json::Value = serde_json::from_str(&text).map_err(|e| parse_err(line, e.to_string()))?;
        let obj = v.as_object().ok_or_else(|| parse_err(line, "expected a JSON object"))?;
        if let Some(k) = obj.keys().find(|k| !matches!(k.as_str(), "t" | "c" | "m")) {
            return Err(parse_err(line, format!("unexpected field {k:?}")));
        }
        let time = obj.get("t").and_then(|t| t.as_f64()).ok_or_else(|| parse_err(line, "missing or non-numeric \"t\""))?;
        let label = match obj.get("c") {
            Some(serde_json::Value::String(s)) => s.clone(),
            Some(serde_json::Value::Number(x)) => x.to_string(),
            _ => return Err(parse_err(line, "missing or invalid \"c\"")),
        };
        let mark = match obj.get("m") {
            None | Some(serde_json::Value::Null) => None,
            Some(m) => Some(m.as_f64().ok_or_else(|| parse_err(line, "non-numeric \"m\""))?),
        };
        rows.push(Row { line, time, label, mark });
    }
    Ok(rows)
}

/// Reads from `cfg.path`.
pub fn ingest(cfg: &IngestConfig) -> Result<(EventSequence, IngestReport)> {
    let path = cfg.path.as_ref().ok_or_else(|| HawkesError::Input("no input path".into()))?;
    let f = std::fs::File::open(path).map_err(|e| HawkesError::Io(format!("{}: {e}", path.display())))?;
    ingest_reader(f, cfg)
}

/// Reads from any reader using `cfg.format`.
pub fn ingest_reader<R: Read>(r: R, cfg: &IngestConfig) -> Result<(EventSequence, IngestReport)> {
    cfg.validate()?;
    let rows = match cfg.format {
        InputFormat::Csv => read_csv_rows(r)?,
        InputFormat::Ndjson => read_ndjson_rows(r)?,
    };
    let mut report = IngestReport { rows: rows.len(), ..Default::default() };

    let n_marked = rows.iter().filter(|r| r.mark.is_some()).count();
    if n_marked != 0 && n_marked != rows.len() {
        let line = rows.iter().find(|r| r.mark.is_none()).map_or(0, |r| r.line);
        return Err(parse_err(line, "marks must be given on every row or none"));
    }

    // Components.
    let mut comps = Vec::with_capacity(rows.len());
    if cfg.labels.is_empty() {
        for r in &rows {
            comps.push(r.label.parse::<usize>().map_err(|_| {
                parse_err(r.line, format!("component {:?} is not an index and no label map was given", r.label))
            })?);
        }
    } else {
        let unknown: BTreeSet<&str> =
            rows.iter().filter(|r| !cfg.labels.contains_key(&r.label)).map(|r| r.label.as_str()).collect();
        if !unknown.is_empty() {
            let list: Vec<String> = unknown.iter().map(|l| format!("{l:?}")).collect();
            return Err(HawkesError::Input(format!("unknown component labels: {}", list.join(", "))));
        }
        comps.extend(rows.iter().map(|r| cfg.labels[&r.label]));
    }
    let dim = match cfg.dim {
        Some(d) => d,
        None if !cfg.labels.is_empty() => cfg.labels.len(),
        None => comps.iter().max().map_or(1, |c| c + 1),
    };

    // Times, session filter.
    let mut times = Vec::with_capacity(rows.len());
    let mut keep_comps = Vec::with_capacity(rows.len());
    let mut marks = Vec::with_capacity(rows.len());
    for (r, &c) in rows.iter().zip(&comps) {
        let t = r.time * cfg.time_scale;
        if !t.is_finite() {
            return Err(parse_err(r.line, format!("non-finite time {}", r.time)));
        }
        let t = match cfg.session {
            Some((a, b)) if t < a || t >= b => {
                report.dropped += 1;
                continue;
            }
            Some((a, _)) => t - a,
            None => t,
        };
        if t < 0.0 {
            return Err(parse_err(r.line, format!("negative time {t}; use a session window to shift the origin")));
        }
        times.push(t);
        keep_comps.push(c);
        if let Some(m) = r.mark {
            marks.push(m);
        }
    }

    let mut sorted = times.clone();
    sorted.sort_by(f64::total_cmp);
    let mut tied = BTreeSet::new();
    for w in sorted.windows(2) {
        if w[0] == w[1] {
            tied.insert(w[0].to_bits());
        }
    }
    report.tie_groups = tied.len();

    if let TiePolicy::Jitter { amplitude, seed } = cfg.ties {
        sorted.dedup();
        let resolution = sorted.windows(2).map(|w| w[1] - w[0]).fold(f64::INFINITY, f64::min);
        if amplitude >= resolution {
            return Err(HawkesError::Input(format!(
                "jitter amplitude {amplitude} is not below the smallest gap between distinct timestamps ({resolution})"
            )));
        }
        let mut rng = rng_for(seed, 0);
        for t in times.iter_mut() {
            if cfg.dejitter || tied.contains(&t.to_bits()) {
                *t += amplitude * rng.random::<f64>();
                report.adjusted += 1;
            }
        }
    } else if report.tie_groups > 0 {
        report.warnings.push(format!("{} groups of equal timestamps kept", report.tie_groups));
    }

    let horizon = match (cfg.horizon, cfg.session) {
        (Some(h), _) => h,
        (None, Some((a, b))) => b - a,
        (None, None) => times.iter().cloned().fold(0.0, f64::max),
    };
    if !(horizon > 0.0) {
        return Err(HawkesError::DegenerateData("record length is zero; give a horizon".into()));
    }
    let n_events = times.len();
    let events = EventSequence::from_unsorted(dim, horizon, times, keep_comps, (n_marked > 0).then_some(marks))?;
    report.events = n_events;
    Ok((events, report))
}
