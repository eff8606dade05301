//! Training traces and model profiles.
//!
//! A trace is a CSV of timestamped sends:
//!
//! ```text
//! t_s,param,size_bits,src,dst,kind
//! 0.000,conv1/weights,8000000,ps0,worker0,distribution
//! ```
//!
//! An optional leading `# iteration=<n> model=<name>` comment carries the
//! trace metadata.

mod presets;
mod profile;
mod synth;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::engine::NodeId;

pub use presets::{
    compute_heavy_module, inception_v3_like, network_heavy_module, preset, resnet101_like,
    resnet200_like, vgg16_like, PRESET_NAMES,
};
pub use profile::{mutate_profile, profile_from_trace, scale_compute, ModelProfile, ParamSpec};
pub use synth::{synthesize_profile, ProfileSpec, Remainder};

pub const HEADER: [&str; 6] = ["t_s", "param", "size_bits", "src", "dst", "kind"];
pub const MARKER_PARAM: &str = "__dependency__";

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TraceError {
    #[error("line {line}: {msg}")]
    Parse { line: u64, msg: String },
    #[error("trace is empty")]
    Empty,
    #[error("trace structure: {0}")]
    Structure(String),
    #[error("trace consistency: {0}")]
    Consistency(String),
    #[error("profile spec: {0}")]
    Spec(String),
    #[error("domain error: {0}")]
    Domain(String),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EventKind {
    Distribution,
    Aggregation,
    Marker,
}

impl fmt::Display for EventKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            EventKind::Distribution => "distribution",
            EventKind::Aggregation => "aggregation",
            EventKind::Marker => "marker",
        })
    }
}

impl FromStr for EventKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "distribution" => Ok(EventKind::Distribution),
            "aggregation" => Ok(EventKind::Aggregation),
            "marker" => Ok(EventKind::Marker),
            other => Err(format!("unknown event kind {other:?}")),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceEvent {
    pub t: f64,
    pub param: String,
    pub size: f64,
    pub src: NodeId,
    pub dst: NodeId,
    pub kind: EventKind,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TraceMeta {
    pub model: String,
    pub iteration: u64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Trace {
    pub events: Vec<TraceEvent>,
    pub meta: TraceMeta,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Partition {
    pub distribution: Trace,
    pub aggregation: Trace,
}

fn parse_meta(line: &str) -> Option<TraceMeta> {
    let rest = line.strip_prefix('#')?.trim_start();
    let rest = rest.strip_prefix("iteration=")?;
    let (iter, model) = rest.split_once(' ').unwrap_or((rest, ""));
    let model = model.strip_prefix("model=").unwrap_or("");
    Some(TraceMeta { model: model.to_string(), iteration: iter.parse().ok()? })
}

fn field<T: FromStr>(rec: &csv::StringRecord, i: usize, line: u64, what: &str) -> Result<T, TraceError> {
    rec[i].trim().parse().map_err(|_| TraceError::Parse {
        line,
        msg: format!("cannot parse {what} {:?}", &rec[i]),
    })
}

/// Parses the CSV trace format. The header row is optional.
pub fn parse_trace(text: &str) -> Result<Trace, TraceError> {
    let meta = text
        .lines()
        .map(str::trim)
        .find(|l| !l.is_empty())
        .and_then(parse_meta)
        .unwrap_or_default();
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .comment(Some(b'#'))
        .from_reader(text.as_bytes());
    let mut events = Vec::new();
    for rec in reader.records() {
        let rec = rec.map_err(|e| TraceError::Parse {
            line: e.position().map_or(0, |p| p.line()),
            msg: e.to_string(),
        })?;
        let line = rec.position().map_or(0, |p| p.line());
        if rec.len() == 1 && rec[0].trim().is_empty() {
            continue;
        }
        if rec.len() != HEADER.len() {
            return Err(TraceError::Parse {
                line,
                msg: format!("expected {} columns, found {}", HEADER.len(), rec.len()),
            });
        }
        if events.is_empty() && rec.iter().map(str::trim).eq(HEADER) {
            continue;
        }
        let ev = TraceEvent {
            t: field(&rec, 0, line, "time")?,
            param: rec[1].trim().to_string(),
            size: field(&rec, 2, line, "size")?,
            src: field(&rec, 3, line, "source")?,
            dst: field(&rec, 4, line, "destination")?,
            kind: field(&rec, 5, line, "kind")?,
        };
        validate_event(&ev).map_err(|msg| TraceError::Parse { line, msg })?;
        events.push(ev);
    }
    if events.is_empty() {
        return Err(TraceError::Empty);
    }
    events.sort_by(|a, b| a.t.total_cmp(&b.t));
    Ok(Trace { events, meta })
}

fn validate_event(ev: &TraceEvent) -> Result<(), String> {
    if !(ev.t >= 0.0 && ev.t.is_finite()) {
        return Err(format!("time must be finite and >= 0, got {}", ev.t));
    }
    if ev.param.is_empty() {
        return Err("empty parameter name".into());
    }
    match ev.kind {
        EventKind::Marker => {
            if ev.size != 0.0 {
                return Err(format!("marker rows carry size 0, got {}", ev.size));
            }
        }
        _ => {
            if !(ev.size > 0.0 && ev.size.is_finite()) {
                return Err(format!("size must be positive, got {}", ev.size));
            }
            if ev.src == ev.dst {
                return Err(format!("source and destination are both {}", ev.src));
            }
        }
    }
    Ok(())
}

impl Trace {
    /// Writes the CSV format with a metadata comment and header.
    pub fn to_csv(&self) -> String {
        let mut out = format!("# iteration={} model={}\n", self.meta.iteration, self.meta.model);
        let mut w = csv::WriterBuilder::new().from_writer(Vec::new());
        w.write_record(HEADER).expect("in-memory write");
        for e in &self.events {
            w.write_record([
                e.t.to_string(),
                e.param.clone(),
                e.size.to_string(),
                e.src.to_string(),
                e.dst.to_string(),
                e.kind.to_string(),
            ])
            .expect("in-memory write");
        }
        out.push_str(std::str::from_utf8(&w.into_inner().expect("flush")).expect("utf-8"));
        out
    }

    fn with_events(&self, events: Vec<TraceEvent>) -> Trace {
        Trace { events, meta: self.meta.clone() }
    }
}

/// Splits an iteration at its single marker row.
///
/// Aggregation sends that precede the marker belong to other work (e.g.
/// normalization statistics) and are dropped.
pub fn partition_iteration(trace: &Trace) -> Result<Partition, TraceError> {
    let markers: Vec<_> = trace.events.iter().filter(|e| e.kind == EventKind::Marker).collect();
    let marker_t = match markers.as_slice() {
        [m] => m.t,
        [] => return Err(TraceError::Structure("no dependency marker".into())),
        many => return Err(TraceError::Structure(format!("{} dependency markers", many.len()))),
    };
    let pick = |kind: EventKind, from: f64| {
        trace
            .events
            .iter()
            .filter(|e| e.kind == kind && e.t >= from)
            .cloned()
            .collect()
    };
    Ok(Partition {
        distribution: trace.with_events(pick(EventKind::Distribution, f64::NEG_INFINITY)),
        aggregation: trace.with_events(pick(EventKind::Aggregation, marker_t)),
    })
}

/// Shifts times so the first event is at zero.
pub fn normalize(trace: &Trace) -> Result<Trace, TraceError> {
    let t0 = trace.events.first().ok_or(TraceError::Empty)?.t;
    let events = trace
        .events
        .iter()
        .map(|e| TraceEvent { t: e.t - t0, ..e.clone() })
        .collect();
    Ok(trace.with_events(events))
}
