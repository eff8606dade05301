use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::io::{self, Write};

use serde::Serialize;

use super::topology::{Link, NodeId};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    Distribution,
    Forward,
    Backprop,
    Aggregation,
}

impl fmt::Display for Phase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Phase::Distribution => "distribution",
            Phase::Forward => "forward",
            Phase::Backprop => "backprop",
            Phase::Aggregation => "aggregation",
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Span {
    pub phase: Phase,
    pub iteration: usize,
    pub start: f64,
    pub end: f64,
}

/// One line of the exported event log.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EventRecord {
    pub t: f64,
    pub node: NodeId,
    pub kind: String,
    pub param: Option<String>,
    pub detail: String,
}

impl EventRecord {
    /// Value of a `key=value` token in `detail`.
    pub fn field(&self, key: &str) -> Option<&str> {
        self.detail.split_whitespace().find_map(|tok| {
            let (k, v) = tok.split_once('=')?;
            (k == key).then_some(v)
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SimResult {
    pub iteration_time: f64,
    pub timeline: BTreeMap<NodeId, Vec<Span>>,
    pub link_bytes: BTreeMap<Link, f64>,
    pub event_log: Vec<EventRecord>,
}

impl SimResult {
    /// Bits carried on a link (zero if it never carried traffic).
    pub fn bits_on(&self, link: Link) -> f64 {
        self.link_bytes.get(&link).copied().unwrap_or(0.0)
    }

    /// Earliest start and latest end of `phase` across all nodes.
    pub fn phase_extent(&self, phase: Phase) -> Option<(f64, f64)> {
        let mut out: Option<(f64, f64)> = None;
        for s in self.timeline.values().flatten().filter(|s| s.phase == phase) {
            out = Some(match out {
                None => (s.start, s.end),
                Some((a, b)) => (a.min(s.start), b.max(s.end)),
            });
        }
        out
    }

    pub fn span(&self, node: NodeId, phase: Phase, iteration: usize) -> Option<&Span> {
        self.timeline
            .get(&node)?
            .iter()
            .find(|s| s.phase == phase && s.iteration == iteration)
    }

    pub fn write_event_log<W: Write>(&self, mut out: W) -> io::Result<()> {
        for rec in &self.event_log {
            serde_json::to_writer(&mut out, rec)?;
            out.write_all(b"\n")?;
        }
        Ok(())
    }

    /// Structural invariants every run must satisfy.
    pub fn check_invariants(&self) -> Result<(), String> {
        let last_end = self
            .timeline
            .values()
            .flatten()
            .map(|s| s.end)
            .fold(0.0, f64::max);
        if self.iteration_time != last_end {
            return Err(format!(
                "iteration time {} differs from last span end {}",
                self.iteration_time, last_end
            ));
        }
        for (link, &bits) in &self.link_bytes {
            if !(bits >= 0.0 && bits.is_finite()) {
                return Err(format!("link {link} carried {bits} bits"));
            }
        }
        for spans in self.timeline.values() {
            for s in spans {
                if !(s.start <= s.end) {
                    return Err(format!("span {:?} ends before it starts", s));
                }
            }
        }
        if self.event_log.windows(2).any(|w| w[1].t < w[0].t) {
            return Err("event log is not time ordered".into());
        }
        self.check_causality()
    }

    /// Gradient sends never precede readiness; gather hops never precede the
    /// reduction they distribute.
    pub fn check_causality(&self) -> Result<(), String> {
        let key = |r: &EventRecord| {
            (
                r.node,
                r.param.clone().unwrap_or_default(),
                r.field("iter").unwrap_or("0").to_string(),
            )
        };
        let mut ready: HashMap<_, f64> = HashMap::new();
        let mut reduced: HashMap<(String, String, String), f64> = HashMap::new();
        for r in &self.event_log {
            match r.kind.as_str() {
                "grad_ready" => {
                    ready.insert(key(r), r.t);
                }
                "grad_send" | "reduce_send" => match ready.get(&key(r)) {
                    Some(&t) if t <= r.t => {}
                    _ => {
                        return Err(format!(
                            "{} sent {:?} at {} before its gradient was ready",
                            r.node, r.param, r.t
                        ))
                    }
                },
                "reduce_done" => {
                    let chunk = r.field("chunk").unwrap_or("0").to_string();
                    let iter = r.field("iter").unwrap_or("0").to_string();
                    reduced.insert((r.param.clone().unwrap_or_default(), chunk, iter), r.t);
                }
                "gather_send" => {
                    let chunk = r.field("chunk").unwrap_or("0").to_string();
                    let iter = r.field("iter").unwrap_or("0").to_string();
                    match reduced.get(&(r.param.clone().unwrap_or_default(), chunk, iter)) {
                        Some(&t) if t <= r.t => {}
                        _ => {
                            return Err(format!(
                                "{} forwarded {:?} before its reduction finished",
                                r.node, r.param
                            ))
                        }
                    }
                }
                _ => {}
            }
        }
        Ok(())
    }
}

/// Accumulates `[first, last]` activity per (node, phase, iteration).
#[derive(Default, Debug)]
pub(crate) struct SpanTracker {
    spans: BTreeMap<(NodeId, usize, Phase), (f64, f64)>,
}

impl SpanTracker {
    pub fn touch(&mut self, node: NodeId, phase: Phase, iteration: usize, t: f64) {
        let e = self.spans.entry((node, iteration, phase)).or_insert((t, t));
        e.0 = e.0.min(t);
        e.1 = e.1.max(t);
    }

    pub fn into_timeline(self) -> BTreeMap<NodeId, Vec<Span>> {
        let mut out: BTreeMap<NodeId, Vec<Span>> = BTreeMap::new();
        for ((node, iteration, phase), (start, end)) in self.spans {
            out.entry(node).or_default().push(Span { phase, iteration, start, end });
        }
        out
    }
}
