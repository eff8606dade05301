//! Scenario sweeps and mechanism rankings.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Deserializer, Serialize};
use thiserror::Error;

use crate::mechanisms::{
    simulate, DistributionOrder, MechError, Mechanism, PsOptions, RingOptions, Scenario,
};
use crate::trace::{mutate_profile, scale_compute, ParamSpec};

pub const BASELINE: &str = "baseline";

pub const PRESETS: [&str; 8] = [
    "baseline",
    "multicast",
    "agg",
    "multicast_agg",
    "ring",
    "ring_multicast",
    "butterfly",
    "block",
];

pub const RELATIVE_TIE: f64 = 1e-9;

#[derive(Debug, Error)]
pub enum SweepError {
    #[error("invalid sweep: {0}")]
    Spec(String),
    #[error("{context}: {source}")]
    Scenario { context: String, source: MechError },
    #[error("incomplete table: {0}")]
    Incomplete(String),
    #[error("writing event log {path}: {source}")]
    Io { path: String, source: std::io::Error },
}

/// Named mechanism preset.
pub fn preset_mechanism(name: &str) -> Option<Mechanism> {
    let ps = |multicast, in_net_agg| Mechanism::Ps(PsOptions { multicast, in_net_agg, ..PsOptions::default() });
    Some(match name {
        "baseline" => Mechanism::baseline(),
        "multicast" => ps(true, false),
        "agg" => ps(false, true),
        "multicast_agg" => ps(true, true),
        "ring" => Mechanism::RingReduce(RingOptions { messaging: true, multicast_second_ring: false }),
        "ring_multicast" => Mechanism::RingReduce(RingOptions { messaging: true, multicast_second_ring: true }),
        "butterfly" => Mechanism::Butterfly,
        "block" => Mechanism::Ps(PsOptions { distribution_order: DistributionOrder::Block, ..PsOptions::default() }),
        _ => return None,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct MechanismEntry {
    pub label: String,
    pub mechanism: Mechanism,
}

impl MechanismEntry {
    pub fn preset(name: &str) -> Option<Self> {
        preset_mechanism(name).map(|mechanism| MechanismEntry { label: name.to_string(), mechanism })
    }
}

impl<'de> Deserialize<'de> for MechanismEntry {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(deny_unknown_fields)]
        struct Custom {
            label: String,
            mechanism: Mechanism,
        }
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Name(String),
            Custom(Custom),
        }
        match Raw::deserialize(d)? {
            Raw::Name(n) => MechanismEntry::preset(&n).ok_or_else(|| {
                serde::de::Error::custom(format!("unknown mechanism {n:?}; expected one of {}", PRESETS.join(", ")))
            }),
            Raw::Custom(c) => Ok(MechanismEntry { label: c.label, mechanism: c.mechanism }),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Axis {
    Bandwidth,
    Workers,
    ComputeFactor,
    AddedLayers {
        template: ParamSpec,
        /// Insert position; defaults to just before the output layer.
        #[serde(default)]
        position: Option<usize>,
    },
}

impl Axis {
    pub fn name(&self) -> &'static str {
        match self {
            Axis::Bandwidth => "bandwidth",
            Axis::Workers => "workers",
            Axis::ComputeFactor => "compute_factor",
            Axis::AddedLayers { .. } => "added_layers",
        }
    }

    fn whole(&self) -> bool {
        matches!(self, Axis::Workers | Axis::AddedLayers { .. })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSpec {
    pub base: Scenario,
    pub axis: Axis,
    pub values: Vec<f64>,
    pub mechanisms: Vec<MechanismEntry>,
}

impl SweepSpec {
    pub fn validate(&self) -> Result<(), SweepError> {
        if self.values.is_empty() {
            return Err(SweepError::Spec("values must not be empty".into()));
        }
        if self.values.windows(2).any(|w| !(w[0] < w[1])) {
            return Err(SweepError::Spec("values must be strictly increasing".into()));
        }
        if self.axis.whole() && self.values.iter().any(|v| v.fract() != 0.0 || *v < 0.0) {
            return Err(SweepError::Spec(format!("{} values must be whole numbers >= 0", self.axis.name())));
        }
        let entries = self.entries();
        let mut labels: Vec<&str> = entries.iter().map(|e| e.label.as_str()).collect();
        let before = labels.len();
        labels.sort_unstable();
        labels.dedup();
        if labels.len() != before {
            return Err(SweepError::Spec("mechanism labels must be unique".into()));
        }
        Ok(())
    }

    /// Listed mechanisms with the baseline first.
    fn entries(&self) -> Vec<MechanismEntry> {
        let mut out = vec![MechanismEntry::preset(BASELINE).expect("baseline preset")];
        out.extend(self.mechanisms.iter().filter(|m| m.label != BASELINE).cloned());
        out
    }

    /// The base scenario moved to `value` on the axis.
    pub fn scenario_at(&self, value: f64, mechanism: &Mechanism) -> Result<Scenario, SweepError> {
        let mut s = self.base.clone();
        s.mechanism = mechanism.clone();
        let ctx = |e: crate::trace::TraceError| SweepError::Spec(format!("{}={value}: {e}", self.axis.name()));
        match &self.axis {
            Axis::Bandwidth => s.cluster.bandwidth = value,
            Axis::Workers => s.cluster.workers = value as usize,
            Axis::ComputeFactor => s.profile = scale_compute(&s.profile, value).map_err(ctx)?,
            Axis::AddedLayers { template, position } => {
                let at = position.unwrap_or(s.profile.len().saturating_sub(1));
                s.profile = mutate_profile(&s.profile, template, value as usize, at).map_err(ctx)?;
            }
        }
        Ok(s)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Row {
    pub value: f64,
    pub mechanism: String,
    pub iteration_s: f64,
    pub speedup: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub event_log: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ResultTable {
    pub axis: String,
    pub rows: Vec<Row>,
}

/// One simulation per (value, mechanism); rows ordered by value, then by
/// mechanism with the baseline first, independent of `jobs`.
pub fn run_sweep(spec: &SweepSpec, jobs: usize, log_dir: Option<&Path>) -> Result<ResultTable, SweepError> {
    spec.validate()?;
    let entries = spec.entries();
    let cells: Vec<(f64, &MechanismEntry)> =
        spec.values.iter().flat_map(|&v| entries.iter().map(move |e| (v, e))).collect();
    let axis = spec.axis.name();
    let one = |&(value, entry): &(f64, &MechanismEntry)| -> Result<Row, SweepError> {
        let context = format!("{axis}={value} mechanism={}", entry.label);
        let scenario = spec.scenario_at(value, &entry.mechanism)?;
        let result = simulate(&scenario).map_err(|source| SweepError::Scenario { context, source })?;
        let event_log = match log_dir {
            Some(dir) => {
                let path: PathBuf = dir.join(format!("{axis}_{value}_{}.jsonl", entry.label));
                let write = || -> std::io::Result<()> {
                    let f = std::io::BufWriter::new(std::fs::File::create(&path)?);
                    result.write_event_log(f)
                };
                write().map_err(|source| SweepError::Io { path: path.display().to_string(), source })?;
                Some(path.display().to_string())
            }
            None => None,
        };
        Ok(Row { value, mechanism: entry.label.clone(), iteration_s: result.iteration_time, speedup: f64::NAN, event_log })
    };
    let rows: Result<Vec<Row>, SweepError> = if jobs > 1 {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(jobs)
            .build()
            .map_err(|e| SweepError::Spec(format!("thread pool: {e}")))?;
        pool.install(|| cells.par_iter().map(one).collect())
    } else {
        cells.iter().map(one).collect()
    };
    let mut table = ResultTable { axis: axis.to_string(), rows: rows? };
    speedup_vs_baseline(&mut table)?;
    Ok(table)
}

/// Fills `speedup = baseline_time / time` per axis value.
pub fn speedup_vs_baseline(table: &mut ResultTable) -> Result<(), SweepError> {
    let mut base = Vec::new();
    for r in &table.rows {
        if r.mechanism == BASELINE {
            base.push((r.value, r.iteration_s));
        }
    }
    for r in &mut table.rows {
        let b = base
            .iter()
            .find(|(v, _)| *v == r.value)
            .ok_or_else(|| SweepError::Incomplete(format!("no baseline row at value {}", r.value)))?;
        r.speedup = b.1 / r.iteration_s;
    }
    Ok(())
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Ranked {
    pub mechanism: String,
    pub iteration_s: f64,
    /// Within the tie tolerance of the previous entry.
    pub tied_with_previous: bool,
}

/// Mechanisms at `value`, fastest first. With a non-empty `expected`, every
/// listed mechanism must be present and only those are ranked.
pub fn rank_mechanisms(table: &ResultTable, value: f64, expected: &[&str]) -> Result<Vec<Ranked>, SweepError> {
    let at: Vec<&Row> = table.rows.iter().filter(|r| r.value == value).collect();
    if at.is_empty() {
        return Err(SweepError::Incomplete(format!("no rows at value {value}")));
    }
    let mut picked: Vec<&Row> = if expected.is_empty() {
        at
    } else {
        expected
            .iter()
            .map(|name| {
                at.iter()
                    .find(|r| r.mechanism == *name)
                    .copied()
                    .ok_or_else(|| SweepError::Incomplete(format!("{name} missing at value {value}")))
            })
            .collect::<Result<_, _>>()?
    };
    picked.sort_by(|a, b| a.iteration_s.total_cmp(&b.iteration_s));
    let mut out: Vec<Ranked> = Vec::with_capacity(picked.len());
    for r in picked {
        let tied = out
            .last()
            .is_some_and(|p| (r.iteration_s - p.iteration_s).abs() <= RELATIVE_TIE * p.iteration_s.abs().max(r.iteration_s.abs()));
        out.push(Ranked { mechanism: r.mechanism.clone(), iteration_s: r.iteration_s, tied_with_previous: tied });
    }
    Ok(out)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct Superadditivity {
    pub combined: f64,
    /// `speedup(first) + speedup(second) - 1`.
    pub additive: f64,
    pub superadditive: bool,
}

/// Whether the combined mechanism beats the sum of the individual gains.
pub fn superadditivity(table: &ResultTable, value: f64, first: &str, second: &str, combined: &str) -> Result<Superadditivity, SweepError> {
    let speedup = |name: &str| {
        table
            .rows
            .iter()
            .find(|r| r.value == value && r.mechanism == name)
            .map(|r| r.speedup)
            .ok_or_else(|| SweepError::Incomplete(format!("{name} missing at value {value}")))
    };
    let c = speedup(combined)?;
    let additive = speedup(first)? + speedup(second)? - 1.0;
    Ok(Superadditivity { combined: c, additive, superadditive: c > additive })
}

impl ResultTable {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("axis,value,mechanism,iteration_s,speedup\n");
        for r in &self.rows {
            writeln!(out, "{},{},{},{},{}", self.axis, r.value, r.mechanism, r.iteration_s, r.speedup).expect("string write");
        }
        out
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("table serializes")
    }

    pub fn time(&self, value: f64, mechanism: &str) -> Option<f64> {
        self.rows.iter().find(|r| r.value == value && r.mechanism == mechanism).map(|r| r.iteration_s)
    }
}
