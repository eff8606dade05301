use std::collections::{HashMap, HashSet};

use serde::{Deserialize, Serialize};

use super::{Trace, TraceError};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParamSpec {
    pub name: String,
    /// Bits.
    pub size: f64,
    /// Gradient compute preceding this parameter's readiness in backprop.
    pub bp_compute: f64,
    pub fp_compute: f64,
}

impl ParamSpec {
    fn validate(&self) -> Result<(), String> {
        if self.name.is_empty() {
            return Err("parameter with empty name".into());
        }
        if !(self.size > 0.0 && self.size.is_finite()) {
            return Err(format!("{}: size must be positive, got {}", self.name, self.size));
        }
        for (what, v) in [("bp_compute", self.bp_compute), ("fp_compute", self.fp_compute)] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(format!("{}: {what} must be >= 0, got {v}", self.name));
            }
        }
        Ok(())
    }
}

/// Ordered parameters (index 0 is the first layer) and their totals.
///
/// Totals are always recomputed from `params`; a deserialized profile that
/// states different totals is rejected.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawProfile")]
pub struct ModelProfile {
    #[serde(default)]
    name: String,
    params: Vec<ParamSpec>,
    total_size: f64,
    c_f: f64,
    c_b: f64,
    b1: f64,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawProfile {
    #[serde(default)]
    name: String,
    params: Vec<ParamSpec>,
    total_size: Option<f64>,
    c_f: Option<f64>,
    c_b: Option<f64>,
    b1: Option<f64>,
}

impl TryFrom<RawProfile> for ModelProfile {
    type Error = String;

    fn try_from(raw: RawProfile) -> Result<Self, String> {
        let p = ModelProfile::new(raw.name, raw.params).map_err(|e| e.to_string())?;
        let close = |a: f64, b: f64| (a - b).abs() <= 1e-9 * a.abs().max(b.abs()).max(1e-300);
        if raw.total_size.is_some_and(|m| m != p.total_size) {
            return Err(format!("total_size does not equal the sum of sizes ({})", p.total_size));
        }
        for (what, given, have) in [("c_f", raw.c_f, p.c_f), ("c_b", raw.c_b, p.c_b), ("b1", raw.b1, p.b1)] {
            if given.is_some_and(|v| !close(v, have)) {
                return Err(format!("{what} does not match the parameters ({have})"));
            }
        }
        Ok(p)
    }
}

impl ModelProfile {
    pub fn new(name: impl Into<String>, params: Vec<ParamSpec>) -> Result<Self, TraceError> {
        if params.is_empty() {
            return Err(TraceError::Domain("profile has no parameters".into()));
        }
        let mut seen = HashSet::new();
        for p in &params {
            p.validate().map_err(TraceError::Domain)?;
            if !seen.insert(p.name.as_str()) {
                return Err(TraceError::Domain(format!("duplicate parameter name {:?}", p.name)));
            }
        }
        let total_size = params.iter().map(|p| p.size).sum();
        let c_f = params.iter().map(|p| p.fp_compute).sum();
        let c_b = params.iter().map(|p| p.bp_compute).sum();
        let b1 = params.last().expect("non-empty").bp_compute;
        Ok(ModelProfile { name: name.into(), params, total_size, c_f, c_b, b1 })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn params(&self) -> &[ParamSpec] {
        &self.params
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    /// Model size m in bits.
    pub fn total_size(&self) -> f64 {
        self.total_size
    }

    pub fn c_f(&self) -> f64 {
        self.c_f
    }

    pub fn c_b(&self) -> f64 {
        self.c_b
    }

    /// Compute of the first backprop layer (the last parameter).
    pub fn b1(&self) -> f64 {
        self.b1
    }

    pub fn max_param(&self) -> f64 {
        self.params.iter().map(|p| p.size).fold(0.0, f64::max)
    }

    pub fn with_name(mut self, name: impl Into<String>) -> Self {
        self.name = name.into();
        self
    }
}

/// Rebuilds a profile from one worker's partitioned, normalized traces.
///
/// Distribution order fixes model order; each parameter's backprop compute
/// is the gap between its gradient send and the next-later layer's send.
pub fn profile_from_trace(distribution: &Trace, aggregation: &Trace, c_f: f64) -> Result<ModelProfile, TraceError> {
    if !(c_f >= 0.0 && c_f.is_finite()) {
        return Err(TraceError::Domain(format!("forward pass time must be >= 0, got {c_f}")));
    }
    let mut order: Vec<(&str, f64)> = Vec::new();
    let mut index = HashMap::new();
    for e in &distribution.events {
        if !index.contains_key(e.param.as_str()) {
            index.insert(e.param.as_str(), order.len());
            order.push((e.param.as_str(), e.size));
        }
    }
    if order.is_empty() {
        return Err(TraceError::Empty);
    }
    let mut send = vec![f64::INFINITY; order.len()];
    for e in &aggregation.events {
        let i = *index
            .get(e.param.as_str())
            .ok_or_else(|| TraceError::Consistency(format!("{:?} is aggregated but never distributed", e.param)))?;
        send[i] = send[i].min(e.t);
    }
    if let Some(i) = send.iter().position(|t| t.is_infinite()) {
        return Err(TraceError::Consistency(format!("{:?} is never aggregated", order[i].0)));
    }
    let m: f64 = order.iter().map(|o| o.1).sum();
    let mut params = Vec::with_capacity(order.len());
    for (i, &(name, size)) in order.iter().enumerate() {
        let later = send.get(i + 1).copied().unwrap_or(0.0);
        let gap = send[i] - later;
        if gap < 0.0 {
            return Err(TraceError::Consistency(format!(
                "{name:?} is sent before a later layer; gradients must be ready in reverse model order"
            )));
        }
        params.push(ParamSpec { name: name.to_string(), size, bp_compute: gap, fp_compute: c_f * size / m });
    }
    ModelProfile::new(distribution.meta.model.clone(), params)
}

/// Inserts `count` copies of `template` before index `position`.
pub fn mutate_profile(profile: &ModelProfile, template: &ParamSpec, count: usize, position: usize) -> Result<ModelProfile, TraceError> {
    if position > profile.len() {
        return Err(TraceError::Domain(format!(
            "insert position {position} beyond {} parameters",
            profile.len()
        )));
    }
    if count == 0 {
        return Ok(profile.clone());
    }
    let taken: HashSet<&str> = profile.params.iter().map(|p| p.name.as_str()).collect();
    let mut copies = Vec::with_capacity(count);
    let mut k = 0usize;
    while copies.len() < count {
        let name = format!("{}/{k}", template.name);
        k += 1;
        if !taken.contains(name.as_str()) {
            copies.push(ParamSpec { name, ..template.clone() });
        }
    }
    let mut params = profile.params.clone();
    params.splice(position..position, copies);
    ModelProfile::new(profile.name.clone(), params)
}

/// Divides every compute time by `factor`.
pub fn scale_compute(profile: &ModelProfile, factor: f64) -> Result<ModelProfile, TraceError> {
    if !(factor > 0.0 && factor.is_finite()) {
        return Err(TraceError::Domain(format!("compute factor must be positive, got {factor}")));
    }
    if factor == 1.0 {
        return Ok(profile.clone());
    }
    let params = profile
        .params
        .iter()
        .map(|p| ParamSpec {
            bp_compute: p.bp_compute / factor,
            fp_compute: p.fp_compute / factor,
            ..p.clone()
        })
        .collect();
    ModelProfile::new(profile.name.clone(), params)
}
