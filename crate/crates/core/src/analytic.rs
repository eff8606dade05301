//! Closed-form iteration cost model.
//!
//! An iteration is a distribution step D overlapped with the forward pass and
//! an aggregation step A overlapped with backprop:
//!
//! ```text
//! D = max(c_f, t_d)    t_d = w*m/(p*b), or m/b with multicast
//! A = max(c_b, t_a)    t_a = w*m/(p*b), or m/b with in-network aggregation
//! ```

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::trace::ModelProfile;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AnalyticError {
    #[error("domain error: {0}")]
    Domain(String),
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AnalyticInputs {
    /// Model size in bits.
    pub m: f64,
    pub w: usize,
    pub p: usize,
    /// Bits per second per endpoint link.
    pub b: f64,
    pub c_f: f64,
    pub c_b: f64,
}

impl AnalyticInputs {
    pub fn validate(&self) -> Result<(), AnalyticError> {
        let mut bad = Vec::new();
        for (what, v) in [("m", self.m), ("b", self.b), ("c_f", self.c_f), ("c_b", self.c_b)] {
            if !(v > 0.0 && v.is_finite()) {
                bad.push(format!("{what} must be positive, got {v}"));
            }
        }
        if self.w < 1 {
            bad.push("w must be at least 1".into());
        }
        if self.p < 1 {
            bad.push("p must be at least 1".into());
        }
        if bad.is_empty() {
            Ok(())
        } else {
            Err(AnalyticError::Domain(bad.join("; ")))
        }
    }

    pub fn with_workers(self, w: usize) -> Self {
        AnalyticInputs { w, ..self }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct MechanismFlags {
    pub multicast: bool,
    pub in_net_agg: bool,
}

impl MechanismFlags {
    pub const NONE: MechanismFlags = MechanismFlags { multicast: false, in_net_agg: false };

    pub fn only(which: Which) -> Self {
        match which {
            Which::Multicast => MechanismFlags { multicast: true, in_net_agg: false },
            Which::InNetAgg => MechanismFlags { multicast: false, in_net_agg: true },
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Which {
    Multicast,
    InNetAgg,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepTimes {
    pub t_d: f64,
    pub t_a: f64,
    pub d: f64,
    pub a: f64,
}

fn transfer(inp: &AnalyticInputs, assisted: bool) -> f64 {
    if assisted {
        inp.m / inp.b
    } else {
        inp.w as f64 * inp.m / (inp.p as f64 * inp.b)
    }
}

pub fn step_times(inp: &AnalyticInputs, flags: MechanismFlags) -> StepTimes {
    let t_d = transfer(inp, flags.multicast);
    let t_a = transfer(inp, flags.in_net_agg);
    StepTimes { t_d, t_a, d: inp.c_f.max(t_d), a: inp.c_b.max(t_a) }
}

pub fn iteration_time(inp: &AnalyticInputs, flags: MechanismFlags) -> f64 {
    let s = step_times(inp, flags);
    s.d + s.a
}

/// Smallest worker count at which the step `which` accelerates runs
/// network-bound without it (`w*m/(p*b) > c`).
///
/// From that count on the mechanism strictly shortens the iteration, except
/// at `w <= p` where its own `m/b` transfer is no shorter than the unassisted
/// one. The worker count in `inp` is ignored.
pub fn mechanism_threshold(inp: &AnalyticInputs, which: Which) -> usize {
    let c = match which {
        Which::Multicast => inp.c_f,
        Which::InNetAgg => inp.c_b,
    };
    let bound = |w: usize| transfer(&inp.with_workers(w), false) > c;
    let guess = (c * inp.p as f64 * inp.b / inp.m).floor();
    let mut w = if guess.is_finite() && guess >= 0.0 { guess as usize + 1 } else { 1 };
    while w > 1 && bound(w - 1) {
        w -= 1;
    }
    while !bound(w) {
        w += 1;
    }
    w
}

/// Baseline over assisted iteration time for each worker count.
pub fn speedup_curve(inp: &AnalyticInputs, flags: MechanismFlags, ws: &[usize]) -> Vec<(usize, f64)> {
    ws.iter()
        .map(|&w| {
            let at = inp.with_workers(w);
            (w, iteration_time(&at, MechanismFlags::NONE) / iteration_time(&at, flags))
        })
        .collect()
}

/// Time a ring-reduce of unsplit parameters spends on its largest parameter.
pub fn ring_overhead(max_param: f64, workers: usize, b: f64) -> Result<f64, AnalyticError> {
    if workers < 2 {
        return Err(AnalyticError::Domain(format!("ring needs at least 2 workers, got {workers}")));
    }
    Ok(2.0 * (workers - 1) as f64 * max_param / b)
}

/// Wire time of the allgather ring, or of one multicast replacing it.
pub fn second_ring_overhead(m: f64, workers: usize, b: f64, multicast: bool) -> Result<f64, AnalyticError> {
    if workers < 2 {
        return Err(AnalyticError::Domain(format!("ring needs at least 2 workers, got {workers}")));
    }
    Ok(if multicast {
        m / b
    } else {
        m * (workers - 1) as f64 / (workers as f64 * b)
    })
}

/// Whether block distribution should do as well as in-network aggregation:
/// `B_1 + m/b > c_b`.
pub fn block_matches_agg(profile: &ModelProfile, b: f64) -> bool {
    profile.b1() + profile.total_size() / b > profile.c_b()
}

/// Whether the distribution delay `d` exceeds the slack `full - first`,
/// so that removing backprop staggering would pay off. Differences within
/// rounding error count as ties.
pub fn stagger_hurts(d: f64, full: f64, first: f64) -> bool {
    let scale = d.abs().max(full.abs()).max(first.abs());
    d - (full - first) > 4.0 * f64::EPSILON * scale
}
