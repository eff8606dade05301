//! Per-mechanism iteration simulators on top of the engine.

mod assign;
mod butterfly;
mod ps;
mod ring;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, LogNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::engine::{EngineError, SimResult, SwitchHop, Topology};
use crate::trace::ModelProfile;

pub use assign::{assign_params, shares, Assignment, Fragment};
pub use butterfly::simulate_butterfly;
pub use ps::{measure_steady_state, run_ps, simulate_ps, PsRun};
pub use ring::simulate_ring;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MechError {
    #[error("invalid scenario: {}", .0.join("; "))]
    Validation(Vec<String>),
    #[error("unsupported mechanism: {0}")]
    Unsupported(String),
    #[error(transparent)]
    Engine(#[from] EngineError),
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variance {
    #[default]
    None,
    /// Per-worker, per-iteration compute multiplier `exp(N(0, sigma))`.
    Lognormal { sigma: f64 },
}

fn one() -> usize {
    1
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClusterConfig {
    pub workers: usize,
    #[serde(default = "one")]
    pub parameter_servers: usize,
    /// Bits per second per endpoint link.
    pub bandwidth: f64,
    #[serde(default)]
    pub latency: f64,
    #[serde(default)]
    pub variance: Variance,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub switch_hop: SwitchHop,
}

impl ClusterConfig {
    pub fn new(workers: usize, bandwidth: f64) -> Self {
        ClusterConfig {
            workers,
            parameter_servers: 1,
            bandwidth,
            latency: 0.0,
            variance: Variance::None,
            seed: 0,
            switch_hop: SwitchHop::Free,
        }
    }

    pub(crate) fn topology(&self) -> Result<Topology, MechError> {
        Ok(Topology::new(self.workers, self.parameter_servers, self.bandwidth, self.latency)?)
    }

    /// Compute multipliers indexed `[iteration][worker]`.
    pub fn multipliers(&self, iterations: usize) -> Vec<Vec<f64>> {
        match self.variance {
            Variance::Lognormal { sigma } if sigma > 0.0 => {
                let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
                let dist = LogNormal::new(0.0, sigma).expect("validated sigma");
                (0..iterations)
                    .map(|_| (0..self.workers).map(|_| dist.sample(&mut rng)).collect())
                    .collect()
            }
            _ => vec![vec![1.0; self.workers]; iterations],
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DistributionOrder {
    /// Each parameter goes to workers 0..W-1 in turn before the next one.
    #[default]
    RoundRobin,
    /// The whole shard goes to one worker before the next.
    Block,
    /// Each parameter goes to every worker at once, sharing the PS link.
    Concurrent,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PsOptions {
    pub multicast: bool,
    pub in_net_agg: bool,
    pub distribution_order: DistributionOrder,
    pub assignment: Assignment,
    pub message_bits: Option<f64>,
    pub global_barrier: bool,
}

impl Default for PsOptions {
    fn default() -> Self {
        PsOptions {
            multicast: false,
            in_net_agg: false,
            distribution_order: DistributionOrder::RoundRobin,
            assignment: Assignment::TfRoundRobin,
            message_bits: None,
            global_barrier: true,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RingOptions {
    /// Split every parameter into one chunk per worker.
    pub messaging: bool,
    pub multicast_second_ring: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mechanism {
    Ps(PsOptions),
    RingReduce(RingOptions),
    Butterfly,
}

impl Mechanism {
    pub fn baseline() -> Self {
        Mechanism::Ps(PsOptions::default())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub profile: ModelProfile,
    pub cluster: ClusterConfig,
    pub mechanism: Mechanism,
}

impl Scenario {
    /// Every violated constraint, not just the first.
    pub fn violations(&self) -> Vec<String> {
        let c = &self.cluster;
        let mut v = Vec::new();
        if c.workers < 1 {
            v.push("cluster.workers must be at least 1".to_string());
        }
        if !(c.bandwidth > 0.0 && c.bandwidth.is_finite()) {
            v.push(format!("cluster.bandwidth must be positive, got {}", c.bandwidth));
        }
        if !(c.latency >= 0.0 && c.latency.is_finite()) {
            v.push(format!("cluster.latency must be >= 0, got {}", c.latency));
        }
        if let Variance::Lognormal { sigma } = c.variance {
            if !(sigma >= 0.0 && sigma.is_finite()) {
                v.push(format!("cluster.variance sigma must be >= 0, got {sigma}"));
            }
        }
        match &self.mechanism {
            Mechanism::Ps(o) => {
                if c.parameter_servers < 1 {
                    v.push("parameter-server mechanisms need cluster.parameter_servers >= 1".into());
                }
                if let Some(bits) = o.message_bits {
                    if !(bits > 0.0 && bits.is_finite()) {
                        v.push(format!("message_bits must be positive, got {bits}"));
                    }
                }
            }
            Mechanism::RingReduce(_) => {
                if c.workers < 2 {
                    v.push(format!("ring_reduce needs at least 2 workers, got {}", c.workers));
                }
            }
            Mechanism::Butterfly => {
                if !c.workers.is_power_of_two() {
                    v.push(format!("butterfly needs a power-of-two worker count, got {}", c.workers));
                }
            }
        }
        v
    }

    pub fn validate(&self) -> Result<(), MechError> {
        let v = self.violations();
        if v.is_empty() {
            Ok(())
        } else {
            Err(MechError::Validation(v))
        }
    }
}

/// Simulates one iteration of whichever mechanism the scenario names.
pub fn simulate(scenario: &Scenario) -> Result<SimResult, MechError> {
    match scenario.mechanism {
        Mechanism::Ps(_) => simulate_ps(scenario),
        Mechanism::RingReduce(_) => simulate_ring(scenario),
        Mechanism::Butterfly => simulate_butterfly(scenario),
    }
}

/// Iteration time as the latest span end, matching `SimResult` invariants.
pub(crate) fn last_end(timeline: &std::collections::BTreeMap<crate::engine::NodeId, Vec<crate::engine::Span>>) -> f64 {
    timeline.values().flatten().map(|s| s.end).fold(0.0, f64::max)
}
