//! Engine self-check: oracle agreement on random instances plus an
//! invariant battery over every mechanism.

use serde::Serialize;

use crate::engine::{FluidNetwork, Link, NodeId, SimResult};
use crate::mechanisms::{simulate, ClusterConfig, Mechanism, PsOptions, RingOptions, Scenario};
use crate::oracle::{compare, random_instance, FlowKind, Instance};
use crate::trace::{ModelProfile, ParamSpec};

/// Largest accepted engine/oracle gap, relative to the makespan.
pub const ORACLE_TOLERANCE: f64 = 1e-3;

#[derive(Clone, Debug)]
pub struct SelfCheckOptions {
    pub seed: u64,
    pub instances: usize,
    /// Scale every fluid rate by this factor; the battery must then fail.
    pub fault: Option<f64>,
}

impl Default for SelfCheckOptions {
    fn default() -> Self {
        SelfCheckOptions { seed: 0, instances: 200, fault: None }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct Report {
    pub checks: Vec<Check>,
}

impl Report {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    fn push(&mut self, name: impl Into<String>, outcome: Result<String, String>) {
        let (passed, detail) = match outcome {
            Ok(d) => (true, d),
            Err(d) => (false, d),
        };
        self.checks.push(Check { name: name.into(), passed, detail });
    }
}

pub fn run(opts: &SelfCheckOptions) -> Report {
    let mut report = Report::default();
    report.push("oracle_agreement", oracle_agreement(opts));
    report.push("work_conservation", work_conservation(opts));
    for (name, scenario) in battery_scenarios() {
        report.push(format!("invariants/{name}"), simulate(&scenario).map_err(|e| e.to_string()).and_then(|r| {
            r.check_invariants()?;
            expected_bits(&scenario, &r)?;
            Ok(format!("iteration {:.9}", r.iteration_time))
        }));
    }
    report.push("mechanisms_never_hurt", never_hurt());
    report.push("single_worker_identity", single_worker());
    report.push("determinism", determinism());
    report
}

fn oracle_agreement(opts: &SelfCheckOptions) -> Result<String, String> {
    let mut worst = (0.0, 0);
    for k in 0..opts.instances as u64 {
        let seed = opts.seed.wrapping_add(k);
        let gap = compare(&random_instance(seed), opts.fault, 5_000).map_err(|e| format!("seed {seed}: {e}"))?;
        if gap > worst.0 {
            worst = (gap, seed);
        }
    }
    if worst.0 <= ORACLE_TOLERANCE {
        Ok(format!("{} instances, worst gap {:.3e}", opts.instances, worst.0))
    } else {
        Err(format!("seed {} disagrees by {:.3e} of the makespan", worst.1, worst.0))
    }
}

fn work_conservation(opts: &SelfCheckOptions) -> Result<String, String> {
    for k in 0..opts.instances as u64 {
        let seed = opts.seed.wrapping_add(k);
        let inst: Instance = random_instance(seed);
        let mut net = FluidNetwork::new(&inst.topology);
        if let Some(f) = opts.fault {
            net.inject_rate_fault(f);
        }
        let mut id = 0;
        for f in &inst.flows {
            let mut add = |src, dsts| {
                net.add(id, src, dsts, f.size);
                id += 1;
            };
            match &f.kind {
                FlowKind::Unicast { src, dst } => add(*src, vec![*dst]),
                FlowKind::Multicast { src, dsts } => add(*src, dsts.clone()),
                FlowKind::Aggregation { srcs, .. } => srcs.iter().for_each(|s| add(*s, vec![NodeId::switch()])),
            }
        }
        net.check_work_conservation().map_err(|e| format!("seed {seed}: {e}"))?;
    }
    Ok(format!("{} instances", opts.instances))
}

fn small_profile() -> ModelProfile {
    let sizes = [4.0e6, 1.0e6, 2.0e6, 8.0e6];
    let params = sizes
        .iter()
        .enumerate()
        .map(|(i, &size)| ParamSpec { name: format!("l{i}"), size, bp_compute: 2e-4 * (i + 1) as f64, fp_compute: 1e-4 })
        .collect();
    ModelProfile::new("selfcheck", params).expect("valid profile")
}

fn scenario(workers: usize, mechanism: Mechanism) -> Scenario {
    Scenario { profile: small_profile(), cluster: ClusterConfig::new(workers, 1e9), mechanism }
}

fn ps(multicast: bool, in_net_agg: bool) -> Mechanism {
    Mechanism::Ps(PsOptions { multicast, in_net_agg, ..PsOptions::default() })
}

fn battery_scenarios() -> Vec<(&'static str, Scenario)> {
    vec![
        ("baseline", scenario(4, ps(false, false))),
        ("multicast", scenario(4, ps(true, false))),
        ("agg", scenario(4, ps(false, true))),
        ("multicast_agg", scenario(4, ps(true, true))),
        ("ring", scenario(4, Mechanism::RingReduce(RingOptions { messaging: true, multicast_second_ring: false }))),
        ("butterfly", scenario(4, Mechanism::Butterfly)),
    ]
}

fn expect(r: &SimResult, link: Link, want: f64) -> Result<(), String> {
    let got = r.bits_on(link);
    if (got - want).abs() <= 1e-9 * want {
        Ok(())
    } else {
        Err(format!("{link} carried {got} bits, expected {want}"))
    }
}

/// Per-link bit counts implied by each mechanism's traffic pattern.
fn expected_bits(s: &Scenario, r: &SimResult) -> Result<(), String> {
    let m = s.profile.total_size();
    let w = s.cluster.workers as f64;
    let server = NodeId::ps(0);
    for k in 0..s.cluster.workers {
        let node = NodeId::worker(k);
        match &s.mechanism {
            Mechanism::Ps(_) => {
                expect(r, Link::up(node), m)?;
                expect(r, Link::down(node), m)?;
            }
            Mechanism::RingReduce(_) => expect(r, Link::up(node), 2.0 * m * (w - 1.0) / w)?,
            Mechanism::Butterfly => expect(r, Link::up(node), m * w.log2())?,
        }
    }
    if let Mechanism::Ps(o) = &s.mechanism {
        expect(r, Link::up(server), if o.multicast { m } else { w * m })?;
        expect(r, Link::down(server), if o.in_net_agg { m } else { w * m })?;
    }
    Ok(())
}

fn time(s: &Scenario) -> Result<f64, String> {
    simulate(s).map(|r| r.iteration_time).map_err(|e| e.to_string())
}

fn never_hurt() -> Result<String, String> {
    for w in [2, 4, 8] {
        let base = time(&scenario(w, ps(false, false)))?;
        for (name, mech) in [("multicast", ps(true, false)), ("agg", ps(false, true)), ("both", ps(true, true))] {
            let t = time(&scenario(w, mech))?;
            if t > base * (1.0 + 1e-12) {
                return Err(format!("{name} at {w} workers took {t} > baseline {base}"));
            }
        }
    }
    Ok("multicast and aggregation never slower than baseline".into())
}

fn single_worker() -> Result<String, String> {
    let base = time(&scenario(1, ps(false, false)))?;
    for mech in [ps(true, false), ps(false, true), ps(true, true)] {
        let t = time(&scenario(1, mech.clone()))?;
        if t != base {
            return Err(format!("{mech:?} with one worker took {t}, baseline {base}"));
        }
    }
    let p = small_profile();
    let compute = p.c_f() + p.c_b();
    let t = time(&scenario(1, Mechanism::Butterfly))?;
    if (t - compute).abs() > 1e-12 * compute {
        return Err(format!("butterfly with one worker took {t}, compute is {compute}"));
    }
    Ok(format!("ps {base}, butterfly {t}"))
}

fn determinism() -> Result<String, String> {
    let mut s = scenario(4, ps(true, false));
    s.cluster.variance = crate::mechanisms::Variance::Lognormal { sigma: 0.2 };
    s.cluster.seed = 7;
    let a = simulate(&s).map_err(|e| e.to_string())?;
    let b = simulate(&s).map_err(|e| e.to_string())?;
    if a == b {
        Ok("identical reruns".into())
    } else {
        Err("reruns with the same seed differ".into())
    }
}
