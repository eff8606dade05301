//! Brute-force reference for the fluid engine.
//!
//! Random small instances are run twice: once through [`Engine`], once
//! through a fixed-step integrator that recomputes max-min shares flow by
//! flow every step. Completion times should agree to well under a percent.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::engine::{Engine, EngineError, NodeId, Notice, Process, Role, SwitchHop, Topology};

#[derive(Clone, Debug, PartialEq, Serialize)]
pub enum FlowKind {
    Unicast { src: NodeId, dst: NodeId },
    Multicast { src: NodeId, dsts: Vec<NodeId> },
    Aggregation { srcs: Vec<NodeId>, dst: NodeId },
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct FlowRequest {
    pub start: f64,
    pub size: f64,
    pub kind: FlowKind,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Instance {
    pub topology: Topology,
    pub switch_hop: SwitchHop,
    pub flows: Vec<FlowRequest>,
}

/// At most four hosts and six transfers, mixing every transfer kind.
pub fn random_instance(seed: u64) -> Instance {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let workers = rng.random_range(1..=3);
    let servers = if workers == 1 { 1 } else { rng.random_range(0..=1) };
    let hosts: Vec<NodeId> = (0..workers).map(NodeId::worker).chain((0..servers).map(NodeId::ps)).collect();
    let latency = if rng.random_bool(0.5) { 0.0 } else { rng.random_range(0.01..0.3) };
    let topology = Topology::new(workers, servers, rng.random_range(0.5..4.0), latency).expect("valid ranges");
    let switch_hop = if rng.random_bool(0.5) { SwitchHop::Free } else { SwitchHop::Charged };
    let n = rng.random_range(1..=6);
    let mut flows = Vec::with_capacity(n);
    for _ in 0..n {
        let start = if rng.random_bool(0.3) { 0.0 } else { rng.random_range(0.0..3.0) };
        let size = rng.random_range(0.2..6.0);
        let dst = hosts[rng.random_range(0..hosts.len())];
        let others: Vec<NodeId> = hosts.iter().copied().filter(|&h| h != dst).collect();
        let picked: Vec<NodeId> = others.iter().copied().filter(|_| rng.random_bool(0.6)).collect();
        let picked = if picked.is_empty() { vec![others[0]] } else { picked };
        let kind = match rng.random_range(0..3) {
            0 => FlowKind::Unicast { src: picked[0], dst },
            1 => FlowKind::Multicast { src: dst, dsts: picked },
            _ => FlowKind::Aggregation { srcs: picked, dst },
        };
        flows.push(FlowRequest { start, size, kind });
    }
    Instance { topology, switch_hop, flows }
}

struct Launcher<'a> {
    flows: &'a [FlowRequest],
    done: Vec<f64>,
}

impl Process<usize> for Launcher<'_> {
    fn on_notice(&mut self, e: &mut Engine<usize>, notice: Notice<usize>) {
        match notice {
            Notice::Timer(i) => {
                let f = &self.flows[i];
                match &f.kind {
                    FlowKind::Unicast { src, dst } => e.start_unicast(*src, *dst, f.size, i),
                    FlowKind::Multicast { src, dsts } => e.start_multicast(*src, dsts, f.size, i),
                    FlowKind::Aggregation { srcs, dst } => e.start_aggregation(srcs, *dst, f.size, i),
                }
                .expect("generated instances are valid");
            }
            Notice::Transmitted { .. } => {}
            Notice::Delivered { tag, .. } => {
                self.done[tag] = self.done[tag].max(e.now());
            }
        }
    }
}

/// Delivery time of each request (latest receiver for multicast).
/// `fault` scales every computed rate, for exercising the self-check.
pub fn engine_completions(inst: &Instance, fault: Option<f64>) -> Result<Vec<f64>, EngineError> {
    let mut e = Engine::new(inst.topology.clone()).with_switch_hop(inst.switch_hop);
    if let Some(f) = fault {
        e.network_mut().inject_rate_fault(f);
    }
    for (i, f) in inst.flows.iter().enumerate() {
        e.schedule_at(f.start, i);
    }
    let mut p = Launcher { flows: &inst.flows, done: vec![f64::NAN; inst.flows.len()] };
    e.run(&mut p);
    if let Some(i) = p.done.iter().position(|t| t.is_nan()) {
        return Err(EngineError::Domain(format!("request {i} never completed")));
    }
    Ok(p.done)
}

/// One constrained flow in the integrator.
struct Wire {
    request: usize,
    links: Vec<usize>,
    remaining: f64,
    /// Aggregation branch that still has to be counted on arrival.
    branch: bool,
}

/// Max-min shares by the textbook water-filling over individual flows.
fn max_min(wires: &[&Wire], caps: &[f64]) -> Vec<f64> {
    let mut rate = vec![0.0; wires.len()];
    let mut frozen = vec![false; wires.len()];
    let mut spare = caps.to_vec();
    loop {
        let mut best: Option<(f64, usize)> = None;
        for (l, &cap) in spare.iter().enumerate() {
            let users = (0..wires.len()).filter(|&i| !frozen[i] && wires[i].links.contains(&l)).count();
            if users > 0 {
                let share = cap / users as f64;
                if best.is_none_or(|(s, _)| share < s) {
                    best = Some((share, l));
                }
            }
        }
        let Some((share, link)) = best else { break };
        for i in 0..wires.len() {
            if !frozen[i] && wires[i].links.contains(&link) {
                frozen[i] = true;
                rate[i] = share;
                for &l in &wires[i].links {
                    spare[l] -= share;
                }
            }
        }
    }
    rate
}

/// Fixed-step integration with steps no longer than `horizon / steps`,
/// cut short wherever a flow finishes or a request fires.
pub fn oracle_completions(inst: &Instance, steps: usize) -> Vec<f64> {
    let topo = &inst.topology;
    let hosts = topo.workers + topo.parameter_servers;
    let link = |n: NodeId, up: bool| {
        let i = match n.role {
            Role::Worker => n.index,
            Role::Ps => topo.workers + n.index,
            Role::Switch => unreachable!("switch links are unconstrained"),
        };
        if up { i } else { hosts + i }
    };
    let caps = vec![topo.link_rate; 2 * hosts];
    let lat = topo.latency;
    let horizon: f64 = inst.flows.iter().map(|f| f.start).fold(0.0, f64::max)
        + inst.flows.iter().map(|f| f.size * 4.0).sum::<f64>() / topo.link_rate
        + 4.0 * lat;
    let dt_max = horizon / steps as f64;

    let mut done = vec![f64::NAN; inst.flows.len()];
    let mut branches_left: Vec<usize> = inst
        .flows
        .iter()
        .map(|f| if let FlowKind::Aggregation { srcs, .. } = &f.kind { srcs.len() } else { 0 })
        .collect();
    // (time, request, is_branch_arrival)
    let mut pending: Vec<(f64, usize, bool)> = inst.flows.iter().enumerate().map(|(i, f)| (f.start, i, false)).collect();
    let mut started = vec![false; inst.flows.len()];
    let mut wires: Vec<Wire> = Vec::new();
    let mut t = 0.0;
    while done.iter().any(|d| d.is_nan()) {
        // Fire everything due now.
        let mut fired = true;
        while fired {
            fired = false;
            let mut k = 0;
            while k < pending.len() {
                if pending[k].0 <= t {
                    let (at, i, arrival) = pending.swap_remove(k);
                    fired = true;
                    let f = &inst.flows[i];
                    if !started[i] {
                        started[i] = true;
                        match &f.kind {
                            FlowKind::Unicast { src, dst } => wires.push(Wire {
                                request: i,
                                links: vec![link(*src, true), link(*dst, false)],
                                remaining: f.size,
                                branch: false,
                            }),
                            FlowKind::Multicast { src, dsts } => wires.push(Wire {
                                request: i,
                                links: std::iter::once(link(*src, true)).chain(dsts.iter().map(|d| link(*d, false))).collect(),
                                remaining: f.size,
                                branch: false,
                            }),
                            FlowKind::Aggregation { srcs, .. } => {
                                for s in srcs {
                                    wires.push(Wire { request: i, links: vec![link(*s, true)], remaining: f.size, branch: true });
                                }
                            }
                        }
                    } else if arrival {
                        branches_left[i] -= 1;
                        if branches_left[i] == 0 {
                            let FlowKind::Aggregation { dst, .. } = &f.kind else { unreachable!() };
                            match inst.switch_hop {
                                SwitchHop::Free => done[i] = at,
                                SwitchHop::Charged => wires.push(Wire {
                                    request: i,
                                    links: vec![link(*dst, false)],
                                    remaining: f.size,
                                    branch: false,
                                }),
                            }
                        }
                    } else {
                        done[i] = at;
                    }
                } else {
                    k += 1;
                }
            }
        }
        if !done.iter().any(|d| d.is_nan()) {
            break;
        }
        let next_event = pending.iter().map(|p| p.0).fold(f64::INFINITY, f64::min);
        let view: Vec<&Wire> = wires.iter().collect();
        let rates = max_min(&view, &caps);
        let first_finish = wires
            .iter()
            .zip(&rates)
            .filter(|(_, r)| **r > 0.0)
            .map(|(w, r)| w.remaining / r)
            .fold(f64::INFINITY, f64::min);
        let dt = dt_max.min(next_event - t).min(first_finish);
        let mut keep = Vec::with_capacity(wires.len());
        for (mut w, r) in wires.drain(..).zip(rates) {
            if r > 0.0 && w.remaining <= r * dt * (1.0 + 1e-12) {
                pending.push((t + dt + lat, w.request, w.branch));
            } else {
                w.remaining -= r * dt;
                keep.push(w);
            }
        }
        wires = keep;
        t += dt;
        assert!(t < 10.0 * horizon + 1.0, "oracle failed to converge");
    }
    done
}

/// Largest relative gap between engine and oracle completions, taken
/// against the instance's makespan.
pub fn compare(inst: &Instance, fault: Option<f64>, steps: usize) -> Result<f64, EngineError> {
    let fast = engine_completions(inst, fault)?;
    let slow = oracle_completions(inst, steps);
    let span = slow.iter().copied().fold(0.0, f64::max).max(1e-12);
    Ok(fast.iter().zip(&slow).map(|(a, b)| (a - b).abs() / span).fold(0.0, f64::max))
}
