//! Ring all-reduce: a reduce ring followed by an allgather ring, pipelined
//! per parameter (or per chunk) with no barrier between the two.

use crate::engine::{Engine, NodeId, Notice, Phase, Process, SimResult, SpanTracker};

use super::{last_end, MechError, Mechanism, RingOptions, Scenario};

#[derive(Clone, Copy, Debug, PartialEq)]
enum Tag {
    FwdDone { w: usize },
    GradReady { w: usize, param: usize },
    Reduce { unit: usize },
    Gather { unit: usize },
}

/// A parameter, or one chunk of it, travelling the ring.
struct Unit {
    param: usize,
    chunk: usize,
    bits: f64,
    owner: usize,
    /// Reduce hops delivered so far.
    hops: usize,
    in_flight: bool,
    gathered: usize,
}

struct RingSim<'a> {
    scenario: &'a Scenario,
    opts: &'a RingOptions,
    w: usize,
    mult: Vec<f64>,
    units: Vec<Unit>,
    of_param: Vec<Vec<usize>>,
    ready: Vec<Vec<bool>>,
    fwd_left: usize,
    fwd_end: f64,
    spans: SpanTracker,
}

impl<'a> RingSim<'a> {
    fn name(&self, param: usize) -> &'a str {
        &self.scenario.profile.params()[param].name
    }

    fn detail(&self, unit: usize) -> String {
        format!("iter=0 chunk={}", self.units[unit].chunk)
    }

    fn start_backprop(&mut self, e: &mut Engine<Tag>) {
        for w in 0..self.w {
            let node = NodeId::worker(w);
            e.log(node, "bp_start", None, "iter=0".into());
            self.spans.touch(node, Phase::Backprop, 0, e.now());
            let mut t = e.now();
            for (param, spec) in self.scenario.profile.params().iter().enumerate().rev() {
                t += spec.bp_compute * self.mult[w];
                e.schedule_at(t, Tag::GradReady { w, param });
            }
        }
    }

    fn advance(&mut self, e: &mut Engine<Tag>, unit: usize) {
        let u = &self.units[unit];
        if u.in_flight {
            return;
        }
        let holder = (u.owner + u.hops) % self.w;
        if u.hops == self.w || !self.ready[holder][u.param] {
            return;
        }
        let (param, bits) = (u.param, u.bits);
        let from = NodeId::worker(holder);
        let detail = self.detail(unit);
        if u.hops + 1 < self.w {
            let to = NodeId::worker((holder + 1) % self.w);
            e.start_unicast(from, to, bits, Tag::Reduce { unit }).expect("validated scenario");
            e.log(from, "reduce_send", Some(self.name(param)), detail);
            self.spans.touch(from, Phase::Aggregation, 0, e.now());
            self.units[unit].in_flight = true;
            return;
        }
        // The last holder folds in its own gradient and starts the allgather.
        self.units[unit].hops = self.w;
        e.log(from, "reduce_done", Some(self.name(param)), detail.clone());
        self.spans.touch(from, Phase::Aggregation, 0, e.now());
        let others: Vec<NodeId> = (1..self.w).map(|k| NodeId::worker((holder + k) % self.w)).collect();
        if self.opts.multicast_second_ring && others.len() > 1 {
            e.start_multicast(from, &others, bits, Tag::Gather { unit })
        } else {
            e.start_unicast(from, others[0], bits, Tag::Gather { unit })
        }
        .expect("validated scenario");
        e.log(from, "gather_send", Some(self.name(param)), detail);
        self.spans.touch(from, Phase::Distribution, 0, e.now());
    }
}

impl Process<Tag> for RingSim<'_> {
    fn on_notice(&mut self, e: &mut Engine<Tag>, notice: Notice<Tag>) {
        match notice {
            Notice::Timer(Tag::FwdDone { w }) => {
                let node = NodeId::worker(w);
                e.log(node, "fwd_end", None, "iter=0".into());
                self.spans.touch(node, Phase::Forward, 0, e.now());
                self.fwd_left -= 1;
                self.fwd_end = self.fwd_end.max(e.now());
                if self.fwd_left == 0 {
                    self.start_backprop(e);
                }
            }
            Notice::Timer(Tag::GradReady { w, param }) => {
                let node = NodeId::worker(w);
                e.log(node, "grad_ready", Some(self.name(param)), "iter=0".into());
                self.spans.touch(node, Phase::Backprop, 0, e.now());
                self.ready[w][param] = true;
                for unit in self.of_param[param].clone() {
                    self.advance(e, unit);
                }
            }
            Notice::Transmitted { .. } => {}
            Notice::Delivered { dst, tag: Tag::Reduce { unit }, .. } => {
                let param = self.units[unit].param;
                e.log(dst, "reduce_recv", Some(self.name(param)), self.detail(unit));
                self.spans.touch(dst, Phase::Aggregation, 0, e.now());
                let u = &mut self.units[unit];
                u.hops += 1;
                u.in_flight = false;
                self.advance(e, unit);
            }
            Notice::Delivered { dst, tag: Tag::Gather { unit }, .. } => {
                let (param, bits) = (self.units[unit].param, self.units[unit].bits);
                let detail = self.detail(unit);
                e.log(dst, "gather_recv", Some(self.name(param)), detail.clone());
                self.spans.touch(dst, Phase::Distribution, 0, e.now());
                let u = &mut self.units[unit];
                u.gathered += 1;
                let multicast = self.opts.multicast_second_ring && self.w > 2;
                if !multicast && u.gathered + 1 < self.w {
                    let next = NodeId::worker((dst.index + 1) % self.w);
                    e.start_unicast(dst, next, bits, Tag::Gather { unit }).expect("validated scenario");
                    e.log(dst, "gather_send", Some(self.name(param)), detail);
                    self.spans.touch(dst, Phase::Distribution, 0, e.now());
                }
            }
            other => unreachable!("unexpected notice {other:?}"),
        }
    }
}

pub fn simulate_ring(scenario: &Scenario) -> Result<SimResult, MechError> {
    scenario.validate()?;
    let Mechanism::RingReduce(opts) = &scenario.mechanism else {
        return Err(MechError::Unsupported("expected ring_reduce".into()));
    };
    let c = &scenario.cluster;
    let w = c.workers;
    let profile = &scenario.profile;
    let mut units = Vec::new();
    let mut of_param = vec![Vec::new(); profile.len()];
    for (param, spec) in profile.params().iter().enumerate() {
        let chunks = if opts.messaging { w } else { 1 };
        for chunk in 0..chunks {
            of_param[param].push(units.len());
            units.push(Unit {
                param,
                chunk,
                bits: spec.size / chunks as f64,
                owner: (param + chunk) % w,
                hops: 0,
                in_flight: false,
                gathered: 0,
            });
        }
    }
    let mut engine = Engine::new(c.topology()?).with_switch_hop(c.switch_hop);
    let mut sim = RingSim {
        scenario,
        opts,
        w,
        mult: c.multipliers(1).remove(0),
        units,
        of_param,
        ready: vec![vec![false; profile.len()]; w],
        fwd_left: w,
        fwd_end: 0.0,
        spans: SpanTracker::default(),
    };
    for k in 0..w {
        let node = NodeId::worker(k);
        engine.log(node, "fwd_start", None, "iter=0".into());
        sim.spans.touch(node, Phase::Forward, 0, 0.0);
        engine.schedule(profile.c_f() * sim.mult[k], Tag::FwdDone { w: k });
    }
    engine.run(&mut sim);
    if let Some(u) = sim.units.iter().find(|u| u.gathered + 1 != w) {
        return Err(MechError::Engine(crate::engine::EngineError::Domain(format!(
            "parameter {} chunk {} never reached every worker",
            u.param, u.chunk
        ))));
    }
    let timeline = sim.spans.into_timeline();
    let t = last_end(&timeline);
    Ok(engine.into_result(t, timeline))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mechanisms::ClusterConfig;
    use crate::trace::{ModelProfile, ParamSpec};

    fn profile(sizes: &[f64], bp: f64) -> ModelProfile {
        let params = sizes
            .iter()
            .enumerate()
            .map(|(i, &size)| ParamSpec { name: format!("p{i}"), size, bp_compute: bp, fp_compute: 0.0 })
            .collect();
        ModelProfile::new("r", params).unwrap()
    }

    fn ring(profile: ModelProfile, w: usize, b: f64, opts: RingOptions) -> Scenario {
        Scenario { profile, cluster: ClusterConfig::new(w, b), mechanism: Mechanism::RingReduce(opts) }
    }

    #[test]
    fn two_workers_single_param_is_two_hops() {
        let r = simulate_ring(&ring(profile(&[6.0], 0.0), 2, 3.0, RingOptions::default())).unwrap();
        assert_eq!(r.iteration_time, 4.0);
        r.check_invariants().unwrap();
    }

    #[test]
    fn unsplit_parameter_costs_two_laps() {
        let r = simulate_ring(&ring(profile(&[10.0], 0.0), 5, 1.0, RingOptions::default())).unwrap();
        assert!((r.iteration_time - 80.0).abs() < 1e-9);
    }

    #[test]
    fn messaging_approaches_the_bandwidth_bound() {
        let w = 8;
        let prof = profile(&[8.0; 8], 0.0);
        let plain = simulate_ring(&ring(prof.clone(), w, 1.0, RingOptions::default())).unwrap();
        let split = simulate_ring(&ring(prof, w, 1.0, RingOptions { messaging: true, ..Default::default() })).unwrap();
        let bound = 2.0 * 64.0 * (w - 1) as f64 / (w as f64);
        assert!(split.iteration_time <= plain.iteration_time);
        assert!((split.iteration_time - bound).abs() < 1e-9 * bound, "{}", split.iteration_time);
        split.check_invariants().unwrap();
    }

    #[test]
    fn multicast_second_ring_shortcuts_the_gather() {
        let r = simulate_ring(&ring(profile(&[10.0], 0.0), 5, 1.0, RingOptions { multicast_second_ring: true, ..Default::default() })).unwrap();
        assert!((r.iteration_time - 50.0).abs() < 1e-9);
        r.check_invariants().unwrap();
    }

    #[test]
    fn reduce_waits_for_every_gradient() {
        let r = simulate_ring(&ring(profile(&[1.0, 1.0], 2.0), 3, 1.0, RingOptions::default())).unwrap();
        r.check_causality().unwrap();
        let first_send = r.event_log.iter().find(|e| e.kind == "reduce_send").unwrap();
        assert!(first_send.t >= 2.0);
    }

    #[test]
    fn one_worker_is_rejected() {
        assert!(matches!(
            simulate_ring(&ring(profile(&[1.0], 0.0), 1, 1.0, RingOptions::default())),
            Err(MechError::Validation(_))
        ));
    }
}
