//! Butterfly mixing: log2(W) rounds of pairwise full-parameter exchange,
//! pipelined per parameter.

use crate::engine::{Engine, NodeId, Notice, Phase, Process, SimResult, SpanTracker};

use super::{last_end, MechError, Mechanism, Scenario};

#[derive(Clone, Copy, Debug, PartialEq)]
enum Tag {
    FwdDone { w: usize },
    GradReady { w: usize, param: usize },
    Exchange { param: usize, round: usize },
}

#[derive(Clone, Copy, Default)]
struct State {
    ready: bool,
    /// Rounds this worker has sent.
    sent: usize,
    /// Bit `r` set once the round-`r` message arrived.
    received: u64,
}

struct ButterflySim<'a> {
    scenario: &'a Scenario,
    rounds: usize,
    mult: Vec<f64>,
    state: Vec<Vec<State>>,
    done: usize,
    spans: SpanTracker,
}

impl ButterflySim<'_> {
    /// Sends every round whose inputs are in: own gradient ready and, past
    /// round 0, the previous round's message received. A slow worker can
    /// find several rounds unblocked at once.
    fn try_send(&mut self, e: &mut Engine<Tag>, w: usize, param: usize) {
        loop {
            let s = self.state[w][param];
            let round = s.sent;
            if !s.ready || round >= self.rounds || (round > 0 && s.received & (1 << (round - 1)) == 0) {
                return;
            }
            let from = NodeId::worker(w);
            let to = NodeId::worker(w ^ (1 << round));
            let spec = &self.scenario.profile.params()[param];
            e.start_unicast(from, to, spec.size, Tag::Exchange { param, round }).expect("validated scenario");
            e.log(from, "grad_send", Some(&spec.name), format!("iter=0 round={round} dst={to}"));
            self.spans.touch(from, Phase::Aggregation, 0, e.now());
            self.state[w][param].sent += 1;
        }
    }
}

impl Process<Tag> for ButterflySim<'_> {
    fn on_notice(&mut self, e: &mut Engine<Tag>, notice: Notice<Tag>) {
        match notice {
            Notice::Timer(Tag::FwdDone { w }) => {
                let node = NodeId::worker(w);
                e.log(node, "fwd_end", None, "iter=0".into());
                self.spans.touch(node, Phase::Forward, 0, e.now());
                e.log(node, "bp_start", None, "iter=0".into());
                self.spans.touch(node, Phase::Backprop, 0, e.now());
                let mut t = e.now();
                for (param, spec) in self.scenario.profile.params().iter().enumerate().rev() {
                    t += spec.bp_compute * self.mult[w];
                    e.schedule_at(t, Tag::GradReady { w, param });
                }
            }
            Notice::Timer(Tag::GradReady { w, param }) => {
                let node = NodeId::worker(w);
                e.log(node, "grad_ready", Some(&self.scenario.profile.params()[param].name), "iter=0".into());
                self.spans.touch(node, Phase::Backprop, 0, e.now());
                self.state[w][param].ready = true;
                if self.rounds == 0 {
                    self.done += 1;
                }
                self.try_send(e, w, param);
            }
            Notice::Transmitted { .. } => {}
            Notice::Delivered { dst, tag: Tag::Exchange { param, round }, .. } => {
                let w = dst.index;
                e.log(dst, "grad_recv", Some(&self.scenario.profile.params()[param].name), format!("iter=0 round={round}"));
                self.spans.touch(dst, Phase::Aggregation, 0, e.now());
                self.state[w][param].received |= 1 << round;
                if self.state[w][param].received.count_ones() as usize == self.rounds {
                    self.done += 1;
                }
                self.try_send(e, w, param);
            }
            other => unreachable!("unexpected notice {other:?}"),
        }
    }
}

pub fn simulate_butterfly(scenario: &Scenario) -> Result<SimResult, MechError> {
    scenario.validate()?;
    if scenario.mechanism != Mechanism::Butterfly {
        return Err(MechError::Unsupported("expected butterfly".into()));
    }
    let c = &scenario.cluster;
    let w = c.workers;
    let n = scenario.profile.len();
    let mut engine = Engine::new(c.topology()?).with_switch_hop(c.switch_hop);
    let mut sim = ButterflySim {
        scenario,
        rounds: w.trailing_zeros() as usize,
        mult: c.multipliers(1).remove(0),
        state: vec![vec![State::default(); n]; w],
        done: 0,
        spans: SpanTracker::default(),
    };
    for k in 0..w {
        let node = NodeId::worker(k);
        engine.log(node, "fwd_start", None, "iter=0".into());
        sim.spans.touch(node, Phase::Forward, 0, 0.0);
        engine.schedule(scenario.profile.c_f() * sim.mult[k], Tag::FwdDone { w: k });
    }
    engine.run(&mut sim);
    if sim.done != w * n {
        return Err(MechError::Engine(crate::engine::EngineError::Domain(
            "butterfly exchange did not complete".into(),
        )));
    }
    let timeline = sim.spans.into_timeline();
    let t = last_end(&timeline);
    Ok(engine.into_result(t, timeline))
}
