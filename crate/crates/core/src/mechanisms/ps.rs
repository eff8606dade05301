//! Parameter-server training: distribution pipelined with the forward pass,
//! gradient aggregation pipelined with backprop.

use std::collections::VecDeque;

use crate::engine::{Engine, NodeId, Notice, Phase, Process, SimResult, SpanTracker, TransferId};

use super::assign::assign_params;
use super::{last_end, DistributionOrder, MechError, Mechanism, PsOptions, Scenario};

/// Unit of transfer: one message of one parameter's shard on one server.
#[derive(Clone, Debug)]
struct Piece {
    param: usize,
    ps: usize,
    bits: f64,
    chunk: usize,
}

#[derive(Clone, Copy, Debug, PartialEq)]
enum Tag {
    FwdDone { w: usize, iter: usize },
    GradReady { w: usize, iter: usize, param: usize },
    Dist { iter: usize, piece: usize },
    Grad { w: usize, iter: usize, piece: usize },
    Agg { iter: usize, piece: usize },
}

/// What a server puts on its egress next; all transfers of a batch start
/// together and the next batch waits for all of them to leave.
#[derive(Clone, Copy, Debug)]
enum Batch {
    To { iter: usize, piece: usize, w: usize },
    All { iter: usize, piece: usize },
    Multicast { iter: usize, piece: usize },
}

struct Worker {
    /// Pieces received, per iteration and parameter.
    recv: Vec<Vec<usize>>,
    fwd_iter: usize,
    fwd_next: usize,
    fwd_busy: bool,
    /// Iterations whose backprop has finished.
    bp_done: usize,
    egress: VecDeque<(usize, usize)>,
    sending: bool,
}

struct Server {
    queue: VecDeque<Batch>,
    in_flight: usize,
}

struct PsSim<'a> {
    scenario: &'a Scenario,
    opts: &'a PsOptions,
    iterations: usize,
    mult: Vec<Vec<f64>>,
    pieces: Vec<Piece>,
    /// Piece indices per parameter.
    of_param: Vec<Vec<usize>>,
    /// Piece indices per server in model order.
    of_server: Vec<Vec<usize>>,
    multicast: bool,
    in_net_agg: bool,
    workers: Vec<Worker>,
    servers: Vec<Server>,
    arrivals: Vec<Vec<usize>>,
    groups: Vec<Vec<TransferId>>,
    params_left: Vec<Vec<usize>>,
    iter_left: Vec<usize>,
    aggregated_at: Vec<Vec<f64>>,
    spans: SpanTracker,
}

impl<'a> PsSim<'a> {
    fn new(scenario: &'a Scenario, iterations: usize) -> Self {
        let Mechanism::Ps(opts) = &scenario.mechanism else { unreachable!("checked by caller") };
        let c = &scenario.cluster;
        let profile = &scenario.profile;
        let n = profile.len();
        let mut pieces = Vec::new();
        let mut of_param = vec![Vec::new(); n];
        for (param, frags) in assign_params(profile, c.parameter_servers, opts.assignment).into_iter().enumerate() {
            for f in frags {
                let msg = opts.message_bits.unwrap_or(f.bits).min(f.bits);
                let count = (f.bits / msg).ceil().max(1.0) as usize;
                for chunk in 0..count {
                    let bits = if chunk + 1 == count { f.bits - msg * (count - 1) as f64 } else { msg };
                    of_param[param].push(pieces.len());
                    pieces.push(Piece { param, ps: f.ps, bits, chunk });
                }
            }
        }
        let mut of_server = vec![Vec::new(); c.parameter_servers];
        for (i, p) in pieces.iter().enumerate() {
            of_server[p.ps].push(i);
        }
        let w = c.workers;
        let np = pieces.len();
        PsSim {
            scenario,
            opts,
            iterations,
            mult: c.multipliers(iterations),
            multicast: opts.multicast && w > 1,
            in_net_agg: opts.in_net_agg && w > 1,
            workers: (0..w)
                .map(|_| Worker {
                    recv: vec![vec![0; n]; iterations],
                    fwd_iter: 0,
                    fwd_next: 0,
                    fwd_busy: false,
                    bp_done: 0,
                    egress: VecDeque::new(),
                    sending: false,
                })
                .collect(),
            servers: (0..c.parameter_servers).map(|_| Server { queue: VecDeque::new(), in_flight: 0 }).collect(),
            arrivals: vec![vec![0; np]; iterations],
            groups: vec![Vec::new(); iterations],
            params_left: vec![of_param.iter().map(Vec::len).collect(); iterations],
            iter_left: vec![n; iterations],
            aggregated_at: vec![vec![f64::NAN; n]; iterations],
            pieces,
            of_param,
            of_server,
            spans: SpanTracker::default(),
        }
    }

    fn workers(&self) -> usize {
        self.scenario.cluster.workers
    }

    fn name(&self, param: usize) -> &'a str {
        &self.scenario.profile.params()[param].name
    }

    fn batches_for(&self, iter: usize, piece: usize) -> Vec<Batch> {
        if self.multicast {
            vec![Batch::Multicast { iter, piece }]
        } else if self.opts.distribution_order == DistributionOrder::Concurrent && self.workers() > 1 {
            vec![Batch::All { iter, piece }]
        } else {
            (0..self.workers()).map(|w| Batch::To { iter, piece, w }).collect()
        }
    }

    /// Queues a whole iteration's distribution on every server.
    fn enqueue_iteration(&mut self, e: &mut Engine<Tag>, iter: usize) {
        for ps in 0..self.servers.len() {
            let mine = self.of_server[ps].clone();
            let batches: Vec<Batch> =
                if self.opts.distribution_order == DistributionOrder::Block && !self.multicast {
                    (0..self.workers())
                        .flat_map(|w| mine.iter().map(move |&piece| Batch::To { iter, piece, w }))
                        .collect()
                } else {
                    mine.iter().flat_map(|&piece| self.batches_for(iter, piece)).collect()
                };
            self.servers[ps].queue.extend(batches);
            self.kick_server(e, ps);
        }
    }

    fn kick_server(&mut self, e: &mut Engine<Tag>, ps: usize) {
        let server = &mut self.servers[ps];
        if server.in_flight > 0 {
            return;
        }
        let Some(batch) = server.queue.pop_front() else { return };
        let src = NodeId::ps(ps);
        let (iter, piece, dsts): (usize, usize, Vec<usize>) = match batch {
            Batch::To { iter, piece, w } => (iter, piece, vec![w]),
            Batch::All { iter, piece } | Batch::Multicast { iter, piece } => (iter, piece, (0..self.workers()).collect()),
        };
        let p = &self.pieces[piece];
        let (bits, param, chunk) = (p.bits, p.param, p.chunk);
        let tag = Tag::Dist { iter, piece };
        let started = if let Batch::Multicast { .. } = batch {
            let to: Vec<NodeId> = dsts.iter().map(|&w| NodeId::worker(w)).collect();
            e.start_multicast(src, &to, bits, tag).map(|_| 1)
        } else {
            dsts.iter()
                .map(|&w| e.start_unicast(src, NodeId::worker(w), bits, tag))
                .collect::<Result<Vec<_>, _>>()
                .map(|v| v.len())
        };
        self.servers[ps].in_flight = started.expect("validated scenario");
        let detail = format!("iter={iter} chunk={chunk} dst={}", if dsts.len() == 1 { format!("worker{}", dsts[0]) } else { "all".into() });
        e.log(src, "dist_send", Some(self.name(param)), detail);
        self.spans.touch(src, Phase::Distribution, iter, e.now());
    }

    fn try_forward(&mut self, e: &mut Engine<Tag>, w: usize) {
        let n = self.scenario.profile.len();
        let wk = &self.workers[w];
        let iter = wk.fwd_iter;
        if wk.fwd_busy || iter >= self.iterations || wk.bp_done < iter {
            return;
        }
        let layer = wk.fwd_next;
        if wk.recv[iter][layer] < self.of_param[layer].len() {
            return;
        }
        let node = NodeId::worker(w);
        let fp = self.scenario.profile.params()[layer].fp_compute * self.mult[iter][w];
        self.workers[w].fwd_busy = true;
        e.log(node, "fwd_start", Some(self.name(layer)), format!("iter={iter}"));
        self.spans.touch(node, Phase::Forward, iter, e.now());
        e.schedule(fp, Tag::FwdDone { w, iter });
        debug_assert!(layer < n);
    }

    fn forward_done(&mut self, e: &mut Engine<Tag>, w: usize, iter: usize) {
        let n = self.scenario.profile.len();
        let node = NodeId::worker(w);
        let layer = self.workers[w].fwd_next;
        e.log(node, "fwd_end", Some(self.name(layer)), format!("iter={iter}"));
        self.spans.touch(node, Phase::Forward, iter, e.now());
        let wk = &mut self.workers[w];
        wk.fwd_busy = false;
        wk.fwd_next += 1;
        if wk.fwd_next < n {
            self.try_forward(e, w);
            return;
        }
        wk.fwd_next = 0;
        wk.fwd_iter += 1;
        // Local barrier passed: gradients become ready in reverse model order.
        e.log(node, "bp_start", None, format!("iter={iter}"));
        self.spans.touch(node, Phase::Backprop, iter, e.now());
        let m = self.mult[iter][w];
        let mut t = e.now();
        for (param, spec) in self.scenario.profile.params().iter().enumerate().rev() {
            t += spec.bp_compute * m;
            e.schedule_at(t, Tag::GradReady { w, iter, param });
        }
    }

    fn grad_ready(&mut self, e: &mut Engine<Tag>, w: usize, iter: usize, param: usize) {
        let node = NodeId::worker(w);
        e.log(node, "grad_ready", Some(self.name(param)), format!("iter={iter}"));
        self.spans.touch(node, Phase::Backprop, iter, e.now());
        let queued: Vec<(usize, usize)> = self.of_param[param].iter().map(|&p| (iter, p)).collect();
        self.workers[w].egress.extend(queued);
        self.kick_worker(e, w);
        if param == 0 {
            self.workers[w].bp_done = iter + 1;
            self.try_forward(e, w);
        }
    }

    fn kick_worker(&mut self, e: &mut Engine<Tag>, w: usize) {
        if self.workers[w].sending {
            return;
        }
        let Some((iter, piece)) = self.workers[w].egress.pop_front() else { return };
        let node = NodeId::worker(w);
        let p = &self.pieces[piece];
        let (ps, bits, param, chunk) = (p.ps, p.bits, p.param, p.chunk);
        let tag = Tag::Grad { w, iter, piece };
        let started = if self.in_net_agg {
            e.join_aggregation(self.groups[iter][piece], node, tag)
        } else {
            e.start_unicast(node, NodeId::ps(ps), bits, tag)
        };
        started.expect("validated scenario");
        self.workers[w].sending = true;
        e.log(node, "grad_send", Some(self.name(param)), format!("iter={iter} chunk={chunk} dst=ps{ps}"));
        self.spans.touch(node, Phase::Aggregation, iter, e.now());
    }

    fn piece_aggregated(&mut self, e: &mut Engine<Tag>, iter: usize, piece: usize) {
        let Piece { param, ps, .. } = self.pieces[piece];
        self.params_left[iter][param] -= 1;
        if self.params_left[iter][param] == 0 {
            self.aggregated_at[iter][param] = e.now();
            e.log(NodeId::ps(ps), "param_aggregated", Some(self.name(param)), format!("iter={iter}"));
            self.iter_left[iter] -= 1;
            if self.iter_left[iter] == 0 {
                e.log(NodeId::ps(ps), "iteration_end", None, format!("iter={iter}"));
            }
        }
        let next = iter + 1;
        if next >= self.iterations {
            return;
        }
        if self.opts.global_barrier {
            if self.iter_left[iter] == 0 {
                self.enqueue_iteration(e, next);
            }
        } else {
            // Forwarded as soon as every worker's update for it is in.
            let batches = self.batches_for(next, piece);
            self.servers[ps].queue.extend(batches);
            self.kick_server(e, ps);
        }
    }
}

impl Process<Tag> for PsSim<'_> {
    fn on_notice(&mut self, e: &mut Engine<Tag>, notice: Notice<Tag>) {
        match notice {
            Notice::Timer(Tag::FwdDone { w, iter }) => self.forward_done(e, w, iter),
            Notice::Timer(Tag::GradReady { w, iter, param }) => self.grad_ready(e, w, iter, param),
            Notice::Transmitted { tag: Tag::Dist { iter, piece }, .. } => {
                let ps = self.pieces[piece].ps;
                self.spans.touch(NodeId::ps(ps), Phase::Distribution, iter, e.now());
                self.servers[ps].in_flight -= 1;
                self.kick_server(e, ps);
            }
            Notice::Delivered { dst, tag: Tag::Dist { iter, piece }, .. } => {
                let w = dst.index;
                let Piece { param, chunk, .. } = self.pieces[piece];
                e.log(dst, "dist_recv", Some(self.name(param)), format!("iter={iter} chunk={chunk}"));
                self.spans.touch(dst, Phase::Distribution, iter, e.now());
                self.workers[w].recv[iter][param] += 1;
                self.try_forward(e, w);
            }
            Notice::Transmitted { tag: Tag::Grad { w, iter, .. }, .. } => {
                self.spans.touch(NodeId::worker(w), Phase::Aggregation, iter, e.now());
                self.workers[w].sending = false;
                self.kick_worker(e, w);
            }
            Notice::Delivered { dst, tag: Tag::Grad { iter, piece, w }, .. } => {
                let Piece { param, chunk, .. } = self.pieces[piece];
                e.log(dst, "grad_recv", Some(self.name(param)), format!("iter={iter} chunk={chunk} src=worker{w}"));
                self.spans.touch(dst, Phase::Aggregation, iter, e.now());
                self.arrivals[iter][piece] += 1;
                if self.arrivals[iter][piece] == self.workers() {
                    self.piece_aggregated(e, iter, piece);
                }
            }
            Notice::Delivered { dst, tag: Tag::Agg { iter, piece }, .. } => {
                let Piece { param, chunk, .. } = self.pieces[piece];
                e.log(dst, "grad_recv", Some(self.name(param)), format!("iter={iter} chunk={chunk} src=switch0"));
                self.spans.touch(dst, Phase::Aggregation, iter, e.now());
                self.piece_aggregated(e, iter, piece);
            }
            other => unreachable!("unexpected notice {other:?}"),
        }
    }
}

/// Output of a multi-iteration parameter-server run.
#[derive(Clone, Debug)]
pub struct PsRun {
    pub result: SimResult,
    /// Time each parameter was fully aggregated, `[iteration][param]`.
    pub aggregated_at: Vec<Vec<f64>>,
}

/// Runs `iterations` back-to-back iterations.
pub fn run_ps(scenario: &Scenario, iterations: usize) -> Result<PsRun, MechError> {
    scenario.validate()?;
    if !matches!(scenario.mechanism, Mechanism::Ps(_)) {
        return Err(MechError::Unsupported("expected a parameter-server mechanism".into()));
    }
    if iterations < 1 {
        return Err(MechError::Validation(vec!["need at least one iteration".into()]));
    }
    let c = &scenario.cluster;
    let mut engine = Engine::new(c.topology()?).with_switch_hop(c.switch_hop);
    let mut sim = PsSim::new(scenario, iterations);
    if sim.in_net_agg {
        let targets: Vec<(usize, f64)> = sim.pieces.iter().map(|p| (p.ps, p.bits)).collect();
        for iter in 0..iterations {
            for (piece, &(ps, bits)) in targets.iter().enumerate() {
                let g = engine.open_aggregation(NodeId::ps(ps), bits, c.workers, Tag::Agg { iter, piece })?;
                sim.groups[iter].push(g);
            }
        }
    }
    sim.enqueue_iteration(&mut engine, 0);
    engine.run(&mut sim);
    if let Some(iter) = sim.iter_left.iter().position(|&l| l > 0) {
        return Err(MechError::Engine(crate::engine::EngineError::Domain(format!(
            "iteration {iter} never completed"
        ))));
    }
    let aggregated_at = sim.aggregated_at;
    let timeline = sim.spans.into_timeline();
    let t = last_end(&timeline);
    Ok(PsRun { result: engine.into_result(t, timeline), aggregated_at })
}

pub fn simulate_ps(scenario: &Scenario) -> Result<SimResult, MechError> {
    Ok(run_ps(scenario, 1)?.result)
}

/// Per-iteration time between the first parameter's aggregation in
/// iterations 1 and 3, halved.
pub fn measure_steady_state(scenario: &Scenario, iterations: usize) -> Result<f64, MechError> {
    if !matches!(scenario.mechanism, Mechanism::Ps(_)) {
        return Err(MechError::Unsupported("steady-state measurement needs a parameter-server mechanism".into()));
    }
    if iterations < 3 {
        return Err(MechError::Validation(vec![format!("need at least 3 iterations, got {iterations}")]));
    }
    let run = run_ps(scenario, iterations)?;
    Ok((run.aggregated_at[2][0] - run.aggregated_at[0][0]) / 2.0)
}
