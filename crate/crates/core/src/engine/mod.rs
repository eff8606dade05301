//! Deterministic discrete-event core over a fluid network.
//!
//! An [`Engine`] owns the clock, the pending-event queue and the
//! [`FluidNetwork`]. Mechanism drivers implement [`Process`] and react to
//! [`Notice`]s: timers they scheduled, transfers finishing on the wire, and
//! transfers arriving at their destination one hop latency later.
//!
//! Transfers carry a caller-chosen tag that is handed back in every notice,
//! so drivers never need their own id bookkeeping.

mod fluid;
mod queue;
mod result;
mod topology;

use std::collections::{BTreeMap, BTreeSet, HashMap};

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use fluid::{ActiveFlow, FlowId, FluidNetwork};
pub use queue::EventQueue;
pub use result::{EventRecord, Phase, SimResult, Span};
pub(crate) use result::SpanTracker;
pub use topology::{Direction, Link, NodeId, ParseNodeIdError, Role, Topology};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EngineError {
    #[error("domain error: {0}")]
    Domain(String),
}

pub type TransferId = u64;

/// How the aggregation switch's hop into the destination is costed.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SwitchHop {
    /// The combined update reaches the destination as soon as the last
    /// branch arrives. Bits are still accounted on the destination's ingress.
    #[default]
    Free,
    /// Store-and-forward: a second transfer at the destination's ingress rate.
    Charged,
}

#[derive(Clone, Debug, PartialEq)]
pub enum Notice<T> {
    Timer(T),
    /// The sender finished putting the transfer on the wire.
    Transmitted { id: TransferId, tag: T },
    /// The transfer arrived at `dst` (one notice per multicast receiver).
    Delivered { id: TransferId, dst: NodeId, tag: T },
}

pub trait Process<T> {
    fn on_notice(&mut self, engine: &mut Engine<T>, notice: Notice<T>);
}

enum Pending<T> {
    Timer(T),
    Deliver(TransferId),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Kind {
    Unicast,
    Multicast,
    Branch { group: TransferId },
    SwitchHop { group: TransferId },
    Aggregation,
}

struct Transfer<T> {
    tag: T,
    kind: Kind,
    dsts: Vec<NodeId>,
}

struct Group {
    dst: NodeId,
    size: f64,
    expected: usize,
    joined: BTreeSet<NodeId>,
    arrived: usize,
}

pub struct Engine<T> {
    topo: Topology,
    now: f64,
    queue: EventQueue<Pending<T>>,
    net: FluidNetwork,
    transfers: HashMap<TransferId, Transfer<T>>,
    groups: HashMap<TransferId, Group>,
    next_id: TransferId,
    switch_hop: SwitchHop,
    link_bytes: BTreeMap<Link, f64>,
    log: Vec<EventRecord>,
}

impl<T: Clone> Engine<T> {
    pub fn new(topo: Topology) -> Self {
        Engine {
            net: FluidNetwork::new(&topo),
            topo,
            now: 0.0,
            queue: EventQueue::new(),
            transfers: HashMap::new(),
            groups: HashMap::new(),
            next_id: 0,
            switch_hop: SwitchHop::default(),
            link_bytes: BTreeMap::new(),
            log: Vec::new(),
        }
    }

    pub fn with_switch_hop(mut self, hop: SwitchHop) -> Self {
        self.switch_hop = hop;
        self
    }

    pub fn now(&self) -> f64 {
        self.now
    }

    pub fn topology(&self) -> &Topology {
        &self.topo
    }

    pub fn network_mut(&mut self) -> &mut FluidNetwork {
        &mut self.net
    }

    pub fn link_bytes(&self) -> &BTreeMap<Link, f64> {
        &self.link_bytes
    }

    pub fn event_log(&self) -> &[EventRecord] {
        &self.log
    }

    /// Current rate of a transfer still on the wire.
    pub fn rate(&mut self, id: TransferId) -> Option<f64> {
        self.net.rate(id)
    }

    pub fn log(&mut self, node: NodeId, kind: &str, param: Option<&str>, detail: String) {
        self.log.push(EventRecord {
            t: self.now,
            node,
            kind: kind.to_string(),
            param: param.map(str::to_string),
            detail,
        });
    }

    /// Fires `Notice::Timer(tag)` at absolute time `at` (clamped to now).
    pub fn schedule_at(&mut self, at: f64, tag: T) {
        self.queue.push(at.max(self.now), Pending::Timer(tag));
    }

    pub fn schedule(&mut self, delay: f64, tag: T) {
        assert!(delay >= 0.0, "negative timer delay {delay}");
        self.queue.push(self.now + delay, Pending::Timer(tag));
    }

    fn check_node(&self, node: NodeId) -> Result<(), EngineError> {
        if self.topo.contains(node) {
            Ok(())
        } else {
            Err(EngineError::Domain(format!("{node} is not in the topology")))
        }
    }

    fn check_size(size: f64) -> Result<(), EngineError> {
        if size > 0.0 && size.is_finite() {
            Ok(())
        } else {
            Err(EngineError::Domain(format!("transfer size must be positive, got {size}")))
        }
    }

    fn fresh_id(&mut self) -> TransferId {
        let id = self.next_id;
        self.next_id += 1;
        id
    }

    fn launch(&mut self, src: NodeId, dsts: Vec<NodeId>, size: f64, kind: Kind, tag: T) -> TransferId {
        let id = self.fresh_id();
        self.net.add(id, src, dsts.clone(), size);
        self.transfers.insert(id, Transfer { tag, kind, dsts });
        id
    }

    pub fn start_unicast(&mut self, src: NodeId, dst: NodeId, size: f64, tag: T) -> Result<TransferId, EngineError> {
        Self::check_size(size)?;
        self.check_node(src)?;
        self.check_node(dst)?;
        if src == dst {
            return Err(EngineError::Domain(format!("unicast from {src} to itself")));
        }
        Ok(self.launch(src, vec![dst], size, Kind::Unicast, tag))
    }

    /// One flow whose rate is shared by every receiver: the source link
    /// carries `size` bits once, each receiver's ingress carries `size` bits.
    pub fn start_multicast(&mut self, src: NodeId, dsts: &[NodeId], size: f64, tag: T) -> Result<TransferId, EngineError> {
        Self::check_size(size)?;
        self.check_node(src)?;
        if dsts.is_empty() {
            return Err(EngineError::Domain("multicast needs at least one receiver".into()));
        }
        let mut uniq = BTreeSet::new();
        for &d in dsts {
            self.check_node(d)?;
            if d == src || !uniq.insert(d) {
                return Err(EngineError::Domain(format!("bad multicast receiver {d}")));
            }
        }
        Ok(self.launch(src, dsts.to_vec(), size, Kind::Multicast, tag))
    }

    /// Opens an in-network aggregation towards `dst` that completes once
    /// `expected` distinct sources have joined and their branches arrived.
    pub fn open_aggregation(&mut self, dst: NodeId, size: f64, expected: usize, tag: T) -> Result<TransferId, EngineError> {
        Self::check_size(size)?;
        self.check_node(dst)?;
        if expected == 0 {
            return Err(EngineError::Domain("aggregation needs at least one source".into()));
        }
        let id = self.fresh_id();
        self.groups.insert(id, Group { dst, size, expected, joined: BTreeSet::new(), arrived: 0 });
        self.transfers.insert(id, Transfer { tag, kind: Kind::Aggregation, dsts: vec![dst] });
        Ok(id)
    }

    /// Starts `src`'s branch of an open aggregation towards the switch.
    pub fn join_aggregation(&mut self, group: TransferId, src: NodeId, tag: T) -> Result<TransferId, EngineError> {
        self.check_node(src)?;
        let g = self
            .groups
            .get_mut(&group)
            .ok_or_else(|| EngineError::Domain(format!("no open aggregation {group}")))?;
        if src == g.dst || g.joined.len() == g.expected || !g.joined.insert(src) {
            return Err(EngineError::Domain(format!("{src} cannot join aggregation {group}")));
        }
        let size = g.size;
        Ok(self.launch(src, vec![NodeId::switch()], size, Kind::Branch { group }, tag))
    }

    pub fn start_aggregation(&mut self, srcs: &[NodeId], dst: NodeId, size: f64, tag: T) -> Result<TransferId, EngineError> {
        if srcs.is_empty() {
            return Err(EngineError::Domain("aggregation needs at least one source".into()));
        }
        let group = self.open_aggregation(dst, size, srcs.len(), tag.clone())?;
        for &s in srcs {
            self.join_aggregation(group, s, tag.clone())?;
        }
        Ok(group)
    }

    fn account(&mut self, src: NodeId, dsts: &[NodeId], size: f64) {
        *self.link_bytes.entry(Link::up(src)).or_insert(0.0) += size;
        for &d in dsts {
            *self.link_bytes.entry(Link::down(d)).or_insert(0.0) += size;
        }
    }

    fn on_transmitted(&mut self, id: TransferId, flow: ActiveFlow, out: &mut Vec<Notice<T>>) {
        self.account(flow.src, &flow.dsts, flow.size);
        let t = &self.transfers[&id];
        let arrive = self.now + self.topo.latency;
        match t.kind {
            Kind::Unicast | Kind::Multicast | Kind::Branch { .. } => {
                out.push(Notice::Transmitted { id, tag: t.tag.clone() });
                self.queue.push(arrive, Pending::Deliver(id));
            }
            Kind::SwitchHop { group } => {
                self.transfers.remove(&id);
                self.queue.push(arrive, Pending::Deliver(group));
            }
            Kind::Aggregation => unreachable!("aggregation groups are not flows"),
        }
    }

    fn on_delivered(&mut self, id: TransferId, out: &mut Vec<Notice<T>>) {
        let t = self.transfers.remove(&id).expect("delivered transfer is known");
        match t.kind {
            Kind::Unicast | Kind::Multicast | Kind::Aggregation => {
                if t.kind == Kind::Aggregation {
                    self.groups.remove(&id);
                }
                for dst in t.dsts {
                    out.push(Notice::Delivered { id, dst, tag: t.tag.clone() });
                }
            }
            Kind::Branch { group } => {
                let g = self.groups.get_mut(&group).expect("branch of a live group");
                g.arrived += 1;
                if g.arrived < g.expected {
                    return;
                }
                let (dst, size) = (g.dst, g.size);
                match self.switch_hop {
                    SwitchHop::Free => {
                        self.account(NodeId::switch(), &[dst], size);
                        self.on_delivered(group, out);
                    }
                    SwitchHop::Charged => {
                        let tag = self.transfers[&group].tag.clone();
                        self.launch(NodeId::switch(), vec![dst], size, Kind::SwitchHop { group }, tag);
                    }
                }
            }
            Kind::SwitchHop { .. } => unreachable!("switch hops deliver their group"),
        }
    }

    /// Runs until no events are pending and the network is idle.
    pub fn run<P: Process<T>>(&mut self, process: &mut P) {
        let mut notices = Vec::new();
        loop {
            let net_next = self.net.next_completion();
            let queue_next = self.queue.peek_time();
            let network_first = match (net_next, queue_next) {
                (None, None) => break,
                (Some(_), None) => true,
                (None, Some(_)) => false,
                (Some(a), Some(b)) => a <= b,
            };
            if network_first {
                let t = net_next.expect("checked");
                self.now = t.max(self.now);
                for (id, flow) in self.net.complete_at(self.now) {
                    self.on_transmitted(id, flow, &mut notices);
                }
            } else {
                let (t, ev) = self.queue.pop().expect("checked");
                self.net.advance_to(t);
                self.now = t;
                match ev {
                    Pending::Timer(tag) => notices.push(Notice::Timer(tag)),
                    Pending::Deliver(id) => self.on_delivered(id, &mut notices),
                }
            }
            for n in notices.drain(..) {
                process.on_notice(self, n);
            }
        }
    }

    pub fn into_result(self, iteration_time: f64, timeline: BTreeMap<NodeId, Vec<Span>>) -> SimResult {
        SimResult { iteration_time, timeline, link_bytes: self.link_bytes, event_log: self.log }
    }
}

/// Releases once every member has signalled.
#[derive(Clone, Debug)]
pub struct Barrier {
    members: BTreeSet<NodeId>,
    signalled: BTreeMap<NodeId, f64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BarrierKind {
    /// One worker: forward pass complete before backprop.
    Local,
    /// Across all workers.
    Global,
}

impl Barrier {
    pub fn new(members: impl IntoIterator<Item = NodeId>) -> Self {
        Barrier { members: members.into_iter().collect(), signalled: BTreeMap::new() }
    }

    pub fn local(worker: NodeId) -> Self {
        Self::new([worker])
    }

    pub fn kind(&self) -> BarrierKind {
        if self.members.len() == 1 {
            BarrierKind::Local
        } else {
            BarrierKind::Global
        }
    }

    /// Records a signal; returns the release time once all members arrived.
    pub fn signal(&mut self, node: NodeId, t: f64) -> Option<f64> {
        if self.members.contains(&node) {
            self.signalled.entry(node).or_insert(t);
        }
        self.released_at()
    }

    pub fn released_at(&self) -> Option<f64> {
        if self.signalled.len() == self.members.len() {
            Some(self.signalled.values().copied().fold(f64::NEG_INFINITY, f64::max))
        } else {
            None
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Records every notice with its time.
    #[derive(Default)]
    struct Recorder {
        seen: Vec<(f64, Notice<u32>)>,
    }

    impl Process<u32> for Recorder {
        fn on_notice(&mut self, engine: &mut Engine<u32>, notice: Notice<u32>) {
            self.seen.push((engine.now(), notice));
        }
    }

    fn delivered(rec: &Recorder) -> Vec<(f64, NodeId, u32)> {
        rec.seen
            .iter()
            .filter_map(|(t, n)| match n {
                Notice::Delivered { dst, tag, .. } => Some((*t, *dst, *tag)),
                _ => None,
            })
            .collect()
    }

    fn topo(w: usize, p: usize, b: f64, lat: f64) -> Topology {
        Topology::new(w, p, b, lat).unwrap()
    }

    #[test]
    fn unicast_completes_at_size_over_rate_plus_latency() {
        let mut e = Engine::new(topo(2, 0, 10.0, 0.25));
        e.start_unicast(NodeId::worker(0), NodeId::worker(1), 10.0, 7).unwrap();
        let mut rec = Recorder::default();
        e.run(&mut rec);
        assert_eq!(delivered(&rec), vec![(1.25, NodeId::worker(1), 7)]);
        assert_eq!(e.link_bytes()[&Link::up(NodeId::worker(0))], 10.0);
    }

    #[test]
    fn two_flows_into_one_receiver_finish_together() {
        let mut e = Engine::new(topo(3, 0, 4.0, 0.0));
        e.start_unicast(NodeId::worker(0), NodeId::worker(2), 4.0, 0).unwrap();
        e.start_unicast(NodeId::worker(1), NodeId::worker(2), 4.0, 1).unwrap();
        let mut rec = Recorder::default();
        e.run(&mut rec);
        let d = delivered(&rec);
        assert_eq!(d.len(), 2);
        for (t, _, _) in d {
            assert!((t - 2.0).abs() < 1e-12);
        }
    }

    #[test]
    fn zero_size_and_unknown_nodes_are_rejected() {
        let mut e: Engine<u32> = Engine::new(topo(2, 1, 1.0, 0.0));
        assert!(e.start_unicast(NodeId::worker(0), NodeId::ps(0), 0.0, 0).is_err());
        assert!(e.start_unicast(NodeId::worker(0), NodeId::ps(3), 1.0, 0).is_err());
        assert!(e.start_unicast(NodeId::worker(0), NodeId::worker(0), 1.0, 0).is_err());
        assert!(e.start_multicast(NodeId::ps(0), &[], 1.0, 0).is_err());
        assert!(e.start_aggregation(&[], NodeId::ps(0), 1.0, 0).is_err());
    }

    #[test]
    fn multicast_to_idle_receivers_counts_source_bits_once() {
        let mut e = Engine::new(topo(8, 1, 2.0, 0.0));
        let dsts: Vec<_> = (0..8).map(NodeId::worker).collect();
        e.start_multicast(NodeId::ps(0), &dsts, 2.0, 0).unwrap();
        let mut rec = Recorder::default();
        e.run(&mut rec);
        let d = delivered(&rec);
        assert_eq!(d.len(), 8);
        assert!(d.iter().all(|&(t, _, _)| t == 1.0));
        assert_eq!(e.link_bytes()[&Link::up(NodeId::ps(0))], 2.0);
        for w in 0..8 {
            assert_eq!(e.link_bytes()[&Link::down(NodeId::worker(w))], 2.0);
        }
    }

    #[test]
    fn congested_multicast_receiver_slows_every_branch() {
        let mut e = Engine::new(topo(3, 1, 1.0, 0.0));
        // worker0 also receives a long unicast, so it only gets half its ingress.
        e.start_unicast(NodeId::worker(2), NodeId::worker(0), 100.0, 9).unwrap();
        e.start_multicast(NodeId::ps(0), &[NodeId::worker(0), NodeId::worker(1)], 1.0, 1).unwrap();
        let mut rec = Recorder::default();
        e.run(&mut rec);
        let mc: Vec<_> = delivered(&rec).into_iter().filter(|d| d.2 == 1).collect();
        assert_eq!(mc.len(), 2);
        assert!(mc.iter().all(|&(t, _, _)| (t - 2.0).abs() < 1e-12));
    }

    #[test]
    fn aggregation_single_source_two_hops_when_charged() {
        let mut e = Engine::new(topo(1, 1, 1.0, 0.0)).with_switch_hop(SwitchHop::Charged);
        e.start_aggregation(&[NodeId::worker(0)], NodeId::ps(0), 3.0, 5).unwrap();
        let mut rec = Recorder::default();
        e.run(&mut rec);
        assert_eq!(delivered(&rec), vec![(6.0, NodeId::ps(0), 5)]);
        assert_eq!(e.link_bytes()[&Link::down(NodeId::ps(0))], 3.0);
    }

    #[test]
    fn aggregation_of_parallel_sources_is_one_copy_at_destination() {
        for (hop, expect) in [(SwitchHop::Charged, 2.0), (SwitchHop::Free, 1.0)] {
            let mut e = Engine::new(topo(4, 1, 1.0, 0.0)).with_switch_hop(hop);
            let srcs: Vec<_> = (0..4).map(NodeId::worker).collect();
            e.start_aggregation(&srcs, NodeId::ps(0), 1.0, 0).unwrap();
            let mut rec = Recorder::default();
            e.run(&mut rec);
            assert_eq!(delivered(&rec), vec![(expect, NodeId::ps(0), 0)]);
            assert_eq!(e.link_bytes()[&Link::down(NodeId::ps(0))], 1.0);
        }
    }

    /// Joins worker1 to the group once its timer fires.
    struct LateJoiner {
        group: Option<TransferId>,
        done: Option<f64>,
    }

    impl Process<u32> for LateJoiner {
        fn on_notice(&mut self, e: &mut Engine<u32>, n: Notice<u32>) {
            match n {
                Notice::Timer(_) => {
                    e.join_aggregation(self.group.unwrap(), NodeId::worker(1), 0).unwrap();
                }
                Notice::Delivered { dst, .. } if dst == NodeId::ps(0) => self.done = Some(e.now()),
                _ => {}
            }
        }
    }

    #[test]
    fn staggered_aggregation_waits_for_last_source() {
        let mut e = Engine::new(topo(2, 1, 1.0, 0.0)).with_switch_hop(SwitchHop::Charged);
        let g = e.open_aggregation(NodeId::ps(0), 1.0, 2, 0).unwrap();
        e.join_aggregation(g, NodeId::worker(0), 0).unwrap();
        e.schedule(5.0, 0);
        let mut p = LateJoiner { group: Some(g), done: None };
        e.run(&mut p);
        assert_eq!(p.done, Some(7.0));
    }

    #[test]
    fn barrier_releases_at_last_signal() {
        let mut all = Barrier::new((0..3).map(NodeId::worker));
        assert_eq!(all.kind(), BarrierKind::Global);
        assert_eq!(all.signal(NodeId::worker(0), 1.0), None);
        assert_eq!(all.signal(NodeId::worker(2), 5.0), None);
        assert_eq!(all.signal(NodeId::worker(1), 2.0), Some(5.0));

        let mut same = Barrier::new((0..2).map(NodeId::worker));
        same.signal(NodeId::worker(0), 3.0);
        assert_eq!(same.signal(NodeId::worker(1), 3.0), Some(3.0));

        let mut one = Barrier::local(NodeId::worker(0));
        assert_eq!(one.kind(), BarrierKind::Local);
        assert_eq!(one.signal(NodeId::worker(0), 4.0), Some(4.0));
    }
}
