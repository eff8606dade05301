//! Fluid bandwidth model over endpoint links.
//!
//! Every flow consumes its source's egress and each destination's ingress at
//! a single rate. Rates are max-min fair, computed by progressive filling.
//! Flows that touch exactly the same set of links always receive the same
//! rate, so filling runs over those equivalence classes rather than over
//! individual flows.

use std::collections::{BTreeMap, HashMap};

use super::topology::{Direction, NodeId, Role, Topology};

pub type FlowId = u64;

/// Relative slack used when deciding that a link is saturated.
const SATURATION_EPS: f64 = 1e-12;

#[derive(Clone, Debug)]
pub struct ActiveFlow {
    pub src: NodeId,
    pub dsts: Vec<NodeId>,
    pub size: f64,
    pub remaining: f64,
    pub rate: f64,
    pub start: f64,
    class: usize,
}

#[derive(Clone, Debug)]
struct Class {
    resources: Vec<usize>,
    members: usize,
    rate: f64,
}

#[derive(Clone, Debug)]
pub struct FluidNetwork {
    topo: Topology,
    now: f64,
    caps: Vec<f64>,
    classes: Vec<Class>,
    class_of: HashMap<Vec<usize>, usize>,
    flows: BTreeMap<FlowId, ActiveFlow>,
    dirty: bool,
    rate_fault: f64,
}

impl FluidNetwork {
    pub fn new(topo: &Topology) -> Self {
        let mut caps = vec![topo.link_rate; topo.node_count() * 2];
        let sw = topo.dense(NodeId::switch());
        caps[sw * 2] = f64::INFINITY;
        caps[sw * 2 + 1] = f64::INFINITY;
        FluidNetwork {
            topo: topo.clone(),
            now: 0.0,
            caps,
            classes: Vec::new(),
            class_of: HashMap::new(),
            flows: BTreeMap::new(),
            dirty: false,
            rate_fault: 1.0,
        }
    }

    fn resource(&self, node: NodeId, dir: Direction) -> usize {
        self.topo.dense(node) * 2 + usize::from(dir == Direction::Down)
    }

    /// Scales every computed rate by `factor`. Only used to check that the
    /// self-check battery notices a broken rate computation.
    #[doc(hidden)]
    pub fn inject_rate_fault(&mut self, factor: f64) {
        self.rate_fault = factor;
        self.dirty = true;
    }

    pub fn now(&self) -> f64 {
        self.now
    }

    pub fn is_idle(&self) -> bool {
        self.flows.is_empty()
    }

    pub fn len(&self) -> usize {
        self.flows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.flows.is_empty()
    }

    pub fn flow(&self, id: FlowId) -> Option<&ActiveFlow> {
        self.flows.get(&id)
    }

    pub fn flows(&self) -> impl Iterator<Item = (FlowId, &ActiveFlow)> {
        self.flows.iter().map(|(&id, f)| (id, f))
    }

    /// Current rate of a flow, recomputing shares first if the flow set changed.
    pub fn rate(&mut self, id: FlowId) -> Option<f64> {
        self.refresh();
        self.flows.get(&id).map(|f| f.rate)
    }

    /// Adds a flow at the current time. Switch endpoints are unconstrained.
    pub fn add(&mut self, id: FlowId, src: NodeId, dsts: Vec<NodeId>, size: f64) {
        let mut resources = Vec::with_capacity(dsts.len() + 1);
        if src.role != Role::Switch {
            resources.push(self.resource(src, Direction::Up));
        }
        for &d in &dsts {
            if d.role != Role::Switch {
                resources.push(self.resource(d, Direction::Down));
            }
        }
        assert!(!resources.is_empty(), "flow {id} touches no constrained link");
        resources.sort_unstable();
        resources.dedup();
        let class = match self.class_of.get(&resources) {
            Some(&c) => c,
            None => {
                let c = self.classes.len();
                self.classes.push(Class { resources: resources.clone(), members: 0, rate: 0.0 });
                self.class_of.insert(resources, c);
                c
            }
        };
        self.classes[class].members += 1;
        let prev = self.flows.insert(
            id,
            ActiveFlow { src, dsts, size, remaining: size, rate: 0.0, start: self.now, class },
        );
        assert!(prev.is_none(), "flow id {id} reused");
        self.dirty = true;
    }

    fn refresh(&mut self) {
        if !self.dirty {
            return;
        }
        self.dirty = false;
        self.fill();
        for f in self.flows.values_mut() {
            f.rate = self.classes[f.class].rate;
        }
    }

    /// Progressive filling: raise the rate of every unfrozen class together
    /// until some link saturates, then freeze the classes crossing it.
    fn fill(&mut self) {
        let mut spare = self.caps.clone();
        let mut weight = vec![0usize; self.caps.len()];
        let mut unfrozen: Vec<usize> = Vec::new();
        for (i, c) in self.classes.iter_mut().enumerate() {
            c.rate = 0.0;
            if c.members > 0 {
                unfrozen.push(i);
                for &r in &c.resources {
                    weight[r] += c.members;
                }
            }
        }
        let mut level = 0.0;
        while !unfrozen.is_empty() {
            let mut step = f64::INFINITY;
            for (r, &w) in weight.iter().enumerate() {
                if w > 0 {
                    step = step.min(spare[r] / w as f64);
                }
            }
            assert!(step.is_finite(), "unconstrained class left unfrozen");
            level += step;
            let mut saturated = vec![false; self.caps.len()];
            for (r, &w) in weight.iter().enumerate() {
                if w > 0 {
                    spare[r] -= step * w as f64;
                    if spare[r] <= SATURATION_EPS * self.caps[r] {
                        saturated[r] = true;
                    }
                }
            }
            let mut still = Vec::with_capacity(unfrozen.len());
            for &ci in &unfrozen {
                let c = &mut self.classes[ci];
                if c.resources.iter().any(|&r| saturated[r]) {
                    c.rate = level * self.rate_fault;
                    for &r in &c.resources {
                        weight[r] -= c.members;
                    }
                } else {
                    still.push(ci);
                }
            }
            unfrozen = still;
        }
    }

    /// Earliest time at which some active flow finishes transmitting.
    pub fn next_completion(&mut self) -> Option<f64> {
        self.refresh();
        self.flows
            .values()
            .filter(|f| f.rate > 0.0)
            .map(|f| self.now + f.remaining / f.rate)
            .min_by(f64::total_cmp)
    }

    /// Moves the clock forward draining `rate * dt` bits from every flow.
    pub fn advance_to(&mut self, t: f64) {
        assert!(t >= self.now, "network clock moved backwards");
        self.refresh();
        let dt = t - self.now;
        if dt > 0.0 {
            for f in self.flows.values_mut() {
                f.remaining = (f.remaining - f.rate * dt).max(0.0);
            }
        }
        self.now = t;
    }

    /// Advances to `t` (which must be a value returned by
    /// [`next_completion`](Self::next_completion)) and removes every flow
    /// finishing there, in flow-id order.
    pub fn complete_at(&mut self, t: f64) -> Vec<(FlowId, ActiveFlow)> {
        self.refresh();
        let tol = 1e-12 * t.abs().max(1.0);
        let done: Vec<FlowId> = self
            .flows
            .iter()
            .filter(|(_, f)| f.rate > 0.0 && self.now + f.remaining / f.rate <= t + tol)
            .map(|(&id, _)| id)
            .collect();
        self.advance_to(t);
        let mut out = Vec::with_capacity(done.len());
        for id in done {
            let mut f = self.flows.remove(&id).expect("completed flow present");
            f.remaining = 0.0;
            self.classes[f.class].members -= 1;
            out.push((id, f));
        }
        if !out.is_empty() {
            self.dirty = true;
        }
        out
    }

    /// Checks the max-min bottleneck property: every active flow crosses a
    /// saturated link on which no other flow runs faster.
    pub fn check_work_conservation(&mut self) -> Result<(), String> {
        self.refresh();
        let mut load = vec![0.0; self.caps.len()];
        let mut fastest = vec![0.0f64; self.caps.len()];
        for c in self.classes.iter().filter(|c| c.members > 0) {
            for &r in &c.resources {
                load[r] += c.rate * c.members as f64;
                fastest[r] = fastest[r].max(c.rate);
            }
        }
        for (r, &l) in load.iter().enumerate() {
            if l > self.caps[r] * (1.0 + 1e-9) {
                return Err(format!("link {r} overloaded: {l} > {}", self.caps[r]));
            }
        }
        for (id, f) in &self.flows {
            let c = &self.classes[f.class];
            let bottlenecked = c.resources.iter().any(|&r| {
                (load[r] - self.caps[r]).abs() <= 1e-9 * self.caps[r]
                    && c.rate >= fastest[r] * (1.0 - 1e-9)
            });
            if !bottlenecked {
                return Err(format!("flow {id} at rate {} has no saturated bottleneck", c.rate));
            }
        }
        Ok(())
    }
}
