use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use super::EngineError;

/// What a node does in the cluster.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Role {
    Worker,
    Ps,
    Switch,
}

impl Role {
    fn prefix(self) -> &'static str {
        match self {
            Role::Worker => "worker",
            Role::Ps => "ps",
            Role::Switch => "switch",
        }
    }
}

/// A node in the simulated cluster, rendered as `worker3`, `ps0` or `switch0`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct NodeId {
    pub role: Role,
    pub index: usize,
}

impl NodeId {
    pub const fn worker(index: usize) -> Self {
        NodeId { role: Role::Worker, index }
    }

    pub const fn ps(index: usize) -> Self {
        NodeId { role: Role::Ps, index }
    }

    /// The single logical aggregation switch.
    pub const fn switch() -> Self {
        NodeId { role: Role::Switch, index: 0 }
    }
}

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}{}", self.role.prefix(), self.index)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParseNodeIdError(pub String);

impl fmt::Display for ParseNodeIdError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "invalid node id {:?}", self.0)
    }
}

impl std::error::Error for ParseNodeIdError {}

impl FromStr for NodeId {
    type Err = ParseNodeIdError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        for role in [Role::Worker, Role::Ps, Role::Switch] {
            if let Some(rest) = s.strip_prefix(role.prefix()) {
                if !rest.is_empty() && rest.bytes().all(|b| b.is_ascii_digit()) {
                    let index = rest.parse().map_err(|_| ParseNodeIdError(s.to_string()))?;
                    return Ok(NodeId { role, index });
                }
            }
        }
        Err(ParseNodeIdError(s.to_string()))
    }
}

impl Serialize for NodeId {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for NodeId {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Direction of an endpoint link: `Up` is the node's egress into the fabric,
/// `Down` is the fabric's delivery into the node.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Direction {
    Up,
    Down,
}

/// A directed endpoint link.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Link {
    pub node: NodeId,
    pub dir: Direction,
}

impl Link {
    pub const fn up(node: NodeId) -> Self {
        Link { node, dir: Direction::Up }
    }

    pub const fn down(node: NodeId) -> Self {
        Link { node, dir: Direction::Down }
    }
}

impl fmt::Display for Link {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let dir = match self.dir {
            Direction::Up => "up",
            Direction::Down => "down",
        };
        write!(f, "{}:{}", self.node, dir)
    }
}

impl Serialize for Link {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

/// Homogeneous cluster on a full-bisection (non-blocking) fabric.
///
/// Every worker and parameter server has one endpoint link of `link_rate`
/// bits/s in each direction. The core never constrains traffic. The logical
/// aggregation switch has no endpoint limit of its own; its hop into a
/// parameter server is charged against that server's ingress.
#[derive(Clone, Debug, PartialEq)]
pub struct Topology {
    pub workers: usize,
    pub parameter_servers: usize,
    pub link_rate: f64,
    pub latency: f64,
}

impl Topology {
    pub fn new(
        workers: usize,
        parameter_servers: usize,
        link_rate: f64,
        latency: f64,
    ) -> Result<Self, EngineError> {
        if workers < 1 {
            return Err(EngineError::Domain("topology needs at least one worker".into()));
        }
        if !(link_rate > 0.0 && link_rate.is_finite()) {
            return Err(EngineError::Domain(format!("link rate must be positive, got {link_rate}")));
        }
        if !(latency >= 0.0 && latency.is_finite()) {
            return Err(EngineError::Domain(format!("latency must be >= 0, got {latency}")));
        }
        Ok(Topology { workers, parameter_servers, link_rate, latency })
    }

    pub fn contains(&self, node: NodeId) -> bool {
        match node.role {
            Role::Worker => node.index < self.workers,
            Role::Ps => node.index < self.parameter_servers,
            Role::Switch => node.index == 0,
        }
    }

    /// Dense index: workers, then parameter servers, then the switch.
    pub(crate) fn dense(&self, node: NodeId) -> usize {
        match node.role {
            Role::Worker => node.index,
            Role::Ps => self.workers + node.index,
            Role::Switch => self.workers + self.parameter_servers,
        }
    }

    pub(crate) fn node_count(&self) -> usize {
        self.workers + self.parameter_servers + 1
    }

    pub fn worker_ids(&self) -> impl Iterator<Item = NodeId> {
        (0..self.workers).map(NodeId::worker)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn node_ids_round_trip_through_strings() {
        for id in [NodeId::worker(0), NodeId::worker(31), NodeId::ps(7), NodeId::switch()] {
            assert_eq!(id.to_string().parse::<NodeId>().unwrap(), id);
        }
        assert!("worker".parse::<NodeId>().is_err());
        assert!("gpu0".parse::<NodeId>().is_err());
        assert!("ps-1".parse::<NodeId>().is_err());
    }

    #[test]
    fn topology_rejects_bad_values() {
        assert!(Topology::new(0, 1, 1.0, 0.0).is_err());
        assert!(Topology::new(1, 0, 0.0, 0.0).is_err());
        assert!(Topology::new(1, 0, 1.0, -1.0).is_err());
        assert!(Topology::new(1, 0, 1.0, 0.0).is_ok());
    }
}
