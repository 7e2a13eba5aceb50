//! Deterministic discrete-event network on a virtual millisecond clock.
//!
//! Every sending node is a FIFO server: a send leaves the node after the
//! node's service time, queued behind whatever it is already sending, then
//! spends the link latency in flight.

use std::cmp::Ordering;
use std::collections::{BTreeMap, BinaryHeap};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::RelayId;

pub type NodeId = RelayId;
pub type Millis = u64;

pub const DEFAULT_LATENCY_RANGE: (Millis, Millis) = (5, 50);
pub const DEFAULT_SERVICE_TIME: Millis = 2;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum NetError {
    #[error("unknown node {0}")]
    UnknownNode(NodeId),
    #[error("invalid topology: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum NodeStatus {
    Up,
    Down,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScheduledFailure {
    pub node: u32,
    pub at: Millis,
}

/// JSON form: `{"nodes": [...], "latency_seed": 7}` or with an explicit
/// `"matrix"`; optional `"latency_range"`, `"symmetric"`, `"failures"`.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct TopologySpec {
    pub nodes: Vec<u32>,
    #[serde(default)]
    pub latency_seed: Option<u64>,
    #[serde(default)]
    pub latency_range: Option<(Millis, Millis)>,
    #[serde(default)]
    pub matrix: Option<Vec<Vec<Millis>>>,
    #[serde(default = "yes")]
    pub symmetric: bool,
    #[serde(default)]
    pub failures: Vec<ScheduledFailure>,
}

fn yes() -> bool {
    true
}

#[derive(Debug, Clone)]
pub struct Topology {
    nodes: Vec<NodeId>,
    index: BTreeMap<NodeId, usize>,
    latency: Vec<Millis>,
    status: Vec<NodeStatus>,
    pub failures: Vec<ScheduledFailure>,
}

impl Topology {
    /// Uniform integer latencies in `range` (inclusive) per link, from `seed`.
    pub fn random(nodes: &[NodeId], range: (Millis, Millis), symmetric: bool, seed: u64) -> Result<Self, NetError> {
        let (lo, hi) = range;
        if lo == 0 || hi < lo {
            return Err(NetError::Invalid(format!("latency range {lo}..={hi}")));
        }
        let n = nodes.len();
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        let mut m = vec![0; n * n];
        for a in 0..n {
            for b in 0..n {
                if a == b || (symmetric && b < a) {
                    continue;
                }
                let l = rng.gen_range(lo..=hi);
                m[a * n + b] = l;
                if symmetric {
                    m[b * n + a] = l;
                }
            }
        }
        Self::from_matrix(nodes, m)
    }

    pub fn from_matrix(nodes: &[NodeId], latency: Vec<Millis>) -> Result<Self, NetError> {
        let n = nodes.len();
        if latency.len() != n * n {
            return Err(NetError::Invalid("matrix is not n x n".into()));
        }
        let mut index = BTreeMap::new();
        for (i, id) in nodes.iter().enumerate() {
            if index.insert(*id, i).is_some() {
                return Err(NetError::Invalid(format!("duplicate node {id}")));
            }
        }
        for a in 0..n {
            for b in 0..n {
                if a != b && latency[a * n + b] == 0 {
                    return Err(NetError::Invalid(format!("zero latency {} -> {}", nodes[a], nodes[b])));
                }
            }
        }
        Ok(Self { nodes: nodes.to_vec(), index, latency, status: vec![NodeStatus::Up; n], failures: Vec::new() })
    }

    pub fn from_spec(spec: &TopologySpec) -> Result<Self, NetError> {
        let nodes: Vec<NodeId> = spec.nodes.iter().map(|&n| RelayId(n)).collect();
        let mut topo = match (&spec.matrix, spec.latency_seed) {
            (Some(rows), _) => {
                let flat: Vec<Millis> = rows.iter().flatten().copied().collect();
                if rows.iter().any(|r| r.len() != nodes.len()) {
                    return Err(NetError::Invalid("matrix is not n x n".into()));
                }
                Self::from_matrix(&nodes, flat)?
            }
            (None, Some(seed)) => {
                Self::random(&nodes, spec.latency_range.unwrap_or(DEFAULT_LATENCY_RANGE), spec.symmetric, seed)?
            }
            (None, None) => return Err(NetError::Invalid("need latency_seed or matrix".into())),
        };
        for f in &spec.failures {
            topo.idx(RelayId(f.node))?;
        }
        topo.failures = spec.failures.clone();
        Ok(topo)
    }

    pub fn from_json(text: &str) -> Result<Self, NetError> {
        let spec: TopologySpec = serde_json::from_str(text).map_err(|e| NetError::Invalid(e.to_string()))?;
        Self::from_spec(&spec)
    }

    pub fn nodes(&self) -> &[NodeId] {
        &self.nodes
    }

    pub fn contains(&self, id: NodeId) -> bool {
        self.index.contains_key(&id)
    }

    fn idx(&self, id: NodeId) -> Result<usize, NetError> {
        self.index.get(&id).copied().ok_or(NetError::UnknownNode(id))
    }

    pub fn latency(&self, from: NodeId, to: NodeId) -> Result<Millis, NetError> {
        let (a, b) = (self.idx(from)?, self.idx(to)?);
        Ok(self.latency[a * self.nodes.len() + b])
    }

    pub fn status(&self, id: NodeId) -> Result<NodeStatus, NetError> {
        Ok(self.status[self.idx(id)?])
    }

    pub fn is_up(&self, id: NodeId) -> bool {
        self.index.get(&id).is_some_and(|&i| self.status[i] == NodeStatus::Up)
    }

    pub fn set_status(&mut self, id: NodeId, s: NodeStatus) -> Result<(), NetError> {
        let i = self.idx(id)?;
        self.status[i] = s;
        Ok(())
    }

    /// Round trip time, or `None` when the target is down.
    pub fn ping(&self, from: NodeId, to: NodeId) -> Result<Option<Millis>, NetError> {
        if from == to {
            self.idx(from)?;
            return Ok(Some(0));
        }
        let l = self.latency(from, to)?;
        Ok(self.is_up(to).then_some(2 * l))
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Dispatch<M> {
    Deliver {
        from: NodeId,
        to: NodeId,
        sent_at: Millis,
        msg: M,
    },
    /// Returned to `from` when `to` was down at delivery time.
    DeliveryFailure {
        from: NodeId,
        to: NodeId,
        sent_at: Millis,
        msg: M,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct TraceRecord {
    pub at: Millis,
    pub seq: u64,
    pub kind: u8,
    pub from: u32,
    pub to: u32,
}

enum Payload<M> {
    Deliver { from: NodeId, to: NodeId, sent_at: Millis, msg: M },
    SetStatus(NodeId, NodeStatus),
}

struct Pending<M> {
    at: Millis,
    seq: u64,
    payload: Payload<M>,
}

impl<M> PartialEq for Pending<M> {
    fn eq(&self, o: &Self) -> bool {
        (self.at, self.seq) == (o.at, o.seq)
    }
}
impl<M> Eq for Pending<M> {}
impl<M> PartialOrd for Pending<M> {
    fn partial_cmp(&self, o: &Self) -> Option<Ordering> {
        Some(self.cmp(o))
    }
}
impl<M> Ord for Pending<M> {
    // BinaryHeap is a max-heap; invert so the earliest (at, seq) pops first.
    fn cmp(&self, o: &Self) -> Ordering {
        (o.at, o.seq).cmp(&(self.at, self.seq))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct RunStats {
    pub events_dispatched: u64,
    pub final_time: Millis,
    pub horizon_exceeded: bool,
}

pub struct Network<M> {
    topology: Topology,
    now: Millis,
    seq: u64,
    queue: BinaryHeap<Pending<M>>,
    busy_until: Vec<Millis>,
    served: Vec<u64>,
    total_served: u64,
    pub service_time: Millis,
    trace: Option<Vec<TraceRecord>>,
}

impl<M> Network<M> {
    pub fn new(topology: Topology, service_time: Millis) -> Self {
        let n = topology.nodes.len();
        let failures = topology.failures.clone();
        let mut net = Self {
            topology,
            now: 0,
            seq: 0,
            queue: BinaryHeap::new(),
            busy_until: vec![0; n],
            served: vec![0; n],
            total_served: 0,
            service_time,
            trace: None,
        };
        for f in failures {
            net.push(f.at, Payload::SetStatus(RelayId(f.node), NodeStatus::Down));
        }
        net
    }

    pub fn enable_trace(&mut self) {
        self.trace.get_or_insert_with(Vec::new);
    }

    pub fn trace(&self) -> &[TraceRecord] {
        self.trace.as_deref().unwrap_or(&[])
    }

    pub fn now(&self) -> Millis {
        self.now
    }

    pub fn topology(&self) -> &Topology {
        &self.topology
    }

    pub fn pending(&self) -> usize {
        self.queue.len()
    }

    /// Number of messages node `id` has pushed through its service queue.
    pub fn served(&self, id: NodeId) -> u64 {
        self.topology.idx(id).map(|i| self.served[i]).unwrap_or(0)
    }

    /// Network-wide service count, kept separately from the per-node counters.
    pub fn total_served(&self) -> u64 {
        self.total_served
    }

    fn push(&mut self, at: Millis, payload: Payload<M>) {
        let seq = self.seq;
        self.seq += 1;
        self.queue.push(Pending { at, seq, payload });
    }

    /// Sends through `from`'s service queue. Returns the delivery time.
    pub fn send(&mut self, from: NodeId, to: NodeId, msg: M) -> Result<Millis, NetError> {
        let a = self.topology.idx(from)?;
        let latency = self.topology.latency(from, to)?;
        let depart = self.busy_until[a].max(self.now) + self.service_time;
        self.busy_until[a] = depart;
        self.served[a] += 1;
        self.total_served += 1;
        let at = depart + latency;
        self.push(at, Payload::Deliver { from, to, sent_at: self.now, msg });
        Ok(at)
    }

    /// Sends without occupying the sender's service queue.
    pub fn send_unserviced(&mut self, from: NodeId, to: NodeId, msg: M) -> Result<Millis, NetError> {
        let at = self.now + self.topology.latency(from, to)?;
        self.push(at, Payload::Deliver { from, to, sent_at: self.now, msg });
        Ok(at)
    }

    /// Delivers `msg` to `node` itself at virtual time `at` (a local timer).
    pub fn schedule_local(&mut self, node: NodeId, at: Millis, msg: M) -> Result<(), NetError> {
        self.topology.idx(node)?;
        self.push(at.max(self.now), Payload::Deliver { from: node, to: node, sent_at: at.max(self.now), msg });
        Ok(())
    }

    pub fn fail_node(&mut self, id: NodeId) -> Result<(), NetError> {
        self.topology.set_status(id, NodeStatus::Down)
    }

    pub fn restore_node(&mut self, id: NodeId) -> Result<(), NetError> {
        self.topology.set_status(id, NodeStatus::Up)
    }

    pub fn schedule_failure(&mut self, id: NodeId, at: Millis) -> Result<(), NetError> {
        self.topology.idx(id)?;
        self.push(at.max(self.now), Payload::SetStatus(id, NodeStatus::Down));
        Ok(())
    }

    pub fn ping(&self, from: NodeId, to: NodeId) -> Result<Option<Millis>, NetError> {
        self.topology.ping(from, to)
    }

    /// Pops the next handler invocation, applying status changes on the way.
    /// Failure notices addressed to a down sender are dropped.
    pub fn next_dispatch(&mut self, horizon: Millis) -> Option<Dispatch<M>> {
        loop {
            if self.queue.peek()?.at > horizon {
                return None;
            }
            let ev = self.queue.pop()?;
            self.now = self.now.max(ev.at);
            match ev.payload {
                Payload::SetStatus(id, s) => {
                    let _ = self.topology.set_status(id, s);
                }
                Payload::Deliver { from, to, sent_at, msg } => {
                    let (kind, d) = if self.topology.is_up(to) {
                        (0, Dispatch::Deliver { from, to, sent_at, msg })
                    } else if self.topology.is_up(from) {
                        (1, Dispatch::DeliveryFailure { from, to, sent_at, msg })
                    } else {
                        continue;
                    };
                    if let Some(t) = self.trace.as_mut() {
                        t.push(TraceRecord { at: self.now, seq: ev.seq, kind, from: from.0, to: to.0 });
                    }
                    return Some(d);
                }
            }
        }
    }

    pub fn run_until_idle<F>(&mut self, horizon: Millis, mut handler: F) -> RunStats
    where
        F: FnMut(&mut Self, Dispatch<M>),
    {
        let mut events = 0;
        while let Some(d) = self.next_dispatch(horizon) {
            events += 1;
            handler(self, d);
        }
        RunStats { events_dispatched: events, final_time: self.now, horizon_exceeded: !self.queue.is_empty() }
    }
}
