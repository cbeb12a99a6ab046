//! Node pool model: process slots per node, first-fit placement of simulator
//! instances, and a strict FIFO queue for requests that do not fit yet.

use std::collections::{BTreeMap, VecDeque};
use std::fmt;
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

pub const DEFAULT_SLOTS_PER_NODE: usize = 8;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NodeSpec {
    pub node_id: String,
    pub slots: usize,
}

impl NodeSpec {
    pub fn new(node_id: impl Into<String>, slots: usize) -> Self {
        NodeSpec {
            node_id: node_id.into(),
            slots,
        }
    }

    /// `count` nodes named `node1..nodeN`, each with `slots` slots.
    pub fn homogeneous(count: usize, slots: usize) -> Vec<NodeSpec> {
        (1..=count).map(|i| NodeSpec::new(format!("node{i}"), slots)).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct InstanceId(pub u64);

impl fmt::Display for InstanceId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "inst-{}", self.0)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Placement {
    pub instance_id: InstanceId,
    pub assignment: Vec<(String, usize)>,
}

impl Placement {
    pub fn procs(&self) -> usize {
        self.assignment.iter().map(|(_, n)| n).sum()
    }

    /// `node1:4,node2:4`
    pub fn summary(&self) -> String {
        self.assignment
            .iter()
            .map(|(n, k)| format!("{n}:{k}"))
            .collect::<Vec<_>>()
            .join(",")
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Grant {
    Placed(Placement),
    Queued { instance_id: InstanceId, position: usize },
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct ReleaseSummary {
    pub freed: Vec<(String, usize)>,
    /// Queued requests granted as a consequence of the release, in FIFO order.
    pub granted: Vec<Placement>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NodeUsage {
    pub node_id: String,
    pub allocated: usize,
    pub capacity: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Utilization {
    pub nodes: Vec<NodeUsage>,
    pub queue: usize,
}

impl Utilization {
    pub fn allocated(&self) -> usize {
        self.nodes.iter().map(|n| n.allocated).sum()
    }

    pub fn capacity(&self) -> usize {
        self.nodes.iter().map(|n| n.capacity).sum()
    }

    pub fn free(&self) -> usize {
        self.capacity() - self.allocated()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ResourceError {
    #[error("node pool is empty")]
    EmptyPool,
    #[error("node '{0}' has no slots")]
    ZeroSlots(String),
    #[error("node '{0}' declared twice")]
    DuplicateNode(String),
    #[error("a request must ask for at least one process")]
    ZeroProcs,
    #[error("request for {requested} processes exceeds pool capacity of {capacity}")]
    ExceedsCapacity { requested: usize, capacity: usize },
    #[error("unknown instance {0}")]
    UnknownInstance(InstanceId),
    #[error("invalid partition: {0}")]
    Partition(String),
}

/// Pool bookkeeping. Not synchronized; see [`ResourceManager`].
#[derive(Debug, Clone)]
pub struct PoolState {
    nodes: Vec<NodeSpec>,
    allocated: Vec<usize>,
    active: BTreeMap<InstanceId, Placement>,
    pending: VecDeque<(InstanceId, usize)>,
    next_id: u64,
}

impl PoolState {
    pub fn new(nodes: Vec<NodeSpec>) -> Result<Self, ResourceError> {
        if nodes.is_empty() {
            return Err(ResourceError::EmptyPool);
        }
        for (i, n) in nodes.iter().enumerate() {
            if n.slots == 0 {
                return Err(ResourceError::ZeroSlots(n.node_id.clone()));
            }
            if nodes[..i].iter().any(|m| m.node_id == n.node_id) {
                return Err(ResourceError::DuplicateNode(n.node_id.clone()));
            }
        }
        Ok(PoolState {
            allocated: vec![0; nodes.len()],
            nodes,
            active: BTreeMap::new(),
            pending: VecDeque::new(),
            next_id: 0,
        })
    }

    pub fn nodes(&self) -> &[NodeSpec] {
        &self.nodes
    }

    pub fn capacity(&self) -> usize {
        self.nodes.iter().map(|n| n.slots).sum()
    }

    pub fn free(&self) -> usize {
        self.capacity() - self.allocated.iter().sum::<usize>()
    }

    pub fn queue_len(&self) -> usize {
        self.pending.len()
    }

    pub fn active(&self) -> impl Iterator<Item = &Placement> {
        self.active.values()
    }

    fn fresh_id(&mut self) -> InstanceId {
        self.next_id += 1;
        InstanceId(self.next_id)
    }

    fn check_request(&self, procs: usize) -> Result<(), ResourceError> {
        if procs == 0 {
            return Err(ResourceError::ZeroProcs);
        }
        let capacity = self.capacity();
        if procs > capacity {
            return Err(ResourceError::ExceedsCapacity {
                requested: procs,
                capacity,
            });
        }
        Ok(())
    }

    /// Walk nodes in declaration order taking `min(free, remaining)` from each.
    fn place(&mut self, instance_id: InstanceId, procs: usize) -> Placement {
        let mut remaining = procs;
        let mut assignment = Vec::new();
        for (node, used) in self.nodes.iter().zip(self.allocated.iter_mut()) {
            if remaining == 0 {
                break;
            }
            let take = (node.slots - *used).min(remaining);
            if take > 0 {
                *used += take;
                remaining -= take;
                assignment.push((node.node_id.clone(), take));
            }
        }
        debug_assert_eq!(remaining, 0);
        let placement = Placement {
            instance_id,
            assignment,
        };
        self.active.insert(instance_id, placement.clone());
        placement
    }

    /// Place `procs` processes now, or queue the request behind any earlier
    /// pending ones. Requests larger than the whole pool are rejected.
    pub fn request(&mut self, procs: usize) -> Result<Grant, ResourceError> {
        self.check_request(procs)?;
        let id = self.fresh_id();
        if self.pending.is_empty() && self.free() >= procs {
            return Ok(Grant::Placed(self.place(id, procs)));
        }
        self.pending.push_back((id, procs));
        Ok(Grant::Queued {
            instance_id: id,
            position: self.pending.len() - 1,
        })
    }

    /// Like [`request`](Self::request) but never queues: returns `None` when
    /// the request cannot be placed right now or earlier requests are waiting.
    pub fn try_place(&mut self, procs: usize) -> Result<Option<Placement>, ResourceError> {
        self.check_request(procs)?;
        if !self.pending.is_empty() || self.free() < procs {
            return Ok(None);
        }
        let id = self.fresh_id();
        Ok(Some(self.place(id, procs)))
    }

    /// Return an instance's slots, then grant queued requests from the head
    /// for as long as the head fits.
    pub fn release(&mut self, instance_id: InstanceId) -> Result<ReleaseSummary, ResourceError> {
        let placement = self
            .active
            .remove(&instance_id)
            .ok_or(ResourceError::UnknownInstance(instance_id))?;
        for (node_id, n) in &placement.assignment {
            let i = self
                .nodes
                .iter()
                .position(|x| x.node_id == *node_id)
                .expect("placement refers to a pool node");
            self.allocated[i] -= n;
        }
        let mut summary = ReleaseSummary {
            freed: placement.assignment,
            granted: Vec::new(),
        };
        while let Some(&(id, procs)) = self.pending.front() {
            if self.free() < procs {
                break;
            }
            self.pending.pop_front();
            summary.granted.push(self.place(id, procs));
        }
        Ok(summary)
    }

    /// Drop a queued request without granting it.
    pub fn cancel(&mut self, instance_id: InstanceId) -> Result<(), ResourceError> {
        let at = self
            .pending
            .iter()
            .position(|(id, _)| *id == instance_id)
            .ok_or(ResourceError::UnknownInstance(instance_id))?;
        self.pending.remove(at);
        Ok(())
    }

    pub fn utilization(&self) -> Utilization {
        Utilization {
            nodes: self
                .nodes
                .iter()
                .zip(&self.allocated)
                .map(|(n, &a)| NodeUsage {
                    node_id: n.node_id.clone(),
                    allocated: a,
                    capacity: n.slots,
                })
                .collect(),
            queue: self.pending.len(),
        }
    }

    /// Verify capacity and conservation; returns a description of the first
    /// violation found.
    pub fn check_invariants(&self) -> Result<(), String> {
        let mut per_node = vec![0usize; self.nodes.len()];
        for p in self.active.values() {
            for (node_id, n) in &p.assignment {
                let i = self
                    .nodes
                    .iter()
                    .position(|x| x.node_id == *node_id)
                    .ok_or_else(|| format!("{} uses unknown node {node_id}", p.instance_id))?;
                per_node[i] += n;
            }
            let mut seen: Vec<&str> = p.assignment.iter().map(|(n, _)| n.as_str()).collect();
            seen.sort_unstable();
            seen.dedup();
            if seen.len() != p.assignment.len() {
                return Err(format!("{} lists a node twice", p.instance_id));
            }
        }
        for (i, node) in self.nodes.iter().enumerate() {
            if self.allocated[i] > node.slots {
                return Err(format!(
                    "{} over capacity: {} > {}",
                    node.node_id, self.allocated[i], node.slots
                ));
            }
            if per_node[i] != self.allocated[i] {
                return Err(format!(
                    "{} allocated {} but placements hold {}",
                    node.node_id, self.allocated[i], per_node[i]
                ));
            }
        }
        Ok(())
    }
}

/// Serialized front for a [`PoolState`]: every call takes the pool lock, so
/// concurrent callers observe a single order of request/release/utilization.
#[derive(Debug)]
pub struct ResourceManager {
    state: Mutex<PoolState>,
}

impl ResourceManager {
    pub fn new(nodes: Vec<NodeSpec>) -> Result<Self, ResourceError> {
        Ok(ResourceManager {
            state: Mutex::new(PoolState::new(nodes)?),
        })
    }

    pub fn request(&self, procs: usize) -> Result<Grant, ResourceError> {
        self.lock().request(procs)
    }

    pub fn try_place(&self, procs: usize) -> Result<Option<Placement>, ResourceError> {
        self.lock().try_place(procs)
    }

    pub fn release(&self, id: InstanceId) -> Result<ReleaseSummary, ResourceError> {
        self.lock().release(id)
    }

    pub fn cancel(&self, id: InstanceId) -> Result<(), ResourceError> {
        self.lock().cancel(id)
    }

    pub fn utilization(&self) -> Utilization {
        self.lock().utilization()
    }

    pub fn capacity(&self) -> usize {
        self.lock().capacity()
    }

    /// Run `f` with the pool locked.
    pub fn with_state<T>(&self, f: impl FnOnce(&mut PoolState) -> T) -> T {
        f(&mut self.lock())
    }

    fn lock(&self) -> std::sync::MutexGuard<'_, PoolState> {
        self.state.lock().unwrap_or_else(|e| e.into_inner())
    }
}

/// Split a pool into `floor(1 / fraction)` partitions of `floor(total *
/// fraction)` slots each, giving the rounding remainder to the first
/// partition. Nodes are handed out whole where sizes line up and split by
/// slots otherwise.
pub fn partition_pool(nodes: &[NodeSpec], fraction: f64) -> Result<Vec<Vec<NodeSpec>>, ResourceError> {
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(ResourceError::Partition(format!(
            "fraction {fraction} is not in (0, 1]"
        )));
    }
    let total: usize = nodes.iter().map(|n| n.slots).sum();
    // tolerate 1/3-style fractions that land a hair under an integer
    let parts = (1.0 / fraction + 1e-9).floor() as usize;
    let each = total / parts;
    if each == 0 {
        return Err(ResourceError::Partition(format!(
            "{parts} partitions do not fit in {total} slots"
        )));
    }
    let mut targets = vec![each; parts];
    targets[0] += total - each * parts;

    let mut out = Vec::with_capacity(parts);
    let mut node_iter = nodes.iter();
    let mut current: Option<(String, usize)> = None;
    for target in targets {
        let mut need = target;
        let mut part = Vec::new();
        while need > 0 {
            let (id, left) = match current.take() {
                Some(c) => c,
                None => {
                    let n = node_iter.next().expect("slot totals add up");
                    (n.node_id.clone(), n.slots)
                }
            };
            let take = left.min(need);
            part.push(NodeSpec::new(id.clone(), take));
            need -= take;
            if left > take {
                current = Some((id, left - take));
            }
        }
        out.push(part);
    }
    Ok(out)
}
