//! Deterministic discrete-event simulation of replicated clusters.
//!
//! Time advances in integer ticks. Each tick first delivers the messages
//! due at that tick, then runs the commands scheduled for it, then (every
//! `gossip_interval` ticks) performs anti-entropy. All randomness comes from
//! the scenario seed, so a run is a pure function of its inputs.
//!
//! Two substrates are provided:
//!
//! * [`BroadcastCluster`]: reliable exactly-once causal broadcast with
//!   timestamps and causal-stability notifications, for the op-based and
//!   pure approaches. Partitions delay messages but never lose them.
//! * [`GossipCluster`]: point-to-point channels that drop, duplicate and
//!   reorder, for the state-based and delta approaches.

mod broadcast;
mod gossip;
mod queue;
mod trace;

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

pub use broadcast::{BroadcastCluster, BroadcastNode, PureNode};
pub use gossip::{GossipCluster, Gossiper};
pub use queue::{link_rng, EventQueue};
pub use trace::{causal_order_check, stability_safety_check, MsgId, TraceEvent};

use crate::model::{Approach, CrdtError, Op, Output, Query, ReplicaId};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Topology {
    Clique,
    Line,
    Ring,
    /// Node 0 is the hub.
    Star,
}

impl Topology {
    pub fn neighbors(self, i: usize, n: usize) -> Vec<ReplicaId> {
        let mut out: Vec<usize> = match self {
            Topology::Clique => (0..n).filter(|&j| j != i).collect(),
            Topology::Line => [i.checked_sub(1), (i + 1 < n).then_some(i + 1)].into_iter().flatten().collect(),
            Topology::Ring if n > 1 => vec![(i + n - 1) % n, (i + 1) % n],
            Topology::Ring => vec![],
            Topology::Star if i == 0 => (1..n).collect(),
            Topology::Star => vec![0],
        };
        out.sort_unstable();
        out.dedup();
        out.retain(|&j| j != i);
        out.into_iter().map(|j| ReplicaId(j as u32)).collect()
    }

    pub fn name(self) -> &'static str {
        match self {
            Topology::Clique => "clique",
            Topology::Line => "line",
            Topology::Ring => "ring",
            Topology::Star => "star",
        }
    }
}

impl fmt::Display for Topology {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Topology {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        [Topology::Clique, Topology::Line, Topology::Ring, Topology::Star]
            .into_iter()
            .find(|t| t.name() == s)
            .ok_or_else(|| format!("unknown topology `{s}`"))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NetConfig {
    pub nodes: usize,
    pub topology: Topology,
    pub seed: u64,
    /// Loss probability per transmission (unreliable channels only).
    pub drop: f64,
    /// Probability that a transmission arrives twice (unreliable only).
    pub dup: f64,
    /// Extra delay drawn uniformly from `0..=reorder` ticks on top of one.
    pub reorder: u64,
    pub gossip_interval: u64,
    /// Delta replicas ship their full state every k-th gossip round.
    pub full_state_every: Option<u64>,
    /// No automatic transmission; knowledge moves only through `sync`.
    pub manual: bool,
}

impl Default for NetConfig {
    fn default() -> Self {
        NetConfig {
            nodes: 2,
            topology: Topology::Clique,
            seed: 0,
            drop: 0.0,
            dup: 0.0,
            reorder: 0,
            gossip_interval: 1,
            full_state_every: None,
            manual: false,
        }
    }
}

/// Group id per node; nodes in different groups cannot communicate.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Partition(Option<Vec<usize>>);

impl Partition {
    /// Nodes not mentioned in `groups` become singleton groups.
    pub fn split(nodes: usize, groups: &[Vec<usize>]) -> Self {
        let mut id: Vec<usize> = (0..nodes).map(|i| groups.len() + i).collect();
        for (g, members) in groups.iter().enumerate() {
            for &m in members {
                if m < nodes {
                    id[m] = g;
                }
            }
        }
        Partition(Some(id))
    }

    pub fn heal(&mut self) {
        self.0 = None;
    }

    pub fn connected(&self, a: usize, b: usize) -> bool {
        match &self.0 {
            None => true,
            Some(id) => id[a] == id[b],
        }
    }

    pub fn is_split(&self) -> bool {
        self.0.is_some()
    }
}

/// Traffic counters. Sizes are in scalar leaves.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct NetStats {
    pub messages: u64,
    pub payload: u64,
    pub dropped: u64,
    pub duplicated: u64,
    /// Payload put on the wire per tick.
    pub per_tick: BTreeMap<u64, u64>,
}

impl NetStats {
    pub(crate) fn record_send(&mut self, tick: u64, leaves: usize) {
        self.messages += 1;
        self.payload += leaves as u64;
        *self.per_tick.entry(tick).or_insert(0) += leaves as u64;
    }
}

/// A simulated cluster of replicas of one datatype under one approach,
/// driven tick by tick.
pub trait Cluster {
    fn approach(&self) -> Approach;

    fn size(&self) -> usize;

    fn now(&self) -> u64;

    /// Moves the clock to `tick` and delivers everything due by then.
    fn begin_tick(&mut self, tick: u64);

    /// Periodic anti-entropy for the current tick, if it is a gossip tick.
    fn end_tick(&mut self);

    fn invoke(&mut self, node: usize, op: &Op) -> Result<(), CrdtError>;

    /// An empty broadcast that only advances stability. A no-op for
    /// approaches without broadcast.
    fn beacon(&mut self, node: usize);

    fn partition(&mut self, groups: &[Vec<usize>]);

    fn heal(&mut self);

    /// Delivers everything in flight between connected nodes, then runs
    /// reliable rounds until every connected component has converged.
    fn flush(&mut self);

    /// Makes every node learn what `node` knows.
    fn sync(&mut self, node: usize);

    fn query(&self, node: usize, q: &Query) -> Result<Output, CrdtError>;

    /// The never-compacted reference answer, where one is kept.
    fn reference_query(&self, node: usize, q: &Query) -> Option<Result<Output, CrdtError>> {
        let _ = (node, q);
        None
    }

    fn state_leaves(&self, node: usize) -> usize;

    /// Whether every node has caught up with every update: all broadcasts
    /// delivered everywhere, or all states equal.
    fn settled(&self) -> bool;

    /// Operations delivered at `node` whose timestamps are not yet stable.
    fn unstable_ops(&self, node: usize) -> Vec<Op> {
        let _ = node;
        Vec::new()
    }

    /// Size of the timestamped (not yet stable) part of each replica log.
    fn timestamped_len(&self, node: usize) -> Option<usize> {
        let _ = node;
        None
    }

    /// Whether all replica states are structurally equal, where states are
    /// comparable.
    fn states_equal(&self) -> Option<bool> {
        None
    }

    /// Re-applies every payload each node has received, to copies of the
    /// replicas, and reports whether any state changed.
    fn replay_changes_state(&self) -> Option<bool> {
        None
    }

    fn stats(&self) -> &NetStats;

    fn trace(&self) -> &[TraceEvent];

    /// Ticks between broadcast and stability, one entry per (node, message).
    fn stability_lags(&self) -> &[u64] {
        &[]
    }

    fn note(&mut self, text: String);
}
