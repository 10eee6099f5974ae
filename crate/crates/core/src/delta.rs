//! Delta-state CRDTs.
//!
//! A delta mutator returns a small state `δ` with `m(X) = X ⊔ δ`. Replicas
//! buffer deltas and ship the joined buffer (a delta-group) to their
//! neighbors periodically. Two propagation modes are provided:
//!
//! * [`Propagation::Naive`]: received groups are joined into both the state
//!   and the buffer, and the whole buffer goes to every neighbor.
//! * [`Propagation::Improved`]: the buffer is a list of `(origin, fragment)`
//!   pairs. A received group is first reduced to what the replica is
//!   missing (`Δ(g, X)`), and a fragment is never sent back to the neighbor
//!   it came from.

use std::collections::BTreeSet;

use log::warn;

use crate::causal::{CausalContext, DotStore};
use crate::lattice::{Atom, Decompose, Lattice};
use crate::model::{CrdtError, Op, ReplicaId};
use crate::statebased::{Advancer, GCounter, GSet, ORSet, PNCounter, StateCrdt};

pub trait DeltaCrdt: StateCrdt + Decompose {
    /// The handwritten delta mutator.
    fn delta(&self, id: ReplicaId, op: &Op) -> Result<Self, CrdtError>;
}

/// `Δ(m(x), x)`: the smallest delta that takes `x` to `m(x)`.
pub fn optimal_delta<T: DeltaCrdt>(x: &T, id: ReplicaId, op: &Op) -> Result<T, CrdtError> {
    Ok(x.mutate(id, op)?.difference(x)?)
}

impl DeltaCrdt for GSet {
    fn delta(&self, _: ReplicaId, op: &Op) -> Result<Self, CrdtError> {
        match op {
            Op::Add(e) => Ok(GSet(BTreeSet::from([e.clone()]))),
            _ => Err(CrdtError::op(Self::NAME, op)),
        }
    }
}

impl DeltaCrdt for GCounter {
    fn delta(&self, id: ReplicaId, op: &Op) -> Result<Self, CrdtError> {
        match op {
            Op::Inc => Ok(GCounter([(id, self.get(id) + 1)].into_iter().collect())),
            _ => Err(CrdtError::op(Self::NAME, op)),
        }
    }
}

impl DeltaCrdt for PNCounter {
    fn delta(&self, id: ReplicaId, op: &Op) -> Result<Self, CrdtError> {
        match op {
            Op::Inc => Ok(PNCounter { p: self.p.delta(id, op)?, n: GCounter::bottom() }),
            Op::Dec => Ok(PNCounter { p: GCounter::bottom(), n: self.n.delta(id, &Op::Inc)? }),
            _ => Err(CrdtError::op(Self::NAME, op)),
        }
    }
}

impl DeltaCrdt for Advancer {
    fn delta(&self, _: ReplicaId, op: &Op) -> Result<Self, CrdtError> {
        match op {
            Op::Advance(e) => Ok(Advancer([(e.clone(), self.advanced_value(e))].into_iter().collect())),
            _ => Err(CrdtError::op(Self::NAME, op)),
        }
    }
}

impl DeltaCrdt for ORSet {
    fn delta(&self, id: ReplicaId, op: &Op) -> Result<Self, CrdtError> {
        match op {
            Op::Add(e) => {
                let d = self.next_dot(id);
                let seen = self.dots(e);
                Ok(ORSet::from_parts(
                    [(Atom::from(e.as_str()), DotStore::Set(BTreeSet::from([d])))].into_iter().collect(),
                    CausalContext::from_dots(seen.into_iter().chain([d])),
                ))
            }
            Op::Remove(e) => Ok(ORSet::from_parts(
                Default::default(),
                CausalContext::from_dots(self.dots(e)),
            )),
            _ => Err(CrdtError::op(Self::NAME, op)),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Propagation {
    Naive,
    Improved,
}

#[derive(Debug, Clone)]
pub struct DeltaReplica<T: DeltaCrdt> {
    pub id: ReplicaId,
    /// Replica state `X`.
    pub state: T,
    neighbors: Vec<ReplicaId>,
    mode: Propagation,
    buffer: T,
    fragments: Vec<(ReplicaId, T)>,
    ticks: u64,
    full_state_every: Option<u64>,
}

impl<T: DeltaCrdt> DeltaReplica<T> {
    pub fn new(id: ReplicaId, neighbors: Vec<ReplicaId>, mode: Propagation) -> Self {
        DeltaReplica {
            id,
            state: T::bottom(),
            neighbors,
            mode,
            buffer: T::bottom(),
            fragments: Vec::new(),
            ticks: 0,
            full_state_every: None,
        }
    }

    /// Ship the full state instead of the buffer on every `k`-th tick.
    pub fn with_full_state_every(mut self, k: Option<u64>) -> Self {
        self.full_state_every = k.filter(|&k| k > 0);
        self
    }

    pub fn mode(&self) -> Propagation {
        self.mode
    }

    pub fn neighbors(&self) -> &[ReplicaId] {
        &self.neighbors
    }

    /// Everything buffered for sending, joined.
    pub fn buffer(&self) -> T {
        match self.mode {
            Propagation::Naive => self.buffer.clone(),
            Propagation::Improved => self.fragments.iter().fold(T::bottom(), |acc, (_, f)| acc.join(f)),
        }
    }

    /// Applies a local operation and returns its delta.
    pub fn operate(&mut self, op: &Op) -> Result<T, CrdtError> {
        let d = self.state.delta(self.id, op)?;
        self.state.join_assign(&d);
        match self.mode {
            Propagation::Naive => self.buffer.join_assign(&d),
            Propagation::Improved => self.fragments.push((self.id, d.clone())),
        }
        Ok(d)
    }

    /// Incorporates a delta-group received from `from`. Returns whether the
    /// state changed.
    pub fn receive(&mut self, from: ReplicaId, group: &T) -> bool {
        match self.mode {
            Propagation::Naive => {
                let before = self.state.clone();
                self.state.join_assign(group);
                self.buffer.join_assign(group);
                self.state != before
            }
            Propagation::Improved => match group.difference(&self.state) {
                Ok(fresh) if fresh.is_bottom() => false,
                Ok(fresh) => {
                    self.state.join_assign(&fresh);
                    self.fragments.push((from, fresh));
                    true
                }
                Err(e) => {
                    warn!("replica {}: {e}; switching to naive propagation", self.id);
                    self.buffer = self.buffer();
                    self.fragments.clear();
                    self.mode = Propagation::Naive;
                    self.receive(from, group)
                }
            },
        }
    }

    /// One anti-entropy round: the payload for each neighbor, empty
    /// payloads omitted. Clears the buffer.
    pub fn tick(&mut self) -> Vec<(ReplicaId, T)> {
        self.ticks += 1;
        let full = self.full_state_every.is_some_and(|k| self.ticks.is_multiple_of(k));
        let out = if full {
            self.neighbors.iter().map(|&n| (n, self.state.clone())).collect()
        } else {
            match self.mode {
                Propagation::Naive => self.neighbors.iter().map(|&n| (n, self.buffer.clone())).collect(),
                Propagation::Improved => self
                    .neighbors
                    .iter()
                    .map(|&n| {
                        let group = self
                            .fragments
                            .iter()
                            .filter(|(origin, _)| *origin != n)
                            .fold(T::bottom(), |acc, (_, f)| acc.join(f));
                        (n, group)
                    })
                    .collect::<Vec<_>>(),
            }
        };
        self.buffer = T::bottom();
        self.fragments.clear();
        out.into_iter().filter(|(_, p)| !p.is_bottom()).collect()
    }
}
