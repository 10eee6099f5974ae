//! State-based CRDTs.
//!
//! Replica states form join-semilattices, updates are inflations and merge
//! is the join, so states can be shipped over channels that lose, duplicate
//! and reorder messages.

use std::collections::{BTreeMap, BTreeSet};

use crate::causal::{CausalContext, CausalState, Dot, DotStore};
use crate::lattice::{Atom, Decompose, Lattice, LatticeError, LatticeValue};
use crate::model::{CrdtError, Elem, Op, Output, Query, ReplicaId};

pub trait StateCrdt: Lattice {
    const NAME: &'static str;

    /// The full mutator: returns the updated state.
    fn mutate(&self, id: ReplicaId, op: &Op) -> Result<Self, CrdtError>;

    fn query(&self, q: &Query) -> Result<Output, CrdtError>;

    fn leaves(&self) -> usize;
}

#[derive(Debug, Clone)]
pub struct StateReplica<T: StateCrdt> {
    pub id: ReplicaId,
    pub state: T,
}

impl<T: StateCrdt> StateReplica<T> {
    pub fn new(id: ReplicaId) -> Self {
        StateReplica { id, state: T::bottom() }
    }

    pub fn apply(&mut self, op: &Op) -> Result<(), CrdtError> {
        self.state = self.state.mutate(self.id, op)?;
        Ok(())
    }

    pub fn merge(&mut self, other: &T) {
        self.state.join_assign(other);
    }

    pub fn query(&self, q: &Query) -> Result<Output, CrdtError> {
        self.state.query(q)
    }
}

fn set_answer<'a>(
    name: &'static str,
    members: impl Iterator<Item = &'a Elem>,
    q: &Query,
) -> Result<Output, CrdtError> {
    let members: BTreeSet<Elem> = members.cloned().collect();
    match q {
        Query::Elements => Ok(Output::Set(members)),
        Query::Contains(e) => Ok(Output::Bool(members.contains(e))),
        _ => Err(CrdtError::query(name, q)),
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct GSet(pub BTreeSet<Elem>);

impl Lattice for GSet {
    fn bottom() -> Self {
        GSet::default()
    }

    fn join_assign(&mut self, other: &Self) {
        self.0.extend(other.0.iter().cloned());
    }

    fn leq(&self, other: &Self) -> bool {
        self.0.is_subset(&other.0)
    }
}

impl Decompose for GSet {
    fn decompose(&self) -> Result<Vec<Self>, LatticeError> {
        Ok(self.0.iter().map(|e| GSet(BTreeSet::from([e.clone()]))).collect())
    }

    fn difference(&self, other: &Self) -> Result<Self, LatticeError> {
        Ok(GSet(self.0.difference(&other.0).cloned().collect()))
    }
}

impl StateCrdt for GSet {
    const NAME: &'static str = "gset";

    fn mutate(&self, _: ReplicaId, op: &Op) -> Result<Self, CrdtError> {
        match op {
            Op::Add(e) => {
                let mut s = self.clone();
                s.0.insert(e.clone());
                Ok(s)
            }
            _ => Err(CrdtError::op(Self::NAME, op)),
        }
    }

    fn query(&self, q: &Query) -> Result<Output, CrdtError> {
        set_answer(Self::NAME, self.0.iter(), q)
    }

    fn leaves(&self) -> usize {
        self.0.len()
    }
}

impl GSet {
    pub fn to_lattice_value(&self) -> LatticeValue {
        LatticeValue::set(self.0.iter().map(String::as_str))
    }
}

/// Grow-only counter: one entry per replica, merged by pointwise max.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct GCounter(pub BTreeMap<ReplicaId, u64>);

impl GCounter {
    pub fn get(&self, r: ReplicaId) -> u64 {
        self.0.get(&r).copied().unwrap_or(0)
    }

    pub fn value(&self) -> u64 {
        self.0.values().sum()
    }

    pub fn inc(&self, i: ReplicaId) -> Self {
        let mut m = self.clone();
        m.0.insert(i, self.get(i) + 1);
        m
    }

    pub fn to_lattice_value(&self) -> LatticeValue {
        LatticeValue::map(self.0.iter().map(|(r, n)| (Atom::Num(r.0 as u64), LatticeValue::Nat(*n))))
    }
}

impl Lattice for GCounter {
    fn bottom() -> Self {
        GCounter::default()
    }

    fn join_assign(&mut self, other: &Self) {
        for (r, n) in &other.0 {
            let e = self.0.entry(*r).or_insert(0);
            *e = (*e).max(*n);
        }
    }

    fn leq(&self, other: &Self) -> bool {
        self.0.iter().all(|(r, n)| *n <= other.get(*r))
    }
}

impl Decompose for GCounter {
    fn decompose(&self) -> Result<Vec<Self>, LatticeError> {
        Ok(self.0.iter().map(|(r, n)| GCounter(BTreeMap::from([(*r, *n)]))).collect())
    }

    fn difference(&self, other: &Self) -> Result<Self, LatticeError> {
        Ok(GCounter(self.0.iter().filter(|(r, n)| **n > other.get(**r)).map(|(r, n)| (*r, *n)).collect()))
    }
}

impl StateCrdt for GCounter {
    const NAME: &'static str = "gcounter";

    fn mutate(&self, id: ReplicaId, op: &Op) -> Result<Self, CrdtError> {
        match op {
            Op::Inc => Ok(self.inc(id)),
            _ => Err(CrdtError::op(Self::NAME, op)),
        }
    }

    fn query(&self, q: &Query) -> Result<Output, CrdtError> {
        match q {
            Query::Value => Ok(Output::Int(self.value() as i64)),
            _ => Err(CrdtError::query(Self::NAME, q)),
        }
    }

    fn leaves(&self) -> usize {
        2 * self.0.len()
    }
}

/// A pair of grow-only counters for increments and decrements.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct PNCounter {
    pub p: GCounter,
    pub n: GCounter,
}

impl PNCounter {
    pub fn value(&self) -> i64 {
        self.p.value() as i64 - self.n.value() as i64
    }

    pub fn to_lattice_value(&self) -> LatticeValue {
        LatticeValue::product(self.p.to_lattice_value(), self.n.to_lattice_value())
    }
}

impl Lattice for PNCounter {
    fn bottom() -> Self {
        PNCounter::default()
    }

    fn join_assign(&mut self, other: &Self) {
        self.p.join_assign(&other.p);
        self.n.join_assign(&other.n);
    }

    fn leq(&self, other: &Self) -> bool {
        self.p.leq(&other.p) && self.n.leq(&other.n)
    }
}

impl Decompose for PNCounter {
    fn decompose(&self) -> Result<Vec<Self>, LatticeError> {
        let ps = self.p.decompose()?.into_iter().map(|p| PNCounter { p, n: GCounter::bottom() });
        let ns = self.n.decompose()?.into_iter().map(|n| PNCounter { p: GCounter::bottom(), n });
        Ok(ps.chain(ns).collect())
    }

    fn difference(&self, other: &Self) -> Result<Self, LatticeError> {
        Ok(PNCounter { p: self.p.difference(&other.p)?, n: self.n.difference(&other.n)? })
    }
}

impl StateCrdt for PNCounter {
    const NAME: &'static str = "pncounter";

    fn mutate(&self, id: ReplicaId, op: &Op) -> Result<Self, CrdtError> {
        match op {
            Op::Inc => Ok(PNCounter { p: self.p.inc(id), n: self.n.clone() }),
            Op::Dec => Ok(PNCounter { p: self.p.clone(), n: self.n.inc(id) }),
            _ => Err(CrdtError::op(Self::NAME, op)),
        }
    }

    fn query(&self, q: &Query) -> Result<Output, CrdtError> {
        match q {
            Query::Value => Ok(Output::Int(self.value())),
            _ => Err(CrdtError::query(Self::NAME, q)),
        }
    }

    fn leaves(&self) -> usize {
        self.p.leaves() + self.n.leaves()
    }
}

/// Map from keys to naturals where `advance(k)` lifts `k` to at least one
/// above every other key. The update is not commutative but it is an
/// idempotent inflation, so the sequential type merges by pointwise max.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Advancer(pub BTreeMap<Elem, u64>);

impl Advancer {
    pub fn get(&self, k: &str) -> u64 {
        self.0.get(k).copied().unwrap_or(0)
    }

    /// The value `advance(e)` gives to `e`.
    pub fn advanced_value(&self, e: &str) -> u64 {
        let others = self.0.iter().filter(|(k, _)| k.as_str() != e).map(|(_, v)| *v).max();
        self.get(e).max(1 + others.unwrap_or(0))
    }

    pub fn advance(&self, e: &str) -> Self {
        let mut s = self.clone();
        s.0.insert(e.to_owned(), self.advanced_value(e));
        s
    }

    /// Keys holding the maximum value; all of them on a tie.
    pub fn ahead(&self) -> BTreeSet<Elem> {
        let top = self.0.values().max();
        self.0.iter().filter(|(_, v)| Some(*v) == top).map(|(k, _)| k.clone()).collect()
    }

    pub fn to_lattice_value(&self) -> LatticeValue {
        LatticeValue::map(self.0.iter().map(|(k, v)| (k.as_str(), LatticeValue::Nat(*v))))
    }
}

impl Lattice for Advancer {
    fn bottom() -> Self {
        Advancer::default()
    }

    fn join_assign(&mut self, other: &Self) {
        for (k, v) in &other.0 {
            let e = self.0.entry(k.clone()).or_insert(0);
            *e = (*e).max(*v);
        }
    }

    fn leq(&self, other: &Self) -> bool {
        self.0.iter().all(|(k, v)| *v <= other.get(k))
    }
}

impl Decompose for Advancer {
    fn decompose(&self) -> Result<Vec<Self>, LatticeError> {
        Ok(self.0.iter().map(|(k, v)| Advancer(BTreeMap::from([(k.clone(), *v)]))).collect())
    }

    fn difference(&self, other: &Self) -> Result<Self, LatticeError> {
        Ok(Advancer(
            self.0.iter().filter(|(k, v)| **v > other.get(k)).map(|(k, v)| (k.clone(), *v)).collect(),
        ))
    }
}

impl StateCrdt for Advancer {
    const NAME: &'static str = "advancer";

    fn mutate(&self, _: ReplicaId, op: &Op) -> Result<Self, CrdtError> {
        match op {
            Op::Advance(e) => Ok(self.advance(e)),
            _ => Err(CrdtError::op(Self::NAME, op)),
        }
    }

    fn query(&self, q: &Query) -> Result<Output, CrdtError> {
        match q {
            Query::Ahead => Ok(Output::Set(self.ahead())),
            Query::Entries => Ok(Output::Map(self.0.clone())),
            _ => Err(CrdtError::query(Self::NAME, q)),
        }
    }

    fn leaves(&self) -> usize {
        2 * self.0.len()
    }
}

/// Add-wins observed-remove set as a causal CRDT: a dot map from elements
/// to dot sets, with the replica's causal context.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ORSet(CausalState);

impl ORSet {
    /// Wraps a causal state whose store is a map of dot sets.
    pub fn from_causal(state: CausalState) -> Result<Self, LatticeError> {
        match &state.store {
            DotStore::Map(m) if m.values().all(|c| matches!(c, DotStore::Set(_))) => Ok(ORSet(state)),
            other => Err(LatticeError::ShapeMismatch(format!("orset needs a map of dot sets, got {other}"))),
        }
    }

    pub fn causal(&self) -> &CausalState {
        &self.0
    }

    pub fn context(&self) -> &CausalContext {
        &self.0.context
    }

    /// Live dots of `e`.
    pub fn dots(&self, e: &str) -> BTreeSet<Dot> {
        match &self.0.store {
            DotStore::Map(m) => match m.get(&Atom::from(e)) {
                Some(DotStore::Set(s)) => s.clone(),
                _ => BTreeSet::new(),
            },
            _ => BTreeSet::new(),
        }
    }

    pub fn elements(&self) -> BTreeSet<Elem> {
        match &self.0.store {
            DotStore::Map(m) => m.keys().map(|k| k.to_string()).collect(),
            _ => BTreeSet::new(),
        }
    }

    fn entries(&self) -> BTreeMap<Atom, DotStore> {
        match &self.0.store {
            DotStore::Map(m) => m.clone(),
            _ => BTreeMap::new(),
        }
    }

    pub(crate) fn from_parts(entries: BTreeMap<Atom, DotStore>, context: CausalContext) -> Self {
        ORSet(CausalState::new(DotStore::Map(entries), context))
    }

    /// Mints the dot an `add` at `id` would use.
    pub fn next_dot(&self, id: ReplicaId) -> Dot {
        self.0.context.clone().next_dot(id)
    }
}

impl Lattice for ORSet {
    fn bottom() -> Self {
        ORSet(CausalState::bottom_of(&DotStore::empty_map()))
    }

    fn join_assign(&mut self, other: &Self) {
        self.0 = self.0.join(&other.0).expect("orset states are always maps of dot sets");
    }

    fn is_bottom(&self) -> bool {
        self.0.is_bottom()
    }
}

impl Decompose for ORSet {
    fn decompose(&self) -> Result<Vec<Self>, LatticeError> {
        Ok(self.0.decompose()?.into_iter().map(ORSet).collect())
    }

    fn difference(&self, other: &Self) -> Result<Self, LatticeError> {
        Ok(ORSet(self.0.difference(&other.0)?))
    }
}

impl StateCrdt for ORSet {
    const NAME: &'static str = "orset";

    fn mutate(&self, id: ReplicaId, op: &Op) -> Result<Self, CrdtError> {
        let mut entries = self.entries();
        let mut context = self.0.context.clone();
        match op {
            Op::Add(e) => {
                let d = context.next_dot(id);
                entries.insert(Atom::from(e.as_str()), DotStore::Set(BTreeSet::from([d])));
            }
            Op::Remove(e) => {
                entries.remove(&Atom::from(e.as_str()));
            }
            _ => return Err(CrdtError::op(Self::NAME, op)),
        }
        Ok(ORSet::from_parts(entries, context))
    }

    fn query(&self, q: &Query) -> Result<Output, CrdtError> {
        set_answer(Self::NAME, self.elements().iter(), q)
    }

    fn leaves(&self) -> usize {
        self.0.leaves()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const I: ReplicaId = ReplicaId(0);
    const J: ReplicaId = ReplicaId(1);

    fn adv(s: &Advancer, keys: &[&str]) -> Advancer {
        keys.iter().fold(s.clone(), |acc, k| acc.advance(k))
    }

    fn pairs(s: &Advancer) -> Vec<(&str, u64)> {
        s.0.iter().map(|(k, v)| (k.as_str(), *v)).collect()
    }

    #[test]
    fn gcounter_inc_from_bottom() {
        let c = GCounter::bottom().mutate(I, &Op::Inc).unwrap();
        assert_eq!(c.0, BTreeMap::from([(I, 1)]));
    }

    #[test]
    fn advancer_runs() {
        let s = Advancer::bottom();
        assert_eq!(pairs(&adv(&s, &["a", "b"])), vec![("a", 1), ("b", 2)]);
        assert_eq!(pairs(&adv(&s, &["b", "a"])), vec![("a", 2), ("b", 1)]);
        let merged = adv(&s, &["a"]).join(&adv(&s, &["b"]));
        assert_eq!(pairs(&merged), vec![("a", 1), ("b", 1)]);
        assert_eq!(merged.ahead(), BTreeSet::from(["a".into(), "b".into()]));
        assert!(s.ahead().is_empty());
    }

    #[test]
    fn orset_add_instantiates_the_formula() {
        let s = ORSet::bottom().mutate(I, &Op::Add("e".into())).unwrap();
        assert_eq!(s.dots("e"), BTreeSet::from([Dot::new(0, 1)]));
        assert_eq!(s.context().compact().get(I), 1);
        assert!(s.causal().is_well_formed());
    }

    #[test]
    fn pncounter_merge() {
        let a = PNCounter {
            p: GCounter(BTreeMap::from([(I, 2)])),
            n: GCounter(BTreeMap::from([(I, 1)])),
        };
        let b = PNCounter { p: GCounter(BTreeMap::from([(J, 3)])), n: GCounter::bottom() };
        let m = a.join(&b);
        assert_eq!(m.p.0, BTreeMap::from([(I, 2), (J, 3)]));
        assert_eq!(m.n.0, BTreeMap::from([(I, 1)]));
        assert_eq!(m.value(), 4);
    }

    #[test]
    fn orset_add_wins_over_concurrent_remove() {
        let e = Op::Add("e".into());
        let base = ORSet::bottom().mutate(I, &e).unwrap();
        let at_j = base.clone();
        let readd = base.mutate(I, &e).unwrap();
        let removed = at_j.mutate(J, &Op::Remove("e".into())).unwrap();
        let merged = readd.join(&removed);
        assert_eq!(merged.dots("e"), BTreeSet::from([Dot::new(0, 2)]));
        assert_eq!(merged, removed.join(&readd));
    }

    #[test]
    fn gset_contains_after_add() {
        let s = GSet::bottom().mutate(I, &Op::Add("e".into())).unwrap();
        assert_eq!(s.query(&Query::Contains("e".into())).unwrap(), Output::Bool(true));
    }

    #[test]
    fn typed_joins_agree_with_lattice_values() {
        let a = GCounter(BTreeMap::from([(I, 3)]));
        let b = GCounter(BTreeMap::from([(I, 1), (J, 2)]));
        assert_eq!(a.join(&b).to_lattice_value(), a.to_lattice_value().join(&b.to_lattice_value()).unwrap());
    }
}
