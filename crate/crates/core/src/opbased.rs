//! Operation-based CRDTs.
//!
//! An update runs `prepare` at the origin, which looks at the local state
//! and builds a message; the message is then handed to causal broadcast and
//! `effect` applies it at every replica, the origin included (immediately).
//! `prepare` may only touch auxiliary state such as a per-replica counter.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Debug;

use crate::causal::Dot;
use crate::model::{CrdtError, Elem, Measure, Op, Output, Query, ReplicaId};

pub trait OpBasedCrdt {
    const NAME: &'static str;

    /// Converging state, the only input to queries and effects.
    type State: Clone + Debug + Default + PartialEq;
    /// Replica-local bookkeeping, never read by `effect` or `query`.
    type Aux: Clone + Debug + Default;
    type Msg: Clone + Debug + PartialEq + Measure;

    fn prepare(
        id: ReplicaId,
        state: &Self::State,
        aux: &mut Self::Aux,
        op: &Op,
    ) -> Result<Self::Msg, CrdtError>;

    fn effect(state: &mut Self::State, msg: &Self::Msg);

    fn query(state: &Self::State, q: &Query) -> Result<Output, CrdtError>;

    fn state_leaves(state: &Self::State) -> usize;
}

#[derive(Debug, Clone, PartialEq)]
pub struct PreparedMessage<M> {
    pub origin: ReplicaId,
    pub payload: M,
}

#[derive(Debug, Clone)]
pub struct OpReplica<T: OpBasedCrdt> {
    pub id: ReplicaId,
    pub state: T::State,
    pub aux: T::Aux,
}

impl<T: OpBasedCrdt> OpReplica<T> {
    pub fn new(id: ReplicaId) -> Self {
        OpReplica { id, state: T::State::default(), aux: T::Aux::default() }
    }

    pub fn prepare(&mut self, op: &Op) -> Result<PreparedMessage<T::Msg>, CrdtError> {
        let payload = T::prepare(self.id, &self.state, &mut self.aux, op)?;
        Ok(PreparedMessage { origin: self.id, payload })
    }

    pub fn effect(&mut self, msg: &PreparedMessage<T::Msg>) {
        T::effect(&mut self.state, &msg.payload);
    }

    /// `prepare` followed by immediate self-delivery.
    pub fn update(&mut self, op: &Op) -> Result<PreparedMessage<T::Msg>, CrdtError> {
        let msg = self.prepare(op)?;
        self.effect(&msg);
        Ok(msg)
    }

    pub fn query(&self, q: &Query) -> Result<Output, CrdtError> {
        T::query(&self.state, q)
    }

    pub fn state_leaves(&self) -> usize {
        T::state_leaves(&self.state)
    }
}

fn elements<'a>(it: impl Iterator<Item = &'a Elem>) -> Output {
    Output::Set(it.cloned().collect())
}

fn set_query<'a>(
    name: &'static str,
    mut members: impl Iterator<Item = &'a Elem>,
    q: &Query,
) -> Result<Output, CrdtError> {
    match q {
        Query::Elements => Ok(elements(members)),
        Query::Contains(e) => Ok(Output::Bool(members.any(|m| m == e))),
        _ => Err(CrdtError::query(name, q)),
    }
}

fn dots_leaves(dots: &BTreeSet<Dot>) -> usize {
    dots.len()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CounterMsg {
    Inc,
    Dec,
}

impl Measure for CounterMsg {
    fn leaves(&self) -> usize {
        1
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct GCounter;

impl OpBasedCrdt for GCounter {
    const NAME: &'static str = "gcounter";
    type State = u64;
    type Aux = ();
    type Msg = CounterMsg;

    fn prepare(_: ReplicaId, _: &u64, _: &mut (), op: &Op) -> Result<CounterMsg, CrdtError> {
        match op {
            Op::Inc => Ok(CounterMsg::Inc),
            _ => Err(CrdtError::op(Self::NAME, op)),
        }
    }

    fn effect(state: &mut u64, msg: &CounterMsg) {
        if *msg == CounterMsg::Inc {
            *state += 1;
        }
    }

    fn query(state: &u64, q: &Query) -> Result<Output, CrdtError> {
        match q {
            Query::Value => Ok(Output::Int(*state as i64)),
            _ => Err(CrdtError::query(Self::NAME, q)),
        }
    }

    fn state_leaves(_: &u64) -> usize {
        1
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct PNCounter;

impl OpBasedCrdt for PNCounter {
    const NAME: &'static str = "pncounter";
    type State = i64;
    type Aux = ();
    type Msg = CounterMsg;

    fn prepare(_: ReplicaId, _: &i64, _: &mut (), op: &Op) -> Result<CounterMsg, CrdtError> {
        match op {
            Op::Inc => Ok(CounterMsg::Inc),
            Op::Dec => Ok(CounterMsg::Dec),
            _ => Err(CrdtError::op(Self::NAME, op)),
        }
    }

    fn effect(state: &mut i64, msg: &CounterMsg) {
        match msg {
            CounterMsg::Inc => *state += 1,
            CounterMsg::Dec => *state -= 1,
        }
    }

    fn query(state: &i64, q: &Query) -> Result<Output, CrdtError> {
        match q {
            Query::Value => Ok(Output::Int(*state)),
            _ => Err(CrdtError::query(Self::NAME, q)),
        }
    }

    fn state_leaves(_: &i64) -> usize {
        1
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AddMsg(pub Elem);

impl Measure for AddMsg {
    fn leaves(&self) -> usize {
        1
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct GSet;

impl OpBasedCrdt for GSet {
    const NAME: &'static str = "gset";
    type State = BTreeSet<Elem>;
    type Aux = ();
    type Msg = AddMsg;

    fn prepare(_: ReplicaId, _: &Self::State, _: &mut (), op: &Op) -> Result<AddMsg, CrdtError> {
        match op {
            Op::Add(e) => Ok(AddMsg(e.clone())),
            _ => Err(CrdtError::op(Self::NAME, op)),
        }
    }

    fn effect(state: &mut Self::State, msg: &AddMsg) {
        state.insert(msg.0.clone());
    }

    fn query(state: &Self::State, q: &Query) -> Result<Output, CrdtError> {
        set_query(Self::NAME, state.iter(), q)
    }

    fn state_leaves(state: &Self::State) -> usize {
        state.len()
    }
}

/// Messages of the set-of-pairs observed-remove set.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum NaiveORSetMsg {
    Add(Elem, Dot),
    Remove(BTreeSet<(Elem, Dot)>),
}

impl Measure for NaiveORSetMsg {
    fn leaves(&self) -> usize {
        match self {
            NaiveORSetMsg::Add(..) => 2,
            NaiveORSetMsg::Remove(r) => 2 * r.len(),
        }
    }
}

/// Observed-remove set keeping one `(element, id)` pair per add. Ids are
/// dots minted from a per-replica counter.
#[derive(Debug, Clone, Copy, Default)]
pub struct ORSetNaive;

impl OpBasedCrdt for ORSetNaive {
    const NAME: &'static str = "orset-naive";
    type State = BTreeSet<(Elem, Dot)>;
    type Aux = u64;
    type Msg = NaiveORSetMsg;

    fn prepare(
        id: ReplicaId,
        state: &Self::State,
        c: &mut u64,
        op: &Op,
    ) -> Result<NaiveORSetMsg, CrdtError> {
        match op {
            Op::Add(e) => {
                *c += 1;
                Ok(NaiveORSetMsg::Add(e.clone(), Dot::new(id, *c)))
            }
            Op::Remove(e) => Ok(NaiveORSetMsg::Remove(
                state.iter().filter(|(x, _)| x == e).cloned().collect(),
            )),
            _ => Err(CrdtError::op(Self::NAME, op)),
        }
    }

    fn effect(state: &mut Self::State, msg: &NaiveORSetMsg) {
        match msg {
            NaiveORSetMsg::Add(e, u) => {
                state.insert((e.clone(), *u));
            }
            NaiveORSetMsg::Remove(r) => state.retain(|pair| !r.contains(pair)),
        }
    }

    fn query(state: &Self::State, q: &Query) -> Result<Output, CrdtError> {
        let members: BTreeSet<&Elem> = state.iter().map(|(e, _)| e).collect();
        set_query(Self::NAME, members.into_iter(), q)
    }

    fn state_leaves(state: &Self::State) -> usize {
        2 * state.len()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ORSetMsg {
    /// Element, fresh dot, and the dots of the element observed at prepare.
    Add(Elem, Dot, BTreeSet<Dot>),
    Remove(Elem, BTreeSet<Dot>),
}

impl Measure for ORSetMsg {
    fn leaves(&self) -> usize {
        match self {
            ORSetMsg::Add(_, _, r) => 2 + dots_leaves(r),
            ORSetMsg::Remove(_, r) => 1 + dots_leaves(r),
        }
    }
}

/// Observed-remove set mapping each element to its live dots.
#[derive(Debug, Clone, Copy, Default)]
pub struct ORSet;

impl OpBasedCrdt for ORSet {
    const NAME: &'static str = "orset";
    type State = BTreeMap<Elem, BTreeSet<Dot>>;
    type Aux = u64;
    type Msg = ORSetMsg;

    fn prepare(
        id: ReplicaId,
        m: &Self::State,
        c: &mut u64,
        op: &Op,
    ) -> Result<ORSetMsg, CrdtError> {
        let observed = |e: &Elem| m.get(e).cloned().unwrap_or_default();
        match op {
            Op::Add(e) => {
                *c += 1;
                Ok(ORSetMsg::Add(e.clone(), Dot::new(id, *c), observed(e)))
            }
            Op::Remove(e) => Ok(ORSetMsg::Remove(e.clone(), observed(e))),
            _ => Err(CrdtError::op(Self::NAME, op)),
        }
    }

    fn effect(m: &mut Self::State, msg: &ORSetMsg) {
        let (e, r, d) = match msg {
            ORSetMsg::Add(e, d, r) => (e, r, Some(*d)),
            ORSetMsg::Remove(e, r) => (e, r, None),
        };
        let mut dots: BTreeSet<Dot> = m
            .remove(e)
            .unwrap_or_default()
            .into_iter()
            .filter(|x| !r.contains(x))
            .collect();
        dots.extend(d);
        if !dots.is_empty() {
            m.insert(e.clone(), dots);
        }
    }

    fn query(m: &Self::State, q: &Query) -> Result<Output, CrdtError> {
        set_query(Self::NAME, m.keys(), q)
    }

    fn state_leaves(m: &Self::State) -> usize {
        m.values().map(|dots| 1 + dots_leaves(dots)).sum()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct WriteMsg {
    pub value: Elem,
    pub dot: Dot,
    pub overwritten: BTreeSet<Dot>,
}

impl Measure for WriteMsg {
    fn leaves(&self) -> usize {
        2 + dots_leaves(&self.overwritten)
    }
}

/// Multi-value register keeping the most recent concurrent writes.
#[derive(Debug, Clone, Copy, Default)]
pub struct MVReg;

impl OpBasedCrdt for MVReg {
    const NAME: &'static str = "mvreg";
    type State = BTreeSet<(Elem, Dot)>;
    type Aux = u64;
    type Msg = WriteMsg;

    fn prepare(
        id: ReplicaId,
        s: &Self::State,
        c: &mut u64,
        op: &Op,
    ) -> Result<WriteMsg, CrdtError> {
        match op {
            Op::Write(e) => {
                *c += 1;
                Ok(WriteMsg {
                    value: e.clone(),
                    dot: Dot::new(id, *c),
                    overwritten: s.iter().map(|(_, d)| *d).collect(),
                })
            }
            _ => Err(CrdtError::op(Self::NAME, op)),
        }
    }

    fn effect(s: &mut Self::State, msg: &WriteMsg) {
        s.retain(|(_, d)| !msg.overwritten.contains(d));
        s.insert((msg.value.clone(), msg.dot));
    }

    fn query(s: &Self::State, q: &Query) -> Result<Output, CrdtError> {
        match q {
            Query::Read => Ok(elements(s.iter().map(|(e, _)| e))),
            _ => Err(CrdtError::query(Self::NAME, q)),
        }
    }

    fn state_leaves(s: &Self::State) -> usize {
        2 * s.len()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn add(e: &str) -> Op {
        Op::Add(e.into())
    }

    fn remove(e: &str) -> Op {
        Op::Remove(e.into())
    }

    #[test]
    fn orset_prepare_messages() {
        let i = ReplicaId(0);
        let mut r = OpReplica::<ORSet>::new(i);
        assert_eq!(
            r.prepare(&add("e")).unwrap().payload,
            ORSetMsg::Add("e".into(), Dot::new(0, 1), BTreeSet::new())
        );
        r.state.insert("e".into(), BTreeSet::from([Dot::new(1, 2)]));
        assert_eq!(
            r.prepare(&remove("e")).unwrap().payload,
            ORSetMsg::Remove("e".into(), BTreeSet::from([Dot::new(1, 2)]))
        );
        // prepare leaves the converging state alone
        assert_eq!(r.state.len(), 1);
    }

    #[test]
    fn mvreg_prepare_collects_current_dots() {
        let mut r = OpReplica::<MVReg>::new(ReplicaId(0));
        r.state.insert(("a".into(), Dot::new(1, 1)));
        let msg = r.prepare(&Op::Write("v".into())).unwrap().payload;
        assert_eq!(
            msg,
            WriteMsg {
                value: "v".into(),
                dot: Dot::new(0, 1),
                overwritten: BTreeSet::from([Dot::new(1, 1)]),
            }
        );
    }

    #[test]
    fn counter_effects() {
        let mut n = 4u64;
        GCounter::effect(&mut n, &CounterMsg::Inc);
        assert_eq!(n, 5);

        let mut r = OpReplica::<PNCounter>::new(ReplicaId(0));
        for op in [Op::Inc, Op::Inc, Op::Dec] {
            r.update(&op).unwrap();
        }
        assert_eq!(r.query(&Query::Value).unwrap(), Output::Int(1));
    }

    #[test]
    fn orset_add_replaces_observed_dots() {
        let (d1, d2) = (Dot::new(0, 1), Dot::new(0, 2));
        let mut m = BTreeMap::from([("e".to_string(), BTreeSet::from([d1]))]);
        ORSet::effect(&mut m, &ORSetMsg::Add("e".into(), d2, BTreeSet::from([d1])));
        assert_eq!(m["e"], BTreeSet::from([d2]));
    }

    #[test]
    fn orset_concurrent_add_and_remove_commute_to_add_wins() {
        let (d1, d2) = (Dot::new(0, 1), Dot::new(1, 1));
        let base = BTreeMap::from([("e".to_string(), BTreeSet::from([d1]))]);
        let rm = ORSetMsg::Remove("e".into(), BTreeSet::from([d1]));
        let ad = ORSetMsg::Add("e".into(), d2, BTreeSet::from([d1]));
        let mut x = base.clone();
        ORSet::effect(&mut x, &rm);
        ORSet::effect(&mut x, &ad);
        let mut y = base;
        ORSet::effect(&mut y, &ad);
        ORSet::effect(&mut y, &rm);
        assert_eq!(x, y);
        assert_eq!(x["e"], BTreeSet::from([d2]));
    }

    #[test]
    fn empty_entries_answer_false() {
        let r = OpReplica::<ORSet>::new(ReplicaId(0));
        assert_eq!(r.query(&Query::Contains("e".into())).unwrap(), Output::Bool(false));
    }

    #[test]
    fn naive_orset_sequential_add_then_remove() {
        let mut r = OpReplica::<ORSetNaive>::new(ReplicaId(0));
        r.update(&add("a")).unwrap();
        r.update(&remove("a")).unwrap();
        assert_eq!(r.query(&Query::Elements).unwrap(), Output::set(Vec::<Elem>::new()));
    }

    #[test]
    fn mvreg_keeps_concurrent_writes() {
        let mut a = OpReplica::<MVReg>::new(ReplicaId(0));
        let mut b = OpReplica::<MVReg>::new(ReplicaId(1));
        let ma = a.update(&Op::Write("a".into())).unwrap();
        let mb = b.update(&Op::Write("b".into())).unwrap();
        a.effect(&mb);
        b.effect(&ma);
        assert_eq!(a.state, b.state);
        assert_eq!(a.query(&Query::Read).unwrap(), Output::set(["a", "b"]));
    }

    #[test]
    fn unsupported_operations_are_rejected() {
        let mut r = OpReplica::<GCounter>::new(ReplicaId(0));
        assert!(matches!(r.prepare(&Op::Dec), Err(CrdtError::UnsupportedOp { .. })));
        assert!(r.query(&Query::Elements).is_err());
    }
}
