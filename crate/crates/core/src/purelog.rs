//! Pure operation-based CRDTs.
//!
//! `prepare` is the identity: the operation itself is broadcast, tagged with
//! a partially ordered timestamp, and every replica stores `(timestamp, op)`
//! in its PO-Log. Queries evaluate over the log. Two mechanisms keep the log
//! small: a per-datatype obsolete relation discards entries made redundant by
//! newer ones, and once a timestamp is causally stable its entry moves into a
//! timestamp-free core.

use std::cmp::Ordering;
use std::collections::{BTreeMap, BTreeSet};
use std::fmt::{self, Debug};

use crate::causal::VersionVector;
use crate::model::{CrdtError, Elem, Op, Output, Query, ReplicaId};

/// Version-vector timestamp of a broadcast, tagged with its origin.
///
/// The causal order is [`Timestamp::lt`]. The total `Ord` (by clock sum,
/// then clock, then origin) extends it and exists only for deterministic
/// iteration.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Timestamp {
    pub clock: VersionVector,
    pub origin: ReplicaId,
}

impl Timestamp {
    pub fn new(clock: VersionVector, origin: ReplicaId) -> Self {
        Timestamp { clock, origin }
    }

    /// Position of this event in its origin's sequence.
    pub fn seq(&self) -> u64 {
        self.clock.get(self.origin)
    }

    pub fn leq(&self, other: &Timestamp) -> bool {
        self.clock.leq(&other.clock)
    }

    /// Happened-before.
    pub fn lt(&self, other: &Timestamp) -> bool {
        self.clock.lt(&other.clock)
    }

    pub fn concurrent(&self, other: &Timestamp) -> bool {
        self.clock.concurrent(&other.clock)
    }

    pub fn leaves(&self) -> usize {
        self.clock.len() + 1
    }
}

impl Ord for Timestamp {
    fn cmp(&self, other: &Self) -> Ordering {
        self.clock
            .sum()
            .cmp(&other.clock.sum())
            .then_with(|| self.clock.cmp(&other.clock))
            .then_with(|| self.origin.cmp(&other.origin))
    }
}

impl PartialOrd for Timestamp {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl fmt::Display for Timestamp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}@{}", self.clock, self.origin)
    }
}

/// Timestamped entries plus the condensed core of stable ones.
#[derive(Debug, Clone, PartialEq)]
pub struct POLog<D: PureCrdt> {
    pub timestamped: BTreeMap<Timestamp, Op>,
    pub stable: D::Stable,
}

impl<D: PureCrdt> Default for POLog<D> {
    fn default() -> Self {
        POLog { timestamped: BTreeMap::new(), stable: D::Stable::default() }
    }
}

impl<D: PureCrdt> POLog<D> {
    pub fn leaves(&self) -> usize {
        self.timestamped.iter().map(|(t, op)| t.leaves() + op.leaves()).sum::<usize>()
            + D::stable_leaves(&self.stable)
    }
}

pub trait PureCrdt: Sized {
    const NAME: &'static str;

    /// Condensed state of stabilized entries.
    type Stable: Clone + Debug + Default + PartialEq;

    fn accepts(op: &Op) -> bool;

    /// Validation at the origin before broadcast.
    fn check(replica: &PureReplica<Self>, op: &Op) -> Result<(), CrdtError> {
        let _ = replica;
        if Self::accepts(op) {
            Ok(())
        } else {
            Err(CrdtError::op(Self::NAME, op))
        }
    }

    /// `old` is made redundant by the arrival of `new`.
    fn obsolete(old: (&Timestamp, &Op), new: (&Timestamp, &Op)) -> bool {
        let _ = (old, new);
        false
    }

    /// An arriving entry that is dropped right after pruning the log.
    fn redundant(op: &Op) -> bool {
        let _ = op;
        false
    }

    /// Drops core information that an arriving entry makes obsolete.
    /// Stable entries precede every later arrival causally.
    fn supersede_stable(stable: &mut Self::Stable, op: &Op) {
        let _ = (stable, op);
    }

    /// Folds a stabilized entry into the core.
    fn absorb(stable: &mut Self::Stable, op: Op);

    fn stable_leaves(stable: &Self::Stable) -> usize;

    /// Query over a compacted log.
    fn eval(log: &POLog<Self>, q: &Query) -> Result<Output, CrdtError>;

    /// Query over the full, never-compacted history.
    fn eval_history(history: &[(Timestamp, Op)], q: &Query) -> Result<Output, CrdtError>;

    fn arrive(log: &mut POLog<Self>, t: Timestamp, op: Op) {
        log.timestamped.retain(|t0, op0| !Self::obsolete((t0, op0), (&t, &op)));
        Self::supersede_stable(&mut log.stable, &op);
        let shadowed = log.timestamped.iter().any(|(t0, op0)| Self::obsolete((&t, &op), (t0, op0)));
        if !Self::redundant(&op) && !shadowed {
            log.timestamped.insert(t, op);
        }
    }

    fn stabilize(log: &mut POLog<Self>, t: &Timestamp) {
        if let Some(op) = log.timestamped.remove(t) {
            Self::absorb(&mut log.stable, op);
        }
    }
}

#[derive(Debug, Clone)]
pub struct PureReplica<D: PureCrdt> {
    pub id: ReplicaId,
    /// The only replica allowed to close an auction.
    pub admin: ReplicaId,
    pub log: POLog<D>,
    seen: VersionVector,
}

impl<D: PureCrdt> PureReplica<D> {
    pub fn new(id: ReplicaId) -> Self {
        PureReplica { id, admin: ReplicaId(0), log: POLog::default(), seen: VersionVector::new() }
    }

    pub fn with_admin(mut self, admin: ReplicaId) -> Self {
        self.admin = admin;
        self
    }

    /// Returns the operation unchanged once it passes validation.
    pub fn prepare(&self, op: &Op) -> Result<Op, CrdtError> {
        D::check(self, op)?;
        Ok(op.clone())
    }

    pub fn effect(&mut self, t: Timestamp, op: Op) -> Result<(), CrdtError> {
        let seq = t.seq();
        if seq <= self.seen.get(t.origin) {
            return Err(CrdtError::DuplicateTimestamp(t.to_string()));
        }
        self.seen.set(t.origin, seq);
        D::arrive(&mut self.log, t, op);
        Ok(())
    }

    /// Unknown timestamps are ignored.
    pub fn stable(&mut self, t: &Timestamp) {
        D::stabilize(&mut self.log, t);
    }

    pub fn query(&self, q: &Query) -> Result<Output, CrdtError> {
        D::eval(&self.log, q)
    }

    pub fn state_leaves(&self) -> usize {
        self.log.leaves()
    }
}

/// A PO-Log that never discards anything. Serves as the reference
/// semantics for the compacted replicas.
#[derive(Debug, Clone)]
pub struct UncompactedLog<D: PureCrdt> {
    pub history: Vec<(Timestamp, Op)>,
    _datatype: std::marker::PhantomData<D>,
}

impl<D: PureCrdt> Default for UncompactedLog<D> {
    fn default() -> Self {
        UncompactedLog { history: Vec::new(), _datatype: std::marker::PhantomData }
    }
}

impl<D: PureCrdt> UncompactedLog<D> {
    pub fn effect(&mut self, t: Timestamp, op: Op) {
        self.history.push((t, op));
    }

    pub fn query(&self, q: &Query) -> Result<Output, CrdtError> {
        D::eval_history(&self.history, q)
    }
}

fn set_answer(name: &'static str, members: BTreeSet<Elem>, q: &Query) -> Result<Output, CrdtError> {
    match q {
        Query::Elements => Ok(Output::Set(members)),
        Query::Contains(e) => Ok(Output::Bool(members.contains(e))),
        _ => Err(CrdtError::query(name, q)),
    }
}

fn tally(op: &Op) -> i64 {
    match op {
        Op::Inc => 1,
        Op::Dec => -1,
        _ => 0,
    }
}

fn counter_value(name: &'static str, v: i64, q: &Query) -> Result<Output, CrdtError> {
    match q {
        Query::Value => Ok(Output::Int(v)),
        _ => Err(CrdtError::query(name, q)),
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct GCounter;

impl PureCrdt for GCounter {
    const NAME: &'static str = "gcounter";
    type Stable = i64;

    fn accepts(op: &Op) -> bool {
        matches!(op, Op::Inc)
    }

    fn absorb(stable: &mut i64, op: Op) {
        *stable += tally(&op);
    }

    fn stable_leaves(_: &i64) -> usize {
        1
    }

    fn eval(log: &POLog<Self>, q: &Query) -> Result<Output, CrdtError> {
        let live: i64 = log.timestamped.values().map(tally).sum();
        counter_value(Self::NAME, log.stable + live, q)
    }

    fn eval_history(history: &[(Timestamp, Op)], q: &Query) -> Result<Output, CrdtError> {
        counter_value(Self::NAME, history.iter().map(|(_, op)| tally(op)).sum(), q)
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct PNCounter;

impl PureCrdt for PNCounter {
    const NAME: &'static str = "pncounter";
    type Stable = i64;

    fn accepts(op: &Op) -> bool {
        matches!(op, Op::Inc | Op::Dec)
    }

    fn absorb(stable: &mut i64, op: Op) {
        *stable += tally(&op);
    }

    fn stable_leaves(_: &i64) -> usize {
        1
    }

    fn eval(log: &POLog<Self>, q: &Query) -> Result<Output, CrdtError> {
        let live: i64 = log.timestamped.values().map(tally).sum();
        counter_value(Self::NAME, log.stable + live, q)
    }

    fn eval_history(history: &[(Timestamp, Op)], q: &Query) -> Result<Output, CrdtError> {
        counter_value(Self::NAME, history.iter().map(|(_, op)| tally(op)).sum(), q)
    }
}

fn added(op: &Op) -> Option<&Elem> {
    match op {
        Op::Add(v) => Some(v),
        _ => None,
    }
}

fn touched(op: &Op) -> Option<&Elem> {
    match op {
        Op::Add(v) | Op::Remove(v) => Some(v),
        _ => None,
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct GSet;

impl PureCrdt for GSet {
    const NAME: &'static str = "gset";
    type Stable = BTreeSet<Elem>;

    fn accepts(op: &Op) -> bool {
        matches!(op, Op::Add(_))
    }

    fn obsolete(old: (&Timestamp, &Op), new: (&Timestamp, &Op)) -> bool {
        matches!((added(old.1), added(new.1)), (Some(a), Some(b)) if a == b) && old.0.lt(new.0)
    }

    fn supersede_stable(stable: &mut BTreeSet<Elem>, op: &Op) {
        if let Some(v) = added(op) {
            stable.remove(v);
        }
    }

    fn absorb(stable: &mut BTreeSet<Elem>, op: Op) {
        if let Op::Add(v) = op {
            stable.insert(v);
        }
    }

    fn stable_leaves(stable: &BTreeSet<Elem>) -> usize {
        stable.len()
    }

    fn eval(log: &POLog<Self>, q: &Query) -> Result<Output, CrdtError> {
        let mut members = log.stable.clone();
        members.extend(log.timestamped.values().filter_map(added).cloned());
        set_answer(Self::NAME, members, q)
    }

    fn eval_history(history: &[(Timestamp, Op)], q: &Query) -> Result<Output, CrdtError> {
        let members = history.iter().filter_map(|(_, op)| added(op)).cloned().collect();
        set_answer(Self::NAME, members, q)
    }
}

/// Add-wins observed-remove set.
#[derive(Debug, Clone, Copy, Default)]
pub struct ORSet;

impl PureCrdt for ORSet {
    const NAME: &'static str = "orset";
    type Stable = BTreeSet<Elem>;

    fn accepts(op: &Op) -> bool {
        matches!(op, Op::Add(_) | Op::Remove(_))
    }

    /// An add is obsoleted by a causally later add or remove of the same
    /// value; a remove by anything.
    fn obsolete(old: (&Timestamp, &Op), new: (&Timestamp, &Op)) -> bool {
        match old.1 {
            Op::Add(v) => touched(new.1) == Some(v) && old.0.lt(new.0),
            Op::Remove(_) => true,
            _ => false,
        }
    }

    fn redundant(op: &Op) -> bool {
        matches!(op, Op::Remove(_))
    }

    fn supersede_stable(stable: &mut BTreeSet<Elem>, op: &Op) {
        if let Some(v) = touched(op) {
            stable.remove(v);
        }
    }

    fn absorb(stable: &mut BTreeSet<Elem>, op: Op) {
        if let Op::Add(v) = op {
            stable.insert(v);
        }
    }

    fn stable_leaves(stable: &BTreeSet<Elem>) -> usize {
        stable.len()
    }

    fn eval(log: &POLog<Self>, q: &Query) -> Result<Output, CrdtError> {
        let mut members = log.stable.clone();
        members.extend(log.timestamped.values().filter_map(added).cloned());
        set_answer(Self::NAME, members, q)
    }

    fn eval_history(history: &[(Timestamp, Op)], q: &Query) -> Result<Output, CrdtError> {
        let members = history
            .iter()
            .filter_map(|(t, op)| match op {
                Op::Add(v) => {
                    let removed = history
                        .iter()
                        .any(|(t2, op2)| matches!(op2, Op::Remove(w) if w == v) && t.lt(t2));
                    (!removed).then(|| v.clone())
                }
                _ => None,
            })
            .collect();
        set_answer(Self::NAME, members, q)
    }
}

/// A bid stripped of its timestamp, keeping what the winner tie-break needs.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BidRecord {
    pub bidder: Elem,
    pub amount: u64,
    pub origin: ReplicaId,
    pub seq: u64,
}

impl BidRecord {
    fn new(t: &Timestamp, bidder: &Elem, amount: u64) -> Self {
        BidRecord { bidder: bidder.clone(), amount, origin: t.origin, seq: t.seq() }
    }

    /// Highest amount first, then smaller origin, then earlier bid.
    fn rank(&self) -> (std::cmp::Reverse<u64>, ReplicaId, u64) {
        (std::cmp::Reverse(self.amount), self.origin, self.seq)
    }

    fn render(&self) -> String {
        format!("{}:{}", self.bidder, self.amount)
    }
}

/// Stable core of the auction.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct AuctionCore {
    pub closed: bool,
    pub closing_stable: bool,
    /// Stable bids not yet judged against a closed.
    pub pending: Vec<BidRecord>,
    pub accepted: Vec<BidRecord>,
    pub late: Vec<BidRecord>,
}

fn winner_of<'a>(bids: impl Iterator<Item = &'a BidRecord>) -> Output {
    let best = bids.min_by_key(|b| b.rank());
    Output::Winner(best.map(|b| (b.bidder.clone(), b.amount)))
}

fn late_list<'a>(bids: impl Iterator<Item = &'a BidRecord>) -> Output {
    let mut items: Vec<String> = bids.map(BidRecord::render).collect();
    items.sort();
    Output::List(items)
}

/// Sealed-bid auction closed in two steps: any replica may announce
/// `closing`, after which new bids are late; the administrator then issues
/// `closed`, which fixes the winner among the bids it had seen.
#[derive(Debug, Clone, Copy, Default)]
pub struct Auction;

impl PureCrdt for Auction {
    const NAME: &'static str = "auction";
    type Stable = AuctionCore;

    fn accepts(op: &Op) -> bool {
        matches!(op, Op::Bid { .. } | Op::Closing | Op::Closed)
    }

    fn check(replica: &PureReplica<Self>, op: &Op) -> Result<(), CrdtError> {
        match op {
            Op::Closed if replica.id != replica.admin => Err(CrdtError::NotAdministrator),
            Op::Closed if replica.log.stable.closed => Err(CrdtError::AlreadyClosed),
            op if Self::accepts(op) => Ok(()),
            op => Err(CrdtError::op(Self::NAME, op)),
        }
    }

    fn absorb(stable: &mut AuctionCore, op: Op) {
        if op == Op::Closing {
            stable.closing_stable = true;
        }
    }

    fn stable_leaves(stable: &AuctionCore) -> usize {
        2 + 4 * (stable.pending.len() + stable.accepted.len() + stable.late.len())
    }

    fn arrive(log: &mut POLog<Self>, t: Timestamp, op: Op) {
        let core = &mut log.stable;
        match op {
            Op::Bid { ref bidder, amount } => {
                let after_closing = log
                    .timestamped
                    .iter()
                    .any(|(c, o)| matches!(o, Op::Closing | Op::Closed) && c.lt(&t));
                if core.closed || core.closing_stable || after_closing {
                    core.late.push(BidRecord::new(&t, bidder, amount));
                } else {
                    log.timestamped.insert(t, op);
                }
            }
            Op::Closing => {
                if !core.closed {
                    log.timestamped.insert(t, op);
                }
            }
            Op::Closed => {
                if core.closed {
                    return;
                }
                core.closed = true;
                core.accepted.append(&mut core.pending);
                for (b, o) in std::mem::take(&mut log.timestamped) {
                    if let Op::Bid { bidder, amount } = o {
                        let rec = BidRecord::new(&b, &bidder, amount);
                        if b.lt(&t) {
                            core.accepted.push(rec);
                        } else {
                            core.late.push(rec);
                        }
                    }
                }
            }
            _ => {}
        }
    }

    fn stabilize(log: &mut POLog<Self>, t: &Timestamp) {
        match log.timestamped.remove(t) {
            Some(Op::Bid { bidder, amount }) => {
                log.stable.pending.push(BidRecord::new(t, &bidder, amount));
            }
            Some(op) => Self::absorb(&mut log.stable, op),
            None => {}
        }
    }

    fn eval(log: &POLog<Self>, q: &Query) -> Result<Output, CrdtError> {
        let core = &log.stable;
        match q {
            Query::Winner if !core.closed => Err(CrdtError::AuctionNotClosed),
            Query::Winner => Ok(winner_of(core.accepted.iter())),
            Query::Late => Ok(late_list(core.late.iter())),
            _ => Err(CrdtError::query(Self::NAME, q)),
        }
    }

    /// A bid is late when some `closing` or `closed` happened before it,
    /// or when a `closed` exists that did not see it. Among the remaining
    /// bids the best-ranked one wins.
    fn eval_history(history: &[(Timestamp, Op)], q: &Query) -> Result<Output, CrdtError> {
        let closed = history.iter().find(|(_, op)| *op == Op::Closed).map(|(t, _)| t);
        let mut accepted = Vec::new();
        let mut late = Vec::new();
        for (t, op) in history {
            if let Op::Bid { bidder, amount } = op {
                let after_closing = history
                    .iter()
                    .any(|(c, o)| matches!(o, Op::Closing | Op::Closed) && c.lt(t));
                let unseen = closed.is_some_and(|k| !t.lt(k));
                let rec = BidRecord::new(t, bidder, *amount);
                if after_closing || unseen {
                    late.push(rec);
                } else {
                    accepted.push(rec);
                }
            }
        }
        match q {
            Query::Winner if closed.is_none() => Err(CrdtError::AuctionNotClosed),
            Query::Winner => Ok(winner_of(accepted.iter())),
            Query::Late => Ok(late_list(late.iter())),
            _ => Err(CrdtError::query(Self::NAME, q)),
        }
    }
}
