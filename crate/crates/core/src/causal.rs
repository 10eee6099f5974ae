//! Dots, version vectors, causal contexts and dot stores.
//!
//! A [`CausalState`] pairs a [`DotStore`] with the [`CausalContext`] of every
//! event the replica has seen. Dots that are in the context but absent from
//! the store have been removed, which lets the join drop them without
//! tombstones.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use crate::lattice::{Atom, LatticeError, LatticeValue};
use crate::model::ReplicaId;

/// A unique event identifier.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Dot {
    pub replica: ReplicaId,
    pub counter: u64,
}

impl Dot {
    pub fn new(replica: impl Into<ReplicaId>, counter: u64) -> Self {
        Dot { replica: replica.into(), counter }
    }
}

impl fmt::Display for Dot {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({},{})", self.replica, self.counter)
    }
}

/// Map from replica to counter; absent entries are zero.
#[derive(Debug, Clone, Default, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct VersionVector(BTreeMap<ReplicaId, u64>);

impl VersionVector {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn get(&self, r: ReplicaId) -> u64 {
        self.0.get(&r).copied().unwrap_or(0)
    }

    pub fn set(&mut self, r: ReplicaId, n: u64) {
        if n == 0 {
            self.0.remove(&r);
        } else {
            self.0.insert(r, n);
        }
    }

    /// Bumps the entry for `r` and returns the new value.
    pub fn increment(&mut self, r: ReplicaId) -> u64 {
        let n = self.get(r) + 1;
        self.0.insert(r, n);
        n
    }

    pub fn merge(&mut self, other: &VersionVector) {
        for (&r, &n) in &other.0 {
            let e = self.0.entry(r).or_insert(0);
            *e = (*e).max(n);
        }
    }

    /// Pointwise minimum.
    pub fn meet(&self, other: &VersionVector) -> VersionVector {
        let mut out = VersionVector::new();
        for (&r, &n) in &self.0 {
            out.set(r, n.min(other.get(r)));
        }
        out
    }

    pub fn leq(&self, other: &VersionVector) -> bool {
        self.0.iter().all(|(&r, &n)| n <= other.get(r))
    }

    pub fn lt(&self, other: &VersionVector) -> bool {
        self.leq(other) && self != other
    }

    pub fn concurrent(&self, other: &VersionVector) -> bool {
        !self.leq(other) && !other.leq(self)
    }

    pub fn sum(&self) -> u64 {
        self.0.values().sum()
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (ReplicaId, u64)> + '_ {
        self.0.iter().map(|(&r, &n)| (r, n))
    }
}

impl FromIterator<(ReplicaId, u64)> for VersionVector {
    fn from_iter<I: IntoIterator<Item = (ReplicaId, u64)>>(iter: I) -> Self {
        let mut vv = VersionVector::new();
        for (r, n) in iter {
            vv.set(r, n);
        }
        vv
    }
}

impl fmt::Display for VersionVector {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("[")?;
        for (i, (r, n)) in self.0.iter().enumerate() {
            if i > 0 {
                f.write_str(",")?;
            }
            write!(f, "{r}:{n}")?;
        }
        f.write_str("]")
    }
}

/// A set of dots stored as a version vector plus the dots that are not
/// contiguous with it.
#[derive(Debug, Clone, Default, PartialEq, Eq, Hash)]
pub struct CausalContext {
    compact: VersionVector,
    cloud: BTreeSet<Dot>,
}

impl CausalContext {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_parts(compact: VersionVector, cloud: impl IntoIterator<Item = Dot>) -> Self {
        let mut c = CausalContext { compact, cloud: cloud.into_iter().collect() };
        c.normalize();
        c
    }

    pub fn from_dots(dots: impl IntoIterator<Item = Dot>) -> Self {
        Self::from_parts(VersionVector::new(), dots)
    }

    pub fn compact(&self) -> &VersionVector {
        &self.compact
    }

    pub fn cloud(&self) -> &BTreeSet<Dot> {
        &self.cloud
    }

    pub fn contains(&self, d: &Dot) -> bool {
        d.counter <= self.compact.get(d.replica) || self.cloud.contains(d)
    }

    pub fn insert(&mut self, d: Dot) {
        if !self.contains(&d) {
            self.cloud.insert(d);
            self.normalize();
        }
    }

    /// Highest counter seen from `r`, counting detached dots.
    pub fn max(&self, r: ReplicaId) -> u64 {
        let cloud_max = self
            .cloud
            .range(Dot::new(r, 0)..=Dot::new(r, u64::MAX))
            .next_back()
            .map_or(0, |d| d.counter);
        self.compact.get(r).max(cloud_max)
    }

    /// Mints the next dot of `r` and records it.
    pub fn next_dot(&mut self, r: ReplicaId) -> Dot {
        let d = Dot::new(r, self.compact.get(r) + 1);
        self.insert(d);
        d
    }

    pub fn join(&self, other: &CausalContext) -> CausalContext {
        let mut out = self.clone();
        out.join_assign(other);
        out
    }

    pub fn join_assign(&mut self, other: &CausalContext) {
        self.compact.merge(&other.compact);
        self.cloud.extend(other.cloud.iter().copied());
        self.normalize();
    }

    fn normalize(&mut self) {
        let mut kept = BTreeSet::new();
        // ascending per replica, so a run of contiguous dots folds in one pass
        for d in std::mem::take(&mut self.cloud) {
            let c = self.compact.get(d.replica);
            if d.counter <= c {
                continue;
            }
            if d.counter == c + 1 {
                self.compact.set(d.replica, d.counter);
            } else {
                kept.insert(d);
            }
        }
        self.cloud = kept;
    }

    /// Every dot in the context, expanded.
    pub fn dots(&self) -> impl Iterator<Item = Dot> + '_ {
        self.compact
            .iter()
            .flat_map(|(r, n)| (1..=n).map(move |k| Dot::new(r, k)))
            .chain(self.cloud.iter().copied())
    }

    pub fn is_empty(&self) -> bool {
        self.compact.is_empty() && self.cloud.is_empty()
    }

    pub fn leaves(&self) -> usize {
        self.compact.len() + self.cloud.len()
    }
}

impl fmt::Display for CausalContext {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.compact)?;
        if !self.cloud.is_empty() {
            f.write_str("+{")?;
            for (i, d) in self.cloud.iter().enumerate() {
                if i > 0 {
                    f.write_str(",")?;
                }
                write!(f, "{d}")?;
            }
            f.write_str("}")?;
        }
        Ok(())
    }
}

/// The data half of a causal CRDT.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum DotStore {
    Set(BTreeSet<Dot>),
    Fun(BTreeMap<Dot, LatticeValue>),
    Map(BTreeMap<Atom, DotStore>),
}

impl DotStore {
    pub fn empty_set() -> Self {
        DotStore::Set(BTreeSet::new())
    }

    pub fn empty_fun() -> Self {
        DotStore::Fun(BTreeMap::new())
    }

    pub fn empty_map() -> Self {
        DotStore::Map(BTreeMap::new())
    }

    pub fn is_bottom(&self) -> bool {
        match self {
            DotStore::Set(s) => s.is_empty(),
            DotStore::Fun(m) => m.is_empty(),
            DotStore::Map(m) => m.is_empty(),
        }
    }

    pub fn empty_like(&self) -> DotStore {
        match self {
            DotStore::Set(_) => DotStore::empty_set(),
            DotStore::Fun(_) => DotStore::empty_fun(),
            DotStore::Map(_) => DotStore::empty_map(),
        }
    }

    fn kind(&self) -> &'static str {
        match self {
            DotStore::Set(_) => "dot-set",
            DotStore::Fun(_) => "dot-fun",
            DotStore::Map(_) => "dot-map",
        }
    }

    fn mismatch(&self, other: &DotStore) -> LatticeError {
        LatticeError::ShapeMismatch(format!("{} vs {}", self.kind(), other.kind()))
    }

    /// Every dot mentioned anywhere in the store.
    pub fn dots(&self) -> BTreeSet<Dot> {
        let mut out = BTreeSet::new();
        self.collect_dots(&mut out);
        out
    }

    fn collect_dots(&self, out: &mut BTreeSet<Dot>) {
        match self {
            DotStore::Set(s) => out.extend(s.iter().copied()),
            DotStore::Fun(m) => out.extend(m.keys().copied()),
            DotStore::Map(m) => m.values().for_each(|child| child.collect_dots(out)),
        }
    }

    /// Removes child entries and values that are bottom.
    fn prune(&mut self) {
        match self {
            DotStore::Set(_) => {}
            DotStore::Fun(m) => m.retain(|_, v| !v.is_bottom()),
            DotStore::Map(m) => {
                m.values_mut().for_each(DotStore::prune);
                m.retain(|_, child| !child.is_bottom());
            }
        }
    }

    fn join(
        &self,
        c: &CausalContext,
        other: &DotStore,
        c2: &CausalContext,
    ) -> Result<DotStore, LatticeError> {
        match (self, other) {
            (DotStore::Set(s), DotStore::Set(s2)) => {
                let out = s
                    .iter()
                    .filter(|d| s2.contains(d) || !c2.contains(d))
                    .chain(s2.iter().filter(|d| !c.contains(d)))
                    .copied()
                    .collect();
                Ok(DotStore::Set(out))
            }
            (DotStore::Fun(m), DotStore::Fun(m2)) => {
                let mut out = BTreeMap::new();
                for (d, v) in m {
                    match m2.get(d) {
                        Some(v2) => {
                            out.insert(*d, v.join(v2)?);
                        }
                        None if !c2.contains(d) => {
                            out.insert(*d, v.clone());
                        }
                        None => {}
                    }
                }
                for (d, v) in m2 {
                    if !m.contains_key(d) && !c.contains(d) {
                        out.insert(*d, v.clone());
                    }
                }
                Ok(DotStore::Fun(out))
            }
            (DotStore::Map(m), DotStore::Map(m2)) => {
                let mut out = BTreeMap::new();
                let keys: BTreeSet<&Atom> = m.keys().chain(m2.keys()).collect();
                for k in keys {
                    let child = match (m.get(k), m2.get(k)) {
                        (Some(a), Some(b)) => a.join(c, b, c2)?,
                        (Some(a), None) => a.join(c, &a.empty_like(), c2)?,
                        (None, Some(b)) => b.empty_like().join(c, b, c2)?,
                        (None, None) => unreachable!(),
                    };
                    if !child.is_bottom() {
                        out.insert(k.clone(), child);
                    }
                }
                Ok(DotStore::Map(out))
            }
            _ => Err(self.mismatch(other)),
        }
    }

    /// Single-dot fragments whose union (with value joins) is this store.
    fn fragments(&self) -> Result<Vec<(Dot, DotStore)>, LatticeError> {
        Ok(match self {
            DotStore::Set(s) => s
                .iter()
                .map(|d| (*d, DotStore::Set(BTreeSet::from([*d]))))
                .collect(),
            DotStore::Fun(m) => {
                let mut out = Vec::new();
                for (d, v) in m {
                    for irr in v.decompose()?.irreducibles {
                        out.push((*d, DotStore::Fun(BTreeMap::from([(*d, irr)]))));
                    }
                }
                out
            }
            DotStore::Map(m) => {
                let mut out = Vec::new();
                for (k, child) in m {
                    for (d, frag) in child.fragments()? {
                        out.push((d, DotStore::Map(BTreeMap::from([(k.clone(), frag)]))));
                    }
                }
                out
            }
        })
    }

    /// Whether a single-dot fragment is already present in `self`.
    fn holds_fragment(&self, frag: &DotStore) -> Result<bool, LatticeError> {
        match (frag, self) {
            (DotStore::Set(f), DotStore::Set(s)) => Ok(f.iter().all(|d| s.contains(d))),
            (DotStore::Fun(f), DotStore::Fun(m)) => {
                for (d, v) in f {
                    match m.get(d) {
                        Some(mine) if v.leq(mine)? => {}
                        _ => return Ok(false),
                    }
                }
                Ok(true)
            }
            (DotStore::Map(f), DotStore::Map(m)) => {
                for (k, child) in f {
                    match m.get(k) {
                        Some(mine) if mine.holds_fragment(child)? => {}
                        _ => return Ok(false),
                    }
                }
                Ok(true)
            }
            _ => Err(frag.mismatch(self)),
        }
    }

    /// Union of stores with disjoint or value-joinable dots.
    fn absorb(&mut self, frag: &DotStore) -> Result<(), LatticeError> {
        match (self, frag) {
            (DotStore::Set(s), DotStore::Set(f)) => s.extend(f.iter().copied()),
            (DotStore::Fun(m), DotStore::Fun(f)) => {
                for (d, v) in f {
                    match m.get_mut(d) {
                        Some(mine) => *mine = mine.join(v)?,
                        None => {
                            m.insert(*d, v.clone());
                        }
                    }
                }
            }
            (DotStore::Map(m), DotStore::Map(f)) => {
                for (k, child) in f {
                    match m.get_mut(k) {
                        Some(mine) => mine.absorb(child)?,
                        None => {
                            m.insert(k.clone(), child.clone());
                        }
                    }
                }
            }
            (me, _) => return Err(me.mismatch(frag)),
        }
        Ok(())
    }

    pub fn leaves(&self) -> usize {
        match self {
            DotStore::Set(s) => s.len(),
            DotStore::Fun(m) => m.values().map(|v| 1 + v.leaves()).sum(),
            DotStore::Map(m) => m.values().map(|child| 1 + child.leaves()).sum(),
        }
    }
}

impl fmt::Display for DotStore {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            DotStore::Set(s) => {
                f.write_str("{")?;
                for (i, d) in s.iter().enumerate() {
                    if i > 0 {
                        f.write_str(",")?;
                    }
                    write!(f, "{d}")?;
                }
                f.write_str("}")
            }
            DotStore::Fun(m) => {
                f.write_str("{")?;
                for (i, (d, v)) in m.iter().enumerate() {
                    if i > 0 {
                        f.write_str(", ")?;
                    }
                    write!(f, "{d}: {v}")?;
                }
                f.write_str("}")
            }
            DotStore::Map(m) => {
                f.write_str("{")?;
                for (i, (k, child)) in m.iter().enumerate() {
                    if i > 0 {
                        f.write_str(", ")?;
                    }
                    write!(f, "{k}: {child}")?;
                }
                f.write_str("}")
            }
        }
    }
}

/// A dot store paired with the causal context of its replica.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct CausalState {
    pub store: DotStore,
    pub context: CausalContext,
}

impl CausalState {
    pub fn new(store: DotStore, context: CausalContext) -> Self {
        let mut store = store;
        store.prune();
        CausalState { store, context }
    }

    pub fn bottom_of(store_kind: &DotStore) -> Self {
        CausalState { store: store_kind.empty_like(), context: CausalContext::new() }
    }

    pub fn is_bottom(&self) -> bool {
        self.store.is_bottom() && self.context.is_empty()
    }

    /// Every dot in the store is covered by the context.
    pub fn is_well_formed(&self) -> bool {
        self.store.dots().iter().all(|d| self.context.contains(d))
    }

    pub fn join(&self, other: &CausalState) -> Result<CausalState, LatticeError> {
        let store = self.store.join(&self.context, &other.store, &other.context)?;
        Ok(CausalState { store, context: self.context.join(&other.context) })
    }

    /// `self ⊑ other`, i.e. joining `self` into `other` changes nothing.
    pub fn leq(&self, other: &CausalState) -> Result<bool, LatticeError> {
        Ok(self.join(other)? == *other)
    }

    /// Join-irreducible parts: one per stored dot fragment, carrying just
    /// that dot as context, and one empty-store state per dot that is known
    /// but no longer stored.
    pub fn decompose(&self) -> Result<Vec<CausalState>, LatticeError> {
        let stored = self.store.dots();
        let mut out: Vec<CausalState> = self
            .store
            .fragments()?
            .into_iter()
            .map(|(d, frag)| CausalState {
                store: frag,
                context: CausalContext::from_dots([d]),
            })
            .collect();
        for d in self.context.dots() {
            if !stored.contains(&d) {
                out.push(CausalState {
                    store: self.store.empty_like(),
                    context: CausalContext::from_dots([d]),
                });
            }
        }
        Ok(out)
    }

    /// The irreducible parts of `self` not already below `other`, joined.
    pub fn difference(&self, other: &CausalState) -> Result<CausalState, LatticeError> {
        if std::mem::discriminant(&self.store) != std::mem::discriminant(&other.store) {
            return Err(self.store.mismatch(&other.store));
        }
        let theirs = other.store.dots();
        let stored = self.store.dots();
        let mut store = self.store.empty_like();
        let mut dots = Vec::new();
        for (d, frag) in self.store.fragments()? {
            let below = other.context.contains(&d)
                && (!theirs.contains(&d) || other.store.holds_fragment(&frag)?);
            if !below {
                store.absorb(&frag)?;
                dots.push(d);
            }
        }
        for d in self.context.dots() {
            if !stored.contains(&d) && !(other.context.contains(&d) && !theirs.contains(&d)) {
                dots.push(d);
            }
        }
        Ok(CausalState { store, context: CausalContext::from_dots(dots) })
    }

    pub fn leaves(&self) -> usize {
        self.store.leaves() + self.context.leaves()
    }
}

impl fmt::Display for CausalState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({} | {})", self.store, self.context)
    }
}
