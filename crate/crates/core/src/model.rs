//! Vocabulary shared by every replication approach: replica ids, the
//! uniform operation/query language, query results and the datatype ×
//! approach support matrix.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use thiserror::Error;

use crate::lattice::LatticeError;

/// Identifier of a replica (a simulator node index).
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub struct ReplicaId(pub u32);

impl fmt::Display for ReplicaId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

impl From<u32> for ReplicaId {
    fn from(v: u32) -> Self {
        ReplicaId(v)
    }
}

/// Set elements, register values, advancer keys and bidder names.
pub type Elem = String;

/// An update operation, as invoked by a client.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Op {
    Inc,
    Dec,
    Add(Elem),
    Remove(Elem),
    Write(Elem),
    Advance(Elem),
    Bid { bidder: Elem, amount: u64 },
    Closing,
    Closed,
}

impl Op {
    /// Scalar leaves of the operation as it travels on the wire.
    pub fn leaves(&self) -> usize {
        match self {
            Op::Inc | Op::Dec | Op::Closing | Op::Closed => 1,
            Op::Add(_) | Op::Remove(_) | Op::Write(_) | Op::Advance(_) => 1,
            Op::Bid { .. } => 2,
        }
    }
}

impl fmt::Display for Op {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Op::Inc => f.write_str("inc"),
            Op::Dec => f.write_str("dec"),
            Op::Add(e) => write!(f, "add {e}"),
            Op::Remove(e) => write!(f, "remove {e}"),
            Op::Write(e) => write!(f, "write {e}"),
            Op::Advance(e) => write!(f, "advance {e}"),
            Op::Bid { bidder, amount } => write!(f, "bid {bidder} {amount}"),
            Op::Closing => f.write_str("closing"),
            Op::Closed => f.write_str("closed"),
        }
    }
}

impl FromStr for Op {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let words: Vec<&str> = s.split_whitespace().collect();
        match words.as_slice() {
            ["inc"] => Ok(Op::Inc),
            ["dec"] => Ok(Op::Dec),
            ["add", e] => Ok(Op::Add((*e).to_owned())),
            ["remove", e] => Ok(Op::Remove((*e).to_owned())),
            ["write", e] => Ok(Op::Write((*e).to_owned())),
            ["advance", e] => Ok(Op::Advance((*e).to_owned())),
            ["bid", who, amount] => {
                let amount = amount
                    .parse()
                    .map_err(|_| format!("bad bid amount `{amount}`"))?;
                Ok(Op::Bid { bidder: (*who).to_owned(), amount })
            }
            ["closing"] => Ok(Op::Closing),
            ["closed"] => Ok(Op::Closed),
            _ => Err(format!("unknown operation `{s}`")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Query {
    Value,
    Elements,
    Contains(Elem),
    Read,
    Ahead,
    /// Every key with its value.
    Entries,
    Winner,
    Late,
}

impl fmt::Display for Query {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Query::Value => f.write_str("value"),
            Query::Elements => f.write_str("elements"),
            Query::Contains(e) => write!(f, "contains {e}"),
            Query::Read => f.write_str("read"),
            Query::Ahead => f.write_str("ahead"),
            Query::Entries => f.write_str("entries"),
            Query::Winner => f.write_str("winner"),
            Query::Late => f.write_str("late"),
        }
    }
}

impl FromStr for Query {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let words: Vec<&str> = s.split_whitespace().collect();
        match words.as_slice() {
            ["value"] => Ok(Query::Value),
            ["elements"] => Ok(Query::Elements),
            ["contains", e] => Ok(Query::Contains((*e).to_owned())),
            ["read"] => Ok(Query::Read),
            ["ahead"] => Ok(Query::Ahead),
            ["entries"] => Ok(Query::Entries),
            ["winner"] => Ok(Query::Winner),
            ["late"] => Ok(Query::Late),
            _ => Err(format!("unknown query `{s}`")),
        }
    }
}

/// Result of a query. Renders canonically (sorted, no whitespace variance).
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Output {
    Int(i64),
    Bool(bool),
    Set(BTreeSet<Elem>),
    Map(BTreeMap<Elem, u64>),
    /// Auction winner; `None` when the auction closed without valid bids.
    Winner(Option<(Elem, u64)>),
    /// Sorted list of rendered items (may repeat).
    List(Vec<String>),
}

impl Output {
    pub fn set<I, S>(items: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<Elem>,
    {
        Output::Set(items.into_iter().map(Into::into).collect())
    }
}

impl fmt::Display for Output {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Output::Int(v) => write!(f, "{v}"),
            Output::Bool(b) => write!(f, "{b}"),
            Output::Set(s) => {
                f.write_str("{")?;
                for (i, e) in s.iter().enumerate() {
                    if i > 0 {
                        f.write_str(",")?;
                    }
                    f.write_str(e)?;
                }
                f.write_str("}")
            }
            Output::Map(m) => {
                f.write_str("{")?;
                for (i, (k, v)) in m.iter().enumerate() {
                    if i > 0 {
                        f.write_str(",")?;
                    }
                    write!(f, "{k}:{v}")?;
                }
                f.write_str("}")
            }
            Output::Winner(None) => f.write_str("none"),
            Output::Winner(Some((who, amount))) => write!(f, "{who}:{amount}"),
            Output::List(items) => write!(f, "[{}]", items.join(",")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum CrdtError {
    #[error("operation `{op}` is not supported by {datatype}")]
    UnsupportedOp { datatype: &'static str, op: String },
    #[error("query `{query}` is not supported by {datatype}")]
    UnsupportedQuery { datatype: &'static str, query: String },
    #[error("auction-not-closed")]
    AuctionNotClosed,
    #[error("only the administrator replica may close the auction")]
    NotAdministrator,
    #[error("auction already closed")]
    AlreadyClosed,
    #[error("duplicate timestamp {0} delivered")]
    DuplicateTimestamp(String),
    #[error(transparent)]
    Lattice(#[from] LatticeError),
}

impl CrdtError {
    pub(crate) fn op(datatype: &'static str, op: &Op) -> Self {
        CrdtError::UnsupportedOp { datatype, op: op.to_string() }
    }

    pub(crate) fn query(datatype: &'static str, q: &Query) -> Self {
        CrdtError::UnsupportedQuery { datatype, query: q.to_string() }
    }
}

/// Renders a query result the way reports and `expect` lines spell it.
pub fn render_result(r: &Result<Output, CrdtError>) -> String {
    match r {
        Ok(o) => o.to_string(),
        Err(e) => format!("error:{e}"),
    }
}

/// Size of a state or message, in scalar leaves (integers, dots, element
/// ids) of its canonical rendering.
pub trait Measure {
    fn leaves(&self) -> usize;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Approach {
    Op,
    Pure,
    State,
    DeltaNaive,
    DeltaImproved,
}

impl Approach {
    pub const ALL: [Approach; 5] = [
        Approach::Op,
        Approach::Pure,
        Approach::State,
        Approach::DeltaNaive,
        Approach::DeltaImproved,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Approach::Op => "op",
            Approach::Pure => "pure",
            Approach::State => "state",
            Approach::DeltaNaive => "delta-naive",
            Approach::DeltaImproved => "delta-improved",
        }
    }

    /// Op and pure approaches run over reliable causal broadcast.
    pub fn is_broadcast(self) -> bool {
        matches!(self, Approach::Op | Approach::Pure)
    }
}

impl fmt::Display for Approach {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Approach {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Approach::ALL
            .into_iter()
            .find(|a| a.name() == s)
            .ok_or_else(|| format!("unknown approach `{s}`"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum DataType {
    GCounter,
    PNCounter,
    GSet,
    ORSet,
    /// The set-of-pairs observed-remove set (op-based only).
    ORSetNaive,
    MVReg,
    Advancer,
    Auction,
}

impl DataType {
    pub const ALL: [DataType; 8] = [
        DataType::GCounter,
        DataType::PNCounter,
        DataType::GSet,
        DataType::ORSet,
        DataType::ORSetNaive,
        DataType::MVReg,
        DataType::Advancer,
        DataType::Auction,
    ];

    pub fn name(self) -> &'static str {
        match self {
            DataType::GCounter => "gcounter",
            DataType::PNCounter => "pncounter",
            DataType::GSet => "gset",
            DataType::ORSet => "orset",
            DataType::ORSetNaive => "orset-naive",
            DataType::MVReg => "mvreg",
            DataType::Advancer => "advancer",
            DataType::Auction => "auction",
        }
    }

    pub fn approaches(self) -> &'static [Approach] {
        use Approach::*;
        match self {
            DataType::GCounter | DataType::PNCounter | DataType::GSet | DataType::ORSet => {
                &[Op, Pure, State, DeltaNaive, DeltaImproved]
            }
            DataType::ORSetNaive | DataType::MVReg => &[Op],
            DataType::Advancer => &[State, DeltaNaive, DeltaImproved],
            DataType::Auction => &[Pure],
        }
    }

    pub fn supports(self, approach: Approach) -> bool {
        self.approaches().contains(&approach)
    }

    /// Whether `op` belongs to this datatype's update interface.
    pub fn accepts(self, op: &Op) -> bool {
        matches!(
            (self, op),
            (DataType::GCounter, Op::Inc)
                | (DataType::PNCounter, Op::Inc | Op::Dec)
                | (DataType::GSet, Op::Add(_))
                | (DataType::ORSet | DataType::ORSetNaive, Op::Add(_) | Op::Remove(_))
                | (DataType::MVReg, Op::Write(_))
                | (DataType::Advancer, Op::Advance(_))
                | (DataType::Auction, Op::Bid { .. } | Op::Closing | Op::Closed)
        )
    }

    pub fn answers(self, q: &Query) -> bool {
        matches!(
            (self, q),
            (DataType::GCounter | DataType::PNCounter, Query::Value)
                | (
                    DataType::GSet | DataType::ORSet | DataType::ORSetNaive,
                    Query::Elements | Query::Contains(_)
                )
                | (DataType::MVReg, Query::Read)
                | (DataType::Advancer, Query::Ahead | Query::Entries)
                | (DataType::Auction, Query::Winner | Query::Late)
        )
    }

    /// Queries whose results define the observable state, used for
    /// convergence checks and cross-approach comparison.
    pub fn observation_queries(self) -> Vec<Query> {
        match self {
            DataType::GCounter | DataType::PNCounter => vec![Query::Value],
            DataType::GSet | DataType::ORSet | DataType::ORSetNaive => vec![Query::Elements],
            DataType::MVReg => vec![Query::Read],
            DataType::Advancer => vec![Query::Entries, Query::Ahead],
            DataType::Auction => vec![Query::Winner, Query::Late],
        }
    }

    pub fn operations(self) -> &'static str {
        match self {
            DataType::GCounter => "inc",
            DataType::PNCounter => "inc, dec",
            DataType::GSet => "add <e>",
            DataType::ORSet | DataType::ORSetNaive => "add <e>, remove <e>",
            DataType::MVReg => "write <v>",
            DataType::Advancer => "advance <k>",
            DataType::Auction => "bid <name> <amount>, closing, closed",
        }
    }
}

impl fmt::Display for DataType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for DataType {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        DataType::ALL
            .into_iter()
            .find(|d| d.name() == s)
            .ok_or_else(|| format!("unknown datatype `{s}`"))
    }
}
