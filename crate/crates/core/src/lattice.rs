//! Join-semilattices.
//!
//! Two layers live here:
//!
//! * [`LatticeValue`] / [`Shape`]: a closed grammar of lattice constructions
//!   (max-naturals, booleans, signed integers, powersets, products,
//!   lexicographic products and maps) with checked `leq`/`join`, bottoms,
//!   irredundant join decompositions and the state difference operator.
//! * [`Lattice`] / [`Decompose`]: the typed traits implemented by the concrete
//!   replica states in [`crate::statebased`] and [`crate::causal`].
//!
//! Maps never hold bottom-valued entries, so structural equality coincides
//! with lattice equality.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum LatticeError {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("unsupported shape: {0}")]
    UnsupportedShape(String),
}

/// Keys of maps and members of powersets.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Atom {
    Num(u64),
    Text(String),
}

impl fmt::Display for Atom {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Atom::Num(n) => write!(f, "{n}"),
            Atom::Text(s) => f.write_str(s),
        }
    }
}

impl From<&str> for Atom {
    fn from(s: &str) -> Self {
        Atom::Text(s.to_owned())
    }
}

impl From<String> for Atom {
    fn from(s: String) -> Self {
        Atom::Text(s)
    }
}

impl From<u64> for Atom {
    fn from(n: u64) -> Self {
        Atom::Num(n)
    }
}

/// Descriptor of a lattice construction.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Shape {
    /// Naturals under `<=`, join is `max`, bottom is 0.
    Nat,
    /// `false < true`, join is `||`.
    Bool,
    /// Signed integers under `<=`. A chain with no bottom.
    Int,
    /// Finite sets of atoms under inclusion.
    Set,
    Product(Box<Shape>, Box<Shape>),
    Lex(Box<Shape>, Box<Shape>),
    /// Finite maps from atoms to a lattice with bottom; absent keys are bottom.
    Map(Box<Shape>),
}

impl Shape {
    pub fn product(a: Shape, b: Shape) -> Shape {
        Shape::Product(Box::new(a), Box::new(b))
    }

    pub fn lex(a: Shape, b: Shape) -> Shape {
        Shape::Lex(Box::new(a), Box::new(b))
    }

    pub fn map(v: Shape) -> Shape {
        Shape::Map(Box::new(v))
    }

    pub fn is_chain(&self) -> bool {
        match self {
            Shape::Nat | Shape::Bool | Shape::Int => true,
            Shape::Lex(a, b) => a.is_chain() && b.is_chain(),
            _ => false,
        }
    }

    pub fn has_bottom(&self) -> bool {
        match self {
            Shape::Nat | Shape::Bool | Shape::Set | Shape::Map(_) => true,
            Shape::Int => false,
            Shape::Product(a, b) | Shape::Lex(a, b) => a.has_bottom() && b.has_bottom(),
        }
    }

    /// Checks the side conditions of the constructions: a lexicographic
    /// product needs a right component with bottom or a chain on the left,
    /// and map values need a bottom to stand for absent keys.
    pub fn validate(&self) -> Result<(), LatticeError> {
        match self {
            Shape::Nat | Shape::Bool | Shape::Int | Shape::Set => Ok(()),
            Shape::Product(a, b) => {
                a.validate()?;
                b.validate()
            }
            Shape::Lex(a, b) => {
                a.validate()?;
                b.validate()?;
                if b.has_bottom() || a.is_chain() {
                    Ok(())
                } else {
                    Err(LatticeError::UnsupportedShape(format!(
                        "lexicographic product {self} needs a bottom on the right or a chain on the left"
                    )))
                }
            }
            Shape::Map(v) => {
                v.validate()?;
                if v.has_bottom() {
                    Ok(())
                } else {
                    Err(LatticeError::UnsupportedShape(format!(
                        "map values of {self} have no bottom"
                    )))
                }
            }
        }
    }

    /// Whether `value` is an element of this construction.
    pub fn admits(&self, value: &LatticeValue) -> bool {
        match (self, value) {
            (Shape::Nat, LatticeValue::Nat(_))
            | (Shape::Bool, LatticeValue::Bool(_))
            | (Shape::Int, LatticeValue::Int(_))
            | (Shape::Set, LatticeValue::Set(_)) => true,
            (Shape::Product(sa, sb), LatticeValue::Product(a, b))
            | (Shape::Lex(sa, sb), LatticeValue::Lex(a, b)) => sa.admits(a) && sb.admits(b),
            (Shape::Map(sv), LatticeValue::Map(m)) => {
                m.values().all(|v| sv.admits(v) && !v.is_bottom())
            }
            _ => false,
        }
    }
}

impl fmt::Display for Shape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Shape::Nat => f.write_str("nat"),
            Shape::Bool => f.write_str("bool"),
            Shape::Int => f.write_str("int"),
            Shape::Set => f.write_str("set"),
            Shape::Product(a, b) => write!(f, "({a} x {b})"),
            Shape::Lex(a, b) => write!(f, "({a} lex {b})"),
            Shape::Map(v) => write!(f, "map<{v}>"),
        }
    }
}

/// Bottom element of a construction.
pub fn bottom(shape: &Shape) -> Result<LatticeValue, LatticeError> {
    shape.validate()?;
    fn go(shape: &Shape) -> Result<LatticeValue, LatticeError> {
        Ok(match shape {
            Shape::Nat => LatticeValue::Nat(0),
            Shape::Bool => LatticeValue::Bool(false),
            Shape::Int => {
                return Err(LatticeError::UnsupportedShape(
                    "signed integers have no bottom".into(),
                ))
            }
            Shape::Set => LatticeValue::Set(BTreeSet::new()),
            Shape::Map(_) => LatticeValue::Map(BTreeMap::new()),
            Shape::Product(a, b) => LatticeValue::product(go(a)?, go(b)?),
            Shape::Lex(a, b) => LatticeValue::lex(go(a)?, go(b)?),
        })
    }
    go(shape)
}

/// An element of one of the lattice constructions of [`Shape`].
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum LatticeValue {
    Nat(u64),
    Bool(bool),
    Int(i64),
    Set(BTreeSet<Atom>),
    Product(Box<LatticeValue>, Box<LatticeValue>),
    Lex(Box<LatticeValue>, Box<LatticeValue>),
    Map(BTreeMap<Atom, LatticeValue>),
}

impl LatticeValue {
    pub fn product(a: LatticeValue, b: LatticeValue) -> Self {
        LatticeValue::Product(Box::new(a), Box::new(b))
    }

    pub fn lex(a: LatticeValue, b: LatticeValue) -> Self {
        LatticeValue::Lex(Box::new(a), Box::new(b))
    }

    pub fn set<I, A>(items: I) -> Self
    where
        I: IntoIterator<Item = A>,
        A: Into<Atom>,
    {
        LatticeValue::Set(items.into_iter().map(Into::into).collect())
    }

    /// Builds a map, dropping bottom-valued entries.
    pub fn map<I, A>(entries: I) -> Self
    where
        I: IntoIterator<Item = (A, LatticeValue)>,
        A: Into<Atom>,
    {
        LatticeValue::Map(
            entries
                .into_iter()
                .filter(|(_, v)| !v.is_bottom())
                .map(|(k, v)| (k.into(), v))
                .collect(),
        )
    }

    fn kind(&self) -> &'static str {
        match self {
            LatticeValue::Nat(_) => "nat",
            LatticeValue::Bool(_) => "bool",
            LatticeValue::Int(_) => "int",
            LatticeValue::Set(_) => "set",
            LatticeValue::Product(..) => "product",
            LatticeValue::Lex(..) => "lex",
            LatticeValue::Map(_) => "map",
        }
    }

    fn mismatch(&self, other: &LatticeValue) -> LatticeError {
        LatticeError::ShapeMismatch(format!("{} vs {}", self.kind(), other.kind()))
    }

    pub fn is_bottom(&self) -> bool {
        match self {
            LatticeValue::Nat(n) => *n == 0,
            LatticeValue::Bool(b) => !*b,
            LatticeValue::Int(_) => false,
            LatticeValue::Set(s) => s.is_empty(),
            LatticeValue::Map(m) => m.is_empty(),
            LatticeValue::Product(a, b) | LatticeValue::Lex(a, b) => a.is_bottom() && b.is_bottom(),
        }
    }

    /// Bottom of the construction this value belongs to.
    pub fn bottom_like(&self) -> Result<LatticeValue, LatticeError> {
        Ok(match self {
            LatticeValue::Nat(_) => LatticeValue::Nat(0),
            LatticeValue::Bool(_) => LatticeValue::Bool(false),
            LatticeValue::Int(_) => {
                return Err(LatticeError::UnsupportedShape(
                    "signed integers have no bottom".into(),
                ))
            }
            LatticeValue::Set(_) => LatticeValue::Set(BTreeSet::new()),
            LatticeValue::Map(_) => LatticeValue::Map(BTreeMap::new()),
            LatticeValue::Product(a, b) => LatticeValue::product(a.bottom_like()?, b.bottom_like()?),
            LatticeValue::Lex(a, b) => LatticeValue::lex(a.bottom_like()?, b.bottom_like()?),
        })
    }

    pub fn leq(&self, other: &LatticeValue) -> Result<bool, LatticeError> {
        use LatticeValue::*;
        Ok(match (self, other) {
            (Nat(a), Nat(b)) => a <= b,
            (Bool(a), Bool(b)) => !*a || *b,
            (Int(a), Int(b)) => a <= b,
            (Set(a), Set(b)) => a.is_subset(b),
            (Product(a1, b1), Product(a2, b2)) => {
                // evaluate both sides so mismatches anywhere are reported
                let left = a1.leq(a2)?;
                let right = b1.leq(b2)?;
                left && right
            }
            (Lex(a1, b1), Lex(a2, b2)) => {
                let right = b1.leq(b2)?;
                if a1 == a2 {
                    right
                } else {
                    a1.leq(a2)?
                }
            }
            (Map(m1), Map(m2)) => {
                let mut all = true;
                for (k, v1) in m1 {
                    match m2.get(k) {
                        Some(v2) => all &= v1.leq(v2)?,
                        // canonical maps hold no bottoms, so v1 is not below bottom
                        None => all = false,
                    }
                }
                all
            }
            _ => return Err(self.mismatch(other)),
        })
    }

    /// Strictly below.
    pub fn lt(&self, other: &LatticeValue) -> Result<bool, LatticeError> {
        Ok(self != other && self.leq(other)?)
    }

    pub fn concurrent(&self, other: &LatticeValue) -> Result<bool, LatticeError> {
        Ok(!self.leq(other)? && !other.leq(self)?)
    }

    pub fn join(&self, other: &LatticeValue) -> Result<LatticeValue, LatticeError> {
        use LatticeValue::*;
        Ok(match (self, other) {
            (Nat(a), Nat(b)) => Nat(*a.max(b)),
            (Bool(a), Bool(b)) => Bool(*a || *b),
            (Int(a), Int(b)) => Int(*a.max(b)),
            (Set(a), Set(b)) => Set(a.union(b).cloned().collect()),
            (Product(a1, b1), Product(a2, b2)) => LatticeValue::product(a1.join(a2)?, b1.join(b2)?),
            (Lex(a1, b1), Lex(a2, b2)) => {
                if a1 == a2 {
                    LatticeValue::lex((**a1).clone(), b1.join(b2)?)
                } else if a2.leq(a1)? {
                    b1.join(b2)?; // shape check on the discarded side
                    self.clone()
                } else if a1.leq(a2)? {
                    b1.join(b2)?;
                    other.clone()
                } else {
                    b1.join(b2)?;
                    LatticeValue::lex(a1.join(a2)?, b1.bottom_like()?)
                }
            }
            (Map(m1), Map(m2)) => {
                let mut out = m1.clone();
                for (k, v2) in m2 {
                    let joined = match out.get(k) {
                        Some(v1) => v1.join(v2)?,
                        None => v2.clone(),
                    };
                    out.insert(k.clone(), joined);
                }
                Map(out)
            }
            _ => return Err(self.mismatch(other)),
        })
    }

    /// Join of a finite family; `None` for the empty family.
    pub fn join_all<'a, I>(values: I) -> Result<Option<LatticeValue>, LatticeError>
    where
        I: IntoIterator<Item = &'a LatticeValue>,
    {
        let mut acc: Option<LatticeValue> = None;
        for v in values {
            acc = Some(match acc {
                None => v.clone(),
                Some(a) => a.join(v)?,
            });
        }
        Ok(acc)
    }

    /// The unique irredundant join decomposition of this value.
    ///
    /// Chains decompose to themselves (bottom to nothing), powersets to
    /// singletons, maps to single-entry maps over the decomposition of each
    /// value, and products to irreducibles of one side paired with bottom on
    /// the other. Lexicographic products and bottomless integers are
    /// rejected.
    pub fn decompose(&self) -> Result<Decomposition, LatticeError> {
        Ok(Decomposition {
            target: self.clone(),
            irreducibles: self.irreducibles()?,
        })
    }

    fn irreducibles(&self) -> Result<Vec<LatticeValue>, LatticeError> {
        use LatticeValue::*;
        Ok(match self {
            Nat(_) | Bool(_) => {
                if self.is_bottom() {
                    vec![]
                } else {
                    vec![self.clone()]
                }
            }
            Int(_) => {
                return Err(LatticeError::UnsupportedShape(
                    "cannot decompose signed integers".into(),
                ))
            }
            Lex(..) => {
                return Err(LatticeError::UnsupportedShape(
                    "cannot decompose lexicographic products".into(),
                ))
            }
            Set(s) => s.iter().map(|a| LatticeValue::Set(BTreeSet::from([a.clone()]))).collect(),
            Map(m) => {
                let mut out = Vec::new();
                for (k, v) in m {
                    for irr in v.irreducibles()? {
                        out.push(LatticeValue::Map(BTreeMap::from([(k.clone(), irr)])));
                    }
                }
                out
            }
            Product(a, b) => {
                let bot_a = a.bottom_like()?;
                let bot_b = b.bottom_like()?;
                let mut out = Vec::new();
                for irr in a.irreducibles()? {
                    out.push(LatticeValue::product(irr, bot_b.clone()));
                }
                for irr in b.irreducibles()? {
                    out.push(LatticeValue::product(bot_a.clone(), irr));
                }
                out
            }
        })
    }

    /// `difference(a, b)` joins the irreducibles of `a` that are not below
    /// `b`: the part of `a` that `b` is missing.
    pub fn difference(&self, other: &LatticeValue) -> Result<LatticeValue, LatticeError> {
        // surfaces mismatches even when every irreducible happens to be below
        self.join(other)?;
        let mut acc = self.bottom_like()?;
        for y in self.irreducibles()? {
            if !y.leq(other)? {
                acc = acc.join(&y)?;
            }
        }
        Ok(acc)
    }

    /// Number of scalar leaves in the canonical rendering.
    pub fn leaves(&self) -> usize {
        match self {
            LatticeValue::Nat(_) | LatticeValue::Bool(_) | LatticeValue::Int(_) => 1,
            LatticeValue::Set(s) => s.len(),
            LatticeValue::Product(a, b) | LatticeValue::Lex(a, b) => a.leaves() + b.leaves(),
            LatticeValue::Map(m) => m.values().map(|v| 1 + v.leaves()).sum(),
        }
    }
}

impl fmt::Display for LatticeValue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            LatticeValue::Nat(n) => write!(f, "{n}"),
            LatticeValue::Bool(b) => write!(f, "{b}"),
            LatticeValue::Int(i) => write!(f, "{i}"),
            LatticeValue::Set(s) => {
                f.write_str("{")?;
                for (i, a) in s.iter().enumerate() {
                    if i > 0 {
                        f.write_str(",")?;
                    }
                    write!(f, "{a}")?;
                }
                f.write_str("}")
            }
            LatticeValue::Product(a, b) => write!(f, "({a}, {b})"),
            LatticeValue::Lex(a, b) => write!(f, "<{a}; {b}>"),
            LatticeValue::Map(m) => {
                f.write_str("{")?;
                for (i, (k, v)) in m.iter().enumerate() {
                    if i > 0 {
                        f.write_str(", ")?;
                    }
                    write!(f, "{k}: {v}")?;
                }
                f.write_str("}")
            }
        }
    }
}

/// An irredundant join decomposition of `target`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Decomposition {
    pub target: LatticeValue,
    pub irreducibles: Vec<LatticeValue>,
}

impl Decomposition {
    /// Join of the irreducibles, bottom when there are none.
    pub fn join(&self) -> Result<LatticeValue, LatticeError> {
        match LatticeValue::join_all(&self.irreducibles)? {
            Some(v) => Ok(v),
            None => self.target.bottom_like(),
        }
    }

    /// Joining everything reproduces the target.
    pub fn is_sound(&self) -> Result<bool, LatticeError> {
        Ok(self.join()? == self.target)
    }

    /// Dropping any single irreducible yields something strictly smaller.
    pub fn is_irredundant(&self) -> Result<bool, LatticeError> {
        for skip in 0..self.irreducibles.len() {
            let rest = self
                .irreducibles
                .iter()
                .enumerate()
                .filter(|(i, _)| *i != skip)
                .map(|(_, v)| v);
            let joined = match LatticeValue::join_all(rest)? {
                Some(v) => v,
                None => self.target.bottom_like()?,
            };
            if !joined.lt(&self.target)? {
                return Ok(false);
            }
        }
        Ok(true)
    }
}

/// A join-semilattice with bottom, for typed replica states.
pub trait Lattice: Clone + PartialEq + fmt::Debug {
    fn bottom() -> Self;

    fn join_assign(&mut self, other: &Self);

    fn join(&self, other: &Self) -> Self {
        let mut out = self.clone();
        out.join_assign(other);
        out
    }

    fn leq(&self, other: &Self) -> bool {
        self.join(other) == *other
    }

    fn is_bottom(&self) -> bool {
        *self == Self::bottom()
    }
}

/// Lattices with unique irredundant join decompositions.
pub trait Decompose: Lattice {
    fn decompose(&self) -> Result<Vec<Self>, LatticeError>;

    fn difference(&self, other: &Self) -> Result<Self, LatticeError> {
        let mut acc = Self::bottom();
        for y in self.decompose()? {
            if !y.leq(other) {
                acc.join_assign(&y);
            }
        }
        Ok(acc)
    }
}
