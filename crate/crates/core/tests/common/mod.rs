//! Generators and independent oracles shared by the integration tests.
#![allow(dead_code)]

use std::collections::{BTreeMap, BTreeSet};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crdt_workbench::lattice::{Atom, LatticeValue, Shape};
use crdt_workbench::model::{DataType, Op, ReplicaId};
use crdt_workbench::scenario::Scenario;
use crdt_workbench::statebased::StateCrdt;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

const ATOMS: [&str; 4] = ["a", "b", "c", "d"];

fn atom_set(rng: &mut ChaCha8Rng) -> BTreeSet<Atom> {
    ATOMS.iter().filter(|_| rng.gen_bool(0.4)).map(|a| Atom::from(*a)).collect()
}

/// A random element of `shape`, drawn from small domains so that joins
/// often overlap.
pub fn random_value(shape: &Shape, rng: &mut ChaCha8Rng) -> LatticeValue {
    match shape {
        Shape::Nat => LatticeValue::Nat(rng.gen_range(0..5)),
        Shape::Bool => LatticeValue::Bool(rng.gen()),
        Shape::Int => LatticeValue::Int(rng.gen_range(-3..4)),
        Shape::Set => LatticeValue::Set(atom_set(rng)),
        Shape::Product(a, b) => LatticeValue::product(random_value(a, rng), random_value(b, rng)),
        Shape::Lex(a, b) => LatticeValue::lex(random_value(a, rng), random_value(b, rng)),
        Shape::Map(v) => {
            let mut m = BTreeMap::new();
            for k in ATOMS {
                if rng.gen_bool(0.5) {
                    let val = random_value(v, rng);
                    if !val.is_bottom() {
                        m.insert(Atom::from(k), val);
                    }
                }
            }
            LatticeValue::Map(m)
        }
    }
}

/// Shapes exercised by the lattice law suite.
pub fn law_shapes() -> Vec<Shape> {
    vec![
        Shape::Nat,
        Shape::Bool,
        Shape::Int,
        Shape::Set,
        Shape::product(Shape::Nat, Shape::Set),
        Shape::lex(Shape::Nat, Shape::Set),
        Shape::lex(Shape::Set, Shape::Nat),
        Shape::map(Shape::Nat),
        Shape::map(Shape::product(Shape::Bool, Shape::Set)),
        Shape::product(Shape::map(Shape::Set), Shape::Nat),
    ]
}

pub fn decomposable(shape: &Shape) -> bool {
    match shape {
        Shape::Nat | Shape::Bool | Shape::Set => true,
        Shape::Int | Shape::Lex(..) => false,
        Shape::Product(a, b) => decomposable(a) && decomposable(b),
        Shape::Map(v) => decomposable(v),
    }
}

pub fn alphabet(dt: DataType) -> Vec<Op> {
    let elems = ["a", "b", "c"];
    match dt {
        DataType::GCounter => vec![Op::Inc],
        DataType::PNCounter => vec![Op::Inc, Op::Dec],
        DataType::GSet => elems.iter().map(|e| Op::Add((*e).into())).collect(),
        DataType::ORSet | DataType::ORSetNaive => elems
            .iter()
            .flat_map(|e| [Op::Add((*e).into()), Op::Remove((*e).into())])
            .collect(),
        DataType::MVReg => elems.iter().map(|e| Op::Write((*e).into())).collect(),
        DataType::Advancer => elems.iter().map(|e| Op::Advance((*e).into())).collect(),
        DataType::Auction => vec![
            Op::Bid { bidder: "ann".into(), amount: 10 },
            Op::Bid { bidder: "ben".into(), amount: 20 },
            Op::Bid { bidder: "cat".into(), amount: 20 },
            Op::Closing,
            Op::Closed,
        ],
    }
}

pub fn random_op(dt: DataType, rng: &mut ChaCha8Rng) -> Op {
    alphabet(dt).choose(rng).expect("non-empty alphabet").clone()
}

/// A state reachable by random updates and merges among three replicas.
pub fn reachable<T: StateCrdt>(dt: DataType, rng: &mut ChaCha8Rng) -> T {
    let mut replicas = vec![T::bottom(), T::bottom(), T::bottom()];
    for _ in 0..rng.gen_range(0..12) {
        let i = rng.gen_range(0..3);
        if rng.gen_bool(0.7) {
            let op = random_op(dt, rng);
            replicas[i] = replicas[i].mutate(ReplicaId(i as u32), &op).expect("alphabet op");
        } else {
            let j = rng.gen_range(0..3);
            let other = replicas[j].clone();
            replicas[i].join_assign(&other);
        }
    }
    let pick = rng.gen_range(0..3);
    replicas.swap_remove(pick)
}

/// A step of a manually delivered history.
#[derive(Debug, Clone, PartialEq)]
pub enum HStep {
    Update(usize, Op),
    /// Every node learns what this node knows.
    Sync(usize),
}

#[derive(Debug, Clone)]
pub struct History {
    pub datatype: DataType,
    pub nodes: usize,
    pub steps: Vec<HStep>,
}

impl History {
    pub fn random(dt: DataType, rng: &mut ChaCha8Rng, max_nodes: usize, max_ops: usize) -> History {
        let nodes = rng.gen_range(1..=max_nodes);
        let ops = rng.gen_range(1..=max_ops);
        let mut steps = Vec::new();
        let mut done = 0;
        while done < ops {
            if rng.gen_bool(0.35) {
                steps.push(HStep::Sync(rng.gen_range(0..nodes)));
            } else {
                steps.push(HStep::Update(rng.gen_range(0..nodes), random_op(dt, rng)));
                done += 1;
            }
        }
        History { datatype: dt, nodes, steps }
    }

    /// The history as a scenario file under manual delivery.
    pub fn scenario_text(&self, approach: &str) -> String {
        let mut out = format!("nodes {}\ndatatype {}\napproach {approach}\ndelivery manual\n", self.nodes, self.datatype);
        for (t, s) in self.steps.iter().enumerate() {
            match s {
                HStep::Update(i, op) => out.push_str(&format!("at {} node {i} {op}\n", t + 1)),
                HStep::Sync(i) => out.push_str(&format!("at {} sync {i}\n", t + 1)),
            }
        }
        out
    }

    pub fn scenario(&self, approach: &str) -> Scenario {
        self.scenario_text(approach).parse().expect("generated scenario parses")
    }

    /// The converged observation, computed from the causal history alone:
    /// each update is paired with the set of updates its origin knew.
    pub fn oracle(&self) -> String {
        let mut known: Vec<BTreeSet<usize>> = vec![BTreeSet::new(); self.nodes];
        let mut ops: Vec<(Op, BTreeSet<usize>)> = Vec::new();
        for s in &self.steps {
            match s {
                HStep::Update(i, op) => {
                    let id = ops.len();
                    ops.push((op.clone(), known[*i].clone()));
                    known[*i].insert(id);
                }
                HStep::Sync(i) => {
                    let k = known[*i].clone();
                    for set in known.iter_mut() {
                        set.extend(k.iter().copied());
                    }
                }
            }
        }
        let count = |want: &Op| ops.iter().filter(|(o, _)| o == want).count() as i64;
        let render = |s: BTreeSet<&str>| format!("{{{}}}", s.into_iter().collect::<Vec<_>>().join(","));
        match self.datatype {
            DataType::GCounter | DataType::PNCounter => (count(&Op::Inc) - count(&Op::Dec)).to_string(),
            DataType::GSet => render(ops.iter().filter_map(|(o, _)| match o {
                Op::Add(e) => Some(e.as_str()),
                _ => None,
            }).collect()),
            DataType::ORSet => render(
                ops.iter()
                    .enumerate()
                    .filter_map(|(id, (o, _))| match o {
                        Op::Add(e) => {
                            let removed = ops.iter().any(|(r, seen)| *r == Op::Remove(e.clone()) && seen.contains(&id));
                            (!removed).then_some(e.as_str())
                        }
                        _ => None,
                    })
                    .collect(),
            ),
            dt => panic!("no oracle for {dt}"),
        }
    }
}
