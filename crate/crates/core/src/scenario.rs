//! Line-oriented scenario files.
//!
//! A file is a header of `key value` lines followed by commands, one per
//! line. `#` starts a comment. Any command may be prefixed with
//! `at <tick>`; unprefixed commands run at the tick of the previous one.
//!
//! ```text
//! nodes 2
//! datatype orset
//! approach op
//! at 1 node 0 add a
//! at 1 node 1 add b
//! flush
//! expect elements == {a,b}
//! ```

use std::fmt;
use std::str::FromStr;

use thiserror::Error;

use crate::model::{Approach, DataType, Op, Query};
use crate::sim::{NetConfig, Topology};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("line {line}: {message}")]
pub struct ParseError {
    pub line: usize,
    pub message: String,
}

impl ParseError {
    fn new(line: usize, message: impl Into<String>) -> Self {
        ParseError { line, message: message.into() }
    }
}

/// When the administrator's `closed` actually takes effect.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum AuctionPolicy {
    /// Issued as soon as requested.
    Immediate,
    /// Held while any `closing` the administrator has delivered is not yet
    /// causally stable there.
    #[default]
    Stability,
    /// Like `Stability`, but issued anyway after this many ticks.
    Timeout(u64),
}

impl fmt::Display for AuctionPolicy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            AuctionPolicy::Immediate => f.write_str("immediate"),
            AuctionPolicy::Stability => f.write_str("stability"),
            AuctionPolicy::Timeout(n) => write!(f, "timeout {n}"),
        }
    }
}

impl FromStr for AuctionPolicy {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let words: Vec<&str> = s.split_whitespace().collect();
        match words.as_slice() {
            ["immediate"] => Ok(AuctionPolicy::Immediate),
            ["stability"] => Ok(AuctionPolicy::Stability),
            ["timeout", n] => n.parse().map(AuctionPolicy::Timeout).map_err(|_| format!("bad timeout `{n}`")),
            _ => Err(format!("unknown auction policy `{s}`")),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Header {
    pub datatype: DataType,
    pub approach: Approach,
    pub net: NetConfig,
    /// Run at least until this tick.
    pub duration: Option<u64>,
    pub auction_policy: AuctionPolicy,
    pub admin: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Command {
    Invoke { node: usize, op: Op },
    /// `None` beacons from every node.
    Beacon(Option<usize>),
    Partition(Vec<Vec<usize>>),
    Heal,
    Flush,
    Sync(usize),
    QueryAll(Query),
    AssertConverged,
    /// `None` checks every node.
    Expect { node: Option<usize>, query: Query, value: String },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Step {
    pub line: usize,
    pub tick: u64,
    pub command: Command,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub header: Header,
    pub steps: Vec<Step>,
}

impl Scenario {
    /// The last tick the run must reach.
    pub fn end_tick(&self) -> u64 {
        let last = self.steps.last().map_or(0, |s| s.tick);
        self.header.duration.map_or(last, |d| d.max(last))
    }

    /// The same scenario under another approach.
    pub fn with_approach(&self, approach: Approach) -> Scenario {
        let mut s = self.clone();
        s.header.approach = approach;
        s
    }
}

#[derive(Default)]
struct HeaderDraft {
    nodes: Option<usize>,
    datatype: Option<(DataType, usize)>,
    approach: Option<(Approach, usize)>,
    net: NetConfig,
    duration: Option<u64>,
    policy: AuctionPolicy,
    admin: usize,
}

impl HeaderDraft {
    fn set(&mut self, line: usize, key: &str, value: &str) -> Result<(), ParseError> {
        let err = |m: String| ParseError::new(line, m);
        fn num<T: FromStr>(line: usize, key: &str, v: &str) -> Result<T, ParseError> {
            v.parse().map_err(|_| ParseError::new(line, format!("bad value `{v}` for {key}")))
        }
        fn prob(line: usize, key: &str, v: &str) -> Result<f64, ParseError> {
            let p: f64 = num(line, key, v)?;
            if (0.0..=1.0).contains(&p) {
                Ok(p)
            } else {
                Err(ParseError::new(line, format!("{key} must lie in [0,1]")))
            }
        }
        match key {
            "nodes" => {
                let n: usize = num(line, key, value)?;
                if n == 0 {
                    return Err(err("nodes must be positive".into()));
                }
                self.nodes = Some(n);
            }
            "datatype" => self.datatype = Some((value.parse().map_err(err)?, line)),
            "approach" => self.approach = Some((value.parse().map_err(err)?, line)),
            "topology" => self.net.topology = value.parse::<Topology>().map_err(err)?,
            "seed" => self.net.seed = num(line, key, value)?,
            "drop" => self.net.drop = prob(line, key, value)?,
            "dup" => self.net.dup = prob(line, key, value)?,
            "reorder" => self.net.reorder = num(line, key, value)?,
            "gossip-interval" => {
                let k: u64 = num(line, key, value)?;
                if k == 0 {
                    return Err(err("gossip-interval must be positive".into()));
                }
                self.net.gossip_interval = k;
            }
            "full-state-every" => self.net.full_state_every = Some(num(line, key, value)?),
            "duration" => self.duration = Some(num(line, key, value)?),
            "delivery" => {
                self.net.manual = match value {
                    "auto" => false,
                    "manual" => true,
                    _ => return Err(err(format!("unknown delivery mode `{value}`"))),
                }
            }
            "auction-policy" => self.policy = value.parse().map_err(err)?,
            "admin" => self.admin = num(line, key, value)?,
            _ => return Err(err(format!("unknown header key `{key}`"))),
        }
        Ok(())
    }

    fn finish(self, line: usize) -> Result<Header, ParseError> {
        let (datatype, dline) = self.datatype.ok_or_else(|| ParseError::new(line, "missing datatype"))?;
        let (approach, aline) = match self.approach {
            Some(a) => a,
            None => (datatype.approaches()[0], dline),
        };
        if !datatype.supports(approach) {
            return Err(ParseError::new(
                aline.max(dline),
                format!("unsupported combination: approach {approach} does not implement {datatype}"),
            ));
        }
        let mut net = self.net;
        net.nodes = self.nodes.unwrap_or(2);
        if self.admin >= net.nodes {
            return Err(ParseError::new(line, format!("admin {} out of range", self.admin)));
        }
        Ok(Header { datatype, approach, net, duration: self.duration, auction_policy: self.policy, admin: self.admin })
    }
}

const HEADER_KEYS: [&str; 14] = [
    "nodes",
    "datatype",
    "approach",
    "topology",
    "seed",
    "drop",
    "dup",
    "reorder",
    "gossip-interval",
    "full-state-every",
    "duration",
    "delivery",
    "auction-policy",
    "admin",
];

fn parse_node(line: usize, s: &str, nodes: usize) -> Result<usize, ParseError> {
    let i: usize = s.parse().map_err(|_| ParseError::new(line, format!("bad node index `{s}`")))?;
    if i >= nodes {
        return Err(ParseError::new(line, format!("node {i} out of range (nodes {nodes})")));
    }
    Ok(i)
}

fn parse_query(line: usize, s: &str, dt: DataType) -> Result<Query, ParseError> {
    let q: Query = s.parse().map_err(|e| ParseError::new(line, e))?;
    if !dt.answers(&q) {
        return Err(ParseError::new(line, format!("query `{q}` is not supported by {dt}")));
    }
    Ok(q)
}

fn parse_command(line: usize, words: &[&str], h: &Header) -> Result<Command, ParseError> {
    let n = h.net.nodes;
    let rest = |from: usize| words[from..].join(" ");
    match words {
        ["beacon"] => Ok(Command::Beacon(None)),
        ["heal"] => Ok(Command::Heal),
        ["flush"] => Ok(Command::Flush),
        ["assert-converged"] => Ok(Command::AssertConverged),
        ["sync", i] => Ok(Command::Sync(parse_node(line, i, n)?)),
        ["node", i, "beacon"] => Ok(Command::Beacon(Some(parse_node(line, i, n)?))),
        ["node", i, _, ..] => {
            let node = parse_node(line, i, n)?;
            let op: Op = rest(2).parse().map_err(|e| ParseError::new(line, e))?;
            if !h.datatype.accepts(&op) {
                return Err(ParseError::new(line, format!("operation `{op}` is not supported by {}", h.datatype)));
            }
            Ok(Command::Invoke { node, op })
        }
        ["partition", ..] if words.len() > 1 => {
            let groups = rest(1)
                .split('|')
                .map(|g| {
                    g.split(',')
                        .map(str::trim)
                        .filter(|s| !s.is_empty())
                        .map(|s| parse_node(line, s, n))
                        .collect::<Result<Vec<_>, _>>()
                })
                .collect::<Result<Vec<_>, _>>()?;
            Ok(Command::Partition(groups))
        }
        ["query-all", ..] if words.len() > 1 => Ok(Command::QueryAll(parse_query(line, &rest(1), h.datatype)?)),
        ["expect", ..] => {
            let text = rest(1);
            let (lhs, value) = text
                .split_once("==")
                .ok_or_else(|| ParseError::new(line, "expect needs `<query> == <value>`"))?;
            let lhs: Vec<&str> = lhs.split_whitespace().collect();
            let (node, q) = match lhs.as_slice() {
                ["node", i, q @ ..] => (Some(parse_node(line, i, n)?), q.join(" ")),
                q => (None, q.join(" ")),
            };
            let value = value.trim();
            if value.is_empty() {
                return Err(ParseError::new(line, "expect needs a value"));
            }
            Ok(Command::Expect { node, query: parse_query(line, &q, h.datatype)?, value: value.to_owned() })
        }
        _ => Err(ParseError::new(line, format!("unknown command `{}`", words.join(" ")))),
    }
}

impl FromStr for Scenario {
    type Err = ParseError;

    fn from_str(text: &str) -> Result<Self, Self::Err> {
        let mut draft = Some(HeaderDraft::default());
        let mut header: Option<Header> = None;
        let mut steps = Vec::new();
        let mut tick = 0u64;
        let mut last_line = 0;
        for (idx, raw) in text.lines().enumerate() {
            let line = idx + 1;
            last_line = line;
            let content = raw.split('#').next().unwrap_or("").trim();
            if content.is_empty() {
                continue;
            }
            let mut words: Vec<&str> = content.split_whitespace().collect();
            if HEADER_KEYS.contains(&words[0]) {
                let Some(d) = draft.as_mut() else {
                    return Err(ParseError::new(line, format!("header key `{}` after the first command", words[0])));
                };
                if words.len() < 2 {
                    return Err(ParseError::new(line, format!("missing value for {}", words[0])));
                }
                d.set(line, words[0], &words[1..].join(" "))?;
                continue;
            }
            if let Some(d) = draft.take() {
                header = Some(d.finish(line)?);
            }
            let h = header.as_ref().expect("header is finished before commands");
            if words[0] == "at" {
                let t = words.get(1).ok_or_else(|| ParseError::new(line, "`at` needs a tick"))?;
                let t: u64 = t.parse().map_err(|_| ParseError::new(line, format!("bad tick `{t}`")))?;
                if t < tick {
                    return Err(ParseError::new(line, format!("tick {t} is earlier than tick {tick}")));
                }
                tick = t;
                words.drain(..2);
                if words.is_empty() {
                    return Err(ParseError::new(line, "missing command after `at`"));
                }
            }
            steps.push(Step { line, tick, command: parse_command(line, &words, h)? });
        }
        let header = match (header, draft) {
            (Some(h), _) => h,
            (None, Some(d)) => d.finish(last_line.max(1))?,
            (None, None) => unreachable!(),
        };
        Ok(Scenario { header, steps })
    }
}
