//! Run traces and the checks that audit them.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use crate::purelog::Timestamp;

/// Broadcast message identifier, unique within a run.
pub type MsgId = usize;

#[derive(Debug, Clone, PartialEq)]
pub enum TraceEvent {
    Invoke { tick: u64, node: usize, op: String, error: Option<String> },
    Broadcast { tick: u64, node: usize, msg: MsgId, ts: Timestamp },
    Deliver { tick: u64, node: usize, msg: MsgId, ts: Timestamp },
    Stable { tick: u64, node: usize, msg: MsgId, ts: Timestamp },
    Send { tick: u64, from: usize, to: usize, leaves: usize },
    Receive { tick: u64, from: usize, to: usize, leaves: usize },
    Drop { tick: u64, from: usize, to: usize },
    Note { tick: u64, text: String },
}

impl fmt::Display for TraceEvent {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TraceEvent::Invoke { tick, node, op, error: None } => {
                write!(f, "{tick} invoke node={node} op={op}")
            }
            TraceEvent::Invoke { tick, node, op, error: Some(e) } => {
                write!(f, "{tick} invoke node={node} op={op} error={e}")
            }
            TraceEvent::Broadcast { tick, node, msg, ts } => {
                write!(f, "{tick} broadcast node={node} msg={msg} ts={ts}")
            }
            TraceEvent::Deliver { tick, node, msg, ts } => {
                write!(f, "{tick} deliver node={node} msg={msg} ts={ts}")
            }
            TraceEvent::Stable { tick, node, msg, ts } => {
                write!(f, "{tick} stable node={node} msg={msg} ts={ts}")
            }
            TraceEvent::Send { tick, from, to, leaves } => {
                write!(f, "{tick} send {from}->{to} leaves={leaves}")
            }
            TraceEvent::Receive { tick, from, to, leaves } => {
                write!(f, "{tick} receive {from}->{to} leaves={leaves}")
            }
            TraceEvent::Drop { tick, from, to } => write!(f, "{tick} drop {from}->{to}"),
            TraceEvent::Note { tick, text } => write!(f, "{tick} {text}"),
        }
    }
}

/// Happens-before between broadcasts, rebuilt from the order of events in
/// the trace alone: a broadcast depends on everything its origin delivered
/// before it, transitively.
fn ancestry(trace: &[TraceEvent]) -> BTreeMap<MsgId, BTreeSet<MsgId>> {
    let mut seen: BTreeMap<usize, BTreeSet<MsgId>> = BTreeMap::new();
    let mut ancestors: BTreeMap<MsgId, BTreeSet<MsgId>> = BTreeMap::new();
    for ev in trace {
        match ev {
            TraceEvent::Broadcast { node, msg, .. } => {
                let direct = seen.get(node).cloned().unwrap_or_default();
                let mut all = direct.clone();
                for d in &direct {
                    if let Some(a) = ancestors.get(d) {
                        all.extend(a.iter().copied());
                    }
                }
                ancestors.insert(*msg, all);
            }
            TraceEvent::Deliver { node, msg, .. } => {
                seen.entry(*node).or_default().insert(*msg);
            }
            _ => {}
        }
    }
    ancestors
}

/// True iff no node delivers a message twice or before any message that
/// causally precedes it.
pub fn causal_order_check(trace: &[TraceEvent]) -> bool {
    let ancestors = ancestry(trace);
    let mut delivered: BTreeMap<usize, BTreeSet<MsgId>> = BTreeMap::new();
    for ev in trace {
        if let TraceEvent::Deliver { node, msg, .. } = ev {
            let mine = delivered.entry(*node).or_default();
            let deps = ancestors.get(msg).cloned().unwrap_or_default();
            if !deps.is_subset(mine) || !mine.insert(*msg) {
                return false;
            }
        }
    }
    true
}

/// True iff, after a node reports `m` stable, every message it delivers
/// causally follows `m`.
pub fn stability_safety_check(trace: &[TraceEvent]) -> bool {
    let ancestors = ancestry(trace);
    let mut stable: BTreeMap<usize, Vec<MsgId>> = BTreeMap::new();
    for ev in trace {
        match ev {
            TraceEvent::Stable { node, msg, .. } => stable.entry(*node).or_default().push(*msg),
            TraceEvent::Deliver { node, msg, .. } => {
                let deps = ancestors.get(msg).cloned().unwrap_or_default();
                if let Some(done) = stable.get(node) {
                    if done.iter().any(|s| !deps.contains(s)) {
                        return false;
                    }
                }
            }
            _ => {}
        }
    }
    true
}
