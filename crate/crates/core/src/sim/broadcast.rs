//! Tagged causal broadcast over simulated links.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Debug;

use log::error;
use rand::Rng;

use super::queue::{link_rng, EventQueue};
use super::trace::{MsgId, TraceEvent};
use super::{Cluster, NetConfig, NetStats, Partition};
use crate::causal::VersionVector;
use crate::model::{Approach, CrdtError, Measure, Op, Output, Query, ReplicaId};
use crate::opbased::{OpBasedCrdt, OpReplica, PreparedMessage};
use crate::purelog::{PureCrdt, PureReplica, Timestamp, UncompactedLog};

/// A replica that can sit on top of causal broadcast.
pub trait BroadcastNode {
    type Msg: Clone + Debug;

    const APPROACH: Approach;

    fn prepare(&mut self, op: &Op) -> Result<Self::Msg, CrdtError>;

    fn deliver(&mut self, msg: &Self::Msg, ts: &Timestamp);

    fn stable(&mut self, ts: &Timestamp) {
        let _ = ts;
    }

    fn query(&self, q: &Query) -> Result<Output, CrdtError>;

    fn reference_query(&self, q: &Query) -> Option<Result<Output, CrdtError>> {
        let _ = q;
        None
    }

    fn state_leaves(&self) -> usize;

    fn timestamped_len(&self) -> Option<usize> {
        None
    }

    fn msg_leaves(msg: &Self::Msg) -> usize;

    /// The client operation carried by a message, where it is kept verbatim.
    fn msg_op(msg: &Self::Msg) -> Option<&Op> {
        let _ = msg;
        None
    }
}

impl<T: OpBasedCrdt> BroadcastNode for OpReplica<T> {
    type Msg = PreparedMessage<T::Msg>;

    const APPROACH: Approach = Approach::Op;

    fn prepare(&mut self, op: &Op) -> Result<Self::Msg, CrdtError> {
        OpReplica::prepare(self, op)
    }

    fn deliver(&mut self, msg: &Self::Msg, _: &Timestamp) {
        self.effect(msg);
    }

    fn query(&self, q: &Query) -> Result<Output, CrdtError> {
        OpReplica::query(self, q)
    }

    fn state_leaves(&self) -> usize {
        OpReplica::state_leaves(self)
    }

    fn msg_leaves(msg: &Self::Msg) -> usize {
        msg.payload.leaves()
    }
}

/// A pure replica together with a never-compacted copy of its log.
#[derive(Debug, Clone)]
pub struct PureNode<D: PureCrdt> {
    pub replica: PureReplica<D>,
    pub reference: UncompactedLog<D>,
}

impl<D: PureCrdt> PureNode<D> {
    pub fn new(id: ReplicaId, admin: ReplicaId) -> Self {
        PureNode { replica: PureReplica::new(id).with_admin(admin), reference: UncompactedLog::default() }
    }
}

impl<D: PureCrdt> BroadcastNode for PureNode<D> {
    type Msg = Op;

    const APPROACH: Approach = Approach::Pure;

    fn prepare(&mut self, op: &Op) -> Result<Op, CrdtError> {
        self.replica.prepare(op)
    }

    fn deliver(&mut self, op: &Op, ts: &Timestamp) {
        if let Err(e) = self.replica.effect(ts.clone(), op.clone()) {
            error!("replica {}: {e}", self.replica.id);
            return;
        }
        self.reference.effect(ts.clone(), op.clone());
    }

    fn stable(&mut self, ts: &Timestamp) {
        self.replica.stable(ts);
    }

    fn query(&self, q: &Query) -> Result<Output, CrdtError> {
        self.replica.query(q)
    }

    fn reference_query(&self, q: &Query) -> Option<Result<Output, CrdtError>> {
        Some(self.reference.query(q))
    }

    fn state_leaves(&self) -> usize {
        self.replica.state_leaves()
    }

    fn timestamped_len(&self) -> Option<usize> {
        Some(self.replica.log.timestamped.len())
    }

    fn msg_leaves(op: &Op) -> usize {
        op.leaves()
    }

    fn msg_op(op: &Op) -> Option<&Op> {
        Some(op)
    }
}

#[derive(Debug, Clone)]
struct Envelope<M> {
    origin: usize,
    ts: Timestamp,
    /// `None` for beacons.
    payload: Option<M>,
    sent_at: u64,
}

/// Reliable causal broadcast with stability detection.
///
/// Node `i` considers a timestamp `t` stable once its own clock and the
/// timestamp of the last message it delivered from every other node all
/// dominate `t`: later messages from anyone must then follow `t`.
pub struct BroadcastCluster<N: BroadcastNode> {
    nodes: Vec<N>,
    cfg: NetConfig,
    now: u64,
    clocks: Vec<VersionVector>,
    last_from: Vec<Vec<VersionVector>>,
    unstable: Vec<BTreeMap<Timestamp, MsgId>>,
    envelopes: Vec<Envelope<N::Msg>>,
    delivered: Vec<Vec<MsgId>>,
    delivered_set: Vec<BTreeSet<MsgId>>,
    pending: Vec<Vec<MsgId>>,
    queue: EventQueue<(usize, usize, MsgId)>,
    held: Vec<(usize, usize, MsgId)>,
    partition: Partition,
    link_sends: BTreeMap<(u64, usize, usize), u64>,
    stats: NetStats,
    trace: Vec<TraceEvent>,
    lags: Vec<u64>,
}

impl<N: BroadcastNode> BroadcastCluster<N> {
    pub fn new(nodes: Vec<N>, cfg: NetConfig) -> Self {
        let n = nodes.len();
        BroadcastCluster {
            nodes,
            cfg,
            now: 0,
            clocks: vec![VersionVector::new(); n],
            last_from: vec![vec![VersionVector::new(); n]; n],
            unstable: vec![BTreeMap::new(); n],
            envelopes: Vec::new(),
            delivered: vec![Vec::new(); n],
            delivered_set: vec![BTreeSet::new(); n],
            pending: vec![Vec::new(); n],
            queue: EventQueue::default(),
            held: Vec::new(),
            partition: Partition::default(),
            link_sends: BTreeMap::new(),
            stats: NetStats::default(),
            trace: Vec::new(),
            lags: Vec::new(),
        }
    }

    pub fn node(&self, i: usize) -> &N {
        &self.nodes[i]
    }

    pub fn nodes(&self) -> &[N] {
        &self.nodes
    }

    /// Messages broadcast so far, beacons included.
    pub fn broadcasts(&self) -> usize {
        self.envelopes.len()
    }

    fn broadcast(&mut self, i: usize, payload: Option<N::Msg>) -> MsgId {
        let id = ReplicaId(i as u32);
        self.clocks[i].increment(id);
        let ts = Timestamp::new(self.clocks[i].clone(), id);
        let msg = self.envelopes.len();
        self.envelopes.push(Envelope { origin: i, ts: ts.clone(), payload, sent_at: self.now });
        self.trace.push(TraceEvent::Broadcast { tick: self.now, node: i, msg, ts: ts.clone() });
        self.last_from[i][i] = ts.clock.clone();
        self.apply(i, msg);
        if !self.cfg.manual {
            for j in 0..self.nodes.len() {
                if j != i {
                    self.transmit(i, j, msg);
                }
            }
        }
        msg
    }

    fn transmit(&mut self, from: usize, to: usize, msg: MsgId) {
        if !self.partition.connected(from, to) {
            self.held.push((from, to, msg));
            return;
        }
        let index = self.link_sends.entry((self.now, from, to)).or_insert(0);
        let mut rng = link_rng(self.cfg.seed, self.now, from, to, *index);
        *index += 1;
        let delay = 1 + rng.gen_range(0..=self.cfg.reorder);
        let leaves = self.envelopes[msg].payload.as_ref().map_or(0, N::msg_leaves);
        self.stats.record_send(self.now, leaves);
        self.trace.push(TraceEvent::Send { tick: self.now, from, to, leaves });
        self.queue.push(self.now + delay, (from, to, msg));
    }

    fn arrive(&mut self, from: usize, to: usize, msg: MsgId) {
        if !self.partition.connected(from, to) {
            self.held.push((from, to, msg));
            return;
        }
        if self.delivered_set[to].contains(&msg) || self.pending[to].contains(&msg) {
            return;
        }
        self.pending[to].push(msg);
        self.drain_pending(to);
    }

    fn deliverable(&self, j: usize, msg: MsgId) -> bool {
        let env = &self.envelopes[msg];
        let origin = ReplicaId(env.origin as u32);
        let mine = &self.clocks[j];
        env.ts.clock.get(origin) == mine.get(origin) + 1
            && env.ts.clock.iter().all(|(r, n)| r == origin || n <= mine.get(r))
    }

    fn drain_pending(&mut self, j: usize) {
        while let Some(pos) = self.pending[j].iter().position(|&m| self.deliverable(j, m)) {
            let msg = self.pending[j].remove(pos);
            let env = &self.envelopes[msg];
            let (origin, ts) = (env.origin, env.ts.clone());
            self.clocks[j].merge(&ts.clock);
            self.last_from[j][origin] = ts.clock;
            self.apply(j, msg);
        }
    }

    /// Delivers `msg` at `j`, whose clock already covers it.
    fn apply(&mut self, j: usize, msg: MsgId) {
        let env = &self.envelopes[msg];
        let ts = env.ts.clone();
        self.trace.push(TraceEvent::Deliver { tick: self.now, node: j, msg, ts: ts.clone() });
        self.delivered[j].push(msg);
        self.delivered_set[j].insert(msg);
        if let Some(p) = &env.payload {
            self.nodes[j].deliver(p, &ts);
            self.unstable[j].insert(ts, msg);
        }
        self.detect_stability(j);
    }

    fn detect_stability(&mut self, j: usize) {
        let mut floor = self.clocks[j].clone();
        for (k, last) in self.last_from[j].iter().enumerate() {
            if k != j {
                floor = floor.meet(last);
            }
        }
        let ready: Vec<(Timestamp, MsgId)> = self.unstable[j]
            .iter()
            .filter(|(t, _)| t.clock.leq(&floor))
            .map(|(t, m)| (t.clone(), *m))
            .collect();
        for (ts, msg) in ready {
            self.unstable[j].remove(&ts);
            self.nodes[j].stable(&ts);
            self.lags.push(self.now - self.envelopes[msg].sent_at);
            self.trace.push(TraceEvent::Stable { tick: self.now, node: j, msg, ts });
        }
    }

    fn deliver_in_flight(&mut self) {
        for (from, to, msg) in self.queue.drain_all() {
            self.arrive(from, to, msg);
        }
    }

    fn release_held(&mut self, immediate: bool) {
        let held = std::mem::take(&mut self.held);
        for (from, to, msg) in held {
            if !self.partition.connected(from, to) {
                self.held.push((from, to, msg));
            } else if immediate {
                let leaves = self.envelopes[msg].payload.as_ref().map_or(0, N::msg_leaves);
                self.stats.record_send(self.now, leaves);
                self.trace.push(TraceEvent::Send { tick: self.now, from, to, leaves });
                self.arrive(from, to, msg);
            } else {
                self.transmit(from, to, msg);
            }
        }
    }
}

impl<N: BroadcastNode> Cluster for BroadcastCluster<N> {
    fn approach(&self) -> Approach {
        N::APPROACH
    }

    fn size(&self) -> usize {
        self.nodes.len()
    }

    fn now(&self) -> u64 {
        self.now
    }

    fn begin_tick(&mut self, tick: u64) {
        self.now = self.now.max(tick);
        while let Some((_, (from, to, msg))) = self.queue.pop_due(self.now) {
            self.arrive(from, to, msg);
        }
    }

    fn end_tick(&mut self) {}

    fn invoke(&mut self, node: usize, op: &Op) -> Result<(), CrdtError> {
        let prepared = self.nodes[node].prepare(op);
        self.trace.push(TraceEvent::Invoke {
            tick: self.now,
            node,
            op: op.to_string(),
            error: prepared.as_ref().err().map(ToString::to_string),
        });
        self.broadcast(node, Some(prepared?));
        Ok(())
    }

    fn beacon(&mut self, node: usize) {
        self.broadcast(node, None);
    }

    fn partition(&mut self, groups: &[Vec<usize>]) {
        self.partition = Partition::split(self.nodes.len(), groups);
    }

    fn heal(&mut self) {
        self.partition.heal();
        self.release_held(false);
    }

    fn flush(&mut self) {
        self.deliver_in_flight();
        self.release_held(true);
        if N::APPROACH == Approach::Pure && !self.cfg.manual {
            for i in 0..self.nodes.len() {
                self.beacon(i);
            }
            self.deliver_in_flight();
            self.release_held(true);
        }
    }

    fn sync(&mut self, node: usize) {
        let known = self.delivered[node].clone();
        for j in 0..self.nodes.len() {
            if j == node {
                continue;
            }
            for &msg in &known {
                if !self.delivered_set[j].contains(&msg) && !self.pending[j].contains(&msg) {
                    self.pending[j].push(msg);
                }
            }
            self.drain_pending(j);
        }
    }

    fn query(&self, node: usize, q: &Query) -> Result<Output, CrdtError> {
        self.nodes[node].query(q)
    }

    fn reference_query(&self, node: usize, q: &Query) -> Option<Result<Output, CrdtError>> {
        self.nodes[node].reference_query(q)
    }

    fn state_leaves(&self, node: usize) -> usize {
        self.nodes[node].state_leaves()
    }

    fn settled(&self) -> bool {
        self.delivered.iter().all(|d| d.len() == self.envelopes.len())
    }

    fn unstable_ops(&self, node: usize) -> Vec<Op> {
        self.unstable[node]
            .values()
            .filter_map(|&m| self.envelopes[m].payload.as_ref().and_then(N::msg_op).cloned())
            .collect()
    }

    fn timestamped_len(&self, node: usize) -> Option<usize> {
        self.nodes[node].timestamped_len()
    }

    fn stats(&self) -> &NetStats {
        &self.stats
    }

    fn trace(&self) -> &[TraceEvent] {
        &self.trace
    }

    fn stability_lags(&self) -> &[u64] {
        &self.lags
    }

    fn note(&mut self, text: String) {
        self.trace.push(TraceEvent::Note { tick: self.now, text });
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::opbased::GCounter;
    use crate::purelog::ORSet;
    use crate::sim::{causal_order_check, stability_safety_check};

    fn op_cluster(n: usize, reorder: u64) -> BroadcastCluster<OpReplica<GCounter>> {
        let nodes = (0..n).map(|i| OpReplica::new(ReplicaId(i as u32))).collect();
        BroadcastCluster::new(nodes, NetConfig { nodes: n, reorder, seed: 3, ..NetConfig::default() })
    }

    fn pure_cluster(n: usize) -> BroadcastCluster<PureNode<ORSet>> {
        let nodes = (0..n).map(|i| PureNode::new(ReplicaId(i as u32), ReplicaId(0))).collect();
        BroadcastCluster::new(nodes, NetConfig { nodes: n, ..NetConfig::default() })
    }

    fn run_to(c: &mut impl Cluster, tick: u64) {
        for t in c.now() + 1..=tick {
            c.begin_tick(t);
            c.end_tick();
        }
    }

    #[test]
    fn two_counters_converge() {
        let mut c = op_cluster(2, 0);
        c.invoke(0, &Op::Inc).unwrap();
        c.invoke(1, &Op::Inc).unwrap();
        run_to(&mut c, 3);
        for i in 0..2 {
            assert_eq!(c.query(i, &Query::Value).unwrap(), Output::Int(2));
        }
        assert!(causal_order_check(c.trace()));
    }

    #[test]
    fn reordered_links_still_deliver_causally() {
        let mut c = op_cluster(3, 6);
        for t in 1..=20 {
            c.begin_tick(t);
            c.invoke((t % 3) as usize, &Op::Inc).unwrap();
        }
        run_to(&mut c, 40);
        assert!(causal_order_check(c.trace()));
        for i in 0..3 {
            assert_eq!(c.query(i, &Query::Value).unwrap(), Output::Int(20));
        }
    }

    #[test]
    fn single_node_stabilizes_on_self_delivery() {
        let mut c = pure_cluster(1);
        c.invoke(0, &Op::Add("a".into())).unwrap();
        assert_eq!(c.timestamped_len(0), Some(0));
    }

    #[test]
    fn silent_node_blocks_stability_until_it_speaks() {
        let mut c = pure_cluster(2);
        c.invoke(0, &Op::Add("a".into())).unwrap();
        run_to(&mut c, 3);
        assert_eq!(c.timestamped_len(0), Some(1));
        c.beacon(1);
        run_to(&mut c, 6);
        assert_eq!(c.timestamped_len(0), Some(0));
        assert!(stability_safety_check(c.trace()));
    }

    #[test]
    fn partitions_delay_but_never_lose() {
        let mut c = pure_cluster(3);
        c.partition(&[vec![0, 1], vec![2]]);
        c.invoke(0, &Op::Add("a".into())).unwrap();
        c.invoke(2, &Op::Add("b".into())).unwrap();
        run_to(&mut c, 5);
        assert_eq!(c.query(2, &Query::Elements).unwrap(), Output::set(["b"]));
        assert!(c.timestamped_len(0).unwrap() > 0);
        c.heal();
        c.flush();
        for i in 0..3 {
            assert_eq!(c.query(i, &Query::Elements).unwrap(), Output::set(["a", "b"]));
            assert_eq!(c.timestamped_len(i), Some(0));
        }
        assert!(causal_order_check(c.trace()));
        assert!(stability_safety_check(c.trace()));
    }
}
