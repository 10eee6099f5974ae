//! Anti-entropy over lossy point-to-point links.

use rand::Rng;
use std::collections::BTreeMap;

use super::queue::{link_rng, EventQueue};
use super::trace::TraceEvent;
use super::{Cluster, NetConfig, NetStats, Partition, Topology};
use crate::delta::{DeltaCrdt, DeltaReplica, Propagation};
use crate::model::{Approach, CrdtError, Op, Output, Query, ReplicaId};
use crate::statebased::StateReplica;

/// One replica plus its anti-entropy policy.
#[derive(Debug, Clone)]
pub enum Gossiper<T: DeltaCrdt> {
    /// Ships its whole state to every neighbor each round.
    State(StateReplica<T>, Vec<ReplicaId>),
    Delta(DeltaReplica<T>),
}

impl<T: DeltaCrdt> Gossiper<T> {
    pub fn new(id: ReplicaId, neighbors: Vec<ReplicaId>, approach: Approach, full_state_every: Option<u64>) -> Self {
        match approach {
            Approach::DeltaNaive => {
                Gossiper::Delta(DeltaReplica::new(id, neighbors, Propagation::Naive).with_full_state_every(full_state_every))
            }
            Approach::DeltaImproved => Gossiper::Delta(
                DeltaReplica::new(id, neighbors, Propagation::Improved).with_full_state_every(full_state_every),
            ),
            _ => Gossiper::State(StateReplica::new(id), neighbors),
        }
    }

    pub fn state(&self) -> &T {
        match self {
            Gossiper::State(r, _) => &r.state,
            Gossiper::Delta(r) => &r.state,
        }
    }

    pub fn operate(&mut self, op: &Op) -> Result<(), CrdtError> {
        match self {
            Gossiper::State(r, _) => r.apply(op),
            Gossiper::Delta(r) => r.operate(op).map(drop),
        }
    }

    pub fn receive(&mut self, from: ReplicaId, payload: &T) -> bool {
        match self {
            Gossiper::State(r, _) => {
                let before = r.state.clone();
                r.merge(payload);
                r.state != before
            }
            Gossiper::Delta(r) => r.receive(from, payload),
        }
    }

    pub fn tick(&mut self) -> Vec<(ReplicaId, T)> {
        match self {
            Gossiper::State(r, _) if r.state.is_bottom() => Vec::new(),
            Gossiper::State(r, neighbors) => neighbors.iter().map(|&n| (n, r.state.clone())).collect(),
            Gossiper::Delta(r) => r.tick(),
        }
    }
}

/// A cluster of state-based or delta-state replicas.
pub struct GossipCluster<T: DeltaCrdt> {
    nodes: Vec<Gossiper<T>>,
    approach: Approach,
    cfg: NetConfig,
    now: u64,
    queue: EventQueue<(usize, usize, T)>,
    partition: Partition,
    link_sends: BTreeMap<(u64, usize, usize), u64>,
    received: Vec<Vec<T>>,
    stats: NetStats,
    trace: Vec<TraceEvent>,
}

impl<T: DeltaCrdt> GossipCluster<T> {
    pub fn new(approach: Approach, cfg: NetConfig) -> Self {
        let n = cfg.nodes;
        let topology = if cfg.manual { Topology::Clique } else { cfg.topology };
        let nodes = (0..n)
            .map(|i| {
                Gossiper::new(ReplicaId(i as u32), topology.neighbors(i, n), approach, cfg.full_state_every)
            })
            .collect();
        GossipCluster {
            nodes,
            approach,
            cfg,
            now: 0,
            queue: EventQueue::default(),
            partition: Partition::default(),
            link_sends: BTreeMap::new(),
            received: vec![Vec::new(); n],
            stats: NetStats::default(),
            trace: Vec::new(),
        }
    }

    pub fn node(&self, i: usize) -> &Gossiper<T> {
        &self.nodes[i]
    }

    fn transmit(&mut self, from: usize, to: usize, payload: T) {
        let leaves = payload.leaves();
        self.stats.record_send(self.now, leaves);
        self.trace.push(TraceEvent::Send { tick: self.now, from, to, leaves });
        let index = self.link_sends.entry((self.now, from, to)).or_insert(0);
        let mut rng = link_rng(self.cfg.seed, self.now, from, to, *index);
        *index += 1;
        if !self.partition.connected(from, to) || rng.gen_bool(self.cfg.drop.clamp(0.0, 1.0)) {
            self.stats.dropped += 1;
            self.trace.push(TraceEvent::Drop { tick: self.now, from, to });
            return;
        }
        let copies = if rng.gen_bool(self.cfg.dup.clamp(0.0, 1.0)) {
            self.stats.duplicated += 1;
            2
        } else {
            1
        };
        for _ in 0..copies {
            let delay = 1 + rng.gen_range(0..=self.cfg.reorder);
            self.queue.push(self.now + delay, (from, to, payload.clone()));
        }
    }

    fn arrive(&mut self, from: usize, to: usize, payload: T) {
        if !self.partition.connected(from, to) {
            self.stats.dropped += 1;
            self.trace.push(TraceEvent::Drop { tick: self.now, from, to });
            return;
        }
        self.trace.push(TraceEvent::Receive { tick: self.now, from, to, leaves: payload.leaves() });
        self.nodes[to].receive(ReplicaId(from as u32), &payload);
        self.received[to].push(payload);
    }

    /// Sends and receives in the same instant, bypassing faults.
    fn exchange(&mut self, from: usize, to: usize, payload: T) {
        let leaves = payload.leaves();
        self.stats.record_send(self.now, leaves);
        self.trace.push(TraceEvent::Send { tick: self.now, from, to, leaves });
        self.arrive(from, to, payload);
    }

    fn gossip_round(&mut self) {
        for i in 0..self.nodes.len() {
            for (to, payload) in self.nodes[i].tick() {
                self.transmit(i, to.0 as usize, payload);
            }
        }
    }
}

impl<T: DeltaCrdt> Cluster for GossipCluster<T> {
    fn approach(&self) -> Approach {
        self.approach
    }

    fn size(&self) -> usize {
        self.nodes.len()
    }

    fn now(&self) -> u64 {
        self.now
    }

    fn begin_tick(&mut self, tick: u64) {
        self.now = self.now.max(tick);
        while let Some((_, (from, to, payload))) = self.queue.pop_due(self.now) {
            self.arrive(from, to, payload);
        }
    }

    fn end_tick(&mut self) {
        if !self.cfg.manual && self.now.is_multiple_of(self.cfg.gossip_interval.max(1)) {
            self.gossip_round();
        }
    }

    fn invoke(&mut self, node: usize, op: &Op) -> Result<(), CrdtError> {
        let result = self.nodes[node].operate(op);
        self.trace.push(TraceEvent::Invoke {
            tick: self.now,
            node,
            op: op.to_string(),
            error: result.as_ref().err().map(ToString::to_string),
        });
        result
    }

    fn beacon(&mut self, _: usize) {}

    fn partition(&mut self, groups: &[Vec<usize>]) {
        self.partition = Partition::split(self.nodes.len(), groups);
    }

    fn heal(&mut self) {
        self.partition.heal();
    }

    fn flush(&mut self) {
        for (from, to, payload) in self.queue.drain_all() {
            self.arrive(from, to, payload);
        }
        let n = self.nodes.len();
        let topology = if self.cfg.manual { Topology::Clique } else { self.cfg.topology };
        for _ in 0..n {
            for i in 0..n {
                for j in topology.neighbors(i, n) {
                    let j = j.0 as usize;
                    if self.partition.connected(i, j) {
                        let x = self.nodes[i].state().clone();
                        self.exchange(i, j, x);
                    }
                }
            }
        }
    }

    fn sync(&mut self, node: usize) {
        let payloads: Vec<(usize, T)> = match &mut self.nodes[node] {
            Gossiper::State(r, _) => {
                let x = r.state.clone();
                (0..self.cfg.nodes).filter(|&j| j != node).map(|j| (j, x.clone())).collect()
            }
            Gossiper::Delta(r) => r.tick().into_iter().map(|(to, p)| (to.0 as usize, p)).collect(),
        };
        for (to, payload) in payloads {
            self.exchange(node, to, payload);
        }
    }

    fn query(&self, node: usize, q: &Query) -> Result<Output, CrdtError> {
        self.nodes[node].state().query(q)
    }

    fn state_leaves(&self, node: usize) -> usize {
        self.nodes[node].state().leaves()
    }

    fn settled(&self) -> bool {
        self.states_equal().unwrap_or(true)
    }

    fn states_equal(&self) -> Option<bool> {
        let first = self.nodes.first()?.state();
        Some(self.nodes.iter().all(|n| n.state() == first))
    }

    fn replay_changes_state(&self) -> Option<bool> {
        Some(self.nodes.iter().zip(&self.received).any(|(node, got)| {
            let mut copy = node.clone();
            let before = copy.state().clone();
            for p in got {
                copy.receive(ReplicaId(u32::MAX), p);
            }
            *copy.state() != before
        }))
    }

    fn stats(&self) -> &NetStats {
        &self.stats
    }

    fn trace(&self) -> &[TraceEvent] {
        &self.trace
    }

    fn note(&mut self, text: String) {
        self.trace.push(TraceEvent::Note { tick: self.now, text });
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::statebased::{GSet, ORSet};

    fn run(c: &mut impl Cluster, to: u64) {
        for t in c.now() + 1..=to {
            c.begin_tick(t);
            c.end_tick();
        }
    }

    #[test]
    fn state_gossip_converges_on_a_line() {
        let cfg = NetConfig { nodes: 4, topology: Topology::Line, ..NetConfig::default() };
        let mut c = GossipCluster::<GSet>::new(Approach::State, cfg);
        c.invoke(0, &Op::Add("a".into())).unwrap();
        c.invoke(3, &Op::Add("b".into())).unwrap();
        run(&mut c, 8);
        assert_eq!(c.states_equal(), Some(true));
        assert_eq!(c.query(1, &Query::Elements).unwrap(), Output::set(["a", "b"]));
    }

    #[test]
    fn lossy_delta_gossip_converges_after_flush() {
        let cfg = NetConfig { nodes: 3, seed: 11, drop: 0.5, dup: 0.3, reorder: 3, ..NetConfig::default() };
        for approach in [Approach::DeltaNaive, Approach::DeltaImproved] {
            let mut c = GossipCluster::<ORSet>::new(approach, cfg.clone());
            for t in 1..=12u64 {
                c.begin_tick(t);
                let e = format!("e{}", t % 4);
                let op = if t % 3 == 0 { Op::Remove(e) } else { Op::Add(e) };
                c.invoke((t % 3) as usize, &op).unwrap();
                c.end_tick();
            }
            c.flush();
            assert_eq!(c.states_equal(), Some(true));
            assert_eq!(c.replay_changes_state(), Some(false));
            assert!(c.stats().dropped > 0);
        }
    }

    #[test]
    fn partition_isolates_until_healed() {
        let cfg = NetConfig { nodes: 3, ..NetConfig::default() };
        let mut c = GossipCluster::<GSet>::new(Approach::DeltaImproved, cfg);
        c.partition(&[vec![0, 1], vec![2]]);
        c.invoke(0, &Op::Add("a".into())).unwrap();
        run(&mut c, 4);
        assert_eq!(c.query(1, &Query::Elements).unwrap(), Output::set(["a"]));
        assert_eq!(c.query(2, &Query::Elements).unwrap(), Output::set(Vec::<&str>::new()));
        c.heal();
        c.flush();
        assert_eq!(c.states_equal(), Some(true));
    }

    #[test]
    fn manual_sync_spreads_knowledge() {
        let cfg = NetConfig { nodes: 3, topology: Topology::Line, manual: true, ..NetConfig::default() };
        let mut c = GossipCluster::<GSet>::new(Approach::DeltaNaive, cfg);
        c.invoke(2, &Op::Add("z".into())).unwrap();
        run(&mut c, 5);
        assert_eq!(c.query(0, &Query::Contains("z".into())).unwrap(), Output::Bool(false));
        c.sync(2);
        assert_eq!(c.query(0, &Query::Contains("z".into())).unwrap(), Output::Bool(true));
    }
}
