//! Executes scenarios against simulated clusters.

use std::fmt::Write as _;

use log::{debug, info};

use crate::model::{render_result, Approach, DataType, Op, Query, ReplicaId};
use crate::opbased::{self, OpReplica};
use crate::purelog;
use crate::report::{lag_histogram, Check, QueryRecord, Report};
use crate::scenario::{AuctionPolicy, Command, Header, Scenario, Step};
use crate::sim::{BroadcastCluster, BroadcastNode, Cluster, GossipCluster, PureNode};
use crate::statebased;

fn op_cluster<T>(h: &Header) -> Box<dyn Cluster>
where
    T: opbased::OpBasedCrdt + 'static,
    OpReplica<T>: BroadcastNode,
{
    let nodes = (0..h.net.nodes).map(|i| OpReplica::<T>::new(ReplicaId(i as u32))).collect();
    Box::new(BroadcastCluster::new(nodes, h.net.clone()))
}

fn pure_cluster<D: purelog::PureCrdt + 'static>(h: &Header) -> Box<dyn Cluster>
where
    PureNode<D>: BroadcastNode,
{
    let admin = ReplicaId(h.admin as u32);
    let nodes = (0..h.net.nodes).map(|i| PureNode::<D>::new(ReplicaId(i as u32), admin)).collect();
    Box::new(BroadcastCluster::new(nodes, h.net.clone()))
}

fn gossip_cluster<T: crate::delta::DeltaCrdt + 'static>(h: &Header) -> Box<dyn Cluster> {
    Box::new(GossipCluster::<T>::new(h.approach, h.net.clone()))
}

/// A fresh cluster for the header's datatype, approach and network.
///
/// # Panics
///
/// If the approach does not implement the datatype; parsed scenarios never
/// contain such a header.
pub fn build_cluster(h: &Header) -> Box<dyn Cluster> {
    use Approach::*;
    use DataType as D;
    match (h.datatype, h.approach) {
        (D::GCounter, Op) => op_cluster::<opbased::GCounter>(h),
        (D::PNCounter, Op) => op_cluster::<opbased::PNCounter>(h),
        (D::GSet, Op) => op_cluster::<opbased::GSet>(h),
        (D::ORSet, Op) => op_cluster::<opbased::ORSet>(h),
        (D::ORSetNaive, Op) => op_cluster::<opbased::ORSetNaive>(h),
        (D::MVReg, Op) => op_cluster::<opbased::MVReg>(h),
        (D::GCounter, Pure) => pure_cluster::<purelog::GCounter>(h),
        (D::PNCounter, Pure) => pure_cluster::<purelog::PNCounter>(h),
        (D::GSet, Pure) => pure_cluster::<purelog::GSet>(h),
        (D::ORSet, Pure) => pure_cluster::<purelog::ORSet>(h),
        (D::Auction, Pure) => pure_cluster::<purelog::Auction>(h),
        (D::GCounter, State | DeltaNaive | DeltaImproved) => gossip_cluster::<statebased::GCounter>(h),
        (D::PNCounter, State | DeltaNaive | DeltaImproved) => gossip_cluster::<statebased::PNCounter>(h),
        (D::GSet, State | DeltaNaive | DeltaImproved) => gossip_cluster::<statebased::GSet>(h),
        (D::ORSet, State | DeltaNaive | DeltaImproved) => gossip_cluster::<statebased::ORSet>(h),
        (D::Advancer, State | DeltaNaive | DeltaImproved) => gossip_cluster::<statebased::Advancer>(h),
        (dt, a) => panic!("approach {a} does not implement {dt}"),
    }
}

/// Observation results per node.
pub fn observe(cluster: &dyn Cluster, dt: DataType) -> Vec<Vec<(Query, String)>> {
    (0..cluster.size())
        .map(|i| dt.observation_queries().into_iter().map(|q| {
            let r = render_result(&cluster.query(i, &q));
            (q, r)
        }).collect())
        .collect()
}

/// Whether every node gives the same observation results.
pub fn converged(cluster: &dyn Cluster, dt: DataType) -> bool {
    let obs = observe(cluster, dt);
    obs.windows(2).all(|w| w[0] == w[1])
}

/// Whether compacted replicas answer like their uncompacted logs, where
/// such logs are kept.
pub fn reference_match(cluster: &dyn Cluster, dt: DataType) -> Option<bool> {
    let mut any = false;
    for i in 0..cluster.size() {
        for q in dt.observation_queries() {
            if let Some(expected) = cluster.reference_query(i, &q) {
                any = true;
                if render_result(&expected) != render_result(&cluster.query(i, &q)) {
                    return Some(false);
                }
            }
        }
    }
    any.then_some(true)
}

struct Deferred {
    node: usize,
    since: u64,
}

/// A finished run: the report plus the cluster in its final state.
pub struct Run {
    pub report: Report,
    pub cluster: Box<dyn Cluster>,
}

impl Run {
    /// The run's trace, one event per line.
    pub fn trace_text(&self) -> String {
        let mut out = String::new();
        for ev in self.cluster.trace() {
            let _ = writeln!(out, "trace {ev}");
        }
        out
    }
}

struct Runner<'a> {
    scenario: &'a Scenario,
    cluster: Box<dyn Cluster>,
    deferred: Vec<Deferred>,
    queries: Vec<QueryRecord>,
    checks: Vec<Check>,
    invoke_errors: Vec<String>,
    notes: Vec<String>,
}

impl Runner<'_> {
    fn header(&self) -> &Header {
        &self.scenario.header
    }

    fn invoke(&mut self, line: usize, node: usize, op: &Op) {
        if let Err(e) = self.cluster.invoke(node, op) {
            let now = self.cluster.now();
            debug!("line {line}: node {node} {op}: {e}");
            self.invoke_errors.push(format!("line{line} tick={now} node={node} op={op} error={e}"));
        }
    }

    fn closing_unstable(&self, node: usize) -> bool {
        self.cluster.unstable_ops(node).contains(&Op::Closing)
    }

    /// Issues every deferred `closed` whose wait is over. Returns whether
    /// any was issued.
    fn release_deferred(&mut self) -> bool {
        let now = self.cluster.now();
        let policy = self.header().auction_policy;
        let pending = std::mem::take(&mut self.deferred);
        let mut fired = false;
        for d in pending {
            let timed_out = matches!(policy, AuctionPolicy::Timeout(n) if now >= d.since + n);
            if timed_out || !self.closing_unstable(d.node) {
                let note = format!("tick={now} node={} closed issued", d.node);
                self.cluster.note(note.clone());
                self.notes.push(note);
                self.invoke(0, d.node, &Op::Closed);
                fired = true;
            } else {
                self.deferred.push(d);
            }
        }
        fired
    }

    fn execute(&mut self, step: &Step) {
        let n = self.cluster.size();
        let dt = self.header().datatype;
        let now = self.cluster.now();
        match &step.command {
            Command::Invoke { node, op: Op::Closed }
                if self.header().auction_policy != AuctionPolicy::Immediate && self.closing_unstable(*node) =>
            {
                let note = format!("tick={now} node={node} closed deferred");
                self.cluster.note(note.clone());
                self.notes.push(note);
                self.deferred.push(Deferred { node: *node, since: now });
            }
            Command::Invoke { node, op } => self.invoke(step.line, *node, op),
            Command::Beacon(Some(i)) => self.cluster.beacon(*i),
            Command::Beacon(None) => (0..n).for_each(|i| self.cluster.beacon(i)),
            Command::Partition(groups) => self.cluster.partition(groups),
            Command::Heal => self.cluster.heal(),
            Command::Flush => {
                self.cluster.flush();
                while self.release_deferred() {
                    self.cluster.flush();
                }
            }
            Command::Sync(i) => self.cluster.sync(*i),
            Command::QueryAll(q) => {
                let results = (0..n).map(|i| render_result(&self.cluster.query(i, q))).collect();
                self.queries.push(QueryRecord { line: step.line, tick: now, query: q.clone(), results });
            }
            Command::AssertConverged => {
                let obs = observe(self.cluster.as_ref(), dt);
                let passed = obs.windows(2).all(|w| w[0] == w[1]);
                let detail = obs
                    .iter()
                    .enumerate()
                    .map(|(i, o)| format!("node{i}={}", o.iter().map(|(_, r)| r.as_str()).collect::<Vec<_>>().join("/")))
                    .collect::<Vec<_>>()
                    .join(" ");
                self.checks.push(Check { line: step.line, tick: now, passed, detail: format!("assert-converged {detail}") });
            }
            Command::Expect { node, query, value } => {
                let targets: Vec<usize> = node.map_or_else(|| (0..n).collect(), |i| vec![i]);
                let got: Vec<String> = targets.iter().map(|&i| render_result(&self.cluster.query(i, query))).collect();
                let passed = got.iter().all(|g| g == value);
                let who = node.map_or("all".to_owned(), |i| format!("node{i}"));
                let mut detail = format!("expect {who} {query} == {value}");
                if !passed {
                    let _ = write!(detail, " got {}", got.join(","));
                }
                self.checks.push(Check { line: step.line, tick: now, passed, detail });
            }
        }
        self.release_deferred();
    }
}

/// Runs `scenario` to its last tick.
pub fn run(scenario: &Scenario, name: &str) -> Run {
    let h = &scenario.header;
    info!("running {name}: {} under {} on {} nodes", h.datatype, h.approach, h.net.nodes);
    let mut r = Runner {
        scenario,
        cluster: build_cluster(h),
        deferred: Vec::new(),
        queries: Vec::new(),
        checks: Vec::new(),
        invoke_errors: Vec::new(),
        notes: Vec::new(),
    };
    let end = scenario.end_tick();
    let mut steps = scenario.steps.iter().peekable();
    let mut agreeing_since: Option<u64> = None;
    for tick in 0..=end {
        r.cluster.begin_tick(tick);
        r.release_deferred();
        while let Some(step) = steps.next_if(|s| s.tick == tick) {
            r.execute(step);
        }
        r.cluster.end_tick();
        r.release_deferred();
        if r.cluster.settled() && converged(r.cluster.as_ref(), h.datatype) {
            agreeing_since.get_or_insert(tick);
        } else {
            agreeing_since = None;
        }
    }
    for d in &r.deferred {
        r.notes.push(format!("node={} closed never issued", d.node));
    }

    let cluster = r.cluster;
    let n = cluster.size();
    let stats = cluster.stats().clone();
    let interval = h.net.gossip_interval.max(1);
    let payload_series = match h.approach.is_broadcast() {
        true => Vec::new(),
        false => (0..=end).filter(|t| t % interval == 0).map(|t| (t, stats.per_tick.get(&t).copied().unwrap_or(0))).collect(),
    };
    let is_converged = cluster.settled() && converged(cluster.as_ref(), h.datatype);
    let timestamped: Option<Vec<usize>> = (0..n).map(|i| cluster.timestamped_len(i)).collect();
    let report = Report {
        scenario: name.to_owned(),
        datatype: h.datatype,
        approach: h.approach,
        nodes: n,
        seed: h.net.seed,
        end_tick: end,
        messages: stats.messages,
        payload: stats.payload,
        dropped: stats.dropped,
        duplicated: stats.duplicated,
        state_leaves: (0..n).map(|i| cluster.state_leaves(i)).collect(),
        timestamped,
        converged: is_converged,
        convergence_tick: if is_converged { agreeing_since } else { None },
        states_equal: cluster.states_equal(),
        reference_match: reference_match(cluster.as_ref(), h.datatype),
        lag_histogram: lag_histogram(cluster.stability_lags()),
        payload_series,
        observations: observe(cluster.as_ref(), h.datatype),
        queries: r.queries,
        checks: r.checks,
        invoke_errors: r.invoke_errors,
        notes: r.notes,
    };
    Run { report, cluster }
}

/// Outcome of running one scenario under several approaches.
pub struct Comparison {
    pub reports: Vec<Report>,
    /// Human-readable descriptions of cross-approach disagreements.
    pub divergences: Vec<String>,
}

impl Comparison {
    pub fn passed(&self) -> bool {
        self.divergences.is_empty() && self.reports.iter().all(Report::passed)
    }

    pub fn table(&self) -> String {
        let header = ["approach", "messages", "payload", "max_state", "total_state", "converged_at", "result"];
        let rows: Vec<[String; 7]> = self
            .reports
            .iter()
            .map(|r| {
                [
                    r.approach.to_string(),
                    r.messages.to_string(),
                    r.payload.to_string(),
                    r.max_state_leaves().to_string(),
                    r.state_leaves.iter().sum::<usize>().to_string(),
                    r.convergence_tick.map_or("-".to_owned(), |t| t.to_string()),
                    if r.passed() { "pass" } else { "fail" }.to_owned(),
                ]
            })
            .collect();
        let widths: Vec<usize> = (0..header.len())
            .map(|c| rows.iter().map(|r| r[c].len()).chain([header[c].len()]).max().unwrap_or(0))
            .collect();
        let mut out = String::new();
        let line = |cells: Vec<&str>| {
            let padded: Vec<String> = cells.iter().zip(&widths).map(|(c, w)| format!("{c:<w$}")).collect();
            padded.join("  ").trim_end().to_owned()
        };
        let _ = writeln!(out, "{}", line(header.to_vec()));
        for r in &rows {
            let _ = writeln!(out, "{}", line(r.iter().map(String::as_str).collect()));
        }
        if let Some(first) = self.reports.first() {
            for (q, v) in first.observations.first().into_iter().flatten() {
                let _ = writeln!(out, "final {q} = {v}");
            }
        }
        for d in &self.divergences {
            let _ = writeln!(out, "divergence: {d}");
        }
        out
    }
}

/// Runs `scenario` under each approach with a final flush (or a round of
/// syncs, under manual delivery) and checks that all of them answer every
/// observation query alike at every node.
pub fn compare(scenario: &Scenario, name: &str, approaches: &[Approach]) -> Result<Comparison, String> {
    let dt = scenario.header.datatype;
    if let Some(a) = approaches.iter().find(|a| !dt.supports(**a)) {
        return Err(format!("approach {a} does not implement {dt}"));
    }
    let mut reports = Vec::new();
    for &a in approaches {
        let mut s = scenario.with_approach(a);
        let line = s.steps.last().map_or(0, |st| st.line);
        let tick = s.end_tick();
        let finals: Vec<Command> = match s.header.net.manual {
            false => vec![Command::Flush],
            true => (0..s.header.net.nodes).map(Command::Sync).collect(),
        };
        s.steps.extend(finals.into_iter().map(|command| Step { line, tick, command }));
        reports.push(run(&s, name).report);
    }
    let mut divergences = Vec::new();
    if let Some(base) = reports.first() {
        let expected = base.observations.first().cloned().unwrap_or_default();
        for r in &reports {
            for (i, node) in r.observations.iter().enumerate() {
                if *node != expected {
                    divergences.push(format!(
                        "{} node{i} answered {} where {} node0 answered {}",
                        r.approach,
                        render_obs(node),
                        base.approach,
                        render_obs(&expected)
                    ));
                }
            }
        }
    }
    Ok(Comparison { reports, divergences })
}

fn render_obs(obs: &[(Query, String)]) -> String {
    obs.iter().map(|(q, v)| format!("{q}={v}")).collect::<Vec<_>>().join(" ")
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scenario(text: &str) -> Scenario {
        text.parse().unwrap()
    }

    #[test]
    fn empty_scenario_has_empty_trace() {
        let run = run(&scenario("datatype gcounter\napproach op\n"), "empty");
        assert!(run.cluster.trace().is_empty());
        assert!(run.report.passed());
    }

    #[test]
    fn two_node_counter_converges() {
        let s = scenario("nodes 2\ndatatype gcounter\napproach op\nat 1 node 0 inc\nnode 1 inc\nat 3 expect value == 2\n");
        let run = run(&s, "t");
        assert!(run.report.passed(), "{}", run.report.render());
        assert_eq!(run.report.convergence_tick, Some(2));
    }

    #[test]
    fn failing_expect_fails_the_run() {
        let s = scenario("datatype gset\napproach state\nat 1 node 0 add a\nexpect node 1 contains a == true\n");
        assert!(!run(&s, "t").report.passed());
    }

    #[test]
    fn compare_rejects_unsupported_approach() {
        let s = scenario("datatype mvreg\napproach op\n");
        assert!(compare(&s, "t", &[Approach::Op, Approach::State]).is_err());
    }

    #[test]
    fn compare_counts_agree() {
        let s = scenario("nodes 3\ndatatype pncounter\nat 1 node 0 inc\nnode 1 dec\nnode 2 inc\n");
        let c = compare(&s, "t", &Approach::ALL).unwrap();
        assert!(c.passed(), "{}", c.table());
        assert!(c.table().contains("final value = 1"));
    }
}
