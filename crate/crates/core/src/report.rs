//! Run metrics and their `key=value` rendering.

use std::fmt::Write as _;

use crate::model::{Approach, DataType, Query};

/// Outcome of one `assert-converged` or `expect` line.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Check {
    pub line: usize,
    pub tick: u64,
    pub passed: bool,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct QueryRecord {
    pub line: usize,
    pub tick: u64,
    pub query: Query,
    /// Rendered result per node.
    pub results: Vec<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Report {
    pub scenario: String,
    pub datatype: DataType,
    pub approach: Approach,
    pub nodes: usize,
    pub seed: u64,
    pub end_tick: u64,
    pub messages: u64,
    pub payload: u64,
    pub dropped: u64,
    pub duplicated: u64,
    pub state_leaves: Vec<usize>,
    /// Timestamped log entries per node (pure only).
    pub timestamped: Option<Vec<usize>>,
    pub converged: bool,
    /// First tick from which every node had caught up and answered alike
    /// through the end.
    pub convergence_tick: Option<u64>,
    pub states_equal: Option<bool>,
    /// Whether compacted replicas matched their uncompacted logs.
    pub reference_match: Option<bool>,
    /// `(low, high, count)` per power-of-two bucket of stability lags.
    pub lag_histogram: Vec<(u64, u64, u64)>,
    /// Payload put on the wire per gossip tick.
    pub payload_series: Vec<(u64, u64)>,
    /// Final observation results, per node, in query order.
    pub observations: Vec<Vec<(Query, String)>>,
    pub queries: Vec<QueryRecord>,
    pub checks: Vec<Check>,
    pub invoke_errors: Vec<String>,
    pub notes: Vec<String>,
}

/// Buckets `0`, `1`, `2-3`, `4-7`, ...
pub fn lag_histogram(lags: &[u64]) -> Vec<(u64, u64, u64)> {
    let mut buckets: Vec<(u64, u64, u64)> = Vec::new();
    for &lag in lags {
        let (lo, hi) = match lag {
            0 => (0, 0),
            n => {
                let lo = 1u64 << (63 - n.leading_zeros());
                (lo, lo.saturating_mul(2) - 1)
            }
        };
        match buckets.iter_mut().find(|b| b.0 == lo) {
            Some(b) => b.2 += 1,
            None => buckets.push((lo, hi, 1)),
        }
    }
    buckets.sort_unstable();
    buckets
}

fn join<T: ToString>(items: impl IntoIterator<Item = T>) -> String {
    items.into_iter().map(|x| x.to_string()).collect::<Vec<_>>().join(",")
}

impl Report {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn max_state_leaves(&self) -> usize {
        self.state_leaves.iter().copied().max().unwrap_or(0)
    }

    /// Payload per gossip tick, in tick order.
    pub fn series_values(&self) -> Vec<u64> {
        self.payload_series.iter().map(|&(_, v)| v).collect()
    }

    pub fn render(&self) -> String {
        let mut out = String::new();
        let mut kv = |k: &str, v: &dyn std::fmt::Display| {
            let _ = writeln!(out, "{k}={v}");
        };
        kv("scenario", &self.scenario);
        kv("datatype", &self.datatype);
        kv("approach", &self.approach);
        kv("nodes", &self.nodes);
        kv("seed", &self.seed);
        kv("end_tick", &self.end_tick);
        kv("messages", &self.messages);
        kv("payload", &self.payload);
        kv("dropped", &self.dropped);
        kv("duplicated", &self.duplicated);
        kv("state_leaves", &join(&self.state_leaves));
        kv("max_state_leaves", &self.max_state_leaves());
        if let Some(t) = &self.timestamped {
            kv("timestamped", &join(t));
        }
        kv("converged", &self.converged);
        kv("convergence_tick", &self.convergence_tick.map_or("none".to_owned(), |t| t.to_string()));
        if let Some(eq) = self.states_equal {
            kv("states_equal", &eq);
        }
        if let Some(m) = self.reference_match {
            kv("reference_match", &m);
        }
        if self.approach == Approach::Pure {
            let hist = self.lag_histogram.iter().map(|&(lo, hi, n)| match lo == hi {
                true => format!("{lo}:{n}"),
                false => format!("{lo}-{hi}:{n}"),
            });
            kv("stability_lag_histogram", &join(hist));
        }
        kv("payload_series", &join(self.payload_series.iter().map(|(t, v)| format!("{t}:{v}"))));
        for (i, node) in self.observations.iter().enumerate() {
            for (q, r) in node {
                kv(&format!("final.node{i}.{}", q.to_string().replace(' ', "_")), r);
            }
        }
        for q in &self.queries {
            for (i, r) in q.results.iter().enumerate() {
                kv(&format!("query.line{}.tick{}.node{i}.{}", q.line, q.tick, q.query.to_string().replace(' ', "_")), r);
            }
        }
        for c in &self.checks {
            let verdict = if c.passed { "pass" } else { "fail" };
            kv(&format!("check.line{}", c.line), &format!("{verdict} tick={} {}", c.tick, c.detail));
        }
        for e in &self.invoke_errors {
            kv("invoke_error", e);
        }
        for n in &self.notes {
            kv("note", n);
        }
        kv("result", &if self.passed() { "pass" } else { "fail" });
        out
    }
}
