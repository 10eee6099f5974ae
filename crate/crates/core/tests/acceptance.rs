//! Acceptance gate: runs every criterion and prints one line per criterion.

mod common;

use std::fs;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::time::{Duration, Instant};

use rand::Rng;

use common::{decomposable, law_shapes, random_op, random_value, reachable, rng, History};
use crdt_workbench::delta::{optimal_delta, DeltaCrdt};
use crdt_workbench::lattice::{Decompose, Lattice, LatticeValue};
use crdt_workbench::model::{render_result, Approach, DataType, Op, Query, ReplicaId};
use crdt_workbench::opbased::{self, OpBasedCrdt, OpReplica};
use crdt_workbench::runner::{self, build_cluster};
use crdt_workbench::scenario::{Command, Scenario};
use crdt_workbench::sim::{causal_order_check, stability_safety_check, Cluster};
use crdt_workbench::statebased::{self, StateCrdt};

/// Criterion 1 time budget.
const LAW_SUITE_BUDGET: Duration = Duration::from_secs(10);
/// Cases per lattice shape in criterion 1.
const LAW_CASES: usize = 1000;
/// Histories per datatype in criteria 2 and 6.
const HISTORIES: usize = 500;
/// Random (state, op) pairs per datatype in criteria 5 and 7.
const STATE_OP_CASES: usize = 1000;
/// Random faulty scenarios in criterion 9.
const FAULT_SCENARIOS: usize = 200;
/// Accepted range for the 10-node over 5-node state size ratio.
const STATE_RATIO_RANGE: (f64, f64) = (1.8, 2.2);
/// Required op-based state size ratio.
const OP_RATIO: f64 = 1.0;

type Outcome = Result<String, String>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn scenario_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../scenarios")
}

fn bundled(name: &str) -> Scenario {
    let path = scenario_dir().join(format!("{name}.scn"));
    fs::read_to_string(&path).expect("bundled scenario").parse().expect("bundled scenario parses")
}

fn lv(r: Result<LatticeValue, crdt_workbench::lattice::LatticeError>) -> Result<LatticeValue, String> {
    r.map_err(|e| e.to_string())
}

fn check_value_laws(a: &LatticeValue, b: &LatticeValue, c: &LatticeValue, decompose: bool) -> Result<(), String> {
    let ab = lv(a.join(b))?;
    ensure(lv(a.join(a))? == *a, || format!("idempotence fails at {a}"))?;
    ensure(ab == lv(b.join(a))?, || format!("commutativity fails at {a}, {b}"))?;
    let left = lv(ab.join(c))?;
    let right = lv(a.join(&lv(b.join(c))?))?;
    ensure(left == right, || format!("associativity fails at {a}, {b}, {c}"))?;
    let leq = a.leq(b).map_err(|e| e.to_string())?;
    ensure(leq == (ab == *b), || format!("leq disagrees with join at {a}, {b}"))?;
    if decompose {
        let d = a.decompose().map_err(|e| e.to_string())?;
        ensure(d.is_sound().map_err(|e| e.to_string())?, || format!("unsound decomposition of {a}"))?;
        ensure(d.is_irredundant().map_err(|e| e.to_string())?, || format!("redundant decomposition of {a}"))?;
        let delta = lv(a.difference(b))?;
        ensure(lv(b.join(&delta))? == ab, || format!("difference law fails at {a}, {b}"))?;
    }
    Ok(())
}

fn check_typed_laws<T: StateCrdt + Decompose>(dt: DataType, seed: u64) -> Result<(), String> {
    let mut r = rng(seed);
    for _ in 0..LAW_CASES {
        let a: T = reachable(dt, &mut r);
        let b: T = reachable(dt, &mut r);
        let c: T = reachable(dt, &mut r);
        ensure(a.join(&a) == a, || format!("{dt}: idempotence fails at {a:?}"))?;
        ensure(a.join(&b) == b.join(&a), || format!("{dt}: commutativity fails"))?;
        ensure(a.join(&b).join(&c) == a.join(&b.join(&c)), || format!("{dt}: associativity fails"))?;
        ensure(a.leq(&b) == (a.join(&b) == b), || format!("{dt}: leq disagrees with join"))?;
        let parts = a.decompose().map_err(|e| e.to_string())?;
        let joined = parts.iter().fold(T::bottom(), |acc, p| acc.join(p));
        ensure(joined == a, || format!("{dt}: unsound decomposition of {a:?}"))?;
        for skip in 0..parts.len() {
            let rest = parts.iter().enumerate().filter(|(i, _)| *i != skip).fold(T::bottom(), |acc, (_, p)| acc.join(p));
            ensure(rest != a, || format!("{dt}: redundant decomposition of {a:?}"))?;
        }
        let delta = a.difference(&b).map_err(|e| e.to_string())?;
        ensure(b.join(&delta) == a.join(&b), || format!("{dt}: difference law fails"))?;
    }
    Ok(())
}

fn lattice_laws() -> Outcome {
    let start = Instant::now();
    let mut r = rng(1);
    let shapes = law_shapes();
    for shape in &shapes {
        let dec = decomposable(shape);
        for _ in 0..LAW_CASES {
            let (a, b, c) = (random_value(shape, &mut r), random_value(shape, &mut r), random_value(shape, &mut r));
            check_value_laws(&a, &b, &c, dec).map_err(|e| format!("shape {shape}: {e}"))?;
        }
    }
    check_typed_laws::<statebased::GCounter>(DataType::GCounter, 2)?;
    check_typed_laws::<statebased::PNCounter>(DataType::PNCounter, 3)?;
    check_typed_laws::<statebased::GSet>(DataType::GSet, 4)?;
    check_typed_laws::<statebased::Advancer>(DataType::Advancer, 5)?;
    check_typed_laws::<statebased::ORSet>(DataType::ORSet, 6)?;
    let elapsed = start.elapsed();
    ensure(elapsed < LAW_SUITE_BUDGET, || format!("took {elapsed:?}"))?;
    Ok(format!("{} shapes x {LAW_CASES} cases, 0 failures, {:.2}s", shapes.len() + 5, elapsed.as_secs_f64()))
}

fn differential_oracle() -> Outcome {
    let approaches = [Approach::Op, Approach::Pure, Approach::State, Approach::DeltaImproved];
    let mut r = rng(20);
    let mut runs = 0;
    for dt in [DataType::GCounter, DataType::PNCounter, DataType::GSet, DataType::ORSet] {
        for _ in 0..HISTORIES {
            let h = History::random(dt, &mut r, 4, 8);
            let expected = h.oracle();
            let cmp = runner::compare(&h.scenario("op"), "history", &approaches)?;
            ensure(cmp.divergences.is_empty(), || format!("{dt}: {}\n{}", cmp.divergences.join("; "), h.scenario_text("op")))?;
            for rep in &cmp.reports {
                for (i, node) in rep.observations.iter().enumerate() {
                    let got = &node[0].1;
                    ensure(*got == expected, || {
                        format!("{dt} {} node{i}: {got} != oracle {expected}\n{}", rep.approach, h.scenario_text("op"))
                    })?;
                }
                if rep.approach == Approach::Pure {
                    ensure(rep.reference_match == Some(true), || format!("{dt}: pure differs from its uncompacted log"))?;
                }
                runs += 1;
            }
        }
    }
    Ok(format!("{} histories, {runs} runs, 0 divergences", 4 * HISTORIES))
}

fn commute<T: OpBasedCrdt + Clone>(alpha: &[Op], depth: usize, r0: &OpReplica<T>, r1: &OpReplica<T>) -> Result<usize, String> {
    if depth == 0 {
        return Ok(0);
    }
    let mut checked = 0;
    for p in alpha {
        for q in alpha {
            let (mut a, mut b): (OpReplica<T>, OpReplica<T>) = (r0.clone(), r1.clone());
            let mp = a.prepare(p).map_err(|e| e.to_string())?;
            let mq = b.prepare(q).map_err(|e| e.to_string())?;
            a.effect(&mp);
            a.effect(&mq);
            b.effect(&mq);
            b.effect(&mp);
            ensure(a.state == b.state, || format!("{}: {p} || {q} diverges: {:?} vs {:?}", T::NAME, a.state, b.state))?;
            checked += 1 + commute(alpha, depth - 1, &a, &b)?;
        }
    }
    Ok(checked)
}

fn commute_all<T: OpBasedCrdt + Clone>(alpha: &[Op]) -> Result<usize, String> {
    commute::<T>(alpha, 4, &OpReplica::new(ReplicaId(0)), &OpReplica::new(ReplicaId(1)))
}

fn effect_commutativity() -> Outcome {
    let add = |e: &str| Op::Add(e.into());
    let rem = |e: &str| Op::Remove(e.into());
    let set_ops = [add("a"), rem("a"), add("b"), rem("b")];
    let mut total = 0;
    total += commute_all::<opbased::GCounter>(&[Op::Inc])?;
    total += commute_all::<opbased::PNCounter>(&[Op::Inc, Op::Dec])?;
    total += commute_all::<opbased::GSet>(&[add("a"), add("b")])?;
    total += commute_all::<opbased::ORSet>(&set_ops)?;
    total += commute_all::<opbased::ORSetNaive>(&set_ops)?;
    total += commute_all::<opbased::MVReg>(&[Op::Write("x".into()), Op::Write("y".into())])?;
    Ok(format!("{total} concurrent pairs over histories of up to 4 pairs, 6 datatypes"))
}

fn add_wins() -> Outcome {
    let s = bundled("addwins-cross");
    for a in [Approach::Op, Approach::Pure, Approach::State, Approach::DeltaImproved] {
        let run = runner::run(&s.with_approach(a), "addwins-cross");
        for (i, node) in run.report.observations.iter().enumerate() {
            ensure(node[0].1 == "{a,b}", || format!("{a} node{i} converged to {}", node[0].1))?;
        }
        ensure(run.report.passed(), || format!("{a}: scenario checks failed"))?;
    }
    Ok("add(a);remove(b) || add(b);remove(a) gives {a,b} under op, pure, state, delta-improved".into())
}

fn advancer() -> Outcome {
    for (name, want) in [
        ("advancer-sequential", "{a:1,b:2}"),
        ("advancer-sequential-reversed", "{a:2,b:1}"),
        ("advancer-concurrent", "{a:1,b:1}"),
    ] {
        let run = runner::run(&bundled(name), name);
        for node in &run.report.observations {
            let entries = node.iter().find(|(q, _)| *q == Query::Entries).map(|(_, v)| v.as_str());
            ensure(entries == Some(want), || format!("{name}: got {entries:?}, want {want}"))?;
        }
        ensure(run.report.passed(), || format!("{name}: scenario checks failed"))?;
    }
    let mut r = rng(50);
    for _ in 0..STATE_OP_CASES {
        let s: statebased::Advancer = reachable(DataType::Advancer, &mut r);
        let Op::Advance(e) = random_op(DataType::Advancer, &mut r) else { unreachable!() };
        let once = s.advance(&e);
        ensure(once.advance(&e) == once, || format!("advance({e}) not idempotent on {s:?}"))?;
        ensure(s.leq(&once), || format!("advance({e}) not an inflation on {s:?}"))?;
    }
    Ok(format!("{{a:1,b:2}} / {{a:2,b:1}} / {{a:1,b:1}}; idempotent on {STATE_OP_CASES} states"))
}

fn pure_header(dt: DataType, nodes: usize, reorder: u64, seed: u64) -> Scenario {
    format!("nodes {nodes}\ndatatype {dt}\napproach pure\nreorder {reorder}\nseed {seed}\n").parse().expect("header parses")
}

fn probe_queries(dt: DataType) -> Vec<Query> {
    match dt {
        DataType::GCounter | DataType::PNCounter => vec![Query::Value],
        DataType::GSet | DataType::ORSet => {
            let mut qs = vec![Query::Elements];
            qs.extend(["a", "b", "c"].map(|e| Query::Contains(e.into())));
            qs
        }
        DataType::Auction => vec![Query::Winner, Query::Late],
        _ => vec![],
    }
}

fn compare_with_reference(c: &dyn Cluster, dt: DataType) -> Result<(), String> {
    for i in 0..c.size() {
        for q in probe_queries(dt) {
            let got = render_result(&c.query(i, &q));
            let want = c.reference_query(i, &q).map(|r| render_result(&r));
            ensure(want.as_deref() == Some(got.as_str()), || format!("{dt} node{i} {q}: {got} vs uncompacted {want:?}"))?;
        }
    }
    Ok(())
}

fn pure_compaction() -> Outcome {
    let mut r = rng(60);
    let mut histories = 0;
    let mut comparisons = 0;
    for dt in [DataType::GCounter, DataType::PNCounter, DataType::GSet, DataType::ORSet, DataType::Auction] {
        for _ in 0..HISTORIES {
            let nodes = r.gen_range(1..=4);
            let s = pure_header(dt, nodes, r.gen_range(0..=3), r.gen());
            let mut c = build_cluster(&s.header);
            for tick in 1..=r.gen_range(2..=12u64) {
                c.begin_tick(tick);
                for _ in 0..r.gen_range(0..3) {
                    let node = r.gen_range(0..nodes);
                    match r.gen_range(0..10) {
                        0 => c.beacon(node),
                        1 if nodes > 1 => c.partition(&[vec![0], (1..nodes).collect()]),
                        2 => c.heal(),
                        _ => {
                            let _ = c.invoke(node, &random_op(dt, &mut r));
                        }
                    }
                }
                c.end_tick();
                compare_with_reference(c.as_ref(), dt)?;
                comparisons += 1;
            }
            c.heal();
            c.flush();
            compare_with_reference(c.as_ref(), dt)?;
            for i in 0..nodes {
                ensure(c.timestamped_len(i) == Some(0), || format!("{dt} node{i}: log not drained after stability"))?;
            }
            ensure(stability_safety_check(c.trace()), || format!("{dt}: premature stability"))?;
            ensure(causal_order_check(c.trace()), || format!("{dt}: causal order violated"))?;
            histories += 1;
        }
    }
    Ok(format!("{histories} histories, {comparisons} intermediate comparisons; logs drained; stability safe"))
}

fn delta_laws<T: DeltaCrdt>(dt: DataType, seed: u64) -> Result<(), String> {
    let mut r = rng(seed);
    for _ in 0..STATE_OP_CASES {
        let x: T = reachable(dt, &mut r);
        let op = random_op(dt, &mut r);
        let id = ReplicaId(r.gen_range(0..3));
        let m = x.mutate(id, &op).map_err(|e| e.to_string())?;
        let d = x.delta(id, &op).map_err(|e| e.to_string())?;
        ensure(x.join(&d) == m, || format!("{dt}: X join delta != m(X) for {op} on {x:?}"))?;
        let o = optimal_delta(&x, id, &op).map_err(|e| e.to_string())?;
        ensure(o.leq(&d), || format!("{dt}: optimal delta not below handwritten for {op} on {x:?}"))?;
        ensure(x.join(&o) == m, || format!("{dt}: X join optimal delta != m(X)"))?;
    }
    Ok(())
}

fn delta_soundness() -> Outcome {
    delta_laws::<statebased::GCounter>(DataType::GCounter, 70)?;
    delta_laws::<statebased::PNCounter>(DataType::PNCounter, 71)?;
    delta_laws::<statebased::GSet>(DataType::GSet, 72)?;
    delta_laws::<statebased::ORSet>(DataType::ORSet, 73)?;
    delta_laws::<statebased::Advancer>(DataType::Advancer, 74)?;
    Ok(format!("5 datatypes x {STATE_OP_CASES} (state, op) pairs"))
}

fn mean(xs: &[u64]) -> f64 {
    xs.iter().sum::<u64>() as f64 / xs.len().max(1) as f64
}

fn anti_entropy() -> Outcome {
    let s = bundled("delta-vs-state-clique3");
    let ops: Vec<u64> = s.steps.iter().filter(|st| matches!(st.command, Command::Invoke { .. })).map(|st| st.tick).collect();
    ensure(ops.len() == 30, || format!("expected 30 operations, found {}", ops.len()))?;
    let (first, last) = (ops[0], ops[ops.len() - 1]);
    let cmp = runner::compare(&s, "clique3", &[Approach::State, Approach::DeltaNaive, Approach::DeltaImproved])?;
    ensure(cmp.passed(), || cmp.table())?;
    let [state, naive, improved] = [&cmp.reports[0], &cmp.reports[1], &cmp.reports[2]];
    ensure(improved.payload < naive.payload && naive.payload < state.payload, || {
        format!("payload improved={} naive={} state={}", improved.payload, naive.payload, state.payload)
    })?;
    let series: Vec<u64> =
        naive.payload_series.iter().filter(|(t, _)| (first..=last).contains(t)).map(|&(_, v)| v).collect();
    let q = series.len() / 4;
    let (head, tail) = (mean(&series[..q]), mean(&series[series.len() - q..]));
    ensure(tail > head, || format!("naive per-tick payload did not grow: first quartile {head:.1}, last {tail:.1}"))?;
    Ok(format!(
        "payload improved={} < naive={} < state={}; naive per-tick mean {head:.1} -> {tail:.1}",
        improved.payload, naive.payload, state.payload
    ))
}

fn faulty_scenario(r: &mut rand_chacha::ChaCha8Rng) -> String {
    let dts = [DataType::GCounter, DataType::PNCounter, DataType::GSet, DataType::ORSet, DataType::Advancer];
    let dt = dts[r.gen_range(0..dts.len())];
    let approach = ["state", "delta-naive", "delta-improved"][r.gen_range(0..3)];
    let topology = ["clique", "line", "ring", "star"][r.gen_range(0..4)];
    let nodes = r.gen_range(2..=5);
    let mut text = format!(
        "nodes {nodes}\ndatatype {dt}\napproach {approach}\ntopology {topology}\nseed {}\ndrop 0.3\ndup 0.2\nreorder 5\n",
        r.gen::<u32>()
    );
    let mut tick = 0;
    for _ in 0..r.gen_range(3..15) {
        tick += r.gen_range(0..3);
        match r.gen_range(0..12) {
            0 => text.push_str(&format!("at {tick} partition 0 | {}\n", (1..nodes).map(|i| i.to_string()).collect::<Vec<_>>().join(","))),
            1 => text.push_str(&format!("at {tick} heal\n")),
            _ => text.push_str(&format!("at {tick} node {} {}\n", r.gen_range(0..nodes), random_op(dt, r))),
        }
    }
    text.push_str(&format!("at {} heal\nflush\nassert-converged\n", tick + 2));
    text
}

fn fault_tolerance() -> Outcome {
    let mut r = rng(90);
    let (mut dropped, mut duplicated) = (0, 0);
    for _ in 0..FAULT_SCENARIOS {
        let text = faulty_scenario(&mut r);
        let s: Scenario = text.parse().map_err(|e| format!("{e}\n{text}"))?;
        let run = runner::run(&s, "faulty");
        ensure(run.report.passed(), || format!("did not converge:\n{text}"))?;
        ensure(run.cluster.states_equal() == Some(true), || format!("states differ:\n{text}"))?;
        ensure(run.cluster.replay_changes_state() == Some(false), || format!("redelivery changed state:\n{text}"))?;
        dropped += run.report.dropped;
        duplicated += run.report.duplicated;
    }
    ensure(dropped > 0 && duplicated > 0, || "fault injection never fired".into())?;
    Ok(format!("{FAULT_SCENARIOS}/{FAULT_SCENARIOS} converged; {dropped} drops, {duplicated} duplicates; redelivery idempotent"))
}

fn counter_state_size(approach: &str, nodes: usize) -> usize {
    let mut text = format!("nodes {nodes}\ndatatype gcounter\napproach {approach}\n");
    for i in 0..nodes {
        text.push_str(&format!("at 1 node {i} inc\n"));
    }
    text.push_str("at 2 flush\nassert-converged\n");
    let s: Scenario = text.parse().expect("counter scenario parses");
    let run = runner::run(&s, "counter");
    assert!(run.report.passed());
    run.report.max_state_leaves()
}

fn state_size() -> Outcome {
    let (s5, s10) = (counter_state_size("state", 5), counter_state_size("state", 10));
    let (o5, o10) = (counter_state_size("op", 5), counter_state_size("op", 10));
    let state_ratio = s10 as f64 / s5 as f64;
    let op_ratio = o10 as f64 / o5 as f64;
    ensure((STATE_RATIO_RANGE.0..=STATE_RATIO_RANGE.1).contains(&state_ratio), || format!("state ratio {state_ratio}"))?;
    ensure(op_ratio == OP_RATIO, || format!("op ratio {op_ratio}"))?;
    Ok(format!("state {s5} -> {s10} leaves (x{state_ratio:.2}); op {o5} -> {o10} (x{op_ratio:.2})"))
}

fn auction() -> Outcome {
    let run = runner::run(&bundled("auction"), "auction");
    let rep = &run.report;
    ensure(rep.passed(), || rep.render())?;
    let early = rep.checks.iter().filter(|c| c.detail.contains("winner == error:auction-not-closed")).count();
    ensure(early >= 1, || "no early winner check".into())?;
    for (i, node) in rep.observations.iter().enumerate() {
        let get = |q: Query| node.iter().find(|(k, _)| *k == q).map(|(_, v)| v.clone());
        ensure(get(Query::Winner).as_deref() == Some("bob:60"), || format!("node{i} winner {:?}", get(Query::Winner)))?;
        ensure(get(Query::Late).as_deref() == Some("[carol:70]"), || format!("node{i} late {:?}", get(Query::Late)))?;
    }
    ensure(rep.reference_match == Some(true), || "compacted auction differs from its uncompacted log".into())?;
    Ok(format!("winner bob:60; {early} early winner queries rejected; carol:70 late"))
}

fn determinism() -> Outcome {
    let mut names: Vec<PathBuf> = fs::read_dir(scenario_dir())
        .map_err(|e| e.to_string())?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "scn"))
        .collect();
    names.sort();
    for p in &names {
        let s: Scenario = fs::read_to_string(p).map_err(|e| e.to_string())?.parse().map_err(|e| format!("{}: {e}", p.display()))?;
        let once = runner::run(&s, "x");
        let twice = runner::run(&s, "x");
        let a = once.trace_text() + &once.report.render();
        let b = twice.trace_text() + &twice.report.render();
        ensure(a == b, || format!("{} differs between runs", p.display()))?;
        ensure(once.report.passed(), || format!("{} fails its own checks", p.display()))?;
    }
    Ok(format!("{} bundled scenarios byte-identical across two runs", names.len()))
}

type Criterion = (&'static str, fn() -> Outcome);

fn main() {
    let criteria: [Criterion; 12] = [
        ("lattice laws", lattice_laws),
        ("cross-approach differential oracle", differential_oracle),
        ("op-based effect commutativity", effect_commutativity),
        ("add-wins anomaly", add_wins),
        ("advancer runs", advancer),
        ("pure compaction and stability", pure_compaction),
        ("delta soundness and optimality", delta_soundness),
        ("anti-entropy payload comparison", anti_entropy),
        ("fault tolerance", fault_tolerance),
        ("state size versus replica count", state_size),
        ("auction", auction),
        ("determinism", determinism),
    ];
    let start = Instant::now();
    let mut failed = 0;
    for (n, (name, f)) in criteria.iter().enumerate() {
        let t = Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|p| {
            let msg = p.downcast_ref::<String>().cloned().or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()));
            Err(format!("panicked: {}", msg.unwrap_or_default()))
        });
        let secs = t.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("criterion {:>2} PASS {name}: {detail} [{secs:.2}s]", n + 1),
            Err(why) => {
                failed += 1;
                println!("criterion {:>2} FAIL {name}: {why} [{secs:.2}s]", n + 1);
            }
        }
    }
    println!("acceptance: {}/{} criteria passed in {:.1}s", criteria.len() - failed, criteria.len(), start.elapsed().as_secs_f64());
    if failed > 0 {
        std::process::exit(1);
    }
}
