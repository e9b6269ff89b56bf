//! Acceptance gate. Runs every criterion in order and prints one PASS/FAIL
//! line each; exits non-zero if any fails or overruns its bound.
//!
//! `cargo test -p vpe-cli --test acceptance -- 3 4` runs a subset.

mod support;

use std::collections::{BTreeMap, BTreeSet};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::sync::atomic::Ordering;
use std::sync::{Arc, Mutex};
use std::thread;
use std::time::{Duration, Instant};

use rand::rngs::StdRng;
use rand::seq::SliceRandom;
use rand::{Rng, RngCore, SeedableRng};
use serde_json::{json, Value};
use uuid::Uuid;
use vpe_core::flowgraph::{
    decode_taskdata, encode_records, encode_taskdata, topo_order, validate_graph, FlowGraph,
    FlowLink, FlowNode, IssueCode, Payload, Producer, TaskData,
};
use vpe_core::processors::{attribute_vector, Inputs, ProcessorRegistry, Relay};
use vpe_core::{DataType, ModuleDescriptor, ModuleId, NodeId};
use vpe_metastore::{FeedbackRecord, MetaStore, ResultRecord, Store, StoreOptions};
use vpe_msgbus::{read_all, Broker, BrokerOptions, Bus, RemoteBus};
use vpe_runtime::{HostOptions, ModuleHost, Observer, StaticDirectory};

use support::{wait_until, Platform, Service};

type Check = fn() -> Result<String, String>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn main() {
    let criteria: [(u32, &str, u64, Check); 9] = [
        (1, "DAG suite", 10, dag_suite),
        (2, "codec suite", 60, codec_suite),
        (3, "broker durability", 30, broker_durability),
        (
            4,
            "fault-injected five-stage pipeline",
            300,
            faulted_pipeline,
        ),
        (5, "recovery under a new version", 60, recovery),
        (6, "multi-input accumulation", 30, accumulation),
        (7, "fan-out routing", 10, fan_out),
        (8, "throughput smoke", 60, throughput),
        (9, "gateway contract", 30, gateway_contract),
    ];
    let only: BTreeSet<u32> = std::env::args()
        .skip(1)
        .filter_map(|a| a.parse().ok())
        .collect();
    let mut failed = 0;
    for (n, name, bound, check) in criteria {
        if !only.is_empty() && !only.contains(&n) {
            continue;
        }
        let start = Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|p| {
            Err(p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panicked".into()))
        });
        let took = start.elapsed();
        let outcome = match outcome {
            Ok(detail) if took > Duration::from_secs(bound) => {
                Err(format!("{detail}; exceeded the {bound}s bound"))
            }
            o => o,
        };
        let (tag, detail) = match outcome {
            Ok(d) => ("PASS", d),
            Err(d) => {
                failed += 1;
                ("FAIL", d)
            }
        };
        println!(
            "{tag} criterion {n}: {name} ({:.2}s of {bound}s): {detail}",
            took.as_secs_f64()
        );
    }
    if failed > 0 {
        println!("{failed} criteria failed");
        std::process::exit(1);
    }
}

fn mid(s: &str) -> ModuleId {
    ModuleId::new(s).unwrap()
}

fn blob() -> DataType {
    DataType::new("Blob").unwrap()
}

// ---- 1 ----

/// Three-colour DFS over the raw link list.
fn dfs_has_cycle(n: NodeId, links: &[(NodeId, NodeId)]) -> bool {
    fn visit(v: NodeId, links: &[(NodeId, NodeId)], colour: &mut [u8]) -> bool {
        colour[v as usize] = 1;
        for &(a, b) in links {
            if a != v {
                continue;
            }
            let c = colour[b as usize];
            if c == 1 || (c == 0 && visit(b, links, colour)) {
                return true;
            }
        }
        colour[v as usize] = 2;
        false
    }
    let mut colour = vec![0u8; n as usize];
    (0..n).any(|v| colour[v as usize] == 0 && visit(v, links, &mut colour))
}

fn random_links(rng: &mut StdRng, n: NodeId, acyclic: bool) -> Vec<(NodeId, NodeId)> {
    let perm: Vec<NodeId> = {
        let mut p: Vec<NodeId> = (0..n).collect();
        p.shuffle(rng);
        p
    };
    let mut seen = BTreeSet::new();
    let mut links = Vec::new();
    for _ in 0..rng.random_range(0..=2 * n) {
        let (a, b) = (rng.random_range(0..n), rng.random_range(0..n));
        let pair = if acyclic {
            if a >= b {
                continue;
            }
            (perm[a as usize], perm[b as usize])
        } else {
            (a, b)
        };
        if seen.insert(pair) {
            links.push(pair);
        }
    }
    links
}

fn dag_suite() -> Result<String, String> {
    let mut rng = StdRng::seed_from_u64(0x0da6);
    let m = mid("M");
    let (mut cyclic, mut acyclic) = (0, 0);
    for i in 0..2000 {
        let n = rng.random_range(1..=10);
        let links = random_links(&mut rng, n, i % 2 == 0);
        let graph = FlowGraph::new(
            (0..n).map(|id| FlowNode::new(id, m.clone())).collect(),
            links.iter().map(|&(a, b)| FlowLink::new(a, b)).collect(),
        );
        let oracle = dfs_has_cycle(n, &links);
        let report = validate_graph(&graph, &[]);
        ensure(report.has(IssueCode::Cycle) == oracle, || {
            format!(
                "graph {i}: oracle cycle={oracle}, validator {:?} for {links:?}",
                report.errors
            )
        })?;
        match topo_order(&graph) {
            Ok(order) => {
                ensure(!oracle && report.ok, || {
                    format!("graph {i}: ordered a cyclic graph {links:?}")
                })?;
                let pos: BTreeMap<NodeId, usize> =
                    order.iter().enumerate().map(|(p, v)| (*v, p)).collect();
                ensure(order.len() == n as usize && pos.len() == n as usize, || {
                    format!("graph {i}: order {order:?} is not a permutation")
                })?;
                for (a, b) in &links {
                    ensure(pos[a] < pos[b], || {
                        format!("graph {i}: {a}->{b} violated by {order:?}")
                    })?;
                }
                acyclic += 1;
            }
            Err(_) => {
                ensure(oracle, || {
                    format!("graph {i}: no order for acyclic {links:?}")
                })?;
                cyclic += 1;
            }
        }
    }
    Ok(format!(
        "2000 graphs agree with the DFS oracle ({cyclic} cyclic, {acyclic} ordered)"
    ))
}

// ---- 2 ----

fn token(rng: &mut StdRng) -> String {
    const HEAD: &[u8] = b"ABCDEFGHIJKLMNOPQRSTUVWXYZabcdefghijklmnopqrstuvwxyz";
    const TAIL: &[u8] = b"ABCDEFGHIJKLMNOPQRSTUVWXYZabcdefghijklmnopqrstuvwxyz0123456789-";
    let mut s = String::new();
    s.push(HEAD[rng.random_range(0..HEAD.len())] as char);
    for _ in 0..rng.random_range(0..8) {
        s.push(TAIL[rng.random_range(0..TAIL.len())] as char);
    }
    s
}

fn text(rng: &mut StdRng) -> String {
    const POOL: &[char] = &[
        'a', 'Z', '0', ' ', '"', '\\', '\n', '|', '=', 'é', '中', '🎥', '\u{0}',
    ];
    (0..rng.random_range(0..6))
        .map(|_| POOL[rng.random_range(0..POOL.len())])
        .collect()
}

fn bytes(rng: &mut StdRng, max: usize) -> Vec<u8> {
    let mut v = vec![0u8; rng.random_range(0..=max)];
    rng.fill_bytes(&mut v);
    v
}

fn random_taskdata(rng: &mut StdRng) -> TaskData {
    let n = rng.random_range(1..=8);
    let mut ids: Vec<NodeId> = (0..n).map(|i| i * 7 + rng.random_range(0..7)).collect();
    ids.shuffle(rng);
    let links: Vec<FlowLink> = random_links(rng, n, true)
        .into_iter()
        .map(|(a, b)| FlowLink::new(ids[a as usize], ids[b as usize]))
        .collect();
    let nodes = ids
        .iter()
        .map(|&id| FlowNode {
            id,
            module: mid(&token(rng)),
            params: (0..rng.random_range(0..3))
                .map(|_| (text(rng), text(rng)))
                .collect(),
            extra: bytes(rng, 8),
        })
        .collect();
    let nme = ids[rng.random_range(0..ids.len())];
    let preds: Vec<NodeId> = links
        .iter()
        .filter(|l| l.to == nme)
        .map(|l| l.from)
        .collect();
    let producer = if preds.is_empty() || rng.random_bool(0.3) {
        Producer::Source
    } else {
        Producer::Node(preds[rng.random_range(0..preds.len())])
    };
    let records = (0..rng.random_range(0..4))
        .map(|_| bytes(rng, 16))
        .collect();
    TaskData {
        task_id: Uuid::from_u128(rng.random()),
        nme,
        graph: FlowGraph::new(nodes, links),
        payload: Payload::new(DataType::new(token(rng)).unwrap(), records, producer),
    }
}

fn mutate(rng: &mut StdRng, seed: &[u8]) -> Vec<u8> {
    let mut v = seed.to_vec();
    for _ in 0..rng.random_range(1..=4) {
        match rng.random_range(0..4) {
            0 if !v.is_empty() => {
                let i = rng.random_range(0..v.len());
                v[i] = rng.random();
            }
            1 if !v.is_empty() => v.truncate(rng.random_range(0..v.len())),
            2 => {
                let i = rng.random_range(0..=v.len());
                v.insert(i, b"{}[]\",:0-9eE\\"[rng.random_range(0..13)]);
            }
            _ if !v.is_empty() => {
                let i = rng.random_range(0..v.len());
                v.remove(i);
            }
            _ => {}
        }
    }
    v
}

fn codec_suite() -> Result<String, String> {
    let mut rng = StdRng::seed_from_u64(0xc0dec);
    let mut seeds = Vec::new();
    for i in 0..1000 {
        let td = random_taskdata(&mut rng);
        let bytes = encode_taskdata(&td).map_err(|e| format!("value {i}: encode: {e}"))?;
        let back = decode_taskdata(&bytes).map_err(|e| format!("value {i}: decode: {e}"))?;
        ensure(back == td, || {
            format!("value {i}: round trip changed {td:?}")
        })?;
        ensure(encode_taskdata(&td).unwrap() == bytes, || {
            format!("value {i}: encoding not deterministic")
        })?;
        let mut shuffled = td.clone();
        shuffled.graph.nodes.shuffle(&mut rng);
        shuffled.graph.links.shuffle(&mut rng);
        ensure(encode_taskdata(&shuffled).unwrap() == bytes, || {
            format!("value {i}: encoding depends on list order")
        })?;
        seeds.push(bytes);
    }
    let mut accepted = 0;
    for i in 0..100_000 {
        let input = if i % 4 == 0 {
            bytes(&mut rng, 96)
        } else {
            let seed = rng.random_range(0..seeds.len());
            mutate(&mut rng, &seeds[seed])
        };
        let decoded = catch_unwind(|| decode_taskdata(&input))
            .map_err(|_| format!("decoder panicked on {:?}", String::from_utf8_lossy(&input)))?;
        if let Ok(td) = decoded {
            let again = decode_taskdata(&encode_taskdata(&td).unwrap()).unwrap();
            ensure(again == td, || {
                format!("accepted input does not re-encode stably: {td:?}")
            })?;
            accepted += 1;
        }
    }
    Ok(format!(
        "1000 round trips; 100000 fuzz inputs, {accepted} accepted, no panic"
    ))
}

// ---- 3 ----

fn broker_durability() -> Result<String, String> {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("bus");
    let start = |log: &str| {
        Service::spawn(
            &["bus", "start", "--dir", data.to_str().unwrap()],
            &dir.path().join(log),
        )
    };
    let broker = start("first.log");
    let bus = RemoteBus::new(broker.addr.clone());
    bus.create_topic("durable").unwrap();
    let mut rng = StdRng::seed_from_u64(3);
    let mut sent = Vec::new();
    for i in 0..1000u64 {
        let key = Uuid::from_u128(rng.random());
        let value = bytes(&mut rng, 256);
        let offset = bus
            .publish("durable", key, &value)
            .map_err(|e| e.to_string())?;
        ensure(offset == i, || format!("publish {i} got offset {offset}"))?;
        sent.push((key, value));
    }
    broker.kill();
    let broker = start("second.log");
    let got =
        read_all(&RemoteBus::new(broker.addr.clone()), "durable").map_err(|e| e.to_string())?;
    ensure(got.len() == 1000, || {
        format!("read back {} of 1000", got.len())
    })?;
    for (i, (m, (key, value))) in got.iter().zip(&sent).enumerate() {
        ensure(
            m.offset == i as u64 && m.key == *key && m.value == *value,
            || format!("message {i} differs after restart"),
        )?;
    }
    Ok("1000 messages byte-identical and in order after SIGKILL".into())
}

// ---- 4 ----

const STAGES: [(&str, &str, &str); 5] = [
    ("source", "Video", "frame-source"),
    ("detector", "Frame", "detector"),
    ("tracker", "Pedestrian-BBox", "tracker"),
    ("attributes", "Pedestrian-Track", "attr-recognizer"),
    ("ranker", "Pedestrian-Attribute", "reid-ranker"),
];

fn five_stage_graph(seed: u64) -> FlowGraph {
    let params: [Vec<(String, String)>; 5] = [
        vec![
            ("count".into(), "4".into()),
            ("seed".into(), seed.to_string()),
        ],
        vec![],
        vec![],
        vec![],
        vec![("target".into(), attribute_vector(seed as u32 % 3))],
    ];
    let nodes = STAGES
        .iter()
        .zip(params)
        .enumerate()
        .map(|(i, ((m, _, _), params))| FlowNode {
            params,
            ..FlowNode::new(i as NodeId, mid(m))
        })
        .collect();
    FlowGraph::new(nodes, (1..5).map(|i| FlowLink::new(i - 1, i)).collect())
}

fn submission(graph: &FlowGraph, datatype: &str, record: &[u8]) -> Value {
    json!({
        "graph": vpe_core::flowgraph::GraphJson::from(graph),
        "source_payloads": {"0": {"datatype": datatype, "records": encode_records(&[record.to_vec()])}},
    })
}

/// The records each node should store, computed in-process.
fn reference_run(graph: &FlowGraph, video: &[u8]) -> BTreeMap<NodeId, Vec<Vec<u8>>> {
    let registry = ProcessorRegistry::builtin();
    let mut out = BTreeMap::new();
    let mut input = Payload::new(
        DataType::new("Video").unwrap(),
        vec![video.to_vec()],
        Producer::Source,
    );
    for (i, (_, _, processor)) in STAGES.iter().enumerate() {
        let node = graph.node(i as NodeId).unwrap();
        let inputs: Inputs = [(input.producer, input.clone())].into();
        let outputs = registry
            .get(processor)
            .unwrap()
            .process(node, &inputs)
            .unwrap();
        let o = &outputs[0];
        out.insert(i as NodeId, o.records.clone());
        input = Payload::new(
            o.datatype.clone(),
            o.records.clone(),
            Producer::Node(i as NodeId),
        );
    }
    out
}

fn check_results(
    p: &Platform,
    task: Uuid,
    expected: &BTreeMap<NodeId, Vec<Vec<u8>>>,
) -> Result<(), String> {
    let results: Vec<ResultRecord> = p
        .store_client()
        .query_results(task, None)
        .map_err(|e| e.to_string())?;
    let nodes: Vec<NodeId> = results.iter().map(|r| r.node_id).collect();
    ensure(
        nodes == expected.keys().copied().collect::<Vec<_>>(),
        || format!("task {task}: result nodes {nodes:?}"),
    )?;
    for r in results {
        ensure(r.records == expected[&r.node_id], || {
            format!(
                "task {task} node {}: records differ from the reference run",
                r.node_id
            )
        })?;
    }
    Ok(())
}

fn faulted_pipeline() -> Result<String, String> {
    let p = Platform::start();
    for (m, dt, proc_) in STAGES {
        p.start_module(m, dt, proc_);
    }
    let points = ["after-poll", "after-execute", "after-publish"];
    let per_round = [7, 7, 6];
    let mut tasks = Vec::new();
    let mut kills = 0;
    for (round, point) in points.iter().enumerate() {
        let before: BTreeMap<&str, u32> = STAGES
            .iter()
            .map(|(m, _, _)| (*m, p.module(m).restarts))
            .collect();
        for (m, _, _) in STAGES {
            p.vpe_ok(&["fault", "kill", m, "--at", point]);
        }
        for _ in 0..per_round[round] {
            let seed = tasks.len() as u64;
            let graph = five_stage_graph(seed);
            let video = format!("clip-{seed}").into_bytes();
            let task = p.submit(&submission(&graph, "Video", &video));
            tasks.push((task, reference_run(&graph, &video)));
        }
        // Arming restarts a module once; the crash and relaunch count again.
        let fired = wait_until(Duration::from_secs(60), || {
            STAGES.iter().all(|(m, _, _)| {
                let st = p.module(m);
                st.armed_fault.is_none() && st.running && st.restarts >= before[m] + 2
            })
        });
        ensure(fired, || {
            let states: Vec<String> = STAGES
                .iter()
                .map(|(m, _, _)| {
                    let st = p.module(m);
                    format!("{m}: armed={:?} restarts={}", st.armed_fault, st.restarts)
                })
                .collect();
            format!("{point}: not every module crashed and came back: {states:?}")
        })?;
        kills += STAGES.len();
    }
    let ids: Vec<Uuid> = tasks.iter().map(|(t, _)| *t).collect();
    let pending = p.await_complete(&ids, 5, Duration::from_secs(120));
    ensure(pending.is_empty(), || {
        format!(
            "{} of 20 tasks incomplete; source log:\n{}",
            pending.len(),
            p.module_log("source")
        )
    })?;
    for (m, _, _) in STAGES {
        let log = p.module_log(m);
        for point in points {
            let hits = log
                .matches(&format!("fault point reached point={point}"))
                .count();
            ensure(hits == 1, || format!("{m} crashed at {point} {hits} times"))?;
        }
    }
    thread::sleep(Duration::from_millis(500));
    for (task, expected) in &tasks {
        check_results(&p, *task, expected)?;
        let (code, st) = p.get(&format!("/tasks/{task}"));
        ensure(code == 200 && st["overall"] == "COMPLETE", || {
            format!("task {task}: status {st}")
        })?;
    }
    Ok(format!(
        "{kills} injected crashes, 20 tasks complete with exactly one matching result per node"
    ))
}

// ---- 5 ----

fn relay_chain(p: &Platform, ids: &[&str]) -> FlowGraph {
    for m in ids {
        p.start_module(m, "Blob", "relay");
    }
    FlowGraph::new(
        ids.iter()
            .enumerate()
            .map(|(i, m)| FlowNode::new(i as NodeId, mid(m)))
            .collect(),
        (1..ids.len() as NodeId)
            .map(|i| FlowLink::new(i - 1, i))
            .collect(),
    )
}

fn recovery() -> Result<String, String> {
    let p = Platform::start();
    let graph = relay_chain(&p, &["A", "B"]);
    let submit = |tag: String| p.submit(&submission(&graph, "Blob", tag.as_bytes()));
    let early: Vec<Uuid> = (0..20).map(|i| submit(format!("early-{i}"))).collect();
    p.vpe_ok(&["module", "stop", "B"]);
    let bus = RemoteBus::new(p.bus_addr());
    let queued = || bus.topic_len("B-Blob").unwrap();
    ensure(
        wait_until(Duration::from_secs(10), || queued() == 20),
        || format!("B-Blob holds {} of the early messages", queued()),
    )?;
    let late: Vec<Uuid> = (0..50).map(|i| submit(format!("late-{i}"))).collect();
    ensure(
        wait_until(Duration::from_secs(20), || queued() == 70),
        || format!("B-Blob holds {} messages, expected 70", queued()),
    )?;
    let stalled = late.iter().filter(|t| p.results(**t) == 2).count();
    ensure(stalled == 0, || {
        format!("{stalled} late tasks finished while B was down")
    })?;
    p.vpe_ok(&[
        "module",
        "start",
        "B",
        "--datatypes",
        "Blob",
        "--processor",
        "relay",
        "--version",
        "v2",
    ]);
    ensure(
        p.module("B").descriptor.version.as_deref() == Some("v2"),
        || "B is not v2".into(),
    )?;
    let all: Vec<Uuid> = early.iter().chain(&late).copied().collect();
    let pending = p.await_complete(&all, 2, Duration::from_secs(30));
    ensure(pending.is_empty(), || {
        format!("{} tasks not processed by v2", pending.len())
    })?;
    for (i, t) in late.iter().enumerate() {
        let r = p.store_client().query_results(*t, Some(1)).unwrap();
        let want = vec![
            format!("late-{i}").into_bytes(),
            b"node:0".to_vec(),
            b"node:1".to_vec(),
        ];
        ensure(r.len() == 1 && r[0].records == want, || {
            format!("late task {i}: wrong B result")
        })?;
    }
    Ok("50 messages queued while B was stopped were all processed by B v2".into())
}

// ---- 6 ----

#[derive(Default)]
struct Trace {
    events: Mutex<Vec<(Uuid, Option<Producer>, usize)>>,
}

impl Observer for Trace {
    fn arrived(&self, task_id: Uuid, _node: NodeId, producer: Producer) {
        self.events
            .lock()
            .unwrap()
            .push((task_id, Some(producer), 0));
    }

    fn executed(&self, task_id: Uuid, _node: NodeId, inputs: &Inputs) {
        self.events
            .lock()
            .unwrap()
            .push((task_id, None, inputs.len()));
    }
}

fn accumulation() -> Result<String, String> {
    let dir = tempfile::tempdir().unwrap();
    let bus = Arc::new(Broker::open(dir.path().join("bus"), BrokerOptions::default()).unwrap());
    let store = Arc::new(Store::open(dir.path().join("store"), StoreOptions::default()).unwrap());
    let c = ModuleDescriptor::new(mid("C"), [blob()], "relay");
    let trace = Arc::new(Trace::default());
    let mut opts = HostOptions::new(dir.path().join("state"));
    opts.poll_timeout = Duration::from_millis(20);
    opts.batch_size = 4;
    opts.observer = Some(trace.clone());
    let host = ModuleHost::new(
        c.clone(),
        Arc::new(Relay::new()),
        bus.clone(),
        store.clone(),
        Arc::new(StaticDirectory::new([c])),
        opts,
    )
    .map_err(|e| e.to_string())?;
    let stop = host.stop_handle();
    let handle = host.spawn();
    let graph = FlowGraph::new(
        vec![
            FlowNode::new(0, mid("A")),
            FlowNode::new(1, mid("B")),
            FlowNode::new(2, mid("C")),
        ],
        vec![
            FlowLink::new(0, 1),
            FlowLink::new(1, 2),
            FlowLink::new(0, 2),
        ],
    );
    let delivery = |task: Uuid, from: NodeId| TaskData {
        task_id: task,
        nme: 2,
        graph: graph.clone(),
        payload: Payload::new(
            blob(),
            vec![format!("from{from}").into_bytes()],
            Producer::Node(from),
        ),
    };
    let mut rng = StdRng::seed_from_u64(6);
    let mut tasks = Vec::new();
    let mut duplicates = 0;
    for _ in 0..100 {
        let t = Uuid::new_v4();
        let mut msgs = vec![delivery(t, 0), delivery(t, 1)];
        for _ in 0..rng.random_range(0..=3) {
            msgs.push(msgs[rng.random_range(0..2)].clone());
            duplicates += 1;
        }
        msgs.shuffle(&mut rng);
        for m in &msgs {
            bus.publish("C-Blob", t, &encode_taskdata(m).unwrap())
                .unwrap();
        }
        tasks.push(t);
    }
    let done = wait_until(Duration::from_secs(20), || {
        tasks
            .iter()
            .all(|t| store.query_results(*t, None).unwrap().len() == 1)
    });
    thread::sleep(Duration::from_millis(200));
    stop.store(true, Ordering::SeqCst);
    handle.join().unwrap().map_err(|e| e.to_string())?;
    ensure(done, || "not every task produced a node 2 result".into())?;
    let events = trace.events.lock().unwrap();
    for t in &tasks {
        let mine: Vec<_> = events.iter().filter(|e| e.0 == *t).collect();
        let runs: Vec<usize> = mine
            .iter()
            .enumerate()
            .filter(|(_, e)| e.1.is_none())
            .map(|(i, _)| i)
            .collect();
        ensure(runs.len() == 1, || {
            format!("task {t}: node 2 ran {} times", runs.len())
        })?;
        ensure(mine[runs[0]].2 == 2, || {
            format!("task {t}: ran with {} inputs", mine[runs[0]].2)
        })?;
        let before: BTreeSet<Producer> = mine[..runs[0]].iter().filter_map(|e| e.1).collect();
        ensure(
            before.contains(&Producer::Node(0)) && before.contains(&Producer::Node(1)),
            || format!("task {t}: ran before both inputs arrived"),
        )?;
        let r = store.query_results(*t, Some(2)).unwrap();
        ensure(
            r[0].records == [b"from0".to_vec(), b"from1".to_vec(), b"node:2".to_vec()],
            || format!("task {t}: wrong merged output"),
        )?;
    }
    Ok(format!(
        "100 arrival orders with {duplicates} duplicate redeliveries; node 2 ran once each, after both inputs"
    ))
}

// ---- 7 ----

fn fan_out() -> Result<String, String> {
    let p = Platform::start();
    for m in ["P", "M1", "M2"] {
        p.start_module(m, "Blob", "relay");
    }
    let graph = FlowGraph::new(
        vec![
            FlowNode::new(0, mid("P")),
            FlowNode::new(1, mid("M1")),
            FlowNode::new(2, mid("M2")),
        ],
        vec![FlowLink::new(0, 1), FlowLink::new(0, 2)],
    );
    let task = p.submit(&submission(&graph, "Blob", b"x"));
    ensure(
        p.await_complete(&[task], 3, Duration::from_secs(8))
            .is_empty(),
        || "fan-out task did not complete".into(),
    )?;
    let bus = RemoteBus::new(p.bus_addr());
    for (topic, nme) in [("M1-Blob", 1), ("M2-Blob", 2)] {
        let msgs = read_all(&bus, topic).map_err(|e| e.to_string())?;
        ensure(msgs.len() == 1, || {
            format!("{topic} holds {} messages", msgs.len())
        })?;
        let td = decode_taskdata(&msgs[0].value).map_err(|e| e.to_string())?;
        ensure(
            (td.task_id, td.nme, td.payload.producer) == (task, nme, Producer::Node(0)),
            || format!("{topic}: unexpected envelope {td:?}"),
        )?;
    }
    Ok("P published exactly once to M1-Blob and once to M2-Blob".into())
}

// ---- 8 ----

fn throughput() -> Result<String, String> {
    let p = Platform::start();
    let graph = relay_chain(&p, &["R0", "R1", "R2"]);
    let start = Instant::now();
    let tasks: Vec<Uuid> = (0..1000)
        .map(|i| p.submit(&submission(&graph, "Blob", format!("t{i}").as_bytes())))
        .collect();
    let submitted = start.elapsed();
    let pending = p.await_complete(&tasks, 3, Duration::from_secs(50));
    ensure(pending.is_empty(), || {
        format!("{} of 1000 tasks incomplete", pending.len())
    })?;
    let took = start.elapsed();
    Ok(format!(
        "1000 tasks submitted in {:.1}s, all complete after {:.1}s ({:.0} tasks/s)",
        submitted.as_secs_f64(),
        took.as_secs_f64(),
        1000.0 / took.as_secs_f64()
    ))
}

// ---- 9 ----

fn read_export(path: &Path) -> Vec<FeedbackRecord> {
    std::fs::read_to_string(path)
        .unwrap()
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect()
}

fn gateway_contract() -> Result<String, String> {
    let p = Platform::start();
    let graph = relay_chain(&p, &["A", "B"]);
    let cyclic = json!({"graph": {"nodes": [{"id": 0, "module": "A"}, {"id": 1, "module": "B"}],
        "links": [{"from": 0, "to": 1}, {"from": 1, "to": 0}]}});
    let (code, report) = p.post("/tasks", &cyclic);
    let codes: Vec<&str> = report["errors"]
        .as_array()
        .into_iter()
        .flatten()
        .filter_map(|e| e["code"].as_str())
        .collect();
    ensure(code == 400 && codes.contains(&"CYCLE"), || {
        format!("cyclic graph: {code} {report}")
    })?;

    let task = p.submit(&submission(&graph, "Blob", b"clip"));
    ensure(
        p.await_complete(&[task], 2, Duration::from_secs(10))
            .is_empty(),
        || "task did not complete".into(),
    )?;
    let sent = [
        json!({"feedback_id": Uuid::new_v4(), "task_id": task, "node_id": 1, "kind": "SATISFACTION", "satisfaction": 4}),
        json!({"feedback_id": Uuid::new_v4(), "task_id": task, "node_id": 1, "kind": "SELECTION", "selected_record_indices": [2, 0]}),
        json!({"feedback_id": Uuid::new_v4(), "task_id": task, "node_id": 0, "kind": "REVISION",
            "revision": encode_records(&[vec![0, 255, 10, 13]])[0]}),
    ];
    for f in &sent {
        let (code, r) = p.post("/feedback", f);
        ensure(code == 201, || format!("feedback {f}: {code} {r}"))?;
    }
    let out = p.path("feedback.ndjson");
    p.vpe_ok(&["feedback", "export", "--out", out.to_str().unwrap()]);
    let exported = read_export(&out);
    ensure(exported.len() == sent.len(), || {
        format!("exported {} records", exported.len())
    })?;
    for f in &sent {
        let id: Uuid = serde_json::from_value(f["feedback_id"].clone()).unwrap();
        let rec = exported
            .iter()
            .find(|r| r.feedback_id == id)
            .ok_or("feedback missing from export")?;
        let mut back = serde_json::to_value(rec).unwrap();
        ensure(back["created_at"].as_u64().is_some_and(|t| t > 0), || {
            "created_at missing".into()
        })?;
        back.as_object_mut().unwrap().remove("created_at");
        ensure(back == *f, || {
            format!("export {back} differs from submitted {f}")
        })?;
    }

    for m in ["A", "B"] {
        p.vpe_ok(&["module", "stop", m]);
    }
    ensure(
        p.launcher_client()
            .list()
            .unwrap()
            .iter()
            .all(|m| !m.running),
        || "modules still running".into(),
    )?;
    let (code, st) = p.get(&format!("/tasks/{task}"));
    ensure(code == 200 && st["overall"] == "COMPLETE", || {
        format!("status with modules stopped: {code} {st}")
    })?;
    let done: Vec<&str> = st["nodes"]
        .as_array()
        .unwrap()
        .iter()
        .filter_map(|n| n["state"].as_str())
        .collect();
    ensure(done == ["DONE", "DONE"], || format!("node states {done:?}"))?;
    Ok("cyclic graph rejected with CYCLE; 3 feedback kinds exported intact; status served with every module stopped".into())
}
