//! End-to-end driver: launches one daemon per compute node, plays the IoT
//! sources, collects the sink's output per instance and applies a chaos
//! plan along the way.

use std::collections::HashMap;
use std::net::{SocketAddr, TcpListener, TcpStream};
use std::path::PathBuf;
use std::process::{Child, Command, Stdio};
use std::sync::mpsc::{self, Receiver, RecvTimeoutError, Sender};
use std::sync::{Arc, Mutex};
use std::thread::{self, JoinHandle};
use std::time::{Duration, Instant};

use ndarray::{Array1, ArrayView1};
use serde::{Deserialize, Serialize};

use super::chaos::{ChaosAction, ChaosPlan};
use super::daemon::{connect_retry, serve_node, NodePlan, StopHandle, Timeouts, COORDINATOR_ID};
use super::wire::{read_message, write_message, MsgType, WireMessage};
use crate::error::{Error, Result};
use crate::inference::{distributed_forward, ActivationVector, InferenceOutcome, Prediction};
use crate::topology::{DistributedDnn, DistributedGraph, Tier};

/// Starts and kills node daemons.
pub trait Launcher {
    fn launch(&mut self, plan: &NodePlan) -> Result<()>;
    /// Abrupt termination.
    fn kill(&mut self, node: usize) -> Result<()>;
    /// Waits for every daemon to exit after SHUTDOWN, killing stragglers.
    fn wait_all(&mut self, patience: Duration) -> Result<()>;
}

/// Daemons as threads of this process. Killing one closes all its sockets.
pub struct ThreadLauncher {
    dnn: Arc<DistributedDnn<f32>>,
    running: HashMap<usize, (StopHandle, JoinHandle<Result<()>>)>,
}

impl ThreadLauncher {
    pub fn new(dnn: Arc<DistributedDnn<f32>>) -> Self {
        Self { dnn, running: HashMap::new() }
    }
}

impl Launcher for ThreadLauncher {
    fn launch(&mut self, plan: &NodePlan) -> Result<()> {
        let stop = StopHandle::new();
        let (dnn, plan_c, stop_c) = (self.dnn.clone(), plan.clone(), stop.clone());
        let handle = thread::spawn(move || serve_node(dnn, plan_c, stop_c));
        self.running.insert(plan.node, (stop, handle));
        Ok(())
    }

    fn kill(&mut self, node: usize) -> Result<()> {
        if let Some((stop, handle)) = self.running.remove(&node) {
            stop.stop();
            let _ = handle.join();
        }
        Ok(())
    }

    fn wait_all(&mut self, patience: Duration) -> Result<()> {
        let deadline = Instant::now() + patience;
        for (_, (stop, handle)) in self.running.drain() {
            while !handle.is_finished() && Instant::now() < deadline {
                thread::sleep(Duration::from_millis(5));
            }
            stop.stop();
            handle.join().map_err(|_| Error::Runtime("daemon thread panicked".into()))??;
        }
        Ok(())
    }
}

/// Daemons as child processes of `program`, which must accept
/// `base_args` followed by [`NodePlan::cli_args`]. Killing sends SIGKILL.
pub struct ProcessLauncher {
    program: PathBuf,
    base_args: Vec<String>,
    graph: DistributedGraph,
    children: HashMap<usize, Child>,
}

impl ProcessLauncher {
    pub fn new(program: impl Into<PathBuf>, base_args: Vec<String>, graph: DistributedGraph) -> Self {
        Self { program: program.into(), base_args, graph, children: HashMap::new() }
    }
}

impl Launcher for ProcessLauncher {
    fn launch(&mut self, plan: &NodePlan) -> Result<()> {
        let child = Command::new(&self.program)
            .args(&self.base_args)
            .args(plan.cli_args(&self.graph))
            .stdin(Stdio::null())
            .stdout(Stdio::null())
            .stderr(Stdio::inherit())
            .spawn()
            .map_err(|e| Error::Runtime(format!("cannot launch {}: {e}", self.program.display())))?;
        self.children.insert(plan.node, child);
        Ok(())
    }

    fn kill(&mut self, node: usize) -> Result<()> {
        if let Some(mut child) = self.children.remove(&node) {
            let _ = child.kill();
            let _ = child.wait();
        }
        Ok(())
    }

    fn wait_all(&mut self, patience: Duration) -> Result<()> {
        let deadline = Instant::now() + patience;
        let mut failures = Vec::new();
        for (node, mut child) in self.children.drain() {
            loop {
                match child.try_wait()? {
                    Some(status) => {
                        if !status.success() {
                            failures.push(format!("{}: {status}", self.graph.nodes[node].id));
                        }
                        break;
                    }
                    None if Instant::now() >= deadline => {
                        let _ = child.kill();
                        let _ = child.wait();
                        failures.push(format!("{}: did not exit after shutdown", self.graph.nodes[node].id));
                        break;
                    }
                    None => thread::sleep(Duration::from_millis(10)),
                }
            }
        }
        if failures.is_empty() {
            Ok(())
        } else {
            Err(Error::Runtime(failures.join("; ")))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RuntimeOptions {
    pub timeouts: Timeouts,
    /// Wait for the sink's output per instance; derived from the graph depth
    /// when absent.
    pub coordinator_timeout_ms: Option<u64>,
    /// Pause after a chaos action so failure detection and reconnection
    /// settle before the next instance; derived from the timeouts when absent.
    pub settle_ms: Option<u64>,
    pub startup_timeout_ms: u64,
}

impl Default for RuntimeOptions {
    fn default() -> Self {
        Self {
            timeouts: Timeouts::default(),
            coordinator_timeout_ms: None,
            settle_ms: None,
            startup_timeout_ms: 30_000,
        }
    }
}

impl RuntimeOptions {
    fn coordinator_timeout(&self, graph: &DistributedGraph) -> Duration {
        let ms =
            self.coordinator_timeout_ms.unwrap_or_else(|| (depth(graph) as u64 + 1) * self.timeouts.round_ms + 300);
        Duration::from_millis(ms)
    }

    fn settle(&self) -> Duration {
        Duration::from_millis(
            self.settle_ms.unwrap_or(self.timeouts.suspicion_ms + 4 * self.timeouts.heartbeat_ms + 100),
        )
    }
}

/// Compute nodes on the longest source-to-sink path.
fn depth(graph: &DistributedGraph) -> usize {
    let mut d = vec![0usize; graph.nodes.len()];
    for &n in &graph.order {
        let own = usize::from(graph.nodes[n].tier != Tier::Iot);
        let best = graph.incoming(n).iter().map(|&h| d[graph.hyperconnections[h].src]).max().unwrap_or(0);
        d[n] = best + own;
    }
    d.into_iter().max().unwrap_or(0)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InstanceRecord {
    pub inference_id: u64,
    /// Which nodes were running when the instance was sent.
    pub alive: Vec<bool>,
    /// Sink output; `None` is Φ (including a coordinator timeout).
    pub logits: Option<Vec<f32>>,
    pub predicted: Prediction,
    pub latency_ms: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Transcript {
    pub records: Vec<InstanceRecord>,
    /// Applied chaos actions, in order.
    pub events: Vec<String>,
}

enum Inbox {
    Hello(usize, Arc<Mutex<TcpStream>>),
    Output(u64, Option<Vec<f32>>),
}

fn coordinator_accept(listener: TcpListener, tx: Sender<Inbox>, stop: StopHandle) {
    let _ = listener.set_nonblocking(true);
    while !stop.is_stopped() {
        match listener.accept() {
            Ok((stream, _)) => {
                let _ = stream.set_nonblocking(false);
                let _ = stream.set_nodelay(true);
                stop.register(&stream);
                let tx = tx.clone();
                thread::spawn(move || {
                    let mut stream = stream;
                    let Ok(writer) = stream.try_clone() else { return };
                    let writer = Arc::new(Mutex::new(writer));
                    while let Ok(Some(msg)) = read_message(&mut stream) {
                        let sent = match msg.msg_type {
                            MsgType::Hello => tx.send(Inbox::Hello(msg.source_node as usize, writer.clone())),
                            MsgType::Data => tx.send(Inbox::Output(msg.inference_id, msg.payload)),
                            _ => Ok(()),
                        };
                        if sent.is_err() {
                            return;
                        }
                    }
                });
            }
            Err(e) if e.kind() == std::io::ErrorKind::WouldBlock => thread::sleep(Duration::from_millis(2)),
            Err(_) => thread::sleep(Duration::from_millis(10)),
        }
    }
}

/// The coordinator's side of an IoT out-edge; answers keep-alives.
fn iot_link(
    source: usize,
    addr: SocketAddr,
    retry: Duration,
    stop: &StopHandle,
    deadline: Instant,
) -> Result<Arc<Mutex<TcpStream>>> {
    let stream = connect_retry(addr, retry, stop, Some(deadline))
        .ok_or_else(|| Error::Runtime(format!("cannot reach the destination of IoT source {source} at {addr}")))?;
    let writer = Arc::new(Mutex::new(stream.try_clone()?));
    write_message(&mut *writer.lock().expect("writer"), &WireMessage::control(MsgType::Hello, source as u16))?;
    let w = writer.clone();
    let mut reader = stream;
    thread::spawn(move || {
        while let Ok(Some(msg)) = read_message(&mut reader) {
            if msg.msg_type == MsgType::Keepalive {
                let ack = WireMessage::control(MsgType::KeepaliveAck, source as u16);
                if write_message(&mut *w.lock().expect("writer"), &ack).is_err() {
                    return;
                }
            }
        }
    });
    Ok(writer)
}

fn free_port() -> Result<SocketAddr> {
    let l = TcpListener::bind("127.0.0.1:0")?;
    Ok(l.local_addr()?)
}

fn wait_hello(
    rx: &Receiver<Inbox>,
    controls: &mut HashMap<usize, Arc<Mutex<TcpStream>>>,
    want: &[usize],
    deadline: Instant,
) -> Result<()> {
    while !want.iter().all(|n| controls.contains_key(n)) {
        let left = deadline.saturating_duration_since(Instant::now());
        match rx.recv_timeout(left) {
            Ok(Inbox::Hello(n, w)) => {
                controls.insert(n, w);
            }
            Ok(Inbox::Output(..)) => {}
            Err(_) => {
                return Err(Error::Runtime(format!(
                    "nodes {:?} did not come up in time",
                    want.iter().filter(|n| !controls.contains_key(n)).collect::<Vec<_>>()
                )))
            }
        }
    }
    Ok(())
}

/// Runs every instance through the daemons, one at a time, in order.
///
/// `instances[i][s]` is the input vector of IoT source `s` (in
/// [`DistributedGraph::sources`] order) for instance `i`, whose inference id
/// is `i + 1`.
pub fn run_pipeline(
    dnn: &DistributedDnn<f32>,
    instances: &[Vec<Vec<f32>>],
    chaos: &ChaosPlan,
    launcher: &mut dyn Launcher,
    options: &RuntimeOptions,
) -> Result<Transcript> {
    let g = &dnn.graph;
    chaos.validate(g)?;
    options.timeouts.validate()?;
    let sources = g.sources();
    for (i, inst) in instances.iter().enumerate() {
        if inst.len() != sources.len() || inst.iter().any(|v| v.len() != g.spec.input_dim) {
            return Err(Error::dims(g.spec.input_dim, inst.first().map_or(0, Vec::len), format!("instance {i}")));
        }
    }

    let stop = StopHandle::new();
    let listener = TcpListener::bind("127.0.0.1:0")?;
    let coordinator = listener.local_addr()?;
    let (tx, rx) = mpsc::channel();
    {
        let stop = stop.clone();
        thread::spawn(move || coordinator_accept(listener, tx, stop));
    }

    let compute: Vec<usize> = (0..g.nodes.len()).filter(|&n| g.nodes[n].tier != Tier::Iot).collect();
    let mut addrs = HashMap::new();
    for &n in &compute {
        addrs.insert(n, free_port()?);
    }
    let plans: HashMap<usize, NodePlan> = compute
        .iter()
        .map(|&n| {
            let peers: Vec<(usize, SocketAddr)> = g
                .outgoing(n)
                .iter()
                .map(|&h| {
                    let dst = g.hyperconnections[h].dst;
                    (dst, addrs[&dst])
                })
                .collect();
            (n, NodePlan { node: n, listen: addrs[&n], peers, coordinator, timeouts: options.timeouts })
        })
        .collect();

    let result = (|| {
        for &n in &compute {
            launcher.launch(&plans[&n])?;
        }
        let startup = Duration::from_millis(options.startup_timeout_ms);
        let mut controls = HashMap::new();
        wait_hello(&rx, &mut controls, &compute, Instant::now() + startup)?;

        let mut iot: Vec<Vec<Arc<Mutex<TcpStream>>>> = Vec::new();
        for &s in &sources {
            let mut links = Vec::new();
            for h in g.outgoing(s) {
                let dst = g.hyperconnections[h].dst;
                links.push(iot_link(
                    s,
                    addrs[&dst],
                    options.timeouts.connect_retry(),
                    &stop,
                    Instant::now() + startup,
                )?);
            }
            iot.push(links);
        }

        let mut alive = vec![true; g.nodes.len()];
        let mut transcript = Transcript::default();
        let mut pending: Vec<bool> = vec![true; chaos.events.len()];
        let started = Instant::now();
        let wait = options.coordinator_timeout(g);
        for (i, inst) in instances.iter().enumerate() {
            let inference_id = i as u64 + 1;
            let elapsed = started.elapsed().as_millis() as u64;
            let mut acted = false;
            for (e, ev) in chaos.events.iter().enumerate() {
                let due = ev.at_instance.is_some_and(|k| inference_id >= k) || ev.at_ms.is_some_and(|t| elapsed >= t);
                if !pending[e] || !due {
                    continue;
                }
                pending[e] = false;
                let n = g.node_index(&ev.node).expect("validated");
                match ev.action {
                    ChaosAction::Kill if alive[n] => {
                        launcher.kill(n)?;
                        controls.remove(&n);
                        alive[n] = false;
                    }
                    ChaosAction::Revive if !alive[n] => {
                        launcher.launch(&plans[&n])?;
                        wait_hello(&rx, &mut controls, &[n], Instant::now() + startup)?;
                        alive[n] = true;
                    }
                    _ => continue,
                }
                acted = true;
                transcript
                    .events
                    .push(format!("{:?} {} before instance {inference_id}", ev.action, ev.node).to_lowercase());
            }
            if acted {
                thread::sleep(options.settle());
            }

            let sent_at = Instant::now();
            for ((links, view), &s) in iot.iter().zip(inst).zip(&sources) {
                let msg = WireMessage::data(s as u16, inference_id, Some(view.clone()));
                for link in links {
                    let _ = write_message(&mut *link.lock().expect("writer"), &msg);
                }
            }
            let deadline = sent_at + wait;
            let mut logits = None;
            loop {
                match rx.recv_timeout(deadline.saturating_duration_since(Instant::now())) {
                    Ok(Inbox::Output(id, payload)) if id == inference_id => {
                        logits = payload;
                        break;
                    }
                    Ok(Inbox::Hello(n, w)) => {
                        controls.insert(n, w);
                    }
                    Ok(Inbox::Output(..)) => {}
                    Err(RecvTimeoutError::Timeout) => break,
                    Err(RecvTimeoutError::Disconnected) => {
                        return Err(Error::Runtime("coordinator listener stopped".into()))
                    }
                }
            }
            let outcome = InferenceOutcome::from_logits(match &logits {
                Some(v) => ActivationVector::Value(Array1::from(v.clone())),
                None => ActivationVector::Null,
            });
            transcript.records.push(InstanceRecord {
                inference_id,
                alive: alive.clone(),
                logits,
                predicted: outcome.predicted,
                latency_ms: sent_at.elapsed().as_secs_f64() * 1e3,
            });
        }

        for w in controls.values() {
            let _ = write_message(
                &mut *w.lock().expect("writer"),
                &WireMessage::control(MsgType::Shutdown, COORDINATOR_ID),
            );
        }
        launcher.wait_all(Duration::from_secs(10))?;
        Ok(transcript)
    })();
    if result.is_err() {
        for &n in &compute {
            let _ = launcher.kill(n);
        }
    }
    stop.stop();
    result
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Equivalence {
    pub instances: usize,
    /// Largest per-element logit difference over instances where both sides
    /// produced a vector.
    pub max_deviation: f64,
    /// Instances where exactly one side produced Φ.
    pub null_mismatches: usize,
    pub tolerance: f64,
    pub pass: bool,
}

/// Compares every record with the in-process forward pass under the same
/// alive mask.
pub fn compare_with_simulator(
    dnn: &DistributedDnn<f32>,
    instances: &[Vec<Vec<f32>>],
    transcript: &Transcript,
    tolerance: f64,
) -> Result<Equivalence> {
    let mut max_deviation = 0.0f64;
    let mut null_mismatches = 0;
    for (rec, inst) in transcript.records.iter().zip(instances) {
        let views: Vec<ArrayView1<f32>> = inst.iter().map(|v| ArrayView1::from(v.as_slice())).collect();
        let sim = distributed_forward(dnn, &views, &rec.alive)?;
        match (sim.logits.value(), &rec.logits) {
            (Some(a), Some(b)) => {
                if a.len() != b.len() {
                    null_mismatches += 1;
                    continue;
                }
                for (x, y) in a.iter().zip(b) {
                    max_deviation = max_deviation.max((x - y).abs() as f64);
                }
            }
            (None, None) => {}
            _ => null_mismatches += 1,
        }
    }
    Ok(Equivalence {
        instances: transcript.records.len(),
        max_deviation,
        null_mismatches,
        tolerance,
        pass: null_mismatches == 0 && max_deviation < tolerance && transcript.records.len() == instances.len(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::topology::{build_distributed, camera_reference_topology, health_reference_topology, SkipPolicy};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn fast() -> RuntimeOptions {
        RuntimeOptions {
            timeouts: Timeouts { round_ms: 60, heartbeat_ms: 15, suspicion_ms: 90, connect_retry_ms: 10 },
            ..Default::default()
        }
    }

    fn inputs(n: usize, views: usize, dim: usize, seed: u64) -> Vec<Vec<Vec<f32>>> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n).map(|_| (0..views).map(|_| (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect()).collect()).collect()
    }

    fn health(policy: &SkipPolicy) -> Arc<DistributedDnn<f32>> {
        let (spec, nodes, partition) = health_reference_topology();
        Arc::new(DistributedDnn::initialize(build_distributed(&spec, &nodes, &partition, policy).unwrap(), 8))
    }

    #[test]
    fn depth_counts_compute_nodes() {
        assert_eq!(depth(&health(&SkipPolicy::None).graph), 4);
        let (spec, nodes, partition) = camera_reference_topology();
        let g = build_distributed(&spec, &nodes, &partition, &SkipPolicy::None).unwrap();
        assert_eq!(depth(&g), 5);
    }

    #[test]
    fn threaded_daemons_match_the_simulator() {
        let dnn = health(&SkipPolicy::skip_one());
        let data = inputs(12, 1, 23, 1);
        let mut launcher = ThreadLauncher::new(dnn.clone());
        let t = run_pipeline(&dnn, &data, &ChaosPlan::empty(), &mut launcher, &fast()).unwrap();
        let eq = compare_with_simulator(&dnn, &data, &t, 1e-5).unwrap();
        assert!(eq.pass, "{eq:?}");
        assert!(t.records.iter().all(|r| r.logits.is_some()));
    }

    #[test]
    fn killed_fog_node_nulls_vanilla_and_not_skip_variant() {
        for (policy, expect_null) in [(SkipPolicy::None, true), (SkipPolicy::skip_one(), false)] {
            let dnn = health(&policy);
            let data = inputs(10, 1, 23, 2);
            let mut launcher = ThreadLauncher::new(dnn.clone());
            let plan = ChaosPlan::kill_at("f2", 5);
            let t = run_pipeline(&dnn, &data, &plan, &mut launcher, &fast()).unwrap();
            let eq = compare_with_simulator(&dnn, &data, &t, 1e-5).unwrap();
            assert!(eq.pass, "{policy:?}: {eq:?}");
            assert_eq!(t.events.len(), 1);
            for r in &t.records[4..] {
                assert!(!r.alive[2]);
                assert_eq!(r.logits.is_none(), expect_null);
                if expect_null {
                    assert_eq!(r.predicted, Prediction::RandomGuess);
                }
            }
        }
    }

    #[test]
    fn revived_node_restores_all_alive_outputs() {
        let dnn = health(&SkipPolicy::None);
        let data = inputs(9, 1, 23, 3);
        let mut launcher = ThreadLauncher::new(dnn.clone());
        let mut plan = ChaosPlan::kill_at("f1", 3);
        plan.events.push(super::super::chaos::ChaosEvent {
            at_instance: Some(6),
            at_ms: None,
            node: "f1".into(),
            action: ChaosAction::Revive,
        });
        let t = run_pipeline(&dnn, &data, &plan, &mut launcher, &fast()).unwrap();
        assert!(compare_with_simulator(&dnn, &data, &t, 1e-5).unwrap().pass);
        assert!(t.records[2..5].iter().all(|r| r.logits.is_none()));
        assert!(t.records[5..].iter().all(|r| r.logits.is_some() && r.alive.iter().all(|&a| a)));
    }

    #[test]
    fn camera_graph_with_multi_source_nodes() {
        let (spec, nodes, partition) = camera_reference_topology();
        let mut spec = spec;
        spec.input_dim = 12;
        let g = build_distributed(&spec, &nodes, &partition, &SkipPolicy::SkipOne { from_iot: false }).unwrap();
        let dnn = Arc::new(DistributedDnn::initialize(g, 4));
        let data = inputs(6, 6, 12, 4);
        let mut launcher = ThreadLauncher::new(dnn.clone());
        let t = run_pipeline(&dnn, &data, &ChaosPlan::kill_at("f3", 3), &mut launcher, &fast()).unwrap();
        let eq = compare_with_simulator(&dnn, &data, &t, 1e-5).unwrap();
        assert!(eq.pass, "{eq:?}");
    }
}
