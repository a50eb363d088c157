//! One physical node as a network service.
//!
//! The daemon accepts a connection from the source of every in-edge, opens
//! a connection to the destination of every out-edge, and keeps a control
//! connection to the coordinator. For each inference id it waits for DATA
//! from every in-edge source that its heartbeat monitor considers alive, or
//! until the round timeout, substitutes Φ for anything missing, runs the
//! node's layers and sends the result on every out-edge. The sink sends its
//! output to the coordinator instead.

use std::collections::{BTreeMap, HashMap};
use std::io::ErrorKind;
use std::net::{SocketAddr, TcpListener, TcpStream};
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::mpsc::{self, Receiver, RecvTimeoutError, Sender};
use std::sync::{Arc, Mutex};
use std::thread;
use std::time::{Duration, Instant};

use ndarray::{Array1, ArrayView2};
use serde::{Deserialize, Serialize};

use super::heartbeat::HeartbeatMonitor;
use super::wire::{read_message, write_message, MsgType, WireError, WireMessage};
use crate::error::{Error, Result};
use crate::inference::{add_batch, node_forward, ActivationVector};
use crate::topology::{DistributedDnn, DistributedGraph, Tier};

/// `source_node` used by the coordinator on its own messages.
pub const COORDINATOR_ID: u16 = u16::MAX;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct Timeouts {
    /// Longest wait for missing in-edge data once a round has started.
    pub round_ms: u64,
    pub heartbeat_ms: u64,
    pub suspicion_ms: u64,
    pub connect_retry_ms: u64,
}

impl Default for Timeouts {
    fn default() -> Self {
        Self { round_ms: 200, heartbeat_ms: 50, suspicion_ms: 300, connect_retry_ms: 20 }
    }
}

impl Timeouts {
    pub fn round(&self) -> Duration {
        Duration::from_millis(self.round_ms)
    }

    pub fn heartbeat(&self) -> Duration {
        Duration::from_millis(self.heartbeat_ms)
    }

    pub fn suspicion(&self) -> Duration {
        Duration::from_millis(self.suspicion_ms)
    }

    pub fn connect_retry(&self) -> Duration {
        Duration::from_millis(self.connect_retry_ms)
    }

    pub fn validate(&self) -> Result<()> {
        if self.heartbeat_ms == 0 || self.heartbeat_ms >= self.suspicion_ms || self.round_ms == 0 {
            return Err(Error::Config(format!(
                "timeouts need 0 < heartbeat < suspicion and a positive round timeout: {self:?}"
            )));
        }
        Ok(())
    }
}

/// Where one daemon listens and whom it talks to.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodePlan {
    pub node: usize,
    pub listen: SocketAddr,
    /// Destination node index and address for every out-edge.
    pub peers: Vec<(usize, SocketAddr)>,
    pub coordinator: SocketAddr,
    pub timeouts: Timeouts,
}

impl NodePlan {
    /// Command-line flags for a `serve-node` process, naming nodes by id.
    pub fn cli_args(&self, graph: &DistributedGraph) -> Vec<String> {
        let mut args = vec![
            "--node".to_string(),
            graph.nodes[self.node].id.clone(),
            "--listen".to_string(),
            self.listen.to_string(),
            "--coordinator".to_string(),
            self.coordinator.to_string(),
        ];
        for (dst, addr) in &self.peers {
            args.push("--peer".to_string());
            args.push(format!("{}={addr}", graph.nodes[*dst].id));
        }
        for (flag, v) in [
            ("--round-timeout-ms", self.timeouts.round_ms),
            ("--heartbeat-ms", self.timeouts.heartbeat_ms),
            ("--suspicion-ms", self.timeouts.suspicion_ms),
        ] {
            args.push(flag.to_string());
            args.push(v.to_string());
        }
        args
    }

    /// Resolves node ids against `graph` and checks the peers against its
    /// out-edges.
    pub fn from_named(
        graph: &DistributedGraph,
        node: &str,
        listen: SocketAddr,
        peers: &[(String, SocketAddr)],
        coordinator: SocketAddr,
        timeouts: Timeouts,
    ) -> Result<Self> {
        let index = |id: &str| graph.node_index(id).ok_or_else(|| Error::Config(format!("unknown node {id}")));
        let n = index(node)?;
        if graph.nodes[n].tier == Tier::Iot {
            return Err(Error::Config(format!("{node} is an IoT source; the coordinator plays it")));
        }
        let peers = peers.iter().map(|(id, addr)| Ok((index(id)?, *addr))).collect::<Result<Vec<_>>>()?;
        let mut want: Vec<usize> = graph.outgoing(n).iter().map(|&h| graph.hyperconnections[h].dst).collect();
        let mut have: Vec<usize> = peers.iter().map(|p| p.0).collect();
        want.sort_unstable();
        have.sort_unstable();
        if want != have {
            return Err(Error::Config(format!("peers of {node} must be exactly its out-edge destinations")));
        }
        timeouts.validate()?;
        Ok(Self { node: n, listen, peers, coordinator, timeouts })
    }
}

/// Stops a daemon running in this process: raises the stop flag and shuts
/// down every socket it opened, so the effect on peers matches the process
/// disappearing.
#[derive(Debug, Clone, Default)]
pub struct StopHandle {
    flag: Arc<AtomicBool>,
    sockets: Arc<Mutex<Vec<TcpStream>>>,
}

impl StopHandle {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn stop(&self) {
        self.flag.store(true, Ordering::SeqCst);
        for s in self.sockets.lock().expect("socket registry").drain(..) {
            let _ = s.shutdown(std::net::Shutdown::Both);
        }
    }

    pub fn is_stopped(&self) -> bool {
        self.flag.load(Ordering::SeqCst)
    }

    pub(crate) fn register(&self, stream: &TcpStream) {
        if let Ok(clone) = stream.try_clone() {
            self.sockets.lock().expect("socket registry").push(clone);
        }
        if self.is_stopped() {
            let _ = stream.shutdown(std::net::Shutdown::Both);
        }
    }
}

type Writer = Arc<Mutex<TcpStream>>;

fn send(writer: &Writer, msg: &WireMessage) -> Result<(), WireError> {
    let mut stream = writer.lock().expect("writer lock");
    write_message(&mut *stream, msg)
}

pub(crate) fn connect_retry(
    addr: SocketAddr,
    retry: Duration,
    stop: &StopHandle,
    deadline: Option<Instant>,
) -> Option<TcpStream> {
    loop {
        if stop.is_stopped() || deadline.is_some_and(|d| Instant::now() > d) {
            return None;
        }
        match TcpStream::connect_timeout(&addr, Duration::from_millis(500)) {
            Ok(s) => {
                let _ = s.set_nodelay(true);
                stop.register(&s);
                return Some(s);
            }
            Err(_) => thread::sleep(retry),
        }
    }
}

enum Event {
    Inbound { source: usize, conn: u64, writer: Writer },
    Message { source: usize, msg: WireMessage },
    Closed { source: usize, conn: u64 },
    ControlReady(Writer),
    Shutdown,
    CoordinatorLost,
}

struct Round {
    started: Instant,
    /// Payload per in-edge source; `None` is a Φ marker.
    inputs: HashMap<usize, Option<Vec<f32>>>,
}

fn accept_loop(listener: TcpListener, tx: Sender<Event>, stop: StopHandle) {
    static CONN: AtomicU64 = AtomicU64::new(0);
    if listener.set_nonblocking(true).is_err() {
        return;
    }
    while !stop.is_stopped() {
        match listener.accept() {
            Ok((stream, _)) => {
                let _ = stream.set_nonblocking(false);
                let _ = stream.set_nodelay(true);
                stop.register(&stream);
                let conn = CONN.fetch_add(1, Ordering::Relaxed);
                let tx = tx.clone();
                thread::spawn(move || inbound_reader(stream, conn, tx));
            }
            Err(e) if e.kind() == ErrorKind::WouldBlock => thread::sleep(Duration::from_millis(2)),
            Err(_) => thread::sleep(Duration::from_millis(10)),
        }
    }
}

fn inbound_reader(mut stream: TcpStream, conn: u64, tx: Sender<Event>) {
    let Ok(writer) = stream.try_clone() else { return };
    let source = match read_message(&mut stream) {
        Ok(Some(m)) if m.msg_type == MsgType::Hello => m.source_node as usize,
        _ => {
            let _ = stream.shutdown(std::net::Shutdown::Both);
            return;
        }
    };
    if tx.send(Event::Inbound { source, conn, writer: Arc::new(Mutex::new(writer)) }).is_err() {
        return;
    }
    loop {
        match read_message(&mut stream) {
            Ok(Some(msg)) => {
                if tx.send(Event::Message { source, msg }).is_err() {
                    return;
                }
            }
            // End of stream, transport error, or a malformed frame (including
            // a version mismatch): the link is closed.
            _ => {
                let _ = stream.shutdown(std::net::Shutdown::Both);
                let _ = tx.send(Event::Closed { source, conn });
                return;
            }
        }
    }
}

/// Keeps one out-edge connected, forwarding queued messages and answering
/// keep-alives from the destination.
fn outbound_link(
    node: u16,
    addr: SocketAddr,
    rx: Receiver<WireMessage>,
    linked: Arc<AtomicBool>,
    retry: Duration,
    stop: StopHandle,
) {
    while !stop.is_stopped() {
        let Some(stream) = connect_retry(addr, retry, &stop, None) else { return };
        // Anything queued while disconnected belongs to rounds the
        // destination no longer waits for.
        while rx.try_recv().is_ok() {}
        let writer: Writer = match stream.try_clone() {
            Ok(s) => Arc::new(Mutex::new(s)),
            Err(_) => continue,
        };
        if send(&writer, &WireMessage::control(MsgType::Hello, node)).is_err() {
            continue;
        }
        let open = Arc::new(AtomicBool::new(true));
        {
            let mut stream = stream;
            let writer = writer.clone();
            let open = open.clone();
            thread::spawn(move || {
                while let Ok(Some(msg)) = read_message(&mut stream) {
                    if msg.msg_type == MsgType::Keepalive
                        && send(&writer, &WireMessage::control(MsgType::KeepaliveAck, node)).is_err()
                    {
                        break;
                    }
                }
                open.store(false, Ordering::SeqCst);
            });
        }
        linked.store(true, Ordering::SeqCst);
        while open.load(Ordering::SeqCst) && !stop.is_stopped() {
            match rx.recv_timeout(Duration::from_millis(20)) {
                Ok(msg) => {
                    if send(&writer, &msg).is_err() {
                        break;
                    }
                }
                Err(RecvTimeoutError::Timeout) => {}
                Err(RecvTimeoutError::Disconnected) => return,
            }
        }
        linked.store(false, Ordering::SeqCst);
        let _ = writer.lock().expect("writer lock").shutdown(std::net::Shutdown::Both);
    }
}

/// Connects to the coordinator and greets it once every out-edge is linked.
fn control_link(
    node: u16,
    addr: SocketAddr,
    links: Vec<Arc<AtomicBool>>,
    tx: Sender<Event>,
    retry: Duration,
    stop: StopHandle,
) {
    let Some(mut stream) = connect_retry(addr, retry, &stop, None) else { return };
    while !links.iter().all(|l| l.load(Ordering::SeqCst)) {
        if stop.is_stopped() {
            return;
        }
        thread::sleep(retry);
    }
    let Ok(clone) = stream.try_clone() else { return };
    let writer: Writer = Arc::new(Mutex::new(clone));
    if send(&writer, &WireMessage::control(MsgType::Hello, node)).is_err() {
        return;
    }
    if tx.send(Event::ControlReady(writer)).is_err() {
        return;
    }
    loop {
        match read_message(&mut stream) {
            Ok(Some(m)) if m.msg_type == MsgType::Shutdown => {
                let _ = tx.send(Event::Shutdown);
                return;
            }
            Ok(Some(_)) => {}
            _ => {
                if !stop.is_stopped() {
                    let _ = tx.send(Event::CoordinatorLost);
                }
                return;
            }
        }
    }
}

/// The node's computation for one round: the Add junction over whatever
/// arrived (missing sources are Φ), then the expansion layer and slab.
pub fn compute_round(
    dnn: &DistributedDnn<f32>,
    node: usize,
    inputs: &HashMap<usize, Option<Vec<f32>>>,
) -> Result<Option<Vec<f32>>> {
    let g = &dnn.graph;
    let rows: Vec<(Option<Array1<f32>>, &[f32])> = g
        .incoming(node)
        .into_iter()
        .map(|h| {
            let hc = &g.hyperconnections[h];
            let v = inputs.get(&hc.src).cloned().flatten().map(Array1::from);
            (v, hc.weight.as_slice())
        })
        .collect();
    for ((v, _), h) in rows.iter().zip(g.incoming(node)) {
        if let Some(v) = v {
            let dim = g.hyperconnections[h].dim;
            if v.len() != dim {
                return Err(Error::dims(dim, v.len(), "hyperconnection payload"));
            }
        }
    }
    let operands: Vec<(Option<ArrayView2<f32>>, &[f32])> =
        rows.iter().map(|(v, w)| (v.as_ref().map(|v| v.view().insert_axis(ndarray::Axis(0))), *w)).collect();
    let width = g.expansion[node].map_or(0, |e| e.width);
    let sum = match add_batch(&operands, 1, width) {
        Some(x) => ActivationVector::Value(x.index_axis_move(ndarray::Axis(0), 0)),
        None => ActivationVector::Null,
    };
    Ok(match node_forward(dnn, node, &sum)? {
        ActivationVector::Value(v) => Some(v.to_vec()),
        ActivationVector::Null => None,
    })
}

/// Runs a node daemon until the coordinator sends SHUTDOWN (`Ok`) or `stop`
/// is raised.
pub fn serve_node(dnn: Arc<DistributedDnn<f32>>, plan: NodePlan, stop: StopHandle) -> Result<()> {
    plan.timeouts.validate()?;
    let g = &dnn.graph;
    let node = plan.node;
    if node >= g.nodes.len() || g.nodes[node].tier == Tier::Iot {
        return Err(Error::Config(format!("node index {node} is not a compute node")));
    }
    let id = node as u16;
    let timeouts = plan.timeouts;
    let listener = bind_retry(plan.listen, Duration::from_secs(5))?;
    let (tx, rx) = mpsc::channel();

    {
        let tx = tx.clone();
        let stop = stop.clone();
        thread::spawn(move || accept_loop(listener, tx, stop));
    }
    let mut out_links: Vec<Sender<WireMessage>> = Vec::new();
    let mut linked = Vec::new();
    for &(_, addr) in &plan.peers {
        let (ltx, lrx) = mpsc::channel();
        let flag = Arc::new(AtomicBool::new(false));
        out_links.push(ltx);
        linked.push(flag.clone());
        let stop = stop.clone();
        thread::spawn(move || outbound_link(id, addr, lrx, flag, timeouts.connect_retry(), stop));
    }
    {
        let tx = tx.clone();
        let stop = stop.clone();
        let coordinator = plan.coordinator;
        thread::spawn(move || control_link(id, coordinator, linked, tx, timeouts.connect_retry(), stop));
    }
    drop(tx);

    let mut sources: Vec<usize> = g.incoming(node).iter().map(|&h| g.hyperconnections[h].src).collect();
    sources.sort_unstable();
    sources.dedup();
    let mut monitor = HeartbeatMonitor::new(&sources, timeouts.heartbeat(), timeouts.suspicion(), Instant::now())?;
    let mut inbound: HashMap<usize, (u64, Writer)> = HashMap::new();
    let mut control: Option<Writer> = None;
    let mut rounds: BTreeMap<u64, Round> = BTreeMap::new();
    let mut high_water: Option<u64> = None;
    let mut next_tick = Instant::now() + timeouts.heartbeat();
    let is_sink = node == g.sink();

    while !stop.is_stopped() {
        let now = Instant::now();
        let mut wake = next_tick;
        if let Some(r) = rounds.values().map(|r| r.started + timeouts.round()).min() {
            wake = wake.min(r);
        }
        let event = rx.recv_timeout(wake.saturating_duration_since(now).max(Duration::from_millis(1)));
        let now = Instant::now();
        match event {
            Ok(Event::Inbound { source, conn, writer }) => {
                inbound.insert(source, (conn, writer));
                monitor.heartbeat(source, now);
            }
            Ok(Event::Message { source, msg }) => {
                monitor.heartbeat(source, now);
                let stale = high_water.is_some_and(|h| msg.inference_id <= h);
                if msg.msg_type == MsgType::Data && sources.contains(&source) && !stale {
                    rounds
                        .entry(msg.inference_id)
                        .or_insert_with(|| Round { started: now, inputs: HashMap::new() })
                        .inputs
                        .insert(source, msg.payload);
                }
            }
            Ok(Event::Closed { source, conn }) => {
                if inbound.get(&source).is_some_and(|(c, _)| *c == conn) {
                    inbound.remove(&source);
                    monitor.disconnected(source);
                }
            }
            Ok(Event::ControlReady(writer)) => control = Some(writer),
            Ok(Event::Shutdown) => {
                stop.stop();
                return Ok(());
            }
            Ok(Event::CoordinatorLost) => {
                stop.stop();
                return Err(Error::Runtime("lost the coordinator connection".into()));
            }
            Err(RecvTimeoutError::Timeout) => {}
            Err(RecvTimeoutError::Disconnected) => break,
        }

        if now >= next_tick {
            for (_, writer) in inbound.values() {
                let _ = send(writer, &WireMessage::control(MsgType::Keepalive, id));
            }
            monitor.tick(now);
            next_tick = now + timeouts.heartbeat();
        }

        let ready: Vec<u64> = rounds
            .iter()
            .filter(|(_, r)| {
                now.duration_since(r.started) >= timeouts.round()
                    || sources.iter().all(|s| r.inputs.contains_key(s) || !monitor.is_alive(*s))
            })
            .map(|(&k, _)| k)
            .collect();
        for inference_id in ready {
            let round = rounds.remove(&inference_id).expect("listed round");
            high_water = Some(high_water.map_or(inference_id, |h| h.max(inference_id)));
            let payload = match compute_round(&dnn, node, &round.inputs) {
                Ok(p) => p,
                Err(e) => {
                    eprintln!("node {}: round {inference_id}: {e}; emitting null", g.nodes[node].id);
                    None
                }
            };
            let msg = WireMessage::data(id, inference_id, payload);
            if is_sink {
                if let Some(writer) = &control {
                    let _ = send(writer, &msg);
                }
            } else {
                for link in &out_links {
                    let _ = link.send(msg.clone());
                }
            }
        }
    }
    stop.stop();
    Ok(())
}

fn bind_retry(addr: SocketAddr, patience: Duration) -> Result<TcpListener> {
    let deadline = Instant::now() + patience;
    loop {
        match TcpListener::bind(addr) {
            Ok(l) => return Ok(l),
            Err(e) if e.kind() == ErrorKind::AddrInUse && Instant::now() < deadline => {
                thread::sleep(Duration::from_millis(20))
            }
            Err(e) => return Err(Error::Runtime(format!("cannot listen on {addr}: {e}"))),
        }
    }
}
