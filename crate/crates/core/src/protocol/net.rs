//! Networked shells around the protocol cores: a threaded TCP/TLS server,
//! the trainer client loop, and the fully-connected peer runner.
//!
//! Each connection gets one thread that owns its stream, pushes decoded
//! frames into the main loop's channel, and drains an outbound queue. The
//! main loop is the single writer to the protocol core, which keeps the
//! token rounds totally ordered.

use std::collections::HashMap;
use std::io::Read;
use std::net::{TcpListener, TcpStream};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::mpsc::{channel, Receiver, RecvTimeoutError, Sender};
use std::sync::Arc;
use std::thread::JoinHandle;
use std::time::{Duration, Instant};

use super::fnt::{OrderPolicy, PeerOutput, PeerProto};
use super::local::LocalRunner;
use super::message::{read_frame, write_frame, Message};
use super::server::{ConnId, Output, ServerConfig, ServerCore, ServerEvent};
use super::tls::{self, TlsPaths, TlsRole};
use super::trainer::{RelayPayload, TrainerProto};
use super::ProtocolError;
use crate::nn::ParamSet;

/// Stream object shared by the plain and TLS paths.
pub trait NetStream: Read + std::io::Write + Send {}
impl<T: Read + std::io::Write + Send> NetStream for T {}

enum ConnEvent {
    Opened(Box<dyn NetStream>),
    Frame(ConnId, Message),
    Closed(ConnId),
}

enum Outbound {
    Bytes(Vec<u8>),
    Close,
}

/// Incremental frame decoder so reads can be chunked/timed out safely.
struct FrameBuffer {
    buf: Vec<u8>,
}

impl FrameBuffer {
    fn new() -> Self {
        FrameBuffer { buf: Vec::new() }
    }

    fn push(&mut self, bytes: &[u8]) {
        self.buf.extend_from_slice(bytes);
    }

    fn pop(&mut self) -> Result<Option<Message>, ProtocolError> {
        if self.buf.len() < 4 {
            return Ok(None);
        }
        let len = u32::from_be_bytes(self.buf[..4].try_into().unwrap()) as usize;
        if len == 0 {
            return Err(ProtocolError::EmptyFrame);
        }
        if len > super::message::MAX_FRAME {
            return Err(ProtocolError::FrameTooLarge(len));
        }
        if self.buf.len() < 4 + len {
            return Ok(None);
        }
        let body: Vec<u8> = self.buf[4..4 + len].to_vec();
        self.buf.drain(..4 + len);
        Message::decode(&body).map(Some)
    }
}

const POLL: Duration = Duration::from_millis(25);

/// Reader/writer loop owning one connection.
fn connection_loop(
    conn: ConnId,
    mut stream: Box<dyn NetStream>,
    inbound: Sender<ConnEvent>,
    outbound: Receiver<Outbound>,
) {
    let mut frames = FrameBuffer::new();
    let mut chunk = [0u8; 64 * 1024];
    'outer: loop {
        loop {
            match outbound.try_recv() {
                Ok(Outbound::Bytes(bytes)) => {
                    if stream.write_all(&bytes).and_then(|_| stream.flush()).is_err() {
                        break 'outer;
                    }
                }
                Ok(Outbound::Close) => break 'outer,
                Err(_) => break,
            }
        }
        match stream.read(&mut chunk) {
            Ok(0) => break,
            Ok(n) => {
                frames.push(&chunk[..n]);
                loop {
                    match frames.pop() {
                        Ok(Some(msg)) => {
                            if inbound.send(ConnEvent::Frame(conn, msg)).is_err() {
                                break 'outer;
                            }
                        }
                        Ok(None) => break,
                        Err(_) => break 'outer,
                    }
                }
            }
            Err(e)
                if e.kind() == std::io::ErrorKind::WouldBlock
                    || e.kind() == std::io::ErrorKind::TimedOut => {}
            Err(_) => break,
        }
    }
    let _ = inbound.send(ConnEvent::Closed(conn));
}

fn spawn_connection(
    conn: ConnId,
    stream: Box<dyn NetStream>,
    inbound: Sender<ConnEvent>,
) -> (Sender<Outbound>, JoinHandle<()>) {
    let (tx, rx) = channel();
    let handle = std::thread::spawn(move || connection_loop(conn, stream, inbound, rx));
    (tx, handle)
}

fn prepare_stream(
    stream: TcpStream,
    tls: Option<(&TlsPaths, TlsRole)>,
) -> Result<Box<dyn NetStream>, ProtocolError> {
    stream.set_read_timeout(Some(POLL))?;
    stream.set_nodelay(true)?;
    match tls {
        None => Ok(Box::new(stream)),
        Some((paths, role)) => tls::wrap(stream, paths, role),
    }
}

/// Outcome of a completed server run.
pub struct ServerRunReport {
    /// The last stored ciphertext (still opaque — the server has no key).
    pub final_ciphertext: Option<Vec<u8>>,
    pub events: Vec<ServerEvent>,
    pub grant_history: Vec<(u32, u32)>,
}

/// Accepts `trainer_count` trainers on `listener` and relays encrypted
/// weights until every central epoch has run; returns the audit log.
/// A trainer holding the token longer than `token_timeout` is dropped and
/// its round retried with the remaining trainers.
pub fn run_server(
    listener: TcpListener,
    cfg: ServerConfig,
    token_timeout: Duration,
    tls: Option<&TlsPaths>,
) -> Result<ServerRunReport, ProtocolError> {
    let (inbound_tx, inbound) = channel::<ConnEvent>();
    let stop = Arc::new(AtomicBool::new(false));

    let accept_stop = stop.clone();
    let accept_tx = inbound_tx.clone();
    let tls_paths = tls.cloned();
    listener.set_nonblocking(true)?;
    let accept_thread = std::thread::spawn(move || {
        while !accept_stop.load(Ordering::Relaxed) {
            match listener.accept() {
                Ok((stream, _)) => {
                    let _ = stream.set_nonblocking(false);
                    match prepare_stream(stream, tls_paths.as_ref().map(|p| (p, TlsRole::Server))) {
                        Ok(s) => {
                            if accept_tx.send(ConnEvent::Opened(s)).is_err() {
                                return;
                            }
                        }
                        Err(_) => continue, // handshake failure; next trainer
                    }
                }
                Err(e) if e.kind() == std::io::ErrorKind::WouldBlock => {
                    std::thread::sleep(POLL);
                }
                Err(_) => return,
            }
        }
    });

    let mut core = ServerCore::new(cfg);
    let mut writers: HashMap<ConnId, Sender<Outbound>> = HashMap::new();
    let mut handles = Vec::new();
    let mut next_conn: ConnId = 0;
    let mut deadline: Option<(u32, Instant)> = None;

    let result = (|| -> Result<(), ProtocolError> {
        loop {
            if core.is_done() {
                return Ok(());
            }
            // track the outstanding token's deadline
            match core.token_holder() {
                Some(holder) => {
                    if deadline.map(|(t, _)| t) != Some(holder) {
                        deadline = Some((holder, Instant::now() + token_timeout));
                    }
                }
                None => deadline = None,
            }
            let event = match inbound.recv_timeout(POLL) {
                Ok(event) => event,
                Err(RecvTimeoutError::Timeout) => {
                    if let Some((holder, at)) = deadline {
                        if Instant::now() >= at {
                            let conn = core.conn_of(holder);
                            let outputs = match conn {
                                Some(conn) => {
                                    let outs = core.on_trainer_lost(conn, "token timeout")?;
                                    if let Some(tx) = writers.get(&conn) {
                                        let _ = tx.send(Outbound::Close);
                                    }
                                    outs
                                }
                                None => Vec::new(),
                            };
                            deadline = None;
                            dispatch(&mut writers, outputs);
                        }
                    }
                    continue;
                }
                Err(RecvTimeoutError::Disconnected) => {
                    return Err(ProtocolError::Stalled("all connection threads gone".into()))
                }
            };
            match event {
                ConnEvent::Opened(stream) => {
                    let conn = next_conn;
                    next_conn += 1;
                    let (tx, handle) = spawn_connection(conn, stream, inbound_tx.clone());
                    writers.insert(conn, tx);
                    handles.push(handle);
                    dispatch(&mut writers, core.on_connect(conn));
                }
                ConnEvent::Frame(conn, msg) => {
                    let outputs = core.on_message(conn, msg)?;
                    dispatch(&mut writers, outputs);
                }
                ConnEvent::Closed(conn) => {
                    writers.remove(&conn);
                    if !core.is_done() {
                        let outputs = core.on_trainer_lost(conn, "disconnected")?;
                        dispatch(&mut writers, outputs);
                    }
                }
            }
        }
    })();

    stop.store(true, Ordering::Relaxed);
    for (_, tx) in writers.drain() {
        let _ = tx.send(Outbound::Close);
    }
    let _ = accept_thread.join();
    for handle in handles {
        let _ = handle.join();
    }
    result?;
    Ok(ServerRunReport {
        final_ciphertext: core.final_ciphertext().map(<[u8]>::to_vec),
        events: core.events().to_vec(),
        grant_history: core.grant_history().to_vec(),
    })
}

fn dispatch(writers: &mut HashMap<ConnId, Sender<Outbound>>, outputs: Vec<Output>) {
    for output in outputs {
        match output {
            Output::Send(conn, msg) => {
                if let Some(tx) = writers.get(&conn) {
                    let _ = tx.send(Outbound::Bytes(msg.encode()));
                }
            }
            Output::Close(conn) => {
                if let Some(tx) = writers.get(&conn) {
                    let _ = tx.send(Outbound::Close);
                }
            }
        }
    }
}

/// Everything the networked trainer needs.
pub struct NetTrainerConfig {
    pub trainer_id: u32,
    pub server_addr: String,
    pub payload: RelayPayload,
    pub runner: LocalRunner,
    pub central_epochs: u32,
    /// Uploads the initial weights when set.
    pub seed_weights: Option<ParamSet>,
    pub tls: Option<TlsPaths>,
}

/// Connects to the relay server, serves token grants until the run ends,
/// and returns the final weights plus the runner (logs, ledgers).
pub fn run_trainer(cfg: NetTrainerConfig) -> Result<(ParamSet, LocalRunner), ProtocolError> {
    let stream = TcpStream::connect(&cfg.server_addr)?;
    stream.set_nodelay(true)?;
    let mut stream: Box<dyn NetStream> = match &cfg.tls {
        None => Box::new(stream),
        Some(paths) => tls::wrap(stream, paths, TlsRole::Client)?,
    };
    let mut proto = TrainerProto::new(
        cfg.trainer_id,
        cfg.payload,
        cfg.runner,
        cfg.central_epochs,
        cfg.seed_weights,
    );
    for msg in proto.start()? {
        write_frame(&mut stream, &msg)?;
    }
    loop {
        match read_frame(&mut stream)? {
            Some(msg) => {
                for reply in proto.on_message(msg)? {
                    write_frame(&mut stream, &reply)?;
                }
            }
            None => {
                if proto.is_done() {
                    let final_weights = proto
                        .final_weights()
                        .cloned()
                        .ok_or(ProtocolError::ConnectionClosed)?;
                    return Ok((final_weights, proto.into_runner()));
                }
                return Err(ProtocolError::ConnectionClosed);
            }
        }
    }
}

/// Peer endpoint of the fully-connected topology.
pub struct FntPeerConfig {
    pub peer_id: u32,
    pub trainer_count: u32,
    pub central_epochs: u32,
    /// This peer's listen address.
    pub listen: TcpListener,
    /// Addresses of the peers with a lower id (this peer dials them).
    pub dial: Vec<(u32, String)>,
    pub order: OrderPolicy,
    pub runner: LocalRunner,
    /// Initial weights; set only on the starting peer.
    pub seed_weights: Option<ParamSet>,
    pub tls: Option<TlsPaths>,
    pub dial_retry: Duration,
}

/// Runs one peer of the mesh: establishes the pairwise channels (higher id
/// dials lower id, so each pair has exactly one connection), then relays
/// until the final broadcast.
pub fn run_fnt_peer(cfg: FntPeerConfig) -> Result<(ParamSet, LocalRunner), ProtocolError> {
    let l = cfg.trainer_count;
    let expect_inbound = (l - 1 - cfg.peer_id) as usize; // from higher ids
    let (inbound_tx, inbound) = channel::<ConnEvent>();
    let mut writers: HashMap<u32, Sender<Outbound>> = HashMap::new();
    let mut handles = Vec::new();
    let mut conn_peer: HashMap<ConnId, u32> = HashMap::new();
    let mut next_conn: ConnId = 0;

    // dial lower ids, retrying while they come up
    for (peer, addr) in &cfg.dial {
        let started = Instant::now();
        let stream = loop {
            match TcpStream::connect(addr) {
                Ok(s) => break s,
                Err(_) if started.elapsed() < cfg.dial_retry => {
                    std::thread::sleep(Duration::from_millis(50))
                }
                Err(_) => {
                    return Err(ProtocolError::PeerUnreachable { peer: *peer, position: 0 });
                }
            }
        };
        stream.set_nodelay(true)?;
        let mut stream = prepare_stream(stream, cfg.tls.as_ref().map(|p| (p, TlsRole::Client)))?;
        write_frame(&mut stream, &Message::Hello { trainer_id: cfg.peer_id })?;
        let conn = next_conn;
        next_conn += 1;
        conn_peer.insert(conn, *peer);
        let (tx, handle) = spawn_connection(conn, stream, inbound_tx.clone());
        writers.insert(*peer, tx);
        handles.push(handle);
    }

    // accept higher ids; each introduces itself with HELLO
    cfg.listen.set_nonblocking(false)?;
    let mut accepted = 0;
    while accepted < expect_inbound {
        let (stream, _) = cfg.listen.accept()?;
        stream.set_nodelay(true)?;
        let mut stream = prepare_stream(stream, cfg.tls.as_ref().map(|p| (p, TlsRole::Server)))?;
        // blocking read for the introduction frame
        let peer = loop {
            match read_frame(&mut stream) {
                Ok(Some(Message::Hello { trainer_id })) => break trainer_id,
                Ok(Some(other)) => {
                    return Err(ProtocolError::UnexpectedMessage {
                        context: "fnt-mesh",
                        detail: other.type_name().into(),
                    })
                }
                Ok(None) => return Err(ProtocolError::ConnectionClosed),
                Err(ProtocolError::Io(e))
                    if e.kind() == std::io::ErrorKind::WouldBlock
                        || e.kind() == std::io::ErrorKind::TimedOut =>
                {
                    continue
                }
                Err(e) => return Err(e),
            }
        };
        let conn = next_conn;
        next_conn += 1;
        conn_peer.insert(conn, peer);
        let (tx, handle) = spawn_connection(conn, stream, inbound_tx.clone());
        writers.insert(peer, tx);
        handles.push(handle);
        accepted += 1;
    }

    let mut proto = PeerProto::new(cfg.peer_id, l, cfg.central_epochs, cfg.runner, cfg.order);
    let send_outputs =
        |writers: &HashMap<u32, Sender<Outbound>>, outputs: Vec<PeerOutput>| {
            for out in outputs {
                let PeerOutput::Send { to, msg } = out;
                if let Some(tx) = writers.get(&to) {
                    let _ = tx.send(Outbound::Bytes(msg.encode()));
                }
            }
        };
    if let Some(initial) = cfg.seed_weights {
        let outputs = proto.kickoff(initial)?;
        send_outputs(&writers, outputs);
    }
    let result = (|| -> Result<(), ProtocolError> {
        while !proto.is_done() {
            match inbound.recv_timeout(Duration::from_secs(600)) {
                Ok(ConnEvent::Frame(conn, msg)) => {
                    let from = conn_peer[&conn];
                    let outputs = proto.on_message(from, msg)?;
                    send_outputs(&writers, outputs);
                }
                Ok(ConnEvent::Closed(conn)) => {
                    if !proto.is_done() {
                        return Err(ProtocolError::PeerUnreachable {
                            peer: conn_peer[&conn],
                            position: 0,
                        });
                    }
                }
                Ok(ConnEvent::Opened(_)) => {}
                Err(_) => return Err(ProtocolError::Stalled("relay timed out".into())),
            }
        }
        Ok(())
    })();
    for (_, tx) in writers.drain() {
        let _ = tx.send(Outbound::Close);
    }
    for handle in handles {
        let _ = handle.join();
    }
    result?;
    let final_weights =
        proto.final_weights().cloned().ok_or(ProtocolError::ConnectionClosed)?;
    Ok((final_weights, proto.into_runner()))
}
