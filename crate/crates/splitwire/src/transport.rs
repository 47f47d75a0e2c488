//! Frame transports: UDP datagrams, TCP streams and an in-memory channel
//! pair standing in for radio links that have no desk-scale analog
//! (ESP-NOW, BLE).
//!
//! A [`FrameLink`] moves whole frames. [`send_message`] chunks a message and
//! pushes it through a link either best-effort (`Reliability::None`, the
//! datagram default) or with per-frame stop-and-wait acknowledgements.
//! [`FaultyLink`] wraps any link and injects seeded loss, duplication and
//! reordering on the send path.

use std::io::{ErrorKind, Read, Write};
use std::net::{SocketAddr, TcpListener, TcpStream, ToSocketAddrs, UdpSocket};
use std::sync::mpsc::{channel, Receiver, RecvTimeoutError, Sender};
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use splitwire_core::frame::{
    chunk_message, decode_frame, encode_frame, header_payload_len, Frame, FrameError,
    MsgType, Reassembler, HEADER_LEN,
};
use splitwire_core::link::LinkModel;

#[derive(Debug, thiserror::Error)]
pub enum TransportError {
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("frame: {0}")]
    Frame(#[from] FrameError),
    #[error("link closed by peer")]
    Closed,
    #[error("no peer known yet on this endpoint")]
    NoPeer,
    #[error("payload of {len} bytes exceeds link max payload {max}")]
    PayloadExceedsMax { len: usize, max: usize },
    #[error("timed out waiting for {waiting_for}")]
    Timeout { waiting_for: String },
    #[error("gave up on seq {seq} after {retries} retransmissions")]
    RetriesExhausted { seq: u16, retries: u32 },
}

/// A bidirectional frame channel.
pub trait FrameLink: Send {
    fn send_frame(&mut self, frame: &Frame) -> Result<(), TransportError>;

    /// Next frame, or `None` if nothing arrives within `timeout`.
    fn recv_frame(&mut self, timeout: Duration) -> Result<Option<Frame>, TransportError>;

    /// Largest payload one frame may carry on this link.
    fn max_payload(&self) -> usize;

    /// Push out anything held back (fault injectors hold frames to reorder).
    fn flush(&mut self) -> Result<(), TransportError> {
        Ok(())
    }

    /// Modeled transfer time accumulated so far, for links that simulate a
    /// radio profile.
    fn simulated_elapsed_ms(&self) -> Option<f64> {
        None
    }
}

impl<T: FrameLink + ?Sized> FrameLink for Box<T> {
    fn send_frame(&mut self, frame: &Frame) -> Result<(), TransportError> {
        (**self).send_frame(frame)
    }
    fn recv_frame(&mut self, timeout: Duration) -> Result<Option<Frame>, TransportError> {
        (**self).recv_frame(timeout)
    }
    fn max_payload(&self) -> usize {
        (**self).max_payload()
    }
    fn flush(&mut self) -> Result<(), TransportError> {
        (**self).flush()
    }
    fn simulated_elapsed_ms(&self) -> Option<f64> {
        (**self).simulated_elapsed_ms()
    }
}

// ── UDP datagram link ─────────────────────────────────────────────

/// One frame per datagram over a loopback or LAN socket.
pub struct DatagramLink {
    socket: UdpSocket,
    peer: Option<SocketAddr>,
    max_payload: usize,
}

/// Default max payload for datagram links (ESP32 WiFi MTU budget).
pub const DATAGRAM_MAX_PAYLOAD: usize = 1472;

impl DatagramLink {
    /// Bind and wait for a peer; the peer is learned from the first datagram.
    pub fn bind<A: ToSocketAddrs>(addr: A) -> Result<Self, TransportError> {
        let socket = UdpSocket::bind(addr)?;
        Ok(Self { socket, peer: None, max_payload: DATAGRAM_MAX_PAYLOAD })
    }

    /// Bind an ephemeral port and address a fixed peer.
    pub fn connect<A: ToSocketAddrs>(remote: A) -> Result<Self, TransportError> {
        let socket = UdpSocket::bind("127.0.0.1:0")?;
        let peer = remote
            .to_socket_addrs()?
            .next()
            .ok_or_else(|| std::io::Error::new(ErrorKind::InvalidInput, "no address"))?;
        Ok(Self { socket, peer: Some(peer), max_payload: DATAGRAM_MAX_PAYLOAD })
    }

    pub fn local_addr(&self) -> Result<SocketAddr, TransportError> {
        Ok(self.socket.local_addr()?)
    }
}

impl FrameLink for DatagramLink {
    fn send_frame(&mut self, frame: &Frame) -> Result<(), TransportError> {
        if frame.payload.len() > self.max_payload {
            return Err(TransportError::PayloadExceedsMax {
                len: frame.payload.len(),
                max: self.max_payload,
            });
        }
        let peer = self.peer.ok_or(TransportError::NoPeer)?;
        self.socket.send_to(&encode_frame(frame), peer)?;
        Ok(())
    }

    fn recv_frame(&mut self, timeout: Duration) -> Result<Option<Frame>, TransportError> {
        self.socket.set_read_timeout(Some(timeout.max(Duration::from_millis(1))))?;
        let mut buf = [0u8; 65_536];
        match self.socket.recv_from(&mut buf) {
            Ok((n, from)) => {
                if self.peer.is_none() {
                    self.peer = Some(from);
                }
                match decode_frame(&buf[..n]) {
                    Ok(frame) => Ok(Some(frame)),
                    Err(e) => {
                        // a datagram that fails validation is dropped, like a
                        // corrupted radio frame
                        log::warn!("dropping bad datagram: {e}");
                        Ok(None)
                    }
                }
            }
            Err(e) if matches!(e.kind(), ErrorKind::WouldBlock | ErrorKind::TimedOut) => Ok(None),
            Err(e) => Err(e.into()),
        }
    }

    fn max_payload(&self) -> usize {
        self.max_payload
    }
}

/// A connected pair of datagram links on the loopback interface.
pub fn datagram_pair() -> Result<(DatagramLink, DatagramLink), TransportError> {
    let a = UdpSocket::bind("127.0.0.1:0")?;
    let b = UdpSocket::bind("127.0.0.1:0")?;
    let addr_a = a.local_addr()?;
    let addr_b = b.local_addr()?;
    Ok((
        DatagramLink { socket: a, peer: Some(addr_b), max_payload: DATAGRAM_MAX_PAYLOAD },
        DatagramLink { socket: b, peer: Some(addr_a), max_payload: DATAGRAM_MAX_PAYLOAD },
    ))
}

// ── TCP stream link ───────────────────────────────────────────────

/// Frames over a byte stream; reads are buffered and frames are delimited by
/// the header's payload length.
pub struct StreamLink {
    stream: TcpStream,
    buf: Vec<u8>,
    max_payload: usize,
}

impl StreamLink {
    pub fn new(stream: TcpStream) -> Self {
        // a stream segments internally, so frames may carry any payload the
        // header's length field can express
        Self { stream, buf: Vec::new(), max_payload: u16::MAX as usize }
    }

    pub fn connect<A: ToSocketAddrs>(addr: A) -> Result<Self, TransportError> {
        Ok(Self::new(TcpStream::connect(addr)?))
    }

    /// Accept exactly one connection.
    pub fn accept_one<A: ToSocketAddrs>(addr: A) -> Result<Self, TransportError> {
        let listener = TcpListener::bind(addr)?;
        let (stream, _) = listener.accept()?;
        Ok(Self::new(stream))
    }

    fn try_parse(&mut self) -> Result<Option<Frame>, TransportError> {
        if self.buf.len() < HEADER_LEN {
            return Ok(None);
        }
        let header: [u8; HEADER_LEN] = self.buf[..HEADER_LEN].try_into().unwrap();
        let need = HEADER_LEN + header_payload_len(&header) as usize;
        if self.buf.len() < need {
            return Ok(None);
        }
        let frame = decode_frame(&self.buf[..need])?;
        self.buf.drain(..need);
        Ok(Some(frame))
    }
}

impl FrameLink for StreamLink {
    fn send_frame(&mut self, frame: &Frame) -> Result<(), TransportError> {
        if frame.payload.len() > self.max_payload {
            return Err(TransportError::PayloadExceedsMax {
                len: frame.payload.len(),
                max: self.max_payload,
            });
        }
        self.stream.write_all(&encode_frame(frame))?;
        Ok(())
    }

    fn recv_frame(&mut self, timeout: Duration) -> Result<Option<Frame>, TransportError> {
        let deadline = Instant::now() + timeout;
        loop {
            if let Some(frame) = self.try_parse()? {
                return Ok(Some(frame));
            }
            let now = Instant::now();
            if now >= deadline {
                return Ok(None);
            }
            self.stream.set_read_timeout(Some((deadline - now).max(Duration::from_millis(1))))?;
            let mut tmp = [0u8; 16_384];
            match self.stream.read(&mut tmp) {
                Ok(0) => return Err(TransportError::Closed),
                Ok(n) => self.buf.extend_from_slice(&tmp[..n]),
                Err(e) if matches!(e.kind(), ErrorKind::WouldBlock | ErrorKind::TimedOut) => {
                    return Ok(None)
                }
                Err(e) => return Err(e.into()),
            }
        }
    }

    fn max_payload(&self) -> usize {
        self.max_payload
    }
}

/// A connected pair of stream links on the loopback interface.
pub fn stream_pair() -> Result<(StreamLink, StreamLink), TransportError> {
    let listener = TcpListener::bind("127.0.0.1:0")?;
    let addr = listener.local_addr()?;
    let client = TcpStream::connect(addr)?;
    let (server, _) = listener.accept()?;
    Ok((StreamLink::new(server), StreamLink::new(client)))
}

// ── In-memory link ────────────────────────────────────────────────

/// Behaviour of an in-memory link standing in for a radio profile.
#[derive(Debug, Clone)]
pub struct InMemoryConfig {
    pub max_payload: usize,
    /// When present, each sent frame accrues modeled time.
    pub link_model: Option<LinkModel>,
}

impl Default for InMemoryConfig {
    fn default() -> Self {
        Self { max_payload: DATAGRAM_MAX_PAYLOAD, link_model: None }
    }
}

/// One end of a channel-backed link. Safe for one producer and one consumer.
pub struct InMemoryLink {
    tx: Sender<Vec<u8>>,
    rx: Receiver<Vec<u8>>,
    max_payload: usize,
    link_model: Option<LinkModel>,
    simulated_ms: f64,
}

impl FrameLink for InMemoryLink {
    fn send_frame(&mut self, frame: &Frame) -> Result<(), TransportError> {
        if frame.payload.len() > self.max_payload {
            return Err(TransportError::PayloadExceedsMax {
                len: frame.payload.len(),
                max: self.max_payload,
            });
        }
        if let Some(model) = &self.link_model {
            self.simulated_ms += model.transfer_ms(frame.payload.len() as u64, 1);
        }
        self.tx.send(encode_frame(frame)).map_err(|_| TransportError::Closed)?;
        Ok(())
    }

    fn recv_frame(&mut self, timeout: Duration) -> Result<Option<Frame>, TransportError> {
        match self.rx.recv_timeout(timeout) {
            Ok(bytes) => Ok(Some(decode_frame(&bytes)?)),
            Err(RecvTimeoutError::Timeout) => Ok(None),
            Err(RecvTimeoutError::Disconnected) => Err(TransportError::Closed),
        }
    }

    fn max_payload(&self) -> usize {
        self.max_payload
    }

    fn simulated_elapsed_ms(&self) -> Option<f64> {
        self.link_model.map(|_| self.simulated_ms)
    }
}

/// A crossed pair of in-memory links.
pub fn in_memory_pair(config: InMemoryConfig) -> (InMemoryLink, InMemoryLink) {
    let (tx_ab, rx_ab) = channel();
    let (tx_ba, rx_ba) = channel();
    let a = InMemoryLink {
        tx: tx_ab,
        rx: rx_ba,
        max_payload: config.max_payload,
        link_model: config.link_model,
        simulated_ms: 0.0,
    };
    let b = InMemoryLink {
        tx: tx_ba,
        rx: rx_ab,
        max_payload: config.max_payload,
        link_model: config.link_model,
        simulated_ms: 0.0,
    };
    (a, b)
}

// ── Fault injection ───────────────────────────────────────────────

/// Seeded fault rates applied on the send path.
#[derive(Debug, Clone, Copy)]
pub struct FaultConfig {
    pub loss: f64,
    pub duplicate: f64,
    pub reorder: f64,
    pub seed: u64,
}

impl FaultConfig {
    pub fn none(seed: u64) -> Self {
        Self { loss: 0.0, duplicate: 0.0, reorder: 0.0, seed }
    }

    pub fn is_quiet(&self) -> bool {
        self.loss == 0.0 && self.duplicate == 0.0 && self.reorder == 0.0
    }
}

/// Wraps any link and drops, duplicates or swaps outgoing frames according
/// to seeded rates. Dropped sequence numbers are recorded so tests can check
/// gap reports against the injected loss exactly.
pub struct FaultyLink<L: FrameLink> {
    inner: L,
    cfg: FaultConfig,
    rng: ChaCha8Rng,
    held: Option<Frame>,
    dropped: Vec<(MsgType, u16)>,
}

impl<L: FrameLink> FaultyLink<L> {
    pub fn new(inner: L, cfg: FaultConfig) -> Self {
        Self { inner, cfg, rng: ChaCha8Rng::seed_from_u64(cfg.seed), held: None, dropped: Vec::new() }
    }

    pub fn dropped(&self) -> &[(MsgType, u16)] {
        &self.dropped
    }

    pub fn into_inner(mut self) -> Result<L, TransportError> {
        self.flush()?;
        Ok(self.inner)
    }
}

impl<L: FrameLink> FrameLink for FaultyLink<L> {
    fn send_frame(&mut self, frame: &Frame) -> Result<(), TransportError> {
        if self.rng.random_bool(self.cfg.loss) {
            self.dropped.push((frame.msg_type, frame.seq));
            return Ok(());
        }
        if let Some(held) = self.held.take() {
            // emit the newer frame first, then the held one: adjacent swap
            self.inner.send_frame(frame)?;
            self.inner.send_frame(&held)?;
            return Ok(());
        }
        if self.rng.random_bool(self.cfg.reorder) {
            self.held = Some(frame.clone());
            return Ok(());
        }
        self.inner.send_frame(frame)?;
        if self.rng.random_bool(self.cfg.duplicate) {
            self.inner.send_frame(frame)?;
        }
        Ok(())
    }

    fn recv_frame(&mut self, timeout: Duration) -> Result<Option<Frame>, TransportError> {
        self.inner.recv_frame(timeout)
    }

    fn max_payload(&self) -> usize {
        self.inner.max_payload()
    }

    fn flush(&mut self) -> Result<(), TransportError> {
        if let Some(held) = self.held.take() {
            self.inner.send_frame(&held)?;
        }
        self.inner.flush()
    }

    fn simulated_elapsed_ms(&self) -> Option<f64> {
        self.inner.simulated_elapsed_ms()
    }
}

// ── Message send / receive ────────────────────────────────────────

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Reliability {
    /// Fire each frame once, best effort (raw datagram behaviour).
    None,
    /// Per-frame acknowledgement with retransmission.
    StopAndWait,
}

impl Reliability {
    pub fn parse(s: &str) -> Option<Self> {
        match s.to_ascii_lowercase().as_str() {
            "none" => Some(Self::None),
            "stop-and-wait" | "stop_and_wait" | "saw" => Some(Self::StopAndWait),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct SendOptions {
    pub reliability: Reliability,
    pub retry_timeout: Duration,
    pub max_retries: u32,
}

impl Default for SendOptions {
    fn default() -> Self {
        Self {
            reliability: Reliability::None,
            retry_timeout: Duration::from_millis(40),
            max_retries: 12,
        }
    }
}

impl SendOptions {
    pub fn reliable() -> Self {
        Self { reliability: Reliability::StopAndWait, ..Self::default() }
    }
}

/// Outcome of one message send. `frames_sent` and `bytes_sent` count every
/// transmission, retransmissions included.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TransferResult {
    pub bytes_sent: u64,
    pub frames_sent: u64,
    pub wall_time: Duration,
    pub retransmissions: u64,
    pub simulated_ms: Option<f64>,
}

/// Chunk `msg` and push it through the link.
pub fn send_message(
    link: &mut impl FrameLink,
    msg_type: MsgType,
    tensor_id: u32,
    msg: &[u8],
    chunk_bytes: u32,
    opts: SendOptions,
) -> Result<TransferResult, TransportError> {
    if chunk_bytes as usize > link.max_payload() {
        return Err(TransportError::PayloadExceedsMax {
            len: chunk_bytes as usize,
            max: link.max_payload(),
        });
    }
    let started = Instant::now();
    let before_sim = link.simulated_elapsed_ms();
    let frames = chunk_message(msg_type, tensor_id, msg, chunk_bytes)?;
    let mut bytes_sent = 0u64;
    let mut frames_sent = 0u64;
    let mut retransmissions = 0u64;

    match opts.reliability {
        Reliability::None => {
            for frame in &frames {
                link.send_frame(frame)?;
                frames_sent += 1;
                bytes_sent += frame.payload.len() as u64;
            }
            link.flush()?;
        }
        Reliability::StopAndWait => {
            for frame in &frames {
                let mut acked = false;
                let mut attempts = 0u32;
                while !acked {
                    if attempts > opts.max_retries {
                        return Err(TransportError::RetriesExhausted {
                            seq: frame.seq,
                            retries: opts.max_retries,
                        });
                    }
                    link.send_frame(frame)?;
                    link.flush()?;
                    frames_sent += 1;
                    bytes_sent += frame.payload.len() as u64;
                    if attempts > 0 {
                        retransmissions += 1;
                    }
                    attempts += 1;
                    let deadline = Instant::now() + opts.retry_timeout;
                    while Instant::now() < deadline {
                        let left = deadline.saturating_duration_since(Instant::now());
                        match link.recv_frame(left)? {
                            Some(ack)
                                if ack.msg_type == MsgType::Ack
                                    && ack.tensor_id == tensor_id
                                    && ack.seq == frame.seq =>
                            {
                                acked = true;
                                break;
                            }
                            Some(_) => {} // stale ack or stray frame
                            None => break,
                        }
                    }
                }
            }
        }
    }

    let simulated_ms = match (before_sim, link.simulated_elapsed_ms()) {
        (Some(before), Some(after)) => Some(after - before),
        _ => None,
    };
    Ok(TransferResult {
        bytes_sent,
        frames_sent,
        wall_time: started.elapsed(),
        retransmissions,
        simulated_ms,
    })
}

#[derive(Debug, Clone, Copy)]
pub struct RecvOptions {
    /// Give up on an in-progress transfer after this long without frames.
    pub idle_timeout: Duration,
    /// Give up entirely if no transfer starts within this long.
    pub start_timeout: Duration,
    /// Acknowledge every received data frame (stop-and-wait peers).
    pub send_acks: bool,
    /// Only accept transfers of this message type.
    pub expect: Option<MsgType>,
}

impl Default for RecvOptions {
    fn default() -> Self {
        Self {
            idle_timeout: Duration::from_millis(400),
            start_timeout: Duration::from_secs(10),
            send_acks: false,
            expect: None,
        }
    }
}

/// What a receive attempt produced: the whole message, or the gap report for
/// a transfer that stopped short.
#[derive(Debug, Clone, PartialEq)]
pub enum RecvOutcome {
    Complete {
        msg_type: MsgType,
        tensor_id: u32,
        bytes: Vec<u8>,
        frames_received: u64,
        duplicates: u64,
    },
    Incomplete {
        tensor_id: u32,
        missing: Vec<u16>,
        frames_received: u64,
    },
}

/// Collect one message from the link, reassembling out-of-order and
/// duplicated frames.
pub fn recv_message(
    link: &mut impl FrameLink,
    opts: RecvOptions,
) -> Result<RecvOutcome, TransportError> {
    let started = Instant::now();
    let mut reassembler: Option<Reassembler> = None;
    let mut pushes = 0u64;

    loop {
        let timeout = if reassembler.is_some() {
            opts.idle_timeout
        } else {
            let left = opts.start_timeout.saturating_sub(started.elapsed());
            if left.is_zero() {
                return Err(TransportError::Timeout { waiting_for: "first frame".into() });
            }
            left.min(Duration::from_millis(500))
        };

        let frame = match link.recv_frame(timeout)? {
            Some(frame) => frame,
            None => match &reassembler {
                Some(state) => {
                    return Ok(RecvOutcome::Incomplete {
                        tensor_id: state.tensor_id(),
                        missing: state.missing(),
                        frames_received: state.frames_received() as u64,
                    })
                }
                None => {
                    if started.elapsed() >= opts.start_timeout {
                        return Err(TransportError::Timeout { waiting_for: "first frame".into() });
                    }
                    continue;
                }
            },
        };

        if frame.msg_type == MsgType::Ack {
            continue; // not ours to consume
        }
        if let Some(expect) = opts.expect {
            if frame.msg_type != expect {
                log::debug!("skipping {:?} frame while expecting {:?}", frame.msg_type, expect);
                continue;
            }
        }

        let state = match &mut reassembler {
            Some(state) => state,
            None => reassembler.insert(Reassembler::for_frame(&frame)),
        };
        // frames from another transfer are ignored rather than corrupting
        // this one
        if frame.tensor_id != state.tensor_id() || frame.total != state.total() {
            log::debug!("skipping frame from a different transfer");
            continue;
        }
        let done = state.push(&frame)?;
        pushes += 1;
        if opts.send_acks {
            link.send_frame(&Frame::ack(frame.tensor_id, frame.seq, frame.total))?;
        }
        if done {
            let tensor_id = state.tensor_id();
            let msg_type = state.msg_type();
            let frames_received = state.frames_received() as u64;
            let state = reassembler.take().expect("reassembler present");
            let bytes = match state.finish() {
                splitwire_core::frame::Reassembled::Complete(bytes) => bytes,
                splitwire_core::frame::Reassembled::Incomplete { .. } => unreachable!("done"),
            };
            return Ok(RecvOutcome::Complete {
                msg_type,
                tensor_id,
                bytes,
                frames_received,
                duplicates: pushes - frames_received,
            });
        }
    }
}
