//! Wire messages, framing, and the channels that carry them.
//!
//! A frame is a 4-byte big-endian length followed by one message encoded as
//! canonical JSON (sorted keys, no whitespace). Decoding re-encodes the
//! parsed message and rejects the frame unless the bytes match exactly, so
//! every message has a single valid encoding.

use std::io::{self, Read, Write};
use std::net::{SocketAddr, TcpListener, TcpStream, ToSocketAddrs};
use std::sync::mpsc::{self, Receiver, RecvTimeoutError, Sender};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bits::BitString;
use crate::tdp::PublicKey;

pub const MAX_FRAME_BODY: usize = 1 << 20;
pub const DEFAULT_TIMEOUT: Duration = Duration::from_secs(30);
const HEADER_LEN: usize = 4;

/// One protocol message. Bits travel as the integers 0 and 1 so that a
/// peer sending anything else is detected by the receiving state machine.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", deny_unknown_fields)]
pub enum ProtocolMessage {
    Key { k: PublicKey },
    HashQuery { j: u32, h: BitString },
    HashAnswer { j: u32, c: u8 },
    Challenge1 { v1: u8, r: BitString },
    PreimageResponse { x: BitString },
    EquationResponse { d: BitString },
    Challenge2 { v2: u8 },
    BasisResponse { eta: u8 },
    Verdict { accept: bool },
}

impl ProtocolMessage {
    pub fn tag(&self) -> &'static str {
        match self {
            ProtocolMessage::Key { .. } => "Key",
            ProtocolMessage::HashQuery { .. } => "HashQuery",
            ProtocolMessage::HashAnswer { .. } => "HashAnswer",
            ProtocolMessage::Challenge1 { .. } => "Challenge1",
            ProtocolMessage::PreimageResponse { .. } => "PreimageResponse",
            ProtocolMessage::EquationResponse { .. } => "EquationResponse",
            ProtocolMessage::Challenge2 { .. } => "Challenge2",
            ProtocolMessage::BasisResponse { .. } => "BasisResponse",
            ProtocolMessage::Verdict { .. } => "Verdict",
        }
    }

    /// Canonical JSON body (no length prefix).
    pub fn to_canonical_json(&self) -> String {
        serde_json::to_value(self)
            .expect("protocol messages always serialize")
            .to_string()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum FrameError {
    #[error("frame body of {len} bytes exceeds the {MAX_FRAME_BODY} byte limit")]
    Oversize { len: usize },
    #[error("truncated frame: need {needed} bytes, have {available}")]
    Truncated { needed: usize, available: usize },
    #[error("{extra} trailing bytes after frame")]
    TrailingBytes { extra: usize },
    #[error("invalid message at line {line}, column {column}: {message}")]
    Json {
        line: usize,
        column: usize,
        message: String,
    },
    #[error("non-canonical encoding, first difference at byte {offset}")]
    NonCanonical { offset: usize },
}

pub fn encode(msg: &ProtocolMessage) -> Result<Vec<u8>, FrameError> {
    let body = msg.to_canonical_json().into_bytes();
    if body.len() > MAX_FRAME_BODY {
        return Err(FrameError::Oversize { len: body.len() });
    }
    let mut out = Vec::with_capacity(HEADER_LEN + body.len());
    out.extend_from_slice(&(body.len() as u32).to_be_bytes());
    out.extend_from_slice(&body);
    Ok(out)
}

/// Decodes exactly one complete frame.
pub fn decode(bytes: &[u8]) -> Result<ProtocolMessage, FrameError> {
    if bytes.len() < HEADER_LEN {
        return Err(FrameError::Truncated {
            needed: HEADER_LEN,
            available: bytes.len(),
        });
    }
    let len = u32::from_be_bytes(bytes[..HEADER_LEN].try_into().unwrap()) as usize;
    if len > MAX_FRAME_BODY {
        return Err(FrameError::Oversize { len });
    }
    let body = &bytes[HEADER_LEN..];
    if body.len() < len {
        return Err(FrameError::Truncated {
            needed: HEADER_LEN + len,
            available: bytes.len(),
        });
    }
    if body.len() > len {
        return Err(FrameError::TrailingBytes {
            extra: body.len() - len,
        });
    }
    decode_body(body)
}

pub fn decode_body(body: &[u8]) -> Result<ProtocolMessage, FrameError> {
    let msg: ProtocolMessage = serde_json::from_slice(body).map_err(|e| FrameError::Json {
        line: e.line(),
        column: e.column(),
        message: e.to_string(),
    })?;
    let canonical = msg.to_canonical_json();
    let canonical = canonical.as_bytes();
    if canonical != body {
        let offset = canonical
            .iter()
            .zip(body)
            .position(|(a, b)| a != b)
            .unwrap_or_else(|| canonical.len().min(body.len()));
        return Err(FrameError::NonCanonical { offset });
    }
    Ok(msg)
}

pub fn write_frame<W: Write>(w: &mut W, msg: &ProtocolMessage) -> Result<(), ChannelError> {
    let bytes = encode(msg)?;
    w.write_all(&bytes)?;
    w.flush()?;
    Ok(())
}

pub fn read_frame<R: Read>(r: &mut R) -> Result<ProtocolMessage, ChannelError> {
    let mut header = [0u8; HEADER_LEN];
    r.read_exact(&mut header)?;
    let len = u32::from_be_bytes(header) as usize;
    if len > MAX_FRAME_BODY {
        return Err(FrameError::Oversize { len }.into());
    }
    let mut body = vec![0u8; len];
    r.read_exact(&mut body)?;
    Ok(decode_body(&body)?)
}

#[derive(Debug, Error)]
pub enum ChannelError {
    #[error("timed out waiting for peer")]
    Timeout,
    #[error("peer closed the channel")]
    Closed,
    #[error(transparent)]
    Frame(#[from] FrameError),
    #[error("i/o error: {0}")]
    Io(io::Error),
    #[error("peer failed: {0}")]
    Peer(Box<SessionError>),
}

/// Anything that voids a session. Voided sessions are excluded from
/// acceptance statistics rather than counted as rejections.
#[derive(Debug, Error)]
pub enum SessionError {
    #[error(transparent)]
    Channel(#[from] ChannelError),
    #[error("expected {expected}, received {found}")]
    Unexpected {
        expected: &'static str,
        found: &'static str,
    },
    #[error("field {field} must be 0 or 1, got {value}")]
    NotABit { field: &'static str, value: u8 },
    #[error("round index {found} out of order, expected {expected}")]
    RoundMismatch { expected: u32, found: u32 },
    #[error("malformed message: {0}")]
    Malformed(String),
    #[error("configuration error: {0}")]
    Config(String),
}

impl SessionError {
    pub fn unexpected(expected: &'static str, found: &ProtocolMessage) -> Self {
        SessionError::Unexpected {
            expected,
            found: found.tag(),
        }
    }
}

/// Checks a wire bit.
pub fn wire_bit(field: &'static str, value: u8) -> Result<bool, SessionError> {
    match value {
        0 => Ok(false),
        1 => Ok(true),
        value => Err(SessionError::NotABit { field, value }),
    }
}

impl From<io::Error> for ChannelError {
    fn from(e: io::Error) -> Self {
        match e.kind() {
            io::ErrorKind::WouldBlock | io::ErrorKind::TimedOut => ChannelError::Timeout,
            io::ErrorKind::UnexpectedEof
            | io::ErrorKind::ConnectionReset
            | io::ErrorKind::ConnectionAborted
            | io::ErrorKind::BrokenPipe => ChannelError::Closed,
            _ => ChannelError::Io(e),
        }
    }
}

/// Blocking, ordered, one-message-at-a-time transport for a single session.
pub trait Channel {
    fn send(&mut self, msg: &ProtocolMessage) -> Result<(), ChannelError>;
    fn recv(&mut self) -> Result<ProtocolMessage, ChannelError>;
}

impl<C: Channel + ?Sized> Channel for &mut C {
    fn send(&mut self, msg: &ProtocolMessage) -> Result<(), ChannelError> {
        (**self).send(msg)
    }

    fn recv(&mut self) -> Result<ProtocolMessage, ChannelError> {
        (**self).recv()
    }
}

/// One endpoint of an in-process channel. Messages cross as encoded frames.
#[derive(Debug)]
pub struct InProcessChannel {
    tx: Sender<Vec<u8>>,
    rx: Receiver<Vec<u8>>,
    timeout: Duration,
}

pub fn in_process() -> (InProcessChannel, InProcessChannel) {
    in_process_with_timeout(DEFAULT_TIMEOUT)
}

pub fn in_process_with_timeout(timeout: Duration) -> (InProcessChannel, InProcessChannel) {
    let (atx, brx) = mpsc::channel();
    let (btx, arx) = mpsc::channel();
    (
        InProcessChannel {
            tx: atx,
            rx: arx,
            timeout,
        },
        InProcessChannel {
            tx: btx,
            rx: brx,
            timeout,
        },
    )
}

impl Channel for InProcessChannel {
    fn send(&mut self, msg: &ProtocolMessage) -> Result<(), ChannelError> {
        let bytes = encode(msg)?;
        self.tx.send(bytes).map_err(|_| ChannelError::Closed)
    }

    fn recv(&mut self) -> Result<ProtocolMessage, ChannelError> {
        match self.rx.recv_timeout(self.timeout) {
            Ok(bytes) => Ok(decode(&bytes)?),
            Err(RecvTimeoutError::Timeout) => Err(ChannelError::Timeout),
            Err(RecvTimeoutError::Disconnected) => Err(ChannelError::Closed),
        }
    }
}

/// A TCP connection carrying one session.
#[derive(Debug)]
pub struct SocketChannel {
    stream: TcpStream,
}

impl SocketChannel {
    pub fn from_stream(stream: TcpStream, timeout: Duration) -> io::Result<Self> {
        stream.set_read_timeout(Some(timeout))?;
        stream.set_write_timeout(Some(timeout))?;
        stream.set_nodelay(true)?;
        Ok(SocketChannel { stream })
    }

    pub fn peer_addr(&self) -> io::Result<SocketAddr> {
        self.stream.peer_addr()
    }
}

pub fn socket_connect<A: ToSocketAddrs>(addr: A, timeout: Duration) -> Result<SocketChannel, ChannelError> {
    let mut last = None;
    for a in addr.to_socket_addrs()? {
        match TcpStream::connect_timeout(&a, timeout) {
            Ok(stream) => return Ok(SocketChannel::from_stream(stream, timeout)?),
            Err(e) => last = Some(e),
        }
    }
    Err(last
        .map(ChannelError::Io)
        .unwrap_or_else(|| ChannelError::Io(io::Error::new(io::ErrorKind::NotFound, "no address"))))
}

/// Accepts one session per incoming connection.
#[derive(Debug)]
pub struct SocketListener {
    listener: TcpListener,
    timeout: Duration,
}

pub fn socket_listen<A: ToSocketAddrs>(addr: A, timeout: Duration) -> Result<SocketListener, ChannelError> {
    Ok(SocketListener {
        listener: TcpListener::bind(addr)?,
        timeout,
    })
}

impl SocketListener {
    pub fn local_addr(&self) -> io::Result<SocketAddr> {
        self.listener.local_addr()
    }

    pub fn accept(&self) -> Result<SocketChannel, ChannelError> {
        let (stream, _) = self.listener.accept()?;
        Ok(SocketChannel::from_stream(stream, self.timeout)?)
    }
}

impl Channel for SocketChannel {
    fn send(&mut self, msg: &ProtocolMessage) -> Result<(), ChannelError> {
        write_frame(&mut self.stream, msg)
    }

    fn recv(&mut self) -> Result<ProtocolMessage, ChannelError> {
        read_frame(&mut self.stream)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Direction {
    Sent,
    Received,
}

/// Wraps a channel and logs every message that passes through it.
#[derive(Debug)]
pub struct Recording<C> {
    inner: C,
    log: Vec<(Direction, ProtocolMessage)>,
}

impl<C: Channel> Recording<C> {
    pub fn new(inner: C) -> Self {
        Recording {
            inner,
            log: Vec::new(),
        }
    }

    pub fn log(&self) -> &[(Direction, ProtocolMessage)] {
        &self.log
    }

    pub fn into_parts(self) -> (C, Vec<(Direction, ProtocolMessage)>) {
        (self.inner, self.log)
    }
}

impl<C: Channel> Channel for Recording<C> {
    fn send(&mut self, msg: &ProtocolMessage) -> Result<(), ChannelError> {
        self.inner.send(msg)?;
        self.log.push((Direction::Sent, msg.clone()));
        Ok(())
    }

    fn recv(&mut self) -> Result<ProtocolMessage, ChannelError> {
        let msg = self.inner.recv()?;
        self.log.push((Direction::Received, msg.clone()));
        Ok(msg)
    }
}

/// A party that reacts to each incoming message with at most one reply.
pub trait Responder {
    fn respond(&mut self, msg: &ProtocolMessage) -> Result<Option<ProtocolMessage>, SessionError>;

    /// True once the session is over from this party's point of view.
    fn finished(&self) -> bool;
}

/// Drives `responder` over `channel` until it reports completion.
pub fn serve<R: Responder + ?Sized, C: Channel>(responder: &mut R, mut channel: C) -> Result<(), SessionError> {
    while !responder.finished() {
        let msg = channel.recv()?;
        if let Some(reply) = responder.respond(&msg)? {
            channel.send(&reply)?;
        }
    }
    Ok(())
}

/// A channel whose far end is a [`Responder`] called synchronously, with no
/// threads or serialization in between.
#[derive(Debug)]
pub struct LocalChannel<R> {
    peer: R,
    pending: Option<ProtocolMessage>,
}

impl<R: Responder> LocalChannel<R> {
    pub fn new(peer: R) -> Self {
        LocalChannel {
            peer,
            pending: None,
        }
    }

    pub fn peer(&self) -> &R {
        &self.peer
    }

    pub fn into_peer(self) -> R {
        self.peer
    }
}

impl<R: Responder> Channel for LocalChannel<R> {
    fn send(&mut self, msg: &ProtocolMessage) -> Result<(), ChannelError> {
        if self.pending.is_some() {
            return Err(ChannelError::Peer(Box::new(SessionError::Malformed(
                "reply not consumed before next send".into(),
            ))));
        }
        self.pending = self
            .peer
            .respond(msg)
            .map_err(|e| ChannelError::Peer(Box::new(e)))?;
        Ok(())
    }

    fn recv(&mut self) -> Result<ProtocolMessage, ChannelError> {
        self.pending.take().ok_or(ChannelError::Closed)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn bs(s: &str) -> BitString {
        s.parse().unwrap()
    }

    #[test]
    fn golden_hash_answer_frame() {
        let bytes = encode(&ProtocolMessage::HashAnswer { j: 1, c: 1 }).unwrap();
        let body = br#"{"c":1,"j":1,"type":"HashAnswer"}"#;
        let mut expected = vec![0, 0, 0, body.len() as u8];
        expected.extend_from_slice(body);
        assert_eq!(bytes, expected);
    }

    #[test]
    fn roundtrip_examples() {
        let msgs = [
            ProtocolMessage::HashQuery { j: 2, h: bs("0101") },
            ProtocolMessage::Challenge1 { v1: 1, r: bs("1100") },
            ProtocolMessage::Verdict { accept: false },
        ];
        for m in msgs {
            assert_eq!(decode(&encode(&m).unwrap()).unwrap(), m);
        }
    }

    #[test]
    fn truncated_and_trailing() {
        let bytes = encode(&ProtocolMessage::Challenge2 { v2: 0 }).unwrap();
        assert!(matches!(
            decode(&bytes[..bytes.len() - 1]),
            Err(FrameError::Truncated { .. })
        ));
        assert!(matches!(decode(&bytes[..2]), Err(FrameError::Truncated { .. })));
        let mut extra = bytes.clone();
        extra.push(b' ');
        assert_eq!(decode(&extra), Err(FrameError::TrailingBytes { extra: 1 }));
    }

    #[test]
    fn oversize_rejected_from_header() {
        let mut bytes = ((MAX_FRAME_BODY + 1) as u32).to_be_bytes().to_vec();
        bytes.extend_from_slice(b"{}");
        assert!(matches!(decode(&bytes), Err(FrameError::Oversize { .. })));
    }

    fn frame(body: &[u8]) -> Vec<u8> {
        let mut v = (body.len() as u32).to_be_bytes().to_vec();
        v.extend_from_slice(body);
        v
    }

    #[test]
    fn rejects_unknown_tag_and_non_canonical() {
        assert!(matches!(
            decode(&frame(br#"{"type":"Bogus"}"#)),
            Err(FrameError::Json { .. })
        ));
        // whitespace
        assert!(matches!(
            decode(&frame(br#"{"type":"Challenge2", "v2":0}"#)),
            Err(FrameError::NonCanonical { .. }) | Err(FrameError::Json { .. })
        ));
        // unsorted keys
        assert!(matches!(
            decode(&frame(br#"{"v2":0,"type":"Challenge2"}"#)),
            Err(FrameError::NonCanonical { offset: 2 })
        ));
        assert!(decode(&frame(br#"{"type":"Challenge2","v2":0}"#)).is_ok());
        // duplicate key
        assert!(decode(&frame(br#"{"type":"Challenge2","v2":0,"v2":1}"#)).is_err());
        assert!(decode(&frame(br#"{"type":"Challenge2","v2":0,"x":1}"#)).is_err());
    }

    #[test]
    fn in_process_pair() {
        let (mut a, mut b) = in_process();
        a.send(&ProtocolMessage::Challenge2 { v2: 1 }).unwrap();
        assert_eq!(b.recv().unwrap(), ProtocolMessage::Challenge2 { v2: 1 });
        drop(a);
        assert!(matches!(b.recv(), Err(ChannelError::Closed)));
    }

    #[test]
    fn in_process_timeout() {
        let (_a, mut b) = in_process_with_timeout(Duration::from_millis(10));
        assert!(matches!(b.recv(), Err(ChannelError::Timeout)));
    }

    #[test]
    fn socket_pair() {
        let listener = socket_listen("127.0.0.1:0", Duration::from_secs(5)).unwrap();
        let addr = listener.local_addr().unwrap();
        let h = std::thread::spawn(move || {
            let mut c = listener.accept().unwrap();
            let m = c.recv().unwrap();
            c.send(&m).unwrap();
        });
        let mut c = socket_connect(addr, Duration::from_secs(5)).unwrap();
        let m = ProtocolMessage::PreimageResponse { x: bs("1010") };
        c.send(&m).unwrap();
        assert_eq!(c.recv().unwrap(), m);
        h.join().unwrap();
        assert!(matches!(c.recv(), Err(ChannelError::Closed)));
    }
}
