//! Master/slave mailboxes with two interchangeable backends.
//!
//! The topology is a star. [`star`] hands out one [`MasterEndpoint`] and one
//! [`SlaveEndpoint`] per worker; a slave endpoint can only talk to the
//! master, so there is no way to build a slave-to-slave channel:
//!
//! ```compile_fail
//! use parterm_core::transport::{star, Backend, Message};
//! use parterm_core::merge::WorkerId;
//! let (_master, slaves) = star(2, Backend::SharedBuffer, 4);
//! // slaves have no addressed send
//! slaves[0].send(WorkerId(1), Message::shutdown()).unwrap();
//! ```
//!
//! [`Backend::MessagePassing`] serializes every payload to bytes on send and
//! decodes it on receive, counting the bytes. [`Backend::SharedBuffer`] moves
//! the term buffer itself and only counts the handle transfer.

use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::mpsc::{sync_channel, Receiver, RecvError, SyncSender, TryRecvError};
use std::sync::Arc;

use thiserror::Error;

use crate::merge::WorkerId;
use crate::term::{is_normalized, Term};
use crate::wire::{deserialize_terms, serialize_terms, WireError};

pub const DEFAULT_MAILBOX_CAPACITY: usize = 16;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Backend {
    MessagePassing,
    SharedBuffer,
}

impl Backend {
    pub fn short_name(self) -> &'static str {
        match self {
            Backend::MessagePassing => "mp",
            Backend::SharedBuffer => "sm",
        }
    }

    pub fn from_short_name(s: &str) -> Option<Backend> {
        match s {
            "mp" => Some(Backend::MessagePassing),
            "sm" => Some(Backend::SharedBuffer),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum MessageKind {
    /// Master to slave: start module `chunk_seq`.
    ModuleBegin,
    /// Master to slave: rewrite the payload terms.
    ChunkAssignment,
    /// Slave to master: chunk `chunk_seq` is folded into the local run.
    ChunkDone,
    /// Master to slave: return the accumulated run.
    ModuleEnd,
    /// Slave to master: the slave's sorted run for the module.
    RunReturn,
    Shutdown,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Message {
    pub kind: MessageKind,
    pub chunk_seq: u64,
    pub payload: Vec<Term>,
}

impl Message {
    pub fn control(kind: MessageKind, chunk_seq: u64) -> Self {
        Message {
            kind,
            chunk_seq,
            payload: Vec::new(),
        }
    }

    pub fn chunk(seq: u64, terms: Vec<Term>) -> Self {
        Message {
            kind: MessageKind::ChunkAssignment,
            chunk_seq: seq,
            payload: terms,
        }
    }

    pub fn run(terms: Vec<Term>) -> Self {
        Message {
            kind: MessageKind::RunReturn,
            chunk_seq: 0,
            payload: terms,
        }
    }

    pub fn shutdown() -> Self {
        Message::control(MessageKind::Shutdown, 0)
    }

    fn validate(&self) -> Result<(), TransportError> {
        match self.kind {
            MessageKind::ChunkAssignment if self.payload.is_empty() => {
                Err(TransportError::InvalidMessage("empty chunk assignment"))
            }
            MessageKind::RunReturn if !is_normalized(&self.payload) => Err(
                TransportError::InvalidMessage("run payload is not sorted and merged"),
            ),
            _ => Ok(()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Endpoint {
    Master,
    Slave(WorkerId),
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct TransportStats {
    pub messages_master_to_slave: u64,
    pub messages_slave_to_master: u64,
    /// Bytes marshaled by the message-passing backend.
    pub serialized_bytes: u64,
    /// Zero-copy buffer transfers by the shared-buffer backend.
    pub handle_transfers: u64,
}

impl TransportStats {
    pub fn messages(&self) -> u64 {
        self.messages_master_to_slave + self.messages_slave_to_master
    }

    pub fn since(&self, earlier: &TransportStats) -> TransportStats {
        TransportStats {
            messages_master_to_slave: self.messages_master_to_slave
                - earlier.messages_master_to_slave,
            messages_slave_to_master: self.messages_slave_to_master
                - earlier.messages_slave_to_master,
            serialized_bytes: self.serialized_bytes - earlier.serialized_bytes,
            handle_transfers: self.handle_transfers - earlier.handle_transfers,
        }
    }

    pub fn accumulate(&mut self, other: &TransportStats) {
        self.messages_master_to_slave += other.messages_master_to_slave;
        self.messages_slave_to_master += other.messages_slave_to_master;
        self.serialized_bytes += other.serialized_bytes;
        self.handle_transfers += other.handle_transfers;
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum TransportError {
    #[error("channel to {0:?} is closed")]
    ChannelClosed(Endpoint),
    #[error("no slave with id {0}")]
    UnknownSlave(u32),
    #[error(transparent)]
    Wire(#[from] WireError),
    #[error("invalid message: {0}")]
    InvalidMessage(&'static str),
    #[error("worker {worker} failed: {reason}")]
    PeerFailed { worker: u32, reason: String },
}

#[derive(Debug, Default)]
struct Counters {
    m2s: AtomicU64,
    s2m: AtomicU64,
    bytes: AtomicU64,
    handles: AtomicU64,
}

impl Counters {
    fn snapshot(&self) -> TransportStats {
        TransportStats {
            messages_master_to_slave: self.m2s.load(Ordering::Relaxed),
            messages_slave_to_master: self.s2m.load(Ordering::Relaxed),
            serialized_bytes: self.bytes.load(Ordering::Relaxed),
            handle_transfers: self.handles.load(Ordering::Relaxed),
        }
    }
}

enum Body {
    Bytes(Vec<u8>),
    Buffer(Vec<Term>),
}

struct Packet {
    kind: MessageKind,
    chunk_seq: u64,
    body: Body,
}

enum Inbound {
    Packet(WorkerId, Packet),
    Failed(WorkerId, String),
}

fn pack(backend: Backend, msg: Message, counters: &Counters) -> Packet {
    let body = match backend {
        Backend::MessagePassing => {
            let bytes = serialize_terms(&msg.payload);
            counters
                .bytes
                .fetch_add(bytes.len() as u64, Ordering::Relaxed);
            // the sender's copy is gone once the bytes are on the wire
            drop(msg.payload);
            Body::Bytes(bytes)
        }
        Backend::SharedBuffer => {
            counters.handles.fetch_add(1, Ordering::Relaxed);
            Body::Buffer(msg.payload)
        }
    };
    Packet {
        kind: msg.kind,
        chunk_seq: msg.chunk_seq,
        body,
    }
}

fn unpack(p: Packet) -> Result<Message, TransportError> {
    let payload = match p.body {
        Body::Bytes(b) => deserialize_terms(&b)?,
        Body::Buffer(ts) => ts,
    };
    Ok(Message {
        kind: p.kind,
        chunk_seq: p.chunk_seq,
        payload,
    })
}

/// Builds a star of `nslaves` slave endpoints around one master. Each slave
/// mailbox holds at most `capacity` pending messages; sends block when full.
pub fn star(
    nslaves: usize,
    backend: Backend,
    capacity: usize,
) -> (MasterEndpoint, Vec<SlaveEndpoint>) {
    let capacity = capacity.max(1);
    let counters = Arc::new(Counters::default());
    let (to_master, master_inbox) = sync_channel(capacity * nslaves.max(1));
    let mut to_slaves = Vec::with_capacity(nslaves);
    let mut slaves = Vec::with_capacity(nslaves);
    for i in 0..nslaves {
        let (tx, rx) = sync_channel(capacity);
        to_slaves.push(tx);
        slaves.push(SlaveEndpoint {
            id: WorkerId(i as u32),
            backend,
            inbox: rx,
            to_master: to_master.clone(),
            counters: Arc::clone(&counters),
            closed: false,
        });
    }
    let master = MasterEndpoint {
        backend,
        to_slaves,
        closed: vec![false; nslaves],
        inbox: master_inbox,
        counters,
    };
    (master, slaves)
}

pub struct MasterEndpoint {
    backend: Backend,
    to_slaves: Vec<SyncSender<Packet>>,
    closed: Vec<bool>,
    inbox: Receiver<Inbound>,
    counters: Arc<Counters>,
}

impl MasterEndpoint {
    pub fn backend(&self) -> Backend {
        self.backend
    }

    pub fn nslaves(&self) -> usize {
        self.to_slaves.len()
    }

    pub fn stats(&self) -> TransportStats {
        self.counters.snapshot()
    }

    /// Sends to one slave, blocking while its mailbox is full. Sending
    /// [`MessageKind::Shutdown`] closes the channel to that slave.
    pub fn send(&mut self, to: WorkerId, msg: Message) -> Result<(), TransportError> {
        let i = to.0 as usize;
        let tx = self
            .to_slaves
            .get(i)
            .ok_or(TransportError::UnknownSlave(to.0))?;
        if self.closed[i] {
            return Err(TransportError::ChannelClosed(Endpoint::Slave(to)));
        }
        msg.validate()?;
        let shutdown = msg.kind == MessageKind::Shutdown;
        let packet = pack(self.backend, msg, &self.counters);
        self.counters.m2s.fetch_add(1, Ordering::Relaxed);
        tx.send(packet)
            .map_err(|_| TransportError::ChannelClosed(Endpoint::Slave(to)))?;
        if shutdown {
            self.closed[i] = true;
        }
        Ok(())
    }

    /// Blocks until any slave has a pending message.
    pub fn recv_any(&self) -> Result<(WorkerId, Message), TransportError> {
        match self.inbox.recv() {
            Ok(inbound) => Self::open(inbound),
            Err(RecvError) => Err(TransportError::ChannelClosed(Endpoint::Master)),
        }
    }

    /// Non-blocking [`recv_any`](Self::recv_any).
    pub fn try_recv_any(&self) -> Result<Option<(WorkerId, Message)>, TransportError> {
        match self.inbox.try_recv() {
            Ok(inbound) => Self::open(inbound).map(Some),
            Err(TryRecvError::Empty) => Ok(None),
            Err(TryRecvError::Disconnected) => Err(TransportError::ChannelClosed(Endpoint::Master)),
        }
    }

    fn open(inbound: Inbound) -> Result<(WorkerId, Message), TransportError> {
        match inbound {
            Inbound::Packet(from, p) => Ok((from, unpack(p)?)),
            Inbound::Failed(from, reason) => Err(TransportError::PeerFailed {
                worker: from.0,
                reason,
            }),
        }
    }
}

pub struct SlaveEndpoint {
    id: WorkerId,
    backend: Backend,
    inbox: Receiver<Packet>,
    to_master: SyncSender<Inbound>,
    counters: Arc<Counters>,
    closed: bool,
}

impl SlaveEndpoint {
    pub fn id(&self) -> WorkerId {
        self.id
    }

    /// Blocks for the next message from the master. After a
    /// [`MessageKind::Shutdown`] has been received the endpoint is closed.
    pub fn recv(&mut self) -> Result<Message, TransportError> {
        let closed = TransportError::ChannelClosed(Endpoint::Slave(self.id));
        if self.closed {
            return Err(closed);
        }
        let packet = self.inbox.recv().map_err(|_| closed)?;
        if packet.kind == MessageKind::Shutdown {
            self.closed = true;
        }
        unpack(packet)
    }

    /// Sends to the master, blocking while the master's inbox is full.
    pub fn reply(&self, msg: Message) -> Result<(), TransportError> {
        if self.closed {
            return Err(TransportError::ChannelClosed(Endpoint::Master));
        }
        msg.validate()?;
        let packet = pack(self.backend, msg, &self.counters);
        self.counters.s2m.fetch_add(1, Ordering::Relaxed);
        self.to_master
            .send(Inbound::Packet(self.id, packet))
            .map_err(|_| TransportError::ChannelClosed(Endpoint::Master))
    }

    /// Tells the master this worker died. Not counted as traffic.
    pub(crate) fn report_failure(&self, reason: String) {
        let _ = self.to_master.send(Inbound::Failed(self.id, reason));
    }
}
