//! In-process message bus and transcript capture.

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::io::Write;

use serde::Serialize;

use super::wire::{deserialize, serialize, MessageKind, WireMessage};
use crate::error::{ProtocolError, Result};

/// One transcript line per message.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TranscriptRecord {
    pub seq: u64,
    pub session: String,
    pub kind: MessageKind,
    pub sender: String,
    pub recipient: String,
    pub bytes: usize,
    pub values: usize,
    pub internal: bool,
}

#[derive(Clone, Debug, Default)]
pub struct Transcript {
    records: Vec<TranscriptRecord>,
    raw: Option<Vec<Vec<u8>>>,
}

impl Transcript {
    /// Also keeps every encoded frame, for byte-level scans.
    pub fn keep_frames(&mut self) {
        self.raw.get_or_insert_with(Vec::new);
    }

    pub fn record(&mut self, msg: &WireMessage, frame: &[u8]) {
        self.records.push(TranscriptRecord {
            seq: self.records.len() as u64,
            session: msg.session.clone(),
            kind: msg.kind,
            sender: msg.sender.clone(),
            recipient: msg.recipient.clone(),
            bytes: frame.len(),
            values: msg.values,
            internal: msg.is_internal(),
        });
        if let Some(raw) = &mut self.raw {
            raw.push(frame.to_vec());
        }
    }

    pub fn records(&self) -> &[TranscriptRecord] {
        &self.records
    }

    pub fn frames(&self) -> &[Vec<u8>] {
        self.raw.as_deref().unwrap_or(&[])
    }

    /// Messages of a session that crossed between distinct parties.
    pub fn messages_for(&self, session: &str) -> usize {
        self.records
            .iter()
            .filter(|r| r.session == session && !r.internal)
            .count()
    }

    /// Values carried by a session's messages, internal ones included.
    pub fn values_for(&self, session: &str) -> usize {
        self.records
            .iter()
            .filter(|r| r.session == session)
            .map(|r| r.values)
            .sum()
    }

    pub fn bytes_for(&self, session: &str) -> usize {
        self.records
            .iter()
            .filter(|r| r.session == session)
            .map(|r| r.bytes)
            .sum()
    }

    pub fn clear(&mut self) {
        self.records.clear();
        if let Some(raw) = &mut self.raw {
            raw.clear();
        }
    }

    /// Tab-separated dump: seq, session, kind, sender, recipient, bytes, values, internal.
    pub fn dump<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "seq\tsession\tkind\tsender\trecipient\tbytes\tvalues\tinternal")?;
        for r in &self.records {
            writeln!(
                out,
                "{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}",
                r.seq,
                r.session,
                r.kind.name(),
                r.sender,
                r.recipient,
                r.bytes,
                r.values,
                r.internal
            )?;
        }
        Ok(())
    }
}

/// Point-to-point delivery between registered parties.
pub trait Transport {
    fn register(&mut self, party: &str) -> Result<()>;
    fn send(&mut self, msg: &WireMessage) -> Result<()>;
    /// Next message from `from` to `to`, in send order.
    fn recv(&mut self, from: &str, to: &str) -> Result<WireMessage>;
    fn transcript(&self) -> &Transcript;
    fn transcript_mut(&mut self) -> &mut Transcript;
}

/// Single-threaded simulated network with one FIFO per ordered party pair.
#[derive(Debug, Default)]
pub struct Bus {
    parties: BTreeSet<String>,
    queues: BTreeMap<(String, String), VecDeque<Vec<u8>>>,
    transcript: Transcript,
}

impl Bus {
    pub fn new() -> Self {
        Bus::default()
    }

    pub fn with_parties<S: AsRef<str>>(parties: &[S]) -> Self {
        let mut bus = Bus::new();
        for p in parties {
            bus.parties.insert(p.as_ref().to_string());
        }
        bus
    }

    pub fn pending(&self) -> usize {
        self.queues.values().map(VecDeque::len).sum()
    }
}

impl Transport for Bus {
    fn register(&mut self, party: &str) -> Result<()> {
        self.parties.insert(party.to_string());
        Ok(())
    }

    fn send(&mut self, msg: &WireMessage) -> Result<()> {
        for p in [&msg.sender, &msg.recipient] {
            if !self.parties.contains(p) {
                return Err(ProtocolError::Routing(p.clone()));
            }
        }
        let frame = serialize(msg)?;
        self.transcript.record(msg, &frame);
        self.queues
            .entry((msg.sender.clone(), msg.recipient.clone()))
            .or_default()
            .push_back(frame);
        Ok(())
    }

    fn recv(&mut self, from: &str, to: &str) -> Result<WireMessage> {
        let frame = self
            .queues
            .get_mut(&(from.to_string(), to.to_string()))
            .and_then(VecDeque::pop_front)
            .ok_or_else(|| ProtocolError::Unexpected(format!("no message from `{from}` to `{to}`")))?;
        deserialize(&frame)
    }

    fn transcript(&self) -> &Transcript {
        &self.transcript
    }

    fn transcript_mut(&mut self) -> &mut Transcript {
        &mut self.transcript
    }
}
