//! Loopback TCP transport using the same length-prefixed frames as the bus.

use std::collections::{BTreeMap, VecDeque};
use std::io::{Read, Write};
use std::net::{SocketAddr, TcpListener, TcpStream};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::mpsc::{channel, Receiver, Sender};
use std::sync::Arc;
use std::thread::JoinHandle;
use std::time::Duration;

use super::bus::{Transcript, Transport};
use super::wire::{deserialize, serialize, WireMessage, MAX_MESSAGE_BYTES};
use crate::error::{ProtocolError, Result};

const RECV_TIMEOUT: Duration = Duration::from_secs(30);

struct Endpoint {
    addr: SocketAddr,
    inbox: Receiver<Vec<u8>>,
    acceptor: Option<JoinHandle<()>>,
}

/// One listening socket per registered party; one outgoing connection per
/// ordered party pair, so per-pair FIFO order is preserved by TCP.
pub struct TcpTransport {
    endpoints: BTreeMap<String, Endpoint>,
    streams: BTreeMap<(String, String), TcpStream>,
    pending: BTreeMap<(String, String), VecDeque<WireMessage>>,
    transcript: Transcript,
    stop: Arc<AtomicBool>,
}

impl TcpTransport {
    pub fn new() -> Self {
        TcpTransport {
            endpoints: BTreeMap::new(),
            streams: BTreeMap::new(),
            pending: BTreeMap::new(),
            transcript: Transcript::default(),
            stop: Arc::new(AtomicBool::new(false)),
        }
    }

    pub fn with_parties<S: AsRef<str>>(parties: &[S]) -> Result<Self> {
        let mut t = TcpTransport::new();
        for p in parties {
            t.register(p.as_ref())?;
        }
        Ok(t)
    }
}

impl Default for TcpTransport {
    fn default() -> Self {
        TcpTransport::new()
    }
}

fn io_err(e: std::io::Error) -> ProtocolError {
    ProtocolError::Transport(e.to_string())
}

fn read_frames(mut stream: TcpStream, tx: Sender<Vec<u8>>) {
    loop {
        let mut len = [0u8; 8];
        if stream.read_exact(&mut len).is_err() {
            return;
        }
        let n = u64::from_le_bytes(len) as usize;
        if n > MAX_MESSAGE_BYTES {
            log::warn!("dropping connection announcing a {n}-byte frame");
            return;
        }
        let mut frame = vec![0u8; n + 8];
        frame[..8].copy_from_slice(&len);
        if stream.read_exact(&mut frame[8..]).is_err() || tx.send(frame).is_err() {
            return;
        }
    }
}

impl Transport for TcpTransport {
    fn register(&mut self, party: &str) -> Result<()> {
        if self.endpoints.contains_key(party) {
            return Ok(());
        }
        let listener = TcpListener::bind("127.0.0.1:0").map_err(io_err)?;
        let addr = listener.local_addr().map_err(io_err)?;
        let (tx, rx) = channel();
        let stop = Arc::clone(&self.stop);
        let acceptor = std::thread::spawn(move || {
            for conn in listener.incoming() {
                if stop.load(Ordering::SeqCst) {
                    return;
                }
                if let Ok(stream) = conn {
                    let tx = tx.clone();
                    std::thread::spawn(move || read_frames(stream, tx));
                }
            }
        });
        self.endpoints.insert(
            party.to_string(),
            Endpoint {
                addr,
                inbox: rx,
                acceptor: Some(acceptor),
            },
        );
        Ok(())
    }

    fn send(&mut self, msg: &WireMessage) -> Result<()> {
        if !self.endpoints.contains_key(&msg.sender) {
            return Err(ProtocolError::Routing(msg.sender.clone()));
        }
        let addr = self
            .endpoints
            .get(&msg.recipient)
            .ok_or_else(|| ProtocolError::Routing(msg.recipient.clone()))?
            .addr;
        let frame = serialize(msg)?;
        let key = (msg.sender.clone(), msg.recipient.clone());
        if !self.streams.contains_key(&key) {
            let s = TcpStream::connect(addr).map_err(io_err)?;
            s.set_nodelay(true).map_err(io_err)?;
            self.streams.insert(key.clone(), s);
        }
        self.streams
            .get_mut(&key)
            .expect("just inserted")
            .write_all(&frame)
            .map_err(io_err)?;
        self.transcript.record(msg, &frame);
        Ok(())
    }

    fn recv(&mut self, from: &str, to: &str) -> Result<WireMessage> {
        let key = (from.to_string(), to.to_string());
        if let Some(m) = self.pending.get_mut(&key).and_then(VecDeque::pop_front) {
            return Ok(m);
        }
        let inbox = &self
            .endpoints
            .get(to)
            .ok_or_else(|| ProtocolError::Routing(to.to_string()))?
            .inbox;
        loop {
            let frame = inbox
                .recv_timeout(RECV_TIMEOUT)
                .map_err(|e| ProtocolError::Transport(format!("waiting for `{from}` at `{to}`: {e}")))?;
            let msg = deserialize(&frame)?;
            if msg.sender == from {
                return Ok(msg);
            }
            self.pending
                .entry((msg.sender.clone(), to.to_string()))
                .or_default()
                .push_back(msg);
        }
    }

    fn transcript(&self) -> &Transcript {
        &self.transcript
    }

    fn transcript_mut(&mut self) -> &mut Transcript {
        &mut self.transcript
    }
}

impl Drop for TcpTransport {
    fn drop(&mut self) {
        self.stop.store(true, Ordering::SeqCst);
        self.streams.clear();
        for ep in self.endpoints.values_mut() {
            // Wake the acceptor so it sees the stop flag.
            let _ = TcpStream::connect(ep.addr);
            if let Some(h) = ep.acceptor.take() {
                let _ = h.join();
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::netsim::wire::NormValues;

    #[test]
    fn frames_cross_sockets_in_order() {
        let mut t = TcpTransport::with_parties(&["a", "b"]).unwrap();
        for v in [1.0, 2.0] {
            let m = WireMessage::new("s", "a", "b", &NormValues { overlap: "o".into(), values: vec![v] }).unwrap();
            t.send(&m).unwrap();
        }
        let m = WireMessage::new("s", "b", "a", &NormValues { overlap: "o".into(), values: vec![9.0] }).unwrap();
        t.send(&m).unwrap();
        assert_eq!(t.recv("a", "b").unwrap().decode::<NormValues>().unwrap().values, vec![1.0]);
        assert_eq!(t.recv("b", "a").unwrap().decode::<NormValues>().unwrap().values, vec![9.0]);
        assert_eq!(t.recv("a", "b").unwrap().decode::<NormValues>().unwrap().values, vec![2.0]);
        assert_eq!(t.transcript().messages_for("s"), 3);
    }
}
