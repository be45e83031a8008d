//! Message transport: wire format, in-process bus and TCP.

pub mod bus;
pub mod tcp;
pub mod wire;

pub use bus::{Bus, Transcript, TranscriptRecord, Transport};
pub use tcp::TcpTransport;
pub use wire::{deserialize, serialize, MessageKind, Payload, WireMessage};
