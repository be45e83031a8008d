//! Wire schema and canonical encoding.
//!
//! A frame is an 8-byte little-endian length followed by a JSON object whose
//! keys are sorted at every level, so equal messages encode to equal bytes.
//! Message kinds form a closed, versioned set; anything else is refused.

use bnshare_core::{Factor, Variable};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{ProtocolError, Result};

pub const WIRE_VERSION: u32 = 1;
pub const MAX_MESSAGE_BYTES: usize = 1 << 30;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum MessageKind {
    PsiBlinded,
    PsiDoubleBlinded,
    OverlapAnnounce,
    StateUnion,
    NormColumns,
    NormValues,
    ShareCommit,
    Query,
    Reply,
}

impl MessageKind {
    pub fn name(self) -> &'static str {
        match self {
            MessageKind::PsiBlinded => "PsiBlinded",
            MessageKind::PsiDoubleBlinded => "PsiDoubleBlinded",
            MessageKind::OverlapAnnounce => "OverlapAnnounce",
            MessageKind::StateUnion => "StateUnion",
            MessageKind::NormColumns => "NormColumns",
            MessageKind::NormValues => "NormValues",
            MessageKind::ShareCommit => "ShareCommit",
            MessageKind::Query => "Query",
            MessageKind::Reply => "Reply",
        }
    }
}

/// A typed message body.
pub trait Payload: Serialize + DeserializeOwned {
    const KIND: MessageKind;

    /// Factor or table values carried, for communication accounting.
    fn value_count(&self) -> usize {
        0
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WireMessage {
    pub version: u32,
    pub kind: MessageKind,
    pub session: String,
    pub sender: String,
    pub recipient: String,
    pub payload: serde_json::Value,
    #[serde(skip)]
    pub values: usize,
}

impl WireMessage {
    pub fn new<P: Payload>(session: &str, sender: &str, recipient: &str, payload: &P) -> Result<Self> {
        Ok(WireMessage {
            version: WIRE_VERSION,
            kind: P::KIND,
            session: session.to_string(),
            sender: sender.to_string(),
            recipient: recipient.to_string(),
            payload: serde_json::to_value(payload).map_err(|e| ProtocolError::Wire(e.to_string()))?,
            values: payload.value_count(),
        })
    }

    pub fn is_internal(&self) -> bool {
        self.sender == self.recipient
    }

    /// Decodes the body, refusing a kind other than `P::KIND`.
    pub fn decode<P: Payload>(&self) -> Result<P> {
        if self.kind != P::KIND {
            return Err(ProtocolError::Unexpected(format!(
                "expected {}, got {}",
                P::KIND.name(),
                self.kind.name()
            )));
        }
        serde_json::from_value(self.payload.clone()).map_err(|e| ProtocolError::Wire(e.to_string()))
    }
}

pub fn serialize(msg: &WireMessage) -> Result<Vec<u8>> {
    let mut value = serde_json::to_value(msg).map_err(|e| ProtocolError::Wire(e.to_string()))?;
    value.sort_all_objects();
    let body = serde_json::to_vec(&value).map_err(|e| ProtocolError::Wire(e.to_string()))?;
    if body.len() > MAX_MESSAGE_BYTES {
        return Err(ProtocolError::Wire(format!("message of {} bytes exceeds 1 GiB", body.len())));
    }
    let mut out = Vec::with_capacity(body.len() + 8);
    out.extend_from_slice(&(body.len() as u64).to_le_bytes());
    out.extend_from_slice(&body);
    Ok(out)
}

pub fn deserialize(bytes: &[u8]) -> Result<WireMessage> {
    if bytes.len() < 8 {
        return Err(ProtocolError::Wire("truncated length prefix".into()));
    }
    let len = u64::from_le_bytes(bytes[..8].try_into().expect("eight bytes")) as usize;
    if len > MAX_MESSAGE_BYTES {
        return Err(ProtocolError::Wire(format!("declared length {len} exceeds 1 GiB")));
    }
    if bytes.len() - 8 != len {
        return Err(ProtocolError::Wire(format!("length prefix {len} but {} body bytes", bytes.len() - 8)));
    }
    let msg: WireMessage = serde_json::from_slice(&bytes[8..]).map_err(|e| ProtocolError::Wire(e.to_string()))?;
    if msg.version != WIRE_VERSION {
        return Err(ProtocolError::Wire(format!("unsupported wire version {}", msg.version)));
    }
    Ok(msg)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WireVariable {
    pub name: String,
    pub states: Vec<String>,
}

impl WireVariable {
    pub fn from_variable(v: &Variable) -> Self {
        WireVariable {
            name: v.name().to_string(),
            states: v.states().to_vec(),
        }
    }

    pub fn to_variable(&self) -> Result<Variable> {
        Ok(Variable::new(self.name.clone(), self.states.clone())?)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WireFactor {
    pub scope: Vec<WireVariable>,
    pub values: Vec<f64>,
}

impl WireFactor {
    pub fn from_factor(f: &Factor) -> Self {
        WireFactor {
            scope: f.scope().iter().map(WireVariable::from_variable).collect(),
            values: f.values().to_vec(),
        }
    }

    pub fn to_factor(&self) -> Result<Factor> {
        let scope = self.scope.iter().map(WireVariable::to_variable).collect::<Result<Vec<_>>>()?;
        Ok(Factor::new(scope, self.values.clone())?)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PsiBlinded {
    /// Hex-encoded group elements.
    pub elements: Vec<String>,
}

impl Payload for PsiBlinded {
    const KIND: MessageKind = MessageKind::PsiBlinded;
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PsiDoubleBlinded {
    pub elements: Vec<String>,
}

impl Payload for PsiDoubleBlinded {
    const KIND: MessageKind = MessageKind::PsiDoubleBlinded;
}

/// Sent by an overlap's leader to each other holder.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OverlapAnnounce {
    /// Digest of the doubly blinded element both sides hold for the variable.
    pub handle: String,
    /// Hex salt from which the variable and state tokens are derived.
    pub salt: String,
    pub holders: Vec<String>,
}

impl Payload for OverlapAnnounce {
    const KIND: MessageKind = MessageKind::OverlapAnnounce;
}

/// A holder's declaration to the leader, or the leader's merged answer.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StateUnion {
    pub overlap: String,
    /// The sender's own weight in a declaration; the holders' total in the answer.
    pub weight: f64,
    pub states: Vec<String>,
    pub parents: Vec<WireVariable>,
}

impl Payload for StateUnion {
    const KIND: MessageKind = MessageKind::StateUnion;
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NormColumns {
    pub overlap: String,
    pub columns: Vec<Vec<f64>>,
}

impl Payload for NormColumns {
    const KIND: MessageKind = MessageKind::NormColumns;

    fn value_count(&self) -> usize {
        self.columns.iter().map(Vec::len).sum()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NormValues {
    pub overlap: String,
    pub values: Vec<f64>,
}

impl Payload for NormValues {
    const KIND: MessageKind = MessageKind::NormValues;

    fn value_count(&self) -> usize {
        self.values.len()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum SharePurpose {
    /// Re-randomization mask for the ring neighbour.
    Mask,
    /// Normalized share handed to the party that stores the pooled CPD.
    Joint,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ShareCommit {
    pub overlap: String,
    pub purpose: SharePurpose,
    pub factor: WireFactor,
}

impl Payload for ShareCommit {
    const KIND: MessageKind = MessageKind::ShareCommit;

    fn value_count(&self) -> usize {
        self.factor.values.len()
    }
}
