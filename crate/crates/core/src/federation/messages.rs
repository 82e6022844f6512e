//! Inter-party payloads and the append-only message log.

use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};
use crate::numerics::norm2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PayloadKind {
    PhiBroadcast,
    PrivatizedGradient,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Party {
    Server,
    Client(usize),
}

impl fmt::Display for Party {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Party::Server => write!(f, "server"),
            Party::Client(i) => write!(f, "client_{i}"),
        }
    }
}

impl FromStr for Party {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        if s == "server" {
            return Ok(Party::Server);
        }
        s.strip_prefix("client_")
            .and_then(|i| i.parse().ok())
            .map(Party::Client)
            .ok_or_else(|| format!("unknown party `{s}`"))
    }
}

impl Serialize for Party {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Party {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        String::deserialize(d)?.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MessageRecord {
    pub round: usize,
    pub sender: Party,
    pub receiver: Party,
    pub kind: PayloadKind,
    pub bytes: usize,
    pub l2_norm: f64,
}

pub fn encode_payload(values: &[f64]) -> Vec<u8> {
    values.iter().flat_map(|v| v.to_le_bytes()).collect()
}

pub fn decode_payload(bytes: &[u8]) -> Result<Vec<f64>> {
    if !bytes.len().is_multiple_of(8) {
        return Err(Error::InvalidArgument(format!("payload of {} bytes is not a whole f64 vector", bytes.len())));
    }
    Ok(bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect())
}

/// Every payload that crosses the client/server boundary passes through
/// [`MessageLog::transmit`], which hands the receiver a decoded copy.
#[derive(Debug, Clone, Default)]
pub struct MessageLog {
    records: Vec<MessageRecord>,
    payloads: Option<Vec<Vec<u8>>>,
}

impl MessageLog {
    pub fn new(retain_payloads: bool) -> Self {
        Self {
            records: Vec::new(),
            payloads: retain_payloads.then(Vec::new),
        }
    }

    pub fn transmit(
        &mut self,
        round: usize,
        sender: Party,
        receiver: Party,
        kind: PayloadKind,
        values: &[f64],
    ) -> Result<Vec<f64>> {
        let bytes = encode_payload(values);
        self.records.push(MessageRecord {
            round,
            sender,
            receiver,
            kind,
            bytes: bytes.len(),
            l2_norm: norm2(values),
        });
        let received = decode_payload(&bytes)?;
        if let Some(p) = &mut self.payloads {
            p.push(bytes);
        }
        Ok(received)
    }

    pub fn records(&self) -> &[MessageRecord] {
        &self.records
    }

    /// Raw payload bytes in record order, when retained.
    pub fn payloads(&self) -> Option<&[Vec<u8>]> {
        self.payloads.as_deref()
    }

    pub fn to_jsonl(&self) -> Result<String> {
        let mut out = String::new();
        for r in &self.records {
            out.push_str(&serde_json::to_string(r)?);
            out.push('\n');
        }
        Ok(out)
    }

    pub fn write_jsonl(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_jsonl()?).map_err(|e| Error::io(path, e))
    }
}
