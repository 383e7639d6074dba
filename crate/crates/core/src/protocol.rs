//! Packet wire format and per-receiver candidate libraries.
//!
//! Record layout, all little-endian:
//!
//! | field     | type        |
//! |-----------|-------------|
//! | sender_id | u32         |
//! | step      | u32         |
//! | dim       | u32         |
//! | location  | dim x f64   |
//! | mean      | f64         |
//! | variance  | f64         |
//!
//! Packet logs are a sequence of records, each preceded by its byte length
//! as a little-endian u32.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const HEADER_LEN: usize = 12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Packet {
    pub location: Vec<f64>,
    pub mean: f64,
    pub variance: f64,
    pub sender_id: u32,
    pub step: u32,
}

impl Packet {
    pub fn encoded_len(&self) -> usize {
        HEADER_LEN + 8 * (self.location.len() + 2)
    }
}

pub fn encode_packet(p: &Packet) -> Vec<u8> {
    let mut out = Vec::with_capacity(p.encoded_len());
    out.extend_from_slice(&p.sender_id.to_le_bytes());
    out.extend_from_slice(&p.step.to_le_bytes());
    out.extend_from_slice(&(p.location.len() as u32).to_le_bytes());
    for c in &p.location {
        out.extend_from_slice(&c.to_le_bytes());
    }
    out.extend_from_slice(&p.mean.to_le_bytes());
    out.extend_from_slice(&p.variance.to_le_bytes());
    out
}

fn read_u32(bytes: &[u8], at: usize) -> u32 {
    u32::from_le_bytes(bytes[at..at + 4].try_into().expect("four bytes"))
}

fn read_f64(bytes: &[u8], at: usize) -> f64 {
    f64::from_le_bytes(bytes[at..at + 8].try_into().expect("eight bytes"))
}

pub fn decode_packet(bytes: &[u8]) -> Result<Packet> {
    if bytes.len() < HEADER_LEN {
        return Err(Error::MalformedPacket(format!(
            "record of {} bytes is shorter than the header",
            bytes.len()
        )));
    }
    let sender_id = read_u32(bytes, 0);
    let step = read_u32(bytes, 4);
    let dim = read_u32(bytes, 8) as usize;
    let expected = dim
        .checked_add(2)
        .and_then(|f| f.checked_mul(8))
        .and_then(|b| b.checked_add(HEADER_LEN))
        .ok_or_else(|| Error::MalformedPacket(format!("dimension {dim} overflows")))?;
    if bytes.len() != expected {
        return Err(Error::MalformedPacket(format!(
            "expected {expected} bytes for dimension {dim}, got {}",
            bytes.len()
        )));
    }
    let location: Vec<f64> = (0..dim).map(|d| read_f64(bytes, HEADER_LEN + 8 * d)).collect();
    let mean = read_f64(bytes, HEADER_LEN + 8 * dim);
    let variance = read_f64(bytes, HEADER_LEN + 8 * dim + 8);
    if location.iter().chain([&mean, &variance]).any(|v| !v.is_finite()) {
        return Err(Error::MalformedPacket("non-finite field".into()));
    }
    if variance <= 0.0 {
        return Err(Error::MalformedPacket(format!("variance must be positive, got {variance}")));
    }
    Ok(Packet {
        location,
        mean,
        variance,
        sender_id,
        step,
    })
}

pub fn encode_packet_log<'a>(packets: impl IntoIterator<Item = &'a Packet>) -> Vec<u8> {
    let mut out = Vec::new();
    for p in packets {
        let rec = encode_packet(p);
        out.extend_from_slice(&(rec.len() as u32).to_le_bytes());
        out.extend_from_slice(&rec);
    }
    out
}

pub fn decode_packet_log(mut bytes: &[u8]) -> Result<Vec<Packet>> {
    let mut out = Vec::new();
    while !bytes.is_empty() {
        if bytes.len() < 4 {
            return Err(Error::MalformedPacket("truncated length prefix".into()));
        }
        let len = read_u32(bytes, 0) as usize;
        let rest = &bytes[4..];
        if rest.len() < len {
            return Err(Error::MalformedPacket("truncated record".into()));
        }
        out.push(decode_packet(&rest[..len])?);
        bytes = &rest[len..];
    }
    Ok(out)
}

/// Packets a receiver got in one step, keyed by sender. Pooling walks
/// senders in ascending id order, then packet order, without dedup.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct CandidateLibrary {
    per_edge: BTreeMap<u32, Vec<Packet>>,
}

impl CandidateLibrary {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, sender_id: u32, packets: Vec<Packet>) {
        self.per_edge.entry(sender_id).or_default().extend(packets);
    }

    pub fn from_edge(&self, sender_id: u32) -> &[Packet] {
        self.per_edge.get(&sender_id).map_or(&[], Vec::as_slice)
    }

    pub fn senders(&self) -> impl Iterator<Item = u32> + '_ {
        self.per_edge.keys().copied()
    }

    /// `(sender_id, index within edge, packet)` over the pooled library.
    pub fn pooled(&self) -> impl Iterator<Item = (u32, usize, &Packet)> {
        self.per_edge
            .iter()
            .flat_map(|(s, ps)| ps.iter().enumerate().map(move |(i, p)| (*s, i, p)))
    }

    pub fn len(&self) -> usize {
        self.per_edge.values().map(Vec::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}
