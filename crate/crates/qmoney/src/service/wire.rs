//! Newline-delimited JSON wire protocol between the bank daemon and its
//! clients.
//!
//! One message per line, one JSON object per message, dispatched on the
//! `type` tag. Every request carries a client-chosen `request_id` echoed in
//! the response; anything unparseable or unknown gets an `ERROR` reply,
//! never silence. Probabilities travel as decimal text with 17 significant
//! digits so they round-trip bit-exactly.

use crate::photonics::Pair;
use crate::protocol::{Serial, Triplet, VerdictReason, VerificationClaim};
use crate::security::{SecurityError, SecurityParams};
use serde::{Deserialize, Serialize};

/// Serde adapter: f64 encoded as decimal text (17 significant digits).
pub mod decimal_text {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn encode(x: f64) -> String {
        format!("{x:.16e}")
    }

    pub fn serialize<S: Serializer>(x: &f64, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&encode(*x))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        let text = String::deserialize(d)?;
        text.trim().parse::<f64>().map_err(serde::de::Error::custom)
    }
}

/// Serde adapter for optional decimal-text fields.
pub mod decimal_text_opt {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(x: &Option<f64>, s: S) -> Result<S::Ok, S::Error> {
        match x {
            Some(v) => s.serialize_some(&super::decimal_text::encode(*v)),
            None => s.serialize_none(),
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Option<f64>, D::Error> {
        let text = Option::<String>::deserialize(d)?;
        match text {
            None => Ok(None),
            Some(t) => t.trim().parse::<f64>().map(Some).map_err(serde::de::Error::custom),
        }
    }
}

/// Security parameters in their wire/ledger form (decimal text fields).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WireSecurityParams {
    #[serde(with = "decimal_text")]
    pub eta: f64,
    #[serde(with = "decimal_text")]
    pub beta: f64,
    #[serde(with = "decimal_text")]
    pub eps: f64,
    #[serde(with = "decimal_text")]
    pub delta: f64,
    #[serde(with = "decimal_text")]
    pub mu: f64,
    #[serde(with = "decimal_text")]
    pub forge_target: f64,
}

impl From<SecurityParams> for WireSecurityParams {
    fn from(p: SecurityParams) -> Self {
        Self {
            eta: p.eta,
            beta: p.beta,
            eps: p.eps,
            delta: p.delta,
            mu: p.mu,
            forge_target: p.forge_target,
        }
    }
}

impl TryFrom<WireSecurityParams> for SecurityParams {
    type Error = SecurityError;

    fn try_from(w: WireSecurityParams) -> Result<Self, SecurityError> {
        SecurityParams::new(w.eta, w.beta, w.eps, w.delta, w.mu, w.forge_target)
    }
}

/// One conclusive triplet on the wire: state index, pair indices, parity bit.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct WireTriplet {
    pub k: u32,
    pub i: u8,
    pub j: u8,
    pub b: u8,
}

impl From<Triplet> for WireTriplet {
    fn from(t: Triplet) -> Self {
        Self { k: t.index, i: t.pair.i(), j: t.pair.j(), b: t.bit as u8 }
    }
}

/// The seven message types of the protocol.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type")]
pub enum WireMessage {
    #[serde(rename = "MINT_REQ")]
    MintReq {
        request_id: String,
        n: u32,
        #[serde(default, with = "decimal_text_opt", skip_serializing_if = "Option::is_none")]
        mu: Option<f64>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        cap_t: Option<u32>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        params: Option<WireSecurityParams>,
    },
    #[serde(rename = "MINT_RESP")]
    MintResp {
        request_id: String,
        serial: String,
        n: u32,
        #[serde(with = "decimal_text")]
        mu: f64,
        /// The banknote payload: one hex digit per state, two states per
        /// byte when decoded.
        blocks_hex: String,
    },
    #[serde(rename = "VERIFY_REQ")]
    VerifyReq {
        request_id: String,
        serial: String,
        attempt_nonce: String,
        l: u64,
        l_conclusive: u64,
        triplets: Vec<WireTriplet>,
    },
    #[serde(rename = "VERIFY_RESP")]
    VerifyResp {
        request_id: String,
        serial: String,
        accepted: bool,
        reason: VerdictReason,
        errors_observed: u64,
        threshold_used: u64,
    },
    #[serde(rename = "THRESHOLDS_REQ")]
    ThresholdsReq { request_id: String, serial: String },
    #[serde(rename = "THRESHOLDS_RESP")]
    ThresholdsResp {
        request_id: String,
        serial: String,
        /// η − ε: the fewest conclusive outcomes per selected state.
        #[serde(with = "decimal_text")]
        efficiency_rate: f64,
        /// β + δ: the error-rate cap the bank applies.
        #[serde(with = "decimal_text")]
        error_rate_cap: f64,
    },
    #[serde(rename = "ERROR")]
    Error {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        request_id: Option<String>,
        reason: String,
    },
}

impl WireMessage {
    /// Serialize to a single newline-terminated line.
    pub fn encode(&self) -> String {
        let mut line = serde_json::to_string(self).expect("wire messages always serialize");
        line.push('\n');
        line
    }

    /// Parse one line.
    pub fn decode(line: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(line)
    }

    pub fn request_id(&self) -> Option<&str> {
        match self {
            WireMessage::MintReq { request_id, .. }
            | WireMessage::MintResp { request_id, .. }
            | WireMessage::VerifyReq { request_id, .. }
            | WireMessage::VerifyResp { request_id, .. }
            | WireMessage::ThresholdsReq { request_id, .. }
            | WireMessage::ThresholdsResp { request_id, .. } => Some(request_id),
            WireMessage::Error { request_id, .. } => request_id.as_deref(),
        }
    }
}

/// Best-effort extraction of a request id from an unparseable line, so the
/// ERROR reply can still be correlated.
pub fn salvage_request_id(line: &str) -> Option<String> {
    let value: serde_json::Value = serde_json::from_str(line).ok()?;
    value.get("request_id")?.as_str().map(str::to_string)
}

/// Build the wire form of a claim.
pub fn claim_to_wire(request_id: String, claim: &VerificationClaim) -> WireMessage {
    WireMessage::VerifyReq {
        request_id,
        serial: claim.serial.to_string(),
        attempt_nonce: claim.attempt_nonce.clone(),
        l: claim.l,
        l_conclusive: claim.l_conclusive,
        triplets: claim.triplets.iter().map(|&t| t.into()).collect(),
    }
}

/// Rebuild a claim from its wire form.
pub fn claim_from_wire(
    serial: String,
    attempt_nonce: String,
    l: u64,
    l_conclusive: u64,
    triplets: &[WireTriplet],
) -> Result<VerificationClaim, crate::photonics::PhotonicsError> {
    let mut out = Vec::with_capacity(triplets.len());
    for t in triplets {
        out.push(Triplet { index: t.k, pair: Pair::new(t.i, t.j)?, bit: t.b != 0 });
    }
    Ok(VerificationClaim {
        serial: Serial::from_string(serial),
        attempt_nonce,
        triplets: out,
        l,
        l_conclusive,
    })
}

/// Hex packing for block payloads: one hex digit per 4-bit block, i.e. two
/// blocks per byte, upper nibble first.
pub fn blocks_to_hex(blocks: &[crate::photonics::BlockBits]) -> String {
    const DIGITS: &[u8; 16] = b"0123456789abcdef";
    let mut out = String::with_capacity(blocks.len() + blocks.len() % 2);
    for b in blocks {
        out.push(DIGITS[b.value() as usize] as char);
    }
    if out.len() % 2 == 1 {
        out.push('0'); // pad to whole bytes
    }
    out
}

/// Inverse of [`blocks_to_hex`]; `n` trims the pad digit for odd counts.
pub fn blocks_from_hex(
    hex: &str,
    n: usize,
) -> Result<Vec<crate::photonics::BlockBits>, String> {
    if hex.len() != n + n % 2 {
        return Err(format!("blocks hex length {} does not match n={n}", hex.len()));
    }
    let mut out = Vec::with_capacity(n);
    for (pos, ch) in hex.chars().enumerate() {
        let v = ch.to_digit(16).ok_or_else(|| format!("invalid hex digit {ch:?}"))? as u8;
        if pos < n {
            out.push(crate::photonics::BlockBits::new(v).expect("hex digit is a nibble"));
        } else if v != 0 {
            return Err("nonzero pad nibble".into());
        }
    }
    Ok(out)
}

/// Hex encoding of a bitmap's backing bytes.
pub fn bitmap_to_hex(bm: &crate::protocol::Bitmap) -> String {
    let mut out = String::with_capacity(bm.as_bytes().len() * 2);
    for byte in bm.as_bytes() {
        out.push_str(&format!("{byte:02x}"));
    }
    out
}

/// Inverse of [`bitmap_to_hex`] for a bitmap of `len` bits.
pub fn bitmap_from_hex(hex: &str, len: usize) -> Result<crate::protocol::Bitmap, String> {
    if !hex.len().is_multiple_of(2) {
        return Err("bitmap hex must encode whole bytes".into());
    }
    let mut bytes = Vec::with_capacity(hex.len() / 2);
    let raw = hex.as_bytes();
    for chunk in raw.chunks(2) {
        let hi = (chunk[0] as char).to_digit(16).ok_or("invalid hex digit")? as u8;
        let lo = (chunk[1] as char).to_digit(16).ok_or("invalid hex digit")? as u8;
        bytes.push(hi << 4 | lo);
    }
    crate::protocol::Bitmap::from_bytes(bytes, len)
        .ok_or_else(|| format!("bitmap hex does not fit {len} bits"))
}
