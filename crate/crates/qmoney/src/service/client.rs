//! Verifier-side client: banknote wallet files and the holder's half of the
//! wire protocol.
//!
//! A banknote file is three lines: a JSON header `{format_version, serial,
//! n, mu}`, the hex block payload, and the hex consumed bitmap. The blocks
//! are opaque to the client API; consumption state is persisted back to the
//! file before a claim leaves the machine so a crash cannot re-measure
//! spent states.

use crate::photonics::DeviceModel;
use crate::protocol::{
    BanknoteHandle, Bitmap, Serial, TrialStats, Verdict, VerdictReason,
};
use crate::security::min_conclusive_threshold;
use crate::service::wire::{
    bitmap_from_hex, bitmap_to_hex, blocks_from_hex, blocks_to_hex, claim_to_wire, decimal_text,
    WireMessage,
};
use crate::service::ServiceError;
use rand::Rng;
use serde::{Deserialize, Serialize};
use std::io::{BufRead, BufReader, Write};
use std::net::TcpStream;
use std::path::Path;

const FILE_VERSION: u32 = 1;

#[derive(Debug, Serialize, Deserialize)]
struct NoteHeader {
    format_version: u32,
    serial: String,
    n: u32,
    #[serde(with = "decimal_text")]
    mu: f64,
}

/// On-disk banknote plus local consumption state.
#[derive(Debug, Clone)]
pub struct BanknoteFile {
    pub serial: String,
    pub mu: f64,
    blocks: Vec<crate::photonics::BlockBits>,
    consumed: Bitmap,
}

impl BanknoteFile {
    pub fn n(&self) -> u32 {
        self.blocks.len() as u32
    }

    pub fn remaining(&self) -> u64 {
        self.n() as u64 - self.consumed.count_ones() as u64
    }

    /// Wrap a freshly minted payload (nothing consumed yet).
    pub fn from_mint(serial: String, n: u32, mu: f64, blocks_hex: &str) -> Result<Self, ServiceError> {
        let blocks = blocks_from_hex(blocks_hex, n as usize).map_err(ServiceError::Malformed)?;
        Ok(Self { serial, mu, blocks, consumed: Bitmap::new(n as usize) })
    }

    pub fn load(path: &Path) -> Result<Self, ServiceError> {
        let text = std::fs::read_to_string(path)?;
        let mut lines = text.lines();
        let header: NoteHeader = serde_json::from_str(
            lines.next().ok_or_else(|| ServiceError::Malformed("empty banknote file".into()))?,
        )?;
        if header.format_version != FILE_VERSION {
            return Err(ServiceError::Malformed(format!(
                "unsupported banknote format_version {}",
                header.format_version
            )));
        }
        let blocks_hex = lines
            .next()
            .ok_or_else(|| ServiceError::Malformed("missing block payload".into()))?;
        let consumed_hex = lines
            .next()
            .ok_or_else(|| ServiceError::Malformed("missing consumed bitmap".into()))?;
        let blocks =
            blocks_from_hex(blocks_hex.trim(), header.n as usize).map_err(ServiceError::Malformed)?;
        let consumed = bitmap_from_hex(consumed_hex.trim(), header.n as usize)
            .map_err(ServiceError::Malformed)?;
        Ok(Self { serial: header.serial, mu: header.mu, blocks, consumed })
    }

    /// Write atomically (temp file + rename).
    pub fn save(&self, path: &Path) -> Result<(), ServiceError> {
        let header = NoteHeader {
            format_version: FILE_VERSION,
            serial: self.serial.clone(),
            n: self.n(),
            mu: self.mu,
        };
        let mut text = serde_json::to_string(&header)?;
        text.push('\n');
        text.push_str(&blocks_to_hex(&self.blocks));
        text.push('\n');
        text.push_str(&bitmap_to_hex(&self.consumed));
        text.push('\n');
        let tmp = path.with_extension("tmp");
        {
            let mut f = std::fs::File::create(&tmp)?;
            f.write_all(text.as_bytes())?;
            f.sync_data()?;
        }
        std::fs::rename(&tmp, path)?;
        Ok(())
    }

    fn to_handle(&self) -> BanknoteHandle {
        BanknoteHandle::from_parts(
            Serial::from_string(self.serial.clone()),
            self.mu,
            self.blocks.clone(),
            self.consumed.clone(),
        )
    }

    fn absorb_consumption(&mut self, handle: &BanknoteHandle) {
        self.consumed = handle.consumed().clone();
    }
}

/// One request/response exchange over an open connection.
struct Connection {
    reader: BufReader<TcpStream>,
    writer: TcpStream,
}

impl Connection {
    fn open(endpoint: &str) -> Result<Self, ServiceError> {
        let stream = TcpStream::connect(endpoint)?;
        stream.set_nodelay(true)?;
        let writer = stream.try_clone()?;
        Ok(Self { reader: BufReader::new(stream), writer })
    }

    fn call(&mut self, msg: &WireMessage) -> Result<WireMessage, ServiceError> {
        self.writer.write_all(msg.encode().as_bytes())?;
        self.writer.flush()?;
        let mut line = String::new();
        if self.reader.read_line(&mut line)? == 0 {
            return Err(ServiceError::Malformed("connection closed mid-exchange".into()));
        }
        let resp = WireMessage::decode(line.trim_end())?;
        if let WireMessage::Error { reason, .. } = &resp {
            return Err(ServiceError::Server(reason.clone()));
        }
        if resp.request_id() != msg.request_id() {
            return Err(ServiceError::Malformed(format!(
                "response id {:?} does not match request id {:?}",
                resp.request_id(),
                msg.request_id()
            )));
        }
        Ok(resp)
    }
}

/// Ask the bank to mint a note of `n` states and persist it to `path`.
pub fn request_mint<R: Rng + ?Sized>(
    endpoint: &str,
    n: u32,
    mu: Option<f64>,
    cap_t: Option<u32>,
    path: &Path,
    rng: &mut R,
) -> Result<BanknoteFile, ServiceError> {
    let mut conn = Connection::open(endpoint)?;
    let request_id = format!("mint-{:016x}", rng.gen::<u64>());
    let resp = conn.call(&WireMessage::MintReq { request_id, n, mu, cap_t, params: None })?;
    let WireMessage::MintResp { serial, n, mu, blocks_hex, .. } = resp else {
        return Err(ServiceError::Malformed(format!("expected MINT_RESP, got {resp:?}")));
    };
    let file = BanknoteFile::from_mint(serial, n, mu, &blocks_hex)?;
    file.save(path)?;
    Ok(file)
}

/// Run one verification attempt against the bank.
///
/// Measures `l` fresh states locally, persists the consumption, aborts
/// locally (without submitting) on an efficiency shortfall, and otherwise
/// submits the claim and returns the bank's verdict.
pub fn client_verify<R: Rng + ?Sized>(
    endpoint: &str,
    note_path: &Path,
    l: u32,
    dev: &DeviceModel,
    rng: &mut R,
) -> Result<(Verdict, TrialStats), ServiceError> {
    let mut file = BanknoteFile::load(note_path)?;
    let mut conn = Connection::open(endpoint)?;

    let request_id = format!("thr-{:016x}", rng.gen::<u64>());
    let resp = conn.call(&WireMessage::ThresholdsReq {
        request_id,
        serial: file.serial.clone(),
    })?;
    let WireMessage::ThresholdsResp { efficiency_rate, .. } = resp else {
        return Err(ServiceError::Malformed(format!("expected THRESHOLDS_RESP, got {resp:?}")));
    };

    let mut handle = file.to_handle();
    let indices = handle.select_subset(l, rng)?;
    let claim = handle.measure(&indices, dev, rng)?;
    file.absorb_consumption(&handle);
    file.save(note_path)?;

    let mut stats = TrialStats {
        l: claim.l,
        l_conclusive: claim.l_conclusive,
        errors: 0,
        error_rate: 0.0,
    };
    // same ceil arithmetic the bank re-applies, fed from the published rate
    let threshold = min_conclusive_threshold(claim.l, efficiency_rate, 0.0);
    if claim.l_conclusive < threshold {
        return Ok((Verdict::rejected(VerdictReason::EfficiencyShortfall), stats));
    }

    let request_id = format!("ver-{:016x}", rng.gen::<u64>());
    let resp = conn.call(&claim_to_wire(request_id, &claim))?;
    let WireMessage::VerifyResp { accepted, reason, errors_observed, threshold_used, .. } = resp
    else {
        return Err(ServiceError::Malformed(format!("expected VERIFY_RESP, got {resp:?}")));
    };
    let verdict = Verdict { accepted, reason, errors_observed, threshold_used };
    stats.errors = errors_observed;
    if stats.l_conclusive > 0 {
        stats.error_rate = stats.errors as f64 / stats.l_conclusive as f64;
    }
    Ok((verdict, stats))
}
