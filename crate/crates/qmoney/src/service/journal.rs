//! Append-only ledger journal.
//!
//! One JSON object per line: a `mint` line per banknote and a `verify` line
//! per register/counter mutation. Recovery replays the journal in order;
//! duplicate trailing mutations are skipped via their attempt nonce, and a
//! torn final line is truncated away with the prior state intact. Every
//! line carries `format_version`.

use crate::protocol::{BankRecord, Serial, Verdict};
use crate::security::SecurityParams;
use crate::service::wire::{
    bitmap_from_hex, bitmap_to_hex, blocks_from_hex, blocks_to_hex, WireSecurityParams,
};
use crate::service::ServiceError;
use serde::{Deserialize, Serialize};
use std::collections::HashMap;
use std::fs::{File, OpenOptions};
use std::io::{BufWriter, Read, Write};
use std::path::{Path, PathBuf};

pub const FORMAT_VERSION: u32 = 1;

/// Persisted form of a [`BankRecord`]: the `mint` journal line.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LedgerEntry {
    pub format_version: u32,
    pub serial: String,
    pub n: u32,
    /// Packed secrets, one hex digit per 4-bit block (two blocks per byte).
    pub secrets_hex: String,
    /// Usage register bitmap, hex-encoded bytes, LSB-first within a byte.
    pub register_hex: String,
    pub counter_s: u32,
    pub cap_t: u32,
    pub params: WireSecurityParams,
    #[serde(with = "crate::service::wire::decimal_text")]
    pub mu: f64,
    pub created_at: u64,
}

/// The `verify` journal line: one register/counter mutation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MutationEntry {
    pub format_version: u32,
    pub serial: String,
    pub attempt_nonce: String,
    /// Register indices this claim consumed.
    pub indices: Vec<u32>,
    pub verdict: Verdict,
    /// Attempt counter after the claim.
    pub counter_s: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum JournalLine {
    Mint(LedgerEntry),
    Verify(MutationEntry),
}

/// Serialize a record into its ledger form.
pub fn encode_record(record: &BankRecord) -> LedgerEntry {
    LedgerEntry {
        format_version: FORMAT_VERSION,
        serial: record.serial.to_string(),
        n: record.n(),
        secrets_hex: blocks_to_hex(record.secrets()),
        register_hex: bitmap_to_hex(record.register()),
        counter_s: record.counter_s(),
        cap_t: record.cap_t,
        params: record.params.into(),
        mu: record.mu,
        created_at: record.created_at,
    }
}

/// Rebuild a record from its ledger form.
pub fn decode_record(entry: &LedgerEntry) -> Result<BankRecord, ServiceError> {
    if entry.format_version != FORMAT_VERSION {
        return Err(ServiceError::Malformed(format!(
            "unsupported ledger format_version {}",
            entry.format_version
        )));
    }
    let secrets = blocks_from_hex(&entry.secrets_hex, entry.n as usize)
        .map_err(ServiceError::Malformed)?;
    let register = bitmap_from_hex(&entry.register_hex, entry.n as usize)
        .map_err(ServiceError::Malformed)?;
    let params: SecurityParams = entry.params.try_into()?;
    Ok(BankRecord::from_parts(
        Serial::from_string(entry.serial.clone()),
        secrets,
        register,
        entry.counter_s,
        entry.cap_t,
        params,
        entry.mu,
        entry.created_at,
    )?)
}

/// Outcome of replaying a journal.
#[derive(Debug)]
pub struct Replay {
    pub records: HashMap<String, BankRecord>,
    /// (serial, nonce) pairs already applied, for runtime dedupe.
    pub applied_nonces: std::collections::HashSet<(String, String)>,
    pub lines_applied: usize,
    pub duplicates_skipped: usize,
    /// Byte length of the valid journal prefix; bytes past it belong to a
    /// torn final line.
    pub valid_len: u64,
    pub torn_tail: bool,
}

/// Replay a journal file into ledger state. Missing file means empty state.
pub fn replay(path: &Path) -> Result<Replay, ServiceError> {
    let mut replayed = Replay {
        records: HashMap::new(),
        applied_nonces: std::collections::HashSet::new(),
        lines_applied: 0,
        duplicates_skipped: 0,
        valid_len: 0,
        torn_tail: false,
    };
    let mut raw = Vec::new();
    match File::open(path) {
        Ok(mut f) => {
            f.read_to_end(&mut raw)?;
        }
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(replayed),
        Err(e) => return Err(e.into()),
    }

    let mut offset = 0usize;
    let mut line_no = 0usize;
    while offset < raw.len() {
        let rest = &raw[offset..];
        let (line_bytes, consumed, complete) = match rest.iter().position(|&b| b == b'\n') {
            Some(nl) => (&rest[..nl], nl + 1, true),
            None => (rest, rest.len(), false),
        };
        line_no += 1;
        let parsed: Result<JournalLine, _> = serde_json::from_slice(line_bytes);
        match parsed {
            Ok(line) => {
                if !complete {
                    // a line without its newline is treated as torn even if
                    // it happens to parse; the writer always ends lines
                    replayed.torn_tail = true;
                    break;
                }
                apply_line(&mut replayed, line, line_no)?;
                offset += consumed;
                replayed.valid_len = offset as u64;
            }
            Err(err) => {
                let is_last = offset + consumed >= raw.len();
                if is_last {
                    replayed.torn_tail = true;
                    break;
                }
                return Err(ServiceError::LedgerCorrupt {
                    line: line_no,
                    reason: err.to_string(),
                });
            }
        }
    }
    Ok(replayed)
}

fn apply_line(replayed: &mut Replay, line: JournalLine, line_no: usize) -> Result<(), ServiceError> {
    match line {
        JournalLine::Mint(entry) => {
            if replayed.records.contains_key(&entry.serial) {
                replayed.duplicates_skipped += 1;
                return Ok(());
            }
            let record = decode_record(&entry).map_err(|e| ServiceError::LedgerCorrupt {
                line: line_no,
                reason: e.to_string(),
            })?;
            replayed.records.insert(entry.serial, record);
            replayed.lines_applied += 1;
        }
        JournalLine::Verify(entry) => {
            let key = (entry.serial.clone(), entry.attempt_nonce.clone());
            if replayed.applied_nonces.contains(&key) {
                replayed.duplicates_skipped += 1;
                return Ok(());
            }
            let record = replayed.records.get_mut(&entry.serial).ok_or_else(|| {
                ServiceError::LedgerCorrupt {
                    line: line_no,
                    reason: format!("mutation for unknown serial {}", entry.serial),
                }
            })?;
            record
                .replay_mutation(&entry.indices, entry.counter_s)
                .map_err(|e| ServiceError::LedgerCorrupt { line: line_no, reason: e.to_string() })?;
            replayed.applied_nonces.insert(key);
            replayed.lines_applied += 1;
        }
    }
    Ok(())
}

/// Append-side of the journal. Every append is flushed and synced before it
/// returns, so a verdict handed to a client survives immediate termination.
pub struct Journal {
    path: PathBuf,
    writer: BufWriter<File>,
}

impl Journal {
    /// Open for appending, truncating a torn tail first if `valid_len` says
    /// the file extends past the last complete line.
    pub fn open(path: &Path, valid_len: Option<u64>) -> Result<Self, ServiceError> {
        if let Some(len) = valid_len {
            if path.exists() {
                let file = OpenOptions::new().write(true).open(path)?;
                let actual = file.metadata()?.len();
                if actual > len {
                    log::warn!(
                        "truncating torn journal tail: {} -> {} bytes ({})",
                        actual,
                        len,
                        path.display()
                    );
                    file.set_len(len)?;
                    file.sync_data()?;
                }
            }
        }
        let file = OpenOptions::new().create(true).append(true).open(path)?;
        Ok(Self { path: path.to_path_buf(), writer: BufWriter::new(file) })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn append(&mut self, line: &JournalLine) -> Result<(), ServiceError> {
        let mut encoded = serde_json::to_vec(line)?;
        encoded.push(b'\n');
        self.writer.write_all(&encoded)?;
        self.writer.flush()?;
        self.writer.get_ref().sync_data()?;
        Ok(())
    }
}
