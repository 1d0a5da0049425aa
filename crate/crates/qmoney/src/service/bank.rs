//! The bank daemon's state: a persistent ledger of records behind per-serial
//! exclusive sections.
//!
//! Every verdict is journaled (flushed and synced) before it is applied in
//! memory or returned, so anything a client ever saw is recoverable.
//! Requests for distinct serials proceed in parallel; claims on one serial
//! are serialized by that record's mutex around the whole
//! read-check-mutate-persist sequence.

use crate::protocol::{bank_apply, bank_evaluate, mint, BankRecord, Verdict, VerificationClaim};
use crate::security::SecurityParams;
use crate::service::journal::{
    encode_record, replay, Journal, JournalLine, MutationEntry, FORMAT_VERSION,
};
use crate::service::wire::{blocks_to_hex, claim_from_wire, salvage_request_id, WireMessage};
use crate::service::ServiceError;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use std::collections::HashMap;
use std::path::Path;
use std::sync::{Arc, Mutex, RwLock};

/// Defaults applied to MINT_REQ messages that omit fields.
#[derive(Debug, Clone)]
pub struct BankOptions {
    pub default_params: SecurityParams,
    pub default_mu: f64,
    pub default_cap_t: u32,
    /// Seed for the minting generator; `None` draws from OS entropy.
    pub mint_seed: Option<u64>,
}

impl Default for BankOptions {
    fn default() -> Self {
        Self {
            default_params: SecurityParams::calibrated_defaults(),
            default_mu: crate::security::DEFAULT_MU,
            default_cap_t: 16,
            mint_seed: None,
        }
    }
}

/// A freshly minted note as handed to the client.
#[derive(Debug, Clone)]
pub struct MintedNote {
    pub serial: String,
    pub n: u32,
    pub mu: f64,
    pub blocks_hex: String,
}

pub struct Bank {
    records: RwLock<HashMap<String, Arc<Mutex<BankRecord>>>>,
    journal: Mutex<Journal>,
    mint_rng: Mutex<ChaCha12Rng>,
    options: BankOptions,
}

impl Bank {
    /// Recover ledger state from `ledger_path` (creating it if absent) and
    /// open it for appending. A torn trailing line is truncated away.
    pub fn open(ledger_path: &Path, options: BankOptions) -> Result<Self, ServiceError> {
        let replayed = replay(ledger_path)?;
        if replayed.torn_tail {
            log::warn!("ledger had a torn final line; keeping {} bytes", replayed.valid_len);
        }
        let journal = Journal::open(ledger_path, Some(replayed.valid_len))?;
        let records = replayed
            .records
            .into_iter()
            .map(|(serial, record)| (serial, Arc::new(Mutex::new(record))))
            .collect();
        let rng = match options.mint_seed {
            Some(seed) => ChaCha12Rng::seed_from_u64(seed),
            None => ChaCha12Rng::from_rng(rand::rngs::OsRng).expect("os entropy"),
        };
        Ok(Self {
            records: RwLock::new(records),
            journal: Mutex::new(journal),
            mint_rng: Mutex::new(rng),
            options,
        })
    }

    pub fn serial_count(&self) -> usize {
        self.records.read().unwrap().len()
    }

    /// Mint a note, persist its ledger entry, and return the payload for
    /// the client.
    pub fn mint_note(
        &self,
        n: u32,
        mu: Option<f64>,
        cap_t: Option<u32>,
        params: Option<SecurityParams>,
    ) -> Result<MintedNote, ServiceError> {
        let params = params.unwrap_or(self.options.default_params);
        let mu = mu.unwrap_or(self.options.default_mu);
        let cap_t = cap_t.unwrap_or(self.options.default_cap_t);
        let record = {
            let mut rng = self.mint_rng.lock().unwrap();
            mint(n, mu, params, cap_t, &mut *rng)?.0
        };
        let note = MintedNote {
            serial: record.serial.to_string(),
            n,
            mu,
            blocks_hex: blocks_to_hex(record.secrets()),
        };
        {
            let mut journal = self.journal.lock().unwrap();
            journal.append(&JournalLine::Mint(encode_record(&record)))?;
        }
        self.records
            .write()
            .unwrap()
            .insert(note.serial.clone(), Arc::new(Mutex::new(record)));
        Ok(note)
    }

    fn lookup(&self, serial: &str) -> Option<Arc<Mutex<BankRecord>>> {
        self.records.read().unwrap().get(serial).cloned()
    }

    /// Verify a claim: evaluate against the record, persist the mutation,
    /// then apply it. The record's mutex spans the whole sequence, so
    /// overlapping claims on one serial observe a total order and at most
    /// one of them can consume any given state.
    pub fn verify_claim(&self, claim: &VerificationClaim) -> Result<Verdict, ServiceError> {
        let Some(slot) = self.lookup(claim.serial.as_str()) else {
            return Ok(Verdict::unknown_serial());
        };
        let mut record = slot.lock().unwrap();
        let outcome = bank_evaluate(&record, claim)?;
        let entry = MutationEntry {
            format_version: FORMAT_VERSION,
            serial: claim.serial.to_string(),
            attempt_nonce: claim.attempt_nonce.clone(),
            indices: outcome.marked_indices.clone(),
            verdict: outcome.verdict,
            counter_s: outcome.new_counter,
        };
        {
            let mut journal = self.journal.lock().unwrap();
            // persistence failure leaves the record untouched
            journal.append(&JournalLine::Verify(entry))?;
        }
        bank_apply(&mut record, &outcome);
        Ok(outcome.verdict)
    }

    /// The rates a holder needs: (η − ε, β + δ) of the note's parameters.
    pub fn thresholds(&self, serial: &str) -> Option<(f64, f64)> {
        let slot = self.lookup(serial)?;
        let record = slot.lock().unwrap();
        Some((record.params.efficiency_rate(), record.params.error_rate_cap()))
    }

    /// Snapshot of one record, for inspection and tests.
    pub fn record_snapshot(&self, serial: &str) -> Option<BankRecord> {
        let slot = self.lookup(serial)?;
        let record = slot.lock().unwrap();
        Some(record.clone())
    }

    /// Handle one wire line and produce the response line.
    pub fn handle_line(&self, line: &str) -> String {
        let msg = match WireMessage::decode(line) {
            Ok(m) => m,
            Err(err) => {
                return WireMessage::Error {
                    request_id: salvage_request_id(line),
                    reason: format!("malformed message: {err}"),
                }
                .encode();
            }
        };
        self.handle_message(msg).encode()
    }

    fn handle_message(&self, msg: WireMessage) -> WireMessage {
        match msg {
            WireMessage::MintReq { request_id, n, mu, cap_t, params } => {
                let params = match params.map(SecurityParams::try_from).transpose() {
                    Ok(p) => p,
                    Err(err) => {
                        return WireMessage::Error {
                            request_id: Some(request_id),
                            reason: err.to_string(),
                        }
                    }
                };
                match self.mint_note(n, mu, cap_t, params) {
                    Ok(note) => WireMessage::MintResp {
                        request_id,
                        serial: note.serial,
                        n: note.n,
                        mu: note.mu,
                        blocks_hex: note.blocks_hex,
                    },
                    Err(err) => WireMessage::Error {
                        request_id: Some(request_id),
                        reason: err.to_string(),
                    },
                }
            }
            WireMessage::VerifyReq { request_id, serial, attempt_nonce, l, l_conclusive, triplets } => {
                let claim =
                    match claim_from_wire(serial.clone(), attempt_nonce, l, l_conclusive, &triplets)
                    {
                        Ok(c) => c,
                        Err(err) => {
                            return WireMessage::Error {
                                request_id: Some(request_id),
                                reason: format!("malformed claim: {err}"),
                            }
                        }
                    };
                match self.verify_claim(&claim) {
                    Ok(verdict) => WireMessage::VerifyResp {
                        request_id,
                        serial,
                        accepted: verdict.accepted,
                        reason: verdict.reason,
                        errors_observed: verdict.errors_observed,
                        threshold_used: verdict.threshold_used,
                    },
                    Err(ServiceError::Protocol(err)) => WireMessage::Error {
                        request_id: Some(request_id),
                        reason: format!("rejected claim: {err}"),
                    },
                    Err(err) => WireMessage::Error {
                        request_id: Some(request_id),
                        reason: err.to_string(),
                    },
                }
            }
            WireMessage::ThresholdsReq { request_id, serial } => match self.thresholds(&serial) {
                Some((efficiency_rate, error_rate_cap)) => WireMessage::ThresholdsResp {
                    request_id,
                    serial,
                    efficiency_rate,
                    error_rate_cap,
                },
                None => WireMessage::Error {
                    request_id: Some(request_id),
                    reason: format!("unknown serial {serial}"),
                },
            },
            // responses arriving at the server are a client bug
            other => WireMessage::Error {
                request_id: other.request_id().map(str::to_string),
                reason: format!("unexpected message type for a request: {other:?}"),
            },
        }
    }
}

impl std::fmt::Debug for Bank {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Bank").field("serials", &self.serial_count()).finish()
    }
}
