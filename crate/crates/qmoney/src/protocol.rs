//! Bank and holder state machines for the banknote lifecycle.
//!
//! The bank mints a note as N four-bit secrets plus bookkeeping (usage
//! register, attempt counter, verification cap). The holder measures a
//! random fresh subset of states, keeps the conclusive triplets and submits
//! them as a claim; the bank replays the claim against its secrets and
//! issues a verdict.
//!
//! Cloning of the simulated states is emulated away rather than physically
//! prevented: a [`BanknoteHandle`] only exposes consume-once measurement and
//! never the underlying bits. Unforgeability itself is analytic (see
//! [`crate::security`]); the register is what stops double-spending of
//! individual states.

use crate::photonics::{self, BlockBits, DeviceModel, Matching, MeasurementOutcome, Pair, PulseBlock};
use crate::security::{min_conclusive_threshold, SecurityParams};
use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{Signed, ToPrimitive};
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ProtocolError {
    #[error("a banknote needs at least one state")]
    ZeroStates,
    #[error("requested {requested} fresh states but only {available} remain")]
    InsufficientFreshStates { requested: u64, available: u64 },
    #[error("state index {0} out of range")]
    IndexOutOfRange(u32),
    #[error("state index {0} was not selected for measurement")]
    NotSelected(u32),
    #[error("state index {0} has already been measured")]
    AlreadyMeasured(u32),
    #[error("claim serial {claim} does not match record serial {record}")]
    SerialMismatch { claim: String, record: String },
    #[error("malformed claim: {0}")]
    MalformedClaim(String),
    #[error(transparent)]
    Photonics(#[from] photonics::PhotonicsError),
}

/// Fixed-length bit set used for usage registers and consumption tracking.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Bitmap {
    bytes: Vec<u8>,
    len: usize,
}

impl Bitmap {
    pub fn new(len: usize) -> Self {
        Self { bytes: vec![0; len.div_ceil(8)], len }
    }

    pub fn from_bytes(bytes: Vec<u8>, len: usize) -> Option<Self> {
        if bytes.len() != len.div_ceil(8) {
            return None;
        }
        // spare bits past `len` must be zero
        if !len.is_multiple_of(8) {
            if let Some(last) = bytes.last() {
                if last >> (len % 8) != 0 {
                    return None;
                }
            }
        }
        Some(Self { bytes, len })
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn get(&self, idx: usize) -> bool {
        debug_assert!(idx < self.len);
        self.bytes[idx / 8] >> (idx % 8) & 1 == 1
    }

    pub fn set(&mut self, idx: usize) {
        debug_assert!(idx < self.len);
        self.bytes[idx / 8] |= 1 << (idx % 8);
    }

    pub fn count_ones(&self) -> usize {
        self.bytes.iter().map(|b| b.count_ones() as usize).sum()
    }

    pub fn as_bytes(&self) -> &[u8] {
        &self.bytes
    }
}

/// Unique banknote identifier.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Serial(String);

impl Serial {
    pub fn generate<R: Rng + ?Sized>(rng: &mut R) -> Self {
        Self(format!("{:032x}", rng.gen::<u128>()))
    }

    pub fn from_string(s: String) -> Self {
        Self(s)
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl std::fmt::Display for Serial {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

/// Bank-side ledger entry for one banknote.
#[derive(Debug, Clone, PartialEq)]
pub struct BankRecord {
    pub serial: Serial,
    secrets: Vec<BlockBits>,
    register: Bitmap,
    counter_s: u32,
    pub cap_t: u32,
    pub params: SecurityParams,
    pub mu: f64,
    pub created_at: u64,
}

impl BankRecord {
    pub fn n(&self) -> u32 {
        self.secrets.len() as u32
    }

    pub fn secret(&self, index: u32) -> Option<BlockBits> {
        self.secrets.get(index as usize).copied()
    }

    pub fn secrets(&self) -> &[BlockBits] {
        &self.secrets
    }

    pub fn register(&self) -> &Bitmap {
        &self.register
    }

    pub fn counter_s(&self) -> u32 {
        self.counter_s
    }

    /// Rebuild a record from persisted parts. Used by ledger recovery.
    #[allow(clippy::too_many_arguments)]
    pub fn from_parts(
        serial: Serial,
        secrets: Vec<BlockBits>,
        register: Bitmap,
        counter_s: u32,
        cap_t: u32,
        params: SecurityParams,
        mu: f64,
        created_at: u64,
    ) -> Result<Self, ProtocolError> {
        if secrets.is_empty() {
            return Err(ProtocolError::ZeroStates);
        }
        if register.len() != secrets.len() {
            return Err(ProtocolError::MalformedClaim(
                "register length does not match secret count".into(),
            ));
        }
        Ok(Self { serial, secrets, register, counter_s, cap_t, params, mu, created_at })
    }

    /// Apply a persisted mutation during ledger replay: mark the given
    /// indices used and set the attempt counter.
    pub fn replay_mutation(&mut self, indices: &[u32], counter_s: u32) -> Result<(), ProtocolError> {
        for &k in indices {
            if k >= self.n() {
                return Err(ProtocolError::IndexOutOfRange(k));
            }
            self.register.set(k as usize);
        }
        self.counter_s = counter_s;
        Ok(())
    }
}

/// Holder-side view of a banknote: the states themselves are opaque and can
/// each be measured at most once.
#[derive(Debug, Clone)]
pub struct BanknoteHandle {
    pub serial: Serial,
    pub mu: f64,
    blocks: Vec<BlockBits>,
    selected: Bitmap,
    measured: Bitmap,
}

impl BanknoteHandle {
    /// Rebuild a handle from stored state. `consumed` marks indices that
    /// were already selected and measured in earlier sessions.
    pub fn from_parts(serial: Serial, mu: f64, blocks: Vec<BlockBits>, consumed: Bitmap) -> Self {
        let measured = consumed.clone();
        Self { serial, mu, blocks, selected: consumed, measured }
    }

    pub fn n(&self) -> u32 {
        self.blocks.len() as u32
    }

    /// Number of states never selected for measurement.
    pub fn remaining(&self) -> u64 {
        self.n() as u64 - self.selected.count_ones() as u64
    }

    pub fn consumed(&self) -> &Bitmap {
        &self.selected
    }

    /// Choose `l` distinct fresh indices uniformly at random (without
    /// replacement) and mark them consumed.
    pub fn select_subset<R: Rng + ?Sized>(
        &mut self,
        l: u32,
        rng: &mut R,
    ) -> Result<Vec<u32>, ProtocolError> {
        let available = self.remaining();
        if (l as u64) > available {
            return Err(ProtocolError::InsufficientFreshStates {
                requested: l as u64,
                available,
            });
        }
        if l == 0 {
            return Ok(Vec::new());
        }
        let mut fresh: Vec<u32> =
            (0..self.n()).filter(|&k| !self.selected.get(k as usize)).collect();
        // partial Fisher-Yates: the first l slots end up a uniform sample
        for pos in 0..(l as usize) {
            let swap = rng.gen_range(pos..fresh.len());
            fresh.swap(pos, swap);
        }
        fresh.truncate(l as usize);
        for &k in &fresh {
            self.selected.set(k as usize);
        }
        Ok(fresh)
    }

    /// Measure the given previously-selected indices, drawing a matching
    /// uniformly per state, and collect the conclusive triplets into a
    /// claim. Each index is measurable exactly once.
    pub fn measure<R: Rng + ?Sized>(
        &mut self,
        indices: &[u32],
        dev: &DeviceModel,
        rng: &mut R,
    ) -> Result<VerificationClaim, ProtocolError> {
        for &k in indices {
            if k >= self.n() {
                return Err(ProtocolError::IndexOutOfRange(k));
            }
            if !self.selected.get(k as usize) {
                return Err(ProtocolError::NotSelected(k));
            }
            if self.measured.get(k as usize) {
                return Err(ProtocolError::AlreadyMeasured(k));
            }
        }
        let attempt_nonce = format!("{:032x}", rng.gen::<u128>());
        let mut triplets = Vec::new();
        for &k in indices {
            self.measured.set(k as usize);
            let block = PulseBlock { bits: self.blocks[k as usize], mu: self.mu };
            let matching = Matching::ALL[rng.gen_range(0..3usize)];
            if let MeasurementOutcome::Conclusive { pair, bit } =
                photonics::sample_outcome(&block, matching, dev, rng)
            {
                triplets.push(Triplet { index: k, pair, bit });
            }
        }
        let l_conclusive = triplets.len() as u64;
        Ok(VerificationClaim {
            serial: self.serial.clone(),
            attempt_nonce,
            triplets,
            l: indices.len() as u64,
            l_conclusive,
        })
    }
}

/// One conclusive answer: state index, measured pair encoding and parity bit.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Triplet {
    pub index: u32,
    pub pair: Pair,
    pub bit: bool,
}

/// The holder → bank message for one verification attempt.
#[derive(Debug, Clone, PartialEq)]
pub struct VerificationClaim {
    pub serial: Serial,
    pub attempt_nonce: String,
    pub triplets: Vec<Triplet>,
    /// States selected for this attempt.
    pub l: u64,
    /// Conclusive outcomes among them (must equal `triplets.len()`).
    pub l_conclusive: u64,
}

/// Why a claim was accepted or rejected.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum VerdictReason {
    Ok,
    EfficiencyShortfall,
    ErrorRateExceeded,
    ReusedIndex,
    AttemptsExhausted,
    UnknownSerial,
}

impl std::fmt::Display for VerdictReason {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            VerdictReason::Ok => "OK",
            VerdictReason::EfficiencyShortfall => "EFFICIENCY_SHORTFALL",
            VerdictReason::ErrorRateExceeded => "ERROR_RATE_EXCEEDED",
            VerdictReason::ReusedIndex => "REUSED_INDEX",
            VerdictReason::AttemptsExhausted => "ATTEMPTS_EXHAUSTED",
            VerdictReason::UnknownSerial => "UNKNOWN_SERIAL",
        };
        f.write_str(s)
    }
}

/// The bank's decision on a claim.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Verdict {
    pub accepted: bool,
    pub reason: VerdictReason,
    pub errors_observed: u64,
    /// Largest error count that would still have been accepted
    /// (0 when nothing could pass).
    pub threshold_used: u64,
}

impl Verdict {
    pub fn rejected(reason: VerdictReason) -> Self {
        Self { accepted: false, reason, errors_observed: 0, threshold_used: 0 }
    }

    pub fn unknown_serial() -> Self {
        Self::rejected(VerdictReason::UnknownSerial)
    }
}

/// Mint a banknote of `n` states: secrets drawn independently and uniformly
/// over the sixteen 4-bit strings, an all-zero usage register and a zeroed
/// attempt counter. Returns the bank record and the holder handle carrying
/// the same serial.
pub fn mint<R: Rng + ?Sized>(
    n: u32,
    mu: f64,
    params: SecurityParams,
    cap_t: u32,
    rng: &mut R,
) -> Result<(BankRecord, BanknoteHandle), ProtocolError> {
    if n == 0 {
        return Err(ProtocolError::ZeroStates);
    }
    let serial = Serial::generate(rng);
    let mut secrets = Vec::with_capacity(n as usize);
    for _ in 0..n {
        // 16 divides 2^64, so masking four bits keeps the draw uniform
        secrets.push(BlockBits::new((rng.gen::<u64>() & 0x0f) as u8).expect("nibble"));
    }
    let created_at = std::time::SystemTime::now()
        .duration_since(std::time::UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0);
    let record = BankRecord {
        serial: serial.clone(),
        secrets: secrets.clone(),
        register: Bitmap::new(n as usize),
        counter_s: 0,
        cap_t,
        params,
        mu,
        created_at,
    };
    let handle = BanknoteHandle {
        serial,
        mu,
        blocks: secrets,
        selected: Bitmap::new(n as usize),
        measured: Bitmap::new(n as usize),
    };
    Ok((record, handle))
}

/// Holder-side efficiency check: the attempt goes forward only if the
/// conclusive count reaches l_min = ceil((η − ε)·l).
pub fn holder_efficiency_check(claim: &VerificationClaim, params: &SecurityParams) -> bool {
    claim.l_conclusive >= min_conclusive_threshold(claim.l, params.eta, params.eps)
}

fn rational(x: f64) -> BigRational {
    BigRational::from_float(x).expect("finite rate")
}

/// Exact acceptance test for the error count: strictly fewer than
/// l′(β + δ) wrong answers pass, evaluated in exact rational arithmetic so
/// verdicts carry no float boundary ambiguity.
pub fn errors_within_threshold(errors: u64, l_conclusive: u64, beta: f64, delta: f64) -> bool {
    let cap = BigRational::from_integer(BigInt::from(l_conclusive)) * (rational(beta) + rational(delta));
    BigRational::from_integer(BigInt::from(errors)) < cap
}

/// Largest error count that still passes [`errors_within_threshold`]:
/// ceil(l′(β + δ)) − 1, or `None` when no count can pass.
pub fn error_count_threshold(l_conclusive: u64, beta: f64, delta: f64) -> Option<u64> {
    let cap = BigRational::from_integer(BigInt::from(l_conclusive)) * (rational(beta) + rational(delta));
    let ceil = cap.ceil().to_integer();
    if ceil.is_positive() {
        (ceil - 1u32).to_u64()
    } else {
        None
    }
}

/// Everything [`bank_verify`] would do to a record, computed without
/// touching it. Lets a caller persist the mutation before applying it.
#[derive(Debug, Clone, PartialEq)]
pub struct ClaimOutcome {
    pub verdict: Verdict,
    /// Register indices the claim consumes (empty on early rejection).
    pub marked_indices: Vec<u32>,
    /// Attempt counter after the claim.
    pub new_counter: u32,
}

/// Evaluate a claim against a record without mutating it.
///
/// Order of checks: attempt cap, bank-side efficiency re-check, register
/// reuse, then error counting against the exact threshold. The attempt
/// counter advances for every structurally valid claim regardless of the
/// verdict. Structurally invalid claims (duplicate or out-of-range indices,
/// inconsistent counts) are errors, not verdicts.
pub fn bank_evaluate(
    record: &BankRecord,
    claim: &VerificationClaim,
) -> Result<ClaimOutcome, ProtocolError> {
    if claim.serial != record.serial {
        return Err(ProtocolError::SerialMismatch {
            claim: claim.serial.to_string(),
            record: record.serial.to_string(),
        });
    }
    if claim.l_conclusive != claim.triplets.len() as u64 {
        return Err(ProtocolError::MalformedClaim(format!(
            "l_conclusive {} does not match triplet count {}",
            claim.l_conclusive,
            claim.triplets.len()
        )));
    }
    if claim.l_conclusive > claim.l {
        return Err(ProtocolError::MalformedClaim(
            "more conclusive outcomes than selected states".into(),
        ));
    }
    if claim.l > record.n() as u64 {
        return Err(ProtocolError::MalformedClaim(format!(
            "claim selects {} states but the note has {}",
            claim.l,
            record.n()
        )));
    }
    for t in &claim.triplets {
        if t.index >= record.n() {
            return Err(ProtocolError::MalformedClaim(format!(
                "triplet index {} out of range",
                t.index
            )));
        }
    }
    let mut sorted: Vec<u32> = claim.triplets.iter().map(|t| t.index).collect();
    sorted.sort_unstable();
    if sorted.windows(2).any(|w| w[0] == w[1]) {
        return Err(ProtocolError::MalformedClaim("duplicate index in claim".into()));
    }

    let new_counter = record.counter_s + 1;
    let reject = |reason| ClaimOutcome {
        verdict: Verdict::rejected(reason),
        marked_indices: Vec::new(),
        new_counter,
    };

    if record.counter_s >= record.cap_t {
        return Ok(reject(VerdictReason::AttemptsExhausted));
    }
    if !holder_efficiency_check(claim, &record.params) {
        return Ok(reject(VerdictReason::EfficiencyShortfall));
    }
    if claim.triplets.iter().any(|t| record.register.get(t.index as usize)) {
        return Ok(reject(VerdictReason::ReusedIndex));
    }

    let errors = claim
        .triplets
        .iter()
        .filter(|t| {
            let secret = record.secrets[t.index as usize];
            t.bit != secret.parity(t.pair)
        })
        .count() as u64;
    let accepted = errors_within_threshold(
        errors,
        claim.l_conclusive,
        record.params.beta,
        record.params.delta,
    );
    let threshold_used =
        error_count_threshold(claim.l_conclusive, record.params.beta, record.params.delta)
            .unwrap_or(0);
    let verdict = Verdict {
        accepted,
        reason: if accepted { VerdictReason::Ok } else { VerdictReason::ErrorRateExceeded },
        errors_observed: errors,
        threshold_used,
    };
    Ok(ClaimOutcome { verdict, marked_indices: sorted, new_counter })
}

/// Commit a previously evaluated claim to the record.
pub fn bank_apply(record: &mut BankRecord, outcome: &ClaimOutcome) {
    for &k in &outcome.marked_indices {
        record.register.set(k as usize);
    }
    record.counter_s = outcome.new_counter;
}

/// Evaluate a claim and commit its effects atomically (the caller holds the
/// record exclusively).
pub fn bank_verify(
    record: &mut BankRecord,
    claim: &VerificationClaim,
) -> Result<Verdict, ProtocolError> {
    let outcome = bank_evaluate(record, claim)?;
    bank_apply(record, &outcome);
    Ok(outcome.verdict)
}

/// Per-attempt statistics of one honest verification round.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrialStats {
    pub l: u64,
    pub l_conclusive: u64,
    pub errors: u64,
    pub error_rate: f64,
}

/// Run one full honest verification: select, measure, holder efficiency
/// check, then the bank verdict. A holder-side abort surfaces as an
/// [`VerdictReason::EfficiencyShortfall`] verdict without reaching the bank.
pub fn run_honest_verification<R: Rng + ?Sized>(
    record: &mut BankRecord,
    handle: &mut BanknoteHandle,
    l: u32,
    dev: &DeviceModel,
    params: &SecurityParams,
    rng: &mut R,
) -> Result<(Verdict, TrialStats), ProtocolError> {
    let indices = handle.select_subset(l, rng)?;
    let claim = handle.measure(&indices, dev, rng)?;
    let mut stats = TrialStats {
        l: claim.l,
        l_conclusive: claim.l_conclusive,
        errors: 0,
        error_rate: 0.0,
    };
    if !holder_efficiency_check(&claim, params) {
        return Ok((Verdict::rejected(VerdictReason::EfficiencyShortfall), stats));
    }
    let verdict = bank_verify(record, &claim)?;
    stats.errors = verdict.errors_observed;
    if stats.l_conclusive > 0 {
        stats.error_rate = stats.errors as f64 / stats.l_conclusive as f64;
    }
    Ok((verdict, stats))
}
