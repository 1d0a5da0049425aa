//! Unforgeable quantum banknotes over hidden-matching retrieval games:
//! the full lifecycle in simulation.
//!
//! A bank encodes each banknote state as four phase-modulated coherent
//! pulses carrying a secret 4-bit string; a holder verifies a note by
//! measuring random states against randomly chosen pair matchings and
//! reporting the parity outcomes, and the bank accepts when enough
//! outcomes arrive and few enough disagree with its secrets. The crate
//! provides:
//!
//! - [`security`]: the closed-form completeness/forging bounds and the
//!   operating-point optimizer,
//! - [`photonics`]: measurement simulation (abstract and detector-level
//!   device models) with an exact calibration between them,
//! - [`protocol`]: minting, consume-once measurement, threshold
//!   verification, double-spend bookkeeping,
//! - [`service`]: a bank daemon with an append-only journal, a wire
//!   protocol and a verifier client,
//! - [`experiment`]: the seeded CSV harnesses that reproduce the reference
//!   operating points and curves.

pub mod experiment;
pub mod photonics;
pub mod protocol;
pub mod security;
pub mod service;
