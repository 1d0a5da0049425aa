//! Bank daemon, verifier client, and the formats between them: the
//! newline-delimited JSON wire protocol, the append-only ledger journal,
//! and the banknote wallet file.

pub mod bank;
pub mod client;
pub mod journal;
pub mod server;
pub mod wire;

pub use bank::{Bank, BankOptions, MintedNote};
pub use client::{client_verify, request_mint, BanknoteFile};
pub use server::{serve_forever, Server};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum ServiceError {
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Protocol(#[from] crate::protocol::ProtocolError),
    #[error(transparent)]
    Security(#[from] crate::security::SecurityError),
    #[error("encoding error: {0}")]
    Encoding(#[from] serde_json::Error),
    #[error("malformed data: {0}")]
    Malformed(String),
    #[error("server reported: {0}")]
    Server(String),
    #[error("ledger corrupt at line {line}: {reason}")]
    LedgerCorrupt { line: usize, reason: String },
}
