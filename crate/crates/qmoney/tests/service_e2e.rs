//! End-to-end exercises of the bank daemon over real TCP connections: mint
//! and verify round trips, wire error handling, disjoint reuse, attempt
//! exhaustion, and concurrent overlapping claims.

use qmoney::photonics::DeviceModel;
use qmoney::protocol::VerdictReason;
use qmoney::service::wire::WireMessage;
use qmoney::service::{client_verify, request_mint, Bank, BankOptions, Server};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use std::io::{BufRead, BufReader, Write};
use std::net::TcpStream;
use std::sync::Arc;

fn start_server(dir: &std::path::Path, mint_seed: u64) -> (Arc<Bank>, Server) {
    let bank = Arc::new(
        Bank::open(
            &dir.join("ledger.jsonl"),
            BankOptions { mint_seed: Some(mint_seed), ..Default::default() },
        )
        .unwrap(),
    );
    let server = Server::start(Arc::clone(&bank), "127.0.0.1:0").unwrap();
    (bank, server)
}

#[test]
fn mint_then_verify_fresh_note_accepted() {
    let dir = tempfile::tempdir().unwrap();
    let (_bank, server) = start_server(dir.path(), 1);
    let endpoint = server.addr().to_string();
    let note_path = dir.path().join("note.qmn");
    let mut rng = ChaCha12Rng::seed_from_u64(2);

    let note = request_mint(&endpoint, 200_000, None, None, &note_path, &mut rng).unwrap();
    assert_eq!(note.n(), 200_000);

    // at l = 100k the acceptance margin is over four binomial sigma, so a
    // noisy-but-honest device passes essentially always
    let dev = DeviceModel::reference_abstract();
    let (verdict, stats) = client_verify(&endpoint, &note_path, 100_000, &dev, &mut rng).unwrap();
    assert!(verdict.accepted, "verdict: {verdict:?}");
    assert_eq!(stats.l, 100_000);
    assert!(stats.l_conclusive > 0);
    assert!(stats.error_rate > 0.0, "reference device has a nonzero flip rate");
    server.stop();
}

#[test]
fn disjoint_reuse_accepted_then_cap_exhausts() {
    let dir = tempfile::tempdir().unwrap();
    let (_bank, server) = start_server(dir.path(), 3);
    let endpoint = server.addr().to_string();
    let note_path = dir.path().join("note.qmn");
    let mut rng = ChaCha12Rng::seed_from_u64(4);

    request_mint(&endpoint, 6000, None, Some(2), &note_path, &mut rng).unwrap();
    let dev = DeviceModel::ideal();
    // two verifications over disjoint fresh subsets both pass
    let (v1, _) = client_verify(&endpoint, &note_path, 1000, &dev, &mut rng).unwrap();
    let (v2, _) = client_verify(&endpoint, &note_path, 1000, &dev, &mut rng).unwrap();
    assert!(v1.accepted && v2.accepted);
    // the cap (T = 2) is now exhausted
    let (v3, _) = client_verify(&endpoint, &note_path, 1000, &dev, &mut rng).unwrap();
    assert!(!v3.accepted);
    assert_eq!(v3.reason, VerdictReason::AttemptsExhausted);
    server.stop();
}

#[test]
fn dead_device_aborts_locally_without_submitting() {
    let dir = tempfile::tempdir().unwrap();
    let (bank, server) = start_server(dir.path(), 5);
    let endpoint = server.addr().to_string();
    let note_path = dir.path().join("note.qmn");
    let mut rng = ChaCha12Rng::seed_from_u64(6);

    let note = request_mint(&endpoint, 2000, None, None, &note_path, &mut rng).unwrap();
    let dev = DeviceModel::Abstract { eta_c: 0.0, e_flip: 0.0 };
    let (verdict, stats) = client_verify(&endpoint, &note_path, 1000, &dev, &mut rng).unwrap();
    assert!(!verdict.accepted);
    assert_eq!(verdict.reason, VerdictReason::EfficiencyShortfall);
    assert_eq!(stats.l_conclusive, 0);
    // the bank never saw a claim: attempt counter still zero
    let record = bank.record_snapshot(&note.serial).unwrap();
    assert_eq!(record.counter_s(), 0);
    // but the local wallet burned the selected states
    let reloaded = qmoney::service::BanknoteFile::load(&note_path).unwrap();
    assert_eq!(reloaded.remaining(), 1000);
    server.stop();
}

#[test]
fn wire_level_errors_and_unknown_serial() {
    let dir = tempfile::tempdir().unwrap();
    let (_bank, server) = start_server(dir.path(), 7);
    let endpoint = server.addr().to_string();

    let stream = TcpStream::connect(&endpoint).unwrap();
    let mut writer = stream.try_clone().unwrap();
    let mut reader = BufReader::new(stream);
    let mut send = |line: &str| -> WireMessage {
        writer.write_all(line.as_bytes()).unwrap();
        writer.write_all(b"\n").unwrap();
        writer.flush().unwrap();
        let mut resp = String::new();
        reader.read_line(&mut resp).unwrap();
        WireMessage::decode(resp.trim_end()).unwrap()
    };

    // malformed JSON
    assert!(matches!(send("{oops"), WireMessage::Error { .. }));
    // unknown type tag, request id still echoed
    match send(r#"{"type":"WAT","request_id":"id-9"}"#) {
        WireMessage::Error { request_id, .. } => assert_eq!(request_id.as_deref(), Some("id-9")),
        other => panic!("expected ERROR, got {other:?}"),
    }
    // verify against an unknown serial is a verdict, not a wire error
    match send(
        r#"{"type":"VERIFY_REQ","request_id":"id-10","serial":"missing","attempt_nonce":"n","l":10,"l_conclusive":0,"triplets":[]}"#,
    ) {
        WireMessage::VerifyResp { accepted, reason, .. } => {
            assert!(!accepted);
            assert_eq!(reason, VerdictReason::UnknownSerial);
        }
        other => panic!("expected VERIFY_RESP, got {other:?}"),
    }
    // thresholds for an unknown serial is an error
    assert!(matches!(
        send(r#"{"type":"THRESHOLDS_REQ","request_id":"id-11","serial":"missing"}"#),
        WireMessage::Error { .. }
    ));
    server.stop();
}

#[test]
fn thresholds_roundtrip_matches_bank_params() {
    let dir = tempfile::tempdir().unwrap();
    let (bank, server) = start_server(dir.path(), 8);
    let endpoint = server.addr().to_string();
    let mut rng = ChaCha12Rng::seed_from_u64(9);
    let note_path = dir.path().join("note.qmn");
    let note = request_mint(&endpoint, 16, None, None, &note_path, &mut rng).unwrap();

    let stream = TcpStream::connect(&endpoint).unwrap();
    let mut writer = stream.try_clone().unwrap();
    let mut reader = BufReader::new(stream);
    let req = WireMessage::ThresholdsReq { request_id: "t1".into(), serial: note.serial.clone() };
    writer.write_all(req.encode().as_bytes()).unwrap();
    writer.flush().unwrap();
    let mut resp = String::new();
    reader.read_line(&mut resp).unwrap();
    let WireMessage::ThresholdsResp { efficiency_rate, error_rate_cap, .. } =
        WireMessage::decode(resp.trim_end()).unwrap()
    else {
        panic!("expected THRESHOLDS_RESP");
    };
    let (want_eff, want_cap) = bank.thresholds(&note.serial).unwrap();
    assert_eq!(efficiency_rate, want_eff);
    assert_eq!(error_rate_cap, want_cap);
    server.stop();
}

#[test]
fn concurrent_verify_requests_over_tcp_accept_at_most_one() {
    let dir = tempfile::tempdir().unwrap();
    let (bank, server) = start_server(dir.path(), 10);
    let endpoint = server.addr().to_string();
    let mut rng = ChaCha12Rng::seed_from_u64(11);
    let note = bank.mint_note(64, None, None, None).unwrap();

    // craft two overlapping claims from independent holder copies (the
    // simulation boundary: a forger can copy the classical file)
    let blocks =
        qmoney::service::wire::blocks_from_hex(&note.blocks_hex, note.n as usize).unwrap();
    let make_claim = |seed: u64| {
        let mut handle = qmoney::protocol::BanknoteHandle::from_parts(
            qmoney::protocol::Serial::from_string(note.serial.clone()),
            note.mu,
            blocks.clone(),
            qmoney::protocol::Bitmap::new(note.n as usize),
        );
        let mut hrng = ChaCha12Rng::seed_from_u64(seed);
        let indices = handle.select_subset(40, &mut hrng).unwrap();
        handle.measure(&indices, &DeviceModel::ideal(), &mut hrng).unwrap()
    };
    let claims = [make_claim(rng.gen()), make_claim(rng.gen())];
    let overlap = claims[0]
        .triplets
        .iter()
        .any(|t| claims[1].triplets.iter().any(|u| u.index == t.index));
    assert!(overlap);

    let barrier = Arc::new(std::sync::Barrier::new(2));
    let endpoint = Arc::new(endpoint);
    let handles: Vec<_> = claims
        .into_iter()
        .enumerate()
        .map(|(i, claim)| {
            let endpoint = Arc::clone(&endpoint);
            let barrier = Arc::clone(&barrier);
            std::thread::spawn(move || {
                let stream = TcpStream::connect(endpoint.as_str()).unwrap();
                let mut writer = stream.try_clone().unwrap();
                let mut reader = BufReader::new(stream);
                let req =
                    qmoney::service::wire::claim_to_wire(format!("c{i}"), &claim);
                barrier.wait();
                writer.write_all(req.encode().as_bytes()).unwrap();
                writer.flush().unwrap();
                let mut resp = String::new();
                reader.read_line(&mut resp).unwrap();
                match WireMessage::decode(resp.trim_end()).unwrap() {
                    WireMessage::VerifyResp { accepted, reason, .. } => (accepted, reason),
                    other => panic!("expected VERIFY_RESP, got {other:?}"),
                }
            })
        })
        .collect();
    let results: Vec<(bool, VerdictReason)> =
        handles.into_iter().map(|h| h.join().unwrap()).collect();
    let accepted = results.iter().filter(|(a, _)| *a).count();
    assert!(accepted <= 1, "both overlapping claims accepted: {results:?}");
    assert!(results.iter().any(|(a, r)| *a || *r == VerdictReason::ReusedIndex));
    server.stop();
}
