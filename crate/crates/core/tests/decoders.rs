//! Decoders must reject damaged input with an error, never a panic.

use prefrank::compute::checkpoint::{Checkpoint, CheckpointError};
use prefrank::config::RunConfig;
use prefrank::dataio::{self, DataError, InputFormat};
use prefrank::model::{Model, ModelConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn sample_checkpoint() -> Checkpoint {
    let cfg = ModelConfig::with_total_dim(3, 6).unwrap();
    let (_, params) = Model::init(cfg, 4, 5, 1).unwrap();
    Checkpoint {
        config: RunConfig::default().to_text(),
        num_users: 4,
        num_items: 5,
        params,
    }
}

fn sample_corpus() -> String {
    let raw: Vec<_> = (0..6)
        .flat_map(|u| (0..5).filter(move |i| (u + i) % 3 != 0).map(move |i| (u, i)))
        .map(|(u, i)| dataio::RawInteraction::new(format!("u{u}"), format!("i{i}")))
        .collect();
    let corpus = dataio::kcore_filter(&raw, 1).unwrap();
    dataio::encode_corpus(&dataio::split(&corpus, 0.2, 0.125, 4).unwrap())
}

#[test]
fn every_checkpoint_prefix_is_rejected() {
    let bytes = sample_checkpoint().encode();
    for end in 0..bytes.len() {
        assert!(
            Checkpoint::decode(&bytes[..end]).is_err(),
            "prefix of {end} bytes decoded"
        );
    }
}

#[test]
fn corrupted_checkpoints_never_panic() {
    let ck = sample_checkpoint();
    let bytes = ck.encode();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..2000 {
        let mut bad = bytes.clone();
        for _ in 0..rng.gen_range(1..4) {
            let at = rng.gen_range(0..bad.len());
            bad[at] = rng.gen();
        }
        if let Ok(decoded) = Checkpoint::decode(&bad) {
            assert_eq!(decoded.encode(), bad);
        }
    }
}

#[test]
fn oversized_shapes_are_rejected() {
    let mut bytes = Vec::new();
    bytes.extend_from_slice(b"PRFRCKPT");
    bytes.extend_from_slice(&1u32.to_le_bytes());
    bytes.extend_from_slice(&0u32.to_le_bytes());
    for v in [1u64, 1, 0] {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    bytes.extend_from_slice(&1u32.to_le_bytes());
    bytes.extend_from_slice(&1u16.to_le_bytes());
    bytes.extend_from_slice(b"w");
    bytes.push(0);
    let header = bytes.clone();
    // Zero elements but an unrepresentable column count.
    bytes.extend_from_slice(&0u64.to_le_bytes());
    bytes.extend_from_slice(&(u64::MAX / 2 + 7).to_le_bytes());
    assert!(matches!(Checkpoint::decode(&bytes), Err(CheckpointError::Corrupt(_))));
    // A payload far larger than the input.
    let mut bytes = header;
    bytes.extend_from_slice(&(1u64 << 40).to_le_bytes());
    bytes.extend_from_slice(&(1u64 << 40).to_le_bytes());
    assert!(matches!(Checkpoint::decode(&bytes), Err(CheckpointError::Truncated(_))));
}

#[test]
fn corpus_prefixes_and_edits_never_panic() {
    let text = sample_corpus();
    let full = dataio::decode_corpus(&text).unwrap();
    assert_eq!(dataio::encode_corpus(&full), text);
    for end in (0..text.len()).filter(|&e| text.is_char_boundary(e)) {
        if let Ok(c) = dataio::decode_corpus(&text[..end]) {
            // Only a cut right at a final newline can still be complete.
            assert_eq!(dataio::encode_corpus(&c).trim_end(), text[..end].trim_end());
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let bytes = text.as_bytes();
    for _ in 0..2000 {
        let mut bad = bytes.to_vec();
        let at = rng.gen_range(0..bad.len());
        bad[at] = b" 0123456789\nTVSx-"[rng.gen_range(0..17)];
        let _ = dataio::decode_corpus(&String::from_utf8_lossy(&bad));
    }
}

#[test]
fn corpus_header_errors_are_specific() {
    let text = sample_corpus();
    assert!(matches!(dataio::decode_corpus("hello\n"), Err(DataError::MissingMagic)));
    let v2 = text.replacen("v1", "v2", 1);
    assert!(matches!(dataio::decode_corpus(&v2), Err(DataError::VersionMismatch { found }) if found == "v2"));
}

#[test]
fn raw_inputs_in_both_formats_agree() {
    let pairs = "u1 a\nu1 b\n\nu2 b\n";
    let adjacency = "u1 a b\nu2 b\n";
    let a = dataio::parse_interactions(pairs, InputFormat::Pairs).unwrap();
    let b = dataio::parse_interactions(adjacency, InputFormat::Adjacency).unwrap();
    assert_eq!(a, b);
    assert!(matches!(
        dataio::parse_interactions("u1 a\nlonely\n", InputFormat::Pairs),
        Err(DataError::Malformed { line: 2, .. })
    ));
    assert!(matches!(
        dataio::parse_interactions("u1 a b c\n", InputFormat::Pairs),
        Err(DataError::Malformed { line: 1, .. })
    ));
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for _ in 0..500 {
        let s: String = (0..rng.gen_range(0..40))
            .map(|_| b" \t\nab1"[rng.gen_range(0..6)] as char)
            .collect();
        for f in [InputFormat::Pairs, InputFormat::Adjacency] {
            let _ = dataio::parse_interactions(&s, f);
        }
    }
}

#[test]
fn config_parser_rejects_damage() {
    let text = RunConfig::default().to_text();
    assert_eq!(RunConfig::parse(&text).unwrap().to_text(), text);
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    for _ in 0..2000 {
        let mut bad = text.clone().into_bytes();
        let at = rng.gen_range(0..bad.len());
        bad[at] = b"=# \n-x0."[rng.gen_range(0..8)];
        let _ = RunConfig::parse(&String::from_utf8_lossy(&bad));
    }
}
