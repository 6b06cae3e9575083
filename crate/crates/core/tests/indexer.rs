mod common;
mod support;

use std::collections::{BTreeMap, BTreeSet};
use std::fs;

use proptest::prelude::*;
use rand::Rng;
use splitrank::indexer::{
    build_shards, compute_member_vectors, dequantize, ingest_members, quantize, shard_of, write_shards,
    ForwardIndex, InvertedIndex, MemberProfile, QuantScheme, ShardIndex, VectorPayload,
};
use splitrank::nncore::{cosine, CrossKind};
use splitrank::Error;
use support::*;

fn write_lines(lines: &[&str]) -> (tempfile::TempDir, std::path::PathBuf) {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("corpus.jsonl");
    fs::write(&path, lines.join("\n")).unwrap();
    (dir, path)
}

#[test]
fn ingest_reads_every_profile() {
    let (_d, p) = write_lines(&[
        r#"{"uid": 1, "fields": {"1": ["java"]}}"#,
        r#"{"uid": 2, "fields": {"1": [], "2": ["engineer"]}}"#,
        r#"{"uid": 9, "fields": {}}"#,
    ]);
    let ms = ingest_members(&p).unwrap();
    assert_eq!(ms.iter().map(|m| m.uid).collect::<Vec<_>>(), [1, 2, 9]);
    assert_eq!(ms[1].fields[&2], ["engineer"]);
}

#[test]
fn ingest_rejects_duplicate_uids_by_name() {
    let (_d, p) = write_lines(&[r#"{"uid": 77, "fields": {}}"#, r#"{"uid": 77, "fields": {}}"#]);
    let err = ingest_members(&p).unwrap_err().to_string();
    assert!(err.contains("77") && err.contains("duplicate"), "{err}");
}

#[test]
fn ingest_reports_the_malformed_line_number() {
    let (_d, p) = write_lines(&[r#"{"uid": 1, "fields": {}}"#, r#"{"uid": 2, "fields": {}}"#, "{not json"]);
    let err = ingest_members(&p).unwrap_err().to_string();
    assert!(err.contains(":3:"), "{err}");
}

#[test]
fn empty_corpus_ingests_but_does_not_build() {
    let (_d, p) = write_lines(&[]);
    let ms = ingest_members(&p).unwrap();
    assert!(ms.is_empty());
    assert!(matches!(build_shards(&ms, &BTreeMap::new(), 1, 1, QuantScheme::Int8), Err(Error::Build(_))));
}

#[test]
fn member_vectors_do_not_depend_on_batch_size() {
    let data = small_data(31);
    let dep = Deployment::new(random_model(&data, CrossKind::Cosine, 3), &data.members[..100], 1);
    let one = compute_member_vectors(&dep.member, &dep.members, 1).unwrap();
    let many = compute_member_vectors(&dep.member, &dep.members, 64).unwrap();
    assert_eq!(one.len(), 100);
    for (uid, v) in &one {
        let w = &many[uid];
        assert!(v.iter().zip(w).all(|(a, b)| a.to_bits() == b.to_bits()), "uid {uid}");
    }
    assert!(compute_member_vectors(&dep.member, &dep.members, 0).is_err());
}

#[test]
fn member_vectors_match_the_loop_oracle() {
    let data = small_data(32);
    let dep = Deployment::new(random_model(&data, CrossKind::Cosine, 4), &data.members, 1);
    for m in dep.members.iter().take(200) {
        let inputs = dep.model.vocab.member.encode(&dep.model.spec.member_arm, &m.fields);
        let want = common::oracle_arm(&dep.model, false, &inputs);
        let got = &dep.vectors[&m.uid];
        for (a, b) in got.iter().zip(&want) {
            assert!((*a as f64 - b).abs() <= 1e-6, "uid {}: {a} vs {b}", m.uid);
        }
    }
}

#[test]
fn empty_member_gets_the_zero_aggregate_output() {
    let data = small_data(33);
    let dep = Deployment::new(random_model(&data, CrossKind::Cosine, 5), &data.members, 1);
    let empty = MemberProfile { uid: 999_999, fields: BTreeMap::new() };
    let v = compute_member_vectors(&dep.member, &[empty], 4).unwrap();
    let agg = vec![0f32; dep.member.spec.input_width()];
    assert_eq!(v[&999_999], dep.member.weights.dense_forward(&dep.member.spec, &agg));
}

#[test]
fn quantize_zero_vector_is_exact() {
    let q = quantize(&[0.0; 16]).unwrap();
    assert_eq!(q.scale, 0.0);
    assert!(q.values.iter().all(|&v| v == 0));
    assert_eq!(dequantize(&q), vec![0.0; 16]);
}

#[test]
fn quantize_boundary_maps_to_127() {
    for s in [0.5f32, 1.0, 0.25, 3.0e-3, 17.0] {
        let q = quantize(&[127.0 * s, 0.0, -127.0 * s]).unwrap();
        assert_eq!(q.values, [127, 0, -127]);
        assert!((q.scale - s).abs() <= s * 1e-6, "{} vs {s}", q.scale);
    }
}

#[test]
fn quantize_rejects_non_finite() {
    assert!(matches!(quantize(&[1.0, f32::NAN]), Err(Error::Input(_))));
    assert!(matches!(quantize(&[f32::INFINITY]), Err(Error::Input(_))));
}

#[test]
fn quantize_error_bound_on_random_vectors() {
    let mut r = rng(34);
    for i in 0..1000 {
        let dim = r.gen_range(1..96);
        let mag = 10f32.powi(r.gen_range(-4..4));
        let v: Vec<f32> = (0..dim).map(|_| r.gen_range(-1.0..1.0) * mag).collect();
        let q = quantize(&v).unwrap();
        let back = dequantize(&q);
        for (a, b) in v.iter().zip(&back) {
            assert!((a - b).abs() <= q.scale / 2.0, "vector {i}: {a} -> {b}, scale {}", q.scale);
        }
    }
}

#[test]
fn int8_score_drift_is_small_at_dim_64() {
    let data = small_data(35);
    let model = trained_model(&data, 2);
    let dep = Deployment::new(model, &data.members, 1);
    assert_eq!(dep.cross.member_dim, 64);
    let mut r = rng(36);
    let mut worst = 0f32;
    for v in dep.vectors.values() {
        let q = random_unit(&mut r, 64);
        let exact = cosine(&q, v);
        let approx = cosine(&q, &dequantize(&quantize(v).unwrap()));
        worst = worst.max((exact - approx).abs());
    }
    assert!(worst <= 0.01, "max drift {worst}");
}

#[test]
fn shard_assignment_is_uid_modulo() {
    assert_eq!(shard_of(5, 2), 1);
    assert_eq!(shard_of(5, 1), 0);
    assert_eq!(shard_of(12, 4), 0);
    let data = small_data(37);
    let dep = Deployment::new(random_model(&data, CrossKind::Cosine, 5), &data.members, 2);
    let one = dep.shards(1, QuantScheme::Int8);
    assert_eq!(one.len(), 1);
    assert_eq!(one[0].forward.len(), data.members.len());
    let four = dep.shards(4, QuantScheme::Int8);
    let mut seen = BTreeSet::new();
    for s in &four {
        for r in s.forward.records() {
            assert_eq!(shard_of(r.uid, 4), s.meta.shard_id);
            assert!(seen.insert(r.uid), "uid {} in two shards", r.uid);
            assert_eq!(r.field_version, 2);
        }
    }
    assert_eq!(seen, data.members.iter().map(|m| m.uid).collect());
}

#[test]
fn postings_are_complete_and_strictly_increasing() {
    let data = small_data(38);
    let dep = Deployment::new(random_model(&data, CrossKind::Cosine, 5), &data.members, 1);
    for shard in dep.shards(3, QuantScheme::Int8) {
        let mut expected: BTreeMap<(u16, String), BTreeSet<u64>> = BTreeMap::new();
        for r in shard.forward.records() {
            for (f, toks) in &r.stored {
                for t in toks {
                    expected.entry((*f, t.clone())).or_default().insert(r.uid);
                }
            }
        }
        let mut n_terms = 0;
        for ((f, t), uids) in shard.inverted.terms() {
            n_terms += 1;
            assert!(uids.windows(2).all(|w| w[0] < w[1]), "term {f}:{t}");
            let want: Vec<u64> = expected[&(*f, t.clone())].iter().copied().collect();
            assert_eq!(uids, want.as_slice());
        }
        assert_eq!(n_terms, expected.len());
    }
}

#[test]
fn missing_vector_is_a_build_error() {
    let data = small_data(39);
    let dep = Deployment::new(random_model(&data, CrossKind::Cosine, 5), &data.members, 1);
    let mut vectors = dep.vectors.clone();
    let gone = data.members[17].uid;
    vectors.remove(&gone);
    match build_shards(&data.members, &vectors, 2, 1, QuantScheme::Int8) {
        Err(Error::Build(m)) => assert!(m.contains(&gone.to_string()), "{m}"),
        other => panic!("expected build error, got {other:?}"),
    }
    assert!(build_shards(&data.members, &dep.vectors, 0, 1, QuantScheme::Int8).is_err());
    assert!(build_shards(&data.members, &dep.vectors, 1, 0, QuantScheme::Int8).is_err());
}

#[test]
fn shard_files_round_trip_bit_exactly() {
    let data = small_data(40);
    let dep = Deployment::new(random_model(&data, CrossKind::Cosine, 5), &data.members, 1);
    for scheme in [QuantScheme::Int8, QuantScheme::None] {
        let shards = dep.shards(2, scheme);
        let dir = tempfile::tempdir().unwrap();
        write_shards(dir.path(), &shards).unwrap();
        for s in &shards {
            let sd = dir.path().join(format!("shard{}", s.meta.shard_id));
            let back = ShardIndex::read(&sd).unwrap();
            assert_eq!(&back, s);
            assert_eq!(back.forward.to_bytes().unwrap(), fs::read(sd.join("forward.fwdx")).unwrap());
            assert_eq!(back.inverted.to_bytes().unwrap(), fs::read(sd.join("inverted.invx")).unwrap());
        }
    }
}

#[test]
fn forward_file_layout() {
    let p = MemberProfile {
        uid: 0x0102,
        fields: BTreeMap::from([(1, vec!["go".to_string()])]),
    };
    let vectors = BTreeMap::from([(0x0102u64, vec![1.0f32, -0.5])]);
    let s = build_shards(&[p], &vectors, 1, 7, QuantScheme::Int8).unwrap().remove(0);
    let b = s.forward.to_bytes().unwrap();
    assert_eq!(&b[..4], b"FWDX");
    assert_eq!(b[4], 1);
    assert_eq!(&b[5..7], &[2, 0]);
    assert_eq!(b[7], 1);
    assert_eq!(&b[8..12], &[1, 0, 0, 0]);
    assert_eq!(&b[12..20], &0x0102u64.to_le_bytes());
    assert_eq!(&b[20..22], &[7, 0]);
    assert_eq!(&b[22..26], &(1.0f32 / 127.0).to_le_bytes());
    assert_eq!(b[26] as i8, 127);
    assert_eq!(b[27] as i8, -64);
    assert_eq!(&b[28..30], &[1, 0]);
    assert_eq!(&b[30..32], &[1, 0]);
    assert_eq!(&b[32..34], &[1, 0]);
    assert_eq!(&b[34..36], &[2, 0]);
    assert_eq!(&b[36..38], b"go");
    assert_eq!(b.len(), 38);

    let inv = s.inverted.to_bytes().unwrap();
    assert_eq!(&inv[..4], b"INVX");
    assert_eq!(&inv[4..8], &[1, 0, 0, 0]);
    assert_eq!(&inv[8..10], &[4, 0]);
    assert_eq!(&inv[10..14], b"1:go");
    assert_eq!(&inv[14..18], &[1, 0, 0, 0]);
    assert_eq!(&inv[18..26], &0x0102u64.to_le_bytes());
}

#[test]
fn corrupt_index_files_are_format_errors() {
    let data = small_data(41);
    let dep = Deployment::new(random_model(&data, CrossKind::Cosine, 5), &data.members[..20], 1);
    let s = dep.shards(1, QuantScheme::Int8).remove(0);
    let fwd = s.forward.to_bytes().unwrap();
    let inv = s.inverted.to_bytes().unwrap();
    for cut in (0..fwd.len()).step_by(7) {
        assert!(matches!(ForwardIndex::from_bytes(&fwd[..cut], "f"), Err(Error::Format { .. })));
    }
    for cut in (0..inv.len()).step_by(5) {
        assert!(matches!(InvertedIndex::from_bytes(&inv[..cut], "i"), Err(Error::Format { .. })));
    }
    let mut bad = fwd.clone();
    bad[7] = 9;
    assert!(matches!(ForwardIndex::from_bytes(&bad, "f"), Err(Error::Format { .. })));
}

#[test]
fn out_of_order_forward_records_are_rejected() {
    let members: Vec<MemberProfile> = [1u64, 2].iter().map(|&uid| MemberProfile { uid, fields: BTreeMap::new() }).collect();
    let vectors = BTreeMap::from([(1u64, vec![0.5f32, 0.25]), (2, vec![1.0, 0.0])]);
    let s = build_shards(&members, &vectors, 1, 1, QuantScheme::Int8).unwrap().remove(0);
    let mut b = s.forward.to_bytes().unwrap();
    // Header is 12 bytes; each record is uid(8) + version(2) + scale(4) + 2 codes + group count(2).
    let second = 12 + 18;
    b[second..second + 8].copy_from_slice(&0u64.to_le_bytes());
    match ForwardIndex::from_bytes(&b, "f") {
        Err(Error::Format { message, .. }) => assert!(message.contains("ordered"), "{message}"),
        other => panic!("expected format error, got {other:?}"),
    }
}

#[test]
fn float_scheme_stores_vectors_verbatim() {
    let data = small_data(42);
    let dep = Deployment::new(random_model(&data, CrossKind::Cosine, 5), &data.members, 1);
    let s = dep.shards(1, QuantScheme::None).remove(0);
    for r in s.forward.records() {
        match &r.vector {
            VectorPayload::Float(v) => assert_eq!(v, &dep.vectors[&r.uid]),
            other => panic!("unexpected payload {other:?}"),
        }
    }
}

proptest! {
    #[test]
    fn quantization_bound_holds(v in proptest::collection::vec(-1e6f32..1e6, 1..128)) {
        let q = quantize(&v).unwrap();
        prop_assert!(q.values.iter().all(|&c| c >= -127));
        for (a, b) in v.iter().zip(dequantize(&q)) {
            prop_assert!((a - b).abs() <= q.scale / 2.0);
        }
    }
}
