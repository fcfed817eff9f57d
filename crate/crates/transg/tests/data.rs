//! Data-layer integration tests: on-disk round trips, windowing, manifest
//! validation, sampling statistics, and synthetic-data separability.

use std::fs;

use transg::graphpe::build_graph;
use transg::numerics::SeededRng;
use transg::skeledata::{
    generate_synthetic, generate_synthetic_with, load_dataset, load_dataset_opts, sample_batch,
    write_dataset, SamplingMode, SkeletonSequence,
};

fn tiny_graph() -> transg::graphpe::SkeletonGraphSpec {
    build_graph(4, &[(0, 1), (1, 2), (2, 3)]).unwrap()
}

#[test]
fn write_load_round_trip_preserves_coordinates() {
    let dir = tempfile::tempdir().unwrap();
    let spec = tiny_graph();
    let mut rng = SeededRng::new(3);
    let seqs = generate_synthetic(3, 4, 5, &spec, &mut rng).unwrap();
    let manifest = write_dataset(
        dir.path(),
        "round-trip",
        4,
        5,
        &spec.edges,
        0,
        &[("train", seqs.as_slice())],
    )
    .unwrap();
    // Disable root centering so loaded coordinates match the originals.
    let loaded = load_dataset_opts(&manifest, false).unwrap();
    assert_eq!(loaded.train.len(), seqs.len());
    for (a, b) in loaded.train.iter().zip(&seqs) {
        assert_eq!(a.identity, b.identity);
        for (x, y) in a.frames.iter().zip(&b.frames) {
            assert!((x - y).abs() < 1e-12, "coordinate drift {x} vs {y}");
        }
    }
}

#[test]
fn loading_root_centers_by_default() {
    let dir = tempfile::tempdir().unwrap();
    let spec = tiny_graph();
    let mut rng = SeededRng::new(4);
    let seqs = generate_synthetic(2, 2, 3, &spec, &mut rng).unwrap();
    let manifest = write_dataset(
        dir.path(),
        "centered",
        4,
        3,
        &spec.edges,
        0,
        &[("train", seqs.as_slice())],
    )
    .unwrap();
    let loaded = load_dataset(&manifest).unwrap();
    for s in &loaded.train {
        for t in 0..s.num_frames {
            for axis in 0..3 {
                assert_eq!(s.coord(t, 0, axis), 0.0, "root joint must sit at origin");
            }
        }
    }
}

#[test]
fn long_recordings_window_nonoverlapping_and_short_ones_drop() {
    let dir = tempfile::tempdir().unwrap();
    // One 7-frame recording (f = 3: two windows, one frame discarded) and one
    // 2-frame recording (dropped).
    let frame = "[[0,0,0],[1,0,0]]";
    let long: Vec<String> = (0..7).map(|t| frame.replace("1,0,0", &format!("1,{t},0"))).collect();
    let short: Vec<String> = (0..2).map(|_| frame.to_string()).collect();
    fs::write(
        dir.path().join("train.jsonl"),
        format!(
            "{{\"id\":1,\"frames\":[{}]}}\n{{\"id\":2,\"frames\":[{}]}}\n",
            long.join(","),
            short.join(",")
        ),
    )
    .unwrap();
    fs::write(
        dir.path().join("manifest.json"),
        r#"{"name":"w","J":2,"f":3,"edges":[[0,1]],"root_joint":0,"files":{"train":["train.jsonl"]}}"#,
    )
    .unwrap();
    let ds = load_dataset_opts(&dir.path().join("manifest.json"), false).unwrap();
    assert_eq!(ds.train.len(), 2);
    assert_eq!(ds.dropped_short, 1);
    // Second window starts at frame 3 of the recording.
    assert_eq!(ds.train[1].coord(0, 1, 1), 3.0);
}

#[test]
fn unknown_manifest_keys_rejected() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(
        dir.path().join("manifest.json"),
        r#"{"name":"x","J":2,"f":3,"edges":[[0,1]],"root_joint":0,"files":{},"typo_key":1}"#,
    )
    .unwrap();
    let err = load_dataset(&dir.path().join("manifest.json")).unwrap_err();
    assert!(err.to_string().contains("typo_key"), "got: {err}");
}

#[test]
fn parse_error_reports_file_and_line() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(
        dir.path().join("train.jsonl"),
        "{\"id\":1,\"frames\":[[[0,0,0],[1,0,0]],[[0,0,0],[1,0,0]],[[0,0,0],[1,0,0]]]}\nnot json\n",
    )
    .unwrap();
    fs::write(
        dir.path().join("manifest.json"),
        r#"{"name":"p","J":2,"f":3,"edges":[[0,1]],"root_joint":0,"files":{"train":["train.jsonl"]}}"#,
    )
    .unwrap();
    let err = load_dataset(&dir.path().join("manifest.json")).unwrap_err();
    let msg = err.to_string();
    assert!(msg.contains("train.jsonl") && msg.contains(":2"), "got: {msg}");
}

#[test]
fn supervised_sampling_is_identity_balanced() {
    let spec = tiny_graph();
    let mut rng = SeededRng::new(9);
    // 5 identities x 6 sequences.
    let pool = generate_synthetic(5, 6, 3, &spec, &mut rng).unwrap();
    let batch_size = 8;
    let k = 2;
    let mut per_id_draws: std::collections::HashMap<i64, usize> = Default::default();
    let draws = 2500; // 2500 batches x 8 = 20000 samples
    for _ in 0..draws {
        let batch = sample_batch(&pool, batch_size, SamplingMode::Supervised { k_per_id: k }, &mut rng).unwrap();
        // Exactly K instances of each sampled identity.
        let mut counts: std::collections::HashMap<i64, usize> = Default::default();
        for &l in &batch.labels {
            *counts.entry(l).or_insert(0) += 1;
        }
        assert_eq!(counts.len(), batch_size / k);
        for (&id, &c) in &counts {
            assert_eq!(c, k, "identity {id} drawn {c} times in one batch");
        }
        for (id, c) in counts {
            *per_id_draws.entry(id).or_insert(0) += c;
        }
    }
    // Long-run identity frequencies within 20% of uniform.
    let expected = (draws * batch_size) as f64 / 5.0;
    for (id, c) in per_id_draws {
        let ratio = c as f64 / expected;
        assert!((0.8..1.2).contains(&ratio), "identity {id}: ratio {ratio}");
    }
}

#[test]
fn sampling_rejects_bad_configurations() {
    let spec = tiny_graph();
    let mut rng = SeededRng::new(11);
    let pool = generate_synthetic(2, 3, 3, &spec, &mut rng).unwrap();
    // Not a multiple of K.
    assert!(sample_batch(&pool, 5, SamplingMode::Supervised { k_per_id: 2 }, &mut rng).is_err());
    // More identities requested than exist.
    assert!(sample_batch(&pool, 6, SamplingMode::Supervised { k_per_id: 1 }, &mut rng).is_err());
    // One identity only.
    let single: Vec<SkeletonSequence> = pool
        .iter()
        .filter(|s| s.identity == 1)
        .cloned()
        .collect();
    assert!(sample_batch(&single, 2, SamplingMode::Supervised { k_per_id: 2 }, &mut rng).is_err());
}

#[test]
fn synthetic_identities_are_geometrically_separable() {
    // Oracle: with zero noise, raw-coordinate distance within an identity
    // must be smaller than across identities (bone lengths differ per id).
    let spec = tiny_graph();
    let mut rng = SeededRng::new(21);
    let seqs = generate_synthetic_with(4, 5, 6, &spec, &mut rng, 0.0).unwrap();
    // Mean-frame comparison removes phase effects.
    let mean_frame = |s: &SkeletonSequence| -> Vec<f64> {
        let j3 = s.joints * 3;
        let mut m = vec![0.0; j3];
        for t in 0..s.num_frames {
            for i in 0..j3 {
                m[i] += s.frames[t * j3 + i] / s.num_frames as f64;
            }
        }
        m
    };
    let mut same = Vec::new();
    let mut cross = Vec::new();
    for (i, a) in seqs.iter().enumerate() {
        for b in seqs.iter().skip(i + 1) {
            let (ma, mb) = (mean_frame(a), mean_frame(b));
            let d: f64 = ma
                .iter()
                .zip(&mb)
                .map(|(x, y)| (x - y) * (x - y))
                .sum::<f64>()
                .sqrt();
            if a.identity == b.identity {
                same.push(d);
            } else {
                cross.push(d);
            }
        }
    }
    let max_same = same.iter().cloned().fold(0.0, f64::max);
    let min_cross = cross.iter().cloned().fold(f64::INFINITY, f64::min);
    assert!(
        max_same < min_cross,
        "max within-id distance {max_same} >= min cross-id distance {min_cross}"
    );
}

#[test]
fn synthetic_needs_two_identities() {
    let spec = tiny_graph();
    let mut rng = SeededRng::new(1);
    assert!(generate_synthetic(1, 3, 4, &spec, &mut rng).is_err());
}
