//! Acceptance suite. Each criterion prints exactly one summary line
//! (run with `--nocapture` to see them on success):
//!
//! 1. Gradient fidelity of the full fused objective vs finite differences.
//! 2. Spectral correctness of the eigensolver and positional encodings.
//! 3. Structural invariants of attention, masking, losses, and ranking.
//! 4. End-to-end training reaches Rank-1 >= 90% and mAP >= 60% on
//!    synthetic data within the epoch and wall-clock budget.
//! 5. Ablation ordering across seeds (reported, not asserted).
//! 6. Determinism and checkpoint resume.
//! 7. Unsupervised clustering correctness and label independence.

use std::time::Instant;

use transg::evalrank::match_reps;
use transg::graphpe::{build_graph, compute_pe};
use transg::numerics::{sym_eig, Binding, ParamSet, SeededRng, Tape, Tensor};
use transg::objectives::{
    compute_prototypes, gpc_seq_loss, masked_graph_reps, sample_mask_plan, stpr_structure,
    stpr_trajectory,
};
use transg::sgt::{encode, init_params, HeadOpts, SgtConfig};
use transg::skeledata::{generate_synthetic, Batch, Dataset, DatasetManifest, SplitFiles};
use transg::trainer::{
    dbscan, gradient_check, load_checkpoint, save_checkpoint, train, train_ablation_suite,
    TrainConfig, TrainMode,
};

/// 20-joint skeleton: torso chain plus four limb chains.
fn kinect20_edges() -> Vec<(usize, usize)> {
    vec![
        (0, 1), (1, 2), (2, 3),
        (2, 4), (4, 5), (5, 6), (6, 7),
        (2, 8), (8, 9), (9, 10), (10, 11),
        (0, 12), (12, 13), (13, 14), (14, 15),
        (0, 16), (16, 17), (17, 18), (18, 19),
    ]
}

/// Splits one synthetic generation round-robin so every split shares the
/// same identity templates.
fn synthetic_dataset(
    n_ids: usize,
    train_per_id: usize,
    probe_per_id: usize,
    gallery_per_id: usize,
    f: usize,
    joints: usize,
    edges: &[(usize, usize)],
    seed: u64,
) -> Dataset {
    let spec = build_graph(joints, edges).unwrap();
    let mut rng = SeededRng::new(seed);
    let per_id = train_per_id + probe_per_id + gallery_per_id;
    let all = generate_synthetic(n_ids, per_id, f, &spec, &mut rng).unwrap();
    let mut train = Vec::new();
    let mut probe = Vec::new();
    let mut gallery = Vec::new();
    for (i, s) in all.into_iter().enumerate() {
        match i % per_id {
            k if k < train_per_id => train.push(s),
            k if k < train_per_id + probe_per_id => probe.push(s),
            _ => gallery.push(s),
        }
    }
    Dataset {
        manifest: DatasetManifest {
            name: "acceptance".into(),
            joints,
            f,
            edges: edges.to_vec(),
            root_joint: 0,
            files: SplitFiles::default(),
        },
        train,
        probe,
        gallery,
        dropped_short: 0,
    }
}

#[test]
fn criterion_1_gradient_fidelity() {
    let started = Instant::now();
    let config = TrainConfig {
        mode: TrainMode::SgtGpcStpr,
        d: 8,
        heads: 2,
        d_k: 4,
        layers: 1,
        pe_dim: 2,
        f: 2,
        batch_size: 4,
        mask_nodes: 1,
        mask_frames: 1,
        ..TrainConfig::default()
    };
    let edges: Vec<(usize, usize)> = (0..3).map(|i| (i, i + 1)).collect();
    let report = gradient_check(&config, 4, &edges, 1e-4).unwrap();
    let elapsed = started.elapsed().as_secs_f64();
    let pass = report.pass && elapsed < 60.0;
    println!(
        "ACCEPTANCE 1 gradient fidelity: {} (max rel err {:.3e} < 1e-4, {:.1}s < 60s)",
        if pass { "PASS" } else { "FAIL" },
        report.max_rel_err,
        elapsed
    );
    assert!(report.pass, "max rel err {:.3e}", report.max_rel_err);
    assert!(elapsed < 60.0, "gradient check took {elapsed:.1}s");
}

#[test]
fn criterion_2_spectral_correctness() {
    // 3-node path: spectrum must be exactly {0, 1, 2}.
    let path = build_graph(3, &[(0, 1), (1, 2)]).unwrap();
    let (values, _) = sym_eig(&path.laplacian).unwrap();
    let mut worst = 0.0f64;
    for (got, want) in values.iter().zip([0.0, 1.0, 2.0]) {
        worst = worst.max((got - want).abs());
    }
    assert!(worst < 1e-8, "path spectrum error {worst}");

    // Five random connected graphs with J <= 25.
    let mut rng = SeededRng::new(2024);
    for case in 0..5 {
        let joints = 5 + rng.below(21); // 5..=25
        let mut edges: Vec<(usize, usize)> = (1..joints).map(|n| (rng.below(n), n)).collect();
        let mut present: std::collections::HashSet<(usize, usize)> = edges.iter().copied().collect();
        for _ in 0..joints {
            let (a, b) = (rng.below(joints), rng.below(joints));
            if a != b && present.insert((a.min(b), a.max(b))) {
                edges.push((a.min(b), a.max(b)));
            }
        }
        let g = build_graph(joints, &edges).unwrap();
        let (values, vectors) = sym_eig(&g.laplacian).unwrap();
        for i in 0..joints {
            for j in 0..joints {
                let rebuilt: f64 =
                    (0..joints).map(|k| vectors[i][k] * values[k] * vectors[j][k]).sum();
                worst = worst.max((rebuilt - g.laplacian[i][j]).abs());
            }
        }
        for &v in &values {
            assert!(v > -1e-8 && v < 2.0 + 1e-8, "case {case}: eigenvalue {v}");
        }
        let k = (joints - 1).min(8);
        let g = compute_pe(g, k).unwrap();
        for col in 0..k {
            for i in 0..joints {
                let lhs: f64 =
                    (0..joints).map(|j| g.laplacian[i][j] * g.pe_matrix[j][col]).sum();
                worst = worst.max((lhs - g.pe_eigenvalues[col] * g.pe_matrix[i][col]).abs());
            }
        }
    }
    let pass = worst < 1e-8;
    println!(
        "ACCEPTANCE 2 spectral correctness: {} (worst residual {:.3e} < 1e-8)",
        if pass { "PASS" } else { "FAIL" },
        worst
    );
    assert!(pass);
}

#[test]
fn criterion_3_structural_invariants() {
    let mut failures: Vec<String> = Vec::new();

    // (a) Attention rows are probability distributions.
    {
        let config = SgtConfig { d: 8, heads: 2, d_k: 4, layers: 2, pe_dim: 2, use_pe: true };
        let j = 5;
        let spec =
            compute_pe(build_graph(j, &[(0, 1), (1, 2), (2, 3), (3, 4)]).unwrap(), 2).unwrap();
        let mut rng = SeededRng::new(5);
        let params = init_params(&config, j, HeadOpts::default(), &mut rng).unwrap();
        let data: Vec<f64> = (0..2 * 3 * j * 3).map(|_| rng.uniform(-1.0, 1.0)).collect();
        let batch = Batch {
            frames: Tensor::new(vec![2, 3, j, 3], data).unwrap(),
            labels: vec![1, 2],
            batch_size: 2,
            num_frames: 3,
            joints: j,
        };
        let mut tape = Tape::new();
        let mut binding = Binding::new();
        let reps =
            encode(&mut tape, &mut binding, &params, &config, &spec, &batch, true).unwrap();
        for &w in &reps.attention {
            for row in tape.value(w).data.chunks(j) {
                let sum: f64 = row.iter().sum();
                if (sum - 1.0).abs() >= 1e-9 {
                    failures.push(format!("attention row sums to {sum}"));
                }
            }
        }
    }

    // (b) Node relabeling commutes with encoding when PE is off.
    {
        let config = SgtConfig { d: 8, heads: 2, d_k: 4, layers: 1, pe_dim: 0, use_pe: false };
        let (b, f, j) = (2, 2, 4);
        let spec = build_graph(j, &[(0, 1), (1, 2), (2, 3)]).unwrap();
        let mut rng = SeededRng::new(6);
        let params = init_params(&config, j, HeadOpts::default(), &mut rng).unwrap();
        let data: Vec<f64> = (0..b * f * j * 3).map(|_| rng.uniform(-1.0, 1.0)).collect();
        let perm = [2usize, 0, 3, 1];
        let mut permuted = vec![0.0; data.len()];
        for n in 0..b * f {
            for (new_j, &old_j) in perm.iter().enumerate() {
                for axis in 0..3 {
                    permuted[(n * j + new_j) * 3 + axis] = data[(n * j + old_j) * 3 + axis];
                }
            }
        }
        let run = |coords: Vec<f64>| -> (Vec<f64>, Vec<f64>) {
            let batch = Batch {
                frames: Tensor::new(vec![b, f, j, 3], coords).unwrap(),
                labels: vec![1, 2],
                batch_size: b,
                num_frames: f,
                joints: j,
            };
            let mut tape = Tape::new();
            let mut binding = Binding::new();
            let reps =
                encode(&mut tape, &mut binding, &params, &config, &spec, &batch, false).unwrap();
            (
                tape.value(reps.node_reps).data.clone(),
                tape.value(reps.sequence_reps).data.clone(),
            )
        };
        let (node_a, seq_a) = run(data);
        let (node_b, seq_b) = run(permuted);
        let d = config.d;
        for n in 0..b * f {
            for (new_j, &old_j) in perm.iter().enumerate() {
                for k in 0..d {
                    let diff =
                        (node_a[(n * j + old_j) * d + k] - node_b[(n * j + new_j) * d + k]).abs();
                    if diff >= 1e-9 {
                        failures.push(format!("equivariance violated by {diff}"));
                    }
                }
            }
        }
        if seq_a.iter().zip(&seq_b).any(|(x, y)| (x - y).abs() >= 1e-9) {
            failures.push("sequence rep not permutation invariant".into());
        }
    }

    // (c) Masked means ignore masked positions exactly.
    {
        let (b, f, j, d) = (2, 3, 4, 3);
        let mut rng = SeededRng::new(7);
        let plan = sample_mask_plan(b, f, j, 2, 1, &mut rng).unwrap();
        let base: Vec<f64> = (0..b * f * j * d).map(|_| rng.uniform(-1.0, 1.0)).collect();
        let mut corrupted = base.clone();
        for (bi, per_frame) in plan.node_masks.iter().enumerate() {
            for (t, mask) in per_frame.iter().enumerate() {
                for (ji, &keep) in mask.iter().enumerate() {
                    if !keep {
                        let at = ((bi * f + t) * j + ji) * d;
                        corrupted[at..at + d].fill(9e9);
                    }
                }
            }
        }
        let eval = |coords: &[f64]| -> Vec<f64> {
            let mut tape = Tape::new();
            let x = tape.leaf(
                Tensor::new(vec![b, f, j, d], coords.to_vec()).unwrap(),
                false,
            );
            let g = masked_graph_reps(&mut tape, x, &plan).unwrap();
            tape.value(g).data.clone()
        };
        if eval(&base) != eval(&corrupted) {
            failures.push("masked mean depends on masked positions".into());
        }
    }

    // (d) Identical representations yield exactly ln C.
    {
        let c = 3;
        let b = 2 * c;
        let labels: Vec<i64> = (0..b).map(|i| (i % c) as i64).collect();
        let mut tape = Tape::new();
        let reps = tape.leaf(Tensor::new(vec![b, 4], vec![0.5; b * 4]).unwrap(), false);
        let protos = compute_prototypes(&mut tape, reps, &labels, false).unwrap();
        let loss = gpc_seq_loss(&mut tape, reps, &labels, &protos, 0.07, true).unwrap();
        let diff = (tape.value(loss).item() - (c as f64).ln()).abs();
        if diff >= 1e-9 {
            failures.push(format!("uniform contrastive loss off ln C by {diff}"));
        }
    }

    // (e) Reconstruction loss is exactly zero at perfect reconstruction.
    {
        let (b, f, j, d) = (2, 3, 4, 5);
        let point = [0.25, -0.5, 1.0];
        let gt = Tensor::new(
            vec![b, f, j, 3],
            point.repeat(b * f * j),
        )
        .unwrap();
        let mut params = ParamSet::new();
        for (prefix, target) in [("recon.fs", point.repeat(j)), ("recon.ft", point.repeat(f))] {
            params.add(&format!("{prefix}.w1"), Tensor::zeros(&[2 * d, d]), true);
            params.add(&format!("{prefix}.b1"), Tensor::zeros(&[2 * d]), true);
            params.add(&format!("{prefix}.w2"), Tensor::zeros(&[target.len(), 2 * d]), true);
            params.add(
                &format!("{prefix}.b2"),
                Tensor::new(vec![target.len()], target).unwrap(),
                true,
            );
        }
        let mut rng = SeededRng::new(8);
        let plan = sample_mask_plan(b, f, j, 1, 1, &mut rng).unwrap();
        let mut tape = Tape::new();
        let mut binding = Binding::new();
        let node_data: Vec<f64> = (0..b * f * j * d).map(|_| rng.uniform(-1.0, 1.0)).collect();
        let x = tape.leaf(Tensor::new(vec![b, f, j, d], node_data).unwrap(), false);
        let st = stpr_structure(&mut tape, &mut binding, &params, x, &plan, &gt).unwrap();
        let tr = stpr_trajectory(&mut tape, &mut binding, &params, x, &plan, &gt).unwrap();
        if tape.value(st).item() != 0.0 || tape.value(tr).item() != 0.0 {
            failures.push("reconstruction loss nonzero at perfect reconstruction".into());
        }
    }

    // (f, g) Ranking equals a brute-force oracle; CMC is monotone.
    {
        let mut rng = SeededRng::new(2025);
        for case in 0..20 {
            let d = 1 + rng.below(5);
            let n_probe = 2 + rng.below(49);
            let n_gallery = 5 + rng.below(196);
            let n_ids = 2 + rng.below(8);
            let grid = |rng: &mut SeededRng| -> Vec<f64> {
                (0..d).map(|_| (rng.uniform(-2.0, 2.0) * 4.0).round() / 4.0).collect()
            };
            let probe: Vec<Vec<f64>> = (0..n_probe).map(|_| grid(&mut rng)).collect();
            let gallery: Vec<Vec<f64>> = (0..n_gallery).map(|_| grid(&mut rng)).collect();
            let probe_ids: Vec<i64> = (0..n_probe).map(|_| rng.below(n_ids) as i64).collect();
            let gallery_ids: Vec<i64> = (0..n_gallery).map(|_| rng.below(n_ids) as i64).collect();
            if !probe_ids.iter().any(|id| gallery_ids.contains(id)) {
                continue;
            }
            let report = match_reps(
                &Tensor::new(vec![n_probe, d], probe.concat()).unwrap(),
                &Tensor::new(vec![n_gallery, d], gallery.concat()).unwrap(),
                &probe_ids,
                &gallery_ids,
                false,
            )
            .unwrap();
            if !(report.rank1 <= report.rank5 && report.rank5 <= report.rank10) {
                failures.push(format!("case {case}: CMC not monotone"));
            }
            let (r1, r5, r10, map) =
                brute_force_ranking(&probe, &gallery, &probe_ids, &gallery_ids);
            if (report.rank1 - r1).abs() > 1e-12
                || (report.rank5 - r5).abs() > 1e-12
                || (report.rank10 - r10).abs() > 1e-12
                || (report.mean_ap - map).abs() > 1e-12
            {
                failures.push(format!("case {case}: ranking disagrees with oracle"));
            }
        }
    }

    let pass = failures.is_empty();
    println!(
        "ACCEPTANCE 3 structural invariants: {}{}",
        if pass { "PASS" } else { "FAIL" },
        if pass {
            " (attention, equivariance, masking, ln C, zero-reconstruction, ranking oracle)".into()
        } else {
            format!(" ({})", failures.join("; "))
        }
    );
    assert!(pass, "{failures:?}");
}

fn brute_force_ranking(
    probe: &[Vec<f64>],
    gallery: &[Vec<f64>],
    probe_ids: &[i64],
    gallery_ids: &[i64],
) -> (f64, f64, f64, f64) {
    let dist = |a: &[f64], b: &[f64]| -> f64 {
        a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
    };
    let (mut r1, mut r5, mut r10, mut map, mut counted) = (0.0, 0.0, 0.0, 0.0, 0usize);
    for (p, prow) in probe.iter().enumerate() {
        if !gallery_ids.contains(&probe_ids[p]) {
            continue;
        }
        counted += 1;
        let mut remaining: Vec<usize> = (0..gallery.len()).collect();
        let mut order = Vec::new();
        while !remaining.is_empty() {
            let mut best = 0;
            for i in 1..remaining.len() {
                let (a, b) = (remaining[i], remaining[best]);
                let (da, db) = (dist(prow, &gallery[a]), dist(prow, &gallery[b]));
                if da < db || (da == db && a < b) {
                    best = i;
                }
            }
            order.push(remaining.remove(best));
        }
        let correct: Vec<bool> =
            order.iter().map(|&g| gallery_ids[g] == probe_ids[p]).collect();
        for (k, bucket) in [(1, &mut r1), (5, &mut r5), (10, &mut r10)] {
            if correct.iter().take(k).any(|&c| c) {
                *bucket += 1.0;
            }
        }
        let total = correct.iter().filter(|&&c| c).count();
        let (mut hits, mut ap) = (0usize, 0.0);
        for (rank, &c) in correct.iter().enumerate() {
            if c {
                hits += 1;
                ap += hits as f64 / (rank + 1) as f64;
            }
        }
        map += ap / total as f64;
    }
    let n = counted as f64;
    (r1 / n, r5 / n, r10 / n, map / n)
}

#[test]
fn criterion_4_end_to_end_training() {
    let started = Instant::now();
    let dataset = synthetic_dataset(10, 20, 5, 5, 6, 20, &kinect20_edges(), 0);
    let config = TrainConfig {
        mode: TrainMode::SgtGpcStpr,
        d: 64,
        heads: 8,
        d_k: 8,
        layers: 2,
        f: 6,
        batch_size: 40,
        k_per_id: 4,
        epochs: 40,
        seed: 0,
        eval_every: 0,
        ..TrainConfig::default()
    };
    assert!(config.epochs <= 150);
    let result = train(&config, &dataset, None).unwrap();
    let spec = transg::trainer::graph_for(&config, 20, &kinect20_edges()).unwrap();
    let report =
        transg::trainer::evaluate(&config, &result.checkpoint.params, &spec, &dataset, false)
            .unwrap();
    let elapsed = started.elapsed().as_secs_f64();
    let pass = report.rank1 >= 0.90 && report.mean_ap >= 0.60 && elapsed < 600.0;
    println!(
        "ACCEPTANCE 4 end-to-end training: {} (Rank-1 {:.1}% >= 90%, mAP {:.1}% >= 60%, {} epochs <= 150, {:.0}s < 600s)",
        if pass { "PASS" } else { "FAIL" },
        100.0 * report.rank1,
        100.0 * report.mean_ap,
        config.epochs,
        elapsed
    );
    assert!(report.rank1 >= 0.90, "Rank-1 {:.3}", report.rank1);
    assert!(report.mean_ap >= 0.60, "mAP {:.3}", report.mean_ap);
    assert!(elapsed < 600.0, "took {elapsed:.0}s");
}

#[test]
fn criterion_5_ablation_ordering_reported() {
    // Reported only: component ablations should usually order
    // full >= contrastive-only >= linear-contrastive >= raw features on
    // Rank-1, in at least 2 of 3 seeds. Small configs keep this quick.
    let dataset = synthetic_dataset(6, 8, 5, 5, 6, 20, &kinect20_edges(), 5);
    let base = TrainConfig {
        mode: TrainMode::SgtGpcStpr,
        d: 32,
        heads: 4,
        d_k: 8,
        layers: 1,
        f: 6,
        batch_size: 24,
        k_per_id: 4,
        epochs: 25,
        ..TrainConfig::default()
    };
    let mut ordered_seeds = 0;
    let mut detail = Vec::new();
    for seed in 0..3u64 {
        let mut config = base.clone();
        config.seed = seed;
        let rows = train_ablation_suite(&config, &dataset).unwrap();
        let r1 = |mode: &str| rows.iter().find(|r| r.mode == mode).unwrap().rank1;
        let (full, gpc, pc, baseline) =
            (r1("sgt_gpc_stpr"), r1("sgt_gpc"), r1("pc"), r1("baseline"));
        let ordered = full >= gpc && gpc >= pc && pc >= baseline;
        if ordered {
            ordered_seeds += 1;
        }
        detail.push(format!(
            "seed {seed}: {:.2} >= {:.2} >= {:.2} >= {:.2} {}",
            full,
            gpc,
            pc,
            baseline,
            if ordered { "ok" } else { "out of order" }
        ));
    }
    println!(
        "ACCEPTANCE 5 ablation ordering (reported, not asserted): {} ({} of 3 seeds ordered; {})",
        if ordered_seeds >= 2 { "PASS" } else { "FAIL" },
        ordered_seeds,
        detail.join("; ")
    );
}

#[test]
fn criterion_6_determinism_and_resume() {
    let dataset = synthetic_dataset(4, 10, 2, 2, 3, 4, &[(0, 1), (1, 2), (2, 3)], 9);
    let config = TrainConfig {
        mode: TrainMode::SgtGpcStpr,
        d: 8,
        heads: 2,
        d_k: 4,
        layers: 1,
        pe_dim: 2,
        f: 3,
        batch_size: 8,
        k_per_id: 2,
        mask_nodes: 1,
        mask_frames: 1,
        epochs: 2, // 5 steps per epoch -> a 10-step log
        seed: 42,
        ..TrainConfig::default()
    };
    let a = train(&config, &dataset, None).unwrap();
    let b = train(&config, &dataset, None).unwrap();
    assert_eq!(a.step_losses.len(), 10);
    let deterministic = a.step_losses == b.step_losses;

    let mut full_config = config.clone();
    full_config.epochs = 4;
    let full = train(&full_config, &dataset, None).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let mut half = a.checkpoint;
    half.config = full_config.clone();
    save_checkpoint(dir.path(), &half).unwrap();
    let resumed =
        train(&full_config, &dataset, Some(load_checkpoint(dir.path()).unwrap())).unwrap();
    let mut max_rel = 0.0f64;
    for (x, y) in full.step_losses[10..].iter().zip(&resumed.step_losses) {
        max_rel = max_rel.max((x - y).abs() / x.abs().max(1e-12));
    }
    let pass = deterministic && max_rel < 1e-6;
    println!(
        "ACCEPTANCE 6 determinism and resume: {} (replay {}, resume max rel diff {:.3e} < 1e-6)",
        if pass { "PASS" } else { "FAIL" },
        if deterministic { "bitwise identical" } else { "diverged" },
        max_rel
    );
    assert!(deterministic, "identical seeds diverged");
    assert!(max_rel < 1e-6, "resume drift {max_rel:.3e}");
}

#[test]
fn criterion_7_unsupervised() {
    // Clustering agrees with an O(n^2) reference on 10 random fixtures.
    let mut rng = SeededRng::new(7777);
    let mut cluster_ok = true;
    for _ in 0..10 {
        let n = 10 + rng.below(50);
        let d = 1 + rng.below(3);
        let points: Vec<Vec<f64>> = (0..n)
            .map(|_| (0..d).map(|_| rng.uniform(-3.0, 3.0)).collect())
            .collect();
        let eps = rng.uniform(0.3, 1.5);
        let min_pts = 1 + rng.below(5);
        if dbscan(&points, eps, min_pts).unwrap()
            != reference_dbscan(&points, eps, min_pts)
        {
            cluster_ok = false;
        }
    }

    // Training without labels must not read ground truth: permuting the
    // identities leaves the loss log bitwise unchanged.
    let mut dataset = synthetic_dataset(4, 10, 2, 2, 3, 4, &[(0, 1), (1, 2), (2, 3)], 11);
    let config = TrainConfig {
        mode: TrainMode::Unsupervised,
        d: 8,
        heads: 2,
        d_k: 4,
        layers: 1,
        pe_dim: 2,
        f: 3,
        batch_size: 8,
        mask_nodes: 1,
        mask_frames: 1,
        epochs: 3,
        seed: 3,
        ..TrainConfig::default()
    };
    let a = train(&config, &dataset, None).unwrap();
    for (i, s) in dataset.train.iter_mut().enumerate() {
        s.identity = -(i as i64) - 50;
    }
    let b = train(&config, &dataset, None).unwrap();
    let label_free = a.step_losses == b.step_losses;

    let pass = cluster_ok && label_free;
    println!(
        "ACCEPTANCE 7 unsupervised: {} (clustering matches reference on 10 fixtures: {}; label permutation invariance: {})",
        if pass { "PASS" } else { "FAIL" },
        cluster_ok,
        label_free
    );
    assert!(cluster_ok, "clustering disagrees with reference");
    assert!(label_free, "unsupervised training read ground-truth labels");
}

fn reference_dbscan(points: &[Vec<f64>], eps: f64, min_pts: usize) -> Vec<i64> {
    let n = points.len();
    let dist = |a: usize, b: usize| -> f64 {
        points[a]
            .iter()
            .zip(&points[b])
            .map(|(x, y)| (x - y) * (x - y))
            .sum::<f64>()
            .sqrt()
    };
    let region = |p: usize| -> Vec<usize> { (0..n).filter(|&q| dist(p, q) <= eps).collect() };
    let mut labels: Vec<Option<i64>> = vec![None; n];
    let mut cluster = -1i64;
    for p in 0..n {
        if labels[p].is_some() {
            continue;
        }
        let seeds = region(p);
        if seeds.len() < min_pts {
            labels[p] = Some(-1);
            continue;
        }
        cluster += 1;
        labels[p] = Some(cluster);
        let mut queue: std::collections::VecDeque<usize> = seeds.into();
        while let Some(q) = queue.pop_front() {
            if labels[q] == Some(-1) {
                labels[q] = Some(cluster);
            }
            if labels[q].is_some() {
                continue;
            }
            labels[q] = Some(cluster);
            let nbrs = region(q);
            if nbrs.len() >= min_pts {
                queue.extend(nbrs);
            }
        }
    }
    labels.into_iter().map(|l| l.unwrap()).collect()
}
