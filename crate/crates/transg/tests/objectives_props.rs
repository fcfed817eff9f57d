//! Closed-form oracles for the contrastive and reconstruction objectives.

use transg::numerics::{Binding, ParamSet, SeededRng, Tape, Tensor};
use transg::objectives::{
    compute_prototypes, gpc_seq_loss, sample_mask_plan, stpr_structure, stpr_trajectory,
};

#[test]
fn identical_representations_give_ln_c() {
    // When every sequence maps to the same vector, all class prototypes
    // coincide, logits are uniform, and the loss is exactly ln C.
    for c in [2usize, 3, 5] {
        let d = 4;
        let b = 2 * c;
        let labels: Vec<i64> = (0..b).map(|i| (i % c) as i64 + 1).collect();
        let mut tape = Tape::new();
        let reps = tape.leaf(
            Tensor::new(vec![b, d], vec![0.3; b * d]).unwrap(),
            false,
        );
        let protos = compute_prototypes(&mut tape, reps, &labels, false).unwrap();
        let loss = gpc_seq_loss(&mut tape, reps, &labels, &protos, 0.07, true).unwrap();
        let got = tape.value(loss).item();
        let want = (c as f64).ln();
        assert!(
            (got - want).abs() < 1e-9,
            "C={c}: loss {got} vs ln C = {want}"
        );
    }
}

#[test]
fn orthonormal_two_class_loss_matches_closed_form() {
    // Two classes, one member each, representations on orthogonal axes.
    // Normalized similarity to own prototype is 1 and to the other is 0, so
    // the loss is ln(1 + exp(-1/tau)) by direct evaluation of the softmax.
    let tau = 0.07;
    let mut tape = Tape::new();
    let reps = tape.leaf(
        Tensor::new(vec![2, 2], vec![2.0, 0.0, 0.0, 5.0]).unwrap(),
        false,
    );
    let labels = vec![1, 2];
    let protos = compute_prototypes(&mut tape, reps, &labels, false).unwrap();
    let loss = gpc_seq_loss(&mut tape, reps, &labels, &protos, tau, true).unwrap();
    let got = tape.value(loss).item();
    let want = (1.0 + (-1.0 / tau).exp()).ln();
    assert!(
        (got - want).abs() < 1e-15,
        "loss {got} vs closed form {want} (diff {})",
        (got - want).abs()
    );
}

#[test]
fn temperature_sharpens_the_loss() {
    // Smaller temperature shrinks the loss when the positive similarity wins.
    let losses: Vec<f64> = [0.05, 0.07, 0.5, 1.0]
        .iter()
        .map(|&tau| {
            let mut tape = Tape::new();
            let reps = tape.leaf(
                Tensor::new(vec![2, 2], vec![1.0, 0.2, 0.1, 1.0]).unwrap(),
                false,
            );
            let labels = vec![1, 2];
            let protos = compute_prototypes(&mut tape, reps, &labels, false).unwrap();
            let loss = gpc_seq_loss(&mut tape, reps, &labels, &protos, tau, true).unwrap();
            tape.value(loss).item()
        })
        .collect();
    for pair in losses.windows(2) {
        assert!(pair[0] < pair[1], "losses not increasing in tau: {losses:?}");
    }
}

#[test]
fn prototype_contrast_needs_two_classes() {
    let mut tape = Tape::new();
    let reps = tape.leaf(Tensor::new(vec![3, 2], vec![0.0; 6]).unwrap(), false);
    assert!(compute_prototypes(&mut tape, reps, &[4, 4, 4], false).is_err());
}

#[test]
fn detached_prototypes_match_attached_values() {
    let mut rng = SeededRng::new(31);
    let data: Vec<f64> = (0..6 * 3).map(|_| rng.uniform(-1.0, 1.0)).collect();
    let labels = vec![1, 1, 2, 2, 3, 3];
    let mut tape = Tape::new();
    let reps = tape.leaf(Tensor::new(vec![6, 3], data).unwrap(), true);
    let attached = compute_prototypes(&mut tape, reps, &labels, false).unwrap();
    let detached = compute_prototypes(&mut tape, reps, &labels, true).unwrap();
    assert_eq!(
        tape.value(attached.prototypes).data,
        tape.value(detached.prototypes).data
    );
}

/// Parameters for a reconstruction head that always outputs `target`,
/// regardless of its input: zero everywhere except the final bias.
fn constant_head(params: &mut ParamSet, prefix: &str, d: usize, target: &[f64]) {
    params.add(&format!("{prefix}.w1"), Tensor::zeros(&[2 * d, d]), true);
    params.add(&format!("{prefix}.b1"), Tensor::zeros(&[2 * d]), true);
    params.add(
        &format!("{prefix}.w2"),
        Tensor::zeros(&[target.len(), 2 * d]),
        true,
    );
    params.add(
        &format!("{prefix}.b2"),
        Tensor::new(vec![target.len()], target.to_vec()).unwrap(),
        true,
    );
}

#[test]
fn reconstruction_loss_is_exactly_zero_at_perfect_reconstruction() {
    // A static pose with every joint at the same point can be reconstructed
    // perfectly by a constant head; both losses must then be exactly 0.0.
    let (b, f, j, d) = (2, 3, 4, 5);
    let point = [0.25, -0.5, 1.0];
    let mut gt = Vec::with_capacity(b * f * j * 3);
    for _ in 0..b * f * j {
        gt.extend_from_slice(&point);
    }
    let gt = Tensor::new(vec![b, f, j, 3], gt).unwrap();

    let mut params = ParamSet::new();
    let frame_target: Vec<f64> = point.repeat(j);
    let traj_target: Vec<f64> = point.repeat(f);
    constant_head(&mut params, "recon.fs", d, &frame_target);
    constant_head(&mut params, "recon.ft", d, &traj_target);

    let mut rng = SeededRng::new(2);
    let plan = sample_mask_plan(b, f, j, 1, 1, &mut rng).unwrap();
    let mut tape = Tape::new();
    let mut binding = Binding::new();
    let node_data: Vec<f64> = (0..b * f * j * d).map(|_| rng.uniform(-1.0, 1.0)).collect();
    let node_reps = tape.leaf(Tensor::new(vec![b, f, j, d], node_data).unwrap(), false);

    let st = stpr_structure(&mut tape, &mut binding, &params, node_reps, &plan, &gt).unwrap();
    let tr = stpr_trajectory(&mut tape, &mut binding, &params, node_reps, &plan, &gt).unwrap();
    assert_eq!(tape.value(st).item(), 0.0);
    assert_eq!(tape.value(tr).item(), 0.0);
}

#[test]
fn mask_plan_has_exact_counts() {
    let mut rng = SeededRng::new(8);
    let (b, f, j, a, m) = (3, 5, 7, 2, 2);
    let plan = sample_mask_plan(b, f, j, a, m, &mut rng).unwrap();
    for per_frame in &plan.node_masks {
        for mask in per_frame {
            assert_eq!(mask.iter().filter(|&&k| !k).count(), a);
        }
    }
    for tmask in &plan.traj_masks {
        assert_eq!(tmask.iter().filter(|&&k| !k).count(), m);
    }
    // Full masking is rejected.
    assert!(sample_mask_plan(b, f, j, j, m, &mut rng).is_err());
    assert!(sample_mask_plan(b, f, j, a, f, &mut rng).is_err());
}
