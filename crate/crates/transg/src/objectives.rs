//! Training objectives: graph prototype contrastive loss at sequence and
//! skeleton level, masked structure/trajectory reconstruction, and the fused
//! total objective.
//!
//! ```
//! use transg::numerics::{Tape, Tensor};
//! use transg::objectives::{compute_prototypes, gpc_seq_loss};
//!
//! // When every sequence has the same representation, each class prototype
//! // is that representation too, so the softmax over C prototypes is
//! // uniform and the loss equals ln C exactly.
//! let c = 3;
//! let labels: Vec<i64> = (0..2 * c).map(|i| (i % c) as i64).collect();
//! let mut tape = Tape::new();
//! let reps = tape.leaf(Tensor::new(vec![2 * c, 4], vec![0.5; 2 * c * 4]).unwrap(), false);
//! let protos = compute_prototypes(&mut tape, reps, &labels, false).unwrap();
//! let loss = gpc_seq_loss(&mut tape, reps, &labels, &protos, 0.07, true).unwrap();
//! assert!((tape.value(loss).item() - (c as f64).ln()).abs() < 1e-9);
//! ```

use crate::error::{Result, TransgError};
use crate::numerics::{Binding, ParamSet, SeededRng, Tape, Tensor, Var};

/// Per-class prototype vectors living on the tape.
pub struct PrototypeSet {
    /// Sorted distinct class ids present in the batch.
    pub class_ids: Vec<i64>,
    /// C x d prototype matrix (row k = mean representation of class k).
    pub prototypes: Var,
    pub counts: Vec<usize>,
}

impl PrototypeSet {
    /// Class index of a label within this set.
    pub fn class_index(&self, label: i64) -> Option<usize> {
        self.class_ids.binary_search(&label).ok()
    }
}

/// Maps batch labels to dense class indices against a sorted id list.
fn class_indices(class_ids: &[i64], labels: &[i64]) -> Result<Vec<usize>> {
    labels
        .iter()
        .map(|l| {
            class_ids
                .binary_search(l)
                .map_err(|_| TransgError::Contract(format!("label {l} missing from prototypes")))
        })
        .collect()
}

/// Per-class mean of sequence representations (B x d). With
/// `detach_prototypes` the result is a constant: gradients stop at the
/// prototypes and flow only through the compared representations.
pub fn compute_prototypes(
    tape: &mut Tape,
    sequence_reps: Var,
    labels: &[i64],
    detach: bool,
) -> Result<PrototypeSet> {
    let b = tape.value(sequence_reps).shape[0];
    let d = tape.value(sequence_reps).shape[1];
    if labels.len() != b {
        return Err(TransgError::Contract(format!(
            "{} labels for {} representations",
            labels.len(),
            b
        )));
    }
    let mut class_ids: Vec<i64> = labels.to_vec();
    class_ids.sort_unstable();
    class_ids.dedup();
    if class_ids.len() < 2 {
        return Err(TransgError::Contract(
            "prototype contrast needs >= 2 distinct classes in the batch".into(),
        ));
    }
    let c = class_ids.len();
    let mut counts = vec![0usize; c];
    for l in labels {
        counts[class_ids.binary_search(l).unwrap()] += 1;
    }
    // Averaging matrix M (C x B): row k has 1/n_k at the columns of class k.
    let mut avg = vec![0.0; c * b];
    for (col, l) in labels.iter().enumerate() {
        let k = class_ids.binary_search(l).unwrap();
        avg[k * b + col] = 1.0 / counts[k] as f64;
    }
    let prototypes = if detach {
        let s = tape.value(sequence_reps);
        let mut data = vec![0.0; c * d];
        for k in 0..c {
            for col in 0..b {
                let w = avg[k * b + col];
                if w == 0.0 {
                    continue;
                }
                for i in 0..d {
                    data[k * d + i] += w * s.data[col * d + i];
                }
            }
        }
        tape.constant(Tensor::new(vec![c, d], data)?)
    } else {
        let m = tape.constant(Tensor::new(vec![1, c, b], avg)?);
        let s3 = tape.reshape(sequence_reps, vec![1, b, d])?;
        let p3 = tape.bmm(m, s3)?;
        tape.reshape(p3, vec![c, d])?
    };
    Ok(PrototypeSet {
        class_ids,
        prototypes,
        counts,
    })
}

/// Similarity logits (rows x C) between representations and prototypes,
/// optionally L2-normalizing both sides, scaled by 1/temperature.
fn prototype_logits(
    tape: &mut Tape,
    reps: Var,
    prototypes: Var,
    temperature: f64,
    normalize: bool,
) -> Result<Var> {
    if temperature <= 0.0 {
        return Err(TransgError::Config(format!(
            "temperature must be positive, got {temperature}"
        )));
    }
    let rows = tape.value(reps).rows();
    let d = tape.value(reps).last_dim();
    let c = tape.value(prototypes).shape[0];
    let mut r = tape.reshape(reps, vec![1, rows, d])?;
    let mut p = tape.reshape(prototypes, vec![1, c, d])?;
    if normalize {
        r = tape.l2_normalize_last(r);
        p = tape.l2_normalize_last(p);
    }
    let p_t = tape.transpose_last2(p)?;
    let sims = tape.bmm(r, p_t)?;
    let logits = tape.reshape(sims, vec![rows, c])?;
    Ok(tape.scale(logits, 1.0 / temperature))
}

/// Sequence-level prototype contrastive loss: mean over sequences of the
/// cross-entropy of (S . c_k / tau1) against the true class.
pub fn gpc_seq_loss(
    tape: &mut Tape,
    sequence_reps: Var,
    labels: &[i64],
    prototypes: &PrototypeSet,
    tau1: f64,
    normalize: bool,
) -> Result<Var> {
    let targets = class_indices(&prototypes.class_ids, labels)?;
    let logits = prototype_logits(tape, sequence_reps, prototypes.prototypes, tau1, normalize)?;
    tape.nll_loss(logits, &targets)
}

/// Skeleton-level prototype contrastive loss through the F1/F2 projection
/// heads, averaged over all B*f skeleton representations.
pub fn gpc_ske_loss(
    tape: &mut Tape,
    binding: &mut Binding,
    params: &ParamSet,
    skeleton_reps: Var,
    labels: &[i64],
    prototypes: &PrototypeSet,
    tau2: f64,
    normalize: bool,
) -> Result<Var> {
    let shape = tape.value(skeleton_reps).shape.clone();
    if shape.len() != 3 {
        return Err(TransgError::Contract(format!(
            "skeleton reps must be B x f x d, got {shape:?}"
        )));
    }
    let (b, f, d) = (shape[0], shape[1], shape[2]);
    let f1w = binding.bind(tape, params, "proj.f1.w");
    let f1b = binding.bind(tape, params, "proj.f1.b");
    let f2w = binding.bind(tape, params, "proj.f2.w");
    let f2b = binding.bind(tape, params, "proj.f2.b");
    let s = tape.reshape(skeleton_reps, vec![b * f, d])?;
    let s = tape.linear(f1w, s)?;
    let s = tape.add_bias(s, f1b)?;
    let p = tape.linear(f2w, prototypes.prototypes)?;
    let p = tape.add_bias(p, f2b)?;

    let seq_targets = class_indices(&prototypes.class_ids, labels)?;
    let mut targets = Vec::with_capacity(b * f);
    for &t in &seq_targets {
        targets.extend(std::iter::repeat(t).take(f));
    }
    let c = prototypes.class_ids.len();
    let mut r = tape.reshape(s, vec![1, b * f, d])?;
    let mut pm = tape.reshape(p, vec![1, c, d])?;
    if normalize {
        r = tape.l2_normalize_last(r);
        pm = tape.l2_normalize_last(pm);
    }
    if tau2 <= 0.0 {
        return Err(TransgError::Config(format!(
            "temperature must be positive, got {tau2}"
        )));
    }
    let p_t = tape.transpose_last2(pm)?;
    let sims = tape.bmm(r, p_t)?;
    let logits = tape.reshape(sims, vec![b * f, c])?;
    let logits = tape.scale(logits, 1.0 / tau2);
    tape.nll_loss(logits, &targets)
}

fn check_unit_range(name: &str, v: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&v) {
        return Err(TransgError::Config(format!(
            "{name} must lie in [0, 1], got {v}"
        )));
    }
    Ok(())
}

/// GPC fusion: alpha * L_seq + (1 - alpha) * L_ske.
pub fn gpc_loss(tape: &mut Tape, seq_term: Var, ske_term: Var, alpha: f64) -> Result<Var> {
    check_unit_range("alpha", alpha)?;
    let a = tape.scale(seq_term, alpha);
    let b = tape.scale(ske_term, 1.0 - alpha);
    tape.add(a, b)
}

/// Fresh node and trajectory masks for one training step.
#[derive(Debug, Clone)]
pub struct MaskPlan {
    /// Per (sequence, frame): node mask with exactly J - a ones.
    pub node_masks: Vec<Vec<Vec<bool>>>,
    /// Per sequence: frame mask with exactly f - b ones, shared by all nodes.
    pub traj_masks: Vec<Vec<bool>>,
    pub node_masked: usize,
    pub frames_masked: usize,
}

/// Samples masks uniformly without replacement.
pub fn sample_mask_plan(
    batch: usize,
    frames: usize,
    joints: usize,
    a: usize,
    b: usize,
    rng: &mut SeededRng,
) -> Result<MaskPlan> {
    if a >= joints {
        return Err(TransgError::Config(format!(
            "node mask count a={a} must be < J={joints}"
        )));
    }
    if b >= frames {
        return Err(TransgError::Config(format!(
            "trajectory mask count b={b} must be < f={frames}"
        )));
    }
    let mut node_masks = Vec::with_capacity(batch);
    let mut traj_masks = Vec::with_capacity(batch);
    for _ in 0..batch {
        let mut per_frame = Vec::with_capacity(frames);
        for _ in 0..frames {
            let mut mask = vec![true; joints];
            for idx in rng.sample_indices(joints, a) {
                mask[idx] = false;
            }
            per_frame.push(mask);
        }
        node_masks.push(per_frame);
        let mut tmask = vec![true; frames];
        for idx in rng.sample_indices(frames, b) {
            tmask[idx] = false;
        }
        traj_masks.push(tmask);
    }
    Ok(MaskPlan {
        node_masks,
        traj_masks,
        node_masked: a,
        frames_masked: b,
    })
}

/// Masked mean of node representations per frame (the structure prompt),
/// shape B x f x d.
pub fn masked_graph_reps(tape: &mut Tape, node_reps: Var, plan: &MaskPlan) -> Result<Var> {
    let shape = tape.value(node_reps).shape.clone();
    let (b, f, j, d) = (shape[0], shape[1], shape[2], shape[3]);
    let mut mask = vec![0.0; b * f * j * d];
    for (bi, per_frame) in plan.node_masks.iter().enumerate() {
        for (t, frame_mask) in per_frame.iter().enumerate() {
            for (ji, &keep) in frame_mask.iter().enumerate() {
                if keep {
                    let base = ((bi * f + t) * j + ji) * d;
                    mask[base..base + d].fill(1.0);
                }
            }
        }
    }
    let masked = tape.mul_const(node_reps, Tensor::new(shape, mask)?)?;
    let summed = tape.sum_axis(masked, 2)?;
    Ok(tape.scale(summed, 1.0 / (j - plan.node_masked) as f64))
}

/// Masked mean of each node's trajectory (the trajectory prompt),
/// shape B x J x d.
pub fn masked_trajectory_reps(tape: &mut Tape, node_reps: Var, plan: &MaskPlan) -> Result<Var> {
    let shape = tape.value(node_reps).shape.clone();
    let (b, f, j, d) = (shape[0], shape[1], shape[2], shape[3]);
    let mut mask = vec![0.0; b * f * j * d];
    for (bi, tmask) in plan.traj_masks.iter().enumerate() {
        for (t, &keep) in tmask.iter().enumerate() {
            if keep {
                let base = (bi * f + t) * j * d;
                mask[base..base + j * d].fill(1.0);
            }
        }
    }
    let masked = tape.mul_const(node_reps, Tensor::new(shape, mask)?)?;
    let summed = tape.sum_axis(masked, 1)?;
    Ok(tape.scale(summed, 1.0 / (f - plan.frames_masked) as f64))
}

fn recon_mlp(
    tape: &mut Tape,
    binding: &mut Binding,
    params: &ParamSet,
    prefix: &str,
    x: Var,
) -> Result<Var> {
    let w1 = binding.bind(tape, params, &format!("{prefix}.w1"));
    let b1 = binding.bind(tape, params, &format!("{prefix}.b1"));
    let w2 = binding.bind(tape, params, &format!("{prefix}.w2"));
    let b2 = binding.bind(tape, params, &format!("{prefix}.b2"));
    let h = tape.linear(w1, x)?;
    let h = tape.add_bias(h, b1)?;
    let h = tape.relu(h);
    let y = tape.linear(w2, h)?;
    tape.add_bias(y, b2)
}

/// Mean over sequences of the l1 distance between prediction and ground
/// truth (both flattened per sequence).
fn l1_per_sequence_mean(tape: &mut Tape, pred: Var, gt: Tensor) -> Result<Var> {
    let b = tape.value(pred).shape[0];
    let gt_var = tape.constant(gt);
    let diff = tape.sub(pred, gt_var)?;
    let abs = tape.abs(diff);
    let total = tape.sum_all(abs);
    Ok(tape.scale(total, 1.0 / b as f64))
}

/// Structure-prompted reconstruction loss: predict every joint position of a
/// frame from the masked mean of that frame's node representations.
pub fn stpr_structure(
    tape: &mut Tape,
    binding: &mut Binding,
    params: &ParamSet,
    node_reps: Var,
    plan: &MaskPlan,
    ground_truth: &Tensor,
) -> Result<Var> {
    let shape = tape.value(node_reps).shape.clone();
    let (b, f, j) = (shape[0], shape[1], shape[2]);
    let shat = masked_graph_reps(tape, node_reps, plan)?;
    let pred = recon_mlp(tape, binding, params, "recon.fs", shat)?;
    let pred = tape.reshape(pred, vec![b, f, j, 3])?;
    l1_per_sequence_mean(tape, pred, ground_truth.clone())
}

/// Trajectory-prompted reconstruction loss: predict each node's full
/// trajectory from its masked temporal mean. The ground truth is compared in
/// J x f x 3 layout (a transposition of the input), which leaves the l1 sum
/// unchanged.
pub fn stpr_trajectory(
    tape: &mut Tape,
    binding: &mut Binding,
    params: &ParamSet,
    node_reps: Var,
    plan: &MaskPlan,
    ground_truth: &Tensor,
) -> Result<Var> {
    let shape = tape.value(node_reps).shape.clone();
    let (b, f, j) = (shape[0], shape[1], shape[2]);
    let traj = masked_trajectory_reps(tape, node_reps, plan)?;
    let pred = recon_mlp(tape, binding, params, "recon.ft", traj)?;
    let pred = tape.reshape(pred, vec![b, j, f, 3])?;
    // Transpose ground truth from B x f x J x 3 to B x J x f x 3.
    let mut gt = vec![0.0; b * f * j * 3];
    for bi in 0..b {
        for t in 0..f {
            for ji in 0..j {
                for axis in 0..3 {
                    gt[((bi * j + ji) * f + t) * 3 + axis] =
                        ground_truth.data[((bi * f + t) * j + ji) * 3 + axis];
                }
            }
        }
    }
    l1_per_sequence_mean(tape, pred, Tensor::new(vec![b, j, f, 3], gt)?)
}

/// STPR fusion: beta * L_st + (1 - beta) * L_tr.
pub fn stpr_loss(tape: &mut Tape, st_term: Var, tr_term: Var, beta: f64) -> Result<Var> {
    check_unit_range("beta", beta)?;
    let a = tape.scale(st_term, beta);
    let b = tape.scale(tr_term, 1.0 - beta);
    tape.add(a, b)
}

/// Total objective: lambda * L_GPC + (1 - lambda) * L_STPR.
pub fn total_loss(tape: &mut Tape, gpc: Var, stpr: Var, lambda: f64) -> Result<Var> {
    check_unit_range("lambda", lambda)?;
    let a = tape.scale(gpc, lambda);
    let b = tape.scale(stpr, 1.0 - lambda);
    tape.add(a, b)
}
