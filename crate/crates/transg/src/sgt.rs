//! Skeleton graph transformer encoder: positional node embedding, stacked
//! full-relation attention layers with FFN/residual/batch-norm, and mean
//! pooling to skeleton-level and sequence-level representations.
//!
//! Attention is spatial: each head relates the J nodes of one frame to each
//! other (all pairs, no adjacency mask). Temporal structure enters only
//! through pooling and the trajectory reconstruction objective.

use serde::{Deserialize, Serialize};

use crate::error::{Result, TransgError};
use crate::graphpe::SkeletonGraphSpec;
use crate::numerics::{Binding, ParamSet, SeededRng, Tape, Tensor, Var};
use crate::skeledata::Batch;

/// Momentum for batch-norm running statistics.
pub const BN_MOMENTUM: f64 = 0.1;

#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq)]
pub struct SgtConfig {
    /// Node embedding dimension.
    pub d: usize,
    /// Number of full-relation heads per layer.
    pub heads: usize,
    /// Per-head dimension; d must equal heads * d_k.
    pub d_k: usize,
    /// Number of stacked layers.
    pub layers: usize,
    /// Positional-encoding dimension K.
    pub pe_dim: usize,
    pub use_pe: bool,
}

impl SgtConfig {
    pub fn validate(&self) -> Result<()> {
        if self.d == 0 || self.heads == 0 || self.d_k == 0 || self.layers == 0 {
            return Err(TransgError::Config(
                "SGT dimensions must all be positive".into(),
            ));
        }
        if self.d != self.heads * self.d_k {
            return Err(TransgError::Config(format!(
                "d = {} must equal heads * d_k = {} * {}",
                self.d, self.heads, self.d_k
            )));
        }
        Ok(())
    }
}

/// Which auxiliary heads to create alongside the encoder. Only parameters a
/// training mode actually uses are registered, so the optimizer can insist on
/// a gradient for every trainable parameter.
#[derive(Debug, Clone, Copy, Default)]
pub struct HeadOpts {
    /// F1/F2 projection heads for skeleton-level contrastive learning.
    pub projection: bool,
    /// Structure/trajectory reconstruction MLPs; needs (J, f) output sizes.
    pub recon: Option<(usize, usize)>,
    /// Linear classifier over C classes (direct supervised ablation).
    pub classifier: Option<usize>,
}

fn init_matrix(rng: &mut SeededRng, out_dim: usize, in_dim: usize) -> Tensor {
    let bound = 1.0 / (in_dim as f64).sqrt();
    let data = (0..out_dim * in_dim)
        .map(|_| rng.uniform(-bound, bound))
        .collect();
    Tensor {
        shape: vec![out_dim, in_dim],
        data,
    }
}

/// Creates all encoder (and requested head) parameters in canonical order.
pub fn init_params(
    config: &SgtConfig,
    joints: usize,
    opts: HeadOpts,
    rng: &mut SeededRng,
) -> Result<ParamSet> {
    config.validate()?;
    let d = config.d;
    let mut p = ParamSet::new();
    p.add("embed.w_v", init_matrix(rng, d, 3), true);
    p.add("embed.b_v", Tensor::zeros(&[d]), true);
    if config.use_pe && config.pe_dim > 0 {
        p.add("embed.w_p", init_matrix(rng, d, config.pe_dim), true);
        p.add("embed.b_p", Tensor::zeros(&[d]), true);
    }
    for l in 0..config.layers {
        for k in 0..config.heads {
            p.add(&format!("layer{l}.head{k}.q"), init_matrix(rng, config.d_k, d), true);
            p.add(&format!("layer{l}.head{k}.k"), init_matrix(rng, config.d_k, d), true);
            p.add(&format!("layer{l}.head{k}.v"), init_matrix(rng, config.d_k, d), true);
        }
        p.add(&format!("layer{l}.o"), init_matrix(rng, d, d), true);
        p.add(&format!("layer{l}.ffn.w1"), init_matrix(rng, 2 * d, d), true);
        p.add(&format!("layer{l}.ffn.w2"), init_matrix(rng, d, 2 * d), true);
        for norm in ["norm1", "norm2"] {
            p.add(&format!("layer{l}.{norm}.gamma"), Tensor::full(&[d], 1.0), true);
            p.add(&format!("layer{l}.{norm}.beta"), Tensor::zeros(&[d]), true);
            p.add(&format!("layer{l}.{norm}.run_mean"), Tensor::zeros(&[d]), false);
            p.add(&format!("layer{l}.{norm}.run_var"), Tensor::full(&[d], 1.0), false);
        }
    }
    if opts.projection {
        p.add("proj.f1.w", init_matrix(rng, d, d), true);
        p.add("proj.f1.b", Tensor::zeros(&[d]), true);
        p.add("proj.f2.w", init_matrix(rng, d, d), true);
        p.add("proj.f2.b", Tensor::zeros(&[d]), true);
    }
    if let Some((j, f)) = opts.recon {
        p.add("recon.fs.w1", init_matrix(rng, 2 * d, d), true);
        p.add("recon.fs.b1", Tensor::zeros(&[2 * d]), true);
        p.add("recon.fs.w2", init_matrix(rng, j * 3, 2 * d), true);
        p.add("recon.fs.b2", Tensor::zeros(&[j * 3]), true);
        p.add("recon.ft.w1", init_matrix(rng, 2 * d, d), true);
        p.add("recon.ft.b1", Tensor::zeros(&[2 * d]), true);
        p.add("recon.ft.w2", init_matrix(rng, f * 3, 2 * d), true);
        p.add("recon.ft.b2", Tensor::zeros(&[f * 3]), true);
    }
    if let Some(c) = opts.classifier {
        p.add("cls.w", init_matrix(rng, c, d), true);
        p.add("cls.b", Tensor::zeros(&[c]), true);
    }
    let _ = joints; // recon sizes carry J; the encoder itself is J-agnostic
    Ok(p)
}

/// Encoder outputs for one batch, as live tape handles.
pub struct GraphRepresentations {
    /// B x f x J x d node representations after the last layer.
    pub node_reps: Var,
    /// B x f x d skeleton-level representations (mean over nodes).
    pub skeleton_reps: Var,
    /// B x d sequence-level representations (mean over frames).
    pub sequence_reps: Var,
    /// Batch-norm nodes recorded in training mode, for running-stat updates.
    pub bn_nodes: Vec<(String, Var)>,
    /// Attention-weight tensors of every layer and head, [N, J, J] each.
    pub attention: Vec<Var>,
}

/// Eq-style node embedding: h_i = (W_v v_i + b_v) + (W_p lambda_i + b_p).
pub fn embed_nodes(
    tape: &mut Tape,
    binding: &mut Binding,
    params: &ParamSet,
    config: &SgtConfig,
    spec: &SkeletonGraphSpec,
    batch: &Batch,
) -> Result<Var> {
    if batch.joints != spec.joints {
        return Err(TransgError::ShapeMismatch {
            op: "embed_nodes",
            lhs: vec![batch.joints],
            rhs: vec![spec.joints],
        });
    }
    let coords = tape.constant(batch.frames.clone());
    let w_v = binding.bind(tape, params, "embed.w_v");
    let b_v = binding.bind(tape, params, "embed.b_v");
    let lin = tape.linear(w_v, coords)?;
    let mut h = tape.add_bias(lin, b_v)?;

    if config.use_pe && config.pe_dim > 0 {
        if spec.pe_dim != config.pe_dim {
            return Err(TransgError::Config(format!(
                "graph PE dimension {} does not match encoder pe_dim {}",
                spec.pe_dim, config.pe_dim
            )));
        }
        // PE rows are per node; tile them over batch and frames.
        let k = config.pe_dim;
        let reps = batch.batch_size * batch.num_frames;
        let mut tile = Vec::with_capacity(reps * batch.joints * k);
        for _ in 0..reps {
            for row in &spec.pe_matrix {
                tile.extend_from_slice(row);
            }
        }
        let pe = tape.constant(Tensor::new(
            vec![batch.batch_size, batch.num_frames, batch.joints, k],
            tile,
        )?);
        let w_p = binding.bind(tape, params, "embed.w_p");
        let b_p = binding.bind(tape, params, "embed.b_p");
        let pe_lin = tape.linear(w_p, pe)?;
        let pe_term = tape.add_bias(pe_lin, b_p)?;
        h = tape.add(h, pe_term)?;
    }
    Ok(h)
}

fn batch_norm_with_stats(
    tape: &mut Tape,
    binding: &mut Binding,
    params: &ParamSet,
    prefix: &str,
    x: Var,
    training: bool,
    bn_nodes: &mut Vec<(String, Var)>,
) -> Result<Var> {
    let gamma = binding.bind(tape, params, &format!("{prefix}.gamma"));
    let beta = binding.bind(tape, params, &format!("{prefix}.beta"));
    let out = if training {
        let v = tape.batch_norm(x, gamma, beta, None)?;
        bn_nodes.push((prefix.to_string(), v));
        v
    } else {
        let mean = params.get(&format!("{prefix}.run_mean")).unwrap().value.data.clone();
        let var = params.get(&format!("{prefix}.run_var")).unwrap().value.data.clone();
        tape.batch_norm(x, gamma, beta, Some((&mean, &var)))?
    };
    Ok(out)
}

/// One full-relation layer over h of shape [N, J, d] (N = batch * frames).
pub fn fr_layer(
    tape: &mut Tape,
    binding: &mut Binding,
    params: &ParamSet,
    config: &SgtConfig,
    layer: usize,
    h: Var,
    training: bool,
    bn_nodes: &mut Vec<(String, Var)>,
    attn_nodes: &mut Vec<Var>,
) -> Result<Var> {
    config.validate()?;
    let scale = 1.0 / (config.d_k as f64).sqrt();
    let mut head_outputs = Vec::with_capacity(config.heads);
    for k in 0..config.heads {
        let wq = binding.bind(tape, params, &format!("layer{layer}.head{k}.q"));
        let wk = binding.bind(tape, params, &format!("layer{layer}.head{k}.k"));
        let wv = binding.bind(tape, params, &format!("layer{layer}.head{k}.v"));
        let q = tape.linear(wq, h)?;
        let key = tape.linear(wk, h)?;
        let v = tape.linear(wv, h)?;
        let key_t = tape.transpose_last2(key)?;
        let logits = tape.bmm(q, key_t)?;
        let logits = tape.scale(logits, scale);
        let weights = tape.softmax_last(logits)?;
        attn_nodes.push(weights);
        let out = tape.bmm(weights, v)?;
        head_outputs.push(out);
    }
    let concat = tape.concat_last(&head_outputs)?;
    let o = binding.bind(tape, params, &format!("layer{layer}.o"));
    let hhat = tape.linear(o, concat)?;
    let res1 = tape.add(h, hhat)?;
    let h_bar = batch_norm_with_stats(
        tape,
        binding,
        params,
        &format!("layer{layer}.norm1"),
        res1,
        training,
        bn_nodes,
    )?;
    let w1 = binding.bind(tape, params, &format!("layer{layer}.ffn.w1"));
    let w2 = binding.bind(tape, params, &format!("layer{layer}.ffn.w2"));
    let hidden = tape.linear(w1, h_bar)?;
    let hidden = tape.relu(hidden);
    let ffn = tape.linear(w2, hidden)?;
    let res2 = tape.add(h_bar, ffn)?;
    batch_norm_with_stats(
        tape,
        binding,
        params,
        &format!("layer{layer}.norm2"),
        res2,
        training,
        bn_nodes,
    )
}

/// Full encoder: embed, L layers, mean-pool nodes then frames.
pub fn encode(
    tape: &mut Tape,
    binding: &mut Binding,
    params: &ParamSet,
    config: &SgtConfig,
    spec: &SkeletonGraphSpec,
    batch: &Batch,
    training: bool,
) -> Result<GraphRepresentations> {
    let h = embed_nodes(tape, binding, params, config, spec, batch)?;
    let n = batch.batch_size * batch.num_frames;
    let mut h = tape.reshape(h, vec![n, batch.joints, config.d])?;
    let mut bn_nodes = Vec::new();
    let mut attention = Vec::new();
    for l in 0..config.layers {
        h = fr_layer(
            tape,
            binding,
            params,
            config,
            l,
            h,
            training,
            &mut bn_nodes,
            &mut attention,
        )?;
    }
    let node_reps = tape.reshape(
        h,
        vec![batch.batch_size, batch.num_frames, batch.joints, config.d],
    )?;
    let skeleton_reps = tape.mean_axis(node_reps, 2)?;
    let sequence_reps = tape.mean_axis(skeleton_reps, 1)?;
    Ok(GraphRepresentations {
        node_reps,
        skeleton_reps,
        sequence_reps,
        bn_nodes,
        attention,
    })
}

/// Folds the batch statistics recorded during a training forward pass into
/// the running buffers: run = (1 - momentum) * run + momentum * batch.
pub fn update_running_stats(params: &mut ParamSet, tape: &Tape, bn_nodes: &[(String, Var)]) {
    for (prefix, var) in bn_nodes {
        let (mean, var_stats) = match tape.batch_stats(*var) {
            Some(s) => (s.0.to_vec(), s.1.to_vec()),
            None => continue,
        };
        let rm = params.get_mut(&format!("{prefix}.run_mean")).unwrap();
        for (r, b) in rm.value.data.iter_mut().zip(&mean) {
            *r = (1.0 - BN_MOMENTUM) * *r + BN_MOMENTUM * b;
        }
        let rv = params.get_mut(&format!("{prefix}.run_var")).unwrap();
        for (r, b) in rv.value.data.iter_mut().zip(&var_stats) {
            *r = (1.0 - BN_MOMENTUM) * *r + BN_MOMENTUM * b;
        }
    }
}
