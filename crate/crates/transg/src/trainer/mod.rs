//! Training orchestration: supervised GPC+STPR training, the ablation modes,
//! unsupervised DBSCAN pseudo-label training, checkpointing, and
//! deterministic run logs.

pub mod checkpoint;
pub mod dbscan;
pub mod gradcheck;

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint};
pub use dbscan::{dbscan, pseudo_label};
pub use gradcheck::{gradient_check, GradCheckReport};

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::error::{Result, TransgError};
use crate::evalrank::{embed_split, match_reps, RankingReport};
use crate::graphpe::{build_graph, compute_pe, SkeletonGraphSpec};
use crate::numerics::{AdamState, Binding, ParamSet, SeededRng, Tape, Tensor, Var};
use crate::objectives::{
    compute_prototypes, gpc_loss, gpc_seq_loss, gpc_ske_loss, sample_mask_plan, stpr_loss,
    stpr_structure, stpr_trajectory, total_loss, MaskPlan, PrototypeSet,
};
use crate::sgt::{encode, init_params, update_running_stats, HeadOpts, SgtConfig};
use crate::skeledata::{sample_batch, stack_batch, Batch, Dataset, SamplingMode, SkeletonSequence};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrainMode {
    /// Nearest-neighbor on raw flattened coordinates; no training.
    Baseline,
    /// Prototype contrastive on a single linear encoder of raw sequences.
    Pc,
    /// SGT with a cross-entropy classification head (direct supervision).
    SgtDs,
    /// SGT with the graph prototype contrastive loss only.
    SgtGpc,
    /// Full objective: GPC plus structure/trajectory reconstruction.
    SgtGpcStpr,
    /// DBSCAN pseudo-labels refresh each epoch; ground truth never read.
    Unsupervised,
}

impl TrainMode {
    pub fn name(&self) -> &'static str {
        match self {
            TrainMode::Baseline => "baseline",
            TrainMode::Pc => "pc",
            TrainMode::SgtDs => "sgt_ds",
            TrainMode::SgtGpc => "sgt_gpc",
            TrainMode::SgtGpcStpr => "sgt_gpc_stpr",
            TrainMode::Unsupervised => "unsupervised",
        }
    }

    fn uses_stpr(&self) -> bool {
        matches!(self, TrainMode::SgtGpcStpr | TrainMode::Unsupervised)
    }

    fn needs_labels(&self) -> bool {
        matches!(
            self,
            TrainMode::Pc | TrainMode::SgtDs | TrainMode::SgtGpc | TrainMode::SgtGpcStpr
        )
    }
}

/// Full run configuration. Defaults follow the shipped hyperparameters:
/// 2 layers of 8 heads with d_k = 16 (d = 128), alpha = beta = lambda = 0.5,
/// tau1 = 0.07, tau2 = 14, a = 10, b = 2, Adam at lr 3.5e-4, batch 256.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub mode: TrainMode,
    pub d: usize,
    pub heads: usize,
    pub d_k: usize,
    pub layers: usize,
    /// Laplacian PE dimension K.
    pub pe_dim: usize,
    pub use_pe: bool,
    pub alpha: f64,
    pub beta: f64,
    pub lambda: f64,
    pub tau1: f64,
    pub tau2: f64,
    /// Number of masked nodes per frame (a).
    #[serde(rename = "a")]
    pub mask_nodes: usize,
    /// Number of masked frames per sequence (b).
    #[serde(rename = "b")]
    pub mask_frames: usize,
    /// Expected sequence length; must match the dataset manifest.
    pub f: usize,
    pub lr: f64,
    pub batch_size: usize,
    pub epochs: usize,
    /// Instances per identity in supervised P x K sampling.
    pub k_per_id: usize,
    pub seed: u64,
    /// L2-normalize representations and prototypes before contrastive dots.
    pub normalize_contrastive: bool,
    /// Stop gradients at the prototypes.
    pub detach_prototypes: bool,
    /// Recompute dataset-level prototypes each epoch instead of per batch.
    pub full_prototype_refresh: bool,
    pub dbscan_eps: f64,
    pub dbscan_min_pts: usize,
    /// Evaluate probe/gallery every N epochs during training (0 = only log losses).
    pub eval_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            mode: TrainMode::SgtGpcStpr,
            d: 128,
            heads: 8,
            d_k: 16,
            layers: 2,
            pe_dim: 8,
            use_pe: true,
            alpha: 0.5,
            beta: 0.5,
            lambda: 0.5,
            tau1: 0.07,
            tau2: 14.0,
            mask_nodes: 10,
            mask_frames: 2,
            f: 6,
            lr: 3.5e-4,
            batch_size: 256,
            epochs: 150,
            k_per_id: 4,
            seed: 0,
            normalize_contrastive: true,
            detach_prototypes: false,
            full_prototype_refresh: false,
            dbscan_eps: 0.6,
            dbscan_min_pts: 2,
            eval_every: 0,
        }
    }
}

impl TrainConfig {
    pub fn sgt(&self) -> SgtConfig {
        SgtConfig {
            d: self.d,
            heads: self.heads,
            d_k: self.d_k,
            layers: self.layers,
            pe_dim: self.pe_dim,
            use_pe: self.use_pe,
        }
    }

    /// All violated constraints at once (empty = valid).
    pub fn violations(&self) -> Vec<String> {
        let mut v = Vec::new();
        if let Err(e) = self.sgt().validate() {
            v.push(e.to_string());
        }
        for (name, value) in [
            ("alpha", self.alpha),
            ("beta", self.beta),
            ("lambda", self.lambda),
        ] {
            if !(0.0..=1.0).contains(&value) {
                v.push(format!("{name} must lie in [0, 1], got {value}"));
            }
        }
        for (name, value) in [("tau1", self.tau1), ("tau2", self.tau2)] {
            if value <= 0.0 {
                v.push(format!("{name} must be positive, got {value}"));
            }
        }
        if self.lr <= 0.0 {
            v.push(format!("lr must be positive, got {}", self.lr));
        }
        if self.f == 0 {
            v.push("f must be >= 1".into());
        }
        if self.batch_size == 0 {
            v.push("batch_size must be >= 1".into());
        }
        if self.mode.needs_labels() || self.mode == TrainMode::Unsupervised {
            if self.k_per_id == 0 {
                v.push("k_per_id must be >= 1".into());
            } else if self.mode.needs_labels()
                && self.mode != TrainMode::SgtDs
                && self.batch_size % self.k_per_id != 0
            {
                v.push(format!(
                    "batch_size {} must be a multiple of k_per_id {}",
                    self.batch_size, self.k_per_id
                ));
            }
        }
        if self.mask_frames >= self.f && self.mode.uses_stpr() {
            v.push(format!(
                "b = {} must be < f = {}",
                self.mask_frames, self.f
            ));
        }
        if self.dbscan_eps <= 0.0 && self.mode == TrainMode::Unsupervised {
            v.push(format!("dbscan_eps must be positive, got {}", self.dbscan_eps));
        }
        v
    }

    pub fn validate(&self) -> Result<()> {
        let v = self.violations();
        if v.is_empty() {
            Ok(())
        } else {
            Err(TransgError::Config(v.join("; ")))
        }
    }
}

/// Loss components of one epoch (means over its steps), plus optional
/// probe/gallery metrics.
#[derive(Debug, Clone, Serialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub l_total: f64,
    pub l_gpc_seq: f64,
    pub l_gpc_ske: f64,
    pub l_stpr_st: f64,
    pub l_stpr_tr: f64,
    pub map: Option<f64>,
    pub r1: Option<f64>,
    pub r5: Option<f64>,
    pub r10: Option<f64>,
}

pub const METRICS_CSV_HEADER: &str =
    "epoch,L_total,L_gpc_seq,L_gpc_ske,L_stpr_st,L_stpr_tr,mAP,R1,R5,R10";

impl EpochLog {
    pub fn csv_row(&self) -> String {
        let opt = |v: Option<f64>| v.map(|x| format!("{x}")).unwrap_or_default();
        format!(
            "{},{},{},{},{},{},{},{},{},{}",
            self.epoch,
            self.l_total,
            self.l_gpc_seq,
            self.l_gpc_ske,
            self.l_stpr_st,
            self.l_stpr_tr,
            opt(self.map),
            opt(self.r1),
            opt(self.r5),
            opt(self.r10)
        )
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct StepLosses {
    pub total: f64,
    pub gpc_seq: f64,
    pub gpc_ske: f64,
    pub stpr_st: f64,
    pub stpr_tr: f64,
}

pub struct TrainResult {
    pub checkpoint: Checkpoint,
    pub log: Vec<EpochLog>,
    /// Every step's total loss, for determinism and resume checks.
    pub step_losses: Vec<f64>,
    pub warnings: Vec<String>,
}

/// Builds the graph spec (with PE when enabled) for a dataset manifest.
pub fn graph_for(config: &TrainConfig, joints: usize, edges: &[(usize, usize)]) -> Result<SkeletonGraphSpec> {
    let spec = build_graph(joints, edges)?;
    if config.use_pe && config.pe_dim > 0 {
        compute_pe(spec, config.pe_dim)
    } else {
        Ok(spec)
    }
}

/// Selects rows of a (N x d) tape tensor by index, preserving gradient flow.
fn select_rows(tape: &mut Tape, x: Var, indices: &[usize]) -> Result<Var> {
    let n = tape.value(x).shape[0];
    let d = tape.value(x).shape[1];
    let mut sel = vec![0.0; indices.len() * n];
    for (row, &idx) in indices.iter().enumerate() {
        sel[row * n + idx] = 1.0;
    }
    let m = tape.constant(Tensor::new(vec![1, indices.len(), n], sel)?);
    let x3 = tape.reshape(x, vec![1, n, d])?;
    let picked = tape.bmm(m, x3)?;
    tape.reshape(picked, vec![indices.len(), d])
}

/// Externally supplied prototypes (dataset-level refresh mode).
pub struct FixedPrototypes {
    pub class_ids: Vec<i64>,
    pub matrix: Tensor,
}

/// Computes the full training objective for one SGT batch on a fresh tape.
/// Used by the training loop and by gradient checking (which needs the loss
/// as a pure function of the parameters given fixed masks and labels).
#[allow(clippy::too_many_arguments)]
pub fn sgt_batch_loss(
    tape: &mut Tape,
    binding: &mut Binding,
    params: &ParamSet,
    config: &TrainConfig,
    spec: &SkeletonGraphSpec,
    batch: &Batch,
    gpc_labels: Option<&[i64]>,
    plan: Option<&MaskPlan>,
    fixed_protos: Option<&FixedPrototypes>,
) -> Result<(Var, StepLosses, Vec<(String, Var)>)> {
    let sgt_cfg = config.sgt();
    let reps = encode(tape, binding, params, &sgt_cfg, spec, batch, true)?;
    let mut losses = StepLosses::default();

    let gpc = match gpc_labels {
        Some(labels) => {
            // Restrict to labeled rows (pseudo-label noise is excluded).
            let rows: Vec<usize> = labels
                .iter()
                .enumerate()
                .filter(|(_, &l)| l >= 0)
                .map(|(i, _)| i)
                .collect();
            let kept: Vec<i64> = rows.iter().map(|&i| labels[i]).collect();
            let seq = select_rows(tape, reps.sequence_reps, &rows)?;
            let protos = match fixed_protos {
                Some(fp) => PrototypeSet {
                    class_ids: fp.class_ids.clone(),
                    prototypes: tape.constant(fp.matrix.clone()),
                    counts: vec![],
                },
                None => compute_prototypes(tape, seq, &kept, config.detach_prototypes)?,
            };
            let l_seq = gpc_seq_loss(
                tape,
                seq,
                &kept,
                &protos,
                config.tau1,
                config.normalize_contrastive,
            )?;
            losses.gpc_seq = tape.value(l_seq).item();
            // Skeleton reps of the kept rows.
            let shape = tape.value(reps.skeleton_reps).shape.clone();
            let (b, f, d) = (shape[0], shape[1], shape[2]);
            let flat = tape.reshape(reps.skeleton_reps, vec![b * f, d])?;
            let frame_rows: Vec<usize> = rows
                .iter()
                .flat_map(|&r| (0..f).map(move |t| r * f + t))
                .collect();
            let ske_flat = select_rows(tape, flat, &frame_rows)?;
            let ske = tape.reshape(ske_flat, vec![rows.len(), f, d])?;
            let l_ske = gpc_ske_loss(
                tape,
                binding,
                params,
                ske,
                &kept,
                &protos,
                config.tau2,
                config.normalize_contrastive,
            )?;
            losses.gpc_ske = tape.value(l_ske).item();
            Some(gpc_loss(tape, l_seq, l_ske, config.alpha)?)
        }
        None => None,
    };

    let stpr = match plan {
        Some(plan) => {
            let l_st = stpr_structure(
                tape,
                binding,
                params,
                reps.node_reps,
                plan,
                &batch.frames,
            )?;
            let l_tr = stpr_trajectory(
                tape,
                binding,
                params,
                reps.node_reps,
                plan,
                &batch.frames,
            )?;
            losses.stpr_st = tape.value(l_st).item();
            losses.stpr_tr = tape.value(l_tr).item();
            Some(stpr_loss(tape, l_st, l_tr, config.beta)?)
        }
        None => None,
    };

    let total = match (gpc, stpr) {
        (Some(g), Some(s)) => total_loss(tape, g, s, config.lambda)?,
        (Some(g), None) => g,
        (None, Some(s)) => s,
        (None, None) => {
            return Err(TransgError::Contract(
                "a training step needs at least one objective".into(),
            ))
        }
    };
    losses.total = tape.value(total).item();
    Ok((total, losses, reps.bn_nodes))
}

fn class_map(sequences: &[SkeletonSequence]) -> Vec<i64> {
    let mut ids: Vec<i64> = sequences.iter().map(|s| s.identity).collect();
    ids.sort_unstable();
    ids.dedup();
    ids
}

fn dataset_prototypes(
    params: &ParamSet,
    config: &TrainConfig,
    spec: &SkeletonGraphSpec,
    train: &[SkeletonSequence],
) -> Result<FixedPrototypes> {
    let reps = embed_split(params, &config.sgt(), spec, train, 64)?;
    let d = config.d;
    let class_ids = class_map(train);
    let mut sums = vec![0.0; class_ids.len() * d];
    let mut counts = vec![0usize; class_ids.len()];
    for (i, s) in train.iter().enumerate() {
        let k = class_ids.binary_search(&s.identity).unwrap();
        counts[k] += 1;
        for j in 0..d {
            sums[k * d + j] += reps.data[i * d + j];
        }
    }
    for (k, &c) in counts.iter().enumerate() {
        for j in 0..d {
            sums[k * d + j] /= c as f64;
        }
    }
    Ok(FixedPrototypes {
        class_ids,
        matrix: Tensor::new(vec![counts.len(), d], sums)?,
    })
}

fn pc_flat_batch(tape: &mut Tape, batch: &Batch) -> Result<Var> {
    let n = batch.batch_size;
    let dim = batch.num_frames * batch.joints * 3;
    let t = Tensor::new(vec![n, dim], batch.frames.data.clone())?;
    Ok(tape.constant(t))
}

/// Linear-encoder representations for the PC ablation mode.
pub fn pc_embed(params: &ParamSet, sequences: &[SkeletonSequence]) -> Result<Tensor> {
    let w = &params.get("pc.w").unwrap().value;
    let b = &params.get("pc.b").unwrap().value;
    let d = w.shape[0];
    let dim = w.shape[1];
    let mut data = Vec::with_capacity(sequences.len() * d);
    for s in sequences {
        if s.flat().len() != dim {
            return Err(TransgError::Schema(format!(
                "PC encoder expects {dim} inputs, sequence {} has {}",
                s.source_id,
                s.flat().len()
            )));
        }
        for o in 0..d {
            let mut acc = b.data[o];
            for i in 0..dim {
                acc += w.data[o * dim + i] * s.flat()[i];
            }
            data.push(acc);
        }
    }
    Tensor::new(vec![sequences.len(), d], data)
}

/// Raw flattened coordinates (the baseline representation).
pub fn raw_embed(sequences: &[SkeletonSequence]) -> Result<Tensor> {
    if sequences.is_empty() {
        return Err(TransgError::Schema("no sequences".into()));
    }
    let dim = sequences[0].flat().len();
    let mut data = Vec::with_capacity(sequences.len() * dim);
    for s in sequences {
        data.extend_from_slice(s.flat());
    }
    Tensor::new(vec![sequences.len(), dim], data)
}

fn init_for_mode(config: &TrainConfig, dataset: &Dataset, rng: &mut SeededRng) -> Result<ParamSet> {
    let joints = dataset.manifest.joints;
    let f = dataset.manifest.f;
    match config.mode {
        TrainMode::Baseline => Ok(ParamSet::new()),
        TrainMode::Pc => {
            let dim = f * joints * 3;
            let mut p = ParamSet::new();
            let bound = 1.0 / (dim as f64).sqrt();
            let data = (0..config.d * dim).map(|_| rng.uniform(-bound, bound)).collect();
            p.add("pc.w", Tensor::new(vec![config.d, dim], data)?, true);
            p.add("pc.b", Tensor::zeros(&[config.d]), true);
            Ok(p)
        }
        TrainMode::SgtDs => {
            let classes = class_map(&dataset.train).len();
            init_params(
                &config.sgt(),
                joints,
                HeadOpts {
                    projection: false,
                    recon: None,
                    classifier: Some(classes),
                },
                rng,
            )
        }
        TrainMode::SgtGpc => init_params(
            &config.sgt(),
            joints,
            HeadOpts {
                projection: true,
                recon: None,
                classifier: None,
            },
            rng,
        ),
        TrainMode::SgtGpcStpr | TrainMode::Unsupervised => init_params(
            &config.sgt(),
            joints,
            HeadOpts {
                projection: true,
                recon: Some((joints, f)),
                classifier: None,
            },
            rng,
        ),
    }
}

/// Evaluates probe against gallery under the representation the mode defines.
pub fn evaluate(
    config: &TrainConfig,
    params: &ParamSet,
    spec: &SkeletonGraphSpec,
    dataset: &Dataset,
    cosine: bool,
) -> Result<RankingReport> {
    let probe_ids: Vec<i64> = dataset.probe.iter().map(|s| s.identity).collect();
    let gallery_ids: Vec<i64> = dataset.gallery.iter().map(|s| s.identity).collect();
    let (probe, gallery) = match config.mode {
        TrainMode::Baseline => (raw_embed(&dataset.probe)?, raw_embed(&dataset.gallery)?),
        TrainMode::Pc => (
            pc_embed(params, &dataset.probe)?,
            pc_embed(params, &dataset.gallery)?,
        ),
        _ => (
            embed_split(params, &config.sgt(), spec, &dataset.probe, 64)?,
            embed_split(params, &config.sgt(), spec, &dataset.gallery, 64)?,
        ),
    };
    match_reps(&probe, &gallery, &probe_ids, &gallery_ids, cosine)
}

fn check_dataset(config: &TrainConfig, dataset: &Dataset) -> Result<()> {
    if dataset.manifest.f != config.f {
        return Err(TransgError::Config(format!(
            "config f = {} does not match dataset f = {}",
            config.f, dataset.manifest.f
        )));
    }
    if config.mode.uses_stpr() && config.mask_nodes >= dataset.manifest.joints {
        return Err(TransgError::Config(format!(
            "a = {} must be < J = {}",
            config.mask_nodes, dataset.manifest.joints
        )));
    }
    if config.mode.needs_labels() && dataset.train.iter().any(|s| s.identity < 0) {
        return Err(TransgError::Config(format!(
            "mode {} requires labeled training data",
            config.mode.name()
        )));
    }
    if config.mode != TrainMode::Baseline && dataset.train.is_empty() {
        return Err(TransgError::Schema("no sequences".into()));
    }
    Ok(())
}

/// Runs (or resumes) training and returns the final checkpoint plus the
/// per-epoch log. Fully deterministic given (seed, config, data).
pub fn train(
    config: &TrainConfig,
    dataset: &Dataset,
    resume: Option<Checkpoint>,
) -> Result<TrainResult> {
    config.validate()?;
    check_dataset(config, dataset)?;
    let spec = graph_for(config, dataset.manifest.joints, &dataset.manifest.edges)?;

    let (mut params, mut adam, mut rng, start_epoch) = match resume {
        Some(ckpt) => {
            if ckpt.config != *config {
                return Err(TransgError::Checkpoint(
                    "resume config differs from checkpoint config".into(),
                ));
            }
            (
                ckpt.params,
                ckpt.adam,
                SeededRng::from_state(ckpt.rng_state),
                ckpt.epoch,
            )
        }
        None => {
            let mut rng = SeededRng::new(config.seed);
            let params = init_for_mode(config, dataset, &mut rng)?;
            (params, AdamState::new(config.lr), rng, 0)
        }
    };

    let mut log = Vec::new();
    let mut step_losses = Vec::new();
    let mut warnings = Vec::new();

    if config.mode == TrainMode::Baseline {
        // Nothing to train; the raw-feature representation is the model.
        return Ok(TrainResult {
            checkpoint: Checkpoint {
                config: config.clone(),
                params,
                adam,
                epoch: config.epochs,
                rng_state: rng.state(),
            },
            log,
            step_losses,
            warnings,
        });
    }

    let train_classes = class_map(&dataset.train);
    let steps_per_epoch = (dataset.train.len() / config.batch_size).max(1);
    let mut global_step = start_epoch * steps_per_epoch;

    for epoch in start_epoch..config.epochs {
        // Epoch-level label/prototype refresh.
        let pseudo: Option<Vec<i64>> = if config.mode == TrainMode::Unsupervised {
            let reps = embed_split(&params, &config.sgt(), &spec, &dataset.train, 64)?;
            let rows: Vec<Vec<f64>> = (0..dataset.train.len())
                .map(|i| reps.data[i * config.d..(i + 1) * config.d].to_vec())
                .collect();
            let labels = pseudo_label(&rows, config.dbscan_eps, config.dbscan_min_pts)?;
            let clusters = labels.iter().filter(|&&l| l >= 0).count();
            if clusters == 0 {
                warnings.push(format!(
                    "epoch {epoch}: DBSCAN marked all points noise; GPC skipped this epoch"
                ));
            }
            Some(labels)
        } else {
            None
        };
        let fixed_protos = if config.full_prototype_refresh
            && matches!(config.mode, TrainMode::SgtGpc | TrainMode::SgtGpcStpr)
        {
            Some(dataset_prototypes(&params, config, &spec, &dataset.train)?)
        } else {
            None
        };

        let mut sums = StepLosses::default();
        for _ in 0..steps_per_epoch {
            let losses = match config.mode {
                TrainMode::Pc => {
                    let batch = sample_batch(
                        &dataset.train,
                        config.batch_size.min(dataset.train.len()),
                        SamplingMode::Supervised {
                            k_per_id: config.k_per_id,
                        },
                        &mut rng,
                    )?;
                    pc_step(&mut params, &mut adam, config, &batch)?
                }
                TrainMode::SgtDs => {
                    let batch = sample_batch(
                        &dataset.train,
                        config.batch_size.min(dataset.train.len()),
                        SamplingMode::Supervised {
                            k_per_id: config.k_per_id,
                        },
                        &mut rng,
                    )?;
                    ds_step(&mut params, &mut adam, config, &spec, &batch, &train_classes)?
                }
                TrainMode::SgtGpc | TrainMode::SgtGpcStpr => {
                    let batch = sample_batch(
                        &dataset.train,
                        config.batch_size.min(dataset.train.len()),
                        SamplingMode::Supervised {
                            k_per_id: config.k_per_id,
                        },
                        &mut rng,
                    )?;
                    let plan = if config.mode.uses_stpr() {
                        Some(sample_mask_plan(
                            batch.batch_size,
                            batch.num_frames,
                            batch.joints,
                            config.mask_nodes,
                            config.mask_frames,
                            &mut rng,
                        )?)
                    } else {
                        None
                    };
                    sgt_step(
                        &mut params,
                        &mut adam,
                        config,
                        &spec,
                        &batch,
                        Some(batch.labels.as_slice()),
                        plan.as_ref(),
                        fixed_protos.as_ref(),
                        false,
                    )?
                }
                TrainMode::Unsupervised => {
                    let labels = pseudo.as_ref().unwrap();
                    let n = config.batch_size.min(dataset.train.len());
                    let picks: Vec<usize> =
                        (0..n).map(|_| rng.below(dataset.train.len())).collect();
                    let refs: Vec<&SkeletonSequence> =
                        picks.iter().map(|&i| &dataset.train[i]).collect();
                    let batch = stack_batch(&refs)?;
                    let batch_labels: Vec<i64> = picks.iter().map(|&i| labels[i]).collect();
                    let distinct: std::collections::HashSet<i64> = batch_labels
                        .iter()
                        .copied()
                        .filter(|&l| l >= 0)
                        .collect();
                    let gpc_labels = if distinct.len() >= 2 {
                        Some(batch_labels)
                    } else {
                        None
                    };
                    let plan = sample_mask_plan(
                        batch.batch_size,
                        batch.num_frames,
                        batch.joints,
                        config.mask_nodes,
                        config.mask_frames,
                        &mut rng,
                    )?;
                    sgt_step(
                        &mut params,
                        &mut adam,
                        config,
                        &spec,
                        &batch,
                        gpc_labels.as_deref(),
                        Some(&plan),
                        None,
                        true,
                    )?
                }
                TrainMode::Baseline => unreachable!(),
            };
            if !losses.total.is_finite() {
                return Err(TransgError::Divergence {
                    step: global_step,
                    value: losses.total,
                });
            }
            step_losses.push(losses.total);
            sums.total += losses.total;
            sums.gpc_seq += losses.gpc_seq;
            sums.gpc_ske += losses.gpc_ske;
            sums.stpr_st += losses.stpr_st;
            sums.stpr_tr += losses.stpr_tr;
            global_step += 1;
        }

        let n = steps_per_epoch as f64;
        let mut entry = EpochLog {
            epoch,
            l_total: sums.total / n,
            l_gpc_seq: sums.gpc_seq / n,
            l_gpc_ske: sums.gpc_ske / n,
            l_stpr_st: sums.stpr_st / n,
            l_stpr_tr: sums.stpr_tr / n,
            map: None,
            r1: None,
            r5: None,
            r10: None,
        };
        if config.eval_every > 0
            && (epoch + 1) % config.eval_every == 0
            && !dataset.probe.is_empty()
            && !dataset.gallery.is_empty()
        {
            let report = evaluate(config, &params, &spec, dataset, false)?;
            entry.map = Some(report.mean_ap);
            entry.r1 = Some(report.rank1);
            entry.r5 = Some(report.rank5);
            entry.r10 = Some(report.rank10);
        }
        log.push(entry);
    }

    Ok(TrainResult {
        checkpoint: Checkpoint {
            config: config.clone(),
            params,
            adam,
            epoch: config.epochs,
            rng_state: rng.state(),
        },
        log,
        step_losses,
        warnings,
    })
}

#[allow(clippy::too_many_arguments)]
fn sgt_step(
    params: &mut ParamSet,
    adam: &mut AdamState,
    config: &TrainConfig,
    spec: &SkeletonGraphSpec,
    batch: &Batch,
    gpc_labels: Option<&[i64]>,
    plan: Option<&MaskPlan>,
    fixed_protos: Option<&FixedPrototypes>,
    fill_missing: bool,
) -> Result<StepLosses> {
    let mut tape = Tape::new();
    let mut binding = Binding::new();
    let (total, losses, bn_nodes) = sgt_batch_loss(
        &mut tape,
        &mut binding,
        params,
        config,
        spec,
        batch,
        gpc_labels,
        plan,
        fixed_protos,
    )?;
    tape.backward(total)?;
    binding.pull_grads(&tape, params)?;
    if fill_missing {
        // Unsupervised steps that skip GPC leave the projection heads without
        // gradients; zero-fill so the optimizer contract holds.
        let zero_fill: Vec<(String, Tensor)> = params
            .iter()
            .filter(|p| p.trainable && p.grad.is_none())
            .map(|p| (p.name.clone(), Tensor::zeros(&p.value.shape)))
            .collect();
        for (name, z) in zero_fill {
            params.accumulate_grad(&name, &z)?;
        }
    }
    adam.step(params)?;
    params.zero_grads();
    update_running_stats(params, &tape, &bn_nodes);
    Ok(losses)
}

fn ds_step(
    params: &mut ParamSet,
    adam: &mut AdamState,
    config: &TrainConfig,
    spec: &SkeletonGraphSpec,
    batch: &Batch,
    classes: &[i64],
) -> Result<StepLosses> {
    let mut tape = Tape::new();
    let mut binding = Binding::new();
    let reps = encode(
        &mut tape,
        &mut binding,
        params,
        &config.sgt(),
        spec,
        batch,
        true,
    )?;
    let w = binding.bind(&mut tape, params, "cls.w");
    let b = binding.bind(&mut tape, params, "cls.b");
    let logits = tape.linear(w, reps.sequence_reps)?;
    let logits = tape.add_bias(logits, b)?;
    let targets: Vec<usize> = batch
        .labels
        .iter()
        .map(|l| {
            classes
                .binary_search(l)
                .map_err(|_| TransgError::Contract(format!("unknown class {l}")))
        })
        .collect::<Result<_>>()?;
    let loss = tape.nll_loss(logits, &targets)?;
    let value = tape.value(loss).item();
    tape.backward(loss)?;
    binding.pull_grads(&tape, params)?;
    adam.step(params)?;
    params.zero_grads();
    update_running_stats(params, &tape, &reps.bn_nodes);
    Ok(StepLosses {
        total: value,
        ..Default::default()
    })
}

fn pc_step(
    params: &mut ParamSet,
    adam: &mut AdamState,
    config: &TrainConfig,
    batch: &Batch,
) -> Result<StepLosses> {
    let mut tape = Tape::new();
    let mut binding = Binding::new();
    let x = pc_flat_batch(&mut tape, batch)?;
    let w = binding.bind(&mut tape, params, "pc.w");
    let b = binding.bind(&mut tape, params, "pc.b");
    let lin = tape.linear(w, x)?;
    let seq = tape.add_bias(lin, b)?;
    let protos = compute_prototypes(&mut tape, seq, &batch.labels, config.detach_prototypes)?;
    let loss = gpc_seq_loss(
        &mut tape,
        seq,
        &batch.labels,
        &protos,
        config.tau1,
        config.normalize_contrastive,
    )?;
    let value = tape.value(loss).item();
    tape.backward(loss)?;
    binding.pull_grads(&tape, params)?;
    adam.step(params)?;
    params.zero_grads();
    Ok(StepLosses {
        total: value,
        gpc_seq: value,
        ..Default::default()
    })
}

/// One evaluation row of the ablation table.
#[derive(Debug, Clone, Serialize)]
pub struct AblationRow {
    pub mode: String,
    pub map: f64,
    pub rank1: f64,
    pub rank5: f64,
    pub rank10: f64,
}

/// Trains and evaluates the five ablation configurations on the same splits,
/// in table order: baseline, pc, sgt_ds, sgt_gpc, sgt_gpc_stpr.
pub fn train_ablation_suite(base: &TrainConfig, dataset: &Dataset) -> Result<Vec<AblationRow>> {
    let modes = [
        TrainMode::Baseline,
        TrainMode::Pc,
        TrainMode::SgtDs,
        TrainMode::SgtGpc,
        TrainMode::SgtGpcStpr,
    ];
    let mut rows = Vec::with_capacity(modes.len());
    for mode in modes {
        let mut config = base.clone();
        config.mode = mode;
        let result = train(&config, dataset, None)?;
        let spec = graph_for(&config, dataset.manifest.joints, &dataset.manifest.edges)?;
        let report = evaluate(&config, &result.checkpoint.params, &spec, dataset, false)?;
        rows.push(AblationRow {
            mode: mode.name().to_string(),
            map: report.mean_ap,
            rank1: report.rank1,
            rank5: report.rank5,
            rank10: report.rank10,
        });
    }
    Ok(rows)
}

/// Identity histogram of a pool, exposed for sampling diagnostics.
pub fn identity_histogram(sequences: &[SkeletonSequence]) -> HashMap<i64, usize> {
    let mut h = HashMap::new();
    for s in sequences {
        *h.entry(s.identity).or_insert(0) += 1;
    }
    h
}
