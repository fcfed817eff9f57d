//! Command-line interface: synthetic data generation, training, evaluation,
//! embedding export, gradient checking, and the ablation table.
//!
//! Errors are printed to stderr as one JSON object and exit nonzero. The
//! `TRANSG_THREADS` environment variable caps worker-thread parallelism.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};

use transg::evalrank::embed_split;
use transg::graphpe::build_graph;
use transg::numerics::SeededRng;
use transg::skeledata::{generate_synthetic, load_dataset, write_dataset, SkeletonSequence};
use transg::trainer::{
    evaluate, gradient_check, graph_for, load_checkpoint, save_checkpoint, train,
    train_ablation_suite, TrainConfig, METRICS_CSV_HEADER,
};

#[derive(Parser)]
#[command(name = "transg", version, about = "Skeleton-based person re-identification")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic gait dataset (manifest + JSONL splits).
    Synth {
        /// Number of identities.
        #[arg(long, default_value_t = 10)]
        ids: usize,
        /// Training sequences per identity.
        #[arg(long, default_value_t = 20)]
        seqs: usize,
        /// Probe sequences per identity.
        #[arg(long, default_value_t = 5)]
        probe: usize,
        /// Gallery sequences per identity.
        #[arg(long, default_value_t = 5)]
        gallery: usize,
        /// Frames per sequence.
        #[arg(long, default_value_t = 6)]
        frames: usize,
        /// Skeleton topology: kinect20, kinect25, or path<N>.
        #[arg(long, default_value = "kinect20")]
        graph: String,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Output directory.
        #[arg(long)]
        out: PathBuf,
        /// Write into a non-empty directory.
        #[arg(long)]
        force: bool,
    },
    /// Train a model and write a checkpoint directory plus metrics CSV.
    Train {
        /// JSON training configuration (unknown keys are rejected).
        #[arg(long)]
        config: Option<PathBuf>,
        /// Dataset manifest.
        #[arg(long)]
        data: PathBuf,
        /// Output directory for checkpoint/ and metrics.csv.
        #[arg(long)]
        out: PathBuf,
        /// Resume from an existing checkpoint directory.
        #[arg(long)]
        resume: Option<PathBuf>,
        #[command(flatten)]
        overrides: Overrides,
    },
    /// Evaluate a checkpoint on a dataset's probe/gallery splits.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        manifest: PathBuf,
    },
    /// Export sequence representations of one split as CSV.
    Embed {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        manifest: PathBuf,
        /// One of: train, probe, gallery.
        #[arg(long)]
        split: String,
        #[arg(long)]
        out: PathBuf,
    },
    /// Validate analytic gradients against finite differences.
    Gradcheck {
        /// Optional configuration; defaults to a small fixture.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value_t = 1e-4)]
        tolerance: f64,
    },
    /// Train and evaluate all ablation modes; write a 5-row CSV.
    Ablate {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        data: PathBuf,
        /// Optional CSV output path (always printed to stdout).
        #[arg(long)]
        out: Option<PathBuf>,
        #[command(flatten)]
        overrides: Overrides,
    },
}

/// Flags that override values from the configuration file.
#[derive(Parser)]
struct Overrides {
    #[arg(long)]
    mode: Option<String>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    eval_every: Option<usize>,
}

impl Overrides {
    fn apply(&self, config: &mut TrainConfig) -> Result<()> {
        if let Some(mode) = &self.mode {
            config.mode = serde_json::from_value(serde_json::Value::String(mode.clone()))
                .with_context(|| format!("unknown mode {mode}"))?;
        }
        if let Some(v) = self.epochs {
            config.epochs = v;
        }
        if let Some(v) = self.seed {
            config.seed = v;
        }
        if let Some(v) = self.lr {
            config.lr = v;
        }
        if let Some(v) = self.batch_size {
            config.batch_size = v;
        }
        if let Some(v) = self.eval_every {
            config.eval_every = v;
        }
        Ok(())
    }
}

fn builtin_graph(name: &str) -> Result<(usize, Vec<(usize, usize)>)> {
    match name {
        // 20-joint skeleton: torso chain with four limb chains.
        "kinect20" => Ok((
            20,
            vec![
                (0, 1), (1, 2), (2, 3),
                (2, 4), (4, 5), (5, 6), (6, 7),
                (2, 8), (8, 9), (9, 10), (10, 11),
                (0, 12), (12, 13), (13, 14), (14, 15),
                (0, 16), (16, 17), (17, 18), (18, 19),
            ],
        )),
        // 25-joint skeleton: adds spine-shoulder, hand tips, and thumbs.
        "kinect25" => Ok((
            25,
            vec![
                (0, 1), (1, 20), (20, 2), (2, 3),
                (20, 4), (4, 5), (5, 6), (6, 7), (7, 21), (6, 22),
                (20, 8), (8, 9), (9, 10), (10, 11), (11, 23), (10, 24),
                (0, 12), (12, 13), (13, 14), (14, 15),
                (0, 16), (16, 17), (17, 18), (18, 19),
            ],
        )),
        other => {
            if let Some(n) = other.strip_prefix("path") {
                let n: usize = n.parse().with_context(|| format!("unknown graph {other}"))?;
                if n < 2 {
                    bail!("path graph needs >= 2 joints");
                }
                return Ok((n, (0..n - 1).map(|i| (i, i + 1)).collect()));
            }
            bail!("unknown graph {other} (expected kinect20, kinect25, or path<N>)")
        }
    }
}

fn load_config(path: Option<&Path>) -> Result<TrainConfig> {
    match path {
        Some(p) => {
            let file = fs::File::open(p).with_context(|| format!("opening {}", p.display()))?;
            let config: TrainConfig = serde_json::from_reader(file)
                .with_context(|| format!("parsing {}", p.display()))?;
            Ok(config)
        }
        None => Ok(TrainConfig::default()),
    }
}

fn init_threads() -> Result<()> {
    if let Ok(raw) = std::env::var("TRANSG_THREADS") {
        let n: usize = raw
            .parse()
            .with_context(|| format!("TRANSG_THREADS must be a positive integer, got {raw:?}"))?;
        if n == 0 {
            bail!("TRANSG_THREADS must be >= 1");
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .context("initializing worker threads")?;
    }
    Ok(())
}

fn run_synth(
    ids: usize,
    seqs: usize,
    probe: usize,
    gallery: usize,
    frames: usize,
    graph: &str,
    seed: u64,
    out: &Path,
    force: bool,
) -> Result<()> {
    if out.exists() && out.read_dir().map(|mut d| d.next().is_some()).unwrap_or(false) && !force {
        bail!(
            "output directory {} is not empty (pass --force to overwrite)",
            out.display()
        );
    }
    let (joints, edges) = builtin_graph(graph)?;
    let spec = build_graph(joints, &edges)?;
    let mut rng = SeededRng::new(seed);
    // One generator pass per split keeps identity templates shared: the
    // generator is deterministic in (rng state), so splits are drawn from the
    // same identities by generating all sequences at once and partitioning.
    let per_id = seqs + probe + gallery;
    let all = generate_synthetic(ids, per_id, frames, &spec, &mut rng)?;
    let mut train_s: Vec<SkeletonSequence> = Vec::new();
    let mut probe_s: Vec<SkeletonSequence> = Vec::new();
    let mut gallery_s: Vec<SkeletonSequence> = Vec::new();
    for (i, s) in all.into_iter().enumerate() {
        match i % per_id {
            k if k < seqs => train_s.push(s),
            k if k < seqs + probe => probe_s.push(s),
            _ => gallery_s.push(s),
        }
    }
    let manifest = write_dataset(
        out,
        &format!("synth-{graph}"),
        joints,
        frames,
        &edges,
        0,
        &[
            ("train", train_s.as_slice()),
            ("probe", probe_s.as_slice()),
            ("gallery", gallery_s.as_slice()),
        ],
    )?;
    println!("wrote {}", manifest.display());
    Ok(())
}

fn run_train(
    config_path: Option<&Path>,
    data: &Path,
    out: &Path,
    resume: Option<&Path>,
    overrides: &Overrides,
) -> Result<()> {
    let mut config = load_config(config_path)?;
    overrides.apply(&mut config)?;
    let dataset = load_dataset(data)?;
    let resume_ckpt = match resume {
        Some(dir) => Some(load_checkpoint(dir)?),
        None => None,
    };
    let result = train(&config, &dataset, resume_ckpt)?;
    for w in &result.warnings {
        eprintln!("warning: {w}");
    }
    fs::create_dir_all(out)?;
    save_checkpoint(&out.join("checkpoint"), &result.checkpoint)?;
    let mut csv = String::from(METRICS_CSV_HEADER);
    csv.push('\n');
    for entry in &result.log {
        csv.push_str(&entry.csv_row());
        csv.push('\n');
    }
    fs::write(out.join("metrics.csv"), csv)?;
    if let Some(last) = result.log.last() {
        println!(
            "trained {} epochs, final loss {:.6}",
            result.log.len(),
            last.l_total
        );
    } else {
        println!("nothing to train for mode {}", config.mode.name());
    }
    println!("checkpoint: {}", out.join("checkpoint").display());
    Ok(())
}

fn run_eval(checkpoint: &Path, manifest: &Path) -> Result<()> {
    let ckpt = load_checkpoint(checkpoint)?;
    let dataset = load_dataset(manifest)?;
    let spec = graph_for(&ckpt.config, dataset.manifest.joints, &dataset.manifest.edges)?;
    let report = evaluate(&ckpt.config, &ckpt.params, &spec, &dataset, false)?;
    println!(
        "{}",
        serde_json::json!({
            "mAP": report.mean_ap,
            "R1": report.rank1,
            "R5": report.rank5,
            "R10": report.rank10,
            "probes": report.per_probe.len(),
            "excluded_probes": report.excluded_probes,
        })
    );
    Ok(())
}

fn run_embed(checkpoint: &Path, manifest: &Path, split: &str, out: &Path) -> Result<()> {
    let ckpt = load_checkpoint(checkpoint)?;
    let dataset = load_dataset(manifest)?;
    let sequences = match split {
        "train" => &dataset.train,
        "probe" => &dataset.probe,
        "gallery" => &dataset.gallery,
        other => bail!("unknown split {other} (expected train, probe, or gallery)"),
    };
    if sequences.is_empty() {
        bail!("split {split} is empty");
    }
    let spec = graph_for(&ckpt.config, dataset.manifest.joints, &dataset.manifest.edges)?;
    let reps = embed_split(&ckpt.params, &ckpt.config.sgt(), &spec, sequences, 64)?;
    let d = ckpt.config.d;
    let mut csv = String::from("source_id,identity");
    for i in 0..d {
        csv.push_str(&format!(",e{i}"));
    }
    csv.push('\n');
    for (i, s) in sequences.iter().enumerate() {
        csv.push_str(&format!("{},{}", s.source_id, s.identity));
        for v in &reps.data[i * d..(i + 1) * d] {
            csv.push_str(&format!(",{v}"));
        }
        csv.push('\n');
    }
    fs::write(out, csv)?;
    println!("wrote {} representations to {}", sequences.len(), out.display());
    Ok(())
}

fn run_gradcheck(config_path: Option<&Path>, tolerance: f64) -> Result<()> {
    let config = match config_path {
        Some(p) => load_config(Some(p))?,
        None => TrainConfig {
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
        },
    };
    // Path skeleton with one joint per 5 embedding dims keeps the fixture small.
    let joints = 4;
    let edges: Vec<(usize, usize)> = (0..joints - 1).map(|i| (i, i + 1)).collect();
    let report = gradient_check(&config, joints, &edges, tolerance)?;
    println!("{:<24} {:>12} {:>8}", "parameter", "max_rel_err", "result");
    for g in &report.groups {
        println!(
            "{:<24} {:>12.3e} {:>8}",
            g.name,
            g.max_rel_err,
            if g.max_rel_err < tolerance { "pass" } else { "FAIL" }
        );
    }
    println!(
        "overall max relative error {:.3e} (tolerance {:.1e}): {}",
        report.max_rel_err,
        tolerance,
        if report.pass { "pass" } else { "FAIL" }
    );
    if !report.pass {
        bail!("gradient check failed");
    }
    Ok(())
}

fn run_ablate(
    config_path: Option<&Path>,
    data: &Path,
    out: Option<&Path>,
    overrides: &Overrides,
) -> Result<()> {
    let mut config = load_config(config_path)?;
    overrides.apply(&mut config)?;
    let dataset = load_dataset(data)?;
    let rows = train_ablation_suite(&config, &dataset)?;
    let mut csv = String::from("mode,mAP,R1,R5,R10\n");
    for r in &rows {
        csv.push_str(&format!("{},{},{},{},{}\n", r.mode, r.map, r.rank1, r.rank5, r.rank10));
    }
    print!("{csv}");
    if let Some(path) = out {
        fs::write(path, &csv)?;
    }
    Ok(())
}

fn run() -> Result<()> {
    init_threads()?;
    let cli = Cli::parse();
    match cli.command {
        Command::Synth {
            ids,
            seqs,
            probe,
            gallery,
            frames,
            graph,
            seed,
            out,
            force,
        } => run_synth(ids, seqs, probe, gallery, frames, &graph, seed, &out, force),
        Command::Train {
            config,
            data,
            out,
            resume,
            overrides,
        } => run_train(config.as_deref(), &data, &out, resume.as_deref(), &overrides),
        Command::Eval {
            checkpoint,
            manifest,
        } => run_eval(&checkpoint, &manifest),
        Command::Embed {
            checkpoint,
            manifest,
            split,
            out,
        } => run_embed(&checkpoint, &manifest, &split, &out),
        Command::Gradcheck { config, tolerance } => run_gradcheck(config.as_deref(), tolerance),
        Command::Ablate {
            config,
            data,
            out,
            overrides,
        } => run_ablate(config.as_deref(), &data, out.as_deref(), &overrides),
    }
}

fn main() {
    if let Err(e) = run() {
        eprintln!(
            "{}",
            serde_json::json!({ "error": format!("{e:#}") })
        );
        std::process::exit(1);
    }
}
