//! Skeleton sequence data model: file ingestion, synthetic gait generation,
//! and identity-aware batch sampling.
//!
//! On-disk formats:
//! - Manifest: JSON `{name, J, f, edges, root_joint, files: {train, probe, gallery}}`.
//! - Sequence files: JSON Lines, one recording per line:
//!   `{"id": <int>, "frames": [[[x,y,z] x J] x T]}`, coordinates in meters.

use std::collections::HashMap;
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Result, TransgError};
use crate::graphpe::{validate_edges, SkeletonGraphSpec};
use crate::numerics::{SeededRng, Tensor};

/// One fixed-length skeleton clip: f frames of J joints in 3D.
#[derive(Debug, Clone)]
pub struct SkeletonSequence {
    /// Row-major f x J x 3 coordinates in meters.
    pub frames: Vec<f64>,
    pub num_frames: usize,
    pub joints: usize,
    /// Identity label in 1..=C, or -1 for unlabeled.
    pub identity: i64,
    pub source_id: String,
}

impl SkeletonSequence {
    pub fn new(
        frames: Vec<f64>,
        num_frames: usize,
        joints: usize,
        identity: i64,
        source_id: String,
    ) -> Result<Self> {
        if num_frames == 0 {
            return Err(TransgError::Schema("sequence with zero frames".into()));
        }
        if frames.len() != num_frames * joints * 3 {
            return Err(TransgError::Schema(format!(
                "sequence {source_id}: {} coordinates for {num_frames} frames x {joints} joints",
                frames.len()
            )));
        }
        if frames.iter().any(|v| !v.is_finite()) {
            return Err(TransgError::Schema(format!(
                "sequence {source_id}: non-finite coordinate"
            )));
        }
        Ok(Self {
            frames,
            num_frames,
            joints,
            identity,
            source_id,
        })
    }

    pub fn coord(&self, t: usize, j: usize, axis: usize) -> f64 {
        self.frames[(t * self.joints + j) * 3 + axis]
    }

    /// Flattened f*J*3 vector, the raw-feature view used by the baseline and
    /// PC ablation modes.
    pub fn flat(&self) -> &[f64] {
        &self.frames
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, Default)]
pub struct SplitFiles {
    #[serde(default)]
    pub train: Vec<String>,
    #[serde(default)]
    pub probe: Vec<String>,
    #[serde(default)]
    pub gallery: Vec<String>,
}

/// Dataset description: graph topology, sequence length, and split files.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetManifest {
    pub name: String,
    #[serde(rename = "J")]
    pub joints: usize,
    pub f: usize,
    pub edges: Vec<(usize, usize)>,
    pub root_joint: usize,
    pub files: SplitFiles,
}

impl DatasetManifest {
    pub fn validate(&self) -> Result<()> {
        if self.f == 0 {
            return Err(TransgError::Config("manifest f must be >= 1".into()));
        }
        if self.root_joint >= self.joints {
            return Err(TransgError::Config(format!(
                "root_joint {} out of range for J={}",
                self.root_joint, self.joints
            )));
        }
        validate_edges(self.joints, &self.edges)
    }
}

/// A loaded dataset with its three splits already windowed to length f.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub manifest: DatasetManifest,
    pub train: Vec<SkeletonSequence>,
    pub probe: Vec<SkeletonSequence>,
    pub gallery: Vec<SkeletonSequence>,
    /// Recordings shorter than f that were dropped during windowing.
    pub dropped_short: usize,
}

#[derive(Debug, Deserialize, Serialize)]
struct RawRecording {
    id: i64,
    frames: Vec<Vec<[f64; 3]>>,
}

fn window_recording(
    rec: &RawRecording,
    manifest: &DatasetManifest,
    root_center: bool,
    source: &str,
    out: &mut Vec<SkeletonSequence>,
) -> Result<bool> {
    let f = manifest.f;
    let j = manifest.joints;
    for (t, frame) in rec.frames.iter().enumerate() {
        if frame.len() != j {
            return Err(TransgError::Schema(format!(
                "{source}: frame {t} has {} joints, manifest says J={j}",
                frame.len()
            )));
        }
    }
    if rec.frames.len() < f {
        return Ok(false);
    }
    let windows = rec.frames.len() / f;
    for w in 0..windows {
        let mut coords = Vec::with_capacity(f * j * 3);
        for t in 0..f {
            let frame = &rec.frames[w * f + t];
            let root = frame[manifest.root_joint];
            for joint in frame {
                for axis in 0..3 {
                    let v = joint[axis] - if root_center { root[axis] } else { 0.0 };
                    coords.push(v);
                }
            }
        }
        out.push(SkeletonSequence::new(
            coords,
            f,
            j,
            rec.id,
            format!("{source}#w{w}"),
        )?);
    }
    Ok(true)
}

fn load_split(
    dir: &Path,
    files: &[String],
    manifest: &DatasetManifest,
    root_center: bool,
    dropped: &mut usize,
) -> Result<Vec<SkeletonSequence>> {
    let mut out = Vec::new();
    for file in files {
        let path = dir.join(file);
        let reader = BufReader::new(fs::File::open(&path)?);
        for (lineno, line) in reader.lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let rec: RawRecording =
                serde_json::from_str(&line).map_err(|e| TransgError::Parse {
                    path: path.display().to_string(),
                    line: lineno + 1,
                    msg: e.to_string(),
                })?;
            let source = format!("{}:{}", path.display(), lineno + 1);
            let kept = window_recording(&rec, manifest, root_center, &source, &mut out)?;
            if !kept {
                *dropped += 1;
            }
        }
    }
    Ok(out)
}

/// Loads a manifest and all referenced sequence files, windowing recordings
/// into non-overlapping length-f clips and (by default) root-centering each
/// frame.
pub fn load_dataset(manifest_path: &Path) -> Result<Dataset> {
    load_dataset_opts(manifest_path, true)
}

pub fn load_dataset_opts(manifest_path: &Path, root_center: bool) -> Result<Dataset> {
    let manifest: DatasetManifest = serde_json::from_reader(fs::File::open(manifest_path)?)?;
    manifest.validate()?;
    let dir = manifest_path.parent().unwrap_or_else(|| Path::new("."));
    let mut dropped = 0;
    let train = load_split(dir, &manifest.files.train, &manifest, root_center, &mut dropped)?;
    let probe = load_split(dir, &manifest.files.probe, &manifest, root_center, &mut dropped)?;
    let gallery = load_split(
        dir,
        &manifest.files.gallery,
        &manifest,
        root_center,
        &mut dropped,
    )?;
    if train.is_empty() && probe.is_empty() && gallery.is_empty() {
        return Err(TransgError::Schema("no sequences".into()));
    }
    if !probe.is_empty() && !gallery.is_empty() {
        let gallery_ids: std::collections::HashSet<i64> =
            gallery.iter().map(|s| s.identity).collect();
        if !probe.iter().any(|s| gallery_ids.contains(&s.identity)) {
            return Err(TransgError::Schema(
                "probe and gallery identities do not overlap; evaluation would be vacuous".into(),
            ));
        }
    }
    Ok(Dataset {
        manifest,
        train,
        probe,
        gallery,
        dropped_short: dropped,
    })
}

/// Synthetic gait generator. Each identity gets a fixed bone-length profile
/// (limb scales in [0.85, 1.15]) and a per-joint sinusoid gait signature;
/// sequences are the template animated over f frames with a random phase
/// offset plus Gaussian coordinate noise.
pub fn generate_synthetic(
    n_ids: usize,
    seqs_per_id: usize,
    f: usize,
    spec: &SkeletonGraphSpec,
    rng: &mut SeededRng,
) -> Result<Vec<SkeletonSequence>> {
    generate_synthetic_with(n_ids, seqs_per_id, f, spec, rng, 0.01)
}

pub fn generate_synthetic_with(
    n_ids: usize,
    seqs_per_id: usize,
    f: usize,
    spec: &SkeletonGraphSpec,
    rng: &mut SeededRng,
    noise_sigma: f64,
) -> Result<Vec<SkeletonSequence>> {
    if n_ids < 2 {
        return Err(TransgError::Config(
            "synthetic generation needs n_ids >= 2 (re-ID is vacuous otherwise)".into(),
        ));
    }
    let j = spec.joints;

    // Skeleton layout shared by all identities: a spanning tree from joint 0
    // with one random unit direction per tree edge.
    let order = bfs_tree(spec);
    let mut directions: HashMap<(usize, usize), [f64; 3]> = HashMap::new();
    for &(parent, child) in &order {
        let mut d = [rng.normal(), rng.normal(), rng.normal()];
        let n = (d[0] * d[0] + d[1] * d[1] + d[2] * d[2]).sqrt().max(1e-9);
        for v in d.iter_mut() {
            *v /= n;
        }
        directions.insert((parent, child), d);
    }

    let mut sequences = Vec::with_capacity(n_ids * seqs_per_id);
    for id in 1..=n_ids as i64 {
        // Identity template: scaled bone lengths.
        let bone_scales: Vec<f64> = order.iter().map(|_| rng.uniform(0.85, 1.15)).collect();
        let mut template = vec![[0.0f64; 3]; j];
        for (b, &(parent, child)) in order.iter().enumerate() {
            let d = directions[&(parent, child)];
            let len = 0.3 * bone_scales[b];
            for axis in 0..3 {
                template[child][axis] = template[parent][axis] + len * d[axis];
            }
        }
        // Gait signature: per joint-coordinate sinusoid amplitude and phase.
        let mut amp = vec![[0.0f64; 3]; j];
        let mut phase = vec![[0.0f64; 3]; j];
        for joint in 0..j {
            for axis in 0..3 {
                amp[joint][axis] = rng.uniform(0.01, 0.06);
                phase[joint][axis] = rng.uniform(0.0, std::f64::consts::TAU);
            }
        }
        for s in 0..seqs_per_id {
            let offset = rng.uniform(0.0, std::f64::consts::TAU);
            let mut coords = Vec::with_capacity(f * j * 3);
            for t in 0..f {
                let angle = std::f64::consts::TAU * t as f64 / f as f64 + offset;
                for joint in 0..j {
                    for axis in 0..3 {
                        let mut v = template[joint][axis]
                            + amp[joint][axis] * (angle + phase[joint][axis]).sin();
                        if noise_sigma > 0.0 {
                            v += noise_sigma * rng.normal();
                        }
                        coords.push(v);
                    }
                }
            }
            sequences.push(SkeletonSequence::new(
                coords,
                f,
                j,
                id,
                format!("synth-{id}-{s}"),
            )?);
        }
    }
    Ok(sequences)
}

fn bfs_tree(spec: &SkeletonGraphSpec) -> Vec<(usize, usize)> {
    let j = spec.joints;
    let mut adj = vec![Vec::new(); j];
    for &(a, b) in &spec.edges {
        adj[a].push(b);
        adj[b].push(a);
    }
    for nbrs in adj.iter_mut() {
        nbrs.sort_unstable();
    }
    let mut visited = vec![false; j];
    let mut order = Vec::new();
    // Cover every component so disconnected graphs still get a layout.
    for start in 0..j {
        if visited[start] {
            continue;
        }
        visited[start] = true;
        let mut queue = std::collections::VecDeque::from([start]);
        while let Some(node) = queue.pop_front() {
            for &next in &adj[node] {
                if !visited[next] {
                    visited[next] = true;
                    order.push((node, next));
                    queue.push_back(next);
                }
            }
        }
    }
    order
}

/// A stacked training batch.
#[derive(Debug, Clone)]
pub struct Batch {
    /// B x f x J x 3 coordinates.
    pub frames: Tensor,
    pub labels: Vec<i64>,
    pub batch_size: usize,
    pub num_frames: usize,
    pub joints: usize,
}

pub fn stack_batch(sequences: &[&SkeletonSequence]) -> Result<Batch> {
    if sequences.is_empty() {
        return Err(TransgError::Sampling("cannot stack an empty batch".into()));
    }
    let f = sequences[0].num_frames;
    let j = sequences[0].joints;
    let mut data = Vec::with_capacity(sequences.len() * f * j * 3);
    let mut labels = Vec::with_capacity(sequences.len());
    for s in sequences {
        if s.num_frames != f || s.joints != j {
            return Err(TransgError::Schema(format!(
                "inconsistent sequence shape in batch: {} has {}x{}",
                s.source_id, s.num_frames, s.joints
            )));
        }
        data.extend_from_slice(&s.frames);
        labels.push(s.identity);
    }
    Ok(Batch {
        frames: Tensor::new(vec![sequences.len(), f, j, 3], data)?,
        labels,
        batch_size: sequences.len(),
        num_frames: f,
        joints: j,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SamplingMode {
    /// Identity-balanced P x K sampling.
    Supervised { k_per_id: usize },
    /// Uniform sampling, labels ignored.
    Unsupervised,
}

/// Draws a batch from the pool. Supervised mode samples P = batch_size / K
/// identities and K instances each, guaranteeing at least two distinct labels
/// per batch.
pub fn sample_batch(
    pool: &[SkeletonSequence],
    batch_size: usize,
    mode: SamplingMode,
    rng: &mut SeededRng,
) -> Result<Batch> {
    if pool.is_empty() {
        return Err(TransgError::Sampling("empty sequence pool".into()));
    }
    if batch_size == 0 {
        return Err(TransgError::Sampling("batch_size must be >= 1".into()));
    }
    match mode {
        SamplingMode::Unsupervised => {
            let picks: Vec<&SkeletonSequence> =
                (0..batch_size).map(|_| &pool[rng.below(pool.len())]).collect();
            stack_batch(&picks)
        }
        SamplingMode::Supervised { k_per_id } => {
            if k_per_id == 0 || batch_size % k_per_id != 0 {
                return Err(TransgError::Sampling(format!(
                    "batch_size {batch_size} is not a multiple of K={k_per_id}"
                )));
            }
            let mut by_id: HashMap<i64, Vec<usize>> = HashMap::new();
            for (i, s) in pool.iter().enumerate() {
                by_id.entry(s.identity).or_default().push(i);
            }
            let mut ids: Vec<i64> = by_id.keys().copied().collect();
            ids.sort_unstable();
            if ids.len() < 2 {
                return Err(TransgError::Sampling(format!(
                    "supervised sampling needs >= 2 identities, pool has {}",
                    ids.len()
                )));
            }
            let p = batch_size / k_per_id;
            if p > ids.len() {
                return Err(TransgError::Sampling(format!(
                    "batch needs {p} identities but pool has only {}",
                    ids.len()
                )));
            }
            let chosen = rng.sample_indices(ids.len(), p);
            let mut picks: Vec<&SkeletonSequence> = Vec::with_capacity(batch_size);
            for idx in chosen {
                let members = &by_id[&ids[idx]];
                if members.len() >= k_per_id {
                    for m in rng.sample_indices(members.len(), k_per_id) {
                        picks.push(&pool[members[m]]);
                    }
                } else {
                    // Too few instances: sample with replacement.
                    for _ in 0..k_per_id {
                        picks.push(&pool[members[rng.below(members.len())]]);
                    }
                }
            }
            stack_batch(&picks)
        }
    }
}

/// Writes a synthetic dataset (manifest plus one JSONL file per split) in the
/// standard on-disk format.
pub fn write_dataset(
    out_dir: &Path,
    name: &str,
    joints: usize,
    f: usize,
    edges: &[(usize, usize)],
    root_joint: usize,
    splits: &[(&str, &[SkeletonSequence])],
) -> Result<PathBuf> {
    fs::create_dir_all(out_dir)?;
    let mut files = SplitFiles::default();
    for (split, sequences) in splits {
        let filename = format!("{split}.jsonl");
        let mut file = fs::File::create(out_dir.join(&filename))?;
        for s in sequences.iter() {
            let frames: Vec<Vec<[f64; 3]>> = (0..s.num_frames)
                .map(|t| {
                    (0..s.joints)
                        .map(|jt| [s.coord(t, jt, 0), s.coord(t, jt, 1), s.coord(t, jt, 2)])
                        .collect()
                })
                .collect();
            let rec = RawRecording {
                id: s.identity,
                frames,
            };
            writeln!(file, "{}", serde_json::to_string(&rec)?)?;
        }
        match *split {
            "train" => files.train.push(filename),
            "probe" => files.probe.push(filename),
            "gallery" => files.gallery.push(filename),
            other => {
                return Err(TransgError::Config(format!("unknown split name {other}")));
            }
        }
    }
    let manifest = DatasetManifest {
        name: name.to_string(),
        joints,
        f,
        edges: edges.to_vec(),
        root_joint,
        files,
    };
    manifest.validate()?;
    let manifest_path = out_dir.join("manifest.json");
    fs::write(&manifest_path, serde_json::to_string_pretty(&manifest)?)?;
    Ok(manifest_path)
}
