//! Probe-gallery matching by Euclidean distance on sequence-level
//! representations, with CMC Rank-k and mAP aggregates.
//!
//! ```
//! use transg::evalrank::match_reps;
//! use transg::numerics::Tensor;
//!
//! let probe = Tensor::new(vec![2, 2], vec![1.0, 0.0, 0.0, 1.0]).unwrap();
//! let gallery = Tensor::new(
//!     vec![3, 2],
//!     vec![0.9, 0.1, 0.0, 1.0, 0.5, 0.5],
//! ).unwrap();
//! let report = match_reps(&probe, &gallery, &[7, 8], &[7, 8, 9], false).unwrap();
//! assert_eq!(report.rank1, 1.0);
//! assert!(report.mean_ap <= 1.0);
//! ```

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Result, TransgError};
use crate::graphpe::SkeletonGraphSpec;
use crate::numerics::{Binding, ParamSet, Tape, Tensor};
use crate::sgt::{encode, SgtConfig};
use crate::skeledata::{stack_batch, SkeletonSequence};

/// Ranking of the gallery for one probe.
#[derive(Debug, Clone, Serialize)]
pub struct ProbeRanking {
    pub probe_index: usize,
    pub probe_id: i64,
    /// Gallery indices sorted by ascending distance (ties by gallery index).
    pub ranked_gallery: Vec<usize>,
    pub distances: Vec<f64>,
    pub matches: Vec<bool>,
    pub average_precision: f64,
}

/// Full matching result with CMC/mAP aggregates in [0, 1].
#[derive(Debug, Clone, Serialize)]
pub struct RankingReport {
    pub per_probe: Vec<ProbeRanking>,
    pub rank1: f64,
    pub rank5: f64,
    pub rank10: f64,
    pub mean_ap: f64,
    /// Probes whose identity never appears in the gallery (AP undefined).
    pub excluded_probes: usize,
}

fn distance(a: &[f64], b: &[f64], cosine: bool) -> f64 {
    if cosine {
        let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
        let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
        let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
        1.0 - dot / (na * nb).max(1e-12)
    } else {
        a.iter()
            .zip(b)
            .map(|(x, y)| (x - y) * (x - y))
            .sum::<f64>()
            .sqrt()
    }
}

/// Ranks the gallery for every probe and aggregates CMC Rank-1/5/10 and mAP.
///
/// Distances are Euclidean on the raw representations by default; `cosine`
/// switches to cosine distance for diagnostics. Exact distance ties are
/// broken by ascending gallery index.
pub fn match_reps(
    probe_reps: &Tensor,
    gallery_reps: &Tensor,
    probe_ids: &[i64],
    gallery_ids: &[i64],
    cosine: bool,
) -> Result<RankingReport> {
    let d = probe_reps.last_dim();
    let n_probe = probe_reps.rows();
    let n_gallery = gallery_reps.rows();
    if n_gallery == 0 || gallery_reps.last_dim() != d {
        return Err(TransgError::Contract(format!(
            "gallery must be nonempty with matching dimension (probe d={d}, gallery {}x{})",
            n_gallery,
            gallery_reps.last_dim()
        )));
    }
    if probe_ids.len() != n_probe || gallery_ids.len() != n_gallery {
        return Err(TransgError::Contract(
            "id list lengths do not match representation counts".into(),
        ));
    }

    let per_probe: Vec<Option<ProbeRanking>> = (0..n_probe)
        .into_par_iter()
        .map(|p| {
            let pid = probe_ids[p];
            if !gallery_ids.contains(&pid) {
                return None;
            }
            let prow = &probe_reps.data[p * d..(p + 1) * d];
            let mut scored: Vec<(f64, usize)> = (0..n_gallery)
                .map(|g| {
                    (
                        distance(prow, &gallery_reps.data[g * d..(g + 1) * d], cosine),
                        g,
                    )
                })
                .collect();
            scored.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap().then(a.1.cmp(&b.1)));
            let matches: Vec<bool> = scored.iter().map(|&(_, g)| gallery_ids[g] == pid).collect();
            let total_correct = matches.iter().filter(|&&m| m).count();
            let mut hits = 0usize;
            let mut ap = 0.0;
            for (rank, &m) in matches.iter().enumerate() {
                if m {
                    hits += 1;
                    ap += hits as f64 / (rank + 1) as f64;
                }
            }
            ap /= total_correct as f64;
            Some(ProbeRanking {
                probe_index: p,
                probe_id: pid,
                ranked_gallery: scored.iter().map(|&(_, g)| g).collect(),
                distances: scored.iter().map(|&(dist, _)| dist).collect(),
                matches,
                average_precision: ap,
            })
        })
        .collect();

    let excluded = per_probe.iter().filter(|r| r.is_none()).count();
    let per_probe: Vec<ProbeRanking> = per_probe.into_iter().flatten().collect();
    if per_probe.is_empty() {
        return Err(TransgError::Contract(format!(
            "no probe identity appears in the gallery ({excluded} probes excluded)"
        )));
    }
    let n = per_probe.len() as f64;
    let rank_k = |k: usize| -> f64 {
        per_probe
            .iter()
            .filter(|r| r.matches.iter().take(k).any(|&m| m))
            .count() as f64
            / n
    };
    Ok(RankingReport {
        rank1: rank_k(1),
        rank5: rank_k(5),
        rank10: rank_k(10),
        mean_ap: per_probe.iter().map(|r| r.average_precision).sum::<f64>() / n,
        excluded_probes: excluded,
        per_probe,
    })
}

/// Encodes a split to sequence-level representations in inference mode
/// (running-stat norms, no masking, no projection heads).
pub fn embed_split(
    params: &ParamSet,
    config: &SgtConfig,
    spec: &SkeletonGraphSpec,
    sequences: &[SkeletonSequence],
    chunk_size: usize,
) -> Result<Tensor> {
    let mut data = Vec::with_capacity(sequences.len() * config.d);
    for chunk in sequences.chunks(chunk_size.max(1)) {
        let refs: Vec<&SkeletonSequence> = chunk.iter().collect();
        let batch = stack_batch(&refs)?;
        if batch.joints != spec.joints {
            return Err(TransgError::Schema(format!(
                "checkpoint expects J={} but split has J={}",
                spec.joints, batch.joints
            )));
        }
        let mut tape = Tape::new();
        let mut binding = Binding::new();
        let reps = encode(&mut tape, &mut binding, params, config, spec, &batch, false)?;
        data.extend_from_slice(&tape.value(reps.sequence_reps).data);
    }
    Tensor::new(vec![sequences.len(), config.d], data)
}
