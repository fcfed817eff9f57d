//! Finite-difference validation of the analytic gradients of the full fused
//! training objective.

use serde::Serialize;

use super::{graph_for, sgt_batch_loss, TrainConfig};
use crate::error::Result;
use crate::numerics::{Binding, ParamSet, SeededRng, Tape, Tensor};
use crate::objectives::sample_mask_plan;
use crate::sgt::{init_params, HeadOpts};
use crate::skeledata::Batch;

/// Central-difference step.
pub const FD_STEP: f64 = 1e-5;

/// Worst relative error within one parameter tensor.
#[derive(Debug, Clone, Serialize)]
pub struct GroupReport {
    pub name: String,
    pub max_rel_err: f64,
    pub checked: usize,
}

#[derive(Debug, Clone, Serialize)]
pub struct GradCheckReport {
    pub groups: Vec<GroupReport>,
    pub max_rel_err: f64,
    pub tolerance: f64,
    pub pass: bool,
}

/// Compares every analytic parameter gradient of the fused loss (contrastive
/// plus reconstruction, training-mode normalization) against central finite
/// differences on a small random fixture. Relative error uses
/// max(|analytic|, |numeric|, 1e-3) as the denominator so near-zero gradients
/// are judged on absolute terms.
pub fn gradient_check(
    config: &TrainConfig,
    joints: usize,
    edges: &[(usize, usize)],
    tolerance: f64,
) -> Result<GradCheckReport> {
    config.validate()?;
    let spec = graph_for(config, joints, edges)?;
    let mut rng = SeededRng::new(config.seed.wrapping_add(1));
    let mut params = init_params(
        &config.sgt(),
        joints,
        HeadOpts {
            projection: true,
            recon: Some((joints, config.f)),
            classifier: None,
        },
        &mut rng,
    )?;

    let b = config.batch_size;
    let n = b * config.f * joints * 3;
    let coords: Vec<f64> = (0..n).map(|_| 0.5 * rng.normal()).collect();
    let batch = Batch {
        frames: Tensor::new(vec![b, config.f, joints, 3], coords)?,
        labels: (0..b).map(|i| (i % 2 + 1) as i64).collect(),
        batch_size: b,
        num_frames: config.f,
        joints,
    };
    let plan = sample_mask_plan(
        b,
        config.f,
        joints,
        config.mask_nodes,
        config.mask_frames,
        &mut rng,
    )?;

    let loss_value = |params: &ParamSet| -> Result<f64> {
        let mut tape = Tape::new();
        let mut binding = Binding::new();
        let (total, _, _) = sgt_batch_loss(
            &mut tape,
            &mut binding,
            params,
            config,
            &spec,
            &batch,
            Some(&batch.labels),
            Some(&plan),
            None,
        )?;
        Ok(tape.value(total).item())
    };

    // Analytic gradients from one backward pass.
    {
        let mut tape = Tape::new();
        let mut binding = Binding::new();
        let (total, _, _) = sgt_batch_loss(
            &mut tape,
            &mut binding,
            &params,
            config,
            &spec,
            &batch,
            Some(&batch.labels),
            Some(&plan),
            None,
        )?;
        tape.backward(total)?;
        binding.pull_grads(&tape, &mut params)?;
    }
    let analytic: Vec<(String, Vec<f64>)> = params
        .iter()
        .filter(|p| p.trainable)
        .map(|p| {
            (
                p.name.clone(),
                p.grad
                    .as_ref()
                    .map(|g| g.data.clone())
                    .unwrap_or_else(|| vec![0.0; p.value.data.len()]),
            )
        })
        .collect();
    params.zero_grads();

    let mut groups = Vec::with_capacity(analytic.len());
    let mut overall = 0.0f64;
    for (name, grads) in &analytic {
        let mut worst = 0.0f64;
        for i in 0..grads.len() {
            let original = params.get(name).unwrap().value.data[i];
            params.get_mut(name).unwrap().value.data[i] = original + FD_STEP;
            let plus = loss_value(&params)?;
            params.get_mut(name).unwrap().value.data[i] = original - FD_STEP;
            let minus = loss_value(&params)?;
            params.get_mut(name).unwrap().value.data[i] = original;
            let fd = (plus - minus) / (2.0 * FD_STEP);
            let a = grads[i];
            let rel = (a - fd).abs() / a.abs().max(fd.abs()).max(1e-3);
            worst = worst.max(rel);
        }
        overall = overall.max(worst);
        groups.push(GroupReport {
            name: name.clone(),
            max_rel_err: worst,
            checked: grads.len(),
        });
    }

    Ok(GradCheckReport {
        groups,
        max_rel_err: overall,
        tolerance,
        pass: overall < tolerance,
    })
}
