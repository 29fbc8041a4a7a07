//! Per-pair loss/gradient and the epoch loop of one finetuning iteration.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::loss::{cross_entropy, cross_entropy_grad, teacher_probs, update_center};
use super::pairs::{sample_pairs, MatchTable};
use super::views::{make_views, AugmentConfig, ViewGroups};
use crate::data::TrackDataset;
use crate::error::{Error, Result};
use crate::nn::layers::ADAPTER_BLOCKS;
use crate::nn::{ema_update, lr_at, AdamW, Branch, Gradients, ModelState, TrainConfig};
use crate::rng::{self, stage};

/// Ordered (teacher view, student view) index pairs within a group of `k`.
fn ordered_pairs(k: usize) -> impl Iterator<Item = (usize, usize)> {
    (0..k).flat_map(move |i| (0..k).filter(move |&j| j != i).map(move |j| (i, j)))
}

/// Views in a flat order: global 0..2, local 2..6.
fn flat_views(views: &ViewGroups) -> Vec<&[f64]> {
    views.all().map(Vec::as_slice).collect()
}

const GROUPS: [(usize, usize); 2] = [(0, 2), (2, 4)];

/// Mean loss over the global group's ordered pairs and the local group's
/// ordered pairs, the two group means averaged.
pub fn pair_loss(model: &ModelState, views: &ViewGroups) -> Result<f64> {
    let flat = flat_views(views);
    let t_out = flat
        .iter()
        .map(|v| model.teacher.forward(v))
        .collect::<Result<Vec<_>>>()?;
    let s_out = flat
        .iter()
        .map(|v| model.student.forward(v))
        .collect::<Result<Vec<_>>>()?;
    let mut total = 0.0;
    for (start, k) in GROUPS {
        let mut sum = 0.0;
        let mut n = 0;
        for (i, j) in ordered_pairs(k) {
            let p = teacher_probs(&t_out[start + i], &model.center, model.teacher_temp);
            sum += cross_entropy(&p, &s_out[start + j], model.student_temp);
            n += 1;
        }
        total += 0.5 * sum / n as f64;
    }
    Ok(total)
}

/// Result of one pair: loss, student gradient and the six teacher outputs.
pub struct PairGrad {
    pub loss: f64,
    pub grads: Gradients,
    pub teacher_outputs: Vec<Vec<f64>>,
}

pub fn pair_loss_grad(model: &ModelState, views: &ViewGroups) -> Result<PairGrad> {
    let flat = flat_views(views);
    let teacher_outputs = flat
        .iter()
        .map(|v| model.teacher.forward(v))
        .collect::<Result<Vec<_>>>()?;
    let caches = flat
        .iter()
        .map(|v| model.student.forward_cached(v))
        .collect::<Result<Vec<_>>>()?;
    let probs: Vec<Vec<f64>> = teacher_outputs
        .iter()
        .map(|t| teacher_probs(t, &model.center, model.teacher_temp))
        .collect();
    let d = model.dim();
    let mut d_out = vec![vec![0.0; d]; flat.len()];
    let mut loss = 0.0;
    for (start, k) in GROUPS {
        let w = 0.5 / (k * (k - 1)) as f64;
        for (i, j) in ordered_pairs(k) {
            let (l, g) = cross_entropy_grad(&probs[start + i], &caches[start + j].output, model.student_temp);
            loss += w * l;
            for (acc, gv) in d_out[start + j].iter_mut().zip(g) {
                *acc += w * gv;
            }
        }
    }
    let mut grads = Gradients::zeros_like(&model.student);
    for (cache, d) in caches.iter().zip(&d_out) {
        model.student.backward(cache, d, &mut grads);
    }
    Ok(PairGrad {
        loss,
        grads,
        teacher_outputs,
    })
}

/// One JSON line of the training log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub iteration: usize,
    pub epoch: usize,
    pub lr: f64,
    pub mean_loss: f64,
    /// Smallest per-batch teacher-output variance seen during the epoch.
    pub teacher_variance: f64,
}

/// Mean over coordinates of the per-coordinate variance across `outputs`.
pub fn output_variance(outputs: &[Vec<f64>]) -> f64 {
    let n = outputs.len() as f64;
    let d = outputs[0].len();
    (0..d)
        .map(|i| {
            let mean = outputs.iter().map(|o| o[i]).sum::<f64>() / n;
            outputs.iter().map(|o| (o[i] - mean).powi(2)).sum::<f64>() / n
        })
        .sum::<f64>()
        / d as f64
}

pub fn epochs_for(cfg: &TrainConfig, iteration: usize) -> usize {
    if iteration == 1 {
        cfg.epochs_first
    } else {
        cfg.epochs_later
    }
}

fn adapter_frozen(cfg: &TrainConfig, iteration: usize, epoch: usize) -> bool {
    iteration == 1 && epoch <= cfg.head_only_epochs
}

/// Runs one finetuning iteration over `track_ids` in place.
///
/// Each epoch draws a fresh pair list, shuffles it, and takes one AdamW step
/// per batch followed by a center update; the teacher follows the student by
/// EMA once per epoch. The optimizer state is fresh for every iteration.
#[allow(clippy::too_many_arguments)]
pub fn train_iteration(
    state: &mut ModelState,
    ds: &TrackDataset,
    track_ids: &[u64],
    matches: Option<&MatchTable>,
    cfg: &TrainConfig,
    augment: &AugmentConfig,
    seed: u64,
    iteration: usize,
) -> Result<Vec<EpochLog>> {
    use rand::seq::SliceRandom;

    if iteration == 0 {
        return Err(Error::Config("iterations are numbered from 1".into()));
    }
    let epochs = epochs_for(cfg, iteration);
    let mut opt = AdamW::new(cfg.adamw, &state.student);
    let mut logs = Vec::with_capacity(epochs);
    let it = iteration as u64;
    for epoch in 1..=epochs {
        let ep = epoch as u64;
        let mut pair_rng = rng::stream(seed, &[stage::PAIRS, it, ep]);
        let mut pairs = sample_pairs(ds, track_ids, matches, &mut pair_rng)?;
        pairs.shuffle(&mut rng::stream(seed, &[stage::SHUFFLE, it, ep]));
        let lr = lr_at(cfg, epoch, epochs);
        let frozen = adapter_frozen(cfg, iteration, epoch);
        let (mut loss_sum, mut min_var) = (0.0, f64::INFINITY);

        for (batch_index, batch) in pairs.chunks(cfg.batch_size).enumerate() {
            let offset = batch_index * cfg.batch_size;
            let model: &ModelState = state;
            let results = batch
                .par_iter()
                .enumerate()
                .map(|(k, p)| {
                    let a = &ds.get(p.a_track).expect("sampled from dataset").crops[p.a_crop];
                    let b = &ds.get(p.b_track).expect("sampled from dataset").crops[p.b_crop];
                    let mut view_rng =
                        rng::stream(seed, &[stage::VIEWS, it, ep, (offset + k) as u64]);
                    let views = make_views(a, b, augment, &mut view_rng)?;
                    pair_loss_grad(model, &views)
                })
                .collect::<Result<Vec<_>>>()?;

            let mut grads = Gradients::zeros_like(&state.student);
            let mut batch_loss = 0.0;
            let mut teacher_outputs = Vec::with_capacity(results.len() * 6);
            for r in results {
                grads.add_assign(&r.grads);
                batch_loss += r.loss;
                teacher_outputs.extend(r.teacher_outputs);
            }
            if !batch_loss.is_finite() {
                return Err(Error::NonFiniteLoss {
                    iteration,
                    epoch,
                    batch: batch_index + 1,
                });
            }
            grads.scale(1.0 / batch.len() as f64);
            opt.step(&mut state.student, &grads, lr, |block| {
                !(frozen && block < ADAPTER_BLOCKS)
            })?;
            state.center = update_center(&state.center, &teacher_outputs, state.center_momentum);
            loss_sum += batch_loss;
            min_var = min_var.min(output_variance(&teacher_outputs));
        }
        ema_update(&mut state.teacher, &state.student, state.ema_momentum)?;
        logs.push(EpochLog {
            iteration,
            epoch,
            lr,
            mean_loss: loss_sum / pairs.len() as f64,
            teacher_variance: min_var,
        });
    }
    Ok(logs)
}

/// Student embeddings (no dropout) of every crop of `track`.
pub fn embed_crops(branch: &Branch, crops: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
    crops.iter().map(|c| branch.forward(c)).collect()
}
