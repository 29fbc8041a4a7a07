//! AdamW, the per-iteration learning-rate schedule and the teacher EMA.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use super::layers::{Gradients, ParamSet};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AdamWConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        AdamWConfig {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.04,
        }
    }
}

/// AdamW with bias-corrected moments and decoupled weight decay.
#[derive(Clone, Debug)]
pub struct AdamW {
    pub cfg: AdamWConfig,
    step: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl AdamW {
    pub fn new<P: ParamSet + ?Sized>(cfg: AdamWConfig, params: &P) -> Self {
        let zeros: Vec<Vec<f64>> = params.blocks().iter().map(|b| vec![0.0; b.len()]).collect();
        AdamW {
            cfg,
            step: 0,
            m: zeros.clone(),
            v: zeros,
        }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    pub fn first_moment(&self) -> &[Vec<f64>] {
        &self.m
    }

    /// One update of every block for which `trainable(block_index)` holds.
    /// Frozen blocks keep both their values and their moments.
    pub fn step<P: ParamSet + ?Sized>(
        &mut self,
        params: &mut P,
        grads: &Gradients,
        lr: f64,
        trainable: impl Fn(usize) -> bool,
    ) -> Result<()> {
        let names = params.block_names();
        let mut blocks = params.blocks_mut();
        if blocks.len() != grads.blocks.len() || blocks.len() != self.m.len() {
            return Err(Error::Shape(
                "gradient layout does not match parameters".into(),
            ));
        }
        for (i, g) in grads.blocks.iter().enumerate() {
            if g.len() != blocks[i].len() {
                return Err(Error::Shape(format!("block {} length mismatch", names[i])));
            }
            if trainable(i) && g.iter().any(|x| !x.is_finite()) {
                return Err(Error::NonFiniteGradient {
                    block: names[i].clone(),
                });
            }
        }

        self.step += 1;
        let AdamWConfig {
            beta1,
            beta2,
            eps,
            weight_decay,
        } = self.cfg;
        let bc1 = 1.0 - beta1.powi(self.step as i32);
        let bc2 = 1.0 - beta2.powi(self.step as i32);
        for (i, block) in blocks.iter_mut().enumerate() {
            if !trainable(i) {
                continue;
            }
            let (m, v, g) = (&mut self.m[i], &mut self.v[i], &grads.blocks[i]);
            for j in 0..block.len() {
                block[j] *= 1.0 - lr * weight_decay;
                m[j] = beta1 * m[j] + (1.0 - beta1) * g[j];
                v[j] = beta2 * v[j] + (1.0 - beta2) * g[j] * g[j];
                let m_hat = m[j] / bc1;
                let v_hat = v[j] / bc2;
                block[j] -= lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs_first: usize,
    pub head_only_epochs: usize,
    pub epochs_later: usize,
    pub lr_peak: f64,
    pub lr_final: f64,
    pub lr_warmup_start: f64,
    pub warmup_epochs: usize,
    pub adamw: AdamWConfig,
    pub batch_size: usize,
    pub ssl_iterations: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs_first: 30,
            head_only_epochs: 10,
            epochs_later: 10,
            lr_peak: 1e-4,
            lr_final: 1e-5,
            lr_warmup_start: 5e-6,
            warmup_epochs: 5,
            adamw: AdamWConfig::default(),
            batch_size: 32,
            ssl_iterations: 5,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if self.head_only_epochs > self.epochs_first {
            return bad("head_only_epochs must not exceed epochs_first");
        }
        if !(self.lr_peak > 0.0 && self.lr_final > 0.0 && self.lr_warmup_start > 0.0) {
            return bad("learning rates must be positive");
        }
        if self.batch_size == 0 {
            return bad("batch_size must be at least 1");
        }
        if self.ssl_iterations == 0 {
            return bad("ssl_iterations must be at least 1");
        }
        if self.epochs_first == 0 {
            return bad("epochs_first must be at least 1");
        }
        Ok(())
    }
}

/// Learning rate for `epoch` (1-based) of an iteration lasting `epochs_total`
/// epochs: linear warmup from `lr_warmup_start` reaching `lr_peak` at the last
/// warmup epoch, then cosine decay reaching `lr_final` at the last epoch.
pub fn lr_at(cfg: &TrainConfig, epoch: usize, epochs_total: usize) -> f64 {
    let warmup = cfg.warmup_epochs.min(epochs_total);
    if epoch <= warmup {
        let frac = epoch as f64 / warmup as f64;
        return cfg.lr_warmup_start + (cfg.lr_peak - cfg.lr_warmup_start) * frac;
    }
    let span = (epochs_total - warmup) as f64;
    let progress = (epoch - warmup) as f64 / span;
    cfg.lr_final + 0.5 * (cfg.lr_peak - cfg.lr_final) * (1.0 + (PI * progress).cos())
}

/// `teacher ← m·teacher + (1−m)·student`, block by block.
pub fn ema_update<P: ParamSet + ?Sized>(teacher: &mut P, student: &P, m: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&m) {
        return Err(Error::Config(format!("EMA momentum {m} outside [0, 1]")));
    }
    let src = student.blocks();
    let mut dst = teacher.blocks_mut();
    if src.len() != dst.len() || src.iter().zip(&dst).any(|(s, d)| s.len() != d.len()) {
        return Err(Error::Shape("teacher and student layouts differ".into()));
    }
    for (d, s) in dst.iter_mut().zip(src) {
        for (t, &x) in d.iter_mut().zip(s) {
            *t = m * *t + (1.0 - m) * x;
        }
    }
    Ok(())
}
