//! Vector-space analogues of crop augmentations.
//!
//! A view at scale `s` keeps a contiguous, wrap-around window of `⌈s·D⌉`
//! coordinates, zeroes the rest and rescales the kept part by `1/√s`. Gaussian
//! jitter is then added to the kept coordinates and, with probability
//! `flip_prob`, a random half of all coordinates is negated.

use rand::seq::index::sample;
use rand::Rng as _;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::Rng;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AugmentConfig {
    pub global_scale: (f64, f64),
    pub local_scale: (f64, f64),
    pub jitter: f64,
    pub flip_prob: f64,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        AugmentConfig {
            global_scale: (0.7, 1.0),
            local_scale: (0.4, 0.6),
            jitter: 0.05,
            flip_prob: 0.5,
        }
    }
}

impl AugmentConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, (lo, hi)) in [("global_scale", self.global_scale), ("local_scale", self.local_scale)] {
            if !(0.0 < lo && lo <= hi && hi <= 1.0) {
                return Err(Error::Config(format!("{name} must satisfy 0 < lo <= hi <= 1")));
            }
        }
        if !(self.jitter.is_finite() && self.jitter >= 0.0) {
            return Err(Error::Config("jitter must be finite and >= 0".into()));
        }
        if !(0.0..=1.0).contains(&self.flip_prob) {
            return Err(Error::Config("flip_prob must be in [0, 1]".into()));
        }
        Ok(())
    }
}

/// Two global views (one per source vector) and four local views
/// (`a`, `a`, `b`, `b`).
#[derive(Clone, Debug, PartialEq)]
pub struct ViewGroups {
    pub global: [Vec<f64>; 2],
    pub local: [Vec<f64>; 4],
}

impl ViewGroups {
    pub fn all(&self) -> impl Iterator<Item = &Vec<f64>> {
        self.global.iter().chain(self.local.iter())
    }
}

pub fn kept_len(scale: f64, dim: usize) -> usize {
    ((scale * dim as f64).ceil() as usize).clamp(1, dim)
}

/// One view of `x` at a fixed scale.
pub fn window_view(x: &[f64], scale: f64, jitter: f64, flip_prob: f64, rng: &mut Rng) -> Vec<f64> {
    let d = x.len();
    let keep = kept_len(scale, d);
    let offset = rng.random_range(0..d);
    let gain = 1.0 / scale.sqrt();
    let noise = Normal::new(0.0, jitter).expect("jitter validated");
    let mut out = vec![0.0; d];
    for k in 0..keep {
        let i = (offset + k) % d;
        out[i] = x[i] * gain;
        if jitter > 0.0 {
            out[i] += noise.sample(rng);
        }
    }
    if flip_prob > 0.0 && rng.random::<f64>() < flip_prob {
        for i in sample(rng, d, d / 2) {
            out[i] = -out[i];
        }
    }
    out
}

fn random_view(x: &[f64], range: (f64, f64), cfg: &AugmentConfig, rng: &mut Rng) -> Vec<f64> {
    let scale = if range.0 < range.1 {
        rng.random_range(range.0..=range.1)
    } else {
        range.0
    };
    window_view(x, scale, cfg.jitter, cfg.flip_prob, rng)
}

pub fn make_views(a: &[f64], b: &[f64], cfg: &AugmentConfig, rng: &mut Rng) -> Result<ViewGroups> {
    if a.len() != b.len() {
        return Err(Error::Shape("view sources differ in dimension".into()));
    }
    if a.len() < 4 {
        return Err(Error::Shape(format!(
            "views need dimension >= 4, got {}",
            a.len()
        )));
    }
    let global = [
        random_view(a, cfg.global_scale, cfg, rng),
        random_view(b, cfg.global_scale, cfg, rng),
    ];
    let local = [
        random_view(a, cfg.local_scale, cfg, rng),
        random_view(a, cfg.local_scale, cfg, rng),
        random_view(b, cfg.local_scale, cfg, rng),
        random_view(b, cfg.local_scale, cfg, rng),
    ];
    Ok(ViewGroups { global, local })
}
