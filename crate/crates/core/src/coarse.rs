//! Coarse track matching with per-track Gaussians.
//!
//! Each track gets a Gaussian fitted to its crop embeddings, with the sample
//! covariance shrunk toward a scaled identity so it stays positive definite
//! when there are fewer crops than dimensions. A track's match threshold is
//! the mean log-density of its lowest-scoring quarter of crops; another track
//! matches when its mean embedding scores at least that high.

use std::collections::BTreeSet;
use std::f64::consts::PI;

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::mean_of;
use crate::error::{Error, Result};
use crate::ssl::MatchTable;

pub const COVARIANCE_FLOOR: f64 = 1e-6;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CoarseConfig {
    pub shrinkage: f64,
    pub fraction: f64,
}

impl Default for CoarseConfig {
    fn default() -> Self {
        CoarseConfig {
            shrinkage: 0.2,
            fraction: 0.25,
        }
    }
}

impl CoarseConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.shrinkage) {
            return Err(Error::Config("shrinkage must be in [0, 1]".into()));
        }
        if !(self.fraction > 0.0 && self.fraction <= 1.0) {
            return Err(Error::Config("fraction must be in (0, 1]".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct TrackGaussian {
    pub mean: Vec<f64>,
    pub covariance: DMatrix<f64>,
    chol: Cholesky<f64, Dyn>,
    /// `−½(d·ln 2π + ln det Σ)`.
    pub log_norm: f64,
}

impl TrackGaussian {
    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn log_pdf(&self, x: &[f64]) -> f64 {
        let diff = DVector::from_iterator(self.dim(), x.iter().zip(&self.mean).map(|(a, m)| a - m));
        let z = self
            .chol
            .l_dirty()
            .solve_lower_triangular(&diff)
            .expect("Cholesky factor has a positive diagonal");
        self.log_norm - 0.5 * z.norm_squared()
    }
}

/// `Σ = (1−λ)·S + λ·(tr(S)/D + ε)·I` with `S` the biased sample covariance.
pub fn fit_track_gaussian(crops: &[Vec<f64>], shrinkage: f64) -> Result<TrackGaussian> {
    if crops.is_empty() {
        return Err(Error::Shape("cannot fit a Gaussian to zero embeddings".into()));
    }
    let d = crops[0].len();
    let n = crops.len() as f64;
    let mean = mean_of(crops);
    let mut s = DMatrix::<f64>::zeros(d, d);
    for c in crops {
        let v = DVector::from_iterator(d, c.iter().zip(&mean).map(|(x, m)| x - m));
        s.ger(1.0 / n, &v, &v, 1.0);
    }
    let scale = s.trace() / d as f64 + COVARIANCE_FLOOR;
    let mut sigma = s * (1.0 - shrinkage);
    for i in 0..d {
        sigma[(i, i)] += shrinkage * scale;
    }
    let chol = Cholesky::new(sigma.clone()).ok_or(Error::SingularCovariance)?;
    let log_det = 2.0 * chol.l_dirty().diagonal().iter().map(|v| v.ln()).sum::<f64>();
    let log_norm = -0.5 * (d as f64 * (2.0 * PI).ln() + log_det);
    Ok(TrackGaussian {
        mean,
        covariance: sigma,
        chol,
        log_norm,
    })
}

/// Mean of the lowest `max(1, ⌈fraction·n⌉)` crop log-densities.
pub fn track_match_threshold(g: &TrackGaussian, crops: &[Vec<f64>], fraction: f64) -> f64 {
    let mut values: Vec<f64> = crops.iter().map(|c| g.log_pdf(c)).collect();
    values.sort_by(f64::total_cmp);
    let k = ((fraction * values.len() as f64).ceil() as usize).clamp(1, values.len());
    values[..k].iter().sum::<f64>() / k as f64
}

/// Directional matches: `k ∈ matches[j]` iff the mean of `k` scores at least
/// `j`'s threshold under `j`'s Gaussian. Every track gets an entry.
pub fn coarse_matches(tracks: &[(u64, Vec<Vec<f64>>)], cfg: &CoarseConfig) -> Result<MatchTable> {
    cfg.validate()?;
    let fitted = tracks
        .par_iter()
        .map(|(_, crops)| {
            let g = fit_track_gaussian(crops, cfg.shrinkage)?;
            let thr = track_match_threshold(&g, crops, cfg.fraction);
            Ok((g, thr))
        })
        .collect::<Result<Vec<_>>>()?;
    let means: Vec<&Vec<f64>> = fitted.iter().map(|(g, _)| &g.mean).collect();
    let rows: Vec<(u64, BTreeSet<u64>)> = tracks
        .par_iter()
        .zip(&fitted)
        .map(|((id, _), (g, thr))| {
            let set = tracks
                .iter()
                .zip(&means)
                .filter(|((k, _), m)| k != id && g.log_pdf(m) >= *thr)
                .map(|((k, _), _)| *k)
                .collect();
            (*id, set)
        })
        .collect();
    Ok(rows.into_iter().collect())
}
