//! Embedding-stability quality scores and robust low-quality filtering.
//!
//! A crop is scored by running the student with dropout several times: stable
//! embeddings mean a confident model. Tracks whose mean score falls below
//! `mean − 2.7·MAD` are treated as Unknown.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::TrackDataset;
use crate::error::{Error, Result};
use crate::nn::activation::sigmoid;
use crate::nn::Branch;
use crate::rng::{self, stage, Rng};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct QualityConfig {
    pub passes: usize,
    pub mad_factor: f64,
}

impl Default for QualityConfig {
    fn default() -> Self {
        QualityConfig {
            passes: 10,
            mad_factor: 2.7,
        }
    }
}

impl QualityConfig {
    pub fn validate(&self) -> Result<()> {
        if self.passes < 2 {
            return Err(Error::Config("quality passes must be at least 2".into()));
        }
        if !(self.mad_factor.is_finite() && self.mad_factor >= 0.0) {
            return Err(Error::Config("mad_factor must be finite and >= 0".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QualityReport {
    pub crop_scores: BTreeMap<u64, Vec<f64>>,
    pub track_scores: BTreeMap<u64, f64>,
    pub threshold: f64,
    pub filtered_ids: BTreeSet<u64>,
}

fn l2_normalize(v: Vec<f64>) -> Vec<f64> {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if n == 0.0 {
        v
    } else {
        v.into_iter().map(|x| x / n).collect()
    }
}

/// `2·sigmoid(−d̄)` where `d̄` is the mean pairwise distance between
/// L2-normalised outputs.
pub fn score_from_outputs(outputs: &[Vec<f64>]) -> f64 {
    let normed: Vec<Vec<f64>> = outputs.iter().cloned().map(l2_normalize).collect();
    let mut sum = 0.0;
    let mut n = 0usize;
    for i in 0..normed.len() {
        for j in i + 1..normed.len() {
            sum += normed[i]
                .iter()
                .zip(&normed[j])
                .map(|(a, b)| (a - b).powi(2))
                .sum::<f64>()
                .sqrt();
            n += 1;
        }
    }
    2.0 * sigmoid(-sum / n as f64)
}

pub fn crop_quality(branch: &Branch, x: &[f64], passes: usize, rng: &mut Rng) -> Result<f64> {
    if passes < 2 {
        return Err(Error::Config("quality passes must be at least 2".into()));
    }
    let outputs = (0..passes)
        .map(|_| branch.forward_dropout(x, rng))
        .collect::<Result<Vec<_>>>()?;
    Ok(score_from_outputs(&outputs))
}

pub fn track_quality(crop_scores: &[f64]) -> f64 {
    crop_scores.iter().sum::<f64>() / crop_scores.len() as f64
}

pub fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// `mean(v) − factor·median(|v − median(v)|)`.
pub fn quality_threshold_with(values: &[f64], factor: f64) -> f64 {
    let mean = values.iter().sum::<f64>() / values.len() as f64;
    let med = median(values);
    let deviations: Vec<f64> = values.iter().map(|v| (v - med).abs()).collect();
    mean - factor * median(&deviations)
}

pub fn quality_threshold(values: &[f64]) -> f64 {
    quality_threshold_with(values, QualityConfig::default().mad_factor)
}

/// Scores every crop of every track. Each crop has its own random stream keyed
/// by `(seed, iteration, track_id, crop index)`.
pub fn estimate_quality(
    student: &Branch,
    ds: &TrackDataset,
    cfg: &QualityConfig,
    seed: u64,
    iteration: usize,
) -> Result<QualityReport> {
    cfg.validate()?;
    let per_track = ds
        .tracks()
        .par_iter()
        .map(|t| {
            let scores = t
                .crops
                .iter()
                .enumerate()
                .map(|(n, x)| {
                    let mut r = rng::stream(
                        seed,
                        &[stage::QUALITY, iteration as u64, t.track_id, n as u64],
                    );
                    crop_quality(student, x, cfg.passes, &mut r)
                })
                .collect::<Result<Vec<_>>>()?;
            Ok((t.track_id, scores))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(report_from_scores(per_track.into_iter().collect(), cfg.mad_factor))
}

pub fn report_from_scores(crop_scores: BTreeMap<u64, Vec<f64>>, mad_factor: f64) -> QualityReport {
    let track_scores: BTreeMap<u64, f64> = crop_scores
        .iter()
        .map(|(&id, s)| (id, track_quality(s)))
        .collect();
    let values: Vec<f64> = track_scores.values().copied().collect();
    let threshold = quality_threshold_with(&values, mad_factor);
    let filtered_ids = track_scores
        .iter()
        .filter(|(_, &s)| s < threshold)
        .map(|(&id, _)| id)
        .collect();
    QualityReport {
        crop_scores,
        track_scores,
        threshold,
        filtered_ids,
    }
}

/// `(kept, unknown)` track ids, both ascending.
pub fn filter_tracks(report: &QualityReport) -> (Vec<u64>, Vec<u64>) {
    report
        .track_scores
        .keys()
        .partition(|id| !report.filtered_ids.contains(id))
}

impl QualityReport {
    /// CSV with columns `track_id,tqs,filtered`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("track_id,tqs,filtered\n");
        for (id, s) in &self.track_scores {
            let _ = writeln!(out, "{id},{s},{}", self.filtered_ids.contains(id));
        }
        out
    }

    /// Parses [`QualityReport::to_csv`] output. Crop scores are not stored
    /// there, so they come back empty; `threshold` is recomputed.
    pub fn from_csv(text: &str, mad_factor: f64) -> Result<QualityReport> {
        let mut reader = csv::Reader::from_reader(text.as_bytes());
        let mut track_scores = BTreeMap::new();
        let mut filtered_ids = BTreeSet::new();
        for row in reader.records() {
            let row = row.map_err(|e| Error::InvalidDataset(format!("quality csv: {e}")))?;
            let parse_err = || Error::InvalidDataset(format!("quality csv: bad row {row:?}"));
            let id: u64 = row.get(0).and_then(|s| s.parse().ok()).ok_or_else(parse_err)?;
            let s: f64 = row.get(1).and_then(|s| s.parse().ok()).ok_or_else(parse_err)?;
            let f: bool = row.get(2).and_then(|s| s.parse().ok()).ok_or_else(parse_err)?;
            track_scores.insert(id, s);
            if f {
                filtered_ids.insert(id);
            }
        }
        let values: Vec<f64> = track_scores.values().copied().collect();
        if values.is_empty() {
            return Err(Error::InvalidDataset("quality csv has no rows".into()));
        }
        Ok(QualityReport {
            crop_scores: BTreeMap::new(),
            threshold: quality_threshold_with(&values, mad_factor),
            track_scores,
            filtered_ids,
        })
    }
}
