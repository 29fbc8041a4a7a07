//! Ground-truth track datasets with a known identity structure.
//!
//! Identity `k` has a centre drawn from `N(0, σ_id² I)`. Every track of that
//! identity adds one shift `N(0, σ_track² I)` shared by all its crops, and every
//! crop adds independent `N(0, σ_crop² I)` noise. Outlier tracks carry no
//! identity: each of their crops is an independent `N(0, σ_out² I)` draw.

use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::data::{Track, TrackDataset};
use crate::error::{Error, Result};
use crate::rng::{self, stage};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SyntheticConfig {
    pub identities: usize,
    pub tracks_per_identity: usize,
    pub crops_per_track: usize,
    pub dim: usize,
    pub identity_spread: f64,
    pub track_shift: f64,
    pub crop_noise: f64,
    pub outlier_track_count: usize,
    pub outlier_spread: f64,
    pub seed: u64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        SyntheticConfig {
            identities: 8,
            tracks_per_identity: 5,
            crops_per_track: 6,
            dim: 32,
            identity_spread: 1.0,
            track_shift: 0.3,
            crop_noise: 0.15,
            outlier_track_count: 0,
            outlier_spread: 1.0,
            seed: 1,
        }
    }
}

impl SyntheticConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if self.identities == 0 {
            return bad("identities must be at least 1");
        }
        if self.tracks_per_identity == 0 {
            return bad("tracks_per_identity must be at least 1");
        }
        if self.crops_per_track == 0 {
            return bad("crops_per_track must be at least 1");
        }
        if self.dim < 2 {
            return bad("dim must be at least 2");
        }
        for (name, v) in [
            ("identity_spread", self.identity_spread),
            ("track_shift", self.track_shift),
            ("crop_noise", self.crop_noise),
            ("outlier_spread", self.outlier_spread),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::Config(format!("{name} must be finite and >= 0")));
            }
        }
        Ok(())
    }
}

fn gaussian(rng: &mut rng::Rng, dim: usize, sigma: f64) -> Vec<f64> {
    (0..dim)
        .map(|_| sigma * Distribution::<f64>::sample(&StandardNormal, rng))
        .collect::<Vec<f64>>()
}

/// Rounds to the nearest `f32` so saved datasets reload bit-exactly.
fn quantize(v: Vec<f64>) -> Vec<f64> {
    v.into_iter().map(|x| x as f32 as f64).collect()
}

pub fn generate_synthetic(cfg: &SyntheticConfig) -> Result<TrackDataset> {
    cfg.validate()?;
    let mut rng = rng::stream(cfg.seed, &[stage::SYNTH]);
    let d = cfg.dim;
    let mut tracks = Vec::new();
    let mut next_id = 0u64;
    for identity in 0..cfg.identities {
        let centre = gaussian(&mut rng, d, cfg.identity_spread);
        for _ in 0..cfg.tracks_per_identity {
            let shift = gaussian(&mut rng, d, cfg.track_shift);
            let crops = (0..cfg.crops_per_track)
                .map(|_| {
                    let noise = gaussian(&mut rng, d, cfg.crop_noise);
                    quantize(
                        centre
                            .iter()
                            .zip(&shift)
                            .zip(&noise)
                            .map(|((c, s), n)| c + s + n)
                            .collect(),
                    )
                })
                .collect();
            let first_frame = rng.random_range(0..100_000u64);
            tracks.push(Track::new(next_id, first_frame, crops, Some(identity as i64))?);
            next_id += 1;
        }
    }
    for _ in 0..cfg.outlier_track_count {
        let crops = (0..cfg.crops_per_track)
            .map(|_| quantize(gaussian(&mut rng, d, cfg.outlier_spread)))
            .collect();
        let first_frame = rng.random_range(0..100_000u64);
        tracks.push(Track::new(next_id, first_frame, crops, None)?);
        next_id += 1;
    }
    TrackDataset::new(format!("synthetic-k{}-s{}", cfg.identities, cfg.seed), d, tracks)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn dist(a: &[f64], b: &[f64]) -> f64 {
        a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt()
    }

    #[test]
    fn zero_noise_crops_equal_identity_centre() {
        let cfg = SyntheticConfig {
            identities: 1,
            tracks_per_identity: 1,
            crops_per_track: 3,
            track_shift: 0.0,
            crop_noise: 0.0,
            ..Default::default()
        };
        let ds = generate_synthetic(&cfg).unwrap();
        let crops = &ds.tracks()[0].crops;
        assert_eq!(crops.len(), 3);
        assert!(crops.iter().all(|c| c == &crops[0]));
    }

    #[test]
    fn same_seed_same_dataset() {
        let cfg = SyntheticConfig {
            seed: 1,
            ..Default::default()
        };
        assert_eq!(
            generate_synthetic(&cfg).unwrap(),
            generate_synthetic(&cfg).unwrap()
        );
    }

    #[test]
    fn identities_are_tighter_than_the_gaps_between_them() {
        let cfg = SyntheticConfig {
            identities: 2,
            identity_spread: 5.0,
            track_shift: 0.1,
            crop_noise: 0.05,
            ..Default::default()
        };
        let ds = generate_synthetic(&cfg).unwrap();
        let crops: Vec<(i64, &Vec<f64>)> = ds
            .tracks()
            .iter()
            .flat_map(|t| t.crops.iter().map(move |c| (t.truth_identity.unwrap(), c)))
            .collect();
        let (mut within, mut nw, mut across, mut na) = (0.0, 0, 0.0, 0);
        for i in 0..crops.len() {
            for j in i + 1..crops.len() {
                let d = dist(crops[i].1, crops[j].1);
                if crops[i].0 == crops[j].0 {
                    within += d;
                    nw += 1;
                } else {
                    across += d;
                    na += 1;
                }
            }
        }
        assert!(within / (nw as f64) < across / (na as f64));
    }

    #[test]
    fn outliers_have_no_identity_and_frames_step_by_twelve() {
        let cfg = SyntheticConfig {
            outlier_track_count: 3,
            ..Default::default()
        };
        let ds = generate_synthetic(&cfg).unwrap();
        assert_eq!(ds.len(), 43);
        assert_eq!(
            ds.tracks()
                .iter()
                .filter(|t| t.truth_identity.is_none())
                .count(),
            3
        );
        for t in ds.tracks() {
            assert!(t.frames().windows(2).all(|w| w[1] - w[0] == 12));
        }
    }

    #[test]
    fn invalid_configs_are_rejected() {
        for cfg in [
            SyntheticConfig {
                identities: 0,
                ..Default::default()
            },
            SyntheticConfig {
                crop_noise: -1.0,
                ..Default::default()
            },
            SyntheticConfig {
                dim: 1,
                ..Default::default()
            },
        ] {
            assert!(generate_synthetic(&cfg).is_err());
        }
    }
}
