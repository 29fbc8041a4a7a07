//! Positive crop pairs for one epoch.

use std::collections::{BTreeMap, BTreeSet};

use rand::Rng as _;

use crate::data::TrackDataset;
use crate::error::{Error, Result};
use crate::rng::Rng;

/// `track_id → coarsely matched track ids`; directional, no self entries.
pub type MatchTable = BTreeMap<u64, BTreeSet<u64>>;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Pair {
    pub a_track: u64,
    pub a_crop: usize,
    pub b_track: u64,
    pub b_crop: usize,
}

fn other_crop(len: usize, crop: usize, rng: &mut Rng) -> usize {
    if len == 1 {
        return crop;
    }
    let k = rng.random_range(0..len - 1);
    if k >= crop {
        k + 1
    } else {
        k
    }
}

/// One pair per crop of every track in `track_ids`, in the given order.
///
/// Without matches (or with an empty match set) the partner is a different
/// crop of the same track. Otherwise the partner track is drawn uniformly from
/// the match set and the partner crop uniformly within it.
pub fn sample_pairs(
    ds: &TrackDataset,
    track_ids: &[u64],
    matches: Option<&MatchTable>,
    rng: &mut Rng,
) -> Result<Vec<Pair>> {
    let mut pairs = Vec::new();
    for &id in track_ids {
        let track = ds.get(id).ok_or(Error::UnknownTrack(id))?;
        let partners: Vec<u64> = matches
            .and_then(|m| m.get(&id))
            .map(|s| s.iter().copied().filter(|&k| k != id).collect())
            .unwrap_or_default();
        for a_crop in 0..track.len() {
            let pair = if partners.is_empty() {
                Pair {
                    a_track: id,
                    a_crop,
                    b_track: id,
                    b_crop: other_crop(track.len(), a_crop, rng),
                }
            } else {
                let b_track = partners[rng.random_range(0..partners.len())];
                let partner = ds.get(b_track).ok_or(Error::UnknownTrack(b_track))?;
                Pair {
                    a_track: id,
                    a_crop,
                    b_track,
                    b_crop: rng.random_range(0..partner.len()),
                }
            };
            pairs.push(pair);
        }
    }
    Ok(pairs)
}
