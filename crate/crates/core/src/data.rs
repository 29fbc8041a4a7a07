//! Track data model and the on-disk dataset format.
//!
//! A dataset directory holds `manifest.json` plus one blob per track. Each
//! blob is `crop_count × dim` little-endian `f32` values, row-major, with no
//! header. Values are held as `f64` in memory; anything written to disk is
//! rounded to `f32` first.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Crops are sampled every 12th frame of a track.
pub const FRAME_STRIDE: u64 = 12;

/// Cluster id reserved for tracks removed by quality filtering.
pub const UNKNOWN_CLUSTER: i64 = -1;

/// Frame index of each sampled crop; the first crop sits on `first_frame`.
pub fn sample_frames(first_frame: u64, count: usize) -> Vec<u64> {
    (0..count as u64)
        .map(|n| first_frame + FRAME_STRIDE * n)
        .collect()
}

#[derive(Clone, Debug, PartialEq)]
pub struct Track {
    pub track_id: u64,
    pub first_frame: u64,
    pub crops: Vec<Vec<f64>>,
    pub truth_identity: Option<i64>,
}

impl Track {
    pub fn new(
        track_id: u64,
        first_frame: u64,
        crops: Vec<Vec<f64>>,
        truth_identity: Option<i64>,
    ) -> Result<Self> {
        let track = Track {
            track_id,
            first_frame,
            crops,
            truth_identity,
        };
        track.validate(None)?;
        Ok(track)
    }

    fn validate(&self, dim: Option<usize>) -> Result<()> {
        let first = self.crops.first().ok_or_else(|| {
            Error::InvalidDataset(format!("track_id {} has no crops", self.track_id))
        })?;
        let expected = dim.unwrap_or(first.len());
        for (n, crop) in self.crops.iter().enumerate() {
            if crop.len() != expected {
                return Err(Error::Dimension {
                    track_id: self.track_id,
                    expected,
                    found: crop.len(),
                });
            }
            if let Some(i) = crop.iter().position(|v| !v.is_finite()) {
                return Err(Error::NonFinite {
                    track_id: self.track_id,
                    offset: (n * expected + i) * 4,
                });
            }
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.crops[0].len()
    }

    pub fn len(&self) -> usize {
        self.crops.len()
    }

    pub fn is_empty(&self) -> bool {
        self.crops.is_empty()
    }

    pub fn frames(&self) -> Vec<u64> {
        sample_frames(self.first_frame, self.crops.len())
    }

    pub fn mean(&self) -> Vec<f64> {
        mean_of(&self.crops)
    }
}

/// Coordinate-wise mean of a non-empty set of equal-length vectors.
pub fn mean_of(vectors: &[Vec<f64>]) -> Vec<f64> {
    let mut acc = vec![0.0; vectors[0].len()];
    for v in vectors {
        for (a, x) in acc.iter_mut().zip(v) {
            *a += x;
        }
    }
    let n = vectors.len() as f64;
    acc.iter_mut().for_each(|a| *a /= n);
    acc
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrackDataset {
    name: String,
    dim: usize,
    tracks: Vec<Track>,
    index: HashMap<u64, usize>,
}

impl TrackDataset {
    pub fn new(name: impl Into<String>, dim: usize, tracks: Vec<Track>) -> Result<Self> {
        if tracks.is_empty() {
            return Err(Error::InvalidDataset("dataset has no tracks".into()));
        }
        if dim < 2 {
            return Err(Error::InvalidDataset(format!("dimension {dim} < 2")));
        }
        let mut index = HashMap::with_capacity(tracks.len());
        for (i, t) in tracks.iter().enumerate() {
            t.validate(Some(dim))?;
            if index.insert(t.track_id, i).is_some() {
                return Err(Error::DuplicateTrack(t.track_id));
            }
        }
        Ok(TrackDataset {
            name: name.into(),
            dim,
            tracks,
            index,
        })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn tracks(&self) -> &[Track] {
        &self.tracks
    }

    pub fn len(&self) -> usize {
        self.tracks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tracks.is_empty()
    }

    pub fn get(&self, track_id: u64) -> Option<&Track> {
        self.index.get(&track_id).map(|&i| &self.tracks[i])
    }

    pub fn track_ids(&self) -> Vec<u64> {
        self.tracks.iter().map(|t| t.track_id).collect()
    }

    pub fn crop_count(&self) -> usize {
        self.tracks.iter().map(Track::len).sum()
    }

    pub fn has_truth(&self) -> bool {
        self.tracks.iter().any(|t| t.truth_identity.is_some())
    }

    pub fn truth(&self) -> BTreeMap<u64, i64> {
        self.tracks
            .iter()
            .filter_map(|t| t.truth_identity.map(|l| (t.track_id, l)))
            .collect()
    }
}

/// Final per-track cluster labels; [`UNKNOWN_CLUSTER`] marks filtered tracks.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ClusterAssignment {
    pub assignment: BTreeMap<u64, i64>,
}

impl ClusterAssignment {
    /// Builds an assignment from a partition, labelling clusters `1, 2, ...`
    /// in order of their smallest member, and appends `unknown` as -1.
    pub fn from_partition(partition: &[Vec<u64>], unknown: impl IntoIterator<Item = u64>) -> Self {
        let mut groups: Vec<Vec<u64>> = partition
            .iter()
            .filter(|g| !g.is_empty())
            .cloned()
            .collect();
        groups.iter_mut().for_each(|g| g.sort_unstable());
        groups.sort_by_key(|g| g[0]);
        let mut assignment = BTreeMap::new();
        for (label, group) in groups.iter().enumerate() {
            for &id in group {
                assignment.insert(id, label as i64 + 1);
            }
        }
        for id in unknown {
            assignment.insert(id, UNKNOWN_CLUSTER);
        }
        ClusterAssignment { assignment }
    }

    pub fn get(&self, track_id: u64) -> Option<i64> {
        self.assignment.get(&track_id).copied()
    }

    /// Non-Unknown clusters keyed by label.
    pub fn clusters(&self) -> BTreeMap<i64, Vec<u64>> {
        let mut out: BTreeMap<i64, Vec<u64>> = BTreeMap::new();
        for (&id, &c) in &self.assignment {
            if c != UNKNOWN_CLUSTER {
                out.entry(c).or_default().push(id);
            }
        }
        out
    }

    pub fn cluster_count(&self) -> usize {
        self.clusters().len()
    }

    pub fn unknown_ids(&self) -> Vec<u64> {
        self.assignment
            .iter()
            .filter(|(_, &c)| c == UNKNOWN_CLUSTER)
            .map(|(&id, _)| id)
            .collect()
    }

    /// Same clusters relabelled canonically; two assignments describe the same
    /// partition iff their canonical forms are equal.
    pub fn canonical(&self) -> Self {
        let groups: Vec<Vec<u64>> = self.clusters().into_values().collect();
        Self::from_partition(&groups, self.unknown_ids())
    }

    /// Checks that every dataset track appears exactly once.
    pub fn check_covers(&self, ds: &TrackDataset) -> Result<()> {
        for id in self.assignment.keys() {
            if ds.get(*id).is_none() {
                return Err(Error::UnknownTrack(*id));
            }
        }
        if let Some(t) = ds
            .tracks()
            .iter()
            .find(|t| !self.assignment.contains_key(&t.track_id))
        {
            return Err(Error::InvalidDataset(format!(
                "track_id {} has no cluster assignment",
                t.track_id
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct Manifest {
    name: String,
    dim: usize,
    tracks: Vec<ManifestTrack>,
}

#[derive(Debug, Serialize, Deserialize)]
struct ManifestTrack {
    track_id: u64,
    first_frame: u64,
    crop_count: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    truth_identity: Option<i64>,
    blob: String,
}

pub const MANIFEST_FILE: &str = "manifest.json";

fn blob_name(track_id: u64) -> String {
    format!("track_{track_id:06}.bin")
}

pub fn load_dataset(dir: impl AsRef<Path>) -> Result<TrackDataset> {
    let dir = dir.as_ref();
    let manifest_path = dir.join(MANIFEST_FILE);
    if !manifest_path.is_file() {
        return Err(Error::MissingManifest(dir.to_path_buf()));
    }
    let text = fs::read_to_string(&manifest_path).map_err(|e| Error::io(&manifest_path, e))?;
    let manifest: Manifest = serde_json::from_str(&text).map_err(|source| Error::Json {
        path: manifest_path.clone(),
        source,
    })?;
    if manifest.dim < 2 {
        return Err(Error::InvalidDataset(format!(
            "dimension {} < 2",
            manifest.dim
        )));
    }

    let mut seen = HashSet::new();
    for t in &manifest.tracks {
        if !seen.insert(t.track_id) {
            return Err(Error::DuplicateTrack(t.track_id));
        }
    }

    let dim = manifest.dim;
    let mut tracks = Vec::with_capacity(manifest.tracks.len());
    for entry in &manifest.tracks {
        let path = dir.join(&entry.blob);
        let bytes = match fs::read(&path) {
            Ok(b) => b,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => {
                return Err(Error::MissingBlob {
                    track_id: entry.track_id,
                    blob: entry.blob.clone(),
                })
            }
            Err(e) => return Err(Error::io(&path, e)),
        };
        let expected = entry.crop_count * dim * 4;
        if bytes.len() != expected {
            return Err(Error::BlobLength {
                track_id: entry.track_id,
                expected,
                found: bytes.len(),
            });
        }
        let mut crops = Vec::with_capacity(entry.crop_count);
        for (n, row) in bytes.chunks_exact(dim * 4).enumerate() {
            let mut crop = Vec::with_capacity(dim);
            for (i, word) in row.chunks_exact(4).enumerate() {
                let v = f32::from_le_bytes([word[0], word[1], word[2], word[3]]);
                if !v.is_finite() {
                    return Err(Error::NonFinite {
                        track_id: entry.track_id,
                        offset: (n * dim + i) * 4,
                    });
                }
                crop.push(v as f64);
            }
            crops.push(crop);
        }
        tracks.push(Track {
            track_id: entry.track_id,
            first_frame: entry.first_frame,
            crops,
            truth_identity: entry.truth_identity,
        });
    }
    TrackDataset::new(manifest.name, dim, tracks)
}

pub fn save_dataset(ds: &TrackDataset, dir: impl AsRef<Path>) -> Result<()> {
    let dir = dir.as_ref();
    if ds.is_empty() {
        return Err(Error::InvalidDataset("dataset has no tracks".into()));
    }
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;

    let mut entries = Vec::with_capacity(ds.len());
    for t in ds.tracks() {
        let blob = blob_name(t.track_id);
        let mut bytes = Vec::with_capacity(t.len() * ds.dim() * 4);
        for crop in &t.crops {
            for &v in crop {
                bytes.extend_from_slice(&(v as f32).to_le_bytes());
            }
        }
        let path = dir.join(&blob);
        fs::write(&path, bytes).map_err(|e| Error::io(&path, e))?;
        entries.push(ManifestTrack {
            track_id: t.track_id,
            first_frame: t.first_frame,
            crop_count: t.len(),
            truth_identity: t.truth_identity,
            blob,
        });
    }
    let manifest = Manifest {
        name: ds.name().to_string(),
        dim: ds.dim(),
        tracks: entries,
    };
    let path = dir.join(MANIFEST_FILE);
    let text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    fs::write(&path, text + "\n").map_err(|e| Error::io(&path, e))
}
