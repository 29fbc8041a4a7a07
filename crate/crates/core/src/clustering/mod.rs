//! Parameter-free agglomerative clustering of tracks.
//!
//! Every track gets its own match threshold: the mean similarity of its crop
//! pairs, i.e. how far apart the model places crops it knows belong together.
//! Two tracks merge when their mean cross-crop similarity is below either
//! track's threshold; merges are closed transitively. Later rounds compare
//! clusters through their member tracks' mean embeddings and stop once a round
//! merges nothing. Lower similarity values mean better matches for every
//! [`SimilarityKind`].

pub mod hac;
pub mod union_find;

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{mean_of, ClusterAssignment, Track};
use crate::error::{Error, Result};
use crate::nn::{log_softmax, ModelState};
use crate::quality::median;
use crate::ssl::loss::teacher_probs;

pub use hac::{hac_baseline, HacMetric};
pub use union_find::{link_merges, UnionFind};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SimilarityKind {
    Loss,
    Cosine,
    Euclidean,
}

impl SimilarityKind {
    pub fn name(self) -> &'static str {
        match self {
            SimilarityKind::Loss => "loss",
            SimilarityKind::Cosine => "cosine",
            SimilarityKind::Euclidean => "euclidean",
        }
    }
}

impl std::str::FromStr for SimilarityKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "loss" => Ok(SimilarityKind::Loss),
            "cosine" => Ok(SimilarityKind::Cosine),
            "euclidean" => Ok(SimilarityKind::Euclidean),
            other => Err(Error::Config(format!("unknown similarity {other:?}"))),
        }
    }
}

pub fn cosine_distance(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        return 1.0;
    }
    1.0 - dot / (na * nb)
}

pub fn euclidean_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt()
}

/// Teacher and student outputs of one crop (or the means over a track).
#[derive(Clone, Debug, PartialEq)]
pub struct Embedded {
    pub teacher: Vec<f64>,
    pub student: Vec<f64>,
}

/// What the similarity functions actually read, precomputed once per point.
#[derive(Clone, Debug)]
struct Point {
    probs: Vec<f64>,
    log_q: Vec<f64>,
    vector: Vec<f64>,
}

fn cross_entropy(p: &[f64], log_q: &[f64]) -> f64 {
    -p.iter().zip(log_q).map(|(p, l)| p * l).sum::<f64>()
}

fn point_similarity(kind: SimilarityKind, a: &Point, b: &Point) -> f64 {
    match kind {
        SimilarityKind::Loss => 0.5 * (cross_entropy(&a.probs, &b.log_q) + cross_entropy(&b.probs, &a.log_q)),
        SimilarityKind::Cosine => cosine_distance(&a.vector, &b.vector),
        SimilarityKind::Euclidean => euclidean_distance(&a.vector, &b.vector),
    }
}

/// Turns embeddings into similarity inputs. With a model, cosine and
/// Euclidean act on student outputs; without one they act on the raw
/// features stored in both fields of [`Embedded`].
struct Metric<'a> {
    kind: SimilarityKind,
    model: Option<&'a ModelState>,
}

impl Metric<'_> {
    fn point(&self, e: &Embedded) -> Point {
        match (self.kind, self.model) {
            (SimilarityKind::Loss, Some(m)) => Point {
                probs: teacher_probs(&e.teacher, &m.center, m.teacher_temp),
                log_q: log_softmax(&e.student, m.student_temp),
                vector: Vec::new(),
            },
            _ => Point {
                probs: Vec::new(),
                log_q: Vec::new(),
                vector: e.student.clone(),
            },
        }
    }
}

/// Embeds every crop of `track`. Without a model the raw features are used.
pub fn embed_track(track: &Track, model: Option<&ModelState>) -> Result<Vec<Embedded>> {
    track
        .crops
        .iter()
        .map(|x| match model {
            Some(m) => Ok(Embedded {
                teacher: m.teacher.forward(x)?,
                student: m.student.forward(x)?,
            }),
            None => Ok(Embedded {
                teacher: x.clone(),
                student: x.clone(),
            }),
        })
        .collect()
}

/// Mean teacher output and mean student output over a set of embeddings.
pub fn mean_embedding(items: &[Embedded]) -> Embedded {
    let t: Vec<Vec<f64>> = items.iter().map(|e| e.teacher.clone()).collect();
    let s: Vec<Vec<f64>> = items.iter().map(|e| e.student.clone()).collect();
    Embedded {
        teacher: mean_of(&t),
        student: mean_of(&s),
    }
}

/// Similarity of two raw feature vectors under `kind`; symmetric.
pub fn pair_similarity(
    model: Option<&ModelState>,
    a: &[f64],
    b: &[f64],
    kind: SimilarityKind,
) -> Result<f64> {
    if kind == SimilarityKind::Loss && model.is_none() {
        return Err(Error::MissingModel);
    }
    let embed = |x: &[f64]| -> Result<Embedded> {
        Ok(match model {
            Some(m) => Embedded {
                teacher: m.teacher.forward(x)?,
                student: m.student.forward(x)?,
            },
            None => Embedded {
                teacher: x.to_vec(),
                student: x.to_vec(),
            },
        })
    };
    let metric = Metric { kind, model };
    let (pa, pb) = (metric.point(&embed(a)?), metric.point(&embed(b)?));
    Ok(point_similarity(kind, &pa, &pb))
}

fn mean_within(kind: SimilarityKind, points: &[Point]) -> Option<f64> {
    let n = points.len();
    if n < 2 {
        return None;
    }
    let mut sum = 0.0;
    for i in 0..n {
        for j in i + 1..n {
            sum += point_similarity(kind, &points[i], &points[j]);
        }
    }
    Some(sum / (n * (n - 1) / 2) as f64)
}

fn mean_across(kind: SimilarityKind, a: &[Point], b: &[Point]) -> f64 {
    let mut sum = 0.0;
    for p in a {
        for q in b {
            sum += point_similarity(kind, p, q);
        }
    }
    sum / (a.len() * b.len()) as f64
}

/// Track threshold: mean similarity over all unordered crop pairs, `None`
/// for single-crop tracks.
pub fn track_threshold(
    crops: &[Embedded],
    model: Option<&ModelState>,
    kind: SimilarityKind,
) -> Result<Option<f64>> {
    if kind == SimilarityKind::Loss && model.is_none() {
        return Err(Error::MissingModel);
    }
    let metric = Metric { kind, model };
    let points: Vec<Point> = crops.iter().map(|e| metric.point(e)).collect();
    Ok(mean_within(kind, &points))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RoundInfo {
    pub round: usize,
    pub clusters_before: usize,
    pub positive_pairs: usize,
    pub clusters_after: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClusterOutcome {
    /// Clusters of track ids, each sorted, ordered by smallest member.
    pub partition: Vec<Vec<u64>>,
    pub rounds: Vec<RoundInfo>,
    pub track_thresholds: BTreeMap<u64, f64>,
}

/// One candidate-and-link round over groups represented by point sets.
fn merge_round(
    kind: SimilarityKind,
    groups: &[Vec<Point>],
    thresholds: &[f64],
) -> Vec<(usize, usize)> {
    let n = groups.len();
    let pairs: Vec<(usize, usize)> = (0..n).flat_map(|j| (j + 1..n).map(move |k| (j, k))).collect();
    pairs
        .par_iter()
        .filter(|&&(j, k)| {
            let sim = mean_across(kind, &groups[j], &groups[k]);
            sim < thresholds[j] || sim < thresholds[k]
        })
        .copied()
        .collect()
}

/// Clusters `tracks` (already quality filtered) with precomputed crop
/// embeddings `embeds[i]` for `tracks[i]`.
pub fn cluster_embedded(
    ids: &[u64],
    embeds: &[Vec<Embedded>],
    model: Option<&ModelState>,
    kind: SimilarityKind,
) -> Result<ClusterOutcome> {
    if kind == SimilarityKind::Loss && model.is_none() {
        return Err(Error::MissingModel);
    }
    assert_eq!(ids.len(), embeds.len(), "one embedding list per track");
    if ids.is_empty() {
        return Ok(ClusterOutcome {
            partition: Vec::new(),
            rounds: Vec::new(),
            track_thresholds: BTreeMap::new(),
        });
    }
    // work in ascending id order so results never depend on input order
    let mut order: Vec<usize> = (0..ids.len()).collect();
    order.sort_by_key(|&i| ids[i]);
    let ids: Vec<u64> = order.iter().map(|&i| ids[i]).collect();
    let embeds: Vec<&Vec<Embedded>> = order.iter().map(|&i| &embeds[i]).collect();

    let metric = Metric { kind, model };
    let crop_points: Vec<Vec<Point>> = embeds
        .par_iter()
        .map(|es| es.iter().map(|e| metric.point(e)).collect())
        .collect();
    let track_means: Vec<Embedded> = embeds.iter().map(|es| mean_embedding(es)).collect();
    let mean_points: Vec<Point> = track_means.iter().map(|e| metric.point(e)).collect();

    let own: Vec<Option<f64>> = crop_points.par_iter().map(|p| mean_within(kind, p)).collect();
    let multi: Vec<f64> = own.iter().flatten().copied().collect();
    let fallback = if !multi.is_empty() {
        median(&multi)
    } else if ids.len() > 1 {
        // every track has one crop: use the median cross-track similarity
        let n = ids.len();
        let sims: Vec<f64> = (0..n)
            .flat_map(|j| (j + 1..n).map(move |k| (j, k)))
            .map(|(j, k)| mean_across(kind, &crop_points[j], &crop_points[k]))
            .collect();
        median(&sims)
    } else {
        0.0
    };
    let track_thr: Vec<f64> = own.iter().map(|t| t.unwrap_or(fallback)).collect();

    let mut rounds = Vec::new();
    let positive = merge_round(kind, &crop_points, &track_thr);
    let pairs: Vec<(u64, u64)> = positive.iter().map(|&(j, k)| (ids[j], ids[k])).collect();
    let mut partition = link_merges(&pairs, &ids)?;
    rounds.push(RoundInfo {
        round: 1,
        clusters_before: ids.len(),
        positive_pairs: positive.len(),
        clusters_after: partition.len(),
    });

    let index: BTreeMap<u64, usize> = ids.iter().enumerate().map(|(i, &id)| (id, i)).collect();
    while partition.len() < rounds.last().expect("one round ran").clusters_before {
        let groups: Vec<Vec<Point>> = partition
            .iter()
            .map(|c| c.iter().map(|id| mean_points[index[id]].clone()).collect())
            .collect();
        let thresholds: Vec<f64> = partition
            .iter()
            .zip(&groups)
            .map(|(c, g)| match c.len() {
                1 => track_thr[index[&c[0]]],
                _ => mean_within(kind, g).expect("cluster has two members"),
            })
            .collect();
        let positive = merge_round(kind, &groups, &thresholds);
        let pairs: Vec<(u64, u64)> = positive
            .iter()
            .map(|&(j, k)| (partition[j][0], partition[k][0]))
            .collect();
        let reps: Vec<u64> = partition.iter().map(|c| c[0]).collect();
        let linked = link_merges(&pairs, &reps)?;
        let before = partition.len();
        let by_rep: BTreeMap<u64, &Vec<u64>> = partition.iter().map(|c| (c[0], c)).collect();
        let mut next: Vec<Vec<u64>> = linked
            .iter()
            .map(|comp| {
                let mut members: Vec<u64> = comp.iter().flat_map(|r| by_rep[r].iter().copied()).collect();
                members.sort_unstable();
                members
            })
            .collect();
        next.sort_by_key(|c| c[0]);
        rounds.push(RoundInfo {
            round: rounds.len() + 1,
            clusters_before: before,
            positive_pairs: positive.len(),
            clusters_after: next.len(),
        });
        partition = next;
    }

    Ok(ClusterOutcome {
        partition,
        rounds,
        track_thresholds: ids.iter().copied().zip(track_thr).collect(),
    })
}

/// Embeds `tracks` and clusters them; `unknown` ids are appended as -1.
pub fn cluster_tracks(
    tracks: &[&Track],
    unknown: &[u64],
    model: Option<&ModelState>,
    kind: SimilarityKind,
) -> Result<(ClusterAssignment, ClusterOutcome)> {
    let embeds = tracks
        .par_iter()
        .map(|t| embed_track(t, model))
        .collect::<Result<Vec<_>>>()?;
    let ids: Vec<u64> = tracks.iter().map(|t| t.track_id).collect();
    let outcome = cluster_embedded(&ids, &embeds, model, kind)?;
    let assignment = ClusterAssignment::from_partition(&outcome.partition, unknown.iter().copied());
    Ok((assignment, outcome))
}
