//! Average-linkage agglomerative clustering with a global distance cutoff.

use super::{cosine_distance, euclidean_distance};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum HacMetric {
    Cosine,
    Euclidean,
}

/// Repeatedly merges the two clusters with the smallest average linkage while
/// that linkage is below `cutoff`. Returns clusters of ids, each sorted,
/// ordered by smallest member.
pub fn hac_baseline(points: &[(u64, Vec<f64>)], cutoff: f64, metric: HacMetric) -> Result<Vec<Vec<u64>>> {
    if cutoff.is_nan() || cutoff <= 0.0 {
        return Err(Error::Config("HAC cutoff must be positive".into()));
    }
    let n = points.len();
    let dist = |a: &[f64], b: &[f64]| match metric {
        HacMetric::Cosine => cosine_distance(a, b),
        HacMetric::Euclidean => euclidean_distance(a, b),
    };
    // linkage[i][j] for active clusters, updated with Lance-Williams
    let mut linkage = vec![vec![0.0; n]; n];
    for i in 0..n {
        for j in i + 1..n {
            let d = dist(&points[i].1, &points[j].1);
            linkage[i][j] = d;
            linkage[j][i] = d;
        }
    }
    let mut members: Vec<Vec<u64>> = points.iter().map(|(id, _)| vec![*id]).collect();
    let mut active: Vec<bool> = vec![true; n];
    loop {
        let mut best: Option<(f64, usize, usize)> = None;
        for i in 0..n {
            if !active[i] {
                continue;
            }
            for j in i + 1..n {
                if active[j] && best.is_none_or(|(d, _, _)| linkage[i][j] < d) {
                    best = Some((linkage[i][j], i, j));
                }
            }
        }
        let Some((d, i, j)) = best else { break };
        if d >= cutoff {
            break;
        }
        let (ni, nj) = (members[i].len() as f64, members[j].len() as f64);
        for k in 0..n {
            if active[k] && k != i && k != j {
                let l = (ni * linkage[i][k] + nj * linkage[j][k]) / (ni + nj);
                linkage[i][k] = l;
                linkage[k][i] = l;
            }
        }
        let moved = std::mem::take(&mut members[j]);
        members[i].extend(moved);
        active[j] = false;
    }
    let mut out: Vec<Vec<u64>> = members.into_iter().filter(|m| !m.is_empty()).collect();
    out.iter_mut().for_each(|m| m.sort_unstable());
    out.sort_by_key(|m| m[0]);
    Ok(out)
}
