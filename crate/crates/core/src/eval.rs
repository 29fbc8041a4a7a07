//! Cluster purity (WCP), predicted cluster ratio (PCR), method comparison
//! tables and a 2-D PCA export.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::data::{ClusterAssignment, UNKNOWN_CLUSTER};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UnknownPolicy {
    /// Unknown tracks are left out of WCP entirely.
    #[default]
    Exclude,
    /// Each Unknown track adds one wrong track to the WCP denominator.
    CountWrong,
}

impl std::str::FromStr for UnknownPolicy {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "exclude" => Ok(UnknownPolicy::Exclude),
            "count_wrong" => Ok(UnknownPolicy::CountWrong),
            other => Err(Error::Config(format!("unknown policy {other:?}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PurityRow {
    pub cluster_id: i64,
    pub size: usize,
    pub majority_identity: i64,
    pub majority_count: usize,
    pub purity: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub wcp: f64,
    pub pcr: f64,
    pub pcr_pred: usize,
    pub pcr_gt: usize,
    pub unknown_policy: UnknownPolicy,
    pub evaluated_tracks: usize,
    pub unknown_tracks: usize,
    pub clusters: Vec<PurityRow>,
}

fn purity_rows(assign: &ClusterAssignment, truth: &BTreeMap<u64, i64>) -> Result<Vec<PurityRow>> {
    let mut rows = Vec::new();
    for (cluster_id, members) in assign.clusters() {
        let mut counts: BTreeMap<i64, usize> = BTreeMap::new();
        for id in &members {
            let label = *truth.get(id).ok_or(Error::MissingTruth(*id))?;
            *counts.entry(label).or_default() += 1;
        }
        // ties go to the smallest identity label
        let (majority_identity, majority_count) = counts
            .iter()
            .fold((0, 0), |best, (&l, &c)| if c > best.1 { (l, c) } else { best });
        rows.push(PurityRow {
            cluster_id,
            size: members.len(),
            majority_identity,
            majority_count,
            purity: majority_count as f64 / members.len() as f64,
        });
    }
    Ok(rows)
}

/// `Σ majority counts / N_eval`.
pub fn wcp(assign: &ClusterAssignment, truth: &BTreeMap<u64, i64>, policy: UnknownPolicy) -> Result<f64> {
    Ok(evaluate(assign, truth, policy)?.wcp)
}

/// Non-Unknown predicted clusters over distinct truth identities.
pub fn pcr(assign: &ClusterAssignment, truth: &BTreeMap<u64, i64>) -> Result<f64> {
    let gt = truth.values().collect::<BTreeSet<_>>().len();
    if gt == 0 {
        return Err(Error::InvalidDataset("no truth identities".into()));
    }
    Ok(assign.cluster_count() as f64 / gt as f64)
}

pub fn evaluate(
    assign: &ClusterAssignment,
    truth: &BTreeMap<u64, i64>,
    policy: UnknownPolicy,
) -> Result<EvalReport> {
    let clusters = purity_rows(assign, truth)?;
    let clustered: usize = clusters.iter().map(|r| r.size).sum();
    let correct: usize = clusters.iter().map(|r| r.majority_count).sum();
    let unknown_tracks = assign
        .assignment
        .values()
        .filter(|&&c| c == UNKNOWN_CLUSTER)
        .count();
    let evaluated_tracks = match policy {
        UnknownPolicy::Exclude => clustered,
        UnknownPolicy::CountWrong => clustered + unknown_tracks,
    };
    let wcp = if evaluated_tracks == 0 {
        0.0
    } else {
        correct as f64 / evaluated_tracks as f64
    };
    let pcr_gt = truth.values().collect::<BTreeSet<_>>().len();
    if pcr_gt == 0 {
        return Err(Error::InvalidDataset("no truth identities".into()));
    }
    let pcr_pred = clusters.len();
    Ok(EvalReport {
        wcp,
        pcr: pcr_pred as f64 / pcr_gt as f64,
        pcr_pred,
        pcr_gt,
        unknown_policy: policy,
        evaluated_tracks,
        unknown_tracks,
        clusters,
    })
}

impl EvalReport {
    /// One summary row; per-cluster purity lives in the JSON form.
    pub fn to_csv(&self) -> String {
        let policy = match self.unknown_policy {
            UnknownPolicy::Exclude => "exclude",
            UnknownPolicy::CountWrong => "count_wrong",
        };
        format!(
            "wcp,pcr,pcr_pred,pcr_gt,unknown_policy,evaluated_tracks,unknown_tracks\n{},{},{},{},{},{},{}\n",
            self.wcp,
            self.pcr,
            self.pcr_pred,
            self.pcr_gt,
            policy,
            self.evaluated_tracks,
            self.unknown_tracks
        )
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CompareRow {
    pub method: String,
    pub similarity: String,
    pub wcp: f64,
    pub pcr_pred: usize,
    pub pcr_gt: usize,
}

impl CompareRow {
    pub fn from_report(method: &str, similarity: &str, r: &EvalReport) -> Self {
        CompareRow {
            method: method.into(),
            similarity: similarity.into(),
            wcp: r.wcp,
            pcr_pred: r.pcr_pred,
            pcr_gt: r.pcr_gt,
        }
    }
}

pub fn compare_csv(rows: &[CompareRow]) -> String {
    let mut out = String::from("method,similarity,wcp,pcr_pred,pcr_gt\n");
    for r in rows {
        let _ = writeln!(out, "{},{},{},{},{}", r.method, r.similarity, r.wcp, r.pcr_pred, r.pcr_gt);
    }
    out
}

pub fn compare_json(rows: &[CompareRow]) -> String {
    serde_json::to_string_pretty(rows).expect("rows serialize")
}

/// Projects onto the top two principal components. Each component's sign is
/// chosen so its largest-magnitude loading is positive; directions with zero
/// variance project to 0.
pub fn pca2d(points: &[Vec<f64>]) -> Result<Vec<(f64, f64)>> {
    if points.len() < 2 {
        return Err(Error::Shape("PCA needs at least two points".into()));
    }
    let d = points[0].len();
    let n = points.len();
    let mean = crate::data::mean_of(points);
    let centred = DMatrix::from_fn(n, d, |i, j| points[i][j] - mean[j]);
    let cov = centred.transpose() * &centred / n as f64;
    let eig = SymmetricEigen::new(cov);
    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]).then(a.cmp(&b)));
    let scale = eig.eigenvalues.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let mut axes: Vec<Vec<f64>> = Vec::new();
    for &k in order.iter().take(2) {
        if eig.eigenvalues[k] <= 1e-12 * scale.max(f64::MIN_POSITIVE) || scale == 0.0 {
            axes.push(vec![0.0; d]);
            continue;
        }
        let mut v: Vec<f64> = eig.eigenvectors.column(k).iter().copied().collect();
        let lead = v
            .iter()
            .copied()
            .fold(0.0f64, |best, x| if x.abs() > best.abs() { x } else { best });
        if lead < 0.0 {
            v.iter_mut().for_each(|x| *x = -*x);
        }
        axes.push(v);
    }
    while axes.len() < 2 {
        axes.push(vec![0.0; d]);
    }
    Ok((0..n)
        .map(|i| {
            let row = centred.row(i);
            let proj = |a: &Vec<f64>| row.iter().zip(a).map(|(x, y)| x * y).sum::<f64>();
            (proj(&axes[0]), proj(&axes[1]))
        })
        .collect())
}
