//! Helpers shared by the integration targets: a random small-instance
//! generator and a deliberately naive re-implementation of the track
//! clustering loop used as an oracle.

#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use trackcluster::clustering::SimilarityKind;
use trackcluster::data::Track;
use trackcluster::nn::{ModelConfig, ModelState};
use trackcluster::ssl::ssl_loss;

pub struct Instance {
    pub tracks: Vec<Track>,
    pub model: ModelState,
}

fn normal(rng: &mut ChaCha8Rng) -> f64 {
    rng.sample::<f64, _>(StandardNormal)
}

/// At most 8 tracks of at most 4 crops in at most 8 dimensions, drawn around
/// 1 to 3 identity centres so that some tracks do merge. Ids are shuffled and
/// not contiguous.
pub fn random_instance(seed: u64) -> Instance {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let d = rng.random_range(2..=8usize);
    let n = rng.random_range(1..=8usize);
    let identities = rng.random_range(1..=3usize);
    let centres: Vec<Vec<f64>> = (0..identities)
        .map(|_| (0..d).map(|_| normal(&mut rng)).collect())
        .collect();
    let track_shift = rng.random_range(0.05..0.6);
    let crop_noise = rng.random_range(0.05..0.4);
    let mut ids: Vec<u64> = (0..n as u64).map(|i| i * 7 + 3).collect();
    for i in (1..ids.len()).rev() {
        let j = rng.random_range(0..=i);
        ids.swap(i, j);
    }
    let tracks = ids
        .iter()
        .map(|&id| {
            let c = &centres[rng.random_range(0..identities)];
            let shift: Vec<f64> = (0..d).map(|_| track_shift * normal(&mut rng)).collect();
            let crops = (0..rng.random_range(1..=4usize))
                .map(|_| {
                    (0..d)
                        .map(|i| c[i] + shift[i] + crop_noise * normal(&mut rng))
                        .collect()
                })
                .collect();
            Track::new(id, 0, crops, None).unwrap()
        })
        .collect();
    let cfg = ModelConfig {
        hidden_dim: Some(rng.random_range(4..=16)),
        ..Default::default()
    };
    let mut model = ModelState::new(d, &cfg, &mut ChaCha8Rng::seed_from_u64(seed ^ 0x5eed)).unwrap();
    model.center = (0..d).map(|_| 0.1 * normal(&mut rng)).collect();
    Instance { tracks, model }
}

/// (teacher output, student output); raw features on both sides without a
/// model.
type Emb = (Vec<f64>, Vec<f64>);

fn embed(x: &[f64], model: Option<&ModelState>) -> Emb {
    match model {
        Some(m) => (m.teacher.forward(x).unwrap(), m.student.forward(x).unwrap()),
        None => (x.to_vec(), x.to_vec()),
    }
}

fn sim(a: &Emb, b: &Emb, model: Option<&ModelState>, kind: SimilarityKind) -> f64 {
    match kind {
        SimilarityKind::Loss => {
            let m = model.unwrap();
            let ab = ssl_loss(&a.0, &b.1, &m.center, m.teacher_temp, m.student_temp);
            let ba = ssl_loss(&b.0, &a.1, &m.center, m.teacher_temp, m.student_temp);
            0.5 * (ab + ba)
        }
        SimilarityKind::Cosine => {
            let (x, y) = (&a.1, &b.1);
            let mut dot = 0.0;
            let mut xx = 0.0;
            let mut yy = 0.0;
            for i in 0..x.len() {
                dot += x[i] * y[i];
                xx += x[i] * x[i];
                yy += y[i] * y[i];
            }
            if xx == 0.0 || yy == 0.0 {
                1.0
            } else {
                1.0 - dot / (xx.sqrt() * yy.sqrt())
            }
        }
        SimilarityKind::Euclidean => {
            let mut s = 0.0;
            for i in 0..a.1.len() {
                s += (a.1[i] - b.1[i]) * (a.1[i] - b.1[i]);
            }
            s.sqrt()
        }
    }
}

fn average(v: &[Vec<f64>]) -> Vec<f64> {
    let mut out = vec![0.0; v[0].len()];
    for row in v {
        for i in 0..out.len() {
            out[i] += row[i];
        }
    }
    for x in &mut out {
        *x /= v.len() as f64;
    }
    out
}

fn middle(v: &[f64]) -> f64 {
    let mut s = v.to_vec();
    s.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = s.len();
    if n % 2 == 1 {
        s[n / 2]
    } else {
        (s[n / 2 - 1] + s[n / 2]) / 2.0
    }
}

/// Mean similarity over unordered pairs inside `set`; `None` below 2 items.
fn within(set: &[Emb], model: Option<&ModelState>, kind: SimilarityKind) -> Option<f64> {
    let mut vals = Vec::new();
    for i in 0..set.len() {
        for j in i + 1..set.len() {
            vals.push(sim(&set[i], &set[j], model, kind));
        }
    }
    if vals.is_empty() {
        None
    } else {
        Some(vals.iter().sum::<f64>() / vals.len() as f64)
    }
}

fn across(a: &[Emb], b: &[Emb], model: Option<&ModelState>, kind: SimilarityKind) -> f64 {
    let mut total = 0.0;
    for x in a {
        for y in b {
            total += sim(x, y, model, kind);
        }
    }
    total / (a.len() * b.len()) as f64
}

/// Connected components by repeated min-label propagation.
fn components(n: usize, edges: &[(usize, usize)]) -> Vec<usize> {
    let mut label: Vec<usize> = (0..n).collect();
    loop {
        let mut changed = false;
        for &(a, b) in edges {
            let m = label[a].min(label[b]);
            if label[a] != m || label[b] != m {
                label[a] = m;
                label[b] = m;
                changed = true;
            }
        }
        if !changed {
            return label;
        }
    }
}

/// Brute-force transcription of the clustering loop. Returns the partition
/// as sorted id lists ordered by smallest member.
pub fn naive_cluster(tracks: &[Track], model: Option<&ModelState>, kind: SimilarityKind) -> Vec<Vec<u64>> {
    let mut tracks: Vec<&Track> = tracks.iter().collect();
    tracks.sort_by_key(|t| t.track_id);
    let n = tracks.len();
    if n == 0 {
        return Vec::new();
    }
    let crops: Vec<Vec<Emb>> = tracks
        .iter()
        .map(|t| t.crops.iter().map(|x| embed(x, model)).collect())
        .collect();

    // per-track thresholds with the single-crop fallback
    let own: Vec<Option<f64>> = crops.iter().map(|c| within(c, model, kind)).collect();
    let known: Vec<f64> = own.iter().filter_map(|t| *t).collect();
    let fallback = if !known.is_empty() {
        middle(&known)
    } else if n > 1 {
        let mut cross = Vec::new();
        for j in 0..n {
            for k in j + 1..n {
                cross.push(across(&crops[j], &crops[k], model, kind));
            }
        }
        middle(&cross)
    } else {
        0.0
    };
    let thr: Vec<f64> = own.iter().map(|t| t.unwrap_or(fallback)).collect();

    // round 1 over crop sets
    let mut edges = Vec::new();
    for j in 0..n {
        for k in j + 1..n {
            let s = across(&crops[j], &crops[k], model, kind);
            if s < thr[j] || s < thr[k] {
                edges.push((j, k));
            }
        }
    }
    let label = components(n, &edges);
    let mut clusters: Vec<Vec<usize>> = Vec::new();
    for i in 0..n {
        match clusters.iter_mut().find(|c| label[c[0]] == label[i]) {
            Some(c) => c.push(i),
            None => clusters.push(vec![i]),
        }
    }
    let mut count_before = n;

    // later rounds over member-track mean embeddings
    let means: Vec<Emb> = crops
        .iter()
        .map(|c| {
            let t: Vec<Vec<f64>> = c.iter().map(|e| e.0.clone()).collect();
            let s: Vec<Vec<f64>> = c.iter().map(|e| e.1.clone()).collect();
            (average(&t), average(&s))
        })
        .collect();
    while clusters.len() != count_before {
        count_before = clusters.len();
        let reps: Vec<Vec<Emb>> = clusters
            .iter()
            .map(|c| c.iter().map(|&i| means[i].clone()).collect())
            .collect();
        let cthr: Vec<f64> = clusters
            .iter()
            .zip(&reps)
            .map(|(c, r)| if c.len() == 1 { thr[c[0]] } else { within(r, model, kind).unwrap() })
            .collect();
        let m = clusters.len();
        let mut edges = Vec::new();
        for j in 0..m {
            for k in j + 1..m {
                let s = across(&reps[j], &reps[k], model, kind);
                if s < cthr[j] || s < cthr[k] {
                    edges.push((j, k));
                }
            }
        }
        let label = components(m, &edges);
        // group old clusters by their component label
        let mut groups: Vec<(usize, Vec<usize>)> = Vec::new();
        for j in 0..m {
            match groups.iter_mut().find(|g| g.0 == label[j]) {
                Some(g) => g.1.extend(clusters[j].iter().copied()),
                None => groups.push((label[j], clusters[j].clone())),
            }
        }
        clusters = groups
            .into_iter()
            .map(|mut g| {
                g.1.sort_unstable();
                g.1
            })
            .collect();
    }

    let mut out: Vec<Vec<u64>> = clusters
        .iter()
        .map(|c| {
            let mut ids: Vec<u64> = c.iter().map(|&i| tracks[i].track_id).collect();
            ids.sort_unstable();
            ids
        })
        .collect();
    out.sort_by_key(|c| c[0]);
    out
}
