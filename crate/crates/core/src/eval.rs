//! Metrics over solutions, edge-usage distributions and latent embeddings.
//! All functions are pure and deterministic given their seeds.

use std::collections::{HashMap, HashSet};

use serde::{Deserialize, Serialize};

use crate::graph::SolutionVector;

#[derive(thiserror::Error, Debug, Clone, PartialEq)]
pub enum EvalError {
    #[error("vectors have different lengths ({0} vs {1})")]
    LengthMismatch(usize, usize),
    #[error("input is not a probability distribution (sum {0})")]
    NotNormalized(f64),
    #[error("negative probability entry at index {0}")]
    NegativeEntry(usize),
    #[error("empty input")]
    EmptyInput,
    #[error("ground-truth solution {0} has no edges")]
    EmptyGroundTruth(usize),
    #[error("need at least one cluster")]
    NoClusters,
}

const NORMALIZATION_TOL: f64 = 1e-9;

/// Base-2 Jensen-Shannon divergence between two edge-usage distributions,
/// in `[0, 1]`, with `0 log 0 = 0`.
pub fn js_divergence(freq_a: &[f64], freq_b: &[f64]) -> Result<f64, EvalError> {
    if freq_a.len() != freq_b.len() {
        return Err(EvalError::LengthMismatch(freq_a.len(), freq_b.len()));
    }
    for (i, &v) in freq_a.iter().chain(freq_b).enumerate() {
        if v < 0.0 {
            return Err(EvalError::NegativeEntry(i % freq_a.len()));
        }
    }
    for sum in [freq_a.iter().sum::<f64>(), freq_b.iter().sum::<f64>()] {
        if (sum - 1.0).abs() > NORMALIZATION_TOL {
            return Err(EvalError::NotNormalized(sum));
        }
    }
    let mut div = 0.0;
    for (&a, &b) in freq_a.iter().zip(freq_b) {
        let m = 0.5 * (a + b);
        if a > 0.0 {
            div += 0.5 * a * (a / m).log2();
        }
        if b > 0.0 {
            div += 0.5 * b * (b / m).log2();
        }
    }
    Ok(div.clamp(0.0, 1.0))
}

/// Root mean squared error between two edge-usage count vectors aggregated
/// over equally sized sample sets.
pub fn rmse_edge_usage(counts_a: &[f64], counts_b: &[f64]) -> Result<f64, EvalError> {
    if counts_a.len() != counts_b.len() {
        return Err(EvalError::LengthMismatch(counts_a.len(), counts_b.len()));
    }
    if counts_a.is_empty() {
        return Err(EvalError::EmptyInput);
    }
    let mse = counts_a
        .iter()
        .zip(counts_b)
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        / counts_a.len() as f64;
    Ok(mse.sqrt())
}

/// Intersection over union of two solutions' edge sets; 1 when both empty.
pub fn iou(x: &SolutionVector, x_hat: &SolutionVector) -> Result<f64, EvalError> {
    if x.len() != x_hat.len() {
        return Err(EvalError::LengthMismatch(x.len(), x_hat.len()));
    }
    let mut inter = 0usize;
    let mut union = 0usize;
    for (&a, &b) in x.bits().iter().zip(x_hat.bits()) {
        inter += (a == 1 && b == 1) as usize;
        union += (a == 1 || b == 1) as usize;
    }
    if union == 0 {
        Ok(1.0)
    } else {
        Ok(inter as f64 / union as f64)
    }
}

/// A reconstruction attempt: either a feasible solution or a failed decode
/// (e.g. a thresholded output that is not a valid path or cycle).
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Reconstruction {
    Feasible(SolutionVector),
    Infeasible,
}

/// Fraction of pairs with a bit-exact reconstruction; infeasible outputs
/// count as non-matches.
pub fn full_match_rate(pairs: &[(SolutionVector, Reconstruction)]) -> Result<f64, EvalError> {
    if pairs.is_empty() {
        return Err(EvalError::EmptyInput);
    }
    let matches = pairs
        .iter()
        .filter(|(x, r)| matches!(r, Reconstruction::Feasible(h) if h == x))
        .count();
    Ok(matches as f64 / pairs.len() as f64)
}

/// Mean over pairs of `|edges(x) ∩ edges(x_hat)| / |edges(x)|`.
pub fn edge_recall(pairs: &[(SolutionVector, SolutionVector)]) -> Result<f64, EvalError> {
    if pairs.is_empty() {
        return Err(EvalError::EmptyInput);
    }
    let mut total = 0.0;
    for (i, (x, x_hat)) in pairs.iter().enumerate() {
        if x.len() != x_hat.len() {
            return Err(EvalError::LengthMismatch(x.len(), x_hat.len()));
        }
        let truth = x.count_ones();
        if truth == 0 {
            return Err(EvalError::EmptyGroundTruth(i));
        }
        let inter = x
            .bits()
            .iter()
            .zip(x_hat.bits())
            .filter(|(&a, &b)| a == 1 && b == 1)
            .count();
        total += inter as f64 / truth as f64;
    }
    Ok(total / pairs.len() as f64)
}

/// Number of unique bit vectors.
pub fn distinct_path_count(xs: &[SolutionVector]) -> Result<usize, EvalError> {
    if xs.is_empty() {
        return Err(EvalError::EmptyInput);
    }
    let set: HashSet<&[u8]> = xs.iter().map(|x| x.bits()).collect();
    Ok(set.len())
}

/// k-means purity of latent points against reference labels: cluster with a
/// fixed seed and 20 restarts, then score the best-label fraction per
/// cluster.
pub fn cluster_purity(
    latents: &[Vec<f64>],
    labels: &[usize],
    n_clusters: usize,
    seed: u64,
) -> Result<f64, EvalError> {
    if latents.len() != labels.len() {
        return Err(EvalError::LengthMismatch(latents.len(), labels.len()));
    }
    if latents.is_empty() {
        return Err(EvalError::EmptyInput);
    }
    if n_clusters == 0 {
        return Err(EvalError::NoClusters);
    }
    let assignment = kmeans(latents, n_clusters, seed, 20);
    let mut per_cluster: Vec<HashMap<usize, usize>> = vec![HashMap::new(); n_clusters];
    for (&c, &l) in assignment.iter().zip(labels) {
        *per_cluster[c].entry(l).or_insert(0) += 1;
    }
    let majority: usize = per_cluster
        .iter()
        .map(|m| m.values().copied().max().unwrap_or(0))
        .sum();
    Ok(majority as f64 / latents.len() as f64)
}

/// Lloyd's algorithm with k-means++ seeding; best of `restarts` runs by
/// inertia. Deterministic for a fixed seed.
pub fn kmeans(points: &[Vec<f64>], k: usize, seed: u64, restarts: usize) -> Vec<usize> {
    use rand::{Rng, SeedableRng};
    let n = points.len();
    let k = k.min(n);
    let mut best: Option<(f64, Vec<usize>)> = None;
    for restart in 0..restarts.max(1) {
        let mut rng =
            rand_chacha::ChaCha8Rng::seed_from_u64(seed.wrapping_add(restart as u64));
        // k-means++ seeding.
        let mut centers: Vec<Vec<f64>> = vec![points[rng.gen_range(0..n)].clone()];
        while centers.len() < k {
            let d2: Vec<f64> = points
                .iter()
                .map(|p| {
                    centers
                        .iter()
                        .map(|c| sq_dist(p, c))
                        .fold(f64::INFINITY, f64::min)
                })
                .collect();
            let total: f64 = d2.iter().sum();
            if total <= 0.0 {
                centers.push(points[rng.gen_range(0..n)].clone());
                continue;
            }
            let mut pick = rng.gen::<f64>() * total;
            let mut idx = n - 1;
            for (i, &w) in d2.iter().enumerate() {
                if pick < w {
                    idx = i;
                    break;
                }
                pick -= w;
            }
            centers.push(points[idx].clone());
        }
        let mut assign = vec![0usize; n];
        for _ in 0..100 {
            let mut changed = false;
            for (i, p) in points.iter().enumerate() {
                let mut best_c = 0;
                let mut best_d = f64::INFINITY;
                for (c, center) in centers.iter().enumerate() {
                    let d = sq_dist(p, center);
                    if d < best_d {
                        best_d = d;
                        best_c = c;
                    }
                }
                if assign[i] != best_c {
                    assign[i] = best_c;
                    changed = true;
                }
            }
            let dim = points[0].len();
            let mut sums = vec![vec![0.0; dim]; k];
            let mut counts = vec![0usize; k];
            for (i, p) in points.iter().enumerate() {
                counts[assign[i]] += 1;
                for (s, &v) in sums[assign[i]].iter_mut().zip(p) {
                    *s += v;
                }
            }
            for c in 0..k {
                if counts[c] == 0 {
                    // Reseed an empty cluster at the point farthest from its center.
                    let far = (0..n)
                        .max_by(|&a, &b| {
                            sq_dist(&points[a], &centers[assign[a]])
                                .partial_cmp(&sq_dist(&points[b], &centers[assign[b]]))
                                .unwrap()
                        })
                        .unwrap();
                    centers[c] = points[far].clone();
                } else {
                    for (s, c_v) in sums[c].iter().zip(centers[c].iter_mut()) {
                        *c_v = s / counts[c] as f64;
                    }
                }
            }
            if !changed {
                break;
            }
        }
        let inertia: f64 = points
            .iter()
            .zip(&assign)
            .map(|(p, &c)| sq_dist(p, &centers[c]))
            .sum();
        if best.as_ref().is_none_or(|(b, _)| inertia < *b) {
            best = Some((inertia, assign));
        }
    }
    best.unwrap().1
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Spearman rank correlation with average ranks for ties.
pub fn spearman(xs: &[f64], ys: &[f64]) -> f64 {
    assert_eq!(xs.len(), ys.len());
    let rx = ranks(xs);
    let ry = ranks(ys);
    pearson(&rx, &ry)
}

fn ranks(v: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..v.len()).collect();
    idx.sort_by(|&a, &b| v[a].partial_cmp(&v[b]).unwrap());
    let mut out = vec![0.0; v.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && v[idx[j + 1]] == v[idx[i]] {
            j += 1;
        }
        let rank = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            out[k] = rank;
        }
        i = j + 1;
    }
    out
}

fn pearson(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let cov: f64 = a.iter().zip(b).map(|(x, y)| (x - ma) * (y - mb)).sum();
    let va: f64 = a.iter().map(|x| (x - ma) * (x - ma)).sum();
    let vb: f64 = b.iter().map(|y| (y - mb) * (y - mb)).sum();
    if va == 0.0 || vb == 0.0 {
        0.0
    } else {
        cov / (va.sqrt() * vb.sqrt())
    }
}

/// One reported metric value for the results CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub name: String,
    pub value: f64,
    pub std: Option<f64>,
    pub n: usize,
    pub config_hash: String,
}

impl MetricReport {
    pub fn new(name: impl Into<String>, value: f64, n: usize, config_hash: &str) -> Self {
        Self { name: name.into(), value, std: None, n, config_hash: config_hash.to_string() }
    }
}
