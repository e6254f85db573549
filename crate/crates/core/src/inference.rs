//! Post-training tasks: a Gaussian KDE over trained latents, path-distribution
//! prediction by sampling the KDE and solving on decoded costs, deterministic
//! denoising round trips, and a quantile outlier score in decoded-cost space.

use std::collections::BTreeMap;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::graph::{validate_solution, Graph, GraphError, Requirement, SolutionVector};
use crate::model::{IoLvmModel, ModelError};
use crate::solvers::{solve, SolverError};

#[derive(thiserror::Error, Debug, Clone, PartialEq)]
pub enum InferenceError {
    #[error("empty input")]
    EmptyInput,
    #[error("latent dimension mismatch: {got} vs expected {expected}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("quantile level must be in (0, 1], got {0}")]
    InvalidTau(f64),
    #[error("input solution is infeasible for its requirement")]
    InfeasibleInput,
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Solver(#[from] SolverError),
    #[error(transparent)]
    Graph(#[from] GraphError),
}

/// Gaussian kernel density estimate over latent points with a per-dimension
/// bandwidth from Scott's rule.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatentKde {
    centers: Vec<Vec<f64>>,
    bandwidth: Vec<f64>,
}

impl LatentKde {
    pub fn centers(&self) -> &[Vec<f64>] {
        &self.centers
    }

    pub fn bandwidth(&self) -> &[f64] {
        &self.bandwidth
    }

    pub fn dim(&self) -> usize {
        self.bandwidth.len()
    }

    /// Density at a point (product of per-dimension Gaussian kernels).
    pub fn density(&self, z: &[f64]) -> Result<f64, InferenceError> {
        if z.len() != self.dim() {
            return Err(InferenceError::DimensionMismatch { expected: self.dim(), got: z.len() });
        }
        let norm: f64 = self
            .bandwidth
            .iter()
            .map(|h| 1.0 / (h * (2.0 * std::f64::consts::PI).sqrt()))
            .product();
        let mut total = 0.0;
        for c in &self.centers {
            let expo: f64 = z
                .iter()
                .zip(c)
                .zip(&self.bandwidth)
                .map(|((&zi, &ci), &h)| {
                    let d = (zi - ci) / h;
                    -0.5 * d * d
                })
                .sum();
            total += expo.exp();
        }
        Ok(total * norm / self.centers.len() as f64)
    }
}

/// Fit the KDE: bandwidth per dimension is `n^(-1/(k+4))` times the sample
/// standard deviation, falling back to 1.0 for degenerate dimensions.
pub fn kde_fit(latents: &[Vec<f64>]) -> Result<LatentKde, InferenceError> {
    let n = latents.len();
    if n == 0 {
        return Err(InferenceError::EmptyInput);
    }
    let k = latents[0].len();
    if latents.iter().any(|z| z.len() != k) {
        return Err(InferenceError::DimensionMismatch { expected: k, got: 0 });
    }
    let factor = (n as f64).powf(-1.0 / (k as f64 + 4.0));
    let mut bandwidth = vec![1.0; k];
    if n > 1 {
        for d in 0..k {
            let mean: f64 = latents.iter().map(|z| z[d]).sum::<f64>() / n as f64;
            let var: f64 = latents.iter().map(|z| (z[d] - mean).powi(2)).sum::<f64>()
                / (n as f64 - 1.0);
            let std = var.sqrt();
            if std > 1e-12 {
                bandwidth[d] = factor * std;
            }
        }
    }
    Ok(LatentKde { centers: latents.to_vec(), bandwidth })
}

/// Draw samples: a uniformly chosen center plus bandwidth-scaled noise.
pub fn kde_sample<R: Rng + ?Sized>(kde: &LatentKde, n: usize, rng: &mut R) -> Vec<Vec<f64>> {
    (0..n)
        .map(|_| {
            let c = &kde.centers[rng.gen_range(0..kde.centers.len())];
            c.iter()
                .zip(&kde.bandwidth)
                .map(|(&ci, &h)| ci + h * rng.sample::<f64, _>(StandardNormal))
                .collect()
        })
        .collect()
}

/// An aggregated multiset of sampled solutions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PathDistribution {
    /// Distinct solutions with their sample counts, most frequent first.
    pub samples: Vec<(SolutionVector, usize)>,
    pub total: usize,
}

impl PathDistribution {
    /// Per-edge usage over the whole multiset.
    pub fn edge_usage(&self, normalize: bool) -> Result<Vec<f64>, GraphError> {
        let first = self.samples.first().ok_or(GraphError::EmptyInput)?;
        let mut counts = vec![0.0; first.0.len()];
        for (x, c) in &self.samples {
            for (acc, &b) in counts.iter_mut().zip(x.bits()) {
                *acc += (b as f64) * (*c as f64);
            }
        }
        if normalize {
            let total: f64 = counts.iter().sum();
            if total <= 0.0 {
                return Err(GraphError::EmptyInput);
            }
            for c in &mut counts {
                *c /= total;
            }
        }
        Ok(counts)
    }

    /// Flatten back into one solution per draw.
    pub fn expand(&self) -> Vec<SolutionVector> {
        let mut out = Vec::with_capacity(self.total);
        for (x, c) in &self.samples {
            out.extend(std::iter::repeat_with(|| x.clone()).take(*c));
        }
        out
    }
}

/// Sample `n` latents from the KDE, decode each into costs, and solve
/// without added noise; identical solutions aggregate into counts.
pub fn predict_distribution<R: Rng + ?Sized>(
    model: &IoLvmModel,
    g: &Graph,
    kde: &LatentKde,
    p: &Requirement,
    n: usize,
    rng: &mut R,
) -> Result<PathDistribution, InferenceError> {
    if n == 0 {
        return Err(InferenceError::EmptyInput);
    }
    let mut counts: BTreeMap<Vec<u8>, usize> = BTreeMap::new();
    for z in kde_sample(kde, n, rng) {
        let y = model.decode_cost(&z)?;
        let x = solve(model.solver_kind, g, &y, p)?;
        *counts.entry(x.bits().to_vec()).or_insert(0) += 1;
    }
    let mut samples: Vec<(SolutionVector, usize)> = counts
        .into_iter()
        .map(|(bits, c)| (SolutionVector::from_bits(bits).expect("solver bits"), c))
        .collect();
    samples.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.bits().cmp(b.0.bits())));
    Ok(PathDistribution { samples, total: n })
}

/// Deterministic reconstruction: encode to the posterior mean, decode to
/// costs, and solve. Removes patterns the model considers uncommon.
pub fn denoise(
    model: &IoLvmModel,
    g: &Graph,
    x: &SolutionVector,
    p: &Requirement,
) -> Result<SolutionVector, InferenceError> {
    let (mu, _) = model.encode(g, x, p)?;
    let y = model.decode_cost(&mu)?;
    Ok(solve(model.solver_kind, g, &y, p)?)
}

/// Quantile outlier score: project the test solution and `n_z` sampled
/// reconstructions onto `n_costs` decoded cost vectors, take the RMSE
/// distance per reconstruction, and return the `tau`-quantile over them.
/// High scores mean the solution is far from the inferred distribution.
#[allow(clippy::too_many_arguments)]
pub fn outlier_score<R: Rng + ?Sized>(
    model: &IoLvmModel,
    g: &Graph,
    kde: &LatentKde,
    x: &SolutionVector,
    p: &Requirement,
    tau: f64,
    n_z: usize,
    n_costs: usize,
    rng: &mut R,
) -> Result<f64, InferenceError> {
    if !(0.0..=1.0).contains(&tau) || tau == 0.0 {
        return Err(InferenceError::InvalidTau(tau));
    }
    if n_z == 0 || n_costs == 0 {
        return Err(InferenceError::EmptyInput);
    }
    if !validate_solution(g, x, p)?.feasible {
        return Err(InferenceError::InfeasibleInput);
    }
    let cost_samples: Vec<crate::solvers::CostVector> = kde_sample(kde, n_costs, rng)
        .into_iter()
        .map(|z| model.decode_cost(&z))
        .collect::<Result<_, _>>()?;
    let x_proj: Vec<f64> = cost_samples.iter().map(|y| x.dot(y.as_slice())).collect();
    let mut distances = Vec::with_capacity(n_z);
    for z in kde_sample(kde, n_z, rng) {
        let y = model.decode_cost(&z)?;
        let x_hat = solve(model.solver_kind, g, &y, p)?;
        let mse = cost_samples
            .iter()
            .zip(&x_proj)
            .map(|(yi, &xp)| {
                let d = xp - x_hat.dot(yi.as_slice());
                d * d
            })
            .sum::<f64>()
            / n_costs as f64;
        distances.push(mse.sqrt());
    }
    Ok(quantile(&mut distances, tau))
}

/// Linear-interpolation quantile of a sample (sorts in place).
pub fn quantile(values: &mut [f64], tau: f64) -> f64 {
    debug_assert!(!values.is_empty());
    values.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let pos = tau * (values.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    if lo == hi {
        values[lo]
    } else {
        let frac = pos - lo as f64;
        values[lo] + frac * (values[hi] - values[lo])
    }
}
