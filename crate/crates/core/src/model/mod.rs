//! The latent-variable model: an encoder `q(z|x)` and decoder `g(z)` wrapped
//! around a black-box solver, trained with a perturbed Fenchel-Young loss and
//! a beta-weighted KL term, plus the VAE and perturbed-optimizer baselines.

mod po;
mod train;
mod vae;

pub use po::{po_sample_solutions, train_po_baseline, PoBaseline, PoTrainer};
pub use train::{IoLvmTrainer, TRAINING_LOG_HEADER};
pub use vae::{train_vae_baseline, VaeBaseline, VaeTrainer};

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::graph::{Graph, GraphError, Requirement, SolutionVector};
use crate::neural::{
    MlpParams, NeuralError, OptimizerKind, OptimizerState, OutputActivation,
};
use crate::seeding::fnv1a_64;
use crate::solvers::{CostVector, SolverError, SolverKind};

pub const CHECKPOINT_VERSION: u32 = 1;
/// Fixed chunk size for deterministic parallel gradient accumulation: the
/// reduction tree is identical for every thread count.
pub(crate) const GRAD_CHUNK: usize = 32;

#[derive(thiserror::Error, Debug, Clone, PartialEq)]
pub enum ModelError {
    #[error(transparent)]
    Neural(#[from] NeuralError),
    #[error(transparent)]
    Solver(#[from] SolverError),
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error("vector length {got} does not match expected {expected}")]
    LengthMismatch { expected: usize, got: usize },
    #[error("sigma must be strictly positive")]
    NonPositiveSigma,
    #[error("dataset sample {index} is infeasible for its requirement")]
    InfeasibleSample { index: usize },
    #[error("loss became non-finite at epoch {epoch}")]
    NonFiniteLoss { epoch: usize },
    #[error("checkpoint does not match requested architecture: {0}")]
    ArchitectureMismatch(String),
    #[error("checkpoint format: {0}")]
    Format(String),
    #[error("io: {0}")]
    Io(String),
}

/// One training observation: a feasible solution and its requirement. Dataset
/// metadata never crosses into this type, so training cannot consume labels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainSample {
    pub solution: SolutionVector,
    pub requirement: Requirement,
}

/// How the cost-perturbation scale is chosen each batch.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SigmaEpsMode {
    /// `sigma_eps` multiplies the batch mean of the decoded edge costs.
    Relative,
    /// `sigma_eps` is used as an absolute scale.
    Absolute,
}

/// Training configuration, recorded verbatim in checkpoints.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    /// KL weight in the loss.
    pub beta: f64,
    /// Cost perturbation scale (see `sigma_eps_mode`).
    pub sigma_eps: f64,
    pub sigma_eps_mode: SigmaEpsMode,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub optimizer: OptimizerKind,
    pub seed: u64,
    /// Floor for perturbed shortest-path costs.
    pub clamp_floor: f64,
    #[serde(default)]
    pub weight_decay: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            beta: 1.0,
            sigma_eps: 0.25,
            sigma_eps_mode: SigmaEpsMode::Relative,
            learning_rate: 4e-5,
            batch_size: 250,
            epochs: 300,
            optimizer: OptimizerKind::RmsProp,
            seed: 0,
            clamp_floor: 1e-6,
            weight_decay: 0.0,
        }
    }
}

impl TrainConfig {
    pub(crate) fn resolve_sigma(&self, mean_cost: f64) -> f64 {
        match self.sigma_eps_mode {
            SigmaEpsMode::Relative => self.sigma_eps * mean_cost,
            SigmaEpsMode::Absolute => self.sigma_eps,
        }
    }
}

/// Network shape shared by the model and the VAE baseline.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelArch {
    pub latent_dim: usize,
    pub hidden_dims: Vec<usize>,
    pub solver_kind: SolverKind,
}

/// Encoder/decoder pair around a solver: the encoder maps solution bits plus
/// the requirement encoding to `(mu, log sigma)`, the decoder maps latents to
/// strictly positive edge costs through a softplus head.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IoLvmModel {
    pub encoder: MlpParams,
    pub decoder: MlpParams,
    pub latent_dim: usize,
    pub solver_kind: SolverKind,
}

impl IoLvmModel {
    pub fn new<R: Rng + ?Sized>(g: &Graph, arch: &ModelArch, rng: &mut R) -> Self {
        let mut enc_dims = vec![encoder_input_dim(g)];
        enc_dims.extend(&arch.hidden_dims);
        enc_dims.push(2 * arch.latent_dim);
        let mut dec_dims = vec![arch.latent_dim];
        dec_dims.extend(&arch.hidden_dims);
        dec_dims.push(g.edge_count());
        Self {
            encoder: MlpParams::new(&enc_dims, OutputActivation::Identity, rng),
            decoder: MlpParams::new(&dec_dims, OutputActivation::Softplus, rng),
            latent_dim: arch.latent_dim,
            solver_kind: arch.solver_kind,
        }
    }

    /// Posterior parameters for one observation.
    pub fn encode(
        &self,
        g: &Graph,
        x: &SolutionVector,
        p: &Requirement,
    ) -> Result<(Vec<f64>, Vec<f64>), ModelError> {
        let input = encoder_input(g, x, p)?;
        let (out, _) = self.encoder.forward(&input)?;
        Ok(split_posterior(&out, self.latent_dim))
    }

    /// Decode a latent into a strictly positive cost vector.
    pub fn decode_cost(&self, z: &[f64]) -> Result<CostVector, ModelError> {
        if z.len() != self.latent_dim {
            return Err(ModelError::LengthMismatch { expected: self.latent_dim, got: z.len() });
        }
        let (out, _) = self.decoder.forward(z)?;
        Ok(CostVector::new(out).expect("softplus keeps costs finite and positive"))
    }

    pub fn arch(&self) -> ModelArch {
        let dims = self.decoder.dims();
        ModelArch {
            latent_dim: self.latent_dim,
            hidden_dims: dims[1..dims.len() - 1].to_vec(),
            solver_kind: self.solver_kind,
        }
    }
}

pub(crate) fn split_posterior(out: &[f64], k: usize) -> (Vec<f64>, Vec<f64>) {
    let mu = out[..k].to_vec();
    // log-sigma head; the clamp only guards against numerical runaway.
    let sigma = out[k..].iter().map(|&l| l.clamp(-30.0, 30.0).exp()).collect();
    (mu, sigma)
}

pub fn encoder_input_dim(g: &Graph) -> usize {
    g.edge_count() + 4
}

/// Requirement encoding fed to the encoder: normalized source and target
/// coordinates, zeros when there is no source/target pair.
pub fn requirement_encoding(g: &Graph, p: &Requirement) -> Result<[f64; 4], ModelError> {
    match *p {
        Requirement::SourceTarget { source, target } => {
            let s = g.node_index(source).ok_or(ModelError::Graph(GraphError::DanglingEdge {
                edge: usize::MAX,
                node: source,
            }))?;
            let t = g.node_index(target).ok_or(ModelError::Graph(GraphError::DanglingEdge {
                edge: usize::MAX,
                node: target,
            }))?;
            let (sx, sy) = g.normalized_position(s);
            let (tx, ty) = g.normalized_position(t);
            Ok([sx, sy, tx, ty])
        }
        Requirement::None => Ok([0.0; 4]),
    }
}

/// Solution bits concatenated with the requirement encoding.
pub fn encoder_input(
    g: &Graph,
    x: &SolutionVector,
    p: &Requirement,
) -> Result<Vec<f64>, ModelError> {
    if x.len() != g.edge_count() {
        return Err(ModelError::LengthMismatch { expected: g.edge_count(), got: x.len() });
    }
    let mut input = x.as_f64();
    input.extend(requirement_encoding(g, p)?);
    Ok(input)
}

/// `z = mu + sigma * eps` with standard-normal `eps`.
pub fn reparameterize<R: Rng + ?Sized>(mu: &[f64], sigma: &[f64], rng: &mut R) -> Vec<f64> {
    assert_eq!(mu.len(), sigma.len());
    mu.iter()
        .zip(sigma)
        .map(|(&m, &s)| m + s * rng.sample::<f64, _>(StandardNormal))
        .collect()
}

/// Single-sample estimator of the perturbed Fenchel-Young loss:
/// `<y, x> - <y + eps, x_hat>` where `x_hat` solved `y + eps`.
pub fn fy_loss(
    y: &CostVector,
    x: &SolutionVector,
    x_hat: &SolutionVector,
    eps: &[f64],
) -> Result<f64, ModelError> {
    let m = y.len();
    for len in [x.len(), x_hat.len(), eps.len()] {
        if len != m {
            return Err(ModelError::LengthMismatch { expected: m, got: len });
        }
    }
    let observed = x.dot(y.as_slice());
    let perturbed_opt = x_hat.dot(y.as_slice()) + x_hat.dot(eps);
    Ok(observed - perturbed_opt)
}

/// Analytic loss gradient with respect to the costs: `x - x_hat`, entrywise
/// in `{-1, 0, 1}`, zero exactly when the reconstruction matches.
pub fn fy_grad_y(x: &SolutionVector, x_hat: &SolutionVector) -> Result<Vec<f64>, ModelError> {
    if x.len() != x_hat.len() {
        return Err(ModelError::LengthMismatch { expected: x.len(), got: x_hat.len() });
    }
    Ok(x.bits()
        .iter()
        .zip(x_hat.bits())
        .map(|(&a, &b)| a as f64 - b as f64)
        .collect())
}

/// Closed-form KL divergence from `N(mu, diag(sigma^2))` to the standard
/// normal: `0.5 * sum(mu^2 + sigma^2 - 1 - ln sigma^2)`.
pub fn kl_gaussian(mu: &[f64], sigma: &[f64]) -> Result<f64, ModelError> {
    if mu.len() != sigma.len() {
        return Err(ModelError::LengthMismatch { expected: mu.len(), got: sigma.len() });
    }
    if sigma.iter().any(|&s| s <= 0.0) {
        return Err(ModelError::NonPositiveSigma);
    }
    Ok(mu
        .iter()
        .zip(sigma)
        .map(|(&m, &s)| 0.5 * (m * m + s * s - 1.0 - 2.0 * s.ln()))
        .sum())
}

/// Aggregates of one training epoch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochReport {
    pub epoch: usize,
    pub avg_loss: f64,
    /// Mean reconstruction term (Fenchel-Young loss; cross-entropy for the
    /// VAE baseline).
    pub avg_fy: f64,
    pub avg_kl: f64,
    /// Mean IoU between observed solutions and training reconstructions.
    pub train_iou: f64,
    /// Distinct reconstructions emitted during the epoch.
    pub distinct_reconstructions: usize,
    pub clamp_count: usize,
    /// Mean realized perturbation scale over the epoch's batches.
    pub sigma_eps: f64,
}

/// Which model family a checkpoint stores.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    IoLvm,
    Vae,
    Po,
}

impl std::fmt::Display for ModelKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            ModelKind::IoLvm => write!(f, "iolvm"),
            ModelKind::Vae => write!(f, "vae"),
            ModelKind::Po => write!(f, "po"),
        }
    }
}

/// Versioned training snapshot; loading rejects architecture mismatches.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub version: u32,
    pub kind: ModelKind,
    pub config: TrainConfig,
    pub arch: Option<ModelArch>,
    pub config_hash: String,
    pub epochs_done: usize,
    pub encoder: Option<MlpParams>,
    pub decoder: Option<MlpParams>,
    pub po_raw: Option<Vec<f64>>,
    pub encoder_opt: Option<OptimizerState>,
    pub decoder_opt: Option<OptimizerState>,
    pub po_opt: Option<OptimizerState>,
}

/// Stable hash of the run configuration for manifests and metric rows.
pub fn config_hash(cfg: &TrainConfig, arch: Option<&ModelArch>) -> String {
    let blob = serde_json::to_string(&(cfg, arch)).expect("config serializes");
    format!("{:016x}", fnv1a_64(blob.as_bytes()))
}

impl Checkpoint {
    pub fn save(&self, path: &std::path::Path) -> Result<(), ModelError> {
        let text = serde_json::to_string(self).map_err(|e| ModelError::Format(e.to_string()))?;
        std::fs::write(path, text).map_err(|e| ModelError::Io(e.to_string()))
    }

    pub fn load(path: &std::path::Path) -> Result<Self, ModelError> {
        let text =
            std::fs::read_to_string(path).map_err(|e| ModelError::Io(e.to_string()))?;
        let ckpt: Checkpoint =
            serde_json::from_str(&text).map_err(|e| ModelError::Format(e.to_string()))?;
        if ckpt.version != CHECKPOINT_VERSION {
            return Err(ModelError::Format(format!(
                "unsupported checkpoint version {}",
                ckpt.version
            )));
        }
        ckpt.check_consistency()?;
        Ok(ckpt)
    }

    fn check_consistency(&self) -> Result<(), ModelError> {
        if let (Some(arch), Some(decoder)) = (&self.arch, &self.decoder) {
            let dims = decoder.dims();
            let hidden = &dims[1..dims.len() - 1];
            if hidden != arch.hidden_dims.as_slice() {
                return Err(ModelError::ArchitectureMismatch(format!(
                    "decoder hidden dims {hidden:?} vs declared {:?}",
                    arch.hidden_dims
                )));
            }
            if self.kind == ModelKind::IoLvm && dims[0] != arch.latent_dim {
                return Err(ModelError::ArchitectureMismatch(format!(
                    "decoder latent dim {} vs declared {}",
                    dims[0], arch.latent_dim
                )));
            }
        }
        Ok(())
    }
}

/// Check every sample is feasible for its requirement.
pub fn validate_dataset(g: &Graph, samples: &[TrainSample]) -> Result<(), ModelError> {
    for (index, s) in samples.iter().enumerate() {
        let report = crate::graph::validate_solution(g, &s.solution, &s.requirement)?;
        if !report.feasible {
            return Err(ModelError::InfeasibleSample { index });
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{build_graph, NodePoint};
    use crate::solvers::{brute_force, solve, solve_perturbed};
    use rand::rngs::StdRng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn diamond() -> Graph {
        // Two s->t routes plus a longer chord for a third alternative.
        let nodes = (0..4)
            .map(|i| NodePoint { id: i, x: (i % 2) as f64, y: (i / 2) as f64 })
            .collect();
        build_graph(nodes, vec![(0, 1), (1, 3), (0, 2), (2, 3), (0, 3)], true).unwrap()
    }

    fn toy_arch(k: usize) -> ModelArch {
        ModelArch { latent_dim: k, hidden_dims: vec![16], solver_kind: SolverKind::Spp }
    }

    #[test]
    fn encode_produces_positive_sigma_and_is_deterministic() {
        let g = diamond();
        let mut rng = StdRng::seed_from_u64(0);
        let m = IoLvmModel::new(&g, &toy_arch(2), &mut rng);
        let x = SolutionVector::from_edge_ids(5, &[0, 1]).unwrap();
        let p = Requirement::SourceTarget { source: 0, target: 3 };
        let (mu1, s1) = m.encode(&g, &x, &p).unwrap();
        let (mu2, s2) = m.encode(&g, &x, &p).unwrap();
        assert_eq!(mu1, mu2);
        assert_eq!(s1, s2);
        assert!(s1.iter().all(|&s| s > 0.0));
        assert_eq!(mu1.len(), 2);
    }

    #[test]
    fn reparameterize_zero_sigma_returns_mu() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let z = reparameterize(&[0.3, -1.2], &[0.0, 0.0], &mut rng);
        assert_eq!(z, vec![0.3, -1.2]);
    }

    #[test]
    fn reparameterize_mean_matches_mu() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mu = [1.5, -0.5];
        let sigma = [2.0, 0.5];
        let n = 100_000;
        let mut sums = [0.0f64; 2];
        for _ in 0..n {
            let z = reparameterize(&mu, &sigma, &mut rng);
            sums[0] += z[0];
            sums[1] += z[1];
        }
        for i in 0..2 {
            let mean = sums[i] / n as f64;
            let se = sigma[i] / (n as f64).sqrt();
            assert!(
                (mean - mu[i]).abs() <= 3.0 * se,
                "dim {i}: {mean} vs {} (se {se})",
                mu[i]
            );
        }
    }

    #[test]
    fn reparameterize_fixed_seed_reproducible() {
        let a = reparameterize(&[0.0], &[1.0], &mut ChaCha8Rng::seed_from_u64(3));
        let b = reparameterize(&[0.0], &[1.0], &mut ChaCha8Rng::seed_from_u64(3));
        assert_eq!(a, b);
    }

    #[test]
    fn decode_cost_is_strictly_positive() {
        let g = diamond();
        let mut rng = StdRng::seed_from_u64(4);
        let m = IoLvmModel::new(&g, &toy_arch(3), &mut rng);
        let mut chacha = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..10_000 {
            let z = reparameterize(&[0.0, 0.0, 0.0], &[3.0, 3.0, 3.0], &mut chacha);
            let y = m.decode_cost(&z).unwrap();
            assert!(y.as_slice().iter().all(|&c| c > 0.0));
        }
    }

    #[test]
    fn zero_decoder_outputs_ln_two() {
        let g = diamond();
        let mut rng = StdRng::seed_from_u64(6);
        let mut m = IoLvmModel::new(&g, &toy_arch(2), &mut rng);
        m.decoder = MlpParams::zeros(&[2, 16, 5], OutputActivation::Softplus);
        let y = m.decode_cost(&[0.7, -0.7]).unwrap();
        for &c in y.as_slice() {
            assert!((c - std::f64::consts::LN_2).abs() < 1e-15);
        }
    }

    #[test]
    fn nearby_latents_decode_to_nearby_costs() {
        // Lipschitz smoke test: the relative cost change is bounded by the
        // product of layer weight norms times the latent displacement.
        let g = diamond();
        let mut rng = StdRng::seed_from_u64(7);
        let m = IoLvmModel::new(&g, &toy_arch(2), &mut rng);
        let lipschitz: f64 = m
            .decoder
            .layers()
            .iter()
            .map(|l| {
                l.weights.iter().map(|w| w * w).sum::<f64>().sqrt()
            })
            .product();
        let z = [0.4, -0.2];
        let dz = 1e-3;
        let z2 = [z[0] + dz, z[1]];
        let y1 = m.decode_cost(&z).unwrap();
        let y2 = m.decode_cost(&z2).unwrap();
        let diff: f64 = y1
            .as_slice()
            .iter()
            .zip(y2.as_slice())
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt();
        // Softplus is 1-Lipschitz, so the bound carries through the head.
        assert!(diff <= lipschitz * dz * 1.0001, "diff {diff} vs bound {}", lipschitz * dz);
    }

    #[test]
    fn fy_loss_zero_at_unperturbed_optimum() {
        let g = diamond();
        let y = CostVector::new(vec![1.0, 1.0, 2.0, 2.0, 5.0]).unwrap();
        let p = Requirement::SourceTarget { source: 0, target: 3 };
        let x = solve(SolverKind::Spp, &g, &y, &p).unwrap();
        let eps = vec![0.0; 5];
        assert_eq!(fy_loss(&y, &x, &x, &eps).unwrap(), 0.0);
    }

    #[test]
    fn fy_loss_positive_for_suboptimal_solution() {
        let g = diamond();
        let y = CostVector::new(vec![1.0, 1.0, 2.0, 2.0, 5.0]).unwrap();
        let p = Requirement::SourceTarget { source: 0, target: 3 };
        let opt = solve(SolverKind::Spp, &g, &y, &p).unwrap();
        let sub = SolutionVector::from_edge_ids(5, &[2, 3]).unwrap();
        let eps = vec![0.0; 5];
        let gap = fy_loss(&y, &sub, &opt, &eps).unwrap();
        assert!((gap - 2.0).abs() < 1e-12, "suboptimality gap {gap}");
    }

    #[test]
    fn fy_loss_expectation_nonnegative_and_matches_direct_mc() {
        // Against a direct Monte Carlo evaluation of the expected perturbed
        // minimum with common draw counts.
        let g = diamond();
        let y = CostVector::new(vec![1.0, 1.0, 1.2, 1.2, 2.6]).unwrap();
        let p = Requirement::SourceTarget { source: 0, target: 3 };
        let x = solve(SolverKind::Spp, &g, &y, &p).unwrap();
        let sigma = 0.4;
        let draws = 100_000;

        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut sum = 0.0;
        let mut sq = 0.0;
        for _ in 0..draws {
            let r = solve_perturbed(SolverKind::Spp, &g, &y, &p, sigma, 1e-9, &mut rng).unwrap();
            let v = fy_loss(&y, &x, &r.solution, &r.eps).unwrap();
            sum += v;
            sq += v * v;
        }
        let mean = sum / draws as f64;
        let se = ((sq / draws as f64 - mean * mean) / draws as f64).sqrt();

        // Direct oracle: <y,x> - E[min over routes of perturbed cost],
        // enumerating the three s->t routes explicitly.
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let mut direct_sum = 0.0;
        for _ in 0..draws {
            let e: Vec<f64> = (0..5)
                .map(|_| sigma * rand::Rng::sample::<f64, _>(&mut rng, StandardNormal))
                .collect();
            let c = |ids: &[usize]| -> f64 {
                ids.iter().map(|&i| (y.as_slice()[i] + e[i]).max(1e-9)).sum()
            };
            let m = c(&[0, 1]).min(c(&[2, 3])).min(c(&[4]));
            direct_sum += m;
        }
        let direct = x.dot(y.as_slice()) - direct_sum / draws as f64;
        assert!(
            (mean - direct).abs() <= 3.0 * se * 2f64.sqrt(),
            "estimator {mean} vs direct {direct} (se {se})"
        );
        assert!(mean >= -3.0 * se, "expected FY loss must be nonnegative, got {mean}");
    }

    #[test]
    fn fy_grad_cases() {
        let a = SolutionVector::from_edge_ids(6, &[3]).unwrap();
        let b = SolutionVector::from_edge_ids(6, &[5]).unwrap();
        let grad = fy_grad_y(&a, &b).unwrap();
        assert_eq!(grad, vec![0.0, 0.0, 0.0, 1.0, 0.0, -1.0]);
        let zero = fy_grad_y(&a, &a).unwrap();
        assert!(zero.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn fy_grad_matches_finite_difference_of_expected_loss() {
        // E[x - x_hat] vs central differences of the Monte Carlo expectation
        // with common random numbers, on a 5-edge graph.
        let g = diamond();
        let y0 = vec![1.0, 1.0, 1.2, 1.2, 2.6];
        let p = Requirement::SourceTarget { source: 0, target: 3 };
        let x = solve(
            SolverKind::Spp,
            &g,
            &CostVector::new(y0.clone()).unwrap(),
            &p,
        )
        .unwrap();
        let sigma = 0.5;
        let draws = 100_000;

        // Common random numbers: one fixed set of perturbations.
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let eps_draws: Vec<Vec<f64>> = (0..draws)
            .map(|_| {
                (0..5)
                    .map(|_| sigma * rand::Rng::sample::<f64, _>(&mut rng, StandardNormal))
                    .collect()
            })
            .collect();

        let loss_at = |y: &[f64]| -> f64 {
            let mut total = 0.0;
            for e in &eps_draws {
                let pert: Vec<f64> =
                    y.iter().zip(e).map(|(&c, &d)| (c + d).max(1e-9)).collect();
                let yv = CostVector::new(pert).unwrap();
                let xh = solve(SolverKind::Spp, &g, &yv, &p).unwrap();
                total += x.dot(y) - (xh.dot(y) + xh.dot(e));
            }
            total / draws as f64
        };

        let mut analytic = vec![0.0; 5];
        for e in &eps_draws {
            let pert: Vec<f64> = y0.iter().zip(e).map(|(&c, &d)| (c + d).max(1e-9)).collect();
            let xh = solve(SolverKind::Spp, &g, &CostVector::new(pert).unwrap(), &p).unwrap();
            for (a, v) in analytic.iter_mut().zip(fy_grad_y(&x, &xh).unwrap()) {
                *a += v;
            }
        }
        for a in &mut analytic {
            *a /= draws as f64;
        }

        let h = 0.02;
        let mut fd = vec![0.0; 5];
        for i in 0..5 {
            let mut plus = y0.clone();
            plus[i] += h;
            let mut minus = y0.clone();
            minus[i] -= h;
            fd[i] = (loss_at(&plus) - loss_at(&minus)) / (2.0 * h);
        }

        let num: f64 = analytic
            .iter()
            .zip(&fd)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt();
        let den: f64 = fd.iter().map(|v| v * v).sum::<f64>().sqrt();
        assert!(num / den < 0.05, "rel err {} (analytic {analytic:?} fd {fd:?})", num / den);
    }

    #[test]
    fn kl_closed_form_cases() {
        assert_eq!(kl_gaussian(&[0.0], &[1.0]).unwrap(), 0.0);
        assert!((kl_gaussian(&[1.0], &[1.0]).unwrap() - 0.5).abs() < 1e-15);
        assert!(matches!(
            kl_gaussian(&[0.0], &[0.0]),
            Err(ModelError::NonPositiveSigma)
        ));
    }

    #[test]
    fn kl_nonnegative_and_zero_only_at_standard_normal() {
        let mut rng = StdRng::seed_from_u64(13);
        for _ in 0..200 {
            let mu: Vec<f64> = (0..3).map(|_| rand::Rng::gen_range(&mut rng, -2.0..2.0)).collect();
            let sigma: Vec<f64> =
                (0..3).map(|_| rand::Rng::gen_range(&mut rng, 0.05..3.0)).collect();
            let kl = kl_gaussian(&mu, &sigma).unwrap();
            assert!(kl >= 0.0);
            let off = mu.iter().any(|&m| m != 0.0) || sigma.iter().any(|&s| s != 1.0);
            if kl == 0.0 {
                assert!(!off);
            }
        }
    }

    #[test]
    fn kl_matches_quadrature_oracle() {
        // Numerical integration of sum_i KL(N(mu_i, sigma_i^2) || N(0,1))
        // with Simpson's rule, per dimension.
        fn kl_1d_quadrature(mu: f64, sigma: f64) -> f64 {
            let lo = mu - 12.0 * sigma.max(1.0);
            let hi = mu + 12.0 * sigma.max(1.0);
            let n = 40_001;
            let hstep = (hi - lo) / (n - 1) as f64;
            let q = |z: f64| {
                (-((z - mu) * (z - mu)) / (2.0 * sigma * sigma)).exp()
                    / (sigma * (2.0 * std::f64::consts::PI).sqrt())
            };
            let p = |z: f64| {
                (-z * z / 2.0).exp() / (2.0 * std::f64::consts::PI).sqrt()
            };
            let f = |z: f64| {
                let qz = q(z);
                if qz <= 1e-300 {
                    0.0
                } else {
                    qz * (qz / p(z)).ln()
                }
            };
            let mut total = f(lo) + f(hi);
            for i in 1..n - 1 {
                let z = lo + i as f64 * hstep;
                total += f(z) * if i % 2 == 1 { 4.0 } else { 2.0 };
            }
            total * hstep / 3.0
        }
        let mut rng = StdRng::seed_from_u64(14);
        for _ in 0..20 {
            let mu: Vec<f64> = (0..2).map(|_| rand::Rng::gen_range(&mut rng, -2.0..2.0)).collect();
            let sigma: Vec<f64> =
                (0..2).map(|_| rand::Rng::gen_range(&mut rng, 0.2..2.5)).collect();
            let closed = kl_gaussian(&mu, &sigma).unwrap();
            let quad: f64 = mu
                .iter()
                .zip(&sigma)
                .map(|(&m, &s)| kl_1d_quadrature(m, s))
                .sum();
            assert!(
                (closed - quad).abs() < 1e-6,
                "closed {closed} vs quadrature {quad}"
            );
        }
    }

    #[test]
    fn checkpoint_round_trip_and_arch_check() {
        let g = diamond();
        let mut rng = StdRng::seed_from_u64(15);
        let arch = toy_arch(2);
        let m = IoLvmModel::new(&g, &arch, &mut rng);
        let cfg = TrainConfig::default();
        let ckpt = Checkpoint {
            version: CHECKPOINT_VERSION,
            kind: ModelKind::IoLvm,
            config: cfg.clone(),
            arch: Some(arch.clone()),
            config_hash: config_hash(&cfg, Some(&arch)),
            epochs_done: 3,
            encoder: Some(m.encoder.clone()),
            decoder: Some(m.decoder.clone()),
            po_raw: None,
            encoder_opt: None,
            decoder_opt: None,
            po_opt: None,
        };
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("checkpoint.json");
        ckpt.save(&path).unwrap();
        let loaded = Checkpoint::load(&path).unwrap();
        assert_eq!(loaded, ckpt);

        let mut bad = ckpt.clone();
        bad.arch = Some(ModelArch {
            latent_dim: 2,
            hidden_dims: vec![64],
            solver_kind: SolverKind::Spp,
        });
        bad.save(&path).unwrap();
        assert!(matches!(
            Checkpoint::load(&path),
            Err(ModelError::ArchitectureMismatch(_))
        ));
    }

    #[test]
    fn oracle_equivalence_spp_brute_on_diamond() {
        let g = diamond();
        let y = CostVector::new(vec![0.9, 0.8, 1.0, 0.4, 1.8]).unwrap();
        let p = Requirement::SourceTarget { source: 0, target: 3 };
        assert_eq!(
            solve(SolverKind::Spp, &g, &y, &p).unwrap(),
            brute_force(SolverKind::Spp, &g, &y, &p).unwrap()
        );
    }
}
