//! Training loop for the solver-in-the-loop model: per sample encode, sample
//! a latent, decode costs, solve once on perturbed costs, and backpropagate
//! the analytic loss gradient through decoder and encoder.
//!
//! Within a batch samples are processed in fixed-size chunks that are mapped
//! in parallel and reduced in chunk order, so results are bit-identical for
//! any worker count.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::graph::Graph;
use crate::neural::{ForwardCache, MlpGrads, OptimizerHyper, OptimizerState};
use crate::seeding::{stream_rng, StreamPurpose};
use crate::solvers::{solve_perturbed, CostVector};

use super::{
    config_hash, encoder_input, fy_grad_y, fy_loss, kl_gaussian, split_posterior, Checkpoint,
    EpochReport, IoLvmModel, ModelArch, ModelError, ModelKind, TrainConfig, TrainSample,
    CHECKPOINT_VERSION, GRAD_CHUNK,
};

/// Owns the model plus optimizer state across epochs.
#[derive(Debug, Clone)]
pub struct IoLvmTrainer {
    pub model: IoLvmModel,
    pub cfg: TrainConfig,
    arch: ModelArch,
    encoder_opt: OptimizerState,
    decoder_opt: OptimizerState,
    epochs_done: usize,
}

/// Everything computed before the batch perturbation scale is known.
struct SamplePass {
    enc_cache: ForwardCache,
    dec_cache: ForwardCache,
    mu: Vec<f64>,
    sigma: Vec<f64>,
    eps_z: Vec<f64>,
    y: CostVector,
    rng: ChaCha8Rng,
}

/// Per-sample statistics gathered during the epoch.
#[derive(Debug, Clone)]
struct SampleStat {
    fy: f64,
    kl: f64,
    iou: f64,
    clamps: usize,
    reconstruction: Vec<u8>,
}

impl IoLvmTrainer {
    pub fn new(g: &Graph, arch: ModelArch, cfg: TrainConfig) -> Self {
        let mut rng = stream_rng(cfg.seed, StreamPurpose::Init, 0, 0);
        let model = IoLvmModel::new(g, &arch, &mut rng);
        let hyper = OptimizerHyper::new(cfg.optimizer, cfg.learning_rate, cfg.weight_decay);
        let encoder_opt = OptimizerState::for_mlp(hyper, &model.encoder);
        let decoder_opt = OptimizerState::for_mlp(hyper, &model.decoder);
        Self { model, cfg, arch, encoder_opt, decoder_opt, epochs_done: 0 }
    }

    /// Restore a trainer from a checkpoint (resumes mid-run deterministically
    /// because every RNG stream is keyed by epoch and sample index).
    pub fn from_checkpoint(ckpt: &Checkpoint) -> Result<Self, ModelError> {
        if ckpt.kind != ModelKind::IoLvm {
            return Err(ModelError::ArchitectureMismatch(format!(
                "checkpoint holds a {} model",
                ckpt.kind
            )));
        }
        let arch = ckpt
            .arch
            .clone()
            .ok_or_else(|| ModelError::Format("checkpoint lacks architecture".into()))?;
        let (Some(encoder), Some(decoder)) = (ckpt.encoder.clone(), ckpt.decoder.clone()) else {
            return Err(ModelError::Format("checkpoint lacks network parameters".into()));
        };
        let model = IoLvmModel {
            encoder,
            decoder,
            latent_dim: arch.latent_dim,
            solver_kind: arch.solver_kind,
        };
        let hyper = OptimizerHyper::new(
            ckpt.config.optimizer,
            ckpt.config.learning_rate,
            ckpt.config.weight_decay,
        );
        let encoder_opt = ckpt
            .encoder_opt
            .clone()
            .unwrap_or_else(|| OptimizerState::for_mlp(hyper, &model.encoder));
        let decoder_opt = ckpt
            .decoder_opt
            .clone()
            .unwrap_or_else(|| OptimizerState::for_mlp(hyper, &model.decoder));
        Ok(Self {
            model,
            cfg: ckpt.config.clone(),
            arch,
            encoder_opt,
            decoder_opt,
            epochs_done: ckpt.epochs_done,
        })
    }

    pub fn epochs_done(&self) -> usize {
        self.epochs_done
    }

    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint {
            version: CHECKPOINT_VERSION,
            kind: ModelKind::IoLvm,
            config: self.cfg.clone(),
            arch: Some(self.arch.clone()),
            config_hash: config_hash(&self.cfg, Some(&self.arch)),
            epochs_done: self.epochs_done,
            encoder: Some(self.model.encoder.clone()),
            decoder: Some(self.model.decoder.clone()),
            po_raw: None,
            encoder_opt: Some(self.encoder_opt.clone()),
            decoder_opt: Some(self.decoder_opt.clone()),
            po_opt: None,
        }
    }

    /// One pass over the dataset (Steps 1-6 per sample, updates per batch).
    pub fn train_epoch(
        &mut self,
        g: &Graph,
        samples: &[TrainSample],
    ) -> Result<EpochReport, ModelError> {
        super::validate_dataset(g, samples)?;
        let epoch = self.epochs_done;
        let order = shuffled_indices(samples.len(), self.cfg.seed, epoch);
        let batch_size = self.cfg.batch_size.max(1);

        let mut stats: Vec<SampleStat> = Vec::with_capacity(samples.len());
        let mut sigma_sum = 0.0;
        let mut batches = 0usize;

        for batch in order.chunks(batch_size) {
            // Phase A: encode, sample z, decode costs.
            let passes: Vec<Result<SamplePass, ModelError>> = batch
                .par_chunks(GRAD_CHUNK)
                .flat_map_iter(|chunk| {
                    chunk.iter().map(|&idx| {
                        let rng = stream_rng(
                            self.cfg.seed,
                            StreamPurpose::Sample,
                            epoch as u64,
                            idx as u64,
                        );
                        self.phase_a(g, &samples[idx], rng)
                    })
                })
                .collect();
            let passes: Vec<SamplePass> =
                passes.into_iter().collect::<Result<_, _>>()?;

            let mean_cost = passes.iter().map(|p| p.y.mean()).sum::<f64>()
                / passes.len() as f64;
            let sigma_eps = self.cfg.resolve_sigma(mean_cost);
            sigma_sum += sigma_eps;
            batches += 1;

            // Phase B: solve perturbed, losses, gradients; deterministic
            // chunked reduction.
            let work: Vec<(usize, SamplePass)> =
                batch.iter().copied().zip(passes).collect();
            let chunk_results: Vec<Result<ChunkOut, ModelError>> = work
                .par_chunks(GRAD_CHUNK)
                .map(|chunk| self.phase_b_chunk(g, samples, chunk, sigma_eps))
                .collect();

            let mut enc_acc = MlpGrads::zeros_like(&self.model.encoder);
            let mut dec_acc = MlpGrads::zeros_like(&self.model.decoder);
            for res in chunk_results {
                let out = res?;
                enc_acc.add_scaled(&out.enc, 1.0);
                dec_acc.add_scaled(&out.dec, 1.0);
                stats.extend(out.stats);
            }
            let scale = 1.0 / batch.len() as f64;
            enc_acc.scale(scale);
            dec_acc.scale(scale);
            self.encoder_opt.step_mlp(&mut self.model.encoder, &enc_acc)?;
            self.decoder_opt.step_mlp(&mut self.model.decoder, &dec_acc)?;
        }

        let report = summarize(epoch, &stats, self.cfg.beta, sigma_sum / batches.max(1) as f64);
        if !report.avg_loss.is_finite() {
            return Err(ModelError::NonFiniteLoss { epoch });
        }
        self.epochs_done += 1;
        Ok(report)
    }

    /// Run `epochs` epochs, invoking `on_epoch` after each.
    pub fn train<F: FnMut(&EpochReport)>(
        &mut self,
        g: &Graph,
        samples: &[TrainSample],
        epochs: usize,
        mut on_epoch: F,
    ) -> Result<Vec<EpochReport>, ModelError> {
        let mut reports = Vec::with_capacity(epochs);
        for _ in 0..epochs {
            let report = self.train_epoch(g, samples)?;
            on_epoch(&report);
            reports.push(report);
        }
        Ok(reports)
    }

    fn phase_a(
        &self,
        g: &Graph,
        sample: &TrainSample,
        mut rng: ChaCha8Rng,
    ) -> Result<SamplePass, ModelError> {
        let input = encoder_input(g, &sample.solution, &sample.requirement)?;
        let (enc_out, enc_cache) = self.model.encoder.forward(&input)?;
        let (mu, sigma) = split_posterior(&enc_out, self.model.latent_dim);
        let eps_z: Vec<f64> = (0..self.model.latent_dim)
            .map(|_| rng.sample::<f64, _>(rand_distr::StandardNormal))
            .collect();
        let z: Vec<f64> = mu
            .iter()
            .zip(&sigma)
            .zip(&eps_z)
            .map(|((&m, &s), &e)| m + s * e)
            .collect();
        let (dec_out, dec_cache) = self.model.decoder.forward(&z)?;
        let y = CostVector::new(dec_out).expect("softplus output is finite");
        Ok(SamplePass { enc_cache, dec_cache, mu, sigma, eps_z, y, rng })
    }

    fn phase_b_chunk(
        &self,
        g: &Graph,
        samples: &[TrainSample],
        chunk: &[(usize, SamplePass)],
        sigma_eps: f64,
    ) -> Result<ChunkOut, ModelError> {
        let mut enc = MlpGrads::zeros_like(&self.model.encoder);
        let mut dec = MlpGrads::zeros_like(&self.model.decoder);
        let mut stats = Vec::with_capacity(chunk.len());
        for (idx, pass) in chunk {
            let sample = &samples[*idx];
            let mut rng = pass.rng.clone();
            let perturbed = solve_perturbed(
                self.model.solver_kind,
                g,
                &pass.y,
                &sample.requirement,
                sigma_eps,
                self.cfg.clamp_floor,
                &mut rng,
            )?;
            let x_hat = &perturbed.solution;
            let fy = fy_loss(&pass.y, &sample.solution, x_hat, &perturbed.eps)?;
            let kl = kl_gaussian(&pass.mu, &pass.sigma)?;
            let grad_y = fy_grad_y(&sample.solution, x_hat)?;
            let (dec_grads, dz) = self.model.decoder.backward(&pass.dec_cache, &grad_y)?;
            // Head gradient: FY term through the reparameterization plus the
            // KL term, both per latent dimension.
            let k = self.model.latent_dim;
            let mut head = vec![0.0; 2 * k];
            for i in 0..k {
                head[i] = dz[i] + self.cfg.beta * pass.mu[i];
                head[k + i] = dz[i] * pass.sigma[i] * pass.eps_z[i]
                    + self.cfg.beta * (pass.sigma[i] * pass.sigma[i] - 1.0);
            }
            let (enc_grads, _) = self.model.encoder.backward(&pass.enc_cache, &head)?;
            enc.add_scaled(&enc_grads, 1.0);
            dec.add_scaled(&dec_grads, 1.0);
            stats.push(SampleStat {
                fy,
                kl,
                iou: crate::eval::iou(&sample.solution, x_hat).expect("same graph"),
                clamps: perturbed.clamp_count,
                reconstruction: x_hat.bits().to_vec(),
            });
        }
        Ok(ChunkOut { enc, dec, stats })
    }
}

struct ChunkOut {
    enc: MlpGrads,
    dec: MlpGrads,
    stats: Vec<SampleStat>,
}

/// Fisher-Yates order for one epoch, independent of thread count.
pub(crate) fn shuffled_indices(n: usize, seed: u64, epoch: usize) -> Vec<usize> {
    let mut rng = stream_rng(seed, StreamPurpose::Shuffle, epoch as u64, 0);
    let mut order: Vec<usize> = (0..n).collect();
    for i in (1..n).rev() {
        let j = rng.gen_range(0..=i);
        order.swap(i, j);
    }
    order
}

fn summarize(epoch: usize, stats: &[SampleStat], beta: f64, sigma_eps: f64) -> EpochReport {
    let n = stats.len().max(1) as f64;
    let avg_fy = stats.iter().map(|s| s.fy).sum::<f64>() / n;
    let avg_kl = stats.iter().map(|s| s.kl).sum::<f64>() / n;
    let train_iou = stats.iter().map(|s| s.iou).sum::<f64>() / n;
    let clamp_count = stats.iter().map(|s| s.clamps).sum();
    let distinct: std::collections::HashSet<&[u8]> =
        stats.iter().map(|s| s.reconstruction.as_slice()).collect();
    EpochReport {
        epoch,
        avg_loss: avg_fy + beta * avg_kl,
        avg_fy,
        avg_kl,
        train_iou,
        distinct_reconstructions: distinct.len(),
        clamp_count,
        sigma_eps,
    }
}

/// CSV header matching [`EpochReport::csv_row`].
pub const TRAINING_LOG_HEADER: &str =
    "epoch,loss,fy,kl,iou,distinct_paths,clamp_count,sigma_eps";

impl EpochReport {
    pub fn csv_row(&self) -> String {
        format!(
            "{},{:.12},{:.12},{:.12},{:.12},{},{},{:.12}",
            self.epoch,
            self.avg_loss,
            self.avg_fy,
            self.avg_kl,
            self.train_iou,
            self.distinct_reconstructions,
            self.clamp_count,
            self.sigma_eps
        )
    }
}
