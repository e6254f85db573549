//! VAE baseline: same encoder, but the decoder emits per-edge usage
//! probabilities through a sigmoid head and is trained with a Bernoulli
//! likelihood. Nothing enforces feasibility of its thresholded outputs;
//! that contrast is the point of the baseline.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::eval::Reconstruction;
use crate::graph::{validate_solution, Graph, Requirement, SolutionVector};
use crate::neural::{
    softplus, ForwardCache, MlpGrads, MlpParams, OptimizerHyper, OptimizerState, OutputActivation,
};
use crate::seeding::{stream_rng, StreamPurpose};

use super::train::shuffled_indices;
use super::{
    config_hash, encoder_input, encoder_input_dim, kl_gaussian, split_posterior, Checkpoint,
    EpochReport, ModelArch, ModelError, ModelKind, TrainConfig, TrainSample, CHECKPOINT_VERSION,
    GRAD_CHUNK,
};

/// Encoder plus probability decoder.
#[derive(Debug, Clone, PartialEq)]
pub struct VaeBaseline {
    pub encoder: MlpParams,
    pub decoder: MlpParams,
    pub latent_dim: usize,
}

impl VaeBaseline {
    pub fn new<R: Rng + ?Sized>(g: &Graph, arch: &ModelArch, rng: &mut R) -> Self {
        let mut enc_dims = vec![encoder_input_dim(g)];
        enc_dims.extend(&arch.hidden_dims);
        enc_dims.push(2 * arch.latent_dim);
        let mut dec_dims = vec![arch.latent_dim];
        dec_dims.extend(&arch.hidden_dims);
        dec_dims.push(g.edge_count());
        Self {
            encoder: MlpParams::new(&enc_dims, OutputActivation::Identity, rng),
            decoder: MlpParams::new(&dec_dims, OutputActivation::Sigmoid, rng),
            latent_dim: arch.latent_dim,
        }
    }

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

    /// Per-edge usage probabilities for a latent.
    pub fn decode_probs(&self, z: &[f64]) -> Result<Vec<f64>, ModelError> {
        if z.len() != self.latent_dim {
            return Err(ModelError::LengthMismatch { expected: self.latent_dim, got: z.len() });
        }
        let (out, _) = self.decoder.forward(z)?;
        Ok(out)
    }

    /// Threshold probabilities at 0.5 into a bit vector.
    pub fn binarize(probs: &[f64]) -> SolutionVector {
        SolutionVector::from_bits(probs.iter().map(|&p| (p >= 0.5) as u8).collect())
            .expect("bits are 0/1")
    }

    /// Deterministic reconstruction through the posterior mean; the result
    /// is only `Feasible` when the thresholded bits validate.
    pub fn reconstruct(
        &self,
        g: &Graph,
        x: &SolutionVector,
        p: &Requirement,
    ) -> Result<(SolutionVector, Reconstruction), ModelError> {
        let (mu, _) = self.encode(g, x, p)?;
        let probs = self.decode_probs(&mu)?;
        let bits = Self::binarize(&probs);
        let report = validate_solution(g, &bits, p)?;
        let outcome = if report.feasible {
            Reconstruction::Feasible(bits.clone())
        } else {
            Reconstruction::Infeasible
        };
        Ok((bits, outcome))
    }
}

/// Owns the baseline plus optimizer state across epochs.
#[derive(Debug, Clone)]
pub struct VaeTrainer {
    pub model: VaeBaseline,
    pub cfg: TrainConfig,
    arch: ModelArch,
    encoder_opt: OptimizerState,
    decoder_opt: OptimizerState,
    epochs_done: usize,
}

struct VaePass {
    enc_cache: ForwardCache,
    dec_cache: ForwardCache,
    mu: Vec<f64>,
    sigma: Vec<f64>,
    eps_z: Vec<f64>,
    probs: Vec<f64>,
}

struct VaeChunk {
    enc: MlpGrads,
    dec: MlpGrads,
    recon: Vec<f64>,
    kl: Vec<f64>,
    iou: Vec<f64>,
    bits: Vec<Vec<u8>>,
}

impl VaeTrainer {
    pub fn new(g: &Graph, arch: ModelArch, cfg: TrainConfig) -> Self {
        let mut rng = stream_rng(cfg.seed, StreamPurpose::Init, 0, 0);
        let model = VaeBaseline::new(g, &arch, &mut rng);
        let hyper = OptimizerHyper::new(cfg.optimizer, cfg.learning_rate, cfg.weight_decay);
        let encoder_opt = OptimizerState::for_mlp(hyper, &model.encoder);
        let decoder_opt = OptimizerState::for_mlp(hyper, &model.decoder);
        Self { model, cfg, arch, encoder_opt, decoder_opt, epochs_done: 0 }
    }

    pub fn from_checkpoint(ckpt: &Checkpoint) -> Result<Self, ModelError> {
        if ckpt.kind != ModelKind::Vae {
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
        let model = VaeBaseline { encoder, decoder, latent_dim: arch.latent_dim };
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
            kind: ModelKind::Vae,
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

    pub fn train_epoch(
        &mut self,
        g: &Graph,
        samples: &[TrainSample],
    ) -> Result<EpochReport, ModelError> {
        super::validate_dataset(g, samples)?;
        let epoch = self.epochs_done;
        let order = shuffled_indices(samples.len(), self.cfg.seed, epoch);
        let batch_size = self.cfg.batch_size.max(1);

        let mut recon_all = Vec::with_capacity(samples.len());
        let mut kl_all = Vec::with_capacity(samples.len());
        let mut iou_all = Vec::with_capacity(samples.len());
        let mut distinct = std::collections::HashSet::new();

        for batch in order.chunks(batch_size) {
            let chunk_results: Vec<Result<VaeChunk, ModelError>> = batch
                .par_chunks(GRAD_CHUNK)
                .map(|chunk| self.chunk_pass(g, samples, chunk, epoch))
                .collect();
            let mut enc_acc = MlpGrads::zeros_like(&self.model.encoder);
            let mut dec_acc = MlpGrads::zeros_like(&self.model.decoder);
            for res in chunk_results {
                let out = res?;
                enc_acc.add_scaled(&out.enc, 1.0);
                dec_acc.add_scaled(&out.dec, 1.0);
                recon_all.extend(out.recon);
                kl_all.extend(out.kl);
                iou_all.extend(out.iou);
                for b in out.bits {
                    distinct.insert(b);
                }
            }
            let scale = 1.0 / batch.len() as f64;
            enc_acc.scale(scale);
            dec_acc.scale(scale);
            self.encoder_opt.step_mlp(&mut self.model.encoder, &enc_acc)?;
            self.decoder_opt.step_mlp(&mut self.model.decoder, &dec_acc)?;
        }

        let n = recon_all.len().max(1) as f64;
        let avg_fy = recon_all.iter().sum::<f64>() / n;
        let avg_kl = kl_all.iter().sum::<f64>() / n;
        let report = EpochReport {
            epoch,
            avg_loss: avg_fy + self.cfg.beta * avg_kl,
            avg_fy,
            avg_kl,
            train_iou: iou_all.iter().sum::<f64>() / n,
            distinct_reconstructions: distinct.len(),
            clamp_count: 0,
            sigma_eps: 0.0,
        };
        if !report.avg_loss.is_finite() {
            return Err(ModelError::NonFiniteLoss { epoch });
        }
        self.epochs_done += 1;
        Ok(report)
    }

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

    fn chunk_pass(
        &self,
        g: &Graph,
        samples: &[TrainSample],
        chunk: &[usize],
        epoch: usize,
    ) -> Result<VaeChunk, ModelError> {
        let mut out = VaeChunk {
            enc: MlpGrads::zeros_like(&self.model.encoder),
            dec: MlpGrads::zeros_like(&self.model.decoder),
            recon: Vec::with_capacity(chunk.len()),
            kl: Vec::with_capacity(chunk.len()),
            iou: Vec::with_capacity(chunk.len()),
            bits: Vec::with_capacity(chunk.len()),
        };
        for &idx in chunk {
            let sample = &samples[idx];
            let mut rng: ChaCha8Rng =
                stream_rng(self.cfg.seed, StreamPurpose::Sample, epoch as u64, idx as u64);
            let pass = self.forward_sample(g, sample, &mut rng)?;
            let logits = pass.dec_cache.output_preactivation();
            // Bernoulli negative log-likelihood via logits: stable for
            // saturated probabilities.
            let bits_f: Vec<f64> = sample.solution.as_f64();
            let recon: f64 = logits
                .iter()
                .zip(&bits_f)
                .map(|(&l, &b)| softplus(l) - b * l)
                .sum();
            let kl = kl_gaussian(&pass.mu, &pass.sigma)?;
            let grad_logits: Vec<f64> =
                pass.probs.iter().zip(&bits_f).map(|(&p, &b)| p - b).collect();
            let (dec_grads, dz) =
                self.model.decoder.backward_from_preactivation(&pass.dec_cache, &grad_logits)?;
            let k = self.model.latent_dim;
            let mut head = vec![0.0; 2 * k];
            for i in 0..k {
                head[i] = dz[i] + self.cfg.beta * pass.mu[i];
                head[k + i] = dz[i] * pass.sigma[i] * pass.eps_z[i]
                    + self.cfg.beta * (pass.sigma[i] * pass.sigma[i] - 1.0);
            }
            let (enc_grads, _) = self.model.encoder.backward(&pass.enc_cache, &head)?;
            out.enc.add_scaled(&enc_grads, 1.0);
            out.dec.add_scaled(&dec_grads, 1.0);

            let bin = VaeBaseline::binarize(&pass.probs);
            out.iou.push(crate::eval::iou(&sample.solution, &bin).expect("same graph"));
            out.bits.push(bin.bits().to_vec());
            out.recon.push(recon);
            out.kl.push(kl);
        }
        Ok(out)
    }

    fn forward_sample(
        &self,
        g: &Graph,
        sample: &TrainSample,
        rng: &mut ChaCha8Rng,
    ) -> Result<VaePass, ModelError> {
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
        let (probs, dec_cache) = self.model.decoder.forward(&z)?;
        Ok(VaePass { enc_cache, dec_cache, mu, sigma, eps_z, probs })
    }
}

/// Train a fresh VAE baseline for `cfg.epochs` epochs.
pub fn train_vae_baseline(
    g: &Graph,
    samples: &[TrainSample],
    arch: ModelArch,
    cfg: TrainConfig,
) -> Result<(VaeBaseline, Vec<EpochReport>), ModelError> {
    let mut trainer = VaeTrainer::new(g, arch, cfg.clone());
    let reports = trainer.train(g, samples, cfg.epochs, |_| {})?;
    Ok((trainer.model, reports))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{build_graph, NodePoint};
    use crate::model::SigmaEpsMode;
    use crate::neural::OptimizerKind;
    use crate::solvers::SolverKind;

    fn line_graph() -> Graph {
        let nodes = (0..4)
            .map(|i| NodePoint { id: i, x: i as f64, y: 0.0 })
            .collect();
        build_graph(nodes, vec![(0, 1), (1, 2), (2, 3), (0, 3)], true).unwrap()
    }

    fn cfg(beta: f64) -> TrainConfig {
        TrainConfig {
            beta,
            sigma_eps: 0.0,
            sigma_eps_mode: SigmaEpsMode::Absolute,
            learning_rate: 5e-3,
            batch_size: 4,
            epochs: 1,
            optimizer: OptimizerKind::AdamW,
            seed: 3,
            clamp_floor: 1e-6,
            weight_decay: 0.0,
        }
    }

    fn arch() -> ModelArch {
        ModelArch { latent_dim: 2, hidden_dims: vec![16], solver_kind: SolverKind::Spp }
    }

    #[test]
    fn probabilities_stay_in_unit_interval() {
        let g = line_graph();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0);
        use rand::SeedableRng;
        let _ = &mut rng;
        let vae = VaeBaseline::new(
            &g,
            &arch(),
            &mut stream_rng(1, StreamPurpose::Init, 0, 0),
        );
        let probs = vae.decode_probs(&[0.5, -0.5]).unwrap();
        assert!(probs.iter().all(|&p| p > 0.0 && p < 1.0));
    }

    #[test]
    fn single_sample_memorization_without_kl() {
        // beta = 0, one sample, long training: the reconstruction becomes
        // (near) perfect.
        let g = line_graph();
        let x = SolutionVector::from_edge_ids(4, &[0, 1, 2]).unwrap();
        let p = Requirement::SourceTarget { source: 0, target: 3 };
        let samples = vec![TrainSample { solution: x.clone(), requirement: p }];
        let mut trainer = VaeTrainer::new(&g, arch(), cfg(0.0));
        for _ in 0..400 {
            trainer.train_epoch(&g, &samples).unwrap();
        }
        let (bits, outcome) = trainer.model.reconstruct(&g, &x, &p).unwrap();
        assert_eq!(bits, x);
        assert_eq!(outcome, Reconstruction::Feasible(x));
    }

    #[test]
    fn vae_training_is_deterministic() {
        let g = line_graph();
        let x = SolutionVector::from_edge_ids(4, &[3]).unwrap();
        let p = Requirement::SourceTarget { source: 0, target: 3 };
        let samples = vec![TrainSample { solution: x, requirement: p }];
        let mut a = VaeTrainer::new(&g, arch(), cfg(0.5));
        let mut b = VaeTrainer::new(&g, arch(), cfg(0.5));
        for _ in 0..3 {
            assert_eq!(
                a.train_epoch(&g, &samples).unwrap(),
                b.train_epoch(&g, &samples).unwrap()
            );
        }
        assert_eq!(a.model, b.model);
    }
}
