//! Perturbed-optimizer baseline: one global positive cost vector learned
//! with the same perturbed Fenchel-Young gradient, no encoder and no latent.
//! At inference it re-introduces the training noise and samples solutions
//! as `solve(y + eps)`.

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::graph::{Graph, Requirement};
use crate::neural::{sigmoid, softplus, OptimizerHyper, OptimizerState};
use crate::seeding::{stream_rng, StreamPurpose};
use crate::solvers::{solve_perturbed, CostVector, SolverKind};

use super::train::shuffled_indices;
use super::{
    config_hash, fy_grad_y, fy_loss, Checkpoint, EpochReport, ModelError, ModelKind, TrainConfig,
    TrainSample, CHECKPOINT_VERSION, GRAD_CHUNK,
};

/// Free parameters reparameterized through softplus into positive costs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PoBaseline {
    raw: Vec<f64>,
    pub solver_kind: SolverKind,
}

impl PoBaseline {
    /// Initialize so every decoded cost starts at 1.
    pub fn new(edge_count: usize, solver_kind: SolverKind) -> Self {
        let raw0 = (std::f64::consts::E - 1.0).ln();
        Self { raw: vec![raw0; edge_count], solver_kind }
    }

    pub fn raw(&self) -> &[f64] {
        &self.raw
    }

    /// The learned global cost vector `softplus(raw)`.
    pub fn cost_vector(&self) -> CostVector {
        CostVector::new(self.raw.iter().map(|&r| softplus(r)).collect())
            .expect("softplus output is finite")
    }
}

/// Owns the baseline plus optimizer state across epochs.
#[derive(Debug, Clone)]
pub struct PoTrainer {
    pub model: PoBaseline,
    pub cfg: TrainConfig,
    opt: OptimizerState,
    epochs_done: usize,
}

impl PoTrainer {
    pub fn new(g: &Graph, solver_kind: SolverKind, cfg: TrainConfig) -> Self {
        let model = PoBaseline::new(g.edge_count(), solver_kind);
        let hyper = OptimizerHyper::new(cfg.optimizer, cfg.learning_rate, cfg.weight_decay);
        let opt = OptimizerState::for_shapes(hyper, &[g.edge_count()]);
        Self { model, cfg, opt, epochs_done: 0 }
    }

    pub fn from_checkpoint(ckpt: &Checkpoint, solver_kind: SolverKind) -> Result<Self, ModelError> {
        if ckpt.kind != ModelKind::Po {
            return Err(ModelError::ArchitectureMismatch(format!(
                "checkpoint holds a {} model",
                ckpt.kind
            )));
        }
        let raw = ckpt
            .po_raw
            .clone()
            .ok_or_else(|| ModelError::Format("checkpoint lacks cost parameters".into()))?;
        let hyper = OptimizerHyper::new(
            ckpt.config.optimizer,
            ckpt.config.learning_rate,
            ckpt.config.weight_decay,
        );
        let len = raw.len();
        let opt = ckpt
            .po_opt
            .clone()
            .unwrap_or_else(|| OptimizerState::for_shapes(hyper, &[len]));
        Ok(Self {
            model: PoBaseline { raw, solver_kind },
            cfg: ckpt.config.clone(),
            opt,
            epochs_done: ckpt.epochs_done,
        })
    }

    pub fn epochs_done(&self) -> usize {
        self.epochs_done
    }

    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint {
            version: CHECKPOINT_VERSION,
            kind: ModelKind::Po,
            config: self.cfg.clone(),
            arch: None,
            config_hash: config_hash(&self.cfg, None),
            epochs_done: self.epochs_done,
            encoder: None,
            decoder: None,
            po_raw: Some(self.model.raw.clone()),
            encoder_opt: None,
            decoder_opt: None,
            po_opt: Some(self.opt.clone()),
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

        let mut fy_all = Vec::with_capacity(samples.len());
        let mut iou_all = Vec::with_capacity(samples.len());
        let mut distinct = std::collections::HashSet::new();
        let mut clamp_total = 0usize;
        let mut sigma_sum = 0.0;
        let mut batches = 0usize;

        for batch in order.chunks(batch_size) {
            let y = self.model.cost_vector();
            let sigma_eps = self.cfg.resolve_sigma(y.mean());
            sigma_sum += sigma_eps;
            batches += 1;

            type ChunkOut = (Vec<f64>, Vec<(f64, f64, usize, Vec<u8>)>);
            let chunk_results: Vec<Result<ChunkOut, ModelError>> = batch
                .par_chunks(GRAD_CHUNK)
                .map(|chunk| {
                    let mut grad = vec![0.0; y.len()];
                    let mut stats = Vec::with_capacity(chunk.len());
                    for &idx in chunk {
                        let sample = &samples[idx];
                        let mut rng = stream_rng(
                            self.cfg.seed,
                            StreamPurpose::Sample,
                            epoch as u64,
                            idx as u64,
                        );
                        let r = solve_perturbed(
                            self.model.solver_kind,
                            g,
                            &y,
                            &sample.requirement,
                            sigma_eps,
                            self.cfg.clamp_floor,
                            &mut rng,
                        )?;
                        let fy = fy_loss(&y, &sample.solution, &r.solution, &r.eps)?;
                        let gy = fy_grad_y(&sample.solution, &r.solution)?;
                        for ((gw, &gyi), &raw) in
                            grad.iter_mut().zip(&gy).zip(&self.model.raw)
                        {
                            *gw += gyi * sigmoid(raw);
                        }
                        let iou = crate::eval::iou(&sample.solution, &r.solution)
                            .expect("same graph");
                        stats.push((fy, iou, r.clamp_count, r.solution.bits().to_vec()));
                    }
                    Ok((grad, stats))
                })
                .collect();

            let mut grad_acc = vec![0.0; y.len()];
            for res in chunk_results {
                let (grad, stats) = res?;
                for (a, b) in grad_acc.iter_mut().zip(grad) {
                    *a += b;
                }
                for (fy, iou, clamps, bits) in stats {
                    fy_all.push(fy);
                    iou_all.push(iou);
                    clamp_total += clamps;
                    distinct.insert(bits);
                }
            }
            let scale = 1.0 / batch.len() as f64;
            for gv in &mut grad_acc {
                *gv *= scale;
            }
            self.opt.step_flat(&mut self.model.raw, &grad_acc)?;
        }

        let n = fy_all.len().max(1) as f64;
        let avg_fy = fy_all.iter().sum::<f64>() / n;
        let report = EpochReport {
            epoch,
            avg_loss: avg_fy,
            avg_fy,
            avg_kl: 0.0,
            train_iou: iou_all.iter().sum::<f64>() / n,
            distinct_reconstructions: distinct.len(),
            clamp_count: clamp_total,
            sigma_eps: sigma_sum / batches.max(1) as f64,
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
}

/// Train a fresh perturbed-optimizer baseline for `cfg.epochs` epochs.
pub fn train_po_baseline(
    g: &Graph,
    samples: &[TrainSample],
    solver_kind: SolverKind,
    cfg: TrainConfig,
) -> Result<(PoBaseline, Vec<EpochReport>), ModelError> {
    let mut trainer = PoTrainer::new(g, solver_kind, cfg.clone());
    let reports = trainer.train(g, samples, cfg.epochs, |_| {})?;
    Ok((trainer.model, reports))
}

/// Sample solutions as `solve(y + eps)` with the training-time noise scale.
pub fn po_sample_solutions<R: Rng + ?Sized>(
    model: &PoBaseline,
    g: &Graph,
    p: &Requirement,
    n: usize,
    sigma_eps: f64,
    clamp_floor: f64,
    rng: &mut R,
) -> Result<Vec<crate::graph::SolutionVector>, ModelError> {
    let y = model.cost_vector();
    let mut out = Vec::with_capacity(n);
    for _ in 0..n {
        let r = solve_perturbed(model.solver_kind, g, &y, p, sigma_eps, clamp_floor, rng)?;
        out.push(r.solution);
    }
    Ok(out)
}
