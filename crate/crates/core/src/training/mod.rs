//! Composite-loss training: the bidirectional orchestration, the epoch loop
//! with rectified-Adam updates and validation-driven learning-rate decay,
//! cross-validation with a shared fold manifest, checkpoints, and the
//! single-sample forward pass used for inspection and analysis.

pub mod checkpoint;
pub mod config;
pub mod losses;
pub mod model;
pub mod optimizer;

pub use checkpoint::{load_checkpoint, save_checkpoint};
pub use config::{
    AlphaMode, CellKind, ExperimentConfig, InitCfg, NormalizationCfg, WeightShapeCfg,
};
pub use losses::{
    consistency_loss, focal_loss, imputation_loss, predict_mortality,
    predict_mortality_bidirectional, vrnn_loss, StepDistributions,
};
pub use model::{DirectionParams, Model};
pub use optimizer::RAdam;

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use rand_distr::Distribution;
use serde::{Deserialize, Serialize};

use crate::data_model::{mask_dataset_skipping_empty, Batch, Dataset, TimeSeriesSample};
use crate::error::{Result, UgssError};
use crate::graph::{Matrix, NodeId, Tape};
use crate::ingestion::fit_preprocessor;
use crate::params::BoundParams;
use crate::training::model::{consistency_node, unroll_direction, DirectionOut};

const SHUFFLE_STREAM: u64 = 0x5u64 << 32;
const NOISE_STREAM: u64 = 0x6u64 << 32;
const SPLIT_STREAM: u64 = 0x7u64 << 32;
pub(crate) const MASK_STREAM: u64 = 0x8u64 << 32;

/// The four loss terms per direction plus the composite total, as evaluated
/// on one batch (or averaged over an epoch).
#[derive(Clone, Copy, Debug, Default, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub vrnn_fwd: f64,
    pub vrnn_bwd: f64,
    pub cons_fwd: f64,
    pub cons_bwd: f64,
    pub imp_fwd: f64,
    pub imp_bwd: f64,
    pub cls_fwd: f64,
    pub cls_bwd: f64,
    pub total: f64,
}

impl LossBreakdown {
    /// Recompose the total from the parts; the unroll guarantees this equals
    /// `total` to tight tolerance.
    pub fn composed(&self, lambda_vrnn: f64, lambda_cons: f64, lambda_imp: f64) -> f64 {
        lambda_vrnn * (self.vrnn_fwd + self.vrnn_bwd)
            + lambda_cons * (self.cons_fwd + self.cons_bwd)
            + lambda_imp * (self.imp_fwd + self.imp_bwd)
            + (self.cls_fwd + self.cls_bwd)
    }

    fn scaled(&self, c: f64) -> LossBreakdown {
        LossBreakdown {
            vrnn_fwd: self.vrnn_fwd * c,
            vrnn_bwd: self.vrnn_bwd * c,
            cons_fwd: self.cons_fwd * c,
            cons_bwd: self.cons_bwd * c,
            imp_fwd: self.imp_fwd * c,
            imp_bwd: self.imp_bwd * c,
            cls_fwd: self.cls_fwd * c,
            cls_bwd: self.cls_bwd * c,
            total: self.total * c,
        }
    }

    fn add_assign(&mut self, other: &LossBreakdown) {
        self.vrnn_fwd += other.vrnn_fwd;
        self.vrnn_bwd += other.vrnn_bwd;
        self.cons_fwd += other.cons_fwd;
        self.cons_bwd += other.cons_bwd;
        self.imp_fwd += other.imp_fwd;
        self.imp_bwd += other.imp_bwd;
        self.cls_fwd += other.cls_fwd;
        self.cls_bwd += other.cls_bwd;
        self.total += other.total;
    }
}

/// One batch graph: direction outputs, composite total, and the breakdown.
pub(crate) struct BatchGraph {
    pub fwd: DirectionOut,
    pub bwd: Option<DirectionOut>,
    pub total: NodeId,
    pub breakdown: LossBreakdown,
}

/// Assemble the full composite-loss graph for one batch (both directions in
/// bidirectional mode).
pub(crate) fn build_batch_graph(
    tape: &mut Tape,
    bound: &BoundParams,
    model: &Model,
    batch_fwd: &Batch,
    batch_bwd: Option<&Batch>,
    noise_fwd: Option<&[Matrix]>,
    noise_bwd: Option<&[Matrix]>,
) -> Result<BatchGraph> {
    let cfg = &model.config;
    let fwd = unroll_direction(tape, bound, &model.fwd, batch_fwd, cfg, noise_fwd)?;
    let bwd = match (&model.bwd, batch_bwd) {
        (Some(dp), Some(batch)) => {
            Some(unroll_direction(tape, bound, dp, batch, cfg, noise_bwd)?)
        }
        _ => None,
    };

    let cons = match (&bwd, batch_bwd) {
        (Some(b), Some(bb)) => Some(consistency_node(tape, &fwd, b, bb, &batch_fwd.lengths)),
        _ => None,
    };

    // total = lv*(vrnn_f + vrnn_b) + lc*(cons + cons) + li*(imp_f + imp_b)
    //       + (cls_f + cls_b)
    let mut total = {
        let v = match &bwd {
            Some(b) => tape.add(fwd.l_vrnn, b.l_vrnn),
            None => fwd.l_vrnn,
        };
        tape.scale(v, cfg.lambda_vrnn)
    };
    if let Some(c) = cons {
        let both = tape.scale(c, 2.0 * cfg.lambda_cons);
        total = tape.add(total, both);
    }
    {
        let i = match &bwd {
            Some(b) => tape.add(fwd.l_imp, b.l_imp),
            None => fwd.l_imp,
        };
        let i = tape.scale(i, cfg.lambda_imp);
        total = tape.add(total, i);
    }
    {
        let c = match &bwd {
            Some(b) => tape.add(fwd.l_cls, b.l_cls),
            None => fwd.l_cls,
        };
        total = tape.add(total, c);
    }

    let cons_val = cons.map(|c| tape.value(c)[(0, 0)]).unwrap_or(0.0);
    let breakdown = LossBreakdown {
        vrnn_fwd: tape.value(fwd.l_vrnn)[(0, 0)],
        vrnn_bwd: bwd.as_ref().map(|b| tape.value(b.l_vrnn)[(0, 0)]).unwrap_or(0.0),
        cons_fwd: cons_val,
        cons_bwd: cons_val,
        imp_fwd: tape.value(fwd.l_imp)[(0, 0)],
        imp_bwd: bwd.as_ref().map(|b| tape.value(b.l_imp)[(0, 0)]).unwrap_or(0.0),
        cls_fwd: tape.value(fwd.l_cls)[(0, 0)],
        cls_bwd: bwd.as_ref().map(|b| tape.value(b.l_cls)[(0, 0)]).unwrap_or(0.0),
        total: tape.value(total)[(0, 0)],
    };
    Ok(BatchGraph { fwd, bwd, total, breakdown })
}

fn standard_normal_matrix(rng: &mut ChaCha12Rng, rows: usize, cols: usize) -> Matrix {
    Matrix::from_shape_fn((rows, cols), |_| {
        Distribution::<f64>::sample(&rand_distr::StandardNormal, rng)
    })
}

fn noise_plan(rng: &mut ChaCha12Rng, steps: usize, rows: usize, latent: usize) -> Vec<Matrix> {
    (0..steps).map(|_| standard_normal_matrix(rng, rows, latent)).collect()
}

/// Group sample indices into batches of equal sequence length (so the two
/// directions stay aligned step-for-step), shuffling within groups.
fn length_bucketed_batches(
    dataset: &Dataset,
    batch_size: usize,
    rng: Option<&mut ChaCha12Rng>,
) -> Vec<Vec<usize>> {
    let mut groups: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (i, s) in dataset.samples.iter().enumerate() {
        groups.entry(s.n_steps()).or_default().push(i);
    }
    let mut order: Vec<Vec<usize>> = Vec::new();
    let mut all: Vec<Vec<usize>> = groups.into_values().collect();
    if let Some(rng) = rng {
        for g in all.iter_mut() {
            g.shuffle(rng);
        }
    }
    for g in all {
        for chunk in g.chunks(batch_size) {
            order.push(chunk.to_vec());
        }
    }
    order
}

/// One epoch record: per-sample-mean losses and validation metrics.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub loss: LossBreakdown,
    pub val_auc: Option<f64>,
    pub val_auprc: Option<f64>,
    pub learning_rate: f64,
}

pub struct TrainOutcome {
    pub model: Model,
    pub history: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub best_val_auc: Option<f64>,
}

/// Train on a prepared (normalized, artificially masked) split, selecting the
/// best parameters by validation AUC.
pub fn train_single(
    config: &ExperimentConfig,
    train: &Dataset,
    val: &Dataset,
) -> Result<TrainOutcome> {
    config.validate()?;
    if train.is_empty() {
        return Err(UgssError::validation("empty training split"));
    }
    let mut model = Model::init(config, train.n_variables())?;
    let reversed: Vec<TimeSeriesSample> = if config.bidirectional {
        train.samples.iter().map(TimeSeriesSample::reversed).collect()
    } else {
        Vec::new()
    };

    let mut shuffle_rng = ChaCha12Rng::seed_from_u64(config.seed ^ SHUFFLE_STREAM);
    let mut noise_rng = ChaCha12Rng::seed_from_u64(config.seed ^ NOISE_STREAM);
    let mut opt = RAdam::new(&model.store, config.learning_rate);

    let mut history = Vec::with_capacity(config.epochs);
    let mut best: Option<(usize, f64, Vec<Matrix>)> = None; // epoch, score, params
    let mut epochs_since_improvement = 0usize;

    for epoch in 1..=config.epochs {
        let batches = length_bucketed_batches(train, config.batch_size, Some(&mut shuffle_rng));
        let mut epoch_loss = LossBreakdown::default();
        let n_total = train.len() as f64;

        for idx in &batches {
            let fwd_samples: Vec<&TimeSeriesSample> =
                idx.iter().map(|&i| &train.samples[i]).collect();
            let batch_fwd = Batch::from_samples(&fwd_samples);
            let batch_bwd = config.bidirectional.then(|| {
                let bwd_samples: Vec<&TimeSeriesSample> =
                    idx.iter().map(|&i| &reversed[i]).collect();
                Batch::from_samples(&bwd_samples)
            });

            let b = idx.len();
            let t_max = batch_fwd.n_steps();
            let mut tape = Tape::new();
            let bound = model.store.bind(&mut tape);

            let mut totals = Vec::with_capacity(config.mc_samples);
            let mut breakdown = LossBreakdown::default();
            for _ in 0..config.mc_samples {
                let noise_f = noise_plan(&mut noise_rng, t_max, b, config.latent_dim);
                let noise_b = config
                    .bidirectional
                    .then(|| noise_plan(&mut noise_rng, t_max, b, config.latent_dim));
                let run = build_batch_graph(
                    &mut tape,
                    &bound,
                    &model,
                    &batch_fwd,
                    batch_bwd.as_ref(),
                    Some(&noise_f),
                    noise_b.as_deref(),
                )?;
                breakdown.add_assign(&run.breakdown);
                totals.push(run.total);
            }
            let total = if totals.len() == 1 {
                totals[0]
            } else {
                let mut acc = totals[0];
                for t in &totals[1..] {
                    acc = tape.add(acc, *t);
                }
                tape.scale(acc, 1.0 / totals.len() as f64)
            };
            let breakdown = breakdown.scaled(1.0 / config.mc_samples as f64);

            let total_value = tape.value(total)[(0, 0)];
            if !total_value.is_finite() || total_value > 1e6 {
                return Err(UgssError::Training(format!(
                    "divergence at epoch {epoch}: total loss {total_value} \
                     (vrnn {:.3e}/{:.3e}, cons {:.3e}, imp {:.3e}/{:.3e}, cls {:.3e}/{:.3e})",
                    breakdown.vrnn_fwd,
                    breakdown.vrnn_bwd,
                    breakdown.cons_fwd,
                    breakdown.imp_fwd,
                    breakdown.imp_bwd,
                    breakdown.cls_fwd,
                    breakdown.cls_bwd,
                )));
            }

            let mut grads = tape.backward(total);
            let pairs: Vec<_> = model
                .store
                .ids()
                .filter_map(|id| grads.take(bound.node(id)).map(|g| (id, g)))
                .collect();
            opt.step(&mut model.store, &pairs);

            // batch-sum terms scale by 1, batch-mean terms by B, for a final
            // division by the split size
            let bf = b as f64;
            epoch_loss.add_assign(&LossBreakdown {
                vrnn_fwd: breakdown.vrnn_fwd,
                vrnn_bwd: breakdown.vrnn_bwd,
                cons_fwd: breakdown.cons_fwd * bf,
                cons_bwd: breakdown.cons_bwd * bf,
                imp_fwd: breakdown.imp_fwd * bf,
                imp_bwd: breakdown.imp_bwd * bf,
                cls_fwd: breakdown.cls_fwd,
                cls_bwd: breakdown.cls_bwd,
                total: breakdown.total,
            });
        }
        let epoch_loss = epoch_loss.scaled(1.0 / n_total);

        let (val_auc, val_auprc) = if val.is_empty() {
            (None, None)
        } else {
            let pred = predict_dataset(&model, val)?;
            let auc = crate::evaluation::auc(&pred.probabilities, &pred.label_flags()).ok();
            let auprc =
                crate::evaluation::auprc(&pred.probabilities, &pred.label_flags()).ok();
            (auc, auprc)
        };

        // model selection: validation AUC when defined, otherwise the
        // negative training loss
        let score = val_auc.unwrap_or(-epoch_loss.total);
        let improved = best.as_ref().map(|(_, s, _)| score > *s).unwrap_or(true);
        if improved {
            let snapshot = model.store.ids().map(|id| model.store.value(id).clone()).collect();
            best = Some((epoch, score, snapshot));
            epochs_since_improvement = 0;
        } else {
            epochs_since_improvement += 1;
            if epochs_since_improvement >= config.lr_patience {
                opt.learning_rate *= config.lr_decay;
                epochs_since_improvement = 0;
                log::info!("epoch {epoch}: decayed learning rate to {}", opt.learning_rate);
            }
        }

        log::debug!(
            "epoch {epoch}: total {:.5} cons {:.5} val_auc {:?}",
            epoch_loss.total,
            epoch_loss.cons_fwd,
            val_auc
        );
        history.push(EpochRecord {
            epoch,
            loss: epoch_loss,
            val_auc,
            val_auprc,
            learning_rate: opt.learning_rate,
        });
    }

    let (best_epoch, _, snapshot) = best.expect("at least one epoch ran");
    for (id, value) in model.store.ids().zip(snapshot) {
        *model.store.value_mut(id) = value;
    }
    let best_val_auc = history[best_epoch - 1].val_auc;
    Ok(TrainOutcome { model, history, best_epoch, best_val_auc })
}

/// Per-sample evaluation output: mortality probabilities and the final
/// (bidirectionally averaged) imputations and uncertainties.
pub struct PredictionOutput {
    pub probabilities: Vec<f64>,
    pub labels: Vec<bool>,
    pub imputations: Vec<Matrix>,
    pub uncertainties: Vec<Matrix>,
}

impl PredictionOutput {
    pub fn label_flags(&self) -> Vec<bool> {
        self.labels.clone()
    }
}

/// Deterministic evaluation pass (latent at the posterior mean).
pub fn predict_dataset(model: &Model, dataset: &Dataset) -> Result<PredictionOutput> {
    let n = dataset.len();
    let mut probabilities = vec![0.0; n];
    let mut imputations: Vec<Matrix> = vec![Matrix::zeros((0, 0)); n];
    let mut uncertainties: Vec<Matrix> = vec![Matrix::zeros((0, 0)); n];

    for idx in length_bucketed_batches(dataset, model.config.batch_size, None) {
        let fwd_samples: Vec<&TimeSeriesSample> =
            idx.iter().map(|&i| &dataset.samples[i]).collect();
        let batch_fwd = Batch::from_samples(&fwd_samples);
        let reversed: Vec<TimeSeriesSample> = if model.config.bidirectional {
            fwd_samples.iter().map(|s| s.reversed()).collect()
        } else {
            Vec::new()
        };
        let batch_bwd = model.config.bidirectional.then(|| {
            let refs: Vec<&TimeSeriesSample> = reversed.iter().collect();
            Batch::from_samples(&refs)
        });

        let mut tape = Tape::new();
        let bound = model.store.bind(&mut tape);
        let run = build_batch_graph(
            &mut tape,
            &bound,
            model,
            &batch_fwd,
            batch_bwd.as_ref(),
            None,
            None,
        )?;

        for (slot, &gi) in idx.iter().enumerate() {
            let len = dataset.samples[gi].n_steps();
            let d = dataset.n_variables();
            let logit_f = tape.value(run.fwd.logit)[(slot, 0)];
            let p = match &run.bwd {
                Some(b) => {
                    let logit_b = tape.value(b.logit)[(slot, 0)];
                    predict_mortality_bidirectional(logit_f, logit_b)
                }
                None => 1.0 / (1.0 + (-logit_f).exp()),
            };
            probabilities[gi] = p;

            let mut imp = Matrix::zeros((len, d));
            let mut unc = Matrix::zeros((len, d));
            for t in 0..len {
                let xf = tape.value(run.fwd.x_hat[t]);
                let uf = tape.value(run.fwd.u[t]);
                match &run.bwd {
                    Some(b) => {
                        let tb = len - 1 - t;
                        let xb = tape.value(b.x_hat[tb]);
                        let ub = tape.value(b.u[tb]);
                        for j in 0..d {
                            imp[(t, j)] = 0.5 * (xf[(slot, j)] + xb[(slot, j)]);
                            unc[(t, j)] = 0.5 * (uf[(slot, j)] + ub[(slot, j)]);
                        }
                    }
                    None => {
                        for j in 0..d {
                            imp[(t, j)] = xf[(slot, j)];
                            unc[(t, j)] = uf[(slot, j)];
                        }
                    }
                }
            }
            imputations[gi] = imp;
            uncertainties[gi] = unc;
        }
    }
    Ok(PredictionOutput {
        probabilities,
        labels: dataset.samples.iter().map(|s| s.label).collect(),
        imputations,
        uncertainties,
    })
}

/// Which unroll direction a single-sample pass runs.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Direction {
    Forward,
    Backward,
}

/// Per-timestep state extracted from a single-sample pass.
#[derive(Clone, Debug, PartialEq)]
pub struct StepState {
    pub z: Vec<f64>,
    pub x_hat: Vec<f64>,
    pub u: Vec<f64>,
    pub alpha: Vec<f64>,
    pub h: Vec<f64>,
}

pub struct ForwardPass {
    pub steps: Vec<StepState>,
    pub probability: f64,
    pub l_vrnn: f64,
    pub l_imp: f64,
    pub l_cls: f64,
}

/// Run one direction over a single sample. `Backward` runs the reversed
/// sequence (intervals recomputed under the reversed clock) through the
/// backward parameters when present, or the forward parameters otherwise
/// (shared-parameter analysis). `noise[t]` is `1 x latent`; `None` uses the
/// posterior mean.
pub fn run_forward_pass(
    model: &Model,
    sample: &TimeSeriesSample,
    direction: Direction,
    noise: Option<&[Matrix]>,
) -> Result<ForwardPass> {
    let (prepared, dp) = match direction {
        Direction::Forward => (sample.clone(), &model.fwd),
        Direction::Backward => {
            (sample.reversed(), model.bwd.as_ref().unwrap_or(&model.fwd))
        }
    };
    let batch = Batch::from_samples(&[&prepared]);
    let mut tape = Tape::new();
    let bound = model.store.bind(&mut tape);
    let out = unroll_direction(&mut tape, &bound, dp, &batch, &model.config, noise)?;
    let steps = (0..batch.n_steps())
        .map(|t| StepState {
            z: tape.value(out.z[t]).row(0).to_vec(),
            x_hat: tape.value(out.x_hat[t]).row(0).to_vec(),
            u: tape.value(out.u[t]).row(0).to_vec(),
            alpha: tape.value(out.alpha[t]).row(0).to_vec(),
            h: tape.value(out.h[t]).row(0).to_vec(),
        })
        .collect();
    let logit = tape.value(out.logit)[(0, 0)];
    Ok(ForwardPass {
        steps,
        probability: 1.0 / (1.0 + (-logit).exp()),
        l_vrnn: tape.value(out.l_vrnn)[(0, 0)],
        l_imp: tape.value(out.l_imp)[(0, 0)],
        l_cls: tape.value(out.l_cls)[(0, 0)],
    })
}

// ---------------------------------------------------------------------------
// Cross-validation
// ---------------------------------------------------------------------------

/// Fold assignment shared between the model and every baseline.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq, Eq)]
pub struct FoldManifest {
    pub seed: u64,
    pub folds: usize,
    /// Fold id per sample index.
    pub assignment: Vec<usize>,
}

pub fn make_folds(n_samples: usize, folds: usize, seed: u64) -> FoldManifest {
    let mut rng = ChaCha12Rng::seed_from_u64(seed ^ SPLIT_STREAM);
    let mut order: Vec<usize> = (0..n_samples).collect();
    order.shuffle(&mut rng);
    let mut assignment = vec![0usize; n_samples];
    for (rank, &i) in order.iter().enumerate() {
        assignment[i] = rank % folds;
    }
    FoldManifest { seed, folds, assignment }
}

/// Normalized, artificially masked train/val/test splits for one fold.
pub struct PreparedSplits {
    pub train: Dataset,
    pub val: Dataset,
    pub test: Dataset,
    pub preprocessor: crate::ingestion::Preprocessor,
}

fn subset(dataset: &Dataset, indices: &[usize]) -> Dataset {
    Dataset {
        variables: dataset.variables.clone(),
        samples: indices.iter().map(|&i| dataset.samples[i].clone()).collect(),
        normalization: dataset.normalization.clone(),
    }
}

/// Fit the preprocessor on the training subset only, apply it everywhere,
/// then hold out `masking_ratio` of the observed entries of every sample.
/// Masking seeds derive from each sample's index in the full dataset, so
/// model and baselines see identical holdouts.
pub fn prepare_splits(
    config: &ExperimentConfig,
    dataset: &Dataset,
    train_idx: &[usize],
    val_idx: &[usize],
    test_idx: &[usize],
) -> Result<PreparedSplits> {
    let raw_train = subset(dataset, train_idx);
    let prep = fit_preprocessor(&raw_train, config.winsor_low, config.winsor_high)?;
    let mask_split = |idx: &[usize]| -> Result<Dataset> {
        let normalized = prep.apply(&subset(dataset, idx))?;
        mask_dataset_skipping_empty(
            &normalized,
            config.masking_ratio,
            idx.iter().map(|&gi| config.seed ^ MASK_STREAM ^ (gi as u64)).collect(),
        )
    };
    Ok(PreparedSplits {
        train: mask_split(train_idx)?,
        val: mask_split(val_idx)?,
        test: mask_split(test_idx)?,
        preprocessor: prep,
    })
}

/// Deterministic train/validation split of the non-test indices.
pub fn split_train_val(
    pool: &[usize],
    validation_fraction: f64,
    seed: u64,
    fold: usize,
) -> (Vec<usize>, Vec<usize>) {
    let mut rng = ChaCha12Rng::seed_from_u64(seed ^ SPLIT_STREAM ^ (fold as u64 + 1));
    let mut order = pool.to_vec();
    order.shuffle(&mut rng);
    let n_val = ((order.len() as f64) * validation_fraction).round() as usize;
    let n_val = n_val.clamp(1, order.len().saturating_sub(1).max(1));
    let val = order[..n_val].to_vec();
    let train = order[n_val..].to_vec();
    (train, val)
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct FoldMetrics {
    pub fold: usize,
    pub test_auc: f64,
    pub test_auprc: f64,
    pub test_masked_mae: Option<f64>,
    pub best_epoch: usize,
    pub best_val_auc: Option<f64>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CvSummary {
    pub auc_mean: f64,
    pub auc_std: f64,
    pub auprc_mean: f64,
    pub auprc_std: f64,
    pub mae_mean: Option<f64>,
    pub mae_std: Option<f64>,
}

pub struct CvOutcome {
    pub manifest: FoldManifest,
    pub folds: Vec<FoldMetrics>,
    pub histories: Vec<Vec<EpochRecord>>,
    pub models: Vec<Model>,
    pub summary: CvSummary,
}

fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// K-fold cross-validation on a raw (unnormalized, unmasked) dataset,
/// reporting mean and sample standard deviation over folds. A fold manifest
/// may be supplied to replicate earlier splits; otherwise one is derived
/// from the config seed.
pub fn train_cv(
    config: &ExperimentConfig,
    dataset: &Dataset,
    manifest: Option<FoldManifest>,
) -> Result<CvOutcome> {
    config.validate()?;
    if dataset.len() < config.folds.max(2) {
        return Err(UgssError::validation("dataset too small for the fold layout"));
    }
    let manifest =
        manifest.unwrap_or_else(|| make_folds(dataset.len(), config.folds, config.seed));
    if manifest.assignment.len() != dataset.len() {
        return Err(UgssError::validation("fold manifest does not match the dataset"));
    }

    let mut folds = Vec::new();
    let mut histories = Vec::new();
    let mut models = Vec::new();
    for fold in 0..manifest.folds {
        let test_idx: Vec<usize> = (0..dataset.len())
            .filter(|&i| manifest.assignment[i] == fold)
            .collect();
        let pool: Vec<usize> = (0..dataset.len())
            .filter(|&i| manifest.assignment[i] != fold)
            .collect();
        let (train_idx, val_idx) =
            split_train_val(&pool, config.validation_fraction, config.seed, fold);
        let prepared = prepare_splits(config, dataset, &train_idx, &val_idx, &test_idx)?;
        let outcome = train_single(config, &prepared.train, &prepared.val)?;

        let pred = predict_dataset(&outcome.model, &prepared.test)?;
        let labels = pred.label_flags();
        let auc = crate::evaluation::auc(&pred.probabilities, &labels)?;
        let auprc = crate::evaluation::auprc(&pred.probabilities, &labels)?;
        let mae = crate::evaluation::masked_mae_dataset(&prepared.test, &pred.imputations).ok();
        log::info!(
            "fold {fold}: auc {auc:.4} auprc {auprc:.4} mae {:?} (best epoch {})",
            mae,
            outcome.best_epoch
        );
        folds.push(FoldMetrics {
            fold,
            test_auc: auc,
            test_auprc: auprc,
            test_masked_mae: mae,
            best_epoch: outcome.best_epoch,
            best_val_auc: outcome.best_val_auc,
        });
        histories.push(outcome.history);
        models.push(outcome.model);
    }

    let (auc_mean, auc_std) = mean_std(&folds.iter().map(|f| f.test_auc).collect::<Vec<_>>());
    let (auprc_mean, auprc_std) =
        mean_std(&folds.iter().map(|f| f.test_auprc).collect::<Vec<_>>());
    let maes: Vec<f64> = folds.iter().filter_map(|f| f.test_masked_mae).collect();
    let (mae_mean, mae_std) = if maes.is_empty() {
        (None, None)
    } else {
        let (m, s) = mean_std(&maes);
        (Some(m), Some(s))
    };
    Ok(CvOutcome {
        manifest,
        folds,
        histories,
        models,
        summary: CvSummary { auc_mean, auc_std, auprc_mean, auprc_std, mae_mean, mae_std },
    })
}

/// Run manifest written next to training artifacts.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RunManifest {
    pub config: ExperimentConfig,
    pub seed: u64,
    pub git_revision: Option<String>,
    pub optimizer: String,
    pub folds: Vec<FoldMetrics>,
    pub summary: Option<CvSummary>,
}
