//! Zero-impute and mean-impute vanilla-GRU baselines used by the relative
//! acceptance checks: missing entries are filled by a constant rule, a plain
//! GRU reads the completed matrix, and only the focal classification loss is
//! trained.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Serialize};

use crate::data_model::{Batch, Dataset, TimeSeriesSample};
use crate::error::{Result, UgssError};
use crate::graph::{Matrix, Tape};
use crate::gru_u::{vanilla_gru_step, GruUParams};
use crate::params::{ParamId, ParamStore};
use crate::training::model::focal_loss_node;
use crate::training::{ExperimentConfig, RAdam};

/// Constant fill rule for missing entries.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ImputeMethod {
    Zero,
    Mean,
}

/// Zero imputation: missing entries stay at the sentinel zero.
pub fn zero_impute(sample: &TimeSeriesSample) -> Matrix {
    sample.x_tilde.clone()
}

/// Mean imputation: missing entries take the per-variable training-set mean
/// (which is zero after z-normalization).
pub fn mean_impute(sample: &TimeSeriesSample, means: &[f64]) -> Matrix {
    let mut out = sample.x_tilde.clone();
    for ((idx, v), m) in out.indexed_iter_mut().zip(sample.mask.iter()) {
        if *m == 0.0 {
            *v = means[idx.1];
        }
    }
    out
}

/// Per-variable means of the observed entries of a (training) split, in the
/// split's current units.
pub fn observed_means(train: &Dataset) -> Vec<f64> {
    let d = train.n_variables();
    let mut sums = vec![0.0; d];
    let mut counts = vec![0usize; d];
    for s in &train.samples {
        for ((i, j), &v) in s.x_tilde.indexed_iter() {
            if s.mask[(i, j)] == 1.0 {
                sums[j] += v;
                counts[j] += 1;
            }
        }
    }
    sums.iter().zip(&counts).map(|(s, &c)| if c == 0 { 0.0 } else { s / c as f64 }).collect()
}

fn completed(sample: &TimeSeriesSample, method: ImputeMethod, means: &[f64]) -> Matrix {
    match method {
        ImputeMethod::Zero => zero_impute(sample),
        ImputeMethod::Mean => mean_impute(sample, means),
    }
}

/// A trained baseline: plain GRU over the completed inputs plus a logistic
/// readout.
pub struct BaselineGru {
    pub method: ImputeMethod,
    pub means: Vec<f64>,
    pub hidden_dim: usize,
    pub store: ParamStore,
    gru: GruUParams,
    w_out: ParamId,
}

pub struct BaselineOutcome {
    pub model: BaselineGru,
    pub train_loss_history: Vec<f64>,
    pub best_epoch: usize,
    pub best_val_auc: Option<f64>,
}

fn unroll_baseline(
    tape: &mut Tape,
    model: &BaselineGru,
    bound: &crate::params::BoundParams,
    batch_inputs: &[Matrix],
    valids: &[Matrix],
    b: usize,
) -> crate::graph::NodeId {
    let mut h = tape.constant(Matrix::zeros((b, model.hidden_dim)));
    for (input, valid) in batch_inputs.iter().zip(valids) {
        let x = tape.constant(input.clone());
        let v = tape.constant(valid.clone());
        let h_new = vanilla_gru_step(tape, bound, &model.gru, x, h);
        let on = tape.mul_col(h_new, v);
        let inv = tape.scale(v, -1.0);
        let inv = tape.add_const(inv, 1.0);
        let off = tape.mul_col(h, inv);
        h = tape.add(on, off);
    }
    tape.matmul(h, bound.node(model.w_out))
}

fn batch_to_inputs(
    samples: &[&TimeSeriesSample],
    method: ImputeMethod,
    means: &[f64],
) -> (Vec<Matrix>, Vec<Matrix>, Matrix) {
    let batch = Batch::from_samples(samples);
    let completed_mats: Vec<Matrix> =
        samples.iter().map(|s| completed(s, method, means)).collect();
    let b = samples.len();
    let d = batch.n_variables;
    let mut inputs = Vec::with_capacity(batch.n_steps());
    let mut valids = Vec::with_capacity(batch.n_steps());
    for t in 0..batch.n_steps() {
        let mut x = Matrix::zeros((b, d));
        for (n, mat) in completed_mats.iter().enumerate() {
            if t < mat.nrows() {
                x.row_mut(n).assign(&mat.row(t));
            }
        }
        inputs.push(x);
        valids.push(batch.steps[t].valid.clone());
    }
    (inputs, valids, batch.labels)
}

/// Train the baseline GRU with the focal classification loss only, selecting
/// the best epoch by validation AUC. Shares the config's seed, batch size,
/// schedule and focal parameters with the main model.
pub fn baseline_gru_train(
    config: &ExperimentConfig,
    method: ImputeMethod,
    train: &Dataset,
    val: &Dataset,
) -> Result<BaselineOutcome> {
    config.validate()?;
    if train.is_empty() {
        return Err(UgssError::validation("empty training split"));
    }
    let d = train.n_variables();
    let means = observed_means(train);
    let mut store = ParamStore::new();
    let mut rng = ChaCha12Rng::seed_from_u64(config.seed ^ 0xba5e);
    let gru = GruUParams::init_vanilla(
        &mut store,
        "baseline.gru",
        d,
        config.hidden_dim,
        config.init.into(),
        &mut rng,
    );
    let w_out = store.add_weight("baseline.cls.w", config.hidden_dim, 1, config.init.into(), &mut rng);
    let mut model =
        BaselineGru { method, means, hidden_dim: config.hidden_dim, store, gru, w_out };

    let mut shuffle_rng = ChaCha12Rng::seed_from_u64(config.seed ^ 0xba5e ^ 0x51);
    let mut opt = RAdam::new(&model.store, config.learning_rate);
    let mut history = Vec::with_capacity(config.epochs);
    let mut best: Option<(usize, f64, Vec<Matrix>)> = None;
    let mut since_improvement = 0usize;

    for epoch in 1..=config.epochs {
        let mut order: Vec<usize> = (0..train.len()).collect();
        order.shuffle(&mut shuffle_rng);
        let mut epoch_loss = 0.0;
        for chunk in order.chunks(config.batch_size) {
            let samples: Vec<&TimeSeriesSample> =
                chunk.iter().map(|&i| &train.samples[i]).collect();
            let (inputs, valids, labels) =
                batch_to_inputs(&samples, model.method, &model.means);
            let mut tape = Tape::new();
            let bound = model.store.bind(&mut tape);
            let logit = unroll_baseline(&mut tape, &model, &bound, &inputs, &valids, chunk.len());
            let label_node = tape.constant(labels);
            let loss = focal_loss_node(
                &mut tape,
                logit,
                label_node,
                config.focal_omega1,
                config.focal_omega2,
            );
            let value = tape.value(loss)[(0, 0)];
            if !value.is_finite() || value > 1e6 {
                return Err(UgssError::Training(format!(
                    "baseline divergence at epoch {epoch}: loss {value}"
                )));
            }
            epoch_loss += value;
            let mut grads = tape.backward(loss);
            let pairs: Vec<_> = model
                .store
                .ids()
                .filter_map(|id| grads.take(bound.node(id)).map(|g| (id, g)))
                .collect();
            opt.step(&mut model.store, &pairs);
        }
        let epoch_loss = epoch_loss / train.len() as f64;
        history.push(epoch_loss);

        let val_auc = if val.is_empty() {
            None
        } else {
            let probs = baseline_predict(&model, val)?;
            let labels: Vec<bool> = val.samples.iter().map(|s| s.label).collect();
            crate::evaluation::auc(&probs, &labels).ok()
        };
        let score = val_auc.unwrap_or(-epoch_loss);
        let improved = best.as_ref().map(|(_, s, _)| score > *s).unwrap_or(true);
        if improved {
            let snap = model.store.ids().map(|id| model.store.value(id).clone()).collect();
            best = Some((epoch, score, snap));
            since_improvement = 0;
        } else {
            since_improvement += 1;
            if since_improvement >= config.lr_patience {
                opt.learning_rate *= config.lr_decay;
                since_improvement = 0;
            }
        }
    }

    let (best_epoch, _, snapshot) = best.expect("at least one epoch");
    for (id, value) in model.store.ids().zip(snapshot) {
        *model.store.value_mut(id) = value;
    }
    let best_val_auc = if val.is_empty() {
        None
    } else {
        let probs = baseline_predict(&model, val)?;
        let labels: Vec<bool> = val.samples.iter().map(|s| s.label).collect();
        crate::evaluation::auc(&probs, &labels).ok()
    };
    Ok(BaselineOutcome { model, train_loss_history: history, best_epoch, best_val_auc })
}

/// Mortality probabilities for a dataset under the trained baseline.
pub fn baseline_predict(model: &BaselineGru, dataset: &Dataset) -> Result<Vec<f64>> {
    let mut out = vec![0.0; dataset.len()];
    let mut by_len: std::collections::BTreeMap<usize, Vec<usize>> = Default::default();
    for (i, s) in dataset.samples.iter().enumerate() {
        by_len.entry(s.n_steps()).or_default().push(i);
    }
    for group in by_len.into_values() {
        for chunk in group.chunks(64) {
            let samples: Vec<&TimeSeriesSample> =
                chunk.iter().map(|&i| &dataset.samples[i]).collect();
            let (inputs, valids, _) = batch_to_inputs(&samples, model.method, &model.means);
            let mut tape = Tape::new();
            let bound = model.store.bind(&mut tape);
            let logit = unroll_baseline(&mut tape, model, &bound, &inputs, &valids, chunk.len());
            for (slot, &gi) in chunk.iter().enumerate() {
                let l = tape.value(logit)[(slot, 0)];
                out[gi] = 1.0 / (1.0 + (-l).exp());
            }
        }
    }
    Ok(out)
}

/// Completed matrices for a whole dataset under a fill rule; used to score
/// baseline imputation error.
pub fn baseline_imputations(
    dataset: &Dataset,
    method: ImputeMethod,
    means: &[f64],
) -> Vec<Matrix> {
    dataset.samples.iter().map(|s| completed(s, method, means)).collect()
}
