//! Model assembly and the batched recurrent unroll: one direction executes
//! prior → posterior → latent sample → generation → decay/blend/correlate/
//! combine → finalize → uncertainty → attention → gated update per step,
//! with padded steps frozen out of the hidden state and every loss term.

use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;

use crate::data_model::Batch;
use crate::error::{Result, UgssError};
use crate::graph::{Matrix, NodeId, Tape};
use crate::gru_u::{attention_weights, gru_u_step, GruUParams};
use crate::imputation::{
    blend_history, combine, extract_uncertainty, feature_correlation, finalize_imputation,
    temporal_decay, DecayParams,
};
use crate::params::{BoundParams, ParamId, ParamStore};
use crate::training::config::{AlphaMode, CellKind, ExperimentConfig};
use crate::vrnn_core::{
    feature, generate, infer_posterior, prior, sample_latent, VrnnDims, VrnnParams,
};

const LN_2PI: f64 = 1.8378770664093453;
const INIT_STREAM: u64 = 0x9e3779b97f4a7c15;

/// Focal-loss probability clamp.
pub const PROB_EPS: f64 = 1e-7;

/// All parameters of one unroll direction.
pub struct DirectionParams {
    pub vrnn: VrnnParams,
    pub imp: DecayParams,
    pub gru: GruUParams,
    /// Projection used only in the multiplicative attention mode.
    pub alpha_proj: Option<ParamId>,
    /// Classifier readout, `H x 1`.
    pub w_out: ParamId,
}

impl DirectionParams {
    fn init(
        store: &mut ParamStore,
        prefix: &str,
        config: &ExperimentConfig,
        n_variables: usize,
        rng: &mut ChaCha12Rng,
    ) -> Self {
        let scheme = config.init.into();
        let dims = VrnnDims {
            n_variables,
            latent_dim: config.latent_dim,
            feature_width: config.feature_width,
            encoder_widths: config.encoder_widths,
            hidden_dim: config.hidden_dim,
        };
        let vrnn = VrnnParams::init(store, prefix, &dims, scheme, rng);
        let imp = DecayParams::init(
            store,
            prefix,
            n_variables,
            config.combine_channels,
            config.w_gamma.into(),
            scheme,
            rng,
        );
        let gate_input_width = 2 * config.feature_width + n_variables;
        let gru = match config.cell {
            CellKind::GruU => GruUParams::init_gru_u(
                store,
                &format!("{prefix}.gru"),
                gate_input_width,
                config.hidden_dim,
                n_variables,
                config.w_alpha.into(),
                scheme,
                rng,
            ),
            CellKind::VanillaGru => GruUParams::init_vanilla(
                store,
                &format!("{prefix}.gru"),
                gate_input_width,
                config.hidden_dim,
                scheme,
                rng,
            ),
        };
        let alpha_proj = match config.alpha_mode {
            AlphaMode::Concat => None,
            AlphaMode::Multiplicative => Some(store.add_weight(
                format!("{prefix}.alpha_proj.w"),
                config.feature_width,
                n_variables,
                scheme,
                rng,
            )),
        };
        let w_out =
            store.add_weight(format!("{prefix}.cls.w"), config.hidden_dim, 1, scheme, rng);
        DirectionParams { vrnn, imp, gru, alpha_proj, w_out }
    }
}

/// The full model: a forward direction and, in bidirectional mode, an
/// independent backward direction run over time-reversed inputs.
pub struct Model {
    pub config: ExperimentConfig,
    pub n_variables: usize,
    pub store: ParamStore,
    pub fwd: DirectionParams,
    pub bwd: Option<DirectionParams>,
}

impl Model {
    pub fn init(config: &ExperimentConfig, n_variables: usize) -> Result<Model> {
        config.validate()?;
        if n_variables == 0 {
            return Err(UgssError::validation("model needs at least one variable"));
        }
        let mut store = ParamStore::new();
        let mut rng = ChaCha12Rng::seed_from_u64(config.seed ^ INIT_STREAM);
        let fwd = DirectionParams::init(&mut store, "fwd", config, n_variables, &mut rng);
        let bwd = config
            .bidirectional
            .then(|| DirectionParams::init(&mut store, "bwd", config, n_variables, &mut rng));
        Ok(Model { config: config.clone(), n_variables, store, fwd, bwd })
    }
}

/// Per-step tape nodes produced by one direction.
pub(crate) struct DirectionOut {
    pub x_hat: Vec<NodeId>,
    pub u: Vec<NodeId>,
    pub alpha: Vec<NodeId>,
    pub z: Vec<NodeId>,
    pub h: Vec<NodeId>,
    pub logit: NodeId,
    /// Batch-summed sequence ELBO loss (negative ELBO).
    pub l_vrnn: NodeId,
    /// Mean-per-sample masked imputation loss.
    pub l_imp: NodeId,
    /// Batch-summed focal classification loss.
    pub l_cls: NodeId,
}

/// Unroll one direction over a batch. `noise[t]` supplies the latent noise
/// per step (`B x latent`); `None` runs with the posterior mean (evaluation).
pub(crate) fn unroll_direction(
    tape: &mut Tape,
    bound: &BoundParams,
    dp: &DirectionParams,
    batch: &Batch,
    config: &ExperimentConfig,
    noise: Option<&[Matrix]>,
) -> Result<DirectionOut> {
    let b = batch.n_samples();
    let d = batch.n_variables;
    let t_max = batch.n_steps();
    let norm = config.normalization.into();
    let has_held_out = batch.held_out_count() > 0;

    let mut h = tape.constant(Matrix::zeros((b, config.hidden_dim)));
    let mut x_hat_steps = Vec::with_capacity(t_max);
    let mut u_steps = Vec::with_capacity(t_max);
    let mut alpha_steps = Vec::with_capacity(t_max);
    let mut z_steps = Vec::with_capacity(t_max);
    let mut h_steps = Vec::with_capacity(t_max);
    let mut l_vrnn_acc: Option<NodeId> = None;
    let mut imp_err_rows: Option<NodeId> = None;

    for t in 0..t_max {
        let step = &batch.steps[t];
        let x_tilde = tape.constant(step.x_tilde.clone());
        let mask = tape.constant(step.mask.clone());
        let delta = tape.constant(step.delta.clone());
        let valid_col = tape.constant(step.valid.clone());

        let prior_g = prior(tape, bound, &dp.vrnn, h, config.latent_dim, norm);
        let post_g =
            infer_posterior(tape, bound, &dp.vrnn, x_tilde, h, config.latent_dim, norm);
        let z = match noise {
            Some(eps) => {
                let eps_node = tape.constant(eps[t].clone());
                sample_latent(tape, post_g, eps_node)
            }
            None => post_g.mean,
        };
        let (gen_g, fz) = generate(tape, bound, &dp.vrnn, z, h, d, norm);

        let gamma = temporal_decay(tape, bound, &dp.imp, delta);
        let c_hist = blend_history(tape, bound, &dp.imp, x_tilde, gen_g.mean, gamma, mask);
        let c_corr = feature_correlation(tape, bound, &dp.imp, gen_g.mean);
        let c_hat = combine(tape, bound, &dp.imp, c_hist, c_corr);
        let x_hat = finalize_imputation(tape, x_tilde, mask, c_hat);
        let u = extract_uncertainty(tape, mask, gen_g.log_var);

        let alpha = match &dp.gru.attention {
            Some(att) => attention_weights(tape, bound, att, u),
            None => tape.constant(Matrix::ones((b, d))),
        };

        let fx_hat = feature(tape, bound, &dp.vrnn.feat_x, x_hat);
        let alpha_block = match dp.alpha_proj {
            None => alpha,
            Some(proj) => {
                let projected = tape.matmul(fx_hat, bound.node(proj));
                tape.mul(alpha, projected)
            }
        };
        let gate_input = tape.concat_cols(&[fx_hat, alpha_block, fz]);
        let mask_arg = matches!(config.cell, CellKind::GruU).then_some(mask);
        let h_new = gru_u_step(tape, bound, &dp.gru, gate_input, h, mask_arg);

        // freeze the hidden state on padded steps
        let h_gated = {
            let on = tape.mul_col(h_new, valid_col);
            let inv = tape.scale(valid_col, -1.0);
            let inv = tape.add_const(inv, 1.0);
            let off = tape.mul_col(h, inv);
            tape.add(on, off)
        };

        tape.ensure_finite(x_hat, t, "x_hat")?;
        tape.ensure_finite(h_gated, t, "h")?;

        // negative log-likelihood on observed entries + KL, gated by validity
        let diff = tape.sub(x_tilde, gen_g.mean);
        let sq = tape.mul(diff, diff);
        let neg_lv = tape.neg(gen_g.log_var);
        let inv_var = tape.exp(neg_lv);
        let mahal = tape.mul(sq, inv_var);
        let nll_terms = tape.add(gen_g.log_var, mahal);
        let nll_terms = tape.add_const(nll_terms, LN_2PI);
        let nll_terms = tape.scale(nll_terms, 0.5);
        let nll_obs = tape.mul(nll_terms, mask);
        let nll_row = sum_cols(tape, nll_obs, d);
        let kl_row = crate::vrnn_core::kl_rowwise(tape, post_g, prior_g);
        let step_loss = tape.add(nll_row, kl_row);
        let step_loss = tape.mul(step_loss, valid_col);
        let step_sum = tape.sum_all(step_loss);
        l_vrnn_acc = Some(match l_vrnn_acc {
            None => step_sum,
            Some(acc) => tape.add(acc, step_sum),
        });

        // held-out absolute error accumulated per sample
        if has_held_out {
            let truth = tape.constant(step.x_truth.clone());
            let imp_mask = tape.constant(step.imp_mask.clone());
            let err = tape.sub(x_hat, truth);
            let err = tape.abs(err);
            let err = tape.mul(err, imp_mask);
            let row = sum_cols(tape, err, d);
            imp_err_rows = Some(match imp_err_rows {
                None => row,
                Some(acc) => tape.add(acc, row),
            });
        }

        x_hat_steps.push(x_hat);
        u_steps.push(u);
        alpha_steps.push(alpha);
        z_steps.push(z);
        h_steps.push(h_gated);
        h = h_gated;
    }

    // the gating above keeps h frozen beyond each sample's length, so the
    // final node is the hidden state at the last valid step
    let logit = tape.matmul(h, bound.node(dp.w_out));

    let l_imp = match imp_err_rows {
        None => {
            log::warn!("batch has no held-out entries; imputation loss is 0");
            tape.scalar(0.0)
        }
        Some(rows) => {
            let weights = per_sample_imp_weights(batch, config.imp_loss_per_sample_norm);
            let w = tape.constant(weights);
            let weighted = tape.mul(rows, w);
            let total = tape.sum_all(weighted);
            tape.scale(total, 1.0 / b as f64)
        }
    };

    let labels = tape.constant(batch.labels.clone());
    let l_cls =
        focal_loss_node(tape, logit, labels, config.focal_omega1, config.focal_omega2);

    Ok(DirectionOut {
        x_hat: x_hat_steps,
        u: u_steps,
        alpha: alpha_steps,
        z: z_steps,
        h: h_steps,
        logit,
        l_vrnn: l_vrnn_acc.expect("at least one step"),
        l_imp,
        l_cls,
    })
}

pub(crate) fn sum_cols(tape: &mut Tape, x: NodeId, ncols: usize) -> NodeId {
    let mean = tape.mean_cols(x);
    tape.scale(mean, ncols as f64)
}

fn per_sample_imp_weights(batch: &Batch, per_sample_norm: bool) -> Matrix {
    let b = batch.n_samples();
    let mut counts = vec![0usize; b];
    for step in &batch.steps {
        for n in 0..b {
            counts[n] += step.imp_mask.row(n).iter().filter(|&&v| v == 1.0).count();
        }
    }
    Matrix::from_shape_fn((b, 1), |(n, _)| {
        if counts[n] == 0 {
            0.0
        } else if per_sample_norm {
            1.0 / counts[n] as f64
        } else {
            1.0
        }
    })
}

/// Focal loss over a batch of logits, summed across the batch:
/// `-w1 * (1 - y_hat)^w2 * ln(y_hat)` with `y_hat` the probability assigned
/// to the true class, clamped away from 0 and 1.
pub(crate) fn focal_loss_node(
    tape: &mut Tape,
    logit: NodeId,
    labels: NodeId,
    omega1: f64,
    omega2: f64,
) -> NodeId {
    let p = tape.sigmoid(logit);
    let p = tape.clamp(p, PROB_EPS, 1.0 - PROB_EPS);
    let on = tape.mul(labels, p);
    let inv_label = tape.scale(labels, -1.0);
    let inv_label = tape.add_const(inv_label, 1.0);
    let inv_p = tape.scale(p, -1.0);
    let inv_p = tape.add_const(inv_p, 1.0);
    let off = tape.mul(inv_label, inv_p);
    let y_hat = tape.add(on, off);
    let ln_y = tape.ln(y_hat);
    let one_minus = tape.scale(y_hat, -1.0);
    let one_minus = tape.add_const(one_minus, 1.0);
    let focus = tape.powf(one_minus, omega2);
    let terms = tape.mul(focus, ln_y);
    let total = tape.sum_all(terms);
    tape.scale(total, -omega1)
}

/// Align the forward estimate with backward step `t_bwd`: for a sample of
/// length `L`, backward step `t` corresponds to forward step `L - 1 - t`.
/// Mixed-length batches are handled with constant row selectors.
pub(crate) fn aligned_forward_estimate(
    tape: &mut Tape,
    fwd: &DirectionOut,
    lengths: &[usize],
    t_bwd: usize,
) -> NodeId {
    let b = lengths.len();
    let mut distinct: Vec<usize> = lengths.iter().copied().filter(|&l| t_bwd < l).collect();
    distinct.sort_unstable();
    distinct.dedup();
    if distinct.len() == 1 && lengths.iter().all(|&l| l == distinct[0]) {
        return fwd.x_hat[distinct[0] - 1 - t_bwd];
    }
    let d = tape.value(fwd.x_hat[0]).ncols();
    let mut acc: Option<NodeId> = None;
    for l in distinct {
        let selector =
            Matrix::from_shape_fn((b, b), |(i, j)| f64::from(i == j && lengths[i] == l));
        let sel = tape.constant(selector);
        let picked = tape.matmul(sel, fwd.x_hat[l - 1 - t_bwd]);
        acc = Some(match acc {
            None => picked,
            Some(a) => tape.add(a, picked),
        });
    }
    acc.unwrap_or_else(|| tape.constant(Matrix::zeros((b, d))))
}

/// Consistency loss between the two directions: per-sample mean absolute
/// difference over valid (step, variable) cells, averaged over the batch.
pub(crate) fn consistency_node(
    tape: &mut Tape,
    fwd: &DirectionOut,
    bwd: &DirectionOut,
    batch_bwd: &Batch,
    lengths: &[usize],
) -> NodeId {
    let b = lengths.len();
    let d = batch_bwd.n_variables;
    let mut acc: Option<NodeId> = None;
    for t in 0..batch_bwd.n_steps() {
        let aligned = aligned_forward_estimate(tape, fwd, lengths, t);
        let diff = tape.sub(aligned, bwd.x_hat[t]);
        let diff = tape.abs(diff);
        let row = sum_cols(tape, diff, d);
        // weight: valid / (L_n * D * B)
        let w = Matrix::from_shape_fn((b, 1), |(n, _)| {
            if t < lengths[n] {
                1.0 / (lengths[n] as f64 * d as f64 * b as f64)
            } else {
                0.0
            }
        });
        let w = tape.constant(w);
        let weighted = tape.mul(row, w);
        let s = tape.sum_all(weighted);
        acc = Some(match acc {
            None => s,
            Some(a) => tape.add(a, s),
        });
    }
    acc.expect("at least one step")
}
