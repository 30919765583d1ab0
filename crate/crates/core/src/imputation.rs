//! From reconstruction-distribution parameters to final imputed values and
//! uncertainties: temporal decay, history blending, feature correlation, a
//! width-1 convolution combiner with cross-channel max pooling, the
//! observed-value overwrite, and the uncertainty extraction.

use rand::Rng;
use rand_chacha::ChaCha12Rng;

use crate::graph::{Matrix, NodeId, Tape};
use crate::params::{BoundParams, InitScheme, ParamId, ParamStore};

/// Whether a per-variable weight is a diagonal (stored as a `1 x D` row) or
/// a full `D x D` matrix.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum WeightShape {
    Diagonal,
    Full,
}

/// Learnable parameters of the imputation stage.
pub struct DecayParams {
    pub shape_gamma: WeightShape,
    /// `1 x D` (diagonal) or `D x D` (full).
    pub w_gamma: ParamId,
    pub b_gamma: ParamId,
    /// `2D x D`: maps `concat(gamma, mask)` to blend weights.
    pub w_beta: ParamId,
    pub b_beta: ParamId,
    /// `D x D`; the diagonal is structurally masked to zero in the forward.
    pub w_corr: ParamId,
    pub b_corr: ParamId,
    /// `C x 2` width-1 convolution kernel over the (history, correlation)
    /// channels, plus a `C x 1` bias.
    pub conv_kernel: ParamId,
    pub conv_bias: ParamId,
}

impl DecayParams {
    pub fn init(
        store: &mut ParamStore,
        prefix: &str,
        n_variables: usize,
        channels: usize,
        shape_gamma: WeightShape,
        scheme: InitScheme,
        rng: &mut ChaCha12Rng,
    ) -> Self {
        let d = n_variables;
        let w_gamma = match shape_gamma {
            WeightShape::Diagonal => store.add(
                format!("{prefix}.decay.w"),
                Matrix::from_shape_fn((1, d), |_| rng.gen_range(0.0..0.1)),
            ),
            WeightShape::Full => {
                store.add_weight(format!("{prefix}.decay.w"), d, d, scheme, rng)
            }
        };
        // kernel starts near an even average of the two channels
        let kernel = Matrix::from_shape_fn((channels, 2), |_| 0.5 + rng.gen_range(-0.05..0.05));
        DecayParams {
            shape_gamma,
            w_gamma,
            b_gamma: store.add_zeros(format!("{prefix}.decay.b"), 1, d),
            w_beta: store.add_weight(format!("{prefix}.blend.w"), 2 * d, d, scheme, rng),
            b_beta: store.add_zeros(format!("{prefix}.blend.b"), 1, d),
            w_corr: store.add_weight(format!("{prefix}.corr.w"), d, d, scheme, rng),
            b_corr: store.add_zeros(format!("{prefix}.corr.b"), 1, d),
            conv_kernel: store.add(format!("{prefix}.combine.kernel"), kernel),
            conv_bias: store.add_zeros(format!("{prefix}.combine.bias"), channels, 1),
        }
    }
}

/// Apply a per-variable weight of either shape: elementwise for a diagonal
/// row, matrix product for a full matrix (optionally with the diagonal
/// masked out).
fn apply_weight(
    tape: &mut Tape,
    x: NodeId,
    w: NodeId,
    shape: WeightShape,
    zero_diagonal: bool,
) -> NodeId {
    match shape {
        WeightShape::Diagonal => tape.mul_row(x, w),
        WeightShape::Full => {
            let w = if zero_diagonal {
                let d = tape.value(w).nrows();
                let hollow =
                    tape.constant(Matrix::from_shape_fn((d, d), |(i, j)| f64::from(i != j)));
                tape.mul(w, hollow)
            } else {
                w
            };
            tape.matmul(x, w)
        }
    }
}

/// Temporal decay `gamma = exp(-max(0, W delta + b))`, in `(0, 1]`.
pub fn temporal_decay(
    tape: &mut Tape,
    bound: &BoundParams,
    p: &DecayParams,
    delta: NodeId,
) -> NodeId {
    let wd = apply_weight(tape, delta, bound.node(p.w_gamma), p.shape_gamma, false);
    let pre = tape.add_row(wd, bound.node(p.b_gamma));
    let rect = tape.relu(pre);
    let neg = tape.neg(rect);
    tape.exp(neg)
}

/// Blend observed history with the reconstruction mean:
/// `beta = sigmoid(W [gamma ++ mask] + b)`, `c = beta * x_tilde + (1 - beta) * mu_x`.
pub fn blend_history(
    tape: &mut Tape,
    bound: &BoundParams,
    p: &DecayParams,
    x_tilde: NodeId,
    mu_x: NodeId,
    gamma: NodeId,
    mask: NodeId,
) -> NodeId {
    let joint = tape.concat_cols(&[gamma, mask]);
    let pre = tape.matmul(joint, bound.node(p.w_beta));
    let pre = tape.add_row(pre, bound.node(p.b_beta));
    let beta = tape.sigmoid(pre);
    let from_obs = tape.mul(beta, x_tilde);
    let one_minus = tape.scale(beta, -1.0);
    let one_minus = tape.add_const(one_minus, 1.0);
    let from_mu = tape.mul(one_minus, mu_x);
    tape.add(from_obs, from_mu)
}

/// Cross-variable estimate `c~ = W mu_x + b` where `W` has a structurally
/// zero diagonal, so component `d` never reads its own mean.
pub fn feature_correlation(
    tape: &mut Tape,
    bound: &BoundParams,
    p: &DecayParams,
    mu_x: NodeId,
) -> NodeId {
    let mixed = apply_weight(tape, mu_x, bound.node(p.w_corr), WeightShape::Full, true);
    tape.add_row(mixed, bound.node(p.b_corr))
}

/// Width-1 convolution over the two stacked channels followed by a max-pool
/// across the output channels, position-wise.
pub fn combine(
    tape: &mut Tape,
    bound: &BoundParams,
    p: &DecayParams,
    c_hist: NodeId,
    c_corr: NodeId,
) -> NodeId {
    let kernel = bound.node(p.conv_kernel);
    let bias = bound.node(p.conv_bias);
    let channels = tape.value(kernel).nrows();
    let mut pooled: Option<NodeId> = None;
    for c in 0..channels {
        let k_row = tape.slice_rows(kernel, c, c + 1);
        let k_hist = tape.slice_cols(k_row, 0, 1);
        let k_corr = tape.slice_cols(k_row, 1, 2);
        let b = tape.slice_rows(bias, c, c + 1);
        let hist_part = tape.mul_scalar_node(c_hist, k_hist);
        let corr_part = tape.mul_scalar_node(c_corr, k_corr);
        let sum = tape.add(hist_part, corr_part);
        let channel = tape.add_scalar_node(sum, b);
        pooled = Some(match pooled {
            None => channel,
            Some(acc) => tape.max(acc, channel),
        });
    }
    pooled.expect("at least one channel")
}

/// Final imputation: observed entries pass through bit-exactly, missing
/// entries take the combined estimate.
pub fn finalize_imputation(
    tape: &mut Tape,
    x_tilde: NodeId,
    mask: NodeId,
    c_hat: NodeId,
) -> NodeId {
    let observed = tape.mul(mask, x_tilde);
    let inv = tape.scale(mask, -1.0);
    let inv = tape.add_const(inv, 1.0);
    let filled = tape.mul(inv, c_hat);
    tape.add(observed, filled)
}

/// Uncertainty `u = (1 - mask) * sigma_x`; observed entries carry zero.
pub fn extract_uncertainty(tape: &mut Tape, mask: NodeId, log_var_x: NodeId) -> NodeId {
    let half = tape.scale(log_var_x, 0.5);
    let sigma = tape.exp(half);
    let inv = tape.scale(mask, -1.0);
    let inv = tape.add_const(inv, 1.0);
    tape.mul(inv, sigma)
}
