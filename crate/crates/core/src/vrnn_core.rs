//! The stochastic backbone: feature extractors, prior network, inference
//! (posterior) network, generation network, and reparameterized sampling —
//! one full variational-recurrent step.
//!
//! Every network is built on a [`Tape`] so the training loop can
//! differentiate through it; the distribution heads emit `[mean, log-var]`
//! with the log-variance clamped before exponentiation.

use rand_chacha::ChaCha12Rng;

use crate::graph::{Matrix, NodeId, Tape};
use crate::params::{BoundParams, InitScheme, ParamId, ParamStore};

/// Log-variance clamp applied before any exponentiation.
pub const LOGVAR_CLAMP: f64 = 10.0;

const NORM_EPS: f64 = 1e-5;

/// How affine pre-activations are normalized inside the networks.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Normalization {
    /// Normalize each feature over the batch; falls back to [`Layer`] when
    /// the batch holds a single row (single-sample inference).
    Batch,
    /// Normalize each row over its features.
    Layer,
    None,
}

/// A diagonal Gaussian as plain values (used at the API surface and in tests).
#[derive(Clone, Debug, PartialEq)]
pub struct GaussianParams {
    pub mean: Vec<f64>,
    pub log_var: Vec<f64>,
}

impl GaussianParams {
    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn std(&self) -> Vec<f64> {
        self.log_var.iter().map(|lv| (0.5 * lv).exp()).collect()
    }
}

/// A diagonal Gaussian as tape nodes, `B x k` each.
#[derive(Clone, Copy, Debug)]
pub struct GaussianNodes {
    pub mean: NodeId,
    pub log_var: NodeId,
}

pub struct LinearParams {
    pub w: ParamId,
    pub b: ParamId,
}

impl LinearParams {
    fn init(
        store: &mut ParamStore,
        name: &str,
        rows: usize,
        cols: usize,
        scheme: InitScheme,
        rng: &mut ChaCha12Rng,
    ) -> Self {
        LinearParams {
            w: store.add_weight(format!("{name}.w"), rows, cols, scheme, rng),
            b: store.add_zeros(format!("{name}.b"), 1, cols),
        }
    }
}

pub struct NormParams {
    pub gamma: ParamId,
    pub beta: ParamId,
}

impl NormParams {
    fn init(store: &mut ParamStore, name: &str, width: usize) -> Self {
        NormParams {
            gamma: store.add(format!("{name}.gamma"), Matrix::ones((1, width))),
            beta: store.add_zeros(format!("{name}.beta"), 1, width),
        }
    }
}

/// Two hidden layers (affine, normalization, rectifier) and an affine head
/// producing `[mean, log-var]`.
pub struct MlpParams {
    pub l1: LinearParams,
    pub n1: NormParams,
    pub l2: LinearParams,
    pub n2: NormParams,
    pub head: LinearParams,
}

impl MlpParams {
    fn init(
        store: &mut ParamStore,
        name: &str,
        input: usize,
        widths: [usize; 2],
        out: usize,
        scheme: InitScheme,
        rng: &mut ChaCha12Rng,
    ) -> Self {
        MlpParams {
            l1: LinearParams::init(store, &format!("{name}.l1"), input, widths[0], scheme, rng),
            n1: NormParams::init(store, &format!("{name}.n1"), widths[0]),
            l2: LinearParams::init(store, &format!("{name}.l2"), widths[0], widths[1], scheme, rng),
            n2: NormParams::init(store, &format!("{name}.n2"), widths[1]),
            head: LinearParams::init(store, &format!("{name}.head"), widths[1], out, scheme, rng),
        }
    }
}

/// Single hidden layer with a hyperbolic-tangent nonlinearity.
pub struct FeatureParams {
    pub l: LinearParams,
}

impl FeatureParams {
    fn init(
        store: &mut ParamStore,
        name: &str,
        input: usize,
        width: usize,
        scheme: InitScheme,
        rng: &mut ChaCha12Rng,
    ) -> Self {
        FeatureParams { l: LinearParams::init(store, name, input, width, scheme, rng) }
    }
}

/// Width configuration for one direction's networks.
#[derive(Clone, Copy, Debug)]
pub struct VrnnDims {
    pub n_variables: usize,
    pub latent_dim: usize,
    pub feature_width: usize,
    pub encoder_widths: [usize; 2],
    pub hidden_dim: usize,
}

/// Prior / inference / generation networks plus the two feature extractors.
pub struct VrnnParams {
    pub feat_x: FeatureParams,
    pub feat_z: FeatureParams,
    pub prior: MlpParams,
    pub inference: MlpParams,
    pub generation: MlpParams,
}

impl VrnnParams {
    pub fn init(
        store: &mut ParamStore,
        prefix: &str,
        dims: &VrnnDims,
        scheme: InitScheme,
        rng: &mut ChaCha12Rng,
    ) -> Self {
        let d = dims.n_variables;
        let l = dims.latent_dim;
        let fw = dims.feature_width;
        let h = dims.hidden_dim;
        VrnnParams {
            feat_x: FeatureParams::init(store, &format!("{prefix}.feat_x"), d, fw, scheme, rng),
            feat_z: FeatureParams::init(store, &format!("{prefix}.feat_z"), l, fw, scheme, rng),
            prior: MlpParams::init(
                store,
                &format!("{prefix}.prior"),
                h,
                dims.encoder_widths,
                2 * l,
                scheme,
                rng,
            ),
            inference: MlpParams::init(
                store,
                &format!("{prefix}.inference"),
                fw + h,
                dims.encoder_widths,
                2 * l,
                scheme,
                rng,
            ),
            generation: MlpParams::init(
                store,
                &format!("{prefix}.generation"),
                fw + h,
                dims.encoder_widths,
                2 * d,
                scheme,
                rng,
            ),
        }
    }
}

pub fn linear(tape: &mut Tape, bound: &BoundParams, lp: &LinearParams, x: NodeId) -> NodeId {
    let y = tape.matmul(x, bound.node(lp.w));
    tape.add_row(y, bound.node(lp.b))
}

/// Feature extractor: `tanh(x W + b)`.
pub fn feature(tape: &mut Tape, bound: &BoundParams, fp: &FeatureParams, x: NodeId) -> NodeId {
    let y = linear(tape, bound, &fp.l, x);
    tape.tanh(y)
}

/// Normalize pre-activations. Batch mode standardizes each feature over the
/// batch; with a single row it degrades to layer-wise normalization, which
/// keeps single-sample inference well defined.
pub fn normalize(
    tape: &mut Tape,
    bound: &BoundParams,
    np: &NormParams,
    x: NodeId,
    mode: Normalization,
) -> NodeId {
    let rows = tape.value(x).nrows();
    let effective = match mode {
        Normalization::Batch if rows == 1 => Normalization::Layer,
        other => other,
    };
    let standardized = match effective {
        Normalization::None => return x,
        Normalization::Batch => {
            let mu = tape.mean_rows(x);
            let neg_mu = tape.neg(mu);
            let centered = tape.add_row(x, neg_mu);
            let sq = tape.mul(centered, centered);
            let var = tape.mean_rows(sq);
            let var_eps = tape.add_const(var, NORM_EPS);
            let std = tape.sqrt(var_eps);
            let inv = tape.recip(std);
            tape.mul_row(centered, inv)
        }
        Normalization::Layer => {
            let mu = tape.mean_cols(x);
            let neg_mu = tape.neg(mu);
            let centered = tape.add_col(x, neg_mu);
            let sq = tape.mul(centered, centered);
            let var = tape.mean_cols(sq);
            let var_eps = tape.add_const(var, NORM_EPS);
            let std = tape.sqrt(var_eps);
            let inv = tape.recip(std);
            tape.mul_col(centered, inv)
        }
    };
    let scaled = tape.mul_row(standardized, bound.node(np.gamma));
    tape.add_row(scaled, bound.node(np.beta))
}

fn mlp_body(
    tape: &mut Tape,
    bound: &BoundParams,
    mlp: &MlpParams,
    x: NodeId,
    mode: Normalization,
) -> NodeId {
    let a1 = linear(tape, bound, &mlp.l1, x);
    let a1 = normalize(tape, bound, &mlp.n1, a1, mode);
    let a1 = tape.relu(a1);
    let a2 = linear(tape, bound, &mlp.l2, a1);
    let a2 = normalize(tape, bound, &mlp.n2, a2, mode);
    let a2 = tape.relu(a2);
    linear(tape, bound, &mlp.head, a2)
}

/// Split a `[mean, log-var]` head and clamp the log-variance.
fn gaussian_head(tape: &mut Tape, raw: NodeId, dim: usize) -> GaussianNodes {
    let mean = tape.slice_cols(raw, 0, dim);
    let log_var = tape.slice_cols(raw, dim, 2 * dim);
    let log_var = tape.clamp(log_var, -LOGVAR_CLAMP, LOGVAR_CLAMP);
    GaussianNodes { mean, log_var }
}

/// Prior over the latent state given the previous hidden state.
pub fn prior(
    tape: &mut Tape,
    bound: &BoundParams,
    params: &VrnnParams,
    h_prev: NodeId,
    latent_dim: usize,
    mode: Normalization,
) -> GaussianNodes {
    let raw = mlp_body(tape, bound, &params.prior, h_prev, mode);
    gaussian_head(tape, raw, latent_dim)
}

/// Approximate posterior conditioned on the current masked observation and
/// the previous hidden state (combined by concatenation).
pub fn infer_posterior(
    tape: &mut Tape,
    bound: &BoundParams,
    params: &VrnnParams,
    x_tilde: NodeId,
    h_prev: NodeId,
    latent_dim: usize,
    mode: Normalization,
) -> GaussianNodes {
    let fx = feature(tape, bound, &params.feat_x, x_tilde);
    let joint = tape.concat_cols(&[fx, h_prev]);
    let raw = mlp_body(tape, bound, &params.inference, joint, mode);
    gaussian_head(tape, raw, latent_dim)
}

/// Reconstruction distribution over the variables given a latent sample and
/// the previous hidden state. Also returns the extracted latent features so
/// the recurrence can reuse them.
pub fn generate(
    tape: &mut Tape,
    bound: &BoundParams,
    params: &VrnnParams,
    z: NodeId,
    h_prev: NodeId,
    n_variables: usize,
    mode: Normalization,
) -> (GaussianNodes, NodeId) {
    let fz = feature(tape, bound, &params.feat_z, z);
    let joint = tape.concat_cols(&[fz, h_prev]);
    let raw = mlp_body(tape, bound, &params.generation, joint, mode);
    (gaussian_head(tape, raw, n_variables), fz)
}

/// Reparameterized sample `z = mean + exp(log_var / 2) * noise`.
pub fn sample_latent(tape: &mut Tape, g: GaussianNodes, noise: NodeId) -> NodeId {
    let half = tape.scale(g.log_var, 0.5);
    let std = tape.exp(half);
    let scaled = tape.mul(std, noise);
    tape.add(g.mean, scaled)
}

/// Row-wise KL divergence between diagonal Gaussians, `B x 1`:
/// `0.5 * sum_i [ lv_p - lv_q + exp(lv_q - lv_p) + (mu_q - mu_p)^2 exp(-lv_p) - 1 ]`.
pub fn kl_rowwise(tape: &mut Tape, q: GaussianNodes, p: GaussianNodes) -> NodeId {
    let k = tape.value(q.mean).ncols();
    let lv_diff = tape.sub(p.log_var, q.log_var);
    let lv_qp = tape.sub(q.log_var, p.log_var);
    let var_ratio = tape.exp(lv_qp);
    let mu_diff = tape.sub(q.mean, p.mean);
    let mu_sq = tape.mul(mu_diff, mu_diff);
    let neg_lvp = tape.neg(p.log_var);
    let inv_var_p = tape.exp(neg_lvp);
    let mahal = tape.mul(mu_sq, inv_var_p);
    let sum = tape.add(lv_diff, var_ratio);
    let sum = tape.add(sum, mahal);
    let sum = tape.add_const(sum, -1.0);
    let mean = tape.mean_cols(sum);
    tape.scale(mean, 0.5 * k as f64)
}

/// Closed-form KL divergence between diagonal Gaussians as plain values.
pub fn kl_gaussians(q: &GaussianParams, p: &GaussianParams) -> f64 {
    assert_eq!(q.dim(), p.dim(), "KL requires equal dimensions");
    q.mean
        .iter()
        .zip(&q.log_var)
        .zip(p.mean.iter().zip(&p.log_var))
        .map(|((mq, lvq), (mp, lvp))| {
            0.5 * ((lvp - lvq) + (lvq - lvp).exp() + (mq - mp).powi(2) * (-lvp).exp() - 1.0)
        })
        .sum()
}

/// Convenience wrapper: evaluate one Gaussian head on plain vectors, without
/// keeping the tape. Used by tests and single-sample inspection.
pub struct VrnnEval<'a> {
    pub store: &'a ParamStore,
    pub params: &'a VrnnParams,
    pub dims: VrnnDims,
    pub mode: Normalization,
}

impl<'a> VrnnEval<'a> {
    fn run(&self, f: impl FnOnce(&mut Tape, &BoundParams) -> GaussianNodes) -> GaussianParams {
        let mut tape = Tape::new();
        let bound = self.store.bind(&mut tape);
        let g = f(&mut tape, &bound);
        GaussianParams {
            mean: tape.value(g.mean).row(0).to_vec(),
            log_var: tape.value(g.log_var).row(0).to_vec(),
        }
    }

    pub fn prior(&self, h_prev: &[f64]) -> GaussianParams {
        self.run(|tape, bound| {
            let h = tape.constant(Matrix::from_shape_vec((1, h_prev.len()), h_prev.to_vec()).unwrap());
            prior(tape, bound, self.params, h, self.dims.latent_dim, self.mode)
        })
    }

    pub fn infer_posterior(&self, x_tilde: &[f64], h_prev: &[f64]) -> GaussianParams {
        self.run(|tape, bound| {
            let x =
                tape.constant(Matrix::from_shape_vec((1, x_tilde.len()), x_tilde.to_vec()).unwrap());
            let h = tape.constant(Matrix::from_shape_vec((1, h_prev.len()), h_prev.to_vec()).unwrap());
            infer_posterior(tape, bound, self.params, x, h, self.dims.latent_dim, self.mode)
        })
    }

    pub fn generate(&self, z: &[f64], h_prev: &[f64]) -> GaussianParams {
        self.run(|tape, bound| {
            let z = tape.constant(Matrix::from_shape_vec((1, z.len()), z.to_vec()).unwrap());
            let h = tape.constant(Matrix::from_shape_vec((1, h_prev.len()), h_prev.to_vec()).unwrap());
            generate(tape, bound, self.params, z, h, self.dims.n_variables, self.mode).0
        })
    }
}
