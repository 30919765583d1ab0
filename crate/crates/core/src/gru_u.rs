//! The GRU-U recurrent cell: uncertainty-gated attention weights feeding a
//! gated update that also ingests the masking vector, plus the plain GRU it
//! reduces to when the attention is saturated and the mask path is removed.
//!
//! Gate nonlinearities follow the usual GRU convention: logistic sigmoid for
//! the reset and update gates (the update gate is called `g` here, because
//! the paper's symbol collides with the uncertainty vector), hyperbolic
//! tangent for the candidate state.

use rand_chacha::ChaCha12Rng;

use crate::graph::{NodeId, Tape};
use crate::imputation::WeightShape;
use crate::params::{BoundParams, InitScheme, ParamId, ParamStore};

/// One gate: input, hidden, mask and bias terms. `v` is absent for the
/// vanilla cell, which does not see the masking vector.
pub struct GateParams {
    pub w: ParamId,
    pub u: ParamId,
    pub v: Option<ParamId>,
    pub b: ParamId,
}

impl GateParams {
    fn init(
        store: &mut ParamStore,
        name: &str,
        input_width: usize,
        hidden: usize,
        mask_width: Option<usize>,
        scheme: InitScheme,
        rng: &mut ChaCha12Rng,
    ) -> Self {
        GateParams {
            w: store.add_weight(format!("{name}.w"), input_width, hidden, scheme, rng),
            u: store.add_weight(format!("{name}.u"), hidden, hidden, scheme, rng),
            v: mask_width
                .map(|d| store.add_weight(format!("{name}.v"), d, hidden, scheme, rng)),
            b: store.add_zeros(format!("{name}.b"), 1, hidden),
        }
    }
}

/// Parameters of a GRU-U (or, without `attention`/`v` terms, vanilla GRU) cell.
pub struct GruUParams {
    pub reset: GateParams,
    pub update: GateParams,
    pub candidate: GateParams,
    /// Attention weight over the uncertainty vector; `1 x D` when diagonal,
    /// `D x D` when full. Absent for the vanilla cell.
    pub attention: Option<AttentionParams>,
}

pub struct AttentionParams {
    pub shape: WeightShape,
    pub w: ParamId,
    pub b: ParamId,
}

impl GruUParams {
    /// Initialize a GRU-U cell whose gates read `concat(fx, alpha, fz)`
    /// (width `input_width`), the previous hidden state, and the mask.
    pub fn init_gru_u(
        store: &mut ParamStore,
        prefix: &str,
        input_width: usize,
        hidden: usize,
        n_variables: usize,
        attention_shape: WeightShape,
        scheme: InitScheme,
        rng: &mut ChaCha12Rng,
    ) -> Self {
        let w_alpha = match attention_shape {
            WeightShape::Diagonal => store.add_zeros(format!("{prefix}.att.w"), 1, n_variables),
            WeightShape::Full => {
                store.add_zeros(format!("{prefix}.att.w"), n_variables, n_variables)
            }
        };
        GruUParams {
            reset: GateParams::init(
                store,
                &format!("{prefix}.reset"),
                input_width,
                hidden,
                Some(n_variables),
                scheme,
                rng,
            ),
            update: GateParams::init(
                store,
                &format!("{prefix}.update"),
                input_width,
                hidden,
                Some(n_variables),
                scheme,
                rng,
            ),
            candidate: GateParams::init(
                store,
                &format!("{prefix}.candidate"),
                input_width,
                hidden,
                Some(n_variables),
                scheme,
                rng,
            ),
            attention: Some(AttentionParams {
                shape: attention_shape,
                w: w_alpha,
                b: store.add_zeros(format!("{prefix}.att.b"), 1, n_variables),
            }),
        }
    }

    /// Initialize a vanilla GRU over a plain input of `input_width` columns.
    pub fn init_vanilla(
        store: &mut ParamStore,
        prefix: &str,
        input_width: usize,
        hidden: usize,
        scheme: InitScheme,
        rng: &mut ChaCha12Rng,
    ) -> Self {
        GruUParams {
            reset: GateParams::init(store, &format!("{prefix}.reset"), input_width, hidden, None, scheme, rng),
            update: GateParams::init(store, &format!("{prefix}.update"), input_width, hidden, None, scheme, rng),
            candidate: GateParams::init(
                store,
                &format!("{prefix}.candidate"),
                input_width,
                hidden,
                None,
                scheme,
                rng,
            ),
            attention: None,
        }
    }
}

/// Attention weights `alpha = exp(-max(0, W u + b))` in `(0, 1]`. Zero
/// uncertainty with zero bias yields full fidelity (`alpha = 1`).
pub fn attention_weights(
    tape: &mut Tape,
    bound: &BoundParams,
    att: &AttentionParams,
    u: NodeId,
) -> NodeId {
    let wu = match att.shape {
        WeightShape::Diagonal => tape.mul_row(u, bound.node(att.w)),
        WeightShape::Full => tape.matmul(u, bound.node(att.w)),
    };
    let pre = tape.add_row(wu, bound.node(att.b));
    let rect = tape.relu(pre);
    let neg = tape.neg(rect);
    tape.exp(neg)
}

fn gate_preactivation(
    tape: &mut Tape,
    bound: &BoundParams,
    gp: &GateParams,
    input: NodeId,
    hidden_term: NodeId,
    mask: Option<NodeId>,
) -> NodeId {
    let wi = tape.matmul(input, bound.node(gp.w));
    let uh = tape.matmul(hidden_term, bound.node(gp.u));
    let mut acc = tape.add(wi, uh);
    if let (Some(v), Some(m)) = (gp.v, mask) {
        let vm = tape.matmul(m, bound.node(v));
        acc = tape.add(acc, vm);
    }
    tape.add_row(acc, bound.node(gp.b))
}

/// One GRU-U step over the prepared gate input `concat(fx, alpha, fz)`:
/// reset gate, update gate `g`, candidate state, convex combination.
pub fn gru_u_step(
    tape: &mut Tape,
    bound: &BoundParams,
    params: &GruUParams,
    gate_input: NodeId,
    h_prev: NodeId,
    mask: Option<NodeId>,
) -> NodeId {
    let r_pre = gate_preactivation(tape, bound, &params.reset, gate_input, h_prev, mask);
    let r = tape.sigmoid(r_pre);
    let g_pre = gate_preactivation(tape, bound, &params.update, gate_input, h_prev, mask);
    let g = tape.sigmoid(g_pre);
    let gated_h = tape.mul(r, h_prev);
    let c_pre = gate_preactivation(tape, bound, &params.candidate, gate_input, gated_h, mask);
    let candidate = tape.tanh(c_pre);

    let keep = tape.scale(g, -1.0);
    let keep = tape.add_const(keep, 1.0);
    let kept = tape.mul(keep, h_prev);
    let updated = tape.mul(g, candidate);
    tape.add(kept, updated)
}

/// A reference vanilla GRU step over a plain input; used by the baselines
/// and by the structural-reduction check against [`gru_u_step`].
pub fn vanilla_gru_step(
    tape: &mut Tape,
    bound: &BoundParams,
    params: &GruUParams,
    input: NodeId,
    h_prev: NodeId,
) -> NodeId {
    gru_u_step(tape, bound, params, input, h_prev, None)
}
