//! Value-level loss functions mirroring the graph-level terms used in
//! training: sequence ELBO, consistency, masked imputation error, focal
//! classification, and the logit readout.

use crate::error::{Result, UgssError};
use crate::graph::Matrix;
use crate::training::model::PROB_EPS;
use crate::vrnn_core::{kl_gaussians, GaussianParams};

const LN_2PI: f64 = 1.8378770664093453;

/// One step's distribution triple.
pub struct StepDistributions {
    pub posterior: GaussianParams,
    pub prior: GaussianParams,
    pub reconstruction: GaussianParams,
}

/// Sequence loss: per step, the Gaussian negative log-likelihood of the
/// observed entries under the reconstruction distribution plus the
/// posterior-to-prior KL. Returned as a loss (negated single-sample ELBO).
pub fn vrnn_loss(steps: &[StepDistributions], x_tilde: &Matrix, mask: &Matrix) -> f64 {
    let mut total = 0.0;
    for (t, s) in steps.iter().enumerate() {
        for d in 0..x_tilde.ncols() {
            if mask[(t, d)] == 1.0 {
                let mu = s.reconstruction.mean[d];
                let lv = s.reconstruction.log_var[d];
                let diff = x_tilde[(t, d)] - mu;
                total += 0.5 * (LN_2PI + lv + diff * diff * (-lv).exp());
            }
        }
        total += kl_gaussians(&s.posterior, &s.prior);
    }
    total
}

/// Mean absolute difference between the two directions' estimates over all
/// (step, variable) cells of one sample.
pub fn consistency_loss(x_hat_fwd: &Matrix, x_hat_bwd: &Matrix) -> f64 {
    assert_eq!(x_hat_fwd.dim(), x_hat_bwd.dim(), "aligned shapes required");
    let n = x_hat_fwd.len();
    if n == 0 {
        return 0.0;
    }
    x_hat_fwd
        .iter()
        .zip(x_hat_bwd.iter())
        .map(|(a, b)| (a - b).abs())
        .sum::<f64>()
        / n as f64
}

/// Masked imputation loss over a batch of samples. Each entry is
/// `(x_truth, x_hat, imp_mask)`. With `per_sample_norm`, each sample's error
/// sum is divided by its held-out count before averaging over the batch;
/// otherwise the literal per-sample sums are averaged.
pub fn imputation_loss(
    samples: &[(&Matrix, &Matrix, &Matrix)],
    per_sample_norm: bool,
) -> f64 {
    if samples.is_empty() {
        return 0.0;
    }
    let total_held: usize = samples
        .iter()
        .map(|(_, _, m)| m.iter().filter(|&&v| v == 1.0).count())
        .sum();
    if total_held == 0 {
        log::warn!("imputation loss over a batch with no held-out entries is 0");
        return 0.0;
    }
    let mut acc = 0.0;
    for (truth, hat, imp) in samples {
        let mut sum = 0.0;
        let mut count = 0usize;
        for ((t, h), m) in truth.iter().zip(hat.iter()).zip(imp.iter()) {
            if *m == 1.0 {
                sum += (t - h).abs();
                count += 1;
            }
        }
        if count > 0 {
            acc += if per_sample_norm { sum / count as f64 } else { sum };
        }
    }
    acc / samples.len() as f64
}

/// Focal loss for one prediction: `-w1 (1 - y_hat)^w2 ln(y_hat)` where
/// `y_hat` is the probability assigned to the true class. Probabilities at
/// exactly 0 or 1 are clamped to `[1e-7, 1 - 1e-7]`.
pub fn focal_loss(p: f64, y: bool, omega1: f64, omega2: f64) -> f64 {
    let p = p.clamp(PROB_EPS, 1.0 - PROB_EPS);
    let y_hat = if y { p } else { 1.0 - p };
    -omega1 * (1.0 - y_hat).powf(omega2) * y_hat.ln()
}

/// Mortality probability from a final hidden state: `sigmoid(w . h)`.
pub fn predict_mortality(h_last: &[f64], w_out: &[f64]) -> Result<f64> {
    if h_last.len() != w_out.len() {
        return Err(UgssError::validation(format!(
            "readout length {} does not match hidden length {}",
            w_out.len(),
            h_last.len()
        )));
    }
    let logit: f64 = h_last.iter().zip(w_out).map(|(h, w)| h * w).sum();
    Ok(1.0 / (1.0 + (-logit).exp()))
}

/// Average two direction logits before the sigmoid.
pub fn predict_mortality_bidirectional(logit_fwd: f64, logit_bwd: f64) -> f64 {
    let logit = 0.5 * (logit_fwd + logit_bwd);
    1.0 / (1.0 + (-logit).exp())
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha12Rng;

    fn unit_g(dim: usize) -> GaussianParams {
        GaussianParams { mean: vec![0.0; dim], log_var: vec![0.0; dim] }
    }

    #[test]
    fn perfect_unit_variance_reconstruction_costs_half_log_2pi_per_entry() {
        let x = array![[0.3, -0.5], [0.7, 0.2]];
        let mask = Matrix::ones((2, 2));
        let steps: Vec<StepDistributions> = (0..2)
            .map(|t| StepDistributions {
                posterior: unit_g(1),
                prior: unit_g(1),
                reconstruction: GaussianParams {
                    mean: x.row(t).to_vec(),
                    log_var: vec![0.0, 0.0],
                },
            })
            .collect();
        let got = vrnn_loss(&steps, &x, &mask);
        let want = 4.0 * 0.5 * LN_2PI; // 4 observed entries, KL = 0
        assert!((got - want).abs() < 1e-12, "{got} vs {want}");
    }

    #[test]
    fn posterior_equal_to_prior_adds_no_kl() {
        let x = array![[1.0]];
        let mask = array![[0.0]]; // fully masked step
        let g = GaussianParams { mean: vec![0.4], log_var: vec![-0.3] };
        let steps = vec![StepDistributions {
            posterior: g.clone(),
            prior: g,
            reconstruction: unit_g(1),
        }];
        assert_eq!(vrnn_loss(&steps, &x, &mask), 0.0);
    }

    #[test]
    fn masked_step_contributes_only_kl() {
        let x = array![[1.0]];
        let mask = array![[0.0]];
        let steps = vec![StepDistributions {
            posterior: GaussianParams { mean: vec![1.0], log_var: vec![0.0] },
            prior: unit_g(1),
            reconstruction: GaussianParams { mean: vec![99.0], log_var: vec![0.0] },
        }];
        assert!((vrnn_loss(&steps, &x, &mask) - 0.5).abs() < 1e-15);
    }

    #[test]
    fn consistency_identities() {
        let a = array![[0.1, 0.2], [0.3, 0.4]];
        assert_eq!(consistency_loss(&a, &a), 0.0);
        let b = a.mapv(|v| v + 0.5);
        assert!((consistency_loss(&a, &b) - 0.5).abs() < 1e-15);
    }

    #[test]
    fn imputation_loss_examples() {
        let truth = array![[1.0, 2.0], [3.0, 4.0]];
        let imp = array![[1.0, 0.0], [0.0, 1.0]];
        let perfect = truth.clone();
        assert_eq!(imputation_loss(&[(&truth, &perfect, &imp)], true), 0.0);

        let off = truth.mapv(|v| v + 1.0);
        assert!((imputation_loss(&[(&truth, &off, &imp)], true) - 1.0).abs() < 1e-15);

        // a sample without held-out entries contributes nothing
        let empty = Matrix::zeros((2, 2));
        let got = imputation_loss(&[(&truth, &off, &imp), (&truth, &off, &empty)], true);
        assert!((got - 0.5).abs() < 1e-15);
    }

    #[test]
    fn focal_loss_examples() {
        let got = focal_loss(0.5, true, 1.0, 0.0);
        assert!((got - std::f64::consts::LN_2).abs() < 1e-12);
        // well-classified predictions vanish
        assert!(focal_loss(1.0 - 1e-9, true, 0.25, 5.0) < 1e-6);
        // degenerate probabilities are clamped, not infinite
        assert!(focal_loss(0.0, true, 1.0, 0.0).is_finite());
        assert!(focal_loss(1.0, false, 1.0, 2.0).is_finite());
    }

    #[test]
    fn focal_reduces_to_binary_cross_entropy() {
        let mut rng = ChaCha12Rng::seed_from_u64(2);
        for _ in 0..1000 {
            let p: f64 = rng.gen_range(0.001..0.999);
            let y = rng.gen_bool(0.5);
            let bce = if y { -p.ln() } else { -(1.0 - p).ln() };
            let fl = focal_loss(p, y, 1.0, 0.0);
            assert!((fl - bce).abs() < 1e-12, "p={p} y={y}");
        }
    }

    #[test]
    fn mortality_prediction_contracts() {
        let p = predict_mortality(&[0.5, -0.25], &[0.0, 0.0]).unwrap();
        assert_eq!(p, 0.5);
        let p = predict_mortality(&[2.0, 1.0], &[0.3, -0.7]).unwrap();
        assert!(p > 0.0 && p < 1.0);
        assert!(predict_mortality(&[1.0], &[1.0, 2.0]).is_err());

        // equal logits collapse to the unidirectional output
        let logit = 1.3;
        let uni = 1.0 / (1.0 + (-logit as f64).exp());
        assert_eq!(predict_mortality_bidirectional(logit, logit), uni);
    }
}
