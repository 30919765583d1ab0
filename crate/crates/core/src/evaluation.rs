//! Metrics and analyses: AUC, AUPRC (average precision), masked MAE for
//! imputation, the uncertainty-error correlation, and figure-data emission.
//!
//! AUC is the probability that a random positive outranks a random negative
//! (ties count one half); AUPRC is step-interpolated average precision. Both
//! are computed from tie-grouped rank scans and match exhaustive oracles
//! exactly on small inputs.

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::data_model::{Dataset, TimeSeriesSample};
use crate::error::{Result, UgssError};
use crate::graph::Matrix;
use crate::training::StepState;

fn check_scores(scores: &[f64], labels: &[bool]) -> Result<(usize, usize)> {
    if scores.len() != labels.len() {
        return Err(UgssError::validation("scores and labels differ in length"));
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(UgssError::validation("scores contain NaN"));
    }
    let pos = labels.iter().filter(|&&l| l).count();
    let neg = labels.len() - pos;
    if pos == 0 || neg == 0 {
        return Err(UgssError::UndefinedMetric(
            "need at least one positive and one negative label".into(),
        ));
    }
    Ok((pos, neg))
}

/// Area under the ROC curve via the rank-sum formulation with midranks for
/// ties.
pub fn auc(scores: &[f64], labels: &[bool]) -> Result<f64> {
    let (pos, neg) = check_scores(scores, labels)?;
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].partial_cmp(&scores[b]).unwrap());

    // midrank sum over positives, processed in tie groups
    let mut rank_sum = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j < order.len() && scores[order[j]] == scores[order[i]] {
            j += 1;
        }
        // ranks i+1 ..= j share the midrank
        let midrank = (i + 1 + j) as f64 / 2.0;
        for &idx in &order[i..j] {
            if labels[idx] {
                rank_sum += midrank;
            }
        }
        i = j;
    }
    let p = pos as f64;
    let wins = rank_sum - p * (p + 1.0) / 2.0;
    Ok(wins / (p * neg as f64))
}

/// Area under the precision-recall curve as average precision: thresholds
/// sweep the distinct scores in descending order, each recall increment is
/// weighted by the precision at that threshold.
pub fn auprc(scores: &[f64], labels: &[bool]) -> Result<f64> {
    let (pos, _) = check_scores(scores, labels)?;
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].partial_cmp(&scores[a]).unwrap());

    let mut ap = 0.0;
    let mut tp = 0usize;
    let mut seen = 0usize;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        let mut group_tp = 0usize;
        while j < order.len() && scores[order[j]] == scores[order[i]] {
            if labels[order[j]] {
                group_tp += 1;
            }
            j += 1;
        }
        seen += j - i;
        tp += group_tp;
        if group_tp > 0 {
            let precision = tp as f64 / seen as f64;
            ap += (group_tp as f64 / pos as f64) * precision;
        }
        i = j;
    }
    Ok(ap)
}

/// Mean absolute error over artificially held-out entries, in the data's
/// (normalized) units.
pub fn masked_mae(x_truth: &Matrix, x_hat: &Matrix, imp_mask: &Matrix) -> Result<f64> {
    if x_truth.dim() != x_hat.dim() || x_truth.dim() != imp_mask.dim() {
        return Err(UgssError::validation("masked MAE requires matching shapes"));
    }
    let mut sum = 0.0;
    let mut count = 0usize;
    for ((t, h), m) in x_truth.iter().zip(x_hat.iter()).zip(imp_mask.iter()) {
        if *m == 1.0 {
            sum += (t - h).abs();
            count += 1;
        }
    }
    if count == 0 {
        return Err(UgssError::UndefinedMetric("no held-out entries".into()));
    }
    Ok(sum / count as f64)
}

/// Masked MAE pooled over a dataset given per-sample completed matrices.
pub fn masked_mae_dataset(dataset: &Dataset, imputations: &[Matrix]) -> Result<f64> {
    if imputations.len() != dataset.len() {
        return Err(UgssError::validation("one imputation matrix per sample required"));
    }
    let mut sum = 0.0;
    let mut count = 0usize;
    for (s, hat) in dataset.samples.iter().zip(imputations) {
        for ((t, h), m) in s.x_truth.iter().zip(hat.iter()).zip(s.imp_mask.iter()) {
            if *m == 1.0 {
                sum += (t - h).abs();
                count += 1;
            }
        }
    }
    if count == 0 {
        return Err(UgssError::UndefinedMetric("dataset has no held-out entries".into()));
    }
    Ok(sum / count as f64)
}

/// Per-sample (MAE, mean uncertainty) pairs over held-out entries; samples
/// without held-out entries are skipped.
pub fn per_sample_mae_and_uncertainty(
    dataset: &Dataset,
    imputations: &[Matrix],
    uncertainties: &[Matrix],
) -> Vec<(f64, f64)> {
    dataset
        .samples
        .iter()
        .zip(imputations.iter().zip(uncertainties))
        .filter_map(|(s, (hat, unc))| {
            let mut err = 0.0;
            let mut u = 0.0;
            let mut count = 0usize;
            for (idx, &m) in s.imp_mask.indexed_iter() {
                if m == 1.0 {
                    err += (s.x_truth[idx] - hat[idx]).abs();
                    u += unc[idx];
                    count += 1;
                }
            }
            (count > 0).then(|| (err / count as f64, u / count as f64))
        })
        .collect()
}

/// Pearson correlation with a two-sided p-value against zero correlation.
pub fn uncertainty_error_correlation(pairs: &[(f64, f64)]) -> Result<(f64, f64)> {
    let n = pairs.len();
    if n < 3 {
        return Err(UgssError::UndefinedMetric("need at least 3 samples".into()));
    }
    let nf = n as f64;
    let mean_x = pairs.iter().map(|p| p.0).sum::<f64>() / nf;
    let mean_y = pairs.iter().map(|p| p.1).sum::<f64>() / nf;
    let mut sxx = 0.0;
    let mut syy = 0.0;
    let mut sxy = 0.0;
    for (x, y) in pairs {
        sxx += (x - mean_x).powi(2);
        syy += (y - mean_y).powi(2);
        sxy += (x - mean_x) * (y - mean_y);
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(UgssError::UndefinedMetric(
            "correlation undefined for a constant sequence".into(),
        ));
    }
    let r = (sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0);
    if r.abs() >= 1.0 {
        return Ok((r, 0.0));
    }
    let t = r * ((nf - 2.0) / (1.0 - r * r)).sqrt();
    let dist = StudentsT::new(0.0, 1.0, nf - 2.0)
        .map_err(|e| UgssError::validation(e.to_string()))?;
    let p = 2.0 * (1.0 - dist.cdf(t.abs()));
    Ok((r, p))
}

// ---------------------------------------------------------------------------
// Figure data
// ---------------------------------------------------------------------------

/// Plot-ready series for one variable of one sample: observed points, the
/// imputed line with its uncertainty band (half-width `u`), held-out truth
/// markers, and the per-variable MAE annotation.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct VariablePlotData {
    pub variable: String,
    pub observed: Vec<(f64, f64)>,
    /// (timestamp, imputed value, uncertainty half-width)
    pub imputed: Vec<(f64, f64, f64)>,
    pub held_out: Vec<(f64, f64)>,
    pub mae: Option<f64>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SamplePlotData {
    pub label: bool,
    pub variables: Vec<VariablePlotData>,
}

/// Assemble plot data from a sample and its per-step states (one direction's
/// estimates, or the combined ones via matrices of the same shape).
pub fn emit_imputation_plot_data(
    sample: &TimeSeriesSample,
    variables: &[String],
    steps: &[StepState],
) -> Result<SamplePlotData> {
    if steps.len() != sample.n_steps() {
        return Err(UgssError::validation("one step state per timestep required"));
    }
    let d = sample.n_variables();
    let mut out = Vec::with_capacity(d);
    for j in 0..d {
        let mut observed = Vec::new();
        let mut imputed = Vec::new();
        let mut held_out = Vec::new();
        let mut err = 0.0;
        let mut count = 0usize;
        for t in 0..sample.n_steps() {
            let ts = sample.timestamps[t];
            if sample.mask[(t, j)] == 1.0 {
                observed.push((ts, sample.x_tilde[(t, j)]));
            }
            imputed.push((ts, steps[t].x_hat[j], steps[t].u[j]));
            if sample.imp_mask[(t, j)] == 1.0 {
                held_out.push((ts, sample.x_truth[(t, j)]));
                err += (sample.x_truth[(t, j)] - steps[t].x_hat[j]).abs();
                count += 1;
            }
        }
        out.push(VariablePlotData {
            variable: variables.get(j).cloned().unwrap_or_else(|| format!("v{j}")),
            observed,
            imputed,
            held_out,
            mae: (count > 0).then(|| err / count as f64),
        });
    }
    Ok(SamplePlotData { label: sample.label, variables: out })
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha12Rng;

    /// Pairwise oracle: mean over positive-negative pairs of
    /// win = 1, tie = 1/2.
    fn auc_oracle(scores: &[f64], labels: &[bool]) -> f64 {
        let mut num = 0.0;
        let mut den = 0.0;
        for (i, &li) in labels.iter().enumerate() {
            if !li {
                continue;
            }
            for (j, &lj) in labels.iter().enumerate() {
                if lj {
                    continue;
                }
                den += 1.0;
                if scores[i] > scores[j] {
                    num += 1.0;
                } else if scores[i] == scores[j] {
                    num += 0.5;
                }
            }
        }
        num / den
    }

    /// Threshold-sweep oracle for average precision: every distinct score is
    /// a threshold, processed in descending order.
    fn auprc_oracle(scores: &[f64], labels: &[bool]) -> f64 {
        let mut thresholds: Vec<f64> = scores.to_vec();
        thresholds.sort_by(|a, b| b.partial_cmp(a).unwrap());
        thresholds.dedup();
        let pos = labels.iter().filter(|&&l| l).count();
        let mut ap = 0.0;
        let mut prev_tp = 0usize;
        for &th in &thresholds {
            let mut tp = 0usize;
            let mut fp = 0usize;
            for (s, &l) in scores.iter().zip(labels) {
                if *s >= th {
                    if l {
                        tp += 1;
                    } else {
                        fp += 1;
                    }
                }
            }
            if tp > prev_tp {
                let precision = tp as f64 / (tp + fp) as f64;
                ap += ((tp - prev_tp) as f64 / pos as f64) * precision;
            }
            prev_tp = tp;
        }
        ap
    }

    #[test]
    fn auc_known_values() {
        let labels = [false, false, true, true];
        assert_eq!(auc(&[0.1, 0.4, 0.35, 0.8], &labels).unwrap(), 0.75);
        assert_eq!(auc(&[0.1, 0.2, 0.3, 0.4], &labels).unwrap(), 1.0);
        assert_eq!(auc(&[0.4, 0.3, 0.2, 0.1], &labels).unwrap(), 0.0);
        assert_eq!(auc(&[0.5, 0.5, 0.5, 0.5], &labels).unwrap(), 0.5);
    }

    #[test]
    fn auc_near_half_for_random_scores() {
        let mut rng = ChaCha12Rng::seed_from_u64(5);
        let n = 20_000;
        let scores: Vec<f64> = (0..n).map(|_| rng.gen::<f64>()).collect();
        let labels: Vec<bool> = (0..n).map(|_| rng.gen_bool(0.3)).collect();
        let got = auc(&scores, &labels).unwrap();
        assert!((got - 0.5).abs() < 0.02, "{got}");
    }

    #[test]
    fn auprc_known_values() {
        // single positive ranked last among 10
        let mut scores: Vec<f64> = (1..=10).map(|i| i as f64 / 10.0).collect();
        let mut labels = vec![false; 10];
        labels[0] = true; // lowest score is the positive
        assert_eq!(auprc(&scores, &labels).unwrap(), 0.1);
        // perfect ranking
        labels = vec![false; 10];
        labels[9] = true;
        scores = (1..=10).map(|i| i as f64 / 10.0).collect();
        assert_eq!(auprc(&scores, &labels).unwrap(), 1.0);
    }

    #[test]
    fn auprc_approaches_prevalence_for_random_scores() {
        let mut rng = ChaCha12Rng::seed_from_u64(6);
        let n = 20_000;
        let prevalence = 0.25;
        let scores: Vec<f64> = (0..n).map(|_| rng.gen::<f64>()).collect();
        let labels: Vec<bool> = (0..n).map(|_| rng.gen_bool(prevalence)).collect();
        let got = auprc(&scores, &labels).unwrap();
        assert!((got - prevalence).abs() < 0.03, "{got}");
    }

    #[test]
    fn metrics_match_exhaustive_oracles_exactly() {
        let mut rng = ChaCha12Rng::seed_from_u64(7);
        for trial in 0..500 {
            let n = rng.gen_range(2..=12);
            // quantized scores force ties regularly
            let scores: Vec<f64> =
                (0..n).map(|_| (rng.gen_range(0..6) as f64) / 5.0).collect();
            let mut labels: Vec<bool> = (0..n).map(|_| rng.gen_bool(0.5)).collect();
            if labels.iter().all(|&l| l) {
                labels[0] = false;
            }
            if labels.iter().all(|&l| !l) {
                labels[0] = true;
            }
            let got_auc = auc(&scores, &labels).unwrap();
            let want_auc = auc_oracle(&scores, &labels);
            assert_eq!(got_auc, want_auc, "trial {trial} scores {scores:?} {labels:?}");
            let got_ap = auprc(&scores, &labels).unwrap();
            let want_ap = auprc_oracle(&scores, &labels);
            assert_eq!(got_ap, want_ap, "trial {trial} scores {scores:?} {labels:?}");
        }
    }

    #[test]
    fn metrics_are_invariant_to_monotone_transforms() {
        let mut rng = ChaCha12Rng::seed_from_u64(8);
        for _ in 0..200 {
            let n = rng.gen_range(4..40);
            let scores: Vec<f64> = (0..n).map(|_| rng.gen_range(-3.0..3.0)).collect();
            let mut labels: Vec<bool> = (0..n).map(|_| rng.gen_bool(0.4)).collect();
            if labels.iter().all(|&l| l) {
                labels[0] = false;
            }
            if labels.iter().all(|&l| !l) {
                labels[0] = true;
            }
            let mapped: Vec<f64> = scores.iter().map(|s| (0.7 * s).exp() + 2.0).collect();
            assert_eq!(auc(&scores, &labels).unwrap(), auc(&mapped, &labels).unwrap());
            assert_eq!(auprc(&scores, &labels).unwrap(), auprc(&mapped, &labels).unwrap());
        }
    }

    #[test]
    fn single_class_inputs_are_rejected() {
        assert!(auc(&[0.1, 0.2], &[true, true]).is_err());
        assert!(auprc(&[0.1, 0.2], &[false, false]).is_err());
    }

    #[test]
    fn masked_mae_examples() {
        let truth = array![[1.0, 2.0], [3.0, 4.0]];
        let mask = array![[1.0, 0.0], [0.0, 1.0]];
        assert_eq!(masked_mae(&truth, &truth.clone(), &mask).unwrap(), 0.0);
        let off = truth.mapv(|v| v + 1.0);
        assert_eq!(masked_mae(&truth, &off, &mask).unwrap(), 1.0);
        assert!(masked_mae(&truth, &off, &Matrix::zeros((2, 2))).is_err());
    }

    #[test]
    fn correlation_identities() {
        let pairs: Vec<(f64, f64)> =
            (0..30).map(|i| (i as f64 / 10.0, i as f64 / 10.0)).collect();
        let (r, p) = uncertainty_error_correlation(&pairs).unwrap();
        assert!((r - 1.0).abs() < 1e-12);
        assert_eq!(p, 0.0);

        let constant: Vec<(f64, f64)> = (0..10).map(|i| (i as f64, 2.5)).collect();
        assert!(uncertainty_error_correlation(&constant).is_err());
        assert!(uncertainty_error_correlation(&[(1.0, 2.0), (2.0, 1.0)]).is_err());
    }

    #[test]
    fn correlation_p_value_matches_reference() {
        // r = 0.5, n = 12 gives t = 1.8257..., two-sided p = 0.09785...
        // (checked against the survival function of the t distribution)
        let mut rng = ChaCha12Rng::seed_from_u64(9);
        let mut pairs = Vec::new();
        for _ in 0..2000 {
            let x: f64 = rng.gen_range(-1.0..1.0);
            let noise: f64 = rng.gen_range(-1.0..1.0);
            pairs.push((x, 0.5 * x + noise));
        }
        let (r, p) = uncertainty_error_correlation(&pairs).unwrap();
        assert!(r > 0.2 && r < 0.7, "{r}");
        assert!(p < 1e-6, "{p}");
    }

    #[test]
    fn plot_data_reflects_the_sample() {
        use crate::data_model::apply_artificial_masking;
        let values = array![[1.0, 5.0], [2.0, 6.0], [3.0, 7.0], [4.0, 8.0]];
        let mask = Matrix::ones((4, 2));
        let sample = crate::data_model::TimeSeriesSample::new(
            values,
            mask,
            vec![0.0, 1.0, 2.0, 3.0],
            true,
        )
        .unwrap();
        let sample = apply_artificial_masking(&sample, 0.25, 3).unwrap();
        let steps: Vec<StepState> = (0..4)
            .map(|t| StepState {
                z: vec![],
                x_hat: vec![t as f64, t as f64],
                u: vec![0.0, 0.3],
                alpha: vec![1.0, 0.5],
                h: vec![],
            })
            .collect();
        let plot =
            emit_imputation_plot_data(&sample, &["a".into(), "b".into()], &steps).unwrap();
        assert_eq!(plot.variables.len(), 2);
        let total_observed: usize = plot.variables.iter().map(|v| v.observed.len()).sum();
        let total_held: usize = plot.variables.iter().map(|v| v.held_out.len()).sum();
        assert_eq!(total_held, 2);
        assert_eq!(total_observed, 8 - 2);
        // the band half-width equals u at every step
        for (j, var) in plot.variables.iter().enumerate() {
            for (t, point) in var.imputed.iter().enumerate() {
                assert_eq!(point.2, steps[t].u[j]);
            }
        }
        // per-variable annotation equals the masked MAE restricted to it
        for (j, var) in plot.variables.iter().enumerate() {
            if let Some(mae) = var.mae {
                let col_truth = sample.x_truth.column(j).insert_axis(ndarray::Axis(1)).to_owned();
                let col_hat = Matrix::from_shape_fn((4, 1), |(t, _)| steps[t].x_hat[j]);
                let col_mask = sample.imp_mask.column(j).insert_axis(ndarray::Axis(1)).to_owned();
                let want = masked_mae(&col_truth, &col_hat, &col_mask).unwrap();
                assert!((mae - want).abs() < 1e-15);
            }
        }
    }
}
