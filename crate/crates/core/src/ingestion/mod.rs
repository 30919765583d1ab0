//! Dataset construction: PhysioNet Challenge 2012 raw files, a generic
//! pre-gridded matrix directory, and a synthetic generator with known ground
//! truth; plus the winsorize + z-normalize preprocessing fitted on training
//! folds only.

mod gridded;
mod physionet;
mod synthetic;

pub use gridded::load_gridded_matrix;
pub use physionet::{load_physionet, IngestSummary, PhysionetLoad, PHYSIONET_MANIFEST_JSON};
pub use synthetic::{generate_synthetic, SyntheticOutput, SyntheticSpec};

use log::warn;
use serde::{Deserialize, Serialize};

use crate::data_model::{compute_time_intervals, Dataset};
use crate::error::{Result, UgssError};

/// Per-variable preprocessing statistics fitted on a training split:
/// winsor clamp bounds (values at the configured percentiles) and the
/// mean / standard deviation of the clamped observed entries.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VariableSpec {
    pub name: String,
    pub winsor_low: f64,
    pub winsor_high: f64,
    pub mean: f64,
    pub std: f64,
}

/// Fitted preprocessor: the per-variable statistics plus the indices of the
/// variables kept (all-missing and zero-variance variables are dropped).
#[derive(Clone, Debug, PartialEq)]
pub struct Preprocessor {
    pub specs: Vec<VariableSpec>,
    pub kept: Vec<usize>,
}

/// Linear-interpolation percentile of a sorted slice, `p` in `[0, 100]`.
pub(crate) fn percentile(sorted: &[f64], p: f64) -> f64 {
    debug_assert!(!sorted.is_empty());
    if sorted.len() == 1 {
        return sorted[0];
    }
    let rank = (p / 100.0).clamp(0.0, 1.0) * (sorted.len() - 1) as f64;
    let lo = rank.floor() as usize;
    let hi = rank.ceil() as usize;
    let frac = rank - lo as f64;
    sorted[lo] + (sorted[hi] - sorted[lo]) * frac
}

/// Fit winsor bounds and z-normalization statistics from the observed
/// entries of a training split. Statistics are computed per variable over
/// clamped observed values; variables that end up constant (or were never
/// observed) are dropped with a warning.
pub fn fit_preprocessor(
    train: &Dataset,
    winsor_low_pct: f64,
    winsor_high_pct: f64,
) -> Result<Preprocessor> {
    if train.is_empty() {
        return Err(UgssError::validation("cannot fit a preprocessor on an empty split"));
    }
    if winsor_low_pct > winsor_high_pct {
        return Err(UgssError::validation("winsor percentiles out of order"));
    }
    let d = train.n_variables();
    let mut specs = Vec::new();
    let mut kept = Vec::new();
    for j in 0..d {
        let mut observed: Vec<f64> = Vec::new();
        for s in &train.samples {
            for t in 0..s.n_steps() {
                if s.mask[(t, j)] == 1.0 {
                    observed.push(s.x_tilde[(t, j)]);
                }
            }
        }
        if observed.is_empty() {
            warn!("variable `{}` has no observed entries in the training split; dropped", train.variables[j]);
            continue;
        }
        observed.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let lo = percentile(&observed, winsor_low_pct);
        let hi = percentile(&observed, winsor_high_pct);
        let clamped: Vec<f64> = observed.iter().map(|v| v.clamp(lo, hi)).collect();
        let mean = clamped.iter().sum::<f64>() / clamped.len() as f64;
        let var = clamped.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / clamped.len() as f64;
        let std = var.sqrt();
        if std == 0.0 {
            warn!("variable `{}` is constant after winsorization; dropped", train.variables[j]);
            continue;
        }
        specs.push(VariableSpec {
            name: train.variables[j].clone(),
            winsor_low: lo,
            winsor_high: hi,
            mean,
            std,
        });
        kept.push(j);
    }
    if kept.is_empty() {
        return Err(UgssError::validation("every variable was dropped while fitting"));
    }
    Ok(Preprocessor { specs, kept })
}

impl Preprocessor {
    /// Apply the fitted statistics: subset to the kept variables, clamp and
    /// z-normalize observed entries (and held-out truth values), and keep
    /// missing entries at exactly zero. Never recomputes statistics.
    pub fn apply(&self, dataset: &Dataset) -> Result<Dataset> {
        if dataset.n_variables() <= *self.kept.iter().max().unwrap() {
            return Err(UgssError::validation(format!(
                "preprocessor was fitted on {} variables but dataset has {}",
                self.kept.iter().max().unwrap() + 1,
                dataset.n_variables()
            )));
        }
        let mut samples = Vec::with_capacity(dataset.len());
        for s in &dataset.samples {
            let t = s.n_steps();
            let k = self.kept.len();
            let pick = |m: &crate::graph::Matrix| {
                crate::graph::Matrix::from_shape_fn((t, k), |(i, jj)| m[(i, self.kept[jj])])
            };
            let mut x_tilde = pick(&s.x_tilde);
            let mask = pick(&s.mask);
            let imp_mask = pick(&s.imp_mask);
            let mut x_truth = pick(&s.x_truth);
            for (jj, spec) in self.specs.iter().enumerate() {
                for i in 0..t {
                    if mask[(i, jj)] == 1.0 {
                        x_tilde[(i, jj)] = spec.transform(x_tilde[(i, jj)]);
                    } else {
                        x_tilde[(i, jj)] = 0.0;
                    }
                    if imp_mask[(i, jj)] == 1.0 {
                        x_truth[(i, jj)] = spec.transform(x_truth[(i, jj)]);
                    }
                }
            }
            let delta = compute_time_intervals(&s.timestamps, &mask)?;
            samples.push(crate::data_model::TimeSeriesSample {
                x_tilde,
                mask,
                delta,
                timestamps: s.timestamps.clone(),
                label: s.label,
                imp_mask,
                x_truth,
            });
        }
        Ok(Dataset {
            variables: self.specs.iter().map(|s| s.name.clone()).collect(),
            samples,
            normalization: Some(self.specs.clone()),
        })
    }
}

impl VariableSpec {
    /// Winsorize then z-normalize one observed value.
    pub fn transform(&self, v: f64) -> f64 {
        (v.clamp(self.winsor_low, self.winsor_high) - self.mean) / self.std
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data_model::TimeSeriesSample;
    use ndarray::Array2;

    fn dataset_with_column(values: Vec<f64>) -> Dataset {
        let t = values.len();
        let x = crate::graph::Matrix::from_shape_vec((t, 1), values).unwrap();
        let mask = Array2::ones((t, 1));
        let ts: Vec<f64> = (0..t).map(|i| i as f64).collect();
        let s = TimeSeriesSample::new(x, mask, ts, false).unwrap();
        Dataset::new(vec!["v".into()], vec![s])
    }

    #[test]
    fn winsor_bounds_clamp_the_tails() {
        let ds = dataset_with_column((0..=100).map(f64::from).collect());
        let prep = fit_preprocessor(&ds, 1.0, 99.0).unwrap();
        let spec = &prep.specs[0];
        assert_eq!(spec.winsor_low, 1.0);
        assert_eq!(spec.winsor_high, 99.0);
        // raw 0 and 100 are pulled to the bounds before normalization
        let out = prep.apply(&ds).unwrap();
        let lo = out.samples[0].x_tilde[(0, 0)];
        let hi = out.samples[0].x_tilde[(100, 0)];
        assert_eq!(lo, spec.transform(0.0));
        assert_eq!(lo, spec.transform(1.0));
        assert_eq!(hi, spec.transform(99.0));
    }

    #[test]
    fn constant_variable_is_dropped() {
        let mut ds = dataset_with_column(vec![5.0, 5.0, 5.0]);
        ds.variables = vec!["flat".into()];
        assert!(fit_preprocessor(&ds, 1.0, 99.0).is_err(), "only variable dropped -> error");

        // with a second informative variable, the flat one is dropped silently
        let x = ndarray::array![[5.0, 1.0], [5.0, 2.0], [5.0, 3.0]];
        let mask = Array2::ones((3, 2));
        let s = TimeSeriesSample::new(x, mask, vec![0.0, 1.0, 2.0], false).unwrap();
        let ds = Dataset::new(vec!["flat".into(), "ok".into()], vec![s]);
        let prep = fit_preprocessor(&ds, 1.0, 99.0).unwrap();
        assert_eq!(prep.kept, vec![1]);
        let out = prep.apply(&ds).unwrap();
        assert_eq!(out.variables, vec!["ok".to_string()]);
        assert_eq!(out.samples[0].x_tilde.ncols(), 1);
    }

    #[test]
    fn transformed_train_split_is_standardized() {
        let ds = dataset_with_column(vec![2.0, 4.0, 4.0, 4.0, 5.0, 5.0, 7.0, 9.0]);
        let prep = fit_preprocessor(&ds, 0.0, 100.0).unwrap();
        let out = prep.apply(&ds).unwrap();
        let col: Vec<f64> = out.samples[0].x_tilde.column(0).to_vec();
        let mean = col.iter().sum::<f64>() / col.len() as f64;
        let var = col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / col.len() as f64;
        assert!(mean.abs() < 1e-6, "mean {mean}");
        assert!((var.sqrt() - 1.0).abs() < 1e-6, "std {}", var.sqrt());
    }

    #[test]
    fn missing_entries_stay_zero_after_pipeline() {
        let x = ndarray::array![[10.0, 0.0], [0.0, 20.0], [30.0, 40.0]];
        let mask = ndarray::array![[1.0, 0.0], [0.0, 1.0], [1.0, 1.0]];
        let s = TimeSeriesSample::new(x, mask, vec![0.0, 1.0, 2.0], true).unwrap();
        let ds = Dataset::new(vec!["a".into(), "b".into()], vec![s]);
        let prep = fit_preprocessor(&ds, 0.0, 100.0).unwrap();
        let out = prep.apply(&ds).unwrap();
        let s = &out.samples[0];
        for (idx, &m) in s.mask.indexed_iter() {
            if m == 0.0 {
                assert_eq!(s.x_tilde[idx], 0.0);
            }
        }
    }

    #[test]
    fn apply_reuses_fitted_statistics_verbatim() {
        let train = dataset_with_column(vec![1.0, 2.0, 3.0, 4.0]);
        let eval = dataset_with_column(vec![100.0, -50.0]);
        let prep = fit_preprocessor(&train, 1.0, 99.0).unwrap();
        let before = prep.specs.clone();
        let _ = prep.apply(&eval).unwrap();
        let _ = prep.apply(&eval).unwrap();
        assert_eq!(prep.specs, before, "statistics must never be recomputed");
        // eval values far outside the train range are clamped to train bounds
        let out = prep.apply(&eval).unwrap();
        let hi = out.samples[0].x_tilde[(0, 0)];
        assert_eq!(hi, before[0].transform(before[0].winsor_high));
    }

    #[test]
    fn percentile_interpolates_linearly() {
        let v = [0.0, 1.0, 2.0, 3.0];
        assert_eq!(percentile(&v, 0.0), 0.0);
        assert_eq!(percentile(&v, 100.0), 3.0);
        assert_eq!(percentile(&v, 50.0), 1.5);
    }
}
