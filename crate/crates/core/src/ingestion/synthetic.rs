//! Synthetic datasets with known ground truth: linear-Gaussian latent
//! dynamics observed through a random linear map, labels drawn from a
//! logistic function of the final latent state, entries removed i.i.d.

use ndarray::Array1;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::data_model::{Dataset, TimeSeriesSample};
use crate::error::{Result, UgssError};
use crate::graph::Matrix;

/// Generator configuration.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticSpec {
    pub n_samples: usize,
    pub n_steps: usize,
    pub n_variables: usize,
    pub latent_dim: usize,
    /// Probability that any (step, variable) entry is removed.
    pub missing_rate: f64,
    /// Target fraction of positive labels.
    pub class_balance: f64,
    /// Observation noise standard deviation.
    pub noise_std: f64,
    pub seed: u64,
}

impl SyntheticSpec {
    fn validate(&self) -> Result<()> {
        if self.n_samples == 0 || self.n_steps == 0 || self.n_variables == 0 || self.latent_dim == 0
        {
            return Err(UgssError::validation("synthetic spec dimensions must be positive"));
        }
        if !(0.0..1.0).contains(&self.missing_rate) {
            return Err(UgssError::validation("missing_rate must lie in [0, 1)"));
        }
        if !(0.0..1.0).contains(&self.class_balance) || self.class_balance == 0.0 {
            return Err(UgssError::validation("class_balance must lie in (0, 1)"));
        }
        if self.noise_std < 0.0 {
            return Err(UgssError::validation("noise_std must be nonnegative"));
        }
        Ok(())
    }
}

/// Generated dataset plus the fully observed matrices it was derived from
/// (one per sample, aligned by index).
pub struct SyntheticOutput {
    pub dataset: Dataset,
    pub full_values: Vec<Matrix>,
}

fn standard_normal(rng: &mut ChaCha12Rng) -> f64 {
    StandardNormal.sample(rng)
}

/// Largest-magnitude eigenvalue estimate by power iteration; used to scale
/// the latent transition to a stable spectral radius.
fn spectral_radius(a: &Matrix, rng: &mut ChaCha12Rng) -> f64 {
    let n = a.nrows();
    let mut v = Array1::from_shape_fn(n, |_| standard_normal(rng));
    let mut radius = 1.0;
    for _ in 0..50 {
        let w = a.dot(&v);
        radius = w.iter().map(|x| x * x).sum::<f64>().sqrt();
        if radius < 1e-12 {
            return 0.0;
        }
        v = w / radius;
    }
    radius
}

/// Generate a dataset from linear-Gaussian latent dynamics
/// `a_t = A a_{t-1} + process noise`, observed as `x_t = B a_t + noise`.
/// Labels come from a logistic function of the final latent state with the
/// threshold calibrated to `class_balance`. Deterministic per seed.
pub fn generate_synthetic(spec: &SyntheticSpec) -> Result<SyntheticOutput> {
    spec.validate()?;
    let mut rng = ChaCha12Rng::seed_from_u64(spec.seed);
    let (l, d, t) = (spec.latent_dim, spec.n_variables, spec.n_steps);

    let mut transition = Matrix::from_shape_fn((l, l), |_| standard_normal(&mut rng));
    let radius = spectral_radius(&transition, &mut rng);
    if radius > 0.0 {
        transition *= 0.9 / radius;
    }
    let emission = Matrix::from_shape_fn((l, d), |_| standard_normal(&mut rng) / (l as f64).sqrt());
    let readout = Array1::from_shape_fn(l, |_| standard_normal(&mut rng));

    let mut full_values = Vec::with_capacity(spec.n_samples);
    let mut scores = Vec::with_capacity(spec.n_samples);
    for _ in 0..spec.n_samples {
        let mut latent = Array1::from_shape_fn(l, |_| standard_normal(&mut rng));
        let mut x = Matrix::zeros((t, d));
        for step in 0..t {
            if step > 0 {
                let noise = Array1::from_shape_fn(l, |_| 0.5 * standard_normal(&mut rng));
                latent = latent.dot(&transition) + noise;
            }
            let row = latent.dot(&emission);
            for j in 0..d {
                x[(step, j)] = row[j] + spec.noise_std * standard_normal(&mut rng);
            }
        }
        scores.push(latent.dot(&readout));
        full_values.push(x);
    }

    // calibrate the logistic threshold so the positive rate matches
    let mut sorted = scores.clone();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let threshold = super::percentile(&sorted, 100.0 * (1.0 - spec.class_balance));
    let mean = scores.iter().sum::<f64>() / scores.len() as f64;
    let sd = (scores.iter().map(|s| (s - mean).powi(2)).sum::<f64>() / scores.len() as f64)
        .sqrt()
        .max(1e-12);
    let slope = 4.0 / sd;

    let timestamps: Vec<f64> = (0..t).map(|i| i as f64).collect();
    let mut samples = Vec::with_capacity(spec.n_samples);
    for (x, score) in full_values.iter().zip(&scores) {
        let p = 1.0 / (1.0 + (-slope * (score - threshold)).exp());
        let label = rng.gen_bool(p);
        let mask =
            Matrix::from_shape_fn((t, d), |_| f64::from(!rng.gen_bool(spec.missing_rate)));
        samples.push(TimeSeriesSample::new(x.clone(), mask, timestamps.clone(), label)?);
    }

    let variables = (0..d).map(|j| format!("v{j}")).collect();
    Ok(SyntheticOutput { dataset: Dataset::new(variables, samples), full_values })
}
