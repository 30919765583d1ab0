//! Core data types shared by every other module: one patient's masked time
//! series, masking semantics, time-interval construction, artificial masking
//! for imputation scoring, batching, and the on-disk container format.
//!
//! Conventions:
//! - `mask[t][d] = 1` iff variable `d` was observed at step `t`; `x_tilde`
//!   is exactly zero wherever `mask = 0`.
//! - `imp_mask` marks artificially held-out entries (1 = held out). Held-out
//!   entries count as *missing* in the model input; `x_truth` keeps their
//!   original values for scoring.
//! - `delta[t][d]` is the time elapsed since variable `d` was last observed,
//!   with `delta[0][d] = 1` by convention.

use std::io::{Read, Write};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Result, UgssError};
use crate::graph::Matrix;
use crate::ingestion::VariableSpec;

/// One patient: masked observations, masks, time intervals, timestamps, label.
#[derive(Clone, Debug, PartialEq)]
pub struct TimeSeriesSample {
    /// Observations with unobserved entries set to 0, `T x D`.
    pub x_tilde: Matrix,
    /// Observation mask, `T x D`, 1 = observed.
    pub mask: Matrix,
    /// Time since last observation per variable, `T x D`, hours.
    pub delta: Matrix,
    /// Shared per-step timestamps, length `T`, nondecreasing, hours.
    pub timestamps: Vec<f64>,
    /// In-hospital mortality label.
    pub label: bool,
    /// Artificially held-out entries, `T x D`, 1 = held out.
    pub imp_mask: Matrix,
    /// Ground truth at held-out entries (defined only where `imp_mask = 1`).
    pub x_truth: Matrix,
}

impl TimeSeriesSample {
    /// Build a sample from observations and a mask, computing `delta` and
    /// zeroing unobserved entries. `imp_mask`/`x_truth` start empty.
    pub fn new(
        values: Matrix,
        mask: Matrix,
        timestamps: Vec<f64>,
        label: bool,
    ) -> Result<Self> {
        let (t, d) = values.dim();
        if mask.dim() != (t, d) {
            return Err(UgssError::validation(format!(
                "mask shape {:?} does not match values shape {:?}",
                mask.dim(),
                values.dim()
            )));
        }
        if timestamps.len() != t {
            return Err(UgssError::validation(format!(
                "{} timestamps for {} steps",
                timestamps.len(),
                t
            )));
        }
        if mask.iter().any(|&m| m != 0.0 && m != 1.0) {
            return Err(UgssError::validation("mask entries must be 0 or 1"));
        }
        let delta = compute_time_intervals(&timestamps, &mask)?;
        let x_tilde = &values * &mask;
        Ok(TimeSeriesSample {
            x_tilde,
            mask,
            delta,
            timestamps,
            label,
            imp_mask: Array2::zeros((t, d)),
            x_truth: Array2::zeros((t, d)),
        })
    }

    pub fn n_steps(&self) -> usize {
        self.x_tilde.nrows()
    }

    pub fn n_variables(&self) -> usize {
        self.x_tilde.ncols()
    }

    pub fn n_observed(&self) -> usize {
        self.mask.iter().filter(|&&m| m == 1.0).count()
    }

    pub fn n_held_out(&self) -> usize {
        self.imp_mask.iter().filter(|&&m| m == 1.0).count()
    }

    /// The same record read in reversed time: step order flipped, timestamps
    /// remapped so they stay nondecreasing, and `delta` recomputed under the
    /// reversed clock.
    pub fn reversed(&self) -> TimeSeriesSample {
        let t = self.n_steps();
        let last = *self.timestamps.last().unwrap_or(&0.0);
        let rev_rows = |m: &Matrix| {
            let mut out = m.clone();
            for (i, row) in m.outer_iter().enumerate() {
                out.row_mut(t - 1 - i).assign(&row);
            }
            out
        };
        let timestamps: Vec<f64> = (0..t).map(|i| last - self.timestamps[t - 1 - i]).collect();
        let mask = rev_rows(&self.mask);
        let delta = compute_time_intervals(&timestamps, &mask)
            .expect("reversed timestamps stay nondecreasing");
        TimeSeriesSample {
            x_tilde: rev_rows(&self.x_tilde),
            mask,
            delta,
            timestamps,
            label: self.label,
            imp_mask: rev_rows(&self.imp_mask),
            x_truth: rev_rows(&self.x_truth),
        }
    }
}

/// A dataset: the samples plus the sidecar metadata (variable names and,
/// once fitted, normalization statistics).
#[derive(Clone, Debug)]
pub struct Dataset {
    pub variables: Vec<String>,
    pub samples: Vec<TimeSeriesSample>,
    /// Per-variable preprocessing statistics, present once a preprocessor
    /// has been fitted and applied.
    pub normalization: Option<Vec<VariableSpec>>,
}

impl Dataset {
    pub fn new(variables: Vec<String>, samples: Vec<TimeSeriesSample>) -> Self {
        Dataset { variables, samples, normalization: None }
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn n_variables(&self) -> usize {
        self.variables.len()
    }
}

/// Time intervals per Eq.-style recurrence: `delta[0] = 1`; for `t > 0`,
/// the gap to the previous step, plus the previous interval when the
/// variable was missing there. Timestamps are shared across variables.
pub fn compute_time_intervals(timestamps: &[f64], mask: &Matrix) -> Result<Matrix> {
    let t = timestamps.len();
    let d = mask.ncols();
    if mask.nrows() != t {
        return Err(UgssError::validation(format!(
            "mask has {} rows for {} timestamps",
            mask.nrows(),
            t
        )));
    }
    for i in 1..t {
        if timestamps[i] < timestamps[i - 1] {
            return Err(UgssError::validation(format!(
                "timestamps must be nondecreasing; index {i} has {} after {}",
                timestamps[i],
                timestamps[i - 1]
            )));
        }
    }
    let mut delta = Array2::zeros((t, d));
    for j in 0..d {
        for i in 0..t {
            delta[(i, j)] = if i == 0 {
                1.0
            } else {
                let gap = timestamps[i] - timestamps[i - 1];
                if mask[(i - 1, j)] == 0.0 {
                    gap + delta[(i - 1, j)]
                } else {
                    gap
                }
            };
        }
    }
    Ok(delta)
}

/// Hold out a uniformly random fraction of the observed entries: move them
/// out of the model input (`mask` cleared, `x_tilde` zeroed, `delta`
/// recomputed) and into `imp_mask`/`x_truth` for scoring. Deterministic for
/// a fixed seed.
pub fn apply_artificial_masking(
    sample: &TimeSeriesSample,
    ratio: f64,
    seed: u64,
) -> Result<TimeSeriesSample> {
    if !(0.0..1.0).contains(&ratio) || ratio <= 0.0 {
        return Err(UgssError::validation(format!("masking ratio {ratio} not in (0,1)")));
    }
    let observed: Vec<(usize, usize)> = sample
        .mask
        .indexed_iter()
        .filter(|(_, &m)| m == 1.0)
        .map(|(idx, _)| idx)
        .collect();
    if observed.is_empty() {
        return Err(UgssError::validation("cannot mask a sample with no observed entries"));
    }
    let n_hold = ((ratio * observed.len() as f64).ceil() as usize).max(1);
    if n_hold > observed.len() {
        return Err(UgssError::validation(format!(
            "requested {n_hold} held-out entries but only {} observed",
            observed.len()
        )));
    }

    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    let mut pool = observed;
    pool.shuffle(&mut rng);
    let chosen = &pool[..n_hold];

    let mut out = sample.clone();
    for &(i, j) in chosen {
        out.imp_mask[(i, j)] = 1.0;
        out.x_truth[(i, j)] = sample.x_tilde[(i, j)];
        out.x_tilde[(i, j)] = 0.0;
        out.mask[(i, j)] = 0.0;
    }
    out.delta = compute_time_intervals(&out.timestamps, &out.mask)?;
    Ok(out)
}

/// Hold out entries across a whole dataset; per-sample seeds are derived
/// from the base seed and the sample index so the assignment does not
/// depend on dataset order upstream of the call.
pub fn mask_dataset(dataset: &Dataset, ratio: f64, seed: u64) -> Result<Dataset> {
    let samples = dataset
        .samples
        .iter()
        .enumerate()
        .map(|(i, s)| apply_artificial_masking(s, ratio, seed.wrapping_add(i as u64)))
        .collect::<Result<Vec<_>>>()?;
    Ok(Dataset { variables: dataset.variables.clone(), samples, normalization: dataset.normalization.clone() })
}

/// Hold out entries with one explicit seed per sample; samples with no
/// observed entries are passed through untouched (with a warning) instead of
/// failing the whole split.
pub fn mask_dataset_skipping_empty(
    dataset: &Dataset,
    ratio: f64,
    seeds: Vec<u64>,
) -> Result<Dataset> {
    if seeds.len() != dataset.len() {
        return Err(UgssError::validation("one masking seed per sample required"));
    }
    let mut samples = Vec::with_capacity(dataset.len());
    for (i, (s, seed)) in dataset.samples.iter().zip(seeds).enumerate() {
        if s.n_observed() == 0 {
            log::warn!("sample {i} has no observed entries; artificial masking skipped");
            samples.push(s.clone());
        } else {
            samples.push(apply_artificial_masking(s, ratio, seed)?);
        }
    }
    Ok(Dataset {
        variables: dataset.variables.clone(),
        samples,
        normalization: dataset.normalization.clone(),
    })
}

/// Per-step slices of a padded minibatch. Each matrix is `B x D`.
pub struct StepData {
    pub x_tilde: Matrix,
    pub mask: Matrix,
    pub delta: Matrix,
    pub imp_mask: Matrix,
    pub x_truth: Matrix,
    /// `B x 1` indicator: 1 while the step is inside the sample's valid length.
    pub valid: Matrix,
}

/// Samples stacked along a leading batch axis, padded to a common length.
/// Padded steps carry `mask = 0` everywhere and `valid = 0`, which excludes
/// them from every loss term.
pub struct Batch {
    pub steps: Vec<StepData>,
    pub labels: Matrix,
    pub lengths: Vec<usize>,
    pub n_variables: usize,
}

impl Batch {
    pub fn from_samples(samples: &[&TimeSeriesSample]) -> Batch {
        assert!(!samples.is_empty(), "cannot batch zero samples");
        let b = samples.len();
        let d = samples[0].n_variables();
        let t_max = samples.iter().map(|s| s.n_steps()).max().unwrap();
        let lengths: Vec<usize> = samples.iter().map(|s| s.n_steps()).collect();

        let mut steps = Vec::with_capacity(t_max);
        for t in 0..t_max {
            let mut x_tilde = Matrix::zeros((b, d));
            let mut mask = Matrix::zeros((b, d));
            let mut delta = Matrix::zeros((b, d));
            let mut imp_mask = Matrix::zeros((b, d));
            let mut x_truth = Matrix::zeros((b, d));
            let mut valid = Matrix::zeros((b, 1));
            for (n, s) in samples.iter().enumerate() {
                if t < s.n_steps() {
                    x_tilde.row_mut(n).assign(&s.x_tilde.row(t));
                    mask.row_mut(n).assign(&s.mask.row(t));
                    delta.row_mut(n).assign(&s.delta.row(t));
                    imp_mask.row_mut(n).assign(&s.imp_mask.row(t));
                    x_truth.row_mut(n).assign(&s.x_truth.row(t));
                    valid[(n, 0)] = 1.0;
                }
            }
            steps.push(StepData { x_tilde, mask, delta, imp_mask, x_truth, valid });
        }
        let labels =
            Matrix::from_shape_fn((b, 1), |(n, _)| if samples[n].label { 1.0 } else { 0.0 });
        Batch { steps, labels, lengths, n_variables: d }
    }

    pub fn n_samples(&self) -> usize {
        self.lengths.len()
    }

    pub fn n_steps(&self) -> usize {
        self.steps.len()
    }

    /// Total held-out entries within valid steps.
    pub fn held_out_count(&self) -> usize {
        self.steps.iter().map(|s| s.imp_mask.iter().filter(|&&m| m == 1.0).count()).sum()
    }
}

// ---------------------------------------------------------------------------
// Container format
// ---------------------------------------------------------------------------

const CONTAINER_MAGIC: &[u8; 8] = b"UGSSDS01";

/// JSON sidecar stored next to a container file.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Sidecar {
    pub variables: Vec<String>,
    /// Present once a preprocessor has been fitted and applied to the data.
    pub normalization: Option<Vec<VariableSpec>>,
}

/// Write a dataset to `<path>` with a JSON sidecar at `<path>.json`.
/// The byte layout is documented in `docs/FORMAT.md`.
pub fn write_container(dataset: &Dataset, path: &Path) -> Result<()> {
    let mut file = std::io::BufWriter::new(std::fs::File::create(path)?);
    file.write_all(CONTAINER_MAGIC)?;
    file.write_u32::<LittleEndian>(dataset.samples.len() as u32)?;
    file.write_u32::<LittleEndian>(dataset.n_variables() as u32)?;
    for s in &dataset.samples {
        file.write_u32::<LittleEndian>(s.n_steps() as u32)?;
        file.write_u8(u8::from(s.label))?;
        for &ts in &s.timestamps {
            file.write_f64::<LittleEndian>(ts)?;
        }
        for m in [&s.x_tilde, &s.mask, &s.delta, &s.imp_mask, &s.x_truth] {
            for &v in m.iter() {
                file.write_f64::<LittleEndian>(v)?;
            }
        }
    }
    let sidecar = Sidecar {
        variables: dataset.variables.clone(),
        normalization: dataset.normalization.clone(),
    };
    let sidecar_path = sidecar_path_for(path);
    serde_json::to_writer_pretty(std::fs::File::create(sidecar_path)?, &sidecar)?;
    Ok(())
}

fn sidecar_path_for(path: &Path) -> std::path::PathBuf {
    let mut os = path.as_os_str().to_owned();
    os.push(".json");
    std::path::PathBuf::from(os)
}

/// Read a dataset written by [`write_container`].
pub fn read_container(path: &Path) -> Result<Dataset> {
    let display = path.display().to_string();
    let mut file = std::io::BufReader::new(std::fs::File::open(path)?);
    let mut magic = [0u8; 8];
    file.read_exact(&mut magic)?;
    if &magic != CONTAINER_MAGIC {
        return Err(UgssError::format(&display, "bad magic; not a ugss container"));
    }
    let n_samples = file.read_u32::<LittleEndian>()? as usize;
    let d = file.read_u32::<LittleEndian>()? as usize;

    let sidecar_path = sidecar_path_for(path);
    let sidecar: Sidecar = serde_json::from_reader(std::fs::File::open(&sidecar_path)?)?;
    if sidecar.variables.len() != d {
        return Err(UgssError::format(
            &display,
            format!("sidecar lists {} variables, container has {d}", sidecar.variables.len()),
        ));
    }

    let mut samples = Vec::with_capacity(n_samples);
    for _ in 0..n_samples {
        let t = file.read_u32::<LittleEndian>()? as usize;
        let label = file.read_u8()? != 0;
        let mut timestamps = vec![0.0; t];
        for ts in timestamps.iter_mut() {
            *ts = file.read_f64::<LittleEndian>()?;
        }
        let read_matrix = |file: &mut std::io::BufReader<std::fs::File>| -> Result<Matrix> {
            let mut data = vec![0.0; t * d];
            for v in data.iter_mut() {
                *v = file.read_f64::<LittleEndian>()?;
            }
            Matrix::from_shape_vec((t, d), data)
                .map_err(|e| UgssError::format(&display, e.to_string()))
        };
        let x_tilde = read_matrix(&mut file)?;
        let mask = read_matrix(&mut file)?;
        let delta = read_matrix(&mut file)?;
        let imp_mask = read_matrix(&mut file)?;
        let x_truth = read_matrix(&mut file)?;
        samples.push(TimeSeriesSample { x_tilde, mask, delta, timestamps, label, imp_mask, x_truth });
    }
    Ok(Dataset { variables: sidecar.variables, samples, normalization: sidecar.normalization })
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use rand::Rng;

    fn sample_4x3() -> TimeSeriesSample {
        let values = array![
            [1.0, 2.0, 3.0],
            [4.0, 5.0, 6.0],
            [7.0, 8.0, 9.0],
            [10.0, 11.0, 12.0]
        ];
        let mask = Array2::ones((4, 3));
        TimeSeriesSample::new(values, mask, vec![0.0, 1.0, 2.0, 3.0], false).unwrap()
    }

    /// Brute-force per-variable scan: for each (t, d), walk back to the most
    /// recent observation of d and accumulate the raw timestamp gaps.
    fn interval_oracle(timestamps: &[f64], mask: &Matrix) -> Matrix {
        let (t, d) = mask.dim();
        let mut out = Array2::zeros((t, d));
        for j in 0..d {
            for i in 0..t {
                if i == 0 {
                    out[(i, j)] = 1.0;
                    continue;
                }
                let mut k = i - 1;
                let mut acc = timestamps[i] - timestamps[k];
                while mask[(k, j)] == 0.0 {
                    if k == 0 {
                        acc += 1.0; // delta[0] = 1 propagates forward
                        break;
                    }
                    acc += timestamps[k] - timestamps[k - 1];
                    k -= 1;
                }
                out[(i, j)] = acc;
            }
        }
        out
    }

    #[test]
    fn intervals_fully_observed() {
        let mask = Array2::ones((3, 1));
        let delta = compute_time_intervals(&[1.0, 2.0, 3.0], &mask).unwrap();
        assert_eq!(delta, array![[1.0], [1.0], [1.0]]);
    }

    #[test]
    fn intervals_single_gap() {
        let mask = array![[1.0], [0.0], [1.0]];
        let delta = compute_time_intervals(&[1.0, 2.0, 3.0], &mask).unwrap();
        assert_eq!(delta, array![[1.0], [1.0], [2.0]]);
    }

    #[test]
    fn intervals_leading_missing_run() {
        let mask = array![[0.0], [0.0], [1.0], [0.0]];
        let delta = compute_time_intervals(&[0.0, 2.0, 5.0, 6.0], &mask).unwrap();
        assert_eq!(delta, array![[1.0], [3.0], [6.0], [1.0]]);
    }

    #[test]
    fn intervals_match_bruteforce_scan() {
        let mut rng = ChaCha12Rng::seed_from_u64(99);
        for _ in 0..1000 {
            let t = rng.gen_range(1..12);
            let d = rng.gen_range(1..5);
            let mut timestamps = vec![0.0; t];
            let mut acc = rng.gen_range(0.0..2.0);
            for ts in timestamps.iter_mut() {
                *ts = acc;
                acc += rng.gen_range(0.0..3.0);
            }
            let mask = Matrix::from_shape_fn((t, d), |_| f64::from(rng.gen_bool(0.5)));
            let got = compute_time_intervals(&timestamps, &mask).unwrap();
            let want = interval_oracle(&timestamps, &mask);
            assert_eq!(got, want, "t={t} d={d} ts={timestamps:?} mask={mask:?}");
        }
    }

    #[test]
    fn intervals_reject_nonmonotone_timestamps() {
        let mask = Array2::ones((3, 1));
        let err = compute_time_intervals(&[1.0, 3.0, 2.0], &mask).unwrap_err();
        assert!(err.to_string().contains("index 2"), "{err}");
    }

    #[test]
    fn masking_holds_out_requested_count() {
        let masked = apply_artificial_masking(&sample_4x3(), 0.25, 7).unwrap();
        assert_eq!(masked.n_held_out(), 3);
        // held-out entries left the model input entirely
        for (idx, &held) in masked.imp_mask.indexed_iter() {
            if held == 1.0 {
                assert_eq!(masked.mask[idx], 0.0);
                assert_eq!(masked.x_tilde[idx], 0.0);
                assert_eq!(masked.x_truth[idx], sample_4x3().x_tilde[idx]);
            }
        }
    }

    #[test]
    fn masking_is_deterministic_per_seed() {
        let a = apply_artificial_masking(&sample_4x3(), 0.25, 41).unwrap();
        let b = apply_artificial_masking(&sample_4x3(), 0.25, 41).unwrap();
        assert_eq!(a.imp_mask, b.imp_mask);
        let c = apply_artificial_masking(&sample_4x3(), 0.25, 42).unwrap();
        assert!(a.imp_mask != c.imp_mask || a == c, "different seed should usually differ");
    }

    #[test]
    fn masking_recomputes_delta() {
        // Hold out enough entries that some observation chain breaks.
        let base = sample_4x3();
        let masked = apply_artificial_masking(&base, 0.5, 3).unwrap();
        let expected = interval_oracle(&masked.timestamps, &masked.mask);
        assert_eq!(masked.delta, expected);
        assert_ne!(masked.delta, base.delta);
    }

    #[test]
    fn masking_never_touches_missing_entries() {
        let values = array![[1.0, 0.0], [0.0, 2.0], [3.0, 0.0]];
        let mask = array![[1.0, 0.0], [0.0, 1.0], [1.0, 0.0]];
        let s = TimeSeriesSample::new(values, mask.clone(), vec![0.0, 1.0, 2.0], true).unwrap();
        for seed in 0..50 {
            let m = apply_artificial_masking(&s, 0.4, seed).unwrap();
            for (idx, &was_observed) in mask.indexed_iter() {
                if was_observed == 0.0 {
                    assert_eq!(m.imp_mask[idx], 0.0);
                }
            }
        }
    }

    #[test]
    fn masking_rejects_empty_observation_set() {
        let s = TimeSeriesSample::new(
            Array2::zeros((2, 2)),
            Array2::zeros((2, 2)),
            vec![0.0, 1.0],
            false,
        )
        .unwrap();
        assert!(apply_artificial_masking(&s, 0.5, 0).is_err());
    }

    #[test]
    fn sample_zeroes_unobserved_values() {
        let values = array![[5.0, 6.0], [7.0, 8.0]];
        let mask = array![[1.0, 0.0], [0.0, 1.0]];
        let s = TimeSeriesSample::new(values, mask, vec![0.0, 1.0], false).unwrap();
        assert_eq!(s.x_tilde, array![[5.0, 0.0], [0.0, 8.0]]);
        // invariant: x_tilde ⊙ (1 - mask) ≡ 0
        for (idx, &m) in s.mask.indexed_iter() {
            if m == 0.0 {
                assert_eq!(s.x_tilde[idx], 0.0);
            }
        }
    }

    #[test]
    fn reversal_remaps_clock_and_recomputes_delta() {
        let values = array![[1.0], [2.0], [3.0]];
        let mask = array![[1.0], [0.0], [1.0]];
        let s = TimeSeriesSample::new(values, mask, vec![0.0, 1.0, 4.0], false).unwrap();
        let r = s.reversed();
        assert_eq!(r.timestamps, vec![0.0, 3.0, 4.0]);
        assert_eq!(r.x_tilde, array![[3.0], [2.0], [1.0]]);
        let expected = interval_oracle(&r.timestamps, &r.mask);
        assert_eq!(r.delta, expected);
        assert_eq!(r.reversed().x_tilde, s.x_tilde);
        assert_eq!(r.reversed().delta, s.delta);
    }

    #[test]
    fn batch_pads_with_zero_mask_and_valid_flags() {
        let short = TimeSeriesSample::new(
            array![[1.0, 1.0]],
            array![[1.0, 1.0]],
            vec![0.0],
            true,
        )
        .unwrap();
        let long = TimeSeriesSample::new(
            array![[1.0, 2.0], [3.0, 4.0], [5.0, 6.0]],
            Array2::ones((3, 2)),
            vec![0.0, 1.0, 2.0],
            false,
        )
        .unwrap();
        let batch = Batch::from_samples(&[&short, &long]);
        assert_eq!(batch.n_steps(), 3);
        assert_eq!(batch.lengths, vec![1, 3]);
        for t in 1..3 {
            assert_eq!(batch.steps[t].valid[(0, 0)], 0.0);
            assert_eq!(batch.steps[t].mask.row(0).sum(), 0.0);
            assert_eq!(batch.steps[t].x_tilde.row(0).sum(), 0.0);
        }
        assert_eq!(batch.labels, array![[1.0], [0.0]]);
    }

    #[test]
    fn container_roundtrip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("train.ugss");
        let mut ds = Dataset::new(
            vec!["hr".into(), "map".into(), "k".into()],
            vec![sample_4x3(), apply_artificial_masking(&sample_4x3(), 0.3, 5).unwrap()],
        );
        ds.normalization = Some(vec![
            VariableSpec { name: "hr".into(), winsor_low: 1.0, winsor_high: 99.0, mean: 0.25, std: 1.5 },
            VariableSpec { name: "map".into(), winsor_low: 1.0, winsor_high: 99.0, mean: -0.5, std: 2.0 },
            VariableSpec { name: "k".into(), winsor_low: 1.0, winsor_high: 99.0, mean: 4.1, std: 0.4 },
        ]);
        write_container(&ds, &path).unwrap();
        let back = read_container(&path).unwrap();
        assert_eq!(back.variables, ds.variables);
        assert_eq!(back.samples.len(), 2);
        for (a, b) in ds.samples.iter().zip(&back.samples) {
            assert_eq!(a, b);
        }
        let norm = back.normalization.unwrap();
        assert_eq!(norm.len(), 3);
        assert_eq!(norm[2].mean, 4.1);
    }

    #[test]
    fn container_rejects_bad_magic() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("broken.ugss");
        std::fs::write(&path, b"NOTUGSS0rest").unwrap();
        std::fs::write(sidecar_path_for(&path), "{\"variables\":[],\"normalization\":null}")
            .unwrap();
        assert!(read_container(&path).is_err());
    }
}
