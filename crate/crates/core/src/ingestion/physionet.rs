//! PhysioNet Challenge 2012 loader: per-record `Time,Parameter,Value` files
//! bucketed onto an hourly grid over the first 48 hours, labels joined from
//! an outcomes file.
//!
//! The variable list is pinned by the versioned manifest in
//! `data/physionet_variables.json` (embedded at compile time): all 35
//! real-valued time-varying parameters, excluding the static general
//! descriptors, the binary `MechVent` flag, and `Weight` (which doubles as a
//! static descriptor).

use std::collections::{BTreeMap, HashMap};
use std::path::Path;

use log::warn;
use ndarray::Array2;
use serde::Deserialize;

use crate::data_model::{Dataset, TimeSeriesSample};
use crate::error::{Result, UgssError};
use crate::graph::Matrix;

/// The embedded, versioned variable manifest.
pub const PHYSIONET_MANIFEST_JSON: &str =
    include_str!("../../../../data/physionet_variables.json");

#[derive(Deserialize)]
struct Manifest {
    version: u32,
    static_descriptors: Vec<String>,
    variables: Vec<String>,
}

fn manifest() -> Manifest {
    serde_json::from_str(PHYSIONET_MANIFEST_JSON).expect("embedded manifest parses")
}

/// Ingestion counters reported next to the dataset.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct IngestSummary {
    pub records_seen: usize,
    pub records_empty: usize,
    pub records_without_outcome: usize,
    pub rows_skipped: usize,
    pub n_positive: usize,
    pub n_negative: usize,
    pub missing_rate: f64,
}

pub struct PhysionetLoad {
    pub dataset: Dataset,
    pub summary: IngestSummary,
}

/// Parse `HH:MM` (hours may exceed 24) into fractional hours.
fn parse_clock(text: &str) -> Option<f64> {
    let (h, m) = text.split_once(':')?;
    let hours: u32 = h.trim().parse().ok()?;
    let minutes: u32 = m.trim().parse().ok()?;
    if minutes >= 60 {
        return None;
    }
    Some(f64::from(hours) + f64::from(minutes) / 60.0)
}

struct RawRecord {
    id: String,
    /// (variable index, bucket) -> (sum, count)
    cells: HashMap<(usize, usize), (f64, usize)>,
    rows_skipped: usize,
}

fn parse_record(
    path: &Path,
    var_index: &HashMap<&str, usize>,
    statics: &[String],
    grid_hours: usize,
    n_steps: usize,
) -> Result<RawRecord> {
    let text = std::fs::read_to_string(path)?;
    let mut id = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    let mut cells: HashMap<(usize, usize), (f64, usize)> = HashMap::new();
    let mut rows_skipped = 0;

    for (ln, line) in text.lines().enumerate() {
        if ln == 0 && line.trim().eq_ignore_ascii_case("Time,Parameter,Value") {
            continue;
        }
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let mut parts = line.splitn(3, ',');
        let (time, param, value) = match (parts.next(), parts.next(), parts.next()) {
            (Some(t), Some(p), Some(v)) => (t.trim(), p.trim(), v.trim()),
            _ => {
                rows_skipped += 1;
                continue;
            }
        };
        if param == "RecordID" {
            id = value.to_string();
            continue;
        }
        if statics.iter().any(|s| s == param) {
            continue;
        }
        let Some(&j) = var_index.get(param) else {
            continue; // unknown parameter, not part of the manifest
        };
        let (Some(hours), Ok(v)) = (parse_clock(time), value.parse::<f64>()) else {
            rows_skipped += 1;
            continue;
        };
        let bucket = (hours / grid_hours as f64).floor() as usize;
        if hours >= (n_steps * grid_hours) as f64 {
            continue; // outside the first 48 hours ([h, h+1) buckets)
        }
        let entry = cells.entry((j, bucket)).or_insert((0.0, 0));
        entry.0 += v;
        entry.1 += 1;
    }
    Ok(RawRecord { id, cells, rows_skipped })
}

fn parse_outcomes(path: &Path) -> Result<HashMap<String, bool>> {
    let text = std::fs::read_to_string(path)?;
    let mut lines = text.lines();
    let header = lines
        .next()
        .ok_or_else(|| UgssError::format(path.display().to_string(), "empty outcomes file"))?;
    let cols: Vec<&str> = header.split(',').map(str::trim).collect();
    let id_col = cols.iter().position(|c| *c == "RecordID").ok_or_else(|| {
        UgssError::format(path.display().to_string(), "outcomes file lacks a RecordID column")
    })?;
    let death_col = cols.iter().position(|c| *c == "In-hospital_death").ok_or_else(|| {
        UgssError::format(
            path.display().to_string(),
            "outcomes file lacks an In-hospital_death column",
        )
    })?;
    let mut out = HashMap::new();
    for line in lines {
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        if fields.len() <= id_col.max(death_col) {
            continue;
        }
        let label = matches!(fields[death_col], "1");
        out.insert(fields[id_col].to_string(), label);
    }
    Ok(out)
}

/// Load a directory of PhysioNet 2012 record files plus outcomes file(s)
/// (`Outcomes*.txt`). Observations are mean-aggregated into `grid_hours`
/// buckets over the first 48 hours; records with no observations at all are
/// dropped, as are records without an outcomes entry (with a warning).
/// The result is sorted by record id, so directory listing order is
/// irrelevant.
pub fn load_physionet(dir: &Path, grid_hours: usize) -> Result<PhysionetLoad> {
    if grid_hours == 0 || 48 % grid_hours != 0 {
        return Err(UgssError::validation("grid_hours must divide 48"));
    }
    let n_steps = 48 / grid_hours;
    let manifest = manifest();
    debug_assert_eq!(manifest.version, 1);
    let var_index: HashMap<&str, usize> =
        manifest.variables.iter().enumerate().map(|(i, v)| (v.as_str(), i)).collect();
    let d = manifest.variables.len();

    let mut outcome_paths = Vec::new();
    let mut record_paths = Vec::new();
    collect_files(dir, &mut outcome_paths, &mut record_paths)?;
    if record_paths.is_empty() {
        return Err(UgssError::validation(format!("no record files under {}", dir.display())));
    }
    if outcome_paths.is_empty() {
        return Err(UgssError::validation(format!("no Outcomes*.txt under {}", dir.display())));
    }

    let mut outcomes = HashMap::new();
    for p in &outcome_paths {
        outcomes.extend(parse_outcomes(p)?);
    }

    let mut summary = IngestSummary::default();
    let mut records: BTreeMap<String, RawRecord> = BTreeMap::new();
    for path in &record_paths {
        let raw = parse_record(path, &var_index, &manifest.static_descriptors, grid_hours, n_steps)?;
        summary.records_seen += 1;
        summary.rows_skipped += raw.rows_skipped;
        if raw.cells.is_empty() {
            summary.records_empty += 1;
            continue;
        }
        if !outcomes.contains_key(&raw.id) {
            warn!("record {} has no outcomes entry; dropped", raw.id);
            summary.records_without_outcome += 1;
            continue;
        }
        records.insert(raw.id.clone(), raw);
    }

    let timestamps: Vec<f64> = (0..n_steps).map(|t| (t * grid_hours) as f64).collect();
    let mut samples = Vec::with_capacity(records.len());
    let mut observed_cells = 0usize;
    for (id, raw) in records {
        let mut values = Matrix::zeros((n_steps, d));
        let mut mask = Array2::zeros((n_steps, d));
        for (&(j, bucket), &(sum, count)) in &raw.cells {
            values[(bucket, j)] = sum / count as f64;
            mask[(bucket, j)] = 1.0;
            observed_cells += 1;
        }
        let label = outcomes[&id];
        if label {
            summary.n_positive += 1;
        } else {
            summary.n_negative += 1;
        }
        samples.push(TimeSeriesSample::new(values, mask, timestamps.clone(), label)?);
    }

    let total_cells = samples.len() * n_steps * d;
    summary.missing_rate = if total_cells == 0 {
        0.0
    } else {
        1.0 - observed_cells as f64 / total_cells as f64
    };
    Ok(PhysionetLoad {
        dataset: Dataset::new(manifest.variables, samples),
        summary,
    })
}

fn collect_files(
    dir: &Path,
    outcomes: &mut Vec<std::path::PathBuf>,
    records: &mut Vec<std::path::PathBuf>,
) -> Result<()> {
    for entry in std::fs::read_dir(dir)? {
        let entry = entry?;
        let path = entry.path();
        if path.is_dir() {
            collect_files(&path, outcomes, records)?;
            continue;
        }
        let name = entry.file_name().to_string_lossy().into_owned();
        if name.starts_with("Outcomes") && name.ends_with(".txt") {
            outcomes.push(path);
        } else if name.ends_with(".txt") {
            records.push(path);
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::fs;

    fn write_fixture(dir: &Path) {
        fs::create_dir_all(dir.join("set-a")).unwrap();
        fs::write(
            dir.join("set-a/132539.txt"),
            "Time,Parameter,Value\n\
             00:00,RecordID,132539\n\
             00:00,Age,54\n\
             00:07,HR,73\n\
             00:37,HR,77\n\
             01:10,GCS,15\n\
             01:30,MechVent,1\n\
             49:00,HR,99\n\
             bad row without commas\n\
             02:00,HR,notanumber\n",
        )
        .unwrap();
        fs::write(
            dir.join("set-a/132540.txt"),
            "Time,Parameter,Value\n\
             00:00,RecordID,132540\n\
             00:15,Temp,36.5\n\
             12:45,Temp,37.5\n\
             47:59,HR,81\n",
        )
        .unwrap();
        // record with only static rows -> dropped as empty
        fs::write(
            dir.join("set-a/132541.txt"),
            "Time,Parameter,Value\n00:00,RecordID,132541\n00:00,Gender,1\n",
        )
        .unwrap();
        // record missing from outcomes -> dropped with warning
        fs::write(
            dir.join("set-a/132542.txt"),
            "Time,Parameter,Value\n00:00,RecordID,132542\n01:00,HR,60\n",
        )
        .unwrap();
        fs::write(
            dir.join("Outcomes-a.txt"),
            "RecordID,SAPS-I,SOFA,Length_of_stay,Survival,In-hospital_death\n\
             132539,6,1,5,-1,1\n\
             132540,16,8,8,-1,0\n\
             132541,10,2,3,-1,0\n",
        )
        .unwrap();
    }

    #[test]
    fn loads_grids_and_joins_outcomes() {
        let dir = tempfile::tempdir().unwrap();
        write_fixture(dir.path());
        let load = load_physionet(dir.path(), 1).unwrap();
        let ds = &load.dataset;
        assert_eq!(ds.variables.len(), 35);
        assert_eq!(ds.samples.len(), 2);
        assert_eq!(load.summary.records_seen, 4);
        assert_eq!(load.summary.records_empty, 1);
        assert_eq!(load.summary.records_without_outcome, 1);
        assert_eq!(load.summary.rows_skipped, 2);
        assert_eq!(load.summary.n_positive, 1);
        assert_eq!(load.summary.n_negative, 1);

        let hr = ds.variables.iter().position(|v| v == "HR").unwrap();
        let gcs = ds.variables.iter().position(|v| v == "GCS").unwrap();
        let s0 = &ds.samples[0]; // 132539 sorts first
        assert_eq!(s0.n_steps(), 48);
        // two HR readings inside hour 0 are mean-aggregated
        assert_eq!(s0.x_tilde[(0, hr)], 75.0);
        assert_eq!(s0.mask[(0, hr)], 1.0);
        assert_eq!(s0.x_tilde[(1, gcs)], 15.0);
        // the 49:00 reading is outside the 48 h window
        assert_eq!(s0.mask.column(hr).sum(), 1.0);
        assert!(s0.label);

        let temp = ds.variables.iter().position(|v| v == "Temp").unwrap();
        let s1 = &ds.samples[1];
        assert_eq!(s1.x_tilde[(0, temp)], 36.5);
        assert_eq!(s1.x_tilde[(12, temp)], 37.5);
        assert_eq!(s1.mask[(47, hr)], 1.0);
        assert!(!s1.label);
    }

    #[test]
    fn two_hour_grid_halves_the_steps() {
        let dir = tempfile::tempdir().unwrap();
        write_fixture(dir.path());
        let load = load_physionet(dir.path(), 2).unwrap();
        let s = &load.dataset.samples[0];
        assert_eq!(s.n_steps(), 24);
        assert_eq!(s.timestamps[1] - s.timestamps[0], 2.0);
    }

    #[test]
    fn listing_order_does_not_matter() {
        let dir_a = tempfile::tempdir().unwrap();
        write_fixture(dir_a.path());
        let first = load_physionet(dir_a.path(), 1).unwrap();
        let second = load_physionet(dir_a.path(), 1).unwrap();
        assert_eq!(first.dataset.samples, second.dataset.samples);
        assert_eq!(first.summary, second.summary);
    }

    #[test]
    fn manifest_is_pinned_to_35_variables() {
        let m = manifest();
        assert_eq!(m.version, 1);
        assert_eq!(m.variables.len(), 35);
        assert!(!m.variables.contains(&"MechVent".to_string()));
        assert!(!m.variables.contains(&"Weight".to_string()));
    }
}
