//! Loader for pre-gridded matrix directories (the MIMIC-style interchange
//! layout documented in `docs/FORMAT.md`): one CSV per record with a fixed
//! column set, empty cells meaning missing, plus `variables.json` and
//! `labels.csv`.

use std::collections::BTreeMap;
use std::path::Path;

use ndarray::Array2;
use serde::Deserialize;

use crate::data_model::{Dataset, TimeSeriesSample};
use crate::error::{Result, UgssError};
use crate::graph::Matrix;

#[derive(Deserialize)]
struct GriddedMeta {
    variables: Vec<String>,
    grid_hours: f64,
}

/// Load a gridded directory. Every record must have the same column count
/// as `variables.json`; a shape mismatch is a hard error naming the file.
pub fn load_gridded_matrix(dir: &Path) -> Result<Dataset> {
    let meta_path = dir.join("variables.json");
    let meta: GriddedMeta = serde_json::from_reader(
        std::fs::File::open(&meta_path)
            .map_err(|e| UgssError::format(meta_path.display().to_string(), e.to_string()))?,
    )?;
    if meta.variables.is_empty() || meta.grid_hours <= 0.0 {
        return Err(UgssError::format(
            meta_path.display().to_string(),
            "variables must be nonempty and grid_hours positive",
        ));
    }

    let labels_path = dir.join("labels.csv");
    let labels_text = std::fs::read_to_string(&labels_path)
        .map_err(|e| UgssError::format(labels_path.display().to_string(), e.to_string()))?;
    let mut labels = BTreeMap::new();
    for (i, line) in labels_text.lines().enumerate() {
        if i == 0 && line.to_ascii_lowercase().starts_with("record") {
            continue;
        }
        if line.trim().is_empty() {
            continue;
        }
        let (id, label) = line.split_once(',').ok_or_else(|| {
            UgssError::format(labels_path.display().to_string(), format!("bad line {}", i + 1))
        })?;
        labels.insert(id.trim().to_string(), label.trim() == "1");
    }

    let d = meta.variables.len();
    let mut n_steps: Option<usize> = None;
    let mut samples = Vec::new();
    for (id, label) in &labels {
        let path = dir.join(format!("{id}.csv"));
        let display = path.display().to_string();
        let text = std::fs::read_to_string(&path)
            .map_err(|e| UgssError::format(&display, e.to_string()))?;
        let mut rows: Vec<Vec<Option<f64>>> = Vec::new();
        for (ln, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let cells: Vec<&str> = line.split(',').collect();
            if cells.len() != d {
                return Err(UgssError::format(
                    &display,
                    format!("line {} has {} columns, expected {d}", ln + 1, cells.len()),
                ));
            }
            let row = cells
                .iter()
                .map(|c| {
                    let c = c.trim();
                    if c.is_empty() {
                        Ok(None)
                    } else {
                        c.parse::<f64>().map(Some).map_err(|e| {
                            UgssError::format(&display, format!("line {}: {e}", ln + 1))
                        })
                    }
                })
                .collect::<Result<Vec<_>>>()?;
            rows.push(row);
        }
        let t = rows.len();
        match n_steps {
            None => n_steps = Some(t),
            Some(expect) if expect != t => {
                return Err(UgssError::format(
                    &display,
                    format!("record has {t} steps, expected {expect}"),
                ));
            }
            _ => {}
        }
        let mut values = Matrix::zeros((t, d));
        let mut mask = Array2::zeros((t, d));
        for (i, row) in rows.iter().enumerate() {
            for (j, cell) in row.iter().enumerate() {
                if let Some(v) = cell {
                    values[(i, j)] = *v;
                    mask[(i, j)] = 1.0;
                }
            }
        }
        let timestamps: Vec<f64> = (0..t).map(|i| i as f64 * meta.grid_hours).collect();
        samples.push(TimeSeriesSample::new(values, mask, timestamps, *label)?);
    }
    if samples.is_empty() {
        return Err(UgssError::validation(format!("no records listed in {}", labels_path.display())));
    }
    Ok(Dataset::new(meta.variables, samples))
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::fs;

    fn write_fixture(dir: &Path) {
        fs::write(
            dir.join("variables.json"),
            r#"{"variables": ["hr", "map"], "grid_hours": 2.0}"#,
        )
        .unwrap();
        fs::write(dir.join("labels.csv"), "record_id,label\np1,1\np2,0\n").unwrap();
        fs::write(dir.join("p1.csv"), "81,\n,65\n83,70\n").unwrap();
        fs::write(dir.join("p2.csv"), "60,50\n61,\n,\n").unwrap();
    }

    #[test]
    fn loads_records_with_missing_cells() {
        let dir = tempfile::tempdir().unwrap();
        write_fixture(dir.path());
        let ds = load_gridded_matrix(dir.path()).unwrap();
        assert_eq!(ds.variables, vec!["hr".to_string(), "map".to_string()]);
        assert_eq!(ds.samples.len(), 2);
        let p1 = &ds.samples[0];
        assert_eq!(p1.timestamps, vec![0.0, 2.0, 4.0]);
        assert_eq!(p1.x_tilde[(0, 0)], 81.0);
        assert_eq!(p1.mask[(0, 1)], 0.0);
        assert!(p1.label);
        assert!(!ds.samples[1].label);
    }

    #[test]
    fn shape_mismatch_names_the_file() {
        let dir = tempfile::tempdir().unwrap();
        write_fixture(dir.path());
        fs::write(dir.path().join("p2.csv"), "60,50,99\n").unwrap();
        let err = load_gridded_matrix(dir.path()).unwrap_err();
        assert!(err.to_string().contains("p2.csv"), "{err}");
    }

    #[test]
    fn inconsistent_step_counts_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        write_fixture(dir.path());
        fs::write(dir.path().join("p2.csv"), "60,50\n").unwrap();
        let err = load_gridded_matrix(dir.path()).unwrap_err();
        assert!(err.to_string().contains("steps"), "{err}");
    }
}
