//! Versioned checkpoint files: every parameter tensor keyed by its
//! module-qualified name, plus the configuration snapshot. JSON; layout
//! documented in `docs/FORMAT.md`.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Result, UgssError};
use crate::graph::Matrix;
use crate::training::config::ExperimentConfig;
use crate::training::model::Model;

const FORMAT: &str = "ugss-checkpoint";
const VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct TensorRecord {
    name: String,
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct CheckpointFile {
    format: String,
    version: u32,
    n_variables: usize,
    config: ExperimentConfig,
    params: Vec<TensorRecord>,
}

/// Write a model checkpoint.
pub fn save_checkpoint(model: &Model, path: &Path) -> Result<()> {
    let params = model
        .store
        .iter()
        .map(|(name, value)| TensorRecord {
            name: name.to_string(),
            rows: value.nrows(),
            cols: value.ncols(),
            data: value.iter().copied().collect(),
        })
        .collect();
    let file = CheckpointFile {
        format: FORMAT.to_string(),
        version: VERSION,
        n_variables: model.n_variables,
        config: model.config.clone(),
        params,
    };
    serde_json::to_writer(std::io::BufWriter::new(std::fs::File::create(path)?), &file)?;
    Ok(())
}

/// Rebuild a model from a checkpoint; every stored tensor must match a
/// parameter of the reconstructed architecture exactly.
pub fn load_checkpoint(path: &Path) -> Result<Model> {
    let display = path.display().to_string();
    let file: CheckpointFile =
        serde_json::from_reader(std::io::BufReader::new(std::fs::File::open(path)?))?;
    if file.format != FORMAT {
        return Err(UgssError::format(&display, format!("unexpected format `{}`", file.format)));
    }
    if file.version != VERSION {
        return Err(UgssError::format(&display, format!("unsupported version {}", file.version)));
    }
    let mut model = Model::init(&file.config, file.n_variables)?;
    if file.params.len() != model.store.len() {
        return Err(UgssError::format(
            &display,
            format!(
                "checkpoint has {} tensors, architecture expects {}",
                file.params.len(),
                model.store.len()
            ),
        ));
    }
    for rec in file.params {
        let id = model.store.lookup(&rec.name).ok_or_else(|| {
            UgssError::format(&display, format!("unknown parameter `{}`", rec.name))
        })?;
        if rec.data.len() != rec.rows * rec.cols {
            return Err(UgssError::format(&display, format!("tensor `{}` is ragged", rec.name)));
        }
        let value = Matrix::from_shape_vec((rec.rows, rec.cols), rec.data)
            .map_err(|e| UgssError::format(&display, e.to_string()))?;
        if value.dim() != model.store.value(id).dim() {
            return Err(UgssError::format(
                &display,
                format!("tensor `{}` has shape {:?}, expected {:?}", rec.name, value.dim(), model.store.value(id).dim()),
            ));
        }
        *model.store.value_mut(id) = value;
    }
    Ok(model)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn roundtrip_preserves_every_tensor() {
        let config = ExperimentConfig {
            latent_dim: 2,
            feature_width: 3,
            hidden_dim: 4,
            encoder_widths: [3, 2],
            ..ExperimentConfig::default()
        };
        let model = Model::init(&config, 5).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ckpt.json");
        save_checkpoint(&model, &path).unwrap();
        let back = load_checkpoint(&path).unwrap();
        assert_eq!(back.n_variables, 5);
        assert_eq!(back.config, model.config);
        for (a, b) in model.store.iter().zip(back.store.iter()) {
            assert_eq!(a.0, b.0);
            assert_eq!(a.1, b.1, "tensor {} must round-trip bit-exactly", a.0);
        }
    }

    #[test]
    fn corrupt_checkpoints_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.json");
        std::fs::write(&path, r#"{"format": "other", "version": 1}"#).unwrap();
        assert!(load_checkpoint(&path).is_err());
    }
}
