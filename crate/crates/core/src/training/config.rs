//! Experiment configuration: every hyperparameter, masking scenario, fold
//! layout and seed. JSON round-trips with unknown keys rejected.

use serde::{Deserialize, Serialize};

use crate::error::{Result, UgssError};
use crate::imputation::WeightShape;
use crate::params::InitScheme;
use crate::vrnn_core::Normalization;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CellKind {
    GruU,
    VanillaGru,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WeightShapeCfg {
    Diagonal,
    Full,
}

impl From<WeightShapeCfg> for WeightShape {
    fn from(c: WeightShapeCfg) -> WeightShape {
        match c {
            WeightShapeCfg::Diagonal => WeightShape::Diagonal,
            WeightShapeCfg::Full => WeightShape::Full,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NormalizationCfg {
    Batch,
    Layer,
    None,
}

impl From<NormalizationCfg> for Normalization {
    fn from(c: NormalizationCfg) -> Normalization {
        match c {
            NormalizationCfg::Batch => Normalization::Batch,
            NormalizationCfg::Layer => Normalization::Layer,
            NormalizationCfg::None => Normalization::None,
        }
    }
}

/// How the attention weights enter the gate input: concatenated as their own
/// block (default), or multiplied elementwise into a learned projection of
/// the extracted features.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AlphaMode {
    Concat,
    Multiplicative,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitCfg {
    /// Uniform within plus/minus the inverse of the fan-in.
    InverseFanIn,
    /// Uniform within plus/minus the inverse square root of the fan-in.
    Scaled,
}

impl From<InitCfg> for InitScheme {
    fn from(c: InitCfg) -> InitScheme {
        match c {
            InitCfg::InverseFanIn => InitScheme::InverseFanIn,
            InitCfg::Scaled => InitScheme::ScaledUniform,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub latent_dim: usize,
    pub encoder_widths: [usize; 2],
    pub feature_width: usize,
    pub hidden_dim: usize,
    pub combine_channels: usize,
    pub cell: CellKind,
    pub w_alpha: WeightShapeCfg,
    pub w_gamma: WeightShapeCfg,
    pub alpha_mode: AlphaMode,
    pub normalization: NormalizationCfg,
    pub bidirectional: bool,
    pub lambda_vrnn: f64,
    pub lambda_cons: f64,
    pub lambda_imp: f64,
    pub focal_omega1: f64,
    pub focal_omega2: f64,
    pub learning_rate: f64,
    pub lr_decay: f64,
    pub lr_patience: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub masking_ratio: f64,
    pub folds: usize,
    pub validation_fraction: f64,
    pub seed: u64,
    pub mc_samples: usize,
    pub winsor_low: f64,
    pub winsor_high: f64,
    /// Divide each sample's held-out error sum by its held-out count before
    /// averaging (the default); `false` keeps the literal sum-per-sample form.
    pub imp_loss_per_sample_norm: bool,
    pub init: InitCfg,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            latent_dim: 16,
            encoder_widths: [32, 16],
            feature_width: 32,
            hidden_dim: 64,
            combine_channels: 2,
            cell: CellKind::GruU,
            w_alpha: WeightShapeCfg::Diagonal,
            w_gamma: WeightShapeCfg::Diagonal,
            alpha_mode: AlphaMode::Concat,
            normalization: NormalizationCfg::Batch,
            bidirectional: true,
            lambda_vrnn: 1e-5,
            lambda_cons: 1.0,
            lambda_imp: 1e-2,
            focal_omega1: 0.25,
            focal_omega2: 5.0,
            learning_rate: 1e-3,
            lr_decay: 0.5,
            lr_patience: 10,
            epochs: 80,
            batch_size: 64,
            masking_ratio: 0.10,
            folds: 5,
            validation_fraction: 0.2,
            seed: 42,
            mc_samples: 1,
            winsor_low: 1.0,
            winsor_high: 99.0,
            imp_loss_per_sample_norm: true,
            init: InitCfg::InverseFanIn,
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        if self.latent_dim == 0
            || self.feature_width == 0
            || self.hidden_dim == 0
            || self.combine_channels == 0
            || self.encoder_widths.iter().any(|&w| w == 0)
        {
            return Err(UgssError::validation("network widths must be positive"));
        }
        if self.lambda_vrnn < 0.0 || self.lambda_cons < 0.0 || self.lambda_imp < 0.0 {
            return Err(UgssError::validation("loss weights must be nonnegative"));
        }
        if !(0.0 < self.masking_ratio && self.masking_ratio < 1.0) {
            return Err(UgssError::validation("masking_ratio must lie in (0, 1)"));
        }
        if self.focal_omega1 < 0.0 || self.focal_omega1 > 1.0 {
            return Err(UgssError::validation("focal_omega1 must lie in [0, 1]"));
        }
        if self.focal_omega2 < 0.0 {
            return Err(UgssError::validation("focal_omega2 must be nonnegative"));
        }
        if self.learning_rate <= 0.0 || !(0.0 < self.lr_decay && self.lr_decay <= 1.0) {
            return Err(UgssError::validation("bad learning-rate schedule"));
        }
        if self.epochs == 0 || self.batch_size == 0 || self.mc_samples == 0 {
            return Err(UgssError::validation("epochs, batch_size, mc_samples must be positive"));
        }
        if self.folds == 0 {
            return Err(UgssError::validation("folds must be at least 1"));
        }
        if !(0.0 < self.validation_fraction && self.validation_fraction < 1.0) {
            return Err(UgssError::validation("validation_fraction must lie in (0, 1)"));
        }
        if self.winsor_low > self.winsor_high
            || self.winsor_low < 0.0
            || self.winsor_high > 100.0
        {
            return Err(UgssError::validation("winsor percentiles out of range"));
        }
        Ok(())
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate_and_roundtrip() {
        let cfg = ExperimentConfig::default();
        cfg.validate().unwrap();
        let text = serde_json::to_string(&cfg).unwrap();
        let back = ExperimentConfig::from_json(&text).unwrap();
        assert_eq!(cfg, back);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let err = ExperimentConfig::from_json(r#"{"latent_dim": 8, "not_a_field": 3}"#);
        assert!(err.is_err());
    }

    #[test]
    fn partial_configs_fill_defaults() {
        let cfg = ExperimentConfig::from_json(r#"{"hidden_dim": 32, "cell": "vanilla_gru"}"#)
            .unwrap();
        assert_eq!(cfg.hidden_dim, 32);
        assert_eq!(cfg.cell, CellKind::VanillaGru);
        assert_eq!(cfg.latent_dim, 16);
    }

    #[test]
    fn invalid_values_are_rejected() {
        let mut cfg = ExperimentConfig::default();
        cfg.masking_ratio = 1.5;
        assert!(cfg.validate().is_err());
        let mut cfg = ExperimentConfig::default();
        cfg.lambda_imp = -0.1;
        assert!(cfg.validate().is_err());
    }
}
