//! Run configuration: one JSON document with `data`, `arch`, `ssl`,
//! `probe`, and `analysis` sections plus a required global `seed`. Unknown
//! keys are rejected everywhere; every field except `seed` has a documented
//! default (see `configs/default.json`).

use std::collections::BTreeMap;
use std::path::Path;

use crate::data::augment::AugmentPolicy;
use crate::data::SyntheticConfig;
use crate::encoder::{EncoderArch, LrSchedule};
use crate::error::{Error, Result};
use crate::probe::ProbeConfig;

#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    /// Master seed; every stage derives its own stream from it.
    pub seed: u64,
    #[serde(default)]
    pub data: DataSection,
    #[serde(default)]
    pub arch: ArchSection,
    #[serde(default)]
    pub ssl: SslSection,
    #[serde(default)]
    pub probe: ProbeConfig,
    #[serde(default)]
    pub analysis: AnalysisSection,
}

/// Generator settings plus per-split sample counts.
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataSection {
    pub class_names: Vec<String>,
    pub n_per_class: usize,
    pub n_val_per_class: usize,
    pub n_test_per_class: usize,
    pub image_size: usize,
    pub concentration_levels: BTreeMap<String, Vec<f64>>,
    pub template_jitter: f64,
}

impl Default for DataSection {
    fn default() -> Self {
        let synth = SyntheticConfig::default();
        DataSection {
            class_names: synth.class_names,
            n_per_class: 80,
            n_val_per_class: 12,
            n_test_per_class: 24,
            image_size: synth.image_size,
            concentration_levels: synth.concentration_levels,
            template_jitter: synth.template_jitter,
        }
    }
}

impl DataSection {
    /// Generator config for one split.
    pub fn synthetic(&self, n_per_class: usize) -> SyntheticConfig {
        SyntheticConfig {
            class_names: self.class_names.clone(),
            n_per_class,
            image_size: self.image_size,
            concentration_levels: self.concentration_levels.clone(),
            template_jitter: self.template_jitter,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.synthetic(self.n_per_class).validate()?;
        if self.n_val_per_class == 0 || self.n_test_per_class == 0 {
            return Err(Error::invalid_config(
                "n_val_per_class/n_test_per_class",
                "must be at least 1",
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ArchSection {
    pub hidden_dims: Vec<usize>,
    pub rep_dim: usize,
    pub proj_hidden: usize,
    pub proj_dim: usize,
}

impl Default for ArchSection {
    fn default() -> Self {
        let arch = EncoderArch::default();
        ArchSection {
            hidden_dims: arch.hidden_dims,
            rep_dim: arch.rep_dim,
            proj_hidden: arch.proj_hidden,
            proj_dim: arch.proj_dim,
        }
    }
}

impl ArchSection {
    /// Concrete architecture for a given image side length.
    pub fn arch_for(&self, image_size: usize) -> EncoderArch {
        EncoderArch {
            input_dim: image_size * image_size,
            hidden_dims: self.hidden_dims.clone(),
            rep_dim: self.rep_dim,
            proj_hidden: self.proj_hidden,
            proj_dim: self.proj_dim,
        }
    }
}

#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SslSection {
    pub temperature: f64,
    /// Sample pairs per optimizer step.
    pub batch_size: usize,
    pub epochs: usize,
    pub base_lr: f64,
    pub reference_batch: usize,
    pub warmup_steps: u64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub augment: AugmentPolicy,
}

impl Default for SslSection {
    fn default() -> Self {
        // Desk-scale settings calibrated on the shipped generator; sharper
        // temperatures and larger steps collapse the small encoder.
        SslSection {
            temperature: 0.5,
            batch_size: 60,
            epochs: 200,
            base_lr: 0.05,
            reference_batch: 256,
            warmup_steps: 10,
            momentum: 0.9,
            weight_decay: 1e-6,
            augment: AugmentPolicy::default(),
        }
    }
}

impl SslSection {
    /// Schedule spanning `total_steps` optimizer steps.
    pub fn schedule(&self, total_steps: u64) -> LrSchedule {
        LrSchedule {
            base_lr: self.base_lr,
            reference_batch: self.reference_batch,
            batch_size: self.batch_size,
            warmup_steps: self.warmup_steps,
            total_steps: total_steps.max(self.warmup_steps + 1),
        }
    }
}

#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AnalysisSection {
    /// Samples whose best center similarity falls below this are novel.
    pub novel_threshold: f64,
    pub healthy_label: String,
    /// Stratified label fractions for the efficiency sweep.
    pub label_fractions: Vec<f64>,
}

impl Default for AnalysisSection {
    fn default() -> Self {
        AnalysisSection {
            novel_threshold: 0.7,
            healthy_label: "Normal".into(),
            label_fractions: vec![0.1, 1.0],
        }
    }
}

impl RunConfig {
    pub fn from_str(text: &str) -> Result<RunConfig> {
        let cfg: RunConfig = serde_json::from_str(text)
            .map_err(|e| Error::invalid_config("config", e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_path(path: &Path) -> Result<RunConfig> {
        Self::from_str(&std::fs::read_to_string(path)?)
    }

    pub fn validate(&self) -> Result<()> {
        self.data.validate()?;
        self.arch.arch_for(self.data.image_size).validate()?;
        if !(self.ssl.temperature.is_finite() && self.ssl.temperature > 0.0) {
            return Err(Error::invalid_config("ssl.temperature", "must be > 0"));
        }
        if self.ssl.batch_size == 0 {
            return Err(Error::invalid_config("ssl.batch_size", "must be >= 1"));
        }
        self.ssl.augment.validate()?;
        self.probe.validate()?;
        if !(self.analysis.novel_threshold > 0.0 && self.analysis.novel_threshold <= 1.0) {
            return Err(Error::invalid_config(
                "analysis.novel_threshold",
                "must be in (0, 1]",
            ));
        }
        if self.analysis.healthy_label.is_empty() {
            return Err(Error::invalid_config("analysis.healthy_label", "must be non-empty"));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_config_gets_defaults() {
        let cfg = RunConfig::from_str(r#"{"seed": 7}"#).unwrap();
        assert_eq!(cfg.seed, 7);
        assert_eq!(cfg.data.class_names.len(), 6);
        assert_eq!(cfg.arch.rep_dim, 64);
        assert_eq!(cfg.ssl.epochs, 200);
        assert_eq!(cfg.analysis.healthy_label, "Normal");
    }

    #[test]
    fn missing_seed_names_the_key() {
        let err = RunConfig::from_str(r#"{}"#).unwrap_err();
        assert!(err.to_string().contains("seed"), "{err}");
        assert_eq!(err.category().exit_code(), 2);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let err = RunConfig::from_str(r#"{"seed": 1, "extra": true}"#).unwrap_err();
        assert!(err.to_string().contains("extra"), "{err}");
        let err =
            RunConfig::from_str(r#"{"seed": 1, "ssl": {"unknown_field": 2}}"#).unwrap_err();
        assert!(err.to_string().contains("unknown_field"), "{err}");
    }

    #[test]
    fn section_validation_propagates() {
        let err = RunConfig::from_str(r#"{"seed": 1, "ssl": {"temperature": -0.5}}"#).unwrap_err();
        assert!(matches!(err, Error::InvalidConfig { .. }));
        let err = RunConfig::from_str(r#"{"seed": 1, "data": {"image_size": 4}}"#).unwrap_err();
        assert!(matches!(err, Error::InvalidConfig { .. }));
    }

    #[test]
    fn arch_input_dim_follows_image_size() {
        let cfg = RunConfig::from_str(r#"{"seed": 1, "data": {"image_size": 16}}"#).unwrap();
        assert_eq!(cfg.arch.arch_for(cfg.data.image_size).input_dim, 256);
    }
}
