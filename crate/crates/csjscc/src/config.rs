//! The experiment configuration document (TOML).

use std::fs;
use std::path::{Path, PathBuf};

use csjscc_core::model::c_last_for_ratio;
use csjscc_core::train::LrSchedule;
use csjscc_core::ArchitectureConfig;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::data::DatasetSpec;
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub architecture: ArchitectureSection,
    pub channel: ChannelSection,
    pub training: TrainingSection,
    pub data: DatasetSpec,
    pub eval: EvalSection,
    pub sweep: SweepSection,
    pub output: OutputSection,
}

/// Architecture fields; exactly one of `c_last` and `target_ratio` is set.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ArchitectureSection {
    #[serde(default = "d::block_size")]
    pub block_size: usize,
    #[serde(default = "d::channels")]
    pub channels: usize,
    #[serde(default = "d::measurements")]
    pub measurements: usize,
    #[serde(default = "d::encoder_widths")]
    pub encoder_widths: Vec<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub c_last: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub target_ratio: Option<f64>,
    #[serde(default = "d::recon_layers")]
    pub recon_layers: usize,
    #[serde(default = "d::recon_width")]
    pub recon_width: usize,
    #[serde(default = "d::recon_kernel")]
    pub recon_kernel: usize,
    #[serde(default = "d::power")]
    pub power: f64,
}

/// Field defaults, taken from [`ArchitectureConfig::default`].
mod d {
    use csjscc_core::ArchitectureConfig;

    fn base() -> ArchitectureConfig {
        ArchitectureConfig::default()
    }
    pub fn block_size() -> usize {
        base().block_size
    }
    pub fn channels() -> usize {
        base().channels
    }
    pub fn measurements() -> usize {
        base().measurements
    }
    pub fn encoder_widths() -> Vec<usize> {
        base().encoder_widths
    }
    pub fn recon_layers() -> usize {
        base().recon_layers
    }
    pub fn recon_width() -> usize {
        base().recon_width
    }
    pub fn recon_kernel() -> usize {
        base().recon_kernel
    }
    pub fn power() -> f64 {
        base().power
    }
}

impl Default for ArchitectureSection {
    fn default() -> Self {
        let a = ArchitectureConfig::default();
        ArchitectureSection {
            block_size: a.block_size,
            channels: a.channels,
            measurements: a.measurements,
            encoder_widths: a.encoder_widths,
            c_last: Some(a.c_last),
            target_ratio: None,
            recon_layers: a.recon_layers,
            recon_width: a.recon_width,
            recon_kernel: a.recon_kernel,
            power: a.power,
        }
    }
}

impl ArchitectureSection {
    /// The concrete architecture, deriving `c_last` from `target_ratio` when needed.
    pub fn resolve(&self) -> Result<ArchitectureConfig> {
        let c_last = match (self.c_last, self.target_ratio) {
            (Some(_), Some(_)) => {
                return Err(Error::Config(
                    "architecture: set either c_last or target_ratio, not both".into(),
                ))
            }
            (Some(c), None) => c,
            (None, Some(r)) => self.c_last_for(r)?,
            (None, None) => ArchitectureConfig::default().c_last,
        };
        self.with_c_last(c_last)
    }

    /// `c_last` for compression ratio `ratio`, rejecting ratios too small to
    /// carry a single complex symbol per block.
    pub fn c_last_for(&self, ratio: f64) -> Result<usize> {
        if !(ratio > 0.0 && ratio.is_finite()) {
            return Err(Error::Config(format!(
                "target ratio {ratio} must be positive"
            )));
        }
        let c = c_last_for_ratio(ratio, self.block_size, self.channels);
        if c < 2 {
            return Err(Error::Config(format!(
                "target ratio {ratio} gives c_last {c} for B={} l={}; at least 2 is needed",
                self.block_size, self.channels
            )));
        }
        Ok(c)
    }

    pub fn with_c_last(&self, c_last: usize) -> Result<ArchitectureConfig> {
        let cfg = ArchitectureConfig {
            block_size: self.block_size,
            channels: self.channels,
            measurements: self.measurements,
            encoder_widths: self.encoder_widths.clone(),
            c_last,
            recon_layers: self.recon_layers,
            recon_width: self.recon_width,
            recon_kernel: self.recon_kernel,
            power: self.power,
        };
        cfg.validate()
            .map_err(|e| Error::Config(format!("architecture: {e}")))?;
        Ok(cfg)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ChannelSection {
    pub snr_train_db: f64,
    pub snr_test_db: Vec<f64>,
}

impl Default for ChannelSection {
    fn default() -> Self {
        ChannelSection {
            snr_train_db: 10.0,
            snr_test_db: vec![1.0, 4.0, 7.0, 10.0, 13.0, 16.0, 19.0],
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainingSection {
    pub batch_size: usize,
    pub max_steps: u64,
    pub lr_initial: f64,
    pub lr_drop_step: u64,
    pub lr_after_drop: f64,
    /// Steps between validation passes; 0 disables validation and early stopping.
    pub eval_every: u64,
    /// Validation passes without improvement before stopping.
    pub patience: usize,
    /// Steps between checkpoint writes; 0 writes only the final checkpoint.
    pub checkpoint_every: u64,
    /// Validation images used per pass (the first ones of the split).
    pub validation_images: usize,
}

impl Default for TrainingSection {
    fn default() -> Self {
        TrainingSection {
            batch_size: 64,
            max_steps: 20_000,
            lr_initial: 1e-3,
            lr_drop_step: 10_000,
            lr_after_drop: 1e-4,
            eval_every: 500,
            patience: 10,
            checkpoint_every: 1000,
            validation_images: 64,
        }
    }
}

impl TrainingSection {
    pub fn schedule(&self) -> LrSchedule {
        LrSchedule {
            initial: self.lr_initial,
            drop_step: self.lr_drop_step,
            after: self.lr_after_drop,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalSection {
    pub repeats: usize,
    /// Evaluation images (the first ones of the test set); 0 means all.
    pub max_images: usize,
}

impl Default for EvalSection {
    fn default() -> Self {
        EvalSection {
            repeats: 10,
            max_images: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepSection {
    pub ratios: Vec<f64>,
}

impl Default for SweepSection {
    fn default() -> Self {
        SweepSection {
            ratios: vec![0.05, 1.0 / 12.0, 1.0 / 6.0, 0.25, 1.0 / 3.0, 0.45],
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputSection {
    pub dir: PathBuf,
}

impl Default for OutputSection {
    fn default() -> Self {
        OutputSection { dir: "runs".into() }
    }
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            seed: 1,
            architecture: ArchitectureSection::default(),
            channel: ChannelSection::default(),
            training: TrainingSection::default(),
            data: DatasetSpec::default(),
            eval: EvalSection::default(),
            sweep: SweepSection::default(),
            output: OutputSection::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        if !path.exists() {
            return Err(Error::MissingPath {
                what: "config file",
                path: path.to_owned(),
            });
        }
        let text = fs::read_to_string(path).map_err(Error::io(path))?;
        Self::from_toml(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// Checks that do not touch the filesystem.
    pub fn validate(&self) -> Result<()> {
        self.architecture.resolve()?;
        let t = &self.training;
        if t.batch_size == 0 {
            return Err(Error::Config("training.batch_size must be >= 1".into()));
        }
        if !(t.lr_initial > 0.0 && t.lr_after_drop > 0.0) {
            return Err(Error::Config("learning rates must be positive".into()));
        }
        if self.eval.repeats == 0 {
            return Err(Error::Config("eval.repeats must be >= 1".into()));
        }
        if self.channel.snr_train_db.is_nan() || self.channel.snr_test_db.iter().any(|s| s.is_nan())
        {
            return Err(Error::Config("SNR values must be numbers".into()));
        }
        Ok(())
    }

    /// First 16 hex digits of the SHA-256 of the canonical TOML form.
    pub fn hash(&self) -> String {
        let digest = Sha256::digest(self.to_toml().as_bytes());
        digest[..8].iter().map(|b| format!("{b:02x}")).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip_through_toml() {
        let cfg = ExperimentConfig::default();
        let back = ExperimentConfig::from_toml(&cfg.to_toml()).unwrap();
        assert_eq!(back, cfg);
        assert_eq!(
            cfg.architecture.resolve().unwrap(),
            ArchitectureConfig::default()
        );
    }

    #[test]
    fn ratio_or_c_last() {
        let cfg =
            ExperimentConfig::from_toml("[architecture]\ntarget_ratio = 0.1666666666666667\n")
                .unwrap();
        assert_eq!(cfg.architecture.resolve().unwrap().c_last, 64);
        let both = ExperimentConfig::from_toml("[architecture]\nc_last = 8\ntarget_ratio = 0.2\n")
            .unwrap();
        assert!(both.architecture.resolve().unwrap_err().is_config());
        let tiny = ExperimentConfig::from_toml("[architecture]\ntarget_ratio = 0.001\n").unwrap();
        assert!(tiny.architecture.resolve().unwrap_err().is_config());
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(ExperimentConfig::from_toml("[training]\nbatchsize = 3\n").is_err());
    }

    #[test]
    fn hash_tracks_content() {
        let a = ExperimentConfig::default();
        let mut b = a.clone();
        assert_eq!(a.hash(), b.hash());
        b.seed += 1;
        assert_ne!(a.hash(), b.hash());
        assert_eq!(a.hash().len(), 16);
    }
}
