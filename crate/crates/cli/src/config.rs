//! TOML configuration for the codec tools.
//!
//! Every table rejects unknown keys so a typo'd `frontend.hopp = 128` fails
//! loudly instead of silently running with the default. Missing keys fall
//! back to the built-in defaults, so an empty file is a valid config.

use std::fs;
use std::path::Path;

use melpatch_core::autoencoder::TrainConfig;
use melpatch_core::frontend::FrontendConfig;
use melpatch_core::patch::PatchGridSpec;
use serde::{Deserialize, Serialize};

use crate::error::{CliError, Result};

#[derive(Debug, Clone, PartialEq, Deserialize, Serialize)]
#[serde(deny_unknown_fields, default)]
pub struct CliConfig {
    pub seed: u64,
    pub frontend: FrontendSection,
    pub grid: GridSection,
    pub quantizer: QuantizerSection,
    pub train: TrainSection,
    pub decode: DecodeSection,
}

impl Default for CliConfig {
    fn default() -> Self {
        CliConfig {
            seed: 0,
            frontend: FrontendSection::default(),
            grid: GridSection::default(),
            quantizer: QuantizerSection::default(),
            train: TrainSection::default(),
            decode: DecodeSection::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize, Serialize)]
#[serde(deny_unknown_fields, default)]
pub struct FrontendSection {
    pub sample_rate: u32,
    pub n_fft: usize,
    pub hop: usize,
    pub win_length: usize,
    pub n_mels: usize,
    pub fmin: f64,
    /// 0 means the Nyquist frequency.
    pub fmax: f64,
    pub log_floor: f64,
}

impl Default for FrontendSection {
    fn default() -> Self {
        let c = FrontendConfig::default();
        FrontendSection {
            sample_rate: c.sample_rate,
            n_fft: c.n_fft,
            hop: c.hop,
            win_length: c.win_length,
            n_mels: c.n_mels,
            fmin: c.fmin,
            fmax: c.fmax,
            log_floor: c.log_floor,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize, Serialize)]
#[serde(deny_unknown_fields, default)]
pub struct GridSection {
    pub patch_t: usize,
    pub patch_f: usize,
}

impl Default for GridSection {
    fn default() -> Self {
        GridSection { patch_t: 4, patch_f: 4 }
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize, Serialize)]
#[serde(deny_unknown_fields, default)]
pub struct QuantizerSection {
    pub k: usize,
    pub latent_dim: usize,
    /// Skip the projection MLP and quantize raw patches directly.
    pub identity_mode: bool,
    pub hidden_dim: usize,
    pub kmeans_iters: usize,
}

impl Default for QuantizerSection {
    fn default() -> Self {
        QuantizerSection {
            k: 4096,
            latent_dim: 16,
            identity_mode: false,
            hidden_dim: 64,
            kmeans_iters: 20,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize, Serialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainSection {
    pub lr_peak: f64,
    pub warmup_steps: u64,
    pub total_steps: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub weight_decay: f64,
    pub commitment_beta: f64,
    pub batch_size: usize,
    pub adam_eps: f64,
}

impl Default for TrainSection {
    fn default() -> Self {
        let c = TrainConfig::default();
        TrainSection {
            lr_peak: c.lr_peak,
            warmup_steps: c.warmup_steps,
            total_steps: c.total_steps,
            beta1: c.beta1,
            beta2: c.beta2,
            weight_decay: c.weight_decay,
            commitment_beta: c.commitment_beta,
            batch_size: c.batch_size,
            adam_eps: c.adam_eps,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize, Serialize)]
#[serde(deny_unknown_fields, default)]
pub struct DecodeSection {
    pub griffin_lim_iters: usize,
}

impl Default for DecodeSection {
    fn default() -> Self {
        DecodeSection { griffin_lim_iters: 32 }
    }
}

impl CliConfig {
    /// Load from a TOML file, or return the defaults when `path` is `None`.
    pub fn load(path: Option<&Path>) -> Result<Self> {
        let cfg = match path {
            None => CliConfig::default(),
            Some(p) => {
                let text = fs::read_to_string(p).map_err(|e| {
                    CliError::Usage(format!("cannot read config {}: {}", p.display(), e))
                })?;
                toml::from_str(&text).map_err(|e| {
                    CliError::Usage(format!("config {}: {}", p.display(), e))
                })?
            }
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.frontend_config().validate()?;
        let spec = self.grid_spec();
        spec.validate()?;
        if self.frontend.n_mels % self.grid.patch_f != 0 {
            return Err(CliError::Usage(format!(
                "n_mels {} is not divisible by patch_f {}",
                self.frontend.n_mels, self.grid.patch_f
            )));
        }
        let q = &self.quantizer;
        if q.k == 0 || q.k > u32::MAX as usize {
            return Err(CliError::Usage(format!("quantizer.k {} out of range", q.k)));
        }
        if q.latent_dim == 0 || q.hidden_dim == 0 || q.kmeans_iters == 0 {
            return Err(CliError::Usage(
                "latent_dim, hidden_dim, and kmeans_iters must be positive".into(),
            ));
        }
        if q.identity_mode && q.latent_dim != spec.dim() {
            return Err(CliError::Usage(format!(
                "identity_mode requires latent_dim == patch_t * patch_f ({}), got {}",
                spec.dim(),
                q.latent_dim
            )));
        }
        self.train_config().validate()?;
        Ok(())
    }

    pub fn frontend_config(&self) -> FrontendConfig {
        FrontendConfig {
            sample_rate: self.frontend.sample_rate,
            n_fft: self.frontend.n_fft,
            hop: self.frontend.hop,
            win_length: self.frontend.win_length,
            n_mels: self.frontend.n_mels,
            fmin: self.frontend.fmin,
            fmax: self.frontend.fmax,
            log_floor: self.frontend.log_floor,
        }
    }

    pub fn grid_spec(&self) -> PatchGridSpec {
        PatchGridSpec {
            patch_t: self.grid.patch_t,
            patch_f: self.grid.patch_f,
            pad_value: self.frontend.log_floor.ln(),
        }
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            lr_peak: self.train.lr_peak,
            warmup_steps: self.train.warmup_steps,
            total_steps: self.train.total_steps,
            beta1: self.train.beta1,
            beta2: self.train.beta2,
            weight_decay: self.train.weight_decay,
            commitment_beta: self.train.commitment_beta,
            batch_size: self.train.batch_size,
            adam_eps: self.train.adam_eps,
            seed: self.seed,
        }
    }
}
