//! Run configuration: a flat `key=value` text format.
//!
//! Unknown keys are rejected so that typos fail loudly, and every command
//! writes the fully resolved configuration (all keys, all defaults filled
//! in) next to its outputs; re-running with that file reproduces the run.

use std::collections::BTreeSet;
use std::path::Path;

use thiserror::Error;

use crate::data::{NormalizationSpec, SynthConfig};
use crate::diffusion::ScheduleConfig;
use crate::metrics::VerifyConfig;
use crate::nn::AdamConfig;
use crate::predictor::PredictorConfig;
use crate::sr::latent::{AeConfig, EmbedderConfig, LsrConfig};
use crate::sr::spatial::SsrConfig;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("unknown config key '{0}'")]
    UnknownKey(String),
    #[error("line {line}: expected key=value, got '{text}'")]
    BadLine { line: usize, text: String },
    #[error("key '{key}': cannot parse '{value}': {reason}")]
    BadValue { key: String, value: String, reason: String },
    #[error("invalid configuration: {0}")]
    Invalid(String),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

/// Which second-stage model reconstructs high-resolution frames.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReconstructMode {
    Ssr,
    Lsr,
}

impl ReconstructMode {
    pub fn as_str(&self) -> &'static str {
        match self {
            Self::Ssr => "ssr",
            Self::Lsr => "lsr",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    // synthetic data
    pub synth_count: usize,
    pub synth_height: usize,
    pub synth_width: usize,
    pub synth_frames: usize,
    pub synth_cells_min: usize,
    pub synth_cells_max: usize,
    pub synth_cell_width_min: Option<f64>,
    pub synth_cell_width_max: Option<f64>,
    pub synth_peak_min: f64,
    pub synth_peak_max: f64,
    pub synth_speed_min: f64,
    pub synth_speed_max: f64,
    pub synth_growth_min: f64,
    pub synth_growth_max: f64,
    // data geometry
    pub data_dir: String,
    pub data_low_size: usize,
    pub data_high_size: usize,
    pub data_max_rate: f64,
    pub data_window_stride: usize,
    // shared diffusion schedule
    pub schedule: ScheduleConfig,
    // predictor
    pub predictor_base_channels: usize,
    pub predictor_channel_multipliers: Vec<usize>,
    pub predictor_attention: Vec<bool>,
    pub predictor_res_blocks: usize,
    pub predictor_embed_dim: usize,
    pub predictor_encoder_channels: usize,
    pub predictor_heads: usize,
    // ssr
    pub ssr_base_channels: usize,
    pub ssr_channel_multipliers: Vec<usize>,
    pub ssr_attention: Vec<bool>,
    pub ssr_res_blocks: usize,
    pub ssr_heads: usize,
    // autoencoder
    pub ae_base_channels: usize,
    pub ae_channel_multipliers: Vec<usize>,
    pub ae_res_blocks: usize,
    // latent diffusion
    pub lsr_base_channels: usize,
    pub lsr_channel_multipliers: Vec<usize>,
    pub lsr_attention: Vec<bool>,
    pub lsr_res_blocks: usize,
    pub lsr_heads: usize,
    pub embed_patch: usize,
    pub embed_dim: usize,
    pub embed_layers: usize,
    pub embed_heads: usize,
    // training
    pub train_steps: usize,
    pub train_batch: usize,
    pub train_lr: f64,
    pub train_seed: u64,
    pub train_ema: f64,
    pub train_clip: f64,
    // evaluation
    pub eval_members: usize,
    pub eval_csi_threshold: f64,
    pub eval_fss_threshold: Option<f64>,
    pub eval_fss_window: usize,
    // pipeline
    pub reconstruct_mode: ReconstructMode,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            synth_count: 16,
            synth_height: 256,
            synth_width: 256,
            synth_frames: 20,
            synth_cells_min: 3,
            synth_cells_max: 8,
            synth_cell_width_min: None,
            synth_cell_width_max: None,
            synth_peak_min: 1.0,
            synth_peak_max: 64.0,
            synth_speed_min: 1.0,
            synth_speed_max: 4.0,
            synth_growth_min: 0.96,
            synth_growth_max: 1.04,
            data_dir: "data".into(),
            data_low_size: 32,
            data_high_size: 256,
            data_max_rate: 128.0,
            data_window_stride: 20,
            schedule: ScheduleConfig::default(),
            predictor_base_channels: 32,
            predictor_channel_multipliers: vec![1, 2, 4],
            predictor_attention: vec![false, false, true],
            predictor_res_blocks: 2,
            predictor_embed_dim: 256,
            predictor_encoder_channels: 16,
            predictor_heads: 4,
            ssr_base_channels: 32,
            ssr_channel_multipliers: vec![1, 2, 4, 8],
            ssr_attention: vec![false, false, false, true],
            ssr_res_blocks: 2,
            ssr_heads: 4,
            ae_base_channels: 32,
            ae_channel_multipliers: vec![1, 2, 4],
            ae_res_blocks: 2,
            lsr_base_channels: 32,
            lsr_channel_multipliers: vec![1, 2, 4],
            lsr_attention: vec![false, false, true],
            lsr_res_blocks: 2,
            lsr_heads: 4,
            embed_patch: 8,
            embed_dim: 192,
            embed_layers: 4,
            embed_heads: 4,
            train_steps: 2000,
            train_batch: 4,
            train_lr: 2e-4,
            train_seed: 0,
            train_ema: 0.999,
            train_clip: 1.0,
            eval_members: 4,
            eval_csi_threshold: 0.06,
            eval_fss_threshold: None,
            eval_fss_window: 9,
            reconstruct_mode: ReconstructMode::Ssr,
        }
    }
}

macro_rules! parse_as {
    ($key:expr, $value:expr, $ty:ty) => {
        $value.parse::<$ty>().map_err(|e| ConfigError::BadValue {
            key: $key.to_string(),
            value: $value.to_string(),
            reason: e.to_string(),
        })?
    };
}

fn parse_usize_list(key: &str, value: &str) -> Result<Vec<usize>, ConfigError> {
    value
        .split(',')
        .map(|part| {
            part.trim().parse::<usize>().map_err(|e| ConfigError::BadValue {
                key: key.to_string(),
                value: value.to_string(),
                reason: e.to_string(),
            })
        })
        .collect()
}

fn parse_bool_list(key: &str, value: &str) -> Result<Vec<bool>, ConfigError> {
    value
        .split(',')
        .map(|part| match part.trim() {
            "0" | "false" => Ok(false),
            "1" | "true" => Ok(true),
            other => Err(ConfigError::BadValue {
                key: key.to_string(),
                value: value.to_string(),
                reason: format!("'{other}' is not a boolean"),
            }),
        })
        .collect()
}

impl RunConfig {
    pub fn load(path: impl AsRef<Path>) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path)?;
        Self::parse_str(&text)
    }

    pub fn parse_str(text: &str) -> Result<Self, ConfigError> {
        let mut cfg = Self::default();
        let mut seen = BTreeSet::new();
        for (idx, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return Err(ConfigError::BadLine { line: idx + 1, text: raw.to_string() });
            };
            let key = key.trim();
            let value = value.trim();
            seen.insert(key.to_string());
            cfg.set(key, value)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    fn set(&mut self, key: &str, value: &str) -> Result<(), ConfigError> {
        match key {
            "synth.count" => self.synth_count = parse_as!(key, value, usize),
            "synth.height" => self.synth_height = parse_as!(key, value, usize),
            "synth.width" => self.synth_width = parse_as!(key, value, usize),
            "synth.frames" => self.synth_frames = parse_as!(key, value, usize),
            "synth.cells_min" => self.synth_cells_min = parse_as!(key, value, usize),
            "synth.cells_max" => self.synth_cells_max = parse_as!(key, value, usize),
            "synth.cell_width_min" => {
                self.synth_cell_width_min = Some(parse_as!(key, value, f64))
            }
            "synth.cell_width_max" => {
                self.synth_cell_width_max = Some(parse_as!(key, value, f64))
            }
            "synth.peak_min" => self.synth_peak_min = parse_as!(key, value, f64),
            "synth.peak_max" => self.synth_peak_max = parse_as!(key, value, f64),
            "synth.speed_min" => self.synth_speed_min = parse_as!(key, value, f64),
            "synth.speed_max" => self.synth_speed_max = parse_as!(key, value, f64),
            "synth.growth_min" => self.synth_growth_min = parse_as!(key, value, f64),
            "synth.growth_max" => self.synth_growth_max = parse_as!(key, value, f64),
            "data.dir" => self.data_dir = value.to_string(),
            "data.low_size" => self.data_low_size = parse_as!(key, value, usize),
            "data.high_size" => self.data_high_size = parse_as!(key, value, usize),
            "data.max_rate" => self.data_max_rate = parse_as!(key, value, f64),
            "data.window_stride" => self.data_window_stride = parse_as!(key, value, usize),
            "schedule.steps" => self.schedule.steps = parse_as!(key, value, usize),
            "schedule.beta_start" => self.schedule.beta_start = parse_as!(key, value, f64),
            "schedule.beta_end" => self.schedule.beta_end = parse_as!(key, value, f64),
            "predictor.base_channels" => {
                self.predictor_base_channels = parse_as!(key, value, usize)
            }
            "predictor.channel_multipliers" => {
                self.predictor_channel_multipliers = parse_usize_list(key, value)?
            }
            "predictor.attention" => self.predictor_attention = parse_bool_list(key, value)?,
            "predictor.res_blocks" => self.predictor_res_blocks = parse_as!(key, value, usize),
            "predictor.embed_dim" => self.predictor_embed_dim = parse_as!(key, value, usize),
            "predictor.encoder_channels" => {
                self.predictor_encoder_channels = parse_as!(key, value, usize)
            }
            "predictor.heads" => self.predictor_heads = parse_as!(key, value, usize),
            "ssr.base_channels" => self.ssr_base_channels = parse_as!(key, value, usize),
            "ssr.channel_multipliers" => {
                self.ssr_channel_multipliers = parse_usize_list(key, value)?
            }
            "ssr.attention" => self.ssr_attention = parse_bool_list(key, value)?,
            "ssr.res_blocks" => self.ssr_res_blocks = parse_as!(key, value, usize),
            "ssr.heads" => self.ssr_heads = parse_as!(key, value, usize),
            "ae.base_channels" => self.ae_base_channels = parse_as!(key, value, usize),
            "ae.channel_multipliers" => {
                self.ae_channel_multipliers = parse_usize_list(key, value)?
            }
            "ae.res_blocks" => self.ae_res_blocks = parse_as!(key, value, usize),
            "lsr.base_channels" => self.lsr_base_channels = parse_as!(key, value, usize),
            "lsr.channel_multipliers" => {
                self.lsr_channel_multipliers = parse_usize_list(key, value)?
            }
            "lsr.attention" => self.lsr_attention = parse_bool_list(key, value)?,
            "lsr.res_blocks" => self.lsr_res_blocks = parse_as!(key, value, usize),
            "lsr.heads" => self.lsr_heads = parse_as!(key, value, usize),
            "embed.patch" => self.embed_patch = parse_as!(key, value, usize),
            "embed.dim" => self.embed_dim = parse_as!(key, value, usize),
            "embed.layers" => self.embed_layers = parse_as!(key, value, usize),
            "embed.heads" => self.embed_heads = parse_as!(key, value, usize),
            "train.steps" => self.train_steps = parse_as!(key, value, usize),
            "train.batch" => self.train_batch = parse_as!(key, value, usize),
            "train.lr" => self.train_lr = parse_as!(key, value, f64),
            "train.seed" => self.train_seed = parse_as!(key, value, u64),
            "train.ema" => self.train_ema = parse_as!(key, value, f64),
            "train.clip" => self.train_clip = parse_as!(key, value, f64),
            "eval.members" => self.eval_members = parse_as!(key, value, usize),
            "eval.csi_threshold" => self.eval_csi_threshold = parse_as!(key, value, f64),
            "eval.fss_threshold" => self.eval_fss_threshold = Some(parse_as!(key, value, f64)),
            "eval.fss_window" => self.eval_fss_window = parse_as!(key, value, usize),
            "reconstruct.mode" => {
                self.reconstruct_mode = match value {
                    "ssr" => ReconstructMode::Ssr,
                    "lsr" => ReconstructMode::Lsr,
                    other => {
                        return Err(ConfigError::BadValue {
                            key: key.to_string(),
                            value: other.to_string(),
                            reason: "expected 'ssr' or 'lsr'".into(),
                        })
                    }
                }
            }
            unknown => return Err(ConfigError::UnknownKey(unknown.to_string())),
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.data_low_size == 0 || self.data_high_size % self.data_low_size != 0 {
            return Err(ConfigError::Invalid(format!(
                "data.high_size {} must be a positive multiple of data.low_size {}",
                self.data_high_size, self.data_low_size
            )));
        }
        if self.synth_height != self.data_high_size || self.synth_width != self.data_high_size {
            return Err(ConfigError::Invalid(format!(
                "synthetic geometry {}x{} must match data.high_size {}",
                self.synth_height, self.synth_width, self.data_high_size
            )));
        }
        if self.train_batch == 0 {
            return Err(ConfigError::Invalid("train.batch must be positive".into()));
        }
        if self.eval_members == 0 {
            return Err(ConfigError::Invalid("eval.members must be positive".into()));
        }
        Ok(())
    }

    /// The downsampling factor between the high- and low-resolution grids.
    pub fn downsample_factor(&self) -> usize {
        self.data_high_size / self.data_low_size
    }

    pub fn fss_threshold(&self) -> f64 {
        self.eval_fss_threshold.unwrap_or(self.eval_csi_threshold)
    }

    pub fn synth_config(&self) -> SynthConfig {
        let mut cfg = SynthConfig::default().with_size(self.synth_height, self.synth_width);
        cfg.frames_per_seq = self.synth_frames;
        cfg.cells_min = self.synth_cells_min;
        cfg.cells_max = self.synth_cells_max;
        if let Some(v) = self.synth_cell_width_min {
            cfg.cell_width_min = v;
        }
        if let Some(v) = self.synth_cell_width_max {
            cfg.cell_width_max = v;
        }
        cfg.peak_min = self.synth_peak_min;
        cfg.peak_max = self.synth_peak_max;
        cfg.speed_min = self.synth_speed_min;
        cfg.speed_max = self.synth_speed_max;
        cfg.growth_min = self.synth_growth_min;
        cfg.growth_max = self.synth_growth_max;
        cfg
    }

    pub fn normalization(&self) -> NormalizationSpec {
        NormalizationSpec::new(self.data_max_rate)
    }

    pub fn predictor_config(&self) -> PredictorConfig {
        PredictorConfig {
            height: self.data_low_size,
            width: self.data_low_size,
            base_channels: self.predictor_base_channels,
            channel_multipliers: self.predictor_channel_multipliers.clone(),
            attention: self.predictor_attention.clone(),
            res_blocks_per_level: self.predictor_res_blocks,
            embed_dim: self.predictor_embed_dim,
            encoder_channels: self.predictor_encoder_channels,
            attention_heads: self.predictor_heads,
            schedule: self.schedule,
        }
    }

    pub fn ssr_config(&self) -> SsrConfig {
        SsrConfig {
            low_size: self.data_low_size,
            high_size: self.data_high_size,
            base_channels: self.ssr_base_channels,
            channel_multipliers: self.ssr_channel_multipliers.clone(),
            attention: self.ssr_attention.clone(),
            res_blocks_per_level: self.ssr_res_blocks,
            attention_heads: self.ssr_heads,
            schedule: self.schedule,
        }
    }

    pub fn ae_config(&self) -> AeConfig {
        AeConfig {
            high_size: self.data_high_size,
            base_channels: self.ae_base_channels,
            channel_multipliers: self.ae_channel_multipliers.clone(),
            res_blocks_per_stage: self.ae_res_blocks,
        }
    }

    pub fn lsr_config(&self) -> LsrConfig {
        LsrConfig {
            low_size: self.data_low_size,
            high_size: self.data_high_size,
            base_channels: self.lsr_base_channels,
            channel_multipliers: self.lsr_channel_multipliers.clone(),
            attention: self.lsr_attention.clone(),
            res_blocks_per_level: self.lsr_res_blocks,
            attention_heads: self.lsr_heads,
            embedder: EmbedderConfig {
                low_size: self.data_low_size,
                patch: self.embed_patch,
                dim: self.embed_dim,
                layers: self.embed_layers,
                heads: self.embed_heads,
            },
            schedule: self.schedule,
        }
    }

    pub fn verify_config(&self) -> VerifyConfig {
        VerifyConfig {
            csi_threshold: self.eval_csi_threshold,
            fss_threshold: self.fss_threshold(),
            fss_window: self.eval_fss_window,
            max_rate: self.data_max_rate,
        }
    }

    pub fn adam_config(&self) -> AdamConfig {
        AdamConfig {
            learning_rate: self.train_lr,
            clip_norm: self.train_clip,
            ..Default::default()
        }
    }

    /// Every key with its current value, suitable for re-parsing.
    pub fn to_resolved_string(&self) -> String {
        let synth = self.synth_config();
        let mut out = String::new();
        let mut kv = |k: &str, v: String| {
            out.push_str(k);
            out.push('=');
            out.push_str(&v);
            out.push('\n');
        };
        kv("synth.count", self.synth_count.to_string());
        kv("synth.height", self.synth_height.to_string());
        kv("synth.width", self.synth_width.to_string());
        kv("synth.frames", self.synth_frames.to_string());
        kv("synth.cells_min", self.synth_cells_min.to_string());
        kv("synth.cells_max", self.synth_cells_max.to_string());
        kv("synth.cell_width_min", synth.cell_width_min.to_string());
        kv("synth.cell_width_max", synth.cell_width_max.to_string());
        kv("synth.peak_min", self.synth_peak_min.to_string());
        kv("synth.peak_max", self.synth_peak_max.to_string());
        kv("synth.speed_min", self.synth_speed_min.to_string());
        kv("synth.speed_max", self.synth_speed_max.to_string());
        kv("synth.growth_min", self.synth_growth_min.to_string());
        kv("synth.growth_max", self.synth_growth_max.to_string());
        kv("data.dir", self.data_dir.clone());
        kv("data.low_size", self.data_low_size.to_string());
        kv("data.high_size", self.data_high_size.to_string());
        kv("data.max_rate", self.data_max_rate.to_string());
        kv("data.window_stride", self.data_window_stride.to_string());
        kv("schedule.steps", self.schedule.steps.to_string());
        kv("schedule.beta_start", self.schedule.beta_start.to_string());
        kv("schedule.beta_end", self.schedule.beta_end.to_string());
        kv("predictor.base_channels", self.predictor_base_channels.to_string());
        kv("predictor.channel_multipliers", join_usize(&self.predictor_channel_multipliers));
        kv("predictor.attention", join_bool(&self.predictor_attention));
        kv("predictor.res_blocks", self.predictor_res_blocks.to_string());
        kv("predictor.embed_dim", self.predictor_embed_dim.to_string());
        kv("predictor.encoder_channels", self.predictor_encoder_channels.to_string());
        kv("predictor.heads", self.predictor_heads.to_string());
        kv("ssr.base_channels", self.ssr_base_channels.to_string());
        kv("ssr.channel_multipliers", join_usize(&self.ssr_channel_multipliers));
        kv("ssr.attention", join_bool(&self.ssr_attention));
        kv("ssr.res_blocks", self.ssr_res_blocks.to_string());
        kv("ssr.heads", self.ssr_heads.to_string());
        kv("ae.base_channels", self.ae_base_channels.to_string());
        kv("ae.channel_multipliers", join_usize(&self.ae_channel_multipliers));
        kv("ae.res_blocks", self.ae_res_blocks.to_string());
        kv("lsr.base_channels", self.lsr_base_channels.to_string());
        kv("lsr.channel_multipliers", join_usize(&self.lsr_channel_multipliers));
        kv("lsr.attention", join_bool(&self.lsr_attention));
        kv("lsr.res_blocks", self.lsr_res_blocks.to_string());
        kv("lsr.heads", self.lsr_heads.to_string());
        kv("embed.patch", self.embed_patch.to_string());
        kv("embed.dim", self.embed_dim.to_string());
        kv("embed.layers", self.embed_layers.to_string());
        kv("embed.heads", self.embed_heads.to_string());
        kv("train.steps", self.train_steps.to_string());
        kv("train.batch", self.train_batch.to_string());
        kv("train.lr", self.train_lr.to_string());
        kv("train.seed", self.train_seed.to_string());
        kv("train.ema", self.train_ema.to_string());
        kv("train.clip", self.train_clip.to_string());
        kv("eval.members", self.eval_members.to_string());
        kv("eval.csi_threshold", self.eval_csi_threshold.to_string());
        kv("eval.fss_threshold", self.fss_threshold().to_string());
        kv("eval.fss_window", self.eval_fss_window.to_string());
        kv("reconstruct.mode", self.reconstruct_mode.as_str().to_string());
        out
    }
}

fn join_usize(values: &[usize]) -> String {
    values.iter().map(|v| v.to_string()).collect::<Vec<_>>().join(",")
}

fn join_bool(values: &[bool]) -> String {
    values.iter().map(|v| if *v { "1" } else { "0" }).collect::<Vec<_>>().join(",")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_parse_from_empty_text() {
        let cfg = RunConfig::parse_str("").unwrap();
        assert_eq!(cfg, RunConfig::default());
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let err = RunConfig::parse_str("nope.nope=1\n").unwrap_err();
        assert!(matches!(err, ConfigError::UnknownKey(k) if k == "nope.nope"));
    }

    #[test]
    fn bad_lines_and_values_are_rejected() {
        assert!(matches!(
            RunConfig::parse_str("this is not a key value line\n"),
            Err(ConfigError::BadLine { line: 1, .. })
        ));
        assert!(matches!(
            RunConfig::parse_str("train.steps=abc\n"),
            Err(ConfigError::BadValue { .. })
        ));
        assert!(matches!(
            RunConfig::parse_str("reconstruct.mode=both\n"),
            Err(ConfigError::BadValue { .. })
        ));
    }

    #[test]
    fn resolved_round_trips() {
        let text = "data.low_size=8\ndata.high_size=64\nsynth.height=64\nsynth.width=64\n\
                    reconstruct.mode=lsr\ntrain.steps=7\neval.fss_window=5\n";
        let cfg = RunConfig::parse_str(text).unwrap();
        assert_eq!(cfg.reconstruct_mode, ReconstructMode::Lsr);
        assert_eq!(cfg.downsample_factor(), 8);
        // resolving pins every optional to its effective value, so a second
        // resolve round trip is the identity
        let resolved = cfg.to_resolved_string();
        let back = RunConfig::parse_str(&resolved).unwrap();
        assert_eq!(back.to_resolved_string(), resolved);
        assert_eq!(back.predictor_config(), cfg.predictor_config());
        assert_eq!(back.synth_config(), cfg.synth_config());
        assert!(resolved.contains("eval.fss_threshold=0.06"));
    }

    #[test]
    fn comments_and_blanks_are_ignored() {
        let cfg = RunConfig::parse_str("# a comment\n\n  train.batch = 8 \n").unwrap();
        assert_eq!(cfg.train_batch, 8);
    }

    #[test]
    fn geometry_validation() {
        assert!(matches!(
            RunConfig::parse_str("data.low_size=33\n"),
            Err(ConfigError::Invalid(_))
        ));
        assert!(matches!(
            RunConfig::parse_str("synth.height=128\n"),
            Err(ConfigError::Invalid(_))
        ));
    }

    #[test]
    fn stage_configs_inherit_geometry_and_schedule() {
        let cfg = RunConfig::parse_str(
            "data.low_size=8\ndata.high_size=64\nsynth.height=64\nsynth.width=64\n\
             schedule.steps=64\nschedule.beta_start=0.001\nschedule.beta_end=0.2\n",
        )
        .unwrap();
        let p = cfg.predictor_config();
        assert_eq!(p.height, 8);
        assert_eq!(p.schedule.steps, 64);
        let s = cfg.ssr_config();
        assert_eq!((s.low_size, s.high_size), (8, 64));
        let l = cfg.lsr_config();
        assert_eq!(l.latent_size(), 8);
        assert_eq!(cfg.ae_config().latent_size(), 8);
    }
}
