//! Model, loss and training configuration.
//!
//! Defaults follow the published hyper-parameter setting: `tau_upper=1`,
//! `tau_lower=0.05`, `alpha=1`, `beta=0.01`, `lambda=1`, `batch_size=1024`,
//! `lr=0.0005`, three tower layers, embedding dim 8, three experts, and the
//! first task-specific layer as the contrast layer.

use crate::error::{Error, Result};
use crate::numcore::Activation;
use serde::{Deserialize, Serialize};
use std::path::PathBuf;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Backbone {
    SingleDnn,
    SharedBottom,
    Mmoe,
}

impl std::str::FromStr for Backbone {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "single_dnn" => Ok(Self::SingleDnn),
            "shared_bottom" => Ok(Self::SharedBottom),
            "mmoe" => Ok(Self::Mmoe),
            _ => Err(Error::Config(format!("unknown backbone '{}'", s))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TemperatureMode {
    Adaptive,
    LearnableScalar,
    Fixed,
}

impl std::str::FromStr for TemperatureMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "adaptive" => Ok(Self::Adaptive),
            "learnable_scalar" => Ok(Self::LearnableScalar),
            "fixed" => Ok(Self::Fixed),
            _ => Err(Error::Config(format!("unknown temperature mode '{}'", s))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AlignmentMode {
    InfoNce,
    Scl,
    Reg,
    None,
}

impl std::str::FromStr for AlignmentMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "infonce" => Ok(Self::InfoNce),
            "scl" => Ok(Self::Scl),
            "reg" => Ok(Self::Reg),
            "none" => Ok(Self::None),
            _ => Err(Error::Config(format!("unknown alignment mode '{}'", s))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RegKind {
    Mse,
    Mae,
}

impl std::str::FromStr for RegKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mse" => Ok(Self::Mse),
            "mae" => Ok(Self::Mae),
            _ => Err(Error::Config(format!("unknown reg kind '{}'", s))),
        }
    }
}

/// Architecture of the backbone, towers and relatedness network.
///
/// The shared layers (bottom layer or experts) output vectors whose width
/// equals `tower_hidden_sizes[0]`, which is also the tower input width.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub backbone: Backbone,
    pub embed_dim: usize,
    pub expert_count: usize,
    pub tower_hidden_sizes: Vec<usize>,
    pub relatedness_hidden_sizes: Vec<usize>,
    pub activation: Activation,
    pub init_seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            backbone: Backbone::Mmoe,
            embed_dim: 8,
            expert_count: 3,
            tower_hidden_sizes: vec![128, 64, 32],
            relatedness_hidden_sizes: vec![64],
            activation: Activation::Relu,
            init_seed: 42,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.embed_dim == 0 {
            return Err(Error::Config("embed-dim must be >= 1".into()));
        }
        if self.tower_hidden_sizes.is_empty() {
            return Err(Error::Config("at least one tower layer is required".into()));
        }
        if self.tower_hidden_sizes.iter().any(|&h| h == 0)
            || self.relatedness_hidden_sizes.iter().any(|&h| h == 0)
        {
            return Err(Error::Config("hidden sizes must be >= 1".into()));
        }
        if self.backbone == Backbone::Mmoe && self.expert_count == 0 {
            return Err(Error::Config("mmoe requires expert-count >= 1".into()));
        }
        Ok(())
    }

    pub fn tower_layers(&self) -> usize {
        self.tower_hidden_sizes.len()
    }

    /// Width of `v_ctr` / `v_cvr`, the shared-layer output.
    pub fn shared_output_dim(&self) -> usize {
        self.tower_hidden_sizes[0]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossConfig {
    /// Weight of the relatedness supervision loss.
    pub alpha: f64,
    /// Weight of the alignment loss.
    pub beta: f64,
    /// Weight of the L2 penalty over the base parameters.
    pub lambda: f64,
    pub tau_upper: f64,
    pub tau_lower: f64,
    pub temperature_mode: TemperatureMode,
    pub fixed_tau: f64,
    pub alignment_mode: AlignmentMode,
    pub reg_kind: RegKind,
    /// Which tower layer output to contrast, 1-based.
    pub contrast_layer: usize,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            alpha: 1.0,
            beta: 0.01,
            lambda: 1.0,
            tau_upper: 1.0,
            tau_lower: 0.05,
            temperature_mode: TemperatureMode::Adaptive,
            fixed_tau: 0.05,
            alignment_mode: AlignmentMode::InfoNce,
            reg_kind: RegKind::Mse,
            contrast_layer: 1,
        }
    }
}

impl LossConfig {
    pub fn validate(&self, tower_layers: usize) -> Result<()> {
        if self.alpha < 0.0 || self.beta < 0.0 || self.lambda < 0.0 {
            return Err(Error::Config("alpha, beta and lambda must be >= 0".into()));
        }
        if !(self.tau_lower > 0.0 && self.tau_upper > self.tau_lower) {
            return Err(Error::Config(format!(
                "temperature range requires 0 < tau-lower < tau-upper, got [{}, {}]",
                self.tau_lower, self.tau_upper
            )));
        }
        if self.temperature_mode == TemperatureMode::Fixed
            && !(self.fixed_tau >= self.tau_lower && self.fixed_tau <= self.tau_upper)
        {
            return Err(Error::Config(format!(
                "fixed-tau {} outside [{}, {}]",
                self.fixed_tau, self.tau_lower, self.tau_upper
            )));
        }
        if self.contrast_layer == 0 || self.contrast_layer > tower_layers {
            return Err(Error::Config(format!(
                "contrast-layer {} outside [1, {}]",
                self.contrast_layer, tower_layers
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub model: ModelConfig,
    pub loss: LossConfig,
    pub lr: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    /// Evaluate every N epochs on held-out data when provided; 0 disables.
    pub eval_every: usize,
    /// Stop after this many evaluations without CVR AUC improvement.
    pub patience: Option<usize>,
    /// Evaluate CVR only on clicked impressions.
    pub cvr_on_clicks_only: bool,
    pub checkpoint_path: Option<PathBuf>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            model: ModelConfig::default(),
            loss: LossConfig::default(),
            lr: 0.0005,
            batch_size: 1024,
            epochs: 1,
            seed: 42,
            eval_every: 0,
            patience: None,
            cvr_on_clicks_only: false,
            checkpoint_path: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.loss.validate(self.model.tower_layers())?;
        if self.lr <= 0.0 {
            return Err(Error::Config(format!("lr must be > 0, got {}", self.lr)));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch-size must be >= 1".into()));
        }
        if self.epochs == 0 {
            return Err(Error::Config("epochs must be >= 1".into()));
        }
        Ok(())
    }

    /// Applies one `key=value` pair from a config file. Unknown keys error.
    pub fn apply_kv(&mut self, key: &str, value: &str) -> Result<()> {
        let bad = |what: &str, v: &str| Error::Config(format!("invalid {} value '{}'", what, v));
        match key {
            "backbone" => self.model.backbone = value.parse()?,
            "embed_dim" => self.model.embed_dim = value.parse().map_err(|_| bad(key, value))?,
            "expert_count" => self.model.expert_count = value.parse().map_err(|_| bad(key, value))?,
            "tower_hidden_sizes" => self.model.tower_hidden_sizes = parse_sizes(value)?,
            "relatedness_hidden_sizes" => self.model.relatedness_hidden_sizes = parse_sizes(value)?,
            "activation" => {
                self.model.activation = match value {
                    "relu" => Activation::Relu,
                    "sigmoid" => Activation::Sigmoid,
                    _ => return Err(bad(key, value)),
                }
            }
            "init_seed" => self.model.init_seed = value.parse().map_err(|_| bad(key, value))?,
            "alpha" => self.loss.alpha = value.parse().map_err(|_| bad(key, value))?,
            "beta" => self.loss.beta = value.parse().map_err(|_| bad(key, value))?,
            "lambda" => self.loss.lambda = value.parse().map_err(|_| bad(key, value))?,
            "tau_upper" => self.loss.tau_upper = value.parse().map_err(|_| bad(key, value))?,
            "tau_lower" => self.loss.tau_lower = value.parse().map_err(|_| bad(key, value))?,
            "temperature_mode" => self.loss.temperature_mode = value.parse()?,
            "fixed_tau" => self.loss.fixed_tau = value.parse().map_err(|_| bad(key, value))?,
            "alignment_mode" => self.loss.alignment_mode = value.parse()?,
            "reg_kind" => self.loss.reg_kind = value.parse()?,
            "contrast_layer" => self.loss.contrast_layer = value.parse().map_err(|_| bad(key, value))?,
            "lr" => self.lr = value.parse().map_err(|_| bad(key, value))?,
            "batch_size" => self.batch_size = value.parse().map_err(|_| bad(key, value))?,
            "epochs" => self.epochs = value.parse().map_err(|_| bad(key, value))?,
            "seed" => self.seed = value.parse().map_err(|_| bad(key, value))?,
            "eval_every" => self.eval_every = value.parse().map_err(|_| bad(key, value))?,
            "patience" => self.patience = Some(value.parse().map_err(|_| bad(key, value))?),
            "cvr_on_clicks_only" => {
                self.cvr_on_clicks_only = value.parse().map_err(|_| bad(key, value))?
            }
            _ => return Err(Error::Config(format!("unknown config key '{}'", key))),
        }
        Ok(())
    }

    /// Loads `key=value` lines from a config file into `self`.
    pub fn apply_file(&mut self, path: &std::path::Path) -> Result<()> {
        let text = std::fs::read_to_string(path)?;
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| Error::Data {
                line: lineno + 1,
                msg: format!("expected key=value, got '{}'", line),
            })?;
            self.apply_kv(k.trim(), v.trim())?;
        }
        Ok(())
    }
}

fn parse_sizes(value: &str) -> Result<Vec<usize>> {
    value
        .split(',')
        .map(|s| {
            s.trim()
                .parse()
                .map_err(|_| Error::Config(format!("invalid size list '{}'", value)))
        })
        .collect()
}
