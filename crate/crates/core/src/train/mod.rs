//! Alternating optimization of the semantic and depth branches.
//!
//! Each outer step runs one semantic step, then one depth step that consumes
//! the freshly updated `G_s`. All randomness is derived from the run seed and
//! the step counter, so a run can be resumed from a checkpoint bit for bit.

mod buffer;
mod checkpoint;
mod optim;
mod state;
mod step;

pub use buffer::{ReplayBuffer, BUFFER_CAPACITY};
pub use checkpoint::{load_checkpoint, save_checkpoint, RawCheckpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use optim::{adam_step, lr_schedule, Moments, OptimizerConfig};
pub use state::{BatchSource, StepRecord, Trainer, TrainerState, LOSS_COLUMNS};
pub use step::{
    depth_discriminator_update, depth_generator_update, depth_step, semantic_discriminator_update,
    semantic_generator_loss, semantic_generator_update, semantic_step, Breakdown, DepthBatch, DepthBranch,
    DepthOptions, Net, SemanticBatch, SemanticBranch, DEPTH_KEYS, SEMANTIC_KEYS,
};

use std::collections::BTreeMap;
use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::losses::{GanVariant, LossWeights};
use crate::nn::ArchConfig;

/// Image used to modulate the smoothness penalty.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum SmoothnessGuide {
    #[default]
    Semantic,
    Rgb,
}

impl SmoothnessGuide {
    pub fn name(self) -> &'static str {
        match self {
            SmoothnessGuide::Semantic => "semantic",
            SmoothnessGuide::Rgb => "rgb",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "semantic" => Some(SmoothnessGuide::Semantic),
            "rgb" => Some(SmoothnessGuide::Rgb),
            _ => None,
        }
    }
}

/// Everything that determines a training run apart from the data.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub seed: u64,
    /// Base channel width of every network.
    pub width: usize,
    /// Multi-scale pooling block on the semantic generators.
    pub mssp: bool,
    pub optimizer: OptimizerConfig,
    pub weights: LossWeights,
    pub gan_variant: GanVariant,
    pub use_semantic_input: bool,
    pub use_depth_loss: bool,
    pub use_smoothness: bool,
    pub smoothness_guide: SmoothnessGuide,
    /// Let depth losses train `G_s` through its output.
    pub joint_backprop: bool,
    pub buffer_capacity: usize,
    /// Outer steps of a run.
    pub steps: u64,
    /// Checkpoint period in outer steps; 0 keeps only the final checkpoint.
    pub checkpoint_every: u64,
    /// Sample grid period in outer steps; 0 disables grids.
    pub sample_every: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            seed: 0,
            width: 64,
            mssp: true,
            optimizer: OptimizerConfig::default(),
            weights: LossWeights::default(),
            gan_variant: GanVariant::Log,
            use_semantic_input: true,
            use_depth_loss: true,
            use_smoothness: true,
            smoothness_guide: SmoothnessGuide::Semantic,
            joint_backprop: false,
            buffer_capacity: BUFFER_CAPACITY,
            steps: 1000,
            checkpoint_every: 0,
            sample_every: 0,
        }
    }
}

macro_rules! parse_field {
    ($key:expr, $value:expr) => {
        $value
            .parse()
            .map_err(|_| Error::Config(format!("invalid value `{}` for `{}`", $value, $key)))?
    };
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value {
        "true" | "1" | "yes" | "on" => Ok(true),
        "false" | "0" | "no" | "off" => Ok(false),
        _ => Err(Error::Config(format!("invalid boolean `{value}` for `{key}`"))),
    }
}

impl TrainConfig {
    /// Desk-scale preset: 64×64 synthetic data, batch 4.
    pub fn desk() -> Self {
        TrainConfig {
            width: 16,
            optimizer: OptimizerConfig {
                base_lr: 2e-4,
                epochs_constant: 3,
                epochs_decay: 2,
                batch_size: 4,
                ..OptimizerConfig::default()
            },
            steps: 300,
            ..TrainConfig::default()
        }
    }

    pub fn keys() -> &'static [&'static str] {
        &[
            "seed",
            "width",
            "mssp",
            "base_lr",
            "beta1",
            "beta2",
            "eps",
            "epochs_constant",
            "epochs_decay",
            "batch_size",
            "lambda1",
            "lambda2",
            "lambda3",
            "lambda4",
            "lambda5",
            "lambda6",
            "gan_variant",
            "use_semantic_input",
            "use_depth_loss",
            "use_smoothness",
            "smoothness_guide",
            "joint_backprop",
            "buffer_capacity",
            "steps",
            "checkpoint_every",
            "sample_every",
        ]
    }

    /// Sets one key; returns `Ok(false)` for keys this config does not own.
    pub fn set(&mut self, key: &str, value: &str) -> Result<bool> {
        let o = &mut self.optimizer;
        let w = &mut self.weights;
        match key {
            "seed" => self.seed = parse_field!(key, value),
            "width" => self.width = parse_field!(key, value),
            "mssp" => self.mssp = parse_bool(key, value)?,
            "base_lr" => o.base_lr = parse_field!(key, value),
            "beta1" => o.beta1 = parse_field!(key, value),
            "beta2" => o.beta2 = parse_field!(key, value),
            "eps" => o.eps = parse_field!(key, value),
            "epochs_constant" => o.epochs_constant = parse_field!(key, value),
            "epochs_decay" => o.epochs_decay = parse_field!(key, value),
            "batch_size" => o.batch_size = parse_field!(key, value),
            "lambda1" => w.lambda1 = parse_field!(key, value),
            "lambda2" => w.lambda2 = parse_field!(key, value),
            "lambda3" => w.lambda3 = parse_field!(key, value),
            "lambda4" => w.lambda4 = parse_field!(key, value),
            "lambda5" => w.lambda5 = parse_field!(key, value),
            "lambda6" => w.lambda6 = parse_field!(key, value),
            "gan_variant" => {
                self.gan_variant = GanVariant::parse(value)
                    .ok_or_else(|| Error::Config(format!("gan_variant must be log or lsq, got `{value}`")))?
            }
            "use_semantic_input" => self.use_semantic_input = parse_bool(key, value)?,
            "use_depth_loss" => self.use_depth_loss = parse_bool(key, value)?,
            "use_smoothness" => self.use_smoothness = parse_bool(key, value)?,
            "smoothness_guide" => {
                self.smoothness_guide = SmoothnessGuide::parse(value).ok_or_else(|| {
                    Error::Config(format!("smoothness_guide must be semantic or rgb, got `{value}`"))
                })?
            }
            "joint_backprop" => self.joint_backprop = parse_bool(key, value)?,
            "buffer_capacity" => self.buffer_capacity = parse_field!(key, value),
            "steps" => self.steps = parse_field!(key, value),
            "checkpoint_every" => self.checkpoint_every = parse_field!(key, value),
            "sample_every" => self.sample_every = parse_field!(key, value),
            _ => return Ok(false),
        }
        Ok(true)
    }

    pub fn entries(&self) -> Vec<(&'static str, String)> {
        let o = &self.optimizer;
        let w = &self.weights;
        let values = [
            self.seed.to_string(),
            self.width.to_string(),
            self.mssp.to_string(),
            o.base_lr.to_string(),
            o.beta1.to_string(),
            o.beta2.to_string(),
            o.eps.to_string(),
            o.epochs_constant.to_string(),
            o.epochs_decay.to_string(),
            o.batch_size.to_string(),
            w.lambda1.to_string(),
            w.lambda2.to_string(),
            w.lambda3.to_string(),
            w.lambda4.to_string(),
            w.lambda5.to_string(),
            w.lambda6.to_string(),
            self.gan_variant.name().to_string(),
            self.use_semantic_input.to_string(),
            self.use_depth_loss.to_string(),
            self.use_smoothness.to_string(),
            self.smoothness_guide.name().to_string(),
            self.joint_backprop.to_string(),
            self.buffer_capacity.to_string(),
            self.steps.to_string(),
            self.checkpoint_every.to_string(),
            self.sample_every.to_string(),
        ];
        Self::keys().iter().copied().zip(values).collect()
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for (k, v) in self.entries() {
            let _ = writeln!(s, "{k}={v}");
        }
        s
    }

    /// Parses `key=value` lines with `#` comments; every key must be known.
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = TrainConfig::default();
        for (k, v) in parse_kv(text)? {
            if !cfg.set(&k, &v)? {
                return Err(Error::Config(format!("unknown key `{k}`")));
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.optimizer.validate()?;
        let w = &self.weights;
        let lambdas = [w.lambda1, w.lambda2, w.lambda3, w.lambda4, w.lambda5, w.lambda6];
        if lambdas.iter().any(|l| !(l.is_finite() && *l >= 0.0)) {
            return Err(Error::Config("loss weights must be finite and non-negative".into()));
        }
        if self.width == 0 {
            return Err(Error::Config("width must be positive".into()));
        }
        for a in self.archs().values() {
            a.validate()?;
        }
        Ok(())
    }

    /// Architectures of the eight networks, keyed by network name.
    pub fn archs(&self) -> BTreeMap<&'static str, ArchConfig> {
        let w = self.width;
        let mut gs = ArchConfig::gen_semantic(w);
        let mut fs = ArchConfig::gen_semantic_inv(w);
        if !self.mssp {
            gs.mssp_kernels.clear();
            fs.mssp_kernels.clear();
        }
        BTreeMap::from([
            ("G_s", gs),
            ("F_s", fs),
            ("D_X1", ArchConfig::patch_disc(w, 3)),
            ("D_Y1", ArchConfig::patch_disc(w, 3)),
            ("G_d", ArchConfig::gen_depth(w)),
            ("F_d", ArchConfig::gen_depth_inv(w)),
            ("D_X2", ArchConfig::patch_disc(w, 1)),
            ("D_Y2", ArchConfig::patch_disc(w, 1)),
        ])
    }

    pub fn depth_options(&self) -> DepthOptions {
        DepthOptions {
            use_semantic_input: self.use_semantic_input,
            use_depth_loss: self.use_depth_loss,
            use_smoothness: self.use_smoothness,
            smoothness_guide: self.smoothness_guide,
            joint_backprop: self.joint_backprop,
        }
    }
}

/// Splits `key=value` lines, skipping blanks and `#` comments. Later keys win.
pub fn parse_kv(text: &str) -> Result<Vec<(String, String)>> {
    let mut out: Vec<(String, String)> = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("line {}: expected key=value, got `{line}`", i + 1)))?;
        let (k, v) = (k.trim().to_string(), v.trim().to_string());
        out.retain(|(ok, _)| *ok != k);
        out.push((k, v));
    }
    Ok(out)
}
