use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::bijections::MaskScheme;
use crate::error::{Error, Result};
use crate::glow::{GlowConfig, GlowModel};
use crate::model::{FlowModel, ModelKind};
use crate::rng::derive_seed;
use crate::waveletflow::{WaveletFlowConfig, WaveletFlowModel};

/// The three masking runs' hyperparameters.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Preset {
    ChannelWise,
    Checker,
    Cycle1,
}

impl FromStr for Preset {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "channel-wise" => Ok(Preset::ChannelWise),
            "checker" => Ok(Preset::Checker),
            "cycle-1" => Ok(Preset::Cycle1),
            _ => Err(Error::InvalidArgument(format!(
                "unknown preset {s:?} (expected channel-wise, checker or cycle-1)"
            ))),
        }
    }
}

impl fmt::Display for Preset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Preset::ChannelWise => "channel-wise",
            Preset::Checker => "checker",
            Preset::Cycle1 => "cycle-1",
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub model: ModelKind,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub hidden_channels: usize,
    pub mask_scheme: MaskScheme,
    pub cycle_iterations: usize,
    pub seed: u64,
    pub levels: usize,
    pub flows_per_level: usize,
    pub base_flows: usize,
    pub image_size: usize,
    pub channels: usize,
    pub grad_clip: f64,
    pub holdout_fraction: f64,
    /// Write a checkpoint every this many epochs (0 = only at the end).
    pub checkpoint_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        let mut c = TrainConfig {
            model: ModelKind::Glow,
            epochs: 0,
            batch_size: 0,
            learning_rate: 0.0,
            weight_decay: 0.0,
            hidden_channels: 0,
            mask_scheme: MaskScheme::ChannelWise,
            cycle_iterations: 1,
            seed: 0,
            levels: 3,
            flows_per_level: 32,
            base_flows: 4,
            image_size: 64,
            channels: 3,
            grad_clip: 50.0,
            holdout_fraction: 0.2,
            checkpoint_every: 0,
        };
        c.apply_preset(Preset::ChannelWise);
        c
    }
}

const KEYS: &[&str] = &[
    "model",
    "epochs",
    "batch_size",
    "learning_rate",
    "weight_decay",
    "hidden_channels",
    "mask_scheme",
    "cycle_iterations",
    "seed",
    "levels",
    "flows_per_level",
    "base_flows",
    "image_size",
    "channels",
    "grad_clip",
    "holdout_fraction",
    "checkpoint_every",
];

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::InvalidArgument(format!("bad value {value:?} for `{key}`")))
}

impl TrainConfig {
    /// `(epochs, batch, lr, weight decay, hidden)` plus the mask scheme.
    pub fn apply_preset(&mut self, preset: Preset) {
        let (e, b, lr, wd, h, mask) = match preset {
            Preset::ChannelWise => (1000, 16, 5e-4, 1e-3, 256, MaskScheme::ChannelWise),
            Preset::Checker => (350, 8, 1e-4, 1e-3, 512, MaskScheme::Checkerboard),
            Preset::Cycle1 => (500, 8, 1e-4, 1e-3, 128, MaskScheme::Cycle),
        };
        self.epochs = e;
        self.batch_size = b;
        self.learning_rate = lr;
        self.weight_decay = wd;
        self.hidden_channels = h;
        self.mask_scheme = mask;
        if preset == Preset::Cycle1 {
            self.cycle_iterations = 1;
        }
    }

    pub fn keys() -> &'static [&'static str] {
        KEYS
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let v = value.trim();
        match key {
            "model" => self.model = v.parse()?,
            "epochs" => self.epochs = parse(key, v)?,
            "batch_size" => self.batch_size = parse(key, v)?,
            "learning_rate" => self.learning_rate = parse(key, v)?,
            "weight_decay" => self.weight_decay = parse(key, v)?,
            "hidden_channels" => self.hidden_channels = parse(key, v)?,
            "mask_scheme" => self.mask_scheme = v.parse()?,
            "cycle_iterations" => self.cycle_iterations = parse(key, v)?,
            "seed" => self.seed = parse(key, v)?,
            "levels" => self.levels = parse(key, v)?,
            "flows_per_level" => self.flows_per_level = parse(key, v)?,
            "base_flows" => self.base_flows = parse(key, v)?,
            "image_size" => self.image_size = parse(key, v)?,
            "channels" => self.channels = parse(key, v)?,
            "grad_clip" => self.grad_clip = parse(key, v)?,
            "holdout_fraction" => self.holdout_fraction = parse(key, v)?,
            "checkpoint_every" => self.checkpoint_every = parse(key, v)?,
            _ => return Err(Error::InvalidArgument(format!("unknown config key `{key}`"))),
        }
        Ok(())
    }

    /// Applies flat `key = value` lines; `#` starts a comment.
    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (no, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| {
                Error::format("config", format!("line {}: expected `key = value`", no + 1))
            })?;
            self.set(k.trim(), v).map_err(|e| {
                Error::format("config", format!("line {}: {e}", no + 1))
            })?;
        }
        Ok(())
    }

    pub fn apply_file(&mut self, path: &Path) -> Result<()> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        self.apply_text(&text)
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("epochs", self.epochs),
            ("batch_size", self.batch_size),
            ("hidden_channels", self.hidden_channels),
            ("levels", self.levels),
            ("flows_per_level", self.flows_per_level),
            ("base_flows", self.base_flows),
            ("image_size", self.image_size),
        ];
        for (k, v) in positive {
            if v == 0 {
                return Err(Error::InvalidArgument(format!("`{k}` must be positive")));
            }
        }
        if !(self.learning_rate > 0.0) || !(self.grad_clip > 0.0) || !(self.weight_decay >= 0.0) {
            return Err(Error::InvalidArgument(
                "learning_rate and grad_clip must be > 0, weight_decay >= 0".into(),
            ));
        }
        if !(0.0..1.0).contains(&self.holdout_fraction) {
            return Err(Error::InvalidArgument("holdout_fraction must be in [0, 1)".into()));
        }
        if self.channels != 1 && self.channels != 3 {
            return Err(Error::InvalidArgument("channels must be 1 or 3".into()));
        }
        Ok(())
    }

    pub fn image_shape(&self) -> [usize; 3] {
        [self.channels, self.image_size, self.image_size]
    }

    pub fn glow_config(&self) -> GlowConfig {
        GlowConfig {
            levels: self.levels,
            flows_per_level: self.flows_per_level,
            hidden_channels: self.hidden_channels,
            mask_scheme: self.mask_scheme,
            cycle_iterations: self.cycle_iterations,
            image_shape: self.image_shape(),
        }
    }

    pub fn waveletflow_config(&self) -> WaveletFlowConfig {
        WaveletFlowConfig {
            image_shape: self.image_shape(),
            flows_per_level: self.flows_per_level,
            base_flows: self.base_flows,
            hidden_channels: self.hidden_channels,
        }
    }

    /// A freshly initialized model of the configured kind.
    pub fn build_model(&self) -> Result<Box<dyn FlowModel>> {
        self.validate()?;
        let seed = derive_seed(self.seed, &[0x30de1]);
        Ok(match self.model {
            ModelKind::Glow => Box::new(GlowModel::new(self.glow_config(), seed)?),
            ModelKind::WaveletFlow => Box::new(WaveletFlowModel::new(self.waveletflow_config(), seed)?),
        })
    }
}
