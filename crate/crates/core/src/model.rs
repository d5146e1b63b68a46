//! Behaviour shared by the image density models.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::module::Module;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    Glow,
    WaveletFlow,
}

impl ModelKind {
    pub fn code(self) -> u8 {
        match self {
            ModelKind::Glow => 1,
            ModelKind::WaveletFlow => 2,
        }
    }

    pub fn from_code(code: u8) -> Result<Self> {
        match code {
            1 => Ok(ModelKind::Glow),
            2 => Ok(ModelKind::WaveletFlow),
            _ => Err(Error::format("checkpoint", format!("unknown model kind {code}"))),
        }
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ModelKind::Glow => "glow",
            ModelKind::WaveletFlow => "waveletflow",
        })
    }
}

impl FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace(['-', '_'], "").as_str() {
            "glow" => Ok(ModelKind::Glow),
            "waveletflow" | "wavelet" => Ok(ModelKind::WaveletFlow),
            other => Err(Error::InvalidArgument(format!("unknown model {other:?}"))),
        }
    }
}

/// A normalizing-flow density over `[N, C, H, W]` images in `[-0.5, 0.5)`.
pub trait FlowModel: Module + Send + Sync {
    fn kind(&self) -> ModelKind;

    /// `(C, H, W)` of the modelled images.
    fn image_shape(&self) -> [usize; 3];

    /// Per-sample continuous log density `ln p(x)`, shape `[N]`.
    fn log_density(&self, x: &Tensor) -> Result<Tensor>;

    /// Per-sample discrete log-likelihood: `ln p(x) - D ln 256`.
    fn log_likelihood(&self, x: &Tensor) -> Result<Tensor> {
        let [c, h, w] = self.image_shape();
        Ok(self
            .log_density(x)?
            .shift(crate::dist::dequantization_correction(c * h * w)))
    }

    /// Mean negative log-likelihood in nats.
    fn nll_loss(&self, x: &Tensor) -> Result<Tensor> {
        if x.shape().first().copied().unwrap_or(0) == 0 {
            return Err(Error::InvalidArgument("loss needs a nonempty batch".into()));
        }
        Ok(self.log_likelihood(x)?.mean().neg())
    }

    /// One-time data-dependent initialization (actnorm statistics).
    fn initialize(&mut self, x: &Tensor) -> Result<()>;

    /// `n` images in the `[0, 1]` pixel scale (not clamped).
    fn sample(&self, n: usize, temperature: f64, seed: u64) -> Result<Tensor>;

    /// Name of the first layer whose output or log-det is non-finite.
    fn first_non_finite(&self, x: &Tensor) -> Option<String>;

    /// Number of independently trainable levels, 0 for monolithic models.
    fn trainable_levels(&self) -> usize {
        0
    }

    /// Mean NLL (nats per image) of the whole model or of one level.
    fn scope_loss(&self, x: &Tensor, level: Option<usize>) -> Result<Tensor> {
        match level {
            None => self.nll_loss(x),
            Some(l) => Err(no_levels(self.kind(), l)),
        }
    }

    /// Per-sample log-likelihood of the scope and the values it scores.
    fn scope_log_likelihood(&self, x: &Tensor, level: Option<usize>) -> Result<(Tensor, usize)> {
        match level {
            None => {
                let [c, h, w] = self.image_shape();
                Ok((self.log_likelihood(x)?, c * h * w))
            }
            Some(l) => Err(no_levels(self.kind(), l)),
        }
    }

    /// Parameter-name prefix owned by a level.
    fn scope_prefix(&self, level: Option<usize>) -> Result<Option<String>> {
        match level {
            None => Ok(None),
            Some(l) => Err(no_levels(self.kind(), l)),
        }
    }

    fn initialize_scope(&mut self, x: &Tensor, level: Option<usize>) -> Result<()> {
        match level {
            None => self.initialize(x),
            Some(l) => Err(no_levels(self.kind(), l)),
        }
    }

    /// The model as a Wavelet Flow, for per-level analysis.
    fn as_wavelet_flow(&self) -> Option<&crate::waveletflow::WaveletFlowModel> {
        None
    }

    fn check_input(&self, x: &Tensor) -> Result<usize> {
        let [c, h, w] = self.image_shape();
        match *x.shape() {
            [n, xc, xh, xw] if (xc, xh, xw) == (c, h, w) && n > 0 => Ok(n),
            _ => Err(Error::ShapeMismatch {
                op: "model input",
                lhs: x.shape().to_vec(),
                rhs: vec![c, h, w],
            }),
        }
    }
}

pub(crate) fn check_temperature(t: f64) -> Result<()> {
    if t > 0.0 && t.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!("temperature must be > 0, got {t}")))
    }
}

fn no_levels(kind: ModelKind, level: usize) -> Error {
    Error::InvalidArgument(format!("{kind} has no separately trainable level {level}"))
}
