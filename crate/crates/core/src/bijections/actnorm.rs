use super::{as_nchw, batch_of, constant_logdet, restore_rank, Bijection};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

const STD_FLOOR: f64 = 1e-6;

/// Per-channel affine map `y = s * x + b` with `s = exp(log_scale)`.
///
/// The first [`Bijection::forward_init`] call sets `s` and `b` so that the
/// batch it sees leaves with zero mean and unit variance per channel.
pub struct ActNorm {
    pub(crate) log_scale: Tensor,
    pub(crate) bias: Tensor,
    pub(crate) initialized: Tensor,
}

crate::impl_module!(ActNorm { log_scale, bias, initialized });

impl ActNorm {
    /// Identity parameters, awaiting data-dependent initialization.
    pub fn new(channels: usize) -> Self {
        ActNorm {
            log_scale: Tensor::zeros(&[channels]).requires_grad(),
            bias: Tensor::zeros(&[channels]).requires_grad(),
            initialized: Tensor::scalar(0.0),
        }
    }

    /// Fixed scale and bias; marks the layer initialized.
    pub fn with_params(scale: &[f64], bias: &[f64]) -> Result<Self> {
        if scale.len() != bias.len() {
            return Err(Error::InvalidShape("actnorm scale and bias lengths differ".into()));
        }
        if let Some(s) = scale.iter().find(|s| !(**s > 0.0)) {
            return Err(Error::InvalidArgument(format!("actnorm scale must be > 0, got {s}")));
        }
        let ls: Vec<f64> = scale.iter().map(|s| s.ln()).collect();
        Ok(ActNorm {
            log_scale: Tensor::vector(&ls).requires_grad(),
            bias: Tensor::vector(bias).requires_grad(),
            initialized: Tensor::scalar(1.0),
        })
    }

    pub fn channels(&self) -> usize {
        self.log_scale.numel()
    }

    pub fn is_initialized(&self) -> bool {
        self.initialized.item() != 0.0
    }

    fn initialize(&mut self, x: &Tensor) -> Result<()> {
        let x = as_nchw(&x.detach())?;
        let mean = x.channel_mean()?.to_vec();
        let std = x.channel_std()?.to_vec();
        let ls: Vec<f64> = std.iter().map(|s| -s.max(STD_FLOOR).ln()).collect();
        let b: Vec<f64> = mean.iter().zip(&ls).map(|(m, l)| -m * l.exp()).collect();
        self.log_scale = Tensor::vector(&ls).requires_grad();
        self.bias = Tensor::vector(&b).requires_grad();
        self.initialized = Tensor::scalar(1.0);
        Ok(())
    }

    fn check(&self, x: &Tensor) -> Result<(Tensor, usize)> {
        let v = as_nchw(x)?;
        if v.shape()[1] != self.channels() {
            return Err(Error::ShapeMismatch {
                op: "actnorm",
                lhs: v.shape().to_vec(),
                rhs: vec![self.channels()],
            });
        }
        let hw = v.shape()[2] * v.shape()[3];
        Ok((v, hw))
    }
}

impl Bijection for ActNorm {
    fn kind(&self) -> &'static str {
        "actnorm"
    }

    fn forward(&self, x: &Tensor, _cond: Option<&Tensor>) -> Result<(Tensor, Tensor)> {
        let (v, hw) = self.check(x)?;
        let c = self.channels();
        let s = self.log_scale.exp().reshape(&[1, c, 1, 1])?;
        let y = v.mul(&s)?.add(&self.bias.reshape(&[1, c, 1, 1])?)?;
        let ld = self.log_scale.sum().scale(hw as f64);
        Ok((restore_rank(y, x.shape())?, constant_logdet(batch_of(x)?, &ld)?))
    }

    fn inverse(&self, y: &Tensor, _cond: Option<&Tensor>) -> Result<Tensor> {
        let (v, _) = self.check(y)?;
        let c = self.channels();
        let x = v
            .sub(&self.bias.reshape(&[1, c, 1, 1])?)?
            .mul(&self.log_scale.neg().exp().reshape(&[1, c, 1, 1])?)?;
        restore_rank(x, y.shape())
    }

    fn forward_init(&mut self, x: &Tensor, cond: Option<&Tensor>) -> Result<(Tensor, Tensor)> {
        if !self.is_initialized() {
            self.initialize(x)?;
        }
        self.forward(x, cond)
    }
}
