use super::{zero_logdet, Bijection};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Trades each 2x2 spatial block for 4 channels. Output channel
/// `4 c + k` holds input channel `c` at block position `k` in
/// (top-left, top-right, bottom-left, bottom-right) order.
#[derive(Clone, Copy, Debug, Default)]
pub struct Squeeze;

crate::impl_module!(Squeeze {});

impl Squeeze {
    pub fn squeeze(x: &Tensor) -> Result<Tensor> {
        let &[n, c, h, w] = x.shape() else {
            return Err(Error::InvalidShape(format!("squeeze needs NCHW, got {:?}", x.shape())));
        };
        if h % 2 != 0 || w % 2 != 0 {
            return Err(Error::InvalidShape(format!("squeeze needs even H and W, got {h}x{w}")));
        }
        x.reshape(&[n, c, h / 2, 2, w / 2, 2])?
            .permute(&[0, 1, 3, 5, 2, 4])?
            .reshape(&[n, c * 4, h / 2, w / 2])
    }

    pub fn unsqueeze(y: &Tensor) -> Result<Tensor> {
        let &[n, c4, h, w] = y.shape() else {
            return Err(Error::InvalidShape(format!("unsqueeze needs NCHW, got {:?}", y.shape())));
        };
        if c4 % 4 != 0 {
            return Err(Error::InvalidShape(format!("unsqueeze needs C divisible by 4, got {c4}")));
        }
        y.reshape(&[n, c4 / 4, 2, 2, h, w])?
            .permute(&[0, 1, 4, 2, 5, 3])?
            .reshape(&[n, c4 / 4, h * 2, w * 2])
    }
}

impl Bijection for Squeeze {
    fn kind(&self) -> &'static str {
        "squeeze"
    }

    fn forward(&self, x: &Tensor, _cond: Option<&Tensor>) -> Result<(Tensor, Tensor)> {
        Ok((Squeeze::squeeze(x)?, zero_logdet(x)))
    }

    fn inverse(&self, y: &Tensor, _cond: Option<&Tensor>) -> Result<Tensor> {
        Squeeze::unsqueeze(y)
    }
}

/// `(kept, factored)`: the first and second channel halves.
pub fn split_channels(x: &Tensor) -> Result<(Tensor, Tensor)> {
    let c = *x.shape().get(1).ok_or_else(|| Error::InvalidShape("split needs a channel axis".into()))?;
    if c % 2 != 0 {
        return Err(Error::InvalidShape(format!("split needs an even channel count, got {c}")));
    }
    Ok((x.narrow(1, 0, c / 2)?, x.narrow(1, c / 2, c / 2)?))
}

pub fn merge_channels(kept: &Tensor, factored: &Tensor) -> Result<Tensor> {
    Tensor::concat(&[kept, factored], 1)
}
