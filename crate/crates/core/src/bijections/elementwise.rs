use super::{batch_of, Bijection};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// The same scalar affine map `a * x + b` applied to every element.
pub struct ElementwiseAffine {
    pub(crate) scale: Tensor,
    pub(crate) shift: Tensor,
}

crate::impl_module!(ElementwiseAffine { scale, shift });

impl ElementwiseAffine {
    pub fn new(a: f64, b: f64) -> Result<Self> {
        if a == 0.0 || !a.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "elementwise scale must be finite and nonzero, got {a}"
            )));
        }
        Ok(ElementwiseAffine {
            scale: Tensor::scalar(a).requires_grad(),
            shift: Tensor::scalar(b).requires_grad(),
        })
    }
}

impl Bijection for ElementwiseAffine {
    fn kind(&self) -> &'static str {
        "elementwise"
    }

    fn forward(&self, x: &Tensor, _cond: Option<&Tensor>) -> Result<(Tensor, Tensor)> {
        let n = batch_of(x)?;
        let per_sample = (x.numel() / n) as f64;
        let y = x.mul(&self.scale)?.add(&self.shift)?;
        let ld = self.scale.abs().ln().scale(per_sample);
        Ok((y, super::constant_logdet(n, &ld)?))
    }

    fn inverse(&self, y: &Tensor, _cond: Option<&Tensor>) -> Result<Tensor> {
        y.sub(&self.shift)?.div(&self.scale)
    }
}
