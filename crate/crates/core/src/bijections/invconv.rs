use super::{as_nchw, batch_of, constant_logdet, restore_rank, Bijection, LuMatrix};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Invertible 1x1 convolution: the same `c x c` matrix mixes the channels of
/// every pixel.
pub struct InvConv1x1 {
    pub(crate) weight: LuMatrix,
}

crate::impl_module!(InvConv1x1 { weight });

impl InvConv1x1 {
    pub fn identity(channels: usize) -> Self {
        InvConv1x1 { weight: LuMatrix::identity(channels) }
    }

    /// Seeded random rotation in LU form.
    pub fn random(channels: usize, seed: u64) -> Self {
        InvConv1x1 { weight: LuMatrix::random_orthogonal(channels, seed) }
    }

    pub fn from_matrix(w: &[f64], channels: usize) -> Result<Self> {
        Ok(InvConv1x1 { weight: LuMatrix::from_dense(w, channels)? })
    }

    pub fn channels(&self) -> usize {
        self.weight.dim()
    }

    pub fn weight(&self) -> &LuMatrix {
        &self.weight
    }

    fn check(&self, x: &Tensor) -> Result<(Tensor, usize)> {
        let v = as_nchw(x)?;
        let c = self.channels();
        if v.shape()[1] != c {
            return Err(Error::ShapeMismatch {
                op: "inv_conv1x1",
                lhs: v.shape().to_vec(),
                rhs: vec![c, c],
            });
        }
        Ok((v.clone(), v.shape()[2] * v.shape()[3]))
    }
}

impl Bijection for InvConv1x1 {
    fn kind(&self) -> &'static str {
        "inv_conv1x1"
    }

    fn forward(&self, x: &Tensor, _cond: Option<&Tensor>) -> Result<(Tensor, Tensor)> {
        let (v, hw) = self.check(x)?;
        let c = self.channels();
        let kernel = self.weight.matrix()?.reshape(&[c, c, 1, 1])?;
        let y = v.conv2d(&kernel, 0)?;
        let ld = self.weight.log_abs_det().scale(hw as f64);
        Ok((restore_rank(y, x.shape())?, constant_logdet(batch_of(x)?, &ld)?))
    }

    fn inverse(&self, y: &Tensor, _cond: Option<&Tensor>) -> Result<Tensor> {
        let (v, _) = self.check(y)?;
        let c = self.channels();
        let kernel = Tensor::new(self.weight.inverse_dense(), &[c, c, 1, 1])?;
        restore_rank(v.conv2d(&kernel, 0)?, y.shape())
    }
}
