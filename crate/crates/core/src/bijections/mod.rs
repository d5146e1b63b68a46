//! Invertible transforms with exact log-Jacobian-determinants.
//!
//! Every bijection maps a batch in the normalizing direction (data to
//! latent) and reports the per-sample `ln|det J|` of that map as an `[N]`
//! tensor. Vector flows act on `[N, D]`; image flows on `[N, C, H, W]`.
//! Conditional flows receive an optional context tensor that is passed
//! through to coupling conditioners.

mod actnorm;
mod coupling;
mod elementwise;
mod invconv;
mod linear;
mod mask;
mod multiscale;
mod planar;
mod radial;

pub use actnorm::ActNorm;
pub use coupling::{AffineCoupling, Conditioner, SCALE_BOUND};
pub use elementwise::ElementwiseAffine;
pub use invconv::InvConv1x1;
pub use linear::{LinearLu, LuMatrix};
pub use mask::{make_mask, MaskScheme, MaskSpec, Partition};
pub use multiscale::{merge_channels, split_channels, Squeeze};
pub use planar::Planar;
pub use radial::Radial;

use crate::error::{Error, Result};
use crate::module::Module;
use crate::tensor::Tensor;

pub trait Bijection: Module + Send + Sync {
    fn kind(&self) -> &'static str;

    /// `(y, ln|det dy/dx|)` with the log-det as an `[N]` tensor.
    fn forward(&self, x: &Tensor, cond: Option<&Tensor>) -> Result<(Tensor, Tensor)>;

    fn inverse(&self, y: &Tensor, cond: Option<&Tensor>) -> Result<Tensor>;

    /// Forward pass that may first perform data-dependent initialization.
    fn forward_init(&mut self, x: &Tensor, cond: Option<&Tensor>) -> Result<(Tensor, Tensor)> {
        self.forward(x, cond)
    }
}

/// One entry of a traced forward pass.
#[derive(Clone, Debug)]
pub struct LayerRecord {
    pub name: String,
    pub output: Tensor,
    /// Normalizing-direction `ln|det|`, per sample.
    pub logdet: Tensor,
}

/// Sequential composition; log-dets add.
#[derive(Default)]
pub struct Chain {
    pub layers: Vec<Box<dyn Bijection>>,
}

crate::impl_module!(Chain { layers });

impl Chain {
    pub fn new(layers: Vec<Box<dyn Bijection>>) -> Self {
        Chain { layers }
    }

    pub fn push(&mut self, layer: impl Bijection + 'static) {
        self.layers.push(Box::new(layer));
    }

    pub fn len(&self) -> usize {
        self.layers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.layers.is_empty()
    }

    /// Forward pass that keeps every intermediate output and log-det.
    pub fn forward_traced(
        &self,
        x: &Tensor,
        cond: Option<&Tensor>,
        prefix: &str,
    ) -> Result<(Tensor, Tensor, Vec<LayerRecord>)> {
        let mut h = x.clone();
        let mut total = zero_logdet(x);
        let mut records = Vec::with_capacity(self.layers.len());
        for (i, layer) in self.layers.iter().enumerate() {
            let (y, ld) = layer.forward(&h, cond)?;
            total = total.add(&ld)?;
            records.push(LayerRecord {
                name: format!("{prefix}{i}.{}", layer.kind()),
                output: y.clone(),
                logdet: ld,
            });
            h = y;
        }
        Ok((h, total, records))
    }
}

impl Bijection for Chain {
    fn kind(&self) -> &'static str {
        "chain"
    }

    fn forward(&self, x: &Tensor, cond: Option<&Tensor>) -> Result<(Tensor, Tensor)> {
        let mut h = x.clone();
        let mut total = zero_logdet(x);
        for layer in &self.layers {
            let (y, ld) = layer.forward(&h, cond)?;
            total = total.add(&ld)?;
            h = y;
        }
        Ok((h, total))
    }

    fn inverse(&self, y: &Tensor, cond: Option<&Tensor>) -> Result<Tensor> {
        let mut h = y.clone();
        for layer in self.layers.iter().rev() {
            h = layer.inverse(&h, cond)?;
        }
        Ok(h)
    }

    fn forward_init(&mut self, x: &Tensor, cond: Option<&Tensor>) -> Result<(Tensor, Tensor)> {
        let mut h = x.clone();
        let mut total = zero_logdet(x);
        for layer in &mut self.layers {
            let (y, ld) = layer.forward_init(&h, cond)?;
            total = total.add(&ld)?;
            h = y;
        }
        Ok((h, total))
    }
}

pub(crate) fn batch_of(x: &Tensor) -> Result<usize> {
    x.shape()
        .first()
        .copied()
        .ok_or_else(|| Error::InvalidShape("expected a batch axis".into()))
}

pub(crate) fn zero_logdet(x: &Tensor) -> Tensor {
    Tensor::zeros(&[x.shape().first().copied().unwrap_or(1)])
}

/// A per-sample log-det that is the same scalar for every sample.
pub(crate) fn constant_logdet(n: usize, value: &Tensor) -> Result<Tensor> {
    Tensor::zeros(&[n]).add(value)
}

/// Views `[N, D]` as `[N, D, 1, 1]`; passes NCHW through.
pub(crate) fn as_nchw(x: &Tensor) -> Result<Tensor> {
    match *x.shape() {
        [_, _, _, _] => Ok(x.clone()),
        [n, d] => x.reshape(&[n, d, 1, 1]),
        _ => Err(Error::InvalidShape(format!(
            "expected [N, D] or [N, C, H, W], got {:?}",
            x.shape()
        ))),
    }
}

/// Restores the rank of `like` after an NCHW computation.
pub(crate) fn restore_rank(y: Tensor, like: &[usize]) -> Result<Tensor> {
    if y.shape() == like {
        Ok(y)
    } else {
        y.reshape(like)
    }
}

/// Checks that `x` is `[N, D]` with the expected `D`.
pub(crate) fn require_vectors(x: &Tensor, dim: usize, who: &str) -> Result<usize> {
    match *x.shape() {
        [n, d] if d == dim => Ok(n),
        _ => Err(Error::InvalidShape(format!(
            "{who} expects [N, {dim}], got {:?}",
            x.shape()
        ))),
    }
}
