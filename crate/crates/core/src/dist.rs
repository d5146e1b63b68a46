//! Base density, dequantization and the bits-per-dimension conversion.

use std::f64::consts::{LN_2, PI};

use crate::error::{Error, Result};
use crate::rng::{normal_vec, rng_for, uniform_vec};
use crate::tensor::Tensor;

/// Number of discrete intensity levels in 8-bit images.
pub const LEVELS: f64 = 256.0;

/// Isotropic standard normal over `dim` dimensions.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct StandardNormal {
    dim: usize,
}

impl StandardNormal {
    pub fn new(dim: usize) -> Result<Self> {
        if dim == 0 {
            return Err(Error::InvalidArgument("StandardNormal needs dim >= 1".into()));
        }
        Ok(StandardNormal { dim })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// `-D/2 ln(2 pi) - |z|^2 / 2` for a single point with exactly `D` values.
    pub fn log_prob(&self, z: &Tensor) -> Result<f64> {
        if z.numel() != self.dim {
            return Err(Error::InvalidShape(format!(
                "expected {} values, got {}",
                self.dim,
                z.numel()
            )));
        }
        let sq: f64 = z.data().iter().map(|v| v * v).sum();
        Ok(-0.5 * self.dim as f64 * (2.0 * PI).ln() - 0.5 * sq)
    }

    /// Differentiable per-sample log density of a `[N, ...]` batch whose
    /// trailing axes hold `D` values per sample.
    pub fn log_prob_batch(&self, z: &Tensor) -> Result<Tensor> {
        let n = z.shape().first().copied().unwrap_or(1);
        if z.rank() == 0 || z.numel() != n * self.dim {
            return Err(Error::InvalidShape(format!(
                "expected [N, ...] with {} values per sample, got {:?}",
                self.dim,
                z.shape()
            )));
        }
        standard_normal_log_prob(z)
    }

    /// `n` i.i.d. draws as an `[n, D]` tensor.
    pub fn sample(&self, n: usize, seed: u64) -> Result<Tensor> {
        if n == 0 {
            return Err(Error::InvalidArgument("sample count must be >= 1".into()));
        }
        let mut rng = rng_for(seed, &[0x5a4d]);
        Tensor::new(normal_vec(&mut rng, n * self.dim), &[n, self.dim])
    }
}

/// Per-sample standard normal log density of a `[N, ...]` batch.
pub fn standard_normal_log_prob(z: &Tensor) -> Result<Tensor> {
    let per_sample = z.numel() / z.shape()[0];
    let norm = -0.5 * per_sample as f64 * (2.0 * PI).ln();
    Ok(z.square().sum_per_sample()?.scale(-0.5).shift(norm))
}

/// Log-likelihood offset turning a continuous density over `[-0.5, 0.5)`
/// into a discrete likelihood over `dims` 8-bit values.
pub fn dequantization_correction(dims: usize) -> f64 {
    -(dims as f64) * LEVELS.ln()
}

/// Uniform dequantization of integer pixel values in `[0, 255]`:
/// `(p + u) / 256 - 0.5` with `u ~ U[0, 1)`. Returns the continuous values
/// together with the per-sample log-likelihood correction `-D ln 256`,
/// where `D` counts values per sample (all but the leading axis).
pub fn dequantize(pixels: &Tensor, seed: u64) -> Result<(Tensor, f64)> {
    let noise = uniform_vec(&mut rng_for(seed, &[0xde9]), pixels.numel());
    dequantize_with_noise(pixels, &noise)
}

pub fn dequantize_with_noise(pixels: &Tensor, noise: &[f64]) -> Result<(Tensor, f64)> {
    if noise.len() != pixels.numel() {
        return Err(Error::InvalidArgument("noise length must match pixels".into()));
    }
    for &p in pixels.data() {
        if !(0.0..LEVELS).contains(&p) || p.fract() != 0.0 {
            return Err(Error::OutOfRange(format!(
                "pixel value {p} is not an integer in [0, 255]"
            )));
        }
    }
    let data = pixels
        .data()
        .iter()
        .zip(noise)
        // keeps p + u strictly below p + 1 after rounding
        .map(|(&p, &u)| (p + u.clamp(0.0, 1.0 - 1e-12)) / LEVELS - 0.5)
        .collect();
    let per_sample = match pixels.rank() {
        0 | 1 => pixels.numel(),
        _ => pixels.numel() / pixels.shape()[0],
    };
    Ok((
        Tensor::new(data, pixels.shape())?,
        dequantization_correction(per_sample),
    ))
}

/// Dequantizes a `[N, ...]` batch with independent noise per sample, drawn
/// from that sample's own seed. The result does not depend on batching.
pub fn dequantize_per_sample(pixels: &Tensor, seeds: &[u64]) -> Result<(Tensor, f64)> {
    let n = pixels.shape().first().copied().unwrap_or(0);
    if pixels.rank() < 2 || seeds.len() != n {
        return Err(Error::InvalidArgument(format!(
            "need one seed per sample: {} seeds for shape {:?}",
            seeds.len(),
            pixels.shape()
        )));
    }
    let per = pixels.numel() / n;
    let mut noise = Vec::with_capacity(pixels.numel());
    for &s in seeds {
        noise.extend(uniform_vec(&mut rng_for(s, &[0xde9]), per));
    }
    dequantize_with_noise(pixels, &noise)
}

/// Maps values in `[-0.5, 0.5)` back to integer levels.
pub fn requantize(x: &Tensor) -> Tensor {
    x.map(|v| ((v + 0.5) * LEVELS).floor().clamp(0.0, LEVELS - 1.0))
}

/// Negative log-likelihood in bits per dimension (lower is better).
pub fn bits_per_dim(log_likelihood: f64, h: usize, w: usize, c: usize) -> f64 {
    -log_likelihood / ((h * w * c) as f64 * LN_2)
}

/// Bits per dimension for an arbitrary number of dimensions.
pub fn bits_per_dims(log_likelihood: f64, dims: usize) -> f64 {
    -log_likelihood / (dims as f64 * LN_2)
}
