use super::{require_vectors, Bijection};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// `y = x + beta / (alpha + r) (x - x0)` with `r = |x - x0|`.
///
/// Stored as `alpha = softplus(a)` and `beta = -alpha + softplus(c)` so that
/// `alpha > 0` and `beta > -alpha` hold for every parameter value.
pub struct Radial {
    pub(crate) center: Tensor,
    pub(crate) alpha_raw: Tensor,
    pub(crate) beta_raw: Tensor,
}

crate::impl_module!(Radial { center, alpha_raw, beta_raw });

fn softplus_inverse(y: f64) -> f64 {
    // ln(exp(y) - 1), stable for large y
    if y > 30.0 {
        y
    } else {
        y.exp_m1().ln()
    }
}

impl Radial {
    pub fn new(center: &[f64], alpha: f64, beta: f64) -> Result<Self> {
        if center.is_empty() {
            return Err(Error::InvalidShape("radial flow needs D >= 1".into()));
        }
        if !(alpha > 0.0) {
            return Err(Error::InvalidArgument(format!("radial alpha must be > 0, got {alpha}")));
        }
        if !(beta > -alpha) {
            return Err(Error::InvalidArgument(format!(
                "radial beta must exceed -alpha, got beta={beta}, alpha={alpha}"
            )));
        }
        Ok(Radial {
            center: Tensor::vector(center).requires_grad(),
            alpha_raw: Tensor::scalar(softplus_inverse(alpha)).requires_grad(),
            beta_raw: Tensor::scalar(softplus_inverse(beta + alpha)).requires_grad(),
        })
    }

    pub fn dim(&self) -> usize {
        self.center.numel()
    }

    fn alpha_beta(&self) -> Result<(Tensor, Tensor)> {
        let alpha = self.alpha_raw.softplus();
        let beta = self.beta_raw.softplus().sub(&alpha)?;
        Ok((alpha, beta))
    }
}

impl Bijection for Radial {
    fn kind(&self) -> &'static str {
        "radial"
    }

    fn forward(&self, x: &Tensor, _cond: Option<&Tensor>) -> Result<(Tensor, Tensor)> {
        let d = self.dim();
        let n = require_vectors(x, d, "radial")?;
        let (alpha, beta) = self.alpha_beta()?;
        let diff = x.sub(&self.center.reshape(&[1, d])?)?;
        let r = diff.square().sum_axis(1)?.sqrt(); // [N]
        let inv = Tensor::scalar(1.0).div(&r.add(&alpha)?)?; // 1 / (alpha + r)
        let bh = inv.mul(&beta)?;
        let y = x.add(&diff.mul(&bh.reshape(&[n, 1])?)?)?;
        let radial_term = bh.shift(1.0).ln().scale((d - 1) as f64);
        // 1 + beta h + beta h' r  with  h' = -1 / (alpha + r)^2
        let along = bh
            .shift(1.0)
            .sub(&beta.mul(&r)?.mul(&inv.square())?)?
            .ln();
        Ok((y, radial_term.add(&along)?))
    }

    fn inverse(&self, y: &Tensor, _cond: Option<&Tensor>) -> Result<Tensor> {
        let d = self.dim();
        let n = require_vectors(y, d, "radial")?;
        let (alpha, beta) = self.alpha_beta()?;
        let (alpha, beta) = (alpha.item(), beta.item());
        let x0 = self.center.data();
        let mut out = Vec::with_capacity(n * d);
        for row in y.data().chunks(d) {
            let ry = row.iter().zip(x0).map(|(a, c)| (a - c).powi(2)).sum::<f64>().sqrt();
            // r^2 + (alpha + beta - ry) r - ry alpha = 0, positive root
            let p = alpha + beta - ry;
            let r = 0.5 * (-p + (p * p + 4.0 * ry * alpha).sqrt());
            let factor = 1.0 / (1.0 + beta / (alpha + r));
            out.extend(row.iter().zip(x0).map(|(yi, ci)| ci + (yi - ci) * factor));
        }
        Tensor::new(out, &[n, d])
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_beta_is_identity() {
        let f = Radial::new(&[0.5, -0.5], 1.3, 0.0).unwrap();
        let x = Tensor::new(vec![1.0, 2.0, -3.0, 0.1], &[2, 2]).unwrap();
        let (y, ld) = f.forward(&x, None).unwrap();
        for (a, b) in y.data().iter().zip(x.data()) {
            assert!((a - b).abs() < 1e-12);
        }
        assert!(ld.data().iter().all(|v| v.abs() < 1e-12));
    }

    #[test]
    fn center_is_fixed_point() {
        let f = Radial::new(&[0.5, -0.5], 0.7, 2.0).unwrap();
        let x = Tensor::new(vec![0.5, -0.5], &[1, 2]).unwrap();
        let (y, ld) = f.forward(&x, None).unwrap();
        assert_eq!(y.data(), &[0.5, -0.5]);
        assert!(ld.all_finite());
    }

    #[test]
    fn invalid_parameters_rejected() {
        assert!(Radial::new(&[0.0], 0.0, 1.0).is_err());
        assert!(Radial::new(&[0.0], -1.0, 1.0).is_err());
        assert!(Radial::new(&[0.0], 1.0, -1.5).is_err());
    }

    #[test]
    fn round_trip() {
        let f = Radial::new(&[0.2, 0.1, -0.3], 0.4, -0.3).unwrap();
        let x = Tensor::new(vec![1.0, 2.0, -3.0, 0.1, 0.0, 0.3], &[2, 3]).unwrap();
        let (y, _) = f.forward(&x, None).unwrap();
        let back = f.inverse(&y, None).unwrap();
        for (a, b) in back.data().iter().zip(x.data()) {
            assert!((a - b).abs() < 1e-12);
        }
    }
}
