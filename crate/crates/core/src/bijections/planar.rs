use super::{require_vectors, Bijection};
use crate::error::{Error, Result};
use crate::rng::{normal_vec, rng_for};
use crate::tensor::Tensor;

/// Margin keeping `w . u_hat >= -1 + eps`, so `1 + h' w . u_hat > 0`.
const INVERTIBILITY_EPS: f64 = 1e-3;

/// `y = x + u_hat tanh(w . x + b)`.
///
/// `u_hat` equals `u` whenever `w . u >= 0`. Below that the component of `u`
/// along `w` is replaced by a smooth exponential floor so that
/// `w . u_hat > -1` for every parameter value.
pub struct Planar {
    pub(crate) u: Tensor,
    pub(crate) w: Tensor,
    pub(crate) b: Tensor,
}

crate::impl_module!(Planar { u, w, b });

impl Planar {
    pub fn new(u: &[f64], w: &[f64], b: f64) -> Result<Self> {
        if u.len() != w.len() || u.is_empty() {
            return Err(Error::InvalidShape("u and w must have equal nonzero length".into()));
        }
        if w.iter().all(|&v| v == 0.0) {
            return Err(Error::InvalidArgument("planar flow needs |w| > 0".into()));
        }
        Ok(Planar {
            u: Tensor::vector(u).requires_grad(),
            w: Tensor::vector(w).requires_grad(),
            b: Tensor::scalar(b).requires_grad(),
        })
    }

    /// Small random parameters drawn from the given seed.
    pub fn random(dim: usize, seed: u64) -> Self {
        let mut rng = rng_for(seed, &[0x91a]);
        let u: Vec<f64> = normal_vec(&mut rng, dim).iter().map(|v| 0.1 * v).collect();
        let w: Vec<f64> = normal_vec(&mut rng, dim).iter().map(|v| 0.5 * v + 0.1).collect();
        Planar::new(&u, &w, 0.0).expect("random w is nonzero")
    }

    pub fn dim(&self) -> usize {
        self.w.numel()
    }

    fn u_hat(&self) -> Result<Tensor> {
        let wu = self.w.mul(&self.u)?.sum();
        let w_sq = self.w.square().sum();
        let correction = wu.bounded_below(INVERTIBILITY_EPS).sub(&wu)?;
        self.u.add(&self.w.mul(&correction.div(&w_sq)?)?)
    }
}

impl Bijection for Planar {
    fn kind(&self) -> &'static str {
        "planar"
    }

    fn forward(&self, x: &Tensor, _cond: Option<&Tensor>) -> Result<(Tensor, Tensor)> {
        let d = self.dim();
        let n = require_vectors(x, d, "planar")?;
        let u_hat = self.u_hat()?;
        let act = x.matmul(&self.w.reshape(&[d, 1])?)?.add(&self.b)?; // [N,1]
        let h = act.tanh();
        let y = x.add(&h.mul(&u_hat.reshape(&[1, d])?)?)?;
        let w_u = self.w.mul(&u_hat)?.sum();
        let dh = h.square().neg().shift(1.0);
        let ld = dh.mul(&w_u)?.shift(1.0).abs().ln().reshape(&[n])?;
        Ok((y, ld))
    }

    fn inverse(&self, y: &Tensor, _cond: Option<&Tensor>) -> Result<Tensor> {
        let d = self.dim();
        let n = require_vectors(y, d, "planar")?;
        let u_hat = self.u_hat()?.to_vec();
        let w = self.w.data();
        let b = self.b.item();
        let w_u: f64 = w.iter().zip(&u_hat).map(|(a, c)| a * c).sum();
        let mut out = Vec::with_capacity(n * d);
        for row in y.data().chunks(d) {
            // w.y + b = a + w_u tanh(a), monotone in a because w_u > -1
            let target = row.iter().zip(w).map(|(a, c)| a * c).sum::<f64>() + b;
            let a = solve_monotone(target, w_u);
            let t = a.tanh();
            out.extend(row.iter().zip(&u_hat).map(|(yi, ui)| yi - ui * t));
        }
        Tensor::new(out, &[n, d])
    }
}

/// Solves `a + k tanh(a) = target` for `k > -1`.
fn solve_monotone(target: f64, k: f64) -> f64 {
    let f = |a: f64| a + k * a.tanh() - target;
    let mut lo = target - k.abs() - 1.0;
    let mut hi = target + k.abs() + 1.0;
    let mut a = target;
    for _ in 0..200 {
        let fa = f(a);
        if fa == 0.0 {
            return a;
        }
        if fa > 0.0 {
            hi = a;
        } else {
            lo = a;
        }
        let t = a.tanh();
        let slope = 1.0 + k * (1.0 - t * t);
        let newton = a - fa / slope;
        a = if slope > 0.0 && newton > lo && newton < hi {
            newton
        } else {
            0.5 * (lo + hi)
        };
        if hi - lo < 1e-15 * (1.0 + a.abs()) {
            break;
        }
    }
    a
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_u_is_identity() {
        let f = Planar::new(&[0.0, 0.0], &[1.0, 2.0], 0.3).unwrap();
        let x = Tensor::new(vec![0.5, -1.0], &[1, 2]).unwrap();
        let (y, ld) = f.forward(&x, None).unwrap();
        assert_eq!(y.data(), x.data());
        assert!(ld.item().abs() < 1e-15);
    }

    #[test]
    fn unit_case_logdet_ln2() {
        let f = Planar::new(&[1.0], &[1.0], 0.0).unwrap();
        let (y, ld) = f.forward(&Tensor::new(vec![0.0], &[1, 1]).unwrap(), None).unwrap();
        assert_eq!(y.data(), &[0.0]);
        assert!((ld.item() - 2f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn zero_w_rejected() {
        assert!(Planar::new(&[1.0], &[0.0], 0.0).is_err());
    }

    #[test]
    fn constraint_keeps_invertible() {
        // w.u = -5 would fold the map; the floor keeps it monotone
        let f = Planar::new(&[-5.0], &[1.0], 0.0).unwrap();
        let x = Tensor::new(vec![-2.0, -0.1, 0.0, 0.4, 3.0], &[5, 1]).unwrap();
        let (y, ld) = f.forward(&x, None).unwrap();
        assert!(ld.all_finite());
        assert!(y.data().windows(2).all(|w| w[0] < w[1]));
        let back = f.inverse(&y, None).unwrap();
        for (a, b) in back.data().iter().zip(x.data()) {
            assert!((a - b).abs() < 1e-9, "{a} vs {b}");
        }
    }
}
