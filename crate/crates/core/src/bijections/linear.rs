use super::{constant_logdet, require_vectors, Bijection};
use crate::error::{Error, Result};
use crate::linalg::{lu_decompose, lu_inverse, random_orthogonal, LuFactors};
use crate::rng::rng_for;
use crate::tensor::Tensor;

/// A square matrix stored as `W = P L (U + diag(sign * exp(log_s)))`.
///
/// `P` and the diagonal signs are fixed buffers; the strictly triangular
/// parts of `L` and `U` and the log-magnitudes of the diagonal are learned.
/// `ln|det W| = sum(log_s)`, and `W` can never become singular.
pub struct LuMatrix {
    pub(crate) perm: Tensor,
    pub(crate) lower: Tensor,
    pub(crate) upper: Tensor,
    pub(crate) log_s: Tensor,
    pub(crate) sign_s: Tensor,
}

crate::impl_module!(LuMatrix { perm, lower, upper, log_s, sign_s });

impl LuMatrix {
    pub fn identity(n: usize) -> Self {
        LuMatrix {
            perm: Tensor::vector(&(0..n).map(|i| i as f64).collect::<Vec<_>>()),
            lower: Tensor::zeros(&[n, n]).requires_grad(),
            upper: Tensor::zeros(&[n, n]).requires_grad(),
            log_s: Tensor::zeros(&[n]).requires_grad(),
            sign_s: Tensor::ones(&[n]),
        }
    }

    /// LU factors of a seeded random rotation, so `|det W| = 1` at init.
    pub fn random_orthogonal(n: usize, seed: u64) -> Self {
        let q = random_orthogonal(n, &mut rng_for(seed, &[0x1c0]));
        let f = lu_decompose(&q, n).expect("orthogonal matrices are nonsingular");
        Self::from_factors(&f, n)
    }

    /// Factorizes a dense nonsingular matrix.
    pub fn from_dense(a: &[f64], n: usize) -> Result<Self> {
        if a.len() != n * n {
            return Err(Error::InvalidShape(format!("expected {n}x{n} matrix")));
        }
        let f = lu_decompose(a, n)
            .ok_or_else(|| Error::InvalidArgument("matrix is singular".into()))?;
        Ok(Self::from_factors(&f, n))
    }

    fn from_factors(f: &LuFactors, n: usize) -> Self {
        let mut lower = f.lower.clone();
        let mut upper = f.upper.clone();
        let mut log_s = vec![0.0; n];
        let mut sign = vec![0.0; n];
        for i in 0..n {
            let d = upper[i * n + i];
            log_s[i] = d.abs().ln();
            sign[i] = d.signum();
            lower[i * n + i] = 0.0;
            upper[i * n + i] = 0.0;
        }
        LuMatrix {
            perm: Tensor::vector(&f.perm.iter().map(|&p| p as f64).collect::<Vec<_>>()),
            lower: Tensor::from_shape_vec(&[n, n], lower).requires_grad(),
            upper: Tensor::from_shape_vec(&[n, n], upper).requires_grad(),
            log_s: Tensor::vector(&log_s).requires_grad(),
            sign_s: Tensor::vector(&sign),
        }
    }

    pub fn dim(&self) -> usize {
        self.log_s.numel()
    }

    fn perm_indices(&self) -> Vec<usize> {
        self.perm.data().iter().map(|&p| p as usize).collect()
    }

    fn masks(n: usize) -> (Tensor, Tensor) {
        let mut lo = vec![0.0; n * n];
        let mut up = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..n {
                if j < i {
                    lo[i * n + j] = 1.0;
                } else if j > i {
                    up[i * n + j] = 1.0;
                }
            }
        }
        (
            Tensor::from_shape_vec(&[n, n], lo),
            Tensor::from_shape_vec(&[n, n], up),
        )
    }

    /// The dense matrix, differentiable with respect to the learned factors.
    pub fn matrix(&self) -> Result<Tensor> {
        let n = self.dim();
        let (lo_mask, up_mask) = Self::masks(n);
        let eye = Tensor::eye(n);
        let l = self.lower.mul(&lo_mask)?.add(&eye)?;
        let diag = self.sign_s.mul(&self.log_s.exp())?.reshape(&[1, n])?;
        let u = self.upper.mul(&up_mask)?.add(&eye.mul(&diag)?)?;
        let p = Tensor::from_shape_vec(&[n, n], crate::linalg::permutation_matrix(&self.perm_indices()));
        p.matmul(&l.matmul(&u)?)
    }

    /// `ln|det W|` as a scalar tensor.
    pub fn log_abs_det(&self) -> Tensor {
        self.log_s.sum()
    }

    /// Current factors as plain matrices.
    pub fn factors(&self) -> LuFactors {
        let n = self.dim();
        let mut lower = self.lower.to_vec();
        let mut upper = self.upper.to_vec();
        for i in 0..n {
            for j in 0..n {
                if j > i {
                    lower[i * n + j] = 0.0;
                } else if j < i {
                    upper[i * n + j] = 0.0;
                }
            }
            lower[i * n + i] = 1.0;
            upper[i * n + i] = self.sign_s.data()[i] * self.log_s.data()[i].exp();
        }
        LuFactors {
            perm: self.perm_indices(),
            lower,
            upper,
        }
    }

    /// `W^-1` computed with two triangular solves per column.
    pub fn inverse_dense(&self) -> Vec<f64> {
        lu_inverse(&self.factors(), self.dim())
    }
}

/// `y = W x + b` on `[N, D]` vectors with `W` in LU form.
pub struct LinearLu {
    pub(crate) weight: LuMatrix,
    pub(crate) bias: Tensor,
}

crate::impl_module!(LinearLu { weight, bias });

impl LinearLu {
    pub fn identity(dim: usize) -> Self {
        LinearLu {
            weight: LuMatrix::identity(dim),
            bias: Tensor::zeros(&[dim]).requires_grad(),
        }
    }

    pub fn random(dim: usize, seed: u64) -> Self {
        LinearLu {
            weight: LuMatrix::random_orthogonal(dim, seed),
            bias: Tensor::zeros(&[dim]).requires_grad(),
        }
    }

    pub fn from_parts(weight: LuMatrix, bias: &[f64]) -> Result<Self> {
        if bias.len() != weight.dim() {
            return Err(Error::InvalidShape("bias length must match matrix".into()));
        }
        Ok(LinearLu {
            weight,
            bias: Tensor::vector(bias).requires_grad(),
        })
    }

    pub fn weight(&self) -> &LuMatrix {
        &self.weight
    }
}

impl Bijection for LinearLu {
    fn kind(&self) -> &'static str {
        "linear_lu"
    }

    fn forward(&self, x: &Tensor, _cond: Option<&Tensor>) -> Result<(Tensor, Tensor)> {
        let d = self.weight.dim();
        let n = require_vectors(x, d, "linear_lu")?;
        let w = self.weight.matrix()?;
        let y = x.matmul(&w.transpose()?)?.add(&self.bias.reshape(&[1, d])?)?;
        Ok((y, constant_logdet(n, &self.weight.log_abs_det())?))
    }

    fn inverse(&self, y: &Tensor, _cond: Option<&Tensor>) -> Result<Tensor> {
        let d = self.weight.dim();
        require_vectors(y, d, "linear_lu")?;
        let inv = Tensor::from_shape_vec(&[d, d], self.weight.inverse_dense());
        y.sub(&self.bias.reshape(&[1, d])?)?.matmul(&inv.transpose()?)
    }
}
