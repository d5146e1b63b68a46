//! Small dense row-major matrix routines used to initialize and invert
//! LU-parametrized linear maps.

use rand::Rng;

use crate::rng::normal_vec;

/// `P`, unit-lower `L` and upper `U` with `A = P L U`.
#[derive(Clone, Debug)]
pub struct LuFactors {
    /// `perm[i]` is the column of the 1 in row `i` of `P`.
    pub perm: Vec<usize>,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

/// Doolittle LU with partial pivoting. Returns `None` for singular input.
pub fn lu_decompose(a: &[f64], n: usize) -> Option<LuFactors> {
    let mut u = a.to_vec();
    let mut l = vec![0.0; n * n];
    // rows[i]: original row now sitting at position i
    let mut rows: Vec<usize> = (0..n).collect();
    for k in 0..n {
        let pivot = (k..n).max_by(|&i, &j| u[i * n + k].abs().total_cmp(&u[j * n + k].abs()))?;
        if u[pivot * n + k] == 0.0 {
            return None;
        }
        if pivot != k {
            for c in 0..n {
                u.swap(k * n + c, pivot * n + c);
                l.swap(k * n + c, pivot * n + c);
            }
            rows.swap(k, pivot);
        }
        for i in k + 1..n {
            let f = u[i * n + k] / u[k * n + k];
            l[i * n + k] = f;
            for c in k..n {
                u[i * n + c] -= f * u[k * n + c];
            }
        }
    }
    for i in 0..n {
        l[i * n + i] = 1.0;
    }
    // Pr A = L U with Pr[i][rows[i]] = 1, so A = Prᵀ L U and P = Prᵀ:
    // P[rows[i]][i] = 1  =>  perm[rows[i]] = i
    let mut perm = vec![0; n];
    for (i, &r) in rows.iter().enumerate() {
        perm[r] = i;
    }
    Some(LuFactors { perm, lower: l, upper: u })
}

pub fn permutation_matrix(perm: &[usize]) -> Vec<f64> {
    let n = perm.len();
    let mut p = vec![0.0; n * n];
    for (i, &j) in perm.iter().enumerate() {
        p[i * n + j] = 1.0;
    }
    p
}

pub fn matmul(a: &[f64], b: &[f64], n: usize) -> Vec<f64> {
    crate::tensor::matmul_square(a, b, n)
}

/// Solves `L x = b` for unit-lower-triangular `L`.
pub fn solve_unit_lower(l: &[f64], b: &[f64], n: usize) -> Vec<f64> {
    let mut x = b.to_vec();
    for i in 0..n {
        let s: f64 = (0..i).map(|j| l[i * n + j] * x[j]).sum();
        x[i] -= s;
    }
    x
}

/// Solves `U x = b` for upper-triangular `U` with nonzero diagonal.
pub fn solve_upper(u: &[f64], b: &[f64], n: usize) -> Vec<f64> {
    let mut x = b.to_vec();
    for i in (0..n).rev() {
        let s: f64 = (i + 1..n).map(|j| u[i * n + j] * x[j]).sum();
        x[i] = (x[i] - s) / u[i * n + i];
    }
    x
}

/// Dense inverse of `P L U` built column by column from triangular solves.
pub fn lu_inverse(f: &LuFactors, n: usize) -> Vec<f64> {
    let mut inv = vec![0.0; n * n];
    for col in 0..n {
        // P x = e_col  =>  x = Pᵀ e_col ; (Pᵀ)[i][col] = P[col][i]
        let mut e = vec![0.0; n];
        e[f.perm[col]] = 1.0;
        let y = solve_unit_lower(&f.lower, &e, n);
        let x = solve_upper(&f.upper, &y, n);
        for r in 0..n {
            inv[r * n + col] = x[r];
        }
    }
    inv
}

/// A random orthogonal matrix from Gram-Schmidt on a Gaussian matrix.
pub fn random_orthogonal(n: usize, rng: &mut impl Rng) -> Vec<f64> {
    loop {
        let g = normal_vec(rng, n * n);
        if let Some(q) = gram_schmidt(&g, n) {
            return q;
        }
    }
}

fn gram_schmidt(a: &[f64], n: usize) -> Option<Vec<f64>> {
    // orthonormalize the rows of `a`
    let mut q = a.to_vec();
    for i in 0..n {
        for j in 0..i {
            let d: f64 = (0..n).map(|k| q[i * n + k] * q[j * n + k]).sum();
            for k in 0..n {
                q[i * n + k] -= d * q[j * n + k];
            }
        }
        let norm = (0..n).map(|k| q[i * n + k].powi(2)).sum::<f64>().sqrt();
        if norm < 1e-8 {
            return None;
        }
        for k in 0..n {
            q[i * n + k] /= norm;
        }
    }
    Some(q)
}
