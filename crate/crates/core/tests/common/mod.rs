//! Independent reference computations used by the integration tests.
#![allow(dead_code)]

use flowood::module::Module;
use flowood::rng::{normal_vec, rng_for};
use flowood::Tensor;
use nalgebra::DMatrix;

/// Central-difference Jacobian of `f: R^n -> R^m` at `x`, row-major `m x n`.
pub fn jacobian(f: &dyn Fn(&[f64]) -> Vec<f64>, x: &[f64], h: f64) -> DMatrix<f64> {
    let m = f(x).len();
    let mut jac = DMatrix::zeros(m, x.len());
    let mut xp = x.to_vec();
    for j in 0..x.len() {
        xp[j] = x[j] + h;
        let fp = f(&xp);
        xp[j] = x[j] - h;
        let fm = f(&xp);
        xp[j] = x[j];
        for i in 0..m {
            jac[(i, j)] = (fp[i] - fm[i]) / (2.0 * h);
        }
    }
    jac
}

/// `ln|det J|` via nalgebra's LU factorization.
pub fn log_abs_det(j: &DMatrix<f64>) -> f64 {
    j.clone().lu().determinant().abs().ln()
}

/// Central-difference gradient of a scalar function.
pub fn numeric_grad(f: &dyn Fn(&[f64]) -> f64, x: &[f64], h: f64) -> Vec<f64> {
    let mut xp = x.to_vec();
    (0..x.len())
        .map(|j| {
            xp[j] = x[j] + h;
            let fp = f(&xp);
            xp[j] = x[j] - h;
            let fm = f(&xp);
            xp[j] = x[j];
            (fp - fm) / (2.0 * h)
        })
        .collect()
}

/// `|a - b| <= rel * max(|a|, |b|) + abs`.
pub fn close(a: f64, b: f64, rel: f64, abs: f64) -> bool {
    (a - b).abs() <= rel * a.abs().max(b.abs()) + abs
}

/// `P(in > out) + P(in = out) / 2` by exhaustive pair counting.
pub fn mann_whitney(scores_in: &[f64], scores_out: &[f64]) -> f64 {
    let mut twice = 0u64;
    for &a in scores_in {
        for &b in scores_out {
            twice += if a > b {
                2
            } else if a == b {
                1
            } else {
                0
            };
        }
    }
    twice as f64 / (2.0 * (scores_in.len() * scores_out.len()) as f64)
}

/// Composite Simpson rule with `n` (even) intervals.
pub fn simpson(f: &dyn Fn(f64) -> f64, a: f64, b: f64, n: usize) -> f64 {
    assert!(n % 2 == 0);
    let h = (b - a) / n as f64;
    let mut s = f(a) + f(b);
    for i in 1..n {
        let w = if i % 2 == 1 { 4.0 } else { 2.0 };
        s += w * f(a + i as f64 * h);
    }
    s * h / 3.0
}

/// Density of an equal-weight mixture of two isotropic 2D Gaussians at
/// `(+-mu, 0)` with standard deviation `sd`.
pub fn mixture_log_density(x: f64, y: f64, mu: f64, sd: f64) -> f64 {
    let norm = 1.0 / (2.0 * std::f64::consts::PI * sd * sd);
    let g = |m: f64| norm * (-((x - m).powi(2) + y * y) / (2.0 * sd * sd)).exp();
    (0.5 * g(mu) + 0.5 * g(-mu)).ln()
}

/// Replaces every tracked tensor with `N(0, scale^2)` draws.
pub fn randomize(m: &mut dyn Module, scale: f64, seed: u64) {
    let mut rng = rng_for(seed, &[0x7e57]);
    m.visit_mut("", &mut |_, t| {
        if t.is_tracked() {
            let v: Vec<f64> = normal_vec(&mut rng, t.numel()).iter().map(|v| v * scale).collect();
            *t = Tensor::from_shape_vec(t.shape(), v).requires_grad();
        }
    });
}

/// Adds `N(0, scale^2)` noise to every tracked tensor.
pub fn jitter(m: &mut dyn Module, scale: f64, seed: u64) {
    let mut rng = rng_for(seed, &[0x717]);
    m.visit_mut("", &mut |_, t| {
        if t.is_tracked() {
            let v: Vec<f64> = t
                .data()
                .iter()
                .zip(normal_vec(&mut rng, t.numel()))
                .map(|(a, n)| a + n * scale)
                .collect();
            *t = Tensor::from_shape_vec(t.shape(), v).requires_grad();
        }
    });
}

pub fn random_tensor(shape: &[usize], scale: f64, seed: u64) -> Tensor {
    let n = shape.iter().product();
    let v = normal_vec(&mut rng_for(seed, &[0xda7a]), n).iter().map(|v| v * scale).collect();
    Tensor::from_shape_vec(shape, v)
}
