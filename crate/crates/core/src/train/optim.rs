use std::collections::BTreeMap;

use crate::module::Module;
use crate::tensor::Tensor;

pub const BETA1: f64 = 0.9;
pub const BETA2: f64 = 0.999;
pub const EPS: f64 = 1e-8;

/// First and second moments of one parameter tensor.
#[derive(Clone, Debug, PartialEq)]
pub struct Moments {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub t: u64,
}

/// Adam with decoupled weight decay:
/// `p <- p - lr * m_hat / (sqrt(v_hat) + eps) - lr * wd * p`.
///
/// Moments are kept per parameter name with their own step counter, so
/// disjoint parameter groups can be trained in separate runs.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Adam {
    pub moments: BTreeMap<String, Moments>,
}

impl Adam {
    pub fn new() -> Self {
        Adam::default()
    }

    /// Global L2 norm of the gradients of the selected parameters.
    pub fn grad_norm(model: &dyn Module, select: &dyn Fn(&str) -> bool) -> f64 {
        let mut sq = 0.0;
        model.visit("", &mut |name, t| {
            if t.is_tracked() && select(name) {
                if let Some(g) = t.grad() {
                    sq += g.data().iter().map(|v| v * v).sum::<f64>();
                }
            }
        });
        sq.sqrt()
    }

    /// Applies one update to every tracked tensor accepted by `select`,
    /// scaling gradients by `grad_scale` first. Gradients are cleared.
    pub fn step(
        &mut self,
        model: &mut dyn Module,
        select: &dyn Fn(&str) -> bool,
        lr: f64,
        weight_decay: f64,
        grad_scale: f64,
    ) {
        model.visit_mut("", &mut |name, p| {
            if !p.is_tracked() {
                return;
            }
            if !select(name) {
                p.zero_grad();
                return;
            }
            let g = p.grad().map(|g| g.to_vec()).unwrap_or_else(|| vec![0.0; p.numel()]);
            let st = self.moments.entry(name.to_string()).or_insert_with(|| Moments {
                m: vec![0.0; p.numel()],
                v: vec![0.0; p.numel()],
                t: 0,
            });
            st.t += 1;
            let c1 = 1.0 - BETA1.powi(st.t as i32);
            let c2 = 1.0 - BETA2.powi(st.t as i32);
            let mut data = p.to_vec();
            for (i, x) in data.iter_mut().enumerate() {
                let gi = g[i] * grad_scale;
                st.m[i] = BETA1 * st.m[i] + (1.0 - BETA1) * gi;
                st.v[i] = BETA2 * st.v[i] + (1.0 - BETA2) * gi * gi;
                let m_hat = st.m[i] / c1;
                let v_hat = st.v[i] / c2;
                *x -= lr * m_hat / (v_hat.sqrt() + EPS) + lr * weight_decay * *x;
            }
            *p = Tensor::from_shape_vec(p.shape(), data).requires_grad();
        });
    }
}
