//! Browser demo of flowood. Three interactive pieces:
//! a Haar pyramid viewer for synthetic textures, a toy planar flow fitted
//! to a two-component Gaussian mixture, and ROC curves from pasted scores.
//!
//! The `*_rgba`/`ToyDensity`/`roc` exports are thin wrappers over plain
//! Rust functions so the same logic is testable natively.

use flowood::bijections::{Bijection, Chain, ElementwiseAffine, Planar};
use flowood::data::{texture_image, Texture};
use flowood::dist::standard_normal_log_prob;
use flowood::haar::HaarPyramid;
use flowood::ood::roc_auc;
use flowood::rng::{normal_vec, rng_for};
use flowood::train::Adam;
use flowood::{Error, Result, Tensor};
use rand::Rng;
use wasm_bindgen::prelude::*;

fn js(e: Error) -> JsError {
    JsError::new(&e.to_string())
}

/// Planar RGB texture in `[0, 1]`, shape `[1, 3, size, size]`.
pub fn texture(kind: &str, size: usize, seed: u64) -> Result<Tensor> {
    if size < 2 || !size.is_power_of_two() {
        return Err(Error::InvalidArgument(format!("size must be a power of two >= 2, got {size}")));
    }
    let kind: Texture = kind.parse()?;
    let px = texture_image(kind, size, 3, &mut rng_for(seed, &[0xde30]));
    Tensor::new(px.iter().map(|&p| p as f64 / 255.0).collect(), &[1, 3, size, size])
}

fn rgba(t: &Tensor, size: usize) -> Vec<u8> {
    let d = t.data();
    let plane = size * size;
    let mut out = Vec::with_capacity(4 * plane);
    for k in 0..plane {
        for c in 0..3 {
            out.push((d[c * plane + k].clamp(0.0, 1.0) * 255.0).round() as u8);
        }
        out.push(255);
    }
    out
}

/// Haar pyramid laid out in the usual mosaic: the coarsest low-pass in the
/// top-left corner, then for each level the horizontal, vertical and
/// diagonal bands to its right, below, and diagonally. Details are shown
/// as `0.5 + gain * coefficient`; low-pass bands are rescaled to `[0, 1]`.
pub fn haar_mosaic(img: &Tensor, levels: usize, gain: f64) -> Result<Tensor> {
    let size = img.shape()[3];
    let pyr = HaarPyramid::build(img)?;
    let levels = levels.clamp(1, pyr.levels());
    let mut out = vec![0.0; 3 * size * size];
    let mut put = |band: &[f64], x0: usize, y0: usize, s: usize, map: &dyn Fn(f64) -> f64| {
        for c in 0..3 {
            for i in 0..s {
                for j in 0..s {
                    out[(c * size + y0 + i) * size + x0 + j] = map(band[(c * s + i) * s + j]);
                }
            }
        }
    };
    let n = pyr.levels();
    for l in 0..levels {
        let s = size >> (l + 1);
        let d = pyr.details[n - 1 - l].data();
        let plane = s * s;
        for (b, (x0, y0)) in [(s, 0), (0, s), (s, s)].into_iter().enumerate() {
            let band: Vec<f64> = (0..3).flat_map(|c| d[(3 * c + b) * plane..][..plane].to_vec()).collect();
            put(&band, x0, y0, s, &|v| 0.5 + gain * v);
        }
    }
    let s = size >> levels;
    let scale = f64::from(1u32 << levels);
    put(pyr.lows[n - levels].data(), 0, 0, s, &|v| v / scale);
    Tensor::new(out, &[1, 3, size, size])
}

#[wasm_bindgen]
pub fn texture_rgba(kind: &str, size: usize, seed: u32) -> std::result::Result<Vec<u8>, JsError> {
    Ok(rgba(&texture(kind, size, seed.into()).map_err(js)?, size))
}

#[wasm_bindgen]
pub fn haar_rgba(kind: &str, size: usize, seed: u32, levels: usize, gain: f64) -> std::result::Result<Vec<u8>, JsError> {
    let img = texture(kind, size, seed.into()).map_err(js)?;
    Ok(rgba(&haar_mosaic(&img, levels, gain).map_err(js)?, size))
}

/// An elementwise affine layer followed by planar layers, fitted by Adam
/// to an equal mixture of `N((+-mu, 0), sd^2 I)`.
#[wasm_bindgen]
pub struct ToyDensity {
    chain: Chain,
    adam: Adam,
    mu: f64,
    sd: f64,
    seed: u64,
    step: u64,
}

impl ToyDensity {
    pub fn create(depth: usize, mu: f64, sd: f64, seed: u64) -> Result<ToyDensity> {
        if !(sd > 0.0) || !mu.is_finite() {
            return Err(Error::InvalidArgument(format!("need finite mu and sd > 0, got {mu}, {sd}")));
        }
        let mut chain = Chain::default();
        chain.push(ElementwiseAffine::new(1.0, 0.0)?);
        for k in 0..depth {
            chain.push(Planar::random(2, seed.wrapping_add(k as u64)));
        }
        Ok(ToyDensity { chain, adam: Adam::new(), mu, sd, seed, step: 0 })
    }

    pub fn batch(&self, n: usize, step: u64) -> Tensor {
        let mut rng = rng_for(self.seed, &[0x70e, step]);
        let z = normal_vec(&mut rng, 2 * n);
        let mut v = Vec::with_capacity(2 * n);
        for i in 0..n {
            let side = if rng.random_bool(0.5) { self.mu } else { -self.mu };
            v.extend([side + self.sd * z[2 * i], self.sd * z[2 * i + 1]]);
        }
        Tensor::from_shape_vec(&[n, 2], v)
    }

    pub fn log_density(&self, points: &Tensor) -> Result<Tensor> {
        let (z, ld) = self.chain.forward(points, None)?;
        standard_normal_log_prob(&z)?.add(&ld)
    }

    /// Runs `steps` Adam updates on fresh batches and returns the last loss.
    pub fn fit(&mut self, steps: usize, lr: f64) -> Result<f64> {
        let mut last = f64::NAN;
        for _ in 0..steps {
            let x = self.batch(256, self.step);
            let loss = self.log_density(&x)?.mean().neg();
            last = loss.item();
            if !last.is_finite() {
                return Err(Error::NonFinite { layer: "toy density".into() });
            }
            loss.backward()?;
            self.adam.step(&mut self.chain, &|_| true, lr, 0.0, 1.0);
            self.step += 1;
        }
        Ok(last)
    }

    /// Model density on an `n x n` grid over `[-extent, extent]^2`, row
    /// `i` at `y = extent - (i + 0.5) * 2 extent / n`.
    pub fn grid(&self, n: usize, extent: f64) -> Result<Vec<f64>> {
        let at = |k: usize| -extent + (k as f64 + 0.5) * 2.0 * extent / n as f64;
        let pts: Vec<f64> = (0..n).flat_map(|i| (0..n).flat_map(move |j| [at(j), -at(i)])).collect();
        let ll = self.log_density(&Tensor::from_shape_vec(&[n * n, 2], pts))?;
        Ok(ll.data().iter().map(|v| v.exp()).collect())
    }
}

#[wasm_bindgen]
impl ToyDensity {
    #[wasm_bindgen(constructor)]
    pub fn new(depth: usize, mu: f64, sd: f64, seed: u32) -> std::result::Result<ToyDensity, JsError> {
        ToyDensity::create(depth, mu, sd, seed.into()).map_err(js)
    }

    pub fn train(&mut self, steps: usize, lr: f64) -> std::result::Result<f64, JsError> {
        self.fit(steps, lr).map_err(js)
    }

    pub fn density(&self, n: usize, extent: f64) -> std::result::Result<Vec<f64>, JsError> {
        self.grid(n, extent).map_err(js)
    }

    #[wasm_bindgen(getter)]
    pub fn steps(&self) -> f64 {
        self.step as f64
    }
}

/// ROC points and area, in-distribution as the positive class.
#[wasm_bindgen]
pub struct RocView {
    auc: f64,
    fpr: Vec<f64>,
    tpr: Vec<f64>,
}

#[wasm_bindgen]
impl RocView {
    #[wasm_bindgen(getter)]
    pub fn auc(&self) -> f64 {
        self.auc
    }

    #[wasm_bindgen(getter)]
    pub fn fpr(&self) -> Vec<f64> {
        self.fpr.clone()
    }

    #[wasm_bindgen(getter)]
    pub fn tpr(&self) -> Vec<f64> {
        self.tpr.clone()
    }
}

/// Parses numbers separated by commas, whitespace or newlines.
pub fn parse_scores(text: &str) -> Result<Vec<f64>> {
    text.split(|c: char| c == ',' || c.is_whitespace())
        .filter(|t| !t.is_empty())
        .map(|t| t.parse().map_err(|_| Error::InvalidArgument(format!("not a number: {t:?}"))))
        .collect()
}

pub fn roc_view(scores_in: &str, scores_out: &str) -> Result<RocView> {
    let roc = roc_auc(&parse_scores(scores_in)?, &parse_scores(scores_out)?)?;
    Ok(RocView {
        auc: roc.auc,
        fpr: roc.points.iter().map(|p| p.fpr).collect(),
        tpr: roc.points.iter().map(|p| p.tpr).collect(),
    })
}

#[wasm_bindgen]
pub fn roc(scores_in: &str, scores_out: &str) -> std::result::Result<RocView, JsError> {
    roc_view(scores_in, scores_out).map_err(js)
}
