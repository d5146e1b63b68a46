//! Orthonormal 2D Haar analysis and synthesis.
//!
//! For each 2x2 block `[[a, b], [c, d]]`:
//! `low = (a+b+c+d)/2`, `h = (a+b-c-d)/2`, `v = (a-b+c-d)/2`,
//! `d = (a-b-c+d)/2`. Details of input channel `c` sit at output channels
//! `3c` (h), `3c+1` (v), `3c+2` (d). The map is orthonormal, so its log-det
//! is zero.

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Band order of the detail channels.
pub const DETAIL_ORDER: [&str; 3] = ["horizontal", "vertical", "diagonal"];

fn nchw(x: &Tensor, what: &str) -> Result<[usize; 4]> {
    match *x.shape() {
        [n, c, h, w] => Ok([n, c, h, w]),
        _ => Err(Error::InvalidShape(format!("{what} needs NCHW, got {:?}", x.shape()))),
    }
}

/// `[N, C, 2h, 2w] -> ([N, C, h, w], [N, 3C, h, w])`.
pub fn analyze(x: &Tensor) -> Result<(Tensor, Tensor)> {
    let [n, c, h2, w2] = nchw(x, "haar analysis")?;
    if h2 % 2 != 0 || w2 % 2 != 0 || h2 == 0 || w2 == 0 {
        return Err(Error::InvalidShape(format!("haar analysis needs even extents, got {h2}x{w2}")));
    }
    let (h, w) = (h2 / 2, w2 / 2);
    let src = x.data();
    let mut low = vec![0.0; n * c * h * w];
    let mut det = vec![0.0; n * 3 * c * h * w];
    for b in 0..n {
        for ch in 0..c {
            let plane = &src[(b * c + ch) * h2 * w2..][..h2 * w2];
            let lo = &mut low[(b * c + ch) * h * w..][..h * w];
            let base = (b * 3 * c + 3 * ch) * h * w;
            for i in 0..h {
                for j in 0..w {
                    let p = 2 * i * w2 + 2 * j;
                    let (a, bb, cc, d) = (plane[p], plane[p + 1], plane[p + w2], plane[p + w2 + 1]);
                    let k = i * w + j;
                    lo[k] = 0.5 * (a + bb + cc + d);
                    det[base + k] = 0.5 * (a + bb - cc - d);
                    det[base + h * w + k] = 0.5 * (a - bb + cc - d);
                    det[base + 2 * h * w + k] = 0.5 * (a - bb - cc + d);
                }
            }
        }
    }
    Ok((
        Tensor::new(low, &[n, c, h, w])?,
        Tensor::new(det, &[n, 3 * c, h, w])?,
    ))
}

/// Exact inverse of [`analyze`].
pub fn synthesize(low: &Tensor, detail: &Tensor) -> Result<Tensor> {
    let [n, c, h, w] = nchw(low, "haar synthesis")?;
    if detail.shape() != [n, 3 * c, h, w] {
        return Err(Error::ShapeMismatch {
            op: "haar synthesis",
            lhs: low.shape().to_vec(),
            rhs: detail.shape().to_vec(),
        });
    }
    let (h2, w2) = (2 * h, 2 * w);
    let (lo, det) = (low.data(), detail.data());
    let mut out = vec![0.0; n * c * h2 * w2];
    for b in 0..n {
        for ch in 0..c {
            let l = &lo[(b * c + ch) * h * w..][..h * w];
            let base = (b * 3 * c + 3 * ch) * h * w;
            let plane = &mut out[(b * c + ch) * h2 * w2..][..h2 * w2];
            for i in 0..h {
                for j in 0..w {
                    let k = i * w + j;
                    let (s, dh, dv, dd) = (l[k], det[base + k], det[base + h * w + k], det[base + 2 * h * w + k]);
                    let p = 2 * i * w2 + 2 * j;
                    plane[p] = 0.5 * (s + dh + dv + dd);
                    plane[p + 1] = 0.5 * (s + dh - dv - dd);
                    plane[p + w2] = 0.5 * (s - dh + dv - dd);
                    plane[p + w2 + 1] = 0.5 * (s - dh - dv + dd);
                }
            }
        }
    }
    Tensor::new(out, &[n, c, h2, w2])
}

/// Lows `I_0..I_n` (extent `2^i`) and details `D_0..D_{n-1}` of a batch.
#[derive(Clone, Debug)]
pub struct HaarPyramid {
    pub lows: Vec<Tensor>,
    pub details: Vec<Tensor>,
}

impl HaarPyramid {
    /// Cascaded analysis of square power-of-two images down to `1 x 1`.
    pub fn build(x: &Tensor) -> Result<Self> {
        let [_, _, h, w] = nchw(x, "pyramid")?;
        if h != w || !h.is_power_of_two() {
            return Err(Error::InvalidShape(format!(
                "pyramid needs square power-of-two images, got {h}x{w}"
            )));
        }
        let n = h.trailing_zeros() as usize;
        let mut lows = vec![x.clone()];
        let mut details = Vec::with_capacity(n);
        for _ in 0..n {
            let (lo, d) = analyze(lows.last().expect("nonempty"))?;
            lows.push(lo);
            details.push(d);
        }
        lows.reverse();
        details.reverse();
        Ok(HaarPyramid { lows, details })
    }

    pub fn levels(&self) -> usize {
        self.details.len()
    }

    /// Full-resolution image from `I_0` and every detail stack.
    pub fn reconstruct(&self) -> Result<Tensor> {
        let mut img = self.lows[0].clone();
        for d in &self.details {
            img = synthesize(&img, d)?;
        }
        Ok(img)
    }
}
