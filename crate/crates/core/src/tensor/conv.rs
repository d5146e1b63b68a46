use super::Tensor;
use crate::error::{Error, Result};

#[derive(Clone, Copy)]
struct ConvGeom {
    n: usize,
    cin: usize,
    h: usize,
    w: usize,
    cout: usize,
    kh: usize,
    kw: usize,
    pad: usize,
    oh: usize,
    ow: usize,
}

impl ConvGeom {
    /// Valid output range along one axis for kernel offset `k`:
    /// output `o` reads input `o + k - pad`.
    #[inline]
    fn range(k: usize, pad: usize, in_len: usize, out_len: usize) -> (usize, usize) {
        let lo = pad.saturating_sub(k);
        let hi = (in_len + pad).saturating_sub(k).min(out_len);
        (lo, hi.max(lo))
    }
}

impl Tensor {
    /// Stride-1 2D cross-correlation of an NCHW input with an OIHW kernel and
    /// symmetric zero padding. With `padding = (k - 1) / 2` and odd kernels
    /// the spatial extent is preserved.
    pub fn conv2d(&self, kernel: &Tensor, padding: usize) -> Result<Tensor> {
        let (n, cin, h, w) = match *self.shape() {
            [n, c, h, w] => (n, c, h, w),
            _ => {
                return Err(Error::InvalidShape(format!(
                    "conv2d input must be NCHW, got {:?}",
                    self.shape()
                )))
            }
        };
        let (cout, kin, kh, kw) = match *kernel.shape() {
            [o, i, kh, kw] => (o, i, kh, kw),
            _ => {
                return Err(Error::InvalidShape(format!(
                    "conv2d kernel must be OIHW, got {:?}",
                    kernel.shape()
                )))
            }
        };
        if kin != cin {
            return Err(Error::ShapeMismatch {
                op: "conv2d channels",
                lhs: self.shape().to_vec(),
                rhs: kernel.shape().to_vec(),
            });
        }
        if kh % 2 == 0 || kw % 2 == 0 {
            return Err(Error::InvalidShape(format!(
                "conv2d kernel extents must be odd, got {kh}x{kw}"
            )));
        }
        if h + 2 * padding < kh || w + 2 * padding < kw {
            return Err(Error::InvalidShape(format!(
                "conv2d kernel {kh}x{kw} larger than padded input {h}x{w}"
            )));
        }
        let g = ConvGeom {
            n,
            cin,
            h,
            w,
            cout,
            kh,
            kw,
            pad: padding,
            oh: h + 2 * padding - kh + 1,
            ow: w + 2 * padding - kw + 1,
        };
        let out = conv_forward(self.data(), kernel.data(), g);
        Ok(Tensor::from_op(
            out,
            vec![n, cout, g.oh, g.ow],
            "conv2d",
            vec![self.clone(), kernel.clone()],
            Box::new(move |grad, inputs, _| {
                let (x, k) = (inputs[0].data(), inputs[1].data());
                let gx = inputs[0].is_tracked().then(|| conv_grad_input(grad, k, g));
                let gk = inputs[1].is_tracked().then(|| conv_grad_kernel(grad, x, g));
                vec![gx, gk]
            }),
        ))
    }
}

fn conv_forward(x: &[f64], k: &[f64], g: ConvGeom) -> Vec<f64> {
    let mut out = vec![0.0; g.n * g.cout * g.oh * g.ow];
    for b in 0..g.n {
        for o in 0..g.cout {
            let dst = &mut out[(b * g.cout + o) * g.oh * g.ow..][..g.oh * g.ow];
            for i in 0..g.cin {
                let src = &x[(b * g.cin + i) * g.h * g.w..][..g.h * g.w];
                for ky in 0..g.kh {
                    let (y0, y1) = ConvGeom::range(ky, g.pad, g.h, g.oh);
                    for kx in 0..g.kw {
                        let wv = k[((o * g.cin + i) * g.kh + ky) * g.kw + kx];
                        if wv == 0.0 {
                            continue;
                        }
                        let (x0, x1) = ConvGeom::range(kx, g.pad, g.w, g.ow);
                        for y in y0..y1 {
                            let iy = y + ky - g.pad;
                            let drow = &mut dst[y * g.ow + x0..y * g.ow + x1];
                            let srow = &src[iy * g.w + x0 + kx - g.pad..][..x1 - x0];
                            drow.iter_mut().zip(srow).for_each(|(d, s)| *d += wv * s);
                        }
                    }
                }
            }
        }
    }
    out
}

fn conv_grad_input(grad: &[f64], k: &[f64], g: ConvGeom) -> Vec<f64> {
    let mut gx = vec![0.0; g.n * g.cin * g.h * g.w];
    for b in 0..g.n {
        for o in 0..g.cout {
            let gsrc = &grad[(b * g.cout + o) * g.oh * g.ow..][..g.oh * g.ow];
            for i in 0..g.cin {
                let dst = &mut gx[(b * g.cin + i) * g.h * g.w..][..g.h * g.w];
                for ky in 0..g.kh {
                    let (y0, y1) = ConvGeom::range(ky, g.pad, g.h, g.oh);
                    for kx in 0..g.kw {
                        let wv = k[((o * g.cin + i) * g.kh + ky) * g.kw + kx];
                        if wv == 0.0 {
                            continue;
                        }
                        let (x0, x1) = ConvGeom::range(kx, g.pad, g.w, g.ow);
                        for y in y0..y1 {
                            let iy = y + ky - g.pad;
                            let grow = &gsrc[y * g.ow + x0..y * g.ow + x1];
                            let drow = &mut dst[iy * g.w + x0 + kx - g.pad..][..x1 - x0];
                            drow.iter_mut().zip(grow).for_each(|(d, s)| *d += wv * s);
                        }
                    }
                }
            }
        }
    }
    gx
}

fn conv_grad_kernel(grad: &[f64], x: &[f64], g: ConvGeom) -> Vec<f64> {
    let mut gk = vec![0.0; g.cout * g.cin * g.kh * g.kw];
    for b in 0..g.n {
        for o in 0..g.cout {
            let gsrc = &grad[(b * g.cout + o) * g.oh * g.ow..][..g.oh * g.ow];
            for i in 0..g.cin {
                let src = &x[(b * g.cin + i) * g.h * g.w..][..g.h * g.w];
                for ky in 0..g.kh {
                    let (y0, y1) = ConvGeom::range(ky, g.pad, g.h, g.oh);
                    for kx in 0..g.kw {
                        let (x0, x1) = ConvGeom::range(kx, g.pad, g.w, g.ow);
                        let mut acc = 0.0;
                        for y in y0..y1 {
                            let iy = y + ky - g.pad;
                            let grow = &gsrc[y * g.ow + x0..y * g.ow + x1];
                            let srow = &src[iy * g.w + x0 + kx - g.pad..][..x1 - x0];
                            acc += grow.iter().zip(srow).map(|(a, b)| a * b).sum::<f64>();
                        }
                        gk[((o * g.cin + i) * g.kh + ky) * g.kw + kx] += acc;
                    }
                }
            }
        }
    }
    gk
}
