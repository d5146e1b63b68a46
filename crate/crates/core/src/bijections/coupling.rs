use super::{as_nchw, restore_rank, Bijection, Partition};
use crate::error::{Error, Result};
use crate::rng::{normal_vec, rng_for};
use crate::tensor::Tensor;

/// Bound on the coupling log-scale: `s = SCALE_BOUND * tanh(s_raw)`.
pub const SCALE_BOUND: f64 = 2.0;

/// Single-hidden-layer CNN producing `(s_raw, t)`:
/// conv3x3 -> ReLU -> conv3x3, with the output layer zero-initialized.
pub struct Conditioner {
    pub(crate) hidden_weight: Tensor,
    pub(crate) hidden_bias: Tensor,
    pub(crate) out_weight: Tensor,
    pub(crate) out_bias: Tensor,
}

crate::impl_module!(Conditioner { hidden_weight, hidden_bias, out_weight, out_bias });

impl Conditioner {
    /// `out_channels` is the size of each of `s` and `t`.
    pub fn new(in_channels: usize, hidden: usize, out_channels: usize, seed: u64) -> Result<Self> {
        if in_channels == 0 || hidden == 0 || out_channels == 0 {
            return Err(Error::InvalidArgument("conditioner sizes must be positive".into()));
        }
        let fan_in = (in_channels * 9) as f64;
        let std = fan_in.recip().sqrt();
        let w: Vec<f64> = normal_vec(&mut rng_for(seed, &[0xc0d]), hidden * in_channels * 9)
            .into_iter()
            .map(|v| v * std)
            .collect();
        Ok(Conditioner {
            hidden_weight: Tensor::new(w, &[hidden, in_channels, 3, 3])?.requires_grad(),
            hidden_bias: Tensor::zeros(&[hidden]).requires_grad(),
            out_weight: Tensor::zeros(&[2 * out_channels, hidden, 3, 3]).requires_grad(),
            out_bias: Tensor::zeros(&[2 * out_channels]).requires_grad(),
        })
    }

    pub fn in_channels(&self) -> usize {
        self.hidden_weight.shape()[1]
    }

    pub fn hidden_channels(&self) -> usize {
        self.hidden_weight.shape()[0]
    }

    pub fn out_channels(&self) -> usize {
        self.out_bias.numel() / 2
    }

    /// Returns `(s_raw, t)`, each `[N, out_channels, H, W]`.
    pub fn forward(&self, input: &Tensor) -> Result<(Tensor, Tensor)> {
        let h = self.hidden_weight.shape()[0];
        let o = self.out_bias.numel();
        let hidden = input
            .conv2d(&self.hidden_weight, 1)?
            .add(&self.hidden_bias.reshape(&[1, h, 1, 1])?)?
            .relu();
        let out = hidden
            .conv2d(&self.out_weight, 1)?
            .add(&self.out_bias.reshape(&[1, o, 1, 1])?)?;
        Ok((out.narrow(1, 0, o / 2)?, out.narrow(1, o / 2, o / 2)?))
    }
}

/// `y_A = x_A * exp(s) + t`, `y_B = x_B`, with `(s, t)` computed from `x_B`
/// and an optional context tensor concatenated along channels.
pub struct AffineCoupling {
    partition: Partition,
    channels: usize,
    context_channels: usize,
    pub(crate) conditioner: Conditioner,
}

crate::impl_module!(AffineCoupling { conditioner });

impl AffineCoupling {
    pub fn new(
        partition: Partition,
        channels: usize,
        context_channels: usize,
        hidden: usize,
        seed: u64,
    ) -> Result<Self> {
        let (cond_in, cond_out) = match &partition {
            Partition::Channels { a, b } => {
                if a.is_empty() || b.is_empty() {
                    return Err(Error::InvalidArgument("coupling partition has an empty side".into()));
                }
                let mut all: Vec<usize> = a.iter().chain(b).copied().collect();
                all.sort_unstable();
                if all != (0..channels).collect::<Vec<_>>() {
                    return Err(Error::InvalidArgument(format!(
                        "partition {a:?}/{b:?} does not cover {channels} channels"
                    )));
                }
                (b.len(), a.len())
            }
            Partition::Spatial { mask, .. } => {
                if mask.iter().all(|&m| m == 0.0) || mask.iter().all(|&m| m != 0.0) {
                    return Err(Error::InvalidArgument("coupling mask has an empty side".into()));
                }
                (channels, channels)
            }
        };
        Ok(AffineCoupling {
            conditioner: Conditioner::new(cond_in + context_channels, hidden, cond_out, seed)?,
            partition,
            channels,
            context_channels,
        })
    }

    pub fn partition(&self) -> &Partition {
        &self.partition
    }

    pub fn conditioner(&self) -> &Conditioner {
        &self.conditioner
    }

    fn check(&self, x: &Tensor, ctx: Option<&Tensor>) -> Result<Tensor> {
        let v = as_nchw(x)?;
        let s = v.shape();
        if s[1] != self.channels {
            return Err(Error::ShapeMismatch {
                op: "affine_coupling",
                lhs: s.to_vec(),
                rhs: vec![self.channels],
            });
        }
        if let Partition::Spatial { h, w, .. } = self.partition {
            if (s[2], s[3]) != (h, w) {
                return Err(Error::InvalidShape(format!(
                    "coupling mask is {h}x{w}, input is {}x{}",
                    s[2], s[3]
                )));
            }
        }
        match (ctx, self.context_channels) {
            (None, 0) => {}
            (Some(c), k) if k > 0 => {
                let cs = c.shape();
                if cs.len() != 4 || cs[0] != s[0] || cs[1] != k || cs[2] != s[2] || cs[3] != s[3] {
                    return Err(Error::ShapeMismatch {
                        op: "coupling context",
                        lhs: s.to_vec(),
                        rhs: cs.to_vec(),
                    });
                }
            }
            (None, k) => {
                return Err(Error::InvalidArgument(format!("coupling expects a {k}-channel context")))
            }
            (Some(_), _) => {
                return Err(Error::InvalidArgument("coupling was built without context".into()))
            }
        }
        Ok(v)
    }

    fn condition(&self, xb: &Tensor, ctx: Option<&Tensor>) -> Result<(Tensor, Tensor)> {
        let input = match ctx {
            Some(c) => Tensor::concat(&[xb, c], 1)?,
            None => xb.clone(),
        };
        let (s_raw, t) = self.conditioner.forward(&input)?;
        Ok((s_raw.tanh().scale(SCALE_BOUND), t))
    }

    fn spatial_mask(&self) -> Result<Option<Tensor>> {
        match &self.partition {
            Partition::Spatial { mask, h, w } => Ok(Some(Tensor::new(mask.clone(), &[1, 1, *h, *w])?)),
            Partition::Channels { .. } => Ok(None),
        }
    }
}

/// Inverse of the permutation `a ++ b`.
fn restore_order(a: &[usize], b: &[usize]) -> Vec<usize> {
    let mut inv = vec![0; a.len() + b.len()];
    for (pos, &ch) in a.iter().chain(b).enumerate() {
        inv[ch] = pos;
    }
    inv
}

impl Bijection for AffineCoupling {
    fn kind(&self) -> &'static str {
        "affine_coupling"
    }

    fn forward(&self, x: &Tensor, ctx: Option<&Tensor>) -> Result<(Tensor, Tensor)> {
        let v = self.check(x, ctx)?;
        let (y, s) = match &self.partition {
            Partition::Channels { a, b } => {
                let xa = v.index_select(1, a)?;
                let xb = v.index_select(1, b)?;
                let (s, t) = self.condition(&xb, ctx)?;
                let ya = xa.mul(&s.exp())?.add(&t)?;
                let y = Tensor::concat(&[&ya, &xb], 1)?.index_select(1, &restore_order(a, b))?;
                (y, s)
            }
            Partition::Spatial { .. } => {
                let m = self.spatial_mask()?.expect("spatial partition");
                let xb = v.mul(&m.neg().shift(1.0))?;
                let (s, t) = self.condition(&xb, ctx)?;
                let (s, t) = (s.mul(&m)?, t.mul(&m)?);
                (v.mul(&s.exp())?.add(&t)?, s)
            }
        };
        Ok((restore_rank(y, x.shape())?, s.sum_per_sample()?))
    }

    fn inverse(&self, y: &Tensor, ctx: Option<&Tensor>) -> Result<Tensor> {
        let v = self.check(y, ctx)?;
        let x = match &self.partition {
            Partition::Channels { a, b } => {
                let ya = v.index_select(1, a)?;
                let xb = v.index_select(1, b)?;
                let (s, t) = self.condition(&xb, ctx)?;
                let xa = ya.sub(&t)?.mul(&s.neg().exp())?;
                Tensor::concat(&[&xa, &xb], 1)?.index_select(1, &restore_order(a, b))?
            }
            Partition::Spatial { .. } => {
                let m = self.spatial_mask()?.expect("spatial partition");
                let xb = v.mul(&m.neg().shift(1.0))?;
                let (s, t) = self.condition(&xb, ctx)?;
                v.sub(&t.mul(&m)?)?.mul(&s.mul(&m)?.neg().exp())?
            }
        };
        restore_rank(x, y.shape())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bijections::{make_mask, MaskScheme, MaskSpec};
    use crate::module::Module;

    fn set(m: &mut impl Module, name: &str, value: Tensor) {
        m.visit_mut("", &mut |n, t| {
            if n == name {
                *t = value.clone();
            }
        });
    }

    #[test]
    fn zero_output_layer_is_identity() {
        let p = make_mask(&MaskSpec::new(MaskScheme::ChannelWise, 0), &[4, 3, 3]).unwrap();
        let f = AffineCoupling::new(p, 4, 0, 8, 1).unwrap();
        let x = Tensor::new((0..72).map(|i| (i as f64 * 0.3).sin()).collect(), &[2, 4, 3, 3]).unwrap();
        let (y, ld) = f.forward(&x, None).unwrap();
        assert_eq!(y.data(), x.data());
        assert_eq!(ld.data(), &[0.0, 0.0]);
    }

    #[test]
    fn hand_case_scale_ln2_shift_one() {
        let p = Partition::Channels { a: vec![0], b: vec![1] };
        let mut f = AffineCoupling::new(p, 2, 0, 4, 1).unwrap();
        let raw = (2f64.ln() / SCALE_BOUND).atanh();
        set(&mut f, "conditioner.out_bias", Tensor::vector(&[raw, 1.0]).requires_grad());
        let x = Tensor::new(vec![3.0, -0.25], &[1, 2]).unwrap();
        let (y, ld) = f.forward(&x, None).unwrap();
        assert!((y.data()[0] - 7.0).abs() < 1e-12);
        assert_eq!(y.data()[1], -0.25);
        assert!((ld.item() - 2f64.ln()).abs() < 1e-12);
        let back = f.inverse(&y, None).unwrap();
        assert!((back.data()[0] - 3.0).abs() < 1e-12);
    }

    #[test]
    fn empty_side_rejected() {
        let p = Partition::Channels { a: vec![0, 1], b: vec![] };
        assert!(AffineCoupling::new(p, 2, 0, 4, 1).is_err());
    }

    #[test]
    fn checkerboard_round_trip_with_context() {
        let p = make_mask(&MaskSpec::new(MaskScheme::Checkerboard, 1), &[2, 2, 2]).unwrap();
        let mut f = AffineCoupling::new(p, 2, 1, 4, 5).unwrap();
        let w: Vec<f64> = (0..4 * 4 * 9).map(|i| ((i * 7) % 5) as f64 * 0.05 - 0.1).collect();
        set(&mut f, "conditioner.out_weight", Tensor::new(w, &[4, 4, 3, 3]).unwrap().requires_grad());
        let x = Tensor::new((0..8).map(|i| i as f64 * 0.2 - 0.5).collect(), &[1, 2, 2, 2]).unwrap();
        let ctx = Tensor::new(vec![0.3, -0.1, 0.9, 0.2], &[1, 1, 2, 2]).unwrap();
        let (y, _) = f.forward(&x, Some(&ctx)).unwrap();
        assert_ne!(y.data(), x.data());
        // B pixels (mask 0) pass through untouched
        assert_eq!(y.data()[0], x.data()[0]);
        assert_eq!(y.data()[3], x.data()[3]);
        let back = f.inverse(&y, Some(&ctx)).unwrap();
        for (a, b) in back.data().iter().zip(x.data()) {
            assert!((a - b).abs() < 1e-12);
        }
        assert!(f.forward(&x, None).is_err());
    }
}
