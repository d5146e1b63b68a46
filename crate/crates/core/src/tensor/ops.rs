use super::{numel_of, Tensor};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BinaryKind {
    Add,
    Sub,
    Mul,
    Div,
}

impl BinaryKind {
    fn name(self) -> &'static str {
        match self {
            BinaryKind::Add => "add",
            BinaryKind::Sub => "sub",
            BinaryKind::Mul => "mul",
            BinaryKind::Div => "div",
        }
    }

    #[inline]
    fn apply(self, a: f64, b: f64) -> f64 {
        match self {
            BinaryKind::Add => a + b,
            BinaryKind::Sub => a - b,
            BinaryKind::Mul => a * b,
            BinaryKind::Div => a / b,
        }
    }

    /// Partial derivatives with respect to (a, b).
    #[inline]
    fn partials(self, a: f64, b: f64) -> (f64, f64) {
        match self {
            BinaryKind::Add => (1.0, 1.0),
            BinaryKind::Sub => (1.0, -1.0),
            BinaryKind::Mul => (b, a),
            BinaryKind::Div => (1.0 / b, -a / (b * b)),
        }
    }
}

#[derive(Clone, Copy, Debug)]
enum Unary {
    Neg,
    Exp,
    Ln,
    Tanh,
    Relu,
    Sqrt,
    Abs,
    Square,
    Softplus,
    Sigmoid,
    Scale(f64),
    Shift(f64),
    BoundedBelow(f64),
}

#[inline]
fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

#[inline]
pub(crate) fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

impl Unary {
    fn name(self) -> &'static str {
        match self {
            Unary::Neg => "neg",
            Unary::Exp => "exp",
            Unary::Ln => "ln",
            Unary::Tanh => "tanh",
            Unary::Relu => "relu",
            Unary::Sqrt => "sqrt",
            Unary::Abs => "abs",
            Unary::Square => "square",
            Unary::Softplus => "softplus",
            Unary::Sigmoid => "sigmoid",
            Unary::Scale(_) => "scale",
            Unary::Shift(_) => "shift",
            Unary::BoundedBelow(_) => "bounded_below",
        }
    }

    #[inline]
    fn apply(self, x: f64) -> f64 {
        match self {
            Unary::Neg => -x,
            Unary::Exp => x.exp(),
            Unary::Ln => x.ln(),
            Unary::Tanh => x.tanh(),
            Unary::Relu => x.max(0.0),
            Unary::Sqrt => x.sqrt(),
            Unary::Abs => x.abs(),
            Unary::Square => x * x,
            Unary::Softplus => softplus(x),
            Unary::Sigmoid => sigmoid(x),
            Unary::Scale(c) => c * x,
            Unary::Shift(c) => x + c,
            Unary::BoundedBelow(eps) => bounded_below(x, eps),
        }
    }

    /// Derivative given input `x` and output `y`.
    #[inline]
    fn derivative(self, x: f64, y: f64) -> f64 {
        match self {
            Unary::Neg => -1.0,
            Unary::Exp => y,
            Unary::Ln => 1.0 / x,
            Unary::Tanh => 1.0 - y * y,
            Unary::Relu => {
                if x > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Unary::Sqrt => 0.5 / y,
            Unary::Abs => {
                if x > 0.0 {
                    1.0
                } else if x < 0.0 {
                    -1.0
                } else {
                    0.0
                }
            }
            Unary::Square => 2.0 * x,
            Unary::Softplus => sigmoid(x),
            Unary::Sigmoid => y * (1.0 - y),
            Unary::Scale(c) => c,
            Unary::Shift(_) => 1.0,
            Unary::BoundedBelow(eps) => {
                if x >= 0.0 {
                    1.0
                } else {
                    (x / (1.0 - eps)).exp()
                }
            }
        }
    }
}

/// Identity for `x >= 0`, and a smooth exponential floor approaching
/// `-(1 - eps)` as `x -> -inf`. Continuous with a continuous first derivative.
#[inline]
pub(crate) fn bounded_below(x: f64, eps: f64) -> f64 {
    if x >= 0.0 {
        x
    } else {
        let k = 1.0 - eps;
        k * ((x / k).exp() - 1.0)
    }
}

pub(crate) fn strides(shape: &[usize]) -> Vec<usize> {
    let mut s = vec![1; shape.len()];
    for i in (0..shape.len().saturating_sub(1)).rev() {
        s[i] = s[i + 1] * shape[i + 1];
    }
    s
}

fn broadcast_shape(a: &[usize], b: &[usize]) -> Option<Vec<usize>> {
    let rank = a.len().max(b.len());
    let mut out = vec![0; rank];
    for i in 0..rank {
        let da = if i + a.len() >= rank { a[i + a.len() - rank] } else { 1 };
        let db = if i + b.len() >= rank { b[i + b.len() - rank] } else { 1 };
        out[i] = match (da, db) {
            (x, y) if x == y => x,
            (1, y) => y,
            (x, 1) => x,
            _ => return None,
        };
    }
    Some(out)
}

/// For each flat index of `out`, the flat index of the broadcast source.
fn broadcast_map(src: &[usize], out: &[usize]) -> Vec<usize> {
    let rank = out.len();
    let src_strides = strides(src);
    let mut eff = vec![0usize; rank];
    for i in 0..src.len() {
        let o = i + rank - src.len();
        if src[i] != 1 {
            eff[o] = src_strides[i];
        }
    }
    let n = numel_of(out);
    let mut map = Vec::with_capacity(n);
    let mut idx = vec![0usize; rank];
    let mut off = 0usize;
    for _ in 0..n {
        map.push(off);
        for d in (0..rank).rev() {
            idx[d] += 1;
            off += eff[d];
            if idx[d] < out[d] {
                break;
            }
            off -= eff[d] * out[d];
            idx[d] = 0;
        }
    }
    map
}

impl Tensor {
    /// Elementwise arithmetic with numpy-style broadcasting. Per-channel
    /// vectors should be shaped `[1, C, 1, 1]` to broadcast over NCHW.
    pub fn binary(&self, other: &Tensor, kind: BinaryKind) -> Result<Tensor> {
        let (sa, sb) = (self.shape(), other.shape());
        let out_shape = broadcast_shape(sa, sb).ok_or_else(|| Error::ShapeMismatch {
            op: kind.name(),
            lhs: sa.to_vec(),
            rhs: sb.to_vec(),
        })?;
        let (a, b) = (self.data(), other.data());
        if sa == sb {
            let data: Vec<f64> = a.iter().zip(b).map(|(&x, &y)| kind.apply(x, y)).collect();
            return Ok(Tensor::from_op(
                data,
                out_shape,
                kind.name(),
                vec![self.clone(), other.clone()],
                Box::new(move |g, inputs, _| {
                    let (a, b) = (inputs[0].data(), inputs[1].data());
                    let mut ga = inputs[0].is_tracked().then(|| vec![0.0; a.len()]);
                    let mut gb = inputs[1].is_tracked().then(|| vec![0.0; b.len()]);
                    for i in 0..g.len() {
                        let (pa, pb) = kind.partials(a[i], b[i]);
                        if let Some(ga) = ga.as_mut() {
                            ga[i] = g[i] * pa;
                        }
                        if let Some(gb) = gb.as_mut() {
                            gb[i] = g[i] * pb;
                        }
                    }
                    vec![ga, gb]
                }),
            ));
        }
        let map_a = broadcast_map(sa, &out_shape);
        let map_b = broadcast_map(sb, &out_shape);
        let data: Vec<f64> = map_a
            .iter()
            .zip(&map_b)
            .map(|(&i, &j)| kind.apply(a[i], b[j]))
            .collect();
        let shape_out = out_shape.clone();
        Ok(Tensor::from_op(
            data,
            out_shape,
            kind.name(),
            vec![self.clone(), other.clone()],
            Box::new(move |g, inputs, _| {
                let (a, b) = (inputs[0].data(), inputs[1].data());
                let map_a = broadcast_map(inputs[0].shape(), &shape_out);
                let map_b = broadcast_map(inputs[1].shape(), &shape_out);
                let mut ga = inputs[0].is_tracked().then(|| vec![0.0; a.len()]);
                let mut gb = inputs[1].is_tracked().then(|| vec![0.0; b.len()]);
                for k in 0..g.len() {
                    let (i, j) = (map_a[k], map_b[k]);
                    let (pa, pb) = kind.partials(a[i], b[j]);
                    if let Some(ga) = ga.as_mut() {
                        ga[i] += g[k] * pa;
                    }
                    if let Some(gb) = gb.as_mut() {
                        gb[j] += g[k] * pb;
                    }
                }
                vec![ga, gb]
            }),
        ))
    }

    pub fn add(&self, other: &Tensor) -> Result<Tensor> {
        self.binary(other, BinaryKind::Add)
    }

    pub fn sub(&self, other: &Tensor) -> Result<Tensor> {
        self.binary(other, BinaryKind::Sub)
    }

    pub fn mul(&self, other: &Tensor) -> Result<Tensor> {
        self.binary(other, BinaryKind::Mul)
    }

    pub fn div(&self, other: &Tensor) -> Result<Tensor> {
        self.binary(other, BinaryKind::Div)
    }

    fn unary(&self, op: Unary) -> Tensor {
        let data: Vec<f64> = self.data().iter().map(|&x| op.apply(x)).collect();
        Tensor::from_op(
            data,
            self.shape().to_vec(),
            op.name(),
            vec![self.clone()],
            Box::new(move |g, inputs, out| {
                let x = inputs[0].data();
                let gx = g
                    .iter()
                    .zip(x.iter().zip(out))
                    .map(|(&g, (&x, &y))| g * op.derivative(x, y))
                    .collect();
                vec![Some(gx)]
            }),
        )
    }

    pub fn neg(&self) -> Tensor {
        self.unary(Unary::Neg)
    }

    pub fn exp(&self) -> Tensor {
        self.unary(Unary::Exp)
    }

    pub fn ln(&self) -> Tensor {
        self.unary(Unary::Ln)
    }

    pub fn tanh(&self) -> Tensor {
        self.unary(Unary::Tanh)
    }

    pub fn relu(&self) -> Tensor {
        self.unary(Unary::Relu)
    }

    pub fn sqrt(&self) -> Tensor {
        self.unary(Unary::Sqrt)
    }

    pub fn abs(&self) -> Tensor {
        self.unary(Unary::Abs)
    }

    pub fn square(&self) -> Tensor {
        self.unary(Unary::Square)
    }

    pub fn softplus(&self) -> Tensor {
        self.unary(Unary::Softplus)
    }

    pub fn sigmoid(&self) -> Tensor {
        self.unary(Unary::Sigmoid)
    }

    pub fn scale(&self, c: f64) -> Tensor {
        self.unary(Unary::Scale(c))
    }

    pub fn shift(&self, c: f64) -> Tensor {
        self.unary(Unary::Shift(c))
    }

    /// Identity on `x >= 0`, smoothly floored at `-(1 - eps)` below.
    pub fn bounded_below(&self, eps: f64) -> Tensor {
        self.unary(Unary::BoundedBelow(eps))
    }

    /// Sum of every element, as a rank-0 tensor.
    pub fn sum(&self) -> Tensor {
        let total: f64 = self.data().iter().sum();
        Tensor::from_op(
            vec![total],
            Vec::new(),
            "sum",
            vec![self.clone()],
            Box::new(|g, inputs, _| vec![Some(vec![g[0]; inputs[0].numel()])]),
        )
    }

    pub fn mean(&self) -> Tensor {
        self.sum().scale(1.0 / self.numel() as f64)
    }

    /// Sums out one axis, removing it from the shape.
    pub fn sum_axis(&self, axis: usize) -> Result<Tensor> {
        let shape = self.shape();
        if axis >= shape.len() {
            return Err(Error::InvalidShape(format!(
                "axis {axis} out of range for shape {shape:?}"
            )));
        }
        let outer: usize = shape[..axis].iter().product();
        let len = shape[axis];
        let inner: usize = shape[axis + 1..].iter().product();
        let x = self.data();
        let mut out = vec![0.0; outer * inner];
        for o in 0..outer {
            for k in 0..len {
                let src = &x[(o * len + k) * inner..(o * len + k + 1) * inner];
                let dst = &mut out[o * inner..(o + 1) * inner];
                dst.iter_mut().zip(src).for_each(|(d, s)| *d += s);
            }
        }
        let mut out_shape = shape.to_vec();
        out_shape.remove(axis);
        Ok(Tensor::from_op(
            out,
            out_shape,
            "sum_axis",
            vec![self.clone()],
            Box::new(move |g, _, _| {
                let mut gx = vec![0.0; outer * len * inner];
                for o in 0..outer {
                    for k in 0..len {
                        gx[(o * len + k) * inner..(o * len + k + 1) * inner]
                            .copy_from_slice(&g[o * inner..(o + 1) * inner]);
                    }
                }
                vec![Some(gx)]
            }),
        ))
    }

    pub fn mean_axis(&self, axis: usize) -> Result<Tensor> {
        let n = *self.shape().get(axis).unwrap_or(&1) as f64;
        Ok(self.sum_axis(axis)?.scale(1.0 / n))
    }

    /// `[N, ...] -> [N]`: sum over every axis but the first.
    pub fn sum_per_sample(&self) -> Result<Tensor> {
        if self.rank() == 0 {
            return Err(Error::InvalidShape("sum_per_sample on a scalar".into()));
        }
        let n = self.shape()[0];
        self.reshape(&[n, self.numel() / n])?.sum_axis(1)
    }

    fn require_nchw(&self, op: &str) -> Result<[usize; 4]> {
        match *self.shape() {
            [n, c, h, w] => Ok([n, c, h, w]),
            _ => Err(Error::InvalidShape(format!(
                "{op} needs a rank-4 NCHW tensor, got {:?}",
                self.shape()
            ))),
        }
    }

    /// Per-channel mean over batch and spatial axes: `[N,C,H,W] -> [C]`.
    pub fn channel_mean(&self) -> Result<Tensor> {
        let [n, c, h, w] = self.require_nchw("channel_mean")?;
        // [N,C,HW] -> sum HW -> [N,C] -> sum N -> [C]
        self.reshape(&[n, c, h * w])?
            .sum_axis(2)?
            .sum_axis(0)
            .map(|t| t.scale(1.0 / (n * h * w) as f64))
    }

    /// Per-channel population standard deviation: `[N,C,H,W] -> [C]`.
    pub fn channel_std(&self) -> Result<Tensor> {
        let [_, c, _, _] = self.require_nchw("channel_std")?;
        let mean = self.channel_mean()?.reshape(&[1, c, 1, 1])?;
        let centered = self.sub(&mean)?;
        Ok(centered.square().channel_mean()?.sqrt())
    }

    pub fn reshape(&self, shape: &[usize]) -> Result<Tensor> {
        if numel_of(shape) != self.numel() || shape.contains(&0) {
            return Err(Error::InvalidShape(format!(
                "cannot reshape {:?} into {shape:?}",
                self.shape()
            )));
        }
        Ok(Tensor::from_op(
            self.data().to_vec(),
            shape.to_vec(),
            "reshape",
            vec![self.clone()],
            Box::new(|g, _, _| vec![Some(g.to_vec())]),
        ))
    }

    /// Reorders axes: output axis `i` is input axis `axes[i]`.
    pub fn permute(&self, axes: &[usize]) -> Result<Tensor> {
        let shape = self.shape();
        let rank = shape.len();
        let mut seen = vec![false; rank];
        if axes.len() != rank || axes.iter().any(|&a| a >= rank || std::mem::replace(&mut seen[a], true)) {
            return Err(Error::InvalidArgument(format!(
                "{axes:?} is not a permutation of {rank} axes"
            )));
        }
        let out_shape: Vec<usize> = axes.iter().map(|&a| shape[a]).collect();
        let in_strides = strides(shape);
        // stride in the input for each output axis
        let eff: Vec<usize> = axes.iter().map(|&a| in_strides[a]).collect();
        let src_index = permute_map(&out_shape, &eff);
        let data: Vec<f64> = src_index.iter().map(|&i| self.data()[i]).collect();
        Ok(Tensor::from_op(
            data,
            out_shape.clone(),
            "permute",
            vec![self.clone()],
            Box::new(move |g, inputs, _| {
                let src_index = permute_map(&out_shape, &eff);
                let mut gx = vec![0.0; inputs[0].numel()];
                for (k, &i) in src_index.iter().enumerate() {
                    gx[i] = g[k];
                }
                vec![Some(gx)]
            }),
        ))
    }

    /// Joins tensors along `axis`; all other extents must agree.
    pub fn concat(parts: &[&Tensor], axis: usize) -> Result<Tensor> {
        let first = parts
            .first()
            .ok_or_else(|| Error::InvalidArgument("concat of zero tensors".into()))?;
        let base = first.shape();
        if axis >= base.len() {
            return Err(Error::InvalidShape(format!("concat axis {axis} on {base:?}")));
        }
        for p in parts {
            let s = p.shape();
            let ok = s.len() == base.len()
                && s.iter().zip(base).enumerate().all(|(i, (a, b))| i == axis || a == b);
            if !ok {
                return Err(Error::ShapeMismatch {
                    op: "concat",
                    lhs: base.to_vec(),
                    rhs: s.to_vec(),
                });
            }
        }
        let outer: usize = base[..axis].iter().product();
        let inner: usize = base[axis + 1..].iter().product();
        let lens: Vec<usize> = parts.iter().map(|p| p.shape()[axis]).collect();
        let total: usize = lens.iter().sum();
        let mut data = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for (p, &l) in parts.iter().zip(&lens) {
                data.extend_from_slice(&p.data()[o * l * inner..(o + 1) * l * inner]);
            }
        }
        let mut shape = base.to_vec();
        shape[axis] = total;
        Ok(Tensor::from_op(
            data,
            shape,
            "concat",
            parts.iter().map(|&p| p.clone()).collect(),
            Box::new(move |g, inputs, _| {
                let mut grads: Vec<Vec<f64>> =
                    lens.iter().map(|&l| Vec::with_capacity(outer * l * inner)).collect();
                let mut off = 0;
                for _ in 0..outer {
                    for (gi, &l) in grads.iter_mut().zip(&lens) {
                        gi.extend_from_slice(&g[off..off + l * inner]);
                        off += l * inner;
                    }
                }
                grads
                    .into_iter()
                    .zip(inputs)
                    .map(|(gi, t)| t.is_tracked().then_some(gi))
                    .collect()
            }),
        ))
    }

    /// Contiguous slice `[start, start + len)` along `axis`.
    pub fn narrow(&self, axis: usize, start: usize, len: usize) -> Result<Tensor> {
        let shape = self.shape();
        if axis >= shape.len() || len == 0 || start + len > shape[axis] {
            return Err(Error::InvalidShape(format!(
                "narrow({axis}, {start}, {len}) on {shape:?}"
            )));
        }
        let idx: Vec<usize> = (start..start + len).collect();
        self.index_select(axis, &idx)
    }

    /// Gathers the given positions along `axis` (repeats allowed).
    pub fn index_select(&self, axis: usize, index: &[usize]) -> Result<Tensor> {
        let shape = self.shape();
        if axis >= shape.len() || index.is_empty() || index.iter().any(|&i| i >= shape[axis]) {
            return Err(Error::InvalidShape(format!(
                "index_select on axis {axis} of {shape:?} with {index:?}"
            )));
        }
        let outer: usize = shape[..axis].iter().product();
        let len = shape[axis];
        let inner: usize = shape[axis + 1..].iter().product();
        let x = self.data();
        let mut data = Vec::with_capacity(outer * index.len() * inner);
        for o in 0..outer {
            for &i in index {
                data.extend_from_slice(&x[(o * len + i) * inner..(o * len + i + 1) * inner]);
            }
        }
        let mut out_shape = shape.to_vec();
        out_shape[axis] = index.len();
        let index = index.to_vec();
        Ok(Tensor::from_op(
            data,
            out_shape,
            "index_select",
            vec![self.clone()],
            Box::new(move |g, _, _| {
                let mut gx = vec![0.0; outer * len * inner];
                let mut off = 0;
                for o in 0..outer {
                    for &i in &index {
                        let dst = &mut gx[(o * len + i) * inner..(o * len + i + 1) * inner];
                        dst.iter_mut().zip(&g[off..off + inner]).for_each(|(d, s)| *d += s);
                        off += inner;
                    }
                }
                vec![Some(gx)]
            }),
        ))
    }

    /// Matrix product of `[M,K]` and `[K,N]`.
    pub fn matmul(&self, other: &Tensor) -> Result<Tensor> {
        let (m, k, n) = match (self.shape(), other.shape()) {
            (&[m, k], &[k2, n]) if k == k2 => (m, k, n),
            (a, b) => {
                return Err(Error::ShapeMismatch {
                    op: "matmul",
                    lhs: a.to_vec(),
                    rhs: b.to_vec(),
                })
            }
        };
        let data = matmul_raw(self.data(), other.data(), m, k, n);
        Ok(Tensor::from_op(
            data,
            vec![m, n],
            "matmul",
            vec![self.clone(), other.clone()],
            Box::new(move |g, inputs, _| {
                let (a, b) = (inputs[0].data(), inputs[1].data());
                // dA = G Bᵀ, dB = Aᵀ G
                let ga = inputs[0].is_tracked().then(|| {
                    let mut ga = vec![0.0; m * k];
                    for i in 0..m {
                        for j in 0..n {
                            let gij = g[i * n + j];
                            if gij == 0.0 {
                                continue;
                            }
                            for p in 0..k {
                                ga[i * k + p] += gij * b[p * n + j];
                            }
                        }
                    }
                    ga
                });
                let gb = inputs[1].is_tracked().then(|| {
                    let mut gb = vec![0.0; k * n];
                    for i in 0..m {
                        for p in 0..k {
                            let aip = a[i * k + p];
                            let row = &mut gb[p * n..(p + 1) * n];
                            row.iter_mut()
                                .zip(&g[i * n..(i + 1) * n])
                                .for_each(|(d, &gv)| *d += aip * gv);
                        }
                    }
                    gb
                });
                vec![ga, gb]
            }),
        ))
    }

    pub fn transpose(&self) -> Result<Tensor> {
        self.permute(&[1, 0])
    }

    /// Applies `f` to every element without recording a gradient.
    pub fn map(&self, f: impl Fn(f64) -> f64) -> Tensor {
        Tensor::untracked(self.data().iter().map(|&x| f(x)).collect(), self.shape().to_vec())
    }
}

fn permute_map(out_shape: &[usize], eff: &[usize]) -> Vec<usize> {
    let rank = out_shape.len();
    let n = numel_of(out_shape);
    let mut map = Vec::with_capacity(n);
    let mut idx = vec![0usize; rank];
    let mut off = 0usize;
    for _ in 0..n {
        map.push(off);
        for d in (0..rank).rev() {
            idx[d] += 1;
            off += eff[d];
            if idx[d] < out_shape[d] {
                break;
            }
            off -= eff[d] * out_shape[d];
            idx[d] = 0;
        }
    }
    map
}

pub(crate) fn matmul_raw(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        let row = &mut out[i * n..(i + 1) * n];
        for p in 0..k {
            let aip = a[i * k + p];
            if aip == 0.0 {
                continue;
            }
            row.iter_mut()
                .zip(&b[p * n..(p + 1) * n])
                .for_each(|(o, &bv)| *o += aip * bv);
        }
    }
    out
}
