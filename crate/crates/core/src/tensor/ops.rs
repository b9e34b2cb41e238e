use super::kernels::{
    gemm_view, MatView,
    axis_split, broadcast_shape, broadcast_strides, for_each_broadcast, gemm, permute,
    reduce_to_shape,
};
use super::Tensor;
use crate::error::{shape_err, Error, Result, ShapeFmt};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) enum Binary {
    Add,
    Sub,
    Mul,
    Div,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub(crate) enum Unary {
    Neg,
    Scale(f64),
    AddScalar(f64),
    Relu,
    Exp,
    Ln,
    Sqrt,
}

/// Op-kind tag plus the forward values each backward rule needs.
pub(crate) enum Op {
    Binary(Binary),
    Unary(Unary),
    Sum,
    SumAxis { axis: usize },
    MatMul,
    Reshape,
    Permute { perm: Vec<usize> },
    BroadcastTo,
    Softmax { axis: usize },
    LogSoftmax { axis: usize },
    Conv1d { stride: usize, pad_left: usize, cols: Vec<f64> },
    MaxPool1d { argmax: Vec<usize> },
    Norm { xhat: Vec<f64>, inv_std: Vec<f64>, mode: NormMode, layout: NormLayout },
    Concat { axis: usize },
    Narrow { axis: usize, start: usize },
    Gather { index: Vec<usize> },
}

impl Op {
    pub(crate) fn name(&self) -> &'static str {
        match self {
            Op::Binary(Binary::Add) => "add",
            Op::Binary(Binary::Sub) => "sub",
            Op::Binary(Binary::Mul) => "mul",
            Op::Binary(Binary::Div) => "div",
            Op::Unary(Unary::Neg) => "neg",
            Op::Unary(Unary::Scale(_)) => "scale",
            Op::Unary(Unary::AddScalar(_)) => "add_scalar",
            Op::Unary(Unary::Relu) => "relu",
            Op::Unary(Unary::Exp) => "exp",
            Op::Unary(Unary::Ln) => "ln",
            Op::Unary(Unary::Sqrt) => "sqrt",
            Op::Sum => "sum",
            Op::SumAxis { .. } => "sum_axis",
            Op::MatMul => "matmul",
            Op::Reshape => "reshape",
            Op::Permute { .. } => "permute",
            Op::BroadcastTo => "broadcast_to",
            Op::Softmax { .. } => "softmax",
            Op::LogSoftmax { .. } => "log_softmax",
            Op::Conv1d { .. } => "conv1d",
            Op::MaxPool1d { .. } => "max_pool1d",
            Op::Norm { layout: NormLayout::Channel, .. } => "batch_norm",
            Op::Norm { layout: NormLayout::LastAxis, .. } => "layer_norm",
            Op::Concat { .. } => "concat",
            Op::Narrow { .. } => "narrow",
            Op::Gather { .. } => "gather",
        }
    }
}

/// Whether a normalization uses statistics of the current input or fixed ones.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum NormMode {
    Batch,
    Fixed,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) enum NormLayout {
    /// `[B, C, L]`, statistics per channel over batch and length.
    Channel,
    /// `[..., n]`, statistics per row over the last axis.
    LastAxis,
}

/// Per-channel batch statistics computed by a training-mode batch norm.
#[derive(Clone, Debug, PartialEq)]
pub struct BatchNormStats {
    pub mean: Vec<f64>,
    /// Biased variance.
    pub var: Vec<f64>,
    pub count: usize,
}

fn normalize_axis(axis: isize, rank: usize) -> Result<usize> {
    let a = if axis < 0 { axis + rank as isize } else { axis };
    if a < 0 || a as usize >= rank {
        return Err(Error::Shape(format!("axis {axis} invalid for rank {rank}")));
    }
    Ok(a as usize)
}

impl Tensor {
    fn binary(&self, other: &Tensor, kind: Binary) -> Result<Tensor> {
        let (a, b) = (self.data(), other.data());
        let (sa, sb) = (self.shape(), other.shape());
        let apply = |x: f64, y: f64| match kind {
            Binary::Add => x + y,
            Binary::Sub => x - y,
            Binary::Mul => x * y,
            Binary::Div => x / y,
        };
        let (data, shape) = if sa == sb {
            (a.iter().zip(b).map(|(&x, &y)| apply(x, y)).collect(), sa.to_vec())
        } else {
            let out = broadcast_shape(sa, sb)
                .ok_or_else(|| shape_err("incompatible broadcast", sa, sb))?;
            let n: usize = out.iter().product();
            let mut data = vec![0.0; n];
            if sb.len() <= sa.len() && out == sa && sa.ends_with(sb) {
                let m = b.len();
                for (chunk, src) in data.chunks_mut(m).zip(a.chunks(m)) {
                    for ((d, &x), &y) in chunk.iter_mut().zip(src).zip(b) {
                        *d = apply(x, y);
                    }
                }
            } else {
                let (ta, tb) = (broadcast_strides(sa, &out), broadcast_strides(sb, &out));
                for_each_broadcast(&out, &ta, &tb, |o, i, j| data[o] = apply(a[i], b[j]));
            }
            (data, out)
        };
        Ok(Tensor::from_op(data, shape, Op::Binary(kind), vec![self.clone(), other.clone()]))
    }

    pub fn add(&self, other: &Tensor) -> Result<Tensor> {
        self.binary(other, Binary::Add)
    }

    pub fn sub(&self, other: &Tensor) -> Result<Tensor> {
        self.binary(other, Binary::Sub)
    }

    pub fn mul(&self, other: &Tensor) -> Result<Tensor> {
        self.binary(other, Binary::Mul)
    }

    pub fn div(&self, other: &Tensor) -> Result<Tensor> {
        self.binary(other, Binary::Div)
    }

    fn unary(&self, kind: Unary) -> Tensor {
        let f = |x: f64| match kind {
            Unary::Neg => -x,
            Unary::Scale(c) => c * x,
            Unary::AddScalar(c) => x + c,
            Unary::Relu => x.max(0.0),
            Unary::Exp => x.exp(),
            Unary::Ln => x.ln(),
            Unary::Sqrt => x.sqrt(),
        };
        let data = self.data().iter().map(|&x| f(x)).collect();
        Tensor::from_op(data, self.shape().to_vec(), Op::Unary(kind), vec![self.clone()])
    }

    pub fn neg(&self) -> Tensor {
        self.unary(Unary::Neg)
    }

    pub fn scale(&self, c: f64) -> Tensor {
        self.unary(Unary::Scale(c))
    }

    pub fn add_scalar(&self, c: f64) -> Tensor {
        self.unary(Unary::AddScalar(c))
    }

    /// Rectifier; the subgradient at 0 is taken as 0.
    pub fn relu(&self) -> Tensor {
        self.unary(Unary::Relu)
    }

    pub fn exp(&self) -> Tensor {
        self.unary(Unary::Exp)
    }

    pub fn ln(&self) -> Tensor {
        self.unary(Unary::Ln)
    }

    pub fn sqrt(&self) -> Tensor {
        self.unary(Unary::Sqrt)
    }

    pub fn square(&self) -> Tensor {
        self.mul(self).expect("same shape")
    }

    pub fn sum(&self) -> Tensor {
        let s = self.data().iter().sum();
        Tensor::from_op(vec![s], Vec::new(), Op::Sum, vec![self.clone()])
    }

    pub fn mean(&self) -> Tensor {
        let n = self.numel() as f64;
        self.sum().scale(1.0 / n)
    }

    /// Sum over `axis`; the axis is kept with length 1 when `keepdim`.
    pub fn sum_axis(&self, axis: isize, keepdim: bool) -> Result<Tensor> {
        let axis = normalize_axis(axis, self.rank())?;
        let (outer, len, inner) = axis_split(self.shape(), axis);
        let x = self.data();
        let mut out = vec![0.0; outer * inner];
        for o in 0..outer {
            for l in 0..len {
                let row = &x[(o * len + l) * inner..(o * len + l + 1) * inner];
                for (d, &v) in out[o * inner..(o + 1) * inner].iter_mut().zip(row) {
                    *d += v;
                }
            }
        }
        let mut shape = self.shape().to_vec();
        if keepdim {
            shape[axis] = 1;
        } else {
            shape.remove(axis);
        }
        Ok(Tensor::from_op(out, shape, Op::SumAxis { axis }, vec![self.clone()]))
    }

    pub fn mean_axis(&self, axis: isize, keepdim: bool) -> Result<Tensor> {
        let a = normalize_axis(axis, self.rank())?;
        let n = self.shape()[a] as f64;
        Ok(self.sum_axis(axis, keepdim)?.scale(1.0 / n))
    }

    /// Matrix product over the last two axes.
    ///
    /// `[..., m, k] · [k, n]` flattens the leading axes of the left operand;
    /// `[..., m, k] · [..., k, n]` with identical leading axes is batched.
    pub fn matmul(&self, other: &Tensor) -> Result<Tensor> {
        let (sa, sb) = (self.shape(), other.shape());
        if sa.len() < 2 || sb.len() < 2 {
            return Err(shape_err("matmul needs rank >= 2", sa, sb));
        }
        let k = sa[sa.len() - 1];
        let m = sa[sa.len() - 2];
        let (kb, n) = (sb[sb.len() - 2], sb[sb.len() - 1]);
        if k != kb {
            return Err(shape_err("matmul inner dimensions differ", sa, sb));
        }
        let mut shape = sa[..sa.len() - 1].to_vec();
        shape.push(n);
        let data = if sb.len() == 2 {
            let rows = self.numel() / k;
            let mut c = vec![0.0; rows * n];
            gemm(rows, n, k, self.data(), false, other.data(), false, &mut c, 0.0);
            c
        } else if sa[..sa.len() - 2] == sb[..sb.len() - 2] {
            let batch: usize = sa[..sa.len() - 2].iter().product();
            let mut c = vec![0.0; batch * m * n];
            for i in 0..batch {
                gemm(
                    m,
                    n,
                    k,
                    &self.data()[i * m * k..(i + 1) * m * k],
                    false,
                    &other.data()[i * k * n..(i + 1) * k * n],
                    false,
                    &mut c[i * m * n..(i + 1) * m * n],
                    0.0,
                );
            }
            c
        } else {
            return Err(shape_err("matmul batch dimensions differ", sa, sb));
        };
        Ok(Tensor::from_op(data, shape, Op::MatMul, vec![self.clone(), other.clone()]))
    }

    pub fn reshape(&self, shape: &[usize]) -> Result<Tensor> {
        let n: usize = shape.iter().product();
        if n != self.numel() {
            return Err(shape_err("reshape changes element count", self.shape(), shape));
        }
        Ok(Tensor::from_op(self.to_vec(), shape.to_vec(), Op::Reshape, vec![self.clone()]))
    }

    pub fn permute(&self, perm: &[usize]) -> Result<Tensor> {
        let rank = self.rank();
        let mut seen = vec![false; rank];
        if perm.len() != rank || perm.iter().any(|&p| p >= rank || std::mem::replace(&mut seen[p], true)) {
            return Err(Error::Shape(format!(
                "{perm:?} is not a permutation of the axes of {}",
                ShapeFmt(self.shape())
            )));
        }
        let (data, shape) = permute(self.data(), self.shape(), perm);
        Ok(Tensor::from_op(data, shape, Op::Permute { perm: perm.to_vec() }, vec![self.clone()]))
    }

    /// Swaps the last two axes.
    pub fn t(&self) -> Result<Tensor> {
        let r = self.rank();
        if r < 2 {
            return Err(Error::Shape("transpose needs rank >= 2".into()));
        }
        let mut perm: Vec<usize> = (0..r).collect();
        perm.swap(r - 1, r - 2);
        self.permute(&perm)
    }

    pub fn broadcast_to(&self, shape: &[usize]) -> Result<Tensor> {
        match broadcast_shape(self.shape(), shape) {
            Some(out) if out == shape => {}
            _ => return Err(shape_err("cannot broadcast", self.shape(), shape)),
        }
        let s = broadcast_strides(self.shape(), shape);
        let zero = vec![0; shape.len()];
        let x = self.data();
        let mut data = vec![0.0; shape.iter().product()];
        for_each_broadcast(shape, &s, &zero, |o, i, _| data[o] = x[i]);
        Ok(Tensor::from_op(data, shape.to_vec(), Op::BroadcastTo, vec![self.clone()]))
    }

    /// Max-subtracted exp-normalize along `axis`.
    pub fn softmax(&self, axis: isize) -> Result<Tensor> {
        let axis = normalize_axis(axis, self.rank())?;
        let data = softmax_impl(self.data(), self.shape(), axis, false);
        Ok(Tensor::from_op(data, self.shape().to_vec(), Op::Softmax { axis }, vec![self.clone()]))
    }

    pub fn log_softmax(&self, axis: isize) -> Result<Tensor> {
        let axis = normalize_axis(axis, self.rank())?;
        let data = softmax_impl(self.data(), self.shape(), axis, true);
        Ok(Tensor::from_op(data, self.shape().to_vec(), Op::LogSoftmax { axis }, vec![self.clone()]))
    }

    /// Symmetric-padding 1-D cross-correlation, `[B, C_in, L] ⋆ [C_out, C_in, k]`.
    pub fn conv1d(&self, kernel: &Tensor, stride: usize, padding: usize) -> Result<Tensor> {
        self.conv1d_padded(kernel, stride, padding, padding)
    }

    /// 1-D cross-correlation with separate left/right zero padding.
    pub fn conv1d_padded(
        &self,
        kernel: &Tensor,
        stride: usize,
        pad_left: usize,
        pad_right: usize,
    ) -> Result<Tensor> {
        let (sx, sw) = (self.shape(), kernel.shape());
        if sx.len() != 3 || sw.len() != 3 || sx[1] != sw[1] {
            return Err(shape_err("conv1d expects [B, C_in, L] and [C_out, C_in, k]", sx, sw));
        }
        if stride == 0 {
            return Err(Error::Param("conv1d stride must be >= 1".into()));
        }
        let (b, cin, len) = (sx[0], sx[1], sx[2]);
        let (cout, k) = (sw[0], sw[2]);
        let padded = len + pad_left + pad_right;
        if k > padded {
            return Err(shape_err("conv1d kernel wider than padded input", sx, sw));
        }
        let lout = (padded - k) / stride + 1;
        let cols = im2col(self.data(), b, cin, len, k, stride, pad_left, lout);
        let rk = cin * k;
        let mut out = vec![0.0; b * cout * lout];
        for bi in 0..b {
            gemm_view(
                cout,
                lout,
                rk,
                kernel.data(),
                MatView::rows(0, rk),
                &cols,
                MatView::rows(bi * rk * lout, lout),
                &mut out,
                MatView::rows(bi * cout * lout, lout),
                0.0,
            );
        }
        Ok(Tensor::from_op(
            out,
            vec![b, cout, lout],
            Op::Conv1d { stride, pad_left, cols },
            vec![self.clone(), kernel.clone()],
        ))
    }

    /// Max pooling over the last axis of `[B, C, L]`; output length `(L - k) / stride + 1`.
    pub fn max_pool1d(&self, kernel: usize, stride: usize) -> Result<Tensor> {
        let s = self.shape();
        if s.len() != 3 || kernel == 0 || stride == 0 || kernel > s[2] {
            return Err(Error::Shape(format!(
                "max_pool1d(kernel={kernel}, stride={stride}) invalid for {}",
                ShapeFmt(s)
            )));
        }
        let (rows, len) = (s[0] * s[1], s[2]);
        let lout = (len - kernel) / stride + 1;
        let x = self.data();
        let mut out = Vec::with_capacity(rows * lout);
        let mut argmax = Vec::with_capacity(rows * lout);
        for r in 0..rows {
            for t in 0..lout {
                let start = r * len + t * stride;
                let mut best = start;
                for i in start + 1..start + kernel {
                    if x[i] > x[best] {
                        best = i;
                    }
                }
                out.push(x[best]);
                argmax.push(best);
            }
        }
        Ok(Tensor::from_op(
            out,
            vec![s[0], s[1], lout],
            Op::MaxPool1d { argmax },
            vec![self.clone()],
        ))
    }

    /// Batch normalization of `[B, C, L]` with per-channel affine `gamma`, `beta`.
    ///
    /// With `fixed = None` the statistics of this batch are used and returned;
    /// otherwise the supplied `(mean, var)` are applied as constants.
    pub fn batch_norm(
        &self,
        gamma: &Tensor,
        beta: &Tensor,
        fixed: Option<(&[f64], &[f64])>,
        eps: f64,
    ) -> Result<(Tensor, Option<BatchNormStats>)> {
        let s = self.shape();
        if s.len() != 3 || gamma.shape() != [s[1]] || beta.shape() != [s[1]] {
            return Err(shape_err("batch_norm expects [B, C, L] with [C] affine", s, gamma.shape()));
        }
        let (b, c, l) = (s[0], s[1], s[2]);
        let x = self.data();
        let (mean, var, mode) = match fixed {
            Some((m, v)) => {
                if m.len() != c || v.len() != c {
                    return Err(Error::Shape("batch_norm running statistics width".into()));
                }
                (m.to_vec(), v.to_vec(), NormMode::Fixed)
            }
            None => {
                let cnt = (b * l) as f64;
                let mut mean = vec![0.0; c];
                let mut var = vec![0.0; c];
                for bi in 0..b {
                    for ch in 0..c {
                        let row = &x[(bi * c + ch) * l..(bi * c + ch + 1) * l];
                        mean[ch] += row.iter().sum::<f64>();
                    }
                }
                mean.iter_mut().for_each(|m| *m /= cnt);
                for bi in 0..b {
                    for ch in 0..c {
                        let row = &x[(bi * c + ch) * l..(bi * c + ch + 1) * l];
                        var[ch] += row.iter().map(|v| (v - mean[ch]).powi(2)).sum::<f64>();
                    }
                }
                var.iter_mut().for_each(|v| *v /= cnt);
                (mean, var, NormMode::Batch)
            }
        };
        let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + eps).sqrt()).collect();
        let (g, be) = (gamma.data(), beta.data());
        let mut xhat = vec![0.0; x.len()];
        let mut out = vec![0.0; x.len()];
        for bi in 0..b {
            for ch in 0..c {
                let base = (bi * c + ch) * l;
                for i in base..base + l {
                    xhat[i] = (x[i] - mean[ch]) * inv_std[ch];
                    out[i] = g[ch] * xhat[i] + be[ch];
                }
            }
        }
        let stats = (mode == NormMode::Batch).then(|| BatchNormStats { mean, var, count: b * l });
        let t = Tensor::from_op(
            out,
            s.to_vec(),
            Op::Norm { xhat, inv_std, mode, layout: NormLayout::Channel },
            vec![self.clone(), gamma.clone(), beta.clone()],
        );
        Ok((t, stats))
    }

    /// Layer normalization over the last axis with affine `gamma`, `beta`.
    pub fn layer_norm(&self, gamma: &Tensor, beta: &Tensor, eps: f64) -> Result<Tensor> {
        let s = self.shape();
        let n = *s.last().ok_or_else(|| Error::Shape("layer_norm of a scalar".into()))?;
        if gamma.shape() != [n] || beta.shape() != [n] {
            return Err(shape_err("layer_norm affine width", s, gamma.shape()));
        }
        let x = self.data();
        let rows = x.len() / n;
        let (g, be) = (gamma.data(), beta.data());
        let mut xhat = vec![0.0; x.len()];
        let mut out = vec![0.0; x.len()];
        let mut inv_std = vec![0.0; rows];
        for r in 0..rows {
            let row = &x[r * n..(r + 1) * n];
            let mean = row.iter().sum::<f64>() / n as f64;
            let var = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n as f64;
            let is = 1.0 / (var + eps).sqrt();
            inv_std[r] = is;
            for j in 0..n {
                let h = (row[j] - mean) * is;
                xhat[r * n + j] = h;
                out[r * n + j] = g[j] * h + be[j];
            }
        }
        Ok(Tensor::from_op(
            out,
            s.to_vec(),
            Op::Norm { xhat, inv_std, mode: NormMode::Batch, layout: NormLayout::LastAxis },
            vec![self.clone(), gamma.clone(), beta.clone()],
        ))
    }

    pub fn concat(parts: &[Tensor], axis: isize) -> Result<Tensor> {
        let first = parts.first().ok_or_else(|| Error::Shape("concat of nothing".into()))?;
        let axis = normalize_axis(axis, first.rank())?;
        let mut shape = first.shape().to_vec();
        shape[axis] = 0;
        for p in parts {
            let ps = p.shape();
            let compatible = ps.len() == shape.len()
                && ps.iter().zip(&shape).enumerate().all(|(i, (a, b))| i == axis || a == b);
            if !compatible {
                return Err(shape_err("concat shapes differ off-axis", first.shape(), ps));
            }
            shape[axis] += ps[axis];
        }
        let (outer, total, inner) = axis_split(&shape, axis);
        let mut data = vec![0.0; outer * total * inner];
        let mut offset = 0;
        for p in parts {
            let len = p.shape()[axis];
            let src = p.data();
            for o in 0..outer {
                let dst = (o * total + offset) * inner;
                data[dst..dst + len * inner].copy_from_slice(&src[o * len * inner..(o + 1) * len * inner]);
            }
            offset += len;
        }
        Ok(Tensor::from_op(data, shape, Op::Concat { axis }, parts.to_vec()))
    }

    /// Stacks equally shaped tensors along a new leading axis.
    pub fn stack(parts: &[Tensor]) -> Result<Tensor> {
        let expanded = parts
            .iter()
            .map(|p| {
                let mut s = vec![1];
                s.extend_from_slice(p.shape());
                p.reshape(&s)
            })
            .collect::<Result<Vec<_>>>()?;
        Tensor::concat(&expanded, 0)
    }

    /// Slice `start..start + len` along `axis`.
    pub fn narrow(&self, axis: isize, start: usize, len: usize) -> Result<Tensor> {
        let axis = normalize_axis(axis, self.rank())?;
        let (outer, full, inner) = axis_split(self.shape(), axis);
        if len == 0 || start + len > full {
            return Err(Error::Index { index: start + len, len: full });
        }
        let x = self.data();
        let mut data = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            let src = (o * full + start) * inner;
            data.extend_from_slice(&x[src..src + len * inner]);
        }
        let mut shape = self.shape().to_vec();
        shape[axis] = len;
        Ok(Tensor::from_op(data, shape, Op::Narrow { axis, start }, vec![self.clone()]))
    }

    /// `x[i, index[i]]` for a `[N, M]` tensor.
    pub fn gather_rows(&self, index: &[usize]) -> Result<Tensor> {
        let s = self.shape();
        if s.len() != 2 || index.len() != s[0] {
            return Err(Error::Shape(format!(
                "gather_rows needs [N, M] with N indices, got {} and {}",
                ShapeFmt(s),
                index.len()
            )));
        }
        let m = s[1];
        if let Some(&bad) = index.iter().find(|&&j| j >= m) {
            return Err(Error::Index { index: bad, len: m });
        }
        let data = index.iter().enumerate().map(|(i, &j)| self.data()[i * m + j]).collect();
        Ok(Tensor::from_op(
            data,
            vec![s[0]],
            Op::Gather { index: index.to_vec() },
            vec![self.clone()],
        ))
    }
}

fn softmax_impl(x: &[f64], shape: &[usize], axis: usize, log: bool) -> Vec<f64> {
    let (outer, n, inner) = axis_split(shape, axis);
    let mut out = vec![0.0; x.len()];
    for o in 0..outer {
        for i in 0..inner {
            let idx = |j: usize| (o * n + j) * inner + i;
            let mx = (0..n).map(|j| x[idx(j)]).fold(f64::NEG_INFINITY, f64::max);
            let mx = if mx.is_finite() { mx } else { 0.0 };
            let z: f64 = (0..n).map(|j| (x[idx(j)] - mx).exp()).sum();
            let lz = z.ln();
            for j in 0..n {
                let k = idx(j);
                out[k] = if log { x[k] - mx - lz } else { (x[k] - mx).exp() / z };
            }
        }
    }
    out
}

/// Unfolds `[B, C_in, L]` into per-sample column blocks `[B, C_in * k, L_out]`.
#[allow(clippy::too_many_arguments)]
fn im2col(
    x: &[f64],
    b: usize,
    cin: usize,
    len: usize,
    k: usize,
    stride: usize,
    pad_left: usize,
    lout: usize,
) -> Vec<f64> {
    let rk = cin * k;
    let mut cols = vec![0.0; b * rk * lout];
    for bi in 0..b {
        for ci in 0..cin {
            let src = &x[(bi * cin + ci) * len..(bi * cin + ci + 1) * len];
            for kk in 0..k {
                let r = bi * rk + ci * k + kk;
                let dst = &mut cols[r * lout..(r + 1) * lout];
                let (lo, hi) = valid_outputs(lout, len, stride, kk, pad_left);
                if stride == 1 {
                    let start = lo + kk - pad_left;
                    dst[lo..hi].copy_from_slice(&src[start..start + (hi - lo)]);
                } else {
                    for t in lo..hi {
                        dst[t] = src[t * stride + kk - pad_left];
                    }
                }
            }
        }
    }
    cols
}

/// Output positions `lo..hi` whose tap `kk` reads inside the unpadded input.
fn valid_outputs(lout: usize, len: usize, stride: usize, kk: usize, pad_left: usize) -> (usize, usize) {
    // position = t * stride + kk - pad_left must lie in 0..len
    let lo = if kk >= pad_left { 0 } else { (pad_left - kk).div_ceil(stride) };
    let hi = if len + pad_left > kk { ((len + pad_left - kk - 1) / stride + 1).min(lout) } else { 0 };
    (lo, hi.max(lo))
}

fn grad_if(t: &Tensor, f: impl FnOnce() -> Vec<f64>) -> Option<Vec<f64>> {
    t.requires_grad().then(f)
}

impl Op {
    /// Gradients with respect to each input, given the output and its gradient.
    pub(crate) fn backward(&self, inputs: &[Tensor], out: &Tensor, g: &[f64]) -> Vec<Option<Vec<f64>>> {
        match self {
            Op::Binary(kind) => {
                let (a, b) = (&inputs[0], &inputs[1]);
                let os = out.shape();
                let (sa, sb) = (broadcast_strides(a.shape(), os), broadcast_strides(b.shape(), os));
                let (ad, bd) = (a.data(), b.data());
                let mut ga = a.requires_grad().then(|| vec![0.0; ad.len()]);
                let mut gb = b.requires_grad().then(|| vec![0.0; bd.len()]);
                for_each_broadcast(os, &sa, &sb, |o, i, j| {
                    let (da, db) = match kind {
                        Binary::Add => (1.0, 1.0),
                        Binary::Sub => (1.0, -1.0),
                        Binary::Mul => (bd[j], ad[i]),
                        Binary::Div => (1.0 / bd[j], -ad[i] / (bd[j] * bd[j])),
                    };
                    if let Some(ga) = ga.as_mut() {
                        ga[i] += g[o] * da;
                    }
                    if let Some(gb) = gb.as_mut() {
                        gb[j] += g[o] * db;
                    }
                });
                vec![ga, gb]
            }
            Op::Unary(kind) => {
                let x = inputs[0].data();
                let y = out.data();
                let gx = (0..g.len())
                    .map(|i| {
                        g[i] * match kind {
                            Unary::Neg => -1.0,
                            Unary::Scale(c) => *c,
                            Unary::AddScalar(_) => 1.0,
                            Unary::Relu => {
                                if x[i] > 0.0 {
                                    1.0
                                } else {
                                    0.0
                                }
                            }
                            Unary::Exp => y[i],
                            Unary::Ln => 1.0 / x[i],
                            Unary::Sqrt => 0.5 / y[i],
                        }
                    })
                    .collect();
                vec![Some(gx)]
            }
            Op::Sum => vec![Some(vec![g[0]; inputs[0].numel()])],
            Op::SumAxis { axis } => {
                let (outer, len, inner) = axis_split(inputs[0].shape(), *axis);
                let mut gx = vec![0.0; outer * len * inner];
                for o in 0..outer {
                    for l in 0..len {
                        let dst = (o * len + l) * inner;
                        gx[dst..dst + inner].copy_from_slice(&g[o * inner..(o + 1) * inner]);
                    }
                }
                vec![Some(gx)]
            }
            Op::MatMul => matmul_backward(&inputs[0], &inputs[1], g),
            Op::Reshape => vec![Some(g.to_vec())],
            Op::Permute { perm } => {
                let mut inv = vec![0; perm.len()];
                for (i, &p) in perm.iter().enumerate() {
                    inv[p] = i;
                }
                vec![Some(permute(g, out.shape(), &inv).0)]
            }
            Op::BroadcastTo => vec![Some(reduce_to_shape(g, out.shape(), inputs[0].shape()))],
            Op::Softmax { axis } => {
                let (outer, n, inner) = axis_split(out.shape(), *axis);
                let y = out.data();
                let mut gx = vec![0.0; y.len()];
                for o in 0..outer {
                    for i in 0..inner {
                        let idx = |j: usize| (o * n + j) * inner + i;
                        let dot: f64 = (0..n).map(|j| g[idx(j)] * y[idx(j)]).sum();
                        for j in 0..n {
                            gx[idx(j)] = y[idx(j)] * (g[idx(j)] - dot);
                        }
                    }
                }
                vec![Some(gx)]
            }
            Op::LogSoftmax { axis } => {
                let (outer, n, inner) = axis_split(out.shape(), *axis);
                let y = out.data();
                let mut gx = vec![0.0; y.len()];
                for o in 0..outer {
                    for i in 0..inner {
                        let idx = |j: usize| (o * n + j) * inner + i;
                        let gs: f64 = (0..n).map(|j| g[idx(j)]).sum();
                        for j in 0..n {
                            gx[idx(j)] = g[idx(j)] - y[idx(j)].exp() * gs;
                        }
                    }
                }
                vec![Some(gx)]
            }
            Op::Conv1d { stride, pad_left, cols } => {
                let (x, w) = (&inputs[0], &inputs[1]);
                let (b, cin, len) = (x.shape()[0], x.shape()[1], x.shape()[2]);
                let (cout, k) = (w.shape()[0], w.shape()[2]);
                let lout = out.shape()[2];
                let rk = cin * k;
                let gw = grad_if(w, || {
                    let mut gw = vec![0.0; cout * rk];
                    for bi in 0..b {
                        gemm_view(
                            cout,
                            rk,
                            lout,
                            g,
                            MatView::rows(bi * cout * lout, lout),
                            cols,
                            MatView::cols(bi * rk * lout, lout),
                            &mut gw,
                            MatView::rows(0, rk),
                            1.0,
                        );
                    }
                    gw
                });
                let gx = grad_if(x, || {
                    let mut gcols = vec![0.0; b * rk * lout];
                    for bi in 0..b {
                        gemm_view(
                            rk,
                            lout,
                            cout,
                            w.data(),
                            MatView::cols(0, rk),
                            g,
                            MatView::rows(bi * cout * lout, lout),
                            &mut gcols,
                            MatView::rows(bi * rk * lout, lout),
                            0.0,
                        );
                    }
                    let mut gx = vec![0.0; b * cin * len];
                    for bi in 0..b {
                        for ci in 0..cin {
                            let dst = &mut gx[(bi * cin + ci) * len..(bi * cin + ci + 1) * len];
                            for kk in 0..k {
                                let r = bi * rk + ci * k + kk;
                                let src = &gcols[r * lout..(r + 1) * lout];
                                let (lo, hi) = valid_outputs(lout, len, *stride, kk, *pad_left);
                                for t in lo..hi {
                                    dst[t * stride + kk - pad_left] += src[t];
                                }
                            }
                        }
                    }
                    gx
                });
                vec![gx, gw]
            }
            Op::MaxPool1d { argmax } => {
                let mut gx = vec![0.0; inputs[0].numel()];
                for (&src, &gv) in argmax.iter().zip(g) {
                    gx[src] += gv;
                }
                vec![Some(gx)]
            }
            Op::Norm { xhat, inv_std, mode, layout } => {
                norm_backward(inputs, g, xhat, inv_std, *mode, *layout)
            }
            Op::Concat { axis } => {
                let (outer, total, inner) = axis_split(out.shape(), *axis);
                let mut offset = 0;
                inputs
                    .iter()
                    .map(|p| {
                        let len = p.shape()[*axis];
                        let r = grad_if(p, || {
                            let mut gp = Vec::with_capacity(p.numel());
                            for o in 0..outer {
                                let src = (o * total + offset) * inner;
                                gp.extend_from_slice(&g[src..src + len * inner]);
                            }
                            gp
                        });
                        offset += len;
                        r
                    })
                    .collect()
            }
            Op::Narrow { axis, start } => {
                let (outer, full, inner) = axis_split(inputs[0].shape(), *axis);
                let len = out.shape()[*axis];
                let mut gx = vec![0.0; inputs[0].numel()];
                for o in 0..outer {
                    let dst = (o * full + start) * inner;
                    gx[dst..dst + len * inner].copy_from_slice(&g[o * len * inner..(o + 1) * len * inner]);
                }
                vec![Some(gx)]
            }
            Op::Gather { index } => {
                let m = inputs[0].shape()[1];
                let mut gx = vec![0.0; inputs[0].numel()];
                for (i, &j) in index.iter().enumerate() {
                    gx[i * m + j] += g[i];
                }
                vec![Some(gx)]
            }
        }
    }
}

fn matmul_backward(a: &Tensor, b: &Tensor, g: &[f64]) -> Vec<Option<Vec<f64>>> {
    let (sa, sb) = (a.shape(), b.shape());
    let k = sa[sa.len() - 1];
    let n = sb[sb.len() - 1];
    if sb.len() == 2 {
        let rows = a.numel() / k;
        let ga = grad_if(a, || {
            let mut ga = vec![0.0; rows * k];
            gemm(rows, k, n, g, false, b.data(), true, &mut ga, 0.0);
            ga
        });
        let gb = grad_if(b, || {
            let mut gb = vec![0.0; k * n];
            gemm(k, n, rows, a.data(), true, g, false, &mut gb, 0.0);
            gb
        });
        return vec![ga, gb];
    }
    let m = sa[sa.len() - 2];
    let batch = a.numel() / (m * k);
    let ga = grad_if(a, || {
        let mut ga = vec![0.0; a.numel()];
        for i in 0..batch {
            gemm(
                m,
                k,
                n,
                &g[i * m * n..(i + 1) * m * n],
                false,
                &b.data()[i * k * n..(i + 1) * k * n],
                true,
                &mut ga[i * m * k..(i + 1) * m * k],
                0.0,
            );
        }
        ga
    });
    let gb = grad_if(b, || {
        let mut gb = vec![0.0; b.numel()];
        for i in 0..batch {
            gemm(
                k,
                n,
                m,
                &a.data()[i * m * k..(i + 1) * m * k],
                true,
                &g[i * m * n..(i + 1) * m * n],
                false,
                &mut gb[i * k * n..(i + 1) * k * n],
                0.0,
            );
        }
        gb
    });
    vec![ga, gb]
}

fn norm_backward(
    inputs: &[Tensor],
    g: &[f64],
    xhat: &[f64],
    inv_std: &[f64],
    mode: NormMode,
    layout: NormLayout,
) -> Vec<Option<Vec<f64>>> {
    let gamma = inputs[1].data();
    let width = gamma.len();
    // A group is the set of elements sharing one mean and variance.
    let (groups, group_len): (usize, usize) = match layout {
        NormLayout::Channel => (width, g.len() / width),
        NormLayout::LastAxis => (inv_std.len(), width),
    };
    let mut ggamma = vec![0.0; width];
    let mut gbeta = vec![0.0; width];
    let mut gx = vec![0.0; g.len()];
    let m = group_len as f64;
    let finish = |d: f64, xh: f64, is: f64, sum_d: f64, sum_dx: f64| match mode {
        NormMode::Batch => is * (d - sum_d / m - xh * sum_dx / m),
        NormMode::Fixed => is * d,
    };
    match layout {
        NormLayout::Channel => {
            let s = inputs[0].shape();
            let (b, c, l) = (s[0], s[1], s[2]);
            for ch in 0..groups {
                let (gm, is) = (gamma[ch], inv_std[ch]);
                let (mut sum_g, mut sum_gx) = (0.0, 0.0);
                for bi in 0..b {
                    let base = (bi * c + ch) * l;
                    for i in base..base + l {
                        sum_g += g[i];
                        sum_gx += g[i] * xhat[i];
                    }
                }
                ggamma[ch] = sum_gx;
                gbeta[ch] = sum_g;
                let (sum_d, sum_dx) = (sum_g * gm, sum_gx * gm);
                for bi in 0..b {
                    let base = (bi * c + ch) * l;
                    for i in base..base + l {
                        gx[i] = finish(g[i] * gm, xhat[i], is, sum_d, sum_dx);
                    }
                }
            }
        }
        NormLayout::LastAxis => {
            for grp in 0..groups {
                let range = grp * width..(grp + 1) * width;
                let (gr, xr) = (&g[range.clone()], &xhat[range.clone()]);
                let (mut sum_d, mut sum_dx) = (0.0, 0.0);
                for j in 0..width {
                    ggamma[j] += gr[j] * xr[j];
                    gbeta[j] += gr[j];
                    let d = gr[j] * gamma[j];
                    sum_d += d;
                    sum_dx += d * xr[j];
                }
                let is = inv_std[grp];
                for (j, out) in gx[range].iter_mut().enumerate() {
                    *out = finish(gr[j] * gamma[j], xr[j], is, sum_d, sum_dx);
                }
            }
        }
    }
    vec![
        inputs[0].requires_grad().then_some(gx),
        inputs[1].requires_grad().then_some(ggamma),
        inputs[2].requires_grad().then_some(gbeta),
    ]
}
