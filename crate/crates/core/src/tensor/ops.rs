//! Element-wise, reduction and structural operations.

use std::rc::Rc;

use super::{BackwardFn, Tensor};
use crate::error::{Error, Result};

/// Index mapping from a broadcast output back into one operand.
enum Map {
    Same,
    Scalar,
    Idx(Vec<usize>),
}

impl Map {
    #[inline]
    fn at(&self, i: usize) -> usize {
        match self {
            Map::Same => i,
            Map::Scalar => 0,
            Map::Idx(v) => v[i],
        }
    }
}

fn broadcast_shape(op: &'static str, a: &[usize], b: &[usize]) -> Result<Vec<usize>> {
    let rank = a.len().max(b.len());
    let mut out = vec![0; rank];
    for i in 0..rank {
        let da = if i + a.len() >= rank { a[i + a.len() - rank] } else { 1 };
        let db = if i + b.len() >= rank { b[i + b.len() - rank] } else { 1 };
        out[i] = match (da, db) {
            (x, y) if x == y => x,
            (1, y) => y,
            (x, 1) => x,
            _ => return Err(Error::shape(op, a, b)),
        };
    }
    Ok(out)
}

fn broadcast_map(out: &[usize], src: &[usize]) -> Map {
    if out == src {
        return Map::Same;
    }
    if src.iter().product::<usize>() == 1 {
        return Map::Scalar;
    }
    let rank = out.len();
    let offset = rank - src.len();
    let mut strides = vec![0usize; rank];
    let mut acc = 1;
    for i in (0..src.len()).rev() {
        strides[i + offset] = if src[i] == 1 { 0 } else { acc };
        acc *= src[i];
    }
    let numel: usize = out.iter().product();
    let mut idx = Vec::with_capacity(numel);
    let mut counter = vec![0usize; rank];
    let mut flat = 0usize;
    for _ in 0..numel {
        idx.push(flat);
        for d in (0..rank).rev() {
            counter[d] += 1;
            flat += strides[d];
            if counter[d] < out[d] {
                break;
            }
            flat -= strides[d] * out[d];
            counter[d] = 0;
        }
    }
    Map::Idx(idx)
}

type Binary = fn(f64, f64) -> f64;

fn binary(
    op: &'static str,
    a: &Tensor,
    b: &Tensor,
    f: Binary,
    da: Binary,
    db: Binary,
) -> Result<Tensor> {
    let shape = broadcast_shape(op, &a.shape, &b.shape)?;
    let ma = broadcast_map(&shape, &a.shape);
    let mb = broadcast_map(&shape, &b.shape);
    let numel: usize = shape.iter().product();
    let (xa, xb) = (Rc::clone(&a.data), Rc::clone(&b.data));
    let data: Vec<f64> = (0..numel).map(|i| f(xa[ma.at(i)], xb[mb.at(i)])).collect();
    if !a.requires_grad() && !b.requires_grad() {
        return Tensor::new(data, &shape);
    }
    let (na, nb) = (a.numel(), b.numel());
    let backward: BackwardFn = Box::new(move |g, needs| {
        let mut ga = needs[0].then(|| vec![0.0; na]);
        let mut gb = needs[1].then(|| vec![0.0; nb]);
        for (i, gi) in g.iter().enumerate() {
            let (ia, ib) = (ma.at(i), mb.at(i));
            let (x, y) = (xa[ia], xb[ib]);
            if let Some(ga) = ga.as_mut() {
                ga[ia] += gi * da(x, y);
            }
            if let Some(gb) = gb.as_mut() {
                gb[ib] += gi * db(x, y);
            }
        }
        vec![ga, gb]
    });
    Tensor::from_op(op, &[a, b], data, &shape, backward)
}

type Unary = fn(f64) -> f64;
/// Derivative given (input, output).
type UnaryGrad = fn(f64, f64) -> f64;

fn unary(op: &'static str, a: &Tensor, f: impl Fn(f64) -> f64, df: impl Fn(f64, f64) -> f64 + 'static) -> Tensor {
    let data: Vec<f64> = a.data.iter().map(|&x| f(x)).collect();
    if !a.requires_grad() {
        return Tensor::new(data, &a.shape).expect("shape preserved");
    }
    let x = Rc::clone(&a.data);
    let y = Rc::new(data.clone());
    let backward: BackwardFn = Box::new(move |g, _| {
        let gx = g
            .iter()
            .zip(x.iter().zip(y.iter()))
            .map(|(gi, (&xi, &yi))| gi * df(xi, yi))
            .collect();
        vec![Some(gx)]
    });
    Tensor::from_op(op, &[a], data, &a.shape, backward).expect("shape preserved")
}

fn unary_fn(op: &'static str, a: &Tensor, f: Unary, df: UnaryGrad) -> Tensor {
    unary(op, a, f, df)
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

impl Tensor {
    pub fn add(&self, other: &Tensor) -> Result<Tensor> {
        binary("add", self, other, |a, b| a + b, |_, _| 1.0, |_, _| 1.0)
    }

    pub fn sub(&self, other: &Tensor) -> Result<Tensor> {
        binary("sub", self, other, |a, b| a - b, |_, _| 1.0, |_, _| -1.0)
    }

    pub fn mul(&self, other: &Tensor) -> Result<Tensor> {
        binary("mul", self, other, |a, b| a * b, |_, b| b, |a, _| a)
    }

    /// Errors when any divisor is zero.
    pub fn div(&self, other: &Tensor) -> Result<Tensor> {
        if other.data.iter().any(|&v| v == 0.0) {
            return Err(Error::domain("div", "division by zero"));
        }
        binary(
            "div",
            self,
            other,
            |a, b| a / b,
            |_, b| 1.0 / b,
            |a, b| -a / (b * b),
        )
    }

    /// Element-wise minimum; ties route the gradient to `self`.
    pub fn min_elementwise(&self, other: &Tensor) -> Result<Tensor> {
        binary(
            "min_elementwise",
            self,
            other,
            f64::min,
            |a, b| if a <= b { 1.0 } else { 0.0 },
            |a, b| if a <= b { 0.0 } else { 1.0 },
        )
    }

    /// Element-wise maximum; ties route the gradient to `self`.
    pub fn max_elementwise(&self, other: &Tensor) -> Result<Tensor> {
        binary(
            "max_elementwise",
            self,
            other,
            f64::max,
            |a, b| if a >= b { 1.0 } else { 0.0 },
            |a, b| if a >= b { 0.0 } else { 1.0 },
        )
    }

    pub fn neg(&self) -> Tensor {
        unary_fn("neg", self, |x| -x, |_, _| -1.0)
    }

    pub fn exp(&self) -> Tensor {
        unary_fn("exp", self, f64::exp, |_, y| y)
    }

    /// Natural log; errors on non-positive input.
    pub fn log(&self) -> Result<Tensor> {
        if let Some(v) = self.data.iter().find(|&&v| v <= 0.0 || v.is_nan()) {
            return Err(Error::domain("log", format!("argument {v} is not positive")));
        }
        Ok(unary_fn("log", self, f64::ln, |x, _| 1.0 / x))
    }

    /// Absolute value with sub-gradient 0 at 0.
    pub fn abs(&self) -> Tensor {
        unary_fn("abs", self, f64::abs, |x, _| {
            if x > 0.0 {
                1.0
            } else if x < 0.0 {
                -1.0
            } else {
                0.0
            }
        })
    }

    /// `x^p`; non-integer `p` requires non-negative input.
    pub fn pow(&self, p: f64) -> Result<Tensor> {
        if p.fract() != 0.0 && self.data.iter().any(|&v| v < 0.0) {
            return Err(Error::domain("pow", "negative base with fractional exponent"));
        }
        Ok(unary(
            "pow",
            self,
            move |x| x.powf(p),
            move |x, _| p * x.powf(p - 1.0),
        ))
    }

    pub fn sqrt(&self) -> Result<Tensor> {
        if self.data.iter().any(|&v| v < 0.0) {
            return Err(Error::domain("sqrt", "negative argument"));
        }
        Ok(unary_fn("sqrt", self, f64::sqrt, |_, y| 0.5 / y))
    }

    pub fn sigmoid(&self) -> Tensor {
        unary_fn("sigmoid", self, sigmoid, |_, y| y * (1.0 - y))
    }

    pub fn relu(&self) -> Tensor {
        unary_fn(
            "relu",
            self,
            |x| x.max(0.0),
            |x, _| if x > 0.0 { 1.0 } else { 0.0 },
        )
    }

    /// ELU with unit scale.
    pub fn elu(&self) -> Tensor {
        unary_fn(
            "elu",
            self,
            |x| if x > 0.0 { x } else { x.exp_m1() },
            |x, y| if x > 0.0 { 1.0 } else { y + 1.0 },
        )
    }

    /// Clamp to `[lo, hi]`; the gradient passes only inside the interval.
    pub fn clamp(&self, lo: f64, hi: f64) -> Tensor {
        unary(
            "clamp",
            self,
            move |x| x.clamp(lo, hi),
            move |x, _| if x >= lo && x <= hi { 1.0 } else { 0.0 },
        )
    }

    pub fn mul_scalar(&self, s: f64) -> Tensor {
        unary("mul_scalar", self, move |x| x * s, move |_, _| s)
    }

    pub fn add_scalar(&self, s: f64) -> Tensor {
        unary("add_scalar", self, move |x| x + s, |_, _| 1.0)
    }

    /// Sum of every element, rank 0.
    pub fn sum(&self) -> Tensor {
        let total = pairwise_sum(&self.data);
        let n = self.numel();
        let backward: BackwardFn = Box::new(move |g, _| vec![Some(vec![g[0]; n])]);
        Tensor::from_op("sum", &[self], vec![total], &[], backward).expect("scalar")
    }

    /// Mean of every element, rank 0.
    pub fn mean(&self) -> Tensor {
        let n = self.numel();
        let value = pairwise_sum(&self.data) / n as f64;
        let backward: BackwardFn = Box::new(move |g, _| vec![Some(vec![g[0] / n as f64; n])]);
        Tensor::from_op("mean", &[self], vec![value], &[], backward).expect("scalar")
    }

    /// Sum along `axis`, keeping it with extent 1.
    pub fn sum_axis(&self, axis: usize) -> Result<Tensor> {
        self.reduce_axis("sum_axis", axis, 1.0)
    }

    /// Mean along `axis`, keeping it with extent 1.
    pub fn mean_axis(&self, axis: usize) -> Result<Tensor> {
        let extent = *self
            .shape
            .get(axis)
            .ok_or_else(|| Error::shape("mean_axis", &self.shape, &[axis]))?;
        self.reduce_axis("mean_axis", axis, 1.0 / extent as f64)
    }

    fn reduce_axis(&self, op: &'static str, axis: usize, scale: f64) -> Result<Tensor> {
        if axis >= self.shape.len() {
            return Err(Error::shape(op, &self.shape, &[axis]));
        }
        let outer: usize = self.shape[..axis].iter().product();
        let extent = self.shape[axis];
        let inner: usize = self.shape[axis + 1..].iter().product();
        let mut out = vec![0.0; outer * inner];
        for o in 0..outer {
            for k in 0..extent {
                let src = &self.data[(o * extent + k) * inner..(o * extent + k + 1) * inner];
                let dst = &mut out[o * inner..(o + 1) * inner];
                dst.iter_mut().zip(src).for_each(|(d, s)| *d += s);
            }
        }
        out.iter_mut().for_each(|v| *v *= scale);
        let mut shape = self.shape.clone();
        shape[axis] = 1;
        let backward: BackwardFn = Box::new(move |g, _| {
            let mut gx = vec![0.0; outer * extent * inner];
            for o in 0..outer {
                for k in 0..extent {
                    let dst = &mut gx[(o * extent + k) * inner..(o * extent + k + 1) * inner];
                    let src = &g[o * inner..(o + 1) * inner];
                    dst.iter_mut().zip(src).for_each(|(d, s)| *d = s * scale);
                }
            }
            vec![Some(gx)]
        });
        Tensor::from_op(op, &[self], out, &shape, backward)
    }

    /// Numerically stable log-softmax along `axis`.
    pub fn log_softmax(&self, axis: usize) -> Result<Tensor> {
        if axis >= self.shape.len() {
            return Err(Error::shape("log_softmax", &self.shape, &[axis]));
        }
        let outer: usize = self.shape[..axis].iter().product();
        let extent = self.shape[axis];
        let inner: usize = self.shape[axis + 1..].iter().product();
        let x = &self.data;
        let mut out = vec![0.0; x.len()];
        for o in 0..outer {
            for i in 0..inner {
                let at = |k: usize| (o * extent + k) * inner + i;
                let m = (0..extent).map(|k| x[at(k)]).fold(f64::NEG_INFINITY, f64::max);
                let lse = m + (0..extent).map(|k| (x[at(k)] - m).exp()).sum::<f64>().ln();
                for k in 0..extent {
                    out[at(k)] = x[at(k)] - lse;
                }
            }
        }
        let y = Rc::new(out.clone());
        let backward: BackwardFn = Box::new(move |g, _| {
            let mut gx = vec![0.0; g.len()];
            for o in 0..outer {
                for i in 0..inner {
                    let at = |k: usize| (o * extent + k) * inner + i;
                    let gsum: f64 = (0..extent).map(|k| g[at(k)]).sum();
                    for k in 0..extent {
                        gx[at(k)] = g[at(k)] - y[at(k)].exp() * gsum;
                    }
                }
            }
            vec![Some(gx)]
        });
        Tensor::from_op("log_softmax", &[self], out, &self.shape, backward)
    }

    /// 2-D matrix product `[m, k] x [k, n]`.
    pub fn matmul(&self, other: &Tensor) -> Result<Tensor> {
        let (a, b) = (&self.shape, &other.shape);
        if a.len() != 2 || b.len() != 2 || a[1] != b[0] {
            return Err(Error::shape("matmul", a, b));
        }
        let (m, k, n) = (a[0], a[1], b[1]);
        let mut out = vec![0.0; m * n];
        gemm(m, k, n, &self.data, false, &other.data, false, &mut out, 0.0);
        let (xa, xb) = (Rc::clone(&self.data), Rc::clone(&other.data));
        let backward: BackwardFn = Box::new(move |g, needs| {
            let ga = needs[0].then(|| {
                let mut ga = vec![0.0; m * k];
                gemm(m, n, k, g, false, &xb, true, &mut ga, 0.0);
                ga
            });
            let gb = needs[1].then(|| {
                let mut gb = vec![0.0; k * n];
                gemm(k, m, n, &xa, true, g, false, &mut gb, 0.0);
                gb
            });
            vec![ga, gb]
        });
        Tensor::from_op("matmul", &[self, other], out, &[m, n], backward)
    }

    /// Same data, new shape with equal element count.
    pub fn reshape(&self, shape: &[usize]) -> Result<Tensor> {
        if shape.iter().product::<usize>() != self.numel() {
            return Err(Error::shape("reshape", &self.shape, shape));
        }
        let backward: BackwardFn = Box::new(|g, _| vec![Some(g.to_vec())]);
        Tensor::from_op("reshape", &[self], self.data.as_ref().clone(), shape, backward)
    }

    /// Contiguous range `[start, start + len)` along `axis`.
    pub fn slice(&self, axis: usize, start: usize, len: usize) -> Result<Tensor> {
        if axis >= self.shape.len() || start + len > self.shape[axis] {
            return Err(Error::shape("slice", &self.shape, &[axis, start, len]));
        }
        let outer: usize = self.shape[..axis].iter().product();
        let extent = self.shape[axis];
        let inner: usize = self.shape[axis + 1..].iter().product();
        let mut out = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            let base = (o * extent + start) * inner;
            out.extend_from_slice(&self.data[base..base + len * inner]);
        }
        let mut shape = self.shape.clone();
        shape[axis] = len;
        let backward: BackwardFn = Box::new(move |g, _| {
            let mut gx = vec![0.0; outer * extent * inner];
            for o in 0..outer {
                let base = (o * extent + start) * inner;
                gx[base..base + len * inner]
                    .copy_from_slice(&g[o * len * inner..(o + 1) * len * inner]);
            }
            vec![Some(gx)]
        });
        Tensor::from_op("slice", &[self], out, &shape, backward)
    }

    /// Concatenates along `axis`; all other extents must agree.
    pub fn concat(parts: &[&Tensor], axis: usize) -> Result<Tensor> {
        let first = parts
            .first()
            .ok_or_else(|| Error::domain("concat", "no tensors"))?;
        let rank = first.shape.len();
        if axis >= rank {
            return Err(Error::shape("concat", &first.shape, &[axis]));
        }
        for p in parts {
            let same = p.shape.len() == rank
                && (0..rank).all(|d| d == axis || p.shape[d] == first.shape[d]);
            if !same {
                return Err(Error::shape("concat", &first.shape, &p.shape));
            }
        }
        let outer: usize = first.shape[..axis].iter().product();
        let inner: usize = first.shape[axis + 1..].iter().product();
        let extents: Vec<usize> = parts.iter().map(|p| p.shape[axis]).collect();
        let total: usize = extents.iter().sum();
        let mut out = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for (p, &e) in parts.iter().zip(&extents) {
                out.extend_from_slice(&p.data[o * e * inner..(o + 1) * e * inner]);
            }
        }
        let mut shape = first.shape.clone();
        shape[axis] = total;
        let backward: BackwardFn = Box::new(move |g, needs| {
            let mut grads: Vec<Option<Vec<f64>>> = extents
                .iter()
                .zip(needs)
                .map(|(&e, &n)| n.then(|| Vec::with_capacity(outer * e * inner)))
                .collect();
            let mut offset = 0;
            for _ in 0..outer {
                for (gp, &e) in grads.iter_mut().zip(&extents) {
                    if let Some(gp) = gp {
                        gp.extend_from_slice(&g[offset..offset + e * inner]);
                    }
                    offset += e * inner;
                }
            }
            grads
        });
        Tensor::from_op("concat", parts, out, &shape, backward)
    }

    /// Channel concatenation for NCHW tensors.
    pub fn concat_channels(parts: &[&Tensor]) -> Result<Tensor> {
        if parts.iter().any(|p| p.shape.len() != 4) {
            return Err(Error::domain("concat_channels", "expects NCHW tensors"));
        }
        Tensor::concat(parts, 1)
    }

    /// Nearest-neighbour ×2 upsampling of an NCHW tensor.
    pub fn upsample_nearest2x(&self) -> Result<Tensor> {
        let [n, c, h, w] = nchw("upsample_nearest2x", &self.shape)?;
        let (ho, wo) = (2 * h, 2 * w);
        let mut out = vec![0.0; n * c * ho * wo];
        for p in 0..n * c {
            let src = &self.data[p * h * w..(p + 1) * h * w];
            let dst = &mut out[p * ho * wo..(p + 1) * ho * wo];
            for y in 0..ho {
                for x in 0..wo {
                    dst[y * wo + x] = src[(y / 2) * w + x / 2];
                }
            }
        }
        let backward: BackwardFn = Box::new(move |g, _| {
            let mut gx = vec![0.0; n * c * h * w];
            for p in 0..n * c {
                let src = &g[p * ho * wo..(p + 1) * ho * wo];
                let dst = &mut gx[p * h * w..(p + 1) * h * w];
                for y in 0..ho {
                    for x in 0..wo {
                        dst[(y / 2) * w + x / 2] += src[y * wo + x];
                    }
                }
            }
            vec![Some(gx)]
        });
        Tensor::from_op("upsample_nearest2x", &[self], out, &[n, c, ho, wo], backward)
    }

    /// 3×3 mean pooling, stride 1, reflection padding by one pixel so the
    /// output keeps the input extents. Needs H, W ≥ 2.
    pub fn avg_pool3x3(&self) -> Result<Tensor> {
        let [n, c, h, w] = nchw("avg_pool3x3", &self.shape)?;
        if h < 2 || w < 2 {
            return Err(Error::shape("avg_pool3x3", &self.shape, &[2, 2]));
        }
        let taps = Rc::new(reflect_taps(h, w));
        let mut out = vec![0.0; n * c * h * w];
        for p in 0..n * c {
            let src = &self.data[p * h * w..(p + 1) * h * w];
            let dst = &mut out[p * h * w..(p + 1) * h * w];
            for (i, t) in taps.iter().enumerate() {
                let mut s = 0.0;
                for &j in t {
                    s += src[j];
                }
                dst[i] = s / 9.0;
            }
        }
        let backward: BackwardFn = Box::new(move |g, _| {
            let mut gx = vec![0.0; n * c * h * w];
            for p in 0..n * c {
                let src = &g[p * h * w..(p + 1) * h * w];
                let dst = &mut gx[p * h * w..(p + 1) * h * w];
                for (i, t) in taps.iter().enumerate() {
                    let gi = src[i] / 9.0;
                    for &j in t {
                        dst[j] += gi;
                    }
                }
            }
            vec![Some(gx)]
        });
        Tensor::from_op("avg_pool3x3", &[self], out, &self.shape, backward)
    }
}

/// Reflected 3×3 neighbourhood of each pixel, row-major window order.
fn reflect_taps(h: usize, w: usize) -> Vec<[usize; 9]> {
    let reflect = |i: isize, n: usize| -> usize {
        if i < 0 {
            (-i) as usize
        } else if i as usize >= n {
            2 * (n - 1) - i as usize
        } else {
            i as usize
        }
    };
    let mut taps = Vec::with_capacity(h * w);
    for y in 0..h as isize {
        for x in 0..w as isize {
            let mut t = [0usize; 9];
            let mut k = 0;
            for dy in -1..=1 {
                for dx in -1..=1 {
                    t[k] = reflect(y + dy, h) * w + reflect(x + dx, w);
                    k += 1;
                }
            }
            taps.push(t);
        }
    }
    taps
}

pub(crate) fn nchw(op: &'static str, shape: &[usize]) -> Result<[usize; 4]> {
    match shape {
        &[n, c, h, w] => Ok([n, c, h, w]),
        _ => Err(Error::domain(op, format!("expected NCHW, got {shape:?}"))),
    }
}

/// Deterministic pairwise summation (fixed binary tree over 8-element leaves).
pub fn pairwise_sum(v: &[f64]) -> f64 {
    if v.len() <= 8 {
        v.iter().sum()
    } else {
        let mid = v.len() / 2;
        pairwise_sum(&v[..mid]) + pairwise_sum(&v[mid..])
    }
}

/// `out = op(a)[m,k] · op(b)[k,n] + beta · out`, row-major.
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    trans_a: bool,
    b: &[f64],
    trans_b: bool,
    out: &mut [f64],
    beta: f64,
) {
    debug_assert!(a.len() >= m * k && b.len() >= k * n && out.len() >= m * n);
    let (rsa, csa) = if trans_a { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if trans_b { (1, k as isize) } else { (n as isize, 1) };
    // SAFETY: strides describe in-bounds row-major views of the given slices.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            out.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::{grad_check, Tape};

    #[test]
    fn add_componentwise() {
        let a = Tensor::from_slice(&[1.0, 2.0]);
        let b = Tensor::from_slice(&[3.0, 4.0]);
        assert_eq!(a.add(&b).unwrap().data(), &[4.0, 6.0]);
    }

    #[test]
    fn sigmoid_at_zero() {
        assert_eq!(Tensor::scalar(0.0).sigmoid().item(), 0.5);
    }

    #[test]
    fn shape_mismatch_names_op_and_shapes() {
        let a = Tensor::zeros(&[2, 3]);
        let b = Tensor::zeros(&[4]);
        let err = a.add(&b).unwrap_err().to_string();
        assert!(err.contains("add") && err.contains("[2, 3]") && err.contains("[4]"));
    }

    #[test]
    fn invalid_log_and_div() {
        assert!(Tensor::from_slice(&[1.0, 0.0]).log().is_err());
        let one = Tensor::from_slice(&[1.0]);
        assert!(one.div(&Tensor::from_slice(&[0.0])).is_err());
    }

    #[test]
    fn broadcasting_reduces_in_backward() {
        let tape = Tape::new();
        let a = tape.leaf(&Tensor::new(vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0], &[2, 3]).unwrap());
        let b = tape.leaf(&Tensor::new(vec![10.0, 20.0], &[2, 1]).unwrap());
        let y = a.mul(&b).unwrap();
        assert_eq!(y.data(), &[10.0, 20.0, 30.0, 80.0, 100.0, 120.0]);
        let g = tape.backward(&y.sum()).unwrap();
        assert_eq!(g.get(&b).unwrap().data(), &[6.0, 15.0]);
        assert_eq!(g.get(&a).unwrap().data(), &[10.0, 10.0, 10.0, 20.0, 20.0, 20.0]);
    }

    #[test]
    fn concat_and_slice_invert() {
        let a = Tensor::new((0..8).map(f64::from).collect(), &[1, 2, 2, 2]).unwrap();
        let b = Tensor::new((8..12).map(f64::from).collect(), &[1, 1, 2, 2]).unwrap();
        let c = Tensor::concat_channels(&[&a, &b]).unwrap();
        assert_eq!(c.shape(), &[1, 3, 2, 2]);
        assert_eq!(c.slice(1, 2, 1).unwrap().data(), b.data());
        assert_eq!(c.slice(1, 0, 2).unwrap().data(), a.data());
    }

    #[test]
    fn avg_pool_of_constant_is_constant() {
        let x = Tensor::full(&[1, 1, 3, 4], 2.5);
        let y = x.avg_pool3x3().unwrap();
        assert!(y.data().iter().all(|&v| (v - 2.5).abs() < 1e-15));
    }

    #[test]
    fn log_softmax_normalizes() {
        let x = Tensor::new(vec![0.3, -1.0, 2.0, 0.0, 0.5, 0.5], &[1, 3, 1, 2]).unwrap();
        let p = x.log_softmax(1).unwrap().exp();
        for i in 0..2 {
            let s: f64 = (0..3).map(|k| p.data()[k * 2 + i]).sum();
            assert!((s - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn matmul_matches_loops() {
        let a = Tensor::new((0..6).map(|v| v as f64 * 0.5).collect(), &[2, 3]).unwrap();
        let b = Tensor::new((0..12).map(|v| 1.0 - v as f64).collect(), &[3, 4]).unwrap();
        let c = a.matmul(&b).unwrap();
        for i in 0..2 {
            for j in 0..4 {
                let want: f64 = (0..3).map(|k| a.data()[i * 3 + k] * b.data()[k * 4 + j]).sum();
                assert!((c.data()[i * 4 + j] - want).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn sum_of_squares_gradcheck() {
        let x = Tensor::from_slice(&[1.0, 2.0, 3.0]);
        let err = grad_check(|x| Ok(x.mul(x)?.sum()), &x, 1e-5).unwrap();
        assert!(err < 1e-8, "{err}");
    }
}
