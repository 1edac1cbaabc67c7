//! 2-D convolution and transposed convolution via im2col + GEMM.

use std::rc::Rc;

use super::ops::{gemm, nchw};
use super::{BackwardFn, Tensor};
use crate::error::{Error, Result};

#[derive(Clone, Copy)]
struct Geometry {
    channels: usize,
    h: usize,
    w: usize,
    k: usize,
    stride: usize,
    pad: usize,
    ho: usize,
    wo: usize,
}

impl Geometry {
    fn rows(&self) -> usize {
        self.channels * self.k * self.k
    }

    fn cols(&self) -> usize {
        self.ho * self.wo
    }

    /// Input coordinate touched by output `o` and kernel tap `t`.
    #[inline]
    fn src(o: usize, t: usize, stride: usize, pad: usize, extent: usize) -> Option<usize> {
        let i = (o * stride + t) as isize - pad as isize;
        (i >= 0 && (i as usize) < extent).then_some(i as usize)
    }

    fn im2col(&self, x: &[f64], cols: &mut [f64]) {
        let n = self.cols();
        for c in 0..self.channels {
            for ky in 0..self.k {
                for kx in 0..self.k {
                    let row = (c * self.k + ky) * self.k + kx;
                    let dst = &mut cols[row * n..(row + 1) * n];
                    for oy in 0..self.ho {
                        let line = &mut dst[oy * self.wo..(oy + 1) * self.wo];
                        match Self::src(oy, ky, self.stride, self.pad, self.h) {
                            None => line.fill(0.0),
                            Some(iy) => {
                                let src = &x[(c * self.h + iy) * self.w..(c * self.h + iy + 1) * self.w];
                                for (ox, v) in line.iter_mut().enumerate() {
                                    *v = match Self::src(ox, kx, self.stride, self.pad, self.w) {
                                        Some(ix) => src[ix],
                                        None => 0.0,
                                    };
                                }
                            }
                        }
                    }
                }
            }
        }
    }

    fn col2im(&self, cols: &[f64], x: &mut [f64]) {
        let n = self.cols();
        for c in 0..self.channels {
            for ky in 0..self.k {
                for kx in 0..self.k {
                    let row = (c * self.k + ky) * self.k + kx;
                    let src = &cols[row * n..(row + 1) * n];
                    for oy in 0..self.ho {
                        let Some(iy) = Self::src(oy, ky, self.stride, self.pad, self.h) else {
                            continue;
                        };
                        let dst = &mut x[(c * self.h + iy) * self.w..(c * self.h + iy + 1) * self.w];
                        for ox in 0..self.wo {
                            if let Some(ix) = Self::src(ox, kx, self.stride, self.pad, self.w) {
                                dst[ix] += src[oy * self.wo + ox];
                            }
                        }
                    }
                }
            }
        }
    }
}

fn check_bias(op: &'static str, bias: Option<&Tensor>, co: usize) -> Result<()> {
    match bias {
        Some(b) if b.shape() != [co] => Err(Error::shape(op, b.shape(), &[co])),
        _ => Ok(()),
    }
}

impl Tensor {
    /// Cross-correlation of `self` `[N, Ci, H, W]` with `weight`
    /// `[Co, Ci, k, k]`, zero padding `pad`, stride `stride`.
    pub fn conv2d(
        &self,
        weight: &Tensor,
        bias: Option<&Tensor>,
        stride: usize,
        pad: usize,
    ) -> Result<Tensor> {
        let [n, ci, h, w] = nchw("conv2d", self.shape())?;
        let [co, wci, k, k2] = nchw("conv2d", weight.shape())?;
        if wci != ci || k != k2 || stride == 0 || h + 2 * pad < k || w + 2 * pad < k {
            return Err(Error::shape("conv2d", self.shape(), weight.shape()));
        }
        check_bias("conv2d", bias, co)?;
        let geo = Geometry {
            channels: ci,
            h,
            w,
            k,
            stride,
            pad,
            ho: (h + 2 * pad - k) / stride + 1,
            wo: (w + 2 * pad - k) / stride + 1,
        };
        let (rows, cols_n) = (geo.rows(), geo.cols());
        let mut out = vec![0.0; n * co * cols_n];
        let mut cols = vec![0.0; rows * cols_n];
        for b in 0..n {
            geo.im2col(&self.data()[b * ci * h * w..(b + 1) * ci * h * w], &mut cols);
            let dst = &mut out[b * co * cols_n..(b + 1) * co * cols_n];
            if let Some(bias) = bias {
                for (o, chunk) in dst.chunks_mut(cols_n).enumerate() {
                    chunk.fill(bias.data()[o]);
                }
            }
            gemm(co, rows, cols_n, weight.data(), false, &cols, false, dst, 1.0);
        }
        let shape = [n, co, geo.ho, geo.wo];
        let x = Rc::clone(&self.data);
        let wt = Rc::clone(&weight.data);
        let has_bias = bias.is_some();
        let backward: BackwardFn = Box::new(move |g, needs| {
            let mut gx = needs[0].then(|| vec![0.0; n * ci * h * w]);
            let mut gw = needs[1].then(|| vec![0.0; co * rows]);
            let mut cols = vec![0.0; rows * cols_n];
            let mut gcols = vec![0.0; rows * cols_n];
            for b in 0..n {
                let gb = &g[b * co * cols_n..(b + 1) * co * cols_n];
                if let Some(gw) = gw.as_mut() {
                    geo.im2col(&x[b * ci * h * w..(b + 1) * ci * h * w], &mut cols);
                    gemm(co, cols_n, rows, gb, false, &cols, true, gw, 1.0);
                }
                if let Some(gx) = gx.as_mut() {
                    gemm(rows, co, cols_n, &wt, true, gb, false, &mut gcols, 0.0);
                    geo.col2im(&gcols, &mut gx[b * ci * h * w..(b + 1) * ci * h * w]);
                }
            }
            let mut grads = vec![gx, gw];
            if has_bias {
                grads.push(needs[2].then(|| bias_grad(g, n, co, cols_n)));
            }
            grads
        });
        let mut inputs = vec![self, weight];
        inputs.extend(bias);
        Tensor::from_op("conv2d", &inputs, out, &shape, backward)
    }

    /// Transposed convolution (the adjoint of [`Tensor::conv2d`]) of `self`
    /// `[N, Ci, H, W]` with `weight` `[Ci, Co, k, k]`. Output extent is
    /// `(H - 1)·stride − 2·pad + k`.
    pub fn conv_transpose2d(
        &self,
        weight: &Tensor,
        bias: Option<&Tensor>,
        stride: usize,
        pad: usize,
    ) -> Result<Tensor> {
        let [n, ci, h, w] = nchw("conv_transpose2d", self.shape())?;
        let [wci, co, k, k2] = nchw("conv_transpose2d", weight.shape())?;
        if wci != ci || k != k2 || stride == 0 || (h - 1) * stride + k < 2 * pad + 1 {
            return Err(Error::shape("conv_transpose2d", self.shape(), weight.shape()));
        }
        check_bias("conv_transpose2d", bias, co)?;
        let ho = (h - 1) * stride + k - 2 * pad;
        let wo = (w - 1) * stride + k - 2 * pad;
        // Geometry of the forward convolution this op is the adjoint of.
        let geo = Geometry {
            channels: co,
            h: ho,
            w: wo,
            k,
            stride,
            pad,
            ho: h,
            wo: w,
        };
        let (rows, hw) = (geo.rows(), h * w);
        let mut out = vec![0.0; n * co * ho * wo];
        let mut cols = vec![0.0; rows * hw];
        for b in 0..n {
            gemm(rows, ci, hw, weight.data(), true, &self.data()[b * ci * hw..(b + 1) * ci * hw], false, &mut cols, 0.0);
            let dst = &mut out[b * co * ho * wo..(b + 1) * co * ho * wo];
            geo.col2im(&cols, dst);
            if let Some(bias) = bias {
                for (o, chunk) in dst.chunks_mut(ho * wo).enumerate() {
                    chunk.iter_mut().for_each(|v| *v += bias.data()[o]);
                }
            }
        }
        let shape = [n, co, ho, wo];
        let x = Rc::clone(&self.data);
        let wt = Rc::clone(&weight.data);
        let has_bias = bias.is_some();
        let backward: BackwardFn = Box::new(move |g, needs| {
            let mut gx = needs[0].then(|| vec![0.0; n * ci * hw]);
            let mut gw = needs[1].then(|| vec![0.0; ci * rows]);
            let mut gcols = vec![0.0; rows * hw];
            for b in 0..n {
                geo.im2col(&g[b * co * ho * wo..(b + 1) * co * ho * wo], &mut gcols);
                if let Some(gx) = gx.as_mut() {
                    gemm(ci, rows, hw, &wt, false, &gcols, false, &mut gx[b * ci * hw..(b + 1) * ci * hw], 0.0);
                }
                if let Some(gw) = gw.as_mut() {
                    gemm(ci, hw, rows, &x[b * ci * hw..(b + 1) * ci * hw], false, &gcols, true, gw, 1.0);
                }
            }
            let mut grads = vec![gx, gw];
            if has_bias {
                grads.push(needs[2].then(|| bias_grad(g, n, co, ho * wo)));
            }
            grads
        });
        let mut inputs = vec![self, weight];
        inputs.extend(bias);
        Tensor::from_op("conv_transpose2d", &inputs, out, &shape, backward)
    }
}

fn bias_grad(g: &[f64], n: usize, co: usize, plane: usize) -> Vec<f64> {
    let mut gb = vec![0.0; co];
    for b in 0..n {
        for (o, acc) in gb.iter_mut().enumerate() {
            let base = (b * co + o) * plane;
            *acc += g[base..base + plane].iter().sum::<f64>();
        }
    }
    gb
}
