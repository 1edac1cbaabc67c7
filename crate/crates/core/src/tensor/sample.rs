//! Differentiable bilinear sampling.

use std::rc::Rc;

use super::ops::nchw;
use super::{BackwardFn, Tensor};
use crate::error::{Error, Result};

struct Cell {
    x0: f64,
    y0: f64,
    wx: f64,
    wy: f64,
    valid: bool,
}

#[inline]
fn cell(x: f64, y: f64, h: usize, w: usize) -> Option<Cell> {
    if !x.is_finite() || !y.is_finite() {
        return None;
    }
    let x0 = x.floor();
    let y0 = y.floor();
    let valid = x0 >= 0.0 && x0 + 1.0 <= (w - 1) as f64 && y0 >= 0.0 && y0 + 1.0 <= (h - 1) as f64;
    Some(Cell {
        x0,
        y0,
        wx: x - x0,
        wy: y - y0,
        valid,
    })
}

/// Flat index of `(x, y)` inside an `h × w` plane, `None` outside.
#[inline]
fn at(x: f64, y: f64, h: usize, w: usize) -> Option<usize> {
    (x >= 0.0 && y >= 0.0 && x < w as f64 && y < h as f64).then(|| y as usize * w + x as usize)
}

/// Samples `source` `[N, C, H, W]` at pixel coordinates `coords`
/// `[N, 2, Ho, Wo]` (channel 0 = column, channel 1 = row; pixel `(u, v)`
/// sits at continuous coordinate `(u, v)`).
///
/// Corners outside the raster read as zero. The second output is an
/// untracked `[N, 1, Ho, Wo]` mask that is 1 where all four corners are in
/// bounds. Coordinate gradients are the bilinear sub-gradients, taking the
/// right limit on cell boundaries.
pub fn grid_sample_bilinear(source: &Tensor, coords: &Tensor) -> Result<(Tensor, Tensor)> {
    let [n, c, h, w] = nchw("grid_sample_bilinear", source.shape())?;
    let [cn, two, ho, wo] = nchw("grid_sample_bilinear", coords.shape())?;
    if cn != n || two != 2 {
        return Err(Error::shape("grid_sample_bilinear", source.shape(), coords.shape()));
    }
    let plane = ho * wo;
    let mut out = vec![0.0; n * c * plane];
    let mut mask = vec![0.0; n * plane];
    let src = source.data();
    let crd = coords.data();
    for b in 0..n {
        for p in 0..plane {
            let x = crd[(b * 2) * plane + p];
            let y = crd[(b * 2 + 1) * plane + p];
            let Some(cl) = cell(x, y, h, w) else { continue };
            mask[b * plane + p] = if cl.valid { 1.0 } else { 0.0 };
            let i00 = at(cl.x0, cl.y0, h, w);
            let i10 = at(cl.x0 + 1.0, cl.y0, h, w);
            let i01 = at(cl.x0, cl.y0 + 1.0, h, w);
            let i11 = at(cl.x0 + 1.0, cl.y0 + 1.0, h, w);
            for ch in 0..c {
                let base = (b * c + ch) * h * w;
                let v = |i: Option<usize>| i.map_or(0.0, |i| src[base + i]);
                out[(b * c + ch) * plane + p] = v(i00) * (1.0 - cl.wx) * (1.0 - cl.wy)
                    + v(i10) * cl.wx * (1.0 - cl.wy)
                    + v(i01) * (1.0 - cl.wx) * cl.wy
                    + v(i11) * cl.wx * cl.wy;
            }
        }
    }
    let mask = Tensor::new(mask, &[n, 1, ho, wo])?;
    let src_rc = Rc::clone(&source.data);
    let crd_rc = Rc::clone(&coords.data);
    let backward: BackwardFn = Box::new(move |g, needs| {
        let mut gs = needs[0].then(|| vec![0.0; n * c * h * w]);
        let mut gc = needs[1].then(|| vec![0.0; n * 2 * plane]);
        for b in 0..n {
            for p in 0..plane {
                let x = crd_rc[(b * 2) * plane + p];
                let y = crd_rc[(b * 2 + 1) * plane + p];
                let Some(cl) = cell(x, y, h, w) else { continue };
                let idx = [
                    at(cl.x0, cl.y0, h, w),
                    at(cl.x0 + 1.0, cl.y0, h, w),
                    at(cl.x0, cl.y0 + 1.0, h, w),
                    at(cl.x0 + 1.0, cl.y0 + 1.0, h, w),
                ];
                let weights = [
                    (1.0 - cl.wx) * (1.0 - cl.wy),
                    cl.wx * (1.0 - cl.wy),
                    (1.0 - cl.wx) * cl.wy,
                    cl.wx * cl.wy,
                ];
                let (mut dx, mut dy) = (0.0, 0.0);
                for ch in 0..c {
                    let base = (b * c + ch) * h * w;
                    let gi = g[(b * c + ch) * plane + p];
                    if let Some(gs) = gs.as_mut() {
                        for (i, wt) in idx.iter().zip(weights) {
                            if let Some(i) = i {
                                gs[base + i] += gi * wt;
                            }
                        }
                    }
                    if gc.is_some() {
                        let v: Vec<f64> = idx.iter().map(|i| i.map_or(0.0, |i| src_rc[base + i])).collect();
                        dx += gi * ((1.0 - cl.wy) * (v[1] - v[0]) + cl.wy * (v[3] - v[2]));
                        dy += gi * ((1.0 - cl.wx) * (v[2] - v[0]) + cl.wx * (v[3] - v[1]));
                    }
                }
                if let Some(gc) = gc.as_mut() {
                    gc[(b * 2) * plane + p] = dx;
                    gc[(b * 2 + 1) * plane + p] = dy;
                }
            }
        }
        vec![gs, gc]
    });
    let out = Tensor::from_op(
        "grid_sample_bilinear",
        &[source, coords],
        out,
        &[n, c, ho, wo],
        backward,
    )?;
    Ok((out, mask))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::grad_check;

    fn ramp(h: usize, w: usize) -> Tensor {
        Tensor::new((0..h * w).map(|i| i as f64 * 0.1).collect(), &[1, 1, h, w]).unwrap()
    }

    fn grid(h: usize, w: usize, du: f64, dv: f64) -> Tensor {
        let mut c = Vec::with_capacity(2 * h * w);
        for y in 0..h {
            for x in 0..w {
                let _ = y;
                c.push(x as f64 + du);
            }
        }
        for y in 0..h {
            for _ in 0..w {
                c.push(y as f64 + dv);
            }
        }
        Tensor::new(c, &[1, 2, h, w]).unwrap()
    }

    #[test]
    fn identity_grid_reproduces_source() {
        let src = ramp(4, 5);
        let (out, mask) = grid_sample_bilinear(&src, &grid(4, 5, 0.0, 0.0)).unwrap();
        assert_eq!(out.data(), src.data());
        // last row and column have an out-of-bounds corner
        assert_eq!(mask.data().iter().sum::<f64>(), 12.0);
    }

    #[test]
    fn fractional_sample_interpolates() {
        let src = ramp(3, 3);
        let coords = Tensor::new(vec![0.5, 0.25], &[1, 2, 1, 1]).unwrap();
        let (out, mask) = grid_sample_bilinear(&src, &coords).unwrap();
        // value = 0.1 * (x + 3 y)
        assert!((out.item() - 0.1 * (0.5 + 0.75)).abs() < 1e-15);
        assert_eq!(mask.item(), 1.0);
    }

    #[test]
    fn non_finite_coordinates_are_masked() {
        let src = ramp(3, 3);
        let coords = Tensor::new(vec![f64::NAN, 1.0], &[1, 2, 1, 1]).unwrap();
        let (out, mask) = grid_sample_bilinear(&src, &coords).unwrap();
        assert_eq!(out.item(), 0.0);
        assert_eq!(mask.item(), 0.0);
    }

    #[test]
    fn gradients_inside_cells() {
        let src = Tensor::new((0..30).map(|i| ((i * 7) % 11) as f64 / 11.0).collect(), &[1, 2, 3, 5]).unwrap();
        let coords = Tensor::new(vec![0.3, 1.7, 3.2, 2.6, 0.4, 1.45, 0.15, 1.9], &[1, 2, 2, 2]).unwrap();
        let e = grad_check(|c| Ok(grid_sample_bilinear(&src, c)?.0.mean()), &coords, 1e-6).unwrap();
        assert!(e < 1e-6, "{e}");
        let e = grad_check(|s| Ok(grid_sample_bilinear(s, &coords)?.0.mean()), &src, 1e-6).unwrap();
        assert!(e < 1e-9, "{e}");
    }
}
