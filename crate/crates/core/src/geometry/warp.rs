//! Differentiable back-projection, projection and view synthesis.
//!
//! Image tensors are NCHW. Pixel `(u, v)` (column, row) sits at continuous
//! coordinate `(u, v)`; there is no half-pixel offset anywhere.

use nalgebra::{Matrix3, Vector3};

use super::camera::{rodrigues_coefficients, skew, CameraIntrinsics, PoseSE3};
use crate::error::{Error, Result};
use crate::tensor::{grid_sample_bilinear, BackwardFn, Tensor};

/// Points with camera-frame depth at or below this are treated as behind
/// the camera.
pub const Z_MIN: f64 = 1e-3;

fn nchw(op: &'static str, t: &Tensor) -> Result<[usize; 4]> {
    match *t.shape() {
        [n, c, h, w] => Ok([n, c, h, w]),
        _ => Err(Error::domain(op, format!("expected NCHW, got {:?}", t.shape()))),
    }
}

/// Batched rigid transform whose rotation and translation may be tracked.
#[derive(Clone, Debug)]
pub struct RigidTransform {
    /// `[N, 3, 3]`
    pub rotation: Tensor,
    /// `[N, 3]`
    pub translation: Tensor,
}

impl RigidTransform {
    /// From pose-network style parameters `[N, 6]` = (axis-angle, translation).
    pub fn from_params(params: &Tensor) -> Result<Self> {
        match params.shape() {
            [_, 6] => {}
            s => return Err(Error::shape("RigidTransform::from_params", s, &[0, 6])),
        }
        Ok(Self {
            rotation: axis_angle_to_rotation(&params.slice(1, 0, 3)?)?,
            translation: params.slice(1, 3, 3)?,
        })
    }

    /// Untracked batch from concrete poses.
    pub fn from_poses(poses: &[PoseSE3]) -> Self {
        let n = poses.len();
        let mut r = Vec::with_capacity(9 * n);
        let mut t = Vec::with_capacity(3 * n);
        for p in poses {
            for i in 0..3 {
                for j in 0..3 {
                    r.push(p.rotation[(i, j)]);
                }
            }
            t.extend(p.translation.iter());
        }
        Self {
            rotation: Tensor::new(r, &[n, 3, 3]).expect("shape"),
            translation: Tensor::new(t, &[n, 3]).expect("shape"),
        }
    }

    pub fn batch(&self) -> usize {
        self.translation.shape()[0]
    }

    /// Current values as concrete poses.
    pub fn to_poses(&self) -> Vec<PoseSE3> {
        let (r, t) = (self.rotation.data(), self.translation.data());
        (0..self.batch())
            .map(|b| PoseSE3 {
                rotation: Matrix3::from_fn(|i, j| r[b * 9 + i * 3 + j]),
                translation: Vector3::new(t[b * 3], t[b * 3 + 1], t[b * 3 + 2]),
            })
            .collect()
    }

    /// Differentiable inverse `(Rᵀ, −Rᵀ t)`.
    pub fn inverse(&self) -> Result<Self> {
        let n = self.batch();
        let (r, t) = (self.rotation.to_vec(), self.translation.to_vec());
        let mut out = vec![0.0; n * 12];
        for b in 0..n {
            let rb = &r[b * 9..b * 9 + 9];
            let tb = &t[b * 3..b * 3 + 3];
            for i in 0..3 {
                for j in 0..3 {
                    out[b * 12 + i * 3 + j] = rb[j * 3 + i];
                }
                out[b * 12 + 9 + i] = -(rb[i] * tb[0] + rb[3 + i] * tb[1] + rb[6 + i] * tb[2]);
            }
        }
        let backward: BackwardFn = Box::new(move |g, _| {
            let mut gr = vec![0.0; n * 9];
            let mut gt = vec![0.0; n * 3];
            for b in 0..n {
                let rb = &r[b * 9..b * 9 + 9];
                let tb = &t[b * 3..b * 3 + 3];
                let gb = &g[b * 12..b * 12 + 12];
                for i in 0..3 {
                    for j in 0..3 {
                        // out_r[i][j] = r[j][i]
                        gr[b * 9 + j * 3 + i] += gb[i * 3 + j];
                        // out_t[i] = -Σ_j r[j][i] t[j]
                        gr[b * 9 + j * 3 + i] -= gb[9 + i] * tb[j];
                        gt[b * 3 + j] -= gb[9 + i] * rb[j * 3 + i];
                    }
                }
            }
            vec![Some(gr), Some(gt)]
        });
        let packed = Tensor::from_op(
            "rigid_inverse",
            &[&self.rotation, &self.translation],
            out,
            &[n, 12],
            backward,
        )?;
        Ok(Self {
            rotation: packed.slice(1, 0, 9)?.reshape(&[n, 3, 3])?,
            translation: packed.slice(1, 9, 3)?,
        })
    }
}

/// Rodrigues exponential of a batch of axis-angle vectors `[N, 3]` → `[N, 3, 3]`.
pub fn axis_angle_to_rotation(w: &Tensor) -> Result<Tensor> {
    let n = match w.shape() {
        [n, 3] => *n,
        s => return Err(Error::shape("axis_angle_to_rotation", s, &[0, 3])),
    };
    let wv = w.to_vec();
    let mut out = Vec::with_capacity(9 * n);
    for b in 0..n {
        let r = super::camera::rotation_from_axis_angle([wv[3 * b], wv[3 * b + 1], wv[3 * b + 2]]);
        for i in 0..3 {
            for j in 0..3 {
                out.push(r[(i, j)]);
            }
        }
    }
    let backward: BackwardFn = Box::new(move |g, _| {
        let mut gw = vec![0.0; 3 * n];
        for b in 0..n {
            let v = [wv[3 * b], wv[3 * b + 1], wv[3 * b + 2]];
            let s = v[0] * v[0] + v[1] * v[1] + v[2] * v[2];
            let (a, bb, da, db) = rodrigues_coefficients(s);
            let k = skew(v);
            let k2 = k * k;
            let gm = Matrix3::from_fn(|i, j| g[b * 9 + i * 3 + j]);
            for i in 0..3 {
                let mut e = [0.0; 3];
                e[i] = 1.0;
                let ei = skew(e);
                let d = k * (da * 2.0 * v[i]) + ei * a + k2 * (db * 2.0 * v[i]) + (ei * k + k * ei) * bb;
                gw[3 * b + i] = gm.component_mul(&d).sum();
            }
        }
        vec![Some(gw)]
    });
    Tensor::from_op("axis_angle_to_rotation", &[w], out, &[n, 3, 3], backward)
}

/// Camera-frame points `[N, 3, H, W]` from metric depth `[N, 1, H, W]`:
/// `depth · ((u − cx)/fx, (v − cy)/fy, 1)`.
pub fn backproject(depth: &Tensor, k: &CameraIntrinsics) -> Result<Tensor> {
    let [n, c, h, w] = nchw("backproject", depth)?;
    if c != 1 {
        return Err(Error::shape("backproject", depth.shape(), &[n, 1, h, w]));
    }
    if let Some(d) = depth.data().iter().find(|&&d| d <= 0.0 || d.is_nan()) {
        return Err(Error::domain("backproject", format!("non-positive depth {d}")));
    }
    let plane = h * w;
    let rays: Vec<[f64; 2]> = (0..plane)
        .map(|p| {
            let (u, v) = ((p % w) as f64, (p / w) as f64);
            [(u - k.cx) / k.fx, (v - k.cy) / k.fy]
        })
        .collect();
    let d = depth.data();
    let mut out = vec![0.0; n * 3 * plane];
    for b in 0..n {
        for p in 0..plane {
            let z = d[b * plane + p];
            out[(b * 3) * plane + p] = z * rays[p][0];
            out[(b * 3 + 1) * plane + p] = z * rays[p][1];
            out[(b * 3 + 2) * plane + p] = z;
        }
    }
    let backward: BackwardFn = Box::new(move |g, _| {
        let mut gd = vec![0.0; n * plane];
        for b in 0..n {
            for p in 0..plane {
                gd[b * plane + p] = g[(b * 3) * plane + p] * rays[p][0]
                    + g[(b * 3 + 1) * plane + p] * rays[p][1]
                    + g[(b * 3 + 2) * plane + p];
            }
        }
        vec![Some(gd)]
    });
    Tensor::from_op("backproject", &[depth], out, &[n, 3, h, w], backward)
}

/// Transforms camera points by `T` and projects them through `K`.
///
/// Returns sample coordinates `[N, 2, H, W]` (column, row) and an untracked
/// front-of-camera mask `[N, 1, H, W]`. Where the transformed depth is at or
/// below [`Z_MIN`] the coordinates are NaN, the mask is 0, and no gradient
/// flows.
pub fn project(points: &Tensor, k: &CameraIntrinsics, t: &RigidTransform) -> Result<(Tensor, Tensor)> {
    let [n, c, h, w] = nchw("project", points)?;
    if c != 3 || t.batch() != n || t.rotation.shape() != [n, 3, 3] {
        return Err(Error::shape("project", points.shape(), t.rotation.shape()));
    }
    let plane = h * w;
    let (fx, fy, cx, cy) = (k.fx, k.fy, k.cx, k.cy);
    let pts = points.to_vec();
    let rot = t.rotation.to_vec();
    let tr = t.translation.to_vec();
    let mut coords = vec![0.0; n * 2 * plane];
    let mut mask = vec![0.0; n * plane];
    for b in 0..n {
        let r = &rot[b * 9..b * 9 + 9];
        let tb = &tr[b * 3..b * 3 + 3];
        for p in 0..plane {
            let (px, py, pz) = (
                pts[(b * 3) * plane + p],
                pts[(b * 3 + 1) * plane + p],
                pts[(b * 3 + 2) * plane + p],
            );
            let qx = r[0] * px + r[1] * py + r[2] * pz + tb[0];
            let qy = r[3] * px + r[4] * py + r[5] * pz + tb[1];
            let qz = r[6] * px + r[7] * py + r[8] * pz + tb[2];
            if qz > Z_MIN {
                coords[(b * 2) * plane + p] = fx * qx / qz + cx;
                coords[(b * 2 + 1) * plane + p] = fy * qy / qz + cy;
                mask[b * plane + p] = 1.0;
            } else {
                coords[(b * 2) * plane + p] = f64::NAN;
                coords[(b * 2 + 1) * plane + p] = f64::NAN;
            }
        }
    }
    let mask_t = Tensor::new(mask.clone(), &[n, 1, h, w])?;
    let backward: BackwardFn = Box::new(move |g, needs| {
        let mut gp = needs[0].then(|| vec![0.0; n * 3 * plane]);
        let mut gr = needs[1].then(|| vec![0.0; n * 9]);
        let mut gt = needs[2].then(|| vec![0.0; n * 3]);
        for b in 0..n {
            let r = &rot[b * 9..b * 9 + 9];
            let tb = &tr[b * 3..b * 3 + 3];
            for p in 0..plane {
                if mask[b * plane + p] == 0.0 {
                    continue;
                }
                let pv = [
                    pts[(b * 3) * plane + p],
                    pts[(b * 3 + 1) * plane + p],
                    pts[(b * 3 + 2) * plane + p],
                ];
                let q: [f64; 3] = std::array::from_fn(|i| {
                    r[3 * i] * pv[0] + r[3 * i + 1] * pv[1] + r[3 * i + 2] * pv[2] + tb[i]
                });
                let (gu, gv) = (g[(b * 2) * plane + p], g[(b * 2 + 1) * plane + p]);
                let inv = 1.0 / q[2];
                let gq = [
                    gu * fx * inv,
                    gv * fy * inv,
                    -(gu * fx * q[0] + gv * fy * q[1]) * inv * inv,
                ];
                if let Some(gp) = gp.as_mut() {
                    for j in 0..3 {
                        gp[(b * 3 + j) * plane + p] +=
                            r[j] * gq[0] + r[3 + j] * gq[1] + r[6 + j] * gq[2];
                    }
                }
                if let Some(gr) = gr.as_mut() {
                    for i in 0..3 {
                        for j in 0..3 {
                            gr[b * 9 + 3 * i + j] += gq[i] * pv[j];
                        }
                    }
                }
                if let Some(gt) = gt.as_mut() {
                    for i in 0..3 {
                        gt[b * 3 + i] += gq[i];
                    }
                }
            }
        }
        vec![gp, gr, gt]
    });
    let coords = Tensor::from_op(
        "project",
        &[points, &t.rotation, &t.translation],
        coords,
        &[n, 2, h, w],
        backward,
    )?;
    Ok((coords, mask_t))
}

/// Untracked pixel grid `[N, 2, H, W]`.
pub fn pixel_grid(n: usize, h: usize, w: usize) -> Tensor {
    let plane = h * w;
    let mut data = vec![0.0; n * 2 * plane];
    for b in 0..n {
        for p in 0..plane {
            data[(b * 2) * plane + p] = (p % w) as f64;
            data[(b * 2 + 1) * plane + p] = (p / w) as f64;
        }
    }
    Tensor::new(data, &[n, 2, h, w]).expect("shape")
}

/// Reconstructs the target view by sampling `source` at the projection of
/// the target's back-projected depth under `t` (target camera → source
/// camera). Returns the reconstruction and its validity mask (in front of
/// the camera and all bilinear corners in bounds).
pub fn warp(
    source: &Tensor,
    target_depth: &Tensor,
    t: &RigidTransform,
    k: &CameraIntrinsics,
) -> Result<(Tensor, Tensor)> {
    let [sn, _, sh, sw] = nchw("warp", source)?;
    let [dn, _, dh, dw] = nchw("warp", target_depth)?;
    if (sn, sh, sw) != (dn, dh, dw) {
        return Err(Error::shape("warp", source.shape(), target_depth.shape()));
    }
    let points = backproject(target_depth, k)?;
    let (coords, front) = project(&points, k, t)?;
    let (recon, inside) = grid_sample_bilinear(source, &coords)?;
    Ok((recon, front.mul(&inside)?))
}

/// Per-pixel displacement and validity mask.
#[derive(Clone, Debug)]
pub struct FlowField {
    /// `[N, 2, H, W]` pixel displacement (du, dv).
    pub flow: Tensor,
    /// `[N, 1, H, W]`, 1 where the displacement is defined.
    pub mask: Tensor,
}

impl FlowField {
    pub fn zeros(n: usize, h: usize, w: usize) -> Self {
        Self {
            flow: Tensor::zeros(&[n, 2, h, w]),
            mask: Tensor::full(&[n, 1, h, w], 1.0),
        }
    }
}

/// Camera-induced flow: `project(backproject(depth), K, T) − (u, v)`.
/// Displacements are zero where the projection is masked.
pub fn rigid_flow(depth: &Tensor, t: &RigidTransform, k: &CameraIntrinsics) -> Result<FlowField> {
    let [n, _, h, w] = nchw("rigid_flow", depth)?;
    let (coords, mask) = project(&backproject(depth, k)?, k, t)?;
    let plane = h * w;
    let m = mask.to_vec();
    let keep: Vec<f64> = (0..n * 2 * plane)
        .map(|i| m[(i / (2 * plane)) * plane + i % plane])
        .collect();
    // NaN coordinates on masked pixels are replaced before subtracting.
    let finite: Vec<f64> = coords.data().iter().map(|v| if v.is_finite() { *v } else { 0.0 }).collect();
    let grid = pixel_grid(n, h, w);
    let raw = select(&coords, finite, &keep)?;
    let flow = raw.sub(&grid)?.mul(&Tensor::new(keep, &[n, 2, h, w])?)?;
    Ok(FlowField { flow, mask })
}

/// Identity on tracked values where `keep` is 1; untracked `fallback` elsewhere.
fn select(x: &Tensor, fallback: Vec<f64>, keep: &[f64]) -> Result<Tensor> {
    let data: Vec<f64> = x
        .data()
        .iter()
        .zip(&fallback)
        .zip(keep)
        .map(|((v, f), k)| if *k == 1.0 { *v } else { *f })
        .collect();
    let keep = keep.to_vec();
    let backward: BackwardFn = Box::new(move |g, _| {
        vec![Some(g.iter().zip(&keep).map(|(g, k)| g * k).collect())]
    });
    Tensor::from_op("select", &[x], data, x.shape(), backward)
}

/// Samples `image` at `grid + flow`; the returned mask combines the flow's
/// own mask with bilinear in-bounds validity.
pub fn apply_flow(image: &Tensor, flow: &FlowField) -> Result<(Tensor, Tensor)> {
    let [n, _, h, w] = nchw("apply_flow", image)?;
    if flow.flow.shape() != [n, 2, h, w] {
        return Err(Error::shape("apply_flow", image.shape(), flow.flow.shape()));
    }
    let coords = pixel_grid(n, h, w).add(&flow.flow)?;
    let (recon, inside) = grid_sample_bilinear(image, &coords)?;
    Ok((recon, inside.mul(&flow.mask)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::{grad_check, Tape};

    fn k2() -> CameraIntrinsics {
        CameraIntrinsics::new(2.0, 2.0, 1.0, 1.0, 4, 3).unwrap()
    }

    #[test]
    fn backproject_principal_ray_and_offset_pixel() {
        let mut d = vec![1.0; 12];
        d[1 * 4 + 1] = 5.0;
        let depth = Tensor::new(d, &[1, 1, 3, 4]).unwrap();
        let p = backproject(&depth, &k2()).unwrap();
        let at = |c: usize, y: usize, x: usize| p.data()[c * 12 + y * 4 + x];
        assert_eq!((at(0, 1, 1), at(1, 1, 1), at(2, 1, 1)), (0.0, 0.0, 5.0));
        assert_eq!((at(0, 1, 3), at(1, 1, 3), at(2, 1, 3)), (1.0, 0.0, 1.0));
    }

    #[test]
    fn backproject_rejects_non_positive_depth() {
        let depth = Tensor::new(vec![1.0, 0.0, 1.0, 1.0], &[1, 1, 2, 2]).unwrap();
        let k = CameraIntrinsics::new(1.0, 1.0, 0.5, 0.5, 2, 2).unwrap();
        assert!(backproject(&depth, &k).is_err());
    }

    #[test]
    fn identity_projection_returns_grid() {
        let k = k2();
        let depth = Tensor::new((0..12).map(|i| 1.0 + i as f64 * 0.7).collect(), &[1, 1, 3, 4]).unwrap();
        let id = RigidTransform::from_poses(&[PoseSE3::identity()]);
        let (c, m) = project(&backproject(&depth, &k).unwrap(), &k, &id).unwrap();
        let g = pixel_grid(1, 3, 4);
        for (a, b) in c.data().iter().zip(g.data()) {
            assert!((a - b).abs() < 1e-9);
        }
        assert!(m.data().iter().all(|&v| v == 1.0));
    }

    #[test]
    fn translation_shifts_columns() {
        let k = CameraIntrinsics::new(1.0, 1.0, 1.0, 1.0, 4, 3).unwrap();
        let depth = Tensor::full(&[1, 1, 3, 4], 1.0);
        let t = RigidTransform::from_poses(&[PoseSE3::from_params([0.0; 3], [1.0, 0.0, 0.0])]);
        let f = rigid_flow(&depth, &t, &k).unwrap();
        for p in 0..12 {
            assert!((f.flow.data()[p] - 1.0).abs() < 1e-12);
            assert!(f.flow.data()[12 + p].abs() < 1e-12);
        }
    }

    #[test]
    fn behind_camera_is_masked() {
        let k = k2();
        let depth = Tensor::full(&[1, 1, 3, 4], 1.0);
        let t = RigidTransform::from_poses(&[PoseSE3::from_params([0.0; 3], [0.0, 0.0, -2.0])]);
        let (c, m) = project(&backproject(&depth, &k).unwrap(), &k, &t).unwrap();
        assert!(m.data().iter().all(|&v| v == 0.0));
        assert!(c.data().iter().all(|v| v.is_nan()));
        let f = rigid_flow(&depth, &t, &k).unwrap();
        assert!(f.flow.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn scale_covariance() {
        let k = k2();
        let depth = Tensor::new((0..12).map(|i| 2.0 + (i % 5) as f64).collect(), &[1, 1, 3, 4]).unwrap();
        let pose = PoseSE3::from_params([0.05, -0.1, 0.02], [0.3, -0.1, 0.5]);
        let (c1, _) = project(&backproject(&depth, &k).unwrap(), &k, &RigidTransform::from_poses(&[pose])).unwrap();
        let lambda = 3.7;
        let scaled = PoseSE3 {
            translation: pose.translation * lambda,
            ..pose
        };
        let (c2, _) = project(
            &backproject(&depth.mul_scalar(lambda), &k).unwrap(),
            &k,
            &RigidTransform::from_poses(&[scaled]),
        )
        .unwrap();
        for (a, b) in c1.data().iter().zip(c2.data()) {
            assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn rotation_op_matches_scalar_and_gradchecks() {
        let w = Tensor::new(vec![0.3, -0.2, 0.5, 1e-4, -2e-4, 3e-5], &[2, 3]).unwrap();
        let r = axis_angle_to_rotation(&w).unwrap();
        let m = super::super::camera::rotation_from_axis_angle([0.3, -0.2, 0.5]);
        for i in 0..3 {
            for j in 0..3 {
                assert_eq!(r.data()[i * 3 + j], m[(i, j)]);
            }
        }
        let probe = Tensor::new((0..18).map(|i| (i as f64 * 0.37).sin()).collect(), &[2, 3, 3]).unwrap();
        let e = grad_check(|w| Ok(axis_angle_to_rotation(w)?.mul(&probe)?.sum()), &w, 1e-6).unwrap();
        assert!(e < 1e-7, "{e}");
    }

    #[test]
    fn inverse_op_composes_to_identity_and_gradchecks() {
        let params = Tensor::new(vec![0.1, 0.2, -0.3, 0.5, -1.0, 2.0], &[1, 6]).unwrap();
        let t = RigidTransform::from_params(&params).unwrap();
        let inv = t.inverse().unwrap();
        let c = t.to_poses()[0].compose(&inv.to_poses()[0]);
        assert!((c.to_matrix() - nalgebra::Matrix4::identity()).amax() < 1e-12);
        let probe = Tensor::new((0..12).map(|i| 1.0 + i as f64).collect(), &[1, 12]).unwrap();
        let e = grad_check(
            |p| {
                let inv = RigidTransform::from_params(p)?.inverse()?;
                let packed = Tensor::concat(&[&inv.rotation.reshape(&[1, 9])?, &inv.translation], 1)?;
                Ok(packed.mul(&probe)?.sum())
            },
            &params,
            1e-6,
        )
        .unwrap();
        assert!(e < 1e-7, "{e}");
    }

    #[test]
    fn warp_gradients_reach_depth_and_pose() {
        let k = CameraIntrinsics::centered(6, 5, 4.0).unwrap();
        let src = Tensor::new((0..30).map(|i| ((i * 13 % 17) as f64) / 17.0).collect(), &[1, 1, 5, 6]).unwrap();
        let depth = Tensor::new((0..30).map(|i| 3.0 + (i % 7) as f64 * 0.31).collect(), &[1, 1, 5, 6]).unwrap();
        let params = Tensor::new(vec![0.01, -0.02, 0.015, 0.05, 0.02, 0.1], &[1, 6]).unwrap();
        let loss = |d: &Tensor, p: &Tensor| -> Result<Tensor> {
            let (r, m) = warp(&src, d, &RigidTransform::from_params(p)?, &k)?;
            Ok(r.mul(&m)?.mean())
        };
        assert!(grad_check(|p| loss(&depth, p), &params, 1e-6).unwrap() < 1e-5);
        assert!(grad_check(|d| loss(d, &params), &depth, 1e-6).unwrap() < 1e-5);
        let tape = Tape::new();
        let p = tape.leaf(&params);
        let g = tape.backward(&loss(&depth, &p).unwrap()).unwrap();
        assert!(g.get(&p).unwrap().data().iter().any(|v| v.abs() > 0.0));
    }
}
