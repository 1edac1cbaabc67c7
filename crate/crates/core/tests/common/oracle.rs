//! Scalar per-pixel reference for the warping primitives, written straight
//! from the pinhole and bilinear definitions.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use s3kit::geometry::{
    apply_flow, backproject, project, rigid_flow, warp, CameraIntrinsics, FlowField, PoseSE3, RigidTransform, Z_MIN,
};
use s3kit::tensor::Tensor;

const H: usize = 8;
const W: usize = 8;
const C: usize = 3;

struct Instance {
    k: CameraIntrinsics,
    pose: PoseSE3,
    depth: Vec<f64>,
    image: Vec<f64>,
    flow: Vec<f64>,
}

fn instance(seed: u64) -> Instance {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let f = rng.gen_range(4.0..10.0);
    let k = CameraIntrinsics::new(
        f,
        f * rng.gen_range(0.9..1.1),
        rng.gen_range(3.0..4.5),
        rng.gen_range(3.0..4.5),
        W,
        H,
    )
    .unwrap();
    let aa = [rng.gen_range(-0.1..0.1), rng.gen_range(-0.1..0.1), rng.gen_range(-0.1..0.1)];
    let t = [rng.gen_range(-0.5..0.5), rng.gen_range(-0.3..0.3), rng.gen_range(-0.5..0.5)];
    Instance {
        k,
        pose: PoseSE3::from_params(aa, t),
        depth: (0..H * W).map(|_| rng.gen_range(0.5..10.0)).collect(),
        image: (0..C * H * W).map(|_| rng.gen_range(0.0..1.0)).collect(),
        flow: (0..2 * H * W).map(|_| rng.gen_range(-2.5..2.5)).collect(),
    }
}

fn bits(a: &[f64]) -> Vec<u64> {
    a.iter().map(|v| v.to_bits()).collect()
}

fn ray(k: &CameraIntrinsics, u: usize, v: usize, z: f64) -> [f64; 3] {
    [z * ((u as f64 - k.cx) / k.fx), z * ((v as f64 - k.cy) / k.fy), z]
}

/// `(column, row, in front)` of a camera point after the rigid motion.
fn proj(k: &CameraIntrinsics, pose: &PoseSE3, p: [f64; 3]) -> (f64, f64, bool) {
    let r = &pose.rotation;
    let t = &pose.translation;
    let q: [f64; 3] = std::array::from_fn(|i| r[(i, 0)] * p[0] + r[(i, 1)] * p[1] + r[(i, 2)] * p[2] + t[i]);
    if q[2] > Z_MIN {
        (k.fx * q[0] / q[2] + k.cx, k.fy * q[1] / q[2] + k.cy, true)
    } else {
        (f64::NAN, f64::NAN, false)
    }
}

/// Bilinear read of channel `ch` with zero padding; the flag is 1 when all
/// four corners are inside.
fn bilinear(img: &[f64], ch: usize, x: f64, y: f64) -> (f64, bool) {
    if !x.is_finite() || !y.is_finite() {
        return (0.0, false);
    }
    let (x0, y0) = (x.floor(), y.floor());
    let (wx, wy) = (x - x0, y - y0);
    let px = |xx: f64, yy: f64| -> f64 {
        if xx >= 0.0 && yy >= 0.0 && xx < W as f64 && yy < H as f64 {
            img[ch * H * W + yy as usize * W + xx as usize]
        } else {
            0.0
        }
    };
    let v = px(x0, y0) * (1.0 - wx) * (1.0 - wy)
        + px(x0 + 1.0, y0) * wx * (1.0 - wy)
        + px(x0, y0 + 1.0) * (1.0 - wx) * wy
        + px(x0 + 1.0, y0 + 1.0) * wx * wy;
    let inside = x0 >= 0.0 && y0 >= 0.0 && x0 + 1.0 <= (W - 1) as f64 && y0 + 1.0 <= (H - 1) as f64;
    (v, inside)
}

/// First primitive whose output differs from the scalar reference on
/// instance `seed`, if any.
pub fn mismatch(seed: u64) -> Option<String> {
    {
        let inst = instance(1000 + seed);
        let k = &inst.k;
        let depth = Tensor::new(inst.depth.clone(), &[1, 1, H, W]).unwrap();
        let image = Tensor::new(inst.image.clone(), &[1, C, H, W]).unwrap();
        let rt = RigidTransform::from_poses(&[inst.pose]);

        let mut want_pts = vec![0.0; 3 * H * W];
        let mut want_coords = vec![0.0; 2 * H * W];
        let mut want_front = vec![0.0; H * W];
        let mut want_warp = vec![0.0; C * H * W];
        let mut want_valid = vec![0.0; H * W];
        let mut want_flow = vec![0.0; 2 * H * W];
        let mut want_applied = vec![0.0; C * H * W];
        let mut want_applied_mask = vec![0.0; H * W];
        for v in 0..H {
            for u in 0..W {
                let p = v * W + u;
                let pt = ray(k, u, v, inst.depth[p]);
                for c in 0..3 {
                    want_pts[c * H * W + p] = pt[c];
                }
                let (x, y, front) = proj(k, &inst.pose, pt);
                want_coords[p] = x;
                want_coords[H * W + p] = y;
                want_front[p] = f64::from(u8::from(front));
                if front {
                    want_flow[p] = x - u as f64;
                    want_flow[H * W + p] = y - v as f64;
                }
                let mut inside = false;
                for c in 0..C {
                    let (val, ins) = bilinear(&inst.image, c, x, y);
                    want_warp[c * H * W + p] = val;
                    inside = ins;
                }
                want_valid[p] = f64::from(u8::from(front && inside));

                let (fx, fy) = (u as f64 + inst.flow[p], v as f64 + inst.flow[H * W + p]);
                for c in 0..C {
                    let (val, ins) = bilinear(&inst.image, c, fx, fy);
                    want_applied[c * H * W + p] = val;
                    inside = ins;
                }
                want_applied_mask[p] = f64::from(u8::from(inside));
            }
        }

        let pts = backproject(&depth, k).unwrap();
        if bits(pts.data()) != bits(&want_pts) {
            return Some(format!("backproject, seed {seed}"));
        }

        let (coords, front) = project(&pts, k, &rt).unwrap();
        if bits(coords.data()) != bits(&want_coords) {
            return Some(format!("project, seed {seed}"));
        }
        if bits(front.data()) != bits(&want_front) {
            return Some(format!("project mask, seed {seed}"));
        }

        let (recon, valid) = warp(&image, &depth, &rt, k).unwrap();
        if bits(recon.data()) != bits(&want_warp) {
            return Some(format!("warp, seed {seed}"));
        }
        if bits(valid.data()) != bits(&want_valid) {
            return Some(format!("warp mask, seed {seed}"));
        }

        let flow = rigid_flow(&depth, &rt, k).unwrap();
        if bits(flow.flow.data()) != bits(&want_flow) {
            return Some(format!("rigid_flow, seed {seed}"));
        }
        if bits(flow.mask.data()) != bits(&want_front) {
            return Some(format!("rigid_flow mask, seed {seed}"));
        }

        let field = FlowField {
            flow: Tensor::new(inst.flow.clone(), &[1, 2, H, W]).unwrap(),
            mask: Tensor::full(&[1, 1, H, W], 1.0),
        };
        let (applied, mask) = apply_flow(&image, &field).unwrap();
        if bits(applied.data()) != bits(&want_applied) {
            return Some(format!("apply_flow, seed {seed}"));
        }
        if bits(mask.data()) != bits(&want_applied_mask) {
            return Some(format!("apply_flow mask, seed {seed}"));
        }
    }
    None
}
