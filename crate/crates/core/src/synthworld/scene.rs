use nalgebra::{Matrix3, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{rigid_flow, CameraIntrinsics, FlowField, PoseSE3, RigidTransform, Z_MIN};
use crate::tensor::Tensor;

/// Depth written for sky pixels and for anything farther away.
pub const SKY_DEPTH: f64 = 80.0;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Class {
    Road = 0,
    Building = 1,
    Car = 2,
    Person = 3,
    Sky = 4,
}

impl Class {
    pub const ALL: [Class; 5] = [Class::Road, Class::Building, Class::Car, Class::Person, Class::Sky];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            Class::Road => "road",
            Class::Building => "building",
            Class::Car => "car",
            Class::Person => "person",
            Class::Sky => "sky",
        }
    }

    /// Display color for label visualizations.
    pub fn palette(self) -> [u8; 3] {
        match self {
            Class::Road => [128, 64, 128],
            Class::Building => [70, 70, 70],
            Class::Car => [0, 0, 142],
            Class::Person => [220, 20, 60],
            Class::Sky => [70, 130, 180],
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Domain {
    Synthetic,
    Real,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PrimitiveKind {
    /// Axis-aligned box.
    Box,
    /// Axis-aligned rectangle facing the z axis (zero depth extent).
    Wall,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Primitive {
    pub kind: PrimitiveKind,
    /// World-frame center in meters.
    pub center: [f64; 3],
    /// Full extents in meters; a wall has zero z extent.
    pub extents: [f64; 3],
    pub class: Class,
    pub texture_seed: u64,
    /// Noise lattice cells per meter.
    pub texture_scale: f64,
    pub color: [f64; 3],
}

impl Primitive {
    fn bounds(&self) -> ([f64; 3], [f64; 3]) {
        let mut lo = [0.0; 3];
        let mut hi = [0.0; 3];
        for i in 0..3 {
            lo[i] = self.center[i] - self.extents[i] / 2.0;
            hi[i] = self.center[i] + self.extents[i] / 2.0;
        }
        (lo, hi)
    }

    /// Ray `o + s·d` entry parameter and entered face axis, if hit with s > 0.
    fn intersect(&self, o: &Vector3<f64>, d: &Vector3<f64>) -> Option<(f64, usize)> {
        let (lo, hi) = self.bounds();
        let mut enter = f64::NEG_INFINITY;
        let mut exit = f64::INFINITY;
        let mut axis = 0;
        for i in 0..3 {
            if d[i].abs() < 1e-12 {
                if o[i] < lo[i] || o[i] > hi[i] {
                    return None;
                }
                continue;
            }
            let a = (lo[i] - o[i]) / d[i];
            let b = (hi[i] - o[i]) / d[i];
            let (near, far) = if a <= b { (a, b) } else { (b, a) };
            if near > enter {
                enter = near;
                axis = i;
            }
            exit = exit.min(far);
        }
        (enter <= exit && enter > 0.0).then_some((enter, axis))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SceneSpec {
    pub seed: u64,
    /// World y of the ground plane; y points down, the first camera sits at y = 0.
    pub ground_height: f64,
    pub ground_texture_seed: u64,
    pub primitives: Vec<Primitive>,
    /// World-from-camera poses.
    pub trajectory: Vec<PoseSE3Serde>,
    pub intrinsics: CameraIntrinsics,
}

/// Serializable pose (row-major 4×4).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct PoseSE3Serde(pub Vec<f64>);

impl SceneSpec {
    pub fn pose(&self, i: usize) -> Result<PoseSE3> {
        let p = self
            .trajectory
            .get(i)
            .ok_or_else(|| Error::domain("SceneSpec::pose", format!("index {i} of {}", self.trajectory.len())))?;
        PoseSE3::from_row_major(&p.0)
    }

    pub fn poses(&self) -> Result<Vec<PoseSE3>> {
        (0..self.trajectory.len()).map(|i| self.pose(i)).collect()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct WorldConfig {
    pub width: usize,
    pub height: usize,
    pub focal: f64,
    pub frames: usize,
    pub camera_height: f64,
    pub min_primitives: usize,
    pub max_primitives: usize,
    /// Forward speed range in meters per frame.
    pub speed: [f64; 2],
    /// Probability that a sequence is (nearly) static.
    pub static_probability: f64,
    /// Per-frame yaw random-walk step (radians) and absolute bound.
    pub yaw_step: f64,
    pub yaw_bound: f64,
    /// Supersampling factor per axis for color.
    pub supersample: usize,
}

impl Default for WorldConfig {
    fn default() -> Self {
        Self {
            width: 64,
            height: 32,
            focal: 40.0,
            frames: 8,
            camera_height: 1.5,
            min_primitives: 3,
            max_primitives: 12,
            speed: [0.3, 0.9],
            static_probability: 0.15,
            yaw_step: 0.01,
            yaw_bound: 0.05,
            supersample: 3,
        }
    }
}

impl WorldConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.width >= 4
            && self.height >= 4
            && self.focal > 0.0
            && self.frames >= 2
            && self.camera_height > 0.0
            && self.min_primitives >= 3
            && self.min_primitives <= self.max_primitives
            && self.max_primitives <= 12
            && self.speed[0] >= 0.0
            && self.speed[0] <= self.speed[1]
            && (0.0..=1.0).contains(&self.static_probability)
            && self.yaw_bound >= 0.0
            && self.yaw_bound < 0.3
            && self.supersample >= 1;
        if ok {
            Ok(())
        } else {
            Err(Error::domain("WorldConfig", format!("{self:?}")))
        }
    }

    pub fn intrinsics(&self) -> Result<CameraIntrinsics> {
        CameraIntrinsics::centered(self.width, self.height, self.focal)
    }
}

/// Independent stream per (seed, tag).
pub(crate) fn derive_seed(seed: u64, tag: u64) -> u64 {
    let mut z = seed ^ tag.wrapping_mul(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

fn jitter(rng: &mut ChaCha8Rng, base: [f64; 3], amount: f64) -> [f64; 3] {
    let mut c = base;
    for v in &mut c {
        *v = (*v + rng.gen_range(-amount..amount)).clamp(0.05, 0.95);
    }
    c
}

/// Procedural scene: a textured road, buildings, cars and people ahead of a
/// forward-moving camera.
pub fn generate_scene(seed: u64, cfg: &WorldConfig) -> Result<SceneSpec> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let k = cfg.intrinsics()?;

    let speed = if rng.gen_bool(cfg.static_probability) {
        rng.gen_range(0.0..0.03)
    } else {
        rng.gen_range(cfg.speed[0]..=cfg.speed[1])
    };
    let step = Normal::new(0.0, cfg.yaw_step.max(1e-12)).expect("positive std");
    let mut yaw = 0.0f64;
    let mut x = 0.0f64;
    let mut z = 0.0f64;
    let mut trajectory = Vec::with_capacity(cfg.frames);
    for i in 0..cfg.frames {
        if i > 0 {
            yaw = (yaw + step.sample(&mut rng)).clamp(-cfg.yaw_bound, cfg.yaw_bound);
            x += speed * yaw.sin();
            z += speed * yaw.cos();
        }
        let pose = PoseSE3::from_params([0.0, yaw, 0.0], [x, 0.0, z]);
        trajectory.push(PoseSE3Serde(pose.to_row_major().to_vec()));
    }
    let travel = z;
    let g = cfg.camera_height;

    let count = rng.gen_range(cfg.min_primitives..=cfg.max_primitives);
    let mut primitives = Vec::with_capacity(count);
    for i in 0..count {
        // the first three slots guarantee a backdrop, a side building and a car
        let class = match i {
            0 | 1 => Class::Building,
            2 => Class::Car,
            _ => match rng.gen_range(0..10) {
                0..=3 => Class::Building,
                4..=7 => Class::Car,
                _ => Class::Person,
            },
        };
        let tex = rng.gen();
        let p = match class {
            Class::Building if i == 0 => {
                let h = rng.gen_range(8.0..16.0);
                Primitive {
                    kind: PrimitiveKind::Wall,
                    center: [rng.gen_range(-4.0..4.0), g - h / 2.0, travel + rng.gen_range(35.0..60.0)],
                    extents: [rng.gen_range(30.0..60.0), h, 0.0],
                    class,
                    texture_seed: tex,
                    texture_scale: 0.6,
                    color: jitter(&mut rng, [0.55, 0.45, 0.4], 0.15),
                }
            }
            Class::Building => {
                let h = rng.gen_range(4.0..12.0);
                let w = rng.gen_range(2.0..6.0);
                let depth = rng.gen_range(4.0..14.0);
                let side = if i == 1 || rng.gen_bool(0.5) { -1.0 } else { 1.0 };
                Primitive {
                    kind: PrimitiveKind::Box,
                    center: [
                        side * rng.gen_range(5.5..9.0),
                        g - h / 2.0,
                        travel + rng.gen_range(4.0..30.0) + depth / 2.0,
                    ],
                    extents: [w, h, depth],
                    class,
                    texture_seed: tex,
                    texture_scale: 0.9,
                    color: jitter(&mut rng, [0.6, 0.55, 0.5], 0.2),
                }
            }
            Class::Car => {
                let (w, h, l) = (rng.gen_range(1.6..2.0), rng.gen_range(1.3..1.7), rng.gen_range(3.5..4.5));
                Primitive {
                    kind: PrimitiveKind::Box,
                    center: [
                        rng.gen_range(-3.5..3.5),
                        g - h / 2.0,
                        travel + rng.gen_range(5.0..25.0) + l / 2.0,
                    ],
                    extents: [w, h, l],
                    class,
                    texture_seed: tex,
                    texture_scale: 1.6,
                    color: jitter(&mut rng, [0.3, 0.35, 0.7], 0.25),
                }
            }
            _ => {
                let h = rng.gen_range(1.5..1.9);
                Primitive {
                    kind: PrimitiveKind::Box,
                    center: [
                        rng.gen_range(-4.5..4.5),
                        g - h / 2.0,
                        travel + rng.gen_range(4.0..15.0),
                    ],
                    extents: [0.5, h, 0.4],
                    class: Class::Person,
                    texture_seed: tex,
                    texture_scale: 3.0,
                    color: jitter(&mut rng, [0.8, 0.3, 0.3], 0.15),
                }
            }
        };
        primitives.push(p);
    }
    let scene = SceneSpec {
        seed,
        ground_height: g,
        ground_texture_seed: rng.gen(),
        primitives,
        trajectory,
        intrinsics: k,
    };
    check_front(&scene)?;
    Ok(scene)
}

/// Every primitive corner lies in front of every camera by more than `Z_MIN`.
pub fn check_front(scene: &SceneSpec) -> Result<()> {
    for pose in scene.poses()? {
        let inv = pose.inverse();
        for p in &scene.primitives {
            let (lo, hi) = p.bounds();
            for corner in 0..8 {
                let c = Vector3::new(
                    if corner & 1 == 0 { lo[0] } else { hi[0] },
                    if corner & 2 == 0 { lo[1] } else { hi[1] },
                    if corner & 4 == 0 { lo[2] } else { hi[2] },
                );
                if inv.apply(&c).z <= Z_MIN {
                    return Err(Error::domain("SceneSpec", "primitive behind a camera"));
                }
            }
        }
    }
    Ok(())
}

fn lattice(seed: u64, ix: i64, iy: i64) -> f64 {
    let h = derive_seed(seed, (ix as u64).wrapping_mul(0x1f1f_1f1f) ^ (iy as u64).wrapping_mul(0x7fff_ffff_0001));
    (h >> 11) as f64 / (1u64 << 53) as f64
}

fn value_noise(seed: u64, x: f64, y: f64) -> f64 {
    let (fx, fy) = (x.floor(), y.floor());
    let (tx, ty) = (x - fx, y - fy);
    let (sx, sy) = (tx * tx * (3.0 - 2.0 * tx), ty * ty * (3.0 - 2.0 * ty));
    let (ix, iy) = (fx as i64, fy as i64);
    let a = lattice(seed, ix, iy);
    let b = lattice(seed, ix + 1, iy);
    let c = lattice(seed, ix, iy + 1);
    let d = lattice(seed, ix + 1, iy + 1);
    let top = a + (b - a) * sx;
    let bottom = c + (d - c) * sx;
    top + (bottom - top) * sy
}

/// Two-octave value noise in [0, 1].
pub fn texture(seed: u64, x: f64, y: f64) -> f64 {
    0.65 * value_noise(seed, x, y) + 0.35 * value_noise(derive_seed(seed, 1), 2.0 * x, 2.0 * y)
}

struct Hit {
    depth: f64,
    class: Class,
    color: [f64; 3],
}

fn sky_color(dir_world: &Vector3<f64>) -> [f64; 3] {
    let up = (-dir_world.y / dir_world.norm()).clamp(0.0, 1.0);
    [0.55 + 0.2 * up, 0.7 + 0.15 * up, 0.9 + 0.08 * up]
}

/// Nearest surface along the ray through continuous pixel `(u, v)`.
fn trace(scene: &SceneSpec, pose: &PoseSE3, u: f64, v: f64) -> Hit {
    let k = &scene.intrinsics;
    let d_cam = Vector3::new((u - k.cx) / k.fx, (v - k.cy) / k.fy, 1.0);
    let d = pose.rotation * d_cam;
    let o = pose.translation;
    // parameter s along d equals camera-frame depth because d_cam.z = 1
    let mut best: Option<(f64, Class, [f64; 3])> = None;
    for p in &scene.primitives {
        if let Some((s, axis)) = p.intersect(&o, &d) {
            if best.as_ref().is_none_or(|b| s < b.0) {
                let hit = o + d * s;
                let (a, b) = match axis {
                    0 => (hit.z, hit.y),
                    1 => (hit.x, hit.z),
                    _ => (hit.x, hit.y),
                };
                let n = texture(p.texture_seed, a * p.texture_scale, b * p.texture_scale);
                let shade = 0.55 + 0.45 * n;
                // side faces slightly darker so box edges read
                let face = if axis == 2 { 1.0 } else { 0.85 };
                let color = p.color.map(|c| (c * shade * face).clamp(0.0, 1.0));
                best = Some((s, p.class, color));
            }
        }
    }
    if d.y > 1e-12 {
        let s = (scene.ground_height - o.y) / d.y;
        if s > 0.0 && best.as_ref().is_none_or(|b| s < b.0) {
            let hit = o + d * s;
            let n = texture(scene.ground_texture_seed, hit.x * 1.2, hit.z * 1.2);
            let lane = if (hit.x.abs() - 0.1).abs() < 0.08 { 0.25 } else { 0.0 };
            let g = (0.3 + 0.25 * n + lane).clamp(0.0, 1.0);
            best = Some((s, Class::Road, [g, g * 0.98, g * 0.95]));
        }
    }
    match best {
        Some((s, class, color)) if s < SKY_DEPTH => Hit { depth: s, class, color },
        _ => Hit {
            depth: SKY_DEPTH,
            class: Class::Sky,
            color: sky_color(&d),
        },
    }
}

/// One rendered frame with its ground truth.
#[derive(Clone, Debug)]
pub struct FrameBundle {
    /// `[1, 3, H, W]` in [0, 1].
    pub rgb: Tensor,
    /// `[1, 1, H, W]` camera-frame depth in meters.
    pub depth: Tensor,
    /// Row-major class indices, `H·W`.
    pub semantics: Vec<usize>,
    /// Displacement from each pixel of the next frame to its source in this
    /// frame; `apply_flow(rgb, flow)` reconstructs the next frame.
    pub flow_to_next: Option<FlowField>,
    /// World-from-camera.
    pub pose: PoseSE3,
    pub domain: Domain,
}

pub fn render_frame(scene: &SceneSpec, index: usize, supersample: usize) -> Result<FrameBundle> {
    let pose = scene.pose(index)?;
    let k = &scene.intrinsics;
    let (h, w) = (k.height, k.width);
    let plane = h * w;
    let mut rgb = vec![0.0; 3 * plane];
    let mut depth = vec![0.0; plane];
    let mut semantics = vec![0; plane];
    let ss = supersample.max(1);
    for y in 0..h {
        for x in 0..w {
            let i = y * w + x;
            let center = trace(scene, &pose, x as f64, y as f64);
            depth[i] = center.depth;
            semantics[i] = center.class.index();
            let mut acc = [0.0; 3];
            for sy in 0..ss {
                for sx in 0..ss {
                    let du = (sx as f64 + 0.5) / ss as f64 - 0.5;
                    let dv = (sy as f64 + 0.5) / ss as f64 - 0.5;
                    let hit = trace(scene, &pose, x as f64 + du, y as f64 + dv);
                    for c in 0..3 {
                        acc[c] += hit.color[c];
                    }
                }
            }
            for c in 0..3 {
                rgb[c * plane + i] = acc[c] / (ss * ss) as f64;
            }
        }
    }
    Ok(FrameBundle {
        rgb: Tensor::new(rgb, &[1, 3, h, w])?,
        depth: Tensor::new(depth, &[1, 1, h, w])?,
        semantics,
        flow_to_next: None,
        pose,
        domain: Domain::Synthetic,
    })
}

/// `T` mapping camera-`from` coordinates into camera-`to` coordinates.
pub fn relative_pose(from: &PoseSE3, to: &PoseSE3) -> PoseSE3 {
    to.inverse().compose(from)
}

/// Every frame, with `flow_to_next` from the next frame's depth and the
/// rigid motion back into this frame.
pub fn render_sequence(scene: &SceneSpec, supersample: usize) -> Result<Vec<FrameBundle>> {
    let mut frames = (0..scene.trajectory.len())
        .map(|i| render_frame(scene, i, supersample))
        .collect::<Result<Vec<_>>>()?;
    for i in 0..frames.len().saturating_sub(1) {
        let back = relative_pose(&frames[i + 1].pose, &frames[i].pose);
        let flow = rigid_flow(&frames[i + 1].depth, &RigidTransform::from_poses(&[back]), &scene.intrinsics)?;
        frames[i].flow_to_next = Some(flow);
    }
    Ok(frames)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DomainParams {
    pub gamma: f64,
    pub brightness: f64,
    /// Darkening at the image corners (0 disables).
    pub vignette: f64,
    pub noise_std: f64,
    pub noise_seed: u64,
}

impl DomainParams {
    pub fn identity() -> Self {
        Self {
            gamma: 1.0,
            brightness: 1.0,
            vignette: 0.0,
            noise_std: 0.0,
            noise_seed: 0,
        }
    }
}

impl Default for DomainParams {
    /// The look of the "real" domain.
    fn default() -> Self {
        Self {
            gamma: 0.75,
            brightness: 0.9,
            vignette: 0.2,
            noise_std: 0.01,
            noise_seed: 0,
        }
    }
}

/// `clamp(rgb^γ · b − vignette·r² + noise, 0, 1)`, with `r` the normalized
/// distance from the image center.
pub fn stylize_domain(bundle: &FrameBundle, p: &DomainParams) -> Result<FrameBundle> {
    if !(p.brightness > 0.0 && p.gamma > 0.0 && p.noise_std >= 0.0) {
        return Err(Error::domain("stylize_domain", format!("{p:?}")));
    }
    let (h, w) = (bundle.rgb.shape()[2], bundle.rgb.shape()[3]);
    let plane = h * w;
    let mut rng = ChaCha8Rng::seed_from_u64(p.noise_seed);
    let noise = (p.noise_std > 0.0).then(|| Normal::new(0.0, p.noise_std).expect("positive std"));
    let (cx, cy) = ((w as f64 - 1.0) / 2.0, (h as f64 - 1.0) / 2.0);
    let out = bundle
        .rgb
        .data()
        .iter()
        .enumerate()
        .map(|(i, &v)| {
            let (y, x) = ((i % plane) / w, i % w);
            let r2 = ((x as f64 - cx) / cx.max(1.0)).powi(2) / 2.0 + ((y as f64 - cy) / cy.max(1.0)).powi(2) / 2.0;
            let mut o = v.powf(p.gamma) * p.brightness - p.vignette * r2;
            if let Some(n) = &noise {
                o += n.sample(&mut rng);
            }
            o.clamp(0.0, 1.0)
        })
        .collect();
    Ok(FrameBundle {
        rgb: Tensor::new(out, bundle.rgb.shape())?,
        domain: Domain::Real,
        ..bundle.clone()
    })
}

/// Rotation about the world y axis, for tests and fixtures.
pub fn yaw_rotation(angle: f64) -> Matrix3<f64> {
    crate::geometry::rotation_from_axis_angle([0.0, angle, 0.0])
}
