use serde::{Deserialize, Serialize};

use super::params::{Init, NetworkParams};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Number of semantic classes produced by the segmentation network.
pub const NUM_CLASSES: usize = 5;
pub const DEPTH_MIN: f64 = 0.1;
pub const DEPTH_MAX: f64 = 100.0;
pub const POSE_SCALE: f64 = 0.01;
/// Input clamp before the translator's residual logit.
const LOGIT_EPS: f64 = 1e-3;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HeadKind {
    Disparity,
    SixDof,
    Image,
    PatchLogit,
    ClassLogits,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArchitectureDescriptor {
    pub name: String,
    pub in_channels: usize,
    pub encoder: Vec<usize>,
    pub decoder: Vec<usize>,
    pub head: HeadKind,
}

impl ArchitectureDescriptor {
    /// U-Net depth network; `semantic` adds one-hot class planes to the input.
    pub fn depth(semantic: bool) -> Self {
        Self {
            name: "depth".into(),
            in_channels: 3 + if semantic { NUM_CLASSES } else { 0 },
            encoder: vec![16, 32, 64],
            decoder: vec![32, 16],
            head: HeadKind::Disparity,
        }
    }

    /// Pose network over two stacked RGB frames.
    pub fn pose() -> Self {
        Self {
            name: "pose".into(),
            in_channels: 6,
            encoder: vec![16, 32, 64, 64],
            decoder: vec![],
            head: HeadKind::SixDof,
        }
    }

    pub fn translator() -> Self {
        Self {
            name: "translator".into(),
            in_channels: 3,
            encoder: vec![16, 32],
            decoder: vec![16],
            head: HeadKind::Image,
        }
    }

    pub fn discriminator() -> Self {
        Self {
            name: "discriminator".into(),
            in_channels: 3,
            encoder: vec![16, 32],
            decoder: vec![],
            head: HeadKind::PatchLogit,
        }
    }

    pub fn segnet() -> Self {
        Self {
            name: "segnet".into(),
            in_channels: 3,
            encoder: vec![16, 32],
            decoder: vec![16],
            head: HeadKind::ClassLogits,
        }
    }

    /// Infers the depth descriptor from a parameter set's first layer.
    pub fn depth_from_params(p: &NetworkParams) -> Result<Self> {
        let cin = p.get("e1.w")?.shape()[1];
        match cin {
            3 => Ok(Self::depth(false)),
            c if c == 3 + NUM_CLASSES => Ok(Self::depth(true)),
            c => Err(Error::Format(format!("depth network with {c} input channels"))),
        }
    }
}

fn width(v: &[usize], i: usize) -> Result<usize> {
    v.get(i)
        .copied()
        .ok_or_else(|| Error::domain("init_params", "descriptor has too few widths"))
}

/// Deterministic initialization; final depth and pose layers start at zero.
pub fn init_params(d: &ArchitectureDescriptor, seed: u64) -> Result<NetworkParams> {
    let mut init = Init::new(&d.name, seed);
    let e = &d.encoder;
    match d.head {
        HeadKind::Disparity => {
            let (c1, c2, c3) = (width(e, 0)?, width(e, 1)?, width(e, 2)?);
            let (u2, u1) = (width(&d.decoder, 0)?, width(&d.decoder, 1)?);
            init.conv("e1", d.in_channels, c1, 3, false);
            init.conv("e2", c1, c2, 3, false);
            init.conv("e2b", c2, c2, 3, false);
            init.conv("e3", c2, c3, 3, false);
            init.conv("e3b", c3, c3, 3, false);
            init.conv("d2", c3 + c2, u2, 3, false);
            init.conv("d1", u2 + c1, u1, 3, false);
            init.conv("head", u1, 1, 3, true);
        }
        HeadKind::SixDof => {
            let mut cin = d.in_channels;
            for (i, &c) in e.iter().enumerate() {
                init.conv(&format!("e{}", i + 1), cin, c, 3, false);
                cin = c;
            }
            init.conv("head", cin, 6, 1, true);
        }
        HeadKind::Image | HeadKind::ClassLogits => {
            let (c1, c2) = (width(e, 0)?, width(e, 1)?);
            let u1 = width(&d.decoder, 0)?;
            let out = if d.head == HeadKind::Image { 3 } else { NUM_CLASSES };
            init.conv("e1", d.in_channels, c1, 3, false);
            init.conv("e2", c1, c2, 3, false);
            init.conv("e2b", c2, c2, 3, false);
            init.conv("d1", c2 + c1, u1, 3, false);
            // translator starts as the identity map
            init.conv("head", u1, out, 3, d.head == HeadKind::Image);
        }
        HeadKind::PatchLogit => {
            let (c1, c2) = (width(e, 0)?, width(e, 1)?);
            init.conv("e1", d.in_channels, c1, 3, false);
            init.conv("e2", c1, c2, 3, false);
            init.conv("head", c2, 1, 3, false);
        }
    }
    Ok(init.params)
}

fn conv(p: &NetworkParams, layer: &str, x: &Tensor, stride: usize) -> Result<Tensor> {
    let w = p.get(&format!("{layer}.w"))?;
    let pad = w.shape()[2] / 2;
    x.conv2d(w, Some(p.get(&format!("{layer}.b"))?), stride, pad)
}

fn check_input(op: &'static str, p: &NetworkParams, x: &Tensor, multiple: usize) -> Result<()> {
    let cin = p.get("e1.w")?.shape()[1];
    match *x.shape() {
        [_, c, h, w] if c == cin && h % multiple == 0 && w % multiple == 0 => Ok(()),
        _ => Err(Error::shape(op, x.shape(), &[0, cin, multiple, multiple])),
    }
}

/// `depth = 1 / (σ/d_min + (1 − σ)/d_max)`.
pub fn disparity_to_depth(sigma: &Tensor) -> Result<Tensor> {
    let inv = sigma
        .mul_scalar(1.0 / DEPTH_MIN - 1.0 / DEPTH_MAX)
        .add_scalar(1.0 / DEPTH_MAX);
    Tensor::full(&[1], 1.0).div(&inv)
}

#[derive(Clone, Debug)]
pub struct DepthOutput {
    /// `[N, 1, H, W]` in (0, 1).
    pub disparity: Tensor,
    /// `[N, 1, H, W]` meters in (d_min, d_max).
    pub depth: Tensor,
}

/// U-Net depth prediction. `semantics` (one-hot, `[N, C, H, W]`) is required
/// exactly when the network was built with semantic augmentation.
pub fn depth_forward(p: &NetworkParams, image: &Tensor, semantics: Option<&Tensor>) -> Result<DepthOutput> {
    let input = match semantics {
        Some(s) => Tensor::concat_channels(&[image, s])?,
        None => image.clone(),
    };
    check_input("depth_forward", p, &input, 4)?;
    let e1 = conv(p, "e1", &input, 1)?.elu();
    let e2 = conv(p, "e2", &e1, 2)?.elu();
    let e2 = conv(p, "e2b", &e2, 1)?.elu();
    let e3 = conv(p, "e3", &e2, 2)?.elu();
    let e3 = conv(p, "e3b", &e3, 1)?.elu();
    let d2 = Tensor::concat_channels(&[&e3.upsample_nearest2x()?, &e2])?;
    let d2 = conv(p, "d2", &d2, 1)?.elu();
    let d1 = Tensor::concat_channels(&[&d2.upsample_nearest2x()?, &e1])?;
    let d1 = conv(p, "d1", &d1, 1)?.elu();
    let disparity = conv(p, "head", &d1, 1)?.sigmoid();
    let depth = disparity_to_depth(&disparity)?;
    Ok(DepthOutput { disparity, depth })
}

/// Relative pose parameters `[N, 6]` (axis-angle, translation) between two
/// frames, scaled by [`POSE_SCALE`].
pub fn pose_forward(p: &NetworkParams, frames: &[&Tensor]) -> Result<Tensor> {
    if frames.len() != 2 {
        return Err(Error::domain("pose_forward", format!("expects 2 frames, got {}", frames.len())));
    }
    let mut x = Tensor::concat_channels(frames)?;
    let layers = p.iter().filter(|(n, _)| n.starts_with('e') && n.ends_with(".w")).count();
    check_input("pose_forward", p, &x, 1 << layers)?;
    for i in 1..=layers {
        x = conv(p, &format!("e{i}"), &x, 2)?.elu();
    }
    let x = conv(p, "head", &x, 1)?;
    let n = x.shape()[0];
    Ok(x.mean_axis(3)?.mean_axis(2)?.reshape(&[n, 6])?.mul_scalar(POSE_SCALE))
}

fn small_unet(p: &NetworkParams, image: &Tensor, op: &'static str) -> Result<Tensor> {
    check_input(op, p, image, 2)?;
    let e1 = conv(p, "e1", image, 1)?.elu();
    let e2 = conv(p, "e2", &e1, 2)?.elu();
    let e2 = conv(p, "e2b", &e2, 1)?.elu();
    let d1 = Tensor::concat_channels(&[&e2.upsample_nearest2x()?, &e1])?;
    let d1 = conv(p, "d1", &d1, 1)?.elu();
    conv(p, "head", &d1, 1)
}

/// Synthetic-to-real translation: a residual in logit space on the clamped
/// input, squashed back to [0, 1].
pub fn translator_forward(p: &NetworkParams, image: &Tensor) -> Result<Tensor> {
    let residual = small_unet(p, image, "translator_forward")?;
    let x = image.clamp(LOGIT_EPS, 1.0 - LOGIT_EPS);
    let logit = x.log()?.sub(&x.neg().add_scalar(1.0).log()?)?;
    Ok(logit.add(&residual)?.sigmoid())
}

/// Patch grid `[N, 1, H/4, W/4]` of real-image probabilities.
pub fn discriminator_forward(p: &NetworkParams, image: &Tensor) -> Result<Tensor> {
    check_input("discriminator_forward", p, image, 4)?;
    let x = conv(p, "e1", image, 2)?.elu();
    let x = conv(p, "e2", &x, 2)?.elu();
    Ok(conv(p, "head", &x, 1)?.sigmoid())
}

/// Per-pixel class logits `[N, C, H, W]`.
pub fn segnet_forward(p: &NetworkParams, image: &Tensor) -> Result<Tensor> {
    small_unet(p, image, "segnet_forward")
}

/// Arg-max labels of `[N, C, H, W]` logits, laid out `N·H·W`.
pub fn argmax_labels(logits: &Tensor) -> Result<Vec<usize>> {
    let [n, c, h, w] = match *logits.shape() {
        [n, c, h, w] => [n, c, h, w],
        _ => return Err(Error::domain("argmax_labels", "expects NCHW logits")),
    };
    let plane = h * w;
    let d = logits.data();
    let mut out = Vec::with_capacity(n * plane);
    for b in 0..n {
        for px in 0..plane {
            let mut best = 0;
            for k in 1..c {
                if d[(b * c + k) * plane + px] > d[(b * c + best) * plane + px] {
                    best = k;
                }
            }
            out.push(best);
        }
    }
    Ok(out)
}
