use serde::{Deserialize, Serialize};

use super::photometric::{photometric_error, SSIM_WEIGHT};
use crate::error::{Error, Result};
use crate::geometry::{warp, CameraIntrinsics, RigidTransform};
use crate::tensor::Tensor;

/// Added to the photometric error wherever a reconstruction is invalid so
/// that invalid pixels never win the per-pixel minimum.
pub const INVALID_PENALTY: f64 = 1e3;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MaskConfig {
    /// Keep only pixels where warping beats the unwarped neighbor.
    pub auto_mask: bool,
    /// Also reconstruct each neighbor from the center frame.
    pub bidirectional: bool,
    pub ssim_weight: f64,
}

impl Default for MaskConfig {
    fn default() -> Self {
        Self {
            auto_mask: true,
            bidirectional: true,
            ssim_weight: SSIM_WEIGHT,
        }
    }
}

/// A neighbor frame `t'` of the center frame `t`.
#[derive(Clone, Debug)]
pub struct Neighbor {
    pub image: Tensor,
    /// Predicted depth of `t'`, needed only for the reverse direction.
    pub depth: Tensor,
    /// Camera `t` → camera `t'`.
    pub center_to_neighbor: RigidTransform,
}

#[derive(Clone, Debug)]
pub struct AutoMask {
    /// `[N, 1, H, W]` selection for reconstructing `t` from its neighbors.
    pub forward: Tensor,
    /// `[N, 1, H, W]` selection for reconstructing the neighbors from `t`.
    pub reverse: Option<Tensor>,
}

impl AutoMask {
    pub fn selected(&self) -> (usize, usize) {
        let count = |t: &Tensor| t.data().iter().filter(|&&v| v == 1.0).count();
        (count(&self.forward), self.reverse.as_ref().map_or(0, count))
    }
}

#[derive(Clone, Debug)]
pub struct MaskedLoss {
    pub loss: Tensor,
    pub mask: AutoMask,
}

fn min_over(maps: Vec<Tensor>) -> Result<Tensor> {
    let mut iter = maps.into_iter();
    let mut acc = iter.next().ok_or(Error::domain("min_over", "no neighbor frames"))?;
    for m in iter {
        acc = acc.min_elementwise(&m)?;
    }
    Ok(acc)
}

fn penalized(pe: &Tensor, valid: &Tensor) -> Result<Tensor> {
    pe.add(&valid.neg().add_scalar(1.0).mul_scalar(INVALID_PENALTY))
}

/// Untracked selection: strict `identity > warped` with auto-masking,
/// otherwise every pixel with at least one valid reconstruction.
fn selection(identity: &Tensor, warped: &Tensor, auto_mask: bool) -> Result<Tensor> {
    let data = identity
        .data()
        .iter()
        .zip(warped.data())
        .map(|(&i, &w)| {
            let keep = if auto_mask { i > w } else { true };
            if keep && w < INVALID_PENALTY {
                1.0
            } else {
                0.0
            }
        })
        .collect();
    Tensor::new(data, warped.shape())
}

fn term(warped: &Tensor, mask: &Tensor) -> Result<Tensor> {
    let count: f64 = mask.data().iter().sum();
    if count == 0.0 {
        return Ok(Tensor::scalar(0.0));
    }
    Ok(warped.mul(mask)?.sum().mul_scalar(1.0 / count))
}

/// Minimum-reprojection loss over the neighbors of `center`, with per-pixel
/// auto-masking applied independently in each reconstruction direction and
/// the directional terms summed.
pub fn bidirectional_masked_loss(
    center: &Tensor,
    center_depth: &Tensor,
    neighbors: &[Neighbor],
    k: &CameraIntrinsics,
    cfg: &MaskConfig,
) -> Result<MaskedLoss> {
    if neighbors.is_empty() {
        return Err(Error::domain("bidirectional_masked_loss", "needs at least one neighbor frame"));
    }
    let mut fwd = Vec::with_capacity(neighbors.len());
    let mut ident = Vec::with_capacity(neighbors.len());
    for nb in neighbors {
        let (recon, valid) = warp(&nb.image, center_depth, &nb.center_to_neighbor, k)?;
        fwd.push(penalized(&photometric_error(&recon, center, cfg.ssim_weight)?, &valid)?);
        ident.push(photometric_error(&nb.image.detach(), &center.detach(), cfg.ssim_weight)?);
    }
    let identity = min_over(ident)?;
    let fwd_min = min_over(fwd)?;
    let fwd_mask = selection(&identity, &fwd_min, cfg.auto_mask)?;
    let mut loss = term(&fwd_min, &fwd_mask)?;
    let mut any = fwd_mask.data().contains(&1.0);

    let mut reverse = None;
    if cfg.bidirectional {
        let mut rev = Vec::with_capacity(neighbors.len());
        for nb in neighbors {
            let back = nb.center_to_neighbor.inverse()?;
            let (recon, valid) = warp(center, &nb.depth, &back, k)?;
            rev.push(penalized(&photometric_error(&recon, &nb.image, cfg.ssim_weight)?, &valid)?);
        }
        let rev_min = min_over(rev)?;
        let rev_mask = selection(&identity, &rev_min, cfg.auto_mask)?;
        loss = loss.add(&term(&rev_min, &rev_mask)?)?;
        any |= rev_mask.data().contains(&1.0);
        reverse = Some(rev_mask);
    }
    if !any {
        return Err(Error::DegenerateSnippet);
    }
    Ok(MaskedLoss {
        loss,
        mask: AutoMask {
            forward: fwd_mask,
            reverse,
        },
    })
}
