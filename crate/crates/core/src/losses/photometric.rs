use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Blend weight of the SSIM term in the photometric error.
pub const SSIM_WEIGHT: f64 = 0.85;
pub const SSIM_C1: f64 = 0.01 * 0.01;
pub const SSIM_C2: f64 = 0.03 * 0.03;

/// Per-pixel, per-channel SSIM over reflected 3×3 windows.
pub fn ssim(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    if a.shape() != b.shape() {
        return Err(Error::shape("ssim", a.shape(), b.shape()));
    }
    let mu_a = a.avg_pool3x3()?;
    let mu_b = b.avg_pool3x3()?;
    let mu_aa = mu_a.mul(&mu_a)?;
    let mu_bb = mu_b.mul(&mu_b)?;
    let mu_ab = mu_a.mul(&mu_b)?;
    let sigma_a = a.mul(a)?.avg_pool3x3()?.sub(&mu_aa)?;
    let sigma_b = b.mul(b)?.avg_pool3x3()?.sub(&mu_bb)?;
    let sigma_ab = a.mul(b)?.avg_pool3x3()?.sub(&mu_ab)?;
    let num = mu_ab
        .mul_scalar(2.0)
        .add_scalar(SSIM_C1)
        .mul(&sigma_ab.mul_scalar(2.0).add_scalar(SSIM_C2))?;
    let den = mu_aa
        .add(&mu_bb)?
        .add_scalar(SSIM_C1)
        .mul(&sigma_a.add(&sigma_b)?.add_scalar(SSIM_C2))?;
    num.div(&den)
}

/// `λ·(1 − SSIM)/2 + (1 − λ)·|pred − target|`, channel-averaged, `[N, 1, H, W]`.
pub fn photometric_error(pred: &Tensor, target: &Tensor, ssim_weight: f64) -> Result<Tensor> {
    if pred.shape() != target.shape() || pred.shape().len() != 4 {
        return Err(Error::shape("photometric_error", pred.shape(), target.shape()));
    }
    let l1 = pred.sub(target)?.abs().mean_axis(1)?;
    if ssim_weight == 0.0 {
        return Ok(l1);
    }
    let dssim = ssim(pred, target)?
        .neg()
        .add_scalar(1.0)
        .mul_scalar(0.5)
        .mean_axis(1)?;
    dssim
        .mul_scalar(ssim_weight)
        .add(&l1.mul_scalar(1.0 - ssim_weight))
}
