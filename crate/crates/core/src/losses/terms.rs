use serde::{Deserialize, Serialize};

use super::photometric::photometric_error;
use crate::error::{Error, Result};
use crate::geometry::{apply_flow, warp, CameraIntrinsics, FlowField, RigidTransform};
use crate::tensor::Tensor;

/// Probability clamp for the adversarial log terms.
pub const GAN_EPS: f64 = 1e-7;
/// Probability floor for the semantic cross-entropy.
pub const PROB_FLOOR: f64 = 1e-7;

/// `sum(x · mask) / sum(mask)`; errors when the mask is empty.
pub fn masked_mean(x: &Tensor, mask: &Tensor, op: &'static str) -> Result<Tensor> {
    let count: f64 = mask.data().iter().sum();
    if count <= 0.0 {
        return Err(Error::EmptyValidSet(op));
    }
    Ok(x.mul(mask)?.sum().mul_scalar(1.0 / count))
}

/// Edge-aware smoothness on mean-normalized disparity `[N, 1, H, W]`,
/// weighted by the channel-averaged image gradient of `image`.
pub fn smoothness_loss(disparity: &Tensor, image: &Tensor) -> Result<Tensor> {
    let (ds, is) = (disparity.shape(), image.shape());
    if ds.len() != 4 || is.len() != 4 || ds[0] != is[0] || ds[2..] != is[2..] || ds[1] != 1 {
        return Err(Error::shape("smoothness_loss", ds, is));
    }
    let (h, w) = (ds[2], ds[3]);
    let mean = disparity.mean_axis(3)?.mean_axis(2)?;
    let d = disparity.div(&mean)?;
    let grad = |t: &Tensor, axis: usize, extent: usize| -> Result<Tensor> {
        Ok(t.slice(axis, 1, extent - 1)?.sub(&t.slice(axis, 0, extent - 1)?)?.abs())
    };
    let dx = grad(&d, 3, w)?.mul(&grad(image, 3, w)?.mean_axis(1)?.neg().exp())?;
    let dy = grad(&d, 2, h)?.mul(&grad(image, 2, h)?.mean_axis(1)?.neg().exp())?;
    dx.mean().add(&dy.mean())
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GanForm {
    /// Generator minimizes `log(1 − D(G(x)))` as written in the minimax game.
    Minimax,
    /// Generator minimizes `−log D(G(x))`.
    #[default]
    Nonsaturating,
}

#[derive(Clone, Debug)]
pub struct GanLosses {
    pub discriminator: Tensor,
    pub generator: Tensor,
}

/// Adversarial objectives from discriminator probabilities on real and
/// translated images. Inputs are clamped to `[ε, 1 − ε]`.
pub fn gan_losses(d_real: &Tensor, d_fake: &Tensor, form: GanForm) -> Result<GanLosses> {
    let real = d_real.clamp(GAN_EPS, 1.0 - GAN_EPS);
    let fake = d_fake.clamp(GAN_EPS, 1.0 - GAN_EPS);
    let log_one_minus_fake = fake.neg().add_scalar(1.0).log()?.mean();
    let discriminator = real.log()?.mean().neg().sub(&log_one_minus_fake)?;
    let generator = match form {
        GanForm::Nonsaturating => fake.log()?.mean().neg(),
        GanForm::Minimax => log_one_minus_fake,
    };
    Ok(GanLosses {
        discriminator,
        generator,
    })
}

/// Mean absolute difference between the translator's output on a real
/// image and that image.
pub fn identity_loss(translated_real: &Tensor, real: &Tensor) -> Result<Tensor> {
    if translated_real.shape() != real.shape() {
        return Err(Error::shape("identity_loss", translated_real.shape(), real.shape()));
    }
    Ok(translated_real.sub(real)?.abs().mean())
}

/// Untracked one-hot `[N, C, H, W]` from per-pixel labels `N·H·W`.
pub fn one_hot(labels: &[usize], n: usize, classes: usize, h: usize, w: usize) -> Result<Tensor> {
    if labels.len() != n * h * w {
        return Err(Error::shape("one_hot", &[labels.len()], &[n, h, w]));
    }
    let plane = h * w;
    let mut data = vec![0.0; n * classes * plane];
    for (i, &l) in labels.iter().enumerate() {
        if l >= classes {
            return Err(Error::LabelOutOfRange { label: l, classes });
        }
        let (b, p) = (i / plane, i % plane);
        data[(b * classes + l) * plane + p] = 1.0;
    }
    Tensor::new(data, &[n, classes, h, w])
}

/// Mean over pixels of `−log p[label]` with `p` floored at 1e-7.
pub fn semantic_consistency_loss(probs: &Tensor, labels: &[usize]) -> Result<Tensor> {
    let [n, c, h, w] = match *probs.shape() {
        [n, c, h, w] => [n, c, h, w],
        _ => return Err(Error::domain("semantic_consistency_loss", "expects NCHW probabilities")),
    };
    if c < 2 {
        return Err(Error::domain("semantic_consistency_loss", "needs at least two classes"));
    }
    let target = one_hot(labels, n, c, h, w)?;
    let picked = probs.clamp(PROB_FLOOR, 1.0).log()?.mul(&target)?.sum_axis(1)?;
    Ok(picked.mean().neg())
}

/// Cross-entropy of class logits against labels via log-softmax.
pub fn cross_entropy_logits(logits: &Tensor, labels: &[usize]) -> Result<Tensor> {
    let [n, c, h, w] = match *logits.shape() {
        [n, c, h, w] => [n, c, h, w],
        _ => return Err(Error::domain("cross_entropy_logits", "expects NCHW logits")),
    };
    let target = one_hot(labels, n, c, h, w)?;
    Ok(logits.log_softmax(1)?.mul(&target)?.sum_axis(1)?.mean().neg())
}

/// Photometric error between frame `t` carried forward by ground-truth flow
/// and frame `t+1`, averaged over flow-valid pixels.
pub fn flow_photometric_loss(
    translated_t: &Tensor,
    translated_t1: &Tensor,
    gt_flow: &FlowField,
    ssim_weight: f64,
) -> Result<Tensor> {
    let (recon, valid) = apply_flow(translated_t, gt_flow)?;
    let pe = photometric_error(&recon, translated_t1, ssim_weight)?;
    masked_mean(&pe, &valid, "flow_photometric_loss")
}

/// Mean absolute depth error, optionally restricted to `valid` pixels.
pub fn task_loss(pred_depth: &Tensor, gt_depth: &Tensor, valid: Option<&Tensor>) -> Result<Tensor> {
    if pred_depth.shape() != gt_depth.shape() {
        return Err(Error::shape("task_loss", pred_depth.shape(), gt_depth.shape()));
    }
    let err = pred_depth.sub(gt_depth)?.abs();
    match valid {
        Some(m) => masked_mean(&err, m, "task_loss"),
        None => Ok(err.mean()),
    }
}

/// View-synthesis loss: photometric error of `source` warped into the
/// target view against `target`, over valid pixels.
pub fn view_synthesis_loss(
    target: &Tensor,
    source: &Tensor,
    target_depth: &Tensor,
    target_to_source: &RigidTransform,
    k: &CameraIntrinsics,
    ssim_weight: f64,
) -> Result<Tensor> {
    let (recon, valid) = warp(source, target_depth, target_to_source, k)?;
    let pe = photometric_error(&recon, target, ssim_weight)?;
    masked_mean(&pe, &valid, "view_synthesis_loss")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::losses::SSIM_WEIGHT;
    use crate::tensor::Tape;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(shape: &[usize], seed: u64, lo: f64, hi: f64) -> Tensor {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = shape.iter().product();
        Tensor::new((0..n).map(|_| rng.gen_range(lo..hi)).collect(), shape).unwrap()
    }

    #[test]
    fn smoothness_of_constant_disparity_is_zero() {
        let d = Tensor::full(&[1, 1, 4, 5], 0.3);
        let img = random(&[1, 3, 4, 5], 1, 0.0, 1.0);
        assert_eq!(smoothness_loss(&d, &img).unwrap().item(), 0.0);
    }

    #[test]
    fn smoothness_edge_aware_limit() {
        // disparity steps between columns 1 and 2; image steps there by m
        let mut d = vec![1.0; 12];
        let mut img = vec![0.0; 12];
        for y in 0..3 {
            for x in 2..4 {
                d[y * 4 + x] = 3.0;
                img[y * 4 + x] = 1.0;
            }
        }
        let d = Tensor::new(d, &[1, 1, 3, 4]).unwrap();
        let mut last = f64::INFINITY;
        for m in [0.0, 1.0, 5.0, 20.0] {
            let i = Tensor::new(img.iter().map(|v| v * m).collect(), &[1, 1, 3, 4]).unwrap();
            let l = smoothness_loss(&d, &i).unwrap().item();
            // normalized step = 2 / mean(d) = 1, three rows of 9 x-gradients
            let want = 3.0 * (-m as f64).exp() / 9.0;
            assert!((l - want).abs() < 1e-12, "{l} vs {want}");
            assert!(l < last || m == 0.0);
            last = l;
        }
    }

    #[test]
    fn smoothness_hand_case() {
        let d = Tensor::new(
            vec![1.0, 2.0, 2.0, 1.0, 1.0, 1.0, 3.0, 1.0, 2.0, 2.0, 2.0, 2.0, 1.0, 3.0, 1.0, 3.0],
            &[1, 1, 4, 4],
        )
        .unwrap();
        let i = Tensor::new((0..16).map(|v| (v % 3) as f64 * 0.5).collect(), &[1, 1, 4, 4]).unwrap();
        // scalar oracle
        let dv = d.data();
        let iv = i.data();
        let mean = dv.iter().sum::<f64>() / 16.0;
        let mut sx = 0.0;
        let mut sy = 0.0;
        for y in 0..4 {
            for x in 0..3 {
                let a = y * 4 + x;
                sx += ((dv[a + 1] - dv[a]) / mean).abs() * (-(iv[a + 1] - iv[a]).abs()).exp();
            }
        }
        for y in 0..3 {
            for x in 0..4 {
                let a = y * 4 + x;
                sy += ((dv[a + 4] - dv[a]) / mean).abs() * (-(iv[a + 4] - iv[a]).abs()).exp();
            }
        }
        let want = sx / 12.0 + sy / 12.0;
        assert!((smoothness_loss(&d, &i).unwrap().item() - want).abs() < 1e-12);
    }

    #[test]
    fn gan_analytic_values() {
        let half = Tensor::full(&[1, 1, 2, 2], 0.5);
        let l = gan_losses(&half, &half, GanForm::Nonsaturating).unwrap();
        assert!((l.discriminator.item() - 2.0 * 2f64.ln()).abs() < 1e-9);
        let fooled = gan_losses(&half, &Tensor::full(&[1, 1, 2, 2], 1.0), GanForm::Nonsaturating).unwrap();
        assert!(fooled.generator.item() >= 0.0 && fooled.generator.item() < 1e-6);
        let perfect = gan_losses(
            &Tensor::full(&[1, 1, 2, 2], 1.0),
            &Tensor::full(&[1, 1, 2, 2], 0.0),
            GanForm::Minimax,
        )
        .unwrap();
        assert!(perfect.discriminator.item() >= 0.0 && perfect.discriminator.item() < 1e-6);
    }

    #[test]
    fn identity_loss_values() {
        let a = random(&[1, 3, 4, 4], 2, 0.0, 1.0);
        assert_eq!(identity_loss(&a, &a).unwrap().item(), 0.0);
        let z = Tensor::zeros(&[1, 3, 4, 4]);
        let o = Tensor::full(&[1, 3, 4, 4], 1.0);
        assert_eq!(identity_loss(&z, &o).unwrap().item(), 1.0);
        let b = random(&[1, 3, 4, 4], 3, 0.0, 1.0);
        let want = a.data().iter().zip(b.data()).map(|(x, y)| (x - y).abs()).sum::<f64>() / 48.0;
        assert!((identity_loss(&a, &b).unwrap().item() - want).abs() < 1e-15);
    }

    #[test]
    fn semantic_values() {
        let labels = vec![0usize, 2, 1, 4];
        let onehot = one_hot(&labels, 1, 5, 2, 2).unwrap();
        assert_eq!(semantic_consistency_loss(&onehot, &labels).unwrap().item(), 0.0);
        let uniform = Tensor::full(&[1, 5, 2, 2], 0.2);
        assert!((semantic_consistency_loss(&uniform, &labels).unwrap().item() - 5f64.ln()).abs() < 1e-9);
        // mixed 2-class case
        let p = Tensor::new(vec![0.9, 0.3, 0.6, 0.2, 0.1, 0.7, 0.4, 0.8], &[1, 2, 2, 2]).unwrap();
        let l = vec![0, 1, 1, 0];
        let want = -(0.9f64.ln() + 0.7f64.ln() + 0.4f64.ln() + 0.2f64.ln()) / 4.0;
        assert!((semantic_consistency_loss(&p, &l).unwrap().item() - want).abs() < 1e-12);
        assert!(matches!(
            semantic_consistency_loss(&p, &[0, 1, 2, 0]),
            Err(Error::LabelOutOfRange { .. })
        ));
    }

    #[test]
    fn task_loss_values() {
        let gt = random(&[1, 1, 4, 4], 4, 1.0, 80.0);
        assert_eq!(task_loss(&gt, &gt, None).unwrap().item(), 0.0);
        let shifted = gt.add_scalar(1.0);
        assert!((task_loss(&shifted, &gt, None).unwrap().item() - 1.0).abs() < 1e-12);
        let p = random(&[1, 1, 4, 4], 5, 1.0, 80.0);
        let want = p.data().iter().zip(gt.data()).map(|(a, b)| (a - b).abs()).sum::<f64>() / 16.0;
        assert!((task_loss(&p, &gt, None).unwrap().item() - want).abs() < 1e-12);
    }

    #[test]
    fn flow_loss_zero_for_perfect_reconstruction() {
        let a = random(&[1, 3, 6, 7], 6, 0.0, 1.0);
        let zero = FlowField::zeros(1, 6, 7);
        assert!(flow_photometric_loss(&a, &a, &zero, SSIM_WEIGHT).unwrap().item().abs() < 1e-12);
        let mut f = vec![0.0; 2 * 42];
        f[..42].fill(1.0);
        let shift = FlowField {
            flow: Tensor::new(f, &[1, 2, 6, 7]).unwrap(),
            mask: Tensor::full(&[1, 1, 6, 7], 1.0),
        };
        let (next, _) = apply_flow(&a, &shift).unwrap();
        assert!(flow_photometric_loss(&a, &next, &shift, SSIM_WEIGHT).unwrap().item().abs() < 1e-12);
    }

    #[test]
    fn flow_loss_on_shifted_ramp() {
        // frame t1 = ramp, frame t = ramp shifted right by one column; the
        // (+1, 0) flow only realigns 5 of 6 columns, L1 only
        let ramp: Vec<f64> = (0..24).map(|i| (i % 6) as f64 / 10.0).collect();
        let t1 = Tensor::new(ramp.clone(), &[1, 1, 4, 6]).unwrap();
        let t = Tensor::new(ramp.iter().map(|v| v + 0.1).collect(), &[1, 1, 4, 6]).unwrap();
        let mut f = vec![0.0; 48];
        f[..24].fill(1.0);
        let flow = FlowField {
            flow: Tensor::new(f, &[1, 2, 4, 6]).unwrap(),
            mask: Tensor::full(&[1, 1, 4, 6], 1.0),
        };
        // sample t at x+1: (x+1)/10 + 0.1 vs x/10 → 0.2 at each valid pixel
        let l = flow_photometric_loss(&t, &t1, &flow, 0.0).unwrap().item();
        assert!((l - 0.2).abs() < 1e-12, "{l}");
    }

    #[test]
    fn empty_valid_set_errors() {
        let a = Tensor::zeros(&[1, 1, 2, 2]);
        let m = Tensor::zeros(&[1, 1, 2, 2]);
        assert!(matches!(masked_mean(&a, &m, "x"), Err(Error::EmptyValidSet(_))));
    }

    #[test]
    fn gan_gradients_flow_to_fake() {
        let tape = Tape::new();
        let fake = tape.leaf(&Tensor::full(&[1, 1, 2, 2], 0.3));
        let real = Tensor::full(&[1, 1, 2, 2], 0.6);
        let l = gan_losses(&real, &fake, GanForm::Nonsaturating).unwrap();
        let g = tape.backward(&l.generator).unwrap();
        // d/dp of -mean(log p) = -1/(4p)
        for v in g.get(&fake).unwrap().data() {
            assert!((v + 1.0 / (4.0 * 0.3)).abs() < 1e-12);
        }
    }
}
