//! Finite-difference checks for every loss component and network forward.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use s3kit::geometry::{CameraIntrinsics, FlowField, RigidTransform};
use s3kit::losses::{
    bidirectional_masked_loss, cross_entropy_logits, flow_photometric_loss, gan_losses, identity_loss,
    phase1_total, phase2_total, photometric_error, semantic_consistency_loss, smoothness_loss, ssim, task_loss,
    view_synthesis_loss, GanForm, LossWeights, MaskConfig, Neighbor, Phase1Terms, Phase2Terms, SSIM_WEIGHT,
};
use s3kit::nets::{
    depth_forward, discriminator_forward, init_params, pose_forward, segnet_forward, translator_forward,
    ArchitectureDescriptor, NetworkParams, NUM_CLASSES,
};
use s3kit::tensor::{grad_check_at, Tensor};
use s3kit::Result;

pub type Checks = Vec<(String, f64)>;

const INSTANCES: u64 = 20;
pub const TOL: f64 = 1e-5;
const EPS: f64 = 1e-6;
/// Coordinates probed per instance for large inputs.
const PROBES: usize = 10;

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn uniform(r: &mut ChaCha8Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor {
    let n = shape.iter().product();
    Tensor::new((0..n).map(|_| r.gen_range(lo..hi)).collect(), shape).unwrap()
}

fn probes(r: &mut ChaCha8Rng, numel: usize) -> Vec<usize> {
    if numel <= PROBES {
        (0..numel).collect()
    } else {
        (0..PROBES).map(|_| r.gen_range(0..numel)).collect()
    }
}

/// Worst relative error of `check` over `INSTANCES` seeds, keyed by `name`.
/// A failing check counts as an infinite error.
fn suite(out: &mut Checks, name: &str, check: impl Fn(&mut ChaCha8Rng) -> Result<f64>) {
    let mut worst = 0.0f64;
    for i in 0..INSTANCES {
        let mut r = rng(i * 7919 + name.len() as u64);
        worst = worst.max(check(&mut r).unwrap_or(f64::INFINITY));
    }
    out.push((name.to_string(), worst));
}

fn gc(r: &mut ChaCha8Rng, x: &Tensor, f: impl Fn(&Tensor) -> Result<Tensor>) -> Result<f64> {
    let at = probes(r, x.numel());
    grad_check_at(f, x, EPS, &at)
}

/// Scalar readout `Σ out · weights` so every output coordinate contributes.
fn readout(out: &Tensor, weights: &Tensor) -> Result<Tensor> {
    Ok(out.mul(weights)?.sum())
}

fn k8() -> CameraIntrinsics {
    CameraIntrinsics::new(6.0, 6.0, 3.7, 3.4, 8, 8).unwrap()
}

fn pose_params(r: &mut ChaCha8Rng) -> Tensor {
    let v: Vec<f64> = (0..6)
        .map(|i| if i < 3 { r.gen_range(-0.05..0.05) } else { r.gen_range(-0.3..0.3) })
        .collect();
    Tensor::new(v, &[1, 6]).unwrap()
}

pub fn photometric_error_and_ssim(out: &mut Checks) {
    suite(out, "ssim", |r| {
        let a = uniform(r, &[1, 3, 6, 6], 0.0, 1.0);
        let b = uniform(r, &[1, 3, 6, 6], 0.0, 1.0);
        gc(r, &a, |x| Ok(ssim(x, &b)?.mean()))
    });
    suite(out, "photometric_error", |r| {
        let a = uniform(r, &[1, 3, 6, 6], 0.0, 1.0);
        let b = uniform(r, &[1, 3, 6, 6], 0.0, 1.0);
        let w = uniform(r, &[1, 1, 6, 6], -1.0, 1.0);
        gc(r, &a, |x| readout(&photometric_error(x, &b, SSIM_WEIGHT)?, &w))
    });
}

pub fn adversarial_and_identity_terms(out: &mut Checks) {
    for form in [GanForm::Minimax, GanForm::Nonsaturating] {
        suite(out, "gan_discriminator", |r| {
            let real = uniform(r, &[2, 1, 2, 2], 0.05, 0.95);
            let fake = uniform(r, &[2, 1, 2, 2], 0.05, 0.95);
            let a = gc(r, &real, |x| Ok(gan_losses(x, &fake, form)?.discriminator))?;
            let b = gc(r, &fake, |x| Ok(gan_losses(&real, x, form)?.discriminator))?;
            Ok(a.max(b))
        });
        suite(out, "gan_generator", |r| {
            let real = uniform(r, &[2, 1, 2, 2], 0.05, 0.95);
            let fake = uniform(r, &[2, 1, 2, 2], 0.05, 0.95);
            gc(r, &fake, |x| Ok(gan_losses(&real, x, form)?.generator))
        });
    }
    suite(out, "identity_loss", |r| {
        let real = uniform(r, &[1, 3, 4, 4], 0.0, 1.0);
        let t = uniform(r, &[1, 3, 4, 4], 0.0, 1.0);
        gc(r, &t, |x| identity_loss(x, &real))
    });
}

pub fn semantic_terms(out: &mut Checks) {
    suite(out, "semantic_consistency", |r| {
        let logits = uniform(r, &[1, NUM_CLASSES, 3, 3], -2.0, 2.0);
        let labels: Vec<usize> = (0..9).map(|_| r.gen_range(0..NUM_CLASSES)).collect();
        // through the softmax, as used in training
        gc(r, &logits, |x| semantic_consistency_loss(&x.log_softmax(1)?.exp(), &labels))
    });
    suite(out, "cross_entropy", |r| {
        let logits = uniform(r, &[2, NUM_CLASSES, 2, 3], -2.0, 2.0);
        let labels: Vec<usize> = (0..12).map(|_| r.gen_range(0..NUM_CLASSES)).collect();
        gc(r, &logits, |x| cross_entropy_logits(x, &labels))
    });
}

pub fn flow_task_and_smoothness_terms(out: &mut Checks) {
    suite(out, "flow_photometric", |r| {
        let a = uniform(r, &[1, 3, 8, 8], 0.0, 1.0);
        let b = uniform(r, &[1, 3, 8, 8], 0.0, 1.0);
        let flow = FlowField {
            flow: uniform(r, &[1, 2, 8, 8], -1.5, 1.5),
            mask: Tensor::full(&[1, 1, 8, 8], 1.0),
        };
        let ga = gc(r, &a, |x| flow_photometric_loss(x, &b, &flow, SSIM_WEIGHT))?;
        let gb = gc(r, &b, |x| flow_photometric_loss(&a, x, &flow, SSIM_WEIGHT))?;
        Ok(ga.max(gb))
    });
    suite(out, "task_loss", |r| {
        let gt = uniform(r, &[1, 1, 4, 4], 1.0, 20.0);
        let pred = uniform(r, &[1, 1, 4, 4], 1.0, 20.0);
        let valid = Tensor::new((0..16).map(|i| f64::from(i % 3 != 0)).collect(), &[1, 1, 4, 4])?;
        gc(r, &pred, |x| task_loss(x, &gt, Some(&valid)))
    });
    suite(out, "smoothness", |r| {
        let d = uniform(r, &[1, 1, 5, 6], 0.1, 1.0);
        let img = uniform(r, &[1, 3, 5, 6], 0.0, 1.0);
        let gd = gc(r, &d, |x| smoothness_loss(x, &img))?;
        let gi = gc(r, &img, |x| smoothness_loss(&d, x))?;
        Ok(gd.max(gi))
    });
}

pub fn view_synthesis_and_masked_terms(out: &mut Checks) {
    suite(out, "view_synthesis", |r| {
        let target = uniform(r, &[1, 3, 8, 8], 0.0, 1.0);
        let source = uniform(r, &[1, 3, 8, 8], 0.0, 1.0);
        let depth = uniform(r, &[1, 1, 8, 8], 2.0, 6.0);
        let pose = pose_params(r);
        let k = k8();
        let gd = gc(r, &depth, |x| {
            view_synthesis_loss(&target, &source, x, &RigidTransform::from_params(&pose)?, &k, SSIM_WEIGHT)
        })?;
        let gp = gc(r, &pose, |x| {
            view_synthesis_loss(&target, &source, &depth, &RigidTransform::from_params(x)?, &k, SSIM_WEIGHT)
        })?;
        Ok(gd.max(gp))
    });
    suite(out, "bidirectional_masked", |r| {
        let center = uniform(r, &[1, 3, 8, 8], 0.0, 1.0);
        let depth = uniform(r, &[1, 1, 8, 8], 2.0, 6.0);
        let nb: Vec<(Tensor, Tensor, Tensor)> = (0..2)
            .map(|_| (uniform(r, &[1, 3, 8, 8], 0.0, 1.0), uniform(r, &[1, 1, 8, 8], 2.0, 6.0), pose_params(r)))
            .collect();
        let k = k8();
        let cfg = MaskConfig::default();
        let build = |poses: [&Tensor; 2]| -> Result<Vec<Neighbor>> {
            nb.iter()
                .zip(poses)
                .map(|((img, d, _), p)| {
                    Ok(Neighbor {
                        image: img.clone(),
                        depth: d.clone(),
                        center_to_neighbor: RigidTransform::from_params(p)?,
                    })
                })
                .collect()
        };
        let gd = gc(r, &depth, |x| {
            Ok(bidirectional_masked_loss(&center, x, &build([&nb[0].2, &nb[1].2])?, &k, &cfg)?.loss)
        })?;
        let gp = gc(r, &nb[0].2, |x| {
            Ok(bidirectional_masked_loss(&center, &depth, &build([x, &nb[1].2])?, &k, &cfg)?.loss)
        })?;
        Ok(gd.max(gp))
    });
}

pub fn phase_objectives(out: &mut Checks) {
    suite(out, "phase1_total", |r| {
        let x = uniform(r, &[6], 0.1, 2.0);
        gc(r, &x, |x| {
            let t = |i: usize| -> Result<Tensor> { Ok(x.slice(0, i, 1)?.pow(2.0)?.sum()) };
            phase1_total(
                &Phase1Terms {
                    gan: t(0)?,
                    identity: t(1)?,
                    semantic: t(2)?,
                    flow: t(3)?,
                    task: t(4)?,
                    smoothness: t(5)?,
                },
                &LossWeights::default(),
            )
        })
    });
    suite(out, "phase2_total", |r| {
        let x = uniform(r, &[4], 0.1, 2.0);
        gc(r, &x, |x| {
            let t = |i: usize| -> Result<Option<Tensor>> { Ok(Some(x.slice(0, i, 1)?.exp().sum())) };
            phase2_total(
                &Phase2Terms {
                    pose: t(0)?,
                    mask: t(1)?,
                    task: t(2)?,
                    smoothness: t(3)?,
                },
                &LossWeights::default(),
            )
        })
    });
}

/// Random parameters so that zero-initialized heads do not hide gradients.
fn randomized(desc: &ArchitectureDescriptor, r: &mut ChaCha8Rng) -> NetworkParams {
    let mut p = init_params(desc, 0).unwrap();
    let names: Vec<(String, Vec<usize>)> = p.iter().map(|(n, t)| (n.to_string(), t.shape().to_vec())).collect();
    for (name, shape) in names {
        let fan: usize = shape[1..].iter().product::<usize>().max(1);
        let dist = Normal::new(0.0, (1.0 / fan as f64).sqrt()).unwrap();
        let n: usize = shape.iter().product();
        let v: Vec<f64> = (0..n).map(|_| dist.sample(r)).collect();
        p.set(&name, Tensor::new(v, &shape).unwrap()).unwrap();
    }
    p
}

/// Checks the input gradient and the gradient of one randomly chosen
/// parameter tensor.
fn network_suite(
    out: &mut Checks,
    name: &str,
    desc: fn() -> ArchitectureDescriptor,
    input_shape: &[usize],
    forward: fn(&NetworkParams, &Tensor) -> Result<Tensor>,
) {
    suite(out, name, |r| {
        let p = randomized(&desc(), r);
        let x = uniform(r, input_shape, 0.05, 0.95);
        let out = forward(&p, &x)?;
        let w = uniform(r, out.shape(), -1.0, 1.0);
        let gx = gc(r, &x, |x| readout(&forward(&p, x)?, &w))?;
        let names: Vec<String> = p.iter().map(|(n, _)| n.to_string()).collect();
        let pick = names[r.gen_range(0..names.len())].clone();
        let theta = p.get(&pick)?.clone();
        let gp = gc(r, &theta, |t| {
            let mut q = p.clone();
            q.set(&pick, t.clone())?;
            readout(&forward(&q, &x)?, &w)
        })?;
        Ok(gx.max(gp))
    });
}

pub fn depth_network(out: &mut Checks) {
    network_suite(out, "depth", || ArchitectureDescriptor::depth(false), &[1, 3, 8, 8], |p, x| {
        Ok(depth_forward(p, x, None)?.depth)
    });
    network_suite(out, "depth_semantic", || ArchitectureDescriptor::depth(true), &[1, 3 + NUM_CLASSES, 8, 8], |p, x| {
        let image = x.slice(1, 0, 3)?;
        let sem = x.slice(1, 3, NUM_CLASSES)?;
        Ok(depth_forward(p, &image, Some(&sem))?.disparity)
    });
}

pub fn pose_network(out: &mut Checks) {
    network_suite(out, "pose", ArchitectureDescriptor::pose, &[1, 6, 16, 16], |p, x| {
        pose_forward(p, &[&x.slice(1, 0, 3)?, &x.slice(1, 3, 3)?])
    });
}

pub fn translation_networks(out: &mut Checks) {
    network_suite(out, "translator", ArchitectureDescriptor::translator, &[1, 3, 8, 8], translator_forward);
    network_suite(out, "discriminator", ArchitectureDescriptor::discriminator, &[1, 3, 8, 8], discriminator_forward);
    network_suite(out, "segnet", ArchitectureDescriptor::segnet, &[1, 3, 8, 8], segnet_forward);
}

/// Every group, in a fixed order.
pub fn all() -> Checks {
    let mut out = Vec::new();
    for group in GROUPS {
        group(&mut out);
    }
    out
}

pub const GROUPS: [fn(&mut Checks); 9] = [photometric_error_and_ssim, adversarial_and_identity_terms, semantic_terms, flow_task_and_smoothness_terms, view_synthesis_and_masked_terms, phase_objectives, depth_network, pose_network, translation_networks];
