use std::path::Path;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::config::{is_supervised_step, Regimen, TrainConfig};
use super::optim::{adam_step, AdamState};
use crate::error::{Error, Result};
use crate::geometry::{CameraIntrinsics, FlowField, RigidTransform};
use crate::losses::{
    bidirectional_masked_loss, cross_entropy_logits, flow_photometric_loss, gan_losses, identity_loss,
    phase1_total, phase2_total, semantic_consistency_loss, smoothness_loss, task_loss, view_synthesis_loss,
    Neighbor, Phase1Terms, Phase2Terms,
};
use crate::nets::{argmax_labels, discriminator_forward, pose_forward, segnet_forward, translator_forward, ModelSet, NetworkParams};
use crate::synthworld::{load_domain, Class, LoadedScene, REAL_DIR, SYNTHETIC_DIR};
use crate::tensor::{Gradients, Tape, Tensor};

/// Training corpus held in memory.
#[derive(Clone, Debug)]
pub struct TrainData {
    pub synthetic: Vec<LoadedScene>,
    pub real: Vec<LoadedScene>,
}

impl TrainData {
    pub fn load(root: &Path) -> Result<Self> {
        Self::new(load_domain(root, SYNTHETIC_DIR)?, load_domain(root, REAL_DIR)?)
    }

    pub fn new(synthetic: Vec<LoadedScene>, real: Vec<LoadedScene>) -> Result<Self> {
        if synthetic.is_empty() {
            return Err(Error::Format("missing synthetic corpus".into()));
        }
        if real.is_empty() {
            return Err(Error::Format("missing real-domain corpus".into()));
        }
        for s in &synthetic {
            if s.rgb.len() < 2 || s.depth.len() != s.rgb.len() || s.semantics.len() != s.rgb.len() || s.flow_to_next.is_empty() {
                return Err(Error::Format(format!("{}: incomplete synthetic scene", s.dir.display())));
            }
        }
        if let Some(s) = real.iter().find(|s| s.rgb.len() < 3) {
            return Err(Error::Format(format!("{}: real scenes need at least 3 frames", s.dir.display())));
        }
        Ok(Self { synthetic, real })
    }

    pub fn intrinsics(&self) -> CameraIntrinsics {
        self.real[0].intrinsics
    }
}

pub const LOG_COLUMNS: [&str; 11] = [
    "loss_d", "gan", "identity", "semantic", "flow", "task", "smoothness", "segnet_ce", "pose", "mask", "total",
];

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum StepKind {
    Adversarial,
    Supervised,
    SelfSupervised,
}

impl StepKind {
    pub fn name(self) -> &'static str {
        match self {
            StepKind::Adversarial => "adversarial",
            StepKind::Supervised => "supervised",
            StepKind::SelfSupervised => "self_supervised",
        }
    }
}

#[derive(Clone, Debug)]
pub struct LogRow {
    pub phase: u8,
    pub step: usize,
    pub kind: StepKind,
    /// Indexed like [`LOG_COLUMNS`].
    pub losses: [Option<f64>; 11],
    pub wall_s: f64,
}

impl LogRow {
    pub fn get(&self, column: &str) -> Option<f64> {
        LOG_COLUMNS.iter().position(|c| *c == column).and_then(|i| self.losses[i])
    }
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub model: ModelSet,
    pub log: Vec<LogRow>,
    pub supervised_steps: usize,
    pub self_supervised_steps: usize,
    /// Self-supervised steps whose snippet masked out every pixel.
    pub degenerate_snippets: usize,
}

pub fn write_log(path: &Path, rows: &[LogRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::Format(format!("{}: {e}", path.display())))?;
    let mut header = vec!["phase", "step", "kind"];
    header.extend(LOG_COLUMNS);
    header.push("wall_s");
    w.write_record(&header).map_err(|e| Error::Format(e.to_string()))?;
    for r in rows {
        let mut rec = vec![r.phase.to_string(), r.step.to_string(), r.kind.name().to_string()];
        rec.extend(r.losses.iter().map(|v| v.map(|v| format!("{v:.8e}")).unwrap_or_default()));
        rec.push(format!("{:.3}", r.wall_s));
        w.write_record(&rec).map_err(|e| Error::Format(e.to_string()))?;
    }
    w.flush().map_err(|e| Error::io(format!("writing {}", path.display()), e))
}

struct Recorder {
    losses: [Option<f64>; 11],
    step: usize,
    threshold: f64,
}

impl Recorder {
    fn new(step: usize, threshold: f64) -> Self {
        Self {
            losses: [None; 11],
            step,
            threshold,
        }
    }

    /// Records a scalar loss, aborting on divergence.
    fn put(&mut self, column: &str, t: &Tensor) -> Result<()> {
        let value = t.item();
        if !value.is_finite() || value > self.threshold {
            return Err(Error::Divergence {
                name: column.to_string(),
                value,
                step: self.step,
            });
        }
        let i = LOG_COLUMNS.iter().position(|c| *c == column).expect("known column");
        self.losses[i] = Some(value);
        Ok(())
    }
}

fn stack(parts: Vec<Tensor>) -> Result<Tensor> {
    let refs: Vec<&Tensor> = parts.iter().collect();
    Tensor::concat(&refs, 0)
}

struct SynthBatch {
    frame: Tensor,
    next: Tensor,
    depth: Tensor,
    valid: Tensor,
    labels: Vec<usize>,
    flow: FlowField,
}

/// Ground truth clipped to the training range and its validity (sky excluded).
fn clipped_target(depth: &Tensor, semantics: &[usize], clip: [f64; 2]) -> Result<(Tensor, Tensor)> {
    let sky = Class::Sky.index();
    let gt: Vec<f64> = depth.data().iter().map(|d| d.clamp(clip[0], clip[1])).collect();
    let valid: Vec<f64> = depth
        .data()
        .iter()
        .zip(semantics)
        .map(|(&d, &c)| if c != sky && d > 0.0 && d.is_finite() { 1.0 } else { 0.0 })
        .collect();
    Ok((Tensor::new(gt, depth.shape())?, Tensor::new(valid, depth.shape())?))
}

fn synth_item(s: &LoadedScene, t: usize, clip: [f64; 2]) -> Result<(Tensor, Tensor, Tensor, Tensor, Vec<usize>, FlowField)> {
    let (gt, valid) = clipped_target(&s.depth[t], &s.semantics[t], clip)?;
    Ok((
        s.rgb[t].clone(),
        s.rgb[t + 1].clone(),
        gt,
        valid,
        s.semantics[t].clone(),
        s.flow_to_next[t].clone(),
    ))
}

fn synth_batch(items: Vec<(Tensor, Tensor, Tensor, Tensor, Vec<usize>, FlowField)>) -> Result<SynthBatch> {
    let mut frame = Vec::new();
    let mut next = Vec::new();
    let mut depth = Vec::new();
    let mut valid = Vec::new();
    let mut labels = Vec::new();
    let mut flow = Vec::new();
    let mut fmask = Vec::new();
    for (a, b, d, v, l, f) in items {
        frame.push(a);
        next.push(b);
        depth.push(d);
        valid.push(v);
        labels.extend(l);
        flow.push(f.flow);
        fmask.push(f.mask);
    }
    Ok(SynthBatch {
        frame: stack(frame)?,
        next: stack(next)?,
        depth: stack(depth)?,
        valid: stack(valid)?,
        labels,
        flow: FlowField {
            flow: stack(flow)?,
            mask: stack(fmask)?,
        },
    })
}

fn sample_synth(rng: &mut ChaCha8Rng, data: &TrainData, cfg: &TrainConfig) -> Result<SynthBatch> {
    let items = (0..cfg.batch_size)
        .map(|_| {
            let s = &data.synthetic[rng.gen_range(0..data.synthetic.len())];
            let t = rng.gen_range(0..s.flow_to_next.len());
            synth_item(s, t, cfg.depth_clip)
        })
        .collect::<Result<Vec<_>>>()?;
    synth_batch(items)
}

fn sample_real(rng: &mut ChaCha8Rng, data: &TrainData, batch: usize) -> Result<Tensor> {
    let frames = (0..batch)
        .map(|_| {
            let s = &data.real[rng.gen_range(0..data.real.len())];
            s.rgb[rng.gen_range(0..s.rgb.len())].clone()
        })
        .collect();
    stack(frames)
}

/// Consecutive real frames `[t−1, t, t+1]`, each batched.
fn sample_snippet(rng: &mut ChaCha8Rng, data: &TrainData, batch: usize) -> Result<[Tensor; 3]> {
    let mut parts = [Vec::new(), Vec::new(), Vec::new()];
    for _ in 0..batch {
        let s = &data.real[rng.gen_range(0..data.real.len())];
        let t = rng.gen_range(1..s.rgb.len() - 1);
        for (k, p) in parts.iter_mut().enumerate() {
            p.push(s.rgb[t + k - 1].clone());
        }
    }
    let [a, b, c] = parts;
    Ok([stack(a)?, stack(b)?, stack(c)?])
}

fn grads_of(bound: &NetworkParams, g: &Gradients) -> Vec<Vec<f64>> {
    bound.iter().map(|(_, t)| g.get_or_zero(t)).collect()
}

struct Optimizers {
    translator: AdamState,
    discriminator: AdamState,
    segnet: AdamState,
    depth: AdamState,
    pose: AdamState,
}

impl Optimizers {
    fn new(m: &ModelSet) -> Self {
        Self {
            translator: AdamState::new(&m.translator),
            discriminator: AdamState::new(&m.discriminator),
            segnet: AdamState::new(&m.segnet),
            depth: AdamState::new(&m.depth),
            pose: AdamState::new(&m.pose),
        }
    }
}

fn phase_rng(seed: u64, phase: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed.wrapping_mul(0x9e37_79b9_7f4a_7c15) ^ phase)
}

/// Phase 1: adversarial translation with supervised depth on translated
/// synthetic frames. Each step updates the discriminator, then the
/// translator, depth network and (unless frozen) the segmentation network.
pub fn train_phase1(mut model: ModelSet, data: &TrainData, cfg: &TrainConfig) -> Result<TrainOutcome> {
    cfg.validate()?;
    let w = cfg.weights;
    let ssim_w = cfg.mask.ssim_weight;
    let mut opt = Optimizers::new(&model);
    let mut rng = phase_rng(cfg.seed, 1);
    let mut log = Vec::with_capacity(cfg.phase1_steps);
    let start = Instant::now();
    for step in 0..cfg.phase1_steps {
        let batch = sample_synth(&mut rng, data, cfg)?;
        let real = sample_real(&mut rng, data, cfg.batch_size)?;
        let mut rec = Recorder::new(step, cfg.divergence_threshold);

        // discriminator pass against untracked translations
        let tape = Tape::new();
        let d = model.discriminator.bind(&tape);
        let fake = translator_forward(&model.translator.detach(), &batch.frame)?;
        let gl = gan_losses(&discriminator_forward(&d, &real)?, &discriminator_forward(&d, &fake)?, cfg.gan_form)?;
        rec.put("loss_d", &gl.discriminator)?;
        let g = tape.backward(&gl.discriminator)?;
        adam_step(&mut model.discriminator, &grads_of(&d, &g), &mut opt.discriminator, cfg.lr_translator, &cfg.adam)?;

        // generator pass against the updated, untracked discriminator
        let tape = Tape::new();
        let tr = model.translator.bind(&tape);
        let dp = model.depth.bind(&tape);
        let sg = if cfg.freeze_segnet {
            model.segnet.detach()
        } else {
            model.segnet.bind(&tape)
        };
        let dd = model.discriminator.detach();
        let xt = translator_forward(&tr, &batch.frame)?;
        let xt1 = translator_forward(&tr, &batch.next)?;
        let xr = translator_forward(&tr, &real)?;
        let gan = gan_losses(&discriminator_forward(&dd, &real)?, &discriminator_forward(&dd, &xt)?, cfg.gan_form)?.generator;
        let identity = identity_loss(&xr, &real)?;
        let source_labels = argmax_labels(&segnet_forward(&sg.detach(), &batch.frame)?)?;
        let probs = segnet_forward(&sg, &xt)?.log_softmax(1)?.exp();
        let semantic = semantic_consistency_loss(&probs, &source_labels)?;
        let flow = flow_photometric_loss(&xt, &xt1, &batch.flow, ssim_w)?;
        let out = model.depth_with(&dp, &xt, None)?;
        let task = task_loss(&out.depth, &batch.depth, Some(&batch.valid))?;
        let smoothness = smoothness_loss(&out.disparity, &xt)?;
        for (name, t) in [
            ("gan", &gan),
            ("identity", &identity),
            ("semantic", &semantic),
            ("flow", &flow),
            ("task", &task),
            ("smoothness", &smoothness),
        ] {
            rec.put(name, t)?;
        }
        let mut total = phase1_total(
            &Phase1Terms {
                gan,
                identity,
                semantic,
                flow,
                task,
                smoothness,
            },
            &w,
        )?;
        if !cfg.freeze_segnet {
            let ce = cross_entropy_logits(&segnet_forward(&sg, &batch.frame)?, &batch.labels)?;
            rec.put("segnet_ce", &ce)?;
            total = total.add(&ce)?;
        }
        rec.put("total", &total)?;
        let g = tape.backward(&total)?;
        let grads = [grads_of(&tr, &g), grads_of(&dp, &g), grads_of(&sg, &g)];
        adam_step(&mut model.translator, &grads[0], &mut opt.translator, cfg.lr_translator, &cfg.adam)?;
        adam_step(&mut model.depth, &grads[1], &mut opt.depth, cfg.lr_depth, &cfg.adam)?;
        if !cfg.freeze_segnet {
            adam_step(&mut model.segnet, &grads[2], &mut opt.segnet, cfg.lr_translator, &cfg.adam)?;
        }
        log.push(LogRow {
            phase: 1,
            step,
            kind: StepKind::Adversarial,
            losses: rec.losses,
            wall_s: start.elapsed().as_secs_f64(),
        });
    }
    Ok(TrainOutcome {
        model,
        log,
        supervised_steps: cfg.phase1_steps,
        self_supervised_steps: 0,
        degenerate_snippets: 0,
    })
}

/// Phase 2: translator and discriminator frozen; depth and pose networks
/// alternate between supervised steps on translated synthetic frames and
/// self-supervised steps on real snippets.
pub fn train_phase2(mut model: ModelSet, data: &TrainData, cfg: &TrainConfig) -> Result<TrainOutcome> {
    cfg.validate()?;
    if cfg.regimen == Regimen::WeightedSum {
        return Err(Error::Unimplemented("weighted-sum phase-2 training"));
    }
    let w = cfg.weights;
    let k = data.intrinsics();
    let alpha_pose = cfg.effective_alpha_pose();
    let mut opt = Optimizers::new(&model);
    let mut rng = phase_rng(cfg.seed, 2);
    let translator = model.translator.detach();
    let mut out = TrainOutcome {
        model: model.clone(),
        log: Vec::with_capacity(cfg.phase2_steps),
        supervised_steps: 0,
        self_supervised_steps: 0,
        degenerate_snippets: 0,
    };
    let start = Instant::now();
    for step in 0..cfg.phase2_steps {
        let mut rec = Recorder::new(step, cfg.divergence_threshold);
        let tape = Tape::new();
        let dp = model.depth.bind(&tape);
        let supervised = is_supervised_step(step, cfg.alternation);
        let (kind, total, pose_bound) = if supervised {
            let batch = sample_synth(&mut rng, data, cfg)?;
            let xt = translator_forward(&translator, &batch.frame)?;
            let pred = model.depth_with(&dp, &xt, None)?;
            let task = task_loss(&pred.depth, &batch.depth, Some(&batch.valid))?;
            let smoothness = smoothness_loss(&pred.disparity, &xt)?;
            rec.put("task", &task)?;
            rec.put("smoothness", &smoothness)?;
            let terms = Phase2Terms {
                task: Some(task),
                smoothness: Some(smoothness),
                ..Default::default()
            };
            out.supervised_steps += 1;
            (StepKind::Supervised, phase2_total(&terms, &w)?, None)
        } else {
            let [prev, center, next] = sample_snippet(&mut rng, data, cfg.batch_size)?;
            let b = cfg.batch_size;
            let pp = model.pose.bind(&tape);
            let frames = Tensor::concat(&[&prev, &center, &next], 0)?;
            let pred = model.depth_with(&dp, &frames, None)?;
            let depth_prev = pred.depth.slice(0, 0, b)?;
            let depth_center = pred.depth.slice(0, b, b)?;
            let depth_next = pred.depth.slice(0, 2 * b, b)?;
            let mut neighbors = Vec::new();
            for (image, depth) in [(prev, depth_prev), (next, depth_next)] {
                let motion = pose_forward(&pp, &[&center, &image])?;
                neighbors.push(Neighbor {
                    image,
                    depth,
                    center_to_neighbor: RigidTransform::from_params(&motion)?,
                });
            }
            let mut terms = Phase2Terms::default();
            if w.alpha_mask > 0.0 {
                match bidirectional_masked_loss(&center, &depth_center, &neighbors, &k, &cfg.mask) {
                    Ok(m) => {
                        rec.put("mask", &m.loss)?;
                        terms.mask = Some(m.loss);
                    }
                    Err(Error::DegenerateSnippet) => out.degenerate_snippets += 1,
                    Err(e) => return Err(e),
                }
            }
            if alpha_pose > 0.0 {
                let mut pose = Tensor::scalar(0.0);
                for n in &neighbors {
                    let l = view_synthesis_loss(&center, &n.image, &depth_center, &n.center_to_neighbor, &k, cfg.mask.ssim_weight)?;
                    pose = pose.add(&l)?;
                }
                let pose = pose.mul_scalar(1.0 / neighbors.len() as f64);
                rec.put("pose", &pose)?;
                terms.pose = Some(pose);
            }
            let disp_center = pred.disparity.slice(0, b, b)?;
            let smoothness = smoothness_loss(&disp_center, &center)?;
            rec.put("smoothness", &smoothness)?;
            terms.smoothness = Some(smoothness);
            let weights = crate::losses::LossWeights {
                alpha_pose,
                ..w
            };
            out.self_supervised_steps += 1;
            (StepKind::SelfSupervised, phase2_total(&terms, &weights)?, Some(pp))
        };
        rec.put("total", &total)?;
        if total.requires_grad() {
            let g = tape.backward(&total)?;
            adam_step(&mut model.depth, &grads_of(&dp, &g), &mut opt.depth, cfg.lr_depth, &cfg.adam)?;
            if let Some(pp) = pose_bound {
                adam_step(&mut model.pose, &grads_of(&pp, &g), &mut opt.pose, cfg.lr_pose, &cfg.adam)?;
            }
        }
        out.log.push(LogRow {
            phase: 2,
            step,
            kind,
            losses: rec.losses,
            wall_s: start.elapsed().as_secs_f64(),
        });
    }
    out.model = model;
    Ok(out)
}

/// Supervised task loss of the current model on a fixed set of translated
/// synthetic frames (the first frame of up to eight scenes).
pub fn probe_task_loss(model: &ModelSet, data: &TrainData, cfg: &TrainConfig) -> Result<f64> {
    let items = data
        .synthetic
        .iter()
        .take(8)
        .map(|s| synth_item(s, 0, cfg.depth_clip))
        .collect::<Result<Vec<_>>>()?;
    let batch = synth_batch(items)?;
    let xt = translator_forward(&model.translator.detach(), &batch.frame)?;
    let pred = model.depth_with(&model.depth.detach(), &xt, None)?;
    Ok(task_loss(&pred.depth, &batch.depth, Some(&batch.valid))?.item())
}
