use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;

use super::metrics::{ate, category_metrics, depth_metrics, merge_categories, CategoryRow, MetricReport, TrajectoryReport};
use crate::error::{Error, Result};
use crate::geometry::{PoseSE3, RigidTransform};
use crate::nets::ModelSet;
use crate::synthworld::{load_domain, Class, REAL_DIR, REAL_EVAL_DIR};
use crate::tensor::Tensor;

/// Anything that maps an RGB frame `[1, 3, H, W]` to depth `[1, 1, H, W]`.
pub trait DepthPredictor {
    fn predict_depth(&self, rgb: &Tensor) -> Result<Tensor>;
}

/// Maps two consecutive frames to the rigid motion camera-`a` → camera-`b`.
pub trait PosePredictor {
    fn predict_motion(&self, a: &Tensor, b: &Tensor) -> Result<PoseSE3>;
}

impl DepthPredictor for ModelSet {
    fn predict_depth(&self, rgb: &Tensor) -> Result<Tensor> {
        ModelSet::predict_depth(self, rgb)
    }
}

impl PosePredictor for ModelSet {
    fn predict_motion(&self, a: &Tensor, b: &Tensor) -> Result<PoseSE3> {
        let params = self.predict_pose(a, b)?;
        Ok(RigidTransform::from_params(&params)?.to_poses()[0])
    }
}

#[derive(Clone, Debug)]
pub struct EvalFrame {
    pub rgb: Tensor,
    pub depth: Vec<f64>,
    pub semantics: Vec<usize>,
}

#[derive(Clone, Debug)]
pub struct EvalScene {
    pub frames: Vec<EvalFrame>,
    /// World-from-camera ground truth.
    pub poses: Vec<PoseSE3>,
}

/// Real-domain frames joined with their hidden labels.
pub fn load_eval_scenes(root: &Path) -> Result<Vec<EvalScene>> {
    let rgb = load_domain(root, REAL_DIR)?;
    let labels = load_domain(root, REAL_EVAL_DIR)?;
    if rgb.is_empty() {
        return Err(Error::Format(format!("no real-domain scenes under {}", root.display())));
    }
    if rgb.len() != labels.len() {
        return Err(Error::Format("real and real_eval scene counts differ".into()));
    }
    rgb.into_iter()
        .zip(labels)
        .map(|(r, l)| {
            if r.rgb.len() != l.depth.len() || l.semantics.len() != l.depth.len() {
                return Err(Error::Format(format!("{}: frame counts differ", r.dir.display())));
            }
            let frames = r
                .rgb
                .into_iter()
                .zip(l.depth)
                .zip(l.semantics)
                .map(|((rgb, d), semantics)| EvalFrame {
                    rgb,
                    depth: d.to_vec(),
                    semantics,
                })
                .collect();
            Ok(EvalScene { frames, poses: l.poses })
        })
        .collect()
}

/// Pixels whose ground truth is a measurement (not sky).
pub fn depth_valid(semantics: &[usize]) -> Vec<bool> {
    semantics.iter().map(|&c| c != Class::Sky.index()).collect()
}

/// Mean of per-image reports over every frame.
pub fn evaluate_depth<P: DepthPredictor>(model: &P, scenes: &[EvalScene], cap: f64, median_scale: bool) -> Result<MetricReport> {
    let mut reports = Vec::new();
    for f in scenes.iter().flat_map(|s| &s.frames) {
        let pred = model.predict_depth(&f.rgb)?;
        reports.push(depth_metrics(pred.data(), &f.depth, cap, median_scale, Some(&depth_valid(&f.semantics)))?);
    }
    MetricReport::mean(&reports)
}

/// Per-class squared relative error pooled over every frame (sky excluded).
pub fn evaluate_categories<P: DepthPredictor>(
    model: &P,
    scenes: &[EvalScene],
    cap: f64,
    median_scale: bool,
) -> Result<Vec<CategoryRow>> {
    let mut rows = Vec::new();
    for f in scenes.iter().flat_map(|s| &s.frames) {
        let pred = model.predict_depth(&f.rgb)?;
        rows.push(category_metrics(
            pred.data(),
            &f.depth,
            &f.semantics,
            Class::ALL.len(),
            &[Class::Sky.index()],
            cap,
            median_scale,
        )?);
    }
    Ok(merge_categories(&rows))
}

/// `clamp(rgb · factor, 0, 1)`.
pub fn adjust_brightness(rgb: &Tensor, factor: f64) -> Result<Tensor> {
    if !(factor > 0.0) {
        return Err(Error::domain("adjust_brightness", format!("factor {factor}")));
    }
    if factor == 1.0 {
        return Ok(rgb.detach());
    }
    Tensor::new(rgb.data().iter().map(|v| (v * factor).clamp(0.0, 1.0)).collect(), rgb.shape())
}

/// Depth metrics with every frame's brightness scaled by each factor.
pub fn brightness_sweep<P: DepthPredictor>(
    model: &P,
    scenes: &[EvalScene],
    factors: &[f64],
    cap: f64,
    median_scale: bool,
) -> Result<Vec<(f64, MetricReport)>> {
    factors
        .iter()
        .map(|&b| {
            let adjusted = scenes
                .iter()
                .map(|s| {
                    Ok(EvalScene {
                        frames: s
                            .frames
                            .iter()
                            .map(|f| {
                                Ok(EvalFrame {
                                    rgb: adjust_brightness(&f.rgb, b)?,
                                    ..f.clone()
                                })
                            })
                            .collect::<Result<_>>()?,
                        poses: s.poses.clone(),
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            Ok((b, evaluate_depth(model, &adjusted, cap, median_scale)?))
        })
        .collect()
}

/// World-from-camera trajectory chained from predicted frame-to-frame motion,
/// starting at the identity.
pub fn predict_trajectory<P: PosePredictor>(model: &P, frames: &[Tensor]) -> Result<Vec<PoseSE3>> {
    let mut out = vec![PoseSE3::identity()];
    for pair in frames.windows(2) {
        let motion = model.predict_motion(&pair[0], &pair[1])?;
        let last = *out.last().expect("non-empty");
        out.push(last.compose(&motion.inverse()));
    }
    Ok(out)
}

/// ATE over every scene's sliding snippets, pooled.
pub fn evaluate_pose<P: PosePredictor>(model: &P, scenes: &[EvalScene], snippet_len: usize) -> Result<TrajectoryReport> {
    let mut per = Vec::new();
    for s in scenes {
        let rgb: Vec<Tensor> = s.frames.iter().map(|f| f.rgb.clone()).collect();
        let pred = predict_trajectory(model, &rgb)?;
        per.extend(ate(&pred, &s.poses, snippet_len)?.per_snippet);
    }
    pool_ate(per, snippet_len)
}

pub(crate) fn pool_ate(per: Vec<f64>, snippet_len: usize) -> Result<TrajectoryReport> {
    if per.is_empty() {
        return Err(Error::EmptyValidSet("evaluate_pose"));
    }
    let n = per.len() as f64;
    let mean = crate::tensor::pairwise_sum(&per) / n;
    let var = crate::tensor::pairwise_sum(&per.iter().map(|v| (v - mean).powi(2)).collect::<Vec<_>>()) / n;
    Ok(TrajectoryReport {
        per_snippet: per,
        mean,
        std: var.sqrt(),
        snippet_len,
    })
}

#[derive(Clone, Debug)]
pub struct EvalOptions {
    pub data: PathBuf,
    pub out: PathBuf,
    pub cap: f64,
    pub median_scale: bool,
    pub by_category: bool,
    pub brightness: Option<Vec<f64>>,
    pub pose: bool,
    pub snippet_len: usize,
}

#[derive(Clone, Debug, Serialize)]
pub struct EvalSummary {
    pub depth: MetricReport,
    /// Both median-scaling modes at the requested cap.
    pub modes: Vec<MetricReport>,
    pub categories: Option<Vec<CategoryRow>>,
    pub brightness: Option<Vec<(f64, MetricReport)>>,
    pub pose: Option<TrajectoryReport>,
}

pub const METRIC_COLUMNS: [&str; 7] = ["abs_rel", "sq_rel", "rmse", "rmse_log", "d1", "d2", "d3"];

fn csv_writer(path: &Path) -> Result<csv::Writer<fs::File>> {
    csv::Writer::from_path(path).map_err(|e| Error::Format(format!("{}: {e}", path.display())))
}

fn csv_err(e: csv::Error) -> Error {
    Error::Format(e.to_string())
}

fn fmt(v: f64) -> String {
    format!("{v:.6}")
}

fn flush(mut w: csv::Writer<fs::File>) -> Result<()> {
    w.flush().map_err(|e| Error::io("flushing csv", e))
}

/// Runs the requested evaluations and writes `metrics.csv` (plus
/// `category.csv`, `brightness.csv`, `ate.csv` when requested) and
/// `summary.md` into `opts.out`.
pub fn run_eval<M: DepthPredictor + PosePredictor>(model: &M, opts: &EvalOptions) -> Result<EvalSummary> {
    let scenes = load_eval_scenes(&opts.data)?;
    fs::create_dir_all(&opts.out).map_err(|e| Error::io(format!("creating {}", opts.out.display()), e))?;

    let modes = [false, true]
        .iter()
        .map(|&m| evaluate_depth(model, &scenes, opts.cap, m))
        .collect::<Result<Vec<_>>>()?;
    let depth = modes[usize::from(opts.median_scale)].clone();
    let mut w = csv_writer(&opts.out.join("metrics.csv"))?;
    let mut header = vec!["cap", "median_scale"];
    header.extend(METRIC_COLUMNS);
    w.write_record(&header).map_err(csv_err)?;
    for r in &modes {
        let mut row = vec![fmt(r.cap), if r.median_scale.is_some() { "on" } else { "off" }.to_string()];
        row.extend(r.values().iter().map(|v| fmt(*v)));
        w.write_record(&row).map_err(csv_err)?;
    }
    flush(w)?;

    let categories = if opts.by_category {
        let rows = evaluate_categories(model, &scenes, opts.cap, opts.median_scale)?;
        let mut w = csv_writer(&opts.out.join("category.csv"))?;
        w.write_record(["class", "name", "pixels", "sq_rel"]).map_err(csv_err)?;
        for r in &rows {
            w.write_record([r.class.to_string(), Class::ALL[r.class].name().into(), r.pixels.to_string(), fmt(r.sq_rel())])
                .map_err(csv_err)?;
        }
        flush(w)?;
        Some(rows)
    } else {
        None
    };

    let brightness = match &opts.brightness {
        Some(factors) => {
            let rows = brightness_sweep(model, &scenes, factors, opts.cap, opts.median_scale)?;
            let mut w = csv_writer(&opts.out.join("brightness.csv"))?;
            let mut header = vec!["factor"];
            header.extend(METRIC_COLUMNS);
            w.write_record(&header).map_err(csv_err)?;
            for (b, r) in &rows {
                let mut row = vec![format!("{b}")];
                row.extend(r.values().iter().map(|v| fmt(*v)));
                w.write_record(&row).map_err(csv_err)?;
            }
            flush(w)?;
            Some(rows)
        }
        None => None,
    };

    let pose = if opts.pose {
        let r = evaluate_pose(model, &scenes, opts.snippet_len)?;
        let mut w = csv_writer(&opts.out.join("ate.csv"))?;
        w.write_record(["snippet_len", "snippets", "ate_mean", "ate_std"]).map_err(csv_err)?;
        w.write_record([r.snippet_len.to_string(), r.per_snippet.len().to_string(), fmt(r.mean), fmt(r.std)])
            .map_err(csv_err)?;
        flush(w)?;
        Some(r)
    } else {
        None
    };

    let summary = EvalSummary {
        depth,
        modes,
        categories,
        brightness,
        pose,
    };
    let md = summary_markdown(&summary);
    fs::write(opts.out.join("summary.md"), md).map_err(|e| Error::io("writing summary.md", e))?;
    Ok(summary)
}

fn summary_markdown(s: &EvalSummary) -> String {
    let mut md = String::from("# Evaluation summary\n\n");
    md.push_str(&format!("| cap | median_scale | {} |\n", METRIC_COLUMNS.join(" | ")));
    md.push_str(&format!("|{}\n", "---|".repeat(METRIC_COLUMNS.len() + 2)));
    for r in &s.modes {
        let vals: Vec<String> = r.values().iter().map(|v| format!("{v:.4}")).collect();
        let mode = if r.median_scale.is_some() { "on" } else { "off" };
        md.push_str(&format!("| {} | {mode} | {} |\n", r.cap, vals.join(" | ")));
    }
    if let Some(rows) = &s.categories {
        md.push_str("\n## Squared relative error by class\n\n| class | pixels | sq_rel |\n|---|---|---|\n");
        for r in rows {
            md.push_str(&format!("| {} | {} | {:.4} |\n", Class::ALL[r.class].name(), r.pixels, r.sq_rel()));
        }
    }
    if let Some(rows) = &s.brightness {
        md.push_str("\n## Brightness sweep\n\n| factor | abs_rel | rmse | d1 |\n|---|---|---|---|\n");
        for (b, r) in rows {
            md.push_str(&format!("| {b} | {:.4} | {:.4} | {:.4} |\n", r.abs_rel, r.rmse, r.d1));
        }
    }
    if let Some(p) = &s.pose {
        md.push_str(&format!(
            "\n## Trajectory\n\nATE over {} snippets of length {}: {:.4} ± {:.4}\n",
            p.per_snippet.len(),
            p.snippet_len,
            p.mean,
            p.std
        ));
    }
    md
}
