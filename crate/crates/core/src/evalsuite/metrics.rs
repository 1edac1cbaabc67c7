use serde::Serialize;

use crate::error::{Error, Result};
use crate::geometry::PoseSE3;
use crate::tensor::pairwise_sum;

/// Floor applied to both prediction and ground truth before the metrics.
pub const EVAL_MIN_DEPTH: f64 = 1e-3;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct MetricReport {
    pub abs_rel: f64,
    pub sq_rel: f64,
    pub rmse: f64,
    pub rmse_log: f64,
    pub d1: f64,
    pub d2: f64,
    pub d3: f64,
    pub pixels: usize,
    pub cap: f64,
    /// Factor applied to the prediction, when median scaling was on.
    pub median_scale: Option<f64>,
}

impl MetricReport {
    /// Table-1 order: abs_rel, sq_rel, rmse, rmse_log, d1, d2, d3.
    pub fn values(&self) -> [f64; 7] {
        [self.abs_rel, self.sq_rel, self.rmse, self.rmse_log, self.d1, self.d2, self.d3]
    }

    /// Unweighted mean of per-image reports.
    pub fn mean(reports: &[MetricReport]) -> Result<MetricReport> {
        let first = reports.first().ok_or(Error::EmptyValidSet("MetricReport::mean"))?;
        let n = reports.len() as f64;
        let avg = |f: fn(&MetricReport) -> f64| pairwise_sum(&reports.iter().map(f).collect::<Vec<_>>()) / n;
        let scales: Vec<f64> = reports.iter().filter_map(|r| r.median_scale).collect();
        Ok(MetricReport {
            abs_rel: avg(|r| r.abs_rel),
            sq_rel: avg(|r| r.sq_rel),
            rmse: avg(|r| r.rmse),
            rmse_log: avg(|r| r.rmse_log),
            d1: avg(|r| r.d1),
            d2: avg(|r| r.d2),
            d3: avg(|r| r.d3),
            pixels: reports.iter().map(|r| r.pixels).sum(),
            cap: first.cap,
            median_scale: (!scales.is_empty()).then(|| pairwise_sum(&scales) / scales.len() as f64),
        })
    }
}

pub fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n == 0 {
        f64::NAN
    } else if n % 2 == 1 {
        v[n / 2]
    } else {
        (v[n / 2 - 1] + v[n / 2]) / 2.0
    }
}

/// Valid-pixel pairs after optional median scaling and clipping to
/// `[EVAL_MIN_DEPTH, cap]`.
pub fn preprocess(
    pred: &[f64],
    gt: &[f64],
    cap: f64,
    median_scale: bool,
    valid: Option<&[bool]>,
) -> Result<(Vec<usize>, Vec<f64>, Vec<f64>, Option<f64>)> {
    if pred.len() != gt.len() || valid.is_some_and(|v| v.len() != gt.len()) {
        return Err(Error::shape("depth_metrics", &[pred.len()], &[gt.len()]));
    }
    if !(cap > EVAL_MIN_DEPTH) {
        return Err(Error::domain("depth_metrics", format!("cap {cap}")));
    }
    let idx: Vec<usize> = (0..gt.len())
        .filter(|&i| valid.is_none_or(|v| v[i]) && gt[i] > 0.0)
        .collect();
    if idx.is_empty() {
        return Err(Error::EmptyValidSet("depth_metrics"));
    }
    let mut p: Vec<f64> = idx.iter().map(|&i| pred[i]).collect();
    let g: Vec<f64> = idx.iter().map(|&i| gt[i].clamp(EVAL_MIN_DEPTH, cap)).collect();
    if p.iter().any(|v| !(*v > 0.0)) {
        return Err(Error::domain("depth_metrics", "prediction must be positive"));
    }
    let scale = if median_scale {
        let raw_gt: Vec<f64> = idx.iter().map(|&i| gt[i]).collect();
        let s = median(&raw_gt) / median(&p);
        p.iter_mut().for_each(|v| *v *= s);
        Some(s)
    } else {
        None
    };
    p.iter_mut().for_each(|v| *v = v.clamp(EVAL_MIN_DEPTH, cap));
    Ok((idx, p, g, scale))
}

fn report(p: &[f64], g: &[f64], cap: f64, scale: Option<f64>) -> MetricReport {
    let n = p.len() as f64;
    let mean = |f: &dyn Fn(f64, f64) -> f64| pairwise_sum(&p.iter().zip(g).map(|(&a, &b)| f(a, b)).collect::<Vec<_>>()) / n;
    let frac = |k: i32| mean(&|a, b| if (a / b).max(b / a) < 1.25f64.powi(k) { 1.0 } else { 0.0 });
    MetricReport {
        abs_rel: mean(&|a, b| (a - b).abs() / b),
        sq_rel: mean(&|a, b| (a - b) * (a - b) / b),
        rmse: mean(&|a, b| (a - b) * (a - b)).sqrt(),
        rmse_log: mean(&|a, b| (a.ln() - b.ln()).powi(2)).sqrt(),
        d1: frac(1),
        d2: frac(2),
        d3: frac(3),
        pixels: p.len(),
        cap,
        median_scale: scale,
    }
}

/// The seven standard depth metrics over `valid` pixels with `gt > 0`.
pub fn depth_metrics(
    pred: &[f64],
    gt: &[f64],
    cap: f64,
    median_scale: bool,
    valid: Option<&[bool]>,
) -> Result<MetricReport> {
    let (_, p, g, scale) = preprocess(pred, gt, cap, median_scale, valid)?;
    Ok(report(&p, &g, cap, scale))
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CategoryRow {
    pub class: usize,
    pub pixels: usize,
    /// Sum over the class's pixels of `(p − g)² / g`.
    pub sq_rel_sum: f64,
}

impl CategoryRow {
    pub fn sq_rel(&self) -> f64 {
        self.sq_rel_sum / self.pixels as f64
    }
}

/// Per-class squared relative error after the same preprocessing as
/// [`depth_metrics`]; classes in `exclude` and absent classes are omitted.
pub fn category_metrics(
    pred: &[f64],
    gt: &[f64],
    semantics: &[usize],
    classes: usize,
    exclude: &[usize],
    cap: f64,
    median_scale: bool,
) -> Result<Vec<CategoryRow>> {
    if semantics.len() != gt.len() {
        return Err(Error::shape("category_metrics", &[semantics.len()], &[gt.len()]));
    }
    let keep: Vec<bool> = semantics.iter().map(|c| *c < classes && !exclude.contains(c)).collect();
    let (idx, p, g, _) = preprocess(pred, gt, cap, median_scale, Some(&keep))?;
    let mut terms: Vec<Vec<f64>> = vec![Vec::new(); classes];
    for (j, &i) in idx.iter().enumerate() {
        terms[semantics[i]].push((p[j] - g[j]).powi(2) / g[j]);
    }
    Ok(terms
        .into_iter()
        .enumerate()
        .filter(|(_, t)| !t.is_empty())
        .map(|(class, t)| CategoryRow {
            class,
            pixels: t.len(),
            sq_rel_sum: pairwise_sum(&t),
        })
        .collect())
}

/// Merges per-image category rows by class.
pub fn merge_categories(rows: &[Vec<CategoryRow>]) -> Vec<CategoryRow> {
    let mut by_class: Vec<(usize, usize, Vec<f64>)> = Vec::new();
    for r in rows.iter().flatten() {
        match by_class.iter_mut().find(|(c, _, _)| *c == r.class) {
            Some(e) => {
                e.1 += r.pixels;
                e.2.push(r.sq_rel_sum);
            }
            None => by_class.push((r.class, r.pixels, vec![r.sq_rel_sum])),
        }
    }
    by_class.sort_by_key(|e| e.0);
    by_class
        .into_iter()
        .map(|(class, pixels, sums)| CategoryRow {
            class,
            pixels,
            sq_rel_sum: pairwise_sum(&sums),
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TrajectoryReport {
    pub per_snippet: Vec<f64>,
    pub mean: f64,
    pub std: f64,
    pub snippet_len: usize,
}

/// Absolute trajectory error over sliding snippets: each snippet is
/// expressed relative to its first frame, the prediction is scaled by the
/// least-squares factor, and the RMS of translation residuals is reported.
pub fn ate(pred: &[PoseSE3], gt: &[PoseSE3], snippet_len: usize) -> Result<TrajectoryReport> {
    if pred.len() != gt.len() {
        return Err(Error::shape("ate", &[pred.len()], &[gt.len()]));
    }
    if snippet_len < 2 || gt.len() < snippet_len {
        return Err(Error::domain("ate", format!("snippet length {snippet_len} for {} poses", gt.len())));
    }
    let rel = |poses: &[PoseSE3]| -> Vec<nalgebra::Vector3<f64>> {
        let r0 = poses[0].rotation.transpose();
        poses.iter().map(|p| r0 * (p.translation - poses[0].translation)).collect()
    };
    let mut per = Vec::new();
    for s in 0..=gt.len() - snippet_len {
        let p = rel(&pred[s..s + snippet_len]);
        let g = rel(&gt[s..s + snippet_len]);
        let num: f64 = p.iter().zip(&g).map(|(a, b)| a.dot(b)).sum();
        let den: f64 = p.iter().map(|a| a.norm_squared()).sum();
        let scale = if den > 0.0 { num / den } else { 0.0 };
        let sq: f64 = p.iter().zip(&g).map(|(a, b)| (a * scale - b).norm_squared()).sum();
        per.push((sq / snippet_len as f64).sqrt());
    }
    let n = per.len() as f64;
    let mean = pairwise_sum(&per) / n;
    let var = pairwise_sum(&per.iter().map(|v| (v - mean).powi(2)).collect::<Vec<_>>()) / n;
    Ok(TrajectoryReport {
        per_snippet: per,
        mean,
        std: var.sqrt(),
        snippet_len,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hand_fixture() {
        let r = depth_metrics(&[1.0, 2.0, 4.0, 8.0], &[1.0, 2.0, 2.0, 8.0], f64::INFINITY, false, None).unwrap();
        assert!((r.abs_rel - 0.25).abs() < 1e-12);
        assert!((r.sq_rel - 0.5).abs() < 1e-12);
        assert!((r.rmse - 1.0).abs() < 1e-12);
        assert!((r.rmse_log - 2f64.ln() / 2.0).abs() < 1e-12);
        assert_eq!((r.d1, r.d2, r.d3), (0.75, 0.75, 0.75));
    }

    #[test]
    fn perfect_and_scaled_predictions() {
        let gt = [1.5, 3.0, 7.0, 20.0, 45.0];
        let r = depth_metrics(&gt, &gt, 80.0, false, None).unwrap();
        assert_eq!(r.values(), [0.0, 0.0, 0.0, 0.0, 1.0, 1.0, 1.0]);
        let doubled: Vec<f64> = gt.iter().map(|v| v * 2.0).collect();
        let r = depth_metrics(&doubled, &gt, 80.0, true, None).unwrap();
        assert_eq!(r.values(), [0.0, 0.0, 0.0, 0.0, 1.0, 1.0, 1.0]);
        assert_eq!(r.median_scale, Some(0.5));
    }

    #[test]
    fn cap_clips_both() {
        let r80 = depth_metrics(&[60.0, 10.0], &[70.0, 10.0], 80.0, false, None).unwrap();
        let r50 = depth_metrics(&[60.0, 10.0], &[70.0, 10.0], 50.0, false, None).unwrap();
        assert!(r80.abs_rel > 0.0);
        assert_eq!(r50.abs_rel, 0.0);
    }

    #[test]
    fn empty_set_errors() {
        assert!(matches!(
            depth_metrics(&[1.0], &[1.0], 80.0, false, Some(&[false])),
            Err(Error::EmptyValidSet(_))
        ));
    }

    #[test]
    fn category_hand_fixture() {
        // classes 0 and 1 on a 4×4 grid; class 1 carries error
        let gt = vec![2.0; 16];
        let mut pred = vec![2.0; 16];
        let mut sem = vec![0; 16];
        for i in 8..16 {
            sem[i] = 1;
            pred[i] = if i % 2 == 0 { 3.0 } else { 1.0 };
        }
        let rows = category_metrics(&pred, &gt, &sem, 5, &[4], 80.0, false).unwrap();
        assert_eq!(rows.len(), 2);
        assert_eq!(rows[0].sq_rel(), 0.0);
        // every class-1 pixel: (±1)²/2
        assert_eq!(rows[1].sq_rel(), 0.5);
        assert_eq!(rows[1].pixels, 8);
    }

    #[test]
    fn ate_offset_fixture() {
        let gt: Vec<PoseSE3> = (0..4)
            .map(|i| PoseSE3::from_params([0.0; 3], [0.0, 0.0, i as f64]))
            .collect();
        let mut pred = gt.clone();
        pred[1].translation.x += 0.1;
        let r = ate(&pred, &gt, 3).unwrap();
        // snippet 0: p̂ = {0, (0.1,0,1), (0,0,2)}, g = {0, (0,0,1), (0,0,2)}
        // s = 5/5.01; residual² = (0.1 s)² + (s − 1)² + (2s − 2)²
        let s: f64 = 5.0 / 5.01;
        let e0 = (((0.1 * s).powi(2) + (s - 1.0).powi(2) + 4.0 * (s - 1.0).powi(2)) / 3.0).sqrt();
        // snippet 1 starts at the offset frame: p̂ = {0, (−0.1,0,1), (−0.1,0,2)}
        let s1: f64 = 5.0 / 5.02;
        let e1 = (((0.1 * s1).powi(2) + (s1 - 1.0).powi(2) + (0.1 * s1).powi(2) + 4.0 * (s1 - 1.0).powi(2)) / 3.0).sqrt();
        assert!((r.per_snippet[0] - e0).abs() < 1e-12);
        assert!((r.per_snippet[1] - e1).abs() < 1e-12);
    }

    #[test]
    fn ate_perfect_and_scaled() {
        let gt: Vec<PoseSE3> = (0..6)
            .map(|i| PoseSE3::from_params([0.0, 0.02 * i as f64, 0.0], [0.1 * i as f64, 0.0, 0.8 * i as f64]))
            .collect();
        let r = ate(&gt, &gt, 3).unwrap();
        assert_eq!((r.mean, r.std), (0.0, 0.0));
        let scaled: Vec<PoseSE3> = gt
            .iter()
            .map(|p| PoseSE3 {
                translation: p.translation * 2.0,
                ..*p
            })
            .collect();
        let r = ate(&scaled, &gt, 3).unwrap();
        assert!(r.mean < 1e-12 && r.std < 1e-12);
    }
}
