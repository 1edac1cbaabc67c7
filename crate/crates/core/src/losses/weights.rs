use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LossWeights {
    pub alpha_r: f64,
    pub alpha_seg: f64,
    pub alpha_flow: f64,
    pub alpha_task: f64,
    pub alpha_s: f64,
    pub alpha_pose: f64,
    pub alpha_mask: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            alpha_r: 10.0,
            alpha_seg: 1.0,
            alpha_flow: 1.0,
            alpha_task: 100.0,
            alpha_s: 0.1,
            alpha_pose: 1.0,
            alpha_mask: 1.0,
        }
    }
}

impl LossWeights {
    pub fn ones() -> Self {
        Self {
            alpha_r: 1.0,
            alpha_seg: 1.0,
            alpha_flow: 1.0,
            alpha_task: 1.0,
            alpha_s: 1.0,
            alpha_pose: 1.0,
            alpha_mask: 1.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let all = [
            ("alpha_r", self.alpha_r),
            ("alpha_seg", self.alpha_seg),
            ("alpha_flow", self.alpha_flow),
            ("alpha_task", self.alpha_task),
            ("alpha_s", self.alpha_s),
            ("alpha_pose", self.alpha_pose),
            ("alpha_mask", self.alpha_mask),
        ];
        for (name, v) in all {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::domain("LossWeights", format!("{name} = {v}")));
            }
        }
        let phase1 = self.alpha_r + self.alpha_seg + self.alpha_flow + self.alpha_task + self.alpha_s;
        let phase2 = self.alpha_pose + self.alpha_mask + self.alpha_task;
        if phase1 == 0.0 || phase2 == 0.0 {
            return Err(Error::domain("LossWeights", "every phase needs a positive weight"));
        }
        Ok(())
    }
}

/// Scalar components of the phase-1 objective.
#[derive(Clone, Debug)]
pub struct Phase1Terms {
    pub gan: Tensor,
    pub identity: Tensor,
    pub semantic: Tensor,
    pub flow: Tensor,
    pub task: Tensor,
    pub smoothness: Tensor,
}

/// Scalar components of the phase-2 objective; absent terms count as zero.
#[derive(Clone, Debug, Default)]
pub struct Phase2Terms {
    pub pose: Option<Tensor>,
    pub mask: Option<Tensor>,
    pub task: Option<Tensor>,
    pub smoothness: Option<Tensor>,
}

fn weighted(parts: &[(&'static str, f64, &Tensor)]) -> Result<Tensor> {
    let mut total = Tensor::scalar(0.0);
    for &(name, alpha, t) in parts {
        if t.numel() != 1 {
            return Err(Error::NonScalarLoss(t.shape().to_vec()));
        }
        if !t.item().is_finite() {
            return Err(Error::NonFinite(name.to_string()));
        }
        if alpha != 0.0 {
            total = total.add(&t.mul_scalar(alpha))?;
        }
    }
    Ok(total)
}

/// `L_GAN + α_r L_r + α_seg L_seg + α_flow L_flow + α_task L_task + α_s L_s`.
pub fn phase1_total(c: &Phase1Terms, w: &LossWeights) -> Result<Tensor> {
    weighted(&[
        ("gan", 1.0, &c.gan),
        ("identity", w.alpha_r, &c.identity),
        ("semantic", w.alpha_seg, &c.semantic),
        ("flow", w.alpha_flow, &c.flow),
        ("task", w.alpha_task, &c.task),
        ("smoothness", w.alpha_s, &c.smoothness),
    ])
}

/// `α_pose L_pose + α_mask L_mask + α_task L_task (+ α_s L_s)`.
pub fn phase2_total(c: &Phase2Terms, w: &LossWeights) -> Result<Tensor> {
    let mut parts = Vec::new();
    for (name, alpha, t) in [
        ("pose", w.alpha_pose, &c.pose),
        ("mask", w.alpha_mask, &c.mask),
        ("task", w.alpha_task, &c.task),
        ("smoothness", w.alpha_s, &c.smoothness),
    ] {
        if let Some(t) = t {
            parts.push((name, alpha, t));
        }
    }
    weighted(&parts)
}
