use serde::{Deserialize, Serialize};

use super::optim::AdamHyper;
use crate::error::{Error, Result};
use crate::losses::{GanForm, LossWeights, MaskConfig};

/// How phase 2 combines supervised and self-supervised objectives.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Regimen {
    #[default]
    Alternating,
    /// Both objectives summed in every step. Not implemented.
    WeightedSum,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub seed: u64,
    pub lr_translator: f64,
    pub lr_depth: f64,
    pub lr_pose: f64,
    pub adam: AdamHyper,
    pub batch_size: usize,
    pub phase1_steps: usize,
    pub phase2_steps: usize,
    /// Supervised : self-supervised update counts in phase 2.
    pub alternation: [usize; 2],
    pub regimen: Regimen,
    pub gan_form: GanForm,
    /// Keep the segmentation network at its initial weights in phase 1.
    pub freeze_segnet: bool,
    /// Feed predicted one-hot semantics to the depth network as extra channels.
    pub semantic_augmentation: bool,
    /// Add the unmasked view-synthesis term alongside the masked one.
    pub pose_with_mask: bool,
    pub mask: MaskConfig,
    pub weights: LossWeights,
    /// Abort when any scalar loss exceeds this.
    pub divergence_threshold: f64,
    /// Ground-truth depth is clipped to this range for the task loss.
    pub depth_clip: [f64; 2],
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            lr_translator: 2e-5,
            lr_depth: 5e-5,
            lr_pose: 5e-5,
            adam: AdamHyper::default(),
            batch_size: 2,
            phase1_steps: 200,
            phase2_steps: 400,
            alternation: [1, 1],
            regimen: Regimen::Alternating,
            gan_form: GanForm::default(),
            freeze_segnet: false,
            semantic_augmentation: false,
            pose_with_mask: false,
            mask: MaskConfig::default(),
            weights: LossWeights::default(),
            divergence_threshold: 1e4,
            depth_clip: [0.01, 80.0],
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, lr) in [
            ("lr_translator", self.lr_translator),
            ("lr_depth", self.lr_depth),
            ("lr_pose", self.lr_pose),
        ] {
            if !(lr > 0.0 && lr.is_finite()) {
                return Err(Error::domain("TrainConfig", format!("{name} = {lr} must be positive")));
            }
        }
        self.adam.validate()?;
        self.weights.validate()?;
        if self.batch_size == 0 {
            return Err(Error::domain("TrainConfig", "batch_size must be positive"));
        }
        if self.alternation == [0, 0] {
            return Err(Error::domain("TrainConfig", "alternation ratio 0:0"));
        }
        if !(self.divergence_threshold > 0.0) {
            return Err(Error::domain("TrainConfig", "divergence_threshold must be positive"));
        }
        let [lo, hi] = self.depth_clip;
        if !(lo > 0.0 && hi > lo) {
            return Err(Error::domain("TrainConfig", format!("depth_clip [{lo}, {hi}]")));
        }
        Ok(())
    }

    /// Weight of the unmasked view-synthesis term actually applied.
    pub fn effective_alpha_pose(&self) -> f64 {
        if self.mask.auto_mask && !self.pose_with_mask {
            0.0
        } else {
            self.weights.alpha_pose
        }
    }
}

/// Whether phase-2 step `i` (0-based) is a supervised update at ratio `a:b`.
/// Supervised steps are spread evenly, so after `n` steps exactly
/// `⌊n·a/(a+b)⌋` have been supervised.
pub fn is_supervised_step(i: usize, ratio: [usize; 2]) -> bool {
    let [a, b] = ratio;
    let total = a + b;
    ((i + 1) * a) / total > (i * a) / total
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn degenerate_ratios() {
        assert!((0..50).all(|i| is_supervised_step(i, [1, 0])));
        assert!((0..50).all(|i| !is_supervised_step(i, [0, 1])));
        let pattern: Vec<bool> = (0..4).map(|i| is_supervised_step(i, [1, 1])).collect();
        assert_eq!(pattern, [false, true, false, true]);
    }

    #[test]
    fn defaults_validate_and_round_trip() {
        let c = TrainConfig::default();
        c.validate().unwrap();
        let s = serde_json::to_string(&c).unwrap();
        assert_eq!(serde_json::from_str::<TrainConfig>(&s).unwrap(), c);
        assert_eq!(c.effective_alpha_pose(), 0.0);
    }

    #[test]
    fn unknown_key_rejected() {
        assert!(serde_json::from_str::<TrainConfig>(r#"{"lr_dept": 1.0}"#).is_err());
    }

    proptest! {
        #[test]
        fn supervised_count_matches_ratio(a in 0usize..6, b in 0usize..6, n in 0usize..300) {
            prop_assume!(a + b > 0);
            let count = (0..n).filter(|&i| is_supervised_step(i, [a, b])).count() as f64;
            let target = (n as f64 * a as f64 / (a + b) as f64).ceil();
            prop_assert!((count - target).abs() <= 1.0);
        }
    }
}
