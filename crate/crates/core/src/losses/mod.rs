//! Loss terms for both training phases, including bi-directional auto-masking.

mod automask;
mod photometric;
mod terms;
mod weights;

pub use automask::{bidirectional_masked_loss, AutoMask, MaskConfig, MaskedLoss, Neighbor, INVALID_PENALTY};
pub use photometric::{photometric_error, ssim, SSIM_C1, SSIM_C2, SSIM_WEIGHT};
pub use terms::{
    cross_entropy_logits, flow_photometric_loss, gan_losses, identity_loss, masked_mean, one_hot,
    semantic_consistency_loss, smoothness_loss, task_loss, view_synthesis_loss, GanForm, GanLosses, GAN_EPS,
    PROB_FLOOR,
};
pub use weights::{phase1_total, phase2_total, LossWeights, Phase1Terms, Phase2Terms};
