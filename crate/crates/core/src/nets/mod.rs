//! Toy-scale depth, pose, translator, discriminator and segmentation
//! networks, plus parameter storage and the checkpoint container.

mod arch;
mod model;
mod params;

pub use arch::{
    argmax_labels, depth_forward, discriminator_forward, disparity_to_depth, init_params, pose_forward,
    segnet_forward, translator_forward, ArchitectureDescriptor, DepthOutput, HeadKind, DEPTH_MAX, DEPTH_MIN,
    NUM_CLASSES, POSE_SCALE,
};
pub use model::ModelSet;
pub use params::{
    load_checkpoint, read_checkpoint, round_to_f32, save_checkpoint, write_checkpoint, NetworkParams,
    CHECKPOINT_VERSION,
};
