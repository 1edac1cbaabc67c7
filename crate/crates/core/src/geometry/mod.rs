//! Pinhole camera algebra and differentiable view synthesis.

mod camera;
mod warp;

pub use camera::{rotation_from_axis_angle, CameraIntrinsics, PoseSE3};
pub use warp::{
    apply_flow, axis_angle_to_rotation, backproject, pixel_grid, project, rigid_flow, warp,
    FlowField, RigidTransform, Z_MIN,
};
