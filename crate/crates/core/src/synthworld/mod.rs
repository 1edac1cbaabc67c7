//! Procedural street scenes with exact depth, semantics, rigid flow and
//! poses, a stylizer for the unlabeled "real" domain, and the on-disk
//! dataset format.

mod io;
mod scene;

pub use io::{
    generate_dataset, load_domain, load_scene, palette, render_scene, scene_dirs, scene_seed, DatasetConfig,
    DomainSelection, FrameEntry, GenSummary, LoadedScene, Manifest, PaletteEntry, Raster, REAL_DIR, REAL_EVAL_DIR,
    SYNTHETIC_DIR,
};
pub use scene::{
    check_front, generate_scene, relative_pose, render_frame, render_sequence, stylize_domain, texture,
    yaw_rotation, Class, Domain, DomainParams, FrameBundle, PoseSE3Serde, Primitive, PrimitiveKind, SceneSpec,
    WorldConfig, SKY_DEPTH,
};
