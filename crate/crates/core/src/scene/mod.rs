//! Procedural gate scenes: relative pose conventions, pinhole camera,
//! software renderer and labeled dataset files.

pub mod camera;
pub mod dataset;
pub mod pose;
pub mod render;

pub use camera::CameraIntrinsics;
pub use dataset::{generate_dataset, load_dataset, render_samples, read_manifest, write_ppm, Dataset, DatasetManifest, LabeledSample};
pub use pose::{
    cartesian_to_spherical, sample_pose, spherical_to_cartesian, wrap_angle, PoseRanges, PoseSample, Range, RelativeGatePose,
};
pub use render::{render, SceneParams};
