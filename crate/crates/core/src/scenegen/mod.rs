//! Ground-truthed data: synthetic street scenes rendered into camera views,
//! frame pairing, match labels, and the on-disk manifest format.

mod camera;
mod dataset;
mod pairs;
mod render;
mod scene;
mod synth;
mod types;

pub use camera::{back_project, project_to_image, CameraModel, Intrinsics, Pose, Projection};
pub use dataset::{
    load_dataset, load_pairs_csv, save_dataset, write_pairs_csv, ManifestCamera, ManifestFrame,
    ManifestPatch, PAIRS_TEST_FILE, PAIRS_TRAIN_FILE,
};
pub use pairs::{ground_truth_pairs, pair_frames, GroundTruth, LabelDisagreement};
pub use render::{render_frame, render_views, NoiseConfig};
pub use scene::{generate_scene, SceneBounds, SceneConfig};
pub use synth::{
    build_benchmark, generate_route, generate_stereo, BenchmarkConfig, RouteConfig, StereoConfig,
    StereoScene,
};
pub use types::{
    BBox, Dataset, Frame, LabeledPair, Landmark3D, LandmarkClass, LocationFrame, PairDataset,
    Patch, PatchRef, PixelBlock, Split,
};
