//! Downstream uses of the patch matcher.

pub mod place;
pub mod stereo;

pub use place::{
    camera_distance, frame_match_score, match_frames, place_recognition_eval, same_place, score_matrix,
    sinkhorn_assign, tune_threshold, FrameMatch, PartialAssignment, PlaceConfig, PlaceReport, PlaceRow, ScoreMatrix,
    SinkhornConfig, PLACE_CSV_HEADER, SAME_PLACE_M,
};
pub use stereo::{
    depth_error_bound, disparity_to_depth, stereo_depths, stereo_disparity, stereo_noise_study, Disparity,
    NoiseStudy, NoiseStudyConfig, StereoRow, STEREO_CSV_HEADER, STEREO_GAMMA,
};
