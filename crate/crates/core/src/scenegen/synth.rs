//! Ready-made synthetic datasets: the two-view matching benchmark, a
//! two-traversal route for place recognition, and rectified stereo pairs.

use log::debug;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::camera::{CameraModel, Intrinsics, Pose};
use super::pairs::ground_truth_pairs;
use super::render::{render_frame, render_views, NoiseConfig};
use super::scene::{generate_scene, SceneBounds, SceneConfig};
use super::types::{Dataset, Frame, LabeledPair, Landmark3D, LandmarkClass, PatchRef};
use crate::error::Result;
use crate::rng::{derive_indexed, rng_for, rng_indexed};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BenchmarkConfig {
    pub scenes: usize,
    pub landmarks_per_scene: usize,
    pub scene: SceneConfig,
    pub noise: NoiseConfig,
    pub intrinsics: Intrinsics,
    /// Second camera moves forward by a uniform draw from this range, meters.
    pub forward_m: (f64, f64),
    pub lateral_m: f64,
    pub yaw_deg: f64,
    pub tau_match_m: f64,
    /// Fraction of scenes held out for testing.
    pub test_fraction: f64,
}

impl Default for BenchmarkConfig {
    fn default() -> Self {
        Self {
            scenes: 60,
            landmarks_per_scene: 9,
            scene: SceneConfig {
                bounds: SceneBounds {
                    min: [-8.0, -3.5, 18.0],
                    max: [8.0, 0.5, 40.0],
                },
                ..SceneConfig::default()
            },
            noise: NoiseConfig::default(),
            intrinsics: Intrinsics::default(),
            forward_m: (2.0, 8.0),
            lateral_m: 1.0,
            yaw_deg: 5.0,
            tau_match_m: 1.0,
            test_fraction: 1.0 / 3.0,
        }
    }
}

fn random_counts(total: usize, rng: &mut impl Rng) -> [usize; 4] {
    let mut counts = [0; 4];
    for _ in 0..total {
        counts[rng.random_range(0..LandmarkClass::ALL.len())] += 1;
    }
    counts
}

/// Builds the two-view benchmark: each scene is rendered from two nearby
/// cameras and every cross-frame patch pair is labeled. The last
/// `test_fraction` of scenes form the test split.
pub fn build_benchmark(config: &BenchmarkConfig, seed: u64) -> Result<Dataset> {
    let mut ds = Dataset::empty();
    let n_test = (config.scenes as f64 * config.test_fraction).round() as usize;
    let n_train = config.scenes.saturating_sub(n_test);
    let mut disagreements = 0;
    for s in 0..config.scenes {
        let mut rng = rng_indexed(seed, "benchmark.scene", s as u64);
        let scene_cfg = SceneConfig {
            counts: random_counts(config.landmarks_per_scene, &mut rng),
            ..config.scene.clone()
        };
        let mut scene = generate_scene(&scene_cfg, derive_indexed(seed, "benchmark.layout", s as u64))?;
        for lm in &mut scene {
            lm.id += 1000 * s as u32;
        }
        let cam_a = CameraModel::new(config.intrinsics, Pose::identity())?;
        let forward = rng.random_range(config.forward_m.0..=config.forward_m.1);
        let lateral = rng.random_range(-config.lateral_m..=config.lateral_m);
        let yaw = rng.random_range(-config.yaw_deg..=config.yaw_deg).to_radians();
        let cam_b = CameraModel::new(config.intrinsics, Pose::from_center_yaw([lateral, 0.0, forward], yaw))?;
        let render_seed = derive_indexed(seed, "benchmark.render", s as u64);
        let (a, b) = render_views(&scene, [&cam_a, &cam_b], &config.noise, render_seed, &format!("s{s:03}"));
        let gt = ground_truth_pairs(&a, &b, config.tau_match_m)?;
        disagreements += gt.disagreements.len();
        let fa = ds.frames.len();
        ds.frames.push(a);
        ds.frames.push(b);
        let split = if s < n_train { &mut ds.train } else { &mut ds.test };
        split.pairs.extend(gt.pairs.iter().map(|&(i, j, matched)| LabeledPair {
            a: PatchRef { frame: fa, patch: i },
            b: PatchRef { frame: fa + 1, patch: j },
            matched,
        }));
    }
    debug!("benchmark: {} distance/id label disagreements", disagreements);
    Ok(ds)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RouteConfig {
    pub length_m: f64,
    /// Landmarks per meter of road.
    pub landmark_density: f64,
    /// Spacing of reference frames along the road.
    pub frame_spacing_m: f64,
    /// Query traversal is shifted by this lateral offset and a random
    /// along-track jitter up to `query_jitter_m`.
    pub query_lateral_m: f64,
    pub query_jitter_m: f64,
    pub half_width_m: f64,
    pub height_m: (f64, f64),
    pub appearance_variants: u32,
    pub noise: NoiseConfig,
    pub intrinsics: Intrinsics,
}

impl Default for RouteConfig {
    fn default() -> Self {
        Self {
            length_m: 300.0,
            landmark_density: 0.35,
            frame_spacing_m: 15.0,
            query_lateral_m: 0.8,
            query_jitter_m: 6.0,
            half_width_m: 8.0,
            height_m: (-3.5, 0.5),
            appearance_variants: 3,
            noise: NoiseConfig::default(),
            intrinsics: Intrinsics::default(),
        }
    }
}

/// Two traversals of one straight road lined with landmarks. Returns
/// `(reference, query)` frames with ids `ref_fNNN` / `qry_fNNN`; positions
/// are world camera centers.
pub fn generate_route(config: &RouteConfig, seed: u64) -> Result<(Vec<Frame>, Vec<Frame>)> {
    let mut rng = rng_for(seed, "route.layout");
    let count = (config.length_m * config.landmark_density).round() as usize;
    let scene_cfg = SceneConfig {
        counts: random_counts(count, &mut rng),
        bounds: SceneBounds {
            min: [-config.half_width_m, config.height_m.0, 0.0],
            max: [config.half_width_m, config.height_m.1, config.length_m + 40.0],
        },
        min_spacing_m: 1.5,
        appearance_variants: config.appearance_variants,
        max_attempts: 5000,
    };
    let landmarks = generate_scene(&scene_cfg, derive_indexed(seed, "route.scene", 0))?;
    let steps = (config.length_m / config.frame_spacing_m).floor() as usize;
    let mut reference = Vec::with_capacity(steps);
    let mut query = Vec::with_capacity(steps);
    for i in 0..steps {
        let z = i as f64 * config.frame_spacing_m;
        let cam = CameraModel::new(config.intrinsics, Pose::from_center_yaw([0.0, 0.0, z], 0.0))?;
        let mut r = rng_indexed(seed, "route.ref", i as u64);
        reference.push(render_frame(&landmarks, &cam, &format!("ref_f{i:03}"), &config.noise, &mut r));

        let mut q = rng_indexed(seed, "route.qry", i as u64);
        let jz = q.random_range(-config.query_jitter_m..=config.query_jitter_m);
        let yaw = q.random_range(-3.0f64..=3.0).to_radians();
        let qz = (z + jz).max(0.0);
        let cam = CameraModel::new(
            config.intrinsics,
            Pose::from_center_yaw([config.query_lateral_m, 0.0, qz], yaw),
        )?;
        query.push(render_frame(&landmarks, &cam, &format!("qry_f{i:03}"), &config.noise, &mut q));
    }
    Ok((reference, query))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct StereoConfig {
    pub landmarks: usize,
    pub baseline_m: f64,
    pub depth_m: (f64, f64),
    pub half_width_m: f64,
    pub height_m: (f64, f64),
    pub noise: NoiseConfig,
    pub intrinsics: Intrinsics,
}

impl Default for StereoConfig {
    fn default() -> Self {
        Self {
            landmarks: 12,
            baseline_m: 0.5,
            depth_m: (5.0, 20.0),
            half_width_m: 3.0,
            height_m: (-1.5, 0.8),
            noise: NoiseConfig {
                occlusion_prob: 0.0,
                ..NoiseConfig::default()
            },
            intrinsics: Intrinsics::default(),
        }
    }
}

/// A rectified pair: the right camera sits `baseline_m` along +x of the
/// left one, both looking down +z.
#[derive(Clone, Debug, PartialEq)]
pub struct StereoScene {
    pub landmarks: Vec<Landmark3D>,
    pub left: Frame,
    pub right: Frame,
    pub baseline_m: f64,
}

pub fn generate_stereo(config: &StereoConfig, seed: u64) -> Result<StereoScene> {
    let mut rng = rng_for(seed, "stereo.layout");
    let scene_cfg = SceneConfig {
        counts: random_counts(config.landmarks, &mut rng),
        bounds: SceneBounds {
            min: [-config.half_width_m, config.height_m.0, config.depth_m.0],
            max: [config.half_width_m, config.height_m.1, config.depth_m.1],
        },
        min_spacing_m: 1.0,
        appearance_variants: 3,
        max_attempts: 5000,
    };
    let landmarks = generate_scene(&scene_cfg, derive_indexed(seed, "stereo.scene", 0))?;
    let left = CameraModel::new(config.intrinsics, Pose::identity())?;
    let right = CameraModel::new(config.intrinsics, Pose::from_center_yaw([config.baseline_m, 0.0, 0.0], 0.0))?;
    let (l, r) = render_views(&landmarks, [&left, &right], &config.noise, derive_indexed(seed, "stereo.render", 0), "st");
    Ok(StereoScene {
        landmarks,
        left: l,
        right: r,
        baseline_m: config.baseline_m,
    })
}
