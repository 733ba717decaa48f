//! Landmark depth from matched patches of a rectified stereo pair.

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::matcher::{MatchModel, Prepared};
use crate::rng::rng_for;
use crate::scenegen::{generate_stereo, Patch, PatchRef, StereoConfig, StereoScene};
use crate::{Error, Result};

/// Match threshold used for stereo pairs.
pub const STEREO_GAMMA: f64 = 0.9;

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct Disparity {
    pub pixels: f64,
    /// False when the disparity is not positive.
    pub valid: bool,
}

/// Difference of bounding-box center columns, left minus right.
pub fn stereo_disparity(left: &Patch, right: &Patch) -> Disparity {
    let pixels = left.bbox.center_u() - right.bbox.center_u();
    Disparity {
        pixels,
        valid: pixels > 0.0,
    }
}

/// Z = fx * B / d.
pub fn disparity_to_depth(disparity: f64, fx: f64, baseline: f64) -> Result<f64> {
    if !(fx > 0.0 && baseline > 0.0) {
        return Err(Error::InvalidArgument(format!("fx {fx}, baseline {baseline}")));
    }
    if !(disparity > 0.0 && disparity.is_finite()) {
        return Err(Error::InvalidArgument(format!("disparity {disparity} is not positive")));
    }
    Ok(fx * baseline / disparity)
}

/// Worst-case depth error for a disparity error of at most `delta` pixels.
pub fn depth_error_bound(disparity: f64, fx: f64, baseline: f64, delta: f64) -> f64 {
    fx * baseline * delta / (disparity * (disparity - delta))
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct StereoRow {
    pub left_id: String,
    pub right_id: String,
    pub s_match: f64,
    pub disparity: f64,
    pub depth_m: Option<f64>,
    /// Camera-frame depth of the landmark when ground truth is known.
    pub true_depth_m: Option<f64>,
}

pub const STEREO_CSV_HEADER: &str = "left_id,right_id,s_match,disparity,depth_m,true_depth_m";

impl StereoRow {
    pub fn csv_row(&self) -> String {
        let opt = |v: Option<f64>| v.map(|v| format!("{v:.6}")).unwrap_or_default();
        format!(
            "{},{},{:.6},{:.6},{},{}",
            self.left_id,
            self.right_id,
            self.s_match,
            self.disparity,
            opt(self.depth_m),
            opt(self.true_depth_m)
        )
    }
}

fn true_depth(scene: &StereoScene, patch: &Patch) -> Option<f64> {
    let id = patch.landmark_id?;
    scene.landmarks.iter().find(|l| l.id == id).map(|l| l.position[2])
}

/// Scores every left/right patch pair, keeps mutual best matches with
/// `S_match > gamma`, and converts their disparities to depth.
pub fn stereo_depths(model: &MatchModel, scene: &StereoScene, gamma: f64) -> Result<Vec<StereoRow>> {
    let (nl, nr) = (scene.left.patches.len(), scene.right.patches.len());
    if nl == 0 || nr == 0 {
        return Err(Error::Empty("stereo frame"));
    }
    let frames = [scene.left.clone(), scene.right.clone()];
    let prep = Prepared::new(model, &frames)?;
    let rows: Vec<PatchRef> = (0..nl).map(|patch| PatchRef { frame: 0, patch }).collect();
    let cols: Vec<PatchRef> = (0..nr).map(|patch| PatchRef { frame: 1, patch }).collect();
    let scores: Vec<f64> = model.score_block(&prep, &rows, &cols)?.iter().map(|r| r.s_match).collect();
    let at = |i: usize, j: usize| scores[i * nr + j];
    let argmax = |it: &mut dyn Iterator<Item = (usize, f64)>| it.max_by(|a, b| a.1.total_cmp(&b.1)).map(|(k, _)| k);
    let fx = scene.left.camera.intrinsics.fx;
    let mut out = Vec::new();
    for i in 0..nl {
        let j = argmax(&mut (0..nr).map(|j| (j, at(i, j)))).expect("non-empty");
        let back = argmax(&mut (0..nl).map(|k| (k, at(k, j)))).expect("non-empty");
        if back != i || at(i, j) <= gamma {
            continue;
        }
        let (l, r) = (&scene.left.patches[i], &scene.right.patches[j]);
        let d = stereo_disparity(l, r);
        out.push(StereoRow {
            left_id: l.id.clone(),
            right_id: r.id.clone(),
            s_match: at(i, j),
            disparity: d.pixels,
            depth_m: disparity_to_depth(d.pixels, fx, scene.baseline_m).ok(),
            true_depth_m: true_depth(scene, l),
        });
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NoiseStudyConfig {
    pub stereo: StereoConfig,
    pub scenes: usize,
    /// Half-width of the uniform disparity noise, pixels.
    pub disparity_noise_px: f64,
}

impl Default for NoiseStudyConfig {
    fn default() -> Self {
        Self {
            stereo: StereoConfig::default(),
            scenes: 20,
            disparity_noise_px: 0.5,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct NoiseStudy {
    pub samples: usize,
    /// Largest depth error with exact disparities.
    pub exact_max_error_m: f64,
    pub rmse_m: f64,
    /// Root mean square of the per-sample worst-case bound.
    pub bound_rms_m: f64,
    pub ratio: f64,
}

/// Ground-truth correspondences of rendered stereo scenes: exact depth
/// recovery, then RMSE under uniform disparity noise against the
/// propagated bound.
pub fn stereo_noise_study(config: &NoiseStudyConfig, seed: u64) -> Result<NoiseStudy> {
    let mut rng = rng_for(seed, "stereo.noise");
    let delta = config.disparity_noise_px;
    let fx = config.stereo.intrinsics.fx;
    let (mut n, mut exact_max, mut sq, mut bound_sq) = (0usize, 0.0f64, 0.0, 0.0);
    for s in 0..config.scenes as u64 {
        let scene = generate_stereo(&config.stereo, crate::rng::derive_indexed(seed, "stereo.scene", s))?;
        for l in &scene.left.patches {
            let Some(r) = scene.right.patches.iter().find(|r| r.landmark_id == l.landmark_id) else {
                continue;
            };
            let Some(z) = true_depth(&scene, l) else { continue };
            let d = stereo_disparity(l, r).pixels;
            exact_max = exact_max.max((disparity_to_depth(d, fx, scene.baseline_m)? - z).abs());
            let noisy = d + rng.random_range(-delta..=delta);
            let est = disparity_to_depth(noisy, fx, scene.baseline_m)?;
            sq += (est - z).powi(2);
            bound_sq += depth_error_bound(d, fx, scene.baseline_m, delta).powi(2);
            n += 1;
        }
    }
    if n == 0 {
        return Err(Error::Empty("stereo correspondences"));
    }
    let rmse_m = (sq / n as f64).sqrt();
    let bound_rms_m = (bound_sq / n as f64).sqrt();
    Ok(NoiseStudy {
        samples: n,
        exact_max_error_m: exact_max,
        rmse_m,
        bound_rms_m,
        ratio: rmse_m / bound_rms_m,
    })
}
