use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::camera::{project_to_image, CameraModel};
use super::types::{BBox, Frame, Landmark3D, LandmarkClass, LocationFrame, Patch, PixelBlock};
use crate::rng::{rng_for, Rng as SeededRng};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NoiseConfig {
    /// Per-axis std of the estimated 3D location, meters.
    pub depth_sigma_m: f64,
    pub occlusion_prob: f64,
    /// Std of additive pixel noise, gray levels.
    pub pixel_noise: f64,
    /// Relative brightness change per view, drawn from `[-j, j]`.
    pub brightness_jitter: f64,
    /// Per-view shift of the background level, gray levels.
    pub background_jitter: f64,
    /// Background margin around the object box before resizing, pixels.
    pub margin_px: f64,
    pub patch_size: usize,
}

impl Default for NoiseConfig {
    fn default() -> Self {
        Self {
            depth_sigma_m: 0.2,
            occlusion_prob: 0.1,
            pixel_noise: 6.0,
            brightness_jitter: 0.1,
            background_jitter: 10.0,
            margin_px: 15.0,
            patch_size: 32,
        }
    }
}

impl NoiseConfig {
    pub fn noiseless() -> Self {
        Self {
            depth_sigma_m: 0.0,
            occlusion_prob: 0.0,
            pixel_noise: 0.0,
            brightness_jitter: 0.0,
            background_jitter: 0.0,
            ..Self::default()
        }
    }
}

/// Renders every visible, unoccluded landmark into a patch of one frame.
/// Patch order is shuffled so ids carry no correspondence information.
pub fn render_frame(
    landmarks: &[Landmark3D],
    camera: &CameraModel,
    frame_id: &str,
    noise: &NoiseConfig,
    rng: &mut SeededRng,
) -> Frame {
    let k = &camera.intrinsics;
    let loc_noise = Normal::new(0.0, noise.depth_sigma_m.max(0.0)).expect("finite sigma");
    let mut patches = Vec::new();
    for lm in landmarks {
        // draws happen for every landmark so visibility never shifts the stream
        let occluded = rng.random::<f64>() < noise.occlusion_prob;
        let jitter: [f64; 3] = std::array::from_fn(|_| loc_noise.sample(rng));
        let view_seed: u64 = rng.random();
        let Ok(proj) = project_to_image(lm.position, camera) else {
            continue;
        };
        if occluded || !proj.in_view {
            continue;
        }
        let (w_m, h_m) = lm.class.size_m();
        let w_px = k.fx * w_m / proj.depth;
        let h_px = k.fy * h_m / proj.depth;
        let bbox = BBox {
            u0: proj.u - 0.5 * w_px,
            v0: proj.v - 0.5 * h_px,
            u1: proj.u + 0.5 * w_px,
            v1: proj.v + 0.5 * h_px,
        };
        if !bbox.inside(f64::from(k.width), f64::from(k.height)) {
            continue;
        }
        let mut view_rng = crate::rng::rng_indexed(view_seed, "patch", 0);
        let pixels = render_patch(lm, w_px, h_px, noise, &mut view_rng);
        let location = std::array::from_fn(|i| lm.position[i] + jitter[i]);
        patches.push(Patch {
            id: String::new(),
            frame_id: frame_id.to_string(),
            bbox,
            pixels,
            location: Some(location),
            location_frame: LocationFrame::World,
            landmark_id: Some(lm.id),
        });
    }
    patches.shuffle(rng);
    for (i, p) in patches.iter_mut().enumerate() {
        p.id = format!("{frame_id}_p{i:02}");
    }
    Frame {
        id: frame_id.to_string(),
        camera: *camera,
        position: camera.pose.center(),
        patches,
    }
}

/// Renders the same scene from two cameras. Frame ids are `{prefix}_v0`
/// and `{prefix}_v1`.
pub fn render_views(
    scene: &[Landmark3D],
    cameras: [&CameraModel; 2],
    noise: &NoiseConfig,
    seed: u64,
    prefix: &str,
) -> (Frame, Frame) {
    let mut rng_a = rng_for(seed, "render.v0");
    let mut rng_b = rng_for(seed, "render.v1");
    let a = render_frame(scene, cameras[0], &format!("{prefix}_v0"), noise, &mut rng_a);
    let b = render_frame(scene, cameras[1], &format!("{prefix}_v1"), noise, &mut rng_b);
    (a, b)
}

fn render_patch(lm: &Landmark3D, w_px: f64, h_px: f64, noise: &NoiseConfig, rng: &mut SeededRng) -> PixelBlock {
    let size = noise.patch_size;
    let fw = w_px / (w_px + 2.0 * noise.margin_px);
    let fh = h_px / (h_px + 2.0 * noise.margin_px);
    let variant = (lm.appearance_seed & 0xff) as u32;
    let tint = ((lm.appearance_seed >> 8) % 17) as f64 - 8.0;
    // surroundings follow the template, so look-alike landmarks stay look-alike
    let mut site = crate::rng::rng_indexed(u64::from(variant), "site", lm.class as u64);
    let background = site.random_range(70.0..150.0) + rng.random_range(-1.0..=1.0) * noise.background_jitter;
    let bg_phase = site.random_range(0.0..std::f64::consts::TAU);
    let gain = 1.0 + rng.random_range(-1.0..=1.0) * noise.brightness_jitter;
    let pix_noise = Normal::new(0.0, noise.pixel_noise.max(0.0)).expect("finite sigma");

    let mut data = Vec::with_capacity(size * size);
    for y in 0..size {
        for x in 0..size {
            let nx = (x as f64 + 0.5) / size as f64;
            let ny = (y as f64 + 0.5) / size as f64;
            let ox = (nx - 0.5) / fw + 0.5;
            let oy = (ny - 0.5) / fh + 0.5;
            let bg = background + 10.0 * (6.0 * nx + bg_phase).sin();
            let value = if (0.0..1.0).contains(&ox) && (0.0..1.0).contains(&oy) {
                pattern(lm.class, variant, tint, ox, oy).unwrap_or(bg)
            } else {
                bg
            };
            let v = value * gain + pix_noise.sample(rng);
            data.push(v.round().clamp(0.0, 255.0) as u8);
        }
    }
    PixelBlock {
        width: size,
        height: size,
        channels: 1,
        data,
    }
}

/// Object intensity at normalized object coordinates, or `None` where the
/// background shows through.
fn pattern(class: LandmarkClass, variant: u32, tint: f64, x: f64, y: f64) -> Option<f64> {
    let shift = f64::from(variant / 3) * 20.0;
    let v = variant % 3;
    let (dx, dy) = (x - 0.5, y - 0.5);
    match class {
        LandmarkClass::TrafficLight => {
            let lamp_y = [1.0 / 6.0, 0.5, 5.0 / 6.0];
            for (i, ly) in lamp_y.iter().enumerate() {
                if (dx / 0.32).powi(2) + ((y - ly) / 0.12).powi(2) < 1.0 {
                    return Some(if i as u32 == v { 235.0 } else { 85.0 + shift });
                }
            }
            Some(35.0 + tint + shift)
        }
        LandmarkClass::TrafficSign => {
            let r = (dx * dx + dy * dy).sqrt();
            let inside = match v {
                0 => r < 0.5,
                1 => y > 0.08 && dx.abs() < 0.5 * (y - 0.08) / 0.92 + 0.02,
                _ => dx.abs() < 0.45 && dy.abs() < 0.45,
            };
            if !inside {
                return None;
            }
            let inner = match v {
                0 => r < 0.38,
                1 => y > 0.3 && dx.abs() < 0.32 * (y - 0.3) / 0.7,
                _ => dx.abs() < 0.3 && dy.abs() < 0.3,
            };
            Some(if inner { 215.0 + tint } else { 55.0 + shift })
        }
        LandmarkClass::Pole => {
            let base = 140.0 + tint;
            Some(match v {
                0 => base + shift,
                1 => {
                    if (y * 6.0).floor() as i32 % 2 == 0 {
                        230.0
                    } else {
                        base - 40.0 + shift
                    }
                }
                _ => {
                    if y < 0.15 {
                        225.0
                    } else {
                        70.0 + shift
                    }
                }
            })
        }
        LandmarkClass::Window => {
            let (cols, rows) = match v {
                0 => (2.0, 2.0),
                1 => (2.0, 3.0),
                _ => (1.0, 2.0),
            };
            let fx = (x * cols).fract();
            let fy = (y * rows).fract();
            let frame = !(0.15..=0.85).contains(&fx) || !(0.12..=0.88).contains(&fy);
            Some(if frame { 205.0 + tint } else { 45.0 + shift })
        }
    }
}
