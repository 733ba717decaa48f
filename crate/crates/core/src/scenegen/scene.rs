use rand::Rng;
use serde::{Deserialize, Serialize};

use super::types::{Landmark3D, LandmarkClass};
use crate::error::{Error, Result};
use crate::rng::rng_for;

/// World-space box that landmark centers are drawn from.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SceneBounds {
    pub min: [f64; 3],
    pub max: [f64; 3],
}

impl Default for SceneBounds {
    fn default() -> Self {
        // x across the street, y down (image convention), z along the road
        Self {
            min: [-9.0, -5.0, 16.0],
            max: [9.0, 0.5, 40.0],
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SceneConfig {
    /// Landmark count per class, indexed as [`LandmarkClass::ALL`].
    pub counts: [usize; 4],
    pub bounds: SceneBounds,
    pub min_spacing_m: f64,
    /// Distinct appearance templates per class; small values make
    /// same-class landmarks look alike.
    pub appearance_variants: u32,
    pub max_attempts: usize,
}

impl Default for SceneConfig {
    fn default() -> Self {
        Self {
            counts: [2, 2, 2, 2],
            bounds: SceneBounds::default(),
            min_spacing_m: 2.0,
            appearance_variants: 3,
            max_attempts: 2000,
        }
    }
}

/// Places landmarks uniformly in the bounds by rejection sampling, keeping
/// every pairwise distance at least `min_spacing_m`.
pub fn generate_scene(config: &SceneConfig, seed: u64) -> Result<Vec<Landmark3D>> {
    let b = &config.bounds;
    if (0..3).any(|i| b.min[i] > b.max[i]) {
        return Err(Error::InvalidArgument(format!("inverted scene bounds {b:?}")));
    }
    let mut rng = rng_for(seed, "scene");
    let mut out: Vec<Landmark3D> = Vec::with_capacity(config.counts.iter().sum());
    let variants = config.appearance_variants.max(1);
    for (class, &count) in LandmarkClass::ALL.iter().zip(&config.counts) {
        for _ in 0..count {
            let mut placed = None;
            for _ in 0..config.max_attempts.max(1) {
                let p: [f64; 3] = std::array::from_fn(|i| {
                    if b.max[i] > b.min[i] {
                        rng.random_range(b.min[i]..b.max[i])
                    } else {
                        b.min[i]
                    }
                });
                let clear = out.iter().all(|l| dist(l.position, p) >= config.min_spacing_m);
                if clear {
                    placed = Some(p);
                    break;
                }
            }
            let position = placed.ok_or_else(|| {
                Error::Generation(format!(
                    "could not place landmark {} with spacing {} m after {} attempts",
                    out.len(),
                    config.min_spacing_m,
                    config.max_attempts
                ))
            })?;
            let variant = rng.random_range(0..variants);
            let tint: u64 = rng.random_range(0..1 << 16);
            out.push(Landmark3D {
                id: out.len() as u32,
                class: *class,
                position,
                appearance_seed: (tint << 8) | u64::from(variant),
            });
        }
    }
    Ok(out)
}

pub(crate) fn dist(a: [f64; 3], b: [f64; 3]) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2)).sqrt()
}
