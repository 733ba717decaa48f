#![allow(dead_code)]

use landmatch::rng::rng_indexed;
use landmatch::scenegen::{
    BBox, BenchmarkConfig, CameraModel, Dataset, Frame, Intrinsics, LabeledPair, LocationFrame, Patch, PatchRef,
    PixelBlock, Pose,
};
use rand::Rng;

/// A 16x16 gray block: a random base level plus a random linear ramp.
fn pattern(rng: &mut impl Rng) -> PixelBlock {
    let base: f64 = rng.random_range(30.0..200.0);
    let (gu, gv): (f64, f64) = (rng.random_range(-4.0..4.0), rng.random_range(-4.0..4.0));
    let data = (0..256)
        .map(|i| {
            let (u, v) = ((i % 16) as f64, (i / 16) as f64);
            (base + gu * u + gv * v).clamp(0.0, 255.0) as u8
        })
        .collect();
    PixelBlock::new(16, 16, 1, data).unwrap()
}

fn frame(id: &str, landmarks: &[([f64; 3], PixelBlock)]) -> Frame {
    let patches = landmarks
        .iter()
        .enumerate()
        .map(|(i, (loc, px))| Patch {
            id: format!("{id}_p{i:02}"),
            frame_id: id.to_string(),
            bbox: BBox::new(10.0 * i as f64, 10.0, 10.0 * i as f64 + 8.0, 18.0).unwrap(),
            pixels: px.clone(),
            location: Some(*loc),
            location_frame: LocationFrame::World,
            landmark_id: Some(i as u32),
        })
        .collect();
    Frame {
        id: id.to_string(),
        camera: CameraModel::new(Intrinsics::default(), Pose::identity()).unwrap(),
        position: [0.0; 3],
        patches,
    }
}

/// Scenes seen twice with identical patches, so matched pairs have
/// identical features and unmatched pairs distinct ones. Every cross pair
/// is labeled and goes to the training split.
pub fn toy_dataset(seed: u64, scenes: usize, landmarks: usize) -> Dataset {
    let mut ds = Dataset::empty();
    for s in 0..scenes {
        let mut rng = rng_indexed(seed, "toy", s as u64);
        let lms: Vec<([f64; 3], PixelBlock)> = (0..landmarks)
            .map(|_| {
                let loc = [rng.random_range(-8.0..8.0), rng.random_range(-3.0..0.0), rng.random_range(10.0..30.0)];
                (loc, pattern(&mut rng))
            })
            .collect();
        let fa = ds.frames.len();
        ds.frames.push(frame(&format!("t{s}_a"), &lms));
        ds.frames.push(frame(&format!("t{s}_b"), &lms));
        for i in 0..landmarks {
            for j in 0..landmarks {
                ds.train.pairs.push(LabeledPair {
                    a: PatchRef { frame: fa, patch: i },
                    b: PatchRef { frame: fa + 1, patch: j },
                    matched: i == j,
                });
            }
        }
    }
    ds
}

/// A few scenes of the synthetic benchmark.
pub fn small_benchmark(scenes: usize, seed: u64) -> Dataset {
    let cfg = BenchmarkConfig {
        scenes,
        ..BenchmarkConfig::default()
    };
    landmatch::scenegen::build_benchmark(&cfg, seed).unwrap()
}
