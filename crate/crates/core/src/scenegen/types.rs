use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use super::camera::CameraModel;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LandmarkClass {
    TrafficLight,
    TrafficSign,
    Pole,
    Window,
}

impl LandmarkClass {
    pub const ALL: [LandmarkClass; 4] = [
        LandmarkClass::TrafficLight,
        LandmarkClass::TrafficSign,
        LandmarkClass::Pole,
        LandmarkClass::Window,
    ];

    /// Physical (width, height) in meters.
    pub fn size_m(self) -> (f64, f64) {
        match self {
            LandmarkClass::TrafficLight => (0.45, 1.1),
            LandmarkClass::TrafficSign => (0.8, 0.8),
            LandmarkClass::Pole => (0.3, 2.6),
            LandmarkClass::Window => (1.2, 1.5),
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Landmark3D {
    pub id: u32,
    pub class: LandmarkClass,
    pub position: [f64; 3],
    pub appearance_seed: u64,
}

/// Axis-aligned pixel box, `u0 < u1`, `v0 < v1`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BBox {
    pub u0: f64,
    pub v0: f64,
    pub u1: f64,
    pub v1: f64,
}

impl BBox {
    pub fn new(u0: f64, v0: f64, u1: f64, v1: f64) -> Result<Self> {
        if !(u0 < u1 && v0 < v1) {
            return Err(Error::InvalidArgument(format!(
                "degenerate bbox [{u0}, {v0}, {u1}, {v1}]"
            )));
        }
        Ok(Self { u0, v0, u1, v1 })
    }

    pub fn center_u(&self) -> f64 {
        0.5 * (self.u0 + self.u1)
    }

    pub fn center_v(&self) -> f64 {
        0.5 * (self.v0 + self.v1)
    }

    pub fn width(&self) -> f64 {
        self.u1 - self.u0
    }

    pub fn height(&self) -> f64 {
        self.v1 - self.v0
    }

    pub fn inside(&self, width: f64, height: f64) -> bool {
        self.u0 >= 0.0 && self.v0 >= 0.0 && self.u1 <= width && self.v1 <= height
    }
}

/// 8-bit pixels, row-major, interleaved channels (1 = gray, 3 = RGB).
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PixelBlock {
    pub width: usize,
    pub height: usize,
    pub channels: usize,
    pub data: Vec<u8>,
}

impl PixelBlock {
    pub fn new(width: usize, height: usize, channels: usize, data: Vec<u8>) -> Result<Self> {
        if !(channels == 1 || channels == 3) || data.len() != width * height * channels {
            return Err(Error::InvalidArgument(format!(
                "pixel block {width}x{height}x{channels} with {} bytes",
                data.len()
            )));
        }
        Ok(Self {
            width,
            height,
            channels,
            data,
        })
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// Luma (or the single channel) as `f64` in `[0, 255]`.
    pub fn gray(&self) -> Vec<f64> {
        match self.channels {
            1 => self.data.iter().map(|&p| f64::from(p)).collect(),
            _ => self
                .data
                .chunks(3)
                .map(|c| 0.299 * f64::from(c[0]) + 0.587 * f64::from(c[1]) + 0.114 * f64::from(c[2]))
                .collect(),
        }
    }

    /// Bilinear resample of every channel to `w x h`.
    pub fn resized(&self, w: usize, h: usize) -> PixelBlock {
        if w == self.width && h == self.height {
            return self.clone();
        }
        let c = self.channels;
        let mut out = vec![0u8; w * h * c];
        let sx = self.width as f64 / w as f64;
        let sy = self.height as f64 / h as f64;
        for y in 0..h {
            let fy = ((y as f64 + 0.5) * sy - 0.5).clamp(0.0, (self.height - 1) as f64);
            let y0 = fy.floor() as usize;
            let y1 = (y0 + 1).min(self.height - 1);
            let ty = fy - y0 as f64;
            for x in 0..w {
                let fx = ((x as f64 + 0.5) * sx - 0.5).clamp(0.0, (self.width - 1) as f64);
                let x0 = fx.floor() as usize;
                let x1 = (x0 + 1).min(self.width - 1);
                let tx = fx - x0 as f64;
                for ch in 0..c {
                    let p = |xx: usize, yy: usize| f64::from(self.data[(yy * self.width + xx) * c + ch]);
                    let top = p(x0, y0) * (1.0 - tx) + p(x1, y0) * tx;
                    let bot = p(x0, y1) * (1.0 - tx) + p(x1, y1) * tx;
                    out[(y * w + x) * c + ch] = (top * (1.0 - ty) + bot * ty).round().clamp(0.0, 255.0) as u8;
                }
            }
        }
        PixelBlock {
            width: w,
            height: h,
            channels: c,
            data: out,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LocationFrame {
    World,
    Camera,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Patch {
    pub id: String,
    pub frame_id: String,
    /// Margin-free object box in frame pixels.
    pub bbox: BBox,
    pub pixels: PixelBlock,
    /// Estimated 3D location in meters.
    pub location: Option<[f64; 3]>,
    pub location_frame: LocationFrame,
    pub landmark_id: Option<u32>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Frame {
    pub id: String,
    pub camera: CameraModel,
    /// Camera center in world coordinates, meters.
    pub position: [f64; 3],
    pub patches: Vec<Patch>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct PatchRef {
    pub frame: usize,
    pub patch: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct LabeledPair {
    pub a: PatchRef,
    pub b: PatchRef,
    pub matched: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Test,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PairDataset {
    pub split: Split,
    pub pairs: Vec<LabeledPair>,
}

impl PairDataset {
    pub fn new(split: Split) -> Self {
        Self {
            split,
            pairs: Vec::new(),
        }
    }

    pub fn matched_count(&self) -> usize {
        self.pairs.iter().filter(|p| p.matched).count()
    }
}

/// Frames plus labeled train/test pairs referencing them.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub frames: Vec<Frame>,
    pub train: PairDataset,
    pub test: PairDataset,
}

impl Dataset {
    pub fn empty() -> Self {
        Self {
            frames: Vec::new(),
            train: PairDataset::new(Split::Train),
            test: PairDataset::new(Split::Test),
        }
    }

    pub fn patch(&self, r: PatchRef) -> &Patch {
        &self.frames[r.frame].patches[r.patch]
    }

    pub fn patch_count(&self) -> usize {
        self.frames.iter().map(|f| f.patches.len()).sum()
    }

    pub fn patch_index(&self) -> HashMap<String, PatchRef> {
        let mut idx = HashMap::new();
        for (fi, f) in self.frames.iter().enumerate() {
            for (pi, p) in f.patches.iter().enumerate() {
                idx.insert(p.id.clone(), PatchRef { frame: fi, patch: pi });
            }
        }
        idx
    }

    pub fn split(&self, split: Split) -> &PairDataset {
        match split {
            Split::Train => &self.train,
            Split::Test => &self.test,
        }
    }
}
