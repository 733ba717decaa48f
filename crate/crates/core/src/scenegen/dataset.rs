//! Manifest ingestion and export.
//!
//! A manifest is JSON Lines, one frame per line:
//!
//! ```json
//! {"frame_id": "s000_v0", "camera": {"fx": 700, "fy": 700, "cx": 640, "cy": 480, "W": 1280, "H": 960},
//!  "position": [0, 0, 0],
//!  "patches": [{"patch_id": "s000_v0_p00", "bbox": [600, 400, 640, 480],
//!               "image": "images/s000_v0_p00.pgm", "loc3d": [1.2, -0.5, 20.0], "landmark_id": 3}]}
//! ```
//!
//! Optional patch keys: `landmark_id`, `sha256` (hex digest of the image
//! file, verified on load) and `loc_frame` (`"world"` default, or `"camera"`).
//! Images are binary PGM (P5) or PPM (P6). Labeled pairs live next to the
//! manifest in `pairs_train.csv` / `pairs_test.csv` with header
//! `patch_a,patch_b,label` and label `1`/`0`.

use std::fs;
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use image::codecs::pnm::{PnmEncoder, PnmSubtype, SampleEncoding};
use image::{DynamicImage, ExtendedColorType, ImageEncoder};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::camera::{CameraModel, Intrinsics, Pose};
use super::types::{BBox, Dataset, Frame, LabeledPair, LocationFrame, PairDataset, Patch, PixelBlock, Split};
use crate::error::{Error, Result};

pub const PAIRS_TRAIN_FILE: &str = "pairs_train.csv";
pub const PAIRS_TEST_FILE: &str = "pairs_test.csv";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ManifestCamera {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    #[serde(rename = "W")]
    pub width: u32,
    #[serde(rename = "H")]
    pub height: u32,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ManifestPatch {
    pub patch_id: String,
    pub bbox: [f64; 4],
    pub image: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub loc3d: Option<[f64; 3]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub landmark_id: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sha256: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub loc_frame: Option<LocationFrame>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ManifestFrame {
    pub frame_id: String,
    pub camera: ManifestCamera,
    pub position: [f64; 3],
    pub patches: Vec<ManifestPatch>,
}

fn read_image(path: &Path) -> std::result::Result<(PixelBlock, Vec<u8>), String> {
    let bytes = fs::read(path).map_err(|e| format!("{}: {e}", path.display()))?;
    let img = image::load_from_memory_with_format(&bytes, image::ImageFormat::Pnm)
        .map_err(|e| format!("{}: {e}", path.display()))?;
    let block = match img {
        DynamicImage::ImageLuma8(g) => {
            let (w, h) = g.dimensions();
            PixelBlock::new(w as usize, h as usize, 1, g.into_raw())
        }
        other => {
            let rgb = other.to_rgb8();
            let (w, h) = rgb.dimensions();
            PixelBlock::new(w as usize, h as usize, 3, rgb.into_raw())
        }
    }
    .map_err(|e| e.to_string())?;
    Ok((block, bytes))
}

fn frame_from_record(rec: ManifestFrame, base: &Path) -> std::result::Result<Frame, String> {
    let c = &rec.camera;
    let intrinsics = Intrinsics::new(c.fx, c.fy, c.cx, c.cy, c.width, c.height).map_err(|e| e.to_string())?;
    let pose = Pose {
        rotation: Pose::identity().rotation,
        translation: rec.position.map(|v| -v),
    };
    let camera = CameraModel { intrinsics, pose };
    let mut patches = Vec::with_capacity(rec.patches.len());
    for p in rec.patches {
        let [u0, v0, u1, v1] = p.bbox;
        let bbox = BBox::new(u0, v0, u1, v1).map_err(|e| format!("patch {}: {e}", p.patch_id))?;
        if !bbox.inside(f64::from(c.width), f64::from(c.height)) {
            return Err(format!(
                "patch {}: bbox {:?} outside {}x{} image",
                p.patch_id, p.bbox, c.width, c.height
            ));
        }
        let (pixels, bytes) = read_image(&base.join(&p.image)).map_err(|e| format!("patch {}: {e}", p.patch_id))?;
        if let Some(expected) = &p.sha256 {
            let actual = hex::encode(Sha256::digest(&bytes));
            if !actual.eq_ignore_ascii_case(expected) {
                return Err(format!("patch {}: checksum mismatch for {}", p.patch_id, p.image));
            }
        }
        patches.push(Patch {
            id: p.patch_id,
            frame_id: rec.frame_id.clone(),
            bbox,
            pixels,
            location: p.loc3d,
            location_frame: p.loc_frame.unwrap_or(LocationFrame::World),
            landmark_id: p.landmark_id,
        });
    }
    Ok(Frame {
        id: rec.frame_id,
        camera,
        position: rec.position,
        patches,
    })
}

/// Loads a manifest and any pair files beside it. Every bad record is
/// reported with its (0-based, non-blank line) index.
pub fn load_dataset(manifest: &Path) -> Result<Dataset> {
    let text = fs::read_to_string(manifest).map_err(|e| Error::io(manifest, e))?;
    let base = manifest.parent().map(Path::to_path_buf).unwrap_or_default();
    let mut frames = Vec::new();
    let mut errors = Vec::new();
    for (index, line) in text.lines().filter(|l| !l.trim().is_empty()).enumerate() {
        let rec: ManifestFrame = match serde_json::from_str(line) {
            Ok(r) => r,
            Err(e) => {
                errors.push((index, format!("malformed record: {e}")));
                continue;
            }
        };
        match frame_from_record(rec, &base) {
            Ok(f) => frames.push(f),
            Err(msg) => errors.push((index, msg)),
        }
    }
    if !errors.is_empty() {
        return Err(Error::Records(errors));
    }
    let mut dataset = Dataset {
        frames,
        ..Dataset::empty()
    };
    for (split, name) in [(Split::Train, PAIRS_TRAIN_FILE), (Split::Test, PAIRS_TEST_FILE)] {
        let path = base.join(name);
        if path.exists() {
            let pairs = load_pairs_csv(&path, &dataset, split)?;
            match split {
                Split::Train => dataset.train = pairs,
                Split::Test => dataset.test = pairs,
            }
        }
    }
    Ok(dataset)
}

pub fn load_pairs_csv(path: &Path, dataset: &Dataset, split: Split) -> Result<PairDataset> {
    let index = dataset.patch_index();
    let mut reader = csv::Reader::from_path(path).map_err(|e| Error::format(path, e.to_string()))?;
    let headers = reader.headers().map_err(|e| Error::format(path, e.to_string()))?.clone();
    if headers.iter().collect::<Vec<_>>() != ["patch_a", "patch_b", "label"] {
        return Err(Error::format(path, format!("expected header patch_a,patch_b,label, got {headers:?}")));
    }
    let mut out = PairDataset::new(split);
    let mut errors = Vec::new();
    for (i, row) in reader.records().enumerate() {
        let row = match row {
            Ok(r) => r,
            Err(e) => {
                errors.push((i, e.to_string()));
                continue;
            }
        };
        let lookup = |k: &str| index.get(k).copied().ok_or_else(|| format!("unknown patch {k:?}"));
        let parsed = (|| -> std::result::Result<LabeledPair, String> {
            let a = lookup(&row[0])?;
            let b = lookup(&row[1])?;
            if a.frame == b.frame {
                return Err(format!("{} and {} share a frame", &row[0], &row[1]));
            }
            let matched = match row[2].trim() {
                "1" | "matched" => true,
                "0" | "unmatched" => false,
                other => return Err(format!("bad label {other:?}")),
            };
            Ok(LabeledPair { a, b, matched })
        })();
        match parsed {
            Ok(p) => out.pairs.push(p),
            Err(m) => errors.push((i, m)),
        }
    }
    if errors.is_empty() {
        Ok(out)
    } else {
        Err(Error::Records(errors))
    }
}

pub fn write_pairs_csv(path: &Path, dataset: &Dataset, pairs: &PairDataset) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::format(path, e.to_string()))?;
    let fmt = |e: csv::Error| Error::format(path, e.to_string());
    w.write_record(["patch_a", "patch_b", "label"]).map_err(fmt)?;
    for p in &pairs.pairs {
        let label = if p.matched { "1" } else { "0" };
        w.write_record([dataset.patch(p.a).id.as_str(), dataset.patch(p.b).id.as_str(), label])
            .map_err(fmt)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

fn write_image(path: &Path, px: &PixelBlock) -> Result<Vec<u8>> {
    let mut bytes = Vec::new();
    let (subtype, color) = if px.channels == 1 {
        (PnmSubtype::Graymap(SampleEncoding::Binary), ExtendedColorType::L8)
    } else {
        (PnmSubtype::Pixmap(SampleEncoding::Binary), ExtendedColorType::Rgb8)
    };
    PnmEncoder::new(BufWriter::new(&mut bytes))
        .with_subtype(subtype)
        .write_image(&px.data, px.width as u32, px.height as u32, color)
        .map_err(|e| Error::format(path, e.to_string()))?;
    fs::write(path, &bytes).map_err(|e| Error::io(path, e))?;
    Ok(bytes)
}

/// Writes `manifest.jsonl`, `images/*.pgm|ppm` and the pair files into
/// `dir`. Returns the manifest path.
pub fn save_dataset(dataset: &Dataset, dir: &Path) -> Result<PathBuf> {
    let images = dir.join("images");
    fs::create_dir_all(&images).map_err(|e| Error::io(&images, e))?;
    let mut lines = String::new();
    for f in &dataset.frames {
        let k = &f.camera.intrinsics;
        let mut patches = Vec::with_capacity(f.patches.len());
        for p in &f.patches {
            let ext = if p.pixels.channels == 1 { "pgm" } else { "ppm" };
            let rel = format!("images/{}.{ext}", p.id);
            let bytes = write_image(&dir.join(&rel), &p.pixels)?;
            patches.push(ManifestPatch {
                patch_id: p.id.clone(),
                bbox: [p.bbox.u0, p.bbox.v0, p.bbox.u1, p.bbox.v1],
                image: rel,
                loc3d: p.location,
                landmark_id: p.landmark_id,
                sha256: Some(hex::encode(Sha256::digest(&bytes))),
                loc_frame: (p.location_frame != LocationFrame::World).then_some(p.location_frame),
            });
        }
        let rec = ManifestFrame {
            frame_id: f.id.clone(),
            camera: ManifestCamera {
                fx: k.fx,
                fy: k.fy,
                cx: k.cx,
                cy: k.cy,
                width: k.width,
                height: k.height,
            },
            position: f.position,
            patches,
        };
        lines.push_str(&serde_json::to_string(&rec).expect("manifest record serializes"));
        lines.push('\n');
    }
    let manifest = dir.join("manifest.jsonl");
    fs::write(&manifest, lines).map_err(|e| Error::io(&manifest, e))?;
    write_pairs_csv(&dir.join(PAIRS_TRAIN_FILE), dataset, &dataset.train)?;
    write_pairs_csv(&dir.join(PAIRS_TEST_FILE), dataset, &dataset.test)?;
    Ok(manifest)
}
