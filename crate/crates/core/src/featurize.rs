//! Patch descriptors `f: pixels -> R^n`. `fixed_hist` is a seeded, frozen
//! histogram projection; `tiny_conv` is a small trainable CNN.

use std::f64::consts::TAU;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{rng_for, Rng as SeededRng};
use crate::scenegen::PixelBlock;
use crate::tensorcore::{ParamSet, Tape, Tensor, Var};

pub const INTENSITY_BINS: usize = 16;
pub const ORIENTATION_BINS: usize = 8;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeaturizerKind {
    FixedHist,
    TinyConv,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FeaturizerConfig {
    pub kind: FeaturizerKind,
    pub n: usize,
    pub patch_size: usize,
    pub color: bool,
    /// Output channels of the three conv blocks (`tiny_conv` only).
    pub conv_channels: [usize; 3],
}

impl Default for FeaturizerConfig {
    fn default() -> Self {
        Self {
            kind: FeaturizerKind::FixedHist,
            n: 32,
            patch_size: 32,
            color: false,
            conv_channels: [8, 16, 16],
        }
    }
}

impl FeaturizerConfig {
    fn in_channels(&self) -> usize {
        if self.color {
            3
        } else {
            1
        }
    }

    fn descriptor_len(&self) -> usize {
        self.in_channels() * (INTENSITY_BINS + ORIENTATION_BINS)
    }
}

/// Uniform init in `[-1/sqrt(fan_in), 1/sqrt(fan_in)]`.
pub(crate) fn uniform_init(rows: usize, cols: usize, fan_in: usize, rng: &mut SeededRng) -> Tensor {
    let r = 1.0 / (fan_in as f64).sqrt();
    let data = (0..rows * cols).map(|_| rng.random_range(-r..=r)).collect();
    Tensor::matrix(rows, cols, data).expect("positive dims")
}

#[derive(Clone, Debug, PartialEq)]
enum Ids {
    Fixed { proj: usize },
    Conv { w: [usize; 3], b: [usize; 3], lin_w: usize, lin_b: usize },
}

/// Handle to featurizer parameters inside a [`ParamSet`].
#[derive(Clone, Debug, PartialEq)]
pub struct Featurizer {
    pub config: FeaturizerConfig,
    ids: Ids,
}

fn channel_planes(pixels: &PixelBlock, size: usize, color: bool) -> Result<Vec<Vec<f64>>> {
    if pixels.is_empty() || pixels.width == 0 || pixels.height == 0 {
        return Err(Error::Empty("pixel block"));
    }
    let px = pixels.resized(size, size);
    Ok(if color && px.channels == 3 {
        (0..3)
            .map(|c| px.data.iter().skip(c).step_by(3).map(|&v| f64::from(v)).collect())
            .collect()
    } else if color {
        vec![px.gray(); 3]
    } else {
        vec![px.gray()]
    })
}

/// 16-bin intensity plus 8-bin gradient-orientation histogram per channel,
/// each histogram normalized to unit mass, the whole vector L2-normalized.
/// Orientation votes are weighted by gradient magnitude; a flat channel puts
/// all orientation mass in bin 0.
pub fn hist_descriptor(pixels: &PixelBlock, size: usize, color: bool) -> Result<Vec<f64>> {
    let planes = channel_planes(pixels, size, color)?;
    let mut out = Vec::with_capacity(planes.len() * (INTENSITY_BINS + ORIENTATION_BINS));
    for plane in &planes {
        let mut hi = [0.0; INTENSITY_BINS];
        for &v in plane {
            hi[((v as usize) * INTENSITY_BINS / 256).min(INTENSITY_BINS - 1)] += 1.0;
        }
        let total: f64 = hi.iter().sum();
        out.extend(hi.iter().map(|h| h / total));

        let mut ho = [0.0; ORIENTATION_BINS];
        let at = |x: usize, y: usize| plane[y * size + x];
        for y in 0..size {
            for x in 0..size {
                let gx = at((x + 1).min(size - 1), y) - at(x.saturating_sub(1), y);
                let gy = at(x, (y + 1).min(size - 1)) - at(x, y.saturating_sub(1));
                let mag = gx.hypot(gy);
                if mag > 0.0 {
                    let angle = gy.atan2(gx).rem_euclid(TAU);
                    let bin = ((angle / TAU * ORIENTATION_BINS as f64) as usize).min(ORIENTATION_BINS - 1);
                    ho[bin] += mag;
                }
            }
        }
        let total: f64 = ho.iter().sum();
        if total > 0.0 {
            out.extend(ho.iter().map(|h| h / total));
        } else {
            out.push(1.0);
            out.extend([0.0; ORIENTATION_BINS - 1]);
        }
    }
    let norm = out.iter().map(|v| v * v).sum::<f64>().sqrt();
    Ok(out.into_iter().map(|v| v / norm).collect())
}

/// Projects a histogram descriptor with a fixed `(len x n)` matrix.
pub fn extract_fixed(pixels: &PixelBlock, proj: &Tensor, size: usize, color: bool) -> Result<Tensor> {
    let h = Tensor::row(hist_descriptor(pixels, size, color)?);
    h.matmul(proj)
}

impl Featurizer {
    /// Registers parameters under `feat.*`.
    pub fn new(config: FeaturizerConfig, params: &mut ParamSet, seed: u64) -> Result<Self> {
        if config.n == 0 || config.patch_size < 8 {
            return Err(Error::InvalidArgument(format!(
                "featurizer needs n > 0 and patch_size >= 8, got n={} size={}",
                config.n, config.patch_size
            )));
        }
        let ids = match config.kind {
            FeaturizerKind::FixedHist => {
                let mut rng = rng_for(seed, "featurize.proj");
                let len = config.descriptor_len();
                // descriptors are unit length, so unit-variance entries keep f(x) O(1)
                let data = (0..len * config.n).map(|_| StandardNormal.sample(&mut rng)).collect();
                let proj = Tensor::matrix(len, config.n, data)?;
                Ids::Fixed {
                    proj: params.add("feat.proj", proj),
                }
            }
            FeaturizerKind::TinyConv => {
                let mut rng = rng_for(seed, "featurize.conv");
                let mut c_in = config.in_channels();
                let mut w = [0; 3];
                let mut b = [0; 3];
                for (l, &c_out) in config.conv_channels.iter().enumerate() {
                    if c_out == 0 {
                        return Err(Error::InvalidArgument("conv channel count must be positive".into()));
                    }
                    w[l] = params.add(format!("feat.conv{l}.w"), uniform_init(c_out, c_in * 9, c_in * 9, &mut rng));
                    b[l] = params.add(format!("feat.conv{l}.b"), Tensor::zeros(&[1, c_out]));
                    c_in = c_out;
                }
                let lin_w = params.add("feat.lin.w", uniform_init(c_in, config.n, c_in, &mut rng));
                let lin_b = params.add("feat.lin.b", Tensor::zeros(&[1, config.n]));
                Ids::Conv { w, b, lin_w, lin_b }
            }
        };
        Ok(Self { config, ids })
    }

    /// Whether the featurizer has trainable parameters.
    pub fn trainable(&self) -> bool {
        matches!(self.ids, Ids::Conv { .. })
    }

    /// Pixel preprocessing that does not depend on parameters: the
    /// histogram descriptor (`1 x len`) or the scaled input planes
    /// (`channels x size*size`). Cache this per patch.
    pub fn prepare(&self, pixels: &PixelBlock) -> Result<Tensor> {
        let c = &self.config;
        match self.ids {
            Ids::Fixed { .. } => Ok(Tensor::row(hist_descriptor(pixels, c.patch_size, c.color)?)),
            Ids::Conv { .. } => {
                let planes = channel_planes(pixels, c.patch_size, c.color)?;
                let rows = planes.len();
                let data = planes.into_iter().flatten().map(|v| v / 255.0).collect();
                Tensor::matrix(rows, c.patch_size * c.patch_size, data)
            }
        }
    }

    /// `f(x)` as a `1 x n` row from a prepared input.
    pub fn forward(&self, tape: &mut Tape, params: &ParamSet, prepared: &Tensor) -> Result<Var> {
        match &self.ids {
            Ids::Fixed { proj } => {
                // frozen: the projection enters as a constant so it never trains
                let value = prepared.matmul(params.get(*proj))?;
                Ok(tape.constant(value))
            }
            Ids::Conv { w, b, lin_w, lin_b } => {
                let mut x = tape.constant(prepared.clone());
                let mut side = self.config.patch_size;
                for l in 0..3 {
                    let wv = tape.param(params, w[l]);
                    let bv = tape.param(params, b[l]);
                    let y = tape.conv3x3(x, wv, bv, side, side, 2)?;
                    x = tape.relu(y);
                    side = (side - 1) / 2 + 1;
                }
                let pooled = tape.mean_cols(x);
                let row = tape.transpose(pooled);
                let lw = tape.param(params, *lin_w);
                let lb = tape.param(params, *lin_b);
                let out = tape.matmul(row, lw)?;
                tape.add(out, lb)
            }
        }
    }

    /// Stacked `f` rows `(m x n)` for several prepared inputs.
    pub fn forward_many(&self, tape: &mut Tape, params: &ParamSet, prepared: &[&Tensor]) -> Result<Var> {
        if prepared.is_empty() {
            return Err(Error::Empty("featurizer batch"));
        }
        match &self.ids {
            Ids::Fixed { proj } => {
                let len = prepared[0].len();
                let mut data = Vec::with_capacity(prepared.len() * len);
                for p in prepared {
                    data.extend_from_slice(p.data());
                }
                let stacked = Tensor::matrix(prepared.len(), len, data)?;
                Ok(tape.constant(stacked.matmul(params.get(*proj))?))
            }
            Ids::Conv { .. } => {
                let rows = prepared
                    .iter()
                    .map(|p| self.forward(tape, params, p))
                    .collect::<Result<Vec<_>>>()?;
                if rows.len() == 1 {
                    Ok(rows[0])
                } else {
                    tape.concat_rows(&rows)
                }
            }
        }
    }

    /// Convenience: `f(x)` values for raw pixels.
    pub fn extract(&self, params: &ParamSet, pixels: &PixelBlock) -> Result<Vec<f64>> {
        let prepared = self.prepare(pixels)?;
        let mut tape = Tape::new();
        let v = self.forward(&mut tape, params, &prepared)?;
        Ok(tape.value(v).data().to_vec())
    }
}
