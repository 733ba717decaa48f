//! Run configuration read from TOML.
//!
//! Every section is optional and falls back to the library defaults. The
//! top-level `seed` drives all randomness; the per-module `seed` fields are
//! filled from it.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::apps::{NoiseStudyConfig, PlaceConfig};
use crate::gnn::GnnArch;
use crate::matcher::{ModelConfig, TrainConfig};
use crate::scenegen::{BenchmarkConfig, RouteConfig};
use crate::{Error, Result};

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DataConfig {
    /// Manifest of an ingested dataset; the synthetic benchmark is used
    /// when absent.
    pub manifest: Option<PathBuf>,
    /// Second dataset used only for testing (cross-dataset evaluation).
    pub test_manifest: Option<PathBuf>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TheoryConfig {
    pub trials: usize,
}

impl Default for TheoryConfig {
    fn default() -> Self {
        Self { trials: 100 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub seed: u64,
    pub out: PathBuf,
    pub data: DataConfig,
    pub synth: BenchmarkConfig,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub route: RouteConfig,
    pub place: PlaceConfig,
    pub stereo: NoiseStudyConfig,
    pub theory: TheoryConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        let mut c = Self {
            seed: 0,
            out: PathBuf::from("out"),
            data: DataConfig::default(),
            synth: BenchmarkConfig::default(),
            model: ModelConfig::default(),
            train: TrainConfig::default(),
            route: RouteConfig::default(),
            place: PlaceConfig::default(),
            stereo: NoiseStudyConfig::default(),
            theory: TheoryConfig::default(),
        };
        c.set_seed(0);
        c
    }
}

impl RunConfig {
    /// Parses and validates; every unknown key and out-of-range value is
    /// reported in one [`Error::Config`].
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let mut errors = Vec::new();
        let de = toml::Deserializer::parse(text).map_err(|e| Error::Config(vec![e.to_string().trim().to_string()]))?;
        let mut config: RunConfig = serde_ignored::deserialize(de, |path| errors.push(format!("unknown key `{path}`")))
            .map_err(|e| Error::Config(vec![e.to_string().trim().to_string()]))?;
        config.set_seed(config.seed);
        errors.extend(config.problems());
        if errors.is_empty() {
            Ok(config)
        } else {
            Err(Error::Config(errors))
        }
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text)
    }

    pub fn set_seed(&mut self, seed: u64) {
        self.seed = seed;
        self.model.seed = seed;
        self.train.seed = seed;
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// SHA-256 of the canonical JSON form.
    pub fn hash(&self) -> String {
        let json = serde_json::to_string(self).expect("config serializes");
        hex::encode(Sha256::digest(json.as_bytes()))
    }

    /// Range and existence checks; empty when the config is usable.
    pub fn problems(&self) -> Vec<String> {
        let mut p = Vec::new();
        let mut check = |ok: bool, msg: String| {
            if !ok {
                p.push(msg);
            }
        };
        let in01 = |v: f64| (0.0..=1.0).contains(&v);
        let m = &self.model;
        check(m.n >= 1, format!("model.n = {} must be at least 1", m.n));
        check(m.k >= 1, format!("model.k = {} must be at least 1", m.k));
        check(in01(m.gamma), format!("model.gamma = {} outside [0, 1]", m.gamma));
        check(m.clamp > 0.0 && m.clamp < 0.5, format!("model.clamp = {} outside (0, 0.5)", m.clamp));
        check(m.featurizer.patch_size >= 8, format!("model.featurizer.patch_size = {} below 8", m.featurizer.patch_size));
        if m.gnn.arch == GnnArch::Gat {
            check(
                m.gnn.heads >= 1 && m.n.is_multiple_of(m.gnn.heads.max(1)),
                format!("model.gnn.heads = {} must divide model.n = {}", m.gnn.heads, m.n),
            );
        }
        let t = &self.train;
        check(t.lr.is_finite() && t.lr >= 0.0, format!("train.lr = {} must be finite and non-negative", t.lr));
        check(t.batch_size >= 1, format!("train.batch_size = {} must be at least 1", t.batch_size));
        let s = &self.synth;
        check(s.scenes >= 1, format!("synth.scenes = {} must be at least 1", s.scenes));
        check(s.landmarks_per_scene >= 1, format!("synth.landmarks_per_scene = {} must be at least 1", s.landmarks_per_scene));
        check(s.tau_match_m > 0.0, format!("synth.tau_match_m = {} must be positive", s.tau_match_m));
        check(
            s.test_fraction > 0.0 && s.test_fraction < 1.0,
            format!("synth.test_fraction = {} outside (0, 1)", s.test_fraction),
        );
        check(in01(s.noise.occlusion_prob), format!("synth.noise.occlusion_prob = {} outside [0, 1]", s.noise.occlusion_prob));
        check(s.noise.depth_sigma_m >= 0.0, format!("synth.noise.depth_sigma_m = {} is negative", s.noise.depth_sigma_m));
        let pl = &self.place;
        check(pl.sinkhorn.iterations >= 1, "place.sinkhorn.iterations must be at least 1".into());
        check(pl.sinkhorn.temperature > 0.0, format!("place.sinkhorn.temperature = {} must be positive", pl.sinkhorn.temperature));
        check(
            (1.0..2.0).contains(&pl.sinkhorn.relaxation),
            format!("place.sinkhorn.relaxation = {} outside [1, 2)", pl.sinkhorn.relaxation),
        );
        check(pl.sinkhorn.dustbin.is_finite(), "place.sinkhorn.dustbin must be finite".into());
        check(
            pl.validation_fraction > 0.0 && pl.validation_fraction < 1.0,
            format!("place.validation_fraction = {} outside (0, 1)", pl.validation_fraction),
        );
        if let Some(g) = pl.gamma_f {
            check(in01(g), format!("place.gamma_f = {g} outside [0, 1]"));
        }
        check(self.route.length_m > 0.0, format!("route.length_m = {} must be positive", self.route.length_m));
        check(self.route.frame_spacing_m > 0.0, format!("route.frame_spacing_m = {} must be positive", self.route.frame_spacing_m));
        let st = &self.stereo;
        check(st.stereo.baseline_m > 0.0, format!("stereo.stereo.baseline_m = {} must be positive", st.stereo.baseline_m));
        check(st.stereo.depth_m.0 > 0.0 && st.stereo.depth_m.0 < st.stereo.depth_m.1, "stereo.stereo.depth_m must be an increasing positive range".into());
        check(st.disparity_noise_px >= 0.0, format!("stereo.disparity_noise_px = {} is negative", st.disparity_noise_px));
        check(self.theory.trials >= 1, "theory.trials must be at least 1".into());
        for (key, path) in [("data.manifest", &self.data.manifest), ("data.test_manifest", &self.data.test_manifest)] {
            if let Some(path) = path {
                check(path.is_file(), format!("{key}: {} does not exist", path.display()));
            }
        }
        p
    }
}
