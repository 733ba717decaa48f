use std::collections::HashMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::rc::Rc;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::disc::{DiscKind, DiscriminatorParams, FeaturePair, Variant};
use crate::error::{Error, Result};
use crate::featurize::{Featurizer, FeaturizerConfig};
use crate::gnn::{Gnn, GnnConfig};
use crate::graphbuild::{frame_graphs, NeighborhoodGraph, DEFAULT_K};
use crate::rng::rng_for;
use crate::scenegen::{Frame, LabeledPair, PatchRef};
use crate::tensorcore::{load_checkpoint, save_checkpoint, ParamSet, Tape, Tensor, Var};

pub const DEFAULT_CLAMP: f64 = 1e-7;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    /// Embedding width; overrides the featurizer and GNN widths.
    pub n: usize,
    pub k: usize,
    pub featurizer: FeaturizerConfig,
    pub gnn: GnnConfig,
    pub variant: Variant,
    /// Decision threshold on `S_match` (strict).
    pub gamma: f64,
    /// Scores are clamped to `[clamp, 1 - clamp]` before the log.
    pub clamp: f64,
    /// Set from the run seed; not serialized.
    #[serde(skip)]
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            n: 32,
            k: DEFAULT_K,
            featurizer: FeaturizerConfig::default(),
            gnn: GnnConfig::default(),
            variant: Variant::default(),
            gamma: 0.5,
            clamp: DEFAULT_CLAMP,
            seed: 0,
        }
    }
}

/// Both directional scores and the symmetric match score of a pair.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct MatchResult {
    pub s_match: f64,
    pub decision: bool,
    /// `d(x -> y)`, e.g. `d(phi(x), psi(G^y))`.
    pub d_xy: f64,
    pub d_yx: f64,
}

impl MatchResult {
    pub fn new(d_xy: f64, d_yx: f64, gamma: f64) -> Self {
        let s_match = 0.5 * (d_xy + d_yx);
        Self {
            s_match,
            decision: s_match > gamma,
            d_xy,
            d_yx,
        }
    }
}

/// `f, rho, g, phi, psi` values of one patch.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EmbeddingBundle {
    pub f: Vec<f64>,
    pub rho: Vec<f64>,
    pub g: Vec<f64>,
    pub phi: Vec<f64>,
    pub psi: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
enum DiscIds {
    Blocks { m12: usize, m21: usize, m22: usize, m23: usize },
    Square { m: usize },
    Fixed,
}

/// Featurizer, GNN and discriminator parameters in one [`ParamSet`].
#[derive(Clone, Debug, PartialEq)]
pub struct MatchModel {
    pub config: ModelConfig,
    pub params: ParamSet,
    featurizer: Featurizer,
    gnn: Gnn,
    disc: DiscIds,
}

/// Per-patch inputs that do not depend on parameters: featurizer inputs and
/// neighborhood graphs, indexed `[frame][patch]`.
#[derive(Clone, Debug)]
pub struct Prepared {
    inputs: Vec<Vec<Tensor>>,
    graphs: Vec<Vec<NeighborhoodGraph>>,
}

impl Prepared {
    pub fn new(model: &MatchModel, frames: &[Frame]) -> Result<Self> {
        let mut inputs = Vec::with_capacity(frames.len());
        let mut graphs = Vec::with_capacity(frames.len());
        for f in frames {
            inputs.push(
                f.patches
                    .iter()
                    .map(|p| model.featurizer.prepare(&p.pixels))
                    .collect::<Result<Vec<_>>>()?,
            );
            graphs.push(frame_graphs(f, model.config.k)?);
        }
        Ok(Self { inputs, graphs })
    }

    pub fn graph(&self, r: PatchRef) -> &NeighborhoodGraph {
        &self.graphs[r.frame][r.patch]
    }

    pub fn frame_count(&self) -> usize {
        self.inputs.len()
    }

    pub fn patch_count(&self, frame: usize) -> usize {
        self.inputs[frame].len()
    }
}

/// Tape values for a set of patches, one row each.
pub struct Embedded {
    pub index: HashMap<PatchRef, usize>,
    pub f: Var,
    pub rho: Option<Var>,
    pub g: Option<Var>,
}

fn init_square(rows: usize, cols: usize, scale: f64, rng: &mut impl Rng) -> Tensor {
    let data = (0..rows * cols).map(|_| rng.random_range(-scale..=scale)).collect();
    Tensor::matrix(rows, cols, data).expect("positive dims")
}

fn sidecar(path: &Path) -> PathBuf {
    path.with_extension("config.json")
}

impl MatchModel {
    pub fn new(mut config: ModelConfig) -> Result<Self> {
        if config.n == 0 {
            return Err(Error::InvalidArgument("n must be positive".into()));
        }
        if !(0.0..0.5).contains(&config.clamp) {
            return Err(Error::InvalidArgument(format!("clamp {} outside [0, 0.5)", config.clamp)));
        }
        config.featurizer.n = config.n;
        config.gnn.n = config.n;
        let mut params = ParamSet::new();
        let featurizer = Featurizer::new(config.featurizer.clone(), &mut params, config.seed)?;
        let gnn = Gnn::new(config.gnn.clone(), &mut params, config.seed, "gnn")?;
        let disc = Self::init_disc(&config, &mut params);
        Ok(Self {
            config,
            params,
            featurizer,
            gnn,
            disc,
        })
    }

    fn init_disc(config: &ModelConfig, params: &mut ParamSet) -> DiscIds {
        let n = config.n;
        let mut rng = rng_for(config.seed, "disc.init");
        let v = config.variant;
        match (v.disc, v.pair) {
            (DiscKind::Bilinear, FeaturePair::PhiPsi) => {
                let s = 1.0 / n as f64;
                let mut block = |name: &str| params.add(name, init_square(n, n, s, &mut rng));
                DiscIds::Blocks {
                    m12: block("disc.m12"),
                    m21: block("disc.m21"),
                    m22: block("disc.m22"),
                    m23: block("disc.m23"),
                }
            }
            (DiscKind::Bilinear, pair) => {
                let (l, r) = pair.widths();
                let s = 1.0 / (l * n) as f64;
                DiscIds::Square {
                    m: params.add("disc.m", init_square(l * n, r * n, s, &mut rng)),
                }
            }
            _ => DiscIds::Fixed,
        }
    }

    pub fn featurizer(&self) -> &Featurizer {
        &self.featurizer
    }

    pub fn gnn(&self) -> &Gnn {
        &self.gnn
    }

    /// The flagship discriminator blocks, if this model has them.
    pub fn disc_params(&self) -> Option<DiscriminatorParams> {
        match self.disc {
            DiscIds::Blocks { m12, m21, m22, m23 } => Some(DiscriminatorParams {
                m12: self.params.get(m12).clone(),
                m21: self.params.get(m21).clone(),
                m22: self.params.get(m22).clone(),
                m23: self.params.get(m23).clone(),
            }),
            _ => None,
        }
    }

    /// Sets every discriminator matrix to zero.
    pub fn zero_discriminator(&mut self) {
        let ids: Vec<usize> = match self.disc {
            DiscIds::Blocks { m12, m21, m22, m23 } => vec![m12, m21, m22, m23],
            DiscIds::Square { m } => vec![m],
            DiscIds::Fixed => vec![],
        };
        for id in ids {
            self.params.get_mut(id).data_mut().fill(0.0);
        }
    }

    /// A model scoring with `variant`, sharing this model's featurizer and
    /// GNN weights and carrying a freshly initialized discriminator.
    pub fn with_variant(&self, variant: Variant) -> Result<Self> {
        let mut out = Self::new(ModelConfig {
            variant,
            ..self.config.clone()
        })?;
        for (i, name) in self.params.names().iter().enumerate() {
            if name.starts_with("disc.") {
                continue;
            }
            if let Some(id) = out.params.id_of(name) {
                *out.params.get_mut(id) = self.params.get(i).clone();
            }
        }
        Ok(out)
    }

    /// Writes the tensors to `path` and the config to `path` with extension
    /// `.config.json`.
    pub fn save(&self, path: &Path) -> Result<()> {
        save_checkpoint(path, &self.params)?;
        let side = sidecar(path);
        let text = serde_json::to_string_pretty(&self.config).expect("config serializes");
        fs::write(&side, text).map_err(|e| Error::io(&side, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let side = sidecar(path);
        let text = fs::read_to_string(&side).map_err(|e| Error::io(&side, e))?;
        let config: ModelConfig = serde_json::from_str(&text).map_err(|e| Error::format(&side, e.to_string()))?;
        let mut model = Self::new(config)?;
        load_checkpoint(path)?.restore_into(&mut model.params)?;
        Ok(model)
    }

    /// Embeds `patches` (duplicates allowed) on `tape`.
    pub fn embed(&self, tape: &mut Tape, params: &ParamSet, prep: &Prepared, patches: &[PatchRef]) -> Result<Embedded> {
        let mut index = HashMap::new();
        let mut order = Vec::new();
        for &p in patches {
            index.entry(p).or_insert_with(|| {
                order.push(p);
                order.len() - 1
            });
        }
        if order.is_empty() {
            return Err(Error::Empty("patch batch"));
        }
        let uses_graph = self.config.variant.effective_pair().uses_graph();
        let mut vertex_index: HashMap<PatchRef, usize> = HashMap::new();
        let mut vertices = Vec::new();
        let mut stacked = Vec::new();
        let mut centers = Vec::with_capacity(order.len());
        for &p in &order {
            let mut slot = |r: PatchRef| {
                *vertex_index.entry(r).or_insert_with(|| {
                    vertices.push(r);
                    vertices.len() - 1
                })
            };
            centers.push(slot(p));
            if uses_graph {
                for &v in &prep.graph(p).vertices {
                    stacked.push(slot(PatchRef { frame: p.frame, patch: v }));
                }
            }
        }
        let inputs: Vec<&Tensor> = vertices.iter().map(|r| &prep.inputs[r.frame][r.patch]).collect();
        let feats = self.featurizer.forward_many(tape, params, &inputs)?;
        let f = if centers.iter().enumerate().all(|(i, &c)| i == c) && centers.len() == vertices.len() {
            feats
        } else {
            tape.gather_rows(feats, Rc::new(centers))?
        };
        let (rho, g) = if uses_graph {
            let x = tape.gather_rows(feats, Rc::new(stacked))?;
            let graphs: Vec<&NeighborhoodGraph> = order.iter().map(|&p| prep.graph(p)).collect();
            let b = self.gnn.embed_graphs(tape, params, &graphs, x)?;
            (Some(b.rho_center), Some(b.g))
        } else {
            (None, None)
        };
        Ok(Embedded { index, f, rho, g })
    }

    fn representation(&self, tape: &mut Tape, emb: &Embedded, which: usize) -> Result<Var> {
        let pair = self.config.variant.effective_pair();
        let width = if which == 0 { pair.widths().0 } else { pair.widths().1 };
        let rho = || emb.rho.ok_or(Error::InvalidArgument("graph embeddings missing".into()));
        match (pair, width) {
            (FeaturePair::FF, _) => Ok(emb.f),
            (FeaturePair::RhoRho, _) => rho(),
            (_, 2) => tape.concat_cols(&[rho()?, emb.f]),
            _ => {
                let g = emb.g.ok_or(Error::InvalidArgument("graph embeddings missing".into()))?;
                tape.concat_cols(&[g, rho()?, emb.f])
            }
        }
    }

    fn disc_matrix(&self, tape: &mut Tape, params: &ParamSet) -> Option<Var> {
        match self.disc {
            DiscIds::Blocks { m12, m21, m22, m23 } => {
                let n = self.config.n;
                let z = tape.constant(Tensor::zeros(&[n, n]));
                let [a, b, c, d] = [m12, m21, m22, m23].map(|id| tape.param(params, id));
                let top = tape.concat_cols(&[z, a, z]).expect("block widths");
                let bottom = tape.concat_cols(&[b, c, d]).expect("block widths");
                Some(tape.concat_rows(&[top, bottom]).expect("block heights"))
            }
            DiscIds::Square { m } => Some(tape.param(params, m)),
            DiscIds::Fixed => None,
        }
    }

    fn directional(&self, tape: &mut Tape, m: Option<Var>, a: Var, b: Var) -> Result<Var> {
        match self.config.variant.disc {
            DiscKind::Bilinear => {
                let m = m.expect("bilinear discriminator has a matrix");
                let am = tape.matmul(a, m)?;
                let prod = tape.mul(am, b)?;
                let logit = tape.sum_cols(prod);
                Ok(tape.sigmoid(logit))
            }
            DiscKind::Cosine => {
                let ab = tape.mul(a, b)?;
                let dot = tape.sum_cols(ab);
                let aa = tape.mul(a, a)?;
                let aa = tape.sum_cols(aa);
                let na = tape.sqrt(aa)?;
                let bb = tape.mul(b, b)?;
                let bb = tape.sum_cols(bb);
                let nb = tape.sqrt(bb)?;
                let den = tape.mul(na, nb)?;
                let den = tape.affine(den, 1.0, 1e-12);
                let cos = tape.div(dot, den)?;
                Ok(tape.affine(cos, 0.5, 0.5))
            }
            DiscKind::L2 => {
                let diff = tape.sub(a, b)?;
                let sq = tape.mul(diff, diff)?;
                let ss = tape.sum_cols(sq);
                let dist = tape.sqrt(ss)?;
                let neg = tape.scale(dist, -1.0);
                tape.exp(neg)
            }
        }
    }

    /// Directional scores `(d_xy, d_yx)` as `(P x 1)` columns for pairs of
    /// rows of `emb`.
    pub fn pair_scores(
        &self,
        tape: &mut Tape,
        params: &ParamSet,
        emb: &Embedded,
        pairs: &[(PatchRef, PatchRef)],
    ) -> Result<(Var, Var)> {
        if pairs.is_empty() {
            return Err(Error::Empty("pair batch"));
        }
        let row = |r: &PatchRef| {
            emb.index
                .get(r)
                .copied()
                .ok_or_else(|| Error::InvalidArgument(format!("patch {r:?} not embedded")))
        };
        let a: Vec<usize> = pairs.iter().map(|(x, _)| row(x)).collect::<Result<_>>()?;
        let b: Vec<usize> = pairs.iter().map(|(_, y)| row(y)).collect::<Result<_>>()?;
        let (a, b) = (Rc::new(a), Rc::new(b));
        let left = self.representation(tape, emb, 0)?;
        let right = self.representation(tape, emb, 1)?;
        let m = self.disc_matrix(tape, params);
        let lx = tape.gather_rows(left, Rc::clone(&a))?;
        let ry = tape.gather_rows(right, Rc::clone(&b))?;
        let ly = tape.gather_rows(left, b)?;
        let rx = tape.gather_rows(right, a)?;
        let d_xy = self.directional(tape, m, lx, ry)?;
        let d_yx = self.directional(tape, m, ly, rx)?;
        Ok((d_xy, d_yx))
    }

    /// Training loss (negated empirical information distance) of a batch.
    pub fn batch_loss(&self, tape: &mut Tape, params: &ParamSet, prep: &Prepared, batch: &[LabeledPair]) -> Result<Var> {
        let refs: Vec<PatchRef> = batch.iter().flat_map(|p| [p.a, p.b]).collect();
        let emb = self.embed(tape, params, prep, &refs)?;
        let pairs: Vec<(PatchRef, PatchRef)> = batch.iter().map(|p| (p.a, p.b)).collect();
        let (d_xy, d_yx) = self.pair_scores(tape, params, &emb, &pairs)?;
        let labels: Vec<bool> = batch.iter().map(|p| p.matched).collect();
        super::loss::loss_from_scores(tape, d_xy, d_yx, &labels, self.config.clamp)
    }

    /// Scores pairs without recording gradients.
    pub fn score_pairs(&self, prep: &Prepared, pairs: &[(PatchRef, PatchRef)]) -> Result<Vec<MatchResult>> {
        let mut out = Vec::with_capacity(pairs.len());
        for chunk in pairs.chunks(256) {
            let mut tape = Tape::new();
            let refs: Vec<PatchRef> = chunk.iter().flat_map(|&(a, b)| [a, b]).collect();
            let emb = self.embed(&mut tape, &self.params, prep, &refs)?;
            let (dxy, dyx) = self.pair_scores(&mut tape, &self.params, &emb, chunk)?;
            let (dxy, dyx) = (tape.value(dxy).data(), tape.value(dyx).data());
            out.extend(dxy.iter().zip(dyx).map(|(&a, &b)| MatchResult::new(a, b, self.config.gamma)));
        }
        Ok(out)
    }

    /// Scores every `(rows[i], cols[j])` pair, row-major, embedding each
    /// patch once.
    pub fn score_block(&self, prep: &Prepared, rows: &[PatchRef], cols: &[PatchRef]) -> Result<Vec<MatchResult>> {
        if rows.is_empty() || cols.is_empty() {
            return Err(Error::Empty("score block"));
        }
        let mut tape = Tape::new();
        let refs: Vec<PatchRef> = rows.iter().chain(cols).copied().collect();
        let emb = self.embed(&mut tape, &self.params, prep, &refs)?;
        let pairs: Vec<(PatchRef, PatchRef)> = rows.iter().flat_map(|&a| cols.iter().map(move |&b| (a, b))).collect();
        let (dxy, dyx) = self.pair_scores(&mut tape, &self.params, &emb, &pairs)?;
        let (dxy, dyx) = (tape.value(dxy).data(), tape.value(dyx).data());
        Ok(dxy.iter().zip(dyx).map(|(&a, &b)| MatchResult::new(a, b, self.config.gamma)).collect())
    }

    pub fn match_score(&self, prep: &Prepared, x: PatchRef, y: PatchRef) -> Result<MatchResult> {
        Ok(self.score_pairs(prep, &[(x, y)])?[0])
    }

    /// Embedding values of one patch. Graph parts are empty for `f_f` models.
    pub fn assemble_embeddings(&self, prep: &Prepared, patch: PatchRef) -> Result<EmbeddingBundle> {
        let mut tape = Tape::new();
        let emb = self.embed(&mut tape, &self.params, prep, &[patch])?;
        let vals = |v: Option<Var>| v.map(|v| tape.value(v).data().to_vec()).unwrap_or_default();
        let f = vals(Some(emb.f));
        let rho = vals(emb.rho);
        let g = vals(emb.g);
        let phi = [rho.clone(), f.clone()].concat();
        let psi = [g.clone(), rho.clone(), f.clone()].concat();
        Ok(EmbeddingBundle { f, rho, g, phi, psi })
    }
}
