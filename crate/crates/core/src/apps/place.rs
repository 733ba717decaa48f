//! Frame-level place recognition: patch score matrix, dustbin-augmented
//! Sinkhorn assignment, weighted frame score.

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::matcher::{compute_metrics, MatchModel, Metrics, Prepared};
use crate::rng::rng_for;
use crate::scenegen::{Frame, PatchRef};
use crate::{Error, Result};

/// Same-place radius between camera centers.
pub const SAME_PLACE_M: f64 = 10.0;

/// `S[i][j]` = S_match between patch `i` of frame A and patch `j` of frame B.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ScoreMatrix {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl ScoreMatrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return Err(Error::Empty("score matrix"));
        }
        if data.len() != rows * cols {
            return Err(Error::shape("score_matrix", format!("{rows}x{cols} with {} entries", data.len())));
        }
        if let Some(v) = data.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::InvalidArgument(format!("score {v} outside [0, 1]")));
        }
        Ok(ScoreMatrix { rows, cols, data })
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    pub fn transpose(&self) -> ScoreMatrix {
        let mut data = Vec::with_capacity(self.data.len());
        for j in 0..self.cols {
            data.extend((0..self.rows).map(|i| self.get(i, j)));
        }
        ScoreMatrix {
            rows: self.cols,
            cols: self.rows,
            data,
        }
    }
}

/// Score matrix between frames `a` and `b` of `prep`.
pub fn score_matrix(model: &MatchModel, prep: &Prepared, a: usize, b: usize) -> Result<ScoreMatrix> {
    if a >= prep.frame_count() || b >= prep.frame_count() {
        return Err(Error::InvalidArgument(format!("frame index {a} or {b} out of range")));
    }
    let refs = |f: usize| -> Vec<PatchRef> {
        (0..prep.patch_count(f))
            .map(|patch| PatchRef { frame: f, patch })
            .collect()
    };
    let (rows, cols) = (refs(a), refs(b));
    if rows.is_empty() || cols.is_empty() {
        return Err(Error::Empty("frame"));
    }
    let scores = model.score_block(prep, &rows, &cols)?;
    ScoreMatrix::new(rows.len(), cols.len(), scores.iter().map(|r| r.s_match).collect())
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SinkhornConfig {
    pub dustbin: f64,
    pub iterations: usize,
    pub temperature: f64,
    /// Over-relaxation factor of the potential updates, in `[1, 2)`; 1 is
    /// plain Sinkhorn. The fixed point does not depend on it.
    pub relaxation: f64,
}

impl Default for SinkhornConfig {
    fn default() -> Self {
        Self {
            dustbin: 0.2,
            iterations: 100,
            temperature: 0.1,
            relaxation: 1.5,
        }
    }
}

/// Residual above which a relaxed run is checked against plain iterations.
const RELAXED_FALLBACK: f64 = 1e-6;

/// Dustbin-augmented transport plan, `(rows + 1) x (cols + 1)` row-major.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct PartialAssignment {
    pub rows: usize,
    pub cols: usize,
    pub plan: Vec<f64>,
    /// Largest deviation of a real row's mass from 1.
    pub row_residual: f64,
    /// Largest deviation of a real column's mass from 1.
    pub col_residual: f64,
}

impl PartialAssignment {
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.plan[i * (self.cols + 1) + j]
    }
}

fn log_sum_exp(values: impl Iterator<Item = f64>) -> f64 {
    let v: Vec<f64> = values.collect();
    let m = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + v.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

/// Log-domain Sinkhorn over `S / tau` with a dustbin row and column of
/// value `dustbin / tau`. Real rows and columns carry unit mass; the
/// dustbin row carries `cols` and the dustbin column `rows`.
///
/// Potential updates are over-relaxed by `config.relaxation`. A relaxed run
/// that ends with a residual above 1e-6 is rerun with plain updates and the
/// plan with the smaller residual is kept.
pub fn sinkhorn_assign(s: &ScoreMatrix, config: &SinkhornConfig) -> Result<PartialAssignment> {
    if config.iterations == 0 {
        return Err(Error::InvalidArgument("sinkhorn needs at least one iteration".into()));
    }
    if !(config.temperature > 0.0 && config.temperature.is_finite()) {
        return Err(Error::InvalidArgument(format!("temperature {}", config.temperature)));
    }
    if !(1.0..2.0).contains(&config.relaxation) {
        return Err(Error::InvalidArgument(format!("relaxation {} outside [1, 2)", config.relaxation)));
    }
    if !config.dustbin.is_finite() || s.data.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("sinkhorn input".into()));
    }
    let relaxed = sinkhorn_run(s, config, config.relaxation);
    let residual = |p: &PartialAssignment| p.row_residual.max(p.col_residual);
    if config.relaxation == 1.0 || residual(&relaxed) <= RELAXED_FALLBACK {
        return Ok(relaxed);
    }
    let plain = sinkhorn_run(s, config, 1.0);
    Ok(if residual(&plain) <= residual(&relaxed) {
        plain
    } else {
        relaxed
    })
}

fn sinkhorn_run(s: &ScoreMatrix, config: &SinkhornConfig, omega: f64) -> PartialAssignment {
    let (a, b) = (s.rows, s.cols);
    let (h, w) = (a + 1, b + 1);
    let tau = config.temperature;
    let mut z = vec![config.dustbin / tau; h * w];
    for i in 0..a {
        for j in 0..b {
            z[i * w + j] = s.get(i, j) / tau;
        }
    }
    let log_mu: Vec<f64> = (0..h).map(|i| if i < a { 0.0 } else { (b as f64).ln() }).collect();
    let log_nu: Vec<f64> = (0..w).map(|j| if j < b { 0.0 } else { (a as f64).ln() }).collect();
    let mut u = vec![0.0; h];
    let mut v = vec![0.0; w];
    for t in 0..config.iterations {
        for i in 0..h {
            let next = log_mu[i] - log_sum_exp((0..w).map(|j| z[i * w + j] + v[j]));
            u[i] = (1.0 - omega) * u[i] + omega * next;
        }
        // the last column update is exact so the columns always balance
        let om = if t + 1 == config.iterations { 1.0 } else { omega };
        for j in 0..w {
            let next = log_nu[j] - log_sum_exp((0..h).map(|i| z[i * w + j] + u[i]));
            v[j] = (1.0 - om) * v[j] + om * next;
        }
    }
    let mut plan = vec![0.0; h * w];
    for i in 0..h {
        for j in 0..w {
            plan[i * w + j] = (z[i * w + j] + u[i] + v[j]).exp();
        }
    }
    let mut row_residual = (0..a)
        .map(|i| (plan[i * w..(i + 1) * w].iter().sum::<f64>() - 1.0).abs())
        .fold(0.0, f64::max);
    let mut col_residual = (0..b)
        .map(|j| ((0..h).map(|i| plan[i * w + j]).sum::<f64>() - 1.0).abs())
        .fold(0.0, f64::max);
    if plan.iter().any(|v| !v.is_finite()) {
        row_residual = f64::INFINITY;
        col_residual = f64::INFINITY;
    }
    PartialAssignment {
        rows: a,
        cols: b,
        plan,
        row_residual,
        col_residual,
    }
}

/// Sum of `S * P` over real entries, divided by `min(A, B)`.
pub fn frame_match_score(s: &ScoreMatrix, p: &PartialAssignment) -> Result<f64> {
    if (s.rows, s.cols) != (p.rows, p.cols) {
        return Err(Error::shape(
            "frame_match_score",
            format!("scores {}x{}, plan {}x{}", s.rows, s.cols, p.rows, p.cols),
        ));
    }
    let mut total = 0.0;
    for i in 0..s.rows {
        for j in 0..s.cols {
            total += s.get(i, j) * p.get(i, j);
        }
    }
    Ok(total / s.rows.min(s.cols) as f64)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct FrameMatch {
    pub score: f64,
    pub decision: bool,
}

/// Full frame comparison; decision is `score > gamma_f`.
pub fn match_frames(
    model: &MatchModel,
    prep: &Prepared,
    a: usize,
    b: usize,
    sinkhorn: &SinkhornConfig,
    gamma_f: f64,
) -> Result<FrameMatch> {
    let s = score_matrix(model, prep, a, b)?;
    let p = sinkhorn_assign(&s, sinkhorn)?;
    let score = frame_match_score(&s, &p)?;
    Ok(FrameMatch {
        score,
        decision: score > gamma_f,
    })
}

pub fn same_place(a: &Frame, b: &Frame) -> bool {
    camera_distance(a, b) < SAME_PLACE_M
}

pub fn camera_distance(a: &Frame, b: &Frame) -> f64 {
    a.position
        .iter()
        .zip(&b.position)
        .map(|(x, y)| (x - y).powi(2))
        .sum::<f64>()
        .sqrt()
}

/// Threshold with the best F1 on `(scores, labels)`; ties go to the lower
/// threshold (higher recall). Candidates sit between consecutive distinct
/// scores and just below the smallest one.
pub fn tune_threshold(scores: &[f64], labels: &[bool]) -> Result<f64> {
    if scores.is_empty() {
        return Err(Error::Empty("validation split"));
    }
    let mut sorted: Vec<f64> = scores.to_vec();
    sorted.sort_by(f64::total_cmp);
    sorted.dedup();
    let mut candidates = vec![sorted[0] - 1e-9];
    candidates.extend(sorted.windows(2).map(|w| 0.5 * (w[0] + w[1])));
    let mut best = (f64::NEG_INFINITY, candidates[0]);
    for &c in &candidates {
        let f1 = compute_metrics(scores, labels, c)?.f1;
        if f1 > best.0 {
            best = (f1, c);
        }
    }
    Ok(best.1)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PlaceConfig {
    pub sinkhorn: SinkhornConfig,
    /// Share of query frames whose pairs tune the frame threshold.
    pub validation_fraction: f64,
    /// Fixed frame threshold; tuned on the validation split when absent.
    pub gamma_f: Option<f64>,
}

impl Default for PlaceConfig {
    fn default() -> Self {
        Self {
            sinkhorn: SinkhornConfig::default(),
            validation_fraction: 0.5,
            gamma_f: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct PlaceRow {
    pub frame_a: String,
    pub frame_b: String,
    pub distance_m: f64,
    pub score: f64,
    pub label: bool,
    pub decision: bool,
    pub validation: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct PlaceReport {
    pub gamma_f: f64,
    /// Metrics on the held-out query frames.
    pub metrics: Metrics,
    pub rows: Vec<PlaceRow>,
}

/// Compares every query frame with every reference frame. Query frames are
/// shuffled with `seed`; the first `validation_fraction` of them tune the
/// frame threshold and the rest are scored.
pub fn place_recognition_eval(
    model: &MatchModel,
    reference: &[Frame],
    query: &[Frame],
    config: &PlaceConfig,
    seed: u64,
) -> Result<PlaceReport> {
    if reference.is_empty() || query.is_empty() {
        return Err(Error::Empty("place recognition frames"));
    }
    let frames: Vec<Frame> = reference.iter().chain(query).cloned().collect();
    let prep = Prepared::new(model, &frames)?;
    let mut order: Vec<usize> = (0..query.len()).collect();
    order.shuffle(&mut rng_for(seed, "place.split"));
    let n_val = if config.gamma_f.is_some() {
        0
    } else {
        ((query.len() as f64 * config.validation_fraction).round() as usize).clamp(1, query.len().saturating_sub(1).max(1))
    };
    let mut validation = vec![false; query.len()];
    for &q in &order[..n_val] {
        validation[q] = true;
    }
    let mut rows = Vec::with_capacity(reference.len() * query.len());
    for (qi, q) in query.iter().enumerate() {
        for (ri, r) in reference.iter().enumerate() {
            let s = score_matrix(model, &prep, ri, reference.len() + qi)?;
            let p = sinkhorn_assign(&s, &config.sinkhorn)?;
            rows.push(PlaceRow {
                frame_a: r.id.clone(),
                frame_b: q.id.clone(),
                distance_m: camera_distance(r, q),
                score: frame_match_score(&s, &p)?,
                label: same_place(r, q),
                decision: false,
                validation: validation[qi],
            });
        }
    }
    let gamma_f = match config.gamma_f {
        Some(g) => g,
        None => {
            let (s, l): (Vec<f64>, Vec<bool>) = rows.iter().filter(|r| r.validation).map(|r| (r.score, r.label)).unzip();
            tune_threshold(&s, &l)?
        }
    };
    for r in &mut rows {
        r.decision = r.score > gamma_f;
    }
    let (s, l): (Vec<f64>, Vec<bool>) = rows.iter().filter(|r| !r.validation).map(|r| (r.score, r.label)).unzip();
    let metrics = compute_metrics(&s, &l, gamma_f)?;
    Ok(PlaceReport { gamma_f, metrics, rows })
}

pub const PLACE_CSV_HEADER: &str = "frame_a,frame_b,distance_m,score,label,decision,validation";

impl PlaceRow {
    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{:.3},{:.6},{},{},{}",
            self.frame_a,
            self.frame_b,
            self.distance_m,
            self.score,
            u8::from(self.label),
            u8::from(self.decision),
            u8::from(self.validation)
        )
    }
}
