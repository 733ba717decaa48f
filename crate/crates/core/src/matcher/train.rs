use log::warn;
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::metrics::{compute_metrics, Metrics};
use super::model::{MatchModel, MatchResult, Prepared};
use crate::error::{Error, Result};
use crate::rng::rng_indexed;
use crate::scenegen::{LabeledPair, PatchRef};
use crate::tensorcore::{adam_step, AdamConfig, AdamState, Tape};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub lr: f64,
    pub epochs: usize,
    pub batch_size: usize,
    /// Set from the run seed; not serialized.
    #[serde(skip)]
    pub seed: u64,
    /// Oversample the minority class to a 1:1 ratio each epoch.
    pub balance: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr: 1e-4,
            epochs: 150,
            batch_size: 64,
            seed: 0,
            balance: true,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct TrainReport {
    /// Mean batch loss per epoch.
    pub epoch_loss: Vec<f64>,
    pub steps: usize,
    pub warnings: Vec<String>,
}

/// One epoch's pair order: every pair of the majority class plus the
/// minority class resampled to the same count, shuffled.
fn epoch_order(pairs: &[LabeledPair], balance: bool, rng: &mut impl Rng) -> Vec<LabeledPair> {
    let (pos, neg): (Vec<_>, Vec<_>) = pairs.iter().partition(|p| p.matched);
    let mut out: Vec<LabeledPair> = if balance && !pos.is_empty() && !neg.is_empty() {
        let (major, minor) = if pos.len() >= neg.len() { (pos, neg) } else { (neg, pos) };
        let mut extra = Vec::with_capacity(major.len());
        while extra.len() < major.len() {
            let mut round = minor.clone();
            round.shuffle(rng);
            let take = (major.len() - extra.len()).min(round.len());
            extra.extend_from_slice(&round[..take]);
        }
        major.into_iter().chain(extra).copied().collect()
    } else {
        pairs.to_vec()
    };
    out.shuffle(rng);
    out
}

/// Minibatch Adam on the batch loss. Deterministic given `config.seed`.
pub fn train(model: &mut MatchModel, prep: &Prepared, pairs: &[LabeledPair], config: &TrainConfig) -> Result<TrainReport> {
    if pairs.is_empty() {
        return Err(Error::Empty("training pairs"));
    }
    if config.batch_size == 0 || !config.lr.is_finite() || config.lr < 0.0 {
        return Err(Error::InvalidArgument(format!(
            "batch_size {} / lr {} invalid",
            config.batch_size, config.lr
        )));
    }
    let mut report = TrainReport::default();
    let positives = pairs.iter().filter(|p| p.matched).count();
    if positives == 0 || positives == pairs.len() {
        let msg = format!("training set has a single class ({positives} matched of {})", pairs.len());
        warn!("{msg}");
        report.warnings.push(msg);
    }
    let adam = AdamConfig {
        lr: config.lr,
        ..AdamConfig::default()
    };
    let mut state = AdamState::new(adam, model.params.tensors());
    for epoch in 0..config.epochs {
        let mut rng = rng_indexed(config.seed, "train.epoch", epoch as u64);
        let order = epoch_order(pairs, config.balance, &mut rng);
        let mut total = 0.0;
        let mut batches = 0;
        for batch in order.chunks(config.batch_size) {
            let mut tape = Tape::new();
            let loss = model.batch_loss(&mut tape, &model.params, prep, batch)?;
            total += tape.scalar(loss);
            batches += 1;
            let grads = tape.backward(loss)?.param_grads(&model.params);
            adam_step(model.params.tensors_mut(), &grads, &mut state)?;
            report.steps += 1;
        }
        report.epoch_loss.push(total / batches as f64);
    }
    Ok(report)
}

/// Mean loss over `pairs` without updating anything.
pub fn mean_loss(model: &MatchModel, prep: &Prepared, pairs: &[LabeledPair]) -> Result<f64> {
    if pairs.is_empty() {
        return Err(Error::Empty("pairs"));
    }
    let mut total = 0.0;
    for chunk in pairs.chunks(256) {
        let mut tape = Tape::new();
        let l = model.batch_loss(&mut tape, &model.params, prep, chunk)?;
        total += tape.scalar(l) * chunk.len() as f64;
    }
    Ok(total / pairs.len() as f64)
}

/// Scores every pair and computes metrics at threshold `gamma`.
pub fn evaluate(model: &MatchModel, prep: &Prepared, pairs: &[LabeledPair], gamma: f64) -> Result<(Metrics, Vec<MatchResult>)> {
    if pairs.is_empty() {
        return Err(Error::Empty("test set"));
    }
    let refs: Vec<(PatchRef, PatchRef)> = pairs.iter().map(|p| (p.a, p.b)).collect();
    let results = model.score_pairs(prep, &refs)?;
    let scores: Vec<f64> = results.iter().map(|r| r.s_match).collect();
    let labels: Vec<bool> = pairs.iter().map(|p| p.matched).collect();
    Ok((compute_metrics(&scores, &labels, gamma)?, results))
}
