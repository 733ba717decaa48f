use std::path::{Path, PathBuf};

use landmatch::apps::{
    place_recognition_eval, stereo_depths, stereo_noise_study, PLACE_CSV_HEADER, STEREO_CSV_HEADER, STEREO_GAMMA,
};
use landmatch::config::RunConfig;
use landmatch::matcher::{
    compute_metrics, evaluate, train as train_model, MatchModel, ModelConfig, Prepared, Variant, METRICS_CSV_HEADER,
};
use landmatch::scenegen::{build_benchmark, generate_route, generate_stereo, load_dataset, save_dataset, Dataset, LabeledPair, PatchRef};
use landmatch::theory::verify_all;
use landmatch::{Error, Result};
use serde_json::json;

use crate::report::{csv, envelope, write_json, write_text};
use crate::Common;

/// The ablation tables: every feature pair with the learnable
/// discriminator, plus the fixed discriminators on the mixed pair.
const TABLE_VARIANTS: [&str; 7] = [
    "f_f:bilinear",
    "rho_rho:bilinear",
    "phi_phi:bilinear",
    "psi_psi:bilinear",
    "phi_psi:bilinear",
    "phi_psi:cosine",
    "phi_psi:l2",
];

pub struct Context {
    pub config: RunConfig,
    pub out: PathBuf,
}

impl Context {
    pub fn new(common: &Common) -> Result<Self> {
        let mut config = match &common.config {
            Some(path) => RunConfig::load(path)?,
            None => RunConfig::default(),
        };
        if let Some(seed) = common.seed {
            config.set_seed(seed);
        }
        if let Some(out) = &common.out {
            config.out = out.clone();
        }
        Ok(Context {
            out: config.out.clone(),
            config,
        })
    }

    fn path(&self, name: &str) -> PathBuf {
        self.out.join(name)
    }

    fn dataset(&self) -> Result<Dataset> {
        match &self.config.data.manifest {
            Some(m) => load_dataset(m),
            None => build_benchmark(&self.config.synth, self.config.seed),
        }
    }

    /// Checkpoint weights and architecture with this run's thresholds.
    fn load_model(&self, checkpoint: &Path) -> Result<MatchModel> {
        let mut model = MatchModel::load(checkpoint)?;
        model.config.gamma = self.config.model.gamma;
        Ok(model)
    }
}

fn pair_rows(ds: &Dataset, pairs: &[LabeledPair], results: &[(f64, f64, f64, bool)]) -> Vec<String> {
    pairs
        .iter()
        .zip(results)
        .map(|(p, (dxy, dyx, s, dec))| {
            format!(
                "{},{},{},{dxy:.6},{dyx:.6},{s:.6},{}",
                ds.patch(p.a).id,
                ds.patch(p.b).id,
                u8::from(p.matched),
                u8::from(*dec)
            )
        })
        .collect()
}

const SCORES_HEADER: &str = "patch_a,patch_b,label,d_xy,d_yx,s_match,decision";

pub fn synth(ctx: &Context) -> Result<()> {
    let ds = build_benchmark(&ctx.config.synth, ctx.config.seed)?;
    let manifest = save_dataset(&ds, &ctx.path("data"))?;
    let result = json!({
        "manifest": manifest,
        "frames": ds.frames.len(),
        "patches": ds.patch_count(),
        "train_pairs": ds.train.pairs.len(),
        "test_pairs": ds.test.pairs.len(),
    });
    write_json(&ctx.path("synth.json"), &envelope("synth", &ctx.config, result))?;
    println!("wrote {}", manifest.display());
    Ok(())
}

pub fn train(ctx: &Context) -> Result<()> {
    let ds = ctx.dataset()?;
    let mut model = MatchModel::new(ctx.config.model.clone())?;
    let prep = Prepared::new(&model, &ds.frames)?;
    let report = train_model(&mut model, &prep, &ds.train.pairs, &ctx.config.train)?;
    let checkpoint = ctx.path("model.json");
    std::fs::create_dir_all(&ctx.out).map_err(|e| Error::Io {
        path: ctx.out.clone(),
        source: e,
    })?;
    model.save(&checkpoint)?;
    let rows = report.epoch_loss.iter().enumerate().map(|(e, l)| format!("{e},{l:.9}"));
    write_text(&ctx.path("loss.csv"), &csv("epoch,loss", rows))?;
    let result = json!({
        "checkpoint": checkpoint,
        "steps": report.steps,
        "final_loss": report.epoch_loss.last(),
        "warnings": report.warnings,
    });
    write_json(&ctx.path("train.json"), &envelope("train", &ctx.config, result))?;
    println!(
        "trained {} steps, final loss {:.6}, checkpoint {}",
        report.steps,
        report.epoch_loss.last().copied().unwrap_or(f64::NAN),
        checkpoint.display()
    );
    Ok(())
}

/// Test pairs: the configured test manifest (all of its pairs when it has
/// no test split) or this dataset's test split.
fn eval_data(ctx: &Context) -> Result<(Dataset, Vec<LabeledPair>, &'static str)> {
    if let Some(m) = &ctx.config.data.test_manifest {
        let ds = load_dataset(m)?;
        let pairs = if ds.test.pairs.is_empty() {
            ds.train.pairs.clone()
        } else {
            ds.test.pairs.clone()
        };
        return Ok((ds, pairs, "cross"));
    }
    let ds = ctx.dataset()?;
    let pairs = ds.test.pairs.clone();
    Ok((ds, pairs, "test"))
}

pub fn eval(ctx: &Context, checkpoint: Option<&Path>, perfect_oracle: bool) -> Result<()> {
    let (ds, pairs, split) = eval_data(ctx)?;
    if pairs.is_empty() {
        return Err(Error::Empty("evaluation pairs"));
    }
    let gamma = ctx.config.model.gamma;
    let scored: Vec<(f64, f64, f64, bool)> = if perfect_oracle {
        pairs
            .iter()
            .map(|p| {
                let s = if p.matched { 1.0 } else { 0.0 };
                (s, s, s, s > gamma)
            })
            .collect()
    } else {
        let path = checkpoint
            .ok_or_else(|| Error::InvalidArgument("eval needs --checkpoint or --perfect-oracle".into()))?;
        let model = ctx.load_model(path)?;
        let prep = Prepared::new(&model, &ds.frames)?;
        let (_, results) = evaluate(&model, &prep, &pairs, gamma)?;
        results.iter().map(|r| (r.d_xy, r.d_yx, r.s_match, r.decision)).collect()
    };
    let scores: Vec<f64> = scored.iter().map(|r| r.2).collect();
    let labels: Vec<bool> = pairs.iter().map(|p| p.matched).collect();
    let metrics = compute_metrics(&scores, &labels, gamma)?;
    write_text(&ctx.path("metrics.csv"), &csv(METRICS_CSV_HEADER, [metrics.csv_row()]))?;
    write_text(&ctx.path("scores.csv"), &csv(SCORES_HEADER, pair_rows(&ds, &pairs, &scored)))?;
    let result = json!({ "split": split, "pairs": pairs.len(), "gamma": gamma, "perfect_oracle": perfect_oracle, "metrics": metrics });
    write_json(&ctx.path("metrics.json"), &envelope("eval", &ctx.config, result))?;
    println!("{METRICS_CSV_HEADER}\n{}", metrics.csv_row());
    Ok(())
}

pub fn match_frames(ctx: &Context, checkpoint: &Path, frame_a: &str, frame_b: &str) -> Result<()> {
    let ds = ctx.dataset()?;
    let model = ctx.load_model(checkpoint)?;
    let find = |id: &str| {
        ds.frames
            .iter()
            .position(|f| f.id == id)
            .ok_or_else(|| Error::InvalidArgument(format!("no frame {id:?}")))
    };
    let (a, b) = (find(frame_a)?, find(frame_b)?);
    let frames = [ds.frames[a].clone(), ds.frames[b].clone()];
    let prep = Prepared::new(&model, &frames)?;
    let rows: Vec<PatchRef> = (0..frames[0].patches.len()).map(|patch| PatchRef { frame: 0, patch }).collect();
    let cols: Vec<PatchRef> = (0..frames[1].patches.len()).map(|patch| PatchRef { frame: 1, patch }).collect();
    let results = model.score_block(&prep, &rows, &cols)?;
    let lines = rows
        .iter()
        .flat_map(|r| cols.iter().map(move |c| (r, c)))
        .zip(&results)
        .map(|((r, c), m)| {
            format!(
                "{},{},{:.6},{:.6},{:.6},{}",
                frames[0].patches[r.patch].id,
                frames[1].patches[c.patch].id,
                m.d_xy,
                m.d_yx,
                m.s_match,
                u8::from(m.decision)
            )
        });
    let path = ctx.path("match.csv");
    write_text(&path, &csv("patch_a,patch_b,d_xy,d_yx,s_match,decision", lines))?;
    println!("{} pairs written to {}", results.len(), path.display());
    Ok(())
}

fn parse_variants(spec: &str) -> Result<Vec<Variant>> {
    match spec {
        "table" => TABLE_VARIANTS.iter().map(|v| v.parse()).collect(),
        "all" => Ok(Variant::all()),
        list => list.split(',').map(|v| v.trim().parse()).collect(),
    }
}

pub fn ablate(ctx: &Context, checkpoint: Option<&Path>, variants: &str) -> Result<()> {
    let variants = parse_variants(variants)?;
    let ds = ctx.dataset()?;
    let base = checkpoint.map(|p| ctx.load_model(p)).transpose()?;
    let mut rows = Vec::new();
    let mut results = Vec::new();
    for v in variants {
        let mut model = match &base {
            Some(b) => b.with_variant(v)?,
            None => MatchModel::new(ModelConfig {
                variant: v,
                ..ctx.config.model.clone()
            })?,
        };
        let prep = Prepared::new(&model, &ds.frames)?;
        train_model(&mut model, &prep, &ds.train.pairs, &ctx.config.train)?;
        let (m, _) = evaluate(&model, &prep, &ds.test.pairs, ctx.config.model.gamma)?;
        println!("{:<18} auc {:.4} f1 {:.4}", v.name(), m.auc, m.f1);
        rows.push(format!("{},{}", v.name(), m.csv_row()));
        results.push(json!({ "variant": v.name(), "metrics": m }));
    }
    write_text(&ctx.path("ablation.csv"), &csv(&format!("variant,{METRICS_CSV_HEADER}"), rows))?;
    write_json(&ctx.path("ablation.json"), &envelope("ablate", &ctx.config, json!(results)))?;
    Ok(())
}

pub fn place(ctx: &Context, checkpoint: &Path) -> Result<()> {
    let model = ctx.load_model(checkpoint)?;
    let (reference, query) = generate_route(&ctx.config.route, ctx.config.seed)?;
    let report = place_recognition_eval(&model, &reference, &query, &ctx.config.place, ctx.config.seed)?;
    write_text(&ctx.path("place.csv"), &csv(PLACE_CSV_HEADER, report.rows.iter().map(|r| r.csv_row())))?;
    let result = json!({ "gamma_f": report.gamma_f, "metrics": report.metrics, "frame_pairs": report.rows.len() });
    write_json(&ctx.path("place.json"), &envelope("place", &ctx.config, result))?;
    println!(
        "gamma_f {:.4} f1 {:.4} accuracy {:.4}",
        report.gamma_f, report.metrics.f1, report.metrics.accuracy
    );
    Ok(())
}

pub fn stereo(ctx: &Context, checkpoint: Option<&Path>) -> Result<()> {
    let study = stereo_noise_study(&ctx.config.stereo, ctx.config.seed)?;
    let mut result = json!({ "noise_study": study });
    if let Some(path) = checkpoint {
        let model = ctx.load_model(path)?;
        let scene = generate_stereo(&ctx.config.stereo.stereo, ctx.config.seed)?;
        let rows = stereo_depths(&model, &scene, STEREO_GAMMA)?;
        let errs: Vec<f64> = rows
            .iter()
            .filter_map(|r| Some(r.depth_m? - r.true_depth_m?))
            .collect();
        let rmse = (!errs.is_empty()).then(|| (errs.iter().map(|e| e * e).sum::<f64>() / errs.len() as f64).sqrt());
        write_text(&ctx.path("stereo.csv"), &csv(STEREO_CSV_HEADER, rows.iter().map(|r| r.csv_row())))?;
        result["matched"] = json!(rows.len());
        result["left_patches"] = json!(scene.left.patches.len());
        result["matched_depth_rmse_m"] = json!(rmse);
    }
    write_json(&ctx.path("stereo.json"), &envelope("stereo", &ctx.config, result))?;
    println!(
        "noise study: rmse {:.4} m, bound rms {:.4} m, ratio {:.3}",
        study.rmse_m, study.bound_rms_m, study.ratio
    );
    Ok(())
}

pub fn verify_theory(ctx: &Context, trials: Option<usize>) -> Result<()> {
    let trials = trials.unwrap_or(ctx.config.theory.trials);
    let report = verify_all(ctx.config.seed, trials)?;
    let min_margin = report
        .prop1
        .iter()
        .filter_map(|r| r.margin)
        .fold(f64::INFINITY, f64::min);
    write_json(&ctx.path("theory.json"), &envelope("verify-theory", &ctx.config, json!(report)))?;
    println!("prop1 {} (min margin {min_margin:.3e})", pass(report.prop1_pass));
    println!("prop2 {}", pass(report.prop2_pass));
    println!("prop3 {} (ideal tv {})", pass(report.prop3_pass), report.ideal_tv);
    Ok(())
}

fn pass(ok: bool) -> &'static str {
    if ok {
        "pass"
    } else {
        "FAIL"
    }
}
