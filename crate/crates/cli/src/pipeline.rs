//! Command implementations shared by the binary and the test suites.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::json;

use jpop_core::data::{load_store, ClipRecord, DatasetManifest, Split};
use jpop_core::eval::{self, ComparisonRow, MetricsReport, PredictionSet};
use jpop_core::explain::{explain_downstream, explain_pretext, write_downstream_cam, write_pretext_cam};
use jpop_core::models::{
    load_checkpoint, save_checkpoint, transfer_weights, Checkpoint, CheckpointMeta, DownstreamModel,
    DownstreamModelConfig, ModelKind, PretextModel, PretextModelConfig, TransferReport,
};
use jpop_core::par::{self, ExecMode};
use jpop_core::patchgen::{make_eval_sample, Frame, PatchGeometry};
use jpop_core::permset::{generate_candidate_pool, sample_class_set, PermutationSet};
use jpop_core::training::{
    predict_downstream, train_downstream, train_pretext, EpochRecord, TrainHooks, TrainOutcome,
};

use crate::config::{Execution, RunConfig};
use crate::run::{write_json, Logger};
use crate::CliError;

/// Element type for all training and inference.
pub type F = f32;

pub fn apply_execution(cfg: &RunConfig) -> ExecMode {
    let mode = match cfg.execution {
        Execution::Parallel => ExecMode::Parallel,
        Execution::Sequential => ExecMode::Sequential,
    };
    par::set_global_mode(mode);
    mode
}

fn git_rev() -> Option<String> {
    option_env!("JPOP_GIT_REV").map(str::to_string)
}

/// Generates (or loads) the permutation set and logs the pool size.
pub fn permutation_set(cfg: &RunConfig, log: &mut Logger) -> Result<PermutationSet, CliError> {
    if let Some(path) = &cfg.permset.file {
        let set = PermutationSet::load(path)?;
        if set.class_count() != cfg.model.pretext.class_count {
            return Err(CliError::Config(vec![format!(
                "permset.file: {} classes but model.pretext.class_count is {}",
                set.class_count(),
                cfg.model.pretext.class_count
            )]));
        }
        log.info("permset_loaded", json!({"path": path, "classes": set.class_count()}));
        return Ok(set);
    }
    let t = std::time::Instant::now();
    let pool = generate_candidate_pool(9, cfg.permset.threshold, false)?;
    log.info(
        "pool_generated",
        json!({
            "pool_size": pool.len(),
            "n_patches": 9,
            "threshold_exclusive": cfg.permset.threshold,
            "enumeration_order": pool.enumeration_order,
            "pool_digest": pool.digest(),
            "seconds": t.elapsed().as_secs_f64(),
        }),
    );
    Ok(sample_class_set(&pool, cfg.permset.classes, cfg.permset.seed)?)
}

pub struct Splits {
    pub manifest: DatasetManifest,
    pub train: Vec<ClipRecord>,
    pub valid: Vec<ClipRecord>,
}

pub fn load_splits(cfg: &RunConfig, log: &mut Logger) -> Result<Splits, CliError> {
    let store = cfg.store()?;
    let (manifest, records) = load_store(store, None)?;
    if manifest.frame_size != cfg.patchgen.frame_size {
        return Err(CliError::Config(vec![format!(
            "patchgen.frame_size: {} differs from the store frame size {}",
            cfg.patchgen.frame_size, manifest.frame_size
        )]));
    }
    let (train, valid): (Vec<_>, Vec<_>) = records.into_iter().partition(|r| r.split == Split::Train);
    log.info(
        "store_loaded",
        json!({"store": store, "name": manifest.name, "train": train.len(), "valid": valid.len()}),
    );
    Ok(Splits { manifest, train, valid })
}

fn epoch_logger<'a>(log: &'a mut Logger, stage: &'static str) -> impl FnMut(&EpochRecord) + 'a {
    move |r: &EpochRecord| {
        log.info(
            "epoch",
            json!({
                "stage": stage, "epoch": r.epoch, "lr": r.lr, "train_loss": r.train_loss,
                "val_loss": r.val_loss, "val_acc": r.val_acc, "val_auc": r.val_auc,
            }),
        )
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PretrainSummary {
    pub best_epoch: usize,
    pub best_val_acc: f64,
    pub stopped_early: bool,
    pub epochs_run: usize,
    pub checkpoint: PathBuf,
    pub permset: PathBuf,
    pub oversample_pretext: bool,
}

/// Pretext training into `out`: permutation set, history, best checkpoint.
pub fn pretrain(cfg: &RunConfig, splits: &Splits, out: &Path, log: &mut Logger) -> Result<PretrainSummary, CliError> {
    std::fs::create_dir_all(out).map_err(|e| CliError::runtime(format!("{}: {e}", out.display())))?;
    let pset = permutation_set(cfg, log)?;
    let permset_path = out.join("permset.json");
    pset.save(&permset_path)?;
    let mut model = PretextModel::<F>::build_init(&cfg.model.pretext, cfg.model.pretext_seed)?;
    let summary = model.summary()?;
    std::fs::write(out.join("model_summary.txt"), summary.to_string())
        .map_err(|e| CliError::runtime(e.to_string()))?;
    log.info(
        "pretrain_start",
        json!({"params": summary.total_params, "classes": pset.class_count(), "oversample_pretext": cfg.train.pretext.oversample_pretext}),
    );
    let outcome = {
        let mut cb = epoch_logger(log, "pretext");
        let hooks = TrainHooks {
            out_dir: Some(out.to_path_buf()),
            git_rev: git_rev(),
            on_epoch: Some(&mut cb),
        };
        train_pretext(&mut model, &pset, &splits.train, &splits.valid, &cfg.train.pretext, hooks)?
    };
    let result = PretrainSummary {
        best_epoch: outcome.best_epoch,
        best_val_acc: outcome.best_metric,
        stopped_early: outcome.stopped_early,
        epochs_run: outcome.history.records.len(),
        checkpoint: outcome.best_checkpoint.clone().unwrap_or_else(|| out.join("best.ckpt")),
        permset: permset_path,
        oversample_pretext: cfg.train.pretext.oversample_pretext,
    };
    write_json(&out.join("outcome.json"), &result)?;
    log.info("pretrain_done", serde_json::to_value(&result).expect("serializable"));
    Ok(result)
}

/// Initialization of the downstream network.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Init {
    Random,
    Checkpoint(PathBuf),
}

impl std::str::FromStr for Init {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        Ok(if s == "random" {
            Init::Random
        } else {
            Init::Checkpoint(PathBuf::from(s))
        })
    }
}

fn expect_kind(ck: &Checkpoint, kind: ModelKind, path: &Path) -> Result<(), CliError> {
    if ck.meta.kind != kind {
        return Err(CliError::runtime(format!(
            "{}: expected a {kind:?} checkpoint, found {:?}",
            path.display(),
            ck.meta.kind
        )));
    }
    Ok(())
}

pub fn load_pretext(path: &Path) -> Result<PretextModel<F>, CliError> {
    let ck = load_checkpoint(path)?;
    expect_kind(&ck, ModelKind::Pretext, path)?;
    let cfg: PretextModelConfig = serde_json::from_value(ck.meta.config.clone())
        .map_err(|e| CliError::runtime(format!("{}: bad model config: {e}", path.display())))?;
    let mut m = PretextModel::<F>::build(&cfg)?;
    ck.load_into(&mut m.store)?;
    Ok(m)
}

pub fn load_downstream(path: &Path) -> Result<DownstreamModel<F>, CliError> {
    let ck = load_checkpoint(path)?;
    expect_kind(&ck, ModelKind::Downstream, path)?;
    let cfg: DownstreamModelConfig = serde_json::from_value(ck.meta.config.clone())
        .map_err(|e| CliError::runtime(format!("{}: bad model config: {e}", path.display())))?;
    let mut m = DownstreamModel::<F>::build(&cfg)?;
    ck.load_into(&mut m.store)?;
    Ok(m)
}

/// Names of branch parameters whose values differ between the stores.
pub fn branch_mismatches(pretext: &PretextModel<F>, downstream: &DownstreamModel<F>) -> Vec<String> {
    downstream
        .store
        .params
        .iter()
        .filter(|p| p.name.starts_with("branch"))
        .filter(|p| {
            let src = pretext.store.params.iter().find(|q| q.name == p.name);
            !src.is_some_and(|q| {
                q.data.len() == p.data.len() && q.data.iter().zip(&p.data).all(|(a, b)| a.to_bits() == b.to_bits())
            })
        })
        .map(|p| p.name.clone())
        .collect()
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FinetuneSummary {
    pub init: String,
    pub best_epoch: usize,
    pub best_metric: f64,
    pub stopped_early: bool,
    pub epochs_run: usize,
    pub checkpoint: PathBuf,
    pub transfer_checkpoint: Option<PathBuf>,
    pub copied_layers: usize,
    pub val_accuracy: f64,
    pub val_auc: Option<f64>,
}

pub struct Finetuned {
    pub summary: FinetuneSummary,
    pub outcome: TrainOutcome,
    pub model: DownstreamModel<F>,
    pub predictions: PredictionSet,
}

/// Downstream fine-tuning into `out` from a pretext checkpoint or random
/// weights.
pub fn finetune(cfg: &RunConfig, splits: &Splits, init: &Init, out: &Path, log: &mut Logger) -> Result<Finetuned, CliError> {
    std::fs::create_dir_all(out).map_err(|e| CliError::runtime(format!("{}: {e}", out.display())))?;
    let mut model = DownstreamModel::<F>::build_init(&cfg.model.downstream, cfg.model.downstream_seed)?;
    let mut transfer: Option<TransferReport> = None;
    let mut transfer_checkpoint = None;
    if let Init::Checkpoint(path) = init {
        let pretext = load_pretext(path)?;
        let report = transfer_weights(&pretext, &mut model)?;
        let bad = branch_mismatches(&pretext, &model);
        if !bad.is_empty() {
            return Err(CliError::runtime(format!("transfer read-back mismatch: {}", bad.join(", "))));
        }
        let meta = CheckpointMeta {
            kind: ModelKind::Downstream,
            config: serde_json::to_value(&model.config).expect("serializable"),
            seed: cfg.model.downstream_seed,
            epoch: 0,
            metrics: Default::default(),
            git_rev: git_rev(),
        };
        let tpath = out.join("transfer.ckpt");
        save_checkpoint(&tpath, &model.store, &meta)?;
        write_json(&out.join("transfer.json"), &report)?;
        log.info(
            "transfer",
            json!({"source": path, "copied_layers": report.copied_layers.len(), "initialized_layers": report.initialized_layers.len(), "read_back": "bitwise-equal"}),
        );
        transfer = Some(report);
        transfer_checkpoint = Some(tpath);
    }
    let outcome = {
        let mut cb = epoch_logger(log, "downstream");
        let hooks = TrainHooks {
            out_dir: Some(out.to_path_buf()),
            git_rev: git_rev(),
            on_epoch: Some(&mut cb),
        };
        train_downstream(&mut model, &splits.train, &splits.valid, &cfg.train.downstream, hooks)?
    };
    let (predictions, _) = predict_downstream(&model, &splits.valid, &cfg.train.downstream)?;
    write_json(&out.join("predictions.json"), &predictions)?;
    let summary = FinetuneSummary {
        init: match init {
            Init::Random => "random".into(),
            Init::Checkpoint(p) => p.display().to_string(),
        },
        best_epoch: outcome.best_epoch,
        best_metric: outcome.best_metric,
        stopped_early: outcome.stopped_early,
        epochs_run: outcome.history.records.len(),
        checkpoint: outcome.best_checkpoint.clone().unwrap_or_else(|| out.join("best.ckpt")),
        transfer_checkpoint,
        copied_layers: transfer.as_ref().map_or(0, |t| t.copied_layers.len()),
        val_accuracy: eval::accuracy(&predictions, cfg.train.downstream.threshold)?,
        val_auc: eval::auc(&predictions).ok(),
    };
    write_json(&out.join("outcome.json"), &summary)?;
    log.info("finetune_done", serde_json::to_value(&summary).expect("serializable"));
    Ok(Finetuned {
        summary,
        outcome,
        model,
        predictions,
    })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvalReport {
    pub checkpoint: PathBuf,
    pub split: Split,
    pub n_examples: usize,
    pub accuracy: MetricsReport,
    pub auc: MetricsReport,
    pub predictions: PredictionSet,
}

pub fn evaluate_checkpoint(
    cfg: &RunConfig,
    checkpoint: &Path,
    split: Split,
    mode: ExecMode,
    log: &mut Logger,
) -> Result<EvalReport, CliError> {
    let model = load_downstream(checkpoint)?;
    let (_, clips) = load_store(cfg.store()?, Some(split))?;
    let (predictions, loss) = predict_downstream(&model, &clips, &cfg.train.downstream)?;
    let row = eval::evaluate(split.as_str(), &predictions, &cfg.eval, mode)?;
    log.info(
        "evaluated",
        json!({"split": split.as_str(), "n": predictions.len(), "loss": loss, "accuracy": row.accuracy.point, "auc": row.auc.point}),
    );
    Ok(EvalReport {
        checkpoint: checkpoint.to_path_buf(),
        split,
        n_examples: predictions.len(),
        accuracy: row.accuracy,
        auc: row.auc,
        predictions,
    })
}

fn find_clip(cfg: &RunConfig, id: &str) -> Result<ClipRecord, CliError> {
    let (_, clips) = load_store(cfg.store()?, None)?;
    clips
        .into_iter()
        .find(|c| c.clip_id == id)
        .ok_or_else(|| CliError::runtime(format!("clip `{id}` not found in the store")))
}

pub struct ExplainRequest<'a> {
    pub checkpoint: &'a Path,
    pub clip: &'a str,
    pub frame: Option<usize>,
    /// Pretext target class (default: predicted).
    pub class: Option<usize>,
    /// Pretext arrangement class of the explained sample.
    pub arrangement: usize,
    pub perms: Option<&'a Path>,
    pub out: &'a Path,
}

/// Writes heatmaps and a JSON report; returns the report path.
pub fn explain(cfg: &RunConfig, req: &ExplainRequest<'_>, log: &mut Logger) -> Result<PathBuf, CliError> {
    let ck = load_checkpoint(req.checkpoint)?;
    let clip = find_clip(cfg, req.clip)?;
    match ck.meta.kind {
        ModelKind::Downstream => {
            let model = load_downstream(req.checkpoint)?;
            let mut cam = explain_downstream(&model, &clip, &cfg.explain.downstream)?;
            if let Some(k) = req.frame {
                let Some(pos) = cam.frame_indices.iter().position(|&f| f == k) else {
                    return Err(CliError::runtime(format!(
                        "frame {k} is not among the {} frames the classifier sees",
                        cam.frame_indices.len()
                    )));
                };
                cam.frame_indices = vec![k];
                cam.frames = vec![cam.frames.swap_remove(pos)];
            }
            let path = write_downstream_cam(&cam, &clip, req.out, cfg.explain.alpha)?;
            log.info(
                "explained",
                json!({"kind": "downstream", "clip": req.clip, "layer": cam.layer, "probability": cam.probability, "report": path}),
            );
            Ok(path)
        }
        ModelKind::Pretext => {
            let model = load_pretext(req.checkpoint)?;
            let perms = match req.perms {
                Some(p) => p.to_path_buf(),
                None => req
                    .checkpoint
                    .parent()
                    .unwrap_or(Path::new("."))
                    .join("permset.json"),
            };
            let pset = PermutationSet::load(&perms)?;
            let k = req.frame.unwrap_or(0);
            let pixels = clip
                .frames
                .get(k)
                .ok_or_else(|| CliError::runtime(format!("clip has no frame {k}")))?
                .clone();
            let geo = PatchGeometry::new(pixels.height, model.config.patch_size)?;
            let sample = make_eval_sample(&Frame::new(pixels, clip.clip_id.clone(), k), &pset, &geo, req.arrangement)?;
            let cam = explain_pretext(&model, &sample, req.class)?;
            let path = write_pretext_cam(&cam, &sample, req.out, cfg.explain.alpha)?;
            let border_pass = cam.border.iter().filter(|b| b.pass).count();
            log.info(
                "explained",
                json!({"kind": "pretext", "clip": req.clip, "frame": k, "target": cam.target, "border_pass": border_pass, "report": path}),
            );
            Ok(path)
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AblationReport {
    pub rows: Vec<ComparisonRow>,
    pub table: String,
}

/// Runs pretraining with oversampling off and on, fine-tunes each, and
/// reports validation accuracy and AUC with bootstrap intervals.
pub fn ablation(cfg: &RunConfig, splits: &Splits, out: &Path, mode: ExecMode, log: &mut Logger) -> Result<AblationReport, CliError> {
    let mut rows = Vec::new();
    for on in [true, false] {
        let arm = if on { "with oversampling" } else { "without oversampling" };
        let tag = if on { "on" } else { "off" };
        let mut arm_cfg = cfg.clone();
        arm_cfg.train.pretext.oversample_pretext = on;
        log.info("ablation_arm", json!({"arm": arm}));
        let pre = pretrain(&arm_cfg, splits, &out.join(format!("pretext-{tag}")), log)?;
        let fine = finetune(
            &arm_cfg,
            splits,
            &Init::Checkpoint(pre.checkpoint),
            &out.join(format!("finetune-{tag}")),
            log,
        )?;
        rows.push(eval::evaluate(arm, &fine.predictions, &cfg.eval, mode)?);
    }
    let table = eval::render_comparison(&rows);
    let report = AblationReport { rows, table };
    write_json(&out.join("ablation.json"), &report)?;
    std::fs::write(out.join("ablation.txt"), &report.table).map_err(|e| CliError::runtime(e.to_string()))?;
    log.info("ablation_done", json!({"table": report.table}));
    Ok(report)
}
