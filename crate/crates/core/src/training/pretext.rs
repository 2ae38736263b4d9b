use serde::{Deserialize, Serialize};

use super::{check_common, lr_at, make_optimizer, meta, oversample, EarlyStop, EarlyStopConfig, EpochRecord, History, TrainHooks, TrainOutcome};
use crate::data::{pretext_frame_stream, ClipRecord};
use crate::error::{Error, Result};
use crate::models::{ModelKind, PretextModel};
use crate::nn::{self, OptimizerKind, Scalar};
use crate::par;
use crate::patchgen::{make_eval_sample, make_jumbled_sample_seeded, Frame, JumbledSample, PatchGeometry};
use crate::permset::PermutationSet;
use crate::seed;

/// Which arrangements the validation stream covers.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PretextValidation {
    /// Every class of the permutation set, without augmentation.
    #[default]
    AllArrangements,
    /// Only the ordered (identity) arrangement.
    IdentityOnly,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PretextTrainConfig {
    pub optimizer: OptimizerKind,
    pub lr: f64,
    /// Multiplicative learning-rate decay per epoch.
    pub lr_decay: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub early_stop: EarlyStopConfig,
    /// Train on the class-balanced (oversampled) clip list.
    pub oversample_pretext: bool,
    pub validation: PretextValidation,
    pub geometry: PatchGeometry,
    pub seed: u64,
}

impl Default for PretextTrainConfig {
    fn default() -> Self {
        Self {
            optimizer: OptimizerKind::Rmsprop,
            lr: 1e-4,
            lr_decay: 0.95,
            batch_size: 32,
            max_epochs: 30,
            early_stop: EarlyStopConfig::default(),
            oversample_pretext: false,
            validation: PretextValidation::AllArrangements,
            geometry: PatchGeometry::default(),
            seed: 0,
        }
    }
}

impl PretextTrainConfig {
    pub fn validate(&self) -> Result<()> {
        check_common(self.lr, self.lr_decay, self.batch_size, self.max_epochs)?;
        self.geometry.validate()
    }
}

/// Deterministic validation samples: one seeded frame per clip, centre
/// crops, no augmentation.
pub fn pretext_validation_set(
    val: &[ClipRecord],
    pset: &PermutationSet,
    geometry: &PatchGeometry,
    mode: PretextValidation,
    seed_value: u64,
) -> Result<Vec<JumbledSample>> {
    let base = seed::derive_seed(seed_value, "training.pretext.val_frames");
    let classes: Vec<usize> = match mode {
        PretextValidation::AllArrangements => (0..pset.class_count()).collect(),
        PretextValidation::IdentityOnly => vec![0],
    };
    let mut out = Vec::with_capacity(val.len() * classes.len());
    for (j, clip) in val.iter().enumerate() {
        if clip.frames.is_empty() {
            return Err(Error::invalid(format!("clip {} has no frames", clip.clip_id)));
        }
        let k = (seed::item_seed(base, 0, j) % clip.frames.len() as u64) as usize;
        let frame = Frame::new(clip.frames[k].clone(), clip.clip_id.clone(), k);
        for &c in &classes {
            out.push(make_eval_sample(&frame, pset, geometry, c)?);
        }
    }
    Ok(out)
}

/// Mean cross-entropy and accuracy over `samples`.
pub fn evaluate_pretext<T: Scalar>(
    model: &PretextModel<T>,
    samples: &[JumbledSample],
    batch_size: usize,
) -> Result<(f64, f64)> {
    if samples.is_empty() {
        return Err(Error::invalid("pretext evaluation needs samples"));
    }
    let mut loss = 0.0;
    let mut hits = 0usize;
    for chunk in samples.chunks(batch_size.max(1)) {
        let refs: Vec<&JumbledSample> = chunk.iter().collect();
        let labels: Vec<usize> = chunk.iter().map(|s| s.label).collect();
        let trace = model.forward(&model.input_tensor(&refs));
        let (l, _, probs) = nn::softmax_cross_entropy(trace.logits(), &labels);
        loss += l * chunk.len() as f64;
        let c = probs.c();
        for (i, &y) in labels.iter().enumerate() {
            let row = &probs.data[i * c..(i + 1) * c];
            let arg = row
                .iter()
                .enumerate()
                .fold((0, row[0]), |best, (k, &v)| if v > best.1 { (k, v) } else { best })
                .0;
            hits += (arg == y) as usize;
        }
    }
    let n = samples.len() as f64;
    Ok((loss / n, hits as f64 / n))
}

/// Pretext training: one random frame per (possibly oversampled) training
/// clip per epoch, jumbled with a per-item seed, RMSprop by default.
pub fn train_pretext<T: Scalar + 'static>(
    model: &mut PretextModel<T>,
    pset: &PermutationSet,
    train: &[ClipRecord],
    val: &[ClipRecord],
    cfg: &PretextTrainConfig,
    mut hooks: TrainHooks<'_>,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    pset.validate()?;
    let geo = cfg.geometry;
    if model.config.patch_size != geo.patch_size {
        return Err(Error::invalid(format!(
            "model patch size {} differs from geometry patch size {}",
            model.config.patch_size, geo.patch_size
        )));
    }
    if model.config.class_count != pset.class_count() {
        return Err(Error::invalid(format!(
            "model has {} classes but the permutation set has {}",
            model.config.class_count,
            pset.class_count()
        )));
    }
    if train.is_empty() || val.is_empty() {
        return Err(Error::invalid("pretext training needs training and validation clips"));
    }
    let clips: Vec<&ClipRecord> = if cfg.oversample_pretext {
        let labels: Vec<u8> = train.iter().map(|c| c.label).collect();
        let mut rng = seed::rng_for(cfg.seed, "training.pretext.oversample");
        oversample(&labels, None, &mut rng)?
            .indices
            .into_iter()
            .map(|i| &train[i])
            .collect()
    } else {
        train.iter().collect()
    };
    let n_frames: Vec<usize> = clips.iter().map(|c| c.n_frames()).collect();
    let val_set = pretext_validation_set(val, pset, &geo, cfg.validation, cfg.seed)?;
    let config_json = serde_json::to_value(&model.config).expect("config serializes");
    let mut opt = make_optimizer(cfg.optimizer, &model.store);
    let mut stopper = EarlyStop::new(cfg.early_stop);
    let mut history = History::default();
    let mut best_store = model.store.clone();
    let mut best_checkpoint = None;
    let sample_base = seed::derive_seed(cfg.seed, "training.pretext.samples");
    let mut stopped_early = false;

    for epoch in 0..cfg.max_epochs {
        let lr = lr_at(cfg.lr, cfg.lr_decay, epoch);
        let mut stream_rng = seed::rng(seed::item_seed(
            seed::derive_seed(cfg.seed, "training.pretext.stream"),
            epoch,
            0,
        ));
        let stream = pretext_frame_stream(&n_frames, &mut stream_rng)?;
        let mut loss_sum = 0.0;
        for (b, batch) in stream.chunks(cfg.batch_size).enumerate() {
            let offset = b * cfg.batch_size;
            let samples = par::map_range(par::global_mode(), batch.len(), |j| {
                let (c, k) = batch[j];
                let frame = Frame::new(clips[c].frames[k].clone(), clips[c].clip_id.clone(), k);
                make_jumbled_sample_seeded(&frame, pset, &geo, seed::item_seed(sample_base, epoch, offset + j))
            })
            .into_iter()
            .collect::<Result<Vec<_>>>()?;
            let refs: Vec<&JumbledSample> = samples.iter().collect();
            let labels: Vec<usize> = samples.iter().map(|s| s.label).collect();
            let (loss, grads, _) = model.loss_and_grads(&model.input_tensor(&refs), &labels);
            if !loss.is_finite() || !grads.is_finite() {
                let m = meta(ModelKind::Pretext, config_json.clone(), cfg.seed, epoch, None, &hooks.git_rev);
                let path = hooks.save("diverged.ckpt", &model.store, &m)?;
                return Err(Error::Divergence {
                    epoch,
                    reason: format!(
                        "non-finite loss or gradient in batch {b}{}",
                        path.map_or(String::new(), |p| format!("; diagnostic checkpoint {}", p.display()))
                    ),
                });
            }
            opt.step(&mut model.store, &grads, lr);
            loss_sum += loss * batch.len() as f64;
        }
        let (val_loss, val_acc) = evaluate_pretext(model, &val_set, cfg.batch_size)?;
        let rec = EpochRecord {
            epoch,
            lr,
            train_loss: loss_sum / stream.len() as f64,
            val_loss,
            val_acc,
            val_auc: None,
        };
        history.records.push(rec.clone());
        let decision = stopper.update(epoch, val_acc);
        if decision.improved {
            best_store = model.store.clone();
            let m = meta(ModelKind::Pretext, config_json.clone(), cfg.seed, epoch, Some(&rec), &hooks.git_rev);
            best_checkpoint = hooks.save("best.ckpt", &model.store, &m)?.or(best_checkpoint);
        }
        hooks.epoch_done(&rec, &history)?;
        if decision.stop {
            stopped_early = epoch + 1 < cfg.max_epochs;
            break;
        }
    }
    model.store = best_store;
    Ok(TrainOutcome {
        history,
        best_epoch: stopper.best_epoch,
        best_metric: stopper.best.unwrap_or(f64::NAN),
        stopped_early,
        best_checkpoint,
    })
}
