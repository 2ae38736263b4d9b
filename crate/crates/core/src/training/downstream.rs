use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::{
    check_common, lr_at, make_optimizer, meta, oversample, sample_frames, DivideRule, EarlyStop,
    EarlyStopConfig, EpochRecord, FrameAugmentation, History, TrainHooks, TrainOutcome,
};
use crate::data::ClipRecord;
use crate::error::{Error, Result};
use crate::eval::{self, Prediction, PredictionSet};
use crate::imaging::Gray;
use crate::models::{DownstreamModel, ModelKind};
use crate::nn::{self, Grads, OptimizerKind, Scalar, Tensor};
use crate::par;
use crate::seed;

/// Validation metric that drives early stopping and best-checkpoint choice.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Monitor {
    #[default]
    Accuracy,
    Auc,
    /// Validation loss, lower is better.
    Loss,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DownstreamTrainConfig {
    pub optimizer: OptimizerKind,
    pub lr: f64,
    pub lr_decay: f64,
    /// Clips per optimizer step; gradients are averaged over the batch.
    pub batch_size: usize,
    pub max_epochs: usize,
    pub early_stop: EarlyStopConfig,
    /// Maximum frames used per clip and pass.
    pub frame_cap: usize,
    /// Balance the training classes by replicating minority clips.
    pub oversample: bool,
    pub augmentation: FrameAugmentation,
    pub divide_rule: DivideRule,
    pub monitor: Monitor,
    /// Decision threshold for accuracy.
    pub threshold: f64,
    pub seed: u64,
}

impl Default for DownstreamTrainConfig {
    fn default() -> Self {
        Self {
            optimizer: OptimizerKind::Adam,
            lr: 1e-5,
            lr_decay: 1.0,
            batch_size: 1,
            max_epochs: 30,
            early_stop: EarlyStopConfig::default(),
            frame_cap: 36,
            oversample: true,
            augmentation: FrameAugmentation::default(),
            divide_rule: DivideRule::Remaining,
            monitor: Monitor::Accuracy,
            threshold: 0.5,
            seed: 0,
        }
    }
}

impl DownstreamTrainConfig {
    pub fn validate(&self) -> Result<()> {
        check_common(self.lr, self.lr_decay, self.batch_size, self.max_epochs)?;
        if self.frame_cap == 0 {
            return Err(Error::invalid("frame_cap must be positive"));
        }
        if !(0.0..=1.0).contains(&self.threshold) {
            return Err(Error::invalid("threshold must be in [0, 1]"));
        }
        self.augmentation.validate()
    }
}

/// Frames used for one pass over a clip.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FramePlan {
    /// Sampled clip frame indices in temporal order.
    pub sampled: Vec<usize>,
    /// Per branch, positions into `sampled`.
    pub groups: Vec<Vec<usize>>,
}

impl FramePlan {
    pub fn new(n_frames: usize, frame_cap: usize, n_branches: usize, rule: DivideRule, rng: &mut seed::Rng) -> Result<Self> {
        let sampled = sample_frames(n_frames, frame_cap, rng)?;
        let groups = super::divide_indices(sampled.len(), n_branches, rule)?;
        Ok(Self { sampled, groups })
    }

    /// Clip frame index of every discriminator batch item, in batch order.
    pub fn batch_frames(&self) -> Vec<usize> {
        self.groups.iter().flatten().map(|&p| self.sampled[p]).collect()
    }
}

/// Samples, optionally augments and groups the frames of one clip.
pub(crate) fn prepare_clip<T: Scalar>(
    model: &DownstreamModel<T>,
    clip: &ClipRecord,
    frame_cap: usize,
    rule: DivideRule,
    augmentation: Option<&FrameAugmentation>,
    item_seed: u64,
) -> Result<Vec<Tensor<T>>> {
    let mut rng = seed::rng(item_seed);
    let plan = FramePlan::new(clip.n_frames(), frame_cap, model.config.n_branches, rule, &mut rng)?;
    let frames: Vec<Gray> = plan
        .sampled
        .iter()
        .map(|&i| match augmentation {
            Some(a) => a.apply(&clip.frames[i], &mut rng),
            None => clip.frames[i].clone(),
        })
        .collect();
    let groups: Vec<Vec<&Gray>> = plan
        .groups
        .iter()
        .map(|g| g.iter().map(|&i| &frames[i]).collect())
        .collect();
    model.group_tensors(&groups)
}

/// Deterministic predictions (no augmentation, fixed frame sampling) and
/// the mean binary cross-entropy.
pub fn predict_downstream<T: Scalar>(
    model: &DownstreamModel<T>,
    clips: &[ClipRecord],
    cfg: &DownstreamTrainConfig,
) -> Result<(PredictionSet, f64)> {
    if clips.is_empty() {
        return Err(Error::invalid("prediction needs at least one clip"));
    }
    let base = seed::derive_seed(cfg.seed, "training.downstream.predict");
    let scored = par::map_range(par::global_mode(), clips.len(), |i| {
        let groups = prepare_clip(model, &clips[i], cfg.frame_cap, cfg.divide_rule, None, seed::item_seed(base, 0, i))?;
        let logit = model.forward(&groups).logit();
        Ok((logit, nn::bce_with_logits(logit, clips[i].label as f64).0))
    })
    .into_iter()
    .collect::<Result<Vec<(f64, f64)>>>()?;
    let loss = scored.iter().map(|s| s.1).sum::<f64>() / clips.len() as f64;
    let preds = PredictionSet::new(
        clips
            .iter()
            .zip(&scored)
            .map(|(c, s)| Prediction {
                id: c.clip_id.clone(),
                label: c.label,
                score: nn::sigmoid(s.0),
            })
            .collect(),
    )?;
    Ok((preds, loss))
}

/// Downstream training: every (possibly oversampled) clip once per epoch in
/// shuffled order, per-clip augmentation, Adam by default.
pub fn train_downstream<T: Scalar + 'static>(
    model: &mut DownstreamModel<T>,
    train: &[ClipRecord],
    val: &[ClipRecord],
    cfg: &DownstreamTrainConfig,
    mut hooks: TrainHooks<'_>,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if train.is_empty() || val.is_empty() {
        return Err(Error::invalid("downstream training needs training and validation clips"));
    }
    let labels: Vec<u8> = train.iter().map(|c| c.label).collect();
    let base_order: Vec<usize> = if cfg.oversample {
        oversample(&labels, None, &mut seed::rng_for(cfg.seed, "training.downstream.oversample"))?.indices
    } else {
        (0..train.len()).collect()
    };
    let config_json = serde_json::to_value(&model.config).expect("config serializes");
    let mut opt = make_optimizer(cfg.optimizer, &model.store);
    let mut stopper = EarlyStop::new(cfg.early_stop);
    let mut history = History::default();
    let mut best_store = model.store.clone();
    let mut best_checkpoint = None;
    let item_base = seed::derive_seed(cfg.seed, "training.downstream.items");
    let order_base = seed::derive_seed(cfg.seed, "training.downstream.order");
    let augmentation = cfg.augmentation.enabled.then_some(&cfg.augmentation);
    let mut stopped_early = false;

    for epoch in 0..cfg.max_epochs {
        let lr = lr_at(cfg.lr, cfg.lr_decay, epoch);
        let mut order = base_order.clone();
        order.shuffle(&mut seed::rng(seed::item_seed(order_base, epoch, 0)));
        let mut loss_sum = 0.0;
        for (b, batch) in order.chunks(cfg.batch_size).enumerate() {
            let offset = b * cfg.batch_size;
            let model_ref = &*model;
            let per_clip = par::map_range(par::global_mode(), batch.len(), |j| {
                let clip = &train[batch[j]];
                let groups = prepare_clip(
                    model_ref,
                    clip,
                    cfg.frame_cap,
                    cfg.divide_rule,
                    augmentation,
                    seed::item_seed(item_base, epoch, offset + j),
                )?;
                let (loss, _, grads) = model_ref.loss_and_grads(&groups, clip.label as f64);
                Ok((loss, grads))
            })
            .into_iter()
            .collect::<Result<Vec<(f64, Grads<T>)>>>()?;
            let mut grads = Grads::zeros_like(&model.store);
            let mut batch_loss = 0.0;
            for (l, g) in &per_clip {
                grads.add(g);
                batch_loss += l;
            }
            grads.scale(T::of(1.0 / batch.len() as f64));
            if !batch_loss.is_finite() || !grads.is_finite() {
                let m = meta(ModelKind::Downstream, config_json.clone(), cfg.seed, epoch, None, &hooks.git_rev);
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
            loss_sum += batch_loss;
        }
        let (preds, val_loss) = predict_downstream(model, val, cfg)?;
        let val_acc = eval::accuracy(&preds, cfg.threshold)?;
        let val_auc = eval::auc(&preds).ok();
        let rec = EpochRecord {
            epoch,
            lr,
            train_loss: loss_sum / order.len() as f64,
            val_loss,
            val_acc,
            val_auc,
        };
        history.records.push(rec.clone());
        let monitored = match cfg.monitor {
            Monitor::Accuracy => val_acc,
            Monitor::Auc => val_auc
                .ok_or_else(|| Error::invalid("validation AUC is undefined: the split has a single class"))?,
            Monitor::Loss => -val_loss,
        };
        let decision = stopper.update(epoch, monitored);
        if decision.improved {
            best_store = model.store.clone();
            let m = meta(ModelKind::Downstream, config_json.clone(), cfg.seed, epoch, Some(&rec), &hooks.git_rev);
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
        best_metric: stopper
            .best
            .map_or(f64::NAN, |b| if cfg.monitor == Monitor::Loss { -b } else { b }),
        stopped_early,
        best_checkpoint,
    })
}
