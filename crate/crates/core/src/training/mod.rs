//! Pretext and downstream training loops with frame division, oversampling
//! and early stopping.

mod downstream;
mod frames;
mod pretext;

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::models::{save_checkpoint, CheckpointMeta, ModelKind};
use crate::nn::{Adam, Optimizer, OptimizerKind, ParamStore, RmsProp, Scalar};

pub use downstream::{predict_downstream, train_downstream, DownstreamTrainConfig, FramePlan, Monitor};
pub use frames::{
    divide_frames, divide_frames_with, divide_indices, oversample, sample_frames, DivideRule,
    FrameAugmentation, Oversampled,
};
pub use pretext::{evaluate_pretext, pretext_validation_set, train_pretext, PretextTrainConfig, PretextValidation};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EarlyStopConfig {
    pub patience: usize,
    /// Minimum absolute gain of the monitored metric that counts as progress.
    pub min_delta: f64,
}

impl Default for EarlyStopConfig {
    fn default() -> Self {
        Self {
            patience: 5,
            min_delta: 0.001,
        }
    }
}

/// Tracks the best validation metric (higher is better).
#[derive(Debug, Clone, PartialEq)]
pub struct EarlyStop {
    pub config: EarlyStopConfig,
    pub best: Option<f64>,
    pub best_epoch: usize,
    pub waited: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EarlyStopDecision {
    pub improved: bool,
    pub stop: bool,
}

impl EarlyStop {
    pub fn new(config: EarlyStopConfig) -> Self {
        Self {
            config,
            best: None,
            best_epoch: 0,
            waited: 0,
        }
    }

    pub fn update(&mut self, epoch: usize, metric: f64) -> EarlyStopDecision {
        let improved = match self.best {
            None => true,
            Some(b) => metric > b + self.config.min_delta,
        };
        if improved {
            self.best = Some(metric);
            self.best_epoch = epoch;
            self.waited = 0;
        } else {
            self.waited += 1;
        }
        EarlyStopDecision {
            improved,
            stop: self.waited >= self.config.patience,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub lr: f64,
    pub train_loss: f64,
    pub val_loss: f64,
    pub val_acc: f64,
    #[serde(default)]
    pub val_auc: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct History {
    pub records: Vec<EpochRecord>,
}

impl History {
    /// CSV with columns `epoch,lr,train_loss,val_loss,val_acc[,val_auc]`.
    pub fn to_csv(&self) -> String {
        let with_auc = self.records.iter().any(|r| r.val_auc.is_some());
        let mut w = csv::Writer::from_writer(Vec::new());
        let mut header = vec!["epoch", "lr", "train_loss", "val_loss", "val_acc"];
        if with_auc {
            header.push("val_auc");
        }
        w.write_record(&header).expect("in-memory write");
        for r in &self.records {
            let mut row = vec![
                r.epoch.to_string(),
                format!("{:e}", r.lr),
                format!("{:.6}", r.train_loss),
                format!("{:.6}", r.val_loss),
                format!("{:.6}", r.val_acc),
            ];
            if with_auc {
                row.push(r.val_auc.map_or(String::new(), |a| format!("{a:.6}")));
            }
            w.write_record(&row).expect("in-memory write");
        }
        String::from_utf8(w.into_inner().expect("in-memory flush")).expect("ascii")
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_csv()).map_err(|e| Error::io(path, e))
    }
}

/// Where a training loop reports progress and writes artifacts.
#[derive(Default)]
pub struct TrainHooks<'a> {
    /// Directory for `history.csv`, `best.ckpt` and diagnostic checkpoints.
    pub out_dir: Option<PathBuf>,
    pub git_rev: Option<String>,
    pub on_epoch: Option<&'a mut dyn FnMut(&EpochRecord)>,
}

impl TrainHooks<'_> {
    fn epoch_done(&mut self, rec: &EpochRecord, history: &History) -> Result<()> {
        if let Some(f) = self.on_epoch.as_mut() {
            f(rec);
        }
        if let Some(dir) = &self.out_dir {
            fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
            history.write_csv(&dir.join("history.csv"))?;
        }
        Ok(())
    }

    fn save<T: Scalar>(&self, file: &str, store: &ParamStore<T>, meta: &CheckpointMeta) -> Result<Option<PathBuf>> {
        let Some(dir) = &self.out_dir else {
            return Ok(None);
        };
        let path = dir.join(file);
        save_checkpoint(&path, store, meta)?;
        Ok(Some(path))
    }
}

/// Outcome of a completed training run. The model holds the best weights.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutcome {
    pub history: History,
    pub best_epoch: usize,
    pub best_metric: f64,
    pub stopped_early: bool,
    pub best_checkpoint: Option<PathBuf>,
}

pub(crate) fn make_optimizer<T: Scalar + 'static>(
    kind: OptimizerKind,
    store: &ParamStore<T>,
) -> Box<dyn Optimizer<T>> {
    match kind {
        OptimizerKind::Rmsprop => Box::new(RmsProp::new(store)),
        OptimizerKind::Adam => Box::new(Adam::new(store)),
    }
}

pub(crate) fn meta(kind: ModelKind, config: serde_json::Value, seed: u64, epoch: usize, rec: Option<&EpochRecord>, git_rev: &Option<String>) -> CheckpointMeta {
    let mut metrics = std::collections::BTreeMap::new();
    if let Some(r) = rec {
        metrics.insert("train_loss".into(), r.train_loss);
        metrics.insert("val_loss".into(), r.val_loss);
        metrics.insert("val_acc".into(), r.val_acc);
        if let Some(a) = r.val_auc {
            metrics.insert("val_auc".into(), a);
        }
    }
    CheckpointMeta {
        kind,
        config,
        seed,
        epoch,
        metrics,
        git_rev: git_rev.clone(),
    }
}

/// Learning rate at `epoch` (0-based) under per-epoch exponential decay.
pub fn lr_at(lr: f64, decay: f64, epoch: usize) -> f64 {
    lr * decay.powi(epoch as i32)
}

fn check_common(lr: f64, decay: f64, batch: usize, epochs: usize) -> Result<()> {
    if !(lr > 0.0 && lr.is_finite()) {
        return Err(Error::invalid("lr must be positive"));
    }
    if !(decay > 0.0 && decay <= 1.0) {
        return Err(Error::invalid("lr_decay must be in (0, 1]"));
    }
    if batch == 0 {
        return Err(Error::invalid("batch_size must be at least 1"));
    }
    if epochs == 0 {
        return Err(Error::invalid("max_epochs must be at least 1"));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn early_stop_respects_patience() {
        let mut es = EarlyStop::new(EarlyStopConfig {
            patience: 2,
            min_delta: 0.01,
        });
        assert!(es.update(0, 0.5).improved);
        assert!(!es.update(1, 0.505).improved);
        let d = es.update(2, 0.6);
        assert!(d.improved && !d.stop);
        assert!(!es.update(3, 0.6).stop);
        assert!(es.update(4, 0.59).stop);
        assert_eq!(es.best_epoch, 2);
    }

    #[test]
    fn lr_schedule() {
        assert_eq!(lr_at(1e-4, 0.95, 0), 1e-4);
        assert!((lr_at(1e-4, 0.95, 3) - 1e-4 * 0.95f64.powi(3)).abs() < 1e-18);
    }

    #[test]
    fn history_csv_columns() {
        let mut h = History::default();
        h.records.push(EpochRecord {
            epoch: 0,
            lr: 1e-4,
            train_loss: 1.0,
            val_loss: 2.0,
            val_acc: 0.5,
            val_auc: None,
        });
        assert!(h.to_csv().starts_with("epoch,lr,train_loss,val_loss,val_acc\n"));
        h.records[0].val_auc = Some(0.7);
        assert!(h.to_csv().starts_with("epoch,lr,train_loss,val_loss,val_acc,val_auc\n"));
    }
}
