//! Binary classification metrics and percentile-bootstrap intervals.

use std::fmt::Write as _;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::par::{self, ExecMode};
use crate::seed;

/// Interval method recorded in every report.
pub const CI_METHOD: &str =
    "nonparametric percentile bootstrap over validation examples (inverted empirical CDF)";

/// Redraw budget per resample before giving up.
const MAX_ATTEMPTS_PER_RESAMPLE: usize = 1000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub id: String,
    pub label: u8,
    pub score: f64,
}

/// Scored examples with unique ids, binary labels and finite scores.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionSet {
    items: Vec<Prediction>,
}

impl PredictionSet {
    pub fn new(items: Vec<Prediction>) -> Result<Self> {
        let mut ids: Vec<&str> = items.iter().map(|p| p.id.as_str()).collect();
        ids.sort_unstable();
        if let Some(w) = ids.windows(2).find(|w| w[0] == w[1]) {
            return Err(Error::invalid(format!("duplicate prediction id `{}`", w[0])));
        }
        if let Some(p) = items.iter().find(|p| !p.score.is_finite()) {
            return Err(Error::invalid(format!("non-finite score for `{}`", p.id)));
        }
        if let Some(p) = items.iter().find(|p| p.label > 1) {
            return Err(Error::invalid(format!("non-binary label for `{}`", p.id)));
        }
        Ok(Self { items })
    }

    /// Builds a set with ids `0..n`.
    pub fn from_pairs(labels: &[u8], scores: &[f64]) -> Result<Self> {
        if labels.len() != scores.len() {
            return Err(Error::invalid("labels and scores differ in length"));
        }
        Self::new(
            labels
                .iter()
                .zip(scores)
                .enumerate()
                .map(|(i, (&label, &score))| Prediction {
                    id: i.to_string(),
                    label,
                    score,
                })
                .collect(),
        )
    }

    pub fn items(&self) -> &[Prediction] {
        &self.items
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }
}

/// Fraction of examples with `(score >= threshold) == label`.
pub fn accuracy(preds: &PredictionSet, threshold: f64) -> Result<f64> {
    accuracy_of(&preds.items, threshold)
}

fn accuracy_of(items: &[Prediction], threshold: f64) -> Result<f64> {
    if items.is_empty() {
        return Err(Error::UndefinedMetric("accuracy of an empty set".into()));
    }
    let hits = items
        .iter()
        .filter(|p| (p.score >= threshold) == (p.label == 1))
        .count();
    Ok(hits as f64 / items.len() as f64)
}

/// Rank-based AUC (Mann-Whitney U with midranks for ties).
pub fn auc(preds: &PredictionSet) -> Result<f64> {
    auc_of(&preds.items)
}

fn auc_of(items: &[Prediction]) -> Result<f64> {
    let n_pos = items.iter().filter(|p| p.label == 1).count();
    let n_neg = items.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::UndefinedMetric(
            "AUC needs at least one positive and one negative example".into(),
        ));
    }
    let mut order: Vec<usize> = (0..items.len()).collect();
    order.sort_by(|&a, &b| items[a].score.total_cmp(&items[b].score));
    // Ranks are 1-based; doubled so tied midranks stay integral.
    let mut pos_rank_sum2: u64 = 0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && items[order[j + 1]].score == items[order[i]].score {
            j += 1;
        }
        let midrank2 = (i + 1 + j + 1) as u64;
        let pos_in_tie = order[i..=j].iter().filter(|&&k| items[k].label == 1).count() as u64;
        pos_rank_sum2 += midrank2 * pos_in_tie;
        i = j + 1;
    }
    let np = n_pos as u64;
    let u2 = pos_rank_sum2 - np * (np + 1);
    Ok(u2 as f64 / 2.0 / (n_pos * n_neg) as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Metric {
    Accuracy,
    Auc,
}

impl Metric {
    pub fn name(self) -> &'static str {
        match self {
            Metric::Accuracy => "accuracy",
            Metric::Auc => "auc",
        }
    }

    fn eval(self, items: &[Prediction], threshold: f64) -> Result<f64> {
        match self {
            Metric::Accuracy => accuracy_of(items, threshold),
            Metric::Auc => auc_of(items),
        }
    }
}

impl std::str::FromStr for Metric {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "accuracy" => Ok(Metric::Accuracy),
            "auc" => Ok(Metric::Auc),
            other => Err(Error::invalid(format!("unknown metric `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BootstrapConfig {
    pub n: usize,
    pub level: f64,
    pub seed: u64,
    pub threshold: f64,
}

impl Default for BootstrapConfig {
    fn default() -> Self {
        Self {
            n: 1000,
            level: 0.90,
            seed: 0,
            threshold: 0.5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub metric: String,
    pub point: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub ci_level: f64,
    pub n_bootstrap: usize,
    pub seed: u64,
    pub n_examples: usize,
    /// Resamples redrawn because they held a single class.
    pub degenerate_redraws: usize,
    /// Set when a percentile endpoint was widened to include the point.
    pub widened_to_point: bool,
    pub method: String,
}

/// Inverted-CDF percentile of sorted values, `q` in `[0, 1]`.
pub fn percentile_sorted(sorted: &[f64], q: f64) -> f64 {
    let n = sorted.len();
    let k = ((q * n as f64).ceil() as usize).clamp(1, n);
    sorted[k - 1]
}

fn degenerate_error(share: f64) -> Error {
    Error::UndefinedMetric(format!(
        "{:.0}% of bootstrap resamples held a single class; use a larger evaluation set",
        100.0 * share
    ))
}

/// Fails when more than half of all drawn resamples were degenerate.
fn degenerate_guard(accepted: usize, redraws: usize) -> Result<()> {
    let share = redraws as f64 / (accepted + redraws) as f64;
    if share > 0.5 {
        return Err(degenerate_error(share));
    }
    Ok(())
}

/// Percentile bootstrap interval. Each resample owns a derived RNG stream,
/// so results do not depend on the execution mode.
pub fn bootstrap_ci(
    preds: &PredictionSet,
    metric: Metric,
    cfg: &BootstrapConfig,
    mode: ExecMode,
) -> Result<MetricsReport> {
    if preds.is_empty() {
        return Err(Error::invalid("bootstrap needs at least one example"));
    }
    if cfg.n == 0 || !(cfg.level > 0.0 && cfg.level < 1.0) {
        return Err(Error::invalid("bootstrap needs n >= 1 and level in (0, 1)"));
    }
    let point = metric.eval(&preds.items, cfg.threshold)?;
    let items = &preds.items;
    let base = seed::derive_seed(cfg.seed, "eval.bootstrap");
    let draws = par::map_range(mode, cfg.n, |i| {
        let mut rng = seed::rng(seed::item_seed(base, 0, i));
        let mut sample = Vec::with_capacity(items.len());
        for attempt in 0..MAX_ATTEMPTS_PER_RESAMPLE {
            sample.clear();
            sample.extend((0..items.len()).map(|_| items[rng.random_range(0..items.len())].clone()));
            match metric.eval(&sample, cfg.threshold) {
                Ok(v) => return Some((v, attempt)),
                Err(_) => continue,
            }
        }
        None
    });
    let mut values = Vec::with_capacity(cfg.n);
    let mut redraws = 0;
    for d in draws {
        match d {
            Some((v, r)) => {
                values.push(v);
                redraws += r;
            }
            None => {
                redraws += MAX_ATTEMPTS_PER_RESAMPLE;
            }
        }
    }
    if values.len() < cfg.n {
        return Err(degenerate_error(1.0));
    }
    degenerate_guard(cfg.n, redraws)?;
    values.sort_by(f64::total_cmp);
    let alpha = (1.0 - cfg.level) / 2.0;
    let lo = percentile_sorted(&values, alpha);
    let hi = percentile_sorted(&values, 1.0 - alpha);
    let widened = point < lo || point > hi;
    Ok(MetricsReport {
        metric: metric.name().into(),
        point,
        ci_low: lo.min(point),
        ci_high: hi.max(point),
        ci_level: cfg.level,
        n_bootstrap: cfg.n,
        seed: cfg.seed,
        n_examples: preds.len(),
        degenerate_redraws: redraws,
        widened_to_point: widened,
        method: CI_METHOD.into(),
    })
}

/// One arm of a comparison table: accuracy and AUC with intervals.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub arm: String,
    pub accuracy: MetricsReport,
    pub auc: MetricsReport,
}

/// Accuracy and AUC reports for one prediction set.
pub fn evaluate(
    arm: impl Into<String>,
    preds: &PredictionSet,
    cfg: &BootstrapConfig,
    mode: ExecMode,
) -> Result<ComparisonRow> {
    Ok(ComparisonRow {
        arm: arm.into(),
        accuracy: bootstrap_ci(preds, Metric::Accuracy, cfg, mode)?,
        auc: bootstrap_ci(preds, Metric::Auc, cfg, mode)?,
    })
}

/// Plain-text table with accuracy (percent) and AUC, each with its interval.
pub fn render_comparison(rows: &[ComparisonRow]) -> String {
    let level = rows.first().map_or(0.90, |r| r.accuracy.ci_level);
    let lo = 100.0 * (1.0 - level) / 2.0;
    let hi = 100.0 - lo;
    let mut out = format!(
        "{:<24} {:>28} {:>26}\n",
        "Arm",
        format!("Accuracy ({lo:.0}%-{hi:.0}% CI)"),
        format!("AUC ({lo:.0}%-{hi:.0}% CI)")
    );
    for r in rows {
        let acc = format!(
            "{:.2} ({:.2}, {:.2})",
            100.0 * r.accuracy.point,
            100.0 * r.accuracy.ci_low,
            100.0 * r.accuracy.ci_high
        );
        let auc = format!("{:.3} ({:.3}, {:.3})", r.auc.point, r.auc.ci_low, r.auc.ci_high);
        let _ = writeln!(out, "{:<24} {:>28} {:>26}", r.arm, acc, auc);
    }
    out
}
