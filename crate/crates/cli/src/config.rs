//! Run configuration: one JSON document with a block per module.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use jpop_core::eval::BootstrapConfig;
use jpop_core::explain::DownstreamCamConfig;
use jpop_core::models::{DownstreamModelConfig, PretextModelConfig};
use jpop_core::patchgen::PatchGeometry;
use jpop_core::seed::derive_seed;
use jpop_core::training::{DownstreamTrainConfig, PretextTrainConfig};

use crate::CliError;

/// Store path override.
pub const ENV_STORE: &str = "JPOP_STORE";
/// Run-root override.
pub const ENV_RUNS: &str = "JPOP_RUNS";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PermsetConfig {
    pub classes: usize,
    /// Members of the pool differ in more than this many positions.
    pub threshold: usize,
    /// Use an existing permutation-set file instead of generating one.
    pub file: Option<PathBuf>,
    /// Seed of the class draw; derived from the global seed.
    pub seed: u64,
}

impl Default for PermsetConfig {
    fn default() -> Self {
        Self {
            classes: 500,
            threshold: 4,
            file: None,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelBlock {
    pub pretext: PretextModelConfig,
    pub downstream: DownstreamModelConfig,
    /// Weight-initialization seeds; derived from the global seed.
    pub pretext_seed: u64,
    pub downstream_seed: u64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainBlock {
    pub pretext: PretextTrainConfig,
    pub downstream: DownstreamTrainConfig,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataBlock {
    /// Record store; overridden by `JPOP_STORE` and `--store`.
    pub store: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExplainBlock {
    pub downstream: DownstreamCamConfig,
    pub alpha: f32,
}

impl Default for ExplainBlock {
    fn default() -> Self {
        Self {
            downstream: DownstreamCamConfig::default(),
            alpha: 0.4,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Execution {
    #[default]
    Parallel,
    Sequential,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    /// Global seed; every module seed is derived from it.
    pub seed: u64,
    /// Root for run directories; overridden by `JPOP_RUNS` and `--runs`.
    pub runs_dir: PathBuf,
    pub execution: Execution,
    pub permset: PermsetConfig,
    pub patchgen: PatchGeometry,
    pub model: ModelBlock,
    pub train: TrainBlock,
    pub data: DataBlock,
    pub eval: BootstrapConfig,
    pub explain: ExplainBlock,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            runs_dir: PathBuf::from("runs"),
            execution: Execution::Parallel,
            permset: PermsetConfig::default(),
            patchgen: PatchGeometry::default(),
            model: ModelBlock::default(),
            train: TrainBlock::default(),
            data: DataBlock::default(),
            eval: BootstrapConfig::default(),
            explain: ExplainBlock::default(),
        }
    }
}

/// Path overrides from the command line.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub store: Option<PathBuf>,
    pub runs: Option<PathBuf>,
    pub seed: Option<u64>,
}

impl RunConfig {
    /// Reads `path` (or defaults), applies env and flag overrides, derives
    /// module seeds and validates.
    pub fn load(path: Option<&Path>, overrides: &Overrides) -> Result<Self, CliError> {
        let cfg = match path {
            None => RunConfig::default(),
            Some(p) => {
                let text = std::fs::read_to_string(p)
                    .map_err(|e| CliError::Config(vec![format!("{}: {e}", p.display())]))?;
                serde_json::from_str(&text)
                    .map_err(|e| CliError::Config(vec![format!("{}: {e}", p.display())]))?
            }
        };
        cfg.resolve(overrides)
    }

    pub fn resolve(mut self, overrides: &Overrides) -> Result<Self, CliError> {
        if let Some(s) = std::env::var_os(ENV_STORE) {
            self.data.store = Some(PathBuf::from(s));
        }
        if let Some(r) = std::env::var_os(ENV_RUNS) {
            self.runs_dir = PathBuf::from(r);
        }
        if let Some(s) = &overrides.store {
            self.data.store = Some(s.clone());
        }
        if let Some(r) = &overrides.runs {
            self.runs_dir = r.clone();
        }
        if let Some(s) = overrides.seed {
            self.seed = s;
        }
        let s = self.seed;
        self.permset.seed = derive_seed(s, "permset");
        self.model.pretext_seed = derive_seed(s, "models.pretext");
        self.model.downstream_seed = derive_seed(s, "models.downstream");
        self.train.pretext.seed = derive_seed(s, "training.pretext");
        self.train.downstream.seed = derive_seed(s, "training.downstream");
        self.eval.seed = derive_seed(s, "eval");
        self.explain.downstream.seed = derive_seed(s, "explain");
        self.validate()?;
        Ok(self)
    }

    /// Field-level checks; all problems are reported together.
    pub fn validate(&self) -> Result<(), CliError> {
        let mut errs = Vec::new();
        let mut check = |field: &str, r: jpop_core::error::Result<()>| {
            if let Err(e) = r {
                errs.push(format!("{field}: {e}"));
            }
        };
        check("patchgen", self.patchgen.validate());
        check("model.pretext", self.model.pretext.validate());
        check("model.downstream", self.model.downstream.validate());
        check("train.pretext", self.train.pretext.validate());
        check("train.downstream", self.train.downstream.validate());
        if self.permset.classes == 0 {
            errs.push("permset.classes: must be at least 1".into());
        }
        if self.permset.threshold == 0 || self.permset.threshold >= 9 {
            errs.push("permset.threshold: must be in 1..9".into());
        }
        if self.train.pretext.geometry != self.patchgen {
            errs.push("train.pretext.geometry: must equal the patchgen block".into());
        }
        if self.model.pretext.patch_size != self.patchgen.patch_size {
            errs.push(format!(
                "model.pretext.patch_size: {} differs from patchgen.patch_size {}",
                self.model.pretext.patch_size, self.patchgen.patch_size
            ));
        }
        if self.permset.file.is_none() && self.model.pretext.class_count != self.permset.classes {
            errs.push(format!(
                "model.pretext.class_count: {} differs from permset.classes {}",
                self.model.pretext.class_count, self.permset.classes
            ));
        }
        if self.model.downstream.frame_cap != self.train.downstream.frame_cap {
            errs.push("model.downstream.frame_cap: must equal train.downstream.frame_cap".into());
        }
        if self.model.downstream.frame_size != self.patchgen.frame_size {
            errs.push(format!(
                "model.downstream.frame_size: {} differs from patchgen.frame_size {}",
                self.model.downstream.frame_size, self.patchgen.frame_size
            ));
        }
        if !(0.0..=1.0).contains(&self.explain.alpha) {
            errs.push("explain.alpha: must be in [0, 1]".into());
        }
        if !(self.eval.level > 0.0 && self.eval.level < 1.0) || self.eval.n == 0 {
            errs.push("eval: level must be in (0, 1) and n at least 1".into());
        }
        if errs.is_empty() {
            Ok(())
        } else {
            Err(CliError::Config(errs))
        }
    }

    /// Checks needed before transferring pretext branches.
    pub fn validate_transfer(&self) -> Result<(), CliError> {
        let (p, d) = (&self.model.pretext, &self.model.downstream);
        if p.branch_filters != d.branch_filters || p.in_channels != d.in_channels || p.n_branches != d.n_branches {
            return Err(CliError::Config(vec![format!(
                "model.downstream.branch_filters: {:?} must equal model.pretext.branch_filters {:?} for transfer",
                d.branch_filters, p.branch_filters
            )]));
        }
        Ok(())
    }

    pub fn store(&self) -> Result<&Path, CliError> {
        self.data.store.as_deref().ok_or_else(|| {
            CliError::Config(vec![format!("data.store: not set (use --store, {ENV_STORE} or the config file)")])
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_are_valid_and_seeds_fan_out() {
        let c = RunConfig::default().resolve(&Overrides::default()).unwrap();
        assert_ne!(c.train.pretext.seed, c.train.downstream.seed);
        let d = RunConfig::default()
            .resolve(&Overrides {
                seed: Some(3),
                ..Default::default()
            })
            .unwrap();
        assert_ne!(c.train.pretext.seed, d.train.pretext.seed);
        assert_eq!(d.train.pretext.seed, derive_seed(3, "training.pretext"));
    }

    #[test]
    fn unknown_keys_and_inconsistent_blocks_are_rejected() {
        assert!(serde_json::from_str::<RunConfig>(r#"{"sed": 1}"#).is_err());
        assert!(serde_json::from_str::<RunConfig>(r#"{"train": {"pretext": {"lrr": 1}}}"#).is_err());
        let mut c = RunConfig::default();
        c.model.pretext.patch_size = 32;
        c.permset.classes = 7;
        let Err(CliError::Config(errs)) = c.resolve(&Overrides::default()) else {
            panic!("expected config error")
        };
        assert!(errs.iter().any(|e| e.starts_with("model.pretext.patch_size")));
        assert!(errs.iter().any(|e| e.starts_with("model.pretext.class_count")));
    }
}
