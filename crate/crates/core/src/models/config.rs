use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Pretext network hyperparameters. Defaults reproduce the full-size model.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PretextModelConfig {
    pub n_branches: usize,
    pub patch_size: usize,
    pub in_channels: usize,
    /// Filters of the two branch blocks (two convolutions + max pool each).
    pub branch_filters: [usize; 2],
    pub fusion_filters: usize,
    /// Filters of both post-fusion paths.
    pub head_filters: usize,
    pub fc_dims: Vec<usize>,
    pub class_count: usize,
}

impl Default for PretextModelConfig {
    fn default() -> Self {
        Self {
            n_branches: 9,
            patch_size: 64,
            in_channels: 1,
            branch_filters: [256, 512],
            fusion_filters: 2048,
            head_filters: 1024,
            fc_dims: vec![1024, 1024],
            class_count: 500,
        }
    }
}

impl PretextModelConfig {
    pub fn with_classes(class_count: usize) -> Self {
        Self {
            class_count,
            ..Self::default()
        }
    }

    /// Divides every filter count and hidden width by `div`.
    pub fn scaled(&self, div: usize) -> Self {
        let d = |v: usize| (v / div).max(1);
        Self {
            branch_filters: [d(self.branch_filters[0]), d(self.branch_filters[1])],
            fusion_filters: d(self.fusion_filters),
            head_filters: d(self.head_filters),
            fc_dims: self.fc_dims.iter().map(|&v| d(v)).collect(),
            ..self.clone()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_branches == 0 || self.class_count == 0 || self.in_channels == 0 {
            return Err(Error::invalid(
                "pretext config needs branches, classes and input channels",
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Variant {
    #[default]
    Proposed,
    Model1,
    Model2,
}

impl std::str::FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "proposed" => Ok(Variant::Proposed),
            "model1" | "model-1" => Ok(Variant::Model1),
            "model2" | "model-2" => Ok(Variant::Model2),
            other => Err(Error::invalid(format!("unknown variant `{other}`"))),
        }
    }
}

/// Downstream classifier hyperparameters.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DownstreamModelConfig {
    pub variant: Variant,
    pub n_branches: usize,
    pub frame_size: usize,
    pub frame_cap: usize,
    pub in_channels: usize,
    pub branch_filters: [usize; 2],
    /// Narrow and wide discriminator widths (512 and 1024 at full size).
    pub disc_narrow: usize,
    pub disc_wide: usize,
    pub fc_width: usize,
}

impl Default for DownstreamModelConfig {
    fn default() -> Self {
        Self {
            variant: Variant::Proposed,
            n_branches: 9,
            frame_size: 256,
            frame_cap: 36,
            in_channels: 1,
            branch_filters: [256, 512],
            disc_narrow: 512,
            disc_wide: 1024,
            fc_width: 1024,
        }
    }
}

impl DownstreamModelConfig {
    pub fn scaled(&self, div: usize) -> Self {
        let d = |v: usize| (v / div).max(1);
        Self {
            branch_filters: [d(self.branch_filters[0]), d(self.branch_filters[1])],
            disc_narrow: d(self.disc_narrow),
            disc_wide: d(self.disc_wide),
            fc_width: d(self.fc_width),
            ..self.clone()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_branches == 0 || self.in_channels == 0 || self.frame_cap == 0 {
            return Err(Error::invalid(
                "downstream config needs branches, input channels and a frame cap",
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum DiscStage {
    MaxPool,
    /// Two 3x3 convolutions with `filters` each; the second has stride 2.
    Block { filters: usize },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DiscSchedule {
    pub stages: Vec<DiscStage>,
    pub fc: Vec<usize>,
}

/// Discriminator layout of each ablation variant.
pub fn variant_schedule(variant: Variant, cfg: &DownstreamModelConfig) -> DiscSchedule {
    let (narrow, wide, fc) = (cfg.disc_narrow, cfg.disc_wide, cfg.fc_width);
    match variant {
        Variant::Proposed => DiscSchedule {
            stages: vec![
                DiscStage::Block { filters: narrow },
                DiscStage::Block { filters: wide },
                DiscStage::Block { filters: wide },
            ],
            fc: vec![fc, fc],
        },
        Variant::Model2 => DiscSchedule {
            stages: vec![
                DiscStage::MaxPool,
                DiscStage::Block { filters: wide },
                DiscStage::Block { filters: wide },
            ],
            fc: vec![fc, fc],
        },
        Variant::Model1 => DiscSchedule {
            stages: vec![
                DiscStage::MaxPool,
                DiscStage::Block { filters: narrow },
                DiscStage::Block { filters: wide },
            ],
            fc: vec![fc],
        },
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn proposed_replaces_model2_pool_with_narrow_block() {
        let cfg = DownstreamModelConfig::default();
        let p = variant_schedule(Variant::Proposed, &cfg);
        let m2 = variant_schedule(Variant::Model2, &cfg);
        assert_eq!(m2.stages[0], DiscStage::MaxPool);
        assert_eq!(p.stages[0], DiscStage::Block { filters: 512 });
        assert_eq!(p.stages[1..], m2.stages[1..]);
        assert_eq!(p.fc, m2.fc);
        let m1 = variant_schedule(Variant::Model1, &cfg);
        assert_eq!(m1.fc, vec![1024]);
        assert_eq!(m1.stages[1], DiscStage::Block { filters: 512 });
    }

    #[test]
    fn variant_parsing() {
        assert_eq!("Model-1".parse::<Variant>().unwrap(), Variant::Model1);
        assert!("model3".parse::<Variant>().is_err());
    }

    #[test]
    fn config_rejects_unknown_keys() {
        let err = serde_json::from_str::<PretextModelConfig>(r#"{"class_count": 10, "bogus": 1}"#);
        assert!(err.is_err());
        let ok: PretextModelConfig = serde_json::from_str(r#"{"class_count": 10}"#).unwrap();
        assert_eq!(ok.patch_size, 64);
    }
}
