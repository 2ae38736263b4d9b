use std::fmt;

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerSummary {
    pub name: String,
    pub kind: String,
    /// Per-item output shape as `HxWxC` (prefixed with `F x` for per-frame
    /// downstream activations).
    pub output_shape: String,
    pub params: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelSummary {
    pub model: String,
    pub layers: Vec<LayerSummary>,
    pub total_params: usize,
}

impl ModelSummary {
    pub(crate) fn new(model: impl Into<String>, layers: Vec<LayerSummary>) -> Self {
        let total_params = layers.iter().map(|l| l.params).sum();
        Self {
            model: model.into(),
            layers,
            total_params,
        }
    }

    pub fn layer(&self, name: &str) -> Option<&LayerSummary> {
        self.layers.iter().find(|l| l.name == name)
    }

    /// Sum of parameters over layers whose name starts with `prefix`.
    pub fn params_with_prefix(&self, prefix: &str) -> usize {
        self.layers
            .iter()
            .filter(|l| l.name.starts_with(prefix))
            .map(|l| l.params)
            .sum()
    }
}

impl fmt::Display for ModelSummary {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "{}", self.model)?;
        writeln!(f, "{:<32} {:<10} {:>20} {:>14}", "layer", "kind", "output", "params")?;
        for l in &self.layers {
            writeln!(
                f,
                "{:<32} {:<10} {:>20} {:>14}",
                l.name, l.kind, l.output_shape, l.params
            )?;
        }
        write!(f, "total parameters: {}", self.total_params)
    }
}
