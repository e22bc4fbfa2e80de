//! Teacher-forced training, optimization, checkpointing and evaluation.

mod eval;
mod optim;
mod trainer;

use std::path::PathBuf;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use eval::{baseline_predictions, evaluate, predict, score, BucketScore, Metrics, Prediction, PredictionError};
pub use optim::{clip_global_norm, Adam};
pub use trainer::{load_checkpoint, Checkpoint, Cursor, MetricsRow, StepStats, Trainer, CHECKPOINT_FORMAT};

use crate::autodiff::{ArchiveError, AutodiffError, Graph, Mask, Target, Var};
use crate::data::DataError;
use crate::model::{Memory, Model, ModelConfig, ModelError, Prepared};
use crate::schema::Schema;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("invalid training configuration: {0}")]
    Config(String),
    #[error("dataset has no usable examples")]
    EmptyDataset,
    #[error("example {id}: {source}")]
    Example { id: String, source: ModelError },
    #[error("example {id}: {message}")]
    Data { id: String, message: String },
    #[error("vocabulary mismatch: {0}")]
    Vocabulary(String),
    #[error("non-finite loss at step {step}; diagnostics in {}", dump.display())]
    NonFinite { step: usize, dump: PathBuf },
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Autodiff(#[from] AutodiffError),
    #[error(transparent)]
    Archive(#[from] ArchiveError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Dataset(#[from] DataError),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("metrics: {0}")]
    Csv(#[from] csv::Error),
}

/// Everything a training run needs besides data. Serialized as flat TOML;
/// unknown keys are rejected.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub d_model: usize,
    pub layers: usize,
    pub heads: usize,
    pub d_ff: usize,
    pub gat_layers: usize,
    pub gat_slope: f64,
    pub k_tables: usize,
    pub k_columns: usize,
    pub window: usize,
    pub max_nodes: usize,
    pub batch_size: usize,
    pub max_steps: usize,
    pub learning_rate: f64,
    pub warmup_steps: usize,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    pub grad_clip: f64,
    pub lambda_sel: f64,
    pub seed: u64,
    pub beam_width: usize,
    /// Steps between validation passes; 0 disables them.
    pub eval_interval: usize,
    /// Steps between checkpoints; 0 keeps only the final one.
    pub checkpoint_interval: usize,
    /// Size of the validation slice evaluated every `eval_interval` steps.
    pub val_examples: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        let m = ModelConfig::default();
        TrainConfig {
            d_model: m.d_model,
            layers: m.layers,
            heads: m.heads,
            d_ff: m.d_ff,
            gat_layers: m.gat_layers,
            gat_slope: m.gat_slope,
            k_tables: m.k_tables,
            k_columns: m.k_columns,
            window: m.window,
            max_nodes: m.max_nodes,
            batch_size: 32,
            max_steps: 20_000,
            learning_rate: 5e-4,
            warmup_steps: 500,
            beta1: 0.9,
            beta2: 0.999,
            adam_eps: 1e-8,
            grad_clip: 1.0,
            lambda_sel: 0.2,
            seed: 1,
            beam_width: 4,
            eval_interval: 500,
            checkpoint_interval: 5_000,
            val_examples: 64,
        }
    }
}

impl TrainConfig {
    pub fn model(&self) -> ModelConfig {
        ModelConfig {
            d_model: self.d_model,
            layers: self.layers,
            heads: self.heads,
            d_ff: self.d_ff,
            gat_layers: self.gat_layers,
            gat_slope: self.gat_slope,
            k_tables: self.k_tables,
            k_columns: self.k_columns,
            window: self.window,
            max_nodes: self.max_nodes,
        }
    }

    pub fn from_toml(text: &str) -> Result<TrainConfig, TrainError> {
        let cfg: TrainConfig = toml::from_str(text).map_err(|e| TrainError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<(), TrainError> {
        self.model().validate().map_err(|e| TrainError::Config(e.to_string()))?;
        for (name, v) in [("batch_size", self.batch_size), ("beam_width", self.beam_width)] {
            if v == 0 {
                return Err(TrainError::Config(format!("{name} must be positive")));
            }
        }
        let finite_nonneg =
            [("learning_rate", self.learning_rate), ("grad_clip", self.grad_clip), ("lambda_sel", self.lambda_sel)];
        if let Some((name, _)) = finite_nonneg.iter().find(|(_, v)| !(v.is_finite() && *v >= 0.0)) {
            return Err(TrainError::Config(format!("{name} must be finite and nonnegative")));
        }
        for (name, b) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(0.0..1.0).contains(&b) {
                return Err(TrainError::Config(format!("{name} must lie in [0, 1)")));
            }
        }
        if !(self.adam_eps.is_finite() && self.adam_eps > 0.0) {
            return Err(TrainError::Config("adam_eps must be positive".into()));
        }
        Ok(())
    }

    /// Learning rate at 1-based step `step`: linear warmup, then constant.
    pub fn rate_at(&self, step: usize) -> f64 {
        if self.warmup_steps == 0 || step >= self.warmup_steps {
            self.learning_rate
        } else {
            self.learning_rate * step as f64 / self.warmup_steps as f64
        }
    }
}

/// One example's objective on a tape.
pub struct Loss {
    pub total: Var,
    /// Summed action cross-entropy over the gold trace.
    pub main: f64,
    /// Selection term before weighting.
    pub aux: f64,
}

/// Gold-trace cross-entropy plus `lambda` times the selection term: the mean
/// negative log-probability of the gold tables under the full table
/// distribution, plus the same for gold columns under the distribution
/// restricted to the example's schema.
pub fn example_loss(
    model: &Model,
    g: &mut Graph,
    prepared: &Prepared,
    schema: &Schema,
    lambda: f64,
) -> Result<Loss, ModelError> {
    let Memory { selection, memory, .. } =
        model.memory(g, &prepared.question, &prepared.topology, schema, &prepared.binding)?;
    let out = model.teacher_forced(g, prepared, memory);
    let targets: Vec<Target> =
        prepared.actions.iter().enumerate().map(|(row, &class)| Target { row, class, weight: 1.0 }).collect();
    let main = g.cross_entropy(out.logits, &targets, None);
    let mean_targets = |ids: &[usize]| -> Vec<Target> {
        let w = 1.0 / ids.len() as f64;
        ids.iter().map(|&class| Target { row: 0, class, weight: w }).collect()
    };
    let mut aux = None;
    if !prepared.gold_tables.is_empty() {
        aux = Some(g.cross_entropy(selection.table_logits, &mean_targets(&prepared.gold_tables), None));
    }
    if !prepared.gold_columns.is_empty() {
        let cols = g.shape(selection.column_logits)[1];
        let mut keep = vec![false; cols];
        for &c in &prepared.binding.columns {
            keep[c] = true;
        }
        let mask = Mask::new(1, cols, keep);
        let term = g.cross_entropy(selection.column_logits, &mean_targets(&prepared.gold_columns), Some(&mask));
        aux = Some(match aux {
            Some(a) => g.add(a, term),
            None => term,
        });
    }
    let main_value = g.value(main).item();
    let (total, aux_value) = match aux {
        Some(a) => {
            let v = g.value(a).item();
            let weighted = g.scale(a, lambda);
            (g.add(main, weighted), v)
        }
        None => (main, 0.0),
    };
    Ok(Loss { total, main: main_value, aux: aux_value })
}

/// Loss value of one example on a fresh tape.
pub fn compute_loss(model: &Model, prepared: &Prepared, schema: &Schema, lambda: f64) -> Result<f64, ModelError> {
    let mut g = Graph::new();
    let loss = example_loss(model, &mut g, prepared, schema, lambda)?;
    Ok(g.value(loss.total).item())
}

#[cfg(test)]
mod tests;
