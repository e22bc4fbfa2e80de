use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::json;

use super::{evaluate, example_loss, Adam, TrainConfig, TrainError};
use crate::autodiff::{read_archive, write_archive, Graph, Tensor};
use crate::data::DatasetFile;
use crate::grammar::parse_sql;
use crate::graphs::{build_vocab, SchemaVocab, Vocabulary};
use crate::model::{Model, ModelError, Prepared, SearchMode};
use crate::schema::Schema;

pub const CHECKPOINT_FORMAT: &str = "sqltree-checkpoint/1";
const PARAM: &str = "param/";
const MOMENT1: &str = "adam_m/";
const MOMENT2: &str = "adam_v/";

/// Position in the shuffled data stream. Each epoch visits a permutation
/// drawn from `(seed, epoch)`, so a cursor pins down all future batches.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Cursor {
    pub epoch: u64,
    pub position: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepStats {
    pub step: usize,
    /// Batch mean of the full objective.
    pub loss: f64,
    /// Batch mean of the unweighted selection term.
    pub aux_loss: f64,
    pub grad_norm: f64,
    pub rate: f64,
}

/// One line of the metrics log. Validation cells are empty between
/// evaluations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub step: usize,
    pub loss: f64,
    pub aux_loss: f64,
    pub val_em: Option<f64>,
    pub table_recall: Option<f64>,
    pub column_recall: Option<f64>,
}

struct Item {
    id: String,
    db_id: String,
    prepared: Prepared,
}

pub struct Trainer {
    pub model: Model,
    pub config: TrainConfig,
    pub optimizer: Adam,
    /// Completed optimizer steps.
    pub step: usize,
    pub cursor: Cursor,
    /// Ids of examples whose gold trace violates the window.
    pub skipped: Vec<String>,
    items: Vec<Item>,
    schemas: BTreeMap<String, Schema>,
    order: Vec<usize>,
    dump_dir: PathBuf,
}

fn permutation(seed: u64, epoch: u64, n: usize) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(epoch);
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng);
    order
}

impl Trainer {
    /// Fresh model with vocabularies built from `train`.
    pub fn new(config: TrainConfig, train: &DatasetFile) -> Result<Trainer, TrainError> {
        config.validate()?;
        if train.examples.is_empty() {
            return Err(TrainError::EmptyDataset);
        }
        let vocab = build_vocab(train.examples.iter().map(|e| &e.question), train.schemas.values())
            .map_err(|e| TrainError::Vocabulary(e.to_string()))?;
        let schema_vocab =
            SchemaVocab::build(train.schemas.values()).map_err(|e| TrainError::Vocabulary(e.to_string()))?;
        let model = Model::new(config.model(), vocab, schema_vocab, config.seed)?;
        let optimizer = Adam::new(&model.params, config.beta1, config.beta2, config.adam_eps);
        Trainer::assemble(model, config, optimizer, 0, Cursor::default(), train)
    }

    /// Continues from a checkpoint on the same training data.
    pub fn resume(checkpoint: Checkpoint, train: &DatasetFile) -> Result<Trainer, TrainError> {
        let Checkpoint { config, step, cursor, model, optimizer } = checkpoint;
        Trainer::assemble(model, config, optimizer, step, cursor, train)
    }

    fn assemble(
        model: Model,
        config: TrainConfig,
        optimizer: Adam,
        step: usize,
        cursor: Cursor,
        train: &DatasetFile,
    ) -> Result<Trainer, TrainError> {
        let grammar = model.grammar();
        let mut items = Vec::with_capacity(train.examples.len());
        let mut skipped = Vec::new();
        for e in &train.examples {
            let data_err = |message: String| TrainError::Data { id: e.id.clone(), message };
            let schema = train.schema(&e.db_id).ok_or_else(|| data_err(format!("unknown db_id `{}`", e.db_id)))?;
            let gold = parse_sql(grammar, &e.sql, schema).map_err(|err| data_err(err.to_string()))?;
            match model.prepare(&e.question, schema, &gold) {
                Ok(prepared) => items.push(Item { id: e.id.clone(), db_id: e.db_id.clone(), prepared }),
                Err(ModelError::Sequence(err)) => {
                    log::warn!("skipping {}: {err}", e.id);
                    skipped.push(e.id.clone());
                }
                Err(ModelError::Graph(err)) => return Err(TrainError::Vocabulary(format!("{}: {err}", e.id))),
                Err(source) => return Err(TrainError::Example { id: e.id.clone(), source }),
            }
        }
        if items.is_empty() {
            return Err(TrainError::EmptyDataset);
        }
        let order = permutation(config.seed, cursor.epoch, items.len());
        Ok(Trainer {
            model,
            config,
            optimizer,
            step,
            cursor,
            skipped,
            items,
            schemas: train.schemas.clone(),
            order,
            dump_dir: std::env::temp_dir(),
        })
    }

    /// Number of examples in the training stream.
    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub(super) fn next_batch(&mut self) -> Vec<usize> {
        let mut batch = Vec::with_capacity(self.config.batch_size);
        while batch.len() < self.config.batch_size {
            if self.cursor.position == self.items.len() {
                self.cursor = Cursor { epoch: self.cursor.epoch + 1, position: 0 };
                self.order = permutation(self.config.seed, self.cursor.epoch, self.items.len());
            }
            batch.push(self.order[self.cursor.position]);
            self.cursor.position += 1;
        }
        batch
    }

    /// One optimizer update on the next batch.
    pub fn step(&mut self) -> Result<StepStats, TrainError> {
        let rate = self.config.rate_at(self.step + 1);
        let batch = self.next_batch();
        let scale = 1.0 / batch.len() as f64;
        let mut grads: Vec<Tensor> = self
            .model
            .params
            .ids()
            .map(|id| {
                let [r, c] = self.model.params.value(id).shape();
                Tensor::zeros(r, c)
            })
            .collect();
        let (mut loss_sum, mut aux_sum) = (0.0, 0.0);
        for &i in &batch {
            let item = &self.items[i];
            let schema = &self.schemas[&item.db_id];
            let mut g = Graph::new();
            let loss = example_loss(&self.model, &mut g, &item.prepared, schema, self.config.lambda_sel)
                .map_err(|source| TrainError::Example { id: item.id.clone(), source })?;
            let value = g.value(loss.total).item();
            if !value.is_finite() {
                return Err(self.dump_non_finite(&item.id, loss.main, loss.aux, rate));
            }
            loss_sum += value;
            aux_sum += loss.aux;
            let back = g.backward(loss.total)?;
            for (id, grad) in g.param_grads(&back) {
                let acc = grads[id.0].data_mut();
                for (a, &x) in acc.iter_mut().zip(grad.data()) {
                    *a += scale * x;
                }
            }
        }
        let grad_norm = super::clip_global_norm(&mut grads, self.config.grad_clip);
        self.optimizer.step(&mut self.model.params, &grads, rate);
        self.step += 1;
        Ok(StepStats { step: self.step, loss: loss_sum * scale, aux_loss: aux_sum * scale, grad_norm, rate })
    }

    fn dump_non_finite(&self, example: &str, main: f64, aux: f64, rate: f64) -> TrainError {
        let step = self.step + 1;
        let norms: BTreeMap<&str, f64> = self.model.params.iter().map(|(n, t)| (n, t.sq_norm().sqrt())).collect();
        let report = json!({
            "step": step,
            "example": example,
            "main_loss": format!("{main}"),
            "aux_loss": format!("{aux}"),
            "rate": rate,
            "cursor": self.cursor,
            "param_norms": norms,
        });
        let dump = self.dump_dir.join(format!("nonfinite-step-{step:06}.json"));
        if let Err(e) = fs::write(&dump, serde_json::to_string_pretty(&report).expect("json")) {
            log::error!("could not write {}: {e}", dump.display());
        }
        TrainError::NonFinite { step, dump }
    }

    pub fn save(&self, dir: &Path) -> Result<(), TrainError> {
        let metadata = json!({
            "format": CHECKPOINT_FORMAT,
            "config": self.config,
            "step": self.step,
            "cursor": self.cursor,
            "adam_t": self.optimizer.t,
            "vocab": self.model.vocab,
            "schema_vocab": self.model.schema_vocab,
        });
        let mut names = Vec::new();
        let mut tensors = Vec::new();
        for (i, (name, t)) in self.model.params.iter().enumerate() {
            for (prefix, tensor) in [(PARAM, t), (MOMENT1, &self.optimizer.m[i]), (MOMENT2, &self.optimizer.v[i])] {
                names.push(format!("{prefix}{name}"));
                tensors.push(tensor);
            }
        }
        write_archive(dir, metadata, names.iter().map(String::as_str).zip(tensors))?;
        Ok(())
    }

    /// Runs until `max_steps`, writing `metrics.csv`, periodic checkpoints
    /// and a final `checkpoint` directory under `out`. The first
    /// `val_examples` of `val` are evaluated every `eval_interval` steps and
    /// at the last step.
    pub fn run(&mut self, out: &Path, val: Option<&DatasetFile>) -> Result<Vec<MetricsRow>, TrainError> {
        fs::create_dir_all(out)?;
        self.dump_dir = out.to_path_buf();
        let metrics_path = out.join("metrics.csv");
        let append = self.step > 0 && metrics_path.exists();
        let file =
            fs::OpenOptions::new().create(true).append(append).write(true).truncate(!append).open(&metrics_path)?;
        let mut writer = csv::WriterBuilder::new().has_headers(!append).from_writer(file);
        let val_slice = val.map(|v| DatasetFile {
            examples: v.examples.iter().take(self.config.val_examples).cloned().collect(),
            schemas: v.schemas.clone(),
        });
        let mode = SearchMode::from_width(self.config.beam_width);
        let mut rows = Vec::new();
        while self.step < self.config.max_steps {
            let stats = self.step()?;
            let mut row = MetricsRow {
                step: stats.step,
                loss: stats.loss,
                aux_loss: stats.aux_loss,
                val_em: None,
                table_recall: None,
                column_recall: None,
            };
            let last = stats.step == self.config.max_steps;
            let due = self.config.eval_interval > 0 && stats.step % self.config.eval_interval == 0;
            if let Some(v) = val_slice.as_ref().filter(|v| !v.examples.is_empty() && (due || last)) {
                let m = evaluate(&self.model, v, mode)?;
                row.val_em = Some(m.exact_match);
                row.table_recall = m.table_recall;
                row.column_recall = m.column_recall;
                log::info!("step {} loss {:.4} val_em {:.4}", stats.step, stats.loss, m.exact_match);
            } else if stats.step % 50 == 0 {
                log::info!(
                    "step {} loss {:.4} aux {:.4} rate {:.2e}",
                    stats.step,
                    stats.loss,
                    stats.aux_loss,
                    stats.rate
                );
            }
            writer.serialize(&row)?;
            writer.flush()?;
            rows.push(row);
            if self.config.checkpoint_interval > 0 && stats.step % self.config.checkpoint_interval == 0 && !last {
                self.save(&out.join(format!("checkpoint-{:06}", stats.step)))?;
            }
        }
        self.save(&out.join("checkpoint"))?;
        Ok(rows)
    }
}

/// A restored model plus the optimizer state needed to keep training.
pub struct Checkpoint {
    pub config: TrainConfig,
    pub step: usize,
    pub cursor: Cursor,
    pub model: Model,
    pub optimizer: Adam,
}

pub fn load_checkpoint(dir: &Path) -> Result<Checkpoint, TrainError> {
    let (meta, tensors) = read_archive(dir)?;
    let bad = |what: &str| TrainError::Checkpoint(format!("{}: {what}", dir.display()));
    if meta.get("format").and_then(|f| f.as_str()) != Some(CHECKPOINT_FORMAT) {
        return Err(bad("not a training checkpoint"));
    }
    let field = |key: &str| meta.get(key).cloned().ok_or_else(|| bad(&format!("missing `{key}`")));
    let parse_err = |e: serde_json::Error| bad(&e.to_string());
    let config: TrainConfig = serde_json::from_value(field("config")?).map_err(parse_err)?;
    config.validate()?;
    let step: usize = serde_json::from_value(field("step")?).map_err(parse_err)?;
    let cursor: Cursor = serde_json::from_value(field("cursor")?).map_err(parse_err)?;
    let adam_t: u64 = serde_json::from_value(field("adam_t")?).map_err(parse_err)?;
    let vocab: Vocabulary = serde_json::from_value(field("vocab")?).map_err(parse_err)?;
    let schema_vocab: SchemaVocab = serde_json::from_value(field("schema_vocab")?).map_err(parse_err)?;
    let mut model = Model::new(config.model(), vocab, schema_vocab, config.seed)?;
    let mut params = Vec::new();
    let mut m = BTreeMap::new();
    let mut v = BTreeMap::new();
    for (name, t) in tensors {
        if let Some(n) = name.strip_prefix(PARAM) {
            params.push((n.to_string(), t));
        } else if let Some(n) = name.strip_prefix(MOMENT1) {
            m.insert(n.to_string(), t);
        } else if let Some(n) = name.strip_prefix(MOMENT2) {
            v.insert(n.to_string(), t);
        } else {
            return Err(bad(&format!("unexpected tensor `{name}`")));
        }
    }
    model.load_params(params).map_err(|e| bad(&e))?;
    let mut optimizer = Adam::new(&model.params, config.beta1, config.beta2, config.adam_eps);
    optimizer.t = adam_t;
    for (i, (name, value)) in model.params.iter().enumerate() {
        for (store, slot) in [(&mut m, &mut optimizer.m[i]), (&mut v, &mut optimizer.v[i])] {
            let t = store.remove(name).ok_or_else(|| bad(&format!("missing moment for `{name}`")))?;
            if t.shape() != value.shape() {
                return Err(bad(&format!("moment shape mismatch for `{name}`")));
            }
            *slot = t;
        }
    }
    Ok(Checkpoint { config, step, cursor, model, optimizer })
}
