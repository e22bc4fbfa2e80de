use std::collections::{BTreeMap, HashMap};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::TrainError;
use crate::autodiff::Graph;
use crate::data::{referenced_elements, DatasetFile, Example};
use crate::difficulty::{classify, Difficulty};
use crate::grammar::{exact_match, parse_sql, Grammar};
use crate::model::{Model, ModelError, SearchMode};
use crate::schema::Schema;

/// One line of a prediction file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub example_id: String,
    /// `None` when generation failed.
    pub sql: Option<String>,
    /// Flat action ids in BFS order.
    #[serde(default)]
    pub actions: Vec<usize>,
    pub log_prob: Option<f64>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub top_tables: Vec<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub top_columns: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Error)]
#[error("line {line}: {source}")]
pub struct PredictionError {
    pub line: usize,
    pub source: serde_json::Error,
}

impl Prediction {
    pub fn gold(e: &Example) -> Prediction {
        Prediction {
            example_id: e.id.clone(),
            sql: Some(e.sql.clone()),
            actions: vec![],
            log_prob: None,
            top_tables: vec![],
            top_columns: vec![],
            error: None,
        }
    }

    pub fn to_jsonl(preds: &[Prediction]) -> String {
        preds.iter().map(|p| serde_json::to_string(p).expect("json") + "\n").collect()
    }

    pub fn from_jsonl(text: &str) -> Result<Vec<Prediction>, PredictionError> {
        text.lines()
            .enumerate()
            .filter(|(_, l)| !l.trim().is_empty())
            .map(|(i, l)| serde_json::from_str(l).map_err(|source| PredictionError { line: i + 1, source }))
            .collect()
    }
}

fn lookup<'a>(ds: &'a DatasetFile, e: &Example) -> Result<&'a Schema, TrainError> {
    ds.schema(&e.db_id)
        .ok_or_else(|| TrainError::Data { id: e.id.clone(), message: format!("unknown db_id `{}`", e.db_id) })
}

pub fn predict(model: &Model, ds: &DatasetFile, mode: SearchMode) -> Result<Vec<Prediction>, TrainError> {
    let grammar = model.grammar();
    let sv = &model.schema_vocab;
    let mut out = Vec::with_capacity(ds.examples.len());
    for e in &ds.examples {
        let schema = lookup(ds, e)?;
        let input = model
            .question_input(&e.question, schema)
            .map_err(|err| TrainError::Vocabulary(format!("{}: {err}", e.id)))?;
        let mut p = Prediction {
            example_id: e.id.clone(),
            sql: None,
            actions: vec![],
            log_prob: None,
            top_tables: vec![],
            top_columns: vec![],
            error: None,
        };
        match model.generate(&input, schema, mode, model.config.max_nodes) {
            Ok(gen) => {
                let space = model.space();
                p.sql = Some(
                    crate::grammar::render_sql(grammar, &gen.ast, schema)
                        .map_err(|err| TrainError::Data { id: e.id.clone(), message: err.to_string() })?,
                );
                p.actions = gen.actions.iter().map(|&a| space.encode(a, &input.binding)).collect();
                p.log_prob = Some(gen.log_prob);
                p.top_tables = gen.top_tables.iter().map(|&t| sv.tables[t].clone()).collect();
                p.top_columns = gen.top_columns.iter().map(|&c| sv.columns[c].clone()).collect();
            }
            Err(err @ (ModelError::BudgetExhausted(_) | ModelError::NoLegalAction)) => {
                p.error = Some(err.to_string());
                let mut g = Graph::new();
                let sel = model
                    .memory(&mut g, &input.question, &input.topology, schema, &input.binding)
                    .map_err(|source| TrainError::Example { id: e.id.clone(), source })?
                    .selection;
                p.top_tables = sel.top_tables.iter().map(|&t| sv.tables[t].clone()).collect();
                p.top_columns = sel.top_columns.iter().map(|&c| sv.columns[c].clone()).collect();
            }
            Err(source) => return Err(TrainError::Example { id: e.id.clone(), source }),
        }
        out.push(p);
    }
    Ok(out)
}

/// Predicts, for every example of `target`, the query that occurs most
/// often in `train` on the same database (ties to the lexicographically
/// smallest), falling back to the most frequent query overall.
pub fn baseline_predictions(train: &DatasetFile, target: &DatasetFile) -> Vec<Prediction> {
    fn best(counts: &BTreeMap<&str, usize>) -> Option<String> {
        counts.iter().max_by(|a, b| a.1.cmp(b.1).then(b.0.cmp(a.0))).map(|(s, _)| s.to_string())
    }
    let mut overall: BTreeMap<&str, usize> = BTreeMap::new();
    let mut per_db: BTreeMap<&str, BTreeMap<&str, usize>> = BTreeMap::new();
    for e in &train.examples {
        *overall.entry(&e.sql).or_default() += 1;
        *per_db.entry(&e.db_id).or_default().entry(&e.sql).or_default() += 1;
    }
    let fallback = best(&overall);
    target
        .examples
        .iter()
        .map(|e| Prediction {
            sql: per_db.get(e.db_id.as_str()).and_then(best).or_else(|| fallback.clone()),
            ..Prediction::gold(e)
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct BucketScore {
    pub difficulty: Difficulty,
    pub total: usize,
    pub correct: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Metrics {
    pub examples: usize,
    pub correct: usize,
    pub exact_match: f64,
    pub buckets: Vec<BucketScore>,
    /// Fraction of gold tables inside the predicted top-k; `None` when no
    /// prediction reports a selection.
    pub table_recall: Option<f64>,
    pub column_recall: Option<f64>,
    /// Predictions without SQL.
    pub failed: usize,
}

impl fmt::Display for Metrics {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "examples       {}", self.examples)?;
        writeln!(f, "exact_match    {:.4} ({}/{})", self.exact_match, self.correct, self.examples)?;
        for b in &self.buckets {
            let em = if b.total == 0 { 0.0 } else { b.correct as f64 / b.total as f64 };
            writeln!(f, "  {:<12} {:.4} ({}/{})", b.difficulty.as_str(), em, b.correct, b.total)?;
        }
        let show = |r: Option<f64>| r.map_or("n/a".to_string(), |x| format!("{x:.4}"));
        writeln!(f, "table_recall   {}", show(self.table_recall))?;
        writeln!(f, "column_recall  {}", show(self.column_recall))?;
        write!(f, "failed         {}", self.failed)
    }
}

/// Scores predictions against a dataset. Examples without a prediction, or
/// whose predicted SQL does not parse, count as misses.
pub fn score(grammar: &Grammar, ds: &DatasetFile, preds: &[Prediction]) -> Result<Metrics, TrainError> {
    if ds.examples.is_empty() {
        return Err(TrainError::EmptyDataset);
    }
    let by_id: HashMap<&str, &Prediction> = preds.iter().map(|p| (p.example_id.as_str(), p)).collect();
    let mut buckets: BTreeMap<Difficulty, (usize, usize)> = Difficulty::ALL.iter().map(|&d| (d, (0, 0))).collect();
    let (mut correct, mut failed) = (0, 0);
    let (mut t_hit, mut t_all, mut c_hit, mut c_all) = (0usize, 0usize, 0usize, 0usize);
    let mut reported = false;
    for e in &ds.examples {
        let schema = lookup(ds, e)?;
        let gold = parse_sql(grammar, &e.sql, schema)
            .map_err(|err| TrainError::Data { id: e.id.clone(), message: err.to_string() })?;
        let bucket = buckets.get_mut(&classify(&gold, grammar)).expect("all buckets present");
        bucket.0 += 1;
        let Some(p) = by_id.get(e.id.as_str()) else {
            failed += 1;
            continue;
        };
        let hit = match &p.sql {
            Some(sql) => parse_sql(grammar, sql, schema).is_ok_and(|ast| exact_match(grammar, &ast, &gold)),
            None => {
                failed += 1;
                false
            }
        };
        if hit {
            correct += 1;
            bucket.1 += 1;
        }
        if !p.top_tables.is_empty() || !p.top_columns.is_empty() {
            reported = true;
            let (tables, columns) = match (&e.gold_tables, &e.gold_columns) {
                (Some(t), Some(c)) => (t.clone(), c.clone()),
                _ => referenced_elements(&gold, schema),
            };
            t_all += tables.len();
            t_hit += tables.iter().filter(|t| p.top_tables.contains(t)).count();
            c_all += columns.len();
            c_hit += columns.iter().filter(|c| p.top_columns.contains(c)).count();
        }
    }
    let ratio = |hit: usize, all: usize| (reported && all > 0).then(|| hit as f64 / all as f64);
    Ok(Metrics {
        examples: ds.examples.len(),
        correct,
        exact_match: correct as f64 / ds.examples.len() as f64,
        buckets: buckets
            .into_iter()
            .map(|(difficulty, (total, correct))| BucketScore { difficulty, total, correct })
            .collect(),
        table_recall: ratio(t_hit, t_all),
        column_recall: ratio(c_hit, c_all),
        failed,
    })
}

pub fn evaluate(model: &Model, ds: &DatasetFile, mode: SearchMode) -> Result<Metrics, TrainError> {
    if ds.examples.is_empty() {
        return Err(TrainError::EmptyDataset);
    }
    score(model.grammar(), ds, &predict(model, ds, mode)?)
}
