//! Dataset files: annotated questions paired with gold SQL, plus the
//! schemas they run against.
//!
//! ```json
//! {"examples": [{"id": "ex0", "db_id": "scientist_1",
//!                "question": {"tokens": [...], "pos": [...], "deps": [[0, 2, "OBJ"]]},
//!                "sql": "SELECT COUNT(*) FROM scientists"}],
//!  "schemas": {"scientist_1": {"tables": [...], "foreign_keys": [...]}}}
//! ```

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::grammar::{parse_sql, Action, Ast, Grammar};
use crate::graphs::QuestionAnnotation;
use crate::schema::Schema;
use crate::serialize::ActionTrace;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed dataset: {0}")]
    Format(#[from] serde_json::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Example {
    pub id: String,
    pub db_id: String,
    pub question: QuestionAnnotation,
    pub sql: String,
    /// Tables referenced by `sql`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gold_tables: Option<Vec<String>>,
    /// Columns referenced by `sql`, as `table.column`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gold_columns: Option<Vec<String>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetFile {
    pub examples: Vec<Example>,
    pub schemas: BTreeMap<String, Schema>,
}

impl DatasetFile {
    pub fn from_json(text: &str) -> Result<DatasetFile, DataError> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("datasets serialize")
    }

    pub fn load(path: &Path) -> Result<DatasetFile, DataError> {
        let text =
            fs::read_to_string(path).map_err(|source| DataError::Io { path: path.display().to_string(), source })?;
        DatasetFile::from_json(&text)
    }

    pub fn save(&self, path: &Path) -> Result<(), DataError> {
        fs::write(path, self.to_json() + "\n")
            .map_err(|source| DataError::Io { path: path.display().to_string(), source })
    }

    pub fn schema(&self, db_id: &str) -> Option<&Schema> {
        self.schemas.get(db_id)
    }
}

/// Tables and columns (as `table.column`) referenced by an AST.
pub fn referenced_elements(ast: &Ast, schema: &Schema) -> (Vec<String>, Vec<String>) {
    let mut tables = Vec::new();
    let mut columns = Vec::new();
    for n in ast.nodes() {
        match n.action {
            Some(Action::SelectTable(t)) => tables.push(schema.table_name(t).to_string()),
            Some(Action::SelectColumn(c)) => {
                columns.push(schema.qualified_column_name(c));
                tables.push(schema.table_name(schema.column_table(c)).to_string());
            }
            _ => {}
        }
    }
    tables.sort();
    tables.dedup();
    columns.sort();
    columns.dedup();
    (tables, columns)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Failure {
    pub example_id: String,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct ValidationReport {
    pub checked: usize,
    pub failures: Vec<Failure>,
}

impl ValidationReport {
    pub fn is_ok(&self) -> bool {
        self.failures.is_empty()
    }
}

/// Checks every example: its schema resolves, its annotation uses known
/// tags, its SQL parses, and its action trace fits the window.
pub fn validate_dataset(ds: &DatasetFile, grammar: &Grammar, window: usize) -> ValidationReport {
    let mut report = ValidationReport::default();
    let mut seen = std::collections::HashSet::new();
    for ex in &ds.examples {
        report.checked += 1;
        let fail = |message: String| Failure { example_id: ex.id.clone(), message };
        if !seen.insert(ex.id.as_str()) {
            report.failures.push(fail("duplicate example id".into()));
            continue;
        }
        let Some(schema) = ds.schema(&ex.db_id) else {
            report.failures.push(fail(format!("unknown db_id `{}`", ex.db_id)));
            continue;
        };
        if let Err(e) = ex.question.validate() {
            report.failures.push(fail(e.to_string()));
            continue;
        }
        let ast = match parse_sql(grammar, &ex.sql, schema) {
            Ok(a) => a,
            Err(e) => {
                report.failures.push(fail(format!("sql: {e}")));
                continue;
            }
        };
        if let Err(e) = ActionTrace::from_ast(&ast, window) {
            report.failures.push(fail(e.to_string()));
            continue;
        }
        let (tables, columns) = referenced_elements(&ast, schema);
        let sorted = |v: &Vec<String>| {
            let mut v = v.clone();
            v.sort();
            v
        };
        if ex.gold_tables.as_ref().is_some_and(|g| sorted(g) != tables) {
            report.failures.push(fail("gold_tables disagree with the SQL".into()));
        } else if ex.gold_columns.as_ref().is_some_and(|g| sorted(g) != columns) {
            report.failures.push(fail("gold_columns disagree with the SQL".into()));
        }
    }
    report
}
