//! Relational database schemas as consumed by the parser and the encoder.
//!
//! On disk a schema is JSON:
//!
//! ```json
//! {"tables": [{"name": "scientists",
//!              "columns": [{"name": "ssn", "type": "number", "primary_key": true}]}],
//!  "foreign_keys": [["assigned_to.scientist", "scientists.ssn"]]}
//! ```
//!
//! Columns are addressed by a schema-local flat index: all columns of table 0
//! in declaration order, then table 1, and so on.

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum SchemaError {
    #[error("schema has no tables")]
    NoTables,
    #[error("table `{0}` has no columns")]
    EmptyTable(String),
    #[error("duplicate table `{0}`")]
    DuplicateTable(String),
    #[error("duplicate column `{0}`")]
    DuplicateColumn(String),
    #[error("column reference `{0}` has no table qualifier")]
    ColumnWithoutTable(String),
    #[error("dangling foreign key `{0}`")]
    DanglingForeignKey(String),
}

/// Closed set of column type literals.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum ColumnType {
    Number,
    Text,
    Time,
    Boolean,
    Others,
}

impl ColumnType {
    pub const ALL: [ColumnType; 5] =
        [ColumnType::Number, ColumnType::Text, ColumnType::Time, ColumnType::Boolean, ColumnType::Others];

    /// Maps a free-form SQL type name onto the closed literal set.
    pub fn from_name(name: &str) -> ColumnType {
        match name.trim().to_ascii_lowercase().as_str() {
            "number" | "int" | "integer" | "real" | "float" | "double" | "numeric" | "decimal" => ColumnType::Number,
            "text" | "varchar" | "char" | "string" => ColumnType::Text,
            "time" | "date" | "datetime" | "timestamp" => ColumnType::Time,
            "boolean" | "bool" => ColumnType::Boolean,
            _ => ColumnType::Others,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            ColumnType::Number => "number",
            ColumnType::Text => "text",
            ColumnType::Time => "time",
            ColumnType::Boolean => "boolean",
            ColumnType::Others => "others",
        }
    }
}

impl fmt::Display for ColumnType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Column {
    pub name: String,
    pub ty: ColumnType,
    pub primary_key: bool,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Table {
    pub name: String,
    pub columns: Vec<Column>,
}

/// A validated schema. Names are stored lowercase.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "RawSchema", into = "RawSchema")]
pub struct Schema {
    tables: Vec<Table>,
    /// Flat column index -> (table index, column index within table).
    columns: Vec<(usize, usize)>,
    /// Pairs of flat column indices.
    foreign_keys: Vec<(usize, usize)>,
}

impl Schema {
    pub fn new(tables: Vec<Table>, foreign_keys: Vec<(String, String)>) -> Result<Self, SchemaError> {
        if tables.is_empty() {
            return Err(SchemaError::NoTables);
        }
        let mut tables = tables;
        for t in &mut tables {
            t.name = t.name.to_ascii_lowercase();
            for c in &mut t.columns {
                c.name = c.name.to_ascii_lowercase();
            }
        }
        let mut columns = Vec::new();
        for (ti, t) in tables.iter().enumerate() {
            if tables[..ti].iter().any(|o| o.name == t.name) {
                return Err(SchemaError::DuplicateTable(t.name.clone()));
            }
            if t.columns.is_empty() {
                return Err(SchemaError::EmptyTable(t.name.clone()));
            }
            for (ci, c) in t.columns.iter().enumerate() {
                if t.columns[..ci].iter().any(|o| o.name == c.name) {
                    return Err(SchemaError::DuplicateColumn(format!("{}.{}", t.name, c.name)));
                }
                columns.push((ti, ci));
            }
        }
        let mut schema = Schema { tables, columns, foreign_keys: Vec::new() };
        for (a, b) in foreign_keys {
            let fa = schema.resolve_qualified(&a)?;
            let fb = schema.resolve_qualified(&b)?;
            schema.foreign_keys.push((fa, fb));
        }
        Ok(schema)
    }

    fn resolve_qualified(&self, qualified: &str) -> Result<usize, SchemaError> {
        let (t, c) = qualified.split_once('.').ok_or_else(|| SchemaError::ColumnWithoutTable(qualified.to_string()))?;
        self.table_index(t)
            .and_then(|ti| self.column_index(ti, c))
            .ok_or_else(|| SchemaError::DanglingForeignKey(qualified.to_string()))
    }

    pub fn tables(&self) -> &[Table] {
        &self.tables
    }

    pub fn num_tables(&self) -> usize {
        self.tables.len()
    }

    pub fn num_columns(&self) -> usize {
        self.columns.len()
    }

    pub fn foreign_keys(&self) -> &[(usize, usize)] {
        &self.foreign_keys
    }

    /// Case-insensitive table lookup.
    pub fn table_index(&self, name: &str) -> Option<usize> {
        self.tables.iter().position(|t| t.name.eq_ignore_ascii_case(name))
    }

    /// Flat index of `column` within table `table`, case-insensitive.
    pub fn column_index(&self, table: usize, column: &str) -> Option<usize> {
        self.columns
            .iter()
            .position(|&(ti, ci)| ti == table && self.tables[ti].columns[ci].name.eq_ignore_ascii_case(column))
    }

    pub fn column_table(&self, column: usize) -> usize {
        self.columns[column].0
    }

    pub fn column(&self, column: usize) -> &Column {
        let (ti, ci) = self.columns[column];
        &self.tables[ti].columns[ci]
    }

    /// Flat indices of the columns belonging to `table`.
    pub fn columns_of(&self, table: usize) -> impl Iterator<Item = usize> + '_ {
        self.columns.iter().enumerate().filter(move |(_, &(ti, _))| ti == table).map(|(i, _)| i)
    }

    pub fn table_name(&self, table: usize) -> &str {
        &self.tables[table].name
    }

    /// `table.column` for a flat column index.
    pub fn qualified_column_name(&self, column: usize) -> String {
        let (ti, ci) = self.columns[column];
        format!("{}.{}", self.tables[ti].name, self.tables[ti].columns[ci].name)
    }

    pub fn from_json(text: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(text)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("schema serializes")
    }
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawColumn {
    name: String,
    #[serde(rename = "type", default = "default_type")]
    ty: String,
    #[serde(default)]
    primary_key: bool,
}

fn default_type() -> String {
    "others".into()
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawTable {
    name: String,
    columns: Vec<RawColumn>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawSchema {
    tables: Vec<RawTable>,
    #[serde(default)]
    foreign_keys: Vec<(String, String)>,
}

impl TryFrom<RawSchema> for Schema {
    type Error = SchemaError;

    fn try_from(raw: RawSchema) -> Result<Self, Self::Error> {
        let tables = raw
            .tables
            .into_iter()
            .map(|t| Table {
                name: t.name,
                columns: t
                    .columns
                    .into_iter()
                    .map(|c| Column { name: c.name, ty: ColumnType::from_name(&c.ty), primary_key: c.primary_key })
                    .collect(),
            })
            .collect();
        Schema::new(tables, raw.foreign_keys)
    }
}

impl From<Schema> for RawSchema {
    fn from(s: Schema) -> Self {
        let foreign_keys =
            s.foreign_keys.iter().map(|&(a, b)| (s.qualified_column_name(a), s.qualified_column_name(b))).collect();
        RawSchema {
            tables: s
                .tables
                .into_iter()
                .map(|t| RawTable {
                    name: t.name,
                    columns: t
                        .columns
                        .into_iter()
                        .map(|c| RawColumn { name: c.name, ty: c.ty.as_str().to_string(), primary_key: c.primary_key })
                        .collect(),
                })
                .collect(),
            foreign_keys,
        }
    }
}

/// The three-table `scientist_1` schema used throughout the docs and tests.
pub fn scientists_schema() -> Schema {
    let col = |name: &str, ty: ColumnType, pk: bool| Column { name: name.into(), ty, primary_key: pk };
    Schema::new(
        vec![
            Table {
                name: "scientists".into(),
                columns: vec![col("ssn", ColumnType::Number, true), col("name", ColumnType::Text, false)],
            },
            Table {
                name: "projects".into(),
                columns: vec![
                    col("code", ColumnType::Text, true),
                    col("name", ColumnType::Text, false),
                    col("hours", ColumnType::Number, false),
                ],
            },
            Table {
                name: "assigned_to".into(),
                columns: vec![col("scientist", ColumnType::Number, true), col("project", ColumnType::Text, true)],
            },
        ],
        vec![
            ("assigned_to.scientist".into(), "scientists.ssn".into()),
            ("assigned_to.project".into(), "projects.code".into()),
        ],
    )
    .expect("static schema is valid")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn scientists_layout() {
        let s = scientists_schema();
        assert_eq!(s.num_tables(), 3);
        assert_eq!(s.num_columns(), 7);
        assert_eq!(s.qualified_column_name(2), "projects.code");
        assert_eq!(s.columns_of(2).collect::<Vec<_>>(), vec![5, 6]);
        assert_eq!(s.foreign_keys(), &[(5, 0), (6, 2)]);
    }

    #[test]
    fn json_round_trip() {
        let s = scientists_schema();
        let back = Schema::from_json(&s.to_json()).unwrap();
        assert_eq!(s, back);
    }

    #[test]
    fn rejects_dangling_fk() {
        let text = r#"{"tables":[{"name":"t","columns":[{"name":"a","type":"number"}]}],
                       "foreign_keys":[["t.a","t.zzz"]]}"#;
        let err = Schema::from_json(text).unwrap_err().to_string();
        assert!(err.contains("dangling foreign key"), "{err}");
    }

    #[test]
    fn rejects_unqualified_fk() {
        let text = r#"{"tables":[{"name":"t","columns":[{"name":"a"}]}],
                       "foreign_keys":[["a","t.a"]]}"#;
        let err = Schema::from_json(text).unwrap_err().to_string();
        assert!(err.contains("no table qualifier"), "{err}");
    }

    #[test]
    fn type_names_map_to_literals() {
        assert_eq!(ColumnType::from_name("INTEGER"), ColumnType::Number);
        assert_eq!(ColumnType::from_name("varchar"), ColumnType::Text);
        assert_eq!(ColumnType::from_name("blob"), ColumnType::Others);
    }
}
