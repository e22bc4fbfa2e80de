use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use super::{GraphError, QuestionAnnotation, DEP_TAGS, POS_TAGS};
use crate::schema::{ColumnType, Schema};

pub const PAD: &str = "<pad>";
pub const UNK: &str = "<unk>";

/// Splits a schema identifier into lowercase name pieces.
pub fn name_tokens(name: &str) -> Vec<String> {
    name.split(|c: char| c == '_' || c.is_whitespace()).filter(|s| !s.is_empty()).map(str::to_lowercase).collect()
}

/// Node-feature vocabulary shared by question and schema graphs.
///
/// Ids 0 and 1 are `<pad>` and `<unk>`, followed by `pos:*`, `dep:*` and
/// `type:*` entries, followed by corpus tokens in first-appearance order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(from = "Vec<String>", into = "Vec<String>")]
pub struct Vocabulary {
    tokens: Vec<String>,
    index: HashMap<String, usize>,
}

impl From<Vec<String>> for Vocabulary {
    fn from(tokens: Vec<String>) -> Self {
        let index = tokens.iter().enumerate().map(|(i, t)| (t.clone(), i)).collect();
        Vocabulary { tokens, index }
    }
}

impl From<Vocabulary> for Vec<String> {
    fn from(v: Vocabulary) -> Self {
        v.tokens
    }
}

impl Vocabulary {
    fn reserved() -> Vec<String> {
        let mut out = vec![PAD.to_string(), UNK.to_string()];
        out.extend(POS_TAGS.iter().map(|t| format!("pos:{t}")));
        out.extend(DEP_TAGS.iter().map(|t| format!("dep:{t}")));
        out.extend(ColumnType::ALL.iter().map(|t| format!("type:{}", t.as_str())));
        out
    }

    fn push(&mut self, token: &str) {
        if !self.index.contains_key(token) {
            self.index.insert(token.to_string(), self.tokens.len());
            self.tokens.push(token.to_string());
        }
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn token(&self, id: usize) -> &str {
        &self.tokens[id]
    }

    pub fn get(&self, token: &str) -> Option<usize> {
        self.index.get(token).copied()
    }

    /// Id of a plain token; unknown tokens map to `<unk>`.
    pub fn id(&self, token: &str) -> usize {
        self.get(token).unwrap_or(1)
    }

    pub fn ids(&self, tokens: &[String]) -> Vec<usize> {
        tokens.iter().map(|t| self.id(t)).collect()
    }

    pub fn pos_id(&self, tag: &str) -> usize {
        self.id(&format!("pos:{tag}"))
    }

    pub fn dep_id(&self, label: &str) -> usize {
        self.id(&format!("dep:{label}"))
    }

    pub fn type_id(&self, ty: ColumnType) -> usize {
        self.id(&format!("type:{}", ty.as_str()))
    }
}

/// Builds the vocabulary from question lemmas and schema name pieces, in
/// that order.
pub fn build_vocab<'a>(
    questions: impl IntoIterator<Item = &'a QuestionAnnotation>,
    schemas: impl IntoIterator<Item = &'a Schema>,
) -> Result<Vocabulary, GraphError> {
    let mut v = Vocabulary::from(Vocabulary::reserved());
    let reserved = v.len();
    for q in questions {
        for t in &q.tokens {
            v.push(&t.to_lowercase());
        }
    }
    for s in schemas {
        for t in 0..s.num_tables() {
            for p in name_tokens(s.table_name(t)) {
                v.push(&p);
            }
        }
        for c in 0..s.num_columns() {
            for p in name_tokens(&s.column(c).name) {
                v.push(&p);
            }
        }
    }
    if v.len() == reserved {
        return Err(GraphError::EmptyCorpus);
    }
    Ok(v)
}

/// Corpus-wide table and column inventories. Tables are keyed by name and
/// columns by `table.column`, both in first-appearance order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SchemaVocab {
    pub tables: Vec<String>,
    pub columns: Vec<String>,
}

/// Schema-local to global id maps for one schema.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SchemaBinding {
    pub tables: Vec<usize>,
    pub columns: Vec<usize>,
}

impl SchemaVocab {
    pub fn build<'a>(schemas: impl IntoIterator<Item = &'a Schema>) -> Result<SchemaVocab, GraphError> {
        let mut out = SchemaVocab { tables: Vec::new(), columns: Vec::new() };
        for s in schemas {
            for t in 0..s.num_tables() {
                let name = s.table_name(t).to_string();
                if !out.tables.contains(&name) {
                    out.tables.push(name);
                }
            }
            for c in 0..s.num_columns() {
                let name = s.qualified_column_name(c);
                if !out.columns.contains(&name) {
                    out.columns.push(name);
                }
            }
        }
        if out.tables.is_empty() {
            return Err(GraphError::EmptyCorpus);
        }
        Ok(out)
    }

    pub fn num_tables(&self) -> usize {
        self.tables.len()
    }

    pub fn num_columns(&self) -> usize {
        self.columns.len()
    }

    pub fn bind(&self, schema: &Schema) -> Result<SchemaBinding, GraphError> {
        let find =
            |list: &[String], key: String| list.iter().position(|x| *x == key).ok_or(GraphError::NotInVocabulary(key));
        Ok(SchemaBinding {
            tables: (0..schema.num_tables())
                .map(|t| find(&self.tables, schema.table_name(t).to_string()))
                .collect::<Result<_, _>>()?,
            columns: (0..schema.num_columns())
                .map(|c| find(&self.columns, schema.qualified_column_name(c)))
                .collect::<Result<_, _>>()?,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graphs::find_number_question as find_number;
    use crate::schema::scientists_schema;

    #[test]
    fn reserved_layout() {
        let v = build_vocab([&find_number()], []).unwrap();
        assert_eq!(v.token(0), PAD);
        assert_eq!(v.id("never-seen"), 1);
        assert_eq!(v.pos_id("ADJ"), 2);
        assert_eq!(v.dep_id("ACL"), 2 + POS_TAGS.len());
        assert_ne!(v.pos_id("AUX"), v.dep_id("AUX"));
        assert_eq!(v.token(v.len() - 6), "find");
    }

    #[test]
    fn deterministic_and_covers_union() {
        let q = find_number();
        let s = scientists_schema();
        let a = build_vocab([&q], [&s]).unwrap();
        let b = build_vocab([&q], [&s]).unwrap();
        assert_eq!(a, b);
        for t in q.tokens.iter().chain(["assigned", "to", "hours"].map(String::from).iter()) {
            assert_ne!(a.id(t), 1, "{t}");
        }
        let json = serde_json::to_string(&a).unwrap();
        assert_eq!(serde_json::from_str::<Vocabulary>(&json).unwrap(), a);
    }

    #[test]
    fn empty_corpus() {
        assert_eq!(build_vocab([], []), Err(GraphError::EmptyCorpus));
        assert_eq!(SchemaVocab::build([]), Err(GraphError::EmptyCorpus));
    }

    #[test]
    fn schema_vocab_binding() {
        let s = scientists_schema();
        let sv = SchemaVocab::build([&s]).unwrap();
        assert_eq!(sv.columns[5], "assigned_to.scientist");
        let b = sv.bind(&s).unwrap();
        assert_eq!(b.tables, vec![0, 1, 2]);
        assert_eq!(b.columns, (0..7).collect::<Vec<_>>());
    }
}
