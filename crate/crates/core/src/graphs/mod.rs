//! Encoder inputs: the Levi-linearized question graph, the typed schema
//! graph, and the vocabularies both draw their node features from.

mod question;
mod schema_graph;
mod vocab;

use thiserror::Error;

pub use question::{build_question_graph, find_number_question, QuestionAnnotation, QuestionGraph};
pub use schema_graph::{build_schema_graph, SchemaGraph, SchemaRelation};
pub use vocab::{build_vocab, name_tokens, SchemaBinding, SchemaVocab, Vocabulary};

/// Part-of-speech tags. The universal tag set, plus the two Penn tags
/// (`VB`, `NN`) that appear in hand-annotated examples.
pub const POS_TAGS: [&str; 13] =
    ["ADJ", "ADV", "INTJ", "NOUN", "PROPN", "VERB", "ADP", "AUX", "CCONJ", "DET", "NUM", "VB", "NN"];

/// Dependency relation labels.
pub const DEP_TAGS: [&str; 18] = [
    "ACL", "ADVCL", "ADVMOD", "AMOD", "APPOS", "AUX", "CC", "CCOMP", "COMP", "CONJ", "COP", "CSUBJ", "DET", "IOBJ",
    "NMOD", "NSUBJ", "NUMMOD", "OBJ",
];

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum GraphError {
    #[error("unknown part-of-speech tag `{0}`")]
    UnknownPosTag(String),
    #[error("unknown dependency label `{0}`")]
    UnknownDepLabel(String),
    #[error("{what} index {index} out of range for {len} tokens")]
    IndexOutOfRange { what: &'static str, index: usize, len: usize },
    #[error("{tokens} tokens but {tags} part-of-speech tags")]
    TagCountMismatch { tokens: usize, tags: usize },
    #[error("question has no tokens")]
    EmptyQuestion,
    #[error("empty corpus")]
    EmptyCorpus,
    #[error("schema element `{0}` is not in the vocabulary")]
    NotInVocabulary(String),
}
