use serde::{Deserialize, Serialize};

use super::{GraphError, Vocabulary, DEP_TAGS, POS_TAGS};

/// A pre-annotated question: lemmas, one POS tag per token, and dependency
/// arcs `(head, dependent, label)`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QuestionAnnotation {
    pub tokens: Vec<String>,
    pub pos: Vec<String>,
    #[serde(default)]
    pub deps: Vec<(usize, usize, String)>,
}

impl QuestionAnnotation {
    pub fn validate(&self) -> Result<(), GraphError> {
        let n = self.tokens.len();
        if n == 0 {
            return Err(GraphError::EmptyQuestion);
        }
        if self.pos.len() != n {
            return Err(GraphError::TagCountMismatch { tokens: n, tags: self.pos.len() });
        }
        if let Some(tag) = self.pos.iter().find(|t| !POS_TAGS.contains(&t.as_str())) {
            return Err(GraphError::UnknownPosTag(tag.clone()));
        }
        for (h, d, label) in &self.deps {
            for (what, index) in [("head", *h), ("dependent", *d)] {
                if index >= n {
                    return Err(GraphError::IndexOutOfRange { what, index, len: n });
                }
            }
            if !DEP_TAGS.contains(&label.as_str()) {
                return Err(GraphError::UnknownDepLabel(label.clone()));
            }
        }
        Ok(())
    }
}

/// Levi graph of a question. Nodes are numbered tokens first, then one POS
/// node per token, then one relation node per dependency arc.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct QuestionGraph {
    pub num_tokens: usize,
    /// Vocabulary id per node.
    pub node_features: Vec<usize>,
    /// Undirected, unlabeled edges.
    pub edges: Vec<(usize, usize)>,
}

impl QuestionGraph {
    pub fn num_nodes(&self) -> usize {
        self.node_features.len()
    }
}

pub fn build_question_graph(ann: &QuestionAnnotation, vocab: &Vocabulary) -> Result<QuestionGraph, GraphError> {
    ann.validate()?;
    let n = ann.tokens.len();
    let mut node_features = Vec::with_capacity(2 * n + ann.deps.len());
    let mut edges = Vec::with_capacity(n + 2 * ann.deps.len());
    node_features.extend(ann.tokens.iter().map(|t| vocab.id(&t.to_lowercase())));
    for (i, tag) in ann.pos.iter().enumerate() {
        edges.push((i, node_features.len()));
        node_features.push(vocab.pos_id(tag));
    }
    for (h, d, label) in &ann.deps {
        let r = node_features.len();
        node_features.push(vocab.dep_id(label));
        edges.push((*h, r));
        edges.push((*d, r));
    }
    Ok(QuestionGraph { num_tokens: n, node_features, edges })
}

/// "Find the number of all scientists", lemmatized and annotated.
pub fn find_number_question() -> QuestionAnnotation {
    QuestionAnnotation {
        tokens: ["find", "the", "number", "of", "all", "scientist"].map(String::from).to_vec(),
        pos: ["VB", "DET", "NN", "ADP", "DET", "NOUN"].map(String::from).to_vec(),
        deps: vec![(0, 2, "OBJ".into()), (2, 1, "DET".into()), (2, 5, "NMOD".into()), (5, 4, "DET".into())],
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graphs::build_vocab;

    use crate::graphs::find_number_question as find_number;

    fn neighbors(g: &QuestionGraph, i: usize) -> Vec<usize> {
        let mut out: Vec<usize> = g
            .edges
            .iter()
            .filter_map(|&(a, b)| {
                if a == i {
                    Some(b)
                } else if b == i {
                    Some(a)
                } else {
                    None
                }
            })
            .collect();
        out.sort_unstable();
        out
    }

    #[test]
    fn levi_construction_on_the_six_token_question() {
        let ann = find_number();
        let vocab = build_vocab([&ann], []).unwrap();
        let g = build_question_graph(&ann, &vocab).unwrap();
        assert_eq!(g.num_nodes(), 6 + 6 + 4);
        let obj = 12;
        assert_eq!(g.node_features[obj], vocab.dep_id("OBJ"));
        assert_eq!(neighbors(&g, obj), vec![0, 2]);
        assert_eq!(g.node_features[6], vocab.pos_id("VB"));
        assert_eq!(neighbors(&g, 6), vec![0]);
        assert_eq!(g.node_features[8], vocab.pos_id("NN"));
        assert_eq!(neighbors(&g, 8), vec![2]);
        assert_eq!(g.node_features[0], vocab.id("find"));
    }

    #[test]
    fn single_token() {
        let ann = QuestionAnnotation { tokens: vec!["hello".into()], pos: vec!["INTJ".into()], deps: vec![] };
        let vocab = build_vocab([&ann], []).unwrap();
        let g = build_question_graph(&ann, &vocab).unwrap();
        assert_eq!(g.num_nodes(), 2);
        assert_eq!(g.edges, vec![(0, 1)]);
    }

    #[test]
    fn unknown_tags() {
        let mut ann = find_number();
        ann.deps[0].2 = "XYZ".into();
        let vocab = build_vocab([&find_number()], []).unwrap();
        assert_eq!(build_question_graph(&ann, &vocab), Err(GraphError::UnknownDepLabel("XYZ".into())));
        let mut ann = find_number();
        ann.pos[1] = "XYZ".into();
        assert_eq!(ann.validate(), Err(GraphError::UnknownPosTag("XYZ".into())));
    }

    #[test]
    fn index_out_of_range() {
        let mut ann = find_number();
        ann.deps.push((1, 6, "AMOD".into()));
        assert!(matches!(ann.validate(), Err(GraphError::IndexOutOfRange { index: 6, .. })));
    }

    #[test]
    fn json_format() {
        let text = r#"{"tokens":["find","number"],"pos":["VB","NN"],"deps":[[0,1,"OBJ"]]}"#;
        let ann: QuestionAnnotation = serde_json::from_str(text).unwrap();
        assert_eq!(ann.deps, vec![(0, 1, "OBJ".to_string())]);
        assert_eq!(serde_json::to_string(&ann).unwrap(), text);
    }
}
