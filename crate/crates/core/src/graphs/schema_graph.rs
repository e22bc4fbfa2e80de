use crate::schema::{ColumnType, Schema};

use super::{name_tokens, Vocabulary};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum SchemaRelation {
    HasColumn,
    IsPrimaryKey,
    IsForeignKey,
    ColumnType,
}

impl SchemaRelation {
    pub const ALL: [SchemaRelation; 4] = [
        SchemaRelation::HasColumn,
        SchemaRelation::IsPrimaryKey,
        SchemaRelation::IsForeignKey,
        SchemaRelation::ColumnType,
    ];

    pub fn index(self) -> usize {
        self as usize
    }
}

/// Typed schema graph. Nodes are tables, then columns (schema-local flat
/// order), then one node per column type literal in first-use order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SchemaGraph {
    pub num_tables: usize,
    pub num_columns: usize,
    pub type_nodes: Vec<ColumnType>,
    /// Vocabulary ids of each node's name pieces.
    pub node_tokens: Vec<Vec<usize>>,
    /// Directed `(from, to, relation)` edges.
    pub edges: Vec<(usize, usize, SchemaRelation)>,
}

impl SchemaGraph {
    pub fn num_nodes(&self) -> usize {
        self.node_tokens.len()
    }

    pub fn column_node(&self, column: usize) -> usize {
        self.num_tables + column
    }
}

pub fn build_schema_graph(schema: &Schema, vocab: &Vocabulary) -> SchemaGraph {
    let nt = schema.num_tables();
    let nc = schema.num_columns();
    let mut node_tokens: Vec<Vec<usize>> = Vec::with_capacity(nt + nc);
    for t in 0..nt {
        node_tokens.push(vocab.ids(&name_tokens(schema.table_name(t))));
    }
    for c in 0..nc {
        node_tokens.push(vocab.ids(&name_tokens(&schema.column(c).name)));
    }
    let mut edges = Vec::new();
    let mut type_nodes: Vec<ColumnType> = Vec::new();
    for c in 0..nc {
        let t = schema.column_table(c);
        let col = schema.column(c);
        edges.push((t, nt + c, SchemaRelation::HasColumn));
        if col.primary_key {
            edges.push((t, nt + c, SchemaRelation::IsPrimaryKey));
        }
        let ty = match type_nodes.iter().position(|&x| x == col.ty) {
            Some(i) => i,
            None => {
                type_nodes.push(col.ty);
                type_nodes.len() - 1
            }
        };
        edges.push((nt + c, nt + nc + ty, SchemaRelation::ColumnType));
    }
    for &(from, to) in schema.foreign_keys() {
        edges.push((nt + from, nt + to, SchemaRelation::IsForeignKey));
    }
    node_tokens.extend(type_nodes.iter().map(|&ty| vec![vocab.type_id(ty)]));
    SchemaGraph { num_tables: nt, num_columns: nc, type_nodes, node_tokens, edges }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graphs::build_vocab;
    use crate::schema::{scientists_schema, Column, Table};

    #[test]
    fn scientists_graph() {
        let s = scientists_schema();
        let vocab = build_vocab([], [&s]).unwrap();
        let g = build_schema_graph(&s, &vocab);
        assert_eq!((g.num_tables, g.num_columns), (3, 7));
        assert_eq!(g.type_nodes, vec![ColumnType::Number, ColumnType::Text]);
        assert_eq!(g.num_nodes(), 12);
        let count = |r| g.edges.iter().filter(|e| e.2 == r).count();
        assert_eq!(count(SchemaRelation::HasColumn), 7);
        assert_eq!(count(SchemaRelation::IsPrimaryKey), 4);
        assert_eq!(count(SchemaRelation::IsForeignKey), 2);
        assert_eq!(count(SchemaRelation::ColumnType), 7);
        assert!(g.edges.contains(&(g.column_node(5), g.column_node(0), SchemaRelation::IsForeignKey)));
        assert!(g.edges.contains(&(0, g.column_node(0), SchemaRelation::IsPrimaryKey)));
        // assigned_to -> ["assigned", "to"]
        assert_eq!(g.node_tokens[2], vocab.ids(&["assigned".into(), "to".into()]));
    }

    #[test]
    fn one_table_one_column() {
        let s = Schema::new(
            vec![Table {
                name: "t".into(),
                columns: vec![Column { name: "c".into(), ty: ColumnType::Time, primary_key: false }],
            }],
            vec![],
        )
        .unwrap();
        let vocab = build_vocab([], [&s]).unwrap();
        let g = build_schema_graph(&s, &vocab);
        assert_eq!(g.num_nodes(), 3);
        assert_eq!(g.edges, vec![(0, 1, SchemaRelation::HasColumn), (1, 2, SchemaRelation::ColumnType)]);
    }
}
