//! BFS-canonical sequences of adjacency vectors for trees.
//!
//! Under the BFS ordering π the node at position `i >= 1` is described by a
//! binary vector over the `min(i, M)` positions immediately before it, laid
//! out most-recent-last: bit `j` refers to position `i - len + j`, so the last
//! bit is the immediately preceding node. For a tree exactly one bit is set,
//! the one for the parent, provided the parent lies inside the window.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::grammar::{Action, Ast, AstError, AstNode, Grammar, NodeKind};

/// Window of previous nodes an adjacency vector covers.
pub const DEFAULT_WINDOW: usize = 30;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum SequenceError {
    #[error("window size must be at least 1")]
    ZeroWindow,
    #[error("node at position {position} has its parent {distance} positions back, outside window {window}")]
    ParentOutsideWindow { position: usize, distance: usize, window: usize },
    #[error("vector {index}: no parent bit set")]
    NoParentBit { index: usize },
    #[error("vector {index}: more than one parent bit set")]
    MultipleParentBits { index: usize },
    #[error("vector {index}: expected length {expected}, got {actual}")]
    LengthMismatch { index: usize, expected: usize, actual: usize },
    #[error("{vectors} vectors do not describe {nodes} nodes")]
    CountMismatch { vectors: usize, nodes: usize },
    #[error(transparent)]
    Ast(#[from] AstError),
}

/// Breadth-first order from `root`; children are visited in list order.
pub fn bfs_order_tree(children: &[Vec<usize>], root: usize) -> Vec<usize> {
    let mut order = Vec::with_capacity(children.len());
    let mut queue = VecDeque::from([root]);
    while let Some(i) = queue.pop_front() {
        order.push(i);
        queue.extend(children[i].iter().copied());
    }
    order
}

/// The permutation π of an AST: `order[k]` is the node at BFS position `k`.
pub fn bfs_order(ast: &Ast) -> Vec<usize> {
    bfs_order_tree(ast.children_lists(), ast.root())
}

/// Expected length of the adjacency vector of the node at BFS position `i`.
pub fn vector_len(position: usize, window: usize) -> usize {
    position.min(window)
}

/// One-hot adjacency vector for a node at `position` whose parent sits at
/// `parent_position`.
pub fn adjacency_vector(position: usize, parent_position: usize, window: usize) -> Result<Vec<u8>, SequenceError> {
    let len = vector_len(position, window);
    let distance = position - parent_position;
    if distance == 0 || distance > len {
        return Err(SequenceError::ParentOutsideWindow { position, distance, window });
    }
    let mut v = vec![0u8; len];
    v[len - distance] = 1;
    Ok(v)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BfsSequence {
    pub order: Vec<usize>,
    pub vectors: Vec<Vec<u8>>,
    pub window: usize,
}

impl BfsSequence {
    /// Debug form: the adjacency vectors as a JSON array of 0/1 arrays.
    pub fn to_json(&self) -> String {
        serde_json::to_string(&self.vectors).expect("vectors serialize")
    }
}

/// Encodes a tree given as child lists into its BFS adjacency sequence.
pub fn tree_to_sequence(children: &[Vec<usize>], root: usize, window: usize) -> Result<BfsSequence, SequenceError> {
    if window == 0 {
        return Err(SequenceError::ZeroWindow);
    }
    let order = bfs_order_tree(children, root);
    let mut position = vec![0usize; children.len()];
    for (k, &n) in order.iter().enumerate() {
        position[n] = k;
    }
    let mut parent = vec![usize::MAX; children.len()];
    for (p, ch) in children.iter().enumerate() {
        for &c in ch {
            parent[c] = p;
        }
    }
    let vectors = order
        .iter()
        .enumerate()
        .skip(1)
        .map(|(k, &n)| adjacency_vector(k, position[parent[n]], window))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(BfsSequence { order, vectors, window })
}

pub fn graph_to_sequence(ast: &Ast, window: usize) -> Result<BfsSequence, SequenceError> {
    tree_to_sequence(ast.children_lists(), ast.root(), window)
}

/// Rebuilds child lists (indexed by BFS position) from adjacency vectors.
/// Siblings come out in position order, which is their original order.
pub fn sequence_to_tree(vectors: &[Vec<u8>], window: usize) -> Result<Vec<Vec<usize>>, SequenceError> {
    if window == 0 {
        return Err(SequenceError::ZeroWindow);
    }
    let mut children = vec![Vec::new(); vectors.len() + 1];
    for (index, v) in vectors.iter().enumerate() {
        let position = index + 1;
        let expected = vector_len(position, window);
        if v.len() != expected {
            return Err(SequenceError::LengthMismatch { index, expected, actual: v.len() });
        }
        let mut ones = v.iter().enumerate().filter(|(_, &b)| b != 0).map(|(j, _)| j);
        let j = ones.next().ok_or(SequenceError::NoParentBit { index })?;
        if ones.next().is_some() {
            return Err(SequenceError::MultipleParentBits { index });
        }
        children[position - expected + j].push(position);
    }
    Ok(children)
}

/// Rebuilds an AST from its sequence and its nodes listed in BFS order.
pub fn sequence_to_graph(vectors: &[Vec<u8>], window: usize, nodes: &[AstNode]) -> Result<Ast, SequenceError> {
    if nodes.len() != vectors.len() + 1 {
        return Err(SequenceError::CountMismatch { vectors: vectors.len(), nodes: nodes.len() });
    }
    let children = sequence_to_tree(vectors, window)?;
    Ok(Ast::from_parts(nodes.to_vec(), children, 0)?)
}

/// Decoder supervision: per BFS position, the node kind, its adjacency
/// vector (empty for the root), and the action that expands it.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ActionTrace {
    pub kinds: Vec<NodeKind>,
    pub adjacency: Vec<Vec<u8>>,
    pub actions: Vec<Action>,
    pub window: usize,
}

impl ActionTrace {
    /// Serializes a complete AST. Fails when a parent lies outside the window.
    pub fn from_ast(ast: &Ast, window: usize) -> Result<ActionTrace, SequenceError> {
        let seq = graph_to_sequence(ast, window)?;
        let mut kinds = Vec::with_capacity(seq.order.len());
        let mut actions = Vec::with_capacity(seq.order.len());
        for &n in &seq.order {
            let node = ast.node(n);
            kinds.push(node.kind);
            actions.push(node.action.ok_or(AstError::Incomplete(n))?);
        }
        let mut adjacency = Vec::with_capacity(seq.order.len());
        adjacency.push(Vec::new());
        adjacency.extend(seq.vectors);
        Ok(ActionTrace { kinds, adjacency, actions, window })
    }

    pub fn len(&self) -> usize {
        self.actions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.actions.is_empty()
    }

    /// Replays the actions breadth-first, reproducing the AST.
    pub fn to_ast(&self, grammar: &Grammar) -> Result<Ast, AstError> {
        let mut ast = Ast::new(grammar);
        let mut queue = VecDeque::from([0usize]);
        for &action in &self.actions {
            let i = queue.pop_front().ok_or_else(|| AstError::NotATree("more actions than nodes".into()))?;
            queue.extend(ast.expand(i, action, grammar)?);
        }
        if let Some(&i) = queue.front() {
            return Err(AstError::Incomplete(i));
        }
        Ok(ast)
    }
}

/// Largest BFS distance between any node and its parent.
pub fn max_parent_distance(ast: &Ast) -> usize {
    let order = bfs_order(ast);
    let mut position = vec![0usize; ast.len()];
    for (k, &n) in order.iter().enumerate() {
        position[n] = k;
    }
    order.iter().filter_map(|&n| ast.parent(n).map(|p| position[n] - position[p])).max().unwrap_or(0)
}
