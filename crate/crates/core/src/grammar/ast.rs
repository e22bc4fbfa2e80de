use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{Grammar, NodeKind, TerminalKind};
use crate::schema::Schema;

/// One grammar action: how a node of the AST was expanded.
///
/// Table and column indices are schema-local (see [`Schema`]).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Action {
    ApplyRule(usize),
    SelectTable(usize),
    SelectColumn(usize),
    EmitValue,
}

impl Action {
    /// Whether this action may expand a node of `kind`.
    pub fn fits(self, kind: NodeKind, grammar: &Grammar) -> bool {
        match (self, kind) {
            (Action::ApplyRule(r), NodeKind::Nonterminal(n)) => r < grammar.num_rules() && grammar.rule(r).lhs == n,
            (Action::SelectTable(_), NodeKind::Terminal(TerminalKind::Table)) => true,
            (Action::SelectColumn(_), NodeKind::Terminal(TerminalKind::Column)) => true,
            (Action::EmitValue, NodeKind::Terminal(TerminalKind::Value)) => true,
            _ => false,
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum AstError {
    #[error("not a tree: {0}")]
    NotATree(String),
    #[error("node {0} has no applied rule or terminal payload")]
    Incomplete(usize),
    #[error("node {node}: action {action:?} does not fit kind `{kind}`")]
    KindMismatch { node: usize, kind: String, action: Action },
    #[error("node {node}: children do not match rule `{rule}`")]
    RuleMismatch { node: usize, rule: String },
    #[error("node {node}: terminal has children")]
    TerminalWithChildren { node: usize },
    #[error("node {node}: {what} index {index} out of range")]
    IndexOutOfRange { node: usize, what: &'static str, index: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct AstNode {
    pub kind: NodeKind,
    /// `None` while the node is still on the generation frontier.
    pub action: Option<Action>,
}

/// A (possibly partial) syntax tree over a [`Grammar`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Ast {
    nodes: Vec<AstNode>,
    children: Vec<Vec<usize>>,
    parent: Vec<Option<usize>>,
    root: usize,
}

impl Ast {
    /// A single unexpanded node of the grammar's start symbol.
    pub fn new(grammar: &Grammar) -> Ast {
        Ast::with_root(NodeKind::Nonterminal(grammar.start()))
    }

    pub fn with_root(kind: NodeKind) -> Ast {
        Ast { nodes: vec![AstNode { kind, action: None }], children: vec![Vec::new()], parent: vec![None], root: 0 }
    }

    /// Builds a tree from explicit parts, checking the tree shape only.
    pub fn from_parts(nodes: Vec<AstNode>, children: Vec<Vec<usize>>, root: usize) -> Result<Ast, AstError> {
        let n = nodes.len();
        if n == 0 || children.len() != n || root >= n {
            return Err(AstError::NotATree("empty or inconsistent node arrays".into()));
        }
        let mut parent = vec![None; n];
        for (p, ch) in children.iter().enumerate() {
            for &c in ch {
                if c >= n {
                    return Err(AstError::NotATree(format!("child index {c} out of range")));
                }
                if c == root {
                    return Err(AstError::NotATree("root has a parent".into()));
                }
                if parent[c].replace(p).is_some() {
                    return Err(AstError::NotATree(format!("node {c} has two parents")));
                }
            }
        }
        // Reachability from the root rules out cycles among non-root nodes.
        let mut seen = vec![false; n];
        let mut stack = vec![root];
        while let Some(i) = stack.pop() {
            if std::mem::replace(&mut seen[i], true) {
                return Err(AstError::NotATree(format!("cycle through node {i}")));
            }
            stack.extend(children[i].iter().copied());
        }
        if let Some(i) = seen.iter().position(|s| !s) {
            return Err(AstError::NotATree(format!("node {i} unreachable from root")));
        }
        Ok(Ast { nodes, children, parent, root })
    }

    pub fn root(&self) -> usize {
        self.root
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn node(&self, i: usize) -> &AstNode {
        &self.nodes[i]
    }

    pub fn nodes(&self) -> &[AstNode] {
        &self.nodes
    }

    pub fn children(&self, i: usize) -> &[usize] {
        &self.children[i]
    }

    pub fn children_lists(&self) -> &[Vec<usize>] {
        &self.children
    }

    pub fn parent(&self, i: usize) -> Option<usize> {
        self.parent[i]
    }

    pub fn is_complete(&self) -> bool {
        self.nodes.iter().all(|n| n.action.is_some())
    }

    /// Expands node `i` with `action`, appending one child per non-keyword
    /// symbol of the rule. Returns the new child indices.
    pub fn expand(&mut self, i: usize, action: Action, grammar: &Grammar) -> Result<Vec<usize>, AstError> {
        let kind = self.nodes[i].kind;
        if !action.fits(kind, grammar) {
            return Err(AstError::KindMismatch { node: i, kind: grammar.kind_name(kind).to_string(), action });
        }
        if self.nodes[i].action.is_some() {
            return Err(AstError::NotATree(format!("node {i} expanded twice")));
        }
        self.nodes[i].action = Some(action);
        let mut new = Vec::new();
        if let Action::ApplyRule(r) = action {
            for k in grammar.rule(r).child_kinds() {
                let id = self.nodes.len();
                self.nodes.push(AstNode { kind: k, action: None });
                self.children.push(Vec::new());
                self.parent.push(Some(i));
                self.children[i].push(id);
                new.push(id);
            }
        }
        Ok(new)
    }

    /// Checks rule conformance of every node, completeness, and (when a
    /// schema is given) that terminal payloads index into it.
    pub fn validate(&self, grammar: &Grammar, schema: Option<&Schema>) -> Result<(), AstError> {
        for (i, node) in self.nodes.iter().enumerate() {
            let action = node.action.ok_or(AstError::Incomplete(i))?;
            if !action.fits(node.kind, grammar) {
                return Err(AstError::KindMismatch { node: i, kind: grammar.kind_name(node.kind).to_string(), action });
            }
            match action {
                Action::ApplyRule(r) => {
                    let rule = grammar.rule(r);
                    let expected: Vec<NodeKind> = rule.child_kinds().collect();
                    let actual: Vec<NodeKind> = self.children[i].iter().map(|&c| self.nodes[c].kind).collect();
                    if expected != actual {
                        return Err(AstError::RuleMismatch { node: i, rule: grammar.describe_rule(rule) });
                    }
                }
                _ => {
                    if !self.children[i].is_empty() {
                        return Err(AstError::TerminalWithChildren { node: i });
                    }
                    if let Some(s) = schema {
                        match action {
                            Action::SelectTable(t) if t >= s.num_tables() => {
                                return Err(AstError::IndexOutOfRange { node: i, what: "table", index: t })
                            }
                            Action::SelectColumn(c) if c >= s.num_columns() => {
                                return Err(AstError::IndexOutOfRange { node: i, what: "column", index: c })
                            }
                            _ => {}
                        }
                    }
                }
            }
        }
        if self.nodes[self.root].kind != NodeKind::Nonterminal(grammar.start()) {
            return Err(AstError::NotATree("root is not the start symbol".into()));
        }
        Ok(())
    }

    /// Equality of the trees rooted at the two roots, ignoring node numbering.
    pub fn structurally_equal(&self, other: &Ast) -> bool {
        let mut stack = vec![(self.root, other.root)];
        while let Some((a, b)) = stack.pop() {
            if self.nodes[a] != other.nodes[b] || self.children[a].len() != other.children[b].len() {
                return false;
            }
            stack.extend(self.children[a].iter().copied().zip(other.children[b].iter().copied()));
        }
        true
    }

    /// Maximum number of edges on a root-to-leaf path.
    pub fn depth(&self) -> usize {
        let mut best = 0;
        let mut stack = vec![(self.root, 0usize)];
        while let Some((i, d)) = stack.pop() {
            best = best.max(d);
            stack.extend(self.children[i].iter().map(|&c| (c, d + 1)));
        }
        best
    }

    /// Indices of the subtree rooted at `i` in preorder.
    pub fn preorder_from(&self, i: usize) -> Vec<usize> {
        let mut out = Vec::new();
        let mut stack = vec![i];
        while let Some(n) = stack.pop() {
            out.push(n);
            stack.extend(self.children[n].iter().rev().copied());
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> Grammar {
        Grammar::load("S := A A\nA := <value> | %empty").unwrap()
    }

    #[test]
    fn expand_builds_children_in_rule_order() {
        let g = tiny();
        let mut ast = Ast::new(&g);
        let kids = ast.expand(0, Action::ApplyRule(0), &g).unwrap();
        assert_eq!(kids, vec![1, 2]);
        let v = ast.expand(1, Action::ApplyRule(1), &g).unwrap();
        ast.expand(v[0], Action::EmitValue, &g).unwrap();
        assert!(!ast.is_complete());
        assert_eq!(ast.validate(&g, None), Err(AstError::Incomplete(2)));
        ast.expand(2, Action::ApplyRule(2), &g).unwrap();
        ast.validate(&g, None).unwrap();
        assert_eq!(ast.depth(), 2);
    }

    #[test]
    fn expand_rejects_wrong_kind() {
        let g = tiny();
        let mut ast = Ast::new(&g);
        assert!(matches!(ast.expand(0, Action::ApplyRule(1), &g), Err(AstError::KindMismatch { .. })));
        assert!(ast.expand(0, Action::EmitValue, &g).is_err());
    }

    #[test]
    fn from_parts_rejects_non_trees() {
        let leaf = AstNode { kind: NodeKind::Terminal(TerminalKind::Value), action: Some(Action::EmitValue) };
        let two_parents = Ast::from_parts(vec![leaf; 3], vec![vec![1, 2], vec![2], vec![]], 0);
        assert!(matches!(two_parents, Err(AstError::NotATree(_))));
        let cycle = Ast::from_parts(vec![leaf; 3], vec![vec![1], vec![2], vec![1]], 0);
        assert!(cycle.is_err());
        let orphan = Ast::from_parts(vec![leaf; 2], vec![vec![], vec![]], 0);
        assert!(orphan.is_err());
        assert!(Ast::from_parts(vec![leaf; 2], vec![vec![1], vec![]], 0).is_ok());
    }

    #[test]
    fn validate_detects_rule_mismatch() {
        let g = tiny();
        let nodes = vec![
            AstNode { kind: NodeKind::Nonterminal(0), action: Some(Action::ApplyRule(0)) },
            AstNode { kind: NodeKind::Nonterminal(1), action: Some(Action::ApplyRule(2)) },
        ];
        let ast = Ast::from_parts(nodes, vec![vec![1], vec![]], 0).unwrap();
        assert!(matches!(ast.validate(&g, None), Err(AstError::RuleMismatch { node: 0, .. })));
    }

    #[test]
    fn structural_equality_ignores_numbering() {
        let g = tiny();
        let mut a = Ast::new(&g);
        a.expand(0, Action::ApplyRule(0), &g).unwrap();
        a.expand(1, Action::ApplyRule(2), &g).unwrap();
        a.expand(2, Action::ApplyRule(1), &g).unwrap();
        a.expand(3, Action::EmitValue, &g).unwrap();

        let s = AstNode { kind: NodeKind::Nonterminal(0), action: Some(Action::ApplyRule(0)) };
        let empty_a = AstNode { kind: NodeKind::Nonterminal(1), action: Some(Action::ApplyRule(2)) };
        let val_a = AstNode { kind: NodeKind::Nonterminal(1), action: Some(Action::ApplyRule(1)) };
        let v = AstNode { kind: NodeKind::Terminal(TerminalKind::Value), action: Some(Action::EmitValue) };
        let b = Ast::from_parts(vec![v, val_a, s, empty_a], vec![vec![], vec![0], vec![3, 1], vec![]], 2).unwrap();
        assert!(a.structurally_equal(&b));
        assert!(b.structurally_equal(&a));
    }
}
