//! Reporting buckets for query difficulty.
//!
//! Features: a join (`FROM` with two or more tables), grouping, ordering,
//! nesting (a subquery under a predicate) and set operations. A query is
//! extra hard when nesting meets grouping or ordering, or when at least two
//! of join, grouping, nesting and set operation occur; hard when it nests
//! or uses a set operation; medium when it joins or groups; otherwise easy.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::grammar::{Action, Ast, Grammar, NodeKind, TerminalKind};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Difficulty {
    Easy,
    Medium,
    Hard,
    Extra,
}

impl Difficulty {
    pub const ALL: [Difficulty; 4] = [Difficulty::Easy, Difficulty::Medium, Difficulty::Hard, Difficulty::Extra];

    pub fn as_str(self) -> &'static str {
        match self {
            Difficulty::Easy => "easy",
            Difficulty::Medium => "medium",
            Difficulty::Hard => "hard",
            Difficulty::Extra => "extra",
        }
    }
}

impl fmt::Display for Difficulty {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct Features {
    pub join: bool,
    pub group: bool,
    pub order: bool,
    pub nest: bool,
    pub setop: bool,
}

pub fn features(ast: &Ast, grammar: &Grammar) -> Features {
    let mut f = Features::default();
    let name = |k: NodeKind| grammar.kind_name(k).to_string();
    for i in 0..ast.len() {
        let node = ast.node(i);
        let Some(Action::ApplyRule(r)) = node.action else { continue };
        let rule = grammar.rule(r);
        match name(node.kind).as_str() {
            "From" => {
                let tables = rule.child_kinds().filter(|&k| k == NodeKind::Terminal(TerminalKind::Table)).count();
                f.join |= tables >= 2;
            }
            "GroupBy" => f.group |= rule.arity() > 0,
            "OrderBy" => f.order |= rule.arity() > 0,
            "Query" => {
                f.setop |= rule.arity() > 1;
                f.nest |= ast.parent(i).is_some_and(|p| name(ast.node(p).kind) != "Root");
            }
            _ => {}
        }
    }
    f
}

pub fn classify(ast: &Ast, grammar: &Grammar) -> Difficulty {
    let f = features(ast, grammar);
    let count = [f.join, f.group, f.nest, f.setop].iter().filter(|&&b| b).count();
    if (f.nest && (f.group || f.order)) || count >= 2 {
        Difficulty::Extra
    } else if f.nest || f.setop {
        Difficulty::Hard
    } else if f.join || f.group {
        Difficulty::Medium
    } else {
        Difficulty::Easy
    }
}
