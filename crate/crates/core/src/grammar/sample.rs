use std::collections::VecDeque;

use rand::seq::SliceRandom;
use rand::Rng;

use super::{Action, Ast, Grammar, NodeKind, TerminalKind};
use crate::schema::Schema;

/// Draws random complete ASTs from the grammar with a depth bound.
///
/// Nodes are expanded breadth-first. A nonterminal picks uniformly among the
/// rules whose shallowest completion still fits under the bound. Column
/// terminals prefer columns of tables already chosen in the tree.
pub struct AstSampler<'g> {
    grammar: &'g Grammar,
    heights: Vec<usize>,
}

impl<'g> AstSampler<'g> {
    pub fn new(grammar: &'g Grammar) -> Self {
        AstSampler { grammar, heights: grammar.min_heights() }
    }

    fn rule_height(&self, rule: usize) -> usize {
        1 + self
            .grammar
            .rule(rule)
            .child_kinds()
            .map(|k| match k {
                NodeKind::Nonterminal(n) => self.heights[n],
                NodeKind::Terminal(_) => 0,
            })
            .max()
            .unwrap_or(0)
    }

    /// Samples a tree of depth at most `max_depth` edges (or the shallowest
    /// possible derivation when the bound is below the grammar minimum).
    pub fn sample<R: Rng>(&self, schema: &Schema, max_depth: usize, rng: &mut R) -> Ast {
        let g = self.grammar;
        let mut ast = Ast::new(g);
        let mut depth = vec![0usize];
        let mut chosen_tables: Vec<usize> = Vec::new();
        let mut queue = VecDeque::from([0usize]);
        while let Some(i) = queue.pop_front() {
            let d = depth[i];
            let action = match ast.node(i).kind {
                NodeKind::Nonterminal(n) => {
                    let budget = max_depth.saturating_sub(d);
                    let rules = g.rules_for(n);
                    let fitting: Vec<usize> =
                        rules.iter().copied().filter(|&r| self.rule_height(r) <= budget).collect();
                    let rule = if fitting.is_empty() {
                        *rules.iter().min_by_key(|&&r| self.rule_height(r)).unwrap()
                    } else {
                        *fitting.choose(rng).unwrap()
                    };
                    Action::ApplyRule(rule)
                }
                NodeKind::Terminal(TerminalKind::Table) => {
                    let t = rng.gen_range(0..schema.num_tables());
                    chosen_tables.push(t);
                    Action::SelectTable(t)
                }
                NodeKind::Terminal(TerminalKind::Column) => {
                    let pool: Vec<usize> = if chosen_tables.is_empty() {
                        (0..schema.num_columns()).collect()
                    } else {
                        (0..schema.num_columns()).filter(|&c| chosen_tables.contains(&schema.column_table(c))).collect()
                    };
                    Action::SelectColumn(*pool.choose(rng).unwrap())
                }
                NodeKind::Terminal(TerminalKind::Value) => Action::EmitValue,
            };
            let kids = ast.expand(i, action, g).expect("sampled action fits");
            for k in kids {
                depth.push(d + 1);
                queue.push_back(k);
            }
        }
        ast
    }
}

/// Convenience wrapper around [`AstSampler`].
pub fn sample_ast<R: Rng>(grammar: &Grammar, schema: &Schema, max_depth: usize, rng: &mut R) -> Ast {
    AstSampler::new(grammar).sample(schema, max_depth, rng)
}
