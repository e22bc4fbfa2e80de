use std::collections::VecDeque;

use super::{ActionSpace, LayerState, Model, ModelError, QuestionInput, StepInputs};
use crate::autodiff::{log_softmax, Graph, Tensor};
use crate::grammar::{Action, Ast, Grammar, NodeKind, TerminalKind};
use crate::graphs::SchemaBinding;
use crate::schema::Schema;
use crate::serialize::vector_len;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SearchMode {
    Greedy,
    Beam(usize),
}

impl SearchMode {
    /// Width 1 is greedy search.
    pub fn from_width(width: usize) -> SearchMode {
        if width == 1 {
            SearchMode::Greedy
        } else {
            SearchMode::Beam(width)
        }
    }

    fn width(self) -> Result<usize, ModelError> {
        match self {
            SearchMode::Greedy => Ok(1),
            SearchMode::Beam(0) => Err(ModelError::BeamWidth),
            SearchMode::Beam(w) => Ok(w),
        }
    }
}

#[derive(Debug, Clone)]
pub struct Generated {
    pub ast: Ast,
    /// Schema-local actions in BFS order.
    pub actions: Vec<Action>,
    pub log_prob: f64,
    /// Global ids chosen by the selection heads.
    pub top_tables: Vec<usize>,
    pub top_columns: Vec<usize>,
}

/// Flat-action keep-mask for expanding a node of `kind`.
///
/// Columns are restricted to tables already selected in the tree
/// (`selected_tables`, schema-local) when there are any, else to the schema.
pub fn legal_action_mask(
    grammar: &Grammar,
    space: &ActionSpace,
    kind: NodeKind,
    schema: &Schema,
    binding: &SchemaBinding,
    selected_tables: &[usize],
) -> Vec<bool> {
    let mut keep = vec![false; space.len()];
    match kind {
        NodeKind::Nonterminal(n) => {
            for &r in grammar.rules_for(n) {
                keep[r] = true;
            }
        }
        NodeKind::Terminal(TerminalKind::Table) => {
            for &t in &binding.tables {
                keep[space.table(t)] = true;
            }
        }
        NodeKind::Terminal(TerminalKind::Column) => {
            for c in 0..schema.num_columns() {
                if selected_tables.is_empty() || selected_tables.contains(&schema.column_table(c)) {
                    keep[space.column(binding.columns[c])] = true;
                }
            }
        }
        NodeKind::Terminal(TerminalKind::Value) => keep[space.value()] = true,
    }
    keep
}

#[derive(Clone)]
struct Hyp {
    ast: Ast,
    queue: VecDeque<usize>,
    actions: Vec<Action>,
    log_prob: f64,
    states: Vec<(Tensor, Tensor, Tensor)>,
    selected: Vec<usize>,
    prev: usize,
}

impl Model {
    /// Adjacency vector of the next node, or zeros when its parent lies
    /// outside the window.
    fn frontier_adjacency(&self, hyp: &Hyp, node: usize) -> Vec<u8> {
        let t = hyp.actions.len();
        let len = vector_len(t, self.config.window);
        let mut v = vec![0u8; len];
        if let Some(p) = hyp.ast.parent(node) {
            let dist = t - p;
            if dist <= len {
                v[len - dist] = 1;
            }
        }
        v
    }

    /// Log-probabilities over flat actions for the frontier head of `hyp`,
    /// plus the updated decoder states.
    fn step(&self, hyp: &Hyp, memory: &[(Tensor, Tensor)]) -> (Vec<f64>, Vec<(Tensor, Tensor, Tensor)>, NodeKind) {
        let node = *hyp.queue.front().expect("live hypotheses have a frontier");
        let kind = hyp.ast.node(node).kind;
        let w = self.config.window;
        let inputs = StepInputs {
            start: hyp.actions.len(),
            kinds: vec![self.grammar().kind_index(kind)],
            adjacency: Tensor::new(1, w, super::padded_adjacency(&self.frontier_adjacency(hyp, node), w)),
            prev_actions: vec![hyp.prev],
        };
        let mut g = Graph::new();
        let kv: Vec<_> = memory.iter().map(|(k, v)| (g.input(k.clone()), g.input(v.clone()))).collect();
        let past: Option<Vec<LayerState>> = (!hyp.states.is_empty()).then(|| {
            hyp.states
                .iter()
                .map(|(k, v, b)| LayerState { k: g.input(k.clone()), v: g.input(v.clone()), bias: g.input(b.clone()) })
                .collect()
        });
        let out = self.decoder().forward(&mut g, &self.params, &inputs, &kv, past.as_deref());
        let states =
            out.states.iter().map(|s| (g.value(s.k).clone(), g.value(s.v).clone(), g.value(s.bias).clone())).collect();
        (g.value(out.logits).row_slice(0).to_vec(), states, kind)
    }

    /// Decodes an AST breadth-first under the legality mask.
    pub fn generate(
        &self,
        input: &QuestionInput,
        schema: &Schema,
        mode: SearchMode,
        max_nodes: usize,
    ) -> Result<Generated, ModelError> {
        let width = mode.width()?;
        let grammar = self.grammar();
        let mut g = Graph::new();
        let mem = self.memory(&mut g, &input.question, &input.topology, schema, &input.binding)?;
        let kv = self.decoder().memory_kv(&mut g, &self.params, mem.memory);
        let memory: Vec<(Tensor, Tensor)> = kv.iter().map(|&(k, v)| (g.value(k).clone(), g.value(v).clone())).collect();
        let root = Ast::new(grammar);
        let mut live = vec![Hyp {
            ast: root,
            queue: VecDeque::from([0]),
            actions: Vec::new(),
            log_prob: 0.0,
            states: Vec::new(),
            selected: Vec::new(),
            prev: self.space.start(),
        }];
        let mut finished: Vec<Hyp> = Vec::new();
        while !live.is_empty() && finished.len() < width {
            let mut candidates: Vec<(f64, usize, usize)> = Vec::new();
            let mut stepped = Vec::with_capacity(live.len());
            for (h, hyp) in live.iter().enumerate() {
                let (logits, states, kind) = self.step(hyp, &memory);
                let keep = legal_action_mask(grammar, &self.space, kind, schema, &input.binding, &hyp.selected);
                let lp = log_softmax(&logits, Some(&keep));
                let mut mine: Vec<(f64, usize, usize)> =
                    (0..lp.len()).filter(|&a| keep[a]).map(|a| (hyp.log_prob + lp[a], h, a)).collect();
                mine.sort_by(|x, y| y.0.total_cmp(&x.0).then(x.2.cmp(&y.2)));
                mine.truncate(width);
                candidates.extend(mine);
                stepped.push(states);
            }
            candidates.sort_by(|x, y| y.0.total_cmp(&x.0).then(x.1.cmp(&y.1)).then(x.2.cmp(&y.2)));
            candidates.truncate(width - finished.len());
            let mut next = Vec::with_capacity(candidates.len());
            for (score, h, a) in candidates {
                let mut hyp = live[h].clone();
                let action = self.space.decode(a, &input.binding).ok_or(ModelError::NoLegalAction)?;
                let node = hyp.queue.pop_front().expect("frontier");
                let kids = hyp.ast.expand(node, action, grammar)?;
                hyp.queue.extend(kids);
                if let Action::SelectTable(t) = action {
                    hyp.selected.push(t);
                }
                hyp.actions.push(action);
                hyp.log_prob = score;
                hyp.prev = a;
                hyp.states = stepped[h].clone();
                if hyp.queue.is_empty() {
                    finished.push(hyp);
                } else if hyp.ast.len() <= max_nodes {
                    next.push(hyp);
                }
            }
            live = next;
        }
        let best = finished
            .into_iter()
            .reduce(|a, b| if b.log_prob > a.log_prob { b } else { a })
            .ok_or(ModelError::BudgetExhausted(max_nodes))?;
        Ok(Generated {
            ast: best.ast,
            actions: best.actions,
            log_prob: best.log_prob,
            top_tables: mem.selection.top_tables,
            top_columns: mem.selection.top_columns,
        })
    }
}
