//! Seeded property cases shared by the `check` subcommand and the
//! acceptance suite. Each case is a pure function of its seed.

use std::fmt;

use rand::prelude::*;
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{check_gradients, GradCheck, GradCheckReport, Graph, ParamStore, Target, Tensor, Var};
use crate::corpus::{domain_schemas, generate_corpus, CorpusConfig};
use crate::grammar::{parse_sql, render_sql, sample_ast, Action, Ast, Grammar};
use crate::graphs::{build_vocab, QuestionAnnotation, SchemaVocab, DEP_TAGS, POS_TAGS};
use crate::model::{
    fuse, legal_action_mask, ActionSpace, Decoder, Encoder, Gat, GatGraph, Model, ModelConfig, ModelError, SearchMode,
    StepInputs,
};
use crate::schema::{scientists_schema, Schema};
use crate::serialize::{max_parent_distance, sequence_to_tree, tree_to_sequence, ActionTrace};
use crate::train::example_loss;

/// Depth bound for sampled ASTs.
pub const SAMPLE_DEPTH: usize = 8;
/// Node bound for random trees.
pub const TREE_NODES: usize = 50;
/// BFS window.
pub const WINDOW: usize = 30;

/// Seed of case `i` in a suite seeded with `seed`.
pub fn case_seed(seed: u64, i: u64) -> u64 {
    seed.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(i)
}

fn rng_for(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// The corpus pool plus the scientists fixture.
pub fn schema_pool() -> Vec<Schema> {
    let mut pool: Vec<Schema> = domain_schemas().into_iter().map(|(_, s)| s).collect();
    pool.push(scientists_schema());
    pool
}

/// `parse_sql(render_sql(a)) == a` for a sampled AST; the action trace of
/// the same AST rebuilds it when its parents fit the window.
pub fn grammar_roundtrip_case(seed: u64, pool: &[Schema]) -> Result<(), String> {
    let g = Grammar::builtin();
    let mut rng = rng_for(seed);
    let schema = pool.choose(&mut rng).expect("nonempty pool");
    let ast = sample_ast(g, schema, SAMPLE_DEPTH, &mut rng);
    let sql = render_sql(g, &ast, schema).map_err(|e| format!("render: {e}"))?;
    let back = parse_sql(g, &sql, schema).map_err(|e| format!("parse `{sql}`: {e}"))?;
    if back != ast {
        return Err(format!("round trip changed the tree: {sql}"));
    }
    if max_parent_distance(&ast) <= WINDOW {
        let trace = ActionTrace::from_ast(&ast, WINDOW).map_err(|e| e.to_string())?;
        let rebuilt = trace.to_ast(g).map_err(|e| e.to_string())?;
        if rebuilt != ast {
            return Err(format!("action trace changed the tree: {sql}"));
        }
    }
    Ok(())
}

/// Random ordered tree with at most `TREE_NODES` nodes whose BFS parent
/// distance is at most `WINDOW`, under a random labelling. Returns child
/// lists and the root.
pub fn random_tree(rng: &mut ChaCha8Rng) -> (Vec<Vec<usize>>, usize) {
    let n = rng.gen_range(1..=TREE_NODES);
    // Nondecreasing parents make position order a BFS order.
    let mut parent = vec![0usize; n];
    for i in 1..n {
        let lo = if i == 1 { 0 } else { parent[i - 1].max(i.saturating_sub(WINDOW)) };
        parent[i] = rng.gen_range(lo..i);
    }
    let mut label: Vec<usize> = (0..n).collect();
    label.shuffle(rng);
    let mut children = vec![Vec::new(); n];
    for i in 1..n {
        children[label[parent[i]]].push(label[i]);
    }
    (children, label[0])
}

fn shape(children: &[Vec<usize>], root: usize) -> String {
    let mut out = String::from("(");
    for &c in &children[root] {
        out.push_str(&shape(children, c));
    }
    out.push(')');
    out
}

/// Tree -> BFS adjacency vectors -> tree reproduces the ordered shape.
pub fn sequence_roundtrip_case(seed: u64) -> Result<(), String> {
    let mut rng = rng_for(seed);
    let (children, root) = random_tree(&mut rng);
    let seq = tree_to_sequence(&children, root, WINDOW).map_err(|e| e.to_string())?;
    let rebuilt = sequence_to_tree(&seq.vectors, WINDOW).map_err(|e| e.to_string())?;
    if shape(&rebuilt, 0) != shape(&children, root) {
        return Err(format!("{}-node tree rebuilt with a different shape", children.len()));
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Component {
    GatLayer,
    EncoderLayer,
    DecoderLayer,
    FullLoss,
}

impl Component {
    pub const ALL: [Component; 4] =
        [Component::GatLayer, Component::EncoderLayer, Component::DecoderLayer, Component::FullLoss];
}

impl fmt::Display for Component {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Component::GatLayer => "gat layer",
            Component::EncoderLayer => "encoder layer + selection heads",
            Component::DecoderLayer => "decoder layer + structural bias",
            Component::FullLoss => "full loss",
        })
    }
}

fn weighted_sum(g: &mut Graph, x: Var, rng: &mut ChaCha8Rng) -> Var {
    let [r, c] = g.shape(x);
    let w = g.input(Tensor::uniform(r, c, 1.0, rng));
    let p = g.mul(x, w);
    g.sum(p)
}

/// Fills every parameter with fresh uniform noise so zero-initialized
/// biases and gains are exercised too.
fn jitter(store: &mut ParamStore, rng: &mut ChaCha8Rng) {
    let ids: Vec<_> = store.ids().collect();
    for id in ids {
        for x in store.value_mut(id).data_mut() {
            *x += rng.gen_range(-0.3..0.3);
        }
    }
}

fn subset(rng: &mut ChaCha8Rng, n: usize) -> Vec<usize> {
    let k = rng.gen_range(1..=n);
    let mut s = rand::seq::index::sample(rng, n, k).into_vec();
    s.sort_unstable();
    s
}

/// Central-difference check of one randomly drawn instance (`d <= 16`).
pub fn gradient_case(component: Component, seed: u64) -> GradCheckReport {
    let mut rng = rng_for(seed);
    let d = 4 * rng.gen_range(1..=4);
    let heads = 2;
    let opts = GradCheck::default();
    let mut store = ParamStore::new();
    match component {
        Component::GatLayer => {
            let n = rng.gen_range(2..=7);
            let types = 4;
            let gat = Gat::new(&mut store, "gat", d, 1, 0.2, Some(types), &mut rng);
            let x = store.add("x", Tensor::uniform(n, d, 1.0, &mut rng));
            jitter(&mut store, &mut rng);
            let edges: Vec<(usize, usize)> =
                (0..rng.gen_range(1..2 * n)).map(|_| (rng.gen_range(0..n), rng.gen_range(0..n))).collect();
            let kinds: Vec<usize> = edges.iter().map(|_| rng.gen_range(0..types)).collect();
            let graph = GatGraph::new(n, &edges, Some((&kinds, types))).expect("valid graph");
            let wseed = rng.gen();
            check_gradients(
                &mut store,
                |g, s| {
                    let h = g.param(s, x);
                    let (out, _) = gat.layer(g, s, 0, h, &graph);
                    weighted_sum(g, out, &mut rng_for(wseed))
                },
                opts,
                &mut rng,
            )
        }
        Component::EncoderLayer => {
            let (tables, columns) = (5, 9);
            let enc = Encoder::new(&mut store, d, 1, heads, 2 * d, tables, columns, &mut rng);
            let n = rng.gen_range(1..=5);
            let x = store.add("x", Tensor::uniform(n, d, 1.0, &mut rng));
            jitter(&mut store, &mut rng);
            let candidates = subset(&mut rng, tables);
            let eligible = subset(&mut rng, columns);
            let t_target = rng.gen_range(0..tables);
            let c_target = *eligible.choose(&mut rng).expect("nonempty");
            let k1 = rng.gen_range(1..=candidates.len());
            let k2 = rng.gen_range(1..=eligible.len());
            let wseed = rng.gen();
            check_gradients(
                &mut store,
                |g, s| {
                    let h = g.param(s, x);
                    let e = enc.encode(g, s, h).expect("short question");
                    let (tl, _, top) = enc.select_tables(g, s, &e, &candidates, k1);
                    let (cl, mask, _, cols) = enc.select_columns(g, s, &e, &eligible, k2).expect("eligible");
                    let lt = g.cross_entropy(tl, &[Target { row: 0, class: t_target, weight: 1.0 }], None);
                    let lc = g.cross_entropy(cl, &[Target { row: 0, class: c_target, weight: 1.0 }], Some(&mask));
                    let ctx = enc.schema_context(g, s, &top, &cols);
                    let mem = fuse(g, e.question, ctx);
                    let a = weighted_sum(g, mem, &mut rng_for(wseed));
                    let b = g.add(lt, lc);
                    g.add(a, b)
                },
                opts,
                &mut rng,
            )
        }
        Component::DecoderLayer => {
            let (kinds, actions, window) = (6, 11, 5);
            let dec = Decoder::new(&mut store, d, 1, heads, 2 * d, kinds, actions, window, &mut rng);
            let mem_rows = rng.gen_range(1..=4);
            let memory = store.add("memory", Tensor::uniform(mem_rows, d, 1.0, &mut rng));
            jitter(&mut store, &mut rng);
            let m = rng.gen_range(1..=7);
            let adjacency: Vec<f64> = (0..m * window).map(|_| f64::from(rng.gen_range(0..2u8))).collect();
            let mut prev_actions = vec![actions];
            prev_actions.extend((1..m).map(|_| rng.gen_range(0..actions)));
            let inputs = StepInputs {
                start: 0,
                kinds: (0..m).map(|_| rng.gen_range(0..kinds)).collect(),
                adjacency: Tensor::new(m, window, adjacency),
                prev_actions,
            };
            let targets: Vec<Target> =
                (0..m).map(|row| Target { row, class: rng.gen_range(0..actions), weight: 1.0 }).collect();
            check_gradients(
                &mut store,
                |g, s| {
                    let mem = g.param(s, memory);
                    let kv = dec.memory_kv(g, s, mem);
                    let out = dec.forward(g, s, &inputs, &kv, None);
                    g.cross_entropy(out.logits, &targets, None)
                },
                opts,
                &mut rng,
            )
        }
        Component::FullLoss => {
            let corpus =
                generate_corpus(&CorpusConfig { seed, train_examples: 6, dev_examples: 0, ..CorpusConfig::default() })
                    .expect("default corpus");
            let ds = corpus.train;
            let vocab = build_vocab(ds.examples.iter().map(|e| &e.question), ds.schemas.values()).expect("vocab");
            let sv = SchemaVocab::build(ds.schemas.values()).expect("schema vocab");
            let config = ModelConfig {
                d_model: d,
                layers: 1,
                heads,
                d_ff: 2 * d,
                gat_layers: 1,
                k_tables: rng.gen_range(1..=4),
                k_columns: rng.gen_range(1..=4),
                ..ModelConfig::default()
            };
            let mut model = Model::new(config, vocab, sv, seed).expect("valid config");
            jitter(&mut model.params, &mut rng);
            let e = ds.examples.choose(&mut rng).expect("examples");
            let schema = ds.schema(&e.db_id).expect("schema");
            let gold = parse_sql(model.grammar(), &e.sql, schema).expect("gold parses");
            let prepared = model.prepare(&e.question, schema, &gold).expect("trace fits");
            let mut store = model.params.clone();
            let mut scratch = model.clone();
            check_gradients(
                &mut store,
                |g, s| {
                    scratch.params.clone_from(s);
                    example_loss(&scratch, g, &prepared, schema, 0.2).expect("loss").total
                },
                GradCheck { entries_per_param: 4, ..opts },
                &mut rng,
            )
        }
    }
}

/// A small random model over the whole schema pool, shared by the
/// selection and generation cases.
pub struct ProbeModel {
    pub model: Model,
    pub schemas: Vec<Schema>,
    words: Vec<String>,
}

impl ProbeModel {
    pub fn new(seed: u64) -> ProbeModel {
        let config = ModelConfig {
            d_model: 16,
            layers: 1,
            heads: 2,
            d_ff: 32,
            gat_layers: 1,
            k_tables: 2,
            k_columns: 3,
            ..ModelConfig::default()
        };
        ProbeModel::with_config(config, seed)
    }

    pub fn with_config(config: ModelConfig, seed: u64) -> ProbeModel {
        let schemas = schema_pool();
        let words: Vec<String> = ["how", "many", "list", "the", "of", "each", "average", "show", "with", "by"]
            .iter()
            .map(|w| w.to_string())
            .chain(schemas.iter().flat_map(|s| s.tables().iter().map(|t| t.name.clone())))
            .collect();
        let seed_question =
            QuestionAnnotation { tokens: words.clone(), pos: vec!["NOUN".into(); words.len()], deps: vec![] };
        let vocab = build_vocab([&seed_question], schemas.iter()).expect("vocab");
        let sv = SchemaVocab::build(schemas.iter()).expect("schema vocab");
        let model = Model::new(config, vocab, sv, seed).expect("valid config");
        ProbeModel { model, schemas, words }
    }

    /// A random annotated question over the probe vocabulary.
    pub fn question(&self, rng: &mut ChaCha8Rng) -> QuestionAnnotation {
        let n = rng.gen_range(1..=12);
        let tokens = (0..n).map(|_| self.words.choose(rng).expect("words").clone()).collect();
        let pos = (0..n).map(|_| POS_TAGS.choose(rng).expect("tags").to_string()).collect();
        let deps = (0..rng.gen_range(0..n))
            .map(|_| (rng.gen_range(0..n), rng.gen_range(0..n), DEP_TAGS.choose(rng).expect("labels").to_string()))
            .collect();
        QuestionAnnotation { tokens, pos, deps }
    }

    /// Selection invariants on a random question and schema: masked column
    /// probabilities are exactly zero, both distributions sum to one, and
    /// every top column belongs to a top table.
    pub fn selection_case(&self, seed: u64) -> Result<(), String> {
        let mut rng = rng_for(seed);
        let schema = self.schemas.choose(&mut rng).expect("pool");
        let ann = self.question(&mut rng);
        let m = &self.model;
        let input = m.question_input(&ann, schema).map_err(|e| e.to_string())?;
        let mut g = Graph::new();
        let sel = m
            .memory(&mut g, &input.question, &input.topology, schema, &input.binding)
            .map_err(|e| e.to_string())?
            .selection;
        let tp = g.value(sel.table_probs);
        let cp = g.value(sel.column_probs);
        let ts: f64 = tp.data().iter().sum();
        let cs: f64 = cp.data().iter().sum();
        if (ts - 1.0).abs() > 1e-6 || (cs - 1.0).abs() > 1e-6 {
            return Err(format!("distributions sum to {ts} and {cs}"));
        }
        for (c, &p) in cp.data().iter().enumerate() {
            if !sel.column_mask.keep(0, c) && p != 0.0 {
                return Err(format!("masked column {c} has probability {p}"));
            }
        }
        let want = m.config.k_tables.min(schema.num_tables());
        if sel.top_tables.len() != want || sel.top_tables.iter().any(|t| !input.binding.tables.contains(t)) {
            return Err(format!("top tables {:?} outside the schema or of the wrong size", sel.top_tables));
        }
        for &c in &sel.top_columns {
            let local = input.binding.columns.iter().position(|&x| x == c).ok_or("top column outside the schema")?;
            let owner = input.binding.tables[schema.column_table(local)];
            if !sel.top_tables.contains(&owner) {
                return Err(format!("top column {c} belongs to unselected table {owner}"));
            }
        }
        Ok(())
    }

    /// Greedy generation from the (untrained) probe model yields a tree the
    /// grammar validator accepts, or a clean budget error.
    pub fn generation_case(&self, seed: u64, max_nodes: usize) -> Result<(), String> {
        let mut rng = rng_for(seed);
        let schema = self.schemas.choose(&mut rng).expect("pool");
        let ann = self.question(&mut rng);
        let m = &self.model;
        let input = m.question_input(&ann, schema).map_err(|e| e.to_string())?;
        match m.generate(&input, schema, SearchMode::Greedy, max_nodes) {
            Ok(gen) => {
                gen.ast.validate(m.grammar(), Some(schema)).map_err(|e| format!("malformed tree: {e}"))?;
                if gen.ast.len() > max_nodes {
                    return Err(format!("{} nodes exceed the budget {max_nodes}", gen.ast.len()));
                }
                Ok(())
            }
            Err(ModelError::BudgetExhausted(n)) if n == max_nodes => Ok(()),
            Err(e) => Err(e.to_string()),
        }
    }
}

/// Every action of `ast`, replayed in BFS order, is allowed by the
/// inference-time legality mask.
pub fn gold_actions_legal(ast: &Ast, schema: &Schema, model: &Model) -> Result<(), String> {
    let g = model.grammar();
    let binding = model.schema_vocab.bind(schema).map_err(|e| e.to_string())?;
    let space: ActionSpace = model.space();
    let trace = ActionTrace::from_ast(ast, model.config.window).map_err(|e| e.to_string())?;
    let mut selected = Vec::new();
    for (p, (&kind, &action)) in trace.kinds.iter().zip(&trace.actions).enumerate() {
        let keep = legal_action_mask(g, &space, kind, schema, &binding, &selected);
        if !keep[space.encode(action, &binding)] {
            return Err(format!("action {action:?} at position {p} on a {} node is masked", g.kind_name(kind)));
        }
        if let Action::SelectTable(t) = action {
            selected.push(t);
        }
    }
    Ok(())
}

/// Legality of the gold actions of a sampled AST.
pub fn legality_case(probe: &ProbeModel, seed: u64) -> Result<(), String> {
    let mut rng = rng_for(seed);
    let schema = probe.schemas.choose(&mut rng).expect("pool");
    let ast = sample_ast(Grammar::builtin(), schema, SAMPLE_DEPTH, &mut rng);
    if max_parent_distance(&ast) > WINDOW {
        return Ok(());
    }
    gold_actions_legal(&ast, schema, &probe.model)
}
