//! The neural model: graph attention over the question graph, the
//! selection-token encoder, and the BFS action decoder.

mod decoder;
mod encoder;
mod gat;
mod generate;
mod layers;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use decoder::{padded_adjacency, Decoder, DecoderLayer, DecoderOutput, LayerState, StepInputs};
pub use encoder::{fuse, Encoded, Encoder, EncoderLayer, Selection, MAX_QUESTION_TOKENS};
pub use gat::{pool_schema, Gat, GatError, GatGraph, GatLayer};
pub use generate::{legal_action_mask, Generated, SearchMode};
pub use layers::{sinusoid, top_k, Attention, FeedForward, LayerNorm, Linear};

use crate::autodiff::{Graph, ParamId, ParamStore, Tensor, Var};
use crate::grammar::{Action, Ast, AstError, Grammar};
use crate::graphs::{
    build_question_graph, build_schema_graph, GraphError, QuestionAnnotation, QuestionGraph, SchemaBinding,
    SchemaRelation, SchemaVocab, Vocabulary,
};
use crate::schema::Schema;
use crate::serialize::{ActionTrace, SequenceError};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ModelError {
    #[error("question has {0} tokens; expected 1..=1024")]
    QuestionLength(usize),
    #[error("no eligible columns for the selected tables")]
    NoEligibleColumns,
    #[error("generation stopped after {0} nodes with an incomplete tree")]
    BudgetExhausted(usize),
    #[error("no legal action for the frontier node")]
    NoLegalAction,
    #[error("beam width must be at least 1")]
    BeamWidth,
    #[error("invalid model configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error(transparent)]
    Gat(#[from] GatError),
    #[error(transparent)]
    Sequence(#[from] SequenceError),
    #[error(transparent)]
    Ast(#[from] AstError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub d_model: usize,
    pub layers: usize,
    pub heads: usize,
    pub d_ff: usize,
    pub gat_layers: usize,
    pub gat_slope: f64,
    pub k_tables: usize,
    pub k_columns: usize,
    pub window: usize,
    pub max_nodes: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            d_model: 64,
            layers: 2,
            heads: 2,
            d_ff: 128,
            gat_layers: 2,
            gat_slope: 0.2,
            k_tables: 4,
            k_columns: 4,
            window: 30,
            max_nodes: 200,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<(), ModelError> {
        let positive = [
            ("d_model", self.d_model),
            ("layers", self.layers),
            ("heads", self.heads),
            ("d_ff", self.d_ff),
            ("gat_layers", self.gat_layers),
            ("k_tables", self.k_tables),
            ("k_columns", self.k_columns),
            ("window", self.window),
            ("max_nodes", self.max_nodes),
        ];
        if let Some((name, _)) = positive.iter().find(|(_, v)| *v == 0) {
            return Err(ModelError::Config(format!("{name} must be positive")));
        }
        if !self.d_model.is_multiple_of(self.heads) {
            return Err(ModelError::Config(format!(
                "d_model {} is not divisible by heads {}",
                self.d_model, self.heads
            )));
        }
        if !(self.gat_slope.is_finite() && self.gat_slope >= 0.0) {
            return Err(ModelError::Config("gat_slope must be finite and nonnegative".into()));
        }
        Ok(())
    }
}

/// Flat action ids: rules, then global tables, then global columns, then
/// the value action.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ActionSpace {
    pub rules: usize,
    pub tables: usize,
    pub columns: usize,
}

impl ActionSpace {
    pub fn len(&self) -> usize {
        self.rules + self.tables + self.columns + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Row of the action embedding used before the first action.
    pub fn start(&self) -> usize {
        self.len()
    }

    pub fn value(&self) -> usize {
        self.len() - 1
    }

    pub fn table(&self, global: usize) -> usize {
        self.rules + global
    }

    pub fn column(&self, global: usize) -> usize {
        self.rules + self.tables + global
    }

    pub fn encode(&self, action: Action, binding: &SchemaBinding) -> usize {
        match action {
            Action::ApplyRule(r) => r,
            Action::SelectTable(t) => self.table(binding.tables[t]),
            Action::SelectColumn(c) => self.column(binding.columns[c]),
            Action::EmitValue => self.value(),
        }
    }

    /// Maps a flat id back to a schema-local action; `None` for tables or
    /// columns outside the schema.
    pub fn decode(&self, id: usize, binding: &SchemaBinding) -> Option<Action> {
        if id < self.rules {
            Some(Action::ApplyRule(id))
        } else if id < self.rules + self.tables {
            let g = id - self.rules;
            binding.tables.iter().position(|&t| t == g).map(Action::SelectTable)
        } else if id < self.value() {
            let g = id - self.rules - self.tables;
            binding.columns.iter().position(|&c| c == g).map(Action::SelectColumn)
        } else if id == self.value() {
            Some(Action::EmitValue)
        } else {
            None
        }
    }
}

/// An example in model-ready form.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub question: QuestionGraph,
    pub topology: GatGraph,
    pub binding: SchemaBinding,
    pub trace: ActionTrace,
    /// Flat gold action ids.
    pub actions: Vec<usize>,
    /// Global ids of tables and columns referenced by the gold query.
    pub gold_tables: Vec<usize>,
    pub gold_columns: Vec<usize>,
}

/// Question side of an example, without supervision.
#[derive(Debug, Clone)]
pub struct QuestionInput {
    pub question: QuestionGraph,
    pub topology: GatGraph,
    pub binding: SchemaBinding,
}

#[derive(Debug, Clone)]
pub struct Memory {
    pub encoded: Encoded,
    pub selection: Selection,
    pub memory: Var,
}

#[derive(Debug, Clone)]
struct Network {
    embed: ParamId,
    question_gat: Gat,
    schema_gat: Gat,
    encoder: Encoder,
    decoder: Decoder,
}

/// Parameters plus the vocabularies and configuration that give them
/// meaning.
#[derive(Debug, Clone)]
pub struct Model {
    pub config: ModelConfig,
    pub vocab: Vocabulary,
    pub schema_vocab: SchemaVocab,
    pub params: ParamStore,
    space: ActionSpace,
    net: Network,
}

impl Model {
    pub fn new(
        config: ModelConfig,
        vocab: Vocabulary,
        schema_vocab: SchemaVocab,
        seed: u64,
    ) -> Result<Model, ModelError> {
        config.validate()?;
        let grammar = Grammar::builtin();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let d = config.d_model;
        let space = ActionSpace {
            rules: grammar.num_rules(),
            tables: schema_vocab.num_tables(),
            columns: schema_vocab.num_columns(),
        };
        let net = Network {
            embed: store.xavier("embed", vocab.len(), d, &mut rng),
            question_gat: Gat::new(&mut store, "qgat", d, config.gat_layers, config.gat_slope, None, &mut rng),
            schema_gat: Gat::new(
                &mut store,
                "sgat",
                d,
                config.gat_layers,
                config.gat_slope,
                Some(SchemaRelation::ALL.len()),
                &mut rng,
            ),
            encoder: Encoder::new(
                &mut store,
                d,
                config.layers,
                config.heads,
                config.d_ff,
                space.tables,
                space.columns,
                &mut rng,
            ),
            decoder: Decoder::new(
                &mut store,
                d,
                config.layers,
                config.heads,
                config.d_ff,
                grammar.num_kinds(),
                space.len(),
                config.window,
                &mut rng,
            ),
        };
        Ok(Model { config, vocab, schema_vocab, params: store, space, net })
    }

    pub fn grammar(&self) -> &'static Grammar {
        Grammar::builtin()
    }

    pub fn space(&self) -> ActionSpace {
        self.space
    }

    pub fn encoder(&self) -> &Encoder {
        &self.net.encoder
    }

    pub fn decoder(&self) -> &Decoder {
        &self.net.decoder
    }

    pub fn question_gat(&self) -> &Gat {
        &self.net.question_gat
    }

    pub fn question_input(&self, ann: &QuestionAnnotation, schema: &Schema) -> Result<QuestionInput, ModelError> {
        let question = build_question_graph(ann, &self.vocab)?;
        if question.num_tokens > MAX_QUESTION_TOKENS {
            return Err(ModelError::QuestionLength(question.num_tokens));
        }
        let topology = GatGraph::from_question(&question);
        let binding = self.schema_vocab.bind(schema)?;
        Ok(QuestionInput { question, topology, binding })
    }

    pub fn prepare(&self, ann: &QuestionAnnotation, schema: &Schema, gold: &Ast) -> Result<Prepared, ModelError> {
        let input = self.question_input(ann, schema)?;
        let trace = ActionTrace::from_ast(gold, self.config.window)?;
        let actions = trace.actions.iter().map(|&a| self.space.encode(a, &input.binding)).collect();
        let mut gold_tables = Vec::new();
        let mut gold_columns = Vec::new();
        for a in &trace.actions {
            match *a {
                Action::SelectTable(t) => gold_tables.push(input.binding.tables[t]),
                Action::SelectColumn(c) => {
                    gold_columns.push(input.binding.columns[c]);
                    gold_tables.push(input.binding.tables[schema.column_table(c)]);
                }
                _ => {}
            }
        }
        gold_tables.sort_unstable();
        gold_tables.dedup();
        gold_columns.sort_unstable();
        gold_columns.dedup();
        Ok(Prepared {
            question: input.question,
            topology: input.topology,
            binding: input.binding,
            trace,
            actions,
            gold_tables,
            gold_columns,
        })
    }

    /// GAT-refined question token features (`tokens x d`).
    pub fn question_features(&self, g: &mut Graph, question: &QuestionGraph, topology: &GatGraph) -> Var {
        let embed = g.param(&self.params, self.net.embed);
        let x = g.embedding_gather(embed, &question.node_features);
        let h = self.net.question_gat.forward(g, &self.params, x, topology);
        g.slice_rows(h, 0, question.num_tokens)
    }

    /// Encodes the question, selects tables and columns, and builds the
    /// decoder memory.
    pub fn memory(
        &self,
        g: &mut Graph,
        question: &QuestionGraph,
        topology: &GatGraph,
        schema: &Schema,
        binding: &SchemaBinding,
    ) -> Result<Memory, ModelError> {
        let s = &self.params;
        let enc = &self.net.encoder;
        let tokens = self.question_features(g, question, topology);
        let encoded = enc.encode(g, s, tokens)?;
        let (table_logits, table_probs, top_tables) =
            enc.select_tables(g, s, &encoded, &binding.tables, self.config.k_tables);
        let eligible: Vec<usize> = (0..schema.num_columns())
            .filter(|&c| top_tables.contains(&binding.tables[schema.column_table(c)]))
            .map(|c| binding.columns[c])
            .collect();
        let (column_logits, column_mask, column_probs, top_columns) =
            enc.select_columns(g, s, &encoded, &eligible, self.config.k_columns)?;
        let context = enc.schema_context(g, s, &top_tables, &top_columns);
        let memory = fuse(g, encoded.question, context);
        Ok(Memory {
            encoded,
            selection: Selection {
                table_logits,
                table_probs,
                top_tables,
                column_logits,
                column_mask,
                column_probs,
                top_columns,
            },
            memory,
        })
    }

    /// Decoder inputs for the whole gold trace.
    pub fn trace_inputs(&self, prepared: &Prepared) -> StepInputs {
        let g = self.grammar();
        let n = prepared.trace.len();
        let w = self.config.window;
        let mut adjacency = Vec::with_capacity(n * w);
        for v in &prepared.trace.adjacency {
            adjacency.extend(padded_adjacency(v, w));
        }
        let mut prev_actions = Vec::with_capacity(n);
        prev_actions.push(self.space.start());
        prev_actions.extend(prepared.actions.iter().take(n.saturating_sub(1)));
        StepInputs {
            start: 0,
            kinds: prepared.trace.kinds.iter().map(|&k| g.kind_index(k)).collect(),
            adjacency: Tensor::new(n, w, adjacency),
            prev_actions,
        }
    }

    /// Teacher-forced decoder pass; row `t` of the logits scores the action
    /// of node `t`.
    pub fn teacher_forced(&self, g: &mut Graph, prepared: &Prepared, memory: Var) -> DecoderOutput {
        let inputs = self.trace_inputs(prepared);
        let kv = self.net.decoder.memory_kv(g, &self.params, memory);
        self.net.decoder.forward(g, &self.params, &inputs, &kv, None)
    }

    /// Pooled schema-graph embedding (`1 x d`). Diagnostic only.
    pub fn schema_embedding(&self, g: &mut Graph, schema: &Schema) -> Result<Var, ModelError> {
        let sg = build_schema_graph(schema, &self.vocab);
        let topology = GatGraph::from_schema(&sg);
        let mut ids = Vec::new();
        let mut pool = Tensor::zeros(sg.num_nodes(), sg.node_tokens.iter().map(Vec::len).sum());
        for (i, toks) in sg.node_tokens.iter().enumerate() {
            for &t in toks {
                pool.set(i, ids.len(), 1.0 / toks.len() as f64);
                ids.push(t);
            }
        }
        let embed = g.param(&self.params, self.net.embed);
        let x = g.embedding_gather(embed, &ids);
        let pool = g.input(pool);
        let x = g.matmul(pool, x);
        let h = self.net.schema_gat.forward(g, &self.params, x, &topology);
        Ok(pool_schema(g, h)?)
    }

    /// Replaces parameter values by name. Every parameter must be present
    /// with a matching shape.
    pub fn load_params(&mut self, tensors: Vec<(String, Tensor)>) -> Result<(), String> {
        let mut seen = vec![false; self.params.len()];
        for (name, t) in tensors {
            let id = self.params.id(&name).ok_or_else(|| format!("unknown parameter `{name}`"))?;
            let cur = self.params.value(id);
            if cur.shape() != t.shape() {
                return Err(format!("parameter `{name}` has shape {:?}, expected {:?}", t.shape(), cur.shape()));
            }
            *self.params.value_mut(id) = t;
            seen[id.0] = true;
        }
        if let Some(i) = seen.iter().position(|s| !s) {
            return Err(format!("missing parameter `{}`", self.params.name(ParamId(i))));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests;
