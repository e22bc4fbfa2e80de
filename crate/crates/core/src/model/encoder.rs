use rand::Rng;

use super::layers::{sinusoid, top_k, Attention, FeedForward, LayerNorm, Linear};
use super::ModelError;
use crate::autodiff::{Axis, Graph, Mask, ParamId, ParamStore, Var};

/// Longest accepted question, in tokens.
pub const MAX_QUESTION_TOKENS: usize = 1024;

#[derive(Debug, Clone)]
pub struct EncoderLayer {
    pub attn: Attention,
    pub ln1: LayerNorm,
    pub ffn: FeedForward,
    pub ln2: LayerNorm,
}

/// Transformer encoder over question tokens with two prepended selection
/// tokens, plus the table/column selection heads and schema fusion.
#[derive(Debug, Clone)]
pub struct Encoder {
    pub z_tables: ParamId,
    pub z_columns: ParamId,
    pub layers: Vec<EncoderLayer>,
    pub table_head: Linear,
    pub column_head: Linear,
    pub table_embed: ParamId,
    pub column_embed: ParamId,
    pub fuse: Linear,
}

/// Encoder output. Row 0 of `states` is the table token, row 1 the column
/// token, the rest are question tokens.
#[derive(Debug, Clone)]
pub struct Encoded {
    pub states: Var,
    pub tables: Var,
    pub columns: Var,
    pub question: Var,
    /// Attention weights per layer and head.
    pub attention: Vec<Vec<Var>>,
}

#[derive(Debug, Clone)]
pub struct Selection {
    pub table_logits: Var,
    pub table_probs: Var,
    /// Global table ids, best first.
    pub top_tables: Vec<usize>,
    pub column_logits: Var,
    /// Keep-mask over global columns: columns of the top tables.
    pub column_mask: Mask,
    pub column_probs: Var,
    /// Global column ids, best first.
    pub top_columns: Vec<usize>,
}

impl Encoder {
    #[allow(clippy::too_many_arguments)]
    pub fn new<R: Rng>(
        store: &mut ParamStore,
        d: usize,
        layers: usize,
        heads: usize,
        d_ff: usize,
        num_tables: usize,
        num_columns: usize,
        rng: &mut R,
    ) -> Encoder {
        Encoder {
            z_tables: store.xavier("enc.z_tables", 1, d, rng),
            z_columns: store.xavier("enc.z_columns", 1, d, rng),
            layers: (0..layers)
                .map(|l| EncoderLayer {
                    attn: Attention::new(store, &format!("enc.{l}.attn"), d, heads, rng),
                    ln1: LayerNorm::new(store, &format!("enc.{l}.ln1"), d),
                    ffn: FeedForward::new(store, &format!("enc.{l}.ffn"), d, d_ff, rng),
                    ln2: LayerNorm::new(store, &format!("enc.{l}.ln2"), d),
                })
                .collect(),
            table_head: Linear::new(store, "enc.table_head", d, num_tables, rng),
            column_head: Linear::new(store, "enc.column_head", d, num_columns, rng),
            table_embed: store.xavier("enc.table_embed", num_tables, d, rng),
            column_embed: store.xavier("enc.column_embed", num_columns, d, rng),
            fuse: Linear::new(store, "enc.fuse", 2 * d, d, rng),
        }
    }

    /// Runs the post-norm encoder stack over `tokens` (`n x d`).
    pub fn encode(&self, g: &mut Graph, s: &ParamStore, tokens: Var) -> Result<Encoded, ModelError> {
        let [n, d] = g.shape(tokens);
        if n == 0 || n > MAX_QUESTION_TOKENS {
            return Err(ModelError::QuestionLength(n));
        }
        let zt = g.param(s, self.z_tables);
        let zc = g.param(s, self.z_columns);
        let x = g.concat(&[zt, zc, tokens], Axis::Rows);
        let pos = g.input(sinusoid(0, n + 2, d));
        let mut x = g.add(x, pos);
        let mut attention = Vec::with_capacity(self.layers.len());
        for layer in &self.layers {
            let (k, v) = layer.attn.keys(g, s, x);
            let (a, w) = layer.attn.forward(g, s, x, k, v, None, None);
            attention.push(w);
            let r = g.add(x, a);
            x = layer.ln1.forward(g, s, r);
            let f = layer.ffn.forward(g, s, x);
            let r = g.add(x, f);
            x = layer.ln2.forward(g, s, r);
        }
        Ok(Encoded {
            states: x,
            tables: g.slice_rows(x, 0, 1),
            columns: g.slice_rows(x, 1, 1),
            question: g.slice_rows(x, 2, n),
            attention,
        })
    }

    /// Table distribution over the global vocabulary and the `k` best tables
    /// among `candidates` (the current schema's tables).
    pub fn select_tables(
        &self,
        g: &mut Graph,
        s: &ParamStore,
        enc: &Encoded,
        candidates: &[usize],
        k: usize,
    ) -> (Var, Var, Vec<usize>) {
        let logits = self.table_head.forward(g, s, enc.tables);
        let probs = g.softmax_masked(logits, None);
        let top = top_k(g.value(probs).data(), candidates, k);
        (logits, probs, top)
    }

    /// Column distribution restricted to `eligible` global columns and the
    /// `k` best among them.
    pub fn select_columns(
        &self,
        g: &mut Graph,
        s: &ParamStore,
        enc: &Encoded,
        eligible: &[usize],
        k: usize,
    ) -> Result<(Var, Mask, Var, Vec<usize>), ModelError> {
        if eligible.is_empty() {
            return Err(ModelError::NoEligibleColumns);
        }
        let logits = self.column_head.forward(g, s, enc.columns);
        let cols = g.shape(logits)[1];
        let mut mask = Mask::new(1, cols, vec![false; cols]);
        for &c in eligible {
            mask.set(0, c, true);
        }
        let probs = g.softmax_masked(logits, Some(&mask));
        let top = top_k(g.value(probs).data(), eligible, k);
        Ok((logits, mask, probs, top))
    }

    /// Mean of the selected table embeddings and of the selected column
    /// embeddings, concatenated and projected to `1 x d`.
    pub fn schema_context(&self, g: &mut Graph, s: &ParamStore, tables: &[usize], columns: &[usize]) -> Var {
        let et = g.param(s, self.table_embed);
        let ec = g.param(s, self.column_embed);
        let t = g.embedding_gather(et, tables);
        let c = g.embedding_gather(ec, columns);
        let t = g.mean_pool(t, Axis::Rows);
        let c = g.mean_pool(c, Axis::Rows);
        let cat = g.concat(&[t, c], Axis::Cols);
        self.fuse.forward(g, s, cat)
    }
}

/// Decoder memory: the schema context added to every question row.
pub fn fuse(g: &mut Graph, question: Var, context: Var) -> Var {
    g.add_row(question, context)
}
