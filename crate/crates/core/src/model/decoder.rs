use rand::Rng;

use super::layers::{sinusoid, Attention, FeedForward, LayerNorm, Linear};
use crate::autodiff::{Axis, Graph, Mask, ParamId, ParamStore, Tensor, Var};

#[derive(Debug, Clone)]
pub struct DecoderLayer {
    pub self_attn: Attention,
    /// `d x heads` projections of the type and adjacency embeddings of the
    /// attended position to one scalar bias per head.
    pub u_type: ParamId,
    pub u_adj: ParamId,
    pub ln1: LayerNorm,
    pub cross_attn: Attention,
    pub ln2: LayerNorm,
    pub ffn: FeedForward,
    pub ln3: LayerNorm,
}

/// Transformer decoder over BFS node positions.
#[derive(Debug, Clone)]
pub struct Decoder {
    /// Node-kind embedding.
    pub psi: ParamId,
    /// Adjacency-vector embedding (`window x d`).
    pub phi: ParamId,
    /// Previous-action embedding; the last row is the start action.
    pub omega: ParamId,
    pub layers: Vec<DecoderLayer>,
    pub head_hidden: Linear,
    pub head_out: Linear,
    pub window: usize,
}

/// Inputs for decoder positions `start..start + kinds.len()`.
#[derive(Debug, Clone, PartialEq)]
pub struct StepInputs {
    pub start: usize,
    /// Node-kind indices.
    pub kinds: Vec<usize>,
    /// One row per position: the adjacency vector left-padded with zeros to
    /// the window length, most recent node last.
    pub adjacency: Tensor,
    /// Previous-action rows of the action embedding.
    pub prev_actions: Vec<usize>,
}

impl StepInputs {
    pub fn len(&self) -> usize {
        self.kinds.len()
    }

    pub fn is_empty(&self) -> bool {
        self.kinds.is_empty()
    }
}

/// Left-pads an adjacency vector to `window` entries.
pub fn padded_adjacency(vector: &[u8], window: usize) -> Vec<f64> {
    assert!(vector.len() <= window, "adjacency vector longer than the window");
    let mut row = vec![0.0; window];
    for (k, &b) in vector.iter().enumerate() {
        row[window - vector.len() + k] = b as f64;
    }
    row
}

/// Self-attention keys, values and per-head key biases of one layer.
#[derive(Debug, Clone, Copy)]
pub struct LayerState {
    pub k: Var,
    pub v: Var,
    pub bias: Var,
}

#[derive(Debug, Clone)]
pub struct DecoderOutput {
    /// `positions x |actions|`.
    pub logits: Var,
    pub states: Vec<LayerState>,
    pub self_attention: Vec<Vec<Var>>,
    /// Per layer, the type/adjacency bias matrix (`keys x heads`).
    pub biases: Vec<Var>,
}

impl Decoder {
    #[allow(clippy::too_many_arguments)]
    pub fn new<R: Rng>(
        store: &mut ParamStore,
        d: usize,
        layers: usize,
        heads: usize,
        d_ff: usize,
        kinds: usize,
        actions: usize,
        window: usize,
        rng: &mut R,
    ) -> Decoder {
        Decoder {
            psi: store.xavier("dec.psi", kinds, d, rng),
            phi: store.xavier("dec.phi", window, d, rng),
            omega: store.xavier("dec.omega", actions + 1, d, rng),
            layers: (0..layers)
                .map(|l| DecoderLayer {
                    self_attn: Attention::new(store, &format!("dec.{l}.self"), d, heads, rng),
                    u_type: store.xavier(format!("dec.{l}.u_type"), d, heads, rng),
                    u_adj: store.xavier(format!("dec.{l}.u_adj"), d, heads, rng),
                    ln1: LayerNorm::new(store, &format!("dec.{l}.ln1"), d),
                    cross_attn: Attention::new(store, &format!("dec.{l}.cross"), d, heads, rng),
                    ln2: LayerNorm::new(store, &format!("dec.{l}.ln2"), d),
                    ffn: FeedForward::new(store, &format!("dec.{l}.ffn"), d, d_ff, rng),
                    ln3: LayerNorm::new(store, &format!("dec.{l}.ln3"), d),
                })
                .collect(),
            head_hidden: Linear::new(store, "dec.head.1", d, d, rng),
            head_out: Linear::new(store, "dec.head.2", d, actions, rng),
            window,
        }
    }

    /// Type, adjacency and previous-action embeddings of the positions.
    pub fn embed(&self, g: &mut Graph, s: &ParamStore, inputs: &StepInputs) -> (Var, Var, Var) {
        let psi = g.param(s, self.psi);
        let phi = g.param(s, self.phi);
        let omega = g.param(s, self.omega);
        let ty = g.embedding_gather(psi, &inputs.kinds);
        let adj = g.input(inputs.adjacency.clone());
        let adj = g.matmul(adj, phi);
        let prev = g.embedding_gather(omega, &inputs.prev_actions);
        (ty, adj, prev)
    }

    /// Cross-attention keys and values of `memory`, per layer.
    pub fn memory_kv(&self, g: &mut Graph, s: &ParamStore, memory: Var) -> Vec<(Var, Var)> {
        self.layers.iter().map(|l| l.cross_attn.keys(g, s, memory)).collect()
    }

    /// Runs the decoder over new positions, attending to `past` states of
    /// earlier positions when given.
    pub fn forward(
        &self,
        g: &mut Graph,
        s: &ParamStore,
        inputs: &StepInputs,
        memory: &[(Var, Var)],
        past: Option<&[LayerState]>,
    ) -> DecoderOutput {
        let m = inputs.len();
        assert!(m > 0, "decoder called with no positions");
        let (ty, adj, prev) = self.embed(g, s, inputs);
        let d = g.shape(ty)[1];
        let pos = g.input(sinusoid(inputs.start, m, d));
        let x = g.add(ty, adj);
        let x = g.add(x, prev);
        let mut x = g.add(x, pos);
        let t0 = inputs.start;
        let mut mask = Mask::new(m, t0 + m, vec![false; m * (t0 + m)]);
        for i in 0..m {
            for j in 0..=t0 + i {
                mask.set(i, j, true);
            }
        }
        let mut states = Vec::with_capacity(self.layers.len());
        let mut self_attention = Vec::with_capacity(self.layers.len());
        let mut biases = Vec::with_capacity(self.layers.len());
        for (l, layer) in self.layers.iter().enumerate() {
            let ut = g.param(s, layer.u_type);
            let ua = g.param(s, layer.u_adj);
            let bt = g.matmul(ty, ut);
            let ba = g.matmul(adj, ua);
            let bias = g.add(bt, ba);
            let (k, v) = layer.self_attn.keys(g, s, x);
            let state = match past {
                Some(p) => LayerState {
                    k: g.concat(&[p[l].k, k], Axis::Rows),
                    v: g.concat(&[p[l].v, v], Axis::Rows),
                    bias: g.concat(&[p[l].bias, bias], Axis::Rows),
                },
                None => LayerState { k, v, bias },
            };
            assert_eq!(g.shape(state.k)[0], t0 + m, "past states do not match the start position");
            let (a, w) = layer.self_attn.forward(g, s, x, state.k, state.v, Some(state.bias), Some(&mask));
            self_attention.push(w);
            biases.push(state.bias);
            states.push(state);
            let r = g.add(x, a);
            x = layer.ln1.forward(g, s, r);
            let (mk, mv) = memory[l];
            let (c, _) = layer.cross_attn.forward(g, s, x, mk, mv, None, None);
            let r = g.add(x, c);
            x = layer.ln2.forward(g, s, r);
            let f = layer.ffn.forward(g, s, x);
            let r = g.add(x, f);
            x = layer.ln3.forward(g, s, r);
        }
        let h = self.head_hidden.forward(g, s, x);
        let h = g.relu(h);
        let logits = self.head_out.forward(g, s, h);
        DecoderOutput { logits, states, self_attention, biases }
    }
}
