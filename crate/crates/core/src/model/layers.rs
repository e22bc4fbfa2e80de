use rand::Rng;

use crate::autodiff::{Graph, Mask, ParamId, ParamStore, Tensor, Var};

/// `x W + b`.
#[derive(Debug, Clone)]
pub struct Linear {
    pub w: ParamId,
    pub b: ParamId,
}

impl Linear {
    pub fn new<R: Rng>(store: &mut ParamStore, name: &str, din: usize, dout: usize, rng: &mut R) -> Linear {
        Linear { w: store.xavier(format!("{name}.w"), din, dout, rng), b: store.zeros(format!("{name}.b"), 1, dout) }
    }

    pub fn forward(&self, g: &mut Graph, s: &ParamStore, x: Var) -> Var {
        let w = g.param(s, self.w);
        let b = g.param(s, self.b);
        let y = g.matmul(x, w);
        g.add_row(y, b)
    }
}

#[derive(Debug, Clone)]
pub struct LayerNorm {
    pub gain: ParamId,
    pub bias: ParamId,
}

impl LayerNorm {
    pub fn new(store: &mut ParamStore, name: &str, d: usize) -> LayerNorm {
        LayerNorm { gain: store.ones(format!("{name}.gain"), 1, d), bias: store.zeros(format!("{name}.bias"), 1, d) }
    }

    pub fn forward(&self, g: &mut Graph, s: &ParamStore, x: Var) -> Var {
        let gain = g.param(s, self.gain);
        let bias = g.param(s, self.bias);
        g.layer_norm(x, gain, bias)
    }
}

/// Position-wise `relu(x W1 + b1) W2 + b2`.
#[derive(Debug, Clone)]
pub struct FeedForward {
    pub inner: Linear,
    pub outer: Linear,
}

impl FeedForward {
    pub fn new<R: Rng>(store: &mut ParamStore, name: &str, d: usize, d_ff: usize, rng: &mut R) -> FeedForward {
        FeedForward {
            inner: Linear::new(store, &format!("{name}.1"), d, d_ff, rng),
            outer: Linear::new(store, &format!("{name}.2"), d_ff, d, rng),
        }
    }

    pub fn forward(&self, g: &mut Graph, s: &ParamStore, x: Var) -> Var {
        let h = self.inner.forward(g, s, x);
        let h = g.relu(h);
        self.outer.forward(g, s, h)
    }
}

/// Multi-head attention projections. Head `i` uses columns
/// `i*d_k..(i+1)*d_k` of the query, key and value projections.
#[derive(Debug, Clone)]
pub struct Attention {
    pub wq: ParamId,
    pub wk: ParamId,
    pub wv: ParamId,
    pub wo: ParamId,
    pub heads: usize,
}

impl Attention {
    pub fn new<R: Rng>(store: &mut ParamStore, name: &str, d: usize, heads: usize, rng: &mut R) -> Attention {
        Attention {
            wq: store.xavier(format!("{name}.wq"), d, d, rng),
            wk: store.xavier(format!("{name}.wk"), d, d, rng),
            wv: store.xavier(format!("{name}.wv"), d, d, rng),
            wo: store.xavier(format!("{name}.wo"), d, d, rng),
            heads,
        }
    }

    pub fn keys(&self, g: &mut Graph, s: &ParamStore, x: Var) -> (Var, Var) {
        let wk = g.param(s, self.wk);
        let wv = g.param(s, self.wv);
        (g.matmul(x, wk), g.matmul(x, wv))
    }

    /// Attends from `x` to precomputed keys and values. `bias` is an
    /// `n_keys x heads` matrix whose column `h` is added to every logit row
    /// of head `h`. Returns the projected output and per-head weights.
    #[allow(clippy::too_many_arguments)]
    pub fn forward(
        &self,
        g: &mut Graph,
        s: &ParamStore,
        x: Var,
        k: Var,
        v: Var,
        bias: Option<Var>,
        mask: Option<&Mask>,
    ) -> (Var, Vec<Var>) {
        let wq = g.param(s, self.wq);
        let q = g.matmul(x, wq);
        let d = g.shape(q)[1];
        let dk = d / self.heads;
        let scale = 1.0 / (dk as f64).sqrt();
        let mut outs = Vec::with_capacity(self.heads);
        let mut weights = Vec::with_capacity(self.heads);
        for h in 0..self.heads {
            let qh = g.slice_cols(q, h * dk, dk);
            let kh = g.slice_cols(k, h * dk, dk);
            let vh = g.slice_cols(v, h * dk, dk);
            let logits = g.matmul_nt(qh, kh);
            let mut logits = g.scale(logits, scale);
            if let Some(b) = bias {
                let col = g.slice_cols(b, h, 1);
                let row = g.transpose(col);
                logits = g.add_row(logits, row);
            }
            let a = g.softmax_masked(logits, mask);
            weights.push(a);
            outs.push(g.matmul(a, vh));
        }
        let cat = if outs.len() == 1 { outs[0] } else { g.concat(&outs, crate::autodiff::Axis::Cols) };
        let wo = g.param(s, self.wo);
        (g.matmul(cat, wo), weights)
    }
}

/// Sinusoidal position encodings for positions `start..start + n`.
pub fn sinusoid(start: usize, n: usize, d: usize) -> Tensor {
    let mut t = Tensor::zeros(n, d);
    for r in 0..n {
        let pos = (start + r) as f64;
        for i in 0..d {
            let rate = 10000f64.powf((2 * (i / 2)) as f64 / d as f64);
            let v = if i % 2 == 0 { (pos / rate).sin() } else { (pos / rate).cos() };
            t.set(r, i, v);
        }
    }
    t
}

/// Indices of the `k` largest entries among `candidates`, ties broken by the
/// lower index. Returned in rank order.
pub fn top_k(values: &[f64], candidates: &[usize], k: usize) -> Vec<usize> {
    let mut c = candidates.to_vec();
    c.sort_by(|&a, &b| values[b].total_cmp(&values[a]).then(a.cmp(&b)));
    c.truncate(k);
    c
}
