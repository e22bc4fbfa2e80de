use rand::Rng;
use thiserror::Error;

use crate::autodiff::{Axis, Graph, Mask, ParamId, ParamStore, Var};
use crate::graphs::{QuestionGraph, SchemaGraph, SchemaRelation};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum GatError {
    #[error("graph has no nodes")]
    NoNodes,
    #[error("edge ({0}, {1}) references a node outside 0..{2}")]
    EdgeOutOfRange(usize, usize, usize),
    #[error("edge type {0} outside 0..{1}")]
    EdgeTypeOutOfRange(usize, usize),
}

/// Graph topology for attention: neighborhoods are symmetric and include
/// self-loops. Typed edges contribute a learned scalar bias per type.
#[derive(Debug, Clone, PartialEq)]
pub struct GatGraph {
    num_nodes: usize,
    mask: Mask,
    /// Per edge type, the dense `n x n` index pattern selecting that type.
    typed: Vec<Vec<Option<usize>>>,
}

impl GatGraph {
    pub fn new(
        num_nodes: usize,
        edges: &[(usize, usize)],
        edge_types: Option<(&[usize], usize)>,
    ) -> Result<GatGraph, GatError> {
        if num_nodes == 0 {
            return Err(GatError::NoNodes);
        }
        let n = num_nodes;
        let mut mask = Mask::new(n, n, vec![false; n * n]);
        for i in 0..n {
            mask.set(i, i, true);
        }
        for &(a, b) in edges {
            if a >= n || b >= n {
                return Err(GatError::EdgeOutOfRange(a, b, n));
            }
            mask.set(a, b, true);
            mask.set(b, a, true);
        }
        let mut typed = Vec::new();
        if let Some((types, count)) = edge_types {
            typed = vec![vec![None; n * n]; count];
            for (&(a, b), &t) in edges.iter().zip(types) {
                if t >= count {
                    return Err(GatError::EdgeTypeOutOfRange(t, count));
                }
                typed[t][a * n + b] = Some(t);
                typed[t][b * n + a] = Some(t);
            }
            typed.retain(|pattern| pattern.iter().any(Option::is_some));
        }
        Ok(GatGraph { num_nodes, mask, typed })
    }

    pub fn from_question(q: &QuestionGraph) -> GatGraph {
        GatGraph::new(q.num_nodes(), &q.edges, None).expect("question graphs are well formed")
    }

    pub fn from_schema(s: &SchemaGraph) -> GatGraph {
        let edges: Vec<(usize, usize)> = s.edges.iter().map(|&(a, b, _)| (a, b)).collect();
        let types: Vec<usize> = s.edges.iter().map(|e| e.2.index()).collect();
        GatGraph::new(s.num_nodes(), &edges, Some((&types, SchemaRelation::ALL.len())))
            .expect("schema graphs are well formed")
    }

    pub fn num_nodes(&self) -> usize {
        self.num_nodes
    }

    pub fn neighborhood(&self) -> &Mask {
        &self.mask
    }
}

#[derive(Debug, Clone)]
pub struct GatLayer {
    pub w: ParamId,
    pub a_src: ParamId,
    pub a_dst: ParamId,
    pub edge_bias: Option<ParamId>,
}

/// Single-head graph attention stack with ELU between layers.
#[derive(Debug, Clone)]
pub struct Gat {
    pub layers: Vec<GatLayer>,
    pub slope: f64,
}

impl Gat {
    pub fn new<R: Rng>(
        store: &mut ParamStore,
        name: &str,
        d: usize,
        layers: usize,
        slope: f64,
        edge_types: Option<usize>,
        rng: &mut R,
    ) -> Gat {
        let layers = (0..layers)
            .map(|l| GatLayer {
                w: store.xavier(format!("{name}.{l}.w"), d, d, rng),
                a_src: store.xavier(format!("{name}.{l}.a_src"), d, 1, rng),
                a_dst: store.xavier(format!("{name}.{l}.a_dst"), d, 1, rng),
                edge_bias: edge_types.map(|r| store.zeros(format!("{name}.{l}.edge_bias"), 1, r)),
            })
            .collect();
        Gat { layers, slope }
    }

    /// One attention layer: returns the updated features and the attention
    /// coefficients (row `i` is node `i`'s distribution over neighbors).
    pub fn layer(&self, g: &mut Graph, s: &ParamStore, l: usize, h: Var, graph: &GatGraph) -> (Var, Var) {
        let p = &self.layers[l];
        let n = graph.num_nodes;
        let w = g.param(s, p.w);
        let wh = g.matmul(h, w);
        let a_src = g.param(s, p.a_src);
        let a_dst = g.param(s, p.a_dst);
        let src = g.matmul(wh, a_src);
        let dst = g.matmul(wh, a_dst);
        let e = g.outer_sum(src, dst);
        let mut e = g.leaky_relu(e, self.slope);
        if let Some(b) = p.edge_bias {
            let table = g.param(s, b);
            for pattern in &graph.typed {
                let bias = g.gather_entries(table, pattern, n, n);
                e = g.add(e, bias);
            }
        }
        let alpha = g.softmax_masked(e, Some(&graph.mask));
        (g.matmul(alpha, wh), alpha)
    }

    pub fn forward(&self, g: &mut Graph, s: &ParamStore, h: Var, graph: &GatGraph) -> Var {
        let mut h = h;
        for l in 0..self.layers.len() {
            if l > 0 {
                h = g.elu(h);
            }
            h = self.layer(g, s, l, h, graph).0;
        }
        h
    }
}

/// Arithmetic mean over all node features.
pub fn pool_schema(g: &mut Graph, nodes: Var) -> Result<Var, GatError> {
    if g.shape(nodes)[0] == 0 {
        return Err(GatError::NoNodes);
    }
    Ok(g.mean_pool(nodes, Axis::Rows))
}
