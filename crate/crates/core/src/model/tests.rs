use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::autodiff::{check_gradients, GradCheck, Target};
use crate::grammar::{parse_sql, Grammar, NodeKind, TerminalKind};
use crate::graphs::{build_vocab, find_number_question as find_number};
use crate::schema::scientists_schema;

fn small_config(d: usize) -> ModelConfig {
    ModelConfig { d_model: d, layers: 2, heads: 2, d_ff: 2 * d, k_tables: 10, k_columns: 10, ..ModelConfig::default() }
}

fn model(d: usize) -> Model {
    let s = scientists_schema();
    let q = find_number();
    let vocab = build_vocab([&q], [&s]).unwrap();
    let sv = SchemaVocab::build([&s]).unwrap();
    Model::new(small_config(d), vocab, sv, 7).unwrap()
}

fn row_sums_one(t: &Tensor, tol: f64) {
    for r in 0..t.rows() {
        let s: f64 = t.row_slice(r).iter().sum();
        assert!((s - 1.0).abs() < tol, "row {r} sums to {s}");
    }
}

#[test]
fn encoder_shapes_and_attention_rows() {
    let m = model(16);
    let mut g = Graph::new();
    let one = g.input(Tensor::uniform(1, 16, 1.0, &mut ChaCha8Rng::seed_from_u64(1)));
    let enc = m.encoder().encode(&mut g, &m.params, one).unwrap();
    assert_eq!(g.shape(enc.states), [3, 16]);

    let s = scientists_schema();
    let input = m.question_input(&find_number(), &s).unwrap();
    let tokens = m.question_features(&mut g, &input.question, &input.topology);
    let enc = m.encoder().encode(&mut g, &m.params, tokens).unwrap();
    assert_eq!(g.shape(enc.states), [8, 16]);
    for layer in &enc.attention {
        for &w in layer {
            assert_eq!(g.shape(w), [8, 8]);
            row_sums_one(g.value(w), 1e-9);
        }
    }
}

#[test]
fn encoder_rejects_bad_lengths() {
    let m = model(8);
    let mut g = Graph::new();
    let empty = g.input(Tensor::zeros(0, 8));
    assert_eq!(m.encoder().encode(&mut g, &m.params, empty).err(), Some(ModelError::QuestionLength(0)));
    let long = g.input(Tensor::zeros(1025, 8));
    assert_eq!(m.encoder().encode(&mut g, &m.params, long).err(), Some(ModelError::QuestionLength(1025)));
}

#[test]
fn encoding_is_deterministic() {
    let run = || {
        let m = model(8);
        let s = scientists_schema();
        let input = m.question_input(&find_number(), &s).unwrap();
        let mut g = Graph::new();
        let mem = m.memory(&mut g, &input.question, &input.topology, &s, &input.binding).unwrap();
        g.value(mem.memory).data().iter().map(|x| x.to_bits()).collect::<Vec<_>>()
    };
    assert_eq!(run(), run());
}

#[test]
fn table_selection() {
    let m = model(8);
    let mut g = Graph::new();
    let x = g.input(Tensor::uniform(2, 8, 1.0, &mut ChaCha8Rng::seed_from_u64(3)));
    let enc = m.encoder().encode(&mut g, &m.params, x).unwrap();
    // k = 10 on a three-table schema keeps every table.
    let (_, p, top) = m.encoder().select_tables(&mut g, &m.params, &enc, &[0, 1, 2], 10);
    let mut sorted = top.clone();
    sorted.sort_unstable();
    assert_eq!(sorted, vec![0, 1, 2]);
    row_sums_one(g.value(p), 1e-12);
    let (_, _, top) = m.encoder().select_tables(&mut g, &m.params, &enc, &[1], 4);
    assert_eq!(top, vec![1]);
}

#[test]
fn uniform_logits_break_ties_by_index() {
    let mut m = model(8);
    for id in [m.encoder().table_head.w, m.encoder().table_head.b, m.encoder().column_head.w, m.encoder().column_head.b]
    {
        m.params.value_mut(id).data_mut().fill(0.0);
    }
    let mut g = Graph::new();
    let x = g.input(Tensor::uniform(2, 8, 1.0, &mut ChaCha8Rng::seed_from_u64(3)));
    let enc = m.encoder().encode(&mut g, &m.params, x).unwrap();
    let (_, _, top) = m.encoder().select_tables(&mut g, &m.params, &enc, &[2, 0, 1], 2);
    assert_eq!(top, vec![0, 1]);
    let (_, _, _, top) = m.encoder().select_columns(&mut g, &m.params, &enc, &[5, 4, 3, 2, 1, 0], 3).unwrap();
    assert_eq!(top, vec![0, 1, 2]);
}

#[test]
fn column_masking() {
    let m = model(8);
    let s = scientists_schema();
    let b = m.schema_vocab.bind(&s).unwrap();
    let mut g = Graph::new();
    let x = g.input(Tensor::uniform(3, 8, 1.0, &mut ChaCha8Rng::seed_from_u64(9)));
    let enc = m.encoder().encode(&mut g, &m.params, x).unwrap();
    // Only `scientists` selected: its columns are flat 0 and 1.
    let eligible: Vec<usize> = s.columns_of(0).map(|c| b.columns[c]).collect();
    let (_, mask, p, top) = m.encoder().select_columns(&mut g, &m.params, &enc, &eligible, 4).unwrap();
    let p = g.value(p);
    for c in s.columns_of(1) {
        assert_eq!(p.data()[b.columns[c]], 0.0);
        assert!(!mask.keep(0, b.columns[c]));
    }
    row_sums_one(p, 1e-12);
    assert!(top.iter().all(|c| eligible.contains(c)));
    assert_eq!(m.encoder().select_columns(&mut g, &m.params, &enc, &[], 4).err(), Some(ModelError::NoEligibleColumns));
}

#[test]
fn schema_context_and_fusion() {
    let m = model(8);
    let enc = m.encoder();
    let mut g = Graph::new();
    let ctx = enc.schema_context(&mut g, &m.params, &[2, 0], &[1, 4, 6]);
    let et = m.params.value(enc.table_embed);
    let ec = m.params.value(enc.column_embed);
    let mut cat = vec![0.0; 16];
    for j in 0..8 {
        cat[j] = (et.get(2, j) + et.get(0, j)) / 2.0;
        cat[8 + j] = (ec.get(1, j) + ec.get(4, j) + ec.get(6, j)) / 3.0;
    }
    let want = Tensor::row(&cat).matmul(m.params.value(enc.fuse.w));
    for j in 0..8 {
        let w = want.get(0, j) + m.params.value(enc.fuse.b).get(0, j);
        assert!((g.value(ctx).get(0, j) - w).abs() < 1e-12);
    }
    let q = Tensor::uniform(6, 8, 1.0, &mut ChaCha8Rng::seed_from_u64(4));
    let qv = g.input(q.clone());
    let mem = fuse(&mut g, qv, ctx);
    for r in 0..6 {
        for j in 0..8 {
            assert_eq!(g.value(mem).get(r, j), q.get(r, j) + g.value(ctx).get(0, j));
        }
    }
    let zero = g.input(Tensor::zeros(1, 8));
    let same = fuse(&mut g, qv, zero);
    assert_eq!(g.value(same), &q);
}

fn count_star(m: &Model) -> Prepared {
    let s = scientists_schema();
    let ast = parse_sql(Grammar::builtin(), "SELECT COUNT(*) FROM scientists", &s).unwrap();
    m.prepare(&find_number(), &s, &ast).unwrap()
}

#[test]
fn step_inputs_follow_the_trace() {
    let m = model(8);
    let p = count_star(&m);
    let inputs = m.trace_inputs(&p);
    assert_eq!(inputs.prev_actions[0], m.space().start());
    assert!(inputs.adjacency.row_slice(0).iter().all(|&x| x == 0.0));
    // Node 1 (Query) hangs off the root at distance 1.
    assert_eq!(inputs.adjacency.get(1, 29), 1.0);
    assert_eq!(&inputs.prev_actions[1..], &p.actions[..p.actions.len() - 1]);
    let mut g = Graph::new();
    let (ty, adj, prev) = m.decoder().embed(&mut g, &m.params, &inputs);
    let psi = m.params.value(m.decoder().psi);
    let phi = m.params.value(m.decoder().phi);
    let omega = m.params.value(m.decoder().omega);
    for t in 0..inputs.len() {
        assert_eq!(g.value(ty).row_slice(t), psi.row_slice(inputs.kinds[t]));
        assert_eq!(g.value(prev).row_slice(t), omega.row_slice(inputs.prev_actions[t]));
        let bits: Vec<usize> = (0..30).filter(|&k| inputs.adjacency.get(t, k) == 1.0).collect();
        let want: Vec<f64> = (0..8).map(|j| bits.iter().map(|&k| phi.get(k, j)).sum()).collect();
        for (a, b) in g.value(adj).row_slice(t).iter().zip(&want) {
            assert!((a - b).abs() < 1e-15);
        }
    }
}

#[test]
fn padded_adjacency_path() {
    assert_eq!(padded_adjacency(&[0, 1], 4), vec![0.0, 0.0, 0.0, 1.0]);
    assert_eq!(padded_adjacency(&[1, 0], 2), vec![1.0, 0.0]);
}

#[test]
fn decoder_attention_and_distributions() {
    let m = model(8);
    let p = count_star(&m);
    let s = scientists_schema();
    let mut g = Graph::new();
    let mem = m.memory(&mut g, &p.question, &p.topology, &s, &p.binding).unwrap();
    let out = m.teacher_forced(&mut g, &p, mem.memory);
    let n = p.trace.len();
    assert_eq!(g.shape(out.logits), [n, m.space().len()]);
    for layer in &out.self_attention {
        for &w in layer {
            let w = g.value(w);
            row_sums_one(w, 1e-9);
            assert_eq!(w.get(0, 0), 1.0);
            for i in 0..n {
                for j in i + 1..n {
                    assert_eq!(w.get(i, j), 0.0);
                }
            }
        }
    }
    let probs = g.softmax_masked(out.logits, None);
    row_sums_one(g.value(probs), 1e-9);
}

#[test]
fn zero_bias_projections_give_plain_attention() {
    let mut m = model(8);
    for l in m.decoder().layers.clone() {
        m.params.value_mut(l.u_type).data_mut().fill(0.0);
        m.params.value_mut(l.u_adj).data_mut().fill(0.0);
    }
    let p = count_star(&m);
    let s = scientists_schema();
    let mut g = Graph::new();
    let mem = m.memory(&mut g, &p.question, &p.topology, &s, &p.binding).unwrap();
    let out = m.teacher_forced(&mut g, &p, mem.memory);
    for &b in &out.biases {
        assert!(g.value(b).data().iter().all(|&x| x == 0.0));
    }
}

#[test]
fn incremental_decoding_matches_teacher_forcing() {
    let m = model(8);
    let p = count_star(&m);
    let s = scientists_schema();
    let mut g = Graph::new();
    let mem = m.memory(&mut g, &p.question, &p.topology, &s, &p.binding).unwrap();
    let full = m.teacher_forced(&mut g, &p, mem.memory);
    let inputs = m.trace_inputs(&p);
    let kv = m.decoder().memory_kv(&mut g, &m.params, mem.memory);
    let mut past: Option<Vec<LayerState>> = None;
    for t in 0..inputs.len() {
        let one = StepInputs {
            start: t,
            kinds: vec![inputs.kinds[t]],
            adjacency: Tensor::row(inputs.adjacency.row_slice(t)),
            prev_actions: vec![inputs.prev_actions[t]],
        };
        let out = m.decoder().forward(&mut g, &m.params, &one, &kv, past.as_deref());
        for (a, b) in g.value(out.logits).row_slice(0).iter().zip(g.value(full.logits).row_slice(t)) {
            assert!((a - b).abs() < 1e-10);
        }
        past = Some(out.states);
    }
}

#[test]
fn causality_under_future_perturbation() {
    let m = model(8);
    let p = count_star(&m);
    let s = scientists_schema();
    let logits = |p: &Prepared| {
        let mut g = Graph::new();
        let mem = m.memory(&mut g, &p.question, &p.topology, &s, &p.binding).unwrap();
        let out = m.teacher_forced(&mut g, p, mem.memory);
        g.value(out.logits).clone()
    };
    let base = logits(&p);
    let mut q = p.clone();
    let last = q.actions.len() - 1;
    q.actions[last - 1] = m.space().value();
    let pert = logits(&q);
    // Changing action `last - 1` only alters the input of position `last`.
    for t in 0..last {
        assert_eq!(base.row_slice(t), pert.row_slice(t));
    }
    assert_ne!(base.row_slice(last), pert.row_slice(last));
}

#[test]
fn legality_masks() {
    let m = model(8);
    let g = Grammar::builtin();
    let s = scientists_schema();
    let b = m.schema_vocab.bind(&s).unwrap();
    let sp = m.space();
    let root = legal_action_mask(g, &sp, NodeKind::Nonterminal(g.start()), &s, &b, &[]);
    let legal: Vec<usize> = (0..sp.len()).filter(|&a| root[a]).collect();
    assert_eq!(legal, g.rules_for(g.start()).to_vec());
    let table = legal_action_mask(g, &sp, NodeKind::Terminal(TerminalKind::Table), &s, &b, &[]);
    assert_eq!(table.iter().filter(|&&k| k).count(), 3);
    let value = legal_action_mask(g, &sp, NodeKind::Terminal(TerminalKind::Value), &s, &b, &[]);
    assert_eq!(value.iter().filter(|&&k| k).count(), 1);
    let col = legal_action_mask(g, &sp, NodeKind::Terminal(TerminalKind::Column), &s, &b, &[1]);
    let legal: Vec<usize> = (0..sp.len()).filter(|&a| col[a]).collect();
    assert_eq!(legal, s.columns_of(1).map(|c| sp.column(b.columns[c])).collect::<Vec<_>>());
    let col = legal_action_mask(g, &sp, NodeKind::Terminal(TerminalKind::Column), &s, &b, &[]);
    assert_eq!(col.iter().filter(|&&k| k).count(), 7);
}

#[test]
fn action_space_round_trip() {
    let m = model(8);
    let s = scientists_schema();
    let b = m.schema_vocab.bind(&s).unwrap();
    let sp = m.space();
    for a in [Action::ApplyRule(3), Action::SelectTable(2), Action::SelectColumn(6), Action::EmitValue] {
        assert_eq!(sp.decode(sp.encode(a, &b), &b), Some(a));
    }
    assert_eq!(sp.decode(sp.start(), &b), None);
}

#[test]
fn generation_contracts() {
    let m = model(8);
    let s = scientists_schema();
    let input = m.question_input(&find_number(), &s).unwrap();
    assert_eq!(m.generate(&input, &s, SearchMode::Greedy, 1).err(), Some(ModelError::BudgetExhausted(1)));
    assert_eq!(m.generate(&input, &s, SearchMode::Beam(0), 200).err(), Some(ModelError::BeamWidth));
    let greedy = m.generate(&input, &s, SearchMode::Greedy, 200);
    let beam1 = m.generate(&input, &s, SearchMode::Beam(1), 200);
    match (greedy, beam1) {
        (Ok(a), Ok(b)) => {
            assert_eq!(a.ast, b.ast);
            assert_eq!(a.log_prob.to_bits(), b.log_prob.to_bits());
            a.ast.validate(Grammar::builtin(), Some(&s)).unwrap();
        }
        (Err(a), Err(b)) => assert_eq!(a, b),
        other => panic!("greedy and beam(1) disagree: {other:?}"),
    }
    if let Ok(b4) = m.generate(&input, &s, SearchMode::Beam(4), 200) {
        b4.ast.validate(Grammar::builtin(), Some(&s)).unwrap();
    }
}

fn weighted(g: &mut Graph, x: Var, seed: u64) -> Var {
    let [r, c] = g.shape(x);
    let w = g.input(Tensor::uniform(r, c, 1.0, &mut ChaCha8Rng::seed_from_u64(seed)));
    let p = g.mul(x, w);
    g.sum(p)
}

fn grad_ok(m: &mut Model, f: impl Fn(&Model, &mut Graph, &ParamStore) -> Var) {
    let frozen = m.clone();
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let report = check_gradients(&mut m.params, |g, s| f(&frozen, g, s), GradCheck::default(), &mut rng);
    assert!(report.max_rel_error < 1e-4, "{report:?}");
}

#[test]
fn encoder_layer_and_heads_gradients() {
    let mut m = model(8);
    let enc = m.encoder().clone();
    grad_ok(&mut m, |_, g, s| {
        let x = g.input(Tensor::uniform(3, 8, 1.0, &mut ChaCha8Rng::seed_from_u64(5)));
        let e = enc.encode(g, s, x).unwrap();
        let (tl, _, top) = enc.select_tables(g, s, &e, &[0, 1, 2], 2);
        let (cl, mask, _, cols) = enc.select_columns(g, s, &e, &[0, 1, 2, 3, 4], 3).unwrap();
        let lt = g.cross_entropy(tl, &[Target::new(0, 1)], None);
        let lc = g.cross_entropy(cl, &[Target::new(0, 3)], Some(&mask));
        let ctx = enc.schema_context(g, s, &top, &cols);
        let mem = fuse(g, e.question, ctx);
        let a = weighted(g, mem, 6);
        let b = g.add(lt, lc);
        g.add(a, b)
    });
}

#[test]
fn decoder_layer_gradients() {
    let mut m = model(8);
    let p = count_star(&m);
    let dec = m.decoder().clone();
    let inputs = m.trace_inputs(&p);
    let actions = p.actions.clone();
    grad_ok(&mut m, |_, g, s| {
        let memory = g.input(Tensor::uniform(4, 8, 1.0, &mut ChaCha8Rng::seed_from_u64(8)));
        let kv = dec.memory_kv(g, s, memory);
        let out = dec.forward(g, s, &inputs, &kv, None);
        let targets: Vec<Target> = actions.iter().enumerate().map(|(t, &a)| Target::new(t, a)).collect();
        g.cross_entropy(out.logits, &targets, None)
    });
}
