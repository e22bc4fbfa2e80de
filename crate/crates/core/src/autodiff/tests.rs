use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::*;

fn rng() -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(42)
}

fn assert_close(a: &[f64], b: &[f64], tol: f64) {
    assert_eq!(a.len(), b.len());
    for (x, y) in a.iter().zip(b) {
        assert!((x - y).abs() <= tol, "{a:?} vs {b:?}");
    }
}

/// Runs a gradient check where every parameter is a random `shape` tensor.
fn gradcheck(shapes: &[(usize, usize)], f: impl Fn(&mut Graph, &[Var]) -> Var) {
    let mut r = rng();
    let mut store = ParamStore::new();
    let ids: Vec<ParamId> = shapes
        .iter()
        .enumerate()
        .map(|(i, &(a, b))| store.add(format!("p{i}"), Tensor::uniform(a, b, 1.0, &mut r)))
        .collect();
    let report = check_gradients(
        &mut store,
        |g, s| {
            let vars: Vec<Var> = ids.iter().map(|&p| g.param(s, p)).collect();
            f(g, &vars)
        },
        GradCheck { entries_per_param: 1000, ..GradCheck::default() },
        &mut r,
    );
    assert!(report.max_rel_error < 1e-4, "{report:?}");
}

/// Reduces any tensor to a scalar with a non-uniform weighting so that
/// gradients of shift-invariant ops are not trivially zero.
fn weighted_sum(g: &mut Graph, x: Var) -> Var {
    let [r, c] = g.shape(x);
    let w = Tensor::new(r, c, (0..r * c).map(|k| ((k * 7 % 11) as f64 - 5.0) / 3.0).collect());
    let w = g.input(w);
    let p = g.mul(x, w);
    g.sum(p)
}

#[test]
fn softmax_of_equal_logits_is_uniform() {
    let mut g = Graph::new();
    let x = g.input(Tensor::row(&[0.0, 0.0, 0.0]));
    let y = g.softmax_masked(x, None);
    assert_close(g.value(y).data(), &[1.0 / 3.0; 3], 1e-15);
}

#[test]
fn softmax_mask_zeroes_and_renormalizes() {
    let mut g = Graph::new();
    let x = g.input(Tensor::new(2, 3, vec![1.0, 2.0, 3.0, -1.0, 5.0, 0.5]));
    let m = Mask::new(2, 3, vec![true, false, true, false, true, true]);
    let y = g.softmax_masked(x, Some(&m));
    let v = g.value(y);
    assert_eq!(v.get(0, 1), 0.0);
    assert_eq!(v.get(1, 0), 0.0);
    let z = 1.0 + 2f64.exp();
    assert_close(v.row_slice(0), &[1.0 / z, 0.0, 2f64.exp() / z], 1e-15);
    assert!((v.row_slice(1).iter().sum::<f64>() - 1.0).abs() < 1e-15);
}

#[test]
#[should_panic(expected = "fully masked")]
fn softmax_fully_masked_row_panics() {
    let mut g = Graph::new();
    let x = g.input(Tensor::row(&[1.0, 2.0]));
    g.softmax_masked(x, Some(&Mask::new(1, 2, vec![false, false])));
}

#[test]
fn layer_norm_of_constant_row_is_zero() {
    let mut g = Graph::new();
    let x = g.input(Tensor::row(&[4.0; 5]));
    let gain = g.input(Tensor::full(1, 5, 1.0));
    let bias = g.input(Tensor::zeros(1, 5));
    let y = g.layer_norm(x, gain, bias);
    assert_close(g.value(y).data(), &[0.0; 5], 0.0);
}

#[test]
fn layer_norm_rows_are_standardized() {
    let mut g = Graph::new();
    let x = g.input(Tensor::uniform(3, 8, 2.0, &mut rng()));
    let gain = g.input(Tensor::full(1, 8, 1.0));
    let bias = g.input(Tensor::zeros(1, 8));
    let y = g.layer_norm(x, gain, bias);
    for r in 0..3 {
        let row = g.value(y).row_slice(r);
        let mean = row.iter().sum::<f64>() / 8.0;
        let var = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 8.0;
        assert!(mean.abs() < 1e-12);
        assert!((var - 1.0).abs() < 1e-3);
    }
}

#[test]
fn sum_gradient_is_ones() {
    let mut g = Graph::new();
    let x = g.variable(Tensor::uniform(2, 3, 1.0, &mut rng()));
    let l = g.sum(x);
    let grads = g.backward(l).unwrap();
    assert_eq!(grads.get(x).unwrap().data(), &[1.0; 6]);
}

#[test]
fn cross_entropy_closed_form() {
    let c = 5;
    let mut g = Graph::new();
    let x = g.variable(Tensor::full(1, c, 0.7));
    let l = g.cross_entropy(x, &[Target::new(0, 2)], None);
    assert!((g.value(l).item() - (c as f64).ln()).abs() < 1e-12);
    let grads = g.backward(l).unwrap();
    let d = grads.get(x).unwrap();
    for j in 0..c {
        let want = if j == 2 { 1.0 / c as f64 - 1.0 } else { 1.0 / c as f64 };
        assert!((d.get(0, j) - want).abs() < 1e-12);
    }
}

#[test]
fn backward_errors() {
    let mut g = Graph::new();
    let x = g.variable(Tensor::zeros(2, 2));
    assert_eq!(g.backward(x).err(), Some(AutodiffError::NonScalarLoss([2, 2])));
    let mut other = Graph::new();
    let y = other.variable(Tensor::scalar(1.0));
    assert_eq!(g.backward(y).err(), Some(AutodiffError::ForeignTensor));
}

#[test]
#[should_panic(expected = "gather index 3 out of range")]
fn gather_out_of_range() {
    let mut g = Graph::new();
    let t = g.input(Tensor::zeros(3, 2));
    g.embedding_gather(t, &[0, 3]);
}

#[test]
fn params_bind_once() {
    let mut store = ParamStore::new();
    let p = store.ones("w", 1, 2);
    let mut g = Graph::new();
    let a = g.param(&store, p);
    let b = g.param(&store, p);
    assert_eq!(a, b);
    let s = g.add(a, b);
    let l = g.sum(s);
    let grads = g.backward(l).unwrap();
    let pg = g.param_grads(&grads);
    assert_eq!(pg.len(), 1);
    assert_eq!(pg[0].1.data(), &[2.0, 2.0]);
}

#[test]
fn grad_matmul_family() {
    gradcheck(&[(3, 4), (4, 2)], |g, v| {
        let y = g.matmul(v[0], v[1]);
        weighted_sum(g, y)
    });
    gradcheck(&[(3, 4), (5, 4)], |g, v| {
        let y = g.matmul_nt(v[0], v[1]);
        weighted_sum(g, y)
    });
    gradcheck(&[(3, 4)], |g, v| {
        let y = g.transpose(v[0]);
        weighted_sum(g, y)
    });
}

#[test]
fn grad_elementwise_and_broadcast() {
    gradcheck(&[(3, 4), (3, 4)], |g, v| {
        let a = g.add(v[0], v[1]);
        let m = g.mul(a, v[1]);
        let s = g.scale(m, -1.7);
        weighted_sum(g, s)
    });
    gradcheck(&[(3, 4), (1, 4), (3, 1)], |g, v| {
        let a = g.add_row(v[0], v[1]);
        let b = g.add_col(a, v[2]);
        weighted_sum(g, b)
    });
    gradcheck(&[(3, 1), (4, 1)], |g, v| {
        let o = g.outer_sum(v[0], v[1]);
        weighted_sum(g, o)
    });
}

#[test]
fn grad_activations() {
    gradcheck(&[(4, 5)], |g, v| {
        let a = g.relu(v[0]);
        let b = g.leaky_relu(v[0], 0.2);
        let c = g.elu(v[0]);
        let s = g.add(a, b);
        let s = g.add(s, c);
        weighted_sum(g, s)
    });
}

#[test]
fn grad_shape_ops() {
    gradcheck(&[(2, 3), (1, 3), (2, 2)], |g, v| {
        let rows = g.concat(&[v[0], v[1]], Axis::Rows);
        let cols = g.concat(&[v[0], v[2]], Axis::Cols);
        let parts = g.split(cols, &[1, 4], Axis::Cols);
        let top = g.slice_rows(rows, 1, 2);
        let a = weighted_sum(g, top);
        let b = weighted_sum(g, parts[1]);
        let c = g.add(a, b);
        let d = weighted_sum(g, parts[0]);
        g.add(c, d)
    });
}

#[test]
fn grad_softmax_and_norm() {
    gradcheck(&[(3, 4)], |g, v| {
        let m = Mask::new(3, 4, (0..12).map(|k| k % 4 <= k / 4 || k % 4 == 3).collect());
        let y = g.softmax_masked(v[0], Some(&m));
        weighted_sum(g, y)
    });
    gradcheck(&[(3, 5), (1, 5), (1, 5)], |g, v| {
        let y = g.layer_norm(v[0], v[1], v[2]);
        weighted_sum(g, y)
    });
}

#[test]
fn grad_gathers_and_pools() {
    gradcheck(&[(4, 3), (1, 3)], |g, v| {
        let e = g.embedding_gather(v[0], &[2, 0, 2, 3]);
        let b = g.gather_entries(v[1], &[Some(0), None, Some(2), Some(0)], 2, 2);
        let p = g.mean_pool(e, Axis::Rows);
        let q = g.mean_pool(e, Axis::Cols);
        let x = weighted_sum(g, p);
        let y = weighted_sum(g, q);
        let z = weighted_sum(g, b);
        let s = g.add(x, y);
        g.add(s, z)
    });
}

#[test]
fn grad_cross_entropy() {
    gradcheck(&[(3, 5)], |g, v| {
        let mut m = Mask::all(3, 5);
        m.set(1, 4, false);
        let targets = [
            Target::new(0, 1),
            Target { row: 1, class: 3, weight: 0.5 },
            Target { row: 1, class: 0, weight: 0.5 },
            Target::new(2, 4),
        ];
        g.cross_entropy(v[0], &targets, Some(&m))
    });
}

#[test]
fn forward_and_backward_are_deterministic() {
    let run = || {
        let mut g = Graph::new();
        let x = g.variable(Tensor::uniform(4, 6, 1.0, &mut rng()));
        let w = g.variable(Tensor::uniform(6, 6, 1.0, &mut ChaCha8Rng::seed_from_u64(5)));
        let h = g.matmul(x, w);
        let s = g.softmax_masked(h, None);
        let l = g.cross_entropy(s, &[Target::new(0, 1), Target::new(3, 5)], None);
        let grads = g.backward(l).unwrap();
        (g.value(l).item().to_bits(), grads.get(w).unwrap().data().iter().map(|x| x.to_bits()).collect::<Vec<_>>())
    };
    assert_eq!(run(), run());
}
