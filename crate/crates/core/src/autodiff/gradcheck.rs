use rand::seq::index::sample;
use rand::Rng;

use super::{Graph, ParamStore, Var};

/// Central finite-difference gradient check settings.
#[derive(Debug, Clone, Copy)]
pub struct GradCheck {
    pub h: f64,
    /// Entries sampled per parameter; all entries when the tensor is smaller.
    pub entries_per_param: usize,
    /// Denominator floor for the relative error.
    pub floor: f64,
}

impl Default for GradCheck {
    fn default() -> Self {
        GradCheck { h: 1e-5, entries_per_param: 12, floor: 1e-4 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub checked: usize,
    pub max_rel_error: f64,
    /// Parameter name and flat entry index of the worst discrepancy.
    pub worst: Option<(String, usize)>,
}

/// Compares the tape gradient of the scalar returned by `f` against central
/// differences. The relative error of an entry is
/// `|a - n| / max(|a|, |n|, floor)`.
pub fn check_gradients<F, R>(store: &mut ParamStore, mut f: F, opts: GradCheck, rng: &mut R) -> GradCheckReport
where
    F: FnMut(&mut Graph, &ParamStore) -> Var,
    R: Rng,
{
    let mut g = Graph::new();
    let loss = f(&mut g, store);
    let grads = g.backward(loss).expect("scalar loss");
    let analytic: Vec<Option<_>> = {
        let mut v = vec![None; store.len()];
        for (p, t) in g.param_grads(&grads) {
            v[p.0] = Some(t.clone());
        }
        v
    };
    let mut eval = |store: &ParamStore| {
        let mut g = Graph::new();
        let l = f(&mut g, store);
        g.value(l).item()
    };
    let mut report = GradCheckReport { checked: 0, max_rel_error: 0.0, worst: None };
    for id in store.ids().collect::<Vec<_>>() {
        let n = store.value(id).len();
        let picks: Vec<usize> = if n <= opts.entries_per_param {
            (0..n).collect()
        } else {
            let mut v = sample(rng, n, opts.entries_per_param).into_vec();
            v.sort_unstable();
            v
        };
        for k in picks {
            let orig = store.value(id).data()[k];
            store.value_mut(id).data_mut()[k] = orig + opts.h;
            let up = eval(store);
            store.value_mut(id).data_mut()[k] = orig - opts.h;
            let down = eval(store);
            store.value_mut(id).data_mut()[k] = orig;
            let numeric = (up - down) / (2.0 * opts.h);
            let a = analytic[id.0].as_ref().map_or(0.0, |t| t.data()[k]);
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(opts.floor);
            report.checked += 1;
            if report.worst.is_none() || rel > report.max_rel_error {
                report.max_rel_error = rel;
                report.worst = Some((store.name(id).to_string(), k));
            }
        }
    }
    report
}
