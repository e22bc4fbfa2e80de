use crate::autodiff::{ParamStore, Tensor};

/// Adam with bias-corrected moments. Moment tensors are indexed by
/// parameter id.
#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Updates applied so far.
    pub t: u64,
    pub m: Vec<Tensor>,
    pub v: Vec<Tensor>,
}

impl Adam {
    pub fn new(params: &ParamStore, beta1: f64, beta2: f64, eps: f64) -> Adam {
        let zeros: Vec<Tensor> = params
            .ids()
            .map(|id| {
                let [r, c] = params.value(id).shape();
                Tensor::zeros(r, c)
            })
            .collect();
        Adam { beta1, beta2, eps, t: 0, m: zeros.clone(), v: zeros }
    }

    pub fn step(&mut self, params: &mut ParamStore, grads: &[Tensor], lr: f64) {
        assert_eq!(grads.len(), self.m.len(), "one gradient per parameter");
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t as i32);
        let c2 = 1.0 - self.beta2.powi(self.t as i32);
        let ids: Vec<_> = params.ids().collect();
        for (i, id) in ids.into_iter().enumerate() {
            let p = params.value_mut(id).data_mut();
            let m = self.m[i].data_mut();
            let v = self.v[i].data_mut();
            for (k, &g) in grads[i].data().iter().enumerate() {
                m[k] = self.beta1 * m[k] + (1.0 - self.beta1) * g;
                v[k] = self.beta2 * v[k] + (1.0 - self.beta2) * g * g;
                p[k] -= lr * (m[k] / c1) / ((v[k] / c2).sqrt() + self.eps);
            }
        }
    }
}

/// Rescales `grads` so their joint L2 norm is at most `max_norm`; returns
/// the norm before clipping. A nonpositive `max_norm` disables clipping.
pub fn clip_global_norm(grads: &mut [Tensor], max_norm: f64) -> f64 {
    let norm = grads.iter().map(Tensor::sq_norm).sum::<f64>().sqrt();
    if max_norm > 0.0 && norm > max_norm {
        let s = max_norm / norm;
        for g in grads.iter_mut() {
            g.data_mut().iter_mut().for_each(|x| *x *= s);
        }
    }
    norm
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn first_step_moves_by_the_rate() {
        let mut s = ParamStore::new();
        s.add("w", Tensor::new(1, 2, vec![1.0, -2.0]));
        let mut opt = Adam::new(&s, 0.9, 0.999, 0.0);
        opt.step(&mut s, &[Tensor::new(1, 2, vec![0.3, -5.0])], 0.1);
        let w = s.value(s.id("w").unwrap()).data();
        assert!((w[0] - 0.9).abs() < 1e-12 && (w[1] + 1.9).abs() < 1e-12, "{w:?}");
    }

    #[test]
    fn clipping() {
        let mut g = vec![Tensor::scalar(3.0), Tensor::scalar(4.0)];
        assert_eq!(clip_global_norm(&mut g, 1.0), 5.0);
        assert!((g[0].item() - 0.6).abs() < 1e-12 && (g[1].item() - 0.8).abs() < 1e-12);
        let mut h = vec![Tensor::scalar(0.3)];
        clip_global_norm(&mut h, 1.0);
        assert_eq!(h[0].item(), 0.3);
    }
}
