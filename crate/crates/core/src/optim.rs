use crate::autograd::{Grads, Mat, ParamStore};

/// Adam with optional global-norm gradient clipping.
#[derive(Debug, Clone)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub clip_norm: Option<f64>,
    step: u64,
    m: Vec<Option<Mat>>,
    v: Vec<Option<Mat>>,
}

impl Adam {
    pub fn new(lr: f64) -> Self {
        Adam {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            clip_norm: None,
            step: 0,
            m: Vec::new(),
            v: Vec::new(),
        }
    }

    pub fn with_clip(mut self, clip: Option<f64>) -> Self {
        self.clip_norm = clip;
        self
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    /// Applies one update to every parameter that has a gradient.
    pub fn update(&mut self, params: &mut ParamStore, grads: &Grads) {
        if self.m.len() < params.len() {
            self.m.resize(params.len(), None);
            self.v.resize(params.len(), None);
        }
        let factor = match self.clip_norm {
            Some(c) => {
                let norm = grads.global_norm();
                if norm > c {
                    c / norm
                } else {
                    1.0
                }
            }
            None => 1.0,
        };
        self.step += 1;
        let bc1 = 1.0 - self.beta1.powi(self.step as i32);
        let bc2 = 1.0 - self.beta2.powi(self.step as i32);
        for id in params.ids().collect::<Vec<_>>() {
            let Some(g) = grads.get(id) else { continue };
            let m = self.m[id.0].get_or_insert_with(|| Mat::zeros(g.dim()));
            let v = self.v[id.0].get_or_insert_with(|| Mat::zeros(g.dim()));
            let (b1, b2, lr, eps) = (self.beta1, self.beta2, self.lr, self.eps);
            let p = params.value_mut(id);
            ndarray::Zip::from(p)
                .and(m)
                .and(v)
                .and(g)
                .for_each(|p, m, v, &g| {
                    let g = g * factor;
                    *m = b1 * *m + (1.0 - b1) * g;
                    *v = b2 * *v + (1.0 - b2) * g * g;
                    let mh = *m / bc1;
                    let vh = *v / bc2;
                    *p -= lr * mh / (vh.sqrt() + eps);
                });
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autograd::Graph;

    #[test]
    fn minimizes_a_quadratic() {
        let mut p = ParamStore::new();
        p.insert("x", Mat::from_elem((1, 3), 5.0));
        let target = Mat::from_shape_vec((1, 3), vec![1.0, -2.0, 0.5]).unwrap();
        let mut opt = Adam::new(0.1);
        for _ in 0..500 {
            let grads = {
                let mut g = Graph::new(&p);
                let x = g.param("x");
                let l = g.mse(x, &target);
                g.backward(l)
            };
            opt.update(&mut p, &grads);
        }
        let x = p.get("x").unwrap();
        for (a, b) in x.iter().zip(target.iter()) {
            assert!((a - b).abs() < 1e-3);
        }
        assert_eq!(opt.steps(), 500);
    }

    #[test]
    fn parameters_without_gradients_are_untouched() {
        let mut p = ParamStore::new();
        p.insert("a", Mat::from_elem((1, 1), 1.0));
        p.insert("b", Mat::from_elem((1, 1), 1.0));
        let grads = {
            let mut g = Graph::new(&p);
            let a = g.param("a");
            let l = g.mul(a, a);
            g.backward(l)
        };
        let mut opt = Adam::new(0.1).with_clip(Some(1.0));
        opt.update(&mut p, &grads);
        assert_eq!(p.get("b").unwrap()[[0, 0]], 1.0);
        assert!(p.get("a").unwrap()[[0, 0]] < 1.0);
    }
}
