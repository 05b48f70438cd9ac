use crate::model::ParamStore;
use crate::tensor::Tensor;

/// Adam with bias correction and a constant learning rate.
#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: u64,
    m: Vec<Tensor<f32>>,
    v: Vec<Tensor<f32>>,
}

impl Adam {
    pub fn new(params: &ParamStore<f32>, lr: f64, beta1: f64, beta2: f64, eps: f64) -> Self {
        let zeros = || params.tensors().iter().map(|t| Tensor::zeros(t.shape())).collect();
        Self {
            lr,
            beta1,
            beta2,
            eps,
            step: 0,
            m: zeros(),
            v: zeros(),
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub fn moments(&self) -> (&[Tensor<f32>], &[Tensor<f32>]) {
        (&self.m, &self.v)
    }

    /// Restores saved moments; shapes must match the current ones.
    pub fn restore(&mut self, step: u64, m: Vec<Tensor<f32>>, v: Vec<Tensor<f32>>) -> Result<(), String> {
        if m.len() != self.m.len() || v.len() != self.v.len() {
            return Err(format!(
                "expected {} moment tensors, got {}/{}",
                self.m.len(),
                m.len(),
                v.len()
            ));
        }
        for (a, b) in self.m.iter().zip(&m).chain(self.v.iter().zip(&v)) {
            if a.shape() != b.shape() {
                return Err(format!("moment shape {:?} does not match {:?}", b.shape(), a.shape()));
            }
        }
        self.step = step;
        self.m = m;
        self.v = v;
        Ok(())
    }

    pub fn update(&mut self, params: &mut ParamStore<f32>, grads: &[Tensor<f32>]) {
        assert_eq!(grads.len(), self.m.len(), "one gradient per parameter");
        self.step += 1;
        let t = self.step as i32;
        let (b1, b2) = (self.beta1, self.beta2);
        let c1 = 1.0 - b1.powi(t);
        let c2 = 1.0 - b2.powi(t);
        // folded bias correction: lr_t = lr * sqrt(c2) / c1, eps_t = eps * sqrt(c2)
        let lr_t = (self.lr * c2.sqrt() / c1) as f32;
        let eps_t = (self.eps * c2.sqrt()) as f32;
        let (b1, b2) = (b1 as f32, b2 as f32);
        for (((p, g), m), v) in params
            .tensors_mut()
            .iter_mut()
            .zip(grads)
            .zip(&mut self.m)
            .zip(&mut self.v)
        {
            assert_eq!(p.shape(), g.shape(), "gradient shape");
            for (((p, &g), m), v) in p
                .data_mut()
                .iter_mut()
                .zip(g.data())
                .zip(m.data_mut())
                .zip(v.data_mut())
            {
                *m = b1 * *m + (1.0 - b1) * g;
                *v = b2 * *v + (1.0 - b2) * g * g;
                *p -= lr_t * *m / (v.sqrt() + eps_t);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn first_step_moves_by_lr() {
        let mut store = ParamStore::<f32>::new();
        store.add("w", Tensor::from_vec([1, 1, 1, 3], vec![1.0, -2.0, 0.5]));
        let mut opt = Adam::new(&store, 0.1, 0.5, 0.999, 1e-8);
        let g = Tensor::from_vec([1, 1, 1, 3], vec![3.0, -0.01, 0.0]);
        opt.update(&mut store, &[g]);
        let w = store.get(0).data();
        // the bias-corrected first step is lr * sign(g)
        assert!((w[0] - 0.9).abs() < 1e-5);
        assert!((w[1] + 1.9).abs() < 1e-4);
        assert_eq!(w[2], 0.5);
        assert_eq!(opt.step_count(), 1);
    }

    #[test]
    fn minimises_quadratic() {
        let mut store = ParamStore::<f32>::new();
        store.add("w", Tensor::from_vec([1, 1, 1, 2], vec![3.0, -4.0]));
        let mut opt = Adam::new(&store, 0.05, 0.9, 0.999, 1e-8);
        for _ in 0..2000 {
            let g = store.get(0).map(|x| 2.0 * x);
            opt.update(&mut store, &[g]);
        }
        assert!(store.get(0).data().iter().all(|x| x.abs() < 1e-2));
    }
}
