use super::ParamStore;
use crate::error::{Error, Result};

/// Adam with bias correction.
#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new(lr: f64) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            m: Vec::new(),
            v: Vec::new(),
        }
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    /// Updates every parameter of `store` from its accumulated gradient.
    /// Parameters without a gradient buffer are treated as having zero gradient.
    pub fn step(&mut self, store: &mut ParamStore) -> Result<()> {
        if self.m.is_empty() {
            self.m = store.params().iter().map(|p| vec![0.0; p.tensor.len()]).collect();
            self.v = self.m.clone();
        }
        if self.m.len() != store.params().len() {
            return Err(Error::Shape(format!(
                "optimizer tracks {} parameters, store has {}",
                self.m.len(),
                store.params().len()
            )));
        }
        self.step += 1;
        let t = self.step as i32;
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        for (i, p) in store.params_mut().iter_mut().enumerate() {
            let t = &mut p.tensor;
            if self.m[i].len() != t.len() {
                return Err(Error::Shape(format!("optimizer state mismatch for '{}'", p.name)));
            }
            let Some(grad) = t.grad.take() else { continue };
            adam_update(t.data_mut(), &grad, &mut self.m[i], &mut self.v[i], self.lr, self.beta1, self.beta2, self.eps, c1, c2);
            t.grad = Some(grad);
        }
        Ok(())
    }
}

#[allow(clippy::too_many_arguments)]
fn adam_update(
    w: &mut [f64],
    g: &[f64],
    m: &mut [f64],
    v: &mut [f64],
    lr: f64,
    b1: f64,
    b2: f64,
    eps: f64,
    c1: f64,
    c2: f64,
) {
    for i in 0..w.len() {
        m[i] = b1 * m[i] + (1.0 - b1) * g[i];
        v[i] = b2 * v[i] + (1.0 - b2) * g[i] * g[i];
        let mh = m[i] / c1;
        let vh = v[i] / c2;
        w[i] -= lr * mh / (vh.sqrt() + eps);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autograd::Tensor;

    fn store_with(w: &[f64]) -> ParamStore {
        let mut s = ParamStore::new();
        s.add("w", Tensor::new(vec![w.len()], w.to_vec()).unwrap()).unwrap();
        s
    }

    fn set_grad(s: &mut ParamStore, g: &[f64]) {
        s.params_mut()[0].tensor.grad = Some(g.to_vec());
    }

    #[test]
    fn constant_gradient_moves_lr_per_step() {
        let mut s = store_with(&[0.0, 0.0]);
        let mut opt = Adam::new(0.01);
        let mut prev = s.params()[0].tensor.data().to_vec();
        for k in 0..200 {
            set_grad(&mut s, &[3.0, -0.5]);
            opt.step(&mut s).unwrap();
            let cur = s.params()[0].tensor.data().to_vec();
            if k > 100 {
                assert!((prev[0] - cur[0] - 0.01).abs() < 1e-6);
                assert!((cur[1] - prev[1] - 0.01).abs() < 1e-6);
            }
            prev = cur;
        }
    }

    #[test]
    fn zero_gradient_is_stationary() {
        let mut s = store_with(&[1.5, -2.0]);
        let mut opt = Adam::new(0.1);
        for _ in 0..5 {
            set_grad(&mut s, &[0.0, 0.0]);
            opt.step(&mut s).unwrap();
        }
        assert_eq!(s.params()[0].tensor.data(), &[1.5, -2.0]);
    }

    #[test]
    fn quadratic_bowl_descends() {
        let target = [1.0, -2.0, 0.5];
        let loss = |w: &[f64]| w.iter().zip(&target).map(|(a, b)| (a - b).powi(2)).sum::<f64>();
        let mut s = store_with(&[4.0, 3.0, -1.0]);
        let mut opt = Adam::new(0.05);
        let mut last = loss(s.params()[0].tensor.data());
        for _ in 0..10 {
            let w = s.params()[0].tensor.data().to_vec();
            let g: Vec<f64> = w.iter().zip(&target).map(|(a, b)| 2.0 * (a - b)).collect();
            set_grad(&mut s, &g);
            opt.step(&mut s).unwrap();
            let now = loss(s.params()[0].tensor.data());
            assert!(now < last);
            last = now;
        }
    }

    #[test]
    fn store_shape_change_is_rejected() {
        let mut s = store_with(&[0.0]);
        let mut opt = Adam::new(0.1);
        set_grad(&mut s, &[1.0]);
        opt.step(&mut s).unwrap();
        s.add("extra", Tensor::zeros(&[2])).unwrap();
        assert!(opt.step(&mut s).is_err());
    }
}
