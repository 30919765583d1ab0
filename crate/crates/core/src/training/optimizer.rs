//! Rectified Adam: adaptive moments with the variance-rectification term
//! that falls back to an unadapted step while the second-moment estimate is
//! still untrustworthy.

use crate::graph::Matrix;
use crate::params::{ParamId, ParamStore};

pub struct RAdam {
    beta1: f64,
    beta2: f64,
    eps: f64,
    pub learning_rate: f64,
    step: u64,
    m: Vec<Matrix>,
    v: Vec<Matrix>,
}

impl RAdam {
    pub fn new(store: &ParamStore, learning_rate: f64) -> Self {
        let m = store.ids().map(|id| Matrix::zeros(store.value(id).dim())).collect();
        let v = store.ids().map(|id| Matrix::zeros(store.value(id).dim())).collect();
        RAdam { beta1: 0.9, beta2: 0.999, eps: 1e-8, learning_rate, step: 0, m, v }
    }

    /// One update over `(param, gradient)` pairs.
    pub fn step(&mut self, store: &mut ParamStore, grads: &[(ParamId, Matrix)]) {
        self.step += 1;
        let t = self.step as f64;
        let beta1_t = self.beta1.powf(t);
        let beta2_t = self.beta2.powf(t);
        let rho_inf = 2.0 / (1.0 - self.beta2) - 1.0;
        let rho_t = rho_inf - 2.0 * t * beta2_t / (1.0 - beta2_t);

        for (id, grad) in grads {
            let i = id.0;
            self.m[i].zip_mut_with(grad, |m, &g| *m = self.beta1 * *m + (1.0 - self.beta1) * g);
            self.v[i]
                .zip_mut_with(grad, |v, &g| *v = self.beta2 * *v + (1.0 - self.beta2) * g * g);
            let m_hat = &self.m[i] / (1.0 - beta1_t);

            let value = store.value_mut(*id);
            if rho_t > 4.0 {
                let rect = (((rho_t - 4.0) * (rho_t - 2.0) * rho_inf)
                    / ((rho_inf - 4.0) * (rho_inf - 2.0) * rho_t))
                    .sqrt();
                let lr = self.learning_rate * rect;
                ndarray::Zip::from(value)
                    .and(&m_hat)
                    .and(&self.v[i])
                    .for_each(|p, &m, &v| {
                        let v_hat = (v / (1.0 - beta2_t)).sqrt();
                        *p -= lr * m / (v_hat + self.eps);
                    });
            } else {
                value.zip_mut_with(&m_hat, |p, &m| *p -= self.learning_rate * m);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn descends_a_quadratic() {
        // minimize f(x) = sum((x - 3)^2); gradient 2(x - 3)
        let mut store = ParamStore::new();
        let x = store.add("x", Matrix::zeros((1, 3)));
        let mut opt = RAdam::new(&store, 0.05);
        for _ in 0..800 {
            let g = store.value(x).mapv(|v| 2.0 * (v - 3.0));
            opt.step(&mut store, &[(x, g)]);
        }
        for &v in store.value(x).iter() {
            assert!((v - 3.0).abs() < 1e-2, "{v}");
        }
    }

    #[test]
    fn early_steps_skip_the_adaptive_denominator() {
        // For the default beta2, rho_t stays <= 4 during the first steps,
        // so the update is the plain rectified momentum step.
        let mut store = ParamStore::new();
        let x = store.add("x", Matrix::zeros((1, 1)));
        let mut opt = RAdam::new(&store, 0.1);
        let g = Matrix::from_elem((1, 1), 1.0);
        opt.step(&mut store, &[(x, g)]);
        // m_hat = g, update = lr * g
        assert!((store.value(x)[(0, 0)] + 0.1).abs() < 1e-12);
    }
}
