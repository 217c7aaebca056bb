use crate::error::{Error, Result};
use crate::params::ParameterStore;
use crate::tensor::{Scalar, Tensor};

/// Bias-corrected Adam. Moments live in the [`ParameterStore`] so they are
/// checkpointed with the weights.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Adam {
    pub fn new(lr: f64) -> Self {
        Adam {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }

    /// Applies one update. `grads` follows parameter order; `None` means the
    /// parameter did not take part in the loss and is treated as a zero
    /// gradient. Any non-finite gradient aborts the step before anything is
    /// modified.
    pub fn update<T: Scalar>(&self, store: &mut ParameterStore<T>, grads: &[Option<Tensor<T>>]) -> Result<()> {
        if grads.len() != store.len() {
            return Err(Error::invalid(
                "adam",
                format!("{} gradients for {} parameters", grads.len(), store.len()),
            ));
        }
        for (p, g) in store.iter().zip(grads) {
            if let Some(g) = g {
                if g.shape() != p.value.shape() {
                    return Err(Error::shape("adam", g.shape(), p.value.shape()));
                }
                if !g.all_finite() {
                    return Err(Error::NonFiniteGradient(p.name.clone()));
                }
            }
        }
        store.step += 1;
        let t = store.step as i32;
        let b1 = T::lit(self.beta1);
        let b2 = T::lit(self.beta2);
        let one = T::one();
        let c1 = T::lit(1.0 - self.beta1.powi(t));
        let c2 = T::lit(1.0 - self.beta2.powi(t));
        let lr = T::lit(self.lr);
        let eps = T::lit(self.eps);
        for (p, g) in store.iter_mut().zip(grads) {
            let n = p.value.numel();
            let zeros;
            let g = match g {
                Some(g) => g.data(),
                None => {
                    zeros = vec![T::zero(); n];
                    &zeros
                }
            };
            let (m, v) = (&mut p.adam_m, &mut p.adam_v);
            let w = p.value.data_mut();
            for i in 0..n {
                m[i] = b1 * m[i] + (one - b1) * g[i];
                v[i] = b2 * v[i] + (one - b2) * g[i] * g[i];
                let m_hat = m[i] / c1;
                let v_hat = v[i] / c2;
                w[i] = w[i] - lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar_store(v: f64) -> ParameterStore<f64> {
        let mut s = ParameterStore::new();
        s.add("w", Tensor::scalar(v)).unwrap();
        s
    }

    #[test]
    fn unit_gradient_first_step() {
        let mut s = scalar_store(1.0);
        let adam = Adam::new(0.1);
        adam.update(&mut s, &[Some(Tensor::scalar(1.0))]).unwrap();
        let w = s.iter().next().unwrap().value.item();
        // m_hat = v_hat = 1 -> step of lr / (1 + eps)
        assert!((w - (1.0 - 0.1 / (1.0 + 1e-8))).abs() < 1e-15);
        assert_eq!(s.step, 1);
    }

    #[test]
    fn scalar_recurrence_matches_closed_form() {
        let mut s = scalar_store(0.0);
        let adam = Adam::new(0.01);
        let mut w = 0.0f64;
        let (mut m, mut v) = (0.0f64, 0.0f64);
        for t in 1..=20 {
            let g = 0.5 + 0.1 * t as f64;
            adam.update(&mut s, &[Some(Tensor::scalar(g))]).unwrap();
            m = 0.9 * m + 0.1 * g;
            v = 0.999 * v + 0.001 * g * g;
            w -= 0.01 * (m / (1.0 - 0.9f64.powi(t))) / ((v / (1.0 - 0.999f64.powi(t))).sqrt() + 1e-8);
        }
        assert!((s.iter().next().unwrap().value.item() - w).abs() < 1e-14);
    }

    #[test]
    fn zero_gradient_leaves_params() {
        let mut s = scalar_store(0.3);
        Adam::new(0.1).update(&mut s, &[Some(Tensor::scalar(0.0))]).unwrap();
        Adam::new(0.1).update(&mut s, &[None]).unwrap();
        assert_eq!(s.iter().next().unwrap().value.item(), 0.3);
    }

    #[test]
    fn non_finite_gradient_names_parameter() {
        let mut s = scalar_store(0.3);
        let err = Adam::new(0.1)
            .update(&mut s, &[Some(Tensor::scalar(f64::NAN))])
            .unwrap_err();
        assert!(matches!(&err, Error::NonFiniteGradient(n) if n == "w"));
        assert_eq!(s.step, 0);
        assert_eq!(s.iter().next().unwrap().value.item(), 0.3);
    }
}
