use crate::error::{Error, Result};
use crate::numcore::Matrix;
use crate::scalar::Scalar;

/// Update rule applied after each mini-batch.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Optimizer {
    Adam { beta1: f64, beta2: f64, eps: f64 },
    Sgd,
}

impl Default for Optimizer {
    fn default() -> Self {
        Optimizer::Adam {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

impl Optimizer {
    pub fn validate(&self) -> Result<()> {
        if let Optimizer::Adam { beta1, beta2, eps } = *self {
            let unit = |b: f64| (0.0..1.0).contains(&b);
            if !unit(beta1) || !unit(beta2) || !(eps > 0.0) {
                return Err(Error::Config {
                    key: "train.optimizer".into(),
                    msg: format!("invalid Adam settings beta1={beta1} beta2={beta2} eps={eps}"),
                });
            }
        }
        Ok(())
    }
}

/// Optimizer state for a fixed list of tensors.
#[derive(Debug, Clone)]
pub struct OptimizerState<T> {
    kind: Optimizer,
    step: u64,
    m: Vec<Matrix<T>>,
    v: Vec<Matrix<T>>,
}

impl<T: Scalar> OptimizerState<T> {
    pub fn new(kind: Optimizer, shapes: &[(usize, usize)]) -> Self {
        let zeros = || shapes.iter().map(|&(r, c)| Matrix::zeros(r, c)).collect();
        Self {
            kind,
            step: 0,
            m: zeros(),
            v: zeros(),
        }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    /// Applies one update with learning rate `lr`.
    pub fn apply(&mut self, params: &mut [&mut Matrix<T>], grads: &[Matrix<T>], lr: f64) {
        self.step += 1;
        match self.kind {
            Optimizer::Sgd => {
                let lr = T::lit(lr);
                for (p, g) in params.iter_mut().zip(grads) {
                    for (w, &d) in p.as_mut_slice().iter_mut().zip(g.as_slice()) {
                        *w -= lr * d;
                    }
                }
            }
            Optimizer::Adam { beta1, beta2, eps } => {
                let t = self.step as i32;
                let c1 = 1.0 - beta1.powi(t);
                let c2 = 1.0 - beta2.powi(t);
                let (b1, b2) = (T::lit(beta1), T::lit(beta2));
                let (one_b1, one_b2) = (T::lit(1.0 - beta1), T::lit(1.0 - beta2));
                let step = T::lit(lr / c1);
                let c2_sqrt = T::lit(c2.sqrt());
                let eps = T::lit(eps);
                for (((p, g), m), v) in params.iter_mut().zip(grads).zip(&mut self.m).zip(&mut self.v) {
                    let w = p.as_mut_slice();
                    let (m, v) = (m.as_mut_slice(), v.as_mut_slice());
                    for (e, &d) in g.as_slice().iter().enumerate() {
                        m[e] = b1 * m[e] + one_b1 * d;
                        v[e] = b2 * v[e] + one_b2 * d * d;
                        w[e] -= step * m[e] / (v[e].sqrt() / c2_sqrt + eps);
                    }
                }
            }
        }
    }
}

/// Global L2 norm over all tensors.
pub fn global_norm<T: Scalar>(grads: &[Matrix<T>]) -> f64 {
    grads
        .iter()
        .map(|g| g.norm_sq().as_f64())
        .sum::<f64>()
        .sqrt()
}

/// Rescales `grads` in place so their global norm is at most `max_norm`.
/// Returns the norm before clipping.
pub fn clip_global_norm<T: Scalar>(grads: &mut [Matrix<T>], max_norm: f64) -> f64 {
    let norm = global_norm(grads);
    if norm > max_norm && norm > 0.0 {
        let s = T::lit(max_norm / norm);
        for g in grads.iter_mut() {
            for v in g.as_mut_slice() {
                *v *= s;
            }
        }
    }
    norm
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn adam_first_step_moves_by_lr() {
        let mut p = Matrix::from_rows(&[[1.0f64, -2.0]]).unwrap();
        let g = Matrix::from_rows(&[[0.5f64, -3.0]]).unwrap();
        let mut st = OptimizerState::new(Optimizer::default(), &[(1, 2)]);
        st.apply(&mut [&mut p], &[g], 0.1);
        // bias-corrected first step is lr · sign(g) up to eps
        assert!((p.get(0, 0) - 0.9).abs() < 1e-6);
        assert!((p.get(0, 1) + 1.9).abs() < 1e-6);
    }

    #[test]
    fn sgd_step() {
        let mut p = Matrix::scalar(1.0f64);
        let mut st = OptimizerState::new(Optimizer::Sgd, &[(1, 1)]);
        st.apply(&mut [&mut p], &[Matrix::scalar(2.0)], 0.25);
        assert_eq!(p.item().unwrap(), 0.5);
    }

    #[test]
    fn clipping_caps_norm() {
        let mut g = vec![Matrix::from_rows(&[[3.0f64, 4.0]]).unwrap(), Matrix::scalar(0.0)];
        let before = clip_global_norm(&mut g, 1.0);
        assert_eq!(before, 5.0);
        assert!((global_norm(&g) - 1.0).abs() < 1e-12);
        let mut small = vec![Matrix::scalar(0.5f64)];
        clip_global_norm(&mut small, 1.0);
        assert_eq!(small[0].item().unwrap(), 0.5);
    }
}
