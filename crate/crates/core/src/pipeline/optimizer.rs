//! SGD with momentum over named f32 parameters.

use std::collections::BTreeMap;

use crate::numerics::tensor::Tensor;

pub struct SgdMomentum {
    pub learning_rate: f32,
    pub momentum: f32,
    velocity: BTreeMap<String, Vec<f32>>,
}

impl SgdMomentum {
    pub fn new(learning_rate: f32, momentum: f32) -> Self {
        SgdMomentum {
            learning_rate,
            momentum,
            velocity: BTreeMap::new(),
        }
    }

    /// v = momentum * v + g; p -= lr * v
    pub fn apply(&mut self, name: &str, param: &mut Tensor, grad: &[f64]) {
        debug_assert_eq!(param.numel(), grad.len(), "gradient size mismatch for {name}");
        let v = self
            .velocity
            .entry(name.to_string())
            .or_insert_with(|| vec![0.0; grad.len()]);
        for ((p, vel), &g) in param.data_mut().iter_mut().zip(v.iter_mut()).zip(grad) {
            *vel = self.momentum * *vel + g as f32;
            *p -= self.learning_rate * *vel;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn momentum_accumulates() {
        let mut opt = SgdMomentum::new(0.1, 0.9);
        let mut p = Tensor::from_vec(vec![1.0]);
        opt.apply("p", &mut p, &[1.0]);
        assert!((p.data()[0] - 0.9).abs() < 1e-6);
        opt.apply("p", &mut p, &[1.0]);
        // v = 0.9*1 + 1 = 1.9; p = 0.9 - 0.19 = 0.71
        assert!((p.data()[0] - 0.71).abs() < 1e-6);
    }

    #[test]
    fn distinct_names_have_distinct_velocities() {
        let mut opt = SgdMomentum::new(0.1, 0.9);
        let mut a = Tensor::from_vec(vec![0.0]);
        let mut b = Tensor::from_vec(vec![0.0]);
        opt.apply("a", &mut a, &[1.0]);
        opt.apply("b", &mut b, &[-1.0]);
        assert!(a.data()[0] < 0.0);
        assert!(b.data()[0] > 0.0);
    }
}
