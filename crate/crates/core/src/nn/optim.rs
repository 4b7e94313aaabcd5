use std::collections::HashMap;

use ndarray::ArrayD;

use super::Param;

/// Stochastic gradient descent with classical momentum. Velocity buffers are
/// keyed by parameter name; `reset` drops them (used after model restarts).
#[derive(Debug, Clone)]
pub struct SgdMomentum {
    pub lr: f64,
    pub momentum: f64,
    velocity: HashMap<String, ArrayD<f64>>,
}

impl SgdMomentum {
    pub fn new(lr: f64, momentum: f64) -> Self {
        SgdMomentum {
            lr,
            momentum,
            velocity: HashMap::new(),
        }
    }

    /// Apply one update to every parameter and clear its gradient.
    pub fn step(&mut self, params: Vec<&mut Param>) {
        for p in params {
            let vel = self
                .velocity
                .entry(p.name.clone())
                .or_insert_with(|| ArrayD::zeros(p.value.raw_dim()));
            vel.zip_mut_with(&p.grad, |v, g| *v = *v * self.momentum + g);
            p.value.scaled_add(-self.lr, vel);
            p.zero_grad();
        }
    }

    pub fn reset(&mut self) {
        self.velocity.clear();
    }
}
