//! Minimal neural-net engine: explicit forward/backward layers over `ndarray`,
//! fan-in-scaled uniform initialization, SGD with momentum.
//!
//! All math is `f64`. Layers cache what their backward pass needs; a backward
//! call consumes the cache of the most recent forward.

mod layers;
mod optim;
mod param;

pub use layers::{AvgPool2d, Conv2d, GlobalAvgPool, Layer, Linear, Relu, Tanh};
pub use optim::SgdMomentum;
pub use param::Param;

use ndarray::Array4;

/// A plain stack of conv-stage layers, applied in order.
#[derive(Debug, Clone)]
pub struct ConvStack {
    pub layers: Vec<Layer>,
}

impl ConvStack {
    pub fn forward(&mut self, x: &Array4<f64>) -> Array4<f64> {
        let mut cur = x.clone();
        for layer in &mut self.layers {
            cur = layer.forward(&cur);
        }
        cur
    }

    pub fn backward(&mut self, gy: &Array4<f64>) -> Array4<f64> {
        let mut cur = gy.clone();
        for layer in self.layers.iter_mut().rev() {
            cur = layer.backward(&cur);
        }
        cur
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param> {
        self.layers
            .iter_mut()
            .flat_map(|l| l.params_mut())
            .collect()
    }

    pub fn params(&self) -> Vec<&Param> {
        self.layers.iter().flat_map(|l| l.params()).collect()
    }
}
