use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::linalg::{glorot_init, Matrix};
use crate::rng::Rng;

/// y = W x + b.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AffineLayer {
    pub weights: Matrix,
    pub bias: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct AffineCache {
    pub input: Vec<f64>,
}

impl AffineLayer {
    pub fn new(weights: Matrix, bias: Vec<f64>) -> Self {
        assert_eq!(weights.rows(), bias.len());
        AffineLayer { weights, bias }
    }

    pub fn glorot(out_dim: usize, in_dim: usize, rng: &mut Rng) -> Self {
        AffineLayer {
            weights: glorot_init(out_dim, in_dim, rng),
            bias: vec![0.0; out_dim],
        }
    }

    pub fn in_dim(&self) -> usize {
        self.weights.cols()
    }

    pub fn out_dim(&self) -> usize {
        self.weights.rows()
    }

    pub fn param_count(&self) -> usize {
        self.weights.param_count() + self.bias.len()
    }

    pub fn forward(&self, x: &[f64]) -> Result<(Vec<f64>, AffineCache)> {
        let mut y = self.weights.apply(x)?;
        for (yi, bi) in y.iter_mut().zip(&self.bias) {
            *yi += bi;
        }
        Ok((
            y,
            AffineCache {
                input: x.to_vec(),
            },
        ))
    }

    /// Returns (grad wrt input, flat param grads: weights row-major then bias).
    pub fn backward(&self, cache: &AffineCache, grad_out: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
        let grad_in = self.weights.apply_transpose(grad_out)?;
        let mut grads = Vec::with_capacity(self.param_count());
        for r in 0..self.out_dim() {
            let gr = grad_out[r];
            for c in 0..self.in_dim() {
                grads.push(gr * cache.input[c]);
            }
        }
        grads.extend_from_slice(grad_out);
        Ok((grad_in, grads))
    }

    pub fn flat_params(&self) -> Vec<f64> {
        let mut p = self.weights.data().to_vec();
        p.extend_from_slice(&self.bias);
        p
    }

    pub fn set_flat_params(&mut self, flat: &[f64]) {
        let nw = self.weights.param_count();
        self.weights.data_mut().copy_from_slice(&flat[..nw]);
        self.bias.copy_from_slice(&flat[nw..]);
    }

    pub fn update(&mut self, grads: &[f64], scale: f64) {
        let nw = self.weights.param_count();
        for (p, g) in self.weights.data_mut().iter_mut().zip(&grads[..nw]) {
            *p += scale * g;
        }
        for (p, g) in self.bias.iter_mut().zip(&grads[nw..]) {
            *p += scale * g;
        }
    }
}
