use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{glorot_init, Matrix};
use crate::rng::Rng;

use super::gate::GateVector;

/// Contextual input MoE: a gate-weighted sum of per-class, per-context-offset
/// affine transforms of a window of feature vectors,
///
///   y(t) = Σ_i α_i(t) · Σ_{j=−K..K} (A_ij · x(t+j) + b_ij)
///
/// The gate α comes from the pre-trained broad-class auxiliary classifier;
/// this layer does not produce it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContextualMoeLayer {
    /// experts[i][j]: class i, context offset j−K.
    pub experts: Vec<Vec<Matrix>>,
    pub biases: Vec<Vec<Vec<f64>>>,
    in_dim: usize,
    out_dim: usize,
    context_radius: usize,
}

#[derive(Debug, Clone)]
pub struct ContextualMoeCache {
    window: Vec<Vec<f64>>,
    gate: Vec<f64>,
    /// Per-class partial sums Σ_j (A_ij x_j + b_ij), kept for grad_gate.
    class_sums: Vec<Vec<f64>>,
}

/// Gradients of a contextual MoE forward call.
#[derive(Debug, Clone)]
pub struct ContextualMoeGrads {
    pub window: Vec<Vec<f64>>,
    pub gate: Vec<f64>,
    pub params: Vec<f64>,
}

impl ContextualMoeLayer {
    pub fn glorot(
        class_count: usize,
        context_radius: usize,
        out_dim: usize,
        in_dim: usize,
        rng: &mut Rng,
    ) -> Self {
        let width = 2 * context_radius + 1;
        let experts = (0..class_count)
            .map(|_| (0..width).map(|_| glorot_init(out_dim, in_dim, rng)).collect())
            .collect();
        let biases = (0..class_count)
            .map(|_| (0..width).map(|_| vec![0.0; out_dim]).collect())
            .collect();
        ContextualMoeLayer {
            experts,
            biases,
            in_dim,
            out_dim,
            context_radius,
        }
    }

    pub fn class_count(&self) -> usize {
        self.experts.len()
    }

    pub fn context_radius(&self) -> usize {
        self.context_radius
    }

    pub fn window_len(&self) -> usize {
        2 * self.context_radius + 1
    }

    pub fn in_dim(&self) -> usize {
        self.in_dim
    }

    pub fn out_dim(&self) -> usize {
        self.out_dim
    }

    pub fn param_count(&self) -> usize {
        self.class_count() * self.window_len() * (self.out_dim * self.in_dim + self.out_dim)
    }

    pub fn forward(
        &self,
        window: &[Vec<f64>],
        gate: &GateVector,
    ) -> Result<(Vec<f64>, ContextualMoeCache)> {
        if window.len() != self.window_len() {
            return Err(Error::Shape {
                context: "contextual_moe_forward window",
                expected: self.window_len(),
                got: window.len(),
            });
        }
        if gate.len() != self.class_count() {
            return Err(Error::Shape {
                context: "contextual_moe_forward gate",
                expected: self.class_count(),
                got: gate.len(),
            });
        }
        let sum: f64 = gate.weights().iter().sum();
        if (sum - 1.0).abs() > 1e-6 || gate.weights().iter().any(|w| *w < -1e-6) {
            return Err(Error::Validation(format!(
                "gate is off the probability simplex (sum {sum})"
            )));
        }
        let mut y = vec![0.0; self.out_dim];
        let mut class_sums = Vec::with_capacity(self.class_count());
        for (i, alpha) in gate.weights().iter().enumerate() {
            let mut s = vec![0.0; self.out_dim];
            for (j, x) in window.iter().enumerate() {
                if x.len() != self.in_dim {
                    return Err(Error::Shape {
                        context: "contextual_moe_forward frame",
                        expected: self.in_dim,
                        got: x.len(),
                    });
                }
                let ax = self.experts[i][j].apply(x)?;
                for ((sk, axk), bk) in s.iter_mut().zip(&ax).zip(&self.biases[i][j]) {
                    *sk += axk + bk;
                }
            }
            for (yk, sk) in y.iter_mut().zip(&s) {
                *yk += alpha * sk;
            }
            class_sums.push(s);
        }
        Ok((
            y,
            ContextualMoeCache {
                window: window.to_vec(),
                gate: gate.weights().to_vec(),
                class_sums,
            },
        ))
    }

    /// Closed-form gradients:
    ///   d/dx(t+j) = Σ_i α_i A_ijᵀ g,  d/dα_i = g · Σ_j (A_ij x_j + b_ij),
    ///   d/dA_ij = α_i g ⊗ x_j,        d/db_ij = α_i g.
    pub fn backward(
        &self,
        cache: &ContextualMoeCache,
        grad_out: &[f64],
    ) -> Result<ContextualMoeGrads> {
        if cache.gate.len() != self.class_count()
            || cache.window.len() != self.window_len()
            || cache.window.iter().any(|x| x.len() != self.in_dim)
        {
            return Err(Error::Validation(
                "cache does not match this contextual MoE layer".into(),
            ));
        }
        if grad_out.len() != self.out_dim {
            return Err(Error::Shape {
                context: "contextual_moe_backward grad_out",
                expected: self.out_dim,
                got: grad_out.len(),
            });
        }
        let mut grad_window = vec![vec![0.0; self.in_dim]; self.window_len()];
        let mut grad_gate = Vec::with_capacity(self.class_count());
        let mut grad_params = Vec::with_capacity(self.param_count());
        for (i, &alpha) in cache.gate.iter().enumerate() {
            let dot: f64 = grad_out
                .iter()
                .zip(&cache.class_sums[i])
                .map(|(g, s)| g * s)
                .sum();
            grad_gate.push(dot);
            for (j, x) in cache.window.iter().enumerate() {
                let at_g = self.experts[i][j].apply_transpose(grad_out)?;
                for (gw, a) in grad_window[j].iter_mut().zip(&at_g) {
                    *gw += alpha * a;
                }
                for gr in grad_out.iter() {
                    let s = alpha * gr;
                    for xc in x.iter() {
                        grad_params.push(s * xc);
                    }
                }
                for gr in grad_out.iter() {
                    grad_params.push(alpha * gr);
                }
            }
        }
        Ok(ContextualMoeGrads {
            window: grad_window,
            gate: grad_gate,
            params: grad_params,
        })
    }

    /// Flat layout: for each class i, for each offset j: A_ij row-major, b_ij.
    pub fn flat_params(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.param_count());
        for (exp_row, bias_row) in self.experts.iter().zip(&self.biases) {
            for (a, b) in exp_row.iter().zip(bias_row) {
                out.extend_from_slice(a.data());
                out.extend_from_slice(b);
            }
        }
        out
    }

    pub fn set_flat_params(&mut self, flat: &[f64]) {
        let mut pos = 0;
        for (exp_row, bias_row) in self.experts.iter_mut().zip(&mut self.biases) {
            for (a, b) in exp_row.iter_mut().zip(bias_row.iter_mut()) {
                let nw = a.param_count();
                a.data_mut().copy_from_slice(&flat[pos..pos + nw]);
                pos += nw;
                let nb = b.len();
                b.copy_from_slice(&flat[pos..pos + nb]);
                pos += nb;
            }
        }
    }

    pub fn update(&mut self, grads: &[f64], scale: f64) {
        let mut pos = 0;
        for (exp_row, bias_row) in self.experts.iter_mut().zip(&mut self.biases) {
            for (a, b) in exp_row.iter_mut().zip(bias_row.iter_mut()) {
                for p in a.data_mut() {
                    *p += scale * grads[pos];
                    pos += 1;
                }
                for p in b.iter_mut() {
                    *p += scale * grads[pos];
                    pos += 1;
                }
            }
        }
    }
}
