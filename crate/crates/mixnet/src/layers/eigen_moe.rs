use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{glorot_init, Matrix};
use crate::rng::Rng;

use super::gate::{softmax_backward, GateVector};

/// MoE layer of the two-stage baseline: each expert is one affine + ReLU,
/// the gate is an affine + softmax over the experts,
///
///   z = Σ_i g_i(x) · ReLU(W_i x + b_i).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EigenMoeLayer {
    pub expert_weights: Vec<Matrix>,
    pub expert_biases: Vec<Vec<f64>>,
    pub gate_weights: Matrix,
    pub gate_bias: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct EigenMoeCache {
    input: Vec<f64>,
    gate: Vec<f64>,
    /// Pre-activations W_i x + b_i (for the ReLU mask) and activations.
    preacts: Vec<Vec<f64>>,
    acts: Vec<Vec<f64>>,
}

impl EigenMoeLayer {
    pub fn glorot(expert_count: usize, out_dim: usize, in_dim: usize, rng: &mut Rng) -> Self {
        let expert_weights = (0..expert_count)
            .map(|_| glorot_init(out_dim, in_dim, rng))
            .collect();
        let gate_weights = glorot_init(expert_count, in_dim, rng);
        EigenMoeLayer {
            expert_weights,
            expert_biases: vec![vec![0.0; out_dim]; expert_count],
            gate_weights,
            gate_bias: vec![0.0; expert_count],
        }
    }

    pub fn expert_count(&self) -> usize {
        self.expert_weights.len()
    }

    pub fn in_dim(&self) -> usize {
        self.expert_weights[0].cols()
    }

    pub fn out_dim(&self) -> usize {
        self.expert_weights[0].rows()
    }

    pub fn param_count(&self) -> usize {
        self.gate_weights.param_count()
            + self.gate_bias.len()
            + self
                .expert_weights
                .iter()
                .zip(&self.expert_biases)
                .map(|(w, b)| w.param_count() + b.len())
                .sum::<usize>()
    }

    pub fn forward(&self, input: &[f64]) -> Result<(Vec<f64>, EigenMoeCache)> {
        if input.len() != self.in_dim() {
            return Err(Error::Shape {
                context: "eigen_moe_forward",
                expected: self.in_dim(),
                got: input.len(),
            });
        }
        let mut logits = self.gate_weights.apply(input)?;
        for (l, b) in logits.iter_mut().zip(&self.gate_bias) {
            *l += b;
        }
        let gate = GateVector::from_softmax(&logits);
        let mut z = vec![0.0; self.out_dim()];
        let mut preacts = Vec::with_capacity(self.expert_count());
        let mut acts = Vec::with_capacity(self.expert_count());
        for (i, (w, b)) in self.expert_weights.iter().zip(&self.expert_biases).enumerate() {
            let mut a = w.apply(input)?;
            for (ak, bk) in a.iter_mut().zip(b) {
                *ak += bk;
            }
            let f: Vec<f64> = a.iter().map(|&v| v.max(0.0)).collect();
            let gi = gate.weights()[i];
            for (zk, fk) in z.iter_mut().zip(&f) {
                *zk += gi * fk;
            }
            preacts.push(a);
            acts.push(f);
        }
        Ok((
            z,
            EigenMoeCache {
                input: input.to_vec(),
                gate: gate.weights().to_vec(),
                preacts,
                acts,
            },
        ))
    }

    pub fn backward(&self, cache: &EigenMoeCache, grad_out: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
        if cache.input.len() != self.in_dim() || cache.gate.len() != self.expert_count() {
            return Err(Error::Validation(
                "cache does not match this Eigen-MoE layer".into(),
            ));
        }
        if grad_out.len() != self.out_dim() {
            return Err(Error::Shape {
                context: "eigen_moe_backward grad_out",
                expected: self.out_dim(),
                got: grad_out.len(),
            });
        }
        let grad_gate: Vec<f64> = cache
            .acts
            .iter()
            .map(|f| f.iter().zip(grad_out).map(|(fk, gk)| fk * gk).sum())
            .collect();
        let grad_logits = softmax_backward(&cache.gate, &grad_gate);

        let mut grad_in = self.gate_weights.apply_transpose(&grad_logits)?;
        let mut grads = Vec::with_capacity(self.param_count());
        for gl in grad_logits.iter() {
            for x in cache.input.iter() {
                grads.push(gl * x);
            }
        }
        grads.extend_from_slice(&grad_logits);

        for (i, w) in self.expert_weights.iter().enumerate() {
            let gi = cache.gate[i];
            // upstream through the ReLU of expert i, already scaled by g_i
            let masked: Vec<f64> = grad_out
                .iter()
                .zip(&cache.preacts[i])
                .map(|(gk, &pk)| if pk > 0.0 { gi * gk } else { 0.0 })
                .collect();
            let wt = w.apply_transpose(&masked)?;
            for (gin, v) in grad_in.iter_mut().zip(&wt) {
                *gin += v;
            }
            for mk in masked.iter() {
                for x in cache.input.iter() {
                    grads.push(mk * x);
                }
            }
            grads.extend_from_slice(&masked);
        }
        Ok((grad_in, grads))
    }

    pub fn flat_params(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.param_count());
        out.extend_from_slice(self.gate_weights.data());
        out.extend_from_slice(&self.gate_bias);
        for (w, b) in self.expert_weights.iter().zip(&self.expert_biases) {
            out.extend_from_slice(w.data());
            out.extend_from_slice(b);
        }
        out
    }

    pub fn set_flat_params(&mut self, flat: &[f64]) {
        let mut pos = self.gate_weights.param_count();
        self.gate_weights.data_mut().copy_from_slice(&flat[..pos]);
        let nb = self.gate_bias.len();
        self.gate_bias.copy_from_slice(&flat[pos..pos + nb]);
        pos += self.gate_bias.len();
        for (w, b) in self.expert_weights.iter_mut().zip(&mut self.expert_biases) {
            let nw = w.param_count();
            w.data_mut().copy_from_slice(&flat[pos..pos + nw]);
            pos += nw;
            let nb = b.len();
            b.copy_from_slice(&flat[pos..pos + nb]);
            pos += nb;
        }
    }

    pub fn update(&mut self, grads: &[f64], scale: f64) {
        let mut params = self.flat_params();
        for (p, g) in params.iter_mut().zip(grads) {
            *p += scale * g;
        }
        self.set_flat_params(&params);
    }
}
