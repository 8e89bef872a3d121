use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{glorot_init, Matrix};
use crate::rng::Rng;

use super::expert::ExpertMap;
use super::gate::{softmax_backward, GateVector};

/// Gated output MoE: the gate is an affine + softmax classifier over the
/// same input the experts consume, learned jointly and unsupervised,
///
///   β(t) = softmax(G y^{L−1}(t) + c)
///   z(t) = Σ_i β_i(t) · (B_i y^{L−1}(t) + b_i)
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GatedMoeLayer {
    pub experts: Vec<ExpertMap>,
    pub expert_biases: Vec<Vec<f64>>,
    pub gate_weights: Matrix,
    pub gate_bias: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct GatedMoeCache {
    input: Vec<f64>,
    beta: Vec<f64>,
    /// Per-expert outputs B_i y + b_i.
    expert_outs: Vec<Vec<f64>>,
}

impl GatedMoeLayer {
    pub fn new(
        experts: Vec<ExpertMap>,
        expert_biases: Vec<Vec<f64>>,
        gate_weights: Matrix,
        gate_bias: Vec<f64>,
    ) -> Result<Self> {
        let in_dim = experts
            .first()
            .map(ExpertMap::in_dim)
            .ok_or_else(|| Error::Validation("gated MoE needs at least one expert".into()))?;
        let out_dim = experts[0].out_dim();
        if experts
            .iter()
            .any(|e| e.in_dim() != in_dim || e.out_dim() != out_dim)
        {
            return Err(Error::Validation(
                "all gated-MoE experts must share in/out dims".into(),
            ));
        }
        if expert_biases.len() != experts.len()
            || expert_biases.iter().any(|b| b.len() != out_dim)
        {
            return Err(Error::Validation("expert bias shape mismatch".into()));
        }
        if gate_weights.rows() != experts.len()
            || gate_weights.cols() != in_dim
            || gate_bias.len() != experts.len()
        {
            return Err(Error::Validation("gate classifier shape mismatch".into()));
        }
        Ok(GatedMoeLayer {
            experts,
            expert_biases,
            gate_weights,
            gate_bias,
        })
    }

    pub fn glorot(experts: Vec<ExpertMap>, rng: &mut Rng) -> Result<Self> {
        let count = experts.len();
        let in_dim = experts[0].in_dim();
        let out_dim = experts[0].out_dim();
        let gate_weights = glorot_init(count, in_dim, rng);
        GatedMoeLayer::new(
            experts,
            vec![vec![0.0; out_dim]; count],
            gate_weights,
            vec![0.0; count],
        )
    }

    pub fn expert_count(&self) -> usize {
        self.experts.len()
    }

    pub fn in_dim(&self) -> usize {
        self.experts[0].in_dim()
    }

    pub fn out_dim(&self) -> usize {
        self.experts[0].out_dim()
    }

    pub fn param_count(&self) -> usize {
        self.gate_weights.param_count()
            + self.gate_bias.len()
            + self
                .experts
                .iter()
                .zip(&self.expert_biases)
                .map(|(e, b)| e.param_count() + b.len())
                .sum::<usize>()
    }

    pub fn forward(&self, input: &[f64]) -> Result<(Vec<f64>, GatedMoeCache)> {
        if input.len() != self.in_dim() {
            return Err(Error::Shape {
                context: "gated_moe_forward",
                expected: self.in_dim(),
                got: input.len(),
            });
        }
        let mut logits = self.gate_weights.apply(input)?;
        for (l, b) in logits.iter_mut().zip(&self.gate_bias) {
            *l += b;
        }
        let beta = GateVector::from_softmax(&logits);
        let mut z = vec![0.0; self.out_dim()];
        let mut expert_outs = Vec::with_capacity(self.expert_count());
        for (i, (expert, bias)) in self.experts.iter().zip(&self.expert_biases).enumerate() {
            let mut e = expert.apply(input)?;
            for (ek, bk) in e.iter_mut().zip(bias) {
                *ek += bk;
            }
            let w = beta.weights()[i];
            for (zk, ek) in z.iter_mut().zip(&e) {
                *zk += w * ek;
            }
            expert_outs.push(e);
        }
        Ok((
            z,
            GatedMoeCache {
                input: input.to_vec(),
                beta: beta.weights().to_vec(),
                expert_outs,
            },
        ))
    }

    pub fn gate_posteriors<'a>(&self, cache: &'a GatedMoeCache) -> &'a [f64] {
        &cache.beta
    }

    /// Returns (grad wrt input, flat param grads). The input gradient carries
    /// both the expert path Σ β_i B_iᵀ g and the gate path (softmax Jacobian
    /// chained through the gate affine).
    pub fn backward(&self, cache: &GatedMoeCache, grad_out: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
        if cache.input.len() != self.in_dim() || cache.beta.len() != self.expert_count() {
            return Err(Error::Validation(
                "cache does not match this gated MoE layer".into(),
            ));
        }
        if grad_out.len() != self.out_dim() {
            return Err(Error::Shape {
                context: "gated_moe_backward grad_out",
                expected: self.out_dim(),
                got: grad_out.len(),
            });
        }
        // d/dβ_i = g · e_i
        let grad_beta: Vec<f64> = cache
            .expert_outs
            .iter()
            .map(|e| e.iter().zip(grad_out).map(|(ek, gk)| ek * gk).sum())
            .collect();
        let grad_logits = softmax_backward(&cache.beta, &grad_beta);

        let mut grad_in = self.gate_weights.apply_transpose(&grad_logits)?;
        for (i, expert) in self.experts.iter().enumerate() {
            let bt_g = expert.apply_transpose(grad_out)?;
            let beta_i = cache.beta[i];
            for (gi, bg) in grad_in.iter_mut().zip(&bt_g) {
                *gi += beta_i * bg;
            }
        }

        // Flat layout: gate weights, gate bias, then per expert: map, bias.
        let mut grads = Vec::with_capacity(self.param_count());
        for gl in grad_logits.iter() {
            for x in cache.input.iter() {
                grads.push(gl * x);
            }
        }
        grads.extend_from_slice(&grad_logits);
        for (i, expert) in self.experts.iter().enumerate() {
            let beta_i = cache.beta[i];
            expert.push_grad(grad_out, &cache.input, beta_i, &mut grads);
            for gk in grad_out.iter() {
                grads.push(beta_i * gk);
            }
        }
        Ok((grad_in, grads))
    }

    pub fn flat_params(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.param_count());
        out.extend_from_slice(self.gate_weights.data());
        out.extend_from_slice(&self.gate_bias);
        for (e, b) in self.experts.iter().zip(&self.expert_biases) {
            out.extend(e.flat_params());
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
        for (e, b) in self.experts.iter_mut().zip(&mut self.expert_biases) {
            let ne = e.param_count();
            e.set_flat_params(&flat[pos..pos + ne]);
            pos += ne;
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
