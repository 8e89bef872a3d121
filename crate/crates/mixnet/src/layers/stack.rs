use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::affine::{AffineCache, AffineLayer};
use super::contextual::{ContextualMoeCache, ContextualMoeLayer};
use super::eigen_moe::{EigenMoeCache, EigenMoeLayer};
use super::gate::{softmax_ce, GateVector};
use super::gated::{GatedMoeCache, GatedMoeLayer};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub enum Layer {
    Affine(AffineLayer),
    Relu { dim: usize },
    ContextualMoe(ContextualMoeLayer),
    GatedMoe(GatedMoeLayer),
    EigenMoe(EigenMoeLayer),
}

impl Layer {
    pub fn in_dim(&self) -> usize {
        match self {
            Layer::Affine(l) => l.in_dim(),
            Layer::Relu { dim } => *dim,
            Layer::ContextualMoe(l) => l.in_dim(),
            Layer::GatedMoe(l) => l.in_dim(),
            Layer::EigenMoe(l) => l.in_dim(),
        }
    }

    pub fn out_dim(&self) -> usize {
        match self {
            Layer::Affine(l) => l.out_dim(),
            Layer::Relu { dim } => *dim,
            Layer::ContextualMoe(l) => l.out_dim(),
            Layer::GatedMoe(l) => l.out_dim(),
            Layer::EigenMoe(l) => l.out_dim(),
        }
    }

    pub fn param_count(&self) -> usize {
        match self {
            Layer::Affine(l) => l.param_count(),
            Layer::Relu { .. } => 0,
            Layer::ContextualMoe(l) => l.param_count(),
            Layer::GatedMoe(l) => l.param_count(),
            Layer::EigenMoe(l) => l.param_count(),
        }
    }

    pub fn flat_params(&self) -> Vec<f64> {
        match self {
            Layer::Affine(l) => l.flat_params(),
            Layer::Relu { .. } => Vec::new(),
            Layer::ContextualMoe(l) => l.flat_params(),
            Layer::GatedMoe(l) => l.flat_params(),
            Layer::EigenMoe(l) => l.flat_params(),
        }
    }

    pub fn set_flat_params(&mut self, flat: &[f64]) {
        match self {
            Layer::Affine(l) => l.set_flat_params(flat),
            Layer::Relu { .. } => {}
            Layer::ContextualMoe(l) => l.set_flat_params(flat),
            Layer::GatedMoe(l) => l.set_flat_params(flat),
            Layer::EigenMoe(l) => l.set_flat_params(flat),
        }
    }

    pub fn update(&mut self, grads: &[f64], scale: f64) {
        match self {
            Layer::Affine(l) => l.update(grads, scale),
            Layer::Relu { .. } => {}
            Layer::ContextualMoe(l) => l.update(grads, scale),
            Layer::GatedMoe(l) => l.update(grads, scale),
            Layer::EigenMoe(l) => l.update(grads, scale),
        }
    }
}

#[derive(Debug, Clone)]
pub enum LayerCache {
    Affine(AffineCache),
    Relu { input: Vec<f64> },
    ContextualMoe(ContextualMoeCache),
    GatedMoe(GatedMoeCache),
    EigenMoe(EigenMoeCache),
}

/// Result of one backward pass through a stack.
#[derive(Debug, Clone)]
pub struct StackGrads {
    /// One flat gradient vector per layer, matching each layer's flat layout.
    pub per_layer: Vec<Vec<f64>>,
    /// Gradient with respect to each frame of the input window.
    pub input_window: Vec<Vec<f64>>,
    /// Gradient with respect to the injected gate (empty when the stack has
    /// no contextual first layer).
    pub gate: Vec<f64>,
}

/// An ordered composition of layers ending in a softmax cross-entropy head.
///
/// A contextual MoE may appear only as the first layer; it consumes a window
/// of `2K+1` frames plus an externally supplied gate. Every other stack
/// consumes a single frame.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LayerStack {
    layers: Vec<Layer>,
    frozen: Vec<bool>,
    target_count: usize,
}

impl LayerStack {
    pub fn new(layers: Vec<Layer>, target_count: usize) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::Validation("stack needs at least one layer".into()));
        }
        for (idx, pair) in layers.windows(2).enumerate() {
            if matches!(pair[1], Layer::ContextualMoe(_)) {
                return Err(Error::Validation(
                    "contextual MoE is only supported as the first layer".into(),
                ));
            }
            if pair[0].out_dim() != pair[1].in_dim() {
                return Err(Error::Validation(format!(
                    "dimension chain broken between layers {} and {}: {} vs {}",
                    idx,
                    idx + 1,
                    pair[0].out_dim(),
                    pair[1].in_dim()
                )));
            }
        }
        let last = layers.last().unwrap().out_dim();
        if last != target_count {
            return Err(Error::Validation(format!(
                "final layer emits {last} logits but the head expects {target_count}"
            )));
        }
        let frozen = vec![false; layers.len()];
        Ok(LayerStack {
            layers,
            frozen,
            target_count,
        })
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Layer] {
        &mut self.layers
    }

    pub fn target_count(&self) -> usize {
        self.target_count
    }

    pub fn set_frozen(&mut self, index: usize, frozen: bool) {
        self.frozen[index] = frozen;
    }

    pub fn is_frozen(&self, index: usize) -> bool {
        self.frozen[index]
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(Layer::param_count).sum()
    }

    pub fn trainable_param_count(&self) -> usize {
        self.layers
            .iter()
            .zip(&self.frozen)
            .filter(|(_, f)| !**f)
            .map(|(l, _)| l.param_count())
            .sum()
    }

    /// Window length the stack expects (1 unless it starts contextually).
    pub fn window_len(&self) -> usize {
        match &self.layers[0] {
            Layer::ContextualMoe(l) => l.window_len(),
            _ => 1,
        }
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].in_dim()
    }

    pub fn starts_contextual(&self) -> bool {
        matches!(self.layers[0], Layer::ContextualMoe(_))
    }

    /// Runs the stack up to the logits, returning per-layer caches.
    pub fn forward_logits(
        &self,
        window: &[Vec<f64>],
        gate: Option<&GateVector>,
    ) -> Result<(Vec<f64>, Vec<LayerCache>)> {
        let mut caches = Vec::with_capacity(self.layers.len());
        let mut current: Vec<f64>;
        match &self.layers[0] {
            Layer::ContextualMoe(l) => {
                let gate = gate.ok_or_else(|| {
                    Error::Validation("contextual stack requires a gate".into())
                })?;
                let (y, c) = l.forward(window, gate)?;
                caches.push(LayerCache::ContextualMoe(c));
                current = y;
            }
            first => {
                if window.len() != 1 {
                    return Err(Error::Shape {
                        context: "stack_forward window",
                        expected: 1,
                        got: window.len(),
                    });
                }
                let (y, c) = forward_one(first, &window[0])?;
                caches.push(c);
                current = y;
            }
        }
        for layer in &self.layers[1..] {
            let (y, c) = forward_one(layer, &current)?;
            caches.push(c);
            current = y;
        }
        Ok((current, caches))
    }

    /// Full forward through the loss head.
    pub fn forward(
        &self,
        window: &[Vec<f64>],
        gate: Option<&GateVector>,
        target: usize,
    ) -> Result<(f64, Vec<f64>, Vec<LayerCache>)> {
        let (logits, caches) = self.forward_logits(window, gate)?;
        let (loss, _, posteriors) = softmax_ce(&logits, target)?;
        Ok((loss, posteriors, caches))
    }

    /// Posterior distribution over targets (softmax of the logits).
    pub fn posteriors(&self, window: &[Vec<f64>], gate: Option<&GateVector>) -> Result<Vec<f64>> {
        let (logits, _) = self.forward_logits(window, gate)?;
        Ok(super::gate::softmax(&logits))
    }

    /// Activations after every layer; entry 0 is the first layer's output,
    /// entry i the output of layer i.
    pub fn activations(
        &self,
        window: &[Vec<f64>],
        gate: Option<&GateVector>,
    ) -> Result<Vec<Vec<f64>>> {
        let mut outs = Vec::with_capacity(self.layers.len());
        let mut current: Vec<f64>;
        match &self.layers[0] {
            Layer::ContextualMoe(l) => {
                let gate = gate.ok_or_else(|| {
                    Error::Validation("contextual stack requires a gate".into())
                })?;
                current = l.forward(window, gate)?.0;
            }
            first => {
                current = forward_one(first, &window[0])?.0;
            }
        }
        outs.push(current.clone());
        for layer in &self.layers[1..] {
            current = forward_one(layer, &current)?.0;
            outs.push(current.clone());
        }
        Ok(outs)
    }

    /// Backward pass from a gradient on the logits.
    pub fn backward_from_logits(
        &self,
        caches: &[LayerCache],
        grad_logits: &[f64],
    ) -> Result<StackGrads> {
        if caches.len() != self.layers.len() {
            return Err(Error::Validation(
                "cache list does not match stack depth".into(),
            ));
        }
        let mut per_layer = vec![Vec::new(); self.layers.len()];
        let mut grad = grad_logits.to_vec();
        for idx in (1..self.layers.len()).rev() {
            let (gin, gp) = backward_one(&self.layers[idx], &caches[idx], &grad)?;
            per_layer[idx] = gp;
            grad = gin;
        }
        let (input_window, gate) = match (&self.layers[0], &caches[0]) {
            (Layer::ContextualMoe(l), LayerCache::ContextualMoe(c)) => {
                let g = l.backward(c, &grad)?;
                per_layer[0] = g.params;
                (g.window, g.gate)
            }
            (layer, cache) => {
                let (gin, gp) = backward_one(layer, cache, &grad)?;
                per_layer[0] = gp;
                (vec![gin], Vec::new())
            }
        };
        Ok(StackGrads {
            per_layer,
            input_window,
            gate,
        })
    }

    /// loss + gradients for one (window, gate, target) sample.
    pub fn loss_and_grads(
        &self,
        window: &[Vec<f64>],
        gate: Option<&GateVector>,
        target: usize,
    ) -> Result<(f64, Vec<f64>, StackGrads)> {
        let (logits, caches) = self.forward_logits(window, gate)?;
        let (loss, grad_logits, posteriors) = softmax_ce(&logits, target)?;
        let grads = self.backward_from_logits(&caches, &grad_logits)?;
        Ok((loss, posteriors, grads))
    }

    /// SGD step: params += scale · grads, skipping frozen layers.
    pub fn update(&mut self, grads: &StackGrads, scale: f64) {
        for (idx, layer) in self.layers.iter_mut().enumerate() {
            if self.frozen[idx] || grads.per_layer[idx].is_empty() {
                continue;
            }
            layer.update(&grads.per_layer[idx], scale);
        }
    }
}

fn forward_one(layer: &Layer, input: &[f64]) -> Result<(Vec<f64>, LayerCache)> {
    match layer {
        Layer::Affine(l) => {
            let (y, c) = l.forward(input)?;
            Ok((y, LayerCache::Affine(c)))
        }
        Layer::Relu { dim } => {
            if input.len() != *dim {
                return Err(Error::Shape {
                    context: "relu_forward",
                    expected: *dim,
                    got: input.len(),
                });
            }
            let y = input.iter().map(|&v| v.max(0.0)).collect();
            Ok((
                y,
                LayerCache::Relu {
                    input: input.to_vec(),
                },
            ))
        }
        Layer::GatedMoe(l) => {
            let (y, c) = l.forward(input)?;
            Ok((y, LayerCache::GatedMoe(c)))
        }
        Layer::EigenMoe(l) => {
            let (y, c) = l.forward(input)?;
            Ok((y, LayerCache::EigenMoe(c)))
        }
        Layer::ContextualMoe(_) => Err(Error::Validation(
            "contextual MoE cannot consume a single vector".into(),
        )),
    }
}

fn backward_one(layer: &Layer, cache: &LayerCache, grad: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
    match (layer, cache) {
        (Layer::Affine(l), LayerCache::Affine(c)) => l.backward(c, grad),
        (Layer::Relu { .. }, LayerCache::Relu { input }) => {
            let gin = input
                .iter()
                .zip(grad)
                .map(|(&x, &g)| if x > 0.0 { g } else { 0.0 })
                .collect();
            Ok((gin, Vec::new()))
        }
        (Layer::GatedMoe(l), LayerCache::GatedMoe(c)) => l.backward(c, grad),
        (Layer::EigenMoe(l), LayerCache::EigenMoe(c)) => l.backward(c, grad),
        _ => Err(Error::Validation("cache kind does not match layer".into())),
    }
}
