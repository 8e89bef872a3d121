//! Model variants, the feature pipeline, minibatch SGD with newbob learning
//! rate halving, evaluation, and the MIXNET-CKPT v1 checkpoint format.

use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::{
    lda_apply, lda_fit, mean_normalize, splice, window_at, FrameSequence, LdaTransform,
};
use crate::layers::{
    softmax_backward, AffineLayer, ContextualMoeLayer, EigenMoeLayer, ExpertMap, GateVector,
    GatedMoeLayer, Layer, LayerStack,
};
use crate::linalg::{glorot_init, BandedMatrix, LowRankMatrix, Matrix};
use crate::rng::Rng;
use crate::synth::FrameDataset;

const INIT_TAG: u64 = 0x696e_6974;
const AUX_TAG: u64 = 0x6175_7800;
const EPOCH_TAG: u64 = 0x6570_6f00;

/// The architectures under study.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    /// Plain DNN on spliced features.
    Baseline,
    /// Two stacked learned-gate MoE layers with affine+ReLU experts.
    EigenDmoe,
    /// Contextual input MoE only.
    Mixnet1,
    /// Input MoE + gated output MoE, few low-rank experts.
    Mixnet2,
    /// Input MoE + gated output MoE, more low-rank experts.
    Mixnet3,
    /// Input MoE + gated output MoE, banded experts.
    Mixnet4,
}

impl Variant {
    pub const ALL: [Variant; 6] = [
        Variant::Baseline,
        Variant::EigenDmoe,
        Variant::Mixnet1,
        Variant::Mixnet2,
        Variant::Mixnet3,
        Variant::Mixnet4,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            Variant::Baseline => "baseline",
            Variant::EigenDmoe => "eigen_dmoe",
            Variant::Mixnet1 => "mixnet1",
            Variant::Mixnet2 => "mixnet2",
            Variant::Mixnet3 => "mixnet3",
            Variant::Mixnet4 => "mixnet4",
        }
    }

    pub fn parse(s: &str) -> Result<Variant> {
        Variant::ALL
            .into_iter()
            .find(|v| v.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown variant `{s}`")))
    }

    pub fn is_mixnet(&self) -> bool {
        matches!(
            self,
            Variant::Mixnet1 | Variant::Mixnet2 | Variant::Mixnet3 | Variant::Mixnet4
        )
    }
}

/// Structure of the gated-MoE expert maps.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExpertStructure {
    Full,
    LowRank { out_dim: usize },
    Banded { band: usize },
}

/// Everything needed to rebuild a network architecture.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub variant: Variant,
    /// Frame dimension after the LDA step.
    pub feature_dim: usize,
    /// Feature splicing radius applied before LDA.
    pub splice_radius: usize,
    pub hidden_width: usize,
    /// Number of ReLU hidden layers.
    pub hidden_layers: usize,
    pub target_count: usize,
    /// Broad classes = experts of the contextual input MoE.
    pub broad_count: usize,
    /// Context radius K of the input MoE.
    pub context_radius: usize,
    /// Expert count of the gated output MoE (0 = no gated MoE).
    pub expert_count: usize,
    pub expert_structure: ExpertStructure,
    pub eigen_experts: usize,
    pub eigen_dim: usize,
    pub aux_hidden_width: usize,
    pub aux_hidden_layers: usize,
}

impl ModelConfig {
    /// Desk-scale defaults for each variant. The MixNet variants trade the
    /// baseline's ±4 splice context for MoE structure, which is what keeps
    /// their parameter counts at or below the baseline's.
    pub fn for_variant(variant: Variant) -> ModelConfig {
        let splice_radius = match variant {
            Variant::Baseline | Variant::EigenDmoe => 4,
            _ => 0,
        };
        let expert_count = match variant {
            Variant::Mixnet2 => 3,
            Variant::Mixnet3 | Variant::Mixnet4 => 5,
            _ => 0,
        };
        let expert_structure = match variant {
            Variant::Mixnet4 => ExpertStructure::Banded { band: 7 },
            _ => ExpertStructure::LowRank { out_dim: 32 },
        };
        ModelConfig {
            variant,
            feature_dim: 26,
            splice_radius,
            hidden_width: 128,
            hidden_layers: 4,
            target_count: 45,
            broad_count: 3,
            context_radius: 1,
            expert_count,
            expert_structure,
            eigen_experts: 5,
            eigen_dim: 64,
            aux_hidden_width: 64,
            aux_hidden_layers: 3,
        }
    }

    /// Network input dimension (after splicing and LDA).
    pub fn input_dim(&self) -> usize {
        self.feature_dim * (2 * self.splice_radius + 1)
    }

    pub fn validate(&self) -> Result<()> {
        if self.feature_dim == 0
            || self.hidden_width == 0
            || self.hidden_layers == 0
            || self.target_count == 0
            || self.broad_count == 0
        {
            return Err(Error::Config("model dimensions must be >= 1".into()));
        }
        if self.variant.is_mixnet() && self.variant != Variant::Mixnet1 && self.expert_count == 0 {
            return Err(Error::Config(
                "gated-MoE variants need at least one expert".into(),
            ));
        }
        if let ExpertStructure::LowRank { out_dim } = self.expert_structure {
            if self.expert_count > 0 && out_dim >= self.hidden_width {
                return Err(Error::Config(format!(
                    "low-rank expert out_dim {out_dim} must be below the hidden width {}",
                    self.hidden_width
                )));
            }
        }
        if let ExpertStructure::Banded { band } = self.expert_structure {
            if self.expert_count > 0 && band >= self.hidden_width {
                return Err(Error::Config(format!(
                    "band {band} must be below the hidden width {}",
                    self.hidden_width
                )));
            }
        }
        Ok(())
    }
}

fn gated_expert(cfg: &ModelConfig, rng: &mut Rng) -> Result<ExpertMap> {
    let w = cfg.hidden_width;
    Ok(match cfg.expert_structure {
        ExpertStructure::Full => ExpertMap::Dense(glorot_init(w, w, rng)),
        ExpertStructure::LowRank { out_dim } => {
            ExpertMap::LowRank(LowRankMatrix::new(glorot_init(out_dim, w, rng))?)
        }
        ExpertStructure::Banded { band } => ExpertMap::Banded(BandedMatrix::glorot(w, band, rng)?),
    })
}

/// Builds the classifier network of a variant with Glorot-initialized weights.
pub fn build_stack(cfg: &ModelConfig, rng: &mut Rng) -> Result<LayerStack> {
    cfg.validate()?;
    let w = cfg.hidden_width;
    let d = cfg.input_dim();
    let mut layers = Vec::new();
    match cfg.variant {
        Variant::Baseline => {
            layers.push(Layer::Affine(AffineLayer::glorot(w, d, rng)));
            layers.push(Layer::Relu { dim: w });
            for _ in 1..cfg.hidden_layers {
                layers.push(Layer::Affine(AffineLayer::glorot(w, w, rng)));
                layers.push(Layer::Relu { dim: w });
            }
            layers.push(Layer::Affine(AffineLayer::glorot(cfg.target_count, w, rng)));
        }
        Variant::EigenDmoe => {
            layers.push(Layer::Affine(AffineLayer::glorot(w, d, rng)));
            layers.push(Layer::Relu { dim: w });
            for _ in 1..cfg.hidden_layers {
                layers.push(Layer::Affine(AffineLayer::glorot(w, w, rng)));
                layers.push(Layer::Relu { dim: w });
            }
            layers.push(Layer::EigenMoe(EigenMoeLayer::glorot(
                cfg.eigen_experts,
                cfg.eigen_dim,
                w,
                rng,
            )));
            layers.push(Layer::EigenMoe(EigenMoeLayer::glorot(
                cfg.eigen_experts,
                cfg.eigen_dim,
                cfg.eigen_dim,
                rng,
            )));
            layers.push(Layer::Affine(AffineLayer::glorot(
                cfg.target_count,
                cfg.eigen_dim,
                rng,
            )));
        }
        _ => {
            layers.push(Layer::ContextualMoe(ContextualMoeLayer::glorot(
                cfg.broad_count,
                cfg.context_radius,
                d,
                d,
                rng,
            )));
            layers.push(Layer::Affine(AffineLayer::glorot(w, d, rng)));
            layers.push(Layer::Relu { dim: w });
            if cfg.expert_count == 0 {
                for _ in 1..cfg.hidden_layers {
                    layers.push(Layer::Affine(AffineLayer::glorot(w, w, rng)));
                    layers.push(Layer::Relu { dim: w });
                }
                layers.push(Layer::Affine(AffineLayer::glorot(cfg.target_count, w, rng)));
            } else {
                for _ in 2..cfg.hidden_layers {
                    layers.push(Layer::Affine(AffineLayer::glorot(w, w, rng)));
                    layers.push(Layer::Relu { dim: w });
                }
                // linear layer feeding the gated MoE
                layers.push(Layer::Affine(AffineLayer::glorot(w, w, rng)));
                let experts = (0..cfg.expert_count)
                    .map(|_| gated_expert(cfg, rng))
                    .collect::<Result<Vec<_>>>()?;
                let moe_out = experts[0].out_dim();
                layers.push(Layer::GatedMoe(GatedMoeLayer::glorot(experts, rng)?));
                layers.push(Layer::Affine(AffineLayer::glorot(
                    cfg.target_count,
                    moe_out,
                    rng,
                )));
            }
        }
    }
    LayerStack::new(layers, cfg.target_count)
}

/// Builds the broad-class auxiliary classifier network.
pub fn build_aux_stack(cfg: &ModelConfig, rng: &mut Rng) -> Result<LayerStack> {
    let w = cfg.aux_hidden_width;
    let mut layers = vec![
        Layer::Affine(AffineLayer::glorot(w, cfg.input_dim(), rng)),
        Layer::Relu { dim: w },
    ];
    for _ in 1..cfg.aux_hidden_layers {
        layers.push(Layer::Affine(AffineLayer::glorot(w, w, rng)));
        layers.push(Layer::Relu { dim: w });
    }
    layers.push(Layer::Affine(AffineLayer::glorot(cfg.broad_count, w, rng)));
    LayerStack::new(layers, cfg.broad_count)
}

/// Broad-class classifier whose posteriors gate the contextual input MoE.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AuxClassifier {
    pub stack: LayerStack,
}

impl AuxClassifier {
    pub fn posterior(&self, frame: &[f64]) -> Result<GateVector> {
        let p = self.stack.posteriors(&[frame.to_vec()], None)?;
        GateVector::new(p, 1e-6)
    }
}

// ---------------------------------------------------------------------------
// Feature pipeline
// ---------------------------------------------------------------------------

/// Per-utterance feature pipeline: mean normalization, splicing, LDA.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Pipeline {
    pub splice_radius: usize,
    pub lda: LdaTransform,
}

impl Pipeline {
    /// Fits the LDA step on the training split (sub-class labels) at the
    /// spliced dimension, keeping the dimension.
    pub fn fit(train: &FrameDataset, splice_radius: usize) -> Result<Pipeline> {
        let mut vectors = Vec::with_capacity(train.frame_count());
        let mut labels = Vec::with_capacity(train.frame_count());
        for utt in &train.utterances {
            let spliced = splice(&mean_normalize(utt)?, splice_radius);
            labels.extend_from_slice(&spliced.subclass_labels);
            vectors.extend(spliced.frames);
        }
        let dim = vectors
            .first()
            .map(Vec::len)
            .ok_or_else(|| Error::Validation("cannot fit pipeline on empty data".into()))?;
        let lda = lda_fit(&vectors, &labels, dim)?;
        Ok(Pipeline { splice_radius, lda })
    }

    pub fn apply(&self, seq: &FrameSequence) -> Result<FrameSequence> {
        lda_apply(&self.lda, &splice(&mean_normalize(seq)?, self.splice_radius))
    }

    pub fn out_dim(&self) -> usize {
        self.lda.matrix.rows()
    }
}

/// Applies the pipeline to every utterance of a split.
pub fn prepare_split(pipeline: &Pipeline, ds: &FrameDataset) -> Result<Vec<FrameSequence>> {
    ds.utterances.iter().map(|u| pipeline.apply(u)).collect()
}

/// Auxiliary posteriors for every frame of every prepared utterance.
pub fn compute_gates(
    aux: &AuxClassifier,
    prepared: &[FrameSequence],
) -> Result<Vec<Vec<GateVector>>> {
    prepared
        .iter()
        .map(|u| u.frames.iter().map(|f| aux.posterior(f)).collect())
        .collect()
}

// ---------------------------------------------------------------------------
// Training
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    /// Newbob: once the absolute cv-accuracy gain drops below this, the
    /// learning rate halves each epoch; a second sub-threshold epoch stops.
    pub newbob_threshold: f64,
    pub seed: u64,
    pub threads: usize,
    /// Keep the auxiliary classifier fixed while training the main network.
    pub freeze_aux: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 8,
            batch_size: 128,
            learning_rate: 0.1,
            newbob_threshold: 0.001,
            seed: 42,
            threads: 1,
            freeze_aux: true,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 || self.threads == 0 {
            return Err(Error::Config("batch_size and threads must be >= 1".into()));
        }
        if !(self.learning_rate > 0.0) || !(self.newbob_threshold >= 0.0) {
            return Err(Error::Config("learning rate schedule is invalid".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub learning_rate: f64,
    pub train_loss: f64,
    pub cv_accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub epochs: Vec<EpochStats>,
    pub final_cv_accuracy: f64,
}

#[derive(Clone, Copy)]
enum TargetKind {
    Subclass,
    Broad,
}

/// One split, preprocessed for SGD: features plus optional per-frame gates.
struct SgdData<'a> {
    utterances: &'a [FrameSequence],
    gates: Option<&'a [Vec<GateVector>]>,
    radius: usize,
    targets: TargetKind,
}

impl SgdData<'_> {
    fn samples(&self) -> Vec<(u32, u32)> {
        let mut out = Vec::new();
        for (u, utt) in self.utterances.iter().enumerate() {
            for t in 0..utt.len() {
                out.push((u as u32, t as u32));
            }
        }
        out
    }

    fn target(&self, u: usize, t: usize) -> usize {
        match self.targets {
            TargetKind::Subclass => self.utterances[u].subclass_labels[t],
            TargetKind::Broad => self.utterances[u].broadclass_labels[t],
        }
    }

    fn window(&self, u: usize, t: usize) -> Vec<Vec<f64>> {
        window_at(&self.utterances[u].frames, t, self.radius)
    }
}

fn sample_gate(
    data: &SgdData,
    aux: Option<&LayerStack>,
    u: usize,
    t: usize,
) -> Result<Option<GateVector>> {
    if let Some(gates) = data.gates {
        return Ok(Some(gates[u][t].clone()));
    }
    if let Some(aux) = aux {
        let p = aux.posteriors(&[data.utterances[u].frames[t].clone()], None)?;
        return Ok(Some(GateVector::new(p, 1e-6)?));
    }
    Ok(None)
}

/// Fraction of frames whose posterior argmax (lowest index on ties) matches
/// the target.
fn split_accuracy(stack: &LayerStack, data: &SgdData, aux: Option<&LayerStack>) -> Result<f64> {
    let mut correct = 0usize;
    let mut total = 0usize;
    for (u, utt) in data.utterances.iter().enumerate() {
        for t in 0..utt.len() {
            let gate = sample_gate(data, aux, u, t)?;
            let p = stack.posteriors(&data.window(u, t), gate.as_ref())?;
            if argmax(&p) == data.target(u, t) {
                correct += 1;
            }
            total += 1;
        }
    }
    Ok(correct as f64 / total.max(1) as f64)
}

fn argmax(v: &[f64]) -> usize {
    let mut best = 0usize;
    for (i, &x) in v.iter().enumerate().skip(1) {
        if x > v[best] {
            best = i;
        }
    }
    best
}

struct BatchGrads {
    loss: f64,
    main: Vec<Vec<f64>>,
    aux: Option<Vec<Vec<f64>>>,
}

fn zero_grads(stack: &LayerStack) -> Vec<Vec<f64>> {
    stack.layers().iter().map(|l| vec![0.0; l.param_count()]).collect()
}

fn axpy_all(acc: &mut [Vec<f64>], grads: &[Vec<f64>]) {
    for (a, g) in acc.iter_mut().zip(grads) {
        if g.is_empty() {
            continue;
        }
        for (ai, gi) in a.iter_mut().zip(g) {
            *ai += gi;
        }
    }
}

/// Gradient of one chunk of a batch, accumulated in sample order.
fn chunk_grads(
    stack: &LayerStack,
    aux: Option<&LayerStack>,
    data: &SgdData,
    samples: &[(u32, u32)],
) -> Result<BatchGrads> {
    let mut main = zero_grads(stack);
    let mut aux_sums = aux.map(zero_grads);
    let mut loss_sum = 0.0;
    for &(u, t) in samples {
        let (u, t) = (u as usize, t as usize);
        let window = data.window(u, t);
        let gate = sample_gate(data, aux, u, t)?;
        // non-finite logits mean training diverged; surface that as a
        // non-finite batch loss so the caller can abort with the location
        let (loss, _, grads) = match stack.loss_and_grads(&window, gate.as_ref(), data.target(u, t))
        {
            Err(Error::Validation(msg)) if msg.contains("non-finite") => {
                return Ok(BatchGrads {
                    loss: f64::NAN,
                    main,
                    aux: aux_sums,
                })
            }
            other => other?,
        };
        loss_sum += loss;
        axpy_all(&mut main, &grads.per_layer);
        if let (Some(aux), Some(aux_sums)) = (aux, aux_sums.as_mut()) {
            // gate posterior came from the aux softmax; pull the gate
            // gradient back through it
            let frame = data.utterances[u].frames[t].clone();
            let (logits, caches) = aux.forward_logits(&[frame], None)?;
            let p = crate::layers::softmax(&logits);
            let grad_logits = softmax_backward(&p, &grads.gate);
            let aux_grads = aux.backward_from_logits(&caches, &grad_logits)?;
            axpy_all(aux_sums, &aux_grads.per_layer);
        }
    }
    Ok(BatchGrads {
        loss: loss_sum,
        main,
        aux: aux_sums,
    })
}

fn batch_grads(
    stack: &LayerStack,
    aux: Option<&LayerStack>,
    data: &SgdData,
    samples: &[(u32, u32)],
    threads: usize,
) -> Result<BatchGrads> {
    if threads <= 1 || samples.len() < 2 * threads {
        return chunk_grads(stack, aux, data, samples);
    }
    let chunk = samples.len().div_ceil(threads);
    let parts: Vec<Result<BatchGrads>> = std::thread::scope(|scope| {
        let handles: Vec<_> = samples
            .chunks(chunk)
            .map(|part| scope.spawn(move || chunk_grads(stack, aux, data, part)))
            .collect();
        handles.into_iter().map(|h| h.join().unwrap()).collect()
    });
    let mut total: Option<BatchGrads> = None;
    for part in parts {
        let part = part?;
        match &mut total {
            None => total = Some(part),
            Some(total) => {
                total.loss += part.loss;
                axpy_all(&mut total.main, &part.main);
                if let (Some(a), Some(p)) = (total.aux.as_mut(), part.aux.as_ref()) {
                    axpy_all(a, p);
                }
            }
        }
    }
    Ok(total.unwrap())
}

fn apply_update(stack: &mut LayerStack, sums: &[Vec<f64>], scale: f64) {
    for (idx, grads) in sums.iter().enumerate() {
        if stack.is_frozen(idx) || grads.is_empty() {
            continue;
        }
        stack.layers_mut()[idx].update(grads, scale);
    }
}

fn run_sgd(
    stack: &mut LayerStack,
    mut aux: Option<&mut LayerStack>,
    train: &SgdData,
    cv: &SgdData,
    cfg: &TrainConfig,
) -> Result<TrainReport> {
    cfg.validate()?;
    let samples = train.samples();
    if samples.is_empty() {
        return Err(Error::Validation("training split has no frames".into()));
    }
    let mut order: Vec<usize> = (0..samples.len()).collect();
    let mut lr = cfg.learning_rate;
    let mut halving = false;
    let mut prev_acc: Option<f64> = None;
    let mut stats = Vec::new();
    for epoch in 0..cfg.epochs {
        let mut rng = Rng::substream(cfg.seed, EPOCH_TAG + epoch as u64);
        rng.shuffle(&mut order);
        let mut loss_sum = 0.0;
        for (batch_idx, batch) in order.chunks(cfg.batch_size).enumerate() {
            let picked: Vec<(u32, u32)> = batch.iter().map(|&i| samples[i]).collect();
            let grads = batch_grads(stack, aux.as_deref(), train, &picked, cfg.threads)?;
            if !grads.loss.is_finite() {
                return Err(Error::NanLoss {
                    epoch,
                    batch: batch_idx,
                });
            }
            loss_sum += grads.loss;
            let scale = -lr / picked.len() as f64;
            apply_update(stack, &grads.main, scale);
            if let (Some(aux), Some(aux_sums)) = (aux.as_deref_mut(), grads.aux.as_ref()) {
                apply_update(aux, aux_sums, scale);
            }
        }
        let cv_acc = split_accuracy(stack, cv, aux.as_deref())?;
        stats.push(EpochStats {
            epoch,
            learning_rate: lr,
            train_loss: loss_sum / samples.len() as f64,
            cv_accuracy: cv_acc,
        });
        let stalled = prev_acc.is_some_and(|p| cv_acc - p < cfg.newbob_threshold);
        prev_acc = Some(cv_acc);
        if stalled {
            if halving {
                break;
            }
            halving = true;
        }
        if halving {
            lr *= 0.5;
        }
    }
    Ok(TrainReport {
        final_cv_accuracy: prev_acc.unwrap_or(0.0),
        epochs: stats,
    })
}

// ---------------------------------------------------------------------------
// Model
// ---------------------------------------------------------------------------

/// A trained (or trainable) model: feature pipeline, optional auxiliary
/// broad-class classifier, and the main network.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Model {
    pub config: ModelConfig,
    pub pipeline: Pipeline,
    pub aux: Option<AuxClassifier>,
    pub stack: LayerStack,
    pub epoch: usize,
    pub seed: u64,
}

impl Model {
    /// Fits the pipeline on the training split and Glorot-initializes the
    /// network from a substream of `seed`.
    pub fn new(config: ModelConfig, train: &FrameDataset, seed: u64) -> Result<Model> {
        config.validate()?;
        let pipeline = Pipeline::fit(train, config.splice_radius)?;
        let mut rng = Rng::substream(seed, INIT_TAG);
        let stack = build_stack(&config, &mut rng)?;
        Ok(Model {
            config,
            pipeline,
            aux: None,
            stack,
            epoch: 0,
            seed,
        })
    }
}

/// Trains the auxiliary broad-class classifier on the training split,
/// initializing it first if the model has none.
pub fn pretrain_aux(
    model: &mut Model,
    train: &FrameDataset,
    cv: &FrameDataset,
    cfg: &TrainConfig,
) -> Result<TrainReport> {
    if !model.stack.starts_contextual() {
        return Err(Error::Validation(format!(
            "variant {} has no contextual input MoE to gate",
            model.config.variant.name()
        )));
    }
    if model.aux.is_none() {
        let mut rng = Rng::substream(cfg.seed, AUX_TAG);
        model.aux = Some(AuxClassifier {
            stack: build_aux_stack(&model.config, &mut rng)?,
        });
    }
    let train_p = prepare_split(&model.pipeline, train)?;
    let cv_p = prepare_split(&model.pipeline, cv)?;
    let train_data = SgdData {
        utterances: &train_p,
        gates: None,
        radius: 0,
        targets: TargetKind::Broad,
    };
    let cv_data = SgdData {
        utterances: &cv_p,
        gates: None,
        radius: 0,
        targets: TargetKind::Broad,
    };
    run_sgd(
        &mut model.aux.as_mut().unwrap().stack,
        None,
        &train_data,
        &cv_data,
        cfg,
    )
}

/// Trains the main network with minibatch SGD and newbob halving. For
/// contextual variants the gate of each frame is the auxiliary posterior of
/// that frame; with `freeze_aux` unset the auxiliary net is updated jointly
/// through the gate gradient.
pub fn train(
    model: &mut Model,
    train_ds: &FrameDataset,
    cv_ds: &FrameDataset,
    cfg: &TrainConfig,
) -> Result<TrainReport> {
    let contextual = model.stack.starts_contextual();
    if contextual && model.aux.is_none() {
        return Err(Error::Validation(
            "train the auxiliary classifier before the main network".into(),
        ));
    }
    let radius = if contextual {
        model.config.context_radius
    } else {
        0
    };
    let train_p = prepare_split(&model.pipeline, train_ds)?;
    let cv_p = prepare_split(&model.pipeline, cv_ds)?;
    let frozen = cfg.freeze_aux || !contextual;
    let (train_gates, cv_gates) = if contextual && frozen {
        let aux = model.aux.as_ref().unwrap();
        (
            Some(compute_gates(aux, &train_p)?),
            Some(compute_gates(aux, &cv_p)?),
        )
    } else {
        (None, None)
    };
    let train_data = SgdData {
        utterances: &train_p,
        gates: train_gates.as_deref(),
        radius,
        targets: TargetKind::Subclass,
    };
    let cv_data = SgdData {
        utterances: &cv_p,
        gates: cv_gates.as_deref(),
        radius,
        targets: TargetKind::Subclass,
    };
    let aux_stack = if contextual && !frozen {
        Some(&mut model.aux.as_mut().unwrap().stack)
    } else {
        None
    };
    let report = run_sgd(&mut model.stack, aux_stack, &train_data, &cv_data, cfg)?;
    model.epoch += report.epochs.len();
    Ok(report)
}

// ---------------------------------------------------------------------------
// Evaluation
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub frames: usize,
    pub frame_accuracy: f64,
    pub broad_accuracy: f64,
    /// subclass_confusion[reference][predicted]
    pub subclass_confusion: Vec<Vec<usize>>,
    pub broad_confusion: Vec<Vec<usize>>,
}

/// Frame-level accuracy and confusion matrices on a split.
pub fn evaluate(model: &Model, ds: &FrameDataset) -> Result<EvalReport> {
    let contextual = model.stack.starts_contextual();
    if contextual && model.aux.is_none() {
        return Err(Error::Validation("model has no auxiliary classifier".into()));
    }
    let radius = if contextual {
        model.config.context_radius
    } else {
        0
    };
    let prepared = prepare_split(&model.pipeline, ds)?;
    let t = model.config.target_count;
    let b = ds.hierarchy.broad_count();
    let mut subclass_confusion = vec![vec![0usize; t]; t];
    let mut broad_confusion = vec![vec![0usize; b]; b];
    let mut frames = 0usize;
    let mut correct = 0usize;
    let mut broad_correct = 0usize;
    for (utt, raw) in prepared.iter().zip(&ds.utterances) {
        for (t_idx, &label) in raw.subclass_labels.iter().enumerate() {
            let gate = match (&model.aux, contextual) {
                (Some(aux), true) => Some(aux.posterior(&utt.frames[t_idx])?),
                _ => None,
            };
            let window = window_at(&utt.frames, t_idx, radius);
            let p = model.stack.posteriors(&window, gate.as_ref())?;
            let pred = argmax(&p);
            subclass_confusion[label][pred] += 1;
            let broad_pred = ds.hierarchy.broad_of(pred)?;
            let broad_ref = raw.broadclass_labels[t_idx];
            broad_confusion[broad_ref][broad_pred] += 1;
            frames += 1;
            correct += (pred == label) as usize;
            broad_correct += (broad_pred == broad_ref) as usize;
        }
    }
    Ok(EvalReport {
        frames,
        frame_accuracy: correct as f64 / frames.max(1) as f64,
        broad_accuracy: broad_correct as f64 / frames.max(1) as f64,
        subclass_confusion,
        broad_confusion,
    })
}

// ---------------------------------------------------------------------------
// Single-expert collapse
// ---------------------------------------------------------------------------

/// Rewrites a single-expert MixNet (one input-MoE class, at most one gated
/// expert) as a plain affine stack over the concatenated window. The result
/// computes the same function: the first affine layer is the block
/// concatenation of the per-offset maps, and a one-expert gated MoE is just
/// its expert's affine map.
pub fn collapse_companion(stack: &LayerStack) -> Result<LayerStack> {
    let mut layers = Vec::with_capacity(stack.layers().len());
    for layer in stack.layers() {
        match layer {
            Layer::ContextualMoe(l) => {
                if l.class_count() != 1 {
                    return Err(Error::Validation(
                        "collapse requires a single input-MoE class".into(),
                    ));
                }
                let (d_out, d_in, width) = (l.out_dim(), l.in_dim(), l.window_len());
                let mut weights = Matrix::zeros(d_out, d_in * width);
                let mut bias = vec![0.0; d_out];
                for (j, a) in l.experts[0].iter().enumerate() {
                    for r in 0..d_out {
                        for c in 0..d_in {
                            weights.set(r, j * d_in + c, a.get(r, c));
                        }
                    }
                    for (bi, v) in bias.iter_mut().zip(&l.biases[0][j]) {
                        *bi += v;
                    }
                }
                layers.push(Layer::Affine(AffineLayer::new(weights, bias)));
            }
            Layer::GatedMoe(l) => {
                if l.expert_count() != 1 {
                    return Err(Error::Validation(
                        "collapse requires a single gated expert".into(),
                    ));
                }
                layers.push(Layer::Affine(AffineLayer::new(
                    l.experts[0].to_dense(),
                    l.expert_biases[0].clone(),
                )));
            }
            other => layers.push(other.clone()),
        }
    }
    LayerStack::new(layers, stack.target_count())
}

// ---------------------------------------------------------------------------
// MIXNET-CKPT v1 checkpoint format
// ---------------------------------------------------------------------------

const CKPT_MAGIC: &str = "MIXNET-CKPT v1";

#[derive(Serialize, Deserialize)]
struct BlockEntry {
    name: String,
    len: usize,
}

#[derive(Serialize, Deserialize)]
struct CkptManifest {
    model: ModelConfig,
    epoch: usize,
    seed: u64,
    lda_rows: usize,
    lda_cols: usize,
    has_aux: bool,
    blocks: Vec<BlockEntry>,
}

fn write_block(w: &mut impl Write, data: &[f64]) -> Result<()> {
    for v in data {
        w.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

fn read_block(r: &mut impl Read, len: usize) -> Result<Vec<f64>> {
    let mut buf = [0u8; 8];
    let mut out = Vec::with_capacity(len);
    for _ in 0..len {
        r.read_exact(&mut buf)?;
        out.push(f64::from_le_bytes(buf));
    }
    Ok(out)
}

impl Model {
    /// Writes the checkpoint: magic line, JSON manifest line, then the
    /// declared parameter blocks as raw little-endian f64.
    pub fn write_to(&self, w: &mut impl Write) -> Result<()> {
        let mut blocks = vec![
            BlockEntry {
                name: "lda_matrix".into(),
                len: self.pipeline.lda.matrix.data().len(),
            },
            BlockEntry {
                name: "lda_eigenvalues".into(),
                len: self.pipeline.lda.eigenvalues.len(),
            },
        ];
        if let Some(aux) = &self.aux {
            for (i, layer) in aux.stack.layers().iter().enumerate() {
                blocks.push(BlockEntry {
                    name: format!("aux_layer_{i}"),
                    len: layer.param_count(),
                });
            }
        }
        for (i, layer) in self.stack.layers().iter().enumerate() {
            blocks.push(BlockEntry {
                name: format!("layer_{i}"),
                len: layer.param_count(),
            });
        }
        let manifest = CkptManifest {
            model: self.config.clone(),
            epoch: self.epoch,
            seed: self.seed,
            lda_rows: self.pipeline.lda.matrix.rows(),
            lda_cols: self.pipeline.lda.matrix.cols(),
            has_aux: self.aux.is_some(),
            blocks,
        };
        writeln!(w, "{CKPT_MAGIC}")?;
        serde_json::to_writer(&mut *w, &manifest)?;
        writeln!(w)?;
        write_block(w, self.pipeline.lda.matrix.data())?;
        write_block(w, &self.pipeline.lda.eigenvalues)?;
        if let Some(aux) = &self.aux {
            for layer in aux.stack.layers() {
                write_block(w, &layer.flat_params())?;
            }
        }
        for layer in self.stack.layers() {
            write_block(w, &layer.flat_params())?;
        }
        Ok(())
    }

    pub fn read_from(r: &mut impl Read) -> Result<Model> {
        let mut reader = BufReader::new(r);
        let mut line = String::new();
        reader.read_line(&mut line)?;
        if line.trim_end() != CKPT_MAGIC {
            return Err(Error::Format(format!(
                "expected `{CKPT_MAGIC}` header, got `{}`",
                line.trim_end()
            )));
        }
        line.clear();
        reader.read_line(&mut line)?;
        let manifest: CkptManifest = serde_json::from_str(line.trim_end())?;
        let mut stack = build_stack(&manifest.model, &mut Rng::new(0))?;
        let mut aux = if manifest.has_aux {
            Some(AuxClassifier {
                stack: build_aux_stack(&manifest.model, &mut Rng::new(0))?,
            })
        } else {
            None
        };
        let mut blocks = manifest.blocks.iter();
        let mut next = |name: &str, expected: usize| -> Result<Vec<f64>> {
            let entry = blocks
                .next()
                .ok_or_else(|| Error::Format(format!("missing block {name}")))?;
            if entry.name != name || entry.len != expected {
                return Err(Error::Format(format!(
                    "block {name} (len {expected}) declared as {} (len {})",
                    entry.name, entry.len
                )));
            }
            read_block(&mut reader, entry.len)
        };
        let lda_data = next("lda_matrix", manifest.lda_rows * manifest.lda_cols)?;
        let matrix = Matrix::from_vec(manifest.lda_rows, manifest.lda_cols, lda_data)?;
        let eigenvalues = next("lda_eigenvalues", manifest.lda_rows)?;
        if let Some(aux) = aux.as_mut() {
            for i in 0..aux.stack.layers().len() {
                let expected = aux.stack.layers()[i].param_count();
                let params = next(&format!("aux_layer_{i}"), expected)?;
                aux.stack.layers_mut()[i].set_flat_params(&params);
            }
        }
        for i in 0..stack.layers().len() {
            let expected = stack.layers()[i].param_count();
            let params = next(&format!("layer_{i}"), expected)?;
            stack.layers_mut()[i].set_flat_params(&params);
        }
        Ok(Model {
            pipeline: Pipeline {
                splice_radius: manifest.model.splice_radius,
                lda: LdaTransform {
                    matrix,
                    eigenvalues,
                },
            },
            config: manifest.model,
            aux,
            stack,
            epoch: manifest.epoch,
            seed: manifest.seed,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut w = BufWriter::new(std::fs::File::create(path)?);
        self.write_to(&mut w)
    }

    pub fn load(path: &Path) -> Result<Model> {
        let mut r = std::fs::File::open(path)?;
        Model::read_from(&mut r)
    }
}
