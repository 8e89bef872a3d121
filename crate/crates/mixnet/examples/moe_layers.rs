//! Builds the two MoE layer kinds by hand and walks one forward/backward
//! pass through each.
//!
//!     cargo run --example moe_layers

use mixnet::layers::{ContextualMoeLayer, ExpertMap, GateVector, GatedMoeLayer};
use mixnet::linalg::{glorot_init, BandedMatrix, LowRankMatrix};
use mixnet::rng::Rng;
use mixnet::Result;

fn main() -> Result<()> {
    let mut rng = Rng::new(7);

    // Contextual input MoE: 3 broad classes, context radius 1, 6-dim frames.
    // y(t) = Σ_i α_i(t) Σ_j (A_ij x(t+j) + b_ij)
    let layer = ContextualMoeLayer::glorot(3, 1, 6, 6, &mut rng);
    let window: Vec<Vec<f64>> = (0..3)
        .map(|_| (0..6).map(|_| rng.standard_normal()).collect())
        .collect();
    let gate = GateVector::from_softmax(&[0.2, 1.4, -0.3]);
    let (y, cache) = layer.forward(&window, &gate)?;
    println!("contextual MoE output: {y:?}");

    let upstream = vec![1.0; 6];
    let grads = layer.backward(&cache, &upstream)?;
    println!("gate gradient: {:?}", grads.gate);
    println!("param gradient entries: {}", grads.params.len());

    // The gate is a probability vector; a one-hot gate selects one expert
    // exactly.
    let hard = GateVector::one_hot(3, 1);
    let (y_hard, _) = layer.forward(&window, &hard)?;
    println!("hard-gated output: {y_hard:?}");

    // Gated output MoE over that same 6-dim space: one dense, one low-rank
    // (6→4), one banded expert won't share dims, so use three banded ones.
    let experts: Vec<ExpertMap> = (0..3)
        .map(|_| Ok(ExpertMap::Banded(BandedMatrix::glorot(6, 2, &mut rng)?)))
        .collect::<Result<_>>()?;
    let moe = GatedMoeLayer::glorot(experts, &mut rng)?;
    let (z, cache) = moe.forward(&y)?;
    println!("gated MoE output: {z:?}");
    println!("learned gate posteriors: {:?}", moe.gate_posteriors(&cache));

    // Low-rank and dense experts need matching shapes within one layer.
    let lowrank = vec![
        ExpertMap::LowRank(LowRankMatrix::new(glorot_init(4, 6, &mut rng))?),
        ExpertMap::LowRank(LowRankMatrix::new(glorot_init(4, 6, &mut rng))?),
    ];
    let reducing = GatedMoeLayer::glorot(lowrank, &mut rng)?;
    let (z2, _) = reducing.forward(&y)?;
    println!("low-rank MoE maps 6 dims to {}", z2.len());
    Ok(())
}
