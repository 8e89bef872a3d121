//! Verifies every hand-written backward pass against central finite
//! differences, for each model variant.
//!
//!     cargo run --example gradient_check

use mixnet::layers::{grad_check_gate, grad_check_stack, GateVector};
use mixnet::rng::Rng;
use mixnet::training::{build_stack, ModelConfig, Variant};
use mixnet::Result;

fn main() -> Result<()> {
    for &variant in &Variant::ALL {
        let mut cfg = ModelConfig::for_variant(variant);
        // shrink so the full parameter sweep takes milliseconds
        cfg.feature_dim = 5;
        cfg.splice_radius = cfg.splice_radius.min(1);
        cfg.hidden_width = 8;
        cfg.hidden_layers = 3;
        cfg.target_count = 6;
        cfg.eigen_dim = 7;
        cfg.eigen_experts = 3;
        if let mixnet::training::ExpertStructure::LowRank { out_dim } = &mut cfg.expert_structure {
            *out_dim = 6;
        }
        if let mixnet::training::ExpertStructure::Banded { band } = &mut cfg.expert_structure {
            *band = 3;
        }

        let mut rng = Rng::new(2024);
        let mut stack = build_stack(&cfg, &mut rng)?;
        let window: Vec<Vec<f64>> = (0..stack.window_len())
            .map(|_| (0..cfg.input_dim()).map(|_| rng.standard_normal()).collect())
            .collect();
        let gate = stack.starts_contextual().then(|| {
            GateVector::from_softmax(&[
                rng.standard_normal(),
                rng.standard_normal(),
                rng.standard_normal(),
            ])
        });

        let report = grad_check_stack(&mut stack, &window, gate.as_ref(), 1, 1e-5, 1e-6)?;
        println!(
            "{:<11} {} coords checked, worst rel err {:.3e} at {} -> {}",
            variant.name(),
            report.checked,
            report.worst_rel_err,
            report.worst_location,
            if report.passed() { "ok" } else { "FAIL" },
        );

        // the gate lives on the probability simplex, so its gradient is
        // checked along simplex-tangent directions
        if let Some(gate) = &gate {
            let report = grad_check_gate(&stack, &window, gate, 1, 1e-5, 1e-6)?;
            println!(
                "            gate directions: worst rel err {:.3e} -> {}",
                report.worst_rel_err,
                if report.passed() { "ok" } else { "FAIL" },
            );
        }
    }
    Ok(())
}
