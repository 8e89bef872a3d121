//! Trains a small baseline DNN and a small MixNet on the same synthetic
//! task and compares test accuracy. Scaled down so it finishes in well
//! under a minute; see the acceptance tests for the full desk-scale run.
//!
//!     cargo run --release --example train_variants

use mixnet::synth::{generate, ClassHierarchy, SynthConfig};
use mixnet::training::{
    evaluate, pretrain_aux, train, Model, ModelConfig, TrainConfig, Variant,
};
use mixnet::Result;

fn main() -> Result<()> {
    let synth = SynthConfig {
        dim: 10,
        train_utterances: 80,
        cv_utterances: 10,
        test_utterances: 10,
        ..SynthConfig::default()
    };
    let (train_ds, cv_ds, test_ds) = generate(&synth, &ClassHierarchy::default_three_class())?;

    let tcfg = TrainConfig {
        epochs: 4,
        learning_rate: 0.05,
        ..TrainConfig::default()
    };

    for variant in [Variant::Baseline, Variant::Mixnet1, Variant::Mixnet4] {
        let mut cfg = ModelConfig::for_variant(variant);
        cfg.feature_dim = synth.dim;
        cfg.hidden_width = 32;
        cfg.aux_hidden_width = 16;
        if let mixnet::training::ExpertStructure::Banded { band } = &mut cfg.expert_structure {
            *band = 3;
        }

        let mut model = Model::new(cfg, &train_ds, 42)?;
        if model.stack.starts_contextual() {
            let aux_report = pretrain_aux(&mut model, &train_ds, &cv_ds, &tcfg)?;
            println!(
                "{:<9} aux broad cv accuracy {:.3}",
                variant.name(),
                aux_report.final_cv_accuracy
            );
        }
        let report = train(&mut model, &train_ds, &cv_ds, &tcfg)?;
        let eval = evaluate(&model, &test_ds)?;
        println!(
            "{:<9} {} params, cv {:.3}, test {:.3} (broad {:.3})",
            variant.name(),
            model.stack.param_count(),
            report.final_cv_accuracy,
            eval.frame_accuracy,
            eval.broad_accuracy
        );
    }
    Ok(())
}
