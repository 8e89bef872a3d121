//! Taps a trained MixNet at successive stages and measures how class
//! separation (Fisher ratio) evolves; writes a 2-D PCA scatter CSV for the
//! input-MoE output.
//!
//!     cargo run --release --example class_separation

use mixnet::analysis::{separation_analysis, write_scatter_csv};
use mixnet::synth::{generate, ClassHierarchy, SynthConfig};
use mixnet::training::{pretrain_aux, train, Model, ModelConfig, TrainConfig, Variant};
use mixnet::Result;

fn main() -> Result<()> {
    let synth = SynthConfig {
        train_utterances: 150,
        cv_utterances: 15,
        test_utterances: 15,
        ..SynthConfig::default()
    };
    let (train_ds, cv_ds, _) = generate(&synth, &ClassHierarchy::default_three_class())?;

    let mut cfg = ModelConfig::for_variant(Variant::Mixnet4);
    cfg.hidden_width = 64;
    let mut model = Model::new(cfg, &train_ds, 42)?;

    let tcfg = TrainConfig::default();
    pretrain_aux(&mut model, &train_ds, &cv_ds, &tcfg)?;
    train(&mut model, &train_ds, &cv_ds, &tcfg)?;

    // tap 0 = network input, tap 1 = contextual MoE output, deeper taps
    // follow the stack
    for tap in 0..=2 {
        let (report, _, _) = separation_analysis(&model, &cv_ds, tap, 2)?;
        println!(
            "tap {tap}: dim {:>3}, Fisher broad {:.4}, scatter variance {:.2}/{:.2}",
            report.dim,
            report.fisher_broad,
            report.explained_variance[0],
            report.explained_variance[1]
        );
    }

    let (_, acts, pca) = separation_analysis(&model, &cv_ds, 1, 2)?;
    let path = std::env::temp_dir().join("mixnet_scatter.csv");
    let mut file = std::io::BufWriter::new(std::fs::File::create(&path)?);
    write_scatter_csv(&mut file, &pca, &acts)?;
    println!("wrote {} scatter rows to {}", pca.projected.len(), path.display());
    Ok(())
}
