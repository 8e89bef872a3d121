//! Round-trips a model through the MIXNET-CKPT v1 format and a dataset
//! through MIXNET-FRAMES v1, byte for byte.
//!
//!     cargo run --example checkpoint_io

use mixnet::synth::{generate, ClassHierarchy, FrameDataset, SynthConfig};
use mixnet::training::{Model, ModelConfig, Variant};
use mixnet::Result;

fn main() -> Result<()> {
    let synth = SynthConfig {
        dim: 8,
        train_utterances: 30,
        cv_utterances: 4,
        test_utterances: 4,
        ..SynthConfig::default()
    };
    let (train_ds, _, _) = generate(&synth, &ClassHierarchy::default_three_class())?;

    let mut bytes = Vec::new();
    train_ds.write_to(&mut bytes)?;
    println!("dataset: {} bytes", bytes.len());
    let reread = FrameDataset::read_from(&mut bytes.as_slice())?;
    let mut again = Vec::new();
    reread.write_to(&mut again)?;
    println!("frames round trip byte-identical: {}", bytes == again);

    let mut cfg = ModelConfig::for_variant(Variant::Mixnet3);
    cfg.feature_dim = synth.dim;
    cfg.hidden_width = 24;
    cfg.aux_hidden_width = 12;
    if let mixnet::training::ExpertStructure::LowRank { out_dim } = &mut cfg.expert_structure {
        *out_dim = 8;
    }
    let model = Model::new(cfg, &train_ds, 42)?;

    let mut ckpt = Vec::new();
    model.write_to(&mut ckpt)?;
    println!("checkpoint: {} bytes", ckpt.len());
    let loaded = Model::read_from(&mut ckpt.as_slice())?;
    let mut ckpt2 = Vec::new();
    loaded.write_to(&mut ckpt2)?;
    println!("checkpoint round trip byte-identical: {}", ckpt == ckpt2);
    println!(
        "loaded {} with {} params at epoch {}",
        loaded.config.variant.name(),
        loaded.stack.param_count(),
        loaded.epoch
    );
    Ok(())
}
