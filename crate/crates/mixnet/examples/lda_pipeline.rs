//! The feature pipeline step by step: per-utterance mean normalization,
//! context splicing, LDA, and the Fisher ratio it preserves or improves.
//!
//!     cargo run --example lda_pipeline

use mixnet::analysis::fisher_ratio;
use mixnet::features::{lda_apply, mean_normalize, splice};
use mixnet::synth::{generate, ClassHierarchy, SynthConfig};
use mixnet::training::Pipeline;
use mixnet::Result;

fn main() -> Result<()> {
    let config = SynthConfig {
        dim: 13,
        train_utterances: 80,
        ..SynthConfig::default()
    };
    let hierarchy = ClassHierarchy::default_three_class();
    let (train, _, _) = generate(&config, &hierarchy)?;

    let raw: Vec<Vec<f64>> = train.frames().cloned().collect();
    let broad: Vec<usize> = train.broad_labels().collect();
    println!("raw Fisher ratio (broad): {:.4}", fisher_ratio(&raw, &broad)?);

    // one utterance through each stage
    let utt = &train.utterances[0];
    let normalized = mean_normalize(utt)?;
    let spliced = splice(&normalized, 1);
    println!(
        "frame dim {} -> spliced dim {}",
        utt.dim(),
        spliced.dim()
    );

    // the fitted pipeline bundles all three stages; LDA keeps the dimension
    // and is invertible, so the Fisher ratio is unchanged
    let pipeline = Pipeline::fit(&train, 1)?;
    let transformed = lda_apply(&pipeline.lda, &spliced)?;
    println!("after LDA: dim {}", transformed.dim());
    println!(
        "leading generalized eigenvalues: {:?}",
        &pipeline.lda.eigenvalues[..4]
    );

    let mut vectors = Vec::new();
    let mut labels = Vec::new();
    for utt in &train.utterances {
        let out = pipeline.apply(utt)?;
        labels.extend(out.broadclass_labels.iter().copied());
        vectors.extend(out.frames);
    }
    println!(
        "pipeline-output Fisher ratio (broad): {:.4}",
        fisher_ratio(&vectors, &labels)?
    );
    Ok(())
}
