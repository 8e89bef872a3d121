//! Generates the synthetic frame-classification task and sanity-checks it
//! against its own oracles: the Markov stationary distribution and the
//! nearest-mean classifier.
//!
//!     cargo run --example synth_data

use mixnet::synth::{
    generate, nearest_mean_accuracy, stationary_distribution, subclass_means, transition_matrix,
    ClassHierarchy, SynthConfig,
};
use mixnet::Result;

fn main() -> Result<()> {
    let hierarchy = ClassHierarchy::default_three_class();
    let config = SynthConfig {
        train_utterances: 60,
        ..SynthConfig::default()
    };

    let (train, cv, test) = generate(&config, &hierarchy)?;
    println!(
        "{} train / {} cv / {} test frames, dim {}",
        train.frame_count(),
        cv.frame_count(),
        test.frame_count(),
        config.dim
    );

    // label frequencies follow the chain's stationary distribution
    let p = transition_matrix(&config, &hierarchy);
    let pi = stationary_distribution(&p);
    let mut expected = [0.0; 3];
    for (s, w) in pi.iter().enumerate() {
        expected[hierarchy.broad_of(s)?] += w;
    }
    let mut observed = [0.0; 3];
    for l in train.broad_labels() {
        observed[l] += 1.0 / train.frame_count() as f64;
    }
    println!("stationary broad distribution: {expected:?}");
    println!("observed   broad distribution: {observed:?}");

    // the configured means are the Bayes-ish oracle for this data
    let means = subclass_means(&config, &hierarchy);
    println!(
        "nearest-mean subclass accuracy: {:.3}",
        nearest_mean_accuracy(&test, &means, false)?
    );
    println!(
        "nearest-mean broad accuracy:    {:.3}",
        nearest_mean_accuracy(&test, &means, true)?
    );

    // overlap controls how far apart the broad classes sit
    for overlap in [0.0, 0.5, 0.9] {
        let cfg = SynthConfig {
            overlap,
            ..config.clone()
        };
        let (t, _, _) = generate(&cfg, &hierarchy)?;
        let m = subclass_means(&cfg, &hierarchy);
        println!(
            "overlap {overlap}: broad nearest-mean accuracy {:.3}",
            nearest_mean_accuracy(&t, &m, true)?
        );
    }
    Ok(())
}
