//! Parameter accounting: each MixNet variant must cost no more than the
//! plain DNN it replaces. Also shows the closed-form banded count.
//!
//!     cargo run --example param_parity

use mixnet::linalg::banded_param_count;
use mixnet::rng::Rng;
use mixnet::training::{build_stack, ModelConfig, Variant};
use mixnet::Result;

fn main() -> Result<()> {
    let mut rng = Rng::new(0);
    let baseline = build_stack(&ModelConfig::for_variant(Variant::Baseline), &mut rng)?
        .param_count();

    println!("{:<11} {:>8}  vs baseline", "variant", "params");
    for &v in &Variant::ALL {
        let stack = build_stack(&ModelConfig::for_variant(v), &mut rng)?;
        let n = stack.param_count();
        println!("{:<11} {n:>8}  {:>+7}", v.name(), n as i64 - baseline as i64);
    }

    // a banded n×n expert stores n(2b+1) − b(b+1) weights
    for (n, b) in [(1024, 15), (128, 7), (6, 2)] {
        println!(
            "banded {n}x{n}, band {b}: {} of {} dense entries",
            banded_param_count(n, b)?,
            n * n
        );
    }

    // the contextual input MoE grows linearly in classes and window width
    let moe = ModelConfig::for_variant(Variant::Mixnet1);
    let per_expert = moe.feature_dim * moe.feature_dim + moe.feature_dim;
    println!(
        "input MoE: {} classes x {} offsets x {per_expert} = {} params",
        moe.broad_count,
        2 * moe.context_radius + 1,
        moe.broad_count * (2 * moe.context_radius + 1) * per_expert
    );
    Ok(())
}
