//! Robust (HC3 sandwich) fit when subject variances differ, and its
//! semiparametric bootstrap.
//!
//! cargo run --example spbj_sandwich

use nalgebra::DMatrix;
use pbj::model::{Design, OutcomeStack, WeightStack};
use pbj::spbj::{spbj_fit, SpbjBootstrap};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

fn main() -> pbj::Result<()> {
    let (n, voxels) = (80, 5);
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let x1 = DMatrix::from_fn(n, 1, |_, _| rng.sample::<f64, _>(StandardNormal) * 0.5);
    let tau: Vec<f64> = (0..n).map(|i| x1[(i, 0)].exp()).collect();
    let y = DMatrix::from_fn(n, voxels, |i, _| tau[i] * rng.sample::<f64, _>(StandardNormal));
    let y = OutcomeStack::new(y)?;
    let x = Design::with_intercept(&DMatrix::zeros(n, 0), &x1)?;

    for (name, w) in [
        ("unweighted", WeightStack::Uniform),
        ("inverse variance", WeightStack::per_subject(tau.iter().map(|t| t * t).collect())?),
    ] {
        let fit = spbj_fit(&y, &x, &w)?;
        println!("{name}:");
        for v in 0..voxels {
            println!(
                "  voxel {v}: beta {:+.3}  se {:.3}  wald {:.3}",
                fit.beta[v],
                fit.var_beta[v].sqrt(),
                fit.stat.values()[v]
            );
        }
        let boot = SpbjBootstrap::new(&fit.root, 1000, 7)?;
        let pooled: Vec<f64> = boot.iter().flat_map(|img| img.into_values()).collect();
        println!("  bootstrap χ² mean {:.3}", pooled.iter().sum::<f64>() / pooled.len() as f64);
    }
    Ok(())
}
