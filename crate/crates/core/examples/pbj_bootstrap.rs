//! Parametric bootstrap of the χ² image and the null max-cluster-size
//! distribution it implies.
//!
//! cargo run --release --example pbj_bootstrap

use pbj::cluster::{null_max_distribution, Connectivity};
use pbj::model::{chisq_cft, wls_fit, Design, Mask, OutcomeStack, WeightStack};
use nalgebra::DMatrix;
use pbj::pbj::{pbj_sqrt_cov, PbjBootstrap};
use pbj::rng::{stream, Domain};
use pbj::sim::masked_noise_field;

fn main() -> pbj::Result<()> {
    let mask = Mask::ellipsoid([16, 16, 16], [2.0; 3])?;
    let n: usize = 30;
    let rows: Vec<Vec<f64>> = (0..n)
        .map(|i| masked_noise_field(&mask, 3.0, &mut stream(5, Domain::NoiseField, i as u64)))
        .collect();
    let y = OutcomeStack::new(DMatrix::from_fn(n, mask.len(), |i, v| rows[i][v]))?;
    let x1 = DMatrix::from_fn(n, 1, |i, _| (i as f64 - 14.5) / 10.0);
    let x = Design::with_intercept(&DMatrix::zeros(n, 0), &x1)?;

    let fit = wls_fit(&y, &x, &WeightStack::Uniform, true)?;
    let root = pbj_sqrt_cov(&fit)?;
    let boot = PbjBootstrap::new(&root, x.m1(), 200, 11)?;
    let first = boot.image(0);
    let mean = first.values().iter().sum::<f64>() / first.len() as f64;
    println!("{} voxels, bootstrap image 0 has mean {mean:.3}", first.len());

    let z0 = chisq_cft(0.01, 1)?;
    let dist = &null_max_distribution(&boot, &[z0], Connectivity::TwentySix, &mask)?[0];
    let mut sorted = dist.sizes.clone();
    sorted.sort_unstable();
    println!("null max cluster size: median {}, 95th percentile {}", sorted[100], sorted[189]);
    for size in [5, 20, 50] {
        println!("  p(cluster of {size:>2} voxels) = {:.3}", dist.p_value(size));
    }
    Ok(())
}
