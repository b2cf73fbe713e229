//! Freedman–Lane permutation null for the maximum cluster size.
//!
//! cargo run --release --example permutation_baseline

use nalgebra::DMatrix;
use pbj::cluster::Connectivity;
use pbj::model::{chisq_cft, Design, Mask, OutcomeStack};
use pbj::permbase::{freedman_lane_max_distribution, FreedmanLane};
use pbj::rng::{stream, Domain};
use pbj::sim::masked_noise_field;
use rand::Rng;

fn main() -> pbj::Result<()> {
    let mask = Mask::ellipsoid([14, 14, 14], [2.0; 3])?;
    let n: usize = 25;
    let rows: Vec<Vec<f64>> = (0..n)
        .map(|i| masked_noise_field(&mask, 2.5, &mut stream(2, Domain::NoiseField, i as u64)))
        .collect();
    let y = OutcomeStack::new(DMatrix::from_fn(n, mask.len(), |i, v| rows[i][v]))?;
    let mut rng = stream(2, Domain::Covariates, 0);
    let age = DMatrix::from_fn(n, 1, |_, _| rng.random_range(8.0..22.0));
    let group = DMatrix::from_fn(n, 1, |i, _| (i % 2) as f64);
    let x = Design::with_intercept(&age, &group)?;

    let fl = FreedmanLane::new(&y, &x, 500, 21)?;
    println!("permutation 1 maps subjects to {:?}", &fl.permutation(1)[..8]);

    let z0 = chisq_cft(0.01, 1)?;
    let dist = &freedman_lane_max_distribution(&y, &x, &[z0], Connectivity::TwentySix, &mask, 500, 21)?[0];
    let mut sorted = dist.sizes.clone();
    sorted.sort_unstable();
    println!("df = ({}, {}), 95th percentile of max size: {}", fl.df1(), fl.df2(), sorted[475]);
    Ok(())
}
