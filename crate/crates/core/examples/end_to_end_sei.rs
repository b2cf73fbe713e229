//! Full analysis on synthetic data: fit, bootstrap null, cluster p-values and
//! result files.
//!
//! cargo run --release --example end_to_end_sei [spbj|pbj|perm]

use nalgebra::DMatrix;
use pbj::io::write_results;
use pbj::model::{Design, Mask, OutcomeStack, WeightStack};
use pbj::rng::{stream, Domain};
use pbj::sei::{run_sei, Method, SeiConfig};
use pbj::sim::masked_noise_field;
use rand::Rng;
use rand_distr::StandardNormal;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let method: Method = std::env::args().nth(1).as_deref().unwrap_or("spbj").parse()?;
    let mask = Mask::ellipsoid([20, 20, 20], [2.0; 3])?;
    let n = 40;
    let mut rng = stream(42, Domain::Covariates, 0);
    let score: Vec<f64> = (0..n).map(|_| rng.sample(StandardNormal)).collect();
    let age: Vec<f64> = (0..n).map(|_| rng.random_range(8.0..22.0)).collect();

    // Smooth noise plus a blob whose amplitude tracks `score`.
    let mut y = DMatrix::zeros(n, mask.len());
    for i in 0..n {
        let noise = masked_noise_field(&mask, 3.0, &mut stream(42, Domain::NoiseField, i as u64));
        for (v, e) in noise.iter().enumerate() {
            let c = mask.coords_of(v);
            let d2: usize = c.iter().map(|&k| (k as isize - 7).pow(2) as usize).sum();
            y[(i, v)] = e + if d2 <= 9 { 0.7 * score[i] } else { 0.0 };
        }
    }
    let y = OutcomeStack::new(y)?;
    let x = Design::with_intercept(
        &DMatrix::from_column_slice(n, 1, &age),
        &DMatrix::from_column_slice(n, 1, &score),
    )?;

    let mut cfg = SeiConfig::new(method);
    cfg.cft = vec![0.01, 0.005];
    cfg.n_boot = 500;
    cfg.seed = 1;
    let result = run_sei(&y, &x, &WeightStack::Uniform, &mask, &cfg)?;
    let out = std::env::temp_dir().join("pbj_sei_example");
    for t in &result.thresholds {
        println!("{method}, CFT p = {} (z0 = {:.2}): {} clusters", t.cft_p, t.z0, t.table.len());
        for c in t.table.clusters.iter().take(5) {
            println!("  {} voxels, p = {:.4}, direction {:?}", c.size_voxels, c.p_value.unwrap(), c.direction);
        }
    }
    let paths = write_results(&result.thresholds[0].table, &result.stat, &mask, &out)?;
    println!("wrote {}", paths.records.display());
    Ok(())
}
