//! Voxelwise weighted least squares, the F statistic and its χ² transform.
//!
//! cargo run --example fit_and_threshold

use nalgebra::DMatrix;
use pbj::model::{chisq_cft, f_statistic, f_to_chisq, wls_fit, Design, OutcomeStack, WeightStack};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

fn main() -> pbj::Result<()> {
    let (n, voxels) = (40, 6);
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let age = DMatrix::from_fn(n, 1, |_, _| rng.random_range(8.0..22.0));
    let dose = DMatrix::from_fn(n, 1, |_, _| rng.sample::<f64, _>(StandardNormal));
    // The last two voxels respond to dose.
    let y = DMatrix::from_fn(n, voxels, |i, v| {
        let effect = if v >= 4 { 0.8 * dose[(i, 0)] } else { 0.0 };
        effect + rng.sample::<f64, _>(StandardNormal)
    });
    let y = OutcomeStack::new(y)?;
    let x = Design::with_intercept(&age, &dose)?;

    let fit = wls_fit(&y, &x, &WeightStack::Uniform, false)?;
    println!("dose coefficients: {:.3?}", fit.coef.row(x.m0()).iter().collect::<Vec<_>>());

    let f = f_statistic(&y, &x, &WeightStack::Uniform)?;
    let chi = f_to_chisq(&f.values, f.df1, f.df2)?;
    let z0 = chisq_cft(0.01, x.m1())?;
    println!("F(df1={}, df2={}) -> χ²₁, threshold {z0:.2}", f.df1, f.df2);
    for (v, (t, z)) in f.values.iter().zip(chi.values()).enumerate() {
        let mark = if *z > z0 { "*" } else { "" };
        println!("  voxel {v}: F {t:7.3}  χ² {z:7.3} {mark}");
    }
    Ok(())
}
