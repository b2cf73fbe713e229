//! Gaussian-smoothed noise fields and their neighbour correlation.
//!
//! cargo run --example noise_fields

use pbj::sim::{gaussian_kernel, kernel_lag1_correlation, smooth_noise_field};

fn lag1(f: &[f64], nx: usize) -> f64 {
    let num: f64 = f.chunks(nx).flat_map(|row| row.windows(2).map(|w| w[0] * w[1])).sum();
    let pairs = f.len() / nx * (nx - 1);
    num / pairs as f64 / (f.iter().map(|x| x * x).sum::<f64>() / f.len() as f64)
}

fn main() -> pbj::Result<()> {
    let dims = [24, 24, 24];
    for fwhm in [0.0, 1.5, 3.0, 4.5] {
        let kernel = gaussian_kernel(fwhm);
        let observed: f64 = (0..5)
            .map(|s| Ok(lag1(&smooth_noise_field(dims, fwhm, s)?, dims[0])))
            .sum::<pbj::Result<f64>>()?
            / 5.0;
        println!(
            "FWHM {fwhm:>3} voxels: {:>2} taps, lag-1 correlation {observed:.3} (kernel {:.3})",
            kernel.len(),
            kernel_lag1_correlation(fwhm)
        );
    }
    Ok(())
}
