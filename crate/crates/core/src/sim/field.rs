use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::model::Mask;
use crate::rng::{stream, Domain};

/// FWHM = σ · 2√(2 ln 2).
pub const FWHM_PER_SIGMA: f64 = 2.354_820_045_030_949;

/// Truncated, unit-sum Gaussian kernel for a FWHM in voxels; `[1.0]` when the
/// width is zero.
pub fn gaussian_kernel(fwhm_voxels: f64) -> Vec<f64> {
    if fwhm_voxels <= 0.0 {
        return vec![1.0];
    }
    let sigma = fwhm_voxels / FWHM_PER_SIGMA;
    let radius = (4.0 * sigma).ceil().max(1.0) as i64;
    let mut k: Vec<f64> = (-radius..=radius)
        .map(|j| (-(j * j) as f64 / (2.0 * sigma * sigma)).exp())
        .collect();
    let total: f64 = k.iter().sum();
    k.iter_mut().for_each(|x| *x /= total);
    k
}

/// Convolves `src` (extent `src_dims`, first axis fastest) with `kernel` along
/// `axis`, keeping only the valid part.
fn convolve_axis(src: &[f64], src_dims: [usize; 3], kernel: &[f64], axis: usize) -> (Vec<f64>, [usize; 3]) {
    let taps = kernel.len();
    let mut dims = src_dims;
    dims[axis] = src_dims[axis] + 1 - taps;
    let stride = [1, src_dims[0], src_dims[0] * src_dims[1]][axis];
    let mut out = Vec::with_capacity(dims.iter().product());
    for k in 0..dims[2] {
        for j in 0..dims[1] {
            for i in 0..dims[0] {
                let base = i + src_dims[0] * (j + src_dims[1] * k);
                let mut acc = 0.0;
                for (t, w) in kernel.iter().enumerate() {
                    acc += w * src[base + t * stride];
                }
                out.push(acc);
            }
        }
    }
    (out, dims)
}

/// White Gaussian noise on the lattice of `dims` smoothed by a Gaussian kernel
/// of the given FWHM (voxels). Noise is drawn on a grid padded by the kernel
/// radius so the field is stationary up to the edges.
pub fn smoothed_lattice(dims: [usize; 3], fwhm_voxels: f64, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let kernel = gaussian_kernel(fwhm_voxels);
    let pad = kernel.len() - 1;
    let padded = dims.map(|d| d + pad);
    let noise: Vec<f64> = (0..padded.iter().product::<usize>())
        .map(|_| rng.sample(StandardNormal))
        .collect();
    if pad == 0 {
        return noise;
    }
    let (a, d) = convolve_axis(&noise, padded, &kernel, 0);
    let (b, d) = convolve_axis(&a, d, &kernel, 1);
    let (c, d) = convolve_axis(&b, d, &kernel, 2);
    debug_assert_eq!(d, dims);
    c
}

/// Centres and scales to unit sample variance.
pub(crate) fn standardize(values: &mut [f64]) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0);
    let sd = var.sqrt();
    for x in values.iter_mut() {
        *x = (*x - mean) / sd;
    }
}

/// Smoothed noise restricted to the mask and standardized over it.
pub fn masked_noise_field(mask: &Mask, fwhm_voxels: f64, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let lattice = smoothed_lattice(mask.dims(), fwhm_voxels, rng);
    let mut v = mask.gather(&lattice);
    if v.len() > 1 {
        standardize(&mut v);
    }
    v
}

/// A standardized Gaussian-smoothed white-noise field over the full lattice.
pub fn smooth_noise_field(dims: [usize; 3], fwhm_voxels: f64, seed: u64) -> Result<Vec<f64>> {
    if !(fwhm_voxels.is_finite() && fwhm_voxels >= 0.0) {
        return Err(Error::invalid(format!("fwhm must be non-negative, got {fwhm_voxels}")));
    }
    if dims.iter().product::<usize>() < 2 {
        return Err(Error::invalid("noise field needs at least two voxels"));
    }
    let mut rng = stream(seed, Domain::NoiseField, 0);
    let mut field = smoothed_lattice(dims, fwhm_voxels, &mut rng);
    standardize(&mut field);
    Ok(field)
}

/// Lag-1 correlation of the discrete kernel, Σ k_i k_{i+1} / Σ k_i²: the
/// theoretical neighbour correlation of the smoothed field along any axis.
pub fn kernel_lag1_correlation(fwhm_voxels: f64) -> f64 {
    let k = gaussian_kernel(fwhm_voxels);
    let num: f64 = k.windows(2).map(|w| w[0] * w[1]).sum();
    let den: f64 = k.iter().map(|x| x * x).sum();
    num / den
}
