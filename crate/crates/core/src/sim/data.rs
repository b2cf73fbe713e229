use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::{Bernoulli, LogNormal, Normal};
use rayon::prelude::*;

use super::config::{Distribution, NullSimConfig, WeightSpec};
use super::field::masked_noise_field;
use crate::error::{Error, Result};
use crate::io::CovariateTable;
use crate::model::{Design, Mask, OutcomeStack, WeightStack};
use crate::rng::{derive_seed, stream, Domain};

/// One synthetic null dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct NullDataset {
    pub y: OutcomeStack,
    pub covariates: CovariateTable,
    /// Error scale τ(x_i) per subject.
    pub tau: Vec<f64>,
}

impl NullDataset {
    /// Design with an intercept, every non-interest covariate as nuisance and
    /// the interest covariate as the single tested column.
    pub fn design(&self, cfg: &NullSimConfig) -> Result<Design> {
        let nuisance: Vec<&str> = cfg
            .covariates
            .iter()
            .map(|c| c.name.as_str())
            .filter(|&n| n != cfg.interest)
            .collect();
        let x0 = self.covariates.matrix(&nuisance)?;
        let x1 = self.covariates.matrix(&[cfg.interest.as_str()])?;
        Design::with_intercept(&x0, &x1)
    }

    /// Variance scales for a weighting option.
    pub fn weights(&self, spec: &WeightSpec) -> Result<WeightStack> {
        match spec {
            WeightSpec::Uniform => Ok(WeightStack::Uniform),
            WeightSpec::Variance => WeightStack::per_subject(self.tau.iter().map(|t| t * t).collect()),
            WeightSpec::Covariate(name) => WeightStack::per_subject(self.covariates.column(name)?.to_vec()),
        }
    }
}

pub(crate) fn sim_seed(cfg: &NullSimConfig, sim_index: usize) -> u64 {
    derive_seed(cfg.seed, &[sim_index as u64])
}

fn draw_covariates(cfg: &NullSimConfig, seed: u64) -> Result<Vec<Vec<f64>>> {
    let mut rng = stream(seed, Domain::Covariates, 0);
    let n = cfg.n;
    cfg.covariates
        .iter()
        .map(|c| {
            let bad = |e: String| Error::Config(format!("covariate {:?}: {e}", c.name));
            Ok(match c.dist {
                Distribution::Normal { mean, sd } => {
                    let d = Normal::new(mean, sd).map_err(|e| bad(e.to_string()))?;
                    (0..n).map(|_| rng.sample(d)).collect()
                }
                Distribution::Uniform { low, high } => (0..n).map(|_| low + (high - low) * rng.random::<f64>()).collect(),
                Distribution::Bernoulli { p } => {
                    let d = Bernoulli::new(p).map_err(|e| bad(e.to_string()))?;
                    (0..n).map(|_| if rng.sample(d) { 1.0 } else { 0.0 }).collect()
                }
                Distribution::LogNormal { meanlog, sdlog } => {
                    let d = LogNormal::new(meanlog, sdlog).map_err(|e| bad(e.to_string()))?;
                    (0..n).map(|_| rng.sample(d)).collect()
                }
            })
        })
        .collect()
}

/// Generates Y_i(v) = τ(x_i) · field_i(v): subject fields are independent,
/// standardized smoothed noise, so the mean of Y does not depend on any
/// covariate while the variance (and optionally the smoothness) may.
pub fn gen_null_dataset(cfg: &NullSimConfig, mask: &Mask, sim_index: usize) -> Result<NullDataset> {
    let seed = sim_seed(cfg, sim_index);
    let columns = draw_covariates(cfg, seed)?;
    let column = |name: &str| &columns[cfg.covariate_index(name).expect("validated covariate")];
    let tau: Vec<f64> = match &cfg.variance {
        Some(v) => column(&v.covariate).iter().map(|x| (v.scale * x).exp()).collect(),
        None => vec![1.0; cfg.n],
    };
    if let Some(i) = tau.iter().position(|t| !(t.is_finite() && *t > 0.0)) {
        return Err(Error::Config(format!("variance model gives tau = {} for subject {i}", tau[i])));
    }
    let fwhm: Vec<f64> = match &cfg.correlation {
        Some(c) => column(&c.covariate)
            .iter()
            .map(|x| cfg.fwhm_voxels * (c.slope * x).exp())
            .collect(),
        None => vec![cfg.fwhm_voxels; cfg.n],
    };
    let rows: Vec<Vec<f64>> = (0..cfg.n)
        .into_par_iter()
        .map(|i| {
            let mut rng = stream(seed, Domain::NoiseField, i as u64);
            let mut f = masked_noise_field(mask, fwhm[i], &mut rng);
            f.iter_mut().for_each(|x| *x *= tau[i]);
            f
        })
        .collect();
    let y = DMatrix::from_fn(cfg.n, mask.len(), |i, v| rows[i][v]);
    let ids = (0..cfg.n).map(|i| format!("sub{:04}", i + 1)).collect();
    let names = cfg.covariates.iter().map(|c| c.name.clone()).collect();
    Ok(NullDataset {
        y: OutcomeStack::new(y)?,
        covariates: CovariateTable::new(ids, names, columns)?,
        tau,
    })
}
