//! End-to-end spatial extent inference: observed statistic image, null
//! sampler, max-cluster-size distributions and cluster p-values.

use serde::{Deserialize, Serialize};

use crate::cluster::{
    null_max_distribution, sei_pvalues, threshold_label, ClusterTable, Connectivity, MaxSizeDistribution, NullSampler,
};
use crate::error::{Error, Result};
use crate::model::{chisq_cft, f_to_chisq, fit_with_f, Design, Mask, OutcomeStack, StatImage, WeightStack};
use crate::pbj::{pbj_sqrt_cov, PbjBootstrap};
use crate::permbase::FreedmanLane;
use crate::spbj::{spbj_fit, SpbjBootstrap};

/// Null-distribution method.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Pbj,
    Spbj,
    Perm,
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Method::Pbj => "pbj",
            Method::Spbj => "spbj",
            Method::Perm => "perm",
        }
    }
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "pbj" => Ok(Method::Pbj),
            "spbj" => Ok(Method::Spbj),
            "perm" => Ok(Method::Perm),
            _ => Err(Error::invalid(format!("unknown method {s:?} (expected pbj, spbj or perm)"))),
        }
    }
}

/// Settings for one analysis.
#[derive(Debug, Clone, PartialEq)]
pub struct SeiConfig {
    pub method: Method,
    /// Cluster-forming thresholds as upper-tail probabilities of χ²_{m₁}.
    pub cft: Vec<f64>,
    pub n_boot: usize,
    pub connectivity: Connectivity,
    pub seed: u64,
}

impl SeiConfig {
    pub fn new(method: Method) -> Self {
        SeiConfig {
            method,
            cft: vec![0.005],
            n_boot: 5000,
            connectivity: Connectivity::default(),
            seed: 0,
        }
    }
}

/// Result at one cluster-forming threshold.
#[derive(Debug, Clone, PartialEq)]
pub struct ThresholdResult {
    pub cft_p: f64,
    pub z0: f64,
    pub table: ClusterTable,
    pub null: MaxSizeDistribution,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SeiResult {
    pub method: Method,
    /// Observed χ²_{m₁} image.
    pub stat: StatImage,
    /// Estimated first interest coefficient per voxel.
    pub effect: Vec<f64>,
    pub thresholds: Vec<ThresholdResult>,
}

impl SeiResult {
    /// True when any cluster at threshold index `t` has p < alpha.
    pub fn any_significant(&self, t: usize, alpha: f64) -> bool {
        self.thresholds[t].table.significant(alpha).next().is_some()
    }
}

/// Runs the observed fit, the chosen null sampler and the cluster inference.
///
/// The permutation baseline is unweighted and requires uniform weights.
pub fn run_sei(y: &OutcomeStack, x: &Design, s: &WeightStack, mask: &Mask, cfg: &SeiConfig) -> Result<SeiResult> {
    if y.n_voxels() != mask.len() {
        return Err(Error::DimensionMismatch {
            what: "outcome voxels vs mask",
            expected: mask.len(),
            got: y.n_voxels(),
        });
    }
    if cfg.cft.is_empty() {
        return Err(Error::invalid("at least one cluster-forming threshold is required"));
    }
    let m1 = x.m1();
    let z0: Vec<f64> = cfg.cft.iter().map(|&p| chisq_cft(p, m1)).collect::<Result<_>>()?;
    let (stat, effect, null) = match cfg.method {
        Method::Pbj => {
            let (fit, f) = fit_with_f(y, x, s, true)?;
            let stat = f_to_chisq(&f.values, f.df1, f.df2)?;
            let root = pbj_sqrt_cov(&fit)?;
            let sampler = PbjBootstrap::new(&root, m1, cfg.n_boot, cfg.seed)?;
            let effect = fit.coef.row(x.m0()).iter().copied().collect();
            (stat, effect, null_dists(&sampler, &z0, cfg, mask)?)
        }
        Method::Spbj => {
            let fit = spbj_fit(y, x, s)?;
            let sampler = SpbjBootstrap::new(&fit.root, cfg.n_boot, cfg.seed)?;
            let null = null_dists(&sampler, &z0, cfg, mask)?;
            (fit.stat, fit.beta, null)
        }
        Method::Perm => {
            if !s.is_uniform() {
                return Err(Error::invalid("the permutation baseline does not take weights"));
            }
            if m1 != 1 {
                return Err(Error::invalid(format!(
                    "the permutation baseline requires a single interest column (got {m1})"
                )));
            }
            let (fit, f) = fit_with_f(y, x, s, false)?;
            let stat = f_to_chisq(&f.values, f.df1, f.df2)?;
            let sampler = FreedmanLane::new(y, x, cfg.n_boot, cfg.seed)?;
            let effect = fit.coef.row(x.m0()).iter().copied().collect();
            (stat, effect, null_dists(&sampler, &z0, cfg, mask)?)
        }
    };
    let thresholds = cfg
        .cft
        .iter()
        .zip(z0)
        .zip(null)
        .map(|((&cft_p, z0), null)| {
            let mut table = threshold_label(&stat, z0, cfg.connectivity, mask)?;
            if m1 == 1 {
                table.annotate_direction(&effect);
            }
            Ok(ThresholdResult {
                cft_p,
                z0,
                table: sei_pvalues(&table, &null)?,
                null,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(SeiResult {
        method: cfg.method,
        stat,
        effect,
        thresholds,
    })
}

fn null_dists<S: NullSampler>(sampler: &S, z0: &[f64], cfg: &SeiConfig, mask: &Mask) -> Result<Vec<MaxSizeDistribution>> {
    null_max_distribution(sampler, z0, cfg.connectivity, mask)
}
