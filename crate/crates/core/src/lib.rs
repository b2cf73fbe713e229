//! Spatial extent inference for voxelwise regression models with
//! parametric (PBJ) and robust semiparametric (sPBJ) bootstrap joint testing,
//! plus a Freedman–Lane permutation baseline and a simulation harness.

pub mod cli;
pub mod cluster;
pub mod error;
pub mod io;
pub mod model;
pub mod pbj;
pub mod permbase;
pub mod rng;
pub mod sei;
pub mod sim;
pub mod spbj;

pub use cluster::{
    max_cluster_size, null_max_distribution, sei_pvalues, threshold_label, Cluster, ClusterTable, Connectivity,
    Labeler, MaxSizeDistribution, NullSampler,
};
pub use error::{Error, Result};
pub use model::{
    chisq_cft, f_statistic, f_to_chisq, wls_fit, Design, FitResult, Mask, OutcomeStack, StatImage, WeightStack,
};
pub use pbj::{pbj_sample, pbj_sqrt_cov, PbjBootstrap, SqrtCovRoot};
pub use permbase::FreedmanLane;
pub use sei::{run_sei, Method, SeiConfig, SeiResult};
pub use spbj::{spbj_fit, spbj_sample, SandwichFit, SpbjBootstrap};
