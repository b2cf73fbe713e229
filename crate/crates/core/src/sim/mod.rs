//! Synthetic null and power experiments on a small masked grid.

mod config;
mod data;
mod experiment;
mod field;
mod report;

pub use config::{
    Arm, CorrelationModel, CovariateSpec, Distribution, NullSimConfig, PowerSimConfig, VarianceModel, WeightSpec,
};
pub use data::{gen_null_dataset, NullDataset};
pub use experiment::{
    fwer_experiment, fwer_experiment_with_progress, place_spheres, power_experiment, power_experiment_with_progress,
    sphere_members, Progress, SphereLayout,
};
pub use field::{gaussian_kernel, kernel_lag1_correlation, masked_noise_field, smooth_noise_field, smoothed_lattice, FWHM_PER_SIGMA};
pub use report::{clopper_pearson, ExperimentReport, Record, RuntimeInfo};
