//! On-disk inputs for command-line runs.

use std::path::{Path, PathBuf};

use nalgebra::DMatrix;
use pbj::io::{write_covariates, write_nifti, CovariateTable, Volume, VolumeData};
use pbj::model::Mask;
use rand::Rng;
use rand_distr::StandardNormal;

pub struct Fixture {
    pub mask: PathBuf,
    pub outcomes: PathBuf,
    pub covariates: PathBuf,
    pub dims: [usize; 3],
}

/// An 8³ ellipsoidal mask, n subjects of white noise with a block of signal
/// tied to covariate `x`, plus a nuisance covariate `age`.
pub fn write_fixture(dir: &Path, n: usize, seed: u64) -> Fixture {
    let dims = [8, 8, 8];
    let mask = Mask::ellipsoid(dims, [2.0; 3]).unwrap();
    let mut r = super::rng(seed);
    let x: Vec<f64> = (0..n).map(|_| r.sample(StandardNormal)).collect();
    let age: Vec<f64> = (0..n).map(|_| r.random_range(8.0..22.0)).collect();
    let sites: usize = dims.iter().product();
    let mut data = vec![0f32; sites * n];
    for i in 0..n {
        for s in 0..sites {
            if mask.index_of_site(s).is_none() {
                continue;
            }
            let c = mask.site_coords(s);
            let signal = if c.iter().all(|&k| (2..5).contains(&k)) { 1.5 * x[i] } else { 0.0 };
            let e: f64 = r.sample(StandardNormal);
            data[i * sites + s] = (signal + e) as f32;
        }
    }
    let inclusion: Vec<u8> = mask.inclusion().iter().map(|&b| b as u8).collect();
    let f = Fixture {
        mask: dir.join("mask.nii"),
        outcomes: dir.join("y.nii.gz"),
        covariates: dir.join("cov.csv"),
        dims,
    };
    write_nifti(&Volume::new(dims.to_vec(), vec![2.0; 3], VolumeData::U8(inclusion)).unwrap(), &f.mask).unwrap();
    let vol = Volume::new(vec![8, 8, 8, n], vec![2.0, 2.0, 2.0, 1.0], VolumeData::F32(data)).unwrap();
    write_nifti(&vol, &f.outcomes).unwrap();
    let ids = (0..n).map(|i| format!("s{i:02}")).collect();
    let table = CovariateTable::new(ids, vec!["age".into(), "x".into()], vec![age, x]).unwrap();
    write_covariates(&table, &f.covariates).unwrap();
    f
}

/// Covariates as a design-ready matrix pair, read back through the library.
pub fn design_columns(f: &Fixture) -> (DMatrix<f64>, DMatrix<f64>) {
    let t = pbj::io::read_covariates(&f.covariates).unwrap();
    (t.matrix(&["age"]).unwrap(), t.matrix(&["x"]).unwrap())
}

/// A small null-simulation config.
pub fn tiny_null_config(seed: u64, arms: &str) -> String {
    format!(
        r#"seed = {seed}
n = 16
n_sims = 3
n_boot = 30
dims = [10, 10, 10]
voxel_size = [2.0, 2.0, 2.0]
fwhm_voxels = 2.0
connectivity = 26
cft = [0.01]
alpha = [0.05]
interest = "mot"
covariates = [
  {{ name = "age", dist = "uniform", low = 8.0, high = 22.0 }},
  {{ name = "mot", dist = "normal", mean = 0.0, sd = 0.5 }},
]
arms = [{arms}]
"#
    )
}
