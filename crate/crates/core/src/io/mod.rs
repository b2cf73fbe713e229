//! File formats: NIfTI-1 volumes, covariate tables and analysis outputs.

pub mod covariates;
pub mod nifti;
pub mod results;

use std::path::Path;

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::model::{Mask, OutcomeStack, WeightStack};

pub use covariates::{read_covariates, write_covariates, CovariateError, CovariateTable};
pub use nifti::{encode_nifti, parse_nifti, read_nifti, write_nifti, DataType, NiftiError, Volume, VolumeData};
pub use results::{read_cluster_records, write_results, ClusterRecord, RecordsHeader, ResultPaths};

/// Mask from a 3D volume: every nonzero voxel is included.
pub fn load_mask(path: impl AsRef<Path>) -> Result<Mask> {
    let vol = read_nifti(&path)?;
    if vol.n_volumes() != 1 {
        return Err(Error::invalid(format!(
            "{}: mask must be a single 3D volume",
            path.as_ref().display()
        )));
    }
    let inclusion: Vec<bool> = vol.values().iter().map(|&x| x != 0.0).collect();
    let spacing = [0, 1, 2].map(|a| vol.pixdim.get(a).map_or(1.0, |&p| (p as f64).abs()));
    let spacing = spacing.map(|s| if s > 0.0 { s } else { 1.0 });
    Mask::new(vol.spatial_dims(), spacing, &inclusion)?.with_affine(vol.affine)
}

fn is_nifti_path(path: &Path) -> bool {
    let name = path.to_string_lossy();
    name.ends_with(".nii") || name.ends_with(".nii.gz")
}

/// Subject volumes restricted to the mask, as an `n × V` matrix.
///
/// `path` is either a 4D NIfTI file (one 3D volume per subject) or a text file
/// listing one 3D NIfTI path per line, relative paths resolved against the
/// list's directory.
pub fn load_subject_matrix(path: impl AsRef<Path>, mask: &Mask) -> Result<DMatrix<f64>> {
    let path = path.as_ref();
    let volumes: Vec<Vec<f64>> = if is_nifti_path(path) {
        let vol = read_nifti(path)?;
        check_spatial(&vol, mask, path)?;
        let per = mask.n_sites();
        let all = vol.values();
        all.chunks(per).map(|c| mask.gather(c)).collect()
    } else {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let base = path.parent().unwrap_or(Path::new("."));
        text.lines()
            .map(str::trim)
            .filter(|l| !l.is_empty() && !l.starts_with('#'))
            .map(|l| {
                let p = base.join(l);
                let vol = read_nifti(&p)?;
                check_spatial(&vol, mask, &p)?;
                if vol.n_volumes() != 1 {
                    return Err(Error::invalid(format!("{}: expected a 3D volume", p.display())));
                }
                Ok(mask.gather(&vol.values()))
            })
            .collect::<Result<_>>()?
    };
    if volumes.is_empty() {
        return Err(Error::invalid(format!("{}: no subject volumes", path.display())));
    }
    Ok(DMatrix::from_fn(volumes.len(), mask.len(), |i, v| volumes[i][v]))
}

fn check_spatial(vol: &Volume, mask: &Mask, path: &Path) -> Result<()> {
    if vol.spatial_dims() != mask.dims() {
        return Err(Error::invalid(format!(
            "{}: spatial dims {:?} differ from the mask's {:?}",
            path.display(),
            vol.spatial_dims(),
            mask.dims()
        )));
    }
    Ok(())
}

pub fn load_outcomes(path: impl AsRef<Path>, mask: &Mask) -> Result<OutcomeStack> {
    OutcomeStack::new(load_subject_matrix(path, mask)?)
}

/// Voxelwise variance-scale images S_i(v), laid out like the outcomes.
pub fn load_weight_images(path: impl AsRef<Path>, mask: &Mask) -> Result<WeightStack> {
    WeightStack::voxelwise(load_subject_matrix(path, mask)?)
}
