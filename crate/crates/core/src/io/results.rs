//! Cluster records, statistic maps and label maps for one analysis.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::nifti::{write_nifti, Volume, VolumeData};
use crate::cluster::{Cluster, ClusterTable};
use crate::error::{Error, Result};
use crate::model::{Mask, StatImage};

/// Rounds to 6 significant digits.
pub fn round_sig6(x: f64) -> f64 {
    if x == 0.0 || !x.is_finite() {
        return x;
    }
    format!("{x:.5e}").parse().expect("formatted float parses")
}

/// First line of a cluster records file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecordsHeader {
    pub record: String,
    pub z0: f64,
    pub n_clusters: usize,
    pub dims: [usize; 3],
    pub voxel_volume_mm3: f64,
}

/// One cluster line of a records file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterRecord {
    pub record: String,
    pub label: u32,
    pub size_voxels: usize,
    pub extent_mm3: f64,
    pub peak_value: f64,
    pub peak_ijk: [usize; 3],
    pub peak_mm: [f64; 3],
    pub p_value: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub direction: Option<i8>,
}

impl ClusterRecord {
    pub fn from_cluster(c: &Cluster, mask: &Mask) -> Self {
        let site = mask.index_of(c.peak_site).expect("peak lies in the mask");
        ClusterRecord {
            record: "cluster".into(),
            label: c.label,
            size_voxels: c.size_voxels,
            extent_mm3: c.extent_mm3,
            peak_value: c.peak_value,
            peak_ijk: c.peak_site,
            peak_mm: mask.world_of(site),
            p_value: c.p_value.map(round_sig6),
            direction: c.direction,
        }
    }
}

/// Paths written by [`write_results`].
#[derive(Debug, Clone, PartialEq)]
pub struct ResultPaths {
    pub records: PathBuf,
    pub stat: PathBuf,
    pub labels: PathBuf,
}

impl ResultPaths {
    pub fn for_prefix(prefix: impl AsRef<Path>) -> Self {
        let p = prefix.as_ref().display().to_string();
        ResultPaths {
            records: format!("{p}_clusters.jsonl").into(),
            stat: format!("{p}_stat.nii").into(),
            labels: format!("{p}_labels.nii").into(),
        }
    }
}

/// Volume on the mask's lattice, zero outside the mask, georeferenced by its affine.
pub fn mask_volume(mask: &Mask, data: VolumeData) -> Result<Volume> {
    let pixdim = mask.voxel_size().map(|x| x as f32).to_vec();
    Ok(Volume::new(mask.dims().to_vec(), pixdim, data)?.with_affine(*mask.affine()))
}

/// Writes `{prefix}_clusters.jsonl` (a header line then one line per cluster),
/// `{prefix}_stat.nii` (float64) and `{prefix}_labels.nii` (int32).
pub fn write_results(
    table: &ClusterTable,
    stat: &StatImage,
    mask: &Mask,
    prefix: impl AsRef<Path>,
) -> Result<ResultPaths> {
    if stat.len() != mask.len() {
        return Err(Error::DimensionMismatch {
            what: "statistic image voxels",
            expected: mask.len(),
            got: stat.len(),
        });
    }
    let paths = ResultPaths::for_prefix(prefix);
    let file = File::create(&paths.records).map_err(|e| Error::io(&paths.records, e))?;
    let mut w = BufWriter::new(file);
    let header = RecordsHeader {
        record: "header".into(),
        z0: table.z0,
        n_clusters: table.len(),
        dims: mask.dims(),
        voxel_volume_mm3: mask.voxel_volume(),
    };
    let mut lines = vec![serde_json::to_string(&header).expect("serializable")];
    for c in &table.clusters {
        lines.push(serde_json::to_string(&ClusterRecord::from_cluster(c, mask)).expect("serializable"));
    }
    for line in lines {
        writeln!(w, "{line}").map_err(|e| Error::io(&paths.records, e))?;
    }
    w.flush().map_err(|e| Error::io(&paths.records, e))?;

    let stat_vol = mask_volume(mask, VolumeData::F64(mask.scatter(stat.values(), 0.0)))?;
    write_nifti(&stat_vol, &paths.stat)?;
    let labels: Vec<i32> = table.label_image(mask.len()).into_iter().map(|l| l as i32).collect();
    let label_vol = mask_volume(mask, VolumeData::I32(mask.scatter(&labels, 0)))?;
    write_nifti(&label_vol, &paths.labels)?;
    Ok(paths)
}

/// Reads a records file written by [`write_results`].
pub fn read_cluster_records(path: impl AsRef<Path>) -> Result<(RecordsHeader, Vec<ClusterRecord>)> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut lines = BufReader::new(file).lines();
    let parse_err = |line: usize, e: serde_json::Error| Error::invalid(format!("{}:{line}: {e}", path.display()));
    let first = lines
        .next()
        .ok_or_else(|| Error::invalid(format!("{}: empty records file", path.display())))?
        .map_err(|e| Error::io(path, e))?;
    let header: RecordsHeader = serde_json::from_str(&first).map_err(|e| parse_err(1, e))?;
    let mut records = Vec::new();
    for (i, line) in lines.enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        records.push(serde_json::from_str(&line).map_err(|e| parse_err(i + 2, e))?);
    }
    Ok((header, records))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn six_significant_digits() {
        assert_eq!(round_sig6(1.0 / 3.0), 0.333333);
        assert_eq!(round_sig6(0.0049975012), 0.00499750);
        assert_eq!(round_sig6(1.0), 1.0);
    }
}
