//! Thresholding, 3D connected-component labeling, maximum-cluster-size null
//! distributions and cluster-extent p-values.

use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{Mask, StatImage};

/// Voxel neighbourhood used to define contiguity.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(try_from = "u32", into = "u32")]
pub enum Connectivity {
    /// Shared faces.
    Six,
    /// Shared faces or edges.
    Eighteen,
    /// Shared faces, edges or corners.
    #[default]
    TwentySix,
}

impl Connectivity {
    pub fn neighbours(self) -> u32 {
        match self {
            Connectivity::Six => 6,
            Connectivity::Eighteen => 18,
            Connectivity::TwentySix => 26,
        }
    }

    fn admits(self, d: [i64; 3]) -> bool {
        let nonzero = d.iter().filter(|&&x| x != 0).count();
        match self {
            Connectivity::Six => nonzero == 1,
            Connectivity::Eighteen => nonzero == 1 || nonzero == 2,
            Connectivity::TwentySix => nonzero >= 1,
        }
    }
}

impl TryFrom<u32> for Connectivity {
    type Error = Error;

    fn try_from(value: u32) -> Result<Self> {
        match value {
            6 => Ok(Connectivity::Six),
            18 => Ok(Connectivity::Eighteen),
            26 => Ok(Connectivity::TwentySix),
            other => Err(Error::invalid(format!("connectivity must be 6, 18 or 26, got {other}"))),
        }
    }
}

impl From<Connectivity> for u32 {
    fn from(c: Connectivity) -> u32 {
        c.neighbours()
    }
}

impl std::str::FromStr for Connectivity {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        s.trim()
            .parse::<u32>()
            .map_err(|_| Error::invalid(format!("connectivity must be 6, 18 or 26, got {s:?}")))?
            .try_into()
    }
}

/// One suprathreshold cluster.
#[derive(Debug, Clone, PartialEq)]
pub struct Cluster {
    /// 1-based rank in the table (1 = largest).
    pub label: u32,
    pub size_voxels: usize,
    pub extent_mm3: f64,
    pub peak_value: f64,
    pub peak_site: [usize; 3],
    pub p_value: Option<f64>,
    /// Sign of the mean effect over the cluster, when an effect image was supplied.
    pub direction: Option<i8>,
    /// In-mask voxel indices, ascending.
    pub members: Vec<usize>,
}

/// Clusters of one thresholded image, sorted by decreasing size.
#[derive(Debug, Clone, PartialEq)]
pub struct ClusterTable {
    pub z0: f64,
    pub clusters: Vec<Cluster>,
}

impl ClusterTable {
    pub fn len(&self) -> usize {
        self.clusters.len()
    }

    pub fn is_empty(&self) -> bool {
        self.clusters.is_empty()
    }

    pub fn sizes(&self) -> Vec<usize> {
        self.clusters.iter().map(|c| c.size_voxels).collect()
    }

    /// Integer label per in-mask voxel (0 = not in any cluster).
    pub fn label_image(&self, n_voxels: usize) -> Vec<u32> {
        let mut labels = vec![0; n_voxels];
        for c in &self.clusters {
            for &v in &c.members {
                labels[v] = c.label;
            }
        }
        labels
    }

    /// Records the sign of the mean of `effect` over each cluster.
    pub fn annotate_direction(&mut self, effect: &[f64]) {
        for c in &mut self.clusters {
            let mean = c.members.iter().map(|&v| effect[v]).sum::<f64>() / c.members.len() as f64;
            c.direction = Some(if mean > 0.0 {
                1
            } else if mean < 0.0 {
                -1
            } else {
                0
            });
        }
    }

    /// Clusters with p-value strictly below `alpha`.
    pub fn significant(&self, alpha: f64) -> impl Iterator<Item = &Cluster> {
        self.clusters.iter().filter(move |c| c.p_value.is_some_and(|p| p < alpha))
    }
}

/// Maximum cluster size of each of B null images at threshold `z0`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MaxSizeDistribution {
    pub z0: f64,
    pub sizes: Vec<usize>,
}

impl MaxSizeDistribution {
    pub fn n_samples(&self) -> usize {
        self.sizes.len()
    }

    /// Add-one Monte-Carlo p-value (1 + #{b : size_b ≥ size}) / (B + 1).
    pub fn p_value(&self, size: usize) -> f64 {
        let exceed = self.sizes.iter().filter(|&&s| s >= size).count();
        (1 + exceed) as f64 / (self.sizes.len() + 1) as f64
    }
}

/// Backward neighbours of every in-mask voxel, stored in CSR form.
#[derive(Debug)]
struct Neighbourhood {
    start: Vec<u32>,
    neighbours: Vec<u32>,
}

impl Neighbourhood {
    fn new(mask: &Mask, connectivity: Connectivity) -> Self {
        // Offsets that precede the centre in lattice order.
        let mut offsets = Vec::new();
        for dz in -1i64..=1 {
            for dy in -1i64..=1 {
                for dx in -1i64..=1 {
                    let before = dz < 0 || (dz == 0 && (dy < 0 || (dy == 0 && dx < 0)));
                    if before && connectivity.admits([dx, dy, dz]) {
                        offsets.push([dx, dy, dz]);
                    }
                }
            }
        }
        let dims = mask.dims().map(|d| d as i64);
        let mut start = Vec::with_capacity(mask.len() + 1);
        let mut neighbours = Vec::new();
        start.push(0);
        for v in 0..mask.len() {
            let c = mask.coords_of(v).map(|x| x as i64);
            for d in &offsets {
                let p = [c[0] + d[0], c[1] + d[1], c[2] + d[2]];
                if (0..3).all(|a| p[a] >= 0 && p[a] < dims[a]) {
                    if let Some(w) = mask.index_of(p.map(|x| x as usize)) {
                        neighbours.push(w as u32);
                    }
                }
            }
            start.push(neighbours.len() as u32);
        }
        Neighbourhood { start, neighbours }
    }

    #[inline]
    fn of(&self, v: usize) -> &[u32] {
        &self.neighbours[self.start[v] as usize..self.start[v + 1] as usize]
    }
}

/// Two-pass union-find labeler over a fixed mask and connectivity.
///
/// Cloning shares the neighbourhood and gives the clone its own scratch space,
/// so one labeler per worker can be cloned from a prototype.
#[derive(Debug)]
pub struct Labeler {
    neighbourhood: Arc<Neighbourhood>,
    parent: Vec<u32>,
    size: Vec<u32>,
    stamp: Vec<u32>,
    generation: u32,
    active: Vec<u32>,
}

impl Clone for Labeler {
    fn clone(&self) -> Self {
        Labeler::with_neighbourhood(self.neighbourhood.clone(), self.parent.len())
    }
}

impl Labeler {
    pub fn new(mask: &Mask, connectivity: Connectivity) -> Self {
        Labeler::with_neighbourhood(Arc::new(Neighbourhood::new(mask, connectivity)), mask.len())
    }

    fn with_neighbourhood(neighbourhood: Arc<Neighbourhood>, n_voxels: usize) -> Self {
        Labeler {
            neighbourhood,
            parent: vec![0; n_voxels],
            size: vec![0; n_voxels],
            stamp: vec![0; n_voxels],
            generation: 0,
            active: Vec::new(),
        }
    }

    pub fn n_voxels(&self) -> usize {
        self.parent.len()
    }

    fn find(&mut self, mut v: u32) -> u32 {
        while self.parent[v as usize] != v {
            let grand = self.parent[self.parent[v as usize] as usize];
            self.parent[v as usize] = grand;
            v = grand;
        }
        v
    }

    /// Unions every voxel with `values > z0` with its suprathreshold
    /// neighbours; returns the size of the largest component.
    fn union_pass(&mut self, values: &[f64], z0: f64) -> usize {
        assert_eq!(values.len(), self.n_voxels(), "image length must equal V");
        self.generation = self.generation.wrapping_add(1);
        if self.generation == 0 {
            self.stamp.fill(0);
            self.generation = 1;
        }
        let gen = self.generation;
        self.active.clear();
        let mut largest = 0usize;
        for (v, &x) in values.iter().enumerate() {
            if x <= z0 {
                continue;
            }
            let v32 = v as u32;
            self.stamp[v] = gen;
            self.parent[v] = v32;
            self.size[v] = 1;
            self.active.push(v32);
            let nb = self.neighbourhood.clone();
            for &w in nb.of(v) {
                if self.stamp[w as usize] != gen {
                    continue;
                }
                let (ra, rb) = (self.find(v32), self.find(w));
                if ra == rb {
                    continue;
                }
                let (big, small) = if self.size[ra as usize] >= self.size[rb as usize] {
                    (ra, rb)
                } else {
                    (rb, ra)
                };
                self.parent[small as usize] = big;
                self.size[big as usize] += self.size[small as usize];
            }
            let root = self.find(v32);
            largest = largest.max(self.size[root as usize] as usize);
        }
        largest
    }

    /// Size of the largest cluster of `{v : values[v] > z0}`; 0 when empty.
    pub fn max_size(&mut self, values: &[f64], z0: f64) -> usize {
        self.union_pass(values, z0)
    }

    /// Labels the clusters of `{v : values[v] > z0}`.
    pub fn label(&mut self, values: &[f64], z0: f64, mask: &Mask) -> ClusterTable {
        self.union_pass(values, z0);
        // Provisional labels follow the raster order of each cluster's first voxel.
        let mut root_label: Vec<(u32, usize)> = Vec::new();
        let mut clusters: Vec<Cluster> = Vec::new();
        let active = std::mem::take(&mut self.active);
        for &v in &active {
            let root = self.find(v);
            let idx = match root_label.iter().find(|(r, _)| *r == root) {
                Some(&(_, idx)) => idx,
                None => {
                    root_label.push((root, clusters.len()));
                    clusters.push(Cluster {
                        label: clusters.len() as u32 + 1,
                        size_voxels: 0,
                        extent_mm3: 0.0,
                        peak_value: f64::NEG_INFINITY,
                        peak_site: [0; 3],
                        p_value: None,
                        direction: None,
                        members: Vec::new(),
                    });
                    clusters.len() - 1
                }
            };
            let c = &mut clusters[idx];
            c.members.push(v as usize);
            if values[v as usize] > c.peak_value {
                c.peak_value = values[v as usize];
                c.peak_site = mask.coords_of(v as usize);
            }
        }
        self.active = active;
        let vol = mask.voxel_volume();
        for c in &mut clusters {
            c.size_voxels = c.members.len();
            c.extent_mm3 = c.size_voxels as f64 * vol;
        }
        clusters.sort_by(|a, b| b.size_voxels.cmp(&a.size_voxels).then(a.label.cmp(&b.label)));
        for (rank, c) in clusters.iter_mut().enumerate() {
            c.label = rank as u32 + 1;
        }
        ClusterTable { z0, clusters }
    }
}

/// Labels the maximal connected components of `{v in mask : img(v) > z0}`.
pub fn threshold_label(img: &StatImage, z0: f64, connectivity: Connectivity, mask: &Mask) -> Result<ClusterTable> {
    check_image(img.values(), mask)?;
    Ok(Labeler::new(mask, connectivity).label(img.values(), z0, mask))
}

/// Size of the largest suprathreshold cluster; 0 when there is none.
pub fn max_cluster_size(img: &StatImage, z0: f64, connectivity: Connectivity, mask: &Mask) -> Result<usize> {
    check_image(img.values(), mask)?;
    Ok(Labeler::new(mask, connectivity).max_size(img.values(), z0))
}

fn check_image(values: &[f64], mask: &Mask) -> Result<()> {
    if values.len() != mask.len() {
        return Err(Error::DimensionMismatch {
            what: "statistic image voxels",
            expected: mask.len(),
            got: values.len(),
        });
    }
    Ok(())
}

/// Source of null images indexed by sample number `b`.
///
/// Implementations must make sample `b` a deterministic function of `b` and
/// their own parameters only, so that blocks may be produced in any order.
pub trait NullSampler: Sync {
    fn num_samples(&self) -> usize;

    fn num_voxels(&self) -> usize;

    /// Maps a χ² cluster-forming threshold onto the scale of the produced
    /// images; thresholding there must select exactly the voxels whose χ²
    /// value exceeds `z0`.
    fn image_threshold(&self, z0: f64) -> Result<f64> {
        Ok(z0)
    }

    /// Writes the images for samples `start..start + out.len()`.
    fn sample_block(&self, start: usize, out: &mut [Vec<f64>]) -> Result<()>;
}

/// Pre-computed images as a sampler.
impl NullSampler for [StatImage] {
    fn num_samples(&self) -> usize {
        self.len()
    }

    fn num_voxels(&self) -> usize {
        self.first().map_or(0, |i| i.len())
    }

    fn sample_block(&self, start: usize, out: &mut [Vec<f64>]) -> Result<()> {
        for (j, o) in out.iter_mut().enumerate() {
            o.clear();
            o.extend_from_slice(self[start + j].values());
        }
        Ok(())
    }
}

/// Samples per work item; fixed so results never depend on the worker count.
const BLOCK: usize = 8;

/// Consumes each null image once and records its maximum cluster size at
/// every threshold in `z0_list`.
pub fn null_max_distribution<S: NullSampler + ?Sized>(
    sampler: &S,
    z0_list: &[f64],
    connectivity: Connectivity,
    mask: &Mask,
) -> Result<Vec<MaxSizeDistribution>> {
    let b_total = sampler.num_samples();
    if b_total == 0 {
        return Err(Error::invalid("null distribution needs at least one sample"));
    }
    if sampler.num_voxels() != mask.len() {
        return Err(Error::DimensionMismatch {
            what: "null image voxels",
            expected: mask.len(),
            got: sampler.num_voxels(),
        });
    }
    let thresholds = z0_list
        .iter()
        .map(|&z| sampler.image_threshold(z))
        .collect::<Result<Vec<f64>>>()?;
    let prototype = Labeler::new(mask, connectivity);
    let n_blocks = b_total.div_ceil(BLOCK);
    let per_block: Vec<Result<Vec<Vec<usize>>>> = (0..n_blocks)
        .into_par_iter()
        .map_init(
            || (prototype.clone(), vec![Vec::new(); BLOCK]),
            |(labeler, buf), blk| {
                let start = blk * BLOCK;
                let count = BLOCK.min(b_total - start);
                sampler.sample_block(start, &mut buf[..count])?;
                Ok(buf[..count]
                    .iter()
                    .map(|img| thresholds.iter().map(|&t| labeler.max_size(img, t)).collect())
                    .collect())
            },
        )
        .collect();
    let mut dists: Vec<MaxSizeDistribution> = z0_list
        .iter()
        .map(|&z0| MaxSizeDistribution {
            z0,
            sizes: Vec::with_capacity(b_total),
        })
        .collect();
    for block in per_block {
        for sizes in block? {
            for (d, s) in dists.iter_mut().zip(sizes) {
                d.sizes.push(s);
            }
        }
    }
    Ok(dists)
}

/// Streaming variant over an iterator of images, consumed in order.
pub fn null_max_distribution_iter<I>(
    images: I,
    z0_list: &[f64],
    connectivity: Connectivity,
    mask: &Mask,
) -> Result<Vec<MaxSizeDistribution>>
where
    I: IntoIterator<Item = StatImage>,
{
    let mut labeler = Labeler::new(mask, connectivity);
    let mut dists: Vec<MaxSizeDistribution> = z0_list
        .iter()
        .map(|&z0| MaxSizeDistribution { z0, sizes: Vec::new() })
        .collect();
    for img in images {
        check_image(img.values(), mask)?;
        for d in dists.iter_mut() {
            d.sizes.push(labeler.max_size(img.values(), d.z0));
        }
    }
    if dists.first().is_some_and(|d| d.sizes.is_empty()) {
        return Err(Error::invalid("null distribution needs at least one sample"));
    }
    Ok(dists)
}

/// Sets p_j = (1 + #{b : max_b ≥ size_j}) / (B + 1) on every cluster.
pub fn sei_pvalues(observed: &ClusterTable, dist: &MaxSizeDistribution) -> Result<ClusterTable> {
    if dist.sizes.is_empty() {
        return Err(Error::invalid("empty max-size distribution"));
    }
    let mut sorted = dist.sizes.clone();
    sorted.sort_unstable();
    let b = sorted.len();
    let mut table = observed.clone();
    for c in &mut table.clusters {
        let below = sorted.partition_point(|&s| s < c.size_voxels);
        c.p_value = Some((1 + b - below) as f64 / (b + 1) as f64);
    }
    Ok(table)
}
