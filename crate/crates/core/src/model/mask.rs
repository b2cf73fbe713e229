use crate::error::{Error, Result};

const OUTSIDE: u32 = u32::MAX;

/// 3D lattice geometry plus the in-mask voxel indexing.
///
/// Lattice sites are addressed by a linear index with the first axis varying
/// fastest (NIfTI storage order). In-mask voxels are numbered `0..V` in that
/// same order, so the voxel index is monotone in the lattice index.
#[derive(Debug, Clone, PartialEq)]
pub struct Mask {
    dims: [usize; 3],
    voxel_size: [f64; 3],
    affine: [[f64; 4]; 4],
    site_to_index: Vec<u32>,
    index_to_site: Vec<usize>,
}

impl Mask {
    pub fn new(dims: [usize; 3], voxel_size: [f64; 3], inclusion: &[bool]) -> Result<Self> {
        if dims.iter().any(|&d| d == 0) {
            return Err(Error::invalid(format!("mask dims must be positive, got {dims:?}")));
        }
        if voxel_size.iter().any(|&s| !(s.is_finite() && s > 0.0)) {
            return Err(Error::invalid(format!(
                "voxel sizes must be positive, got {voxel_size:?}"
            )));
        }
        let sites = dims[0] * dims[1] * dims[2];
        if inclusion.len() != sites {
            return Err(Error::DimensionMismatch {
                what: "mask inclusion",
                expected: sites,
                got: inclusion.len(),
            });
        }
        let mut site_to_index = vec![OUTSIDE; sites];
        let mut index_to_site = Vec::new();
        for (site, &inside) in inclusion.iter().enumerate() {
            if inside {
                site_to_index[site] = index_to_site.len() as u32;
                index_to_site.push(site);
            }
        }
        if index_to_site.is_empty() {
            return Err(Error::invalid("mask contains no voxels"));
        }
        let mut affine = [[0.0; 4]; 4];
        for axis in 0..3 {
            affine[axis][axis] = voxel_size[axis];
        }
        affine[3][3] = 1.0;
        Ok(Mask {
            dims,
            voxel_size,
            affine,
            site_to_index,
            index_to_site,
        })
    }

    /// Every lattice site is in the mask.
    pub fn full(dims: [usize; 3], voxel_size: [f64; 3]) -> Result<Self> {
        let sites = dims.iter().product();
        Mask::new(dims, voxel_size, &vec![true; sites])
    }

    /// An axis-aligned ellipsoid centred in the grid with semi-axes of
    /// `0.45 * dims` voxels.
    pub fn ellipsoid(dims: [usize; 3], voxel_size: [f64; 3]) -> Result<Self> {
        let centre = dims.map(|d| (d as f64 - 1.0) / 2.0);
        let semi = dims.map(|d| 0.45 * d as f64);
        let mut inclusion = Vec::with_capacity(dims.iter().product());
        for k in 0..dims[2] {
            for j in 0..dims[1] {
                for i in 0..dims[0] {
                    let r2 = [(i, 0), (j, 1), (k, 2)]
                        .iter()
                        .map(|&(c, a)| ((c as f64 - centre[a]) / semi[a]).powi(2))
                        .sum::<f64>();
                    inclusion.push(r2 <= 1.0);
                }
            }
        }
        Mask::new(dims, voxel_size, &inclusion)
    }

    /// Replaces the voxel-to-world affine. The affine must be invertible.
    pub fn with_affine(mut self, affine: [[f64; 4]; 4]) -> Result<Self> {
        if affine_det3(&affine).abs() < 1e-12 {
            return Err(Error::invalid("mask affine is singular"));
        }
        self.affine = affine;
        Ok(self)
    }

    /// Number of in-mask voxels, V.
    pub fn len(&self) -> usize {
        self.index_to_site.len()
    }

    pub fn is_empty(&self) -> bool {
        self.index_to_site.is_empty()
    }

    pub fn dims(&self) -> [usize; 3] {
        self.dims
    }

    pub fn n_sites(&self) -> usize {
        self.site_to_index.len()
    }

    pub fn voxel_size(&self) -> [f64; 3] {
        self.voxel_size
    }

    /// Volume of one voxel in mm³.
    pub fn voxel_volume(&self) -> f64 {
        self.voxel_size.iter().product()
    }

    pub fn affine(&self) -> &[[f64; 4]; 4] {
        &self.affine
    }

    pub fn linear_site(&self, ijk: [usize; 3]) -> usize {
        ijk[0] + self.dims[0] * (ijk[1] + self.dims[1] * ijk[2])
    }

    pub fn site_coords(&self, site: usize) -> [usize; 3] {
        let i = site % self.dims[0];
        let j = (site / self.dims[0]) % self.dims[1];
        let k = site / (self.dims[0] * self.dims[1]);
        [i, j, k]
    }

    /// In-mask index of a lattice site, if the site is in the mask.
    pub fn index_of_site(&self, site: usize) -> Option<usize> {
        match self.site_to_index.get(site) {
            Some(&idx) if idx != OUTSIDE => Some(idx as usize),
            _ => None,
        }
    }

    pub fn index_of(&self, ijk: [usize; 3]) -> Option<usize> {
        if ijk.iter().zip(self.dims).any(|(&c, d)| c >= d) {
            return None;
        }
        self.index_of_site(self.linear_site(ijk))
    }

    /// Lattice site of in-mask voxel `index`.
    pub fn site_of(&self, index: usize) -> usize {
        self.index_to_site[index]
    }

    pub fn coords_of(&self, index: usize) -> [usize; 3] {
        self.site_coords(self.index_to_site[index])
    }

    /// World (mm) coordinates of in-mask voxel `index` under the affine.
    pub fn world_of(&self, index: usize) -> [f64; 3] {
        let c = self.coords_of(index).map(|x| x as f64);
        let a = &self.affine;
        [0, 1, 2].map(|r| a[r][0] * c[0] + a[r][1] * c[1] + a[r][2] * c[2] + a[r][3])
    }

    pub fn inclusion(&self) -> Vec<bool> {
        self.site_to_index.iter().map(|&i| i != OUTSIDE).collect()
    }

    /// Expands an in-mask vector onto the full lattice, filling outside sites.
    pub fn scatter<T: Copy>(&self, values: &[T], fill: T) -> Vec<T> {
        assert_eq!(values.len(), self.len(), "scatter: length must equal V");
        let mut grid = vec![fill; self.n_sites()];
        for (&site, &v) in self.index_to_site.iter().zip(values) {
            grid[site] = v;
        }
        grid
    }

    /// Restricts a full-lattice vector to the in-mask voxels.
    pub fn gather<T: Copy>(&self, grid: &[T]) -> Vec<T> {
        assert_eq!(grid.len(), self.n_sites(), "gather: length must equal the lattice size");
        self.index_to_site.iter().map(|&s| grid[s]).collect()
    }
}

fn affine_det3(a: &[[f64; 4]; 4]) -> f64 {
    a[0][0] * (a[1][1] * a[2][2] - a[1][2] * a[2][1]) - a[0][1] * (a[1][0] * a[2][2] - a[1][2] * a[2][0])
        + a[0][2] * (a[1][0] * a[2][1] - a[1][1] * a[2][0])
}
