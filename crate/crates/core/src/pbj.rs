//! Parametric bootstrap joint procedure: the residual-based covariance root
//! and diagonal-Wishart bootstrap images.

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::StandardNormal;

use crate::cluster::NullSampler;
use crate::error::{Error, Result};
use crate::model::{FitResult, StatImage};
use crate::model::dot;
use crate::rng::{stream, Domain};

/// V × n matrix Σ̂^{1/2} whose rows have unit Euclidean norm.
///
/// Stored transposed (n × V, one contiguous column per voxel) because every
/// consumer walks it voxel by voxel.
#[derive(Debug, Clone, PartialEq)]
pub struct SqrtCovRoot {
    cols: DMatrix<f64>,
}

impl SqrtCovRoot {
    /// Normalizes the rows of a V × n matrix.
    pub fn from_rows(rows: &DMatrix<f64>) -> Result<Self> {
        SqrtCovRoot::from_unnormalized_columns(rows.transpose())
    }

    /// Normalizes the columns of an n × V matrix (column v = row v of the root).
    pub(crate) fn from_unnormalized_columns(mut cols: DMatrix<f64>) -> Result<Self> {
        if cols.nrows() == 0 || cols.ncols() == 0 {
            return Err(Error::invalid("covariance root must be non-empty"));
        }
        for (v, mut col) in cols.column_iter_mut().enumerate() {
            if col.iter().any(|x| !x.is_finite()) {
                return Err(Error::invalid(format!("non-finite residual at voxel {v}")));
            }
            let norm = col.norm();
            if norm == 0.0 {
                return Err(Error::DegenerateVoxel { voxel: v });
            }
            if norm != 1.0 {
                col.unscale_mut(norm);
            }
        }
        Ok(SqrtCovRoot { cols })
    }

    pub fn n_subjects(&self) -> usize {
        self.cols.nrows()
    }

    pub fn n_voxels(&self) -> usize {
        self.cols.ncols()
    }

    /// Row v of the root.
    pub fn row(&self, v: usize) -> &[f64] {
        let n = self.n_subjects();
        &self.cols.as_slice()[v * n..(v + 1) * n]
    }

    /// The root as a V × n matrix.
    pub fn to_rows(&self) -> DMatrix<f64> {
        self.cols.transpose()
    }

    /// Z(v) = Σ_k (row_v · d_k)² for each of `draws` (each n·m₁ values,
    /// column-major n × m₁) into the matching entry of `out`.
    pub(crate) fn project_squares(&self, draws: &[Vec<f64>], m1: usize, out: &mut [Vec<f64>]) {
        let n = self.n_subjects();
        let nv = self.n_voxels();
        for o in out.iter_mut() {
            o.resize(nv, 0.0);
        }
        for v in 0..nv {
            let row = self.row(v);
            for (d, o) in draws.iter().zip(out.iter_mut()) {
                let mut z = 0.0;
                for k in 0..m1 {
                    let p = dot(row, &d[k * n..(k + 1) * n]);
                    z += p * p;
                }
                o[v] = z;
            }
        }
    }

    /// Root · d for a single n-vector draw.
    pub(crate) fn project(&self, draw: &[f64]) -> Vec<f64> {
        (0..self.n_voxels()).map(|v| dot(self.row(v), draw)).collect()
    }
}

/// Σ̂^{1/2} from the residual matrix of a fit: row v is the voxel-v residual
/// vector scaled to unit norm.
pub fn pbj_sqrt_cov(fit: &FitResult) -> Result<SqrtCovRoot> {
    SqrtCovRoot::from_unnormalized_columns(fit.resid.clone())
}

fn check_draw(root: &SqrtCovRoot, rows: usize) -> Result<()> {
    if rows != root.n_subjects() {
        return Err(Error::DimensionMismatch {
            what: "bootstrap draw rows",
            expected: root.n_subjects(),
            got: rows,
        });
    }
    Ok(())
}

/// Diagonal of Σ̂^{1/2} D Dᵀ Σ̂^{1/2ᵀ} for an n × m₁ draw D.
pub fn pbj_sample(root: &SqrtCovRoot, m1: usize, draw: &DMatrix<f64>) -> Result<StatImage> {
    check_draw(root, draw.nrows())?;
    if m1 == 0 || draw.ncols() != m1 {
        return Err(Error::DimensionMismatch {
            what: "bootstrap draw columns",
            expected: m1,
            got: draw.ncols(),
        });
    }
    let mut out = vec![Vec::new()];
    root.project_squares(&[draw.as_slice().to_vec()], m1, &mut out);
    Ok(StatImage::from_parts(out.pop().expect("one image"), m1))
}

/// Fills `out` with standard normal draws from the stream of sample `b`.
pub(crate) fn normal_draw(seed: u64, domain: Domain, b: usize, out: &mut Vec<f64>, len: usize) {
    let mut rng = stream(seed, domain, b as u64);
    out.clear();
    out.extend((0..len).map(|_| rng.sample::<f64, _>(StandardNormal)));
}

/// B diagonal-Wishart images through a fixed root. Sample `b` depends only on
/// `(seed, b)`.
#[derive(Debug, Clone, Copy)]
pub struct PbjBootstrap<'a> {
    root: &'a SqrtCovRoot,
    m1: usize,
    n_boot: usize,
    seed: u64,
}

impl<'a> PbjBootstrap<'a> {
    pub fn new(root: &'a SqrtCovRoot, m1: usize, n_boot: usize, seed: u64) -> Result<Self> {
        if m1 == 0 {
            return Err(Error::invalid("m1 must be at least 1"));
        }
        if n_boot == 0 {
            return Err(Error::invalid("number of bootstrap samples must be at least 1"));
        }
        Ok(PbjBootstrap { root, m1, n_boot, seed })
    }

    pub fn n_boot(&self) -> usize {
        self.n_boot
    }

    /// The n × m₁ standard normal draw of sample `b`.
    pub fn draw(&self, b: usize) -> DMatrix<f64> {
        let n = self.root.n_subjects();
        let mut d = Vec::new();
        normal_draw(self.seed, Domain::PbjDraw, b, &mut d, n * self.m1);
        DMatrix::from_vec(n, self.m1, d)
    }

    pub fn image(&self, b: usize) -> StatImage {
        pbj_sample(self.root, self.m1, &self.draw(b)).expect("draw shape matches root")
    }

    /// Streams the B images in order.
    pub fn iter(&self) -> impl Iterator<Item = StatImage> + '_ {
        (0..self.n_boot).map(move |b| self.image(b))
    }
}

impl NullSampler for PbjBootstrap<'_> {
    fn num_samples(&self) -> usize {
        self.n_boot
    }

    fn num_voxels(&self) -> usize {
        self.root.n_voxels()
    }

    fn sample_block(&self, start: usize, out: &mut [Vec<f64>]) -> Result<()> {
        let len = self.root.n_subjects() * self.m1;
        let draws: Vec<Vec<f64>> = (0..out.len())
            .map(|j| {
                let mut d = Vec::with_capacity(len);
                normal_draw(self.seed, Domain::PbjDraw, start + j, &mut d, len);
                d
            })
            .collect();
        self.root.project_squares(&draws, self.m1, out);
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn random_root(rng: &mut ChaCha8Rng, nv: usize, n: usize) -> SqrtCovRoot {
        SqrtCovRoot::from_rows(&DMatrix::from_fn(nv, n, |_, _| rng.sample(StandardNormal))).unwrap()
    }

    #[test]
    fn normalization() {
        let rows = DMatrix::from_row_slice(2, 2, &[0.6, 0.8, 1.0, 0.0]);
        let root = SqrtCovRoot::from_rows(&rows).unwrap();
        assert_eq!(root.to_rows(), rows);
        let zero = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 0.0, 0.0]);
        assert!(matches!(SqrtCovRoot::from_rows(&zero), Err(Error::DegenerateVoxel { voxel: 1 })));

        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let raw = DMatrix::from_fn(5, 8, |_, _| rng.sample::<f64, _>(StandardNormal));
        let root = SqrtCovRoot::from_rows(&raw).unwrap();
        for v in 0..5 {
            let row = root.row(v);
            let norm = row.iter().map(|x| x * x).sum::<f64>().sqrt();
            assert!((norm - 1.0).abs() < 1e-12);
            let scale = raw.row(v).norm();
            for i in 0..8 {
                assert!((row[i] * scale - raw[(v, i)]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn identity_root_squares_draws() {
        let root = SqrtCovRoot::from_rows(&DMatrix::identity(2, 2)).unwrap();
        let z = pbj_sample(&root, 1, &DMatrix::from_column_slice(2, 1, &[1.0, -2.0])).unwrap();
        assert_eq!(z.values(), &[1.0, 4.0]);
        let z = pbj_sample(&root, 1, &DMatrix::zeros(2, 1)).unwrap();
        assert_eq!(z.values(), &[0.0, 0.0]);
        assert!(pbj_sample(&root, 1, &DMatrix::zeros(3, 1)).is_err());
        assert!(pbj_sample(&root, 2, &DMatrix::zeros(2, 1)).is_err());
    }

    #[test]
    fn sample_matches_dense_product() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let root = random_root(&mut rng, 7, 6);
        let draw = DMatrix::from_fn(6, 2, |_, _| rng.sample(StandardNormal));
        let z = pbj_sample(&root, 2, &draw).unwrap();
        let r = root.to_rows();
        let dense = &r * &draw * draw.transpose() * r.transpose();
        for v in 0..7 {
            assert!((z.values()[v] - dense[(v, v)]).abs() <= 1e-12 * dense[(v, v)]);
        }
    }

    #[test]
    fn bootstrap_is_reproducible_and_block_invariant() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let root = random_root(&mut rng, 9, 5);
        let boot = PbjBootstrap::new(&root, 2, 11, 42).unwrap();
        let a: Vec<StatImage> = boot.iter().collect();
        let b: Vec<StatImage> = boot.iter().collect();
        assert_eq!(a, b);
        let mut block = vec![Vec::new(); 4];
        boot.sample_block(5, &mut block).unwrap();
        for (j, img) in block.iter().enumerate() {
            assert_eq!(img.as_slice(), a[5 + j].values());
        }
        let other = PbjBootstrap::new(&root, 2, 11, 43).unwrap();
        assert_ne!(other.image(0), a[0]);
    }

    #[test]
    fn identical_rows_give_identical_images() {
        let rows = DMatrix::from_row_slice(3, 3, &[1.0, 2.0, 3.0, 2.0, 4.0, 6.0, 1.0, 0.0, 0.0]);
        let root = SqrtCovRoot::from_rows(&rows).unwrap();
        let boot = PbjBootstrap::new(&root, 1, 20, 0).unwrap();
        for img in boot.iter() {
            assert_eq!(img.values()[0], img.values()[1]);
        }
    }
}
