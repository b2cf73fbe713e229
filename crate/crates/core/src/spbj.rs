//! Semiparametric bootstrap joint procedure for a scalar interest parameter:
//! HC3-adjusted residuals, the robust covariance root and the Wald image.

use nalgebra::DMatrix;
use rayon::prelude::*;

use crate::cluster::NullSampler;
use crate::error::{Error, Result};
use crate::model::{
    check_shapes, dot, first_error, Design, DesignSource, OutcomeStack, StatImage, WeightStack, WhitenedDesign,
    RANK_TOL,
};
use crate::pbj::{normal_draw, SqrtCovRoot};
use crate::rng::Domain;

/// Annihilator diagonal entries at or below this are treated as leverage one.
pub const LEVERAGE_EPS: f64 = 1e-10;

/// Output of the sandwich fit at every voxel.
#[derive(Debug, Clone, PartialEq)]
pub struct SandwichFit {
    pub beta: Vec<f64>,
    pub var_beta: Vec<f64>,
    pub root: SqrtCovRoot,
    /// Wald image β̂² / V̂ar(β̂) on the χ²₁ scale.
    pub stat: StatImage,
    /// `n × V` HC3-adjusted residuals Q(v).
    pub hc3_resid: DMatrix<f64>,
}

fn check_scales(s: &[f64], n: usize) -> Result<()> {
    if s.len() != n {
        return Err(Error::DimensionMismatch {
            what: "variance scales",
            expected: n,
            got: s.len(),
        });
    }
    WeightStack::per_subject(s.to_vec()).map(|_| ())
}

/// Diagonal of P = I − S^{-1/2} X (Xᵀ S⁻¹ X)⁻¹ Xᵀ S^{-1/2}, clamped to [0, 1].
pub fn annihilator_diag(x: &DMatrix<f64>, s: &[f64]) -> Result<Vec<f64>> {
    check_scales(s, x.nrows())?;
    let wd = WhitenedDesign::new(x, s)?;
    Ok(wd.hat_diag().into_iter().map(|h| (1.0 - h).clamp(0.0, 1.0)).collect())
}

/// Â_β = X₁ᵀ S^{-1/2} P^{X₀} S^{-1/2} X₁ for a single interest column.
pub fn abeta_hat(x0: &DMatrix<f64>, x1: &DMatrix<f64>, s: &[f64]) -> Result<f64> {
    if x1.ncols() != 1 {
        return Err(Error::ScalarInterestRequired { m1: x1.ncols() });
    }
    if x1.nrows() != x0.nrows() {
        return Err(Error::DimensionMismatch {
            what: "interest block rows",
            expected: x0.nrows(),
            got: x1.nrows(),
        });
    }
    check_scales(s, x0.nrows())?;
    let wd = WhitenedDesign::new(x0, s)?;
    let mut x1w = vec![0.0; x0.nrows()];
    wd.whiten(x1.as_slice(), &mut x1w);
    let mut r = vec![0.0; x1w.len()];
    wd.residual(&x1w, &wd.project(&x1w), &mut r);
    let a = dot(&r, &r);
    if a <= (RANK_TOL * RANK_TOL) * dot(&x1w, &x1w) {
        return Err(Error::Collinear);
    }
    Ok(a)
}

/// Writes Q_i = r_i / P_ii given whitened residuals and the hat diagonal.
fn hc3_adjust(v: usize, rw: &[f64], hat: &[f64], out: &mut [f64]) -> Result<()> {
    for (i, ((o, r), h)) in out.iter_mut().zip(rw).zip(hat).enumerate() {
        let p = 1.0 - h;
        if p <= LEVERAGE_EPS {
            return Err(Error::LeverageOne { voxel: v, subject: i });
        }
        *o = r / p;
    }
    Ok(())
}

/// Q_i(v) = S_i(v)^{-1/2}(Y_i(v) − X_i ζ̂(v)) / P^X_ii(v).
pub fn hc3_residuals(y: &OutcomeStack, x: &Design, s: &WeightStack) -> Result<DMatrix<f64>> {
    check_shapes(y, x, s)?;
    let n = x.n();
    let source = DesignSource::new(x, s)?;
    let mut q = DMatrix::zeros(n, y.n_voxels());
    let results: Vec<Result<()>> = q
        .as_mut_slice()
        .par_chunks_mut(n)
        .enumerate()
        .map(|(v, out)| {
            source.with(v, |wd| {
                let mut yw = vec![0.0; n];
                wd.whiten(y.voxel(v), &mut yw);
                let mut rw = vec![0.0; n];
                wd.residual(&yw, &wd.project(&yw), &mut rw);
                hc3_adjust(v, &rw, &wd.hat_diag(), out)
            })
        })
        .collect();
    first_error(results)?;
    Ok(q)
}

/// Per-voxel weighted fit, HC3 sandwich variance and Wald statistic for the
/// single interest coefficient.
pub fn spbj_fit(y: &OutcomeStack, x: &Design, s: &WeightStack) -> Result<SandwichFit> {
    if x.m1() != 1 {
        return Err(Error::ScalarInterestRequired { m1: x.m1() });
    }
    check_shapes(y, x, s)?;
    let (n, nv, m) = (x.n(), y.n_voxels(), x.m());
    let j = m - 1;
    let source = DesignSource::new(x, s)?;
    let mut beta = vec![0.0; nv];
    let mut var_beta = vec![0.0; nv];
    let mut stat = vec![0.0; nv];
    let mut hc3 = DMatrix::zeros(n, nv);
    let mut u = DMatrix::zeros(n, nv);

    let results: Vec<Result<()>> = hc3
        .as_mut_slice()
        .par_chunks_mut(n)
        .zip(u.as_mut_slice().par_chunks_mut(n))
        .zip(beta.par_iter_mut().zip(var_beta.par_iter_mut()).zip(stat.par_iter_mut()))
        .enumerate()
        .map(|(v, ((q, u), ((b, var), t)))| {
            source.with(v, |wd| {
                let mut yw = vec![0.0; n];
                wd.whiten(y.voxel(v), &mut yw);
                let qty = wd.project(&yw);
                let mut rw = vec![0.0; n];
                wd.residual(&yw, &qty, &mut rw);
                hc3_adjust(v, &rw, &wd.hat_diag(), q)?;
                // With columns [X0 | x1], P^{X0} S^{-1/2} x1 = r_jj q_j and Â = r_jj².
                let r11 = wd.r(j, j);
                let a = r11 * r11;
                for ((ui, qj), qi) in u.iter_mut().zip(wd.q_col(j)).zip(q.iter()) {
                    *ui = r11 * qj * qi;
                }
                let uu = dot(u, u);
                if uu == 0.0 {
                    return Err(Error::DegenerateVoxel { voxel: v });
                }
                *b = qty[j] / r11;
                *var = uu / (a * a);
                *t = *b * *b / *var;
                Ok(())
            })
        })
        .collect();
    first_error(results)?;
    Ok(SandwichFit {
        beta,
        var_beta,
        root: SqrtCovRoot::from_unnormalized_columns(u)?,
        stat: StatImage::from_parts(stat, 1),
        hc3_resid: hc3,
    })
}

/// Z = root · d, the signed normal image for draw `d`.
pub fn spbj_normal_sample(root: &SqrtCovRoot, draw: &[f64]) -> Result<Vec<f64>> {
    if draw.len() != root.n_subjects() {
        return Err(Error::DimensionMismatch {
            what: "bootstrap draw length",
            expected: root.n_subjects(),
            got: draw.len(),
        });
    }
    Ok(root.project(draw))
}

/// Z(v)² for Z = root · d, on the χ²₁ scale.
pub fn spbj_sample(root: &SqrtCovRoot, draw: &[f64]) -> Result<StatImage> {
    let z = spbj_normal_sample(root, draw)?;
    Ok(StatImage::from_parts(z.into_iter().map(|x| x * x).collect(), 1))
}

/// B squared normal images through a fixed root. Sample `b` depends only on
/// `(seed, b)`.
#[derive(Debug, Clone, Copy)]
pub struct SpbjBootstrap<'a> {
    root: &'a SqrtCovRoot,
    n_boot: usize,
    seed: u64,
}

impl<'a> SpbjBootstrap<'a> {
    pub fn new(root: &'a SqrtCovRoot, n_boot: usize, seed: u64) -> Result<Self> {
        if n_boot == 0 {
            return Err(Error::invalid("number of bootstrap samples must be at least 1"));
        }
        Ok(SpbjBootstrap { root, n_boot, seed })
    }

    pub fn n_boot(&self) -> usize {
        self.n_boot
    }

    /// The n standard normal draws of sample `b`.
    pub fn draw(&self, b: usize) -> Vec<f64> {
        let mut d = Vec::new();
        normal_draw(self.seed, Domain::SpbjDraw, b, &mut d, self.root.n_subjects());
        d
    }

    /// Signed image Z_b = root · d_b.
    pub fn normal_image(&self, b: usize) -> Vec<f64> {
        self.root.project(&self.draw(b))
    }

    pub fn image(&self, b: usize) -> StatImage {
        spbj_sample(self.root, &self.draw(b)).expect("draw length matches root")
    }

    pub fn iter(&self) -> impl Iterator<Item = StatImage> + '_ {
        (0..self.n_boot).map(move |b| self.image(b))
    }
}

impl NullSampler for SpbjBootstrap<'_> {
    fn num_samples(&self) -> usize {
        self.n_boot
    }

    fn num_voxels(&self) -> usize {
        self.root.n_voxels()
    }

    fn sample_block(&self, start: usize, out: &mut [Vec<f64>]) -> Result<()> {
        let draws: Vec<Vec<f64>> = (0..out.len()).map(|j| self.draw(start + j)).collect();
        self.root.project_squares(&draws, 1, out);
        Ok(())
    }
}
