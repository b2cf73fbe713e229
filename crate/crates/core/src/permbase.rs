//! Freedman–Lane permutation baseline for spatial extent inference under
//! exchangeable errors.
//!
//! For permutation π the surrogate outcome is Y* = X₀α̂ + π(R₀), where R₀ are
//! the reduced-model residuals. Because X₀α̂ lies in the span of both models,
//! the F statistic of Y* depends only on π(R₀), and with an orthonormal basis
//! Q = [Q₀ | Q₁] of the full design
//!
//! RSS₀ = ‖R₀‖² − Σ_{k<m₀} (q_k · πR₀)²,  RSS₀ − RSS = Σ_{k≥m₀} (q_k · πR₀)².
//!
//! Each permuted image therefore costs m dot products per voxel.

use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rayon::prelude::*;

use crate::cluster::{null_max_distribution, Connectivity, MaxSizeDistribution, NullSampler};
use crate::error::{Error, Result};
use crate::model::{chisq_to_f, dot, f_to_chisq, Design, Mask, OutcomeStack, StatImage, WhitenedDesign, RSS_TOL};
use crate::rng::{stream, Domain};

/// How permutation `b` is generated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum PermutationScheme {
    /// Uniform random permutations from the counter-based stream.
    #[default]
    Random,
    /// Every permutation is the identity; a diagnostic that reproduces the
    /// observed statistic B times.
    Identity,
}

/// Freedman–Lane null sampler producing F-scale images.
#[derive(Debug, Clone)]
pub struct FreedmanLane {
    basis: DMatrix<f64>,
    m0: usize,
    r0: DMatrix<f64>,
    r0_sq: Vec<f64>,
    y_sq: Vec<f64>,
    n_perm: usize,
    seed: u64,
    scheme: PermutationScheme,
}

impl FreedmanLane {
    pub fn new(y: &OutcomeStack, x: &Design, n_perm: usize, seed: u64) -> Result<Self> {
        if n_perm == 0 {
            return Err(Error::invalid("number of permutations must be at least 1"));
        }
        if x.n() != y.n_subjects() {
            return Err(Error::DimensionMismatch {
                what: "design rows vs outcome subjects",
                expected: y.n_subjects(),
                got: x.n(),
            });
        }
        let n = x.n();
        let wd = WhitenedDesign::new(x.full(), &vec![1.0; n])?;
        let mut basis = DMatrix::zeros(n, x.m());
        for k in 0..x.m() {
            basis.column_mut(k).copy_from_slice(wd.q_col(k));
        }
        let nv = y.n_voxels();
        let mut r0 = DMatrix::zeros(n, nv);
        let mut r0_sq = vec![0.0; nv];
        let mut y_sq = vec![0.0; nv];
        r0.as_mut_slice()
            .par_chunks_mut(n)
            .zip(r0_sq.par_iter_mut().zip(y_sq.par_iter_mut()))
            .enumerate()
            .for_each(|(v, (r, (rr, yy)))| {
                let yv = y.voxel(v);
                r.copy_from_slice(yv);
                for k in 0..x.m0() {
                    let q = wd.q_col(k);
                    let c = dot(q, yv);
                    for (ri, qi) in r.iter_mut().zip(q) {
                        *ri -= c * qi;
                    }
                }
                *rr = dot(r, r);
                *yy = dot(yv, yv);
            });
        Ok(FreedmanLane {
            basis,
            m0: x.m0(),
            r0,
            r0_sq,
            y_sq,
            n_perm,
            seed,
            scheme: PermutationScheme::Random,
        })
    }

    pub fn with_scheme(mut self, scheme: PermutationScheme) -> Self {
        self.scheme = scheme;
        self
    }

    pub fn n_subjects(&self) -> usize {
        self.basis.nrows()
    }

    pub fn df1(&self) -> usize {
        self.basis.ncols() - self.m0
    }

    pub fn df2(&self) -> usize {
        self.n_subjects() - self.basis.ncols()
    }

    /// Permutation `b` as the map i ↦ π(i): subject i receives residual π(i).
    pub fn permutation(&self, b: usize) -> Vec<usize> {
        let mut p: Vec<usize> = (0..self.n_subjects()).collect();
        if self.scheme == PermutationScheme::Random {
            p.shuffle(&mut stream(self.seed, Domain::Permutation, b as u64));
        }
        p
    }

    /// Basis columns rearranged so that p_k · r = q_k · π(r).
    fn permuted_basis(&self, perm: &[usize]) -> Vec<f64> {
        let n = self.n_subjects();
        let mut out = vec![0.0; self.basis.len()];
        for k in 0..self.basis.ncols() {
            let q = &self.basis.as_slice()[k * n..(k + 1) * n];
            let o = &mut out[k * n..(k + 1) * n];
            for (i, &pi) in perm.iter().enumerate() {
                o[pi] = q[i];
            }
        }
        out
    }

    fn f_value(&self, v: usize, pb: &[f64]) -> Result<f64> {
        let n = self.n_subjects();
        let m = self.basis.ncols();
        let r = &self.r0.as_slice()[v * n..(v + 1) * n];
        let mut rss0 = self.r0_sq[v];
        let mut num = 0.0;
        for k in 0..m {
            let c = dot(&pb[k * n..(k + 1) * n], r);
            if k < self.m0 {
                rss0 -= c * c;
            } else {
                num += c * c;
            }
        }
        let rss = rss0 - num;
        let tol = RSS_TOL * self.y_sq[v];
        if rss <= tol {
            return if num <= tol { Ok(0.0) } else { Err(Error::DegenerateVoxel { voxel: v }) };
        }
        Ok(((num / self.df1() as f64) / (rss / self.df2() as f64)).max(0.0))
    }

    /// F image of permutation `b`.
    pub fn f_image(&self, b: usize) -> Result<Vec<f64>> {
        let pb = self.permuted_basis(&self.permutation(b));
        (0..self.r0.ncols()).map(|v| self.f_value(v, &pb)).collect()
    }

    /// χ² image of permutation `b`.
    pub fn image(&self, b: usize) -> Result<StatImage> {
        f_to_chisq(&self.f_image(b)?, self.df1(), self.df2())
    }
}

impl NullSampler for FreedmanLane {
    fn num_samples(&self) -> usize {
        self.n_perm
    }

    fn num_voxels(&self) -> usize {
        self.r0.ncols()
    }

    fn image_threshold(&self, z0: f64) -> Result<f64> {
        chisq_to_f(z0, self.df1(), self.df2())
    }

    fn sample_block(&self, start: usize, out: &mut [Vec<f64>]) -> Result<()> {
        let bases: Vec<Vec<f64>> = (0..out.len())
            .map(|j| self.permuted_basis(&self.permutation(start + j)))
            .collect();
        let nv = self.r0.ncols();
        for o in out.iter_mut() {
            o.resize(nv, 0.0);
        }
        for v in 0..nv {
            for (pb, o) in bases.iter().zip(out.iter_mut()) {
                o[v] = self.f_value(v, pb)?;
            }
        }
        Ok(())
    }
}

/// Max-cluster-size distributions from B Freedman–Lane permutations,
/// thresholding the χ² transform of each permuted F image at every z₀.
pub fn freedman_lane_max_distribution(
    y: &OutcomeStack,
    x: &Design,
    z0_list: &[f64],
    connectivity: Connectivity,
    mask: &Mask,
    n_perm: usize,
    seed: u64,
) -> Result<Vec<MaxSizeDistribution>> {
    let sampler = FreedmanLane::new(y, x, n_perm, seed)?;
    null_max_distribution(&sampler, z0_list, connectivity, mask)
}
