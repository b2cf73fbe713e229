use nalgebra::DMatrix;
use rayon::prelude::*;

use super::{Design, FitResult, OutcomeStack, WeightStack};
use crate::error::{Error, Result};

/// Relative size below which a diagonal entry of R marks a dependent column.
pub(crate) const RANK_TOL: f64 = 1e-10;
/// Residual sums of squares below `RSS_TOL * ‖y_w‖²` count as exactly zero.
pub(crate) const RSS_TOL: f64 = 1e-20;

/// Thin QR factorisation of the whitened design S^{-1/2} X for one set of
/// subject scales. Column order is `[X0 | X1]`, so the leading `m0` columns of
/// `q` span the whitened nuisance block.
#[derive(Debug, Clone)]
pub(crate) struct WhitenedDesign {
    inv_sqrt_s: Vec<f64>,
    q: DMatrix<f64>,
    r: DMatrix<f64>,
}

impl WhitenedDesign {
    pub(crate) fn new(x: &DMatrix<f64>, scales: &[f64]) -> Result<Self> {
        let n = x.nrows();
        debug_assert_eq!(scales.len(), n);
        let inv_sqrt_s: Vec<f64> = scales.iter().map(|s| 1.0 / s.sqrt()).collect();
        let mut xw = x.clone();
        for mut col in xw.column_iter_mut() {
            for (v, w) in col.iter_mut().zip(&inv_sqrt_s) {
                *v *= w;
            }
        }
        let col_norms: Vec<f64> = xw.column_iter().map(|c| c.norm()).collect();
        let qr = xw.qr();
        let r = qr.r();
        for (j, norm) in col_norms.iter().enumerate() {
            if r[(j, j)].abs() <= RANK_TOL * norm.max(f64::MIN_POSITIVE) {
                return Err(Error::SingularDesign { column: j });
            }
        }
        Ok(WhitenedDesign {
            inv_sqrt_s,
            q: qr.q(),
            r,
        })
    }

    pub(crate) fn for_voxel(design: &Design, weights: &WeightStack, v: usize) -> Result<Self> {
        WhitenedDesign::new(design.full(), &weights.scales(design.n(), v))
    }

    pub(crate) fn n(&self) -> usize {
        self.q.nrows()
    }

    pub(crate) fn m(&self) -> usize {
        self.q.ncols()
    }

    pub(crate) fn inv_sqrt_s(&self) -> &[f64] {
        &self.inv_sqrt_s
    }

    pub(crate) fn q_col(&self, k: usize) -> &[f64] {
        let n = self.n();
        &self.q.as_slice()[k * n..(k + 1) * n]
    }

    pub(crate) fn r(&self, i: usize, j: usize) -> f64 {
        self.r[(i, j)]
    }

    pub(crate) fn whiten(&self, y: &[f64], out: &mut [f64]) {
        for ((o, y), w) in out.iter_mut().zip(y).zip(&self.inv_sqrt_s) {
            *o = y * w;
        }
    }

    /// Qᵀ y_w.
    pub(crate) fn project(&self, yw: &[f64]) -> Vec<f64> {
        (0..self.m()).map(|k| dot(self.q_col(k), yw)).collect()
    }

    /// y_w − Q Qᵀ y_w.
    pub(crate) fn residual(&self, yw: &[f64], qty: &[f64], out: &mut [f64]) {
        out.copy_from_slice(yw);
        for (k, &c) in qty.iter().enumerate() {
            for (o, q) in out.iter_mut().zip(self.q_col(k)) {
                *o -= c * q;
            }
        }
    }

    /// Solves R ζ = Qᵀ y_w.
    pub(crate) fn coef(&self, qty: &[f64], out: &mut [f64]) {
        let m = self.m();
        for i in (0..m).rev() {
            let mut acc = qty[i];
            for j in i + 1..m {
                acc -= self.r[(i, j)] * out[j];
            }
            out[i] = acc / self.r[(i, i)];
        }
    }

    /// Diagonal of the whitened hat matrix Q Qᵀ.
    pub(crate) fn hat_diag(&self) -> Vec<f64> {
        let n = self.n();
        let mut h = vec![0.0; n];
        for k in 0..self.m() {
            for (hi, q) in h.iter_mut().zip(self.q_col(k)) {
                *hi += q * q;
            }
        }
        h
    }
}

/// Dot product with a fixed accumulation order, so identical inputs give
/// bitwise identical results regardless of the caller's blocking.
#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = [0.0f64; 4];
    let chunks = a.len() / 4;
    for c in 0..chunks {
        let i = 4 * c;
        acc[0] += a[i] * b[i];
        acc[1] += a[i + 1] * b[i + 1];
        acc[2] += a[i + 2] * b[i + 2];
        acc[3] += a[i + 3] * b[i + 3];
    }
    let mut tail = 0.0;
    for i in 4 * chunks..a.len() {
        tail += a[i] * b[i];
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

pub(crate) fn check_rank(x: &DMatrix<f64>) -> Result<()> {
    WhitenedDesign::new(x, &vec![1.0; x.nrows()]).map(|_| ())
}

pub(crate) fn check_shapes(y: &OutcomeStack, x: &Design, s: &WeightStack) -> Result<()> {
    if x.n() != y.n_subjects() {
        return Err(Error::DimensionMismatch {
            what: "design rows vs outcome subjects",
            expected: y.n_subjects(),
            got: x.n(),
        });
    }
    s.validate(y.n_subjects(), y.n_voxels())
}

/// Returns the first error in voxel order, so failures do not depend on scheduling.
pub(crate) fn first_error(results: Vec<Result<()>>) -> Result<()> {
    results.into_iter().collect::<Result<Vec<()>>>().map(|_| ())
}

/// Provides the whitened design for each voxel, computing it once when the
/// weights are shared across voxels.
pub(crate) enum DesignSource<'a> {
    Shared(WhitenedDesign),
    PerVoxel(&'a Design, &'a WeightStack),
}

impl<'a> DesignSource<'a> {
    pub(crate) fn new(design: &'a Design, weights: &'a WeightStack) -> Result<Self> {
        if weights.is_shared() {
            Ok(DesignSource::Shared(WhitenedDesign::for_voxel(design, weights, 0)?))
        } else {
            Ok(DesignSource::PerVoxel(design, weights))
        }
    }

    pub(crate) fn with<T>(&self, v: usize, f: impl FnOnce(&WhitenedDesign) -> Result<T>) -> Result<T> {
        match self {
            DesignSource::Shared(wd) => f(wd),
            DesignSource::PerVoxel(design, weights) => f(&WhitenedDesign::for_voxel(design, weights, v)?),
        }
    }
}

/// Per-voxel weighted least squares with weights S⁻¹(v).
///
/// With `weighted_residuals` the residuals are S^{-1/2}(Y − Xζ̂); otherwise
/// they are the raw residuals Y − Xζ̂.
pub fn wls_fit(
    y: &OutcomeStack,
    x: &Design,
    s: &WeightStack,
    weighted_residuals: bool,
) -> Result<FitResult> {
    fit_impl(y, x, s, weighted_residuals, false).map(|(fit, _)| fit)
}

/// F statistics for H0: β(v) = 0 comparing `[X0 | X1]` against `X0`.
#[derive(Debug, Clone, PartialEq)]
pub struct FStatistic {
    pub values: Vec<f64>,
    pub df1: usize,
    pub df2: usize,
}

/// Weighted F statistic image, T(v) = [(RSS₀ − RSS)/m₁] / [RSS/(n − m)].
///
/// A voxel whose reduced-model RSS is already zero has nothing to test and
/// gets T = 0; a voxel with zero full-model RSS but a non-zero reduced RSS is
/// an error.
pub fn f_statistic(y: &OutcomeStack, x: &Design, s: &WeightStack) -> Result<FStatistic> {
    fit_impl(y, x, s, true, true).map(|(_, f)| f.expect("F requested"))
}

pub(crate) fn fit_with_f(
    y: &OutcomeStack,
    x: &Design,
    s: &WeightStack,
    weighted_residuals: bool,
) -> Result<(FitResult, FStatistic)> {
    fit_impl(y, x, s, weighted_residuals, true).map(|(fit, f)| (fit, f.expect("F requested")))
}

fn fit_impl(
    y: &OutcomeStack,
    x: &Design,
    s: &WeightStack,
    weighted_residuals: bool,
    want_f: bool,
) -> Result<(FitResult, Option<FStatistic>)> {
    check_shapes(y, x, s)?;
    let (n, nv, m, m0) = (x.n(), y.n_voxels(), x.m(), x.m0());
    let source = DesignSource::new(x, s)?;
    let mut coef = DMatrix::zeros(m, nv);
    let mut resid = DMatrix::zeros(n, nv);
    let mut fvals = vec![0.0; nv];
    let df2 = x.df_resid();

    let results: Vec<Result<()>> = coef
        .as_mut_slice()
        .par_chunks_mut(m)
        .zip(resid.as_mut_slice().par_chunks_mut(n))
        .zip(fvals.par_iter_mut())
        .enumerate()
        .map(|(v, ((c, r), f))| {
            source.with(v, |wd| {
                let mut yw = vec![0.0; n];
                wd.whiten(y.voxel(v), &mut yw);
                let qty = wd.project(&yw);
                wd.coef(&qty, c);
                wd.residual(&yw, &qty, r);
                if want_f {
                    let yy = dot(&yw, &yw);
                    let rss = dot(r, r);
                    let num: f64 = qty[m0..].iter().map(|q| q * q).sum();
                    *f = if rss <= RSS_TOL * yy {
                        if num <= RSS_TOL * yy {
                            0.0
                        } else {
                            return Err(Error::DegenerateVoxel { voxel: v });
                        }
                    } else {
                        (num / (m - m0) as f64) / (rss / df2 as f64)
                    };
                }
                if !weighted_residuals {
                    for (ri, w) in r.iter_mut().zip(wd.inv_sqrt_s()) {
                        *ri /= w;
                    }
                }
                Ok(())
            })
        })
        .collect();
    first_error(results)?;

    let fit = FitResult {
        coef,
        resid,
        df_resid: df2,
        weighted: weighted_residuals,
    };
    let f = want_f.then(|| FStatistic {
        values: fvals,
        df1: m - m0,
        df2,
    });
    Ok((fit, f))
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::DVector;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    fn random_design(rng: &mut ChaCha8Rng, n: usize, m0: usize, m1: usize) -> Design {
        let nuis = DMatrix::from_fn(n, m0 - 1, |_, _| rng.sample(StandardNormal));
        let int = DMatrix::from_fn(n, m1, |_, _| rng.sample(StandardNormal));
        Design::with_intercept(&nuis, &int).unwrap()
    }

    fn intercept_only(n: usize) -> Design {
        // Rank check requires an interest column, so use a centred ramp.
        let x1 = DMatrix::from_fn(n, 1, |i, _| i as f64 - (n as f64 - 1.0) / 2.0);
        Design::with_intercept(&DMatrix::zeros(n, 0), &x1).unwrap()
    }

    #[test]
    fn sample_mean_and_weighted_mean() {
        // Intercept-only fits through the whitened-design helper directly.
        let x = DMatrix::from_element(4, 1, 1.0);
        let wd = WhitenedDesign::new(&x, &[1.0; 4]).unwrap();
        let y = [1.0, 2.0, 3.0, 4.0];
        let mut yw = [0.0; 4];
        wd.whiten(&y, &mut yw);
        let qty = wd.project(&yw);
        let mut c = [0.0];
        wd.coef(&qty, &mut c);
        assert!((c[0] - 2.5).abs() < 1e-14);
        let mut r = [0.0; 4];
        wd.residual(&yw, &qty, &mut r);
        for (a, b) in r.iter().zip([-1.5, -0.5, 0.5, 1.5]) {
            assert!((a - b).abs() < 1e-14);
        }

        let x = DMatrix::from_element(2, 1, 1.0);
        let wd = WhitenedDesign::new(&x, &[1.0 / 3.0, 1.0]).unwrap();
        let mut yw = [0.0; 2];
        wd.whiten(&[0.0, 2.0], &mut yw);
        let qty = wd.project(&yw);
        wd.coef(&qty, &mut c);
        assert!((c[0] - 0.5).abs() < 1e-14);
    }

    #[test]
    fn coefficients_match_normal_equations_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let (n, nv) = (10, 6);
        let design = random_design(&mut rng, n, 2, 1);
        let y = OutcomeStack::new(DMatrix::from_fn(n, nv, |_, _| rng.sample(StandardNormal))).unwrap();
        let s = WeightStack::voxelwise(DMatrix::from_fn(n, nv, |_, _| rng.random_range(0.2..3.0))).unwrap();
        let fit = wls_fit(&y, &design, &s, false).unwrap();
        let x = design.full();
        for v in 0..nv {
            let w = DMatrix::from_diagonal(&DVector::from_iterator(n, s.scales(n, v).iter().map(|s| 1.0 / s)));
            let xtwx = x.transpose() * &w * x;
            let yv = DVector::from_column_slice(y.voxel(v));
            let oracle = xtwx.try_inverse().unwrap() * x.transpose() * &w * &yv;
            for k in 0..design.m() {
                let rel = (fit.coef[(k, v)] - oracle[k]).abs() / oracle[k].abs().max(1e-300);
                assert!(rel < 1e-10, "voxel {v} coef {k}: rel err {rel}");
            }
            // Normal equations: Xᵀ S⁻¹ r = 0.
            let r = DVector::from_column_slice(fit.resid.column(v).as_slice());
            let ne = x.transpose() * &w * r;
            assert!(ne.amax() < 1e-8 * yv.norm());
        }
    }

    #[test]
    fn weighted_residuals_are_scaled() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let (n, nv) = (9, 3);
        let design = random_design(&mut rng, n, 2, 1);
        let y = OutcomeStack::new(DMatrix::from_fn(n, nv, |_, _| rng.sample(StandardNormal))).unwrap();
        let sv: Vec<f64> = (0..n).map(|_| rng.random_range(0.5..2.0)).collect();
        let s = WeightStack::per_subject(sv.clone()).unwrap();
        let raw = wls_fit(&y, &design, &s, false).unwrap();
        let wtd = wls_fit(&y, &design, &s, true).unwrap();
        for v in 0..nv {
            for i in 0..n {
                let expect = raw.resid[(i, v)] / sv[i].sqrt();
                assert!((wtd.resid[(i, v)] - expect).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn f_statistic_matches_two_fit_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let (n, nv) = (20, 8);
        let design = random_design(&mut rng, n, 2, 1);
        let y = OutcomeStack::new(DMatrix::from_fn(n, nv, |_, _| rng.sample(StandardNormal))).unwrap();
        let f = f_statistic(&y, &design, &WeightStack::Uniform).unwrap();
        assert_eq!((f.df1, f.df2), (1, 17));
        let rss = |x: &DMatrix<f64>, yv: &DVector<f64>| {
            let beta = (x.transpose() * x).try_inverse().unwrap() * x.transpose() * yv;
            (yv - x * beta).norm_squared()
        };
        for v in 0..nv {
            let yv = DVector::from_column_slice(y.voxel(v));
            let full = rss(design.full(), &yv);
            let red = rss(&design.x0(), &yv);
            let oracle = ((red - full) / 1.0) / (full / 17.0);
            assert!((f.values[v] - oracle).abs() / oracle < 1e-10);
        }
    }

    #[test]
    fn f_statistic_zero_and_degenerate_cases() {
        let n = 6;
        let design = intercept_only(n);
        // Y = X0 α exactly: nothing to test.
        let y = OutcomeStack::new(DMatrix::from_element(n, 1, 3.0)).unwrap();
        let f = f_statistic(&y, &design, &WeightStack::Uniform).unwrap();
        assert_eq!(f.values, vec![0.0]);
        // Y = X1 exactly: zero full-model residual, non-zero reduced RSS.
        let y = OutcomeStack::new(design.x1()).unwrap();
        match f_statistic(&y, &design, &WeightStack::Uniform) {
            Err(Error::DegenerateVoxel { voxel: 0 }) => {}
            other => panic!("expected degenerate voxel, got {other:?}"),
        }
    }

    #[test]
    fn singular_design_and_bad_weights() {
        let n = 6;
        let x1 = DMatrix::from_fn(n, 2, |i, _| i as f64);
        assert!(matches!(
            Design::with_intercept(&DMatrix::zeros(n, 0), &x1),
            Err(Error::SingularDesign { column: 2 })
        ));
        assert!(matches!(
            WeightStack::per_subject(vec![1.0, 0.0, 1.0]),
            Err(Error::InvalidWeights { subject: 1, .. })
        ));
        let design = intercept_only(n);
        let y = OutcomeStack::new(DMatrix::from_element(n, 2, 1.0)).unwrap();
        let s = WeightStack::Voxelwise(DMatrix::from_fn(n, 2, |i, v| if i == 2 && v == 1 { -1.0 } else { 1.0 }));
        assert!(matches!(
            wls_fit(&y, &design, &s, true),
            Err(Error::InvalidWeights { subject: 2, voxel: 1, .. })
        ));
    }

    #[test]
    fn dot_is_exact_on_small_integers() {
        let a: Vec<f64> = (0..11).map(|i| i as f64).collect();
        assert_eq!(dot(&a, &a), (0..11).map(|i| (i * i) as f64).sum::<f64>());
    }
}
