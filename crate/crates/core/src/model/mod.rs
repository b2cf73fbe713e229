//! Regression data model and the per-voxel weighted least-squares machinery.
//!
//! Outcomes and weights are stored as `n × V` column-major matrices so that
//! the data for one voxel occupy one contiguous column.

mod dist;
mod mask;
mod wls;

use std::borrow::Cow;

use nalgebra::DMatrix;

use crate::error::{Error, Result};

pub use dist::{chisq_cft, chisq_sf, chisq_to_f, f_sf, f_to_chisq, f_to_chisq_value};
pub use mask::Mask;
pub(crate) use wls::{check_shapes, dot, first_error, fit_with_f, DesignSource, WhitenedDesign, RANK_TOL, RSS_TOL};
pub use wls::{f_statistic, wls_fit, FStatistic};

/// Outcome images Y_i(v) for n subjects restricted to the V in-mask voxels.
#[derive(Debug, Clone, PartialEq)]
pub struct OutcomeStack {
    data: DMatrix<f64>,
}

impl OutcomeStack {
    /// `data` is `n × V`: row i is subject i, column v is voxel v.
    pub fn new(data: DMatrix<f64>) -> Result<Self> {
        if data.nrows() == 0 || data.ncols() == 0 {
            return Err(Error::invalid("outcome stack must have at least one subject and voxel"));
        }
        if let Some(pos) = data.iter().position(|x| !x.is_finite()) {
            let (n, _) = data.shape();
            return Err(Error::invalid(format!(
                "non-finite outcome for subject {} at voxel {}",
                pos % n,
                pos / n
            )));
        }
        Ok(OutcomeStack { data })
    }

    pub fn n_subjects(&self) -> usize {
        self.data.nrows()
    }

    pub fn n_voxels(&self) -> usize {
        self.data.ncols()
    }

    pub fn data(&self) -> &DMatrix<f64> {
        &self.data
    }

    pub fn into_data(self) -> DMatrix<f64> {
        self.data
    }

    /// Subject values at voxel `v`.
    pub fn voxel(&self, v: usize) -> &[f64] {
        let n = self.n_subjects();
        &self.data.as_slice()[v * n..(v + 1) * n]
    }
}

/// Design matrix split into a nuisance block `X0` (whose first column is the
/// intercept) and an interest block `X1`.
#[derive(Debug, Clone, PartialEq)]
pub struct Design {
    full: DMatrix<f64>,
    m0: usize,
}

impl Design {
    pub fn new(x0: DMatrix<f64>, x1: DMatrix<f64>) -> Result<Self> {
        let n = x0.nrows();
        if x1.nrows() != n {
            return Err(Error::DimensionMismatch {
                what: "interest block rows",
                expected: n,
                got: x1.nrows(),
            });
        }
        if x0.ncols() == 0 || x0.column(0).iter().any(|&v| v != 1.0) {
            return Err(Error::invalid("first nuisance column must be the constant intercept"));
        }
        if x1.ncols() == 0 {
            return Err(Error::invalid("design needs at least one interest column"));
        }
        if x0.iter().chain(x1.iter()).any(|v| !v.is_finite()) {
            return Err(Error::invalid("design contains non-finite values"));
        }
        let m0 = x0.ncols();
        let m = m0 + x1.ncols();
        if n <= m {
            return Err(Error::invalid(format!(
                "need more subjects than design columns (n = {n}, m = {m})"
            )));
        }
        let mut full = DMatrix::zeros(n, m);
        full.columns_mut(0, m0).copy_from(&x0);
        full.columns_mut(m0, m - m0).copy_from(&x1);
        wls::check_rank(&full)?;
        Ok(Design { full, m0 })
    }

    /// Builds `X0 = [1 | nuisance]` and `X1 = interest`.
    pub fn with_intercept(nuisance: &DMatrix<f64>, interest: &DMatrix<f64>) -> Result<Self> {
        let n = interest.nrows();
        if nuisance.nrows() != n && nuisance.ncols() > 0 {
            return Err(Error::DimensionMismatch {
                what: "nuisance rows",
                expected: n,
                got: nuisance.nrows(),
            });
        }
        let mut x0 = DMatrix::from_element(n, 1 + nuisance.ncols(), 1.0);
        if nuisance.ncols() > 0 {
            x0.columns_mut(1, nuisance.ncols()).copy_from(nuisance);
        }
        Design::new(x0, interest.clone())
    }

    pub fn n(&self) -> usize {
        self.full.nrows()
    }

    pub fn m0(&self) -> usize {
        self.m0
    }

    pub fn m1(&self) -> usize {
        self.full.ncols() - self.m0
    }

    pub fn m(&self) -> usize {
        self.full.ncols()
    }

    /// `[X0 | X1]`.
    pub fn full(&self) -> &DMatrix<f64> {
        &self.full
    }

    pub fn x0(&self) -> DMatrix<f64> {
        self.full.columns(0, self.m0).into_owned()
    }

    pub fn x1(&self) -> DMatrix<f64> {
        self.full.columns(self.m0, self.m1()).into_owned()
    }

    /// Residual degrees of freedom, n − m.
    pub fn df_resid(&self) -> usize {
        self.n() - self.m()
    }
}

/// Variance scales S_i(v); the fitting weights are S_i(v)⁻¹.
#[derive(Debug, Clone, PartialEq, Default)]
pub enum WeightStack {
    #[default]
    Uniform,
    PerSubject(Vec<f64>),
    /// `n × V` matrix of voxelwise scales.
    Voxelwise(DMatrix<f64>),
}

impl WeightStack {
    pub fn per_subject(values: Vec<f64>) -> Result<Self> {
        check_positive(&values, |i| (i, 0))?;
        Ok(WeightStack::PerSubject(values))
    }

    pub fn voxelwise(values: DMatrix<f64>) -> Result<Self> {
        let n = values.nrows();
        check_positive(values.as_slice(), |p| (p % n, p / n))?;
        Ok(WeightStack::Voxelwise(values))
    }

    /// True when every voxel shares the same subject weights.
    pub fn is_shared(&self) -> bool {
        !matches!(self, WeightStack::Voxelwise(_))
    }

    pub fn is_uniform(&self) -> bool {
        matches!(self, WeightStack::Uniform)
    }

    /// Checks shapes against an `n × V` outcome stack and positivity of every scale.
    pub fn validate(&self, n: usize, v: usize) -> Result<()> {
        match self {
            WeightStack::Uniform => Ok(()),
            WeightStack::PerSubject(s) => {
                if s.len() != n {
                    return Err(Error::DimensionMismatch {
                        what: "per-subject weights",
                        expected: n,
                        got: s.len(),
                    });
                }
                check_positive(s, |i| (i, 0))
            }
            WeightStack::Voxelwise(s) => {
                if s.nrows() != n || s.ncols() != v {
                    return Err(Error::DimensionMismatch {
                        what: "voxelwise weight columns",
                        expected: v,
                        got: s.ncols(),
                    });
                }
                check_positive(s.as_slice(), |p| (p % n, p / n))
            }
        }
    }

    /// S_i(v) for all subjects at voxel `v`.
    pub fn scales(&self, n: usize, v: usize) -> Cow<'_, [f64]> {
        match self {
            WeightStack::Uniform => Cow::Owned(vec![1.0; n]),
            WeightStack::PerSubject(s) => Cow::Borrowed(s),
            WeightStack::Voxelwise(s) => Cow::Borrowed(&s.as_slice()[v * n..(v + 1) * n]),
        }
    }

    /// Multiplies the scales by `factor`, keeping the same kind.
    pub fn scaled(&self, n: usize, factor: f64) -> WeightStack {
        match self {
            WeightStack::Uniform => WeightStack::PerSubject(vec![factor; n]),
            WeightStack::PerSubject(s) => WeightStack::PerSubject(s.iter().map(|x| x * factor).collect()),
            WeightStack::Voxelwise(s) => WeightStack::Voxelwise(s * factor),
        }
    }
}

fn check_positive(values: &[f64], locate: impl Fn(usize) -> (usize, usize)) -> Result<()> {
    match values.iter().position(|&x| !(x.is_finite() && x > 0.0)) {
        None => Ok(()),
        Some(p) => {
            let (subject, voxel) = locate(p);
            Err(Error::InvalidWeights {
                subject,
                voxel,
                value: values[p],
            })
        }
    }
}

/// A V-vector of χ²-scale statistics with `df` degrees of freedom.
#[derive(Debug, Clone, PartialEq)]
pub struct StatImage {
    values: Vec<f64>,
    df: usize,
}

impl StatImage {
    pub fn new(values: Vec<f64>, df: usize) -> Result<Self> {
        if df == 0 {
            return Err(Error::invalid("statistic image needs df >= 1"));
        }
        if let Some(v) = values.iter().position(|x| !(x.is_finite() && *x >= 0.0)) {
            return Err(Error::invalid(format!(
                "statistic at voxel {v} is {} (must be finite and non-negative)",
                values[v]
            )));
        }
        Ok(StatImage { values, df })
    }

    /// Skips validation; callers guarantee finite, non-negative values.
    pub(crate) fn from_parts(values: Vec<f64>, df: usize) -> Self {
        debug_assert!(values.iter().all(|x| x.is_finite() && *x >= 0.0));
        StatImage { values, df }
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn df(&self) -> usize {
        self.df
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

/// Per-voxel coefficients and residuals of a (weighted) least-squares fit.
#[derive(Debug, Clone, PartialEq)]
pub struct FitResult {
    /// `m × V` coefficients ζ̂(v).
    pub coef: DMatrix<f64>,
    /// `n × V` residuals, scaled by S^{-1/2} when `weighted` is set.
    pub resid: DMatrix<f64>,
    pub df_resid: usize,
    pub weighted: bool,
}
