//! Independent oracles shared by the integration tests. None of these call
//! into the crate's numerical code: CDFs are integrated numerically, linear
//! algebra goes through explicit dense inverses, labeling uses flood fill.

#![allow(dead_code)]

pub mod fixture;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn normal_matrix(r: &mut ChaCha8Rng, rows: usize, cols: usize) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |_, _| r.sample(StandardNormal))
}

pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs().max(1e-300)
}

// ---------------------------------------------------------------- quadrature

/// Gauss–Legendre nodes and weights on [-1, 1] by Newton iteration.
fn gauss_legendre(n: usize) -> Vec<(f64, f64)> {
    let mut out = Vec::with_capacity(n);
    for i in 0..n {
        let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (mut p0, mut p1) = (1.0, x);
            for k in 2..=n {
                let p2 = ((2 * k - 1) as f64 * x * p1 - (k - 1) as f64 * p0) / k as f64;
                p0 = p1;
                p1 = p2;
            }
            dp = n as f64 * (x * p1 - p0) / (x * x - 1.0);
            let dx = p1 / dp;
            x -= dx;
            if dx.abs() < 1e-16 {
                break;
            }
        }
        out.push((x, 2.0 / ((1.0 - x * x) * dp * dp)));
    }
    out
}

/// Composite 16-point Gauss–Legendre over `panels` equal panels of [a, b].
pub fn integrate(f: impl Fn(f64) -> f64, a: f64, b: f64, panels: usize) -> f64 {
    let nodes = gauss_legendre(16);
    let h = (b - a) / panels as f64;
    let mut total = 0.0;
    for p in 0..panels {
        let mid = a + (p as f64 + 0.5) * h;
        let mut acc = 0.0;
        for &(x, w) in &nodes {
            acc += w * f(mid + 0.5 * h * x);
        }
        total += 0.5 * h * acc;
    }
    total
}

/// ln Γ(x) for x > 0 by upward recursion and the Stirling series.
pub fn ln_gamma(mut x: f64) -> f64 {
    let mut shift = 0.0;
    while x < 15.0 {
        shift -= x.ln();
        x += 1.0;
    }
    let x2 = x * x;
    let series = 1.0 / (12.0 * x) - 1.0 / (360.0 * x * x2) + 1.0 / (1260.0 * x * x2 * x2) - 1.0 / (1680.0 * x * x2 * x2 * x2);
    shift + (x - 0.5) * x.ln() - x + 0.5 * (2.0 * std::f64::consts::PI).ln() + series
}

/// P(χ²_k ≤ z), integrating the density after the substitution x = s².
pub fn chisq_cdf(z: f64, k: usize) -> f64 {
    if z <= 0.0 {
        return 0.0;
    }
    let k = k as f64;
    let ln_c = -(k / 2.0) * 2f64.ln() - ln_gamma(k / 2.0);
    let f = |s: f64| {
        if s == 0.0 {
            return if k == 1.0 { 2.0 * ln_c.exp() } else { 0.0 };
        }
        2.0 * (ln_c + (k - 1.0) * s.ln() - s * s / 2.0).exp()
    };
    integrate(f, 0.0, z.sqrt(), 400)
}

/// P(F_{d1,d2} ≤ t), integrating the density after t = s².
pub fn f_cdf(t: f64, d1: usize, d2: usize) -> f64 {
    if t <= 0.0 {
        return 0.0;
    }
    let (a, b) = (d1 as f64, d2 as f64);
    let ln_c = ln_gamma((a + b) / 2.0) - ln_gamma(a / 2.0) - ln_gamma(b / 2.0) + (a / 2.0) * (a / b).ln();
    let f = |s: f64| {
        let ln_tail = -((a + b) / 2.0) * (a * s * s / b).ln_1p();
        if s == 0.0 {
            return if d1 == 1 { 2.0 * ln_c.exp() } else { 0.0 };
        }
        2.0 * (ln_c + (a - 1.0) * s.ln() + ln_tail).exp()
    };
    integrate(f, 0.0, t.sqrt(), 400)
}

/// Upper-tail χ² quantile by bisection on [`chisq_cdf`].
pub fn chisq_upper_quantile(p: f64, k: usize) -> f64 {
    let (mut lo, mut hi) = (0.0, 200.0);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if 1.0 - chisq_cdf(mid, k) > p {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

// ------------------------------------------------------------ dense algebra

/// diag(s)^{-1/2} as a dense matrix.
pub fn inv_sqrt_diag(s: &[f64]) -> DMatrix<f64> {
    DMatrix::from_diagonal(&DVector::from_iterator(s.len(), s.iter().map(|x| 1.0 / x.sqrt())))
}

/// (XᵀS⁻¹X)⁻¹XᵀS⁻¹y by explicit inverse.
pub fn wls_coef(x: &DMatrix<f64>, s: &[f64], y: &[f64]) -> DVector<f64> {
    let w = DMatrix::from_diagonal(&DVector::from_iterator(s.len(), s.iter().map(|v| 1.0 / v)));
    let xtw = x.transpose() * &w;
    let inv = (&xtw * x).try_inverse().expect("invertible");
    inv * xtw * DVector::from_column_slice(y)
}

/// P = I − S^{-1/2}X(XᵀS⁻¹X)⁻¹XᵀS^{-1/2}.
pub fn annihilator(x: &DMatrix<f64>, s: &[f64]) -> DMatrix<f64> {
    let n = x.nrows();
    let xw = inv_sqrt_diag(s) * x;
    let inv = (xw.transpose() * &xw).try_inverse().expect("invertible");
    DMatrix::identity(n, n) - &xw * inv * xw.transpose()
}

/// Sum of squared weighted residuals of the WLS fit of y on x.
pub fn weighted_rss(x: &DMatrix<f64>, s: &[f64], y: &[f64]) -> f64 {
    let yw = inv_sqrt_diag(s) * DVector::from_column_slice(y);
    let r = annihilator(x, s) * yw;
    r.norm_squared()
}

/// Brute-force HC3 sandwich variance of the interest coefficient:
/// Â⁻¹ X₁ᵀS^{-1/2}P⁰ Q Q P⁰S^{-1/2}X₁ Â⁻¹ with Q = diag(P^X_ii⁻¹ S^{-1/2} r).
pub fn sandwich_variance(x0: &DMatrix<f64>, x1: &DMatrix<f64>, s: &[f64], y: &[f64]) -> f64 {
    let n = x0.nrows();
    let x = DMatrix::from_fn(n, x0.ncols() + 1, |i, j| if j < x0.ncols() { x0[(i, j)] } else { x1[(i, 0)] });
    let zeta = wls_coef(&x, s, y);
    let sm = inv_sqrt_diag(s);
    let resid = &sm * (DVector::from_column_slice(y) - &x * zeta);
    let px = annihilator(&x, s);
    let q = DMatrix::from_diagonal(&DVector::from_fn(n, |i, _| resid[i] / px[(i, i)]));
    let p0 = annihilator(x0, s);
    let left = x1.transpose() * &sm * &p0;
    let a = (&left * &sm * x1)[(0, 0)];
    let omega = (&left * &q * &q * left.transpose())[(0, 0)];
    omega / (a * a)
}

// ------------------------------------------------------------ flood fill

/// Sizes of the connected components of `on` (first axis fastest) under the
/// neighbourhood with squared offset length ≤ `max_sq` (1, 2 or 3).
pub fn flood_fill_sizes(on: &[bool], dims: [usize; 3], max_sq: i64) -> Vec<usize> {
    let mut offsets = Vec::new();
    for dz in -1i64..=1 {
        for dy in -1i64..=1 {
            for dx in -1i64..=1 {
                let d = dx * dx + dy * dy + dz * dz;
                if d > 0 && d <= max_sq {
                    offsets.push([dx, dy, dz]);
                }
            }
        }
    }
    let idx = |p: [i64; 3]| p[0] as usize + dims[0] * (p[1] as usize + dims[1] * p[2] as usize);
    let mut seen = vec![false; on.len()];
    let mut sizes = Vec::new();
    for start in 0..on.len() {
        if !on[start] || seen[start] {
            continue;
        }
        seen[start] = true;
        let mut stack = vec![start];
        let mut size = 0;
        while let Some(v) = stack.pop() {
            size += 1;
            let p = [
                (v % dims[0]) as i64,
                ((v / dims[0]) % dims[1]) as i64,
                (v / (dims[0] * dims[1])) as i64,
            ];
            for o in &offsets {
                let q = [p[0] + o[0], p[1] + o[1], p[2] + o[2]];
                if q.iter().zip(dims).any(|(&c, d)| c < 0 || c >= d as i64) {
                    continue;
                }
                let w = idx(q);
                if on[w] && !seen[w] {
                    seen[w] = true;
                    stack.push(w);
                }
            }
        }
        sizes.push(size);
    }
    sizes.sort_unstable_by(|a, b| b.cmp(a));
    sizes
}

/// Sample mean and unbiased variance.
pub fn mean_var(x: &[f64]) -> (f64, f64) {
    let n = x.len() as f64;
    let m = x.iter().sum::<f64>() / n;
    (m, x.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / (n - 1.0))
}
