//! χ² and F tail probabilities, quantiles, and the probability-integral
//! transform that maps an F image onto the χ² scale.
//!
//! Every quantile is computed from whichever tail is smaller, so moderate and
//! extreme upper tails keep full relative accuracy.

use rayon::prelude::*;
use statrs::function::beta::beta_reg;
use statrs::function::gamma::{gamma_lr, gamma_ur, ln_gamma};

use super::StatImage;
use crate::error::{Error, Result};

/// Tail probabilities below this saturate to it.
const MIN_TAIL: f64 = 1e-300;

/// (lower, upper) tail probabilities of χ²_df at `x`.
fn chisq_tails(x: f64, df: f64) -> (f64, f64) {
    if x <= 0.0 {
        return (0.0, 1.0);
    }
    if x.is_infinite() {
        return (1.0, 0.0);
    }
    (gamma_lr(df / 2.0, x / 2.0), gamma_ur(df / 2.0, x / 2.0))
}

fn chisq_ln_pdf(x: f64, df: f64) -> f64 {
    let k = df / 2.0;
    (k - 1.0) * x.ln() - x / 2.0 - k * std::f64::consts::LN_2 - ln_gamma(k)
}

/// (lower, upper) tail probabilities of F(d1, d2) at `t`.
fn f_tails(t: f64, d1: f64, d2: f64) -> (f64, f64) {
    if t <= 0.0 {
        return (0.0, 1.0);
    }
    if t.is_infinite() {
        return (1.0, 0.0);
    }
    let denom = d1 * t + d2;
    let x = d1 * t / denom;
    let y = d2 / denom;
    // Evaluate each tail directly from its own argument.
    (beta_reg(d1 / 2.0, d2 / 2.0, x), beta_reg(d2 / 2.0, d1 / 2.0, y))
}

fn f_ln_pdf(t: f64, d1: f64, d2: f64) -> f64 {
    let (a, b) = (d1 / 2.0, d2 / 2.0);
    let ln_beta = ln_gamma(a) + ln_gamma(b) - ln_gamma(a + b);
    a * (d1 / d2).ln() + (a - 1.0) * t.ln() - (a + b) * (1.0 + d1 * t / d2).ln() - ln_beta
}

/// Upper-tail probability of χ²_df at `x`.
pub fn chisq_sf(x: f64, df: usize) -> f64 {
    chisq_tails(x, df as f64).1
}

/// Upper-tail probability of F(df1, df2) at `t`.
pub fn f_sf(t: f64, df1: usize, df2: usize) -> f64 {
    f_tails(t, df1 as f64, df2 as f64).1
}

/// Which tail a target probability refers to.
#[derive(Clone, Copy)]
enum Tail {
    Lower,
    Upper,
}

/// Solves `tail(x) = prob` on (0, ∞) for a continuous distribution.
///
/// Newton iterations on `ln tail(x)` are safeguarded by a bisection bracket.
fn invert_tail(
    prob: f64,
    tail: Tail,
    tails: impl Fn(f64) -> (f64, f64),
    ln_pdf: impl Fn(f64) -> f64,
    guess: f64,
) -> f64 {
    let target = prob.ln();
    // h(x) is increasing in x and zero at the solution.
    let h = |x: f64| -> f64 {
        let (lo, up) = tails(x);
        match tail {
            Tail::Lower => lo.ln() - target,
            Tail::Upper => target - up.ln(),
        }
    };
    let mut lo = 0.0;
    let mut hi = guess.max(1e-3);
    let mut h_hi = h(hi);
    while h_hi < 0.0 {
        lo = hi;
        hi *= 2.0;
        h_hi = h(hi);
        if hi > 1e300 {
            return hi;
        }
    }
    let mut x = 0.5 * (lo + hi);
    if guess > lo && guess < hi {
        x = guess;
    }
    for _ in 0..200 {
        let (tl, tu) = tails(x);
        let hx = match tail {
            Tail::Lower => tl.ln() - target,
            Tail::Upper => target - tu.ln(),
        };
        if hx == 0.0 {
            return x;
        }
        if hx < 0.0 {
            lo = x;
        } else {
            hi = x;
        }
        // d/dx ln tail = ±pdf/tail; both branches give a positive slope for h.
        let slope = match tail {
            Tail::Lower => (ln_pdf(x) - tl.ln()).exp(),
            Tail::Upper => (ln_pdf(x) - tu.ln()).exp(),
        };
        let mut next = x - hx / slope;
        if !(next.is_finite() && next > lo && next < hi) {
            next = 0.5 * (lo + hi);
        }
        if (next - x).abs() <= 4.0 * f64::EPSILON * x || hi - lo <= 4.0 * f64::EPSILON * hi {
            return next;
        }
        x = next;
    }
    x
}

fn wilson_hilferty(p_upper: f64, df: f64) -> f64 {
    // Rough normal quantile for the starting point only.
    let q = p_upper.clamp(1e-300, 1.0 - 1e-16);
    let t = (-2.0 * q.min(1.0 - q).ln()).sqrt();
    let z = t - (2.515517 + 0.802853 * t + 0.010328 * t * t)
        / (1.0 + 1.432788 * t + 0.189269 * t * t + 0.001308 * t * t * t);
    let z = if q < 0.5 { z } else { -z };
    let c = 2.0 / (9.0 * df);
    (df * (1.0 - c + z * c.sqrt()).powi(3)).max(1e-8)
}

fn chisq_quantile(prob: f64, tail: Tail, df: f64) -> f64 {
    let p_upper = match tail {
        Tail::Lower => 1.0 - prob,
        Tail::Upper => prob,
    };
    invert_tail(
        prob,
        tail,
        |x| chisq_tails(x, df),
        |x| chisq_ln_pdf(x, df),
        wilson_hilferty(p_upper, df),
    )
}

fn check_df(df: usize, name: &str) -> Result<()> {
    if df == 0 {
        Err(Error::invalid(format!("{name} must be at least 1")))
    } else {
        Ok(())
    }
}

/// Cluster-forming threshold z₀ with upper-tail probability `p` under χ²_df.
pub fn chisq_cft(p: f64, df: usize) -> Result<f64> {
    check_df(df, "df")?;
    if !(p > 0.0 && p < 1.0) {
        return Err(Error::invalid(format!("threshold probability must lie in (0, 1), got {p}")));
    }
    let df = df as f64;
    Ok(if p <= 0.5 {
        chisq_quantile(p.max(MIN_TAIL), Tail::Upper, df)
    } else {
        chisq_quantile(1.0 - p, Tail::Lower, df)
    })
}

/// Z = Q_{χ²_df1}(P_{F(df1,df2)}(T)): χ²-distributed exactly when T is F-distributed.
pub fn f_to_chisq_value(t: f64, df1: usize, df2: usize) -> Result<f64> {
    check_df(df1, "df1")?;
    check_df(df2, "df2")?;
    if !t.is_finite() {
        return Err(Error::invalid(format!("F statistic must be finite, got {t}")));
    }
    if t < 0.0 {
        return Err(Error::invalid(format!("F statistic must be non-negative, got {t}")));
    }
    if t == 0.0 {
        return Ok(0.0);
    }
    let (d1, d2) = (df1 as f64, df2 as f64);
    let (lo, up) = f_tails(t, d1, d2);
    Ok(if lo <= up {
        if lo <= 0.0 {
            0.0
        } else {
            chisq_quantile(lo, Tail::Lower, d1)
        }
    } else {
        chisq_quantile(up.max(MIN_TAIL), Tail::Upper, d1)
    })
}

/// Elementwise [`f_to_chisq_value`] producing a χ²_{df1} image.
pub fn f_to_chisq(t: &[f64], df1: usize, df2: usize) -> Result<StatImage> {
    let values: Vec<Result<f64>> = t.par_iter().map(|&x| f_to_chisq_value(x, df1, df2)).collect();
    let values = values.into_iter().collect::<Result<Vec<f64>>>()?;
    Ok(StatImage::from_parts(values, df1))
}

/// Inverse of [`f_to_chisq_value`]: the F statistic whose transform equals `z`.
///
/// Used to carry χ² thresholds onto the F scale.
pub fn chisq_to_f(z: f64, df1: usize, df2: usize) -> Result<f64> {
    check_df(df1, "df1")?;
    check_df(df2, "df2")?;
    if !(z.is_finite() && z >= 0.0) {
        return Err(Error::invalid(format!("chi-square value must be finite and non-negative, got {z}")));
    }
    if z == 0.0 {
        return Ok(0.0);
    }
    let (d1, d2) = (df1 as f64, df2 as f64);
    let (lo, up) = chisq_tails(z, d1);
    let tails = |t: f64| f_tails(t, d1, d2);
    let ln_pdf = |t: f64| f_ln_pdf(t, d1, d2);
    Ok(if lo <= up {
        invert_tail(lo, Tail::Lower, tails, ln_pdf, z / d1)
    } else {
        invert_tail(up.max(MIN_TAIL), Tail::Upper, tails, ln_pdf, z / d1)
    })
}
