use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use statrs::function::beta::beta_reg;

use crate::error::{Error, Result};

/// Exact (Clopper–Pearson) two-sided confidence interval for a binomial
/// proportion with `k` successes in `n` trials.
pub fn clopper_pearson(k: usize, n: usize, level: f64) -> (f64, f64) {
    assert!(n > 0 && k <= n, "need 0 <= k <= n, n > 0");
    let tail = (1.0 - level) / 2.0;
    let (k, nf) = (k as f64, n as f64);
    let lower = if k == 0.0 { 0.0 } else { beta_quantile(tail, k, nf - k + 1.0) };
    let upper = if k == nf { 1.0 } else { beta_quantile(1.0 - tail, k + 1.0, nf - k) };
    (lower, upper)
}

/// Quantile of Beta(a, b) by bisection on the regularized incomplete beta.
fn beta_quantile(p: f64, a: f64, b: f64) -> f64 {
    let (mut lo, mut hi) = (0.0f64, 1.0f64);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if beta_reg(a, b, mid) < p {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo <= f64::EPSILON * mid.max(f64::MIN_POSITIVE) {
            break;
        }
    }
    0.5 * (lo + hi)
}

/// One line of an experiment report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "record", rename_all = "snake_case")]
pub enum Record {
    /// Family-wise error rate of one arm at one threshold and level.
    Fwer {
        arm: String,
        cft_p: f64,
        z0: f64,
        alpha: f64,
        n_sims: usize,
        rejections: usize,
        estimate: f64,
        ci_low: f64,
        ci_high: f64,
    },
    /// Detection rate of the spheres of one radius.
    Detection {
        arm: String,
        cft_p: f64,
        z0: f64,
        alpha: f64,
        radius: usize,
        n_spheres: usize,
        detected: usize,
        rate: f64,
        se: f64,
    },
    /// Detection rate of true clusters within a size bin.
    SizeBin {
        arm: String,
        cft_p: f64,
        z0: f64,
        alpha: f64,
        size_min: usize,
        size_max: Option<usize>,
        n_clusters: usize,
        detected: usize,
        rate: Option<f64>,
    },
}

/// Wall-clock information; reported on the console only so that report files
/// stay byte-identical across runs.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct RuntimeInfo {
    pub elapsed_secs: f64,
    pub workers: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentReport {
    /// `"null"` or `"power"`.
    pub kind: String,
    /// Echo of the full configuration.
    pub config: serde_json::Value,
    pub records: Vec<Record>,
    pub runtime: RuntimeInfo,
}

impl ExperimentReport {
    pub fn fwer(&self, arm: &str, cft_p: f64, alpha: f64) -> Option<&Record> {
        self.records.iter().find(|r| {
            matches!(r, Record::Fwer { arm: a, cft_p: c, alpha: al, .. } if a == arm && *c == cft_p && *al == alpha)
        })
    }

    /// Detection records of one arm, ordered by radius.
    pub fn detections(&self, arm: &str, cft_p: f64, alpha: f64) -> Vec<&Record> {
        self.records
            .iter()
            .filter(|r| {
                matches!(r, Record::Detection { arm: a, cft_p: c, alpha: al, .. } if a == arm && *c == cft_p && *al == alpha)
            })
            .collect()
    }

    /// JSON lines: a header with the configuration, then one record per line.
    pub fn to_jsonl(&self) -> String {
        let header = serde_json::json!({ "record": "header", "kind": self.kind, "config": self.config });
        let mut out = serde_json::to_string(&header).expect("serializable");
        out.push('\n');
        for r in &self.records {
            out.push_str(&serde_json::to_string(r).expect("serializable"));
            out.push('\n');
        }
        out
    }

    /// Fixed-width text table.
    pub fn to_table(&self) -> String {
        let mut s = String::new();
        let fwer: Vec<_> = self.records.iter().filter(|r| matches!(r, Record::Fwer { .. })).collect();
        if !fwer.is_empty() {
            let _ = writeln!(s, "{:<18} {:>8} {:>8} {:>6} {:>6} {:>8} {:>17}", "arm", "cft_p", "z0", "alpha", "rej", "fwer", "95% CI");
            for r in fwer {
                if let Record::Fwer { arm, cft_p, z0, alpha, n_sims, rejections, estimate, ci_low, ci_high } = r {
                    let _ = writeln!(
                        s,
                        "{arm:<18} {cft_p:>8} {z0:>8.3} {alpha:>6} {:>6} {estimate:>8.4} [{ci_low:.4}, {ci_high:.4}]",
                        format!("{rejections}/{n_sims}")
                    );
                }
            }
        }
        let det: Vec<_> = self.records.iter().filter(|r| matches!(r, Record::Detection { .. })).collect();
        if !det.is_empty() {
            let _ = writeln!(s, "{:<18} {:>8} {:>6} {:>6} {:>9} {:>8} {:>8}", "arm", "cft_p", "alpha", "radius", "detected", "rate", "se");
            for r in det {
                if let Record::Detection { arm, cft_p, alpha, radius, n_spheres, detected, rate, se, .. } = r {
                    let _ = writeln!(
                        s,
                        "{arm:<18} {cft_p:>8} {alpha:>6} {radius:>6} {:>9} {rate:>8.4} {se:>8.4}",
                        format!("{detected}/{n_spheres}")
                    );
                }
            }
        }
        let bins: Vec<_> = self.records.iter().filter(|r| matches!(r, Record::SizeBin { .. })).collect();
        if !bins.is_empty() {
            let _ = writeln!(s, "{:<18} {:>8} {:>6} {:>11} {:>9} {:>8}", "arm", "cft_p", "alpha", "size", "detected", "rate");
            for r in bins {
                if let Record::SizeBin { arm, cft_p, alpha, size_min, size_max, n_clusters, detected, rate, .. } = r {
                    let size = match size_max {
                        Some(hi) => format!("{size_min}-{hi}"),
                        None => format!("{size_min}+"),
                    };
                    let rate = rate.map_or("-".to_string(), |r| format!("{r:.4}"));
                    let _ = writeln!(
                        s,
                        "{arm:<18} {cft_p:>8} {alpha:>6} {size:>11} {:>9} {rate:>8}",
                        format!("{detected}/{n_clusters}")
                    );
                }
            }
        }
        if s.is_empty() {
            s.push_str("(no records)\n");
        }
        s
    }

    /// Writes `{prefix}.jsonl` and `{prefix}.txt`.
    pub fn write(&self, prefix: impl AsRef<Path>) -> Result<(PathBuf, PathBuf)> {
        let p = prefix.as_ref().display().to_string();
        let jsonl = PathBuf::from(format!("{p}.jsonl"));
        let txt = PathBuf::from(format!("{p}.txt"));
        fs::write(&jsonl, self.to_jsonl()).map_err(|e| Error::io(&jsonl, e))?;
        fs::write(&txt, self.to_table()).map_err(|e| Error::io(&txt, e))?;
        Ok((jsonl, txt))
    }
}
