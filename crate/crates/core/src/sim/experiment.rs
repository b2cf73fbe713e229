use std::time::Instant;

use rand::Rng;
use rayon::prelude::*;

use super::config::{NullSimConfig, PowerSimConfig};
use super::data::{gen_null_dataset, sim_seed, NullDataset};
use super::report::{clopper_pearson, ExperimentReport, Record, RuntimeInfo};
use crate::cluster::Labeler;
use crate::error::{Error, Result};
use crate::model::{chisq_cft, Mask, WhitenedDesign};
use crate::rng::{derive_seed, stream, Domain};
use crate::sei::{run_sei, SeiConfig, SeiResult};

/// Callback receiving the number of finished simulations.
pub type Progress<'a> = &'a (dyn Fn(usize) + Sync);

fn no_progress(_: usize) {}

/// Significant-voxel indicator per (threshold, alpha) for one analysis.
fn significant_voxels(result: &SeiResult, alpha: &[f64], n_voxels: usize) -> Vec<Vec<Vec<bool>>> {
    result
        .thresholds
        .iter()
        .map(|t| {
            alpha
                .iter()
                .map(|&a| {
                    let mut sig = vec![false; n_voxels];
                    for c in t.table.significant(a) {
                        for &v in &c.members {
                            sig[v] = true;
                        }
                    }
                    sig
                })
                .collect()
        })
        .collect()
}

/// Runs every arm on one dataset; the closure sees (arm index, result).
fn run_arms<T>(
    cfg: &NullSimConfig,
    mask: &Mask,
    sim_index: usize,
    data: &NullDataset,
    mut each: impl FnMut(usize, SeiResult) -> T,
) -> Result<Vec<T>> {
    let design = data.design(cfg)?;
    let mut out = Vec::with_capacity(cfg.arms.len());
    for (a, arm) in cfg.arms.iter().enumerate() {
        let sei = SeiConfig {
            method: arm.method,
            cft: cfg.cft.clone(),
            n_boot: cfg.n_boot,
            connectivity: cfg.connectivity,
            seed: derive_seed(cfg.seed, &[sim_index as u64, a as u64 + 1]),
        };
        let weights = data.weights(&arm.weights)?;
        out.push(each(a, run_sei(&data.y, &design, &weights, mask, &sei)?));
    }
    Ok(out)
}

fn run_sims<T: Send>(
    n_sims: usize,
    progress: Progress<'_>,
    sim: impl Fn(usize) -> Result<T> + Sync,
) -> Result<Vec<T>> {
    let done = std::sync::atomic::AtomicUsize::new(0);
    let results: Vec<Result<T>> = (0..n_sims)
        .into_par_iter()
        .map(|s| {
            let r = sim(s).map_err(|e| Error::Simulation {
                sim_index: s,
                source: Box::new(e),
            });
            progress(done.fetch_add(1, std::sync::atomic::Ordering::Relaxed) + 1);
            r
        })
        .collect();
    results.into_iter().collect()
}

fn config_echo<T: serde::Serialize>(cfg: &T) -> serde_json::Value {
    serde_json::to_value(cfg).expect("config serializes")
}

/// Proportion of simulations in which any cluster is significant, per arm,
/// threshold and level, with exact 95% intervals.
pub fn fwer_experiment(cfg: &NullSimConfig) -> Result<ExperimentReport> {
    fwer_experiment_with_progress(cfg, &no_progress)
}

pub fn fwer_experiment_with_progress(cfg: &NullSimConfig, progress: Progress<'_>) -> Result<ExperimentReport> {
    cfg.validate()?;
    let start = Instant::now();
    let mut report = ExperimentReport {
        kind: "null".into(),
        config: config_echo(cfg),
        records: Vec::new(),
        runtime: RuntimeInfo::default(),
    };
    if cfg.arms.is_empty() {
        return Ok(report);
    }
    let mask = cfg.mask()?;
    let z0: Vec<f64> = cfg.cft.iter().map(|&p| chisq_cft(p, 1)).collect::<Result<_>>()?;
    // rejected[sim][arm][cft][alpha]
    let rejected: Vec<Vec<Vec<Vec<bool>>>> = run_sims(cfg.n_sims, progress, |s| {
        let data = gen_null_dataset(cfg, &mask, s)?;
        run_arms(cfg, &mask, s, &data, |_, res| {
            (0..cfg.cft.len())
                .map(|t| cfg.alpha.iter().map(|&a| res.any_significant(t, a)).collect())
                .collect()
        })
    })?;
    for (a, arm) in cfg.arms.iter().enumerate() {
        for (t, &cft_p) in cfg.cft.iter().enumerate() {
            for (l, &alpha) in cfg.alpha.iter().enumerate() {
                let k = rejected.iter().filter(|sim| sim[a][t][l]).count();
                let (ci_low, ci_high) = clopper_pearson(k, cfg.n_sims, 0.95);
                report.records.push(Record::Fwer {
                    arm: arm.label(),
                    cft_p,
                    z0: z0[t],
                    alpha,
                    n_sims: cfg.n_sims,
                    rejections: k,
                    estimate: k as f64 / cfg.n_sims as f64,
                    ci_low,
                    ci_high,
                });
            }
        }
    }
    report.runtime = RuntimeInfo {
        elapsed_secs: start.elapsed().as_secs_f64(),
        workers: rayon::current_num_threads(),
    };
    Ok(report)
}

/// In-mask voxels within `radius` (voxel units) of `centre`.
pub fn sphere_members(mask: &Mask, centre: [usize; 3], radius: usize) -> Vec<usize> {
    let r = radius as i64;
    let c = centre.map(|x| x as i64);
    let mut out = Vec::new();
    for dz in -r..=r {
        for dy in -r..=r {
            for dx in -r..=r {
                if dx * dx + dy * dy + dz * dz > r * r {
                    continue;
                }
                let p = [c[0] + dx, c[1] + dy, c[2] + dz];
                if p.iter().zip(mask.dims()).all(|(&x, d)| x >= 0 && (x as usize) < d) {
                    if let Some(v) = mask.index_of(p.map(|x| x as usize)) {
                        out.push(v);
                    }
                }
            }
        }
    }
    out.sort_unstable();
    out
}

/// Signal layout of one power simulation.
#[derive(Debug, Clone, PartialEq)]
pub struct SphereLayout {
    /// (radius, in-mask members) per sphere.
    pub spheres: Vec<(usize, Vec<usize>)>,
    /// Connected components of the union of spheres (true clusters).
    pub clusters: Vec<Vec<usize>>,
}

/// Places `spheres_per_radius` spheres per radius at random in-mask centres.
pub fn place_spheres(cfg: &PowerSimConfig, mask: &Mask, sim_index: usize) -> SphereLayout {
    let mut rng = stream(sim_seed(&cfg.base, sim_index), Domain::Spheres, 0);
    let mut spheres = Vec::new();
    for &r in &cfg.radii {
        for _ in 0..cfg.spheres_per_radius {
            let centre = mask.coords_of(rng.random_range(0..mask.len()));
            spheres.push((r, sphere_members(mask, centre, r)));
        }
    }
    let mut indicator = vec![0.0; mask.len()];
    for (_, m) in &spheres {
        for &v in m {
            indicator[v] = 1.0;
        }
    }
    let table = Labeler::new(mask, cfg.base.connectivity).label(&indicator, 0.5, mask);
    SphereLayout {
        spheres,
        clusters: table.clusters.into_iter().map(|c| c.members).collect(),
    }
}

/// Adds β(v) x̃_i inside the spheres, where x̃ is the interest covariate
/// orthogonalized against the nuisance columns and
/// β(v) = effect · σ_Y(v) / σ_x̃.
fn add_signal(cfg: &PowerSimConfig, data: &mut NullDataset, layout: &SphereLayout) -> Result<()> {
    let design = data.design(&cfg.base)?;
    let n = design.n();
    let x0 = design.x0();
    let wd = WhitenedDesign::new(&x0, &vec![1.0; n])?;
    let x1 = design.x1();
    let mut xt = vec![0.0; n];
    wd.residual(x1.as_slice(), &wd.project(x1.as_slice()), &mut xt);
    let sd = |v: &[f64]| {
        let m = v.iter().sum::<f64>() / v.len() as f64;
        (v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (v.len() as f64 - 1.0)).sqrt()
    };
    let sx = sd(&xt);
    let mut inside = vec![false; data.y.n_voxels()];
    for (_, m) in &layout.spheres {
        for &v in m {
            inside[v] = true;
        }
    }
    let mut y = data.y.data().clone();
    for (v, _) in inside.iter().enumerate().filter(|(_, &s)| s) {
        let beta = cfg.effect_size * sd(data.y.voxel(v)) / sx;
        for i in 0..n {
            y[(i, v)] += beta * xt[i];
        }
    }
    data.y = crate::model::OutcomeStack::new(y)?;
    Ok(())
}

/// Detection rates of planted spheres per radius and per true-cluster size bin.
pub fn power_experiment(cfg: &PowerSimConfig) -> Result<ExperimentReport> {
    power_experiment_with_progress(cfg, &no_progress)
}

pub fn power_experiment_with_progress(cfg: &PowerSimConfig, progress: Progress<'_>) -> Result<ExperimentReport> {
    cfg.validate()?;
    let base = &cfg.base;
    let start = Instant::now();
    let mut report = ExperimentReport {
        kind: "power".into(),
        config: config_echo(cfg),
        records: Vec::new(),
        runtime: RuntimeInfo::default(),
    };
    if base.arms.is_empty() {
        return Ok(report);
    }
    let mask = base.mask()?;
    let z0: Vec<f64> = base.cft.iter().map(|&p| chisq_cft(p, 1)).collect::<Result<_>>()?;
    struct SimOutcome {
        radii: Vec<usize>,
        cluster_sizes: Vec<usize>,
        // [arm][cft][alpha] -> (per-sphere detected, per-cluster detected)
        detected: Vec<Vec<Vec<(Vec<bool>, Vec<bool>)>>>,
    }
    let outcomes: Vec<SimOutcome> = run_sims(base.n_sims, progress, |s| {
        let mut data = gen_null_dataset(base, &mask, s)?;
        let layout = place_spheres(cfg, &mask, s);
        add_signal(cfg, &mut data, &layout)?;
        let detected = run_arms(base, &mask, s, &data, |_, res| {
            significant_voxels(&res, &base.alpha, mask.len())
                .into_iter()
                .map(|per_alpha| {
                    per_alpha
                        .into_iter()
                        .map(|sig| {
                            let hit = |m: &Vec<usize>| m.iter().any(|&v| sig[v]);
                            (
                                layout.spheres.iter().map(|(_, m)| hit(m)).collect(),
                                layout.clusters.iter().map(hit).collect(),
                            )
                        })
                        .collect()
                })
                .collect()
        })?;
        Ok(SimOutcome {
            radii: layout.spheres.iter().map(|(r, _)| *r).collect(),
            cluster_sizes: layout.clusters.iter().map(Vec::len).collect(),
            detected,
        })
    })?;

    for (a, arm) in base.arms.iter().enumerate() {
        for (t, &cft_p) in base.cft.iter().enumerate() {
            for (l, &alpha) in base.alpha.iter().enumerate() {
                for &radius in &cfg.radii {
                    let (mut total, mut hits) = (0usize, 0usize);
                    for o in &outcomes {
                        let (spheres, _) = &o.detected[a][t][l];
                        for (r, d) in o.radii.iter().zip(spheres) {
                            if *r == radius {
                                total += 1;
                                hits += *d as usize;
                            }
                        }
                    }
                    let rate = hits as f64 / total as f64;
                    report.records.push(Record::Detection {
                        arm: arm.label(),
                        cft_p,
                        z0: z0[t],
                        alpha,
                        radius,
                        n_spheres: total,
                        detected: hits,
                        rate,
                        se: (rate * (1.0 - rate) / total as f64).sqrt(),
                    });
                }
                for (b, &lo) in cfg.size_bins.iter().enumerate() {
                    let hi = cfg.size_bins.get(b + 1).copied();
                    let in_bin = |s: usize| s >= lo && hi.is_none_or(|h| s < h);
                    let (mut total, mut hits) = (0usize, 0usize);
                    for o in &outcomes {
                        let (_, clusters) = &o.detected[a][t][l];
                        for (&size, d) in o.cluster_sizes.iter().zip(clusters) {
                            if in_bin(size) {
                                total += 1;
                                hits += *d as usize;
                            }
                        }
                    }
                    report.records.push(Record::SizeBin {
                        arm: arm.label(),
                        cft_p,
                        z0: z0[t],
                        alpha,
                        size_min: lo,
                        size_max: hi.map(|h| h - 1),
                        n_clusters: total,
                        detected: hits,
                        rate: (total > 0).then(|| hits as f64 / total as f64),
                    });
                }
            }
        }
    }
    report.runtime = RuntimeInfo {
        elapsed_secs: start.elapsed().as_secs_f64(),
        workers: rayon::current_num_threads(),
    };
    Ok(report)
}
