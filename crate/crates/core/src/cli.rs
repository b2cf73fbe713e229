//! Command-line front end. [`run`] parses arguments and returns the process
//! exit code: 0 on success, 2 for invalid arguments or inputs, 1 when an
//! analysis fails at run time.

use std::ffi::OsString;
use std::fmt::Write as _;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};

use clap::{Args, Parser, Subcommand};

use crate::cluster::Connectivity;
use crate::error::Error;
use crate::io::{self, read_covariates, write_results, CovariateTable};
use crate::model::{chisq_cft, Design, Mask, OutcomeStack, WeightStack};
use crate::sei::{run_sei, Method, SeiConfig, SeiResult};
use crate::sim::{
    fwer_experiment_with_progress, power_experiment_with_progress, ExperimentReport, NullSimConfig, PowerSimConfig,
};

pub const EXIT_OK: i32 = 0;
pub const EXIT_RUNTIME: i32 = 1;
pub const EXIT_USAGE: i32 = 2;

#[derive(Debug, Parser)]
#[command(name = "pbj", version, about = "Spatial extent inference with bootstrap joint testing")]
pub struct Cli {
    /// Worker threads (results do not depend on this).
    #[arg(long, global = true, env = "PBJ_WORKERS", value_parser = clap::value_parser!(u16).range(1..))]
    pub workers: Option<u16>,
    /// Suppress progress messages on standard error.
    #[arg(long, short, global = true)]
    pub quiet: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Cluster-extent inference for one covariate effect.
    Sei(SeiArgs),
    /// Family-wise error experiment on synthetic null data.
    SimulateNull(SimArgs),
    /// Sphere-detection power experiment on synthetic data.
    SimulatePower(SimArgs),
    /// Prints the χ² cluster-forming threshold for an upper-tail probability.
    Threshold(ThresholdArgs),
}

/// Weight source for `sei`.
#[derive(Debug, Clone, PartialEq)]
pub enum WeightSource {
    Uniform,
    /// Per-subject variance scales from a covariate column.
    Covariate(String),
    /// Voxelwise variance-scale images laid out like the outcomes.
    Images(PathBuf),
}

impl std::str::FromStr for WeightSource {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        if s == "uniform" {
            return Ok(WeightSource::Uniform);
        }
        match s.split_once(':') {
            Some(("covariate", name)) if !name.is_empty() => Ok(WeightSource::Covariate(name.into())),
            Some(("images", path)) if !path.is_empty() => Ok(WeightSource::Images(path.into())),
            _ => Err(format!("expected uniform, covariate:<column> or images:<path>, got {s:?}")),
        }
    }
}

fn parse_prob(s: &str) -> Result<f64, String> {
    let p: f64 = s.parse().map_err(|e| format!("{e}"))?;
    if p > 0.0 && p < 1.0 {
        Ok(p)
    } else {
        Err(format!("probability must lie in (0, 1), got {s}"))
    }
}

#[derive(Debug, Args)]
pub struct SeiArgs {
    /// Mask volume; nonzero voxels are analysed.
    #[arg(long)]
    pub mask: PathBuf,
    /// 4D NIfTI of subject images, or a text file listing one 3D image per line.
    #[arg(long)]
    pub outcomes: PathBuf,
    /// CSV with a subject id column followed by numeric covariates.
    #[arg(long)]
    pub covariates: PathBuf,
    /// Optional subject id list (one per line) matching the outcome order.
    #[arg(long)]
    pub subjects: Option<PathBuf>,
    /// Tested covariate column; repeat for a joint test.
    #[arg(long, required = true)]
    pub interest: Vec<String>,
    /// Nuisance covariate columns (an intercept is always included).
    #[arg(long, value_delimiter = ',')]
    pub nuisance: Vec<String>,
    #[arg(long, default_value = "spbj")]
    pub method: Method,
    /// uniform, covariate:<column> or images:<path>.
    #[arg(long, default_value = "uniform")]
    pub weights: WeightSource,
    /// Cluster-forming thresholds as upper-tail p-values.
    #[arg(long, value_delimiter = ',', default_value = "0.005", value_parser = parse_prob)]
    pub cft: Vec<f64>,
    /// Bootstrap samples or permutations.
    #[arg(long, default_value_t = 5000, value_parser = clap::value_parser!(u64).range(1..))]
    pub nboot: u64,
    #[arg(long, default_value = "26")]
    pub connectivity: Connectivity,
    #[arg(long, default_value = "0.05", value_parser = parse_prob)]
    pub alpha: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Output prefix for `_clusters.jsonl`, `_stat.nii` and `_labels.nii`.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct SimArgs {
    /// TOML experiment configuration.
    #[arg(long)]
    pub config: PathBuf,
    /// Output prefix for the `.jsonl` records and `.txt` table.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct ThresholdArgs {
    /// Upper-tail probability.
    #[arg(long)]
    pub p: f64,
    /// Degrees of freedom of the χ² statistic.
    #[arg(long, default_value_t = 1)]
    pub df: usize,
}

/// A failure with its exit code.
#[derive(Debug)]
pub struct Failure {
    pub code: i32,
    pub message: String,
}

impl Failure {
    fn usage(message: impl Into<String>) -> Self {
        Failure {
            code: EXIT_USAGE,
            message: message.into(),
        }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = match e {
            Error::DegenerateVoxel { .. } | Error::LeverageOne { .. } | Error::Simulation { .. } | Error::Io { .. } => {
                EXIT_RUNTIME
            }
            _ => EXIT_USAGE,
        };
        Failure {
            code,
            message: e.to_string(),
        }
    }
}

/// Every error raised while loading inputs is a validation error.
fn input<T>(r: crate::error::Result<T>) -> Result<T, Failure> {
    r.map_err(|e| Failure::usage(e.to_string()))
}

/// Parses `args` (including the program name) and runs the command.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    match execute(&cli) {
        Ok(()) => EXIT_OK,
        Err(f) => {
            eprintln!("error: {}", f.message);
            f.code
        }
    }
}

/// Runs a parsed command inside a pool of the requested size.
pub fn execute(cli: &Cli) -> Result<(), Failure> {
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(k) = cli.workers {
        builder = builder.num_threads(k as usize);
    }
    let pool = builder
        .build()
        .map_err(|e| Failure {
            code: EXIT_RUNTIME,
            message: format!("cannot start worker pool: {e}"),
        })?;
    pool.install(|| match &cli.command {
        Command::Sei(a) => cmd_sei(a, cli.quiet),
        Command::SimulateNull(a) => cmd_simulate_null(a, cli.quiet),
        Command::SimulatePower(a) => cmd_simulate_power(a, cli.quiet),
        Command::Threshold(a) => cmd_threshold(a).map(|s| println!("{s}")),
    })
}

/// Formats the threshold with two decimals.
pub fn cmd_threshold(args: &ThresholdArgs) -> Result<String, Failure> {
    if !(args.p > 0.0 && args.p < 1.0) {
        return Err(Failure::usage(format!("p must lie in (0, 1), got {}", args.p)));
    }
    if args.df == 0 {
        return Err(Failure::usage("df must be at least 1"));
    }
    Ok(format!("{:.2}", chisq_cft(args.p, args.df)?))
}

/// Inputs of one analysis after loading and validation.
pub struct SeiInputs {
    pub mask: Mask,
    pub y: OutcomeStack,
    pub design: Design,
    pub weights: WeightStack,
    pub covariates: CovariateTable,
}

fn read_id_list(path: &Path) -> Result<Vec<String>, Failure> {
    let text = std::fs::read_to_string(path).map_err(|e| Failure::usage(format!("{}: {e}", path.display())))?;
    Ok(text.lines().map(str::trim).filter(|l| !l.is_empty()).map(String::from).collect())
}

pub fn load_sei_inputs(a: &SeiArgs) -> Result<SeiInputs, Failure> {
    let mask = input(io::load_mask(&a.mask))?;
    if mask.is_empty() {
        return Err(Failure::usage(format!("{}: mask has no voxels", a.mask.display())));
    }
    let covariates = read_covariates(&a.covariates)
        .map_err(|e| Failure::usage(format!("{}: {e}", a.covariates.display())))?;
    let y = input(io::load_outcomes(&a.outcomes, &mask))?;
    if y.n_subjects() != covariates.n() {
        return Err(Failure::usage(format!(
            "{} has {} subjects but {} has {} rows",
            a.outcomes.display(),
            y.n_subjects(),
            a.covariates.display(),
            covariates.n()
        )));
    }
    if let Some(path) = &a.subjects {
        let ids = read_id_list(path)?;
        if ids != covariates.ids() {
            return Err(Failure::usage(format!(
                "{}: subject ids do not match the order of {}",
                path.display(),
                a.covariates.display()
            )));
        }
    }
    let column_err = |e: io::CovariateError| Failure::usage(format!("{}: {e}", a.covariates.display()));
    let x0 = covariates.matrix(&a.nuisance).map_err(column_err)?;
    let x1 = covariates.matrix(&a.interest).map_err(column_err)?;
    let design = Design::with_intercept(&x0, &x1).map_err(|e| Failure::usage(format!("design: {e}")))?;
    let weights = match &a.weights {
        WeightSource::Uniform => WeightStack::Uniform,
        WeightSource::Covariate(name) => {
            let col = covariates.column(name).map_err(column_err)?;
            WeightStack::per_subject(col.to_vec()).map_err(|e| Failure::usage(format!("weights {name:?}: {e}")))?
        }
        WeightSource::Images(path) => input(io::load_weight_images(path, &mask))?,
    };
    input(weights.validate(y.n_subjects(), y.n_voxels()))?;
    Ok(SeiInputs {
        mask,
        y,
        design,
        weights,
        covariates,
    })
}

/// Output prefix for threshold `t` of `n`.
fn threshold_prefix(out: &Path, cft: f64, n: usize) -> PathBuf {
    if n == 1 {
        out.to_path_buf()
    } else {
        PathBuf::from(format!("{}_p{cft}", out.display()))
    }
}

/// Summary table printed after an analysis.
pub fn summary(result: &SeiResult, alpha: f64) -> String {
    let mut s = String::new();
    for t in &result.thresholds {
        let _ = writeln!(
            s,
            "method {}  cft p={} (z0={:.4})  clusters={}  significant at {alpha}: {}",
            result.method,
            t.cft_p,
            t.z0,
            t.table.len(),
            t.table.significant(alpha).count()
        );
        if !t.table.is_empty() {
            let _ = writeln!(s, "{:>6} {:>8} {:>12} {:>10} {:>10}", "label", "size", "extent_mm3", "peak", "p");
        }
        for c in &t.table.clusters {
            let p = c.p_value.map_or("-".into(), |p| format!("{}", io::results::round_sig6(p)));
            let _ = writeln!(
                s,
                "{:>6} {:>8} {:>12.1} {:>10.3} {:>10}",
                c.label, c.size_voxels, c.extent_mm3, c.peak_value, p
            );
        }
    }
    s
}

pub fn cmd_sei(a: &SeiArgs, quiet: bool) -> Result<(), Failure> {
    if matches!(a.method, Method::Spbj | Method::Perm) && a.interest.len() != 1 {
        let msg = match a.method {
            Method::Spbj => Error::ScalarInterestRequired { m1: a.interest.len() }.to_string(),
            _ => format!("the permutation baseline requires one interest column (got {})", a.interest.len()),
        };
        return Err(Failure::usage(msg));
    }
    let inputs = load_sei_inputs(a)?;
    if !quiet {
        eprintln!(
            "sei: {} subjects, {} voxels, method {}, B = {}",
            inputs.y.n_subjects(),
            inputs.y.n_voxels(),
            a.method,
            a.nboot
        );
    }
    let cfg = SeiConfig {
        method: a.method,
        cft: a.cft.clone(),
        n_boot: a.nboot as usize,
        connectivity: a.connectivity,
        seed: a.seed,
    };
    let result = run_sei(&inputs.y, &inputs.design, &inputs.weights, &inputs.mask, &cfg)?;
    for t in &result.thresholds {
        let prefix = threshold_prefix(&a.out, t.cft_p, result.thresholds.len());
        let paths = write_results(&t.table, &result.stat, &inputs.mask, &prefix)?;
        if !quiet {
            eprintln!("wrote {}", paths.records.display());
        }
    }
    print!("{}", summary(&result, a.alpha));
    Ok(())
}

fn progress_printer(total: usize, quiet: bool) -> impl Fn(usize) + Sync {
    let last = AtomicUsize::new(0);
    move |done: usize| {
        if quiet {
            return;
        }
        let pct = done * 100 / total.max(1);
        if pct / 10 > last.load(Ordering::Relaxed) / 10 || done == total {
            last.fetch_max(pct, Ordering::Relaxed);
            let mut err = std::io::stderr().lock();
            let _ = writeln!(err, "  {done}/{total} simulations");
        }
    }
}

fn finish_report(report: &ExperimentReport, out: &Path, quiet: bool) -> Result<(), Failure> {
    let (jsonl, txt) = report.write(out)?;
    if !quiet {
        eprintln!(
            "wrote {} and {} ({:.1} s, {} workers)",
            jsonl.display(),
            txt.display(),
            report.runtime.elapsed_secs,
            report.runtime.workers
        );
    }
    print!("{}", report.to_table());
    Ok(())
}

pub fn cmd_simulate_null(a: &SimArgs, quiet: bool) -> Result<(), Failure> {
    let cfg = NullSimConfig::from_file(&a.config).map_err(|e| Failure::usage(e.to_string()))?;
    let progress = progress_printer(cfg.n_sims, quiet);
    let report = fwer_experiment_with_progress(&cfg, &progress)?;
    finish_report(&report, &a.out, quiet)
}

pub fn cmd_simulate_power(a: &SimArgs, quiet: bool) -> Result<(), Failure> {
    let cfg = PowerSimConfig::from_file(&a.config).map_err(|e| Failure::usage(e.to_string()))?;
    let progress = progress_printer(cfg.base.n_sims, quiet);
    let report = power_experiment_with_progress(&cfg, &progress)?;
    finish_report(&report, &a.out, quiet)
}
