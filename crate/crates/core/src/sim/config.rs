use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::cluster::Connectivity;
use crate::error::{Error, Result};
use crate::model::Mask;
use crate::sei::Method;

/// Sampling distribution of one synthetic covariate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "dist", rename_all = "lowercase")]
pub enum Distribution {
    Normal {
        #[serde(default)]
        mean: f64,
        #[serde(default = "one")]
        sd: f64,
    },
    Uniform {
        low: f64,
        high: f64,
    },
    Bernoulli {
        p: f64,
    },
    LogNormal {
        #[serde(default)]
        meanlog: f64,
        #[serde(default = "one")]
        sdlog: f64,
    },
}

fn one() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CovariateSpec {
    pub name: String,
    #[serde(flatten)]
    pub dist: Distribution,
}

/// Error scale τ(x) = exp(scale · x) driven by one covariate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VarianceModel {
    pub covariate: String,
    #[serde(default = "one")]
    pub scale: f64,
}

/// Per-subject smoothing width fwhm · exp(slope · x) driven by one covariate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrelationModel {
    pub covariate: String,
    pub slope: f64,
}

/// Variance scales S_i handed to the fitting procedure.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum WeightSpec {
    #[default]
    Uniform,
    /// The generating variance τ(x_i)².
    Variance,
    /// The value of a (positive) covariate.
    Covariate(String),
}

impl TryFrom<String> for WeightSpec {
    type Error = String;

    fn try_from(s: String) -> std::result::Result<Self, String> {
        match s.as_str() {
            "uniform" => Ok(WeightSpec::Uniform),
            "variance" => Ok(WeightSpec::Variance),
            other => match other.strip_prefix("covariate:") {
                Some(name) if !name.is_empty() => Ok(WeightSpec::Covariate(name.to_string())),
                _ => Err(format!(
                    "weights must be \"uniform\", \"variance\" or \"covariate:<name>\", got {other:?}"
                )),
            },
        }
    }
}

impl From<WeightSpec> for String {
    fn from(w: WeightSpec) -> String {
        match w {
            WeightSpec::Uniform => "uniform".into(),
            WeightSpec::Variance => "variance".into(),
            WeightSpec::Covariate(c) => format!("covariate:{c}"),
        }
    }
}

/// One method/weighting combination run in every simulation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Arm {
    pub method: Method,
    #[serde(default)]
    pub weights: WeightSpec,
}

impl Arm {
    pub fn label(&self) -> String {
        match (&self.method, &self.weights) {
            (Method::Perm, WeightSpec::Uniform) => "perm".into(),
            (m, w) => format!("{}({})", m.name(), String::from(w.clone())),
        }
    }
}

/// Null (FWER) experiment settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NullSimConfig {
    pub seed: u64,
    pub n: usize,
    pub n_sims: usize,
    #[serde(default = "default_n_boot")]
    pub n_boot: usize,
    #[serde(default = "default_dims")]
    pub dims: [usize; 3],
    #[serde(default = "default_voxel_size")]
    pub voxel_size: [f64; 3],
    #[serde(default = "default_fwhm")]
    pub fwhm_voxels: f64,
    #[serde(default)]
    pub connectivity: Connectivity,
    #[serde(default = "default_cft")]
    pub cft: Vec<f64>,
    #[serde(default = "default_alpha")]
    pub alpha: Vec<f64>,
    /// Name of the tested covariate; every other covariate is a nuisance column.
    pub interest: String,
    pub covariates: Vec<CovariateSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub variance: Option<VarianceModel>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub correlation: Option<CorrelationModel>,
    pub arms: Vec<Arm>,
}

fn default_n_boot() -> usize {
    200
}
fn default_dims() -> [usize; 3] {
    [24, 24, 24]
}
fn default_voxel_size() -> [f64; 3] {
    [2.0, 2.0, 2.0]
}
fn default_fwhm() -> f64 {
    3.0
}
fn default_cft() -> Vec<f64> {
    vec![0.01, 0.005]
}
fn default_alpha() -> Vec<f64> {
    vec![0.05]
}

const NULL_KEYS: &[&str] = &[
    "seed",
    "n",
    "n_sims",
    "n_boot",
    "dims",
    "voxel_size",
    "fwhm_voxels",
    "connectivity",
    "cft",
    "alpha",
    "interest",
    "covariates",
    "variance",
    "correlation",
    "arms",
];
const POWER_KEYS: &[&str] = &["radii", "spheres_per_radius", "effect_size", "size_bins"];

impl NullSimConfig {
    /// Desk-scale defaults: 24³ grid, ellipsoidal mask, FWHM 3, B = 200,
    /// 500 simulations, sex/age nuisance covariates and a tested covariate
    /// `mot`, with sPBJ, PBJ and permutation arms at uniform weights.
    pub fn desk_default(n: usize, seed: u64) -> Self {
        NullSimConfig {
            seed,
            n,
            n_sims: 500,
            n_boot: default_n_boot(),
            dims: default_dims(),
            voxel_size: default_voxel_size(),
            fwhm_voxels: default_fwhm(),
            connectivity: Connectivity::default(),
            cft: default_cft(),
            alpha: default_alpha(),
            interest: "mot".into(),
            covariates: vec![
                CovariateSpec {
                    name: "sex".into(),
                    dist: Distribution::Bernoulli { p: 0.5 },
                },
                CovariateSpec {
                    name: "age".into(),
                    dist: Distribution::Uniform { low: 8.0, high: 22.0 },
                },
                CovariateSpec {
                    name: "mot".into(),
                    dist: Distribution::Normal { mean: 0.0, sd: 0.5 },
                },
            ],
            variance: None,
            correlation: None,
            arms: vec![
                Arm {
                    method: Method::Spbj,
                    weights: WeightSpec::Uniform,
                },
                Arm {
                    method: Method::Pbj,
                    weights: WeightSpec::Uniform,
                },
                Arm {
                    method: Method::Perm,
                    weights: WeightSpec::Uniform,
                },
            ],
        }
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        let table = parse_table(text)?;
        check_keys(text, &table, &[NULL_KEYS])?;
        let cfg: NullSimConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_file(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        NullSimConfig::from_toml_str(&text).map_err(|e| prefix_path(path, e))
    }

    pub fn mask(&self) -> Result<Mask> {
        Mask::ellipsoid(self.dims, self.voxel_size)
    }

    pub(crate) fn covariate_index(&self, name: &str) -> Option<usize> {
        self.covariates.iter().position(|c| c.name == name)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if self.n_sims == 0 {
            return bad("n_sims must be at least 1".into());
        }
        if self.n_boot == 0 {
            return bad("n_boot must be at least 1".into());
        }
        if self.dims.iter().any(|&d| d == 0) || self.voxel_size.iter().any(|&s| !(s > 0.0)) {
            return bad("dims and voxel_size must be positive".into());
        }
        if !(self.fwhm_voxels.is_finite() && self.fwhm_voxels >= 0.0) {
            return bad(format!("fwhm_voxels must be non-negative, got {}", self.fwhm_voxels));
        }
        if self.cft.is_empty() || self.cft.iter().any(|&p| !(p > 0.0 && p < 1.0)) {
            return bad("cft must be a non-empty list of probabilities in (0, 1)".into());
        }
        if self.alpha.is_empty() || self.alpha.iter().any(|&a| !(a > 0.0 && a < 1.0)) {
            return bad("alpha must be a non-empty list of probabilities in (0, 1)".into());
        }
        for (i, c) in self.covariates.iter().enumerate() {
            if self.covariates[..i].iter().any(|d| d.name == c.name) {
                return bad(format!("duplicate covariate {:?}", c.name));
            }
            let ok = match c.dist {
                Distribution::Normal { mean, sd } => mean.is_finite() && sd.is_finite() && sd >= 0.0,
                Distribution::Uniform { low, high } => low.is_finite() && high.is_finite() && low <= high,
                Distribution::Bernoulli { p } => (0.0..=1.0).contains(&p),
                Distribution::LogNormal { meanlog, sdlog } => meanlog.is_finite() && sdlog.is_finite() && sdlog >= 0.0,
            };
            if !ok {
                return bad(format!("invalid distribution parameters for covariate {:?}", c.name));
            }
        }
        if self.covariate_index(&self.interest).is_none() {
            return bad(format!("interest covariate {:?} is not defined", self.interest));
        }
        let m = self.covariates.len() + 1;
        if self.n <= m {
            return bad(format!("n = {} must exceed the number of design columns ({m})", self.n));
        }
        if let Some(v) = &self.variance {
            if self.covariate_index(&v.covariate).is_none() {
                return bad(format!("variance covariate {:?} is not defined", v.covariate));
            }
            if !v.scale.is_finite() {
                return bad("variance scale must be finite".into());
            }
        }
        if let Some(c) = &self.correlation {
            if self.covariate_index(&c.covariate).is_none() {
                return bad(format!("correlation covariate {:?} is not defined", c.covariate));
            }
            if !c.slope.is_finite() {
                return bad("correlation slope must be finite".into());
            }
        }
        for arm in &self.arms {
            if let WeightSpec::Covariate(name) = &arm.weights {
                if self.covariate_index(name).is_none() {
                    return bad(format!("weight covariate {name:?} is not defined"));
                }
            }
            if arm.method == Method::Perm && arm.weights != WeightSpec::Uniform {
                return bad("the permutation arm takes no weights".into());
            }
        }
        Ok(())
    }
}

/// Sphere-power experiment settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PowerSimConfig {
    #[serde(flatten)]
    pub base: NullSimConfig,
    /// Sphere radii in voxels.
    #[serde(default = "default_radii")]
    pub radii: Vec<usize>,
    #[serde(default = "default_spheres")]
    pub spheres_per_radius: usize,
    #[serde(default = "default_effect")]
    pub effect_size: f64,
    /// Lower edges of the true-cluster size bins (voxels); the last bin is open.
    #[serde(default = "default_bins")]
    pub size_bins: Vec<usize>,
}

fn default_radii() -> Vec<usize> {
    vec![3, 4, 5]
}
fn default_spheres() -> usize {
    1
}
fn default_effect() -> f64 {
    0.4
}
fn default_bins() -> Vec<usize> {
    vec![1, 50, 100, 200, 400]
}

impl PowerSimConfig {
    /// Desk-scale power defaults on top of [`NullSimConfig::desk_default`].
    pub fn desk_default(n: usize, seed: u64) -> Self {
        let mut base = NullSimConfig::desk_default(n, seed);
        base.n_sims = 200;
        PowerSimConfig {
            base,
            radii: default_radii(),
            spheres_per_radius: default_spheres(),
            effect_size: default_effect(),
            size_bins: default_bins(),
        }
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        let table = parse_table(text)?;
        check_keys(text, &table, &[NULL_KEYS, POWER_KEYS])?;
        let cfg: PowerSimConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_file(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        PowerSimConfig::from_toml_str(&text).map_err(|e| prefix_path(path, e))
    }

    pub fn validate(&self) -> Result<()> {
        self.base.validate()?;
        let bad = |msg: String| Err(Error::Config(msg));
        if self.radii.is_empty() || self.radii.contains(&0) {
            return bad("radii must be a non-empty list of positive integers".into());
        }
        let smallest = *self.base.dims.iter().min().expect("three dims");
        if let Some(r) = self.radii.iter().find(|&&r| 2 * r + 1 > smallest) {
            return bad(format!("sphere radius {r} exceeds the grid (smallest dim {smallest})"));
        }
        if self.spheres_per_radius == 0 {
            return bad("spheres_per_radius must be at least 1".into());
        }
        if !(self.effect_size.is_finite() && self.effect_size >= 0.0) {
            return bad(format!("effect_size must be non-negative, got {}", self.effect_size));
        }
        if self.size_bins.is_empty() || self.size_bins.windows(2).any(|w| w[0] >= w[1]) {
            return bad("size_bins must be strictly increasing".into());
        }
        Ok(())
    }
}

fn parse_table(text: &str) -> Result<toml::Table> {
    text.parse::<toml::Table>().map_err(|e| Error::Config(e.to_string()))
}

fn check_keys(text: &str, table: &toml::Table, allowed: &[&[&str]]) -> Result<()> {
    for key in table.keys() {
        if !allowed.iter().any(|set| set.contains(&key.as_str())) {
            let line = text.lines().position(|l| {
                let l = l.trim_start().trim_start_matches('[');
                l.starts_with(key.as_str()) && l[key.len()..].trim_start().starts_with(['=', ']', '.'])
            });
            return Err(Error::Config(match line {
                Some(i) => format!("unknown key `{key}` at line {}", i + 1),
                None => format!("unknown key `{key}`"),
            }));
        }
    }
    Ok(())
}

fn prefix_path(path: &Path, e: Error) -> Error {
    match e {
        Error::Config(msg) => Error::Config(format!("{}: {msg}", path.display())),
        other => other,
    }
}
