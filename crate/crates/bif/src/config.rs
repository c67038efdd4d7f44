//! Experiment configuration.
//!
//! The file format is flat TOML: one `key = value` per line, no tables. Every key
//! has a default that depends on `model` and `inference`; [`ExperimentConfig::resolve`]
//! fills them in so the serialized form is always complete.

use std::path::Path;

use anyhow::{bail, Context, Result};
use bif_core::influence::{CurvatureMode, InfluenceConfig, ScalePolicy};
use bif_core::schedule::Schedule;
use bif_core::sgmcmc::{ChainConfig, SamplerKind};
use bif_core::vi::{SigmaBounds, ViConfig};
use serde::{Deserialize, Serialize};
use toml::{Table, Value};

pub const SEED_ENV: &str = "BIF_SEED";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    Gmm,
    Classifier,
    Conjugate,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InferenceKind {
    Vi,
    Sgld,
    Sghmc,
}

impl InferenceKind {
    pub fn sampler(self) -> Option<SamplerKind> {
        match self {
            InferenceKind::Vi => None,
            InferenceKind::Sgld => Some(SamplerKind::Sgld),
            InferenceKind::Sghmc => Some(SamplerKind::Sghmc),
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            InferenceKind::Vi => "vi",
            InferenceKind::Sgld => "sgld",
            InferenceKind::Sghmc => "sghmc",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScheduleKind {
    Constant,
    Power,
    Step,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScaleKind {
    InverseActive,
    Fixed,
    Spectral,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CurvatureKind {
    Exact,
    Cached,
}

/// A fully explicit experiment description.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub model: ModelKind,
    pub inference: InferenceKind,
    pub seed: u64,

    /// Training items.
    pub n: usize,
    /// Held-out items drawn from the same generator.
    pub n_test: usize,
    pub dim: usize,
    /// Mixture components, classes, or 1 for the conjugate model.
    pub k: usize,
    /// `k · dim` numbers, one mean per group, row after row.
    pub cluster_means: Vec<f64>,
    pub prior_std: f64,
    /// Hidden units of the classifier; 0 gives logistic regression.
    pub hidden: usize,

    pub iterations: usize,
    /// Mini-batch size; 0 uses every active item.
    pub batch_size: usize,
    pub schedule: ScheduleKind,
    pub schedule_a: f64,
    pub schedule_b: f64,
    pub schedule_factor: f64,
    pub schedule_every: usize,
    pub alpha0: f64,
    pub retain_last: usize,
    pub mc_samples: usize,
    pub sigma_init: f64,
    pub sigma_min: f64,
    pub sigma_max: f64,

    /// Groups whose first `remove_per_cluster` items are removed.
    pub remove_clusters: Vec<usize>,
    pub remove_per_cluster: usize,
    /// Explicit indices; when non-empty they replace the cluster selection.
    pub remove_indices: Vec<usize>,
    pub forget_batch: usize,
    pub neumann_j: usize,
    pub scale: ScaleKind,
    pub scale_value: f64,
    pub damping: f64,
    pub curvature: CurvatureKind,
    pub refresh_every: usize,
    pub stationarity_tol: f64,

    pub bound_delta: f64,
}

fn defaults(model: ModelKind, inference: InferenceKind) -> Table {
    let mut t = Table::new();
    let mut set = |k: &str, v: Value| {
        t.insert(k.to_string(), v);
    };
    let floats = |xs: &[f64]| Value::Array(xs.iter().map(|&x| Value::Float(x)).collect());
    set("seed", Value::Integer(0));
    set("hidden", Value::Integer(0));
    set("alpha0", Value::Float(0.4));
    set("schedule_b", Value::Float(-0.15));
    set("schedule_factor", Value::Float(0.5));
    set("schedule_every", Value::Integer(1000));
    set("mc_samples", Value::Integer(5));
    set("sigma_init", Value::Float(0.1));
    set("sigma_min", Value::Float(1e-3));
    set("sigma_max", Value::Float(10.0));
    set("remove_indices", Value::Array(vec![]));
    set("neumann_j", Value::Integer(32));
    set("scale", Value::String("inverse_active".into()));
    set("scale_value", Value::Float(1.0));
    set("damping", Value::Float(0.0));
    set("curvature", Value::String("cached".into()));
    set("refresh_every", Value::Integer(0));
    set("stationarity_tol", Value::Float(1e-2));
    set("bound_delta", Value::Float(0.05));
    set("iterations", Value::Integer(2000));
    set("prior_std", Value::Float(1.0));
    match model {
        ModelKind::Gmm => {
            set("n", Value::Integer(2000));
            set("n_test", Value::Integer(400));
            set("dim", Value::Integer(2));
            set("k", Value::Integer(4));
            set("cluster_means", floats(&[2.0, 2.0, -2.0, 2.0, -2.0, -2.0, 2.0, -2.0]));
            set("remove_clusters", Value::Array(vec![Value::Integer(1), Value::Integer(3)]));
            set("remove_per_cluster", Value::Integer(400));
            set("forget_batch", Value::Integer(4));
            set("retain_last", Value::Integer(500));
        }
        ModelKind::Classifier => {
            set("n", Value::Integer(600));
            set("n_test", Value::Integer(300));
            set("dim", Value::Integer(2));
            set("k", Value::Integer(3));
            set("cluster_means", floats(&[1.5, 0.0, -0.75, 1.3, -0.75, -1.3]));
            set("hidden", Value::Integer(8));
            set("remove_clusters", Value::Array(vec![Value::Integer(0)]));
            set("remove_per_cluster", Value::Integer(120));
            set("forget_batch", Value::Integer(8));
            set("retain_last", Value::Integer(200));
        }
        ModelKind::Conjugate => {
            set("n", Value::Integer(400));
            set("n_test", Value::Integer(100));
            set("dim", Value::Integer(1));
            set("k", Value::Integer(1));
            set("cluster_means", floats(&[0.5]));
            set("remove_clusters", Value::Array(vec![Value::Integer(0)]));
            set("remove_per_cluster", Value::Integer(8));
            set("forget_batch", Value::Integer(4));
            set("retain_last", Value::Integer(1000));
        }
    }
    let full_batch_vi = matches!(model, ModelKind::Gmm | ModelKind::Conjugate);
    let (schedule, a, batch) = match (model, inference) {
        (ModelKind::Conjugate, InferenceKind::Vi) => ("constant", 0.5, 0),
        (_, InferenceKind::Vi) => ("constant", 2.0, if full_batch_vi { 0 } else { 64 }),
        (ModelKind::Conjugate, InferenceKind::Sgld) => ("constant", 0.1, 0),
        (ModelKind::Conjugate, InferenceKind::Sghmc) => ("constant", 0.02, 0),
        (_, InferenceKind::Sgld) => ("power", 4.0, 64),
        (_, InferenceKind::Sghmc) => ("power", 2.0, 64),
    };
    set("schedule", Value::String(schedule.into()));
    set("schedule_a", Value::Float(a));
    set("batch_size", Value::Integer(batch));
    if model != ModelKind::Gmm && inference == InferenceKind::Vi {
        set("scale", Value::String("spectral".into()));
        set("scale_value", Value::Float(0.9));
    }
    if model == ModelKind::Classifier {
        if inference == InferenceKind::Vi {
            set("schedule", Value::String("step".into()));
            set("schedule_every", Value::Integer(500));
            set("stationarity_tol", Value::Float(0.25));
            set("damping", Value::Float(50.0));
        } else {
            set("damping", Value::Float(5.0));
        }
    }
    if model == ModelKind::Conjugate && inference != InferenceKind::Vi {
        set("iterations", Value::Integer(3000));
    }
    t
}

/// Parses a command-line value: a TOML literal if it parses as one, else a bare string.
pub fn parse_value(raw: &str) -> Value {
    let doc = format!("v = {raw}");
    match doc.parse::<Table>() {
        Ok(mut t) => t.remove("v").unwrap_or_else(|| Value::String(raw.into())),
        Err(_) => Value::String(raw.into()),
    }
}

fn promote_ints(defaults: &Table, user: &mut Table) {
    for (k, v) in user.iter_mut() {
        if let (Some(Value::Float(_)), Value::Integer(i)) = (defaults.get(k), &*v) {
            *v = Value::Float(*i as f64);
        }
        if let (Some(Value::Array(d)), Value::Array(items)) = (defaults.get(k), &mut *v) {
            if matches!(d.first(), Some(Value::Float(_))) || k == "cluster_means" {
                for it in items.iter_mut() {
                    if let Value::Integer(i) = it {
                        *it = Value::Float(*i as f64);
                    }
                }
            }
        }
    }
}

impl ExperimentConfig {
    /// Builds a complete config from user keys, applying `overrides` and then `seed_env`.
    pub fn resolve(mut user: Table, overrides: &[(String, String)], seed_env: Option<&str>) -> Result<Self> {
        for (k, v) in overrides {
            user.insert(k.clone(), parse_value(v));
        }
        if let Some(s) = seed_env {
            let seed: u64 = s.trim().parse().with_context(|| format!("{SEED_ENV} is not an unsigned integer: {s:?}"))?;
            user.insert("seed".into(), Value::Integer(seed as i64));
        }
        let model: ModelKind = match user.get("model") {
            Some(v) => v.clone().try_into().context("bad value for `model`")?,
            None => bail!("config must set `model` (gmm, classifier or conjugate)"),
        };
        let inference: InferenceKind = match user.get("inference") {
            Some(v) => v.clone().try_into().context("bad value for `inference`")?,
            None => bail!("config must set `inference` (vi, sgld or sghmc)"),
        };
        let mut table = defaults(model, inference);
        promote_ints(&table, &mut user);
        table.extend(user);
        let cfg: ExperimentConfig = Value::Table(table).try_into().context("invalid configuration")?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_toml_str(text: &str, overrides: &[(String, String)], seed_env: Option<&str>) -> Result<Self> {
        let user: Table = text.parse().context("config is not valid TOML")?;
        Self::resolve(user, overrides, seed_env)
    }

    /// Reads a config file and applies overrides and the `BIF_SEED` environment variable.
    pub fn load(path: &Path, overrides: &[(String, String)]) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        let env = std::env::var(SEED_ENV).ok();
        Self::from_toml_str(&text, overrides, env.as_deref())
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        if self.cluster_means.len() != self.k * self.dim {
            bail!("cluster_means has {} numbers, expected k * dim = {}", self.cluster_means.len(), self.k * self.dim);
        }
        if self.n == 0 || self.k == 0 || self.dim == 0 {
            bail!("n, k and dim must be positive");
        }
        if self.model != ModelKind::Classifier && !self.n.is_multiple_of(self.k) {
            bail!("n must be divisible by k");
        }
        if self.model == ModelKind::Conjugate && self.k != 1 {
            bail!("the conjugate model uses k = 1");
        }
        if self.model == ModelKind::Classifier && self.k < 2 {
            bail!("the classifier needs at least two classes");
        }
        if !(self.bound_delta > 0.0 && self.bound_delta < 1.0) {
            bail!("bound_delta must lie in (0, 1)");
        }
        if let Some(&c) = self.remove_clusters.iter().find(|&&c| c >= self.k) {
            bail!("remove_clusters names group {c}, but k = {}", self.k);
        }
        self.vi_config().validate()?;
        if let Some(kind) = self.inference.sampler() {
            self.chain_config().validate(kind)?;
        }
        self.influence_config().validate()?;
        Ok(())
    }

    pub fn schedule(&self) -> Schedule {
        match self.schedule {
            ScheduleKind::Constant => Schedule::Constant { a: self.schedule_a },
            ScheduleKind::Power => Schedule::Power { a: self.schedule_a, b: self.schedule_b },
            ScheduleKind::Step => Schedule::Step { a: self.schedule_a, factor: self.schedule_factor, every: self.schedule_every },
        }
    }

    pub fn sigma_bounds(&self) -> SigmaBounds {
        SigmaBounds { min: self.sigma_min, max: self.sigma_max }
    }

    pub fn vi_config(&self) -> ViConfig {
        ViConfig {
            iterations: self.iterations,
            batch_size: self.batch_size,
            lr: self.schedule(),
            mc_samples: self.mc_samples,
            sigma_bounds: self.sigma_bounds(),
            sigma_init: self.sigma_init,
            seed: self.seed,
        }
    }

    pub fn chain_config(&self) -> ChainConfig {
        ChainConfig {
            iterations: self.iterations,
            batch_size: self.batch_size,
            step: self.schedule(),
            alpha0: self.alpha0,
            retain_last: self.retain_last,
            seed: self.seed,
        }
    }

    pub fn influence_config(&self) -> InfluenceConfig {
        let scale = match self.scale {
            ScaleKind::InverseActive => ScalePolicy::InverseActive { a: self.scale_value },
            ScaleKind::Fixed => ScalePolicy::Fixed { c: self.scale_value },
            ScaleKind::Spectral => ScalePolicy::Spectral { safety: self.scale_value },
        };
        let curvature = match self.curvature {
            CurvatureKind::Exact => CurvatureMode::Exact,
            CurvatureKind::Cached => CurvatureMode::Cached { refresh_every: self.refresh_every },
        };
        InfluenceConfig {
            neumann_j: self.neumann_j,
            scale,
            mc_samples: self.mc_samples,
            damping: self.damping,
            stationarity_tol: self.stationarity_tol,
            curvature,
            seed: self.seed,
        }
    }

    /// Cluster means as `k` rows.
    pub fn means(&self) -> Vec<Vec<f64>> {
        self.cluster_means.chunks(self.dim).map(|c| c.to_vec()).collect()
    }
}
