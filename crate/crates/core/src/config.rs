//! Run configuration: JSON-serializable description of a full pipeline run.

use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::barycenter::SupportStrategy;
use crate::error::{Error, Result};
use crate::ot::Metric;
use crate::sampler::{ChainConfig, GaussianDpmConfig, PoissonDpmConfig};
use crate::weights::{WeightKind, WeightScheme};

/// How the data's columns are assigned to shards.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "layout", rename_all = "snake_case", deny_unknown_fields)]
pub enum ShardLayout {
    /// `k` contiguous column blocks of near-equal width.
    Contiguous { k: usize },
    /// Explicit column lists; overlap is allowed, empty lists are not.
    Explicit { dims: Vec<Vec<usize>> },
    /// Column `j` goes to shard `j mod k`.
    RoundRobin { k: usize },
}

impl ShardLayout {
    pub fn shard_count(&self) -> usize {
        match self {
            ShardLayout::Contiguous { k } | ShardLayout::RoundRobin { k } => *k,
            ShardLayout::Explicit { dims } => dims.len(),
        }
    }

    /// Resolves the layout into per-shard column lists for `p` columns.
    pub fn dims_for(&self, p: usize) -> Result<Vec<Vec<usize>>> {
        if p == 0 {
            return Err(Error::Config("data has no columns".into()));
        }
        let dims = match self {
            ShardLayout::Contiguous { k } => {
                check_k(*k, p)?;
                let base = p / k;
                let extra = p % k;
                let mut start = 0;
                (0..*k)
                    .map(|i| {
                        let width = base + usize::from(i < extra);
                        let cols = (start..start + width).collect();
                        start += width;
                        cols
                    })
                    .collect()
            }
            ShardLayout::RoundRobin { k } => {
                check_k(*k, p)?;
                (0..*k).map(|i| (i..p).step_by(*k).collect()).collect()
            }
            ShardLayout::Explicit { dims } => {
                if dims.is_empty() {
                    return Err(Error::Config("explicit layout has no shards".into()));
                }
                for (i, cols) in dims.iter().enumerate() {
                    if cols.is_empty() {
                        return Err(Error::Config(format!("shard {i} has no columns")));
                    }
                    if let Some(&bad) = cols.iter().find(|&&c| c >= p) {
                        return Err(Error::Config(format!(
                            "shard {i} references column {bad}, data has {p}"
                        )));
                    }
                }
                dims.clone()
            }
        };
        Ok(dims)
    }
}

fn check_k(k: usize, p: usize) -> Result<()> {
    if k == 0 {
        return Err(Error::Config("shard count must be at least 1".into()));
    }
    if k > p {
        return Err(Error::Config(format!(
            "cannot split {p} columns into {k} nonempty shards"
        )));
    }
    Ok(())
}

/// Which mixture model runs on each shard.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SamplerConfig {
    Gaussian(GaussianDpmConfig),
    Poisson(PoissonDpmConfig),
}

impl SamplerConfig {
    pub fn validate(&self) -> Result<()> {
        match self {
            SamplerConfig::Gaussian(c) => c.validate(),
            SamplerConfig::Poisson(c) => c.validate(),
        }
    }
}

/// Chain schedule for every sampler in the run; per-shard seeds are derived
/// from the run's base seed, so none is configured here.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChainSettings {
    pub total_iters: usize,
    pub burn_in: usize,
    #[serde(default = "default_thin")]
    pub thin: usize,
}

fn default_thin() -> usize {
    1
}

impl ChainSettings {
    pub fn chain_for_seed(&self, seed: u64) -> ChainConfig {
        ChainConfig {
            total_iters: self.total_iters,
            burn_in: self.burn_in,
            thin: self.thin,
            seed,
            validation_mode: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.chain_for_seed(0).validate()
    }
}

/// Entropic regularization: one value for every shard or one per shard.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum EpsilonSpec {
    Scalar(f64),
    PerShard(Vec<f64>),
}

impl Default for EpsilonSpec {
    fn default() -> Self {
        EpsilonSpec::Scalar(crate::ot::DEFAULT_EPSILON)
    }
}

impl EpsilonSpec {
    pub fn to_vec(&self) -> Vec<f64> {
        match self {
            EpsilonSpec::Scalar(e) => vec![*e],
            EpsilonSpec::PerShard(v) => v.clone(),
        }
    }

    /// The regularization used for report distances: the scalar, or the
    /// first per-shard value.
    pub fn first(&self) -> f64 {
        match self {
            EpsilonSpec::Scalar(e) => *e,
            EpsilonSpec::PerShard(v) => v.first().copied().unwrap_or(crate::ot::DEFAULT_EPSILON),
        }
    }
}

/// What the report rows are measured against.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ReportReference {
    /// Wasserstein distances to the full-data posterior.
    Full,
    /// Wasserstein distances to one shard's posterior.
    Shard { k: usize },
    /// Wasserstein distances to a posterior file.
    PosteriorFile { path: PathBuf },
    /// Expected ground-metric distance to a fixed partition (one line file).
    PartitionFile { path: PathBuf },
    /// No report.
    None,
}

impl Default for ReportReference {
    fn default() -> Self {
        ReportReference::Full
    }
}

fn default_weights() -> Vec<WeightScheme> {
    vec![
        WeightScheme::uniform(),
        WeightScheme::entropy(),
        WeightScheme::structured(1.0),
    ]
}

fn default_fit_full() -> bool {
    true
}

/// A full pipeline run: where the data lives, how it is sharded and
/// sampled, which consensus posteriors to build, and what to report.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub data: PathBuf,
    pub shards: ShardLayout,
    pub sampler: SamplerConfig,
    pub chain: ChainSettings,
    /// Weight schemes to build mixtures and barycenters for.
    #[serde(default = "default_weights")]
    pub weights: Vec<WeightScheme>,
    #[serde(default)]
    pub epsilon: EpsilonSpec,
    #[serde(default)]
    pub support: SupportStrategy,
    #[serde(default)]
    pub metric: Metric,
    #[serde(default)]
    pub seed: u64,
    pub output: PathBuf,
    /// Worker cap for shard sampling; `None` means available parallelism.
    #[serde(default)]
    pub workers: Option<usize>,
    /// Whether to also fit the full-data posterior (forced on when the
    /// report reference is `full`).
    #[serde(default = "default_fit_full")]
    pub fit_full: bool,
    #[serde(default)]
    pub report: ReportReference,
    /// Regularization for report distances; defaults to the first epsilon.
    #[serde(default)]
    pub report_epsilon: Option<f64>,
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let config: RunConfig =
            serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }

    pub fn validate(&self) -> Result<Self> {
        self.sampler.validate()?;
        self.chain.validate()?;
        if self.weights.is_empty() {
            return Err(Error::Config("at least one weight scheme".into()));
        }
        for scheme in &self.weights {
            scheme.validate()?;
        }
        let kinds: Vec<WeightKind> = self.weights.iter().map(|w| w.kind).collect();
        for (i, kind) in kinds.iter().enumerate() {
            if kinds[..i].contains(kind) {
                return Err(Error::Config(
                    "weight schemes must have distinct kinds (labels collide)".into(),
                ));
            }
        }
        let epsilons = self.epsilon.to_vec();
        if epsilons.is_empty() || epsilons.iter().any(|e| !e.is_finite() || *e <= 0.0) {
            return Err(Error::Config(
                "epsilon values must be strictly positive".into(),
            ));
        }
        if epsilons.len() > 1 && epsilons.len() != self.shards.shard_count() {
            return Err(Error::Config(format!(
                "{} epsilons for {} shards",
                epsilons.len(),
                self.shards.shard_count()
            )));
        }
        if let Some(e) = self.report_epsilon {
            if !e.is_finite() || e <= 0.0 {
                return Err(Error::Config(
                    "report_epsilon must be strictly positive".into(),
                ));
            }
        }
        if let Some(0) = self.workers {
            return Err(Error::Config("workers must be at least 1".into()));
        }
        if let ReportReference::Shard { k } = self.report {
            if k >= self.shards.shard_count() {
                return Err(Error::Config(format!(
                    "report reference shard {k} out of range for {} shards",
                    self.shards.shard_count()
                )));
            }
        }
        let mut config = self.clone();
        if matches!(self.report, ReportReference::Full) {
            config.fit_full = true;
        }
        Ok(config)
    }

    /// Whether this run must fit the full-data posterior.
    pub fn needs_full(&self) -> bool {
        self.fit_full || matches!(self.report, ReportReference::Full)
    }
}
