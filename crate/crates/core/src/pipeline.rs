//! End-to-end orchestration: ingest a matrix, split its columns into
//! vertical shards, sample every shard posterior in parallel, build the
//! weighted mixtures and barycenters, and report distances.
//!
//! All randomness is derived from the base seed through per-shard seed
//! streams, and shard results are reduced in shard order, so every output
//! file is a pure function of (config, data) regardless of worker count.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use ndarray::{Array2, Axis};
use rayon::prelude::*;
use serde_json::json;

use crate::barycenter::{consensus, ConsensusParams};
use crate::config::{ReportReference, RunConfig, SamplerConfig};
use crate::error::{Error, Result};
use crate::io;
use crate::ot::{sinkhorn, CostMatrix, Metric, SinkhornResult, DEFAULT_MAX_ITER, DEFAULT_TOL};
use crate::partition::Partition;
use crate::posterior::{mixture, EmpiricalPartitionPosterior};
use crate::report::{Report, ReportRow, ReportValue};
use crate::sampler::{gibbs_gaussian_dpm, gibbs_poisson_dpm, shard_seed};
use crate::weights::{compute_lambda, WeightKind};

/// Seed-stream index reserved for the full-data chain; shard `k` uses
/// stream `k`, so adding shards never collides with it.
pub const FULL_SEED_STREAM: usize = usize::MAX;

/// The ingested data in the mode the configured sampler expects.
#[derive(Clone, Debug)]
pub enum DataMatrix {
    Real(Array2<f64>),
    Counts(Array2<u64>),
}

impl DataMatrix {
    pub fn load(path: &Path, sampler: &SamplerConfig) -> Result<Self> {
        match sampler {
            SamplerConfig::Gaussian(_) => Ok(DataMatrix::Real(io::read_matrix_f64(path)?)),
            SamplerConfig::Poisson(_) => Ok(DataMatrix::Counts(io::read_matrix_u64(path)?)),
        }
    }

    pub fn nrows(&self) -> usize {
        match self {
            DataMatrix::Real(m) => m.nrows(),
            DataMatrix::Counts(m) => m.nrows(),
        }
    }

    pub fn ncols(&self) -> usize {
        match self {
            DataMatrix::Real(m) => m.ncols(),
            DataMatrix::Counts(m) => m.ncols(),
        }
    }

    /// A shard view: the selected columns, all rows.
    pub fn select(&self, cols: &[usize]) -> DataMatrix {
        match self {
            DataMatrix::Real(m) => DataMatrix::Real(m.select(Axis(1), cols)),
            DataMatrix::Counts(m) => DataMatrix::Counts(m.select(Axis(1), cols)),
        }
    }
}

fn sample_one(
    data: &DataMatrix,
    sampler: &SamplerConfig,
    chain: &crate::sampler::ChainConfig,
) -> Result<Vec<Partition>> {
    match (data, sampler) {
        (DataMatrix::Real(m), SamplerConfig::Gaussian(g)) => gibbs_gaussian_dpm(m, g, chain),
        (DataMatrix::Counts(m), SamplerConfig::Poisson(p)) => gibbs_poisson_dpm(m, p, chain),
        _ => Err(Error::Config(
            "data mode does not match the sampler kind".into(),
        )),
    }
}

/// Worker count: explicit override, then `VCI_WORKERS`, then the config,
/// then available parallelism.
pub fn resolve_workers(flag: Option<usize>, config: Option<usize>) -> usize {
    flag.or_else(|| {
        std::env::var("VCI_WORKERS")
            .ok()
            .and_then(|v| v.parse::<usize>().ok())
            .filter(|&w| w > 0)
    })
    .or(config)
    .unwrap_or_else(|| {
        std::thread::available_parallelism()
            .map(|n| n.get())
            .unwrap_or(1)
    })
}

pub fn scheme_label(kind: WeightKind) -> &'static str {
    match kind {
        WeightKind::Uniform => "uniform",
        WeightKind::Entropy => "entropy",
        WeightKind::Structured => "structured",
    }
}

/// Entropic transport distance between two empirical posteriors under the
/// ground metric; both the bare transport cost and the regularized
/// objective are in the result.
pub fn wasserstein_distance(
    a: &EmpiricalPartitionPosterior,
    b: &EmpiricalPartitionPosterior,
    metric: Metric,
    epsilon: f64,
) -> Result<SinkhornResult> {
    if a.n() != b.n() {
        return Err(Error::InvalidArgument(format!(
            "posteriors cover {} and {} items",
            a.n(),
            b.n()
        )));
    }
    let cost = CostMatrix::from_supports(a.support(), b.support(), metric)?;
    // Report-grade distances keep the default tolerance but get a larger
    // iteration budget: posterior supports run to ~1e3 atoms and small
    // epsilons converge slowly.
    sinkhorn(a.weights(), b.weights(), &cost, epsilon, 20 * DEFAULT_MAX_ITER, DEFAULT_TOL)
}

/// [`wasserstein_distance`] on posterior files.
pub fn wasserstein_distance_files(
    a: &Path,
    b: &Path,
    metric: Metric,
    epsilon: f64,
) -> Result<SinkhornResult> {
    wasserstein_distance(&io::read_posterior(a)?, &io::read_posterior(b)?, metric, epsilon)
}

/// Everything a finished run leaves on disk, plus the in-memory report.
#[derive(Debug)]
pub struct RunArtifacts {
    pub output: PathBuf,
    pub workers: usize,
    pub full_posterior: Option<PathBuf>,
    pub shard_posteriors: Vec<PathBuf>,
    pub mixtures: Vec<(WeightKind, PathBuf)>,
    pub barycenters: Vec<(WeightKind, PathBuf)>,
    pub report: Option<Report>,
    pub report_csv: Option<PathBuf>,
    pub report_txt: Option<PathBuf>,
}

enum ReportTarget {
    Posterior(EmpiricalPartitionPosterior),
    Partition(Partition),
}

/// Output of the sampling stage: posterior files on disk, their re-read
/// contents, and their hashes.
#[derive(Debug)]
pub struct SampledRun {
    pub workers: usize,
    pub sampling_ms: f64,
    pub full_posterior_path: Option<PathBuf>,
    pub shard_posterior_paths: Vec<PathBuf>,
    pub full_post: Option<EmpiricalPartitionPosterior>,
    pub posts: Vec<EmpiricalPartitionPosterior>,
    pub posterior_hashes: BTreeMap<String, String>,
}

/// Splits the data and samples every shard chain (plus the full-data chain
/// when needed) concurrently; writes sample and posterior files.
pub fn run_sampling(config: &RunConfig) -> Result<SampledRun> {
    let config = config.validate()?;
    let data = DataMatrix::load(&config.data, &config.sampler)
        .map_err(Error::stage("ingest", None))?;
    let dims = config.shards.dims_for(data.ncols())?;
    let shard_count = dims.len();
    let workers = resolve_workers(None, config.workers);

    let out = config.output.clone();
    std::fs::create_dir_all(out.join("shards")).map_err(|e| Error::io(out.as_path(), e))?;

    // One sampling task per shard, plus the full-data chain when needed.
    let mut specs: Vec<(Option<usize>, Vec<usize>)> = Vec::new();
    if config.needs_full() {
        specs.push((None, (0..data.ncols()).collect()));
    }
    for (k, cols) in dims.iter().enumerate() {
        specs.push((Some(k), cols.clone()));
    }

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| Error::Config(format!("cannot build worker pool: {e}")))?;
    let sampling_started = Instant::now();
    let sampled: Vec<Vec<Partition>> = pool.install(|| {
        specs
            .par_iter()
            .map(|(which, cols)| {
                let stream = which.map_or(FULL_SEED_STREAM, |k| k);
                let chain = config.chain.chain_for_seed(shard_seed(config.seed, stream));
                sample_one(&data.select(cols), &config.sampler, &chain)
                    .map_err(Error::stage("sampling", *which))
            })
            .collect::<Result<_>>()
    })?;
    let sampling_ms = sampling_started.elapsed().as_secs_f64() * 1e3;

    let mut spec_iter = sampled.into_iter();
    let mut full_posterior_path = None;
    if config.needs_full() {
        let samples = spec_iter.next().expect("full task");
        io::write_partitions(&out.join("full.samples.txt"), &samples)?;
        let posterior = EmpiricalPartitionPosterior::from_samples(&samples, None)
            .map_err(Error::stage("sampling", None))?;
        let path = out.join("full.posterior.txt");
        io::write_posterior(&path, &posterior)?;
        full_posterior_path = Some(path);
    }
    let mut shard_posterior_paths = Vec::with_capacity(shard_count);
    for (k, samples) in spec_iter.enumerate() {
        io::write_partitions(&out.join(format!("shards/shard_{k}.samples.txt")), &samples)?;
        let posterior = EmpiricalPartitionPosterior::from_samples(&samples, None)
            .map_err(Error::stage("sampling", Some(k)))?;
        let path = out.join(format!("shards/shard_{k}.posterior.txt"));
        io::write_posterior(&path, &posterior)?;
        shard_posterior_paths.push(path);
    }

    // Everything downstream is computed from the files just written (and
    // hashed), so the report can never drift from what is on disk.
    let full_post = full_posterior_path
        .as_deref()
        .map(io::read_posterior)
        .transpose()?;
    let posts: Vec<EmpiricalPartitionPosterior> = shard_posterior_paths
        .iter()
        .map(|p| io::read_posterior(p))
        .collect::<Result<_>>()?;

    let mut posterior_hashes = BTreeMap::new();
    for path in shard_posterior_paths
        .iter()
        .chain(full_posterior_path.iter())
    {
        posterior_hashes.insert(relative_name(&out, path), io::sha256_file(path)?);
    }

    Ok(SampledRun {
        workers,
        sampling_ms,
        full_posterior_path,
        shard_posterior_paths,
        full_post,
        posts,
        posterior_hashes,
    })
}

pub fn run_pipeline(config: &RunConfig) -> Result<RunArtifacts> {
    let started = Instant::now();
    let config = config.validate()?;
    let out = config.output.clone();
    let SampledRun {
        workers,
        sampling_ms,
        full_posterior_path,
        shard_posterior_paths,
        full_post,
        posts,
        posterior_hashes,
    } = run_sampling(&config)?;

    // Weights per scheme.
    let mut lambda_entries = Vec::new();
    let mut lambdas = Vec::new();
    for scheme in &config.weights {
        let result = compute_lambda(&posts, scheme).map_err(Error::stage("weights", None))?;
        lambda_entries.push(json!({
            "scheme": scheme_label(scheme.kind),
            "a": scheme.a,
            "projection": scheme.projection,
            "lambda": result.lambda,
            "omega": result.omega,
            "uniform_fallback": result.uniform_fallback,
        }));
        lambdas.push(result.lambda);
    }
    write_json(&out.join("lambda.json"), &json!(lambda_entries))?;

    // Mixture baselines per scheme.
    let mut mixture_paths = Vec::new();
    let mut mixture_posts = Vec::new();
    for (scheme, lambda) in config.weights.iter().zip(&lambdas) {
        let mixed = mixture(&posts, lambda).map_err(Error::stage("mixture", None))?;
        let path = out.join(format!(
            "mixture_{}.posterior.txt",
            scheme_label(scheme.kind)
        ));
        io::write_posterior(&path, &mixed)?;
        mixture_paths.push((scheme.kind, path));
        mixture_posts.push(mixed);
    }

    // Barycenters per scheme.
    let params = ConsensusParams {
        metric: config.metric,
        epsilons: config.epsilon.to_vec(),
        support: config.support,
        ..ConsensusParams::default()
    };
    let consensus_started = Instant::now();
    let mut barycenter_paths = Vec::new();
    let mut barycenter_posts = Vec::new();
    let mut consensus_diags = BTreeMap::new();
    for scheme in &config.weights {
        let label = scheme_label(scheme.kind);
        let (bary, _lambda, diag) =
            consensus(&posts, scheme, &params).map_err(Error::stage("consensus", None))?;
        if !diag.converged {
            return Err(Error::stage("consensus", None)(Error::BarycenterNotConverged {
                iterations: diag.iterations,
                residual: diag.residual,
                tol: params.tol,
            }));
        }
        let path = out.join(format!("barycenter_{label}.posterior.txt"));
        io::write_posterior(&path, &bary)?;
        barycenter_paths.push((scheme.kind, path));
        barycenter_posts.push(bary);
        consensus_diags.insert(label.to_string(), serde_json::to_value(&diag).unwrap());
    }
    let consensus_ms = consensus_started.elapsed().as_secs_f64() * 1e3;

    // Report.
    let report = match &config.report {
        ReportReference::None => None,
        reference => {
            let (ref_label, target) =
                resolve_reference(reference, full_post.as_ref(), &posts)?;
            let mut entries: Vec<(String, Option<usize>, &EmpiricalPartitionPosterior)> =
                Vec::new();
            if let Some(full) = full_post.as_ref() {
                if !matches!(reference, ReportReference::Full) {
                    entries.push(("full".into(), None, full));
                }
            }
            for (k, post) in posts.iter().enumerate() {
                entries.push((format!("shard_{k}"), Some(k), post));
            }
            for (scheme, mixed) in config.weights.iter().zip(&mixture_posts) {
                let label = scheme_label(scheme.kind);
                entries.push((format!("mixture_{label}"), None, mixed));
            }
            for (scheme, bary) in config.weights.iter().zip(&barycenter_posts) {
                let label = scheme_label(scheme.kind);
                entries.push((format!("barycenter_{label}"), None, bary));
            }

            let report_epsilon = config.report_epsilon.unwrap_or(config.epsilon.first());
            let mut rows = Vec::with_capacity(entries.len());
            for (label, shard, post) in entries {
                let value = match &target {
                    ReportTarget::Posterior(reference_post) => {
                        let solved =
                            wasserstein_distance(post, reference_post, config.metric, report_epsilon)
                                .map_err(Error::stage("report", shard))?;
                        ReportValue::Wasserstein {
                            transport_cost: solved.transport_cost,
                            objective: solved.objective,
                        }
                    }
                    ReportTarget::Partition(truth) => {
                        let mut expected = 0.0;
                        for (atom, weight) in post.iter() {
                            expected += weight * config.metric.eval(atom, truth)?;
                        }
                        ReportValue::Expected(expected)
                    }
                };
                rows.push(ReportRow {
                    label,
                    shard,
                    value,
                });
            }
            let epsilon = match target {
                ReportTarget::Posterior(_) => Some(report_epsilon),
                ReportTarget::Partition(_) => None,
            };
            let report = Report::new(ref_label, config.metric, epsilon, rows)
                .map_err(Error::stage("report", None))?;
            report.write(&out.join("report.csv"), &out.join("report.txt"))?;
            Some(report)
        }
    };

    let diagnostics = json!({
        "workers": workers,
        "wall_time_ms": started.elapsed().as_secs_f64() * 1e3,
        "sampling_ms": sampling_ms,
        "consensus_ms": consensus_ms,
        "posterior_hashes": posterior_hashes,
        "consensus": consensus_diags,
        "report_reference": report.as_ref().map(|r| r.reference.clone()),
    });
    write_json(&out.join("diagnostics.json"), &diagnostics)?;

    let mut artifacts: Vec<String> = Vec::new();
    for path in full_posterior_path.iter().chain(shard_posterior_paths.iter()) {
        artifacts.push(relative_name(&out, path));
    }
    for (_, path) in mixture_paths.iter().chain(barycenter_paths.iter()) {
        artifacts.push(relative_name(&out, path));
    }
    artifacts.push("lambda.json".into());
    artifacts.push("diagnostics.json".into());
    if report.is_some() {
        artifacts.push("report.csv".into());
        artifacts.push("report.txt".into());
    }
    artifacts.sort();
    let manifest = json!({
        "version": env!("CARGO_PKG_VERSION"),
        "config": serde_json::to_value(&config).map_err(|e| Error::Config(e.to_string()))?,
        "artifacts": artifacts,
    });
    write_json(&out.join("manifest.json"), &manifest)?;

    Ok(RunArtifacts {
        output: out,
        workers,
        full_posterior: full_posterior_path,
        shard_posteriors: shard_posterior_paths,
        mixtures: mixture_paths,
        barycenters: barycenter_paths,
        report_csv: report.as_ref().map(|_| config.output.join("report.csv")),
        report_txt: report.as_ref().map(|_| config.output.join("report.txt")),
        report,
    })
}

fn resolve_reference(
    reference: &ReportReference,
    full_post: Option<&EmpiricalPartitionPosterior>,
    posts: &[EmpiricalPartitionPosterior],
) -> Result<(String, ReportTarget)> {
    match reference {
        ReportReference::Full => {
            let full = full_post.ok_or_else(|| {
                Error::Config("report reference `full` needs the full-data fit".into())
            })?;
            Ok(("full".into(), ReportTarget::Posterior(full.clone())))
        }
        ReportReference::Shard { k } => Ok((
            format!("shard_{k}"),
            ReportTarget::Posterior(posts[*k].clone()),
        )),
        ReportReference::PosteriorFile { path } => Ok((
            path.display().to_string(),
            ReportTarget::Posterior(io::read_posterior(path)?),
        )),
        ReportReference::PartitionFile { path } => {
            let partitions = io::read_partitions(path)?;
            if partitions.len() != 1 {
                return Err(Error::Config(format!(
                    "reference partition file has {} partitions, expected 1",
                    partitions.len()
                )));
            }
            let truth = partitions.into_iter().next().unwrap();
            if posts.first().is_some_and(|p| p.n() != truth.n()) {
                return Err(Error::Config(format!(
                    "reference partition covers {} items, posteriors cover {}",
                    truth.n(),
                    posts[0].n()
                )));
            }
            Ok((
                path.display().to_string(),
                ReportTarget::Partition(truth),
            ))
        }
        ReportReference::None => unreachable!("handled by caller"),
    }
}

fn relative_name(root: &Path, path: &Path) -> String {
    path.strip_prefix(root)
        .unwrap_or(path)
        .to_string_lossy()
        .replace('\\', "/")
}

fn write_json(path: &Path, value: &serde_json::Value) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)
        .map_err(|e| Error::Config(e.to_string()))?;
    text.push('\n');
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Writes each shard's columns as its own headerless CSV under `out`.
pub fn split_to_files(
    data: &DataMatrix,
    dims: &[Vec<usize>],
    out: &Path,
) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let mut paths = Vec::with_capacity(dims.len());
    for (k, cols) in dims.iter().enumerate() {
        let path = out.join(format!("shard_{k}.csv"));
        match data.select(cols) {
            DataMatrix::Real(m) => io::write_matrix_f64(&path, &m)?,
            DataMatrix::Counts(m) => io::write_matrix_u64(&path, &m)?,
        }
        paths.push(path);
    }
    Ok(paths)
}
