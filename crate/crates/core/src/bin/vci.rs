use std::path::PathBuf;
use std::process::exit;

use clap::{ArgGroup, Parser, Subcommand};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde_json::json;

use vci_core::config::{RunConfig, ShardLayout};
use vci_core::error::{Error, Result};
use vci_core::io;
use vci_core::ot::Metric;
use vci_core::pipeline::{
    run_pipeline, run_sampling, split_to_files, wasserstein_distance_files, DataMatrix,
};
use vci_core::report::{Report, ReportRow, ReportValue};
use vci_core::theory::{check_bound, random_instance};

#[derive(Parser)]
#[command(
    name = "vci",
    version,
    about = "Consensus inference over random partitions from vertically sharded data"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Split a data matrix into vertical shard CSVs.
    #[command(group(ArgGroup::new("how").required(true).args(["k", "dims"])))]
    Split {
        /// Headerless CSV matrix.
        #[arg(long)]
        data: PathBuf,
        /// Shard count for a contiguous (default) or round-robin layout.
        #[arg(long)]
        k: Option<usize>,
        /// Assign columns round-robin instead of in contiguous blocks.
        #[arg(long, requires = "k")]
        round_robin: bool,
        /// Explicit column lists, e.g. `0,1;1,2` (shards separated by `;`).
        #[arg(long)]
        dims: Option<String>,
        /// Treat the data as integer counts.
        #[arg(long)]
        counts: bool,
        /// Directory for shard_<k>.csv files.
        #[arg(long)]
        out: PathBuf,
    },
    /// Run only the sampling stage of a configured run.
    Sample {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        workers: Option<usize>,
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Full pipeline: split, sample, weight, aggregate, report.
    Consensus {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        workers: Option<usize>,
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Entropic transport distance between two posterior files.
    Distance {
        #[arg(long)]
        a: PathBuf,
        #[arg(long)]
        b: PathBuf,
        #[arg(long, default_value_t = vci_core::ot::DEFAULT_EPSILON)]
        epsilon: f64,
        #[arg(long, default_value = "voi")]
        metric: Metric,
    },
    /// Distance table for posterior files against a reference.
    #[command(group(ArgGroup::new("ref").required(true).args(["reference", "partition"])))]
    Report {
        /// Posterior files, one table row each.
        #[arg(long, num_args = 1.., required = true)]
        posteriors: Vec<PathBuf>,
        /// Reference posterior file (transport distances).
        #[arg(long)]
        reference: Option<PathBuf>,
        /// Reference partition file (expected distances).
        #[arg(long)]
        partition: Option<PathBuf>,
        #[arg(long, default_value_t = vci_core::ot::DEFAULT_EPSILON)]
        epsilon: f64,
        #[arg(long, default_value = "voi")]
        metric: Metric,
        #[arg(long)]
        csv: PathBuf,
        #[arg(long)]
        txt: PathBuf,
    },
    /// Verify the variational upper bound on random tiny instances.
    CheckBound {
        /// Items per partition (full joints need n <= 4).
        #[arg(long, default_value_t = 3)]
        n: usize,
        /// Shard count (full joints need <= 3).
        #[arg(long, default_value_t = 2)]
        shards: usize,
        /// Comma-separated palette the per-shard inverse temperatures are
        /// drawn from.
        #[arg(long, default_value = "0.5,1,2,5")]
        zeta: String,
        #[arg(long, default_value_t = 20)]
        instances: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value = "voi")]
        metric: Metric,
    },
}

fn main() {
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => exit(code),
        Err(e) => {
            eprintln!("error: {e}");
            exit(e.exit_code());
        }
    }
}

fn run(cli: Cli) -> Result<i32> {
    match cli.command {
        Command::Split {
            data,
            k,
            round_robin,
            dims,
            counts,
            out,
        } => {
            let layout = match (k, dims) {
                (Some(k), None) if round_robin => ShardLayout::RoundRobin { k },
                (Some(k), None) => ShardLayout::Contiguous { k },
                (None, Some(text)) => ShardLayout::Explicit {
                    dims: parse_dims(&text)?,
                },
                _ => unreachable!("clap group"),
            };
            let matrix = if counts {
                DataMatrix::Counts(io::read_matrix_u64(&data)?)
            } else {
                DataMatrix::Real(io::read_matrix_f64(&data)?)
            };
            let cols = layout.dims_for(matrix.ncols())?;
            let paths = split_to_files(&matrix, &cols, &out)?;
            for path in paths {
                println!("{}", path.display());
            }
            Ok(0)
        }
        Command::Sample {
            config,
            seed,
            workers,
            output,
        } => {
            let config = load_config(&config, seed, workers, output)?;
            let sampled = run_sampling(&config)?;
            for path in sampled
                .shard_posterior_paths
                .iter()
                .chain(sampled.full_posterior_path.iter())
            {
                println!("{}", path.display());
            }
            Ok(0)
        }
        Command::Consensus {
            config,
            seed,
            workers,
            output,
        } => {
            let config = load_config(&config, seed, workers, output)?;
            let artifacts = run_pipeline(&config)?;
            if let Some(report) = &artifacts.report {
                print!("{}", report.render_text());
            } else {
                for (_, path) in &artifacts.barycenters {
                    println!("{}", path.display());
                }
            }
            Ok(0)
        }
        Command::Distance {
            a,
            b,
            epsilon,
            metric,
        } => {
            let solved = wasserstein_distance_files(&a, &b, metric, epsilon)?;
            println!(
                "{}",
                json!({
                    "transport_cost": solved.transport_cost,
                    "objective": solved.objective,
                    "iterations": solved.iterations,
                    "residual": solved.residual,
                    "log_domain": solved.log_domain,
                })
            );
            Ok(0)
        }
        Command::Report {
            posteriors,
            reference,
            partition,
            epsilon,
            metric,
            csv,
            txt,
        } => {
            let report = file_report(&posteriors, reference, partition, epsilon, metric)?;
            report.write(&csv, &txt)?;
            print!("{}", report.render_text());
            Ok(0)
        }
        Command::CheckBound {
            n,
            shards,
            zeta,
            instances,
            seed,
            metric,
        } => {
            let palette = parse_zetas(&zeta)?;
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut passes = 0usize;
            println!(
                "{:>8}  {:>14}  {:>14}  {:>6}",
                "instance", "lhs_star", "rhs", "holds"
            );
            for i in 0..instances {
                let inst = random_instance(n, shards, &palette, metric, &mut rng)?;
                let check = check_bound(&inst.model, &inst.q0, &inst.qs)?;
                if check.holds {
                    passes += 1;
                }
                println!(
                    "{:>8}  {:>14.8}  {:>14.8}  {:>6}",
                    i,
                    check.lhs_star,
                    check.rhs,
                    if check.holds { "pass" } else { "FAIL" }
                );
            }
            println!("summary: {passes}/{instances} hold");
            Ok(if passes == instances { 0 } else { 3 })
        }
    }
}

fn load_config(
    path: &PathBuf,
    seed: Option<u64>,
    workers: Option<usize>,
    output: Option<PathBuf>,
) -> Result<RunConfig> {
    let mut config = RunConfig::load(path)?;
    if let Some(seed) = seed {
        config.seed = seed;
    }
    if let Some(workers) = workers {
        config.workers = Some(workers);
    }
    if let Some(output) = output {
        config.output = output;
    }
    config.validate()
}

fn file_report(
    posteriors: &[PathBuf],
    reference: Option<PathBuf>,
    partition: Option<PathBuf>,
    epsilon: f64,
    metric: Metric,
) -> Result<Report> {
    let mut rows = Vec::with_capacity(posteriors.len());
    match (reference, partition) {
        (Some(ref_path), None) => {
            let target = io::read_posterior(&ref_path)?;
            for path in posteriors {
                let solved = vci_core::pipeline::wasserstein_distance(
                    &io::read_posterior(path)?,
                    &target,
                    metric,
                    epsilon,
                )?;
                rows.push(ReportRow {
                    label: stem(path),
                    shard: None,
                    value: ReportValue::Wasserstein {
                        transport_cost: solved.transport_cost,
                        objective: solved.objective,
                    },
                });
            }
            Report::new(stem(&ref_path), metric, Some(epsilon), rows)
        }
        (None, Some(truth_path)) => {
            let partitions = io::read_partitions(&truth_path)?;
            if partitions.len() != 1 {
                return Err(Error::Config(format!(
                    "reference partition file has {} partitions, expected 1",
                    partitions.len()
                )));
            }
            let truth = &partitions[0];
            for path in posteriors {
                let posterior = io::read_posterior(path)?;
                let mut expected = 0.0;
                for (atom, weight) in posterior.iter() {
                    expected += weight * metric.eval(atom, truth)?;
                }
                rows.push(ReportRow {
                    label: stem(path),
                    shard: None,
                    value: ReportValue::Expected(expected),
                });
            }
            Report::new(stem(&truth_path), metric, None, rows)
        }
        _ => unreachable!("clap group"),
    }
}

fn stem(path: &PathBuf) -> String {
    path.file_name()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| path.display().to_string())
}

fn parse_dims(text: &str) -> Result<Vec<Vec<usize>>> {
    text.split(';')
        .map(|group| {
            group
                .split(',')
                .map(|field| {
                    field.trim().parse::<usize>().map_err(|_| {
                        Error::Config(format!("not a column index: `{field}`"))
                    })
                })
                .collect()
        })
        .collect()
}

fn parse_zetas(text: &str) -> Result<Vec<f64>> {
    text.split(',')
        .map(|field| {
            field
                .trim()
                .parse::<f64>()
                .ok()
                .filter(|z| z.is_finite() && *z > 0.0)
                .ok_or_else(|| Error::Config(format!("not a positive zeta: `{field}`")))
        })
        .collect()
}
