//! `noisyor`: synthesize diagnostic cases, fit variational bounds, sample,
//! and run the seeded comparison sweeps.
//!
//! Exit codes: 0 success, 2 invalid input, 3 a size cap was exceeded,
//! 4 an optimizer stopped before converging (output is still written),
//! 1 anything else.

use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Duration;

use clap::{Args, Parser, Subcommand, ValueEnum};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use noisyor::network::{generate_case, generate_synthetic, load_network, save_network, Evidence, NoisyOrNetwork};
use noisyor::optimizer::OptimizerConfig;
use noisyor::sampler::{bound_filter, run_sampler, SampleBudget, SamplerConfig, SamplerEstimate, DEFAULT_FILTER_SLACK};

use noisyor_bench::experiments::{
    budget_correlations, bound_curve_experiment, interval_summary, opt_field, partial_comparison, ranking_comparison,
    time_accuracy, to_csv, Instance, Matching, Preset,
};
use noisyor_bench::metrics::{ranking_curve, RankingCurve};
use noisyor_bench::pipeline::{fit_case, run_case, CaseSpec, FamilyName, ModeName, Scheduler};

#[derive(Parser)]
#[command(name = "noisyor", version, about = "Exact and variational inference for noisy-OR diagnostic networks")]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Seed for every random choice (orderings, generators, samplers).
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    /// Number of positive findings treated exactly.
    #[arg(long, global = true)]
    budget: Option<usize>,
    #[arg(long, global = true, value_enum, default_value_t = FamilyName::Upper)]
    family: FamilyName,
    #[arg(long, global = true, value_enum, default_value_t = Scheduler::Delta)]
    scheduler: Scheduler,
    /// Relative change of the bound at which optimization stops.
    #[arg(long, global = true, default_value_t = 1e-8)]
    tol: f64,
    #[arg(long, global = true, default_value_t = 200)]
    max_iter: usize,
    /// Output format; each command has its own default.
    #[arg(long, global = true, value_enum)]
    format: Option<Format>,
    /// One worker thread, no wall-clock fields, no wall-clock budgets.
    #[arg(long, global = true)]
    deterministic: bool,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Format {
    Csv,
    Json,
}

#[derive(Subcommand)]
enum Command {
    /// Draw a synthetic network and a simulated case.
    Generate(GenerateArgs),
    /// Fit bounds on one case and report marginals and intervals.
    Infer(InferArgs),
    /// Seeded sweeps over generated instances.
    Bench(BenchArgs),
    /// Ranking curve of approximate posteriors against reference ones.
    Rank(RankArgs),
    /// Likelihood-weighted sampling on one case.
    Sample(SampleArgs),
    /// Accept or reject sampler runs against the variational bounds.
    Filter(FilterArgs),
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum PresetName {
    /// Brute-force-checkable networks.
    Desk,
    /// 600 diseases, 4000 findings.
    Full,
}

#[derive(Args)]
struct GenerateArgs {
    #[arg(long, value_enum, default_value_t = PresetName::Desk)]
    preset: PresetName,
    /// Disease count (desk preset).
    #[arg(long, default_value_t = 12)]
    diseases: usize,
    #[arg(long)]
    positive: Option<usize>,
    #[arg(long)]
    negative: Option<usize>,
    /// Where to write the network JSON.
    #[arg(long)]
    network: PathBuf,
    /// Where to write the case JSON.
    #[arg(long)]
    case: PathBuf,
}

#[derive(Args)]
struct CaseFiles {
    #[arg(long)]
    network: PathBuf,
    #[arg(long)]
    case: PathBuf,
}

#[derive(Args)]
struct InferArgs {
    #[command(flatten)]
    files: CaseFiles,
    #[arg(long, value_enum, default_value_t = ModeName::Staged)]
    mode: ModeName,
    /// Also run the sampler with this many samples.
    #[arg(long)]
    sampler_samples: Option<u64>,
    /// Largest positive-finding count for which exact values are reported.
    #[arg(long, default_value_t = 20)]
    exact_limit: usize,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Experiment {
    /// Upper bound per budget, delta against random orderings.
    BoundCurve,
    /// False-positive areas, variational against partially exact.
    Partial,
    /// Top-k correlation at matched cost, variational against sampler.
    TimeAccuracy,
    /// False-positive areas, variational against a fixed-size sampler run.
    Ranking,
    /// Top-k correlation per budget.
    Correlation,
    /// Interval widths and containment.
    Intervals,
}

#[derive(Args)]
struct BenchArgs {
    #[arg(value_enum)]
    experiment: Experiment,
    #[arg(long, default_value_t = 50)]
    instances: u64,
    #[arg(long, default_value_t = 12)]
    diseases: usize,
    #[arg(long, default_value_t = 8)]
    positive: usize,
    /// Random orderings per instance (bound-curve).
    #[arg(long, default_value_t = 20)]
    random_orders: usize,
    /// Comma-separated budgets (bound-curve, correlation).
    #[arg(long, value_delimiter = ',')]
    budgets: Vec<usize>,
    /// Sampler size for ranking, and for time-accuracy in deterministic mode.
    #[arg(long, default_value_t = 1000)]
    samples: u64,
    #[arg(long, default_value_t = 50)]
    top_k: usize,
}

#[derive(Args)]
struct RankArgs {
    /// Reference posteriors: a JSON array, or an object holding one.
    #[arg(long)]
    reference: PathBuf,
    #[arg(long)]
    approx: PathBuf,
    /// Dotted path to the array inside object files.
    #[arg(long, default_value = "marginals")]
    key: String,
    /// Defaults to the number of diseases.
    #[arg(long)]
    n_max: Option<usize>,
}

#[derive(Args)]
struct SampleArgs {
    #[command(flatten)]
    files: CaseFiles,
    #[arg(long, default_value_t = 100_000)]
    samples: u64,
    /// Wall-clock budget in seconds, instead of a sample count.
    #[arg(long)]
    seconds: Option<f64>,
    #[arg(long)]
    no_markov_blanket: bool,
    #[arg(long)]
    no_self_importance: bool,
}

#[derive(Args)]
struct FilterArgs {
    #[command(flatten)]
    files: CaseFiles,
    #[arg(long, value_enum, default_value_t = ModeName::Staged)]
    mode: ModeName,
    /// Tolerance in nats outside the bounds.
    #[arg(long, default_value_t = DEFAULT_FILTER_SLACK)]
    slack: f64,
    /// Sampler outputs as written by `sample --format json`.
    #[arg(required = true)]
    estimates: Vec<PathBuf>,
}

#[derive(Debug, Error)]
enum CliError {
    #[error(transparent)]
    Core(#[from] noisyor::Error),
    #[error("{}: {source}", path.display())]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{0}")]
    Invalid(String),
    #[error("optimization did not converge")]
    NotConverged,
}

impl CliError {
    fn exit_code(&self) -> u8 {
        use noisyor::Error as E;
        match self {
            CliError::Core(E::CapExceeded { .. }) => 3,
            CliError::Core(E::NumericalBreakdown(_) | E::Internal(_)) => 1,
            CliError::Core(_) | CliError::Invalid(_) => 2,
            CliError::Io { .. } => 1,
            CliError::NotConverged => 4,
        }
    }
}

type CliResult<T> = Result<T, CliError>;

fn read(path: &Path) -> CliResult<Vec<u8>> {
    fs::read(path).map_err(|source| CliError::Io {
        path: path.to_owned(),
        source,
    })
}

fn write(path: &Path, bytes: &[u8]) -> CliResult<()> {
    fs::write(path, bytes).map_err(|source| CliError::Io {
        path: path.to_owned(),
        source,
    })
}

fn load_case(files: &CaseFiles) -> CliResult<(NoisyOrNetwork, Evidence)> {
    let net = load_network(&read(&files.network)?)?;
    let evidence = Evidence::from_json(&read(&files.case)?)?;
    evidence.check(&net)?;
    Ok((net, evidence))
}

fn json<T: Serialize>(value: &T) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("output serializes");
    s.push('\n');
    s
}

impl Common {
    fn spec(&self, evidence: &Evidence, mode: ModeName) -> CaseSpec {
        CaseSpec {
            budget: self.budget.unwrap_or_else(|| evidence.positive.len().min(4)),
            family: self.family,
            scheduler: self.scheduler,
            mode,
            seed: self.seed,
            tol: self.tol,
            max_iter: self.max_iter,
            ..CaseSpec::default()
        }
    }

    fn optimizer_config(&self) -> OptimizerConfig {
        OptimizerConfig {
            tol: self.tol,
            max_iter: self.max_iter,
            ..OptimizerConfig::default()
        }
    }
}

fn generate(c: &Common, a: &GenerateArgs) -> CliResult<String> {
    let preset = match a.preset {
        PresetName::Desk => {
            let mut p = Preset::desk(a.diseases, a.positive.unwrap_or(8));
            if let Some(n) = a.negative {
                p.case.n_negative = n;
            }
            p
        }
        PresetName::Full => Preset::full(a.positive.unwrap_or(30), a.negative.unwrap_or(20)),
    };
    let net = generate_synthetic(&preset.network, c.seed)?;
    let evidence = generate_case(&net, &preset.case, c.seed.wrapping_add(0x5eed))?;
    write(&a.network, &save_network(&net))?;
    write(&a.case, &evidence.to_json())?;
    #[derive(Serialize)]
    struct Summary<'a> {
        preset: &'a Preset,
        seed: u64,
        positive: &'a BTreeSet<usize>,
        negative: &'a BTreeSet<usize>,
    }
    Ok(json(&Summary {
        preset: &preset,
        seed: c.seed,
        positive: &evidence.positive,
        negative: &evidence.negative,
    }))
}

fn infer(c: &Common, a: &InferArgs) -> CliResult<(String, bool)> {
    let (net, evidence) = load_case(&a.files)?;
    let spec = CaseSpec {
        sampler_samples: a.sampler_samples,
        exact_limit: a.exact_limit,
        ..c.spec(&evidence, a.mode)
    };
    let report = run_case(&net, &evidence, &spec, !c.deterministic)?;
    let out = match c.format.unwrap_or(Format::Json) {
        Format::Json => json(&report),
        Format::Csv => report.to_csv(),
    };
    Ok((out, report.converged()))
}

#[derive(Serialize)]
struct Tagged<T> {
    instance: u64,
    #[serde(flatten)]
    row: T,
}

fn bench(c: &Common, a: &BenchArgs) -> CliResult<String> {
    if a.instances == 0 {
        return Err(CliError::Invalid("--instances must be >= 1".into()));
    }
    let preset = Preset::desk(a.diseases, a.positive);
    let config = c.optimizer_config();
    let budget = c.budget.unwrap_or(a.positive.min(4));
    let seeds: Vec<u64> = (0..a.instances).map(|i| c.seed.wrapping_add(i)).collect();
    let format = c.format.unwrap_or(Format::Csv);
    let instance = |s: u64| -> CliResult<Instance> { Ok(preset.instance(s)?) };

    // Rows are collected in seed order whatever the thread count.
    fn sweep<T: Send>(seeds: &[u64], f: impl Fn(u64) -> CliResult<Vec<T>> + Sync) -> CliResult<Vec<Tagged<T>>> {
        let per: Vec<Vec<Tagged<T>>> = seeds
            .par_iter()
            .map(|&s| Ok(f(s)?.into_iter().map(|row| Tagged { instance: s, row }).collect()))
            .collect::<CliResult<_>>()?;
        Ok(per.into_iter().flatten().collect())
    }
    fn emit<T: Serialize>(format: Format, rows: &[Tagged<T>], header: &str, f: impl Fn(&T) -> Vec<String>) -> String {
        match format {
            Format::Json => json(&rows),
            Format::Csv => to_csv(&format!("instance,{header}"), rows, |t| {
                let mut v = vec![t.instance.to_string()];
                v.extend(f(&t.row));
                v
            }),
        }
    }

    Ok(match a.experiment {
        Experiment::BoundCurve => {
            let budgets = if a.budgets.is_empty() {
                (0..=a.positive).collect()
            } else {
                a.budgets.clone()
            };
            let rows = sweep(&seeds, |s| {
                Ok(bound_curve_experiment(&instance(s)?, &budgets, a.random_orders, s, &config)?)
            })?;
            emit(format, &rows, "budget,delta_log_bound,random_mean,random_sd", |r| {
                vec![
                    r.budget.to_string(),
                    r.delta_log_bound.to_string(),
                    r.random_mean.to_string(),
                    r.random_sd.to_string(),
                ]
            })
        }
        Experiment::Partial => {
            let rows = sweep(&seeds, |s| Ok(vec![partial_comparison(&instance(s)?, s, budget, &config)?]))?;
            emit(
                format,
                &rows,
                "variational_area,partial_area,variational_false_negatives,partial_false_negatives",
                |r| {
                    vec![
                        r.variational_area.to_string(),
                        r.partial_area.to_string(),
                        r.variational_false_negatives.to_string(),
                        r.partial_false_negatives.to_string(),
                    ]
                },
            )
        }
        Experiment::TimeAccuracy => {
            let matching = if c.deterministic {
                Matching::Samples(a.samples)
            } else {
                Matching::WallClock
            };
            let rows = sweep(&seeds, |s| {
                Ok(vec![time_accuracy(&instance(s)?, s, budget, a.top_k, matching, &config)?])
            })?;
            emit(
                format,
                &rows,
                "variational_correlation,sampler_correlation,sampler_samples,variational_s,sampler_s",
                |r| {
                    vec![
                        opt_field(r.variational_correlation),
                        opt_field(r.sampler_correlation),
                        r.sampler_samples.to_string(),
                        opt_field(r.variational_s),
                        opt_field(r.sampler_s),
                    ]
                },
            )
        }
        Experiment::Ranking => {
            let rows = sweep(&seeds, |s| {
                Ok(vec![ranking_comparison(&instance(s)?, s, budget, a.samples, &config)?])
            })?;
            emit(format, &rows, "variational_area,sampler_area", |r| {
                vec![r.variational_area.to_string(), r.sampler_area.to_string()]
            })
        }
        Experiment::Correlation => {
            let budgets = if a.budgets.is_empty() {
                vec![4, 6, 8]
            } else {
                a.budgets.clone()
            };
            let rows = sweep(&seeds, |s| Ok(budget_correlations(&instance(s)?, &budgets, a.top_k, &config)?))?;
            emit(format, &rows, "budget,correlation", |r| {
                vec![r.budget.to_string(), opt_field(r.correlation)]
            })
        }
        Experiment::Intervals => {
            let rows = sweep(&seeds, |s| {
                let inst = instance(s)?;
                let spec = CaseSpec {
                    seed: s,
                    ..c.spec(&inst.evidence, ModeName::Staged)
                };
                Ok(vec![interval_summary(&inst, &CaseSpec { budget, ..spec })?])
            })?;
            let bins: Vec<String> = (0..10).map(|k| format!("w{k}")).collect();
            emit(
                format,
                &rows,
                &format!("vacuous,mean_width,contained,{}", bins.join(",")),
                |r| {
                    let mut v = vec![r.vacuous.to_string(), r.mean_width.to_string(), r.contained.to_string()];
                    v.extend(r.histogram.iter().map(|h| h.to_string()));
                    v
                },
            )
        }
    })
}

fn posterior_file(path: &Path, key: &str) -> CliResult<Vec<f64>> {
    let value: Value = serde_json::from_slice(&read(path)?)
        .map_err(|e| CliError::Invalid(format!("{}: {e}", path.display())))?;
    let mut node = &value;
    if !node.is_array() {
        for part in key.split('.') {
            node = node
                .get(part)
                .ok_or_else(|| CliError::Invalid(format!("{}: no field {key}", path.display())))?;
        }
    }
    serde_json::from_value(node.clone())
        .map_err(|e| CliError::Invalid(format!("{}: {key} is not a list of numbers: {e}", path.display())))
}

fn rank(c: &Common, a: &RankArgs) -> CliResult<String> {
    let reference = posterior_file(&a.reference, &a.key)?;
    let approx = posterior_file(&a.approx, &a.key)?;
    let curve = ranking_curve(&reference, &approx, a.n_max.unwrap_or(reference.len()))?;
    #[derive(Serialize)]
    struct Out<'a> {
        #[serde(flatten)]
        curve: &'a RankingCurve,
        false_positive_area: usize,
    }
    Ok(match c.format.unwrap_or(Format::Csv) {
        Format::Csv => curve.to_csv(),
        Format::Json => json(&Out {
            curve: &curve,
            false_positive_area: curve.false_positive_area(),
        }),
    })
}

fn sample(c: &Common, a: &SampleArgs) -> CliResult<String> {
    let (net, evidence) = load_case(&a.files)?;
    let budget = match a.seconds {
        Some(_) if c.deterministic => {
            return Err(CliError::Invalid("--seconds is not reproducible; drop it or --deterministic".into()))
        }
        Some(s) if s > 0.0 && s.is_finite() => SampleBudget::WallClock(Duration::from_secs_f64(s)),
        Some(s) => return Err(CliError::Invalid(format!("--seconds must be > 0, got {s}"))),
        None => SampleBudget::Samples(a.samples),
    };
    let priors = noisyor::exact::absorb_negative(&net, &evidence.negative)?;
    let config = SamplerConfig {
        seed: c.seed,
        budget,
        markov_blanket_scoring: !a.no_markov_blanket,
        self_importance: !a.no_self_importance,
        ..SamplerConfig::default()
    };
    let est = run_sampler(&net, &priors, &evidence.positive, &config)?;
    Ok(match c.format.unwrap_or(Format::Json) {
        Format::Json => json(&est),
        Format::Csv => {
            let mut out = String::from("disease,marginal\n");
            for (j, m) in est.marginals.iter().enumerate() {
                out.push_str(&format!("{j},{m}\n"));
            }
            out
        }
    })
}

/// Sampler output as read back; a degenerate run's log-likelihood is null.
#[derive(Deserialize)]
struct EstimateFile {
    marginals: Vec<f64>,
    log_likelihood: Option<f64>,
    samples_used: u64,
    effective_sample_size: f64,
    degenerate: bool,
}

fn filter(c: &Common, a: &FilterArgs) -> CliResult<(String, bool)> {
    let (net, evidence) = load_case(&a.files)?;
    if !(a.slack >= 0.0) {
        return Err(CliError::Invalid(format!("--slack must be >= 0, got {}", a.slack)));
    }
    let spec = c.spec(&evidence, a.mode);
    let (fitted, _) = fit_case(&net, &evidence, &spec)?;
    let (upper, lower) = (fitted.upper.log_bound, fitted.lower.log_bound);

    #[derive(Serialize)]
    struct Verdict {
        file: String,
        log_likelihood: Option<f64>,
        accepted: bool,
    }
    let mut verdicts = Vec::new();
    for path in &a.estimates {
        let f: EstimateFile = serde_json::from_slice(&read(path)?)
            .map_err(|e| CliError::Invalid(format!("{}: {e}", path.display())))?;
        if f.marginals.len() != net.n_diseases() {
            return Err(CliError::Invalid(format!(
                "{}: {} marginals for {} diseases",
                path.display(),
                f.marginals.len(),
                net.n_diseases()
            )));
        }
        let est = SamplerEstimate {
            marginals: f.marginals,
            log_likelihood: f.log_likelihood.unwrap_or(f64::NEG_INFINITY),
            samples_used: f.samples_used,
            effective_sample_size: f.effective_sample_size,
            degenerate: f.degenerate,
        };
        verdicts.push(Verdict {
            file: path.display().to_string(),
            log_likelihood: f.log_likelihood,
            accepted: bound_filter(&est, upper, lower, a.slack),
        });
    }

    #[derive(Serialize)]
    struct Out {
        spec: CaseSpec,
        upper_log_bound: f64,
        lower_log_bound: f64,
        slack: f64,
        results: Vec<Verdict>,
    }
    let converged = fitted.upper.converged && fitted.lower.converged;
    let out = Out {
        spec,
        upper_log_bound: upper,
        lower_log_bound: lower,
        slack: a.slack,
        results: verdicts,
    };
    Ok(match c.format.unwrap_or(Format::Json) {
        Format::Json => (json(&out), converged),
        Format::Csv => (
            to_csv("file,log_likelihood,accepted", &out.results, |v| {
                vec![v.file.clone(), opt_field(v.log_likelihood), v.accepted.to_string()]
            }),
            converged,
        ),
    })
}

fn run(cli: &Cli) -> CliResult<()> {
    let c = &cli.common;
    if !(c.tol > 0.0) || c.max_iter == 0 {
        return Err(CliError::Invalid("--tol must be > 0 and --max-iter >= 1".into()));
    }
    let (out, converged) = match &cli.command {
        Command::Generate(a) => (generate(c, a)?, true),
        Command::Infer(a) => infer(c, a)?,
        Command::Bench(a) => {
            let mut pool = rayon::ThreadPoolBuilder::new();
            if c.deterministic {
                pool = pool.num_threads(1);
            }
            let pool = pool.build().map_err(|e| CliError::Invalid(e.to_string()))?;
            (pool.install(|| bench(c, a))?, true)
        }
        Command::Rank(a) => (rank(c, a)?, true),
        Command::Sample(a) => (sample(c, a)?, true),
        Command::Filter(a) => filter(c, a)?,
    };
    print!("{out}");
    if converged {
        Ok(())
    } else {
        Err(CliError::NotConverged)
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("noisyor: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
