use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use selbayes::harness::{run_experiment, run_two_stage_experiment, write_outputs, ExperimentConfig};
use selbayes::io::{read_regression_csv, PriorFile, ProblemFile};
use selbayes::linalg::select_columns;
use selbayes::posterior::{chain_summaries, run_sampler};
use selbayes::queries::{lasso_query, theoretical_lambda};
use selbayes::selprob::mc_selection_probability;
use selbayes::{Formulation, PseudoPosterior, Randomizer, SamplerConfig, Stage};
use serde::Serialize;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[derive(Parser)]
#[command(name = "selbayes", version, about = "Selective Bayesian inference after randomized queries")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Evaluate the log selection probability approximation at β.
    Selectprob(SelectprobArgs),
    /// Monte Carlo estimate of the selection probability at β.
    Oracle(OracleArgs),
    /// Draw from the selective posterior.
    Sample(SampleArgs),
    /// Run a simulation experiment from a TOML config.
    Simulate(SimulateArgs),
    /// Run a randomized query on data and write a problem file.
    #[command(subcommand)]
    Query(QueryCommand),
}

#[derive(Args)]
struct ProblemArgs {
    /// Problem file (JSON).
    #[arg(long)]
    problem: PathBuf,
    /// Override the formulation stored in the problem file.
    #[arg(long)]
    formulation: Option<Formulation>,
}

#[derive(Args)]
struct SelectprobArgs {
    #[command(flatten)]
    problem: ProblemArgs,
    /// Comma-separated parameter value.
    #[arg(long, allow_hyphen_values = true)]
    beta: String,
}

#[derive(Args)]
struct OracleArgs {
    #[command(flatten)]
    problem: ProblemArgs,
    #[arg(long, allow_hyphen_values = true)]
    beta: String,
    #[arg(long, default_value_t = 1_000_000)]
    draws: u64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct SampleArgs {
    #[command(flatten)]
    problem: ProblemArgs,
    /// `flat`, `gaussian:MEAN,SCALE` or `laplace_mixture:W,B1,B2`.
    #[arg(long, default_value = "flat")]
    prior: String,
    /// Sampler settings (TOML); flags below override single fields.
    #[arg(long)]
    sampler: Option<PathBuf>,
    #[arg(long)]
    iterations: Option<usize>,
    #[arg(long)]
    burn_in: Option<usize>,
    #[arg(long)]
    step_size: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    mala: bool,
    /// Sample without the selection adjustment.
    #[arg(long)]
    unadjusted: bool,
    /// Comma-separated starting point; defaults to the selective MAP.
    #[arg(long, allow_hyphen_values = true)]
    init: Option<String>,
    #[arg(long, default_value_t = 0.9)]
    level: f64,
    /// Output directory for chain.csv and summary.json.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct SimulateArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Also compare against the two-stage variant of an ms_lasso query.
    #[arg(long)]
    two_stage: bool,
}

#[derive(Subcommand)]
enum QueryCommand {
    /// Randomized Lasso on a CSV data set.
    Lasso(LassoArgs),
}

#[derive(Args)]
struct LassoArgs {
    #[arg(long)]
    data: PathBuf,
    /// Name of the response column; every other column is a predictor.
    #[arg(long)]
    response: String,
    /// Penalty level; defaults to the theoretical value.
    #[arg(long)]
    lambda: Option<f64>,
    /// Ridge term; defaults to 1/√n.
    #[arg(long)]
    epsilon: Option<f64>,
    /// Randomization scale, in units of σ.
    #[arg(long, default_value_t = 1.0)]
    tau: f64,
    #[arg(long, default_value_t = 1.0)]
    sigma: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value = "primal_full")]
    formulation: Formulation,
    /// Where to write the problem file of the selected model.
    #[arg(long)]
    out: PathBuf,
}

fn parse_vector(s: &str) -> Result<DVector> {
    let v = s
        .split(',')
        .map(|t| t.trim().parse::<f64>().with_context(|| format!("`{t}` is not a number")))
        .collect::<Result<Vec<_>>>()?;
    Ok(DVector::from_vec(v))
}

type DVector = nalgebra::DVector<f64>;

fn parse_prior(s: &str) -> Result<PriorFile> {
    let (kind, args) = s.split_once(':').unwrap_or((s, ""));
    let nums = || parse_vector(args).map(|v| v.as_slice().to_vec());
    Ok(match kind {
        "flat" => PriorFile::Flat,
        "gaussian" => match nums()?.as_slice() {
            [mean, scale] => PriorFile::Gaussian { mean: *mean, scale: *scale },
            _ => bail!("gaussian prior takes MEAN,SCALE"),
        },
        "laplace_mixture" => match nums()?.as_slice() {
            [w, b1, b2] => PriorFile::LaplaceMixture { w: *w, b1: *b1, b2: *b2 },
            _ => bail!("laplace_mixture prior takes W,B1,B2"),
        },
        other => bail!("unknown prior `{other}`"),
    })
}

fn load(args: &ProblemArgs) -> Result<(ProblemFile, selbayes::NormalizerProblem)> {
    let mut file = ProblemFile::from_path(&args.problem).with_context(|| format!("reading {}", args.problem.display()))?;
    if let Some(f) = args.formulation {
        file.formulation = f;
    }
    let problem = file.to_problem()?;
    Ok((file, problem))
}

fn print_json<T: Serialize>(value: &T) -> Result<()> {
    let mut out = std::io::stdout().lock();
    serde_json::to_writer_pretty(&mut out, value)?;
    writeln!(out)?;
    Ok(())
}

#[derive(Serialize)]
struct SelectprobOutput {
    value: f64,
    s_star: Vec<f64>,
    iterations: usize,
    converged: bool,
    gradient_norm: f64,
    formulation: Formulation,
}

fn selectprob(args: SelectprobArgs) -> Result<()> {
    let (_, problem) = load(&args.problem)?;
    let res = problem.solve(&parse_vector(&args.beta)?)?;
    print_json(&SelectprobOutput {
        value: res.value,
        s_star: res.optimal_s.iter().copied().collect(),
        iterations: res.iterations,
        converged: res.converged,
        gradient_norm: res.gradient_norm,
        formulation: res.formulation,
    })
}

fn oracle(args: OracleArgs) -> Result<()> {
    let (_, problem) = load(&args.problem)?;
    let est = mc_selection_probability(&problem, &parse_vector(&args.beta)?, args.draws, args.seed)?;
    print_json(&est)
}

#[derive(Serialize)]
struct SampleSummary {
    mean: Vec<f64>,
    ci_lower: Vec<f64>,
    ci_upper: Vec<f64>,
    ess_estimate: Vec<f64>,
    level: f64,
    step_size: f64,
    acceptance_rate: f64,
    divergent: usize,
    kept_draws: usize,
}

fn sample(args: SampleArgs) -> Result<()> {
    let (file, problem) = load(&args.problem)?;
    let prior = parse_prior(&args.prior)?.to_prior()?;
    let mut pp = PseudoPosterior::new(prior, problem, file.observed()?)?;
    if args.unadjusted {
        pp = pp.unadjusted();
    }
    let mut config = match &args.sampler {
        Some(path) => toml::from_str::<SamplerConfig>(&fs::read_to_string(path)?).with_context(|| format!("parsing {}", path.display()))?,
        None => SamplerConfig::default(),
    };
    if let Some(v) = args.iterations {
        config.iterations = v;
    }
    if let Some(v) = args.burn_in {
        config.burn_in = v;
    }
    if args.step_size.is_some() {
        config.step_size = args.step_size;
    }
    if let Some(v) = args.seed {
        config.seed = v;
    }
    config.mala |= args.mala;
    let init = match &args.init {
        Some(s) => parse_vector(s)?,
        None => pp.selective_map(&DVector::zeros(pp.dim()), 1e-8)?,
    };
    let chain = run_sampler(&pp, &init, &config)?;
    let summaries = chain_summaries(&chain, args.level)?;

    fs::create_dir_all(&args.out)?;
    write_chain(&args.out.join("chain.csv"), &chain)?;
    let summary = SampleSummary {
        mean: summaries.iter().map(|s| s.mean).collect(),
        ci_lower: summaries.iter().map(|s| s.lower).collect(),
        ci_upper: summaries.iter().map(|s| s.upper).collect(),
        ess_estimate: summaries.iter().map(|s| s.ess).collect(),
        level: args.level,
        step_size: chain.step_size,
        acceptance_rate: chain.acceptance_rate(),
        divergent: chain.divergent_count(),
        kept_draws: chain.kept().nrows(),
    };
    fs::write(args.out.join("summary.json"), serde_json::to_string_pretty(&summary)? + "\n")?;
    print_json(&summary)
}

fn write_chain(path: &Path, chain: &selbayes::ChainResult) -> Result<()> {
    let kept = chain.kept();
    let mut w = std::io::BufWriter::new(fs::File::create(path)?);
    let header: Vec<String> = std::iter::once("iteration".to_string()).chain((0..kept.ncols()).map(|j| format!("beta_{j}"))).collect();
    writeln!(w, "{}", header.join(","))?;
    for i in 0..kept.nrows() {
        write!(w, "{}", chain.burn_in + i)?;
        for j in 0..kept.ncols() {
            write!(w, ",{:?}", kept[(i, j)])?;
        }
        writeln!(w)?;
    }
    Ok(())
}

fn simulate(args: SimulateArgs) -> Result<()> {
    let cfg = ExperimentConfig::from_file(&args.config).with_context(|| format!("reading {}", args.config.display()))?;
    let report = if args.two_stage { run_two_stage_experiment(&cfg)? } else { run_experiment(&cfg)? };
    write_outputs(&args.out, &cfg, &report)?;
    print!("{}", report.table.render());
    Ok(())
}

#[derive(Serialize)]
struct LassoOutput {
    selected: Vec<String>,
    #[serde(flatten)]
    record: selbayes::queries::OutcomeRecord,
    problem: PathBuf,
}

fn query_lasso(args: LassoArgs) -> Result<()> {
    let (x, y, names) = read_regression_csv(&args.data, &args.response)?;
    let (n, p) = x.shape();
    let lambda = match args.lambda {
        Some(l) => l,
        None => theoretical_lambda(&x, args.sigma, 2000, args.seed)?,
    };
    let epsilon = args.epsilon.unwrap_or(1.0 / (n as f64).sqrt());
    let randomizer = Randomizer::isotropic(p, args.tau * args.sigma)?;
    let mut rng = ChaCha8Rng::seed_from_u64(args.seed);
    let omega = randomizer.sample(&mut rng);
    let q = lasso_query(&y, &x, lambda, epsilon, &omega)?;
    if q.outcome.is_empty() {
        bail!("the randomized Lasso selected no variables");
    }
    let stage = Stage::from_query(&q, &randomizer)?;
    let x_e = select_columns(&x, &q.outcome.active);
    let file = ProblemFile::linear(args.formulation, &x_e, args.sigma, &[stage], Some(&y));
    fs::write(&args.out, serde_json::to_string_pretty(&file)? + "\n")?;
    print_json(&LassoOutput {
        selected: q.outcome.active.iter().map(|&j| names[j].clone()).collect(),
        record: q.outcome.record(lambda, epsilon, args.tau * args.sigma),
        problem: args.out,
    })
}

fn main() -> Result<()> {
    env_logger::init();
    match Cli::parse().command {
        Command::Selectprob(a) => selectprob(a),
        Command::Oracle(a) => oracle(a),
        Command::Sample(a) => sample(a),
        Command::Simulate(a) => simulate(a),
        Command::Query(QueryCommand::Lasso(a)) => query_lasso(a),
    }
}
