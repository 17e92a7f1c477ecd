mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use reasongraph::equivalence::EquivalenceError;
use reasongraph::gateway::{GatewayError, GatewayMode};
use reasongraph::pipeline::MatchStrategy;
use reasongraph::routing::Intervention;

use config::RunConfig;

/// Error in how the tool was invoked; exits with status 1.
#[derive(Debug)]
pub struct UsageError(String);

impl UsageError {
    pub fn new(msg: impl Into<String>) -> Self {
        Self(msg.into())
    }
}

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

#[derive(Parser, Debug)]
#[command(name = "reasongraph", version, about = "Graph-based confidence estimation for sampled reasoning chains")]
struct Cli {
    /// TOML run configuration; flags override its values.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Worker threads for per-question work (default: all cores).
    #[arg(long, global = true)]
    jobs: Option<usize>,
    /// Log verbosity (-v info, -vv debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Sample reasoning chains for each question through the gateway.
    Sample(SampleArgs),
    /// Build graphs and run estimators over a dataset.
    Score(ScoreArgs),
    /// Calibration metrics (AUROC, Brier, ECE) per estimator.
    Evaluate(EvaluateArgs),
    /// Simulate confidence-gated reflection or cascading.
    Route(RouteArgs),
    /// Print the reasoning graph of one question as JSON.
    DumpGraph(DumpGraphArgs),
}

#[derive(Args, Debug)]
struct GatewayArgs {
    #[arg(long, value_enum)]
    mode: Option<ModeArg>,
    #[arg(long)]
    fixture_dir: Option<PathBuf>,
    /// Also store live exchanges as fixtures here.
    #[arg(long)]
    record_dir: Option<PathBuf>,
    #[arg(long)]
    base_url: Option<String>,
    #[arg(long)]
    model: Option<String>,
    #[arg(long)]
    temperature: Option<f64>,
    #[arg(long)]
    max_in_flight: Option<usize>,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum ModeArg {
    Live,
    Fixture,
}

#[derive(Args, Debug)]
struct SampleArgs {
    /// JSONL with `question_id`, `question` and optional `gold_answer`.
    #[arg(long)]
    questions: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Chains per question.
    #[arg(short, long)]
    n: Option<usize>,
    #[command(flatten)]
    gateway: GatewayArgs,
}

#[derive(Args, Debug)]
struct ParamArgs {
    /// Comma-separated estimators, or `all`.
    #[arg(long, value_parser = config::parse_estimators)]
    estimators: Option<config::EstimatorList>,
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    beta: Option<f64>,
    #[arg(long)]
    gamma: Option<f64>,
    /// Maximum path length in edges.
    #[arg(long)]
    max_path_len: Option<usize>,
    /// Walks per answer for the sampled estimators.
    #[arg(long)]
    samples: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    max_nodes: Option<usize>,
    #[arg(long)]
    path_budget: Option<u64>,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum MatchArg {
    Exact,
    Normalized,
    Judge,
}

#[derive(Args, Debug)]
struct ScoreArgs {
    #[arg(long)]
    dataset: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long = "match", value_enum)]
    match_strategy: Option<MatchArg>,
    #[arg(long)]
    judge_cache: Option<PathBuf>,
    #[command(flatten)]
    params: ParamArgs,
    #[command(flatten)]
    gateway: GatewayArgs,
}

#[derive(Args, Debug)]
struct EvaluateArgs {
    #[arg(long)]
    dataset: Option<PathBuf>,
    /// Scores written by `score` (default: <out>/scores.json).
    #[arg(long)]
    scores: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    bins: Option<usize>,
    /// Print the metrics grid.
    #[arg(long)]
    table: bool,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum InterventionArg {
    Reflect,
    Cascade,
}

#[derive(Args, Debug)]
struct RouteArgs {
    /// Scores written by `score` (default: <out>/scores.json).
    #[arg(long)]
    scores: Option<PathBuf>,
    /// JSONL outcome fixtures.
    #[arg(long)]
    fixtures: PathBuf,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Estimator whose confidences drive selection.
    #[arg(long, default_value = "pathweight")]
    estimator: reasongraph::Estimator,
    /// Percentages of least-confident questions to intervene on.
    #[arg(short, long, value_delimiter = ',', default_values_t = reasongraph::routing::DEFAULT_K)]
    k: Vec<f64>,
    #[arg(long, value_enum, default_value = "reflect")]
    intervention: InterventionArg,
}

#[derive(Args, Debug)]
struct DumpGraphArgs {
    #[arg(long)]
    dataset: Option<PathBuf>,
    #[arg(long)]
    question_id: String,
    /// Dump the merged graph instead of the reasoning graph.
    #[arg(long)]
    merged: bool,
    #[arg(long = "match", value_enum)]
    match_strategy: Option<MatchArg>,
    /// Write here instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn set<T>(slot: &mut T, value: Option<T>) {
    if let Some(v) = value {
        *slot = v;
    }
}

impl GatewayArgs {
    fn apply(self, config: &mut RunConfig) {
        let g = &mut config.gateway;
        set(
            &mut g.mode,
            self.mode.map(|m| match m {
                ModeArg::Live => GatewayMode::Live,
                ModeArg::Fixture => GatewayMode::Fixture,
            }),
        );
        if self.fixture_dir.is_some() {
            g.fixture_dir = self.fixture_dir;
        }
        if self.record_dir.is_some() {
            g.record_dir = self.record_dir;
        }
        set(&mut g.base_url, self.base_url);
        set(&mut g.model_name, self.model);
        set(&mut g.temperature, self.temperature);
        set(&mut g.max_in_flight, self.max_in_flight);
    }
}

impl ParamArgs {
    fn apply(self, config: &mut RunConfig) {
        set(&mut config.estimators, self.estimators.map(|l| l.0));
        let p = &mut config.params;
        set(&mut p.alpha, self.alpha);
        set(&mut p.beta, self.beta);
        set(&mut p.gamma, self.gamma);
        set(&mut p.max_path_len, self.max_path_len);
        set(&mut p.sample_count, self.samples);
        set(&mut p.seed, self.seed);
        set(&mut p.max_nodes, self.max_nodes);
        set(&mut p.path_budget, self.path_budget);
    }
}

fn match_strategy(arg: MatchArg) -> MatchStrategy {
    match arg {
        MatchArg::Exact => MatchStrategy::Exact,
        MatchArg::Normalized => MatchStrategy::Normalized,
        MatchArg::Judge => MatchStrategy::Judge,
    }
}

fn override_path(slot: &mut Option<PathBuf>, value: Option<PathBuf>) {
    if value.is_some() {
        *slot = value;
    }
}

fn run(cli: Cli) -> anyhow::Result<()> {
    if let Some(jobs) = cli.jobs {
        if jobs == 0 {
            return Err(UsageError::new("--jobs must be at least 1").into());
        }
        rayon::ThreadPoolBuilder::new().num_threads(jobs).build_global()?;
    }
    let mut config = RunConfig::load(cli.config.as_deref())?;
    match cli.command {
        Command::Sample(args) => {
            override_path(&mut config.questions, args.questions);
            override_path(&mut config.out_dir, args.out);
            set(&mut config.samples_per_question, args.n);
            args.gateway.apply(&mut config);
            commands::sample(&config)
        }
        Command::Score(args) => {
            override_path(&mut config.dataset, args.dataset);
            override_path(&mut config.out_dir, args.out);
            set(&mut config.match_strategy, args.match_strategy.map(match_strategy));
            override_path(&mut config.judge_cache, args.judge_cache);
            args.params.apply(&mut config);
            args.gateway.apply(&mut config);
            commands::score(&config)
        }
        Command::Evaluate(args) => {
            override_path(&mut config.dataset, args.dataset);
            override_path(&mut config.out_dir, args.out);
            set(&mut config.bins, args.bins);
            commands::evaluate(&config, args.scores.as_deref(), args.table)
        }
        Command::Route(args) => {
            override_path(&mut config.out_dir, args.out);
            let intervention = match args.intervention {
                InterventionArg::Reflect => Intervention::Reflect,
                InterventionArg::Cascade => Intervention::Cascade,
            };
            let request = commands::RouteRequest {
                scores: args.scores,
                fixtures: args.fixtures,
                estimator: args.estimator,
                ks: args.k,
                intervention,
            };
            commands::route(&config, &request)
        }
        Command::DumpGraph(args) => {
            override_path(&mut config.dataset, args.dataset);
            set(&mut config.match_strategy, args.match_strategy.map(match_strategy));
            commands::dump_graph(&config, &args.question_id, args.merged, args.out.as_deref())
        }
    }
}

/// 1 usage, 3 gateway, 2 anything else (bad or missing data).
fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if cause.is::<UsageError>() {
            return 1;
        }
        if cause.is::<GatewayError>() || matches!(cause.downcast_ref(), Some(EquivalenceError::Gateway(_))) {
            return 3;
        }
    }
    2
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
