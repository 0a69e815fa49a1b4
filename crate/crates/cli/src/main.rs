//! `pomdp-lab` command-line front end.
//!
//! Every report command writes `report.json` (stamped with tool version,
//! seed, config hash and the config itself) plus CSV metrics into `--out`,
//! or prints the report to stdout when `--out` is absent.

mod config;

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use pomdp_lab::basecamp::{learn, ParamsMode};
use pomdp_lab::diagnostics::{contraction_profile, exact_optimal_value, exact_policy_value, tilde_mdp};
use pomdp_lab::fixtures::{self, Structure};
use pomdp_lab::margin::{observability_margin_with, MarginMode, MAX_EXACT_STATES};
use pomdp_lab::model::{validate_model, ModelFile, PomdpModel};
use pomdp_lab::policy::GeneralPolicy;
use pomdp_lab::seed::SeedSpec;
use pomdp_lab::simulator::{empirical_value, SimulatedEnv};
use pomdp_lab::spanner::{verify_spanner, zmdp_spanner};
use pomdp_lab::zmdp::{linear_opt, obs_visitation};
use pomdp_lab::Error;
use rand::Rng;
use serde::Serialize;
use sha2::{Digest, Sha256};

use config::ExperimentConfig;

pub const REPORT_FORMAT_VERSION: u32 = 1;

/// Random reward directions probed by `spanner-check`.
const SPANNER_CHECK_DIRECTIONS: usize = 200;

#[derive(Debug)]
pub struct CliError {
    code: u8,
    kind: &'static str,
    message: String,
}

impl CliError {
    pub fn config(message: impl Into<String>) -> Self {
        CliError {
            code: 2,
            kind: "config",
            message: message.into(),
        }
    }

    fn validation(message: impl Into<String>) -> Self {
        CliError {
            code: 3,
            kind: "validation",
            message: message.into(),
        }
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        let (code, kind) = match &e {
            Error::InvalidParams(_) | Error::InvalidPolicy(_) | Error::Json(_) | Error::Io(_) | Error::Dump(_) => {
                (2, "config")
            }
            Error::InvalidModel(_) => (3, "validation"),
            Error::DeskScale(_) | Error::ExpansionLimit { .. } | Error::RejectionBudget(_) => (4, "desk_scale"),
            Error::Index(_) | Error::Lp(_) | Error::NonFiniteOracle => (5, "internal"),
        };
        CliError {
            code,
            kind,
            message: e.to_string(),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::from(Error::Io(e))
    }
}

impl From<csv::Error> for CliError {
    fn from(e: csv::Error) -> Self {
        CliError {
            code: 5,
            kind: "internal",
            message: e.to_string(),
        }
    }
}

type CliResult<T> = std::result::Result<T, CliError>;

#[derive(Parser)]
#[command(name = "pomdp-lab", version, about = "Learning and diagnostics for observable tabular POMDPs")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a random model with a prescribed observability margin.
    Gen(GenArgs),
    /// Check a model file and report its observability margins.
    Validate(Common),
    /// Exact optimal value by belief-space backward induction.
    Plan(Common),
    /// Run the learner and report the selected policy.
    Learn(Common),
    /// Evaluate a saved policy by simulation (and exactly when feasible).
    Eval(Common),
    /// Belief contraction profile over window lengths.
    Contract(Common),
    /// Build a spanner on the belief-seeded Z-MDP and verify its coefficients.
    SpannerCheck(Common),
}

#[derive(Clone, Copy, ValueEnum)]
enum StructureArg {
    NoisyPermutation,
    Random,
    /// Fully observable: `O = S`, identity emissions; ignores `--gamma`.
    Identity,
}

#[derive(Args)]
struct GenArgs {
    #[arg(long = "states", short = 'S')]
    states: usize,
    #[arg(long = "actions", short = 'A')]
    actions: usize,
    #[arg(long = "observations", short = 'O')]
    observations: Option<usize>,
    #[arg(long = "horizon", short = 'H')]
    horizon: usize,
    #[arg(long, default_value_t = 1.0)]
    gamma: f64,
    #[arg(long, value_enum, default_value = "noisy-permutation")]
    structure: StructureArg,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output model file; stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    Theoretical,
    Practical,
}

#[derive(Args)]
struct Common {
    #[arg(long)]
    model: Option<PathBuf>,
    /// JSON config, or a previous report whose embedded config is reused.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory for `report.json` and CSV metrics.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, value_enum)]
    params_mode: Option<ModeArg>,
    #[arg(long = "L")]
    window: Option<usize>,
    #[arg(long = "N0")]
    n0: Option<u64>,
    #[arg(long = "N1")]
    n1: Option<u64>,
    #[arg(long = "K")]
    iterations: Option<usize>,
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    beta: Option<f64>,
    #[arg(long)]
    episodes: Option<u64>,
    #[arg(long)]
    c_star: Option<f64>,
    #[arg(long)]
    gamma: Option<f64>,
    /// Step `h` for contraction and spanner diagnostics (default `H`).
    #[arg(long)]
    step: Option<usize>,
    /// Comma-separated window lengths for `contract`.
    #[arg(long, value_delimiter = ',')]
    windows: Option<Vec<usize>>,
    /// Policy file for `eval` and `contract`.
    #[arg(long)]
    policy: Option<PathBuf>,
}

impl Common {
    fn resolve(&self) -> CliResult<ExperimentConfig> {
        let base = match &self.config {
            Some(p) => ExperimentConfig::load(p)?,
            None => ExperimentConfig::default(),
        };
        let flags = ExperimentConfig {
            model: self.model.clone(),
            seed: self.seed,
            params_mode: self.params_mode.map(|m| match m {
                ModeArg::Theoretical => ParamsMode::Theoretical,
                ModeArg::Practical => ParamsMode::Practical,
            }),
            window: self.window,
            n0: self.n0,
            n1: self.n1,
            iterations: self.iterations,
            alpha: self.alpha,
            beta: self.beta,
            episodes: self.episodes,
            c_star: self.c_star,
            gamma: self.gamma,
            step: self.step,
            windows: self.windows.clone(),
            policy: self.policy.clone(),
        };
        let cfg = base.merge(flags);
        cfg.model_path()?;
        if let Some(p) = &cfg.policy {
            if !p.exists() {
                return Err(CliError::config(format!("policy file {} does not exist", p.display())));
            }
        }
        Ok(cfg)
    }
}

#[derive(Serialize)]
struct Report<'a, T: Serialize> {
    format_version: u32,
    tool_version: &'static str,
    command: &'static str,
    seed: u64,
    config_hash: String,
    model_sha256: String,
    config: &'a ExperimentConfig,
    result: T,
}

#[derive(Serialize)]
struct ErrorReport<'a> {
    error: &'a str,
    message: &'a str,
    exit_code: u8,
}

struct Session {
    command: &'static str,
    config: ExperimentConfig,
    model_sha256: String,
    out: Option<PathBuf>,
}

impl Session {
    fn new(command: &'static str, args: &Common) -> CliResult<(Self, String)> {
        let config = args.resolve()?;
        let text = std::fs::read_to_string(config.model_path()?)?;
        let model_sha256 = hex::encode(Sha256::digest(text.as_bytes()));
        if let Some(dir) = &args.out {
            std::fs::create_dir_all(dir)?;
        }
        Ok((
            Session {
                command,
                config,
                model_sha256,
                out: args.out.clone(),
            },
            text,
        ))
    }

    fn load_model(text: &str) -> CliResult<PomdpModel> {
        let file: ModelFile =
            serde_json::from_str(text).map_err(|e| CliError::validation(format!("model file: {e}")))?;
        Ok(PomdpModel::from_file(file)?)
    }

    fn write_report<T: Serialize>(&self, result: T) -> CliResult<()> {
        let report = Report {
            format_version: REPORT_FORMAT_VERSION,
            tool_version: env!("CARGO_PKG_VERSION"),
            command: self.command,
            seed: self.config.seed(),
            config_hash: self.config.hash(),
            model_sha256: self.model_sha256.clone(),
            config: &self.config,
            result,
        };
        let text = serde_json::to_string_pretty(&report).map_err(Error::from)? + "\n";
        match &self.out {
            Some(dir) => std::fs::write(dir.join("report.json"), text)?,
            None => {
                use std::io::Write;
                let _ = std::io::stdout().lock().write_all(text.as_bytes());
            }
        }
        Ok(())
    }

    /// Writes a CSV with a header row; skipped without `--out`.
    fn write_csv<R: Serialize>(&self, name: &str, rows: &[R]) -> CliResult<()> {
        let Some(dir) = &self.out else { return Ok(()) };
        let mut w = csv::Writer::from_path(dir.join(name))?;
        for r in rows {
            w.serialize(r)?;
        }
        w.flush()?;
        Ok(())
    }

    fn out_path(&self, name: &str) -> Option<PathBuf> {
        self.out.as_ref().map(|d| d.join(name))
    }
}

/// Exact-oracle results degrade to `None` beyond desk scale.
fn feasible<T>(r: pomdp_lab::Result<T>) -> CliResult<Option<T>> {
    match r {
        Ok(v) => Ok(Some(v)),
        Err(Error::DeskScale(_) | Error::ExpansionLimit { .. }) => Ok(None),
        Err(e) => Err(e.into()),
    }
}

fn load_policy(path: Option<&Path>) -> CliResult<GeneralPolicy> {
    match path {
        Some(p) => Ok(GeneralPolicy::load(p)?),
        None => Ok(GeneralPolicy::UniformRandom),
    }
}

fn cmd_gen(args: &GenArgs) -> CliResult<()> {
    let mut rng = SeedSpec::new(args.seed, "gen", 0).stream("model");
    let o = args.observations.unwrap_or(args.states);
    let model = match args.structure {
        StructureArg::NoisyPermutation => {
            fixtures::generate(&mut rng, Structure::NoisyPermutation, args.states, args.actions, o, args.horizon, args.gamma)?
        }
        StructureArg::Random => {
            fixtures::generate(&mut rng, Structure::Random, args.states, args.actions, o, args.horizon, args.gamma)?
        }
        StructureArg::Identity => fixtures::identity_observation(&mut rng, args.states, args.actions, args.horizon)?,
    };
    let report = validate_model(&model);
    if !report.pass {
        return Err(CliError {
            code: 5,
            kind: "internal",
            message: "generated model failed validation".into(),
        });
    }
    match &args.out {
        Some(p) => model.save(p)?,
        None => println!("{}", serde_json::to_string_pretty(&model.to_file()).map_err(Error::from)?),
    }
    Ok(())
}

#[derive(Serialize)]
struct MarginRow {
    step: usize,
    gamma: f64,
    mode: MarginMode,
}

fn cmd_validate(args: &Common) -> CliResult<()> {
    let (session, text) = Session::new("validate", args)?;
    let file: ModelFile = serde_json::from_str(&text).map_err(|e| CliError::validation(format!("model file: {e}")))?;
    let raw = PomdpModel::from_file_unchecked(file);
    let report = validate_model(&raw);
    let mut margins = vec![];
    if report.pass {
        let model = PomdpModel::from_file(raw.to_file())?;
        let mode = if model.base_states() > MAX_EXACT_STATES {
            MarginMode::SpectralLowerBound
        } else {
            MarginMode::Exact
        };
        for h in 2..=model.horizon {
            let m = observability_margin_with(&model, h, mode)?;
            margins.push(MarginRow {
                step: h,
                gamma: m.gamma,
                mode: m.mode,
            });
        }
    }
    let pass = report.pass;
    session.write_csv("issues.csv", &report.issues)?;
    session.write_csv("margins.csv", &margins)?;
    session.write_report(serde_json::json!({ "validation": report, "margins": margins }))?;
    if pass {
        Ok(())
    } else {
        Err(CliError::validation("model failed validation"))
    }
}

fn cmd_plan(args: &Common) -> CliResult<()> {
    let (session, text) = Session::new("plan", args)?;
    let model = Session::load_model(&text)?;
    let (value, policy) = exact_optimal_value(&model)?;
    let policy = GeneralPolicy::atom(policy);
    if let Some(p) = session.out_path("policy.json") {
        policy.save(p)?;
    }
    #[derive(Serialize)]
    struct Row {
        optimal_value: f64,
    }
    session.write_csv("plan.csv", &[Row { optimal_value: value }])?;
    session.write_report(serde_json::json!({ "optimal_value": value, "policy": policy }))
}

#[derive(Serialize)]
struct IterationRow {
    iteration: usize,
    step: usize,
    spanner_rank: usize,
    diverted_fraction: f64,
    model_value: f64,
    candidate_value: f64,
}

#[derive(Serialize)]
struct ExactComparison {
    optimal_value: f64,
    policy_value: f64,
    suboptimality: f64,
}

fn cmd_learn(args: &Common) -> CliResult<()> {
    let (session, text) = Session::new("learn", args)?;
    let model = Arc::new(Session::load_model(&text)?);
    let dims = (model.base_states(), model.n_actions(), model.base_obs(), model.horizon);
    let params = session.config.hyper_params(
        || Ok(pomdp_lab::margin::min_margin(&model)?),
        dims,
    )?;
    let env = SimulatedEnv::new(model.clone());
    let start = Instant::now();
    let report = learn(&env, &params, session.config.seed())?;
    eprintln!("learn finished in {:.2}s", start.elapsed().as_secs_f64());

    let learned = GeneralPolicy::atom(report.policy.clone());
    let exact = match feasible(exact_optimal_value(&model))? {
        Some((optimal_value, _)) => feasible(exact_policy_value(&model, &learned))?.map(|policy_value| ExactComparison {
            optimal_value,
            policy_value,
            suboptimality: optimal_value - policy_value,
        }),
        None => None,
    };
    if let Some(p) = session.out_path("policy.json") {
        learned.save(p)?;
    }
    let rows: Vec<IterationRow> = report
        .iterations
        .iter()
        .flat_map(|it| {
            it.spanner_ranks.iter().enumerate().map(move |(i, &rank)| IterationRow {
                iteration: it.iteration,
                step: i + 1,
                spanner_rank: rank,
                diverted_fraction: it.diverted_fraction,
                model_value: it.model_value,
                candidate_value: it.candidate_value,
            })
        })
        .collect();
    session.write_csv("iterations.csv", &rows)?;
    session.write_report(serde_json::json!({ "learn": report, "exact": exact }))
}

fn cmd_eval(args: &Common) -> CliResult<()> {
    let (session, text) = Session::new("eval", args)?;
    let model = Session::load_model(&text)?;
    let policy = load_policy(session.config.policy.as_deref())?;
    let episodes = session.config.episodes.unwrap_or(10_000);
    let empirical = empirical_value(&model, &policy, episodes, session.config.seed(), "eval")?;
    let exact = feasible(exact_policy_value(&model, &policy))?;
    #[derive(Serialize)]
    struct Row {
        episodes: u64,
        empirical_value: f64,
        exact_value: Option<f64>,
    }
    let row = Row {
        episodes,
        empirical_value: empirical,
        exact_value: exact,
    };
    session.write_csv("eval.csv", std::slice::from_ref(&row))?;
    session.write_report(row)
}

fn cmd_contract(args: &Common) -> CliResult<()> {
    let (session, text) = Session::new("contract", args)?;
    let model = Session::load_model(&text)?;
    let policy = load_policy(session.config.policy.as_deref())?;
    let h = session.config.step.unwrap_or(model.horizon);
    let windows = session.config.windows.clone().unwrap_or_else(|| vec![1, 2, 4, 6]);
    let episodes = session.config.episodes.unwrap_or(10_000);
    let profile = contraction_profile(&model, &policy, &model.b1, h, &windows, episodes, session.config.seed())?;
    session.write_csv("contraction.csv", &profile)?;
    session.write_report(serde_json::json!({ "step": h, "episodes": episodes, "profile": profile }))
}

fn cmd_spanner_check(args: &Common) -> CliResult<()> {
    let (session, text) = Session::new("spanner-check", args)?;
    let model = Session::load_model(&text)?;
    let l = session.config.window.unwrap_or(1);
    let h = session.config.step.unwrap_or(model.horizon);
    if h <= l || h > model.horizon {
        return Err(CliError::config(format!("spanner-check needs L < h <= H (h = {h}, L = {l})")));
    }
    let uniform = Arc::new(GeneralPolicy::UniformRandom);
    let zmdp = tilde_mdp(&model, &vec![uniform; model.horizon], l)?;
    let spanner = zmdp_spanner(&zmdp, h)?;

    // Vertices of the visitation polytope, reached by optimizing random directions.
    let mut rng = SeedSpec::new(session.config.seed(), "spanner-check", 0).stream("directions");
    let dim = zmdp.n_obs_ext();
    let points = (0..SPANNER_CHECK_DIRECTIONS)
        .map(|_| {
            let r: Vec<f64> = (0..dim).map(|_| rng.gen::<f64>() * 2.0 - 1.0).collect();
            let (pi, _) = linear_opt(&zmdp, &r, h)?;
            obs_visitation(&zmdp, &GeneralPolicy::atom(pi), h - l)
        })
        .collect::<pomdp_lab::Result<Vec<_>>>()?;
    let check = verify_spanner(&points, &spanner, spanner.lambda);
    #[derive(Serialize)]
    struct Row {
        step: usize,
        window: usize,
        rank: usize,
        calls: usize,
        points: usize,
        max_coefficient: f64,
        within_bound: bool,
    }
    let row = Row {
        step: h,
        window: l,
        rank: spanner.rank(),
        calls: spanner.calls,
        points: check.points,
        max_coefficient: check.max_coefficient,
        within_bound: check.within_bound,
    };
    session.write_csv("spanner.csv", std::slice::from_ref(&row))?;
    let within = check.within_bound;
    session.write_report(serde_json::json!({
        "summary": row,
        "check": check,
        "log_det_trace": spanner.log_det_trace,
    }))?;
    if within {
        Ok(())
    } else {
        Err(CliError {
            code: 5,
            kind: "internal",
            message: "spanner coefficients exceed the bound".into(),
        })
    }
}

fn configure_threads() -> CliResult<()> {
    if let Ok(v) = std::env::var("POMDP_LAB_THREADS") {
        let n: usize = v
            .parse()
            .map_err(|_| CliError::config(format!("POMDP_LAB_THREADS = {v:?} is not a thread count")))?;
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::config(e.to_string()))?;
    }
    Ok(())
}

fn run(cli: &Cli) -> CliResult<()> {
    configure_threads()?;
    match &cli.command {
        Command::Gen(a) => cmd_gen(a),
        Command::Validate(a) => cmd_validate(a),
        Command::Plan(a) => cmd_plan(a),
        Command::Learn(a) => cmd_learn(a),
        Command::Eval(a) => cmd_eval(a),
        Command::Contract(a) => cmd_contract(a),
        Command::SpannerCheck(a) => cmd_spanner_check(a),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let obj = ErrorReport {
                error: e.kind,
                message: &e.message,
                exit_code: e.code,
            };
            eprintln!("{}", serde_json::to_string(&obj).unwrap_or_else(|_| e.message.clone()));
            ExitCode::from(e.code)
        }
    }
}
