//! Command-line surface. Every command prints one document (JSON by
//! default, `--format plain` for a flat key/value listing). Agent indices
//! in output are 1-based; entry n+1 is the loss.
//!
//! Exit codes: 0 ok, 2 validation, 3 numerical, 4 check failure.

use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::{json, Value};

use crate::checks::{self, Suite, SuiteConfig};
use crate::delegation::{DelegationMatrix, WeightSource};
use crate::error::Error;
use crate::game::{
    best_response, br_dynamics, verify_equilibrium, DynamicsConfig, PreferenceProfile,
    DEFAULT_REGRET_TOL,
};
use crate::instance::{Instance, LoadError};
use crate::measures::{
    classic_power, mixed_strategy_power, power_eps, power_exact, power_series,
    standard_generalization, MeasureResult,
};
use crate::oracles::{enumerate_pure_support, grid_best_response, particle_estimate};

pub const EXIT_OK: u8 = 0;
pub const EXIT_VALIDATION: u8 = 2;
pub const EXIT_NUMERICAL: u8 = 3;
pub const EXIT_CHECK: u8 = 4;

#[derive(Debug, Parser)]
#[command(name = "liquid", version, about = "Voting power under fractional delegation")]
pub struct Cli {
    /// Worker threads for check suites (default: all cores).
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    #[arg(long, global = true, value_enum, default_value_t = Format::Json)]
    pub format: Format,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Json,
    Plain,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Voting power of every agent.
    Power(PowerArgs),
    /// Delegation game: dynamics, equilibrium check, best responses.
    Game {
        #[command(subcommand)]
        action: GameAction,
    },
    /// Randomized invariant suite.
    Check(CheckArgs),
    /// Independent reference computations.
    Oracle {
        #[command(subcommand)]
        action: OracleAction,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Measure {
    /// The penalized measure or its exact limit.
    V,
    /// Classic measure (self-shares 0 or 1 only).
    Classic,
    /// Masked power iteration on arbitrary matrices.
    Standard,
    /// Expected classic power over sampled pure delegations.
    Ms,
}

#[derive(Debug, Args)]
pub struct PowerArgs {
    pub file: PathBuf,
    /// Exact limit via a restricted solve (default).
    #[arg(long, conflicts_with_all = ["epsilon", "series"])]
    pub exact: bool,
    /// Penalized measure with this epsilon.
    #[arg(long, conflicts_with = "series")]
    pub epsilon: Option<f64>,
    /// Exact limit via the truncated series.
    #[arg(long)]
    pub series: bool,
    /// Convergence tolerance for iterative methods.
    #[arg(long, default_value_t = 1e-12)]
    pub tol: f64,
    /// Iteration cap for iterative methods.
    #[arg(long, default_value_t = 100_000)]
    pub kmax: usize,
    #[arg(long, value_enum, default_value_t = Measure::V)]
    pub measure: Measure,
}

#[derive(Debug, Args)]
pub struct GameArgs {
    pub file: PathBuf,
    /// Overrides the instance's epsilon.
    #[arg(long)]
    pub epsilon: Option<f64>,
    #[arg(long, default_value_t = 1000)]
    pub max_iters: usize,
    #[arg(long, default_value_t = DEFAULT_REGRET_TOL)]
    pub tol: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Subcommand)]
pub enum GameAction {
    /// Best-response dynamics from the instance's profile.
    Dynamics(GameArgs),
    /// Per-agent regrets of the instance's profile.
    Verify(GameArgs),
    /// Best vertex responses of one agent.
    BestResponse {
        #[command(flatten)]
        game: GameArgs,
        /// Agent index (1-based).
        #[arg(long)]
        agent: usize,
    },
}

#[derive(Debug, Args)]
pub struct CheckArgs {
    /// conservation, consistency, generalization, delegation,
    /// delta-delegation, limit or game-vertex.
    pub suite: String,
    /// Largest instance size.
    #[arg(long)]
    pub n: Option<usize>,
    #[arg(long)]
    pub trials: Option<usize>,
    #[arg(long, default_value_t = checks::DEFAULT_SEED)]
    pub seed: u64,
    /// Overrides the suite's pass threshold.
    #[arg(long)]
    pub tol: Option<f64>,
    /// Replay a single serialized instance instead of generating trials.
    #[arg(long)]
    pub instance: Option<PathBuf>,
    /// Write every failing instance into this directory.
    #[arg(long)]
    pub dump: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum OracleAction {
    /// Particle simulation of the penalized measure.
    Particles {
        file: PathBuf,
        #[arg(long)]
        epsilon: Option<f64>,
        #[arg(long, default_value_t = 0.01)]
        dt: f64,
        #[arg(long, default_value_t = 2000.0)]
        t_max: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Brute-force best response over a simplex grid.
    Grid {
        file: PathBuf,
        /// Agent index (1-based).
        #[arg(long)]
        agent: usize,
        #[arg(long)]
        epsilon: Option<f64>,
        #[arg(long, default_value_t = checks::GRID_STEP)]
        step: f64,
    },
    /// Every pure delegation in the support, with its probability.
    Enumerate { file: PathBuf },
}

#[derive(Debug)]
struct Failure {
    code: u8,
    message: String,
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = match e {
            Error::SolverFailure { .. } | Error::NoConvergence { .. } | Error::SupportTooLarge { .. } => {
                EXIT_NUMERICAL
            }
            _ => EXIT_VALIDATION,
        };
        Failure {
            code,
            message: e.to_string(),
        }
    }
}

impl From<LoadError> for Failure {
    fn from(e: LoadError) -> Self {
        Failure {
            code: EXIT_VALIDATION,
            message: e.to_string(),
        }
    }
}

fn invalid(message: impl Into<String>) -> Failure {
    Failure {
        code: EXIT_VALIDATION,
        message: message.into(),
    }
}

/// A document plus the exit code it should end with.
struct Outcome {
    doc: Value,
    code: u8,
}

impl From<Value> for Outcome {
    fn from(doc: Value) -> Self {
        Outcome { doc, code: EXIT_OK }
    }
}

/// Parses `args` (including the program name) and runs the command.
pub fn run<I, T>(args: I) -> u8
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_VALIDATION } else { EXIT_OK };
        }
    };
    if let Some(k) = cli.threads {
        if k == 0 {
            eprintln!("error: --threads must be positive");
            return EXIT_VALIDATION;
        }
        // A pool that is already set up (e.g. in-process tests) is fine.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(k).build_global();
    }
    match dispatch(&cli.command) {
        Ok(outcome) => {
            let mut out = std::io::stdout().lock();
            let text = match cli.format {
                Format::Json => serde_json::to_string_pretty(&outcome.doc).expect("documents serialize"),
                Format::Plain => plain(&outcome.doc),
            };
            let _ = writeln!(out, "{text}");
            outcome.code
        }
        Err(f) => {
            eprintln!("error: {}", f.message);
            f.code
        }
    }
}

fn dispatch(command: &Command) -> Result<Outcome, Failure> {
    match command {
        Command::Power(args) => cmd_power(args).map(Outcome::from),
        Command::Game { action } => cmd_game(action).map(Outcome::from),
        Command::Check(args) => cmd_check(args),
        Command::Oracle { action } => cmd_oracle(action).map(Outcome::from),
    }
}

fn load(path: &Path) -> Result<Instance, Failure> {
    Ok(Instance::load(path)?)
}

fn sum(xs: &[f64]) -> f64 {
    xs.iter().sum()
}

fn cmd_power(args: &PowerArgs) -> Result<Value, Failure> {
    let inst = load(&args.file)?;
    let (p, f) = (&inst.matrix, &inst.source);
    let n = p.n();
    match args.measure {
        Measure::V => {
            let r = if let Some(eps) = args.epsilon {
                power_eps(p, f, eps)?
            } else if args.series {
                let mut r = power_series(p, &f.values()[..n], args.tol, args.kmax)?;
                // the series never touches the loss entry's own weight
                let mut v = r.power.into_vec();
                v[n] += f.values()[n];
                r.power = crate::measures::PowerVector::new(v);
                r
            } else {
                power_exact(p, f)?
            };
            Ok(power_doc("v", &r, f, p))
        }
        Measure::Classic => {
            let v = classic_power(p)?;
            Ok(unit_doc("classic", v, json!({"kind": "classic"}), n))
        }
        Measure::Standard => {
            let s = standard_generalization(p, args.kmax, args.tol);
            if !s.converged {
                return Err(Error::NoConvergence {
                    k_used: s.k_used,
                    change: s.change,
                }
                .into());
            }
            let meta = json!({"kind": "standard_generalization", "k_used": s.k_used, "converged": s.converged});
            let mut doc = unit_doc("standard", s.power, meta, n);
            doc["residual"] = json!(s.change);
            Ok(doc)
        }
        Measure::Ms => {
            let v = mixed_strategy_power(p)?;
            Ok(unit_doc("ms", v, json!({"kind": "mixed_strategy"}), n))
        }
    }
}

fn power_doc(measure: &str, r: &MeasureResult, f: &WeightSource, p: &DelegationMatrix) -> Value {
    let sum_power = r.power.total();
    json!({
        "measure": measure,
        "n": p.n(),
        "method": r.method,
        "power": r.power.values(),
        "residual": r.residual,
        "sum_power": sum_power,
        "sum_f": f.total(),
        "conservation_gap": (sum_power - f.total()).abs(),
        "warnings": f.warnings(),
    })
}

/// Measures defined for one unit of weight per agent; they have no loss
/// entry.
fn unit_doc(measure: &str, power: Vec<f64>, method: Value, n: usize) -> Value {
    let sum_power = sum(&power);
    json!({
        "measure": measure,
        "n": n,
        "method": method,
        "source": "one unit per agent",
        "power": power,
        "sum_power": sum_power,
        "sum_f": n as f64,
    })
}

struct GameSetup<'a> {
    inst: Instance,
    epsilon: f64,
    args: &'a GameArgs,
}

impl GameSetup<'_> {
    fn preferences(&self) -> &PreferenceProfile {
        self.inst.preferences.as_ref().expect("checked on load")
    }
}

fn game_setup(args: &GameArgs) -> Result<GameSetup<'_>, Failure> {
    let inst = load(&args.file)?;
    if inst.preferences.is_none() {
        return Err(invalid("instance has no preferences (needed by game commands)"));
    }
    let epsilon = args
        .epsilon
        .or(inst.epsilon)
        .ok_or_else(|| invalid("instance has no epsilon and --epsilon was not given"))?;
    crate::delegation::check_epsilon(epsilon)?;
    Ok(GameSetup { inst, epsilon, args })
}

fn one_based(xs: &[usize]) -> Vec<usize> {
    xs.iter().map(|x| x + 1).collect()
}

fn agent_index(agent: usize, n: usize) -> Result<usize, Failure> {
    if agent == 0 || agent > n {
        return Err(Error::IndexOutOfRange { index: agent, n }.into());
    }
    Ok(agent - 1)
}

fn cmd_game(action: &GameAction) -> Result<Value, Failure> {
    match action {
        GameAction::Dynamics(args) => {
            let g = game_setup(args)?;
            let space = g.inst.space_or_full();
            let cfg = DynamicsConfig {
                max_iters: g.args.max_iters,
                tol: g.args.tol,
                seed: g.args.seed,
            };
            let t = br_dynamics(&g.inst.matrix, g.preferences(), g.epsilon, &space, cfg)?;
            let steps: Vec<Value> = t
                .steps
                .iter()
                .map(|s| json!({"round": s.round, "agent": s.agent + 1, "target": s.target + 1, "max_regret": s.max_regret}))
                .collect();
            Ok(json!({
                "status": t.status,
                "rounds": t.rounds,
                "switches": t.steps.len(),
                "seed": g.args.seed,
                "epsilon": g.epsilon,
                "order": one_based(&t.order),
                "steps": steps,
                "final_profiles": t.final_matrix.rows(),
                "regrets": t.final_regret.regrets,
                "max_regret": t.final_regret.max_regret,
                "tol": g.args.tol,
                "is_epsilon_nash": t.final_regret.is_epsilon_nash(g.args.tol),
            }))
        }
        GameAction::Verify(args) => {
            let g = game_setup(args)?;
            let space = g.inst.space_or_full();
            let r = verify_equilibrium(&g.inst.matrix, g.preferences(), g.epsilon, &space, g.args.tol)?;
            Ok(json!({
                "epsilon": g.epsilon,
                "regrets": r.regrets,
                "max_regret": r.max_regret,
                "tol": r.tol,
                "is_epsilon_nash": r.is_epsilon_nash(r.tol),
            }))
        }
        GameAction::BestResponse { game, agent } => {
            let g = game_setup(game)?;
            let i = agent_index(*agent, g.inst.n())?;
            let space = g.inst.space_or_full();
            let br = best_response(&g.inst.matrix, i, g.preferences().row(i), g.epsilon, &space)?;
            let current = crate::game::utility(&g.inst.matrix, i, g.preferences().row(i), g.epsilon)?;
            Ok(json!({
                "agent": agent,
                "epsilon": g.epsilon,
                "argmax_vertices": one_based(&br.argmax_vertices),
                "value": br.value,
                "current_value": current,
                "regret": br.value - current,
            }))
        }
    }
}

fn cmd_check(args: &CheckArgs) -> Result<Outcome, Failure> {
    let suite: Suite = args.suite.parse().map_err(|e: checks::UnknownSuite| invalid(e.to_string()))?;
    let mut cfg = SuiteConfig::defaults(suite);
    if let Some(n) = args.n {
        if n == 0 {
            return Err(invalid("--n must be positive"));
        }
        cfg.n = n;
    }
    if let Some(t) = args.trials {
        cfg.trials = t;
    }
    if let Some(tol) = args.tol {
        cfg.tol = tol;
    }
    cfg.seed = args.seed;

    if let Some(path) = &args.instance {
        let inst = load(path)?;
        let r = checks::check_instance(suite, &inst, cfg.tol);
        let doc = json!({
            "suite": suite,
            "instance": path.display().to_string(),
            "tol": cfg.tol,
            "passed": r.is_ok(),
            "statistic": r.as_ref().ok(),
            "message": r.as_ref().err(),
        });
        return Ok(Outcome {
            doc,
            code: if r.is_ok() { EXIT_OK } else { EXIT_CHECK },
        });
    }

    let report = checks::run_suite(suite, &cfg);
    let mut dumped = Vec::new();
    if let Some(dir) = &args.dump {
        if !report.failures.is_empty() {
            std::fs::create_dir_all(dir)
                .map_err(|e| invalid(format!("cannot create {}: {e}", dir.display())))?;
        }
        for fail in &report.failures {
            let path = dir.join(format!("{}-seed{}-trial{}.json", suite, cfg.seed, fail.trial));
            let text = serde_json::to_string_pretty(&fail.instance).expect("instances serialize");
            std::fs::write(&path, text)
                .map_err(|e| invalid(format!("cannot write {}: {e}", path.display())))?;
            dumped.push(path.display().to_string());
        }
    }
    let failures: Vec<Value> = report
        .failures
        .iter()
        .map(|f| json!({"trial": f.trial, "message": f.message, "instance": f.instance}))
        .collect();
    let doc = json!({
        "suite": suite,
        "seed": cfg.seed,
        "n": cfg.n,
        "trials": cfg.trials,
        "tol": cfg.tol,
        "passed": report.passed(),
        "failed_trials": report.failures.len(),
        "worst": report.worst,
        "failures": failures,
        "dumped": dumped,
    });
    eprintln!("seed {}", cfg.seed);
    Ok(Outcome {
        doc,
        code: if report.passed() { EXIT_OK } else { EXIT_CHECK },
    })
}

fn epsilon_for(inst: &Instance, flag: Option<f64>) -> Result<f64, Failure> {
    let e = flag
        .or(inst.epsilon)
        .ok_or_else(|| invalid("instance has no epsilon and --epsilon was not given"))?;
    crate::delegation::check_epsilon(e)?;
    Ok(e)
}

fn cmd_oracle(action: &OracleAction) -> Result<Value, Failure> {
    match action {
        OracleAction::Particles {
            file,
            epsilon,
            dt,
            t_max,
            seed,
        } => {
            let inst = load(file)?;
            let eps = epsilon_for(&inst, *epsilon)?;
            let est = particle_estimate(&inst.matrix, &inst.source, eps, *dt, *t_max, *seed)?;
            let reference = power_eps(&inst.matrix, &inst.source, eps)?;
            let z: Vec<Option<f64>> = est
                .rates
                .iter()
                .zip(&est.std_errors)
                .zip(reference.power.values())
                .map(|((r, s), v)| (*s > 0.0).then(|| (r - v) / s))
                .collect();
            Ok(json!({
                "epsilon": eps,
                "dt": dt,
                "t_max": t_max,
                "seed": est.seed,
                "steps": est.steps,
                "rates": est.rates,
                "std_errors": est.std_errors,
                "reference": reference.power.values(),
                "z_scores": z,
                "sum_power": sum(&est.rates),
                "sum_f": inst.source.total(),
            }))
        }
        OracleAction::Grid {
            file,
            agent,
            epsilon,
            step,
        } => {
            let inst = load(file)?;
            let w = inst
                .preferences
                .as_ref()
                .ok_or_else(|| invalid("instance has no preferences (needed by the grid oracle)"))?;
            let eps = epsilon_for(&inst, *epsilon)?;
            let i = agent_index(*agent, inst.n())?;
            let g = grid_best_response(&inst.matrix, i, w.row(i), eps, *step)?;
            let br = best_response(&inst.matrix, i, w.row(i), eps, &inst.space_or_full())?;
            Ok(json!({
                "agent": agent,
                "epsilon": eps,
                "step": step,
                "points": g.points,
                "profile": g.profile.weights(),
                "value": g.value,
                "vertex_value": br.value,
                "vertex_argmax": one_based(&br.argmax_vertices),
            }))
        }
        OracleAction::Enumerate { file } => {
            let inst = load(file)?;
            let outcomes = enumerate_pure_support(&inst.matrix)?;
            let total: f64 = outcomes.iter().map(|o| o.probability).sum();
            let ms = mixed_strategy_power(&inst.matrix)?;
            let list: Vec<Value> = outcomes
                .iter()
                .map(|o| json!({"targets": one_based(&o.targets), "probability": o.probability}))
                .collect();
            Ok(json!({
                "outcomes": list,
                "count": outcomes.len(),
                "sum_probability": total,
                "mixed_strategy_power": ms,
            }))
        }
    }
}

/// Flattens a document into `key = value` lines; numeric arrays are
/// printed space-separated on one line.
fn plain(doc: &Value) -> String {
    fn scalar(v: &Value) -> String {
        match v {
            Value::String(s) => s.clone(),
            Value::Null => "-".into(),
            other => other.to_string(),
        }
    }
    fn walk(prefix: &str, v: &Value, out: &mut Vec<String>) {
        match v {
            Value::Object(map) => {
                for (k, v) in map {
                    let key = if prefix.is_empty() { k.clone() } else { format!("{prefix}.{k}") };
                    walk(&key, v, out);
                }
            }
            Value::Array(items) if items.iter().all(|x| !x.is_object() && !x.is_array()) => {
                let line: Vec<String> = items.iter().map(scalar).collect();
                out.push(format!("{prefix} = {}", line.join(" ")));
            }
            Value::Array(items) => {
                for (i, item) in items.iter().enumerate() {
                    walk(&format!("{prefix}[{}]", i + 1), item, out);
                }
            }
            other => out.push(format!("{prefix} = {}", scalar(other))),
        }
    }
    let mut out = Vec::new();
    walk("", doc, &mut out);
    out.join("\n")
}
