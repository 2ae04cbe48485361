//! Batch front end for the `mvjump` library.
//!
//! Exit codes: 0 success, 1 invalid input or model, 2 numerical failure
//! (including failed oracle checks), 3 usage error.

use std::fmt::Write as _;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use clap::{Args, Parser, Subcommand};
use mvjump::config::{load_model, RunDefaults};
use mvjump::hamiltonian::DEFAULT_TOL;
use mvjump::oracle::{model_suite, standard_suite};
use mvjump::policy::{frontier, lagrangian_value, PolicySpec};
use mvjump::riccati::{solve, DEFAULT_STEPS};
use mvjump::sim::{simulate, verify_frontier, TabulatedFeedback};
use mvjump::{Error, MarketModel, RiccatiSolution, SimConfig};

pub const EXIT_OK: i32 = 0;
pub const EXIT_INVALID: i32 = 1;
pub const EXIT_NUMERIC: i32 = 2;
pub const EXIT_USAGE: i32 = 3;

#[derive(Debug, Parser)]
#[command(name = "mvjump", version, about = "Mean-variance portfolios under no-shorting in jump-diffusion markets")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Check the market's standing assumptions.
    Validate(Common),
    /// Integrate the Riccati system and write t,p_plus,p_minus,vhat... as CSV.
    Solve(Common),
    /// Efficient frontier at the requested target means.
    Frontier(Common),
    /// Vertex, value and variance for a target mean; optionally the feedback at (t, x).
    PolicyEval(Common),
    /// Monte Carlo run of the optimal policy with vertex d* (from --z) or --d.
    Simulate(Common),
    /// Closed-form and grid-search cross-checks.
    OracleCheck(Common),
}

#[derive(Debug, Args, Clone, Default)]
pub struct Common {
    /// Market description (JSON).
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Where to write the main output; stdout when absent.
    #[arg(long)]
    pub output: Option<PathBuf>,
    /// RK4 steps for the Riccati system.
    #[arg(long)]
    pub steps: Option<usize>,
    #[arg(long)]
    pub n_paths: Option<usize>,
    /// Euler step of the simulation (years).
    #[arg(long)]
    pub dt: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Target mean(s); comma separated for `frontier`.
    #[arg(long, value_delimiter = ',', allow_negative_numbers = true)]
    pub z: Vec<f64>,
    /// Initial wealth.
    #[arg(long, allow_negative_numbers = true)]
    pub x0: Option<f64>,
    /// Explicit vertex, overriding the one implied by --z.
    #[arg(long, allow_negative_numbers = true)]
    pub d: Option<f64>,
    /// Worker threads for simulation; 1 is sequential, 0 uses all cores.
    #[arg(long)]
    pub threads: Option<usize>,
    /// Number of full paths to write (simulate only).
    #[arg(long)]
    pub record_paths: Option<usize>,
    /// CSV file for recorded paths (simulate only).
    #[arg(long)]
    pub paths_output: Option<PathBuf>,
    /// Time at which to evaluate the feedback (policy-eval only).
    #[arg(long)]
    pub t: Option<f64>,
    /// Pre-jump wealth at which to evaluate the feedback (policy-eval only).
    #[arg(long, allow_negative_numbers = true)]
    pub x: Option<f64>,
}

/// Flag values with config-file fallbacks applied.
struct Settings {
    steps: usize,
    n_paths: usize,
    dt: f64,
    seed: u64,
    x0: f64,
    z: Vec<f64>,
    d: Option<f64>,
    threads: usize,
    record_paths: usize,
}

impl Settings {
    fn merge(flags: &Common, run: &RunDefaults) -> Self {
        let z = if flags.z.is_empty() { run.z.into_iter().collect() } else { flags.z.clone() };
        Self {
            steps: flags.steps.or(run.steps).unwrap_or(DEFAULT_STEPS),
            n_paths: flags.n_paths.or(run.n_paths).unwrap_or(SimConfig::default().n_paths),
            dt: flags.dt.or(run.dt).unwrap_or(SimConfig::default().dt),
            seed: flags.seed.or(run.seed).unwrap_or(0),
            x0: flags.x0.or(run.x0).unwrap_or(0.0),
            z,
            d: flags.d.or(run.d),
            threads: flags.threads.or(run.threads).unwrap_or(1),
            record_paths: flags.record_paths.or(run.record_paths).unwrap_or(0),
        }
    }

    fn sim_config(&self) -> SimConfig {
        SimConfig {
            n_paths: self.n_paths,
            dt: self.dt,
            seed: self.seed,
            record_paths: self.record_paths,
            threads: self.threads,
        }
    }

    fn single_z(&self) -> Result<Option<f64>, Failure> {
        match self.z.as_slice() {
            [] => Ok(None),
            [z] => Ok(Some(*z)),
            _ => Err(Failure::Usage("this command takes a single --z".into())),
        }
    }
}

enum Failure {
    Usage(String),
    Invalid(String),
    Lib(Error),
    OracleFailed,
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Lib(e)
    }
}

/// 17 significant digits.
fn num(x: f64) -> String {
    format!("{x:.16e}")
}

fn kv(out: &mut String, key: &str, value: impl std::fmt::Display) {
    let _ = writeln!(out, "{key}={value}");
}

fn emit(text: &str, path: Option<&Path>, stdout: &mut dyn Write) -> Result<(), Failure> {
    match path {
        Some(p) => std::fs::write(p, text).map_err(|e| Failure::Lib(e.into())),
        None => stdout.write_all(text.as_bytes()).map_err(|e| Failure::Lib(e.into())),
    }
}

fn require_config(flags: &Common) -> Result<(MarketModel, RunDefaults), Failure> {
    let path = flags.config.as_ref().ok_or_else(|| Failure::Usage("--config is required".into()))?;
    Ok(load_model(path)?)
}

fn solve_model(model: MarketModel, settings: &Settings) -> Result<Arc<RiccatiSolution>, Failure> {
    Ok(Arc::new(solve(model, settings.steps, DEFAULT_TOL)?))
}

fn solution_csv(sol: &RiccatiSolution) -> String {
    let m = sol.model().assets();
    let mut out = String::from("t,p_plus,p_minus");
    for side in ["plus", "minus"] {
        for i in 1..=m {
            let _ = write!(out, ",vhat_{side}_{i}");
        }
    }
    out.push('\n');
    for i in 0..=sol.step_count() {
        let point = sol.point(i);
        let mut row = vec![num(point.t), num(point.p_plus), num(point.p_minus)];
        row.extend(point.vhat_plus.iter().chain(&point.vhat_minus).map(|v| num(*v)));
        out.push_str(&row.join(","));
        out.push('\n');
    }
    out
}

fn cmd_validate(flags: &Common, stdout: &mut dyn Write) -> Result<(), Failure> {
    let (model, _) = require_config(flags)?;
    let report = model.validate();
    emit(&format!("{report}\n"), flags.output.as_deref(), stdout)?;
    if report.valid {
        Ok(())
    } else {
        Err(Failure::Invalid("model failed validation".into()))
    }
}

fn cmd_solve(flags: &Common, stdout: &mut dyn Write) -> Result<(), Failure> {
    let (model, run) = require_config(flags)?;
    let settings = Settings::merge(flags, &run);
    let sol = solve_model(model, &settings)?;
    emit(&solution_csv(&sol), flags.output.as_deref(), stdout)
}

fn cmd_frontier(flags: &Common, stdout: &mut dyn Write) -> Result<(), Failure> {
    let (model, run) = require_config(flags)?;
    let settings = Settings::merge(flags, &run);
    if settings.z.is_empty() {
        return Err(Failure::Usage("frontier needs --z".into()));
    }
    let sol = solve_model(model, &settings)?;
    let points = frontier(settings.x0, &settings.z, &sol)?;
    let mut out = String::from("z,variance,std\n");
    for p in points {
        let _ = writeln!(out, "{},{},{}", num(p.z), num(p.variance), num(p.std));
    }
    emit(&out, flags.output.as_deref(), stdout)
}

fn cmd_policy_eval(flags: &Common, stdout: &mut dyn Write) -> Result<(), Failure> {
    let (model, run) = require_config(flags)?;
    let settings = Settings::merge(flags, &run);
    let z = settings.single_z()?.ok_or_else(|| Failure::Usage("policy-eval needs --z".into()))?;
    let sol = solve_model(model, &settings)?;
    let policy = PolicySpec::new(settings.x0, z, sol.clone())?;
    let mut out = String::new();
    kv(&mut out, "x0", num(settings.x0));
    kv(&mut out, "z", num(z));
    kv(&mut out, "p_plus_0", num(sol.p_plus_0()));
    kv(&mut out, "p_minus_0", num(sol.p_minus_0()));
    kv(&mut out, "d_star", num(policy.d_star()));
    kv(&mut out, "lagrangian_value", num(lagrangian_value(settings.x0, policy.d_star(), &sol)));
    kv(&mut out, "variance", num(policy.variance()));
    kv(&mut out, "std", num(policy.variance().sqrt()));
    match (flags.t, flags.x) {
        (Some(t), Some(x)) => {
            for (i, v) in policy.feedback(t, x)?.iter().enumerate() {
                kv(&mut out, &format!("pi_{}", i + 1), num(*v));
            }
        }
        (None, None) => {}
        _ => return Err(Failure::Usage("--t and --x go together".into())),
    }
    emit(&out, flags.output.as_deref(), stdout)
}

fn cmd_simulate(flags: &Common, stdout: &mut dyn Write, stderr: &mut dyn Write) -> Result<(), Failure> {
    let (model, run) = require_config(flags)?;
    let settings = Settings::merge(flags, &run);
    let z = settings.single_z()?;
    if z.is_none() && settings.d.is_none() {
        return Err(Failure::Usage("simulate needs --z or --d".into()));
    }
    let cfg = settings.sim_config();
    let sol = solve_model(model, &settings)?;
    let x0 = settings.x0;

    let mut out = String::new();
    let stats = match (z, settings.d) {
        (Some(z), None) => {
            let check = verify_frontier(&sol, x0, z, &cfg)?;
            let target = lagrangian_value(x0, check.d_star, &sol);
            kv(&mut out, "d", num(check.d_star));
            kv(&mut out, "target_second_moment", num(target));
            kv(&mut out, "value_z_score", num(check.stats.second_moment.z_score(target)));
            kv(&mut out, "target_mean", num(z));
            kv(&mut out, "mean_z_score", num(check.mean_z));
            kv(&mut out, "target_variance", num(check.target_variance));
            kv(&mut out, "variance_z_score", num(check.variance_z));
            check.stats
        }
        (z, Some(d)) => {
            let feedback = TabulatedFeedback::new(&sol, d, cfg.dt)?;
            let stats = simulate(sol.model(), &feedback, x0, d, &cfg)?;
            let target = lagrangian_value(x0, d, &sol);
            kv(&mut out, "d", num(d));
            kv(&mut out, "target_second_moment", num(target));
            kv(&mut out, "value_z_score", num(stats.second_moment.z_score(target)));
            if let Some(z) = z {
                // an explicit vertex is only optimal for its own target; report the budget gap
                kv(&mut out, "target_mean", num(z));
                kv(&mut out, "mean_z_score", num(stats.mean.z_score(z)));
            }
            stats
        }
        (None, None) => unreachable!(),
    };
    out.push_str(&stats.to_key_value());
    if stats.overflow_paths > 0 {
        let _ = writeln!(stderr, "warning: {} paths overflowed and were excluded", stats.overflow_paths);
    }
    if let Some(path) = &flags.paths_output {
        std::fs::write(path, stats.paths_csv()).map_err(|e| Failure::Lib(e.into()))?;
    }
    emit(&out, flags.output.as_deref(), stdout)
}

fn cmd_oracle_check(flags: &Common, stdout: &mut dyn Write) -> Result<(), Failure> {
    let (model, run) = match &flags.config {
        Some(path) => {
            let (model, run) = load_model(path)?;
            (Some(model), run)
        }
        None => (None, RunDefaults::default()),
    };
    let settings = Settings::merge(flags, &run);
    let mut report = standard_suite(settings.steps)?;
    if let Some(model) = model {
        report.rows.extend(model_suite(&model, settings.steps, settings.seed)?.rows);
    }
    let passed = report.all_passed();
    let mut text = report.to_string();
    let _ = writeln!(text, "{}", if passed { "all checks passed" } else { "some checks FAILED" });
    emit(&text, flags.output.as_deref(), stdout)?;
    if passed {
        Ok(())
    } else {
        Err(Failure::OracleFailed)
    }
}

/// Parses `args` (including the program name) and runs the command.
pub fn run<I, T>(args: I, stdout: &mut dyn Write, stderr: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let text = e.render().to_string();
            let _ = if e.use_stderr() { stderr.write_all(text.as_bytes()) } else { stdout.write_all(text.as_bytes()) };
            return code;
        }
    };
    let result = match &cli.command {
        Command::Validate(c) => cmd_validate(c, stdout),
        Command::Solve(c) => cmd_solve(c, stdout),
        Command::Frontier(c) => cmd_frontier(c, stdout),
        Command::PolicyEval(c) => cmd_policy_eval(c, stdout),
        Command::Simulate(c) => cmd_simulate(c, stdout, stderr),
        Command::OracleCheck(c) => cmd_oracle_check(c, stdout),
    };
    match result {
        Ok(()) => EXIT_OK,
        Err(Failure::Usage(msg)) => {
            let _ = writeln!(stderr, "usage error: {msg}");
            EXIT_USAGE
        }
        Err(Failure::Invalid(msg)) => {
            let _ = writeln!(stderr, "error: {msg}");
            EXIT_INVALID
        }
        Err(Failure::OracleFailed) => {
            let _ = writeln!(stderr, "error: oracle checks failed");
            EXIT_NUMERIC
        }
        Err(Failure::Lib(e)) => {
            let _ = writeln!(stderr, "error: {e}");
            if e.is_numeric() {
                EXIT_NUMERIC
            } else {
                EXIT_INVALID
            }
        }
    }
}
