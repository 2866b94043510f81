//! Command-line interface: `run`, `fw`, `check-bounds` and `finetune`.
//!
//! Exit codes: 0 on success, 1 on other failures (including bound violations
//! found by `check-bounds`), 2 on configuration or usage errors, 3 when the
//! discretized solver does not converge.

use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use tvrefine::experiments::{
    check_bounds, emit_table, format_table, reference_solution, run_baseline, run_experiment, ExperimentConfig,
};
use tvrefine::solver::primal_value;
use tvrefine::{Error, RefinementLog, SelectionRule};

pub const EXIT_OK: i32 = 0;
pub const EXIT_FAILURE: i32 = 1;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_NONCONVERGENCE: i32 = 3;

#[derive(Parser, Debug)]
#[command(name = "tvrefine", version, about = "Sparse spike recovery by adaptive dyadic refinement")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Adaptive refinement: writes the iteration table and a JSON log.
    Run(ProblemArgs),
    /// Frank-Wolfe baseline on the same problem.
    Fw(ProblemArgs),
    /// Compare every selection bound with dense sampling on random cells.
    CheckBounds {
        #[arg(long, default_value_t = 100)]
        samples: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Sample points per cell.
        #[arg(long, default_value_t = 1000)]
        points: usize,
    },
    /// Fine-tune the ground truth into a reference solution (JSON).
    Finetune(ProblemArgs),
}

#[derive(Args, Debug)]
struct ProblemArgs {
    /// Configuration file (`key = value` lines).
    config: Option<PathBuf>,
    /// Use a builtin problem instead of a file: 1d or 2d.
    #[arg(long, conflicts_with = "config")]
    builtin: Option<String>,
    /// first | second | second+grad | third | third+grad2
    #[arg(long)]
    rule: Option<String>,
    /// Stop once every candidate cell is finer than 2^-J
    #[arg(long = "target-level", value_name = "J")]
    target_level: Option<u32>,
    /// Output path (CSV for run/fw, JSON for finetune).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Directory caching fine-tuned reference solutions.
    #[arg(long = "reference-cache")]
    reference_cache: Option<PathBuf>,
}

impl ProblemArgs {
    fn load(&self) -> tvrefine::Result<ExperimentConfig> {
        let mut cfg = match (&self.config, &self.builtin) {
            (Some(path), _) => {
                let text = std::fs::read_to_string(path)
                    .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
                ExperimentConfig::parse(&text)?
            }
            (None, Some(name)) => ExperimentConfig::builtin(name)?,
            (None, None) => return Err(Error::Config("give a config file or --builtin 1d|2d".into())),
        };
        if let Some(rule) = &self.rule {
            let mode = cfg.rule.kappa_mode;
            cfg.rule = rule.parse::<SelectionRule>()?;
            if !rule.contains('@') {
                cfg.rule = cfg.rule.with_kappa_mode(mode);
            }
        }
        if let Some(j) = self.target_level {
            cfg.target_level = j;
        }
        if let Some(out) = &self.out {
            cfg.output = Some(out.clone());
        }
        if let Some(dir) = &self.reference_cache {
            cfg.reference_cache = Some(dir.clone());
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

fn exit_code(err: &Error) -> i32 {
    match err.root() {
        Error::Config(_) | Error::UnsupportedDimension { .. } => EXIT_CONFIG,
        Error::NonConvergence { .. } => EXIT_NONCONVERGENCE,
        _ => EXIT_FAILURE,
    }
}

fn write_log(log: &RefinementLog, output: Option<&Path>, out: &mut dyn Write, err: &mut dyn Write) -> tvrefine::Result<()> {
    match output {
        Some(path) => {
            let json = emit_table(log, path)?;
            writeln!(err, "wrote {} and {}", path.display(), json.display())?;
        }
        None => out.write_all(format_table(log).as_bytes())?,
    }
    if let Some(last) = log.last() {
        writeln!(
            err,
            "{:?} after {} iterations: |V| = {}, primal = {:.6}, atoms = {}",
            log.termination,
            log.records.len(),
            last.vertices,
            last.primal,
            log.final_measure.len()
        )?;
    }
    Ok(())
}

fn execute(cli: Cli, out: &mut dyn Write, err: &mut dyn Write) -> tvrefine::Result<i32> {
    match cli.command {
        Command::Run(args) => {
            let cfg = args.load()?;
            let log = run_experiment(&cfg)?;
            write_log(&log, cfg.output.as_deref(), out, err)?;
        }
        Command::Fw(args) => {
            let cfg = args.load()?;
            let log = run_baseline(&cfg)?;
            write_log(&log, cfg.output.as_deref(), out, err)?;
        }
        Command::CheckBounds { samples, seed, points } => {
            let report = check_bounds(samples, seed, points)?;
            let names = [
                "upper bound, first order",
                "upper bound, second order",
                "upper bound, third order",
                "gradient lower bound, first order",
                "gradient lower bound, second order",
                "taylor gap, second order",
                "taylor gap, third order",
            ];
            let rows = report.upper.iter().chain(&report.grad_lower).chain(&report.taylor_gap);
            writeln!(out, "samples = {samples}, seed = {seed}, points per cell = {points}")?;
            for (name, r) in names.iter().zip(rows) {
                writeln!(
                    out,
                    "{name:<36} checked {:>5}  violations {:>3}  max excess {:.3e}",
                    r.checked, r.violations, r.max_excess
                )?;
            }
            let total = report.total_violations();
            writeln!(out, "total violations: {total}")?;
            if total > 0 {
                return Ok(EXIT_FAILURE);
            }
        }
        Command::Finetune(args) => {
            let cfg = args.load()?;
            let problem = cfg.problem()?;
            let mu = reference_solution(&problem, cfg.finetune_iterations)?;
            writeln!(
                err,
                "primal: ground truth {:.6e}, fine-tuned {:.6e}",
                primal_value(&problem.operator, &problem.ground_truth, &problem.data),
                primal_value(&problem.operator, &mu, &problem.data)
            )?;
            let json = serde_json::to_string_pretty(&mu)?;
            match &args.out {
                Some(path) => std::fs::write(path, json + "\n")?,
                None => writeln!(out, "{json}")?,
            }
        }
    }
    Ok(EXIT_OK)
}

/// Runs the CLI with explicit output streams and returns the exit code.
pub fn cli_main_with<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            return if e.use_stderr() {
                let _ = write!(err, "{}", e.render());
                EXIT_CONFIG
            } else {
                let _ = write!(out, "{}", e.render());
                EXIT_OK
            };
        }
    };
    match execute(cli, out, err) {
        Ok(code) => code,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            exit_code(&e)
        }
    }
}

/// Runs the CLI on the process streams.
pub fn cli_main<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    cli_main_with(args, &mut std::io::stdout().lock(), &mut std::io::stderr().lock())
}
