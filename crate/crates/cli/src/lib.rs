//! `persuasion-eq`: solve scenario files, enumerate orderings, run sampling
//! checks and regenerate the worked examples as CSV.
//!
//! Exit status: 0 on success, 2 on invalid input or a failed sampling check,
//! 3 when an emitted row fails its stability certificate, 1 otherwise.

use std::io::Write;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use persuasion_core::equilibrium::STABILITY_TOL;
use persuasion_core::experiments::{
    reproduce, scenario_orderings, solve_scenario, validate_scenario, validation_table, TARGETS,
};
use persuasion_core::montecarlo::SimConfig;
use persuasion_core::report::{rows_to_table, Table};
use persuasion_core::scenario::{parse_scenario, ScenarioKind};
use persuasion_core::Error;

pub const EXIT_OK: i32 = 0;
pub const EXIT_OTHER: i32 = 1;
pub const EXIT_INVALID: i32 = 2;
pub const EXIT_CERTIFICATE: i32 = 3;

#[derive(Parser, Debug)]
#[command(name = "persuasion-eq", version, about = "Equilibria of multi-sender Gaussian persuasion games")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Solve a static scenario (one row per sweep point).
    SolveStatic(SolveArgs),
    /// Solve a dynamic scenario (one row per stage and sweep point).
    SolveDynamic(SolveArgs),
    /// Solve a two-receiver scenario.
    SolveMultireceiver(SolveArgs),
    /// Solve a static scenario under every sender ordering.
    Orderings(CommonArgs),
    /// Sample the equilibrium policies and compare with the trace formulas.
    Validate(ValidateArgs),
    /// Regenerate a worked example.
    Reproduce(ReproduceArgs),
}

#[derive(Args, Debug)]
struct CommonArgs {
    /// Scenario file (JSON).
    #[arg(long)]
    scenario: PathBuf,
    /// Write CSV here instead of standard output.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct SolveArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// Sender ordering, 1-based and comma separated (e.g. 2,1).
    #[arg(long, value_delimiter = ',')]
    ordering: Option<Vec<usize>>,
}

#[derive(Args, Debug)]
struct ValidateArgs {
    #[command(flatten)]
    solve: SolveArgs,
    /// Number of sampled states (or trajectories).
    #[arg(long, default_value_t = 100_000)]
    samples: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args, Debug)]
struct ReproduceArgs {
    /// One of ex1..ex8, table1, table2.
    target: String,
    /// Write CSV here instead of standard output.
    #[arg(long)]
    out: Option<PathBuf>,
}

/// A failure with its exit status.
#[derive(Debug)]
struct Failure {
    code: i32,
    message: String,
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = match e {
            Error::Scenario { .. } | Error::InvalidOrdering(_) | Error::TooManyOrderings { .. } => EXIT_INVALID,
            _ => EXIT_OTHER,
        };
        Failure {
            code,
            message: e.to_string(),
        }
    }
}

fn invalid(message: impl Into<String>) -> Failure {
    Failure {
        code: EXIT_INVALID,
        message: message.into(),
    }
}

/// Runs the tool on `argv` (including the program name), writing CSV to
/// `stdout` unless `--out` is given and diagnostics to `stderr`.
pub fn run<'a, I, T>(argv: I, stdout: &'a mut dyn Write, stderr: &'a mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_INVALID } else { EXIT_OK };
            let sink = if code == EXIT_OK { stdout } else { stderr };
            let _ = write!(sink, "{}", e.render());
            return code;
        }
    };
    match execute(cli.command, stdout) {
        Ok(()) => EXIT_OK,
        Err(f) => {
            let _ = writeln!(stderr, "error: {}", f.message);
            f.code
        }
    }
}

fn emit(table: &Table, out: Option<&PathBuf>, stdout: &mut dyn Write) -> Result<(), Failure> {
    match out {
        Some(path) => {
            let file = std::fs::File::create(path).map_err(|e| Failure {
                code: EXIT_OTHER,
                message: format!("{}: {e}", path.display()),
            })?;
            table.write_csv(std::io::BufWriter::new(file))?;
        }
        None => table.write_csv(stdout)?,
    }
    Ok(())
}

/// Fails with exit status 3 when any `certificate` cell is below the
/// stability tolerance. The table is written first either way.
fn check_certificates(table: &Table) -> Result<(), Failure> {
    let Some(certs) = table.numbers("certificate") else {
        return Ok(());
    };
    match certs.iter().enumerate().find(|(_, c)| **c < -STABILITY_TOL) {
        Some((i, c)) => Err(Failure {
            code: EXIT_CERTIFICATE,
            message: format!("row {} fails the stability certificate ({c:e} < -{STABILITY_TOL:e})", i + 1),
        }),
        None => Ok(()),
    }
}

fn load(args: &SolveArgs, kind: Option<ScenarioKind>) -> Result<persuasion_core::scenario::ScenarioFile, Failure> {
    let mut s = parse_scenario(&args.common.scenario)?;
    if let Some(kind) = kind {
        if s.kind != kind {
            return Err(invalid(format!(
                "{}: kind is {}, this command expects {}",
                args.common.scenario.display(),
                s.kind,
                kind
            )));
        }
    }
    if let Some(order) = &args.ordering {
        s.ordering = Some(order.clone());
        s.instances()?;
    }
    Ok(s)
}

fn execute(command: Command, stdout: &mut dyn Write) -> Result<(), Failure> {
    match command {
        Command::SolveStatic(a) => solve(&a, ScenarioKind::Static, stdout),
        Command::SolveDynamic(a) => solve(&a, ScenarioKind::Dynamic, stdout),
        Command::SolveMultireceiver(a) => solve(&a, ScenarioKind::Multireceiver, stdout),
        Command::Orderings(c) => {
            let a = SolveArgs {
                common: c,
                ordering: None,
            };
            let s = load(&a, Some(ScenarioKind::Static))?;
            let table = rows_to_table(&scenario_orderings(&s)?)?;
            emit(&table, a.common.out.as_ref(), stdout)?;
            check_certificates(&table)
        }
        Command::Validate(v) => {
            let s = load(&v.solve, None)?;
            let cfg = SimConfig::new(v.samples, v.seed)?;
            let results = validate_scenario(&s, &cfg)?;
            emit(&validation_table(&results)?, v.solve.common.out.as_ref(), stdout)?;
            let worst = results.iter().map(|r| r.report.max_z()).fold(0.0, f64::max);
            if results.iter().all(|r| r.report.within(3.0)) {
                Ok(())
            } else {
                Err(invalid(format!("sampling check failed: largest deviation {worst:.3} standard errors")))
            }
        }
        Command::Reproduce(r) => {
            if !TARGETS.contains(&r.target.as_str()) {
                return Err(invalid(format!(
                    "unknown target `{}`; expected one of {}",
                    r.target,
                    TARGETS.join(", ")
                )));
            }
            let table = reproduce(&r.target)?;
            emit(&table, r.out.as_ref(), stdout)?;
            check_certificates(&table)
        }
    }
}

fn solve(a: &SolveArgs, kind: ScenarioKind, stdout: &mut dyn Write) -> Result<(), Failure> {
    let s = load(a, Some(kind))?;
    let table = rows_to_table(&solve_scenario(&s)?)?;
    emit(&table, a.common.out.as_ref(), stdout)?;
    check_certificates(&table)
}
