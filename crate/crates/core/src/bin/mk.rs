//! `mk`: distances, verification suites and CSV/JSON export.
//!
//! Exit codes: 0 success, 1 validation or I/O error (or a failed suite),
//! 2 solver non-convergence, 64 usage error.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use qmk::classical_ot::{field_to_measure, w2, MAX_ATOMS};
use qmk::config::RunConfig;
use qmk::export::{matrix_csv, mk_result_json, write_atomic};
use qmk::linalg::{c, CMatrix, DensityOperator};
use qmk::meanfield::{convergence_rate_check, PairPotential};
use qmk::oscillator::{coherent_density, fock_density, OscillatorRep, PhaseSpacePoint};
use qmk::phase_space::{husimi_trace, toeplitz_quantize, wigner, DiscreteMeasure};
use qmk::quantum_ot::solve_mk;
use qmk::suites::{run_suite, SuiteContext, SUITES};
use qmk::Error;

const EXIT_VALIDATION: u8 = 1;
const EXIT_NONCONVERGENCE: u8 = 2;
const EXIT_USAGE: u8 = 64;

#[derive(Parser)]
#[command(name = "mk", version, about = "Quantum Monge-Kantorovich distances and phase-space checks")]
struct Cli {
    /// Config file (`key = value` with [solver], [rep], [grid], [meanfield]).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct StateArgs {
    /// coherent <q> <p> | fock <n> | toeplitz <measure-file> | kernel-file <path>
    #[arg(long, num_args = 1..=3, allow_negative_numbers = true, value_name = "SPEC")]
    a: Option<Vec<String>>,
    #[arg(long, num_args = 1..=3, allow_negative_numbers = true, value_name = "SPEC")]
    b: Option<Vec<String>>,
    #[arg(long)]
    lambda: Option<f64>,
    #[arg(long)]
    n_basis: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Solve the coupling program for two states and print the result as JSON.
    Solve {
        #[command(flatten)]
        states: StateArgs,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run a named verification suite and print its CSV report.
    Verify {
        suite: String,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Write a field, plan, coupling or trajectory as CSV.
    Export {
        what: ExportKind,
        #[command(flatten)]
        states: StateArgs,
        /// Measure file for the trajectory's initial state (default: one atom at (0.5, 0)).
        #[arg(long)]
        measure: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum ExportKind {
    /// Wigner function of --a.
    Wigner,
    /// Husimi transform of --a with reference --b.
    Husimi,
    /// Optimal W2 plan between the Husimi measures of --a and --b.
    Plan,
    /// Optimal coupling of --a and --b.
    Coupling,
    /// Mean-field bound report `t,lhs,rhs,slack`.
    Trajectory,
}

enum Failure {
    Usage(String),
    Run(Error),
    SuiteFailed(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Run(e)
    }
}

enum StateSpec {
    Coherent(f64, f64),
    Fock(usize),
    Toeplitz(PathBuf),
    Kernel(PathBuf),
}

impl StateSpec {
    fn parse(words: &[String]) -> Result<Self, Failure> {
        let usage = |msg: &str| Failure::Usage(format!("state `{}`: {msg}", words.join(" ")));
        let num = |s: &String| s.parse::<f64>().map_err(|_| usage("expected a number"));
        match words.iter().map(String::as_str).collect::<Vec<_>>().as_slice() {
            ["coherent", _, _] => Ok(StateSpec::Coherent(num(&words[1])?, num(&words[2])?)),
            ["fock", n] => n.parse().map(StateSpec::Fock).map_err(|_| usage("expected a level index")),
            ["toeplitz", path] => Ok(StateSpec::Toeplitz(PathBuf::from(path))),
            ["kernel-file", path] => Ok(StateSpec::Kernel(PathBuf::from(path))),
            [kind, ..] if ["coherent", "fock", "toeplitz", "kernel-file"].contains(kind) => {
                Err(usage("wrong number of arguments"))
            }
            _ => Err(usage("expected coherent <q> <p> | fock <n> | toeplitz <file> | kernel-file <file>")),
        }
    }

    fn displacement(&self) -> f64 {
        match self {
            StateSpec::Coherent(q, p) => q.abs().max(p.abs()),
            _ => 0.0,
        }
    }

    fn build(&self, rep: &OscillatorRep) -> qmk::Result<(DensityOperator, f64)> {
        match self {
            StateSpec::Coherent(q, p) => Ok((coherent_density(rep, &PhaseSpacePoint::d1(*q, *p))?, self.displacement())),
            StateSpec::Fock(n) => Ok((fock_density(rep, &[*n])?, 0.0)),
            StateSpec::Toeplitz(path) => {
                let mu = DiscreteMeasure::read(path)?;
                let ground = fock_density(rep, &[0])?;
                Ok((toeplitz_quantize(&ground, rep, &mu)?, mu.max_displacement()))
            }
            StateSpec::Kernel(path) => Ok((read_kernel(path, rep)?, 0.0)),
        }
    }
}

/// Square complex matrix, one row per line as `re,im,re,im,...`.
fn read_kernel(path: &Path, rep: &OscillatorRep) -> qmk::Result<DensityOperator> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    })?;
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (idx, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let row = line
            .split(',')
            .map(|s| s.trim().parse::<f64>())
            .collect::<Result<Vec<_>, _>>()
            .map_err(|_| Error::Parse(format!("{}: line {}: not a list of numbers", path.display(), idx + 1)))?;
        rows.push(row);
    }
    let n = rows.len();
    if rows.iter().any(|r| r.len() != 2 * n) {
        return Err(Error::Parse(format!(
            "{}: expected {n} rows of {} values (re,im pairs)",
            path.display(),
            2 * n
        )));
    }
    if n != rep.dim() {
        return Err(Error::Dimension(format!(
            "kernel file has dimension {n}, basis has {}",
            rep.dim()
        )));
    }
    let m = CMatrix::from_fn(n, n, |i, j| c(rows[i][2 * j], rows[i][2 * j + 1]));
    DensityOperator::new(m, rep.tag())
}

fn load_config(cli: &Cli, states: Option<&StateArgs>) -> Result<RunConfig, Failure> {
    let mut cfg = match &cli.config {
        Some(path) => RunConfig::read(path)?,
        None => RunConfig::default(),
    };
    if let Some(s) = states {
        if let Some(l) = s.lambda {
            cfg.rep.lambda = l;
        }
        if let Some(n) = s.n_basis {
            cfg.rep.n_basis = n;
        }
    }
    cfg.validate()?;
    Ok(cfg)
}

fn state_pair(states: &StateArgs, default_b: &str) -> Result<(StateSpec, StateSpec), Failure> {
    let default = |s: &str| s.split(' ').map(String::from).collect::<Vec<_>>();
    let a = StateSpec::parse(states.a.as_deref().unwrap_or(&default("fock 0")))?;
    let b = StateSpec::parse(states.b.as_deref().unwrap_or(&default(default_b)))?;
    Ok((a, b))
}

fn emit(text: &str, out: Option<&Path>) -> Result<(), Failure> {
    match out {
        Some(path) => write_atomic(path, text.as_bytes())?,
        None => print!("{text}"),
    }
    Ok(())
}

fn run(cli: &Cli) -> Result<(), Failure> {
    match &cli.command {
        Command::Solve { states, out } => {
            if states.a.is_none() || states.b.is_none() {
                return Err(Failure::Usage("solve needs --a and --b".into()));
            }
            let (a, b) = state_pair(states, "fock 0")?;
            let cfg = load_config(cli, Some(states))?;
            let rep = OscillatorRep::new(cfg.rep.n_basis, 1, cfg.rep.lambda)?;
            let (ka, _) = a.build(&rep)?;
            let (kb, _) = b.build(&rep)?;
            let res = solve_mk(&ka, &kb, &rep, &cfg.solver)?;
            let json = mk_result_json(&res);
            print!("{json}");
            if let Some(path) = out {
                write_atomic(path, json.as_bytes())?;
            }
            Ok(())
        }
        Command::Verify { suite, out } => {
            if !SUITES.contains(&suite.as_str()) {
                return Err(Failure::Usage(format!(
                    "unknown suite `{suite}`; available: {}",
                    SUITES.join(", ")
                )));
            }
            let cfg = load_config(cli, None)?;
            let ctx = SuiteContext {
                seed: cli.seed,
                solver: cfg.solver,
            };
            let report = run_suite(suite, &ctx)?;
            for c in report.failures() {
                if let Some(err) = &c.error {
                    eprintln!("mk: {}: {err}", c.name);
                }
            }
            emit(&report.to_csv(), out.as_deref())?;
            if report.passed() {
                Ok(())
            } else {
                let names: Vec<&str> = report.failures().map(|c| c.name.as_str()).collect();
                Err(Failure::SuiteFailed(format!("{suite}: failed checks: {}", names.join(", "))))
            }
        }
        Command::Export {
            what,
            states,
            measure,
            out,
        } => {
            let cfg = load_config(cli, Some(states))?;
            let text = match what {
                ExportKind::Trajectory => {
                    let mu = match measure {
                        Some(path) => DiscreteMeasure::read(path)?,
                        None => DiscreteMeasure::dirac(PhaseSpacePoint::d1(0.5, 0.0)),
                    };
                    let ev = cfg.evolution();
                    let rep = OscillatorRep::new(ev.n_basis, 1, ev.hbar)?;
                    let ground = fock_density(&rep, &[0])?;
                    let times = [0.0, ev.t_final / 2.0, ev.t_final];
                    let report = convergence_rate_check(&mu, &ground, &ground, &PairPotential::softened(), &ev, &times, &cfg.solver)?;
                    report.to_csv()
                }
                _ => {
                    let (a, b) = state_pair(states, "fock 0")?;
                    let rep = OscillatorRep::new(cfg.rep.n_basis, 1, cfg.rep.lambda)?;
                    let (ka, da) = a.build(&rep)?;
                    let (kb, db) = b.build(&rep)?;
                    let grid = cfg.grid_for(rep.lambda, da.max(db))?;
                    match what {
                        ExportKind::Wigner => wigner(&ka, &rep, &grid)?.to_csv(),
                        ExportKind::Husimi => husimi_trace(&ka, &kb, &rep, &grid)?.to_csv(),
                        ExportKind::Coupling => matrix_csv(solve_mk(&ka, &kb, &rep, &cfg.solver)?.coupling.q.matrix()),
                        ExportKind::Plan => {
                            let ground = fock_density(&rep, &[0])?;
                            let fa = field_to_measure(&husimi_trace(&ka, &ground, &rep, &grid)?, MAX_ATOMS, 1e-3)?;
                            let fb = field_to_measure(&husimi_trace(&kb, &ground, &rep, &grid)?, MAX_ATOMS, 1e-3)?;
                            w2(&fa.measure, &fb.measure)?.plan.to_csv()
                        }
                        ExportKind::Trajectory => unreachable!("handled above"),
                    }
                }
            };
            write_atomic(out, text.as_bytes())?;
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion => ExitCode::SUCCESS,
                _ => ExitCode::from(EXIT_USAGE),
            };
        }
    };
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(msg)) => {
            eprintln!("mk: {msg}");
            ExitCode::from(EXIT_USAGE)
        }
        Err(Failure::SuiteFailed(msg)) => {
            eprintln!("mk: {msg}");
            ExitCode::from(EXIT_VALIDATION)
        }
        Err(Failure::Run(e)) => {
            eprintln!("mk: {e}");
            match e {
                Error::NonConvergence { .. } => ExitCode::from(EXIT_NONCONVERGENCE),
                _ => ExitCode::from(EXIT_VALIDATION),
            }
        }
    }
}
