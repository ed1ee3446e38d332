//! Library side of the `momsos` command: argument model, problem loading,
//! report assembly and the run loop. `main.rs` only parses flags and exits.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand, ValueEnum};
use serde::Serialize;
use thiserror::Error;

use momsos::certify::{self, FlatTruncation, OptimalityReport};
use momsos::moments::{AtomicMeasure, Tms};
use momsos::problem::{parse_problem_str, ProblemError};
use momsos::relax::{self, HierarchyOptions, HierarchyResult, HierarchyStatus, Problem, RelaxError, Variant};
use momsos::sdp::{self, SolverSettings};

pub const EXIT_CONVERGED: i32 = 0;
pub const EXIT_INPUT_ERROR: i32 = 1;
pub const EXIT_UNRESOLVED: i32 = 2;
pub const EXIT_SOLVER_FAILURE: i32 = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum VariantArg {
    Plain,
    Homogenized,
    Denominator,
}

impl From<VariantArg> for Variant {
    fn from(v: VariantArg) -> Variant {
        match v {
            VariantArg::Plain => Variant::Plain,
            VariantArg::Homogenized => Variant::Homogenized,
            VariantArg::Denominator => Variant::Denominator,
        }
    }
}

#[derive(Debug, Clone, Parser)]
#[command(name = "momsos", version, about = "Moment-SOS relaxations with flat-truncation certificates")]
pub struct Cli {
    /// Increase log verbosity (-v info, -vv debug, -vvv trace).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    pub verbose: u8,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, clap::Args)]
pub struct Tolerances {
    /// Solver tolerance on primal, dual and gap residuals.
    #[arg(long, default_value_t = 1e-8)]
    pub tol: f64,
    /// Relative singular-value cutoff for numerical rank.
    #[arg(long, default_value_t = 1e-6)]
    pub rank_tol: f64,
    /// Feasibility tolerance for extracted atoms.
    #[arg(long, default_value_t = 1e-4)]
    pub feas_tol: f64,
    /// Activity tolerance for constraints in optimality checks.
    #[arg(long, default_value_t = 1e-6)]
    pub act_tol: f64,
    /// Atoms with |x0| at or below this are reported at infinity.
    #[arg(long, default_value_t = 1e-6)]
    pub tau_tol: f64,
    /// Interior-point iteration limit.
    #[arg(long, default_value_t = 200)]
    pub max_iter: usize,
}

#[derive(Debug, Clone, Subcommand)]
pub enum Command {
    /// Run a hierarchy and certify convergence by flat truncation.
    Solve {
        input: PathBuf,
        #[arg(long, value_enum, default_value_t = VariantArg::Plain)]
        variant: VariantArg,
        #[arg(long)]
        kmin: Option<u32>,
        /// Highest order tried (default: minimum order + 2).
        #[arg(long)]
        kmax: Option<u32>,
        #[command(flatten)]
        tols: Tolerances,
        /// Write the JSON report here.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Write the compiled SDP of the first order in the sparse text format.
        #[arg(long)]
        dump_sdp: Option<PathBuf>,
    },
    /// Test a tms file ({"n", "d", "values"}) for a flat truncation and extract atoms.
    CertifyFlat {
        input: PathBuf,
        #[arg(long)]
        d0: u32,
        #[arg(long, default_value_t = 1)]
        dk: u32,
        #[command(flatten)]
        tols: Tolerances,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Check LICQ, KKT, strict complementarity and SOSC at a point.
    CheckKkt {
        input: PathBuf,
        /// Comma separated coordinates.
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true, required = true)]
        point: Vec<f64>,
        #[command(flatten)]
        tols: Tolerances,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Write the compiled SDP of one order without solving it.
    Dump {
        input: PathBuf,
        #[arg(long, value_enum, default_value_t = VariantArg::Plain)]
        variant: VariantArg,
        #[arg(long)]
        k: Option<u32>,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Debug, Error)]
pub enum CliError {
    #[error("cannot read {path}: {source}")]
    Read { path: String, source: std::io::Error },
    #[error("cannot write {path}: {source}")]
    Write { path: String, source: std::io::Error },
    #[error("{path}: {source}")]
    Problem { path: String, source: ProblemError },
    #[error("{0}")]
    Config(String),
    #[error(transparent)]
    Relax(#[from] RelaxError),
}

/// Reads and validates a problem file.
pub fn parse_problem(path: &Path) -> Result<Problem, CliError> {
    let text = fs::read_to_string(path).map_err(|source| CliError::Read {
        path: path.display().to_string(),
        source,
    })?;
    let problem = parse_problem_str(&text).map_err(|source| CliError::Problem {
        path: path.display().to_string(),
        source,
    })?;
    problem.validate()?;
    Ok(problem)
}

fn check_tols(t: &Tolerances) -> Result<(), CliError> {
    for (name, v) in [
        ("--tol", t.tol),
        ("--rank-tol", t.rank_tol),
        ("--feas-tol", t.feas_tol),
        ("--act-tol", t.act_tol),
        ("--tau-tol", t.tau_tol),
    ] {
        if !(v > 0.0 && v.is_finite()) {
            return Err(CliError::Config(format!("{name} must be positive, got {v}")));
        }
    }
    if t.max_iter == 0 {
        return Err(CliError::Config("--max-iter must be positive".into()));
    }
    Ok(())
}

fn options(t: &Tolerances) -> HierarchyOptions {
    HierarchyOptions {
        solver: SolverSettings {
            tol: t.tol,
            max_iter: t.max_iter,
        },
        rank_tol: t.rank_tol,
        feas_tol: t.feas_tol,
        tau_tol: t.tau_tol,
    }
}

#[derive(Debug, Serialize)]
pub struct ProblemSummary {
    pub kind: &'static str,
    pub nvars: usize,
    pub equalities: usize,
    pub inequalities: usize,
    pub pairings: usize,
}

fn summarize(p: &Problem) -> ProblemSummary {
    let set = p.set();
    ProblemSummary {
        kind: match p {
            Problem::Gmp(_) => "gmp",
            Problem::Pop(_) => "pop",
        },
        nvars: set.nvars,
        equalities: set.eq.len(),
        inequalities: set.ineq.len(),
        pairings: match p {
            Problem::Gmp(g) => g.a.len(),
            Problem::Pop(_) => 0,
        },
    }
}

#[derive(Debug, Serialize)]
pub struct SettingsEcho {
    pub variant: VariantArg,
    pub kmin: u32,
    pub kmax: u32,
    pub tol: f64,
    pub rank_tol: f64,
    pub feas_tol: f64,
    pub tau_tol: f64,
    pub max_iter: usize,
}

#[derive(Debug, Serialize)]
pub struct SolveReport {
    pub command: &'static str,
    pub tool_version: &'static str,
    pub input: String,
    pub problem: ProblemSummary,
    pub settings: SettingsEcho,
    pub exit_code: i32,
    pub result: HierarchyResult,
}

#[derive(Debug, Serialize)]
pub struct FlatReport {
    pub command: &'static str,
    pub tool_version: &'static str,
    pub input: String,
    pub flat: Option<FlatTruncation>,
    pub atoms: Option<AtomicMeasure>,
    pub error: Option<String>,
}

#[derive(Debug, Serialize)]
pub struct KktReport {
    pub command: &'static str,
    pub tool_version: &'static str,
    pub input: String,
    pub report: OptimalityReport,
}

fn write_json<T: Serialize>(value: &T, out: Option<&Path>) -> Result<(), CliError> {
    let text = serde_json::to_string_pretty(value).expect("report serializes") + "\n";
    match out {
        Some(p) => fs::write(p, text).map_err(|source| CliError::Write {
            path: p.display().to_string(),
            source,
        }),
        None => Ok(()),
    }
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "-".to_string(), |x| format!("{x:+.8e}"))
}

/// Human readable summary of a hierarchy run.
pub fn render_summary(result: &HierarchyResult) -> String {
    let mut s = String::new();
    s.push_str(&format!(
        "{:>3}  {:>16}  {:>16}  {:<16} {:>5}  {}\n",
        "k", "moment value", "sos value", "status", "iter", "flat"
    ));
    for r in &result.records {
        let flat = r
            .flat
            .map_or_else(|| "-".to_string(), |f| format!("t={} ranks {}/{}", f.t, f.rank_low, f.rank_high));
        s.push_str(&format!(
            "{:>3}  {:>16}  {:>16}  {:<16} {:>5}  {}\n",
            r.k,
            fmt_opt(r.moment_value),
            fmt_opt(r.sos_value),
            format!("{:?}", r.status),
            r.iterations,
            flat
        ));
    }
    match &result.status {
        HierarchyStatus::Converged { order } => {
            s.push_str(&format!(
                "converged at order {order}, value {:.10}\n",
                result.value.unwrap_or(f64::NAN)
            ));
            if let Some(atoms) = &result.atoms {
                s.push_str(&format!("{} atom(s):\n", atoms.len()));
                for a in &atoms.atoms {
                    let pt: Vec<String> = a.point.iter().map(|v| format!("{v:.6}")).collect();
                    s.push_str(&format!("  weight {:.6}  at ({})\n", a.weight, pt.join(", ")));
                }
            }
            if let Some(theta) = &result.theta {
                let t: Vec<String> = theta.iter().map(|v| format!("{v:.6}")).collect();
                s.push_str(&format!("theta = ({})\n", t.join(", ")));
            }
        }
        HierarchyStatus::ZeroMeasure { order } => {
            s.push_str(&format!("order {order}: optimal tms vanishes (zero measure), no certificate\n"));
        }
        HierarchyStatus::Unresolved { max_order } => {
            s.push_str(&format!("unresolved up to order {max_order}\n"));
        }
    }
    for w in &result.warnings {
        s.push_str(&format!("warning: {w}\n"));
    }
    s
}

/// Exit code for a finished hierarchy run.
pub fn exit_code(result: &HierarchyResult) -> i32 {
    match result.status {
        HierarchyStatus::Converged { .. } => EXIT_CONVERGED,
        _ if result.any_solver_failure() => EXIT_SOLVER_FAILURE,
        _ => EXIT_UNRESOLVED,
    }
}

fn dump_to(problem: &Problem, variant: Variant, k: u32, path: &Path) -> Result<(), CliError> {
    let relax = relax::build_relaxation(problem, variant, k)?;
    let file = fs::File::create(path).map_err(|source| CliError::Write {
        path: path.display().to_string(),
        source,
    })?;
    let mut w = std::io::BufWriter::new(file);
    sdp::write_dump(&relax.sdp, &mut w)
        .and_then(|_| w.flush())
        .map_err(|source| CliError::Write {
            path: path.display().to_string(),
            source,
        })
}

/// Runs one command, printing the summary to `stdout`. Returns the exit
/// code; input problems surface as `Err` (exit code 1).
pub fn run(cli: &Cli, stdout: &mut dyn Write) -> Result<i32, CliError> {
    match &cli.command {
        Command::Solve {
            input,
            variant,
            kmin,
            kmax,
            tols,
            out,
            dump_sdp,
        } => {
            check_tols(tols)?;
            let problem = parse_problem(input)?;
            let v: Variant = (*variant).into();
            let min = relax::min_order(&problem, v)?;
            let kmin = kmin.unwrap_or(min);
            let kmax = kmax.unwrap_or(kmin.max(min) + 2);
            if kmin > kmax {
                return Err(CliError::Config(format!("--kmin {kmin} exceeds --kmax {kmax}")));
            }
            if let Some(path) = dump_sdp {
                dump_to(&problem, v, kmin, path)?;
            }
            let result = relax::solve_hierarchy(&problem, v, Some(kmin), kmax, &options(tols))?;
            let code = exit_code(&result);
            let _ = stdout.write_all(render_summary(&result).as_bytes());
            let report = SolveReport {
                command: "solve",
                tool_version: env!("CARGO_PKG_VERSION"),
                input: input.display().to_string(),
                problem: summarize(&problem),
                settings: SettingsEcho {
                    variant: *variant,
                    kmin,
                    kmax,
                    tol: tols.tol,
                    rank_tol: tols.rank_tol,
                    feas_tol: tols.feas_tol,
                    tau_tol: tols.tau_tol,
                    max_iter: tols.max_iter,
                },
                exit_code: code,
                result,
            };
            write_json(&report, out.as_deref())?;
            Ok(code)
        }
        Command::CertifyFlat {
            input,
            d0,
            dk,
            tols,
            out,
        } => {
            check_tols(tols)?;
            let text = fs::read_to_string(input).map_err(|source| CliError::Read {
                path: input.display().to_string(),
                source,
            })?;
            let w: Tms = serde_json::from_str(&text)
                .map_err(|e| CliError::Config(format!("{}: {e}", input.display())))?;
            w.validate()
                .map_err(|e| CliError::Config(format!("{}: {e}", input.display())))?;
            if w.degree() < 2 * d0 {
                return Err(CliError::Config(format!(
                    "tms degree {} is below 2 * d0 = {}",
                    w.degree(),
                    2 * d0
                )));
            }
            let flat = certify::flat_truncation(&w, *d0, *dk, tols.rank_tol);
            let (atoms, error) = match flat {
                Some(f) => match certify::extract_atoms(&w, f.t, tols.rank_tol) {
                    Ok(a) => (Some(a), None),
                    Err(e) => (None, Some(e.to_string())),
                },
                None => (None, None),
            };
            let _ = match (&flat, &atoms) {
                (Some(f), Some(a)) => writeln!(
                    stdout,
                    "flat at t = {} (ranks {}/{}), {} atom(s)",
                    f.t,
                    f.rank_low,
                    f.rank_high,
                    a.len()
                ),
                (Some(f), None) => writeln!(stdout, "flat at t = {}, extraction failed: {}", f.t, error.as_deref().unwrap_or("")),
                _ => writeln!(stdout, "no flat truncation"),
            };
            let code = if atoms.is_some() { EXIT_CONVERGED } else { EXIT_UNRESOLVED };
            write_json(
                &FlatReport {
                    command: "certify-flat",
                    tool_version: env!("CARGO_PKG_VERSION"),
                    input: input.display().to_string(),
                    flat,
                    atoms,
                    error,
                },
                out.as_deref(),
            )?;
            Ok(code)
        }
        Command::CheckKkt {
            input,
            point,
            tols,
            out,
        } => {
            check_tols(tols)?;
            let problem = parse_problem(input)?;
            let report = certify::check_optimality(problem.objective(), problem.set(), point, tols.act_tol, tols.tol.max(1e-6))
                .map_err(|e| CliError::Config(e.to_string()))?;
            let _ = writeln!(
                stdout,
                "active: eq {:?} ineq {:?}\nlicq {}  scc {}  sosc {}  kkt residual {:.3e}",
                report.active_eq, report.active_ineq, report.licq, report.scc, report.sosc, report.kkt_residual
            );
            write_json(
                &KktReport {
                    command: "check-kkt",
                    tool_version: env!("CARGO_PKG_VERSION"),
                    input: input.display().to_string(),
                    report,
                },
                out.as_deref(),
            )?;
            Ok(EXIT_CONVERGED)
        }
        Command::Dump { input, variant, k, out } => {
            let problem = parse_problem(input)?;
            let v: Variant = (*variant).into();
            let k = match k {
                Some(k) => *k,
                None => relax::min_order(&problem, v)?,
            };
            dump_to(&problem, v, k, out)?;
            let _ = writeln!(stdout, "wrote {}", out.display());
            Ok(EXIT_CONVERGED)
        }
    }
}
