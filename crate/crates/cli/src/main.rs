//! Command-line driver for the tempering lab.
//!
//! Exit codes: 0 success, 1 a checked inequality failed, 2 invalid input,
//! 3 state budget exceeded.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::{json, Value};

use tempering_lab::error::{Error, Result, DEFAULT_STATE_BUDGET};
use tempering_lab::hardness::{
    certificate, constrained_projected_chain, min_divergence_f, verify_bottleneck_bound,
    verify_mode_mass_bounds, HardInstance,
};
use tempering_lab::io::{read_input, select_kernel, FamilySpec, Input, KernelSelector};
use tempering_lab::kernels::uniform_proposal;
use tempering_lab::lower_bound::{verify_lower, LowerBoundOptions};
use tempering_lab::measure::random_family;
use tempering_lab::paths::{canonical_paths, edge_multiplicity_check, k_star, write_paths_csv};
use tempering_lab::sampler::{run_parallel_tempering, summary_json, write_trace_csv};
use tempering_lab::spectral::{spectral_gap_with, SolverChoice, SpectralOptions};
use tempering_lab::ProductSpace;

#[derive(Parser, Debug)]
#[command(
    name = "tempering-lab",
    version,
    about = "Spectral-gap laboratory for parallel tempering"
)]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug)]
struct Common {
    /// Cap on enumerated state-space sizes.
    #[arg(long, global = true, default_value_t = DEFAULT_STATE_BUDGET)]
    budget_states: usize,
    /// Absolute tolerance for inequality checks, in (0, 1).
    #[arg(long, global = true, default_value_t = 1e-8)]
    tol: f64,
    #[arg(long, global = true, default_value_t = 1)]
    seed: u64,
    #[arg(long, global = true, value_enum, default_value_t = Format::Json)]
    format: Format,
    /// Output file (directory for `simulate`); stdout when absent.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
enum Format {
    Json,
    Csv,
}

#[derive(Copy, Clone, Debug, ValueEnum)]
enum Solver {
    Auto,
    Dense,
    Power,
    Lanczos,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Spectral gap of a kernel file, a family kernel or the hard instance.
    Gap {
        #[arg(long)]
        input: Option<PathBuf>,
        /// Kernel of a family file: pt, pt-bar, t, q, p1, p2, level:<i>, level-bar:<i>.
        #[arg(long, default_value = "pt")]
        kernel: String,
        /// Use the constrained projected chain of the hard instance with this L.
        #[arg(long = "L")]
        top: Option<usize>,
        #[arg(long, value_enum, default_value_t = Solver::Auto)]
        solver: Solver,
    },
    /// Canonical-path comparison and the decomposition inequalities.
    VerifyLower {
        #[arg(long)]
        input: Option<PathBuf>,
        #[arg(long, default_value_t = 2)]
        m: usize,
        #[arg(long = "L", default_value_t = 2)]
        top: usize,
        #[arg(long, default_value_t = 2)]
        atoms_per_mode: usize,
        #[arg(long, default_value_t = 100)]
        test_functions: usize,
    },
    /// Exact checks and the Cheeger certificate for the hard instance.
    VerifyUpper {
        #[arg(long = "L")]
        top: usize,
        /// Skip the eigensolve and only run the exact checks.
        #[arg(long)]
        no_gap: bool,
    },
    /// Level-0 replacement paths (CSV) or their edge multiplicity (JSON).
    Paths {
        #[arg(long)]
        input: Option<PathBuf>,
        #[arg(long, default_value_t = 2)]
        m: usize,
        #[arg(long = "L", default_value_t = 2)]
        top: usize,
        /// Parking mode; defaults to 0, or the family's heaviest top-level mode.
        #[arg(long)]
        kstar: Option<usize>,
    },
    /// Export generated instances.
    Instance {
        #[command(subcommand)]
        action: InstanceAction,
    },
    /// Run the sampler and write a trace plus summary.
    Simulate {
        #[arg(long)]
        input: PathBuf,
        #[arg(long, default_value_t = 10_000)]
        n: usize,
        #[arg(long, default_value_t = 0)]
        burn_in: usize,
        /// Write every level to the trace, not just the top one.
        #[arg(long)]
        all_levels: bool,
    },
    /// Minimax divergence oracle over adjacent-swap paths.
    FOracle {
        #[arg(long = "L")]
        top: usize,
        #[arg(long, default_value_t = 0)]
        padding: usize,
    },
}

#[derive(Subcommand, Debug)]
enum InstanceAction {
    /// Exact mode-mass table of the hard instance.
    Export {
        #[arg(long = "L")]
        top: usize,
    },
}

enum Outcome {
    Pass,
    ChecksFailed,
}

fn spectral_options(solver: Solver, tol: f64, seed: u64) -> SpectralOptions {
    SpectralOptions {
        solver: match solver {
            Solver::Auto => SolverChoice::Auto,
            Solver::Dense => SolverChoice::Dense,
            Solver::Power => SolverChoice::Power,
            Solver::Lanczos => SolverChoice::Lanczos,
        },
        tol,
        seed,
        ..SpectralOptions::default()
    }
}

fn with_precision(mut v: Value, note: &str) -> Value {
    if let Value::Object(map) = &mut v {
        map.insert("precision".into(), Value::String(note.into()));
    }
    v
}

fn emit(out: Option<&Path>, text: &str) -> Result<()> {
    match out {
        Some(p) => fs::write(p, text)?,
        None => {
            let mut stdout = std::io::stdout().lock();
            stdout.write_all(text.as_bytes())?;
        }
    }
    Ok(())
}

fn emit_json(out: Option<&Path>, v: &Value) -> Result<()> {
    emit(out, &(serde_json::to_string_pretty(v)? + "\n"))
}

fn load_family(path: &Path) -> Result<FamilySpec> {
    match read_input(path)? {
        Input::Family(f) => Ok(f),
        Input::Kernel(_) => Err(Error::InvalidArgument(
            "expected a family file, got a kernel file".into(),
        )),
    }
}

fn run(cli: Cli) -> Result<Outcome> {
    let c = &cli.common;
    if !(c.tol > 0.0 && c.tol < 1.0) {
        return Err(Error::InvalidArgument("--tol must lie in (0, 1)".into()));
    }
    if c.budget_states == 0 {
        return Err(Error::InvalidArgument(
            "--budget-states must be positive".into(),
        ));
    }
    let out = c.out.as_deref();
    match cli.command {
        Command::Gap {
            input,
            kernel,
            top,
            solver,
        } => {
            let opts = spectral_options(solver, c.tol, c.seed);
            let p = match (input, top) {
                (Some(path), None) => match read_input(&path)? {
                    Input::Kernel(k) => k,
                    Input::Family(spec) => {
                        select_kernel(&spec, kernel.parse::<KernelSelector>()?, c.budget_states)?
                    }
                },
                (None, Some(l)) => {
                    constrained_projected_chain(&HardInstance::build(l)?, c.budget_states)?.kernel
                }
                _ => {
                    return Err(Error::InvalidArgument(
                        "give exactly one of --input or --L".into(),
                    ))
                }
            };
            let report = spectral_gap_with(&p, &opts)?;
            emit_json(
                out,
                &with_precision(
                    serde_json::to_value(report)?,
                    "f64; residual is the eigen-residual",
                ),
            )?;
            Ok(Outcome::Pass)
        }
        Command::VerifyLower {
            input,
            m,
            top,
            atoms_per_mode,
            test_functions,
        } => {
            let spec = match input {
                Some(p) => load_family(&p)?,
                None => {
                    let family = random_family(m, top, atoms_per_mode, c.seed)?;
                    let proposal = uniform_proposal(family.n_atoms());
                    FamilySpec { family, proposal }
                }
            };
            let opts = LowerBoundOptions {
                budget: c.budget_states,
                tol: c.tol,
                test_functions,
                seed: c.seed,
                spectral: spectral_options(Solver::Auto, c.tol, c.seed),
            };
            let report = verify_lower(&spec.family, &spec.proposal, &opts)?;
            emit_json(
                out,
                &with_precision(
                    serde_json::to_value(&report)?,
                    "f64; checks use absolute slack tol",
                ),
            )?;
            Ok(if report.holds {
                Outcome::Pass
            } else {
                Outcome::ChecksFailed
            })
        }
        Command::VerifyUpper { top, no_gap } => {
            let inst = HardInstance::build(top)?;
            let masses = verify_mode_mass_bounds(&inst);
            let bottleneck = verify_bottleneck_bound(&inst);
            let cert = certificate(
                &inst,
                c.budget_states,
                !no_gap,
                &spectral_options(Solver::Auto, c.tol, c.seed),
            )?;
            let ok = masses.holds && bottleneck.holds && cert.holds;
            let v = json!({
                "precision": "inequality checks are exact rationals (lhs_exact); gap and float fields are f64",
                "mode_mass_bounds": masses,
                "bottleneck": bottleneck,
                "certificate": cert,
                "holds": ok,
            });
            emit_json(out, &v)?;
            Ok(if ok {
                Outcome::Pass
            } else {
                Outcome::ChecksFailed
            })
        }
        Command::Paths {
            input,
            m,
            top,
            kstar,
        } => {
            let (m, levels, default_kstar) = match input {
                Some(p) => {
                    let f = load_family(&p)?.family;
                    (f.m(), f.num_levels(), k_star(&f))
                }
                None => (m, top + 1, 0),
            };
            let kstar = kstar.unwrap_or(default_kstar);
            match c.format {
                Format::Csv => {
                    if m == 0 || kstar >= m {
                        return Err(Error::InvalidArgument("need m ≥ 1 and k* < m".into()));
                    }
                    ProductSpace::new(m, levels)
                        .size_within("assignment space", c.budget_states)?;
                    let mut buf = Vec::new();
                    write_paths_csv(&mut buf, m, canonical_paths(m, levels, kstar))?;
                    emit(out, &String::from_utf8(buf).expect("ascii csv"))?;
                }
                Format::Json => {
                    let report = edge_multiplicity_check(m, levels, kstar, c.budget_states)?;
                    emit_json(
                        out,
                        &with_precision(serde_json::to_value(report)?, "exact integer counts"),
                    )?;
                }
            }
            Ok(Outcome::Pass)
        }
        Command::Instance {
            action: InstanceAction::Export { top },
        } => {
            let inst = HardInstance::build(top)?;
            emit_json(out, &inst.to_json())?;
            Ok(Outcome::Pass)
        }
        Command::Simulate {
            input,
            n,
            burn_in,
            all_levels,
        } => {
            if n == 0 {
                return Err(Error::InvalidArgument("--n must be at least 1".into()));
            }
            let spec = load_family(&input)?;
            let proposals = vec![spec.proposal.clone(); spec.family.num_levels()];
            let trace = run_parallel_tempering(&spec.family, &proposals, n, c.seed)?;
            let summary = with_precision(
                summary_json(&trace, &spec.family, burn_in)?,
                "f64 frequencies",
            );
            match out {
                Some(dir) => {
                    fs::create_dir_all(dir)?;
                    write_trace_csv(fs::File::create(dir.join("trace.csv"))?, &trace, all_levels)?;
                    emit_json(Some(&dir.join("summary.json")), &summary)?;
                }
                None if c.format == Format::Csv => {
                    write_trace_csv(std::io::stdout().lock(), &trace, all_levels)?
                }
                None => emit_json(None, &summary)?,
            }
            Ok(Outcome::Pass)
        }
        Command::FOracle { top, padding } => {
            let r = min_divergence_f(top, padding, c.budget_states)?;
            emit_json(
                out,
                &with_precision(serde_json::to_value(r)?, "exact integer search"),
            )?;
            Ok(Outcome::Pass)
        }
    }
}

fn configure_threads() -> Result<()> {
    if let Ok(v) = std::env::var("TEMPERING_LAB_THREADS") {
        let n: usize = v.parse().map_err(|_| {
            Error::InvalidArgument(format!("TEMPERING_LAB_THREADS={v:?} is not a count"))
        })?;
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Error::InvalidArgument(e.to_string()))?;
    }
    Ok(())
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
    match configure_threads().and_then(|_| run(cli)) {
        Ok(Outcome::Pass) => ExitCode::SUCCESS,
        Ok(Outcome::ChecksFailed) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(match e {
                Error::Budget { .. } => 3,
                _ => 2,
            })
        }
    }
}
