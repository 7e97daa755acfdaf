//! Command-line front end: run scenarios, validate them, or cross-check
//! the lateral solver against its independent reference.

use clap::{Parser, Subcommand};
use evade::cli_io::{envelope_csv, fmt_sig, parse_scenario, summary_json, timeseries_csv};
use evade::selfcheck;
use evade::simulator::{self, RunResult, ScenarioSpec};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

#[derive(Parser)]
#[command(name = "evade", version, about = "Emergency collision-avoidance scenario runner")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one scenario and write timeseries, envelope, and summary files.
    Run {
        scenario: PathBuf,
        /// Directory for the emitted files.
        #[arg(long, default_value = ".")]
        out_dir: PathBuf,
        /// Suppress the one-line result.
        #[arg(long)]
        quiet: bool,
    },
    /// Run several scenarios; exits non-zero on any parse error or collision.
    Batch {
        #[arg(required = true)]
        scenarios: Vec<PathBuf>,
        #[arg(long, default_value = ".")]
        out_dir: PathBuf,
    },
    /// Parse and check scenario files without running them.
    Validate {
        #[arg(required = true)]
        scenarios: Vec<PathBuf>,
    },
    /// Re-derive frozen anchors and cross-check the lateral solver
    /// against the enumeration reference on random instances.
    Selftest {
        #[arg(long, default_value_t = 200)]
        instances: usize,
        #[arg(long, default_value_t = 42)]
        seed: u64,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let code = match cli.command {
        Command::Run { scenario, out_dir, quiet } => cmd_run(&scenario, &out_dir, quiet),
        Command::Batch { scenarios, out_dir } => cmd_batch(&scenarios, &out_dir),
        Command::Validate { scenarios } => cmd_validate(&scenarios),
        Command::Selftest { instances, seed } => cmd_selftest(instances, seed),
    };
    ExitCode::from(code)
}

fn load(path: &Path) -> Result<ScenarioSpec, ()> {
    let text = match std::fs::read_to_string(path) {
        Ok(t) => t,
        Err(e) => {
            eprintln!("{}: {e}", path.display());
            return Err(());
        }
    };
    match parse_scenario(&text) {
        Ok(spec) => Ok(spec),
        Err(problems) => {
            for p in problems {
                eprintln!("{}: {p}", path.display());
            }
            Err(())
        }
    }
}

fn execute(path: &Path, spec: &ScenarioSpec, out_dir: &Path) -> Result<RunResult, ()> {
    let result = match simulator::run(spec) {
        Ok(r) => r,
        Err(e) => {
            eprintln!("{}: {e}", path.display());
            return Err(());
        }
    };
    if let Err(e) = write_reports(path, spec, &result, out_dir) {
        eprintln!("{}: {e}", path.display());
        return Err(());
    }
    Ok(result)
}

fn write_reports(
    path: &Path,
    spec: &ScenarioSpec,
    result: &RunResult,
    out_dir: &Path,
) -> std::io::Result<()> {
    let stem = path.file_stem().unwrap_or_default().to_string_lossy();
    std::fs::create_dir_all(out_dir)?;
    std::fs::write(out_dir.join(format!("{stem}.timeseries.csv")), timeseries_csv(result))?;
    if let Some(plan) = &result.plan {
        std::fs::write(
            out_dir.join(format!("{stem}.envelope.csv")),
            envelope_csv(plan, spec.planner.step_s),
        )?;
    }
    std::fs::write(out_dir.join(format!("{stem}.summary.json")), summary_json(result))?;
    Ok(())
}

fn result_line(result: &RunResult) -> String {
    let modes: Vec<&str> = result.mode_timeline.iter().map(|(_, m)| *m).collect();
    format!(
        "{}: collision={} min_gap={} final_gap={} max_ay={} modes={}",
        result.name,
        result.collision,
        fmt_sig(result.min_gap),
        fmt_sig(result.final_gap),
        fmt_sig(result.max_abs_ay),
        modes.join(">")
    )
}

fn cmd_run(scenario: &Path, out_dir: &Path, quiet: bool) -> u8 {
    let Ok(spec) = load(scenario) else { return 1 };
    let Ok(result) = execute(scenario, &spec, out_dir) else { return 1 };
    if !quiet {
        println!("{}", result_line(&result));
    }
    if result.collision {
        2
    } else {
        0
    }
}

fn cmd_batch(scenarios: &[PathBuf], out_dir: &Path) -> u8 {
    let mut any_error = false;
    let mut any_collision = false;
    for path in scenarios {
        match load(path).and_then(|spec| execute(path, &spec, out_dir)) {
            Ok(result) => {
                println!("{}", result_line(&result));
                any_collision |= result.collision;
            }
            Err(()) => any_error = true,
        }
    }
    if any_error {
        1
    } else if any_collision {
        2
    } else {
        0
    }
}

fn cmd_validate(scenarios: &[PathBuf]) -> u8 {
    let mut any_error = false;
    for path in scenarios {
        match load(path) {
            Ok(spec) => println!("{}: ok ({})", path.display(), spec.name),
            Err(()) => any_error = true,
        }
    }
    u8::from(any_error)
}

fn cmd_selftest(instances: usize, seed: u64) -> u8 {
    match selfcheck::run_spot_checks() {
        Ok(()) => println!("spot checks: ok"),
        Err(e) => {
            eprintln!("spot checks: {e}");
            return 1;
        }
    }
    match selfcheck::run_qp_cross_check(instances, seed) {
        Ok(r) => {
            println!(
                "solver cross-check: {} instances ({} with active bounds, {} attempts)",
                r.instances, r.with_active_bounds, r.attempts
            );
            println!(
                "  max relative objective error {:.3e}, max solution error {:.3e}",
                r.max_rel_objective_err, r.max_abs_solution_err
            );
            0
        }
        Err(e) => {
            eprintln!("solver cross-check: {e}");
            1
        }
    }
}
