//! Scenario-driven batch runner. Loads one scenario file (or a directory of
//! them), runs the requested pipeline and writes trajectories and
//! verification reports. Exit status is 0 only if every requested check
//! passed and no scenario failed to run.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use varimech::scenario::{render_trajectory_csv, Scenario};

#[derive(Parser)]
#[command(
    name = "varimech",
    version,
    about = "Mechanics engine for moving frames and constrained Lagrangian systems"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the configured solver and write the trajectory CSV
    Solve(RunArgs),
    /// Run the scenario's identity checks and emit a verification report
    Verify(RunArgs),
    /// Print the continuous and discrete action of the configured curve
    Action(RunArgs),
    /// Solve and verify in one run, writing trajectory and report
    Report(RunArgs),
}

#[derive(Args)]
struct RunArgs {
    /// Scenario file, or a directory whose *.toml files run as a batch
    #[arg(long)]
    scenario: PathBuf,
    /// Directory for output files (created if needed; default: current)
    #[arg(long)]
    out: Option<PathBuf>,
    /// Multiplies every check tolerance
    #[arg(long, default_value_t = 1.0)]
    tol_scale: f64,
    /// Suppress normal output; errors still go to stderr
    #[arg(long)]
    quiet: bool,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (args, mode) = match &cli.command {
        Command::Solve(a) => (a, Mode::Solve),
        Command::Verify(a) => (a, Mode::Verify),
        Command::Action(a) => (a, Mode::Action),
        Command::Report(a) => (a, Mode::Report),
    };

    let paths = match scenario_paths(&args.scenario) {
        Ok(p) => p,
        Err(msg) => {
            eprintln!("error: {msg}");
            return ExitCode::FAILURE;
        }
    };

    let mut all_passed = true;
    for path in &paths {
        match run_one(mode, path, args) {
            Ok(passed) => all_passed &= passed,
            Err(msg) => {
                eprintln!("error: {msg}");
                all_passed = false;
            }
        }
    }
    if all_passed {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}

#[derive(Clone, Copy, PartialEq)]
enum Mode {
    Solve,
    Verify,
    Action,
    Report,
}

fn scenario_paths(path: &Path) -> Result<Vec<PathBuf>, String> {
    if path.is_dir() {
        let mut found: Vec<PathBuf> = std::fs::read_dir(path)
            .map_err(|e| format!("cannot read directory {}: {e}", path.display()))?
            .filter_map(|entry| entry.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|ext| ext == "toml"))
            .collect();
        found.sort();
        if found.is_empty() {
            return Err(format!("no *.toml scenarios in {}", path.display()));
        }
        Ok(found)
    } else if path.is_file() {
        Ok(vec![path.to_path_buf()])
    } else {
        Err(format!("{} is neither a file nor a directory", path.display()))
    }
}

fn run_one(mode: Mode, path: &Path, args: &RunArgs) -> Result<bool, String> {
    let scn = Scenario::load(path).map_err(|e| format!("{}: {e}", path.display()))?;
    let wrap = |e: varimech::EngineError| format!("scenario `{}`: {e}", scn.name);
    let mut passed = true;

    if mode == Mode::Solve || mode == Mode::Report {
        let product = scn.solve().map_err(wrap)?;
        let csv = render_trajectory_csv(&product);
        let name = scn
            .output
            .trajectory
            .clone()
            .unwrap_or_else(|| format!("{}.csv", scn.name));
        let target = write_output(args, &name, &csv)?;
        if !args.quiet {
            println!("{}: trajectory written to {}", scn.name, target.display());
        }
    }

    if mode == Mode::Verify || mode == Mode::Report {
        let report = scn.run_checks(args.tol_scale).map_err(wrap)?;
        if !args.quiet {
            print!("{}", report.render_text());
        }
        let base = scn
            .output
            .report
            .clone()
            .unwrap_or_else(|| format!("{}.report", scn.name));
        if args.out.is_some() || scn.output.report.is_some() {
            write_output(args, &format!("{base}.txt"), &report.render_text())?;
            write_output(args, &format!("{base}.json"), &report.to_json())?;
        }
        passed &= report.passed;
    }

    if mode == Mode::Action {
        let vals = scn.action_values().map_err(wrap)?;
        if !args.quiet {
            println!(
                "{}: action continuous {:.16e} discrete {:.16e} ({} panels)",
                scn.name, vals.continuous, vals.discrete, vals.panels
            );
        }
    }

    Ok(passed)
}

fn write_output(args: &RunArgs, name: &str, content: &str) -> Result<PathBuf, String> {
    let dir = args.out.clone().unwrap_or_else(|| PathBuf::from("."));
    std::fs::create_dir_all(&dir)
        .map_err(|e| format!("cannot create output directory {}: {e}", dir.display()))?;
    let target = dir.join(name);
    std::fs::write(&target, content)
        .map_err(|e| format!("cannot write {}: {e}", target.display()))?;
    Ok(target)
}
