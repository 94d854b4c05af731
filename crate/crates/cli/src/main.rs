//! `xchain`: run packaged or custom scenarios and check stored traces.
//!
//! Exit codes: 0 when both checkers pass, 1 when a checker fails, 2 on a
//! configuration or input error.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use atomic_xchain::scenario;
use atomic_xchain::sim::{self, check_liveness, check_safety, FaultSpec, FinalState, ScenarioConfig, Trace, Verdict};
use clap::{Args, Parser, Subcommand};

#[derive(Parser)]
#[command(name = "xchain", version, about = "Atomic crosschain transaction simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a scenario, write its trace and final state, and check both.
    Run(RunArgs),
    /// Re-run the checkers over a stored trace and final state.
    Check(CheckArgs),
    /// List the packaged scenarios.
    List,
}

#[derive(Args)]
struct RunArgs {
    /// Packaged scenario name (see `xchain list`).
    #[arg(long, conflicts_with = "config", required_unless_present = "config")]
    scenario: Option<String>,
    /// Scenario config JSON file.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Extra faults, e.g. `crash:after_commit`, `loss:0.2`, `delay:0-4`,
    /// `byzantine:2:1:corrupt`.
    #[arg(long, num_args = 1..)]
    faults: Vec<FaultSpec>,
    /// Add faults drawn from the seed.
    #[arg(long)]
    random_faults: bool,
    /// Write the trace as JSON lines.
    #[arg(long)]
    trace: Option<PathBuf>,
    /// Write the final state as JSON.
    #[arg(long)]
    state: Option<PathBuf>,
    /// Exit 0 for runs labelled outside the fault assumptions.
    #[arg(long)]
    allow_outside: bool,
}

#[derive(Args)]
struct CheckArgs {
    #[arg(long)]
    trace: PathBuf,
    #[arg(long)]
    state: PathBuf,
    /// Config the run used; supplies timing parameters for the liveness bound.
    #[arg(long)]
    config: PathBuf,
}

struct Failure(u8, String);

impl Failure {
    fn input(msg: impl Into<String>) -> Self {
        Failure(2, msg.into())
    }
}

fn read(path: &Path) -> Result<String, Failure> {
    fs::read_to_string(path).map_err(|e| Failure::input(format!("{}: {e}", path.display())))
}

fn write(path: &Path, text: &str) -> Result<(), Failure> {
    fs::write(path, text).map_err(|e| Failure::input(format!("{}: {e}", path.display())))
}

fn load_config(scenario_name: Option<&str>, path: Option<&Path>) -> Result<ScenarioConfig, Failure> {
    match (scenario_name, path) {
        (Some(name), _) => scenario::load(name).ok_or_else(|| Failure::input(format!("unknown scenario {name}"))),
        (None, Some(path)) => ScenarioConfig::from_json(&read(path)?).map_err(|e| Failure::input(e.to_string())),
        (None, None) => Err(Failure::input("need --scenario or --config")),
    }
}

fn report(safety: &Verdict, liveness: &Verdict) {
    println!("safety: {safety}");
    println!("liveness: {liveness}");
}

fn cmd_run(args: RunArgs) -> Result<(), Failure> {
    let cfg = load_config(args.scenario.as_deref(), args.config.as_deref())?;
    let mut faults = args.faults;
    if args.random_faults {
        faults.extend(sim::random_faults(&cfg, args.seed));
    }
    let out = sim::run_with_faults(&cfg, args.seed, &faults).map_err(|e| Failure::input(e.to_string()))?;
    if let Some(path) = &args.trace {
        write(path, &out.trace.to_jsonl())?;
    }
    if let Some(path) = &args.state {
        write(path, &out.final_state.to_json())?;
    }

    let state = &out.final_state;
    println!("scenario {} seed {} ticks {}", cfg.name, args.seed, state.tick);
    for f in &faults {
        println!("fault {f}");
    }
    for s in &state.submissions {
        match &s.reason {
            Some(r) => println!("{}: {:?} ({r})", s.label, s.status),
            None => println!("{}: {:?}", s.label, s.status),
        }
    }
    let safety = check_safety(&out.trace, state);
    let liveness = check_liveness(&out.trace, state, &cfg.params);
    report(&safety, &liveness);
    if state.outside_assumptions {
        println!("run is outside the fault assumptions");
        if args.allow_outside {
            return Ok(());
        }
        return Err(Failure(
            1,
            "outside assumptions (pass --allow-outside to accept)".into(),
        ));
    }
    if safety.pass && liveness.pass {
        Ok(())
    } else {
        Err(Failure(1, "checker failed".into()))
    }
}

fn cmd_check(args: CheckArgs) -> Result<(), Failure> {
    let cfg = load_config(None, Some(&args.config))?;
    let trace = Trace::from_jsonl(&read(&args.trace)?).map_err(|e| Failure::input(format!("trace: {e}")))?;
    let state = FinalState::from_json(&read(&args.state)?).map_err(|e| Failure::input(format!("state: {e}")))?;
    let safety = check_safety(&trace, &state);
    let liveness = check_liveness(&trace, &state, &cfg.params);
    report(&safety, &liveness);
    if safety.pass && liveness.pass {
        Ok(())
    } else {
        Err(Failure(1, "checker failed".into()))
    }
}

fn cmd_list() {
    for (name, description) in scenario::list() {
        println!("{name:<26} {description}");
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run(args) => cmd_run(args),
        Command::Check(args) => cmd_check(args),
        Command::List => {
            cmd_list();
            Ok(())
        }
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure(code, msg)) => {
            eprintln!("xchain: {msg}");
            ExitCode::from(code)
        }
    }
}
