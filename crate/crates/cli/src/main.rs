use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use tdmh_core::harness::{self, preset, HexNetwork};
use tdmh_core::scheduler::{find_violation, schedule_streams, CompactSchedule, RejectReason};
use tdmh_core::sim::{self, PowerModel, Scenario};

const EXIT_IO: u8 = 1;
const EXIT_PARSE: u8 = 2;
const EXIT_INVALID: u8 = 3;
const EXIT_NONCONVERGENT: u8 = 4;
const EXIT_CAPACITY: u8 = 5;

#[derive(Parser)]
#[command(name = "tdmh", version, about = "TDMA mesh scheduler, simulator and experiment harness")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a scenario; prints the metrics CSV.
    Simulate {
        #[arg(long)]
        scenario: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        /// Directory for metrics.csv and events.log.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Schedule the scenario's streams on its initial topology.
    Schedule {
        #[arg(long)]
        scenario: PathBuf,
        /// Directory for schedule.txt and schedule.bin.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Check a compact schedule file against a scenario's topology.
    Validate {
        #[arg(long)]
        scenario: PathBuf,
        #[arg(long)]
        schedule: PathBuf,
    },
    /// Formation time over the (max nodes, nodes, uplink frames) grid.
    Formation {
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Average current over the (data-slot utilization, neighbours) grid.
    Power {
        #[arg(long, default_value_t = 10)]
        steps: usize,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Admission against the whole-network flooding baseline.
    Compare {
        #[arg(long, default_value = "comparison37")]
        preset: String,
        #[arg(long, default_value_t = 200)]
        trials: usize,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long)]
        csv: bool,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

struct Failure {
    code: u8,
    message: String,
}

impl Failure {
    fn new(code: u8, message: impl ToString) -> Self {
        Failure { code, message: message.to_string() }
    }
}

type CmdResult = Result<u8, Failure>;

fn read(path: &Path) -> Result<String, Failure> {
    fs::read_to_string(path).map_err(|e| Failure::new(EXIT_IO, format!("{}: {e}", path.display())))
}

fn load_scenario(path: &Path) -> Result<Scenario, Failure> {
    let s = Scenario::parse(&read(path)?).map_err(|e| Failure::new(EXIT_PARSE, format!("{}: {e}", path.display())))?;
    s.validate().map_err(|e| Failure::new(EXIT_INVALID, format!("{}: {e}", path.display())))?;
    Ok(s)
}

fn write_file(dir: &Path, name: &str, bytes: &[u8]) -> Result<(), Failure> {
    fs::create_dir_all(dir).map_err(|e| Failure::new(EXIT_IO, format!("{}: {e}", dir.display())))?;
    let p = dir.join(name);
    fs::write(&p, bytes).map_err(|e| Failure::new(EXIT_IO, format!("{}: {e}", p.display())))
}

fn emit(out: &Option<PathBuf>, name: &str, text: &str) -> Result<(), Failure> {
    match out {
        Some(dir) => write_file(dir, name, text.as_bytes()),
        None => io::stdout().write_all(text.as_bytes()).map_err(|e| Failure::new(EXIT_IO, e)),
    }
}

fn simulate(scenario: &Path, seed: Option<u64>, out: &Option<PathBuf>) -> CmdResult {
    let mut s = load_scenario(scenario)?;
    if let Some(seed) = seed {
        s.seed = seed;
    }
    let (metrics, log) = sim::run(&s).map_err(|e| Failure::new(EXIT_INVALID, e))?;
    let csv = metrics.to_csv();
    emit(out, "metrics.csv", &csv)?;
    if let Some(dir) = out {
        write_file(dir, "events.log", log.to_text().as_bytes())?;
    }
    if metrics.formation_time.is_none() {
        eprintln!("network did not form within {:?}", s.duration);
        return Ok(EXIT_NONCONVERGENT);
    }
    Ok(0)
}

fn schedule(scenario: &Path, out: &Option<PathBuf>) -> CmdResult {
    let s = load_scenario(scenario)?;
    let graph = s.initial_graph();
    let streams: Vec<_> = s.streams.iter().map(|r| (r.id, r.params)).collect();
    let outcome = schedule_streams(&streams, &graph, &s.config, 1);
    let mut text = outcome.schedule.render_table(&s.config);
    for r in &outcome.rejected {
        text += &format!("rejected {} {}\n", r.stream, r.reason);
    }
    let bytes = outcome.schedule.encode().map_err(|e| Failure::new(EXIT_INVALID, e))?;
    let hex: String = bytes.iter().map(|b| format!("{b:02x}")).collect();
    text += &format!("compact {} bytes {hex}\n", bytes.len());
    emit(out, "schedule.txt", &text)?;
    if let Some(dir) = out {
        write_file(dir, "schedule.bin", &bytes)?;
    }
    let capacity = outcome.rejected.iter().any(|r| r.reason == RejectReason::Capacity);
    Ok(if capacity { EXIT_CAPACITY } else { 0 })
}

fn validate(scenario: &Path, schedule: &Path) -> CmdResult {
    let s = load_scenario(scenario)?;
    let bytes = fs::read(schedule).map_err(|e| Failure::new(EXIT_IO, format!("{}: {e}", schedule.display())))?;
    let sched = CompactSchedule::decode(&bytes, &s.config)
        .map_err(|e| Failure::new(EXIT_PARSE, format!("{}: {e}", schedule.display())))?;
    match find_violation(&sched, &s.initial_graph()) {
        None => {
            println!("valid: schedule {} with {} elements", sched.id, sched.elements.len());
            Ok(0)
        }
        Some(v) => {
            println!("invalid: {v}");
            Ok(EXIT_INVALID)
        }
    }
}

fn formation(out: &Option<PathBuf>) -> CmdResult {
    let results = harness::formation_sweep(&harness::formation_grid());
    emit(out, "formation.csv", &harness::formation_csv(&results))?;
    Ok(if results.iter().any(|r| r.time.is_err()) { EXIT_NONCONVERGENT } else { 0 })
}

fn power(steps: usize, out: &Option<PathBuf>) -> CmdResult {
    let cfg = tdmh_core::NetworkConfig::default();
    let pts = harness::power_sweep(&cfg, &PowerModel::default(), &[0, 2, 4, 6], steps.max(1));
    emit(out, "power.csv", &harness::power_csv(&pts))?;
    Ok(0)
}

fn compare(name: &str, trials: usize, seed: u64, csv: bool, out: &Option<PathBuf>) -> CmdResult {
    let net: HexNetwork = preset(name).ok_or_else(|| Failure::new(EXIT_PARSE, format!("unknown preset {name:?}")))?;
    if trials == 0 {
        return Err(Failure::new(EXIT_INVALID, "trials must be at least 1"));
    }
    let rows = harness::compare(&net, trials, seed).map_err(|e| Failure::new(EXIT_INVALID, e))?;
    if csv {
        emit(out, "compare.csv", &harness::compare_csv(&rows))?;
    } else {
        emit(out, "compare.txt", &harness::compare_text(&rows))?;
    }
    Ok(0)
}

fn main() -> ExitCode {
    env_logger::init();
    let cli = Cli::parse();
    let res = match &cli.command {
        Command::Simulate { scenario, seed, out } => simulate(scenario, *seed, out),
        Command::Schedule { scenario, out } => schedule(scenario, out),
        Command::Validate { scenario, schedule } => validate(scenario, schedule),
        Command::Formation { out } => formation(out),
        Command::Power { steps, out } => power(*steps, out),
        Command::Compare { preset, trials, seed, csv, out } => compare(preset, *trials, *seed, *csv, out),
    };
    match res {
        Ok(code) => ExitCode::from(code),
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}
