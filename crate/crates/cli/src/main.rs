use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use battle_core::costmodel::{cost_table, CostParams};
use battle_core::dag::{diff_exports, DagExport};
use battle_core::runner::{enumerate, export_bracket_dag, run_scenario, RunError};
use battle_core::scenario::{ConfigError, Scenario, Space};
use clap::{Parser, Subcommand};

const DEFAULT_CAP: u64 = 1_000_000;

#[derive(Parser)]
#[command(name = "battle", version, about = "Deterministic tournament dispute simulator")]
struct Cli {
    /// Overrides the scenario seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, global = true)]
    out_dir: Option<PathBuf>,
    /// Worker threads for batch runs; 1 runs sequentially.
    #[arg(long, global = true)]
    jobs: Option<usize>,
    /// Largest enumeration space accepted.
    #[arg(long, global = true)]
    cap: Option<u64>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one scenario file.
    Run { scenario: PathBuf },
    /// Exhaustively run a strategy space file.
    Enumerate { space: PathBuf },
    /// Export a bracket DAG as JSON.
    DagExport {
        #[arg(long)]
        n: u32,
        /// Include the challenger-round templates.
        #[arg(long)]
        full: bool,
    },
    /// Structurally compare two DAG exports.
    DagDiff { a: PathBuf, b: PathBuf },
    /// Print the cost table for a parameter file.
    Cost {
        params: PathBuf,
        /// Per-peg-in DAG bytes, skipping the measurement.
        #[arg(long)]
        dag_bytes: Option<u64>,
    },
}

enum Failure {
    Violation(String),
    Config(String),
}

impl From<ConfigError> for Failure {
    fn from(e: ConfigError) -> Self {
        Failure::Config(format!("config error at {e}"))
    }
}

impl From<RunError> for Failure {
    fn from(e: RunError) -> Self {
        match e {
            RunError::Config(c) => c.into(),
            other => Failure::Config(other.to_string()),
        }
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Config(e.to_string())
    }
}

impl From<serde_json::Error> for Failure {
    fn from(e: serde_json::Error) -> Self {
        Failure::Config(e.to_string())
    }
}

fn read(path: &Path) -> Result<String, Failure> {
    fs::read_to_string(path).map_err(|e| Failure::Config(format!("{}: {e}", path.display())))
}

fn write_out(dir: &Option<PathBuf>, name: &str, body: &str) -> Result<(), Failure> {
    if let Some(d) = dir {
        fs::create_dir_all(d)?;
        fs::write(d.join(name), body)?;
    }
    Ok(())
}

fn run(cli: Cli) -> Result<(), Failure> {
    match &cli.command {
        Command::Run { scenario } => {
            let mut s = Scenario::from_toml(&read(scenario)?)?;
            if let Some(seed) = cli.seed {
                s.seed = seed;
            }
            let a = run_scenario(&s)?;
            let r = &a.report;
            let mut summary = format!(
                "scenario {}\nseed {}  n {}  c {}  q {}\nwinner {:?}  makespan {:?}\n",
                r.scenario_digest, r.seed, r.n, r.c, r.q, r.phase1.winner, r.phase1.makespan
            );
            if let Some(p2) = &r.phase2 {
                summary += &format!(
                    "phase2 asserter {} rounds {} disputes {} won {} lost {} refund {:?} peak capital {}\n",
                    p2.asserter,
                    p2.rounds_used,
                    p2.disputes_opened,
                    p2.asserter_won,
                    p2.asserter_lost,
                    p2.refund,
                    p2.asserter_peak_capital
                );
            }
            summary += &format!(
                "open-and-abandon {}\ntrace {}\nviolations {}\n",
                r.oaa.is_oaa,
                r.trace_digest,
                r.violations.len()
            );
            for v in &r.violations {
                summary += &format!("  {v}\n");
            }
            let mut report = serde_json::to_string_pretty(r)?;
            report.push('\n');
            write_out(&cli.out_dir, "report.json", &report)?;
            write_out(&cli.out_dir, "trace.jsonl", &a.trace_jsonl)?;
            write_out(&cli.out_dir, "summary.txt", &summary)?;
            print!("{summary}");
            if r.violations.is_empty() {
                Ok(())
            } else {
                Err(Failure::Violation(format!("{} invariant violations", r.violations.len())))
            }
        }
        Command::Enumerate { space } => {
            let sp = Space::from_toml(&read(space)?)?;
            let sum = enumerate(&sp, cli.cap.unwrap_or(DEFAULT_CAP), cli.jobs)?;
            let mut lines = String::new();
            for v in &sum.violations {
                lines += &serde_json::to_string(v)?;
                lines.push('\n');
            }
            write_out(&cli.out_dir, "violations.jsonl", &lines)?;
            write_out(&cli.out_dir, "summary.json", &(serde_json::to_string_pretty(&sum)? + "\n"))?;
            println!("points {}  violations {}", sum.points, sum.violations.len());
            for (kind, outcome, count) in &sum.coverage {
                println!("  {kind:?} {outcome} {count}");
            }
            if sum.violations.is_empty() {
                Ok(())
            } else {
                Err(Failure::Violation(format!("{} violations", sum.violations.len())))
            }
        }
        Command::DagExport { n, full } => {
            let e = export_bracket_dag(*n, *full)?;
            let json = e.to_json();
            match &cli.out_dir {
                Some(_) => write_out(&cli.out_dir, &format!("dag_n{n}.json"), &json)?,
                None => println!("{json}"),
            }
            Ok(())
        }
        Command::DagDiff { a, b } => {
            let ea = DagExport::from_json(&read(a)?)?;
            let eb = DagExport::from_json(&read(b)?)?;
            let d = diff_exports(&ea, &eb);
            println!("{}", serde_json::to_string_pretty(&d)?);
            Ok(())
        }
        Command::Cost { params, dag_bytes } => {
            let p: CostParams = toml::from_str(&read(params)?)
                .map_err(|e| Failure::Config(format!("config error: {}", e.message())))?;
            let rows = cost_table(&p, *dag_bytes).map_err(|e| Failure::Config(e.to_string()))?;
            let mut jsonl = String::new();
            for r in &rows {
                println!("{:<26} {:>20} {:<8} {}", r.quantity, r.value, r.unit, r.display);
                jsonl += &serde_json::to_string(r)?;
                jsonl.push('\n');
            }
            write_out(&cli.out_dir, "cost.jsonl", &jsonl)?;
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Violation(m)) => {
            eprintln!("{m}");
            ExitCode::from(1)
        }
        Err(Failure::Config(m)) => {
            eprintln!("{m}");
            ExitCode::from(2)
        }
    }
}
