//! Command-line front end.
//!
//! Exit status is 0 on success, 1 on domain errors (unreadable or invalid
//! scenario, infeasible plan, failed verification) and 2 on usage errors.
//! Data goes to `--out` or stdout; diagnostics go to stderr.

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::dynamics::{default_max_steps, simulate, RealizationMap};
use crate::equilibria::{basins, basins_csv, curve_csv, enumerate_with, equilibria_csv, equilibria_text};
use crate::model::{load_scenario_file, Initial, Scenario};
use crate::payment::{plan, schedule_csv, schedule_text};
use crate::verifier::{generate_battery, run_battery, BatteryLimits};

#[derive(Debug, Parser)]
#[command(name = "fedgame", version, about = "Participation dynamics and payment planning for federated learning")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Format {
    Csv,
    Text,
}

#[derive(Debug, Args)]
struct Common {
    /// Scenario document (JSON).
    #[arg(long)]
    scenario: PathBuf,
    /// Output file; stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "csv")]
    format: Format,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run the best-response dynamic and print its trace.
    Simulate {
        #[command(flatten)]
        common: Common,
        /// Step budget; defaults to the domain size plus 10.
        #[arg(long)]
        max_steps: Option<u64>,
        /// Start from this expectation instead of the scenario's initial condition.
        #[arg(long)]
        initial: Option<u64>,
    },
    /// Print the realization mapping over the whole domain.
    Map {
        #[command(flatten)]
        common: Common,
    },
    /// List and classify the fixed points of the realization mapping.
    Equilibria {
        #[command(flatten)]
        common: Common,
    },
    /// Print where the dynamic settles from every starting point.
    Basins {
        #[command(flatten)]
        common: Common,
    },
    /// Plan subsidies that drive the coalition to its largest equilibrium.
    Payment {
        #[command(flatten)]
        common: Common,
        /// Stop before any stage that would push the total past this amount.
        #[arg(long)]
        budget: Option<f64>,
        /// Pay only the gap between each client's cost and current utility.
        #[arg(long)]
        efficient: bool,
    },
    /// Cross-check the solvers against brute force on random scenarios.
    Verify {
        #[arg(long, default_value_t = 42)]
        seed: u64,
        #[arg(long, default_value_t = 1000)]
        count: usize,
        #[arg(long, default_value_t = 12)]
        max_clients: usize,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, value_enum, default_value = "text")]
        format: Format,
    },
    /// Write random battery scenarios as JSON documents.
    Gen {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 1)]
        count: usize,
        #[arg(long, default_value_t = 12)]
        max_clients: usize,
        /// Directory for the generated files; created if missing.
        #[arg(long)]
        out_dir: PathBuf,
    },
}

struct Failure(String);

impl<E: std::fmt::Display> From<E> for Failure {
    fn from(e: E) -> Self {
        Failure(e.to_string())
    }
}

/// Parses `args` (program name first), runs the command, and returns the
/// exit status.
pub fn dispatch<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match run(cli.command) {
        Ok(()) => 0,
        Err(Failure(msg)) => {
            eprintln!("error: {msg}");
            1
        }
    }
}

/// Writes the battery scenarios for `seed` into `out_dir` as
/// `<name>.json`, creating the directory if needed. Returns the paths in
/// generation order.
pub fn gen(seed: u64, count: usize, max_clients: usize, out_dir: &Path) -> std::io::Result<Vec<PathBuf>> {
    fs::create_dir_all(out_dir)?;
    let mut paths = Vec::with_capacity(count);
    for scenario in generate_battery(seed, count, max_clients) {
        let path = out_dir.join(format!("{}.json", scenario.name));
        let mut text = scenario.to_json();
        text.push('\n');
        fs::write(&path, text)?;
        paths.push(path);
    }
    Ok(paths)
}

fn load(path: &Path) -> Result<Scenario, Failure> {
    load_scenario_file(path).map_err(|e| Failure(format!("{}: {e}", path.display())))
}

fn emit(out: Option<&Path>, data: &str) -> Result<(), Failure> {
    match out {
        Some(path) => fs::write(path, data).map_err(|e| Failure(format!("{}: {e}", path.display()))),
        None => {
            print!("{data}");
            Ok(())
        }
    }
}

/// Space-aligned rendering of a CSV table without quoted fields.
fn align(csv: &str) -> String {
    let rows: Vec<Vec<&str>> = csv.lines().map(|l| l.split(',').collect()).collect();
    let cols = rows.iter().map(Vec::len).max().unwrap_or(0);
    let widths: Vec<usize> = (0..cols)
        .map(|c| rows.iter().filter_map(|r| r.get(c)).map(|f| f.len().max(1)).max().unwrap_or(1))
        .collect();
    let mut out = String::new();
    for row in rows {
        let cells: Vec<String> = row
            .iter()
            .enumerate()
            .map(|(c, f)| format!("{:>w$}", if f.is_empty() { "-" } else { f }, w = widths[c]))
            .collect();
        out.push_str(&cells.join("  "));
        out.push('\n');
    }
    out
}

fn run(command: Command) -> Result<(), Failure> {
    match command {
        Command::Simulate {
            common,
            max_steps,
            initial,
        } => {
            let mut scenario = load(&common.scenario)?;
            if let Some(k) = initial {
                scenario = scenario.with_initial(Initial::Expectation(k))?;
            }
            let steps = max_steps.unwrap_or_else(|| default_max_steps(&scenario));
            let trace = simulate(&scenario, steps);
            let data = match common.format {
                Format::Csv => trace.to_csv(&scenario),
                Format::Text => trace.to_text(),
            };
            emit(common.out.as_deref(), &data)
        }
        Command::Map { common } => {
            let scenario = load(&common.scenario)?;
            let csv = curve_csv(&RealizationMap::new(&scenario));
            let data = match common.format {
                Format::Csv => csv,
                Format::Text => align(&csv),
            };
            emit(common.out.as_deref(), &data)
        }
        Command::Equilibria { common } => {
            let scenario = load(&common.scenario)?;
            let map = RealizationMap::new(&scenario);
            let reports = enumerate_with(&map);
            let basin_map = basins(&scenario);
            let data = match common.format {
                Format::Csv => equilibria_csv(&reports, &basin_map),
                Format::Text => equilibria_text(&reports, &basin_map),
            };
            emit(common.out.as_deref(), &data)
        }
        Command::Basins { common } => {
            let scenario = load(&common.scenario)?;
            let csv = basins_csv(&basins(&scenario));
            let data = match common.format {
                Format::Csv => csv,
                Format::Text => align(&csv),
            };
            emit(common.out.as_deref(), &data)
        }
        Command::Payment {
            common,
            budget,
            efficient,
        } => {
            if let Some(b) = budget {
                if !(b.is_finite() && b >= 0.0) {
                    return Err(Failure(format!("budget must be a finite non-negative number, got {b}")));
                }
            }
            let scenario = load(&common.scenario)?;
            let schedule = plan(&scenario, budget, efficient)?;
            if schedule.budget_truncated {
                eprintln!("note: budget exhausted before the largest equilibrium");
            }
            let data = match common.format {
                Format::Csv => schedule_csv(&schedule),
                Format::Text => schedule_text(&schedule),
            };
            emit(common.out.as_deref(), &data)
        }
        Command::Verify {
            seed,
            count,
            max_clients,
            out,
            format,
        } => {
            if max_clients == 0 {
                return Err(Failure("max-clients must be at least 1".into()));
            }
            let limits = BatteryLimits {
                max_clients,
                ..BatteryLimits::default()
            };
            let report = run_battery(seed, count, &limits);
            let data = match format {
                Format::Csv => report.to_csv(),
                Format::Text => report.to_text(),
            };
            emit(out.as_deref(), &data)?;
            if report.all_passed() {
                Ok(())
            } else {
                Err(Failure(format!("{} check(s) failed", report.counterexamples.len())))
            }
        }
        Command::Gen {
            seed,
            count,
            max_clients,
            out_dir,
        } => {
            if max_clients == 0 {
                return Err(Failure("max-clients must be at least 1".into()));
            }
            gen(seed, count, max_clients, &out_dir)
                .map(|_| ())
                .map_err(|e| Failure(format!("{}: {e}", out_dir.display())))
        }
    }
}
