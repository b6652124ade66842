use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use tideline::ablate::run_ablation;
use tideline::mission::run_mission;
use tideline::report::{rerender_from_logs, write_all};
use tideline::scenario::Scenario;
use tideline::OUTPUT_DIR_ENV;

#[derive(Parser)]
#[command(
    name = "tideline",
    about = "Centralized surface/underwater multi-robot SLAM on synthetic littoral worlds"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one mission from a scenario file and write all artifacts.
    Run {
        scenario: PathBuf,
        /// Output directory (default: out/<scenario name>).
        #[arg(long)]
        out: Option<PathBuf>,
        /// Override the scenario's seed.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Run the window/consistency ablation grid over a batch of seeds.
    Ablate {
        scenario: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Number of seeds (default: scenario's ablation.seeds).
        #[arg(long)]
        seeds: Option<u64>,
    },
    /// Re-render the map and trajectory SVGs from a written output directory.
    Report {
        logs: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Print a ready-to-edit scenario file for the built-in harbor mission.
    Scenario,
}

fn output_dir(explicit: Option<PathBuf>, default_name: &str) -> PathBuf {
    if let Some(dir) = explicit {
        return dir;
    }
    if let Ok(dir) = std::env::var(OUTPUT_DIR_ENV) {
        return PathBuf::from(dir).join(default_name);
    }
    PathBuf::from("out").join(default_name)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(message) => {
            eprintln!("error: {message}");
            ExitCode::FAILURE
        }
    }
}

fn run(cli: Cli) -> Result<(), String> {
    match cli.command {
        Command::Run {
            scenario,
            out,
            seed,
        } => {
            let mut scenario = Scenario::load(&scenario).map_err(|e| e.to_string())?;
            if let Some(seed) = seed {
                scenario.seed = seed;
            }
            let result = run_mission(&scenario).map_err(|e| e.to_string())?;
            let dir = output_dir(out, &format!("{}-{}", result.scenario_name, result.seed));
            write_all(&result, &dir).map_err(|e| e.to_string())?;
            println!(
                "mission '{}' seed {}: {} surface keyframes, {} closures, wrote {}",
                result.scenario_name,
                result.seed,
                result.usv_keyframes,
                result.closures_accepted,
                dir.display()
            );
            for report in &result.reports {
                let merged = report
                    .multi_robot
                    .as_ref()
                    .map(|e| format!("mae {:.2} m rmse {:.2} m", e.mae, e.rmse))
                    .unwrap_or_else(|| "unmerged".into());
                println!(
                    "  auv {}: dead-reckoning rmse {:.2} m | multi-robot {merged} [{}]",
                    report.id,
                    report.dead_reckoning.rmse,
                    report.status.as_str()
                );
            }
            Ok(())
        }
        Command::Ablate {
            scenario,
            out,
            seeds,
        } => {
            let base = Scenario::load(&scenario).map_err(|e| e.to_string())?;
            let count = seeds.unwrap_or(base.ablation.seeds).max(1);
            let seed_list: Vec<u64> = (0..count).map(|k| base.seed + k).collect();
            let table = run_ablation(&base, &seed_list).map_err(|e| e.to_string())?;
            let dir = output_dir(out, &format!("{}-ablation", base.name));
            std::fs::create_dir_all(&dir).map_err(|e| e.to_string())?;
            let path = dir.join("ablation.csv");
            std::fs::write(&path, table.to_csv()).map_err(|e| e.to_string())?;
            println!("wrote {} ({} rows)", path.display(), table.rows.len());
            Ok(())
        }
        Command::Report { logs, out } => {
            let dir = output_dir(out, "report");
            rerender_from_logs(&logs, &dir).map_err(|e| e.to_string())?;
            println!("re-rendered SVGs into {}", dir.display());
            Ok(())
        }
        Command::Scenario => {
            print!("{}", Scenario::harbor_demo(7).to_toml());
            Ok(())
        }
    }
}
