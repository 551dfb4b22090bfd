//! Command-line front end: single runs and the preset experiment sweeps.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use mavtrack::harness::presets::{
    preset_comm_loss, preset_formation, preset_obstacle_density, preset_scalability, write_table,
    with_parallelism,
};
use mavtrack::harness::{run_scenario, Scenario};

#[derive(Parser)]
#[command(name = "mavtrack", version, about = "Decentralized multi-MAV target tracking simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct CommonArgs {
    /// Scenario TOML overriding the built-in defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Base seed.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Trials per condition.
    #[arg(long)]
    trials: Option<usize>,
    /// Run duration in seconds.
    #[arg(long)]
    duration: Option<f64>,
    /// Output directory for metrics.csv / summary.json / tables.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Worker threads for parallel trials (0 = rayon default).
    #[arg(long, default_value_t = 0)]
    parallel: usize,
}

#[derive(Subcommand)]
enum Command {
    /// Run one scenario and write per-tick metrics plus a summary.
    Run(CommonArgs),
    /// K=3 formation behavior around a stationary and a walking person.
    Formation(CommonArgs),
    /// Tracking error versus team size.
    Scalability {
        #[command(flatten)]
        common: CommonArgs,
        /// Team sizes, comma separated.
        #[arg(long, value_delimiter = ',', default_values_t = vec![3, 5, 8, 12, 16])]
        ks: Vec<usize>,
    },
    /// Tracking error versus communication loss.
    Commloss {
        #[command(flatten)]
        common: CommonArgs,
        #[arg(long, value_delimiter = ',', default_values_t = vec![0.0, 0.1, 0.2, 0.25, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9, 1.0])]
        losses: Vec<f64>,
        #[arg(long, default_value_t = 8)]
        k: usize,
    },
    /// Tracking error and safety versus obstacle count.
    Obstacles {
        #[command(flatten)]
        common: CommonArgs,
        #[arg(long, value_delimiter = ',', default_values_t = vec![0, 4, 8, 12])]
        counts: Vec<usize>,
        #[arg(long, default_value_t = 5)]
        k: usize,
    },
}

fn load_scenario(common: &CommonArgs) -> Result<Scenario, String> {
    let mut scenario = match &common.config {
        Some(path) => {
            let text = std::fs::read_to_string(path)
                .map_err(|e| format!("reading {}: {e}", path.display()))?;
            Scenario::from_toml(&text).map_err(|e| e.to_string())?
        }
        None => Scenario::default(),
    };
    scenario.world.seed = common.seed;
    if let Some(d) = common.duration {
        scenario.world.duration = d;
    }
    Ok(scenario)
}

fn out_dir(common: &CommonArgs) -> PathBuf {
    common.out.clone().unwrap_or_else(|| PathBuf::from("out"))
}

fn run(cli: Cli) -> Result<(), String> {
    match cli.command {
        Command::Run(common) => {
            let scenario = load_scenario(&common)?;
            let metrics = run_scenario(&scenario).map_err(|e| e.to_string())?;
            let dir = out_dir(&common);
            metrics
                .write_csv(&dir.join("metrics.csv"))
                .map_err(|e| e.to_string())?;
            metrics
                .write_summary_json(&dir.join("summary.json"))
                .map_err(|e| e.to_string())?;
            println!(
                "run: k={} seed={} mean_track_err={:.3} m, in_fov={:.3}, outputs in {}",
                metrics.summary.k,
                metrics.summary.seed,
                metrics.summary.mean_track_err,
                metrics.summary.in_fov_fraction,
                dir.display()
            );
            Ok(())
        }
        Command::Formation(common) => {
            let trials = common.trials.unwrap_or(5);
            let duration = common.duration.unwrap_or(60.0);
            let report = with_parallelism(common.parallel, || {
                preset_formation(trials, common.seed, duration)
            })
            .map_err(|e| e.to_string())?;
            for t in report.stationary.iter().chain(report.walking.iter()) {
                println!(
                    "formation[{}] seed={} sep_err={}deg range_err={:.2} alt_err={:.2} in_fov={:.3}",
                    if t.walking { "walking" } else { "stationary" },
                    t.seed,
                    t.sep_err_max_deg.map_or("-".into(), |v| format!("{v:.1}")),
                    t.range_err_max,
                    t.alt_err_max,
                    t.in_fov_fraction
                );
            }
            let dir = out_dir(&common);
            write_table(&report.stationary, &dir.join("formation_stationary.json"))
                .and_then(|_| write_table(&report.walking, &dir.join("formation_walking.json")))
                .map_err(|e| e.to_string())
        }
        Command::Scalability { common, ks } => {
            let trials = common.trials.unwrap_or(5);
            let duration = common.duration.unwrap_or(60.0);
            let rows = with_parallelism(common.parallel, || {
                preset_scalability(&ks, trials, common.seed, duration)
            })
            .map_err(|e| e.to_string())?;
            println!("k,mean_track_err,std_track_err");
            for r in &rows {
                println!("{},{},{}", r.k, r.mean_track_err, r.std_track_err);
            }
            write_table(&rows, &out_dir(&common).join("scalability.json")).map_err(|e| e.to_string())
        }
        Command::Commloss { common, losses, k } => {
            let trials = common.trials.unwrap_or(3);
            let duration = common.duration.unwrap_or(60.0);
            let rows = with_parallelism(common.parallel, || {
                preset_comm_loss(&losses, k, trials, common.seed, duration)
            })
            .map_err(|e| e.to_string())?;
            println!("loss,mean_track_err");
            for r in &rows {
                println!("{},{}", r.loss, r.mean_track_err);
            }
            write_table(&rows, &out_dir(&common).join("commloss.json")).map_err(|e| e.to_string())
        }
        Command::Obstacles { common, counts, k } => {
            let trials = common.trials.unwrap_or(5);
            let duration = common.duration.unwrap_or(60.0);
            let rows = with_parallelism(common.parallel, || {
                preset_obstacle_density(&counts, k, trials, common.seed, duration, 1.5)
            })
            .map_err(|e| e.to_string())?;
            println!("count,mean_track_err,min_pair_dist,collisions");
            for r in &rows {
                println!(
                    "{},{},{},{}",
                    r.count, r.mean_track_err, r.min_pair_dist, r.collisions
                );
            }
            write_table(&rows, &out_dir(&common).join("obstacles.json")).map_err(|e| e.to_string())
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
