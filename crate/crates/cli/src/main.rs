use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use credfuse_core::harness::{
    compute_metrics, read_state_csv, run_scenario, write_outputs, MetricsReport, ScenarioConfig,
};
use credfuse_core::imm::build_transition;
use credfuse_core::{credibility, Error, SensorSheet};
use serde::Deserialize;

const EXIT_CONFIG: u8 = 2;
const EXIT_DIVERGED: u8 = 3;

#[derive(Parser)]
#[command(
    name = "credfuse",
    version,
    about = "Credibility-weighted IMM fusion of IMU and GNSS"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate a scenario and run the configured estimators.
    Run {
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out_dir: Option<PathBuf>,
        /// Comma separated list, e.g. IMM-RIEKF,RIEKF-M1.
        #[arg(long, value_delimiter = ',')]
        estimators: Option<Vec<String>>,
    },
    /// Error statistics of an estimate CSV against a truth CSV.
    Metrics { truth: PathBuf, estimate: PathBuf },
    /// Credibility table and transition matrix for a set of sensor sheets.
    Credibility {
        sheets: PathBuf,
        /// Realtime index applied to every sensor.
        #[arg(long, default_value_t = credfuse_core::credibility::RHO_MAX)]
        realtime: f64,
        #[arg(long, default_value_t = 1.0)]
        baseline: f64,
    },
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct SheetFile {
    sensors: Vec<SensorSheet>,
}

fn print_metrics(name: &str, m: &MetricsReport) {
    let [r, p, y] = m.attitude;
    let [n, e, d] = m.position;
    println!(
        "{name:<12} att rmse [deg] {:>9.4} {:>9.4} {:>9.4}   pos rmse [m] {:>9.4} {:>9.4} {:>9.4}",
        r.rmse, p.rmse, y.rmse, n.rmse, e.rmse, d.rmse
    );
}

fn run(
    path: PathBuf,
    seed: Option<u64>,
    out_dir: Option<PathBuf>,
    estimators: Option<Vec<String>>,
) -> Result<u8, Error> {
    let mut config = ScenarioConfig::load(&path)?;
    if let Some(s) = seed {
        config.seed = s;
    }
    if let Some(e) = estimators {
        config.estimators = e;
    }
    config.validate()?;
    let result = run_scenario(&config)?;
    for (i, tree) in result.scenario.trees.iter().enumerate() {
        let ids: Vec<_> = tree.aiding().map(String::as_str).collect();
        println!("M{}: {}", i + 1, ids.join(" + "));
    }
    for e in &result.estimators {
        print_metrics(&e.name(), &e.metrics);
        if let Some(f) = &e.failure {
            eprintln!("{}: diverged at {f}", e.name());
        }
    }
    let dir = out_dir.or_else(|| config.output_dir.as_ref().map(PathBuf::from));
    if let Some(dir) = dir {
        write_outputs(&result, &dir)?;
        println!("outputs written to {}", dir.display());
    }
    Ok(if result.any_diverged() {
        EXIT_DIVERGED
    } else {
        0
    })
}

fn metrics(truth: PathBuf, estimate: PathBuf) -> Result<u8, Error> {
    let t = read_state_csv(std::fs::File::open(truth)?)?;
    let e = read_state_csv(std::fs::File::open(estimate)?)?;
    let m = compute_metrics(&t, &e)?;
    println!("{:<8} {:>12} {:>12} {:>12}", "axis", "std", "mae", "rmse");
    let axes = [
        "roll", "pitch", "yaw", "north", "east", "down", "vn", "ve", "vd",
    ];
    let all = m.attitude.iter().chain(&m.position).chain(&m.velocity);
    for (name, s) in axes.iter().zip(all) {
        println!("{name:<8} {:>12.6} {:>12.6} {:>12.6}", s.std, s.mae, s.rmse);
    }
    Ok(0)
}

fn credibility_table(sheets: PathBuf, realtime: f64, baseline: f64) -> Result<u8, Error> {
    let text = std::fs::read_to_string(&sheets)
        .map_err(|e| Error::Config(format!("{}: {e}", sheets.display())))?;
    let file: SheetFile = toml::from_str(&text).map_err(|e| Error::Config(e.to_string()))?;
    let mut hs = Vec::new();
    println!("{:<10} {:>12} {:>8} {:>10}", "sensor", "E", "P", "H");
    for s in &file.sensors {
        s.validate().map_err(|e| Error::Config(e.to_string()))?;
        let c = credibility(s, realtime)?;
        println!(
            "{:<10} {:>12.6} {:>8.3} {:>10.4}",
            s.sensor_id, c.expected, c.realtime, c.combined
        );
        hs.push(vec![c.combined]);
    }
    let pi = build_transition(&hs, baseline)?;
    println!("transition matrix:");
    for i in 0..pi.dim() {
        let row: Vec<String> = (0..pi.dim())
            .map(|j| format!("{:.4}", pi.get(i, j)))
            .collect();
        println!("  {}", row.join("  "));
    }
    Ok(0)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run {
            config,
            seed,
            out_dir,
            estimators,
        } => run(config, seed, out_dir, estimators),
        Command::Metrics { truth, estimate } => metrics(truth, estimate),
        Command::Credibility {
            sheets,
            realtime,
            baseline,
        } => credibility_table(sheets, realtime, baseline),
    };
    match result {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(match e {
                Error::Config(_) | Error::InvalidInput(_) => EXIT_CONFIG,
                _ => 1,
            })
        }
    }
}
