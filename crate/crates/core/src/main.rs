use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use fieldmap::config::{Predictor, ScenarioConfig};
use fieldmap::output::{write_outputs, PACKET_LOG};
use fieldmap::protocol::decode_packet_log;
use fieldmap::{run_scenario, Error, Optimizer};

#[derive(Parser)]
#[command(name = "fieldmap", version, about = "Decentralized GP field mapping simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a scenario and write CSV outputs, packet log and manifest.
    Run {
        /// Config file, or the name of a bundled preset (paper_sec6).
        config: String,
        #[arg(long, default_value = "fieldmap-out")]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        /// Also run the self-only baseline.
        #[arg(long)]
        baseline: bool,
        #[arg(long, value_enum)]
        optimizer: Option<OptimizerArg>,
        #[arg(long, value_enum)]
        predictor: Option<PredictorArg>,
    },
    /// Check a config and report coverage.
    Validate { config: String },
    /// Print the packet log of a run directory as CSV.
    DumpPackets { run_dir: PathBuf },
}

#[derive(Clone, Copy, ValueEnum)]
enum OptimizerArg {
    Grid,
    Gradient,
}

#[derive(Clone, Copy, ValueEnum)]
enum PredictorArg {
    Exact,
    Sparse,
}

enum Failure {
    Config(Error),
    Runtime(Error),
}

impl Failure {
    fn report(&self) -> ExitCode {
        match self {
            Failure::Config(e) => {
                eprintln!("config error: {e}");
                ExitCode::from(2)
            }
            Failure::Runtime(e) => {
                eprintln!("error: {e}");
                ExitCode::from(3)
            }
        }
    }
}

fn load(source: &str) -> Result<ScenarioConfig, Failure> {
    if !Path::new(source).exists() {
        if let Some(c) = ScenarioConfig::preset(source) {
            return Ok(c);
        }
    }
    ScenarioConfig::load(source).map_err(Failure::Config)
}

fn warn_coverage(cfg: &ScenarioConfig) {
    if let Ok(n) = cfg.uncovered_grid_points() {
        if n > 0 {
            eprintln!("warning: {n} evaluation grid points lie outside every agent subdomain");
        }
    }
}

fn run(command: Command) -> Result<(), Failure> {
    match command {
        Command::Run {
            config,
            out,
            seed,
            baseline,
            optimizer,
            predictor,
        } => {
            let mut cfg = load(&config)?;
            if let Some(s) = seed {
                cfg.run.seed = s;
            }
            if baseline {
                cfg.run.baseline = true;
            }
            if let Some(o) = optimizer {
                cfg.protocol.optimizer = match o {
                    OptimizerArg::Grid => Optimizer::Grid,
                    OptimizerArg::Gradient => Optimizer::Gradient,
                };
            }
            if let Some(p) = predictor {
                cfg.run.local_predictor = match p {
                    PredictorArg::Exact => Predictor::Exact,
                    PredictorArg::Sparse => Predictor::Sparse,
                };
            }
            cfg.validate().map_err(Failure::Config)?;
            warn_coverage(&cfg);
            let artifacts = run_scenario(&cfg).map_err(Failure::Runtime)?;
            let manifest = write_outputs(&artifacts, &out).map_err(Failure::Runtime)?;
            println!("wrote {} files to {}", manifest.files.len() + 1, out.display());
            if let Some(last) = artifacts.shared.history.last() {
                let m = &last.metrics;
                let show = |v: Option<f64>| v.map_or("-".to_string(), |x| format!("{x:.5}"));
                println!(
                    "final network local rmse {} overlap rmse {} local nlpd {}",
                    show(m.network_local_rmse),
                    show(m.network_overlap_rmse),
                    show(m.network_local_nlpd)
                );
            }
            Ok(())
        }
        Command::Validate { config } => {
            let cfg = load(&config)?;
            let specs = cfg.agent_specs().map_err(Failure::Config)?;
            let edges = cfg.edges().map_err(Failure::Config)?;
            println!(
                "ok: {} agents, {} directed edges, {} steps, budget {}",
                specs.len(),
                edges.len(),
                cfg.run.steps,
                cfg.protocol.budget
            );
            warn_coverage(&cfg);
            Ok(())
        }
        Command::DumpPackets { run_dir } => {
            let path = run_dir.join(PACKET_LOG);
            let bytes = std::fs::read(&path).map_err(|e| Failure::Runtime(Error::io(&path, e)))?;
            let packets = decode_packet_log(&bytes).map_err(Failure::Runtime)?;
            println!("sender,step,location,mean,variance");
            for p in packets {
                let loc: Vec<String> = p.location.iter().map(|c| c.to_string()).collect();
                println!("{},{},{},{},{}", p.sender_id, p.step, loc.join(" "), p.mean, p.variance);
            }
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => f.report(),
    }
}
