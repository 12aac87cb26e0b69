use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Result;
use clap::{Parser, Subcommand, ValueEnum};
use pmqds_cli::config::{ConfigError, ExperimentConfig};
use pmqds_cli::io::RunDir;
use pmqds_cli::pipeline::{self, Battery};

#[derive(Parser)]
#[command(
    name = "pmqds",
    version,
    about = "Intermittent quasistatic systems: transfer operators, variances, path ensembles and checks"
)]
struct Cli {
    /// JSON config; omitted fields take their defaults.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads (results do not depend on this).
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Run directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Binary,
    Csv,
}

#[derive(Subcommand)]
enum Command {
    /// SRB densities and cone reports.
    Srb,
    /// Memory-loss curve of the sequential pushforward.
    MemoryLoss,
    /// SRB continuity under parameter perturbation.
    Perturbation,
    /// Green-Kubo variance curves for every run.
    GreenKubo,
    /// Fluctuation ensembles for every run and ladder level.
    Simulate {
        #[arg(long)]
        run: Option<String>,
        #[arg(long, value_enum, default_value = "binary")]
        format: Format,
    },
    /// Limit-process ensembles for every run.
    Diffusion {
        #[arg(long)]
        run: Option<String>,
        #[arg(long, value_enum, default_value = "binary")]
        format: Format,
    },
    /// The full test battery.
    Verify,
    /// Summary table from the reports of an earlier `verify`.
    Report,
    /// Configuration utilities.
    Config {
        #[arg(long)]
        print_defaults: bool,
    },
}

enum Failure {
    Config(String),
    Tests(usize),
    Runtime(anyhow::Error),
}

fn load(cli: &Cli) -> Result<ExperimentConfig, ConfigError> {
    let mut config = ExperimentConfig::load(cli.config.as_deref(), std::env::vars())?;
    if let Some(seed) = cli.seed {
        config.seed = seed;
    }
    if let Some(t) = cli.threads {
        config.threads = Some(t);
    }
    if let Some(out) = &cli.out {
        config.output = out.clone();
    }
    config.validate()?;
    Ok(config)
}

fn runs(config: &ExperimentConfig, only: &Option<String>) -> Result<Vec<String>> {
    match only {
        Some(r) => {
            config.run(r)?;
            Ok(vec![r.clone()])
        }
        None => Ok(config.runs.keys().cloned().collect()),
    }
}

fn write(dir: &RunDir, stem: &str, e: &pmqds::mc::PathEnsemble, format: Format, hash: &str) -> Result<()> {
    match format {
        Format::Binary => dir.write_ensemble(&format!("ensembles/{stem}"), e, hash),
        Format::Csv => dir.write_ensemble_csv(&format!("ensembles/{stem}.csv"), e),
    }
}

fn execute(cli: &Cli) -> Result<(), Failure> {
    if let Command::Config { print_defaults } = &cli.command {
        if *print_defaults {
            println!("{}", ExperimentConfig::defaults_json());
            return Ok(());
        }
        let config = load(cli).map_err(|e| Failure::Config(e.to_string()))?;
        println!("{}", serde_json::to_string_pretty(&config).expect("config serializes"));
        return Ok(());
    }
    let config = load(cli).map_err(|e| Failure::Config(e.to_string()))?;
    let threads = config
        .threads
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()));
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build_global()
        .map_err(|e| Failure::Runtime(e.into()))?;
    let dir = RunDir::create(&config.output).map_err(Failure::Runtime)?;
    let run = || -> Result<usize> {
        let mut battery = Battery::new(&config, &dir);
        let hash = config.hash();
        let name = match &cli.command {
            Command::Srb => {
                battery.srb()?;
                "srb"
            }
            Command::MemoryLoss => {
                battery.memory_loss()?;
                "memory-loss"
            }
            Command::Perturbation => {
                battery.perturbation()?;
                "perturbation"
            }
            Command::GreenKubo => {
                for r in runs(&config, &None)? {
                    let setup = battery.setup(&r)?;
                    battery.sigma(&setup)?;
                }
                "green-kubo"
            }
            Command::Simulate { run, format } => {
                for r in runs(&config, run)? {
                    let setup = battery.setup(&r)?;
                    for &n in &config.ladder {
                        let level = battery.simulate(&setup, n)?;
                        write(&dir, &format!("{r}_n{n}"), &level.ensemble, *format, &hash)?;
                    }
                }
                "simulate"
            }
            Command::Diffusion { run, format } => {
                for r in runs(&config, run)? {
                    let setup = battery.setup(&r)?;
                    let sigma = battery.sigma(&setup)?;
                    let e = battery.limit(&setup, &sigma, "a")?;
                    write(&dir, &format!("{r}_limit_a"), &e, *format, &hash)?;
                }
                "diffusion"
            }
            Command::Verify => return pipeline::run_verify(&config, &dir, threads),
            Command::Report => {
                let reports = pipeline::load_reports(&dir)?;
                pipeline::write_summary(&dir, &reports)?;
                pipeline::print_summary(&reports);
                let failures = reports
                    .iter()
                    .filter(|r| r["acceptance"].as_bool() == Some(true) && r["verdict"].as_str() != Some("pass"))
                    .count();
                return Ok(failures);
            }
            Command::Config { .. } => unreachable!("handled above"),
        };
        battery.timings.write(&dir, threads)?;
        dir.write_manifest(name, &config)?;
        Ok(0)
    };
    match run() {
        Ok(0) => Ok(()),
        Ok(n) => Err(Failure::Tests(n)),
        Err(e) => Err(Failure::Runtime(e)),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match execute(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Tests(n)) => {
            eprintln!("{n} acceptance-tagged test(s) failed");
            ExitCode::from(1)
        }
        Err(Failure::Config(m)) => {
            eprintln!("{m}");
            ExitCode::from(2)
        }
        Err(Failure::Runtime(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(3)
        }
    }
}
