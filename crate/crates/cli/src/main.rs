use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use corrnoise::experiment::{self, ExperimentConfig, Thresholds};
use corrnoise::Error;

#[derive(Parser, Debug)]
#[command(name = "corrnoise", version, about = "Simulate and detect spatially correlated qubit noise")]
struct Cli {
    #[command(subcommand)]
    command: Command,

    /// worker threads for the parallel stages
    #[arg(long, global = true)]
    threads: Option<usize>,

    /// override the protocol seed
    #[arg(long, global = true)]
    seed: Option<u64>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Run a config file or bundled preset and write its artifacts
    Run {
        config: String,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Produce a detection report from a config, or from the outputs of an earlier run
    Detect {
        target: String,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Fit the decay-rate exponent of the extreme coherence over register sizes
    SweepN {
        config: String,
        #[arg(long, value_delimiter = ',', required = true)]
        n: Vec<usize>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Print every dissipator coefficient at one time
    Rates {
        config: String,
        #[arg(long)]
        t: f64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// List the bundled presets
    Presets,
}

fn load(arg: &str, seed: Option<u64>) -> corrnoise::Result<ExperimentConfig> {
    let mut cfg = experiment::load_config(arg)?;
    if let Some(s) = seed {
        cfg.protocol.set_seed(s);
    }
    Ok(cfg)
}

fn default_out(cfg: &ExperimentConfig, arg: &str) -> PathBuf {
    if let Some(p) = &cfg.output {
        return p.clone();
    }
    let stem = cfg.name.clone().unwrap_or_else(|| {
        Path::new(arg).file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| "run".into())
    });
    PathBuf::from("out").join(stem)
}

fn emit(json: &serde_json::Value, out: Option<&Path>) -> corrnoise::Result<()> {
    let text = serde_json::to_string_pretty(json).map_err(|e| Error::Invalid(e.to_string()))? + "\n";
    match out {
        Some(p) => {
            if let Some(dir) = p.parent().filter(|d| !d.as_os_str().is_empty()) {
                std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
            }
            std::fs::write(p, text).map_err(|e| Error::io(p, e))
        }
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn execute(cli: Cli) -> corrnoise::Result<()> {
    match cli.command {
        Command::Run { config, out } => {
            let cfg = load(&config, cli.seed)?;
            let dir = out.unwrap_or_else(|| default_out(&cfg, &config));
            let res = experiment::run(&cfg, &dir)?;
            println!("wrote {} files to {}", res.files.len(), res.dir.display());
            if let Some(rep) = &res.simulation.report {
                println!("relaxation: {}", rep.relaxation_correlated.verdict);
                println!("dephasing: {}", rep.dephasing_correlated.verdict);
            }
        }
        Command::Detect { target, out } => {
            let path = Path::new(&target);
            let report = if path.is_dir() {
                experiment::detect_dir(path, &Thresholds::default())?
            } else {
                experiment::detect(&load(&target, cli.seed)?)?
            };
            emit(&serde_json::to_value(&report).map_err(|e| Error::Invalid(e.to_string()))?, out.as_deref())?;
        }
        Command::SweepN { config, n, out } => {
            let cfg = load(&config, cli.seed)?;
            let fit = experiment::sweep_n(&cfg, &n)?;
            emit(&serde_json::to_value(&fit).map_err(|e| Error::Invalid(e.to_string()))?, out.as_deref())?;
        }
        Command::Rates { config, t, out } => {
            let cfg = load(&config, cli.seed)?;
            emit(&experiment::rates(&cfg, t)?, out.as_deref())?;
        }
        Command::Presets => {
            for name in experiment::preset_names() {
                println!("{name}");
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    if let Some(n) = cli.threads {
        if n == 0 {
            eprintln!("error: --threads must be at least 1");
            return ExitCode::from(1);
        }
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: {e}");
            return ExitCode::from(1);
        }
    }
    match execute(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            let mut src = std::error::Error::source(&e);
            while let Some(s) = src {
                eprintln!("  caused by: {s}");
                src = s.source();
            }
            ExitCode::from(if e.is_numerical() { 2 } else { 1 })
        }
    }
}
