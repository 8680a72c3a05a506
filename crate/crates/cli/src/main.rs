use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};

use qlcsim::env::write_conflict_csv;
use qlcsim::metrics::write_metrics_csv;
use qlcsim::sim::{run_experiment, save_qtables};
use qlcsim::sweep::{linear_grid, replica_seeds, run_sweep, write_sweep_csv};
use qlcsim::{Algorithm, SimConfig};

/// Network-slice auto-scaling simulator.
///
/// Every config key can be overridden with an environment variable named
/// QLCSIM_<KEY>, e.g. QLCSIM_EPISODES=5. Command-line flags win over both.
#[derive(Parser)]
#[command(name = "qlcsim", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one multi-episode experiment.
    Run {
        /// `key = value` config file; defaults are used when omitted.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        algo: Option<Algorithm>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Sweep the per-user request rate and aggregate over seeds.
    Sweep {
        #[arg(long)]
        config: Option<PathBuf>,
        /// Lowest per-user request rate (1/s).
        #[arg(long)]
        lambda_from: f64,
        /// Highest per-user request rate (1/s).
        #[arg(long)]
        lambda_to: f64,
        #[arg(long)]
        steps: usize,
        /// Number of replicas per point.
        #[arg(long)]
        seeds: usize,
        /// Comma-separated subset of policies; all four by default.
        #[arg(long, value_delimiter = ',')]
        algos: Option<Vec<Algorithm>>,
        #[arg(long)]
        out: PathBuf,
    },
}

fn load_config(path: Option<&Path>) -> Result<SimConfig> {
    let mut cfg = match path {
        Some(p) => SimConfig::from_file(p).with_context(|| format!("reading config {}", p.display()))?,
        None => SimConfig::default(),
    };
    cfg.apply_env().context("applying environment overrides")?;
    Ok(cfg)
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    let f = File::create(path).with_context(|| format!("creating {}", path.display()))?;
    Ok(BufWriter::new(f))
}

fn run(config: Option<&Path>, algo: Option<Algorithm>, seed: Option<u64>, out: &Path) -> Result<()> {
    let mut cfg = load_config(config)?;
    if let Some(a) = algo {
        cfg.algorithm = a;
    }
    if let Some(s) = seed {
        cfg.seed = s;
    }
    cfg.validate()?;
    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    fs::write(out.join("config.txt"), cfg.to_kv_string())?;

    let runs = run_experiment(&cfg)?;
    let width = runs.len().to_string().len().max(2);
    for r in &runs {
        let tag = format!("{:0width$}", r.episode + 1);
        let mut m = create(&out.join(format!("metrics_ep{tag}.csv")))?;
        write_metrics_csv(&mut m, &r.metrics)?;
        m.flush()?;
        let mut c = create(&out.join(format!("conflicts_ep{tag}.csv")))?;
        write_conflict_csv(&mut c, &r.conflicts)?;
        c.flush()?;
        println!(
            "episode {:>3}  lambda_in {:.4}  lambda_out {:.4}  rei {:.4}  conflicts {}",
            r.episode + 1,
            r.lambda_in(),
            r.lambda_out(),
            r.mean_rei(),
            r.totals.conflicts
        );
    }
    if let Some(learners) = runs.last().and_then(|r| r.learners.as_ref()) {
        save_qtables(out, &learners.tables)?;
    }
    Ok(())
}

fn sweep(
    config: Option<&Path>,
    from: f64,
    to: f64,
    steps: usize,
    seeds: usize,
    algos: Option<Vec<Algorithm>>,
    out: &Path,
) -> Result<()> {
    if steps == 0 || seeds == 0 {
        bail!("--steps and --seeds must be at least 1");
    }
    if !(from > 0.0 && to >= from && to.is_finite()) {
        bail!("need 0 < --lambda-from <= --lambda-to, got {from} and {to}");
    }
    let cfg = load_config(config)?;
    cfg.validate()?;
    let algos = algos.unwrap_or_else(|| Algorithm::ALL.to_vec());
    let rows = run_sweep(&cfg, &linear_grid(from, to, steps), &replica_seeds(cfg.seed, seeds), &algos)?;
    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    fs::write(out.join("config.txt"), cfg.to_kv_string())?;
    let path = out.join("sweep.csv");
    let mut w = create(&path)?;
    write_sweep_csv(&mut w, &rows)?;
    w.flush()?;
    write_sweep_csv(std::io::stdout().lock(), &rows)?;
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run { config, algo, seed, out } => run(config.as_deref(), algo, seed, &out),
        Command::Sweep { config, lambda_from, lambda_to, steps, seeds, algos, out } => {
            sweep(config.as_deref(), lambda_from, lambda_to, steps, seeds, algos, &out)
        }
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
