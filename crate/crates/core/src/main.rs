use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use dais::harness::{run, Experiment, ExperimentConfig};

#[derive(Parser)]
#[command(name = "dais", version, about = "DAIS, VI, IWVI and MSC experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// K·gap limit tables and N-particle gaps on Gaussian paths.
    Theory(Common),
    /// Mode covering on a two-component mixture.
    Bimodal(Common),
    /// GP regression against the analytic posterior.
    Gp(Common),
    /// Logistic regression against an HMC reference.
    Logreg(Common),
    /// DAIS moment estimates as a function of sample count.
    Moments(Common),
}

#[derive(Args)]
struct Common {
    /// TOML file overriding the defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Master seed.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Published iteration and sample budgets.
    #[arg(long)]
    paper_scale: bool,
    /// Worker threads (default: all cores).
    #[arg(long)]
    threads: Option<usize>,
    /// Mode-classification threshold.
    #[arg(long)]
    tau: Option<f64>,
}

fn build_config(experiment: Experiment, c: &Common) -> dais::Result<ExperimentConfig> {
    let mut cfg = match &c.config {
        Some(path) => {
            let cfg = ExperimentConfig::from_file(path, c.paper_scale)?;
            if cfg.experiment != experiment {
                return Err(dais::Error::Config(format!(
                    "{} is a {} config, not {experiment}",
                    path.display(),
                    cfg.experiment
                )));
            }
            cfg
        }
        None => ExperimentConfig::defaults(experiment, c.paper_scale),
    };
    if let Some(s) = c.seed {
        cfg.master_seed = s;
    }
    if let Some(o) = &c.out {
        cfg.out_dir = o.clone();
    }
    if let Some(t) = c.tau {
        cfg.tau = t;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let (experiment, common) = match &cli.command {
        Command::Theory(c) => (Experiment::Theory, c),
        Command::Bimodal(c) => (Experiment::Bimodal, c),
        Command::Gp(c) => (Experiment::Gp, c),
        Command::Logreg(c) => (Experiment::Logreg, c),
        Command::Moments(c) => (Experiment::Moments, c),
    };
    let cfg = match build_config(experiment, common) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    };
    let mut pool = rayon::ThreadPoolBuilder::new();
    if let Some(n) = common.threads {
        if n == 0 {
            eprintln!("error: --threads must be at least 1");
            return ExitCode::from(2);
        }
        pool = pool.num_threads(n);
    }
    let pool = match pool.build() {
        Ok(p) => p,
        Err(e) => {
            eprintln!("error: thread pool: {e}");
            return ExitCode::FAILURE;
        }
    };
    match pool.install(|| run(&cfg)) {
        Ok(out) => {
            let failed = out.metrics.iter().filter(|r| r.failed()).count();
            for f in &out.files {
                println!("wrote {}", f.display());
            }
            if failed > 0 {
                println!("{failed} of {} cells failed (marked '-')", out.metrics.len());
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
