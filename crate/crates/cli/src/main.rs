//! Command-line front end: training, evaluation, ablations, the MI
//! benchmark and embedding dumps.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use visa_core::trainer::{
    dump_embeddings, evaluate, mi_bench, run_ablation, train, MiBenchConfig, TrainConfig, Variant,
};
use visa_core::{EnvKind, Error, Result};

#[derive(Parser, Debug)]
#[command(name = "visa", version, about = "Goal-conditioned contrastive RL with visited-state augmentation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Train one agent and write metrics.csv, checkpoint.bin and config.txt.
    Train {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, default_value = "runs/train")]
        out: PathBuf,
        /// Override a config key, e.g. `--set batch_size=128`. Repeatable.
        #[arg(long = "set", value_name = "KEY=VALUE")]
        overrides: Vec<String>,
    },
    /// Greedy success rate of a stored checkpoint.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        env: String,
        #[arg(long, default_value_t = 50)]
        episodes: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Train every (variant, seed) pair and summarise final success and
    /// sample coverage.
    Ablate {
        #[arg(long)]
        config: PathBuf,
        /// Comma-separated methods or augmentation tags.
        #[arg(long, value_delimiter = ',')]
        variants: Vec<String>,
        #[arg(long, value_delimiter = ',', default_value = "0,1,2")]
        seeds: Vec<u64>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long = "set", value_name = "KEY=VALUE")]
        overrides: Vec<String>,
    },
    /// InfoNCE and CLUB estimates on correlated Gaussian pairs.
    MiBench {
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
        rho: Vec<f64>,
        #[arg(long, default_value_t = 256)]
        batch: usize,
        #[arg(long, default_value_t = 2000)]
        steps: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Raw ψ and φ embeddings along greedy rollouts.
    DumpEmbeddings {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        env: String,
        #[arg(long, default_value_t = 10)]
        rollouts: usize,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

fn load_config(path: &PathBuf, seed: Option<u64>, overrides: &[String]) -> Result<TrainConfig> {
    let mut cfg = TrainConfig::from_file(path)?;
    cfg.apply_overrides(overrides)?;
    if let Some(seed) = seed {
        cfg.seed = seed;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Train {
            config,
            seed,
            out,
            overrides,
        } => {
            let cfg = load_config(&config, seed, &overrides)?;
            let outcome = train(&cfg, Some(&out))?;
            println!("final_success_rate {:.6}", outcome.final_success());
            println!("metrics {}", out.join(visa_core::trainer::METRICS_FILE).display());
            println!("checkpoint {}", out.join(visa_core::trainer::CHECKPOINT_FILE).display());
        }
        Command::Eval {
            checkpoint,
            env,
            episodes,
            seed,
        } => {
            let rate = evaluate(&checkpoint, EnvKind::from_tag(&env)?, episodes, seed)?;
            println!("{rate:.6}");
        }
        Command::Ablate {
            config,
            variants,
            seeds,
            out,
            overrides,
        } => {
            let base = load_config(&config, None, &overrides)?;
            if variants.is_empty() {
                return Err(Error::Config("--variants needs at least one entry".into()));
            }
            let variants = variants
                .iter()
                .map(|v| Variant::parse(v, base.aug))
                .collect::<Result<Vec<_>>>()?;
            let report = run_ablation(&base, &variants, &seeds, &out)?;
            for s in &report.summaries {
                println!(
                    "{} mean_success {:.6} var_success {:.6} reach_visited {:.6} reach_augmented {:.6}",
                    s.variant.label(),
                    s.mean_success,
                    s.var_success,
                    s.mean_reach_visited,
                    s.mean_reach_augmented
                );
            }
            println!("summary {}", report.comparison_path.display());
        }
        Command::MiBench {
            rho,
            batch,
            steps,
            seed,
            out,
        } => {
            if rho.is_empty() {
                return Err(Error::Config("--rho needs at least one value".into()));
            }
            let cfg = MiBenchConfig {
                batch_size: batch,
                steps,
                seed,
                ..MiBenchConfig::default()
            };
            for r in mi_bench(&rho, &cfg, Some(&out))? {
                println!(
                    "rho {} analytic {:.6} infonce {:.6} club {:.6}",
                    r.rho, r.analytic, r.infonce, r.club
                );
            }
        }
        Command::DumpEmbeddings {
            checkpoint,
            env,
            rollouts,
            out,
            seed,
        } => {
            let rows = dump_embeddings(&checkpoint, EnvKind::from_tag(&env)?, rollouts, seed, &out)?;
            println!("{rows} rows written to {}", out.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
