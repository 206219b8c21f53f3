//! Command-line entry point.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use fedrec_sim::attacks::AttackKind;
use fedrec_sim::data::{self, SyntheticSpec};
use fedrec_sim::experiment::{self, EpochRow};

#[derive(Parser)]
#[command(
    name = "fedrec-sim",
    about = "Federated recommender training under gradient poisoning attacks",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run an experiment described by a config file.
    Run {
        /// Path to a `key = value` config file.
        config: PathBuf,
        /// Override the master seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Override the output directory.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Override the number of training epochs.
        #[arg(long)]
        epochs: Option<usize>,
        /// Override the attack kind (none, ra, eb, a-ra, a-hum).
        #[arg(long)]
        attack: Option<String>,
    },
    /// Generate a synthetic power-law dataset as a CSV file.
    Synth {
        /// Output CSV path.
        out: PathBuf,
        #[arg(long, default_value_t = 200)]
        users: usize,
        #[arg(long, default_value_t = 100)]
        items: usize,
        #[arg(long, default_value_t = 20)]
        min_interactions: usize,
        #[arg(long, default_value_t = 30)]
        max_interactions: usize,
        /// Popularity power-law exponent (larger is more skewed).
        #[arg(long, default_value_t = 1.2)]
        exponent: f64,
        /// Latent taste groups (1 disables collaborative structure).
        #[arg(long, default_value_t = 4)]
        taste_groups: usize,
        /// Draw-weight boost for items of the user's own taste group.
        #[arg(long, default_value_t = 8.0)]
        taste_boost: f64,
        #[arg(long, default_value_t = 7)]
        seed: u64,
    },
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}

fn run(cli: Cli) -> fedrec_sim::Result<()> {
    match cli.command {
        Command::Run {
            config,
            seed,
            out,
            epochs,
            attack,
        } => {
            let mut cfg = experiment::parse_config(&config)?;
            if let Some(seed) = seed {
                cfg.seed = seed;
            }
            if let Some(out) = out {
                cfg.out_dir = out;
            }
            if let Some(epochs) = epochs {
                cfg.epochs = epochs;
            }
            if let Some(kind) = attack {
                cfg.attack.kind = kind.parse::<AttackKind>()?;
            }

            eprintln!(
                "loading {} ({:?}), attack = {}, epochs = {}, seed = {}",
                cfg.dataset.display(),
                cfg.format,
                cfg.attack.kind,
                cfg.epochs,
                cfg.seed
            );
            let raw = data::load_interactions(&cfg.dataset, cfg.format)?;
            eprintln!(
                "loaded {} users, {} items, {} positives",
                raw.num_users(),
                raw.num_items(),
                raw.total_train_positives()
            );

            let total = cfg.epochs;
            let k_list = cfg.k_list.clone();
            let record = experiment::run_on_with(&cfg, raw, |row: &EpochRow| {
                let ers: Vec<String> = k_list
                    .iter()
                    .zip(&row.er_mean)
                    .map(|(k, er)| format!("er@{k}={er:.4}"))
                    .collect();
                eprintln!(
                    "epoch {:>3}/{total}  {}  hr@10={:.4} ndcg@10={:.4} loss={:.4} ({:.1}s)",
                    row.epoch,
                    ers.join(" "),
                    row.hr10,
                    row.ndcg10,
                    row.loss,
                    row.wall_seconds
                );
            })?;
            experiment::emit_series(&record, &cfg.out_dir)?;
            eprintln!(
                "wrote {} (targets: {:?}, {} malicious users)",
                cfg.out_dir.display(),
                record.targets,
                record.num_malicious
            );
            Ok(())
        }
        Command::Synth {
            out,
            users,
            items,
            min_interactions,
            max_interactions,
            exponent,
            taste_groups,
            taste_boost,
            seed,
        } => {
            let spec = SyntheticSpec {
                num_users: users,
                num_items: items,
                min_interactions,
                max_interactions,
                exponent,
                taste_groups,
                taste_boost,
            };
            let dataset = data::generate_synthetic(&spec, seed)?;
            data::write_csv(&dataset, &out)?;
            eprintln!(
                "wrote {} ({} users, {} items, {} interactions)",
                out.display(),
                dataset.num_users(),
                dataset.num_items(),
                dataset.total_train_positives()
            );
            Ok(())
        }
    }
}
