//! `lsr` — learned sparse retrieval pipeline: expansion, impact training,
//! indexing, retrieval, and evaluation as subcommands over one config file.

mod commands;
mod config;

use std::path::PathBuf;

use clap::{Parser, Subcommand};

use commands::{CliError, Strategy};
use config::PipelineConfig;

#[derive(Parser)]
#[command(name = "lsr", version, about = "Learned sparse retrieval pipeline")]
struct Cli {
    /// Config JSON; defaults to ./config.json when present.
    #[arg(short, long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate expansion queries for every document.
    Expand {
        /// How queries are generated.
        #[arg(long, value_enum, default_value_t)]
        strategy: Strategy,
        /// Beam width (beam strategy only); defaults to num_queries.
        #[arg(long)]
        beam_width: Option<usize>,
        /// Override sampler num_queries.
        #[arg(long)]
        num_queries: Option<usize>,
        /// Override sampler seed.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Keep the global top fraction of expansion queries by score.
    Filter {
        /// Override the retained fraction.
        #[arg(long)]
        fraction: Option<f64>,
        /// Score unscored queries by token overlap with their document.
        #[arg(long)]
        standin_scorer: bool,
    },
    /// Train the term-impact model.
    Train {
        /// Override the loss (pairwise_ce, in_batch, kl_distill, margin_mse).
        #[arg(long)]
        loss: Option<String>,
        /// Override the learning rate.
        #[arg(long)]
        learning_rate: Option<f64>,
        /// Override the epoch count.
        #[arg(long)]
        epochs: Option<usize>,
        /// Override the batch size.
        #[arg(long)]
        batch_size: Option<usize>,
        /// Override the training seed.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Build the quantized impact index.
    Index {
        /// Index the original documents, ignoring any expansion files.
        #[arg(long)]
        no_expansion: bool,
        /// Also write a readable JSONL dump of the posting lists.
        #[arg(long, value_name = "FILE")]
        debug_dump: Option<PathBuf>,
    },
    /// Retrieve the top-k documents for every query into a TREC run file.
    Search {
        /// Override retrieval depth k.
        #[arg(long)]
        k: Option<usize>,
        /// Use the exhaustive engine instead of MaxScore.
        #[arg(long)]
        oracle: bool,
        /// Override the run tag.
        #[arg(long)]
        tag: Option<String>,
    },
    /// Score the run file against qrels.
    Eval {
        /// Also measure mean response time over the query log.
        #[arg(long)]
        bench: bool,
        /// Print the report as JSON instead of a table.
        #[arg(long)]
        json: bool,
    },
    /// Write the bundled synthetic corpus and a matching config.
    GenToy {
        /// Output directory.
        #[arg(long, default_value = ".")]
        out: PathBuf,
        /// Corpus seed.
        #[arg(long, default_value_t = 42)]
        seed: u64,
    },
}

fn run(cli: Cli) -> Result<(), CliError> {
    // gen-toy creates the config; everything else consumes it.
    if let Command::GenToy { out, seed } = &cli.command {
        return commands::cmd_gen_toy(out, *seed);
    }

    let mut config = PipelineConfig::load(cli.config.as_deref())?;
    match cli.command {
        Command::Expand {
            strategy,
            beam_width,
            num_queries,
            seed,
        } => {
            if let Some(n) = num_queries {
                config.sampler.num_queries = n;
            }
            if let Some(s) = seed {
                config.sampler.seed = s;
            }
            commands::cmd_expand(&config, strategy, beam_width)
        }
        Command::Filter {
            fraction,
            standin_scorer,
        } => {
            if let Some(f) = fraction {
                config.fraction = f;
            }
            config.validate()?;
            commands::cmd_filter(&config, standin_scorer)
        }
        Command::Train {
            loss,
            learning_rate,
            epochs,
            batch_size,
            seed,
        } => {
            if let Some(loss) = loss {
                config.training.loss_kind = loss
                    .parse()
                    .map_err(|e| CliError::Validation(format!("{e}")))?;
            }
            if let Some(lr) = learning_rate {
                config.training.learning_rate = lr;
            }
            if let Some(e) = epochs {
                config.training.epochs = e;
            }
            if let Some(b) = batch_size {
                config.training.batch_size = b;
            }
            if let Some(s) = seed {
                config.training.seed = s;
            }
            config.validate()?;
            commands::cmd_train(&config)
        }
        Command::Index {
            no_expansion,
            debug_dump,
        } => commands::cmd_index(&config, no_expansion, debug_dump.as_deref()),
        Command::Search { k, oracle, tag } => {
            if let Some(k) = k {
                config.retrieval_k = k;
            }
            if let Some(tag) = tag {
                config.run_tag = tag;
            }
            config.validate()?;
            commands::cmd_search(&config, oracle)
        }
        Command::Eval { bench, json } => commands::cmd_eval(&config, bench, json),
        Command::GenToy { .. } => unreachable!("handled above"),
    }
}

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    if let Err(e) = run(cli) {
        eprintln!("error: {e}");
        std::process::exit(e.exit_code());
    }
}
