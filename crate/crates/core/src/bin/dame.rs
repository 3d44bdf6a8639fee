use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use dame::adapt::Strategy;
use dame::commands::{
    evaluate_command, evaluate_file, export_embeddings_command, finetune_command, predict_command, read_selection,
    select_al_command, train_da_command, with_indices, write_predictions, write_selection, Budget, DatasetSource,
    Predictor,
};
use dame::config::{defaults_table, RunConfig};
use dame::data::Split;

#[derive(Parser)]
#[command(name = "dame", version, about = "Multi-source domain-adaptive entity matching")]
#[command(after_long_help = after_help())]
struct Cli {
    /// JSON run configuration; missing keys take the defaults listed below.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Worker threads for scoring and per-item gradients.
    #[arg(long, global = true, env = "DAME_NUM_THREADS")]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

fn after_help() -> String {
    format!("Configuration keys and defaults:\n{}", defaults_table())
}

#[derive(Subcommand)]
enum Command {
    /// Train on the registry's sources; writes a checkpoint, log and resolved config.
    TrainDa {
        #[arg(long)]
        registry: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        /// Add the unlabeled target as an extra domain for the discriminator.
        #[arg(long)]
        use_target_adversarial: bool,
    },
    /// Fine-tune global encoder, attention and final head on target labels.
    Finetune {
        #[arg(long)]
        checkpoint: PathBuf,
        #[command(flatten)]
        data: DataArgs,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        /// Fraction of the target training split to use.
        #[arg(long, conflicts_with = "indices")]
        fraction: Option<f64>,
        /// Selection JSON written by `select-al`.
        #[arg(long)]
        indices: Option<PathBuf>,
    },
    /// Write JSON-lines predictions for a split.
    Predict {
        #[arg(long)]
        checkpoint: PathBuf,
        #[command(flatten)]
        data: DataArgs,
        #[command(flatten)]
        predictor: PredictorArgs,
        /// Output file; stdout when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Print precision, recall, F1 and accuracy as JSON.
    Evaluate {
        #[arg(long, required_unless_present = "predictions")]
        checkpoint: Option<PathBuf>,
        #[command(flatten)]
        data: DataArgs,
        #[command(flatten)]
        predictor: PredictorArgs,
        /// Score an existing predictions file instead of running a model.
        #[arg(long, conflicts_with = "checkpoint")]
        predictions: Option<PathBuf>,
        /// Also write the report here.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Choose target training pairs to label.
    SelectAl {
        #[arg(long)]
        checkpoint: PathBuf,
        #[command(flatten)]
        data: DataArgs,
        #[arg(long)]
        strategy: Option<Strategy>,
        /// Count, or fraction of the pool when written with a decimal point.
        #[arg(long)]
        budget: Option<Budget>,
        #[arg(long)]
        seed: Option<u64>,
        /// Output file; stdout when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Write fused embeddings of a split as CSV.
    ExportEmbeddings {
        #[arg(long)]
        checkpoint: PathBuf,
        #[command(flatten)]
        data: DataArgs,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Args)]
struct DataArgs {
    /// Domain directory; defaults to the registry's target.
    #[arg(long)]
    dataset: Option<PathBuf>,
    /// Registry whose target is used when no dataset is given.
    #[arg(long)]
    registry: Option<PathBuf>,
    #[arg(long, default_value = "test")]
    split: Split,
}

#[derive(Args)]
struct PredictorArgs {
    /// Comma-separated expert indices to attend over.
    #[arg(long, value_delimiter = ',', conflicts_with = "global_only")]
    experts: Option<Vec<usize>>,
    /// Use the global encoder and its own head only.
    #[arg(long)]
    global_only: bool,
}

impl PredictorArgs {
    fn predictor(&self) -> Predictor {
        match (&self.experts, self.global_only) {
            (_, true) => Predictor::GlobalOnly,
            (Some(e), false) => Predictor::Experts(e.clone()),
            (None, false) => Predictor::Full,
        }
    }
}

impl DataArgs {
    fn source(&self, cfg: &RunConfig) -> Result<DatasetSource> {
        if let Some(d) = &self.dataset {
            return Ok(DatasetSource::Dir(d.clone()));
        }
        match self.registry.as_ref().or(cfg.registry.as_ref()) {
            Some(r) => Ok(DatasetSource::RegistryTarget(r.clone())),
            None => bail!("give --dataset or --registry"),
        }
    }
}

fn out_dir(flag: Option<PathBuf>, cfg: &RunConfig) -> Result<PathBuf> {
    flag.or_else(|| cfg.out.clone())
        .context("give --out or set `out` in the config")
}

fn emit(json: &str, out: Option<&Path>) -> Result<()> {
    match out {
        Some(p) => std::fs::write(p, format!("{json}\n")).with_context(|| format!("writing {}", p.display())),
        None => {
            println!("{json}");
            Ok(())
        }
    }
}

fn main() -> Result<()> {
    let cli = Cli::parse();
    if let Some(n) = cli.threads {
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global()?;
    }
    let mut cfg = match &cli.config {
        Some(p) => RunConfig::load(p).with_context(|| format!("reading {}", p.display()))?,
        None => RunConfig::default(),
    };
    match cli.command {
        Command::TrainDa {
            registry,
            out,
            seed,
            use_target_adversarial,
        } => {
            if registry.is_some() {
                cfg.registry = registry;
            }
            if let Some(s) = seed {
                cfg.train.seed = s;
            }
            cfg.train.use_target_in_adversarial |= use_target_adversarial;
            let out = out_dir(out, &cfg)?;
            let summary = train_da_command(&cfg, &out)?;
            eprintln!(
                "trained {} steps, vocabulary {} tokens -> {}",
                summary.steps,
                summary.vocab_size,
                out.display()
            );
        }
        Command::Finetune {
            checkpoint,
            data,
            out,
            seed,
            fraction,
            indices,
        } => {
            if let Some(s) = seed {
                cfg.finetune.seed = s;
            }
            if fraction.is_some() {
                cfg.finetune.fraction = fraction;
                cfg.finetune.indices = None;
            }
            if let Some(p) = indices {
                cfg.finetune = with_indices(&cfg.finetune, &read_selection(&p)?);
            }
            let out = out_dir(out, &cfg)?;
            let losses = finetune_command(&checkpoint, &data.source(&cfg)?, &cfg, &out)?;
            eprintln!("fine-tuned {} epochs -> {}", losses.len(), out.display());
        }
        Command::Predict {
            checkpoint,
            data,
            predictor,
            out,
        } => {
            let preds = predict_command(&checkpoint, &data.source(&cfg)?, data.split, &predictor.predictor())?;
            match out {
                Some(p) => write_predictions(&p, &preds)?,
                None => {
                    for p in &preds {
                        println!("{}", serde_json::to_string(p)?);
                    }
                }
            }
        }
        Command::Evaluate {
            checkpoint,
            data,
            predictor,
            predictions,
            out,
        } => {
            let source = data.source(&cfg)?;
            let report = match (predictions, checkpoint) {
                (Some(p), _) => evaluate_file(&p, &source, data.split)?,
                (None, Some(c)) => evaluate_command(&c, &source, data.split, &predictor.predictor())?,
                (None, None) => bail!("give --checkpoint or --predictions"),
            };
            emit(&serde_json::to_string_pretty(&report)?, None)?;
            if let Some(p) = out {
                emit(&serde_json::to_string_pretty(&report)?, Some(&p))?;
            }
        }
        Command::SelectAl {
            checkpoint,
            data,
            strategy,
            budget,
            seed,
            out,
        } => {
            if let Some(s) = strategy {
                cfg.al.strategy = s;
            }
            if let Some(s) = seed {
                cfg.al.seed = s;
            }
            let source = data.source(&cfg)?;
            if let Some(b) = budget {
                let pool = source.load()?.train.len();
                cfg.al.budget = b.resolve(pool)?;
            }
            let sel = select_al_command(&checkpoint, &source, &cfg.al)?;
            match out {
                Some(p) => write_selection(&p, &sel)?,
                None => println!("{}", serde_json::to_string(&sel)?),
            }
        }
        Command::ExportEmbeddings { checkpoint, data, out } => {
            let n = export_embeddings_command(&checkpoint, &data.source(&cfg)?, data.split, &out)?;
            eprintln!("wrote {n} rows -> {}", out.display());
        }
    }
    Ok(())
}
