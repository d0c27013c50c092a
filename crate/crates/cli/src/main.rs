use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

use topicarg::config::RunConfig;
use topicarg::corpus::{load_corpus, write_corpus, SetTag};
use topicarg::experiments::Task;
use topicarg::kg::{TransEConfig, DEFAULT_MAX_NEIGHBOR_CANDIDATES};
use topicarg::pipeline::{self, AugmentMode};
use topicarg::Error;

/// Topic-aware argument mining: train, evaluate and apply classifiers that
/// label sentences as pro/contra arguments or non-arguments for a topic.
#[derive(Parser, Debug)]
#[command(name = "topicarg", version)]
struct Cli {
    /// JSON run configuration (train) or TransE settings (train-kg).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the base seed of the command.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory (train, train-kg).
    #[arg(long, global = true)]
    output: Option<PathBuf>,
    /// Log progress to standard error.
    #[arg(long, short, global = true)]
    verbose: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum TaskArg {
    TwoClass,
    ThreeClass,
}

impl From<TaskArg> for Task {
    fn from(t: TaskArg) -> Task {
        match t {
            TaskArg::TwoClass => Task::TwoClass,
            TaskArg::ThreeClass => Task::ThreeClass,
        }
    }
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum SetArg {
    Train,
    Val,
    Test,
}

impl From<SetArg> for SetTag {
    fn from(s: SetArg) -> SetTag {
        match s {
            SetArg::Train => SetTag::Train,
            SetArg::Val => SetTag::Val,
            SetArg::Test => SetTag::Test,
        }
    }
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum ModeArg {
    Train,
    Test,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Train with restarts and write checkpoint, runs.json, report.json and split TSVs.
    Train,
    /// Print an evaluation report (JSON) for a checkpoint on a corpus.
    Evaluate {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long, value_enum, default_value = "two-class")]
        task: TaskArg,
        /// Only score rows whose `set` column has this value.
        #[arg(long, value_enum)]
        set: Option<SetArg>,
    },
    /// Topic-dependent augmentation; prints the corpus TSV.
    Augment {
        #[arg(long)]
        corpus: PathBuf,
        /// Related-terms TSV (`topic<TAB>term1..term5`); built-in terms otherwise.
        #[arg(long)]
        registry: Option<PathBuf>,
        #[arg(long, default_value_t = 0.5)]
        fraction: f64,
        #[arg(long, value_enum)]
        mode: ModeArg,
    },
    /// Keyword retrieval followed by topic-aware classification.
    Search {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        topic: String,
        #[arg(long, default_value_t = 5)]
        top_k: usize,
    },
    /// Map a topic to knowledge-graph entities.
    MapTopic {
        #[arg(long)]
        topic: String,
        #[arg(long)]
        triples: PathBuf,
        #[arg(long)]
        embeddings: PathBuf,
        #[arg(long, default_value_t = DEFAULT_MAX_NEIGHBOR_CANDIDATES)]
        max_candidates: usize,
    },
    /// Train TransE embeddings and write an entity-embedding checkpoint.
    TrainKg {
        #[arg(long)]
        triples: PathBuf,
        #[command(flatten)]
        transe: TranseArgs,
    },
}

/// Per-flag overrides of the TransE settings.
#[derive(Args, Debug)]
struct TranseArgs {
    #[arg(long)]
    dimension: Option<usize>,
    #[arg(long)]
    margin: Option<f64>,
    #[arg(long)]
    learning_rate: Option<f64>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    negatives: Option<usize>,
}

fn config_path(cli: &Cli) -> Result<&Path> {
    cli.config
        .as_deref()
        .ok_or_else(|| Error::Config("--config is required".into()).into())
}

fn output_dir(cli: &Cli, fallback: Option<&Path>) -> Result<PathBuf> {
    cli.output
        .clone()
        .or_else(|| fallback.map(Path::to_path_buf))
        .ok_or_else(|| Error::field("output", "set it in the config or pass --output").into())
}

fn cmd_train(cli: &Cli) -> Result<()> {
    let mut config = RunConfig::load(config_path(cli)?)?;
    if let Some(seed) = cli.seed {
        config.seeds.base = seed;
    }
    let output = output_dir(cli, config.output.as_deref())?;
    let outcome = pipeline::train(&config, &output)?;
    println!("test macro-F1 {:.4}", outcome.report.macro_f1);
    println!("selected seed {}", outcome.report.seed.unwrap_or_default());
    println!("checkpoint {}", outcome.checkpoint.display());
    println!("config digest {}", outcome.config_digest);
    Ok(())
}

fn cmd_train_kg(cli: &Cli, triples: &Path, flags: &TranseArgs) -> Result<()> {
    let mut config = match &cli.config {
        Some(p) => {
            let text =
                std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            serde_json::from_str::<TransEConfig>(&text)
                .map_err(|e| Error::Config(format!("{}: {e}", p.display())))?
        }
        None => TransEConfig::default(),
    };
    config.dimension = flags.dimension.unwrap_or(config.dimension);
    config.margin = flags.margin.unwrap_or(config.margin);
    config.learning_rate = flags.learning_rate.unwrap_or(config.learning_rate);
    config.epochs = flags.epochs.unwrap_or(config.epochs);
    config.negatives_per_positive = flags.negatives.unwrap_or(config.negatives_per_positive);
    config.validate()?;
    let output = output_dir(cli, None)?;
    let s = pipeline::train_kg(triples, &config, cli.seed.unwrap_or(1), &output)?;
    println!(
        "entities {} relations {} triples {}",
        s.entities, s.relations, s.triples
    );
    println!("mean true score {:.6}", s.mean_true_score);
    println!("mean corrupted score {:.6}", s.mean_corrupted_score);
    Ok(())
}

fn run(cli: &Cli) -> Result<()> {
    let stdout = io::stdout();
    match &cli.command {
        Command::Train => cmd_train(cli),
        Command::Evaluate {
            checkpoint,
            corpus,
            task,
            set,
        } => {
            let report =
                pipeline::evaluate(checkpoint, corpus, (*task).into(), set.map(Into::into))?;
            let mut out = stdout.lock();
            serde_json::to_writer_pretty(&mut out, &report)?;
            writeln!(out)?;
            Ok(())
        }
        Command::Augment {
            corpus,
            registry,
            fraction,
            mode,
        } => {
            let mode = match mode {
                ModeArg::Train => AugmentMode::Train,
                ModeArg::Test => AugmentMode::Test,
            };
            let examples = pipeline::augment(
                corpus,
                registry.as_deref(),
                *fraction,
                cli.seed.unwrap_or(1),
                mode,
            )?;
            write_corpus(stdout.lock(), &examples)?;
            Ok(())
        }
        Command::Search {
            checkpoint,
            corpus,
            topic,
            top_k,
        } => {
            let classifier = pipeline::load_classifier(checkpoint)?;
            let examples = load_corpus(corpus)?;
            let result = pipeline::search(&classifier, &examples, topic, *top_k)?;
            if result.retrieved == 0 {
                eprintln!("no sentence shares a content word with `{topic}`");
                return Ok(());
            }
            let mut out = stdout.lock();
            for group in &result.groups {
                writeln!(out, "{}:", group.name)?;
                for hit in &group.hits {
                    writeln!(out, "  {:.4}\t{}", hit.probability, hit.sentence)?;
                }
            }
            Ok(())
        }
        Command::MapTopic {
            topic,
            triples,
            embeddings,
            max_candidates,
        } => {
            let mapping = match pipeline::map_topic(topic, triples, embeddings, *max_candidates) {
                Ok(m) => m,
                Err(Error::UnresolvableTopic { topic, diagnostics }) => {
                    for d in &diagnostics {
                        eprintln!("  {d}");
                    }
                    bail!("could not map topic `{topic}` to any knowledge-graph entity");
                }
                Err(e) => return Err(e.into()),
            };
            for d in &mapping.dropped {
                log::warn!("dropped word {d}");
            }
            let mut out = stdout.lock();
            for r in &mapping.resolved {
                writeln!(out, "{}\t{}", r.entity, r.stage)?;
            }
            Ok(())
        }
        Command::TrainKg { triples, transe } => cmd_train_kg(cli, triples, transe),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    env_logger::Builder::new()
        .filter_level(if cli.verbose {
            log::LevelFilter::Debug
        } else {
            log::LevelFilter::Warn
        })
        .init();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            let config = e.chain().any(|c| {
                c.downcast_ref::<Error>()
                    .is_some_and(Error::is_config_error)
            });
            ExitCode::from(if config { 2 } else { 1 })
        }
    }
}
