use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use relsifter::error::{Error, Result};
use relsifter::evaluation::{evaluate, join_gold, DEFAULT_TOLERANCE};
use relsifter::kg_store::DumpFormat;
use relsifter::learners::{
    default_grid, parse_grid, LearnerKind, LossScale, OptimizerSettings, TrainConfig, DEFAULT_FOLDS,
};
use relsifter::pertinence::{LogBase, PertinenceConfig};
use relsifter::pipeline::{self, PipelineConfig, TextInputs};

#[derive(Parser)]
#[command(name = "relsifter", version, about = "Score how relevant a person is to a relation value")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Mode {
    Kg,
    Text,
}

#[derive(Subcommand)]
enum Command {
    /// Parse graph dumps into a snapshot.
    Ingest {
        #[arg(long, default_value = "tsv")]
        format: String,
        #[arg(long)]
        out: PathBuf,
        #[arg(required = true)]
        dumps: Vec<PathBuf>,
    },
    /// Rank activities per relation value and write the top k.
    Activities {
        #[arg(long)]
        graph: PathBuf,
        #[arg(long)]
        relation: String,
        #[arg(long)]
        predicate: String,
        #[arg(long, default_value_t = 5)]
        k: usize,
        #[arg(long)]
        log_base: Option<f64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Turn labeled triples into a feature matrix.
    Featurize {
        #[arg(long, value_enum, default_value = "kg")]
        mode: Mode,
        #[arg(long)]
        graph: PathBuf,
        #[arg(long, default_value = "relation")]
        relation: String,
        #[arg(long)]
        predicate: String,
        #[arg(long, default_value_t = 5)]
        k: usize,
        #[arg(long)]
        log_base: Option<f64>,
        #[arg(long)]
        triples: PathBuf,
        #[arg(long)]
        aliases: Option<PathBuf>,
        #[arg(long, required_if_eq("mode", "text"))]
        corpus: Option<PathBuf>,
        #[arg(long)]
        stopwords: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Grid-search and fit a scorer on a feature matrix.
    Train {
        #[arg(long, default_value = "olr")]
        learner: String,
        #[arg(long)]
        matrix: PathBuf,
        /// Comma-separated grid; defaults to the learner's standard grid.
        #[arg(long)]
        grid: Option<String>,
        #[arg(long, default_value_t = DEFAULT_FOLDS)]
        folds: usize,
        /// Fold shuffling seed.
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Forest sampling seed.
        #[arg(long, default_value_t = 0)]
        model_seed: u64,
        /// OLR data term: `sum` or `mean` over examples.
        #[arg(long, default_value = "sum")]
        loss_scale: String,
        #[arg(long)]
        out: PathBuf,
    },
    /// Predict scores for a feature matrix.
    Score {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        matrix: PathBuf,
        /// Seed of the random fallback for unresolved rows.
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Compare predictions with gold scores.
    Evaluate {
        #[arg(long)]
        pred: PathBuf,
        #[arg(long)]
        gold: PathBuf,
        #[arg(long, default_value_t = DEFAULT_TOLERANCE)]
        tolerance: u8,
        /// Fallback seed recorded in the report.
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Directory for report.txt and report.kv; stdout otherwise.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run every stage from a config file.
    Run {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Overrides all three seeds.
        #[arg(long)]
        seed: Option<u64>,
    },
}

fn pertinence_config(log_base: Option<f64>) -> Result<PertinenceConfig> {
    Ok(PertinenceConfig {
        log_base: log_base.map(LogBase::new).transpose()?.unwrap_or(LogBase::NATURAL),
        ..PertinenceConfig::default()
    })
}

fn create(path: &Path) -> Result<std::io::BufWriter<std::fs::File>> {
    std::fs::File::create(path)
        .map(std::io::BufWriter::new)
        .map_err(|e| Error::io(path, e))
}

fn execute(command: Command) -> Result<()> {
    match command {
        Command::Ingest { format, out, dumps } => {
            let g = pipeline::ingest(&dumps, format.parse::<DumpFormat>()?)?;
            pipeline::save_graph(&g, &out)
        }
        Command::Activities {
            graph,
            relation,
            predicate,
            k,
            log_base,
            out,
        } => {
            if k == 0 {
                return Err(Error::Config("k must be at least 1".into()));
            }
            let g = pipeline::load_graph(&graph)?;
            let table = pipeline::activities(&g, &relation, &predicate, pertinence_config(log_base)?)?;
            table.write_tsv(create(&out)?, k)
        }
        Command::Featurize {
            mode,
            graph,
            relation,
            predicate,
            k,
            log_base,
            triples,
            aliases,
            corpus,
            stopwords,
            out,
        } => {
            let g = pipeline::load_graph(&graph)?;
            let table = pipeline::activities(&g, &relation, &predicate, pertinence_config(log_base)?)?;
            let text = match (mode, corpus) {
                (Mode::Text, Some(c)) => Some(TextInputs::load(&c, stopwords.as_deref())?),
                (Mode::Text, None) => return Err(Error::Config("--mode text needs --corpus".into())),
                (Mode::Kg, _) => None,
            };
            let aliases = pipeline::load_aliases(aliases.as_deref())?;
            let triples = pipeline::load_triples(&triples)?;
            let matrix = pipeline::featurize(&g, &table, k, text.as_ref(), &aliases, &[&triples])?
                .pop()
                .expect("one matrix per triple set");
            matrix.write_files(&out)
        }
        Command::Train {
            learner,
            matrix,
            grid,
            folds,
            seed,
            model_seed,
            loss_scale,
            out,
        } => {
            let kind: LearnerKind = learner.parse()?;
            let defaults = TrainConfig::new(kind);
            let config = TrainConfig {
                grid: match grid {
                    Some(g) => parse_grid(&g)?,
                    None => default_grid(kind),
                },
                folds,
                data_seed: seed,
                model_seed,
                optimizer: OptimizerSettings {
                    loss_scale: loss_scale.parse::<LossScale>()?,
                    ..defaults.optimizer
                },
                ..defaults
            };
            let x = relsifter::features::FeatureMatrix::read_files(&matrix)?;
            let model = pipeline::train_model(&x, &config)?;
            pipeline::write_model(&model, &out)
        }
        Command::Score {
            model,
            matrix,
            seed,
            out,
        } => {
            let model = pipeline::load_model(&model)?;
            let x = relsifter::features::FeatureMatrix::read_files(&matrix)?;
            let preds = pipeline::score(&x, &model, seed)?;
            pipeline::write_scores(&preds, &out)
        }
        Command::Evaluate {
            pred,
            gold,
            tolerance,
            seed,
            out,
        } => {
            let preds = pipeline::load_predictions(&pred)?;
            let gold = pipeline::load_triples(&gold)?;
            let report = evaluate(&join_gold(preds, &gold)?, tolerance, seed)?;
            match out {
                Some(dir) => {
                    std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
                    pipeline::write_report(&report, &dir)
                }
                None => std::io::stdout()
                    .write_all(report.to_text().as_bytes())
                    .map_err(Error::from),
            }
        }
        Command::Run { config, out, seed } => {
            let mut cfg = PipelineConfig::load(&config)?;
            if let Some(dir) = out {
                cfg.out_dir = dir;
            }
            if let Some(s) = seed {
                cfg.seeds.data = s;
                cfg.seeds.model = s;
                cfg.seeds.fallback = s;
            }
            for outcome in pipeline::run_pipeline(&cfg)? {
                match &outcome.report {
                    Some(r) => println!(
                        "{}\tselected={}\tcv_accuracy={:.4}\taccuracy={:.4}\tavg_score_diff={:.4}\tkendall_tau={:.4}",
                        outcome.name, outcome.selected, outcome.cv_accuracy, r.accuracy, r.avg_score_diff, r.kendall_tau
                    ),
                    None => println!(
                        "{}\tselected={}\tcv_accuracy={:.4}",
                        outcome.name, outcome.selected, outcome.cv_accuracy
                    ),
                }
            }
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match execute(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            log::error!("{e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
