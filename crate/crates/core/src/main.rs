use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use sqltree::checks::{
    case_seed, gradient_case, grammar_roundtrip_case, legality_case, schema_pool, sequence_roundtrip_case, Component,
    ProbeModel,
};
use sqltree::corpus::{generate_corpus, CorpusConfig, Mix};
use sqltree::data::{validate_dataset, DatasetFile};
use sqltree::grammar::Grammar;
use sqltree::model::SearchMode;
use sqltree::train::{
    baseline_predictions, load_checkpoint, predict, score, Prediction, TrainConfig, TrainError, Trainer,
};

#[derive(Parser)]
#[command(name = "sqltree", version, about = "Grammar-constrained text-to-SQL training and inference")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic train/dev corpus.
    GenCorpus {
        #[arg(long, default_value_t = 1)]
        seed: u64,
        /// Training examples.
        #[arg(long, default_value_t = 64)]
        examples: usize,
        /// Held-out examples; defaults to a quarter of `--examples`.
        #[arg(long)]
        dev_examples: Option<usize>,
        #[arg(long, default_value_t = 3)]
        schemas: usize,
        /// Bucket weights: easy,medium,hard,extra.
        #[arg(long, default_value_t = Mix::default())]
        mix: Mix,
        /// Directory receiving train.json and dev.json.
        #[arg(long)]
        out: PathBuf,
    },
    /// Check a dataset file: schemas, tags, SQL, action traces.
    Validate {
        dataset: PathBuf,
        #[arg(long, default_value_t = 30)]
        window: usize,
    },
    /// Train a model.
    Train {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        train: PathBuf,
        /// Validation set evaluated every `eval_interval` steps.
        #[arg(long)]
        dev: Option<PathBuf>,
        /// Overrides the config seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Continue from a checkpoint directory.
        #[arg(long)]
        resume: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Print EM, EM by difficulty, and selection recall.
    Eval {
        #[arg(long)]
        data: PathBuf,
        /// Generate with this checkpoint.
        #[arg(long, conflicts_with_all = ["predictions", "baseline"])]
        checkpoint: Option<PathBuf>,
        /// Score an existing prediction file.
        #[arg(long, conflicts_with = "baseline")]
        predictions: Option<PathBuf>,
        /// Score the most-frequent-query baseline fitted on this training set.
        #[arg(long)]
        baseline: Option<PathBuf>,
        /// Beam width; defaults to the checkpoint config.
        #[arg(long)]
        beam: Option<usize>,
    },
    /// Write JSON-lines predictions.
    Predict {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        beam: Option<usize>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run a seeded property suite and report passes.
    Check {
        suite: Suite,
        #[arg(long, default_value_t = 1000)]
        n: u64,
        #[arg(long, default_value_t = 7)]
        seed: u64,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Suite {
    /// Central finite differences on every composite layer and the loss.
    Gradients,
    /// SQL render/parse and BFS sequence round trips.
    Roundtrips,
    /// Selection masks and action legality.
    Masks,
    /// Untrained greedy generation yields valid trees or budget errors.
    Generation,
}

enum Failure {
    /// Bad input or arguments.
    Usage(String),
    /// A check, validation or run failed.
    Failed(String),
}

type Outcome = Result<(), Failure>;

fn usage(e: impl std::fmt::Display) -> Failure {
    Failure::Usage(e.to_string())
}

fn from_train(e: TrainError) -> Failure {
    match e {
        TrainError::Config(_)
        | TrainError::Dataset(_)
        | TrainError::Archive(_)
        | TrainError::Checkpoint(_)
        | TrainError::Vocabulary(_)
        | TrainError::EmptyDataset => Failure::Usage(e.to_string()),
        other => Failure::Failed(other.to_string()),
    }
}

fn load_dataset(path: &Path) -> Result<DatasetFile, Failure> {
    DatasetFile::load(path).map_err(|e| usage(format!("{}: {e}", path.display())))
}

fn mode_for(beam: Option<usize>, config: &TrainConfig) -> Result<SearchMode, Failure> {
    match beam.unwrap_or(config.beam_width) {
        0 => Err(usage("beam width must be at least 1")),
        w => Ok(SearchMode::from_width(w)),
    }
}

fn gen_corpus(cfg: CorpusConfig, out: &Path) -> Outcome {
    let corpus = generate_corpus(&cfg).map_err(usage)?;
    fs::create_dir_all(out).map_err(usage)?;
    for (name, ds) in [("train.json", &corpus.train), ("dev.json", &corpus.dev)] {
        ds.save(&out.join(name)).map_err(usage)?;
        println!("{}: {} examples", out.join(name).display(), ds.examples.len());
    }
    Ok(())
}

fn validate(path: &Path, window: usize) -> Outcome {
    let ds = load_dataset(path)?;
    let report = validate_dataset(&ds, Grammar::builtin(), window);
    for f in &report.failures {
        println!("FAIL {}: {}", f.example_id, f.message);
    }
    let passed = report.checked - report.failures.len();
    println!("{passed}/{} examples valid", report.checked);
    if report.is_ok() {
        Ok(())
    } else {
        Err(Failure::Failed(format!("{} invalid examples", report.failures.len())))
    }
}

fn train(
    config: Option<PathBuf>,
    train: &Path,
    dev: Option<PathBuf>,
    seed: Option<u64>,
    resume: Option<PathBuf>,
    out: &Path,
) -> Outcome {
    let train_ds = load_dataset(train)?;
    let dev_ds = dev.as_deref().map(load_dataset).transpose()?;
    let mut trainer = match resume {
        Some(dir) => {
            if config.is_some() || seed.is_some() {
                return Err(usage("--resume takes its configuration from the checkpoint"));
            }
            Trainer::resume(load_checkpoint(&dir).map_err(from_train)?, &train_ds).map_err(from_train)?
        }
        None => {
            let mut cfg = match config {
                Some(path) => {
                    let text = fs::read_to_string(&path).map_err(|e| usage(format!("{}: {e}", path.display())))?;
                    TrainConfig::from_toml(&text).map_err(from_train)?
                }
                None => TrainConfig::default(),
            };
            if let Some(s) = seed {
                cfg.seed = s;
            }
            Trainer::new(cfg, &train_ds).map_err(from_train)?
        }
    };
    if !trainer.skipped.is_empty() {
        println!("skipped {} examples whose trees exceed the window", trainer.skipped.len());
    }
    let rows = trainer.run(out, dev_ds.as_ref()).map_err(from_train)?;
    if let Some(last) = rows.last() {
        println!("step {} loss {:.4} aux_loss {:.4}", last.step, last.loss, last.aux_loss);
        if let Some(em) = last.val_em {
            println!("val_em {em:.4}");
        }
    }
    println!("checkpoint: {}", out.join("checkpoint").display());
    Ok(())
}

fn eval(
    data: &Path,
    checkpoint: Option<PathBuf>,
    predictions: Option<PathBuf>,
    baseline: Option<PathBuf>,
    beam: Option<usize>,
) -> Outcome {
    let ds = load_dataset(data)?;
    let grammar = Grammar::builtin();
    let preds = match (checkpoint, predictions, baseline) {
        (Some(dir), None, None) => {
            let ckpt = load_checkpoint(&dir).map_err(from_train)?;
            let mode = mode_for(beam, &ckpt.config)?;
            predict(&ckpt.model, &ds, mode).map_err(from_train)?
        }
        (None, Some(path), None) => {
            let text = fs::read_to_string(&path).map_err(|e| usage(format!("{}: {e}", path.display())))?;
            Prediction::from_jsonl(&text).map_err(|e| usage(format!("{}: {e}", path.display())))?
        }
        (None, None, Some(path)) => baseline_predictions(&load_dataset(&path)?, &ds),
        _ => return Err(usage("give exactly one of --checkpoint, --predictions, --baseline")),
    };
    let metrics = score(grammar, &ds, &preds).map_err(from_train)?;
    println!("{metrics}");
    Ok(())
}

fn predict_cmd(checkpoint: &Path, data: &Path, beam: Option<usize>, out: &Path) -> Outcome {
    let ds = load_dataset(data)?;
    let ckpt = load_checkpoint(checkpoint).map_err(from_train)?;
    let mode = mode_for(beam, &ckpt.config)?;
    let preds = predict(&ckpt.model, &ds, mode).map_err(from_train)?;
    if let Some(dir) = out.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(usage)?;
    }
    fs::write(out, Prediction::to_jsonl(&preds)).map_err(usage)?;
    let failed = preds.iter().filter(|p| p.sql.is_none()).count();
    println!("{}: {} predictions, {failed} without SQL", out.display(), preds.len());
    Ok(())
}

fn check(suite: Suite, n: u64, seed: u64) -> Outcome {
    let pool = schema_pool();
    let probe = matches!(suite, Suite::Masks | Suite::Generation).then(|| ProbeModel::new(seed));
    let mut passed = 0;
    for i in 0..n {
        let s = case_seed(seed, i);
        let result = match suite {
            Suite::Roundtrips => grammar_roundtrip_case(s, &pool).and_then(|_| sequence_roundtrip_case(s)),
            Suite::Gradients => {
                let c = Component::ALL[(i % 4) as usize];
                let r = gradient_case(c, s);
                if r.max_rel_error < 1e-4 {
                    Ok(())
                } else {
                    Err(format!("{c}: relative error {:.3e} at {:?}", r.max_rel_error, r.worst))
                }
            }
            Suite::Masks => {
                let p = probe.as_ref().expect("probe");
                p.selection_case(s).and_then(|_| legality_case(p, s))
            }
            Suite::Generation => probe.as_ref().expect("probe").generation_case(s, 200),
        };
        match result {
            Ok(()) => passed += 1,
            Err(msg) => println!("FAIL case {i}: {msg}"),
        }
    }
    println!("{passed}/{n} passed");
    if passed == n {
        Ok(())
    } else {
        Err(Failure::Failed(format!("{} cases failed", n - passed)))
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let outcome = match cli.command {
        Command::GenCorpus { seed, examples, dev_examples, schemas, mix, out } => gen_corpus(
            CorpusConfig {
                seed,
                train_examples: examples,
                dev_examples: dev_examples.unwrap_or(examples / 4),
                schemas,
                mix,
            },
            &out,
        ),
        Command::Validate { dataset, window } => validate(&dataset, window),
        Command::Train { config, train: t, dev, seed, resume, out } => train(config, &t, dev, seed, resume, &out),
        Command::Eval { data, checkpoint, predictions, baseline, beam } => {
            eval(&data, checkpoint, predictions, baseline, beam)
        }
        Command::Predict { checkpoint, data, beam, out } => predict_cmd(&checkpoint, &data, beam, &out),
        Command::Check { suite, n, seed } => check(suite, n, seed),
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Failed(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
    }
}
