use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use prefrank::cli::{self, PrepareArgs};
use prefrank::config::RunConfig;
use prefrank::dataio::InputFormat;
use prefrank::eval::EvalTarget;
use prefrank::Error;

const EXIT_USAGE: u8 = 2;
const EXIT_NUMERICAL: u8 = 3;

#[derive(Parser)]
#[command(name = "prefrank", version, about = "Multi-task graph convolution recommender")]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Global {
    /// Run configuration file (`key = value` lines).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the config seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Config override `key=value`; may be repeated.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    /// Worker threads; falls back to PREFRANK_THREADS.
    #[arg(long, global = true, env = "PREFRANK_THREADS")]
    threads: Option<usize>,
}

#[derive(Clone, Copy, ValueEnum)]
enum TargetArg {
    Test,
    Validation,
}

impl From<TargetArg> for EvalTarget {
    fn from(t: TargetArg) -> Self {
        match t {
            TargetArg::Test => EvalTarget::Test,
            TargetArg::Validation => EvalTarget::Validation,
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Filter, split and write a canonical corpus file.
    Prepare {
        /// Raw interaction file; defaults to the config `raw`.
        #[arg(long)]
        raw: Option<PathBuf>,
        /// `pairs` or `adjacency`.
        #[arg(long)]
        format: Option<InputFormat>,
        /// Minimum degree kept by the k-core filter.
        #[arg(long)]
        min_core: Option<usize>,
        /// Corpus file to write; defaults to the config `corpus`.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train with early stopping; writes checkpoints and a CSV log.
    Train,
    /// Run the 2×2×2 grid over learning rate, L2 and dropout.
    Grid,
    /// Score a checkpoint on the test or validation split.
    Evaluate {
        /// Checkpoint written by `train`.
        #[arg(long)]
        checkpoint: PathBuf,
        /// Corpus file the checkpoint was trained on.
        #[arg(long)]
        corpus: PathBuf,
        /// Ranking cutoff.
        #[arg(short, long, default_value_t = prefrank::eval::DEFAULT_CUTOFF)]
        n: usize,
        #[arg(long, value_enum, default_value = "test")]
        split: TargetArg,
        /// Writes the summary CSV here.
        #[arg(long)]
        report: Option<PathBuf>,
        /// Writes per-user metrics CSV here.
        #[arg(long)]
        per_user: Option<PathBuf>,
    },
    /// Print a user's top-n items, one `item score` pair per line.
    Recommend {
        /// Checkpoint written by `train`.
        #[arg(long)]
        checkpoint: PathBuf,
        /// Corpus file the checkpoint was trained on.
        #[arg(long)]
        corpus: PathBuf,
        /// User key as it appears in the raw input.
        #[arg(long)]
        user: String,
        /// Number of items to print.
        #[arg(short, long, default_value_t = 10)]
        n: usize,
        /// Masks the same items as evaluating this split.
        #[arg(long, value_enum, default_value = "test")]
        split: TargetArg,
    },
}

fn run_config(global: &Global) -> prefrank::Result<RunConfig> {
    let mut cfg = match &global.config {
        Some(path) => {
            let text = std::fs::read_to_string(path).map_err(|source| Error::Io {
                path: path.display().to_string(),
                source,
            })?;
            RunConfig::parse(&text)?
        }
        None => RunConfig::default(),
    };
    for o in &global.overrides {
        cfg.apply_override(o)?;
    }
    if let Some(seed) = global.seed {
        cfg.seed = seed;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn print_epoch(r: &prefrank::train::EpochRecord) {
    eprintln!(
        "epoch {:>4}  loss {:.6}  val recall {:.5}  ndcg {:.5}  {:.1}s",
        r.epoch, r.loss, r.val_recall, r.val_ndcg, r.seconds
    );
}

fn run(cli: Cli) -> prefrank::Result<()> {
    if let Some(threads) = cli.global.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build_global()
            .map_err(|e| Error::Invalid(format!("thread pool: {e}")))?;
    }
    let cfg = run_config(&cli.global)?;
    match cli.command {
        Command::Prepare {
            raw,
            format,
            min_core,
            out,
        } => {
            let args = PrepareArgs {
                raw: raw
                    .or(cfg.raw.clone())
                    .ok_or_else(|| Error::Invalid("no raw input given (--raw or config 'raw')".into()))?,
                format: format.unwrap_or(cfg.raw_format),
                min_core: min_core.unwrap_or(cfg.min_core),
                test_frac: cfg.test_frac,
                valid_frac: cfg.valid_frac,
                seed: cfg.seed,
                out: out
                    .or(cfg.corpus.clone())
                    .ok_or_else(|| Error::Invalid("no output given (--out or config 'corpus')".into()))?,
            };
            if args.min_core == 0 {
                return Err(Error::Invalid("min_core must be at least 1".into()));
            }
            let stats = cli::cmd_prepare(&args)?;
            print!("{}", cli::format_stats(&stats));
        }
        Command::Train => {
            let s = cli::cmd_train(&cfg, print_epoch)?;
            println!(
                "best epoch {} of {}  val recall@{n} {:.6}",
                s.best_epoch,
                s.epochs_run,
                s.best_val_recall,
                n = cfg.topn
            );
            print!("{}", s.test.summary_csv());
        }
        Command::Grid => {
            let runs = cli::cmd_grid(&cfg, |c, r| {
                eprint!("[lr {} l2 {} dropout {}] ", c.lr, c.l2, c.dropout);
                print_epoch(r);
            })?;
            for r in runs {
                println!(
                    "lr {} l2 {} dropout {}  best epoch {}  val recall {:.6}  test recall {:.6}",
                    r.lr, r.l2, r.dropout, r.summary.best_epoch, r.summary.best_val_recall, r.summary.test.recall
                );
            }
        }
        Command::Evaluate {
            checkpoint,
            corpus,
            n,
            split,
            report,
            per_user,
        } => {
            let rep = cli::cmd_evaluate(&checkpoint, &corpus, n, split.into())?;
            if let Some(path) = report {
                cli::write_file(&path, rep.summary_csv().as_bytes())?;
            }
            if let Some(path) = per_user {
                let c = prefrank::dataio::read_corpus(&corpus)?;
                let csv = rep.per_user_csv(|u| c.corpus().user_key(u).unwrap_or("?").to_string());
                cli::write_file(&path, csv.as_bytes())?;
            }
            print!("{}", rep.summary_csv());
        }
        Command::Recommend {
            checkpoint,
            corpus,
            user,
            n,
            split,
        } => {
            for (item, score) in cli::cmd_recommend(&checkpoint, &corpus, &user, n, split.into())? {
                println!("{item}\t{score:.6}");
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
            return if e.use_stderr() {
                ExitCode::from(EXIT_USAGE)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            if e.is_numerical() {
                ExitCode::from(EXIT_NUMERICAL)
            } else {
                ExitCode::from(EXIT_USAGE)
            }
        }
    }
}
