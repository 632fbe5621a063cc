//! Command implementations behind the `prefrank` binary.
//!
//! Each command returns its results instead of printing them, so the same
//! code paths can be driven from tests.

use std::fs::{self, File, OpenOptions};
use std::io::Write as _;
use std::path::{Path, PathBuf};

use crate::compute::checkpoint::Checkpoint;
use crate::compute::ParamStore;
use crate::config::RunConfig;
use crate::dataio::{self, CorpusStats, InputFormat, SplitCorpus};
use crate::eval::{self, EvalTarget, MetricsReport};
use crate::graph::BipartiteGraph;
use crate::model::Model;
use crate::train::{self, EpochRecord, Trainer};
use crate::{Error, Result};

pub const BEST_CHECKPOINT: &str = "best.ckpt";
pub const LAST_CHECKPOINT: &str = "last.ckpt";
pub const TRAIN_LOG: &str = "train_log.csv";
pub const CONFIG_ECHO: &str = "config.txt";
pub const LOCK_FILE: &str = ".lock";

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> Error + '_ {
    move |source| Error::Io {
        path: path.display().to_string(),
        source,
    }
}

pub fn write_file(path: &Path, contents: &[u8]) -> Result<()> {
    fs::write(path, contents).map_err(io_err(path))
}

/// Exclusive claim on an output directory, released on drop.
#[derive(Debug)]
pub struct OutputLock {
    path: PathBuf,
}

impl OutputLock {
    pub fn acquire(dir: &Path) -> Result<Self> {
        fs::create_dir_all(dir).map_err(io_err(dir))?;
        let path = dir.join(LOCK_FILE);
        match OpenOptions::new().write(true).create_new(true).open(&path) {
            Ok(mut f) => {
                let _ = writeln!(f, "{}", std::process::id());
                Ok(Self { path })
            }
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => Err(Error::Invalid(format!(
                "output directory {} is locked by another run ({} exists)",
                dir.display(),
                path.display()
            ))),
            Err(e) => Err(io_err(&path)(e)),
        }
    }
}

impl Drop for OutputLock {
    fn drop(&mut self) {
        let _ = fs::remove_file(&self.path);
    }
}

#[derive(Debug, Clone)]
pub struct PrepareArgs {
    pub raw: PathBuf,
    pub format: InputFormat,
    pub min_core: usize,
    pub test_frac: f64,
    pub valid_frac: f64,
    pub seed: u64,
    pub out: PathBuf,
}

/// Reads raw interactions, applies the k-core filter, splits and writes the
/// canonical corpus file.
pub fn cmd_prepare(args: &PrepareArgs) -> Result<CorpusStats> {
    let raw = dataio::load_interactions(&args.raw, args.format)?;
    let corpus = dataio::kcore_filter(&raw, args.min_core)?;
    let stats = corpus.stats();
    let split = dataio::split(&corpus, args.test_frac, args.valid_frac, args.seed)?;
    if let Some(parent) = args.out.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(io_err(parent))?;
    }
    dataio::write_corpus(&args.out, &split)?;
    Ok(stats)
}

pub fn format_stats(stats: &CorpusStats) -> String {
    format!(
        "users\t{}\nitems\t{}\ninteractions\t{}\ndensity\t{:.3}%\n",
        stats.users,
        stats.items,
        stats.interactions,
        100.0 * stats.density()
    )
}

#[derive(Debug, Clone)]
pub struct TrainSummary {
    pub best_epoch: usize,
    pub best_val_recall: f64,
    pub epochs_run: usize,
    pub test: MetricsReport,
    pub out_dir: PathBuf,
}

fn checkpoint_for(cfg_text: &str, split: &SplitCorpus, params: &ParamStore) -> Checkpoint {
    Checkpoint {
        config: cfg_text.to_string(),
        num_users: split.num_users(),
        num_items: split.num_items(),
        params: params.clone(),
    }
}

/// Trains on `cfg.corpus`, writing the config echo, a per-epoch CSV log,
/// the best checkpoint and the last completed epoch's checkpoint into
/// `cfg.out_dir`.
pub fn cmd_train(cfg: &RunConfig, mut progress: impl FnMut(&EpochRecord)) -> Result<TrainSummary> {
    cfg.validate()?;
    let corpus_path = cfg
        .corpus
        .as_ref()
        .ok_or_else(|| Error::Invalid("config key 'corpus' is required for training".into()))?;
    let split = dataio::read_corpus(corpus_path)?;
    let out = cfg.out_dir.clone();
    let _lock = OutputLock::acquire(&out)?;

    let cfg_text = cfg.to_text();
    write_file(&out.join(CONFIG_ECHO), cfg_text.as_bytes())?;
    let (model, store) = Model::init(cfg.model_config(), split.num_users(), split.num_items(), cfg.seed)?;
    let mut trainer = Trainer::new(model, store, &split, cfg.train_config())?;

    let log_path = out.join(TRAIN_LOG);
    let mut log = File::create(&log_path).map_err(io_err(&log_path))?;
    log.write_all(train::log_header(cfg.topn).as_bytes())
        .map_err(io_err(&log_path))?;
    let best_path = out.join(BEST_CHECKPOINT);
    let last_path = out.join(LAST_CHECKPOINT);

    let outcome = train::fit(&mut trainer, &split, |record, params, improved| {
        log.write_all(train::log_line(record).as_bytes())
            .and_then(|_| log.flush())
            .map_err(io_err(&log_path))?;
        let ckpt = checkpoint_for(&cfg_text, &split, params);
        ckpt.write(&last_path)?;
        if improved {
            ckpt.write(&best_path)?;
        }
        progress(record);
        Ok(())
    })?;

    let test = eval::evaluate(
        &trainer.model,
        &outcome.best,
        trainer.graph(),
        &split,
        EvalTarget::Test,
        cfg.topn,
    )?;
    Ok(TrainSummary {
        best_epoch: outcome.best_epoch,
        best_val_recall: outcome.best_recall,
        epochs_run: outcome.history.len(),
        test,
        out_dir: out,
    })
}

/// A checkpoint bound to a compatible corpus.
pub struct Loaded {
    pub config: RunConfig,
    pub split: SplitCorpus,
    pub graph: BipartiteGraph,
    pub model: Model,
    pub store: ParamStore,
}

pub fn load(checkpoint: &Path, corpus: &Path) -> Result<Loaded> {
    let ckpt = Checkpoint::read(checkpoint)?;
    let config = RunConfig::parse(&ckpt.config)?;
    config.validate()?;
    let split = dataio::read_corpus(corpus)?;
    if (ckpt.num_users, ckpt.num_items) != (split.num_users(), split.num_items()) {
        return Err(Error::Invalid(format!(
            "checkpoint is for {} users and {} items but the corpus has {} and {}",
            ckpt.num_users,
            ckpt.num_items,
            split.num_users(),
            split.num_items()
        )));
    }
    let model = Model::bind(config.model_config(), ckpt.num_users, ckpt.num_items, &ckpt.params)?;
    let graph = BipartiteGraph::build(&split);
    Ok(Loaded {
        config,
        split,
        graph,
        model,
        store: ckpt.params,
    })
}

pub fn cmd_evaluate(checkpoint: &Path, corpus: &Path, cutoff: usize, target: EvalTarget) -> Result<MetricsReport> {
    if cutoff == 0 {
        return Err(Error::Invalid("cutoff must be positive".into()));
    }
    let l = load(checkpoint, corpus)?;
    eval::evaluate(&l.model, &l.store, &l.graph, &l.split, target, cutoff)
}

/// Top-`n` items for `user_key` as `(item_key, score)`, masking the same
/// items as evaluation against `target`.
pub fn cmd_recommend(
    checkpoint: &Path,
    corpus: &Path,
    user_key: &str,
    n: usize,
    target: EvalTarget,
) -> Result<Vec<(String, f64)>> {
    let l = load(checkpoint, corpus)?;
    let corpus = l.split.corpus();
    let user = corpus
        .user_id(user_key)
        .ok_or_else(|| Error::Invalid(format!("unknown user '{user_key}'")))?;
    let emb = l.model.representations(&l.store, &l.graph)?.eval_embeddings();
    let masks = l.split.items_by_user(target.mask_splits());
    let scores = emb.items().dot(&emb.users().row(user));
    let top = eval::rank_items(scores.view(), &masks[user], n);
    Ok(top
        .into_iter()
        .map(|i| (corpus.item_key(i).expect("item id in range").to_string(), scores[i]))
        .collect())
}

pub const GRID_LR: [f64; 2] = [5e-4, 1e-4];
pub const GRID_L2: [f64; 2] = [1e-6, 5e-7];
pub const GRID_DROPOUT: [f64; 2] = [0.1, 0.2];

#[derive(Debug, Clone)]
pub struct GridRun {
    pub lr: f64,
    pub l2: f64,
    pub dropout: f64,
    pub summary: TrainSummary,
}

/// The 2×2×2 learning-rate × L2 × dropout configurations derived from `base`,
/// each writing into its own subdirectory of `base.out_dir`.
pub fn grid_configs(base: &RunConfig) -> Vec<RunConfig> {
    let mut out = Vec::with_capacity(8);
    for lr in GRID_LR {
        for l2 in GRID_L2 {
            for dropout in GRID_DROPOUT {
                let mut c = base.clone();
                c.lr = lr;
                c.l2 = l2;
                c.dropout = dropout;
                c.out_dir = base.out_dir.join(format!("lr{lr}_l2{l2}_dropout{dropout}"));
                out.push(c);
            }
        }
    }
    out
}

/// Runs every grid configuration and writes `grid.csv` into `base.out_dir`.
pub fn cmd_grid(base: &RunConfig, mut progress: impl FnMut(&RunConfig, &EpochRecord)) -> Result<Vec<GridRun>> {
    base.validate()?;
    let mut runs = Vec::new();
    for cfg in grid_configs(base) {
        let summary = cmd_train(&cfg, |r| progress(&cfg, r))?;
        runs.push(GridRun {
            lr: cfg.lr,
            l2: cfg.l2,
            dropout: cfg.dropout,
            summary,
        });
    }
    let n = base.topn;
    let mut csv = format!("lr,l2,dropout,best_epoch,val_recall@{n},test_recall@{n},test_ndcg@{n}\n");
    for r in &runs {
        csv.push_str(&format!(
            "{},{},{},{},{:.6},{:.6},{:.6}\n",
            r.lr,
            r.l2,
            r.dropout,
            r.summary.best_epoch,
            r.summary.best_val_recall,
            r.summary.test.recall,
            r.summary.test.ndcg
        ));
    }
    write_file(&base.out_dir.join("grid.csv"), csv.as_bytes())?;
    Ok(runs)
}
