//! Multi-task BPR training.
//!
//! Each mini-batch pairs every positive `(u, i)` with one freshly sampled
//! negative `j`, runs the full-graph forward pass, computes one BPR loss per
//! representation set and averages them. The averaged loss is divided by the
//! batch size before back-propagation.

use std::sync::Arc;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::compute::{adam_step, neg_log_sigmoid, AdamConfig, Gradients, Matrix, ParamStore, Tape, Var};
use crate::dataio::{Split, SplitCorpus};
use crate::eval::{evaluate, EvalTarget, MetricsReport};
use crate::graph::{BipartiteGraph, Segments};
use crate::model::{Mode, Model};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Triplet {
    pub user: usize,
    pub pos: usize,
    pub neg: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub lr: f64,
    pub l2: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub patience: usize,
    pub seed: u64,
    /// Cutoff for the validation Recall@N used in early stopping.
    pub cutoff: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr: 1e-4,
            l2: 1e-6,
            batch_size: 1024,
            max_epochs: 400,
            patience: 10,
            seed: 2020,
            cutoff: 20,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr >= 0.0 && self.lr.is_finite()) || !(self.l2 >= 0.0 && self.l2.is_finite()) {
            return Err(Error::Invalid("lr and l2 must be finite and non-negative".into()));
        }
        if self.batch_size == 0 || self.max_epochs == 0 || self.cutoff == 0 {
            return Err(Error::Invalid(
                "batch_size, max_epochs and cutoff must be positive".into(),
            ));
        }
        Ok(())
    }
}

/// Draws an item uniformly from those not in `positives` (sorted) by
/// rejection sampling.
pub fn sample_negative<R: Rng + ?Sized>(positives: &[usize], num_items: usize, rng: &mut R) -> Result<usize> {
    if positives.len() >= num_items {
        return Err(Error::Invalid(
            "user has interacted with every item; no negative exists".into(),
        ));
    }
    loop {
        let j = rng.gen_range(0..num_items);
        if positives.binary_search(&j).is_err() {
            return Ok(j);
        }
    }
}

/// `Σ −ln σ(v_u·v_i − v_u·v_j)` over `triplets` for one representation set
/// whose rows are entities (items offset by `num_users`).
pub fn bpr_loss(reps: &Matrix, num_users: usize, triplets: &[Triplet]) -> f64 {
    triplets
        .iter()
        .map(|t| {
            let u = reps.row(t.user);
            let pos = u.dot(&reps.row(num_users + t.pos));
            let neg = u.dot(&reps.row(num_users + t.neg));
            neg_log_sigmoid(pos - neg)
        })
        .sum()
}

/// Mean of the per-task losses.
pub fn total_loss(losses: &[f64]) -> f64 {
    losses.iter().sum::<f64>() / losses.len() as f64
}

/// Row indices of a triplet batch into the entity table.
#[derive(Debug, Clone)]
pub struct TripletIndex {
    users: Arc<[usize]>,
    pos: Arc<[usize]>,
    neg: Arc<[usize]>,
}

impl TripletIndex {
    pub fn new(num_users: usize, triplets: &[Triplet]) -> Self {
        Self {
            users: triplets.iter().map(|t| t.user).collect(),
            pos: triplets.iter().map(|t| num_users + t.pos).collect(),
            neg: triplets.iter().map(|t| num_users + t.neg).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.users.len()
    }

    pub fn is_empty(&self) -> bool {
        self.users.is_empty()
    }
}

/// Records one task's BPR loss for representation set `reps`.
pub fn bpr_loss_on_tape(tape: &mut Tape, reps: Var, index: &TripletIndex) -> Result<Var> {
    let u = tape.gather_rows(reps, index.users.clone())?;
    let i = tape.gather_rows(reps, index.pos.clone())?;
    let j = tape.gather_rows(reps, index.neg.clone())?;
    let pos = tape.dot_rows(u, i)?;
    let neg = tape.dot_rows(u, j)?;
    let margin = tape.sub(pos, neg)?;
    Ok(tape.neg_log_sigmoid_sum(margin)?)
}

/// Per-task losses and their mean for one batch.
#[derive(Debug, Clone)]
pub struct BatchLoss {
    pub per_task: Vec<Var>,
    pub total: Var,
}

/// Records the forward pass and the multi-task loss of one batch.
pub fn batch_loss<R: Rng + ?Sized>(
    tape: &mut Tape,
    model: &Model,
    store: &ParamStore,
    segments: &Arc<Segments>,
    index: &TripletIndex,
    mode: Mode,
    rng: &mut R,
) -> Result<BatchLoss> {
    let reps = model.forward(tape, store, segments, mode, rng)?;
    let per_task = reps
        .iter()
        .map(|&r| bpr_loss_on_tape(tape, r, index))
        .collect::<Result<Vec<_>>>()?;
    let sum = tape.sum(&per_task)?;
    let total = tape.scale(sum, 1.0 / per_task.len() as f64)?;
    Ok(BatchLoss { per_task, total })
}

/// Gradients of the batch-mean total loss, plus the summed total loss.
pub fn batch_gradients<R: Rng + ?Sized>(
    model: &Model,
    store: &ParamStore,
    segments: &Arc<Segments>,
    triplets: &[Triplet],
    mode: Mode,
    rng: &mut R,
) -> Result<(Gradients, f64)> {
    let index = TripletIndex::new(model.num_users(), triplets);
    let mut tape = Tape::new();
    let loss = batch_loss(&mut tape, model, store, segments, &index, mode, rng)?;
    let objective = tape.scale(loss.total, 1.0 / triplets.len() as f64)?;
    let grads = tape.backward(objective)?;
    Ok((grads, tape.scalar(loss.total)))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochStats {
    /// Mean per-triplet total loss over the epoch.
    pub loss: f64,
    pub triplets: usize,
    pub batches: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub loss: f64,
    pub val_recall: f64,
    pub val_ndcg: f64,
    pub seconds: f64,
}

/// Mutable training state over one split.
pub struct Trainer {
    pub model: Model,
    pub store: ParamStore,
    graph: BipartiteGraph,
    segments: Arc<Segments>,
    positives: Vec<Vec<usize>>,
    train_pairs: Vec<(usize, usize)>,
    config: TrainConfig,
    adam: AdamConfig,
    rng: ChaCha8Rng,
}

impl Trainer {
    pub fn new(model: Model, store: ParamStore, split: &SplitCorpus, config: TrainConfig) -> Result<Self> {
        config.validate()?;
        if model.num_users() != split.num_users() || model.num_items() != split.num_items() {
            return Err(Error::Invalid("model and corpus disagree on user/item counts".into()));
        }
        let graph = BipartiteGraph::build(split);
        let segments = graph.conv_segments();
        let positives = split.items_by_user(&[Split::Train]);
        let train_pairs = split.train();
        if train_pairs.is_empty() {
            return Err(Error::Invalid("training split is empty".into()));
        }
        let adam = AdamConfig::new(config.lr, config.l2);
        let rng = ChaCha8Rng::seed_from_u64(config.seed);
        Ok(Self {
            model,
            store,
            graph,
            segments,
            positives,
            train_pairs,
            config,
            adam,
            rng,
        })
    }

    pub fn graph(&self) -> &BipartiteGraph {
        &self.graph
    }

    pub fn config(&self) -> &TrainConfig {
        &self.config
    }

    /// One negative per training positive, in a fresh shuffled order.
    pub fn epoch_triplets(&mut self) -> Result<Vec<Triplet>> {
        self.train_pairs.shuffle(&mut self.rng);
        let num_items = self.model.num_items();
        self.train_pairs
            .iter()
            .map(|&(user, pos)| {
                let neg = sample_negative(&self.positives[user], num_items, &mut self.rng)?;
                Ok(Triplet { user, pos, neg })
            })
            .collect()
    }

    /// One pass over all training positives. On error the parameters keep
    /// the state of the last completed batch.
    pub fn train_epoch(&mut self) -> Result<EpochStats> {
        let triplets = self.epoch_triplets()?;
        let mut loss_sum = 0.0;
        let mut batches = 0;
        for batch in triplets.chunks(self.config.batch_size) {
            let (grads, total) = batch_gradients(
                &self.model,
                &self.store,
                &self.segments,
                batch,
                Mode::Train,
                &mut self.rng,
            )?;
            adam_step(&mut self.store, &grads, &self.adam)?;
            loss_sum += total;
            batches += 1;
        }
        Ok(EpochStats {
            loss: loss_sum / triplets.len() as f64,
            triplets: triplets.len(),
            batches,
        })
    }

    pub fn evaluate(&self, split: &SplitCorpus, target: EvalTarget) -> Result<MetricsReport> {
        evaluate(&self.model, &self.store, &self.graph, split, target, self.config.cutoff)
    }
}

#[derive(Debug, Clone)]
pub struct FitOutcome {
    pub best: ParamStore,
    pub best_epoch: usize,
    pub best_recall: f64,
    pub history: Vec<EpochRecord>,
}

/// Trains until validation Recall@N has not improved for `patience` epochs
/// or `max_epochs` is reached, and returns the best parameters seen.
///
/// `on_epoch` runs after every epoch with the record, the current
/// parameters and whether they are the new best.
pub fn fit(
    trainer: &mut Trainer,
    split: &SplitCorpus,
    mut on_epoch: impl FnMut(&EpochRecord, &ParamStore, bool) -> Result<()>,
) -> Result<FitOutcome> {
    if split.validation().is_empty() {
        return Err(Error::Invalid(
            "early stopping needs a non-empty validation split".into(),
        ));
    }
    let mut best: Option<(ParamStore, usize, f64)> = None;
    let mut history = Vec::new();
    let mut since_best = 0;
    for epoch in 1..=trainer.config.max_epochs {
        let start = Instant::now();
        let stats = trainer.train_epoch()?;
        let report = trainer.evaluate(split, EvalTarget::Validation)?;
        let record = EpochRecord {
            epoch,
            loss: stats.loss,
            val_recall: report.recall,
            val_ndcg: report.ndcg,
            seconds: start.elapsed().as_secs_f64(),
        };
        let improved = best.as_ref().is_none_or(|b| record.val_recall > b.2);
        if improved {
            best = Some((trainer.store.clone(), epoch, record.val_recall));
            since_best = 0;
        } else {
            since_best += 1;
        }
        on_epoch(&record, &trainer.store, improved)?;
        history.push(record);
        if since_best >= trainer.config.patience {
            break;
        }
    }
    let (best, best_epoch, best_recall) = best.expect("at least one epoch ran");
    Ok(FitOutcome {
        best,
        best_epoch,
        best_recall,
        history,
    })
}

/// CSV header of the per-epoch metrics log.
pub fn log_header(cutoff: usize) -> String {
    format!("epoch,total_loss,val_recall@{cutoff},val_ndcg@{cutoff},seconds\n")
}

pub fn log_line(r: &EpochRecord) -> String {
    format!(
        "{},{:.8},{:.6},{:.6},{:.3}\n",
        r.epoch, r.loss, r.val_recall, r.val_ndcg, r.seconds
    )
}
