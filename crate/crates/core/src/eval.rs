//! Full-ranking evaluation with Recall@N and NDCG@N.
//!
//! Every item is scored for every evaluated user; items the user is known
//! to have interacted with outside the target split are masked out. Ties in
//! score are broken by ascending item id.

use std::cmp::Ordering;
use std::fmt::Write as _;

use ndarray::ArrayView1;
use rayon::prelude::*;

use crate::compute::ParamStore;
use crate::dataio::{Split, SplitCorpus};
use crate::graph::BipartiteGraph;
use crate::model::{EvalEmbeddings, Model};
use crate::Result;

pub const DEFAULT_CUTOFF: usize = 20;

/// Users scored per matrix product.
const USER_CHUNK: usize = 64;

fn rank_order(a: &(usize, f64), b: &(usize, f64)) -> Ordering {
    b.1.total_cmp(&a.1).then(a.0.cmp(&b.0))
}

/// Top-`n` item ids by descending score, skipping items in `mask`
/// (sorted ascending). Ties go to the smaller id.
pub fn rank_items(scores: ArrayView1<'_, f64>, mask: &[usize], n: usize) -> Vec<usize> {
    let mut masked = mask.iter().peekable();
    let mut candidates: Vec<(usize, f64)> = Vec::with_capacity(scores.len());
    for (item, &score) in scores.iter().enumerate() {
        while masked.next_if(|&&m| m < item).is_some() {}
        if masked.next_if_eq(&&item).is_some() {
            continue;
        }
        candidates.push((item, score));
    }
    let n = n.min(candidates.len());
    if n == 0 {
        return Vec::new();
    }
    if n < candidates.len() {
        candidates.select_nth_unstable_by(n - 1, rank_order);
        candidates.truncate(n);
    }
    candidates.sort_unstable_by(rank_order);
    candidates.into_iter().map(|(i, _)| i).collect()
}

/// `|top ∩ relevant| / |relevant|`; `None` when `relevant` is empty.
/// `relevant` must be sorted.
pub fn recall_at_n(top: &[usize], relevant: &[usize]) -> Option<f64> {
    if relevant.is_empty() {
        return None;
    }
    let hits = top.iter().filter(|i| relevant.binary_search(i).is_ok()).count();
    Some(hits as f64 / relevant.len() as f64)
}

/// Binary-relevance NDCG with gain `1 / log₂(p + 1)` at 1-based position
/// `p`, normalized by the ideal DCG over `min(|relevant|, n)` positions.
/// `relevant` must be sorted.
pub fn ndcg_at_n(top: &[usize], relevant: &[usize], n: usize) -> Option<f64> {
    if relevant.is_empty() {
        return None;
    }
    let gain = |p: usize| 1.0 / ((p + 1) as f64).log2();
    let dcg: f64 = top
        .iter()
        .take(n)
        .enumerate()
        .filter(|(_, i)| relevant.binary_search(i).is_ok())
        .map(|(k, _)| gain(k + 1))
        .sum();
    let ideal: f64 = (1..=relevant.len().min(n)).map(gain).sum();
    Some(dcg / ideal)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UserMetrics {
    pub user: usize,
    pub recall: f64,
    pub ndcg: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricsReport {
    pub cutoff: usize,
    pub recall: f64,
    pub ndcg: f64,
    pub per_user: Vec<UserMetrics>,
}

impl MetricsReport {
    fn from_users(cutoff: usize, per_user: Vec<UserMetrics>) -> Self {
        let count = per_user.len().max(1) as f64;
        let recall = per_user.iter().map(|u| u.recall).sum::<f64>() / count;
        let ndcg = per_user.iter().map(|u| u.ndcg).sum::<f64>() / count;
        Self {
            cutoff,
            recall,
            ndcg,
            per_user,
        }
    }

    pub fn num_users(&self) -> usize {
        self.per_user.len()
    }

    pub fn summary_csv(&self) -> String {
        let n = self.cutoff;
        format!(
            "users,recall@{n},ndcg@{n}\n{},{:.6},{:.6}\n",
            self.num_users(),
            self.recall,
            self.ndcg
        )
    }

    /// `user_key,recall,ndcg` per evaluated user; `key` maps ids to keys.
    pub fn per_user_csv(&self, key: impl Fn(usize) -> String) -> String {
        let n = self.cutoff;
        let mut out = format!("user,recall@{n},ndcg@{n}\n");
        for u in &self.per_user {
            let _ = writeln!(out, "{},{:.6},{:.6}", key(u.user), u.recall, u.ndcg);
        }
        out
    }
}

/// Scores users against all items and aggregates metrics over users whose
/// `relevant` list is non-empty. `relevant` and `masks` are per-user sorted
/// item lists.
pub fn evaluate_embeddings(
    emb: &EvalEmbeddings,
    relevant: &[Vec<usize>],
    masks: &[Vec<usize>],
    cutoff: usize,
) -> MetricsReport {
    let users: Vec<usize> = (0..emb.num_users).filter(|&u| !relevant[u].is_empty()).collect();
    let user_rows = emb.users();
    let items_t = emb.items().reversed_axes();
    let per_user: Vec<UserMetrics> = users
        .par_chunks(USER_CHUNK)
        .flat_map_iter(|chunk| {
            let rows = user_rows.select(ndarray::Axis(0), chunk);
            let scores = rows.dot(&items_t);
            chunk
                .iter()
                .enumerate()
                .map(|(k, &u)| {
                    let top = rank_items(scores.row(k), &masks[u], cutoff);
                    UserMetrics {
                        user: u,
                        recall: recall_at_n(&top, &relevant[u]).expect("non-empty"),
                        ndcg: ndcg_at_n(&top, &relevant[u], cutoff).expect("non-empty"),
                    }
                })
                .collect::<Vec<_>>()
        })
        .collect();
    MetricsReport::from_users(cutoff, per_user)
}

/// Which held-out split to score.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EvalTarget {
    /// Relevant = validation items; mask = train items.
    Validation,
    /// Relevant = test items; mask = train and validation items.
    Test,
}

impl EvalTarget {
    pub fn relevant_split(self) -> Split {
        match self {
            EvalTarget::Validation => Split::Validation,
            EvalTarget::Test => Split::Test,
        }
    }

    pub fn mask_splits(self) -> &'static [Split] {
        match self {
            EvalTarget::Validation => &[Split::Train],
            EvalTarget::Test => &[Split::Train, Split::Validation],
        }
    }
}

/// Eval-mode forward pass followed by full ranking.
pub fn evaluate(
    model: &Model,
    store: &ParamStore,
    graph: &BipartiteGraph,
    split: &SplitCorpus,
    target: EvalTarget,
    cutoff: usize,
) -> Result<MetricsReport> {
    let emb = model.representations(store, graph)?.eval_embeddings();
    let relevant = split.items_by_user(&[target.relevant_split()]);
    let masks = split.items_by_user(target.mask_splits());
    Ok(evaluate_embeddings(&emb, &relevant, &masks, cutoff))
}
