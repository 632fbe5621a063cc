//! Checks shared by the acceptance runner and the integration tests.
#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Instant;

use prefrank::compute::{Activation, Gradients, Matrix, ParamStore, Tape};
use prefrank::dataio::{self, InteractionCorpus, SplitCorpus};
use prefrank::eval::{evaluate, ndcg_at_n, rank_items, recall_at_n, EvalTarget};
use prefrank::graph::{BipartiteGraph, Segments};
use prefrank::model::{conv_forward, Aggregator, Mode, Model, ModelConfig};
use prefrank::train::{batch_gradients, batch_loss, bpr_loss, fit, TrainConfig, Trainer, Triplet, TripletIndex};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub enum Verdict {
    Pass(String),
    Fail(String),
    Skip(String),
}

impl Verdict {
    pub fn from_result(r: Result<String, String>) -> Self {
        match r {
            Ok(s) => Verdict::Pass(s),
            Err(s) => Verdict::Fail(s),
        }
    }
}

pub fn workspace_root() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../..")
}

/// A random bipartite problem small enough for finite differences.
pub struct TinyProblem {
    pub model: Model,
    pub store: ParamStore,
    pub graph: BipartiteGraph,
    pub segments: Arc<Segments>,
    pub triplets: Vec<Triplet>,
    pub dropout_seed: u64,
}

/// Edges with every user holding at least one positive and one negative.
pub fn random_edges(m: usize, n: usize, p: f64, rng: &mut impl Rng) -> Vec<(usize, usize)> {
    assert!(n >= 2);
    let mut edges = Vec::new();
    for u in 0..m {
        let mut items: Vec<usize> = (0..n).filter(|_| rng.gen_bool(p)).collect();
        if items.is_empty() {
            items.push(rng.gen_range(0..n));
        }
        if items.len() == n {
            items.remove(rng.gen_range(0..n));
        }
        edges.extend(items.into_iter().map(|i| (u, i)));
    }
    edges
}

pub fn positives_by_user(m: usize, edges: &[(usize, usize)]) -> Vec<Vec<usize>> {
    let mut pos = vec![Vec::new(); m];
    for &(u, i) in edges {
        pos[u].push(i);
    }
    for p in &mut pos {
        p.sort_unstable();
        p.dedup();
    }
    pos
}

pub fn random_triplets(positives: &[Vec<usize>], n: usize, count: usize, rng: &mut impl Rng) -> Vec<Triplet> {
    (0..count)
        .map(|_| {
            let user = rng.gen_range(0..positives.len());
            let pos = *positives[user].choose(rng).expect("user has a positive");
            let negs: Vec<usize> = (0..n).filter(|i| positives[user].binary_search(i).is_err()).collect();
            let neg = *negs.choose(rng).expect("user has a negative");
            Triplet { user, pos, neg }
        })
        .collect()
}

pub fn tiny_problem(seed: u64, k: usize, aggregator: Aggregator) -> TinyProblem {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let m = rng.gen_range(1..=8);
    let n = rng.gen_range(2..=8);
    let edges = random_edges(m, n, 0.4, &mut rng);
    let graph = BipartiteGraph::from_edges(m, n, &edges).unwrap();
    let positives = positives_by_user(m, &edges);
    let count = rng.gen_range(1..=6);
    let triplets = random_triplets(&positives, n, count, &mut rng);

    let mut cfg = ModelConfig::with_total_dim(1, 1).unwrap();
    cfg.layer_dims = (0..k).map(|_| rng.gen_range(1..=8)).collect();
    cfg.aggregator = aggregator;
    cfg.attention_dim = rng.gen_bool(0.5).then(|| rng.gen_range(1..=8));
    cfg.activation = *[Activation::LeakyRelu(0.2), Activation::Tanh].choose(&mut rng).unwrap();
    cfg.logit_activation = *[
        Activation::LeakyRelu(0.2),
        Activation::Tanh,
        Activation::Sigmoid,
        Activation::Identity,
    ]
    .choose(&mut rng)
    .unwrap();
    cfg.dropout = if rng.gen_bool(0.5) { 0.25 } else { 0.0 };
    let (model, mut store) = Model::init(cfg, m, n, seed).unwrap();
    // Biases start at zero; move them so their paths carry signal.
    let bias_ids: Vec<_> = store
        .iter()
        .filter(|(_, p)| p.name.ends_with("bias"))
        .map(|(id, _)| id)
        .collect();
    for id in bias_ids {
        store.value_mut(id).mapv_inplace(|_| rng.gen_range(-0.5..0.5));
    }
    let segments = graph.conv_segments();
    TinyProblem {
        model,
        store,
        graph,
        segments,
        triplets,
        dropout_seed: seed ^ 0x5eed,
    }
}

/// Unscaled multi-task loss `L_total` and, optionally, its gradients. The
/// dropout stream is re-seeded on every call so masks match.
pub fn total_loss(p: &TinyProblem, store: &ParamStore, with_grads: bool) -> (f64, Option<Gradients>) {
    let mut tape = Tape::new();
    let index = TripletIndex::new(p.model.num_users(), &p.triplets);
    let mut rng = ChaCha8Rng::seed_from_u64(p.dropout_seed);
    let loss = batch_loss(&mut tape, &p.model, store, &p.segments, &index, Mode::Train, &mut rng).unwrap();
    let grads = with_grads.then(|| tape.backward(loss.total).unwrap());
    (tape.scalar(loss.total), grads)
}

pub struct GradientReport {
    pub cases: usize,
    pub entries: usize,
    pub worst: f64,
}

pub const FD_STEP: f64 = 1e-5;
pub const FD_TOLERANCE: f64 = 1e-4;
/// Denominator floor for gradients that are zero up to round-off.
pub const FD_FLOOR: f64 = 1e-6;

/// Compares every parameter gradient against central differences on
/// `cases` random problems cycling through `K ∈ {1, 2, 3}` and both
/// aggregators.
pub fn gradient_check(cases: usize, base_seed: u64) -> Result<GradientReport, String> {
    let mut entries = 0;
    let mut worst: f64 = 0.0;
    for c in 0..cases {
        let k = 1 + c % 3;
        let aggregator = if (c / 3) % 2 == 0 {
            Aggregator::Attentive
        } else {
            Aggregator::Mean
        };
        let p = tiny_problem(base_seed + c as u64, k, aggregator);
        let (_, grads) = total_loss(&p, &p.store, true);
        let grads = grads.unwrap();
        for (id, param) in p.store.iter() {
            for e in 0..param.value.len() {
                let mut plus = p.store.clone();
                plus.value_mut(id).as_slice_mut().unwrap()[e] += FD_STEP;
                let mut minus = p.store.clone();
                minus.value_mut(id).as_slice_mut().unwrap()[e] -= FD_STEP;
                let fd = (total_loss(&p, &plus, false).0 - total_loss(&p, &minus, false).0) / (2.0 * FD_STEP);
                let g = grads.get(id).map_or(0.0, |g| g.as_slice().unwrap()[e]);
                let rel = (g - fd).abs() / g.abs().max(fd.abs()).max(FD_FLOOR);
                entries += 1;
                worst = worst.max(rel);
                if rel > FD_TOLERANCE {
                    return Err(format!(
                        "case {c} (K={k}, {aggregator}) param {} entry {e}: analytic {g:e} vs numeric {fd:e}",
                        param.name
                    ));
                }
            }
        }
    }
    Ok(GradientReport { cases, entries, worst })
}

fn random_segments(rng: &mut impl Rng, rows: usize) -> Segments {
    let count = rng.gen_range(1..=6);
    let lists: Vec<Vec<usize>> = (0..count)
        .map(|_| {
            let len = rng.gen_range(1..=5);
            (0..len).map(|_| rng.gen_range(0..rows)).collect()
        })
        .collect();
    Segments::from_lists(&lists)
}

fn random_matrix(rng: &mut impl Rng, rows: usize, cols: usize) -> Matrix {
    Matrix::from_shape_simple_fn((rows, cols), || rng.gen_range(-2.0..2.0))
}

/// Brute-force top-`n` with the `(score desc, id asc)` order.
pub fn brute_top(scores: &[f64], mask: &[usize], n: usize) -> Vec<usize> {
    let mut all: Vec<(usize, f64)> = scores
        .iter()
        .copied()
        .enumerate()
        .filter(|(i, _)| !mask.contains(i))
        .collect();
    all.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(a.0.cmp(&b.0)));
    all.into_iter().take(n).map(|(i, _)| i).collect()
}

pub fn brute_recall(top: &[usize], relevant: &[usize]) -> f64 {
    let hits = top.iter().filter(|i| relevant.contains(i)).count();
    hits as f64 / relevant.len() as f64
}

pub fn brute_ndcg(top: &[usize], relevant: &[usize], n: usize) -> f64 {
    let mut dcg = 0.0;
    for (rank0, item) in top.iter().enumerate() {
        if relevant.contains(item) {
            dcg += 1.0 / ((rank0 + 2) as f64).log2();
        }
    }
    let mut idcg = 0.0;
    for rank0 in 0..relevant.len().min(n) {
        idcg += 1.0 / ((rank0 + 2) as f64).log2();
    }
    dcg / idcg
}

/// conv_forward, segment_softmax, recall and NDCG against explicit loops.
pub fn oracle_check(instances: usize, seed: u64) -> Result<String, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst_conv: f64 = 0.0;
    let mut worst_softmax: f64 = 0.0;
    for case in 0..instances {
        // Convolution with explicit member weights.
        let rows = rng.gen_range(1..=7);
        let d_in = rng.gen_range(1..=5);
        let d_out = rng.gen_range(1..=5);
        let seg = Arc::new(random_segments(&mut rng, rows));
        let prev = random_matrix(&mut rng, rows, d_in);
        let weight = random_matrix(&mut rng, d_in, d_out);
        let w: Vec<f64> = (0..seg.len()).map(|_| rng.gen_range(0.0..1.0)).collect();
        let act = *[Activation::LeakyRelu(0.2), Activation::Tanh, Activation::Identity]
            .choose(&mut rng)
            .unwrap();
        let got = conv_forward(&weight, &prev, &seg, &w, act).map_err(|e| e.to_string())?;
        for s in 0..seg.num_segments() {
            let mut mixed = vec![0.0; d_in];
            for p in seg.range(s) {
                for (c, m) in mixed.iter_mut().enumerate() {
                    *m += w[p] * prev[[seg.members[p], c]];
                }
            }
            for o in 0..d_out {
                let mut z = 0.0;
                for (c, m) in mixed.iter().enumerate() {
                    z += m * weight[[c, o]];
                }
                let diff = (act.apply(z) - got[[s, o]]).abs();
                worst_conv = worst_conv.max(diff);
                if diff > 1e-12 {
                    return Err(format!(
                        "conv_forward instance {case}: segment {s} column {o} off by {diff:e}"
                    ));
                }
            }
        }

        // Segment softmax.
        let logits = random_matrix(&mut rng, seg.len(), 1);
        let mut tape = Tape::new();
        let z = tape.constant(logits.clone()).unwrap();
        let y = tape.segment_softmax(z, seg.clone()).unwrap();
        let y = tape.value(y);
        for s in 0..seg.num_segments() {
            let total: f64 = seg.range(s).map(|p| logits[[p, 0]].exp()).sum();
            for p in seg.range(s) {
                let diff = (logits[[p, 0]].exp() / total - y[[p, 0]]).abs();
                worst_softmax = worst_softmax.max(diff);
                if diff > 1e-12 {
                    return Err(format!("segment_softmax instance {case}: position {p} off by {diff:e}"));
                }
            }
        }

        // Metrics, with coarse scores so ties are common.
        let n_items = rng.gen_range(1..=15);
        let scores: Vec<f64> = (0..n_items).map(|_| f64::from(rng.gen_range(0..4u8))).collect();
        let mut mask: Vec<usize> = (0..n_items).filter(|_| rng.gen_bool(0.2)).collect();
        mask.sort_unstable();
        let relevant: Vec<usize> = (0..n_items)
            .filter(|i| mask.binary_search(i).is_err() && rng.gen_bool(0.3))
            .collect();
        let cutoff = rng.gen_range(1..=10);
        let top = rank_items(ndarray::ArrayView1::from(&scores), &mask, cutoff);
        let expected = brute_top(&scores, &mask, cutoff);
        if top != expected {
            return Err(format!("rank_items instance {case}: {top:?} vs {expected:?}"));
        }
        if relevant.is_empty() {
            if recall_at_n(&top, &relevant).is_some() || ndcg_at_n(&top, &relevant, cutoff).is_some() {
                return Err(format!("instance {case}: metrics defined for an empty target"));
            }
            continue;
        }
        let (r, n) = (
            recall_at_n(&top, &relevant).unwrap(),
            ndcg_at_n(&top, &relevant, cutoff).unwrap(),
        );
        if r != brute_recall(&top, &relevant) || n != brute_ndcg(&top, &relevant, cutoff) {
            return Err(format!(
                "metrics instance {case}: recall {r} ndcg {n} disagree with brute force"
            ));
        }
    }
    Ok(format!(
        "{instances} instances each; max |diff| conv {worst_conv:.1e}, softmax {worst_softmax:.1e}; metrics exact"
    ))
}

#[allow(clippy::approx_constant)]
pub fn spot_values() -> Result<String, String> {
    // One user and two items; rows are entities (user first).
    let reps = |margin: f64| Matrix::from_shape_vec((3, 2), vec![1.0, 0.0, margin, 0.0, 0.0, 0.0]).unwrap();
    let t = [Triplet {
        user: 0,
        pos: 0,
        neg: 1,
    }];
    let at0 = bpr_loss(&reps(0.0), 1, &t);
    let at2 = bpr_loss(&reps(2.0), 1, &t);
    if (at0 - 0.693147).abs() > 1e-6 || (at0 - std::f64::consts::LN_2).abs() > 1e-9 {
        return Err(format!("BPR at margin 0 = {at0}"));
    }
    if (at2 - 0.126928).abs() > 1e-6 || (at2 - (1.0 + (-2.0f64).exp()).ln()).abs() > 1e-9 {
        return Err(format!("BPR at margin 2 = {at2}"));
    }
    let ndcg = ndcg_at_n(&[10, 11, 7], &[7], 20).unwrap();
    if ndcg != 0.5 {
        return Err(format!("NDCG of a single hit at rank 3 = {ndcg}"));
    }
    Ok(format!("BPR(0) = {at0:.9}, BPR(2) = {at2:.9}, NDCG(rank 3) = {ndcg}"))
}

/// K = 1 has no convolution or attention parameters, its representations
/// are the embedding table itself, and its gradients are the MF-BPR ones.
pub fn reduction_check(cases: u64) -> Result<String, String> {
    for seed in 0..cases {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (m, n) = (rng.gen_range(1..=8), rng.gen_range(2..=8));
        let edges = random_edges(m, n, 0.4, &mut rng);
        let graph = BipartiteGraph::from_edges(m, n, &edges).unwrap();
        let positives = positives_by_user(m, &edges);
        let triplets = random_triplets(&positives, n, 5, &mut rng);
        let cfg = ModelConfig::with_total_dim(1, rng.gen_range(1..=8)).unwrap();
        let (model, store) = Model::init(cfg, m, n, seed).unwrap();
        if store.len() != 1 || !model.layer_param_ids().is_empty() || !model.attention_param_ids().is_empty() {
            return Err(format!("seed {seed}: K=1 model has {} parameters", store.len()));
        }
        let table = store.value(model.embedding_id());
        let reps = model.representations(&store, &graph).map_err(|e| e.to_string())?;
        let emb = reps.eval_embeddings();
        if emb.matrix != *table {
            return Err(format!("seed {seed}: eval embeddings differ from the embedding table"));
        }
        for u in 0..m {
            for i in 0..n {
                let mf = table.row(u).dot(&table.row(m + i));
                if emb.score(u, i).unwrap() != mf {
                    return Err(format!("seed {seed}: score({u}, {i}) is not the MF inner product"));
                }
            }
        }
        let mut step = rand::rngs::mock::StepRng::new(0, 0);
        let (grads, _) = batch_gradients(&model, &store, &graph.conv_segments(), &triplets, Mode::Eval, &mut step)
            .map_err(|e| e.to_string())?;
        if grads.len() != 1 {
            return Err(format!("seed {seed}: {} parameters received gradients", grads.len()));
        }
        let mut expected = Matrix::zeros(table.raw_dim());
        let scale = 1.0 / triplets.len() as f64;
        for t in &triplets {
            let (u, i, j) = (t.user, m + t.pos, m + t.neg);
            let x = table.row(u).dot(&table.row(i)) - table.row(u).dot(&table.row(j));
            let coef = -scale / (1.0 + x.exp());
            let diff = &table.row(i) - &table.row(j);
            expected.row_mut(u).scaled_add(coef, &diff);
            expected.row_mut(i).scaled_add(coef, &table.row(u));
            expected.row_mut(j).scaled_add(-coef, &table.row(u));
        }
        let got = grads.get(model.embedding_id()).unwrap();
        let err = (got - &expected).iter().fold(0.0f64, |a, v| a.max(v.abs()));
        if err > 1e-12 {
            return Err(format!("seed {seed}: gradient differs from MF-BPR by {err:e}"));
        }
    }
    Ok(format!(
        "{cases} random K=1 models: no conv/attention params, scores and gradients equal MF-BPR"
    ))
}

/// A 5×5 corpus where user `u` likes items `u` and `u + 1 (mod 5)`.
pub fn smoke_corpus() -> SplitCorpus {
    let pairs: Vec<(usize, usize)> = (0..5).flat_map(|u| [(u, u), (u, (u + 1) % 5)]).collect();
    let corpus = InteractionCorpus::from_ids(5, 5, pairs).unwrap();
    dataio::split(&corpus, 0.0, 0.0, 0).unwrap()
}

pub fn smoke_convergence() -> Result<String, String> {
    let split = smoke_corpus();
    let mut cfg = ModelConfig::with_total_dim(2, 16).unwrap();
    cfg.dropout = 0.1;
    let (model, store) = Model::init(cfg, 5, 5, 7).unwrap();
    let tc = TrainConfig {
        lr: 1e-2,
        seed: 7,
        ..TrainConfig::default()
    };
    let mut trainer = Trainer::new(model, store, &split, tc).map_err(|e| e.to_string())?;
    let mut first = None;
    for epoch in 1..=50 {
        let loss = trainer.train_epoch().map_err(|e| e.to_string())?.loss;
        first.get_or_insert(loss);
        if loss < 0.3 {
            return Ok(format!("loss {:.4} -> {loss:.4} at epoch {epoch}", first.unwrap()));
        }
    }
    Err("loss stayed above 0.3 for 50 epochs".into())
}

/// Settings for the multi-task trend run on ML-100k.
pub struct TrendProtocol {
    pub seeds: Vec<u64>,
    pub tasks: Vec<usize>,
    pub total_dim: usize,
    pub lr: f64,
    pub batch_size: usize,
    pub dropout: f64,
    pub max_epochs: usize,
    pub patience: usize,
}

impl Default for TrendProtocol {
    fn default() -> Self {
        Self {
            seeds: vec![11, 12, 13],
            tasks: vec![1, 2, 4],
            total_dim: 64,
            lr: 5e-3,
            batch_size: 8192,
            dropout: 0.2,
            max_epochs: 200,
            patience: 10,
        }
    }
}

pub fn ml100k_path() -> PathBuf {
    std::env::var_os("PREFRANK_ML100K").map_or_else(|| workspace_root().join("data/ml-100k.tsv"), PathBuf::from)
}

/// Test Recall@20 of the best-validation checkpoint.
pub fn trend_run(split: &SplitCorpus, k: usize, seed: u64, p: &TrendProtocol) -> prefrank::Result<f64> {
    let mut cfg = ModelConfig::with_total_dim(k, p.total_dim)?;
    cfg.dropout = p.dropout;
    let (model, store) = Model::init(cfg, split.num_users(), split.num_items(), seed)?;
    let tc = TrainConfig {
        lr: p.lr,
        batch_size: p.batch_size,
        max_epochs: p.max_epochs,
        patience: p.patience,
        seed: seed.wrapping_add(1),
        ..TrainConfig::default()
    };
    let mut trainer = Trainer::new(model, store, split, tc)?;
    let outcome = fit(&mut trainer, split, |_, _, _| Ok(()))?;
    let report = evaluate(
        &trainer.model,
        &outcome.best,
        trainer.graph(),
        split,
        EvalTarget::Test,
        20,
    )?;
    Ok(report.recall)
}

pub fn multitask_trend(p: &TrendProtocol) -> Verdict {
    let path = ml100k_path();
    if !path.exists() {
        return Verdict::Skip(format!("{} missing; run scripts/fetch-ml100k.sh", path.display()));
    }
    let run = || -> prefrank::Result<String> {
        let raw = dataio::load_interactions(&path, dataio::InputFormat::Pairs)?;
        let corpus = dataio::kcore_filter(&raw, 10)?;
        let split = dataio::split(&corpus, 0.2, 0.125, 2020)?;
        let mut k2_beats_k1 = 0;
        let mut k4_not_above_k2 = 0;
        let mut rows = Vec::new();
        for &seed in &p.seeds {
            let recalls: Vec<f64> = p
                .tasks
                .iter()
                .map(|&k| trend_run(&split, k, seed, p))
                .collect::<prefrank::Result<_>>()?;
            let by_k = |k: usize| recalls[p.tasks.iter().position(|&t| t == k).unwrap()];
            k2_beats_k1 += usize::from(by_k(2) > by_k(1));
            k4_not_above_k2 += usize::from(by_k(4) <= by_k(2));
            rows.push(format!(
                "seed {seed}: {}",
                p.tasks
                    .iter()
                    .zip(&recalls)
                    .map(|(k, r)| format!("K={k} {r:.4}"))
                    .collect::<Vec<_>>()
                    .join(" ")
            ));
        }
        let need = p.seeds.len() / 2 + 1;
        let summary = format!(
            "K2>K1 on {k2_beats_k1}/{n}, K4<=K2 on {k4_not_above_k2}/{n}; {}",
            rows.join("; "),
            n = p.seeds.len()
        );
        if k2_beats_k1 >= need && k4_not_above_k2 >= need {
            Ok(summary)
        } else {
            Err(prefrank::Error::Invalid(summary))
        }
    };
    match run() {
        Ok(s) => Verdict::Pass(s),
        Err(e) => Verdict::Fail(e.to_string()),
    }
}

/// Writes `users × items` random `u<id>\ti<id>` pairs.
pub fn synthetic_pairs(users: usize, items: usize, density: f64, seed: u64) -> String {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = String::new();
    for u in 0..users {
        for i in 0..items {
            if rng.gen_bool(density) {
                out.push_str(&format!("u{u}\ti{i}\n"));
            }
        }
    }
    out
}

pub fn timed<T>(f: impl FnOnce() -> T) -> (T, f64) {
    let start = Instant::now();
    let out = f();
    (out, start.elapsed().as_secs_f64())
}
