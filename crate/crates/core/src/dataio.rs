//! Interaction ingestion, k-core filtering, per-user splitting and the
//! canonical corpus file.
//!
//! Raw files come in two layouts:
//!
//! - pairs: `user_key<whitespace>item_key` on every line;
//! - adjacency: `user_key item_key item_key ...` on every line.
//!
//! The canonical corpus file is line oriented text:
//!
//! ```text
//! PREFRANK-CORPUS v1
//! seed <u64>
//! users <m>
//! <user key, one per line, in id order>
//! items <n>
//! <item key, one per line, in id order>
//! interactions <count>
//! <user id> <item id> <T|V|S>
//! ```
//!
//! Interaction lines are sorted by `(user, item)`. `T`, `V` and `S` mark
//! train, validation and test membership.

use std::collections::{HashMap, HashSet, VecDeque};
use std::fmt::Write as _;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

pub const CORPUS_MAGIC: &str = "PREFRANK-CORPUS";
pub const CORPUS_VERSION: &str = "v1";

#[derive(Debug, Error)]
pub enum DataError {
    #[error("line {line}: {message}")]
    Malformed { line: usize, message: String },
    #[error("input contains no interactions")]
    Empty,
    #[error("corpus eliminated by k-core (min_core = {min_core})")]
    EliminatedByKCore { min_core: usize },
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("not a corpus file: missing '{CORPUS_MAGIC}' header")]
    MissingMagic,
    #[error("unsupported corpus version '{found}', expected '{CORPUS_VERSION}'")]
    VersionMismatch { found: String },
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

fn malformed(line: usize, message: impl Into<String>) -> DataError {
    DataError::Malformed {
        line,
        message: message.into(),
    }
}

/// One observed (user, item) interaction with its original keys.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct RawInteraction {
    pub user_key: String,
    pub item_key: String,
}

impl RawInteraction {
    pub fn new(user_key: impl Into<String>, item_key: impl Into<String>) -> Self {
        Self {
            user_key: user_key.into(),
            item_key: item_key.into(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InputFormat {
    /// `user item` per line.
    Pairs,
    /// `user item item ...` per line.
    Adjacency,
}

impl FromStr for InputFormat {
    type Err = DataError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "pairs" | "pair-per-line" => Ok(InputFormat::Pairs),
            "adjacency" | "adjacency-line" => Ok(InputFormat::Adjacency),
            other => Err(DataError::InvalidArgument(format!(
                "unknown input format '{other}' (expected 'pairs' or 'adjacency')"
            ))),
        }
    }
}

/// Parses raw interaction text. Blank lines are skipped; line numbers in
/// errors are 1-based.
pub fn parse_interactions(text: &str, format: InputFormat) -> Result<Vec<RawInteraction>, DataError> {
    let mut out = Vec::new();
    for (idx, line) in text.lines().enumerate() {
        let lineno = idx + 1;
        let mut tokens = line.split_whitespace();
        let Some(user) = tokens.next() else {
            continue;
        };
        match format {
            InputFormat::Pairs => {
                let item = tokens
                    .next()
                    .ok_or_else(|| malformed(lineno, "expected 'user item', found one token"))?;
                if tokens.next().is_some() {
                    return Err(malformed(lineno, "expected 'user item', found extra tokens"));
                }
                out.push(RawInteraction::new(user, item));
            }
            InputFormat::Adjacency => {
                for item in tokens {
                    out.push(RawInteraction::new(user, item));
                }
            }
        }
    }
    if out.is_empty() {
        return Err(DataError::Empty);
    }
    Ok(out)
}

pub fn load_interactions(path: &Path, format: InputFormat) -> Result<Vec<RawInteraction>, DataError> {
    let text = fs::read_to_string(path).map_err(|source| DataError::Io {
        path: path.display().to_string(),
        source,
    })?;
    parse_interactions(&text, format)
}

/// A deduplicated, densely indexed interaction set.
///
/// User ids cover `0..m`, item ids cover `0..n`, and `interactions` is
/// sorted by `(user, item)` without duplicates.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct InteractionCorpus {
    user_keys: Vec<String>,
    item_keys: Vec<String>,
    user_ids: HashMap<String, usize>,
    item_ids: HashMap<String, usize>,
    interactions: Vec<(usize, usize)>,
}

impl InteractionCorpus {
    /// Builds a corpus from explicit keys and id pairs.
    pub fn new(
        user_keys: Vec<String>,
        item_keys: Vec<String>,
        mut interactions: Vec<(usize, usize)>,
    ) -> Result<Self, DataError> {
        let user_ids = index_keys(&user_keys, "user")?;
        let item_ids = index_keys(&item_keys, "item")?;
        interactions.sort_unstable();
        interactions.dedup();
        if let Some(&(u, i)) = interactions
            .iter()
            .find(|&&(u, i)| u >= user_keys.len() || i >= item_keys.len())
        {
            return Err(DataError::InvalidArgument(format!(
                "interaction ({u}, {i}) out of range for {} users and {} items",
                user_keys.len(),
                item_keys.len()
            )));
        }
        Ok(Self {
            user_keys,
            item_keys,
            user_ids,
            item_ids,
            interactions,
        })
    }

    /// Convenience constructor with generated keys `u<id>` and `i<id>`.
    pub fn from_ids(num_users: usize, num_items: usize, interactions: Vec<(usize, usize)>) -> Result<Self, DataError> {
        let users = (0..num_users).map(|u| format!("u{u}")).collect();
        let items = (0..num_items).map(|i| format!("i{i}")).collect();
        Self::new(users, items, interactions)
    }

    pub fn num_users(&self) -> usize {
        self.user_keys.len()
    }

    pub fn num_items(&self) -> usize {
        self.item_keys.len()
    }

    pub fn interactions(&self) -> &[(usize, usize)] {
        &self.interactions
    }

    pub fn user_key(&self, user: usize) -> Option<&str> {
        self.user_keys.get(user).map(String::as_str)
    }

    pub fn item_key(&self, item: usize) -> Option<&str> {
        self.item_keys.get(item).map(String::as_str)
    }

    pub fn user_id(&self, key: &str) -> Option<usize> {
        self.user_ids.get(key).copied()
    }

    pub fn item_id(&self, key: &str) -> Option<usize> {
        self.item_ids.get(key).copied()
    }

    pub fn stats(&self) -> CorpusStats {
        CorpusStats {
            users: self.num_users(),
            items: self.num_items(),
            interactions: self.interactions.len(),
        }
    }

    /// Item lists per user, each sorted ascending.
    pub fn items_by_user(&self) -> Vec<Vec<usize>> {
        let mut out = vec![Vec::new(); self.num_users()];
        for &(u, i) in &self.interactions {
            out[u].push(i);
        }
        out
    }
}

fn index_keys(keys: &[String], what: &str) -> Result<HashMap<String, usize>, DataError> {
    let mut map = HashMap::with_capacity(keys.len());
    for (id, key) in keys.iter().enumerate() {
        if key.is_empty() || key.chars().any(char::is_whitespace) {
            return Err(DataError::InvalidArgument(format!(
                "{what} key {key:?} must be non-empty and free of whitespace"
            )));
        }
        if map.insert(key.clone(), id).is_some() {
            return Err(DataError::InvalidArgument(format!("duplicate {what} key {key:?}")));
        }
    }
    Ok(map)
}

/// Table-style summary of a corpus.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CorpusStats {
    pub users: usize,
    pub items: usize,
    pub interactions: usize,
}

impl CorpusStats {
    /// `|interactions| / (m · n)`.
    pub fn density(&self) -> f64 {
        self.interactions as f64 / (self.users as f64 * self.items as f64)
    }
}

/// Deduplicates `raw` and peels users and items with fewer than `min_core`
/// interactions until no more can be removed.
///
/// Surviving users and items get dense ids in order of first appearance of
/// their key in `raw`.
pub fn kcore_filter(raw: &[RawInteraction], min_core: usize) -> Result<InteractionCorpus, DataError> {
    if min_core == 0 {
        return Err(DataError::InvalidArgument("min_core must be at least 1".into()));
    }
    if raw.is_empty() {
        return Err(DataError::Empty);
    }

    let mut user_keys: Vec<&str> = Vec::new();
    let mut item_keys: Vec<&str> = Vec::new();
    let mut user_lookup: HashMap<&str, usize> = HashMap::new();
    let mut item_lookup: HashMap<&str, usize> = HashMap::new();
    let mut seen: HashSet<(usize, usize)> = HashSet::with_capacity(raw.len());
    let mut edges: Vec<(usize, usize)> = Vec::with_capacity(raw.len());
    for r in raw {
        let u = *user_lookup.entry(r.user_key.as_str()).or_insert_with(|| {
            user_keys.push(r.user_key.as_str());
            user_keys.len() - 1
        });
        let i = *item_lookup.entry(r.item_key.as_str()).or_insert_with(|| {
            item_keys.push(r.item_key.as_str());
            item_keys.len() - 1
        });
        if seen.insert((u, i)) {
            edges.push((u, i));
        }
    }

    let m = user_keys.len();
    let n = item_keys.len();
    // Entities are users 0..m followed by items m..m+n.
    let mut adj: Vec<Vec<usize>> = vec![Vec::new(); m + n];
    for &(u, i) in &edges {
        adj[u].push(m + i);
        adj[m + i].push(u);
    }
    let mut degree: Vec<usize> = adj.iter().map(Vec::len).collect();
    let mut alive = vec![true; m + n];
    let mut queue: VecDeque<usize> = (0..m + n).filter(|&e| degree[e] < min_core).collect();
    let mut queued: Vec<bool> = degree.iter().map(|&d| d < min_core).collect();
    while let Some(e) = queue.pop_front() {
        alive[e] = false;
        for &nb in &adj[e] {
            if alive[nb] {
                degree[nb] -= 1;
                if degree[nb] < min_core && !queued[nb] {
                    queued[nb] = true;
                    queue.push_back(nb);
                }
            }
        }
    }

    let mut user_remap = vec![usize::MAX; m];
    let mut kept_users = Vec::new();
    for u in 0..m {
        if alive[u] {
            user_remap[u] = kept_users.len();
            kept_users.push(user_keys[u].to_string());
        }
    }
    let mut item_remap = vec![usize::MAX; n];
    let mut kept_items = Vec::new();
    for i in 0..n {
        if alive[m + i] {
            item_remap[i] = kept_items.len();
            kept_items.push(item_keys[i].to_string());
        }
    }
    let interactions: Vec<(usize, usize)> = edges
        .iter()
        .filter(|&&(u, i)| alive[u] && alive[m + i])
        .map(|&(u, i)| (user_remap[u], item_remap[i]))
        .collect();
    if interactions.is_empty() {
        return Err(DataError::EliminatedByKCore { min_core });
    }
    InteractionCorpus::new(kept_users, kept_items, interactions)
}

/// Split membership of one interaction.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Split {
    Train,
    Validation,
    Test,
}

impl Split {
    pub fn tag(self) -> char {
        match self {
            Split::Train => 'T',
            Split::Validation => 'V',
            Split::Test => 'S',
        }
    }

    pub fn from_tag(tag: &str) -> Option<Self> {
        match tag {
            "T" => Some(Split::Train),
            "V" => Some(Split::Validation),
            "S" => Some(Split::Test),
            _ => None,
        }
    }
}

/// A corpus with every interaction assigned to train, validation or test.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SplitCorpus {
    corpus: InteractionCorpus,
    membership: Vec<Split>,
    seed: u64,
}

impl SplitCorpus {
    /// `membership[k]` is the split of `corpus.interactions()[k]`.
    pub fn new(corpus: InteractionCorpus, membership: Vec<Split>, seed: u64) -> Result<Self, DataError> {
        if membership.len() != corpus.interactions().len() {
            return Err(DataError::InvalidArgument(format!(
                "membership has {} entries for {} interactions",
                membership.len(),
                corpus.interactions().len()
            )));
        }
        Ok(Self {
            corpus,
            membership,
            seed,
        })
    }

    pub fn corpus(&self) -> &InteractionCorpus {
        &self.corpus
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn num_users(&self) -> usize {
        self.corpus.num_users()
    }

    pub fn num_items(&self) -> usize {
        self.corpus.num_items()
    }

    pub fn membership(&self) -> &[Split] {
        &self.membership
    }

    pub fn pairs(&self, split: Split) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.corpus
            .interactions()
            .iter()
            .zip(&self.membership)
            .filter(move |(_, &s)| s == split)
            .map(|(&p, _)| p)
    }

    pub fn train(&self) -> Vec<(usize, usize)> {
        self.pairs(Split::Train).collect()
    }

    pub fn validation(&self) -> Vec<(usize, usize)> {
        self.pairs(Split::Validation).collect()
    }

    pub fn test(&self) -> Vec<(usize, usize)> {
        self.pairs(Split::Test).collect()
    }

    /// Per-user sorted item lists restricted to the given splits.
    pub fn items_by_user(&self, splits: &[Split]) -> Vec<Vec<usize>> {
        let mut out = vec![Vec::new(); self.num_users()];
        for (&(u, i), s) in self.corpus.interactions().iter().zip(&self.membership) {
            if splits.contains(s) {
                out[u].push(i);
            }
        }
        out
    }

    /// Moves every validation interaction into train.
    pub fn merge_validation_into_train(&self) -> SplitCorpus {
        let membership = self
            .membership
            .iter()
            .map(|&s| if s == Split::Validation { Split::Train } else { s })
            .collect();
        SplitCorpus {
            corpus: self.corpus.clone(),
            membership,
            seed: self.seed,
        }
    }
}

/// Number of test and validation items for a user with `degree` items.
pub fn split_counts(degree: usize, test_frac: f64, valid_frac: f64) -> (usize, usize) {
    let mut test = (test_frac * degree as f64).floor() as usize;
    if test_frac > 0.0 && degree >= 2 {
        test = test.max(1);
    }
    test = test.min(degree.saturating_sub(1));
    let rest = degree - test;
    let valid = ((valid_frac * rest as f64).round() as usize).min(rest.saturating_sub(1));
    (test, valid)
}

/// Assigns each user's items to test, validation and train uniformly at
/// random. Every user draws from its own stream of a generator seeded with
/// `seed`, so the result does not depend on iteration order.
pub fn split(corpus: &InteractionCorpus, test_frac: f64, valid_frac: f64, seed: u64) -> Result<SplitCorpus, DataError> {
    for (name, f) in [("test_frac", test_frac), ("valid_frac", valid_frac)] {
        if !(0.0..1.0).contains(&f) {
            return Err(DataError::InvalidArgument(format!(
                "{name} must lie in [0, 1), got {f}"
            )));
        }
    }
    let mut membership = vec![Split::Train; corpus.interactions().len()];
    let mut start = 0;
    let interactions = corpus.interactions();
    while start < interactions.len() {
        let user = interactions[start].0;
        let end = start + interactions[start..].iter().take_while(|p| p.0 == user).count();
        let degree = end - start;
        let (n_test, n_valid) = split_counts(degree, test_frac, valid_frac);

        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(user as u64);
        let mut order: Vec<usize> = (start..end).collect();
        order.shuffle(&mut rng);
        for &k in &order[..n_test] {
            membership[k] = Split::Test;
        }
        for &k in &order[n_test..n_test + n_valid] {
            membership[k] = Split::Validation;
        }
        start = end;
    }
    SplitCorpus::new(corpus.clone(), membership, seed)
}

/// Serializes a split corpus into the canonical text form.
pub fn encode_corpus(split: &SplitCorpus) -> String {
    let corpus = split.corpus();
    let mut out = String::new();
    let _ = writeln!(out, "{CORPUS_MAGIC} {CORPUS_VERSION}");
    let _ = writeln!(out, "seed {}", split.seed());
    let _ = writeln!(out, "users {}", corpus.num_users());
    for key in &corpus.user_keys {
        out.push_str(key);
        out.push('\n');
    }
    let _ = writeln!(out, "items {}", corpus.num_items());
    for key in &corpus.item_keys {
        out.push_str(key);
        out.push('\n');
    }
    let _ = writeln!(out, "interactions {}", corpus.interactions().len());
    for (&(u, i), s) in corpus.interactions().iter().zip(split.membership()) {
        let _ = writeln!(out, "{u} {i} {}", s.tag());
    }
    out
}

struct LineReader<'a> {
    lines: std::iter::Enumerate<std::str::Lines<'a>>,
}

impl<'a> LineReader<'a> {
    fn next(&mut self) -> Result<(usize, &'a str), DataError> {
        self.lines
            .next()
            .map(|(idx, line)| (idx + 1, line))
            .ok_or_else(|| malformed(0, "unexpected end of corpus file"))
    }

    fn counted(&mut self, label: &str) -> Result<(usize, u64), DataError> {
        let (lineno, line) = self.next()?;
        let mut tokens = line.split(' ');
        match (tokens.next(), tokens.next(), tokens.next()) {
            (Some(l), Some(value), None) if l == label => value
                .parse::<u64>()
                .map(|v| (lineno, v))
                .map_err(|_| malformed(lineno, format!("invalid {label} value {value:?}"))),
            _ => Err(malformed(lineno, format!("expected '{label} <count>'"))),
        }
    }
}

/// Parses the canonical text form produced by [`encode_corpus`].
pub fn decode_corpus(text: &str) -> Result<SplitCorpus, DataError> {
    let mut reader = LineReader {
        lines: text.lines().enumerate(),
    };
    let (_, header) = reader.next().map_err(|_| DataError::MissingMagic)?;
    let version = header
        .strip_prefix(CORPUS_MAGIC)
        .and_then(|rest| rest.strip_prefix(' '))
        .ok_or(DataError::MissingMagic)?;
    if version != CORPUS_VERSION {
        return Err(DataError::VersionMismatch {
            found: version.to_string(),
        });
    }
    let (_, seed) = reader.counted("seed")?;

    let mut read_keys = |label: &str| -> Result<Vec<String>, DataError> {
        let (_, count) = reader.counted(label)?;
        let mut keys = Vec::new();
        for _ in 0..count {
            let (lineno, line) = reader.next()?;
            if line.is_empty() || line.chars().any(char::is_whitespace) {
                return Err(malformed(lineno, format!("invalid key {line:?}")));
            }
            keys.push(line.to_string());
        }
        Ok(keys)
    };
    let user_keys = read_keys("users")?;
    let item_keys = read_keys("items")?;

    let (count_line, count) = reader.counted("interactions")?;
    let mut rows: Vec<((usize, usize), Split)> = Vec::new();
    for _ in 0..count {
        let (lineno, line) = reader.next()?;
        let mut tokens = line.split(' ');
        let (Some(u), Some(i), Some(tag), None) = (tokens.next(), tokens.next(), tokens.next(), tokens.next()) else {
            return Err(malformed(lineno, "expected '<user> <item> <T|V|S>'"));
        };
        let u: usize = u
            .parse()
            .map_err(|_| malformed(lineno, format!("invalid user id {u:?}")))?;
        let i: usize = i
            .parse()
            .map_err(|_| malformed(lineno, format!("invalid item id {i:?}")))?;
        if u >= user_keys.len() || i >= item_keys.len() {
            return Err(malformed(lineno, format!("interaction ({u}, {i}) out of range")));
        }
        let split = Split::from_tag(tag).ok_or_else(|| malformed(lineno, format!("invalid split tag {tag:?}")))?;
        rows.push(((u, i), split));
    }
    if let Some((lineno, line)) = reader.lines.next() {
        if !line.is_empty() || reader.lines.next().is_some() {
            return Err(malformed(lineno + 1, "trailing content after interactions"));
        }
    }
    rows.sort_unstable_by_key(|r| r.0);
    if rows.windows(2).any(|w| w[0].0 == w[1].0) {
        return Err(malformed(count_line, "duplicate interaction"));
    }
    let (pairs, membership): (Vec<_>, Vec<_>) = rows.into_iter().unzip();
    let corpus = InteractionCorpus::new(user_keys, item_keys, pairs)?;
    SplitCorpus::new(corpus, membership, seed)
}

pub fn write_corpus(path: &Path, split: &SplitCorpus) -> Result<(), DataError> {
    fs::write(path, encode_corpus(split)).map_err(|source| DataError::Io {
        path: path.display().to_string(),
        source,
    })
}

pub fn read_corpus(path: &Path) -> Result<SplitCorpus, DataError> {
    let text = fs::read_to_string(path).map_err(|source| DataError::Io {
        path: path.display().to_string(),
        source,
    })?;
    decode_corpus(&text)
}
