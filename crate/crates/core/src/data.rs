//! Interaction datasets: ingestion, the per-user train/validation/test
//! split, and the TSV layouts used to persist them.

use std::collections::{HashMap, HashSet};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::types::{ItemId, UserId};

pub const TRAIN_FILE: &str = "train.tsv";
pub const VALIDATION_FILE: &str = "validation.tsv";
pub const TEST_FILE: &str = "test.tsv";
pub const INDEX_MAP_FILE: &str = "index_map.tsv";
pub const INTERACTIONS_FILE: &str = "interactions.tsv";

/// Layout of an interaction file.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InteractionFormat {
    /// `user_key<TAB>item_key`, `#` comments.
    Tsv,
    /// Header `user,item`, then one pair per row.
    Csv,
}

impl FromStr for InteractionFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "tsv" => Ok(InteractionFormat::Tsv),
            "csv" => Ok(InteractionFormat::Csv),
            other => Err(Error::InvalidConfig(format!("unknown format `{other}`"))),
        }
    }
}

/// Partitions produced by [`InteractionDataset::split`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Partition {
    Train,
    Validation,
    Test,
}

impl Partition {
    pub fn name(self) -> &'static str {
        match self {
            Partition::Train => "train",
            Partition::Validation => "validation",
            Partition::Test => "test",
        }
    }
}

/// Whether validation interactions are withheld from training.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ValidationMode {
    /// Train on `train` only; validation is held out.
    #[default]
    Holdout,
    /// Train on `train ∪ validation`; validation is only monitored.
    MonitorOnly,
}

impl FromStr for ValidationMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "holdout" => Ok(ValidationMode::Holdout),
            "monitor-only" => Ok(ValidationMode::MonitorOnly),
            other => Err(Error::InvalidConfig(format!(
                "unknown validation_mode `{other}`"
            ))),
        }
    }
}

/// Bijection between opaque external keys and dense indices, assigned in
/// first-appearance order.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct KeyIndex {
    keys: Vec<String>,
    lookup: HashMap<String, u32>,
}

impl KeyIndex {
    pub fn new() -> Self {
        Self::default()
    }

    /// Index of `key`, assigning the next free one on first sight.
    pub fn intern(&mut self, key: &str) -> u32 {
        if let Some(&idx) = self.lookup.get(key) {
            return idx;
        }
        let idx = u32::try_from(self.keys.len()).expect("more than u32::MAX keys");
        self.keys.push(key.to_owned());
        self.lookup.insert(key.to_owned(), idx);
        idx
    }

    pub fn get(&self, key: &str) -> Option<u32> {
        self.lookup.get(key).copied()
    }

    pub fn key(&self, index: usize) -> &str {
        &self.keys[index]
    }

    pub fn keys(&self) -> &[String] {
        &self.keys
    }

    pub fn len(&self) -> usize {
        self.keys.len()
    }

    pub fn is_empty(&self) -> bool {
        self.keys.is_empty()
    }

    /// Keys `"{prefix}{i}"` for `i in 0..n`.
    pub fn sequential(prefix: &str, n: usize) -> Self {
        let mut index = Self::new();
        for i in 0..n {
            index.intern(&format!("{prefix}{i}"));
        }
        index
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
struct Partitions {
    train: Vec<(UserId, ItemId)>,
    validation: Vec<(UserId, ItemId)>,
    test: Vec<(UserId, ItemId)>,
    // Per-user sorted item lists.
    train_items: Vec<Vec<ItemId>>,
    validation_items: Vec<Vec<ItemId>>,
    test_items: Vec<Vec<ItemId>>,
    known_items: Vec<Vec<ItemId>>,
}

impl Partitions {
    fn build(
        n_users: usize,
        mut train: Vec<(UserId, ItemId)>,
        mut validation: Vec<(UserId, ItemId)>,
        mut test: Vec<(UserId, ItemId)>,
    ) -> Self {
        train.sort_unstable();
        validation.sort_unstable();
        test.sort_unstable();
        let train_items = per_user(n_users, &train);
        let validation_items = per_user(n_users, &validation);
        let test_items = per_user(n_users, &test);
        let known_items = train_items
            .iter()
            .zip(&validation_items)
            .map(|(t, v)| {
                let mut all: Vec<ItemId> = t.iter().chain(v).copied().collect();
                all.sort_unstable();
                all
            })
            .collect();
        Self {
            train,
            validation,
            test,
            train_items,
            validation_items,
            test_items,
            known_items,
        }
    }
}

fn per_user(n_users: usize, pairs: &[(UserId, ItemId)]) -> Vec<Vec<ItemId>> {
    let mut out = vec![Vec::new(); n_users];
    for &(u, i) in pairs {
        out[u.index()].push(i);
    }
    for items in &mut out {
        items.sort_unstable();
    }
    out
}

/// Parameters of the per-user random split.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitConfig {
    pub train_ratio: f64,
    pub validation_ratio_of_train: f64,
    pub seed: u64,
}

impl Default for SplitConfig {
    fn default() -> Self {
        Self {
            train_ratio: 0.8,
            validation_ratio_of_train: 0.1,
            seed: 0,
        }
    }
}

/// De-duplicated implicit interactions with dense index maps and, once
/// split, disjoint train/validation/test partitions.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct InteractionDataset {
    users: KeyIndex,
    items: KeyIndex,
    interactions: Vec<(UserId, ItemId)>,
    partitions: Option<Partitions>,
}

impl InteractionDataset {
    /// Builds an unsplit dataset over fixed index maps. Duplicate pairs are
    /// collapsed, keeping the first occurrence.
    pub fn from_pairs(
        users: KeyIndex,
        items: KeyIndex,
        pairs: impl IntoIterator<Item = (UserId, ItemId)>,
    ) -> Result<Self> {
        let mut seen = HashSet::new();
        let mut interactions = Vec::new();
        for (u, i) in pairs {
            if u.index() >= users.len() {
                return Err(Error::RowOutOfRange {
                    row: u.index(),
                    rows: users.len(),
                });
            }
            if i.index() >= items.len() {
                return Err(Error::RowOutOfRange {
                    row: i.index(),
                    rows: items.len(),
                });
            }
            if seen.insert((u, i)) {
                interactions.push((u, i));
            }
        }
        if interactions.is_empty() {
            return Err(Error::EmptyDataset);
        }
        Ok(Self {
            users,
            items,
            interactions,
            partitions: None,
        })
    }

    /// Builds an already-split dataset from explicit partitions.
    pub fn from_partitions(
        users: KeyIndex,
        items: KeyIndex,
        train: Vec<(UserId, ItemId)>,
        validation: Vec<(UserId, ItemId)>,
        test: Vec<(UserId, ItemId)>,
    ) -> Result<Self> {
        let all: Vec<_> = train
            .iter()
            .chain(&validation)
            .chain(&test)
            .copied()
            .collect();
        let total = all.len();
        let mut ds = Self::from_pairs(users, items, all)?;
        if ds.interactions.len() != total {
            return Err(Error::InvalidConfig(
                "partitions overlap or contain duplicate pairs".into(),
            ));
        }
        ds.partitions = Some(Partitions::build(ds.n_users(), train, validation, test));
        Ok(ds)
    }

    /// Reads an interaction file.
    pub fn ingest(path: impl AsRef<Path>, format: InteractionFormat) -> Result<Self> {
        let path = path.as_ref();
        let file = File::open(path).map_err(|e| Error::file(path, e))?;
        Self::ingest_reader(BufReader::new(file), format)
    }

    pub fn ingest_reader<R: Read>(reader: R, format: InteractionFormat) -> Result<Self> {
        let mut users = KeyIndex::new();
        let mut items = KeyIndex::new();
        let mut pairs = Vec::new();
        match format {
            InteractionFormat::Tsv => {
                for_each_tsv_pair(BufReader::new(reader), |_, u, i| {
                    pairs.push((UserId(users.intern(u)), ItemId(items.intern(i))));
                    Ok(())
                })?;
            }
            InteractionFormat::Csv => {
                let mut rdr = csv::ReaderBuilder::new()
                    .has_headers(true)
                    .comment(Some(b'#'))
                    .flexible(true)
                    .trim(csv::Trim::All)
                    .from_reader(reader);
                let headers = rdr.headers()?.clone();
                if headers.len() != 2 || &headers[0] != "user" || &headers[1] != "item" {
                    return Err(Error::MalformedLine {
                        line_no: 1,
                        reason: "expected header `user,item`".into(),
                    });
                }
                for record in rdr.records() {
                    let record = record?;
                    let line_no = record.position().map_or(0, |p| p.line() as usize);
                    if record.len() != 2 || record[0].is_empty() || record[1].is_empty() {
                        return Err(Error::MalformedLine {
                            line_no,
                            reason: format!("expected 2 fields, got {}", record.len()),
                        });
                    }
                    for key in [&record[0], &record[1]] {
                        if key.contains(['\t', '\n', '\r']) {
                            return Err(Error::MalformedLine {
                                line_no,
                                reason: "keys may not contain tabs or newlines".into(),
                            });
                        }
                    }
                    pairs.push((
                        UserId(users.intern(&record[0])),
                        ItemId(items.intern(&record[1])),
                    ));
                }
            }
        }
        Self::from_pairs(users, items, pairs)
    }

    pub fn n_users(&self) -> usize {
        self.users.len()
    }

    pub fn n_items(&self) -> usize {
        self.items.len()
    }

    pub fn users(&self) -> &KeyIndex {
        &self.users
    }

    pub fn items(&self) -> &KeyIndex {
        &self.items
    }

    /// All interactions in first-appearance order.
    pub fn interactions(&self) -> &[(UserId, ItemId)] {
        &self.interactions
    }

    pub fn is_split(&self) -> bool {
        self.partitions.is_some()
    }

    fn parts(&self) -> Result<&Partitions> {
        self.partitions.as_ref().ok_or(Error::NotSplit)
    }

    /// Pairs of one partition, sorted by (user, item).
    pub fn partition(&self, which: Partition) -> Result<&[(UserId, ItemId)]> {
        let p = self.parts()?;
        Ok(match which {
            Partition::Train => &p.train,
            Partition::Validation => &p.validation,
            Partition::Test => &p.test,
        })
    }

    /// Sorted items of `user` in one partition.
    pub fn user_items(&self, which: Partition, user: UserId) -> Result<&[ItemId]> {
        let p = self.parts()?;
        let lists = match which {
            Partition::Train => &p.train_items,
            Partition::Validation => &p.validation_items,
            Partition::Test => &p.test_items,
        };
        Ok(&lists[user.index()])
    }

    /// Items a model trained under `mode` has seen as positives for `user`.
    /// These are the exclusion set for negative sampling.
    pub fn training_positives(&self, user: UserId, mode: ValidationMode) -> Result<&[ItemId]> {
        let p = self.parts()?;
        Ok(match mode {
            ValidationMode::Holdout => &p.train_items[user.index()],
            ValidationMode::MonitorOnly => &p.known_items[user.index()],
        })
    }

    /// Per-user training positives for all users under `mode`.
    pub fn training_positive_lists(&self, mode: ValidationMode) -> Result<&[Vec<ItemId>]> {
        let p = self.parts()?;
        Ok(match mode {
            ValidationMode::Holdout => &p.train_items,
            ValidationMode::MonitorOnly => &p.known_items,
        })
    }

    /// Pairs a model is trained on under `mode`.
    pub fn training_pairs(&self, mode: ValidationMode) -> Result<Vec<(UserId, ItemId)>> {
        let p = self.parts()?;
        let mut pairs = p.train.clone();
        if mode == ValidationMode::MonitorOnly {
            pairs.extend_from_slice(&p.validation);
            pairs.sort_unstable();
        }
        Ok(pairs)
    }

    /// Items excluded from the ranking when evaluating `which` for `user`:
    /// training positives for validation, training plus validation
    /// positives for test.
    pub fn evaluation_exclusions(&self, which: Partition, user: UserId) -> Result<&[ItemId]> {
        let p = self.parts()?;
        Ok(match which {
            Partition::Validation | Partition::Train => &p.train_items[user.index()],
            Partition::Test => &p.known_items[user.index()],
        })
    }

    /// Per-user random split.
    ///
    /// Each user's interactions are shuffled; `round_half_up(n_u * (1 -
    /// train_ratio))` go to test (never all of them; users with fewer than
    /// two interactions keep everything in train). Validation is then drawn
    /// uniformly from the pooled training candidates, skipping any pair whose
    /// removal would leave its user without training interactions.
    pub fn split(&self, config: &SplitConfig) -> Result<Self> {
        let SplitConfig {
            train_ratio,
            validation_ratio_of_train: val_ratio,
            seed,
        } = *config;
        if !(train_ratio > 0.0 && train_ratio < 1.0) {
            return Err(Error::InvalidRatio(format!(
                "train_ratio must lie in (0, 1), got {train_ratio}"
            )));
        }
        if !(0.0..1.0).contains(&val_ratio) {
            return Err(Error::InvalidRatio(format!(
                "validation_ratio_of_train must lie in [0, 1), got {val_ratio}"
            )));
        }

        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut by_user: Vec<Vec<ItemId>> = vec![Vec::new(); self.n_users()];
        for &(u, i) in &self.interactions {
            by_user[u.index()].push(i);
        }

        let mut test = Vec::new();
        let mut candidates = Vec::new();
        let mut remaining = vec![0usize; self.n_users()];
        for (u, items) in by_user.iter_mut().enumerate() {
            items.shuffle(&mut rng);
            let n_test = test_size(items.len(), train_ratio);
            let user = UserId::from(u);
            test.extend(items[..n_test].iter().map(|&i| (user, i)));
            candidates.extend(items[n_test..].iter().map(|&i| (user, i)));
            remaining[u] = items.len() - n_test;
        }

        let n_val = round_half_up(candidates.len() as f64 * val_ratio);
        let mut order: Vec<usize> = (0..candidates.len()).collect();
        order.shuffle(&mut rng);
        let mut is_val = vec![false; candidates.len()];
        let mut taken = 0;
        for idx in order {
            if taken == n_val {
                break;
            }
            let u = candidates[idx].0.index();
            if remaining[u] > 1 {
                remaining[u] -= 1;
                is_val[idx] = true;
                taken += 1;
            }
        }
        let (validation, train): (Vec<_>, Vec<_>) = candidates
            .into_iter()
            .zip(is_val)
            .partition(|&(_, v)| v);
        let validation = validation.into_iter().map(|(p, _)| p).collect();
        let train = train.into_iter().map(|(p, _)| p).collect();

        Ok(Self {
            users: self.users.clone(),
            items: self.items.clone(),
            interactions: self.interactions.clone(),
            partitions: Some(Partitions::build(self.n_users(), train, validation, test)),
        })
    }

    /// Writes `interactions.tsv` with external keys, in first-appearance order.
    pub fn write_interactions(&self, path: impl AsRef<Path>) -> Result<()> {
        self.write_pairs(path, &self.interactions)
    }

    fn write_pairs(&self, path: impl AsRef<Path>, pairs: &[(UserId, ItemId)]) -> Result<()> {
        let path = path.as_ref();
        let file = File::create(path).map_err(|e| Error::file(path, e))?;
        let mut w = BufWriter::new(file);
        for &(u, i) in pairs {
            writeln!(
                w,
                "{}\t{}",
                self.users.key(u.index()),
                self.items.key(i.index())
            )?;
        }
        w.flush()?;
        Ok(())
    }

    /// Writes `external_key<TAB>dense_index<TAB>kind` for users then items.
    pub fn write_index_map(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = File::create(path).map_err(|e| Error::file(path, e))?;
        let mut w = BufWriter::new(file);
        for (idx, key) in self.users.keys().iter().enumerate() {
            writeln!(w, "{key}\t{idx}\tuser")?;
        }
        for (idx, key) in self.items.keys().iter().enumerate() {
            writeln!(w, "{key}\t{idx}\titem")?;
        }
        w.flush()?;
        Ok(())
    }

    /// Writes the three partition files and `index_map.tsv` into `dir`.
    pub fn write_split(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir).map_err(|e| Error::file(dir, e))?;
        let p = self.parts()?;
        self.write_pairs(dir.join(TRAIN_FILE), &p.train)?;
        self.write_pairs(dir.join(VALIDATION_FILE), &p.validation)?;
        self.write_pairs(dir.join(TEST_FILE), &p.test)?;
        self.write_index_map(dir.join(INDEX_MAP_FILE))
    }

    /// Loads a directory written by [`write_split`](Self::write_split).
    pub fn load_split(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref();
        let (users, items) = read_index_map(dir.join(INDEX_MAP_FILE))?;
        let train = read_keyed_pairs(dir.join(TRAIN_FILE), &users, &items)?;
        let validation = read_keyed_pairs(dir.join(VALIDATION_FILE), &users, &items)?;
        let test = read_keyed_pairs(dir.join(TEST_FILE), &users, &items)?;
        Self::from_partitions(users, items, train, validation, test)
    }

    /// Reads canonical interactions, honouring an `index_map.tsv` next to
    /// the file when one exists.
    pub fn load_canonical(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let map = path
            .parent()
            .map(|p| p.join(INDEX_MAP_FILE))
            .filter(|p| p.exists());
        match map {
            Some(map) => {
                let (users, items) = read_index_map(map)?;
                let pairs = read_keyed_pairs(path, &users, &items)?;
                Self::from_pairs(users, items, pairs)
            }
            None => Self::ingest(path, InteractionFormat::Tsv),
        }
    }
}

/// `n_u * (1 - train_ratio)` rounded half-up, clamped so at least one
/// interaction stays in train. Users with `n_u < 2` get no test items.
pub fn test_size(n_u: usize, train_ratio: f64) -> usize {
    if n_u < 2 {
        return 0;
    }
    round_half_up(n_u as f64 * (1.0 - train_ratio)).min(n_u - 1)
}

fn round_half_up(x: f64) -> usize {
    // Absorbs representation error such as 10 * 0.2 = 1.9999999999999996.
    (x + 0.5 + 1e-9).floor().max(0.0) as usize
}

fn for_each_tsv_pair<R: BufRead>(
    reader: R,
    mut f: impl FnMut(usize, &str, &str) -> Result<()>,
) -> Result<()> {
    for (n, line) in reader.lines().enumerate() {
        let line = line?;
        let line_no = n + 1;
        let line = line.trim_end_matches('\r');
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        let mut fields = line.split('\t');
        let (Some(u), Some(i), None) = (fields.next(), fields.next(), fields.next()) else {
            return Err(Error::MalformedLine {
                line_no,
                reason: "expected `user_key<TAB>item_key`".into(),
            });
        };
        if u.is_empty() || i.is_empty() {
            return Err(Error::MalformedLine {
                line_no,
                reason: "empty key".into(),
            });
        }
        f(line_no, u, i)?;
    }
    Ok(())
}

fn read_keyed_pairs(
    path: impl AsRef<Path>,
    users: &KeyIndex,
    items: &KeyIndex,
) -> Result<Vec<(UserId, ItemId)>> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::file(path, e))?;
    let mut pairs = Vec::new();
    for_each_tsv_pair(BufReader::new(file), |_, u, i| {
        let uid = users.get(u).ok_or_else(|| Error::UnknownKey {
            kind: "user",
            key: u.to_owned(),
        })?;
        let iid = items.get(i).ok_or_else(|| Error::UnknownKey {
            kind: "item",
            key: i.to_owned(),
        })?;
        pairs.push((UserId(uid), ItemId(iid)));
        Ok(())
    })?;
    Ok(pairs)
}

/// Reads `index_map.tsv` into user and item key indices.
pub fn read_index_map(path: impl AsRef<Path>) -> Result<(KeyIndex, KeyIndex)> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::file(path, e))?;
    let mut users: Vec<(usize, String)> = Vec::new();
    let mut items: Vec<(usize, String)> = Vec::new();
    for (n, line) in BufReader::new(file).lines().enumerate() {
        let line = line?;
        let line_no = n + 1;
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = line.trim_end_matches('\r').split('\t').collect();
        let malformed = |reason: &str| Error::MalformedLine {
            line_no,
            reason: reason.to_owned(),
        };
        if fields.len() != 3 {
            return Err(malformed("expected `key<TAB>index<TAB>kind`"));
        }
        let idx: usize = fields[1].parse().map_err(|_| malformed("bad index"))?;
        match fields[2] {
            "user" => users.push((idx, fields[0].to_owned())),
            "item" => items.push((idx, fields[0].to_owned())),
            _ => return Err(malformed("kind must be `user` or `item`")),
        }
    }
    Ok((dense_from(users)?, dense_from(items)?))
}

fn dense_from(mut entries: Vec<(usize, String)>) -> Result<KeyIndex> {
    entries.sort_by_key(|(idx, _)| *idx);
    let mut index = KeyIndex::new();
    for (expected, (idx, key)) in entries.iter().enumerate() {
        if *idx != expected || index.intern(key) as usize != expected {
            return Err(Error::MalformedLine {
                line_no: 0,
                reason: format!("index map is not a dense bijection at `{key}`"),
            });
        }
    }
    Ok(index)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy(n_users: usize, per_user: usize) -> InteractionDataset {
        let users = KeyIndex::sequential("u", n_users);
        let items = KeyIndex::sequential("i", per_user.max(1) * 2);
        let pairs = (0..n_users).flat_map(|u| {
            (0..per_user).map(move |k| (UserId::from(u), ItemId::from((u + k) % (per_user * 2))))
        });
        InteractionDataset::from_pairs(users, items, pairs).unwrap()
    }

    #[test]
    fn duplicate_pair_is_collapsed() {
        let text = "u1\ti1\nu1\ti2\nu1\ti1\n";
        let ds = InteractionDataset::ingest_reader(text.as_bytes(), InteractionFormat::Tsv).unwrap();
        assert_eq!(ds.interactions().len(), 2);
        assert_eq!(ds.n_users(), 1);
        assert_eq!(ds.n_items(), 2);
    }

    #[test]
    fn missing_item_is_malformed() {
        let text = "# header\nu0\ti0\nu1\n";
        let err = InteractionDataset::ingest_reader(text.as_bytes(), InteractionFormat::Tsv)
            .unwrap_err();
        assert!(matches!(err, Error::MalformedLine { line_no: 3, .. }), "{err}");
    }

    #[test]
    fn comments_only_is_empty() {
        let err = InteractionDataset::ingest_reader("# a\n\n".as_bytes(), InteractionFormat::Tsv)
            .unwrap_err();
        assert!(matches!(err, Error::EmptyDataset));
    }

    #[test]
    fn first_appearance_indices() {
        let text = "b\tx\na\ty\nb\tz\n";
        let ds = InteractionDataset::ingest_reader(text.as_bytes(), InteractionFormat::Tsv).unwrap();
        assert_eq!(ds.users().get("b"), Some(0));
        assert_eq!(ds.users().get("a"), Some(1));
        assert_eq!(ds.items().keys(), &["x", "y", "z"]);
    }

    #[test]
    fn csv_variant() {
        let text = "user,item\nu1,i1\nu2,i1\n";
        let ds = InteractionDataset::ingest_reader(text.as_bytes(), InteractionFormat::Csv).unwrap();
        assert_eq!(ds.interactions().len(), 2);
        let bad = "usr,itm\nu1,i1\n";
        assert!(InteractionDataset::ingest_reader(bad.as_bytes(), InteractionFormat::Csv).is_err());
        let short = "user,item\nu1\n";
        assert!(matches!(
            InteractionDataset::ingest_reader(short.as_bytes(), InteractionFormat::Csv),
            Err(Error::MalformedLine { .. })
        ));
    }

    #[test]
    fn ten_interaction_user() {
        let ds = toy(1, 10);
        let split = ds
            .split(&SplitConfig {
                train_ratio: 0.8,
                validation_ratio_of_train: 0.1,
                seed: 3,
            })
            .unwrap();
        let u = UserId(0);
        assert_eq!(split.user_items(Partition::Test, u).unwrap().len(), 2);
        let val = split.user_items(Partition::Validation, u).unwrap().len();
        let train = split.user_items(Partition::Train, u).unwrap().len();
        assert_eq!(train + val, 8);
        assert_eq!(val, 1);
    }

    #[test]
    fn single_interaction_user_stays_in_train() {
        let ds = toy(1, 1);
        let split = ds.split(&SplitConfig::default()).unwrap();
        assert_eq!(split.partition(Partition::Train).unwrap().len(), 1);
        assert!(split.partition(Partition::Test).unwrap().is_empty());
        assert!(split.partition(Partition::Validation).unwrap().is_empty());
    }

    #[test]
    fn split_is_deterministic() {
        let ds = toy(30, 7);
        let cfg = SplitConfig {
            seed: 11,
            ..SplitConfig::default()
        };
        assert_eq!(ds.split(&cfg).unwrap(), ds.split(&cfg).unwrap());
        let other = ds
            .split(&SplitConfig {
                seed: 12,
                ..cfg
            })
            .unwrap();
        assert_ne!(ds.split(&cfg).unwrap(), other);
    }

    #[test]
    fn rejects_bad_ratios() {
        let ds = toy(2, 4);
        for (t, v) in [(0.0, 0.1), (1.0, 0.1), (0.8, 1.0), (0.8, -0.1)] {
            let cfg = SplitConfig {
                train_ratio: t,
                validation_ratio_of_train: v,
                seed: 0,
            };
            assert!(matches!(ds.split(&cfg), Err(Error::InvalidRatio(_))));
        }
    }

    #[test]
    fn unsplit_access_fails() {
        let ds = toy(2, 4);
        assert!(matches!(ds.partition(Partition::Train), Err(Error::NotSplit)));
    }

    #[test]
    fn test_size_rounding() {
        assert_eq!(test_size(10, 0.8), 2);
        assert_eq!(test_size(1, 0.8), 0);
        assert_eq!(test_size(2, 0.8), 0); // 0.4
        assert_eq!(test_size(3, 0.8), 1); // 0.6
        assert_eq!(test_size(7, 0.8), 1); // 1.4
        assert_eq!(test_size(8, 0.8), 2); // 1.6
        assert_eq!(test_size(2, 0.1), 1); // 1.8 clamped to n - 1
    }

    #[test]
    fn split_roundtrips_through_files() {
        let ds = toy(12, 6).split(&SplitConfig::default()).unwrap();
        let dir = tempfile::tempdir().unwrap();
        ds.write_split(dir.path()).unwrap();
        let back = InteractionDataset::load_split(dir.path()).unwrap();
        for p in [Partition::Train, Partition::Validation, Partition::Test] {
            assert_eq!(back.partition(p).unwrap(), ds.partition(p).unwrap());
        }
        assert_eq!(back.users(), ds.users());
        assert_eq!(back.items(), ds.items());
    }

    proptest::proptest! {
        #[test]
        fn split_is_a_partition(n_users in 1usize..25, per in 1usize..15, seed in 0u64..1000) {
            let ds = toy(n_users, per);
            let s = ds.split(&SplitConfig { seed, ..SplitConfig::default() }).unwrap();
            let train = s.partition(Partition::Train).unwrap();
            let val = s.partition(Partition::Validation).unwrap();
            let test = s.partition(Partition::Test).unwrap();
            proptest::prop_assert_eq!(train.len() + val.len() + test.len(), ds.interactions().len());
            let mut all: Vec<_> = train.iter().chain(val).chain(test).copied().collect();
            all.sort_unstable();
            let mut expected = ds.interactions().to_vec();
            expected.sort_unstable();
            proptest::prop_assert_eq!(all, expected);
            for u in 0..n_users {
                let u = UserId::from(u);
                let tr = s.training_positives(u, ValidationMode::Holdout).unwrap();
                for p in [Partition::Validation, Partition::Test] {
                    for i in s.user_items(p, u).unwrap() {
                        proptest::prop_assert!(tr.binary_search(i).is_err());
                    }
                }
                if !s.user_items(Partition::Test, u).unwrap().is_empty() {
                    proptest::prop_assert!(!tr.is_empty());
                }
            }
        }
    }
}
