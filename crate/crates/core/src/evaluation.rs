//! Full-catalog top-K evaluation (Recall@K, NDCG@K), optionally on
//! truncated prefixes of the embeddings.

use std::cmp::Ordering;
use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{InteractionDataset, Partition};
use crate::embeddings::{EmbeddingTable, Model};
use crate::error::{Error, Result};
use crate::scalar::{dot, Scalar};
use crate::types::{ItemId, UserId};

pub const DEFAULT_KS: [usize; 3] = [10, 20, 50];

/// Descending score, ties by ascending item index.
#[inline]
fn rank_order<T: Scalar>(a: &(T, ItemId), b: &(T, ItemId)) -> Ordering {
    b.0.partial_cmp(&a.0)
        .unwrap_or(Ordering::Equal)
        .then_with(|| a.1.cmp(&b.1))
}

/// Ranks every item not in the sorted `exclusion` list by
/// `e_u[0:dim_cut) · e_i[0:dim_cut)`.
pub fn rank_items<T: Scalar>(
    user_vector: &[T],
    items: &EmbeddingTable<T>,
    dim_cut: usize,
    exclusion: &[ItemId],
) -> Vec<ItemId> {
    let eu = &user_vector[..dim_cut];
    let mut scored: Vec<(T, ItemId)> = (0..items.rows())
        .map(ItemId::from)
        .filter(|i| exclusion.binary_search(i).is_err())
        .map(|i| (dot(eu, items.truncated(i.index(), dim_cut)), i))
        .collect();
    scored.sort_by(rank_order);
    scored.into_iter().map(|(_, i)| i).collect()
}

/// The first `k` entries of the ranking over `scores`, skipping `exclusion`.
fn top_k<T: Scalar>(scores: &[T], exclusion: &[ItemId], k: usize) -> Vec<ItemId> {
    let mut scored: Vec<(T, ItemId)> = scores
        .iter()
        .enumerate()
        .map(|(i, &s)| (s, ItemId::from(i)))
        .filter(|(_, i)| exclusion.binary_search(i).is_err())
        .collect();
    if k < scored.len() {
        scored.select_nth_unstable_by(k, rank_order);
        scored.truncate(k);
    }
    scored.sort_by(rank_order);
    scored.into_iter().map(|(_, i)| i).collect()
}

fn hits<'a>(ranked: &'a [ItemId], test_items: &'a [ItemId], k: usize) -> impl Iterator<Item = usize> + 'a {
    ranked
        .iter()
        .take(k)
        .enumerate()
        .filter(move |(_, i)| test_items.contains(i))
        .map(|(p, _)| p)
}

/// `|top-K ∩ test| / |test|`.
pub fn recall_at_k(ranked: &[ItemId], test_items: &[ItemId], k: usize) -> Result<f64> {
    if test_items.is_empty() {
        return Err(Error::EmptyTestSet);
    }
    Ok(hits(ranked, test_items, k).count() as f64 / test_items.len() as f64)
}

/// Binary-relevance NDCG with the ideal DCG truncated at `min(K, |test|)`.
pub fn ndcg_at_k(ranked: &[ItemId], test_items: &[ItemId], k: usize) -> Result<f64> {
    if test_items.is_empty() {
        return Err(Error::EmptyTestSet);
    }
    let dcg: f64 = hits(ranked, test_items, k)
        .map(|p| 1.0 / ((p + 2) as f64).log2())
        .sum();
    let idcg: f64 = (0..k.min(test_items.len()))
        .map(|p| 1.0 / ((p + 2) as f64).log2())
        .sum();
    Ok(dcg / idcg)
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct KMetrics {
    pub recall: f64,
    pub ndcg: f64,
}

/// Macro-averaged metrics over users with a non-empty partition.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub dim_cut: usize,
    #[serde(rename = "users")]
    pub n_evaluated_users: usize,
    #[serde(rename = "metrics")]
    pub per_k: BTreeMap<usize, KMetrics>,
}

impl MetricReport {
    pub fn recall(&self, k: usize) -> Option<f64> {
        self.per_k.get(&k).map(|m| m.recall)
    }

    pub fn ndcg(&self, k: usize) -> Option<f64> {
        self.per_k.get(&k).map(|m| m.ndcg)
    }

    pub fn csv_header(ks: &[usize]) -> String {
        let mut cols = vec!["dim_cut".to_owned(), "users".to_owned()];
        for k in ks {
            cols.push(format!("recall@{k}"));
            cols.push(format!("ndcg@{k}"));
        }
        cols.join(",")
    }

    pub fn csv_row(&self) -> String {
        let mut cols = vec![self.dim_cut.to_string(), self.n_evaluated_users.to_string()];
        for m in self.per_k.values() {
            cols.push(m.recall.to_string());
            cols.push(m.ndcg.to_string());
        }
        cols.join(",")
    }
}

fn normalize_ks(ks: &[usize]) -> Result<Vec<usize>> {
    if ks.is_empty() || ks.contains(&0) {
        return Err(Error::InvalidConfig(format!("cutoffs must be >= 1, got {ks:?}")));
    }
    let mut ks = ks.to_vec();
    ks.sort_unstable();
    ks.dedup();
    Ok(ks)
}

/// Evaluates one partition at a single dimension cut.
pub fn evaluate<T: Scalar>(
    model: &Model<T>,
    dataset: &InteractionDataset,
    partition: Partition,
    ks: &[usize],
    dim_cut: usize,
) -> Result<MetricReport> {
    let mut reports = evaluate_cuts(model, dataset, partition, ks, &[dim_cut], 1)?;
    Ok(reports.remove(0))
}

/// Evaluates one partition at every cut in `cuts` with a single scoring pass
/// per user. Prefix scores are accumulated in dimension order, so the score at
/// cut `c` is bitwise the plain inner product over `[0, c)`.
///
/// `threads > 1` evaluates users in parallel; results are reduced in user
/// order and do not depend on the thread count.
pub fn evaluate_cuts<T: Scalar>(
    model: &Model<T>,
    dataset: &InteractionDataset,
    partition: Partition,
    ks: &[usize],
    cuts: &[usize],
    threads: usize,
) -> Result<Vec<MetricReport>> {
    let ks = normalize_ks(ks)?;
    let dim = model.dim();
    if cuts.is_empty() || cuts.iter().any(|&c| c == 0 || c > dim) {
        return Err(Error::InvalidConfig(format!(
            "dimension cuts must lie in 1..={dim}, got {cuts:?}"
        )));
    }
    if dataset.n_users() != model.users.rows() || dataset.n_items() != model.items.rows() {
        return Err(Error::InvalidConfig(format!(
            "model has {}x{} rows but dataset has {} users and {} items",
            model.users.rows(),
            model.items.rows(),
            dataset.n_users(),
            dataset.n_items()
        )));
    }
    if dataset.partition(partition)?.is_empty() {
        return Err(Error::EmptyPartition(partition.name()));
    }
    let max_k = *ks.last().unwrap();

    let mut order: Vec<usize> = (0..cuts.len()).collect();
    order.sort_by_key(|&c| cuts[c]);
    let deepest = cuts[*order.last().unwrap()];

    let per_user = |u: usize| -> Result<Option<Vec<Vec<KMetrics>>>> {
        let user = UserId::from(u);
        let targets = dataset.user_items(partition, user)?;
        if targets.is_empty() {
            return Ok(None);
        }
        let exclusion = dataset.evaluation_exclusions(partition, user)?;
        let eu = model.users.row(u);
        // scores[c][i]: prefix score of item i at cut index c.
        let mut scores = vec![vec![T::zero(); model.items.rows()]; cuts.len()];
        for i in 0..model.items.rows() {
            let ei = model.items.row(i);
            let mut acc = T::zero();
            let mut next = 0;
            for (k, (x, y)) in eu[..deepest].iter().zip(&ei[..deepest]).enumerate() {
                acc += *x * *y;
                while next < order.len() && cuts[order[next]] == k + 1 {
                    scores[order[next]][i] = acc;
                    next += 1;
                }
            }
        }
        let mut out = Vec::with_capacity(cuts.len());
        for cut_scores in &scores {
            let ranked = top_k(cut_scores, exclusion, max_k);
            let row = ks
                .iter()
                .map(|&k| {
                    Ok(KMetrics {
                        recall: recall_at_k(&ranked, targets, k)?,
                        ndcg: ndcg_at_k(&ranked, targets, k)?,
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            out.push(row);
        }
        Ok(Some(out))
    };

    let results: Vec<Result<Option<Vec<Vec<KMetrics>>>>> = if threads > 1 {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .map_err(|e| Error::InvalidConfig(e.to_string()))?;
        pool.install(|| (0..dataset.n_users()).into_par_iter().map(per_user).collect())
    } else {
        (0..dataset.n_users()).map(per_user).collect()
    };

    let mut sums = vec![vec![KMetrics::default(); ks.len()]; cuts.len()];
    let mut n_users = 0usize;
    for r in results {
        let Some(rows) = r? else { continue };
        n_users += 1;
        for (acc, row) in sums.iter_mut().zip(rows) {
            for (a, m) in acc.iter_mut().zip(row) {
                a.recall += m.recall;
                a.ndcg += m.ndcg;
            }
        }
    }
    let n = n_users as f64;
    Ok(cuts
        .iter()
        .zip(sums)
        .map(|(&cut, acc)| MetricReport {
            dim_cut: cut,
            n_evaluated_users: n_users,
            per_k: ks
                .iter()
                .zip(acc)
                .map(|(&k, m)| {
                    (
                        k,
                        KMetrics {
                            recall: m.recall / n,
                            ndcg: m.ndcg / n,
                        },
                    )
                })
                .collect(),
        })
        .collect())
}

/// One report per schedule size (the truncated-dimension sweep).
pub fn evaluate_truncated<T: Scalar>(
    model: &Model<T>,
    dataset: &InteractionDataset,
    partition: Partition,
    ks: &[usize],
    threads: usize,
) -> Result<Vec<MetricReport>> {
    let cuts = model.schedule.sizes().to_vec();
    evaluate_cuts(model, dataset, partition, ks, &cuts, threads)
}
