//! Pairwise ranking objectives over matryoshka prefixes, with analytic
//! gradients.
//!
//! All three objectives reduce to a weighted sum of per-level BPR terms
//! `-w_l ln σ(r^l_ui - r^l_uj_l)` where `r^l` is the inner product over the
//! prefix `[0, d_l)`:
//!
//! | objective | levels | negative at level `l` |
//! |-----------|--------|-----------------------|
//! | BPR       | 1 (`d`) | `j`                  |
//! | MRL       | `L`    | shared `j`            |
//! | MRL + MNS | `L`    | `j_l`                 |
//!
//! Batch reduction is a plain sum over tuples.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::embeddings::EmbeddingTable;
use crate::error::{Error, Result};
use crate::scalar::{dot, sigmoid, softplus, Scalar};
use crate::types::{DimensionSchedule, ItemId, TrainingTuple};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TableKind {
    User,
    Item,
}

/// Sparse per-row gradients, keyed by `(table, row)` in a deterministic order.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientMap<T> {
    dim: usize,
    rows: BTreeMap<(TableKind, u32), Vec<T>>,
}

impl<T: Scalar> GradientMap<T> {
    pub fn new(dim: usize) -> Self {
        Self {
            dim,
            rows: BTreeMap::new(),
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn get(&self, kind: TableKind, row: usize) -> Option<&[T]> {
        self.rows.get(&(kind, row as u32)).map(Vec::as_slice)
    }

    /// Mutable gradient row, created as zeros on first access.
    pub fn row_mut(&mut self, kind: TableKind, row: usize) -> &mut [T] {
        let dim = self.dim;
        self.rows
            .entry((kind, row as u32))
            .or_insert_with(|| vec![T::zero(); dim])
    }

    pub fn iter(&self) -> impl Iterator<Item = (TableKind, usize, &[T])> {
        self.rows
            .iter()
            .map(|(&(k, r), g)| (k, r as usize, g.as_slice()))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (TableKind, usize, &mut Vec<T>)> {
        self.rows.iter_mut().map(|(&(k, r), g)| (k, r as usize, g))
    }

    /// Adds `other` row by row.
    pub fn merge(&mut self, other: &GradientMap<T>) {
        for (kind, row, g) in other.iter() {
            for (a, b) in self.row_mut(kind, row).iter_mut().zip(g) {
                *a += *b;
            }
        }
    }

    pub fn scale(&mut self, factor: T) {
        for g in self.rows.values_mut() {
            for x in g.iter_mut() {
                *x *= factor;
            }
        }
    }
}

/// Summed loss and per-row gradients of a batch.
#[derive(Debug, Clone, PartialEq)]
pub struct LossBatchResult<T> {
    pub loss: T,
    pub gradients: GradientMap<T>,
}

impl<T: Scalar> LossBatchResult<T> {
    pub fn scale(&mut self, factor: T) {
        self.loss *= factor;
        self.gradients.scale(factor);
    }
}

/// Which objective to evaluate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LossKind {
    Bpr,
    Mrl,
    MrlMns,
}

impl fmt::Display for LossKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            LossKind::Bpr => "bpr",
            LossKind::Mrl => "mrl",
            LossKind::MrlMns => "mrl-mns",
        })
    }
}

impl FromStr for LossKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "bpr" => Ok(LossKind::Bpr),
            "mrl" => Ok(LossKind::Mrl),
            "mrl-mns" => Ok(LossKind::MrlMns),
            other => Err(Error::InvalidConfig(format!("unknown loss `{other}`"))),
        }
    }
}

fn check_rows<T: Scalar>(
    tuple: &TrainingTuple,
    users: &EmbeddingTable<T>,
    items: &EmbeddingTable<T>,
) -> Result<()> {
    if tuple.user.index() >= users.rows() {
        return Err(Error::RowOutOfRange {
            row: tuple.user.index(),
            rows: users.rows(),
        });
    }
    for i in std::iter::once(tuple.positive).chain(tuple.negatives.iter().copied()) {
        if i.index() >= items.rows() {
            return Err(Error::RowOutOfRange {
                row: i.index(),
                rows: items.rows(),
            });
        }
    }
    Ok(())
}

fn check_dims<T: Scalar>(
    users: &EmbeddingTable<T>,
    items: &EmbeddingTable<T>,
    schedule: &DimensionSchedule,
) -> Result<()> {
    if users.dim() != items.dim() || schedule.full_dim() != users.dim() {
        return Err(Error::ScheduleMismatch(format!(
            "schedule full_dim {}, user dim {}, item dim {}",
            schedule.full_dim(),
            users.dim(),
            items.dim()
        )));
    }
    Ok(())
}

/// Adds one tuple's weighted per-level terms to `grads`; returns its loss.
///
/// Level `l` scores the prefix `[0, cuts[l])` against `negative_at(l)`.
fn accumulate_tuple<T: Scalar>(
    tuple: &TrainingTuple,
    negative_at: impl Fn(usize) -> ItemId,
    cuts: &[usize],
    weights: &[T],
    users: &EmbeddingTable<T>,
    items: &EmbeddingTable<T>,
    grads: &mut GradientMap<T>,
) -> T {
    let u = tuple.user.index();
    let i = tuple.positive.index();
    let eu = users.row(u);
    let ei = items.row(i);
    let mut loss = T::zero();
    for (level, (&cut, &w)) in cuts.iter().zip(weights).enumerate() {
        let j = negative_at(level).index();
        let ej = items.row(j);
        let margin = dot(&eu[..cut], &ei[..cut]) - dot(&eu[..cut], &ej[..cut]);
        loss += w * softplus(-margin);
        // d(-w ln σ(m))/dm = -w (1 - σ(m)) = -w σ(-m)
        let g = -w * sigmoid(-margin);
        let gu = grads.row_mut(TableKind::User, u);
        for k in 0..cut {
            gu[k] += g * (ei[k] - ej[k]);
        }
        let gi = grads.row_mut(TableKind::Item, i);
        for k in 0..cut {
            gi[k] += g * eu[k];
        }
        let gj = grads.row_mut(TableKind::Item, j);
        for k in 0..cut {
            gj[k] -= g * eu[k];
        }
    }
    loss
}

fn weights_as<T: Scalar>(schedule: &DimensionSchedule) -> Vec<T> {
    schedule.weights().iter().map(|&w| T::of(w)).collect()
}

/// `Σ -ln σ(e_u·e_i - e_u·e_j)` over single-negative tuples.
pub fn bpr_loss<T: Scalar>(
    batch: &[TrainingTuple],
    users: &EmbeddingTable<T>,
    items: &EmbeddingTable<T>,
) -> Result<LossBatchResult<T>> {
    if users.dim() != items.dim() {
        return Err(Error::LengthMismatch(users.dim(), items.dim()));
    }
    let dim = users.dim();
    let mut grads = GradientMap::new(dim);
    let mut loss = T::zero();
    for tuple in batch {
        if tuple.negatives.len() != 1 {
            return Err(Error::WrongTupleArity {
                got: tuple.negatives.len(),
                expected: 1,
            });
        }
        check_rows(tuple, users, items)?;
        let j = tuple.negatives[0];
        loss += accumulate_tuple(tuple, |_| j, &[dim], &[T::one()], users, items, &mut grads);
    }
    Ok(LossBatchResult {
        loss,
        gradients: grads,
    })
}

/// The negative shared by all levels: the single entry, or `L` identical ones.
fn shared_negative(tuple: &TrainingTuple, levels: usize) -> Result<ItemId> {
    match tuple.negatives.as_slice() {
        [j] => Ok(*j),
        negs if negs.len() == levels && negs.iter().all(|j| *j == negs[0]) => Ok(negs[0]),
        negs => Err(Error::WrongTupleArity {
            got: negs.len(),
            expected: 1,
        }),
    }
}

/// `Σ_tuples Σ_l -w_l ln σ(r^l_ui - r^l_uj)` with one negative shared by
/// every level.
pub fn mrl_loss<T: Scalar>(
    batch: &[TrainingTuple],
    users: &EmbeddingTable<T>,
    items: &EmbeddingTable<T>,
    schedule: &DimensionSchedule,
) -> Result<LossBatchResult<T>> {
    check_dims(users, items, schedule)?;
    let weights = weights_as::<T>(schedule);
    let mut grads = GradientMap::new(users.dim());
    let mut loss = T::zero();
    for tuple in batch {
        let j = shared_negative(tuple, schedule.levels())?;
        check_rows(tuple, users, items)?;
        loss += accumulate_tuple(
            tuple,
            |_| j,
            schedule.sizes(),
            &weights,
            users,
            items,
            &mut grads,
        );
    }
    Ok(LossBatchResult {
        loss,
        gradients: grads,
    })
}

/// `Σ_tuples Σ_l -w_l ln σ(r^l_ui - r^l_uj_l)`: level `l` uses only its own
/// negative `j_l`.
pub fn mrl_mns_loss<T: Scalar>(
    batch: &[TrainingTuple],
    users: &EmbeddingTable<T>,
    items: &EmbeddingTable<T>,
    schedule: &DimensionSchedule,
) -> Result<LossBatchResult<T>> {
    check_dims(users, items, schedule)?;
    let weights = weights_as::<T>(schedule);
    let mut grads = GradientMap::new(users.dim());
    let mut loss = T::zero();
    for tuple in batch {
        if tuple.negatives.len() != schedule.levels() {
            return Err(Error::WrongTupleArity {
                got: tuple.negatives.len(),
                expected: schedule.levels(),
            });
        }
        check_rows(tuple, users, items)?;
        loss += accumulate_tuple(
            tuple,
            |l| tuple.negatives[l],
            schedule.sizes(),
            &weights,
            users,
            items,
            &mut grads,
        );
    }
    Ok(LossBatchResult {
        loss,
        gradients: grads,
    })
}

/// Dispatches on `kind`; BPR ignores the schedule apart from its dimension.
pub fn loss_for<T: Scalar>(
    kind: LossKind,
    batch: &[TrainingTuple],
    users: &EmbeddingTable<T>,
    items: &EmbeddingTable<T>,
    schedule: &DimensionSchedule,
) -> Result<LossBatchResult<T>> {
    match kind {
        LossKind::Bpr => bpr_loss(batch, users, items),
        LossKind::Mrl => mrl_loss(batch, users, items, schedule),
        LossKind::MrlMns => mrl_mns_loss(batch, users, items, schedule),
    }
}

/// Derivative of a loss with respect to the block score `r^{l-1,l}_ui`
/// when every other block of every involved vector is zero.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GradientReport<T> {
    pub loss: LossKind,
    pub level: usize,
    pub levels: usize,
    /// From the analytic item gradient: `<∂L/∂e_i^blk, e_u^blk> / |e_u^blk|²`.
    pub analytic: T,
    /// Central difference along a perturbation that moves only `r^blk_ui`.
    pub finite_difference: T,
    /// Closed form: `-Σ_{k>=l} w_k (1 - σ(r^blk_ui - r^blk_uj_k))`, with a
    /// single full-dimension term for BPR.
    pub closed_form: T,
    /// `analytic - closed_form`.
    pub difference: T,
    /// `∂L/∂e_u` restricted to the block.
    pub user_block_gradient: Vec<T>,
    /// `∂L/∂e_i` restricted to the block.
    pub positive_block_gradient: Vec<T>,
}

/// Frozen-block derivative of `kind` at `level`.
///
/// Requires all dimensions outside `[d_{l-1}, d_l)` of the user, positive and
/// negative rows to be exactly zero, which makes the closed form exact.
pub fn frozen_block_derivative<T: Scalar>(
    kind: LossKind,
    tuple: &TrainingTuple,
    users: &EmbeddingTable<T>,
    items: &EmbeddingTable<T>,
    schedule: &DimensionSchedule,
    level: usize,
) -> Result<GradientReport<T>> {
    check_dims(users, items, schedule)?;
    check_rows(tuple, users, items)?;
    schedule.check_level(level)?;
    let block = schedule.block(level - 1, level)?;
    let levels = schedule.levels();

    let negatives: Vec<ItemId> = match kind {
        LossKind::Bpr => {
            if tuple.negatives.len() != 1 {
                return Err(Error::WrongTupleArity {
                    got: tuple.negatives.len(),
                    expected: 1,
                });
            }
            tuple.negatives.clone()
        }
        LossKind::Mrl => vec![shared_negative(tuple, levels)?; levels],
        LossKind::MrlMns => {
            if tuple.negatives.len() != levels {
                return Err(Error::WrongTupleArity {
                    got: tuple.negatives.len(),
                    expected: levels,
                });
            }
            tuple.negatives.clone()
        }
    };
    if negatives.contains(&tuple.positive) {
        return Err(Error::InvalidConfig(
            "positive item also appears as a negative".into(),
        ));
    }

    let outside_zero = |row: &[T]| {
        row.iter()
            .enumerate()
            .all(|(k, x)| block.contains(&k) || *x == T::zero())
    };
    if !outside_zero(users.row(tuple.user.index())) {
        return Err(Error::NonZeroFrozenBlocks(format!("user {}", tuple.user)));
    }
    for i in std::iter::once(tuple.positive).chain(negatives.iter().copied()) {
        if !outside_zero(items.row(i.index())) {
            return Err(Error::NonZeroFrozenBlocks(format!("item {i}")));
        }
    }

    let eu = &users.row(tuple.user.index())[block.clone()];
    let ei = &items.row(tuple.positive.index())[block.clone()];
    let norm2 = dot(eu, eu);
    if norm2 == T::zero() {
        return Err(Error::InvalidConfig("user block is all zeros".into()));
    }

    let batch = std::slice::from_ref(tuple);
    let result = loss_for(kind, batch, users, items, schedule)?;
    let grad_u = result
        .gradients
        .get(TableKind::User, tuple.user.index())
        .map(|g| g[block.clone()].to_vec())
        .unwrap_or_else(|| vec![T::zero(); block.len()]);
    let grad_i = result
        .gradients
        .get(TableKind::Item, tuple.positive.index())
        .map(|g| g[block.clone()].to_vec())
        .unwrap_or_else(|| vec![T::zero(); block.len()]);
    let analytic = dot(&grad_i, eu) / norm2;

    // Moving e_i^blk by t·e_u^blk/|e_u^blk|² shifts r^blk_ui by exactly t.
    let h = T::of(1e-5);
    let shifted = |t: T| -> Result<T> {
        let mut moved = items.clone();
        let row = &mut moved.row_mut(tuple.positive.index())[block.clone()];
        for (x, u) in row.iter_mut().zip(eu) {
            *x += t * *u / norm2;
        }
        Ok(loss_for(kind, batch, users, &moved, schedule)?.loss)
    };
    let finite_difference = (shifted(h)? - shifted(-h)?) / (T::of(2.0) * h);

    let r_ui = dot(eu, ei);
    let block_margin = |j: ItemId| r_ui - dot(eu, &items.row(j.index())[block.clone()]);
    let closed_form = match kind {
        LossKind::Bpr => -(T::one() - sigmoid(block_margin(negatives[0]))),
        LossKind::Mrl | LossKind::MrlMns => {
            let mut acc = T::zero();
            for k in level..=levels {
                let w = T::of(schedule.weights()[k - 1]);
                acc += w * (T::one() - sigmoid(block_margin(negatives[k - 1])));
            }
            -acc
        }
    };

    Ok(GradientReport {
        loss: kind,
        level,
        levels,
        analytic,
        finite_difference,
        closed_form,
        difference: analytic - closed_form,
        user_block_gradient: grad_u,
        positive_block_gradient: grad_i,
    })
}

/// Cosine similarity; zero when either vector is zero.
pub fn cosine<T: Scalar>(a: &[T], b: &[T]) -> T {
    let na = dot(a, a).sqrt();
    let nb = dot(b, b).sqrt();
    if na == T::zero() || nb == T::zero() {
        return T::zero();
    }
    dot(a, b) / (na * nb)
}
