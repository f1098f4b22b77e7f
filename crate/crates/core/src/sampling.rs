//! Negative item selection: uniform, dynamic negative sampling (DNS) and
//! matryoshka negative sampling (MNS), which runs a hard-negative strategy
//! once per level on that level's prefix.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::embeddings::EmbeddingTable;
use crate::error::{Error, Result};
use crate::scalar::{dot, Scalar};
use crate::types::{DimensionSchedule, ItemId, TrainingTuple, UserId};

pub const DEFAULT_DNS_POOL_SIZE: usize = 16;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SamplingStrategy {
    Uniform,
    Dns,
    Mns,
}

impl fmt::Display for SamplingStrategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SamplingStrategy::Uniform => "uniform",
            SamplingStrategy::Dns => "dns",
            SamplingStrategy::Mns => "mns",
        })
    }
}

impl FromStr for SamplingStrategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "uniform" => Ok(SamplingStrategy::Uniform),
            "dns" => Ok(SamplingStrategy::Dns),
            "mns" => Ok(SamplingStrategy::Mns),
            other => Err(Error::InvalidSampler(format!("unknown strategy `{other}`"))),
        }
    }
}

/// Sampler settings. MNS always uses DNS as its per-level strategy.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SamplerConfig {
    pub strategy: SamplingStrategy,
    pub dns_pool_size: usize,
    pub seed: u64,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        Self {
            strategy: SamplingStrategy::Dns,
            dns_pool_size: DEFAULT_DNS_POOL_SIZE,
            seed: 0,
        }
    }
}

impl SamplerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.dns_pool_size == 0 {
            return Err(Error::InvalidSampler("dns_pool_size must be >= 1".into()));
        }
        Ok(())
    }
}

/// Read-only state a sampling pass sees: per-user sorted exclusion lists and
/// a frozen snapshot of the tables.
#[derive(Debug, Clone, Copy)]
pub struct SamplingContext<'a, T> {
    pub exclusions: &'a [Vec<ItemId>],
    pub users: &'a EmbeddingTable<T>,
    pub items: &'a EmbeddingTable<T>,
}

impl<'a, T: Scalar> SamplingContext<'a, T> {
    pub fn new(
        exclusions: &'a [Vec<ItemId>],
        users: &'a EmbeddingTable<T>,
        items: &'a EmbeddingTable<T>,
    ) -> Self {
        Self {
            exclusions,
            users,
            items,
        }
    }

    pub fn n_items(&self) -> usize {
        self.items.rows()
    }

    pub fn excluded(&self, user: UserId) -> &'a [ItemId] {
        &self.exclusions[user.index()]
    }
}

/// Uniform draw from `0..n_items` minus the sorted `exclusions`.
///
/// Rejection-samples while at least half the catalog is eligible, otherwise
/// indexes directly into the complement.
pub fn sample_uniform<R: Rng + ?Sized>(
    user: UserId,
    exclusions: &[ItemId],
    n_items: usize,
    rng: &mut R,
) -> Result<ItemId> {
    let eligible = n_items.saturating_sub(exclusions.len());
    if eligible == 0 {
        return Err(Error::NoNegativesAvailable(user.index()));
    }
    if 2 * eligible >= n_items {
        loop {
            let cand = ItemId::from(rng.random_range(0..n_items));
            if exclusions.binary_search(&cand).is_err() {
                return Ok(cand);
            }
        }
    }
    // k-th item of the complement.
    let mut k = rng.random_range(0..eligible);
    let mut next = 0usize;
    for ex in exclusions {
        let gap = ex.index() - next;
        if k < gap {
            return Ok(ItemId::from(next + k));
        }
        k -= gap;
        next = ex.index() + 1;
    }
    Ok(ItemId::from(next + k))
}

/// A hard-negative strategy `f` picking one negative from the prefix views
/// of the user and positive item.
pub trait HardNegativeStrategy<T: Scalar> {
    fn select<R: Rng + ?Sized>(
        &self,
        ctx: &SamplingContext<'_, T>,
        user: UserId,
        positive: ItemId,
        dim_cut: usize,
        rng: &mut R,
    ) -> Result<ItemId>;
}

/// Dynamic negative sampling: draw `pool_size` uniform negatives and keep the
/// one the current model scores highest on `[0, dim_cut)`. The positive
/// item's vector is not consulted.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Dns {
    pub pool_size: usize,
}

impl<T: Scalar> HardNegativeStrategy<T> for Dns {
    fn select<R: Rng + ?Sized>(
        &self,
        ctx: &SamplingContext<'_, T>,
        user: UserId,
        _positive: ItemId,
        dim_cut: usize,
        rng: &mut R,
    ) -> Result<ItemId> {
        if self.pool_size == 0 {
            return Err(Error::InvalidSampler("dns_pool_size must be >= 1".into()));
        }
        if dim_cut == 0 || dim_cut > ctx.users.dim() {
            return Err(Error::InvalidSampler(format!(
                "dimension cut {dim_cut} outside 1..={}",
                ctx.users.dim()
            )));
        }
        let eu = ctx.users.truncated(user.index(), dim_cut);
        let exclusions = ctx.excluded(user);
        let mut best = sample_uniform(user, exclusions, ctx.n_items(), rng)?;
        let mut best_score = dot(eu, ctx.items.truncated(best.index(), dim_cut));
        for _ in 1..self.pool_size {
            let cand = sample_uniform(user, exclusions, ctx.n_items(), rng)?;
            let score = dot(eu, ctx.items.truncated(cand.index(), dim_cut));
            // Ties go to the lowest item index.
            if score > best_score || (score == best_score && cand < best) {
                best = cand;
                best_score = score;
            }
        }
        Ok(best)
    }
}

/// DNS at dimension cut `dim_cut`.
pub fn sample_dns<T: Scalar, R: Rng + ?Sized>(
    ctx: &SamplingContext<'_, T>,
    user: UserId,
    positive: ItemId,
    dim_cut: usize,
    pool_size: usize,
    rng: &mut R,
) -> Result<ItemId> {
    Dns { pool_size }.select(ctx, user, positive, dim_cut, rng)
}

/// Matryoshka negative sampling with an arbitrary base strategy: for each
/// level in ascending order, `f` picks `j_l` from the `d_l`-prefix with a
/// freshly drawn pool. The same item may be chosen at several levels.
pub fn sample_mns_with<T, F, R>(
    strategy: &F,
    ctx: &SamplingContext<'_, T>,
    user: UserId,
    positive: ItemId,
    schedule: &DimensionSchedule,
    rng: &mut R,
) -> Result<TrainingTuple>
where
    T: Scalar,
    F: HardNegativeStrategy<T>,
    R: Rng + ?Sized,
{
    if schedule.full_dim() != ctx.users.dim() {
        return Err(Error::ScheduleMismatch(format!(
            "schedule full_dim {} but table dim {}",
            schedule.full_dim(),
            ctx.users.dim()
        )));
    }
    let negatives = schedule
        .sizes()
        .iter()
        .map(|&cut| strategy.select(ctx, user, positive, cut, rng))
        .collect::<Result<Vec<_>>>()?;
    Ok(TrainingTuple::new(user, positive, negatives))
}

/// MNS with DNS as the base strategy.
pub fn sample_mns<T: Scalar, R: Rng + ?Sized>(
    ctx: &SamplingContext<'_, T>,
    user: UserId,
    positive: ItemId,
    schedule: &DimensionSchedule,
    pool_size: usize,
    rng: &mut R,
) -> Result<TrainingTuple> {
    sample_mns_with(&Dns { pool_size }, ctx, user, positive, schedule, rng)
}

/// Builds a training tuple for `(user, positive)` with the given strategy:
/// uniform and DNS yield triplets (DNS at full dimension), MNS yields one
/// negative per level.
pub fn draw_tuple<T: Scalar, R: Rng + ?Sized>(
    strategy: SamplingStrategy,
    ctx: &SamplingContext<'_, T>,
    user: UserId,
    positive: ItemId,
    schedule: &DimensionSchedule,
    pool_size: usize,
    rng: &mut R,
) -> Result<TrainingTuple> {
    match strategy {
        SamplingStrategy::Uniform => {
            let j = sample_uniform(user, ctx.excluded(user), ctx.n_items(), rng)?;
            Ok(TrainingTuple::triplet(user, positive, j))
        }
        SamplingStrategy::Dns => {
            let j = sample_dns(ctx, user, positive, schedule.full_dim(), pool_size, rng)?;
            Ok(TrainingTuple::triplet(user, positive, j))
        }
        SamplingStrategy::Mns => sample_mns(ctx, user, positive, schedule, pool_size, rng),
    }
}
