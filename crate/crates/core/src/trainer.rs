//! Mini-batch training: sparse Adam, the four BPR/MRL × DNS/MNS variants,
//! validation-based early stopping.

use std::fmt;
use std::io::Write;
use std::path::Path;
use std::str::FromStr;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{InteractionDataset, Partition, ValidationMode};
use crate::digest::derive_seed;
use crate::embeddings::{EmbeddingTable, Model};
use crate::error::{Error, Result};
use crate::evaluation::evaluate;
use crate::losses::{bpr_loss, loss_for, GradientMap, LossBatchResult, LossKind, TableKind};
use crate::sampling::{draw_tuple, SamplingContext, SamplingStrategy, DEFAULT_DNS_POOL_SIZE};
use crate::scalar::Scalar;
use crate::types::{DimensionSchedule, TrainingTuple};

/// The four ablation variants: loss (BPR or MRL) × sampler (DNS or MNS).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Variant {
    #[serde(rename = "bpr-d")]
    BprD,
    #[serde(rename = "bpr-m")]
    BprM,
    #[serde(rename = "mrl-d")]
    MrlD,
    #[serde(rename = "mrl-m")]
    MrlM,
}

impl Variant {
    pub const ALL: [Variant; 4] = [Variant::BprD, Variant::BprM, Variant::MrlD, Variant::MrlM];

    pub fn name(self) -> &'static str {
        match self {
            Variant::BprD => "bpr-d",
            Variant::BprM => "bpr-m",
            Variant::MrlD => "mrl-d",
            Variant::MrlM => "mrl-m",
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Variant::ALL
            .into_iter()
            .find(|v| v.name() == s)
            .ok_or_else(|| Error::UnknownVariant(s.to_owned()))
    }
}

/// How BPR-M turns an MNS tuple into BPR terms.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BprMMode {
    /// One BPR triplet per level negative, averaged.
    #[default]
    Expand,
    /// Only the full-dimension negative `j_L`.
    Last,
}

impl FromStr for BprMMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "expand" => Ok(BprMMode::Expand),
            "last" => Ok(BprMMode::Last),
            other => Err(Error::InvalidConfig(format!("unknown bpr_m_mode `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Reduction {
    #[default]
    Sum,
    Mean,
}

impl FromStr for Reduction {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sum" => Ok(Reduction::Sum),
            "mean" => Ok(Reduction::Mean),
            other => Err(Error::InvalidConfig(format!("unknown reduction `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SamplerSettings {
    /// Unset means the variant's own sampler.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub strategy: Option<SamplingStrategy>,
    #[serde(default = "default_pool")]
    pub dns_pool_size: usize,
}

impl Default for SamplerSettings {
    fn default() -> Self {
        Self {
            strategy: None,
            dns_pool_size: DEFAULT_DNS_POOL_SIZE,
        }
    }
}

fn default_pool() -> usize {
    DEFAULT_DNS_POOL_SIZE
}
fn default_lr() -> f64 {
    1e-3
}
fn default_batch() -> usize {
    2048
}
fn default_epochs() -> usize {
    300
}
fn default_patience() -> usize {
    10
}
fn default_eval_every() -> usize {
    5
}
fn default_dims() -> Vec<usize> {
    vec![4, 8, 16, 32, 64]
}
fn default_beta1() -> f64 {
    0.9
}
fn default_beta2() -> f64 {
    0.999
}
fn default_eps() -> f64 {
    1e-8
}

/// Run configuration; the JSON form uses these field names as keys.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub variant: Variant,
    #[serde(default = "default_lr")]
    pub learning_rate: f64,
    #[serde(default = "default_batch")]
    pub batch_size: usize,
    #[serde(default = "default_epochs")]
    pub max_epochs: usize,
    #[serde(default = "default_patience")]
    pub patience: usize,
    #[serde(default = "default_eval_every")]
    pub eval_every: usize,
    #[serde(default)]
    pub seed: u64,
    /// Nested prefix sizes; the last is the full dimension.
    #[serde(default = "default_dims")]
    pub dims: Vec<usize>,
    /// Per-level weights; uniform `1/L` when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub weights: Option<Vec<f64>>,
    #[serde(default)]
    pub sampler: SamplerSettings,
    #[serde(default)]
    pub weight_decay: f64,
    #[serde(default)]
    pub reduction: Reduction,
    #[serde(default)]
    pub validation_mode: ValidationMode,
    #[serde(default)]
    pub bpr_m_mode: BprMMode,
    #[serde(default = "default_beta1")]
    pub adam_beta1: f64,
    #[serde(default = "default_beta2")]
    pub adam_beta2: f64,
    #[serde(default = "default_eps")]
    pub adam_eps: f64,
}

impl TrainConfig {
    pub fn new(variant: Variant) -> Self {
        Self {
            variant,
            learning_rate: default_lr(),
            batch_size: default_batch(),
            max_epochs: default_epochs(),
            patience: default_patience(),
            eval_every: default_eval_every(),
            seed: 0,
            dims: default_dims(),
            weights: None,
            sampler: SamplerSettings::default(),
            weight_decay: 0.0,
            reduction: Reduction::Sum,
            validation_mode: ValidationMode::Holdout,
            bpr_m_mode: BprMMode::Expand,
            adam_beta1: default_beta1(),
            adam_beta2: default_beta2(),
            adam_eps: default_eps(),
        }
    }

    pub fn schedule(&self) -> Result<DimensionSchedule> {
        let full = *self.dims.last().ok_or(Error::EmptySchedule)?;
        let schedule = DimensionSchedule::new(&self.dims, full)?;
        match &self.weights {
            Some(w) => schedule.with_weights(w.clone()),
            None => Ok(schedule),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidConfig(msg));
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad(format!("learning_rate must be > 0, got {}", self.learning_rate));
        }
        if self.batch_size == 0 {
            return bad("batch_size must be >= 1".into());
        }
        if self.patience == 0 {
            return bad("patience must be >= 1".into());
        }
        if self.eval_every == 0 {
            return bad("eval_every must be >= 1".into());
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return bad(format!("weight_decay must be >= 0, got {}", self.weight_decay));
        }
        if !(0.0..1.0).contains(&self.adam_beta1)
            || !(0.0..1.0).contains(&self.adam_beta2)
            || self.adam_eps <= 0.0
        {
            return bad("adam_beta1/adam_beta2 must lie in [0, 1) and adam_eps be > 0".into());
        }
        if self.sampler.dns_pool_size == 0 {
            return Err(Error::InvalidSampler("dns_pool_size must be >= 1".into()));
        }
        self.schedule()?;
        build_variant(self.variant, self)?;
        Ok(())
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let config: Self = serde_json::from_str(text)?;
        Ok(config)
    }
}

/// Loss and sampler a variant trains with.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct VariantBinding {
    pub loss: LossKind,
    pub strategy: SamplingStrategy,
    /// Set for BPR-M: how the MNS tuple feeds BPR.
    pub bpr_m_mode: Option<BprMMode>,
}

/// Resolves a variant to its loss and sampler.
///
/// D-variants sample at full dimension with DNS (or uniform when the config
/// asks for it); M-variants require MNS.
pub fn build_variant(variant: Variant, config: &TrainConfig) -> Result<VariantBinding> {
    let requested = config.sampler.strategy;
    let (loss, strategy) = match variant {
        Variant::BprD | Variant::MrlD => {
            let s = requested.unwrap_or(SamplingStrategy::Dns);
            if s == SamplingStrategy::Mns {
                return Err(Error::InvalidSampler(format!(
                    "{variant} samples one shared negative; use bpr-m/mrl-m for mns"
                )));
            }
            let loss = if variant == Variant::BprD {
                LossKind::Bpr
            } else {
                LossKind::Mrl
            };
            (loss, s)
        }
        Variant::BprM | Variant::MrlM => {
            let s = requested.unwrap_or(SamplingStrategy::Mns);
            if s != SamplingStrategy::Mns {
                return Err(Error::InvalidSampler(format!("{variant} requires the mns sampler, got {s}")));
            }
            let loss = if variant == Variant::BprM {
                LossKind::Bpr
            } else {
                LossKind::MrlMns
            };
            (loss, s)
        }
    };
    Ok(VariantBinding {
        loss,
        strategy,
        bpr_m_mode: (variant == Variant::BprM).then_some(config.bpr_m_mode),
    })
}

impl VariantBinding {
    /// Loss and gradients of one sampled batch.
    pub fn batch_loss<T: Scalar>(
        &self,
        batch: &[TrainingTuple],
        model: &Model<T>,
    ) -> Result<LossBatchResult<T>> {
        match self.bpr_m_mode {
            None => loss_for(self.loss, batch, &model.users, &model.items, &model.schedule),
            Some(BprMMode::Last) => {
                let triplets: Vec<_> = batch
                    .iter()
                    .map(|t| TrainingTuple::triplet(t.user, t.positive, *t.negatives.last().unwrap()))
                    .collect();
                bpr_loss(&triplets, &model.users, &model.items)
            }
            Some(BprMMode::Expand) => {
                let levels = model.schedule.levels();
                let triplets: Vec<_> = batch
                    .iter()
                    .flat_map(|t| {
                        t.negatives
                            .iter()
                            .map(|&j| TrainingTuple::triplet(t.user, t.positive, j))
                    })
                    .collect();
                let mut r = bpr_loss(&triplets, &model.users, &model.items)?;
                r.scale(T::one() / T::of(levels as f64));
                Ok(r)
            }
        }
    }
}

/// Adam moments for both tables plus the shared step counter.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState<T> {
    pub m_users: EmbeddingTable<T>,
    pub v_users: EmbeddingTable<T>,
    pub m_items: EmbeddingTable<T>,
    pub v_items: EmbeddingTable<T>,
    pub step: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl<T: Scalar> AdamState<T> {
    pub fn new(n_users: usize, n_items: usize, dim: usize) -> Self {
        Self::with_hyper(n_users, n_items, dim, 0.9, 0.999, 1e-8)
    }

    pub fn with_hyper(n_users: usize, n_items: usize, dim: usize, beta1: f64, beta2: f64, eps: f64) -> Self {
        Self {
            m_users: EmbeddingTable::zeros(n_users, dim),
            v_users: EmbeddingTable::zeros(n_users, dim),
            m_items: EmbeddingTable::zeros(n_items, dim),
            v_items: EmbeddingTable::zeros(n_items, dim),
            step: 0,
            beta1,
            beta2,
            eps,
        }
    }

    pub fn for_model(model: &Model<T>) -> Self {
        Self::new(model.users.rows(), model.items.rows(), model.dim())
    }
}

/// One bias-corrected Adam step over the rows present in `grads`; other rows
/// and their moments are left untouched.
pub fn adam_step<T: Scalar>(
    users: &mut EmbeddingTable<T>,
    items: &mut EmbeddingTable<T>,
    grads: &GradientMap<T>,
    state: &mut AdamState<T>,
    lr: f64,
) -> Result<()> {
    for (kind, row, g) in grads.iter() {
        let rows = match kind {
            TableKind::User => users.rows(),
            TableKind::Item => items.rows(),
        };
        if row >= rows {
            return Err(Error::RowOutOfRange { row, rows });
        }
        if g.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFiniteGradient(format!("{kind:?} row {row}")));
        }
    }
    state.step += 1;
    let t = state.step as i32;
    let b1 = T::of(state.beta1);
    let b2 = T::of(state.beta2);
    let c1 = T::of(1.0 - state.beta1);
    let c2 = T::of(1.0 - state.beta2);
    let bc1 = T::of(1.0 - state.beta1.powi(t));
    let bc2 = T::of(1.0 - state.beta2.powi(t));
    let eps = T::of(state.eps);
    let lr = T::of(lr);
    for (kind, row, g) in grads.iter() {
        let (table, m, v) = match kind {
            TableKind::User => (&mut *users, &mut state.m_users, &mut state.v_users),
            TableKind::Item => (&mut *items, &mut state.m_items, &mut state.v_items),
        };
        let p = table.row_mut(row);
        let m = m.row_mut(row);
        let v = v.row_mut(row);
        for k in 0..g.len() {
            m[k] = b1 * m[k] + c1 * g[k];
            v[k] = b2 * v[k] + c2 * g[k] * g[k];
            let m_hat = m[k] / bc1;
            let v_hat = v[k] / bc2;
            p[k] -= lr * m_hat / (v_hat.sqrt() + eps);
        }
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Mean loss per training tuple.
    pub train_loss: f64,
    pub val_recall_at_20: Option<f64>,
    pub elapsed_ms: u64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct EpochLog {
    pub records: Vec<EpochRecord>,
}

impl EpochLog {
    pub const HEADER: &'static str = "epoch,train_loss,val_recall_at_20,elapsed_ms";

    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "{}", Self::HEADER)?;
        for r in &self.records {
            let val = r.val_recall_at_20.map(|v| v.to_string()).unwrap_or_default();
            writeln!(w, "{},{},{},{}", r.epoch, r.train_loss, val, r.elapsed_ms)?;
        }
        Ok(())
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let f = std::fs::File::create(path).map_err(|e| Error::file(path, e))?;
        let mut w = std::io::BufWriter::new(f);
        self.write_csv(&mut w)?;
        w.flush()?;
        Ok(())
    }

    /// The logged validation evaluations as `(epoch, recall@20)`.
    pub fn evaluations(&self) -> impl Iterator<Item = (usize, f64)> + '_ {
        self.records
            .iter()
            .filter_map(|r| r.val_recall_at_20.map(|v| (r.epoch, v)))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TrainOptions {
    /// Worker threads for sampling and validation. Results do not depend on
    /// this value.
    pub threads: usize,
}

impl Default for TrainOptions {
    fn default() -> Self {
        Self { threads: 1 }
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome<T> {
    /// Best-validation model (the final model when nothing was evaluated).
    pub model: Model<T>,
    pub log: EpochLog,
    pub best_epoch: Option<usize>,
    pub best_val_recall: Option<f64>,
    pub epochs_run: usize,
    pub stopped_early: bool,
    /// Fraction of MNS tuples that reused a negative across levels.
    pub mns_repeat_rate: Option<f64>,
}

pub fn train<T: Scalar>(dataset: &InteractionDataset, config: &TrainConfig) -> Result<TrainOutcome<T>> {
    train_with(dataset, config, TrainOptions::default())
}

/// Trains from a fresh Xavier initialisation derived from `config.seed`.
///
/// Every epoch shuffles the training pairs and walks them in batches. Each
/// batch samples negatives against the parameters as they stand at batch
/// start, then takes one Adam step. Tuple `n` of the run draws from its own
/// ChaCha stream, so the result is independent of `options.threads`.
pub fn train_with<T: Scalar>(
    dataset: &InteractionDataset,
    config: &TrainConfig,
    options: TrainOptions,
) -> Result<TrainOutcome<T>> {
    config.validate()?;
    let schedule = config.schedule()?;
    let model = Model::<T>::init(dataset.n_users(), dataset.n_items(), schedule, config.seed);
    train_from(dataset, config, options, model)
}

/// Like [`train_with`] but starting from `model`.
pub fn train_from<T: Scalar>(
    dataset: &InteractionDataset,
    config: &TrainConfig,
    options: TrainOptions,
    mut model: Model<T>,
) -> Result<TrainOutcome<T>> {
    config.validate()?;
    let binding = build_variant(config.variant, config)?;
    if model.schedule != config.schedule()? {
        return Err(Error::ScheduleMismatch("model schedule differs from config".into()));
    }
    if model.users.rows() != dataset.n_users() || model.items.rows() != dataset.n_items() {
        return Err(Error::InvalidConfig("model shape does not match dataset".into()));
    }
    let mut pairs = dataset.training_pairs(config.validation_mode)?;
    if pairs.is_empty() {
        return Err(Error::EmptyPartition("train"));
    }
    let exclusions = dataset.training_positive_lists(config.validation_mode)?;
    let can_validate = !dataset.partition(Partition::Validation)?.is_empty();

    let pool = if options.threads > 1 {
        Some(
            rayon::ThreadPoolBuilder::new()
                .num_threads(options.threads)
                .build()
                .map_err(|e| Error::InvalidConfig(e.to_string()))?,
        )
    } else {
        None
    };

    let mut adam = AdamState::with_hyper(
        model.users.rows(),
        model.items.rows(),
        model.dim(),
        config.adam_beta1,
        config.adam_beta2,
        config.adam_eps,
    );
    let mut shuffle_rng = ChaCha8Rng::seed_from_u64(derive_seed(config.seed, "shuffle"));
    let sampler_seed = derive_seed(config.seed, "sampler");
    let decay = T::of(config.weight_decay);
    let start = Instant::now();

    let mut log = EpochLog::default();
    let mut best: Option<(usize, f64, Model<T>)> = None;
    let mut stale = 0usize;
    let mut stopped_early = false;
    let mut tuples_drawn = 0u64;
    let mut tuples_repeated = 0u64;
    let mut epochs_run = 0;

    for epoch in 1..=config.max_epochs {
        pairs.shuffle(&mut shuffle_rng);
        let mut epoch_loss = 0.0f64;
        for batch in pairs.chunks(config.batch_size) {
            let ctx = SamplingContext::new(exclusions, &model.users, &model.items);
            let base = tuples_drawn;
            let draw = |(k, &(u, i)): (usize, &(crate::types::UserId, crate::types::ItemId))| {
                let mut rng = ChaCha8Rng::seed_from_u64(sampler_seed);
                rng.set_stream(base + k as u64);
                draw_tuple(
                    binding.strategy,
                    &ctx,
                    u,
                    i,
                    &model.schedule,
                    config.sampler.dns_pool_size,
                    &mut rng,
                )
            };
            let tuples: Vec<TrainingTuple> = match &pool {
                Some(p) => p.install(|| batch.par_iter().enumerate().map(draw).collect::<Result<_>>())?,
                None => batch.iter().enumerate().map(draw).collect::<Result<_>>()?,
            };
            tuples_drawn += tuples.len() as u64;
            if binding.strategy == SamplingStrategy::Mns {
                tuples_repeated += tuples.iter().filter(|t| t.repeated_negatives() > 0).count() as u64;
            }

            let LossBatchResult { loss, mut gradients } = binding.batch_loss(&tuples, &model)?;
            epoch_loss += loss.as_f64();
            if config.weight_decay > 0.0 {
                for (kind, row, g) in gradients.iter_mut() {
                    let p = match kind {
                        TableKind::User => model.users.row(row),
                        TableKind::Item => model.items.row(row),
                    };
                    for (gk, pk) in g.iter_mut().zip(p) {
                        *gk += decay * *pk;
                    }
                }
            }
            if config.reduction == Reduction::Mean {
                gradients.scale(T::one() / T::of(tuples.len() as f64));
            }
            adam_step(&mut model.users, &mut model.items, &gradients, &mut adam, config.learning_rate)?;
        }
        epochs_run = epoch;

        let due = epoch % config.eval_every == 0 || epoch == config.max_epochs;
        let val = if can_validate && due {
            let report = evaluate(&model, dataset, Partition::Validation, &[20], model.dim())?;
            report.recall(20)
        } else {
            None
        };
        let train_loss = epoch_loss / pairs.len() as f64;
        log.records.push(EpochRecord {
            epoch,
            train_loss,
            val_recall_at_20: val,
            elapsed_ms: start.elapsed().as_millis() as u64,
        });
        log::debug!("epoch {epoch}: loss {train_loss:.6} val_recall@20 {val:?}");

        if let Some(v) = val {
            if best.as_ref().is_none_or(|(_, b, _)| v > *b) {
                best = Some((epoch, v, model.clone()));
                stale = 0;
            } else {
                stale += 1;
                if stale >= config.patience {
                    stopped_early = true;
                    break;
                }
            }
        }
    }

    let mns_repeat_rate = (binding.strategy == SamplingStrategy::Mns && tuples_drawn > 0)
        .then(|| tuples_repeated as f64 / tuples_drawn as f64);
    let (best_epoch, best_val_recall, model) = match best {
        Some((e, v, m)) => (Some(e), Some(v), m),
        None => (None, None, model),
    };
    Ok(TrainOutcome {
        model,
        log,
        best_epoch,
        best_val_recall,
        epochs_run,
        stopped_early,
        mns_repeat_rate,
    })
}
