//! Numerical check of the frozen-block gradient structure: with every block
//! but one zeroed, the MRL gradient is the BPR gradient scaled by
//! `(L - l + 1) / L`, while MNS with distinct per-level negatives bends its
//! direction.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::digest::derive_seed;
use crate::embeddings::EmbeddingTable;
use crate::error::Result;
use crate::losses::{cosine, frozen_block_derivative, LossKind};
use crate::scalar::dot;
use crate::types::{DimensionSchedule, ItemId, TrainingTuple, UserId};

/// Schedule lengths exercised per trial.
pub const THEOREM_LEVELS: [usize; 3] = [2, 3, 5];

pub const COEFFICIENT_TOL: f64 = 1e-9;
pub const CLOSED_FORM_TOL: f64 = 1e-9;
pub const FINITE_DIFFERENCE_TOL: f64 = 1e-6;
pub const COLLINEAR_TOL: f64 = 1e-12;
pub const DISPARITY_MARGIN: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CheckSummary {
    pub name: &'static str,
    pub cases: usize,
    pub failures: usize,
    /// Largest observed error, or the largest cosine for the disparity check.
    pub worst: f64,
    pub threshold: f64,
}

impl CheckSummary {
    fn new(name: &'static str, threshold: f64) -> Self {
        Self {
            name,
            cases: 0,
            failures: 0,
            worst: 0.0,
            threshold,
        }
    }

    /// Records `value`, which passes when `<= threshold`.
    fn record(&mut self, value: f64) {
        self.cases += 1;
        if value > self.worst || value.is_nan() {
            self.worst = value;
        }
        if !(value <= self.threshold) {
            self.failures += 1;
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TheoremReport {
    pub seed: u64,
    pub trials: usize,
    pub levels: Vec<usize>,
    pub checks: Vec<CheckSummary>,
    pub failures: usize,
    pub passed: bool,
}

impl TheoremReport {
    pub fn check(&self, name: &str) -> Option<&CheckSummary> {
        self.checks.iter().find(|c| c.name == name)
    }
}

fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1.0)
}

/// Random schedule of `levels` blocks, each 2 to 4 wide.
fn random_schedule(levels: usize, rng: &mut ChaCha8Rng) -> Result<DimensionSchedule> {
    let mut sizes = Vec::with_capacity(levels);
    let mut acc = 0;
    for _ in 0..levels {
        acc += rng.random_range(2..=4);
        sizes.push(acc);
    }
    DimensionSchedule::new(&sizes, acc)
}

fn block_vector(dim: usize, block: &std::ops::Range<usize>, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let mut v = vec![0.0; dim];
    for x in &mut v[block.clone()] {
        *x = rng.random_range(-1.0..1.0);
    }
    v
}

fn normalized(mut v: Vec<f64>) -> Vec<f64> {
    let n = dot(&v, &v).sqrt();
    v.iter_mut().for_each(|x| *x /= n);
    v
}

struct Instance {
    users: EmbeddingTable<f64>,
    items: EmbeddingTable<f64>,
}

/// Item rows: 0 = positive, 1.. = negatives. Only the block is populated.
fn frozen_instance(user: Vec<f64>, rows: Vec<Vec<f64>>) -> Result<Instance> {
    let dim = user.len();
    let users = EmbeddingTable::from_vec(1, dim, user)?;
    let n = rows.len();
    let items = EmbeddingTable::from_vec(n, dim, rows.into_iter().flatten().collect())?;
    Ok(Instance { users, items })
}

/// Runs `trials` randomized trials. Each trial covers every level `l` of a
/// random schedule for each `L` in [`THEOREM_LEVELS`].
pub fn verify_theorem(seed: u64, trials: usize) -> Result<TheoremReport> {
    let mut closed = CheckSummary::new("closed_form", CLOSED_FORM_TOL);
    let mut coefficient = CheckSummary::new("mrl_coefficient", COEFFICIENT_TOL);
    let mut collinear = CheckSummary::new("mrl_collinearity", COLLINEAR_TOL);
    let mut fd = CheckSummary::new("finite_difference", FINITE_DIFFERENCE_TOL);
    let mut disparity = CheckSummary::new("mns_disparity", 1.0 - DISPARITY_MARGIN);

    for trial in 0..trials {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, &format!("theorem.{trial}")));
        for &levels in &THEOREM_LEVELS {
            let schedule = random_schedule(levels, &mut rng)?;
            let dim = schedule.full_dim();
            for level in 1..=levels {
                let block = schedule.block(level - 1, level)?;
                let eu = block_vector(dim, &block, &mut rng);
                let ei = block_vector(dim, &block, &mut rng);
                let ej = block_vector(dim, &block, &mut rng);
                let inst = frozen_instance(eu.clone(), vec![ei.clone(), ej])?;
                let triplet = TrainingTuple::triplet(UserId(0), ItemId(0), ItemId(1));
                let bpr = frozen_block_derivative(LossKind::Bpr, &triplet, &inst.users, &inst.items, &schedule, level)?;
                let mrl = frozen_block_derivative(LossKind::Mrl, &triplet, &inst.users, &inst.items, &schedule, level)?;

                let ratio = (levels - level + 1) as f64 / levels as f64;
                let coef_err = bpr
                    .user_block_gradient
                    .iter()
                    .zip(&mrl.user_block_gradient)
                    .chain(bpr.positive_block_gradient.iter().zip(&mrl.positive_block_gradient))
                    .map(|(b, m)| (m - ratio * b).abs())
                    .fold(0.0, f64::max);
                coefficient.record(coef_err);
                coefficient.record(rel_err(mrl.analytic, ratio * bpr.analytic));
                collinear.record(1.0 - cosine(&mrl.user_block_gradient, &bpr.user_block_gradient));

                // MNS with distinct negatives; levels below `level` see only
                // zeros in this block, so j_1..j_{l-1} are arbitrary.
                let va = normalized(block_vector(dim, &block, &mut rng));
                let mut vb = block_vector(dim, &block, &mut rng);
                let proj = dot(&vb, &va);
                vb.iter_mut().zip(&va).for_each(|(b, a)| *b -= proj * a);
                let vb = normalized(vb);
                let mut rows = vec![ei.clone()];
                for k in 1..=levels {
                    let v = if k == levels { &vb } else { &va };
                    rows.push(ei.iter().zip(v).map(|(i, d)| i - d).collect());
                }
                let mns_inst = frozen_instance(eu.clone(), rows)?;
                let tuple = TrainingTuple::new(
                    UserId(0),
                    ItemId(0),
                    (1..=levels as u32).map(ItemId).collect(),
                );
                let mns = frozen_block_derivative(
                    LossKind::MrlMns,
                    &tuple,
                    &mns_inst.users,
                    &mns_inst.items,
                    &schedule,
                    level,
                )?;
                let last = TrainingTuple::triplet(UserId(0), ItemId(0), ItemId(levels as u32));
                let bpr_last =
                    frozen_block_derivative(LossKind::Bpr, &last, &mns_inst.users, &mns_inst.items, &schedule, level)?;
                if level < levels {
                    disparity.record(cosine(&mns.user_block_gradient, &bpr_last.user_block_gradient));
                }

                for r in [&bpr, &mrl, &mns, &bpr_last] {
                    closed.record(r.difference.abs());
                    fd.record(rel_err(r.analytic, r.finite_difference));
                }
            }
        }
    }

    let checks = vec![closed, coefficient, collinear, fd, disparity];
    let failures = checks.iter().map(|c| c.failures).sum();
    Ok(TheoremReport {
        seed,
        trials,
        levels: THEOREM_LEVELS.to_vec(),
        checks,
        failures,
        passed: failures == 0,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn small_run_passes() {
        let r = verify_theorem(7, 10).unwrap();
        assert!(r.passed, "{r:#?}");
        assert_eq!(r.check("mrl_coefficient").unwrap().cases, 10 * (2 + 3 + 5) * 2);
        assert_eq!(r.check("mns_disparity").unwrap().cases, 10 * (1 + 2 + 4));
    }

    #[test]
    fn deterministic() {
        assert_eq!(verify_theorem(3, 4).unwrap(), verify_theorem(3, 4).unwrap());
    }
}
