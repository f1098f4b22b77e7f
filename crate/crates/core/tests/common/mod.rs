//! Independent reference implementations used as test oracles. Nothing here
//! calls into the library's loss, ranking or metric code.
#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Plain row-major matrix of f64.
#[derive(Debug, Clone)]
pub struct Mat {
    pub rows: usize,
    pub dim: usize,
    pub data: Vec<f64>,
}

impl Mat {
    pub fn random(rows: usize, dim: usize, scale: f64, rng: &mut ChaCha8Rng) -> Self {
        let data = (0..rows * dim).map(|_| rng.random_range(-scale..scale)).collect();
        Self { rows, dim, data }
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.dim..(r + 1) * self.dim]
    }
}

fn prefix_dot(a: &[f64], b: &[f64], cut: usize) -> f64 {
    let mut s = 0.0;
    for k in 0..cut {
        s += a[k] * b[k];
    }
    s
}

fn neg_log_sigmoid(x: f64) -> f64 {
    // -ln(1 / (1 + e^{-x})) = ln(1 + e^{-x})
    if x > 0.0 {
        (-x).exp().ln_1p()
    } else {
        -x + x.exp().ln_1p()
    }
}

/// A tuple as plain indices: `(user, positive, negatives per level)`.
pub type RawTuple = (usize, usize, Vec<usize>);

/// `Σ_tuples Σ_l w_l · -ln σ(r^l_ui - r^l_{u j_l})`. BPR is the case of a
/// single level at full dimension with weight 1; shared-negative MRL repeats
/// the negative.
pub fn oracle_loss(tuples: &[RawTuple], users: &Mat, items: &Mat, cuts: &[usize], weights: &[f64]) -> f64 {
    let mut total = 0.0;
    for (u, i, negs) in tuples {
        for (l, (&cut, &w)) in cuts.iter().zip(weights).enumerate() {
            let j = negs[l];
            let margin = prefix_dot(users.row(*u), items.row(*i), cut) - prefix_dot(users.row(*u), items.row(j), cut);
            total += w * neg_log_sigmoid(margin);
        }
    }
    total
}

/// Central finite differences of [`oracle_loss`] with respect to every
/// entry of both tables.
pub fn oracle_fd_gradient(
    tuples: &[RawTuple],
    users: &Mat,
    items: &Mat,
    cuts: &[usize],
    weights: &[f64],
    h: f64,
) -> (Vec<f64>, Vec<f64>) {
    let mut gu = vec![0.0; users.data.len()];
    let mut gi = vec![0.0; items.data.len()];
    let mut u = users.clone();
    for k in 0..u.data.len() {
        let x = u.data[k];
        u.data[k] = x + h;
        let plus = oracle_loss(tuples, &u, items, cuts, weights);
        u.data[k] = x - h;
        let minus = oracle_loss(tuples, &u, items, cuts, weights);
        u.data[k] = x;
        gu[k] = (plus - minus) / (2.0 * h);
    }
    let mut it = items.clone();
    for k in 0..it.data.len() {
        let x = it.data[k];
        it.data[k] = x + h;
        let plus = oracle_loss(tuples, users, &it, cuts, weights);
        it.data[k] = x - h;
        let minus = oracle_loss(tuples, users, &it, cuts, weights);
        it.data[k] = x;
        gi[k] = (plus - minus) / (2.0 * h);
    }
    (gu, gi)
}

/// Brute-force metrics: the rank of a test item is one plus the number of
/// eligible items that beat it (higher score, or equal score and lower
/// index). No sorting involved.
pub fn oracle_metrics(scores: &[f64], excluded: &[usize], test: &[usize], k: usize) -> (f64, f64) {
    let eligible = |i: usize| !excluded.contains(&i);
    let mut ranks: Vec<usize> = test
        .iter()
        .filter(|&&t| eligible(t))
        .map(|&t| {
            1 + (0..scores.len())
                .filter(|&o| eligible(o) && o != t)
                .filter(|&o| scores[o] > scores[t] || (scores[o] == scores[t] && o < t))
                .count()
        })
        .filter(|&rank| rank <= k)
        .collect();
    // Accumulate gains from the top of the list down.
    ranks.sort_unstable();
    let hits = ranks.len();
    let dcg: f64 = ranks.iter().map(|&rank| 1.0 / ((rank + 1) as f64).log2()).sum();
    let idcg: f64 = (1..=k.min(test.len())).map(|p| 1.0 / ((p + 1) as f64).log2()).sum();
    (hits as f64 / test.len() as f64, dcg / idcg)
}

pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-8)
}
