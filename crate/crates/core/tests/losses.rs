mod common;

use mrlrec::losses::{bpr_loss, cosine, frozen_block_derivative, mrl_loss, mrl_mns_loss, GradientMap, LossKind, TableKind};
use mrlrec::types::{DimensionSchedule, ItemId, TrainingTuple, UserId};
use mrlrec::EmbeddingTable;
use proptest::prelude::*;

use common::{oracle_fd_gradient, oracle_loss, rng, Mat, RawTuple};

fn table(m: &Mat) -> EmbeddingTable<f64> {
    EmbeddingTable::from_vec(m.rows, m.dim, m.data.clone()).unwrap()
}

fn dense(g: &GradientMap<f64>, kind: TableKind, rows: usize, dim: usize) -> Vec<f64> {
    let mut out = vec![0.0; rows * dim];
    for (k, r, row) in g.iter() {
        if k == kind {
            out[r * dim..(r + 1) * dim].copy_from_slice(row);
        }
    }
    out
}

fn tuples(raw: &[RawTuple]) -> Vec<TrainingTuple> {
    raw.iter()
        .map(|(u, i, js)| TrainingTuple::new(UserId(*u as u32), ItemId(*i as u32), js.iter().map(|&j| ItemId(j as u32)).collect()))
        .collect()
}

fn assert_close(a: f64, b: f64, tol: f64) {
    assert!((a - b).abs() <= tol * a.abs().max(b.abs()).max(1.0), "{a} vs {b}");
}

#[test]
fn losses_match_oracle_value_and_gradient() {
    for d in [4usize, 16, 64] {
        let schedule = DimensionSchedule::geometric(d, 3).unwrap();
        for seed in 0..20 {
            let mut r = rng(seed * 31 + d as u64);
            let users = Mat::random(2, d, 0.7, &mut r);
            let items = Mat::random(5, d, 0.7, &mut r);
            let raw: Vec<RawTuple> = vec![(0, 0, vec![1, 2, 3]), (1, 4, vec![0, 0, 2]), (0, 0, vec![3, 4, 1])];
            let shared: Vec<RawTuple> = raw.iter().map(|(u, i, js)| (*u, *i, vec![js[0]; 3])).collect();
            let single: Vec<RawTuple> = raw.iter().map(|(u, i, js)| (*u, *i, vec![js[0]])).collect();
            let (tu, ti) = (table(&users), table(&items));
            let cases = [
                (bpr_loss(&tuples(&single), &tu, &ti).unwrap(), single.clone(), vec![d], vec![1.0]),
                (
                    mrl_loss(&tuples(&shared), &tu, &ti, &schedule).unwrap(),
                    shared.clone(),
                    schedule.sizes().to_vec(),
                    schedule.weights().to_vec(),
                ),
                (
                    mrl_mns_loss(&tuples(&raw), &tu, &ti, &schedule).unwrap(),
                    raw.clone(),
                    schedule.sizes().to_vec(),
                    schedule.weights().to_vec(),
                ),
            ];
            for (res, raw, cuts, w) in cases {
                assert_close(res.loss, oracle_loss(&raw, &users, &items, &cuts, &w), 1e-12);
                let (fu, fi) = oracle_fd_gradient(&raw, &users, &items, &cuts, &w, 1e-5);
                for (a, f) in dense(&res.gradients, TableKind::User, 2, d).iter().zip(&fu) {
                    assert_close(*a, *f, 1e-6);
                }
                for (a, f) in dense(&res.gradients, TableKind::Item, 5, d).iter().zip(&fi) {
                    assert_close(*a, *f, 1e-6);
                }
            }
        }
    }
}

#[test]
fn known_loss_values() {
    let users = EmbeddingTable::from_vec(1, 2, vec![1.0f64, 0.0]).unwrap();
    let items = EmbeddingTable::from_vec(2, 2, vec![1.0, 0.0, 0.0, 0.0]).unwrap();
    let t = [TrainingTuple::triplet(UserId(0), ItemId(0), ItemId(1))];
    // margin 1 → -ln σ(1)
    assert!((bpr_loss(&t, &users, &items).unwrap().loss - 0.313_261_687_518_222_8).abs() < 1e-15);

    let zeros = EmbeddingTable::<f64>::zeros(3, 64);
    let schedule = DimensionSchedule::new(&[4, 8, 16, 32, 64], 64).unwrap();
    let batch = [TrainingTuple::triplet(UserId(0), ItemId(1), ItemId(2))];
    let l = mrl_loss(&batch, &zeros, &zeros, &schedule).unwrap().loss;
    assert!((l - std::f64::consts::LN_2).abs() < 1e-15);
}

#[test]
fn huge_margins_stay_finite() {
    let users = EmbeddingTable::from_vec(1, 1, vec![1e3f32]).unwrap();
    let items = EmbeddingTable::from_vec(2, 1, vec![1e3f32, -1e3]).unwrap();
    for (i, j) in [(0, 1), (1, 0)] {
        let r = bpr_loss(&[TrainingTuple::triplet(UserId(0), ItemId(i), ItemId(j))], &users, &items).unwrap();
        assert!(r.loss.is_finite());
        assert!(r.gradients.iter().all(|(_, _, g)| g.iter().all(|x| x.is_finite())));
    }
}

#[test]
fn repeated_rows_accumulate() {
    let mut r = rng(4);
    let users = Mat::random(1, 4, 1.0, &mut r);
    let items = Mat::random(3, 4, 1.0, &mut r);
    let (tu, ti) = (table(&users), table(&items));
    let one = [TrainingTuple::triplet(UserId(0), ItemId(0), ItemId(1))];
    let two = [one[0].clone(), one[0].clone()];
    let a = bpr_loss(&one, &tu, &ti).unwrap();
    let b = bpr_loss(&two, &tu, &ti).unwrap();
    assert_eq!(b.loss, 2.0 * a.loss);
    for (kind, row, g) in a.gradients.iter() {
        let g2 = b.gradients.get(kind, row).unwrap();
        for (x, y) in g.iter().zip(g2) {
            assert_eq!(2.0 * x, *y);
        }
    }
}

#[test]
fn frozen_block_l5_l2_ratio() {
    let schedule = DimensionSchedule::new(&[4, 8, 16, 32, 64], 64).unwrap();
    let block = schedule.block(1, 2).unwrap();
    let mut r = rng(12);
    let mut users = vec![0.0f64; 64];
    let mut items = vec![0.0f64; 128];
    for k in block.clone() {
        users[k] = rand::Rng::random_range(&mut r, -1.0..1.0);
        items[k] = rand::Rng::random_range(&mut r, -1.0..1.0);
        items[64 + k] = rand::Rng::random_range(&mut r, -1.0..1.0);
    }
    let users = EmbeddingTable::from_vec(1, 64, users).unwrap();
    let items = EmbeddingTable::from_vec(2, 64, items).unwrap();
    let t = TrainingTuple::triplet(UserId(0), ItemId(0), ItemId(1));
    let b = frozen_block_derivative(LossKind::Bpr, &t, &users, &items, &schedule, 2).unwrap();
    let m = frozen_block_derivative(LossKind::Mrl, &t, &users, &items, &schedule, 2).unwrap();
    assert!(b.difference.abs() <= 1e-10);
    assert!(m.difference.abs() <= 1e-10);
    assert!((m.analytic / b.analytic - 0.8).abs() < 1e-12);
    assert!((cosine(&m.user_block_gradient, &b.user_block_gradient) - 1.0).abs() < 1e-9);
}

fn instance(seed: u64, d: usize, n_items: usize) -> (Mat, Mat) {
    let mut r = rng(seed);
    (Mat::random(2, d, 1.0, &mut r), Mat::random(n_items, d, 1.0, &mut r))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn mrl_single_level_is_bpr(seed in any::<u64>(), d in 1usize..24, pairs in prop::collection::vec((0usize..2, 0usize..6, 0usize..6), 1..12)) {
        let (users, items) = instance(seed, d, 6);
        let raw: Vec<RawTuple> = pairs.into_iter().filter(|(_, i, j)| i != j).map(|(u, i, j)| (u, i, vec![j])).collect();
        let batch = tuples(&raw);
        let (tu, ti) = (table(&users), table(&items));
        let b = bpr_loss(&batch, &tu, &ti).unwrap();
        let m = mrl_loss(&batch, &tu, &ti, &DimensionSchedule::single(d).unwrap()).unwrap();
        prop_assert!((b.loss - m.loss).abs() <= 1e-12);
        for kind in [TableKind::User, TableKind::Item] {
            let rows = if kind == TableKind::User { 2 } else { 6 };
            for (x, y) in dense(&b.gradients, kind, rows, d).iter().zip(dense(&m.gradients, kind, rows, d)) {
                prop_assert!((x - y).abs() <= 1e-12);
            }
        }
    }

    #[test]
    fn mns_with_identical_negatives_is_mrl(seed in any::<u64>(), levels in 1usize..5, pairs in prop::collection::vec((0usize..2, 0usize..6, 0usize..6), 1..12)) {
        let d = 2 << levels;
        let (users, items) = instance(seed, d, 6);
        let schedule = DimensionSchedule::geometric(d, levels).unwrap();
        let (tu, ti) = (table(&users), table(&items));
        let shared: Vec<TrainingTuple> = pairs.iter().map(|&(u, i, j)| TrainingTuple::triplet(UserId(u as u32), ItemId(i as u32), ItemId(j as u32))).collect();
        let repeated: Vec<TrainingTuple> = shared.iter().map(|t| TrainingTuple::new(t.user, t.positive, vec![t.negatives[0]; levels])).collect();
        let a = mrl_loss(&shared, &tu, &ti, &schedule).unwrap();
        let b = mrl_mns_loss(&repeated, &tu, &ti, &schedule).unwrap();
        prop_assert_eq!(a.loss.to_bits(), b.loss.to_bits());
        prop_assert_eq!(a.gradients, b.gradients);
    }

    #[test]
    fn larger_margin_lowers_every_loss(seed in any::<u64>(), bump in 0.01f64..3.0) {
        let d = 8;
        let (users, items) = instance(seed, d, 3);
        let schedule = DimensionSchedule::new(&[2, 4, 8], 8).unwrap();
        let mut moved = items.clone();
        // Shift the positive along e_u: every prefix margin grows.
        for k in 0..d {
            moved.data[k] += bump * users.data[k];
        }
        let nonzero = (0..2).all(|k| users.data[k] != 0.0);
        prop_assume!(nonzero);
        let (tu, a, b) = (table(&users), table(&items), table(&moved));
        let trip = [TrainingTuple::triplet(UserId(0), ItemId(0), ItemId(1))];
        let mns = [TrainingTuple::new(UserId(0), ItemId(0), vec![ItemId(1), ItemId(2), ItemId(1)])];
        prop_assert!(bpr_loss(&trip, &tu, &b).unwrap().loss < bpr_loss(&trip, &tu, &a).unwrap().loss);
        prop_assert!(mrl_loss(&trip, &tu, &b, &schedule).unwrap().loss < mrl_loss(&trip, &tu, &a, &schedule).unwrap().loss);
        prop_assert!(mrl_mns_loss(&mns, &tu, &b, &schedule).unwrap().loss < mrl_mns_loss(&mns, &tu, &a, &schedule).unwrap().loss);
    }

    #[test]
    fn frozen_block_closed_forms(seed in any::<u64>(), levels in 1usize..6) {
        let schedule = DimensionSchedule::geometric(2 << levels, levels).unwrap();
        let d = schedule.full_dim();
        let mut r = rng(seed);
        for l in 1..=levels {
            let block = schedule.block(l - 1, l).unwrap();
            let mut u = vec![0.0f64; d];
            let mut it = vec![0.0f64; d * (levels + 1)];
            for k in block.clone() {
                u[k] = rand::Rng::random_range(&mut r, -1.0..1.0);
                for row in 0..=levels {
                    it[row * d + k] = rand::Rng::random_range(&mut r, -1.0..1.0);
                }
            }
            let users = EmbeddingTable::from_vec(1, d, u).unwrap();
            let items = EmbeddingTable::from_vec(levels + 1, d, it).unwrap();
            let trip = TrainingTuple::triplet(UserId(0), ItemId(0), ItemId(1));
            let mns = TrainingTuple::new(UserId(0), ItemId(0), (1..=levels as u32).map(ItemId).collect());
            let b = frozen_block_derivative(LossKind::Bpr, &trip, &users, &items, &schedule, l).unwrap();
            let m = frozen_block_derivative(LossKind::Mrl, &trip, &users, &items, &schedule, l).unwrap();
            let n = frozen_block_derivative(LossKind::MrlMns, &mns, &users, &items, &schedule, l).unwrap();
            let ratio = (levels - l + 1) as f64 / levels as f64;
            for rep in [&b, &m, &n] {
                prop_assert!(rep.difference.abs() <= 1e-10);
                prop_assert!((rep.analytic - rep.finite_difference).abs() <= 1e-6 * rep.analytic.abs().max(1.0));
            }
            for (x, y) in b.user_block_gradient.iter().zip(&m.user_block_gradient) {
                prop_assert!((y - ratio * x).abs() <= 1e-9);
            }
        }
    }
}
