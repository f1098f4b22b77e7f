//! Synthetic implicit-feedback data with a planted category tree.
//!
//! Items sit on the leaves of a `branching`-ary tree of depth `tree_depth`;
//! every user prefers one root-to-leaf path. Non-noise interactions are drawn
//! from the subtree shared with the user's path at a random depth, with
//! deeper (more specific) matches weighted more heavily, so coarse structure
//! explains most of the signal and fine structure the rest.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{InteractionDataset, KeyIndex};
use crate::error::{Error, Result};
use crate::types::{ItemId, UserId};

pub const HIERARCHY_FILE: &str = "hierarchy.tsv";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub n_users: usize,
    pub n_items: usize,
    pub tree_depth: usize,
    pub branching: usize,
    pub interactions_per_user: usize,
    pub noise_rate: f64,
    pub seed: u64,
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidSpec(msg));
        if self.tree_depth < 1 {
            return bad("tree_depth must be >= 1".into());
        }
        if self.branching < 2 {
            return bad("branching must be >= 2".into());
        }
        if !(0.0..=1.0).contains(&self.noise_rate) {
            return bad(format!("noise_rate {} outside [0, 1]", self.noise_rate));
        }
        if self.n_users == 0 || self.n_items == 0 || self.interactions_per_user == 0 {
            return bad("n_users, n_items and interactions_per_user must be positive".into());
        }
        if self.leaf_count().is_none() {
            return bad("branching^tree_depth overflows".into());
        }
        Ok(())
    }

    fn leaf_count(&self) -> Option<usize> {
        self.branching.checked_pow(u32::try_from(self.tree_depth).ok()?)
    }

    /// Noisy interactions per user: `round(noise_rate * interactions_per_user)`.
    pub fn noise_per_user(&self) -> usize {
        (self.noise_rate * self.interactions_per_user as f64).round() as usize
    }
}

/// Planted tree paths; `path[k]` is the child index taken at depth `k + 1`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GroundTruthHierarchy {
    pub tree_depth: usize,
    pub branching: usize,
    pub user_paths: Vec<Vec<u32>>,
    pub item_paths: Vec<Vec<u32>>,
}

impl GroundTruthHierarchy {
    /// Length of the common prefix of a user's and an item's path.
    pub fn shared_depth(&self, user: UserId, item: ItemId) -> usize {
        self.user_paths[user.index()]
            .iter()
            .zip(&self.item_paths[item.index()])
            .take_while(|(a, b)| a == b)
            .count()
    }

    /// Writes `entity_kind<TAB>dense_index<TAB>path` rows, path slash-joined.
    pub fn write_tsv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = File::create(path).map_err(|e| Error::file(path, e))?;
        let mut w = BufWriter::new(file);
        let join = |p: &[u32]| {
            p.iter()
                .map(|c| c.to_string())
                .collect::<Vec<_>>()
                .join("/")
        };
        for (idx, p) in self.user_paths.iter().enumerate() {
            writeln!(w, "user\t{idx}\t{}", join(p))?;
        }
        for (idx, p) in self.item_paths.iter().enumerate() {
            writeln!(w, "item\t{idx}\t{}", join(p))?;
        }
        w.flush()?;
        Ok(())
    }
}

fn leaf_path(mut leaf: usize, depth: usize, branching: usize) -> Vec<u32> {
    let mut path = vec![0u32; depth];
    for slot in path.iter_mut().rev() {
        *slot = (leaf % branching) as u32;
        leaf /= branching;
    }
    path
}

/// Generates a dataset and its planted hierarchy. Users are keyed `u{n}` and
/// items `i{n}` with dense indices equal to `n`.
pub fn generate_synthetic(spec: &SyntheticSpec) -> Result<(InteractionDataset, GroundTruthHierarchy)> {
    spec.validate()?;
    let depth = spec.tree_depth;
    let b = spec.branching;
    let n_leaves = spec.leaf_count().unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);

    // Balanced leaf assignment, shuffled so item indices carry no structure.
    let mut item_leaf: Vec<usize> = (0..spec.n_items).map(|i| i % n_leaves).collect();
    item_leaf.shuffle(&mut rng);

    // members[k][node]: items whose depth-(k+1) ancestor is `node`.
    let mut members: Vec<Vec<Vec<ItemId>>> = (1..=depth)
        .map(|k| vec![Vec::new(); b.pow(k as u32)])
        .collect();
    for (i, &leaf) in item_leaf.iter().enumerate() {
        for k in 1..=depth {
            let node = leaf / b.pow((depth - k) as u32);
            members[k - 1][node].push(ItemId::from(i));
        }
    }

    let n_noise = spec.noise_per_user();
    let n_path = spec.interactions_per_user - n_noise;
    if spec.interactions_per_user > spec.n_items {
        return Err(Error::InfeasibleSpec(format!(
            "{} interactions per user but only {} items",
            spec.interactions_per_user, spec.n_items
        )));
    }
    let smallest_top = members[0].iter().map(Vec::len).min().unwrap_or(0);
    if n_path > smallest_top {
        return Err(Error::InfeasibleSpec(format!(
            "{n_path} on-path interactions per user but a top-level category holds only {smallest_top} items"
        )));
    }

    // Deeper matches are twice as likely as the next shallower one.
    let depth_weights: Vec<f64> = (1..=depth).map(|k| (1u64 << (k - 1)) as f64).collect();
    let weight_total: f64 = depth_weights.iter().sum();

    let mut user_leaf = Vec::with_capacity(spec.n_users);
    let mut pairs = Vec::with_capacity(spec.n_users * spec.interactions_per_user);
    let mut chosen = vec![false; spec.n_items];
    for u in 0..spec.n_users {
        let leaf = rng.random_range(0..n_leaves);
        user_leaf.push(leaf);
        let user = UserId::from(u);
        let mut picked: Vec<ItemId> = Vec::with_capacity(spec.interactions_per_user);

        for _ in 0..n_path {
            let mut draw = rng.random::<f64>() * weight_total;
            let mut k = depth;
            for (idx, w) in depth_weights.iter().enumerate() {
                if draw < *w {
                    k = idx + 1;
                    break;
                }
                draw -= w;
            }
            // Fall back to shallower subtrees when the chosen one is used up.
            let item = loop {
                let node = leaf / b.pow((depth - k) as u32);
                let free: Vec<ItemId> = members[k - 1][node]
                    .iter()
                    .copied()
                    .filter(|i| !chosen[i.index()])
                    .collect();
                if let Some(&item) = free.choose(&mut rng) {
                    break item;
                }
                if k == 1 {
                    return Err(Error::InfeasibleSpec(format!(
                        "user {u} exhausted its top-level category"
                    )));
                }
                k -= 1;
            };
            chosen[item.index()] = true;
            picked.push(item);
        }

        for _ in 0..n_noise {
            let item = loop {
                let cand = rng.random_range(0..spec.n_items);
                if !chosen[cand] {
                    break ItemId::from(cand);
                }
            };
            chosen[item.index()] = true;
            picked.push(item);
        }

        for item in picked {
            chosen[item.index()] = false;
            pairs.push((user, item));
        }
    }

    let dataset = InteractionDataset::from_pairs(
        KeyIndex::sequential("u", spec.n_users),
        KeyIndex::sequential("i", spec.n_items),
        pairs,
    )?;
    let hierarchy = GroundTruthHierarchy {
        tree_depth: depth,
        branching: b,
        user_paths: user_leaf.iter().map(|&l| leaf_path(l, depth, b)).collect(),
        item_paths: item_leaf.iter().map(|&l| leaf_path(l, depth, b)).collect(),
    };
    Ok((dataset, hierarchy))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec() -> SyntheticSpec {
        SyntheticSpec {
            n_users: 200,
            n_items: 270,
            tree_depth: 3,
            branching: 3,
            interactions_per_user: 20,
            noise_rate: 0.1,
            seed: 5,
        }
    }

    #[test]
    fn leaf_paths_are_base_b_digits() {
        assert_eq!(leaf_path(0, 3, 3), vec![0, 0, 0]);
        assert_eq!(leaf_path(5, 3, 3), vec![0, 1, 2]);
        assert_eq!(leaf_path(26, 3, 3), vec![2, 2, 2]);
    }

    #[test]
    fn noiseless_depth_two_stays_in_top_category() {
        let s = SyntheticSpec {
            n_users: 50,
            n_items: 40,
            tree_depth: 2,
            branching: 2,
            interactions_per_user: 6,
            noise_rate: 0.0,
            seed: 1,
        };
        let (ds, h) = generate_synthetic(&s).unwrap();
        for &(u, i) in ds.interactions() {
            assert!(h.shared_depth(u, i) >= 1);
        }
    }

    #[test]
    fn same_seed_same_data() {
        let a = generate_synthetic(&spec()).unwrap();
        let b = generate_synthetic(&spec()).unwrap();
        assert_eq!(a, b);
        let c = generate_synthetic(&SyntheticSpec { seed: 6, ..spec() }).unwrap();
        assert_ne!(a.0, c.0);
    }

    #[test]
    fn path_consistency_at_least_ninety_percent() {
        let (ds, h) = generate_synthetic(&spec()).unwrap();
        assert_eq!(ds.n_users(), 200);
        assert_eq!(ds.interactions().len(), 200 * 20);
        let mut on_path = vec![0usize; 200];
        let mut total = vec![0usize; 200];
        for &(u, i) in ds.interactions() {
            total[u.index()] += 1;
            if h.shared_depth(u, i) >= 1 {
                on_path[u.index()] += 1;
            }
        }
        for u in 0..200 {
            assert_eq!(total[u], 20);
            assert!(on_path[u] * 10 >= total[u] * 9, "user {u}: {}/{}", on_path[u], total[u]);
        }
    }

    #[test]
    fn deeper_matches_dominate() {
        let (ds, h) = generate_synthetic(&spec()).unwrap();
        let leaf_hits = ds
            .interactions()
            .iter()
            .filter(|&&(u, i)| h.shared_depth(u, i) == 3)
            .count();
        // 4/7 of on-path draws target the leaf (minus exhaustion fallback).
        assert!(leaf_hits as f64 > 0.3 * ds.interactions().len() as f64);
    }

    #[test]
    fn infeasible_and_invalid_specs() {
        let s = SyntheticSpec {
            interactions_per_user: 100,
            noise_rate: 0.0,
            ..spec()
        };
        assert!(matches!(generate_synthetic(&s), Err(Error::InfeasibleSpec(_))));
        let s = SyntheticSpec {
            interactions_per_user: 300,
            ..spec()
        };
        assert!(matches!(generate_synthetic(&s), Err(Error::InfeasibleSpec(_))));
        assert!(matches!(
            generate_synthetic(&SyntheticSpec { branching: 1, ..spec() }),
            Err(Error::InvalidSpec(_))
        ));
        assert!(matches!(
            generate_synthetic(&SyntheticSpec { tree_depth: 0, ..spec() }),
            Err(Error::InvalidSpec(_))
        ));
        assert!(matches!(
            generate_synthetic(&SyntheticSpec { noise_rate: 1.5, ..spec() }),
            Err(Error::InvalidSpec(_))
        ));
    }

    #[test]
    fn hierarchy_tsv_layout() {
        let s = SyntheticSpec {
            n_users: 2,
            n_items: 4,
            tree_depth: 2,
            branching: 2,
            interactions_per_user: 1,
            noise_rate: 0.0,
            seed: 0,
        };
        let (_, h) = generate_synthetic(&s).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join(HIERARCHY_FILE);
        h.write_tsv(&path).unwrap();
        let text = std::fs::read_to_string(path).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines.len(), 6);
        assert!(lines[0].starts_with("user\t0\t"));
        assert!(lines[2].starts_with("item\t0\t"));
        let path_field = lines[2].split('\t').nth(2).unwrap();
        assert_eq!(path_field.split('/').count(), 2);
    }
}
