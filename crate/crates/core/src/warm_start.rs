//! Orthogonal-array initial designs.
//!
//! Exact arrays come from the Bose construction `OA(s^2, s+1, s, 2)` for a
//! prime `s`. Factors with fewer than `s` levels are collapsed through a seeded
//! balanced map `u -> perm(u) mod L`, which keeps every level equally
//! represented up to one row but breaks exact strength-2 balance unless
//! `L = s`. Rows are shuffled and levels permuted per seed; both operations
//! preserve orthogonality.

use std::collections::HashSet;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::constraints::ConstraintTree;
use crate::error::{Error, Result};
use crate::space::{Configuration, ParameterSpace};

pub const REJECTION_DRAWS: usize = 100_000;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct OrthogonalArray {
    pub rows: Vec<Vec<usize>>,
    pub levels: Vec<usize>,
    pub strength: usize,
    /// Every column pair covers every level pair equally often.
    pub exact: bool,
}

impl OrthogonalArray {
    pub fn runs(&self) -> usize {
        self.rows.len()
    }

    pub fn factors(&self) -> usize {
        self.levels.len()
    }

    /// Occurrence counts of each ordered level pair in columns `(i, j)`,
    /// indexed `[a * levels[j] + b]`.
    pub fn pair_counts(&self, i: usize, j: usize) -> Vec<usize> {
        let mut counts = vec![0; self.levels[i] * self.levels[j]];
        for r in &self.rows {
            counts[r[i] * self.levels[j] + r[j]] += 1;
        }
        counts
    }

    fn is_balanced(&self) -> bool {
        let n = self.rows.len();
        for i in 0..self.factors() {
            for j in i + 1..self.factors() {
                let cells = self.levels[i] * self.levels[j];
                if !n.is_multiple_of(cells) {
                    return false;
                }
                if self.pair_counts(i, j).iter().any(|&c| c != n / cells) {
                    return false;
                }
            }
        }
        true
    }
}

fn is_prime(n: usize) -> bool {
    n >= 2
        && (2..)
            .take_while(|d| d * d <= n)
            .all(|d| !n.is_multiple_of(d))
}

fn next_prime(mut n: usize) -> usize {
    n = n.max(2);
    while !is_prime(n) {
        n += 1;
    }
    n
}

/// Strength-2 orthogonal array for the given per-factor level counts.
pub fn generate_oa(level_counts: &[usize], seed: u64) -> Result<OrthogonalArray> {
    if level_counts.is_empty() || level_counts.contains(&0) {
        return Err(Error::InvalidArgument(
            "orthogonal array needs at least one factor and positive level counts".into(),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let f = level_counts.len();

    if f == 1 {
        let mut rows: Vec<Vec<usize>> = (0..level_counts[0]).map(|l| vec![l]).collect();
        rows.shuffle(&mut rng);
        return Ok(OrthogonalArray {
            rows,
            levels: level_counts.to_vec(),
            strength: 2,
            exact: true,
        });
    }

    let max_level = *level_counts.iter().max().expect("non-empty");
    let s = next_prime(max_level.max(f.saturating_sub(1)));

    // Bose: columns a + c*b (c = 0..s) followed by b, over all (a, b).
    let mut rows = Vec::with_capacity(s * s);
    for a in 0..s {
        for b in 0..s {
            let row: Vec<usize> = (0..f)
                .map(|col| if col < s { (a + col * b) % s } else { b })
                .collect();
            rows.push(row);
        }
    }

    let maps: Vec<Vec<usize>> = level_counts
        .iter()
        .map(|&l| {
            let mut perm: Vec<usize> = (0..s).collect();
            perm.shuffle(&mut rng);
            perm.into_iter().map(|u| u % l).collect()
        })
        .collect();
    for row in &mut rows {
        for (col, v) in row.iter_mut().enumerate() {
            *v = maps[col][*v];
        }
    }
    rows.shuffle(&mut rng);

    let mut oa = OrthogonalArray {
        rows,
        levels: level_counts.to_vec(),
        strength: 2,
        exact: false,
    };
    oa.exact = oa.is_balanced();
    Ok(oa)
}

/// Initial design: feasible, distinct OA rows in array order, topped up with
/// seeded rejection samples and truncated to `budget`.
pub fn warm_start_configs(
    space: &ParameterSpace,
    tree: &ConstraintTree,
    seed: u64,
    budget: usize,
) -> Result<Vec<Configuration>> {
    if budget == 0 {
        return Err(Error::InvalidArgument(
            "warm-start budget must be at least 1".into(),
        ));
    }
    let levels: Vec<usize> = space.params().iter().map(|p| p.level_count()).collect();
    let oa = generate_oa(&levels, seed)?;
    let mut seen = HashSet::new();
    let mut out = Vec::with_capacity(budget);
    for row in oa.rows {
        if out.len() == budget {
            break;
        }
        let cfg = Configuration::from_levels(row);
        if tree.exact(space, &cfg) && seen.insert(cfg.clone()) {
            out.push(cfg);
        }
    }
    if out.len() < budget {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_0a0a);
        for _ in 0..REJECTION_DRAWS {
            if out.len() == budget {
                break;
            }
            let cfg = space.random_configuration(&mut rng);
            if tree.exact(space, &cfg) && seen.insert(cfg.clone()) {
                out.push(cfg);
            }
        }
    }
    if out.is_empty() {
        return Err(Error::InfeasibleSpace {
            draws: REJECTION_DRAWS,
        });
    }
    if out.len() < budget {
        log::warn!(
            "warm start found only {} of {budget} feasible configurations",
            out.len()
        );
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::space::ParameterDef;

    #[test]
    fn bose_3333_is_exact() {
        let oa = generate_oa(&[3, 3, 3, 3], 11).unwrap();
        assert_eq!(oa.runs(), 9);
        assert!(oa.exact);
        for i in 0..4 {
            for j in i + 1..4 {
                assert!(oa.pair_counts(i, j).iter().all(|&c| c == 1));
            }
        }
    }

    #[test]
    fn two_level_three_factor() {
        let oa = generate_oa(&[2, 2, 2], 0).unwrap();
        assert_eq!(oa.runs(), 4);
        assert!(oa.exact);
    }

    #[test]
    fn single_factor() {
        let oa = generate_oa(&[5], 3).unwrap();
        let mut seen: Vec<usize> = oa.rows.iter().map(|r| r[0]).collect();
        seen.sort();
        assert_eq!(seen, vec![0, 1, 2, 3, 4]);
    }

    #[test]
    fn mixed_levels_are_near() {
        let oa = generate_oa(&[3, 4, 2], 5).unwrap();
        assert_eq!(oa.runs(), 25);
        assert!(!oa.exact);
        for (c, &l) in oa.levels.iter().enumerate() {
            assert!(oa.rows.iter().all(|r| r[c] < l));
        }
        assert_eq!(oa, generate_oa(&[3, 4, 2], 5).unwrap());
    }

    #[test]
    fn full_factorial_warm_start() {
        let space = ParameterSpace::new(
            "ff",
            vec![
                ParameterDef::ordinal("a", vec![1, 2], 1).unwrap(),
                ParameterDef::categorical("b", vec!["x", "y"], "x").unwrap(),
            ],
        )
        .unwrap();
        let tree = ConstraintTree::unconstrained(&space);
        let mut got = warm_start_configs(&space, &tree, 9, 4).unwrap();
        got.sort();
        let all: Vec<_> = (0..4u128).map(|i| space.config_at(i)).collect();
        assert_eq!(got, all);
        let one = warm_start_configs(&space, &tree, 9, 1).unwrap();
        let oa = generate_oa(&[2, 2], 9).unwrap();
        assert_eq!(one[0].levels(), oa.rows[0].as_slice());
    }
}
