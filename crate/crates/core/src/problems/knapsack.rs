//! 0/1 knapsack by depth-first branch and bound.
//!
//! Items are explored in decreasing value/weight order; the bound at each
//! node is the greedy fractional relaxation of the remaining items.

use rand::Rng;

use super::{check_len, dot, DecisionOracle, DecisionVector, SolveStatus};
use crate::prob::Seed;
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct KnapsackInstance {
    weights: Vec<f64>,
    capacity: f64,
}

impl KnapsackInstance {
    pub fn new(weights: Vec<f64>, capacity: f64) -> Result<Self> {
        if weights.is_empty() {
            return Err(Error::invalid("knapsack needs at least one item"));
        }
        if weights.iter().any(|w| !(w.is_finite() && *w > 0.0)) {
            return Err(Error::invalid("knapsack weights must be positive"));
        }
        if !(capacity.is_finite() && capacity >= 0.0) {
            return Err(Error::invalid(format!(
                "knapsack capacity must be nonnegative, got {capacity}"
            )));
        }
        Ok(KnapsackInstance { weights, capacity })
    }

    /// Weights `U[1, w_max]` with capacity half the total weight.
    pub fn paper_replication(d: usize, w_max: f64, seed: Seed) -> Result<Self> {
        Self::random(d, w_max, 0.5, seed)
    }

    /// Weights `U[1, w_max]` with capacity `fraction * total weight`.
    pub fn random(d: usize, w_max: f64, fraction: f64, seed: Seed) -> Result<Self> {
        if !(w_max >= 1.0) {
            return Err(Error::invalid(format!("w_max must be >= 1, got {w_max}")));
        }
        if !(fraction >= 0.0) {
            return Err(Error::invalid("capacity fraction must be nonnegative"));
        }
        let mut rng = seed.rng();
        let weights: Vec<f64> = (0..d).map(|_| rng.random_range(1.0..=w_max)).collect();
        let capacity = fraction * weights.iter().sum::<f64>();
        Self::new(weights, capacity)
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn capacity(&self) -> f64 {
        self.capacity
    }

    pub fn dim(&self) -> usize {
        self.weights.len()
    }

    pub fn residual(&self, z: &[f64]) -> f64 {
        let load = dot(&self.weights, z);
        let mut worst = (load - self.capacity).max(0.0);
        for &v in z {
            // distance to {0, 1}
            worst = worst.max(v.abs().min((v - 1.0).abs()));
        }
        worst
    }
}

struct Search<'a> {
    items: Vec<usize>,
    values: &'a [f64],
    weights: &'a [f64],
    take: Vec<bool>,
    best_take: Vec<bool>,
    best: f64,
}

impl Search<'_> {
    /// Greedy fractional bound over `items[pos..]`.
    fn bound(&self, pos: usize, mut room: f64, value: f64) -> f64 {
        let mut bound = value;
        for &i in &self.items[pos..] {
            let w = self.weights[i];
            if w <= room {
                room -= w;
                bound += self.values[i];
            } else {
                bound += self.values[i] * room / w;
                break;
            }
        }
        bound
    }

    fn dfs(&mut self, pos: usize, room: f64, value: f64) {
        if value > self.best {
            self.best = value;
            self.best_take.copy_from_slice(&self.take);
        }
        if pos == self.items.len() || self.bound(pos, room, value) <= self.best {
            return;
        }
        let i = self.items[pos];
        let w = self.weights[i];
        if w <= room {
            self.take[pos] = true;
            self.dfs(pos + 1, room - w, value + self.values[i]);
            self.take[pos] = false;
        }
        self.dfs(pos + 1, room, value);
    }
}

/// Exact maximizer of `values'z` subject to `weights'z <= capacity`,
/// `z` binary. Items with nonpositive value are never selected.
pub fn solve_knapsack(inst: &KnapsackInstance, values: &[f64]) -> Result<DecisionVector> {
    check_len(values, inst.dim())?;
    let weights = &inst.weights;
    let mut items: Vec<usize> = (0..inst.dim())
        .filter(|&i| values[i] > 0.0 && weights[i] <= inst.capacity)
        .collect();
    items.sort_by(|&a, &b| {
        (values[b] / weights[b])
            .total_cmp(&(values[a] / weights[a]))
            .then(a.cmp(&b))
    });
    let k = items.len();
    let mut search = Search {
        items,
        values,
        weights,
        take: vec![false; k],
        best_take: vec![false; k],
        best: 0.0,
    };
    search.dfs(0, inst.capacity, 0.0);
    let mut z = vec![0.0; inst.dim()];
    for (pos, &i) in search.items.iter().enumerate() {
        if search.best_take[pos] {
            z[i] = 1.0;
        }
    }
    Ok(DecisionVector {
        objective: dot(values, &z),
        z,
        status: SolveStatus::Optimal,
    })
}

/// Minimization view: cost `c` means item values `-c`.
impl DecisionOracle for KnapsackInstance {
    fn dim(&self) -> usize {
        self.weights.len()
    }

    fn solve(&self, c: &[f64]) -> Result<DecisionVector> {
        let values: Vec<f64> = c.iter().map(|v| -v).collect();
        let mut out = solve_knapsack(self, &values)?;
        out.objective = -out.objective;
        Ok(out)
    }

    fn feasibility_residual(&self, z: &[f64]) -> f64 {
        self.residual(z)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn small_example() {
        let k = KnapsackInstance::new(vec![1.0, 2.0, 3.0], 5.0).unwrap();
        let z = solve_knapsack(&k, &[6.0, 10.0, 12.0]).unwrap();
        assert_eq!(z.z, vec![0.0, 1.0, 1.0]);
        assert_eq!(z.objective, 22.0);
    }

    #[test]
    fn zero_capacity() {
        let k = KnapsackInstance::new(vec![1.0, 2.0], 0.0).unwrap();
        let z = solve_knapsack(&k, &[5.0, 5.0]).unwrap();
        assert_eq!(z.z, vec![0.0, 0.0]);
        assert_eq!(z.objective, 0.0);
    }

    #[test]
    fn ample_capacity_takes_positive_items() {
        let k = KnapsackInstance::new(vec![1.0, 2.0, 3.0], 6.0).unwrap();
        let z = solve_knapsack(&k, &[1.0, 2.0, 3.0]).unwrap();
        assert_eq!(z.z, vec![1.0, 1.0, 1.0]);
        let z = solve_knapsack(&k, &[1.0, -2.0, 3.0]).unwrap();
        assert_eq!(z.z, vec![1.0, 0.0, 1.0]);
    }

    #[test]
    fn paper_constructor_half_capacity() {
        let k = KnapsackInstance::paper_replication(10, 10.0, Seed(4)).unwrap();
        let total: f64 = k.weights().iter().sum();
        assert!((k.capacity() - total / 2.0).abs() < 1e-12);
        assert!(k.weights().iter().all(|&w| (1.0..=10.0).contains(&w)));
    }

    #[test]
    fn oracle_uses_negated_costs() {
        let k = KnapsackInstance::new(vec![1.0, 2.0, 3.0], 5.0).unwrap();
        let z = k.solve(&[-6.0, -10.0, -12.0]).unwrap();
        assert_eq!(z.z, vec![0.0, 1.0, 1.0]);
        assert_eq!(z.objective, -22.0);
    }
}
