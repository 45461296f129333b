//! Independent oracles shared by integration tests.

use nalgebra::{DMatrix, DVector};

/// Minimum of `c'z` over all vertices of `{Az <= b, z >= 0}`, found by
/// solving every `n`-subset of the `d + n` constraints as equalities.
pub fn vertex_enumeration(a: &DMatrix<f64>, b: &[f64], c: &[f64]) -> f64 {
    let (d, n) = a.shape();
    let total = d + n;
    let row = |k: usize| -> (Vec<f64>, f64) {
        if k < d {
            (a.row(k).iter().copied().collect(), b[k])
        } else {
            let mut r = vec![0.0; n];
            r[k - d] = -1.0;
            (r, 0.0)
        }
    };
    let mut best = f64::INFINITY;
    let mut subset: Vec<usize> = (0..n).collect();
    loop {
        let m = DMatrix::from_fn(n, n, |i, j| row(subset[i]).0[j]);
        let rhs = DVector::from_iterator(n, subset.iter().map(|&k| row(k).1));
        if let Some(z) = m.clone().lu().solve(&rhs) {
            let feasible = (0..total).all(|k| {
                let (r, h) = row(k);
                r.iter().zip(z.iter()).map(|(x, y)| x * y).sum::<f64>() <= h + 1e-9
            });
            let exact = (m * &z - &rhs).amax() < 1e-9;
            if feasible && exact {
                best = best.min(c.iter().zip(z.iter()).map(|(x, y)| x * y).sum());
            }
        }
        // next combination in lexicographic order
        let Some(i) = (0..n).rev().find(|&i| subset[i] < i + total - n) else {
            return best;
        };
        subset[i] += 1;
        for j in i + 1..n {
            subset[j] = subset[j - 1] + 1;
        }
    }
}

pub fn brute_force_knapsack(w: &[f64], cap: f64, v: &[f64]) -> f64 {
    let d = w.len();
    let mut best = 0.0_f64;
    for mask in 0u32..(1 << d) {
        let (mut wt, mut val) = (0.0, 0.0);
        for i in 0..d {
            if mask >> i & 1 == 1 {
                wt += w[i];
                val += v[i];
            }
        }
        if wt <= cap {
            best = best.max(val);
        }
    }
    best
}
