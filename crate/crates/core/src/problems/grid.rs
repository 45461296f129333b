//! Shortest path on a directed grid, as a unit-flow LP.
//!
//! Nodes are numbered row-major. Edges run rightward and downward; rightward
//! edges come first (row by row), then downward edges. The source is the
//! top-left node and the sink the bottom-right one.

use nalgebra::DMatrix;

use super::lp::{ConstraintKind, LpInstance};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct GridFlowInstance {
    pub rows: usize,
    pub cols: usize,
    /// `(tail, head)` per edge.
    pub edges: Vec<(usize, usize)>,
    /// Node-by-edge matrix: +1 at the tail, -1 at the head.
    pub incidence: DMatrix<f64>,
    pub source: usize,
    pub sink: usize,
}

impl GridFlowInstance {
    pub fn n_nodes(&self) -> usize {
        self.rows * self.cols
    }

    pub fn n_edges(&self) -> usize {
        self.edges.len()
    }

    /// Net outflow required at each node: 1 at the source, -1 at the sink.
    pub fn supply(&self) -> Vec<f64> {
        let mut s = vec![0.0; self.n_nodes()];
        s[self.source] = 1.0;
        s[self.sink] = -1.0;
        s
    }
}

/// Builds the grid and its flow LP `incidence * z = supply, z >= 0`.
pub fn build_grid_lp(rows: usize, cols: usize) -> Result<(GridFlowInstance, LpInstance)> {
    if rows < 2 || cols < 2 {
        return Err(Error::invalid(format!(
            "grid needs at least 2x2 nodes, got {rows}x{cols}"
        )));
    }
    let node = |r: usize, c: usize| r * cols + c;
    let mut edges = Vec::with_capacity(rows * (cols - 1) + cols * (rows - 1));
    for r in 0..rows {
        for c in 0..cols - 1 {
            edges.push((node(r, c), node(r, c + 1)));
        }
    }
    for r in 0..rows - 1 {
        for c in 0..cols {
            edges.push((node(r, c), node(r + 1, c)));
        }
    }
    let mut incidence = DMatrix::zeros(rows * cols, edges.len());
    for (e, &(tail, head)) in edges.iter().enumerate() {
        incidence[(tail, e)] = 1.0;
        incidence[(head, e)] = -1.0;
    }
    let grid = GridFlowInstance {
        rows,
        cols,
        edges,
        incidence,
        source: 0,
        sink: rows * cols - 1,
    };
    let lp = LpInstance::new(grid.incidence.clone(), grid.supply(), ConstraintKind::Eq, true)?;
    Ok((grid, lp))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problems::solve_lp;

    #[test]
    fn four_by_four_counts() {
        let (g, lp) = build_grid_lp(4, 4).unwrap();
        assert_eq!(g.n_edges(), 24);
        assert_eq!(g.n_nodes(), 16);
        assert_eq!(lp.n_vars(), 24);
        assert_eq!(g.supply().iter().sum::<f64>(), 0.0);
    }

    #[test]
    fn two_by_two_uniform_costs() {
        let (g, lp) = build_grid_lp(2, 2).unwrap();
        assert_eq!(g.n_edges(), 4);
        let z = solve_lp(&lp, &[1.5; 4]).unwrap();
        assert!((z.objective - 3.0).abs() < 1e-12);
    }

    #[test]
    fn rejects_degenerate_grid() {
        assert!(build_grid_lp(1, 4).is_err());
    }
}
