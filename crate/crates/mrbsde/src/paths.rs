//! Brownian path storage and simulation.
//!
//! All per-path arrays are stored time-major (`[node][path]`), so the
//! regression and reduction kernels see contiguous slices per grid time.

use crate::error::{MrbsdeError, Result};
use crate::grid::TimeGrid;
use crate::rng;
use rayon::prelude::*;

/// A scalar process sampled on the grid: one value per `(node, path)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Channel {
    n_nodes: usize,
    n_paths: usize,
    data: Vec<f64>,
}

impl Channel {
    pub fn zeros(n_nodes: usize, n_paths: usize) -> Self {
        Self {
            n_nodes,
            n_paths,
            data: vec![0.0; n_nodes * n_paths],
        }
    }

    pub fn n_nodes(&self) -> usize {
        self.n_nodes
    }

    pub fn n_paths(&self) -> usize {
        self.n_paths
    }

    pub fn at(&self, node: usize) -> &[f64] {
        let off = node * self.n_paths;
        &self.data[off..off + self.n_paths]
    }

    pub fn at_mut(&mut self, node: usize) -> &mut [f64] {
        let off = node * self.n_paths;
        &mut self.data[off..off + self.n_paths]
    }

    /// Restriction to the node range `[start, end]`, copied.
    pub fn slice_nodes(&self, start: usize, end: usize) -> Channel {
        let off = start * self.n_paths;
        let len = (end - start + 1) * self.n_paths;
        Channel {
            n_nodes: end - start + 1,
            n_paths: self.n_paths,
            data: self.data[off..off + len].to_vec(),
        }
    }
}

/// The `z` process: one `d`-vector per `(step, path)`.
#[derive(Debug, Clone, PartialEq)]
pub struct ZChannel {
    n_steps: usize,
    n_paths: usize,
    dim: usize,
    data: Vec<f64>,
}

impl ZChannel {
    pub fn zeros(n_steps: usize, dim: usize, n_paths: usize) -> Self {
        Self {
            n_steps,
            n_paths,
            dim,
            data: vec![0.0; n_steps * dim * n_paths],
        }
    }

    pub fn n_steps(&self) -> usize {
        self.n_steps
    }

    pub fn n_paths(&self) -> usize {
        self.n_paths
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn at(&self, step: usize, coord: usize) -> &[f64] {
        let off = (step * self.dim + coord) * self.n_paths;
        &self.data[off..off + self.n_paths]
    }

    pub fn at_mut(&mut self, step: usize, coord: usize) -> &mut [f64] {
        let off = (step * self.dim + coord) * self.n_paths;
        &mut self.data[off..off + self.n_paths]
    }

    /// Euclidean norm of the `d`-vector at `(step, path)`.
    pub fn norm_at(&self, step: usize, path: usize) -> f64 {
        let mut acc = 0.0;
        for k in 0..self.dim {
            let v = self.data[(step * self.dim + k) * self.n_paths + path];
            acc += v * v;
        }
        acc.sqrt()
    }
}

/// Simulated Brownian increments and levels for `n_paths` paths on a grid.
#[derive(Debug, Clone)]
pub struct PathEnsemble {
    grid: TimeGrid,
    n_paths: usize,
    dim: usize,
    seed: u64,
    /// `[(step * dim + coord) * n_paths + path]`
    increments: Vec<f64>,
    /// `[(node * dim + coord) * n_paths + path]`, node `0..=n_steps`
    levels: Vec<f64>,
}

impl PathEnsemble {
    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    pub fn n_paths(&self) -> usize {
        self.n_paths
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn increment(&self, step: usize, coord: usize) -> &[f64] {
        let off = (step * self.dim + coord) * self.n_paths;
        &self.increments[off..off + self.n_paths]
    }

    pub fn level(&self, node: usize, coord: usize) -> &[f64] {
        let off = (node * self.dim + coord) * self.n_paths;
        &self.levels[off..off + self.n_paths]
    }

    /// `B_T` in the first coordinate; the argument every catalogue terminal
    /// is applied to.
    pub fn terminal_levels(&self) -> &[f64] {
        self.level(self.grid.n_steps(), 0)
    }
}

/// Draws `n_paths` independent `d`-dimensional Brownian paths.
///
/// Increments are i.i.d. centered Gaussians with variance `step` per
/// coordinate, reproducible bit-for-bit for a fixed `(grid, n_paths, d,
/// seed)` under any thread count.
pub fn simulate_paths(grid: &TimeGrid, n_paths: usize, d: usize, seed: u64) -> Result<PathEnsemble> {
    if n_paths < 2 {
        return Err(MrbsdeError::InvalidArgument(format!(
            "n_paths must be >= 2, got {n_paths}"
        )));
    }
    if d == 0 {
        return Err(MrbsdeError::InvalidArgument("d must be >= 1".into()));
    }
    let n_steps = grid.n_steps();
    let sqrt_h = grid.step().sqrt();
    let per_path = n_steps * d;

    // Generate path-major (contiguous per path), then transpose to the
    // time-major layout used everywhere else.
    let mut by_path = vec![0.0f64; n_paths * per_path];
    by_path
        .par_chunks_mut(per_path)
        .enumerate()
        .for_each(|(p, row)| {
            let mut stream = rng::path_stream(seed, p as u64);
            for v in row.iter_mut() {
                *v = sqrt_h * rng::standard_normal(&mut stream);
            }
        });

    let mut increments = vec![0.0f64; n_paths * per_path];
    increments
        .par_chunks_mut(n_paths)
        .enumerate()
        .for_each(|(row, out)| {
            for (p, v) in out.iter_mut().enumerate() {
                *v = by_path[p * per_path + row];
            }
        });
    drop(by_path);

    let mut levels = vec![0.0f64; (n_steps + 1) * d * n_paths];
    for node in 1..=n_steps {
        for k in 0..d {
            let prev_off = ((node - 1) * d + k) * n_paths;
            let inc_off = ((node - 1) * d + k) * n_paths;
            let (before, cur) = levels.split_at_mut((node * d + k) * n_paths);
            let prev = &before[prev_off..prev_off + n_paths];
            let inc = &increments[inc_off..inc_off + n_paths];
            cur[..n_paths]
                .par_iter_mut()
                .enumerate()
                .for_each(|(p, v)| *v = prev[p] + inc[p]);
        }
    }

    Ok(PathEnsemble {
        grid: grid.clone(),
        n_paths,
        dim: d,
        seed,
        increments,
        levels,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::reduce;

    #[test]
    fn fixed_seed_is_bit_identical() {
        let grid = TimeGrid::new(1.0, 1).unwrap();
        let a = simulate_paths(&grid, 4, 1, 7).unwrap();
        let b = simulate_paths(&grid, 4, 1, 7).unwrap();
        assert_eq!(a.increments, b.increments);
        assert_eq!(a.increment(0, 0).len(), 4);
    }

    #[test]
    fn terminal_mean_within_clt_bound() {
        let grid = TimeGrid::new(1.0, 20).unwrap();
        let n = 100_000;
        let ens = simulate_paths(&grid, n, 1, 11).unwrap();
        let mean_bt = reduce::mean(ens.terminal_levels());
        assert!(
            mean_bt.abs() <= 5.0 * (1.0 / n as f64).sqrt(),
            "mean B_T = {mean_bt}"
        );
    }

    #[test]
    fn increment_variance_matches_step() {
        let grid = TimeGrid::new(1.0, 4).unwrap();
        let n = 20_000;
        let ens = simulate_paths(&grid, n, 1, 3).unwrap();
        let h = grid.step();
        for step in 0..4 {
            let var = reduce::sample_variance(ens.increment(step, 0));
            let se = h * (2.0 / (n as f64 - 1.0)).sqrt();
            assert!(
                (var - h).abs() <= 5.0 * se,
                "step {step}: var {var} vs {h}"
            );
        }
    }

    #[test]
    fn coordinates_are_uncorrelated() {
        let grid = TimeGrid::new(1.0, 2).unwrap();
        let n = 50_000;
        let ens = simulate_paths(&grid, n, 2, 5).unwrap();
        let h = grid.step();
        for step in 0..2 {
            let a = ens.increment(step, 0);
            let b = ens.increment(step, 1);
            let cov = reduce::mean_of(n, &|p| a[p] * b[p]);
            let se = h / (n as f64).sqrt();
            assert!(cov.abs() <= 5.0 * se, "step {step}: cov {cov}");
        }
    }

    #[test]
    fn levels_sum_increments() {
        let grid = TimeGrid::new(1.0, 5).unwrap();
        let ens = simulate_paths(&grid, 16, 1, 9).unwrap();
        for p in 0..16 {
            let mut acc = 0.0;
            for step in 0..5 {
                acc += ens.increment(step, 0)[p];
            }
            assert!((ens.level(5, 0)[p] - acc).abs() < 1e-14);
        }
    }

    #[test]
    fn degenerate_inputs_rejected() {
        let grid = TimeGrid::new(1.0, 5).unwrap();
        assert!(simulate_paths(&grid, 1, 1, 0).is_err());
        assert!(simulate_paths(&grid, 8, 0, 0).is_err());
    }
}
