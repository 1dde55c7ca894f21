//! Uniform time grid on `[0, T]`.

use crate::error::{MrbsdeError, Result};
use serde::{Deserialize, Serialize};

/// Uniform partition `0 = t_0 < t_1 < ... < t_n = T`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimeGrid {
    horizon: f64,
    n_steps: usize,
    times: Vec<f64>,
}

impl TimeGrid {
    pub fn new(horizon: f64, n_steps: usize) -> Result<Self> {
        if !horizon.is_finite() || horizon <= 0.0 {
            return Err(MrbsdeError::InvalidGrid(format!(
                "horizon must be positive and finite, got {horizon}"
            )));
        }
        if n_steps == 0 {
            return Err(MrbsdeError::InvalidGrid("n_steps must be >= 1".into()));
        }
        let times = (0..=n_steps)
            .map(|i| horizon * i as f64 / n_steps as f64)
            .collect();
        Ok(Self {
            horizon,
            n_steps,
            times,
        })
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn n_steps(&self) -> usize {
        self.n_steps
    }

    /// Number of grid nodes, `n_steps + 1`.
    pub fn n_nodes(&self) -> usize {
        self.n_steps + 1
    }

    pub fn step(&self) -> f64 {
        self.horizon / self.n_steps as f64
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn time(&self, node: usize) -> f64 {
        self.times[node]
    }
}

/// Inclusive node range `[start, end]` of a sub-interval of the grid.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct WindowRange {
    pub start: usize,
    pub end: usize,
}

impl WindowRange {
    pub fn new(start: usize, end: usize) -> Self {
        assert!(start < end, "window must span at least one step");
        Self { start, end }
    }

    pub fn n_steps(&self) -> usize {
        self.end - self.start
    }

    pub fn n_nodes(&self) -> usize {
        self.end - self.start + 1
    }
}
