//! Gauss-Hermite quadrature for one-dimensional Gaussian expectations.

use nalgebra::DMatrix;

/// Nodes and weights for physicists' Gauss-Hermite quadrature,
/// `int exp(-x^2) f(x) dx ~= sum w_i f(x_i)`.
#[derive(Debug, Clone)]
pub struct GaussHermite {
    nodes: Vec<f64>,
    weights: Vec<f64>,
}

impl GaussHermite {
    /// Computes the rule by eigendecomposition of the Jacobi matrix
    /// (Golub-Welsch): off-diagonals `sqrt(k/2)`, weights from the first
    /// eigenvector components.
    pub fn new(n: usize) -> Self {
        assert!(n >= 1, "quadrature order must be positive");
        let mut jacobi = DMatrix::<f64>::zeros(n, n);
        for k in 1..n {
            let v = (k as f64 / 2.0).sqrt();
            jacobi[(k - 1, k)] = v;
            jacobi[(k, k - 1)] = v;
        }
        let eig = jacobi.symmetric_eigen();
        let mut pairs: Vec<(f64, f64)> = (0..n)
            .map(|i| {
                let node = eig.eigenvalues[i];
                let v0 = eig.eigenvectors[(0, i)];
                (node, std::f64::consts::PI.sqrt() * v0 * v0)
            })
            .collect();
        pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
        Self {
            nodes: pairs.iter().map(|p| p.0).collect(),
            weights: pairs.iter().map(|p| p.1).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// `E[f(X)]` for `X ~ N(mean, var)`.
    pub fn expect_normal<F: Fn(f64) -> f64>(&self, mean: f64, var: f64, f: F) -> f64 {
        let scale = (2.0 * var).sqrt();
        let inv_sqrt_pi = 1.0 / std::f64::consts::PI.sqrt();
        let mut acc = 0.0;
        for (x, w) in self.nodes.iter().zip(&self.weights) {
            acc += w * f(mean + scale * x);
        }
        acc * inv_sqrt_pi
    }
}
