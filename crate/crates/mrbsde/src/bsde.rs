//! Regression Monte Carlo solver for the unreflected inner BSDE
//!
//! ```text
//! y_t = xi + int_t^T f(s, U_s, law(U_s), z_s) ds - int_t^T z_s dB_s
//! ```
//!
//! with the `(y, law)` argument frozen at a proxy channel `U`. Backward
//! induction with an explicit driver step:
//!
//! ```text
//! z_i = regress(y_{i+1} dB_i | basis(B_i)) / step
//! y_i = regress(y_{i+1}    | basis(B_i)) + step * f(t_i, U_i, law(U_i), z_i)
//! ```
//!
//! Conditional expectations are polynomial regressions on the Brownian state,
//! solved by ridge-stabilized normal equations. The regression of a target is
//! mean-centered, so fitted means match target means to the ridge scale and a
//! constant shift of the terminal passes through exactly.

use crate::error::{MrbsdeError, Result};
use crate::grid::WindowRange;
use crate::measure::LawStats;
use crate::paths::{Channel, PathEnsemble, ZChannel};
use crate::quadrature::GaussHermite;
use crate::reduce;
use crate::scenario::{DriverSpec, TerminalKind, TerminalSpec};
use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use rayon::prelude::*;
use statrs::distribution::{ContinuousCDF, Normal};
use std::sync::atomic::{AtomicU64, Ordering};

/// Maximum condition number of the normal matrix before a step is declared
/// rank-deficient.
const COND_LIMIT: f64 = 1e12;
/// Ridge coefficient relative to the mean diagonal of the normal matrix.
const RIDGE_SCALE: f64 = 1e-10;

/// Polynomial-in-state regression basis: all monomials of the Brownian
/// coordinates up to `degree` per coordinate.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RegressionBasis {
    pub degree: usize,
    pub dim: usize,
}

impl RegressionBasis {
    pub fn new(degree: usize, dim: usize) -> Self {
        Self { degree, dim }
    }

    pub fn n_funcs(&self) -> usize {
        (self.degree + 1).pow(self.dim as u32)
    }

    pub fn validate(&self, n_paths: usize) -> Result<()> {
        if self.n_funcs() * 10 >= n_paths {
            return Err(MrbsdeError::InvalidArgument(format!(
                "basis has {} functions which is not below n_paths/10 = {}",
                self.n_funcs(),
                n_paths / 10
            )));
        }
        Ok(())
    }
}

/// Per-node regression state: basis values, factorized normal matrix.
struct NodeRegression {
    n_paths: usize,
    /// Regression degenerates to the plain mean at the initial node (where
    /// the state is a.s. constant) and for degree 0.
    mean_only: bool,
    phi: Vec<Vec<f64>>,
    chol: Option<Cholesky<f64, Dyn>>,
}

impl NodeRegression {
    fn prepare(paths: &PathEnsemble, node: usize, basis: &RegressionBasis) -> Result<Self> {
        let n = paths.n_paths();
        if node == 0 || basis.degree == 0 {
            return Ok(Self {
                n_paths: n,
                mean_only: true,
                phi: Vec::new(),
                chol: None,
            });
        }
        let d = basis.dim;
        let m = basis.n_funcs();
        let mut phi = vec![vec![0.0f64; n]; m];
        for (j, col) in phi.iter_mut().enumerate() {
            // digits of j in base (degree + 1) give the exponent per coordinate
            let mut exps = vec![0u32; d];
            let mut rest = j;
            for e in exps.iter_mut() {
                *e = (rest % (basis.degree + 1)) as u32;
                rest /= basis.degree + 1;
            }
            let levels: Vec<&[f64]> = (0..d).map(|k| paths.level(node, k)).collect();
            col.par_iter_mut().enumerate().for_each(|(p, v)| {
                let mut acc = 1.0;
                for (k, &e) in exps.iter().enumerate() {
                    if e > 0 {
                        acc *= levels[k][p].powi(e as i32);
                    }
                }
                *v = acc;
            });
        }

        let mut a = DMatrix::<f64>::zeros(m, m);
        for r in 0..m {
            for c in r..m {
                let pr = &phi[r];
                let pc = &phi[c];
                let v = reduce::mean_of(n, &|p| pr[p] * pc[p]);
                a[(r, c)] = v;
                a[(c, r)] = v;
            }
        }

        let sv = a.clone().svd(false, false).singular_values;
        let smax = sv.iter().cloned().fold(0.0f64, f64::max);
        let smin = sv.iter().cloned().fold(f64::INFINITY, f64::min);
        let cond = if smin > 0.0 { smax / smin } else { f64::INFINITY };
        if cond > COND_LIMIT {
            return Err(MrbsdeError::RankDeficient { step: node, cond });
        }

        let ridge = RIDGE_SCALE * a.trace() / m as f64;
        for i in 0..m {
            a[(i, i)] += ridge;
        }
        let chol = Cholesky::new(a)
            .ok_or(MrbsdeError::RankDeficient { step: node, cond })?;
        Ok(Self {
            n_paths: n,
            mean_only: false,
            phi,
            chol: Some(chol),
        })
    }

    /// Fitted conditional expectation of `target` given the node state.
    fn fit_into(&self, target: &[f64], out: &mut [f64]) {
        let n = self.n_paths;
        let mean = reduce::mean(target);
        if self.mean_only {
            out.par_iter_mut().for_each(|v| *v = mean);
            return;
        }
        let m = self.phi.len();
        let mut rhs = DVector::<f64>::zeros(m);
        for r in 0..m {
            let pr = &self.phi[r];
            rhs[r] = reduce::mean_of(n, &|p| pr[p] * (target[p] - mean));
        }
        let beta = self.chol.as_ref().expect("factorized").solve(&rhs);
        let phi = &self.phi;
        out.par_iter_mut().enumerate().for_each(|(p, v)| {
            let mut acc = mean;
            for (r, col) in phi.iter().enumerate() {
                acc += beta[r] * col[p];
            }
            *v = acc;
        });
    }

    fn fit(&self, target: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.n_paths];
        self.fit_into(target, &mut out);
        out
    }
}

/// Conditional-expectation regression of `target` on the node state,
/// exposed for diagnostics that need the same estimator.
pub fn regress_on_state(
    paths: &PathEnsemble,
    node: usize,
    basis: &RegressionBasis,
    target: &[f64],
) -> Result<Vec<f64>> {
    let reg = NodeRegression::prepare(paths, node, basis)?;
    Ok(reg.fit(target))
}

/// Solution of the inner BSDE on a window.
#[derive(Debug, Clone)]
pub struct InnerSolution {
    /// `y` on the window nodes; the last node holds the terminal samples
    /// bit-exactly.
    pub y: Channel,
    /// `z` on the window steps.
    pub z: ZChannel,
    /// Per-step mean of `|f|`, for diagnostics.
    pub driver_abs_mean: Vec<f64>,
    /// Number of driver evaluations whose `z` argument hit the norm cap.
    pub clamp_count: u64,
    pub driver_evals: u64,
}

impl InnerSolution {
    pub fn clamp_rate(&self) -> f64 {
        if self.driver_evals == 0 {
            0.0
        } else {
            self.clamp_count as f64 / self.driver_evals as f64
        }
    }
}

/// Backward induction for the inner BSDE with driver frozen at `u`.
///
/// `u` and `u_laws` must cover the window nodes; `terminal` holds the
/// terminal samples at the right edge of the window.
pub fn solve_inner(
    driver: &DriverSpec,
    u: &Channel,
    u_laws: &[LawStats],
    terminal: &[f64],
    paths: &PathEnsemble,
    basis: &RegressionBasis,
    window: WindowRange,
) -> Result<InnerSolution> {
    let n = paths.n_paths();
    let d = paths.dim();
    basis.validate(n)?;
    let nw = window.n_steps();
    if u.n_nodes() != window.n_nodes() || u_laws.len() != window.n_nodes() {
        return Err(MrbsdeError::InvalidArgument(
            "frozen proxy does not cover the window".into(),
        ));
    }
    if terminal.len() != n {
        return Err(MrbsdeError::InvalidArgument(
            "terminal sample count differs from n_paths".into(),
        ));
    }
    let h = paths.grid().step();

    let mut y = Channel::zeros(window.n_nodes(), n);
    y.at_mut(nw).copy_from_slice(terminal);
    let mut z = ZChannel::zeros(nw, d, n);
    let mut driver_abs_mean = vec![0.0; nw];
    let clamp_count = AtomicU64::new(0);

    let mut y_next = vec![0.0f64; n];
    let mut target = vec![0.0f64; n];
    let mut cont = vec![0.0f64; n];
    let mut f_vals = vec![0.0f64; n];

    for li in (0..nw).rev() {
        let node = window.start + li;
        let reg = NodeRegression::prepare(paths, node, basis)?;
        y_next.copy_from_slice(y.at(li + 1));

        reg.fit_into(&y_next, &mut cont);

        // Covariance form of the martingale-representation estimator:
        // centering y_{i+1} at its fitted conditional mean leaves the
        // expectation unchanged and drops the target variance from
        // O(B^2 h) to O(h^2).
        for k in 0..d {
            let inc = paths.increment(node, k);
            target
                .par_iter_mut()
                .enumerate()
                .for_each(|(p, v)| *v = (y_next[p] - cont[p]) * inc[p]);
            reg.fit_into(&target, z.at_mut(li, k));
            z.at_mut(li, k).par_iter_mut().for_each(|v| *v /= h);
        }

        let base = driver.law_base(u_laws[li]);
        let a_y = driver.affine.a_y;
        let u_here = u.at(li);
        let z_slices: Vec<&[f64]> = (0..d).map(|k| z.at(li, k)).collect();
        f_vals.par_iter_mut().enumerate().for_each(|(p, fv)| {
            let mut z_sum = 0.0;
            let mut z_nsq = 0.0;
            for zs in &z_slices {
                let v = zs[p];
                z_sum += v;
                z_nsq += v * v;
            }
            let (zt, clamped) = driver.z_term(z_sum, z_nsq);
            if clamped {
                clamp_count.fetch_add(1, Ordering::Relaxed);
            }
            *fv = base + a_y * u_here[p] + zt;
        });
        drop(z_slices);

        driver_abs_mean[li] = reduce::mean_of(n, &|p| f_vals[p].abs());
        let row = y.at_mut(li);
        row.par_iter_mut()
            .enumerate()
            .for_each(|(p, v)| *v = cont[p] + h * f_vals[p]);
    }

    Ok(InnerSolution {
        y,
        z,
        driver_abs_mean,
        clamp_count: clamp_count.into_inner(),
        driver_evals: (nw * n) as u64,
    })
}

// ---------------------------------------------------------------------------
// Closed-form oracles
// ---------------------------------------------------------------------------

/// Exact solution of the inner BSDE for an affine driver `f = a0 + a_y y`
/// and a terminal with a known conditional expectation:
///
/// ```text
/// y_t = e^{a_y (T-t)} E[xi | B_t] + psi(T-t),
/// psi(tau) = a0 tau                       (a_y = 0)
///          = (a0/a_y)(e^{a_y tau} - 1)    (a_y != 0)
/// ```
#[derive(Debug, Clone)]
pub struct LinearOracle {
    pub a0: f64,
    pub a_y: f64,
    terminal: TerminalSpec,
    horizon: f64,
}

impl LinearOracle {
    pub fn new(a0: f64, a_y: f64, terminal: TerminalSpec, horizon: f64) -> Result<Self> {
        match terminal.kind {
            TerminalKind::Identity | TerminalKind::Exp { .. } => Ok(Self {
                a0,
                a_y,
                terminal,
                horizon,
            }),
            _ => Err(MrbsdeError::UnsupportedTerminal(
                terminal.kind_name().into(),
            )),
        }
    }

    fn psi(&self, tau: f64) -> f64 {
        if self.a_y == 0.0 {
            self.a0 * tau
        } else {
            self.a0 / self.a_y * ((self.a_y * tau).exp() - 1.0)
        }
    }

    fn cond_exp_terminal(&self, t: f64, b: f64) -> f64 {
        let tau = self.horizon - t;
        match &self.terminal.kind {
            TerminalKind::Identity => b,
            TerminalKind::Exp { a, scale } => scale * (a * b + 0.5 * a * a * tau).exp(),
            _ => unreachable!("rejected at construction"),
        }
    }

    pub fn y(&self, t: f64, b: f64) -> f64 {
        let tau = self.horizon - t;
        (self.a_y * tau).exp() * self.cond_exp_terminal(t, b) + self.psi(tau)
    }

    pub fn z(&self, t: f64, b: f64) -> f64 {
        let tau = self.horizon - t;
        let grad = match &self.terminal.kind {
            TerminalKind::Identity => 1.0,
            TerminalKind::Exp { a, scale } => a * scale * (a * b + 0.5 * a * a * tau).exp(),
            _ => unreachable!(),
        };
        (self.a_y * tau).exp() * grad
    }

    /// `E[y_t]` under the true Gaussian law of `B_t`.
    pub fn mean_y(&self, t: f64) -> f64 {
        let tau = self.horizon - t;
        let mean_cond = match &self.terminal.kind {
            TerminalKind::Identity => 0.0,
            TerminalKind::Exp { a, scale } => scale * (0.5 * a * a * self.horizon).exp(),
            _ => unreachable!(),
        };
        (self.a_y * tau).exp() * mean_cond + self.psi(tau)
    }
}

/// Exponential-transform solution of the pure quadratic BSDE
/// `f = (gamma/2) |z|^2`: `y_t = (1/gamma) log E_t[exp(gamma xi)]`.
#[derive(Debug, Clone)]
pub struct QuadraticOracle {
    pub gamma: f64,
    terminal: TerminalSpec,
    horizon: f64,
}

impl QuadraticOracle {
    pub fn new(gamma: f64, terminal: TerminalSpec, horizon: f64) -> Result<Self> {
        if gamma <= 0.0 {
            return Err(MrbsdeError::InvalidArgument(
                "quadratic oracle requires gamma > 0".into(),
            ));
        }
        match terminal.kind {
            TerminalKind::Identity | TerminalKind::Clipped { .. } => Ok(Self {
                gamma,
                terminal,
                horizon,
            }),
            _ => Err(MrbsdeError::UnsupportedTerminal(
                terminal.kind_name().into(),
            )),
        }
    }

    /// Closed-form `y_t` given `B_t = b`, using the Gaussian MGF for the
    /// identity terminal and normal-CDF pieces for the clipped one.
    pub fn y(&self, t: f64, b: f64) -> f64 {
        let tau = self.horizon - t;
        let g = self.gamma;
        match &self.terminal.kind {
            TerminalKind::Identity => b + 0.5 * g * tau,
            TerminalKind::Clipped { lo, hi } => {
                if tau <= 0.0 {
                    return self.terminal.eval(b);
                }
                let sigma = tau.sqrt();
                let normal = Normal::new(0.0, 1.0).expect("unit normal");
                let cdf = |x: f64| {
                    if x == f64::INFINITY {
                        1.0
                    } else if x == f64::NEG_INFINITY {
                        0.0
                    } else {
                        normal.cdf(x)
                    }
                };
                let alpha = lo.map_or(f64::NEG_INFINITY, |l| (l - b) / sigma);
                let beta = hi.map_or(f64::INFINITY, |h| (h - b) / sigma);
                let mut total = 0.0;
                if let Some(l) = lo {
                    total += (g * l).exp() * cdf(alpha);
                }
                if let Some(h) = hi {
                    total += (g * h).exp() * (1.0 - cdf(beta));
                }
                total += (g * b + 0.5 * g * g * tau).exp()
                    * (cdf(beta - g * sigma) - cdf(alpha - g * sigma));
                total.ln() / g
            }
            _ => unreachable!("rejected at construction"),
        }
    }

    /// Same value through Gauss-Hermite quadrature of `exp(gamma g(B_T))`.
    pub fn y_quadrature(&self, t: f64, b: f64, n_nodes: usize) -> f64 {
        let tau = self.horizon - t;
        if tau <= 0.0 {
            return self.terminal.eval(b);
        }
        let rule = GaussHermite::new(n_nodes);
        let g = self.gamma;
        let e = rule.expect_normal(b, tau, |x| (g * self.terminal.eval(x)).exp());
        e.ln() / g
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::TimeGrid;
    use crate::measure::law_stats;
    use crate::paths::simulate_paths;
    use crate::scenario::{Affine, Regime, ZPart};

    fn zero_driver() -> DriverSpec {
        DriverSpec {
            regime: Regime::Lipschitz,
            affine: Affine::default(),
            z_part: ZPart::Linear { b: 0.0 },
            lambda: Some(0.1),
            beta: None,
        }
    }

    fn full_window(grid: &TimeGrid) -> WindowRange {
        WindowRange::new(0, grid.n_steps())
    }

    fn frozen_zero(n_nodes: usize, n_paths: usize) -> (Channel, Vec<LawStats>) {
        let u = Channel::zeros(n_nodes, n_paths);
        let laws = (0..n_nodes).map(|i| law_stats(u.at(i))).collect();
        (u, laws)
    }

    #[test]
    fn terminal_layer_is_bit_exact() {
        let grid = TimeGrid::new(1.0, 8).unwrap();
        let paths = simulate_paths(&grid, 512, 1, 3).unwrap();
        let xi: Vec<f64> = paths.terminal_levels().to_vec();
        let (u, laws) = frozen_zero(9, 512);
        let basis = RegressionBasis::new(2, 1);
        let sol = solve_inner(&zero_driver(), &u, &laws, &xi, &paths, &basis, full_window(&grid))
            .unwrap();
        assert_eq!(sol.y.at(8), xi.as_slice());
    }

    #[test]
    fn martingale_case_tracks_brownian_state() {
        // f = 0, xi = B_T: y_i should reproduce B_i and z should be near 1.
        let grid = TimeGrid::new(1.0, 10).unwrap();
        let n = 20_000;
        let paths = simulate_paths(&grid, n, 1, 5).unwrap();
        let xi: Vec<f64> = paths.terminal_levels().to_vec();
        let (u, laws) = frozen_zero(11, n);
        let basis = RegressionBasis::new(3, 1);
        let sol = solve_inner(&zero_driver(), &u, &laws, &xi, &paths, &basis, full_window(&grid))
            .unwrap();
        for i in 1..10 {
            let b = paths.level(i, 0);
            let err = reduce::mean_of(n, &|p| (sol.y.at(i)[p] - b[p]).abs());
            assert!(err < 0.03, "node {i}: mean |y - B| = {err}");
            let zbar = reduce::mean(sol.z.at(i, 0));
            assert!((zbar - 1.0).abs() < 0.05, "node {i}: mean z = {zbar}");
        }
    }

    #[test]
    fn martingale_defect_within_standard_errors() {
        let grid = TimeGrid::new(1.0, 8).unwrap();
        let n = 20_000;
        let paths = simulate_paths(&grid, n, 1, 7).unwrap();
        let xi: Vec<f64> = paths.terminal_levels().to_vec();
        let (u, laws) = frozen_zero(9, n);
        let basis = RegressionBasis::new(3, 1);
        let sol = solve_inner(&zero_driver(), &u, &laws, &xi, &paths, &basis, full_window(&grid))
            .unwrap();
        for i in 0..8 {
            let inc = paths.increment(i, 0);
            let defects: Vec<f64> = (0..n)
                .map(|p| sol.y.at(i + 1)[p] - sol.y.at(i)[p] - sol.z.at(i, 0)[p] * inc[p])
                .collect();
            let m = reduce::mean(&defects);
            // At t=0 the regression is the plain mean, so the defect sample
            // is nearly degenerate; the noise scale of the martingale term
            // itself must enter the yardstick.
            let products: Vec<f64> = (0..n).map(|p| sol.z.at(i, 0)[p] * inc[p]).collect();
            let se = reduce::standard_error(&defects) + reduce::standard_error(&products);
            assert!(m.abs() <= 5.0 * se, "step {i}: defect {m}, se {se}");
        }
    }

    #[test]
    fn constant_terminal_shift_passes_through() {
        let grid = TimeGrid::new(1.0, 6).unwrap();
        let n = 4_000;
        let paths = simulate_paths(&grid, n, 1, 11).unwrap();
        let xi: Vec<f64> = paths.terminal_levels().to_vec();
        let xi_shifted: Vec<f64> = xi.iter().map(|v| v + 1.0).collect();
        let (u, laws) = frozen_zero(7, n);
        let basis = RegressionBasis::new(3, 1);
        let a = solve_inner(&zero_driver(), &u, &laws, &xi, &paths, &basis, full_window(&grid))
            .unwrap();
        let b = solve_inner(
            &zero_driver(),
            &u,
            &laws,
            &xi_shifted,
            &paths,
            &basis,
            full_window(&grid),
        )
        .unwrap();
        for i in 0..=6 {
            for p in (0..n).step_by(97) {
                let diff = b.y.at(i)[p] - a.y.at(i)[p];
                assert!((diff - 1.0).abs() < 1e-9, "node {i} path {p}: diff {diff}");
            }
        }
    }

    #[test]
    fn constant_driver_adds_remaining_time() {
        // f = a, xi = B_T: y_i = B_i + a (T - t_i)
        let grid = TimeGrid::new(1.0, 10).unwrap();
        let n = 20_000;
        let paths = simulate_paths(&grid, n, 1, 13).unwrap();
        let xi: Vec<f64> = paths.terminal_levels().to_vec();
        let (u, laws) = frozen_zero(11, n);
        let mut driver = zero_driver();
        driver.affine.a0 = -0.2;
        let basis = RegressionBasis::new(3, 1);
        let sol = solve_inner(&driver, &u, &laws, &xi, &paths, &basis, full_window(&grid)).unwrap();
        for i in 0..=10 {
            let t = grid.time(i);
            let b = paths.level(i, 0);
            let err = reduce::mean_of(n, &|p| (sol.y.at(i)[p] - (b[p] - 0.2 * (1.0 - t))).abs());
            assert!(err < 0.03, "node {i}: err {err}");
        }
    }

    #[test]
    fn basis_size_guard_rejects_small_ensembles() {
        let basis = RegressionBasis::new(3, 1);
        assert!(basis.validate(30).is_err());
        assert!(basis.validate(50).is_ok());
    }

    #[test]
    fn near_degenerate_state_reports_rank_deficiency() {
        // A vanishing time scale collapses the monomial columns: the normal
        // matrix condition number blows past the limit at step 1.
        let grid = TimeGrid::new(2e-8, 2).unwrap();
        let paths = simulate_paths(&grid, 200, 1, 3).unwrap();
        let err = match NodeRegression::prepare(&paths, 1, &RegressionBasis::new(3, 1)) {
            Err(e) => e,
            Ok(_) => panic!("expected rank deficiency"),
        };
        match err {
            MrbsdeError::RankDeficient { step, cond } => {
                assert_eq!(step, 1);
                assert!(cond > COND_LIMIT);
            }
            other => panic!("unexpected error {other}"),
        }
    }

    #[test]
    fn oversized_z_is_clamped_and_counted() {
        // gamma = 200 puts the cap at 0.1, far below the typical |z| ~ 1.
        let grid = TimeGrid::new(1.0, 5).unwrap();
        let n = 2_000;
        let paths = simulate_paths(&grid, n, 1, 31).unwrap();
        let xi: Vec<f64> = paths.terminal_levels().to_vec();
        let (u, laws) = frozen_zero(6, n);
        let driver = DriverSpec {
            regime: Regime::QuadraticUnbounded,
            affine: Affine::default(),
            z_part: ZPart::Quadratic {
                gamma: 200.0,
                concave: true,
            },
            lambda: None,
            beta: Some(0.05),
        };
        let basis = RegressionBasis::new(2, 1);
        let sol = solve_inner(&driver, &u, &laws, &xi, &paths, &basis, full_window(&grid)).unwrap();
        assert!(sol.clamp_count > 0);
        assert!(sol.clamp_rate() > 0.5, "rate {}", sol.clamp_rate());
    }

    #[test]
    fn oracles_reject_unsupported_terminals() {
        let poly = TerminalSpec {
            kind: TerminalKind::Polynomial {
                coeffs: vec![0.0, 1.0, 1.0],
            },
            bounded: false,
            p: 2.0,
        };
        assert!(matches!(
            LinearOracle::new(0.0, 0.0, poly.clone(), 1.0),
            Err(MrbsdeError::UnsupportedTerminal(_))
        ));
        let exp = TerminalSpec {
            kind: TerminalKind::Exp { a: 1.0, scale: 1.0 },
            bounded: false,
            p: 2.0,
        };
        assert!(QuadraticOracle::new(1.0, exp, 1.0).is_err());
        assert!(LinearOracle::new(0.0, 0.0, poly, 1.0).is_err());
    }

    #[test]
    fn linear_oracle_closed_forms() {
        let ident = TerminalSpec {
            kind: TerminalKind::Identity,
            bounded: false,
            p: 2.0,
        };
        let o = LinearOracle::new(-0.2, 0.0, ident.clone(), 1.0).unwrap();
        assert!((o.y(0.25, 0.5) - (0.5 - 0.2 * 0.75)).abs() < 1e-15);
        assert_eq!(o.z(0.25, 0.5), 1.0);
        assert!((o.mean_y(0.0) + 0.2).abs() < 1e-15);

        let o = LinearOracle::new(0.0, 0.0, ident.clone(), 1.0).unwrap();
        assert_eq!(o.y(0.3, 0.7), 0.7);

        let r = 0.4;
        let o = LinearOracle::new(0.0, r, ident, 1.0).unwrap();
        assert!((o.y(0.25, 0.5) - (r * 0.75f64).exp() * 0.5).abs() < 1e-15);
    }

    #[test]
    fn linear_oracle_matches_nested_monte_carlo() {
        // y_t(b) = E[e^{r(T-t)} xi | B_t = b] for f = r y: estimate the
        // conditional expectation by inner sampling at three grid times.
        let r = 0.4;
        let ident = TerminalSpec {
            kind: TerminalKind::Identity,
            bounded: false,
            p: 2.0,
        };
        let oracle = LinearOracle::new(0.0, r, ident, 1.0).unwrap();
        let inner = 200_000;
        for (t, b) in [(0.25, 0.3), (0.5, -0.8), (0.75, 1.1)] {
            let tau: f64 = 1.0 - t;
            let mut stream = crate::rng::path_stream(99, (t * 100.0) as u64);
            let mut acc = 0.0;
            for _ in 0..inner {
                let xi = b + tau.sqrt() * crate::rng::standard_normal(&mut stream);
                acc += (r * tau).exp() * xi;
            }
            let nested = acc / inner as f64;
            let se = (r * tau).exp() * tau.sqrt() / (inner as f64).sqrt();
            assert!(
                (nested - oracle.y(t, b)).abs() <= 5.0 * se,
                "t={t}, b={b}: nested {nested} vs oracle {}",
                oracle.y(t, b)
            );
        }
    }

    #[test]
    fn quadratic_oracle_identity_values() {
        let ident = TerminalSpec {
            kind: TerminalKind::Identity,
            bounded: false,
            p: 2.0,
        };
        let o = QuadraticOracle::new(1.0, ident.clone(), 1.0).unwrap();
        assert!((o.y(0.0, 0.0) - 0.5).abs() < 1e-15);
        let o2 = QuadraticOracle::new(2.0, ident.clone(), 1.0).unwrap();
        assert!((o2.y(0.0, 0.0) - 1.0).abs() < 1e-15);
        assert!(QuadraticOracle::new(0.0, ident, 1.0).is_err());
    }

    #[test]
    fn quadratic_oracle_clipped_routes_agree() {
        // One-sided clip min(B_T, 0): closed form vs quadrature vs plain
        // Monte Carlo with 10^6 samples.
        let clip = TerminalSpec {
            kind: TerminalKind::Clipped {
                lo: None,
                hi: Some(0.0),
            },
            bounded: false,
            p: 2.0,
        };
        let o = QuadraticOracle::new(1.0, clip.clone(), 1.0).unwrap();
        let closed = o.y(0.0, 0.0);
        let quad = o.y_quadrature(0.0, 0.0, 128);
        assert!(
            (closed - quad).abs() < 2e-3,
            "closed {closed} vs quadrature {quad}"
        );

        let n = 1_000_000usize;
        let mut stream = crate::rng::path_stream(123, 0);
        let mut acc = 0.0;
        let mut acc2 = 0.0;
        for _ in 0..n {
            let x = crate::rng::standard_normal(&mut stream);
            let v = (clip.eval(x)).exp();
            acc += v;
            acc2 += v * v;
        }
        let mc_mean = acc / n as f64;
        let mc_var = acc2 / n as f64 - mc_mean * mc_mean;
        let se_of_log = (mc_var / n as f64).sqrt() / mc_mean;
        let mc_y0 = mc_mean.ln();
        assert!(
            (quad - mc_y0).abs() <= 3.0 * se_of_log + 2e-3,
            "quadrature {quad} vs MC {mc_y0} (se {se_of_log})"
        );
        assert!((closed - mc_y0).abs() <= 3.0 * se_of_log);
    }

    #[test]
    fn quadratic_solver_matches_exponential_transform() {
        // f = |z|^2 / 2, xi = B_T, T = 1: y_t = B_t + (1 - t)/2.
        let grid = TimeGrid::new(1.0, 10).unwrap();
        let n = 20_000;
        let paths = simulate_paths(&grid, n, 1, 19).unwrap();
        let xi: Vec<f64> = paths.terminal_levels().to_vec();
        let (u, laws) = frozen_zero(11, n);
        let driver = DriverSpec {
            regime: Regime::QuadraticUnbounded,
            affine: Affine::default(),
            z_part: ZPart::Quadratic {
                gamma: 1.0,
                concave: false,
            },
            lambda: None,
            beta: Some(0.05),
        };
        let basis = RegressionBasis::new(3, 1);
        let sol = solve_inner(&driver, &u, &laws, &xi, &paths, &basis, full_window(&grid)).unwrap();
        let oracle = QuadraticOracle::new(
            1.0,
            TerminalSpec {
                kind: TerminalKind::Identity,
                bounded: false,
                p: 2.0,
            },
            1.0,
        )
        .unwrap();
        for i in 0..=10 {
            let t = grid.time(i);
            let b = paths.level(i, 0);
            let err = reduce::mean_of(n, &|p| (sol.y.at(i)[p] - oracle.y(t, b[p])).abs());
            assert!(err < 0.03, "node {i}: err {err}");
        }
        assert!(sol.clamp_rate() < 1e-3, "clamp rate {}", sol.clamp_rate());
    }

    #[test]
    fn exponential_moment_bound_holds_at_origin() {
        // For the pure quadratic driver with zero residual growth the value
        // at time zero satisfies exp(p g |y_0|) <= E[exp(p g |xi|)].
        let grid = TimeGrid::new(1.0, 10).unwrap();
        let n = 50_000;
        let paths = simulate_paths(&grid, n, 1, 23).unwrap();
        let xi: Vec<f64> = paths.terminal_levels().to_vec();
        let (u, laws) = frozen_zero(11, n);
        let driver = DriverSpec {
            regime: Regime::QuadraticUnbounded,
            affine: Affine::default(),
            z_part: ZPart::Quadratic {
                gamma: 1.0,
                concave: false,
            },
            lambda: None,
            beta: Some(0.05),
        };
        let basis = RegressionBasis::new(3, 1);
        let sol = solve_inner(&driver, &u, &laws, &xi, &paths, &basis, full_window(&grid)).unwrap();
        let y0 = sol.y.at(0)[0];
        for p_exp in [1.0f64, 2.0] {
            let abs_side: Vec<f64> = xi.iter().map(|&x| (p_exp * x.abs()).exp()).collect();
            let rhs = reduce::mean(&abs_side);
            let se = reduce::standard_error(&abs_side);
            assert!(
                (p_exp * y0.abs()).exp() <= rhs * (1.0 + 3.0 * se / rhs),
                "p = {p_exp}: lhs {} rhs {rhs}",
                (p_exp * y0.abs()).exp()
            );
            let pos_side: Vec<f64> = xi.iter().map(|&x| (p_exp * x.max(0.0)).exp()).collect();
            let rhs_pos = reduce::mean(&pos_side);
            let se_pos = reduce::standard_error(&pos_side);
            assert!(
                (p_exp * y0.max(0.0)).exp() <= rhs_pos * (1.0 + 3.0 * se_pos / rhs_pos),
                "one-sided p = {p_exp}"
            );
        }
    }
}
