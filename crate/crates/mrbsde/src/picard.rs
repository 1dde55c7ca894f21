//! Outer fixed-point machinery.
//!
//! The solution map freezes the `(y, law)` argument of the driver at a proxy
//! channel `U`, solves the inner BSDE, reflects it, and returns the deflected
//! channel:
//!
//! ```text
//! Gamma(U) = deflect(solve_inner(f^U), profile(L_t(y_t)))
//! ```
//!
//! Its fixed point solves the mean-reflected equation. `Gamma` is a strict
//! contraction on a window whose length depends on the declared constants:
//!
//! - Lipschitz regime: the largest `mu* in (1, p)` with
//!   `Lambda(mu) = 4 (1+kappa) lambda exp(lambda^2/2) (p/(p-mu))^{1/mu} (mu-1)`
//!   at most `0.5` gives `h = mu* - 1`;
//! - quadratic bounded: `2 (1+kappa) beta h < 1`, sized to factor `0.5`;
//! - quadratic unbounded: `(32 + 64 kappa) beta h < 1`, sized to factor `0.5`.
//!
//! The full horizon is split backward into such windows; each window's
//! terminal samples are the next window's left-edge `Y` values, and the
//! global `K` accumulates the window segments.

use crate::bsde::{solve_inner, RegressionBasis};
use crate::error::{MrbsdeError, Result};
use crate::grid::WindowRange;
use crate::measure::{law_stats, EmpiricalLaw, LawStats};
use crate::paths::{Channel, PathEnsemble, ZChannel};
use crate::reduce;
use crate::reflector::{build_profile, deflect, solve_l, ReflectionProfile};
use crate::scenario::{Regime, Scenario};
use serde::Serialize;

/// Number of paths whose pathwise sup enters the residual metric.
const RESIDUAL_SUBSAMPLE: usize = 256;
/// Grid resolution of the one-dimensional search for `mu*`.
const MU_GRID: usize = 10_000;
/// Target contraction factor; a margin below 1 halves iteration counts and
/// absorbs Monte Carlo noise in the empirical ratios.
const TARGET_FACTOR: f64 = 0.5;

/// Sub-interval length on which the solution map contracts, with the
/// constants that produced it.
#[derive(Debug, Clone, Serialize)]
pub struct ContractionWindow {
    pub regime: Regime,
    pub h: f64,
    pub theoretical_factor: f64,
    pub mu_star: Option<f64>,
    pub p: Option<f64>,
    pub lambda: Option<f64>,
    pub beta: Option<f64>,
    pub kappa: f64,
}

/// Contraction factor bound for the Lipschitz regime, valid for window
/// lengths `h <= mu - 1`.
pub fn lipschitz_factor(mu: f64, p: f64, lambda: f64, kappa: f64) -> f64 {
    4.0 * (1.0 + kappa)
        * lambda
        * (lambda * lambda / 2.0).exp()
        * (p / (p - mu)).powf(1.0 / mu)
        * (mu - 1.0)
}

pub fn contraction_window(
    driver: &crate::scenario::DriverSpec,
    loss: &crate::scenario::LossSpec,
    p: f64,
) -> Result<ContractionWindow> {
    let kappa = loss.kappa;
    match driver.regime {
        Regime::Lipschitz => {
            let lambda = driver.lambda.ok_or_else(|| {
                MrbsdeError::InvalidScenario("lipschitz regime needs lambda".into())
            })?;
            if !(p > 1.0) || lambda <= 0.0 {
                return Err(MrbsdeError::InvalidArgument(
                    "need p > 1 and lambda > 0".into(),
                ));
            }
            let mut best: Option<(f64, f64)> = None; // (mu, factor), largest mu with factor <= target
            let mut min_factor = f64::INFINITY;
            let mut argmin = 1.0;
            for k in 1..MU_GRID {
                let mu = 1.0 + (p - 1.0) * k as f64 / MU_GRID as f64;
                let f = lipschitz_factor(mu, p, lambda, kappa);
                if f < min_factor {
                    min_factor = f;
                    argmin = mu;
                }
                if f <= TARGET_FACTOR {
                    best = Some((mu, f));
                }
            }
            let (mu_star, factor) = match best {
                Some(b) => b,
                None if min_factor < 1.0 => (argmin, min_factor),
                None => return Err(MrbsdeError::NoContractiveWindow),
            };
            Ok(ContractionWindow {
                regime: driver.regime,
                h: mu_star - 1.0,
                theoretical_factor: factor,
                mu_star: Some(mu_star),
                p: Some(p),
                lambda: Some(lambda),
                beta: None,
                kappa,
            })
        }
        Regime::QuadraticBounded | Regime::QuadraticUnbounded => {
            let beta = driver.beta.ok_or_else(|| {
                MrbsdeError::InvalidScenario("quadratic regimes need beta".into())
            })?;
            if beta <= 0.0 {
                return Err(MrbsdeError::InvalidArgument("need beta > 0".into()));
            }
            let rate = match driver.regime {
                Regime::QuadraticBounded => 2.0 * (1.0 + kappa) * beta,
                _ => (32.0 + 64.0 * kappa) * beta,
            };
            let h = TARGET_FACTOR / rate;
            Ok(ContractionWindow {
                regime: driver.regime,
                h,
                theoretical_factor: rate * h,
                mu_star: None,
                p: None,
                lambda: None,
                beta: Some(beta),
                kappa,
            })
        }
    }
}

// ---------------------------------------------------------------------------
// Theta differences
// ---------------------------------------------------------------------------

/// Scaled difference statistics of two iterates, the convergence gauge for
/// quadratic drivers where plain differences are not controllable.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct ThetaStats {
    /// Monte Carlo estimate of `E[exp(gamma sup_t (|delta| + |delta_tilde|))]`.
    pub exp_moment: f64,
    /// `sup_t E|Y_mq - Y_m|`.
    pub sup_mean_abs_diff: f64,
}

#[derive(Debug, Clone)]
pub struct ThetaResidual {
    pub delta: Channel,
    pub delta_tilde: Channel,
    pub stats: ThetaStats,
}

/// Forms `delta = (theta Y_mq - Y_m)/(1-theta)` and
/// `delta_tilde = (theta Y_m - Y_mq)/(1-theta)` with their sup statistics.
///
/// At `Y_mq = Y_m` both reduce to `-Y_m`; the residual does not vanish at
/// equal arguments.
pub fn theta_residual(
    y_m: &Channel,
    y_mq: &Channel,
    theta: f64,
    gamma: f64,
) -> Result<ThetaResidual> {
    if !(theta > 0.0 && theta < 1.0) {
        return Err(MrbsdeError::InvalidArgument(format!(
            "theta must lie in (0,1), got {theta}"
        )));
    }
    if y_m.n_nodes() != y_mq.n_nodes() || y_m.n_paths() != y_mq.n_paths() {
        return Err(MrbsdeError::InvalidArgument(
            "theta residual needs channels of equal shape".into(),
        ));
    }
    let n_nodes = y_m.n_nodes();
    let n = y_m.n_paths();
    let inv = 1.0 / (1.0 - theta);
    let mut delta = Channel::zeros(n_nodes, n);
    let mut delta_tilde = Channel::zeros(n_nodes, n);
    for i in 0..n_nodes {
        let a = y_m.at(i);
        let b = y_mq.at(i);
        let dr = delta.at_mut(i);
        let tr = delta_tilde.at_mut(i);
        for p in 0..n {
            dr[p] = (theta * b[p] - a[p]) * inv;
            tr[p] = (theta * a[p] - b[p]) * inv;
        }
    }
    let exp_moment = reduce::mean_of(n, &|p| {
        let mut sup = 0.0f64;
        for i in 0..n_nodes {
            sup = sup.max(delta.at(i)[p].abs() + delta_tilde.at(i)[p].abs());
        }
        (gamma * sup).exp()
    });
    let sup_mean_abs_diff = reduce::max_of(n_nodes, &|i| {
        let a = y_m.at(i);
        let b = y_mq.at(i);
        reduce::mean_of(n, &|p| (b[p] - a[p]).abs())
    });
    Ok(ThetaResidual {
        delta,
        delta_tilde,
        stats: ThetaStats {
            exp_moment,
            sup_mean_abs_diff,
        },
    })
}

// ---------------------------------------------------------------------------
// The solution map Gamma on one window
// ---------------------------------------------------------------------------

/// Output of one application of the solution map on a window.
#[derive(Debug, Clone)]
pub struct WindowTriple {
    pub y_inner: Channel,
    pub big_y: Channel,
    pub z: ZChannel,
    pub profile: ReflectionProfile,
    pub clamp_count: u64,
    pub driver_evals: u64,
}

/// Solves the mean-reflected problem on the window with the driver frozen at
/// `u`: inner BSDE, per-time reflection, backward sup, deflection.
pub fn gamma_map(
    scenario: &Scenario,
    paths: &PathEnsemble,
    window: WindowRange,
    u: &Channel,
    u_laws: &[LawStats],
    terminal: &[f64],
) -> Result<WindowTriple> {
    let basis = RegressionBasis::new(scenario.basis.degree, paths.dim());
    let inner = solve_inner(
        &scenario.driver,
        u,
        u_laws,
        terminal,
        paths,
        &basis,
        window,
    )?;
    let bisect_tol = scenario.bisect_tol();
    let cap = scenario.x_max_cap();
    let mut l_values = Vec::with_capacity(window.n_nodes());
    for li in 0..window.n_nodes() {
        let t = paths.grid().time(window.start + li);
        let law = EmpiricalLaw::new(inner.y.at(li).to_vec());
        l_values.push(solve_l(&scenario.loss, t, &law, bisect_tol, cap)?);
    }
    let profile = build_profile(l_values)?;
    let big_y = deflect(&inner.y, &profile);
    Ok(WindowTriple {
        y_inner: inner.y,
        big_y,
        z: inner.z,
        profile,
        clamp_count: inner.clamp_count,
        driver_evals: inner.driver_evals,
    })
}

/// Residual between successive iterates: sup over grid times of the mean
/// absolute difference, plus the pathwise sup over a fixed subsample of
/// paths (the first `RESIDUAL_SUBSAMPLE`), which catches sup-norm drift the
/// means alone miss.
fn picard_residual(prev: &Channel, next: &Channel) -> f64 {
    let n = prev.n_paths();
    let n_nodes = prev.n_nodes();
    let mean_sup = reduce::max_of(n_nodes, &|i| {
        let a = prev.at(i);
        let b = next.at(i);
        reduce::mean_of(n, &|p| (a[p] - b[p]).abs())
    });
    let sub = n.min(RESIDUAL_SUBSAMPLE);
    let path_sup = reduce::max_of(n_nodes, &|i| {
        let a = prev.at(i);
        let b = next.at(i);
        reduce::max_of(sub, &|p| (a[p] - b[p]).abs())
    });
    mean_sup + path_sup
}

/// One window's converged solution.
#[derive(Debug, Clone)]
pub struct WindowSolution {
    pub window: WindowRange,
    pub big_y: Channel,
    pub z: ZChannel,
    pub profile: ReflectionProfile,
    pub residuals: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
    pub clamp_count: u64,
    pub driver_evals: u64,
    pub theta_stats: Vec<ThetaStats>,
    /// Mean of the inner solution at the window's left edge.
    pub y_inner_left: f64,
}

/// Iterates `U <- Gamma(U)` from the zero seed until the residual metric
/// drops below `tol` or `max_iter` is hit.
///
/// A driver that never reads `U` makes `Gamma` constant, so the first
/// application is the fixed point and the recorded residual is zero. Three
/// consecutive non-decreasing residuals above `tol` abort with the residual
/// log.
pub fn solve_window(
    scenario: &Scenario,
    paths: &PathEnsemble,
    window: WindowRange,
    terminal: &[f64],
    max_iter: usize,
    tol: f64,
) -> Result<WindowSolution> {
    let n = paths.n_paths();
    let mut u = Channel::zeros(window.n_nodes(), n);
    let mut residuals = Vec::new();
    let mut theta_stats = Vec::new();
    let mut clamp_count = 0u64;
    let mut driver_evals = 0u64;
    let mut last: Option<WindowTriple> = None;
    let mut converged = false;
    let mut rise_streak = 0usize;
    let theta_on = scenario.picard.theta_diagnostics;
    let theta = scenario.picard.theta;
    let gamma = scenario.driver.gamma().unwrap_or(1.0);

    for _m in 1..=max_iter.max(1) {
        let u_laws: Vec<LawStats> = (0..window.n_nodes()).map(|i| law_stats(u.at(i))).collect();
        let triple = gamma_map(scenario, paths, window, &u, &u_laws, terminal)?;
        clamp_count += triple.clamp_count;
        driver_evals += triple.driver_evals;

        if scenario.driver.is_u_independent() {
            residuals.push(0.0);
            last = Some(triple);
            converged = true;
            break;
        }

        let r = picard_residual(&u, &triple.big_y);
        residuals.push(r);
        if theta_on {
            theta_stats.push(theta_residual(&u, &triple.big_y, theta, gamma)?.stats);
        }
        u = triple.big_y.clone();
        last = Some(triple);

        if r <= tol {
            converged = true;
            break;
        }
        let m = residuals.len();
        if m >= 2 && residuals[m - 1] >= residuals[m - 2] {
            rise_streak += 1;
            if rise_streak >= 3 {
                return Err(MrbsdeError::NoContraction { residuals });
            }
        } else {
            rise_streak = 0;
        }
    }

    let triple = last.expect("at least one iteration");
    let y_inner_left = reduce::mean(triple.y_inner.at(0));
    let iterations = residuals.len();
    Ok(WindowSolution {
        window,
        big_y: triple.big_y,
        z: triple.z,
        profile: triple.profile,
        residuals,
        iterations,
        converged,
        clamp_count,
        driver_evals,
        theta_stats,
        y_inner_left,
    })
}

/// Per-window convergence record, kept in time order on the full solution.
#[derive(Debug, Clone, Serialize)]
pub struct WindowSummary {
    pub start: usize,
    pub end: usize,
    pub iterations: usize,
    pub converged: bool,
    pub residuals: Vec<f64>,
}

/// The assembled `(Y, Z, K)` triple with its convergence metadata.
#[derive(Debug, Clone)]
pub struct MrbsdeSolution {
    pub big_y: Channel,
    pub z: ZChannel,
    /// Deterministic reflection process on the grid nodes.
    pub k: Vec<f64>,
    /// Reflection values `L_{t_i}(y_{t_i})` per node, window-local `y`.
    pub l_values: Vec<f64>,
    /// Total solution-map applications across windows.
    pub iterations: usize,
    /// Residuals in execution order (latest window first).
    pub picard_residuals: Vec<f64>,
    pub converged: bool,
    pub windows: Vec<WindowSummary>,
    pub clamp_count: u64,
    pub driver_evals: u64,
    pub theta_stats: Vec<ThetaStats>,
    /// Inner-solution mean at `t = 0`, the plain-Monte-Carlo value the
    /// exponential moment diagnostic compares against.
    pub y0_inner: f64,
    /// Window length in time units actually used for splitting.
    pub window_h: f64,
}

impl MrbsdeSolution {
    pub fn clamp_rate(&self) -> f64 {
        if self.driver_evals == 0 {
            0.0
        } else {
            self.clamp_count as f64 / self.driver_evals as f64
        }
    }
}

/// Solves the full horizon by backward window stitching.
///
/// Windows are `[T-h, T], [T-2h, T-h], ...` with `h` from the contraction
/// analysis (or the scenario override), snapped to whole grid steps. The
/// terminal samples of each window are the pathwise left-edge `Y` values of
/// the window after it in time, and the global `K` accumulates the window
/// segments so `K[0] = 0`.
pub fn solve_full(scenario: &Scenario, paths: &PathEnsemble) -> Result<MrbsdeSolution> {
    let grid = paths.grid();
    let n = grid.n_steps();
    let horizon = grid.horizon();

    let h = match scenario.picard.h_override {
        Some(h_over) => {
            match contraction_window(&scenario.driver, &scenario.loss, scenario.terminal.p) {
                Ok(computed) if h_over > computed.h => log::warn!(
                    "window override {h_over} exceeds the contractive length {}",
                    computed.h
                ),
                Err(_) => log::warn!(
                    "window override {h_over} used although no contractive length exists"
                ),
                _ => {}
            }
            h_over
        }
        None => contraction_window(&scenario.driver, &scenario.loss, scenario.terminal.p)?.h,
    }
    .min(horizon);
    let steps_per_window = ((h / grid.step() + 1e-9).floor() as usize).clamp(1, n);

    let mut terminal: Vec<f64> = paths
        .terminal_levels()
        .iter()
        .map(|&b| scenario.terminal.eval(b))
        .collect();

    let mut solved: Vec<WindowSolution> = Vec::new();
    let mut ib = n;
    let mut window_index = 0usize;
    while ib > 0 {
        let ia = ib.saturating_sub(steps_per_window);
        let window = WindowRange::new(ia, ib);
        let ws = solve_window(
            scenario,
            paths,
            window,
            &terminal,
            scenario.picard.max_iter,
            scenario.picard.tol,
        )
        .map_err(|e| MrbsdeError::Window {
            index: window_index,
            source: Box::new(e),
        })?;
        terminal = ws.big_y.at(0).to_vec();
        solved.push(ws);
        ib = ia;
        window_index += 1;
    }

    // Assemble global channels in time order; stitched edge nodes carry
    // identical values in both windows.
    let picard_residuals: Vec<f64> = solved.iter().flat_map(|w| w.residuals.clone()).collect();
    let theta_stats: Vec<ThetaStats> = solved.iter().flat_map(|w| w.theta_stats.clone()).collect();
    let iterations: usize = solved.iter().map(|w| w.iterations).sum();
    let converged = solved.iter().all(|w| w.converged);
    let clamp_count: u64 = solved.iter().map(|w| w.clamp_count).sum();
    let driver_evals: u64 = solved.iter().map(|w| w.driver_evals).sum();
    let y0_inner = solved.last().expect("at least one window").y_inner_left;

    let n_paths = paths.n_paths();
    let d = paths.dim();
    let mut big_y = Channel::zeros(n + 1, n_paths);
    let mut z = ZChannel::zeros(n, d, n_paths);
    let mut k = vec![0.0; n + 1];
    let mut l_values = vec![0.0; n + 1];
    let mut acc = 0.0;
    let mut windows = Vec::with_capacity(solved.len());
    for ws in solved.iter().rev() {
        let (ia, ib) = (ws.window.start, ws.window.end);
        for li in 0..ws.window.n_nodes() {
            big_y
                .at_mut(ia + li)
                .copy_from_slice(ws.big_y.at(li));
            k[ia + li] = acc + ws.profile.k()[li];
        }
        // left-inclusive write keeps the K-relevant reflection value at
        // stitched nodes
        for li in 0..ws.window.n_steps() {
            l_values[ia + li] = ws.profile.l_values()[li];
            for coord in 0..d {
                z.at_mut(ia + li, coord).copy_from_slice(ws.z.at(li, coord));
            }
        }
        if ib == n {
            l_values[n] = ws.profile.l_values()[ws.window.n_steps()];
        }
        acc += ws.profile.k()[ws.window.n_steps()];
        windows.push(WindowSummary {
            start: ia,
            end: ib,
            iterations: ws.iterations,
            converged: ws.converged,
            residuals: ws.residuals.clone(),
        });
    }

    Ok(MrbsdeSolution {
        big_y,
        z,
        k,
        l_values,
        iterations,
        picard_residuals,
        converged,
        windows,
        clamp_count,
        driver_evals,
        theta_stats,
        y0_inner,
        window_h: steps_per_window as f64 * grid.step(),
    })
}
