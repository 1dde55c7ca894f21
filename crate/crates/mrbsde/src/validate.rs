//! Scenario validation: every standing assumption is checked on a probe
//! mesh or by Monte Carlo before a scenario is allowed to run.
//!
//! Checks are named after the hypothesis they certify:
//! - `(H1)`   terminal feasibility `E[l(T, xi)] >= -feas_tol`
//! - `(H2)`   declared driver Lipschitz constant (Lipschitz regime)
//! - `(H2')`  bounded terminal and growth constants (quadratic bounded)
//! - `(H2'')` growth constants and `z`-convexity (quadratic unbounded)
//! - `(H3.2)` strict monotonicity of `y -> l(t, y)`
//! - `(H3.3)` positivity of the loss at the top of the certified range
//! - `(H3.4)` linear growth `|l(t, y)| <= L (1 + |y|)`
//! - `(H4)`   bi-Lipschitz sandwich `C <= |dl|/|dy| <= kappa C`
//!
//! All constants are certified on the compact range `[-y_max, y_max]`
//! declared by the scenario; the probe mesh has 101 equispaced points.

use crate::reduce;
use crate::rng;
use crate::scenario::{Regime, Scenario, ZPart};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

const MESH_POINTS: usize = 101;
/// Relative slack for float-safe comparisons of declared constants.
const REL_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ValidationCheck {
    pub name: String,
    pub pass: bool,
    /// Signed distance to the pass boundary; non-negative iff `pass`.
    pub margin: f64,
    pub detail: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ValidationReport {
    pub checks: Vec<ValidationCheck>,
}

impl ValidationReport {
    pub fn pass(&self) -> bool {
        self.checks.iter().all(|c| c.pass)
    }

    pub fn first_failure(&self) -> Option<&ValidationCheck> {
        self.checks.iter().find(|c| !c.pass)
    }
}

fn probe_mesh(y_max: f64) -> Vec<f64> {
    (0..MESH_POINTS)
        .map(|i| -y_max + 2.0 * y_max * i as f64 / (MESH_POINTS - 1) as f64)
        .collect()
}

/// Terminal samples `g(B_T)` drawn from the same keyed streams the path
/// ensemble uses, so the feasibility estimate matches the solver's samples.
pub fn terminal_samples(sc: &Scenario) -> Vec<f64> {
    let n = sc.paths.n_paths;
    let d = sc.paths.d;
    let n_steps = sc.grid.n_steps;
    let sqrt_h = (sc.grid.horizon / n_steps as f64).sqrt();
    let mut out = vec![0.0f64; n];
    out.par_iter_mut().enumerate().for_each(|(p, v)| {
        let mut stream = rng::path_stream(sc.paths.seed, p as u64);
        let mut acc = 0.0;
        for _ in 0..n_steps {
            for k in 0..d {
                let z = rng::standard_normal(&mut stream);
                if k == 0 {
                    acc += sqrt_h * z;
                }
            }
        }
        *v = sc.terminal.eval(acc);
    });
    out
}

pub fn validate_scenario(sc: &Scenario) -> ValidationReport {
    let mut checks = Vec::new();

    checks.push(loss_constants(sc));
    if let Ok(grid) = sc.time_grid() {
        let times = grid.times().to_vec();
        match sc.loss.prepared() {
            Ok(prepared) => {
                let mesh = probe_mesh(sc.loss.y_max);
                checks.push(monotonicity(&prepared, &times, &mesh));
                checks.push(growth(sc, &prepared, &times, &mesh));
                checks.push(sandwich(sc, &prepared, &times, &mesh));
                checks.push(positivity_at_top(&prepared, &times, sc.loss.y_max));
                checks.push(feasibility(sc, &prepared));
            }
            Err(e) => checks.push(ValidationCheck {
                name: "loss-form".into(),
                pass: false,
                margin: -1.0,
                detail: e.to_string(),
            }),
        }
    } else {
        checks.push(ValidationCheck {
            name: "grid".into(),
            pass: false,
            margin: -1.0,
            detail: "invalid grid".into(),
        });
    }

    checks.push(regime_consistency(sc));
    match sc.driver.regime {
        Regime::Lipschitz => checks.push(lipschitz_constant(sc)),
        Regime::QuadraticBounded | Regime::QuadraticUnbounded => {
            checks.push(beta_covers_affine(sc))
        }
    }
    checks.push(paths_and_basis(sc));

    ValidationReport { checks }
}

fn paths_and_basis(sc: &Scenario) -> ValidationCheck {
    let n = sc.paths.n_paths;
    let basis = crate::bsde::RegressionBasis::new(sc.basis.degree, sc.paths.d);
    let mut problems = Vec::new();
    if n < 2 {
        problems.push("n_paths must be >= 2".to_string());
    }
    if sc.paths.d == 0 {
        problems.push("d must be >= 1".to_string());
    }
    if let Err(e) = basis.validate(n) {
        problems.push(e.to_string());
    }
    let pass = problems.is_empty();
    ValidationCheck {
        name: "paths-and-basis".into(),
        pass,
        margin: if pass { 0.0 } else { -1.0 },
        detail: if pass {
            format!("{} basis functions over {n} paths", basis.n_funcs())
        } else {
            problems.join("; ")
        },
    }
}

fn loss_constants(sc: &Scenario) -> ValidationCheck {
    let l = &sc.loss;
    let ok = l.kappa >= 1.0
        && l.c_bound > 0.0
        && l.l_growth > 0.0
        && l.y_max.is_finite()
        && l.y_max > 0.0;
    ValidationCheck {
        name: "loss-constants".into(),
        pass: ok,
        margin: if ok { 0.0 } else { -1.0 },
        detail: format!(
            "kappa={} C={} L_growth={} y_max={}",
            l.kappa, l.c_bound, l.l_growth, l.y_max
        ),
    }
}

fn monotonicity(
    prepared: &crate::scenario::PreparedLoss,
    times: &[f64],
    mesh: &[f64],
) -> ValidationCheck {
    let mut min_diff = f64::INFINITY;
    let mut witness = String::new();
    for &t in times {
        for w in mesh.windows(2) {
            let diff = prepared.eval(t, w[1]) - prepared.eval(t, w[0]);
            if diff < min_diff {
                min_diff = diff;
                witness = format!("t={t:.4}, y in [{:.4}, {:.4}]", w[0], w[1]);
            }
        }
    }
    ValidationCheck {
        name: "(H3.2) monotonicity".into(),
        pass: min_diff > 0.0,
        margin: min_diff,
        detail: format!("min probe increment {min_diff:.3e} at {witness}"),
    }
}

fn growth(
    sc: &Scenario,
    prepared: &crate::scenario::PreparedLoss,
    times: &[f64],
    mesh: &[f64],
) -> ValidationCheck {
    let l_growth = sc.loss.l_growth;
    let mut min_margin = f64::INFINITY;
    for &t in times {
        for &y in mesh {
            let bound = l_growth * (1.0 + y.abs());
            let m = bound - prepared.eval(t, y).abs();
            min_margin = min_margin.min(m);
        }
    }
    ValidationCheck {
        name: "(H3.4) linear growth".into(),
        pass: min_margin >= -REL_TOL * l_growth,
        margin: min_margin,
        detail: format!("min of L(1+|y|) - |l| on probe mesh: {min_margin:.3e}"),
    }
}

fn sandwich(
    sc: &Scenario,
    prepared: &crate::scenario::PreparedLoss,
    times: &[f64],
    mesh: &[f64],
) -> ValidationCheck {
    let c = sc.loss.c_bound;
    let kc = sc.loss.kappa * c;
    let ratios: Vec<(f64, f64)> = times
        .par_iter()
        .map(|&t| {
            let mut lo = f64::INFINITY;
            let mut hi = 0.0f64;
            let vals: Vec<f64> = mesh.iter().map(|&y| prepared.eval(t, y)).collect();
            for i in 0..mesh.len() {
                for j in i + 1..mesh.len() {
                    let r = (vals[j] - vals[i]).abs() / (mesh[j] - mesh[i]);
                    lo = lo.min(r);
                    hi = hi.max(r);
                }
            }
            (lo, hi)
        })
        .collect();
    let min_ratio = ratios.iter().map(|r| r.0).fold(f64::INFINITY, f64::min);
    let max_ratio = ratios.iter().map(|r| r.1).fold(0.0f64, f64::max);
    let lower_margin = min_ratio - c * (1.0 - REL_TOL);
    let upper_margin = kc * (1.0 + REL_TOL) - max_ratio;
    let margin = lower_margin.min(upper_margin);
    ValidationCheck {
        name: "(H4) bi-Lipschitz sandwich".into(),
        pass: margin >= 0.0,
        margin,
        detail: format!(
            "probe-pair slope range [{min_ratio:.4e}, {max_ratio:.4e}] vs [C, kappa C] = [{c:.4e}, {kc:.4e}]"
        ),
    }
}

fn positivity_at_top(
    prepared: &crate::scenario::PreparedLoss,
    times: &[f64],
    y_max: f64,
) -> ValidationCheck {
    let mut min_val = f64::INFINITY;
    for &t in times {
        min_val = min_val.min(prepared.eval(t, y_max));
    }
    ValidationCheck {
        name: "(H3.3) positivity at range top".into(),
        pass: min_val > 0.0,
        margin: min_val,
        detail: format!("min over grid times of l(t, y_max) = {min_val:.3e}"),
    }
}

fn feasibility(sc: &Scenario, prepared: &crate::scenario::PreparedLoss) -> ValidationCheck {
    let xi = terminal_samples(sc);
    let t_end = sc.grid.horizon;
    let losses: Vec<f64> = xi.iter().map(|&x| prepared.eval(t_end, x)).collect();
    let mean = reduce::mean(&losses);
    let se = reduce::standard_error(&losses);
    let feas_tol = sc.tolerances.feas_tol.unwrap_or(3.0 * se);
    ValidationCheck {
        name: "(H1) terminal feasibility".into(),
        pass: mean >= -feas_tol,
        margin: mean + feas_tol,
        detail: format!("E[l(T, xi)] = {mean:.5} (se {se:.2e}, feas_tol {feas_tol:.2e})"),
    }
}

fn regime_consistency(sc: &Scenario) -> ValidationCheck {
    let mut problems = Vec::new();
    match sc.driver.regime {
        Regime::Lipschitz => {
            if matches!(sc.driver.z_part, ZPart::Quadratic { .. }) {
                problems.push("lipschitz regime requires a linear z-part".to_string());
            }
            if sc.driver.lambda.is_none() {
                problems.push("lipschitz regime requires a declared lambda".to_string());
            }
            if sc.terminal.p <= 1.0 {
                problems.push("terminal moment order p must exceed 1".to_string());
            }
        }
        Regime::QuadraticBounded => {
            if !sc.terminal.bounded || !sc.terminal.structurally_bounded() {
                problems.push("quadratic_bounded requires a bounded terminal".to_string());
            }
            if sc.driver.beta.is_none() {
                problems.push("quadratic regimes require a declared beta".to_string());
            }
        }
        Regime::QuadraticUnbounded => {
            if sc.driver.beta.is_none() {
                problems.push("quadratic regimes require a declared beta".to_string());
            }
        }
    }
    if sc.terminal.bounded && !sc.terminal.structurally_bounded() {
        problems.push("terminal bounded flag set on an unbounded form".to_string());
    }
    if let ZPart::Quadratic { gamma, .. } = sc.driver.z_part {
        if gamma <= 0.0 {
            problems.push("quadratic z-part requires gamma > 0".to_string());
        }
    }
    let pass = problems.is_empty();
    ValidationCheck {
        name: "driver-regime consistency".into(),
        pass,
        margin: if pass { 0.0 } else { -1.0 },
        detail: if pass {
            // Convexity in z holds for every assembled form, and f(t,0,d0,0)
            // is the constant a0.
            format!("regime {} consistent; f(t,0,d0,0) = {}", sc.driver.regime.name(), sc.driver.affine.a0)
        } else {
            problems.join("; ")
        },
    }
}

/// Measured Lipschitz ratio of the assembled driver over random probe
/// tuples in `(y, law, z)`, compared with the declared lambda.
fn lipschitz_constant(sc: &Scenario) -> ValidationCheck {
    let lambda = sc.driver.lambda.unwrap_or(0.0);
    let d = sc.paths.d;
    let mut state = 0xA11CEu64 ^ sc.paths.seed;
    let mut next_unit = move || {
        state = state
            .wrapping_mul(6364136223846793005)
            .wrapping_add(1442695040888963407);
        (state >> 11) as f64 / (1u64 << 53) as f64
    };
    let y_max = sc.loss.y_max;
    let mut max_ratio = 0.0f64;
    let mut witness = String::new();
    for _ in 0..400 {
        let y1 = (2.0 * next_unit() - 1.0) * y_max;
        let y2 = (2.0 * next_unit() - 1.0) * y_max;
        // two-point laws with equal weights
        let (m1, s1) = ((2.0 * next_unit() - 1.0) * 3.0, next_unit() * 2.0);
        let (m2, s2) = ((2.0 * next_unit() - 1.0) * 3.0, next_unit() * 2.0);
        let law1 = crate::measure::law_stats(&[m1 - s1, m1 + s1]);
        let law2 = crate::measure::law_stats(&[m2 - s2, m2 + s2]);
        let w1_dist = 0.5 * (((m1 - s1) - (m2 - s2)).abs() + ((m1 + s1) - (m2 + s2)).abs());
        let z1: Vec<f64> = (0..d).map(|_| (2.0 * next_unit() - 1.0) * 3.0).collect();
        let z2: Vec<f64> = (0..d).map(|_| (2.0 * next_unit() - 1.0) * 3.0).collect();
        let dz = (0..d)
            .map(|k| (z1[k] - z2[k]) * (z1[k] - z2[k]))
            .sum::<f64>()
            .sqrt();
        let denom = (y1 - y2).abs() + w1_dist + dz;
        if denom < 1e-12 {
            continue;
        }
        let f1 = sc.driver.eval(y1, law1, &z1);
        let f2 = sc.driver.eval(y2, law2, &z2);
        let ratio = (f1 - f2).abs() / denom;
        if ratio > max_ratio {
            max_ratio = ratio;
            witness = format!("dy={:.3} W1={:.3} dz={:.3}", (y1 - y2).abs(), w1_dist, dz);
        }
    }
    let margin = lambda * (1.0 + REL_TOL) - max_ratio;
    ValidationCheck {
        name: "(H2) driver Lipschitz constant".into(),
        pass: margin >= 0.0,
        margin,
        detail: format!("measured ratio {max_ratio:.4} vs lambda {lambda:.4} ({witness})"),
    }
}

fn beta_covers_affine(sc: &Scenario) -> ValidationCheck {
    let beta = sc.driver.beta.unwrap_or(0.0);
    let a = &sc.driver.affine;
    let needed = a.a_y.abs().max(a.a_mean.abs() + a.a_w1.abs());
    let margin = beta * (1.0 + REL_TOL) - needed;
    let name = match sc.driver.regime {
        Regime::QuadraticBounded => "(H2') growth constants",
        _ => "(H2'') growth constants",
    };
    ValidationCheck {
        name: name.into(),
        pass: margin >= 0.0 && beta > 0.0,
        margin: if beta > 0.0 { margin } else { -1.0 },
        detail: format!(
            "beta {beta} vs max(|a_y|, |a_mean|+|a_w1|) = {needed}; alpha_t = |a0| = {}",
            a.a0.abs()
        ),
    }
}
