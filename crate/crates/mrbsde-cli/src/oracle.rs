//! Detection of scenarios with a closed-form reference, used by sweeps to
//! report a true error column.

use mrbsde::picard::MrbsdeSolution;
use mrbsde::{LossKind, PathEnsemble, Scenario, TerminalKind, TimeGrid, ZPart};

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum KnownOracle {
    /// Constant driver `f = a0`, loss `y - c`, identity terminal: the inner
    /// mean is `a0 (T - t)`, the reflection is `(c - a0(T-t))^+`, and `K`
    /// follows from the backward sup scan.
    ConstantDriverK { a0: f64, c: f64 },
    /// Pure quadratic driver with identity terminal: `y_0 = gamma T / 2`.
    QuadraticY0 { gamma: f64 },
}

pub fn detect_oracle(sc: &Scenario) -> Option<KnownOracle> {
    if !sc.driver.is_u_independent() {
        return None;
    }
    if !matches!(sc.terminal.kind, TerminalKind::Identity) {
        return None;
    }
    match (&sc.driver.z_part, &sc.loss.kind) {
        (
            ZPart::Quadratic {
                gamma,
                concave: false,
            },
            _,
        ) if sc.driver.affine.a0 == 0.0 => Some(KnownOracle::QuadraticY0 { gamma: *gamma }),
        (ZPart::Linear { b }, LossKind::LinearShift { c, c_slope })
            if *b == 0.0 && *c_slope == 0.0 =>
        {
            Some(KnownOracle::ConstantDriverK {
                a0: sc.driver.affine.a0,
                c: *c,
            })
        }
        _ => None,
    }
}

/// Reference `K` on the grid for the constant-driver scenario: the exact
/// reflection values `(c - a0 (T - t))^+` pushed through the same backward
/// sup scan the solver uses.
pub fn k_reference(a0: f64, c: f64, grid: &TimeGrid) -> Vec<f64> {
    let horizon = grid.horizon();
    let l: Vec<f64> = grid
        .times()
        .iter()
        .map(|&t| (c - a0 * (horizon - t)).max(0.0))
        .collect();
    let n = l.len();
    let mut tail = vec![0.0; n];
    tail[n - 1] = l[n - 1];
    for i in (0..n - 1).rev() {
        tail[i] = l[i].max(tail[i + 1]);
    }
    tail.iter().map(|&s| tail[0] - s).collect()
}

/// True-solution error of a finished run, when a reference exists.
///
/// For the constant-driver family the full solution is known pathwise
/// (`Y_t = B_t + (c - a0(T-t))^+ + a0(T-t) - L`-free form reduces to
/// `Y = B` when the constraint binds everywhere), so the error combines the
/// sup-norm `K` deviation with the mean pathwise `Y` deviation. The mean
/// telescoping of the regression makes the `K` part nearly exact; the `Y`
/// part carries the Monte Carlo rate.
pub fn oracle_error(
    oracle: KnownOracle,
    grid: &TimeGrid,
    paths: &PathEnsemble,
    solution: &MrbsdeSolution,
) -> f64 {
    match oracle {
        KnownOracle::ConstantDriverK { a0, c } => {
            let reference = k_reference(a0, c, grid);
            let k_err = solution
                .k
                .iter()
                .zip(&reference)
                .map(|(a, b)| (a - b).abs())
                .fold(0.0f64, f64::max);
            let horizon = grid.horizon();
            let n = paths.n_paths();
            let y_err = mrbsde::reduce::mean_of(grid.n_nodes(), &|i| {
                let t = grid.time(i);
                // Y_t = B_t + sup_{s>=t} (c - a0(T-s))^+ + a0(T-t)
                let tail = grid.times()[i..]
                    .iter()
                    .map(|&s| (c - a0 * (horizon - s)).max(0.0))
                    .fold(0.0f64, f64::max);
                let y_row = solution.big_y.at(i);
                let b_row = paths.level(i, 0);
                mrbsde::reduce::mean_of(n, &|p| {
                    (y_row[p] - (b_row[p] + a0 * (horizon - t) + tail)).abs()
                })
            });
            k_err + y_err
        }
        KnownOracle::QuadraticY0 { gamma } => {
            let ey0 = mrbsde::reduce::mean(solution.big_y.at(0));
            (ey0 - 0.5 * gamma * grid.horizon()).abs()
        }
    }
}
