//! Reflection operator and construction of `(Y, K)` from the inner solution.
//!
//! The operator `L_t(eta) = inf { x >= 0 : E[l(t, x + eta)] >= 0 }` is the
//! smallest non-negative shift making the constraint hold at time `t`; it is
//! solved against the empirical expectation by monotone bisection. The
//! deterministic reflection process is assembled from per-time values
//! `L_{t_i}(y_{t_i})` through a backward running sup:
//!
//! ```text
//! tail_sup[i] = max_{j >= i} L_j,    K[i] = tail_sup[0] - tail_sup[i],
//! Y[p][i]     = y[p][i] + tail_sup[i].
//! ```
//!
//! `K` starts at zero, is non-decreasing, and increases only at times where
//! the running sup is attained, which is the discrete flat-off mechanism.

use crate::error::{MrbsdeError, Result};
use crate::measure::EmpiricalLaw;
use crate::paths::Channel;
use crate::reduce;
use crate::scenario::{LossSpec, PreparedLoss};

/// Per-grid-time reflection values and the derived deterministic `K`.
#[derive(Debug, Clone, PartialEq)]
pub struct ReflectionProfile {
    l_values: Vec<f64>,
    tail_sup: Vec<f64>,
    k: Vec<f64>,
}

impl ReflectionProfile {
    pub fn len(&self) -> usize {
        self.l_values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.l_values.is_empty()
    }

    pub fn l_values(&self) -> &[f64] {
        &self.l_values
    }

    pub fn tail_sup(&self) -> &[f64] {
        &self.tail_sup
    }

    pub fn k(&self) -> &[f64] {
        &self.k
    }

    /// Indices where the running sup is attained at the current time, i.e.
    /// where `K` is allowed to increase. Float-safe tie detection.
    pub fn binding_indices(&self) -> Vec<usize> {
        (0..self.len())
            .filter(|&i| self.tail_sup[i] - self.l_values[i] <= 1e-12)
            .collect()
    }
}

fn mean_shifted_loss(loss: &PreparedLoss, t: f64, x: f64, eta: &[f64]) -> f64 {
    reduce::mean_of(eta.len(), &|p| loss.eval(t, x + eta[p]))
}

/// Smallest `x >= 0` with empirical mean of `l(t, x + eta)` non-negative,
/// within `bisect_tol`. Returns exactly `0` when the constraint already
/// holds, and always returns a point where the empirical mean is `>= 0`.
pub fn solve_l(
    loss: &LossSpec,
    t: f64,
    eta: &EmpiricalLaw,
    bisect_tol: f64,
    x_max_cap: f64,
) -> Result<f64> {
    if eta.is_empty() {
        return Err(MrbsdeError::InvalidArgument(
            "reflection operator needs non-empty samples".into(),
        ));
    }
    let prepared = loss.prepared()?;
    let samples = eta.samples();
    let g = |x: f64| mean_shifted_loss(&prepared, t, x, samples);

    if g(0.0) >= 0.0 {
        return Ok(0.0);
    }
    // Bracket: double the upper end until the mean turns non-negative. The
    // cap converts a structurally infeasible loss into a diagnosable error.
    let mut hi = 1.0;
    let mut lo = 0.0;
    while g(hi) < 0.0 {
        lo = hi;
        hi *= 2.0;
        if hi > x_max_cap {
            return Err(MrbsdeError::BracketExceeded { t, cap: x_max_cap });
        }
    }
    while hi - lo > bisect_tol {
        let mid = 0.5 * (lo + hi);
        if g(mid) >= 0.0 {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Ok(hi)
}

/// Backward max-scan over per-time reflection values.
pub fn build_profile(l_values: Vec<f64>) -> Result<ReflectionProfile> {
    if l_values.is_empty() {
        return Err(MrbsdeError::InvalidArgument(
            "profile needs at least one value".into(),
        ));
    }
    for (i, &v) in l_values.iter().enumerate() {
        if !(v >= 0.0) {
            return Err(MrbsdeError::NegativeReflection { index: i, value: v });
        }
    }
    let n = l_values.len();
    let mut tail_sup = vec![0.0; n];
    tail_sup[n - 1] = l_values[n - 1];
    for i in (0..n - 1).rev() {
        tail_sup[i] = l_values[i].max(tail_sup[i + 1]);
    }
    let k = tail_sup.iter().map(|&s| tail_sup[0] - s).collect();
    Ok(ReflectionProfile {
        l_values,
        tail_sup,
        k,
    })
}

/// `Y = y + tail_sup`, per path and grid time.
///
/// A zero shift copies bits through unchanged, so a never-binding profile
/// leaves the channel identical.
pub fn deflect(y: &Channel, profile: &ReflectionProfile) -> Channel {
    assert_eq!(y.n_nodes(), profile.len(), "channel/profile length mismatch");
    let mut out = y.clone();
    for i in 0..profile.len() {
        let s = profile.tail_sup[i];
        if s != 0.0 {
            for v in out.at_mut(i) {
                *v += s;
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scenario::LossKind;
    use proptest::prelude::*;

    fn linear_loss(c: f64) -> LossSpec {
        LossSpec {
            kind: LossKind::LinearShift { c, c_slope: 0.0 },
            kappa: 2.0,
            c_bound: 0.5,
            l_growth: 2.0,
            y_max: 10.0,
        }
    }

    fn cubic_loss(c: f64) -> LossSpec {
        LossSpec {
            kind: LossKind::CubicShift { c, c_slope: 0.0 },
            kappa: 500.0,
            c_bound: 0.01,
            l_growth: 1500.0,
            y_max: 10.0,
        }
    }

    const TOL: f64 = 1e-10;

    #[test]
    fn linear_shift_has_closed_form() {
        // L = (c - mean(eta))^+ for l(y) = y - c
        let loss = linear_loss(0.5);
        let eta = EmpiricalLaw::new(vec![0.1, 0.3]); // mean 0.2
        let x = solve_l(&loss, 0.0, &eta, TOL, 1e6).unwrap();
        assert!((x - 0.3).abs() <= TOL, "x = {x}");
    }

    #[test]
    fn already_feasible_returns_exact_zero() {
        let loss = linear_loss(0.5);
        let eta = EmpiricalLaw::new(vec![0.7, 0.9]); // mean 0.8
        let x = solve_l(&loss, 0.0, &eta, TOL, 1e6).unwrap();
        assert_eq!(x, 0.0);
    }

    /// Independent scalar bisection on the analytic map, used to freeze the
    /// cubic expectation's root.
    fn bisect_oracle(f: impl Fn(f64) -> f64, mut lo: f64, mut hi: f64) -> f64 {
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if f(mid) >= 0.0 {
                hi = mid;
            } else {
                lo = mid;
            }
        }
        hi
    }

    #[test]
    fn cubic_root_matches_antisymmetry_and_oracle() {
        // (x-2)^3 + (x+1)^3 = 0 at x = 0.5 by antisymmetry around the roots.
        let oracle = bisect_oracle(|x| (x - 2.0f64).powi(3) + (x + 1.0f64).powi(3), 0.0, 4.0);
        assert!((oracle - 0.5).abs() < 1e-12);

        let loss = cubic_loss(0.0);
        let eta = EmpiricalLaw::new(vec![-2.0, 1.0]);
        let x = solve_l(&loss, 0.0, &eta, TOL, 1e6).unwrap();
        assert!((x - 0.5).abs() <= TOL, "x = {x}");
    }

    #[test]
    fn structurally_infeasible_loss_exceeds_bracket() {
        // Flat-topped negative table: the mean never reaches zero.
        let loss = LossSpec {
            kind: LossKind::CustomTable {
                knots: vec![[-1.0, -2.0], [0.0, -1.0], [1.0, -1.0]],
            },
            kappa: 2.0,
            c_bound: 0.1,
            l_growth: 3.0,
            y_max: 10.0,
        };
        let eta = EmpiricalLaw::new(vec![0.0, 0.5]);
        let err = solve_l(&loss, 0.0, &eta, TOL, 1e6).unwrap_err();
        assert!(matches!(err, MrbsdeError::BracketExceeded { .. }));
    }

    #[test]
    fn profile_from_worked_example() {
        let p = build_profile(vec![1.0, 0.4, 0.7, 0.2]).unwrap();
        assert_eq!(p.tail_sup(), &[1.0, 0.7, 0.7, 0.2]);
        for (got, want) in p.k().iter().zip([0.0, 0.3, 0.3, 0.8]) {
            assert!((got - want).abs() < 1e-15, "K {got} vs {want}");
        }
        assert_eq!(p.binding_indices(), vec![0, 2, 3]);
    }

    #[test]
    fn zero_profile_gives_zero_k() {
        let p = build_profile(vec![0.0; 5]).unwrap();
        assert!(p.k().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn decreasing_ramp_yields_linear_k() {
        // L(t) = 0.2 (1 - t) on [0, 1]: sup over [t, 1] is L(t) itself, so
        // K(t) = 0.2 t exactly.
        let n = 10usize;
        let l: Vec<f64> = (0..=n).map(|i| 0.2 * (1.0 - i as f64 / n as f64)).collect();
        let p = build_profile(l).unwrap();
        for i in 0..=n {
            let expected = 0.2 * i as f64 / n as f64;
            assert!((p.k()[i] - expected).abs() < 1e-15, "i = {i}");
        }
    }

    #[test]
    fn negative_value_rejected() {
        let err = build_profile(vec![0.1, -0.2]).unwrap_err();
        assert!(matches!(
            err,
            MrbsdeError::NegativeReflection { index: 1, .. }
        ));
    }

    #[test]
    fn deflect_adds_tail_sup() {
        let y = Channel::zeros(4, 2);
        let p = build_profile(vec![1.0, 0.4, 0.7, 0.2]).unwrap();
        let big_y = deflect(&y, &p);
        for path in 0..2 {
            assert_eq!(big_y.at(0)[path], 1.0);
            assert_eq!(big_y.at(1)[path], 0.7);
            assert_eq!(big_y.at(2)[path], 0.7);
            assert_eq!(big_y.at(3)[path], 0.2);
        }
    }

    #[test]
    fn zero_tail_sup_is_bitwise_identity() {
        let mut y = Channel::zeros(2, 3);
        y.at_mut(0).copy_from_slice(&[1.5, -0.25, 3.0]);
        y.at_mut(1).copy_from_slice(&[0.5, -2.0, 0.125]);
        let p = build_profile(vec![0.0, 0.0]).unwrap();
        let out = deflect(&y, &p);
        assert_eq!(out, y);
    }

    #[test]
    fn operator_is_kappa_lipschitz_in_the_law() {
        // For the linear loss the exact constant is 1; the measured ratio
        // must stay within the declared kappa after removing the bisection
        // slack.
        let loss = linear_loss(0.3);
        let mut state = 123u64;
        let mut next = move || {
            state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            ((state >> 33) as f64 / (1u64 << 31) as f64) - 1.0
        };
        for _ in 0..50 {
            let a: Vec<f64> = (0..32).map(|_| next()).collect();
            let b: Vec<f64> = a.iter().map(|x| x + 0.2 * next()).collect();
            let la = solve_l(&loss, 0.0, &EmpiricalLaw::new(a.clone()), TOL, 1e6).unwrap();
            let lb = solve_l(&loss, 0.0, &EmpiricalLaw::new(b.clone()), TOL, 1e6).unwrap();
            let mean_abs = reduce::mean_of(32, &|i| (a[i] - b[i]).abs());
            assert!(
                (la - lb).abs() <= loss.kappa * mean_abs + 2.0 * TOL,
                "|dL| = {}, mean|d eta| = {mean_abs}",
                (la - lb).abs()
            );
        }
    }

    proptest! {
        #[test]
        fn profile_invariants_hold(values in prop::collection::vec(0.0f64..5.0, 1..60)) {
            let p = build_profile(values.clone()).unwrap();
            let n = p.len();
            prop_assert_eq!(p.k()[0], 0.0);
            for i in 0..n - 1 {
                prop_assert!(p.tail_sup()[i] >= p.tail_sup()[i + 1]);
                prop_assert!(p.k()[i] <= p.k()[i + 1]);
                prop_assert_eq!(p.tail_sup()[i], values[i].max(p.tail_sup()[i + 1]));
            }
            for i in 0..n {
                prop_assert_eq!(p.k()[i], p.tail_sup()[0] - p.tail_sup()[i]);
            }
        }
    }
}
