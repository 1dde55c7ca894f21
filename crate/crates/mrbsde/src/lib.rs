//! Numerical solver for backward stochastic differential equations with
//! mean reflection.
//!
//! The solved system is the triple `(Y, Z, K)` satisfying
//!
//! ```text
//! Y_t = xi + int_t^T f(s, Y_s, law(Y_s), Z_s) ds - int_t^T Z_s dB_s + K_T - K_t,
//! E[l(t, Y_t)] >= 0 for all t,   int_0^T E[l(t, Y_t)] dK_t = 0,
//! ```
//!
//! where the constraint acts on the law of `Y` through a running loss
//! function `l` and `K` is deterministic, non-decreasing and continuous.
//!
//! The solver combines:
//! - regression Monte Carlo backward induction for the unreflected inner
//!   BSDE ([`bsde`]),
//! - a bisection reflection operator `L_t` and the running-sup construction
//!   of `K` ([`reflector`]),
//! - an outer fixed-point (Picard) loop over the frozen law argument, with
//!   contraction-sized time windows stitched backward ([`picard`]),
//! - empirical-law summaries for distribution-dependent drivers ([`measure`]),
//! - post-solution verification of every checkable structural property
//!   ([`diagnostics`]).
//!
//! Everything is deterministic for a fixed scenario and seed: Gaussian
//! sampling is counter-addressable per `(seed, path, step, coordinate)` and
//! all statistical reductions use a fixed pairwise summation tree, so results
//! are bit-identical under any worker count.

pub mod bsde;
pub mod diagnostics;
pub mod error;
pub mod grid;
pub mod measure;
pub mod paths;
pub mod picard;
pub mod quadrature;
pub mod reduce;
pub mod reflector;
pub mod rng;
pub mod scenario;
pub mod validate;

pub use bsde::{InnerSolution, LinearOracle, QuadraticOracle, RegressionBasis};
pub use diagnostics::{DiagEntry, DiagnosticsReport};
pub use error::{MrbsdeError, Result};
pub use grid::{TimeGrid, WindowRange};
pub use measure::{law_stats, w1, EmpiricalLaw, LawStats};
pub use paths::{simulate_paths, Channel, PathEnsemble};
pub use picard::{
    contraction_window, gamma_map, solve_full, solve_window, theta_residual, ContractionWindow,
    MrbsdeSolution, ThetaStats, WindowSolution,
};
pub use reflector::{build_profile, deflect, solve_l, ReflectionProfile};
pub use scenario::{
    Affine, BasisConfig, DriverSpec, GridConfig, LossKind, LossSpec, PathsConfig, PicardConfig,
    Regime, Scenario, TerminalKind, TerminalSpec, Tolerances, ZPart,
};
pub use validate::{validate_scenario, ValidationCheck, ValidationReport};
