//! Scenario description: the loss function, driver, terminal condition and
//! solver configuration, all serializable as one JSON document.
//!
//! Config shape:
//!
//! ```json
//! {
//!   "grid":     {"T": 1.0, "n_steps": 100},
//!   "paths":    {"n_paths": 100000, "d": 1, "seed": 42},
//!   "loss":     {"kind": "linear_shift", "params": {"c": 0.0},
//!                "kappa": 2.0, "C": 0.5, "L_growth": 2.0, "y_max": 10.0},
//!   "driver":   {"regime": "lipschitz",
//!                "affine": {"a0": -0.2, "a_y": 0.0, "a_mean": 0.0, "a_w1": 0.0},
//!                "z_part": {"kind": "linear", "b": 0.0},
//!                "lambda": 0.1},
//!   "terminal": {"kind": "identity", "bounded": false, "p": 2.0},
//!   "picard":   {"max_iter": 30, "tol": 1e-7},
//!   "basis":    {"degree": 3},
//!   "tolerances": {}
//! }
//! ```

use crate::error::{MrbsdeError, Result};
use crate::grid::TimeGrid;
use crate::measure::LawStats;
use serde::{Deserialize, Serialize};

fn default_y_max() -> f64 {
    10.0
}
fn default_p() -> f64 {
    2.0
}
fn default_one() -> f64 {
    1.0
}
fn default_dim() -> usize {
    1
}
fn default_max_iter() -> usize {
    30
}
fn default_tol() -> f64 {
    1e-7
}
fn default_theta() -> f64 {
    0.9
}
fn default_degree() -> usize {
    3
}
fn default_x_max_cap() -> f64 {
    1e6
}
fn default_bmo_cap() -> f64 {
    1e3
}

// ---------------------------------------------------------------------------
// Loss function l(t, y)
// ---------------------------------------------------------------------------

/// Functional form of the running loss, tagged by `kind` with per-kind
/// `params`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "params", rename_all = "snake_case")]
pub enum LossKind {
    /// `l(t, y) = y - (c + c_slope t)`
    LinearShift {
        #[serde(default)]
        c: f64,
        #[serde(default)]
        c_slope: f64,
    },
    /// `l(t, y) = exp(a y) - (b + b_slope t)`, `a > 0`
    Exponential {
        a: f64,
        #[serde(default)]
        b: f64,
        #[serde(default)]
        b_slope: f64,
    },
    /// `l(t, y) = (y - (c + c_slope t))^3`
    CubicShift {
        #[serde(default)]
        c: f64,
        #[serde(default)]
        c_slope: f64,
    },
    /// Monotone cubic spline through `(y, value)` knots, linear beyond the
    /// end knots. Time-independent.
    CustomTable { knots: Vec<[f64; 2]> },
}

/// Running loss with its declared regularity constants.
///
/// `kappa` and `c_bound` are the bi-Lipschitz sandwich constants
/// (`C |dy| <= |dl| <= kappa C |dy|`), `l_growth` is the linear-growth
/// constant, and `y_max` bounds the compact range on which the constants are
/// certified by validation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossSpec {
    #[serde(flatten)]
    pub kind: LossKind,
    pub kappa: f64,
    #[serde(rename = "C")]
    pub c_bound: f64,
    #[serde(rename = "L_growth")]
    pub l_growth: f64,
    #[serde(default = "default_y_max")]
    pub y_max: f64,
}

impl LossSpec {
    pub fn prepared(&self) -> Result<PreparedLoss> {
        match &self.kind {
            LossKind::LinearShift { c, c_slope } => Ok(PreparedLoss::LinearShift {
                c0: *c,
                c1: *c_slope,
            }),
            LossKind::Exponential { a, b, b_slope } => {
                if *a <= 0.0 {
                    return Err(MrbsdeError::InvalidScenario(
                        "exponential loss requires a > 0".into(),
                    ));
                }
                Ok(PreparedLoss::Exponential {
                    a: *a,
                    b0: *b,
                    b1: *b_slope,
                })
            }
            LossKind::CubicShift { c, c_slope } => Ok(PreparedLoss::CubicShift {
                c0: *c,
                c1: *c_slope,
            }),
            LossKind::CustomTable { knots } => Ok(PreparedLoss::Table(Pchip::new(knots)?)),
        }
    }

    /// Magnitude of the shift parameters, used to scale default tolerances.
    pub fn c_scale(&self) -> f64 {
        match &self.kind {
            LossKind::LinearShift { c, c_slope } | LossKind::CubicShift { c, c_slope } => {
                c.abs() + c_slope.abs()
            }
            LossKind::Exponential { b, b_slope, .. } => b.abs() + b_slope.abs(),
            LossKind::CustomTable { knots } => knots
                .iter()
                .map(|k| k[1].abs())
                .fold(0.0f64, f64::max),
        }
    }

    pub fn kind_name(&self) -> &'static str {
        match self.kind {
            LossKind::LinearShift { .. } => "linear_shift",
            LossKind::Exponential { .. } => "exponential",
            LossKind::CubicShift { .. } => "cubic_shift",
            LossKind::CustomTable { .. } => "custom_table",
        }
    }
}

/// Loss form with any spline coefficients precomputed; cheap to evaluate in
/// the bisection loop.
#[derive(Debug, Clone)]
pub enum PreparedLoss {
    LinearShift { c0: f64, c1: f64 },
    Exponential { a: f64, b0: f64, b1: f64 },
    CubicShift { c0: f64, c1: f64 },
    Table(Pchip),
}

impl PreparedLoss {
    #[inline]
    pub fn eval(&self, t: f64, y: f64) -> f64 {
        match self {
            PreparedLoss::LinearShift { c0, c1 } => y - (c0 + c1 * t),
            PreparedLoss::Exponential { a, b0, b1 } => (a * y).exp() - (b0 + b1 * t),
            PreparedLoss::CubicShift { c0, c1 } => {
                let d = y - (c0 + c1 * t);
                d * d * d
            }
            PreparedLoss::Table(p) => p.eval(y),
        }
    }
}

/// Monotone cubic Hermite interpolant (Fritsch-Carlson slope limiting),
/// extended linearly with the end slopes outside the knot range.
#[derive(Debug, Clone)]
pub struct Pchip {
    xs: Vec<f64>,
    ys: Vec<f64>,
    slopes: Vec<f64>,
}

impl Pchip {
    pub fn new(knots: &[[f64; 2]]) -> Result<Self> {
        if knots.len() < 2 {
            return Err(MrbsdeError::InvalidScenario(
                "custom_table needs at least 2 knots".into(),
            ));
        }
        let xs: Vec<f64> = knots.iter().map(|k| k[0]).collect();
        let ys: Vec<f64> = knots.iter().map(|k| k[1]).collect();
        for w in xs.windows(2) {
            if !(w[1] > w[0]) {
                return Err(MrbsdeError::InvalidScenario(
                    "custom_table knot abscissae must be strictly increasing".into(),
                ));
            }
        }
        let n = xs.len();
        let mut secants = vec![0.0; n - 1];
        for i in 0..n - 1 {
            secants[i] = (ys[i + 1] - ys[i]) / (xs[i + 1] - xs[i]);
        }
        let mut slopes = vec![0.0; n];
        slopes[0] = secants[0];
        slopes[n - 1] = secants[n - 2];
        for i in 1..n - 1 {
            if secants[i - 1] * secants[i] <= 0.0 {
                slopes[i] = 0.0;
            } else {
                slopes[i] = 0.5 * (secants[i - 1] + secants[i]);
            }
        }
        // Fritsch-Carlson limiter keeps the interpolant monotone on each
        // segment with monotone data.
        for i in 0..n - 1 {
            if secants[i] == 0.0 {
                slopes[i] = 0.0;
                slopes[i + 1] = 0.0;
                continue;
            }
            let alpha = slopes[i] / secants[i];
            let beta = slopes[i + 1] / secants[i];
            let s = alpha * alpha + beta * beta;
            if s > 9.0 {
                let tau = 3.0 / s.sqrt();
                slopes[i] = tau * alpha * secants[i];
                slopes[i + 1] = tau * beta * secants[i];
            }
        }
        Ok(Self { xs, ys, slopes })
    }

    #[inline]
    pub fn eval(&self, x: f64) -> f64 {
        let n = self.xs.len();
        if x <= self.xs[0] {
            return self.ys[0] + self.slopes[0] * (x - self.xs[0]);
        }
        if x >= self.xs[n - 1] {
            return self.ys[n - 1] + self.slopes[n - 1] * (x - self.xs[n - 1]);
        }
        let i = match self.xs.binary_search_by(|v| v.total_cmp(&x)) {
            Ok(i) => return self.ys[i],
            Err(i) => i - 1,
        };
        let h = self.xs[i + 1] - self.xs[i];
        let s = (x - self.xs[i]) / h;
        let h00 = (1.0 + 2.0 * s) * (1.0 - s) * (1.0 - s);
        let h10 = s * (1.0 - s) * (1.0 - s);
        let h01 = s * s * (3.0 - 2.0 * s);
        let h11 = s * s * (s - 1.0);
        h00 * self.ys[i] + h10 * h * self.slopes[i] + h01 * self.ys[i + 1] + h11 * h * self.slopes[i + 1]
    }
}

// ---------------------------------------------------------------------------
// Driver f(t, y, law, z)
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Regime {
    Lipschitz,
    QuadraticBounded,
    QuadraticUnbounded,
}

impl Regime {
    pub fn name(&self) -> &'static str {
        match self {
            Regime::Lipschitz => "lipschitz",
            Regime::QuadraticBounded => "quadratic_bounded",
            Regime::QuadraticUnbounded => "quadratic_unbounded",
        }
    }
}

/// Affine part of the driver: `a0 + a_y y + a_mean mean(law) + a_w1
/// W1(law, delta_0)`.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Affine {
    #[serde(default)]
    pub a0: f64,
    #[serde(default)]
    pub a_y: f64,
    #[serde(default)]
    pub a_mean: f64,
    #[serde(default)]
    pub a_w1: f64,
}

/// The `z` dependence: linear `b * sum_k z_k`, or `+-(gamma/2) |z|^2`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ZPart {
    Linear {
        #[serde(default)]
        b: f64,
    },
    Quadratic {
        gamma: f64,
        #[serde(default)]
        concave: bool,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DriverSpec {
    pub regime: Regime,
    #[serde(default)]
    pub affine: Affine,
    pub z_part: ZPart,
    #[serde(default)]
    pub lambda: Option<f64>,
    #[serde(default)]
    pub beta: Option<f64>,
}

impl DriverSpec {
    /// True when the driver never reads the frozen `(y, law)` argument, in
    /// which case the outer fixed point converges in one iteration.
    pub fn is_u_independent(&self) -> bool {
        self.affine.a_y == 0.0 && self.affine.a_mean == 0.0 && self.affine.a_w1 == 0.0
    }

    pub fn gamma(&self) -> Option<f64> {
        match self.z_part {
            ZPart::Quadratic { gamma, .. } => Some(gamma),
            ZPart::Linear { .. } => None,
        }
    }

    /// Norm cap applied to `z` inside quadratic driver evaluation.
    pub fn z_cap(&self) -> Option<f64> {
        self.gamma().map(|g| 20.0 / g)
    }

    /// Value of the law-dependent part at a fixed time: `a0 + a_mean *
    /// mean + a_w1 * W1(law, delta_0)`.
    #[inline]
    pub fn law_base(&self, stats: LawStats) -> f64 {
        self.affine.a0 + self.affine.a_mean * stats.mean + self.affine.a_w1 * stats.w1_to_dirac0
    }

    /// Contribution of `z` given its component sum and squared norm.
    /// Returns `(value, clamped)`.
    #[inline]
    pub fn z_term(&self, z_sum: f64, z_norm_sq: f64) -> (f64, bool) {
        match self.z_part {
            ZPart::Linear { b } => (b * z_sum, false),
            ZPart::Quadratic { gamma, concave } => {
                let cap = 20.0 / gamma;
                let (nsq, clamped) = if z_norm_sq > cap * cap {
                    (cap * cap, true)
                } else {
                    (z_norm_sq, false)
                };
                let v = 0.5 * gamma * nsq;
                (if concave { -v } else { v }, clamped)
            }
        }
    }

    /// Full driver value; `z` is the `d`-vector at one `(time, path)`.
    pub fn eval(&self, u: f64, stats: LawStats, z: &[f64]) -> f64 {
        let z_sum: f64 = z.iter().sum();
        let z_norm_sq: f64 = z.iter().map(|v| v * v).sum();
        self.law_base(stats) + self.affine.a_y * u + self.z_term(z_sum, z_norm_sq).0
    }
}

// ---------------------------------------------------------------------------
// Terminal condition xi = g(B_T)
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "params", rename_all = "snake_case")]
pub enum TerminalKind {
    Identity,
    Clipped {
        #[serde(default)]
        lo: Option<f64>,
        #[serde(default)]
        hi: Option<f64>,
    },
    Exp {
        a: f64,
        #[serde(default = "default_one")]
        scale: f64,
    },
    Polynomial {
        coeffs: Vec<f64>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TerminalSpec {
    #[serde(flatten)]
    pub kind: TerminalKind,
    #[serde(default)]
    pub bounded: bool,
    /// Declared moment order for the terminal condition; recorded per
    /// scenario and used by the Lipschitz contraction window.
    #[serde(default = "default_p")]
    pub p: f64,
}

impl TerminalSpec {
    #[inline]
    pub fn eval(&self, x: f64) -> f64 {
        match &self.kind {
            TerminalKind::Identity => x,
            TerminalKind::Clipped { lo, hi } => {
                let mut v = x;
                if let Some(lo) = lo {
                    v = v.max(*lo);
                }
                if let Some(hi) = hi {
                    v = v.min(*hi);
                }
                v
            }
            TerminalKind::Exp { a, scale } => scale * (a * x).exp(),
            TerminalKind::Polynomial { coeffs } => {
                let mut acc = 0.0;
                for &c in coeffs.iter().rev() {
                    acc = acc * x + c;
                }
                acc
            }
        }
    }

    /// Whether the functional form itself is bounded on the whole line.
    pub fn structurally_bounded(&self) -> bool {
        match &self.kind {
            TerminalKind::Identity | TerminalKind::Exp { .. } => false,
            TerminalKind::Clipped { lo, hi } => lo.is_some() && hi.is_some(),
            TerminalKind::Polynomial { coeffs } => coeffs.iter().skip(1).all(|&c| c == 0.0),
        }
    }

    pub fn kind_name(&self) -> &'static str {
        match self.kind {
            TerminalKind::Identity => "identity",
            TerminalKind::Clipped { .. } => "clipped",
            TerminalKind::Exp { .. } => "exp",
            TerminalKind::Polynomial { .. } => "polynomial",
        }
    }
}

// ---------------------------------------------------------------------------
// Solver configuration and the full scenario document
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridConfig {
    #[serde(rename = "T")]
    pub horizon: f64,
    pub n_steps: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PathsConfig {
    pub n_paths: usize,
    #[serde(default = "default_dim")]
    pub d: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PicardConfig {
    #[serde(default = "default_max_iter")]
    pub max_iter: usize,
    #[serde(default = "default_tol")]
    pub tol: f64,
    #[serde(default)]
    pub h_override: Option<f64>,
    #[serde(default)]
    pub theta_diagnostics: bool,
    #[serde(default = "default_theta")]
    pub theta: f64,
}

impl Default for PicardConfig {
    fn default() -> Self {
        Self {
            max_iter: default_max_iter(),
            tol: default_tol(),
            h_override: None,
            theta_diagnostics: false,
            theta: default_theta(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BasisConfig {
    #[serde(default = "default_degree")]
    pub degree: usize,
}

impl Default for BasisConfig {
    fn default() -> Self {
        Self {
            degree: default_degree(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Tolerances {
    #[serde(default)]
    pub feas_tol: Option<f64>,
    #[serde(default)]
    pub bisect_tol: Option<f64>,
    #[serde(default)]
    pub flatoff_tol: Option<f64>,
    #[serde(default = "default_x_max_cap")]
    pub x_max_cap: f64,
    #[serde(default = "default_bmo_cap")]
    pub bmo_cap: f64,
    #[serde(default)]
    pub modulus_cap: Option<f64>,
}

impl Default for Tolerances {
    fn default() -> Self {
        Self {
            feas_tol: None,
            bisect_tol: None,
            flatoff_tol: None,
            x_max_cap: default_x_max_cap(),
            bmo_cap: default_bmo_cap(),
            modulus_cap: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub grid: GridConfig,
    pub paths: PathsConfig,
    pub loss: LossSpec,
    pub driver: DriverSpec,
    pub terminal: TerminalSpec,
    #[serde(default)]
    pub picard: PicardConfig,
    #[serde(default)]
    pub basis: BasisConfig,
    #[serde(default)]
    pub tolerances: Tolerances,
}

impl Scenario {
    pub fn time_grid(&self) -> Result<TimeGrid> {
        TimeGrid::new(self.grid.horizon, self.grid.n_steps)
    }

    /// Bisection tolerance for the reflection operator. Defaults far below
    /// Monte Carlo noise so the flat-off defect stays noise-dominated.
    pub fn bisect_tol(&self) -> f64 {
        self.tolerances
            .bisect_tol
            .unwrap_or_else(|| 1e-8 * (1.0 + self.loss.c_scale()))
    }

    pub fn x_max_cap(&self) -> f64 {
        self.tolerances.x_max_cap
    }

    /// Largest admitted `K` increment per unit time in the continuity check.
    pub fn modulus_cap(&self) -> f64 {
        self.tolerances
            .modulus_cap
            .unwrap_or(10.0 * self.driver.affine.a0.abs() + 10.0)
    }
}
