//! The validate / simulate / solve / diagnose pipeline with persistence.

use crate::config::scenario_digest;
use crate::oracle::{detect_oracle, oracle_error};
use anyhow::{bail, Context, Result};
use mrbsde::diagnostics::{self, DiagnosticsReport};
use mrbsde::picard::WindowSummary;
use mrbsde::{
    simulate_paths, solve_full, validate_scenario, Scenario, ThetaStats, TimeGrid,
    ValidationReport,
};
use serde::Serialize;
use std::path::Path;
use std::time::Instant;

#[derive(Debug, Clone, Default, Serialize)]
pub struct Timings {
    pub validate_ms: f64,
    pub simulate_ms: f64,
    pub solve_ms: f64,
    pub diagnostics_ms: f64,
    pub total_ms: f64,
}

/// Everything a finished run persists to `result.json`.
#[derive(Debug, Clone, Serialize)]
pub struct RunResult {
    pub scenario_digest: String,
    pub seed: u64,
    pub horizon: f64,
    pub n_steps: usize,
    pub n_paths: usize,
    pub k_series: Vec<f64>,
    pub ey_series: Vec<f64>,
    pub eloss_series: Vec<f64>,
    /// Mean Euclidean norm of `Z` per step; the terminal row is zero since
    /// no step starts there.
    pub z_abs_series: Vec<f64>,
    pub l_series: Vec<f64>,
    pub picard_residuals: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
    pub window_h: f64,
    pub windows: Vec<WindowSummary>,
    pub clamp_rate: f64,
    pub y0_inner: f64,
    pub oracle_error: Option<f64>,
    pub diagnostics: DiagnosticsReport,
    pub validation: ValidationReport,
    pub theta_stats: Vec<ThetaStats>,
    pub timings: Timings,
}

#[derive(Debug)]
pub enum RunOutcome {
    /// Solved; exit code 0 (diagnostics pass) or 4 (some diagnostic failed).
    Solved {
        result: Box<RunResult>,
        exit_code: i32,
    },
    /// Rejected by validation; exit code 2.
    Rejected { check: String, detail: String },
    /// Solver failure; exit code 3.
    SolverFailed { message: String },
}

impl RunOutcome {
    pub fn exit_code(&self) -> i32 {
        match self {
            RunOutcome::Solved { exit_code, .. } => *exit_code,
            RunOutcome::Rejected { .. } => 2,
            RunOutcome::SolverFailed { .. } => 3,
        }
    }
}

/// Runs the full pipeline; when `out_dir` is given, writes `result.json`
/// and `series.csv` into it.
pub fn run_scenario(sc: &Scenario, out_dir: Option<&Path>) -> Result<RunOutcome> {
    let t_total = Instant::now();
    let mut timings = Timings::default();

    let t = Instant::now();
    let validation = validate_scenario(sc);
    timings.validate_ms = t.elapsed().as_secs_f64() * 1e3;
    if !validation.pass() {
        let fail = validation.first_failure().expect("failing check");
        return Ok(RunOutcome::Rejected {
            check: fail.name.clone(),
            detail: fail.detail.clone(),
        });
    }

    let grid = sc.time_grid().expect("validated grid");
    let t = Instant::now();
    let paths = match simulate_paths(&grid, sc.paths.n_paths, sc.paths.d, sc.paths.seed) {
        Ok(p) => p,
        Err(e) => {
            return Ok(RunOutcome::SolverFailed {
                message: e.to_string(),
            })
        }
    };
    timings.simulate_ms = t.elapsed().as_secs_f64() * 1e3;

    let t = Instant::now();
    let solution = match solve_full(sc, &paths) {
        Ok(s) => s,
        Err(e) => {
            return Ok(RunOutcome::SolverFailed {
                message: e.to_string(),
            })
        }
    };
    timings.solve_ms = t.elapsed().as_secs_f64() * 1e3;

    let t = Instant::now();
    let report = match diagnostics::run_all(sc, &paths, &solution) {
        Ok(r) => r,
        Err(e) => {
            return Ok(RunOutcome::SolverFailed {
                message: format!("diagnostics failed to evaluate: {e}"),
            })
        }
    };
    timings.diagnostics_ms = t.elapsed().as_secs_f64() * 1e3;

    let n = paths.n_paths();
    let ey_series: Vec<f64> = (0..grid.n_nodes())
        .map(|i| mrbsde::reduce::mean(solution.big_y.at(i)))
        .collect();
    let eloss_series = diagnostics::mean_loss_series(&sc.loss, &grid, &solution.big_y)
        .expect("loss form validated");
    let mut z_abs_series: Vec<f64> = (0..grid.n_steps())
        .map(|i| mrbsde::reduce::mean_of(n, &|p| solution.z.norm_at(i, p)))
        .collect();
    z_abs_series.push(0.0);

    let oracle_err = detect_oracle(sc).map(|o| oracle_error(o, &grid, &paths, &solution));

    timings.total_ms = t_total.elapsed().as_secs_f64() * 1e3;
    let result = RunResult {
        scenario_digest: scenario_digest(sc),
        seed: sc.paths.seed,
        horizon: grid.horizon(),
        n_steps: grid.n_steps(),
        n_paths: n,
        k_series: solution.k.clone(),
        ey_series,
        eloss_series,
        z_abs_series,
        l_series: solution.l_values.clone(),
        picard_residuals: solution.picard_residuals.clone(),
        iterations: solution.iterations,
        converged: solution.converged,
        window_h: solution.window_h,
        windows: solution.windows.clone(),
        clamp_rate: solution.clamp_rate(),
        y0_inner: solution.y0_inner,
        oracle_error: oracle_err,
        diagnostics: report,
        validation,
        theta_stats: solution.theta_stats.clone(),
        timings,
    };

    if let Some(dir) = out_dir {
        std::fs::create_dir_all(dir)
            .with_context(|| format!("creating output directory {}", dir.display()))?;
        write_result_json(&dir.join("result.json"), &result)?;
        write_series_csv(&dir.join("series.csv"), &grid, &result)?;
    }

    let exit_code = if result.diagnostics.pass() { 0 } else { 4 };
    Ok(RunOutcome::Solved {
        result: Box::new(result),
        exit_code,
    })
}

/// 17-significant-digit decimal form; round-trips any finite f64 exactly.
pub fn format_g17(x: f64) -> String {
    format!("{x:.16e}")
}

pub fn write_result_json(path: &Path, result: &RunResult) -> Result<()> {
    let text = serde_json::to_string_pretty(result)?;
    std::fs::write(path, text).with_context(|| format!("writing {}", path.display()))?;
    Ok(())
}

pub fn write_series_csv(path: &Path, grid: &TimeGrid, result: &RunResult) -> Result<()> {
    let mut w = csv::Writer::from_path(path)
        .with_context(|| format!("opening {}", path.display()))?;
    w.write_record(["t", "K", "mean_Y", "mean_loss", "mean_absZ"])?;
    for i in 0..grid.n_nodes() {
        w.write_record([
            format_g17(grid.time(i)),
            format_g17(result.k_series[i]),
            format_g17(result.ey_series[i]),
            format_g17(result.eloss_series[i]),
            format_g17(result.z_abs_series[i]),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Parses a series.csv back into its column vectors.
pub fn read_series_csv(path: &Path) -> Result<Vec<Vec<f64>>> {
    let mut r = csv::Reader::from_path(path)?;
    let mut cols: Vec<Vec<f64>> = vec![Vec::new(); 5];
    for record in r.records() {
        let record = record?;
        for (i, field) in record.iter().enumerate() {
            cols[i].push(field.parse::<f64>()?);
        }
    }
    Ok(cols)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SweepAxis {
    NSteps,
    NPaths,
    Degree,
    HOverride,
}

impl std::str::FromStr for SweepAxis {
    type Err = anyhow::Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "n_steps" => Ok(SweepAxis::NSteps),
            "n_paths" => Ok(SweepAxis::NPaths),
            "degree" => Ok(SweepAxis::Degree),
            "h_override" => Ok(SweepAxis::HOverride),
            other => bail!("unknown sweep axis '{other}' (n_steps|n_paths|degree|h_override)"),
        }
    }
}

impl SweepAxis {
    pub fn name(&self) -> &'static str {
        match self {
            SweepAxis::NSteps => "n_steps",
            SweepAxis::NPaths => "n_paths",
            SweepAxis::Degree => "degree",
            SweepAxis::HOverride => "h_override",
        }
    }

    fn apply(&self, sc: &mut Scenario, value: f64) -> Result<()> {
        let as_count = || -> Result<usize> {
            if value <= 0.0 || value.fract() != 0.0 {
                bail!("axis {} needs a positive integer, got {value}", self.name());
            }
            Ok(value as usize)
        };
        match self {
            SweepAxis::NSteps => sc.grid.n_steps = as_count()?,
            SweepAxis::NPaths => sc.paths.n_paths = as_count()?,
            SweepAxis::Degree => sc.basis.degree = as_count()?,
            SweepAxis::HOverride => sc.picard.h_override = Some(value),
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct SweepRow {
    pub axis_value: f64,
    pub k_t: Option<f64>,
    pub oracle_error: Option<f64>,
    pub picard_iters: Option<usize>,
    pub worst_diagnostic_margin: Option<f64>,
    pub wall_ms: f64,
    pub exit_code: i32,
}

/// One run per axis value, sharing the seed; failed rows keep their exit
/// code and the sweep continues. `summary.csv` is written in axis order.
pub fn sweep(
    base: &Scenario,
    axis: SweepAxis,
    values: &[f64],
    out_dir: &Path,
) -> Result<Vec<SweepRow>> {
    for w in values.windows(2) {
        if w[1] <= w[0] {
            bail!("sweep values must be strictly increasing");
        }
    }
    if let Some(&v) = values.first() {
        if v <= 0.0 {
            bail!("sweep values must be positive");
        }
    }
    std::fs::create_dir_all(out_dir)?;
    let mut rows = Vec::new();
    for &value in values {
        let mut sc = base.clone();
        axis.apply(&mut sc, value)?;
        let row_dir = out_dir.join(format!("row_{}_{}", axis.name(), value));
        let started = Instant::now();
        let outcome = run_scenario(&sc, Some(&row_dir))?;
        let wall_ms = started.elapsed().as_secs_f64() * 1e3;
        let row = match &outcome {
            RunOutcome::Solved { result, exit_code } => SweepRow {
                axis_value: value,
                k_t: result.k_series.last().copied(),
                oracle_error: result.oracle_error,
                picard_iters: Some(result.iterations),
                worst_diagnostic_margin: Some(result.diagnostics.worst_margin()),
                wall_ms,
                exit_code: *exit_code,
            },
            _ => SweepRow {
                axis_value: value,
                k_t: None,
                oracle_error: None,
                picard_iters: None,
                worst_diagnostic_margin: None,
                wall_ms,
                exit_code: outcome.exit_code(),
            },
        };
        rows.push(row);
    }
    write_summary_csv(&out_dir.join("summary.csv"), &rows)?;
    Ok(rows)
}

pub fn write_summary_csv(path: &Path, rows: &[SweepRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record([
        "axis_value",
        "K_T",
        "oracle_error",
        "picard_iters",
        "worst_diagnostic_margin",
        "wall_ms",
        "exit_code",
    ])?;
    let opt = |v: Option<f64>| v.map(format_g17).unwrap_or_default();
    for row in rows {
        w.write_record([
            format_g17(row.axis_value),
            opt(row.k_t),
            opt(row.oracle_error),
            row.picard_iters.map(|v| v.to_string()).unwrap_or_default(),
            opt(row.worst_diagnostic_margin),
            format!("{:.3}", row.wall_ms),
            row.exit_code.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}
