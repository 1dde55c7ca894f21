//! Desk-scale solver checks against closed forms at full ensemble sizes.

use mrbsde::bsde::solve_inner;
use mrbsde::measure::law_stats;
use mrbsde::{
    simulate_paths, Channel, DriverSpec, LawStats, RegressionBasis, TimeGrid, WindowRange,
};

fn zero_driver() -> DriverSpec {
    serde_json::from_str(
        r#"{"regime": "lipschitz", "affine": {},
            "z_part": {"kind": "linear", "b": 0.0}, "lambda": 0.1}"#,
    )
    .unwrap()
}

fn frozen_zero(n_nodes: usize, n_paths: usize) -> (Channel, Vec<LawStats>) {
    let u = Channel::zeros(n_nodes, n_paths);
    let laws = (0..n_nodes).map(|i| law_stats(u.at(i))).collect();
    (u, laws)
}

#[test]
fn martingale_tracking_at_full_size() {
    // f = 0, xi = B_T, 10^5 paths, degree 3, 50 steps:
    // max_i mean |y_i - B_i| stays below 0.02.
    let grid = TimeGrid::new(1.0, 50).unwrap();
    let n = 100_000;
    let paths = simulate_paths(&grid, n, 1, 5).unwrap();
    let xi: Vec<f64> = paths.terminal_levels().to_vec();
    let (u, laws) = frozen_zero(51, n);
    let basis = RegressionBasis::new(3, 1);
    let sol = solve_inner(
        &zero_driver(),
        &u,
        &laws,
        &xi,
        &paths,
        &basis,
        WindowRange::new(0, 50),
    )
    .unwrap();
    let mut worst = 0.0f64;
    for i in 0..=50 {
        let b = paths.level(i, 0);
        let err = mrbsde::reduce::mean_of(n, &|p| (sol.y.at(i)[p] - b[p]).abs());
        worst = worst.max(err);
    }
    println!("max_i mean|y - B| = {worst:.5}");
    assert!(worst <= 0.02, "tracking error {worst}");
}

#[test]
fn two_dimensional_state_regression() {
    // d = 2, xi = first coordinate of B_T: y tracks B^(0), z ~ (1, 0).
    let grid = TimeGrid::new(1.0, 10).unwrap();
    let n = 20_000;
    let paths = simulate_paths(&grid, n, 2, 9).unwrap();
    let xi: Vec<f64> = paths.terminal_levels().to_vec();
    let (u, laws) = frozen_zero(11, n);
    let basis = RegressionBasis::new(2, 2);
    assert_eq!(basis.n_funcs(), 9);
    let sol = solve_inner(
        &zero_driver(),
        &u,
        &laws,
        &xi,
        &paths,
        &basis,
        WindowRange::new(0, 10),
    )
    .unwrap();
    for i in [3usize, 7] {
        let b = paths.level(i, 0);
        let err = mrbsde::reduce::mean_of(n, &|p| (sol.y.at(i)[p] - b[p]).abs());
        assert!(err < 0.05, "node {i}: err {err}");
        let z0 = mrbsde::reduce::mean(sol.z.at(i, 0));
        let z1 = mrbsde::reduce::mean(sol.z.at(i, 1));
        assert!((z0 - 1.0).abs() < 0.05, "z0 {z0}");
        assert!(z1.abs() < 0.05, "z1 {z1}");
    }
}
