//! Learning-theory study beyond the acceptance grid.

use mel::experiments::median;
use mel::theory::{scaling_experiment, ScalingProblem};

#[test]
fn slope_holds_on_a_longer_horizon_grid() {
    let problem = ScalingProblem {
        t_grid: (4..=10).map(|k| 2f64.powi(k)).collect(),
        bootstrap: 200,
        ..ScalingProblem::default()
    };
    let rep = scaling_experiment(&problem).unwrap();
    assert!((-0.7..=-0.3).contains(&rep.slope), "slope {} medians {:?}", rep.slope, rep.medians);
}

#[test]
fn excess_risk_decreases_with_horizon_for_a_larger_dictionary() {
    let problem = ScalingProblem {
        p: 20,
        stride: 1,
        t_grid: vec![16.0, 64.0, 256.0],
        bootstrap: 10,
        ..ScalingProblem::default()
    };
    let rep = scaling_experiment(&problem).unwrap();
    let med: Vec<f64> = problem
        .t_grid
        .iter()
        .map(|&t| median(&rep.rows.iter().filter(|r| r.t == t).map(|r| r.r_hat).collect::<Vec<_>>()))
        .collect();
    assert!(med[0] > med[1] && med[1] > med[2], "median R_hat {med:?}");
    assert!(rep.rows.iter().all(|r| r.r_hat >= -1e-9), "R_hat is an excess over the reference optimum");
}
