mod common;

use common::checks::*;
use vfi_core::controller::Awareness::*;
use vfi_core::qp::KKT_TOLERANCE;
use vfi_core::sim::reference::EndonasalRun;

#[test]
fn plane_experiment_properties() {
    let runs = plane_experiment();
    let mut last_final = f64::INFINITY;
    for r in &runs {
        assert!(r.worst_kkt <= KKT_TOLERANCE);
        assert_eq!(r.infeasible_steps, 0);
        match r.eta_d {
            Some(g) => {
                assert!(r.min_distance >= -1e-4, "η_d {g}: {}", r.min_distance);
                assert!(r.final_distance <= last_final + 1e-12, "η_d {g}");
                assert!(r.decay_excess <= 0.0, "η_d {g}: {:e}", r.decay_excess);
                last_final = r.final_distance;
            }
            None => assert!(r.final_distance <= -0.019, "{}", r.final_distance),
        }
    }
}

#[test]
fn mode_grid_properties() {
    let g = mode_grid(2.0);
    assert_eq!(g.colliding(), vec!["oo", "os", "so"]);
    assert!(g.combined(KinematicsAware, KinematicsAware) <= g.combined(StaticAware, StaticAware));
    assert!(g.oblivious_gap() <= 1e-9, "{:e}", g.oblivious_gap());
    for r in &g.runs {
        assert!(r.worst_kkt <= KKT_TOLERANCE);
        assert_eq!(r.metrics.infeasible_steps, 0);
    }
}

#[test]
fn endonasal_properties() {
    let both = endonasal(EndonasalRun::Both);
    assert_eq!(both.min_margins.len(), 12);
    for (j, m) in both.min_margins.iter().enumerate() {
        assert!(*m >= 0.0, "binding {}: {m}", j + 1);
    }
    for e in &both.final_tip_error {
        assert!(*e <= 1e-3, "{e}");
    }
    assert!(both.worst_kkt <= KKT_TOLERANCE);
    assert_eq!(both.infeasible_steps, 0);
    // Alone, each tool tracks its path; together the pair constraints push them off it.
    for run in [EndonasalRun::LeftOnly, EndonasalRun::RightOnly] {
        let solo = endonasal(run);
        assert!(solo.path_deviation[0] < 1e-4, "{run:?}: {}", solo.path_deviation[0]);
    }
    assert!(both.path_deviation.iter().any(|d| *d > 1e-3), "{:?}", both.path_deviation);
}

#[test]
fn oracle_sweeps_pass() {
    for t in jacobian_sweep(101).into_iter().chain(residual_sweep(102)) {
        assert!(t.passed(), "{}: {} of {} draws, worst {:e}", t.label, t.failures, t.draws, t.worst);
    }
    let ll = line_line_sweep(103, 500);
    assert_eq!((ll.near_parallel, ll.non_finite), (50, 0));
    assert!(ll.worst_abs <= 1e-9, "{:e}", ll.worst_abs);
    let qp = qp_sweep(104, 500);
    assert!(qp.worst_delta <= 1e-6 && qp.worst_kkt <= KKT_TOLERANCE);
}
