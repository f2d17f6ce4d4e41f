//! Whole-family oracle sweeps that report the worst error seen instead of
//! stopping at the first failure. The acceptance target prints these.

use std::time::{Duration, Instant};

use nalgebra::{DMatrix, DVector, Rotation3, Vector3};
use rand::Rng;
use vfi_core::controller::Awareness;
use vfi_core::kinematics::{line_state, plane_state, rotation_jacobian, translation_jacobian};
use vfi_core::primitives::*;
use vfi_core::qp::{solve, QpProblem};
use vfi_core::sim::reference::{self, EndonasalRun};
use vfi_core::sim::{self, RunMetrics, Scenario, Trace};

use super::motion::*;
use super::*;

pub const DRAWS: usize = 100;

/// Rounding bound of a central difference of a function of size `magnitude`.
pub fn fd_noise(magnitude: f64) -> f64 {
    16.0 * f64::EPSILON * magnitude.abs() / FD_STEP
}

/// Worst relative error over a family of draws and how many draws missed.
#[derive(Debug, Clone)]
pub struct Tally {
    pub label: &'static str,
    pub worst: f64,
    pub failures: usize,
    pub draws: usize,
}

impl Tally {
    fn new(label: &'static str) -> Self {
        Self { label, worst: 0.0, failures: 0, draws: 0 }
    }

    fn matrix(&mut self, analytic: &DMatrix<f64>, fd: &DMatrix<f64>) {
        let e = rel_err(analytic, fd);
        self.draws += 1;
        self.worst = self.worst.max(e);
        if e.is_nan() || e >= FD_REL_TOL {
            self.failures += 1;
        }
    }

    fn row(&mut self, analytic: &nalgebra::RowDVector<f64>, fd: &DMatrix<f64>) {
        self.matrix(&row_matrix(analytic), fd);
    }

    /// `magnitude` is the size of the differenced function; the central
    /// difference cannot resolve changes below its rounding, `~ε·|f|/δ`.
    fn scalar(&mut self, analytic: f64, fd: f64, magnitude: f64) {
        let floor = fd_noise(magnitude);
        let diff = (analytic - fd).abs();
        self.draws += 1;
        if diff > floor {
            self.worst = self.worst.max(rel_err_scalar(analytic, fd));
        }
        if diff.is_nan() || diff > FD_REL_TOL * analytic.abs().max(fd.abs()) + floor {
            self.failures += 1;
        }
    }

    pub fn passed(&self) -> bool {
        self.failures == 0 && self.draws > 0
    }
}

/// J_x, J_t, J_r, the line and plane-offset Jacobians, and the six pair
/// Jacobians, each on `DRAWS` random draws.
pub fn jacobian_sweep(seed: u64) -> Vec<Tally> {
    let mut rng = rng(seed);
    let labels = [
        "J_x",
        "J_t",
        "J_r",
        "J_l",
        "J_d",
        "point-point",
        "point-line",
        "line-point",
        "line-line",
        "plane-point",
        "point-plane",
    ];
    let mut t: Vec<Tally> = labels.iter().map(|l| Tally::new(l)).collect();
    for _ in 0..DRAWS {
        let s = setup(&mut rng);
        let fk = s.robot.frame_kinematics(&s.q, &s.frame).unwrap();
        let reference = *fk.pose.as_dq();
        let fd = fd_jacobian(|q| aligned_vec8(chain_pose(&s.robot, q, &s.frame), &reference), &s.q, FD_STEP);
        t[0].matrix(&fk.jacobian, &fd);

        let fd_t = fd_jacobian(
            |q| {
                let p = translation_of(&chain_pose(&s.robot, q, &s.frame));
                DVector::from_vec(vec![0.0, p.x, p.y, p.z])
            },
            &s.q,
            FD_STEP,
        );
        t[1].matrix(&translation_jacobian(&fk.jacobian, &fk.pose), &fd_t);
        t[2].matrix(&rotation_jacobian(&fk.jacobian), &fd.rows(0, 4).into_owned());

        let line = line_state(&fk.pose, &fk.jacobian);
        let fd_l = fd_jacobian(
            |q| {
                let (o, l) = frame_geometry(&s, q);
                let m = o.cross(&l);
                DVector::from_vec(vec![0.0, l.x, l.y, l.z, 0.0, m.x, m.y, m.z])
            },
            &s.q,
            FD_STEP,
        );
        t[3].matrix(&line.jacobian(), &fd_l);

        let plane = plane_state(&fk.pose, &fk.jacobian);
        let fd_d = fd_jacobian(
            |q| {
                let (o, n) = frame_geometry(&s, q);
                scalar(o.dot(&n))
            },
            &s.q,
            FD_STEP,
        );
        t[4].matrix(&DMatrix::from_row_slice(1, 6, plane.j_d.as_slice()), &fd_d);

        let pm = PointMotion::random(&mut rng);
        let lm = LineMotion::random(&mut rng);
        let pl = PlaneMotion { l: LineMotion::random(&mut rng) };
        let tp = s.robot.point(&s.q, &s.frame).unwrap();
        let rl = s.robot.line(&s.q, &s.frame).unwrap();
        let rp = s.robot.plane(&s.q, &s.frame).unwrap();

        let r = point_to_point(&tp, &pm.entity());
        let fd = fd_jacobian(|q| scalar((frame_geometry(&s, q).0 - pm.p0).norm_squared()), &s.q, FD_STEP);
        t[5].row(&r.jacobian, &fd);

        let r = point_to_line(&tp, &lm.entity()).unwrap();
        let fd = fd_jacobian(|q| scalar(point_line_sq(&frame_geometry(&s, q).0, &lm.p.p0, &lm.u0)), &s.q, FD_STEP);
        t[6].row(&r.jacobian, &fd);

        let r = line_to_point(&rl, &pm.entity());
        let fd = fd_jacobian(
            |q| {
                let (o, u) = frame_geometry(&s, q);
                scalar(point_line_sq(&pm.p0, &o, &u))
            },
            &s.q,
            FD_STEP,
        );
        t[7].row(&r.jacobian, &fd);

        let r = line_to_line(&rl, &lm.entity()).unwrap();
        let fd = fd_jacobian(
            |q| {
                let (o, u) = frame_geometry(&s, q);
                scalar(line_line_distance_sq(&o, &u, &lm.p.p0, &lm.u0))
            },
            &s.q,
            FD_STEP,
        );
        t[8].row(&r.jacobian, &fd);

        let r = plane_to_point(&rp, &pm.entity());
        let fd = fd_jacobian(
            |q| {
                let (o, n) = frame_geometry(&s, q);
                scalar((pm.p0 - o).dot(&n))
            },
            &s.q,
            FD_STEP,
        );
        t[9].row(&r.jacobian, &fd);

        let r = point_to_plane(&tp, &pl.entity()).unwrap();
        let (n0, d0) = pl.at(0.0);
        let fd = fd_jacobian(|q| scalar(frame_geometry(&s, q).0.dot(&n0) - d0), &s.q, FD_STEP);
        t[10].row(&r.jacobian, &fd);
    }
    t
}

/// The six pair residuals against a time derivative of the oracle distance
/// with the robot frozen and only the entity moving.
pub fn residual_sweep(seed: u64) -> Vec<Tally> {
    let mut rng = rng(seed);
    let labels = ["point-point", "point-line", "line-point", "line-line", "plane-point", "point-plane"];
    let mut t: Vec<Tally> = labels.iter().map(|l| Tally::new(l)).collect();
    for _ in 0..DRAWS {
        let s = setup(&mut rng);
        let pm = PointMotion::random(&mut rng);
        let lm = LineMotion::random(&mut rng);
        let pl = PlaneMotion { l: LineMotion::random(&mut rng) };
        let tp = s.robot.point(&s.q, &s.frame).unwrap();
        let rl = s.robot.line(&s.q, &s.frame).unwrap();
        let rp = s.robot.plane(&s.q, &s.frame).unwrap();
        let (o, z) = frame_geometry(&s, &s.q);

        let r = point_to_point(&tp, &pm.entity());
        t[0].scalar(r.residual, fd_scalar(|tau| (o - pm.at(tau)).norm_squared(), 0.0, FD_STEP), r.value);

        let r = point_to_line(&tp, &lm.entity()).unwrap();
        let zeta = fd_scalar(
            |tau| {
                let (a, u) = lm.at(tau);
                point_line_sq(&o, &a, &u)
            },
            0.0,
            FD_STEP,
        );
        t[1].scalar(r.residual, zeta, r.value);

        let r = line_to_point(&rl, &pm.entity());
        t[2].scalar(r.residual, fd_scalar(|tau| point_line_sq(&pm.at(tau), &o, &z), 0.0, FD_STEP), r.value);

        let r = line_to_line(&rl, &lm.entity()).unwrap();
        let zeta = fd_scalar(
            |tau| {
                let (a, w) = lm.at(tau);
                line_line_distance_sq(&o, &z, &a, &w)
            },
            0.0,
            FD_STEP,
        );
        t[3].scalar(r.residual, zeta, r.value);

        let r = plane_to_point(&rp, &pm.entity());
        // Signed distances difference the dot product, whose terms can exceed the result.
        let size = pm.p0.norm() * z.norm() + o.dot(&z).abs();
        t[4].scalar(r.residual, fd_scalar(|tau| (pm.at(tau) - o).dot(&z), 0.0, FD_STEP), size);

        let r = point_to_plane(&tp, &pl.entity()).unwrap();
        let zeta = fd_scalar(
            |tau| {
                let (n, d) = pl.at(tau);
                o.dot(&n) - d
            },
            0.0,
            FD_STEP,
        );
        let (n0, d0) = pl.at(0.0);
        t[5].scalar(r.residual, zeta, o.norm() * n0.norm() + d0.abs());
    }
    t
}

pub struct LineLineReport {
    pub pairs: usize,
    pub near_parallel: usize,
    /// Largest `|D − d²|` in m².
    pub worst_abs: f64,
    pub non_finite: usize,
}

/// Line pairs built from a known common perpendicular of length `d`, so the
/// true squared distance is `d²` by construction. One pair in ten has
/// `|sin φ|` drawn log-uniformly from `[1e-9, 1e-3]`.
pub fn line_line_sweep(seed: u64, pairs: usize) -> LineLineReport {
    let mut rng = rng(seed);
    let mut report = LineLineReport { pairs, near_parallel: 0, worst_abs: 0.0, non_finite: 0 };
    for i in 0..pairs {
        let u1 = unit_vector(&mut rng);
        let n = u1.cross(&unit_vector(&mut rng)).normalize();
        let sin_phi = if i % 10 == 0 {
            report.near_parallel += 1;
            10f64.powf(rng.gen_range(-9.0..-3.0))
        } else {
            rng.gen_range(0.05..1.0)
        };
        let phi = sin_phi.asin() + if rng.gen_bool(0.3) { std::f64::consts::PI - 2.0 * sin_phi.asin() } else { 0.0 };
        let u2 = Rotation3::new(n * phi) * u1;
        let foot1 = vector(&mut rng, 0.5);
        let d = rng.gen_range(0.0..0.5);
        let foot2 = foot1 + n * d;
        let p1 = foot1 + u1 * rng.gen_range(-0.3..0.3);
        let p2 = foot2 + u2 * rng.gen_range(-0.3..0.3);
        let rl = robot_line_through(&p1, &u1);
        let l = EntityLine::through(&pure(&p2), &pure(&u2)).unwrap();
        let r = line_to_line(&rl, &l).unwrap();
        if !(r.value.is_finite() && r.residual.is_finite() && r.jacobian.iter().all(|v| v.is_finite())) {
            report.non_finite += 1;
            continue;
        }
        report.worst_abs = report.worst_abs.max((r.value - d * d).abs());
    }
    report
}

pub struct QpReport {
    pub problems: usize,
    /// Largest `‖x − x_oracle‖`.
    pub worst_delta: f64,
    pub worst_kkt: f64,
}

pub fn qp_sweep(seed: u64, problems: usize) -> QpReport {
    let mut rng = rng(seed);
    let mut report = QpReport { problems, worst_delta: 0.0, worst_kkt: 0.0 };
    for _ in 0..problems {
        let r = random_qp(&mut rng, 24, 16);
        let p = QpProblem::new(r.h.clone(), r.f.clone(), r.w_mat.clone(), r.w.clone()).unwrap();
        let s = solve(&p).unwrap();
        report.worst_kkt = report.worst_kkt.max(s.kkt.max());
        let oracle = hildreth(&r.h, &r.f, &r.w_mat, &r.w);
        report.worst_delta = report.worst_delta.max((&s.x - oracle).norm());
    }
    report
}

/// Position of robot `i`'s end effector for every trace row.
pub fn tip_positions(scenario: &Scenario, trace: &Trace, i: usize) -> Vec<Vector3<f64>> {
    let built = scenario.build().unwrap();
    let robot = &built.setup.robots[i].robot;
    let cols: Vec<usize> = (1..=robot.dof()).map(|k| trace.column(&format!("q_{}_{k}", i + 1)).unwrap()).collect();
    trace
        .rows
        .iter()
        .map(|row| {
            let q: Vec<f64> = cols.iter().map(|c| row[*c]).collect();
            robot.fkm(&q).unwrap().position()
        })
        .collect()
}

pub fn column(trace: &Trace, name: &str) -> Vec<f64> {
    let c = trace.column(name).unwrap_or_else(|| panic!("no column {name}"));
    trace.rows.iter().map(|r| r[c]).collect()
}

pub struct PlaneRun {
    /// `None` for the unconstrained run.
    pub eta_d: Option<f64>,
    pub min_distance: f64,
    pub final_distance: f64,
    /// Largest `(1 − η_d τ) d̃_k − 1e-6 − d̃_{k+1}` over approaching steps; `≤ 0` passes.
    pub decay_excess: f64,
    pub wall: Duration,
    pub worst_kkt: f64,
    pub infeasible_steps: usize,
}

/// The plane experiment at every gain plus the unconstrained run.
pub fn plane_experiment() -> Vec<PlaneRun> {
    let mut gains: Vec<Option<f64>> = reference::EXPERIMENT_A_GAINS.iter().map(|g| Some(*g)).collect();
    gains.push(None);
    gains
        .into_iter()
        .map(|eta_d| {
            let s = reference::experiment_a(eta_d);
            let start = Instant::now();
            let out = sim::run(&s).unwrap();
            let wall = start.elapsed();
            let d = column(&out.trace, "dist_1");
            let rate = 1.0 - eta_d.unwrap_or(0.0) * s.params.tau_s;
            let decay_excess = d
                .windows(2)
                .filter(|w| w[1] < w[0])
                .map(|w| rate * w[0] - 1e-6 - w[1])
                .fold(f64::NEG_INFINITY, f64::max);
            PlaneRun {
                eta_d,
                min_distance: d.iter().copied().fold(f64::INFINITY, f64::min),
                final_distance: *d.last().unwrap(),
                decay_excess,
                wall,
                worst_kkt: out.kkt_residuals.iter().copied().fold(0.0, f64::max),
                infeasible_steps: out.metrics.infeasible_steps,
            }
        })
        .collect()
}

pub struct GridRun {
    pub modes: [Awareness; 2],
    pub metrics: RunMetrics,
    pub worst_kkt: f64,
}

pub struct GridReport {
    pub runs: Vec<GridRun>,
    /// Solo integrated error of each robot.
    pub solo: [f64; 2],
    pub wall: Duration,
}

impl GridReport {
    pub fn get(&self, a: Awareness, b: Awareness) -> &GridRun {
        self.runs.iter().find(|r| r.modes == [a, b]).unwrap()
    }

    pub fn combined(&self, a: Awareness, b: Awareness) -> f64 {
        self.get(a, b).metrics.integrated_error.iter().sum()
    }

    /// Largest gap between an oblivious robot's error and its solo value.
    pub fn oblivious_gap(&self) -> f64 {
        let mut gap = 0.0f64;
        for r in &self.runs {
            for i in 0..2 {
                if r.modes[i] == Awareness::Oblivious {
                    gap = gap.max((r.metrics.integrated_error[i] - self.solo[i]).abs());
                }
            }
        }
        gap
    }

    pub fn colliding(&self) -> Vec<String> {
        self.runs
            .iter()
            .filter(|r| r.metrics.collision)
            .map(|r| format!("{}{}", r.modes[0].letter(), r.modes[1].letter()))
            .collect()
    }
}

pub fn mode_grid(eta_d: f64) -> GridReport {
    let start = Instant::now();
    let runs = reference::mode_grid()
        .into_iter()
        .map(|modes| {
            let out = sim::run(&reference::simulation_a(modes, eta_d)).unwrap();
            GridRun { modes, metrics: out.metrics, worst_kkt: out.kkt_residuals.iter().copied().fold(0.0, f64::max) }
        })
        .collect();
    let base = reference::simulation_a([Awareness::Oblivious; 2], eta_d);
    let solo = [0, 1].map(|i| sim::run(&base.solo(i)).unwrap().metrics.integrated_error[0]);
    GridReport { runs, solo, wall: start.elapsed() }
}

pub struct EndonasalReport {
    pub run: EndonasalRun,
    /// Smallest signed margin of each binding over the run.
    pub min_margins: Vec<f64>,
    /// Distance from each moving tip to its final waypoint at the end of the run.
    pub final_tip_error: Vec<f64>,
    /// Largest distance from each moving tip to its waypoint polyline.
    pub path_deviation: Vec<f64>,
    pub step_times_s: Vec<f64>,
    pub worst_kkt: f64,
    pub infeasible_steps: usize,
    pub trace: Trace,
    pub scenario: Scenario,
}

fn polyline_distance(p: &Vector3<f64>, pts: &[Vector3<f64>]) -> f64 {
    pts.windows(2).map(|w| segment_distance_sampled(p, p, &w[0], &w[1])).fold(f64::INFINITY, f64::min)
}

pub fn endonasal(run: EndonasalRun) -> EndonasalReport {
    let scenario = reference::endonasal(run);
    let out = sim::run(&scenario).unwrap();
    let n_bindings = scenario.constraints.len();
    let min_margins = (1..=n_bindings)
        .map(|j| column(&out.trace, &format!("dist_{j}")).into_iter().fold(f64::INFINITY, f64::min))
        .collect();
    let mut final_tip_error = Vec::new();
    let mut path_deviation = Vec::new();
    for (i, r) in scenario.robots.iter().enumerate() {
        let Some(traj) = &r.trajectory else { continue };
        let pts: Vec<Vector3<f64>> = traj.waypoints.iter().map(|w| Vector3::from(w.position_m)).collect();
        let tips = tip_positions(&scenario, &out.trace, i);
        final_tip_error.push((tips.last().unwrap() - pts.last().unwrap()).norm());
        // Tip error is measured against the path, ignoring timing.
        path_deviation.push(tips.iter().map(|p| polyline_distance(p, &pts)).fold(0.0, f64::max));
    }
    EndonasalReport {
        run,
        min_margins,
        final_tip_error,
        path_deviation,
        step_times_s: out.step_times_s,
        worst_kkt: out.kkt_residuals.iter().copied().fold(0.0, f64::max),
        infeasible_steps: out.metrics.infeasible_steps,
        trace: out.trace,
        scenario,
    }
}

/// `p`-th percentile (nearest rank) of `values`.
pub fn percentile(values: &[f64], p: f64) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let rank = ((p / 100.0) * v.len() as f64).ceil() as usize;
    v[rank.clamp(1, v.len()) - 1]
}
