//! Gait scheduling and the lightweight foothold/base-trajectory optimizer,
//! with variable-rate replanning.
//!
//! The optimizer works in two stages: footholds are selected by a grid
//! argmin around a velocity-projected nominal point (trading off nominal
//! distance, terrain-edge proximity, and kinematic reach), then a piecewise
//! quintic base trajectory is fit per dimension by an equality-constrained
//! quadratic program that smooths acceleration while tracking the reference
//! twist and a nominal height above the foothold plane.

use crate::geom::{Accel, Pose, Twist};
use crate::percept::{ElevationMap, SampleMode};
use crate::sim::{self, RobotState, SimParams};
use nalgebra::{DMatrix, DVector, Matrix3, UnitQuaternion, Vector3};

/// Trot stride duration (s).
pub const STRIDE: f64 = 0.93;
/// Swing duration: half a stride.
pub const SWING: f64 = STRIDE / 2.0;

/// Fixed trot schedule. Diagonal pairs are half a stride apart; LF and RH
/// are in contact during the first half-stride.
#[derive(Clone, Copy, Debug)]
pub struct GaitSchedule {
    pub stride: f64,
    /// Per-leg phase offsets (LF, RF, LH, RH).
    pub offsets: [f64; 4],
}

impl Default for GaitSchedule {
    fn default() -> Self {
        Self { stride: STRIDE, offsets: [0.0, SWING, SWING, 0.0] }
    }
}

/// Desired contact flag and time left in the current half-phase for one leg.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LegPhase {
    pub desired_contact: bool,
    pub time_left: f64,
}

/// Phase query at absolute time `t`: contact during the first half-stride of
/// the leg's shifted phase, swing during the second.
pub fn gait_query(schedule: &GaitSchedule, t: f64) -> [LegPhase; 4] {
    let half = schedule.stride / 2.0;
    // Wrap the time first so exact stride multiples stay exact.
    let t = t.rem_euclid(schedule.stride);
    let mut out = [LegPhase { desired_contact: true, time_left: 0.0 }; 4];
    for (leg, slot) in out.iter_mut().enumerate() {
        let phase = (t + schedule.offsets[leg]).rem_euclid(schedule.stride);
        if phase < half {
            *slot = LegPhase { desired_contact: true, time_left: half - phase };
        } else {
            *slot = LegPhase { desired_contact: false, time_left: schedule.stride - phase };
        }
    }
    out
}

/// Body-frame reference twist: heading velocity, lateral velocity, yaw rate.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct Command {
    pub vx: f64,
    pub vy: f64,
    pub yaw_rate: f64,
}

/// Planner tuning.
#[derive(Clone, Debug, serde::Serialize, serde::Deserialize)]
#[serde(default)]
pub struct PlannerConfig {
    /// Search radius of the foothold grid window (m).
    pub window_radius: f64,
    pub w_nominal: f64,
    pub w_edge: f64,
    pub w_reach: f64,
    /// Prediction horizon (s); one stride.
    pub horizon: f64,
    pub w_acc: f64,
    pub w_vel: f64,
    pub w_height: f64,
    pub w_attitude: f64,
    /// Kinematic annulus for the reach cost (m).
    pub reach_min: f64,
    pub reach_max: f64,
}

impl Default for PlannerConfig {
    fn default() -> Self {
        Self {
            window_radius: 0.3,
            w_nominal: 1.0,
            w_edge: 5.0,
            w_reach: 10.0,
            horizon: STRIDE,
            w_acc: 1.0,
            w_vel: 10.0,
            w_height: 100.0,
            w_attitude: 50.0,
            reach_min: 0.35,
            reach_max: 0.60,
        }
    }
}

/// One piecewise-quintic scalar trajectory over two half-stride segments.
#[derive(Clone, Debug)]
pub struct PiecewiseQuintic {
    /// Segment duration (s).
    pub seg: f64,
    pub coeffs: [[f64; 6]; 2],
}

impl PiecewiseQuintic {
    /// Value, first and second derivative at local time `t` in `[0, 2*seg]`,
    /// evaluated in Horner form.
    pub fn eval(&self, t: f64) -> (f64, f64, f64) {
        let (idx, u) = if t < self.seg { (0, t) } else { (1, t - self.seg) };
        let c = &self.coeffs[idx];
        let f = ((((c[5] * u + c[4]) * u + c[3]) * u + c[2]) * u + c[1]) * u + c[0];
        let fd = (((5.0 * c[5] * u + 4.0 * c[4]) * u + 3.0 * c[3]) * u + 2.0 * c[2]) * u + c[1];
        let fdd = ((20.0 * c[5] * u + 12.0 * c[4]) * u + 6.0 * c[3]) * u + 2.0 * c[2];
        (f, fd, fdd)
    }
}

/// Fits one scalar dimension: minimize
/// `integral(w_acc*f''^2 + w_vel*(f' - v_ref)^2 + w_pos*(f - g)^2)`
/// over both segments, subject to `f(0)=p0`, `f'(0)=v0`, and C2 continuity
/// at the segment boundary. Solved exactly through the KKT system.
#[allow(clippy::too_many_arguments)]
fn fit_quintic(
    seg: f64,
    p0: f64,
    v0: f64,
    w_acc: f64,
    w_vel: f64,
    v_ref: f64,
    w_pos: f64,
    g: f64,
) -> PiecewiseQuintic {
    let n = 12;
    let m = 5;
    let mut kkt = DMatrix::<f64>::zeros(n + m, n + m);
    let mut rhs = DVector::<f64>::zeros(n + m);

    // Per-segment Gram matrix of the running cost.
    let mut h_block = [[0.0; 6]; 6];
    for (a, row) in h_block.iter_mut().enumerate() {
        for (b, cell) in row.iter_mut().enumerate() {
            let mut v = w_pos * seg.powi((a + b + 1) as i32) / (a + b + 1) as f64;
            if a >= 1 && b >= 1 {
                v += w_vel * (a * b) as f64 * seg.powi((a + b - 1) as i32) / (a + b - 1) as f64;
            }
            if a >= 2 && b >= 2 {
                v += w_acc * (a * (a - 1) * b * (b - 1)) as f64 * seg.powi((a + b - 3) as i32)
                    / (a + b - 3) as f64;
            }
            *cell = v;
        }
    }
    for s in 0..2 {
        for a in 0..6 {
            for b in 0..6 {
                kkt[(s * 6 + a, s * 6 + b)] = 2.0 * h_block[a][b];
            }
            // Linear cost terms from velocity tracking and position target.
            let mut lin = w_pos * g * seg.powi((a + 1) as i32) / (a + 1) as f64;
            if a >= 1 {
                lin += w_vel * v_ref * seg.powi(a as i32);
            }
            rhs[s * 6 + a] = 2.0 * lin;
        }
    }

    // Equality constraints.
    let mut constraint = |row: usize, cols: &[(usize, f64)], value: f64| {
        for &(c, v) in cols {
            kkt[(n + row, c)] = v;
            kkt[(c, n + row)] = v;
        }
        rhs[n + row] = value;
    };
    constraint(0, &[(0, 1.0)], p0);
    constraint(1, &[(1, 1.0)], v0);
    let mut c2: Vec<(usize, f64)> = (0..6).map(|a| (a, seg.powi(a as i32))).collect();
    c2.push((6, -1.0));
    constraint(2, &c2, 0.0);
    let mut c3: Vec<(usize, f64)> =
        (1..6).map(|a| (a, a as f64 * seg.powi(a as i32 - 1))).collect();
    c3.push((7, -1.0));
    constraint(3, &c3, 0.0);
    let mut c4: Vec<(usize, f64)> =
        (2..6).map(|a| (a, (a * (a - 1)) as f64 * seg.powi(a as i32 - 2))).collect();
    c4.push((8, -2.0));
    constraint(4, &c4, 0.0);

    let solution = kkt.lu().solve(&rhs).expect("spline KKT system is singular");
    let mut coeffs = [[0.0; 6]; 2];
    for s in 0..2 {
        for a in 0..6 {
            coeffs[s][a] = solution[s * 6 + a];
        }
    }
    PiecewiseQuintic { seg, coeffs }
}

/// One optimizer output: footholds, base spline, desired joint positions.
#[derive(Clone, Debug)]
pub struct PlanSolution {
    /// Wall-clock time the solve started from.
    pub t0: f64,
    pub horizon: f64,
    pub footholds: [Vector3<f64>; 4],
    /// x, y, z, roll, pitch, yaw.
    pub splines: [PiecewiseQuintic; 6],
    /// Desired joint positions at touch-down.
    pub q_star: [f64; 12],
    /// Legs whose foothold search window was empty (nominal used instead).
    pub foothold_fallback: [bool; 4],
    /// Legs whose desired joints required reach clamping.
    pub ik_clamped: [bool; 4],
}

/// Base reference extracted from a solution.
#[derive(Clone, Copy, Debug)]
pub struct BaseSample {
    pub pose: Pose,
    pub twist: Twist,
    pub accel: Accel,
    /// True when the query time was clamped into the horizon.
    pub clamped: bool,
}

impl PlanSolution {
    /// Spline state at local time `t` (seconds since the solve), clamped to
    /// the horizon.
    pub fn eval_local(&self, t: f64) -> BaseSample {
        let clamped = t < 0.0 || t > self.horizon;
        let t = t.clamp(0.0, self.horizon);
        let mut val = [0.0; 6];
        let mut vel = [0.0; 6];
        let mut acc = [0.0; 6];
        for (d, spline) in self.splines.iter().enumerate() {
            let (f, fd, fdd) = spline.eval(t);
            val[d] = f;
            vel[d] = fd;
            acc[d] = fdd;
        }
        let (roll, pitch, yaw) = (val[3], val[4], val[5]);
        let orientation = UnitQuaternion::from_euler_angles(roll, pitch, yaw);
        let pose = Pose::new(Vector3::new(val[0], val[1], val[2]), orientation);
        let rates = Vector3::new(vel[3], vel[4], vel[5]);
        let rates_dot = Vector3::new(acc[3], acc[4], acc[5]);
        let (omega, alpha) = euler_rates_to_world(pitch, yaw, &rates, &rates_dot);
        BaseSample {
            pose,
            twist: Twist::new(Vector3::new(vel[0], vel[1], vel[2]), omega),
            accel: Accel::new(Vector3::new(acc[0], acc[1], acc[2]), alpha),
            clamped,
        }
    }
}

/// Spline and its two derivatives at absolute time `t_query`.
pub fn eval_base(sol: &PlanSolution, t_query: f64) -> BaseSample {
    sol.eval_local(t_query - sol.t0)
}

/// World angular velocity and acceleration from ZYX Euler angles and their
/// time derivatives.
fn euler_rates_to_world(
    pitch: f64,
    yaw: f64,
    rates: &Vector3<f64>,
    rates_dot: &Vector3<f64>,
) -> (Vector3<f64>, Vector3<f64>) {
    let (sp, cp) = pitch.sin_cos();
    let (sy, cy) = yaw.sin_cos();
    let ex = Vector3::new(cy * cp, sy * cp, -sp);
    let ey = Vector3::new(-sy, cy, 0.0);
    let ez = Vector3::z();
    let omega = ex * rates.x + ey * rates.y + ez * rates.z;

    let ex_dot = Vector3::new(-sy * cp, cy * cp, 0.0) * rates.z
        + Vector3::new(-cy * sp, -sy * sp, -cp) * rates.y;
    let ey_dot = Vector3::new(-cy, -sy, 0.0) * rates.z;
    let alpha = ex * rates_dot.x
        + ey * rates_dot.y
        + ez * rates_dot.z
        + ex_dot * rates.x
        + ey_dot * rates.y;
    (omega, alpha)
}

/// Euler-angle rates matching a world angular velocity at the given attitude.
fn world_to_euler_rates(pitch: f64, yaw: f64, omega: &Vector3<f64>) -> Vector3<f64> {
    let (sp, cp) = pitch.sin_cos();
    let (sy, cy) = yaw.sin_cos();
    let e = Matrix3::from_columns(&[
        Vector3::new(cy * cp, sy * cp, -sp),
        Vector3::new(-sy, cy, 0.0),
        Vector3::z(),
    ]);
    match e.lu().solve(omega) {
        Some(rates) => rates,
        None => Vector3::new(0.0, 0.0, omega.z),
    }
}

fn planner_height(map: &ElevationMap, x: f64, y: f64, drifted: bool) -> f64 {
    let h = map.sample_height(x, y, SampleMode::True).height;
    if drifted {
        h + map.eval_drift
    } else {
        h
    }
}

/// Computes a full plan from the current state.
///
/// `drifted` makes the optimizer consume the drift-perturbed map (evaluation
/// sweeps); training always plans on ground truth.
#[allow(clippy::too_many_arguments)]
pub fn optimize(
    state: &RobotState,
    map: &ElevationMap,
    drifted: bool,
    command: &Command,
    schedule: &GaitSchedule,
    params: &SimParams,
    cfg: &PlannerConfig,
    t: f64,
) -> PlanSolution {
    let (roll, pitch, yaw) = state.base.orientation.euler_angles();
    let v_world = UnitQuaternion::from_axis_angle(&Vector3::z_axis(), yaw)
        * Vector3::new(command.vx, command.vy, 0.0);
    let phases = gait_query(schedule, t);

    // Stage one: footholds.
    let mut footholds = [Vector3::zeros(); 4];
    let mut fallback = [false; 4];
    for leg in 0..4 {
        let hip_world = state.base.position + state.base.orientation * params.hip_position(leg);
        if phases[leg].desired_contact {
            // Stance legs keep their measured foot, projected on the surface.
            let p = state.foot_pos[leg];
            let z = planner_height(map, p.x, p.y, drifted);
            footholds[leg] = Vector3::new(p.x, p.y, z);
            continue;
        }
        let neutral_world = state.base.position + state.base.orientation * params.leg_neutral(leg);
        let nominal =
            Vector3::new(neutral_world.x, neutral_world.y, 0.0) + v_world * (schedule.stride / 4.0);
        let hip_ref = Vector3::new(
            hip_world.x,
            hip_world.y,
            planner_height(map, hip_world.x, hip_world.y, drifted) + params.nominal_height,
        );
        match select_foothold(map, drifted, &nominal, &hip_ref, cfg) {
            Some(p) => footholds[leg] = p,
            None => {
                let z = planner_height(map, nominal.x, nominal.y, drifted);
                footholds[leg] = Vector3::new(nominal.x, nominal.y, z);
                fallback[leg] = true;
            }
        }
    }

    // Stage two: base spline.
    let z_nom = footholds.iter().map(|p| p.z).sum::<f64>() / 4.0 + params.nominal_height;
    let p0 = state.base.position;
    let v0 = state.base_twist.linear;
    let rates = world_to_euler_rates(pitch, yaw, &state.base_twist.angular);
    let seg = cfg.horizon / 2.0;
    let splines = [
        fit_quintic(seg, p0.x, v0.x, cfg.w_acc, cfg.w_vel, v_world.x, 0.0, 0.0),
        fit_quintic(seg, p0.y, v0.y, cfg.w_acc, cfg.w_vel, v_world.y, 0.0, 0.0),
        fit_quintic(seg, p0.z, v0.z, cfg.w_acc, cfg.w_vel, 0.0, cfg.w_height, z_nom),
        fit_quintic(seg, roll, rates.x, cfg.w_acc, cfg.w_vel, 0.0, cfg.w_attitude, 0.0),
        fit_quintic(seg, pitch, rates.y, cfg.w_acc, cfg.w_vel, 0.0, cfg.w_attitude, 0.0),
        fit_quintic(seg, yaw, rates.z, cfg.w_acc, cfg.w_vel, command.yaw_rate, 0.0, 0.0),
    ];

    let mut sol = PlanSolution {
        t0: t,
        horizon: cfg.horizon,
        footholds,
        splines,
        q_star: [0.0; 12],
        foothold_fallback: fallback,
        ik_clamped: [false; 4],
    };
    let (q_star, ik_clamped) = desired_joints(&sol, state, schedule, params, t);
    sol.q_star = q_star;
    sol.ik_clamped = ik_clamped;
    sol
}

/// Grid argmin over the window around the nominal foothold. Returns `None`
/// when no cell of the window lies inside the map.
fn select_foothold(
    map: &ElevationMap,
    drifted: bool,
    nominal: &Vector3<f64>,
    hip_ref: &Vector3<f64>,
    cfg: &PlannerConfig,
) -> Option<Vector3<f64>> {
    let raster = &map.raster;
    let res = raster.resolution;
    let min_col = ((nominal.x - cfg.window_radius - raster.origin_x) / res).floor() as i64;
    let max_col = ((nominal.x + cfg.window_radius - raster.origin_x) / res).ceil() as i64;
    let min_row = ((nominal.y - cfg.window_radius - raster.origin_y) / res).floor() as i64;
    let max_row = ((nominal.y + cfg.window_radius - raster.origin_y) / res).ceil() as i64;
    let mut best: Option<(f64, Vector3<f64>)> = None;
    for row in min_row.max(0)..=max_row.min(raster.rows() as i64 - 1) {
        for col in min_col.max(0)..=max_col.min(raster.cols() as i64 - 1) {
            let (x, y) = raster.cell_center(row as usize, col as usize);
            let dx = x - nominal.x;
            let dy = y - nominal.y;
            if dx * dx + dy * dy > cfg.window_radius * cfg.window_radius {
                continue;
            }
            let z = planner_height(map, x, y, drifted);
            let p = Vector3::new(x, y, z);
            let edge = raster.gradient_magnitude(row as usize, col as usize);
            let dist = (p - hip_ref).norm();
            let reach = (dist - cfg.reach_max).max(0.0) + (cfg.reach_min - dist).max(0.0);
            let cost = cfg.w_nominal * (dx * dx + dy * dy + (z - nominal.z) * (z - nominal.z))
                + cfg.w_edge * edge
                + cfg.w_reach * reach;
            let better = match &best {
                Some((c, _)) => cost < *c,
                None => true,
            };
            if better {
                best = Some((cost, p));
            }
        }
    }
    best.map(|(_, p)| p)
}

/// Desired joint positions: stance legs aim at their measured foot under the
/// near-term desired base pose, swing legs at the target foothold under the
/// desired base pose at their touch-down time. Swing interpolation is
/// deliberately absent; each leg gets its touch-down configuration directly.
pub fn desired_joints(
    sol: &PlanSolution,
    state: &RobotState,
    schedule: &GaitSchedule,
    params: &SimParams,
    t: f64,
) -> ([f64; 12], [bool; 4]) {
    let phases = gait_query(schedule, t);
    let mut q = [0.0; 12];
    let mut clamped = [false; 4];
    for leg in 0..4 {
        let (t_eval, target) = if phases[leg].desired_contact {
            (t + 0.02, state.foot_pos[leg])
        } else {
            (t + phases[leg].time_left, sol.footholds[leg])
        };
        let base_des = eval_base(sol, t_eval).pose;
        let ik = sim::ik(&base_des, params, &target, leg);
        q[leg * 3..leg * 3 + 3].copy_from_slice(&ik.q);
        clamped[leg] = ik.clamped;
    }
    (q, clamped)
}

/// When new solutions are computed.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum ReplanMode {
    /// Solve on leg touch-downs and on disturbing events (training).
    TouchdownAndEvents,
    /// Solve at a fixed rate; events do not trigger solves (rate sweeps).
    FixedRate(f64),
}

/// Events that can trigger a replan in the event-driven mode.
#[derive(Clone, Copy, Debug, Default)]
pub struct ReplanEvents {
    pub touchdown: bool,
    pub push: bool,
    pub command_change: bool,
    pub fall: bool,
}

impl ReplanEvents {
    pub fn any(&self) -> bool {
        self.touchdown || self.push || self.command_change || self.fall
    }
}

#[derive(Clone, Copy, Debug)]
pub struct ReplanScheduler {
    pub mode: ReplanMode,
    pub last_solve_time: f64,
}

impl ReplanScheduler {
    pub fn new(mode: ReplanMode) -> Self {
        Self { mode, last_solve_time: f64::NEG_INFINITY }
    }

    pub fn should_replan(&self, t: f64, events: &ReplanEvents) -> bool {
        match self.mode {
            ReplanMode::TouchdownAndEvents => events.any(),
            ReplanMode::FixedRate(hz) => t - self.last_solve_time >= 1.0 / hz - 1e-9,
        }
    }

    pub fn mark_solved(&mut self, t: f64) {
        self.last_solve_time = t;
    }
}

/// CSV export of a solution: foothold rows then sampled spline rows.
pub fn plan_csv(sol: &PlanSolution, samples: usize) -> String {
    let mut out = String::from("kind,t,x,y,z,roll,pitch,yaw\n");
    for (leg, p) in sol.footholds.iter().enumerate() {
        out.push_str(&format!("foothold{leg},{:.4},{:.6},{:.6},{:.6},,,\n", sol.t0, p.x, p.y, p.z));
    }
    for k in 0..=samples {
        let tau = sol.horizon * k as f64 / samples as f64;
        let s = sol.eval_local(tau);
        let (r, pch, yw) = s.pose.orientation.euler_angles();
        out.push_str(&format!(
            "base,{:.4},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6}\n",
            sol.t0 + tau,
            s.pose.position.x,
            s.pose.position.y,
            s.pose.position.z,
            r,
            pch,
            yw
        ));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::percept::ElevationMap;
    use crate::terrain;
    use approx::assert_relative_eq;

    fn flat_map() -> ElevationMap {
        ElevationMap::new(terrain::flat_patch())
    }

    fn standing_state(params: &SimParams) -> RobotState {
        RobotState::standing(params, Vector3::new(0.0, 0.0, params.nominal_height), 0.0)
    }

    #[test]
    fn gait_query_at_zero_and_half_stride() {
        let schedule = GaitSchedule::default();
        let p0 = gait_query(&schedule, 0.0);
        assert!(p0[0].desired_contact && p0[3].desired_contact); // LF, RH
        assert!(!p0[1].desired_contact && !p0[2].desired_contact); // RF, LH
        for leg in 0..4 {
            assert_relative_eq!(p0[leg].time_left, SWING, epsilon = 1e-12);
        }
        let p1 = gait_query(&schedule, SWING);
        for leg in 0..4 {
            assert_eq!(p1[leg].desired_contact, !p0[leg].desired_contact);
        }
        let p2 = gait_query(&schedule, STRIDE);
        for leg in 0..4 {
            assert_eq!(p2[leg].desired_contact, p0[leg].desired_contact);
            assert_relative_eq!(p2[leg].time_left, p0[leg].time_left, epsilon = 1e-9);
        }
    }

    #[test]
    fn flat_ground_nominal_stance_solution() {
        let params = SimParams::default();
        let cfg = PlannerConfig::default();
        let map = flat_map();
        let state = standing_state(&params);
        let sol = optimize(
            &state,
            &map,
            false,
            &Command::default(),
            &GaitSchedule::default(),
            &params,
            &cfg,
            0.0,
        );
        // Footholds at the leg neutral points (within a cell of quantization).
        for leg in 0..4 {
            let neutral = state.base.position + state.base.orientation * params.leg_neutral(leg);
            assert!((sol.footholds[leg].x - neutral.x).abs() < 0.05, "leg {leg}");
            assert!((sol.footholds[leg].y - neutral.y).abs() < 0.05, "leg {leg}");
            assert!(sol.footholds[leg].z.abs() < 1e-9);
            assert!(!sol.foothold_fallback[leg]);
        }
        // Level spline at nominal height, near-zero twist.
        for &tq in &[0.0, 0.3, 0.6, 0.9] {
            let s = sol.eval_local(tq);
            assert!((s.pose.position.z - params.nominal_height).abs() < 1e-6);
            assert!(s.twist.linear.norm() < 1e-6, "twist at {tq}: {:?}", s.twist.linear);
            assert!(s.twist.angular.norm() < 1e-6);
        }
    }

    #[test]
    fn forward_command_shifts_footholds_by_raibert_rule() {
        let params = SimParams::default();
        let cfg = PlannerConfig::default();
        let map = flat_map();
        let state = standing_state(&params);
        let command = Command { vx: 0.5, vy: 0.0, yaw_rate: 0.0 };
        let sol = optimize(
            &state,
            &map,
            false,
            &command,
            &GaitSchedule::default(),
            &params,
            &cfg,
            0.0,
        );
        let phases = gait_query(&GaitSchedule::default(), 0.0);
        let expected_shift = 0.5 * STRIDE / 4.0; // 0.11625 m
        for leg in 0..4 {
            if phases[leg].desired_contact {
                continue;
            }
            let hip = state.base.position + state.base.orientation * params.hip_position(leg);
            let shift = sol.footholds[leg].x - hip.x;
            assert!(
                (shift - expected_shift).abs() < 0.025,
                "leg {leg}: shift {shift} vs {expected_shift}"
            );
        }
    }

    #[test]
    fn foothold_avoids_gap_under_nominal() {
        let params = SimParams::default();
        let cfg = PlannerConfig::default();
        // Flat map with a 0.3 m wide chasm right under the RF nominal foothold.
        let mut raster = terrain::flat_patch();
        let state = standing_state(&params);
        let hip = state.base.position + state.base.orientation * params.hip_position(1);
        for r in 0..raster.rows() {
            for c in 0..raster.cols() {
                let (x, _) = raster.cell_center(r, c);
                if (x - hip.x).abs() < 0.15 {
                    raster.set(r, c, -1.0);
                }
            }
        }
        let map = ElevationMap::new(raster);
        let sol = optimize(
            &state,
            &map,
            false,
            &Command::default(),
            &GaitSchedule::default(),
            &params,
            &cfg,
            0.0,
        );
        // RF is in swing at t=0; its foothold must sit outside the chasm.
        assert!(!gait_query(&GaitSchedule::default(), 0.0)[1].desired_contact);
        let chosen = sol.footholds[1];
        assert!(chosen.z > -0.5, "foothold fell in the gap: {chosen:?}");
        assert!((chosen.x - hip.x).abs() >= 0.15);

        // Brute-force argmin oracle over the same window agrees.
        let neutral = state.base.position + state.base.orientation * params.leg_neutral(1);
        let nominal = Vector3::new(neutral.x, neutral.y, 0.0);
        let hip_ref = Vector3::new(
            hip.x,
            hip.y,
            map.sample_height(hip.x, hip.y, SampleMode::True).height + params.nominal_height,
        );
        let oracle = select_foothold(&map, false, &nominal, &hip_ref, &cfg).unwrap();
        assert_relative_eq!(chosen, oracle, epsilon = 1e-12);
    }

    #[test]
    fn eval_base_boundary_matches_initial_state() {
        let params = SimParams::default();
        let cfg = PlannerConfig::default();
        let map = flat_map();
        let mut state = standing_state(&params);
        state.base_twist = Twist::new(Vector3::new(0.3, -0.1, 0.05), Vector3::new(0.0, 0.0, 0.2));
        let sol = optimize(
            &state,
            &map,
            false,
            &Command { vx: 0.3, vy: -0.1, yaw_rate: 0.2 },
            &GaitSchedule::default(),
            &params,
            &cfg,
            1.5,
        );
        let s = eval_base(&sol, 1.5);
        assert!(!s.clamped);
        assert_relative_eq!(s.pose.position, state.base.position, epsilon = 1e-8);
        assert_relative_eq!(s.twist.linear, state.base_twist.linear, epsilon = 1e-8);
        assert!(s.pose.orientation.angle_to(&state.base.orientation) < 1e-8);

        // Beyond the horizon the sample is clamped and flagged.
        let end = eval_base(&sol, 1.5 + cfg.horizon + 0.5);
        assert!(end.clamped);
        let at_end = eval_base(&sol, 1.5 + cfg.horizon);
        assert_relative_eq!(end.pose.position, at_end.pose.position, epsilon = 1e-12);
    }

    #[test]
    fn constant_velocity_plan_has_zero_acceleration() {
        let params = SimParams::default();
        let cfg = PlannerConfig::default();
        let map = flat_map();
        let mut state = standing_state(&params);
        let v = Vector3::new(0.4, 0.1, 0.0);
        state.base_twist = Twist::new(v, Vector3::zeros());
        let sol = optimize(
            &state,
            &map,
            false,
            &Command { vx: 0.4, vy: 0.1, yaw_rate: 0.0 },
            &GaitSchedule::default(),
            &params,
            &cfg,
            0.0,
        );
        for &tq in &[0.0, 0.2, 0.45, 0.7, 0.93] {
            let s = sol.eval_local(tq);
            assert_relative_eq!(s.twist.linear.x, 0.4, epsilon = 1e-6);
            assert_relative_eq!(s.twist.linear.y, 0.1, epsilon = 1e-6);
            assert!(s.accel.linear.norm() < 1e-5, "accel at {tq}: {:?}", s.accel.linear);
        }
    }

    #[test]
    fn finite_difference_of_poses_matches_twist() {
        let params = SimParams::default();
        let cfg = PlannerConfig::default();
        let map = flat_map();
        let mut state = standing_state(&params);
        state.base_twist =
            Twist::new(Vector3::new(0.5, -0.2, 0.1), Vector3::new(0.1, -0.05, 0.3));
        let sol = optimize(
            &state,
            &map,
            false,
            &Command { vx: 0.5, vy: -0.2, yaw_rate: 0.3 },
            &GaitSchedule::default(),
            &params,
            &cfg,
            0.0,
        );
        let dt = 1e-4;
        for &tq in &[0.1, 0.3, 0.6] {
            let plus = sol.eval_local(tq + dt);
            let minus = sol.eval_local(tq - dt);
            let mid = sol.eval_local(tq);
            let fd = crate::geom::pose_diff(&plus.pose, &minus.pose) / (2.0 * dt);
            for i in 0..3 {
                assert!((fd[i] - mid.twist.linear[i]).abs() < 1e-4, "lin {i} at {tq}");
                assert!((fd[i + 3] - mid.twist.angular[i]).abs() < 1e-4, "ang {i} at {tq}");
            }
        }
    }

    #[test]
    fn spline_is_c2_continuous_at_segment_boundary() {
        let s = fit_quintic(0.465, 0.3, -0.2, 1.0, 10.0, 0.5, 100.0, 0.6);
        let eps = 1e-9;
        let before = s.eval(0.465 - eps);
        let after = s.eval(0.465 + eps);
        assert!((before.0 - after.0).abs() < 1e-8);
        assert!((before.1 - after.1).abs() < 1e-8);
        assert!((before.2 - after.2).abs() < 1e-6);
    }

    #[test]
    fn desired_joints_nominal_round_trip() {
        let params = SimParams::default();
        let cfg = PlannerConfig::default();
        let map = flat_map();
        let state = standing_state(&params);
        let schedule = GaitSchedule::default();
        let mut sol =
            optimize(&state, &map, false, &Command::default(), &schedule, &params, &cfg, 0.0);
        // Force every foothold onto the measured feet: the swing and stance
        // rules then coincide and the result must be the nominal angles.
        sol.footholds = state.foot_pos;
        let (q, clamped) = desired_joints(&sol, &state, &schedule, &params, 0.0);
        let nominal = params.nominal_q();
        for j in 0..12 {
            assert!((q[j] - nominal[j]).abs() < 1e-6, "joint {j}: {} vs {}", q[j], nominal[j]);
        }
        assert_eq!(clamped, [false; 4]);
    }

    #[test]
    fn desired_joints_flags_unreachable_foothold() {
        let params = SimParams::default();
        let cfg = PlannerConfig::default();
        let map = flat_map();
        let state = standing_state(&params);
        let schedule = GaitSchedule::default();
        let mut sol =
            optimize(&state, &map, false, &Command::default(), &schedule, &params, &cfg, 0.0);
        sol.footholds[1] += Vector3::new(2.0, 0.0, 0.0); // RF is swinging at t=0
        let (_, clamped) = desired_joints(&sol, &state, &schedule, &params, 0.0);
        assert!(clamped[1]);
    }

    #[test]
    fn replan_rules() {
        let training = ReplanScheduler::new(ReplanMode::TouchdownAndEvents);
        assert!(training
            .should_replan(1.0, &ReplanEvents { touchdown: true, ..Default::default() }));
        assert!(training.should_replan(1.0, &ReplanEvents { push: true, ..Default::default() }));
        assert!(!training.should_replan(1.0, &ReplanEvents::default()));

        let mut sweep = ReplanScheduler::new(ReplanMode::FixedRate(2.0));
        sweep.mark_solved(0.0);
        // Pushes do not trigger solves in rate-sweep mode.
        assert!(!sweep.should_replan(0.4, &ReplanEvents { push: true, ..Default::default() }));
        assert!(!sweep.should_replan(0.4, &ReplanEvents::default()));
        assert!(sweep.should_replan(0.5, &ReplanEvents::default()));
    }

    #[test]
    fn footholds_stay_on_patch_and_finite() {
        let params = SimParams::default();
        let cfg = PlannerConfig::default();
        let schedule = GaitSchedule::default();
        for (i, family) in terrain::TerrainFamily::ALL.iter().enumerate() {
            let patch = terrain::generate_patch(*family, 5, i as u64);
            let map = ElevationMap::new(patch.raster);
            let spawn_z = map.sample_height(0.0, 0.0, SampleMode::True).height;
            let state = RobotState::standing(
                &params,
                Vector3::new(0.0, 0.0, spawn_z + params.nominal_height),
                0.3,
            );
            let sol = optimize(
                &state,
                &map,
                false,
                &Command { vx: 0.6, vy: 0.0, yaw_rate: 0.0 },
                &schedule,
                &params,
                &cfg,
                0.12,
            );
            for leg in 0..4 {
                let p = sol.footholds[leg];
                assert!(p.x.abs() <= 4.0 + 1e-9 && p.y.abs() <= 4.0 + 1e-9);
                assert!(p.iter().all(|v| v.is_finite()));
            }
        }
    }

    #[test]
    fn consecutive_solutions_agree_on_flat_ground() {
        let params = SimParams::default();
        let cfg = PlannerConfig::default();
        let map = flat_map();
        let schedule = GaitSchedule::default();
        let command = Command { vx: 0.4, vy: 0.0, yaw_rate: 0.0 };

        let mut state = standing_state(&params);
        state.base_twist = Twist::new(Vector3::new(0.4, 0.0, 0.0), Vector3::zeros());
        let sol_a = optimize(&state, &map, false, &command, &schedule, &params, &cfg, 0.0);

        // Advance the state along the plan to the next touch-down.
        let t = SWING;
        let ref_state = sol_a.eval_local(t);
        let mut later = state.clone();
        later.base = ref_state.pose;
        later.base_twist = ref_state.twist;
        later.foot_pos = sim::fk(&later.base, &params, &later.q);
        let sol_b = optimize(&later, &map, false, &command, &schedule, &params, &cfg, t);

        // Base trajectories agree over the overlapping window.
        let mut worst: f64 = 0.0;
        let mut tau = 0.0;
        while tau + t <= sol_a.horizon {
            let a = sol_a.eval_local(t + tau);
            let b = sol_b.eval_local(tau);
            worst = worst.max(crate::geom::pose_diff(&a.pose, &b.pose).norm());
            tau += 0.01;
        }
        assert!(worst < 0.05, "consecutive plans diverge: {worst}");
    }
}
