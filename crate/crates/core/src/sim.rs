//! Simplified quadruped dynamics.
//!
//! The base is a single rigid body; the legs are massless three-joint chains
//! (HAA, HFE, KFE) whose joints follow PD torque control against a per-joint
//! reflected inertia. Feet that penetrate the heightfield produce a penalty
//! normal force plus smoothed Coulomb friction, and all contact forces act on
//! the base through the foot points.
//!
//! Leg order is LF, RF, LH, RH.

use crate::geom::{Pose, Twist};
use crate::percept::{ElevationMap, SampleMode};
use nalgebra::{Matrix3, UnitQuaternion, Vector3};

/// Simulation step (s).
pub const SIM_DT: f64 = 0.005;

/// Sign of the lateral hip offset per leg (left +1, right -1).
const SIDE: [f64; 4] = [1.0, -1.0, 1.0, -1.0];
/// Sign of the longitudinal hip position per leg (front +1, hind -1).
const FRONT: [f64; 4] = [1.0, 1.0, -1.0, -1.0];

/// Robot geometry, actuation, and contact parameters.
#[derive(Clone, Debug, serde::Serialize, serde::Deserialize)]
#[serde(default)]
pub struct SimParams {
    pub base_mass: f64,
    pub base_inertia: [f64; 3],
    /// Base collision box half extents (x, y, z).
    pub base_half_extents: [f64; 3],
    pub hip_x: f64,
    pub hip_y: f64,
    /// Lateral offset from the HAA axis to the leg plane.
    pub hip_lateral: f64,
    pub thigh: f64,
    pub shank: f64,
    pub kp: f64,
    pub kd: f64,
    pub torque_limit: f64,
    /// Joint velocity limit (rad/s).
    pub velocity_limit: f64,
    /// Reflected inertia seen by each joint (kg m^2).
    pub joint_inertia: f64,
    pub joint_lower: [f64; 3],
    pub joint_upper: [f64; 3],
    pub contact_stiffness: f64,
    pub contact_damping: f64,
    /// Cap on the contact normal force per foot (N); the penalty spring
    /// otherwise catapults deeply penetrated bodies.
    pub contact_force_limit: f64,
    /// Velocity scale below which friction behaves viscously.
    pub stick_velocity: f64,
    pub gravity: f64,
    /// Standing base height above the foothold plane.
    pub nominal_height: f64,
}

impl Default for SimParams {
    fn default() -> Self {
        Self {
            base_mass: 30.0,
            base_inertia: [0.325, 1.0, 1.125],
            base_half_extents: [0.3, 0.15, 0.1],
            hip_x: 0.3,
            hip_y: 0.16,
            hip_lateral: 0.1,
            thigh: 0.285,
            shank: 0.33,
            kp: 80.0,
            kd: 2.0,
            torque_limit: 80.0,
            velocity_limit: 12.0,
            joint_inertia: 0.05,
            joint_lower: [-0.7, -1.57, -2.61],
            joint_upper: [0.7, 1.57, 0.0],
            contact_stiffness: 2.0e4,
            contact_damping: 300.0,
            contact_force_limit: 3.0e3,
            stick_velocity: 0.01,
            gravity: 9.81,
            nominal_height: 0.5,
        }
    }
}

impl SimParams {
    /// HAA joint position in the base frame.
    pub fn hip_position(&self, leg: usize) -> Vector3<f64> {
        Vector3::new(FRONT[leg] * self.hip_x, SIDE[leg] * self.hip_y, 0.0)
    }

    /// Neutral point of a leg in the base frame: the hip shifted by the
    /// lateral offset, where the foot rests in nominal stance.
    pub fn leg_neutral(&self, leg: usize) -> Vector3<f64> {
        self.hip_position(leg) + Vector3::new(0.0, SIDE[leg] * self.hip_lateral, 0.0)
    }

    /// Foot position in the base frame for one leg's joint angles.
    pub fn leg_forward(&self, leg: usize, q: &[f64; 3]) -> Vector3<f64> {
        let (q1, q2, q3) = (q[0], q[1], q[2]);
        let u = self.thigh * q2.sin() + self.shank * (q2 + q3).sin();
        let w = -self.thigh * q2.cos() - self.shank * (q2 + q3).cos();
        let in_plane = Vector3::new(u, SIDE[leg] * self.hip_lateral, w);
        let rot_x = UnitQuaternion::from_axis_angle(&Vector3::x_axis(), q1);
        self.hip_position(leg) + rot_x * in_plane
    }

    /// Nominal standing joint angles: feet directly below the hip points at
    /// `nominal_height`.
    pub fn nominal_q(&self) -> [f64; 12] {
        let mut q = [0.0; 12];
        for leg in 0..4 {
            let target = self.hip_position(leg)
                + Vector3::new(0.0, SIDE[leg] * self.hip_lateral, -self.nominal_height);
            let sol = ik_base_frame(self, leg, &target);
            q[leg * 3..leg * 3 + 3].copy_from_slice(&sol.q);
        }
        q
    }
}

/// Full dynamic state of one robot.
#[derive(Clone, Debug)]
pub struct RobotState {
    pub base: Pose,
    pub base_twist: Twist,
    pub q: [f64; 12],
    pub qdot: [f64; 12],
    pub qddot_last: [f64; 12],
    pub foot_pos: [Vector3<f64>; 4],
    pub foot_vel: [Vector3<f64>; 4],
    pub contact_force: [Vector3<f64>; 4],
    pub joint_torque: [f64; 12],
    pub time: f64,
    /// Set when a non-finite value appeared during integration.
    pub fault: bool,
}

impl RobotState {
    /// Robot standing at `position` with nominal joint angles.
    pub fn standing(params: &SimParams, position: Vector3<f64>, yaw: f64) -> Self {
        let base = Pose::from_xyz_yaw(position.x, position.y, position.z, yaw);
        let q = params.nominal_q();
        let foot_pos = fk(&base, params, &q);
        Self {
            base,
            base_twist: Twist::zero(),
            q,
            qdot: [0.0; 12],
            qddot_last: [0.0; 12],
            foot_pos,
            foot_vel: [Vector3::zeros(); 4],
            contact_force: [Vector3::zeros(); 4],
            joint_torque: [0.0; 12],
            time: 0.0,
            fault: false,
        }
    }

    pub fn leg_q(&self, leg: usize) -> [f64; 3] {
        [self.q[leg * 3], self.q[leg * 3 + 1], self.q[leg * 3 + 2]]
    }

    pub fn is_finite(&self) -> bool {
        let scalars = self
            .q
            .iter()
            .chain(self.qdot.iter())
            .chain(self.base.position.iter())
            .chain(self.base.orientation.quaternion().coords.iter());
        scalars.clone().all(|v| v.is_finite())
            && self.base_twist.is_finite()
            && self.foot_pos.iter().all(|p| p.iter().all(|v| v.is_finite()))
    }
}

/// External disturbances acting on the robot.
#[derive(Clone, Debug, Default)]
pub struct Disturbances {
    pub wrench_force: Vector3<f64>,
    pub wrench_torque: Vector3<f64>,
    pub foot_force: [Vector3<f64>; 4],
    /// One-shot twist offset added to the base velocity at the next step.
    pub pending_push: Option<Twist>,
}

/// Per-leg friction coefficients.
#[derive(Clone, Copy, Debug)]
pub struct Friction(pub [f64; 4]);

impl Default for Friction {
    fn default() -> Self {
        Friction([0.8; 4])
    }
}

/// World-frame foot positions for the given base pose and joint vector.
pub fn fk(base: &Pose, params: &SimParams, q: &[f64; 12]) -> [Vector3<f64>; 4] {
    let mut out = [Vector3::zeros(); 4];
    for leg in 0..4 {
        let local = params.leg_forward(leg, &[q[leg * 3], q[leg * 3 + 1], q[leg * 3 + 2]]);
        out[leg] = base.position + base.orientation * local;
    }
    out
}

/// Joint angles (and clamp flag) for one leg.
#[derive(Clone, Copy, Debug)]
pub struct IkSolution {
    pub q: [f64; 3],
    /// True when the target was outside the reachable annulus and the
    /// returned angles aim at the nearest reachable point instead.
    pub clamped: bool,
}

/// Analytical IK in the base frame, knee-bent-backward branch.
pub fn ik_base_frame(params: &SimParams, leg: usize, target: &Vector3<f64>) -> IkSolution {
    let rel = target - params.hip_position(leg);
    let d = SIDE[leg] * params.hip_lateral;
    let mut clamped = false;

    // HAA: align the leg plane so the lateral offset points at the target.
    let r = (rel.y * rel.y + rel.z * rel.z).sqrt();
    let ratio = if r > 1e-12 { (d / r).clamp(-1.0, 1.0) } else { 0.0 };
    if r < d.abs() {
        clamped = true;
    }
    let q1 = rel.y.atan2(-rel.z) - ratio.asin();

    // In-plane coordinates after removing the lateral offset.
    let u = rel.x;
    let w = -(r * r - d * d).max(0.0).sqrt();
    let mut rho = (u * u + w * w).sqrt();
    let (rho_min, rho_max) = ((params.thigh - params.shank).abs(), params.thigh + params.shank);
    let (mut u, mut w) = (u, w);
    if rho < 1e-9 {
        u = 0.0;
        w = -rho_min.max(1e-6);
        rho = rho_min.max(1e-6);
        clamped = true;
    } else if rho > rho_max {
        let s = rho_max / rho;
        u *= s;
        w *= s;
        rho = rho_max;
        clamped = true;
    } else if rho < rho_min {
        let s = rho_min / rho;
        u *= s;
        w *= s;
        rho = rho_min;
        clamped = true;
    }

    let cos_knee = ((rho * rho - params.thigh * params.thigh - params.shank * params.shank)
        / (2.0 * params.thigh * params.shank))
        .clamp(-1.0, 1.0);
    let q3 = -cos_knee.acos();
    let k1 = params.thigh + params.shank * cos_knee;
    let k2 = params.shank * q3.sin();
    let q2 = u.atan2(-w) - k2.atan2(k1);
    IkSolution { q: [q1, q2, q3], clamped }
}

/// Analytical IK for a world-frame target under the given base pose.
pub fn ik(base: &Pose, params: &SimParams, target_world: &Vector3<f64>, leg: usize) -> IkSolution {
    let local = base.orientation.inverse() * (target_world - base.position);
    ik_base_frame(params, leg, &local)
}

/// Advances the state by one simulation step.
///
/// `joint_targets` are PD position targets; the pending push in
/// `disturbances` is consumed. A non-finite result marks the state faulted.
pub fn step(
    state: &RobotState,
    joint_targets: &[f64; 12],
    params: &SimParams,
    friction: &Friction,
    disturbances: &mut Disturbances,
    map: &ElevationMap,
) -> RobotState {
    let dt = SIM_DT;
    let mut next = state.clone();

    // Joint PD with torque limits; legs are massless so only the reflected
    // inertia responds.
    let mut q_new = [0.0; 12];
    let mut qdot_new = [0.0; 12];
    for j in 0..12 {
        let torque = (params.kp * (joint_targets[j] - state.q[j]) - params.kd * state.qdot[j])
            .clamp(-params.torque_limit, params.torque_limit);
        next.joint_torque[j] = torque;
        let qddot = torque / params.joint_inertia;
        let mut vel = (state.qdot[j] + qddot * dt)
            .clamp(-params.velocity_limit, params.velocity_limit);
        let mut pos = state.q[j] + vel * dt;
        let (lo, hi) = (params.joint_lower[j % 3], params.joint_upper[j % 3]);
        if pos < lo {
            pos = lo;
            vel = vel.max(0.0);
        } else if pos > hi {
            pos = hi;
            vel = vel.min(0.0);
        }
        q_new[j] = pos;
        qdot_new[j] = vel;
        next.qddot_last[j] = (vel - state.qdot[j]) / dt;
    }

    // Foot kinematics before the base moves: joint-driven motion plus rigid
    // transport with the current base twist.
    let feet_joint = fk(&state.base, params, &q_new);
    let feet_old = fk(&state.base, params, &state.q);
    let mut foot_vel = [Vector3::zeros(); 4];
    for leg in 0..4 {
        let joint_part = (feet_joint[leg] - feet_old[leg]) / dt;
        let r = feet_joint[leg] - state.base.position;
        foot_vel[leg] =
            joint_part + state.base_twist.linear + state.base_twist.angular.cross(&r);
    }

    // Penalty contact per foot.
    let mut contact = [Vector3::zeros(); 4];
    for leg in 0..4 {
        let p = feet_joint[leg];
        let ground = map.sample_height(p.x, p.y, SampleMode::True).height;
        let depth = ground - p.z;
        if depth > 0.0 {
            let rate = -foot_vel[leg].z;
            let normal = (params.contact_stiffness * depth + params.contact_damping * rate)
                .clamp(0.0, params.contact_force_limit);
            let vt = Vector3::new(foot_vel[leg].x, foot_vel[leg].y, 0.0);
            let speed = vt.norm();
            let tangential = if speed > 1e-12 {
                -vt * (friction.0[leg] * normal / speed.max(params.stick_velocity))
            } else {
                Vector3::zeros()
            };
            // The smoothing above already bounds |tangential| by mu * normal.
            contact[leg] = Vector3::new(tangential.x, tangential.y, normal);
        }
    }

    // Base dynamics: contact, disturbance foot forces, external wrench,
    // gravity. Semi-implicit Euler; the push offset is added to the twist
    // exactly once.
    let mut force = Vector3::new(0.0, 0.0, -params.base_mass * params.gravity);
    let mut torque = Vector3::zeros();
    force += disturbances.wrench_force;
    torque += disturbances.wrench_torque;
    for leg in 0..4 {
        let f = contact[leg] + disturbances.foot_force[leg];
        force += f;
        torque += (feet_joint[leg] - state.base.position).cross(&f);
    }

    let inertia = Matrix3::from_diagonal(&Vector3::new(
        params.base_inertia[0],
        params.base_inertia[1],
        params.base_inertia[2],
    ));
    let inv_inertia = Matrix3::from_diagonal(&Vector3::new(
        1.0 / params.base_inertia[0],
        1.0 / params.base_inertia[1],
        1.0 / params.base_inertia[2],
    ));
    let rot = state.base.orientation;
    let torque_body = rot.inverse() * torque;
    let omega_body = rot.inverse() * state.base_twist.angular;
    let omega_dot = inv_inertia * (torque_body - omega_body.cross(&(inertia * omega_body)));
    let mut omega_body_new = omega_body + omega_dot * dt;
    let mut linear = state.base_twist.linear + force * (dt / params.base_mass);
    if let Some(push) = disturbances.pending_push.take() {
        linear += push.linear;
        omega_body_new += rot.inverse() * push.angular;
    }
    let angular = rot * omega_body_new;

    next.base.position = state.base.position + linear * dt;
    let delta = UnitQuaternion::from_scaled_axis(angular * dt);
    next.base.orientation = UnitQuaternion::new_normalize((delta * rot).into_inner());
    next.base_twist = Twist::new(linear, angular);
    next.q = q_new;
    next.qdot = qdot_new;
    next.foot_pos = fk(&next.base, params, &q_new);
    next.foot_vel = foot_vel;
    next.contact_force = contact;
    next.time = state.time + dt;

    // Fault on non-finite values or runaway motion.
    if !next.is_finite()
        || next.base_twist.linear.norm() > 50.0
        || next.base.position.norm() > 100.0
    {
        next.fault = true;
    }
    next
}

/// True when any sampled point of the base collision box penetrates the
/// ground-truth heightfield.
pub fn base_collision(state: &RobotState, params: &SimParams, map: &ElevationMap) -> bool {
    let [hx, hy, hz] = params.base_half_extents;
    let mut points = Vec::with_capacity(8 + 15);
    for &sx in &[-1.0, 1.0] {
        for &sy in &[-1.0, 1.0] {
            for &sz in &[-1.0, 1.0] {
                points.push(Vector3::new(sx * hx, sy * hy, sz * hz));
            }
        }
    }
    for i in 0..5 {
        for j in 0..3 {
            let x = -hx + 2.0 * hx * i as f64 / 4.0;
            let y = -hy + 2.0 * hy * j as f64 / 2.0;
            points.push(Vector3::new(x, y, -hz));
        }
    }
    points.iter().any(|local| {
        let p = state.base.position + state.base.orientation * local;
        let ground = map.sample_height(p.x, p.y, SampleMode::True).height;
        p.z < ground
    })
}

/// Header for the rollout state-snapshot CSV.
pub fn state_csv_header() -> String {
    let mut cols = vec![
        "time".into(),
        "base_x".into(),
        "base_y".into(),
        "base_z".into(),
        "quat_w".into(),
        "quat_x".into(),
        "quat_y".into(),
        "quat_z".into(),
        "vel_x".into(),
        "vel_y".into(),
        "vel_z".into(),
        "omega_x".into(),
        "omega_y".into(),
        "omega_z".into(),
    ];
    for j in 0..12 {
        cols.push(format!("q{j}"));
    }
    for j in 0..12 {
        cols.push(format!("qdot{j}"));
    }
    for leg in 0..4 {
        for axis in ["x", "y", "z"] {
            cols.push(format!("foot{leg}_{axis}"));
        }
    }
    for leg in 0..4 {
        for axis in ["x", "y", "z"] {
            cols.push(format!("force{leg}_{axis}"));
        }
    }
    cols.join(",")
}

/// One CSV row matching [`state_csv_header`].
pub fn state_csv_row(state: &RobotState) -> String {
    let q = state.base.orientation.quaternion();
    let mut f = vec![
        state.time,
        state.base.position.x,
        state.base.position.y,
        state.base.position.z,
        q.w,
        q.i,
        q.j,
        q.k,
        state.base_twist.linear.x,
        state.base_twist.linear.y,
        state.base_twist.linear.z,
        state.base_twist.angular.x,
        state.base_twist.angular.y,
        state.base_twist.angular.z,
    ];
    f.extend_from_slice(&state.q);
    f.extend_from_slice(&state.qdot);
    for leg in 0..4 {
        f.extend(state.foot_pos[leg].iter());
    }
    for leg in 0..4 {
        f.extend(state.contact_force[leg].iter());
    }
    f.iter().map(|v| format!("{v:.6}")).collect::<Vec<_>>().join(",")
}
