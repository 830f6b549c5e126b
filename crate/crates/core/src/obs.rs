//! Policy and privileged observation construction plus running
//! normalization.
//!
//! The policy vector is 116-dimensional, the privileged vector 46; both are
//! expressed in the robot-centric base frame. The policy side carries
//! uniform per-step noise and the drift-coupled perturbation of the desired
//! joint positions; the privileged side is ground truth and is only ever
//! consumed by the value function.

use crate::percept::ElevationMap;
use crate::planner::{self, Command, GaitSchedule, PlanSolution};
use crate::sim::{Disturbances, Friction, RobotState, SimParams};
use nalgebra::Vector3;
use rand::Rng;

pub const POLICY_OBS_DIM: usize = 116;
pub const PRIVILEGED_OBS_DIM: usize = 46;
/// Policy step used when extracting the desired base state (s).
pub const POLICY_DT: f64 = 0.02;

/// Uniform noise amplitudes of the policy observation rows. Rows without an
/// entry in the reference table carry zero noise.
#[derive(Clone, Debug, serde::Serialize, serde::Deserialize)]
#[serde(default)]
pub struct ObsNoise {
    pub gravity: f64,
    pub joint_pos: f64,
    pub joint_vel: f64,
    pub footholds: f64,
}

impl Default for ObsNoise {
    fn default() -> Self {
        Self { gravity: 0.05, joint_pos: 0.01, joint_vel: 1.5, footholds: 0.05 }
    }
}

impl ObsNoise {
    pub fn zero() -> Self {
        Self { gravity: 0.0, joint_pos: 0.0, joint_vel: 0.0, footholds: 0.0 }
    }
}

fn uniform<R: Rng>(rng: &mut R, amp: f64) -> f64 {
    if amp > 0.0 {
        rng.gen_range(-amp..amp)
    } else {
        0.0
    }
}

/// Builds the 116-dim policy observation.
///
/// Only measurement-side inputs appear here; disturbances, friction, and the
/// desired base trajectory never enter. The height scan and the desired
/// joint positions are the drift-bearing channels.
#[allow(clippy::too_many_arguments)]
pub fn build_policy_obs<R: Rng>(
    state: &RobotState,
    sol: &PlanSolution,
    schedule: &GaitSchedule,
    map: &ElevationMap,
    params: &SimParams,
    command: &Command,
    prev_action: &[f64; 12],
    noise: &ObsNoise,
    t: f64,
    rng: &mut R,
) -> Vec<f64> {
    let mut obs = Vec::with_capacity(POLICY_OBS_DIM);
    let rot_inv = state.base.orientation.inverse();

    // Base twist (6), noise-free per the table.
    let lin = rot_inv * state.base_twist.linear;
    let ang = rot_inv * state.base_twist.angular;
    obs.extend(lin.iter());
    obs.extend(ang.iter());

    // Gravity direction (3).
    let gravity = rot_inv * Vector3::new(0.0, 0.0, -1.0);
    for g in gravity.iter() {
        obs.push(g + uniform(rng, noise.gravity));
    }

    // Joint positions (12) and velocities (12).
    for q in state.q.iter() {
        obs.push(q + uniform(rng, noise.joint_pos));
    }
    for qd in state.qdot.iter() {
        obs.push(qd + uniform(rng, noise.joint_vel));
    }

    // Previous actions (12).
    obs.extend_from_slice(prev_action);

    // Planar footholds (8): xy of the foothold relative to the base.
    for leg in 0..4 {
        let rel = rot_inv * (sol.footholds[leg] - state.base.position);
        obs.push(rel.x + uniform(rng, noise.footholds));
        obs.push(rel.y + uniform(rng, noise.footholds));
    }

    // Desired joint positions (12), perturbed proportionally to the drift of
    // the owning foot.
    let (q_des, _) = planner::desired_joints(sol, state, schedule, params, t);
    for leg in 0..4 {
        let bound = 2.0 * map.noise.total_drift(leg).abs();
        for j in 0..3 {
            obs.push(q_des[leg * 3 + j] + uniform(rng, bound));
        }
    }

    // Desired contact state (4) and time left in phase (4).
    let phases = planner::gait_query(schedule, t);
    for p in &phases {
        obs.push(if p.desired_contact { 1.0 } else { 0.0 });
    }
    for p in &phases {
        obs.push(p.time_left);
    }

    // Reference twist (3), already body-frame.
    obs.push(command.vx);
    obs.push(command.vy);
    obs.push(command.yaw_rate);

    // Height scan (40): ten samples per leg along the foot-to-foothold line,
    // drift- and noise-bearing, relative to the base height.
    for leg in 0..4 {
        let foot = state.foot_pos[leg];
        let hold = sol.footholds[leg];
        let scan = map.height_scan((foot.x, foot.y), (hold.x, hold.y), leg);
        for h in scan {
            obs.push(h - state.base.position.z);
        }
    }

    debug_assert_eq!(obs.len(), POLICY_OBS_DIM);
    obs
}

/// Builds the 46-dim privileged observation (ground truth, critic only).
///
/// The desired base twist row packs twist and acceleration to fill its
/// twelve slots.
#[allow(clippy::too_many_arguments)]
pub fn build_privileged_obs(
    state: &RobotState,
    sol: &PlanSolution,
    disturbances: &Disturbances,
    friction: &Friction,
    drift: &[f64; 4],
    consistency_reward: f64,
    t: f64,
) -> Vec<f64> {
    let mut obs = Vec::with_capacity(PRIVILEGED_OBS_DIM);
    let rot_inv = state.base.orientation.inverse();
    let desired = planner::eval_base(sol, t + POLICY_DT);

    // Desired base position (3) relative to the base, and quaternion (4)
    // relative to the base orientation.
    let rel_pos = rot_inv * (desired.pose.position - state.base.position);
    obs.extend(rel_pos.iter());
    let rel_quat = (state.base.orientation.inverse() * desired.pose.orientation).into_inner();
    obs.push(rel_quat.w);
    obs.push(rel_quat.i);
    obs.push(rel_quat.j);
    obs.push(rel_quat.k);

    // Desired base twist and acceleration (12).
    let lin = rot_inv * desired.twist.linear;
    let ang = rot_inv * desired.twist.angular;
    let lin_acc = rot_inv * desired.accel.linear;
    let ang_acc = rot_inv * desired.accel.angular;
    obs.extend(lin.iter());
    obs.extend(ang.iter());
    obs.extend(lin_acc.iter());
    obs.extend(ang_acc.iter());

    // Consistency reward (1).
    obs.push(consistency_reward);

    // External base wrench (6) and external foot forces (12).
    let wf = rot_inv * disturbances.wrench_force;
    let wt = rot_inv * disturbances.wrench_torque;
    obs.extend(wf.iter());
    obs.extend(wt.iter());
    for leg in 0..4 {
        let f = rot_inv * disturbances.foot_force[leg];
        obs.extend(f.iter());
    }

    // Friction coefficients (4) and per-foot height drift (4).
    obs.extend_from_slice(&friction.0);
    obs.extend_from_slice(drift);

    debug_assert_eq!(obs.len(), PRIVILEGED_OBS_DIM);
    obs
}

/// Per-channel running mean/variance (Welford) with batched updates.
#[derive(Clone, Debug)]
pub struct RunningNormalizer {
    pub mean: Vec<f64>,
    m2: Vec<f64>,
    pub count: f64,
}

impl RunningNormalizer {
    pub fn new(dim: usize) -> Self {
        Self { mean: vec![0.0; dim], m2: vec![0.0; dim], count: 0.0 }
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn variance(&self, channel: usize) -> f64 {
        if self.count > 0.0 {
            self.m2[channel] / self.count
        } else {
            1.0
        }
    }

    /// Folds a batch of observation vectors into the running statistics.
    pub fn update<'a, I: IntoIterator<Item = &'a [f64]>>(&mut self, batch: I) {
        for sample in batch {
            assert_eq!(sample.len(), self.mean.len(), "normalizer dimension mismatch");
            self.count += 1.0;
            for (c, &x) in sample.iter().enumerate() {
                let delta = x - self.mean[c];
                self.mean[c] += delta / self.count;
                self.m2[c] += delta * (x - self.mean[c]);
            }
        }
    }

    /// `(x - mean) / sqrt(var + 1e-8)` per channel.
    pub fn normalize(&self, vec: &[f64]) -> Vec<f64> {
        assert_eq!(vec.len(), self.mean.len(), "normalizer dimension mismatch");
        vec.iter()
            .enumerate()
            .map(|(c, &x)| (x - self.mean[c]) / (self.variance(c) + 1e-8).sqrt())
            .collect()
    }

    /// Raw state for checkpointing: mean, m2, count.
    pub fn raw(&self) -> (Vec<f64>, Vec<f64>, f64) {
        (self.mean.clone(), self.m2.clone(), self.count)
    }

    pub fn from_raw(mean: Vec<f64>, m2: Vec<f64>, count: f64) -> Self {
        assert_eq!(mean.len(), m2.len());
        Self { mean, m2, count }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::percept::ElevationMap;
    use crate::planner::{optimize, PlannerConfig};
    use crate::terrain;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    struct Fixture {
        state: RobotState,
        sol: PlanSolution,
        map: ElevationMap,
        params: SimParams,
        schedule: GaitSchedule,
        command: Command,
    }

    fn fixture() -> Fixture {
        let params = SimParams::default();
        let schedule = GaitSchedule::default();
        let map = ElevationMap::new(terrain::flat_patch());
        let state =
            RobotState::standing(&params, Vector3::new(0.0, 0.0, params.nominal_height), 0.0);
        let command = Command { vx: 0.3, vy: 0.0, yaw_rate: 0.1 };
        let sol = optimize(
            &state,
            &map,
            false,
            &command,
            &schedule,
            &params,
            &PlannerConfig::default(),
            0.0,
        );
        Fixture { state, sol, map, params, schedule, command }
    }

    fn policy(f: &Fixture, noise: &ObsNoise, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        build_policy_obs(
            &f.state,
            &f.sol,
            &f.schedule,
            &f.map,
            &f.params,
            &f.command,
            &[0.0; 12],
            noise,
            0.0,
            &mut rng,
        )
    }

    #[test]
    fn observation_dimensions() {
        let f = fixture();
        let obs = policy(&f, &ObsNoise::default(), 1);
        assert_eq!(obs.len(), POLICY_OBS_DIM);
        let privileged = build_privileged_obs(
            &f.state,
            &f.sol,
            &Disturbances::default(),
            &Friction::default(),
            &[0.0; 4],
            0.0,
            0.0,
        );
        assert_eq!(privileged.len(), PRIVILEGED_OBS_DIM);
        // Height scan occupies the trailing 40 entries.
        assert_eq!(POLICY_OBS_DIM - (6 + 3 + 12 + 12 + 12 + 8 + 12 + 4 + 4 + 3), 40);
    }

    #[test]
    fn zero_noise_build_is_deterministic() {
        let f = fixture();
        let a = policy(&f, &ObsNoise::zero(), 1);
        let b = policy(&f, &ObsNoise::zero(), 999);
        assert_eq!(a, b);
        assert!(a.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn zero_drift_leaves_desired_joints_unperturbed() {
        let f = fixture();
        // With zero drift the q_n interval is degenerate; two different rng
        // seeds must produce identical desired-joint entries even with the
        // other noise rows active.
        let a = policy(&f, &ObsNoise::zero(), 5);
        let b = policy(&f, &ObsNoise::zero(), 6);
        let start = 6 + 3 + 12 + 12 + 12 + 8;
        assert_eq!(a[start..start + 12], b[start..start + 12]);
    }

    #[test]
    fn foothold_noise_stays_within_bound() {
        let f = fixture();
        let clean = policy(&f, &ObsNoise::zero(), 0);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let start = 6 + 3 + 12 + 12 + 12;
        let mut max_dev: f64 = 0.0;
        // 1e6 perturbation draws across repeated builds.
        for _ in 0..125_000 {
            let noisy = build_policy_obs(
                &f.state,
                &f.sol,
                &f.schedule,
                &f.map,
                &f.params,
                &f.command,
                &[0.0; 12],
                &ObsNoise { footholds: 0.05, ..ObsNoise::zero() },
                0.0,
                &mut rng,
            );
            for k in 0..8 {
                max_dev = max_dev.max((noisy[start + k] - clean[start + k]).abs());
            }
        }
        assert!(max_dev <= 0.05, "foothold noise escaped its bound: {max_dev}");
        assert!(max_dev > 0.045, "noise suspiciously small: {max_dev}");
    }

    #[test]
    fn privileged_passthrough_slots() {
        let f = fixture();
        let consistency = -0.321;
        let obs = build_privileged_obs(
            &f.state,
            &f.sol,
            &Disturbances::default(),
            &Friction([1.0; 4]),
            &[0.0; 4],
            consistency,
            0.0,
        );
        // Consistency slot sits after position (3) + quat (4) + twist (12).
        assert_eq!(obs[19], consistency);
        // No disturbances: wrench and foot-force blocks are zero.
        assert!(obs[20..38].iter().all(|v| *v == 0.0));
        // Friction block all ones, drift block zero.
        assert!(obs[38..42].iter().all(|v| *v == 1.0));
        assert!(obs[42..46].iter().all(|v| *v == 0.0));
    }

    #[test]
    fn privileged_desired_pose_matches_eval_base() {
        let f = fixture();
        let obs = build_privileged_obs(
            &f.state,
            &f.sol,
            &Disturbances::default(),
            &Friction::default(),
            &[0.0; 4],
            0.0,
            0.0,
        );
        let desired = planner::eval_base(&f.sol, POLICY_DT);
        let rel = f.state.base.orientation.inverse()
            * (desired.pose.position - f.state.base.position);
        for i in 0..3 {
            assert!((obs[i] - rel[i]).abs() < 1e-12);
        }
    }

    #[test]
    fn policy_obs_ignores_privileged_inputs() {
        let f = fixture();
        // Build twice with identical rng streams while the privileged inputs
        // change wildly; the policy observation must be bit-identical.
        let a = policy(&f, &ObsNoise::default(), 77);
        let mut disturbances = Disturbances {
            wrench_force: Vector3::new(15.0, -15.0, 7.0),
            wrench_torque: Vector3::new(3.0, 2.0, -1.0),
            ..Default::default()
        };
        disturbances.foot_force[2] = Vector3::new(2.0, -2.0, 1.0);
        let _privileged = build_privileged_obs(
            &f.state,
            &f.sol,
            &disturbances,
            &Friction([0.1, 0.4, 0.9, 1.2]),
            &[0.08; 4],
            -1.0,
            0.0,
        );
        let b = policy(&f, &ObsNoise::default(), 77);
        assert_eq!(a, b);
    }

    #[test]
    fn normalizer_constant_channel_maps_to_zero() {
        let mut norm = RunningNormalizer::new(2);
        let batch: Vec<Vec<f64>> = (0..100).map(|i| vec![4.2, i as f64]).collect();
        norm.update(batch.iter().map(|v| v.as_slice()));
        let out = norm.normalize(&[4.2, 50.0]);
        assert!(out[0].abs() < 1e-6);
    }

    #[test]
    fn normalizer_statistical_oracle() {
        use rand::Rng;
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let dim = 4;
        let mut norm = RunningNormalizer::new(dim);
        let n = 100_000;
        let mut batch = Vec::with_capacity(n);
        for _ in 0..n {
            let mut v = Vec::with_capacity(dim);
            for _ in 0..dim {
                // N(5, 2^2) via Box-Muller.
                let u1: f64 = rng.gen_range(1e-12..1.0);
                let u2: f64 = rng.gen_range(0.0..1.0);
                let z = (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos();
                v.push(5.0 + 2.0 * z);
            }
            batch.push(v);
        }
        norm.update(batch.iter().map(|v| v.as_slice()));
        let mut mean = vec![0.0; dim];
        let mut var = vec![0.0; dim];
        for v in &batch {
            let nv = norm.normalize(v);
            for c in 0..dim {
                mean[c] += nv[c];
                var[c] += nv[c] * nv[c];
            }
        }
        for c in 0..dim {
            let m = mean[c] / n as f64;
            let s = (var[c] / n as f64 - m * m).sqrt();
            assert!(m.abs() < 0.02, "channel {c} mean {m}");
            assert!((0.98..=1.02).contains(&s), "channel {c} std {s}");
        }
    }

    #[test]
    fn normalizer_empty_update_is_identity() {
        let mut norm = RunningNormalizer::new(3);
        norm.update(std::iter::empty());
        assert_eq!(norm.count, 0.0);
        let v = [1.0, -2.0, 3.0];
        let out = norm.normalize(&v);
        // Unit variance, zero mean before any data.
        for c in 0..3 {
            assert!((out[c] - v[c] / (1.0f64 + 1e-8).sqrt()).abs() < 1e-12);
        }
    }

    #[test]
    #[should_panic(expected = "dimension mismatch")]
    fn normalizer_rejects_wrong_dimension() {
        let norm = RunningNormalizer::new(3);
        norm.normalize(&[1.0, 2.0]);
    }
}
