//! Reward terms: exponential base tracking, the log foothold reward with its
//! once-per-cycle latch, the consistency term over consecutive plans, the
//! regularization penalties, and the weighted total.

use crate::geom::{accel_diff, pose_diff, twist_diff, Accel, Pose, Twist};
use crate::planner::PlanSolution;
use nalgebra::Vector3;

/// Weights and parameters of every reward term.
///
/// Tracking rows carry a sensitivity `sigma` and weight 1; the foothold and
/// consistency terms carry plain weights; regularization weights are negative
/// and multiply non-negative power/rate magnitudes.
#[derive(Clone, Debug, serde::Serialize, serde::Deserialize)]
#[serde(default)]
pub struct RewardWeights {
    pub sigma_position: f64,
    pub sigma_rotation: f64,
    pub sigma_lin_vel: f64,
    pub sigma_ang_vel: f64,
    pub sigma_lin_acc: f64,
    pub sigma_ang_acc: f64,
    pub w_foothold: f64,
    pub foothold_epsilon: f64,
    pub w_consistency: f64,
    /// Relative weight of the foothold distance inside the consistency term.
    pub w_consistency_footholds: f64,
    /// Base-trajectory grid spacing of the consistency term (s).
    pub consistency_dt: f64,
    pub w_foot_power: f64,
    pub w_joint_power: f64,
    pub w_action_rate: f64,
    pub w_joint_accel: f64,
}

impl Default for RewardWeights {
    fn default() -> Self {
        Self {
            sigma_position: 1200.0,
            sigma_rotation: 90.0,
            sigma_lin_vel: 10.0,
            sigma_ang_vel: 1.0,
            sigma_lin_acc: 0.05,
            sigma_ang_acc: 0.005,
            w_foothold: 6.0,
            foothold_epsilon: 1e-5,
            w_consistency: 20.0,
            w_consistency_footholds: 1.0,
            consistency_dt: 0.01,
            w_foot_power: -0.02,
            w_joint_power: -0.025,
            w_action_rate: -0.02,
            w_joint_accel: -1e-6,
        }
    }
}

/// Once-per-gait-cycle gate for the foothold reward; reset at each leg's
/// touch-down instant.
#[derive(Clone, Copy, Debug, Default)]
pub struct FootholdLatch {
    granted: [bool; 4],
}

impl FootholdLatch {
    /// Clears one leg's latch (call at its touch-down).
    pub fn reset_leg(&mut self, leg: usize) {
        self.granted[leg] = false;
    }

    pub fn is_set(&self, leg: usize) -> bool {
        self.granted[leg]
    }

    pub fn set(&mut self, leg: usize) {
        self.granted[leg] = true;
    }
}

/// The six base-tracking rewards: position, rotation, linear/angular
/// velocity, linear/angular acceleration, each `exp(-sigma * ||diff||^2)`.
pub fn base_tracking(
    desired: (&Pose, &Twist, &Accel),
    measured: (&Pose, &Twist, &Accel),
    w: &RewardWeights,
) -> [f64; 6] {
    let dp = pose_diff(desired.0, measured.0);
    let dv = twist_diff(desired.1, measured.1);
    let da = accel_diff(desired.2, measured.2);
    let pos = dp.fixed_rows::<3>(0).norm_squared();
    let rot = dp.fixed_rows::<3>(3).norm_squared();
    let lin_vel = dv.fixed_rows::<3>(0).norm_squared();
    let ang_vel = dv.fixed_rows::<3>(3).norm_squared();
    let lin_acc = da.fixed_rows::<3>(0).norm_squared();
    let ang_acc = da.fixed_rows::<3>(3).norm_squared();
    [
        (-w.sigma_position * pos).exp(),
        (-w.sigma_rotation * rot).exp(),
        (-w.sigma_lin_vel * lin_vel).exp(),
        (-w.sigma_ang_vel * ang_vel).exp(),
        (-w.sigma_lin_acc * lin_acc).exp(),
        (-w.sigma_ang_acc * ang_acc).exp(),
    ]
}

/// Foothold tracking reward for one leg: `-ln(||p* - p||^2 + eps)`, granted
/// only while contact is desired, the measured force indicates contact
/// (norm above 1 N), and the latch has not fired this cycle.
pub fn foothold(
    target: &Vector3<f64>,
    foot: &Vector3<f64>,
    contact_force: &Vector3<f64>,
    desired_contact: bool,
    latch: &mut FootholdLatch,
    leg: usize,
    w: &RewardWeights,
) -> f64 {
    if !desired_contact || contact_force.norm() <= 1.0 || latch.is_set(leg) {
        return 0.0;
    }
    latch.set(leg);
    -((target - foot).norm_squared() + w.foothold_epsilon).ln()
}

/// Consistency between the two most recent solutions, evaluated `elapsed_a`
/// and `elapsed_b` seconds after their respective solve times: the summed
/// base-pose distance over the overlapping horizon grid plus the stacked
/// foothold distance, both negated.
pub fn consistency(
    sol_a: &PlanSolution,
    elapsed_a: f64,
    sol_b: &PlanSolution,
    elapsed_b: f64,
    w: &RewardWeights,
) -> f64 {
    let dt = w.consistency_dt;
    let mut total = 0.0;
    let mut j = 0usize;
    loop {
        let ta = elapsed_a + dt * j as f64;
        let tb = elapsed_b + dt * j as f64;
        if ta > sol_a.horizon || tb > sol_b.horizon {
            break;
        }
        if ta >= 0.0 && tb >= 0.0 {
            let a = sol_a.eval_local(ta);
            let b = sol_b.eval_local(tb);
            total -= dt * pose_diff(&a.pose, &b.pose).norm();
        }
        j += 1;
    }
    let mut foothold_sq = 0.0;
    for leg in 0..4 {
        foothold_sq += (sol_a.footholds[leg] - sol_b.footholds[leg]).norm_squared();
    }
    total - w.w_consistency_footholds * foothold_sq.sqrt()
}

/// The four regularization penalties, all non-positive: foot power, joint
/// power, action rate, joint acceleration.
pub fn regularizers(
    foot_vel: &[Vector3<f64>; 4],
    contact_force: &[Vector3<f64>; 4],
    qdot: &[f64; 12],
    joint_torque: &[f64; 12],
    action: &[f64; 12],
    prev_action: &[f64; 12],
    qddot: &[f64; 12],
) -> [f64; 4] {
    let foot_power: f64 = (0..4).map(|i| foot_vel[i].dot(&contact_force[i]).abs()).sum();
    let joint_power: f64 = (0..4)
        .map(|leg| {
            let s: f64 =
                (0..3).map(|j| qdot[leg * 3 + j] * joint_torque[leg * 3 + j]).sum();
            s * s
        })
        .sum();
    let action_rate: f64 =
        (0..12).map(|j| (action[j] - prev_action[j]) * (action[j] - prev_action[j])).sum();
    let joint_accel: f64 = qddot.iter().map(|a| a * a).sum();
    [-foot_power, -joint_power, -action_rate, -joint_accel]
}

/// Per-step reward breakdown, in the order it is logged.
#[derive(Clone, Copy, Debug, Default)]
pub struct RewardTerms {
    pub tracking: [f64; 6],
    /// Sum of the granted per-leg foothold rewards this step.
    pub foothold: f64,
    pub consistency: f64,
    /// Non-positive penalties: foot power, joint power, action rate, joint
    /// acceleration.
    pub regularizers: [f64; 4],
}

/// Weighted total: tracking terms at weight 1, foothold and consistency at
/// their table weights, regularizer magnitudes at their negative weights.
pub fn total_reward(terms: &RewardTerms, w: &RewardWeights) -> f64 {
    let tracking: f64 = terms.tracking.iter().sum();
    let regs = terms.regularizers;
    tracking
        + w.w_foothold * terms.foothold
        + w.w_consistency * terms.consistency
        + w.w_foot_power * (-regs[0])
        + w.w_joint_power * (-regs[1])
        + w.w_action_rate * (-regs[2])
        + w.w_joint_accel * (-regs[3])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geom::{Accel, Pose, Twist};
    use crate::percept::ElevationMap;
    use crate::planner::{optimize, Command, GaitSchedule, PlannerConfig};
    use crate::sim::{RobotState, SimParams};
    use crate::terrain;
    use approx::assert_relative_eq;

    fn w() -> RewardWeights {
        RewardWeights::default()
    }

    fn zero_state() -> (Pose, Twist, Accel) {
        (Pose::identity(), Twist::zero(), Accel::zero())
    }

    #[test]
    fn perfect_tracking_scores_one_exactly() {
        let (p, t, a) = zero_state();
        let r = base_tracking((&p, &t, &a), (&p, &t, &a), &w());
        assert_eq!(r, [1.0; 6]);
    }

    #[test]
    fn velocity_error_matches_closed_form() {
        let (p, _, a) = zero_state();
        // lin-vel error^2 = 0.1 with sigma = 10 gives exp(-1).
        let desired = Twist::new(Vector3::new(0.1f64.sqrt(), 0.0, 0.0), Vector3::zeros());
        let measured = Twist::zero();
        let r = base_tracking((&p, &desired, &a), (&p, &measured, &a), &w());
        assert_relative_eq!(r[2], (-1.0f64).exp(), epsilon = 1e-12);
        assert_relative_eq!(r[2], 0.36788, epsilon = 1e-5);
    }

    #[test]
    fn position_error_matches_closed_form() {
        let (_, t, a) = zero_state();
        // position error^2 = 0.001 with sigma = 1200 gives exp(-1.2).
        let desired = Pose::new(Vector3::new(0.001f64.sqrt(), 0.0, 0.0), Default::default());
        let measured = Pose::identity();
        let r = base_tracking((&desired, &t, &a), (&measured, &t, &a), &w());
        assert_relative_eq!(r[0], (-1.2f64).exp(), epsilon = 1e-12);
        assert_relative_eq!(r[0], 0.30119, epsilon = 1e-5);
    }

    #[test]
    fn tracking_rewards_bounded_and_monotone() {
        let (p, t, a) = zero_state();
        let mut last = f64::INFINITY;
        for k in 0..20 {
            let err = 0.005 * k as f64;
            let desired = Pose::new(Vector3::new(err, 0.0, 0.0), Default::default());
            let r = base_tracking((&desired, &t, &a), (&p, &t, &a), &w());
            assert!(r[0] > 0.0 && r[0] <= 1.0);
            assert!(r[0] <= last);
            last = r[0];
        }
    }

    #[test]
    fn foothold_reward_values_and_latch() {
        let weights = w();
        let mut latch = FootholdLatch::default();
        let force = Vector3::new(0.0, 0.0, 50.0);

        // Zero error: -ln(1e-5).
        let p = Vector3::new(0.2, 0.1, 0.0);
        let r = foothold(&p, &p, &force, true, &mut latch, 0, &weights);
        assert_relative_eq!(r, -(1e-5f64).ln(), epsilon = 1e-12);
        assert_relative_eq!(r, 11.512925, epsilon = 1e-6);

        // Second grant in the same cycle is suppressed.
        let again = foothold(&p, &p, &force, true, &mut latch, 0, &weights);
        assert_eq!(again, 0.0);

        // After the touch-down reset it fires again.
        latch.reset_leg(0);
        let r2 = foothold(&p, &p, &force, true, &mut latch, 0, &weights);
        assert!(r2 > 0.0);

        // 0.1 m error: -ln(0.01 + 1e-5).
        let mut latch = FootholdLatch::default();
        let foot = p + Vector3::new(0.1, 0.0, 0.0);
        let r = foothold(&p, &foot, &force, true, &mut latch, 1, &weights);
        assert_relative_eq!(r, -(0.01001f64).ln(), epsilon = 1e-9);
        assert_relative_eq!(r, 4.6042, epsilon = 1e-4);

        // No force, no reward.
        let mut latch = FootholdLatch::default();
        let weak = Vector3::new(0.0, 0.0, 0.5);
        assert_eq!(foothold(&p, &p, &weak, true, &mut latch, 2, &weights), 0.0);
        // Not desired contact, no reward.
        assert_eq!(foothold(&p, &p, &force, false, &mut latch, 2, &weights), 0.0);
    }

    fn flat_solution(t: f64, command: &Command) -> (PlanSolution, RobotState) {
        let params = SimParams::default();
        let cfg = PlannerConfig::default();
        let map = ElevationMap::new(terrain::flat_patch());
        let mut state =
            RobotState::standing(&params, Vector3::new(0.0, 0.0, params.nominal_height), 0.0);
        state.base_twist.linear = Vector3::new(command.vx, command.vy, 0.0);
        let sol = optimize(
            &state,
            &map,
            false,
            command,
            &GaitSchedule::default(),
            &params,
            &cfg,
            t,
        );
        (sol, state)
    }

    #[test]
    fn consistency_of_identical_solutions_is_zero() {
        let (sol, _) = flat_solution(0.0, &Command::default());
        let r = consistency(&sol, 0.1, &sol, 0.1, &w());
        assert_eq!(r, 0.0);
    }

    #[test]
    fn consistency_of_offset_trajectories_matches_closed_form() {
        let (sol_a, _) = flat_solution(0.0, &Command::default());
        let mut sol_b = sol_a.clone();
        // Constant offset d in x: shift the constant coefficient of both
        // segments of the x spline.
        let d = 0.07;
        sol_b.splines[0].coeffs[0][0] += d;
        sol_b.splines[0].coeffs[1][0] += d;
        let weights = w();
        let r = consistency(&sol_a, 0.0, &sol_b, 0.0, &weights);
        // Overlap grid: j = 0..=floor(horizon/dt), each contributing -dt*d.
        let n = (sol_a.horizon / weights.consistency_dt).floor() as usize + 1;
        let expected = -weights.consistency_dt * n as f64 * d;
        assert_relative_eq!(r, expected, epsilon = 1e-9);
    }

    #[test]
    fn consistency_foothold_shift_matches_norm() {
        let (sol_a, _) = flat_solution(0.0, &Command::default());
        let mut sol_b = sol_a.clone();
        sol_b.footholds[2].x += 0.1;
        let r = consistency(&sol_a, 0.2, &sol_b, 0.2, &w());
        assert_relative_eq!(r, -0.1, epsilon = 1e-9);
    }

    #[test]
    fn consistency_is_never_positive() {
        let (sol_a, _) = flat_solution(0.0, &Command { vx: 0.4, vy: 0.1, yaw_rate: 0.2 });
        let (sol_b, _) = flat_solution(0.465, &Command { vx: 0.4, vy: -0.1, yaw_rate: 0.0 });
        for &(ea, eb) in &[(0.0, 0.465), (0.1, 0.565), (0.93, 1.0)] {
            let r = consistency(&sol_a, ea, &sol_b, eb, &w());
            assert!(r <= 0.0, "consistency {r} at ({ea},{eb})");
        }
    }

    #[test]
    fn regularizers_zero_in_static_stance() {
        let r = regularizers(
            &[Vector3::zeros(); 4],
            &[Vector3::new(0.0, 0.0, 70.0); 4],
            &[0.0; 12],
            &[1.0; 12],
            &[0.1; 12],
            &[0.1; 12],
            &[0.0; 12],
        );
        assert_eq!(r, [0.0; 4]);
    }

    #[test]
    fn foot_power_matches_dot_product() {
        let mut vel = [Vector3::zeros(); 4];
        let mut force = [Vector3::zeros(); 4];
        vel[1] = Vector3::new(1.0, 0.0, 0.0);
        force[1] = Vector3::new(10.0, 0.0, 0.0);
        let r = regularizers(
            &vel,
            &force,
            &[0.0; 12],
            &[0.0; 12],
            &[0.0; 12],
            &[0.0; 12],
            &[0.0; 12],
        );
        assert_eq!(r[0], -10.0);
    }

    #[test]
    fn action_rate_matches_squared_norm() {
        let mut action = [0.0; 12];
        action[0] = 0.3;
        action[1] = 0.4; // norm 0.5
        let r = regularizers(
            &[Vector3::zeros(); 4],
            &[Vector3::zeros(); 4],
            &[0.0; 12],
            &[0.0; 12],
            &action,
            &[0.0; 12],
            &[0.0; 12],
        );
        assert_relative_eq!(r[2], -0.25, epsilon = 1e-12);
        assert!(r.iter().all(|v| *v <= 0.0));
    }

    #[test]
    fn total_reward_weighted_sums() {
        let weights = w();
        // All tracking perfect, nothing else.
        let terms = RewardTerms { tracking: [1.0; 6], ..Default::default() };
        assert_relative_eq!(total_reward(&terms, &weights), 6.0, epsilon = 1e-12);

        // One perfect foothold event on top.
        let terms = RewardTerms {
            tracking: [1.0; 6],
            foothold: -(1e-5f64).ln(),
            ..Default::default()
        };
        assert_relative_eq!(total_reward(&terms, &weights), 75.077, epsilon = 1e-3);

        // Zero everything.
        let terms = RewardTerms::default();
        assert_eq!(total_reward(&terms, &weights), 0.0);

        // Regularizer contributions are non-positive.
        let terms = RewardTerms {
            regularizers: [-3.0, -2.0, -0.5, -100.0],
            ..Default::default()
        };
        let total = total_reward(&terms, &weights);
        assert!(total < 0.0);
        assert_relative_eq!(
            total,
            -0.02 * 3.0 - 0.025 * 2.0 - 0.02 * 0.5 - 1e-6 * 100.0,
            epsilon = 1e-12
        );
    }
}
