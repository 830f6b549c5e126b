//! Single-robot environment: episode schedule, disturbance events,
//! replanning, rewards, termination, and resets.
//!
//! A vectorized runner owns many of these; each instance carries its own
//! seeded RNG stream so parallel stepping stays reproducible.

use crate::config::{Config, TerrainMode};
use crate::geom::{Accel, Twist};
use crate::obs::{self, ObsNoise};
use crate::percept::ElevationMap;
use crate::planner::{
    self, Command, GaitSchedule, PlanSolution, ReplanEvents, ReplanMode, ReplanScheduler,
};
use crate::rewards::{self, FootholdLatch, RewardTerms};
use crate::sim::{self, Disturbances, Friction, RobotState};
use crate::terrain::{self, CurriculumState, TerrainFamily};
use crate::derive_seed;
use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Episode outcome, mutually exclusive.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Outcome {
    /// Walked from the spawn to the patch border.
    Success,
    /// Torso contact or simulation fault.
    Failed,
    /// Alive inside the patch at timeout.
    Stuck,
}

/// How reference twists are drawn.
#[derive(Clone, Copy, Debug)]
pub enum CommandScheme {
    /// The three training populations: heading-only, lateral-only, mixed;
    /// yaw rate always uniform.
    Populations,
    /// Heading velocity uniform in `[lo, hi]`, zero lateral and yaw.
    Heading { lo: f64, hi: f64 },
}

/// Per-leg friction assignment.
#[derive(Clone, Copy, Debug)]
pub enum FrictionScheme {
    Uniform { lo: f64, hi: f64 },
    Fixed(f64),
}

/// Evaluation-variant switches layered over the base config.
#[derive(Clone, Debug)]
pub struct EnvSetup {
    pub replan_mode: ReplanMode,
    pub command_scheme: CommandScheme,
    pub friction_scheme: FrictionScheme,
    pub resample_commands: bool,
    pub pushes: bool,
    pub push_time: f64,
    pub push_amplitude: f64,
    pub wrench: bool,
    pub foot_forces: bool,
    pub map_noise: bool,
    /// Constant map-wide drift; the policy-facing overlay always sees it.
    pub eval_drift: f64,
    /// Whether the planner consumes the drifted map (evaluation sweeps only).
    pub planner_sees_drift: bool,
    /// Pin every environment to one difficulty level and freeze the
    /// curriculum (evaluation sweeps).
    pub fixed_level: Option<u8>,
}

impl EnvSetup {
    /// Training behavior from the config's randomization switches.
    pub fn training(cfg: &Config) -> Self {
        Self {
            replan_mode: ReplanMode::TouchdownAndEvents,
            command_scheme: CommandScheme::Populations,
            friction_scheme: FrictionScheme::Uniform {
                lo: cfg.env.friction_min,
                hi: cfg.env.friction_max,
            },
            resample_commands: true,
            pushes: cfg.env.randomize,
            push_time: cfg.env.push_time,
            push_amplitude: cfg.env.push_amplitude,
            wrench: cfg.env.randomize,
            foot_forces: cfg.env.randomize,
            map_noise: cfg.env.randomize,
            eval_drift: 0.0,
            planner_sees_drift: false,
            fixed_level: None,
        }
    }
}

/// Reference twist for one population of the three-population scheme.
pub fn resample_commands<R: Rng>(rng: &mut R, population: usize) -> Command {
    assert!(population < 3, "population index out of range");
    let yaw_rate = rng.gen_range(-0.8..0.8);
    let (vx, vy) = match population {
        0 => (rng.gen_range(-1.0..1.0), 0.0),
        1 => (0.0, rng.gen_range(-0.8..0.8)),
        _ => (rng.gen_range(-1.0..1.0), rng.gen_range(-0.8..0.8)),
    };
    Command { vx, vy, yaw_rate }
}

/// Everything returned by one environment step.
#[derive(Clone, Debug)]
pub struct StepResult {
    pub policy_obs: Vec<f64>,
    pub privileged_obs: Vec<f64>,
    pub reward: f64,
    pub done: bool,
    /// Done because of the episode timeout rather than a terminal event.
    pub timeout: bool,
    pub terms: RewardTerms,
    /// Outcome of the episode that ended this step, if any.
    pub outcome: Option<Outcome>,
    /// Length (s) of the episode that ended this step, if any.
    pub episode_length: Option<f64>,
    /// Planar stance tracking errors completed this step (m).
    pub stance_errors: Vec<f64>,
    pub events: ReplanEvents,
}

/// One robot, its terrain, planner state, and episode bookkeeping.
pub struct Environment {
    pub cfg: Config,
    pub setup: EnvSetup,
    pub index: usize,
    pub curriculum: CurriculumState,
    rng: ChaCha8Rng,
    pub map: ElevationMap,
    pub state: RobotState,
    pub friction: Friction,
    pub disturbances: Disturbances,
    pub command: Command,
    pub schedule: GaitSchedule,
    pub replan: ReplanScheduler,
    pub sol: PlanSolution,
    prev_sol: Option<PlanSolution>,
    latch: FootholdLatch,
    nominal_q: [f64; 12],
    /// Foothold planned for each leg's most recent touch-down, frozen at
    /// the touch-down instant. Rewards and the tracking-error metric compare
    /// against this target; replans may re-label stance footholds afterward.
    touchdown_target: [Option<Vector3<f64>>; 4],
    prev_action: [f64; 12],
    prev_twist: Twist,
    prev_contact: [bool; 4],
    spawn: Vector3<f64>,
    pushed: bool,
    commands_fired: usize,
    noise_events: usize,
    /// Per-leg minimum planar foot-to-foothold distance in the current
    /// stance phase.
    stance_min: [Option<f64>; 4],
    episode_steps: usize,
}

impl Environment {
    pub fn new(cfg: Config, setup: EnvSetup, index: usize, master_seed: u64) -> Self {
        let rng = ChaCha8Rng::seed_from_u64(derive_seed(master_seed, index as u64));
        let family = TerrainFamily::ALL[index % 12];
        let level = setup.fixed_level.unwrap_or(0);
        let curriculum = CurriculumState { family, level };
        let initial_state =
            RobotState::standing(&cfg.sim, Vector3::new(0.0, 0.0, cfg.sim.nominal_height), 0.0);
        let nominal_q = cfg.sim.nominal_q();
        let mut env = Self {
            cfg,
            setup,
            index,
            curriculum,
            rng,
            map: ElevationMap::new(terrain::flat_patch()),
            state: initial_state,
            friction: Friction::default(),
            disturbances: Disturbances::default(),
            command: Command::default(),
            schedule: GaitSchedule::default(),
            replan: ReplanScheduler::new(ReplanMode::TouchdownAndEvents),
            sol: placeholder_solution(),
            prev_sol: None,
            latch: FootholdLatch::default(),
            nominal_q,
            touchdown_target: [None; 4],
            prev_action: [0.0; 12],
            prev_twist: Twist::zero(),
            prev_contact: [false; 4],
            spawn: Vector3::zeros(),
            pushed: false,
            commands_fired: 0,
            noise_events: 0,
            stance_min: [None; 4],
            episode_steps: 0,
        };
        env.reset();
        env
    }

    /// Starts a fresh episode on this environment's current curriculum cell.
    pub fn reset(&mut self) {
        let params = self.cfg.sim.clone();
        // Terrain.
        let raster = match self.cfg.env.terrain {
            TerrainMode::Flat => terrain::flat_patch(),
            TerrainMode::Curriculum => {
                let variant = self.rng.gen::<u64>();
                terrain::generate_patch(self.curriculum.family, self.curriculum.level, variant)
                    .raster
            }
        };
        self.map = ElevationMap::new(raster);
        self.map.eval_drift = self.setup.eval_drift;
        if self.setup.map_noise {
            self.map.resample_noise(&mut self.rng, 0.0);
        }

        // Robot at the patch center.
        let ground = self.map.sample_height(0.0, 0.0, crate::percept::SampleMode::True).height;
        self.spawn = Vector3::new(0.0, 0.0, ground + params.nominal_height);
        self.state = RobotState::standing(&params, self.spawn, 0.0);
        self.prev_twist = Twist::zero();

        // Per-episode randomization.
        self.friction = match self.setup.friction_scheme {
            FrictionScheme::Fixed(mu) => Friction([mu; 4]),
            FrictionScheme::Uniform { lo, hi } => {
                let mut f = [0.0; 4];
                for v in f.iter_mut() {
                    *v = self.rng.gen_range(lo..hi);
                }
                Friction(f)
            }
        };
        self.disturbances = Disturbances::default();
        if self.setup.wrench {
            let a = self.cfg.env.wrench_amplitude;
            self.disturbances.wrench_force =
                Vector3::from_fn(|_, _| self.rng.gen_range(-a..a));
            self.disturbances.wrench_torque =
                Vector3::from_fn(|_, _| self.rng.gen_range(-a..a));
        }
        if self.setup.foot_forces {
            let a = self.cfg.env.foot_force_amplitude;
            for leg in 0..4 {
                self.disturbances.foot_force[leg] =
                    Vector3::from_fn(|_, _| self.rng.gen_range(-a..a));
            }
        }
        self.command = self.draw_command();

        // Fresh plan.
        self.replan = ReplanScheduler::new(self.setup.replan_mode);
        self.sol = planner::optimize(
            &self.state,
            &self.map,
            self.setup.planner_sees_drift,
            &self.command,
            &self.schedule,
            &params,
            &self.cfg.planner,
            0.0,
        );
        self.replan.mark_solved(0.0);
        self.prev_sol = None;
        self.latch = FootholdLatch::default();
        self.touchdown_target = [None; 4];
        self.prev_action = [0.0; 12];
        self.prev_contact =
            planner::gait_query(&self.schedule, 0.0).map(|p| p.desired_contact);
        self.pushed = false;
        self.commands_fired = 0;
        self.noise_events = 0;
        self.stance_min = [None; 4];
        self.episode_steps = 0;
    }

    fn draw_command(&mut self) -> Command {
        match self.setup.command_scheme {
            CommandScheme::Populations => resample_commands(&mut self.rng, self.index % 3),
            CommandScheme::Heading { lo, hi } => {
                Command { vx: self.rng.gen_range(lo..hi), vy: 0.0, yaw_rate: 0.0 }
            }
        }
    }

    /// Builds the policy observation for the current state.
    pub fn policy_obs(&mut self) -> Vec<f64> {
        let mut rng = self.rng.clone();
        let obs = obs::build_policy_obs(
            &self.state,
            &self.sol,
            &self.schedule,
            &self.map,
            &self.cfg.sim,
            &self.command,
            &self.prev_action,
            &self.obs_noise(),
            self.state.time,
            &mut rng,
        );
        self.rng = rng;
        obs
    }

    fn obs_noise(&self) -> ObsNoise {
        if self.setup.map_noise {
            self.cfg.obs_noise.clone()
        } else {
            ObsNoise::zero()
        }
    }

    fn privileged_obs(&self, consistency: f64) -> Vec<f64> {
        let mut drift = [0.0; 4];
        for (leg, d) in drift.iter_mut().enumerate() {
            *d = self.map.noise.total_drift(leg) + self.map.eval_drift;
        }
        obs::build_privileged_obs(
            &self.state,
            &self.sol,
            &self.disturbances,
            &self.friction,
            &drift,
            consistency,
            self.state.time,
        )
    }

    /// Advances one policy step under the given action.
    pub fn step(&mut self, action: &[f64; 12]) -> StepResult {
        let params = self.cfg.sim.clone();
        let mut targets = [0.0; 12];
        for j in 0..12 {
            targets[j] = (self.nominal_q[j] + self.cfg.env.action_scale * action[j])
                .clamp(params.joint_lower[j % 3], params.joint_upper[j % 3]);
        }

        for _ in 0..self.cfg.env.sim_substeps {
            self.state = sim::step(
                &self.state,
                &targets,
                &params,
                &self.friction,
                &mut self.disturbances,
                &self.map,
            );
            if self.state.fault {
                break;
            }
        }
        self.episode_steps += 1;
        let t = self.state.time;

        // Scheduled events.
        let mut events = ReplanEvents::default();
        if self.setup.pushes && !self.pushed && t >= self.setup.push_time - 1e-9 {
            let a = self.setup.push_amplitude;
            let push = Twist::new(Vector3::from_fn(|_, _| self.rng.gen_range(-a..a)), Vector3::zeros());
            self.disturbances.pending_push = Some(push);
            self.pushed = true;
            events.push = true;
        }
        if self.commands_fired < self.cfg.env.command_resample_times.len()
            && t >= self.cfg.env.command_resample_times[self.commands_fired] - 1e-9
        {
            self.commands_fired += 1;
            if self.setup.resample_commands {
                self.command = self.draw_command();
                events.command_change = true;
            }
        }
        if self.setup.map_noise {
            let due = (self.noise_events + 1) as f64 * self.cfg.env.noise_resample_interval;
            if t >= due - 1e-9 {
                self.noise_events += 1;
                self.map.resample_noise(&mut self.rng, t);
            }
        }

        // Touch-down detection against the schedule. At each touch-down the
        // leg's planned foothold is frozen as its tracking target (replans
        // re-label stance footholds to the measured feet afterward), the
        // reward latch is reset, and lift-off closes the stance tracking
        // window.
        let phases = planner::gait_query(&self.schedule, t);
        let mut stance_errors = Vec::new();
        for leg in 0..4 {
            let now = phases[leg].desired_contact;
            if now && !self.prev_contact[leg] {
                events.touchdown = true;
                self.touchdown_target[leg] = Some(self.sol.footholds[leg]);
                self.latch.reset_leg(leg);
            }
            if !now && self.prev_contact[leg] {
                self.touchdown_target[leg] = None;
                if let Some(err) = self.stance_min[leg].take() {
                    stance_errors.push(err);
                }
            }
            self.prev_contact[leg] = now;
        }

        // Replanning.
        if self.replan.should_replan(t, &events) {
            self.prev_sol = Some(self.sol.clone());
            self.sol = planner::optimize(
                &self.state,
                &self.map,
                self.setup.planner_sees_drift,
                &self.command,
                &self.schedule,
                &params,
                &self.cfg.planner,
                t,
            );
            self.replan.mark_solved(t);
        }

        // Rewards: desired state extracted one policy step ahead.
        let desired = planner::eval_base(&self.sol, t + self.cfg.env.policy_dt);
        let dt = self.cfg.env.policy_dt;
        let measured_accel = Accel::new(
            (self.state.base_twist.linear - self.prev_twist.linear) / dt,
            (self.state.base_twist.angular - self.prev_twist.angular) / dt,
        );
        self.prev_twist = self.state.base_twist;

        let mut terms = RewardTerms {
            tracking: rewards::base_tracking(
                (&desired.pose, &desired.twist, &desired.accel),
                (&self.state.base, &self.state.base_twist, &measured_accel),
                &self.cfg.rewards,
            ),
            ..Default::default()
        };
        for leg in 0..4 {
            let Some(target) = self.touchdown_target[leg] else { continue };
            terms.foothold += rewards::foothold(
                &target,
                &self.state.foot_pos[leg],
                &self.state.contact_force[leg],
                phases[leg].desired_contact,
                &mut self.latch,
                leg,
                &self.cfg.rewards,
            );
            // Planar tracking error metric over the stance phase.
            if phases[leg].desired_contact && self.state.contact_force[leg].norm() > 1.0 {
                let d = self.state.foot_pos[leg] - target;
                let planar = (d.x * d.x + d.y * d.y).sqrt();
                let slot = &mut self.stance_min[leg];
                *slot = Some(slot.map_or(planar, |m| m.min(planar)));
            }
        }
        terms.consistency = match &self.prev_sol {
            Some(prev) => rewards::consistency(
                &self.sol,
                t - self.sol.t0,
                prev,
                t - prev.t0,
                &self.cfg.rewards,
            ),
            None => 0.0,
        };
        terms.regularizers = rewards::regularizers(
            &self.state.foot_vel,
            &self.state.contact_force,
            &self.state.qdot,
            &self.state.joint_torque,
            action,
            &self.prev_action,
            &self.state.qddot_last,
        );
        let reward = rewards::total_reward(&terms, &self.cfg.rewards);
        self.prev_action = *action;

        // Termination.
        let displacement = {
            let d = self.state.base.position - self.spawn;
            d.x.abs().max(d.y.abs())
        };
        let faulted = self.state.fault;
        let collided = faulted || sim::base_collision(&self.state, &params, &self.map);
        let reached = displacement >= self.cfg.env.border_radius;
        let timeout = t >= self.cfg.env.episode_length - 1e-9;
        let done = collided || reached || timeout;
        let outcome = if collided {
            Some(Outcome::Failed)
        } else if reached {
            Some(Outcome::Success)
        } else if timeout {
            Some(Outcome::Stuck)
        } else {
            None
        };

        let mut episode_length = None;
        if done {
            // Flush any open stance windows into the metric.
            for leg in 0..4 {
                if let Some(err) = self.stance_min[leg].take() {
                    stance_errors.push(err);
                }
            }
            episode_length = Some(t);
            let fraction = (displacement / self.cfg.env.border_radius).clamp(0.0, 1.0);
            if self.cfg.env.terrain == TerrainMode::Curriculum && self.setup.fixed_level.is_none()
            {
                self.curriculum = terrain::curriculum_update(
                    self.curriculum,
                    terrain::AgentResult { reached_border: reached, traversed_fraction: fraction },
                );
            }
            events.fall = collided;
            self.reset();
        }

        let reward = if faulted { 0.0 } else { reward };
        let privileged_obs = self.privileged_obs(terms.consistency);
        let policy_obs = self.policy_obs();
        StepResult {
            policy_obs,
            privileged_obs,
            reward,
            done,
            timeout: timeout && !collided && !reached,
            terms,
            outcome,
            episode_length,
            stance_errors,
            events,
        }
    }
}

/// Minimal valid solution used before the first reset completes.
fn placeholder_solution() -> PlanSolution {
    let params = crate::sim::SimParams::default();
    let map = ElevationMap::new(terrain::flat_patch());
    let state = RobotState::standing(&params, Vector3::new(0.0, 0.0, 0.5), 0.0);
    planner::optimize(
        &state,
        &map,
        false,
        &Command::default(),
        &GaitSchedule::default(),
        &params,
        &crate::planner::PlannerConfig::default(),
        0.0,
    )
}
