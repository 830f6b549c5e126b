//! Evaluation sweeps (optimizer rate, terrain benchmark, map drift) and the
//! single-robot rollout exporter.
//!
//! All sweeps run robots in lockstep with deterministic (mean) actions and
//! frozen normalizers, one 20 s episode per robot, and classify each robot
//! as successful (reached the patch border), failed (torso contact), or
//! stuck (alive at timeout).

use crate::checkpoint::{snapshot_from_checkpoint, Checkpoint};
use crate::config::{Config, TerrainMode};
use crate::env::{CommandScheme, EnvSetup, Environment, FrictionScheme, Outcome};
use crate::metrics::format_cell;
use crate::obs::{RunningNormalizer, POLICY_OBS_DIM};
use crate::planner::ReplanMode;
use crate::rl::PpoLearner;
use crate::terrain::TerrainFamily;
use crate::{rewards, Result};
use ndarray::Array2;
use rayon::prelude::*;
use std::io::Write;
use std::path::Path;

/// Inference bundle loaded from a checkpoint.
pub struct LoadedPolicy {
    pub learner: PpoLearner<f32>,
    pub policy_norm: RunningNormalizer,
    pub priv_norm: RunningNormalizer,
}

pub fn load_policy(path: &Path, cfg: &Config) -> Result<LoadedPolicy> {
    let ck = Checkpoint::load(path)?;
    let snap = snapshot_from_checkpoint::<f32>(&ck, cfg.ppo.clone())?;
    Ok(LoadedPolicy {
        learner: snap.learner,
        policy_norm: snap.policy_norm,
        priv_norm: snap.priv_norm,
    })
}

/// Aggregate result of one sweep cell.
#[derive(Clone, Copy, Debug, Default)]
pub struct CellResult {
    pub success: f64,
    pub failed: f64,
    pub stuck: f64,
    /// Mean planar stance tracking error (m) over completed stance phases.
    pub tracking_err: f64,
    pub robots: usize,
}

impl CellResult {
    fn merge(cells: &[CellResult]) -> CellResult {
        let n = cells.len().max(1) as f64;
        CellResult {
            success: cells.iter().map(|c| c.success).sum::<f64>() / n,
            failed: cells.iter().map(|c| c.failed).sum::<f64>() / n,
            stuck: cells.iter().map(|c| c.stuck).sum::<f64>() / n,
            tracking_err: cells.iter().map(|c| c.tracking_err).sum::<f64>() / n,
            robots: cells.iter().map(|c| c.robots).sum(),
        }
    }
}

/// The 21-value drift sequence 0, 0.025, ..., 0.5 m.
pub fn drift_values() -> Vec<f64> {
    (0..21).map(|k| k as f64 * 0.025).collect()
}

/// Runs one lockstep episode over `robots` environments and classifies
/// outcomes. Also records per-family outcomes when requested.
fn run_cell(
    cfg: &Config,
    setup: &EnvSetup,
    policy: &LoadedPolicy,
    robots: usize,
    seed: u64,
) -> (CellResult, Vec<(TerrainFamily, Outcome)>) {
    let mut envs: Vec<Environment> =
        (0..robots).map(|i| Environment::new(cfg.clone(), setup.clone(), i, seed)).collect();
    let mut done = vec![false; robots];
    let mut outcomes = vec![Outcome::Stuck; robots];
    let mut errors: Vec<f64> = Vec::new();
    let mut current: Vec<Vec<f64>> = envs.iter_mut().map(|e| e.policy_obs()).collect();
    let steps = cfg.steps_per_episode();

    for _ in 0..steps {
        if done.iter().all(|d| *d) {
            break;
        }
        let mut batch = Array2::<f32>::zeros((POLICY_OBS_DIM, robots));
        for (i, obs) in current.iter().enumerate() {
            if done[i] {
                continue;
            }
            for (r, v) in policy.policy_norm.normalize(obs).iter().enumerate() {
                batch[(r, i)] = *v as f32;
            }
        }
        let actions = policy.learner.act_mean(&batch);
        let action_cols: Vec<[f64; 12]> = (0..robots)
            .map(|i| {
                let mut a = [0.0; 12];
                for j in 0..12 {
                    a[j] = actions[(j, i)] as f64;
                }
                a
            })
            .collect();
        let results: Vec<Option<crate::env::StepResult>> = envs
            .par_iter_mut()
            .enumerate()
            .map(|(i, env)| if done[i] { None } else { Some(env.step(&action_cols[i])) })
            .collect();
        for (i, result) in results.into_iter().enumerate() {
            let Some(r) = result else { continue };
            errors.extend_from_slice(&r.stance_errors);
            if r.done {
                done[i] = true;
                outcomes[i] = r.outcome.unwrap_or(Outcome::Stuck);
            } else {
                current[i] = r.policy_obs;
            }
        }
    }

    let frac = |o: Outcome| outcomes.iter().filter(|&&x| x == o).count() as f64 / robots as f64;
    let tracking_err = if errors.is_empty() {
        f64::NAN
    } else {
        errors.iter().sum::<f64>() / errors.len() as f64
    };
    let per_family: Vec<(TerrainFamily, Outcome)> = envs
        .iter()
        .zip(&outcomes)
        .map(|(env, out)| (env.curriculum.family, *out))
        .collect();
    (
        CellResult {
            success: frac(Outcome::Success),
            failed: frac(Outcome::Failed),
            stuck: frac(Outcome::Stuck),
            tracking_err,
            robots,
        },
        per_family,
    )
}

fn sweep_base_config(cfg: &Config) -> Config {
    let mut cfg = cfg.clone();
    cfg.env.terrain = TerrainMode::Curriculum;
    cfg
}

/// Optimizer-rate sweep: hardest terrain level, fixed-rate replanning, a
/// double-amplitude push at 5 s, heading commands, no noise or drift.
pub fn eval_rate_sweep(
    cfg: &Config,
    policy: &LoadedPolicy,
    rates: &[f64],
    seeds: &[u64],
    robots: usize,
) -> Vec<(f64, u64, CellResult)> {
    let cfg = sweep_base_config(cfg);
    let mut out = Vec::new();
    for &rate in rates {
        for &seed in seeds {
            let setup = EnvSetup {
                replan_mode: ReplanMode::FixedRate(rate),
                command_scheme: CommandScheme::Heading { lo: 0.8, hi: 0.95 },
                friction_scheme: FrictionScheme::Uniform {
                    lo: cfg.env.friction_min,
                    hi: cfg.env.friction_max,
                },
                resample_commands: true,
                pushes: true,
                push_time: 5.0,
                push_amplitude: 2.0,
                wrench: true,
                foot_forces: false,
                map_noise: false,
                eval_drift: 0.0,
                planner_sees_drift: false,
                fixed_level: Some(9),
            };
            let (cell, _) = run_cell(&cfg, &setup, policy, robots, seed);
            out.push((rate, seed, cell));
        }
    }
    out
}

/// Terrain benchmark: hardest level of every family, friction pinned to 1,
/// no pushes or command resampling.
pub fn eval_terrains(
    cfg: &Config,
    policy: &LoadedPolicy,
    seeds: &[u64],
    robots: usize,
) -> TerrainBenchmark {
    let cfg = sweep_base_config(cfg);
    let mut per_family: std::collections::BTreeMap<&'static str, Vec<Outcome>> =
        Default::default();
    let mut cells = Vec::new();
    for &seed in seeds {
        let setup = EnvSetup {
            replan_mode: ReplanMode::TouchdownAndEvents,
            command_scheme: CommandScheme::Heading { lo: 0.8, hi: 0.95 },
            friction_scheme: FrictionScheme::Fixed(1.0),
            resample_commands: false,
            pushes: false,
            push_time: f64::INFINITY,
            push_amplitude: 0.0,
            wrench: true,
            foot_forces: false,
            map_noise: false,
            eval_drift: 0.0,
            planner_sees_drift: false,
            fixed_level: Some(9),
        };
        let (cell, outcomes) = run_cell(&cfg, &setup, policy, robots, seed);
        cells.push(cell);
        for (family, outcome) in outcomes {
            per_family.entry(family.name()).or_default().push(outcome);
        }
    }

    let family_cell = |outcomes: &Vec<Outcome>| {
        let n = outcomes.len().max(1) as f64;
        let f = |o: Outcome| outcomes.iter().filter(|&&x| x == o).count() as f64 / n;
        CellResult {
            success: f(Outcome::Success),
            failed: f(Outcome::Failed),
            stuck: f(Outcome::Stuck),
            tracking_err: f64::NAN,
            robots: outcomes.len(),
        }
    };
    let families: Vec<(String, CellResult)> = TerrainFamily::ALL
        .iter()
        .map(|f| {
            let outcomes = per_family.get(f.name()).cloned().unwrap_or_default();
            (f.name().to_string(), family_cell(&outcomes))
        })
        .collect();
    let aggregate = |set: &[TerrainFamily]| {
        let member_cells: Vec<CellResult> = families
            .iter()
            .filter(|(name, _)| set.iter().any(|f| f.name() == name))
            .map(|(_, c)| *c)
            .collect();
        CellResult::merge(&member_cells)
    };
    TerrainBenchmark {
        overall: CellResult::merge(&cells),
        sparse: aggregate(&TerrainFamily::SPARSE),
        dense: aggregate(&TerrainFamily::DENSE),
        families,
    }
}

pub struct TerrainBenchmark {
    pub overall: CellResult,
    pub sparse: CellResult,
    pub dense: CellResult,
    pub families: Vec<(String, CellResult)>,
}

/// Drift sweep: the planner consumes the drift-perturbed map, unlike
/// training. `flat` replaces the terrain set with a horizontal plane.
pub fn eval_drift_sweep(
    cfg: &Config,
    policy: &LoadedPolicy,
    drifts: &[f64],
    flat: bool,
    seeds: &[u64],
    robots: usize,
) -> Vec<(f64, u64, CellResult)> {
    let mut cfg = cfg.clone();
    cfg.env.terrain = if flat { TerrainMode::Flat } else { TerrainMode::Curriculum };
    let mut out = Vec::new();
    for &drift in drifts {
        for &seed in seeds {
            let setup = EnvSetup {
                replan_mode: ReplanMode::TouchdownAndEvents,
                command_scheme: CommandScheme::Heading { lo: 0.8, hi: 0.95 },
                friction_scheme: FrictionScheme::Fixed(1.0),
                resample_commands: false,
                pushes: false,
                push_time: f64::INFINITY,
                push_amplitude: 0.0,
                wrench: true,
                foot_forces: false,
                map_noise: false,
                eval_drift: drift,
                planner_sees_drift: true,
                fixed_level: Some(9),
            };
            let (cell, _) = run_cell(&cfg, &setup, policy, robots, seed);
            out.push((drift, seed, cell));
        }
    }
    out
}

pub fn write_rate_csv(path: &Path, rows: &[(f64, u64, CellResult)]) -> Result<()> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(f, "rate_hz,seed,success,failed,stuck,tracking_err,robots")?;
    for (rate, seed, c) in rows {
        writeln!(
            f,
            "{},{},{},{},{},{},{}",
            format_cell(*rate),
            seed,
            format_cell(c.success),
            format_cell(c.failed),
            format_cell(c.stuck),
            format_cell(c.tracking_err),
            c.robots
        )?;
    }
    Ok(())
}

pub fn write_drift_csv(path: &Path, rows: &[(f64, u64, CellResult)]) -> Result<()> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(f, "drift_m,seed,success,failed,stuck,tracking_err,robots")?;
    for (drift, seed, c) in rows {
        writeln!(
            f,
            "{},{},{},{},{},{},{}",
            format_cell(*drift),
            seed,
            format_cell(c.success),
            format_cell(c.failed),
            format_cell(c.stuck),
            format_cell(c.tracking_err),
            c.robots
        )?;
    }
    Ok(())
}

pub fn write_terrain_csv(path: &Path, bench: &TerrainBenchmark) -> Result<()> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(f, "terrain,success,failed,stuck,robots")?;
    let mut row = |name: &str, c: &CellResult| -> Result<()> {
        writeln!(
            f,
            "{},{},{},{},{}",
            name,
            format_cell(c.success),
            format_cell(c.failed),
            format_cell(c.stuck),
            c.robots
        )?;
        Ok(())
    };
    for (name, cell) in &bench.families {
        row(name, cell)?;
    }
    row("sparse", &bench.sparse)?;
    row("dense", &bench.dense)?;
    row("overall", &bench.overall)?;
    Ok(())
}

/// Single-robot rollout with deterministic actions; exports the state
/// snapshot CSV, the plan CSV (one block per solve), and the per-step
/// reward breakdown.
pub fn run_rollout(
    cfg: &Config,
    policy: &LoadedPolicy,
    out_dir: &Path,
    seconds: f64,
    seed: u64,
) -> Result<()> {
    std::fs::create_dir_all(out_dir)?;
    let setup = EnvSetup::training(cfg);
    let mut env = Environment::new(cfg.clone(), setup, 0, seed);
    let mut states = std::io::BufWriter::new(std::fs::File::create(out_dir.join("states.csv"))?);
    writeln!(states, "{}", crate::sim::state_csv_header())?;
    let mut plans = std::io::BufWriter::new(std::fs::File::create(out_dir.join("plan.csv"))?);
    let mut rewards_csv =
        std::io::BufWriter::new(std::fs::File::create(out_dir.join("rewards.csv"))?);
    writeln!(
        rewards_csv,
        "time,r_pos,r_rot,r_linvel,r_angvel,r_linacc,r_angacc,foothold,consistency,foot_power,joint_power,action_rate,joint_accel,total"
    )?;

    plans.write_all(crate::planner::plan_csv(&env.sol, 20).as_bytes())?;
    let mut obs = env.policy_obs();
    let steps = (seconds / cfg.env.policy_dt).round() as usize;
    let mut last_solve = env.sol.t0;
    for _ in 0..steps {
        let mut batch = Array2::<f32>::zeros((POLICY_OBS_DIM, 1));
        for (r, v) in policy.policy_norm.normalize(&obs).iter().enumerate() {
            batch[(r, 0)] = *v as f32;
        }
        let actions = policy.learner.act_mean(&batch);
        let mut a = [0.0; 12];
        for j in 0..12 {
            a[j] = actions[(j, 0)] as f64;
        }
        let r = env.step(&a);
        writeln!(states, "{}", crate::sim::state_csv_row(&env.state))?;
        if env.sol.t0 != last_solve {
            plans.write_all(crate::planner::plan_csv(&env.sol, 20).as_bytes())?;
            last_solve = env.sol.t0;
        }
        let total = rewards::total_reward(&r.terms, &cfg.rewards);
        let cells: Vec<String> = [env.state.time]
            .iter()
            .chain(r.terms.tracking.iter())
            .chain([r.terms.foothold, r.terms.consistency].iter())
            .chain(r.terms.regularizers.iter())
            .chain([total].iter())
            .map(|v| format_cell(*v))
            .collect();
        writeln!(rewards_csv, "{}", cells.join(","))?;
        obs = r.policy_obs;
        if r.done {
            break;
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn drift_sequence_is_exact() {
        let d = drift_values();
        assert_eq!(d.len(), 21);
        assert_eq!(d[0], 0.0);
        assert_eq!(*d.last().unwrap(), 0.5);
        for k in 1..21 {
            assert!((d[k] - d[k - 1] - 0.025).abs() < 1e-12);
        }
    }

    #[test]
    fn rate_sweep_50hz_interval_is_policy_period() {
        // At 50 Hz the replan interval equals the policy step.
        assert!((1.0 / 50.0 - 0.02f64).abs() < 1e-12);
    }

    #[test]
    fn family_list_has_twelve_entries_and_split_is_disjoint() {
        assert_eq!(TerrainFamily::ALL.len(), 12);
        assert_eq!(TerrainFamily::SPARSE.len(), 4);
        assert_eq!(TerrainFamily::DENSE.len(), 4);
        for f in TerrainFamily::SPARSE {
            assert!(!TerrainFamily::DENSE.contains(&f));
        }
    }

    #[test]
    fn cell_merge_averages_fractions() {
        let a = CellResult { success: 1.0, failed: 0.0, stuck: 0.0, tracking_err: 0.1, robots: 4 };
        let b = CellResult { success: 0.0, failed: 0.5, stuck: 0.5, tracking_err: 0.3, robots: 4 };
        let m = CellResult::merge(&[a, b]);
        assert!((m.success - 0.5).abs() < 1e-12);
        assert!((m.failed - 0.25).abs() < 1e-12);
        assert!((m.tracking_err - 0.2).abs() < 1e-12);
        assert_eq!(m.robots, 8);
        // Outcome fractions always partition the robots.
        assert!((m.success + m.failed + m.stuck - 1.0).abs() < 1e-12);
    }
}
