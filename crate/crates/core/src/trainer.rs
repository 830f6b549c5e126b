//! Vectorized training loop: parallel environment stepping, rollout
//! collection, PPO updates, curriculum bookkeeping, metrics, checkpoints.
//!
//! Determinism: every environment owns a seeded RNG stream, action sampling
//! draws from a single learner stream in environment order, and all
//! reductions run in fixed order, so a fixed seed reproduces a run
//! byte-for-byte regardless of worker threads.

use crate::checkpoint::{snapshot_to_checkpoint, TrainerSnapshot};
use crate::config::Config;
use crate::env::{EnvSetup, Environment, Outcome};
use crate::metrics::CsvWriter;
use crate::obs::{RunningNormalizer, POLICY_OBS_DIM, PRIVILEGED_OBS_DIM};
use crate::rl::{PpoLearner, RolloutBuffer};
use crate::{derive_seed, Result};
use ndarray::Array2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use std::path::{Path, PathBuf};

const LEARNER_STREAM: u64 = 0x4C45_4152_4E45_52; // distinct from env streams

pub const METRICS_HEADER: [&str; 20] = [
    "epoch",
    "steps",
    "reward_mean",
    "reward_tracking",
    "reward_foothold",
    "reward_consistency",
    "reward_regularizers",
    "episode_len_mean",
    "foothold_err_mean",
    "terrain_level_mean",
    "episodes",
    "success_frac",
    "failed_frac",
    "stuck_frac",
    "kl",
    "lr",
    "policy_loss",
    "value_loss",
    "entropy",
    "clip_frac",
];

pub struct TrainSummary {
    pub epochs: usize,
    pub checkpoint_path: PathBuf,
    pub metrics_path: PathBuf,
}

struct ObsState {
    policy: Vec<Vec<f64>>,
    privileged: Vec<Vec<f64>>,
}

fn mean(values: &[f64]) -> f64 {
    if values.is_empty() {
        f64::NAN
    } else {
        values.iter().sum::<f64>() / values.len() as f64
    }
}

/// Runs the full training loop and writes `metrics.csv`, periodic
/// checkpoints, and `checkpoint.ckpt` into `out_dir`.
pub fn run_training(cfg: &Config, out_dir: &Path) -> Result<TrainSummary> {
    cfg.validate()?;
    assert_eq!(POLICY_OBS_DIM, 116);
    assert_eq!(PRIVILEGED_OBS_DIM, 46);
    std::fs::create_dir_all(out_dir)?;
    cfg.save(&out_dir.join("config.json"))?;

    let n = cfg.ppo.num_envs;
    let t_len = cfg.ppo.rollout_len;
    let value_dim = POLICY_OBS_DIM + PRIVILEGED_OBS_DIM;
    let act_dim = 12;
    let seed = cfg.train.seed;

    let mut learner_rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, LEARNER_STREAM));
    let mut learner: PpoLearner<f32> =
        PpoLearner::new(POLICY_OBS_DIM, value_dim, act_dim, cfg.ppo.clone(), &mut learner_rng);
    let mut policy_norm = RunningNormalizer::new(POLICY_OBS_DIM);
    let mut priv_norm = RunningNormalizer::new(PRIVILEGED_OBS_DIM);

    let setup = EnvSetup::training(cfg);
    let mut envs: Vec<Environment> =
        (0..n).map(|i| Environment::new(cfg.clone(), setup.clone(), i, seed)).collect();

    // Initial observations.
    let mut current = ObsState {
        policy: envs.iter_mut().map(|e| e.policy_obs()).collect(),
        privileged: envs.iter().map(|e| {
            // Fresh episode: no disturbance history beyond the reset draws.
            e_priv(e)
        }).collect(),
    };

    let metrics_path = out_dir.join("metrics.csv");
    let mut metrics = CsvWriter::create(&metrics_path, &METRICS_HEADER)?;

    let mut buffer = RolloutBuffer::<f32>::new(POLICY_OBS_DIM, value_dim, act_dim, t_len, n);
    let started = std::time::Instant::now();

    for epoch in 1..=cfg.train.epochs {
        let mut raw_policy: Vec<Vec<f64>> = Vec::with_capacity(t_len * n);
        let mut raw_priv: Vec<Vec<f64>> = Vec::with_capacity(t_len * n);
        let mut episode_lengths = Vec::new();
        let mut stance_errors = Vec::new();
        let mut outcomes: Vec<Outcome> = Vec::new();
        let mut sum_reward = 0.0;
        let mut sum_tracking = 0.0;
        let mut sum_foothold = 0.0;
        let mut sum_consistency = 0.0;
        let mut sum_regularizers = 0.0;

        for t in 0..t_len {
            // Normalize and batch the current observations.
            let mut obs_batch = Array2::<f32>::zeros((POLICY_OBS_DIM, n));
            let mut value_batch = Array2::<f32>::zeros((value_dim, n));
            for env_i in 0..n {
                let p = policy_norm.normalize(&current.policy[env_i]);
                let v = priv_norm.normalize(&current.privileged[env_i]);
                for (r, val) in p.iter().enumerate() {
                    obs_batch[(r, env_i)] = *val as f32;
                    value_batch[(r, env_i)] = *val as f32;
                }
                for (r, val) in v.iter().enumerate() {
                    value_batch[(POLICY_OBS_DIM + r, env_i)] = *val as f32;
                }
            }
            let values = learner.values(&value_batch);
            let (actions, logp) = learner.act(&obs_batch, &mut learner_rng);

            // Step all environments in parallel.
            let action_cols: Vec<[f64; 12]> = (0..n)
                .map(|env_i| {
                    let mut a = [0.0; 12];
                    for j in 0..act_dim {
                        a[j] = actions[(j, env_i)] as f64;
                    }
                    a
                })
                .collect();
            let results: Vec<crate::env::StepResult> = envs
                .par_iter_mut()
                .zip(action_cols.par_iter())
                .map(|(env, action)| env.step(action))
                .collect();

            for env_i in 0..n {
                let col = buffer.column(t, env_i);
                let r = &results[env_i];
                buffer.obs.column_mut(col).assign(&obs_batch.column(env_i));
                buffer.value_obs.column_mut(col).assign(&value_batch.column(env_i));
                buffer.actions.column_mut(col).assign(&actions.column(env_i));
                buffer.old_logp[col] = logp[env_i];
                // Timeout terminations bootstrap through the value estimate.
                buffer.rewards[col] = r.reward
                    + if r.timeout { cfg.ppo.gamma * values[env_i] } else { 0.0 };
                buffer.dones[col] = r.done;
                buffer.values[col] = values[env_i];

                sum_reward += r.reward;
                sum_tracking += r.terms.tracking.iter().sum::<f64>();
                sum_foothold += r.terms.foothold;
                sum_consistency += r.terms.consistency;
                sum_regularizers += r.terms.regularizers.iter().sum::<f64>();
                stance_errors.extend_from_slice(&r.stance_errors);
                if let Some(len) = r.episode_length {
                    episode_lengths.push(len);
                }
                if let Some(outcome) = r.outcome {
                    outcomes.push(outcome);
                }
            }

            // Carry observations and stash the raw copies for the
            // post-update normalizer refresh.
            for env_i in 0..n {
                let r = &results[env_i];
                raw_policy.push(current.policy[env_i].clone());
                raw_priv.push(current.privileged[env_i].clone());
                current.policy[env_i] = r.policy_obs.clone();
                current.privileged[env_i] = r.privileged_obs.clone();
            }
        }

        // Bootstrap from the observations after the last step.
        let mut value_batch = Array2::<f32>::zeros((value_dim, n));
        for env_i in 0..n {
            let p = policy_norm.normalize(&current.policy[env_i]);
            let v = priv_norm.normalize(&current.privileged[env_i]);
            for (r, val) in p.iter().enumerate() {
                value_batch[(r, env_i)] = *val as f32;
            }
            for (r, val) in v.iter().enumerate() {
                value_batch[(POLICY_OBS_DIM + r, env_i)] = *val as f32;
            }
        }
        buffer.bootstrap = learner.values(&value_batch);

        let stats = learner.update(&buffer, &mut learner_rng);

        // Normalizer refresh after the update, from raw observations.
        policy_norm.update(raw_policy.iter().map(|v| v.as_slice()));
        priv_norm.update(raw_priv.iter().map(|v| v.as_slice()));

        let steps = (t_len * n) as f64;
        let episodes = outcomes.len() as f64;
        let frac = |o: Outcome| {
            if outcomes.is_empty() {
                f64::NAN
            } else {
                outcomes.iter().filter(|&&x| x == o).count() as f64 / episodes
            }
        };
        let level_mean =
            envs.iter().map(|e| e.curriculum.level as f64).sum::<f64>() / n as f64;
        metrics.row(&[
            epoch as f64,
            steps,
            sum_reward / steps,
            sum_tracking / steps,
            sum_foothold / steps,
            sum_consistency / steps,
            sum_regularizers / steps,
            mean(&episode_lengths),
            mean(&stance_errors),
            level_mean,
            episodes,
            frac(Outcome::Success),
            frac(Outcome::Failed),
            frac(Outcome::Stuck),
            stats.kl,
            stats.lr,
            stats.policy_loss,
            stats.value_loss,
            stats.entropy,
            stats.clip_frac,
        ])?;
        metrics.flush()?;

        if epoch % 25 == 0 || epoch == cfg.train.epochs {
            eprintln!(
                "epoch {epoch}/{} reward {:.3} foothold_err {:.4} ep_len {:.2} lr {:.2e} [{:.0} s]",
                cfg.train.epochs,
                sum_reward / steps,
                mean(&stance_errors),
                mean(&episode_lengths),
                stats.lr,
                started.elapsed().as_secs_f64()
            );
        }

        if epoch % cfg.train.checkpoint_interval == 0 || epoch == cfg.train.epochs {
            let snap = TrainerSnapshot {
                learner: learner.clone(),
                policy_norm: policy_norm.clone(),
                priv_norm: priv_norm.clone(),
                curriculum_levels: envs.iter().map(|e| e.curriculum.level).collect(),
                epoch,
            };
            let ck = snapshot_to_checkpoint(&snap);
            ck.save(&out_dir.join(format!("checkpoint_{epoch}.ckpt")))?;
            ck.save(&out_dir.join("checkpoint.ckpt"))?;
        }
    }

    Ok(TrainSummary {
        epochs: cfg.train.epochs,
        checkpoint_path: out_dir.join("checkpoint.ckpt"),
        metrics_path,
    })
}

fn e_priv(env: &Environment) -> Vec<f64> {
    // Privileged observation of a freshly reset environment: consistency is
    // zero until two solutions exist.
    let mut drift = [0.0; 4];
    for (leg, d) in drift.iter_mut().enumerate() {
        *d = env.map.noise.total_drift(leg) + env.map.eval_drift;
    }
    crate::obs::build_privileged_obs(
        &env.state,
        &env.sol,
        &env.disturbances,
        &env.friction,
        &drift,
        0.0,
        env.state.time,
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::{column_index, read_csv};

    fn tiny_config() -> Config {
        let mut cfg = Config::smoke();
        cfg.ppo.num_envs = 4;
        cfg.ppo.rollout_len = 8;
        cfg.ppo.hidden = vec![32, 32];
        cfg.train.epochs = 3;
        cfg.train.checkpoint_interval = 2;
        cfg
    }

    #[test]
    fn tiny_training_runs_and_logs_monotone_epochs() {
        let dir = std::env::temp_dir().join("trotter_train_tiny_a");
        let _ = std::fs::remove_dir_all(&dir);
        let summary = run_training(&tiny_config(), &dir).unwrap();
        assert!(summary.checkpoint_path.exists());
        let (header, rows) = read_csv(&summary.metrics_path).unwrap();
        assert_eq!(rows.len(), 3);
        let epoch_col = column_index(&header, "epoch").unwrap();
        for (i, row) in rows.iter().enumerate() {
            assert_eq!(row[epoch_col], (i + 1) as f64);
        }
        // Periodic checkpoint also exists.
        assert!(dir.join("checkpoint_2.ckpt").exists());
    }

    #[test]
    fn seed_repeated_runs_write_identical_metrics() {
        let dir_a = std::env::temp_dir().join("trotter_train_det_a");
        let dir_b = std::env::temp_dir().join("trotter_train_det_b");
        let _ = std::fs::remove_dir_all(&dir_a);
        let _ = std::fs::remove_dir_all(&dir_b);
        let cfg = tiny_config();
        run_training(&cfg, &dir_a).unwrap();
        run_training(&cfg, &dir_b).unwrap();
        let a = std::fs::read(dir_a.join("metrics.csv")).unwrap();
        let b = std::fs::read(dir_b.join("metrics.csv")).unwrap();
        assert_eq!(a, b, "seed-repeated runs diverged");
    }
}
