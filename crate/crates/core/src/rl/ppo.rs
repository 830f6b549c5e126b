//! Gaussian policy head and the PPO learner with an adaptive learning rate.
//!
//! The loss path is exposed as free functions so the finite-difference
//! gradient checks can drive the exact code the learner uses.

use super::mlp::{AdamState, Mlp, MlpGrads};
use super::Real;
use ndarray::{s, Array1, Array2, Axis};
use rand::Rng;
use rand_distr::StandardNormal;

/// Fixed number of column chunks for parallel gradient accumulation. A
/// constant (rather than the thread count) keeps summation order, and hence
/// bit-level results, machine-independent.
const GRAD_CHUNKS: usize = 8;

const LN_2PI: f64 = 1.8378770664093453;

/// PPO hyperparameters; defaults follow the reference table (the batch is
/// `rollout_len * num_envs`, minibatches are `minibatch_env_ratio * num_envs`).
#[derive(Clone, Debug, serde::Serialize, serde::Deserialize)]
#[serde(default)]
pub struct PpoConfig {
    pub rollout_len: usize,
    pub num_envs: usize,
    pub minibatch_env_ratio: usize,
    pub update_epochs: usize,
    pub clip: f64,
    pub entropy_coef: f64,
    pub value_coef: f64,
    pub gamma: f64,
    pub lambda: f64,
    pub kl_target: f64,
    pub lr_init: f64,
    pub lr_min: f64,
    pub lr_max: f64,
    pub hidden: Vec<usize>,
    pub log_std_init: f64,
    pub log_std_min: f64,
    pub log_std_max: f64,
}

impl Default for PpoConfig {
    fn default() -> Self {
        Self {
            rollout_len: 45,
            num_envs: 4096,
            minibatch_env_ratio: 4,
            update_epochs: 5,
            clip: 0.2,
            entropy_coef: 0.0035,
            value_coef: 1.0,
            gamma: 0.99,
            lambda: 0.95,
            kl_target: 0.01,
            lr_init: 1e-3,
            lr_min: 1e-6,
            lr_max: 1e-2,
            hidden: vec![512, 512, 512],
            log_std_init: -1.0,
            log_std_min: -4.0,
            log_std_max: 1.0,
        }
    }
}

/// Log density of a diagonal Gaussian at `action`.
pub fn gaussian_log_prob<F: Real>(mean: &[F], log_std: &[F], action: &[F]) -> F {
    let mut acc = F::zero();
    for j in 0..mean.len() {
        let z = (action[j] - mean[j]) / log_std[j].exp();
        acc = acc + z * z + log_std[j] + log_std[j] + F::from_f64(LN_2PI);
    }
    -acc * F::from_f64(0.5)
}

/// Closed-form entropy of a diagonal Gaussian: `sum(log_std + 0.5*ln(2*pi*e))`.
pub fn gaussian_entropy<F: Real>(log_std: &[F]) -> F {
    let half_ln_2pi_e = F::from_f64(0.5 * (LN_2PI + 1.0));
    log_std.iter().fold(F::zero(), |acc, &s| acc + s + half_ln_2pi_e)
}

/// Aggregate statistics of one policy-loss evaluation.
#[derive(Clone, Copy, Debug, Default)]
pub struct PolicyLossStats {
    pub loss: f64,
    pub surrogate: f64,
    pub entropy: f64,
    /// Mean of `old_logp - new_logp`.
    pub kl: f64,
    pub clip_frac: f64,
}

/// Clipped-surrogate policy loss with entropy bonus, plus its gradients with
/// respect to the network parameters and the state-independent log-std.
pub fn policy_loss_grads<F: Real>(
    policy: &Mlp<F>,
    log_std: &Array1<F>,
    obs: &Array2<F>,
    actions: &Array2<F>,
    old_logp: &[F],
    advantages: &[F],
    clip: f64,
    entropy_coef: f64,
) -> (PolicyLossStats, MlpGrads<F>, Array1<F>) {
    let batch = obs.ncols();
    assert_eq!(actions.ncols(), batch);
    assert_eq!(old_logp.len(), batch);
    assert_eq!(advantages.len(), batch);
    let act_dim = log_std.len();
    let inv_b = 1.0 / batch as f64;

    let chunk_len = batch.div_ceil(GRAD_CHUNKS);
    let ranges: Vec<(usize, usize)> = (0..batch)
        .step_by(chunk_len.max(1))
        .map(|a| (a, (a + chunk_len).min(batch)))
        .collect();

    struct Partial<F> {
        grads: MlpGrads<F>,
        dlogstd: Vec<f64>,
        loss: f64,
        kl: f64,
        clipped: usize,
    }

    let partials: Vec<Partial<F>> = {
        use rayon::prelude::*;
        ranges
            .par_iter()
            .map(|&(a, b)| {
                let obs_c = obs.slice(s![.., a..b]).to_owned();
                let (mean, cache) = policy.forward_cached(&obs_c);
                let mut dl_dmean = Array2::<F>::zeros(mean.dim());
                let mut dlogstd = vec![0.0; act_dim];
                let mut loss = 0.0;
                let mut kl = 0.0;
                let mut clipped = 0usize;
                for (i, col) in (a..b).enumerate() {
                    let mu = mean.column(i);
                    let act = actions.column(col);
                    let logp = gaussian_log_prob(
                        mu.as_slice().unwrap_or(&mu.to_vec()),
                        log_std.as_slice().unwrap(),
                        act.as_slice().unwrap_or(&act.to_vec()),
                    );
                    let adv = advantages[col].into_f64();
                    let log_ratio = (logp - old_logp[col]).into_f64();
                    let ratio = log_ratio.exp();
                    let clamped = ratio.clamp(1.0 - clip, 1.0 + clip);
                    let surr1 = ratio * adv;
                    let surr2 = clamped * adv;
                    loss -= surr1.min(surr2) * inv_b;
                    kl += (old_logp[col] - logp).into_f64() * inv_b;
                    if (ratio - clamped).abs() > 1e-12 {
                        clipped += 1;
                    }
                    // Gradient of -min(surr1, surr2) w.r.t. the new log-prob:
                    // the clamped branch is flat, the open branch scales with
                    // the ratio itself.
                    let dlogp = if surr1 <= surr2 { -ratio * adv * inv_b } else { 0.0 };
                    if dlogp != 0.0 {
                        for j in 0..act_dim {
                            let sigma = log_std[j].exp().into_f64();
                            let z = (act[j] - mu[j]).into_f64() / sigma;
                            // d logp / d mu = z / sigma; d logp / d log_std = z^2 - 1.
                            dl_dmean[(j, i)] = F::from_f64(dlogp * z / sigma);
                            dlogstd[j] += dlogp * (z * z - 1.0);
                        }
                    }
                }
                let grads = policy.backward(&cache, &dl_dmean);
                Partial { grads, dlogstd, loss, kl, clipped }
            })
            .collect()
    };

    let mut grads = policy.zero_grads();
    let mut dlogstd = vec![0.0; act_dim];
    let mut surrogate = 0.0;
    let mut kl = 0.0;
    let mut clipped = 0usize;
    for p in &partials {
        grads.add(&p.grads);
        for j in 0..act_dim {
            dlogstd[j] += p.dlogstd[j];
        }
        surrogate += p.loss;
        kl += p.kl;
        clipped += p.clipped;
    }

    let entropy = gaussian_entropy(log_std.as_slice().unwrap()).into_f64();
    let loss = surrogate - entropy_coef * entropy;
    let dlogstd_arr =
        Array1::from_iter(dlogstd.iter().map(|&g| F::from_f64(g - entropy_coef)));
    let stats = PolicyLossStats {
        loss,
        surrogate,
        entropy,
        kl,
        clip_frac: clipped as f64 / batch as f64,
    };
    (stats, grads, dlogstd_arr)
}

/// Mean-squared-error value loss and its network gradients.
pub fn value_loss_grads<F: Real>(
    value: &Mlp<F>,
    obs: &Array2<F>,
    targets: &[F],
) -> (f64, MlpGrads<F>) {
    let batch = obs.ncols();
    assert_eq!(targets.len(), batch);
    let inv_b = 1.0 / batch as f64;

    let chunk_len = batch.div_ceil(GRAD_CHUNKS);
    let ranges: Vec<(usize, usize)> = (0..batch)
        .step_by(chunk_len.max(1))
        .map(|a| (a, (a + chunk_len).min(batch)))
        .collect();

    let partials: Vec<(f64, MlpGrads<F>)> = {
        use rayon::prelude::*;
        ranges
            .par_iter()
            .map(|&(a, b)| {
                let obs_c = obs.slice(s![.., a..b]).to_owned();
                let (out, cache) = value.forward_cached(&obs_c);
                let mut dl = Array2::<F>::zeros(out.dim());
                let mut loss = 0.0;
                for (i, col) in (a..b).enumerate() {
                    let err = (out[(0, i)] - targets[col]).into_f64();
                    loss += err * err * inv_b;
                    dl[(0, i)] = F::from_f64(2.0 * err * inv_b);
                }
                (loss, value.backward(&cache, &dl))
            })
            .collect()
    };

    let mut grads = value.zero_grads();
    let mut loss = 0.0;
    for (l, g) in &partials {
        loss += l;
        grads.add(g);
    }
    (loss, grads)
}

/// Flat storage of one rollout across all environments.
///
/// Column index `t * num_envs + env`. Observations are stored normalized,
/// exactly as the policy saw them.
#[derive(Clone, Debug)]
pub struct RolloutBuffer<F> {
    pub num_envs: usize,
    pub len: usize,
    pub obs: Array2<F>,
    pub value_obs: Array2<F>,
    pub actions: Array2<F>,
    pub old_logp: Vec<F>,
    pub rewards: Vec<f64>,
    pub dones: Vec<bool>,
    pub values: Vec<f64>,
    /// Value estimate of the state after the last step, per environment.
    pub bootstrap: Vec<f64>,
}

impl<F: Real> RolloutBuffer<F> {
    pub fn new(obs_dim: usize, value_dim: usize, act_dim: usize, len: usize, num_envs: usize) -> Self {
        let cols = len * num_envs;
        Self {
            num_envs,
            len,
            obs: Array2::zeros((obs_dim, cols)),
            value_obs: Array2::zeros((value_dim, cols)),
            actions: Array2::zeros((act_dim, cols)),
            old_logp: vec![F::zero(); cols],
            rewards: vec![0.0; cols],
            dones: vec![false; cols],
            values: vec![0.0; cols],
            bootstrap: vec![0.0; num_envs],
        }
    }

    pub fn capacity(&self) -> usize {
        self.len * self.num_envs
    }

    pub fn column(&self, t: usize, env: usize) -> usize {
        debug_assert!(t < self.len && env < self.num_envs);
        t * self.num_envs + env
    }
}

/// Post-update statistics.
#[derive(Clone, Copy, Debug, Default)]
pub struct UpdateStats {
    pub kl: f64,
    pub clip_frac: f64,
    pub policy_loss: f64,
    pub value_loss: f64,
    pub entropy: f64,
    pub lr: f64,
    /// Set when a non-finite loss aborted the update and parameters were
    /// restored.
    pub faulted: bool,
}

/// Policy and value networks plus optimizer state.
#[derive(Clone, Debug)]
pub struct PpoLearner<F> {
    pub policy: Mlp<F>,
    pub value: Mlp<F>,
    pub log_std: Array1<F>,
    pub policy_adam: AdamState,
    pub value_adam: AdamState,
    pub log_std_adam: AdamState,
    pub lr: f64,
    pub cfg: PpoConfig,
}

impl<F: Real> PpoLearner<F> {
    pub fn new<R: Rng>(obs_dim: usize, value_dim: usize, act_dim: usize, cfg: PpoConfig, rng: &mut R) -> Self {
        let mut policy_dims = vec![obs_dim];
        policy_dims.extend(&cfg.hidden);
        policy_dims.push(act_dim);
        let mut value_dims = vec![value_dim];
        value_dims.extend(&cfg.hidden);
        value_dims.push(1);
        let policy = Mlp::new(&policy_dims, 0.01, rng);
        let value = Mlp::new(&value_dims, 1.0, rng);
        let log_std = Array1::from_elem(act_dim, F::from_f64(cfg.log_std_init));
        let policy_adam = AdamState::new(policy.param_count());
        let value_adam = AdamState::new(value.param_count());
        let log_std_adam = AdamState::new(act_dim);
        let lr = cfg.lr_init;
        Self { policy, value, log_std, policy_adam, value_adam, log_std_adam, lr, cfg }
    }

    /// Samples actions for a batch of observations; returns actions and
    /// their log-probabilities.
    pub fn act<R: Rng>(&self, obs: &Array2<F>, rng: &mut R) -> (Array2<F>, Vec<F>) {
        let mean = self.policy.forward(obs);
        let mut actions = mean.clone();
        for mut col in actions.axis_iter_mut(Axis(1)) {
            for (j, v) in col.iter_mut().enumerate() {
                let eps: f64 = rng.sample(StandardNormal);
                *v = *v + self.log_std[j].exp() * F::from_f64(eps);
            }
        }
        let logp = (0..obs.ncols())
            .map(|i| {
                gaussian_log_prob(
                    &mean.column(i).to_vec(),
                    self.log_std.as_slice().unwrap(),
                    &actions.column(i).to_vec(),
                )
            })
            .collect();
        (actions, logp)
    }

    /// Deterministic (mean) actions for evaluation.
    pub fn act_mean(&self, obs: &Array2<F>) -> Array2<F> {
        self.policy.forward(obs)
    }

    /// Value estimates for a batch of concatenated observations.
    pub fn values(&self, value_obs: &Array2<F>) -> Vec<f64> {
        let out = self.value.forward(value_obs);
        out.row(0).iter().map(|v| v.into_f64()).collect()
    }

    /// Learning-rate adaptation around the KL band.
    pub fn adapt_lr(&mut self, kl: f64) {
        if kl > 2.0 * self.cfg.kl_target {
            self.lr /= 1.5;
        } else if kl < self.cfg.kl_target / 2.0 {
            self.lr *= 1.5;
        }
        self.lr = self.lr.clamp(self.cfg.lr_min, self.cfg.lr_max);
    }

    /// Runs the PPO update over a full buffer: GAE, advantage normalization,
    /// shuffled minibatches for the configured number of epochs, and the KL
    /// learning-rate adaptation after each epoch. A non-finite loss restores
    /// the pre-update parameters and flags the result.
    pub fn update<R: Rng>(&mut self, buffer: &RolloutBuffer<F>, rng: &mut R) -> UpdateStats {
        let n = buffer.num_envs;
        let cols = buffer.capacity();

        // Advantages and returns per environment trajectory.
        let mut advantages = vec![0.0f64; cols];
        let mut returns = vec![0.0f64; cols];
        for env in 0..n {
            let rewards: Vec<f64> =
                (0..buffer.len).map(|t| buffer.rewards[buffer.column(t, env)]).collect();
            let values: Vec<f64> =
                (0..buffer.len).map(|t| buffer.values[buffer.column(t, env)]).collect();
            let dones: Vec<bool> =
                (0..buffer.len).map(|t| buffer.dones[buffer.column(t, env)]).collect();
            let (adv, ret) = super::gae(
                &rewards,
                &values,
                &dones,
                buffer.bootstrap[env],
                self.cfg.gamma,
                self.cfg.lambda,
            );
            for t in 0..buffer.len {
                advantages[buffer.column(t, env)] = adv[t];
                returns[buffer.column(t, env)] = ret[t];
            }
        }

        // Batch-wide advantage normalization.
        let mean = advantages.iter().sum::<f64>() / cols as f64;
        let var = advantages.iter().map(|a| (a - mean) * (a - mean)).sum::<f64>() / cols as f64;
        let std = var.sqrt().max(1e-8);
        let adv_norm: Vec<F> =
            advantages.iter().map(|a| F::from_f64((a - mean) / std)).collect();
        let returns_f: Vec<F> = returns.iter().map(|r| F::from_f64(*r)).collect();

        // Snapshot for fault recovery.
        let snapshot = (self.policy.flatten(), self.value.flatten(), self.log_std.clone());

        let mb = (self.cfg.minibatch_env_ratio * n).min(cols).max(1);
        let mut indices: Vec<usize> = (0..cols).collect();
        let mut stats = UpdateStats { lr: self.lr, ..Default::default() };
        let mut minibatches = 0usize;

        for _epoch in 0..self.cfg.update_epochs {
            // Fisher-Yates shuffle from the learner stream.
            for i in (1..cols).rev() {
                let j = rng.gen_range(0..=i);
                indices.swap(i, j);
            }
            let mut epoch_kl = 0.0;
            let mut epoch_weight = 0.0;
            for chunk in indices.chunks(mb) {
                let obs = gather_columns(&buffer.obs, chunk);
                let vobs = gather_columns(&buffer.value_obs, chunk);
                let acts = gather_columns(&buffer.actions, chunk);
                let old_logp: Vec<F> = chunk.iter().map(|&c| buffer.old_logp[c]).collect();
                let adv: Vec<F> = chunk.iter().map(|&c| adv_norm[c]).collect();
                let tgt: Vec<F> = chunk.iter().map(|&c| returns_f[c]).collect();

                let (pstats, pgrads, dlogstd) = policy_loss_grads(
                    &self.policy,
                    &self.log_std,
                    &obs,
                    &acts,
                    &old_logp,
                    &adv,
                    self.cfg.clip,
                    self.cfg.entropy_coef,
                );
                let (vloss, vgrads) = value_loss_grads(&self.value, &vobs, &tgt);

                if !pstats.loss.is_finite() || !vloss.is_finite() {
                    self.policy.unflatten(&snapshot.0);
                    self.value.unflatten(&snapshot.1);
                    self.log_std = snapshot.2;
                    stats.faulted = true;
                    return stats;
                }

                let mut pflat = self.policy.flatten();
                self.policy_adam.step(&mut pflat, &pgrads.flatten(), self.lr);
                self.policy.unflatten(&pflat);

                let mut vflat = self.value.flatten();
                let vgrads_flat: Vec<F> = vgrads
                    .flatten()
                    .iter()
                    .map(|g| *g * F::from_f64(self.cfg.value_coef))
                    .collect();
                self.value_adam.step(&mut vflat, &vgrads_flat, self.lr);
                self.value.unflatten(&vflat);

                let mut ls: Vec<F> = self.log_std.to_vec();
                self.log_std_adam.step(&mut ls, &dlogstd.to_vec(), self.lr);
                for v in ls.iter_mut() {
                    *v = num_traits::Float::min(
                        num_traits::Float::max(*v, F::from_f64(self.cfg.log_std_min)),
                        F::from_f64(self.cfg.log_std_max),
                    );
                }
                self.log_std = Array1::from_vec(ls);

                let w = chunk.len() as f64;
                epoch_kl += pstats.kl * w;
                epoch_weight += w;
                stats.kl = pstats.kl;
                stats.clip_frac = pstats.clip_frac;
                stats.policy_loss = pstats.loss;
                stats.value_loss = vloss;
                stats.entropy = pstats.entropy;
                minibatches += 1;
            }
            let kl = epoch_kl / epoch_weight.max(1.0);
            stats.kl = kl;
            self.adapt_lr(kl);
        }
        let _ = minibatches;
        stats.lr = self.lr;
        stats
    }
}

/// Copies the selected columns into a dense minibatch matrix.
fn gather_columns<F: Real>(src: &Array2<F>, cols: &[usize]) -> Array2<F> {
    let mut out = Array2::zeros((src.nrows(), cols.len()));
    for (i, &c) in cols.iter().enumerate() {
        out.column_mut(i).assign(&src.column(c));
    }
    out
}
