//! Proximal policy optimization inside the surrogate MDP.
//!
//! Episodes are collected in lockstep batches, advantages come from GAE,
//! and the policy/value networks are updated with the clipped surrogate and
//! a squared-error value loss. Episodes are truncated at `n_RL` steps and
//! bootstrapped with the value of the final state.

use std::path::Path;
use std::io::Write;

use ndarray::{Array2, Axis};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fml::{FlowMapModel, MlpGrads};
use crate::harness::metrics::CostParams;
use crate::optim::Adam;
use crate::rl::env::{env_reset, env_step, RlState, SpinupPool};
use crate::rl::policy::PolicyModel;
use crate::scalar::{fmt17, Scalar};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RlConfig {
    pub gamma: f64,
    /// Steps per episode.
    pub episode_len: usize,
    /// Action smoothing factor.
    pub alpha: f64,
    /// Total episodes; the sample budget is `episodes × episode_len`.
    pub episodes: usize,
    /// Episodes collected per PPO iteration.
    pub episodes_per_iter: usize,
    pub clip: f64,
    pub gae_lambda: f64,
    pub update_epochs: usize,
    pub minibatch: usize,
    pub lr_policy: f64,
    pub lr_value: f64,
    pub entropy_coef: f64,
    pub max_grad_norm: f64,
    pub hidden: Vec<usize>,
    pub init_log_std: f64,
    pub cost: CostParams,
    pub seed: u64,
}

impl RlConfig {
    /// Desk-scale budget: 500 episodes of 200 steps.
    pub fn desk() -> Self {
        Self {
            gamma: 0.99,
            episode_len: 200,
            alpha: 0.5,
            episodes: 500,
            episodes_per_iter: 10,
            clip: 0.2,
            gae_lambda: 0.95,
            update_epochs: 10,
            minibatch: 64,
            lr_policy: 3e-4,
            lr_value: 3e-4,
            entropy_coef: 0.0,
            max_grad_norm: 0.5,
            hidden: vec![512, 512],
            init_log_std: -0.5,
            cost: CostParams::default(),
            seed: 0,
        }
    }

    /// Full budget: 5,000 episodes (10⁶ samples).
    pub fn full() -> Self {
        Self {
            episodes: 5000,
            ..Self::desk()
        }
    }

    fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.gamma) {
            return Err(Error::Config(format!("gamma {} outside [0, 1)", self.gamma)));
        }
        if !(self.alpha > 0.0 && self.alpha <= 1.0) {
            return Err(Error::Config(format!("alpha {} outside (0, 1]", self.alpha)));
        }
        if self.episode_len == 0 || self.episodes == 0 || self.episodes_per_iter == 0 || self.minibatch == 0 {
            return Err(Error::Config("episode counts, lengths and minibatch must be ≥ 1".into()));
        }
        Ok(())
    }

    pub fn iterations(&self) -> usize {
        self.episodes.div_ceil(self.episodes_per_iter)
    }
}

impl Default for RlConfig {
    fn default() -> Self {
        Self::desk()
    }
}

/// Per-iteration training statistics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterStats {
    pub iter: usize,
    /// Mean discounted episode return.
    pub mean_return: f64,
    pub std_return: f64,
    /// Mean windowed drag over all collected steps.
    pub mean_windowed_cd: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct PpoReport {
    pub iterations: Vec<IterStats>,
    pub samples: usize,
}

impl PpoReport {
    /// Writes `iter,mean_return,std_return,mean_windowed_cd`.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut out = String::from("iter,mean_return,std_return,mean_windowed_cd\n");
        for s in &self.iterations {
            out.push_str(&format!(
                "{},{},{},{}\n",
                s.iter,
                fmt17(s.mean_return),
                fmt17(s.std_return),
                fmt17(s.mean_windowed_cd)
            ));
        }
        let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        f.write_all(out.as_bytes()).map_err(|e| Error::io(path, e))
    }
}

/// `G_n = Σ_{k≥n} γ^{k−n} r_k` for a single episode.
pub fn discounted_returns<T: Scalar>(rewards: &[T], gamma: T) -> Vec<T> {
    let mut out = vec![T::zero(); rewards.len()];
    let mut acc = T::zero();
    for (i, &r) in rewards.iter().enumerate().rev() {
        acc = r + gamma * acc;
        out[i] = acc;
    }
    out
}

/// Generalized advantage estimates for one episode. `values` has one more
/// entry than `rewards` (the bootstrap value of the final state).
pub fn gae<T: Scalar>(rewards: &[T], values: &[T], gamma: T, lambda: T) -> Vec<T> {
    assert_eq!(values.len(), rewards.len() + 1);
    let mut adv = vec![T::zero(); rewards.len()];
    let mut acc = T::zero();
    for i in (0..rewards.len()).rev() {
        let delta = rewards[i] + gamma * values[i + 1] - values[i];
        acc = delta + gamma * lambda * acc;
        adv[i] = acc;
    }
    adv
}

fn gaussian_logp<T: Scalar>(z: T, mu: T, log_std: T) -> T {
    let s = (z - mu) / log_std.exp();
    T::lit(-0.5) * s * s - log_std - T::lit(0.5 * (2.0 * std::f64::consts::PI).ln())
}

struct Rollouts<T> {
    obs: Vec<Vec<T>>,
    raw: Vec<T>,
    logp: Vec<T>,
    adv: Vec<T>,
    ret: Vec<T>,
}

/// Trains a policy from scratch.
pub fn ppo_train<T: Scalar>(
    model: &FlowMapModel<T>,
    pool: &SpinupPool<T>,
    config: &RlConfig,
) -> Result<(PolicyModel<T>, PpoReport)> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let policy = PolicyModel::new_random(
        model.n_memory(),
        &config.hidden,
        T::lit(config.init_log_std),
        *model.norm(),
        &mut rng,
    )?;
    ppo_train_from(model, pool, config, policy, &mut rng)
}

/// Continues PPO from an existing policy.
pub fn ppo_train_from<T: Scalar>(
    model: &FlowMapModel<T>,
    pool: &SpinupPool<T>,
    config: &RlConfig,
    mut policy: PolicyModel<T>,
    rng: &mut ChaCha8Rng,
) -> Result<(PolicyModel<T>, PpoReport)> {
    config.validate()?;
    if policy.n_memory() != model.n_memory() {
        return Err(Error::Dimension {
            what: "policy vs flow-map memory",
            expected: model.n_memory(),
            got: policy.n_memory(),
        });
    }
    let window_samples = config.cost.window_samples(model.dt().as_f64())?;
    let gamma = T::lit(config.gamma);
    let lambda = T::lit(config.gae_lambda);
    let alpha = T::lit(config.alpha);
    let mut adam_pi = Adam::<T>::default();
    let mut adam_v = Adam::<T>::default();
    let mut report = PpoReport::default();
    let mut value_stats_set = false;

    let mut remaining = config.episodes;
    for iter in 0..config.iterations() {
        let n_env = config.episodes_per_iter.min(remaining);
        remaining -= n_env;

        // Lockstep collection of n_env episodes.
        let mut states: Vec<RlState<T>> = (0..n_env)
            .map(|_| env_reset(pool, model.n_memory(), window_samples, rng))
            .collect::<Result<_>>()?;
        let len = config.episode_len;
        let mut obs = vec![Vec::with_capacity(len); n_env];
        let mut raw = vec![Vec::with_capacity(len); n_env];
        let mut logp = vec![Vec::with_capacity(len); n_env];
        let mut rewards = vec![Vec::with_capacity(len); n_env];
        let mut values = vec![Vec::with_capacity(len + 1); n_env];
        let mut cd_sum = 0.0;
        for _ in 0..=len {
            let feats: Vec<Vec<T>> = states.iter().map(RlState::features).collect();
            let x = policy.normalize_batch(&feats)?;
            let v_out = policy.value.forward_batch(x.clone())?;
            for (e, vals) in values.iter_mut().enumerate() {
                vals.push(v_out.output()[[e, 0]] * policy.value_scale + policy.value_shift);
            }
            if obs[0].len() == len {
                break;
            }
            let mu = policy.mean.forward_batch(x)?;
            for e in 0..n_env {
                let m = mu.output()[[e, 0]];
                let eps: f64 = StandardNormal.sample(rng);
                let z = m + policy.std() * T::lit(eps);
                let (next, r) = env_step(model, &states[e], z.tanh(), alpha, &config.cost)?;
                obs[e].push(feats[e].clone());
                raw[e].push(z);
                logp[e].push(gaussian_logp(z, m, policy.log_std));
                rewards[e].push(r);
                cd_sum += next.windowed_cd().as_f64();
                states[e] = next;
            }
        }

        let mut ro = Rollouts {
            obs: Vec::with_capacity(n_env * len),
            raw: Vec::new(),
            logp: Vec::new(),
            adv: Vec::new(),
            ret: Vec::new(),
        };
        let mut ep_returns = Vec::with_capacity(n_env);
        for e in 0..n_env {
            let adv = gae(&rewards[e], &values[e], gamma, lambda);
            for (a, v) in adv.iter().zip(&values[e]) {
                ro.ret.push(*a + *v);
            }
            ro.adv.extend(adv);
            ro.obs.append(&mut obs[e]);
            ro.raw.append(&mut raw[e]);
            ro.logp.append(&mut logp[e]);
            ep_returns.push(discounted_returns(&rewards[e], gamma)[0].as_f64());
        }
        report.samples += n_env * len;
        let mean_ret = ep_returns.iter().sum::<f64>() / n_env as f64;
        let std_ret = (ep_returns.iter().map(|r| (r - mean_ret).powi(2)).sum::<f64>() / n_env as f64).sqrt();
        let stats = IterStats {
            iter: iter + 1,
            mean_return: mean_ret,
            std_return: std_ret,
            mean_windowed_cd: cd_sum / (n_env * len) as f64,
        };
        log::info!(
            "ppo iter {} return {:.4} ± {:.4} windowed c_d {:.4}",
            stats.iter,
            stats.mean_return,
            stats.std_return,
            stats.mean_windowed_cd
        );
        report.iterations.push(stats);

        if !value_stats_set {
            // Fix the value-target scale from the first batch of returns.
            let n = ro.ret.len() as f64;
            let m = ro.ret.iter().map(|r| r.as_f64()).sum::<f64>() / n;
            let s = (ro.ret.iter().map(|r| (r.as_f64() - m).powi(2)).sum::<f64>() / n).sqrt();
            policy.value_shift = T::lit(m);
            policy.value_scale = T::lit(s.max(1e-3));
            value_stats_set = true;
        }

        update(&mut policy, &ro, config, &mut adam_pi, &mut adam_v, rng)?;
    }
    Ok((policy, report))
}

fn clip_grad<T: Scalar>(grads: &mut MlpGrads<T>, extra: &mut [T], max_norm: f64) {
    if max_norm <= 0.0 {
        return;
    }
    let norm = (grads.sq_norm() + extra.iter().map(|&x| x * x).sum::<T>()).sqrt().as_f64();
    if norm > max_norm {
        let s = T::lit(max_norm / norm);
        grads.scale(s);
        for x in extra.iter_mut() {
            *x *= s;
        }
    }
}

fn update<T: Scalar>(
    policy: &mut PolicyModel<T>,
    ro: &Rollouts<T>,
    config: &RlConfig,
    adam_pi: &mut Adam<T>,
    adam_v: &mut Adam<T>,
    rng: &mut ChaCha8Rng,
) -> Result<()> {
    let n = ro.obs.len();
    // Advantage normalization over the batch.
    let mean = ro.adv.iter().copied().sum::<T>() / T::from_usize_lossy(n);
    let var = ro.adv.iter().map(|&a| (a - mean) * (a - mean)).sum::<T>() / T::from_usize_lossy(n);
    let adv: Vec<T> = ro.adv.iter().map(|&a| (a - mean) / (var.sqrt() + T::lit(1e-8))).collect();
    let x_all = policy.normalize_batch(&ro.obs)?;
    let clip = T::lit(config.clip);
    let one = T::one();
    let mut idx: Vec<usize> = (0..n).collect();
    for _ in 0..config.update_epochs {
        idx.shuffle(rng);
        for mb in idx.chunks(config.minibatch) {
            let b = mb.len();
            let inv_b = one / T::from_usize_lossy(b);
            let x = x_all.select(Axis(0), mb);

            // Policy.
            let cache = policy.mean.forward_batch(x.clone())?;
            let mut d_mu = Array2::<T>::zeros((b, 1));
            let mut d_log_std = T::zero();
            let sigma = policy.std();
            for (row, &i) in mb.iter().enumerate() {
                let mu = cache.output()[[row, 0]];
                let z = ro.raw[i];
                let lp = gaussian_logp(z, mu, policy.log_std);
                let ratio = (lp - ro.logp[i]).exp();
                if !ratio.is_finite() {
                    return Err(Error::Diverged(format!("PPO ratio {ratio}")));
                }
                let a = adv[i];
                let clipped = (a >= T::zero() && ratio > one + clip) || (a < T::zero() && ratio < one - clip);
                if !clipped {
                    // ∂(−ratio·A)/∂logp = −ratio·A
                    let dlp = -ratio * a * inv_b;
                    let s = (z - mu) / sigma;
                    d_mu[[row, 0]] = dlp * s / sigma;
                    d_log_std += dlp * (s * s - one);
                }
            }
            // Entropy bonus: H = log σ + const, so ∂(−c·H)/∂logσ = −c.
            d_log_std -= T::lit(config.entropy_coef);
            let mut g_pi = MlpGrads::zeros_like(&policy.mean);
            policy.mean.backward_batch(&cache, d_mu.view(), Some(&mut g_pi));
            let mut extra = [d_log_std];
            clip_grad(&mut g_pi, &mut extra, config.max_grad_norm);
            let mut slices = policy.mean.param_slices_mut();
            let mut log_std = [policy.log_std];
            slices.push(&mut log_std);
            let mut gs = g_pi.slices();
            gs.push(&extra);
            adam_pi.step(&mut slices, &gs, T::lit(config.lr_policy));
            policy.log_std = log_std[0];

            // Value.
            let vcache = policy.value.forward_batch(x)?;
            let mut d_v = Array2::<T>::zeros((b, 1));
            for (row, &i) in mb.iter().enumerate() {
                let target = (ro.ret[i] - policy.value_shift) / policy.value_scale;
                d_v[[row, 0]] = (vcache.output()[[row, 0]] - target) * inv_b;
            }
            let mut g_v = MlpGrads::zeros_like(&policy.value);
            policy.value.backward_batch(&vcache, d_v.view(), Some(&mut g_v));
            clip_grad(&mut g_v, &mut [], config.max_grad_norm);
            adam_v.step(&mut policy.value.param_slices_mut(), &g_v.slices(), T::lit(config.lr_value));
        }
    }
    Ok(())
}

/// Mean discounted return of deterministic (or zero-action) episodes, used
/// to compare policies on the surrogate.
pub fn evaluate_policy<T: Scalar>(
    model: &FlowMapModel<T>,
    pool: &SpinupPool<T>,
    policy: Option<&PolicyModel<T>>,
    config: &RlConfig,
    episodes: usize,
    seed: u64,
) -> Result<(f64, f64)> {
    let window_samples = config.cost.window_samples(model.dt().as_f64())?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let gamma = T::lit(config.gamma);
    let alpha = T::lit(config.alpha);
    let mut total = 0.0;
    let mut cd = 0.0;
    for _ in 0..episodes {
        let mut s = env_reset(pool, model.n_memory(), window_samples, &mut rng)?;
        let mut rewards = Vec::with_capacity(config.episode_len);
        for _ in 0..config.episode_len {
            let a = match policy {
                Some(p) => crate::rl::policy::policy_act(p, &s, true, &mut rng)?,
                None => T::zero(),
            };
            let (next, r) = env_step(model, &s, a, alpha, &config.cost)?;
            cd += next.windowed_cd().as_f64();
            rewards.push(r);
            s = next;
        }
        total += discounted_returns(&rewards, gamma)[0].as_f64();
    }
    let _ = rng.random::<u32>();
    Ok((total / episodes as f64, cd / (episodes * config.episode_len) as f64))
}
