//! One GRPO optimization step.
//!
//! For each prompt a group of `G` completions is sampled from the frozen
//! sampling policy and scored. Rewards are normalized within the group,
//!
//! ```text
//! A_i = (r_i − mean(r)) / max(std(r), advantage_eps)     (population std)
//! ```
//!
//! and every token of completion `i` receives `A_i`. Per token the loss is
//!
//! ```text
//! ρ_t   = exp(new_lp_t − old_lp_t)
//! s_t   = min(ρ_t A, clip(ρ_t, 1 − ε, 1 + ε) A)
//! k_t   = exp(ref_lp_t − new_lp_t) − (ref_lp_t − new_lp_t) − 1
//! ℓ_t   = −(s_t − β k_t)
//! ```
//!
//! averaged over the group's total token count, then over prompts. Since
//! `old_lp` and `ref_lp` are constants, `∂ℓ_t/∂θ = w_t ∇ log π_θ(o_t)` with
//! `w_t = −(ρ_t A 𝟙[unclipped] − β (1 − exp(ref_lp_t − new_lp_t)))`, so the
//! whole step gradient is a single [`weighted_logprob_grad`] call.

use alloc::vec;
use alloc::vec::Vec;
use core::fmt;

use serde::{Deserialize, Serialize};

use crate::math;
use crate::policy::{
    greedy_completion, logprobs, sample_completion, weighted_logprob_grad, Gradient, Policy, PolicyError,
    PolicyParams, Rollout, WeightedSequence,
};
use crate::rewards::{parse_response, Rewarder, TaskType};
use crate::rng;
use crate::taskgen::{encode_prompt, QAPair};
use crate::vocab::{TokenId, Vocab, VocabError};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GrpoConfig {
    pub group_size: usize,
    pub clip_eps: f64,
    pub kl_beta: f64,
    pub advantage_eps: f64,
    pub temperature: f64,
    pub max_completion_len: usize,
}

impl Default for GrpoConfig {
    fn default() -> Self {
        Self {
            group_size: 8,
            clip_eps: 0.2,
            kl_beta: 0.01,
            advantage_eps: 1e-8,
            temperature: 1.0,
            max_completion_len: 12,
        }
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ConfigError {
    #[error("group size must be at least 2, got {0}")]
    GroupSize(usize),
    #[error("clip epsilon must be positive, got {0}")]
    ClipEps(f64),
    #[error("KL beta must be nonnegative, got {0}")]
    KlBeta(f64),
    #[error("advantage epsilon must be positive, got {0}")]
    AdvantageEps(f64),
    #[error("temperature must be positive, got {0}")]
    Temperature(f64),
    #[error("max completion length must be at least 1")]
    MaxLen,
    #[error("empty prompt batch")]
    EmptyBatch,
}

impl GrpoConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.group_size < 2 {
            return Err(ConfigError::GroupSize(self.group_size));
        }
        if !(self.clip_eps > 0.0) {
            return Err(ConfigError::ClipEps(self.clip_eps));
        }
        if !(self.kl_beta >= 0.0) {
            return Err(ConfigError::KlBeta(self.kl_beta));
        }
        if !(self.advantage_eps > 0.0) {
            return Err(ConfigError::AdvantageEps(self.advantage_eps));
        }
        if !(self.temperature > 0.0 && self.temperature.is_finite()) {
            return Err(ConfigError::Temperature(self.temperature));
        }
        if self.max_completion_len == 0 {
            return Err(ConfigError::MaxLen);
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum StepError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Policy(#[from] PolicyError),
    #[error("token sequences of lengths {new}, {old}, {reference} do not line up")]
    LengthMismatch {
        new: usize,
        old: usize,
        reference: usize,
    },
}

/// A step failure: either the engine itself or the caller's reward function.
#[derive(Debug, thiserror::Error)]
pub enum GrpoError<E: fmt::Debug + fmt::Display> {
    #[error(transparent)]
    Step(#[from] StepError),
    #[error("reward function failed: {0}")]
    Reward(E),
}

impl<E: fmt::Debug + fmt::Display> From<ConfigError> for GrpoError<E> {
    fn from(e: ConfigError) -> Self {
        GrpoError::Step(e.into())
    }
}

impl<E: fmt::Debug + fmt::Display> From<PolicyError> for GrpoError<E> {
    fn from(e: PolicyError) -> Self {
        GrpoError::Step(e.into())
    }
}

/// Group-normalized advantages.
pub fn compute_advantages(rewards: &[f64], advantage_eps: f64) -> Result<Vec<f64>, ConfigError> {
    if rewards.len() < 2 {
        return Err(ConfigError::GroupSize(rewards.len()));
    }
    if !(advantage_eps > 0.0) {
        return Err(ConfigError::AdvantageEps(advantage_eps));
    }
    // Offsets from the first reward: an exactly representable shift of
    // every reward leaves these, and so the result, bit-identical.
    let base = rewards[0];
    let d: Vec<f64> = rewards.iter().map(|r| r - base).collect();
    let n = d.len() as f64;
    let mean = d.iter().sum::<f64>() / n;
    let var = d.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
    let std = math::sqrt(var);
    if std < advantage_eps {
        return Ok(vec![0.0; rewards.len()]);
    }
    Ok(d.iter().map(|x| (x - mean) / std).collect())
}

/// Per-token terms of the clipped surrogate with KL penalty.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct TokenTerms {
    /// `ℓ_t = −(s_t − β k_t)`.
    pub loss: Vec<f64>,
    /// `∂ℓ_t / ∂ log π_θ(o_t)`.
    pub weights: Vec<f64>,
    /// KL estimator `k_t ≥ 0`.
    pub kl: Vec<f64>,
    /// Whether the clipped branch won the min (surrogate gradient is zero).
    pub clipped: Vec<bool>,
}

pub fn token_loss_and_weights(
    new_lp: &[f64],
    old_lp: &[f64],
    ref_lp: &[f64],
    advantage: f64,
    cfg: &GrpoConfig,
) -> Result<TokenTerms, StepError> {
    if new_lp.len() != old_lp.len() || new_lp.len() != ref_lp.len() {
        return Err(StepError::LengthMismatch {
            new: new_lp.len(),
            old: old_lp.len(),
            reference: ref_lp.len(),
        });
    }
    let n = new_lp.len();
    let mut out = TokenTerms {
        loss: Vec::with_capacity(n),
        weights: Vec::with_capacity(n),
        kl: Vec::with_capacity(n),
        clipped: Vec::with_capacity(n),
    };
    let (lo, hi) = (1.0 - cfg.clip_eps, 1.0 + cfg.clip_eps);
    for t in 0..n {
        let ratio = math::exp(new_lp[t] - old_lp[t]);
        let clipped_ratio = ratio.clamp(lo, hi);
        let unclipped = ratio * advantage;
        let clipped = clipped_ratio * advantage;
        let surrogate = unclipped.min(clipped);
        // Inside the band both branches coincide and the gradient flows.
        let active = (lo..=hi).contains(&ratio) || unclipped < clipped;
        let diff = ref_lp[t] - new_lp[t];
        let e = math::exp(diff);
        let kl = e - diff - 1.0;
        out.loss.push(-(surrogate - cfg.kl_beta * kl));
        let surrogate_grad = if active { ratio * advantage } else { 0.0 };
        out.weights.push(-(surrogate_grad - cfg.kl_beta * (1.0 - e)));
        out.kl.push(kl.max(0.0));
        out.clipped.push(!active);
    }
    Ok(out)
}

/// One prompt's sampled group.
#[derive(Debug, Clone, PartialEq)]
pub struct Group {
    pub prompt: Vec<TokenId>,
    pub rollouts: Vec<Rollout>,
    pub rewards: Vec<f64>,
    pub advantages: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct StepStats {
    pub mean_reward: f64,
    pub mean_total_loss: f64,
    pub mean_kl: f64,
    pub clip_fraction: f64,
    pub grad_norm: f64,
}

#[derive(Debug, Clone)]
pub struct StepOutput {
    /// Gradient of the step loss (mean over prompts of the per-group loss).
    pub gradient: Gradient,
    pub stats: StepStats,
    pub groups: Vec<Group>,
}

/// Samples and scores one group per prompt. `reward_fn(prompt_index,
/// rollout)` returns the scalar reward.
pub fn sample_groups<P, F, E>(
    sampler: &P,
    vocab: &Vocab,
    prompts: &[Vec<TokenId>],
    mut reward_fn: F,
    cfg: &GrpoConfig,
    rng_seed: u64,
) -> Result<Vec<Group>, GrpoError<E>>
where
    P: Policy + ?Sized,
    F: FnMut(usize, &Rollout) -> Result<f64, E>,
    E: fmt::Debug + fmt::Display,
{
    cfg.validate()?;
    if prompts.is_empty() {
        return Err(ConfigError::EmptyBatch.into());
    }
    let mut groups = Vec::with_capacity(prompts.len());
    for (p, prompt) in prompts.iter().enumerate() {
        let mut rollouts = Vec::with_capacity(cfg.group_size);
        let mut rewards = Vec::with_capacity(cfg.group_size);
        for i in 0..cfg.group_size {
            let seed = rng::derive(rng_seed, &[p as u64, i as u64]);
            let r = sample_completion(
                sampler,
                vocab,
                prompt,
                cfg.temperature,
                cfg.max_completion_len,
                seed,
            )?;
            rewards.push(reward_fn(p, &r).map_err(GrpoError::Reward)?);
            rollouts.push(r);
        }
        let advantages = compute_advantages(&rewards, cfg.advantage_eps)?;
        groups.push(Group {
            prompt: prompt.clone(),
            rollouts,
            rewards,
            advantages,
        });
    }
    Ok(groups)
}

/// Loss, gradient and statistics of already-sampled groups. `old_lp` comes
/// from each rollout's recorded sampling log-probabilities.
pub fn groups_gradient<R: Policy + ?Sized>(
    live: &PolicyParams,
    reference: &R,
    groups: &[Group],
    cfg: &GrpoConfig,
) -> Result<(Gradient, StepStats), StepError> {
    if groups.is_empty() {
        return Err(ConfigError::EmptyBatch.into());
    }
    let mut weights: Vec<Vec<f64>> = Vec::new();
    let mut total_loss = 0.0;
    let mut kl_sum = 0.0;
    let mut clipped = 0usize;
    let mut tokens = 0usize;
    let mut reward_sum = 0.0;
    let mut n_rollouts = 0usize;
    let n_prompts = groups.len() as f64;
    for g in groups {
        let group_tokens: usize = g.rollouts.iter().map(|r| r.completion.len()).sum();
        let scale = 1.0 / (group_tokens.max(1) as f64 * n_prompts);
        for (r, &adv) in g.rollouts.iter().zip(&g.advantages) {
            let new_lp = logprobs(live, &r.prompt, &r.completion)?;
            let ref_lp = logprobs(reference, &r.prompt, &r.completion)?;
            let terms = token_loss_and_weights(&new_lp, &r.logprobs_sampling, &ref_lp, adv, cfg)?;
            total_loss += terms.loss.iter().sum::<f64>() * scale;
            kl_sum += terms.kl.iter().sum::<f64>();
            clipped += terms.clipped.iter().filter(|&&c| c).count();
            tokens += terms.loss.len();
            weights.push(terms.weights.iter().map(|w| w * scale).collect());
        }
        reward_sum += g.rewards.iter().sum::<f64>();
        n_rollouts += g.rewards.len();
    }
    let batch: Vec<WeightedSequence<'_>> = groups
        .iter()
        .flat_map(|g| g.rollouts.iter())
        .zip(&weights)
        .map(|(r, w)| WeightedSequence {
            prompt: &r.prompt,
            completion: &r.completion,
            weights: w,
        })
        .collect();
    let gradient = weighted_logprob_grad(live, &batch)?;
    let tokens_f = tokens.max(1) as f64;
    let stats = StepStats {
        mean_reward: reward_sum / n_rollouts.max(1) as f64,
        mean_total_loss: total_loss,
        mean_kl: kl_sum / tokens_f,
        clip_fraction: clipped as f64 / tokens_f,
        grad_norm: gradient.norm(),
    };
    Ok((gradient, stats))
}

/// Samples from `old`, scores, and returns the loss gradient at `live`
/// without applying it.
#[allow(clippy::too_many_arguments)]
pub fn grpo_step<O, R, F, E>(
    live: &PolicyParams,
    old: &O,
    reference: &R,
    vocab: &Vocab,
    prompts: &[Vec<TokenId>],
    reward_fn: F,
    cfg: &GrpoConfig,
    rng_seed: u64,
) -> Result<StepOutput, GrpoError<E>>
where
    O: Policy + ?Sized,
    R: Policy + ?Sized,
    F: FnMut(usize, &Rollout) -> Result<f64, E>,
    E: fmt::Debug + fmt::Display,
{
    let groups = sample_groups(old, vocab, prompts, reward_fn, cfg, rng_seed)?;
    let (gradient, stats) = groups_gradient(live, reference, &groups, cfg)?;
    Ok(StepOutput {
        gradient,
        stats,
        groups,
    })
}

/// Greedy-decoding evaluation summary. Metrics are `None` when the dataset
/// has no item of the corresponding type.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct EvalReport {
    pub n_close: usize,
    pub n_open: usize,
    pub close_accuracy: Option<f64>,
    /// Mean open-ended reward; format failures count as 0.
    pub open_score: Option<f64>,
    pub format_rate: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum EvalError {
    #[error("item {id}: {source}")]
    Encode { id: alloc::string::String, source: VocabError },
}

pub fn evaluate<P: Policy + ?Sized>(
    policy: &P,
    vocab: &Vocab,
    dataset: &[QAPair],
    rewarder: &Rewarder<'_>,
    max_len: usize,
) -> Result<EvalReport, EvalError> {
    let mut report = EvalReport::default();
    let (mut correct, mut open_sum, mut formatted) = (0.0, 0.0, 0usize);
    for qa in dataset {
        let prompt = encode_prompt(qa, vocab).map_err(|source| EvalError::Encode {
            id: qa.id.clone(),
            source,
        })?;
        let completion = greedy_completion(policy, &prompt, max_len);
        let raw = vocab
            .detokenize(&completion)
            .map_err(|source| EvalError::Encode {
                id: qa.id.clone(),
                source,
            })?;
        if parse_response(&raw).is_ok() {
            formatted += 1;
        }
        let r = rewarder.total_reward(qa.task_type, &raw, &qa.answer);
        match qa.task_type {
            TaskType::Close => {
                report.n_close += 1;
                correct += r.task_reward;
            }
            TaskType::Open => {
                report.n_open += 1;
                open_sum += r.task_reward;
            }
        }
    }
    let n = report.n_close + report.n_open;
    report.close_accuracy = (report.n_close > 0).then(|| correct / report.n_close as f64);
    report.open_score = (report.n_open > 0).then(|| open_sum / report.n_open as f64);
    report.format_rate = (n > 0).then(|| formatted as f64 / n as f64);
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn advantage_examples() {
        assert_eq!(
            compute_advantages(&[1.0, 0.0, 0.0, 1.0], 1e-8).unwrap(),
            vec![1.0, -1.0, -1.0, 1.0]
        );
        assert_eq!(
            compute_advantages(&[0.3, 0.3, 0.3], 1e-8).unwrap(),
            vec![0.0, 0.0, 0.0]
        );
        assert_eq!(
            compute_advantages(&[1.0], 1e-8),
            Err(ConfigError::GroupSize(1))
        );
    }

    #[test]
    fn identity_policies_give_unit_loss() {
        let lp = [-0.5, -1.2, -2.0];
        let t = token_loss_and_weights(&lp, &lp, &lp, 1.0, &GrpoConfig::default()).unwrap();
        for l in &t.loss {
            assert!((l + 1.0).abs() < 1e-15);
        }
        assert!(t.kl.iter().all(|&k| k == 0.0));
        assert!(t.weights.iter().all(|&w| (w + 1.0).abs() < 1e-15));
        assert!(t.clipped.iter().all(|&c| !c));
    }

    #[test]
    fn clip_binds_above_band() {
        let cfg = GrpoConfig {
            kl_beta: 0.0,
            ..GrpoConfig::default()
        };
        let new = [libm::log(1.5)];
        let t = token_loss_and_weights(&new, &[0.0], &[0.0], 1.0, &cfg).unwrap();
        assert!(t.clipped[0]);
        assert_eq!(t.weights[0], 0.0);
        assert!((t.loss[0] + 1.2).abs() < 1e-12);
        // Negative advantage: the unclipped branch is the min, gradient flows.
        let t = token_loss_and_weights(&new, &[0.0], &[0.0], -1.0, &cfg).unwrap();
        assert!(!t.clipped[0]);
        assert!((t.weights[0] - 1.5).abs() < 1e-12);
    }

    #[test]
    fn length_mismatch_rejected() {
        assert!(matches!(
            token_loss_and_weights(&[0.0], &[0.0, 0.0], &[0.0], 1.0, &GrpoConfig::default()),
            Err(StepError::LengthMismatch { .. })
        ));
    }

    #[test]
    fn config_validation() {
        let mut c = GrpoConfig::default();
        assert!(c.validate().is_ok());
        c.group_size = 1;
        assert_eq!(c.validate(), Err(ConfigError::GroupSize(1)));
        let c = GrpoConfig {
            clip_eps: 0.0,
            ..GrpoConfig::default()
        };
        assert!(c.validate().is_err());
        let c = GrpoConfig {
            kl_beta: -1.0,
            ..GrpoConfig::default()
        };
        assert!(c.validate().is_err());
    }
}
