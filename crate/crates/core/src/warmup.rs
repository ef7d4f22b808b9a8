//! Format priming for a freshly initialized policy.
//!
//! A randomly initialized model essentially never samples the four tags in
//! order, so every reward would be zero and every group degenerate. Before
//! reinforcement training the policy is fit by maximum likelihood to
//! well-formed responses whose answers are drawn at random (a random option
//! letter for close-ended items, random observation symbols for open-ended
//! ones). The primed policy follows the format but knows nothing about the
//! task, which is the starting point an instruction-tuned backbone gives.

use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::policy::{
    apply_update, weighted_logprob_grad, AdamState, PolicyError, PolicyParams, WeightedSequence,
};
use crate::rng::{self, Rng};
use crate::taskgen::{encode_prompt, encode_response, QAPair};
use crate::vocab::{Vocab, VocabError};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WarmupConfig {
    pub steps: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub seed: u64,
}

impl Default for WarmupConfig {
    fn default() -> Self {
        Self {
            steps: 300,
            batch_size: 32,
            lr: 3e-3,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum WarmupError {
    #[error(transparent)]
    Policy(#[from] PolicyError),
    #[error(transparent)]
    Vocab(#[from] VocabError),
    #[error("no items to prime on")]
    Empty,
}

/// Mean token negative log-likelihood of the first and last steps.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct WarmupStats {
    pub first_nll: f64,
    pub last_nll: f64,
}

/// Random well-formed response for `qa`.
fn random_target(qa: &QAPair, pool: &[String], rng: &mut Rng) -> String {
    if let Some(opts) = &qa.options {
        return opts[rng.below(opts.len())].letter.clone();
    }
    let k = 1 + rng.below(3.min(pool.len()));
    let mut picked: Vec<&str> = Vec::with_capacity(k);
    while picked.len() < k {
        let s = pool[rng.below(pool.len())].as_str();
        if !picked.contains(&s) {
            picked.push(s);
        }
    }
    picked.join(", ")
}

pub fn format_warmup(
    params: &mut PolicyParams,
    vocab: &Vocab,
    items: &[QAPair],
    cfg: &WarmupConfig,
) -> Result<WarmupStats, WarmupError> {
    if items.is_empty() {
        return Err(WarmupError::Empty);
    }
    let mut pool: Vec<String> = items.iter().flat_map(|q| q.observation.iter().cloned()).collect();
    pool.sort();
    pool.dedup();
    let mut adam = AdamState::new(params.dims());
    let mut stats = WarmupStats::default();
    for step in 0..cfg.steps {
        let mut rng = Rng::new(rng::derive(cfg.seed, &[step as u64]));
        let mut seqs = Vec::with_capacity(cfg.batch_size);
        for _ in 0..cfg.batch_size {
            let qa = &items[rng.below(items.len())];
            let think = qa.observation[rng.below(qa.observation.len())].clone();
            let answer = random_target(qa, &pool, &mut rng);
            seqs.push((encode_prompt(qa, vocab)?, encode_response(vocab, &think, &answer)?));
        }
        let n_tokens: usize = seqs.iter().map(|(_, c)| c.len()).sum();
        let w = -1.0 / n_tokens as f64;
        let weights: Vec<Vec<f64>> = seqs.iter().map(|(_, c)| alloc::vec![w; c.len()]).collect();
        let batch: Vec<WeightedSequence<'_>> = seqs
            .iter()
            .zip(&weights)
            .map(|((p, c), w)| WeightedSequence {
                prompt: p,
                completion: c,
                weights: w,
            })
            .collect();
        if step == 0 || step + 1 == cfg.steps {
            let nll = batch_nll(params, &batch)?;
            if step == 0 {
                stats.first_nll = nll;
            }
            stats.last_nll = nll;
        }
        let grad = weighted_logprob_grad(params, &batch)?;
        apply_update(params, &grad, &mut adam, cfg.lr)?;
    }
    Ok(stats)
}

fn batch_nll(params: &PolicyParams, batch: &[WeightedSequence<'_>]) -> Result<f64, PolicyError> {
    let mut total = 0.0;
    let mut n = 0usize;
    for item in batch {
        let lp = crate::policy::logprobs(params, item.prompt, item.completion)?;
        total -= lp.iter().sum::<f64>();
        n += lp.len();
    }
    Ok(total / n.max(1) as f64)
}
