//! Independent reference implementations shared by the integration tests.
//! Nothing here calls the metric or loss code under test.
#![allow(dead_code)]

use cgrpo_core::grpo::{compute_advantages, GrpoConfig, Group};
use cgrpo_core::policy::{logprobs, PolicyDims, PolicyParams, Rollout};
use cgrpo_core::rng::Rng;
use cgrpo_core::vocab::TokenId;

pub fn o_tokens(s: &str) -> Vec<String> {
    s.chars()
        .map(|c| if c.is_alphanumeric() { c } else { ' ' })
        .collect::<String>()
        .to_lowercase()
        .split_whitespace()
        .map(str::to_string)
        .collect()
}

/// Clipped overlap by greedy one-to-one matching against unused reference
/// tokens.
fn o_overlap(cand: &[String], refr: &[String]) -> f64 {
    let mut used = vec![false; refr.len()];
    let mut hits = 0;
    for c in cand {
        if let Some(j) = (0..refr.len()).find(|&j| !used[j] && refr[j] == *c) {
            used[j] = true;
            hits += 1;
        }
    }
    hits as f64
}

pub fn o_bleu1(cand: &str, refr: &str) -> f64 {
    let (c, r) = (o_tokens(cand), o_tokens(refr));
    if c.is_empty() {
        return 0.0;
    }
    let bp = if c.len() > r.len() {
        1.0
    } else {
        (1.0 - r.len() as f64 / c.len() as f64).exp()
    };
    bp * o_overlap(&c, &r) / c.len() as f64
}

pub fn o_rouge1(cand: &str, refr: &str) -> f64 {
    let (c, r) = (o_tokens(cand), o_tokens(refr));
    let m = o_overlap(&c, &r);
    if c.is_empty() || r.is_empty() || m == 0.0 {
        return 0.0;
    }
    let (p, rc) = (m / c.len() as f64, m / r.len() as f64);
    2.0 * p * rc / (p + rc)
}

fn o_trigrams(s: &str) -> Vec<String> {
    let padded: Vec<char> = format!(" {} ", s.to_lowercase()).chars().collect();
    (0..padded.len().saturating_sub(2))
        .map(|i| padded[i..i + 3].iter().collect())
        .collect()
}

/// Cosine of trigram count vectors via pairwise equality counts.
pub fn o_trigram_cosine(a: &str, b: &str) -> f64 {
    let (ta, tb) = (o_trigrams(a), o_trigrams(b));
    let pairs = |x: &[String], y: &[String]| -> f64 {
        x.iter().map(|p| y.iter().filter(|q| *q == p).count() as f64).sum()
    };
    let na = pairs(&ta, &ta);
    let nb = pairs(&tb, &tb);
    if na == 0.0 || nb == 0.0 {
        return 0.0;
    }
    (pairs(&ta, &tb) / (na.sqrt() * nb.sqrt())).min(1.0)
}

pub fn o_open(pred: &str, gold: &str, lambda: f64) -> f64 {
    lambda / 2.0 * (o_bleu1(pred, gold) + o_rouge1(pred, gold))
        + (1.0 - lambda) * o_trigram_cosine(pred, gold)
}

const WORDS: &[&str] = &[
    "lung", "Right", "left", "liver", "CT", "mri", "x-ray", "mass", "the", "of", "a", "kidney",
    "heart,", "effusion.", "lobe", "Lung", "2", "bilateral",
];

/// Random word salad, sometimes with stray punctuation or empty.
pub fn random_text(rng: &mut Rng) -> String {
    let n = rng.below(6);
    let mut words: Vec<String> = (0..n).map(|_| WORDS[rng.below(WORDS.len())].to_string()).collect();
    if rng.below(5) == 0 {
        words.push("!?".into());
    }
    words.join(if rng.below(4) == 0 { "  " } else { " " })
}

pub struct FixtureRecord {
    pub raw: String,
    pub gold: String,
    pub task_type: &'static str,
    pub expected_total: f64,
}

/// Reward fixture computed with the oracle metrics (λ = 0.7, γ = 0.8).
pub fn golden_fixture(n: usize, seed: u64) -> Vec<FixtureRecord> {
    let (lambda, gamma) = (0.7, 0.8);
    let mut rng = Rng::new(seed);
    let letters = ["A", "B", "C", "D"];
    (0..n)
        .map(|i| match i % 4 {
            0 | 1 => {
                let mut pred = random_text(&mut rng);
                let gold = random_text(&mut rng);
                if rng.below(4) == 0 {
                    pred = gold.clone();
                }
                let pred = pred.trim().to_string();
                FixtureRecord {
                    raw: format!("<think>{}</think><answer>{pred}</answer>", random_text(&mut rng)),
                    expected_total: gamma * o_open(&pred, &gold, lambda) + (1.0 - gamma),
                    gold,
                    task_type: "open",
                }
            }
            2 => {
                let gold = letters[rng.below(4)];
                let pred = letters[rng.below(4)];
                let shown = if rng.below(2) == 0 { pred.to_lowercase() } else { format!(" {pred} ") };
                FixtureRecord {
                    raw: format!("<think>t</think>\n<answer>{shown}</answer>"),
                    gold: gold.to_string(),
                    task_type: "close",
                    expected_total: gamma * f64::from(u8::from(pred == gold)) + (1.0 - gamma),
                }
            }
            _ => {
                let bad = [
                    "C",
                    "<answer>C</answer><think>x</think>",
                    "<think>x</think>",
                    "<think>a</think><answer>b</answer> extra",
                    "<think>a</think><think>a</think><answer>b</answer>",
                ];
                FixtureRecord {
                    raw: bad[rng.below(bad.len())].to_string(),
                    gold: "C".into(),
                    task_type: if rng.below(2) == 0 { "close" } else { "open" },
                    expected_total: 0.0,
                }
            }
        })
        .collect()
}

pub fn fixture_jsonl(records: &[FixtureRecord]) -> String {
    records
        .iter()
        .enumerate()
        .map(|(i, r)| {
            serde_json::json!({
                "id": format!("g{i:03}"),
                "raw": r.raw,
                "gold": r.gold,
                "task_type": r.task_type,
                "expected_total": r.expected_total,
            })
            .to_string()
                + "\n"
        })
        .collect()
}

/// A small random GRPO instance with hand-built groups.
pub struct FdInstance {
    pub live: PolicyParams,
    pub old: PolicyParams,
    pub reference: PolicyParams,
    pub groups: Vec<Group>,
    pub cfg: GrpoConfig,
}

fn perturbed(p: &PolicyParams, rng: &mut Rng, scale: f64) -> PolicyParams {
    let mut q = p.clone();
    for x in q.as_mut_slice() {
        *x += scale * (2.0 * rng.uniform() - 1.0);
    }
    q
}

fn random_tokens(rng: &mut Rng, vocab: usize, len: usize) -> Vec<TokenId> {
    (0..len).map(|_| TokenId(rng.below(vocab) as u32)).collect()
}

pub fn fd_instance(seed: u64) -> FdInstance {
    let mut rng = Rng::new(seed);
    let dims = PolicyDims {
        vocab: 3 + rng.below(10),
        context: 1 + rng.below(4),
        embed: 2 + rng.below(3),
        hidden: 4 + rng.below(13),
    };
    let mut live = PolicyParams::init(dims, seed).expect("dims");
    for x in live.as_mut_slice() {
        *x *= 3.0;
    }
    let old = perturbed(&live, &mut rng, 0.15);
    let reference = perturbed(&live, &mut rng, 0.3);
    let cfg = GrpoConfig {
        group_size: 2 + rng.below(3),
        kl_beta: 0.05 + 0.5 * rng.uniform(),
        ..GrpoConfig::default()
    };
    let groups = (0..1 + rng.below(3))
        .map(|_| {
            let len = 1 + rng.below(5);
            let prompt = random_tokens(&mut rng, dims.vocab, len);
            let rollouts: Vec<Rollout> = (0..cfg.group_size)
                .map(|_| {
                    let len = 1 + rng.below(10);
                    let completion = random_tokens(&mut rng, dims.vocab, len);
                    Rollout {
                        logprobs_sampling: logprobs(&old, &prompt, &completion).expect("ids"),
                        prompt: prompt.clone(),
                        completion,
                        raw_text: String::new(),
                    }
                })
                .collect();
            let rewards: Vec<f64> = rollouts.iter().map(|_| rng.uniform()).collect();
            Group {
                advantages: compute_advantages(&rewards, cfg.advantage_eps).expect("group"),
                prompt,
                rollouts,
                rewards,
            }
        })
        .collect();
    FdInstance {
        live,
        old,
        reference,
        groups,
        cfg,
    }
}

/// Materialized step loss: mean over prompts of the token-summed clipped
/// surrogate with k3 penalty, normalized by the group's token count.
#[allow(clippy::needless_range_loop)]
pub fn o_step_loss(params: &PolicyParams, inst: &FdInstance) -> f64 {
    let eps = inst.cfg.clip_eps;
    let beta = inst.cfg.kl_beta;
    let mut total = 0.0;
    for g in &inst.groups {
        let n_tok: usize = g.rollouts.iter().map(|r| r.completion.len()).sum();
        let mut s = 0.0;
        for (r, &a) in g.rollouts.iter().zip(&g.advantages) {
            let new = logprobs(params, &r.prompt, &r.completion).expect("ids");
            let re = logprobs(&inst.reference, &r.prompt, &r.completion).expect("ids");
            for t in 0..new.len() {
                let rho = (new[t] - r.logprobs_sampling[t]).exp();
                let surr = (rho * a).min(rho.clamp(1.0 - eps, 1.0 + eps) * a);
                let d = re[t] - new[t];
                s -= surr - beta * (d.exp() - d - 1.0);
            }
        }
        total += s / n_tok as f64;
    }
    total / inst.groups.len() as f64
}

/// Smallest distance of any ratio to a clip boundary. Finite differences
/// are meaningless when it is tiny.
pub fn min_kink_distance(inst: &FdInstance) -> f64 {
    let eps = inst.cfg.clip_eps;
    let mut m = f64::INFINITY;
    for g in &inst.groups {
        for r in &g.rollouts {
            let new = logprobs(&inst.live, &r.prompt, &r.completion).expect("ids");
            for (lp, old) in new.iter().zip(&r.logprobs_sampling) {
                let rho = (lp - old).exp();
                m = m.min((rho - (1.0 - eps)).abs()).min((rho - (1.0 + eps)).abs());
            }
        }
    }
    m
}

pub fn central_difference(inst: &FdInstance, h: f64) -> Vec<f64> {
    let mut p = inst.live.clone();
    (0..p.as_slice().len())
        .map(|i| {
            let x0 = p.as_slice()[i];
            p.as_mut_slice()[i] = x0 + h;
            let up = o_step_loss(&p, inst);
            p.as_mut_slice()[i] = x0 - h;
            let down = o_step_loss(&p, inst);
            p.as_mut_slice()[i] = x0;
            (up - down) / (2.0 * h)
        })
        .collect()
}

/// `‖a − b‖ / max(‖a‖, ‖b‖)`.
pub fn relative_error(a: &[f64], b: &[f64]) -> f64 {
    let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let diff: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    let scale = norm(a).max(norm(b));
    if scale == 0.0 {
        0.0
    } else {
        norm(&diff) / scale
    }
}
