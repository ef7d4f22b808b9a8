use cgrpo_core::grpo::{compute_advantages, groups_gradient, sample_groups, GrpoConfig, Group};
use cgrpo_core::policy::{
    apply_update, logprobs, sample_completion, weighted_logprob_grad, AdamState, Gradient, Policy,
    PolicyDims, PolicyParams, Rollout, WeightedSequence,
};
use cgrpo_core::vocab::{TokenId, Vocab};

fn scaled_params(dims: PolicyDims, seed: u64, scale: f64) -> PolicyParams {
    let mut p = PolicyParams::init(dims, seed).unwrap();
    for x in p.as_mut_slice() {
        *x *= scale;
    }
    p
}

fn ids(v: &[u32]) -> Vec<TokenId> {
    v.iter().map(|&i| TokenId(i)).collect()
}

#[test]
fn sampled_token_frequencies_match_softmax() {
    let vocab = Vocab::build(["a", "b", "c", "d"]).unwrap();
    let dims = PolicyDims { vocab: vocab.len(), context: 3, embed: 4, hidden: 8 };
    let params = scaled_params(dims, 11, 2.0);
    let prompt = ids(&[9, 10, 5]);
    let mut dist = vec![0.0; dims.vocab];
    params.next_logprobs(&prompt, &mut dist);
    let n = 100_000;
    let mut counts = vec![0usize; dims.vocab];
    for s in 0..n {
        let r = sample_completion(&params, &vocab, &prompt, 1.0, 1, s as u64).unwrap();
        counts[r.completion[0].index()] += 1;
    }
    for (tok, (&c, &lp)) in counts.iter().zip(&dist).enumerate() {
        let p = lp.exp();
        let expect = n as f64 * p;
        let sigma = (n as f64 * p * (1.0 - p)).sqrt();
        assert!(
            (c as f64 - expect).abs() <= 3.0 * sigma,
            "token {tok}: {c} samples, expected {expect:.1} ± {:.1}",
            3.0 * sigma
        );
    }
}

#[test]
fn weighted_logprob_gradient_matches_finite_differences() {
    let dims = PolicyDims { vocab: 9, context: 3, embed: 3, hidden: 6 };
    let params = scaled_params(dims, 5, 2.0);
    let prompt = ids(&[1, 7]);
    let completion = ids(&[3, 8, 8, 2, 6, 0, 4, 5, 7, 1]);
    let weights: Vec<f64> = (0..10).map(|i| (i as f64 - 4.5) / 3.0).collect();
    let objective = |p: &PolicyParams| -> f64 {
        logprobs(p, &prompt, &completion)
            .unwrap()
            .iter()
            .zip(&weights)
            .map(|(l, w)| l * w)
            .sum()
    };
    let analytic = weighted_logprob_grad(
        &params,
        &[WeightedSequence { prompt: &prompt, completion: &completion, weights: &weights }],
    )
    .unwrap();
    let h = 1e-5;
    let mut p = params.clone();
    let mut num = Vec::new();
    let mut den = Vec::new();
    for i in 0..p.as_slice().len() {
        let x = p.as_slice()[i];
        p.as_mut_slice()[i] = x + h;
        let up = objective(&p);
        p.as_mut_slice()[i] = x - h;
        let down = objective(&p);
        p.as_mut_slice()[i] = x;
        let fd = (up - down) / (2.0 * h);
        num.push(analytic.as_slice()[i] - fd);
        den.push(fd);
    }
    let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let rel = norm(&num) / norm(&den);
    assert!(rel < 1e-4, "relative error {rel:e}");
}

#[test]
fn adam_minimizes_a_quadratic() {
    let dims = PolicyDims { vocab: 1, context: 1, embed: 1, hidden: 1 };
    let mut data = vec![0.0; dims.num_params()];
    data[0] = 1.0;
    let mut params = PolicyParams::from_parts(dims, data).unwrap();
    let mut state = AdamState::new(dims);
    let mut reached = None;
    for step in 0..5000 {
        let x = params.as_slice()[0];
        if x.abs() < 1e-3 {
            reached = Some(step);
            break;
        }
        let mut g = vec![0.0; dims.num_params()];
        g[0] = 2.0 * x;
        apply_update(&mut params, &Gradient::from_parts(dims, g).unwrap(), &mut state, 0.01).unwrap();
    }
    assert!(reached.is_some(), "x = {} after 5000 steps", params.as_slice()[0]);
    assert!(params.as_slice()[1..].iter().all(|&v| v == 0.0));
}

#[test]
fn serialized_params_reproduce_logprobs_bit_for_bit() {
    let dims = PolicyDims { vocab: 12, context: 4, embed: 3, hidden: 7 };
    let params = scaled_params(dims, 8, 1.5);
    let copy = PolicyParams::from_bytes(&params.to_bytes()).unwrap();
    assert_eq!(copy, params);
    let (q, o) = (ids(&[3, 4, 11]), ids(&[2, 9, 9, 0]));
    let a = logprobs(&params, &q, &o).unwrap();
    let b = logprobs(&copy, &q, &o).unwrap();
    assert!(a.iter().zip(&b).all(|(x, y)| x.to_bits() == y.to_bits()));
}

/// With one-shot rollouts (sampler = live policy) and no KL penalty the
/// step gradient is the token-normalized REINFORCE estimator.
#[test]
fn single_use_rollouts_reduce_to_reinforce() {
    let vocab = Vocab::build(["x", "y", "z"]).unwrap();
    let dims = PolicyDims { vocab: vocab.len(), context: 4, embed: 3, hidden: 8 };
    let live = scaled_params(dims, 21, 2.0);
    let cfg = GrpoConfig { group_size: 4, kl_beta: 0.0, max_completion_len: 6, ..GrpoConfig::default() };
    let prompts = vec![ids(&[8, 9]), ids(&[10, 8, 9])];
    let groups = sample_groups(
        &live,
        &vocab,
        &prompts,
        |_, r: &Rollout| Ok::<f64, core::convert::Infallible>(r.completion.len() as f64),
        &cfg,
        99,
    )
    .unwrap();
    let (g, stats) = groups_gradient(&live, &live, &groups, &cfg).unwrap();
    assert_eq!(stats.clip_fraction, 0.0);
    let mut weights = Vec::new();
    for grp in &groups {
        let n: usize = grp.rollouts.iter().map(|r| r.completion.len()).sum();
        for (r, a) in grp.rollouts.iter().zip(&grp.advantages) {
            weights.push(vec![-a / (n as f64 * groups.len() as f64); r.completion.len()]);
        }
    }
    let batch: Vec<WeightedSequence<'_>> = groups
        .iter()
        .flat_map(|grp| &grp.rollouts)
        .zip(&weights)
        .map(|(r, w)| WeightedSequence { prompt: &r.prompt, completion: &r.completion, weights: w })
        .collect();
    let reinforce = weighted_logprob_grad(&live, &batch).unwrap();
    for (a, b) in g.as_slice().iter().zip(reinforce.as_slice()) {
        assert!((a - b).abs() <= 1e-12 * (1.0 + b.abs()), "{a} vs {b}");
    }
}

/// Three-token vocabulary, one prompt, two completions: the step gradient
/// against numerical differentiation of the loss written out by hand.
#[test]
fn tiny_instance_matches_brute_force_loss() {
    let dims = PolicyDims { vocab: 3, context: 2, embed: 2, hidden: 3 };
    let live = scaled_params(dims, 4, 2.0);
    let mut old = live.clone();
    for (i, x) in old.as_mut_slice().iter_mut().enumerate() {
        *x += 0.2 * ((i % 5) as f64 - 2.0) / 2.0;
    }
    let mut reference = live.clone();
    for (i, x) in reference.as_mut_slice().iter_mut().enumerate() {
        *x -= 0.1 * ((i % 3) as f64 - 1.0);
    }
    let cfg = GrpoConfig { group_size: 2, kl_beta: 0.1, ..GrpoConfig::default() };
    let prompt = ids(&[1]);
    let completions = [ids(&[2, 1, 0]), ids(&[1, 0])];
    let rewards = vec![1.0, 0.0];
    let group = Group {
        prompt: prompt.clone(),
        rollouts: completions
            .iter()
            .map(|c| Rollout {
                prompt: prompt.clone(),
                completion: c.clone(),
                logprobs_sampling: logprobs(&old, &prompt, c).unwrap(),
                raw_text: String::new(),
            })
            .collect(),
        advantages: compute_advantages(&rewards, 1e-8).unwrap(),
        rewards,
    };
    assert_eq!(group.advantages, vec![1.0, -1.0]);
    let loss = |p: &PolicyParams| -> f64 {
        let mut s = 0.0;
        for (r, a) in group.rollouts.iter().zip(&group.advantages) {
            let new = logprobs(p, &prompt, &r.completion).unwrap();
            let re = logprobs(&reference, &prompt, &r.completion).unwrap();
            for t in 0..new.len() {
                let rho = (new[t] - r.logprobs_sampling[t]).exp();
                let surr = (rho * a).min(rho.clamp(0.8, 1.2) * a);
                let d = re[t] - new[t];
                s += -(surr - 0.1 * (d.exp() - d - 1.0));
            }
        }
        s / 5.0
    };
    let (g, _) = groups_gradient(&live, &reference, std::slice::from_ref(&group), &cfg).unwrap();
    let h = 1e-6;
    let mut p = live.clone();
    for i in 0..p.as_slice().len() {
        let x = p.as_slice()[i];
        p.as_mut_slice()[i] = x + h;
        let up = loss(&p);
        p.as_mut_slice()[i] = x - h;
        let down = loss(&p);
        p.as_mut_slice()[i] = x;
        let fd = (up - down) / (2.0 * h);
        assert!((g.as_slice()[i] - fd).abs() <= 1e-6 * (1.0 + fd.abs()), "param {i}: {} vs {fd}", g.as_slice()[i]);
    }
}
