//! The autoregressive policy contract and the built-in tiny language model.
//!
//! The model reads the last `K` tokens of the sequence, concatenates their
//! embeddings (missing positions at the start of a sequence contribute zero
//! vectors), applies one tanh hidden layer and a softmax output layer:
//!
//! ```text
//! x      = [emb(t_{n-K}); …; emb(t_{n-1})]
//! h      = tanh(W1 x + b1)
//! logits = W2 h + b2
//! ```
//!
//! Gradients are derived by hand in [`weighted_logprob_grad`].

use alloc::string::String;
use alloc::sync::Arc;
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::math;
use crate::rng::Rng;
use crate::vocab::{TokenId, Vocab, VocabError, EOS};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum PolicyError {
    #[error("{0} must be at least 1")]
    ZeroDim(&'static str),
    #[error("token id {0} out of range")]
    TokenOutOfRange(u32),
    #[error("shape mismatch: expected {expected} values, got {got}")]
    ShapeMismatch { expected: usize, got: usize },
    #[error("sequence of {tokens} tokens paired with {weights} weights")]
    LengthMismatch { tokens: usize, weights: usize },
    #[error("non-finite gradient rejected")]
    Divergence,
    #[error("temperature must be positive, got {0}")]
    BadTemperature(f64),
    #[error("malformed parameter blob: {0}")]
    Decode(&'static str),
}

impl From<VocabError> for PolicyError {
    fn from(e: VocabError) -> Self {
        match e {
            VocabError::OutOfRange(id) => PolicyError::TokenOutOfRange(id),
            _ => PolicyError::Decode("vocabulary"),
        }
    }
}

/// Anything that yields a next-token distribution over a fixed vocabulary.
pub trait Policy {
    fn vocab_size(&self) -> usize;

    /// Writes `log π(· | sequence)` into `out` (length `vocab_size`).
    fn next_logprobs(&self, sequence: &[TokenId], out: &mut [f64]);
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PolicyDims {
    pub vocab: usize,
    pub context: usize,
    pub embed: usize,
    pub hidden: usize,
}

impl PolicyDims {
    pub fn validate(&self) -> Result<(), PolicyError> {
        for (name, v) in [
            ("vocab size", self.vocab),
            ("context window", self.context),
            ("embedding dim", self.embed),
            ("hidden dim", self.hidden),
        ] {
            if v == 0 {
                return Err(PolicyError::ZeroDim(name));
            }
        }
        Ok(())
    }

    fn input(&self) -> usize {
        self.context * self.embed
    }

    /// Offsets of (emb, w1, b1, w2, b2, end) in the flat buffer.
    fn offsets(&self) -> [usize; 6] {
        let emb = 0;
        let w1 = emb + self.vocab * self.embed;
        let b1 = w1 + self.hidden * self.input();
        let w2 = b1 + self.hidden;
        let b2 = w2 + self.vocab * self.hidden;
        [emb, w1, b1, w2, b2, b2 + self.vocab]
    }

    pub fn num_params(&self) -> usize {
        self.offsets()[5]
    }
}

/// Flat parameter buffer of the tiny LM. Gradients and optimizer moments use
/// the same layout.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicyParams {
    dims: PolicyDims,
    data: Vec<f64>,
}

struct View<'a> {
    emb: &'a [f64],
    w1: &'a [f64],
    b1: &'a [f64],
    w2: &'a [f64],
    b2: &'a [f64],
}

fn split<'a>(dims: &PolicyDims, data: &'a [f64]) -> View<'a> {
    let o = dims.offsets();
    View {
        emb: &data[o[0]..o[1]],
        w1: &data[o[1]..o[2]],
        b1: &data[o[2]..o[3]],
        w2: &data[o[3]..o[4]],
        b2: &data[o[4]..o[5]],
    }
}

pub fn init_params(
    vocab: &Vocab,
    context_window: usize,
    embed_dim: usize,
    hidden_dim: usize,
    seed: u64,
) -> Result<PolicyParams, PolicyError> {
    let dims = PolicyDims {
        vocab: vocab.len(),
        context: context_window,
        embed: embed_dim,
        hidden: hidden_dim,
    };
    PolicyParams::init(dims, seed)
}

impl PolicyParams {
    /// Weights uniform with standard deviation `1/√fan_in`, biases zero.
    pub fn init(dims: PolicyDims, seed: u64) -> Result<Self, PolicyError> {
        dims.validate()?;
        let o = dims.offsets();
        let mut data = vec![0.0; o[5]];
        let mut rng = Rng::new(seed);
        let sqrt3 = math::sqrt(3.0);
        let mut fill = |slice: &mut [f64], fan_in: usize| {
            let a = sqrt3 / math::sqrt(fan_in as f64);
            for x in slice {
                *x = (2.0 * rng.uniform() - 1.0) * a;
            }
        };
        fill(&mut data[o[0]..o[1]], 1);
        fill(&mut data[o[1]..o[2]], dims.input());
        fill(&mut data[o[3]..o[4]], dims.hidden);
        Ok(Self { dims, data })
    }

    pub fn from_parts(dims: PolicyDims, data: Vec<f64>) -> Result<Self, PolicyError> {
        dims.validate()?;
        if data.len() != dims.num_params() {
            return Err(PolicyError::ShapeMismatch {
                expected: dims.num_params(),
                got: data.len(),
            });
        }
        Ok(Self { dims, data })
    }

    pub fn dims(&self) -> PolicyDims {
        self.dims
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    /// Little-endian dump: four u64 dims followed by the f64 buffer.
    pub fn to_bytes(&self) -> Vec<u8> {
        let d = self.dims;
        let mut out = Vec::with_capacity(32 + 8 * self.data.len());
        for v in [d.vocab, d.context, d.embed, d.hidden] {
            out.extend_from_slice(&(v as u64).to_le_bytes());
        }
        for x in &self.data {
            out.extend_from_slice(&x.to_bits().to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, PolicyError> {
        if bytes.len() < 32 || !(bytes.len() - 32).is_multiple_of(8) {
            return Err(PolicyError::Decode("truncated"));
        }
        let word = |i: usize| {
            let mut b = [0u8; 8];
            b.copy_from_slice(&bytes[8 * i..8 * i + 8]);
            u64::from_le_bytes(b)
        };
        let dims = PolicyDims {
            vocab: word(0) as usize,
            context: word(1) as usize,
            embed: word(2) as usize,
            hidden: word(3) as usize,
        };
        let data = (4..bytes.len() / 8).map(|i| f64::from_bits(word(i))).collect();
        Self::from_parts(dims, data)
    }

    fn view(&self) -> View<'_> {
        split(&self.dims, &self.data)
    }

    fn forward(&self, sequence: &[TokenId], fw: &mut Forward) {
        let d = self.dims;
        let p = self.view();
        fw.ctx.clear();
        let start = sequence.len().saturating_sub(d.context);
        let pad = d.context - (sequence.len() - start);
        fw.ctx.extend(core::iter::repeat_n(None, pad));
        fw.ctx.extend(sequence[start..].iter().map(|&t| Some(t)));

        fw.x.clear();
        for slot in &fw.ctx {
            match slot {
                Some(t) => {
                    let i = t.index() * d.embed;
                    fw.x.extend_from_slice(&p.emb[i..i + d.embed]);
                }
                None => fw.x.extend(core::iter::repeat_n(0.0, d.embed)),
            }
        }
        fw.h.clear();
        let n_in = d.input();
        for j in 0..d.hidden {
            let row = &p.w1[j * n_in..(j + 1) * n_in];
            let z: f64 = p.b1[j] + dot(row, &fw.x);
            fw.h.push(math::tanh(z));
        }
        fw.logp.clear();
        for v in 0..d.vocab {
            let row = &p.w2[v * d.hidden..(v + 1) * d.hidden];
            fw.logp.push(p.b2[v] + dot(row, &fw.h));
        }
        let lse = math::log_sum_exp(&fw.logp);
        for l in &mut fw.logp {
            *l -= lse;
        }
    }
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[derive(Default)]
struct Forward {
    ctx: Vec<Option<TokenId>>,
    x: Vec<f64>,
    h: Vec<f64>,
    logp: Vec<f64>,
}

impl Policy for PolicyParams {
    fn vocab_size(&self) -> usize {
        self.dims.vocab
    }

    fn next_logprobs(&self, sequence: &[TokenId], out: &mut [f64]) {
        let mut fw = Forward::default();
        self.forward(sequence, &mut fw);
        out.copy_from_slice(&fw.logp);
    }
}

/// Immutable, cheaply clonable copy of a parameter set, used as the sampling
/// policy and the KL reference.
#[derive(Debug, Clone, PartialEq)]
pub struct Snapshot(Arc<PolicyParams>);

pub fn snapshot(params: &PolicyParams) -> Snapshot {
    Snapshot(Arc::new(params.clone()))
}

impl Snapshot {
    pub fn params(&self) -> &PolicyParams {
        &self.0
    }

    pub fn to_params(&self) -> PolicyParams {
        (*self.0).clone()
    }
}

impl Policy for Snapshot {
    fn vocab_size(&self) -> usize {
        self.0.vocab_size()
    }

    fn next_logprobs(&self, sequence: &[TokenId], out: &mut [f64]) {
        self.0.next_logprobs(sequence, out)
    }
}

impl<P: Policy + ?Sized> Policy for &P {
    fn vocab_size(&self) -> usize {
        (**self).vocab_size()
    }

    fn next_logprobs(&self, sequence: &[TokenId], out: &mut [f64]) {
        (**self).next_logprobs(sequence, out)
    }
}

fn check_ids(vocab: usize, ids: &[TokenId]) -> Result<(), PolicyError> {
    match ids.iter().find(|t| t.index() >= vocab) {
        Some(t) => Err(PolicyError::TokenOutOfRange(t.0)),
        None => Ok(()),
    }
}

/// Per-token `log π(completion[t] | prompt ++ completion[..t])`.
pub fn logprobs<P: Policy + ?Sized>(
    policy: &P,
    prompt: &[TokenId],
    completion: &[TokenId],
) -> Result<Vec<f64>, PolicyError> {
    let v = policy.vocab_size();
    check_ids(v, prompt)?;
    check_ids(v, completion)?;
    let mut seq = Vec::with_capacity(prompt.len() + completion.len());
    seq.extend_from_slice(prompt);
    let mut dist = vec![0.0; v];
    let mut out = Vec::with_capacity(completion.len());
    for &tok in completion {
        policy.next_logprobs(&seq, &mut dist);
        out.push(dist[tok.index()]);
        seq.push(tok);
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Rollout {
    pub prompt: Vec<TokenId>,
    pub completion: Vec<TokenId>,
    /// Log-probabilities of each completion token under the sampling policy
    /// at temperature 1.
    pub logprobs_sampling: Vec<f64>,
    pub raw_text: String,
}

/// Ancestral sampling until EOS or `max_len` tokens.
pub fn sample_completion<P: Policy + ?Sized>(
    policy: &P,
    vocab: &Vocab,
    prompt: &[TokenId],
    temperature: f64,
    max_len: usize,
    rng_seed: u64,
) -> Result<Rollout, PolicyError> {
    if !(temperature > 0.0 && temperature.is_finite()) {
        return Err(PolicyError::BadTemperature(temperature));
    }
    let v = policy.vocab_size();
    check_ids(v, prompt)?;
    let mut rng = Rng::new(rng_seed);
    let mut seq = prompt.to_vec();
    let mut dist = vec![0.0; v];
    let mut weights = vec![0.0; v];
    let mut completion = Vec::new();
    let mut lps = Vec::new();
    while completion.len() < max_len {
        policy.next_logprobs(&seq, &mut dist);
        let top = dist.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        for (w, &lp) in weights.iter_mut().zip(&dist) {
            *w = math::exp((lp - top) / temperature);
        }
        let tok = TokenId(rng.categorical(&weights) as u32);
        completion.push(tok);
        lps.push(dist[tok.index()]);
        seq.push(tok);
        if tok == EOS {
            break;
        }
    }
    let raw_text = vocab.detokenize(&completion)?;
    Ok(Rollout {
        prompt: prompt.to_vec(),
        completion,
        logprobs_sampling: lps,
        raw_text,
    })
}

/// Argmax decoding until EOS or `max_len` tokens. Ties go to the lowest id.
pub fn greedy_completion<P: Policy + ?Sized>(
    policy: &P,
    prompt: &[TokenId],
    max_len: usize,
) -> Vec<TokenId> {
    let mut seq = prompt.to_vec();
    let mut dist = vec![0.0; policy.vocab_size()];
    let mut out = Vec::new();
    while out.len() < max_len {
        policy.next_logprobs(&seq, &mut dist);
        let mut best = 0;
        for (i, &lp) in dist.iter().enumerate() {
            if lp > dist[best] {
                best = i;
            }
        }
        let tok = TokenId(best as u32);
        out.push(tok);
        seq.push(tok);
        if tok == EOS {
            break;
        }
    }
    out
}

/// Gradient buffer in the parameter layout.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradient {
    dims: PolicyDims,
    data: Vec<f64>,
}

impl Gradient {
    pub fn zeros(dims: PolicyDims) -> Self {
        Self {
            dims,
            data: vec![0.0; dims.num_params()],
        }
    }

    pub fn from_parts(dims: PolicyDims, data: Vec<f64>) -> Result<Self, PolicyError> {
        if data.len() != dims.num_params() {
            return Err(PolicyError::ShapeMismatch {
                expected: dims.num_params(),
                got: data.len(),
            });
        }
        Ok(Self { dims, data })
    }

    pub fn dims(&self) -> PolicyDims {
        self.dims
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn norm(&self) -> f64 {
        math::l2_norm(&self.data)
    }

    pub fn scale(&mut self, s: f64) {
        for x in &mut self.data {
            *x *= s;
        }
    }

    /// `self += s · other`.
    pub fn add_scaled(&mut self, other: &Gradient, s: f64) -> Result<(), PolicyError> {
        if other.dims != self.dims {
            return Err(PolicyError::ShapeMismatch {
                expected: self.data.len(),
                got: other.data.len(),
            });
        }
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += s * b;
        }
        Ok(())
    }
}

/// One training sequence with a weight per completion token.
#[derive(Debug, Clone, Copy)]
pub struct WeightedSequence<'a> {
    pub prompt: &'a [TokenId],
    pub completion: &'a [TokenId],
    pub weights: &'a [f64],
}

/// `∇_θ Σ_batch Σ_t w_t · log π_θ(o_t | ctx_t)`.
pub fn weighted_logprob_grad(
    params: &PolicyParams,
    batch: &[WeightedSequence<'_>],
) -> Result<Gradient, PolicyError> {
    let d = params.dims;
    let mut grad = Gradient::zeros(d);
    let o = d.offsets();
    let p = params.view();
    let n_in = d.input();
    let mut fw = Forward::default();
    let mut dlogit = vec![0.0; d.vocab];
    let mut dz = vec![0.0; d.hidden];
    let mut seq = Vec::new();
    for item in batch {
        if item.completion.len() != item.weights.len() {
            return Err(PolicyError::LengthMismatch {
                tokens: item.completion.len(),
                weights: item.weights.len(),
            });
        }
        check_ids(d.vocab, item.prompt)?;
        check_ids(d.vocab, item.completion)?;
        seq.clear();
        seq.extend_from_slice(item.prompt);
        for (&tok, &w) in item.completion.iter().zip(item.weights) {
            if w != 0.0 {
                params.forward(&seq, &mut fw);
                // d(w · log softmax_y)/d logits = w (onehot_y − softmax)
                for (g, &lp) in dlogit.iter_mut().zip(&fw.logp) {
                    *g = -w * math::exp(lp);
                }
                dlogit[tok.index()] += w;

                let g = &mut grad.data;
                for (v, &dl) in dlogit.iter().enumerate() {
                    g[o[4] + v] += dl;
                    let row = &mut g[o[3] + v * d.hidden..o[3] + (v + 1) * d.hidden];
                    for (r, &h) in row.iter_mut().zip(&fw.h) {
                        *r += dl * h;
                    }
                }
                for (j, dzj) in dz.iter_mut().enumerate() {
                    let back: f64 = dlogit
                        .iter()
                        .enumerate()
                        .map(|(v, &dl)| dl * p.w2[v * d.hidden + j])
                        .sum();
                    *dzj = back * (1.0 - fw.h[j] * fw.h[j]);
                }
                for (j, &dzj) in dz.iter().enumerate() {
                    g[o[2] + j] += dzj;
                    let row = &mut g[o[1] + j * n_in..o[1] + (j + 1) * n_in];
                    for (r, &x) in row.iter_mut().zip(&fw.x) {
                        *r += dzj * x;
                    }
                }
                for (slot, t) in fw.ctx.iter().enumerate() {
                    let Some(t) = t else { continue };
                    for e in 0..d.embed {
                        let col = slot * d.embed + e;
                        let back: f64 = dz
                            .iter()
                            .enumerate()
                            .map(|(j, &dzj)| dzj * p.w1[j * n_in + col])
                            .sum();
                        g[o[0] + t.index() * d.embed + e] += back;
                    }
                }
            }
            seq.push(tok);
        }
    }
    Ok(grad)
}

/// Adam moments and step counter.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub t: u64,
}

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

impl AdamState {
    pub fn new(dims: PolicyDims) -> Self {
        let n = dims.num_params();
        Self {
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
        }
    }
}

/// One bias-corrected Adam step descending `grad` (the gradient of the loss).
/// A gradient with any non-finite entry is rejected before anything changes.
pub fn apply_update(
    params: &mut PolicyParams,
    grad: &Gradient,
    state: &mut AdamState,
    lr: f64,
) -> Result<(), PolicyError> {
    let n = params.data.len();
    if grad.data.len() != n || state.m.len() != n || state.v.len() != n {
        return Err(PolicyError::ShapeMismatch {
            expected: n,
            got: grad.data.len(),
        });
    }
    if grad.data.iter().any(|g| !g.is_finite()) {
        return Err(PolicyError::Divergence);
    }
    state.t += 1;
    let t = state.t as i32;
    let c1 = 1.0 - libm::pow(ADAM_BETA1, t as f64);
    let c2 = 1.0 - libm::pow(ADAM_BETA2, t as f64);
    for i in 0..n {
        let g = grad.data[i];
        state.m[i] = ADAM_BETA1 * state.m[i] + (1.0 - ADAM_BETA1) * g;
        state.v[i] = ADAM_BETA2 * state.v[i] + (1.0 - ADAM_BETA2) * g * g;
        let mhat = state.m[i] / c1;
        let vhat = state.v[i] / c2;
        params.data[i] -= lr * mhat / (math::sqrt(vhat) + ADAM_EPS);
    }
    if !params.is_finite() {
        return Err(PolicyError::Divergence);
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy_vocab() -> Vocab {
        Vocab::build(["a", "b", "c", "d"]).unwrap()
    }

    fn toy(seed: u64) -> PolicyParams {
        init_params(&toy_vocab(), 3, 2, 5, seed).unwrap()
    }

    #[test]
    fn init_is_deterministic_and_seeded() {
        assert_eq!(toy(1), toy(1));
        assert_ne!(toy(1), toy(2));
        assert_eq!(
            init_params(&toy_vocab(), 3, 2, 0, 1),
            Err(PolicyError::ZeroDim("hidden dim"))
        );
        let p = toy(1);
        let d = p.dims();
        let o = d.offsets();
        assert!(p.as_slice()[o[2]..o[3]].iter().all(|&b| b == 0.0));
        assert!(p.as_slice()[o[4]..o[5]].iter().all(|&b| b == 0.0));
    }

    #[test]
    fn distributions_normalize() {
        let p = toy(3);
        let mut out = vec![0.0; p.vocab_size()];
        for seq in [&[][..], &[TokenId(8)][..], &[TokenId(9), TokenId(1), TokenId(2), TokenId(3)][..]] {
            p.next_logprobs(seq, &mut out);
            let s: f64 = out.iter().map(|&l| libm::exp(l)).sum();
            assert!((s - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn logprobs_edges() {
        let p = toy(3);
        assert!(logprobs(&p, &[TokenId(8)], &[]).unwrap().is_empty());
        assert_eq!(
            logprobs(&p, &[TokenId(80)], &[TokenId(1)]),
            Err(PolicyError::TokenOutOfRange(80))
        );
        let a = logprobs(&p, &[TokenId(8)], &[TokenId(9), TokenId(10)]).unwrap();
        let q = PolicyParams::from_bytes(&p.to_bytes()).unwrap();
        let b = logprobs(&q, &[TokenId(8)], &[TokenId(9), TokenId(10)]).unwrap();
        assert_eq!(a, b);
        assert!(a.iter().all(|&x| x <= 0.0));
    }

    #[test]
    fn sampling_is_deterministic() {
        let v = toy_vocab();
        let p = toy(5);
        let a = sample_completion(&p, &v, &[TokenId(8)], 1.0, 6, 42).unwrap();
        let b = sample_completion(&p, &v, &[TokenId(8)], 1.0, 6, 42).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.completion.len(), a.logprobs_sampling.len());
        let one = sample_completion(&p, &v, &[TokenId(8)], 1.0, 1, 7).unwrap();
        assert_eq!(one.completion.len(), 1);
        assert!(sample_completion(&p, &v, &[], 0.0, 1, 7).is_err());
    }

    #[test]
    fn zero_weights_zero_gradient() {
        let p = toy(2);
        let prompt = [TokenId(8)];
        let comp = [TokenId(9), TokenId(2)];
        let g = weighted_logprob_grad(
            &p,
            &[WeightedSequence {
                prompt: &prompt,
                completion: &comp,
                weights: &[0.0, 0.0],
            }],
        )
        .unwrap();
        assert!(g.as_slice().iter().all(|&x| x == 0.0));
        assert!(matches!(
            weighted_logprob_grad(
                &p,
                &[WeightedSequence {
                    prompt: &prompt,
                    completion: &comp,
                    weights: &[1.0],
                }]
            ),
            Err(PolicyError::LengthMismatch { .. })
        ));
    }

    #[test]
    fn adam_zero_grad_is_fixed_point() {
        let mut p = toy(2);
        let before = p.clone();
        let mut st = AdamState::new(p.dims());
        let zero = Gradient::zeros(p.dims());
        apply_update(&mut p, &zero, &mut st, 1e-3).unwrap();
        assert_eq!(p, before);
        assert_eq!(st.t, 1);
    }

    #[test]
    fn adam_rejects_nan() {
        let mut p = toy(2);
        let before = p.clone();
        let mut st = AdamState::new(p.dims());
        let mut g = Gradient::zeros(p.dims());
        g.data[3] = f64::NAN;
        assert_eq!(apply_update(&mut p, &g, &mut st, 1e-3), Err(PolicyError::Divergence));
        assert_eq!(p, before);
        assert_eq!(st.t, 0);
    }

    #[test]
    fn snapshot_is_isolated() {
        let mut p = toy(4);
        let s = snapshot(&p);
        let lp_before = logprobs(&s, &[TokenId(8)], &[TokenId(9)]).unwrap();
        p.as_mut_slice()[0] += 1.0;
        p.as_mut_slice()[40] -= 1.0;
        assert_eq!(logprobs(&s, &[TokenId(8)], &[TokenId(9)]).unwrap(), lp_before);
        assert_eq!(snapshot(s.params()), s);
    }
}
