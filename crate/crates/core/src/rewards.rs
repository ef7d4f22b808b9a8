//! Rule-based reward signals: exact match for close-ended answers, lexical
//! overlap plus a pluggable semantic scorer for open-ended answers, a strict
//! tag-format check, and the weighted total.

use alloc::boxed::Box;
use alloc::collections::BTreeMap;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::math;

/// Identifier of the semantic backend used when none is configured.
pub const DEFAULT_SEMANTIC_BACKEND: &str = "trigram";

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum RewardError {
    #[error("{name} must lie in [0, 1], got {value}")]
    WeightOutOfRange { name: &'static str, value: f64 },
    #[error("unknown semantic backend `{0}`")]
    UnknownBackend(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TaskType {
    Close,
    Open,
}

impl TaskType {
    pub fn as_str(self) -> &'static str {
        match self {
            TaskType::Close => "close",
            TaskType::Open => "open",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RewardConfig {
    /// Weight of the lexical metrics inside the open-ended reward.
    pub lambda: f64,
    /// Weight of the task reward against the format reward.
    pub gamma: f64,
    pub semantic_backend: String,
}

impl Default for RewardConfig {
    fn default() -> Self {
        Self {
            lambda: 0.7,
            gamma: 0.8,
            semantic_backend: DEFAULT_SEMANTIC_BACKEND.to_string(),
        }
    }
}

impl RewardConfig {
    pub fn validate(&self) -> Result<(), RewardError> {
        check_unit("lambda", self.lambda)?;
        check_unit("gamma", self.gamma)
    }
}

fn check_unit(name: &'static str, value: f64) -> Result<(), RewardError> {
    if (0.0..=1.0).contains(&value) {
        Ok(())
    } else {
        Err(RewardError::WeightOutOfRange { name, value })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RewardBreakdown {
    pub task_reward: f64,
    pub format_reward: f64,
    pub total: f64,
    /// Lexical and semantic sub-scores, present for open-ended items whose
    /// response parsed.
    pub bleu1: Option<f64>,
    pub rouge1: Option<f64>,
    pub semantic: Option<f64>,
}

/// Lowercases and splits on every non-alphanumeric character. Punctuation is
/// dropped.
pub fn tokenize(text: &str) -> Vec<String> {
    let mut out = Vec::new();
    let mut cur = String::new();
    for ch in text.chars() {
        if ch.is_alphanumeric() {
            cur.extend(ch.to_lowercase());
        } else if !cur.is_empty() {
            out.push(core::mem::take(&mut cur));
        }
    }
    if !cur.is_empty() {
        out.push(cur);
    }
    out
}

fn counts(tokens: &[String]) -> BTreeMap<&str, usize> {
    let mut m = BTreeMap::new();
    for t in tokens {
        *m.entry(t.as_str()).or_insert(0) += 1;
    }
    m
}

fn clipped_overlap(cand: &[String], refr: &[String]) -> usize {
    let rc = counts(refr);
    counts(cand)
        .iter()
        .map(|(tok, &n)| n.min(rc.get(tok).copied().unwrap_or(0)))
        .sum()
}

/// BLEU-1: clipped unigram precision times the brevity penalty.
pub fn bleu1(candidate: &str, reference: &str) -> f64 {
    let cand = tokenize(candidate);
    if cand.is_empty() {
        return 0.0;
    }
    let refr = tokenize(reference);
    let c = cand.len() as f64;
    let r = refr.len() as f64;
    let precision = clipped_overlap(&cand, &refr) as f64 / c;
    let bp = math::exp((1.0 - r / c).min(0.0));
    precision * bp
}

/// ROUGE-1 F1 over clipped unigram counts.
pub fn rouge1(candidate: &str, reference: &str) -> f64 {
    let cand = tokenize(candidate);
    let refr = tokenize(reference);
    if cand.is_empty() || refr.is_empty() {
        return 0.0;
    }
    let overlap = clipped_overlap(&cand, &refr) as f64;
    if overlap == 0.0 {
        return 0.0;
    }
    let p = overlap / cand.len() as f64;
    let r = overlap / refr.len() as f64;
    2.0 * p * r / (p + r)
}

/// A deterministic similarity in `[0, 1]` between two strings.
pub trait SemanticScorer: Send + Sync {
    fn score(&self, candidate: &str, reference: &str) -> f64;
}

/// Cosine similarity of character-trigram count vectors. Strings are
/// lowercased and padded with one space on each side, so answers shorter
/// than three characters still produce trigrams.
#[derive(Debug, Clone, Copy, Default)]
pub struct TrigramCosine;

fn trigram_counts(text: &str) -> BTreeMap<[char; 3], f64> {
    let mut chars: Vec<char> = Vec::with_capacity(text.len() + 2);
    chars.push(' ');
    for ch in text.chars() {
        chars.extend(ch.to_lowercase());
    }
    chars.push(' ');
    let mut m = BTreeMap::new();
    for w in chars.windows(3) {
        *m.entry([w[0], w[1], w[2]]).or_insert(0.0) += 1.0;
    }
    m
}

impl SemanticScorer for TrigramCosine {
    fn score(&self, candidate: &str, reference: &str) -> f64 {
        let a = trigram_counts(candidate);
        let b = trigram_counts(reference);
        if a.is_empty() || b.is_empty() {
            return 0.0;
        }
        let dot: f64 = a
            .iter()
            .filter_map(|(k, x)| b.get(k).map(|y| x * y))
            .sum();
        if dot == 0.0 {
            return 0.0;
        }
        let na: f64 = a.values().map(|x| x * x).sum();
        let nb: f64 = b.values().map(|x| x * x).sum();
        if a == b {
            return 1.0;
        }
        (dot / (math::sqrt(na) * math::sqrt(nb))).clamp(0.0, 1.0)
    }
}

/// Jaccard index over token sets. Registered as `token-jaccard`; mostly
/// useful to check that callers really go through the registry.
#[derive(Debug, Clone, Copy, Default)]
pub struct TokenJaccard;

impl SemanticScorer for TokenJaccard {
    fn score(&self, candidate: &str, reference: &str) -> f64 {
        let mut a = tokenize(candidate);
        let mut b = tokenize(reference);
        a.sort();
        a.dedup();
        b.sort();
        b.dedup();
        if a.is_empty() && b.is_empty() {
            return 0.0;
        }
        let inter = a.iter().filter(|t| b.binary_search(t).is_ok()).count();
        let union = a.len() + b.len() - inter;
        inter as f64 / union as f64
    }
}

/// Immutable name → scorer table, built once at startup.
pub struct ScorerRegistry {
    entries: BTreeMap<String, Box<dyn SemanticScorer>>,
}

impl Default for ScorerRegistry {
    fn default() -> Self {
        Self::empty()
            .with(DEFAULT_SEMANTIC_BACKEND, Box::new(TrigramCosine))
            .with("token-jaccard", Box::new(TokenJaccard))
    }
}

impl ScorerRegistry {
    pub fn empty() -> Self {
        Self {
            entries: BTreeMap::new(),
        }
    }

    pub fn with(mut self, name: &str, scorer: Box<dyn SemanticScorer>) -> Self {
        self.entries.insert(name.to_string(), scorer);
        self
    }

    pub fn get(&self, name: &str) -> Result<&dyn SemanticScorer, RewardError> {
        self.entries
            .get(name)
            .map(|b| b.as_ref())
            .ok_or_else(|| RewardError::UnknownBackend(name.to_string()))
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }
}

pub fn semantic_score(
    candidate: &str,
    reference: &str,
    backend: &str,
    registry: &ScorerRegistry,
) -> Result<f64, RewardError> {
    Ok(registry.get(backend)?.score(candidate, reference))
}

fn normalize(s: &str) -> String {
    s.trim().to_lowercase()
}

/// Pulls the option letter out of answers such as `c`, `(c)`, `c)`, `c.` or
/// `c: mri`. Expects already-normalized input.
fn option_letter(s: &str) -> Option<char> {
    let s = s.strip_prefix('(').unwrap_or(s);
    let mut chars = s.chars();
    let letter = chars.next().filter(|c| c.is_ascii_alphabetic())?;
    let rest = chars.as_str();
    if rest.is_empty() {
        return Some(letter);
    }
    let after = rest.strip_prefix([')', '.', ':'])?;
    if after.is_empty() || after.starts_with(char::is_whitespace) {
        Some(letter)
    } else {
        None
    }
}

/// Binary exact-match reward under trim + case-fold. When the gold answer
/// is a bare option letter the predicted letter is extracted first.
pub fn close_reward(predicted: &str, gold: &str) -> f64 {
    let p = normalize(predicted);
    let g = normalize(gold);
    let gold_is_letter = g.len() == 1 && g.chars().all(|c| c.is_ascii_alphabetic());
    let hit = if gold_is_letter {
        option_letter(&p).is_some_and(|l| g.starts_with(l))
    } else {
        p == g
    };
    if hit {
        1.0
    } else {
        0.0
    }
}

/// Open-ended hybrid reward: `λ/2 · (BLEU-1 + ROUGE-1) + (1 − λ) · semantic`.
pub fn open_reward(predicted: &str, gold: &str, lambda: f64, scorer: &dyn SemanticScorer) -> f64 {
    open_components(predicted, gold, lambda, scorer).0
}

fn open_components(
    predicted: &str,
    gold: &str,
    lambda: f64,
    scorer: &dyn SemanticScorer,
) -> (f64, f64, f64, f64) {
    let b = bleu1(predicted, gold);
    let r = rouge1(predicted, gold);
    let s = scorer.score(predicted, gold);
    (0.5 * lambda * (b + r) + (1.0 - lambda) * s, b, r, s)
}

pub const THINK_OPEN: &str = "<think>";
pub const THINK_CLOSE: &str = "</think>";
pub const ANSWER_OPEN: &str = "<answer>";
pub const ANSWER_CLOSE: &str = "</answer>";

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParsedResponse {
    pub think: String,
    pub answer: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, thiserror::Error)]
pub enum FormatError {
    #[error("missing tag {0}")]
    MissingTag(&'static str),
    #[error("tag {0} occurs more than once")]
    DuplicateTag(&'static str),
    #[error("tags out of order")]
    WrongOrder,
    #[error("non-whitespace content after </answer>")]
    TrailingContent,
    #[error("non-whitespace content outside the tag pairs")]
    StrayContent,
}

/// Strict parse: each of the four tags exactly once, in order, nothing but
/// whitespace outside the two tagged segments.
pub fn parse_response(raw: &str) -> Result<ParsedResponse, FormatError> {
    let tags = [THINK_OPEN, THINK_CLOSE, ANSWER_OPEN, ANSWER_CLOSE];
    let mut pos = [0usize; 4];
    for (slot, tag) in pos.iter_mut().zip(tags) {
        let mut found = raw.match_indices(tag);
        *slot = found.next().ok_or(FormatError::MissingTag(tag))?.0;
        if found.next().is_some() {
            return Err(FormatError::DuplicateTag(tag));
        }
    }
    if !pos.windows(2).all(|w| w[0] < w[1]) {
        return Err(FormatError::WrongOrder);
    }
    let think_start = pos[0] + THINK_OPEN.len();
    let answer_start = pos[2] + ANSWER_OPEN.len();
    // `</think>` would be found inside `<think>` only if tags overlapped, and
    // the order check above already rules that out.
    if !raw[pos[3] + ANSWER_CLOSE.len()..].trim().is_empty() {
        return Err(FormatError::TrailingContent);
    }
    let gap = &raw[pos[1] + THINK_CLOSE.len()..pos[2]];
    if !raw[..pos[0]].trim().is_empty() || !gap.trim().is_empty() {
        return Err(FormatError::StrayContent);
    }
    Ok(ParsedResponse {
        think: raw[think_start..pos[1]].trim().to_string(),
        answer: raw[answer_start..pos[3]].trim().to_string(),
    })
}

pub fn format_reward(raw: &str) -> f64 {
    if parse_response(raw).is_ok() {
        1.0
    } else {
        0.0
    }
}

/// A validated reward configuration bound to its semantic scorer.
#[derive(Clone, Copy)]
pub struct Rewarder<'a> {
    pub lambda: f64,
    pub gamma: f64,
    scorer: &'a dyn SemanticScorer,
}

impl<'a> Rewarder<'a> {
    pub fn new(cfg: &RewardConfig, registry: &'a ScorerRegistry) -> Result<Self, RewardError> {
        cfg.validate()?;
        Ok(Self {
            lambda: cfg.lambda,
            gamma: cfg.gamma,
            scorer: registry.get(&cfg.semantic_backend)?,
        })
    }

    pub fn scorer(&self) -> &'a dyn SemanticScorer {
        self.scorer
    }

    pub fn open_reward(&self, predicted: &str, gold: &str) -> f64 {
        open_reward(predicted, gold, self.lambda, self.scorer)
    }

    /// Scores one raw response. Parse failures give a zero task reward.
    pub fn total_reward(&self, task: TaskType, raw: &str, gold: &str) -> RewardBreakdown {
        let parsed = parse_response(raw).ok();
        let format_reward = if parsed.is_some() { 1.0 } else { 0.0 };
        let mut out = RewardBreakdown {
            task_reward: 0.0,
            format_reward,
            total: 0.0,
            bleu1: None,
            rouge1: None,
            semantic: None,
        };
        if let Some(p) = parsed {
            match task {
                TaskType::Close => out.task_reward = close_reward(&p.answer, gold),
                TaskType::Open => {
                    let (r, b, rg, s) = open_components(&p.answer, gold, self.lambda, self.scorer);
                    out.task_reward = r;
                    out.bleu1 = Some(b);
                    out.rouge1 = Some(rg);
                    out.semantic = Some(s);
                }
            }
        }
        out.total = self.gamma * out.task_reward + (1.0 - self.gamma) * out.format_reward;
        out
    }
}

/// Free-function form of [`Rewarder::total_reward`].
pub fn total_reward(
    task: TaskType,
    raw: &str,
    gold: &str,
    cfg: &RewardConfig,
    registry: &ScorerRegistry,
) -> Result<RewardBreakdown, RewardError> {
    Ok(Rewarder::new(cfg, registry)?.total_reward(task, raw, gold))
}
