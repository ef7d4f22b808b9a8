//! Joint and curriculum training over close- and open-ended items.

use alloc::vec::Vec;
use core::convert::Infallible;

use serde::{Deserialize, Serialize};

use crate::grpo::{
    evaluate, grpo_step, ConfigError, EvalError, EvalReport, GrpoConfig, GrpoError, StepError,
    StepStats,
};
use crate::policy::{apply_update, snapshot, AdamState, Gradient, PolicyError, PolicyParams, Snapshot};
use crate::rewards::{Rewarder, TaskType};
use crate::rng::{self, Rng};
use crate::taskgen::{encode_prompt, QAPair};
use crate::vocab::{TokenId, Vocab, VocabError};

/// How the two task gradients of a mixed batch are weighted.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MixRule {
    /// `alpha = n_open / (n_close + n_open)` weights the close gradient.
    #[default]
    AsPrinted,
    /// `alpha = n_close / (n_close + n_open)` weights the close gradient.
    SameFraction,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum MixError {
    #[error("gradient shapes differ ({close} vs {open} parameters)")]
    ShapeMismatch { close: usize, open: usize },
    #[error("both sub-batches are empty")]
    Empty,
}

/// Weight on the close-ended gradient, or `None` when both counts are zero.
pub fn mix_alpha(n_close: usize, n_open: usize, rule: MixRule) -> Option<f64> {
    let total = n_close + n_open;
    if total == 0 {
        return None;
    }
    let num = match rule {
        MixRule::AsPrinted => n_open,
        MixRule::SameFraction => n_close,
    };
    Some(num as f64 / total as f64)
}

/// `alpha * g_close + (1 - alpha) * g_open` with `alpha` from [`mix_alpha`].
/// When one side is empty the other side's gradient is returned unchanged.
pub fn mix_gradients(
    g_close: &Gradient,
    g_open: &Gradient,
    n_close: usize,
    n_open: usize,
    rule: MixRule,
) -> Result<Gradient, MixError> {
    if g_close.dims() != g_open.dims() {
        return Err(MixError::ShapeMismatch {
            close: g_close.as_slice().len(),
            open: g_open.as_slice().len(),
        });
    }
    match (n_close, n_open) {
        (0, 0) => Err(MixError::Empty),
        (_, 0) => Ok(g_close.clone()),
        (0, _) => Ok(g_open.clone()),
        _ => {
            let alpha = mix_alpha(n_close, n_open, rule).ok_or(MixError::Empty)?;
            let data = g_close
                .as_slice()
                .iter()
                .zip(g_open.as_slice())
                .map(|(c, o)| alpha * c + (1.0 - alpha) * o)
                .collect();
            Gradient::from_parts(g_close.dims(), data).map_err(|_| MixError::ShapeMismatch {
                close: g_close.as_slice().len(),
                open: g_open.as_slice().len(),
            })
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    Joint,
    Curriculum,
    CloseOnly,
    OpenOnly,
}

impl Strategy {
    pub const ALL: [Strategy; 4] = [
        Strategy::CloseOnly,
        Strategy::OpenOnly,
        Strategy::Joint,
        Strategy::Curriculum,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Strategy::Joint => "joint",
            Strategy::Curriculum => "curriculum",
            Strategy::CloseOnly => "close_only",
            Strategy::OpenOnly => "open_only",
        }
    }
}

/// Which data a training step draws from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Close,
    Open,
    Joint,
}

impl Stage {
    pub fn as_str(self) -> &'static str {
        match self {
            Stage::Close => "close",
            Stage::Open => "open",
            Stage::Joint => "joint",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Schedule {
    pub strategy: Strategy,
    pub stage1_steps: usize,
    pub stage2_steps: usize,
    /// Re-anchor the reference policy to the stage-1 result.
    pub ref_reset_on_transition: bool,
    /// Start stage 2 with fresh Adam moments.
    pub reset_optimizer_on_transition: bool,
}

impl Default for Schedule {
    fn default() -> Self {
        Self {
            strategy: Strategy::Curriculum,
            stage1_steps: 300,
            stage2_steps: 300,
            ref_reset_on_transition: true,
            reset_optimizer_on_transition: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ScheduleError {
    #[error("curriculum needs at least one step in each stage (got {0} and {1})")]
    EmptyCurriculumStage(usize, usize),
    #[error("schedule has no steps")]
    NoSteps,
}

impl Schedule {
    pub fn validate(&self) -> Result<(), ScheduleError> {
        if self.strategy == Strategy::Curriculum && (self.stage1_steps == 0 || self.stage2_steps == 0)
        {
            return Err(ScheduleError::EmptyCurriculumStage(
                self.stage1_steps,
                self.stage2_steps,
            ));
        }
        if self.total_steps() == 0 {
            return Err(ScheduleError::NoSteps);
        }
        Ok(())
    }

    /// Every strategy spends the same total budget.
    pub fn total_steps(&self) -> usize {
        self.stage1_steps + self.stage2_steps
    }

    /// Ordered `(stage, steps)` phases; zero-length phases are omitted.
    pub fn phases(&self) -> Vec<(Stage, usize)> {
        let total = self.total_steps();
        let phases = match self.strategy {
            Strategy::Curriculum => alloc::vec![
                (Stage::Close, self.stage1_steps),
                (Stage::Open, self.stage2_steps)
            ],
            Strategy::Joint => alloc::vec![(Stage::Joint, total)],
            Strategy::CloseOnly => alloc::vec![(Stage::Close, total)],
            Strategy::OpenOnly => alloc::vec![(Stage::Open, total)],
        };
        phases.into_iter().filter(|&(_, n)| n > 0).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub grpo: GrpoConfig,
    pub lr: f64,
    /// Prompts per step.
    pub batch_size: usize,
    pub mix_rule: MixRule,
    /// Evaluate every this many steps; 0 evaluates only at stage ends.
    pub eval_every: usize,
    /// Cap on evaluation items per task type; 0 uses all.
    pub eval_limit: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            grpo: GrpoConfig::default(),
            lr: 3e-3,
            batch_size: 16,
            mix_rule: MixRule::AsPrinted,
            eval_every: 50,
            eval_limit: 0,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum TrainError {
    #[error(transparent)]
    Schedule(#[from] ScheduleError),
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("no {0} training items for an active stage")]
    EmptyDataset(&'static str),
    #[error("learning rate must be positive and finite, got {0}")]
    LearningRate(f64),
    #[error(transparent)]
    Step(#[from] StepError),
    #[error(transparent)]
    Mix(#[from] MixError),
    #[error(transparent)]
    Vocab(#[from] VocabError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error("update failed at step {step}: {source}")]
    Update { step: usize, source: PolicyError },
}

impl From<GrpoError<Infallible>> for TrainError {
    fn from(e: GrpoError<Infallible>) -> Self {
        match e {
            GrpoError::Step(s) => TrainError::Step(s),
            GrpoError::Reward(never) => match never {},
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        self.grpo.validate()?;
        if !(self.lr.is_finite() && self.lr > 0.0) {
            return Err(TrainError::LearningRate(self.lr));
        }
        if self.batch_size == 0 {
            return Err(ConfigError::EmptyBatch.into());
        }
        Ok(())
    }
}

/// One step's prompts, split by task type.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct MixedBatch<'a> {
    pub close_items: Vec<&'a QAPair>,
    pub open_items: Vec<&'a QAPair>,
}

impl MixedBatch<'_> {
    pub fn is_empty(&self) -> bool {
        self.close_items.is_empty() && self.open_items.is_empty()
    }
}

/// Live parameters, optimizer moments and the frozen KL anchor.
#[derive(Debug, Clone)]
pub struct TrainState {
    pub params: PolicyParams,
    pub adam: AdamState,
    pub reference: Snapshot,
}

impl TrainState {
    /// Fresh optimizer, reference anchored at `params`.
    pub fn new(params: PolicyParams) -> Self {
        Self {
            adam: AdamState::new(params.dims()),
            reference: snapshot(&params),
            params,
        }
    }
}

#[derive(Debug, Clone)]
pub struct JointOutput {
    /// Combined gradient that was applied.
    pub gradient: Gradient,
    pub close_gradient: Option<Gradient>,
    pub open_gradient: Option<Gradient>,
    pub alpha: Option<f64>,
    pub close: Option<StepStats>,
    pub open: Option<StepStats>,
    pub stats: StepStats,
}

fn sub_step(
    state: &TrainState,
    vocab: &Vocab,
    rewarder: &Rewarder<'_>,
    items: &[&QAPair],
    task: TaskType,
    cfg: &GrpoConfig,
    seed: u64,
) -> Result<Option<(Gradient, StepStats)>, TrainError> {
    if items.is_empty() {
        return Ok(None);
    }
    let prompts = items
        .iter()
        .map(|qa| encode_prompt(qa, vocab))
        .collect::<Result<Vec<Vec<TokenId>>, _>>()?;
    let reward = |p: usize, r: &crate::policy::Rollout| {
        Ok::<f64, Infallible>(rewarder.total_reward(task, &r.raw_text, &items[p].answer).total)
    };
    // Rollouts are used for a single update, so the sampling policy is the
    // live policy itself.
    let out = grpo_step(
        &state.params,
        &state.params,
        &state.reference,
        vocab,
        &prompts,
        reward,
        cfg,
        seed,
    )?;
    Ok(Some((out.gradient, out.stats)))
}

/// Runs a GRPO step on each nonempty sub-batch, mixes the two mean
/// gradients and applies one optimizer update.
pub fn joint_step(
    state: &mut TrainState,
    vocab: &Vocab,
    rewarder: &Rewarder<'_>,
    batch: &MixedBatch<'_>,
    cfg: &TrainConfig,
    rng_seed: u64,
) -> Result<JointOutput, TrainError> {
    if batch.is_empty() {
        return Err(ConfigError::EmptyBatch.into());
    }
    let (n_c, n_o) = (batch.close_items.len(), batch.open_items.len());
    let close = sub_step(
        state,
        vocab,
        rewarder,
        &batch.close_items,
        TaskType::Close,
        &cfg.grpo,
        rng::derive(rng_seed, &[0]),
    )?;
    let open = sub_step(
        state,
        vocab,
        rewarder,
        &batch.open_items,
        TaskType::Open,
        &cfg.grpo,
        rng::derive(rng_seed, &[1]),
    )?;
    let zero = Gradient::zeros(state.params.dims());
    let g_c = close.as_ref().map_or(&zero, |(g, _)| g);
    let g_o = open.as_ref().map_or(&zero, |(g, _)| g);
    let gradient = mix_gradients(g_c, g_o, n_c, n_o, cfg.mix_rule)?;
    let alpha = match (n_c, n_o) {
        (_, 0) => Some(1.0),
        (0, _) => Some(0.0),
        _ => mix_alpha(n_c, n_o, cfg.mix_rule),
    };
    let stats = combine_stats(
        close.as_ref().map(|(_, s)| s),
        open.as_ref().map(|(_, s)| s),
        n_c,
        n_o,
        alpha.unwrap_or(1.0),
        gradient.norm(),
    );
    apply_update(&mut state.params, &gradient, &mut state.adam, cfg.lr).map_err(|source| {
        TrainError::Update {
            step: state.adam.t as usize,
            source,
        }
    })?;
    let (close_gradient, close) = split(close);
    let (open_gradient, open) = split(open);
    Ok(JointOutput {
        gradient,
        close_gradient,
        open_gradient,
        alpha,
        close,
        open,
        stats,
    })
}

fn split(x: Option<(Gradient, StepStats)>) -> (Option<Gradient>, Option<StepStats>) {
    match x {
        Some((g, s)) => (Some(g), Some(s)),
        None => (None, None),
    }
}

/// Rollout-weighted reward, KL and clip fraction; loss mixed like the
/// gradients.
fn combine_stats(
    close: Option<&StepStats>,
    open: Option<&StepStats>,
    n_c: usize,
    n_o: usize,
    alpha: f64,
    grad_norm: f64,
) -> StepStats {
    match (close, open) {
        (Some(c), None) => StepStats { grad_norm, ..*c },
        (None, Some(o)) => StepStats { grad_norm, ..*o },
        (Some(c), Some(o)) => {
            let wc = n_c as f64 / (n_c + n_o) as f64;
            let wo = 1.0 - wc;
            StepStats {
                mean_reward: wc * c.mean_reward + wo * o.mean_reward,
                mean_total_loss: alpha * c.mean_total_loss + (1.0 - alpha) * o.mean_total_loss,
                mean_kl: wc * c.mean_kl + wo * o.mean_kl,
                clip_fraction: wc * c.clip_fraction + wo * o.clip_fraction,
                grad_norm,
            }
        }
        (None, None) => StepStats::default(),
    }
}

/// Training and held-out items for both task types.
#[derive(Debug, Clone, Copy, Default)]
pub struct TrainData<'a> {
    pub close_train: &'a [QAPair],
    pub open_train: &'a [QAPair],
    pub close_eval: &'a [QAPair],
    pub open_eval: &'a [QAPair],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    /// Global step index, starting at 0.
    pub step: usize,
    pub stage: Stage,
    pub n_close: usize,
    pub n_open: usize,
    pub alpha: Option<f64>,
    #[serde(flatten)]
    pub stats: StepStats,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub eval: Option<EvalReport>,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub params: PolicyParams,
    pub adam: AdamState,
    pub history: Vec<StepRecord>,
    /// Evaluations after `stage1_steps` and after the full budget, whatever
    /// the strategy, so strategies are compared at the same points.
    pub stage_evals: Vec<(Stage, EvalReport)>,
}

/// Items for step `step` of `stage`, drawn with replacement from a stream
/// keyed by the seed and the global step index only, so runs that share a
/// prefix of stages see the same batches.
pub fn sample_batch<'a>(
    stage: Stage,
    data: &TrainData<'a>,
    batch_size: usize,
    seed: u64,
    step: usize,
) -> MixedBatch<'a> {
    const BATCH_STREAM: u64 = 0xba7c;
    let mut rng = Rng::new(rng::derive(seed, &[BATCH_STREAM, step as u64]));
    let mut batch = MixedBatch::default();
    let (nc, no) = (data.close_train.len(), data.open_train.len());
    for _ in 0..batch_size {
        match stage {
            Stage::Close => batch.close_items.push(&data.close_train[rng.below(nc)]),
            Stage::Open => batch.open_items.push(&data.open_train[rng.below(no)]),
            Stage::Joint => {
                let i = rng.below(nc + no);
                if i < nc {
                    batch.close_items.push(&data.close_train[i]);
                } else {
                    batch.open_items.push(&data.open_train[i - nc]);
                }
            }
        }
    }
    batch
}

fn limited(items: &[QAPair], limit: usize) -> &[QAPair] {
    if limit == 0 || limit >= items.len() {
        items
    } else {
        &items[..limit]
    }
}

/// Greedy evaluation on the held-out items of both task types.
pub fn evaluate_both(
    params: &PolicyParams,
    vocab: &Vocab,
    rewarder: &Rewarder<'_>,
    data: &TrainData<'_>,
    cfg: &TrainConfig,
) -> Result<EvalReport, TrainError> {
    let max_len = cfg.grpo.max_completion_len;
    let c = evaluate(params, vocab, limited(data.close_eval, cfg.eval_limit), rewarder, max_len)?;
    let o = evaluate(params, vocab, limited(data.open_eval, cfg.eval_limit), rewarder, max_len)?;
    Ok(merge_reports(&c, &o))
}

/// Combines reports over disjoint item sets.
pub fn merge_reports(a: &EvalReport, b: &EvalReport) -> EvalReport {
    let weighted = |x: Option<f64>, nx: usize, y: Option<f64>, ny: usize| match (x, y) {
        (Some(x), Some(y)) => Some((x * nx as f64 + y * ny as f64) / (nx + ny) as f64),
        (x, None) => x,
        (None, y) => y,
    };
    let (na, nb) = (a.n_close + a.n_open, b.n_close + b.n_open);
    EvalReport {
        n_close: a.n_close + b.n_close,
        n_open: a.n_open + b.n_open,
        close_accuracy: weighted(a.close_accuracy, a.n_close, b.close_accuracy, b.n_close),
        open_score: weighted(a.open_score, a.n_open, b.open_score, b.n_open),
        format_rate: weighted(a.format_rate, na, b.format_rate, nb),
    }
}

/// Runs the phases of `schedule` from `params`. `observer` sees every step
/// record as it is produced.
pub fn curriculum_train<F>(
    params: PolicyParams,
    vocab: &Vocab,
    rewarder: &Rewarder<'_>,
    data: &TrainData<'_>,
    schedule: &Schedule,
    cfg: &TrainConfig,
    mut observer: F,
) -> Result<TrainOutcome, TrainError>
where
    F: FnMut(&StepRecord),
{
    schedule.validate()?;
    cfg.validate()?;
    let phases = schedule.phases();
    for &(stage, _) in &phases {
        if matches!(stage, Stage::Close | Stage::Joint) && data.close_train.is_empty() {
            return Err(TrainError::EmptyDataset("close-ended"));
        }
        if matches!(stage, Stage::Open | Stage::Joint) && data.open_train.is_empty() {
            return Err(TrainError::EmptyDataset("open-ended"));
        }
    }
    const ROLLOUT_STREAM: u64 = 0x5a3f;
    let mut state = TrainState::new(params);
    let mut history = Vec::with_capacity(schedule.total_steps());
    let mut stage_evals = Vec::with_capacity(phases.len());
    let mut step = 0usize;
    let total = schedule.total_steps();
    for (k, &(stage, n_steps)) in phases.iter().enumerate() {
        if k > 0 {
            if schedule.ref_reset_on_transition {
                state.reference = snapshot(&state.params);
            }
            if schedule.reset_optimizer_on_transition {
                state.adam = AdamState::new(state.params.dims());
            }
        }
        for _ in 0..n_steps {
            let batch = sample_batch(stage, data, cfg.batch_size, cfg.seed, step);
            let seed = rng::derive(cfg.seed, &[ROLLOUT_STREAM, step as u64]);
            let out = joint_step(&mut state, vocab, rewarder, &batch, cfg, seed).map_err(
                |e| match e {
                    TrainError::Update { source, .. } => TrainError::Update { step, source },
                    other => other,
                },
            )?;
            let boundary = step + 1 == schedule.stage1_steps || step + 1 == total;
            let scheduled = cfg.eval_every > 0 && (step + 1).is_multiple_of(cfg.eval_every);
            let eval = if boundary || scheduled {
                Some(evaluate_both(&state.params, vocab, rewarder, data, cfg)?)
            } else {
                None
            };
            if boundary {
                if let Some(e) = &eval {
                    stage_evals.push((stage, e.clone()));
                }
            }
            let record = StepRecord {
                step,
                stage,
                n_close: batch.close_items.len(),
                n_open: batch.open_items.len(),
                alpha: out.alpha,
                stats: out.stats,
                eval,
            };
            observer(&record);
            history.push(record);
            step += 1;
        }
    }
    Ok(TrainOutcome {
        params: state.params,
        adam: state.adam,
        history,
        stage_evals,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::policy::PolicyDims;

    fn grad(data: &[f64]) -> Gradient {
        let dims = PolicyDims {
            vocab: 1,
            context: 1,
            embed: 1,
            hidden: 1,
        };
        let mut v = alloc::vec![0.0; dims.num_params()];
        v[..data.len()].copy_from_slice(data);
        Gradient::from_parts(dims, v).unwrap()
    }

    #[test]
    fn alpha_examples() {
        assert_eq!(mix_alpha(8, 8, MixRule::AsPrinted), Some(0.5));
        assert_eq!(mix_alpha(48, 16, MixRule::AsPrinted), Some(0.25));
        assert_eq!(mix_alpha(48, 16, MixRule::SameFraction), Some(0.75));
        assert_eq!(mix_alpha(0, 0, MixRule::AsPrinted), None);
        let (c, o) = (grad(&[4.0, 0.0]), grad(&[0.0, 8.0]));
        let g = mix_gradients(&c, &o, 48, 16, MixRule::AsPrinted).unwrap();
        assert_eq!(&g.as_slice()[..2], &[1.0, 6.0]);
        assert_eq!(mix_gradients(&c, &o, 3, 0, MixRule::AsPrinted).unwrap(), c);
        assert_eq!(mix_gradients(&c, &o, 0, 3, MixRule::AsPrinted).unwrap(), o);
        assert_eq!(
            mix_gradients(&c, &o, 0, 0, MixRule::AsPrinted),
            Err(MixError::Empty)
        );
    }

    #[test]
    fn schedule_phases() {
        let mut s = Schedule {
            stage1_steps: 3,
            stage2_steps: 2,
            ..Schedule::default()
        };
        assert_eq!(s.phases(), alloc::vec![(Stage::Close, 3), (Stage::Open, 2)]);
        s.stage2_steps = 0;
        assert_eq!(s.validate(), Err(ScheduleError::EmptyCurriculumStage(3, 0)));
        s.strategy = Strategy::CloseOnly;
        assert_eq!(s.phases(), alloc::vec![(Stage::Close, 3)]);
        s.stage1_steps = 0;
        assert_eq!(s.validate(), Err(ScheduleError::NoSteps));
    }

    #[test]
    fn merged_report_weights_by_counts() {
        let a = EvalReport {
            n_close: 3,
            n_open: 0,
            close_accuracy: Some(1.0),
            open_score: None,
            format_rate: Some(1.0),
        };
        let b = EvalReport {
            n_close: 0,
            n_open: 1,
            close_accuracy: None,
            open_score: Some(0.5),
            format_rate: Some(0.0),
        };
        let m = merge_reports(&a, &b);
        assert_eq!(m.close_accuracy, Some(1.0));
        assert_eq!(m.open_score, Some(0.5));
        assert_eq!(m.format_rate, Some(0.75));
    }
}
