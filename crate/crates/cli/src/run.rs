//! Subcommand implementations. Each returns a serializable summary and
//! writes its files atomically.

use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use cgrpo_core::grpo::EvalReport;
use cgrpo_core::joint::{
    curriculum_train, evaluate_both, Stage, StepRecord, Strategy, TrainData, TrainOutcome,
};
use cgrpo_core::policy::{init_params, PolicyParams};
use cgrpo_core::refinery::{refine_dataset, Auditor, Lexicon, MockAuditor, RefineReport};
use cgrpo_core::rewards::{total_reward, Rewarder, ScorerRegistry, TaskType};
use cgrpo_core::rng;
use cgrpo_core::taskgen::{build_vocab, generate_dataset, Datasets, QAPair, Split};
use cgrpo_core::vocab::Vocab;
use cgrpo_core::warmup::{format_warmup, WarmupError, WarmupStats};
use serde::{Deserialize, Serialize};

use crate::auditor::{refine_concurrent, HttpAuditor};
use crate::checkpoint::Checkpoint;
use crate::config::{AuditorKind, RunConfig};
use crate::data::{load_jsonl, to_jsonl, write_atomic, AtomicLines};
use crate::error::CliError;
use crate::metrics::{record_line, to_csv};

const INIT_STREAM: u64 = 0x1417;

/// Where a run writes its files.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct OutputPaths {
    pub out_dir: PathBuf,
    pub metrics: PathBuf,
    pub checkpoint: PathBuf,
}

impl OutputPaths {
    pub fn new(out_dir: &Path, metrics: Option<&Path>, checkpoint: Option<&Path>) -> Self {
        Self {
            out_dir: out_dir.to_path_buf(),
            metrics: metrics.map_or_else(|| out_dir.join("metrics.jsonl"), Path::to_path_buf),
            checkpoint: checkpoint
                .map_or_else(|| out_dir.join("checkpoint.bin"), Path::to_path_buf),
        }
    }

    pub fn csv(&self) -> PathBuf {
        self.metrics.with_extension("csv")
    }

    pub fn summary(&self) -> PathBuf {
        self.out_dir.join("summary.json")
    }
}

/// Generated or loaded data, split by task type and split.
pub fn prepare_data(cfg: &RunConfig) -> Result<Datasets, CliError> {
    match &cfg.train_data {
        None => generate_dataset(&cfg.world()).map_err(|e| CliError::Config(e.to_string())),
        Some(train) => {
            let mut pairs = load_jsonl(train)?;
            if let Some(test) = &cfg.test_data {
                pairs.extend(load_jsonl(test)?.into_iter().map(|mut p| {
                    p.split = Split::Test;
                    p
                }));
            }
            Ok(Datasets::from_pairs(pairs))
        }
    }
}

pub fn make_auditor(cfg: &RunConfig) -> Result<Box<dyn Auditor>, CliError> {
    Ok(match cfg.auditor {
        AuditorKind::Mock => Box::new(MockAuditor {
            lexicon: Lexicon::for_world(&cfg.world()),
        }),
        AuditorKind::Http => Box::new(HttpAuditor::from_env(
            cfg.auditor_temperature,
            Duration::from_secs(cfg.auditor_timeout_secs),
        )?),
    })
}

/// Audits the open-ended training pairs in place. Test pairs stay as they
/// are.
pub fn refine_training_set(cfg: &RunConfig, data: &mut Datasets) -> Result<RefineReport, CliError> {
    let auditor = make_auditor(cfg)?;
    let (refined, report) = refine_concurrent(
        &data.open_train,
        auditor.as_ref(),
        cfg.drop_policy,
        cfg.audit_max_attempts,
        cfg.auditor_concurrency,
    );
    data.open_train = refined;
    Ok(report)
}

/// Vocabulary, initialized and format-primed parameters.
pub fn init_model(
    cfg: &RunConfig,
    data: &Datasets,
) -> Result<(Vocab, PolicyParams, WarmupStats), CliError> {
    let vocab = build_vocab(data.all()).map_err(|e| CliError::Data(e.to_string()))?;
    let mut params = init_params(
        &vocab,
        cfg.context_window,
        cfg.embed_dim,
        cfg.hidden_dim,
        rng::derive(cfg.seed, &[INIT_STREAM]),
    )
    .map_err(|e| CliError::Config(e.to_string()))?;
    let mut stats = WarmupStats::default();
    if cfg.warmup_steps > 0 {
        let items: Vec<QAPair> = data
            .close_train
            .iter()
            .chain(&data.open_train)
            .cloned()
            .collect();
        stats = format_warmup(&mut params, &vocab, &items, &cfg.warmup()).map_err(|e| match e {
            WarmupError::Empty => CliError::Data("no training items".into()),
            WarmupError::Vocab(v) => CliError::Data(v.to_string()),
            WarmupError::Policy(p) => CliError::Divergence(p.to_string()),
        })?;
    }
    Ok((vocab, params, stats))
}

fn train_data(data: &Datasets) -> TrainData<'_> {
    TrainData {
        close_train: &data.close_train,
        open_train: &data.open_train,
        close_eval: &data.close_test,
        open_eval: &data.open_test,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageEval {
    pub after_step: usize,
    pub stage: Stage,
    pub report: EvalReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainSummary {
    pub strategy: Strategy,
    pub seed: u64,
    pub steps: usize,
    pub warmup: WarmupStats,
    pub initial_eval: EvalReport,
    pub stage_evals: Vec<StageEval>,
    pub final_eval: EvalReport,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub refine: Option<RefineReport>,
    pub elapsed_secs: f64,
}

pub struct TrainRun {
    pub summary: TrainSummary,
    pub outcome: TrainOutcome,
    pub vocab: Vocab,
}

/// Trains from already-primed parameters without touching the filesystem.
pub fn train_from(
    cfg: &RunConfig,
    data: &Datasets,
    vocab: Vocab,
    params: PolicyParams,
    warmup: WarmupStats,
    observer: impl FnMut(&StepRecord),
) -> Result<TrainRun, CliError> {
    let start = Instant::now();
    let registry = ScorerRegistry::default();
    let rewarder =
        Rewarder::new(&cfg.reward(), &registry).map_err(|e| CliError::Config(e.to_string()))?;
    let td = train_data(data);
    let train_cfg = cfg.train();
    let initial_eval = evaluate_both(&params, &vocab, &rewarder, &td, &train_cfg)?;
    let schedule = cfg.schedule();
    let outcome = curriculum_train(params, &vocab, &rewarder, &td, &schedule, &train_cfg, observer)?;
    let mut stage_evals = Vec::new();
    for r in &outcome.history {
        if let Some(e) = &r.eval {
            if r.step + 1 == schedule.stage1_steps || r.step + 1 == schedule.total_steps() {
                stage_evals.push(StageEval {
                    after_step: r.step + 1,
                    stage: r.stage,
                    report: e.clone(),
                });
            }
        }
    }
    let final_eval = stage_evals
        .last()
        .map(|s| s.report.clone())
        .unwrap_or_default();
    Ok(TrainRun {
        summary: TrainSummary {
            strategy: schedule.strategy,
            seed: cfg.seed,
            steps: outcome.history.len(),
            warmup,
            initial_eval,
            stage_evals,
            final_eval,
            refine: None,
            elapsed_secs: start.elapsed().as_secs_f64(),
        },
        outcome,
        vocab,
    })
}

pub fn cmd_train(cfg: &RunConfig, paths: &OutputPaths) -> Result<TrainSummary, CliError> {
    cfg.validate()?;
    let mut data = prepare_data(cfg)?;
    let refine = if cfg.refine_train {
        Some(refine_training_set(cfg, &mut data)?)
    } else {
        None
    };
    let (vocab, params, warmup) = init_model(cfg, &data)?;
    let mut log = AtomicLines::create(&paths.metrics)?;
    let mut write_err = None;
    let result = train_from(cfg, &data, vocab, params, warmup, |r| {
        if write_err.is_none() {
            write_err = log.line(&record_line(r)).err();
        }
    });
    let run = match (result, write_err) {
        (Ok(run), None) => run,
        (Err(e), _) | (Ok(_), Some(e)) => {
            log.abandon();
            return Err(e);
        }
    };
    let mut summary = run.summary;
    summary.refine = refine;
    write_atomic(&paths.csv(), &to_csv(&run.outcome.history)?)?;
    Checkpoint {
        vocab: run.vocab,
        params: run.outcome.params,
        adam: run.outcome.adam,
    }
    .save(&paths.checkpoint)?;
    write_atomic(&paths.summary(), pretty(&summary).as_bytes())?;
    log.commit()?;
    Ok(summary)
}

pub fn pretty<T: Serialize>(v: &T) -> String {
    serde_json::to_string_pretty(v).unwrap_or_default() + "\n"
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalSummary {
    pub close: EvalReport,
    pub open: EvalReport,
    pub combined: EvalReport,
}

/// Greedy evaluation of a checkpoint on the held-out pairs of `cfg` or on
/// every pair of `data`.
pub fn cmd_eval(
    cfg: &RunConfig,
    checkpoint: &Path,
    data: Option<&Path>,
) -> Result<EvalSummary, CliError> {
    cfg.validate()?;
    let ck = Checkpoint::load(checkpoint)?;
    let (close, open): (Vec<QAPair>, Vec<QAPair>) = match data {
        Some(p) => load_jsonl(p)?
            .into_iter()
            .partition(|q| q.task_type == TaskType::Close),
        None => {
            let d = prepare_data(cfg)?;
            (d.close_test, d.open_test)
        }
    };
    let registry = ScorerRegistry::default();
    let rewarder =
        Rewarder::new(&cfg.reward(), &registry).map_err(|e| CliError::Config(e.to_string()))?;
    let max_len = cfg.max_completion_len;
    let ev = |items: &[QAPair]| {
        cgrpo_core::grpo::evaluate(&ck.params, &ck.vocab, items, &rewarder, max_len)
            .map_err(|e| CliError::Data(e.to_string()))
    };
    let close = ev(&close)?;
    let open = ev(&open)?;
    let combined = cgrpo_core::joint::merge_reports(&close, &open);
    Ok(EvalSummary {
        close,
        open,
        combined,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct MeanStd {
    pub mean: f64,
    pub std: f64,
    pub n: usize,
}

impl MeanStd {
    /// Mean and sample standard deviation (0 for a single value).
    pub fn of(xs: &[f64]) -> Self {
        let n = xs.len();
        if n == 0 {
            return Self::default();
        }
        let mean = xs.iter().sum::<f64>() / n as f64;
        let var = if n > 1 {
            xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64
        } else {
            0.0
        };
        Self {
            mean,
            std: var.sqrt(),
            n,
        }
    }
}

impl std::fmt::Display for MeanStd {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{:.3} ± {:.3}", self.mean, self.std)
    }
}

/// Mean of close accuracy and open score.
pub fn combined_metric(e: &EvalReport) -> f64 {
    (e.close_accuracy.unwrap_or(0.0) + e.open_score.unwrap_or(0.0)) / 2.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompareRow {
    pub strategy: Strategy,
    pub refined: bool,
    pub close_accuracy: MeanStd,
    pub open_score: MeanStd,
    pub combined: MeanStd,
    /// Evaluation after `stage1_steps`.
    pub stage1_close_accuracy: MeanStd,
    pub stage1_open_score: MeanStd,
    pub failed: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrefixCheck {
    pub refined: bool,
    pub seed: u64,
    /// Curriculum stage-1 records equal the first close-only records.
    pub identical: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompareReport {
    pub seeds: Vec<u64>,
    pub rows: Vec<CompareRow>,
    pub prefix_checks: Vec<PrefixCheck>,
    /// Whether curriculum's mean combined metric is at least joint's, per
    /// refinement setting. Seed-dependent; not a significance test.
    pub curriculum_ge_joint: Vec<(bool, bool)>,
    pub table: String,
}

struct CellResult {
    final_eval: EvalReport,
    stage1: EvalReport,
    history: Vec<StepRecord>,
}

/// Runs every strategy with and without refinement for each seed.
pub fn cmd_compare(cfg: &RunConfig) -> Result<CompareReport, CliError> {
    cfg.validate()?;
    let base = prepare_data(cfg)?;
    let mut rows = Vec::new();
    let mut prefix_checks = Vec::new();
    let mut directional = Vec::new();
    for refined in [false, true] {
        let mut data = base.clone();
        if refined {
            refine_training_set(cfg, &mut data)?;
        }
        let mut cells: Vec<Vec<Result<CellResult, String>>> =
            Strategy::ALL.iter().map(|_| Vec::new()).collect();
        for &seed in &cfg.compare_seeds {
            let seeded = RunConfig {
                seed,
                ..cfg.clone()
            };
            let primed = init_model(&seeded, &data);
            for (k, &strategy) in Strategy::ALL.iter().enumerate() {
                let cell_cfg = RunConfig {
                    strategy,
                    ..seeded.clone()
                };
                let res = primed
                    .as_ref()
                    .map_err(|e| e.to_string())
                    .and_then(|(v, p, w)| {
                        train_from(&cell_cfg, &data, v.clone(), p.clone(), *w, |_| {})
                            .map_err(|e| e.to_string())
                    })
                    .map(|run| CellResult {
                        stage1: run
                            .summary
                            .stage_evals
                            .first()
                            .map(|s| s.report.clone())
                            .unwrap_or_default(),
                        final_eval: run.summary.final_eval,
                        history: run.outcome.history,
                    });
                cells[k].push(res);
            }
            let idx = |s: Strategy| Strategy::ALL.iter().position(|&x| x == s).unwrap_or(0);
            let close = cells[idx(Strategy::CloseOnly)].last();
            let cur = cells[idx(Strategy::Curriculum)].last();
            if let (Some(Ok(a)), Some(Ok(b))) = (close, cur) {
                let n = cfg.stage1_steps;
                let same = a.history.len() >= n
                    && b.history.len() >= n
                    && serde_json::to_string(&a.history[..n]).ok()
                        == serde_json::to_string(&b.history[..n]).ok();
                prefix_checks.push(PrefixCheck {
                    refined,
                    seed,
                    identical: same,
                });
            }
        }
        let mut combined_means = Vec::new();
        for (k, &strategy) in Strategy::ALL.iter().enumerate() {
            let ok: Vec<&CellResult> = cells[k].iter().filter_map(|c| c.as_ref().ok()).collect();
            let failed = cells[k].iter().filter_map(|c| c.as_ref().err().cloned()).collect();
            let col = |f: &dyn Fn(&CellResult) -> f64| MeanStd::of(&ok.iter().map(|c| f(c)).collect::<Vec<_>>());
            let row = CompareRow {
                strategy,
                refined,
                close_accuracy: col(&|c| c.final_eval.close_accuracy.unwrap_or(0.0)),
                open_score: col(&|c| c.final_eval.open_score.unwrap_or(0.0)),
                combined: col(&|c| combined_metric(&c.final_eval)),
                stage1_close_accuracy: col(&|c| c.stage1.close_accuracy.unwrap_or(0.0)),
                stage1_open_score: col(&|c| c.stage1.open_score.unwrap_or(0.0)),
                failed,
            };
            combined_means.push((strategy, row.combined.mean));
            rows.push(row);
        }
        let mean_of = |s: Strategy| combined_means.iter().find(|(x, _)| *x == s).map_or(0.0, |m| m.1);
        directional.push((refined, mean_of(Strategy::Curriculum) >= mean_of(Strategy::Joint)));
    }
    let table = render_table(&rows, &directional, cfg.compare_seeds.len());
    Ok(CompareReport {
        seeds: cfg.compare_seeds.clone(),
        rows,
        prefix_checks,
        curriculum_ge_joint: directional,
        table,
    })
}

fn render_table(rows: &[CompareRow], directional: &[(bool, bool)], n_seeds: usize) -> String {
    let mut s = String::from(
        "| strategy | refinement | close accuracy | open score | combined | stage-1 close accuracy | failed |\n\
         |---|---|---|---|---|---|---|\n",
    );
    for r in rows {
        s.push_str(&format!(
            "| {} | {} | {} | {} | {} | {} | {} |\n",
            r.strategy.as_str(),
            if r.refined { "on" } else { "off" },
            r.close_accuracy,
            r.open_score,
            r.combined,
            r.stage1_close_accuracy,
            r.failed.len()
        ));
    }
    s.push_str(&format!("\nmean ± sample std over {n_seeds} seeds\n"));
    for &(refined, ge) in directional {
        s.push_str(&format!(
            "refinement {}: curriculum combined mean {} joint combined mean (stochastic outcome, no significance claim)\n",
            if refined { "on" } else { "off" },
            if ge { ">=" } else { "<" }
        ));
    }
    s
}

/// One fixture line for `reward-check`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RewardFixture {
    #[serde(default)]
    pub id: String,
    pub raw: String,
    pub gold: String,
    pub task_type: TaskType,
    pub expected_total: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RewardMismatch {
    pub line: usize,
    pub id: String,
    pub expected: f64,
    pub got: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RewardCheckReport {
    pub checked: usize,
    pub mismatches: Vec<RewardMismatch>,
}

pub const REWARD_TOLERANCE: f64 = 1e-9;

/// Recomputes every fixture reward; any difference above
/// [`REWARD_TOLERANCE`] is reported as a data error naming the records.
pub fn cmd_reward_check(cfg: &RunConfig, fixture: &Path) -> Result<RewardCheckReport, CliError> {
    let text = std::fs::read_to_string(fixture).map_err(|e| CliError::io(fixture, e))?;
    let registry = ScorerRegistry::default();
    let reward_cfg = cfg.reward();
    let mut report = RewardCheckReport {
        checked: 0,
        mismatches: Vec::new(),
    };
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let f: RewardFixture = serde_json::from_str(line)
            .map_err(|e| CliError::Data(format!("{} line {}: {e}", fixture.display(), i + 1)))?;
        let got = total_reward(f.task_type, &f.raw, &f.gold, &reward_cfg, &registry)
            .map_err(|e| CliError::Config(e.to_string()))?
            .total;
        report.checked += 1;
        if !((got - f.expected_total).abs() <= REWARD_TOLERANCE) {
            report.mismatches.push(RewardMismatch {
                line: i + 1,
                id: f.id,
                expected: f.expected_total,
                got,
            });
        }
    }
    if report.mismatches.is_empty() {
        Ok(report)
    } else {
        let list: Vec<String> = report
            .mismatches
            .iter()
            .map(|m| format!("line {} ({}): expected {} got {}", m.line, m.id, m.expected, m.got))
            .collect();
        Err(CliError::Data(format!(
            "{} of {} rewards differ: {}",
            report.mismatches.len(),
            report.checked,
            list.join("; ")
        )))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenSummary {
    pub train: PathBuf,
    pub test: PathBuf,
    pub close_train: usize,
    pub close_test: usize,
    pub open_train: usize,
    pub open_test: usize,
}

pub fn cmd_gen_data(cfg: &RunConfig, out_dir: &Path) -> Result<GenSummary, CliError> {
    cfg.world().validate().map_err(|e| CliError::Config(e.to_string()))?;
    let d = generate_dataset(&cfg.world()).map_err(|e| CliError::Config(e.to_string()))?;
    let train: Vec<QAPair> = d.close_train.iter().chain(&d.open_train).cloned().collect();
    let test: Vec<QAPair> = d.close_test.iter().chain(&d.open_test).cloned().collect();
    let paths = (out_dir.join("train.jsonl"), out_dir.join("test.jsonl"));
    write_atomic(&paths.0, to_jsonl(&train).as_bytes())?;
    write_atomic(&paths.1, to_jsonl(&test).as_bytes())?;
    Ok(GenSummary {
        train: paths.0,
        test: paths.1,
        close_train: d.close_train.len(),
        close_test: d.close_test.len(),
        open_train: d.open_train.len(),
        open_test: d.open_test.len(),
    })
}

/// Audits every open-ended pair of `input` and writes the refined pairs and
/// the report.
pub fn cmd_refine(
    cfg: &RunConfig,
    input: &Path,
    output: &Path,
    report_path: Option<&Path>,
) -> Result<RefineReport, CliError> {
    let pairs = load_jsonl(input)?;
    let auditor = make_auditor(cfg)?;
    let (refined, report) = if cfg.auditor_concurrency > 1 {
        refine_concurrent(
            &pairs,
            auditor.as_ref(),
            cfg.drop_policy,
            cfg.audit_max_attempts,
            cfg.auditor_concurrency,
        )
    } else {
        refine_dataset(&pairs, auditor.as_ref(), cfg.drop_policy, cfg.audit_max_attempts)
    };
    write_atomic(output, to_jsonl(&refined).as_bytes())?;
    if let Some(p) = report_path {
        write_atomic(p, pretty(&report).as_bytes())?;
    }
    Ok(report)
}
