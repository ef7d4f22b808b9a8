//! Run configuration: one flat TOML table. Every key is optional and
//! defaults to the value below; unknown keys are rejected.

use std::path::{Path, PathBuf};

use cgrpo_core::grpo::GrpoConfig;
use cgrpo_core::joint::{MixRule, Schedule, Strategy, TrainConfig};
use cgrpo_core::policy::PolicyDims;
use cgrpo_core::refinery::DropPolicy;
use cgrpo_core::rewards::{RewardConfig, ScorerRegistry};
use cgrpo_core::taskgen::WorldSpec;
use cgrpo_core::warmup::WarmupConfig;
use serde::{Deserialize, Serialize};

use crate::error::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AuditorKind {
    Mock,
    Http,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Seed for initialization, priming and training.
    pub seed: u64,
    /// Seed for synthetic data generation.
    pub world_seed: u64,
    pub out_dir: PathBuf,
    /// Optional JSONL file with training pairs (and test pairs, by `split`).
    pub train_data: Option<PathBuf>,
    /// Optional JSONL file with held-out pairs.
    pub test_data: Option<PathBuf>,

    pub modalities: Vec<String>,
    pub organs: Vec<String>,
    pub findings: Vec<String>,
    pub lateralities: Vec<String>,
    pub close_train: usize,
    pub close_test: usize,
    pub open_train: usize,
    pub open_test: usize,
    pub num_options: usize,
    pub open_noise: f64,
    pub shuffle_options: bool,

    pub context_window: usize,
    pub embed_dim: usize,
    pub hidden_dim: usize,

    pub warmup_steps: usize,
    pub warmup_batch: usize,
    pub warmup_lr: f64,

    pub group_size: usize,
    pub clip_eps: f64,
    pub kl_beta: f64,
    pub advantage_eps: f64,
    pub temperature: f64,
    pub max_completion_len: usize,

    pub lambda: f64,
    pub gamma: f64,
    pub semantic_backend: String,

    pub strategy: Strategy,
    pub stage1_steps: usize,
    pub stage2_steps: usize,
    pub ref_reset_on_transition: bool,
    pub reset_optimizer_on_transition: bool,
    pub mix_rule: MixRule,

    pub lr: f64,
    pub batch_size: usize,
    pub eval_every: usize,
    pub eval_limit: usize,

    /// Audit open-ended training pairs before training.
    pub refine_train: bool,
    pub auditor: AuditorKind,
    pub drop_policy: DropPolicy,
    pub audit_max_attempts: usize,
    pub auditor_concurrency: usize,
    pub auditor_timeout_secs: u64,
    pub auditor_temperature: f64,

    /// Seeds for `compare`.
    pub compare_seeds: Vec<u64>,
}

impl Default for RunConfig {
    fn default() -> Self {
        let w = WorldSpec::default();
        let g = GrpoConfig::default();
        let r = RewardConfig::default();
        let s = Schedule::default();
        let t = TrainConfig::default();
        let wu = WarmupConfig::default();
        Self {
            seed: 0,
            world_seed: w.seed,
            out_dir: PathBuf::from("runs/default"),
            train_data: None,
            test_data: None,
            modalities: w.modalities,
            organs: w.organs,
            findings: w.findings,
            lateralities: w.lateralities,
            close_train: w.close_train,
            close_test: w.close_test,
            open_train: w.open_train,
            open_test: w.open_test,
            num_options: w.num_options,
            open_noise: w.open_noise,
            shuffle_options: w.shuffle_options,
            context_window: 32,
            embed_dim: 16,
            hidden_dim: 128,
            warmup_steps: wu.steps,
            warmup_batch: wu.batch_size,
            warmup_lr: wu.lr,
            group_size: g.group_size,
            clip_eps: g.clip_eps,
            kl_beta: g.kl_beta,
            advantage_eps: g.advantage_eps,
            temperature: g.temperature,
            max_completion_len: g.max_completion_len,
            lambda: r.lambda,
            gamma: r.gamma,
            semantic_backend: r.semantic_backend,
            strategy: s.strategy,
            stage1_steps: s.stage1_steps,
            stage2_steps: s.stage2_steps,
            ref_reset_on_transition: s.ref_reset_on_transition,
            reset_optimizer_on_transition: s.reset_optimizer_on_transition,
            mix_rule: t.mix_rule,
            lr: t.lr,
            batch_size: t.batch_size,
            eval_every: t.eval_every,
            eval_limit: t.eval_limit,
            refine_train: false,
            auditor: AuditorKind::Mock,
            drop_policy: DropPolicy::Remove,
            audit_max_attempts: 3,
            auditor_concurrency: 4,
            auditor_timeout_secs: 60,
            auditor_temperature: 0.0,
            compare_seeds: vec![0, 1, 2],
        }
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self, CliError> {
        toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).unwrap_or_default()
    }

    pub fn world(&self) -> WorldSpec {
        WorldSpec {
            modalities: self.modalities.clone(),
            organs: self.organs.clone(),
            findings: self.findings.clone(),
            lateralities: self.lateralities.clone(),
            close_train: self.close_train,
            close_test: self.close_test,
            open_train: self.open_train,
            open_test: self.open_test,
            num_options: self.num_options,
            open_noise: self.open_noise,
            shuffle_options: self.shuffle_options,
            seed: self.world_seed,
        }
    }

    pub fn grpo(&self) -> GrpoConfig {
        GrpoConfig {
            group_size: self.group_size,
            clip_eps: self.clip_eps,
            kl_beta: self.kl_beta,
            advantage_eps: self.advantage_eps,
            temperature: self.temperature,
            max_completion_len: self.max_completion_len,
        }
    }

    pub fn reward(&self) -> RewardConfig {
        RewardConfig {
            lambda: self.lambda,
            gamma: self.gamma,
            semantic_backend: self.semantic_backend.clone(),
        }
    }

    pub fn schedule(&self) -> Schedule {
        Schedule {
            strategy: self.strategy,
            stage1_steps: self.stage1_steps,
            stage2_steps: self.stage2_steps,
            ref_reset_on_transition: self.ref_reset_on_transition,
            reset_optimizer_on_transition: self.reset_optimizer_on_transition,
        }
    }

    pub fn train(&self) -> TrainConfig {
        TrainConfig {
            grpo: self.grpo(),
            lr: self.lr,
            batch_size: self.batch_size,
            mix_rule: self.mix_rule,
            eval_every: self.eval_every,
            eval_limit: self.eval_limit,
            seed: self.seed,
        }
    }

    pub fn warmup(&self) -> WarmupConfig {
        WarmupConfig {
            steps: self.warmup_steps,
            batch_size: self.warmup_batch,
            lr: self.warmup_lr,
            seed: self.seed,
        }
    }

    /// Checks every section. Data paths must exist; the vocabulary size is
    /// only known once data is loaded, so policy dims are checked with a
    /// placeholder vocabulary.
    pub fn validate(&self) -> Result<(), CliError> {
        let cfg = |e: &dyn std::fmt::Display| CliError::Config(e.to_string());
        if self.train_data.is_none() {
            self.world().validate().map_err(|e| cfg(&e))?;
        }
        for p in [&self.train_data, &self.test_data].into_iter().flatten() {
            if !p.is_file() {
                return Err(CliError::Config(format!("dataset {} does not exist", p.display())));
            }
        }
        PolicyDims {
            vocab: 1,
            context: self.context_window,
            embed: self.embed_dim,
            hidden: self.hidden_dim,
        }
        .validate()
        .map_err(|e| cfg(&e))?;
        let reward = self.reward();
        reward.validate().map_err(|e| cfg(&e))?;
        ScorerRegistry::default()
            .get(&reward.semantic_backend)
            .map_err(|e| cfg(&e))?;
        self.schedule().validate().map_err(|e| cfg(&e))?;
        self.train().validate().map_err(|e| cfg(&e))?;
        if self.warmup_steps > 0 && (self.warmup_batch == 0 || !(self.warmup_lr > 0.0)) {
            return Err(CliError::Config("warmup needs a positive batch and learning rate".into()));
        }
        if self.audit_max_attempts == 0 || self.auditor_concurrency == 0 {
            return Err(CliError::Config(
                "audit_max_attempts and auditor_concurrency must be at least 1".into(),
            ));
        }
        if self.compare_seeds.is_empty() {
            return Err(CliError::Config("compare_seeds is empty".into()));
        }
        Ok(())
    }
}
