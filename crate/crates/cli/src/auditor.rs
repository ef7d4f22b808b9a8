//! Chat-completion auditor client and concurrent refinement.
//!
//! Request: `POST {AUDITOR_ENDPOINT}` with JSON body
//! `{"model": .., "messages": [{"role": "user", "content": <prompt>}], "temperature": ..}`
//! and `Authorization: Bearer {AUDITOR_API_KEY}` when the key is set. The
//! verdict text is read from `choices[0].message.content`.

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::Duration;

use cgrpo_core::refinery::{
    apply_outcomes, audit_one, AuditOutcome, Auditor, AuditorError, DropPolicy, RefineReport,
};
use cgrpo_core::rewards::TaskType;
use cgrpo_core::taskgen::QAPair;
use serde::{Deserialize, Serialize};

use crate::error::CliError;

pub const ENV_ENDPOINT: &str = "AUDITOR_ENDPOINT";
pub const ENV_API_KEY: &str = "AUDITOR_API_KEY";
pub const ENV_MODEL: &str = "AUDITOR_MODEL";

#[derive(Debug, Serialize)]
pub struct ChatMessage<'a> {
    pub role: &'a str,
    pub content: &'a str,
}

#[derive(Debug, Serialize)]
pub struct ChatRequest<'a> {
    pub model: &'a str,
    pub messages: Vec<ChatMessage<'a>>,
    pub temperature: f64,
}

#[derive(Debug, Deserialize)]
struct ChatResponse {
    choices: Vec<Choice>,
}

#[derive(Debug, Deserialize)]
struct Choice {
    message: Message,
}

#[derive(Debug, Deserialize)]
struct Message {
    content: String,
}

pub struct HttpAuditor {
    agent: ureq::Agent,
    endpoint: String,
    api_key: Option<String>,
    model: String,
    temperature: f64,
}

impl HttpAuditor {
    pub fn new(
        endpoint: String,
        api_key: Option<String>,
        model: String,
        temperature: f64,
        timeout: Duration,
    ) -> Self {
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(timeout))
            .http_status_as_error(true)
            .build()
            .into();
        Self {
            agent,
            endpoint,
            api_key,
            model,
            temperature,
        }
    }

    /// Reads the endpoint and model (required) and API key (optional) from
    /// the environment.
    pub fn from_env(temperature: f64, timeout: Duration) -> Result<Self, CliError> {
        let var = |k: &str| std::env::var(k).ok().filter(|v| !v.is_empty());
        let endpoint = var(ENV_ENDPOINT)
            .ok_or_else(|| CliError::Config(format!("{ENV_ENDPOINT} is not set")))?;
        let model =
            var(ENV_MODEL).ok_or_else(|| CliError::Config(format!("{ENV_MODEL} is not set")))?;
        Ok(Self::new(endpoint, var(ENV_API_KEY), model, temperature, timeout))
    }
}

impl Auditor for HttpAuditor {
    fn complete(&self, prompt: &str, _qa: &QAPair) -> Result<String, AuditorError> {
        let body = ChatRequest {
            model: &self.model,
            messages: vec![ChatMessage {
                role: "user",
                content: prompt,
            }],
            temperature: self.temperature,
        };
        let mut req = self.agent.post(&self.endpoint);
        if let Some(key) = &self.api_key {
            req = req.header("Authorization", &format!("Bearer {key}"));
        }
        let mut resp = req.send_json(&body).map_err(|e| match e {
            ureq::Error::Timeout(_) => AuditorError::Timeout,
            other => AuditorError::Transport(other.to_string()),
        })?;
        let parsed: ChatResponse = resp
            .body_mut()
            .read_json()
            .map_err(|e| AuditorError::Transport(format!("bad response body: {e}")))?;
        parsed
            .choices
            .into_iter()
            .next()
            .map(|c| c.message.content)
            .ok_or_else(|| AuditorError::Transport("response has no choices".into()))
    }
}

/// Audits open-ended pairs with at most `concurrency` requests in flight.
/// Results are placed by input index, so completion order is irrelevant.
pub fn refine_concurrent<A: Auditor + ?Sized>(
    pairs: &[QAPair],
    auditor: &A,
    drop_policy: DropPolicy,
    max_attempts: usize,
    concurrency: usize,
) -> (Vec<QAPair>, RefineReport) {
    let slots: Vec<Mutex<Option<AuditOutcome>>> = pairs.iter().map(|_| Mutex::new(None)).collect();
    let next = AtomicUsize::new(0);
    std::thread::scope(|s| {
        for _ in 0..concurrency.max(1).min(pairs.len().max(1)) {
            s.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                let Some(qa) = pairs.get(i) else { break };
                if qa.task_type == TaskType::Open {
                    let o = audit_one(auditor, qa, max_attempts);
                    if let Ok(mut slot) = slots[i].lock() {
                        *slot = Some(o);
                    }
                }
            });
        }
    });
    let outcomes: Vec<Option<AuditOutcome>> = slots
        .into_iter()
        .map(|m| m.into_inner().unwrap_or(None))
        .collect();
    apply_outcomes(pairs, &outcomes, drop_policy)
}
