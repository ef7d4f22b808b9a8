//! Consistency auditing of open-ended QA pairs.
//!
//! An auditor receives a rendered prompt for one pair and answers with a
//! JSON verdict. Verdicts are validated strictly, then applied to the
//! dataset. [`MockAuditor`] is a deterministic rule-based auditor that needs
//! no network.

use alloc::boxed::Box;
use alloc::collections::BTreeMap;
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::fmt;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::rewards::{tokenize, TaskType};
use crate::taskgen::{QAPair, WorldSpec};

/// Auditor instructions. `{Original Question}` and `{Answer}` are replaced by
/// the pair's question and answer.
pub const AUDIT_PROMPT_TEMPLATE: &str = r#"ori_q: {Original Question}
ori_a: {Answer}

Role: QA-Consistency Auditor – an expert data-curator.
Your task is to refine open-ended visual-question-answering (VQA) pairs so that the revised question and answer remain logically and granularly consistent. These are open-end VQA pairs, not closed-end: do not embed answer choices in the question.

Process:
1. Read the original question (ori_q).
2. Ignore the visual content; focus only on the wording of the question and the expected form of the answer.
3. Internally simulate an expert’s likely free-form answer (Expert_Guess).
4. Compare Expert_Guess to the original answer (ori_a) to spot missing components or granularity gaps.
5. Decide on a status:
   - consistent – ori_q already elicits exactly the information found in ori_a.
   - needs_fix – ori_q is too broad, ambiguous, or does not explicitly request every element found in ori_a.
   - drop – The pair is unusable (contradictory, nonsensical, etc.).
6. If the status is needs_fix, craft new_q that:
   - Starts with a precise action verb ("Identify", "Describe", "Explain", …).
   - Explicitly requests every component required by ori_a.
   - Maintains an open-end format (no yes/no phrasing, no embedded choices).
   - Provides a 1-to-1 mapping: each phrase in ori_a must correspond to a clearly stated element in new_q.
   - Matches the granularity of ori_a exactly—no more, no less.
   - Ensures new_a presents components in the same order that new_q requests them.
7. Adjust new_a only if wording changes are necessary for brevity or clarity; never change the meaning.

Key Requirements:
- Open-ended: Questions must allow free-form expert responses; never embed answer choices.
- Multi-component precision: If the answer contains multiple elements, the question must explicitly ask for each.
- Action-verb prompts: Begin revised questions with verbs like “Identify”, “Describe”, “Explain”.
- Granularity match: Question scope must match answer specificity exactly.
- Order consistency: Arrange components in new_a in the same sequence as requested in new_q.
- Answer conciseness: Keep new_a as short as possible while fully capturing the meaning.

Output format:
Return one JSON object—nothing else—using this template:
{
  "status": "consistent | needs_fix | drop",
  "ori_q": "<string>",
  "ori_a": "<string>",
  "new_q": "<string>",
  "new_a": "<string>",
  "notes": "<less than 15 words rationale>"
}
"#;

const Q_SLOT: &str = "{Original Question}";
const A_SLOT: &str = "{Answer}";

/// Verbs a rewritten question may start with.
pub const ACTION_VERBS: [&str; 3] = ["Identify", "Describe", "Explain"];

pub const MAX_NOTE_WORDS: usize = 15;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum UsageError {
    #[error("pair {0} is close-ended; only open-ended pairs are audited")]
    CloseEnded(String),
}

/// Fills the prompt template. Slots are located in the template once, so
/// text inside the question cannot be mistaken for the answer slot.
pub fn render_audit_prompt(qa: &QAPair) -> Result<String, UsageError> {
    if qa.task_type != TaskType::Open {
        return Err(UsageError::CloseEnded(qa.id.clone()));
    }
    let qi = AUDIT_PROMPT_TEMPLATE.find(Q_SLOT).unwrap_or(0);
    let ai = AUDIT_PROMPT_TEMPLATE.find(A_SLOT).unwrap_or(0);
    let mut out = String::with_capacity(AUDIT_PROMPT_TEMPLATE.len() + qa.question.len() + qa.answer.len());
    out.push_str(&AUDIT_PROMPT_TEMPLATE[..qi]);
    out.push_str(&qa.question);
    out.push_str(&AUDIT_PROMPT_TEMPLATE[qi + Q_SLOT.len()..ai]);
    out.push_str(&qa.answer);
    out.push_str(&AUDIT_PROMPT_TEMPLATE[ai + A_SLOT.len()..]);
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AuditStatus {
    Consistent,
    NeedsFix,
    Drop,
}

impl AuditStatus {
    pub fn as_str(self) -> &'static str {
        match self {
            AuditStatus::Consistent => "consistent",
            AuditStatus::NeedsFix => "needs_fix",
            AuditStatus::Drop => "drop",
        }
    }

    fn parse(s: &str) -> Option<Self> {
        match s {
            "consistent" => Some(AuditStatus::Consistent),
            "needs_fix" => Some(AuditStatus::NeedsFix),
            "drop" => Some(AuditStatus::Drop),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AuditVerdict {
    pub status: AuditStatus,
    pub ori_q: String,
    pub ori_a: String,
    pub new_q: String,
    pub new_a: String,
    pub notes: String,
}

impl AuditVerdict {
    /// Compact JSON with fields in template order.
    pub fn to_json(&self) -> String {
        serde_json::to_string(self).unwrap_or_default()
    }
}

pub const VERDICT_FIELDS: [&str; 6] = ["status", "ori_q", "ori_a", "new_q", "new_a", "notes"];

/// Ways a verdict payload can fail validation. Checks run in this order:
/// JSON extraction, unknown keys, missing keys, value types, status literal,
/// field contents.
#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum SchemaError {
    #[error("payload is not a single JSON object: {0}")]
    NotJson(String),
    #[error("unknown field `{0}`")]
    UnknownField(String),
    #[error("missing field `{0}`")]
    MissingField(&'static str),
    #[error("field `{0}` must be a string")]
    WrongType(&'static str),
    #[error("status `{0}` is not one of consistent, needs_fix, drop")]
    BadStatus(String),
    #[error("field `{field}` is invalid: {reason}")]
    InvalidValue {
        field: &'static str,
        reason: &'static str,
    },
}

impl SchemaError {
    pub fn category(&self) -> &'static str {
        match self {
            SchemaError::NotJson(_) => "not_json",
            SchemaError::UnknownField(_) => "unknown_field",
            SchemaError::MissingField(_) => "missing_field",
            SchemaError::WrongType(_) => "wrong_type",
            SchemaError::BadStatus(_) => "bad_status",
            SchemaError::InvalidValue { .. } => "invalid_value",
        }
    }
}

/// Byte range of the first balanced `{...}` in `text`, honoring JSON string
/// escapes.
fn first_object(text: &str) -> Option<(usize, usize)> {
    let start = text.find('{')?;
    let mut depth = 0usize;
    let mut in_str = false;
    let mut escaped = false;
    for (i, c) in text[start..].char_indices() {
        if in_str {
            match c {
                _ if escaped => escaped = false,
                '\\' => escaped = true,
                '"' => in_str = false,
                _ => {}
            }
            continue;
        }
        match c {
            '"' => in_str = true,
            '{' => depth += 1,
            '}' => {
                depth -= 1;
                if depth == 0 {
                    return Some((start, start + i + 1));
                }
            }
            _ => {}
        }
    }
    None
}

/// Extracts the single JSON object from a response that may be wrapped in
/// prose or a code fence.
pub fn extract_json_object(raw: &str) -> Result<&str, SchemaError> {
    let (s, e) = first_object(raw).ok_or_else(|| SchemaError::NotJson("no balanced object".into()))?;
    if raw[e..].contains('{') {
        return Err(SchemaError::NotJson("more than one object".into()));
    }
    Ok(&raw[s..e])
}

fn word_count(s: &str) -> usize {
    s.split_whitespace().count()
}

pub fn validate_verdict(raw: &str) -> Result<AuditVerdict, SchemaError> {
    let body = extract_json_object(raw)?;
    let value: Value =
        serde_json::from_str(body).map_err(|e| SchemaError::NotJson(e.to_string()))?;
    let Value::Object(map) = value else {
        return Err(SchemaError::NotJson("top level is not an object".into()));
    };
    if let Some(k) = map.keys().find(|k| !VERDICT_FIELDS.contains(&k.as_str())) {
        return Err(SchemaError::UnknownField(k.clone()));
    }
    let mut fields: BTreeMap<&'static str, &str> = BTreeMap::new();
    for f in VERDICT_FIELDS {
        if !map.contains_key(f) {
            return Err(SchemaError::MissingField(f));
        }
    }
    for f in VERDICT_FIELDS {
        match &map[f] {
            Value::String(s) => {
                fields.insert(f, s.as_str());
            }
            _ => return Err(SchemaError::WrongType(f)),
        }
    }
    let status = AuditStatus::parse(fields["status"])
        .ok_or_else(|| SchemaError::BadStatus(fields["status"].to_string()))?;
    if status == AuditStatus::NeedsFix {
        for f in ["new_q", "new_a"] {
            if fields[f].trim().is_empty() {
                return Err(SchemaError::InvalidValue {
                    field: if f == "new_q" { "new_q" } else { "new_a" },
                    reason: "must be nonempty when status is needs_fix",
                });
            }
        }
    }
    if word_count(fields["notes"]) > MAX_NOTE_WORDS {
        return Err(SchemaError::InvalidValue {
            field: "notes",
            reason: "longer than 15 words",
        });
    }
    Ok(AuditVerdict {
        status,
        ori_q: fields["ori_q"].to_string(),
        ori_a: fields["ori_a"].to_string(),
        new_q: fields["new_q"].to_string(),
        new_a: fields["new_a"].to_string(),
        notes: fields["notes"].to_string(),
    })
}

/// Answer component categories known to the rule-based auditor.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Category {
    Modality,
    Organ,
    Finding,
    Laterality,
    Sequence,
    Feature,
}

impl Category {
    pub const ALL: [Category; 6] = [
        Category::Modality,
        Category::Organ,
        Category::Finding,
        Category::Laterality,
        Category::Sequence,
        Category::Feature,
    ];

    /// How a rewritten question names the category.
    fn phrase(self, plural: bool) -> &'static str {
        match (self, plural) {
            (Category::Modality, false) => "imaging modality",
            (Category::Modality, true) => "imaging modalities",
            (Category::Organ, false) => "organ",
            (Category::Organ, true) => "organs",
            (Category::Finding, false) => "finding",
            (Category::Finding, true) => "findings",
            (Category::Laterality, false) => "laterality",
            (Category::Laterality, true) => "lateralities",
            (Category::Sequence, false) => "sequence type",
            (Category::Sequence, true) => "sequence types",
            (Category::Feature, false) => "feature",
            (Category::Feature, true) => "features",
        }
    }

    /// Question words that request the category, singular then plural.
    fn keywords(self) -> (&'static [&'static str], &'static [&'static str]) {
        match self {
            Category::Modality => (&["modality"], &["modalities"]),
            Category::Organ => (&["organ"], &["organs"]),
            Category::Finding => (&["finding", "abnormality"], &["findings", "abnormalities"]),
            Category::Laterality => (&["laterality", "side"], &["lateralities", "sides"]),
            Category::Sequence => (&["sequence"], &["sequences"]),
            Category::Feature => (&["feature"], &["features"]),
        }
    }
}

/// Vocabulary of answer terms per category. Terms may span several words.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Lexicon {
    terms: Vec<(Vec<String>, Category)>,
}

fn words(s: &str) -> Vec<String> {
    tokenize(s)
}

impl Default for Lexicon {
    fn default() -> Self {
        let mut lx = Self { terms: Vec::new() };
        let table: [(Category, &[&str]); 5] = [
            (
                Category::Modality,
                &["ct", "mri", "x-ray", "xray", "ultrasound", "pet", "mammography", "angiography"],
            ),
            (
                Category::Organ,
                &[
                    "liver", "lung", "lungs", "kidney", "heart", "spleen", "brain", "bladder",
                    "colon", "stomach", "pancreas",
                ],
            ),
            (
                Category::Finding,
                &[
                    "normal", "mass", "effusion", "fracture", "nodule", "edema", "tumor",
                    "pneumonia",
                ],
            ),
            (Category::Laterality, &["left", "right", "bilateral", "midline"]),
            (
                Category::Sequence,
                &["diffusion weighted", "t1", "t2", "flair", "dwi", "t1 weighted", "t2 weighted"],
            ),
        ];
        for (cat, terms) in table {
            for t in terms {
                lx.add(t, cat);
            }
        }
        lx
    }
}

impl Lexicon {
    pub fn add(&mut self, term: &str, cat: Category) {
        let w = words(term);
        if !w.is_empty() && !self.terms.iter().any(|(t, _)| *t == w) {
            self.terms.push((w, cat));
        }
    }

    /// Default terms plus every attribute value of `world`.
    pub fn for_world(world: &WorldSpec) -> Self {
        let mut lx = Self::default();
        for v in &world.modalities {
            lx.add(v, Category::Modality);
        }
        for v in &world.organs {
            lx.add(v, Category::Organ);
        }
        for v in &world.findings {
            lx.add(v, Category::Finding);
        }
        for v in &world.lateralities {
            lx.add(v, Category::Laterality);
        }
        lx
    }

    /// Category of the earliest known term in `component`, longest term
    /// first at equal positions; `Feature` when nothing matches.
    pub fn categorize(&self, component: &str) -> Category {
        let w = words(component);
        let mut best: Option<(usize, usize, Category)> = None;
        for (term, cat) in &self.terms {
            if term.len() > w.len() {
                continue;
            }
            if let Some(pos) = (0..=w.len() - term.len()).find(|&i| w[i..i + term.len()] == term[..]) {
                let better = match best {
                    None => true,
                    Some((bp, bl, _)) => pos < bp || (pos == bp && term.len() > bl),
                };
                if better {
                    best = Some((pos, term.len(), *cat));
                }
            }
        }
        best.map_or(Category::Feature, |(_, _, c)| c)
    }
}

const YES_NO_OPENERS: [&str; 14] = [
    "is", "are", "was", "were", "does", "do", "did", "can", "could", "has", "have", "will",
    "should", "would",
];

fn is_yes_no_question(q: &str) -> bool {
    tokenize(q)
        .first()
        .is_some_and(|w| YES_NO_OPENERS.contains(&w.as_str()))
}

fn answer_components(a: &str) -> Vec<&str> {
    a.split(',').map(str::trim).filter(|c| !c.is_empty()).collect()
}

/// Components grouped by category, categories in order of first appearance.
fn group_components<'a>(lexicon: &Lexicon, comps: &[&'a str]) -> Vec<(Category, Vec<&'a str>)> {
    let mut groups: Vec<(Category, Vec<&'a str>)> = Vec::new();
    for &c in comps {
        let cat = lexicon.categorize(c);
        match groups.iter_mut().find(|(g, _)| *g == cat) {
            Some((_, v)) => v.push(c),
            None => groups.push((cat, alloc::vec![c])),
        }
    }
    groups
}

/// `Some(plural)` when the question asks for the category.
fn requested(q_words: &[String], cat: Category) -> Option<bool> {
    let (sing, plur) = cat.keywords();
    let has = |set: &[&str]| q_words.iter().any(|w| set.contains(&w.as_str()));
    if has(plur) {
        Some(true)
    } else if has(sing) {
        Some(false)
    } else {
        None
    }
}

fn join_phrases(parts: &[&str]) -> String {
    match parts {
        [] => String::new(),
        [a] => a.to_string(),
        [a, b] => alloc::format!("{a} and {b}"),
        _ => {
            let (last, head) = parts.split_last().unwrap_or((&"", &[]));
            alloc::format!("{}, and {}", head.join(", "), last)
        }
    }
}

/// Question asking for exactly the given categories, in order.
pub fn canonical_question(groups: &[(Category, usize)]) -> String {
    match groups {
        [(Category::Modality, 1)] => "Identify the imaging modality used to capture this image.".into(),
        [(cat, n)] if *n > 1 => alloc::format!("Identify the main {} visible in the image.", cat.phrase(true)),
        _ => {
            let phrases: Vec<&str> = groups.iter().map(|&(c, n)| c.phrase(n > 1)).collect();
            alloc::format!("Identify the {} shown in the image.", join_phrases(&phrases))
        }
    }
}

/// Deterministic rule-based audit of one open-ended pair.
pub fn rule_mock_audit(qa: &QAPair, lexicon: &Lexicon) -> AuditVerdict {
    let verdict = |status, new_q: String, new_a: String, notes: &str| AuditVerdict {
        status,
        ori_q: qa.question.clone(),
        ori_a: qa.answer.clone(),
        new_q,
        new_a,
        notes: notes.to_string(),
    };
    let comps = answer_components(&qa.answer);
    let bare_yes_no = comps.len() == 1 && matches!(comps[0].to_lowercase().as_str(), "yes" | "no");
    if comps.is_empty() || qa.question.trim().is_empty() || bare_yes_no {
        return verdict(
            AuditStatus::Drop,
            String::new(),
            String::new(),
            "Answer cannot support an open-ended question.",
        );
    }
    let groups = group_components(lexicon, &comps);
    let shape: Vec<(Category, usize)> = groups.iter().map(|(c, v)| (*c, v.len())).collect();
    let new_q = canonical_question(&shape);
    let new_a = groups
        .iter()
        .flat_map(|(_, v)| v.iter().copied())
        .collect::<Vec<_>>()
        .join(", ");
    if is_yes_no_question(&qa.question) {
        return verdict(
            AuditStatus::NeedsFix,
            new_q,
            new_a,
            "Rephrases a yes/no question into open-ended form.",
        );
    }
    let q_words = tokenize(&qa.question);
    let matches_answer = shape
        .iter()
        .all(|&(c, n)| requested(&q_words, c) == Some(n > 1));
    let over_asks = Category::ALL
        .iter()
        .any(|&c| requested(&q_words, c).is_some() && !shape.iter().any(|&(s, _)| s == c));
    let ordered = new_a == comps.join(", ");
    if matches_answer && !over_asks && ordered {
        return verdict(
            AuditStatus::Consistent,
            String::new(),
            String::new(),
            "Question already requests exactly the answer content.",
        );
    }
    let notes = if shape.len() == 1 && shape[0].1 > 1 {
        "Clarifies the need to identify multiple components."
    } else {
        "Question now requests every answer component explicitly."
    };
    verdict(AuditStatus::NeedsFix, new_q, new_a, notes)
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum AuditorError {
    #[error("transport: {0}")]
    Transport(String),
    #[error("timed out")]
    Timeout,
}

/// Source of raw verdict text for a prompt.
pub trait Auditor: Send + Sync {
    fn complete(&self, prompt: &str, qa: &QAPair) -> Result<String, AuditorError>;
}

impl<A: Auditor + ?Sized> Auditor for Box<A> {
    fn complete(&self, prompt: &str, qa: &QAPair) -> Result<String, AuditorError> {
        (**self).complete(prompt, qa)
    }
}

/// Answers with the serialized [`rule_mock_audit`] verdict.
#[derive(Debug, Clone, Default)]
pub struct MockAuditor {
    pub lexicon: Lexicon,
}

impl Auditor for MockAuditor {
    fn complete(&self, _prompt: &str, qa: &QAPair) -> Result<String, AuditorError> {
        Ok(rule_mock_audit(qa, &self.lexicon).to_json())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DropPolicy {
    Keep,
    #[default]
    Remove,
}

/// Result of auditing one pair, including every failed attempt.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AuditOutcome {
    pub verdict: Option<AuditVerdict>,
    pub attempts: usize,
    pub schema_failures: usize,
    pub transport_failures: usize,
    pub last_error: Option<String>,
}

/// Audits `qa`, retrying schema and transport failures up to
/// `max_attempts` total attempts.
pub fn audit_one<A: Auditor + ?Sized>(auditor: &A, qa: &QAPair, max_attempts: usize) -> AuditOutcome {
    let mut out = AuditOutcome {
        verdict: None,
        attempts: 0,
        schema_failures: 0,
        transport_failures: 0,
        last_error: None,
    };
    let prompt = match render_audit_prompt(qa) {
        Ok(p) => p,
        Err(e) => {
            out.last_error = Some(e.to_string());
            return out;
        }
    };
    for _ in 0..max_attempts.max(1) {
        out.attempts += 1;
        match auditor.complete(&prompt, qa) {
            Ok(raw) => match validate_verdict(&raw) {
                Ok(v) => {
                    out.verdict = Some(v);
                    return out;
                }
                Err(e) => {
                    out.schema_failures += 1;
                    out.last_error = Some(e.to_string());
                }
            },
            Err(e) => {
                out.transport_failures += 1;
                out.last_error = Some(e.to_string());
            }
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct FailedPair {
    pub id: String,
    pub error: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct RefineReport {
    pub total: usize,
    pub passthrough_close: usize,
    pub consistent: usize,
    pub needs_fix: usize,
    pub drop: usize,
    pub removed: usize,
    pub schema_failures: usize,
    pub transport_failures: usize,
    pub retries: usize,
    pub failed: Vec<FailedPair>,
}

impl RefineReport {
    /// Associative merge of two reports.
    pub fn merge(&mut self, other: &RefineReport) {
        self.total += other.total;
        self.passthrough_close += other.passthrough_close;
        self.consistent += other.consistent;
        self.needs_fix += other.needs_fix;
        self.drop += other.drop;
        self.removed += other.removed;
        self.schema_failures += other.schema_failures;
        self.transport_failures += other.transport_failures;
        self.retries += other.retries;
        self.failed.extend(other.failed.iter().cloned());
        self.failed.sort_by(|a, b| a.id.cmp(&b.id));
    }
}

impl fmt::Display for RefineReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{} pairs: {} close passthrough, {} consistent, {} needs_fix, {} drop ({} removed), {} failed, {} retries",
            self.total,
            self.passthrough_close,
            self.consistent,
            self.needs_fix,
            self.drop,
            self.removed,
            self.failed.len(),
            self.retries
        )
    }
}

/// Applies audit outcomes, one per pair in order (`None` for close-ended
/// pairs, which pass through).
pub fn apply_outcomes(
    pairs: &[QAPair],
    outcomes: &[Option<AuditOutcome>],
    drop_policy: DropPolicy,
) -> (Vec<QAPair>, RefineReport) {
    let mut report = RefineReport {
        total: pairs.len(),
        ..RefineReport::default()
    };
    let mut out = Vec::with_capacity(pairs.len());
    for (qa, outcome) in pairs.iter().zip(outcomes) {
        let Some(o) = outcome else {
            report.passthrough_close += 1;
            out.push(qa.clone());
            continue;
        };
        report.schema_failures += o.schema_failures;
        report.transport_failures += o.transport_failures;
        report.retries += o.attempts.saturating_sub(1);
        match &o.verdict {
            None => {
                report.failed.push(FailedPair {
                    id: qa.id.clone(),
                    error: o.last_error.clone().unwrap_or_default(),
                });
                out.push(qa.clone());
            }
            Some(v) => match v.status {
                AuditStatus::Consistent => {
                    report.consistent += 1;
                    out.push(qa.clone());
                }
                AuditStatus::NeedsFix => {
                    report.needs_fix += 1;
                    let mut fixed = qa.clone();
                    fixed.question = v.new_q.trim().to_string();
                    fixed.answer = v.new_a.trim().to_string();
                    out.push(fixed);
                }
                AuditStatus::Drop => {
                    report.drop += 1;
                    match drop_policy {
                        DropPolicy::Keep => out.push(qa.clone()),
                        DropPolicy::Remove => report.removed += 1,
                    }
                }
            },
        }
    }
    (out, report)
}

/// Audits every open-ended pair sequentially and applies the verdicts.
pub fn refine_dataset<A: Auditor + ?Sized>(
    pairs: &[QAPair],
    auditor: &A,
    drop_policy: DropPolicy,
    max_attempts: usize,
) -> (Vec<QAPair>, RefineReport) {
    let outcomes: Vec<Option<AuditOutcome>> = pairs
        .iter()
        .map(|qa| (qa.task_type == TaskType::Open).then(|| audit_one(auditor, qa, max_attempts)))
        .collect();
    apply_outcomes(pairs, &outcomes, drop_policy)
}
