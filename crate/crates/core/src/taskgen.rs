//! Synthetic close- and open-ended QA over symbolic observations, plus the
//! prompt builders that feed them to a policy.
//!
//! An observation is the attribute tuple `[modality, organ, finding,
//! laterality]`. Every generated answer is a deterministic function of the
//! observation (and the option order for close-ended items), exposed as
//! [`derive_answer`].

use alloc::collections::BTreeSet;
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::rewards::TaskType;
use crate::rng::Rng;
use crate::vocab::{
    split_words, TokenId, Vocab, VocabError, ANSWER_CLOSE_ID, ANSWER_OPEN_ID, EOS, OBS_MARK,
    OPTIONS_MARK, PROMPT_END, THINK_CLOSE_ID, THINK_OPEN_ID,
};

/// The instruction template wrapped around every question in text mode.
pub const PROMPT_TEMPLATE: &str = "You are a helpful assistant. {Question} Output the thinking process in <think> </think> and final answer in <answer> </answer> tags. The output answer format should be as follows: <think> reasoning process here </think><answer> answer here (Do not provide any explanation) </answer> Please strictly follow the format.";

pub const OPTION_LETTERS: [&str; 8] = ["A", "B", "C", "D", "E", "F", "G", "H"];

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct AnswerOption {
    pub letter: String,
    pub text: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    #[default]
    Train,
    Test,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QAPair {
    pub id: String,
    pub observation: Vec<String>,
    pub question: String,
    pub answer: String,
    #[serde(rename = "type")]
    pub task_type: TaskType,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub options: Option<Vec<AnswerOption>>,
    #[serde(default)]
    pub split: Split,
    /// Free-form origin tag. Generated items carry `synthetic:<type>:<kind>`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub provenance: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum QaError {
    #[error("{id}: observation is empty")]
    EmptyObservation { id: String },
    #[error("{id}: observation symbol `{symbol}` contains whitespace")]
    BadObservationSymbol { id: String, symbol: String },
    #[error("{id}: answer `{answer}` is not one of the option letters")]
    AnswerNotAnOption { id: String, answer: String },
    #[error("{id}: duplicate option letter `{letter}`")]
    DuplicateOption { id: String, letter: String },
    #[error("{id}: open-ended pair carries options")]
    OpenWithOptions { id: String },
    #[error("{id}: empty question")]
    EmptyQuestion { id: String },
}

impl QaError {
    pub fn id(&self) -> &str {
        match self {
            QaError::EmptyObservation { id }
            | QaError::BadObservationSymbol { id, .. }
            | QaError::AnswerNotAnOption { id, .. }
            | QaError::DuplicateOption { id, .. }
            | QaError::OpenWithOptions { id }
            | QaError::EmptyQuestion { id } => id,
        }
    }
}

impl QAPair {
    pub fn validate(&self) -> Result<(), QaError> {
        let id = || self.id.clone();
        if self.observation.is_empty() {
            return Err(QaError::EmptyObservation { id: id() });
        }
        if let Some(s) = self
            .observation
            .iter()
            .find(|s| s.is_empty() || s.chars().any(char::is_whitespace))
        {
            return Err(QaError::BadObservationSymbol {
                id: id(),
                symbol: s.clone(),
            });
        }
        if self.question.trim().is_empty() {
            return Err(QaError::EmptyQuestion { id: id() });
        }
        match (self.task_type, &self.options) {
            (TaskType::Open, Some(_)) => return Err(QaError::OpenWithOptions { id: id() }),
            (TaskType::Close, Some(opts)) => {
                let mut seen = BTreeSet::new();
                for o in opts {
                    if !seen.insert(o.letter.as_str()) {
                        return Err(QaError::DuplicateOption {
                            id: id(),
                            letter: o.letter.clone(),
                        });
                    }
                }
                if !opts.iter().any(|o| o.letter == self.answer) {
                    return Err(QaError::AnswerNotAnOption {
                        id: id(),
                        answer: self.answer.clone(),
                    });
                }
            }
            _ => {}
        }
        Ok(())
    }

    /// Generated question family, if this pair came from the generator.
    pub fn kind(&self) -> Option<QuestionKind> {
        let p = self.provenance.as_deref()?;
        let rest = p.strip_prefix("synthetic:")?;
        let (ty, kind) = rest.split_once(':')?;
        match ty {
            "close" => Attribute::parse(kind).map(QuestionKind::Close),
            "open" => OpenKind::parse(kind).map(QuestionKind::Open),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Attribute {
    Modality,
    Organ,
    Finding,
    Laterality,
}

impl Attribute {
    pub const ALL: [Attribute; 4] = [
        Attribute::Modality,
        Attribute::Organ,
        Attribute::Finding,
        Attribute::Laterality,
    ];

    /// Position inside an observation tuple.
    pub fn slot(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            Attribute::Modality => "modality",
            Attribute::Organ => "organ",
            Attribute::Finding => "finding",
            Attribute::Laterality => "laterality",
        }
    }

    fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|a| a.name() == s)
    }

    pub fn close_question(self) -> &'static str {
        match self {
            Attribute::Modality => "Which imaging modality was used?",
            Attribute::Organ => "Which organ is shown?",
            Attribute::Finding => "What is the main finding?",
            Attribute::Laterality => "On which side is the finding?",
        }
    }
}

/// Open-ended question families and the attributes each one asks for.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum OpenKind {
    Modality,
    Organ,
    LateralityOrgan,
    ModalityOrganFinding,
}

impl OpenKind {
    pub const ALL: [OpenKind; 4] = [
        OpenKind::Modality,
        OpenKind::Organ,
        OpenKind::LateralityOrgan,
        OpenKind::ModalityOrganFinding,
    ];

    pub fn name(self) -> &'static str {
        match self {
            OpenKind::Modality => "modality",
            OpenKind::Organ => "organ",
            OpenKind::LateralityOrgan => "laterality_organ",
            OpenKind::ModalityOrganFinding => "modality_organ_finding",
        }
    }

    fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|k| k.name() == s)
    }

    pub fn attributes(self) -> &'static [Attribute] {
        match self {
            OpenKind::Modality => &[Attribute::Modality],
            OpenKind::Organ => &[Attribute::Organ],
            OpenKind::LateralityOrgan => &[Attribute::Laterality, Attribute::Organ],
            OpenKind::ModalityOrganFinding => {
                &[Attribute::Modality, Attribute::Organ, Attribute::Finding]
            }
        }
    }

    /// Well-posed phrasing: names every requested component.
    pub fn question(self) -> &'static str {
        match self {
            OpenKind::Modality => "Identify the imaging modality used to capture this image.",
            OpenKind::Organ => "Identify the organ shown in the image.",
            OpenKind::LateralityOrgan => "Identify the laterality and organ shown in the image.",
            OpenKind::ModalityOrganFinding => {
                "Identify the imaging modality, organ, and finding shown in the image."
            }
        }
    }
}

/// Under-specified phrasings mixed into the open-ended training split.
pub const VAGUE_QUESTIONS: [&str; 4] = [
    "What is shown in the image?",
    "How was this image taken?",
    "What can be seen here?",
    "Is there anything notable in this image?",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum QuestionKind {
    Close(Attribute),
    Open(OpenKind),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorldSpec {
    pub modalities: Vec<String>,
    pub organs: Vec<String>,
    pub findings: Vec<String>,
    pub lateralities: Vec<String>,
    pub close_train: usize,
    pub close_test: usize,
    pub open_train: usize,
    pub open_test: usize,
    pub num_options: usize,
    /// Probability that an open-ended training question is replaced by a
    /// vague phrasing.
    pub open_noise: f64,
    /// Present options in random order instead of the attribute's listed
    /// order.
    pub shuffle_options: bool,
    pub seed: u64,
}

fn strings(xs: &[&str]) -> Vec<String> {
    xs.iter().map(|s| s.to_string()).collect()
}

impl Default for WorldSpec {
    fn default() -> Self {
        Self {
            modalities: strings(&["ct", "mri", "xray", "ultrasound"]),
            organs: strings(&["liver", "lung", "kidney", "heart"]),
            findings: strings(&["normal", "mass", "effusion", "fracture"]),
            lateralities: strings(&["left", "right", "bilateral", "midline"]),
            close_train: 2000,
            close_test: 500,
            open_train: 2000,
            open_test: 500,
            num_options: 4,
            open_noise: 0.25,
            shuffle_options: false,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum WorldError {
    #[error("attribute set `{0}` is empty")]
    EmptyAttribute(&'static str),
    #[error("attribute set `{0}` has a symbol with whitespace or duplicates")]
    BadAttribute(&'static str),
    #[error("dataset size `{0}` must be at least 1")]
    ZeroSize(&'static str),
    #[error("num_options must be in 2..=8 and no larger than every attribute set, got {0}")]
    BadOptionCount(usize),
    #[error("open_noise must be a probability, got {0}")]
    BadNoise(f64),
    #[error("only {0} distinct observations; need at least 2 for disjoint splits")]
    TooFewObservations(usize),
}

impl WorldSpec {
    pub fn attribute(&self, a: Attribute) -> &[String] {
        match a {
            Attribute::Modality => &self.modalities,
            Attribute::Organ => &self.organs,
            Attribute::Finding => &self.findings,
            Attribute::Laterality => &self.lateralities,
        }
    }

    pub fn validate(&self) -> Result<(), WorldError> {
        for a in Attribute::ALL {
            let set = self.attribute(a);
            if set.is_empty() {
                return Err(WorldError::EmptyAttribute(a.name()));
            }
            let uniq: BTreeSet<&String> = set.iter().collect();
            if uniq.len() != set.len()
                || set.iter().any(|s| s.is_empty() || s.chars().any(char::is_whitespace))
            {
                return Err(WorldError::BadAttribute(a.name()));
            }
        }
        for (name, n) in [
            ("close_train", self.close_train),
            ("close_test", self.close_test),
            ("open_train", self.open_train),
            ("open_test", self.open_test),
        ] {
            if n == 0 {
                return Err(WorldError::ZeroSize(name));
            }
        }
        let min_set = Attribute::ALL
            .iter()
            .map(|&a| self.attribute(a).len())
            .min()
            .unwrap_or(0);
        if !(2..=OPTION_LETTERS.len()).contains(&self.num_options) || self.num_options > min_set {
            return Err(WorldError::BadOptionCount(self.num_options));
        }
        if !(0.0..=1.0).contains(&self.open_noise) {
            return Err(WorldError::BadNoise(self.open_noise));
        }
        let n_obs: usize = Attribute::ALL.iter().map(|&a| self.attribute(a).len()).product();
        if n_obs < 2 {
            return Err(WorldError::TooFewObservations(n_obs));
        }
        Ok(())
    }

    fn observations(&self) -> Vec<Vec<String>> {
        let mut out = Vec::new();
        for m in &self.modalities {
            for o in &self.organs {
                for f in &self.findings {
                    for l in &self.lateralities {
                        out.push(alloc::vec![m.clone(), o.clone(), f.clone(), l.clone()]);
                    }
                }
            }
        }
        out
    }
}

/// Generated datasets, partitioned by task type and split.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Datasets {
    pub close_train: Vec<QAPair>,
    pub close_test: Vec<QAPair>,
    pub open_train: Vec<QAPair>,
    pub open_test: Vec<QAPair>,
}

impl Datasets {
    pub fn all(&self) -> impl Iterator<Item = &QAPair> {
        self.close_train
            .iter()
            .chain(&self.close_test)
            .chain(&self.open_train)
            .chain(&self.open_test)
    }

    /// Regroups a flat list by task type and split.
    pub fn from_pairs(pairs: impl IntoIterator<Item = QAPair>) -> Self {
        let mut d = Datasets::default();
        for qa in pairs {
            match (qa.task_type, qa.split) {
                (TaskType::Close, Split::Train) => d.close_train.push(qa),
                (TaskType::Close, Split::Test) => d.close_test.push(qa),
                (TaskType::Open, Split::Train) => d.open_train.push(qa),
                (TaskType::Open, Split::Test) => d.open_test.push(qa),
            }
        }
        d
    }
}

/// Chooses the answer a perfect reader of the observation gives.
pub fn derive_answer(
    kind: QuestionKind,
    observation: &[String],
    options: Option<&[AnswerOption]>,
) -> Option<String> {
    match kind {
        QuestionKind::Close(attr) => {
            let value = observation.get(attr.slot())?;
            options?
                .iter()
                .find(|o| &o.text == value)
                .map(|o| o.letter.clone())
        }
        QuestionKind::Open(kind) => {
            let parts: Option<Vec<&str>> = kind
                .attributes()
                .iter()
                .map(|a| observation.get(a.slot()).map(String::as_str))
                .collect();
            Some(parts?.join(", "))
        }
    }
}

pub fn generate_dataset(spec: &WorldSpec) -> Result<Datasets, WorldError> {
    spec.validate()?;
    let mut rng = Rng::new(spec.seed);
    let mut obs = spec.observations();
    rng.shuffle(&mut obs);

    let n_train = spec.close_train + spec.open_train;
    let n_test = spec.close_test + spec.open_test;
    let total = obs.len();
    let test_obs = ((total * n_test + (n_train + n_test) / 2) / (n_train + n_test)).clamp(1, total - 1);
    let (test_pool, train_pool) = obs.split_at(test_obs);

    Ok(Datasets {
        close_train: close_items(spec, train_pool, Split::Train, spec.close_train, &mut rng),
        close_test: close_items(spec, test_pool, Split::Test, spec.close_test, &mut rng),
        open_train: open_items(spec, train_pool, Split::Train, spec.open_train, &mut rng),
        open_test: open_items(spec, test_pool, Split::Test, spec.open_test, &mut rng),
    })
}

fn split_name(s: Split) -> &'static str {
    match s {
        Split::Train => "train",
        Split::Test => "test",
    }
}

fn close_items(
    spec: &WorldSpec,
    pool: &[Vec<String>],
    split: Split,
    n: usize,
    rng: &mut Rng,
) -> Vec<QAPair> {
    (0..n)
        .map(|i| {
            let observation = pool[rng.below(pool.len())].clone();
            let attr = Attribute::ALL[rng.below(Attribute::ALL.len())];
            let gold = observation[attr.slot()].clone();
            let mut distractors: Vec<String> = spec
                .attribute(attr)
                .iter()
                .filter(|v| **v != gold)
                .cloned()
                .collect();
            rng.shuffle(&mut distractors);
            let mut texts = alloc::vec![gold];
            texts.extend(distractors.into_iter().take(spec.num_options - 1));
            if spec.shuffle_options {
                rng.shuffle(&mut texts);
            } else {
                let values = spec.attribute(attr);
                texts.sort_by_key(|t| values.iter().position(|v| v == t));
            }
            let options: Vec<AnswerOption> = texts
                .into_iter()
                .zip(OPTION_LETTERS)
                .map(|(text, l)| AnswerOption {
                    letter: l.to_string(),
                    text,
                })
                .collect();
            let kind = QuestionKind::Close(attr);
            let answer = derive_answer(kind, &observation, Some(&options)).unwrap_or_default();
            QAPair {
                id: format!("close-{}-{:05}", split_name(split), i),
                observation,
                question: attr.close_question().to_string(),
                answer,
                task_type: TaskType::Close,
                options: Some(options),
                split,
                provenance: Some(format!("synthetic:close:{}", attr.name())),
            }
        })
        .collect()
}

fn open_items(
    spec: &WorldSpec,
    pool: &[Vec<String>],
    split: Split,
    n: usize,
    rng: &mut Rng,
) -> Vec<QAPair> {
    (0..n)
        .map(|i| {
            let observation = pool[rng.below(pool.len())].clone();
            let kind = OpenKind::ALL[rng.below(OpenKind::ALL.len())];
            let vague = split == Split::Train && rng.uniform() < spec.open_noise;
            let question = if vague {
                VAGUE_QUESTIONS[rng.below(VAGUE_QUESTIONS.len())]
            } else {
                kind.question()
            };
            let answer =
                derive_answer(QuestionKind::Open(kind), &observation, None).unwrap_or_default();
            QAPair {
                id: format!("open-{}-{:05}", split_name(split), i),
                observation,
                question: question.to_string(),
                answer,
                task_type: TaskType::Open,
                options: None,
                split,
                provenance: Some(format!("synthetic:open:{}", kind.name())),
            }
        })
        .collect()
}

/// Collects every symbol needed to encode prompts and gold responses.
pub fn vocab_words<'a>(pairs: impl IntoIterator<Item = &'a QAPair>) -> BTreeSet<String> {
    let mut words = BTreeSet::new();
    for qa in pairs {
        words.extend(split_words(&qa.question));
        words.extend(qa.observation.iter().cloned());
        words.extend(split_words(&qa.answer));
        for o in qa.options.iter().flatten() {
            words.insert(o.letter.clone());
            words.extend(split_words(&o.text));
        }
    }
    words
}

pub fn build_vocab<'a>(pairs: impl IntoIterator<Item = &'a QAPair>) -> Result<Vocab, VocabError> {
    Vocab::build(vocab_words(pairs))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PromptMode {
    Symbolic,
    Text,
}

/// The question region of a prompt: what a prompt encodes, independent of
/// the rendering.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptParts {
    pub question: String,
    pub observation: Vec<String>,
    pub options: Option<Vec<AnswerOption>>,
}

impl PromptParts {
    pub fn of(qa: &QAPair) -> Self {
        Self {
            question: qa.question.clone(),
            observation: qa.observation.clone(),
            options: qa.options.clone(),
        }
    }

    /// Text substituted for `{Question}`: a bracketed observation line, the
    /// question, then the lettered options.
    pub fn render_question(&self) -> String {
        let mut s = format!("[observation: {}]\n{}", self.observation.join(" "), self.question);
        for o in self.options.iter().flatten() {
            s.push_str(&format!(" ({}) {}", o.letter, o.text));
        }
        s
    }

    pub fn render_text(&self) -> String {
        PROMPT_TEMPLATE.replacen("{Question}", &self.render_question(), 1)
    }

    /// `question… <obs> observation… [<options> letter text… …] <prompt_end>`
    pub fn encode(&self, vocab: &Vocab) -> Result<Vec<TokenId>, VocabError> {
        let mut out = Vec::new();
        for w in split_words(&self.question) {
            out.push(vocab.id(&w)?);
        }
        out.push(OBS_MARK);
        for s in &self.observation {
            out.push(vocab.id(s)?);
        }
        if let Some(opts) = &self.options {
            out.push(OPTIONS_MARK);
            for o in opts {
                out.push(vocab.id(&o.letter)?);
                for w in split_words(&o.text) {
                    out.push(vocab.id(&w)?);
                }
            }
        }
        out.push(PROMPT_END);
        Ok(out)
    }

    /// Inverse of [`PromptParts::encode`]. Option boundaries are recognized by
    /// the expected next letter (`A`, `B`, …).
    pub fn decode(vocab: &Vocab, ids: &[TokenId]) -> Result<Self, PromptDecodeError> {
        let body = match ids.split_last() {
            Some((&PROMPT_END, body)) => body,
            _ => return Err(PromptDecodeError::MissingEnd),
        };
        let obs_at = body
            .iter()
            .position(|&t| t == OBS_MARK)
            .ok_or(PromptDecodeError::MissingObservation)?;
        let question = vocab.detokenize(&body[..obs_at])?;
        let rest = &body[obs_at + 1..];
        let (obs_ids, opt_ids) = match rest.iter().position(|&t| t == OPTIONS_MARK) {
            Some(p) => (&rest[..p], Some(&rest[p + 1..])),
            None => (rest, None),
        };
        let observation = obs_ids
            .iter()
            .map(|&t| vocab.symbol(t).map(ToString::to_string))
            .collect::<Result<Vec<_>, _>>()?;
        let options = match opt_ids {
            None => None,
            Some(ids) => {
                let mut opts: Vec<AnswerOption> = Vec::new();
                let mut text_ids: Vec<TokenId> = Vec::new();
                for &t in ids {
                    let next_letter = OPTION_LETTERS.get(opts.len());
                    if next_letter.is_some_and(|l| vocab.get(l) == Some(t))
                        && (opts.is_empty() || !text_ids.is_empty())
                    {
                        if let Some(last) = opts.last_mut() {
                            last.text = vocab.detokenize(&text_ids)?;
                        }
                        text_ids.clear();
                        opts.push(AnswerOption {
                            letter: next_letter.map(|s| s.to_string()).unwrap_or_default(),
                            text: String::new(),
                        });
                    } else if opts.is_empty() {
                        return Err(PromptDecodeError::BadOptions);
                    } else {
                        text_ids.push(t);
                    }
                }
                if let Some(last) = opts.last_mut() {
                    last.text = vocab.detokenize(&text_ids)?;
                }
                Some(opts)
            }
        };
        Ok(Self {
            question,
            observation,
            options,
        })
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum PromptDecodeError {
    #[error("prompt does not end with <prompt_end>")]
    MissingEnd,
    #[error("prompt has no <obs> marker")]
    MissingObservation,
    #[error("malformed option list")]
    BadOptions,
    #[error(transparent)]
    Vocab(#[from] VocabError),
}

/// A built prompt in either rendering.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Prompt {
    Symbolic(Vec<TokenId>),
    Text(String),
}

pub fn build_prompt(qa: &QAPair, mode: PromptMode, vocab: &Vocab) -> Result<Prompt, VocabError> {
    let parts = PromptParts::of(qa);
    Ok(match mode {
        PromptMode::Symbolic => Prompt::Symbolic(parts.encode(vocab)?),
        PromptMode::Text => Prompt::Text(parts.render_text()),
    })
}

/// Symbolic prompt for `qa`.
pub fn encode_prompt(qa: &QAPair, vocab: &Vocab) -> Result<Vec<TokenId>, VocabError> {
    PromptParts::of(qa).encode(vocab)
}

/// `<think> think… </think><answer> answer… </answer> <eos>`
pub fn encode_response(vocab: &Vocab, think: &str, answer: &str) -> Result<Vec<TokenId>, VocabError> {
    let mut out = alloc::vec![THINK_OPEN_ID];
    for w in split_words(think) {
        out.push(vocab.id(&w)?);
    }
    out.push(THINK_CLOSE_ID);
    out.push(ANSWER_OPEN_ID);
    for w in split_words(answer) {
        out.push(vocab.id(&w)?);
    }
    out.push(ANSWER_CLOSE_ID);
    out.push(EOS);
    Ok(out)
}
