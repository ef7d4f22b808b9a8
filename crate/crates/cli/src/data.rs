//! JSONL datasets and atomic file output.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use cgrpo_core::rewards::TaskType;
use cgrpo_core::taskgen::{AnswerOption, QAPair, Split};
use serde::{Deserialize, Serialize};

use crate::error::CliError;

/// Observation used for external pairs that carry none.
pub const PLACEHOLDER_OBSERVATION: &str = "<none>";

/// On-disk record. `observation`, `options`, `split` and `provenance` may be
/// omitted.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Record {
    id: String,
    question: String,
    answer: String,
    #[serde(rename = "type")]
    task_type: TaskType,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    options: Option<Vec<AnswerOption>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    observation: Option<Vec<String>>,
    #[serde(default)]
    split: Split,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    provenance: Option<String>,
}

impl From<Record> for QAPair {
    fn from(r: Record) -> Self {
        QAPair {
            id: r.id,
            observation: r
                .observation
                .unwrap_or_else(|| vec![PLACEHOLDER_OBSERVATION.to_string()]),
            question: r.question,
            answer: r.answer,
            task_type: r.task_type,
            options: r.options,
            split: r.split,
            provenance: r.provenance,
        }
    }
}

pub fn parse_jsonl(text: &str) -> Result<Vec<QAPair>, CliError> {
    let mut pairs = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let rec: Record = serde_json::from_str(line)
            .map_err(|e| CliError::Data(format!("line {}: {e}", i + 1)))?;
        pairs.push(QAPair::from(rec));
    }
    let bad: Vec<String> = pairs
        .iter()
        .filter_map(|p| p.validate().err())
        .map(|e| e.to_string())
        .collect();
    if !bad.is_empty() {
        return Err(CliError::Data(format!("invalid pairs: {}", bad.join("; "))));
    }
    let mut ids: Vec<&str> = pairs.iter().map(|p| p.id.as_str()).collect();
    ids.sort_unstable();
    if let Some(w) = ids.windows(2).find(|w| w[0] == w[1]) {
        return Err(CliError::Data(format!("duplicate id {}", w[0])));
    }
    Ok(pairs)
}

pub fn load_jsonl(path: &Path) -> Result<Vec<QAPair>, CliError> {
    let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    parse_jsonl(&text).map_err(|e| match e {
        CliError::Data(m) => CliError::Data(format!("{}: {m}", path.display())),
        other => other,
    })
}

pub fn to_jsonl(pairs: &[QAPair]) -> String {
    let mut out = String::new();
    for p in pairs {
        out.push_str(&serde_json::to_string(p).unwrap_or_default());
        out.push('\n');
    }
    out
}

fn temp_path(path: &Path) -> PathBuf {
    let mut name = path.file_name().unwrap_or_default().to_os_string();
    name.push(".tmp");
    path.with_file_name(name)
}

/// Writes via a sibling temporary file and a rename.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    }
    let tmp = temp_path(path);
    fs::write(&tmp, bytes).map_err(|e| CliError::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| CliError::io(path, e))
}

/// Line-oriented output that only appears under its final name once
/// [`AtomicLines::commit`] is called.
pub struct AtomicLines {
    path: PathBuf,
    tmp: PathBuf,
    file: fs::File,
}

impl AtomicLines {
    pub fn create(path: &Path) -> Result<Self, CliError> {
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
        }
        let tmp = temp_path(path);
        let file = fs::File::create(&tmp).map_err(|e| CliError::io(&tmp, e))?;
        Ok(Self {
            path: path.to_path_buf(),
            tmp,
            file,
        })
    }

    pub fn line(&mut self, line: &str) -> Result<(), CliError> {
        writeln!(self.file, "{line}").map_err(|e| CliError::io(&self.tmp, e))
    }

    pub fn commit(self) -> Result<(), CliError> {
        self.file.sync_all().map_err(|e| CliError::io(&self.tmp, e))?;
        fs::rename(&self.tmp, &self.path).map_err(|e| CliError::io(&self.path, e))
    }

    pub fn abandon(self) {
        let _ = fs::remove_file(&self.tmp);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn line_numbers_in_errors() {
        let text = "{\"id\":\"a\",\"question\":\"q\",\"answer\":\"x\",\"type\":\"open\"}\nnot json\n";
        let e = parse_jsonl(text).unwrap_err();
        assert!(e.to_string().contains("line 2"), "{e}");
    }

    #[test]
    fn missing_observation_gets_placeholder() {
        let p = parse_jsonl("{\"id\":\"a\",\"question\":\"q\",\"answer\":\"x\",\"type\":\"open\"}").unwrap();
        assert_eq!(p[0].observation, vec![PLACEHOLDER_OBSERVATION.to_string()]);
        assert!(parse_jsonl("").unwrap().is_empty());
    }

    #[test]
    fn bad_letter_lists_id() {
        let line = r#"{"id":"c7","question":"q","answer":"E","type":"close","options":[{"letter":"A","text":"x"}]}"#;
        let e = parse_jsonl(line).unwrap_err();
        assert!(e.to_string().contains("c7"), "{e}");
    }
}
