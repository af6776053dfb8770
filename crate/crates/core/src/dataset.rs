//! JSON-lines dataset ingestion: one instance per line.
//!
//! A `gold` field may be an integer or a list of correct indices; lists are
//! normalized to a single correct answer by keeping the first correct choice
//! and dropping the other correct ones, so every task presents exactly one
//! correct answer.

use std::path::Path;

use serde::Deserialize;
use thiserror::Error;

use crate::model::{Instance, ModelError};

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("failed to read dataset {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}:{line}: {source}")]
    Parse {
        path: String,
        line: usize,
        #[source]
        source: serde_json::Error,
    },
    #[error("{path}:{line}: {source}")]
    Invalid {
        path: String,
        line: usize,
        #[source]
        source: ModelError,
    },
    #[error("{path}:{line}: gold list selects no valid choice")]
    BadGoldList { path: String, line: usize },
}

#[derive(Debug, Deserialize)]
#[serde(untagged)]
enum GoldField {
    One(usize),
    Many(Vec<usize>),
}

#[derive(Debug, Deserialize)]
struct RawInstance {
    id: String,
    #[serde(default)]
    context: Option<String>,
    #[serde(default)]
    question: Option<String>,
    #[serde(default)]
    question_kind: Option<String>,
    choices: Vec<String>,
    #[serde(default)]
    gold: Option<GoldField>,
}

fn normalize(raw: RawInstance, path: &str, line: usize) -> Result<Instance, DatasetError> {
    let (choices, gold) = match raw.gold {
        None => (raw.choices, None),
        Some(GoldField::One(g)) => (raw.choices, Some(g)),
        Some(GoldField::Many(all)) => {
            let mut correct: Vec<usize> = all;
            correct.sort_unstable();
            correct.dedup();
            let first = *correct
                .first()
                .filter(|g| **g < raw.choices.len())
                .ok_or_else(|| DatasetError::BadGoldList {
                    path: path.to_string(),
                    line,
                })?;
            // Keep the first correct answer, drop the remaining correct
            // choices, keep every distractor.
            let mut choices = Vec::with_capacity(raw.choices.len());
            let mut gold = 0usize;
            for (i, choice) in raw.choices.into_iter().enumerate() {
                if i == first {
                    gold = choices.len();
                    choices.push(choice);
                } else if !correct.contains(&i) {
                    choices.push(choice);
                }
            }
            (choices, Some(gold))
        }
    };
    let inst = Instance {
        id: raw.id,
        context: raw.context,
        question: raw.question,
        question_kind: raw.question_kind,
        choices,
        gold,
    };
    inst.validate().map_err(|source| DatasetError::Invalid {
        path: path.to_string(),
        line,
        source,
    })?;
    Ok(inst)
}

pub fn load_instances(path: &Path) -> Result<Vec<Instance>, DatasetError> {
    let display = path.display().to_string();
    let raw = std::fs::read_to_string(path).map_err(|source| DatasetError::Io {
        path: display.clone(),
        source,
    })?;
    let mut instances = Vec::new();
    for (i, line) in raw.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let parsed: RawInstance =
            serde_json::from_str(line).map_err(|source| DatasetError::Parse {
                path: display.clone(),
                line: i + 1,
                source,
            })?;
        instances.push(normalize(parsed, &display, i + 1)?);
    }
    Ok(instances)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn write_dataset(lines: &[&str]) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        for line in lines {
            writeln!(f, "{line}").unwrap();
        }
        f
    }

    #[test]
    fn loads_plain_instances() {
        let f = write_dataset(&[
            r#"{"id":"a","context":"ctx","choices":["x","y"],"gold":1}"#,
            r#"{"id":"b","question":"q?","choices":["x","y","z"]}"#,
        ]);
        let instances = load_instances(f.path()).unwrap();
        assert_eq!(instances.len(), 2);
        assert_eq!(instances[0].gold, Some(1));
        assert_eq!(instances[1].gold, None);
    }

    #[test]
    fn multi_gold_normalized_to_single_correct() {
        let f = write_dataset(&[
            r#"{"id":"m","question":"q?","choices":["c1","d1","c2","d2"],"gold":[0,2]}"#,
        ]);
        let instances = load_instances(f.path()).unwrap();
        let inst = &instances[0];
        assert_eq!(inst.choices, vec!["c1", "d1", "d2"]);
        assert_eq!(inst.gold, Some(0));
    }

    #[test]
    fn multi_gold_keeps_first_correct_even_when_late() {
        let f = write_dataset(&[
            r#"{"id":"m","question":"q?","choices":["d1","c1","c2"],"gold":[2,1]}"#,
        ]);
        let instances = load_instances(f.path()).unwrap();
        let inst = &instances[0];
        assert_eq!(inst.choices, vec!["d1", "c1"]);
        assert_eq!(inst.gold, Some(1));
    }

    #[test]
    fn parse_error_reports_line() {
        let f = write_dataset(&[r#"{"id":"a","choices":["x","y"]}"#, "not json"]);
        match load_instances(f.path()) {
            Err(DatasetError::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn invalid_gold_rejected() {
        let f = write_dataset(&[r#"{"id":"a","choices":["x","y"],"gold":5}"#]);
        assert!(matches!(
            load_instances(f.path()),
            Err(DatasetError::Invalid { .. })
        ));
    }
}
