//! N-gram co-occurrence table: short corpus fragments (2 to 5 tokens) with
//! counts, queried for fragments that contain a context term and a choice
//! term together.
//!
//! Dumps are `token sequence<TAB>count` lines. Fragments are emitted as raw
//! text clarifications, highest count first.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{extract_terms, KnowledgeError};
use crate::model::{Clarification, ClarificationSource, Instance};

pub const DEFAULT_MIN_FREQ: u64 = 100;
pub const DEFAULT_TOP_K_PER_PAIR: usize = 3;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct NgramTable {
    /// Fragment -> count; fragments are stored with normalized spacing.
    entries: BTreeMap<String, u64>,
    /// Term -> fragments containing it as a token.
    by_term: BTreeMap<String, Vec<String>>,
}

impl NgramTable {
    pub fn new(raw_entries: impl IntoIterator<Item = (String, u64)>) -> Result<Self, KnowledgeError> {
        let mut entries = BTreeMap::new();
        for (fragment, count) in raw_entries {
            let tokens: Vec<String> = fragment
                .split_whitespace()
                .map(|t| t.to_lowercase())
                .collect();
            if tokens.len() < 2 || tokens.len() > 5 {
                return Err(KnowledgeError::Parse {
                    path: "<entries>".into(),
                    line: 0,
                    reason: format!("fragment {fragment:?} must have 2..=5 tokens"),
                });
            }
            if count == 0 {
                return Err(KnowledgeError::Parse {
                    path: "<entries>".into(),
                    line: 0,
                    reason: "counts must be >= 1".into(),
                });
            }
            entries.insert(tokens.join(" "), count);
        }
        let mut by_term: BTreeMap<String, Vec<String>> = BTreeMap::new();
        for fragment in entries.keys() {
            for token in fragment.split(' ') {
                let bucket = by_term.entry(token.to_string()).or_default();
                if bucket.last().map(|f| f != fragment).unwrap_or(true) {
                    bucket.push(fragment.clone());
                }
            }
        }
        Ok(NgramTable { entries, by_term })
    }

    pub fn from_dump(path: &Path) -> Result<Self, KnowledgeError> {
        let display = path.display().to_string();
        let raw = std::fs::read_to_string(path).map_err(|source| KnowledgeError::Io {
            path: display.clone(),
            source,
        })?;
        let mut entries = Vec::new();
        for (i, line) in raw.lines().enumerate() {
            if line.trim().is_empty() || line.starts_with('#') {
                continue;
            }
            let (fragment, count) = line.rsplit_once('\t').ok_or_else(|| KnowledgeError::Parse {
                path: display.clone(),
                line: i + 1,
                reason: "expected `token sequence<TAB>count`".into(),
            })?;
            let count: u64 = count.trim().parse().map_err(|e| KnowledgeError::Parse {
                path: display.clone(),
                line: i + 1,
                reason: format!("bad count: {e}"),
            })?;
            entries.push((fragment.to_string(), count));
        }
        Self::new(entries)
    }

    pub fn save_index(&self, path: &Path) -> Result<(), KnowledgeError> {
        let raw = serde_json::to_vec_pretty(self)?;
        std::fs::write(path, raw).map_err(|source| KnowledgeError::Io {
            path: path.display().to_string(),
            source,
        })
    }

    pub fn load_index(path: &Path) -> Result<Self, KnowledgeError> {
        let raw = std::fs::read(path).map_err(|source| KnowledgeError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Ok(serde_json::from_slice(&raw)?)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn count(&self, fragment: &str) -> Option<u64> {
        let key = fragment
            .split_whitespace()
            .map(|t| t.to_lowercase())
            .collect::<Vec<_>>()
            .join(" ");
        self.entries.get(&key).copied()
    }

    /// Fragments containing both terms as tokens, anywhere in the window,
    /// with count >= `min_freq`; sorted by descending count (ties by text),
    /// capped at `top_k` per pair.
    pub fn pair_fragments(
        &self,
        term_a: &str,
        term_b: &str,
        min_freq: u64,
        top_k: usize,
    ) -> Vec<(String, u64)> {
        let empty = Vec::new();
        let candidates = self.by_term.get(term_a).unwrap_or(&empty);
        let mut hits: Vec<(String, u64)> = candidates
            .iter()
            .filter(|fragment| fragment.split(' ').any(|t| t == term_b))
            .map(|fragment| (fragment.clone(), self.entries[fragment]))
            .filter(|(_, count)| *count >= min_freq)
            .collect();
        hits.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        hits.truncate(top_k);
        hits
    }

    /// Clarifications for every (context term, choice term) pair of the
    /// instance.
    pub fn clarifications(&self, inst: &Instance, min_freq: u64, top_k: usize) -> Vec<Clarification> {
        let (context_terms, choice_terms) = extract_terms(inst);
        let choice_union: BTreeSet<&String> = choice_terms.iter().flatten().collect();
        let mut out = Vec::new();
        let mut seen = BTreeSet::new();
        for context_term in &context_terms {
            for choice_term in &choice_union {
                if context_term == *choice_term {
                    continue;
                }
                for (fragment, _) in self.pair_fragments(context_term, choice_term, min_freq, top_k) {
                    if seen.insert(fragment.clone()) {
                        out.push(Clarification::simple(fragment, ClarificationSource::Ngrams));
                    }
                }
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn vacation_instance() -> Instance {
        Instance {
            id: "v".into(),
            context: Some("Jan had been on vacation for a week.".into()),
            question: Some("What will Jan want to do next?".into()),
            question_kind: None,
            choices: vec!["Return to work".into(), "Leave again".into()],
            gold: None,
        }
    }

    #[test]
    fn frequent_joint_fragment_emitted() {
        let table = NgramTable::new([
            ("vacation the opposite of work".to_string(), 250u64),
            ("work before vacation".to_string(), 50u64),
        ])
        .unwrap();
        let cls = table.clarifications(&vacation_instance(), 100, 3);
        assert_eq!(cls.len(), 1);
        assert_eq!(cls[0].text, "vacation the opposite of work");
        assert_eq!(cls[0].source, ClarificationSource::Ngrams);
        assert!(cls[0].question_text.is_none());
    }

    #[test]
    fn below_threshold_excluded() {
        let table = NgramTable::new([("vacation and work".to_string(), 99u64)]).unwrap();
        assert!(table.clarifications(&vacation_instance(), 100, 3).is_empty());
    }

    #[test]
    fn no_joint_entry_yields_empty() {
        let table = NgramTable::new([("cats chase mice".to_string(), 500u64)]).unwrap();
        assert!(table.clarifications(&vacation_instance(), 100, 3).is_empty());
    }

    #[test]
    fn pair_query_sorted_and_capped() {
        let table = NgramTable::new([
            ("vacation beats work".to_string(), 150u64),
            ("vacation then work".to_string(), 300u64),
            ("vacation not work".to_string(), 200u64),
            ("vacation over work".to_string(), 120u64),
        ])
        .unwrap();
        let hits = table.pair_fragments("vacation", "work", 100, 3);
        assert_eq!(
            hits.iter().map(|(_, c)| *c).collect::<Vec<_>>(),
            vec![300, 200, 150]
        );
    }

    #[test]
    fn every_emitted_fragment_meets_threshold_on_relookup() {
        let table = NgramTable::new([
            ("vacation then work".to_string(), 300u64),
            ("vacation near work".to_string(), 100u64),
        ])
        .unwrap();
        for cl in table.clarifications(&vacation_instance(), 100, 5) {
            assert!(table.count(&cl.text).unwrap() >= 100);
        }
    }

    #[test]
    fn dump_round_trips_losslessly() {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        writeln!(f, "vacation then work\t300").unwrap();
        writeln!(f, "dogs chase cats\t42").unwrap();
        f.flush().unwrap();
        let a = NgramTable::from_dump(f.path()).unwrap();
        let b = NgramTable::from_dump(f.path()).unwrap();
        assert_eq!(a.count("vacation then work"), b.count("vacation then work"));

        let dir = tempfile::tempdir().unwrap();
        let index = dir.path().join("ngrams.idx.json");
        a.save_index(&index).unwrap();
        let c = NgramTable::load_index(&index).unwrap();
        assert_eq!(a.len(), c.len());
        assert_eq!(c.count("dogs chase cats"), Some(42));
    }

    #[test]
    fn window_length_enforced() {
        assert!(NgramTable::new([("one".to_string(), 10u64)]).is_err());
        assert!(NgramTable::new([("a b c d e f".to_string(), 10u64)]).is_err());
    }
}
