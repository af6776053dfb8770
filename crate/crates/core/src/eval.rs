//! Accuracy evaluation, flip analysis (useful/harmful clarifications),
//! annotation sampling and aggregation, and the error-taxonomy worksheet.

use std::collections::{BTreeMap, BTreeSet};

use rand_chacha::rand_core::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{Clarification, Prediction, PredictionMode};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("no predictions to evaluate")]
    Empty,
    #[error("instances missing gold labels: {0:?}")]
    MissingGold(Vec<String>),
    #[error("prediction sets are not aligned: {0}")]
    Misaligned(String),
    #[error("clarified prediction for {0} has no best clarification on its chosen choice")]
    MissingBestClarification(String),
    #[error("clarification list missing for instance {0}")]
    MissingClarifications(String),
    #[error("items with missing or extra rater records: {0:?}")]
    BadRaterCounts(Vec<String>),
    #[error("unknown error-taxonomy label {0:?}")]
    UnknownLabel(String),
    #[error("annotation parse: {0}")]
    Parse(String),
}

/// Aggregate outcome of one run on one split.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalResult {
    pub task_id: String,
    pub scorer_backend: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub generator_backend: Option<String>,
    pub knowledge_source: String,
    pub split: String,
    /// Percent correct.
    pub accuracy: f64,
    /// Percent of the most frequent gold index.
    pub majority_accuracy: f64,
    pub n_instances: usize,
    pub mode: PredictionMode,
    pub correct: usize,
}

#[derive(Debug, Clone)]
pub struct RunLabel {
    pub task_id: String,
    pub scorer_backend: String,
    pub generator_backend: Option<String>,
    pub knowledge_source: String,
    pub split: String,
}

/// Computes accuracy and the majority baseline over a prediction set. Every
/// prediction must carry a gold label.
pub fn evaluate(predictions: &[Prediction], label: &RunLabel) -> Result<EvalResult, EvalError> {
    if predictions.is_empty() {
        return Err(EvalError::Empty);
    }
    let missing: Vec<String> = predictions
        .iter()
        .filter(|p| p.gold.is_none())
        .map(|p| p.instance_id.clone())
        .collect();
    if !missing.is_empty() {
        return Err(EvalError::MissingGold(missing));
    }
    let n = predictions.len();
    let correct = predictions
        .iter()
        .filter(|p| Some(p.predicted) == p.gold)
        .count();
    let mut gold_counts: BTreeMap<usize, usize> = BTreeMap::new();
    for p in predictions {
        *gold_counts.entry(p.gold.unwrap()).or_default() += 1;
    }
    let majority = gold_counts.values().copied().max().unwrap_or(0);
    let mode = predictions[0].mode;
    Ok(EvalResult {
        task_id: label.task_id.clone(),
        scorer_backend: label.scorer_backend.clone(),
        generator_backend: label.generator_backend.clone(),
        knowledge_source: label.knowledge_source.clone(),
        split: label.split.clone(),
        accuracy: 100.0 * correct as f64 / n as f64,
        majority_accuracy: 100.0 * majority as f64 / n as f64,
        n_instances: n,
        mode,
        correct,
    })
}

/// Signed accuracy difference in percent points, over the same instance set.
pub fn relative_improvement(clarified: &EvalResult, baseline: &EvalResult) -> Result<f64, EvalError> {
    if clarified.task_id != baseline.task_id || clarified.split != baseline.split {
        return Err(EvalError::Misaligned(format!(
            "task/split mismatch: {}/{} vs {}/{}",
            clarified.task_id, clarified.split, baseline.task_id, baseline.split
        )));
    }
    if clarified.n_instances != baseline.n_instances {
        return Err(EvalError::Misaligned(format!(
            "instance counts differ: {} vs {}",
            clarified.n_instances, baseline.n_instances
        )));
    }
    Ok(clarified.accuracy - baseline.accuracy)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FlipKind {
    /// Baseline wrong, clarified correct.
    Useful,
    /// Baseline correct, clarified wrong.
    Harmful,
}

/// One flipped instance with the clarification that was used in practice:
/// the best-scoring clarification of the predicted choice.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClarificationJudgment {
    pub instance_id: String,
    pub clarification: Clarification,
    pub kind: FlipKind,
    pub baseline_predicted: usize,
    pub clarified_predicted: usize,
    pub gold: usize,
}

/// Extracts the flips of the requested kind from aligned baseline/clarified
/// prediction sets. `clarifications` maps instance id to the clarification
/// list the clarified run scored with.
pub fn find_flip_clarifications(
    baseline: &[Prediction],
    clarified: &[Prediction],
    clarifications: &BTreeMap<String, Vec<Clarification>>,
    kind: FlipKind,
) -> Result<Vec<ClarificationJudgment>, EvalError> {
    if baseline.len() != clarified.len() {
        return Err(EvalError::Misaligned(format!(
            "{} baseline vs {} clarified predictions",
            baseline.len(),
            clarified.len()
        )));
    }
    let mut out = Vec::new();
    for (b, c) in baseline.iter().zip(clarified) {
        if b.instance_id != c.instance_id {
            return Err(EvalError::Misaligned(format!(
                "instance order differs: {} vs {}",
                b.instance_id, c.instance_id
            )));
        }
        let gold = match b.gold.or(c.gold) {
            Some(g) => g,
            None => return Err(EvalError::MissingGold(vec![b.instance_id.clone()])),
        };
        let baseline_right = b.predicted == gold;
        let clarified_right = c.predicted == gold;
        let flipped = match kind {
            FlipKind::Useful => !baseline_right && clarified_right,
            FlipKind::Harmful => baseline_right && !clarified_right,
        };
        if !flipped {
            continue;
        }
        let chosen = &c.choice_scores[c.predicted];
        let best = chosen
            .best_clarification
            .ok_or_else(|| EvalError::MissingBestClarification(c.instance_id.clone()))?;
        let list = clarifications
            .get(&c.instance_id)
            .ok_or_else(|| EvalError::MissingClarifications(c.instance_id.clone()))?;
        let clarification = list
            .get(best)
            .ok_or_else(|| EvalError::MissingClarifications(c.instance_id.clone()))?
            .clone();
        out.push(ClarificationJudgment {
            instance_id: c.instance_id.clone(),
            clarification,
            kind,
            baseline_predicted: b.predicted,
            clarified_predicted: c.predicted,
            gold,
        });
    }
    Ok(out)
}

/// One item of an annotation task file: the §-style judgment questions are
/// fixed per item kind.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnnotationItem {
    pub item_id: String,
    pub task_id: String,
    pub source: String,
    pub instance_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub question_text: Option<String>,
    pub clarification_text: String,
    /// Category -> allowed labels, in presentation order.
    pub categories: Vec<(String, Vec<String>)>,
}

pub fn annotation_categories() -> Vec<(String, Vec<String>)> {
    vec![
        (
            "grammaticality".to_string(),
            vec![
                "grammatical".to_string(),
                "understandable".to_string(),
                "not_understandable".to_string(),
            ],
        ),
        ("relevance".to_string(), vec!["yes".to_string(), "no".to_string()]),
        ("correctness".to_string(), vec!["yes".to_string(), "no".to_string()]),
        ("helpfulness".to_string(), vec!["yes".to_string(), "no".to_string()]),
    ]
}

/// Seeded uniform sample, capped per (task, source) cell.
pub fn sample_for_annotation(
    judgments: &[(String, ClarificationJudgment)],
    per_cell_cap: usize,
    seed: u64,
) -> Vec<AnnotationItem> {
    let mut cells: BTreeMap<(String, String), Vec<&(String, ClarificationJudgment)>> =
        BTreeMap::new();
    for entry in judgments {
        let key = (entry.0.clone(), entry.1.clarification.source.to_string());
        cells.entry(key).or_default().push(entry);
    }
    let mut out = Vec::new();
    for ((task, source), mut members) in cells {
        members.sort_by(|a, b| a.1.instance_id.cmp(&b.1.instance_id));
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ fxhash(&task) ^ fxhash(&source));
        // Partial Fisher-Yates: the first `per_cell_cap` slots are a uniform
        // sample without replacement.
        let take = per_cell_cap.min(members.len());
        for i in 0..take {
            let j = i + (rng.next_u64() as usize) % (members.len() - i);
            members.swap(i, j);
        }
        for (k, (task_id, judgment)) in members.into_iter().take(take).enumerate() {
            out.push(AnnotationItem {
                item_id: format!("{task}:{source}:{k:04}"),
                task_id: task_id.clone(),
                source: source.clone(),
                instance_id: judgment.instance_id.clone(),
                question_text: judgment.clarification.question_text.clone(),
                clarification_text: judgment.clarification.text.clone(),
                categories: annotation_categories(),
            });
        }
    }
    out
}

fn fxhash(s: &str) -> u64 {
    let mut h = 0xcbf29ce484222325u64;
    for b in s.bytes() {
        h ^= b as u64;
        h = h.wrapping_mul(0x100000001b3);
    }
    h
}

/// One rater's labels for one item.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnnotationRecord {
    pub item_id: String,
    pub rater_id: String,
    /// Category -> label.
    pub labels: BTreeMap<String, String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CategoryAgreement {
    pub category: String,
    /// Majority label per item; `None` marks an unresolved exact tie.
    pub majority: BTreeMap<String, Option<String>>,
    pub fleiss_kappa: f64,
    /// Percent of agreeing rater pairs across items.
    pub pairwise_agreement: f64,
}

/// Fleiss' kappa over items x categories assignment counts. `n` raters per
/// item; the label space is the full category vocabulary.
pub fn fleiss_kappa(counts: &[Vec<usize>], raters_per_item: usize) -> f64 {
    let n_items = counts.len();
    if n_items == 0 || raters_per_item < 2 {
        return f64::NAN;
    }
    let n = raters_per_item as f64;
    let n_categories = counts[0].len();
    let mut p_i_sum = 0.0;
    let mut category_totals = vec![0.0f64; n_categories];
    for item in counts {
        let mut same_pairs = 0.0;
        for (j, &c) in item.iter().enumerate() {
            same_pairs += (c * c) as f64;
            category_totals[j] += c as f64;
        }
        p_i_sum += (same_pairs - n) / (n * (n - 1.0));
    }
    let p_bar = p_i_sum / n_items as f64;
    let total_assignments = n * n_items as f64;
    let p_e: f64 = category_totals
        .iter()
        .map(|t| (t / total_assignments).powi(2))
        .sum();
    if p_bar == 1.0 {
        // Perfect agreement, including the all-one-label case where the
        // chance term degenerates.
        return 1.0;
    }
    (p_bar - p_e) / (1.0 - p_e)
}

/// Majority vote, Fleiss' kappa, and pairwise agreement per category.
/// Every item must have exactly `raters_per_item` records per category.
pub fn aggregate_annotations(
    records: &[AnnotationRecord],
    raters_per_item: usize,
) -> Result<Vec<CategoryAgreement>, EvalError> {
    // category -> item -> label counts
    let mut by_category: BTreeMap<String, BTreeMap<String, Vec<String>>> = BTreeMap::new();
    for record in records {
        for (category, label) in &record.labels {
            by_category
                .entry(category.clone())
                .or_default()
                .entry(record.item_id.clone())
                .or_default()
                .push(label.clone());
        }
    }
    let mut out = Vec::new();
    for (category, items) in by_category {
        let bad: Vec<String> = items
            .iter()
            .filter(|(_, labels)| labels.len() != raters_per_item)
            .map(|(id, _)| id.clone())
            .collect();
        if !bad.is_empty() {
            return Err(EvalError::BadRaterCounts(bad));
        }
        let mut labels_in_use: BTreeSet<String> = BTreeSet::new();
        for labels in items.values() {
            labels_in_use.extend(labels.iter().cloned());
        }
        let vocab: Vec<String> = labels_in_use.into_iter().collect();
        let mut counts = Vec::with_capacity(items.len());
        let mut majority = BTreeMap::new();
        let mut agreeing_pairs = 0usize;
        let mut total_pairs = 0usize;
        for (item_id, labels) in &items {
            let mut row = vec![0usize; vocab.len()];
            for label in labels {
                let idx = vocab.iter().position(|v| v == label).unwrap();
                row[idx] += 1;
            }
            let best = *row.iter().max().unwrap();
            let winners: Vec<usize> = (0..row.len()).filter(|&j| row[j] == best).collect();
            // A plurality wins; an exact tie is flagged unresolved.
            majority.insert(
                item_id.clone(),
                if winners.len() == 1 {
                    Some(vocab[winners[0]].clone())
                } else {
                    None
                },
            );
            for &c in &row {
                agreeing_pairs += c * c.saturating_sub(1) / 2;
            }
            total_pairs += raters_per_item * (raters_per_item - 1) / 2;
            counts.push(row);
        }
        out.push(CategoryAgreement {
            category,
            majority,
            fleiss_kappa: fleiss_kappa(&counts, raters_per_item),
            pairwise_agreement: 100.0 * agreeing_pairs as f64 / total_pairs as f64,
        });
    }
    Ok(out)
}

/// The fixed error-type vocabulary for harmful clarifications, in canonical
/// order.
pub const ERROR_TAXONOMY: &[&str] = &[
    "Irrelevant",
    "Nonsensical or ungrammatical",
    "Relevant",
    "Factually incorrect",
    "Correct",
    "Restating the instance",
    "Wrong sense",
    "Dataset error",
];

/// Emits the CSV scaffold a human labels: the header enumerates the allowed
/// labels; rows carry the harmful judgments with an empty label column.
pub fn export_error_taxonomy(judgments: &[(String, ClarificationJudgment)]) -> String {
    let mut out = String::new();
    out.push_str(&format!("# labels: {}\n", ERROR_TAXONOMY.join(" | ")));
    out.push_str("item_id,task_id,source,instance_id,clarification,label\n");
    for (i, (task_id, j)) in judgments.iter().enumerate() {
        out.push_str(&format!(
            "{i:04},{task_id},{},{},{},\n",
            j.clarification.source,
            j.instance_id,
            csv_quote(&j.clarification.text),
        ));
    }
    out
}

fn csv_quote(field: &str) -> String {
    if field.contains(',') || field.contains('"') || field.contains('\n') {
        format!("\"{}\"", field.replace('"', "\"\""))
    } else {
        field.to_string()
    }
}

/// Re-ingests a labeled taxonomy worksheet and returns the percent
/// distribution over the fixed vocabulary, in canonical order, rounded to
/// one decimal.
pub fn ingest_error_taxonomy(labeled_csv: &str) -> Result<Vec<(String, f64)>, EvalError> {
    let mut counts: BTreeMap<&str, usize> = ERROR_TAXONOMY.iter().map(|l| (*l, 0)).collect();
    let mut total = 0usize;
    for line in labeled_csv.lines() {
        if line.starts_with('#') || line.starts_with("item_id,") || line.trim().is_empty() {
            continue;
        }
        let label = parse_last_csv_field(line)
            .ok_or_else(|| EvalError::Parse(format!("unparseable row: {line:?}")))?;
        let label = label.trim();
        if label.is_empty() {
            continue;
        }
        let canonical = ERROR_TAXONOMY
            .iter()
            .find(|l| l.eq_ignore_ascii_case(label))
            .ok_or_else(|| EvalError::UnknownLabel(label.to_string()))?;
        *counts.get_mut(canonical).unwrap() += 1;
        total += 1;
    }
    Ok(ERROR_TAXONOMY
        .iter()
        .map(|l| {
            let pct = if total == 0 {
                0.0
            } else {
                (1000.0 * counts[l] as f64 / total as f64).round() / 10.0
            };
            (l.to_string(), pct)
        })
        .collect())
}

fn parse_last_csv_field(line: &str) -> Option<&str> {
    // The label column never contains quotes or commas, so the final
    // unquoted segment after the last comma is the label.
    let mut in_quotes = false;
    let mut last_comma = None;
    for (i, c) in line.char_indices() {
        match c {
            '"' => in_quotes = !in_quotes,
            ',' if !in_quotes => last_comma = Some(i),
            _ => {}
        }
    }
    last_comma.map(|i| &line[i + 1..])
}
