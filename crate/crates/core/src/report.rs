//! Report emission: a best-setup table (best configuration per task and
//! model type by dev accuracy) and a relative-improvement matrix of
//! knowledge source x task, as CSV data plus aligned-column text.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use crate::eval::EvalResult;
use crate::model::PredictionMode;
use crate::runner::{load_manifest, RunError, EVAL_FILE};

pub const BEST_SETUP_CSV: &str = "best_setup.csv";
pub const IMPROVEMENT_CSV: &str = "improvement_matrix.csv";
pub const REPORT_TXT: &str = "report.txt";

/// Percent formatting shared by every report cell: two decimals with a
/// single trailing zero trimmed, so 55 prints "55.0" and 10.25 stays
/// "10.25".
pub fn fmt_pct(value: f64) -> String {
    let s = format!("{value:.2}");
    match s.strip_suffix('0') {
        Some(trimmed) if !trimmed.ends_with('.') => trimmed.to_string(),
        _ => s,
    }
}

/// Signed variant used by the improvement matrix.
pub fn fmt_signed_pct(value: f64) -> String {
    if value >= 0.0 {
        format!("+{}", fmt_pct(value))
    } else {
        format!("-{}", fmt_pct(-value))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum ModelType {
    Majority,
    Baseline,
    ExtKnowledge,
    SelfTalk,
    Combined,
}

impl ModelType {
    fn name(&self) -> &'static str {
        match self {
            ModelType::Majority => "Majority",
            ModelType::Baseline => "Baseline",
            ModelType::ExtKnowledge => "Ext. Knowledge",
            ModelType::SelfTalk => "Self-talk",
            ModelType::Combined => "Combined",
        }
    }
}

fn classify(result: &EvalResult) -> ModelType {
    if result.mode == PredictionMode::Baseline || result.knowledge_source == "none" {
        return ModelType::Baseline;
    }
    let sources: Vec<&str> = result.knowledge_source.split('+').collect();
    let has_selftalk = sources.contains(&"selftalk");
    if has_selftalk && sources.len() == 1 {
        ModelType::SelfTalk
    } else if has_selftalk {
        ModelType::Combined
    } else {
        ModelType::ExtKnowledge
    }
}

/// Loads eval records from run directories. Every directory must hold a
/// manifest (completed run) and an `eval.json`.
pub fn load_run_records(run_dirs: &[&Path]) -> Result<Vec<EvalResult>, RunError> {
    let mut records = Vec::new();
    for dir in run_dirs {
        load_manifest(dir)?;
        let path = dir.join(EVAL_FILE);
        if !path.exists() {
            return Err(RunError::MissingManifest(format!(
                "{} (run not evaluated: no {EVAL_FILE})",
                dir.display()
            )));
        }
        let raw = std::fs::read(&path).map_err(|source| RunError::Io {
            path: path.display().to_string(),
            source,
        })?;
        records.push(serde_json::from_slice::<EvalResult>(&raw)?);
    }
    Ok(records)
}

#[derive(Debug, Clone, PartialEq)]
pub struct BestSetupRow {
    pub task: String,
    pub model: String,
    pub lm: String,
    pub knowledge_source: String,
    pub dev_accuracy: f64,
}

/// Per task and model type, the configuration with the highest dev
/// accuracy; a Majority row per task comes from the recorded gold
/// distribution.
pub fn best_setup_rows(records: &[EvalResult]) -> Vec<BestSetupRow> {
    let mut best: BTreeMap<(String, ModelType), &EvalResult> = BTreeMap::new();
    let mut majority: BTreeMap<String, f64> = BTreeMap::new();
    for r in records {
        majority.entry(r.task_id.clone()).or_insert(r.majority_accuracy);
        let key = (r.task_id.clone(), classify(r));
        match best.get(&key) {
            Some(current) if current.accuracy >= r.accuracy => {}
            _ => {
                best.insert(key, r);
            }
        }
    }
    let mut rows = Vec::new();
    let tasks: BTreeSet<String> = records.iter().map(|r| r.task_id.clone()).collect();
    for task in tasks {
        rows.push(BestSetupRow {
            task: task.clone(),
            model: ModelType::Majority.name().to_string(),
            lm: String::new(),
            knowledge_source: String::new(),
            dev_accuracy: majority[&task],
        });
        for model_type in [
            ModelType::Baseline,
            ModelType::ExtKnowledge,
            ModelType::SelfTalk,
            ModelType::Combined,
        ] {
            if let Some(r) = best.get(&(task.clone(), model_type)) {
                let knowledge_source = if model_type == ModelType::SelfTalk {
                    r.generator_backend.clone().unwrap_or_else(|| r.knowledge_source.clone())
                } else if model_type == ModelType::Baseline {
                    String::new()
                } else {
                    r.knowledge_source.clone()
                };
                rows.push(BestSetupRow {
                    task: task.clone(),
                    model: model_type.name().to_string(),
                    lm: r.scorer_backend.clone(),
                    knowledge_source,
                    dev_accuracy: r.accuracy,
                });
            }
        }
    }
    rows
}

pub fn best_setup_csv(rows: &[BestSetupRow]) -> String {
    let mut out = String::from("task,model,lm,knowledge_source,dev_accuracy\n");
    for row in rows {
        out.push_str(&format!(
            "{},{},{},{},{}\n",
            row.task,
            row.model,
            row.lm,
            row.knowledge_source,
            fmt_pct(row.dev_accuracy)
        ));
    }
    out
}

/// Improvement of each clarified run over the baseline run with the same
/// scorer LM, averaged across LMs per (task, knowledge source) cell.
pub fn improvement_matrix(records: &[EvalResult]) -> (Vec<String>, Vec<(String, Vec<Option<f64>>)>) {
    let mut baselines: BTreeMap<(String, String), f64> = BTreeMap::new();
    for r in records {
        if classify(r) == ModelType::Baseline {
            baselines.insert((r.task_id.clone(), r.scorer_backend.clone()), r.accuracy);
        }
    }
    let mut cells: BTreeMap<(String, String), Vec<f64>> = BTreeMap::new();
    for r in records {
        if classify(r) == ModelType::Baseline {
            continue;
        }
        let Some(base) = baselines.get(&(r.task_id.clone(), r.scorer_backend.clone())) else {
            continue;
        };
        cells
            .entry((r.task_id.clone(), r.knowledge_source.clone()))
            .or_default()
            .push(r.accuracy - base);
    }
    let sources: Vec<String> = cells
        .keys()
        .map(|(_, s)| s.clone())
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    let tasks: BTreeSet<String> = cells.keys().map(|(t, _)| t.clone()).collect();
    let mut rows = Vec::new();
    for task in tasks {
        let mut row = Vec::with_capacity(sources.len());
        for source in &sources {
            let cell = cells
                .get(&(task.clone(), source.clone()))
                .map(|deltas| deltas.iter().sum::<f64>() / deltas.len() as f64);
            row.push(cell);
        }
        rows.push((task, row));
    }
    (sources, rows)
}

pub fn improvement_csv(sources: &[String], rows: &[(String, Vec<Option<f64>>)]) -> String {
    let mut out = String::from("task");
    for s in sources {
        out.push(',');
        out.push_str(s);
    }
    out.push('\n');
    for (task, cells) in rows {
        out.push_str(task);
        for cell in cells {
            out.push(',');
            if let Some(v) = cell {
                out.push_str(&fmt_signed_pct(*v));
            }
        }
        out.push('\n');
    }
    out
}

fn aligned(table: &[Vec<String>]) -> String {
    if table.is_empty() {
        return String::new();
    }
    let columns = table.iter().map(|r| r.len()).max().unwrap_or(0);
    let mut widths = vec![0usize; columns];
    for row in table {
        for (i, cell) in row.iter().enumerate() {
            widths[i] = widths[i].max(cell.len());
        }
    }
    let mut out = String::new();
    for row in table {
        let mut line = String::new();
        for (i, cell) in row.iter().enumerate() {
            if i > 0 {
                line.push_str("  ");
            }
            line.push_str(&format!("{cell:<width$}", width = widths[i]));
        }
        out.push_str(line.trim_end());
        out.push('\n');
    }
    out
}

/// Human-readable report: both tables in aligned columns.
pub fn report_text(rows: &[BestSetupRow], sources: &[String], matrix: &[(String, Vec<Option<f64>>)]) -> String {
    let mut out = String::from("Best setup per task and model type (dev accuracy)\n\n");
    let mut table = vec![vec![
        "Task".to_string(),
        "Model".to_string(),
        "LM".to_string(),
        "Knowledge Source".to_string(),
        "Dev Acc.".to_string(),
    ]];
    for row in rows {
        table.push(vec![
            row.task.clone(),
            row.model.clone(),
            row.lm.clone(),
            row.knowledge_source.clone(),
            fmt_pct(row.dev_accuracy),
        ]);
    }
    out.push_str(&aligned(&table));
    out.push_str("\nRelative improvement over the zero-shot baseline (accuracy points)\n\n");
    let mut header = vec!["Task".to_string()];
    header.extend(sources.iter().cloned());
    let mut table = vec![header];
    for (task, cells) in matrix {
        let mut row = vec![task.clone()];
        for cell in cells {
            row.push(cell.map(fmt_signed_pct).unwrap_or_default());
        }
        table.push(row);
    }
    out.push_str(&aligned(&table));
    out
}

pub struct ReportFiles {
    pub best_setup_csv: String,
    pub improvement_csv: String,
    pub report_txt: String,
}

pub fn build_report(records: &[EvalResult]) -> ReportFiles {
    let rows = best_setup_rows(records);
    let (sources, matrix) = improvement_matrix(records);
    ReportFiles {
        best_setup_csv: best_setup_csv(&rows),
        improvement_csv: improvement_csv(&sources, &matrix),
        report_txt: report_text(&rows, &sources, &matrix),
    }
}
