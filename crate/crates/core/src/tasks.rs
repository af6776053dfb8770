//! Registry of built-in task specs. The specs themselves are data files so
//! adding a task means adding a document, not code.

use std::path::Path;

use thiserror::Error;

use crate::model::{ModelError, TaskId, TaskSpec};

#[derive(Debug, Error)]
pub enum TaskError {
    #[error("no built-in spec for task {0}; pass a spec file")]
    NoBuiltin(TaskId),
    #[error("failed to read task spec {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("failed to parse task spec {path}: {source}")]
    Parse {
        path: String,
        #[source]
        source: serde_json::Error,
    },
    #[error(transparent)]
    Invalid(#[from] ModelError),
}

const BUILTIN: &[(TaskId, &str)] = &[
    (TaskId::Copa, include_str!("../tasks/copa.json")),
    (TaskId::Commonsenseqa, include_str!("../tasks/commonsenseqa.json")),
    (TaskId::Mctaco, include_str!("../tasks/mctaco.json")),
    (TaskId::Socialiqa, include_str!("../tasks/socialiqa.json")),
    (TaskId::Piqa, include_str!("../tasks/piqa.json")),
    (TaskId::Winogrande, include_str!("../tasks/winogrande.json")),
];

pub fn builtin_task(task_id: TaskId) -> Result<TaskSpec, TaskError> {
    let (_, raw) = BUILTIN
        .iter()
        .find(|(id, _)| *id == task_id)
        .ok_or(TaskError::NoBuiltin(task_id))?;
    let spec: TaskSpec = serde_json::from_str(raw).expect("built-in task spec parses");
    spec.validate()?;
    Ok(spec)
}

pub fn load_task_file(path: &Path) -> Result<TaskSpec, TaskError> {
    let raw = std::fs::read_to_string(path).map_err(|source| TaskError::Io {
        path: path.display().to_string(),
        source,
    })?;
    let spec: TaskSpec = serde_json::from_str(&raw).map_err(|source| TaskError::Parse {
        path: path.display().to_string(),
        source,
    })?;
    spec.validate()?;
    Ok(spec)
}

/// Swaps the COPA `cause`/`effect` templates. The shipped mapping follows the
/// published wording; the swapped mapping pairs cause questions with
/// "The cause for it was that" instead.
pub fn apply_copa_swap(spec: &mut TaskSpec) {
    let cause = spec.combine_templates.get("cause").cloned();
    let effect = spec.combine_templates.get("effect").cloned();
    if let (Some(c), Some(e)) = (cause, effect) {
        spec.combine_templates.insert("cause".to_string(), e);
        spec.combine_templates.insert("effect".to_string(), c);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{combine, Instance};

    #[test]
    fn all_builtins_load_and_validate() {
        for task in [
            TaskId::Copa,
            TaskId::Commonsenseqa,
            TaskId::Mctaco,
            TaskId::Socialiqa,
            TaskId::Piqa,
            TaskId::Winogrande,
        ] {
            let spec = builtin_task(task).unwrap();
            assert_eq!(spec.task_id, task);
            assert!(!spec.prefix_pairs.is_empty());
        }
    }

    #[test]
    fn custom_has_no_builtin() {
        assert!(matches!(
            builtin_task(TaskId::Custom),
            Err(TaskError::NoBuiltin(TaskId::Custom))
        ));
    }

    #[test]
    fn copa_swap_inverts_templates() {
        let mut spec = builtin_task(TaskId::Copa).unwrap();
        apply_copa_swap(&mut spec);
        let inst = Instance {
            id: "c1".into(),
            context: Some("It started to rain.".into()),
            question: None,
            question_kind: Some("cause".into()),
            choices: vec!["Clouds gathered.".into(), "x".into()],
            gold: None,
        };
        let text = combine(&spec, &inst, 0).unwrap();
        assert_eq!(
            text,
            "It started to rain. The cause for it was that Clouds gathered."
        );
    }
}
