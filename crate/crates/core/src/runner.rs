//! Batch run execution: drive the selected method over a task set,
//! writing the run log incrementally and skipping tasks already present
//! on restart.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::corpus::Corpus;
use crate::error::{Error, Result};
use crate::evaluation::{
    append_entry, load_run_log, shot_sweep, write_manifest, write_series_csv, RunLog, RunManifest,
    SweepPoint,
};
use crate::forest::derive_seed;
use crate::forest::{run_t3, ForestConfig, RepairTask, SamplingConfig, TaskEntry};
use crate::llm::LlmClient;
use crate::patching::{judge, Patch};
use crate::retrieval::{compose_input, retrieve_excluding, Bm25Index, ComposedInput};
use crate::strategies::{baseline_pipeline, Method, TemplateSet};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunSettings {
    pub method: Method,
    pub shots: usize,
    pub forest: ForestConfig,
    pub sampling: SamplingConfig,
    pub seed: u64,
    /// Bound for task-level parallelism. Execution is currently
    /// sequential; the field is recorded in the manifest.
    pub parallelism: usize,
}

impl Default for RunSettings {
    fn default() -> Self {
        RunSettings {
            method: Method::T3,
            shots: 3,
            forest: ForestConfig::default(),
            sampling: SamplingConfig::default(),
            seed: 0,
            parallelism: 1,
        }
    }
}

pub struct RunOutcome {
    pub log: RunLog,
    pub executed: usize,
    pub skipped: usize,
    pub failed_tasks: Vec<String>,
}

fn run_baseline_task(
    task: &RepairTask,
    corpus: &Corpus,
    index: Option<&Bm25Index>,
    settings: &RunSettings,
    client: &LlmClient,
    templates: &TemplateSet,
) -> Result<TaskEntry> {
    let composed = match index {
        Some(index) if settings.shots > 0 => {
            let retrieved =
                retrieve_excluding(index, &task.buggy_code, settings.shots, Some(&task.id));
            compose_input(
                &retrieved,
                corpus,
                &task.buggy_code,
                task.fault_location.as_deref(),
            )?
        }
        _ => ComposedInput::bare(&task.buggy_code, task.fault_location.clone()),
    };
    let seed = derive_seed(settings.seed, &task.id, &settings.method.to_string(), 0);
    let (prompt, raw_patches) = baseline_pipeline(
        settings.method,
        &composed,
        templates,
        client,
        settings.sampling.patch_samples,
        settings.sampling.temperature,
        settings.sampling.max_output,
        &settings.sampling.model_id,
        Some(seed),
    )?;
    let patches: Vec<Patch> = raw_patches
        .iter()
        .enumerate()
        .map(|(i, p)| Patch::new(p, &task.id, i))
        .collect();
    let verdict = judge(&patches, &task.gold_fix)?;
    use sha2::{Digest, Sha256};
    let mut hasher = Sha256::new();
    hasher.update(prompt.as_bytes());
    Ok(TaskEntry {
        task_id: task.id.clone(),
        method: settings.method.to_string(),
        prompts_digest: hex::encode(hasher.finalize()),
        r_top: Vec::new(),
        p_top: Vec::new(),
        patch_samples: raw_patches,
        verdict: Some(verdict),
        failed_stage: None,
        elapsed_ms: None,
    })
}

/// Execute one run over `tasks`, appending to `run_dir`. Tasks already in
/// the log are skipped; backend errors mark the task failed and the run
/// continues.
pub fn execute_run(
    run_dir: &Path,
    tasks: &[RepairTask],
    corpus: &Corpus,
    index: Option<&Bm25Index>,
    settings: &RunSettings,
    client: &LlmClient,
    templates: &TemplateSet,
) -> Result<RunOutcome> {
    let manifest = RunManifest {
        run_id: run_dir
            .file_name()
            .map(|n| n.to_string_lossy().into_owned())
            .unwrap_or_else(|| "run".into()),
        method: settings.method.to_string(),
        seed: settings.seed,
        config: serde_json::to_value(settings).map_err(|e| Error::Internal(e.to_string()))?,
    };
    write_manifest(run_dir, &manifest)?;

    let existing: BTreeSet<String> = match load_run_log(run_dir) {
        Ok(log) => log.task_ids(),
        Err(_) => BTreeSet::new(),
    };
    let mut executed = 0;
    let mut skipped = 0;
    let mut failed_tasks = Vec::new();
    for task in tasks {
        if existing.contains(&task.id) {
            skipped += 1;
            continue;
        }
        let start = Instant::now();
        let result = match settings.method {
            Method::T3 => run_t3(
                task,
                corpus,
                index,
                settings.shots,
                &settings.forest,
                &settings.sampling,
                client,
                templates,
                settings.seed,
            ),
            _ => run_baseline_task(task, corpus, index, settings, client, templates),
        };
        let mut entry = match result {
            Ok(entry) => entry,
            Err(e) => TaskEntry {
                task_id: task.id.clone(),
                method: settings.method.to_string(),
                prompts_digest: String::new(),
                r_top: Vec::new(),
                p_top: Vec::new(),
                patch_samples: Vec::new(),
                verdict: None,
                failed_stage: Some(format!("backend: {e}")),
                elapsed_ms: None,
            },
        };
        entry.elapsed_ms = Some(start.elapsed().as_millis() as u64);
        if entry.failed_stage.is_some() {
            failed_tasks.push(task.id.clone());
        }
        append_entry(run_dir, &entry)?;
        executed += 1;
    }
    let log = load_run_log(run_dir)?;
    Ok(RunOutcome {
        log,
        executed,
        skipped,
        failed_tasks,
    })
}

/// One full run per shot count under `sweep_dir/shots-<k>`, plus a
/// `series.csv` of (shots, repair rate).
#[allow(clippy::too_many_arguments)]
pub fn execute_sweep(
    sweep_dir: &Path,
    shot_counts: &[usize],
    tasks: &[RepairTask],
    corpus: &Corpus,
    index: Option<&Bm25Index>,
    settings: &RunSettings,
    client: &LlmClient,
    templates: &TemplateSet,
) -> Result<Vec<SweepPoint>> {
    std::fs::create_dir_all(sweep_dir).map_err(|source| Error::Io {
        path: sweep_dir.display().to_string(),
        source,
    })?;
    let series = shot_sweep(shot_counts, |shots| {
        let mut point_settings = settings.clone();
        point_settings.shots = shots;
        let run_dir: PathBuf = sweep_dir.join(format!("shots-{shots}"));
        execute_run(
            &run_dir,
            tasks,
            corpus,
            index,
            &point_settings,
            client,
            templates,
        )
        .map(|o| o.log)
    })?;
    write_series_csv(&sweep_dir.join("series.csv"), &series)?;
    Ok(series)
}
