//! Repair-rate and self-consistency metrics over run logs, multi-method
//! comparison reports, and the shot-count sweep harness.
//!
//! A run directory holds `manifest.json`, `tasks.jsonl` (one entry per
//! task, deterministic bytes), and `timings.jsonl` (wall times, kept out
//! of the log so replays are byte-identical).

use std::collections::BTreeSet;
use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::forest::TaskEntry;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunManifest {
    pub run_id: String,
    pub method: String,
    pub seed: u64,
    /// Config snapshot; with a warm cache and this seed the run replays
    /// bit-identically.
    pub config: serde_json::Value,
}

#[derive(Debug, Clone)]
pub struct RunLog {
    pub manifest: RunManifest,
    pub entries: Vec<TaskEntry>,
}

impl RunLog {
    pub fn task_ids(&self) -> BTreeSet<String> {
        self.entries.iter().map(|e| e.task_id.clone()).collect()
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct TimingRecord {
    task_id: String,
    elapsed_ms: u64,
}

pub fn write_manifest(dir: &Path, manifest: &RunManifest) -> Result<()> {
    fs::create_dir_all(dir).map_err(|source| Error::Io {
        path: dir.display().to_string(),
        source,
    })?;
    let path = dir.join("manifest.json");
    let bytes = serde_json::to_vec_pretty(manifest).map_err(|e| Error::Internal(e.to_string()))?;
    fs::write(&path, bytes).map_err(|source| Error::Io {
        path: path.display().to_string(),
        source,
    })
}

/// Append one entry to the log, and its wall time to the sidecar.
pub fn append_entry(dir: &Path, entry: &TaskEntry) -> Result<()> {
    let path = dir.join("tasks.jsonl");
    let mut line = serde_json::to_vec(entry).map_err(|e| Error::Internal(e.to_string()))?;
    line.push(b'\n');
    let mut file = fs::OpenOptions::new()
        .create(true)
        .append(true)
        .open(&path)
        .map_err(|source| Error::Io {
            path: path.display().to_string(),
            source,
        })?;
    file.write_all(&line).map_err(|source| Error::Io {
        path: path.display().to_string(),
        source,
    })?;
    if let Some(elapsed_ms) = entry.elapsed_ms {
        let tpath = dir.join("timings.jsonl");
        let mut tline = serde_json::to_vec(&TimingRecord {
            task_id: entry.task_id.clone(),
            elapsed_ms,
        })
        .map_err(|e| Error::Internal(e.to_string()))?;
        tline.push(b'\n');
        let mut tfile = fs::OpenOptions::new()
            .create(true)
            .append(true)
            .open(&tpath)
            .map_err(|source| Error::Io {
                path: tpath.display().to_string(),
                source,
            })?;
        tfile.write_all(&tline).map_err(|source| Error::Io {
            path: tpath.display().to_string(),
            source,
        })?;
    }
    Ok(())
}

pub fn load_run_log(dir: &Path) -> Result<RunLog> {
    let mpath = dir.join("manifest.json");
    let manifest: RunManifest =
        serde_json::from_slice(&fs::read(&mpath).map_err(|source| Error::Io {
            path: mpath.display().to_string(),
            source,
        })?)
        .map_err(|e| Error::Protocol(e.to_string()))?;
    let tpath = dir.join("tasks.jsonl");
    let mut entries = Vec::new();
    match fs::read_to_string(&tpath) {
        Ok(text) => {
            for (i, line) in text.lines().enumerate() {
                if line.trim().is_empty() {
                    continue;
                }
                let entry: TaskEntry = serde_json::from_str(line).map_err(|e| Error::Parse {
                    line: i + 1,
                    message: e.to_string(),
                })?;
                entries.push(entry);
            }
        }
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => {}
        Err(source) => {
            return Err(Error::Io {
                path: tpath.display().to_string(),
                source,
            });
        }
    }
    // rejoin wall times from the sidecar
    if let Ok(text) = fs::read_to_string(dir.join("timings.jsonl")) {
        for line in text.lines() {
            if let Ok(rec) = serde_json::from_str::<TimingRecord>(line) {
                if let Some(entry) = entries.iter_mut().find(|e| e.task_id == rec.task_id) {
                    entry.elapsed_ms = Some(rec.elapsed_ms);
                }
            }
        }
    }
    Ok(RunLog { manifest, entries })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodRow {
    pub method: String,
    pub n_total: usize,
    pub n_correct: usize,
    pub n_total_correct: usize,
    pub n_selected_correct: usize,
    pub repair_rate: f64,
    /// None when no task has a correct sample.
    pub sc_accuracy: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub rows: Vec<MethodRow>,
}

fn counts(log: &RunLog) -> (usize, usize, usize) {
    let n_total = log.entries.len();
    let n_correct = log
        .entries
        .iter()
        .filter(|e| e.verdict.as_ref().is_some_and(|v| v.correct))
        .count();
    let n_selected_correct = log
        .entries
        .iter()
        .filter(|e| {
            e.verdict
                .as_ref()
                .is_some_and(|v| v.correct && v.majority_correct)
        })
        .count();
    (n_total, n_correct, n_selected_correct)
}

/// Fraction of tasks with a correct sample; failed-stage tasks count in
/// the denominator as incorrect.
pub fn repair_rate(log: &RunLog) -> Result<f64> {
    if log.entries.is_empty() {
        return Err(Error::Precondition("repair_rate over an empty log".into()));
    }
    let (n_total, n_correct, _) = counts(log);
    Ok(n_correct as f64 / n_total as f64)
}

/// Among tasks with a correct sample, the fraction whose plurality patch
/// is correct. Undefined (None) when no task is correct.
pub fn sc_accuracy(log: &RunLog) -> Result<Option<f64>> {
    if log.entries.is_empty() {
        return Err(Error::Precondition("sc_accuracy over an empty log".into()));
    }
    let (_, n_correct, n_selected_correct) = counts(log);
    if n_correct == 0 {
        Ok(None)
    } else {
        Ok(Some(n_selected_correct as f64 / n_correct as f64))
    }
}

fn method_row(log: &RunLog) -> Result<MethodRow> {
    let (n_total, n_correct, n_selected_correct) = counts(log);
    // the success count feeding SC accuracy is the repair-rate numerator
    let n_total_correct = n_correct;
    debug_assert!(n_selected_correct <= n_total_correct);
    Ok(MethodRow {
        method: log.manifest.method.clone(),
        n_total,
        n_correct,
        n_total_correct,
        n_selected_correct,
        repair_rate: repair_rate(log)?,
        sc_accuracy: sc_accuracy(log)?,
    })
}

/// One row per log, ordered by method id. Every log must cover the same
/// task set.
pub fn compare(logs: &[RunLog]) -> Result<MetricsReport> {
    if logs.is_empty() {
        return Err(Error::Precondition("compare needs at least one log".into()));
    }
    let base = logs[0].task_ids();
    for log in &logs[1..] {
        let ids = log.task_ids();
        if ids != base {
            let diff: Vec<String> = base.symmetric_difference(&ids).cloned().collect();
            return Err(Error::Evaluation(format!(
                "logs cover different task sets; symmetric difference: {}",
                diff.join(", ")
            )));
        }
    }
    let mut rows = logs.iter().map(method_row).collect::<Result<Vec<_>>>()?;
    rows.sort_by(|a, b| a.method.cmp(&b.method));
    Ok(MetricsReport { rows })
}

/// Percentage string with two decimals, matching tabular convention.
pub fn percent(x: f64) -> String {
    format!("{:.2}", x * 100.0)
}

impl MetricsReport {
    /// Plain-text aligned table.
    pub fn render_table(&self) -> String {
        let mut out = String::new();
        out.push_str(&format!(
            "{:<16} {:>8} {:>10} {:>12} {:>12}\n",
            "method", "tasks", "correct", "repair %", "sc acc %"
        ));
        for row in &self.rows {
            let sc = row
                .sc_accuracy
                .map(percent)
                .unwrap_or_else(|| "undefined".into());
            out.push_str(&format!(
                "{:<16} {:>8} {:>10} {:>12} {:>12}\n",
                row.method,
                row.n_total,
                row.n_correct,
                percent(row.repair_rate),
                sc
            ));
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub shots: usize,
    /// None when the run for this point failed.
    pub repair_rate: Option<f64>,
}

/// One full run per shot count with everything else fixed. A failing
/// point marks its entry instead of aborting the sweep.
pub fn shot_sweep<F>(shot_counts: &[usize], mut run_point: F) -> Result<Vec<SweepPoint>>
where
    F: FnMut(usize) -> Result<RunLog>,
{
    if shot_counts.is_empty() {
        return Err(Error::Precondition(
            "shot sweep needs at least one shot count".into(),
        ));
    }
    if shot_counts.iter().any(|&s| s == 0) {
        return Err(Error::Precondition("shot counts must be positive".into()));
    }
    let distinct: BTreeSet<usize> = shot_counts.iter().copied().collect();
    if distinct.len() != shot_counts.len() {
        return Err(Error::Precondition("shot counts must be distinct".into()));
    }
    let mut series = Vec::with_capacity(shot_counts.len());
    for &shots in shot_counts {
        let rate = match run_point(shots) {
            Ok(log) => Some(repair_rate(&log)?),
            Err(_) => None,
        };
        series.push(SweepPoint {
            shots,
            repair_rate: rate,
        });
    }
    Ok(series)
}

/// Two-column CSV suitable for external plotting.
pub fn write_series_csv(path: &Path, series: &[SweepPoint]) -> Result<()> {
    let mut out = String::from("shots,repair_rate\n");
    for p in series {
        match p.repair_rate {
            Some(r) => out.push_str(&format!("{},{:.6}\n", p.shots, r)),
            None => out.push_str(&format!("{},failed\n", p.shots)),
        }
    }
    fs::write(path, out).map_err(|source| Error::Io {
        path: path.display().to_string(),
        source,
    })
}
