//! Multi-tree reasoning engine: grow M independent trees per stage,
//! canonicalize free-text candidates, aggregate cross-tree frequencies,
//! select the top-n, and chain cause -> plan -> patch for one task.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::corpus::CodeExample;
use crate::error::{Error, Result};
use crate::llm::{CompletionRequest, LlmClient};
use crate::patching::{judge, Patch, Verdict};
use crate::retrieval::{compose_input, retrieve_excluding, Bm25Index, ComposedInput};
use crate::strategies::{parse_reply, render, stage_values, ReplyKind, Stage, TemplateSet};
use crate::Corpus;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CanonMode {
    NormalizedExact,
    JaccardCluster,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ForestConfig {
    /// Number of independent reasoning trees per stage (M).
    pub tree_count: usize,
    /// Candidate cap per tree (N); excess truncated, shortfall kept.
    pub per_tree_candidates: usize,
    /// Selection size (n).
    pub top_n: usize,
    pub canon_mode: CanonMode,
    /// Jaccard merge threshold over word 2-shingles, in (0, 1].
    pub jaccard_tau: f64,
    /// Skip the cause-analysis forest ("w/o cause").
    pub skip_cause: bool,
    /// Skip the plan-generation forest ("w/o plan").
    pub skip_plan: bool,
    /// Extra attempts for a tree whose reply fails to parse.
    pub tree_retries: usize,
}

impl Default for ForestConfig {
    fn default() -> Self {
        ForestConfig {
            tree_count: 5,
            per_tree_candidates: 3,
            top_n: 3,
            canon_mode: CanonMode::NormalizedExact,
            jaccard_tau: 0.8,
            skip_cause: false,
            skip_plan: false,
            tree_retries: 1,
        }
    }
}

impl ForestConfig {
    pub fn validate(&self) -> Result<()> {
        if self.tree_count < 1 {
            return Err(Error::Config("tree_count must be >= 1".into()));
        }
        if self.per_tree_candidates < 1 {
            return Err(Error::Config("per_tree_candidates must be >= 1".into()));
        }
        if self.top_n < 1 || self.top_n > self.tree_count * self.per_tree_candidates {
            return Err(Error::Config(format!(
                "top_n must be in [1, M*N] = [1, {}]",
                self.tree_count * self.per_tree_candidates
            )));
        }
        if !(self.jaccard_tau > 0.0 && self.jaccard_tau <= 1.0) {
            return Err(Error::Config("jaccard_tau must be in (0, 1]".into()));
        }
        Ok(())
    }
}

/// One tree's outcome: its surviving raw candidates, or a degeneracy
/// marker when every parse attempt failed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Tree {
    Live { candidates: Vec<String> },
    Degenerate { reason: String },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ReasoningForest {
    pub stage: Stage,
    pub trees: Vec<Tree>,
    /// Prompts issued, one per tree, in tree order.
    pub prompts: Vec<String>,
}

impl ReasoningForest {
    pub fn live_tree_count(&self) -> usize {
        self.trees
            .iter()
            .filter(|t| matches!(t, Tree::Live { .. }))
            .count()
    }

    /// (tree index, raw text) for every surviving candidate, in
    /// (tree, position) order.
    pub fn raw_candidates(&self) -> Vec<(usize, &str)> {
        let mut out = Vec::new();
        for (i, tree) in self.trees.iter().enumerate() {
            if let Tree::Live { candidates } = tree {
                for c in candidates {
                    out.push((i, c.as_str()));
                }
            }
        }
        out
    }
}

/// One canonical candidate class with its cross-tree frequency.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateRecord {
    pub canonical: String,
    /// Earliest raw member in (tree, position) order.
    pub representative: String,
    pub frequency: usize,
    pub members: Vec<(usize, String)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TopSelection {
    pub records: Vec<CandidateRecord>,
}

impl TopSelection {
    pub fn representatives(&self) -> Vec<String> {
        self.records
            .iter()
            .map(|r| r.representative.clone())
            .collect()
    }
}

/// Lowercase, strip punctuation, collapse whitespace.
pub fn normalize_candidate(raw: &str) -> String {
    let mut words: Vec<String> = Vec::new();
    let mut current = String::new();
    for c in raw.chars() {
        if c.is_alphanumeric() {
            current.extend(c.to_lowercase());
        } else if !current.is_empty() {
            words.push(std::mem::take(&mut current));
        }
    }
    if !current.is_empty() {
        words.push(current);
    }
    words.join(" ")
}

/// Word 2-shingles of the normalized text; single-word texts fall back to
/// the word itself so they can still cluster.
pub fn shingles(raw: &str) -> BTreeSet<String> {
    let normalized = normalize_candidate(raw);
    let words: Vec<&str> = normalized.split(' ').filter(|w| !w.is_empty()).collect();
    if words.len() < 2 {
        return words.into_iter().map(str::to_string).collect();
    }
    words
        .windows(2)
        .map(|w| format!("{} {}", w[0], w[1]))
        .collect()
}

pub fn jaccard(a: &BTreeSet<String>, b: &BTreeSet<String>) -> f64 {
    if a.is_empty() && b.is_empty() {
        return 1.0;
    }
    let intersection = a.intersection(b).count();
    let union = a.len() + b.len() - intersection;
    if union == 0 {
        1.0
    } else {
        intersection as f64 / union as f64
    }
}

/// Map a raw candidate to its canonical key. Under `JaccardCluster` the
/// candidate merges into the existing key with maximal shingle Jaccard
/// similarity when that similarity reaches tau; ties resolve to the
/// lexicographically smallest key.
pub fn canonicalize(
    raw: &str,
    mode: CanonMode,
    tau: f64,
    existing_keys: &BTreeSet<String>,
) -> String {
    let normalized = normalize_candidate(raw);
    match mode {
        CanonMode::NormalizedExact => normalized,
        CanonMode::JaccardCluster => {
            let own = shingles(raw);
            let mut best: Option<(f64, &str)> = None;
            // BTreeSet iteration is ascending, so `>` keeps the
            // lexicographically smallest key among equal similarities.
            for key in existing_keys {
                let sim = jaccard(&own, &shingles(key));
                if sim >= tau && best.map_or(true, |(s, _)| sim > s) {
                    best = Some((sim, key));
                }
            }
            best.map(|(_, k)| k.to_string()).unwrap_or(normalized)
        }
    }
}

/// Count cross-tree frequencies: every surviving raw candidate lands in
/// exactly one record, so frequencies sum to the candidate total. Records
/// are returned in ascending canonical-key order.
pub fn count_frequencies(
    forest: &ReasoningForest,
    mode: CanonMode,
    tau: f64,
) -> Result<Vec<CandidateRecord>> {
    if forest.live_tree_count() == 0 {
        return Err(Error::Stage {
            stage: format!("{:?}", forest.stage).to_lowercase(),
            message: "every tree is degenerate".into(),
        });
    }
    let mut records: Vec<CandidateRecord> = Vec::new();
    let mut keys: BTreeSet<String> = BTreeSet::new();
    for (tree, raw) in forest.raw_candidates() {
        let key = canonicalize(raw, mode, tau, &keys);
        keys.insert(key.clone());
        match records.iter_mut().find(|r| r.canonical == key) {
            Some(rec) => {
                rec.frequency += 1;
                rec.members.push((tree, raw.to_string()));
            }
            None => records.push(CandidateRecord {
                canonical: key,
                representative: raw.to_string(),
                frequency: 1,
                members: vec![(tree, raw.to_string())],
            }),
        }
    }
    records.sort_by(|a, b| a.canonical.cmp(&b.canonical));
    Ok(records)
}

/// Top-n records by descending frequency, ties broken by ascending
/// canonical key. Fewer than n records pass through unchanged; an empty
/// record list is a stage failure.
pub fn select_top(records: &[CandidateRecord], n: usize) -> Result<TopSelection> {
    if n < 1 {
        return Err(Error::Precondition("select_top needs n >= 1".into()));
    }
    if records.is_empty() {
        return Err(Error::Stage {
            stage: "selection".into(),
            message: "no candidate records".into(),
        });
    }
    let mut sorted: Vec<CandidateRecord> = records.to_vec();
    sorted.sort_by(|a, b| {
        b.frequency
            .cmp(&a.frequency)
            .then(a.canonical.cmp(&b.canonical))
    });
    sorted.truncate(n);
    Ok(TopSelection { records: sorted })
}

/// Derive a per-(task, stage, tree) request seed from the run seed so
/// identical prompts in different trees remain distinct calls.
pub fn derive_seed(run_seed: u64, task_id: &str, stage: &str, tree: u64) -> u64 {
    let mut hasher = Sha256::new();
    hasher.update(run_seed.to_le_bytes());
    hasher.update(task_id.as_bytes());
    hasher.update([0]);
    hasher.update(stage.as_bytes());
    hasher.update([0]);
    hasher.update(tree.to_le_bytes());
    let out = hasher.finalize();
    u64::from_le_bytes(out[..8].try_into().unwrap())
}

/// Sampling settings shared by every stage request of a run.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SamplingConfig {
    pub temperature: f64,
    /// Patch-stage sample count (s).
    pub patch_samples: usize,
    pub max_output: usize,
    pub model_id: String,
}

impl Default for SamplingConfig {
    fn default() -> Self {
        SamplingConfig {
            temperature: 0.7,
            patch_samples: 30,
            max_output: 1024,
            model_id: "gpt-3.5-turbo".into(),
        }
    }
}

/// Grow M trees for one stage. Tree i takes roots[i % roots.len()] as its
/// root; each tree is one single-sample completion parsed into at most N
/// candidates. A tree whose reply fails to parse retries with a salted
/// seed up to `tree_retries` times, then is marked degenerate.
#[allow(clippy::too_many_arguments)]
pub fn grow_forest(
    stage: Stage,
    roots: &[ComposedInput],
    root_causes: &[Vec<String>],
    config: &ForestConfig,
    sampling: &SamplingConfig,
    client: &LlmClient,
    templates: &TemplateSet,
    run_seed: u64,
    task_id: &str,
) -> Result<ReasoningForest> {
    if roots.is_empty() {
        return Err(Error::Precondition(
            "grow_forest needs at least one root".into(),
        ));
    }
    let (template, kind, stage_name) = match stage {
        Stage::Cause => (&templates.cause, ReplyKind::CauseList, "cause"),
        Stage::Plan => (&templates.plan, ReplyKind::PlanList, "plan"),
        _ => {
            return Err(Error::Precondition(
                "forests grow only cause or plan stages".into(),
            ))
        }
    };
    let mut trees = Vec::with_capacity(config.tree_count);
    let mut prompts = Vec::with_capacity(config.tree_count);
    for tree_idx in 0..config.tree_count {
        let root = &roots[tree_idx % roots.len()];
        let causes = root_causes
            .get(tree_idx % roots.len())
            .cloned()
            .unwrap_or_default();
        let prompt = render(template, &stage_values(root, &causes, &[]))?;
        prompts.push(prompt.clone());
        let mut tree = None;
        for attempt in 0..=config.tree_retries {
            // the retry salt shifts the seed past every base tree index
            let salt = (attempt as u64) * 1_000_003;
            let request = CompletionRequest {
                prompt: prompt.clone(),
                temperature: sampling.temperature,
                sample_count: 1,
                max_output: sampling.max_output,
                model_id: sampling.model_id.clone(),
                seed: Some(derive_seed(
                    run_seed,
                    task_id,
                    stage_name,
                    tree_idx as u64 + salt,
                )),
            };
            let batch = client.complete(&request)?;
            match parse_reply(&batch.samples[0], kind) {
                Ok(parsed) => {
                    let mut candidates = parsed.items;
                    candidates.truncate(config.per_tree_candidates);
                    tree = Some(Tree::Live { candidates });
                    break;
                }
                Err(e) => {
                    tree = Some(Tree::Degenerate {
                        reason: e.to_string(),
                    });
                }
            }
        }
        trees.push(tree.expect("at least one attempt runs"));
    }
    Ok(ReasoningForest {
        stage,
        trees,
        prompts,
    })
}

/// One task for the repair pipeline.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RepairTask {
    pub id: String,
    pub buggy_code: String,
    pub gold_fix: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fault_location: Option<String>,
}

impl RepairTask {
    pub fn from_example(ex: &CodeExample) -> Self {
        RepairTask {
            id: ex.id.clone(),
            buggy_code: ex.buggy_code.clone(),
            gold_fix: ex.fixed_code.clone(),
            fault_location: ex.fault_location.clone(),
        }
    }
}

/// Everything recorded for one task.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TaskEntry {
    pub task_id: String,
    pub method: String,
    /// Digest over every prompt issued for this task, in order.
    pub prompts_digest: String,
    pub r_top: Vec<String>,
    pub p_top: Vec<String>,
    pub patch_samples: Vec<String>,
    pub verdict: Option<Verdict>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub failed_stage: Option<String>,
    /// Wall time; persisted in a sidecar, never in the log itself, so
    /// logs stay byte-identical across replays.
    #[serde(skip)]
    pub elapsed_ms: Option<u64>,
}

fn prompts_digest(prompts: &[String]) -> String {
    let mut hasher = Sha256::new();
    for p in prompts {
        hasher.update(p.as_bytes());
        hasher.update([0]);
    }
    hex::encode(hasher.finalize())
}

fn failed_entry(task: &RepairTask, stage: &str, message: &str, prompts: &[String]) -> TaskEntry {
    TaskEntry {
        task_id: task.id.clone(),
        method: "t3".into(),
        prompts_digest: prompts_digest(prompts),
        r_top: Vec::new(),
        p_top: Vec::new(),
        patch_samples: Vec::new(),
        verdict: None,
        failed_stage: Some(format!("{stage}: {message}")),
        elapsed_ms: None,
    }
}

/// Run the full staged pipeline for one task: retrieve and compose, grow
/// the cause forest and vote, grow the plan forest and vote, then issue
/// one patch-stage request with `sampling.patch_samples` samples and
/// judge them. Ablation flags skip the cause or plan forests; with both
/// set the task costs exactly one backend call.
#[allow(clippy::too_many_arguments)]
pub fn run_t3(
    task: &RepairTask,
    corpus: &Corpus,
    index: Option<&Bm25Index>,
    shots: usize,
    config: &ForestConfig,
    sampling: &SamplingConfig,
    client: &LlmClient,
    templates: &TemplateSet,
    run_seed: u64,
) -> Result<TaskEntry> {
    config.validate()?;
    let mut all_prompts: Vec<String> = Vec::new();

    let composed = match index {
        Some(index) if shots > 0 => {
            let retrieved = retrieve_excluding(index, &task.buggy_code, shots, Some(&task.id));
            compose_input(
                &retrieved,
                corpus,
                &task.buggy_code,
                task.fault_location.as_deref(),
            )?
        }
        _ => ComposedInput::bare(&task.buggy_code, task.fault_location.clone()),
    };

    // cause stage
    let r_top = if config.skip_cause {
        TopSelection {
            records: Vec::new(),
        }
    } else {
        let forest = grow_forest(
            Stage::Cause,
            std::slice::from_ref(&composed),
            &[],
            config,
            sampling,
            client,
            templates,
            run_seed,
            &task.id,
        )?;
        all_prompts.extend(forest.prompts.iter().cloned());
        let records = match count_frequencies(&forest, config.canon_mode, config.jaccard_tau) {
            Ok(records) => records,
            Err(e) => return Ok(failed_entry(task, "cause", &e.to_string(), &all_prompts)),
        };
        match select_top(&records, config.top_n) {
            Ok(sel) => sel,
            Err(e) => return Ok(failed_entry(task, "cause", &e.to_string(), &all_prompts)),
        }
    };

    // plan stage: one root per selected cause, trees round-robin
    let p_top = if config.skip_plan {
        TopSelection {
            records: Vec::new(),
        }
    } else {
        let causes = r_top.representatives();
        let (roots, root_causes): (Vec<ComposedInput>, Vec<Vec<String>>) = if causes.is_empty() {
            // "w/o cause": the plan stage feeds from the composed input
            (vec![composed.clone()], vec![Vec::new()])
        } else {
            (
                causes.iter().map(|_| composed.clone()).collect(),
                causes.iter().map(|c| vec![c.clone()]).collect(),
            )
        };
        let forest = grow_forest(
            Stage::Plan,
            &roots,
            &root_causes,
            config,
            sampling,
            client,
            templates,
            run_seed,
            &task.id,
        )?;
        all_prompts.extend(forest.prompts.iter().cloned());
        let records = match count_frequencies(&forest, config.canon_mode, config.jaccard_tau) {
            Ok(records) => records,
            Err(e) => return Ok(failed_entry(task, "plan", &e.to_string(), &all_prompts)),
        };
        match select_top(&records, config.top_n) {
            Ok(sel) => sel,
            Err(e) => return Ok(failed_entry(task, "plan", &e.to_string(), &all_prompts)),
        }
    };

    // patch stage: one request, s samples, over T + E + the selections
    let patch_prompt = render(
        &templates.patch,
        &stage_values(
            &composed,
            &r_top.representatives(),
            &p_top.representatives(),
        ),
    )?;
    all_prompts.push(patch_prompt.clone());
    let request = CompletionRequest {
        prompt: patch_prompt,
        temperature: sampling.temperature,
        sample_count: sampling.patch_samples,
        max_output: sampling.max_output,
        model_id: sampling.model_id.clone(),
        seed: Some(derive_seed(run_seed, &task.id, "patch", 0)),
    };
    let batch = client.complete(&request)?;
    let patches: Vec<Patch> = batch
        .samples
        .iter()
        .enumerate()
        .map(|(i, s)| {
            let raw = parse_reply(s, ReplyKind::Patch)
                .map(|p| p.items.into_iter().next().unwrap_or_default())
                .unwrap_or_default();
            Patch::new(&raw, &task.id, i)
        })
        .collect();
    let verdict = judge(&patches, &task.gold_fix)?;

    Ok(TaskEntry {
        task_id: task.id.clone(),
        method: "t3".into(),
        prompts_digest: prompts_digest(&all_prompts),
        r_top: r_top.representatives(),
        p_top: p_top.representatives(),
        patch_samples: batch.samples,
        verdict: Some(verdict),
        failed_stage: None,
        elapsed_ms: None,
    })
}
