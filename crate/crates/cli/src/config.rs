//! Run configuration: TOML config file mirrored by CLI flags, with
//! precedence flag > file > built-in default.

use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use forestfix::forest::CanonMode;
use forestfix::llm::{BackendConfig, HttpConfig};
use forestfix::strategies::Method;
use forestfix::{Error, ForestConfig, Result, RunSettings, SamplingConfig, SplitLabel};

/// Everything a run needs; every field has a flag twin.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    pub corpus: Option<PathBuf>,
    pub tasks: Option<PathBuf>,
    pub split: Option<String>,
    pub method: Option<String>,
    pub shots: Option<usize>,
    pub k1: Option<f64>,
    pub b: Option<f64>,
    pub trees: Option<usize>,
    pub per_tree: Option<usize>,
    pub top_n: Option<usize>,
    pub canon_mode: Option<String>,
    pub jaccard_tau: Option<f64>,
    pub no_cause: Option<bool>,
    pub no_plan: Option<bool>,
    pub temperature: Option<f64>,
    pub samples: Option<usize>,
    pub max_output: Option<usize>,
    pub model_id: Option<String>,
    pub seed: Option<u64>,
    pub parallelism: Option<usize>,
    pub backend: Option<String>,
    pub script: Option<PathBuf>,
    pub table: Option<PathBuf>,
    pub endpoint: Option<String>,
    pub credential_env: Option<String>,
    pub cache_dir: Option<PathBuf>,
    pub templates: Option<PathBuf>,
    pub run_dir: Option<PathBuf>,
}

impl FileConfig {
    pub fn load(path: &std::path::Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|source| Error::Io {
            path: path.display().to_string(),
            source,
        })?;
        toml::from_str(&text).map_err(|e| Error::Config(format!("bad config file: {e}")))
    }

    /// Overlay `other` (CLI flags) on top of this config.
    pub fn overlay(mut self, other: FileConfig) -> FileConfig {
        macro_rules! take {
            ($($f:ident),*) => { $( if other.$f.is_some() { self.$f = other.$f; } )* };
        }
        take!(
            corpus,
            tasks,
            split,
            method,
            shots,
            k1,
            b,
            trees,
            per_tree,
            top_n,
            canon_mode,
            jaccard_tau,
            no_cause,
            no_plan,
            temperature,
            samples,
            max_output,
            model_id,
            seed,
            parallelism,
            backend,
            script,
            table,
            endpoint,
            credential_env,
            cache_dir,
            templates,
            run_dir
        );
        self
    }
}

#[derive(Debug)]
pub struct ResolvedConfig {
    pub corpus: PathBuf,
    pub tasks: PathBuf,
    pub split: SplitLabel,
    pub k1: f64,
    pub b: f64,
    pub settings: RunSettings,
    pub backend: BackendConfig,
    pub cache_dir: Option<PathBuf>,
    pub templates: Option<PathBuf>,
    pub run_dir: PathBuf,
}

fn parse_split(s: &str) -> Result<SplitLabel> {
    match s {
        "train" => Ok(SplitLabel::Train),
        "test" => Ok(SplitLabel::Test),
        "custom" => Ok(SplitLabel::Custom),
        other => Err(Error::Config(format!("unknown split `{other}`"))),
    }
}

fn parse_canon(s: &str) -> Result<CanonMode> {
    match s {
        "normalized_exact" => Ok(CanonMode::NormalizedExact),
        "jaccard_cluster" => Ok(CanonMode::JaccardCluster),
        other => Err(Error::Config(format!("unknown canon mode `{other}`"))),
    }
}

pub fn resolve(config: FileConfig) -> Result<ResolvedConfig> {
    let corpus = config
        .corpus
        .ok_or_else(|| Error::Config("missing required field `corpus`".into()))?;
    let tasks = config
        .tasks
        .ok_or_else(|| Error::Config("missing required field `tasks`".into()))?;
    let run_dir = config
        .run_dir
        .ok_or_else(|| Error::Config("missing required field `run_dir`".into()))?;
    let method = Method::parse(config.method.as_deref().unwrap_or("t3"))?;
    let forest_defaults = ForestConfig::default();
    let sampling_defaults = SamplingConfig::default();
    let settings = RunSettings {
        method,
        shots: config.shots.unwrap_or(3),
        forest: ForestConfig {
            tree_count: config.trees.unwrap_or(forest_defaults.tree_count),
            per_tree_candidates: config
                .per_tree
                .unwrap_or(forest_defaults.per_tree_candidates),
            top_n: config.top_n.unwrap_or(forest_defaults.top_n),
            canon_mode: match config.canon_mode.as_deref() {
                Some(s) => parse_canon(s)?,
                None => forest_defaults.canon_mode,
            },
            jaccard_tau: config.jaccard_tau.unwrap_or(forest_defaults.jaccard_tau),
            skip_cause: config.no_cause.unwrap_or(false),
            skip_plan: config.no_plan.unwrap_or(false),
            tree_retries: forest_defaults.tree_retries,
        },
        sampling: SamplingConfig {
            temperature: config.temperature.unwrap_or(sampling_defaults.temperature),
            patch_samples: config.samples.unwrap_or(sampling_defaults.patch_samples),
            max_output: config.max_output.unwrap_or(sampling_defaults.max_output),
            model_id: config.model_id.unwrap_or(sampling_defaults.model_id),
        },
        seed: config.seed.unwrap_or(0),
        parallelism: config.parallelism.unwrap_or(1),
    };
    settings.forest.validate()?;
    if !(0.0..=2.0).contains(&settings.sampling.temperature) {
        return Err(Error::Config("temperature must be in [0, 2]".into()));
    }
    let backend = match config.backend.as_deref().unwrap_or("scripted") {
        "scripted" | "scripted_mock" => BackendConfig::ScriptedMock {
            script_path: config
                .script
                .ok_or_else(|| Error::Config("scripted backend requires `script`".into()))?,
        },
        "seeded" | "seeded_mock" => BackendConfig::SeededMock {
            table_path: config
                .table
                .ok_or_else(|| Error::Config("seeded backend requires `table`".into()))?,
            seed: settings.seed,
        },
        "http" | "http_provider" => BackendConfig::HttpProvider(HttpConfig {
            endpoint: config
                .endpoint
                .ok_or_else(|| Error::Config("http backend requires `endpoint`".into()))?,
            credential_env: config
                .credential_env
                .ok_or_else(|| Error::Config("http backend requires `credential_env`".into()))?,
        }),
        other => return Err(Error::Config(format!("unknown backend `{other}`"))),
    };
    Ok(ResolvedConfig {
        corpus,
        tasks,
        split: parse_split(config.split.as_deref().unwrap_or("train"))?,
        k1: config.k1.unwrap_or(forestfix::retrieval::DEFAULT_K1),
        b: config.b.unwrap_or(forestfix::retrieval::DEFAULT_B),
        settings,
        backend,
        cache_dir: config.cache_dir,
        templates: config.templates,
        run_dir,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flag_overrides_file() {
        let file = FileConfig {
            shots: Some(3),
            seed: Some(1),
            ..FileConfig::default()
        };
        let flags = FileConfig {
            shots: Some(5),
            ..FileConfig::default()
        };
        let merged = file.overlay(flags);
        assert_eq!(merged.shots, Some(5));
        assert_eq!(merged.seed, Some(1));
    }

    #[test]
    fn resolve_requires_paths() {
        let err = resolve(FileConfig::default()).unwrap_err();
        assert!(err.to_string().contains("corpus"));
    }

    #[test]
    fn resolve_defaults_match_run_settings() {
        let cfg = FileConfig {
            corpus: Some("c.jsonl".into()),
            tasks: Some("t.jsonl".into()),
            run_dir: Some("out".into()),
            script: Some("s.json".into()),
            ..FileConfig::default()
        };
        let resolved = resolve(cfg).unwrap();
        assert_eq!(resolved.settings.sampling.temperature, 0.7);
        assert_eq!(resolved.settings.sampling.patch_samples, 30);
        assert_eq!(resolved.settings.forest.tree_count, 5);
        assert_eq!(resolved.k1, 1.2);
    }

    #[test]
    fn resolve_rejects_bad_values() {
        let base = FileConfig {
            corpus: Some("c".into()),
            tasks: Some("t".into()),
            run_dir: Some("o".into()),
            script: Some("s".into()),
            ..FileConfig::default()
        };
        let bad_temp = FileConfig {
            temperature: Some(3.0),
            ..base.clone()
        };
        assert!(resolve(bad_temp).is_err());
        let bad_method = FileConfig {
            method: Some("zen".into()),
            ..base.clone()
        };
        assert!(resolve(bad_method).is_err());
        let bad_backend = FileConfig {
            backend: Some("psychic".into()),
            ..base
        };
        assert!(resolve(bad_backend).is_err());
    }
}
