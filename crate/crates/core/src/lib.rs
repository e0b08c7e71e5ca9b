//! Batch automatic program repair driven by retrieval-augmented,
//! multi-tree LLM reasoning with cross-tree frequency voting.
//!
//! The pipeline retrieves similar bug-fix examples with BM25, grows
//! independent reasoning trees for error-cause analysis and repair
//! planning, votes candidates by cross-tree frequency, generates patch
//! samples, and evaluates repair rate and self-consistency accuracy.
//! Deterministic mock backends and a content-addressed response cache
//! make every mechanism testable and replayable without a live model.

pub mod corpus;
pub mod error;
pub mod evaluation;
pub mod forest;
pub mod llm;
pub mod patching;
pub mod retrieval;
pub mod runner;
pub mod strategies;

pub use corpus::{load_corpus, normalize, tokenize, CodeExample, Corpus, SplitLabel, TokenStream};
pub use error::{Error, Result};
pub use evaluation::{compare, repair_rate, sc_accuracy, MetricsReport, RunLog, RunManifest};
pub use forest::{
    CandidateRecord, CanonMode, ForestConfig, ReasoningForest, RepairTask, SamplingConfig,
    TaskEntry, TopSelection,
};
pub use llm::{
    make_backend, Backend, BackendConfig, CompletionBatch, CompletionRequest, LlmClient,
    ResponseCache,
};
pub use patching::{equivalent, judge, majority_patch, Patch, Verdict};
pub use retrieval::{
    build_index, compose_input, retrieve, Bm25Index, ComposedInput, RetrievalResult,
};
pub use runner::{execute_run, execute_sweep, RunOutcome, RunSettings};
pub use strategies::{baseline_pipeline, parse_reply, render, Method, PromptTemplate, TemplateSet};
