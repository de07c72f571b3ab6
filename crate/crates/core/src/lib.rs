//! Corpus-statistics engine for approximating next-token predictors with
//! count-based context rules.
//!
//! The pipeline: load a tokenized corpus ([`corpus`]), chunk it and count
//! masked n-gram windows ([`store`]), evaluate keep/drop/marginalize rules
//! against the counts ([`rules`]), compare rule distributions with model
//! predictions ([`dist`], [`predict`]), and run the study-level analyses
//! ([`analysis`]). [`teacher`] provides a synthetic source with exact
//! conditionals for end-to-end fixtures.

pub mod analysis;
pub mod corpus;
pub mod dist;
pub mod error;
pub mod predict;
pub mod rules;
pub mod store;
pub mod teacher;

pub use corpus::{chunk, ChunkedStream, ChunkingConfig, Corpus, CorpusFormat, TokenId};
pub use dist::{
    model_variance, optimal_rule, top1_accuracy, Metric, OptimalRuleResult, RuleSet,
    SparseDistribution,
};
pub use error::{Error, Result};
pub use predict::{GroupKey, PredictionRecord, PredictionSet};
pub use rules::{
    backoff, canonicalize, enumerate_ruleset, required_masks, CanonicalRule, RuleFamily,
    RuleSetSpec, Sigma,
};
pub use store::{build, CountStore, Mask, MaskSelection, PatternKey, Slot, StoreConfig};
pub use teacher::{EmitOptions, EvalContext, StepWeights, Teacher, TeacherConfig};
