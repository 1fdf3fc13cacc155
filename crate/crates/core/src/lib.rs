//! Skill extraction from chat exports: ingestion, token-budgeted chunking,
//! LLM extraction, profile aggregation, annotation storage and evaluation.

pub mod chunker;
pub mod evaluator;
pub mod extractor;
pub mod fsutil;
pub mod ingest;
pub mod profiler;
pub mod providers;
pub mod scalar;
pub mod store;
pub mod timestamp;
pub mod tokenizer;

pub use scalar::Scalar;

pub type SkillProfileF64 = profiler::SkillProfile<f64>;
pub type SkillEntryF64 = profiler::SkillEntry<f64>;
pub type MergedProfileF64 = profiler::MergedProfile<f64>;
pub type EvalPairF64 = evaluator::EvalPair<f64>;
pub type MetricRowF64 = evaluator::MetricRow<f64>;
pub type ModelReportF64 = evaluator::ModelReport<f64>;
pub type PerUserReportF64 = evaluator::PerUserReport<f64>;

pub type SkillProfileF32 = profiler::SkillProfile<f32>;
pub type MetricRowF32 = evaluator::MetricRow<f32>;
