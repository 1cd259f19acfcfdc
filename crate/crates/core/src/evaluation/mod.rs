//! Ranking metrics, per-language and answer-length reporting.

mod evaluate;
mod metrics;
mod report;

pub use evaluate::{
    evaluate, summarize, CandidateMode, Decoder, EvalConfig, EvalMode, EvalReport, LanguageHits, QueryResult,
    RankedEntity,
};
pub use metrics::{hits_at_k, hits_from_ranks, length_report, Hits, LengthBucket};
pub use report::write_predictions;
