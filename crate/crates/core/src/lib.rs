//! Training-free temporal sentence grounding for long videos.
//!
//! A video is reduced to timestamped transcript and caption lines, wrapped
//! in a multi-step prompt, sent to a language model, and the JSON reply is
//! decoded into a `(start, end)` prediction. The crate also carries the
//! evaluation metrics, rule-based baselines and dataset tooling needed to
//! score such predictions.

pub mod baselines;
pub mod evaluation;
pub mod ingest;
pub mod llm;
pub mod parsing;
pub mod pipeline;
pub mod prompting;
pub mod span;
pub mod textualize;

pub use span::{
    iou, start_distance, Caption, QueryInstance, TimeSpan, TranscriptSegment, VideoRecord,
};
