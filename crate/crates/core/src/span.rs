//! Time spans, transcript/caption units and the interval arithmetic used
//! by evaluation.

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// A closed interval of seconds.
///
/// Construct through [`TimeSpan::new`] to get the invariants checked:
/// both ends finite, `0 <= start_s <= end_s`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TimeSpan {
    pub start_s: f64,
    pub end_s: f64,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SpanError {
    #[error("timestamp is not a finite number")]
    NonFinite,
    #[error("negative timestamp {0}")]
    Negative(f64),
    #[error("start {start} is after end {end}")]
    StartAfterEnd { start: f64, end: f64 },
}

impl TimeSpan {
    pub fn new(start_s: f64, end_s: f64) -> Result<Self, SpanError> {
        if !start_s.is_finite() || !end_s.is_finite() {
            return Err(SpanError::NonFinite);
        }
        if start_s < 0.0 {
            return Err(SpanError::Negative(start_s));
        }
        if start_s > end_s {
            return Err(SpanError::StartAfterEnd {
                start: start_s,
                end: end_s,
            });
        }
        Ok(Self { start_s, end_s })
    }

    pub fn len(&self) -> f64 {
        self.end_s - self.start_s
    }

    pub fn is_empty(&self) -> bool {
        self.end_s == self.start_s
    }

    pub fn midpoint(&self) -> f64 {
        (self.start_s + self.end_s) / 2.0
    }

    /// Length of the overlap with `other`, zero when disjoint.
    pub fn intersection_len(&self, other: &TimeSpan) -> f64 {
        (self.end_s.min(other.end_s) - self.start_s.max(other.start_s)).max(0.0)
    }

    pub fn is_valid(&self) -> bool {
        Self::new(self.start_s, self.end_s).is_ok()
    }
}

/// Intersection-over-union of two spans, in `[0, 1]`.
///
/// When the union has zero length both spans are points: identical points
/// score 1, distinct points 0.
pub fn iou(a: &TimeSpan, b: &TimeSpan) -> f64 {
    let inter = a.intersection_len(b);
    let union = a.len() + b.len() - inter;
    if union <= 0.0 {
        return if a == b { 1.0 } else { 0.0 };
    }
    (inter / union).clamp(0.0, 1.0)
}

/// Absolute distance between the start times of a prediction and its ground truth.
///
/// Collapsed predictions have no span; evaluation assigns them
/// [`f64::INFINITY`] directly.
pub fn start_distance(pred: &TimeSpan, gt: &TimeSpan) -> f64 {
    (pred.start_s - gt.start_s).abs()
}

/// One sentence of speech: `(t_start, t_end, text)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TranscriptSegment {
    pub span: TimeSpan,
    pub text: String,
}

/// A caption generated on the frame sampled at `time_s`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Caption {
    pub time_s: f64,
    pub text: String,
}

/// A video and its textual side channels.
#[derive(Debug, Clone, PartialEq)]
pub struct VideoRecord {
    pub id: String,
    pub title: String,
    pub duration_s: f64,
    pub transcripts: Vec<TranscriptSegment>,
    pub captions: Vec<Caption>,
    pub scenes: Vec<TimeSpan>,
}

impl VideoRecord {
    /// A record with no transcripts, captions or scenes.
    pub fn bare(id: impl Into<String>, title: impl Into<String>, duration_s: f64) -> Self {
        Self {
            id: id.into(),
            title: title.into(),
            duration_s,
            transcripts: Vec::new(),
            captions: Vec::new(),
            scenes: Vec::new(),
        }
    }
}

/// A natural-language query against one video.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryInstance {
    pub video_id: String,
    pub query: String,
    /// Absent in pure-inference mode.
    pub ground_truth: Option<TimeSpan>,
}
