//! Compressed task textualization: choosing which frame times get captions
//! and rendering transcripts and captions into temporally marked lines.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::span::{Caption, TimeSpan, TranscriptSegment, VideoRecord};

/// Minimum number of captioned frames before falling back to uniform sampling.
pub const DEFAULT_MIN_FRAMES: usize = 100;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum TextualizeError {
    #[error("video duration must be positive")]
    NonPositiveDuration,
    #[error("min_frames must be at least 1")]
    ZeroMinFrames,
    #[error("both speech and visual inputs are disabled")]
    BothModalitiesDisabled,
}

/// Integer frame times handed to an external captioner.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FramePlan {
    pub times_s: Vec<u64>,
}

/// Serialized frame-plan file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FramePlanFile {
    pub video_id: String,
    pub times_s: Vec<u64>,
}

/// Pick the frames to caption.
///
/// Each transcript segment and each scene contributes the floor of its
/// midpoint. If that yields fewer than `min_frames` distinct times, the plan
/// is replaced by `min(min_frames, floor(duration) + 1)` evenly spaced integer
/// seconds covering `[0, floor(duration)]`.
pub fn plan_frame_times(
    transcripts: &[TranscriptSegment],
    scenes: &[TimeSpan],
    duration_s: f64,
    min_frames: usize,
) -> Result<FramePlan, TextualizeError> {
    if !(duration_s.is_finite() && duration_s > 0.0) {
        return Err(TextualizeError::NonPositiveDuration);
    }
    if min_frames == 0 {
        return Err(TextualizeError::ZeroMinFrames);
    }
    let last = duration_s.floor() as u64;
    let aligned: BTreeSet<u64> = transcripts
        .iter()
        .map(|t| &t.span)
        .chain(scenes)
        .map(|span| (span.midpoint().floor().max(0.0) as u64).min(last))
        .collect();

    if aligned.len() >= min_frames {
        return Ok(FramePlan {
            times_s: aligned.into_iter().collect(),
        });
    }
    Ok(FramePlan {
        times_s: uniform_times(last, min_frames),
    })
}

/// `count` evenly spaced integers over `[0, last]`, capped at `last + 1`.
fn uniform_times(last: u64, count: usize) -> Vec<u64> {
    let k = (count as u64).min(last + 1);
    if k <= 1 {
        return vec![0];
    }
    // step is at least 1 because last >= k - 1, so the values are distinct
    (0..k).map(|i| i * last / (k - 1)).collect()
}

fn one_line(text: &str) -> String {
    text.split_whitespace().collect::<Vec<_>>().join(" ")
}

fn secs(t: f64) -> u64 {
    t.floor().max(0.0) as u64
}

/// `"S-E: TEXT"` per segment, times floored to whole seconds.
pub fn render_transcript_lines(transcripts: &[TranscriptSegment]) -> Vec<String> {
    transcripts
        .iter()
        .map(|t| {
            format!(
                "{}-{}: {}",
                secs(t.span.start_s),
                secs(t.span.end_s),
                one_line(&t.text)
            )
        })
        .collect()
}

/// `"T: TEXT"` per caption, time floored to whole seconds.
pub fn render_caption_lines(captions: &[Caption]) -> Vec<String> {
    captions
        .iter()
        .map(|c| format!("{}: {}", secs(c.time_s), one_line(&c.text)))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModalityFlags {
    pub speech: bool,
    pub visual: bool,
}

impl Default for ModalityFlags {
    fn default() -> Self {
        Self {
            speech: true,
            visual: true,
        }
    }
}

/// Textual stand-in for one (video, query) pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TextualizedTask {
    pub title: String,
    pub query: String,
    pub transcript_lines: Vec<String>,
    pub caption_lines: Vec<String>,
    pub duration_s: f64,
    #[serde(default)]
    pub modality_flags: ModalityFlags,
}

pub fn textualize_task(
    video: &VideoRecord,
    query: &str,
    flags: ModalityFlags,
) -> Result<TextualizedTask, TextualizeError> {
    if !flags.speech && !flags.visual {
        return Err(TextualizeError::BothModalitiesDisabled);
    }
    let transcript_lines = if flags.speech {
        render_transcript_lines(&video.transcripts)
    } else {
        Vec::new()
    };
    let caption_lines = if flags.visual {
        render_caption_lines(&video.captions)
    } else {
        Vec::new()
    };
    Ok(TextualizedTask {
        title: one_line(&video.title),
        query: one_line(query),
        transcript_lines,
        caption_lines,
        duration_s: video.duration_s,
        modality_flags: flags,
    })
}
