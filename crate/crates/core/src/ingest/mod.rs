//! Loading videos, transcripts, captions, scenes and query sets from disk,
//! plus construction of a chapter-based benchmark.

mod benchmark;
mod manifest;
mod webvtt;

use std::path::{Path, PathBuf};

use serde::Deserialize;
use thiserror::Error;

use crate::span::{Caption, TimeSpan, TranscriptSegment};

pub use benchmark::{
    build_benchmark, parse_chapters_json, BenchmarkOptions, ChapterAnnotation, ChapterVideo,
    DEFAULT_DURATION_RANGE_S,
};
pub use manifest::{
    load_manifest, manifest_for, resolve_sidecar, write_dataset, Dataset, ManifestDoc,
    ManifestQuery, ManifestVideo,
};
pub use webvtt::parse_webvtt;

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("missing file {0}")]
    MissingFile(PathBuf),
    #[error("failed to read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("schema violation in {context}: {message}")]
    SchemaViolation { context: String, message: String },
    #[error("query references unknown video id {0:?}")]
    DanglingVideoId(String),
    #[error("duplicate video id {0:?}")]
    DuplicateVideoId(String),
    #[error("{context}: timestamp {value} outside [0, {duration_s}]")]
    OutOfRangeTimestamp {
        context: String,
        value: f64,
        duration_s: f64,
    },
    #[error("{context}: malformed timestamp {value:?}")]
    MalformedTimestamp { context: String, value: String },
    #[error("transcript segment {index} is fully contained in the previous segment")]
    UnsortableOverlap { index: usize },
    #[error("scene {index} starts before the previous scene ends")]
    UnorderedScenes { index: usize },
    #[error("chapters of video {0:?} are not sorted by start time")]
    UnsortedChapters(String),
    #[error("no videos in duration range")]
    EmptySelection,
}

pub(crate) fn read_file(path: &Path) -> Result<String, IngestError> {
    std::fs::read_to_string(path).map_err(|source| {
        if source.kind() == std::io::ErrorKind::NotFound {
            IngestError::MissingFile(path.to_path_buf())
        } else {
            IngestError::Io {
                path: path.to_path_buf(),
                source,
            }
        }
    })
}

/// Parse a JSON document; whitespace-only input yields `T::default()`.
fn parse_json_or_empty<T>(input: &str, context: &str) -> Result<T, IngestError>
where
    T: for<'de> Deserialize<'de> + Default,
{
    if input.trim().is_empty() {
        return Ok(T::default());
    }
    serde_json::from_str(input).map_err(|e| IngestError::SchemaViolation {
        context: context.to_string(),
        message: e.to_string(),
    })
}

fn checked_span(start_s: f64, end_s: f64, context: String) -> Result<TimeSpan, IngestError> {
    TimeSpan::new(start_s, end_s).map_err(|_| IngestError::MalformedTimestamp {
        context,
        value: format!("[{start_s}, {end_s}]"),
    })
}

#[derive(Deserialize)]
struct RawSegment {
    start_s: f64,
    end_s: f64,
    text: String,
}

/// Parse the native JSON transcript schema and normalize it.
pub fn parse_transcript_json(input: &str) -> Result<Vec<TranscriptSegment>, IngestError> {
    let raw: Vec<RawSegment> = parse_json_or_empty(input, "transcript")?;
    let segments = raw
        .into_iter()
        .enumerate()
        .map(|(i, r)| {
            Ok(TranscriptSegment {
                span: checked_span(r.start_s, r.end_s, format!("transcript[{i}]"))?,
                text: r.text,
            })
        })
        .collect::<Result<Vec<_>, IngestError>>()?;
    normalize_transcript(segments)
}

/// Sort by start, drop empty text, and clip overlaps so that each segment
/// starts where the previous one ends.
pub fn normalize_transcript(
    mut segments: Vec<TranscriptSegment>,
) -> Result<Vec<TranscriptSegment>, IngestError> {
    segments.retain(|s| !s.text.trim().is_empty());
    for s in &mut segments {
        s.text = s.text.trim().to_string();
    }
    segments.sort_by(|a, b| {
        a.span
            .start_s
            .total_cmp(&b.span.start_s)
            .then(a.span.end_s.total_cmp(&b.span.end_s))
    });
    let mut prev_end: Option<f64> = None;
    for (index, seg) in segments.iter_mut().enumerate() {
        if let Some(prev_end) = prev_end {
            if seg.span.start_s < prev_end {
                if seg.span.end_s <= prev_end {
                    return Err(IngestError::UnsortableOverlap { index });
                }
                seg.span.start_s = prev_end;
            }
        }
        prev_end = Some(seg.span.end_s);
    }
    Ok(segments)
}

/// Load a transcript, choosing WebVTT for `.vtt` files and JSON otherwise.
pub fn load_transcript(path: &Path) -> Result<Vec<TranscriptSegment>, IngestError> {
    let text = read_file(path)?;
    let is_vtt = path
        .extension()
        .and_then(|e| e.to_str())
        .is_some_and(|e| e.eq_ignore_ascii_case("vtt"));
    if is_vtt {
        normalize_transcript(parse_webvtt(&text)?)
    } else {
        parse_transcript_json(&text)
    }
}

#[derive(Deserialize)]
struct RawCaption {
    time_s: f64,
    text: String,
}

/// Parse the JSON caption schema. Captions are sorted by time and, of
/// several captions falling in the same integer second, only the first is kept.
pub fn parse_captions_json(input: &str) -> Result<Vec<Caption>, IngestError> {
    let raw: Vec<RawCaption> = parse_json_or_empty(input, "captions")?;
    let mut captions = Vec::with_capacity(raw.len());
    for (i, r) in raw.into_iter().enumerate() {
        if !r.time_s.is_finite() || r.time_s < 0.0 {
            return Err(IngestError::MalformedTimestamp {
                context: format!("captions[{i}]"),
                value: r.time_s.to_string(),
            });
        }
        captions.push(Caption {
            time_s: r.time_s,
            text: r.text.trim().to_string(),
        });
    }
    captions.sort_by(|a, b| a.time_s.total_cmp(&b.time_s));
    captions.dedup_by(|later, first| later.time_s.floor() == first.time_s.floor());
    Ok(captions)
}

pub fn load_captions(path: &Path) -> Result<Vec<Caption>, IngestError> {
    parse_captions_json(&read_file(path)?)
}

#[derive(Deserialize)]
struct RawScene {
    start_s: f64,
    end_s: f64,
}

/// Parse the JSON scene schema. Scenes must already be ordered and must not
/// overlap; gaps are allowed.
pub fn parse_scenes_json(input: &str) -> Result<Vec<TimeSpan>, IngestError> {
    let raw: Vec<RawScene> = parse_json_or_empty(input, "scenes")?;
    let mut scenes: Vec<TimeSpan> = Vec::with_capacity(raw.len());
    for (index, r) in raw.into_iter().enumerate() {
        let span = checked_span(r.start_s, r.end_s, format!("scenes[{index}]"))?;
        if let Some(prev) = scenes.last() {
            if span.start_s < prev.end_s {
                return Err(IngestError::UnorderedScenes { index });
            }
        }
        scenes.push(span);
    }
    Ok(scenes)
}

pub fn load_scenes(path: &Path) -> Result<Vec<TimeSpan>, IngestError> {
    parse_scenes_json(&read_file(path)?)
}
