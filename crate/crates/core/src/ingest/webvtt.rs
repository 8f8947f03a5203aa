//! Minimal WebVTT cue reader.
//!
//! Only cue timings and payload text are kept. Cue settings, identifiers,
//! `NOTE`/`STYLE`/`REGION` blocks and inline tags (`<v Speaker>`, `<c>`,
//! `<00:00:01.000>` ...) are discarded.

use super::IngestError;
use crate::span::{TimeSpan, TranscriptSegment};

/// Parse WebVTT text into raw (unnormalized) segments.
pub fn parse_webvtt(input: &str) -> Result<Vec<TranscriptSegment>, IngestError> {
    let input = input.strip_prefix('\u{feff}').unwrap_or(input);
    if input.trim().is_empty() {
        return Ok(Vec::new());
    }
    let normalized = input.replace("\r\n", "\n").replace('\r', "\n");
    let mut blocks = normalized.split("\n\n").filter(|b| !b.trim().is_empty());

    let header = blocks.next().unwrap_or_default();
    let first = header.lines().next().unwrap_or_default();
    if !(first == "WEBVTT" || first.starts_with("WEBVTT ") || first.starts_with("WEBVTT\t")) {
        return Err(IngestError::SchemaViolation {
            context: "webvtt".into(),
            message: "missing WEBVTT header".into(),
        });
    }

    let mut segments = Vec::new();
    for (block_idx, block) in blocks.enumerate() {
        let mut lines = block.lines().skip_while(|l| l.trim().is_empty()).peekable();
        let Some(&head) = lines.peek() else { continue };
        if head.starts_with("NOTE") || head.starts_with("STYLE") || head.starts_with("REGION") {
            continue;
        }
        // optional cue identifier
        if !head.contains("-->") {
            lines.next();
        }
        let Some(timing) = lines.next() else { continue };
        if !timing.contains("-->") {
            return Err(IngestError::MalformedTimestamp {
                context: format!("webvtt cue {}", block_idx + 1),
                value: timing.to_string(),
            });
        }
        let span = parse_timing_line(timing).ok_or_else(|| IngestError::MalformedTimestamp {
            context: format!("webvtt cue {}", block_idx + 1),
            value: timing.to_string(),
        })?;
        let text = lines
            .map(strip_tags)
            .map(|l| l.trim().to_string())
            .filter(|l| !l.is_empty())
            .collect::<Vec<_>>()
            .join(" ");
        segments.push(TranscriptSegment { span, text });
    }
    Ok(segments)
}

fn parse_timing_line(line: &str) -> Option<TimeSpan> {
    let (start, rest) = line.split_once("-->")?;
    let end = rest.split_whitespace().next()?;
    let start = parse_timestamp(start.trim())?;
    let end = parse_timestamp(end)?;
    TimeSpan::new(start, end).ok()
}

/// `[hh:]mm:ss.ttt` to seconds. A comma is accepted as decimal separator.
pub(crate) fn parse_timestamp(s: &str) -> Option<f64> {
    let parts: Vec<&str> = s.split(':').collect();
    let (hours, minutes, seconds) = match parts.as_slice() {
        [m, sec] => ("0", *m, *sec),
        [h, m, sec] => (*h, *m, *sec),
        _ => return None,
    };
    let all_digits = |x: &str| !x.is_empty() && x.bytes().all(|b| b.is_ascii_digit());
    if !all_digits(hours) || !all_digits(minutes) {
        return None;
    }
    let seconds = seconds.replace(',', ".");
    let (whole, frac) = seconds.split_once('.').unwrap_or((&seconds, ""));
    if !all_digits(whole) || !(frac.is_empty() || all_digits(frac)) {
        return None;
    }
    let h: u64 = hours.parse().ok()?;
    let m: u64 = minutes.parse().ok()?;
    let sec: f64 = seconds.parse().ok()?;
    if m >= 60 || sec >= 60.0 {
        return None;
    }
    let total = h as f64 * 3600.0 + m as f64 * 60.0 + sec;
    total.is_finite().then_some(total)
}

fn strip_tags(line: &str) -> String {
    let mut out = String::with_capacity(line.len());
    let mut in_tag = false;
    for ch in line.chars() {
        match ch {
            '<' => in_tag = true,
            '>' if in_tag => in_tag = false,
            _ if !in_tag => out.push(ch),
            _ => {}
        }
    }
    out.replace("&amp;", "&")
        .replace("&lt;", "<")
        .replace("&gt;", ">")
        .replace("&nbsp;", " ")
}
