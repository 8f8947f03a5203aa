//! Decoding of model replies against the JSON answer template.
//!
//! Every reply maps to either a [`ParsedAnswer`] or a [`Collapse`]; nothing
//! here returns an error or panics.

use std::fmt;

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::span::TimeSpan;

const EXCERPT_CHARS: usize = 200;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum CollapseReason {
    NoJsonFound,
    UnparseableJson,
    MissingAnswerKey,
    NonNumericAnswer,
    WrongArity,
    StartAfterEnd,
    StartBeyondDuration,
    NegativeTimestamp,
}

impl CollapseReason {
    pub const ALL: [CollapseReason; 8] = [
        CollapseReason::NoJsonFound,
        CollapseReason::UnparseableJson,
        CollapseReason::MissingAnswerKey,
        CollapseReason::NonNumericAnswer,
        CollapseReason::WrongArity,
        CollapseReason::StartAfterEnd,
        CollapseReason::StartBeyondDuration,
        CollapseReason::NegativeTimestamp,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            CollapseReason::NoJsonFound => "NoJsonFound",
            CollapseReason::UnparseableJson => "UnparseableJson",
            CollapseReason::MissingAnswerKey => "MissingAnswerKey",
            CollapseReason::NonNumericAnswer => "NonNumericAnswer",
            CollapseReason::WrongArity => "WrongArity",
            CollapseReason::StartAfterEnd => "StartAfterEnd",
            CollapseReason::StartBeyondDuration => "StartBeyondDuration",
            CollapseReason::NegativeTimestamp => "NegativeTimestamp",
        }
    }
}

impl fmt::Display for CollapseReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// A reply that did not yield a usable prediction.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Collapse {
    pub reason: CollapseReason,
    pub raw_excerpt: String,
}

impl Collapse {
    fn new(reason: CollapseReason, raw: &str) -> Self {
        Self {
            reason,
            raw_excerpt: raw.chars().take(EXCERPT_CHARS).collect(),
        }
    }
}

/// The decoded answer template. Narrative fields are empty when the model
/// left them out.
#[derive(Debug, Clone, PartialEq)]
pub struct ParsedAnswer {
    pub summary: String,
    pub comment: String,
    pub query_echo: String,
    pub before: String,
    pub between: String,
    pub after: String,
    pub answer: TimeSpan,
}

impl ParsedAnswer {
    pub fn from_span(answer: TimeSpan) -> Self {
        Self {
            summary: String::new(),
            comment: String::new(),
            query_echo: String::new(),
            before: String::new(),
            between: String::new(),
            after: String::new(),
            answer,
        }
    }

    /// Render back into the template. The partition keys are labeled with the
    /// predicted bounds, e.g. `"before 179"`.
    pub fn to_template_json(&self) -> String {
        let (x, y) = (
            fmt_seconds(self.answer.start_s),
            fmt_seconds(self.answer.end_s),
        );
        let text = |s: &str| Value::String(s.to_string()).to_string();
        let fields = [
            ("summary".to_string(), text(&self.summary)),
            ("comment".to_string(), text(&self.comment)),
            ("query".to_string(), text(&self.query_echo)),
            (format!("before {x}"), text(&self.before)),
            (format!("between {x} and {y}"), text(&self.between)),
            (format!("after {y}"), text(&self.after)),
            ("answer".to_string(), format!("[{x}, {y}]")),
        ];
        let body = fields
            .iter()
            .map(|(k, v)| format!("{}: {v}", text(k)))
            .collect::<Vec<_>>()
            .join(", ");
        format!("{{{body}}}")
    }
}

/// Whole-second values print without a fractional part.
pub(crate) fn fmt_seconds(t: f64) -> String {
    seconds_value(t).to_string()
}

fn seconds_value(t: f64) -> Value {
    if t.fract() == 0.0 && t.abs() < 9.0e15 {
        Value::from(t as i64)
    } else {
        Value::from(t)
    }
}

/// Return the first balanced `{...}` region, scanning left to right and
/// ignoring braces inside JSON strings.
pub fn extract_json_object(text: &str) -> Option<&str> {
    let start = text.find('{')?;
    let mut depth = 0usize;
    let mut in_str = false;
    let mut escaped = false;
    for (offset, ch) in text[start..].char_indices() {
        if in_str {
            if escaped {
                escaped = false;
            } else if ch == '\\' {
                escaped = true;
            } else if ch == '"' {
                in_str = false;
            }
            continue;
        }
        match ch {
            '"' => in_str = true,
            '{' => depth += 1,
            '}' => {
                depth -= 1;
                if depth == 0 {
                    return Some(&text[start..=start + offset]);
                }
            }
            _ => {}
        }
    }
    None
}

fn as_seconds(v: &Value) -> Option<f64> {
    let x = match v {
        Value::Number(n) => n.as_f64()?,
        Value::String(s) => s.trim().parse::<f64>().ok()?,
        _ => return None,
    };
    x.is_finite().then_some(x)
}

fn string_field(obj: &Map<String, Value>, pick: impl Fn(&str) -> bool) -> String {
    obj.iter()
        .find(|(k, _)| pick(k.trim()))
        .map(|(_, v)| match v {
            Value::String(s) => s.clone(),
            other => other.to_string(),
        })
        .unwrap_or_default()
}

/// Decode a model reply for a video of length `duration_s`.
///
/// Only `"answer"` is load-bearing: it must be a two-element array of
/// numbers (numeric strings are accepted). An end past the video is clamped
/// to the duration; a start at or past it, a start after the end, or any
/// negative value is a collapse. With `cot_enabled` the narrative keys are
/// captured when present; their absence is not a collapse.
pub fn parse_answer(
    text: &str,
    duration_s: f64,
    cot_enabled: bool,
) -> Result<ParsedAnswer, Collapse> {
    use CollapseReason::*;

    let Some(object_text) = extract_json_object(text) else {
        return Err(Collapse::new(NoJsonFound, text));
    };
    let obj: Map<String, Value> = match serde_json::from_str(object_text) {
        Ok(m) => m,
        Err(_) => return Err(Collapse::new(UnparseableJson, text)),
    };
    let Some(answer) = obj.get("answer") else {
        return Err(Collapse::new(MissingAnswerKey, text));
    };
    let pair = match answer {
        Value::Array(items) if items.len() == 2 => items,
        _ => return Err(Collapse::new(WrongArity, text)),
    };
    let (Some(start), Some(end)) = (as_seconds(&pair[0]), as_seconds(&pair[1])) else {
        return Err(Collapse::new(NonNumericAnswer, text));
    };
    if start < 0.0 || end < 0.0 {
        return Err(Collapse::new(NegativeTimestamp, text));
    }
    if start > end {
        return Err(Collapse::new(StartAfterEnd, text));
    }
    if start >= duration_s {
        return Err(Collapse::new(StartBeyondDuration, text));
    }
    let answer = TimeSpan::new(start, end.min(duration_s))
        .map_err(|_| Collapse::new(NonNumericAnswer, text))?;

    let mut parsed = ParsedAnswer::from_span(answer);
    if cot_enabled {
        parsed.summary = string_field(&obj, |k| k == "summary");
        parsed.comment = string_field(&obj, |k| k == "comment");
        parsed.query_echo = string_field(&obj, |k| k == "query");
        parsed.before = string_field(&obj, |k| k.starts_with("before"));
        parsed.between = string_field(&obj, |k| k.starts_with("between"));
        parsed.after = string_field(&obj, |k| k.starts_with("after"));
    }
    Ok(parsed)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    const EXAMPLE: &str = r#"{"summary": "The video discusses...", "comment": "These captions describe a scene where people talk in a show, but provide limited information to understand the video.", "query": "Habit 2: Build other people up", "before 179": "Talk about...", "between 179 and 329": "Talk about...", "after 329": "Talk about...", "answer": [179, 329]}"#;

    fn reason(text: &str, duration: f64) -> CollapseReason {
        parse_answer(text, duration, true).unwrap_err().reason
    }

    #[test]
    fn extract_examples() {
        assert_eq!(
            extract_json_object(r#"Sure! {"answer": [179, 329]} hope that helps"#),
            Some(r#"{"answer": [179, 329]}"#)
        );
        assert_eq!(extract_json_object("no braces here"), None);
        assert_eq!(
            extract_json_object(r#"{"a": {"b": 1}}"#),
            Some(r#"{"a": {"b": 1}}"#)
        );
        assert_eq!(
            extract_json_object(r#"x {"a": "}{\"}"} y"#),
            Some(r#"{"a": "}{\"}"}"#)
        );
        assert_eq!(extract_json_object("{ unterminated"), None);
    }

    #[test]
    fn parses_worked_example() {
        let p = parse_answer(EXAMPLE, 840.0, true).unwrap();
        assert_eq!(p.answer, TimeSpan::new(179.0, 329.0).unwrap());
        assert_eq!(p.query_echo, "Habit 2: Build other people up");
        assert_eq!(p.before, "Talk about...");
        assert!(p.comment.starts_with("These captions"));
    }

    #[test]
    fn no_cot_ignores_narrative() {
        let p = parse_answer(EXAMPLE, 840.0, false).unwrap();
        assert_eq!(p.summary, "");
        assert_eq!(p.answer.end_s, 329.0);
    }

    #[test]
    fn clamps_end_overshoot() {
        let p = parse_answer(r#"{"answer": [100, 9000]}"#, 840.0, true).unwrap();
        assert_eq!(p.answer, TimeSpan::new(100.0, 840.0).unwrap());
    }

    #[test]
    fn coerces_numeric_strings() {
        let p = parse_answer(r#"{"answer": ["179", " 329.5 "]}"#, 840.0, true).unwrap();
        assert_eq!(p.answer, TimeSpan::new(179.0, 329.5).unwrap());
    }

    #[test]
    fn every_collapse_reason_reachable() {
        use CollapseReason::*;
        let cases = [
            ("The answer cannot be determined.", NoJsonFound),
            ("{answer: [1, 2]}", UnparseableJson),
            (r#"{"summary": "x"}"#, MissingAnswerKey),
            (r#"{"answer": ["start", "end"]}"#, NonNumericAnswer),
            (r#"{"answer": [1, 2, 3]}"#, WrongArity),
            (r#"{"answer": [329, 179]}"#, StartAfterEnd),
            (r#"{"answer": [900, 950]}"#, StartBeyondDuration),
            (r#"{"answer": [-5, 10]}"#, NegativeTimestamp),
        ];
        for (input, expected) in cases {
            assert_eq!(reason(input, 840.0), expected, "{input}");
        }
        let covered: std::collections::HashSet<_> = cases.iter().map(|c| c.1).collect();
        assert_eq!(covered.len(), CollapseReason::ALL.len());
    }

    #[test]
    fn more_collapse_edges() {
        use CollapseReason::*;
        assert_eq!(reason(r#"{"answer": "179-329"}"#, 840.0), WrongArity);
        assert_eq!(reason(r#"{"answer": [1]}"#, 840.0), WrongArity);
        assert_eq!(reason(r#"{"answer": [null, 3]}"#, 840.0), NonNumericAnswer);
        assert_eq!(reason(r#"{"answer": ["NaN", 3]}"#, 840.0), NonNumericAnswer);
        assert_eq!(
            reason(r#"{"answer": [840, 840]}"#, 840.0),
            StartBeyondDuration
        );
        assert_eq!(reason("[179, 329]", 840.0), NoJsonFound);
        let c = parse_answer(&"x".repeat(1000), 10.0, true).unwrap_err();
        assert_eq!(c.raw_excerpt.len(), EXCERPT_CHARS);
    }

    #[test]
    fn template_render_shape() {
        let p = parse_answer(EXAMPLE, 840.0, true).unwrap();
        assert_eq!(p.to_template_json(), EXAMPLE);
    }

    proptest! {
        #[test]
        fn total_on_arbitrary_text(s in ".*", d in 0.5f64..5000.0) {
            if let Ok(p) = parse_answer(&s, d, true) {
                prop_assert!(p.answer.is_valid());
                prop_assert!(p.answer.end_s <= d);
            }
        }

        #[test]
        fn clamping_is_idempotent(a in 0.0f64..2000.0, len in 0.0f64..2000.0, d in 1.0f64..1500.0, summary in "[ -~]{0,30}") {
            let text = format!(r#"{{"summary": {}, "answer": [{}, {}]}}"#, Value::String(summary), a, a + len);
            if let Ok(first) = parse_answer(&text, d, true) {
                let again = parse_answer(&first.to_template_json(), d, true).unwrap();
                prop_assert_eq!(again, first);
            }
        }
    }
}
