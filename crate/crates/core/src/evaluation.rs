//! Recall at IoU thresholds, recall at start-time distances, mean IoU and
//! collapse rate over a set of predictions.
//!
//! A collapsed prediction scores IoU 0 and an infinite start distance, so it
//! counts against every recall and pulls mIoU down.

use std::io::{BufRead, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::parsing::{Collapse, ParsedAnswer};
use crate::span::{iou, start_distance, TimeSpan};

pub const IOU_THRESHOLDS: [f64; 4] = [0.3, 0.5, 0.7, 0.9];
pub const SEC_THRESHOLDS: [f64; 4] = [1.0, 3.0, 5.0, 10.0];

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("{records} records but {gts} ground truths")]
    LengthMismatch { records: usize, gts: usize },
    #[error("nothing to evaluate")]
    EmptyInput,
    #[error("I/O error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("line {line}: {message}")]
    Malformed { line: usize, message: String },
}

#[derive(Debug, Clone, PartialEq)]
pub enum Outcome {
    Answer(TimeSpan),
    Collapsed { reason: String },
}

impl Outcome {
    pub fn is_collapsed(&self) -> bool {
        matches!(self, Outcome::Collapsed { .. })
    }
}

impl From<Result<ParsedAnswer, Collapse>> for Outcome {
    fn from(r: Result<ParsedAnswer, Collapse>) -> Self {
        match r {
            Ok(p) => Outcome::Answer(p.answer),
            Err(c) => Outcome::Collapsed {
                reason: c.reason.to_string(),
            },
        }
    }
}

/// One prediction, also one line of the predictions log.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictionRecord {
    pub video_id: String,
    pub query: String,
    pub outcome: Outcome,
    pub raw_response: Option<String>,
    pub prompt_tokens_est: Option<usize>,
}

impl PredictionRecord {
    pub fn new(video_id: impl Into<String>, query: impl Into<String>, outcome: Outcome) -> Self {
        Self {
            video_id: video_id.into(),
            query: query.into(),
            outcome,
            raw_response: None,
            prompt_tokens_est: None,
        }
    }

    pub fn to_json_line(&self) -> String {
        serde_json::to_string(&LogLine::from(self)).expect("plain data serializes")
    }

    pub fn from_json_line(line: &str) -> Result<Self, String> {
        let raw: LogLine = serde_json::from_str(line).map_err(|e| e.to_string())?;
        raw.try_into()
    }
}

#[derive(Serialize, Deserialize)]
struct LogLine {
    video_id: String,
    query: String,
    answer: Option<[f64; 2]>,
    collapsed: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    collapse_reason: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    raw_response: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    prompt_tokens_est: Option<usize>,
}

impl From<&PredictionRecord> for LogLine {
    fn from(r: &PredictionRecord) -> Self {
        let (answer, collapsed, collapse_reason) = match &r.outcome {
            Outcome::Answer(s) => (Some([s.start_s, s.end_s]), false, None),
            Outcome::Collapsed { reason } => (None, true, Some(reason.clone())),
        };
        LogLine {
            video_id: r.video_id.clone(),
            query: r.query.clone(),
            answer,
            collapsed,
            collapse_reason,
            raw_response: r.raw_response.clone(),
            prompt_tokens_est: r.prompt_tokens_est,
        }
    }
}

impl TryFrom<LogLine> for PredictionRecord {
    type Error = String;

    fn try_from(l: LogLine) -> Result<Self, String> {
        let outcome = match (l.collapsed, l.answer) {
            (true, _) => Outcome::Collapsed {
                reason: l.collapse_reason.unwrap_or_else(|| "Unspecified".into()),
            },
            (false, Some([s, e])) => {
                Outcome::Answer(TimeSpan::new(s, e).map_err(|e| e.to_string())?)
            }
            (false, None) => return Err("answer is null but collapsed is false".into()),
        };
        Ok(PredictionRecord {
            video_id: l.video_id,
            query: l.query,
            outcome,
            raw_response: l.raw_response,
            prompt_tokens_est: l.prompt_tokens_est,
        })
    }
}

/// Read a JSON Lines predictions log. Blank lines are skipped.
pub fn read_predictions(path: &Path) -> Result<Vec<PredictionRecord>, EvalError> {
    let file = std::fs::File::open(path).map_err(|source| EvalError::Io {
        path: path.display().to_string(),
        source,
    })?;
    let mut out = Vec::new();
    for (i, line) in std::io::BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|source| EvalError::Io {
            path: path.display().to_string(),
            source,
        })?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(PredictionRecord::from_json_line(&line).map_err(|message| {
            EvalError::Malformed {
                line: i + 1,
                message,
            }
        })?);
    }
    Ok(out)
}

pub fn write_predictions(path: &Path, records: &[PredictionRecord]) -> Result<(), EvalError> {
    let io = |source| EvalError::Io {
        path: path.display().to_string(),
        source,
    };
    let mut f = std::io::BufWriter::new(std::fs::File::create(path).map_err(io)?);
    for r in records {
        writeln!(f, "{}", r.to_json_line()).map_err(io)?;
    }
    f.flush().map_err(io)
}

/// Aggregate metrics, all in percent.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricsReport {
    pub n: usize,
    /// (threshold m, r@m) in increasing m.
    pub r_at_iou: Vec<(f64, f64)>,
    pub miou: f64,
    /// (threshold n seconds, r@ns) in increasing n.
    pub r_at_sec: Vec<(f64, f64)>,
    pub cr: f64,
}

impl MetricsReport {
    pub fn r_at_iou(&self, m: f64) -> Option<f64> {
        self.r_at_iou.iter().find(|(t, _)| *t == m).map(|(_, v)| *v)
    }

    pub fn r_at_sec(&self, n: f64) -> Option<f64> {
        self.r_at_sec.iter().find(|(t, _)| *t == n).map(|(_, v)| *v)
    }

    /// Every metric rounded to two decimals.
    pub fn rounded(&self) -> Self {
        let r = |x: f64| (x * 100.0).round() / 100.0;
        Self {
            n: self.n,
            r_at_iou: self.r_at_iou.iter().map(|&(t, v)| (t, r(v))).collect(),
            miou: r(self.miou),
            r_at_sec: self.r_at_sec.iter().map(|&(t, v)| (t, r(v))).collect(),
            cr: r(self.cr),
        }
    }

    /// Canonical JSON with fixed key order and two-decimal percentages.
    pub fn to_canonical_json(&self) -> String {
        let r = self.rounded();
        let num = |x: f64| serde_json::Value::from(x).to_string();
        let map = |pairs: &[(f64, f64)]| {
            let body = pairs
                .iter()
                .map(|(t, v)| format!("\"{}\": {}", t, num(*v)))
                .collect::<Vec<_>>()
                .join(", ");
            format!("{{{body}}}")
        };
        format!(
            "{{\n  \"n\": {},\n  \"r_at_iou\": {},\n  \"miou\": {},\n  \"r_at_sec\": {},\n  \"cr\": {}\n}}\n",
            r.n,
            map(&r.r_at_iou),
            num(r.miou),
            map(&r.r_at_sec),
            num(r.cr)
        )
    }

    pub fn from_json_str(input: &str) -> Result<Self, String> {
        #[derive(Deserialize)]
        struct Raw {
            n: usize,
            r_at_iou: std::collections::HashMap<String, f64>,
            miou: f64,
            r_at_sec: std::collections::HashMap<String, f64>,
            cr: f64,
        }
        let raw: Raw = serde_json::from_str(input).map_err(|e| e.to_string())?;
        let pairs = |m: std::collections::HashMap<String, f64>| -> Result<Vec<(f64, f64)>, String> {
            let mut v = m
                .into_iter()
                .map(|(k, x)| {
                    k.parse::<f64>()
                        .map(|t| (t, x))
                        .map_err(|_| format!("bad threshold key {k:?}"))
                })
                .collect::<Result<Vec<_>, _>>()?;
            v.sort_by(|a, b| a.0.total_cmp(&b.0));
            Ok(v)
        };
        Ok(Self {
            n: raw.n,
            r_at_iou: pairs(raw.r_at_iou)?,
            miou: raw.miou,
            r_at_sec: pairs(raw.r_at_sec)?,
            cr: raw.cr,
        })
    }
}

/// Per-record IoU and start distance under collapse semantics.
pub fn record_scores(outcome: &Outcome, gt: &TimeSpan) -> (f64, f64) {
    match outcome {
        Outcome::Answer(pred) => (iou(pred, gt), start_distance(pred, gt)),
        Outcome::Collapsed { .. } => (0.0, f64::INFINITY),
    }
}

/// Compute the metric suite. `r@m` counts IoU strictly above `m`; `r@ns`
/// counts start distances at most `n`.
pub fn evaluate(
    records: &[PredictionRecord],
    gts: &[TimeSpan],
    iou_thresholds: &[f64],
    sec_thresholds: &[f64],
) -> Result<MetricsReport, EvalError> {
    if records.len() != gts.len() {
        return Err(EvalError::LengthMismatch {
            records: records.len(),
            gts: gts.len(),
        });
    }
    if records.is_empty() {
        return Err(EvalError::EmptyInput);
    }
    let n = records.len();
    let mut ious = Vec::with_capacity(n);
    let mut dists = Vec::with_capacity(n);
    let mut collapses = 0usize;
    for (r, gt) in records.iter().zip(gts) {
        let (i, d) = record_scores(&r.outcome, gt);
        ious.push(i);
        dists.push(d);
        collapses += usize::from(r.outcome.is_collapsed());
    }
    // summing in sorted order keeps the mean independent of record order
    ious.sort_by(f64::total_cmp);

    let pct = |count: usize| 100.0 * count as f64 / n as f64;
    let mut iou_t = iou_thresholds.to_vec();
    iou_t.sort_by(f64::total_cmp);
    let mut sec_t = sec_thresholds.to_vec();
    sec_t.sort_by(f64::total_cmp);

    Ok(MetricsReport {
        n,
        r_at_iou: iou_t
            .iter()
            .map(|&m| (m, pct(ious.iter().filter(|&&x| x > m).count())))
            .collect(),
        miou: 100.0 * ious.iter().sum::<f64>() / n as f64,
        r_at_sec: sec_t
            .iter()
            .map(|&s| (s, pct(dists.iter().filter(|&&d| d <= s).count())))
            .collect(),
        cr: pct(collapses),
    })
}

/// [`evaluate`] with the standard thresholds.
pub fn evaluate_default(
    records: &[PredictionRecord],
    gts: &[TimeSpan],
) -> Result<MetricsReport, EvalError> {
    evaluate(records, gts, &IOU_THRESHOLDS, &SEC_THRESHOLDS)
}

/// Arithmetic mean of each metric across reports sharing the same thresholds.
pub fn mean_report(reports: &[MetricsReport]) -> Result<MetricsReport, EvalError> {
    let first = reports.first().ok_or(EvalError::EmptyInput)?;
    let k = reports.len() as f64;
    let mean_pairs = |get: fn(&MetricsReport) -> &Vec<(f64, f64)>| {
        get(first)
            .iter()
            .enumerate()
            .map(|(i, &(t, _))| (t, reports.iter().map(|r| get(r)[i].1).sum::<f64>() / k))
            .collect()
    };
    Ok(MetricsReport {
        n: first.n,
        r_at_iou: mean_pairs(|r| &r.r_at_iou),
        miou: reports.iter().map(|r| r.miou).sum::<f64>() / k,
        r_at_sec: mean_pairs(|r| &r.r_at_sec),
        cr: reports.iter().map(|r| r.cr).sum::<f64>() / k,
    })
}

pub fn write_report(report: &MetricsReport, path: &Path) -> Result<(), EvalError> {
    std::fs::write(path, report.to_canonical_json()).map_err(|source| EvalError::Io {
        path: path.display().to_string(),
        source,
    })
}

pub fn read_report(path: &Path) -> Result<MetricsReport, EvalError> {
    let text = std::fs::read_to_string(path).map_err(|source| EvalError::Io {
        path: path.display().to_string(),
        source,
    })?;
    MetricsReport::from_json_str(&text).map_err(|message| EvalError::Malformed { line: 0, message })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn span(s: f64, e: f64) -> TimeSpan {
        TimeSpan::new(s, e).unwrap()
    }

    fn answer(s: f64, e: f64) -> PredictionRecord {
        PredictionRecord::new("v", "q", Outcome::Answer(span(s, e)))
    }

    fn collapsed() -> PredictionRecord {
        PredictionRecord::new(
            "v",
            "q",
            Outcome::Collapsed {
                reason: "NoJsonFound".into(),
            },
        )
    }

    #[test]
    fn perfect_single() {
        let r = evaluate_default(&[answer(179.0, 329.0)], &[span(179.0, 329.0)]).unwrap();
        assert_eq!(r.r_at_iou(0.9), Some(100.0));
        assert_eq!(r.miou, 100.0);
        assert_eq!(r.r_at_sec(1.0), Some(100.0));
        assert_eq!(r.cr, 0.0);
    }

    #[test]
    fn one_collapse_one_exact() {
        let gt = span(10.0, 20.0);
        let r = evaluate_default(&[collapsed(), answer(10.0, 20.0)], &[gt, gt]).unwrap();
        assert_eq!(r.miou, 50.0);
        assert_eq!(r.cr, 50.0);
        assert_eq!(r.r_at_sec(1.0), Some(50.0));
        assert_eq!(r.r_at_sec(10.0), Some(50.0));
    }

    #[test]
    fn four_iou_levels() {
        // gt [0,100]; predictions [0,x] have IoU x/100
        let gt = span(0.0, 100.0);
        let recs = [
            answer(0.0, 95.0),
            answer(0.0, 60.0),
            answer(0.0, 40.0),
            answer(0.0, 10.0),
        ];
        let r = evaluate_default(&recs, &[gt; 4]).unwrap();
        assert_eq!(r.r_at_iou(0.3), Some(75.0));
        assert_eq!(r.r_at_iou(0.5), Some(50.0));
        assert_eq!(r.r_at_iou(0.7), Some(25.0));
        assert_eq!(r.r_at_iou(0.9), Some(25.0));
        assert!((r.miou - 51.25).abs() < 1e-12);
    }

    #[test]
    fn threshold_boundaries() {
        // IoU exactly 0.5 is not "larger than" 0.5; distance exactly 3 is "within" 3
        let gt = span(0.0, 10.0);
        let r = evaluate_default(&[answer(0.0, 5.0)], &[gt]).unwrap();
        assert_eq!(r.r_at_iou(0.3), Some(100.0));
        assert_eq!(r.r_at_iou(0.5), Some(0.0));
        let r = evaluate_default(&[answer(3.0, 10.0)], &[gt]).unwrap();
        assert_eq!(r.r_at_sec(1.0), Some(0.0));
        assert_eq!(r.r_at_sec(3.0), Some(100.0));
    }

    #[test]
    fn errors() {
        assert!(matches!(
            evaluate_default(&[answer(0.0, 1.0)], &[]),
            Err(EvalError::LengthMismatch { records: 1, gts: 0 })
        ));
        assert!(matches!(
            evaluate_default(&[], &[]),
            Err(EvalError::EmptyInput)
        ));
    }

    #[test]
    fn report_file_format_and_round_trip() {
        let gt = span(0.0, 3.0);
        let r =
            evaluate_default(&[answer(0.0, 1.0), answer(0.0, 3.0), collapsed()], &[gt; 3]).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("metrics.json");
        write_report(&r, &p).unwrap();
        let text = std::fs::read_to_string(&p).unwrap();
        assert!(text.contains(r#""r_at_iou": {"0.3": "#), "{text}");
        assert!(text.contains(r#""r_at_sec": {"1": "#), "{text}");
        assert!(text.contains(r#""cr": 33.33"#), "{text}");
        assert_eq!(read_report(&p).unwrap(), r.rounded());
    }

    #[test]
    fn write_report_to_bad_path() {
        let r = evaluate_default(&[answer(0.0, 1.0)], &[span(0.0, 1.0)]).unwrap();
        assert!(matches!(
            write_report(&r, Path::new("/nonexistent-dir/for/sure/metrics.json")),
            Err(EvalError::Io { .. })
        ));
    }

    #[test]
    fn log_line_round_trip_and_schema() {
        let mut rec = answer(1.5, 7.0);
        rec.raw_response = Some("{\"answer\": [1.5, 7]}".into());
        let line = rec.to_json_line();
        assert!(line.contains(r#""answer":[1.5,7.0]"#));
        assert!(line.contains(r#""collapsed":false"#));
        assert_eq!(PredictionRecord::from_json_line(&line).unwrap(), rec);

        let c = collapsed();
        let line = c.to_json_line();
        assert!(line.contains(r#""answer":null"#));
        assert!(line.contains(r#""collapse_reason":"NoJsonFound""#));
        assert_eq!(PredictionRecord::from_json_line(&line).unwrap(), c);

        assert!(PredictionRecord::from_json_line(
            r#"{"video_id":"v","query":"q","answer":null,"collapsed":false}"#
        )
        .is_err());
        assert!(PredictionRecord::from_json_line(
            r#"{"video_id":"v","query":"q","answer":[5,1],"collapsed":false}"#
        )
        .is_err());
    }

    #[test]
    fn mean_of_reports() {
        let gt = span(0.0, 10.0);
        let a = evaluate_default(&[answer(0.0, 10.0)], &[gt]).unwrap();
        let b = evaluate_default(&[collapsed()], &[gt]).unwrap();
        let m = mean_report(&[a.clone(), b]).unwrap();
        assert_eq!(m.miou, 50.0);
        assert_eq!(m.cr, 50.0);
        assert_eq!(mean_report(std::slice::from_ref(&a)).unwrap(), a);
    }

    fn arb_record() -> impl Strategy<Value = (PredictionRecord, TimeSpan)> {
        (
            0.0f64..500.0,
            0.0f64..300.0,
            0.0f64..500.0,
            0.0f64..300.0,
            prop::bool::weighted(0.2),
        )
            .prop_map(|(ps, pl, gs, gl, c)| {
                let rec = if c { collapsed() } else { answer(ps, ps + pl) };
                (rec, span(gs, gs + gl))
            })
    }

    proptest! {
        #[test]
        fn report_invariants(pairs in proptest::collection::vec(arb_record(), 1..60), seed in any::<u64>()) {
            let (recs, gts): (Vec<_>, Vec<_>) = pairs.into_iter().unzip();
            let r = evaluate_default(&recs, &gts).unwrap();
            for w in r.r_at_iou.windows(2) { prop_assert!(w[0].1 >= w[1].1); }
            for w in r.r_at_sec.windows(2) { prop_assert!(w[0].1 <= w[1].1); }
            let all = r.r_at_iou.iter().chain(&r.r_at_sec).map(|p| p.1).chain([r.miou, r.cr]);
            for v in all { prop_assert!((0.0..=100.0).contains(&v)); }
            let k = recs.iter().filter(|x| x.outcome.is_collapsed()).count();
            prop_assert_eq!(r.cr, 100.0 * k as f64 / recs.len() as f64);
            prop_assert!(r.miou <= 100.0 - r.cr + 1e-9);

            // permutation invariance
            let mut idx: Vec<usize> = (0..recs.len()).collect();
            let mut s = seed;
            for i in (1..idx.len()).rev() {
                s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
                idx.swap(i, (s >> 33) as usize % (i + 1));
            }
            let precs: Vec<_> = idx.iter().map(|&i| recs[i].clone()).collect();
            let pgts: Vec<_> = idx.iter().map(|&i| gts[i]).collect();
            prop_assert_eq!(evaluate_default(&precs, &pgts).unwrap(), r);
        }
    }
}
