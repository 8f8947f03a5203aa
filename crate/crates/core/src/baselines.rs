//! Rule-based comparison methods: a random pair, the whole video, and the
//! similarity-threshold rule used for zero-shot embedding baselines.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::evaluation::{
    evaluate_default, mean_report, EvalError, MetricsReport, Outcome, PredictionRecord,
};
use crate::ingest::Dataset;
use crate::span::TimeSpan;

pub const DEFAULT_EPSILON: f64 = 0.05;
pub const DEFAULT_REPETITIONS: usize = 10;

#[derive(Debug, Error)]
pub enum BaselineError {
    #[error("score series is empty")]
    EmptySeries,
    #[error("invalid score series: {0}")]
    InvalidSeries(String),
    #[error("duration must be positive")]
    NonPositiveDuration,
    #[error("epsilon must be positive")]
    NonPositiveEpsilon,
    #[error("at least one repetition is required")]
    ZeroRepetitions,
    #[error("query {0} has no ground truth")]
    MissingGroundTruth(usize),
    #[error(transparent)]
    Eval(#[from] EvalError),
}

fn check_duration(duration_s: f64) -> Result<(), BaselineError> {
    if duration_s.is_finite() && duration_s > 0.0 {
        Ok(())
    } else {
        Err(BaselineError::NonPositiveDuration)
    }
}

/// SplitMix64 finalizer, used to derive independent stream seeds.
fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seed for query `index` within repetition `repetition`.
pub fn derive_seed(master: u64, repetition: u64, index: u64) -> u64 {
    mix(mix(mix(master) ^ repetition) ^ index)
}

/// Two independent uniform draws on `[0, duration_s]`, sorted. Exact ties
/// are redrawn so that start < end.
pub fn random_baseline(duration_s: f64, rng_seed: u64) -> Result<TimeSpan, BaselineError> {
    check_duration(duration_s)?;
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    loop {
        let a: f64 = rng.gen_range(0.0..=duration_s);
        let b: f64 = rng.gen_range(0.0..=duration_s);
        if a != b {
            return Ok(TimeSpan::new(a.min(b), a.max(b)).expect("ordered and in range"));
        }
    }
}

fn ground_truths(dataset: &Dataset) -> Result<Vec<TimeSpan>, BaselineError> {
    dataset
        .queries
        .iter()
        .enumerate()
        .map(|(i, q)| q.ground_truth.ok_or(BaselineError::MissingGroundTruth(i)))
        .collect()
}

fn duration_of(dataset: &Dataset, video_id: &str) -> f64 {
    dataset.videos[video_id].duration_s
}

/// Random predictions for every query in one repetition.
pub fn random_predictions(
    dataset: &Dataset,
    seed: u64,
    repetition: usize,
) -> Result<Vec<PredictionRecord>, BaselineError> {
    dataset
        .queries
        .iter()
        .enumerate()
        .map(|(i, q)| {
            let s = derive_seed(seed, repetition as u64, i as u64);
            let span = random_baseline(duration_of(dataset, &q.video_id), s)?;
            Ok(PredictionRecord::new(
                &q.video_id,
                &q.query,
                Outcome::Answer(span),
            ))
        })
        .collect()
}

/// One report per repetition.
pub fn random_baseline_reports(
    dataset: &Dataset,
    repetitions: usize,
    seed: u64,
) -> Result<Vec<MetricsReport>, BaselineError> {
    if repetitions == 0 {
        return Err(BaselineError::ZeroRepetitions);
    }
    let gts = ground_truths(dataset)?;
    (0..repetitions)
        .map(|rep| {
            let preds = random_predictions(dataset, seed, rep)?;
            Ok(evaluate_default(&preds, &gts)?)
        })
        .collect()
}

/// Mean of the per-repetition reports.
pub fn random_baseline_report(
    dataset: &Dataset,
    repetitions: usize,
    seed: u64,
) -> Result<MetricsReport, BaselineError> {
    Ok(mean_report(&random_baseline_reports(
        dataset,
        repetitions,
        seed,
    )?)?)
}

/// The whole video, `[0, duration_s]`.
pub fn complete_baseline(duration_s: f64) -> Result<TimeSpan, BaselineError> {
    check_duration(duration_s)?;
    Ok(TimeSpan::new(0.0, duration_s).expect("positive duration"))
}

pub fn complete_predictions(dataset: &Dataset) -> Result<Vec<PredictionRecord>, BaselineError> {
    dataset
        .queries
        .iter()
        .map(|q| {
            let span = complete_baseline(duration_of(dataset, &q.video_id))?;
            Ok(PredictionRecord::new(
                &q.video_id,
                &q.query,
                Outcome::Answer(span),
            ))
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScoreSource {
    Frame,
    Segment,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScorePoint {
    pub time_s: f64,
    /// Present for segment-sourced series.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub end_s: Option<f64>,
    pub score: f64,
}

/// Query-to-content similarity over time. For segment sources, `time_s` is
/// the segment start.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreSeries {
    pub video_id: String,
    pub query: String,
    pub source: ScoreSource,
    pub points: Vec<ScorePoint>,
}

impl ScoreSeries {
    pub fn from_json_str(input: &str) -> Result<Self, BaselineError> {
        let s: ScoreSeries =
            serde_json::from_str(input).map_err(|e| BaselineError::InvalidSeries(e.to_string()))?;
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<(), BaselineError> {
        if self.points.is_empty() {
            return Err(BaselineError::EmptySeries);
        }
        for (i, p) in self.points.iter().enumerate() {
            if !p.time_s.is_finite() || p.time_s < 0.0 || !p.score.is_finite() {
                return Err(BaselineError::InvalidSeries(format!(
                    "point {i} is not finite and non-negative"
                )));
            }
            if self.source == ScoreSource::Segment {
                match p.end_s {
                    Some(e) if e.is_finite() && e >= p.time_s => {}
                    _ => {
                        return Err(BaselineError::InvalidSeries(format!(
                            "segment {i} needs end_s >= time_s"
                        )))
                    }
                }
            }
        }
        if self.points.windows(2).any(|w| w[0].time_s >= w[1].time_s) {
            return Err(BaselineError::InvalidSeries(
                "times must be strictly increasing".into(),
            ));
        }
        Ok(())
    }
}

/// Start at the (earliest) highest score; end at the first later point
/// whose score is at most `max - epsilon`, or at the end of the video if
/// the score never drops that far.
pub fn threshold_baseline(
    series: &ScoreSeries,
    epsilon: f64,
    duration_s: f64,
) -> Result<TimeSpan, BaselineError> {
    check_duration(duration_s)?;
    if epsilon.is_nan() || epsilon <= 0.0 {
        return Err(BaselineError::NonPositiveEpsilon);
    }
    series.validate()?;
    let points = &series.points;
    let (best_idx, best) = points
        .iter()
        .enumerate()
        .fold((0, &points[0]), |acc, (i, p)| {
            if p.score > acc.1.score {
                (i, p)
            } else {
                acc
            }
        });
    let end = points[best_idx + 1..]
        .iter()
        .find(|p| best.score - p.score >= epsilon)
        .map_or(duration_s, |p| p.time_s);
    let start = best.time_s.min(duration_s);
    Ok(TimeSpan::new(start, end.clamp(start, duration_s)).expect("clamped into range"))
}
