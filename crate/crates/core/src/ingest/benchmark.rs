//! Chapter-based benchmark construction: filter videos by duration, then
//! draw a fixed number of chapters per video as queries.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{Dataset, IngestError};
use crate::span::{QueryInstance, TimeSpan, VideoRecord};

/// 13 to 15 minutes, inclusive.
pub const DEFAULT_DURATION_RANGE_S: (f64, f64) = (780.0, 900.0);

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChapterAnnotation {
    #[serde(rename = "title")]
    pub chapter_title: String,
    pub start_s: f64,
}

/// One entry of the chapters source file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChapterVideo {
    pub video_id: String,
    pub title: String,
    pub duration_s: f64,
    pub chapters: Vec<ChapterAnnotation>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BenchmarkOptions {
    pub duration_range_s: (f64, f64),
    pub per_video: usize,
    pub seed: u64,
}

impl Default for BenchmarkOptions {
    fn default() -> Self {
        Self {
            duration_range_s: DEFAULT_DURATION_RANGE_S,
            per_video: 3,
            seed: 0,
        }
    }
}

pub fn parse_chapters_json(input: &str) -> Result<Vec<ChapterVideo>, IngestError> {
    serde_json::from_str(input).map_err(|e| IngestError::SchemaViolation {
        context: "chapters".into(),
        message: e.to_string(),
    })
}

/// Chapter moments tile the video: each runs from its start to the next
/// chapter's start, the last one to the end of the video. Zero-length
/// chapters (repeated start times) are skipped.
fn chapter_moments(video: &ChapterVideo) -> Result<Vec<(String, TimeSpan)>, IngestError> {
    let d = video.duration_s;
    let mut out = Vec::with_capacity(video.chapters.len());
    for (i, ch) in video.chapters.iter().enumerate() {
        if !ch.start_s.is_finite() || ch.start_s < 0.0 || ch.start_s > d {
            return Err(IngestError::OutOfRangeTimestamp {
                context: format!("video {:?} chapters[{i}]", video.video_id),
                value: ch.start_s,
                duration_s: d,
            });
        }
        let end = video.chapters.get(i + 1).map_or(d, |next| next.start_s);
        if end < ch.start_s {
            return Err(IngestError::UnsortedChapters(video.video_id.clone()));
        }
        if end > ch.start_s {
            let span = TimeSpan::new(ch.start_s, end).expect("checked above");
            out.push((ch.chapter_title.clone(), span));
        }
    }
    Ok(out)
}

/// Build a benchmark from chapter annotations.
///
/// Videos outside `duration_range_s` (inclusive) are dropped. From each
/// remaining video, `per_video` chapters are drawn uniformly without
/// replacement, or all of them if it has fewer. Draws come from a single
/// seeded stream walked in input order, so the output is a pure function of
/// the inputs and the seed.
pub fn build_benchmark(
    sources: &[ChapterVideo],
    options: &BenchmarkOptions,
) -> Result<Dataset, IngestError> {
    let (lo, hi) = options.duration_range_s;
    let mut rng = ChaCha8Rng::seed_from_u64(options.seed);
    let mut videos = Vec::new();
    let mut queries = Vec::new();

    for source in sources {
        if !source.duration_s.is_finite() || source.duration_s < lo || source.duration_s > hi {
            continue;
        }
        let moments = chapter_moments(source)?;
        let picked: Vec<usize> = if moments.len() <= options.per_video {
            (0..moments.len()).collect()
        } else {
            let mut idx = sample(&mut rng, moments.len(), options.per_video).into_vec();
            idx.sort_unstable();
            idx
        };
        for i in picked {
            let (title, span) = &moments[i];
            queries.push(QueryInstance {
                video_id: source.video_id.clone(),
                query: title.clone(),
                ground_truth: Some(*span),
            });
        }
        videos.push(VideoRecord::bare(
            source.video_id.clone(),
            source.title.clone(),
            source.duration_s,
        ));
    }

    if videos.is_empty() {
        return Err(IngestError::EmptySelection);
    }
    Dataset::new(videos, queries)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn video(id: &str, duration_s: f64, starts: &[f64]) -> ChapterVideo {
        ChapterVideo {
            video_id: id.into(),
            title: format!("title {id}"),
            duration_s,
            chapters: starts
                .iter()
                .enumerate()
                .map(|(i, &s)| ChapterAnnotation {
                    chapter_title: format!("chapter {i}"),
                    start_s: s,
                })
                .collect(),
        }
    }

    fn spans(ds: &Dataset) -> Vec<(f64, f64)> {
        ds.queries
            .iter()
            .map(|q| q.ground_truth.map(|g| (g.start_s, g.end_s)).unwrap())
            .collect()
    }

    #[test]
    fn three_chapters_tile_the_video() {
        let src = [video("v", 840.0, &[0.0, 179.0, 329.0])];
        let ds = build_benchmark(
            &src,
            &BenchmarkOptions {
                seed: 11,
                ..Default::default()
            },
        )
        .unwrap();
        assert_eq!(
            spans(&ds),
            vec![(0.0, 179.0), (179.0, 329.0), (329.0, 840.0)]
        );
        assert_eq!(ds.queries[1].query, "chapter 1");
    }

    #[test]
    fn per_video_two_is_reproducible() {
        let src = [video("v", 840.0, &[0.0, 179.0, 329.0])];
        let opts = BenchmarkOptions {
            per_video: 2,
            seed: 7,
            ..Default::default()
        };
        let a = build_benchmark(&src, &opts).unwrap();
        let b = build_benchmark(&src, &opts).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.queries.len(), 2);
        let all = [(0.0, 179.0), (179.0, 329.0), (329.0, 840.0)];
        assert!(spans(&a).iter().all(|s| all.contains(s)));
    }

    #[test]
    fn seeds_vary_selection() {
        let src = [video(
            "v",
            840.0,
            &[0.0, 60.0, 120.0, 180.0, 240.0, 300.0, 360.0, 420.0],
        )];
        let picks: Vec<Vec<(f64, f64)>> = (0..20)
            .map(|seed| {
                let opts = BenchmarkOptions {
                    seed,
                    ..Default::default()
                };
                spans(&build_benchmark(&src, &opts).unwrap())
            })
            .collect();
        assert!(picks.iter().any(|p| p != &picks[0]));
    }

    #[test]
    fn duration_filter() {
        let src = [video("short", 700.0, &[0.0, 100.0])];
        assert!(matches!(
            build_benchmark(&src, &BenchmarkOptions::default()),
            Err(IngestError::EmptySelection)
        ));
        let src = [
            video("lo", 780.0, &[0.0]),
            video("hi", 900.0, &[0.0]),
            video("over", 900.5, &[0.0]),
        ];
        let ds = build_benchmark(&src, &BenchmarkOptions::default()).unwrap();
        assert_eq!(ds.videos.len(), 2);
        assert!(ds.video("over").is_none());
    }

    #[test]
    fn unsorted_chapters_error() {
        let src = [video("v", 840.0, &[0.0, 300.0, 200.0])];
        assert!(matches!(
            build_benchmark(&src, &BenchmarkOptions::default()),
            Err(IngestError::UnsortedChapters(_))
        ));
    }

    #[test]
    fn parses_chapter_source() {
        let src = parse_chapters_json(
            r#"[{"video_id":"v","title":"t","duration_s":840,"chapters":[{"title":"Intro","start_s":0}]}]"#,
        )
        .unwrap();
        assert_eq!(src[0].chapters[0].chapter_title, "Intro");
    }
}
