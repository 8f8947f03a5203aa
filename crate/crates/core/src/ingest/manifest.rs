use std::collections::{BTreeMap, HashSet};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{load_captions, load_scenes, load_transcript, read_file, IngestError};
use crate::span::{QueryInstance, TimeSpan, VideoRecord};

/// On-disk manifest document. Sidecar paths are relative to the manifest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestDoc {
    pub videos: Vec<ManifestVideo>,
    pub queries: Vec<ManifestQuery>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestVideo {
    pub id: String,
    pub title: String,
    pub duration_s: f64,
    pub transcript_path: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub caption_path: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scene_path: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestQuery {
    pub video_id: String,
    pub query: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub start_s: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub end_s: Option<f64>,
}

impl ManifestDoc {
    pub fn from_json_str(input: &str) -> Result<Self, IngestError> {
        serde_json::from_str(input).map_err(|e| IngestError::SchemaViolation {
            context: "manifest".into(),
            message: e.to_string(),
        })
    }

    /// Resolve query ground truths against video durations without touching
    /// sidecar files. Returns one entry per query.
    pub fn resolve_queries(&self) -> Result<Vec<QueryInstance>, IngestError> {
        let durations: BTreeMap<&str, f64> = self
            .videos
            .iter()
            .map(|v| (v.id.as_str(), v.duration_s))
            .collect();
        self.queries
            .iter()
            .enumerate()
            .map(|(i, q)| {
                let duration_s = *durations
                    .get(q.video_id.as_str())
                    .ok_or_else(|| IngestError::DanglingVideoId(q.video_id.clone()))?;
                let ground_truth = match (q.start_s, q.end_s) {
                    (None, None) => None,
                    (Some(s), Some(e)) => {
                        let span =
                            TimeSpan::new(s, e).map_err(|err| IngestError::SchemaViolation {
                                context: format!("queries[{i}]"),
                                message: err.to_string(),
                            })?;
                        check_in_range(span.end_s, duration_s, || format!("queries[{i}].end_s"))?;
                        Some(span)
                    }
                    (Some(_), None) => {
                        return Err(IngestError::SchemaViolation {
                            context: format!("queries[{i}]"),
                            message: "start_s given without end_s".into(),
                        })
                    }
                    (None, Some(_)) => {
                        return Err(IngestError::SchemaViolation {
                            context: format!("queries[{i}]"),
                            message: "end_s given without start_s".into(),
                        })
                    }
                };
                Ok(QueryInstance {
                    video_id: q.video_id.clone(),
                    query: q.query.clone(),
                    ground_truth,
                })
            })
            .collect()
    }
}

fn check_in_range(
    value: f64,
    duration_s: f64,
    context: impl FnOnce() -> String,
) -> Result<(), IngestError> {
    if value < 0.0 || value > duration_s {
        return Err(IngestError::OutOfRangeTimestamp {
            context: context(),
            value,
            duration_s,
        });
    }
    Ok(())
}

/// A fully resolved set of videos and queries.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub videos: BTreeMap<String, VideoRecord>,
    pub queries: Vec<QueryInstance>,
}

impl Dataset {
    /// Build a dataset, checking that every query resolves to a video and
    /// that every timestamp fits in its video.
    pub fn new(videos: Vec<VideoRecord>, queries: Vec<QueryInstance>) -> Result<Self, IngestError> {
        let mut map = BTreeMap::new();
        for video in videos {
            validate_video(&video)?;
            if map.contains_key(&video.id) {
                return Err(IngestError::DuplicateVideoId(video.id));
            }
            map.insert(video.id.clone(), video);
        }
        for (i, q) in queries.iter().enumerate() {
            let video = map
                .get(&q.video_id)
                .ok_or_else(|| IngestError::DanglingVideoId(q.video_id.clone()))?;
            if let Some(gt) = &q.ground_truth {
                if !gt.is_valid() {
                    return Err(IngestError::MalformedTimestamp {
                        context: format!("queries[{i}]"),
                        value: format!("[{}, {}]", gt.start_s, gt.end_s),
                    });
                }
                check_in_range(gt.end_s, video.duration_s, || format!("queries[{i}].end_s"))?;
            }
        }
        Ok(Self {
            videos: map,
            queries,
        })
    }

    pub fn video(&self, id: &str) -> Option<&VideoRecord> {
        self.videos.get(id)
    }

    /// Ground truths aligned with `queries`, if every query has one.
    pub fn ground_truths(&self) -> Option<Vec<TimeSpan>> {
        self.queries.iter().map(|q| q.ground_truth).collect()
    }
}

fn validate_video(video: &VideoRecord) -> Result<(), IngestError> {
    let d = video.duration_s;
    if !d.is_finite() || d <= 0.0 {
        return Err(IngestError::SchemaViolation {
            context: format!("video {:?}", video.id),
            message: format!("duration_s must be positive, got {d}"),
        });
    }
    for (i, seg) in video.transcripts.iter().enumerate() {
        check_in_range(seg.span.end_s, d, || {
            format!("video {:?} transcript[{i}]", video.id)
        })?;
    }
    for (i, cap) in video.captions.iter().enumerate() {
        check_in_range(cap.time_s, d, || {
            format!("video {:?} captions[{i}]", video.id)
        })?;
    }
    for (i, scene) in video.scenes.iter().enumerate() {
        check_in_range(scene.end_s, d, || {
            format!("video {:?} scenes[{i}]", video.id)
        })?;
    }
    Ok(())
}

/// Load a manifest and every sidecar file it references.
pub fn load_manifest(path: &Path) -> Result<Dataset, IngestError> {
    let doc = ManifestDoc::from_json_str(&read_file(path)?)?;
    let base = path.parent().unwrap_or_else(|| Path::new("."));

    let mut videos = Vec::with_capacity(doc.videos.len());
    let mut seen = HashSet::new();
    for v in &doc.videos {
        if !seen.insert(v.id.as_str()) {
            return Err(IngestError::DuplicateVideoId(v.id.clone()));
        }
        let transcripts = load_transcript(&base.join(&v.transcript_path))?;
        let captions = match &v.caption_path {
            Some(p) => load_captions(&base.join(p))?,
            None => Vec::new(),
        };
        let scenes = match &v.scene_path {
            Some(p) => load_scenes(&base.join(p))?,
            None => Vec::new(),
        };
        videos.push(VideoRecord {
            id: v.id.clone(),
            title: v.title.clone(),
            duration_s: v.duration_s,
            transcripts,
            captions,
            scenes,
        });
    }
    let queries = doc.resolve_queries()?;
    Dataset::new(videos, queries)
}

fn sidecar_name(index: usize, id: &str) -> String {
    let clean: String = id
        .chars()
        .map(|c| {
            if c.is_ascii_alphanumeric() || c == '-' || c == '_' {
                c
            } else {
                '_'
            }
        })
        .collect();
    format!("{index:04}_{clean}.json")
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), IngestError> {
    let io_err = |source| IngestError::Io {
        path: path.to_path_buf(),
        source,
    };
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(io_err)?;
    }
    let text = serde_json::to_string_pretty(value).expect("plain data serializes");
    std::fs::write(path, text + "\n").map_err(io_err)
}

#[derive(Serialize)]
struct SegmentOut<'a> {
    start_s: f64,
    end_s: f64,
    text: &'a str,
}

#[derive(Serialize)]
struct CaptionOut<'a> {
    time_s: f64,
    text: &'a str,
}

/// Build the manifest document for `dataset`, with sidecars named under
/// `transcripts/`, `captions/` and `scenes/`.
pub fn manifest_for(dataset: &Dataset) -> ManifestDoc {
    let videos = dataset
        .videos
        .values()
        .enumerate()
        .map(|(i, v)| {
            let name = sidecar_name(i, &v.id);
            ManifestVideo {
                id: v.id.clone(),
                title: v.title.clone(),
                duration_s: v.duration_s,
                transcript_path: format!("transcripts/{name}"),
                caption_path: (!v.captions.is_empty()).then(|| format!("captions/{name}")),
                scene_path: (!v.scenes.is_empty()).then(|| format!("scenes/{name}")),
            }
        })
        .collect();
    let queries = dataset
        .queries
        .iter()
        .map(|q| ManifestQuery {
            video_id: q.video_id.clone(),
            query: q.query.clone(),
            start_s: q.ground_truth.map(|g| g.start_s),
            end_s: q.ground_truth.map(|g| g.end_s),
        })
        .collect();
    ManifestDoc { videos, queries }
}

/// Write `dataset` as a manifest at `manifest_path` together with its sidecar files.
pub fn write_dataset(dataset: &Dataset, manifest_path: &Path) -> Result<ManifestDoc, IngestError> {
    let doc = manifest_for(dataset);
    let base = manifest_path.parent().unwrap_or_else(|| Path::new("."));
    for (entry, video) in doc.videos.iter().zip(dataset.videos.values()) {
        let segments: Vec<_> = video
            .transcripts
            .iter()
            .map(|s| SegmentOut {
                start_s: s.span.start_s,
                end_s: s.span.end_s,
                text: &s.text,
            })
            .collect();
        write_json(&base.join(&entry.transcript_path), &segments)?;
        if let Some(p) = &entry.caption_path {
            let caps: Vec<_> = video
                .captions
                .iter()
                .map(|c| CaptionOut {
                    time_s: c.time_s,
                    text: &c.text,
                })
                .collect();
            write_json(&base.join(p), &caps)?;
        }
        if let Some(p) = &entry.scene_path {
            write_json(&base.join(p), &video.scenes)?;
        }
    }
    write_json(manifest_path, &doc)?;
    Ok(doc)
}

/// Resolve a sidecar path the way [`load_manifest`] does.
pub fn resolve_sidecar(manifest_path: &Path, relative: &str) -> PathBuf {
    manifest_path
        .parent()
        .unwrap_or_else(|| Path::new("."))
        .join(relative)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::span::{Caption, TranscriptSegment};
    use proptest::prelude::*;

    fn write(dir: &Path, name: &str, body: &str) {
        std::fs::write(dir.join(name), body).unwrap();
    }

    fn toy_manifest(dir: &Path, queries: &str) -> PathBuf {
        write(dir, "t.json", r#"[{"start_s":0,"end_s":7,"text":"hello"}]"#);
        write(dir, "c.json", r#"[{"time_s":5,"text":"a woman"}]"#);
        let body = format!(
            r#"{{"videos":[{{"id":"v1","title":"Habits","duration_s":840,"transcript_path":"t.json","caption_path":"c.json"}}],"queries":{queries}}}"#
        );
        write(dir, "m.json", &body);
        dir.join("m.json")
    }

    #[test]
    fn loads_one_video_three_queries() {
        let dir = tempfile::tempdir().unwrap();
        let m = toy_manifest(
            dir.path(),
            r#"[{"video_id":"v1","query":"a","start_s":0,"end_s":179},{"video_id":"v1","query":"b","start_s":179,"end_s":329},{"video_id":"v1","query":"c"}]"#,
        );
        let ds = load_manifest(&m).unwrap();
        assert_eq!(ds.videos.len(), 1);
        assert_eq!(ds.queries.len(), 3);
        assert_eq!(ds.queries[2].ground_truth, None);
        assert_eq!(ds.videos["v1"].captions.len(), 1);
        assert!(ds.ground_truths().is_none());
    }

    #[test]
    fn out_of_range_query() {
        let dir = tempfile::tempdir().unwrap();
        let m = toy_manifest(
            dir.path(),
            r#"[{"video_id":"v1","query":"a","start_s":100,"end_s":900}]"#,
        );
        assert!(matches!(
            load_manifest(&m),
            Err(IngestError::OutOfRangeTimestamp { .. })
        ));
    }

    #[test]
    fn dangling_video_id() {
        let dir = tempfile::tempdir().unwrap();
        let m = toy_manifest(dir.path(), r#"[{"video_id":"x","query":"a"}]"#);
        assert!(matches!(load_manifest(&m), Err(IngestError::DanglingVideoId(id)) if id == "x"));
    }

    #[test]
    fn schema_violation_names_field() {
        let err = ManifestDoc::from_json_str(
            r#"{"videos":[{"id":"v","title":"t","transcript_path":"x"}],"queries":[]}"#,
        )
        .unwrap_err();
        assert!(err.to_string().contains("duration_s"), "{err}");
    }

    #[test]
    fn missing_sidecar() {
        let dir = tempfile::tempdir().unwrap();
        write(
            dir.path(),
            "m.json",
            r#"{"videos":[{"id":"v","title":"t","duration_s":10,"transcript_path":"gone.json"}],"queries":[]}"#,
        );
        assert!(matches!(
            load_manifest(&dir.path().join("m.json")),
            Err(IngestError::MissingFile(_))
        ));
    }

    #[test]
    fn half_ground_truth_is_schema_violation() {
        let dir = tempfile::tempdir().unwrap();
        let m = toy_manifest(dir.path(), r#"[{"video_id":"v1","query":"a","start_s":3}]"#);
        assert!(matches!(
            load_manifest(&m),
            Err(IngestError::SchemaViolation { .. })
        ));
    }

    fn arb_video(idx: usize) -> impl Strategy<Value = VideoRecord> {
        (
            "[a-z ]{1,12}",
            100u32..2000,
            proptest::collection::vec((1u32..40, "[a-zA-Z]{1,10}"), 0..6),
            proptest::collection::vec((0u32..99, "[a-z]{1,6}"), 0..5),
            proptest::collection::vec(1u32..30, 0..4),
        )
            .prop_map(move |(title, dur, segs, caps, scenes)| {
                let duration_s = dur as f64 + 0.5;
                let mut t = 0.0;
                let transcripts = segs
                    .into_iter()
                    .map(|(len, text)| {
                        let span = TimeSpan::new(t, t + len as f64 * 0.75).unwrap();
                        t = span.end_s;
                        TranscriptSegment { span, text }
                    })
                    .collect();
                let mut caps: Vec<Caption> = caps
                    .into_iter()
                    .map(|(s, text)| Caption {
                        time_s: s as f64 + 0.25,
                        text,
                    })
                    .collect();
                caps.sort_by(|a, b| a.time_s.total_cmp(&b.time_s));
                caps.dedup_by(|a, b| a.time_s.floor() == b.time_s.floor());
                let mut s = 0.0;
                let scenes = scenes
                    .into_iter()
                    .map(|l| {
                        let span = TimeSpan::new(s, s + l as f64).unwrap();
                        s = span.end_s;
                        span
                    })
                    .collect();
                VideoRecord {
                    id: format!("vid/{idx}"),
                    title,
                    duration_s,
                    transcripts,
                    captions: caps,
                    scenes,
                }
            })
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]
        #[test]
        fn dataset_round_trips(videos in (arb_video(0), arb_video(1)), q in proptest::collection::vec((0usize..2, 0.0f64..50.0, 0.0f64..50.0, any::<bool>()), 0..5)) {
            let videos = vec![videos.0, videos.1];
            let queries = q.into_iter().enumerate().map(|(i, (v, a, b, gt))| QueryInstance {
                video_id: videos[v].id.clone(),
                query: format!("query {i}"),
                ground_truth: gt.then(|| TimeSpan::new(a.min(b), a.max(b)).unwrap()),
            }).collect();
            let ds = Dataset::new(videos, queries).unwrap();
            let dir = tempfile::tempdir().unwrap();
            let path = dir.path().join("nested").join("manifest.json");
            write_dataset(&ds, &path).unwrap();
            prop_assert_eq!(load_manifest(&path).unwrap(), ds);
        }
    }
}
