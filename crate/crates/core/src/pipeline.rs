//! End-to-end inference over a dataset: textualize, budget and build the
//! prompt, query the model, parse the reply.

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use crate::evaluation::{Outcome, PredictionRecord};
use crate::ingest::Dataset;
use crate::llm::{CompletionRequest, Gateway, DEFAULT_MAX_OUTPUT_TOKENS, DEFAULT_MODEL};
use crate::parsing::parse_answer;
use crate::prompting::{build_prompt, PromptBundle, PromptConfig};
use crate::span::{QueryInstance, VideoRecord};
use crate::textualize::{textualize_task, ModalityFlags, TextualizeError};

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineConfig {
    pub prompt: PromptConfig,
    pub modalities: ModalityFlags,
    pub model_name: String,
    pub temperature: f64,
    pub max_output_tokens: u32,
    pub concurrency: usize,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            prompt: PromptConfig::default(),
            modalities: ModalityFlags::default(),
            model_name: DEFAULT_MODEL.to_string(),
            temperature: 0.0,
            max_output_tokens: DEFAULT_MAX_OUTPUT_TOKENS,
            concurrency: 4,
        }
    }
}

impl PipelineConfig {
    /// Checks that do not depend on any particular query.
    pub fn validate(&self) -> Result<(), TextualizeError> {
        if !self.modalities.speech && !self.modalities.visual {
            return Err(TextualizeError::BothModalitiesDisabled);
        }
        Ok(())
    }
}

/// What happened for one query.
#[derive(Debug, Clone, PartialEq)]
pub struct QueryRun {
    pub index: usize,
    pub record: PredictionRecord,
    pub prompt: Option<PromptBundle>,
}

/// Textualize and render the prompt for one query, with the example
/// restricted to the same modalities.
pub fn prompt_for(
    video: &VideoRecord,
    query: &str,
    config: &PipelineConfig,
) -> Result<PromptBundle, String> {
    let task = textualize_task(video, query, config.modalities).map_err(|e| e.to_string())?;
    build_prompt(&task, &config.prompt).map_err(|e| e.to_string())
}

/// Run one query. Failures before a reply is obtained become collapses
/// whose reason names the failing stage.
pub fn run_query<G: Gateway + ?Sized>(
    video: &VideoRecord,
    query: &QueryInstance,
    gateway: &G,
    config: &PipelineConfig,
    index: usize,
) -> QueryRun {
    let collapsed = |reason: String| {
        PredictionRecord::new(&query.video_id, &query.query, Outcome::Collapsed { reason })
    };

    let bundle = match prompt_for(video, &query.query, config) {
        Ok(b) => b,
        Err(e) => {
            return QueryRun {
                index,
                record: collapsed(format!("prompt: {e}")),
                prompt: None,
            }
        }
    };
    let request = CompletionRequest {
        prompt: bundle.rendered_prompt.clone(),
        temperature: config.temperature,
        max_output_tokens: config.max_output_tokens,
        model_name: config.model_name.clone(),
        tag: None,
    }
    .with_tag(&query.video_id, &query.query);

    let mut record = match gateway.complete(&request) {
        Ok(result) => {
            let parsed = parse_answer(&result.text, video.duration_s, config.prompt.enable_cot);
            let mut r = PredictionRecord::new(&query.video_id, &query.query, Outcome::from(parsed));
            r.raw_response = Some(result.text);
            r
        }
        Err(e) => {
            log::warn!("query {index} ({:?}): {e}", query.query);
            collapsed(format!("gateway: {}: {e}", e.kind()))
        }
    };
    record.prompt_tokens_est = Some(bundle.estimated_tokens);
    QueryRun {
        index,
        record,
        prompt: Some(bundle),
    }
}

/// Run every query with at most `config.concurrency` in flight. `on_done`
/// is called once per query as it finishes (serialized, in completion
/// order). Returns the records in query order.
pub fn run_dataset<G, F>(
    dataset: &Dataset,
    gateway: &G,
    config: &PipelineConfig,
    on_done: F,
) -> Vec<PredictionRecord>
where
    G: Gateway + ?Sized,
    F: FnMut(&QueryRun) + Send,
{
    let n = dataset.queries.len();
    let next = AtomicUsize::new(0);
    let sink = Mutex::new((on_done, vec![None; n]));
    let workers = config.concurrency.clamp(1, n.max(1));

    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::SeqCst);
                if i >= n {
                    break;
                }
                let query = &dataset.queries[i];
                let video = dataset
                    .video(&query.video_id)
                    .expect("dataset resolves every query");
                let run = run_query(video, query, gateway, config, i);
                let mut guard = sink.lock().unwrap_or_else(|p| p.into_inner());
                (guard.0)(&run);
                guard.1[i] = Some(run.record);
            });
        }
    });

    let (_, records) = sink.into_inner().unwrap_or_else(|p| p.into_inner());
    records
        .into_iter()
        .map(|r| r.expect("every query ran"))
        .collect()
}
