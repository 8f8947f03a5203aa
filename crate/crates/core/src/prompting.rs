//! Boundary-perceptive prompt assembly and token budgeting.
//!
//! The prompt is a single user message made of up to eleven sections:
//! task description, query, transcript lines, caption lines, three
//! reasoning steps (summary, caption-noise check, partition analysis),
//! the answer template, answer rules, the no-copy rule and one worked
//! example. The reasoning steps follow `enable_cot`; the last two follow
//! `enable_icl`.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::parsing::{fmt_seconds, parse_answer};
use crate::textualize::{TextualizedTask, DEFAULT_MIN_FRAMES};

pub const DEFAULT_TOKEN_BUDGET: usize = 14_000;

const DEFAULT_ICL_EXAMPLE: &str = include_str!("../assets/icl_example.json");

const SECTION_SEPARATOR: &str = "\n\n";

const GLOBAL_UNDERSTANDING: &str = "You summarize the video.";
const NOISE_EVALUATION: &str = "We note that the visual caption might be quite NOISY. Now you comment if the visual captions are helpful enough for localization. You can give up information from captions if you think some of them are wrong.";
const PARTITION_UNDERSTANDING: &str = "You analyze the video content before X, between X and Y, and after Y, respectively. After that, you give the answer [X, Y].";
const FULL_TEMPLATE: &str = r#"Please use JSON format of {"summary": "..."(you summarize the whole video), "comment": "..."(you evaluate effectiveness of visual captions), "query": "..."(the query input), "before X": "..."(you summarize video before X), "between X and Y": "..."(you summarize video between X and Y), "after Y": "..."(you summarize video after Y), "answer": [X, Y]}."#;
const MINIMAL_TEMPLATE: &str = r#"Please use JSON format of {"answer": [X, Y]}."#;
const ANSWER_REGULARIZATION: &str =
    "We ensure there does exist ONE moment matching the query and X is no more than Y.";
const PLAGIARISM_PROHIBITION: &str = "You MUST NOT just copy the answer given by the example! X and Y should be replaced by the real start and end timestamps of the moment you find in videos.";

#[derive(Debug, Error)]
pub enum PromptError {
    #[error("prompt cannot fit in {budget} tokens even after truncation (needs {needed})")]
    BudgetUnsatisfiable { budget: usize, needed: usize },
    #[error("token budget must be positive")]
    ZeroBudget,
    #[error("invalid in-context example: {0}")]
    InvalidIclExample(String),
}

/// A fixed worked example shown to the model.
#[derive(Debug, Clone, PartialEq)]
pub struct IclExample {
    pub input_task: TextualizedTask,
    pub output_answer_text: String,
    /// Answer-only rendering of the output, used when reasoning steps are off.
    minimal_output: String,
}

#[derive(Deserialize, Serialize)]
struct IclExampleFile {
    input: TextualizedTask,
    output: String,
}

impl IclExample {
    /// The output must parse as a non-collapsed answer within the input's duration.
    pub fn new(
        input_task: TextualizedTask,
        output_answer_text: String,
    ) -> Result<Self, PromptError> {
        let parsed =
            parse_answer(&output_answer_text, input_task.duration_s, true).map_err(|c| {
                PromptError::InvalidIclExample(format!("output collapses: {}", c.reason))
            })?;
        let minimal_output = format!(
            r#"{{"answer": [{}, {}]}}"#,
            fmt_seconds(parsed.answer.start_s),
            fmt_seconds(parsed.answer.end_s)
        );
        Ok(Self {
            input_task,
            output_answer_text,
            minimal_output,
        })
    }

    pub fn from_json_str(input: &str) -> Result<Self, PromptError> {
        let file: IclExampleFile = serde_json::from_str(input)
            .map_err(|e| PromptError::InvalidIclExample(e.to_string()))?;
        Self::new(file.input, file.output)
    }

    pub fn to_json_string(&self) -> String {
        serde_json::to_string_pretty(&IclExampleFile {
            input: self.input_task.clone(),
            output: self.output_answer_text.clone(),
        })
        .expect("plain data serializes")
    }
}

impl Default for IclExample {
    fn default() -> Self {
        Self::from_json_str(DEFAULT_ICL_EXAMPLE).expect("bundled example is valid")
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PromptConfig {
    pub enable_cot: bool,
    pub enable_icl: bool,
    pub icl_example: IclExample,
    pub token_budget: usize,
    pub min_frames: usize,
}

impl Default for PromptConfig {
    fn default() -> Self {
        Self {
            enable_cot: true,
            enable_icl: true,
            icl_example: IclExample::default(),
            token_budget: DEFAULT_TOKEN_BUDGET,
            min_frames: DEFAULT_MIN_FRAMES,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PromptBundle {
    pub rendered_prompt: String,
    pub estimated_tokens: usize,
    pub truncation_applied: bool,
}

/// Crude deterministic token count: one token per four bytes, rounded up.
pub fn estimate_tokens(text: &str) -> usize {
    text.len().div_ceil(4)
}

fn task_description(task: &TextualizedTask) -> String {
    let mut inputs = vec!["Video title".to_string(), "Query".to_string()];
    if task.modality_flags.speech {
        inputs.push(
            "Speech transcription, with temporal information in the format of: [START-TIMESTAMP]-[END-TIMESTAMP]:[TRANSCRIPTION]"
                .to_string(),
        );
    }
    if task.modality_flags.visual {
        inputs.push(
            "Visual caption, with temporal information in the format of: [TIMESTAMP]:[CAPTION]"
                .to_string(),
        );
    }
    let listed = inputs
        .iter()
        .enumerate()
        .map(|(i, s)| format!("({}) {s}", i + 1))
        .collect::<Vec<_>>()
        .join(" ");
    format!(
        "You can analyze the correlations between a video and query, and locate the video segment that matches the query. You are given: {listed}. You should give the answer in [X, Y] format where X, Y are the start and end timestamps of the matching segment."
    )
}

fn block(header: &str, lines: &[String]) -> String {
    if lines.is_empty() {
        header.to_string()
    } else {
        format!("{header}\n{}", lines.join("\n"))
    }
}

/// Example input on one line, restricted to the modalities the task uses.
fn inline_example_input(example: &TextualizedTask, task: &TextualizedTask) -> String {
    let mut parts = vec![
        format!("Video title: {}.", example.title),
        format!("Query: {}.", example.query),
    ];
    if task.modality_flags.speech {
        parts.push(format!(
            "Speech transcriptions: {}",
            example.transcript_lines.join(" ")
        ));
    }
    if task.modality_flags.visual {
        parts.push(format!(
            "Visual captions: {}",
            example.caption_lines.join(" ")
        ));
    }
    parts.join(" ")
}

fn render(task: &TextualizedTask, config: &PromptConfig) -> String {
    let mut sections = vec![
        task_description(task),
        format!("Video title: {}\nQuery: {}", task.title, task.query),
    ];
    if task.modality_flags.speech {
        sections.push(block("Speech transcriptions:", &task.transcript_lines));
    }
    if task.modality_flags.visual {
        sections.push(block("Visual captions:", &task.caption_lines));
    }
    if config.enable_cot {
        sections.push(GLOBAL_UNDERSTANDING.to_string());
        sections.push(NOISE_EVALUATION.to_string());
        sections.push(PARTITION_UNDERSTANDING.to_string());
        sections.push(FULL_TEMPLATE.to_string());
    } else {
        sections.push(MINIMAL_TEMPLATE.to_string());
    }
    sections.push(ANSWER_REGULARIZATION.to_string());
    if config.enable_icl {
        let example = &config.icl_example;
        let output = if config.enable_cot {
            &example.output_answer_text
        } else {
            &example.minimal_output
        };
        sections.push(PLAGIARISM_PROHIBITION.to_string());
        sections.push(format!(
            "<INPUT>=> {} <OUTPUT>=> {output}. Now you solve the following. <INPUT>=> Video title: {}. Query: {}. <OUTPUT>=>",
            inline_example_input(&example.input_task, task),
            task.title,
            task.query,
        ));
    }
    sections.join(SECTION_SEPARATOR)
}

/// Assemble the prompt, thinning the input lines if it exceeds the budget.
pub fn build_prompt(
    task: &TextualizedTask,
    config: &PromptConfig,
) -> Result<PromptBundle, PromptError> {
    let budget = config.token_budget;
    if budget == 0 {
        return Err(PromptError::ZeroBudget);
    }
    let full = render(task, config);
    let tokens = estimate_tokens(&full);
    if tokens <= budget {
        return Ok(PromptBundle {
            rendered_prompt: full,
            estimated_tokens: tokens,
            truncation_applied: false,
        });
    }

    let mut skeleton = task.clone();
    skeleton.transcript_lines.clear();
    skeleton.caption_lines.clear();
    let overhead = estimate_tokens(&render(&skeleton, config));
    if overhead >= budget {
        return Err(PromptError::BudgetUnsatisfiable {
            budget,
            needed: overhead,
        });
    }

    // Line costs and the rendered total are not exactly additive, so shrink
    // the line allowance until the rendered prompt fits.
    let mut allowance = budget - overhead;
    loop {
        let thinned = truncate_to_budget(task, allowance);
        let prompt = render(&thinned, config);
        let tokens = estimate_tokens(&prompt);
        if tokens <= budget {
            return Ok(PromptBundle {
                rendered_prompt: prompt,
                estimated_tokens: tokens,
                truncation_applied: true,
            });
        }
        let exhausted = thinned.caption_lines.is_empty() && thinned.transcript_lines.len() <= 2;
        let excess = tokens - budget;
        if exhausted || allowance <= excess {
            return Err(PromptError::BudgetUnsatisfiable {
                budget,
                needed: tokens,
            });
        }
        allowance -= excess;
    }
}

fn lines_tokens(lines: &[&String]) -> usize {
    if lines.is_empty() {
        return 0;
    }
    let bytes: usize = lines.iter().map(|l| l.len()).sum::<usize>() + lines.len() - 1;
    bytes.div_ceil(4)
}

fn every_kth(lines: &[String], k: usize) -> Vec<&String> {
    lines.iter().step_by(k).collect()
}

fn head_and_tail(lines: &[String], keep: usize) -> Vec<&String> {
    let head = keep.div_ceil(2);
    let tail = keep / 2;
    lines[..head]
        .iter()
        .chain(&lines[lines.len() - tail..])
        .collect()
}

/// Thin the task's lines until their estimated token count fits `budget_remaining`.
///
/// Captions go first: keep every k-th line for k = 2, 3, ... and finally
/// drop them all. Then transcript lines are removed from the middle
/// outward, always keeping the first and last line. The result is the
/// least-thinned task that fits, or the fully thinned one if none does.
pub fn truncate_to_budget(task: &TextualizedTask, budget_remaining: usize) -> TextualizedTask {
    let transcripts: Vec<&String> = task.transcript_lines.iter().collect();
    let t_cost = lines_tokens(&transcripts);
    let fits = |captions: &[&String], transcripts_cost: usize| {
        lines_tokens(captions) + transcripts_cost <= budget_remaining
    };
    let with = |captions: Vec<&String>, transcripts: Vec<&String>| TextualizedTask {
        caption_lines: captions.into_iter().cloned().collect(),
        transcript_lines: transcripts.into_iter().cloned().collect(),
        ..task.clone()
    };

    let n = task.caption_lines.len();
    for k in 1..=n.max(1) {
        let kept = every_kth(&task.caption_lines, k);
        if fits(&kept, t_cost) {
            return with(kept, transcripts);
        }
    }
    if t_cost <= budget_remaining {
        return with(Vec::new(), transcripts);
    }

    // cost grows with the number of kept lines, so search the largest fitting count
    let m = task.transcript_lines.len();
    let floor = m.min(2);
    let (mut lo, mut hi) = (floor, m);
    while lo < hi {
        let mid = (lo + hi).div_ceil(2);
        if lines_tokens(&head_and_tail(&task.transcript_lines, mid)) <= budget_remaining {
            lo = mid;
        } else {
            hi = mid - 1;
        }
    }
    with(Vec::new(), head_and_tail(&task.transcript_lines, lo))
}
