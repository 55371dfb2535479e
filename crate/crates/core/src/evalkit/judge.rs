use std::sync::OnceLock;

use regex::Regex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::llm::{ChatBackend, LlmError, Message};

pub const DIMENSIONS: [&str; 6] = [
    "faithfulness",
    "aggregation_correctness",
    "coverage",
    "actionability",
    "personalization",
    "conciseness",
];

const JUDGE_PROMPT: &str = include_str!("../../prompts/judge.txt");

#[derive(Debug, Error)]
pub enum JudgeError {
    #[error("judge output unusable after retry: {raw:?}")]
    Failure { raw: String },
    #[error(transparent)]
    Backend(#[from] LlmError),
}

/// Rubric scores, each in 1..=5.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct JudgeScores {
    pub faithfulness: u8,
    pub aggregation_correctness: u8,
    pub coverage: u8,
    pub actionability: u8,
    pub personalization: u8,
    pub conciseness: u8,
}

impl JudgeScores {
    pub fn as_array(&self) -> [u8; 6] {
        [
            self.faithfulness,
            self.aggregation_correctness,
            self.coverage,
            self.actionability,
            self.personalization,
            self.conciseness,
        ]
    }
}

fn int_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"-?\d+(?:\.\d+)?").expect("valid regex"))
}

/// Exactly six integers, each between 1 and 5, in rubric order.
fn parse_scores(raw: &str) -> Option<JudgeScores> {
    let nums: Vec<u8> = int_re()
        .find_iter(raw)
        .map(|m| m.as_str().parse::<u8>().ok().filter(|s| (1..=5).contains(s)))
        .collect::<Option<_>>()?;
    let [a, b, c, d, e, f] = nums.as_slice() else {
        return None;
    };
    Some(JudgeScores {
        faithfulness: *a,
        aggregation_correctness: *b,
        coverage: *c,
        actionability: *d,
        personalization: *e,
        conciseness: *f,
    })
}

pub fn judge_prompt(task: &str, evidence: &str, response: &str) -> Vec<Message> {
    let body = JUDGE_PROMPT
        .replace("{dimensions}", &DIMENSIONS.join(", "))
        .replace("{task}", task)
        .replace("{evidence}", evidence)
        .replace("{response}", if response.trim().is_empty() { "(empty response)" } else { response });
    vec![Message::user(body)]
}

/// Scores an open-ended response on the six rubric dimensions. One retry
/// with a format reminder is allowed.
pub fn judge_open_ended(
    task: &str,
    evidence: &str,
    response: &str,
    backend: &dyn ChatBackend,
) -> Result<JudgeScores, JudgeError> {
    let mut messages = judge_prompt(task, evidence, response);
    let first = backend.complete(&messages)?;
    if let Some(s) = parse_scores(&first) {
        return Ok(s);
    }
    messages.push(Message::assistant(first));
    messages.push(Message::user(
        "Reply with exactly six integers from 1 to 5, in the order listed, separated by spaces.",
    ));
    let second = backend.complete(&messages)?;
    parse_scores(&second).ok_or(JudgeError::Failure { raw: second })
}
