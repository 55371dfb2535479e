//! Answer parsing, scoring (Acc, VA, EX, Acc|EX), faceted reports and the
//! open-ended rubric judge.

mod judge;
mod parse;
mod report;
mod score;

use std::collections::HashMap;
use std::io::{BufRead, Write};
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::benchgen::QAInstance;
use crate::lifelog::AlignedDataset;
use crate::qlang::{evidence_items, AnswerValue, Item};
use crate::store::{ResultTable, SqlDiagnostic};

pub use judge::{judge_open_ended, JudgeError, JudgeScores, DIMENSIONS};
pub use parse::{parse_answer, parse_number, ParseFailure};
pub use report::{aggregate_report, Rates, Report, ReportMeta};
pub use score::{
    item_matches, normalize_text, number_matches, score_accuracy, score_dp_stage, SMALL_INT_LIMIT,
    TOLERANCE_SLACK,
};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("nothing to evaluate")]
    EmptyEvaluation,
    #[error("verdict for unknown instance {0}")]
    UnknownInstance(String),
    #[error("report is inconsistent: {0}")]
    Inconsistent(String),
    #[error("{path}:{line}: {msg}")]
    Parse { path: String, line: usize, msg: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// A system's output for one instance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub instance_id: String,
    pub raw_text: String,
    pub parsed: Option<AnswerValue>,
    pub parse_error: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dp_sql: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dp_result: Option<ResultTable>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dp_diag: Option<SqlDiagnostic>,
    /// Backend or pipeline problem, if any.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    /// Set by CP when the context had to be cut.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub truncated: Option<bool>,
    pub backend_calls: usize,
}

impl Prediction {
    pub fn from_reply(instance: &QAInstance, raw: String) -> Self {
        let (parsed, parse_error) = match parse_answer(&raw, instance.answer_type) {
            Ok(v) => (Some(v), None),
            Err(e) => (None, Some(e.to_string())),
        };
        Self {
            instance_id: instance.instance_id.clone(),
            raw_text: raw,
            parsed,
            parse_error,
            dp_sql: None,
            dp_result: None,
            dp_diag: None,
            error: None,
            truncated: None,
            backend_calls: 0,
        }
    }

    /// A prediction for a run that never produced a reply.
    pub fn failed(instance: &QAInstance, error: impl Into<String>) -> Self {
        let mut p = Self::from_reply(instance, String::new());
        p.error = Some(error.into());
        p
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Verdict {
    pub instance_id: String,
    pub acc: bool,
    pub va: Option<bool>,
    /// Defined only when `va` is true.
    pub ex: Option<bool>,
    pub parsed: bool,
}

/// Scores one prediction. `evidence` is needed only for DP predictions.
pub fn score_prediction(pred: &Prediction, gt: &AnswerValue, evidence: &[Item]) -> Verdict {
    let acc = pred.parsed.as_ref().is_some_and(|p| score_accuracy(p, gt));
    let (va, ex) = match &pred.dp_diag {
        Some(diag) => {
            let (va, ex) = score_dp_stage(diag, pred.dp_result.as_ref(), evidence);
            (Some(va), va.then_some(ex))
        }
        None => (None, None),
    };
    Verdict {
        instance_id: pred.instance_id.clone(),
        acc,
        va,
        ex,
        parsed: pred.parsed.is_some(),
    }
}

/// Scores all predictions against their instances in parallel. Evidence for
/// EX is recomputed from the dataset.
pub fn score_all(
    preds: &[Prediction],
    instances: &[QAInstance],
    ds: &AlignedDataset,
) -> Result<Vec<Verdict>, EvalError> {
    let by_id: HashMap<&str, &QAInstance> =
        instances.iter().map(|i| (i.instance_id.as_str(), i)).collect();
    preds
        .par_iter()
        .map(|p| {
            let inst = by_id
                .get(p.instance_id.as_str())
                .ok_or_else(|| EvalError::UnknownInstance(p.instance_id.clone()))?;
            let evidence = if p.dp_diag.is_some() {
                evidence_items(&inst.program, ds).unwrap_or_else(|_| inst.ground_truth.items())
            } else {
                Vec::new()
            };
            Ok(score_prediction(p, &inst.ground_truth, &evidence))
        })
        .collect()
}

pub fn write_predictions(path: &Path, preds: &[Prediction]) -> Result<(), EvalError> {
    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    for p in preds {
        serde_json::to_writer(&mut out, p).map_err(std::io::Error::other)?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_predictions(path: &Path) -> Result<Vec<Prediction>, EvalError> {
    let file = std::fs::File::open(path)?;
    let mut out = Vec::new();
    for (i, line) in std::io::BufReader::new(file).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| EvalError::Parse {
            path: path.display().to_string(),
            line: i + 1,
            msg: e.to_string(),
        })?);
    }
    Ok(out)
}
