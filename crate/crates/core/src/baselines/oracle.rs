//! Scripted responders for the baselines. The exact responder replays each
//! instance's own SQL and answer; the weak one imitates a model that mixes
//! up multi-day statistics and drops the tail of long enumerations.

use std::collections::HashMap;

use crate::benchgen::QAInstance;
use crate::lifelog::AlignedDataset;
use crate::llm::{ChatBackend, LlmError, Message};
use crate::qlang::{interpret, AggFn, AnswerValue, CohortStatFn, QueryIR};

fn spans_days(n: &QueryIR) -> bool {
    n.window().is_some_and(|w| w.len_days() > 1)
}

/// Rewrites every statistic computed over more than one day to a
/// plausible but different one.
pub fn weaken(n: &QueryIR) -> QueryIR {
    let b = |c: &QueryIR| Box::new(weaken(c));
    let v = |cs: &[QueryIR]| cs.iter().map(weaken).collect::<Vec<_>>();
    match n {
        QueryIR::Aggregate { func, child } => {
            let func = if spans_days(child) {
                match func {
                    AggFn::Mean => AggFn::Median,
                    AggFn::Median => AggFn::Mean,
                    AggFn::Sum => AggFn::Max,
                    AggFn::Min | AggFn::Max | AggFn::Percentile(_) => AggFn::Median,
                    AggFn::Count => AggFn::Count,
                }
            } else {
                *func
            };
            QueryIR::Aggregate { func, child: b(child) }
        }
        QueryIR::CohortStat { metric, window, stat } => QueryIR::CohortStat {
            metric: metric.clone(),
            window: *window,
            stat: match stat {
                CohortStatFn::Mean if window.len_days() > 1 => CohortStatFn::Median,
                CohortStatFn::Median if window.len_days() > 1 => CohortStatFn::Mean,
                other => *other,
            },
        },
        QueryIR::AlignDays { target, days } => QueryIR::AlignDays {
            target: b(target),
            days: v(days),
        },
        QueryIR::Compare { kind, left, right } => QueryIR::Compare {
            kind: *kind,
            left: b(left),
            right: b(right),
        },
        QueryIR::ThresholdFilter { child, cmp, threshold } => QueryIR::ThresholdFilter {
            child: b(child),
            cmp: *cmp,
            threshold: b(threshold),
        },
        QueryIR::CountDays { child } => QueryIR::CountDays { child: b(child) },
        QueryIR::ConsecutiveRun { child, min_len, output } => QueryIR::ConsecutiveRun {
            child: b(child),
            min_len: *min_len,
            output: *output,
        },
        QueryIR::Trend { child, epsilon } => QueryIR::Trend {
            child: b(child),
            epsilon: *epsilon,
        },
        QueryIR::ArgExtreme { child, extreme } => QueryIR::ArgExtreme {
            child: b(child),
            extreme: *extreme,
        },
        QueryIR::DominantCategory { child, field } => QueryIR::DominantCategory {
            child: b(child),
            field: field.clone(),
        },
        QueryIR::SetOp { kind, children } => QueryIR::SetOp {
            kind: *kind,
            children: v(children),
        },
        QueryIR::Tuple { children } => QueryIR::Tuple { children: v(children) },
        leaf => leaf.clone(),
    }
}

fn weak_answer(inst: &QAInstance, ds: &AlignedDataset) -> AnswerValue {
    let answer = interpret(&weaken(&inst.program), ds).unwrap_or_else(|_| inst.ground_truth.clone());
    match answer {
        AnswerValue::ListOf(mut items) if items.len() >= 3 => {
            items.pop();
            AnswerValue::from_items(items).expect("non-empty")
        }
        other => other,
    }
}

/// Scripted CP/DP backend keyed by question text.
pub struct OracleResponder<'a> {
    by_question: HashMap<&'a str, &'a QAInstance>,
    ds: &'a AlignedDataset,
    weak: bool,
}

impl<'a> OracleResponder<'a> {
    /// Replies with each instance's SQL and ground truth.
    pub fn exact(instances: &'a [QAInstance], ds: &'a AlignedDataset) -> Self {
        Self::build(instances, ds, false)
    }

    /// Replies with the weakened answers.
    pub fn weak(instances: &'a [QAInstance], ds: &'a AlignedDataset) -> Self {
        Self::build(instances, ds, true)
    }

    fn build(instances: &'a [QAInstance], ds: &'a AlignedDataset, weak: bool) -> Self {
        let mut by_question = HashMap::new();
        for i in instances {
            by_question.entry(i.question.as_str()).or_insert(i);
        }
        Self { by_question, ds, weak }
    }

    fn answer(&self, inst: &QAInstance) -> String {
        let a = if self.weak {
            weak_answer(inst, self.ds)
        } else {
            inst.ground_truth.clone()
        };
        format!("ANSWER: {}", a.render())
    }
}

impl ChatBackend for OracleResponder<'_> {
    fn complete(&self, messages: &[Message]) -> Result<String, LlmError> {
        let inst = messages
            .iter()
            .flat_map(|m| m.content.lines())
            .filter_map(|l| l.strip_prefix("Question: "))
            .find_map(|q| self.by_question.get(q))
            .ok_or_else(|| LlmError::Response("scripted responder: unknown question".into()))?;
        let last = messages.last().map(|m| m.content.as_str()).unwrap_or("");
        if last.starts_with("## dp sql") {
            return Ok(format!("```sql\n{}\n```", inst.sql));
        }
        Ok(self.answer(inst))
    }

    fn describe(&self) -> String {
        format!(
            "{} scripted responder ({} questions)",
            if self.weak { "weak" } else { "exact" },
            self.by_question.len()
        )
    }
}
