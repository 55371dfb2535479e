use std::collections::BTreeSet;

use chrono::{DateTime, NaiveDate, Utc};

use super::ops::{self, Series};
use super::{
    node_label, AggFn, AnswerValue, CompareKind, Item, QueryError, QueryIR, RunOutput, SetOpKind,
};
use crate::lifelog::{AlignedDataset, RecordValue, UserId};

#[derive(Debug, Clone, PartialEq)]
pub struct EventRow {
    pub date: NaiveDate,
    pub start: DateTime<Utc>,
    pub metric: String,
    pub value: RecordValue,
}

/// Intermediate value of a node.
#[derive(Debug, Clone, PartialEq)]
pub enum Value {
    Series(Series),
    Events(Vec<EventRow>),
    /// Sorted, unique.
    DaySet(Vec<NaiveDate>),
    Number(f64),
    Bool(bool),
    Text(String),
    Date(NaiveDate),
    /// Ranked users with their window means.
    Users(Vec<(UserId, f64)>),
    Tuple(Vec<Value>),
}

impl Value {
    fn days(&self) -> Vec<NaiveDate> {
        match self {
            Value::Series(s) => s.dates(),
            Value::Events(e) => {
                let set: BTreeSet<NaiveDate> = e.iter().map(|r| r.date).collect();
                set.into_iter().collect()
            }
            Value::DaySet(d) => d.clone(),
            _ => Vec::new(),
        }
    }

    fn restrict(self, keep: &BTreeSet<NaiveDate>) -> Value {
        match self {
            Value::Series(s) => Value::Series(Series {
                window: s.window,
                points: s.points.into_iter().filter(|(d, _)| keep.contains(d)).collect(),
            }),
            Value::Events(e) => Value::Events(e.into_iter().filter(|r| keep.contains(&r.date)).collect()),
            Value::DaySet(d) => Value::DaySet(d.into_iter().filter(|d| keep.contains(d)).collect()),
            other => other,
        }
    }
}

/// Evaluates `program` bottom-up after checking it against the dataset.
pub fn evaluate(program: &QueryIR, ds: &AlignedDataset) -> Result<Value, QueryError> {
    program.check(Some(ds.date_span()))?;
    eval(program, ds, "root")
}

/// Evaluates `program` and shapes the root value into an answer.
pub fn interpret(program: &QueryIR, ds: &AlignedDataset) -> Result<AnswerValue, QueryError> {
    let v = evaluate(program, ds)?;
    to_answer(v, &node_label("root", program))
}

fn relabel(e: QueryError, here: &str) -> QueryError {
    match e {
        QueryError::EmptyWindow { .. } => QueryError::EmptyWindow { node: here.to_string() },
        QueryError::TooFewPoints { got, .. } => QueryError::TooFewPoints {
            node: here.to_string(),
            got,
        },
        other => other,
    }
}

fn mismatch(here: &str, detail: impl Into<String>) -> QueryError {
    QueryError::TypeMismatch {
        node: here.to_string(),
        detail: detail.into(),
    }
}

fn number(v: Value, here: &str) -> Result<f64, QueryError> {
    match v {
        Value::Number(x) => Ok(x),
        other => Err(mismatch(here, format!("expected number, got {other:?}"))),
    }
}

fn eval(n: &QueryIR, ds: &AlignedDataset, path: &str) -> Result<Value, QueryError> {
    let here = node_label(path, n);
    let sub = |role: &str, c: &QueryIR| eval(c, ds, &format!("{path}.{role}"));
    match n {
        QueryIR::SelectSeries {
            user,
            metric,
            window,
            ..
        } => Ok(Value::Series(Series {
            window: *window,
            points: ds.series(user, metric, *window),
        })),
        QueryIR::SelectEvents {
            user,
            domain,
            window,
            predicate,
        } => {
            let rows = ds
                .events_in(user, Some(*domain), *window)
                .into_iter()
                .filter(|(_, e)| predicate.metric.as_ref().is_none_or(|m| &e.metric == m))
                .filter(|(_, e)| {
                    predicate
                        .category
                        .as_ref()
                        .is_none_or(|c| e.value.as_category() == Some(c.as_str()))
                })
                .map(|(date, e)| EventRow {
                    date,
                    start: e.start,
                    metric: e.metric.clone(),
                    value: e.value.clone(),
                })
                .collect();
            Ok(Value::Events(rows))
        }
        QueryIR::AlignDays { target, days } => {
            let t = sub("target", target)?;
            let mut keep: Option<BTreeSet<NaiveDate>> = None;
            for d in days {
                let these: BTreeSet<NaiveDate> = sub("days", d)?.days().into_iter().collect();
                keep = Some(match keep {
                    Some(k) => k.intersection(&these).copied().collect(),
                    None => these,
                });
            }
            Ok(t.restrict(&keep.unwrap_or_default()))
        }
        QueryIR::Aggregate { func, child } => {
            let values = match sub("child", child)? {
                Value::Series(s) => s.values(),
                Value::Events(rows) => {
                    if *func == AggFn::Count {
                        return Ok(Value::Number(rows.len() as f64));
                    }
                    rows.iter()
                        .map(|r| {
                            r.value.as_number().ok_or_else(|| {
                                mismatch(&here, format!("event {} is not numeric", r.metric))
                            })
                        })
                        .collect::<Result<Vec<f64>, _>>()?
                }
                other => return Err(mismatch(&here, format!("cannot aggregate {other:?}"))),
            };
            ops::aggregate(&values, *func)
                .map(Value::Number)
                .map_err(|e| relabel(e, &here))
        }
        QueryIR::Compare { kind, left, right } => {
            let l = number(sub("left", left)?, &here)?;
            let r = number(sub("right", right)?, &here)?;
            Ok(match kind {
                CompareKind::Diff => Value::Number(l - r),
                CompareKind::Greater => Value::Bool(l > r),
                CompareKind::Less => Value::Bool(l < r),
            })
        }
        QueryIR::ThresholdFilter {
            child,
            cmp,
            threshold,
        } => {
            let Value::Series(s) = sub("child", child)? else {
                return Err(mismatch(&here, "child is not a series"));
            };
            let t = number(sub("threshold", threshold)?, &here)?;
            Ok(Value::DaySet(
                s.points
                    .iter()
                    .filter(|(_, v)| cmp.holds(*v, t))
                    .map(|(d, _)| *d)
                    .collect(),
            ))
        }
        QueryIR::Const { value } => Ok(Value::Number(*value)),
        QueryIR::CountDays { child } => Ok(Value::Number(sub("child", child)?.days().len() as f64)),
        QueryIR::ConsecutiveRun {
            child,
            min_len,
            output,
        } => {
            let days = sub("child", child)?.days();
            let (exists, run) = ops::consecutive_run(&days, *min_len);
            Ok(match output {
                RunOutput::Exists => Value::Bool(exists),
                RunOutput::MaxRun => Value::Number(run as f64),
            })
        }
        QueryIR::Trend { child, epsilon } => {
            let Value::Series(s) = sub("child", child)? else {
                return Err(mismatch(&here, "child is not a series"));
            };
            ops::trend_direction(&s, *epsilon)
                .map(|l| Value::Text(l.as_str().to_string()))
                .map_err(|e| relabel(e, &here))
        }
        QueryIR::ArgExtreme { child, extreme } => {
            let Value::Series(s) = sub("child", child)? else {
                return Err(mismatch(&here, "child is not a series"));
            };
            let mut best: Option<(NaiveDate, f64)> = None;
            for (d, v) in s.points {
                let better = match best {
                    None => true,
                    Some((_, b)) => match extreme {
                        super::Extreme::Max => v > b,
                        super::Extreme::Min => v < b,
                    },
                };
                if better {
                    best = Some((d, v));
                }
            }
            best.map(|(d, _)| Value::Date(d))
                .ok_or(QueryError::EmptyWindow { node: here })
        }
        QueryIR::DominantCategory { child, field } => {
            let Value::Events(rows) = sub("child", child)? else {
                return Err(mismatch(&here, "child is not an event set"));
            };
            ops::dominant_category(
                rows.iter()
                    .filter(|r| &r.metric == field)
                    .filter_map(|r| r.value.as_category()),
            )
            .map(Value::Text)
            .map_err(|e| relabel(e, &here))
        }
        QueryIR::CohortStat {
            metric,
            window,
            stat,
        } => ops::cohort_stat(ds, metric, *window, *stat)
            .map(Value::Number)
            .map_err(|e| relabel(e, &here)),
        QueryIR::RankUsers {
            metric,
            window,
            order,
            k,
        } => Ok(Value::Users(ops::rank_users(ds, metric, *window, *order, *k as usize))),
        QueryIR::SetOp { kind, children } => {
            let mut acc: Option<BTreeSet<NaiveDate>> = None;
            for c in children {
                let these: BTreeSet<NaiveDate> = sub("children", c)?.days().into_iter().collect();
                acc = Some(match (acc, kind) {
                    (None, _) => these,
                    (Some(a), SetOpKind::Intersect) => a.intersection(&these).copied().collect(),
                    (Some(a), SetOpKind::Union) => a.union(&these).copied().collect(),
                });
            }
            Ok(Value::DaySet(acc.unwrap_or_default().into_iter().collect()))
        }
        QueryIR::Tuple { children } => Ok(Value::Tuple(
            children
                .iter()
                .map(|c| sub("children", c))
                .collect::<Result<_, _>>()?,
        )),
    }
}

fn yes_no(b: bool) -> String {
    if b { "yes" } else { "no" }.to_string()
}

/// Shapes a root value into an answer; list-like values become a scalar,
/// pair or list depending on how many items they hold.
pub(crate) fn to_answer(v: Value, here: &str) -> Result<AnswerValue, QueryError> {
    let items = match v {
        Value::Number(x) => return Ok(AnswerValue::Number(x)),
        Value::Bool(b) => return Ok(AnswerValue::YesNo(b)),
        Value::Text(t) => return Ok(AnswerValue::Text(t)),
        Value::Date(d) => return Ok(AnswerValue::Text(d.to_string())),
        Value::Series(s) => s.values().into_iter().map(Item::Number).collect(),
        Value::DaySet(d) => d.into_iter().map(Item::Date).collect(),
        Value::Users(u) => u.into_iter().map(|(u, _)| Item::Text(u.to_string())).collect(),
        Value::Tuple(vals) => vals
            .into_iter()
            .map(|v| match v {
                Value::Number(x) => Ok(Item::Number(x)),
                Value::Bool(b) => Ok(Item::Text(yes_no(b))),
                Value::Text(t) => Ok(Item::Text(t)),
                Value::Date(d) => Ok(Item::Date(d)),
                other => Err(mismatch(here, format!("tuple member {other:?} is not scalar"))),
            })
            .collect::<Result<Vec<_>, _>>()?,
        Value::Events(_) => {
            return Err(QueryError::Unsupported {
                node: here.to_string(),
                detail: "event sets are not answers".into(),
            })
        }
    };
    AnswerValue::from_items(items).ok_or_else(|| QueryError::Cardinality {
        node: here.to_string(),
        detail: "no items".into(),
    })
}
