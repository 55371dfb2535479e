//! Query algebra: an operator-tree IR over the aligned lifelog, an
//! in-memory interpreter, and a compiler to SQL over the relational schema.

mod answer;
mod evidence;
mod interp;
pub mod ops;
mod sql;

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::lifelog::registry::{registry, Granularity, ValueKind};
use crate::lifelog::{AlignedDataset, DomainTag, TimeWindow, UserId};

pub use answer::{format_number, AnswerType, AnswerValue, Item};
pub use evidence::evidence_items;
pub use interp::{evaluate, interpret, Value};
pub use ops::{
    aggregate, cohort_stat, consecutive_run, dominant_category, rank_users, trend_direction, trend_fit,
    user_means, Series, TrendFit, TrendLabel, DEFAULT_TREND_EPSILON,
};
pub use sql::{compile_to_sql, decode_result, result_contract, ResultContract, ScalarKind};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum QueryError {
    #[error("empty window at {node}")]
    EmptyWindow { node: String },
    #[error("unknown metric {metric:?} at {node}")]
    UnknownMetric { node: String, metric: String },
    #[error("type mismatch at {node}: {detail}")]
    TypeMismatch { node: String, detail: String },
    #[error("too few points at {node}: {got} (need at least 3)")]
    TooFewPoints { node: String, got: usize },
    #[error("window {window} outside dataset span {span} at {node}")]
    WindowOutOfSpan {
        node: String,
        window: TimeWindow,
        span: TimeWindow,
    },
    #[error("answer cardinality at {node}: {detail}")]
    Cardinality { node: String, detail: String },
    #[error("unsupported node {node}: {detail}")]
    Unsupported { node: String, detail: String },
    #[error("result shape mismatch: {0}")]
    ShapeMismatch(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AggFn {
    Mean,
    Min,
    Max,
    Sum,
    Count,
    Median,
    Percentile(u8),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CohortStatFn {
    Mean,
    Median,
    Percentile(u8),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CompareKind {
    /// left minus right
    Diff,
    Greater,
    Less,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Cmp {
    Gt,
    Ge,
    Lt,
    Le,
}

impl Cmp {
    pub fn holds(self, a: f64, b: f64) -> bool {
        match self {
            Cmp::Gt => a > b,
            Cmp::Ge => a >= b,
            Cmp::Lt => a < b,
            Cmp::Le => a <= b,
        }
    }

    pub fn sql(self) -> &'static str {
        match self {
            Cmp::Gt => ">",
            Cmp::Ge => ">=",
            Cmp::Lt => "<",
            Cmp::Le => "<=",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Extreme {
    Min,
    Max,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Order {
    Asc,
    Desc,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunOutput {
    Exists,
    MaxRun,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SetOpKind {
    Intersect,
    Union,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct EventPredicate {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub metric: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub category: Option<String>,
}

/// Operator tree. Leaves select data; inner nodes transform it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case")]
pub enum QueryIR {
    SelectSeries {
        user: UserId,
        domain: DomainTag,
        metric: String,
        window: TimeWindow,
    },
    SelectEvents {
        user: UserId,
        domain: DomainTag,
        window: TimeWindow,
        #[serde(default)]
        predicate: EventPredicate,
    },
    /// Restricts `target` to the days present in every member of `days`.
    AlignDays {
        target: Box<QueryIR>,
        days: Vec<QueryIR>,
    },
    Aggregate {
        func: AggFn,
        child: Box<QueryIR>,
    },
    Compare {
        kind: CompareKind,
        left: Box<QueryIR>,
        right: Box<QueryIR>,
    },
    ThresholdFilter {
        child: Box<QueryIR>,
        cmp: Cmp,
        threshold: Box<QueryIR>,
    },
    Const {
        value: f64,
    },
    CountDays {
        child: Box<QueryIR>,
    },
    ConsecutiveRun {
        child: Box<QueryIR>,
        min_len: u32,
        output: RunOutput,
    },
    Trend {
        child: Box<QueryIR>,
        #[serde(default = "default_epsilon")]
        epsilon: f64,
    },
    ArgExtreme {
        child: Box<QueryIR>,
        extreme: Extreme,
    },
    DominantCategory {
        child: Box<QueryIR>,
        field: String,
    },
    CohortStat {
        metric: String,
        window: TimeWindow,
        stat: CohortStatFn,
    },
    RankUsers {
        metric: String,
        window: TimeWindow,
        order: Order,
        k: u32,
    },
    SetOp {
        kind: SetOpKind,
        children: Vec<QueryIR>,
    },
    Tuple {
        children: Vec<QueryIR>,
    },
}

fn default_epsilon() -> f64 {
    DEFAULT_TREND_EPSILON
}

/// Kind of value a node produces.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Kind {
    Series,
    Events,
    DaySet,
    Number,
    Bool,
    Text,
    Date,
    Users,
    Tuple,
}

impl fmt::Display for Kind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{self:?}")
    }
}

impl QueryIR {
    pub fn op_name(&self) -> &'static str {
        match self {
            QueryIR::SelectSeries { .. } => "select_series",
            QueryIR::SelectEvents { .. } => "select_events",
            QueryIR::AlignDays { .. } => "align_days",
            QueryIR::Aggregate { .. } => "aggregate",
            QueryIR::Compare { .. } => "compare",
            QueryIR::ThresholdFilter { .. } => "threshold_filter",
            QueryIR::Const { .. } => "const",
            QueryIR::CountDays { .. } => "count_days",
            QueryIR::ConsecutiveRun { .. } => "consecutive_run",
            QueryIR::Trend { .. } => "trend",
            QueryIR::ArgExtreme { .. } => "arg_extreme",
            QueryIR::DominantCategory { .. } => "dominant_category",
            QueryIR::CohortStat { .. } => "cohort_stat",
            QueryIR::RankUsers { .. } => "rank_users",
            QueryIR::SetOp { .. } => "set_op",
            QueryIR::Tuple { .. } => "tuple",
        }
    }

    /// Direct children with their role names.
    pub fn children(&self) -> Vec<(&'static str, &QueryIR)> {
        match self {
            QueryIR::SelectSeries { .. }
            | QueryIR::SelectEvents { .. }
            | QueryIR::Const { .. }
            | QueryIR::CohortStat { .. }
            | QueryIR::RankUsers { .. } => vec![],
            QueryIR::AlignDays { target, days } => std::iter::once(("target", &**target))
                .chain(days.iter().map(|d| ("days", d)))
                .collect(),
            QueryIR::Aggregate { child, .. }
            | QueryIR::CountDays { child }
            | QueryIR::ConsecutiveRun { child, .. }
            | QueryIR::Trend { child, .. }
            | QueryIR::ArgExtreme { child, .. }
            | QueryIR::DominantCategory { child, .. } => vec![("child", &**child)],
            QueryIR::Compare { left, right, .. } => vec![("left", &**left), ("right", &**right)],
            QueryIR::ThresholdFilter { child, threshold, .. } => {
                vec![("child", &**child), ("threshold", &**threshold)]
            }
            QueryIR::SetOp { children, .. } | QueryIR::Tuple { children } => {
                children.iter().map(|c| ("children", c)).collect()
            }
        }
    }

    /// Users referenced by the program; cohort nodes contribute none.
    pub fn users(&self) -> Vec<UserId> {
        let mut out = Vec::new();
        self.walk(&mut |n| match n {
            QueryIR::SelectSeries { user, .. } | QueryIR::SelectEvents { user, .. } if !out.contains(user) => {
                out.push(user.clone());
            }
            _ => {}
        });
        out.sort();
        out
    }

    pub fn uses_cohort(&self) -> bool {
        let mut any = false;
        self.walk(&mut |n| {
            if matches!(n, QueryIR::CohortStat { .. } | QueryIR::RankUsers { .. }) {
                any = true;
            }
        });
        any
    }

    /// Domains touched, in canonical order.
    pub fn domains(&self) -> Vec<DomainTag> {
        let mut set = std::collections::BTreeSet::new();
        self.walk(&mut |n| match n {
            QueryIR::SelectSeries { domain, .. } | QueryIR::SelectEvents { domain, .. } => {
                set.insert(*domain);
            }
            QueryIR::CohortStat { metric, .. } | QueryIR::RankUsers { metric, .. } => {
                if let Some(spec) = registry().get(metric) {
                    set.insert(spec.domain);
                }
            }
            _ => {}
        });
        DomainTag::ALL.into_iter().filter(|d| set.contains(d)).collect()
    }

    /// Smallest window covering every window in the program.
    pub fn window(&self) -> Option<TimeWindow> {
        let mut acc: Option<TimeWindow> = None;
        self.walk(&mut |n| {
            let w = match n {
                QueryIR::SelectSeries { window, .. }
                | QueryIR::SelectEvents { window, .. }
                | QueryIR::CohortStat { window, .. }
                | QueryIR::RankUsers { window, .. } => Some(*window),
                _ => None,
            };
            if let Some(w) = w {
                acc = Some(match acc {
                    Some(a) => a.union(&w),
                    None => w,
                });
            }
        });
        acc
    }

    pub fn walk<'a>(&'a self, f: &mut dyn FnMut(&'a QueryIR)) {
        f(self);
        for (_, c) in self.children() {
            c.walk(f);
        }
    }

    /// Statically checks kinds, metric names and windows. Returns the root
    /// kind.
    pub fn check(&self, span: Option<TimeWindow>) -> Result<Kind, QueryError> {
        check_node(self, "root", span)
    }
}

pub(crate) fn node_label(path: &str, node: &QueryIR) -> String {
    format!("{path}<{}>", node.op_name())
}

fn check_window(
    node: &str,
    window: &TimeWindow,
    span: Option<TimeWindow>,
) -> Result<(), QueryError> {
    if let Some(span) = span {
        if !span.covers(window) {
            return Err(QueryError::WindowOutOfSpan {
                node: node.to_string(),
                window: *window,
                span,
            });
        }
    }
    Ok(())
}

fn daily_numeric(node: &str, metric: &str) -> Result<DomainTag, QueryError> {
    let spec = registry().get(metric).ok_or_else(|| QueryError::UnknownMetric {
        node: node.to_string(),
        metric: metric.to_string(),
    })?;
    if spec.granularity != Granularity::Daily || spec.kind != ValueKind::Numeric {
        return Err(QueryError::TypeMismatch {
            node: node.to_string(),
            detail: format!("{metric} is not a daily numeric metric"),
        });
    }
    Ok(spec.domain)
}

fn expect(node: &str, role: &str, got: Kind, allowed: &[Kind]) -> Result<(), QueryError> {
    if allowed.contains(&got) {
        Ok(())
    } else {
        Err(QueryError::TypeMismatch {
            node: node.to_string(),
            detail: format!("{role} produces {got}, expected one of {allowed:?}"),
        })
    }
}

fn check_node(n: &QueryIR, path: &str, span: Option<TimeWindow>) -> Result<Kind, QueryError> {
    let here = node_label(path, n);
    let sub = |role: &str, c: &QueryIR| check_node(c, &format!("{path}.{role}"), span);
    match n {
        QueryIR::SelectSeries {
            domain,
            metric,
            window,
            ..
        } => {
            let d = daily_numeric(&here, metric)?;
            if d != *domain {
                return Err(QueryError::TypeMismatch {
                    node: here,
                    detail: format!("{metric} belongs to {}, not {}", d.as_str(), domain.as_str()),
                });
            }
            check_window(&here, window, span)?;
            Ok(Kind::Series)
        }
        QueryIR::SelectEvents {
            domain,
            window,
            predicate,
            ..
        } => {
            if let Some(m) = &predicate.metric {
                let spec = registry().get(m).ok_or_else(|| QueryError::UnknownMetric {
                    node: here.clone(),
                    metric: m.clone(),
                })?;
                if spec.granularity != Granularity::Event || spec.domain != *domain {
                    return Err(QueryError::TypeMismatch {
                        node: here,
                        detail: format!("{m} is not an event metric of {}", domain.as_str()),
                    });
                }
            }
            check_window(&here, window, span)?;
            Ok(Kind::Events)
        }
        QueryIR::AlignDays { target, days } => {
            let t = sub("target", target)?;
            expect(&here, "target", t, &[Kind::Series, Kind::Events, Kind::DaySet])?;
            if days.is_empty() {
                return Err(QueryError::TypeMismatch {
                    node: here,
                    detail: "no day sources".into(),
                });
            }
            for d in days {
                let k = sub("days", d)?;
                expect(&here, "days", k, &[Kind::Series, Kind::Events, Kind::DaySet])?;
            }
            Ok(t)
        }
        QueryIR::Aggregate { func, child } => {
            let k = sub("child", child)?;
            expect(&here, "child", k, &[Kind::Series, Kind::Events])?;
            if let AggFn::Percentile(p) = func {
                if !(1..=100).contains(p) {
                    return Err(QueryError::TypeMismatch {
                        node: here,
                        detail: format!("percentile {p} outside 1..=100"),
                    });
                }
            }
            Ok(Kind::Number)
        }
        QueryIR::Compare { kind, left, right } => {
            let l = sub("left", left)?;
            let r = sub("right", right)?;
            expect(&here, "left", l, &[Kind::Number])?;
            expect(&here, "right", r, &[Kind::Number])?;
            Ok(match kind {
                CompareKind::Diff => Kind::Number,
                _ => Kind::Bool,
            })
        }
        QueryIR::ThresholdFilter { child, threshold, .. } => {
            let c = sub("child", child)?;
            expect(&here, "child", c, &[Kind::Series])?;
            let t = sub("threshold", threshold)?;
            expect(&here, "threshold", t, &[Kind::Number])?;
            Ok(Kind::DaySet)
        }
        QueryIR::Const { value } => {
            if !value.is_finite() {
                return Err(QueryError::TypeMismatch {
                    node: here,
                    detail: "constant is not finite".into(),
                });
            }
            Ok(Kind::Number)
        }
        QueryIR::CountDays { child } => {
            let c = sub("child", child)?;
            expect(&here, "child", c, &[Kind::DaySet, Kind::Series])?;
            Ok(Kind::Number)
        }
        QueryIR::ConsecutiveRun {
            child,
            min_len,
            output,
        } => {
            let c = sub("child", child)?;
            expect(&here, "child", c, &[Kind::DaySet, Kind::Series])?;
            if *min_len == 0 {
                return Err(QueryError::TypeMismatch {
                    node: here,
                    detail: "min_len must be at least 1".into(),
                });
            }
            Ok(match output {
                RunOutput::Exists => Kind::Bool,
                RunOutput::MaxRun => Kind::Number,
            })
        }
        QueryIR::Trend { child, epsilon } => {
            let c = sub("child", child)?;
            expect(&here, "child", c, &[Kind::Series])?;
            if !(epsilon.is_finite() && *epsilon >= 0.0) {
                return Err(QueryError::TypeMismatch {
                    node: here,
                    detail: "epsilon must be finite and non-negative".into(),
                });
            }
            Ok(Kind::Text)
        }
        QueryIR::ArgExtreme { child, .. } => {
            let c = sub("child", child)?;
            expect(&here, "child", c, &[Kind::Series])?;
            Ok(Kind::Date)
        }
        QueryIR::DominantCategory { child, field } => {
            let c = sub("child", child)?;
            expect(&here, "child", c, &[Kind::Events])?;
            let spec = registry().get(field).ok_or_else(|| QueryError::UnknownMetric {
                node: here.clone(),
                metric: field.clone(),
            })?;
            if spec.kind != ValueKind::Categorical {
                return Err(QueryError::TypeMismatch {
                    node: here,
                    detail: format!("{field} is not categorical"),
                });
            }
            Ok(Kind::Text)
        }
        QueryIR::CohortStat {
            metric,
            window,
            stat,
        } => {
            daily_numeric(&here, metric)?;
            check_window(&here, window, span)?;
            if let CohortStatFn::Percentile(p) = stat {
                if !(1..=100).contains(p) {
                    return Err(QueryError::TypeMismatch {
                        node: here,
                        detail: format!("percentile {p} outside 1..=100"),
                    });
                }
            }
            Ok(Kind::Number)
        }
        QueryIR::RankUsers {
            metric, window, k, ..
        } => {
            daily_numeric(&here, metric)?;
            check_window(&here, window, span)?;
            if *k == 0 {
                return Err(QueryError::TypeMismatch {
                    node: here,
                    detail: "k must be at least 1".into(),
                });
            }
            Ok(Kind::Users)
        }
        QueryIR::SetOp { children, .. } => {
            if children.len() < 2 {
                return Err(QueryError::TypeMismatch {
                    node: here,
                    detail: "set operation needs at least two operands".into(),
                });
            }
            for c in children {
                let k = sub("children", c)?;
                expect(&here, "children", k, &[Kind::DaySet])?;
            }
            Ok(Kind::DaySet)
        }
        QueryIR::Tuple { children } => {
            if children.len() < 2 {
                return Err(QueryError::TypeMismatch {
                    node: here,
                    detail: "tuple needs at least two members".into(),
                });
            }
            for c in children {
                let k = sub("children", c)?;
                expect(
                    &here,
                    "children",
                    k,
                    &[Kind::Number, Kind::Bool, Kind::Text, Kind::Date],
                )?;
            }
            Ok(Kind::Tuple)
        }
    }
}

/// Checks `program` against the dataset span and interprets it.
pub fn check_program(program: &QueryIR, ds: &AlignedDataset) -> Result<Kind, QueryError> {
    program.check(Some(ds.date_span()))
}
