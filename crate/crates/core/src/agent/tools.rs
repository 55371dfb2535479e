//! Tool registry: retrieval, cohort operators and the calculator.

use std::collections::BTreeMap;

use chrono::NaiveDate;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::Value as Json;
use thiserror::Error;

use super::compute::{self, Binding, EventObs};
use crate::lifelog::registry::registry;
use crate::lifelog::{AlignedDataset, DomainTag, TimeWindow, UserId};
use crate::qlang::{
    cohort_stat, compile_to_sql, consecutive_run, rank_users, trend_fit, user_means, Cmp,
    CohortStatFn, Order, QueryIR, Series, DEFAULT_TREND_EPSILON,
};
use crate::store::{Cell, ExecLimits, RelationalStore};

/// Rows a retrieval tool may return.
pub const ROW_CAP: usize = 1000;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ToolError {
    #[error("unknown tool {0:?}")]
    UnknownTool(String),
    #[error("bad arguments for {tool}: {detail}")]
    Arg { tool: String, detail: String },
    #[error("{tool} failed: {detail}")]
    Exec { tool: String, detail: String },
    #[error("{tool} would return more than {cap} rows")]
    RowCap { tool: String, cap: usize },
    #[error("empty window in {tool}: {detail}")]
    EmptyWindow { tool: String, detail: String },
}

impl ToolError {
    pub fn kind(&self) -> &'static str {
        match self {
            ToolError::UnknownTool(_) | ToolError::Arg { .. } => "tool_arg_error",
            ToolError::Exec { .. } => "tool_exec_error",
            ToolError::RowCap { .. } => "row_cap",
            ToolError::EmptyWindow { .. } => "empty_window",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToolCall {
    pub tool: String,
    pub args: serde_json::Map<String, Json>,
}

/// Structured tool output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Payload {
    Rows {
        columns: Vec<String>,
        rows: Vec<Vec<Cell>>,
    },
    Series {
        points: Vec<(NaiveDate, f64)>,
        /// Days more than the anomaly factor times the IQR away from the mean.
        anomalies: Vec<NaiveDate>,
    },
    Scalar {
        value: f64,
    },
    Label {
        value: String,
    },
    Ranking {
        users: Vec<(String, f64)>,
    },
    Comparison {
        group_a: Vec<String>,
        group_b: Vec<String>,
        mean_a: f64,
        mean_b: f64,
        delta: f64,
    },
    ThresholdCheck {
        days: Vec<NaiveDate>,
        count: usize,
        longest_run: u32,
    },
    Trend {
        slope: f64,
        intercept: f64,
        n: usize,
        label: String,
    },
    Value {
        value: Binding,
    },
    Note {
        text: String,
    },
    Error {
        error: String,
        message: String,
    },
}

impl Payload {
    pub fn error(e: &ToolError) -> Self {
        Payload::Error {
            error: e.kind().into(),
            message: e.to_string(),
        }
    }
}

pub struct ToolOutput {
    pub payload: Payload,
    pub sql_trace: Option<String>,
    pub binding: Option<Binding>,
}

pub struct ToolSpec {
    pub name: &'static str,
    pub args: &'static str,
    pub output: &'static str,
    pub about: &'static str,
}

pub const REGISTRY: &[ToolSpec] = &[
    ToolSpec {
        name: "daily_series",
        args: r#"{"user", "metric", "window", "name"?}"#,
        output: "series",
        about: "daily values of one metric for one user, with anomalous days flagged",
    },
    ToolSpec {
        name: "events",
        args: r#"{"user", "domain", "window", "metric"?, "category"?, "name"?}"#,
        output: "rows",
        about: "event records (meals, episodes) for one user",
    },
    ToolSpec {
        name: "threshold_check",
        args: r#"{"user", "metric", "window", "cmp": ">"|">="|"<"|"<=", "threshold", "name"?}"#,
        output: "threshold_check",
        about: "days on which the metric satisfies the comparison, with count and longest run",
    },
    ToolSpec {
        name: "trend",
        args: r#"{"user", "metric", "window", "epsilon"?, "name"?}"#,
        output: "trend",
        about: "least-squares slope per day and the increasing/decreasing/stable label",
    },
    ToolSpec {
        name: "cohort_summary",
        args: r#"{"metric", "window", "stat": "mean"|"median"|"percentile", "p"?, "name"?}"#,
        output: "scalar",
        about: "statistic over users of each user's window mean",
    },
    ToolSpec {
        name: "rank_users",
        args: r#"{"metric", "window", "order": "asc"|"desc", "k", "name"?}"#,
        output: "ranking",
        about: "top-k users by window mean, ties by user id",
    },
    ToolSpec {
        name: "group_compare",
        args: r#"{"metric", "window", "split_metric", "cmp", "threshold", "name"?}"#,
        output: "comparison",
        about: "mean of the metric for users whose split_metric mean passes the comparison, minus the rest",
    },
    ToolSpec {
        name: "compute",
        args: r#"{"expression", "name"}"#,
        output: "value",
        about: "evaluate arithmetic and list operators over named results (see the calculator reference)",
    },
];

/// Registry description shown to the model.
pub fn registry_text() -> String {
    REGISTRY
        .iter()
        .map(|t| format!("- {} {} -> {}: {}", t.name, t.args, t.output, t.about))
        .collect::<Vec<_>>()
        .join("\n")
}

pub struct ToolContext<'a> {
    pub ds: &'a AlignedDataset,
    pub store: &'a RelationalStore,
    /// Multiplier on the IQR for the anomaly flag.
    pub anomaly_iqr: f64,
}

fn arg_err(tool: &str, detail: impl Into<String>) -> ToolError {
    ToolError::Arg {
        tool: tool.into(),
        detail: detail.into(),
    }
}

fn exec_err(tool: &str, detail: impl ToString) -> ToolError {
    ToolError::Exec {
        tool: tool.into(),
        detail: detail.to_string(),
    }
}

fn parse_args<T: DeserializeOwned>(tool: &str, args: &serde_json::Map<String, Json>) -> Result<T, ToolError> {
    serde_json::from_value(Json::Object(args.clone())).map_err(|e| arg_err(tool, e.to_string()))
}

#[derive(Debug, Deserialize)]
#[serde(untagged)]
enum NumArg {
    Num(f64),
    Text(String),
}

impl NumArg {
    fn get(&self, tool: &str) -> Result<f64, ToolError> {
        match self {
            NumArg::Num(v) => Ok(*v),
            NumArg::Text(t) => t.trim().parse().map_err(|_| arg_err(tool, format!("{t:?} is not a number"))),
        }
    }
}

impl<'a> ToolContext<'a> {
    fn user(&self, tool: &str, u: &str) -> Result<UserId, ToolError> {
        let id = UserId::new(u).map_err(|e| arg_err(tool, e.to_string()))?;
        if !self.ds.users().contains(&id) {
            return Err(arg_err(tool, format!("unknown user {u:?}")));
        }
        Ok(id)
    }

    /// Accepts `start..end` or `Nd` (the N days ending at the reference date).
    fn window(&self, tool: &str, w: &str) -> Result<TimeWindow, ToolError> {
        let w = w.trim();
        let window = if let Some(n) = w.strip_suffix('d').and_then(|n| n.trim().parse::<u32>().ok()) {
            TimeWindow::ending_at(self.ds.reference_date(), n)
        } else {
            w.parse().map_err(|e: crate::lifelog::LifelogError| arg_err(tool, e.to_string()))?
        };
        let span = self.ds.date_span();
        if !span.covers(&window) {
            return Err(arg_err(tool, format!("window {window} outside data span {span}")));
        }
        Ok(window)
    }

    fn daily_metric(&self, tool: &str, m: &str) -> Result<DomainTag, ToolError> {
        registry()
            .daily_numeric()
            .find(|s| s.name == m)
            .map(|s| s.domain)
            .ok_or_else(|| arg_err(tool, format!("unknown daily metric {m:?}")))
    }

    fn run_sql(&self, tool: &str, sql: &str) -> Result<crate::store::ResultTable, ToolError> {
        let limits = ExecLimits {
            max_rows: ROW_CAP,
            ..ExecLimits::default()
        };
        self.store.execute_select(sql, limits).map_err(|e| match e {
            crate::store::StoreError::RowLimitExceeded(cap) => ToolError::RowCap { tool: tool.into(), cap },
            other => exec_err(tool, other),
        })
    }

    fn series(&self, tool: &str, user: &str, metric: &str, window: &str) -> Result<(Series, String), ToolError> {
        let user = self.user(tool, user)?;
        let domain = self.daily_metric(tool, metric)?;
        let window = self.window(tool, window)?;
        let node = QueryIR::SelectSeries {
            user,
            domain,
            metric: metric.into(),
            window,
        };
        let sql = compile_to_sql(&node).map_err(|e| exec_err(tool, e))?;
        let table = self.run_sql(tool, &sql)?;
        let mut points = Vec::with_capacity(table.rows.len());
        for row in &table.rows {
            let date = match row.first() {
                Some(Cell::Text(t)) => t.parse::<NaiveDate>().map_err(|e| exec_err(tool, e))?,
                other => return Err(exec_err(tool, format!("bad date cell {other:?}"))),
            };
            let value = row
                .get(1)
                .and_then(Cell::as_number)
                .ok_or_else(|| exec_err(tool, "bad value cell"))?;
            points.push((date, value));
        }
        Ok((Series { window, points }, sql))
    }

    fn anomalies(&self, s: &Series) -> Vec<NaiveDate> {
        if s.points.len() < 4 {
            return Vec::new();
        }
        let mut v = s.values();
        v.sort_by(|a, b| a.total_cmp(b));
        let q = |p: f64| {
            let idx = p * (v.len() - 1) as f64;
            let lo = idx.floor() as usize;
            let hi = idx.ceil() as usize;
            v[lo] + (v[hi] - v[lo]) * (idx - lo as f64)
        };
        let iqr = q(0.75) - q(0.25);
        let mean = v.iter().sum::<f64>() / v.len() as f64;
        s.points
            .iter()
            .filter(|(_, x)| iqr > 0.0 && (x - mean).abs() > self.anomaly_iqr * iqr)
            .map(|(d, _)| *d)
            .collect()
    }

    pub fn execute(&self, call: &ToolCall) -> Result<ToolOutput, ToolError> {
        let t = call.tool.as_str();
        match t {
            "daily_series" => {
                #[derive(Deserialize)]
                #[serde(deny_unknown_fields)]
                struct A {
                    user: String,
                    metric: String,
                    window: String,
                    #[serde(default)]
                    #[allow(dead_code)]
                    name: Option<String>,
                }
                let a: A = parse_args(t, &call.args)?;
                let (s, sql) = self.series(t, &a.user, &a.metric, &a.window)?;
                Ok(ToolOutput {
                    payload: Payload::Series {
                        anomalies: self.anomalies(&s),
                        points: s.points.clone(),
                    },
                    sql_trace: Some(sql),
                    binding: Some(Binding::Series(s)),
                })
            }
            "events" => {
                #[derive(Deserialize)]
                #[serde(deny_unknown_fields)]
                struct A {
                    user: String,
                    domain: String,
                    window: String,
                    #[serde(default)]
                    metric: Option<String>,
                    #[serde(default)]
                    category: Option<String>,
                    #[serde(default)]
                    #[allow(dead_code)]
                    name: Option<String>,
                }
                let a: A = parse_args(t, &call.args)?;
                let user = self.user(t, &a.user)?;
                let domain: DomainTag = a.domain.parse().map_err(|e: String| arg_err(t, e))?;
                let window = self.window(t, &a.window)?;
                if let Some(m) = &a.metric {
                    if registry().get(m).is_none() {
                        return Err(arg_err(t, format!("unknown metric {m:?}")));
                    }
                }
                let q = |s: &str| format!("'{}'", s.replace('\'', "''"));
                let mut sql = format!(
                    "SELECT date, start_ts, metric, value_num, value_text FROM events \
                     WHERE user_id = {} AND domain = {} AND date BETWEEN {} AND {}",
                    q(user.as_str()),
                    q(domain.as_str()),
                    q(&window.start.to_string()),
                    q(&window.end.to_string())
                );
                if let Some(m) = &a.metric {
                    sql.push_str(&format!(" AND metric = {}", q(m)));
                }
                if let Some(c) = &a.category {
                    sql.push_str(&format!(" AND value_text = {}", q(c)));
                }
                sql.push_str(" ORDER BY date, start_ts, event_id");
                let table = self.run_sql(t, &sql)?;
                let mut obs = Vec::with_capacity(table.rows.len());
                for row in &table.rows {
                    let text = |i: usize| match row.get(i) {
                        Some(Cell::Text(s)) => Some(s.clone()),
                        _ => None,
                    };
                    obs.push(EventObs {
                        date: text(0)
                            .and_then(|d| d.parse().ok())
                            .ok_or_else(|| exec_err(t, "bad date cell"))?,
                        start_ts: text(1).unwrap_or_default(),
                        metric: text(2).unwrap_or_default(),
                        value_num: row.get(3).and_then(|c| match c {
                            Cell::Number(v) => Some(*v),
                            _ => None,
                        }),
                        category: text(4),
                    });
                }
                Ok(ToolOutput {
                    payload: Payload::Rows {
                        columns: table.columns,
                        rows: table.rows,
                    },
                    sql_trace: Some(sql),
                    binding: Some(Binding::Events(obs)),
                })
            }
            "threshold_check" => {
                #[derive(Deserialize)]
                #[serde(deny_unknown_fields)]
                struct A {
                    user: String,
                    metric: String,
                    window: String,
                    cmp: String,
                    threshold: NumArg,
                    #[serde(default)]
                    #[allow(dead_code)]
                    name: Option<String>,
                }
                let a: A = parse_args(t, &call.args)?;
                let cmp = parse_cmp(t, &a.cmp)?;
                let threshold = a.threshold.get(t)?;
                let (s, sql) = self.series(t, &a.user, &a.metric, &a.window)?;
                let days: Vec<NaiveDate> = s
                    .points
                    .iter()
                    .filter(|(_, v)| cmp.holds(*v, threshold))
                    .map(|(d, _)| *d)
                    .collect();
                let (_, longest_run) = consecutive_run(&days, 1);
                Ok(ToolOutput {
                    payload: Payload::ThresholdCheck {
                        count: days.len(),
                        longest_run,
                        days: days.clone(),
                    },
                    sql_trace: Some(sql),
                    binding: Some(Binding::Days(days)),
                })
            }
            "trend" => {
                #[derive(Deserialize)]
                #[serde(deny_unknown_fields)]
                struct A {
                    user: String,
                    metric: String,
                    window: String,
                    #[serde(default)]
                    epsilon: Option<f64>,
                    #[serde(default)]
                    #[allow(dead_code)]
                    name: Option<String>,
                }
                let a: A = parse_args(t, &call.args)?;
                let (s, sql) = self.series(t, &a.user, &a.metric, &a.window)?;
                let fit = trend_fit(&s).map_err(|e| ToolError::EmptyWindow {
                    tool: t.into(),
                    detail: e.to_string(),
                })?;
                let label = fit.label(a.epsilon.unwrap_or(DEFAULT_TREND_EPSILON)).as_str().to_string();
                Ok(ToolOutput {
                    payload: Payload::Trend {
                        slope: fit.slope,
                        intercept: fit.intercept,
                        n: fit.n,
                        label: label.clone(),
                    },
                    sql_trace: Some(sql),
                    binding: Some(Binding::Text(label)),
                })
            }
            "cohort_summary" => {
                #[derive(Deserialize)]
                #[serde(deny_unknown_fields)]
                struct A {
                    metric: String,
                    window: String,
                    stat: String,
                    #[serde(default)]
                    p: Option<u8>,
                    #[serde(default)]
                    #[allow(dead_code)]
                    name: Option<String>,
                }
                let a: A = parse_args(t, &call.args)?;
                self.daily_metric(t, &a.metric)?;
                let window = self.window(t, &a.window)?;
                let stat = match (a.stat.as_str(), a.p) {
                    ("mean", None) => CohortStatFn::Mean,
                    ("median", None) => CohortStatFn::Median,
                    ("percentile", Some(p)) if p <= 100 => CohortStatFn::Percentile(p),
                    (s, p) => return Err(arg_err(t, format!("bad stat {s:?} with p {p:?}"))),
                };
                let node = QueryIR::CohortStat {
                    metric: a.metric.clone(),
                    window,
                    stat,
                };
                let value = cohort_stat(self.ds, &a.metric, window, stat).map_err(|e| ToolError::EmptyWindow {
                    tool: t.into(),
                    detail: e.to_string(),
                })?;
                Ok(ToolOutput {
                    payload: Payload::Scalar { value },
                    sql_trace: compile_to_sql(&node).ok(),
                    binding: Some(Binding::Number(value)),
                })
            }
            "rank_users" => {
                #[derive(Deserialize)]
                #[serde(deny_unknown_fields)]
                struct A {
                    metric: String,
                    window: String,
                    order: Order,
                    k: u32,
                    #[serde(default)]
                    #[allow(dead_code)]
                    name: Option<String>,
                }
                let a: A = parse_args(t, &call.args)?;
                self.daily_metric(t, &a.metric)?;
                let window = self.window(t, &a.window)?;
                if a.k == 0 {
                    return Err(arg_err(t, "k must be at least 1"));
                }
                let node = QueryIR::RankUsers {
                    metric: a.metric.clone(),
                    window,
                    order: a.order,
                    k: a.k,
                };
                let users: Vec<(String, f64)> = rank_users(self.ds, &a.metric, window, a.order, a.k as usize)
                    .into_iter()
                    .map(|(u, v)| (u.to_string(), v))
                    .collect();
                Ok(ToolOutput {
                    payload: Payload::Ranking { users: users.clone() },
                    sql_trace: compile_to_sql(&node).ok(),
                    binding: Some(Binding::Users(users)),
                })
            }
            "group_compare" => {
                #[derive(Deserialize)]
                #[serde(deny_unknown_fields)]
                struct A {
                    metric: String,
                    window: String,
                    split_metric: String,
                    cmp: String,
                    threshold: NumArg,
                    #[serde(default)]
                    #[allow(dead_code)]
                    name: Option<String>,
                }
                let a: A = parse_args(t, &call.args)?;
                self.daily_metric(t, &a.metric)?;
                self.daily_metric(t, &a.split_metric)?;
                let window = self.window(t, &a.window)?;
                let cmp = parse_cmp(t, &a.cmp)?;
                let threshold = a.threshold.get(t)?;
                let split: BTreeMap<UserId, f64> = user_means(self.ds, &a.split_metric, window).into_iter().collect();
                let target = user_means(self.ds, &a.metric, window);
                let (mut ga, mut gb) = (Vec::new(), Vec::new());
                for (u, m) in &target {
                    match split.get(u) {
                        Some(s) if cmp.holds(*s, threshold) => ga.push((u.to_string(), *m)),
                        Some(_) => gb.push((u.to_string(), *m)),
                        None => {}
                    }
                }
                if ga.is_empty() || gb.is_empty() {
                    return Err(ToolError::EmptyWindow {
                        tool: t.into(),
                        detail: format!("groups have {} and {} users", ga.len(), gb.len()),
                    });
                }
                let avg = |g: &[(String, f64)]| {
                    let vals: Vec<f64> = g.iter().map(|(_, v)| *v).collect();
                    crate::qlang::aggregate(&vals, crate::qlang::AggFn::Mean).expect("non-empty")
                };
                let (mean_a, mean_b) = (avg(&ga), avg(&gb));
                Ok(ToolOutput {
                    payload: Payload::Comparison {
                        group_a: ga.into_iter().map(|(u, _)| u).collect(),
                        group_b: gb.into_iter().map(|(u, _)| u).collect(),
                        mean_a,
                        mean_b,
                        delta: mean_a - mean_b,
                    },
                    sql_trace: None,
                    binding: Some(Binding::Number(mean_a - mean_b)),
                })
            }
            "compute" => Err(arg_err(t, "compute is evaluated by the runtime")),
            other => Err(ToolError::UnknownTool(other.into())),
        }
    }
}

fn parse_cmp(tool: &str, s: &str) -> Result<Cmp, ToolError> {
    Ok(match s.trim() {
        ">" | "gt" => Cmp::Gt,
        ">=" | "ge" => Cmp::Ge,
        "<" | "lt" => Cmp::Lt,
        "<=" | "le" => Cmp::Le,
        other => return Err(arg_err(tool, format!("unknown comparison {other:?}"))),
    })
}

/// Runs the calculator against the current named results.
pub fn run_compute(call: &ToolCall, env: &BTreeMap<String, Binding>) -> Result<ToolOutput, ToolError> {
    #[derive(Deserialize)]
    #[serde(deny_unknown_fields)]
    struct A {
        expression: String,
        #[allow(dead_code)]
        name: String,
    }
    let a: A = parse_args("compute", &call.args)?;
    let value = compute::evaluate(&a.expression, env).map_err(|e| exec_err("compute", e))?;
    let payload = match &value {
        Binding::Number(v) => Payload::Scalar { value: *v },
        Binding::Text(s) => Payload::Label { value: s.clone() },
        other => Payload::Value { value: other.clone() },
    };
    Ok(ToolOutput {
        payload,
        sql_trace: None,
        binding: Some(value),
    })
}
