//! Scripted planner that drives the agent loop from a known program: every
//! data access goes through a tool and every derived value through the
//! calculator. Used for replayable end-to-end checks of the runtime.

use std::collections::HashMap;

use serde_json::{json, Map, Value as Json};
use thiserror::Error;

use super::ToolCall;
use crate::benchgen::QAInstance;
use crate::llm::{ChatBackend, LlmError, Message};
use crate::qlang::{
    AggFn, CohortStatFn, CompareKind, Extreme, Kind, Order, QueryIR, RunOutput, SetOpKind,
};

#[derive(Debug, Error, PartialEq)]
pub enum PlanError {
    #[error("program does not type-check: {0}")]
    Check(String),
    #[error("cannot plan {0}")]
    Unsupported(String),
}

/// Tool calls (the last one computes `answer`) followed by STOP.
#[derive(Debug, Clone, PartialEq)]
pub struct PlannedRun {
    pub calls: Vec<ToolCall>,
}

struct Planner {
    leaves: Vec<(QueryIR, String)>,
    calls: Vec<ToolCall>,
}

fn args(pairs: Json) -> Map<String, Json> {
    match pairs {
        Json::Object(m) => m,
        _ => unreachable!("object literal"),
    }
}

fn lit(v: f64) -> String {
    if v < 0.0 {
        format!("(-{})", -v)
    } else {
        format!("{v}")
    }
}

impl Planner {
    fn leaf(&mut self, n: &QueryIR, prefix: &str, call: impl FnOnce(&str) -> ToolCall) -> String {
        if let Some((_, name)) = self.leaves.iter().find(|(l, _)| l == n) {
            return name.clone();
        }
        let count = self.leaves.iter().filter(|(_, name)| name.starts_with(prefix)).count();
        let name = format!("{prefix}{}", count + 1);
        self.calls.push(call(&name));
        self.leaves.push((n.clone(), name.clone()));
        name
    }

    fn expr(&mut self, n: &QueryIR) -> Result<String, PlanError> {
        Ok(match n {
            QueryIR::SelectSeries {
                user, metric, window, ..
            } => self.leaf(n, "s", |name| ToolCall {
                tool: "daily_series".into(),
                args: args(json!({
                    "user": user.as_str(), "metric": metric, "window": window.to_string(), "name": name
                })),
            }),
            QueryIR::SelectEvents {
                user,
                domain,
                window,
                predicate,
            } => self.leaf(n, "e", |name| {
                let mut a = args(json!({
                    "user": user.as_str(), "domain": domain.as_str(), "window": window.to_string(), "name": name
                }));
                if let Some(m) = &predicate.metric {
                    a.insert("metric".into(), json!(m));
                }
                if let Some(c) = &predicate.category {
                    a.insert("category".into(), json!(c));
                }
                ToolCall {
                    tool: "events".into(),
                    args: a,
                }
            }),
            QueryIR::CohortStat { metric, window, stat } => self.leaf(n, "c", |name| {
                let mut a = args(json!({"metric": metric, "window": window.to_string(), "name": name}));
                let s = match stat {
                    CohortStatFn::Mean => "mean",
                    CohortStatFn::Median => "median",
                    CohortStatFn::Percentile(p) => {
                        a.insert("p".into(), json!(p));
                        "percentile"
                    }
                };
                a.insert("stat".into(), json!(s));
                ToolCall {
                    tool: "cohort_summary".into(),
                    args: a,
                }
            }),
            QueryIR::RankUsers {
                metric,
                window,
                order,
                k,
            } => self.leaf(n, "r", |name| ToolCall {
                tool: "rank_users".into(),
                args: args(json!({
                    "metric": metric,
                    "window": window.to_string(),
                    "order": match order { Order::Asc => "asc", Order::Desc => "desc" },
                    "k": k,
                    "name": name
                })),
            }),
            QueryIR::AlignDays { target, days } => {
                if days.is_empty() {
                    return Err(PlanError::Unsupported("align_days without day sets".into()));
                }
                let mut parts = vec![self.expr(target)?];
                for d in days {
                    parts.push(self.expr(d)?);
                }
                format!("align({})", parts.join(", "))
            }
            QueryIR::Aggregate { func, child } => {
                let c = self.expr(child)?;
                match func {
                    AggFn::Mean => format!("mean({c})"),
                    AggFn::Min => format!("min({c})"),
                    AggFn::Max => format!("max({c})"),
                    AggFn::Sum => format!("sum({c})"),
                    AggFn::Count => format!("count({c})"),
                    AggFn::Median => format!("median({c})"),
                    AggFn::Percentile(p) => format!("percentile({c}, {p})"),
                }
            }
            QueryIR::Compare { kind, left, right } => {
                let l = self.expr(left)?;
                let r = self.expr(right)?;
                let op = match kind {
                    CompareKind::Diff => "-",
                    CompareKind::Greater => ">",
                    CompareKind::Less => "<",
                };
                format!("({l}) {op} ({r})")
            }
            QueryIR::ThresholdFilter { child, cmp, threshold } => {
                let c = self.expr(child)?;
                let t = self.expr(threshold)?;
                format!("filter({c}, \"{}\", {t})", cmp.sql())
            }
            QueryIR::Const { value } => lit(*value),
            QueryIR::CountDays { child } => format!("count(days({}))", self.expr(child)?),
            QueryIR::ConsecutiveRun { child, min_len, output } => {
                let c = self.expr(child)?;
                match output {
                    RunOutput::Exists => format!("has_run({c}, {min_len})"),
                    RunOutput::MaxRun => format!("max_run({c})"),
                }
            }
            QueryIR::Trend { child, epsilon } => format!("trend({}, {})", self.expr(child)?, lit(*epsilon)),
            QueryIR::ArgExtreme { child, extreme } => {
                let c = self.expr(child)?;
                match extreme {
                    Extreme::Max => format!("argmax({c})"),
                    Extreme::Min => format!("argmin({c})"),
                }
            }
            QueryIR::DominantCategory { child, field } => {
                format!("dominant({}, \"{field}\")", self.expr(child)?)
            }
            QueryIR::SetOp { kind, children } => {
                let parts = children.iter().map(|c| self.expr(c)).collect::<Result<Vec<_>, _>>()?;
                let f = match kind {
                    SetOpKind::Intersect => "intersect",
                    SetOpKind::Union => "union",
                };
                format!("{f}({})", parts.join(", "))
            }
            QueryIR::Tuple { children } => {
                let parts = children.iter().map(|c| self.expr(c)).collect::<Result<Vec<_>, _>>()?;
                format!("list({})", parts.join(", "))
            }
        })
    }
}

/// Translates a program into the tool calls that recompute it.
pub fn plan_for(program: &QueryIR) -> Result<PlannedRun, PlanError> {
    let kind = program.check(None).map_err(|e| PlanError::Check(e.to_string()))?;
    let mut p = Planner {
        leaves: Vec::new(),
        calls: Vec::new(),
    };
    let e = p.expr(program)?;
    let root = match kind {
        Kind::Series => format!("values({e})"),
        Kind::DaySet => format!("dates({e})"),
        Kind::Events => return Err(PlanError::Unsupported("event set as answer".into())),
        _ => e,
    };
    p.calls.push(ToolCall {
        tool: "compute".into(),
        args: args(json!({"expression": root, "name": "answer"})),
    });
    Ok(PlannedRun { calls: p.calls })
}

fn fenced(call: &ToolCall) -> String {
    format!(
        "```action\nTOOL {} {}\n```",
        call.tool,
        serde_json::to_string(&call.args).expect("args serialize")
    )
}

/// Scripted backend answering every agent turn for known questions.
pub struct OraclePlanner {
    plans: HashMap<String, (QAInstance, PlannedRun)>,
}

impl OraclePlanner {
    /// Plans every instance; instances whose program cannot be planned are
    /// returned separately.
    pub fn new(instances: &[QAInstance]) -> (Self, Vec<(String, PlanError)>) {
        let mut plans = HashMap::new();
        let mut failed = Vec::new();
        for inst in instances {
            match plan_for(&inst.program) {
                Ok(p) => {
                    plans.entry(inst.question.clone()).or_insert((inst.clone(), p));
                }
                Err(e) => failed.push((inst.instance_id.clone(), e)),
            }
        }
        (Self { plans }, failed)
    }

    fn reply(&self, prompt: &str) -> Option<String> {
        let question = prompt.lines().find_map(|l| l.strip_prefix("Question: "))?;
        let (inst, plan) = self.plans.get(question)?;
        let head = prompt.lines().next()?;
        if head == "## intent" {
            let domains: Vec<&str> = inst.domains.iter().map(|d| d.as_str()).collect();
            return Some(format!(
                "task_type: {}\ndomains: {}\nwindow: {}..{}\nanswer_type: {}",
                inst.task_type,
                domains.join(", "),
                inst.window_start,
                inst.window_end,
                inst.answer_type
            ));
        }
        if head == "## plan" {
            let lines: Vec<String> = plan
                .calls
                .iter()
                .enumerate()
                .map(|(i, c)| {
                    let target = c.args.get("metric").or(c.args.get("domain")).or(c.args.get("expression"));
                    format!("{}. {} {}", i + 1, c.tool, target.and_then(Json::as_str).unwrap_or(""))
                })
                .collect();
            return Some(lines.join("\n"));
        }
        if head == "## synthesis" {
            let answer = prompt.lines().find_map(|l| {
                l.strip_prefix("- answer (")
                    .and_then(|rest| rest.split_once(") = "))
                    .map(|(_, v)| v.to_string())
            })?;
            return Some(format!("ANSWER: {answer}"));
        }
        let step: usize = head
            .strip_prefix("## step ")?
            .split_whitespace()
            .next()?
            .parse()
            .ok()?;
        Some(match plan.calls.get(step - 1) {
            Some(call) => fenced(call),
            None => "```action\nSTOP\n```".into(),
        })
    }
}

impl ChatBackend for OraclePlanner {
    fn complete(&self, messages: &[Message]) -> Result<String, LlmError> {
        let prompt = messages.last().map(|m| m.content.as_str()).unwrap_or("");
        self.reply(prompt)
            .ok_or_else(|| LlmError::Response("scripted planner has no reply for this prompt".into()))
    }

    fn describe(&self) -> String {
        format!("oracle-planner ({} questions)", self.plans.len())
    }
}
