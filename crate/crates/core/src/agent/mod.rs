//! Tool-using agent: intent parse, retrieval agenda, a budgeted
//! action/observation loop over the tool registry, and final synthesis.

pub mod compute;
pub mod planner;
pub mod tools;

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::sync::OnceLock;

use regex::Regex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::benchgen::{QAInstance, TaskType};
use crate::evalkit::{parse_answer, Prediction};
use crate::lifelog::{AlignedDataset, DomainTag, TimeWindow};
use crate::llm::{ChatBackend, Message};
use crate::qlang::{AnswerType, AnswerValue};
use crate::store::RelationalStore;

pub use compute::{Binding, ComputeError, EventObs};
pub use planner::{plan_for, OraclePlanner, PlanError, PlannedRun};
pub use tools::{registry_text, Payload, ToolCall, ToolContext, ToolError, REGISTRY, ROW_CAP};

const SYSTEM_PROMPT: &str = include_str!("../../prompts/agent_system.txt");
const INTENT_PROMPT: &str = include_str!("../../prompts/agent_intent.txt");
const PLAN_PROMPT: &str = include_str!("../../prompts/agent_plan.txt");
const STEP_PROMPT: &str = include_str!("../../prompts/agent_step.txt");
const SYNTH_PROMPT: &str = include_str!("../../prompts/agent_synth.txt");

pub const DEFAULT_BUDGET: usize = 12;
pub const DEFAULT_ANOMALY_IQR: f64 = 1.5;
/// Days in the default window when the intent names none.
pub const DEFAULT_WINDOW_DAYS: u32 = 7;

#[derive(Debug, Error)]
pub enum AgentError {
    #[error("query is empty")]
    EmptyQuery,
    #[error("budget must be at least 1")]
    BadBudget,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AgentConfig {
    pub budget: usize,
    pub anomaly_iqr: f64,
}

impl Default for AgentConfig {
    fn default() -> Self {
        Self {
            budget: DEFAULT_BUDGET,
            anomaly_iqr: DEFAULT_ANOMALY_IQR,
        }
    }
}

/// What the question asks for.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Intent {
    pub task_type: Option<TaskType>,
    pub domains: Vec<DomainTag>,
    pub window: TimeWindow,
    pub answer_type: Option<AnswerType>,
    /// Fields that fell back to defaults.
    pub defaulted: Vec<String>,
}

impl Intent {
    fn describe(&self) -> String {
        let domains: Vec<&str> = self.domains.iter().map(|d| d.as_str()).collect();
        format!(
            "task_type={} domains={} window={} answer_type={}",
            self.task_type.map(|t| t.as_str()).unwrap_or("?"),
            domains.join(","),
            self.window,
            self.answer_type.map(|t| t.as_str()).unwrap_or("?")
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SubStatus {
    Pending,
    Done,
    Revised,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubQuestion {
    pub text: String,
    pub domains: Vec<DomainTag>,
    pub window: TimeWindow,
    pub granularity: String,
    pub status: SubStatus,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Agenda {
    pub items: Vec<SubQuestion>,
    /// True when the plan reply could not be used.
    pub fallback: bool,
}

impl Agenda {
    fn render(&self) -> String {
        self.items
            .iter()
            .enumerate()
            .map(|(i, q)| {
                let d: Vec<&str> = q.domains.iter().map(|d| d.as_str()).collect();
                format!(
                    "{}. [{} | {} | {}] {} ({:?})",
                    i + 1,
                    d.join(","),
                    q.window,
                    q.granularity,
                    q.text,
                    q.status
                )
            })
            .collect::<Vec<_>>()
            .join("\n")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Action {
    Tool(ToolCall),
    Revise { text: String },
    Stop,
    Invalid { reply: String, error: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    pub step: usize,
    pub tool: String,
    pub payload: Payload,
    pub sql_trace: Option<String>,
    /// Name under which the result was stored, if any.
    pub bound: Option<String>,
}

/// One line of the trace file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceStep {
    pub step: usize,
    pub action: Action,
    pub observation: Option<Observation>,
    pub sql_trace: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentRun {
    pub query: String,
    pub intent: Intent,
    pub agenda: Agenda,
    pub trace: Vec<TraceStep>,
    pub evidence: Vec<Observation>,
    pub memory: BTreeMap<String, Binding>,
    pub raw_answer: String,
    pub answer: Option<AnswerValue>,
    pub parse_error: Option<String>,
    pub backend_calls: usize,
    pub steps_used: usize,
    pub stopped: bool,
    pub budget_exhausted: bool,
    pub backend_failed: bool,
    pub notes: Vec<String>,
}

impl AgentRun {
    /// JSON Lines, one trace step per line.
    pub fn trace_jsonl(&self) -> String {
        let mut out = String::new();
        for s in &self.trace {
            out.push_str(&serde_json::to_string(s).expect("trace serializes"));
            out.push('\n');
        }
        out
    }
}

fn fill(template: &str, pairs: &[(&str, String)]) -> String {
    let mut s = template.to_string();
    for (k, v) in pairs {
        s = s.replace(&format!("{{{k}}}"), v);
    }
    s
}

fn system_message(ds: &AlignedDataset) -> Message {
    Message::system(fill(
        SYSTEM_PROMPT,
        &[
            ("tools", registry_text()),
            ("reference", ds.reference_date().to_string()),
            ("span", ds.date_span().to_string()),
        ],
    ))
}

fn default_window(ds: &AlignedDataset) -> TimeWindow {
    let w = TimeWindow::ending_at(ds.reference_date(), DEFAULT_WINDOW_DAYS);
    let span = ds.date_span();
    TimeWindow {
        start: w.start.max(span.start),
        end: w.end.min(span.end),
    }
}

fn parse_window(s: &str, ds: &AlignedDataset) -> Option<TimeWindow> {
    let s = s.trim();
    let w = match s.strip_suffix('d').and_then(|n| n.trim().parse::<u32>().ok()) {
        Some(n) if n > 0 => TimeWindow::ending_at(ds.reference_date(), n),
        Some(_) => return None,
        None => s.parse().ok()?,
    };
    ds.date_span().covers(&w).then_some(w)
}

fn parse_domains(s: &str) -> Option<Vec<DomainTag>> {
    let mut out: Vec<DomainTag> = s
        .split(',')
        .map(|d| d.trim())
        .filter(|d| !d.is_empty())
        .map(|d| d.parse().ok())
        .collect::<Option<_>>()?;
    out.sort();
    out.dedup();
    (!out.is_empty()).then_some(out)
}

/// Reads the intent block. Missing or unreadable fields fall back to the
/// defaults: all domains, the week ending at the reference date.
pub fn parse_intent_reply(reply: &str, ds: &AlignedDataset) -> Intent {
    let mut fields: BTreeMap<String, String> = BTreeMap::new();
    for line in reply.lines() {
        if let Some((k, v)) = line.split_once(':') {
            fields.insert(k.trim().trim_start_matches(['-', '*', ' ']).to_lowercase(), v.trim().to_string());
        }
    }
    let mut defaulted = Vec::new();
    let task_type = fields.get("task_type").and_then(|v| v.to_uppercase().parse::<TaskType>().ok());
    if task_type.is_none() {
        defaulted.push("task_type".into());
    }
    let domains = fields.get("domains").and_then(|v| parse_domains(v)).unwrap_or_else(|| {
        defaulted.push("domains".into());
        DomainTag::ALL.to_vec()
    });
    let window = fields.get("window").and_then(|v| parse_window(v, ds)).unwrap_or_else(|| {
        defaulted.push("window".into());
        default_window(ds)
    });
    let answer_type = fields.get("answer_type").and_then(|v| {
        AnswerType::ALL
            .into_iter()
            .find(|t| t.as_str() == v.trim().to_lowercase())
    });
    if answer_type.is_none() {
        defaulted.push("answer_type".into());
    }
    Intent {
        task_type,
        domains,
        window,
        answer_type,
        defaulted,
    }
}

fn plan_line_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| {
        Regex::new(r"^\s*\d+[.)]\s*(?:\[([^\]|]*)\|([^\]|]*)\|([^\]]*)\]\s*)?(.+?)\s*$").expect("valid regex")
    })
}

/// Reads the numbered agenda; an unusable reply yields one sub-question
/// covering the whole intent.
pub fn parse_plan_reply(reply: &str, query: &str, intent: &Intent, ds: &AlignedDataset) -> Agenda {
    let mut items = Vec::new();
    for line in reply.lines() {
        let Some(c) = plan_line_re().captures(line) else {
            continue;
        };
        let domains = c
            .get(1)
            .and_then(|m| parse_domains(m.as_str()))
            .unwrap_or_else(|| intent.domains.clone());
        let window = c
            .get(2)
            .and_then(|m| parse_window(m.as_str(), ds))
            .unwrap_or(intent.window);
        let granularity = c
            .get(3)
            .map(|m| m.as_str().trim().to_string())
            .filter(|g| !g.is_empty())
            .unwrap_or_else(|| "daily".into());
        items.push(SubQuestion {
            text: c[4].to_string(),
            domains,
            window,
            granularity,
            status: SubStatus::Pending,
        });
    }
    if items.is_empty() {
        return Agenda {
            items: vec![SubQuestion {
                text: query.to_string(),
                domains: intent.domains.clone(),
                window: intent.window,
                granularity: "daily".into(),
                status: SubStatus::Pending,
            }],
            fallback: true,
        };
    }
    Agenda { items, fallback: false }
}

fn fence_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"(?s)```[A-Za-z]*[ \t]*\n?(.*?)```").expect("valid regex"))
}

fn tool_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| {
        Regex::new(r"(?s)^TOOL\s*(?:\(\s*([A-Za-z_]+)\s*,\s*(\{.*\})\s*\)|\s([A-Za-z_]+)\s*(\{.*\}))$")
            .expect("valid regex")
    })
}

/// Reads the single fenced action block of a step reply.
pub fn parse_action(reply: &str) -> Action {
    let invalid = |error: &str| Action::Invalid {
        reply: reply.to_string(),
        error: error.to_string(),
    };
    let blocks: Vec<&str> = fence_re()
        .captures_iter(reply)
        .map(|c| c.get(1).map_or("", |m| m.as_str()).trim())
        .collect();
    let body = match blocks.as_slice() {
        [one] => *one,
        [] => return invalid("no fenced action block"),
        _ => return invalid("more than one fenced block"),
    };
    if body == "STOP" {
        return Action::Stop;
    }
    if let Some(text) = body.strip_prefix("REVISE") {
        let text = text.trim();
        if text.is_empty() {
            return invalid("REVISE needs a sub-question");
        }
        return Action::Revise { text: text.to_string() };
    }
    let Some(c) = tool_re().captures(body) else {
        return invalid("expected TOOL <name> {json}, REVISE <text> or STOP");
    };
    let name = c.get(1).or(c.get(3)).map_or("", |m| m.as_str()).to_string();
    let json = c.get(2).or(c.get(4)).map_or("", |m| m.as_str());
    match serde_json::from_str::<serde_json::Value>(json) {
        Ok(serde_json::Value::Object(args)) => Action::Tool(ToolCall { tool: name, args }),
        Ok(_) => invalid("tool arguments must be a JSON object"),
        Err(e) => invalid(&format!("tool arguments are not JSON: {e}")),
    }
}

fn payload_summary(p: &Payload) -> String {
    const MAX: usize = 40;
    let num = |v: f64| Binding::Number(v).render();
    match p {
        Payload::Rows { columns, rows } => {
            let mut s = format!("{} rows ({})", rows.len(), columns.join(", "));
            for r in rows.iter().take(MAX) {
                let cells: Vec<String> = r.iter().map(|c| c.render()).collect();
                let _ = write!(s, "\n    {}", cells.join(" | "));
            }
            if rows.len() > MAX {
                let _ = write!(s, "\n    ... {} more", rows.len() - MAX);
            }
            s
        }
        Payload::Series { points, anomalies } => {
            let pts: Vec<String> = points.iter().take(MAX).map(|(d, v)| format!("{d}={}", num(*v))).collect();
            let mut s = format!("{} points: {}", points.len(), pts.join(", "));
            if points.len() > MAX {
                let _ = write!(s, ", ... {} more", points.len() - MAX);
            }
            if !anomalies.is_empty() {
                let a: Vec<String> = anomalies.iter().map(|d| d.to_string()).collect();
                let _ = write!(s, "; anomalies: {}", a.join(", "));
            }
            s
        }
        Payload::Scalar { value } => num(*value),
        Payload::Label { value } => value.clone(),
        Payload::Ranking { users } => users
            .iter()
            .map(|(u, v)| format!("{u} ({})", num(*v)))
            .collect::<Vec<_>>()
            .join(", "),
        Payload::Comparison {
            group_a,
            group_b,
            mean_a,
            mean_b,
            delta,
        } => format!(
            "group A ({} users) mean {}, group B ({} users) mean {}, delta {}",
            group_a.len(),
            num(*mean_a),
            group_b.len(),
            num(*mean_b),
            num(*delta)
        ),
        Payload::ThresholdCheck {
            days,
            count,
            longest_run,
        } => {
            let d: Vec<String> = days.iter().map(|d| d.to_string()).collect();
            format!("{count} days, longest run {longest_run}: {}", d.join(", "))
        }
        Payload::Trend { slope, n, label, .. } => format!("{label} (slope {} per day over {n} points)", num(*slope)),
        Payload::Value { value } => value.render(),
        Payload::Note { text } => text.clone(),
        Payload::Error { error, message } => format!("ERROR {error}: {message}"),
    }
}

fn render_evidence(evidence: &[Observation]) -> String {
    if evidence.is_empty() {
        return "(none)".into();
    }
    evidence
        .iter()
        .map(|o| {
            let bound = o.bound.as_ref().map(|b| format!(" as {b}")).unwrap_or_default();
            format!("[{}] {}{}: {}", o.step, o.tool, bound, payload_summary(&o.payload))
        })
        .collect::<Vec<_>>()
        .join("\n")
}

fn render_memory(memory: &BTreeMap<String, Binding>) -> String {
    if memory.is_empty() {
        return "(none)".into();
    }
    memory
        .iter()
        .map(|(k, v)| format!("- {k} ({}) = {}", v.type_name(), v.render()))
        .collect::<Vec<_>>()
        .join("\n")
}

struct Session<'a> {
    backend: &'a dyn ChatBackend,
    system: Message,
    calls: usize,
}

impl Session<'_> {
    fn ask(&mut self, messages: &[Message]) -> Result<String, crate::llm::LlmError> {
        self.calls += 1;
        self.backend.complete(messages)
    }

    fn single(&mut self, user: String) -> Result<String, crate::llm::LlmError> {
        let msgs = vec![self.system.clone(), Message::user(user)];
        self.ask(&msgs)
    }
}

/// Runs one agent session. Backend calls never exceed `budget + 3`.
pub fn run_agent(
    query: &str,
    expected: Option<AnswerType>,
    ds: &AlignedDataset,
    store: &RelationalStore,
    backend: &dyn ChatBackend,
    config: &AgentConfig,
) -> Result<AgentRun, AgentError> {
    if query.trim().is_empty() {
        return Err(AgentError::EmptyQuery);
    }
    if config.budget == 0 {
        return Err(AgentError::BadBudget);
    }
    let mut s = Session {
        backend,
        system: system_message(ds),
        calls: 0,
    };
    let mut notes = Vec::new();

    let intent = match s.single(fill(INTENT_PROMPT, &[("query", query.to_string())])) {
        Ok(reply) => parse_intent_reply(&reply, ds),
        Err(e) => {
            notes.push(format!("intent: backend error: {e}"));
            parse_intent_reply("", ds)
        }
    };
    let expected = expected.or(intent.answer_type).unwrap_or(AnswerType::Text);

    let mut agenda = match s.single(fill(
        PLAN_PROMPT,
        &[("query", query.to_string()), ("intent", intent.describe())],
    )) {
        Ok(reply) => parse_plan_reply(&reply, query, &intent, ds),
        Err(e) => {
            notes.push(format!("plan: backend error: {e}"));
            parse_plan_reply("", query, &intent, ds)
        }
    };

    let ctx = ToolContext {
        ds,
        store,
        anomaly_iqr: config.anomaly_iqr,
    };
    let mut trace = Vec::new();
    let mut evidence: Vec<Observation> = Vec::new();
    let mut memory: BTreeMap<String, Binding> = BTreeMap::new();
    let mut t = 0usize;
    let mut stopped = false;
    let mut backend_failed = false;

    while t < config.budget {
        t += 1;
        let prompt = fill(
            STEP_PROMPT,
            &[
                ("step", t.to_string()),
                ("budget", config.budget.to_string()),
                ("query", query.to_string()),
                ("intent", intent.describe()),
                ("answer_type", expected.as_str().to_string()),
                ("agenda", agenda.render()),
                ("evidence", render_evidence(&evidence)),
                ("memory", render_memory(&memory)),
            ],
        );
        let msgs = vec![s.system.clone(), Message::user(prompt)];
        let reply = match s.ask(&msgs) {
            Ok(r) => r,
            Err(e) => {
                notes.push(format!("step {t}: backend error: {e}"));
                backend_failed = true;
                break;
            }
        };
        let mut action = parse_action(&reply);
        if let Action::Invalid { error, .. } = &action {
            if t < config.budget {
                t += 1;
                let mut retry = msgs.clone();
                retry.push(Message::assistant(reply.clone()));
                retry.push(Message::user(format!(
                    "Format error: {error}. Reply with exactly one fenced action block."
                )));
                match s.ask(&retry) {
                    Ok(r) => action = parse_action(&r),
                    Err(e) => {
                        notes.push(format!("step {t}: backend error: {e}"));
                        backend_failed = true;
                        break;
                    }
                }
            }
        }

        let observation = match &action {
            Action::Stop => {
                stopped = true;
                None
            }
            Action::Invalid { error, .. } => Some(Observation {
                step: t,
                tool: "none".into(),
                payload: Payload::Error {
                    error: "malformed_action".into(),
                    message: error.clone(),
                },
                sql_trace: None,
                bound: None,
            }),
            Action::Revise { text } => {
                agenda.items.push(SubQuestion {
                    text: text.clone(),
                    domains: intent.domains.clone(),
                    window: intent.window,
                    granularity: "daily".into(),
                    status: SubStatus::Revised,
                });
                Some(Observation {
                    step: t,
                    tool: "revise".into(),
                    payload: Payload::Note {
                        text: format!("agenda item {} added", agenda.items.len()),
                    },
                    sql_trace: None,
                    bound: None,
                })
            }
            Action::Tool(call) => Some(execute_tool(&ctx, call, t, &mut memory, &mut agenda)),
        };
        let sql_trace = observation.as_ref().and_then(|o| o.sql_trace.clone());
        if let Some(o) = &observation {
            evidence.push(o.clone());
        }
        trace.push(TraceStep {
            step: t,
            action,
            observation,
            sql_trace,
        });
        if stopped {
            break;
        }
    }
    let budget_exhausted = !stopped && !backend_failed;
    if budget_exhausted {
        notes.push(format!("budget of {} steps exhausted", config.budget));
    }

    let synth = fill(
        SYNTH_PROMPT,
        &[
            ("query", query.to_string()),
            ("answer_type", expected.as_str().to_string()),
            ("evidence", render_evidence(&evidence)),
            ("memory", render_memory(&memory)),
        ],
    );
    let raw_answer = match s.single(synth) {
        Ok(r) => r,
        Err(e) => {
            notes.push(format!("synthesis: backend error: {e}"));
            backend_failed = true;
            String::new()
        }
    };
    let (answer, parse_error) = match parse_answer(&raw_answer, expected) {
        Ok(a) => (Some(a), None),
        Err(e) => (None, Some(e.to_string())),
    };
    Ok(AgentRun {
        query: query.to_string(),
        intent,
        agenda,
        trace,
        evidence,
        memory,
        raw_answer,
        answer,
        parse_error,
        backend_calls: s.calls,
        steps_used: t,
        stopped,
        budget_exhausted,
        backend_failed,
        notes,
    })
}

fn execute_tool(
    ctx: &ToolContext<'_>,
    call: &ToolCall,
    step: usize,
    memory: &mut BTreeMap<String, Binding>,
    agenda: &mut Agenda,
) -> Observation {
    let requested = call.args.get("name").and_then(|v| v.as_str()).map(str::to_string);
    let result = if call.tool == "compute" {
        tools::run_compute(call, memory)
    } else {
        ctx.execute(call)
    };
    let error_obs = |e: &ToolError| Observation {
        step,
        tool: call.tool.clone(),
        payload: Payload::error(e),
        sql_trace: None,
        bound: None,
    };
    let out = match result {
        Ok(out) => out,
        Err(e) => return error_obs(&e),
    };
    let name = requested.unwrap_or_else(|| format!("o{step}"));
    if memory.contains_key(&name) {
        let mut o = error_obs(&ToolError::Arg {
            tool: call.tool.clone(),
            detail: format!("name {name:?} is already bound"),
        });
        o.sql_trace = out.sql_trace;
        return o;
    }
    let bound = out.binding.map(|b| {
        memory.insert(name.clone(), b);
        name
    });
    if let Some(q) = agenda.items.iter_mut().find(|q| q.status != SubStatus::Done) {
        q.status = SubStatus::Done;
    }
    Observation {
        step,
        tool: call.tool.clone(),
        payload: out.payload,
        sql_trace: out.sql_trace,
        bound,
    }
}

/// Runs the agent on a benchmark question and folds the run into a
/// prediction.
pub fn run_on_instance(
    instance: &QAInstance,
    ds: &AlignedDataset,
    store: &RelationalStore,
    backend: &dyn ChatBackend,
    config: &AgentConfig,
) -> (Prediction, Option<AgentRun>) {
    match run_agent(&instance.question, Some(instance.answer_type), ds, store, backend, config) {
        Ok(run) => {
            let mut p = Prediction::from_reply(instance, run.raw_answer.clone());
            p.backend_calls = run.backend_calls;
            if run.backend_failed || run.budget_exhausted {
                p.error = Some(run.notes.join("; "));
            }
            (p, Some(run))
        }
        Err(e) => (Prediction::failed(instance, e.to_string()), None),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn action_forms() {
        assert_eq!(parse_action("ok\n```action\nSTOP\n```"), Action::Stop);
        match parse_action("```\nTOOL daily_series {\"user\": \"u1\", \"metric\": \"m\", \"window\": \"7d\"}\n```") {
            Action::Tool(c) => {
                assert_eq!(c.tool, "daily_series");
                assert_eq!(c.args["user"], "u1");
            }
            other => panic!("{other:?}"),
        }
        match parse_action("```action\nTOOL(compute, {\"expression\": \"1+1\", \"name\": \"x\"})\n```") {
            Action::Tool(c) => assert_eq!(c.tool, "compute"),
            other => panic!("{other:?}"),
        }
        assert_eq!(
            parse_action("```action\nREVISE look at weekends\n```"),
            Action::Revise { text: "look at weekends".into() }
        );
        for bad in ["STOP", "```a\nSTOP\n``` ```b\nSTOP\n```", "```\nTOOL x [1]\n```", "```\nTOOL x {bad}\n```", "```\nDANCE\n```"] {
            assert!(matches!(parse_action(bad), Action::Invalid { .. }), "{bad}");
        }
    }
}
