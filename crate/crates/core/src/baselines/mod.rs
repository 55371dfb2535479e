//! Prompting baselines: context prompting (CP) with the user's records
//! pasted into the prompt, and database prompting (DP) where the model
//! writes one SELECT whose result is fed back for the answer.

mod oracle;

use std::fmt::Write as _;
use std::sync::OnceLock;

use chrono::NaiveDate;
use rayon::prelude::*;
use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::benchgen::QAInstance;
use crate::evalkit::Prediction;
use crate::lifelog::{AlignedDataset, RecordValue, TimeWindow, UserId};
use crate::llm::{ChatBackend, Message};
use crate::qlang::{format_number, AnswerType};
use crate::store::{ExecLimits, RelationalStore, SqlDiagnostic, SqlVerdict, SCHEMA_SQL};

pub use oracle::{weaken, OracleResponder};

const CP_PROMPT: &str = include_str!("../../prompts/cp.txt");
const DP_SQL_PROMPT: &str = include_str!("../../prompts/dp_sql.txt");
const DP_ANSWER_PROMPT: &str = include_str!("../../prompts/dp_answer.txt");

const SYSTEM: &str = "You answer questions about personal lifelog records. Be precise and finish with an ANSWER line.";

pub const DEFAULT_TOKEN_BUDGET: usize = 100_000;
pub const DEFAULT_RESULT_ROWS: usize = 200;

/// Rough token count: one token per four characters.
pub fn estimate_tokens(s: &str) -> usize {
    s.chars().count().div_ceil(4)
}

pub fn answer_form(t: AnswerType) -> &'static str {
    match t {
        AnswerType::YesNo => "yes or no",
        AnswerType::Number => "a single number",
        AnswerType::Text => "a short text value (dates as YYYY-MM-DD, user ids as written)",
        AnswerType::Pair => "exactly two items separated by \"; \"",
        AnswerType::ListOf => "a list of items separated by \"; \"",
    }
}

fn fill(template: &str, pairs: &[(&str, String)]) -> String {
    let mut s = template.to_string();
    for (k, v) in pairs {
        s = s.replace(&format!("{{{k}}}"), v);
    }
    s
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CpConfig {
    /// Estimated tokens allowed for the record block.
    pub token_budget: usize,
}

impl Default for CpConfig {
    fn default() -> Self {
        Self {
            token_budget: DEFAULT_TOKEN_BUDGET,
        }
    }
}

/// Records pasted into a CP prompt.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CpContext {
    pub user_ids: Vec<UserId>,
    pub window: TimeWindow,
    pub text: String,
    pub n_records: usize,
    pub n_dropped: usize,
    pub truncated: bool,
    pub est_tokens: usize,
}

fn value_text(v: &RecordValue) -> String {
    match (v.as_number(), v.as_category()) {
        (Some(x), _) => format_number(x),
        (None, Some(c)) => c.to_string(),
        _ => String::new(),
    }
}

/// One line per record of `user_ids` inside `window`, oldest first. When
/// the block exceeds the budget the oldest lines are dropped.
pub fn build_cp_context(inst: &QAInstance, ds: &AlignedDataset, cfg: &CpConfig) -> CpContext {
    let window = TimeWindow {
        start: inst.window_start,
        end: inst.window_end,
    };
    let wanted = |u: &UserId| inst.user_ids.contains(u);
    let mut rows: Vec<(NaiveDate, &str, String, String)> = Vec::new();
    for m in ds.daily() {
        if window.contains(m.date) && wanted(&m.user) {
            rows.push((
                m.date,
                m.user.as_str(),
                String::new(),
                format!("{}={} {}", m.metric, value_text(&m.value), m.unit),
            ));
        }
    }
    for e in ds.events() {
        let date = ds.event_date(e);
        if window.contains(date) && wanted(&e.user) {
            rows.push((
                date,
                e.user.as_str(),
                e.start.format("%H:%M").to_string(),
                format!("{}={} {}", e.metric, value_text(&e.value), e.unit),
            ));
        }
    }
    rows.sort();
    let lines: Vec<String> = rows
        .iter()
        .map(|(d, u, t, rest)| {
            if t.is_empty() {
                format!("{d} {u} {rest}")
            } else {
                format!("{d} {u} @{t}Z {rest}")
            }
        })
        .collect();
    let n_records = lines.len();
    let budget_chars = cfg.token_budget.saturating_mul(4);
    let mut total: usize = lines.iter().map(|l| l.chars().count() + 1).sum();
    let mut first = 0;
    while total > budget_chars && first < lines.len() {
        total -= lines[first].chars().count() + 1;
        first += 1;
    }
    let mut text = lines[first..].join("\n");
    if first > 0 {
        text = format!("(oldest {first} records omitted)\n{text}");
    }
    CpContext {
        user_ids: inst.user_ids.clone(),
        window,
        est_tokens: estimate_tokens(&text),
        text,
        n_records,
        n_dropped: first,
        truncated: first > 0,
    }
}

pub fn cp_messages(inst: &QAInstance, ctx: &CpContext) -> Vec<Message> {
    vec![
        Message::system(SYSTEM),
        Message::user(fill(
            CP_PROMPT,
            &[
                ("query", inst.question.clone()),
                ("answer_form", answer_form(inst.answer_type).into()),
                ("n_records", (ctx.n_records - ctx.n_dropped).to_string()),
                ("records", ctx.text.clone()),
            ],
        )),
    ]
}

/// One CP call for `inst`.
pub fn run_cp(inst: &QAInstance, ds: &AlignedDataset, backend: &dyn ChatBackend, cfg: &CpConfig) -> Prediction {
    let ctx = build_cp_context(inst, ds, cfg);
    let mut p = match backend.complete(&cp_messages(inst, &ctx)) {
        Ok(reply) => Prediction::from_reply(inst, reply),
        Err(e) => Prediction::failed(inst, e.to_string()),
    };
    p.backend_calls = 1;
    p.truncated = Some(ctx.truncated);
    p
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DpConfig {
    /// Result rows shown to the model in the second turn.
    pub result_rows: usize,
    pub limits: ExecLimits,
}

impl Default for DpConfig {
    fn default() -> Self {
        Self {
            result_rows: DEFAULT_RESULT_ROWS,
            limits: ExecLimits::default(),
        }
    }
}

fn sql_fence_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"(?is)```[ \t]*(?:sql|sqlite)?[ \t]*\n?(.*?)```").expect("valid regex"))
}

/// SQL from the first fenced block, or the whole reply without one.
pub fn extract_sql(reply: &str) -> String {
    let sql = match sql_fence_re().captures(reply) {
        Some(c) => c[1].to_string(),
        None => reply.to_string(),
    };
    sql.trim().to_string()
}

pub fn dp_sql_messages(inst: &QAInstance, ds: &AlignedDataset) -> Vec<Message> {
    vec![
        Message::system(SYSTEM),
        Message::user(fill(
            DP_SQL_PROMPT,
            &[
                ("query", inst.question.clone()),
                ("reference", ds.reference_date().to_string()),
                ("schema", SCHEMA_SQL.trim().to_string()),
            ],
        )),
    ]
}

/// Two sequential turns: SQL, then the answer from its result. The SQL
/// gets exactly one attempt.
pub fn run_dp(
    inst: &QAInstance,
    ds: &AlignedDataset,
    store: &RelationalStore,
    backend: &dyn ChatBackend,
    cfg: &DpConfig,
) -> Prediction {
    let mut msgs = dp_sql_messages(inst, ds);
    let reply = match backend.complete(&msgs) {
        Ok(r) => r,
        Err(e) => {
            let mut p = Prediction::failed(inst, e.to_string());
            p.backend_calls = 1;
            p.dp_diag = Some(SqlDiagnostic::new(SqlVerdict::ParseError, "no SQL: backend failed"));
            return p;
        }
    };
    let sql = extract_sql(&reply);
    let (diag, result) = store.check_and_execute(&sql, cfg.limits);
    let mut outcome = String::new();
    match &result {
        Some(table) => {
            let _ = write!(
                outcome,
                "The query returned {} rows:\n{}",
                table.rows.len(),
                table.render(cfg.result_rows)
            );
        }
        None => {
            let _ = write!(
                outcome,
                "The query was rejected ({:?}): {}\nNo rows are available.",
                diag.verdict, diag.message
            );
        }
    }
    msgs.push(Message::assistant(reply));
    msgs.push(Message::user(fill(
        DP_ANSWER_PROMPT,
        &[
            ("outcome", outcome),
            ("answer_form", answer_form(inst.answer_type).into()),
        ],
    )));
    let mut p = match backend.complete(&msgs) {
        Ok(r) => Prediction::from_reply(inst, r),
        Err(e) => Prediction::failed(inst, e.to_string()),
    };
    p.backend_calls = 2;
    p.dp_sql = Some(sql);
    p.dp_diag = Some(diag);
    p.dp_result = result;
    p
}

/// Runs `f` over the instances on a pool of `jobs` threads; output order
/// follows input order.
pub fn run_batch<F>(instances: &[QAInstance], jobs: usize, f: F) -> Vec<Prediction>
where
    F: Fn(&QAInstance) -> Prediction + Sync + Send,
{
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .expect("thread pool");
    pool.install(|| instances.par_iter().map(&f).collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sql_extraction() {
        assert_eq!(extract_sql("Here:\n```sql\nSELECT 1;\n```\nthanks"), "SELECT 1;");
        assert_eq!(extract_sql("```\nSELECT 2\n```"), "SELECT 2");
        assert_eq!(extract_sql("  SELECT 3  "), "SELECT 3");
    }

    #[test]
    fn token_estimate() {
        assert_eq!(estimate_tokens(""), 0);
        assert_eq!(estimate_tokens("abcd"), 1);
        assert_eq!(estimate_tokens("abcde"), 2);
    }
}
