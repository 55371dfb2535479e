//! Benchmark generation: templates are instantiated against a dataset,
//! answered by the interpreter, compiled to SQL and checked both ways.

pub mod catalog;
pub mod mix;

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::io::{BufRead, Write};
use std::path::Path;
use std::str::FromStr;

use chrono::NaiveDate;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::lifelog::{AlignedDataset, DomainTag, UserId};
use crate::qlang::{
    compile_to_sql, decode_result, interpret, result_contract, AnswerType, AnswerValue, QueryError,
    QueryIR,
};
use crate::store::{validate_sql, ExecLimits, RelationalStore};

pub use catalog::{render, template, Pool, Reject, Template, CATALOG};

/// Relative tolerance for numeric agreement between interpreter and SQL.
pub const DUAL_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum TaskType {
    FQ,
    AS,
    NC,
    CQ,
    TA,
}

impl TaskType {
    pub const ALL: [TaskType; 5] = [TaskType::FQ, TaskType::AS, TaskType::NC, TaskType::CQ, TaskType::TA];

    pub fn as_str(self) -> &'static str {
        match self {
            TaskType::FQ => "FQ",
            TaskType::AS => "AS",
            TaskType::NC => "NC",
            TaskType::CQ => "CQ",
            TaskType::TA => "TA",
        }
    }
}

impl fmt::Display for TaskType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for TaskType {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        TaskType::ALL
            .into_iter()
            .find(|t| t.as_str().eq_ignore_ascii_case(s.trim()))
            .ok_or_else(|| format!("unknown task type {s:?}"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scope {
    SingleUser,
    MultiUser,
}

impl Scope {
    pub fn as_str(self) -> &'static str {
        match self {
            Scope::SingleUser => "single_user",
            Scope::MultiUser => "multi_user",
        }
    }
}

/// One benchmark question with its program, SQL and verified answer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QAInstance {
    pub instance_id: String,
    pub question: String,
    pub task_type: TaskType,
    pub answer_type: AnswerType,
    pub scope: Scope,
    pub domains: Vec<DomainTag>,
    pub user_ids: Vec<UserId>,
    pub window_start: NaiveDate,
    pub window_end: NaiveDate,
    pub program: QueryIR,
    pub sql: String,
    pub ground_truth: AnswerValue,
    pub template_id: String,
    pub seed: u64,
}

impl QAInstance {
    /// The user the question speaks for, if any.
    pub fn subject(&self) -> Option<UserId> {
        self.program.users().into_iter().next()
    }

    pub fn n_domains(&self) -> usize {
        self.domains.len()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenConfig {
    pub seed: u64,
    pub target_total: usize,
    /// Exact single-user count; the remainder is multi-user.
    pub single_user: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub task_mix: Option<BTreeMap<TaskType, f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub answer_mix: Option<BTreeMap<AnswerType, f64>>,
    pub max_retries: u32,
}

/// Default single-user share, matching the reference benchmark split.
pub const DEFAULT_SINGLE_FRACTION: f64 = 13_452.0 / 22_573.0;

impl GenConfig {
    pub fn new(seed: u64, target_total: usize) -> Self {
        GenConfig {
            seed,
            target_total,
            single_user: (target_total as f64 * DEFAULT_SINGLE_FRACTION).round() as usize,
            task_mix: None,
            answer_mix: None,
            max_retries: 50,
        }
    }

    pub fn with_counts(seed: u64, single: usize, multi: usize) -> Self {
        GenConfig {
            single_user: single,
            ..GenConfig::new(seed, single + multi)
        }
    }

    pub fn multi_user(&self) -> usize {
        self.target_total.saturating_sub(self.single_user)
    }

    pub fn validate(&self) -> Result<(), BenchError> {
        let bad = |m: String| Err(BenchError::Config(m));
        if self.target_total == 0 {
            return bad("target_total must be positive".into());
        }
        if self.single_user > self.target_total {
            return bad("single_user exceeds target_total".into());
        }
        if self.max_retries == 0 {
            return bad("max_retries must be positive".into());
        }
        fn sums_to_one<K>(m: &BTreeMap<K, f64>) -> bool {
            m.values().all(|v| *v >= 0.0) && (m.values().sum::<f64>() - 1.0).abs() < 1e-6
        }
        if self.task_mix.as_ref().is_some_and(|m| !sums_to_one(m)) {
            return bad("task mix must be non-negative and sum to 1".into());
        }
        if self.answer_mix.as_ref().is_some_and(|m| !sums_to_one(m)) {
            return bad("answer mix must be non-negative and sum to 1".into());
        }
        Ok(())
    }
}

#[derive(Debug, Error)]
pub enum BenchError {
    #[error("invalid generation config: {0}")]
    Config(String),
    #[error("infeasible mix: {0}")]
    InfeasibleMix(String),
    #[error("template {template} exhausted after {retries} consecutive failed draws")]
    TemplateExhausted { template: String, retries: u32 },
    #[error("dual execution mismatch in {instance}: {detail}")]
    DualMismatch { instance: String, detail: String },
    #[error("query error in {template}: {source}")]
    Query {
        template: String,
        #[source]
        source: QueryError,
    },
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
}

/// Seed of draw `index` of `template_id` under `seed`.
pub fn instance_seed(seed: u64, template_id: &str, index: u64) -> u64 {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update(template_id.as_bytes());
    h.update(index.to_le_bytes());
    let digest = h.finalize();
    u64::from_le_bytes(digest[..8].try_into().expect("8 bytes"))
}

/// Result of one draw.
pub enum Draw {
    Instance(Box<QAInstance>, String),
    Rejected(String),
}

fn capitalize(s: &str) -> String {
    let mut c = s.chars();
    match c.next() {
        Some(f) => f.to_uppercase().collect::<String>() + c.as_str(),
        None => String::new(),
    }
}

/// Samples parameters, renders a question, derives the answer and compiles
/// the SQL. Draws that hit empty windows or the wrong answer shape come
/// back as `Draw::Rejected`. The second field of `Draw::Instance` is the
/// canonical dedup key.
pub fn instantiate_template(
    t: &Template,
    ds: &AlignedDataset,
    pool: &Pool,
    seed: u64,
) -> Result<Draw, BenchError> {
    let rng = ChaCha8Rng::seed_from_u64(seed);
    let mut ctx = catalog::Ctx::new(ds, pool, rng);
    let program = match (t.build)(&mut ctx) {
        Ok(p) => p,
        Err(Reject(why)) => return Ok(Draw::Rejected(why)),
    };
    let gt = match interpret(&program, ds) {
        Ok(v) => v,
        Err(
            e @ (QueryError::EmptyWindow { .. }
            | QueryError::TooFewPoints { .. }
            | QueryError::Cardinality { .. }),
        ) => return Ok(Draw::Rejected(e.to_string())),
        Err(source) => {
            return Err(BenchError::Query {
                template: t.id.into(),
                source,
            })
        }
    };
    if gt.answer_type() != t.answer_type {
        return Ok(Draw::Rejected(format!("answer shape {}", gt.answer_type())));
    }
    let sql = compile_to_sql(&program).map_err(|source| BenchError::Query {
        template: t.id.into(),
        source,
    })?;
    let form_idx = ctx.rng().gen_range(0..t.surface_forms.len());
    let mut question = capitalize(&render(t.surface_forms[form_idx], &ctx.slots));
    if let Some(u) = &ctx.subject {
        question = format!("I am user {u}. {question}");
    }
    let window = program.window().expect("every template selects a window");
    let user_ids = match t.scope {
        Scope::SingleUser => program.users(),
        Scope::MultiUser => ctx.all_users(),
    };
    let key = format!(
        "{}|{}",
        t.id,
        serde_json::to_string(&ctx.key).expect("string map serializes")
    );
    let inst = QAInstance {
        instance_id: String::new(),
        question,
        task_type: t.task_type,
        answer_type: t.answer_type,
        scope: t.scope,
        domains: program.domains(),
        user_ids,
        window_start: window.start,
        window_end: window.end,
        program,
        sql,
        ground_truth: gt,
        template_id: t.id.into(),
        seed,
    };
    Ok(Draw::Instance(Box::new(inst), key))
}

/// Outcome of checking one instance against the store.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Verification {
    pub instance_id: String,
    pub passed: bool,
    pub detail: Option<String>,
}

/// Re-derives the answer by interpretation and by executing the stored SQL
/// and requires both to equal the stored ground truth.
pub fn verify_instance(inst: &QAInstance, ds: &AlignedDataset, store: &RelationalStore) -> Verification {
    let fail = |detail: String| Verification {
        instance_id: inst.instance_id.clone(),
        passed: false,
        detail: Some(detail),
    };
    let diag = validate_sql(&inst.sql);
    if !diag.is_valid() {
        return fail(format!("sql rejected: {:?} {}", diag.verdict, diag.message));
    }
    let interpreted = match interpret(&inst.program, ds) {
        Ok(v) => v,
        Err(e) => return fail(format!("interpret: {e}")),
    };
    let contract = match result_contract(&inst.program) {
        Ok(c) => c,
        Err(e) => return fail(format!("contract: {e}")),
    };
    let table = match store.execute_select(&inst.sql, ExecLimits::default()) {
        Ok(t) => t,
        Err(e) => return fail(format!("execute: {e}")),
    };
    let decoded = match decode_result(&table, &contract) {
        Ok(v) => v,
        Err(e) => return fail(format!("decode: {e}")),
    };
    if !decoded.approx_eq(&interpreted, DUAL_TOLERANCE) {
        return fail(format!("sql gave {decoded}, interpreter gave {interpreted}"));
    }
    if !inst.ground_truth.approx_eq(&interpreted, DUAL_TOLERANCE) {
        return fail(format!(
            "stored ground truth {} differs from interpreter {interpreted}",
            inst.ground_truth
        ));
    }
    Verification {
        instance_id: inst.instance_id.clone(),
        passed: true,
        detail: None,
    }
}

/// Verifies every instance, in parallel, preserving order.
pub fn verify_all(instances: &[QAInstance], ds: &AlignedDataset, store: &RelationalStore) -> Vec<Verification> {
    instances.par_iter().map(|i| verify_instance(i, ds, store)).collect()
}

/// Quotas per catalog entry for `config`.
pub fn plan_quotas(config: &GenConfig) -> Result<Vec<usize>, BenchError> {
    config.validate()?;
    let cells: Vec<mix::Cell> = CATALOG
        .iter()
        .map(|t| mix::Cell {
            task: t.task_type,
            answer: t.answer_type,
            scope: t.scope,
        })
        .collect();
    mix::allocate(
        &cells,
        [config.single_user, config.multi_user()],
        config.task_mix.as_ref(),
        config.answer_mix.as_ref(),
    )
}

fn generate_for_template(
    t: &Template,
    quota: usize,
    ds: &AlignedDataset,
    pool: &Pool,
    store: &RelationalStore,
    config: &GenConfig,
) -> Result<Vec<QAInstance>, BenchError> {
    let mut out = Vec::with_capacity(quota);
    let mut seen: HashSet<String> = HashSet::new();
    let mut index = 0u64;
    while out.len() < quota {
        let mut failures = 0u32;
        loop {
            if failures >= config.max_retries {
                return Err(BenchError::TemplateExhausted {
                    template: t.id.into(),
                    retries: failures,
                });
            }
            let seed = instance_seed(config.seed, t.id, index);
            index += 1;
            match instantiate_template(t, ds, pool, seed)? {
                Draw::Rejected(_) => failures += 1,
                Draw::Instance(mut inst, key) => {
                    if !seen.insert(key) {
                        failures += 1;
                        continue;
                    }
                    inst.instance_id = format!("{}-{:05}", t.id, out.len());
                    let v = verify_instance(&inst, ds, store);
                    if !v.passed {
                        return Err(BenchError::DualMismatch {
                            instance: inst.instance_id,
                            detail: v.detail.unwrap_or_default(),
                        });
                    }
                    out.push(*inst);
                    break;
                }
            }
        }
    }
    Ok(out)
}

/// Generates the benchmark for `config`. Deterministic in (dataset,
/// config); output is ordered by instance id.
pub fn generate_benchmark(
    ds: &AlignedDataset,
    store: &RelationalStore,
    config: &GenConfig,
) -> Result<Vec<QAInstance>, BenchError> {
    let quotas = plan_quotas(config)?;
    let pool = Pool::new(ds);
    let batches: Vec<Result<Vec<QAInstance>, BenchError>> = CATALOG
        .par_iter()
        .zip(quotas.par_iter())
        .map(|(t, q)| generate_for_template(t, *q, ds, &pool, store, config))
        .collect();
    let mut all = Vec::with_capacity(config.target_total);
    for b in batches {
        match b {
            Ok(v) => all.extend(v),
            Err(BenchError::TemplateExhausted { template, retries }) => {
                return Err(BenchError::InfeasibleMix(format!(
                    "dataset cannot supply the quota of {template} ({retries} consecutive failed draws)"
                )))
            }
            Err(e) => return Err(e),
        }
    }
    all.sort_by(|a, b| a.instance_id.cmp(&b.instance_id));
    Ok(all)
}

pub fn write_jsonl(instances: &[QAInstance], out: &mut impl Write) -> Result<(), BenchError> {
    for inst in instances {
        serde_json::to_writer(&mut *out, inst).map_err(std::io::Error::other)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

pub fn to_jsonl(instances: &[QAInstance]) -> Vec<u8> {
    let mut buf = Vec::new();
    write_jsonl(instances, &mut buf).expect("writing to memory");
    buf
}

pub fn read_jsonl(reader: impl BufRead) -> Result<Vec<QAInstance>, BenchError> {
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| BenchError::Parse {
            line: i + 1,
            message: e.to_string(),
        })?);
    }
    Ok(out)
}

pub fn load_benchmark(path: &Path) -> Result<Vec<QAInstance>, BenchError> {
    let f = std::fs::File::open(path)?;
    read_jsonl(std::io::BufReader::new(f))
}

/// Counts per facet value, for mix reporting.
pub fn mix_summary(instances: &[QAInstance]) -> BTreeMap<String, BTreeMap<String, usize>> {
    let mut out: BTreeMap<String, BTreeMap<String, usize>> = BTreeMap::new();
    for i in instances {
        *out.entry("task_type".into()).or_default().entry(i.task_type.to_string()).or_default() += 1;
        *out.entry("answer_type".into()).or_default().entry(i.answer_type.to_string()).or_default() += 1;
        *out.entry("scope".into()).or_default().entry(i.scope.as_str().into()).or_default() += 1;
        *out.entry("n_domains".into()).or_default().entry(i.n_domains().to_string()).or_default() += 1;
    }
    out
}
