//! Acceptance suite. Runs every criterion, prints one PASS/FAIL line per
//! criterion and exits non-zero if a gating criterion fails.
//!
//! Criterion 10 talks to a live endpoint and runs only when
//! LIFEBENCH_BASE_URL and LIFEBENCH_MODEL are set.

mod common;

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::process::ExitCode;
use std::time::{Duration, Instant};

use chrono::NaiveDate;
use lifebench::agent::{run_on_instance, AgentConfig, OraclePlanner};
use lifebench::baselines::{
    build_cp_context, cp_messages, run_batch, run_cp, run_dp, CpConfig, DpConfig, OracleResponder,
};
use lifebench::benchgen::{generate_benchmark, to_jsonl, verify_all, GenConfig, QAInstance, Scope, TaskType};
use lifebench::evalkit::{aggregate_report, score_accuracy, score_all, score_prediction, Prediction};
use lifebench::lifelog::synth::{synthesize_dataset, SynthSpec};
use lifebench::lifelog::AlignedDataset;
use lifebench::llm::{BackendConfig, Recorder, ScriptedBackend};
use lifebench::qlang::{interpret, AnswerType, AnswerValue, Item};
use lifebench::store::{ExecLimits, RelationalStore};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

use common::{answers_agree, local_date, oracle_answer, ProgramSampler};

type Outcome = Result<String, String>;

struct Fixture {
    ds: AlignedDataset,
    store: RelationalStore,
    bench: Vec<QAInstance>,
    bench_bytes: Vec<u8>,
    build_time: Duration,
    large: Option<Vec<u8>>,
}

fn build_small() -> (AlignedDataset, RelationalStore, Vec<QAInstance>) {
    let ds = synthesize_dataset(&SynthSpec::new(42, 20, 28)).expect("synthesize");
    let store = RelationalStore::build(&ds).expect("store");
    let bench = generate_benchmark(&ds, &store, &GenConfig::new(7, 5000)).expect("generate");
    (ds, store, bench)
}

/// Twenty users cannot supply 22,573 distinct questions, so the
/// large run uses a hundred-user cohort over the same four weeks.
fn build_large() -> (AlignedDataset, RelationalStore) {
    let ds = synthesize_dataset(&SynthSpec::new(42, 100, 28)).expect("synthesize");
    let store = RelationalStore::build(&ds).expect("store");
    (ds, store)
}

fn large_config() -> GenConfig {
    GenConfig::with_counts(7, 13_452, 9_121)
}

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn criterion_1(fx: &Fixture) -> Outcome {
    let t = Instant::now();
    let results = verify_all(&fx.bench, &fx.ds, &fx.store);
    let total = fx.build_time + t.elapsed();
    let passed = results.iter().filter(|v| v.passed).count();
    if let Some(bad) = results.iter().find(|v| !v.passed) {
        return Err(format!(
            "{passed}/{} verified; first failure {}: {}",
            results.len(),
            bad.instance_id,
            bad.detail.as_deref().unwrap_or("")
        ));
    }
    ensure(fx.bench.len() == 5000, || format!("benchmark has {} instances", fx.bench.len()))?;
    ensure(total < Duration::from_secs(300), || format!("took {total:?}"))?;
    Ok(format!("{passed}/{} verified in {:.1}s", results.len(), total.as_secs_f64()))
}

fn criterion_2(fx: &Fixture) -> Outcome {
    let sampler = ProgramSampler::new(&fx.ds);
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let span = fx.ds.date_span();
    let (mut agreed, mut both_err, mut drawn) = (0usize, 0usize, 0usize);
    while agreed < 1000 {
        drawn += 1;
        ensure(drawn <= 50_000, || format!("only {agreed} evaluable programs in {drawn} draws"))?;
        let program = sampler.sample(&mut rng);
        program
            .check(Some(span))
            .map_err(|e| format!("sampler produced an ill-typed program: {e}\n{program:?}"))?;
        match (interpret(&program, &fx.ds), oracle_answer(&program, &fx.ds)) {
            (Ok(a), Ok(b)) if answers_agree(&a, &b) => agreed += 1,
            (Err(_), Err(_)) => both_err += 1,
            (a, b) => return Err(format!("disagreement on {program:?}: interpreter {a:?}, oracle {b:?}")),
        }
    }
    Ok(format!(
        "{agreed}/{agreed} evaluable programs agree ({both_err} rejected by both, {drawn} drawn)"
    ))
}

fn criterion_3() -> Outcome {
    let n = AnswerValue::Number;
    let pair = |a: f64, b: f64| AnswerValue::Pair(Item::Number(a), Item::Number(b));
    let list = |v: &[f64]| AnswerValue::ListOf(v.iter().map(|x| Item::Number(*x)).collect());
    let cases: Vec<(&str, AnswerValue, AnswerValue, bool)> = vec![
        ("gt=10 pred=11", n(10.0), n(11.0), true),
        ("gt=14 pred=15", n(14.0), n(15.0), true),
        ("gt=15 pred=16", n(15.0), n(16.0), false),
        ("gt=200 pred=201", n(200.0), n(201.0), true),
        ("gt=200 pred=201.5", n(200.0), n(201.5), false),
        ("pair vs list of three", pair(1.0, 2.0), list(&[1.0, 2.0, 3.0]), false),
        ("list of three vs pair", list(&[1.0, 2.0, 3.0]), pair(1.0, 2.0), false),
        ("list of four vs list of three", list(&[1.0, 2.0, 3.0]), list(&[1.0, 2.0, 3.0, 4.0]), false),
    ];
    for (label, gt, pred, want) in &cases {
        let got = score_accuracy(pred, gt);
        ensure(got == *want, || format!("{label}: scored {got}, expected {want}"))?;
    }
    Ok(format!("{} boundary cases", cases.len()))
}

fn criterion_4(keep: &mut Option<Vec<u8>>) -> Outcome {
    let t = Instant::now();
    let (ds, store) = build_large();
    let bench = generate_benchmark(&ds, &store, &large_config()).map_err(|e| e.to_string())?;
    let gen_time = t.elapsed();
    *keep = Some(to_jsonl(&bench));
    let results = verify_all(&bench, &ds, &store);
    let total = t.elapsed();
    let failed = results.iter().filter(|v| !v.passed).count();
    let single = bench.iter().filter(|i| i.scope == Scope::SingleUser).count();
    let multi = bench.iter().filter(|i| i.scope == Scope::MultiUser).count();
    ensure(bench.len() == 22_573, || format!("{} instances", bench.len()))?;
    ensure(single == 13_452 && multi == 9_121, || format!("split {single}/{multi}"))?;
    ensure(failed == 0, || format!("{failed} instances failed verification"))?;
    ensure(total < Duration::from_secs(1800), || format!("took {total:?}"))?;
    Ok(format!(
        "22573 instances over 100 users ({single} single / {multi} multi) generated in {:.1}s, verified in {:.1}s",
        gen_time.as_secs_f64(),
        (total - gen_time).as_secs_f64()
    ))
}

fn digest(b: &[u8]) -> String {
    hex::encode(&Sha256::digest(b)[..8])
}

fn criterion_5(fx: &Fixture) -> Outcome {
    let pool = rayon::ThreadPoolBuilder::new().num_threads(3).build().expect("pool");
    let (small, large) = pool.install(|| {
        let (_, _, bench) = build_small();
        let (ds, store) = build_large();
        let large = generate_benchmark(&ds, &store, &large_config()).map(|b| to_jsonl(&b));
        (to_jsonl(&bench), large)
    });
    let large = large.map_err(|e| e.to_string())?;
    ensure(small == fx.bench_bytes, || "5000-instance benchmark differs between runs".into())?;
    let first_large = fx.large.as_ref().ok_or("22573-instance run unavailable")?;
    ensure(&large == first_large, || "22573-instance benchmark differs between runs".into())?;
    Ok(format!(
        "benchmark files identical across runs (5000: {}, 22573: {})",
        digest(&small),
        digest(&large)
    ))
}

/// Adversarial statements: writes, schema changes, stacked statements and
/// mutations of real benchmark SQL.
fn fuzz_corpus(bench: &[QAInstance], rng: &mut ChaCha8Rng) -> Vec<(String, bool)> {
    let writes = [
        "DELETE FROM daily_metrics",
        "DELETE FROM events WHERE user_id = 'u001'",
        "UPDATE daily_metrics SET value_num = 0",
        "UPDATE users SET user_id = 'x' WHERE user_id = 'u002'",
        "INSERT INTO users (user_id) VALUES ('intruder')",
        "INSERT INTO daily_metrics SELECT * FROM daily_metrics",
        "REPLACE INTO dataset_meta (key, value) VALUES ('reference_date', '1999-01-01')",
        "DROP TABLE events",
        "DROP INDEX idx_events_domain",
        "ALTER TABLE users ADD COLUMN pwned TEXT",
        "ALTER TABLE events RENAME TO e2",
        "CREATE TABLE t (a INTEGER)",
        "CREATE INDEX ix ON users (user_id)",
        "CREATE VIEW v AS SELECT 1",
        "CREATE TRIGGER tr AFTER INSERT ON users BEGIN DELETE FROM events; END",
        "ATTACH DATABASE ':memory:' AS other",
        "DETACH DATABASE main",
        "PRAGMA writable_schema = 1",
        "PRAGMA query_only = 0",
        "PRAGMA journal_mode = DELETE",
        "VACUUM",
        "REINDEX",
        "ANALYZE",
        "BEGIN; DELETE FROM users; COMMIT",
        "SAVEPOINT s1",
        "WITH x AS (SELECT 1) DELETE FROM daily_metrics",
        "WITH x AS (SELECT user_id FROM users) UPDATE events SET value_num = -1",
        "WITH x AS (SELECT 1) INSERT INTO users (user_id) SELECT 'y' FROM x",
        "/* SELECT */ DELETE FROM events",
        "-- SELECT\nDROP TABLE users",
        "  \n\tdelete from daily_metrics",
        "DeLeTe FrOm events",
        "SELECT 1; DELETE FROM daily_metrics",
        "SELECT 1;DROP TABLE users;",
        "SELECT ';'; UPDATE users SET user_id = 'z'",
        "SELECT 1 /* ; */; INSERT INTO users (user_id) VALUES ('q')",
        "SELECT 1 -- ;\n; DROP TABLE events",
        "SELECT \"a;b\"; VACUUM",
        "SELECT 1; SELECT 2",
        "WITH a AS (SELECT 1) SELECT * FROM a; PRAGMA writable_schema=1",
    ];
    let mut out: Vec<(String, bool)> = writes.iter().map(|s| (s.to_string(), true)).collect();
    let sqls: Vec<&str> = bench.iter().map(|i| i.sql.as_str()).collect();
    let stacked = ["DELETE FROM daily_metrics", "DROP TABLE users", "UPDATE events SET value_num = 0", "VACUUM"];
    while out.len() < 80 {
        let sql = sqls.choose(rng).unwrap().trim_end_matches(';');
        out.push((format!("{sql}; {}", stacked.choose(rng).unwrap()), true));
    }
    while out.len() < 200 {
        let sql = sqls.choose(rng).unwrap().to_string();
        let mutated = match rng.gen_range(0..6) {
            0 => {
                let cut = rng.gen_range(1..sql.len());
                sql.char_indices().take_while(|(i, _)| *i < cut).map(|(_, c)| c).collect()
            }
            1 => {
                let words: Vec<&str> = sql.split_whitespace().collect();
                let drop = rng.gen_range(0..words.len());
                words
                    .iter()
                    .enumerate()
                    .filter(|(i, _)| *i != drop)
                    .map(|(_, w)| *w)
                    .collect::<Vec<_>>()
                    .join(" ")
            }
            2 => sql.replacen("daily_metrics", "daily_metric", 1).replacen("events", "event", 1),
            3 => sql.replacen("value_num", "value_number", 1),
            4 => {
                let pos = rng.gen_range(0..sql.len());
                let pos = (0..=pos).rev().find(|p| sql.is_char_boundary(*p)).unwrap_or(0);
                let junk = ["'", "(", ")", ",", "\"", "/*", "--", "\0", "é"].choose(rng).unwrap();
                format!("{}{junk}{}", &sql[..pos], &sql[pos..])
            }
            _ => sql.replacen("SELECT", "DELETE", 1),
        };
        out.push((mutated, false));
    }
    out
}

fn sqlite_accepts(conn: &rusqlite::Connection, sql: &str, limits: ExecLimits) -> bool {
    let trimmed = sql.trim_start();
    let head = trimmed.get(..6).unwrap_or("").to_ascii_uppercase();
    if head != "SELECT" && !head.starts_with("WITH") {
        return false;
    }
    let Ok(mut stmt) = conn.prepare(sql) else {
        return false;
    };
    if !stmt.readonly() {
        return false;
    }
    let Ok(mut rows) = stmt.query([]) else {
        return false;
    };
    let mut n = 0;
    loop {
        match rows.next() {
            Ok(Some(_)) => {
                n += 1;
                if n > limits.max_rows {
                    return false;
                }
            }
            Ok(None) => return true,
            Err(_) => return false,
        }
    }
}

fn criterion_6(fx: &Fixture) -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let path = dir.path().join("fuzz.db");
    let store = RelationalStore::build_file(&fx.ds, &path).map_err(|e| e.to_string())?;
    let before = store.checksum().map_err(|e| e.to_string())?;
    let file_before = Sha256::digest(std::fs::read(&path).map_err(|e| e.to_string())?);
    ensure(before == fx.store.checksum().map_err(|e| e.to_string())?, || {
        "file store and memory store differ".into()
    })?;
    let reference = rusqlite::Connection::open_with_flags(&path, rusqlite::OpenFlags::SQLITE_OPEN_READ_ONLY)
        .map_err(|e| e.to_string())?;

    let corpus = fuzz_corpus(&fx.bench, &mut ChaCha8Rng::seed_from_u64(6));
    ensure(corpus.len() == 200, || format!("corpus has {} strings", corpus.len()))?;
    let limits = ExecLimits::default();
    let inst = &fx.bench[0];
    let (mut valid, mut expected_valid) = (0usize, 0usize);
    for (sql, hostile) in &corpus {
        let (diag, result) = store.check_and_execute(sql, limits);
        let mut p = Prediction::from_reply(inst, String::new());
        p.dp_diag = Some(diag.clone());
        p.dp_result = result;
        let va = score_prediction(&p, &inst.ground_truth, &[]).va == Some(true);
        let expect = !hostile && sqlite_accepts(&reference, sql, limits);
        ensure(va == expect, || format!("VA {va} but expected {expect} for {sql:?} ({diag:?})"))?;
        valid += va as usize;
        expected_valid += expect as usize;
    }
    drop(reference);
    let after = store.checksum().map_err(|e| e.to_string())?;
    ensure(before == after, || "store checksum changed".into())?;
    drop(store);
    let file_after = Sha256::digest(std::fs::read(&path).map_err(|e| e.to_string())?);
    ensure(file_before == file_after, || "database file bytes changed".into())?;
    ensure(valid == expected_valid, || format!("{valid} valid vs {expected_valid} expected"))?;

    let exact = OracleResponder::exact(&fx.bench, &fx.ds);
    let preds = run_batch(&fx.bench, 4, |i| run_dp(i, &fx.ds, &fx.store, &exact, &DpConfig::default()));
    let verdicts = score_all(&preds, &fx.bench, &fx.ds).map_err(|e| e.to_string())?;
    let r = aggregate_report(&verdicts, &fx.bench).map_err(|e| e.to_string())?.overall;
    let all = [Some(r.acc), r.va, r.ex_rate, r.acc_given_ex];
    ensure(all.iter().all(|x| *x == Some(100.0)), || format!("scripted DP run: {r:?}"))?;
    ensure(fx.store.checksum().map_err(|e| e.to_string())? == before, || {
        "store changed during DP run".into()
    })?;
    Ok(format!(
        "200 adversarial strings, {valid} valid as expected, checksum stable; DP run on {} instances: Acc = VA = EX = Acc|EX = 100%",
        fx.bench.len()
    ))
}

fn agent_slice(bench: &[QAInstance], n: usize) -> Vec<QAInstance> {
    let mut cells: BTreeMap<(TaskType, Scope), Vec<&QAInstance>> = BTreeMap::new();
    for i in bench {
        cells.entry((i.task_type, i.scope)).or_default().push(i);
    }
    let mut out = Vec::new();
    let mut k = 0;
    while out.len() < n {
        let before = out.len();
        for v in cells.values() {
            if let Some(i) = v.get(k) {
                if out.len() < n {
                    out.push((*i).clone());
                }
            }
        }
        if out.len() == before {
            break;
        }
        k += 1;
    }
    out
}

fn criterion_7(fx: &Fixture) -> Outcome {
    let slice = agent_slice(&fx.bench, 200);
    let tasks: BTreeSet<TaskType> = slice.iter().map(|i| i.task_type).collect();
    let scopes: BTreeSet<Scope> = slice.iter().map(|i| i.scope).collect();
    ensure(slice.len() == 200 && tasks.len() == 5 && scopes.len() == 2, || {
        format!("slice of {} covers {tasks:?} {scopes:?}", slice.len())
    })?;
    let (planner, failed) = OraclePlanner::new(&slice);
    ensure(failed.is_empty(), || format!("unplannable: {failed:?}"))?;
    let config = AgentConfig::default();
    let recorder = Recorder::new(planner);
    let mut first = Vec::new();
    let mut max_calls = 0;
    for inst in &slice {
        let (p, run) = run_on_instance(inst, &fx.ds, &fx.store, &recorder, &config);
        let run = run.ok_or_else(|| format!("{}: agent did not run", inst.instance_id))?;
        let v = score_prediction(&p, &inst.ground_truth, &[]);
        ensure(v.acc, || {
            format!(
                "{} answered {:?}, expected {}; notes {:?}",
                inst.instance_id, p.raw_text, inst.ground_truth, run.notes
            )
        })?;
        ensure(p.backend_calls <= config.budget + 3, || {
            format!("{} used {} backend calls", inst.instance_id, p.backend_calls)
        })?;
        max_calls = max_calls.max(p.backend_calls);
        first.push((serde_json::to_string(&p).unwrap(), run.trace_jsonl()));
    }
    let replay = ScriptedBackend::from_entries(recorder.replay_entries());
    for (inst, (pred, trace)) in slice.iter().zip(&first) {
        let (p, run) = run_on_instance(inst, &fx.ds, &fx.store, &replay, &config);
        let run = run.ok_or("replay did not run")?;
        ensure(&serde_json::to_string(&p).unwrap() == pred && &run.trace_jsonl() == trace, || {
            format!("{}: replay differs", inst.instance_id)
        })?;
    }
    Ok(format!(
        "200/200 correct across 5 task types and both scopes, max {max_calls} backend calls (budget {}), replays identical",
        config.budget
    ))
}

fn record_line(line: &str) -> Option<(NaiveDate, &str)> {
    let mut parts = line.splitn(3, ' ');
    let date = parts.next()?.parse().ok()?;
    let user = parts.next()?;
    let rest = parts.next()?;
    rest.contains('=').then_some((date, user))
}

fn criterion_8(fx: &Fixture) -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let sample: Vec<&QAInstance> = fx.bench.choose_multiple(&mut rng, 1000).collect();
    let all_users: HashSet<&str> = fx.ds.users().iter().map(|u| u.as_str()).collect();
    let mut scanned = 0usize;
    for inst in &sample {
        let ctx = build_cp_context(inst, &fx.ds, &CpConfig::default());
        let prompt: String = cp_messages(inst, &ctx).iter().map(|m| m.content.as_str()).collect::<Vec<_>>().join("\n");
        let allowed: HashSet<&str> = inst.user_ids.iter().map(|u| u.as_str()).collect();
        let mut lines = 0;
        for line in prompt.lines() {
            for tok in line.split(|c: char| !c.is_ascii_alphanumeric()) {
                ensure(!all_users.contains(tok) || allowed.contains(tok), || {
                    format!("{}: foreign user {tok} in {line:?}", inst.instance_id)
                })?;
            }
            if let Some((date, user)) = record_line(line) {
                ensure(allowed.contains(user), || format!("{}: record of {user}", inst.instance_id))?;
                ensure(date >= inst.window_start && date <= inst.window_end, || {
                    format!("{}: record dated {date} outside window", inst.instance_id)
                })?;
                lines += 1;
            }
        }
        let in_scope = fx
            .ds
            .daily()
            .iter()
            .filter(|r| allowed.contains(r.user.as_str()) && r.date >= inst.window_start && r.date <= inst.window_end)
            .count()
            + fx
                .ds
                .events()
                .iter()
                .filter(|e| allowed.contains(e.user.as_str()))
                .map(|e| local_date(&fx.ds, e))
                .filter(|d| *d >= inst.window_start && *d <= inst.window_end)
                .count();
        ensure(lines + ctx.n_dropped == in_scope, || {
            format!("{}: {lines} record lines for {in_scope} records", inst.instance_id)
        })?;
        scanned += lines;
    }

    let targets: Vec<&QAInstance> = fx
        .bench
        .iter()
        .filter(|i| i.scope == Scope::MultiUser && i.n_domains() == 4)
        .collect();
    ensure(!targets.is_empty(), || "no multi-user all-domain instances".into())?;
    let small = CpConfig { token_budget: 500 };
    let scripted = OracleResponder::exact(&fx.bench, &fx.ds);
    for inst in &targets {
        let p = run_cp(inst, &fx.ds, &scripted, &small);
        ensure(p.truncated == Some(true), || format!("{}: not truncated", inst.instance_id))?;
    }
    Ok(format!(
        "1000 prompts, {scanned} record lines, none out of scope; {} multi-user all-domain instances truncated",
        targets.len()
    ))
}

fn criterion_9(fx: &Fixture) -> Outcome {
    let weak = OracleResponder::weak(&fx.bench, &fx.ds);
    let preds = run_batch(&fx.bench, 4, |i| run_cp(i, &fx.ds, &weak, &CpConfig::default()));
    let verdicts = score_all(&preds, &fx.bench, &fx.ds).map_err(|e| e.to_string())?;
    let rate = |keep: &dyn Fn(&QAInstance) -> bool| {
        let (mut n, mut ok) = (0usize, 0usize);
        for (v, i) in verdicts.iter().zip(&fx.bench) {
            if keep(i) {
                n += 1;
                ok += v.acc as usize;
            }
        }
        100.0 * ok as f64 / n.max(1) as f64
    };
    let as_ = rate(&|i| i.task_type == TaskType::AS);
    let multi = rate(&|i| matches!(i.answer_type, AnswerType::Pair | AnswerType::ListOf));
    let fq = rate(&|i| i.task_type == TaskType::FQ);
    let yes_no = rate(&|i| i.answer_type == AnswerType::YesNo);
    let line = format!("AS {as_:.2}%, multi-item {multi:.2}% vs FQ {fq:.2}%, yes/no {yes_no:.2}%");
    ensure(as_ < fq && as_ < yes_no && multi < fq && multi < yes_no, || line.clone())?;
    Ok(line)
}

enum Gate {
    Pass(String),
    Fail(String),
    Skip(String),
}

fn criterion_10(fx: &Fixture) -> Gate {
    let (Ok(url), Ok(model)) = (std::env::var("LIFEBENCH_BASE_URL"), std::env::var("LIFEBENCH_MODEL")) else {
        return Gate::Skip("LIFEBENCH_BASE_URL / LIFEBENCH_MODEL not set".into());
    };
    let backend = match BackendConfig::remote(url, model).build() {
        Ok(b) => b,
        Err(e) => return Gate::Fail(format!("backend: {e}")),
    };
    let slice = &fx.bench[..50];
    let preds = run_batch(slice, 4, |i| run_dp(i, &fx.ds, &fx.store, backend.as_ref(), &DpConfig::default()));
    let report = score_all(&preds, slice, &fx.ds).and_then(|v| aggregate_report(&v, slice));
    match report {
        Ok(r) => {
            let o = &r.overall;
            let line = format!(
                "Acc {:.2}%, VA {:?}, EX {:?}, Acc|EX {:?}",
                o.acc, o.va, o.ex_rate, o.acc_given_ex
            );
            if o.va.is_some() && o.ex_rate.is_some() && o.acc_given_ex.is_some() {
                Gate::Pass(line)
            } else {
                Gate::Fail(line)
            }
        }
        Err(e) => Gate::Fail(e.to_string()),
    }
}

fn guarded(f: impl FnOnce() -> Outcome) -> Gate {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(s)) => Gate::Pass(s),
        Ok(Err(s)) => Gate::Fail(s),
        Err(p) => Gate::Fail(format!(
            "panicked: {}",
            p.downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default()
        )),
    }
}

fn report(n: u8, gate: &Gate) {
    let (tag, msg) = match gate {
        Gate::Pass(m) => ("PASS", m),
        Gate::Fail(m) => ("FAIL", m),
        Gate::Skip(m) => ("SKIP", m),
    };
    println!("criterion {n:>2}: {tag}  {msg}");
}

fn main() -> ExitCode {
    let t = Instant::now();
    let (ds, store, bench) = build_small();
    let build_time = t.elapsed();
    let bench_bytes = to_jsonl(&bench);
    let mut fx = Fixture {
        ds,
        store,
        bench,
        bench_bytes,
        build_time,
        large: None,
    };

    let mut failed = Vec::new();
    let run = |n: u8, gate: Gate, failed: &mut Vec<u8>| {
        report(n, &gate);
        if matches!(gate, Gate::Fail(_)) && n != 10 {
            failed.push(n);
        }
    };
    run(1, guarded(|| criterion_1(&fx)), &mut failed);
    run(2, guarded(|| criterion_2(&fx)), &mut failed);
    run(3, guarded(criterion_3), &mut failed);
    let mut large = None;
    run(4, guarded(|| criterion_4(&mut large)), &mut failed);
    fx.large = large;
    run(5, guarded(|| criterion_5(&fx)), &mut failed);
    run(6, guarded(|| criterion_6(&fx)), &mut failed);
    run(7, guarded(|| criterion_7(&fx)), &mut failed);
    run(8, guarded(|| criterion_8(&fx)), &mut failed);
    run(9, guarded(|| criterion_9(&fx)), &mut failed);
    run(10, criterion_10(&fx), &mut failed);

    println!("acceptance finished in {:.1}s", t.elapsed().as_secs_f64());
    if failed.is_empty() {
        ExitCode::SUCCESS
    } else {
        println!("failing criteria: {failed:?}");
        ExitCode::FAILURE
    }
}
