//! Relational materialization of a dataset and guarded read-only SQL.

mod guard;

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Mutex;
use std::time::{Duration, Instant};

use chrono::{DateTime, NaiveDate, SecondsFormat, Utc};
use rusqlite::types::ValueRef;
use rusqlite::{params, Connection, OpenFlags};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

pub use guard::{split_statements, validate_sql, SqlDiagnostic, SqlVerdict};

use crate::lifelog::{
    align_with_offset, registry, AlignedDataset, DailyMetric, DomainTag, EventRecord, RecordValue,
    UserId,
};

/// The published DDL, embedded verbatim in DP prompts.
pub const SCHEMA_SQL: &str = include_str!("../../schema.sql");

const SCHEMA_VERSION: &str = "1";

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("statement is not a single SELECT: {0}")]
    NotSelect(String),
    #[error("multiple statements: {0}")]
    MultiStatement(String),
    #[error("parse error: {0}")]
    Parse(String),
    #[error("execution error: {0}")]
    Exec(String),
    #[error("query exceeded the {0:?} timeout")]
    Timeout(Duration),
    #[error("query returned more than {0} rows")]
    RowLimitExceeded(usize),
    #[error("database file {0} already exists")]
    Exists(PathBuf),
    #[error("storage failure: {0}")]
    Storage(String),
}

impl From<rusqlite::Error> for StoreError {
    fn from(e: rusqlite::Error) -> Self {
        StoreError::Storage(e.to_string())
    }
}

impl StoreError {
    /// Folds an execution failure into a VA diagnostic.
    pub fn diagnostic(&self) -> SqlDiagnostic {
        let verdict = match self {
            StoreError::NotSelect(_) => SqlVerdict::NotSelect,
            StoreError::MultiStatement(_) => SqlVerdict::MultiStatement,
            StoreError::Parse(_) => SqlVerdict::ParseError,
            _ => SqlVerdict::ExecError,
        };
        SqlDiagnostic::new(verdict, self.to_string())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ExecLimits {
    pub max_rows: usize,
    pub timeout: Duration,
}

impl Default for ExecLimits {
    fn default() -> Self {
        Self {
            max_rows: 10_000,
            timeout: Duration::from_secs(10),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Cell {
    Null,
    Number(f64),
    Text(String),
}

impl Cell {
    pub fn as_number(&self) -> Option<f64> {
        match self {
            Cell::Number(v) => Some(*v),
            Cell::Text(t) => t.trim().parse().ok(),
            Cell::Null => None,
        }
    }

    pub fn render(&self) -> String {
        match self {
            Cell::Null => "NULL".into(),
            Cell::Number(v) => format!("{v}"),
            Cell::Text(t) => t.clone(),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ResultTable {
    pub columns: Vec<String>,
    pub rows: Vec<Vec<Cell>>,
}

impl ResultTable {
    pub fn cells(&self) -> impl Iterator<Item = &Cell> {
        self.rows.iter().flatten()
    }

    /// Pipe-separated text rendering, capped at `max_rows` rows.
    pub fn render(&self, max_rows: usize) -> String {
        let mut out = self.columns.join(" | ");
        out.push('\n');
        for row in self.rows.iter().take(max_rows) {
            let line: Vec<String> = row.iter().map(Cell::render).collect();
            out.push_str(&line.join(" | "));
            out.push('\n');
        }
        if self.rows.len() > max_rows {
            out.push_str(&format!("... ({} more rows)\n", self.rows.len() - max_rows));
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TableCounts {
    pub users: usize,
    pub daily_metrics: usize,
    pub events: usize,
}

/// A read-only relational store built from an [`AlignedDataset`].
pub struct RelationalStore {
    target: String,
    path: Option<PathBuf>,
    // Keeps a shared in-memory database alive.
    _anchor: Option<Mutex<Connection>>,
    pool: Mutex<Vec<Connection>>,
}

impl std::fmt::Debug for RelationalStore {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("RelationalStore")
            .field("target", &self.target)
            .finish()
    }
}

fn ts(t: &DateTime<Utc>) -> String {
    t.to_rfc3339_opts(SecondsFormat::Secs, true)
}

fn populate(conn: &mut Connection, ds: &AlignedDataset) -> Result<(), StoreError> {
    conn.execute_batch(SCHEMA_SQL)?;
    let tx = conn.transaction()?;
    {
        let mut users = tx.prepare("INSERT INTO users (user_id) VALUES (?1)")?;
        for u in ds.users() {
            users.execute(params![u.as_str()])?;
        }
        let mut daily = tx.prepare(
            "INSERT INTO daily_metrics (user_id, domain, date, metric, value_num, value_text, unit) \
             VALUES (?1, ?2, ?3, ?4, ?5, ?6, ?7)",
        )?;
        for r in ds.daily() {
            daily.execute(params![
                r.user.as_str(),
                r.domain.as_str(),
                r.date.to_string(),
                r.metric,
                r.value.as_number(),
                r.value.as_category(),
                r.unit
            ])?;
        }
        let mut events = tx.prepare(
            "INSERT INTO events (event_id, user_id, domain, date, start_ts, end_ts, metric, value_num, value_text, unit) \
             VALUES (?1, ?2, ?3, ?4, ?5, ?6, ?7, ?8, ?9, ?10)",
        )?;
        for (i, e) in ds.events().iter().enumerate() {
            events.execute(params![
                i as i64 + 1,
                e.user.as_str(),
                e.domain.as_str(),
                ds.event_date(e).to_string(),
                ts(&e.start),
                e.end.as_ref().map(ts),
                e.metric,
                e.value.as_number(),
                e.value.as_category(),
                e.unit
            ])?;
        }
        let mut meta = tx.prepare("INSERT INTO dataset_meta (key, value) VALUES (?1, ?2)")?;
        meta.execute(params!["reference_date", ds.reference_date().to_string()])?;
        meta.execute(params!["utc_offset_minutes", ds.utc_offset_minutes().to_string()])?;
        meta.execute(params!["schema_version", SCHEMA_VERSION])?;
        meta.execute(params!["registry_version", crate::lifelog::registry::REGISTRY_VERSION])?;
    }
    tx.commit()?;
    Ok(())
}

fn open_reader(target: &str) -> Result<Connection, StoreError> {
    let conn = Connection::open_with_flags(
        target,
        OpenFlags::SQLITE_OPEN_READ_ONLY | OpenFlags::SQLITE_OPEN_URI | OpenFlags::SQLITE_OPEN_NO_MUTEX,
    )?;
    conn.execute_batch("PRAGMA query_only = ON;")?;
    Ok(conn)
}

impl RelationalStore {
    /// Builds an in-memory store.
    pub fn build(ds: &AlignedDataset) -> Result<Self, StoreError> {
        static COUNTER: AtomicU64 = AtomicU64::new(0);
        let n = COUNTER.fetch_add(1, Ordering::Relaxed);
        let target = format!(
            "file:lifebench_mem_{}_{n}?mode=memory&cache=shared",
            std::process::id()
        );
        let mut anchor = Connection::open_with_flags(
            &target,
            OpenFlags::SQLITE_OPEN_READ_WRITE
                | OpenFlags::SQLITE_OPEN_CREATE
                | OpenFlags::SQLITE_OPEN_URI
                | OpenFlags::SQLITE_OPEN_NO_MUTEX,
        )?;
        populate(&mut anchor, ds)?;
        Ok(Self {
            target,
            path: None,
            _anchor: Some(Mutex::new(anchor)),
            pool: Mutex::new(Vec::new()),
        })
    }

    /// Builds a store in a new database file. Refuses to overwrite.
    pub fn build_file(ds: &AlignedDataset, path: &Path) -> Result<Self, StoreError> {
        if path.exists() {
            return Err(StoreError::Exists(path.to_path_buf()));
        }
        {
            let mut conn = Connection::open(path)?;
            populate(&mut conn, ds)?;
        }
        Self::open(path)
    }

    /// Opens an existing database file read-only.
    pub fn open(path: &Path) -> Result<Self, StoreError> {
        if !path.exists() {
            return Err(StoreError::Storage(format!("{} does not exist", path.display())));
        }
        let target = format!("file:{}?mode=ro", path.display());
        let first = open_reader(&target)?;
        Ok(Self {
            target,
            path: Some(path.to_path_buf()),
            _anchor: None,
            pool: Mutex::new(vec![first]),
        })
    }

    pub fn path(&self) -> Option<&Path> {
        self.path.as_deref()
    }

    fn with_conn<R>(
        &self,
        f: impl FnOnce(&Connection) -> Result<R, StoreError>,
    ) -> Result<R, StoreError> {
        let conn = match self.pool.lock().expect("pool lock").pop() {
            Some(c) => c,
            None => open_reader(&self.target)?,
        };
        let out = f(&conn);
        self.pool.lock().expect("pool lock").push(conn);
        out
    }

    /// Runs a single read-only SELECT under `limits`.
    pub fn execute_select(&self, sql: &str, limits: ExecLimits) -> Result<ResultTable, StoreError> {
        let diag = validate_sql(sql);
        match diag.verdict {
            SqlVerdict::Valid => {}
            SqlVerdict::NotSelect => return Err(StoreError::NotSelect(diag.message)),
            SqlVerdict::MultiStatement => return Err(StoreError::MultiStatement(diag.message)),
            _ => return Err(StoreError::Parse(diag.message)),
        }
        self.with_conn(|conn| run_select(conn, sql, limits))
    }

    /// Validates and executes, folding every failure into the diagnostic.
    pub fn check_and_execute(&self, sql: &str, limits: ExecLimits) -> (SqlDiagnostic, Option<ResultTable>) {
        match self.execute_select(sql, limits) {
            Ok(t) => (SqlDiagnostic::valid(), Some(t)),
            Err(e) => (e.diagnostic(), None),
        }
    }

    pub fn table_counts(&self) -> Result<TableCounts, StoreError> {
        self.with_conn(|c| {
            let count = |t: &str| -> Result<usize, StoreError> {
                Ok(c.query_row(&format!("SELECT COUNT(*) FROM {t}"), [], |r| r.get::<_, i64>(0))? as usize)
            };
            Ok(TableCounts {
                users: count("users")?,
                daily_metrics: count("daily_metrics")?,
                events: count("events")?,
            })
        })
    }

    /// SHA-256 over the schema and every row of every table.
    pub fn checksum(&self) -> Result<String, StoreError> {
        self.with_conn(|c| {
            let mut h = Sha256::new();
            let mut schema = c.prepare("SELECT type, name, sql FROM sqlite_master ORDER BY type, name")?;
            let mut rows = schema.query([])?;
            while let Some(r) = rows.next()? {
                for i in 0..3 {
                    h.update(format!("{:?}\x1f", r.get_ref(i)?).as_bytes());
                }
                h.update(b"\n");
            }
            for (table, order) in [
                ("users", "user_id"),
                ("daily_metrics", "user_id, date, metric"),
                ("events", "event_id"),
                ("dataset_meta", "key"),
            ] {
                h.update(table.as_bytes());
                let mut stmt = c.prepare(&format!("SELECT * FROM {table} ORDER BY {order}"))?;
                let n = stmt.column_count();
                let mut rows = stmt.query([])?;
                while let Some(r) = rows.next()? {
                    for i in 0..n {
                        h.update(format!("{:?}\x1f", r.get_ref(i)?).as_bytes());
                    }
                    h.update(b"\n");
                }
            }
            Ok(hex::encode(h.finalize()))
        })
    }

    /// Reads the stored records back into a dataset.
    pub fn load_dataset(&self) -> Result<AlignedDataset, StoreError> {
        self.with_conn(|c| {
            let meta = |key: &str| -> Result<String, StoreError> {
                Ok(c.query_row("SELECT value FROM dataset_meta WHERE key = ?1", [key], |r| r.get(0))?)
            };
            let reference: NaiveDate = meta("reference_date")?
                .parse()
                .map_err(|e| StoreError::Storage(format!("bad reference_date: {e}")))?;
            let offset: i32 = meta("utc_offset_minutes")?
                .parse()
                .map_err(|e| StoreError::Storage(format!("bad utc offset: {e}")))?;
            let bad = |e: String| StoreError::Storage(e);
            let value = |num: Option<f64>, text: Option<String>| match (num, text) {
                (Some(v), _) => Ok(RecordValue::Number(v)),
                (None, Some(t)) => Ok(RecordValue::Category(t)),
                (None, None) => Err(StoreError::Storage("row without value".into())),
            };

            let mut daily = Vec::new();
            let mut stmt = c.prepare(
                "SELECT user_id, domain, date, metric, value_num, value_text, unit FROM daily_metrics",
            )?;
            let mut rows = stmt.query([])?;
            while let Some(r) = rows.next()? {
                daily.push(DailyMetric {
                    user: UserId::new(r.get::<_, String>(0)?).map_err(|e| bad(e.to_string()))?,
                    domain: r.get::<_, String>(1)?.parse::<DomainTag>().map_err(bad)?,
                    date: r.get::<_, String>(2)?.parse().map_err(|e| bad(format!("{e}")))?,
                    metric: r.get(3)?,
                    value: value(r.get(4)?, r.get(5)?)?,
                    unit: r.get(6)?,
                });
            }
            let mut events = Vec::new();
            let mut stmt = c.prepare(
                "SELECT user_id, domain, start_ts, end_ts, metric, value_num, value_text, unit FROM events ORDER BY event_id",
            )?;
            let mut rows = stmt.query([])?;
            let parse_ts = |s: String| {
                DateTime::parse_from_rfc3339(&s)
                    .map(|t| t.with_timezone(&Utc))
                    .map_err(|e| bad(format!("bad timestamp {s}: {e}")))
            };
            while let Some(r) = rows.next()? {
                events.push(EventRecord {
                    user: UserId::new(r.get::<_, String>(0)?).map_err(|e| bad(e.to_string()))?,
                    domain: r.get::<_, String>(1)?.parse::<DomainTag>().map_err(bad)?,
                    start: parse_ts(r.get(2)?)?,
                    end: r.get::<_, Option<String>>(3)?.map(parse_ts).transpose()?,
                    metric: r.get(4)?,
                    value: value(r.get(5)?, r.get(6)?)?,
                    unit: r.get(7)?,
                });
            }
            align_with_offset(events, daily, Some(reference), offset)
                .map_err(|e| StoreError::Storage(e.to_string()))
        })
    }

    /// Distinct metric names present in the store (for prompts and checks).
    pub fn metrics_present(&self) -> Result<BTreeSet<String>, StoreError> {
        self.with_conn(|c| {
            let mut stmt = c.prepare("SELECT DISTINCT metric FROM daily_metrics UNION SELECT DISTINCT metric FROM events")?;
            let names = stmt
                .query_map([], |r| r.get::<_, String>(0))?
                .collect::<Result<BTreeSet<_>, _>>()?;
            debug_assert!(names.iter().all(|n| registry().get(n).is_some()));
            Ok(names)
        })
    }
}

fn run_select(conn: &Connection, sql: &str, limits: ExecLimits) -> Result<ResultTable, StoreError> {
    let classify = |e: rusqlite::Error| -> StoreError {
        let msg = e.to_string();
        if let rusqlite::Error::SqliteFailure(f, _) = &e {
            if f.code == rusqlite::ErrorCode::OperationInterrupted {
                return StoreError::Timeout(limits.timeout);
            }
        }
        if matches!(e, rusqlite::Error::MultipleStatement) {
            return StoreError::MultiStatement(msg);
        }
        if msg.contains("syntax error") || msg.contains("incomplete input") || msg.contains("unrecognized token") {
            StoreError::Parse(msg)
        } else {
            StoreError::Exec(msg)
        }
    };

    let mut stmt = conn.prepare(sql).map_err(classify)?;
    if !stmt.readonly() {
        return Err(StoreError::NotSelect("statement would modify the database".into()));
    }
    let columns: Vec<String> = stmt.column_names().iter().map(|s| s.to_string()).collect();
    let deadline = Instant::now() + limits.timeout;
    conn.progress_handler(1_000, Some(move || Instant::now() > deadline));
    let result = (|| {
        let mut rows = stmt.query([]).map_err(classify)?;
        let mut out = Vec::new();
        while let Some(r) = rows.next().map_err(classify)? {
            if out.len() == limits.max_rows {
                return Err(StoreError::RowLimitExceeded(limits.max_rows));
            }
            let mut cells = Vec::with_capacity(columns.len());
            for i in 0..columns.len() {
                cells.push(match r.get_ref(i).map_err(classify)? {
                    ValueRef::Null => Cell::Null,
                    ValueRef::Integer(v) => Cell::Number(v as f64),
                    ValueRef::Real(v) => Cell::Number(v),
                    ValueRef::Text(t) => Cell::Text(String::from_utf8_lossy(t).into_owned()),
                    ValueRef::Blob(b) => Cell::Text(hex::encode(b)),
                });
            }
            out.push(cells);
        }
        Ok(out)
    })();
    conn.progress_handler(0, None::<fn() -> bool>);
    Ok(ResultTable {
        columns,
        rows: result?,
    })
}

/// Materializes `ds` into a fresh in-memory store.
pub fn build_database(ds: &AlignedDataset) -> Result<RelationalStore, StoreError> {
    RelationalStore::build(ds)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lifelog::registry::names;
    use crate::lifelog::synth::{synthesize_dataset, SynthSpec};
    use crate::lifelog::{align, TimeWindow};

    fn small() -> AlignedDataset {
        synthesize_dataset(&SynthSpec::new(42, 3, 7)).unwrap()
    }

    #[test]
    fn counts_match_source() {
        let ds = small();
        let store = build_database(&ds).unwrap();
        let c = store.table_counts().unwrap();
        assert_eq!(c.users, 3);
        assert_eq!(c.daily_metrics, ds.daily().len());
        assert_eq!(c.events, ds.events().len());
    }

    #[test]
    fn empty_event_dataset() {
        let ds = small();
        let daily: Vec<_> = ds.daily().to_vec();
        let ds = align(vec![], daily, None).unwrap();
        let store = build_database(&ds).unwrap();
        assert_eq!(store.table_counts().unwrap().events, 0);
    }

    #[test]
    fn rebuild_is_identical() {
        let ds = small();
        let a = build_database(&ds).unwrap();
        let b = build_database(&ds).unwrap();
        assert_eq!(a.checksum().unwrap(), b.checksum().unwrap());
        assert_eq!(a.table_counts().unwrap(), b.table_counts().unwrap());
    }

    #[test]
    fn select_and_errors() {
        let store = build_database(&small()).unwrap();
        let t = store.execute_select("SELECT COUNT(*) FROM users", ExecLimits::default()).unwrap();
        assert_eq!(t.rows, vec![vec![Cell::Number(3.0)]]);
        assert!(matches!(
            store.execute_select("SELECT * FROM no_such_table", ExecLimits::default()),
            Err(StoreError::Exec(_))
        ));
        assert!(matches!(
            store.execute_select("SELEC 1", ExecLimits::default()),
            Err(StoreError::NotSelect(_))
        ));
        assert!(matches!(
            store.execute_select("SELECT FROM WHERE", ExecLimits::default()),
            Err(StoreError::Parse(_))
        ));
    }

    #[test]
    fn daily_sleep_rows_for_one_user_week() {
        let ds = small();
        let store = build_database(&ds).unwrap();
        let u = ds.users().iter().next().unwrap();
        let expected = ds.series(u, names::SLEEP_MINUTES, ds.date_span()).len();
        let t = store
            .execute_select(
                &format!(
                    "SELECT date, value_num FROM daily_metrics WHERE user_id = '{u}' AND metric = 'sleep.sleep_minutes' ORDER BY date"
                ),
                ExecLimits::default(),
            )
            .unwrap();
        assert_eq!(t.rows.len(), expected);
        assert_eq!(TimeWindow::ending_at(ds.reference_date(), 7), ds.date_span());
    }

    #[test]
    fn row_limit_and_timeout() {
        let store = build_database(&small()).unwrap();
        let tiny = ExecLimits {
            max_rows: 5,
            timeout: Duration::from_secs(10),
        };
        assert!(matches!(
            store.execute_select("SELECT * FROM daily_metrics", tiny),
            Err(StoreError::RowLimitExceeded(5))
        ));
        let quick = ExecLimits {
            max_rows: 10,
            timeout: Duration::from_millis(50),
        };
        let slow = "WITH RECURSIVE c(x) AS (SELECT 1 UNION ALL SELECT x + 1 FROM c) SELECT MAX(x) FROM c";
        assert!(matches!(store.execute_select(slow, quick), Err(StoreError::Timeout(_))));
    }

    #[test]
    fn writes_never_reach_the_store() {
        let store = build_database(&small()).unwrap();
        let before = store.checksum().unwrap();
        for sql in [
            "DROP TABLE users",
            "WITH x AS (SELECT 1) DELETE FROM events",
            "SELECT 1; DELETE FROM users",
            "INSERT INTO users VALUES ('evil')",
            "PRAGMA query_only = OFF",
            "ATTACH DATABASE ':memory:' AS x",
        ] {
            let (diag, table) = store.check_and_execute(sql, ExecLimits::default());
            assert!(!diag.is_valid(), "{sql}");
            assert!(table.is_none());
        }
        assert_eq!(store.checksum().unwrap(), before);
    }

    #[test]
    fn file_store_round_trips_dataset() {
        let ds = small();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("life.db");
        let store = RelationalStore::build_file(&ds, &path).unwrap();
        assert_eq!(store.load_dataset().unwrap(), ds);
        assert!(matches!(
            RelationalStore::build_file(&ds, &path),
            Err(StoreError::Exists(_))
        ));
        let reopened = RelationalStore::open(&path).unwrap();
        assert_eq!(reopened.checksum().unwrap(), store.checksum().unwrap());
    }
}
