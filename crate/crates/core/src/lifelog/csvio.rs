//! CSV bundle export and manifest-driven ingestion.
//!
//! A bundle is a directory holding one CSV file per (domain, granularity)
//! plus `manifest.toml`, which maps each file's columns onto the logical
//! record fields. See FORMATS.md for the layout.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use chrono::{DateTime, NaiveDate, NaiveDateTime, SecondsFormat, Utc};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::registry::{registry, Granularity, ValueKind};
use super::{align_with_offset, AlignedDataset, DailyMetric, DomainTag, EventRecord, RecordValue, UserId};

pub const MANIFEST_FILE: &str = "manifest.toml";

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RowDiagnostic {
    pub file: String,
    pub line: u64,
    pub message: String,
}

impl fmt::Display for RowDiagnostic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}: {}", self.file, self.line, self.message)
    }
}

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("bad manifest: {0}")]
    Manifest(String),
    #[error("{} row-level problem(s); first: {}", .0.len(), .0[0])]
    Rows(Vec<RowDiagnostic>),
    #[error("csv write error: {0}")]
    Csv(#[from] csv::Error),
}

/// Column mapping for one table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ColumnMap {
    pub user: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub date: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub start: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub end: Option<String>,
    pub metric: String,
    pub value: String,
    pub unit: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TableSpec {
    pub file: String,
    pub domain: DomainTag,
    pub granularity: Granularity,
    pub columns: ColumnMap,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub version: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reference_date: Option<NaiveDate>,
    #[serde(default)]
    pub utc_offset_minutes: i32,
    #[serde(rename = "table")]
    pub tables: Vec<TableSpec>,
}

impl Manifest {
    pub fn read(path: &Path) -> Result<Self, IngestError> {
        let text = fs::read_to_string(path).map_err(|source| IngestError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        toml::from_str(&text).map_err(|e| IngestError::Manifest(e.to_string()))
    }
}

fn table_name(domain: DomainTag, granularity: Granularity) -> String {
    match granularity {
        Granularity::Daily => format!("{domain}_daily.csv"),
        Granularity::Event => format!("{domain}_events.csv"),
    }
}

fn format_ts(ts: &DateTime<Utc>) -> String {
    ts.to_rfc3339_opts(SecondsFormat::Secs, true)
}

fn parse_ts(s: &str) -> Option<DateTime<Utc>> {
    if let Ok(t) = DateTime::parse_from_rfc3339(s) {
        return Some(t.with_timezone(&Utc));
    }
    NaiveDateTime::parse_from_str(s, "%Y-%m-%d %H:%M:%S")
        .or_else(|_| NaiveDateTime::parse_from_str(s, "%Y-%m-%dT%H:%M:%S"))
        .ok()
        .map(|t| t.and_utc())
}

/// Writes the dataset as a CSV bundle and returns the manifest written.
pub fn export_csv(ds: &AlignedDataset, dir: &Path) -> Result<Manifest, IngestError> {
    fs::create_dir_all(dir).map_err(|source| IngestError::Io {
        path: dir.to_path_buf(),
        source,
    })?;
    let mut combos: Vec<(DomainTag, Granularity)> = Vec::new();
    for m in registry().iter() {
        if !combos.contains(&(m.domain, m.granularity)) {
            combos.push((m.domain, m.granularity));
        }
    }
    combos.sort_by_key(|(d, g)| (*d, matches!(g, Granularity::Event)));

    let mut tables = Vec::new();
    for (domain, gran) in combos {
        let file = table_name(domain, gran);
        let mut w = csv::Writer::from_path(dir.join(&file))?;
        let columns = match gran {
            Granularity::Daily => {
                w.write_record(["user_id", "date", "metric", "value", "unit"])?;
                for r in ds.daily().iter().filter(|r| r.domain == domain) {
                    w.write_record([
                        r.user.as_str(),
                        &r.date.to_string(),
                        &r.metric,
                        &r.value.to_string(),
                        &r.unit,
                    ])?;
                }
                ColumnMap {
                    user: "user_id".into(),
                    date: Some("date".into()),
                    start: None,
                    end: None,
                    metric: "metric".into(),
                    value: "value".into(),
                    unit: "unit".into(),
                }
            }
            Granularity::Event => {
                w.write_record(["user_id", "start", "end", "metric", "value", "unit"])?;
                for e in ds.events().iter().filter(|e| e.domain == domain) {
                    w.write_record([
                        e.user.as_str(),
                        &format_ts(&e.start),
                        &e.end.as_ref().map(format_ts).unwrap_or_default(),
                        &e.metric,
                        &e.value.to_string(),
                        &e.unit,
                    ])?;
                }
                ColumnMap {
                    user: "user_id".into(),
                    date: None,
                    start: Some("start".into()),
                    end: Some("end".into()),
                    metric: "metric".into(),
                    value: "value".into(),
                    unit: "unit".into(),
                }
            }
        };
        w.flush().map_err(|source| IngestError::Io {
            path: dir.join(&file),
            source,
        })?;
        tables.push(TableSpec {
            file,
            domain,
            granularity: gran,
            columns,
        });
    }
    let manifest = Manifest {
        version: 1,
        reference_date: Some(ds.reference_date()),
        utc_offset_minutes: ds.utc_offset_minutes(),
        tables,
    };
    let text = toml::to_string(&manifest).map_err(|e| IngestError::Manifest(e.to_string()))?;
    let path = dir.join(MANIFEST_FILE);
    fs::write(&path, text).map_err(|source| IngestError::Io { path, source })?;
    Ok(manifest)
}

struct Columns {
    idx: BTreeMap<&'static str, usize>,
}

impl Columns {
    fn get<'r>(&self, row: &'r csv::StringRecord, field: &str) -> Option<&'r str> {
        self.idx.get(field).and_then(|i| row.get(*i)).map(str::trim)
    }
}

fn resolve_columns(
    headers: &csv::StringRecord,
    table: &TableSpec,
    file: &str,
) -> Result<Columns, RowDiagnostic> {
    let c = &table.columns;
    let mut wanted: Vec<(&'static str, Option<&String>, bool)> = vec![
        ("user", Some(&c.user), true),
        ("metric", Some(&c.metric), true),
        ("value", Some(&c.value), true),
        ("unit", Some(&c.unit), true),
    ];
    match table.granularity {
        Granularity::Daily => wanted.push(("date", c.date.as_ref(), true)),
        Granularity::Event => {
            wanted.push(("start", c.start.as_ref(), true));
            wanted.push(("end", c.end.as_ref(), false));
        }
    }
    let mut idx = BTreeMap::new();
    for (field, column, required) in wanted {
        let Some(column) = column else {
            if required {
                return Err(RowDiagnostic {
                    file: file.to_string(),
                    line: 1,
                    message: format!("manifest maps no column for `{field}`"),
                });
            }
            continue;
        };
        match headers.iter().position(|h| h.trim() == column) {
            Some(i) => {
                idx.insert(field, i);
            }
            None if required => {
                return Err(RowDiagnostic {
                    file: file.to_string(),
                    line: 1,
                    message: format!("missing column `{column}` (field `{field}`)"),
                })
            }
            None => {}
        }
    }
    Ok(Columns { idx })
}

fn parse_value(metric: &str, raw: &str) -> Result<RecordValue, String> {
    let spec = registry()
        .get(metric)
        .ok_or_else(|| format!("unknown metric `{metric}`"))?;
    match spec.kind {
        ValueKind::Numeric => raw
            .parse::<f64>()
            .ok()
            .filter(|v| v.is_finite())
            .map(RecordValue::Number)
            .ok_or_else(|| format!("unparseable numeric value `{raw}`")),
        ValueKind::Categorical if raw.is_empty() => Err("empty category".into()),
        ValueKind::Categorical => Ok(RecordValue::Category(raw.to_string())),
    }
}

/// Loads a CSV bundle described by `manifest_path` (files resolved relative
/// to `dir`). Any row-level problem fails the load with every diagnostic.
pub fn load_csv(dir: &Path, manifest_path: &Path) -> Result<AlignedDataset, IngestError> {
    let manifest = Manifest::read(manifest_path)?;
    let mut daily = Vec::new();
    let mut events = Vec::new();
    let mut diags = Vec::new();

    for table in &manifest.tables {
        let path = dir.join(&table.file);
        let mut reader = csv::Reader::from_path(&path).map_err(|e| IngestError::Io {
            path: path.clone(),
            source: std::io::Error::other(e.to_string()),
        })?;
        let headers = reader.headers()?.clone();
        let cols = match resolve_columns(&headers, table, &table.file) {
            Ok(c) => c,
            Err(d) => {
                diags.push(d);
                continue;
            }
        };
        for row in reader.records() {
            let row = match row {
                Ok(r) => r,
                Err(e) => {
                    let line = e.position().map(|p| p.line()).unwrap_or(0);
                    diags.push(RowDiagnostic {
                        file: table.file.clone(),
                        line,
                        message: e.to_string(),
                    });
                    continue;
                }
            };
            let line = row.position().map(|p| p.line()).unwrap_or(0);
            match parse_row(&row, &cols, table) {
                Ok(Parsed::Daily(d)) => daily.push((table.file.clone(), line, d)),
                Ok(Parsed::Event(e)) => events.push((table.file.clone(), line, e)),
                Err(message) => diags.push(RowDiagnostic {
                    file: table.file.clone(),
                    line,
                    message,
                }),
            }
        }
    }

    // Duplicate daily keys are reported per offending row.
    let mut seen: BTreeMap<(String, NaiveDate, String), (String, u64)> = BTreeMap::new();
    for (file, line, d) in &daily {
        let key = (d.user.to_string(), d.date, d.metric.clone());
        if let Some((f0, l0)) = seen.get(&key) {
            diags.push(RowDiagnostic {
                file: file.clone(),
                line: *line,
                message: format!(
                    "duplicate daily row for ({}, {}, {}); first at {f0}:{l0}",
                    key.0, key.1, key.2
                ),
            });
        } else {
            seen.insert(key, (file.clone(), *line));
        }
    }

    if !diags.is_empty() {
        return Err(IngestError::Rows(diags));
    }
    align_with_offset(
        events.into_iter().map(|(_, _, e)| e).collect(),
        daily.into_iter().map(|(_, _, d)| d).collect(),
        manifest.reference_date,
        manifest.utc_offset_minutes,
    )
    .map_err(|e| {
        IngestError::Rows(vec![RowDiagnostic {
            file: MANIFEST_FILE.into(),
            line: 0,
            message: e.to_string(),
        }])
    })
}

enum Parsed {
    Daily(DailyMetric),
    Event(EventRecord),
}

fn parse_row(row: &csv::StringRecord, cols: &Columns, table: &TableSpec) -> Result<Parsed, String> {
    let field = |name: &str| {
        cols.get(row, name)
            .ok_or_else(|| format!("row is missing field `{name}`"))
    };
    let user = UserId::new(field("user")?).map_err(|e| e.to_string())?;
    let metric = field("metric")?.to_string();
    let spec = registry()
        .get(&metric)
        .ok_or_else(|| format!("unknown metric `{metric}`"))?;
    if spec.domain != table.domain {
        return Err(format!("metric `{metric}` does not belong to {}", table.domain));
    }
    if spec.granularity != table.granularity {
        return Err(format!("metric `{metric}` has the wrong granularity for this table"));
    }
    let value = parse_value(&metric, field("value")?)?;
    let unit = field("unit")?.to_string();
    match table.granularity {
        Granularity::Daily => {
            let raw = field("date")?;
            let date = raw
                .parse::<NaiveDate>()
                .map_err(|_| format!("unparseable date `{raw}`"))?;
            let d = DailyMetric {
                user,
                domain: table.domain,
                date,
                metric,
                value,
                unit,
            };
            d.validate().map_err(|e| e.to_string())?;
            Ok(Parsed::Daily(d))
        }
        Granularity::Event => {
            let raw = field("start")?;
            let start = parse_ts(raw).ok_or_else(|| format!("unparseable timestamp `{raw}`"))?;
            let end = match cols.get(row, "end") {
                None | Some("") => None,
                Some(raw) => {
                    Some(parse_ts(raw).ok_or_else(|| format!("unparseable timestamp `{raw}`"))?)
                }
            };
            let e = EventRecord {
                user,
                domain: table.domain,
                start,
                end,
                metric,
                value,
                unit,
            };
            e.validate().map_err(|e| e.to_string())?;
            Ok(Parsed::Event(e))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lifelog::synth::{synthesize_dataset, SynthSpec};

    #[test]
    fn round_trip_equals_source() {
        let ds = synthesize_dataset(&SynthSpec::new(42, 4, 9)).unwrap();
        let dir = tempfile::tempdir().unwrap();
        export_csv(&ds, dir.path()).unwrap();
        let back = load_csv(dir.path(), &dir.path().join(MANIFEST_FILE)).unwrap();
        assert_eq!(back, ds);
    }

    fn write(dir: &Path, name: &str, body: &str) {
        fs::write(dir.join(name), body).unwrap();
    }

    const THREE_TABLES: &str = r#"
version = 1

[[table]]
file = "sleep.csv"
domain = "sleep"
granularity = "daily"
[table.columns]
user = "uid"
date = "day"
metric = "metric"
value = "val"
unit = "unit"

[[table]]
file = "meals.csv"
domain = "diet"
granularity = "event"
[table.columns]
user = "uid"
start = "ts"
metric = "metric"
value = "val"
unit = "unit"

[[table]]
file = "activity.csv"
domain = "activity"
granularity = "event"
[table.columns]
user = "uid"
start = "ts"
end = "ts_end"
metric = "metric"
value = "val"
unit = "unit"
"#;

    #[test]
    fn three_file_directory_loads_all_rows() {
        let dir = tempfile::tempdir().unwrap();
        write(dir.path(), "m.toml", THREE_TABLES);
        write(
            dir.path(),
            "sleep.csv",
            "uid,day,metric,val,unit\nA,2021-03-01,sleep.sleep_minutes,420,min\nA,2021-03-02,sleep.sleep_minutes,400,min\n",
        );
        write(
            dir.path(),
            "meals.csv",
            "uid,ts,metric,val,unit\nA,2021-03-01T08:00:00Z,diet.category,balanced,category\n",
        );
        write(
            dir.path(),
            "activity.csv",
            "uid,ts,ts_end,metric,val,unit\nA,2021-03-02T07:00:00Z,2021-03-02T07:30:00Z,activity.session_minutes,30,min\n",
        );
        let ds = load_csv(dir.path(), &dir.path().join("m.toml")).unwrap();
        assert_eq!(ds.daily().len(), 2);
        assert_eq!(ds.events().len(), 2);
        assert_eq!(ds.reference_date(), "2021-03-02".parse::<NaiveDate>().unwrap());
    }

    #[test]
    fn bad_rows_reported_with_file_and_line() {
        let dir = tempfile::tempdir().unwrap();
        write(dir.path(), "m.toml", THREE_TABLES);
        write(
            dir.path(),
            "sleep.csv",
            "uid,day,metric,val,unit\nA,2021-03-01,sleep.sleep_minutes,420,min\nA,03/02/2021,sleep.sleep_minutes,400,min\nA,2021-03-03,sleep.rem_minutes,1,min\n",
        );
        write(dir.path(), "meals.csv", "uid,ts,metric,val,unit\nA,yesterday,diet.category,x,category\n");
        write(
            dir.path(),
            "activity.csv",
            "uid,ts,ts_end,metric,val,unit\nA,2021-03-02T07:00:00Z,2021-03-02T06:30:00Z,activity.session_minutes,30,min\n",
        );
        let Err(IngestError::Rows(diags)) = load_csv(dir.path(), &dir.path().join("m.toml")) else {
            panic!("expected diagnostics");
        };
        let rendered: Vec<String> = diags.iter().map(|d| d.to_string()).collect();
        assert!(rendered.iter().any(|d| d.starts_with("sleep.csv:3:") && d.contains("date")));
        assert!(rendered.iter().any(|d| d.starts_with("sleep.csv:4:") && d.contains("unknown metric")));
        assert!(rendered.iter().any(|d| d.starts_with("meals.csv:2:") && d.contains("timestamp")));
        assert!(rendered.iter().any(|d| d.starts_with("activity.csv:2:") && d.contains("before start")));
    }

    #[test]
    fn missing_column_reported() {
        let dir = tempfile::tempdir().unwrap();
        write(dir.path(), "m.toml", THREE_TABLES);
        write(dir.path(), "sleep.csv", "uid,metric,val,unit\nA,sleep.sleep_minutes,420,min\n");
        write(dir.path(), "meals.csv", "uid,ts,metric,val,unit\n");
        write(dir.path(), "activity.csv", "uid,ts,ts_end,metric,val,unit\n");
        let Err(IngestError::Rows(diags)) = load_csv(dir.path(), &dir.path().join("m.toml")) else {
            panic!("expected diagnostics");
        };
        assert_eq!(diags.len(), 1);
        assert!(diags[0].to_string().contains("missing column `day`"));
    }
}
