//! IR to SQL compiler and the decoder for its result tables.
//!
//! Result contract by root kind:
//! - number, text, date: one row, answer in column 0
//! - bool: one row, 0/1 in column 0, then the compared quantities
//! - series: rows `(date, value)`; day set: rows `(date)`; users: rows `(user_id, value)`
//! - trend at the root: the series rows; the label is derived host-side
//! - tuple: one row, member `i` in column `i`, then evidence for boolean members

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use super::ops::{trend_direction, Series};
use super::{
    node_label, AggFn, AnswerValue, CohortStatFn, CompareKind, Extreme, Item, Kind, Order,
    QueryError, QueryIR, RunOutput, SetOpKind,
};
use crate::lifelog::TimeWindow;
use crate::store::{Cell, ResultTable};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScalarKind {
    Number,
    Bool,
    Text,
    Date,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "shape", rename_all = "snake_case")]
pub enum ResultContract {
    Scalar { kind: ScalarKind },
    Series,
    Dates,
    Users,
    Trend { window_start: NaiveDate, epsilon: f64 },
    Tuple { kinds: Vec<ScalarKind> },
}

fn quote(s: &str) -> String {
    format!("'{}'", s.replace('\'', "''"))
}

fn literal(v: f64) -> String {
    format!("{v:?}")
}

fn between(w: &TimeWindow) -> String {
    format!(
        "date BETWEEN {} AND {}",
        quote(&w.start.to_string()),
        quote(&w.end.to_string())
    )
}

fn unsupported(n: &QueryIR, path: &str, detail: &str) -> QueryError {
    QueryError::Unsupported {
        node: node_label(path, n),
        detail: detail.to_string(),
    }
}

fn scalar_kind(k: Kind) -> Option<ScalarKind> {
    match k {
        Kind::Number => Some(ScalarKind::Number),
        Kind::Bool => Some(ScalarKind::Bool),
        Kind::Text => Some(ScalarKind::Text),
        Kind::Date => Some(ScalarKind::Date),
        _ => None,
    }
}

/// Window of a series-producing node.
fn series_window(n: &QueryIR) -> Option<TimeWindow> {
    match n {
        QueryIR::SelectSeries { window, .. } => Some(*window),
        QueryIR::AlignDays { target, .. } => series_window(target),
        _ => None,
    }
}

/// Describes the table `compile_to_sql(program)` returns.
pub fn result_contract(program: &QueryIR) -> Result<ResultContract, QueryError> {
    let kind = program.check(None)?;
    Ok(match (kind, program) {
        (_, QueryIR::Trend { child, epsilon }) => ResultContract::Trend {
            window_start: series_window(child)
                .ok_or_else(|| unsupported(program, "root", "trend child has no window"))?
                .start,
            epsilon: *epsilon,
        },
        (Kind::Series, _) => ResultContract::Series,
        (Kind::DaySet, _) => ResultContract::Dates,
        (Kind::Users, _) => ResultContract::Users,
        (Kind::Tuple, QueryIR::Tuple { children }) => ResultContract::Tuple {
            kinds: children
                .iter()
                .map(|c| c.check(None).map(|k| scalar_kind(k).expect("checked scalar")))
                .collect::<Result<_, _>>()?,
        },
        (Kind::Events, _) | (Kind::Tuple, _) => {
            return Err(unsupported(program, "root", "event sets are not answers"))
        }
        (k, _) => ResultContract::Scalar {
            kind: scalar_kind(k).expect("remaining kinds are scalar"),
        },
    })
}

/// Compiles a checked program into a single read-only SELECT.
pub fn compile_to_sql(program: &QueryIR) -> Result<String, QueryError> {
    let kind = program.check(None)?;
    let c = Compiler;
    match (kind, program) {
        (_, QueryIR::Trend { child, .. }) => c.relation(child, "root.child"),
        (Kind::Series | Kind::DaySet | Kind::Users, _) => c.relation(program, "root"),
        (Kind::Events, _) => Err(unsupported(program, "root", "event sets are not answers")),
        (Kind::Tuple, QueryIR::Tuple { children }) => {
            let mut cols = Vec::new();
            let mut evidence = Vec::new();
            for (i, ch) in children.iter().enumerate() {
                let path = format!("root.children[{i}]");
                cols.push(format!("{} AS item{i}", c.scalar(ch, &path)?));
                for (name, expr) in c.evidence(ch, &path)? {
                    evidence.push(format!("{expr} AS item{i}_{name}"));
                }
            }
            cols.extend(evidence);
            Ok(format!("SELECT {}", cols.join(", ")))
        }
        _ => {
            let mut cols = vec![format!("{} AS answer", c.scalar(program, "root")?)];
            for (name, expr) in c.evidence(program, "root")? {
                cols.push(format!("{expr} AS {name}"));
            }
            Ok(format!("SELECT {}", cols.join(", ")))
        }
    }
}

struct Compiler;

impl Compiler {
    /// Quantities a boolean node decides on, as extra output columns.
    fn evidence(&self, n: &QueryIR, path: &str) -> Result<Vec<(&'static str, String)>, QueryError> {
        Ok(match n {
            QueryIR::Compare {
                kind: CompareKind::Greater | CompareKind::Less,
                left,
                right,
            } => vec![
                ("left_value", self.scalar(left, &format!("{path}.left"))?),
                ("right_value", self.scalar(right, &format!("{path}.right"))?),
            ],
            QueryIR::ConsecutiveRun {
                child,
                output: RunOutput::Exists,
                ..
            } => vec![("max_run", self.max_run(child, &format!("{path}.child"))?)],
            _ => vec![],
        })
    }

    fn max_run(&self, days: &QueryIR, path: &str) -> Result<String, QueryError> {
        let r = self.relation(days, path)?;
        Ok(format!(
            "(SELECT COALESCE(MAX(len), 0) FROM (SELECT COUNT(*) AS len FROM \
             (SELECT julianday(date) - ROW_NUMBER() OVER (ORDER BY date) AS grp FROM ({r})) \
             GROUP BY grp))"
        ))
    }

    /// Ordered statistic over the `value` column of relation `r`.
    fn order_stat(r: &str, pick: &str) -> String {
        format!(
            "(SELECT AVG(value) FROM (SELECT value, ROW_NUMBER() OVER (ORDER BY value) AS rn, \
             COUNT(*) OVER () AS cnt FROM ({r})) WHERE {pick})"
        )
    }

    fn median(r: &str) -> String {
        Self::order_stat(r, "rn IN ((cnt + 1) / 2, (cnt + 2) / 2)")
    }

    fn percentile(r: &str, p: u8) -> String {
        Self::order_stat(r, &format!("rn = MAX(1, ({p} * cnt + 99) / 100)"))
    }

    fn per_user_means(metric: &str, window: &TimeWindow) -> String {
        format!(
            "SELECT user_id, AVG(value_num) AS value FROM daily_metrics WHERE metric = {} AND {} \
             AND value_num IS NOT NULL GROUP BY user_id ORDER BY user_id",
            quote(metric),
            between(window)
        )
    }

    /// SELECT statement for set-valued nodes.
    fn relation(&self, n: &QueryIR, path: &str) -> Result<String, QueryError> {
        let sub = |role: &str, c: &QueryIR| self.relation(c, &format!("{path}.{role}"));
        Ok(match n {
            QueryIR::SelectSeries {
                user,
                metric,
                window,
                ..
            } => format!(
                "SELECT date, value_num AS value FROM daily_metrics WHERE user_id = {} AND metric = {} \
                 AND {} AND value_num IS NOT NULL ORDER BY date",
                quote(user.as_str()),
                quote(metric),
                between(window)
            ),
            QueryIR::SelectEvents {
                user,
                domain,
                window,
                predicate,
            } => {
                let mut filt = format!(
                    "user_id = {} AND domain = {} AND {}",
                    quote(user.as_str()),
                    quote(domain.as_str()),
                    between(window)
                );
                if let Some(m) = &predicate.metric {
                    filt.push_str(&format!(" AND metric = {}", quote(m)));
                }
                if let Some(c) = &predicate.category {
                    filt.push_str(&format!(" AND value_text = {}", quote(c)));
                }
                format!(
                    "SELECT date, start_ts, metric, value_num AS value, value_text AS category \
                     FROM events WHERE {filt} ORDER BY date, start_ts, event_id"
                )
            }
            QueryIR::AlignDays { target, days } => {
                let t = sub("target", target)?;
                let conds = days
                    .iter()
                    .map(|d| sub("days", d).map(|r| format!("date IN (SELECT date FROM ({r}))")))
                    .collect::<Result<Vec<_>, _>>()?;
                format!("SELECT * FROM ({t}) WHERE {} ORDER BY date", conds.join(" AND "))
            }
            QueryIR::ThresholdFilter {
                child,
                cmp,
                threshold,
            } => format!(
                "SELECT date FROM ({}) WHERE value {} {} ORDER BY date",
                sub("child", child)?,
                cmp.sql(),
                self.scalar(threshold, &format!("{path}.threshold"))?
            ),
            QueryIR::SetOp { kind, children } => {
                let op = match kind {
                    SetOpKind::Intersect => " INTERSECT ",
                    SetOpKind::Union => " UNION ",
                };
                let parts = children
                    .iter()
                    .map(|c| sub("children", c).map(|r| format!("SELECT date FROM ({r})")))
                    .collect::<Result<Vec<_>, _>>()?;
                format!("SELECT date FROM ({}) ORDER BY date", parts.join(op))
            }
            QueryIR::RankUsers {
                metric,
                window,
                order,
                k,
            } => {
                let dir = match order {
                    Order::Asc => "ASC",
                    Order::Desc => "DESC",
                };
                format!(
                    "SELECT user_id, AVG(value_num) AS value FROM daily_metrics WHERE metric = {} AND {} \
                     AND value_num IS NOT NULL GROUP BY user_id ORDER BY value {dir}, user_id ASC LIMIT {k}",
                    quote(metric),
                    between(window)
                )
            }
            other => return Err(unsupported(other, path, "not a relation")),
        })
    }

    /// Parenthesized scalar expression for value-producing nodes. Booleans
    /// compile to 0/1.
    fn scalar(&self, n: &QueryIR, path: &str) -> Result<String, QueryError> {
        let rel = |role: &str, c: &QueryIR| self.relation(c, &format!("{path}.{role}"));
        let sc = |role: &str, c: &QueryIR| self.scalar(c, &format!("{path}.{role}"));
        Ok(match n {
            QueryIR::Const { value } => format!("({})", literal(*value)),
            QueryIR::Aggregate { func, child } => {
                let r = rel("child", child)?;
                match func {
                    AggFn::Mean => format!("(SELECT AVG(value) FROM ({r}))"),
                    AggFn::Min => format!("(SELECT MIN(value) FROM ({r}))"),
                    AggFn::Max => format!("(SELECT MAX(value) FROM ({r}))"),
                    AggFn::Sum => format!("(SELECT SUM(value) FROM ({r}))"),
                    AggFn::Count => format!("(SELECT COUNT(*) FROM ({r}))"),
                    AggFn::Median => Self::median(&r),
                    AggFn::Percentile(p) => Self::percentile(&r, *p),
                }
            }
            QueryIR::Compare { kind, left, right } => {
                let l = sc("left", left)?;
                let r = sc("right", right)?;
                match kind {
                    CompareKind::Diff => format!("({l} - {r})"),
                    CompareKind::Greater => format!("(CASE WHEN {l} > {r} THEN 1 ELSE 0 END)"),
                    CompareKind::Less => format!("(CASE WHEN {l} < {r} THEN 1 ELSE 0 END)"),
                }
            }
            QueryIR::CountDays { child } => {
                format!("(SELECT COUNT(DISTINCT date) FROM ({}))", rel("child", child)?)
            }
            QueryIR::ConsecutiveRun {
                child,
                min_len,
                output,
            } => {
                let run = self.max_run(child, &format!("{path}.child"))?;
                match output {
                    RunOutput::MaxRun => run,
                    RunOutput::Exists => format!("(CASE WHEN {run} >= {min_len} THEN 1 ELSE 0 END)"),
                }
            }
            QueryIR::Trend { child, epsilon } => {
                let start = series_window(child)
                    .ok_or_else(|| unsupported(n, path, "trend child has no window"))?
                    .start;
                let r = rel("child", child)?;
                format!(
                    "(SELECT CASE WHEN n < 3 THEN NULL \
                     WHEN abs(b) <= {eps} * (mx - mn) / n THEN 'stable' \
                     WHEN b > 0 THEN 'increasing' ELSE 'decreasing' END FROM \
                     (SELECT n, mx, mn, (n * sxy - sx * sy) / (n * sxx - sx * sx) AS b FROM \
                     (SELECT COUNT(*) AS n, SUM(x) AS sx, SUM(value) AS sy, SUM(x * value) AS sxy, \
                     SUM(x * x) AS sxx, MAX(value) AS mx, MIN(value) AS mn FROM \
                     (SELECT julianday(date) - julianday({s}) AS x, value FROM ({r})))))",
                    eps = literal(*epsilon),
                    s = quote(&start.to_string()),
                )
            }
            QueryIR::ArgExtreme { child, extreme } => {
                let dir = match extreme {
                    Extreme::Max => "DESC",
                    Extreme::Min => "ASC",
                };
                format!(
                    "(SELECT date FROM ({}) ORDER BY value {dir}, date ASC LIMIT 1)",
                    rel("child", child)?
                )
            }
            QueryIR::DominantCategory { child, field } => format!(
                "(SELECT category FROM ({}) WHERE metric = {} AND category IS NOT NULL \
                 GROUP BY category ORDER BY COUNT(*) DESC, category ASC LIMIT 1)",
                rel("child", child)?,
                quote(field)
            ),
            QueryIR::CohortStat {
                metric,
                window,
                stat,
            } => {
                let r = Self::per_user_means(metric, window);
                match stat {
                    CohortStatFn::Mean => format!("(SELECT AVG(value) FROM ({r}))"),
                    CohortStatFn::Median => Self::median(&r),
                    CohortStatFn::Percentile(p) => Self::percentile(&r, *p),
                }
            }
            other => return Err(unsupported(other, path, "not a scalar")),
        })
    }
}

fn shape(msg: impl Into<String>) -> QueryError {
    QueryError::ShapeMismatch(msg.into())
}

fn cell_number(c: &Cell) -> Result<f64, QueryError> {
    match c {
        Cell::Number(v) => Ok(*v),
        other => Err(shape(format!("expected number, got {other:?}"))),
    }
}

fn cell_text(c: &Cell) -> Result<String, QueryError> {
    match c {
        Cell::Text(t) => Ok(t.clone()),
        other => Err(shape(format!("expected text, got {other:?}"))),
    }
}

fn cell_date(c: &Cell) -> Result<NaiveDate, QueryError> {
    cell_text(c)?
        .parse()
        .map_err(|e| shape(format!("bad date: {e}")))
}

fn cell_bool(c: &Cell) -> Result<bool, QueryError> {
    match cell_number(c)? {
        1.0 => Ok(true),
        0.0 => Ok(false),
        v => Err(shape(format!("expected 0/1, got {v}"))),
    }
}

fn cell_item(c: &Cell, kind: ScalarKind) -> Result<Item, QueryError> {
    Ok(match kind {
        ScalarKind::Number => Item::Number(cell_number(c)?),
        ScalarKind::Bool => Item::Text(if cell_bool(c)? { "yes" } else { "no" }.into()),
        ScalarKind::Text => Item::Text(cell_text(c)?),
        ScalarKind::Date => Item::Date(cell_date(c)?),
    })
}

fn single_row(table: &ResultTable, min_cols: usize) -> Result<&[Cell], QueryError> {
    match table.rows.as_slice() {
        [row] if row.len() >= min_cols => Ok(row),
        [row] => Err(shape(format!("expected {min_cols} columns, got {}", row.len()))),
        rows => Err(shape(format!("expected one row, got {}", rows.len()))),
    }
}

fn column(table: &ResultTable, idx: usize) -> Result<Vec<&Cell>, QueryError> {
    table
        .rows
        .iter()
        .map(|r| r.get(idx).ok_or_else(|| shape(format!("missing column {idx}"))))
        .collect()
}

fn from_items(items: Vec<Item>) -> Result<AnswerValue, QueryError> {
    AnswerValue::from_items(items).ok_or_else(|| shape("no rows"))
}

/// Turns a result table into the answer it encodes under `contract`.
pub fn decode_result(table: &ResultTable, contract: &ResultContract) -> Result<AnswerValue, QueryError> {
    match contract {
        ResultContract::Scalar { kind } => {
            let row = single_row(table, 1)?;
            Ok(match kind {
                ScalarKind::Number => AnswerValue::Number(cell_number(&row[0])?),
                ScalarKind::Bool => AnswerValue::YesNo(cell_bool(&row[0])?),
                ScalarKind::Text => AnswerValue::Text(cell_text(&row[0])?),
                ScalarKind::Date => AnswerValue::Text(cell_date(&row[0])?.to_string()),
            })
        }
        ResultContract::Series => from_items(
            column(table, 1)?
                .into_iter()
                .map(|c| cell_number(c).map(Item::Number))
                .collect::<Result<_, _>>()?,
        ),
        ResultContract::Dates => from_items(
            column(table, 0)?
                .into_iter()
                .map(|c| cell_date(c).map(Item::Date))
                .collect::<Result<_, _>>()?,
        ),
        ResultContract::Users => from_items(
            column(table, 0)?
                .into_iter()
                .map(|c| cell_text(c).map(Item::Text))
                .collect::<Result<_, _>>()?,
        ),
        ResultContract::Trend {
            window_start,
            epsilon,
        } => {
            let dates = column(table, 0)?;
            let values = column(table, 1)?;
            let mut points = Vec::with_capacity(dates.len());
            for (d, v) in dates.into_iter().zip(values) {
                points.push((cell_date(d)?, cell_number(v)?));
            }
            let end = points.last().map(|(d, _)| *d).unwrap_or(*window_start).max(*window_start);
            let window = TimeWindow::new(*window_start, end).map_err(|e| shape(e.to_string()))?;
            let series = Series::new(window, points).map_err(shape)?;
            let label = trend_direction(&series, *epsilon).map_err(|e| shape(e.to_string()))?;
            Ok(AnswerValue::Text(label.as_str().to_string()))
        }
        ResultContract::Tuple { kinds } => {
            let row = single_row(table, kinds.len())?;
            from_items(
                kinds
                    .iter()
                    .zip(row)
                    .map(|(k, c)| cell_item(c, *k))
                    .collect::<Result<_, _>>()?,
            )
        }
    }
}
