//! Numeric and set primitives shared by the interpreter and the agent tools.

use std::collections::BTreeMap;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use super::{AggFn, CohortStatFn, Order, QueryError};
use crate::lifelog::{AlignedDataset, TimeWindow, UserId};

pub const DEFAULT_TREND_EPSILON: f64 = 0.05;

/// Date-ordered values of one user/metric inside a window.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Series {
    pub window: TimeWindow,
    pub points: Vec<(NaiveDate, f64)>,
}

impl Series {
    /// Fails unless dates are strictly increasing and inside `window`.
    pub fn new(window: TimeWindow, points: Vec<(NaiveDate, f64)>) -> Result<Self, String> {
        for pair in points.windows(2) {
            if pair[0].0 >= pair[1].0 {
                return Err(format!("dates not increasing at {}", pair[1].0));
            }
        }
        if let Some((d, _)) = points.iter().find(|(d, _)| !window.contains(*d)) {
            return Err(format!("{d} outside {window}"));
        }
        Ok(Series { window, points })
    }

    pub fn values(&self) -> Vec<f64> {
        self.points.iter().map(|(_, v)| *v).collect()
    }

    pub fn dates(&self) -> Vec<NaiveDate> {
        self.points.iter().map(|(d, _)| *d).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrendLabel {
    Increasing,
    Decreasing,
    Stable,
}

impl TrendLabel {
    pub fn as_str(self) -> &'static str {
        match self {
            TrendLabel::Increasing => "increasing",
            TrendLabel::Decreasing => "decreasing",
            TrendLabel::Stable => "stable",
        }
    }
}

/// Kahan-Babuska-Neumaier summation, the same scheme SQLite applies to
/// floating-point SUM and AVG.
pub(crate) fn compensated_sum(values: impl IntoIterator<Item = f64>) -> f64 {
    let mut sum = 0.0f64;
    let mut err = 0.0f64;
    for r in values {
        let t = sum + r;
        if sum.abs() > r.abs() {
            err += (sum - t) + r;
        } else {
            err += (r - t) + sum;
        }
        sum = t;
    }
    sum + err
}

pub(crate) fn mean(values: &[f64]) -> f64 {
    compensated_sum(values.iter().copied()) / values.len() as f64
}

pub(crate) fn median_sorted(sorted: &[f64]) -> f64 {
    let n = sorted.len();
    if n % 2 == 1 {
        sorted[n / 2]
    } else {
        compensated_sum([sorted[n / 2 - 1], sorted[n / 2]]) / 2.0
    }
}

/// Nearest-rank percentile: the value at 1-based rank ceil(p·n/100).
pub(crate) fn percentile_sorted(sorted: &[f64], p: u8) -> f64 {
    let n = sorted.len();
    let rank = (p as usize * n).div_ceil(100).max(1);
    sorted[rank - 1]
}

fn sorted(values: &[f64]) -> Vec<f64> {
    let mut s = values.to_vec();
    s.sort_by(|a, b| a.total_cmp(b));
    s
}

fn empty(op: &str) -> QueryError {
    QueryError::EmptyWindow { node: op.to_string() }
}

pub fn aggregate(values: &[f64], func: AggFn) -> Result<f64, QueryError> {
    if func == AggFn::Count {
        return Ok(values.len() as f64);
    }
    if values.is_empty() {
        return Err(empty("aggregate"));
    }
    Ok(match func {
        AggFn::Mean => mean(values),
        AggFn::Min => values.iter().copied().fold(f64::INFINITY, f64::min),
        AggFn::Max => values.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        AggFn::Sum => compensated_sum(values.iter().copied()),
        AggFn::Median => median_sorted(&sorted(values)),
        AggFn::Percentile(p) => percentile_sorted(&sorted(values), p),
        AggFn::Count => unreachable!("handled above"),
    })
}

/// Least-squares fit of value against day offset from the window start.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrendFit {
    pub slope: f64,
    pub intercept: f64,
    pub n: usize,
    pub min: f64,
    pub max: f64,
}

impl TrendFit {
    /// Stable when |slope| ≤ epsilon·(max−min)/n.
    pub fn label(&self, epsilon: f64) -> TrendLabel {
        let band = epsilon * (self.max - self.min) / self.n as f64;
        if self.slope.abs() <= band {
            TrendLabel::Stable
        } else if self.slope > 0.0 {
            TrendLabel::Increasing
        } else {
            TrendLabel::Decreasing
        }
    }
}

pub fn trend_fit(series: &Series) -> Result<TrendFit, QueryError> {
    let n = series.points.len();
    if n < 3 {
        return Err(QueryError::TooFewPoints {
            node: "trend".into(),
            got: n,
        });
    }
    let xs: Vec<f64> = series
        .points
        .iter()
        .map(|(d, _)| (*d - series.window.start).num_days() as f64)
        .collect();
    let ys = series.values();
    let nf = n as f64;
    let sx = compensated_sum(xs.iter().copied());
    let sy = compensated_sum(ys.iter().copied());
    let sxy = compensated_sum(xs.iter().zip(&ys).map(|(x, y)| x * y));
    let sxx = compensated_sum(xs.iter().map(|x| x * x));
    let slope = (nf * sxy - sx * sy) / (nf * sxx - sx * sx);
    Ok(TrendFit {
        slope,
        intercept: (sy - slope * sx) / nf,
        n,
        min: ys.iter().copied().fold(f64::INFINITY, f64::min),
        max: ys.iter().copied().fold(f64::NEG_INFINITY, f64::max),
    })
}

pub fn trend_direction(series: &Series, epsilon: f64) -> Result<TrendLabel, QueryError> {
    trend_fit(series).map(|f| f.label(epsilon))
}

/// Longest run of calendar-consecutive days; `days` must be sorted and
/// unique.
pub fn consecutive_run(days: &[NaiveDate], min_len: u32) -> (bool, u32) {
    let mut best = 0u32;
    let mut run = 0u32;
    let mut prev: Option<NaiveDate> = None;
    for d in days {
        run = match prev {
            Some(p) if p.succ_opt() == Some(*d) => run + 1,
            _ => 1,
        };
        best = best.max(run);
        prev = Some(*d);
    }
    (best >= min_len && best > 0, best)
}

/// Most frequent category; ties go to the lexicographically smallest.
pub fn dominant_category<'a>(
    categories: impl IntoIterator<Item = &'a str>,
) -> Result<String, QueryError> {
    let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
    for c in categories {
        *counts.entry(c).or_default() += 1;
    }
    let mut best: Option<(&str, usize)> = None;
    for (c, n) in counts {
        if best.is_none_or(|(_, m)| n > m) {
            best = Some((c, n));
        }
    }
    best.map(|(c, _)| c.to_string())
        .ok_or_else(|| empty("dominant_category"))
}

/// Per-user window means for every user with data, in user order.
pub fn user_means(ds: &AlignedDataset, metric: &str, window: TimeWindow) -> Vec<(UserId, f64)> {
    ds.users()
        .iter()
        .filter_map(|u| {
            let vals: Vec<f64> = ds.series(u, metric, window).into_iter().map(|(_, v)| v).collect();
            (!vals.is_empty()).then(|| (u.clone(), mean(&vals)))
        })
        .collect()
}

/// Two-stage cohort statistic: each user's window mean, then the statistic
/// across users.
pub fn cohort_stat(
    ds: &AlignedDataset,
    metric: &str,
    window: TimeWindow,
    stat: CohortStatFn,
) -> Result<f64, QueryError> {
    let means: Vec<f64> = user_means(ds, metric, window).into_iter().map(|(_, m)| m).collect();
    if means.is_empty() {
        return Err(empty("cohort_stat"));
    }
    Ok(match stat {
        CohortStatFn::Mean => mean(&means),
        CohortStatFn::Median => median_sorted(&sorted(&means)),
        CohortStatFn::Percentile(p) => percentile_sorted(&sorted(&means), p),
    })
}

/// Users ordered by window mean, ties by ascending id, truncated to `k`.
pub fn rank_users(
    ds: &AlignedDataset,
    metric: &str,
    window: TimeWindow,
    order: Order,
    k: usize,
) -> Vec<(UserId, f64)> {
    let mut means = user_means(ds, metric, window);
    means.sort_by(|(ua, a), (ub, b)| {
        let by_value = match order {
            Order::Asc => a.total_cmp(b),
            Order::Desc => b.total_cmp(a),
        };
        by_value.then_with(|| ua.cmp(ub))
    });
    means.truncate(k);
    means
}
