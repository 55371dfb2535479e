//! Template catalog and the parameter sampler templates draw from.

use std::collections::BTreeMap;

use chrono::{Days, NaiveDate};
use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::{Scope, TaskType};
use crate::lifelog::registry::{names, registry, MetricSpec};
use crate::lifelog::{AlignedDataset, DomainTag, TimeWindow, UserId};
use crate::qlang::{
    format_number, AggFn, AnswerType, Cmp, CohortStatFn, CompareKind, EventPredicate, Extreme,
    Order, QueryIR, RunOutput, SetOpKind, DEFAULT_TREND_EPSILON,
};

/// A draw that cannot produce a usable instance; the caller resamples.
#[derive(Debug, Clone, PartialEq)]
pub struct Reject(pub String);

pub type Builder = fn(&mut Ctx<'_>) -> Result<QueryIR, Reject>;

pub struct Template {
    pub id: &'static str,
    pub task_type: TaskType,
    pub answer_type: AnswerType,
    pub scope: Scope,
    /// Domains fixed by the template; empty when the metric is sampled.
    pub domains: &'static [DomainTag],
    pub surface_forms: &'static [&'static str],
    pub build: Builder,
}

/// Dataset facts shared by every draw.
pub struct Pool {
    pub users: Vec<UserId>,
    pub metrics: Vec<&'static MetricSpec>,
    pub span: TimeWindow,
    pub reference: NaiveDate,
}

impl Pool {
    pub fn new(ds: &AlignedDataset) -> Self {
        let span = ds.date_span();
        let present: std::collections::BTreeSet<&str> =
            ds.daily().iter().map(|d| d.metric.as_str()).collect();
        Pool {
            users: ds.users().iter().cloned().collect(),
            metrics: registry()
                .daily_numeric()
                .filter(|m| present.contains(m.name.as_str()))
                .collect(),
            span,
            reference: ds.reference_date(),
        }
    }
}

/// Sampling context for one draw. Records the canonical parameter
/// assignment (the dedup key) separately from the rendered slot text.
pub struct Ctx<'a> {
    pub ds: &'a AlignedDataset,
    pool: &'a Pool,
    rng: ChaCha8Rng,
    pub(crate) key: BTreeMap<String, String>,
    pub(crate) slots: BTreeMap<String, String>,
    pub(crate) subject: Option<UserId>,
}

fn unit_words(m: &MetricSpec) -> &'static str {
    match m.unit.as_str() {
        "min" => "minutes",
        "steps" => "steps",
        "kcal" => "kcal",
        "score" => "points",
        _ => "",
    }
}

pub fn with_unit(m: &MetricSpec, v: f64) -> String {
    let u = unit_words(m);
    if u.is_empty() {
        format_number(v)
    } else {
        format!("{} {u}", format_number(v))
    }
}

impl<'a> Ctx<'a> {
    pub fn new(ds: &'a AlignedDataset, pool: &'a Pool, rng: ChaCha8Rng) -> Self {
        Ctx {
            ds,
            pool,
            rng,
            key: BTreeMap::new(),
            slots: BTreeMap::new(),
            subject: None,
        }
    }

    pub fn bind(&mut self, slot: &str, display: impl Into<String>, canonical: impl Into<String>) {
        self.slots.insert(slot.to_string(), display.into());
        self.key.insert(slot.to_string(), canonical.into());
    }

    fn hidden(&mut self, name: &str, canonical: impl Into<String>) {
        self.key.insert(name.to_string(), canonical.into());
    }

    pub fn rng(&mut self) -> &mut ChaCha8Rng {
        &mut self.rng
    }

    /// The user the question is about.
    pub fn user(&mut self) -> Result<UserId, Reject> {
        let u = self
            .pool
            .users
            .choose(&mut self.rng)
            .cloned()
            .ok_or_else(|| Reject("no users".into()))?;
        self.hidden("user", u.as_str());
        self.subject = Some(u.clone());
        Ok(u)
    }

    /// A daily numeric metric, optionally from one domain or outside some.
    pub fn metric(
        &mut self,
        slot: &str,
        only: Option<DomainTag>,
        exclude: &[DomainTag],
    ) -> Result<&'static MetricSpec, Reject> {
        let options: Vec<&'static MetricSpec> = self
            .pool
            .metrics
            .iter()
            .copied()
            .filter(|m| only.is_none_or(|d| m.domain == d) && !exclude.contains(&m.domain))
            .collect();
        let m = *options
            .choose(&mut self.rng)
            .ok_or_else(|| Reject("no metric available".into()))?;
        self.bind(slot, m.label.clone(), m.name.clone());
        Ok(m)
    }

    pub fn fixed_metric(&mut self, name: &str) -> Result<&'static MetricSpec, Reject> {
        self.pool
            .metrics
            .iter()
            .copied()
            .find(|m| m.name == name)
            .ok_or_else(|| Reject(format!("{name} not in dataset")))
    }

    fn lens(&self, lens: &[u32]) -> Vec<u32> {
        lens.iter().copied().filter(|l| *l <= self.pool.span.len_days()).collect()
    }

    /// A window of one of `lens` days. Binds `slot` (adverbial phrase) and
    /// `slot_np` (noun phrase). About a third of windows end on the
    /// reference date and use a relative phrase with the dates attached.
    pub fn window(&mut self, slot: &str, lens: &[u32]) -> Result<TimeWindow, Reject> {
        let lens = self.lens(lens);
        let len = *lens
            .choose(&mut self.rng)
            .ok_or_else(|| Reject("dataset span too short".into()))?;
        let span = self.pool.span;
        let reference = self.pool.reference;
        let rel_start = reference - Days::new(len as u64 - 1);
        let relative = rel_start >= span.start && reference <= span.end && self.rng.gen_bool(0.35);
        let w = if relative {
            TimeWindow::ending_at(reference, len)
        } else {
            let slack = span.len_days() - len;
            let off = self.rng.gen_range(0..=slack);
            let start = span.start + Days::new(off as u64);
            TimeWindow::new(start, start + Days::new(len as u64 - 1)).expect("ordered")
        };
        let dates = format!("{} to {}", w.start, w.end);
        let (adv, np) = if relative {
            let (adv, np) = match (len, self.rng.gen_range(0..3)) {
                (7, 0) => ("last week".to_string(), "last week".to_string()),
                (7, 1) => ("over the past week".to_string(), "the past week".to_string()),
                (l, _) => (format!("over the past {l} days"), format!("the past {l} days")),
            };
            (format!("{adv} ({dates})"), format!("{np} ({dates})"))
        } else if self.rng.gen_bool(0.5) {
            (format!("from {} to {}", w.start, w.end), format!("the period {dates}"))
        } else {
            (format!("between {} and {}", w.start, w.end), format!("the period {dates}"))
        };
        self.slots.insert(format!("{slot}_np"), np);
        self.bind(slot, adv, w.to_string());
        Ok(w)
    }

    /// Two back-to-back windows of the same length, earlier one first.
    pub fn periods(&mut self, lens: &[u32]) -> Result<(TimeWindow, TimeWindow), Reject> {
        let lens: Vec<u32> = lens
            .iter()
            .copied()
            .filter(|l| 2 * l <= self.pool.span.len_days())
            .collect();
        let len = *lens
            .choose(&mut self.rng)
            .ok_or_else(|| Reject("dataset span too short".into()))?;
        let span = self.pool.span;
        let off = self.rng.gen_range(0..=span.len_days() - 2 * len);
        let a_start = span.start + Days::new(off as u64);
        let a = TimeWindow::new(a_start, a_start + Days::new(len as u64 - 1)).expect("ordered");
        let b = TimeWindow::new(a.end + Days::new(1), a.end + Days::new(len as u64)).expect("ordered");
        self.bind("window_a", format!("{} to {}", a.start, a.end), a.to_string());
        self.bind("window_b", format!("{} to {}", b.start, b.end), b.to_string());
        Ok((a, b))
    }

    pub fn day(&mut self, slot: &str) -> NaiveDate {
        let span = self.pool.span;
        let off = self.rng.gen_range(0..span.len_days());
        let d = span.start + Days::new(off as u64);
        self.bind(slot, d.to_string(), d.to_string());
        d
    }

    /// A threshold between the user's own 25th and 75th percentiles of
    /// `metric` over `window`, rounded to an integer.
    pub fn threshold(
        &mut self,
        slot: &str,
        user: &UserId,
        metric: &MetricSpec,
        window: TimeWindow,
    ) -> Result<f64, Reject> {
        let mut vals: Vec<f64> = self
            .ds
            .series(user, &metric.name, window)
            .into_iter()
            .map(|(_, v)| v)
            .collect();
        if vals.len() < 3 {
            return Err(Reject("too little data for a threshold".into()));
        }
        vals.sort_by(f64::total_cmp);
        let q = |p: usize| vals[((p * vals.len()).div_ceil(100)).max(1) - 1];
        let lo = q(25).ceil() as i64;
        let hi = q(75).floor() as i64;
        let t = if lo <= hi {
            self.rng.gen_range(lo..=hi) as f64
        } else {
            q(25).round()
        };
        self.bind(slot, with_unit(metric, t), format_number(t));
        Ok(t)
    }

    /// Picks one of `options`, binding its display text.
    pub fn pick<T: Copy>(&mut self, slot: &str, options: &[(&str, T)]) -> T {
        let i = self.rng.gen_range(0..options.len());
        let (text, v) = options[i];
        self.bind(slot, text, text);
        v
    }

    pub fn int(&mut self, slot: &str, lo: u32, hi: u32) -> u32 {
        let v = self.rng.gen_range(lo..=hi);
        self.bind(slot, v.to_string(), v.to_string());
        v
    }

    pub fn all_users(&self) -> Vec<UserId> {
        self.pool.users.clone()
    }
}

/// Replaces `{slot}` placeholders. Unknown slots are left untouched.
pub fn render(form: &str, slots: &BTreeMap<String, String>) -> String {
    let mut out = String::with_capacity(form.len() + 32);
    let mut rest = form;
    while let Some(open) = rest.find('{') {
        out.push_str(&rest[..open]);
        let after = &rest[open + 1..];
        match after.find('}') {
            Some(close) => {
                let name = &after[..close];
                match slots.get(name) {
                    Some(v) => out.push_str(v),
                    None => {
                        out.push('{');
                        out.push_str(name);
                        out.push('}');
                    }
                }
                rest = &after[close + 1..];
            }
            None => {
                out.push_str(&rest[open..]);
                rest = "";
            }
        }
    }
    out.push_str(rest);
    out
}

/// Slot names used by a surface form.
pub fn slot_names(form: &str) -> Vec<String> {
    let mut out = Vec::new();
    let mut rest = form;
    while let Some(open) = rest.find('{') {
        let after = &rest[open + 1..];
        let Some(close) = after.find('}') else { break };
        out.push(after[..close].to_string());
        rest = &after[close + 1..];
    }
    out
}

fn series(user: &UserId, m: &MetricSpec, window: TimeWindow) -> QueryIR {
    QueryIR::SelectSeries {
        user: user.clone(),
        domain: m.domain,
        metric: m.name.clone(),
        window,
    }
}

fn agg(func: AggFn, child: QueryIR) -> QueryIR {
    QueryIR::Aggregate {
        func,
        child: Box::new(child),
    }
}

fn compare(kind: CompareKind, left: QueryIR, right: QueryIR) -> QueryIR {
    QueryIR::Compare {
        kind,
        left: Box::new(left),
        right: Box::new(right),
    }
}

fn konst(value: f64) -> QueryIR {
    QueryIR::Const { value }
}

fn filter(child: QueryIR, cmp: Cmp, threshold: QueryIR) -> QueryIR {
    QueryIR::ThresholdFilter {
        child: Box::new(child),
        cmp,
        threshold: Box::new(threshold),
    }
}

fn cohort(m: &MetricSpec, window: TimeWindow, stat: CohortStatFn) -> QueryIR {
    QueryIR::CohortStat {
        metric: m.name.clone(),
        window,
        stat,
    }
}

fn trend(child: QueryIR) -> QueryIR {
    QueryIR::Trend {
        child: Box::new(child),
        epsilon: DEFAULT_TREND_EPSILON,
    }
}

fn meals(user: &UserId, window: TimeWindow) -> QueryIR {
    QueryIR::SelectEvents {
        user: user.clone(),
        domain: DomainTag::Diet,
        window,
        predicate: EventPredicate {
            metric: Some(names::MEAL_CATEGORY.into()),
            category: None,
        },
    }
}

const ALL_LENS: &[u32] = &[7, 10, 14, 21, 28];
const TREND_LENS: &[u32] = &[7, 10, 14, 21, 28];
const LIST_LENS: &[u32] = &[7, 10];
const HALF_LENS: &[u32] = &[10, 14, 28];

const ABOVE_BELOW: &[(&str, Cmp)] = &[("above", Cmp::Gt), ("below", Cmp::Lt)];
const HIGH_LOW: &[(&str, Extreme)] = &[("highest", Extreme::Max), ("lowest", Extreme::Min)];
const COHORT_STATS: &[(&str, CohortStatFn)] = &[
    ("average", CohortStatFn::Mean),
    ("median", CohortStatFn::Median),
    ("25th percentile", CohortStatFn::Percentile(25)),
    ("75th percentile", CohortStatFn::Percentile(75)),
    ("90th percentile", CohortStatFn::Percentile(90)),
];

// ---- fact queries ----

fn fq_daily_value(c: &mut Ctx) -> Result<QueryIR, Reject> {
    let u = c.user()?;
    let m = c.metric("metric", None, &[])?;
    let d = c.day("date");
    Ok(agg(AggFn::Max, series(&u, m, TimeWindow::single(d))))
}

fn fq_meal_category(c: &mut Ctx) -> Result<QueryIR, Reject> {
    let u = c.user()?;
    let d = c.day("date");
    Ok(QueryIR::DominantCategory {
        child: Box::new(meals(&u, TimeWindow::single(d))),
        field: names::MEAL_CATEGORY.into(),
    })
}

fn fq_day_check(c: &mut Ctx) -> Result<QueryIR, Reject> {
    let u = c.user()?;
    let m = c.metric("metric", None, &[])?;
    let d = c.day("date");
    let span = c.pool.span;
    let t = c.threshold("threshold", &u, m, span)?;
    Ok(compare(
        CompareKind::Greater,
        agg(AggFn::Max, series(&u, m, TimeWindow::single(d))),
        konst(t),
    ))
}

fn fq_day_pair(c: &mut Ctx) -> Result<QueryIR, Reject> {
    let u = c.user()?;
    let a = c.metric("metric_a", None, &[])?;
    let b = c.metric("metric_b", None, &[a.domain])?;
    let d = c.day("date");
    let w = TimeWindow::single(d);
    Ok(QueryIR::Tuple {
        children: vec![agg(AggFn::Max, series(&u, a, w)), agg(AggFn::Max, series(&u, b, w))],
    })
}

fn fq_cohort_day_check(c: &mut Ctx) -> Result<QueryIR, Reject> {
    let u = c.user()?;
    let m = c.metric("metric", None, &[])?;
    let d = c.day("date");
    let w = TimeWindow::single(d);
    Ok(compare(
        CompareKind::Greater,
        agg(AggFn::Max, series(&u, m, w)),
        cohort(m, w, CohortStatFn::Median),
    ))
}

fn fq_cohort_day_value(c: &mut Ctx) -> Result<QueryIR, Reject> {
    let m = c.metric("metric", None, &[])?;
    let stat = c.pick("stat", COHORT_STATS);
    let d = c.day("date");
    Ok(cohort(m, TimeWindow::single(d), stat))
}

// ---- aggregated statistics ----

fn as_daily_list(c: &mut Ctx) -> Result<QueryIR, Reject> {
    let u = c.user()?;
    let m = c.metric("metric", None, &[])?;
    let w = c.window("window", LIST_LENS)?;
    Ok(series(&u, m, w))
}

fn as_window_mean(c: &mut Ctx) -> Result<QueryIR, Reject> {
    let u = c.user()?;
    let m = c.metric("metric", None, &[])?;
    let f = c.pick("stat", &[("average", AggFn::Mean), ("median", AggFn::Median)]);
    let w = c.window("window", ALL_LENS)?;
    Ok(agg(f, series(&u, m, w)))
}

fn as_window_extreme(c: &mut Ctx) -> Result<QueryIR, Reject> {
    let u = c.user()?;
    let m = c.metric("metric", None, &[])?;
    let e = c.pick("extreme", HIGH_LOW);
    let w = c.window("window", ALL_LENS)?;
    let f = match e {
        Extreme::Max => AggFn::Max,
        Extreme::Min => AggFn::Min,
    };
    Ok(agg(f, series(&u, m, w)))
}

fn as_best_day(c: &mut Ctx) -> Result<QueryIR, Reject> {
    let u = c.user()?;
    let m = c.metric("metric", None, &[])?;
    let e = c.pick("extreme", HIGH_LOW);
    let w = c.window("window", ALL_LENS)?;
    Ok(QueryIR::ArgExtreme {
        child: Box::new(series(&u, m, w)),
        extreme: e,
    })
}

fn as_extreme_pair(c: &mut Ctx) -> Result<QueryIR, Reject> {
    let u = c.user()?;
    let m = c.metric("metric", None, &[])?;
    let w = c.window("window", ALL_LENS)?;
    Ok(QueryIR::Tuple {
        children: vec![agg(AggFn::Min, series(&u, m, w)), agg(AggFn::Max, series(&u, m, w))],
    })
}

fn as_cohort_stat(c: &mut Ctx) -> Result<QueryIR, Reject> {
    let m = c.metric("metric", None, &[])?;
    let stat = c.pick("stat", COHORT_STATS);
    let w = c.window("window", ALL_LENS)?;
    Ok(cohort(m, w, stat))
}

fn as_all_domains_profile(c: &mut Ctx) -> Result<QueryIR, Reject> {
    let u = c.user()?;
    let w = c.window("window", ALL_LENS)?;
    let mut children = Vec::new();
    for name in [names::CALORIES, names::SLEEP_MINUTES, names::STEPS, names::EMOTION_SCORE] {
        let m = c.fixed_metric(name)?;
        children.push(agg(AggFn::Mean, series(&u, m, w)));
    }
    Ok(QueryIR::Tuple { children })
}

// ---- numeric comparison ----

fn nc_period_diff(c: &mut Ctx) -> Result<QueryIR, Reject> {
    let u = c.user()?;
    let m = c.metric("metric", None, &[])?;
    let (a, b) = c.periods(&[7, 14])?;
    Ok(compare(
        CompareKind::Diff,
        agg(AggFn::Mean, series(&u, m, b)),
        agg(AggFn::Mean, series(&u, m, a)),
    ))
}

fn nc_period_greater(c: &mut Ctx) -> Result<QueryIR, Reject> {
    let u = c.user()?;
    let m = c.metric("metric", None, &[])?;
    let (a, b) = c.periods(&[7, 14])?;
    Ok(compare(
        CompareKind::Greater,
        agg(AggFn::Mean, series(&u, m, b)),
        agg(AggFn::Mean, series(&u, m, a)),
    ))
}

fn nc_period_pair(c: &mut Ctx) -> Result<QueryIR, Reject> {
    let u = c.user()?;
    let m = c.metric("metric", None, &[])?;
    let (a, b) = c.periods(&[7, 14])?;
    Ok(QueryIR::Tuple {
        children: vec![agg(AggFn::Mean, series(&u, m, a)), agg(AggFn::Mean, series(&u, m, b))],
    })
}

fn nc_vs_cohort(c: &mut Ctx) -> Result<QueryIR, Reject> {
    let u = c.user()?;
    let m = c.metric("metric", None, &[])?;
    let w = c.window("window", ALL_LENS)?;
    Ok(compare(
        CompareKind::Diff,
        agg(AggFn::Mean, series(&u, m, w)),
        cohort(m, w, CohortStatFn::Mean),
    ))
}

fn rank(c: &mut Ctx, k: u32) -> Result<QueryIR, Reject> {
    let m = c.metric("metric", None, &[])?;
    let order = c.pick("order", &[("highest", Order::Desc), ("lowest", Order::Asc)]);
    let w = c.window("window", ALL_LENS)?;
    Ok(QueryIR::RankUsers {
        metric: m.name.clone(),
        window: w,
        order,
        k,
    })
}

fn nc_rank_top(c: &mut Ctx) -> Result<QueryIR, Reject> {
    let k = c.int("k", 3, 5);
    rank(c, k)
}

fn nc_top_user(c: &mut Ctx) -> Result<QueryIR, Reject> {
    rank(c, 1)
}

fn nc_rank_pair(c: &mut Ctx) -> Result<QueryIR, Reject> {
    rank(c, 2)
}

// ---- conditional queries ----

fn cq_threshold_count(c: &mut Ctx) -> Result<QueryIR, Reject> {
    let u = c.user()?;
    let m = c.metric("metric", None, &[])?;
    let cmp = c.pick("cmp", ABOVE_BELOW);
    let w = c.window("window", ALL_LENS)?;
    let t = c.threshold("threshold", &u, m, w)?;
    Ok(QueryIR::CountDays {
        child: Box::new(filter(series(&u, m, w), cmp, konst(t))),
    })
}

fn cq_cross_both(c: &mut Ctx) -> Result<QueryIR, Reject> {
    let u = c.user()?;
    let act = c.fixed_metric(names::TOTAL_ACTIVITY_MINUTES)?;
    let slp = c.fixed_metric(names::SLEEP_MINUTES)?;
    let w = c.window("window", ALL_LENS)?;
    let ta = c.threshold("threshold_a", &u, act, w)?;
    let ts = c.threshold("threshold_b", &u, slp, w)?;
    Ok(QueryIR::CountDays {
        child: Box::new(QueryIR::SetOp {
            kind: SetOpKind::Intersect,
            children: vec![
                filter(series(&u, act, w), Cmp::Gt, konst(ta)),
                filter(series(&u, slp, w), Cmp::Gt, konst(ts)),
            ],
        }),
    })
}

fn cq_consecutive(c: &mut Ctx) -> Result<QueryIR, Reject> {
    let u = c.user()?;
    let m = c.metric("metric", None, &[])?;
    let cmp = c.pick("cmp", ABOVE_BELOW);
    let k = c.int("k", 2, 4);
    let w = c.window("window", ALL_LENS)?;
    let t = c.threshold("threshold", &u, m, w)?;
    Ok(QueryIR::ConsecutiveRun {
        child: Box::new(filter(series(&u, m, w), cmp, konst(t))),
        min_len: k,
        output: RunOutput::Exists,
    })
}

fn cq_days_list(c: &mut Ctx) -> Result<QueryIR, Reject> {
    let u = c.user()?;
    let m = c.metric("metric", None, &[])?;
    let cmp = c.pick("cmp", ABOVE_BELOW);
    let w = c.window("window", &[10, 14, 21, 28])?;
    let t = c.threshold("threshold", &u, m, w)?;
    Ok(filter(series(&u, m, w), cmp, konst(t)))
}

fn cq_conditional_mean(c: &mut Ctx) -> Result<QueryIR, Reject> {
    let u = c.user()?;
    let a = c.metric("metric_a", None, &[])?;
    let b = c.metric("metric_b", None, &[a.domain])?;
    let w = c.window("window", &[14, 21, 28])?;
    let t = c.threshold("threshold", &u, a, w)?;
    Ok(agg(
        AggFn::Mean,
        QueryIR::AlignDays {
            target: Box::new(series(&u, b, w)),
            days: vec![filter(series(&u, a, w), Cmp::Gt, konst(t))],
        },
    ))
}

fn cq_above_cohort_count(c: &mut Ctx) -> Result<QueryIR, Reject> {
    let u = c.user()?;
    let m = c.metric("metric", None, &[])?;
    let w = c.window("window", ALL_LENS)?;
    Ok(QueryIR::CountDays {
        child: Box::new(filter(series(&u, m, w), Cmp::Gt, cohort(m, w, CohortStatFn::Mean))),
    })
}

fn cq_cohort_percentile(c: &mut Ctx) -> Result<QueryIR, Reject> {
    let u = c.user()?;
    let m = c.metric("metric", None, &[])?;
    let p = c.pick("pct", &[("25th", 25u8), ("50th", 50), ("75th", 75), ("90th", 90)]);
    let w = c.window("window", ALL_LENS)?;
    Ok(compare(
        CompareKind::Greater,
        agg(AggFn::Mean, series(&u, m, w)),
        cohort(m, w, CohortStatFn::Percentile(p)),
    ))
}

fn cq_composite_cohort(c: &mut Ctx) -> Result<QueryIR, Reject> {
    let u = c.user()?;
    let slp = c.fixed_metric(names::SLEEP_MINUTES)?;
    let aer = c.fixed_metric(names::AEROBIC_MINUTES)?;
    let emo = c.fixed_metric(names::EMOTION_SCORE)?;
    let w = c.window("window", &[7, 10, 14, 21, 28])?;
    let both = QueryIR::SetOp {
        kind: SetOpKind::Intersect,
        children: vec![
            filter(series(&u, slp, w), Cmp::Gt, cohort(slp, w, CohortStatFn::Mean)),
            filter(series(&u, aer, w), Cmp::Gt, cohort(aer, w, CohortStatFn::Mean)),
        ],
    };
    Ok(QueryIR::Tuple {
        children: vec![
            QueryIR::CountDays {
                child: Box::new(both.clone()),
            },
            QueryIR::DominantCategory {
                child: Box::new(QueryIR::AlignDays {
                    target: Box::new(meals(&u, w)),
                    days: vec![both.clone()],
                }),
                field: names::MEAL_CATEGORY.into(),
            },
            trend(QueryIR::AlignDays {
                target: Box::new(series(&u, emo, w)),
                days: vec![both],
            }),
        ],
    })
}

// ---- trend analysis ----

fn ta_trend(c: &mut Ctx) -> Result<QueryIR, Reject> {
    let u = c.user()?;
    let m = c.metric("metric", None, &[])?;
    let w = c.window("window", TREND_LENS)?;
    Ok(trend(series(&u, m, w)))
}

fn ta_longest_run(c: &mut Ctx) -> Result<QueryIR, Reject> {
    let u = c.user()?;
    let m = c.metric("metric", None, &[])?;
    let cmp = c.pick("cmp", ABOVE_BELOW);
    let w = c.window("window", ALL_LENS)?;
    let t = c.threshold("threshold", &u, m, w)?;
    Ok(QueryIR::ConsecutiveRun {
        child: Box::new(filter(series(&u, m, w), cmp, konst(t))),
        min_len: 1,
        output: RunOutput::MaxRun,
    })
}

fn ta_halves(c: &mut Ctx) -> Result<QueryIR, Reject> {
    let u = c.user()?;
    let m = c.metric("metric", None, &[])?;
    let w = c.window("window", HALF_LENS)?;
    let half = w.len_days() / 2;
    let first = TimeWindow::new(w.start, w.start + Days::new(half as u64 - 1)).expect("ordered");
    let second = TimeWindow::new(first.end + Days::new(1), w.end).expect("ordered");
    Ok(compare(
        CompareKind::Greater,
        agg(AggFn::Mean, series(&u, m, second)),
        agg(AggFn::Mean, series(&u, m, first)),
    ))
}

fn ta_trend_pair(c: &mut Ctx) -> Result<QueryIR, Reject> {
    let u = c.user()?;
    let a = c.metric("metric_a", None, &[])?;
    let b = c.metric("metric_b", None, &[a.domain])?;
    let w = c.window("window", TREND_LENS)?;
    Ok(QueryIR::Tuple {
        children: vec![trend(series(&u, a, w)), trend(series(&u, b, w))],
    })
}

fn ta_trend_vs_cohort(c: &mut Ctx) -> Result<QueryIR, Reject> {
    let u = c.user()?;
    let m = c.metric("metric", None, &[])?;
    let w = c.window("window", TREND_LENS)?;
    Ok(QueryIR::Tuple {
        children: vec![trend(series(&u, m, w)), cohort(m, w, CohortStatFn::Mean)],
    })
}

use AnswerType as A;
use DomainTag as D;
use Scope::{MultiUser as Multi, SingleUser as Single};
use TaskType::*;

const ALL_DOMAINS: &[DomainTag] = &[D::Diet, D::Sleep, D::Activity, D::Emotion];

pub static CATALOG: &[Template] = &[
    Template {
        id: "fq_daily_value",
        task_type: FQ,
        answer_type: A::Number,
        scope: Single,
        domains: &[],
        surface_forms: &[
            "What was my {metric} on {date}?",
            "On {date}, what was my {metric}?",
            "What {metric} did I log on {date}?",
        ],
        build: fq_daily_value,
    },
    Template {
        id: "fq_meal_category",
        task_type: FQ,
        answer_type: A::Text,
        scope: Single,
        domains: &[D::Diet],
        surface_forms: &[
            "Which meal category did I eat most often on {date}?",
            "On {date}, what was my most frequent meal category?",
            "What kind of meal dominated my diet on {date}?",
        ],
        build: fq_meal_category,
    },
    Template {
        id: "fq_day_check",
        task_type: FQ,
        answer_type: A::YesNo,
        scope: Single,
        domains: &[],
        surface_forms: &[
            "Was my {metric} above {threshold} on {date}?",
            "On {date}, did my {metric} exceed {threshold}?",
            "Did my {metric} go over {threshold} on {date}?",
        ],
        build: fq_day_check,
    },
    Template {
        id: "fq_day_pair",
        task_type: FQ,
        answer_type: A::Pair,
        scope: Single,
        domains: &[],
        surface_forms: &[
            "What were my {metric_a} and my {metric_b} on {date}?",
            "On {date}, what were my {metric_a} and {metric_b}?",
            "Report my {metric_a} and then my {metric_b} for {date}.",
        ],
        build: fq_day_pair,
    },
    Template {
        id: "fq_cohort_day_check",
        task_type: FQ,
        answer_type: A::YesNo,
        scope: Multi,
        domains: &[],
        surface_forms: &[
            "On {date}, was my {metric} above the cohort median for that day?",
            "Was my {metric} on {date} higher than the median across all users that day?",
            "Compared with the cohort median on {date}, was my {metric} higher?",
        ],
        build: fq_cohort_day_check,
    },
    Template {
        id: "fq_cohort_day_value",
        task_type: FQ,
        answer_type: A::Number,
        scope: Multi,
        domains: &[],
        surface_forms: &[
            "What was the {stat} {metric} across all users on {date}?",
            "Across the cohort, what was the {stat} {metric} on {date}?",
            "On {date}, what was the cohort's {stat} {metric}?",
        ],
        build: fq_cohort_day_value,
    },
    Template {
        id: "as_daily_list",
        task_type: AS,
        answer_type: A::ListOf,
        scope: Single,
        domains: &[],
        surface_forms: &[
            "For each day {window}, what was my average {metric}?",
            "List my daily {metric} {window}.",
            "What was my {metric} on each day {window}?",
        ],
        build: as_daily_list,
    },
    Template {
        id: "as_window_mean",
        task_type: AS,
        answer_type: A::Number,
        scope: Single,
        domains: &[],
        surface_forms: &[
            "What was my {stat} {metric} {window}?",
            "Looking at each day {window}, what was my {stat} {metric}?",
            "Give the {stat} of my daily {metric} {window}.",
        ],
        build: as_window_mean,
    },
    Template {
        id: "as_window_extreme",
        task_type: AS,
        answer_type: A::Number,
        scope: Single,
        domains: &[],
        surface_forms: &[
            "What was my {extreme} daily {metric} {window}?",
            "Across the days {window}, what was my {extreme} {metric}?",
            "What {extreme} {metric} did I reach {window}?",
        ],
        build: as_window_extreme,
    },
    Template {
        id: "as_best_day",
        task_type: AS,
        answer_type: A::Text,
        scope: Single,
        domains: &[],
        surface_forms: &[
            "On which day {window} was my {metric} {extreme}?",
            "Which date {window} had my {extreme} {metric}?",
            "When {window} did I record my {extreme} {metric}?",
        ],
        build: as_best_day,
    },
    Template {
        id: "as_extreme_pair",
        task_type: AS,
        answer_type: A::Pair,
        scope: Single,
        domains: &[],
        surface_forms: &[
            "What were my lowest and highest {metric} {window}?",
            "Give the minimum and then the maximum of my {metric} {window}.",
            "What range did my {metric} span {window}, lowest value first?",
        ],
        build: as_extreme_pair,
    },
    Template {
        id: "as_cohort_stat",
        task_type: AS,
        answer_type: A::Number,
        scope: Multi,
        domains: &[],
        surface_forms: &[
            "What was the cohort {stat} of {metric} {window}?",
            "Across all users, what was the {stat} {metric} {window}?",
            "Taking each user's average first, what was the cohort-wide {stat} {metric} {window}?",
        ],
        build: as_cohort_stat,
    },
    Template {
        id: "as_all_domains_profile",
        task_type: AS,
        answer_type: A::ListOf,
        scope: Single,
        domains: ALL_DOMAINS,
        surface_forms: &[
            "What were my average calorie intake, sleep duration, step count and emotion score {window}?",
            "Summarize {window_np}: give my mean calorie intake, sleep duration, step count and emotion score.",
            "Across diet, sleep, activity and mood, what were my average calories, sleep minutes, steps and emotion score {window}?",
        ],
        build: as_all_domains_profile,
    },
    Template {
        id: "nc_period_diff",
        task_type: NC,
        answer_type: A::Number,
        scope: Single,
        domains: &[],
        surface_forms: &[
            "How much did my average {metric} change from the period {window_a} to the period {window_b}?",
            "By how much did my mean {metric} over {window_b} differ from that over {window_a}?",
            "What is my average {metric} for {window_b} minus my average for {window_a}?",
        ],
        build: nc_period_diff,
    },
    Template {
        id: "nc_period_greater",
        task_type: NC,
        answer_type: A::YesNo,
        scope: Single,
        domains: &[],
        surface_forms: &[
            "Was my average {metric} higher during {window_b} than during {window_a}?",
            "Did my mean {metric} increase from {window_a} to {window_b}?",
            "Compared with {window_a}, was my average {metric} higher in {window_b}?",
        ],
        build: nc_period_greater,
    },
    Template {
        id: "nc_period_pair",
        task_type: NC,
        answer_type: A::Pair,
        scope: Single,
        domains: &[],
        surface_forms: &[
            "What were my average {metric} values for {window_a} and for {window_b}?",
            "Compare my mean {metric} in {window_a} with {window_b}: give both values.",
            "Give my average {metric} over {window_a} and then over {window_b}.",
        ],
        build: nc_period_pair,
    },
    Template {
        id: "nc_vs_cohort",
        task_type: NC,
        answer_type: A::Number,
        scope: Multi,
        domains: &[],
        surface_forms: &[
            "How much higher or lower than the cohort average was my average {metric} {window}?",
            "What is the difference between my average {metric} and the cohort average {window}?",
            "By how much did my average {metric} {window} exceed the cohort average (negative if below)?",
        ],
        build: nc_vs_cohort,
    },
    Template {
        id: "nc_rank_top",
        task_type: NC,
        answer_type: A::ListOf,
        scope: Multi,
        domains: &[],
        surface_forms: &[
            "Which {k} users had the {order} average {metric} {window}?",
            "Name the {k} users with the {order} average {metric} {window}, in rank order.",
            "Rank the {k} users with the {order} mean {metric} {window}.",
        ],
        build: nc_rank_top,
    },
    Template {
        id: "nc_top_user",
        task_type: NC,
        answer_type: A::Text,
        scope: Multi,
        domains: &[],
        surface_forms: &[
            "Which user had the {order} average {metric} {window}?",
            "Who recorded the {order} mean {metric} {window}?",
            "Across the cohort, which user's average {metric} was the {order} {window}?",
        ],
        build: nc_top_user,
    },
    Template {
        id: "nc_rank_pair",
        task_type: NC,
        answer_type: A::Pair,
        scope: Multi,
        domains: &[],
        surface_forms: &[
            "Which two users had the {order} average {metric} {window}?",
            "Name the two users with the {order} mean {metric} {window}, in rank order.",
            "Who were the top two users by {order} average {metric} {window}?",
        ],
        build: nc_rank_pair,
    },
    Template {
        id: "cq_threshold_count",
        task_type: CQ,
        answer_type: A::Number,
        scope: Single,
        domains: &[],
        surface_forms: &[
            "On how many days {window} was my {metric} {cmp} {threshold}?",
            "How many days {window} had my {metric} {cmp} {threshold}?",
            "Count the days {window} when my {metric} was {cmp} {threshold}.",
        ],
        build: cq_threshold_count,
    },
    Template {
        id: "cq_cross_both",
        task_type: CQ,
        answer_type: A::Number,
        scope: Single,
        domains: &[D::Sleep, D::Activity],
        surface_forms: &[
            "On how many days {window} did I exceed both an activity duration of {threshold_a} and a sleep duration of {threshold_b}?",
            "How many days {window} had my total activity time above {threshold_a} and my sleep duration above {threshold_b}?",
            "Count the days {window} on which my activity time exceeded {threshold_a} and my sleep exceeded {threshold_b}.",
        ],
        build: cq_cross_both,
    },
    Template {
        id: "cq_consecutive",
        task_type: CQ,
        answer_type: A::YesNo,
        scope: Single,
        domains: &[],
        surface_forms: &[
            "Was my {metric} {cmp} {threshold} for at least {k} consecutive days {window}?",
            "Did I have a streak of {k} or more days with {metric} {cmp} {threshold} {window}?",
            "{window_np}: was there a run of at least {k} consecutive days with my {metric} {cmp} {threshold}?",
        ],
        build: cq_consecutive,
    },
    Template {
        id: "cq_days_list",
        task_type: CQ,
        answer_type: A::ListOf,
        scope: Single,
        domains: &[],
        surface_forms: &[
            "On which days {window} was my {metric} {cmp} {threshold}?",
            "List the dates {window} when my {metric} was {cmp} {threshold}.",
            "Which days {window} had my {metric} {cmp} {threshold}?",
        ],
        build: cq_days_list,
    },
    Template {
        id: "cq_conditional_mean",
        task_type: CQ,
        answer_type: A::Number,
        scope: Single,
        domains: &[],
        surface_forms: &[
            "On days {window} when my {metric_a} was above {threshold}, what was my average {metric_b}?",
            "What was my mean {metric_b} on the days {window} with {metric_a} above {threshold}?",
            "Considering only days {window} where my {metric_a} exceeded {threshold}, what was my average {metric_b}?",
        ],
        build: cq_conditional_mean,
    },
    Template {
        id: "cq_above_cohort_count",
        task_type: CQ,
        answer_type: A::Number,
        scope: Multi,
        domains: &[],
        surface_forms: &[
            "On how many days {window} was my {metric} above the cohort average?",
            "How many days {window} did my {metric} beat the cohort's average {metric}?",
            "Count the days {window} when my {metric} exceeded the cohort average for {window_np}.",
        ],
        build: cq_above_cohort_count,
    },
    Template {
        id: "cq_cohort_percentile",
        task_type: CQ,
        answer_type: A::YesNo,
        scope: Multi,
        domains: &[],
        surface_forms: &[
            "Was my average {metric} {window} above the cohort's {pct} percentile?",
            "Did my mean {metric} {window} exceed the {pct} percentile of user averages?",
            "Compared with all users, was my average {metric} {window} above the {pct} percentile?",
        ],
        build: cq_cohort_percentile,
    },
    Template {
        id: "cq_composite_cohort",
        task_type: CQ,
        answer_type: A::ListOf,
        scope: Multi,
        domains: ALL_DOMAINS,
        surface_forms: &[
            "Over {window_np}, on how many days did my sleep duration and aerobic activity time both exceed the cohort average? On those days, what was my dominant diet category, and what trend did my emotion score exhibit?",
            "{window_np}: count the days when both my sleep and my aerobic minutes beat the cohort average, then give my most common meal category and my emotion-score trend on those days.",
            "How many days {window} were my sleep duration and aerobic activity time both above the cohort average, which meal category dominated those days, and was my emotion score increasing, decreasing or stable on them?",
        ],
        build: cq_composite_cohort,
    },
    Template {
        id: "ta_trend",
        task_type: TA,
        answer_type: A::Text,
        scope: Single,
        domains: &[],
        surface_forms: &[
            "What trend did my {metric} show {window}?",
            "How did my {metric} evolve {window}: increasing, decreasing or stable?",
            "Was my {metric} increasing, decreasing or stable {window}?",
        ],
        build: ta_trend,
    },
    Template {
        id: "ta_longest_run",
        task_type: TA,
        answer_type: A::Number,
        scope: Single,
        domains: &[],
        surface_forms: &[
            "What was my longest streak of consecutive days with {metric} {cmp} {threshold} {window}?",
            "How many consecutive days at most was my {metric} {cmp} {threshold} {window}?",
            "{window_np}: what was the longest run of days with my {metric} {cmp} {threshold}?",
        ],
        build: ta_longest_run,
    },
    Template {
        id: "ta_halves",
        task_type: TA,
        answer_type: A::YesNo,
        scope: Single,
        domains: &[],
        surface_forms: &[
            "Was my average {metric} higher in the second half of {window_np} than in the first half?",
            "Did my mean {metric} rise from the first half to the second half of {window_np}?",
            "Splitting {window_np} in two, was my average {metric} greater in the later half?",
        ],
        build: ta_halves,
    },
    Template {
        id: "ta_trend_pair",
        task_type: TA,
        answer_type: A::Pair,
        scope: Single,
        domains: &[],
        surface_forms: &[
            "What trends did my {metric_a} and my {metric_b} show {window}?",
            "{window_np}: was each of my {metric_a} and {metric_b} increasing, decreasing or stable?",
            "How did my {metric_a} and then my {metric_b} trend {window}?",
        ],
        build: ta_trend_pair,
    },
    Template {
        id: "ta_trend_vs_cohort",
        task_type: TA,
        answer_type: A::Pair,
        scope: Multi,
        domains: &[],
        surface_forms: &[
            "What trend did my {metric} show {window}, and what was the cohort average {metric} over the same days?",
            "{window_np}: was my {metric} increasing, decreasing or stable, and what was the cohort's average?",
            "Give the trend of my {metric} {window} and the average {metric} across all users for that period.",
        ],
        build: ta_trend_vs_cohort,
    },
];

pub fn template(id: &str) -> Option<&'static Template> {
    CATALOG.iter().find(|t| t.id == id)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lifelog::synth::{synthesize_dataset, SynthSpec};
    use rand::SeedableRng;
    use std::collections::{BTreeSet, HashSet};

    #[test]
    fn ids_unique_and_forms_plentiful() {
        let ids: HashSet<&str> = CATALOG.iter().map(|t| t.id).collect();
        assert_eq!(ids.len(), CATALOG.len());
        for t in CATALOG {
            assert!(t.surface_forms.len() >= 3, "{}", t.id);
        }
    }

    #[test]
    fn coverage_of_facets() {
        for task in TaskType::ALL {
            assert!(CATALOG.iter().filter(|t| t.task_type == task).count() >= 2, "{task:?}");
        }
        for a in AnswerType::ALL {
            for s in [Single, Multi] {
                assert!(
                    CATALOG.iter().any(|t| t.answer_type == a && t.scope == s),
                    "{a:?} {s:?}"
                );
            }
        }
        assert!(CATALOG.iter().any(|t| t.domains.len() == 4 && t.scope == Single));
        assert!(CATALOG.iter().any(|t| t.domains.len() == 4 && t.scope == Multi));
    }

    #[test]
    fn every_slot_is_bound() {
        let ds = synthesize_dataset(&SynthSpec::new(3, 4, 28)).unwrap();
        let pool = Pool::new(&ds);
        for t in CATALOG {
            let mut bound_once = false;
            for seed in 0..40 {
                let mut ctx = Ctx::new(&ds, &pool, ChaCha8Rng::seed_from_u64(seed));
                if (t.build)(&mut ctx).is_err() {
                    continue;
                }
                bound_once = true;
                let have: BTreeSet<&String> = ctx.slots.keys().collect();
                for form in t.surface_forms {
                    for slot in slot_names(form) {
                        assert!(have.contains(&slot), "{}: {{{slot}}} unbound in {form:?}", t.id);
                    }
                }
            }
            assert!(bound_once, "{} never built", t.id);
        }
    }

    #[test]
    fn render_fills_slots() {
        let slots: BTreeMap<String, String> =
            [("metric".to_string(), "sleep duration".to_string())].into_iter().collect();
        assert_eq!(render("My {metric} and {other}", &slots), "My sleep duration and {other}");
        assert_eq!(slot_names("{a} x {b_np}"), vec!["a", "b_np"]);
    }
}
