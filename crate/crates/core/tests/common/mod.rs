//! Shared fixtures plus a brute-force reference evaluator that works from
//! raw record scans, plain sums and a centered least-squares fit.

#![allow(dead_code)]

use std::collections::{BTreeMap, BTreeSet};

use chrono::{Duration, FixedOffset, NaiveDate};
use lifebench::lifelog::{AlignedDataset, DomainTag, EventRecord, TimeWindow, UserId};
use lifebench::qlang::{
    AggFn, AnswerValue, Cmp, CohortStatFn, CompareKind, EventPredicate, Extreme, Item, Order, QueryIR,
    RunOutput, SetOpKind,
};
use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

pub const DAILY: [(&str, DomainTag); 9] = [
    ("sleep.sleep_minutes", DomainTag::Sleep),
    ("sleep.deep_sleep_minutes", DomainTag::Sleep),
    ("activity.steps", DomainTag::Activity),
    ("activity.aerobic_minutes", DomainTag::Activity),
    ("activity.sedentary_minutes", DomainTag::Activity),
    ("activity.total_minutes", DomainTag::Activity),
    ("diet.calories", DomainTag::Diet),
    ("emotion.emotion_score", DomainTag::Emotion),
    ("emotion.stress_score", DomainTag::Emotion),
];

#[derive(Debug, Clone)]
struct Ev {
    date: NaiveDate,
    metric: String,
    num: Option<f64>,
    cat: Option<String>,
}

#[derive(Debug, Clone)]
enum Ov {
    Series(Vec<(NaiveDate, f64)>),
    Events(Vec<Ev>),
    Days(BTreeSet<NaiveDate>),
    Num(f64),
    Bool(bool),
    Text(String),
    Date(NaiveDate),
    Users(Vec<(String, f64)>),
    Tuple(Vec<Ov>),
}

fn days_of(v: &Ov) -> Result<BTreeSet<NaiveDate>, String> {
    Ok(match v {
        Ov::Series(s) => s.iter().map(|(d, _)| *d).collect(),
        Ov::Events(e) => e.iter().map(|r| r.date).collect(),
        Ov::Days(d) => d.clone(),
        other => return Err(format!("no days in {other:?}")),
    })
}

fn num(v: Ov) -> Result<f64, String> {
    match v {
        Ov::Num(x) => Ok(x),
        other => Err(format!("not a number: {other:?}")),
    }
}

fn naive_mean(v: &[f64]) -> f64 {
    let mut s = 0.0;
    for x in v {
        s += x;
    }
    s / v.len() as f64
}

fn sorted(v: &[f64]) -> Vec<f64> {
    let mut s = v.to_vec();
    s.sort_by(|a, b| a.partial_cmp(b).unwrap());
    s
}

fn naive_median(v: &[f64]) -> f64 {
    let s = sorted(v);
    let n = s.len();
    if n % 2 == 1 {
        s[n / 2]
    } else {
        (s[n / 2 - 1] + s[n / 2]) / 2.0
    }
}

fn naive_percentile(v: &[f64], p: u8) -> f64 {
    let s = sorted(v);
    let rank = ((p as f64) * (s.len() as f64) / 100.0).ceil().max(1.0) as usize;
    s[rank - 1]
}

fn apply(func: AggFn, v: &[f64]) -> Result<f64, String> {
    if func == AggFn::Count {
        return Ok(v.len() as f64);
    }
    if v.is_empty() {
        return Err("empty".into());
    }
    Ok(match func {
        AggFn::Mean => naive_mean(v),
        AggFn::Sum => v.iter().sum(),
        AggFn::Min => sorted(v)[0],
        AggFn::Max => *sorted(v).last().unwrap(),
        AggFn::Median => naive_median(v),
        AggFn::Percentile(p) => naive_percentile(v, p),
        AggFn::Count => unreachable!(),
    })
}

/// Civil date of an event in the dataset's offset.
pub fn local_date(ds: &AlignedDataset, e: &EventRecord) -> NaiveDate {
    let off = FixedOffset::east_opt(ds.utc_offset_minutes() * 60).unwrap();
    e.start.with_timezone(&off).date_naive()
}

fn scan_series(ds: &AlignedDataset, user: &UserId, metric: &str, w: &TimeWindow) -> Vec<(NaiveDate, f64)> {
    let mut out: Vec<(NaiveDate, f64)> = ds
        .daily()
        .iter()
        .filter(|r| &r.user == user && r.metric == metric && r.date >= w.start && r.date <= w.end)
        .filter_map(|r| r.value.as_number().map(|v| (r.date, v)))
        .collect();
    out.sort_by_key(|(d, _)| *d);
    out
}

fn user_mean_table(ds: &AlignedDataset, metric: &str, w: &TimeWindow) -> Vec<(String, f64)> {
    let mut by_user: BTreeMap<String, Vec<f64>> = BTreeMap::new();
    for r in ds.daily() {
        if r.metric == metric && r.date >= w.start && r.date <= w.end {
            if let Some(v) = r.value.as_number() {
                by_user.entry(r.user.as_str().to_string()).or_default().push(v);
            }
        }
    }
    by_user.into_iter().map(|(u, v)| (u, naive_mean(&v))).collect()
}

fn eval(n: &QueryIR, ds: &AlignedDataset) -> Result<Ov, String> {
    Ok(match n {
        QueryIR::SelectSeries { user, metric, window, .. } => Ov::Series(scan_series(ds, user, metric, window)),
        QueryIR::SelectEvents {
            user,
            domain,
            window,
            predicate,
        } => {
            Ov::Events(
                ds.events()
                    .iter()
                    .filter(|e| &e.user == user && e.domain == *domain)
                    .map(|e| (local_date(ds, e), e))
                    .filter(|(d, _)| *d >= window.start && *d <= window.end)
                    .filter(|(_, e)| predicate.metric.as_ref().is_none_or(|m| &e.metric == m))
                    .filter(|(_, e)| {
                        predicate
                            .category
                            .as_ref()
                            .is_none_or(|c| e.value.as_category() == Some(c.as_str()))
                    })
                    .map(|(d, e)| Ev {
                        date: d,
                        metric: e.metric.clone(),
                        num: e.value.as_number(),
                        cat: e.value.as_category().map(str::to_string),
                    })
                    .collect(),
            )
        }
        QueryIR::AlignDays { target, days } => {
            let mut keep: Option<BTreeSet<NaiveDate>> = None;
            for d in days {
                let these = days_of(&eval(d, ds)?)?;
                keep = Some(match keep {
                    None => these,
                    Some(k) => k.intersection(&these).copied().collect(),
                });
            }
            let keep = keep.unwrap_or_default();
            match eval(target, ds)? {
                Ov::Series(s) => Ov::Series(s.into_iter().filter(|(d, _)| keep.contains(d)).collect()),
                Ov::Events(e) => Ov::Events(e.into_iter().filter(|r| keep.contains(&r.date)).collect()),
                Ov::Days(d) => Ov::Days(d.into_iter().filter(|x| keep.contains(x)).collect()),
                other => return Err(format!("cannot align {other:?}")),
            }
        }
        QueryIR::Aggregate { func, child } => match eval(child, ds)? {
            Ov::Series(s) => Ov::Num(apply(*func, &s.iter().map(|(_, v)| *v).collect::<Vec<_>>())?),
            Ov::Events(e) => {
                if *func == AggFn::Count {
                    Ov::Num(e.len() as f64)
                } else {
                    let v: Option<Vec<f64>> = e.iter().map(|r| r.num).collect();
                    Ov::Num(apply(*func, &v.ok_or("non-numeric event")?)?)
                }
            }
            other => return Err(format!("cannot aggregate {other:?}")),
        },
        QueryIR::Compare { kind, left, right } => {
            let l = num(eval(left, ds)?)?;
            let r = num(eval(right, ds)?)?;
            match kind {
                CompareKind::Diff => Ov::Num(l - r),
                CompareKind::Greater => Ov::Bool(l > r),
                CompareKind::Less => Ov::Bool(l < r),
            }
        }
        QueryIR::ThresholdFilter { child, cmp, threshold } => {
            let Ov::Series(s) = eval(child, ds)? else {
                return Err("filter needs a series".into());
            };
            let t = num(eval(threshold, ds)?)?;
            let ok = |v: f64| match cmp {
                Cmp::Gt => v > t,
                Cmp::Ge => v >= t,
                Cmp::Lt => v < t,
                Cmp::Le => v <= t,
            };
            Ov::Days(s.into_iter().filter(|(_, v)| ok(*v)).map(|(d, _)| d).collect())
        }
        QueryIR::Const { value } => Ov::Num(*value),
        QueryIR::CountDays { child } => Ov::Num(days_of(&eval(child, ds)?)?.len() as f64),
        QueryIR::ConsecutiveRun { child, min_len, output } => {
            let days = days_of(&eval(child, ds)?)?;
            let mut best = 0u32;
            let mut cur = 0u32;
            let mut prev: Option<NaiveDate> = None;
            for d in days {
                cur = if prev == Some(d - Duration::days(1)) { cur + 1 } else { 1 };
                best = best.max(cur);
                prev = Some(d);
            }
            match output {
                RunOutput::Exists => Ov::Bool(best > 0 && best >= *min_len),
                RunOutput::MaxRun => Ov::Num(best as f64),
            }
        }
        QueryIR::Trend { child, epsilon } => {
            let (window_start, s) = match (&**child, eval(child, ds)?) {
                (QueryIR::SelectSeries { window, .. }, Ov::Series(s)) => (window.start, s),
                (_, Ov::Series(_)) => return Err("trend oracle needs a plain series".into()),
                _ => return Err("trend needs a series".into()),
            };
            if s.len() < 3 {
                return Err("too few points".into());
            }
            let xs: Vec<f64> = s.iter().map(|(d, _)| (*d - window_start).num_days() as f64).collect();
            let ys: Vec<f64> = s.iter().map(|(_, v)| *v).collect();
            let (xm, ym) = (naive_mean(&xs), naive_mean(&ys));
            let mut num_ = 0.0;
            let mut den = 0.0;
            for (x, y) in xs.iter().zip(&ys) {
                num_ += (x - xm) * (y - ym);
                den += (x - xm) * (x - xm);
            }
            let slope = num_ / den;
            let lo = sorted(&ys)[0];
            let hi = *sorted(&ys).last().unwrap();
            let band = epsilon * (hi - lo) / ys.len() as f64;
            Ov::Text(
                if slope.abs() <= band {
                    "stable"
                } else if slope > 0.0 {
                    "increasing"
                } else {
                    "decreasing"
                }
                .into(),
            )
        }
        QueryIR::ArgExtreme { child, extreme } => {
            let Ov::Series(s) = eval(child, ds)? else {
                return Err("argextreme needs a series".into());
            };
            let mut best: Option<(NaiveDate, f64)> = None;
            for (d, v) in s {
                let take = match (best, extreme) {
                    (None, _) => true,
                    (Some((_, b)), Extreme::Max) => v > b,
                    (Some((_, b)), Extreme::Min) => v < b,
                };
                if take {
                    best = Some((d, v));
                }
            }
            Ov::Date(best.ok_or("empty")?.0)
        }
        QueryIR::DominantCategory { child, field } => {
            let Ov::Events(e) = eval(child, ds)? else {
                return Err("dominant needs events".into());
            };
            let mut counts: BTreeMap<String, usize> = BTreeMap::new();
            for r in e.iter().filter(|r| &r.metric == field) {
                if let Some(c) = &r.cat {
                    *counts.entry(c.clone()).or_default() += 1;
                }
            }
            let top = counts.values().copied().max().ok_or("empty")?;
            Ov::Text(counts.into_iter().find(|(_, n)| *n == top).unwrap().0)
        }
        QueryIR::CohortStat { metric, window, stat } => {
            let means: Vec<f64> = user_mean_table(ds, metric, window).into_iter().map(|(_, m)| m).collect();
            if means.is_empty() {
                return Err("empty cohort".into());
            }
            Ov::Num(match stat {
                CohortStatFn::Mean => naive_mean(&means),
                CohortStatFn::Median => naive_median(&means),
                CohortStatFn::Percentile(p) => naive_percentile(&means, *p),
            })
        }
        QueryIR::RankUsers { metric, window, order, k } => {
            let mut t = user_mean_table(ds, metric, window);
            t.sort_by(|(ua, a), (ub, b)| {
                let c = match order {
                    Order::Asc => a.partial_cmp(b).unwrap(),
                    Order::Desc => b.partial_cmp(a).unwrap(),
                };
                c.then(ua.cmp(ub))
            });
            t.truncate(*k as usize);
            Ov::Users(t)
        }
        QueryIR::SetOp { kind, children } => {
            let mut acc: Option<BTreeSet<NaiveDate>> = None;
            for c in children {
                let these = days_of(&eval(c, ds)?)?;
                acc = Some(match (acc, kind) {
                    (None, _) => these,
                    (Some(a), SetOpKind::Intersect) => a.intersection(&these).copied().collect(),
                    (Some(a), SetOpKind::Union) => a.union(&these).copied().collect(),
                });
            }
            Ov::Days(acc.unwrap_or_default())
        }
        QueryIR::Tuple { children } => Ov::Tuple(children.iter().map(|c| eval(c, ds)).collect::<Result<_, _>>()?),
    })
}

fn shape(items: Vec<Item>) -> Result<AnswerValue, String> {
    let mut items = items;
    Ok(match items.len() {
        0 => return Err("no items".into()),
        1 => match items.remove(0) {
            Item::Number(v) => AnswerValue::Number(v),
            Item::Text(t) => AnswerValue::Text(t),
            Item::Date(d) => AnswerValue::Text(d.to_string()),
        },
        2 => {
            let b = items.pop().unwrap();
            AnswerValue::Pair(items.pop().unwrap(), b)
        }
        _ => AnswerValue::ListOf(items),
    })
}

/// Reference answer for `program`, or a description of why there is none.
pub fn oracle_answer(program: &QueryIR, ds: &AlignedDataset) -> Result<AnswerValue, String> {
    match eval(program, ds)? {
        Ov::Num(v) => Ok(AnswerValue::Number(v)),
        Ov::Bool(b) => Ok(AnswerValue::YesNo(b)),
        Ov::Text(t) => Ok(AnswerValue::Text(t)),
        Ov::Date(d) => Ok(AnswerValue::Text(d.to_string())),
        Ov::Series(s) => shape(s.into_iter().map(|(_, v)| Item::Number(v)).collect()),
        Ov::Days(d) => shape(d.into_iter().map(Item::Date).collect()),
        Ov::Users(u) => shape(u.into_iter().map(|(u, _)| Item::Text(u)).collect()),
        Ov::Tuple(vals) => shape(
            vals.into_iter()
                .map(|v| match v {
                    Ov::Num(x) => Ok(Item::Number(x)),
                    Ov::Bool(b) => Ok(Item::Text(if b { "yes" } else { "no" }.into())),
                    Ov::Text(t) => Ok(Item::Text(t)),
                    Ov::Date(d) => Ok(Item::Date(d)),
                    other => Err(format!("tuple member {other:?}")),
                })
                .collect::<Result<_, _>>()?,
        ),
        Ov::Events(_) => Err("events are not answers".into()),
    }
}

fn close(a: f64, b: f64) -> bool {
    (a - b).abs() <= 1e-9 * a.abs().max(b.abs()).max(1.0)
}

fn item_eq(a: &Item, b: &Item) -> bool {
    match (a, b) {
        (Item::Number(x), Item::Number(y)) => close(*x, *y),
        (Item::Text(x), Item::Text(y)) => x == y,
        (Item::Date(x), Item::Date(y)) => x == y,
        _ => false,
    }
}

/// Same shape, same texts, numbers equal to 1e-9 relative.
pub fn answers_agree(a: &AnswerValue, b: &AnswerValue) -> bool {
    match (a, b) {
        (AnswerValue::Number(x), AnswerValue::Number(y)) => close(*x, *y),
        (AnswerValue::YesNo(x), AnswerValue::YesNo(y)) => x == y,
        (AnswerValue::Text(x), AnswerValue::Text(y)) => x == y,
        (AnswerValue::Pair(a1, a2), AnswerValue::Pair(b1, b2)) => item_eq(a1, b1) && item_eq(a2, b2),
        (AnswerValue::ListOf(x), AnswerValue::ListOf(y)) => {
            x.len() == y.len() && x.iter().zip(y).all(|(p, q)| item_eq(p, q))
        }
        _ => false,
    }
}

/// Random well-formed programs over the dataset's users, metrics and span.
pub struct ProgramSampler<'a> {
    pub ds: &'a AlignedDataset,
    users: Vec<UserId>,
    values: BTreeMap<&'static str, Vec<f64>>,
}

impl<'a> ProgramSampler<'a> {
    pub fn new(ds: &'a AlignedDataset) -> Self {
        let mut values: BTreeMap<&'static str, Vec<f64>> = BTreeMap::new();
        for (m, _) in DAILY {
            let v: Vec<f64> = ds
                .daily()
                .iter()
                .filter(|r| r.metric == m)
                .filter_map(|r| r.value.as_number())
                .collect();
            values.insert(m, v);
        }
        Self {
            ds,
            users: ds.users().iter().cloned().collect(),
            values,
        }
    }

    fn window(&self, rng: &mut ChaCha8Rng, min_len: u32) -> TimeWindow {
        let span = self.ds.date_span();
        let total = span.len_days();
        let lens: Vec<u32> = [1u32, 3, 5, 7, 10, 14, 21, 28]
            .into_iter()
            .filter(|l| *l >= min_len && *l <= total)
            .collect();
        let len = *lens.choose(rng).unwrap_or(&total);
        let offset = rng.gen_range(0..=(total - len)) as i64;
        let start = span.start + Duration::days(offset);
        TimeWindow::new(start, start + Duration::days(len as i64 - 1)).unwrap()
    }

    fn user(&self, rng: &mut ChaCha8Rng) -> UserId {
        self.users.choose(rng).unwrap().clone()
    }

    fn metric(&self, rng: &mut ChaCha8Rng) -> (&'static str, DomainTag) {
        *DAILY.choose(rng).unwrap()
    }

    fn series_in(&self, rng: &mut ChaCha8Rng, user: &UserId, w: TimeWindow) -> (QueryIR, &'static str) {
        let (m, d) = self.metric(rng);
        (
            QueryIR::SelectSeries {
                user: user.clone(),
                domain: d,
                metric: m.into(),
                window: w,
            },
            m,
        )
    }

    fn func(&self, rng: &mut ChaCha8Rng) -> AggFn {
        *[
            AggFn::Mean,
            AggFn::Min,
            AggFn::Max,
            AggFn::Sum,
            AggFn::Count,
            AggFn::Median,
            AggFn::Percentile(10),
            AggFn::Percentile(25),
            AggFn::Percentile(75),
            AggFn::Percentile(90),
        ]
        .choose(rng)
        .unwrap()
    }

    fn cmp(&self, rng: &mut ChaCha8Rng) -> Cmp {
        *[Cmp::Gt, Cmp::Ge, Cmp::Lt, Cmp::Le].choose(rng).unwrap()
    }

    fn filtered(&self, rng: &mut ChaCha8Rng, user: &UserId, w: TimeWindow) -> QueryIR {
        let (s, m) = self.series_in(rng, user, w);
        let threshold = if rng.gen_bool(0.7) {
            let v = self.values[m].choose(rng).copied().unwrap_or(0.0);
            QueryIR::Const { value: v }
        } else {
            QueryIR::Aggregate {
                func: AggFn::Mean,
                child: Box::new(s.clone()),
            }
        };
        QueryIR::ThresholdFilter {
            child: Box::new(s),
            cmp: self.cmp(rng),
            threshold: Box::new(threshold),
        }
    }

    fn number(&self, rng: &mut ChaCha8Rng, user: &UserId) -> QueryIR {
        match rng.gen_range(0..4) {
            0 => QueryIR::Const {
                value: (rng.gen_range(-500.0..5000.0f64) * 4.0).round() / 4.0,
            },
            1 => {
                let (m, _) = self.metric(rng);
                QueryIR::CohortStat {
                    metric: m.into(),
                    window: self.window(rng, 1),
                    stat: *[CohortStatFn::Mean, CohortStatFn::Median, CohortStatFn::Percentile(75)]
                        .choose(rng)
                        .unwrap(),
                }
            }
            _ => {
                let w = self.window(rng, 1);
                QueryIR::Aggregate {
                    func: self.func(rng),
                    child: Box::new(self.series_in(rng, user, w).0),
                }
            }
        }
    }

    fn events(&self, rng: &mut ChaCha8Rng, user: &UserId, w: TimeWindow) -> QueryIR {
        if rng.gen_bool(0.5) {
            QueryIR::SelectEvents {
                user: user.clone(),
                domain: DomainTag::Activity,
                window: w,
                predicate: EventPredicate {
                    metric: Some("activity.session_minutes".into()),
                    category: None,
                },
            }
        } else {
            let category = rng
                .gen_bool(0.3)
                .then(|| ["breakfast", "lunch", "dinner", "snack"].choose(rng).unwrap().to_string());
            QueryIR::SelectEvents {
                user: user.clone(),
                domain: DomainTag::Diet,
                window: w,
                predicate: EventPredicate { metric: None, category },
            }
        }
    }

    pub fn sample(&self, rng: &mut ChaCha8Rng) -> QueryIR {
        let u = self.user(rng);
        match rng.gen_range(0..15) {
            0 => {
                let w = self.window(rng, 1);
                QueryIR::Aggregate {
                    func: self.func(rng),
                    child: Box::new(self.series_in(rng, &u, w).0),
                }
            }
            1 => {
                let w = self.window(rng, 1);
                QueryIR::Aggregate {
                    func: *[AggFn::Count, AggFn::Sum, AggFn::Mean, AggFn::Max].choose(rng).unwrap(),
                    child: Box::new(self.events(rng, &u, w)),
                }
            }
            2 => QueryIR::Compare {
                kind: *[CompareKind::Diff, CompareKind::Greater, CompareKind::Less].choose(rng).unwrap(),
                left: Box::new(self.number(rng, &u)),
                right: Box::new(self.number(rng, &u)),
            },
            3 => {
                let w = self.window(rng, 3);
                QueryIR::CountDays {
                    child: Box::new(self.filtered(rng, &u, w)),
                }
            }
            4 => {
                let w = self.window(rng, 3);
                QueryIR::ConsecutiveRun {
                    child: Box::new(self.filtered(rng, &u, w)),
                    min_len: rng.gen_range(1..=5),
                    output: *[RunOutput::Exists, RunOutput::MaxRun].choose(rng).unwrap(),
                }
            }
            5 => {
                let w = self.window(rng, 3);
                QueryIR::Trend {
                    child: Box::new(self.series_in(rng, &u, w).0),
                    epsilon: *[0.01, 0.05, 0.2].choose(rng).unwrap(),
                }
            }
            6 => {
                let w = self.window(rng, 1);
                QueryIR::ArgExtreme {
                    child: Box::new(self.series_in(rng, &u, w).0),
                    extreme: *[Extreme::Min, Extreme::Max].choose(rng).unwrap(),
                }
            }
            7 => {
                let w = self.window(rng, 1);
                QueryIR::DominantCategory {
                    child: Box::new(QueryIR::SelectEvents {
                        user: u.clone(),
                        domain: DomainTag::Diet,
                        window: w,
                        predicate: EventPredicate::default(),
                    }),
                    field: "diet.category".into(),
                }
            }
            8 => {
                let (m, _) = self.metric(rng);
                QueryIR::CohortStat {
                    metric: m.into(),
                    window: self.window(rng, 1),
                    stat: *[
                        CohortStatFn::Mean,
                        CohortStatFn::Median,
                        CohortStatFn::Percentile(25),
                        CohortStatFn::Percentile(90),
                    ]
                    .choose(rng)
                    .unwrap(),
                }
            }
            9 => {
                let (m, _) = self.metric(rng);
                QueryIR::RankUsers {
                    metric: m.into(),
                    window: self.window(rng, 1),
                    order: *[Order::Asc, Order::Desc].choose(rng).unwrap(),
                    k: rng.gen_range(1..=5),
                }
            }
            10 => {
                let w = self.window(rng, 3);
                QueryIR::SetOp {
                    kind: *[SetOpKind::Intersect, SetOpKind::Union].choose(rng).unwrap(),
                    children: vec![self.filtered(rng, &u, w), self.filtered(rng, &u, w)],
                }
            }
            11 => {
                let w = self.window(rng, 3);
                QueryIR::Aggregate {
                    func: self.func(rng),
                    child: Box::new(QueryIR::AlignDays {
                        target: Box::new(self.series_in(rng, &u, w).0),
                        days: vec![self.filtered(rng, &u, w)],
                    }),
                }
            }
            12 => {
                let n = rng.gen_range(2..=4);
                QueryIR::Tuple {
                    children: (0..n).map(|_| self.number(rng, &u)).collect(),
                }
            }
            13 => {
                let w = self.window(rng, 1);
                let w = if w.len_days() > 7 { TimeWindow::ending_at(w.end, 7) } else { w };
                self.series_in(rng, &u, w).0
            }
            _ => {
                let w = self.window(rng, 3);
                QueryIR::Aggregate {
                    func: AggFn::Count,
                    child: Box::new(QueryIR::AlignDays {
                        target: Box::new(self.events(rng, &u, w)),
                        days: vec![self.series_in(rng, &u, w).0],
                    }),
                }
            }
        }
    }
}
