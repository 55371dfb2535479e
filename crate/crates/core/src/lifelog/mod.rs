//! Lifelog records, user/time alignment, synthetic generation and CSV I/O.

pub mod csvio;
pub mod registry;
pub mod synth;

use std::collections::{BTreeSet, HashMap};
use std::fmt;
use std::str::FromStr;

use chrono::{DateTime, Duration, FixedOffset, NaiveDate, Utc};
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use registry::{registry, Granularity, MetricSpec, ValueKind};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LifelogError {
    #[error("no records supplied")]
    EmptyInput,
    #[error("user id must be non-empty")]
    EmptyUserId,
    #[error("duplicate daily row for ({user}, {date}, {metric})")]
    DuplicateDaily {
        user: String,
        date: NaiveDate,
        metric: String,
    },
    #[error("reference date {reference} outside span {span}")]
    ReferenceOutsideSpan { reference: NaiveDate, span: TimeWindow },
    #[error("unknown metric `{0}`")]
    UnknownMetric(String),
    #[error("invalid record: {0}")]
    InvalidRecord(String),
    #[error("invalid window: start {start} after end {end}")]
    InvalidWindow { start: NaiveDate, end: NaiveDate },
    #[error("invalid synthesis spec: {0}")]
    InvalidSpec(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DomainTag {
    Diet,
    Sleep,
    Activity,
    Emotion,
}

impl DomainTag {
    pub const ALL: [DomainTag; 4] = [
        DomainTag::Diet,
        DomainTag::Sleep,
        DomainTag::Activity,
        DomainTag::Emotion,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            DomainTag::Diet => "diet",
            DomainTag::Sleep => "sleep",
            DomainTag::Activity => "activity",
            DomainTag::Emotion => "emotion",
        }
    }
}

impl fmt::Display for DomainTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for DomainTag {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "diet" | "d" => Ok(DomainTag::Diet),
            "sleep" | "s" => Ok(DomainTag::Sleep),
            "activity" | "a" => Ok(DomainTag::Activity),
            "emotion" | "e" => Ok(DomainTag::Emotion),
            other => Err(format!("unknown domain `{other}`")),
        }
    }
}

/// Anonymized user identifier.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct UserId(String);

impl UserId {
    pub fn new(id: impl Into<String>) -> Result<Self, LifelogError> {
        let id = id.into();
        if id.trim().is_empty() {
            return Err(LifelogError::EmptyUserId);
        }
        Ok(Self(id))
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl TryFrom<String> for UserId {
    type Error = LifelogError;
    fn try_from(value: String) -> Result<Self, Self::Error> {
        UserId::new(value)
    }
}

impl From<UserId> for String {
    fn from(value: UserId) -> Self {
        value.0
    }
}

impl fmt::Display for UserId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

/// A recorded value: numeric measurement or category label.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum RecordValue {
    Number(f64),
    Category(String),
}

impl RecordValue {
    pub fn as_number(&self) -> Option<f64> {
        match self {
            RecordValue::Number(v) => Some(*v),
            RecordValue::Category(_) => None,
        }
    }

    pub fn as_category(&self) -> Option<&str> {
        match self {
            RecordValue::Category(c) => Some(c),
            RecordValue::Number(_) => None,
        }
    }
}

impl fmt::Display for RecordValue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            RecordValue::Number(v) => write!(f, "{v}"),
            RecordValue::Category(c) => f.write_str(c),
        }
    }
}

/// Inclusive calendar-date window.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct TimeWindow {
    pub start: NaiveDate,
    pub end: NaiveDate,
}

impl TimeWindow {
    pub fn new(start: NaiveDate, end: NaiveDate) -> Result<Self, LifelogError> {
        if start > end {
            return Err(LifelogError::InvalidWindow { start, end });
        }
        Ok(Self { start, end })
    }

    pub fn single(day: NaiveDate) -> Self {
        Self { start: day, end: day }
    }

    /// The `days`-long window ending at `end`.
    pub fn ending_at(end: NaiveDate, days: u32) -> Self {
        let start = end - Duration::days(i64::from(days.max(1)) - 1);
        Self { start, end }
    }

    pub fn contains(&self, day: NaiveDate) -> bool {
        self.start <= day && day <= self.end
    }

    pub fn covers(&self, other: &TimeWindow) -> bool {
        self.contains(other.start) && self.contains(other.end)
    }

    pub fn len_days(&self) -> u32 {
        ((self.end - self.start).num_days() + 1) as u32
    }

    pub fn days(&self) -> impl Iterator<Item = NaiveDate> {
        let start = self.start;
        (0..i64::from(self.len_days())).map(move |i| start + Duration::days(i))
    }

    pub fn union(&self, other: &TimeWindow) -> TimeWindow {
        TimeWindow {
            start: self.start.min(other.start),
            end: self.end.max(other.end),
        }
    }
}

impl fmt::Display for TimeWindow {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}..{}", self.start, self.end)
    }
}

impl FromStr for TimeWindow {
    type Err = LifelogError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bad = || LifelogError::InvalidRecord(format!("bad window `{s}`"));
        let (a, b) = s.split_once("..").ok_or_else(bad)?;
        let start = a.trim().parse::<NaiveDate>().map_err(|_| bad())?;
        let end = b.trim().parse::<NaiveDate>().map_err(|_| bad())?;
        TimeWindow::new(start, end)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EventRecord {
    pub user: UserId,
    pub domain: DomainTag,
    pub start: DateTime<Utc>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub end: Option<DateTime<Utc>>,
    pub metric: String,
    pub value: RecordValue,
    pub unit: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DailyMetric {
    pub user: UserId,
    pub domain: DomainTag,
    pub date: NaiveDate,
    pub metric: String,
    pub value: RecordValue,
    pub unit: String,
}

/// Checks a metric against the registry and a record's own invariants.
fn check_metric(
    metric: &str,
    domain: DomainTag,
    granularity: Granularity,
    value: &RecordValue,
) -> Result<(), LifelogError> {
    let spec = registry()
        .get(metric)
        .ok_or_else(|| LifelogError::UnknownMetric(metric.to_string()))?;
    if spec.domain != domain {
        return Err(LifelogError::InvalidRecord(format!(
            "metric {metric} belongs to {}, not {domain}",
            spec.domain
        )));
    }
    if spec.granularity != granularity {
        return Err(LifelogError::InvalidRecord(format!(
            "metric {metric} is not a {granularity:?} metric"
        )));
    }
    match (spec.kind, value) {
        (ValueKind::Numeric, RecordValue::Number(v)) if v.is_finite() => Ok(()),
        (ValueKind::Numeric, RecordValue::Number(v)) => Err(LifelogError::InvalidRecord(
            format!("non-finite value {v} for {metric}"),
        )),
        (ValueKind::Categorical, RecordValue::Category(_)) => Ok(()),
        _ => Err(LifelogError::InvalidRecord(format!(
            "value kind mismatch for {metric}"
        ))),
    }
}

impl EventRecord {
    pub fn validate(&self) -> Result<(), LifelogError> {
        check_metric(&self.metric, self.domain, Granularity::Event, &self.value)?;
        if let Some(end) = self.end {
            if end < self.start {
                return Err(LifelogError::InvalidRecord(format!(
                    "event end {end} before start {}",
                    self.start
                )));
            }
        }
        Ok(())
    }
}

impl DailyMetric {
    pub fn validate(&self) -> Result<(), LifelogError> {
        check_metric(&self.metric, self.domain, Granularity::Daily, &self.value)
    }
}

/// Serialized shape of a dataset; indexes are rebuilt on load.
#[derive(Debug, Clone, Serialize, Deserialize)]
struct DatasetParts {
    users: BTreeSet<UserId>,
    date_span: TimeWindow,
    reference_date: NaiveDate,
    #[serde(default)]
    utc_offset_minutes: i32,
    events: Vec<EventRecord>,
    daily: Vec<DailyMetric>,
}

#[derive(Debug, Default, Clone)]
struct DatasetIndex {
    /// (user, metric) -> (date, row index) sorted by date.
    series: HashMap<(UserId, String), Vec<(NaiveDate, usize)>>,
    /// user -> (event date, event index) sorted by start.
    events: HashMap<UserId, Vec<(NaiveDate, usize)>>,
}

/// All records of a cohort, aligned by user and civil date. Immutable once
/// built.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(try_from = "DatasetParts", into = "DatasetParts")]
pub struct AlignedDataset {
    users: BTreeSet<UserId>,
    date_span: TimeWindow,
    reference_date: NaiveDate,
    utc_offset_minutes: i32,
    events: Vec<EventRecord>,
    daily: Vec<DailyMetric>,
    index: DatasetIndex,
}

impl PartialEq for AlignedDataset {
    fn eq(&self, other: &Self) -> bool {
        self.users == other.users
            && self.date_span == other.date_span
            && self.reference_date == other.reference_date
            && self.utc_offset_minutes == other.utc_offset_minutes
            && self.events == other.events
            && self.daily == other.daily
    }
}

impl TryFrom<DatasetParts> for AlignedDataset {
    type Error = LifelogError;

    fn try_from(p: DatasetParts) -> Result<Self, Self::Error> {
        let ds = align_with_offset(p.events, p.daily, Some(p.reference_date), p.utc_offset_minutes)?;
        if ds.users != p.users || ds.date_span != p.date_span {
            return Err(LifelogError::InvalidRecord(
                "stored users/span disagree with records".into(),
            ));
        }
        Ok(ds)
    }
}

impl From<AlignedDataset> for DatasetParts {
    fn from(d: AlignedDataset) -> Self {
        DatasetParts {
            users: d.users,
            date_span: d.date_span,
            reference_date: d.reference_date,
            utc_offset_minutes: d.utc_offset_minutes,
            events: d.events,
            daily: d.daily,
        }
    }
}

/// Aligns records by user and civil date (UTC days).
///
/// The span is the min..max date over all records. `reference_date`
/// defaults to the span end.
pub fn align(
    events: Vec<EventRecord>,
    daily: Vec<DailyMetric>,
    reference_date: Option<NaiveDate>,
) -> Result<AlignedDataset, LifelogError> {
    align_with_offset(events, daily, reference_date, 0)
}

/// [`align`] with civil dates taken in a fixed UTC offset.
pub fn align_with_offset(
    mut events: Vec<EventRecord>,
    mut daily: Vec<DailyMetric>,
    reference_date: Option<NaiveDate>,
    utc_offset_minutes: i32,
) -> Result<AlignedDataset, LifelogError> {
    if events.is_empty() && daily.is_empty() {
        return Err(LifelogError::EmptyInput);
    }
    let offset = FixedOffset::east_opt(utc_offset_minutes * 60)
        .ok_or_else(|| LifelogError::InvalidRecord("utc offset out of range".into()))?;
    for e in &events {
        e.validate()?;
    }
    for d in &daily {
        d.validate()?;
    }

    daily.sort_by(|a, b| {
        (&a.user, a.date, &a.metric).cmp(&(&b.user, b.date, &b.metric))
    });
    for pair in daily.windows(2) {
        if pair[0].user == pair[1].user
            && pair[0].date == pair[1].date
            && pair[0].metric == pair[1].metric
        {
            return Err(LifelogError::DuplicateDaily {
                user: pair[0].user.to_string(),
                date: pair[0].date,
                metric: pair[0].metric.clone(),
            });
        }
    }
    events.sort_by(|a, b| {
        (&a.user, a.start, &a.metric, a.end)
            .cmp(&(&b.user, b.start, &b.metric, b.end))
            .then_with(|| a.value.to_string().cmp(&b.value.to_string()))
    });

    let event_date = |e: &EventRecord| e.start.with_timezone(&offset).date_naive();
    let dates = daily
        .iter()
        .map(|d| d.date)
        .chain(events.iter().map(event_date));
    let (mut lo, mut hi) = (NaiveDate::MAX, NaiveDate::MIN);
    for d in dates {
        lo = lo.min(d);
        hi = hi.max(d);
    }
    let date_span = TimeWindow { start: lo, end: hi };
    let reference_date = reference_date.unwrap_or(hi);
    if !date_span.contains(reference_date) {
        return Err(LifelogError::ReferenceOutsideSpan {
            reference: reference_date,
            span: date_span,
        });
    }

    let users: BTreeSet<UserId> = daily
        .iter()
        .map(|d| d.user.clone())
        .chain(events.iter().map(|e| e.user.clone()))
        .collect();

    let mut index = DatasetIndex::default();
    for (i, d) in daily.iter().enumerate() {
        index
            .series
            .entry((d.user.clone(), d.metric.clone()))
            .or_default()
            .push((d.date, i));
    }
    for (i, e) in events.iter().enumerate() {
        index
            .events
            .entry(e.user.clone())
            .or_default()
            .push((event_date(e), i));
    }

    Ok(AlignedDataset {
        users,
        date_span,
        reference_date,
        utc_offset_minutes,
        events,
        daily,
        index,
    })
}

impl AlignedDataset {
    pub fn users(&self) -> &BTreeSet<UserId> {
        &self.users
    }

    pub fn date_span(&self) -> TimeWindow {
        self.date_span
    }

    pub fn reference_date(&self) -> NaiveDate {
        self.reference_date
    }

    pub fn utc_offset_minutes(&self) -> i32 {
        self.utc_offset_minutes
    }

    pub fn events(&self) -> &[EventRecord] {
        &self.events
    }

    pub fn daily(&self) -> &[DailyMetric] {
        &self.daily
    }

    /// Returns a copy anchored at a different reference date.
    pub fn with_reference_date(&self, reference: NaiveDate) -> Result<Self, LifelogError> {
        if !self.date_span.contains(reference) {
            return Err(LifelogError::ReferenceOutsideSpan {
                reference,
                span: self.date_span,
            });
        }
        let mut ds = self.clone();
        ds.reference_date = reference;
        Ok(ds)
    }

    /// Civil date of an event.
    pub fn event_date(&self, event: &EventRecord) -> NaiveDate {
        let offset = FixedOffset::east_opt(self.utc_offset_minutes * 60).expect("validated offset");
        event.start.with_timezone(&offset).date_naive()
    }

    /// Numeric daily values for one user/metric inside `window`, date ordered.
    pub fn series(&self, user: &UserId, metric: &str, window: TimeWindow) -> Vec<(NaiveDate, f64)> {
        let Some(rows) = self.index.series.get(&(user.clone(), metric.to_string())) else {
            return Vec::new();
        };
        let from = rows.partition_point(|(d, _)| *d < window.start);
        rows[from..]
            .iter()
            .take_while(|(d, _)| *d <= window.end)
            .filter_map(|(d, i)| self.daily[*i].value.as_number().map(|v| (*d, v)))
            .collect()
    }

    pub fn daily_value(&self, user: &UserId, date: NaiveDate, metric: &str) -> Option<&DailyMetric> {
        let rows = self.index.series.get(&(user.clone(), metric.to_string()))?;
        rows.binary_search_by_key(&date, |(d, _)| *d)
            .ok()
            .map(|pos| &self.daily[rows[pos].1])
    }

    /// Events of one user in `window`, optionally restricted to a domain.
    pub fn events_in(
        &self,
        user: &UserId,
        domain: Option<DomainTag>,
        window: TimeWindow,
    ) -> Vec<(NaiveDate, &EventRecord)> {
        let Some(rows) = self.index.events.get(user) else {
            return Vec::new();
        };
        rows.iter()
            .filter(|(d, _)| window.contains(*d))
            .map(|(d, i)| (*d, &self.events[*i]))
            .filter(|(_, e)| domain.is_none_or(|dom| e.domain == dom))
            .collect()
    }

    /// All records (daily and events) for a user on a date.
    pub fn records_on(&self, user: &UserId, date: NaiveDate) -> (Vec<&DailyMetric>, Vec<&EventRecord>) {
        let daily = self
            .daily
            .iter()
            .filter(|d| &d.user == user && d.date == date)
            .collect();
        let events = self
            .events_in(user, None, TimeWindow::single(date))
            .into_iter()
            .map(|(_, e)| e)
            .collect();
        (daily, events)
    }

    /// Users with at least one value of `metric` inside `window`.
    pub fn users_with_data(&self, metric: &str, window: TimeWindow) -> Vec<&UserId> {
        self.users
            .iter()
            .filter(|u| !self.series(u, metric, window).is_empty())
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use registry::names;

    fn d(s: &str) -> NaiveDate {
        s.parse().unwrap()
    }

    fn sleep_row(user: &str, date: &str, v: f64) -> DailyMetric {
        DailyMetric {
            user: UserId::new(user).unwrap(),
            domain: DomainTag::Sleep,
            date: d(date),
            metric: names::SLEEP_MINUTES.into(),
            value: RecordValue::Number(v),
            unit: "min".into(),
        }
    }

    #[test]
    fn single_row_span() {
        let ds = align(vec![], vec![sleep_row("u1", "2021-03-01", 420.0)], None).unwrap();
        assert_eq!(ds.date_span(), TimeWindow::single(d("2021-03-01")));
        assert_eq!(ds.reference_date(), d("2021-03-01"));
    }

    #[test]
    fn duplicate_daily_key_rejected() {
        let err = align(
            vec![],
            vec![
                sleep_row("u1", "2021-03-01", 420.0),
                sleep_row("u1", "2021-03-01", 400.0),
            ],
            None,
        )
        .unwrap_err();
        assert!(matches!(err, LifelogError::DuplicateDaily { .. }));
    }

    #[test]
    fn reference_outside_span_rejected() {
        let err = align(
            vec![],
            vec![sleep_row("u1", "2021-03-01", 420.0)],
            Some(d("2021-04-01")),
        )
        .unwrap_err();
        assert!(matches!(err, LifelogError::ReferenceOutsideSpan { .. }));
    }

    #[test]
    fn empty_input_rejected() {
        assert_eq!(align(vec![], vec![], None).unwrap_err(), LifelogError::EmptyInput);
    }

    #[test]
    fn unknown_metric_rejected() {
        let mut row = sleep_row("u1", "2021-03-01", 1.0);
        row.metric = "sleep.rem".into();
        assert!(matches!(
            align(vec![], vec![row], None),
            Err(LifelogError::UnknownMetric(_))
        ));
    }

    #[test]
    fn event_end_before_start_rejected() {
        let start = d("2021-03-01").and_hms_opt(10, 0, 0).unwrap().and_utc();
        let e = EventRecord {
            user: UserId::new("u1").unwrap(),
            domain: DomainTag::Activity,
            start,
            end: Some(start - Duration::minutes(5)),
            metric: names::ACTIVITY_SESSION.into(),
            value: RecordValue::Number(5.0),
            unit: "min".into(),
        };
        assert!(matches!(e.validate(), Err(LifelogError::InvalidRecord(_))));
    }

    #[test]
    fn series_lookup_respects_window_and_gaps() {
        let rows = vec![
            sleep_row("u1", "2021-03-01", 1.0),
            sleep_row("u1", "2021-03-03", 3.0),
            sleep_row("u1", "2021-03-04", 4.0),
            sleep_row("u2", "2021-03-02", 9.0),
        ];
        let ds = align(vec![], rows, None).unwrap();
        let u1 = UserId::new("u1").unwrap();
        let s = ds.series(&u1, names::SLEEP_MINUTES, TimeWindow::new(d("2021-03-02"), d("2021-03-04")).unwrap());
        assert_eq!(s, vec![(d("2021-03-03"), 3.0), (d("2021-03-04"), 4.0)]);
        assert!(ds.daily_value(&u1, d("2021-03-02"), names::SLEEP_MINUTES).is_none());
        assert_eq!(ds.users().len(), 2);
    }

    #[test]
    fn window_parse_and_days() {
        let w: TimeWindow = "2021-03-01..2021-03-07".parse().unwrap();
        assert_eq!(w.len_days(), 7);
        assert_eq!(w.days().last(), Some(d("2021-03-07")));
        assert!("2021-03-07..2021-03-01".parse::<TimeWindow>().is_err());
        assert_eq!(TimeWindow::ending_at(d("2021-03-07"), 7), w);
    }
}
