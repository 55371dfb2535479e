//! The fixed metric registry.
//!
//! The registry is shipped as `data/metrics.csv` and compiled into the
//! binary. Every record, template and SQL query refers to metrics by the
//! dotted names listed there.

use std::collections::BTreeMap;
use std::sync::OnceLock;

use serde::{Deserialize, Serialize};

use super::DomainTag;

/// Registry version, bumped whenever `data/metrics.csv` changes.
pub const REGISTRY_VERSION: &str = "1";

const REGISTRY_CSV: &str = include_str!("../../data/metrics.csv");

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Granularity {
    Daily,
    Event,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ValueKind {
    Numeric,
    Categorical,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricSpec {
    pub name: String,
    pub domain: DomainTag,
    pub granularity: Granularity,
    pub unit: String,
    pub kind: ValueKind,
    /// Human-readable noun phrase used when rendering questions.
    pub label: String,
    pub min: Option<f64>,
    pub max: Option<f64>,
}

#[derive(Debug)]
pub struct MetricRegistry {
    metrics: BTreeMap<String, MetricSpec>,
    order: Vec<String>,
}

impl MetricRegistry {
    fn parse(text: &str) -> Self {
        let mut reader = csv::Reader::from_reader(text.as_bytes());
        let mut metrics = BTreeMap::new();
        let mut order = Vec::new();
        for row in reader.records() {
            let row = row.expect("metric registry is well-formed");
            let opt = |s: &str| {
                if s.is_empty() {
                    None
                } else {
                    Some(s.parse::<f64>().expect("numeric bound"))
                }
            };
            let spec = MetricSpec {
                name: row[0].to_string(),
                domain: row[1].parse().expect("registry domain"),
                granularity: match &row[2] {
                    "daily" => Granularity::Daily,
                    "event" => Granularity::Event,
                    other => panic!("bad granularity {other}"),
                },
                unit: row[3].to_string(),
                kind: match &row[4] {
                    "numeric" => ValueKind::Numeric,
                    "categorical" => ValueKind::Categorical,
                    other => panic!("bad value kind {other}"),
                },
                label: row[5].to_string(),
                min: opt(&row[6]),
                max: opt(&row[7]),
            };
            order.push(spec.name.clone());
            metrics.insert(spec.name.clone(), spec);
        }
        Self { metrics, order }
    }

    pub fn get(&self, name: &str) -> Option<&MetricSpec> {
        self.metrics.get(name)
    }

    /// All metrics in file order.
    pub fn iter(&self) -> impl Iterator<Item = &MetricSpec> {
        self.order.iter().map(move |n| &self.metrics[n])
    }

    /// Numeric daily metrics, the ones that form series.
    pub fn daily_numeric(&self) -> impl Iterator<Item = &MetricSpec> {
        self.iter()
            .filter(|m| m.granularity == Granularity::Daily && m.kind == ValueKind::Numeric)
    }

    pub fn daily_in(&self, domain: DomainTag) -> impl Iterator<Item = &MetricSpec> {
        self.daily_numeric().filter(move |m| m.domain == domain)
    }

    pub fn raw_csv(&self) -> &'static str {
        REGISTRY_CSV
    }
}

/// The process-wide registry.
pub fn registry() -> &'static MetricRegistry {
    static REGISTRY: OnceLock<MetricRegistry> = OnceLock::new();
    REGISTRY.get_or_init(|| MetricRegistry::parse(REGISTRY_CSV))
}

pub mod names {
    pub const SLEEP_MINUTES: &str = "sleep.sleep_minutes";
    pub const DEEP_SLEEP_MINUTES: &str = "sleep.deep_sleep_minutes";
    pub const STEPS: &str = "activity.steps";
    pub const AEROBIC_MINUTES: &str = "activity.aerobic_minutes";
    pub const SEDENTARY_MINUTES: &str = "activity.sedentary_minutes";
    pub const TOTAL_ACTIVITY_MINUTES: &str = "activity.total_minutes";
    pub const CALORIES: &str = "diet.calories";
    pub const EMOTION_SCORE: &str = "emotion.emotion_score";
    pub const STRESS_SCORE: &str = "emotion.stress_score";
    pub const ACTIVITY_SESSION: &str = "activity.session_minutes";
    pub const MEAL_CATEGORY: &str = "diet.category";
}
