//! Seeded synthetic lifelog cohorts.
//!
//! Every numeric value is an integer (minutes, steps, kcal, 1-10 scores),
//! so sums and means are exact in double precision. Each user's series is
//! generated around a per-user target mean drawn from the configured range,
//! then nudged by unit steps so the realized mean lands within `0.5 / n` of
//! the target.

use chrono::{Duration, NaiveDate, NaiveTime};
use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::registry::{names, registry};
use super::{align, AlignedDataset, DailyMetric, DomainTag, EventRecord, LifelogError, RecordValue, UserId};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Range {
    pub lo: f64,
    pub hi: f64,
}

impl Range {
    pub const fn new(lo: f64, hi: f64) -> Self {
        Self { lo, hi }
    }

    fn sample(&self, rng: &mut ChaCha8Rng) -> f64 {
        if self.hi <= self.lo {
            self.lo
        } else {
            rng.gen_range(self.lo..=self.hi)
        }
    }

    /// Target means are drawn one unit inside the range so rounding cannot
    /// push a realized mean past an edge.
    fn sample_inner(&self, rng: &mut ChaCha8Rng) -> f64 {
        Range::new(self.lo + 1.0, self.hi - 1.0).sample(rng)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SleepParams {
    pub mean_minutes: Range,
    pub daily_sd: f64,
    pub deep_fraction: Range,
    pub anomaly_rate: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActivityParams {
    pub mean_steps: Range,
    pub steps_sd: f64,
    pub mean_total_minutes: Range,
    pub total_sd: f64,
    pub aerobic_fraction: Range,
    pub mean_sedentary_minutes: Range,
    pub sedentary_sd: f64,
    pub anomaly_rate: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DietParams {
    pub mean_calories: Range,
    pub calories_sd: f64,
    pub categories: Vec<String>,
    pub meals_per_day: (u32, u32),
    pub anomaly_rate: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmotionParams {
    pub mean_emotion: Range,
    pub mean_stress: Range,
    pub daily_sd: f64,
    pub anomaly_rate: f64,
}

/// Configuration of a synthetic cohort.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    pub seed: u64,
    pub n_users: usize,
    pub n_days: usize,
    pub start_date: NaiveDate,
    /// Fraction of days per (user, domain) without any record. At most 0.1.
    pub missing_rate: f64,
    pub sleep: SleepParams,
    pub activity: ActivityParams,
    pub diet: DietParams,
    pub emotion: EmotionParams,
}

impl SynthSpec {
    pub fn new(seed: u64, n_users: usize, n_days: usize) -> Self {
        Self {
            seed,
            n_users,
            n_days,
            start_date: NaiveDate::from_ymd_opt(2021, 3, 1).expect("valid date"),
            missing_rate: 0.05,
            sleep: SleepParams {
                mean_minutes: Range::new(360.0, 480.0),
                daily_sd: 40.0,
                deep_fraction: Range::new(0.15, 0.25),
                anomaly_rate: 0.05,
            },
            activity: ActivityParams {
                mean_steps: Range::new(4000.0, 12000.0),
                steps_sd: 1800.0,
                mean_total_minutes: Range::new(30.0, 120.0),
                total_sd: 20.0,
                aerobic_fraction: Range::new(0.3, 0.7),
                mean_sedentary_minutes: Range::new(420.0, 720.0),
                sedentary_sd: 60.0,
                anomaly_rate: 0.05,
            },
            diet: DietParams {
                mean_calories: Range::new(1700.0, 2600.0),
                calories_sd: 250.0,
                categories: [
                    "balanced",
                    "fast_food",
                    "high_carb",
                    "high_fat",
                    "high_protein",
                    "vegetarian",
                ]
                .into_iter()
                .map(String::from)
                .collect(),
                meals_per_day: (2, 4),
                anomaly_rate: 0.05,
            },
            emotion: EmotionParams {
                mean_emotion: Range::new(4.0, 8.0),
                mean_stress: Range::new(3.0, 7.0),
                daily_sd: 1.2,
                anomaly_rate: 0.05,
            },
        }
    }

    pub fn validate(&self) -> Result<(), LifelogError> {
        let bad = |m: &str| Err(LifelogError::InvalidSpec(m.to_string()));
        if self.n_users == 0 {
            return bad("n_users must be positive");
        }
        if self.n_days == 0 {
            return bad("n_days must be positive");
        }
        if !(0.0..=0.1).contains(&self.missing_rate) {
            return bad("missing_rate must lie in [0, 0.1]");
        }
        let rates = [
            self.sleep.anomaly_rate,
            self.activity.anomaly_rate,
            self.diet.anomaly_rate,
            self.emotion.anomaly_rate,
        ];
        if rates.iter().any(|r| !(0.0..=1.0).contains(r)) {
            return bad("anomaly rates must lie in [0, 1]");
        }
        let ranges = [
            self.sleep.mean_minutes,
            self.activity.mean_steps,
            self.activity.mean_total_minutes,
            self.activity.mean_sedentary_minutes,
            self.diet.mean_calories,
            self.emotion.mean_emotion,
            self.emotion.mean_stress,
        ];
        if ranges.iter().any(|r| r.hi - r.lo < 2.0) {
            return bad("mean ranges must be at least 2 units wide");
        }
        if self.diet.categories.is_empty() {
            return bad("at least one diet category required");
        }
        let (lo, hi) = self.diet.meals_per_day;
        if lo == 0 || lo > hi {
            return bad("meals_per_day must satisfy 1 <= lo <= hi");
        }
        Ok(())
    }

    pub fn end_date(&self) -> NaiveDate {
        self.start_date + Duration::days(self.n_days as i64 - 1)
    }
}

/// Integer series around `target` with Gaussian noise and rare anomalies,
/// corrected so its sum equals `round(target * n)` where bounds allow.
fn integer_series(
    rng: &mut ChaCha8Rng,
    n: usize,
    target: Range,
    sd: f64,
    anomaly_rate: f64,
    anomaly_shift: f64,
    bounds: (f64, f64),
) -> Vec<f64> {
    let target = target.sample_inner(rng);
    if n == 0 {
        return Vec::new();
    }
    let noise = Normal::new(0.0, sd.max(1e-9)).expect("finite sd");
    let mut values: Vec<f64> = (0..n)
        .map(|_| {
            let mut v = target + noise.sample(rng);
            if rng.gen_bool(anomaly_rate) {
                v += anomaly_shift;
            }
            v.round().clamp(bounds.0, bounds.1)
        })
        .collect();
    let wanted = (target * n as f64).round();
    let mut diff = wanted - values.iter().sum::<f64>();
    let mut stalled = 0;
    let mut i = rng.gen_range(0..n);
    while diff != 0.0 && stalled < n {
        let step = diff.signum() * (diff.abs() / n as f64).ceil();
        let next = (values[i] + step).clamp(bounds.0, bounds.1);
        let moved = next - values[i];
        if moved == 0.0 {
            stalled += 1;
        } else {
            stalled = 0;
            values[i] = next;
            diff -= moved;
        }
        i = (i + 1) % n;
    }
    values
}

fn bounds_of(metric: &str) -> (f64, f64) {
    let spec = registry().get(metric).expect("registered metric");
    (spec.min.unwrap_or(0.0), spec.max.unwrap_or(f64::MAX))
}

/// Sorted day indices on which the domain has data.
fn present_days(rng: &mut ChaCha8Rng, n_days: usize, missing_rate: f64) -> Vec<usize> {
    let missing = (n_days as f64 * missing_rate).floor() as usize;
    let mut absent: Vec<usize> = sample(rng, n_days, missing).into_vec();
    absent.sort_unstable();
    (0..n_days).filter(|d| absent.binary_search(d).is_err()).collect()
}

struct Builder<'a> {
    user: UserId,
    spec: &'a SynthSpec,
    daily: Vec<DailyMetric>,
    events: Vec<EventRecord>,
}

impl Builder<'_> {
    fn date(&self, day: usize) -> NaiveDate {
        self.spec.start_date + Duration::days(day as i64)
    }

    fn push_daily(&mut self, domain: DomainTag, day: usize, metric: &str, value: f64) {
        let unit = registry().get(metric).expect("registered").unit.clone();
        self.daily.push(DailyMetric {
            user: self.user.clone(),
            domain,
            date: self.date(day),
            metric: metric.to_string(),
            value: RecordValue::Number(value),
            unit,
        });
    }

    fn push_event(
        &mut self,
        domain: DomainTag,
        day: usize,
        at: NaiveTime,
        minutes: Option<i64>,
        metric: &str,
        value: RecordValue,
    ) {
        let unit = registry().get(metric).expect("registered").unit.clone();
        let start = self.date(day).and_time(at).and_utc();
        self.events.push(EventRecord {
            user: self.user.clone(),
            domain,
            start,
            end: minutes.map(|m| start + Duration::minutes(m)),
            metric: metric.to_string(),
            value,
            unit,
        });
    }
}

fn minute_of_day(rng: &mut ChaCha8Rng, from_hour: u32, to_hour: u32) -> NaiveTime {
    let m = rng.gen_range(from_hour * 60..to_hour * 60);
    NaiveTime::from_hms_opt(m / 60, m % 60, 0).expect("valid time")
}

fn synth_sleep(b: &mut Builder<'_>, rng: &mut ChaCha8Rng) {
    let p = &b.spec.sleep;
    let days = present_days(rng, b.spec.n_days, b.spec.missing_rate);
    let sleep = integer_series(
        rng,
        days.len(),
        p.mean_minutes,
        p.daily_sd,
        p.anomaly_rate,
        -150.0,
        bounds_of(names::SLEEP_MINUTES),
    );
    let frac = p.deep_fraction.sample(rng);
    let jitter = Normal::new(0.0, 8.0).expect("sd");
    for (&day, &minutes) in days.iter().zip(&sleep) {
        let deep = (minutes * frac + jitter.sample(rng)).round().clamp(0.0, minutes);
        b.push_daily(DomainTag::Sleep, day, names::SLEEP_MINUTES, minutes);
        b.push_daily(DomainTag::Sleep, day, names::DEEP_SLEEP_MINUTES, deep);
    }
}

fn synth_activity(b: &mut Builder<'_>, rng: &mut ChaCha8Rng) {
    let p = b.spec.activity.clone();
    let days = present_days(rng, b.spec.n_days, b.spec.missing_rate);
    let n = days.len();
    let steps = integer_series(
        rng,
        n,
        p.mean_steps,
        p.steps_sd,
        p.anomaly_rate,
        -3000.0,
        bounds_of(names::STEPS),
    );
    let total = integer_series(
        rng,
        n,
        p.mean_total_minutes,
        p.total_sd,
        p.anomaly_rate,
        -25.0,
        bounds_of(names::TOTAL_ACTIVITY_MINUTES),
    );
    let sedentary = integer_series(
        rng,
        n,
        p.mean_sedentary_minutes,
        p.sedentary_sd,
        p.anomaly_rate,
        180.0,
        bounds_of(names::SEDENTARY_MINUTES),
    );
    let aerobic_frac = p.aerobic_fraction.sample(rng);
    for (i, &day) in days.iter().enumerate() {
        let total_min = total[i];
        let aerobic = (total_min * aerobic_frac * rng.gen_range(0.8..1.2))
            .round()
            .clamp(0.0, total_min);
        b.push_daily(DomainTag::Activity, day, names::STEPS, steps[i]);
        b.push_daily(DomainTag::Activity, day, names::AEROBIC_MINUTES, aerobic);
        b.push_daily(DomainTag::Activity, day, names::SEDENTARY_MINUTES, sedentary[i]);
        b.push_daily(DomainTag::Activity, day, names::TOTAL_ACTIVITY_MINUTES, total_min);

        // Split the day's total into sessions whose minutes sum exactly.
        let total_int = total_min as i64;
        if total_int == 0 {
            continue;
        }
        let sessions = rng.gen_range(1..=3).min(total_int) as usize;
        let mut cuts: Vec<i64> = sample(rng, (total_int - 1) as usize, sessions - 1)
            .into_iter()
            .map(|c| c as i64 + 1)
            .collect();
        cuts.sort_unstable();
        cuts.push(total_int);
        let mut prev = 0;
        let slots = [(6, 9), (11, 15), (17, 21)];
        for (k, cut) in cuts.into_iter().enumerate() {
            let len = cut - prev;
            prev = cut;
            let (h0, h1) = slots[k % slots.len()];
            let at = minute_of_day(rng, h0, h1);
            b.push_event(
                DomainTag::Activity,
                day,
                at,
                Some(len),
                names::ACTIVITY_SESSION,
                RecordValue::Number(len as f64),
            );
        }
    }
}

fn synth_diet(b: &mut Builder<'_>, rng: &mut ChaCha8Rng) {
    let p = b.spec.diet.clone();
    let days = present_days(rng, b.spec.n_days, b.spec.missing_rate);
    let calories = integer_series(
        rng,
        days.len(),
        p.mean_calories,
        p.calories_sd,
        p.anomaly_rate,
        900.0,
        bounds_of(names::CALORIES),
    );
    // Per-user taste profile; squared uniforms give a clear favourite.
    let weights: Vec<f64> = p
        .categories
        .iter()
        .map(|_| rng.gen_range(0.2f64..1.0).powi(3))
        .collect();
    let total_w: f64 = weights.iter().sum();
    let slots = [(7, 9), (12, 14), (16, 17), (19, 21)];
    for (i, &day) in days.iter().enumerate() {
        b.push_daily(DomainTag::Diet, day, names::CALORIES, calories[i]);
        let meals = rng.gen_range(p.meals_per_day.0..=p.meals_per_day.1) as usize;
        for k in 0..meals {
            let mut x = rng.gen_range(0.0..total_w);
            let mut pick = p.categories.len() - 1;
            for (c, w) in weights.iter().enumerate() {
                if x < *w {
                    pick = c;
                    break;
                }
                x -= w;
            }
            let (h0, h1) = slots[k % slots.len()];
            let at = minute_of_day(rng, h0, h1);
            b.push_event(
                DomainTag::Diet,
                day,
                at,
                None,
                names::MEAL_CATEGORY,
                RecordValue::Category(p.categories[pick].clone()),
            );
        }
    }
}

fn synth_emotion(b: &mut Builder<'_>, rng: &mut ChaCha8Rng) {
    let p = b.spec.emotion.clone();
    let days = present_days(rng, b.spec.n_days, b.spec.missing_rate);
    let emotion = integer_series(
        rng,
        days.len(),
        p.mean_emotion,
        p.daily_sd,
        p.anomaly_rate,
        -3.0,
        bounds_of(names::EMOTION_SCORE),
    );
    let stress = integer_series(
        rng,
        days.len(),
        p.mean_stress,
        p.daily_sd,
        p.anomaly_rate,
        3.0,
        bounds_of(names::STRESS_SCORE),
    );
    for (i, &day) in days.iter().enumerate() {
        b.push_daily(DomainTag::Emotion, day, names::EMOTION_SCORE, emotion[i]);
        b.push_daily(DomainTag::Emotion, day, names::STRESS_SCORE, stress[i]);
    }
}

/// Formats user ids as `u001`, `u002`, ... wide enough for the cohort.
pub fn user_id(index: usize, n_users: usize) -> UserId {
    let width = n_users.to_string().len().max(3);
    UserId::new(format!("u{:0width$}", index + 1)).expect("non-empty id")
}

/// Generates a cohort. Pure function of `spec`.
pub fn synthesize_dataset(spec: &SynthSpec) -> Result<AlignedDataset, LifelogError> {
    spec.validate()?;
    let mut master = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut daily = Vec::new();
    let mut events = Vec::new();
    for u in 0..spec.n_users {
        let mut rng = ChaCha8Rng::seed_from_u64(master.gen());
        let mut b = Builder {
            user: user_id(u, spec.n_users),
            spec,
            daily: Vec::new(),
            events: Vec::new(),
        };
        synth_sleep(&mut b, &mut rng);
        synth_activity(&mut b, &mut rng);
        synth_diet(&mut b, &mut rng);
        synth_emotion(&mut b, &mut rng);
        daily.extend(b.daily);
        events.extend(b.events);
    }
    let ds = align(events, daily, Some(spec.end_date()))?;
    debug_assert_eq!(ds.date_span().start, spec.start_date);
    Ok(ds)
}
