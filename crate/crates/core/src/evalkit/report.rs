use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};

use super::{EvalError, Verdict};
use crate::benchgen::QAInstance;

fn pct(num: usize, den: usize) -> Option<f64> {
    (den > 0).then(|| (num as f64 * 10000.0 / den as f64).round() / 100.0)
}

/// Counts and percentages for one slice of the evaluation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Rates {
    pub n: usize,
    pub correct: usize,
    /// Instances that carried an SQL stage.
    pub sql_attempts: usize,
    pub valid: usize,
    pub ex: usize,
    pub correct_and_ex: usize,
    pub parse_failures: usize,
    pub acc: f64,
    pub va: Option<f64>,
    /// Share of valid queries whose result held the evidence.
    pub ex_rate: Option<f64>,
    /// `None` when no query held the evidence.
    pub acc_given_ex: Option<f64>,
}

impl Rates {
    fn from_verdicts<'a>(vs: impl Iterator<Item = &'a Verdict>) -> Self {
        let mut r = Rates {
            n: 0,
            correct: 0,
            sql_attempts: 0,
            valid: 0,
            ex: 0,
            correct_and_ex: 0,
            parse_failures: 0,
            acc: 0.0,
            va: None,
            ex_rate: None,
            acc_given_ex: None,
        };
        for v in vs {
            r.n += 1;
            r.correct += v.acc as usize;
            r.parse_failures += !v.parsed as usize;
            if let Some(va) = v.va {
                r.sql_attempts += 1;
                r.valid += va as usize;
            }
            if v.ex == Some(true) {
                r.ex += 1;
                r.correct_and_ex += v.acc as usize;
            }
        }
        r.acc = pct(r.correct, r.n).unwrap_or(0.0);
        if r.sql_attempts > 0 {
            r.va = pct(r.valid, r.sql_attempts);
            r.ex_rate = pct(r.ex, r.valid).or(Some(0.0));
            r.acc_given_ex = pct(r.correct_and_ex, r.ex);
        }
        r
    }

    fn check(&self, label: &str) -> Result<(), EvalError> {
        let bad = |m: &str| Err(EvalError::Inconsistent(format!("{label}: {m}")));
        if self.correct > self.n || self.sql_attempts > self.n {
            return bad("counts exceed n");
        }
        if self.ex > self.valid || self.valid > self.sql_attempts {
            return bad("ex <= valid <= attempts violated");
        }
        if self.correct_and_ex > self.correct.min(self.ex) {
            return bad("correct-and-ex exceeds correct or ex");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportMeta {
    pub n_instances: usize,
    /// How EX was decided.
    pub ex_rule: String,
    pub small_int_limit: f64,
    pub multi_item_rule: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub meta: ReportMeta,
    pub overall: Rates,
    pub by_task_type: BTreeMap<String, Rates>,
    pub by_answer_type: BTreeMap<String, Rates>,
    pub by_scope: BTreeMap<String, Rates>,
    pub by_n_domains: BTreeMap<String, Rates>,
}

fn facet<'a>(
    pairs: &[(&'a Verdict, &'a QAInstance)],
    key: impl Fn(&QAInstance) -> String,
) -> BTreeMap<String, Rates> {
    let mut groups: BTreeMap<String, Vec<&Verdict>> = BTreeMap::new();
    for (v, i) in pairs {
        groups.entry(key(i)).or_default().push(v);
    }
    groups
        .into_iter()
        .map(|(k, vs)| (k, Rates::from_verdicts(vs.into_iter())))
        .collect()
}

/// Folds verdicts into overall and faceted rates.
pub fn aggregate_report(verdicts: &[Verdict], instances: &[QAInstance]) -> Result<Report, EvalError> {
    if verdicts.is_empty() {
        return Err(EvalError::EmptyEvaluation);
    }
    let by_id: HashMap<&str, &QAInstance> =
        instances.iter().map(|i| (i.instance_id.as_str(), i)).collect();
    let pairs: Vec<(&Verdict, &QAInstance)> = verdicts
        .iter()
        .map(|v| {
            by_id
                .get(v.instance_id.as_str())
                .map(|i| (v, *i))
                .ok_or_else(|| EvalError::UnknownInstance(v.instance_id.clone()))
        })
        .collect::<Result<_, _>>()?;

    let report = Report {
        meta: ReportMeta {
            n_instances: verdicts.len(),
            ex_rule: "membership: every evidence value appears among result cells within the accuracy tolerance".into(),
            small_int_limit: super::SMALL_INT_LIMIT,
            multi_item_rule: "same cardinality, order-insensitive maximum matching".into(),
        },
        overall: Rates::from_verdicts(verdicts.iter()),
        by_task_type: facet(&pairs, |i| i.task_type.to_string()),
        by_answer_type: facet(&pairs, |i| i.answer_type.to_string()),
        by_scope: facet(&pairs, |i| i.scope.as_str().to_string()),
        by_n_domains: facet(&pairs, |i| i.n_domains().to_string()),
    };
    report.check()?;
    Ok(report)
}

impl Report {
    pub fn facets(&self) -> [(&'static str, &BTreeMap<String, Rates>); 4] {
        [
            ("task_type", &self.by_task_type),
            ("answer_type", &self.by_answer_type),
            ("scope", &self.by_scope),
            ("n_domains", &self.by_n_domains),
        ]
    }

    /// Every facet must partition the overall counts.
    pub fn check(&self) -> Result<(), EvalError> {
        self.overall.check("overall")?;
        for (name, table) in self.facets() {
            let mut sum = [0usize; 5];
            for (k, r) in table {
                r.check(&format!("{name}={k}"))?;
                for (s, x) in sum.iter_mut().zip([r.n, r.correct, r.valid, r.ex, r.correct_and_ex]) {
                    *s += x;
                }
            }
            let o = &self.overall;
            if sum != [o.n, o.correct, o.valid, o.ex, o.correct_and_ex] {
                return Err(EvalError::Inconsistent(format!("{name} facets do not sum to overall")));
            }
        }
        Ok(())
    }

    /// One CSV table with a row per facet value.
    pub fn facet_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        let opt = |v: Option<f64>| v.map(|x| format!("{x:.2}")).unwrap_or_default();
        w.write_record(["facet", "value", "n", "acc", "va", "ex", "acc_given_ex"])
            .expect("in-memory write");
        let overall = [("overall", BTreeMap::from([("all".to_string(), self.overall.clone())]))];
        let rows = overall
            .iter()
            .map(|(n, t)| (*n, t))
            .chain(self.facets());
        for (name, table) in rows {
            for (k, r) in table {
                w.write_record([
                    name.to_string(),
                    k.clone(),
                    r.n.to_string(),
                    format!("{:.2}", r.acc),
                    opt(r.va),
                    opt(r.ex_rate),
                    opt(r.acc_given_ex),
                ])
                .expect("in-memory write");
            }
        }
        String::from_utf8(w.into_inner().expect("flush")).expect("utf8")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn v(id: &str, acc: bool, va: Option<bool>, ex: Option<bool>) -> Verdict {
        Verdict {
            instance_id: id.into(),
            acc,
            va,
            ex,
            parsed: true,
        }
    }

    #[test]
    fn percentages_round_to_two_places() {
        let vs: Vec<Verdict> = (0..3).map(|i| v(&i.to_string(), i == 0, None, None)).collect();
        let r = Rates::from_verdicts(vs.iter());
        assert_eq!(r.acc, 33.33);
        assert_eq!(r.va, None);
        let vs: Vec<Verdict> = (0..10).map(|i| v(&i.to_string(), i < 4, None, None)).collect();
        assert_eq!(Rates::from_verdicts(vs.iter()).acc, 40.0);
    }

    #[test]
    fn acc_given_ex_undefined_without_ex() {
        let vs = [v("a", true, Some(true), Some(false)), v("b", false, Some(false), None)];
        let r = Rates::from_verdicts(vs.iter());
        assert_eq!(r.va, Some(50.0));
        assert_eq!(r.ex_rate, Some(0.0));
        assert_eq!(r.acc_given_ex, None);
    }

    #[test]
    fn staged_rates() {
        let vs = [
            v("a", true, Some(true), Some(true)),
            v("b", false, Some(true), Some(true)),
            v("c", true, Some(true), Some(false)),
            v("d", false, Some(false), None),
        ];
        let r = Rates::from_verdicts(vs.iter());
        assert_eq!((r.va, r.ex_rate, r.acc_given_ex), (Some(75.0), Some(66.67), Some(50.0)));
        assert!(r.check("t").is_ok());
    }
}
