use std::fmt;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

/// One element of a multi-item answer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "value", rename_all = "snake_case")]
pub enum Item {
    Number(f64),
    Text(String),
    Date(NaiveDate),
}

impl fmt::Display for Item {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Item::Number(v) => write!(f, "{}", format_number(*v)),
            Item::Text(t) => f.write_str(t),
            Item::Date(d) => write!(f, "{d}"),
        }
    }
}

/// Integers print without a fraction; everything else keeps up to 4
/// decimals with trailing zeros trimmed.
pub fn format_number(v: f64) -> String {
    if v.fract() == 0.0 && v.abs() < 1e15 {
        format!("{}", v as i64)
    } else {
        let s = format!("{v:.4}");
        s.trim_end_matches('0').trim_end_matches('.').to_string()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AnswerType {
    YesNo,
    Number,
    Text,
    Pair,
    ListOf,
}

impl AnswerType {
    pub const ALL: [AnswerType; 5] = [
        AnswerType::YesNo,
        AnswerType::Number,
        AnswerType::Text,
        AnswerType::Pair,
        AnswerType::ListOf,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            AnswerType::YesNo => "yes_no",
            AnswerType::Number => "number",
            AnswerType::Text => "text",
            AnswerType::Pair => "pair",
            AnswerType::ListOf => "list_of",
        }
    }

    pub fn is_multi_item(self) -> bool {
        matches!(self, AnswerType::Pair | AnswerType::ListOf)
    }
}

impl fmt::Display for AnswerType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// A typed answer: ground truth or parsed prediction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", content = "value", rename_all = "snake_case")]
pub enum AnswerValue {
    YesNo(bool),
    Number(f64),
    Text(String),
    Pair(Item, Item),
    ListOf(Vec<Item>),
}

impl AnswerValue {
    pub fn answer_type(&self) -> AnswerType {
        match self {
            AnswerValue::YesNo(_) => AnswerType::YesNo,
            AnswerValue::Number(_) => AnswerType::Number,
            AnswerValue::Text(_) => AnswerType::Text,
            AnswerValue::Pair(..) => AnswerType::Pair,
            AnswerValue::ListOf(_) => AnswerType::ListOf,
        }
    }

    /// Builds the answer for a list of items: one item is a scalar, two a
    /// pair, three or more a list. Empty lists have no answer.
    pub fn from_items(mut items: Vec<Item>) -> Option<AnswerValue> {
        match items.len() {
            0 => None,
            1 => Some(match items.pop().expect("one item") {
                Item::Number(v) => AnswerValue::Number(v),
                Item::Text(t) => AnswerValue::Text(t),
                Item::Date(d) => AnswerValue::Text(d.to_string()),
            }),
            2 => {
                let b = items.pop().expect("two items");
                let a = items.pop().expect("two items");
                Some(AnswerValue::Pair(a, b))
            }
            _ => Some(AnswerValue::ListOf(items)),
        }
    }

    /// Items of a multi-item answer, or the scalar as a single item.
    pub fn items(&self) -> Vec<Item> {
        match self {
            AnswerValue::YesNo(b) => vec![Item::Text(if *b { "yes" } else { "no" }.into())],
            AnswerValue::Number(v) => vec![Item::Number(*v)],
            AnswerValue::Text(t) => vec![Item::Text(t.clone())],
            AnswerValue::Pair(a, b) => vec![a.clone(), b.clone()],
            AnswerValue::ListOf(items) => items.clone(),
        }
    }

    pub fn is_well_formed(&self) -> bool {
        match self {
            AnswerValue::Number(v) => v.is_finite(),
            AnswerValue::ListOf(items) => items.len() >= 3,
            _ => true,
        }
    }

    /// Equality used for dual-execution checks: structural, with numbers
    /// compared to `rel` relative tolerance.
    pub fn approx_eq(&self, other: &AnswerValue, rel: f64) -> bool {
        let num = |a: f64, b: f64| {
            a == b || (a - b).abs() <= rel * a.abs().max(b.abs()).max(1e-3)
        };
        let item = |a: &Item, b: &Item| match (a, b) {
            (Item::Number(x), Item::Number(y)) => num(*x, *y),
            _ => a == b,
        };
        match (self, other) {
            (AnswerValue::Number(a), AnswerValue::Number(b)) => num(*a, *b),
            (AnswerValue::Pair(a1, b1), AnswerValue::Pair(a2, b2)) => item(a1, a2) && item(b1, b2),
            (AnswerValue::ListOf(x), AnswerValue::ListOf(y)) => {
                x.len() == y.len() && x.iter().zip(y).all(|(a, b)| item(a, b))
            }
            _ => self == other,
        }
    }

    /// Text shown after `ANSWER:`; list items are `;`-separated.
    pub fn render(&self) -> String {
        match self {
            AnswerValue::YesNo(b) => if *b { "yes" } else { "no" }.to_string(),
            AnswerValue::Number(v) => format_number(*v),
            AnswerValue::Text(t) => t.clone(),
            AnswerValue::Pair(a, b) => format!("{a}; {b}"),
            AnswerValue::ListOf(items) => items
                .iter()
                .map(|i| i.to_string())
                .collect::<Vec<_>>()
                .join("; "),
        }
    }
}

impl fmt::Display for AnswerValue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.render())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn from_items_cardinality() {
        assert_eq!(AnswerValue::from_items(vec![]), None);
        assert_eq!(
            AnswerValue::from_items(vec![Item::Number(3.0)]),
            Some(AnswerValue::Number(3.0))
        );
        let d: NaiveDate = "2021-03-05".parse().unwrap();
        assert_eq!(
            AnswerValue::from_items(vec![Item::Date(d)]),
            Some(AnswerValue::Text("2021-03-05".into()))
        );
        assert_eq!(
            AnswerValue::from_items(vec![Item::Number(1.0), Item::Text("a".into())])
                .unwrap()
                .answer_type(),
            AnswerType::Pair
        );
        assert_eq!(
            AnswerValue::from_items(vec![Item::Number(1.0); 3]).unwrap().answer_type(),
            AnswerType::ListOf
        );
    }

    #[test]
    fn json_shape() {
        let v = AnswerValue::Pair(Item::Date("2021-03-05".parse().unwrap()), Item::Number(7.0));
        let s = serde_json::to_string(&v).unwrap();
        assert_eq!(
            s,
            r#"{"type":"pair","value":[{"kind":"date","value":"2021-03-05"},{"kind":"number","value":7.0}]}"#
        );
        assert_eq!(serde_json::from_str::<AnswerValue>(&s).unwrap(), v);
    }

    #[test]
    fn approx_eq_is_relative() {
        let a = AnswerValue::Number(1000.0);
        assert!(a.approx_eq(&AnswerValue::Number(1000.0 + 1e-7), 1e-9));
        assert!(!a.approx_eq(&AnswerValue::Number(1000.01), 1e-9));
        assert!(!a.approx_eq(&AnswerValue::Text("1000".into()), 1e-9));
    }

    #[test]
    fn render_numbers() {
        assert_eq!(format_number(420.0), "420");
        assert_eq!(format_number(7.25), "7.25");
        assert_eq!(format_number(1.0 / 3.0), "0.3333");
        assert_eq!(AnswerValue::ListOf(vec![Item::Number(1.0), Item::Text("b".into()), Item::Number(2.5)]).render(), "1; b; 2.5");
    }
}
