use std::sync::OnceLock;

use chrono::NaiveDate;
use regex::Regex;
use thiserror::Error;

use crate::qlang::{AnswerType, AnswerValue, Item};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("cannot read a {expected} answer: {reason}")]
pub struct ParseFailure {
    pub expected: AnswerType,
    pub reason: String,
}

fn number_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| {
        Regex::new(r"[-+]?(?:\d{1,3}(?:,\d{3})+|\d+)(?:\.\d+)?|[-+]?\.\d+").expect("valid regex")
    })
}

fn whole_number_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| {
        Regex::new(r"^[-+]?(?:\d{1,3}(?:,\d{3})+|\d+)(?:\.\d+)?\s*(?:%|[A-Za-z][A-Za-z/ ]*)?$|^[-+]?\.\d+$")
            .expect("valid regex")
    })
}

fn answer_line_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"(?i)answer\s*:\s*(.*)$").expect("valid regex"))
}

fn date_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"\b\d{4}-\d{2}-\d{2}\b").expect("valid regex"))
}

fn to_f64(token: &str) -> Option<f64> {
    token.replace(',', "").parse().ok().filter(|v: &f64| v.is_finite())
}

/// First number in `s`, with thousands separators and trailing units
/// ignored. Dates are not numbers.
pub fn parse_number(s: &str) -> Option<f64> {
    let s = s.trim();
    if date_re().is_match(s) {
        return None;
    }
    number_re().find(s).and_then(|m| to_f64(m.as_str()))
}

fn clean(s: &str) -> &str {
    s.trim()
        .trim_matches(|c: char| matches!(c, '*' | '`' | '"' | '\''))
        .trim()
        .trim_end_matches('.')
        .trim()
}

fn parse_yes_no(s: &str) -> Option<bool> {
    let word: String = clean(s)
        .chars()
        .take_while(|c| c.is_alphabetic())
        .collect::<String>()
        .to_lowercase();
    match word.as_str() {
        "yes" | "true" => Some(true),
        "no" | "false" => Some(false),
        _ => None,
    }
}

fn parse_item(s: &str) -> Item {
    let s = clean(s);
    if let Ok(d) = s.parse::<NaiveDate>() {
        return Item::Date(d);
    }
    if whole_number_re().is_match(s) {
        if let Some(v) = number_re().find(s).and_then(|m| to_f64(m.as_str())) {
            return Item::Number(v);
        }
    }
    Item::Text(s.to_string())
}

fn parse_as(body: &str, expected: AnswerType) -> Result<AnswerValue, String> {
    let body = clean(body);
    if body.is_empty() {
        return Err("empty answer".into());
    }
    match expected {
        AnswerType::YesNo => parse_yes_no(body)
            .map(AnswerValue::YesNo)
            .ok_or_else(|| format!("{body:?} is not yes/no")),
        AnswerType::Number => parse_number(body)
            .map(AnswerValue::Number)
            .ok_or_else(|| format!("{body:?} has no number")),
        AnswerType::Text => Ok(AnswerValue::Text(body.to_string())),
        AnswerType::Pair | AnswerType::ListOf => {
            let mut items: Vec<Item> = body
                .split(';')
                .map(str::trim)
                .filter(|p| !p.is_empty())
                .map(parse_item)
                .collect();
            match (expected, items.len()) {
                (_, 0) => Err("no items".into()),
                (AnswerType::Pair, 2) => {
                    let b = items.pop().expect("two");
                    let a = items.pop().expect("two");
                    Ok(AnswerValue::Pair(a, b))
                }
                _ => Ok(AnswerValue::ListOf(items)),
            }
        }
    }
}

fn fallback(text: &str, expected: AnswerType) -> Option<AnswerValue> {
    match expected {
        AnswerType::Number => {
            let last = number_re()
                .find_iter(&date_re().replace_all(text, " "))
                .filter_map(|m| to_f64(m.as_str()))
                .last();
            last.map(AnswerValue::Number)
        }
        AnswerType::YesNo => text
            .split(|c: char| !c.is_alphanumeric())
            .rev()
            .find_map(parse_yes_no)
            .map(AnswerValue::YesNo),
        AnswerType::Text => text
            .lines()
            .rev()
            .map(clean)
            .find(|l| !l.is_empty())
            .map(|l| AnswerValue::Text(l.to_string())),
        AnswerType::Pair | AnswerType::ListOf => text
            .lines()
            .rev()
            .find(|l| l.contains(';'))
            .and_then(|l| parse_as(l, expected).ok()),
    }
}

/// Reads the final answer from a model reply: the last `ANSWER:` line if
/// there is one, otherwise the last value of the expected type.
pub fn parse_answer(raw: &str, expected: AnswerType) -> Result<AnswerValue, ParseFailure> {
    let fail = |reason: String| ParseFailure { expected, reason };
    let last = raw
        .lines()
        .rev()
        .find_map(|l| answer_line_re().captures(l).map(|c| c[1].to_string()));
    match last {
        Some(body) => parse_as(&body, expected).map_err(fail),
        None => fallback(raw, expected).ok_or_else(|| fail("no ANSWER line and no usable value".into())),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn answer_line_wins() {
        let raw = "Thinking about 12 and 30...\nANSWER: 42\n";
        assert_eq!(parse_answer(raw, AnswerType::Number).unwrap(), AnswerValue::Number(42.0));
        let two = "ANSWER: 1\nwait, recount\nAnswer: 2";
        assert_eq!(parse_answer(two, AnswerType::Number).unwrap(), AnswerValue::Number(2.0));
    }

    #[test]
    fn yes_no_forms() {
        for (s, want) in [("ANSWER: yes", true), ("ANSWER: No.", false), ("answer: TRUE", true), ("ANSWER: **false**", false)] {
            assert_eq!(parse_answer(s, AnswerType::YesNo).unwrap(), AnswerValue::YesNo(want), "{s}");
        }
        assert!(parse_answer("ANSWER: maybe", AnswerType::YesNo).is_err());
    }

    #[test]
    fn numbers_with_units_and_separators() {
        assert_eq!(parse_answer("ANSWER: 1,234.5 steps", AnswerType::Number).unwrap(), AnswerValue::Number(1234.5));
        assert_eq!(parse_answer("ANSWER: -3 min", AnswerType::Number).unwrap(), AnswerValue::Number(-3.0));
        assert_eq!(parse_answer("ANSWER: about 7.25%", AnswerType::Number).unwrap(), AnswerValue::Number(7.25));
    }

    #[test]
    fn lists_split_on_semicolons() {
        assert_eq!(
            parse_answer("ANSWER: A; B; C", AnswerType::ListOf).unwrap(),
            AnswerValue::ListOf(vec![Item::Text("A".into()), Item::Text("B".into()), Item::Text("C".into())])
        );
        let d: NaiveDate = "2021-03-04".parse().unwrap();
        assert_eq!(
            parse_answer("ANSWER: 2021-03-04; 420 minutes", AnswerType::Pair).unwrap(),
            AnswerValue::Pair(Item::Date(d), Item::Number(420.0))
        );
        assert_eq!(
            parse_answer("ANSWER: u001; u002", AnswerType::Pair).unwrap(),
            AnswerValue::Pair(Item::Text("u001".into()), Item::Text("u002".into()))
        );
    }

    #[test]
    fn fallback_without_answer_line() {
        assert_eq!(parse_answer("The total is 17 and then 18.", AnswerType::Number).unwrap(), AnswerValue::Number(18.0));
        assert_eq!(parse_answer("I think yes, honestly.", AnswerType::YesNo).unwrap(), AnswerValue::YesNo(true));
        assert_eq!(parse_answer("on 2021-03-04 you slept 7", AnswerType::Number).unwrap(), AnswerValue::Number(7.0));
        assert!(parse_answer("", AnswerType::Text).is_err());
        assert!(parse_answer("nothing here", AnswerType::Number).is_err());
    }

    #[test]
    fn parse_never_panics_on_junk() {
        for s in ["ANSWER:", "ANSWER: ;;;", "\u{0}", "ANSWER: ,,,", "answer : -", "ANSWER: .5e"] {
            for t in AnswerType::ALL {
                let _ = parse_answer(s, t);
            }
        }
    }
}
