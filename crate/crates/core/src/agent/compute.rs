//! Deterministic calculator over named evidence.
//!
//! Grammar:
//! ```text
//! expr    := sum (("<" | "<=" | ">" | ">=" | "==" | "!=") sum)?
//! sum     := product (("+" | "-") product)*
//! product := unary (("*" | "/" | "×" | "÷") unary)*
//! unary   := "-" unary | atom
//! atom    := number | "string" | name | name "(" args ")" | "(" expr ")"
//! ```
//! Numbers are IEEE doubles. Besides arithmetic the functions cover the
//! deterministic operators an answer may need: aggregates, day filters and
//! set algebra, runs, trends, extremes and list assembly.

use std::collections::{BTreeMap, BTreeSet};

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::qlang::{
    aggregate, consecutive_run, dominant_category, format_number, trend_direction, AggFn, Cmp,
    Series, DEFAULT_TREND_EPSILON,
};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ComputeError {
    #[error("undefined name {0:?}")]
    UndefinedName(String),
    #[error("division by zero")]
    DivisionByZero,
    #[error("syntax: {0}")]
    Syntax(String),
    #[error("type: {0}")]
    Type(String),
    #[error("empty input to {0}")]
    Empty(String),
}

/// One retrieved event as the tools report it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EventObs {
    pub date: NaiveDate,
    pub start_ts: String,
    pub metric: String,
    pub value_num: Option<f64>,
    pub category: Option<String>,
}

/// A value held in the intermediate-results table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "value", rename_all = "snake_case")]
pub enum Binding {
    Number(f64),
    Bool(bool),
    Text(String),
    Series(Series),
    Days(Vec<NaiveDate>),
    /// Ranked users with the value they were ranked by.
    Users(Vec<(String, f64)>),
    Events(Vec<EventObs>),
    List(Vec<Binding>),
}

fn number_text(v: f64) -> String {
    if v.fract() == 0.0 && v.abs() < 1e15 {
        format_number(v)
    } else {
        format!("{v}")
    }
}

impl Binding {
    pub fn type_name(&self) -> &'static str {
        match self {
            Binding::Number(_) => "number",
            Binding::Bool(_) => "bool",
            Binding::Text(_) => "text",
            Binding::Series(_) => "series",
            Binding::Days(_) => "days",
            Binding::Users(_) => "users",
            Binding::Events(_) => "events",
            Binding::List(_) => "list",
        }
    }

    /// Text used in prompts. Scalars and lists use the answer syntax
    /// (`;`-separated items); collections are summarized.
    pub fn render(&self) -> String {
        match self {
            Binding::Number(v) => number_text(*v),
            Binding::Bool(b) => if *b { "yes" } else { "no" }.into(),
            Binding::Text(t) => t.clone(),
            Binding::Series(s) => {
                let pts: Vec<String> = s
                    .points
                    .iter()
                    .map(|(d, v)| format!("{d}={}", number_text(*v)))
                    .collect();
                format!("series[{}] {}", s.points.len(), pts.join(", "))
            }
            Binding::Days(d) => {
                let ds: Vec<String> = d.iter().map(|d| d.to_string()).collect();
                format!("days[{}] {}", d.len(), ds.join(", "))
            }
            Binding::Users(u) => u.iter().map(|(u, _)| u.clone()).collect::<Vec<_>>().join("; "),
            Binding::Events(e) => format!("events[{}]", e.len()),
            Binding::List(items) => items.iter().map(|b| b.render()).collect::<Vec<_>>().join("; "),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Num(f64),
    Str(String),
    Ident(String),
    Op(&'static str),
    LParen,
    RParen,
    Comma,
}

fn lex(src: &str) -> Result<Vec<Tok>, ComputeError> {
    let chars: Vec<char> = src.chars().collect();
    let mut out = Vec::new();
    let mut i = 0;
    while i < chars.len() {
        let c = chars[i];
        match c {
            c if c.is_whitespace() => i += 1,
            '(' => {
                out.push(Tok::LParen);
                i += 1;
            }
            ')' => {
                out.push(Tok::RParen);
                i += 1;
            }
            ',' => {
                out.push(Tok::Comma);
                i += 1;
            }
            '+' | '-' | '*' | '/' => {
                out.push(Tok::Op(match c {
                    '+' => "+",
                    '-' => "-",
                    '*' => "*",
                    _ => "/",
                }));
                i += 1;
            }
            '×' => {
                out.push(Tok::Op("*"));
                i += 1;
            }
            '÷' => {
                out.push(Tok::Op("/"));
                i += 1;
            }
            '<' | '>' | '=' | '!' => {
                let two = chars.get(i + 1) == Some(&'=');
                let op = match (c, two) {
                    ('<', true) => "<=",
                    ('<', false) => "<",
                    ('>', true) => ">=",
                    ('>', false) => ">",
                    ('=', true) => "==",
                    ('!', true) => "!=",
                    _ => return Err(ComputeError::Syntax(format!("unexpected {c:?}"))),
                };
                out.push(Tok::Op(op));
                i += if two { 2 } else { 1 };
            }
            '"' | '\'' => {
                let end = chars[i + 1..]
                    .iter()
                    .position(|&x| x == c)
                    .ok_or_else(|| ComputeError::Syntax("unterminated string".into()))?;
                out.push(Tok::Str(chars[i + 1..i + 1 + end].iter().collect()));
                i += end + 2;
            }
            c if c.is_ascii_digit() || c == '.' => {
                let start = i;
                while i < chars.len() && (chars[i].is_ascii_digit() || chars[i] == '.') {
                    i += 1;
                }
                if i < chars.len() && (chars[i] == 'e' || chars[i] == 'E') {
                    let mut j = i + 1;
                    if j < chars.len() && (chars[j] == '+' || chars[j] == '-') {
                        j += 1;
                    }
                    if j < chars.len() && chars[j].is_ascii_digit() {
                        i = j;
                        while i < chars.len() && chars[i].is_ascii_digit() {
                            i += 1;
                        }
                    }
                }
                let text: String = chars[start..i].iter().collect();
                let v = text
                    .parse()
                    .map_err(|_| ComputeError::Syntax(format!("bad number {text:?}")))?;
                out.push(Tok::Num(v));
            }
            c if c.is_alphabetic() || c == '_' => {
                let start = i;
                while i < chars.len() && (chars[i].is_alphanumeric() || chars[i] == '_') {
                    i += 1;
                }
                out.push(Tok::Ident(chars[start..i].iter().collect()));
            }
            other => return Err(ComputeError::Syntax(format!("unexpected {other:?}"))),
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
enum Expr {
    Num(f64),
    Str(String),
    Name(String),
    Neg(Box<Expr>),
    Bin(&'static str, Box<Expr>, Box<Expr>),
    Call(String, Vec<Expr>),
}

struct Parser {
    toks: Vec<Tok>,
    pos: usize,
}

impl Parser {
    fn peek(&self) -> Option<&Tok> {
        self.toks.get(self.pos)
    }

    fn next(&mut self) -> Option<Tok> {
        let t = self.toks.get(self.pos).cloned();
        self.pos += 1;
        t
    }

    fn op_in(&self, ops: &[&str]) -> Option<&'static str> {
        match self.peek() {
            Some(Tok::Op(o)) if ops.contains(o) => Some(o),
            _ => None,
        }
    }

    fn expr(&mut self) -> Result<Expr, ComputeError> {
        let left = self.sum()?;
        if let Some(op) = self.op_in(&["<", "<=", ">", ">=", "==", "!="]) {
            self.pos += 1;
            let right = self.sum()?;
            return Ok(Expr::Bin(op, Box::new(left), Box::new(right)));
        }
        Ok(left)
    }

    fn sum(&mut self) -> Result<Expr, ComputeError> {
        let mut e = self.product()?;
        while let Some(op) = self.op_in(&["+", "-"]) {
            self.pos += 1;
            e = Expr::Bin(op, Box::new(e), Box::new(self.product()?));
        }
        Ok(e)
    }

    fn product(&mut self) -> Result<Expr, ComputeError> {
        let mut e = self.unary()?;
        while let Some(op) = self.op_in(&["*", "/"]) {
            self.pos += 1;
            e = Expr::Bin(op, Box::new(e), Box::new(self.unary()?));
        }
        Ok(e)
    }

    fn unary(&mut self) -> Result<Expr, ComputeError> {
        if self.op_in(&["-"]).is_some() {
            self.pos += 1;
            return Ok(Expr::Neg(Box::new(self.unary()?)));
        }
        self.atom()
    }

    fn atom(&mut self) -> Result<Expr, ComputeError> {
        match self.next() {
            Some(Tok::Num(v)) => Ok(Expr::Num(v)),
            Some(Tok::Str(s)) => Ok(Expr::Str(s)),
            Some(Tok::LParen) => {
                let e = self.expr()?;
                match self.next() {
                    Some(Tok::RParen) => Ok(e),
                    _ => Err(ComputeError::Syntax("expected ')'".into())),
                }
            }
            Some(Tok::Ident(name)) => {
                if self.peek() != Some(&Tok::LParen) {
                    return Ok(Expr::Name(name));
                }
                self.pos += 1;
                let mut args = Vec::new();
                if self.peek() == Some(&Tok::RParen) {
                    self.pos += 1;
                    return Ok(Expr::Call(name, args));
                }
                loop {
                    args.push(self.expr()?);
                    match self.next() {
                        Some(Tok::Comma) => continue,
                        Some(Tok::RParen) => break,
                        _ => return Err(ComputeError::Syntax(format!("bad argument list for {name}"))),
                    }
                }
                Ok(Expr::Call(name, args))
            }
            Some(t) => Err(ComputeError::Syntax(format!("unexpected {t:?}"))),
            None => Err(ComputeError::Syntax("unexpected end of expression".into())),
        }
    }
}

fn parse(src: &str) -> Result<Expr, ComputeError> {
    let mut p = Parser { toks: lex(src)?, pos: 0 };
    let e = p.expr()?;
    if p.pos != p.toks.len() {
        return Err(ComputeError::Syntax(format!("trailing input in {src:?}")));
    }
    Ok(e)
}

fn type_err(f: &str, b: &Binding) -> ComputeError {
    ComputeError::Type(format!("{f} does not accept {}", b.type_name()))
}

fn num(f: &str, b: &Binding) -> Result<f64, ComputeError> {
    match b {
        Binding::Number(v) => Ok(*v),
        other => Err(type_err(f, other)),
    }
}

fn text<'a>(f: &str, b: &'a Binding) -> Result<&'a str, ComputeError> {
    match b {
        Binding::Text(t) => Ok(t),
        other => Err(type_err(f, other)),
    }
}

fn series<'a>(f: &str, b: &'a Binding) -> Result<&'a Series, ComputeError> {
    match b {
        Binding::Series(s) => Ok(s),
        other => Err(type_err(f, other)),
    }
}

/// Numbers held by a collection, for aggregates.
fn values(f: &str, b: &Binding) -> Result<Vec<f64>, ComputeError> {
    match b {
        Binding::Series(s) => Ok(s.values()),
        Binding::Events(e) => e
            .iter()
            .map(|r| {
                r.value_num
                    .ok_or_else(|| ComputeError::Type(format!("{f}: event {} is not numeric", r.metric)))
            })
            .collect(),
        Binding::Users(u) => Ok(u.iter().map(|(_, v)| *v).collect()),
        Binding::List(items) => items.iter().map(|i| num(f, i)).collect(),
        Binding::Number(v) => Ok(vec![*v]),
        other => Err(type_err(f, other)),
    }
}

fn days_of(f: &str, b: &Binding) -> Result<Vec<NaiveDate>, ComputeError> {
    Ok(match b {
        Binding::Series(s) => s.dates(),
        Binding::Days(d) => d.clone(),
        Binding::Events(e) => e.iter().map(|r| r.date).collect::<BTreeSet<_>>().into_iter().collect(),
        other => return Err(type_err(f, other)),
    })
}

fn cmp_of(s: &str) -> Result<Cmp, ComputeError> {
    Ok(match s {
        ">" => Cmp::Gt,
        ">=" => Cmp::Ge,
        "<" => Cmp::Lt,
        "<=" => Cmp::Le,
        other => return Err(ComputeError::Syntax(format!("unknown comparison {other:?}"))),
    })
}

fn arity(f: &str, args: &[Binding], lo: usize, hi: usize) -> Result<(), ComputeError> {
    if args.len() < lo || args.len() > hi {
        return Err(ComputeError::Syntax(format!(
            "{f} takes {lo}..={hi} arguments, got {}",
            args.len()
        )));
    }
    Ok(())
}

fn agg(f: &str, func: AggFn, b: &Binding) -> Result<Binding, ComputeError> {
    let vals = match (func, b) {
        (AggFn::Count, Binding::Days(d)) => return Ok(Binding::Number(d.len() as f64)),
        (AggFn::Count, Binding::Events(e)) => return Ok(Binding::Number(e.len() as f64)),
        (AggFn::Count, Binding::List(l)) => return Ok(Binding::Number(l.len() as f64)),
        _ => values(f, b)?,
    };
    aggregate(&vals, func)
        .map(Binding::Number)
        .map_err(|_| ComputeError::Empty(f.to_string()))
}

fn call(f: &str, args: Vec<Binding>) -> Result<Binding, ComputeError> {
    match f {
        "abs" => {
            arity(f, &args, 1, 1)?;
            Ok(Binding::Number(num(f, &args[0])?.abs()))
        }
        "round" => {
            arity(f, &args, 1, 2)?;
            let x = num(f, &args[0])?;
            let digits = args.get(1).map(|d| num(f, d)).transpose()?.unwrap_or(0.0);
            let scale = 10f64.powi(digits as i32);
            Ok(Binding::Number((x * scale).round() / scale))
        }
        "min" | "max" => {
            let func = if f == "min" { AggFn::Min } else { AggFn::Max };
            if args.len() == 1 {
                return agg(f, func, &args[0]);
            }
            arity(f, &args, 2, usize::MAX)?;
            let nums: Vec<f64> = args.iter().map(|a| num(f, a)).collect::<Result<_, _>>()?;
            agg(f, func, &Binding::List(nums.into_iter().map(Binding::Number).collect()))
        }
        "mean" | "sum" | "count" | "median" => {
            arity(f, &args, 1, 1)?;
            let func = match f {
                "mean" => AggFn::Mean,
                "sum" => AggFn::Sum,
                "count" => AggFn::Count,
                _ => AggFn::Median,
            };
            agg(f, func, &args[0])
        }
        "percentile" => {
            arity(f, &args, 2, 2)?;
            let p = num(f, &args[1])?;
            if !(0.0..=100.0).contains(&p) || p.fract() != 0.0 {
                return Err(ComputeError::Type(format!("percentile rank {p} not in 0..=100")));
            }
            agg(f, AggFn::Percentile(p as u8), &args[0])
        }
        "days" => {
            arity(f, &args, 1, 1)?;
            Ok(Binding::Days(days_of(f, &args[0])?))
        }
        "filter" => {
            arity(f, &args, 3, 3)?;
            let s = series(f, &args[0])?;
            let c = cmp_of(text(f, &args[1])?)?;
            let t = num(f, &args[2])?;
            Ok(Binding::Days(
                s.points.iter().filter(|(_, v)| c.holds(*v, t)).map(|(d, _)| *d).collect(),
            ))
        }
        "intersect" | "union" => {
            arity(f, &args, 1, usize::MAX)?;
            let mut acc: Option<BTreeSet<NaiveDate>> = None;
            for a in &args {
                let these: BTreeSet<NaiveDate> = days_of(f, a)?.into_iter().collect();
                acc = Some(match acc {
                    None => these,
                    Some(prev) if f == "intersect" => prev.intersection(&these).copied().collect(),
                    Some(prev) => prev.union(&these).copied().collect(),
                });
            }
            Ok(Binding::Days(acc.unwrap_or_default().into_iter().collect()))
        }
        "align" => {
            arity(f, &args, 2, usize::MAX)?;
            let mut keep: Option<BTreeSet<NaiveDate>> = None;
            for a in &args[1..] {
                let these: BTreeSet<NaiveDate> = days_of(f, a)?.into_iter().collect();
                keep = Some(match keep {
                    None => these,
                    Some(k) => k.intersection(&these).copied().collect(),
                });
            }
            let keep = keep.unwrap_or_default();
            Ok(match &args[0] {
                Binding::Series(s) => Binding::Series(Series {
                    window: s.window,
                    points: s.points.iter().filter(|(d, _)| keep.contains(d)).copied().collect(),
                }),
                Binding::Events(e) => {
                    Binding::Events(e.iter().filter(|r| keep.contains(&r.date)).cloned().collect())
                }
                Binding::Days(d) => Binding::Days(d.iter().filter(|d| keep.contains(d)).copied().collect()),
                other => return Err(type_err(f, other)),
            })
        }
        "max_run" => {
            arity(f, &args, 1, 1)?;
            Ok(Binding::Number(consecutive_run(&days_of(f, &args[0])?, 1).1 as f64))
        }
        "has_run" => {
            arity(f, &args, 2, 2)?;
            let k = num(f, &args[1])?;
            if k < 0.0 || k.fract() != 0.0 {
                return Err(ComputeError::Type(format!("run length {k} is not a count")));
            }
            Ok(Binding::Bool(consecutive_run(&days_of(f, &args[0])?, k as u32).0))
        }
        "trend" => {
            arity(f, &args, 1, 2)?;
            let eps = args.get(1).map(|e| num(f, e)).transpose()?.unwrap_or(DEFAULT_TREND_EPSILON);
            trend_direction(series(f, &args[0])?, eps)
                .map(|l| Binding::Text(l.as_str().into()))
                .map_err(|e| ComputeError::Empty(format!("trend: {e}")))
        }
        "argmax" | "argmin" => {
            arity(f, &args, 1, 1)?;
            let s = series(f, &args[0])?;
            let mut best: Option<(NaiveDate, f64)> = None;
            for (d, v) in &s.points {
                let better = best.is_none_or(|(_, b)| if f == "argmax" { *v > b } else { *v < b });
                if better {
                    best = Some((*d, *v));
                }
            }
            best.map(|(d, _)| Binding::Text(d.to_string()))
                .ok_or_else(|| ComputeError::Empty(f.into()))
        }
        "dominant" => {
            arity(f, &args, 1, 2)?;
            let Binding::Events(e) = &args[0] else {
                return Err(type_err(f, &args[0]));
            };
            let field = args.get(1).map(|a| text(f, a)).transpose()?;
            dominant_category(
                e.iter()
                    .filter(|r| field.is_none_or(|m| r.metric == m))
                    .filter_map(|r| r.category.as_deref()),
            )
            .map(Binding::Text)
            .map_err(|_| ComputeError::Empty(f.into()))
        }
        "values" => {
            arity(f, &args, 1, 1)?;
            Ok(Binding::List(values(f, &args[0])?.into_iter().map(Binding::Number).collect()))
        }
        "dates" => {
            arity(f, &args, 1, 1)?;
            Ok(Binding::List(
                days_of(f, &args[0])?
                    .into_iter()
                    .map(|d| Binding::Text(d.to_string()))
                    .collect(),
            ))
        }
        "list" => {
            arity(f, &args, 1, usize::MAX)?;
            Ok(Binding::List(args))
        }
        other => Err(ComputeError::Syntax(format!("unknown function {other:?}"))),
    }
}

fn eval(e: &Expr, env: &BTreeMap<String, Binding>) -> Result<Binding, ComputeError> {
    match e {
        Expr::Num(v) => Ok(Binding::Number(*v)),
        Expr::Str(s) => Ok(Binding::Text(s.clone())),
        Expr::Name(n) => env.get(n).cloned().ok_or_else(|| ComputeError::UndefinedName(n.clone())),
        Expr::Neg(x) => Ok(Binding::Number(-num("-", &eval(x, env)?)?)),
        Expr::Bin(op, l, r) => {
            let a = num(op, &eval(l, env)?)?;
            let b = num(op, &eval(r, env)?)?;
            Ok(match *op {
                "+" => Binding::Number(a + b),
                "-" => Binding::Number(a - b),
                "*" => Binding::Number(a * b),
                "/" => {
                    if b == 0.0 {
                        return Err(ComputeError::DivisionByZero);
                    }
                    Binding::Number(a / b)
                }
                "<" => Binding::Bool(a < b),
                "<=" => Binding::Bool(a <= b),
                ">" => Binding::Bool(a > b),
                ">=" => Binding::Bool(a >= b),
                "==" => Binding::Bool(a == b),
                _ => Binding::Bool(a != b),
            })
        }
        Expr::Call(f, args) => {
            let vals = args.iter().map(|a| eval(a, env)).collect::<Result<Vec<_>, _>>()?;
            call(f, vals)
        }
    }
}

/// Evaluates `src` against the named values in `env`.
pub fn evaluate(src: &str, env: &BTreeMap<String, Binding>) -> Result<Binding, ComputeError> {
    let e = parse(src)?;
    eval(&e, env)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lifelog::TimeWindow;
    use proptest::prelude::*;

    fn env(pairs: &[(&str, Binding)]) -> BTreeMap<String, Binding> {
        pairs.iter().map(|(k, v)| (k.to_string(), v.clone())).collect()
    }

    fn d(s: &str) -> NaiveDate {
        s.parse().unwrap()
    }

    fn sleep() -> Binding {
        let w = TimeWindow::new(d("2021-03-01"), d("2021-03-05")).unwrap();
        Binding::Series(Series {
            window: w,
            points: vec![
                (d("2021-03-01"), 400.0),
                (d("2021-03-02"), 430.0),
                (d("2021-03-03"), 450.0),
                (d("2021-03-05"), 470.0),
            ],
        })
    }

    #[test]
    fn arithmetic() {
        let e = env(&[("a", Binding::Number(480.0)), ("b", Binding::Number(450.0))]);
        assert_eq!(evaluate("a - b", &e).unwrap(), Binding::Number(30.0));
        assert_eq!(evaluate("round((a+b)/2)", &e).unwrap(), Binding::Number(((480.0f64 + 450.0) / 2.0).round()));
        assert_eq!(evaluate("-a × 2 ÷ 4", &e).unwrap(), Binding::Number(-240.0));
        assert_eq!(evaluate("max(a, b, 3)", &e).unwrap(), Binding::Number(480.0));
        assert_eq!(evaluate("a > b", &e).unwrap(), Binding::Bool(true));
        assert_eq!(evaluate("round(2.345, 2)", &e).unwrap(), Binding::Number((2.345f64 * 100.0).round() / 100.0));
    }

    #[test]
    fn errors() {
        let e = env(&[("x", Binding::Number(1.0))]);
        assert_eq!(evaluate("x / 0", &e), Err(ComputeError::DivisionByZero));
        assert_eq!(evaluate("y + 1", &e), Err(ComputeError::UndefinedName("y".into())));
        assert!(matches!(evaluate("x +", &e), Err(ComputeError::Syntax(_))));
        assert!(matches!(evaluate("(x", &e), Err(ComputeError::Syntax(_))));
        assert!(matches!(evaluate("nope(x)", &e), Err(ComputeError::Syntax(_))));
        assert!(matches!(evaluate("mean(x) x", &e), Err(ComputeError::Syntax(_))));
    }

    #[test]
    fn series_operators() {
        let e = env(&[("s", sleep())]);
        assert_eq!(evaluate("mean(s)", &e).unwrap(), Binding::Number(437.5));
        assert_eq!(evaluate("count(filter(s, \">\", 420))", &e).unwrap(), Binding::Number(3.0));
        assert_eq!(evaluate("max_run(filter(s, '>=', 430))", &e).unwrap(), Binding::Number(2.0));
        assert_eq!(evaluate("has_run(s, 3)", &e).unwrap(), Binding::Bool(true));
        assert_eq!(evaluate("argmin(s)", &e).unwrap(), Binding::Text("2021-03-01".into()));
        assert_eq!(evaluate("trend(s)", &e).unwrap(), Binding::Text("increasing".into()));
        assert_eq!(evaluate("percentile(s, 50)", &e).unwrap(), Binding::Number(430.0));
        assert_eq!(
            evaluate("list(mean(s), argmax(s), count(s) > 3)", &e).unwrap().render(),
            "437.5; 2021-03-05; yes"
        );
    }

    #[test]
    fn day_algebra() {
        let days = Binding::Days(vec![d("2021-03-02"), d("2021-03-05")]);
        let e = env(&[("s", sleep()), ("k", days)]);
        assert_eq!(evaluate("mean(align(s, k))", &e).unwrap(), Binding::Number(450.0));
        assert_eq!(evaluate("count(intersect(s, k))", &e).unwrap(), Binding::Number(2.0));
        assert_eq!(evaluate("count(union(filter(s, '<', 420), k))", &e).unwrap(), Binding::Number(3.0));
    }

    proptest! {
        #[test]
        fn matches_host_arithmetic(a in -1e6f64..1e6, b in 1e-3f64..1e6, c in -1e3f64..1e3) {
            let e = env(&[("a", Binding::Number(a)), ("b", Binding::Number(b)), ("c", Binding::Number(c))]);
            prop_assert_eq!(evaluate("(a + c) / b - c * 2", &e).unwrap(), Binding::Number((a + c) / b - c * 2.0));
            prop_assert_eq!(evaluate("round((a + b) / 2)", &e).unwrap(), Binding::Number(((a + b) / 2.0).round()));
            prop_assert_eq!(evaluate("abs(min(a, c))", &e).unwrap(), Binding::Number(a.min(c).abs()));
        }
    }
}
