use crate::qlang::{AnswerValue, Item};
use crate::store::{Cell, ResultTable, SqlDiagnostic};

/// Integer ground truths up to this magnitude get a ±1 allowance.
pub const SMALL_INT_LIMIT: f64 = 14.0;

/// Relative slack on the tolerance so that decimal boundaries such as
/// `0.31` vs `0.3` are not lost to binary rounding.
pub const TOLERANCE_SLACK: f64 = 1e-9;

pub fn normalize_text(s: &str) -> String {
    s.split_whitespace()
        .collect::<Vec<_>>()
        .join(" ")
        .to_lowercase()
}

/// Numeric rule: ±1 for small integer `gt`, otherwise
/// `max(0.005 |gt|, 0.01)`. The tolerance depends on `gt` only.
pub fn number_matches(pred: f64, gt: f64) -> bool {
    if !pred.is_finite() || !gt.is_finite() {
        return false;
    }
    let err = (pred - gt).abs();
    if gt.fract() == 0.0 && gt.abs() <= SMALL_INT_LIMIT {
        err <= 1.0
    } else {
        err <= (0.005 * gt.abs()).max(0.01) * (1.0 + TOLERANCE_SLACK)
    }
}

fn item_number(i: &Item) -> Option<f64> {
    match i {
        Item::Number(v) => Some(*v),
        Item::Text(t) => super::parse::parse_number(t),
        Item::Date(_) => None,
    }
}

fn item_text(i: &Item) -> String {
    normalize_text(&i.to_string())
}

pub fn item_matches(pred: &Item, gt: &Item) -> bool {
    match gt {
        Item::Number(g) => item_number(pred).is_some_and(|p| number_matches(p, *g)),
        _ => item_text(pred) == item_text(gt),
    }
}

/// Size of a maximum matching between `left` and `right` under `ok`.
pub(crate) fn max_matching<A, B>(left: &[A], right: &[B], ok: impl Fn(&A, &B) -> bool) -> usize {
    let adj: Vec<Vec<usize>> = left
        .iter()
        .map(|a| (0..right.len()).filter(|&j| ok(a, &right[j])).collect())
        .collect();
    let mut owner: Vec<Option<usize>> = vec![None; right.len()];

    fn augment(
        i: usize,
        adj: &[Vec<usize>],
        owner: &mut [Option<usize>],
        seen: &mut [bool],
    ) -> bool {
        for &j in &adj[i] {
            if seen[j] {
                continue;
            }
            seen[j] = true;
            if owner[j].is_none_or(|k| augment(k, adj, owner, seen)) {
                owner[j] = Some(i);
                return true;
            }
        }
        false
    }

    let mut matched = 0;
    for i in 0..left.len() {
        let mut seen = vec![false; right.len()];
        if augment(i, &adj, &mut owner, &mut seen) {
            matched += 1;
        }
    }
    matched
}

/// Final-answer accuracy. Multi-item answers need the same number of items
/// and a one-to-one pairing in which every pair matches; order is ignored.
pub fn score_accuracy(pred: &AnswerValue, gt: &AnswerValue) -> bool {
    match (pred, gt) {
        (AnswerValue::YesNo(p), AnswerValue::YesNo(g)) => p == g,
        (AnswerValue::Number(p), AnswerValue::Number(g)) => number_matches(*p, *g),
        (AnswerValue::Text(p), AnswerValue::Text(g)) => normalize_text(p) == normalize_text(g),
        (
            AnswerValue::Pair(..) | AnswerValue::ListOf(_),
            AnswerValue::Pair(..) | AnswerValue::ListOf(_),
        ) => {
            let p = pred.items();
            let g = gt.items();
            p.len() == g.len() && max_matching(&g, &p, |g, p| item_matches(p, g)) == g.len()
        }
        _ => false,
    }
}

fn cell_matches(cell: &Cell, item: &Item) -> bool {
    match (cell, item) {
        (Cell::Null, _) => false,
        (Cell::Number(v), Item::Number(g)) => number_matches(*v, *g),
        (Cell::Text(t), Item::Number(g)) => {
            super::parse::parse_number(t).is_some_and(|v| number_matches(v, *g))
        }
        (Cell::Number(v), other) => {
            normalize_text(&crate::qlang::format_number(*v)) == item_text(other)
        }
        (Cell::Text(t), other) => normalize_text(t) == item_text(other),
    }
}

/// SQL stage scores: `va` is the guard/execution verdict; `ex` requires
/// every evidence item to occur among the result cells.
pub fn score_dp_stage(
    diag: &SqlDiagnostic,
    result: Option<&ResultTable>,
    evidence: &[Item],
) -> (bool, bool) {
    let va = diag.is_valid() && result.is_some();
    if !va {
        return (false, false);
    }
    let table = result.expect("checked");
    let ex = !evidence.is_empty()
        && evidence
            .iter()
            .all(|item| table.cells().any(|c| cell_matches(c, item)));
    (true, ex)
}
