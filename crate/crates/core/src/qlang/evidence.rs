use super::interp::{evaluate, interpret, Value};
use super::{CompareKind, Item, QueryError, QueryIR, RunOutput};
use crate::lifelog::AlignedDataset;

fn value_items(v: Value) -> Vec<Item> {
    match v {
        Value::Number(x) => vec![Item::Number(x)],
        Value::Text(t) => vec![Item::Text(t)],
        Value::Date(d) => vec![Item::Date(d)],
        Value::Bool(b) => vec![Item::Text(if b { "yes" } else { "no" }.into())],
        Value::Series(s) => s.values().into_iter().map(Item::Number).collect(),
        _ => vec![],
    }
}

fn decision_inputs(n: &QueryIR, ds: &AlignedDataset) -> Result<Option<Vec<Item>>, QueryError> {
    Ok(match n {
        QueryIR::Compare {
            kind: CompareKind::Greater | CompareKind::Less,
            left,
            right,
        } => {
            let mut items = value_items(evaluate(left, ds)?);
            items.extend(value_items(evaluate(right, ds)?));
            Some(items)
        }
        QueryIR::ConsecutiveRun {
            output: RunOutput::Exists,
            child,
            min_len,
        } => {
            let run = QueryIR::ConsecutiveRun {
                child: child.clone(),
                min_len: *min_len,
                output: RunOutput::MaxRun,
            };
            Some(value_items(evaluate(&run, ds)?))
        }
        _ => None,
    })
}

/// Values a correct SQL result must contain before any final decision is
/// taken: the compared quantities for yes/no answers, the series behind a
/// trend label, otherwise the answer items themselves.
pub fn evidence_items(program: &QueryIR, ds: &AlignedDataset) -> Result<Vec<Item>, QueryError> {
    if let Some(items) = decision_inputs(program, ds)? {
        return Ok(items);
    }
    match program {
        QueryIR::Trend { child, .. } => Ok(value_items(evaluate(child, ds)?)),
        QueryIR::Tuple { children } => {
            let mut out = Vec::new();
            for c in children {
                match decision_inputs(c, ds)? {
                    Some(items) => out.extend(items),
                    None => out.extend(value_items(evaluate(c, ds)?)),
                }
            }
            Ok(out)
        }
        _ => Ok(interpret(program, ds)?.items()),
    }
}
