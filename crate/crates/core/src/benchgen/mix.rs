//! Per-template quotas that hit the requested scope counts exactly and the
//! task / answer mixes approximately.

use std::collections::BTreeMap;

use super::{BenchError, Scope, TaskType};
use crate::qlang::AnswerType;

/// Mix tolerance, as an absolute fraction of the total.
pub const MIX_TOLERANCE: f64 = 0.02;

#[derive(Debug, Clone, Copy)]
pub struct Cell {
    pub task: TaskType,
    pub answer: AnswerType,
    pub scope: Scope,
}

/// Largest-remainder rounding of `total` split by `weights`.
pub fn largest_remainder(total: usize, weights: &[f64]) -> Vec<usize> {
    let sum: f64 = weights.iter().sum();
    if weights.is_empty() || sum <= 0.0 {
        return vec![0; weights.len()];
    }
    let exact: Vec<f64> = weights.iter().map(|w| total as f64 * w / sum).collect();
    let mut counts: Vec<usize> = exact.iter().map(|e| e.floor() as usize).collect();
    let assigned: usize = counts.iter().sum();
    let mut order: Vec<usize> = (0..weights.len()).collect();
    order.sort_by(|&a, &b| {
        let ra = exact[a] - exact[a].floor();
        let rb = exact[b] - exact[b].floor();
        rb.total_cmp(&ra).then(a.cmp(&b))
    });
    for &i in order.iter().take(total.saturating_sub(assigned)) {
        counts[i] += 1;
    }
    counts
}

fn fit<K: Ord + Copy>(
    weights: &mut [f64],
    cells: &[Cell],
    key: impl Fn(&Cell) -> K,
    target: &BTreeMap<K, f64>,
) {
    let mut current: BTreeMap<K, f64> = BTreeMap::new();
    for (w, c) in weights.iter().zip(cells) {
        *current.entry(key(c)).or_default() += *w;
    }
    for (w, c) in weights.iter_mut().zip(cells) {
        let k = key(c);
        let have = current.get(&k).copied().unwrap_or(0.0);
        let want = target.get(&k).copied().unwrap_or(0.0);
        *w = if have > 0.0 { *w * want / have } else { 0.0 };
    }
}

fn check_target<K: Ord + Copy + std::fmt::Debug>(
    name: &str,
    cells: &[Cell],
    key: impl Fn(&Cell) -> K,
    target: &BTreeMap<K, f64>,
) -> Result<(), BenchError> {
    for (k, share) in target {
        if *share > 0.0 && !cells.iter().any(|c| key(c) == *k) {
            return Err(BenchError::InfeasibleMix(format!(
                "{name} mix asks for {k:?} but no template provides it"
            )));
        }
    }
    Ok(())
}

/// Assigns a quota to every template cell.
///
/// Scope totals are met exactly. Task and answer mixes, when given, are
/// matched by iterative proportional fitting and must land within
/// [`MIX_TOLERANCE`] of the request.
pub fn allocate(
    cells: &[Cell],
    scope_counts: [usize; 2],
    task_mix: Option<&BTreeMap<TaskType, f64>>,
    answer_mix: Option<&BTreeMap<AnswerType, f64>>,
) -> Result<Vec<usize>, BenchError> {
    let total: usize = scope_counts.iter().sum();
    let scope_idx = |s: Scope| match s {
        Scope::SingleUser => 0,
        Scope::MultiUser => 1,
    };
    let scope_target: BTreeMap<Scope, f64> = [Scope::SingleUser, Scope::MultiUser]
        .into_iter()
        .map(|s| (s, scope_counts[scope_idx(s)] as f64 / total.max(1) as f64))
        .collect();
    check_target("scope", cells, |c| c.scope, &scope_target)?;
    if let Some(t) = task_mix {
        check_target("task", cells, |c| c.task, t)?;
    }
    if let Some(a) = answer_mix {
        check_target("answer", cells, |c| c.answer, a)?;
    }

    let mut w = vec![1.0; cells.len()];
    for _ in 0..500 {
        if let Some(t) = task_mix {
            fit(&mut w, cells, |c| c.task, t);
        }
        if let Some(a) = answer_mix {
            fit(&mut w, cells, |c| c.answer, a);
        }
        fit(&mut w, cells, |c| c.scope, &scope_target);
    }

    let mut quotas = vec![0usize; cells.len()];
    for scope in [Scope::SingleUser, Scope::MultiUser] {
        let idx: Vec<usize> = (0..cells.len()).filter(|&i| cells[i].scope == scope).collect();
        let weights: Vec<f64> = idx.iter().map(|&i| w[i]).collect();
        let want = scope_counts[scope_idx(scope)];
        if want > 0 && weights.iter().sum::<f64>() <= 0.0 {
            return Err(BenchError::InfeasibleMix(format!(
                "no template weight left for {scope:?}"
            )));
        }
        for (i, q) in idx.iter().zip(largest_remainder(want, &weights)) {
            quotas[*i] = q;
        }
    }

    let achieved = |key: &dyn Fn(&Cell) -> String| {
        let mut m: BTreeMap<String, f64> = BTreeMap::new();
        for (c, q) in cells.iter().zip(&quotas) {
            *m.entry(key(c)).or_default() += *q as f64 / total.max(1) as f64;
        }
        m
    };
    if let Some(t) = task_mix {
        let got = achieved(&|c| format!("{:?}", c.task));
        for (k, share) in t {
            let g = got.get(&format!("{k:?}")).copied().unwrap_or(0.0);
            if (g - share).abs() > MIX_TOLERANCE {
                return Err(BenchError::InfeasibleMix(format!(
                    "task {k:?}: requested {share:.3}, achievable {g:.3}"
                )));
            }
        }
    }
    if let Some(a) = answer_mix {
        let got = achieved(&|c| format!("{:?}", c.answer));
        for (k, share) in a {
            let g = got.get(&format!("{k:?}")).copied().unwrap_or(0.0);
            if (g - share).abs() > MIX_TOLERANCE {
                return Err(BenchError::InfeasibleMix(format!(
                    "answer {k:?}: requested {share:.3}, achievable {g:.3}"
                )));
            }
        }
    }
    Ok(quotas)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn cell(task: TaskType, answer: AnswerType, scope: Scope) -> Cell {
        Cell { task, answer, scope }
    }

    fn cells() -> Vec<Cell> {
        vec![
            cell(TaskType::FQ, AnswerType::Number, Scope::SingleUser),
            cell(TaskType::FQ, AnswerType::YesNo, Scope::MultiUser),
            cell(TaskType::AS, AnswerType::ListOf, Scope::SingleUser),
            cell(TaskType::AS, AnswerType::Number, Scope::MultiUser),
            cell(TaskType::TA, AnswerType::Text, Scope::SingleUser),
            cell(TaskType::TA, AnswerType::Pair, Scope::MultiUser),
        ]
    }

    #[test]
    fn remainder_rounding_is_exact() {
        assert_eq!(largest_remainder(10, &[1.0, 1.0, 1.0]), vec![4, 3, 3]);
        assert_eq!(largest_remainder(0, &[1.0, 2.0]), vec![0, 0]);
        assert_eq!(largest_remainder(7, &[0.0, 1.0]), vec![0, 7]);
    }

    #[test]
    fn scope_counts_exact() {
        let q = allocate(&cells(), [60, 40], None, None).unwrap();
        assert_eq!(q.iter().sum::<usize>(), 100);
        let single: usize = q.iter().zip(cells()).filter(|(_, c)| c.scope == Scope::SingleUser).map(|(q, _)| q).sum();
        assert_eq!(single, 60);
    }

    #[test]
    fn task_mix_fitted() {
        let mix: BTreeMap<TaskType, f64> =
            [(TaskType::FQ, 0.5), (TaskType::AS, 0.3), (TaskType::TA, 0.2)].into_iter().collect();
        let q = allocate(&cells(), [500, 500], Some(&mix), None).unwrap();
        let fq: usize = q.iter().zip(cells()).filter(|(_, c)| c.task == TaskType::FQ).map(|(q, _)| q).sum();
        assert!((fq as f64 / 1000.0 - 0.5).abs() <= MIX_TOLERANCE);
    }

    #[test]
    fn unsupported_category_is_infeasible() {
        let mix: BTreeMap<TaskType, f64> = [(TaskType::NC, 1.0)].into_iter().collect();
        assert!(matches!(
            allocate(&cells(), [50, 50], Some(&mix), None),
            Err(BenchError::InfeasibleMix(_))
        ));
    }

    proptest! {
        #[test]
        fn remainder_sums_to_total(total in 0usize..5000, weights in prop::collection::vec(0.01f64..10.0, 1..40)) {
            prop_assert_eq!(largest_remainder(total, &weights).iter().sum::<usize>(), total);
        }
    }
}
