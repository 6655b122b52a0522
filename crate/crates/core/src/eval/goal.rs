use std::collections::BTreeMap;
use std::ops::Range;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::report::MetricReport;
use super::stats::{bootstrap_ci, mean};
use crate::error::{Error, Result};
use crate::motion::{endpoint, Trajectory};
use crate::tokenizer::VqVae;
use crate::vocab::{GridCell, GridSpec};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SuccessReport {
    pub report: MetricReport,
    pub rollouts: usize,
    /// Successes per goal cell.
    pub per_goal: BTreeMap<usize, usize>,
}

/// Percentage of rollouts whose integrated endpoint lies in the goal cell.
///
/// `generate(goal, k)` produces the `k`-th rollout for `goal`; generation
/// errors propagate.
pub fn success_rate(
    grid: &GridSpec,
    goals: &[GridCell],
    n_per_goal: usize,
    mut generate: impl FnMut(GridCell, usize) -> Result<Trajectory>,
    seed: u64,
) -> Result<SuccessReport> {
    if goals.is_empty() || n_per_goal == 0 {
        return Err(Error::Data("success rate needs goals and rollouts".into()));
    }
    for g in goals {
        grid.index(*g)?;
    }
    let mut outcomes = Vec::with_capacity(goals.len() * n_per_goal);
    let mut per_goal = BTreeMap::new();
    for &goal in goals {
        let mut wins = 0;
        for k in 0..n_per_goal {
            let end = endpoint(&generate(goal, k)?)?;
            let hit = grid.cell_at(end.0, end.1).map(|c| c == goal).unwrap_or(false);
            wins += hit as usize;
            outcomes.push(if hit { 100.0 } else { 0.0 });
        }
        *per_goal.entry(grid.index(goal)?).or_insert(0) += wins;
    }
    let ci = if outcomes.len() >= 2 {
        bootstrap_ci(&outcomes, mean, 1000, seed)?
    } else {
        0.0
    };
    let report = MetricReport::new("success_pct", mean(&outcomes), ci)?
        .with("goals", goals.len())
        .with("n_per_goal", n_per_goal);
    Ok(SuccessReport {
        report,
        rollouts: outcomes.len(),
        per_goal,
    })
}

/// Decodes a uniformly random code sequence with a length drawn from `tokens`.
pub fn random_code_rollout<R: Rng + ?Sized>(tokenizer: &VqVae, tokens: Range<usize>, rng: &mut R) -> Result<Trajectory> {
    if tokens.is_empty() || tokens.start == 0 {
        return Err(Error::Config("random rollouts need a non-empty positive length range".into()));
    }
    let n = rng.gen_range(tokens);
    let size = tokenizer.config().codebook_size;
    let codes: Vec<usize> = (0..n).map(|_| rng.gen_range(0..size)).collect();
    tokenizer.decode_tokens(&codes, None)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::motion::{render_primitives, Primitive};

    #[test]
    fn replayed_trajectory_always_succeeds() {
        let grid = GridSpec::default();
        let t = render_primitives(0.1, &[(Primitive::Forward, 3.0, 0.5), (Primitive::TurnLeft, 1.0, 0.8)]).unwrap();
        let e = endpoint(&t).unwrap();
        let goal = grid.cell_at(e.0, e.1).unwrap();
        let r = success_rate(&grid, &[goal], 5, |_, _| Ok(t.clone()), 0).unwrap();
        assert_eq!(r.report.value, 100.0);
        assert_eq!(r.report.ci95, 0.0);
        let other = GridCell { col: 0, row: 0 };
        let r = success_rate(&grid, &[goal, other], 5, |_, _| Ok(t.clone()), 0).unwrap();
        assert_eq!(r.report.value, 50.0);
    }

    #[test]
    fn bookkeeping_and_order_invariance() {
        let grid = GridSpec::default();
        let goals: Vec<GridCell> = (0..grid.num_cells()).map(|i| grid.cell(i).unwrap()).collect();
        let t = render_primitives(0.1, &[(Primitive::Forward, 2.0, 0.5)]).unwrap();
        let r = success_rate(&grid, &goals, 40, |_, _| Ok(t.clone()), 0).unwrap();
        assert_eq!(r.rollouts, 31_360);
        let mut rev = goals.clone();
        rev.reverse();
        let r2 = success_rate(&grid, &rev, 40, |_, _| Ok(t.clone()), 0).unwrap();
        assert_eq!(r.report.value, r2.report.value);
        assert_eq!(r.per_goal, r2.per_goal);
        assert!(success_rate(&grid, &[GridCell { col: 28, row: 0 }], 1, |_, _| Ok(t.clone()), 0).is_err());
    }
}
