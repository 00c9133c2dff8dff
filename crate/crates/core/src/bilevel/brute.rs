use super::{evaluate_plan, plan_objective, BilevelError, CompactForm, Result, ScenarioResponse};
use crate::milp::SolverOptions;

pub const BRUTE_FORCE_CAP: usize = 12;

/// Every budget- and exclusivity-feasible plan, in increasing binary order.
pub fn enumerate_plans(compact: &CompactForm) -> Result<Vec<Vec<f64>>> {
    let n = compact.n_x();
    if n > BRUTE_FORCE_CAP {
        return Err(BilevelError::TooManyCandidates { got: n, cap: BRUTE_FORCE_CAP });
    }
    Ok((0u32..1 << n)
        .map(|mask| (0..n).map(|j| f64::from((mask >> j) & 1)).collect::<Vec<f64>>())
        .filter(|x| compact.is_admissible(x))
        .collect())
}

#[derive(Clone, Debug)]
pub struct BruteForceOutcome {
    pub x: Vec<f64>,
    pub objective: f64,
    pub responses: Vec<ScenarioResponse>,
    /// (plan, objective) for every enumerated plan.
    pub evaluated: Vec<(Vec<f64>, f64)>,
}

/// Exhaustive oracle: the optimistic bilevel value of every admissible plan.
/// Ties keep the first plan in enumeration order.
pub fn brute_force_plan(compact: &CompactForm, solver: &SolverOptions, parallel: bool) -> Result<BruteForceOutcome> {
    let mut best: Option<(Vec<f64>, f64, Vec<ScenarioResponse>)> = None;
    let mut evaluated = Vec::new();
    for x in enumerate_plans(compact)? {
        let responses = evaluate_plan(compact, &x, solver, parallel)?;
        let obj = plan_objective(compact, &x, &responses);
        evaluated.push((x.clone(), obj));
        if best.as_ref().is_none_or(|b| obj < b.1) {
            best = Some((x, obj, responses));
        }
    }
    let (x, objective, responses) = best.expect("the empty plan is always admissible");
    Ok(BruteForceOutcome { x, objective, responses, evaluated })
}
