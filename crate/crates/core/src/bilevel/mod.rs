//! Stochastic bilevel placement model: compact assembly, lower-level
//! evaluation at a fixed plan, the column-and-constraint generation loop and
//! an exhaustive oracle.

mod brute;
mod ccg;

pub use brute::{brute_force_plan, enumerate_plans, BruteForceOutcome, BRUTE_FORCE_CAP};
pub use ccg::{
    big_m_audit, build_master, generate_cut, run_ccg, solve_master, CcgOptions, CcgOutcome, CcgState, CcgStatus, CutBlock, IterationRecord,
    MasterSolution,
};

use log::warn;
use rayon::prelude::*;
use thiserror::Error;

use crate::devices::DeviceCatalog;
use crate::market::{build_lower_level_rows, LowerLevel, LowerLevelOptions, MarketError, Role};
use crate::milp::{MilpError, ObjSense, Sense, SolveStatus, SolverOptions, VarId};
use crate::network::{NetworkCase, PtdfMatrix};
use crate::scenarios::OperatingPoint;

#[derive(Debug, Error)]
pub enum BilevelError {
    #[error("{stage}: solver ended {status:?}")]
    Solver { stage: String, status: SolveStatus },
    #[error("brute force is capped at {cap} candidates, got {got}")]
    TooManyCandidates { got: usize, cap: usize },
    #[error("invalid option: {0}")]
    Config(String),
    #[error("assembly: {0}")]
    Assembly(String),
    #[error(transparent)]
    Market(#[from] MarketError),
    #[error(transparent)]
    Milp(#[from] MilpError),
}

pub type Result<T> = std::result::Result<T, BilevelError>;

/// Row of the stacked lower level `E y = h`, `P y + Q z + K x <= r`.
#[derive(Clone, Debug)]
pub struct StackedRow {
    pub tag: String,
    pub equality: bool,
    pub y: Vec<(usize, f64)>,
    pub z: Vec<(usize, f64)>,
    pub x: Vec<(usize, f64)>,
    pub rhs: f64,
}

#[derive(Clone, Debug)]
pub struct ScenarioBlock {
    pub lower: LowerLevel,
    /// Operating hours N_t.
    pub weight: f64,
    pub stacked: Vec<StackedRow>,
}

/// Everything the decomposition needs, with x ordered as the catalog's VSR
/// candidates followed by its PST candidates.
#[derive(Clone, Debug)]
pub struct CompactForm {
    pub blocks: Vec<ScenarioBlock>,
    /// Annualized cost per decision.
    pub f: Vec<f64>,
    pub x_names: Vec<String>,
    pub n_vsr: usize,
    pub n_pst: usize,
    pub vsr_budget: usize,
    pub pst_budget: usize,
    /// (vsr decision, pst decision) on the same branch: at most one of them.
    pub exclusive: Vec<(usize, usize)>,
    pub catalog: DeviceCatalog,
}

fn stack(lower: &LowerLevel) -> Vec<StackedRow> {
    lower
        .rows
        .iter()
        .map(|r| {
            let s = if r.sense == Sense::Ge { -1.0 } else { 1.0 };
            let neg = |v: &[(usize, f64)]| v.iter().map(|&(j, a)| (j, s * a)).collect();
            StackedRow { tag: r.tag.clone(), equality: r.sense == Sense::Eq, y: neg(&r.y), z: neg(&r.z), x: neg(&r.x), rhs: s * r.rhs }
        })
        .collect()
}

#[derive(Clone, Copy, Debug)]
pub struct Budgets {
    pub vsr: usize,
    pub pst: usize,
}

#[allow(clippy::too_many_arguments)]
pub fn assemble_compact(
    case: &NetworkCase,
    ops: &[OperatingPoint],
    catalog: &DeviceCatalog,
    ptdf: Option<&PtdfMatrix>,
    opts: &LowerLevelOptions,
    budgets: Budgets,
) -> Result<CompactForm> {
    if let Some(g) = case.generators.iter().find(|g| g.p_min > 0.0) {
        warn!("generator {} has a positive minimum output; complete recourse is no longer guaranteed", g.id);
    }
    if opts.fixed_directions.len() > catalog.vsr.len() {
        return Err(BilevelError::Assembly(format!(
            "{} direction fixings for {} VSR candidates",
            opts.fixed_directions.len(),
            catalog.vsr.len()
        )));
    }
    let blocks = ops
        .iter()
        .map(|op| {
            let lower = build_lower_level_rows(case, op, ptdf, catalog, opts)?;
            let stacked = stack(&lower);
            Ok(ScenarioBlock { lower, weight: op.hours, stacked })
        })
        .collect::<Result<Vec<_>>>()?;
    let mut x_names: Vec<String> = catalog.vsr.iter().map(|c| format!("delta_b{}", c.branch_id)).collect();
    x_names.extend(catalog.pst.iter().map(|c| format!("alpha_b{}", c.branch_id)));
    let n_vsr = catalog.vsr.len();
    let exclusive = catalog
        .vsr
        .iter()
        .enumerate()
        .flat_map(|(i, v)| catalog.pst.iter().enumerate().filter(move |(_, p)| p.branch == v.branch).map(move |(j, _)| (i, n_vsr + j)))
        .collect();
    Ok(CompactForm {
        blocks,
        f: catalog.vsr.iter().map(|c| c.annual_cost).chain(catalog.pst.iter().map(|c| c.annual_cost)).collect(),
        x_names,
        n_vsr,
        n_pst: catalog.pst.len(),
        vsr_budget: budgets.vsr,
        pst_budget: budgets.pst,
        exclusive,
        catalog: catalog.clone(),
    })
}

impl CompactForm {
    pub fn n_x(&self) -> usize {
        self.f.len()
    }

    pub fn is_admissible(&self, x: &[f64]) -> bool {
        let on = |r: std::ops::Range<usize>| r.filter(|&j| x[j] > 0.5).count();
        on(0..self.n_vsr) <= self.vsr_budget
            && on(self.n_vsr..self.n_x()) <= self.pst_budget
            && self.exclusive.iter().all(|&(a, b)| !(x[a] > 0.5 && x[b] > 0.5))
    }

    pub fn investment(&self, x: &[f64]) -> f64 {
        self.f.iter().zip(x).map(|(a, b)| a * b).sum()
    }
}

/// Lower-level response of one scenario to a fixed plan.
#[derive(Clone, Debug)]
pub struct ScenarioResponse {
    /// SP1 optimum φ_t(x).
    pub phi: f64,
    /// SP2 selection.
    pub y: Vec<f64>,
    pub z: Vec<f64>,
    /// g'y (+ constant): the upper-level cost rate of this scenario, $/h.
    pub upper_cost: f64,
    /// Set when the value constraint needed the relaxed retry.
    pub relaxed: bool,
}

/// SP1: lower-level MILP optimum at fixed x.
pub fn solve_sp1(compact: &CompactForm, t: usize, x: &[f64], solver: &SolverOptions) -> Result<f64> {
    let ll = &compact.blocks[t].lower;
    let mut h = ll.handle(x, &ll.w, &format!("sp1_t{}", ll.scenario_id))?;
    h.options = solver.clone();
    let r = h.solve()?;
    if r.status != SolveStatus::Optimal {
        return Err(BilevelError::Solver { stage: format!("SP1 scenario {}", ll.scenario_id), status: r.status });
    }
    Ok(r.objective)
}

/// SP2: best upper-level response among lower-level optima (w'y <= φ_t),
/// polished by re-solving the LP at the chosen binaries.
pub fn solve_sp2(compact: &CompactForm, t: usize, x: &[f64], phi: f64, solver: &SolverOptions) -> Result<ScenarioResponse> {
    let ll = &compact.blocks[t].lower;
    let ny = ll.n_y();
    let attempt = |bound: f64| -> Result<Option<(Vec<f64>, Vec<f64>)>> {
        let mut h = ll.handle(x, &ll.g, &format!("sp2_t{}", ll.scenario_id))?;
        h.options = solver.clone();
        let w: Vec<(VarId, f64)> = ll.w.iter().enumerate().filter(|(_, c)| **c != 0.0).map(|(j, &c)| (VarId(j), c)).collect();
        h.add_constraint("eq18b", w, Sense::Le, bound)?;
        let r = h.solve()?;
        if r.status == SolveStatus::Infeasible {
            return Ok(None);
        }
        if r.status != SolveStatus::Optimal {
            return Err(BilevelError::Solver { stage: format!("SP2 scenario {}", ll.scenario_id), status: r.status });
        }
        let fix: Vec<(VarId, f64)> = (ny..h.num_vars()).map(|j| (VarId(j), r.primal[j].round())).collect();
        let mut lp = h.clone();
        for &(v, val) in &fix {
            lp.set_bounds(v, val, val)?;
        }
        let p = lp.solve()?;
        let primal = if p.status == SolveStatus::Optimal { p.primal } else { r.primal };
        Ok(Some((primal[..ny].to_vec(), primal[ny..].iter().map(|v| v.round()).collect())))
    };
    let (sol, relaxed) = match attempt(phi)? {
        Some(s) => (s, false),
        None => {
            warn!("SP2 scenario {}: value bound infeasible, retrying with relative slack 1e-9", ll.scenario_id);
            let bound = phi + phi.abs().max(1.0) * 1e-9;
            match attempt(bound)? {
                Some(s) => (s, true),
                None => {
                    return Err(BilevelError::Solver { stage: format!("SP2 scenario {}", ll.scenario_id), status: SolveStatus::Infeasible })
                }
            }
        }
    };
    let (y, z) = sol;
    Ok(ScenarioResponse { phi, upper_cost: ll.upper_cost(&y), y, z, relaxed })
}

/// Per-scenario SP1 then SP2 at a fixed plan, scenarios in parallel.
pub fn evaluate_plan(compact: &CompactForm, x: &[f64], solver: &SolverOptions, parallel: bool) -> Result<Vec<ScenarioResponse>> {
    let one = |t: usize| -> Result<ScenarioResponse> {
        let phi = solve_sp1(compact, t, x, solver)?;
        solve_sp2(compact, t, x, phi, solver)
    };
    if parallel {
        (0..compact.blocks.len()).into_par_iter().map(one).collect()
    } else {
        (0..compact.blocks.len()).map(one).collect()
    }
}

/// f'x + Σ_t N_t g_t'y_t.
pub fn plan_objective(compact: &CompactForm, x: &[f64], responses: &[ScenarioResponse]) -> f64 {
    compact.investment(x) + compact.blocks.iter().zip(responses).map(|(b, r)| b.weight * r.upper_cost).sum::<f64>()
}

/// Cut data at (x, z): stacked multipliers (λ on inequalities, μ on
/// equalities, in stacked row order) of the lower-level LP with z fixed.
#[derive(Clone, Debug)]
pub struct LowerDuals {
    pub multipliers: Vec<f64>,
    pub value: f64,
}

pub fn lower_duals(compact: &CompactForm, t: usize, x: &[f64], z: &[f64]) -> Result<LowerDuals> {
    let ll = &compact.blocks[t].lower;
    let h = ll.handle(x, &ll.w, &format!("dual_t{}", ll.scenario_id))?;
    debug_assert_eq!(h.objective().sense, ObjSense::Minimize);
    let fix: Vec<(VarId, f64)> = z.iter().enumerate().map(|(j, &v)| (VarId(ll.n_y() + j), v)).collect();
    let d = h.fix_and_dualize(&fix)?;
    Ok(LowerDuals { multipliers: d.multipliers, value: d.primal_objective })
}

/// Value of the dual objective `(Qz - r)'λ - h'μ + x'K'λ`.
pub fn dual_value(block: &ScenarioBlock, multipliers: &[f64], x: &[f64], z: &[f64]) -> f64 {
    block
        .stacked
        .iter()
        .zip(multipliers)
        .map(|(row, &m)| {
            if row.equality {
                -row.rhs * m
            } else {
                let qz: f64 = row.z.iter().map(|&(j, a)| a * z[j]).sum();
                let kx: f64 = row.x.iter().map(|&(j, a)| a * x[j]).sum();
                (qz + kx - row.rhs) * m
            }
        })
        .sum()
}

/// Device set-points implied by a lower-level solution, for the big-M audit.
pub(crate) fn vsr_points(compact: &CompactForm, block: &ScenarioBlock, y: &[f64]) -> Vec<(usize, f64, f64, f64)> {
    compact
        .catalog
        .vsr
        .iter()
        .enumerate()
        .filter_map(|(c, cand)| {
            let psi = y[block.lower.var(Role::PsiVsr(c))?];
            let v = y[block.lower.var(Role::VVsr(c))?];
            let p = y[block.lower.var(Role::Flow(cand.branch))?];
            Some((c, psi, v, p))
        })
        .collect()
}
