use std::collections::BTreeMap;
use std::time::Instant;

use log::{info, warn};
use rayon::prelude::*;
use serde::Serialize;

use super::{dual_value, evaluate_plan, lower_duals, plan_objective, vsr_points, BilevelError, CompactForm, Result, ScenarioResponse};
use crate::milp::{ModelHandle, ObjSense, Sense, SolveStatus, SolverOptions, VarId};

#[derive(Clone, Debug)]
pub struct CcgOptions {
    /// Relative gap tolerance ε.
    pub epsilon: f64,
    pub max_iter: usize,
    pub mp_time_limit_s: Option<f64>,
    /// Bound on cut multipliers used by the product linearization.
    pub m_lambda: f64,
    pub solver: SolverOptions,
    pub parallel: bool,
}

impl Default for CcgOptions {
    fn default() -> Self {
        Self { epsilon: 1e-3, max_iter: 50, mp_time_limit_s: Some(10_800.0), m_lambda: 1e5, solver: SolverOptions::default(), parallel: true }
    }
}

impl CcgOptions {
    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon >= 1e-6) {
            return Err(BilevelError::Config(format!("epsilon {} is below the minimum 1e-6", self.epsilon)));
        }
        if self.max_iter == 0 {
            return Err(BilevelError::Config("max_iter must be at least 1".into()));
        }
        if !(self.m_lambda > 0.0) {
            return Err(BilevelError::Config("M_lambda must be positive".into()));
        }
        Ok(())
    }
}

/// One scenario's cut from one iteration: the binaries z it was built at
/// and the lower-level multipliers observed there.
#[derive(Clone, Debug)]
pub struct CutBlock {
    pub iteration: usize,
    pub scenario: usize,
    pub z: Vec<f64>,
    pub multipliers: Vec<f64>,
}

#[derive(Clone, Debug, Serialize)]
pub struct IterationRecord {
    pub q: usize,
    pub lb: f64,
    pub ub: f64,
    pub gap: f64,
    /// Raw master objective of this iteration.
    pub phi: f64,
    pub mp_seconds: f64,
    pub sp_seconds: f64,
    pub cuts_added: usize,
    pub x: Vec<u8>,
}

#[derive(Clone, Debug, Default)]
pub struct CcgState {
    pub q: usize,
    pub lb: f64,
    pub ub: f64,
    pub incumbent: Option<Vec<f64>>,
    pub responses: Vec<ScenarioResponse>,
    pub pool: Vec<CutBlock>,
    pub log: Vec<IterationRecord>,
}

impl CcgState {
    pub fn new() -> Self {
        Self { lb: f64::NEG_INFINITY, ub: f64::INFINITY, ..Default::default() }
    }

    pub fn gap(&self) -> f64 {
        relative_gap(self.lb, self.ub)
    }

    pub fn log_csv(&self) -> String {
        let mut s = String::from("q,lb,ub,gap,phi,mp_seconds,sp_seconds,cuts_added,x\n");
        for r in &self.log {
            let x: String = r.x.iter().map(|b| char::from(b'0' + b)).collect();
            s.push_str(&format!(
                "{},{:.6},{:.6},{:.3e},{:.6},{:.4},{:.4},{},{}\n",
                r.q, r.lb, r.ub, r.gap, r.phi, r.mp_seconds, r.sp_seconds, r.cuts_added, x
            ));
        }
        s
    }
}

pub(crate) fn relative_gap(lb: f64, ub: f64) -> f64 {
    if !lb.is_finite() || !ub.is_finite() {
        return f64::INFINITY;
    }
    let diff = (ub - lb).abs();
    if ub.abs() < 1e-12 {
        diff
    } else {
        diff / ub.abs()
    }
}

#[derive(Clone, Debug)]
pub struct MasterSolution {
    pub x: Vec<f64>,
    /// Incumbent objective Φ.
    pub phi: f64,
    /// Proven lower bound on the master optimum.
    pub bound: f64,
    pub status: SolveStatus,
    pub seconds: f64,
    pub model: ModelHandle,
}

/// Master problem: min f'x + Σ N_t g'ỹ_t over budget-feasible x, lower-level
/// feasible copies (ỹ_t, z̃_t) and every pooled cut.
pub fn build_master(compact: &CompactForm, pool: &[CutBlock], m_lambda: f64) -> Result<ModelHandle> {
    let mut m = ModelHandle::new("master");
    let x: Vec<VarId> = compact.x_names.iter().map(|n| m.add_binary(n.clone())).collect::<std::result::Result<_, _>>()?;
    let vsr: Vec<(VarId, f64)> = x[..compact.n_vsr].iter().map(|&v| (v, 1.0)).collect();
    let pst: Vec<(VarId, f64)> = x[compact.n_vsr..].iter().map(|&v| (v, 1.0)).collect();
    if !vsr.is_empty() {
        m.add_constraint("eq12b", vsr, Sense::Le, compact.vsr_budget as f64)?;
    }
    if !pst.is_empty() {
        m.add_constraint("eq12c", pst, Sense::Le, compact.pst_budget as f64)?;
    }
    for &(a, b) in &compact.exclusive {
        m.add_constraint(format!("eq12d_{}", compact.x_names[a]), vec![(x[a], 1.0), (x[b], 1.0)], Sense::Le, 1.0)?;
    }
    let mut objective: Vec<(VarId, f64)> = x.iter().zip(&compact.f).filter(|(_, c)| **c != 0.0).map(|(&v, &c)| (v, c)).collect();
    let mut constant = 0.0;
    let mut copies = Vec::with_capacity(compact.blocks.len());
    for block in &compact.blocks {
        let ll = &block.lower;
        let t = ll.scenario_id;
        let y: Vec<VarId> = ll.y_names.iter().map(|n| m.add_free(format!("t{t}_{n}"))).collect::<std::result::Result<_, _>>()?;
        let z: Vec<VarId> = ll.z_names.iter().map(|n| m.add_binary(format!("t{t}_{n}"))).collect::<std::result::Result<_, _>>()?;
        for row in &ll.rows {
            let mut coeffs: Vec<(VarId, f64)> = row.y.iter().map(|&(j, a)| (y[j], a)).collect();
            coeffs.extend(row.z.iter().map(|&(j, a)| (z[j], a)));
            coeffs.extend(row.x.iter().map(|&(j, a)| (x[j], a)));
            m.add_constraint(format!("t{t}_{}", row.tag), coeffs, row.sense, row.rhs)?;
        }
        objective.extend(ll.g.iter().enumerate().filter(|(_, c)| **c != 0.0).map(|(j, &c)| (y[j], block.weight * c)));
        constant += block.weight * ll.g_constant;
        copies.push(y);
    }
    m.set_objective(ObjSense::Minimize, objective, constant)?;

    for cut in pool {
        let block = &compact.blocks[cut.scenario];
        let ll = &block.lower;
        let tag = format!("t{}_l{}", ll.scenario_id, cut.iteration);
        let y = &copies[cut.scenario];
        let mut stationarity: Vec<Vec<(VarId, f64)>> = vec![Vec::new(); ll.n_y()];
        let mut value: Vec<(VarId, f64)> = ll.w.iter().enumerate().filter(|(_, c)| **c != 0.0).map(|(j, &c)| (y[j], c)).collect();
        for (i, row) in block.stacked.iter().enumerate() {
            let dual = if row.equality {
                let mu = m.add_free(format!("mu_{tag}_{i}"))?;
                value.push((mu, row.rhs));
                mu
            } else {
                let lam = m.add_continuous(format!("lam_{tag}_{i}"), 0.0, f64::INFINITY)?;
                let qz: f64 = row.z.iter().map(|&(j, a)| a * cut.z[j]).sum();
                value.push((lam, -(qz - row.rhs)));
                for &(j, k) in &row.x {
                    let om = m.add_continuous(format!("om_{tag}_{i}_{j}"), 0.0, f64::INFINITY)?;
                    value.push((om, -k));
                    m.add_constraint(format!("omega_le_lam_{tag}_{i}_{j}"), vec![(om, 1.0), (lam, -1.0)], Sense::Le, 0.0)?;
                    m.add_constraint(
                        format!("omega_ge_{tag}_{i}_{j}"),
                        vec![(om, 1.0), (lam, -1.0), (x[j], -m_lambda)],
                        Sense::Ge,
                        -m_lambda,
                    )?;
                    m.add_constraint(format!("omega_le_x_{tag}_{i}_{j}"), vec![(om, 1.0), (x[j], -m_lambda)], Sense::Le, 0.0)?;
                }
                lam
            };
            for &(j, a) in &row.y {
                stationarity[j].push((dual, a));
            }
        }
        for (j, coeffs) in stationarity.into_iter().enumerate() {
            m.add_constraint(format!("eq16c_{tag}_{}", ll.y_names[j]), coeffs, Sense::Eq, -ll.w[j])?;
        }
        m.add_constraint(format!("eq16b_{tag}"), value, Sense::Le, 0.0)?;
    }
    Ok(m)
}

pub fn solve_master(compact: &CompactForm, state: &CcgState, opts: &CcgOptions) -> Result<MasterSolution> {
    let start = Instant::now();
    let mut m = build_master(compact, &state.pool, opts.m_lambda)?;
    m.options = SolverOptions { time_limit_s: opts.mp_time_limit_s, ..opts.solver.clone() };
    let r = m.solve()?;
    match r.status {
        SolveStatus::Optimal => {}
        SolveStatus::TimeLimit if r.has_solution() => warn!("master problem hit its time limit; using the best bound"),
        status => return Err(BilevelError::Solver { stage: "master problem".into(), status }),
    }
    let x = r.primal[..compact.n_x()].iter().map(|&v| if v > 0.5 { 1.0 } else { 0.0 }).collect();
    let bound = r.dual_bound.unwrap_or(r.objective).min(r.objective);
    Ok(MasterSolution { x, phi: r.objective, bound, status: r.status, seconds: start.elapsed().as_secs_f64(), model: m })
}

/// One cut block per scenario at the plan `x` and SP2 binaries.
pub fn generate_cut(compact: &CompactForm, x: &[f64], responses: &[ScenarioResponse], iteration: usize, parallel: bool) -> Result<Vec<CutBlock>> {
    let one = |t: usize| -> Result<CutBlock> {
        let z = &responses[t].z;
        let d = lower_duals(compact, t, x, z)?;
        let value = dual_value(&compact.blocks[t], &d.multipliers, x, z);
        let scale = d.value.abs().max(1.0);
        if (value - d.value).abs() > 1e-6 * scale {
            return Err(BilevelError::Assembly(format!(
                "cut for scenario {} does not reproduce the lower-level value ({value} vs {})",
                compact.blocks[t].lower.scenario_id, d.value
            )));
        }
        Ok(CutBlock { iteration, scenario: t, z: z.clone(), multipliers: d.multipliers })
    };
    if parallel {
        (0..compact.blocks.len()).into_par_iter().map(one).collect()
    } else {
        (0..compact.blocks.len()).map(one).collect()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum CcgStatus {
    Converged,
    GapNotClosed,
}

#[derive(Clone, Debug)]
pub struct CcgOutcome {
    pub status: CcgStatus,
    pub x: Vec<f64>,
    pub responses: Vec<ScenarioResponse>,
    pub objective: f64,
    pub state: CcgState,
    pub warnings: Vec<String>,
    pub mp_seconds: f64,
    pub sp_seconds: f64,
    pub wall_seconds: f64,
}

impl CcgOutcome {
    pub fn iterations(&self) -> usize {
        self.state.q
    }

    pub fn gap(&self) -> f64 {
        self.state.gap()
    }
}

pub fn run_ccg(compact: &CompactForm, opts: &CcgOptions) -> Result<CcgOutcome> {
    opts.validate()?;
    let start = Instant::now();
    let mut state = CcgState::new();
    let (mut mp_total, mut sp_total) = (0.0, 0.0);
    let status = loop {
        state.q += 1;
        let mp = solve_master(compact, &state, opts)?;
        mp_total += mp.seconds;
        state.lb = state.lb.max(mp.bound);

        let sp_start = Instant::now();
        let responses = evaluate_plan(compact, &mp.x, &opts.solver, opts.parallel)?;
        let candidate = plan_objective(compact, &mp.x, &responses);
        if candidate < state.ub {
            state.ub = candidate;
            state.incumbent = Some(mp.x.clone());
            state.responses = responses.clone();
        }
        let gap = state.gap();
        let done = gap <= opts.epsilon;
        let out_of_iterations = state.q >= opts.max_iter;
        let mut cuts_added = 0;
        if !done && !out_of_iterations {
            let cuts = generate_cut(compact, &mp.x, &responses, state.q, opts.parallel)?;
            cuts_added = cuts.len();
            state.pool.extend(cuts);
        }
        let sp_seconds = sp_start.elapsed().as_secs_f64();
        sp_total += sp_seconds;
        info!("iteration {}: LB {:.4} UB {:.4} gap {:.3e}", state.q, state.lb, state.ub, gap);
        state.log.push(IterationRecord {
            q: state.q,
            lb: state.lb,
            ub: state.ub,
            gap,
            phi: mp.phi,
            mp_seconds: mp.seconds,
            sp_seconds,
            cuts_added,
            x: mp.x.iter().map(|&v| v as u8).collect(),
        });
        if done {
            break CcgStatus::Converged;
        }
        if out_of_iterations {
            warn!("stopped after {} iterations with gap {:.3e}", state.q, gap);
            break CcgStatus::GapNotClosed;
        }
    };
    let x = state.incumbent.clone().expect("every iteration evaluates a plan");
    let responses = state.responses.clone();
    let objective = state.ub;
    let warnings = big_m_audit(compact, &x, &responses, &state.pool, opts.m_lambda);
    for w in &warnings {
        warn!("{w}");
    }
    Ok(CcgOutcome {
        status,
        x,
        responses,
        objective,
        state,
        warnings,
        mp_seconds: mp_total,
        sp_seconds: sp_total,
        wall_seconds: start.elapsed().as_secs_f64(),
    })
}

/// Post-solve tightness checks: cut multipliers against M_λ, effective Δb
/// against its range and |v| against M2.
pub fn big_m_audit(compact: &CompactForm, x: &[f64], responses: &[ScenarioResponse], pool: &[CutBlock], m_lambda: f64) -> Vec<String> {
    let mut warnings = Vec::new();
    let mut worst: BTreeMap<usize, f64> = BTreeMap::new();
    for cut in pool {
        let block = &compact.blocks[cut.scenario];
        for (row, &m) in block.stacked.iter().zip(&cut.multipliers) {
            if !row.equality {
                let e = worst.entry(cut.scenario).or_insert(0.0);
                *e = e.max(m);
            }
        }
    }
    for (t, lam) in worst {
        if lam >= m_lambda * (1.0 - 1e-6) {
            warnings.push(format!(
                "dual bound active, increase M_lambda (scenario {}: multiplier {lam:.3e} vs {m_lambda:.3e})",
                compact.blocks[t].lower.scenario_id
            ));
        }
    }
    for (block, resp) in compact.blocks.iter().zip(responses) {
        for (c, psi, v, p) in vsr_points(compact, block, &resp.y) {
            let cand = &compact.catalog.vsr[c];
            if x[c] < 0.5 {
                continue;
            }
            if v.abs() >= cand.m2 * (1.0 - 1e-6) {
                warnings.push(format!("big-M: |v| at M2 on branch {} in scenario {}", cand.branch_id, block.lower.scenario_id));
            }
            if p.abs() > 1e-6 {
                let db = psi / p;
                let (lo, hi) = if p > 0.0 { (cand.delta_b.0 * p, cand.delta_b.1 * p) } else { (cand.delta_b.1 * p, cand.delta_b.0 * p) };
                let tol = 1e-6 * p.abs().max(1.0);
                if psi < lo - tol || psi > hi + tol {
                    warnings.push(format!(
                        "big-M: effective delta-b {db:.6} outside [{:.6}, {:.6}] on branch {} in scenario {}",
                        cand.delta_b.0, cand.delta_b.1, cand.branch_id, block.lower.scenario_id
                    ));
                }
            }
        }
    }
    warnings
}
