//! Per-scenario market clearing: plain DCOPF in angle or shift-factor form
//! and the FACTS-aware lower-level MILP.
//!
//! Every model is first assembled as a [`LowerLevel`]: rows over continuous
//! variables `y`, lower-level binaries `z` and upper-level decisions `x`
//! (kept symbolic). A [`MarketModel`] pins `x` and turns that into a solvable
//! [`ModelHandle`]; the bilevel layer reads the same rows as its compact form.

use std::collections::HashMap;
use std::path::PathBuf;

use serde::Serialize;
use thiserror::Error;

use crate::devices::{pst_block, vsr_block, DeviceCatalog, InjectionBlock, Term};
use crate::milp::{MilpError, ModelHandle, ObjSense, Sense, SolveStatus, VarId};
use crate::network::{branch_susceptance, NetworkCase, PtdfMatrix};
use crate::scenarios::OperatingPoint;

#[derive(Debug, Error)]
pub enum MarketError {
    #[error("shift-factor model requested without a PTDF matrix")]
    MissingPtdf,
    #[error("candidate branch {0} has no PTDF row")]
    CandidateNotMonitored(usize),
    #[error("branch {0} has no PTDF row")]
    UnmonitoredBranch(usize),
    #[error("decision vector has {got} entries, expected {expected}")]
    DecisionLength { got: usize, expected: usize },
    #[error("scenario {scenario} does not match the case: {what}")]
    ScenarioShape { scenario: usize, what: String },
    #[error("market solve ended {status:?}; model written to {dump}")]
    Solve { status: SolveStatus, dump: String },
    #[error(transparent)]
    Milp(#[from] MilpError),
}

pub type Result<T> = std::result::Result<T, MarketError>;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, serde::Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Formulation {
    ShiftFactor,
    #[serde(rename = "btheta")]
    BTheta,
}

impl std::str::FromStr for Formulation {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "shift-factor" | "shift_factor" | "ptdf" => Ok(Self::ShiftFactor),
            "btheta" | "b-theta" | "bθ" => Ok(Self::BTheta),
            other => Err(format!("unknown formulation `{other}` (expected shift-factor or btheta)")),
        }
    }
}

/// What a lower-level variable stands for.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Role {
    Gen(usize),
    WindUsed(usize),
    Spill(usize),
    Shed(usize),
    Flow(usize),
    Angle(usize),
    PsiVsr(usize),
    VVsr(usize),
    PsiPst(usize),
}

#[derive(Clone, Debug)]
pub struct LlRow {
    pub tag: String,
    pub y: Vec<(usize, f64)>,
    pub z: Vec<(usize, f64)>,
    pub x: Vec<(usize, f64)>,
    pub sense: Sense,
    pub rhs: f64,
}

#[derive(Clone, Debug)]
pub struct LowerLevelOptions {
    pub formulation: Formulation,
    /// Load shedding penalty β ($/MWh); `None` disables shedding variables.
    pub shedding_cost: Option<f64>,
    /// Wind spillage price α ($/MWh) used in the upper-level cost vector.
    pub spill_cost: f64,
    /// Explicit spillage variables with P_sp + P_w = P_a.
    pub explicit_spill: bool,
    /// Per VSR candidate: `Some(true)` fixes the flow direction positive
    /// (u = 0), `Some(false)` negative (u = 1), `None` keeps u binary.
    pub fixed_directions: Vec<Option<bool>>,
}

impl Default for LowerLevelOptions {
    fn default() -> Self {
        Self {
            formulation: Formulation::ShiftFactor,
            shedding_cost: Some(5000.0),
            spill_cost: 50.0,
            explicit_spill: true,
            fixed_directions: Vec::new(),
        }
    }
}

/// Counts in the one-sided row convention: a two-sided limit is two rows.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub struct ModelSize {
    pub continuous: usize,
    pub binaries: usize,
    pub equalities: usize,
    pub inequalities: usize,
}

/// Parametric lower level for one scenario:
/// `min w'y  s.t. rows(y, z; x)`, with an upper-level cost vector `g`.
#[derive(Clone, Debug)]
pub struct LowerLevel {
    pub scenario_id: usize,
    pub hours: f64,
    pub formulation: Formulation,
    pub y_names: Vec<String>,
    pub y_roles: Vec<Role>,
    pub z_names: Vec<String>,
    pub rows: Vec<LlRow>,
    pub w: Vec<f64>,
    pub g: Vec<f64>,
    pub n_x: usize,
    pub role_index: HashMap<Role, usize>,
    /// z index per VSR candidate (None when its direction is fixed).
    pub u_index: Vec<Option<usize>>,
    /// Branch indices with a flow variable.
    pub flow_lines: Vec<usize>,
    /// Upper-level constant part of g'y (spillage valued without explicit variables).
    pub g_constant: f64,
}

impl LowerLevel {
    pub fn n_y(&self) -> usize {
        self.y_names.len()
    }

    pub fn n_z(&self) -> usize {
        self.z_names.len()
    }

    pub fn var(&self, role: Role) -> Option<usize> {
        self.role_index.get(&role).copied()
    }

    pub fn size(&self) -> ModelSize {
        let equalities = self.rows.iter().filter(|r| r.sense == Sense::Eq).count();
        ModelSize {
            continuous: self.n_y(),
            binaries: self.n_z(),
            equalities,
            inequalities: self.rows.len() - equalities,
        }
    }

    /// Rows rendered as a solvable model at fixed `x`. y columns come first
    /// (free), then z (binary).
    pub fn handle(&self, x: &[f64], objective: &[f64], name: &str) -> Result<ModelHandle> {
        if x.len() != self.n_x {
            return Err(MarketError::DecisionLength { got: x.len(), expected: self.n_x });
        }
        let mut m = ModelHandle::new(name);
        for n in &self.y_names {
            m.add_free(n.clone())?;
        }
        for n in &self.z_names {
            m.add_binary(n.clone())?;
        }
        let ny = self.n_y();
        for row in &self.rows {
            let mut coeffs: Vec<(VarId, f64)> = row.y.iter().map(|&(j, a)| (VarId(j), a)).collect();
            coeffs.extend(row.z.iter().map(|&(j, a)| (VarId(ny + j), a)));
            let rhs = row.rhs - row.x.iter().map(|&(j, a)| a * x[j]).sum::<f64>();
            m.add_constraint(row.tag.clone(), coeffs, row.sense, rhs)?;
        }
        let obj = objective.iter().enumerate().filter(|(_, c)| **c != 0.0).map(|(j, &c)| (VarId(j), c)).collect();
        m.set_objective(ObjSense::Minimize, obj, 0.0)?;
        Ok(m)
    }

    pub fn lower_objective(&self, y: &[f64]) -> f64 {
        self.w.iter().zip(y).map(|(a, b)| a * b).sum()
    }

    pub fn upper_cost(&self, y: &[f64]) -> f64 {
        self.g_constant + self.g.iter().zip(y).map(|(a, b)| a * b).sum::<f64>()
    }
}

struct Builder {
    ll: LowerLevel,
}

impl Builder {
    fn var(&mut self, role: Role, name: String, w: f64, g: f64) -> usize {
        let j = self.ll.y_names.len();
        self.ll.y_names.push(name);
        self.ll.y_roles.push(role);
        self.ll.w.push(w);
        self.ll.g.push(g);
        self.ll.role_index.insert(role, j);
        j
    }

    fn row(&mut self, tag: String, y: Vec<(usize, f64)>, sense: Sense, rhs: f64) {
        self.ll.rows.push(LlRow { tag, y, z: Vec::new(), x: Vec::new(), sense, rhs });
    }
}

fn check_shape(case: &NetworkCase, op: &OperatingPoint) -> Result<()> {
    if op.load_mw.len() != case.loads.len() || op.wind_mw.len() != case.wind_farms.len() {
        return Err(MarketError::ScenarioShape {
            scenario: op.id,
            what: format!(
                "{} loads / {} wind farms vs {} / {}",
                op.load_mw.len(),
                op.wind_mw.len(),
                case.loads.len(),
                case.wind_farms.len()
            ),
        });
    }
    Ok(())
}

/// Assemble the lower level of one scenario with symbolic placement decisions
/// (x = δ for `catalog.vsr` in order, then α for `catalog.pst`).
pub fn build_lower_level_rows(
    case: &NetworkCase,
    op: &OperatingPoint,
    ptdf: Option<&PtdfMatrix>,
    catalog: &DeviceCatalog,
    opts: &LowerLevelOptions,
) -> Result<LowerLevel> {
    check_shape(case, op)?;
    let n_vsr = catalog.vsr.len();
    let shift = opts.formulation == Formulation::ShiftFactor;
    let ptdf = if shift { Some(ptdf.ok_or(MarketError::MissingPtdf)?) } else { None };
    let flow_lines: Vec<usize> = match ptdf {
        Some(h) => {
            for c in catalog.vsr.iter().map(|c| c.branch).chain(catalog.pst.iter().map(|c| c.branch)) {
                if !h.contains(c) {
                    return Err(MarketError::CandidateNotMonitored(case.branches[c].id));
                }
            }
            let mut lines = h.monitored.clone();
            lines.sort_unstable();
            lines
        }
        None => (0..case.n_branches()).collect(),
    };
    let mut b = Builder {
        ll: LowerLevel {
            scenario_id: op.id,
            hours: op.hours,
            formulation: opts.formulation,
            y_names: Vec::new(),
            y_roles: Vec::new(),
            z_names: Vec::new(),
            rows: Vec::new(),
            w: Vec::new(),
            g: Vec::new(),
            n_x: catalog.n_decisions(),
            role_index: HashMap::new(),
            u_index: Vec::new(),
            flow_lines: flow_lines.clone(),
            g_constant: 0.0,
        },
    };
    let beta = opts.shedding_cost;

    let gens: Vec<usize> = case.generators.iter().enumerate().map(|(n, g)| b.var(Role::Gen(n), format!("Pg_{}", g.id), g.cost, 0.0)).collect();
    let wind: Vec<usize> = case
        .wind_farms
        .iter()
        .enumerate()
        .map(|(w, f)| {
            // without an explicit spill column, α·(P_a - P_w) goes to g as -α on P_w
            let g = if opts.explicit_spill { 0.0 } else { -opts.spill_cost };
            b.var(Role::WindUsed(w), format!("Pw_{}", f.id), 0.0, g)
        })
        .collect();
    if !opts.explicit_spill {
        b.ll.g_constant = opts.spill_cost * op.wind_mw.iter().sum::<f64>();
    }
    let spill: Vec<usize> = if opts.explicit_spill {
        case.wind_farms.iter().enumerate().map(|(w, f)| b.var(Role::Spill(w), format!("Psp_{}", f.id), 0.0, opts.spill_cost)).collect()
    } else {
        Vec::new()
    };
    let shed: Vec<usize> = match beta {
        Some(beta) => case.loads.iter().enumerate().map(|(m, l)| b.var(Role::Shed(m), format!("dPd_{}", l.id), beta, beta)).collect(),
        None => Vec::new(),
    };
    let flows: HashMap<usize, usize> =
        flow_lines.iter().map(|&k| (k, b.var(Role::Flow(k), format!("P_{}", case.branches[k].id), 0.0, 0.0))).collect();
    let angles: Vec<usize> = if shift {
        Vec::new()
    } else {
        case.buses.iter().enumerate().map(|(i, bus)| b.var(Role::Angle(i), format!("theta_{}", bus.id), 0.0, 0.0)).collect()
    };
    let mut vsr_vars = Vec::with_capacity(n_vsr);
    for (c, cand) in catalog.vsr.iter().enumerate() {
        let psi = b.var(Role::PsiVsr(c), format!("psiV_{}", cand.branch_id), 0.0, 0.0);
        let v = b.var(Role::VVsr(c), format!("v_{}", cand.branch_id), 0.0, 0.0);
        vsr_vars.push((psi, v));
    }
    let pst_vars: Vec<usize> =
        catalog.pst.iter().enumerate().map(|(c, cand)| b.var(Role::PsiPst(c), format!("psiP_{}", cand.branch_id), 0.0, 0.0)).collect();
    for (c, cand) in catalog.vsr.iter().enumerate() {
        match opts.fixed_directions.get(c).copied().flatten() {
            Some(_) => b.ll.u_index.push(None),
            None => {
                b.ll.u_index.push(Some(b.ll.z_names.len()));
                b.ll.z_names.push(format!("u_{}", cand.branch_id));
            }
        }
    }

    // per-bus injection terms shared by both formulations
    let mut bus_terms: Vec<Vec<(usize, f64)>> = vec![Vec::new(); case.n_buses()];
    let mut bus_load = vec![0.0; case.n_buses()];
    for (n, g) in case.generators.iter().enumerate() {
        bus_terms[case.bus_idx(g.bus)].push((gens[n], 1.0));
    }
    for (w, f) in case.wind_farms.iter().enumerate() {
        bus_terms[case.bus_idx(f.bus)].push((wind[w], 1.0));
    }
    for (m, l) in case.loads.iter().enumerate() {
        let i = case.bus_idx(l.bus);
        bus_load[i] += op.load_mw[m];
        if let Some(&s) = shed.get(m) {
            bus_terms[i].push((s, 1.0));
        }
    }
    // FACTS transfer: -ψ at the from bus, +ψ at the to bus
    let mut facts_terms: Vec<(usize, usize, usize)> = Vec::new();
    for (c, cand) in catalog.vsr.iter().enumerate() {
        let (fr, to) = case.ends(cand.branch);
        facts_terms.push((vsr_vars[c].0, fr, to));
    }
    for (c, cand) in catalog.pst.iter().enumerate() {
        let (fr, to) = case.ends(cand.branch);
        facts_terms.push((pst_vars[c], fr, to));
    }

    if let Some(h) = ptdf {
        for &k in &flow_lines {
            let row = h.row(k).ok_or(MarketError::UnmonitoredBranch(case.branches[k].id))?;
            let mut y = vec![(flows[&k], 1.0)];
            let mut rhs = 0.0;
            for (i, terms) in bus_terms.iter().enumerate() {
                if row[i] == 0.0 {
                    continue;
                }
                y.extend(terms.iter().map(|&(j, a)| (j, -row[i] * a)));
                rhs -= row[i] * bus_load[i];
            }
            for &(psi, fr, to) in &facts_terms {
                let coeff = row[fr] - row[to];
                if coeff != 0.0 {
                    y.push((psi, coeff));
                }
            }
            b.row(format!("eq12f_line{}", case.branches[k].id), y, Sense::Eq, rhs);
        }
        let y: Vec<(usize, f64)> = bus_terms.iter().flatten().copied().collect();
        b.row("eq12g".into(), y, Sense::Eq, bus_load.iter().sum());
    } else {
        let susc = branch_susceptance(case);
        for &k in &flow_lines {
            let (i, j) = case.ends(k);
            let s = case.base_mva * susc[k];
            b.row(
                format!("eq31b_line{}", case.branches[k].id),
                vec![(flows[&k], 1.0), (angles[i], -s), (angles[j], s)],
                Sense::Eq,
                0.0,
            );
        }
        for i in 0..case.n_buses() {
            let mut y = bus_terms[i].clone();
            for &k in &flow_lines {
                let (fr, to) = case.ends(k);
                if fr == i {
                    y.push((flows[&k], -1.0));
                } else if to == i {
                    y.push((flows[&k], 1.0));
                }
            }
            for &(psi, fr, to) in &facts_terms {
                if fr == i {
                    y.push((psi, -1.0));
                } else if to == i {
                    y.push((psi, 1.0));
                }
            }
            b.row(format!("eq31c_bus{}", case.buses[i].id), y, Sense::Eq, bus_load[i]);
        }
        let r = case.reference_index();
        b.row("eq31f".into(), vec![(angles[r], 1.0)], Sense::Eq, 0.0);
    }

    for (w, f) in case.wind_farms.iter().enumerate() {
        if let Some(&sp) = spill.get(w) {
            b.row(format!("eq12h_w{}", f.id), vec![(sp, 1.0), (wind[w], 1.0)], Sense::Eq, op.wind_mw[w]);
        }
        b.row(format!("eq12i_w{}_lo", f.id), vec![(wind[w], 1.0)], Sense::Ge, 0.0);
        b.row(format!("eq12i_w{}_hi", f.id), vec![(wind[w], 1.0)], Sense::Le, op.wind_mw[w]);
    }
    for (n, g) in case.generators.iter().enumerate() {
        b.row(format!("eq12j_g{}_lo", g.id), vec![(gens[n], 1.0)], Sense::Ge, g.p_min);
        b.row(format!("eq12j_g{}_hi", g.id), vec![(gens[n], 1.0)], Sense::Le, g.p_max);
    }
    let mut line_devices: HashMap<usize, Vec<usize>> = HashMap::new();
    for &(psi, _, _) in &facts_terms {
        let k = b.ll.y_roles[psi];
        let branch = match k {
            Role::PsiVsr(c) => catalog.vsr[c].branch,
            Role::PsiPst(c) => catalog.pst[c].branch,
            _ => unreachable!(),
        };
        line_devices.entry(branch).or_default().push(psi);
    }
    for &k in &flow_lines {
        let br = &case.branches[k];
        let p = flows[&k];
        let (tag, mut y) = match line_devices.get(&k) {
            None => ("eq12k", vec![(p, 1.0)]),
            Some(psis) => {
                let tag = if catalog.vsr.iter().any(|c| c.branch == k) { "eq12l" } else { "eq12m" };
                (tag, std::iter::once((p, 1.0)).chain(psis.iter().map(|&s| (s, 1.0))).collect())
            }
        };
        y.shrink_to_fit();
        b.row(format!("{tag}_line{}_lo", br.id), y.clone(), Sense::Ge, -br.s_max);
        b.row(format!("{tag}_line{}_hi", br.id), y, Sense::Le, br.s_max);
    }
    for (m, l) in case.loads.iter().enumerate() {
        if let Some(&s) = shed.get(m) {
            b.row(format!("eq12n_d{}_lo", l.id), vec![(s, 1.0)], Sense::Ge, 0.0);
            b.row(format!("eq12n_d{}_hi", l.id), vec![(s, 1.0)], Sense::Le, op.load_mw[m]);
        }
    }

    for (c, cand) in catalog.pst.iter().enumerate() {
        let block = pst_block(cand);
        splice(&mut b.ll, &block, pst_vars[c], None, None, flows[&cand.branch], n_vsr + c, None);
    }
    for (c, cand) in catalog.vsr.iter().enumerate() {
        let block = vsr_block(cand.branch_id, cand.delta_b, cand.m1, cand.m2);
        let fixed_u = opts.fixed_directions.get(c).copied().flatten().map(|positive| if positive { 0.0 } else { 1.0 });
        let (psi, v) = vsr_vars[c];
        let u = b.ll.u_index[c];
        splice(&mut b.ll, &block, psi, Some(v), u, flows[&cand.branch], c, fixed_u);
    }
    Ok(b.ll)
}

#[allow(clippy::too_many_arguments)]
fn splice(
    ll: &mut LowerLevel,
    block: &InjectionBlock,
    psi: usize,
    v: Option<usize>,
    u: Option<usize>,
    flow: usize,
    decision: usize,
    fixed_u: Option<f64>,
) {
    for row in &block.rows {
        let mut out = LlRow {
            tag: format!("{}_b{}", row.tag, block.branch_id),
            y: Vec::new(),
            z: Vec::new(),
            x: Vec::new(),
            sense: Sense::Le,
            rhs: row.rhs,
        };
        for &(t, a) in &row.terms {
            match t {
                Term::Psi => out.y.push((psi, a)),
                Term::V => out.y.push((v.expect("VSR block has v"), a)),
                Term::Flow => out.y.push((flow, a)),
                Term::Decision => out.x.push((decision, a)),
                Term::U => match (u, fixed_u) {
                    (Some(j), _) => out.z.push((j, a)),
                    (None, Some(val)) => out.rhs -= a * val,
                    (None, None) => unreachable!("u is either a column or fixed"),
                },
            }
        }
        ll.rows.push(out);
    }
}

/// A lower level with the placement decisions pinned.
#[derive(Clone, Debug)]
pub struct MarketModel {
    pub lower: LowerLevel,
    pub decisions: Vec<f64>,
}

impl MarketModel {
    pub fn size(&self) -> ModelSize {
        self.lower.size()
    }

    pub fn handle(&self) -> Result<ModelHandle> {
        self.lower.handle(&self.decisions, &self.lower.w, &format!("market_t{}", self.lower.scenario_id))
    }

    pub fn to_lp_string(&self) -> Result<String> {
        Ok(self.handle()?.to_lp_string())
    }
}

/// Plain DCOPF without devices: wind farms act as zero-cost units bounded by
/// their availability; shedding columns only when `shedding_cost` is set.
pub fn build_dcopf(
    case: &NetworkCase,
    op: &OperatingPoint,
    formulation: Formulation,
    ptdf: Option<&PtdfMatrix>,
    shedding_cost: Option<f64>,
) -> Result<MarketModel> {
    let opts = LowerLevelOptions {
        formulation,
        shedding_cost,
        spill_cost: 0.0,
        explicit_spill: false,
        fixed_directions: Vec::new(),
    };
    let lower = build_lower_level_rows(case, op, ptdf, &DeviceCatalog::default(), &opts)?;
    Ok(MarketModel { lower, decisions: Vec::new() })
}

/// FACTS-aware lower level at fixed placements `x` (δ then α, each 0/1).
pub fn build_lower_level(
    case: &NetworkCase,
    op: &OperatingPoint,
    ptdf: Option<&PtdfMatrix>,
    catalog: &DeviceCatalog,
    x: &[f64],
    opts: &LowerLevelOptions,
) -> Result<MarketModel> {
    let lower = build_lower_level_rows(case, op, ptdf, catalog, opts)?;
    if x.len() != lower.n_x {
        return Err(MarketError::DecisionLength { got: x.len(), expected: lower.n_x });
    }
    Ok(MarketModel { lower, decisions: x.to_vec() })
}

#[derive(Clone, Debug, Serialize)]
pub struct DeviceSetpoint {
    pub branch_id: usize,
    pub kind: &'static str,
    pub injection_mw: f64,
    /// Δb for VSRs, phase shift (rad) for PSTs; None when undefined.
    pub setting: Option<f64>,
}

#[derive(Clone, Debug, Serialize)]
pub struct MarketOutcome {
    pub scenario_id: usize,
    pub status: String,
    pub objective: f64,
    pub dispatch: Vec<f64>,
    pub wind_used: Vec<f64>,
    pub spill: Vec<f64>,
    pub shed: Vec<f64>,
    /// (branch id, pre-device flow, effective flow) for every modeled line.
    pub flows: Vec<(usize, f64, f64)>,
    pub devices: Vec<DeviceSetpoint>,
    /// Shadow prices by constraint tag (LP or polished MILP).
    pub duals: Vec<(String, f64)>,
    /// Full primal vector in lower-level column order (y then z).
    #[serde(skip)]
    pub primal: Vec<f64>,
}

impl MarketOutcome {
    pub fn total_spill(&self) -> f64 {
        self.spill.iter().sum()
    }

    pub fn total_shed(&self) -> f64 {
        self.shed.iter().sum()
    }
}

/// Round the z part of a MILP solution and re-solve the LP for clean
/// continuous values and duals.
pub(crate) fn polish(handle: &ModelHandle, n_y: usize, primal: &[f64]) -> Result<crate::milp::DualSolution> {
    let fixings: Vec<(VarId, f64)> = (n_y..handle.num_vars()).map(|j| (VarId(j), primal[j].round())).collect();
    Ok(handle.fix_and_dualize(&fixings)?)
}

fn dump_model(handle: &ModelHandle) -> String {
    let path: PathBuf = std::env::temp_dir().join(format!("{}-{}.lp", handle.name(), std::process::id()));
    match std::fs::write(&path, handle.to_lp_string()) {
        Ok(()) => path.display().to_string(),
        Err(e) => format!("<unwritable: {e}>"),
    }
}

pub fn solve_market(case: &NetworkCase, catalog: &DeviceCatalog, model: &MarketModel) -> Result<MarketOutcome> {
    let handle = model.handle()?;
    let first = handle.solve()?;
    if first.status != SolveStatus::Optimal {
        return Err(MarketError::Solve { status: first.status, dump: dump_model(&handle) });
    }
    let ll = &model.lower;
    let dual = match polish(&handle, ll.n_y(), &first.primal) {
        Ok(d) => d,
        Err(MarketError::Milp(MilpError::NotOptimal(status))) => {
            return Err(MarketError::Solve { status, dump: dump_model(&handle) })
        }
        Err(e) => return Err(e),
    };
    let primal = dual.result.primal.clone();
    let y = &primal[..ll.n_y()];
    let pick = |role: Role| ll.var(role).map_or(0.0, |j| y[j]);
    let wind_used: Vec<f64> = (0..case.wind_farms.len()).map(|w| pick(Role::WindUsed(w))).collect();
    let spill: Vec<f64> = (0..case.wind_farms.len())
        .map(|w| match ll.var(Role::Spill(w)) {
            Some(j) => y[j],
            None => {
                let avail = handle.row_by_tag(&format!("eq12i_w{}_hi", case.wind_farms[w].id)).map(|r| handle.constraints()[r.0].rhs);
                avail.unwrap_or(0.0) - wind_used[w]
            }
        })
        .collect();
    let mut devices = Vec::new();
    let mut extra: HashMap<usize, f64> = HashMap::new();
    for (c, cand) in catalog.vsr.iter().enumerate() {
        if let Some(j) = ll.var(Role::PsiVsr(c)) {
            let psi = y[j];
            let flow = pick(Role::Flow(cand.branch));
            *extra.entry(cand.branch).or_default() += psi;
            devices.push(DeviceSetpoint {
                branch_id: cand.branch_id,
                kind: "VSR",
                injection_mw: psi,
                setting: (flow.abs() > 1e-9).then(|| psi / flow),
            });
        }
    }
    let susc = branch_susceptance(case);
    for (c, cand) in catalog.pst.iter().enumerate() {
        if let Some(j) = ll.var(Role::PsiPst(c)) {
            let psi = y[j];
            *extra.entry(cand.branch).or_default() += psi;
            devices.push(DeviceSetpoint {
                branch_id: cand.branch_id,
                kind: "PST",
                injection_mw: psi,
                setting: Some(psi / (case.base_mva * susc[cand.branch])),
            });
        }
    }
    let flows = ll
        .flow_lines
        .iter()
        .map(|&k| {
            let p = pick(Role::Flow(k));
            (case.branches[k].id, p, p + extra.get(&k).copied().unwrap_or(0.0))
        })
        .collect();
    let shadow = dual.result.duals.clone().unwrap_or_default();
    Ok(MarketOutcome {
        scenario_id: ll.scenario_id,
        status: "optimal".into(),
        objective: ll.lower_objective(y),
        dispatch: (0..case.generators.len()).map(|n| pick(Role::Gen(n))).collect(),
        wind_used,
        spill,
        shed: (0..case.loads.len()).map(|m| pick(Role::Shed(m))).collect(),
        flows,
        devices,
        duals: handle.constraints().iter().map(|r| r.tag.clone()).zip(shadow).collect(),
        primal,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::fixtures::*;
    use crate::network::{compute_ptdf, CaseFile, Generator, Load, WindFarm};

    fn op(case: &NetworkCase, load_scale: f64, wind: Vec<f64>) -> OperatingPoint {
        OperatingPoint { id: 1, hours: 1.0, load_mw: case.loads.iter().map(|l| l.peak * load_scale).collect(), wind_mw: wind }
    }

    fn solve_both(case: &NetworkCase, op: &OperatingPoint, shed: Option<f64>) -> (f64, f64) {
        let h = compute_ptdf(case, None).unwrap();
        let a = build_dcopf(case, op, Formulation::BTheta, None, shed).unwrap();
        let b = build_dcopf(case, op, Formulation::ShiftFactor, Some(&h), shed).unwrap();
        let cat = DeviceCatalog::default();
        (solve_market(case, &cat, &a).unwrap().objective, solve_market(case, &cat, &b).unwrap().objective)
    }

    #[test]
    fn two_bus_dispatch() {
        let case = NetworkCase::new(two_bus()).unwrap();
        let (bt, sf) = solve_both(&case, &op(&case, 1.0, vec![]), None);
        assert!((bt - 1500.0).abs() < 1e-6 && (sf - 1500.0).abs() < 1e-6);
    }

    #[test]
    fn two_bus_shedding_when_congested() {
        let mut f = two_bus();
        f.branches[0].s_max = 100.0;
        let case = NetworkCase::new(f).unwrap();
        let (bt, sf) = solve_both(&case, &op(&case, 1.0, vec![]), Some(5000.0));
        assert!((bt - 251_000.0).abs() < 1e-6 && (sf - 251_000.0).abs() < 1e-6, "{bt} {sf}");
    }

    #[test]
    fn zero_load_zero_cost() {
        let case = NetworkCase::new(two_bus()).unwrap();
        let (bt, sf) = solve_both(&case, &op(&case, 0.0, vec![]), Some(5000.0));
        assert!(bt.abs() < 1e-9 && sf.abs() < 1e-9);
    }

    #[test]
    fn table_v_sizes() {
        let case = NetworkCase::new(three_bus_ring()).unwrap();
        let o = op(&case, 1.0, vec![]);
        let h = compute_ptdf(&case, None).unwrap();
        let (nb, nl, ng) = (3, 3, 2);
        let bt = build_dcopf(&case, &o, Formulation::BTheta, None, None).unwrap().size();
        assert_eq!((bt.continuous, bt.equalities, bt.inequalities), (nb + nl + ng, nl + nb + 1, 2 * nl + 2 * ng));
        let sf = build_dcopf(&case, &o, Formulation::ShiftFactor, Some(&h), None).unwrap().size();
        assert_eq!((sf.continuous, sf.equalities, sf.inequalities), (ng + nl, nl + 1, 2 * nl + 2 * ng));
    }

    #[test]
    fn radial_wind_spills_behind_small_line() {
        // wind bus 1 exports over a 60 MW line to a load of 200 MW at bus 2
        let f = CaseFile {
            base_mva: 100.0,
            buses: vec![bus(1, false), bus(2, true)],
            branches: vec![line(1, 1, 2, 0.1, 60.0)],
            generators: vec![Generator { id: 1, bus: 2, cost: 30.0, p_min: 0.0, p_max: 500.0 }],
            loads: vec![Load { id: 1, bus: 2, peak: 200.0 }],
            wind_farms: vec![WindFarm { id: 1, bus: 1, capacity: 100.0, intensity_scale: 1.0 }],
        };
        let case = NetworkCase::new(f).unwrap();
        let h = compute_ptdf(&case, None).unwrap();
        let o = op(&case, 1.0, vec![100.0]);
        let m = build_lower_level(&case, &o, Some(&h), &DeviceCatalog::default(), &[], &LowerLevelOptions::default()).unwrap();
        let out = solve_market(&case, &DeviceCatalog::default(), &m).unwrap();
        assert!((out.spill[0] - 40.0).abs() < 1e-6);
        assert!((out.wind_used[0] + out.spill[0] - 100.0).abs() < 1e-9);
        assert!((out.objective - 30.0 * 140.0).abs() < 1e-6);
    }

    #[test]
    fn shedding_capped_by_demand() {
        let mut f = two_bus();
        f.generators[0].p_max = 0.0;
        f.loads[0].peak = 50.0;
        let case = NetworkCase::new(f).unwrap();
        let h = compute_ptdf(&case, None).unwrap();
        let m = build_lower_level(&case, &op(&case, 1.0, vec![]), Some(&h), &DeviceCatalog::default(), &[], &LowerLevelOptions::default()).unwrap();
        let out = solve_market(&case, &DeviceCatalog::default(), &m).unwrap();
        assert!((out.shed[0] - 50.0).abs() < 1e-9);
    }
}
