//! Series FACTS injection models (PST, VSR), their exact linearizations,
//! big-M constants and investment costs.

use thiserror::Error;

use crate::network::{branch_susceptance, NetworkCase};

#[derive(Debug, Error, PartialEq)]
pub enum DeviceError {
    #[error("total reactance nonpositive: compensation fraction {0} <= -1")]
    NonpositiveReactance(f64),
    #[error("compensation range is empty: min {min} > max {max}")]
    EmptyRange { min: f64, max: f64 },
    #[error("branch id {0} is not a {1} candidate")]
    NotCandidate(usize, &'static str),
    #[error("unknown candidate branch id {0}")]
    UnknownBranch(usize),
    #[error("VSR candidate on branch {0} has a zero-width susceptance range (M1 = 0)")]
    DegenerateRange(usize),
    #[error("invalid device parameter: {0}")]
    Invalid(String),
}

pub type Result<T> = std::result::Result<T, DeviceError>;

/// Relative susceptance change bounds for a VSR whose series compensation
/// spans `[x_min_frac, x_max_frac] * x_k`.
pub fn delta_b_bounds(x_k: f64, x_min_frac: f64, x_max_frac: f64) -> Result<(f64, f64)> {
    if x_min_frac <= -1.0 {
        return Err(DeviceError::NonpositiveReactance(x_min_frac));
    }
    if x_min_frac > x_max_frac {
        return Err(DeviceError::EmptyRange { min: x_min_frac, max: x_max_frac });
    }
    if !(x_k > 0.0) {
        return Err(DeviceError::Invalid(format!("reactance {x_k} must be positive")));
    }
    let x_min = x_min_frac * x_k;
    let x_max = x_max_frac * x_k;
    Ok((-x_max / (x_k + x_max), -x_min / (x_k + x_min)))
}

/// (M_k1, M_k2) with the default scales 2 and 3.5.
pub fn big_m_values(delta_b: (f64, f64), s_max: f64) -> (f64, f64) {
    big_m_values_scaled(delta_b, s_max, 2.0, 3.5)
}

pub fn big_m_values_scaled(delta_b: (f64, f64), s_max: f64, m1_scale: f64, m2_scale: f64) -> (f64, f64) {
    let widest = delta_b.0.abs().max(delta_b.1.abs());
    (m1_scale * widest * s_max, m2_scale * s_max)
}

/// Total PST cost in dollars for a line rated `s_max` MW at `per_kva` $/kVA.
pub fn pst_cost(s_max: f64) -> f64 {
    pst_cost_with_rate(s_max, 100.0)
}

pub fn pst_cost_with_rate(s_max: f64, per_kva: f64) -> f64 {
    per_kva * s_max * 1000.0
}

/// TCSC unit cost in $/kVar for a compensation level `s_v` in MVar.
pub fn tcsc_unit_cost(s_v: f64) -> f64 {
    0.0015 * s_v * s_v - 0.713 * s_v + 153.75
}

/// TCSC compensation level (MVar) and total cost ($).
pub fn tcsc_cost(s_max: f64, base_mva: f64, x_bar: f64) -> (f64, f64) {
    let s_v = s_max * s_max / base_mva * x_bar;
    (s_v, tcsc_unit_cost(s_v) * s_v * 1000.0)
}

pub fn annuity_factor(rate: f64, lifetime: f64) -> f64 {
    if rate == 0.0 {
        return 1.0 / lifetime;
    }
    let growth = (1.0 + rate).powf(lifetime);
    rate * growth / (growth - 1.0)
}

/// Yearly equivalent of a capital cost.
pub fn annualize(cost: f64, rate: f64, lifetime: f64) -> f64 {
    cost * annuity_factor(rate, lifetime)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum DeviceKind {
    Vsr,
    Pst,
}

impl DeviceKind {
    pub fn label(self) -> &'static str {
        match self {
            DeviceKind::Vsr => "VSR",
            DeviceKind::Pst => "PST",
        }
    }
}

/// Participants of an injection block's rows.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Term {
    /// Injection ψ (MW), owned by the block.
    Psi,
    /// v = δ·P (MW), owned by VSR blocks.
    V,
    /// Flow-direction binary u, owned by VSR blocks.
    U,
    /// Pre-device flow P_k on the branch, owned by the market model.
    Flow,
    /// Placement decision (δ_k or α_k), owned by the upper level.
    Decision,
}

#[derive(Clone, Debug)]
pub struct BlockRow {
    pub tag: &'static str,
    pub terms: Vec<(Term, f64)>,
    /// Every row reads `Σ terms <= rhs`.
    pub rhs: f64,
}

impl BlockRow {
    pub fn lhs(&self, value: impl Fn(Term) -> f64) -> f64 {
        self.terms.iter().map(|&(t, a)| a * value(t)).sum()
    }
}

/// Linear rows and local variables that model one device on one branch.
#[derive(Clone, Debug)]
pub struct InjectionBlock {
    pub kind: DeviceKind,
    pub branch_id: usize,
    /// Variables the block introduces (ψ; or ψ, v, u).
    pub variables: Vec<Term>,
    pub rows: Vec<BlockRow>,
}

impl InjectionBlock {
    pub fn is_feasible(&self, value: impl Fn(Term) -> f64, tol: f64) -> bool {
        self.rows.iter().all(|r| r.lhs(&value) <= r.rhs + tol)
    }

    /// Rows whose coefficient on the placement decision is nonzero.
    pub fn decision_rows(&self) -> impl Iterator<Item = &BlockRow> {
        self.rows.iter().filter(|r| r.terms.iter().any(|&(t, a)| t == Term::Decision && a != 0.0))
    }
}

#[derive(Clone, Debug)]
pub struct VsrCandidate {
    pub branch: usize,
    pub branch_id: usize,
    pub delta_b: (f64, f64),
    pub m1: f64,
    pub m2: f64,
    /// Compensation level (MVar) used for costing.
    pub rating_mvar: f64,
    pub capital_cost: f64,
    pub annual_cost: f64,
}

#[derive(Clone, Debug)]
pub struct PstCandidate {
    pub branch: usize,
    pub branch_id: usize,
    /// Phase-shift range in radians.
    pub angle: (f64, f64),
    /// Injection range in MW for α = 1: S_b·b_k·θ.
    pub injection: (f64, f64),
    pub capital_cost: f64,
    pub annual_cost: f64,
}

/// Injection range in p.u. for a PST with susceptance `b` and angle range.
pub fn pst_injection_limits(b: f64, angle: (f64, f64)) -> (f64, f64) {
    (b * angle.0, b * angle.1)
}

#[derive(Clone, Debug)]
pub struct DeviceParams {
    pub comp_min_frac: f64,
    pub comp_max_frac: f64,
    pub pst_angle_deg: f64,
    pub pst_per_kva: f64,
    pub rate: f64,
    pub lifetime: f64,
    pub m1_scale: f64,
    pub m2_scale: f64,
}

impl Default for DeviceParams {
    fn default() -> Self {
        Self {
            comp_min_frac: -0.7,
            comp_max_frac: 0.2,
            pst_angle_deg: 10.0,
            pst_per_kva: 100.0,
            rate: 0.05,
            lifetime: 5.0,
            m1_scale: 2.0,
            m2_scale: 3.5,
        }
    }
}

/// Candidate sets with all per-candidate constants resolved.
#[derive(Clone, Debug, Default)]
pub struct DeviceCatalog {
    pub vsr: Vec<VsrCandidate>,
    pub pst: Vec<PstCandidate>,
}

impl DeviceCatalog {
    pub fn build(case: &NetworkCase, vsr_ids: &[usize], pst_ids: &[usize], params: &DeviceParams) -> Result<Self> {
        if !(params.rate >= 0.0 && params.lifetime >= 1.0) {
            return Err(DeviceError::Invalid("finance.rate must be >= 0 and finance.lifetime >= 1".into()));
        }
        if !(params.m1_scale > 0.0 && params.m2_scale > 0.0) {
            return Err(DeviceError::Invalid("big-M scales must be positive".into()));
        }
        let b = branch_susceptance(case);
        let factor = annuity_factor(params.rate, params.lifetime);
        let mut vsr = Vec::with_capacity(vsr_ids.len());
        for &id in vsr_ids {
            let k = case.branch_idx(id).ok_or(DeviceError::UnknownBranch(id))?;
            let br = &case.branches[k];
            let delta_b = delta_b_bounds(br.x, params.comp_min_frac, params.comp_max_frac)?;
            let (m1, m2) = big_m_values_scaled(delta_b, br.s_max, params.m1_scale, params.m2_scale);
            if m1 <= 0.0 || delta_b.0 == delta_b.1 {
                return Err(DeviceError::DegenerateRange(id));
            }
            let x_bar = params.comp_min_frac.abs() * br.x;
            let (rating_mvar, capital_cost) = tcsc_cost(br.s_max, case.base_mva, x_bar);
            vsr.push(VsrCandidate {
                branch: k,
                branch_id: id,
                delta_b,
                m1,
                m2,
                rating_mvar,
                capital_cost,
                annual_cost: capital_cost * factor,
            });
        }
        let theta = params.pst_angle_deg.abs().to_radians();
        let mut pst = Vec::with_capacity(pst_ids.len());
        for &id in pst_ids {
            let k = case.branch_idx(id).ok_or(DeviceError::UnknownBranch(id))?;
            let br = &case.branches[k];
            let (lo, hi) = pst_injection_limits(b[k], (-theta, theta));
            let capital_cost = pst_cost_with_rate(br.s_max, params.pst_per_kva);
            pst.push(PstCandidate {
                branch: k,
                branch_id: id,
                angle: (-theta, theta),
                injection: (lo * case.base_mva, hi * case.base_mva),
                capital_cost,
                annual_cost: capital_cost * factor,
            });
        }
        Ok(Self { vsr, pst })
    }

    pub fn n_decisions(&self) -> usize {
        self.vsr.len() + self.pst.len()
    }

    pub fn vsr_by_id(&self, id: usize) -> Option<&VsrCandidate> {
        self.vsr.iter().find(|c| c.branch_id == id)
    }

    pub fn pst_by_id(&self, id: usize) -> Option<&PstCandidate> {
        self.pst.iter().find(|c| c.branch_id == id)
    }

    pub fn pst_injection_block(&self, branch_id: usize) -> Result<InjectionBlock> {
        let c = self.pst_by_id(branch_id).ok_or(DeviceError::NotCandidate(branch_id, "PST"))?;
        Ok(pst_block(c))
    }

    pub fn vsr_injection_block(&self, branch_id: usize) -> Result<InjectionBlock> {
        let c = self.vsr_by_id(branch_id).ok_or(DeviceError::NotCandidate(branch_id, "VSR"))?;
        Ok(vsr_block(c.branch_id, c.delta_b, c.m1, c.m2))
    }
}

/// α·ψmin <= ψ <= α·ψmax.
pub fn pst_block(c: &PstCandidate) -> InjectionBlock {
    let (lo, hi) = c.injection;
    InjectionBlock {
        kind: DeviceKind::Pst,
        branch_id: c.branch_id,
        variables: vec![Term::Psi],
        rows: vec![
            BlockRow { tag: "eq2_lo", terms: vec![(Term::Psi, -1.0), (Term::Decision, lo)], rhs: 0.0 },
            BlockRow { tag: "eq2_hi", terms: vec![(Term::Psi, 1.0), (Term::Decision, -hi)], rhs: 0.0 },
        ],
    }
}

/// Big-M linearization of ψ = δ·Δb·P with u selecting the sign of P
/// (u = 0 for P >= 0).
pub fn vsr_block(branch_id: usize, delta_b: (f64, f64), m1: f64, m2: f64) -> InjectionBlock {
    use Term::*;
    let (db_min, db_max) = delta_b;
    InjectionBlock {
        kind: DeviceKind::Vsr,
        branch_id,
        variables: vec![Psi, V, U],
        rows: vec![
            BlockRow { tag: "eq8_lo", terms: vec![(V, -1.0), (Decision, -m2)], rhs: 0.0 },
            BlockRow { tag: "eq8_hi", terms: vec![(V, 1.0), (Decision, -m2)], rhs: 0.0 },
            BlockRow { tag: "eq9_lo", terms: vec![(Flow, 1.0), (V, -1.0), (Decision, m2)], rhs: m2 },
            BlockRow { tag: "eq9_hi", terms: vec![(V, 1.0), (Flow, -1.0), (Decision, m2)], rhs: m2 },
            BlockRow { tag: "eq10_lo", terms: vec![(V, db_min), (Psi, -1.0), (U, -m1)], rhs: 0.0 },
            BlockRow { tag: "eq10_hi", terms: vec![(Psi, 1.0), (V, -db_max), (U, -m1)], rhs: 0.0 },
            BlockRow { tag: "eq11_lo", terms: vec![(V, db_max), (Psi, -1.0), (U, m1)], rhs: m1 },
            BlockRow { tag: "eq11_hi", terms: vec![(Psi, 1.0), (V, -db_min), (U, m1)], rhs: m1 },
        ],
    }
}
