//! Backend-agnostic LP/MILP modeling layer.
//!
//! Every optimization model in the crate is assembled through [`ModelHandle`]
//! and solved by the HiGHS backend. Rows are one-sided (`<=`, `>=`, `=`), so a
//! two-sided limit always shows up as two rows; this keeps model-size
//! accounting and dual extraction uniform.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::time::Instant;

use highs::{HighsModelStatus, RowProblem, Sense as HighsSense};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum MilpError {
    #[error("duplicate variable name `{0}`")]
    DuplicateVariable(String),
    #[error("duplicate constraint tag `{0}`")]
    DuplicateTag(String),
    #[error("non-finite value in {0}")]
    NonFinite(String),
    #[error("unknown variable id {0}")]
    UnknownVariable(usize),
    #[error("invalid bounds [{lower}, {upper}] for variable `{name}`")]
    InvalidBounds { name: String, lower: f64, upper: f64 },
    #[error("variable `{0}` is not fixed; dual extraction needs every integer variable fixed")]
    UnfixedInteger(String),
    #[error("model is {0:?} after fixing integer variables")]
    NotOptimal(SolveStatus),
    #[error("strong duality violated: primal {primal} vs dual {dual}")]
    DualityGap { primal: f64, dual: f64 },
    #[error("solver backend `highs` failed: {0}")]
    Backend(String),
}

pub type Result<T> = std::result::Result<T, MilpError>;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct VarId(pub usize);

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct RowId(pub usize);

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum VarKind {
    Continuous,
    Binary,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Sense {
    Le,
    Ge,
    Eq,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ObjSense {
    Minimize,
    Maximize,
}

#[derive(Clone, Debug)]
pub struct Variable {
    pub name: String,
    pub kind: VarKind,
    pub lower: f64,
    pub upper: f64,
}

#[derive(Clone, Debug)]
pub struct Constraint {
    pub tag: String,
    pub coeffs: Vec<(VarId, f64)>,
    pub sense: Sense,
    pub rhs: f64,
}

impl Constraint {
    pub fn activity(&self, values: &[f64]) -> f64 {
        self.coeffs.iter().map(|(v, a)| a * values[v.0]).sum()
    }

    /// Amount by which `values` violates the row (0 when satisfied).
    pub fn violation(&self, values: &[f64]) -> f64 {
        let lhs = self.activity(values);
        match self.sense {
            Sense::Le => (lhs - self.rhs).max(0.0),
            Sense::Ge => (self.rhs - lhs).max(0.0),
            Sense::Eq => (lhs - self.rhs).abs(),
        }
    }
}

#[derive(Clone, Debug)]
pub struct Objective {
    pub sense: ObjSense,
    pub coeffs: Vec<(VarId, f64)>,
    pub constant: f64,
}

impl Default for Objective {
    fn default() -> Self {
        Self { sense: ObjSense::Minimize, coeffs: Vec::new(), constant: 0.0 }
    }
}

#[derive(Clone, Debug)]
pub struct SolverOptions {
    pub mip_gap: f64,
    pub time_limit_s: Option<f64>,
    pub feasibility_tol: f64,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self { mip_gap: 1e-6, time_limit_s: None, feasibility_tol: 1e-9 }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SolveStatus {
    Optimal,
    Infeasible,
    Unbounded,
    TimeLimit,
    Error,
}

#[derive(Clone, Debug)]
pub struct SolveResult {
    pub status: SolveStatus,
    pub objective: f64,
    pub primal: Vec<f64>,
    /// Row shadow prices (d objective / d rhs). Present only for models
    /// without free integer variables.
    pub duals: Option<Vec<f64>>,
    pub reduced_costs: Option<Vec<f64>>,
    pub mip_gap: Option<f64>,
    /// Best proven bound for MILPs (equals `objective` at optimality).
    pub dual_bound: Option<f64>,
    pub wall_time_s: f64,
}

impl SolveResult {
    pub fn is_optimal(&self) -> bool {
        self.status == SolveStatus::Optimal
    }

    pub fn value(&self, v: VarId) -> f64 {
        self.primal[v.0]
    }

    pub fn has_solution(&self) -> bool {
        !self.primal.is_empty()
    }
}

/// LP duals after fixing every integer variable.
///
/// `multipliers` follow the stacked form `min c'y s.t. Ey = h, Py <= r`:
/// each `<=` row keeps its orientation, each `>=` row is read as its negation,
/// and the multipliers satisfy `c + P'λ + E'μ = 0` on the continuous columns
/// with `λ >= 0`.
#[derive(Clone, Debug)]
pub struct DualSolution {
    pub result: SolveResult,
    pub multipliers: Vec<f64>,
    pub primal_objective: f64,
    pub dual_objective: f64,
}

/// A model under construction. Single owner; distinct handles are independent.
#[derive(Clone, Debug, Default)]
pub struct ModelHandle {
    name: String,
    vars: Vec<Variable>,
    rows: Vec<Constraint>,
    objective: Objective,
    pub options: SolverOptions,
    var_names: HashMap<String, VarId>,
    tags: HashMap<String, RowId>,
}

fn check_finite(what: &str, x: f64) -> Result<()> {
    if x.is_finite() {
        Ok(())
    } else {
        Err(MilpError::NonFinite(what.to_string()))
    }
}

impl ModelHandle {
    pub fn new(name: impl Into<String>) -> Self {
        Self { name: name.into(), ..Default::default() }
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn add_variable(
        &mut self,
        name: impl Into<String>,
        kind: VarKind,
        lower: f64,
        upper: f64,
    ) -> Result<VarId> {
        let name = name.into();
        if lower.is_nan() || upper.is_nan() || lower > upper || lower == f64::INFINITY || upper == f64::NEG_INFINITY {
            return Err(MilpError::InvalidBounds { name, lower, upper });
        }
        if kind == VarKind::Binary && (lower < 0.0 || upper > 1.0) {
            return Err(MilpError::InvalidBounds { name, lower, upper });
        }
        if self.var_names.contains_key(&name) {
            return Err(MilpError::DuplicateVariable(name));
        }
        let id = VarId(self.vars.len());
        self.var_names.insert(name.clone(), id);
        self.vars.push(Variable { name, kind, lower, upper });
        Ok(id)
    }

    pub fn add_continuous(&mut self, name: impl Into<String>, lower: f64, upper: f64) -> Result<VarId> {
        self.add_variable(name, VarKind::Continuous, lower, upper)
    }

    pub fn add_free(&mut self, name: impl Into<String>) -> Result<VarId> {
        self.add_variable(name, VarKind::Continuous, f64::NEG_INFINITY, f64::INFINITY)
    }

    pub fn add_binary(&mut self, name: impl Into<String>) -> Result<VarId> {
        self.add_variable(name, VarKind::Binary, 0.0, 1.0)
    }

    pub fn add_constraint(
        &mut self,
        tag: impl Into<String>,
        coeffs: Vec<(VarId, f64)>,
        sense: Sense,
        rhs: f64,
    ) -> Result<RowId> {
        let tag = tag.into();
        for &(v, a) in &coeffs {
            if v.0 >= self.vars.len() {
                return Err(MilpError::UnknownVariable(v.0));
            }
            check_finite(&format!("coefficient of `{}` in `{tag}`", self.vars[v.0].name), a)?;
        }
        check_finite(&format!("rhs of `{tag}`"), rhs)?;
        if self.tags.contains_key(&tag) {
            return Err(MilpError::DuplicateTag(tag));
        }
        let id = RowId(self.rows.len());
        self.tags.insert(tag.clone(), id);
        self.rows.push(Constraint { tag, coeffs, sense, rhs });
        Ok(id)
    }

    pub fn set_objective(&mut self, sense: ObjSense, coeffs: Vec<(VarId, f64)>, constant: f64) -> Result<()> {
        for &(v, a) in &coeffs {
            if v.0 >= self.vars.len() {
                return Err(MilpError::UnknownVariable(v.0));
            }
            check_finite("objective coefficient", a)?;
        }
        check_finite("objective constant", constant)?;
        self.objective = Objective { sense, coeffs, constant };
        Ok(())
    }

    pub fn set_bounds(&mut self, v: VarId, lower: f64, upper: f64) -> Result<()> {
        let var = self.vars.get_mut(v.0).ok_or(MilpError::UnknownVariable(v.0))?;
        if lower.is_nan() || upper.is_nan() || lower > upper {
            return Err(MilpError::InvalidBounds { name: var.name.clone(), lower, upper });
        }
        var.lower = lower;
        var.upper = upper;
        Ok(())
    }

    pub fn variable(&self, v: VarId) -> &Variable {
        &self.vars[v.0]
    }

    pub fn variables(&self) -> &[Variable] {
        &self.vars
    }

    pub fn constraints(&self) -> &[Constraint] {
        &self.rows
    }

    pub fn objective(&self) -> &Objective {
        &self.objective
    }

    pub fn var_by_name(&self, name: &str) -> Option<VarId> {
        self.var_names.get(name).copied()
    }

    pub fn row_by_tag(&self, tag: &str) -> Option<RowId> {
        self.tags.get(tag).copied()
    }

    pub fn num_vars(&self) -> usize {
        self.vars.len()
    }

    pub fn num_rows(&self) -> usize {
        self.rows.len()
    }

    pub fn num_binaries(&self) -> usize {
        self.vars.iter().filter(|v| v.kind == VarKind::Binary).count()
    }

    pub fn num_equalities(&self) -> usize {
        self.rows.iter().filter(|r| r.sense == Sense::Eq).count()
    }

    pub fn num_inequalities(&self) -> usize {
        self.rows.len() - self.num_equalities()
    }

    fn has_free_integers(&self) -> bool {
        self.vars.iter().any(|v| v.kind == VarKind::Binary && v.lower != v.upper)
    }

    pub fn objective_value(&self, values: &[f64]) -> f64 {
        self.objective.constant + self.objective.coeffs.iter().map(|(v, c)| c * values[v.0]).sum::<f64>()
    }

    /// Largest row or bound violation of a candidate point.
    pub fn max_violation(&self, values: &[f64]) -> f64 {
        let rows = self.rows.iter().map(|r| r.violation(values)).fold(0.0, f64::max);
        let bounds = self
            .vars
            .iter()
            .zip(values)
            .map(|(v, &x)| (v.lower - x).max(x - v.upper).max(0.0))
            .fold(0.0, f64::max);
        rows.max(bounds)
    }

    pub fn solve(&self) -> Result<SolveResult> {
        let start = Instant::now();
        let mut problem = RowProblem::default();
        let mut cost = vec![0.0; self.vars.len()];
        for &(v, c) in &self.objective.coeffs {
            cost[v.0] += c;
        }
        let cols: Vec<_> = self
            .vars
            .iter()
            .zip(&cost)
            .map(|(v, &c)| match v.kind {
                VarKind::Continuous => problem.add_column(c, v.lower..=v.upper),
                // a fixed binary is a constant; keeping it integral would send HiGHS down the MIP path without duals
                VarKind::Binary if v.lower != v.upper => problem.add_integer_column(c, v.lower..=v.upper),
                VarKind::Binary => problem.add_column(c, v.lower..=v.upper),
            })
            .collect();
        for row in &self.rows {
            let mut merged: Vec<(usize, f64)> = Vec::with_capacity(row.coeffs.len());
            for &(v, a) in &row.coeffs {
                match merged.iter_mut().find(|(j, _)| *j == v.0) {
                    Some(entry) => entry.1 += a,
                    None => merged.push((v.0, a)),
                }
            }
            let entries: Vec<_> = merged.into_iter().filter(|&(_, a)| a != 0.0).map(|(j, a)| (cols[j], a)).collect();
            match row.sense {
                Sense::Le => problem.add_row(..=row.rhs, &entries),
                Sense::Ge => problem.add_row(row.rhs.., &entries),
                Sense::Eq => problem.add_row(row.rhs..=row.rhs, &entries),
            }
        }
        let sense = match self.objective.sense {
            ObjSense::Minimize => HighsSense::Minimise,
            ObjSense::Maximize => HighsSense::Maximise,
        };
        let mut model = problem
            .try_optimise(sense)
            .map_err(|e| MilpError::Backend(format!("{e:?}")))?;
        model.make_quiet();
        let is_mip = self.has_free_integers();
        if is_mip {
            model.set_option("mip_rel_gap", self.options.mip_gap);
            model.set_option("mip_abs_gap", 1e-9);
            model.set_option("mip_feasibility_tolerance", self.options.feasibility_tol.max(1e-10));
        }
        model.set_option("primal_feasibility_tolerance", self.options.feasibility_tol.max(1e-10));
        model.set_option("dual_feasibility_tolerance", self.options.feasibility_tol.max(1e-10));
        if let Some(limit) = self.options.time_limit_s {
            model.set_option("time_limit", limit);
        }
        let solved = model.try_solve().map_err(|e| MilpError::Backend(format!("{e:?}")))?;
        let raw_status = solved.status();
        let status = match raw_status {
            HighsModelStatus::Optimal | HighsModelStatus::ModelEmpty => SolveStatus::Optimal,
            HighsModelStatus::Infeasible => SolveStatus::Infeasible,
            HighsModelStatus::Unbounded => SolveStatus::Unbounded,
            HighsModelStatus::UnboundedOrInfeasible => {
                // presolve cannot tell; an all-zero-cost copy decides feasibility
                if self.is_feasible_ignoring_objective()? {
                    SolveStatus::Unbounded
                } else {
                    SolveStatus::Infeasible
                }
            }
            HighsModelStatus::ReachedTimeLimit => SolveStatus::TimeLimit,
            _ => SolveStatus::Error,
        };
        let has_point = matches!(status, SolveStatus::Optimal)
            || (status == SolveStatus::TimeLimit
                && solved.primal_solution_status() == highs::HighsSolutionStatus::Feasible);
        let solution = solved.get_solution();
        let primal = if has_point { solution.columns().to_vec() } else { Vec::new() };
        let (duals, reduced_costs) = if !is_mip && status == SolveStatus::Optimal {
            (Some(solution.dual_rows().to_vec()), Some(solution.dual_columns().to_vec()))
        } else {
            (None, None)
        };
        let (mip_gap, dual_bound) = if is_mip {
            let bound = solved.double_info_value(c"mip_dual_bound").ok();
            (Some(solved.mip_gap()), bound.map(|b| b + self.objective.constant))
        } else {
            (None, None)
        };
        let objective = if has_point { self.objective_value(&primal) } else { f64::NAN };
        Ok(SolveResult {
            status,
            objective,
            primal,
            duals,
            reduced_costs,
            mip_gap,
            dual_bound: if is_mip { dual_bound } else if has_point { Some(objective) } else { None },
            wall_time_s: start.elapsed().as_secs_f64(),
        })
    }

    fn is_feasible_ignoring_objective(&self) -> Result<bool> {
        let mut probe = self.clone();
        probe.objective = Objective::default();
        let r = probe.solve()?;
        Ok(r.status == SolveStatus::Optimal)
    }

    /// Fix the given variables, solve the remaining LP and return duals in the
    /// stacked-form convention, after checking strong duality.
    pub fn fix_and_dualize(&self, fixings: &[(VarId, f64)]) -> Result<DualSolution> {
        let mut lp = self.clone();
        for &(v, value) in fixings {
            check_finite("fixing value", value)?;
            lp.set_bounds(v, value, value)?;
        }
        if let Some(v) = lp.vars.iter().find(|v| v.kind == VarKind::Binary && v.lower != v.upper) {
            return Err(MilpError::UnfixedInteger(v.name.clone()));
        }
        let result = lp.solve()?;
        if result.status != SolveStatus::Optimal {
            return Err(MilpError::NotOptimal(result.status));
        }
        let shadow = result.duals.as_ref().expect("LP solve reports duals");
        let reduced = result.reduced_costs.as_ref().expect("LP solve reports reduced costs");
        let flip = if lp.objective.sense == ObjSense::Minimize { 1.0 } else { -1.0 };
        let multipliers: Vec<f64> = lp
            .rows
            .iter()
            .zip(shadow)
            .map(|(row, &y)| match row.sense {
                Sense::Le | Sense::Eq => -flip * y,
                Sense::Ge => flip * y,
            })
            .collect();
        let mut dual_objective = lp.objective.constant;
        for (row, &y) in lp.rows.iter().zip(shadow) {
            dual_objective += y * row.rhs;
        }
        for ((var, &s), &x) in lp.vars.iter().zip(reduced).zip(&result.primal) {
            if s != 0.0 {
                let bound = if (x - var.lower).abs() <= (x - var.upper).abs() { var.lower } else { var.upper };
                dual_objective += s * bound;
            }
        }
        let primal_objective = result.objective;
        let scale = primal_objective.abs().max(1.0);
        if (primal_objective - dual_objective).abs() > 1e-6 * scale {
            return Err(MilpError::DualityGap { primal: primal_objective, dual: dual_objective });
        }
        Ok(DualSolution { result, multipliers, primal_objective, dual_objective })
    }

    /// CPLEX-LP text rendering. Identical models give identical text.
    pub fn to_lp_string(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "\\ model {}", self.name);
        out.push_str(match self.objective.sense {
            ObjSense::Minimize => "Minimize\n",
            ObjSense::Maximize => "Maximize\n",
        });
        out.push_str(" obj:");
        let mut wrote = false;
        for &(v, c) in &self.objective.coeffs {
            write_term(&mut out, c, &lp_name(&self.vars[v.0].name), !wrote);
            wrote = true;
        }
        if self.objective.constant != 0.0 || !wrote {
            write_term(&mut out, self.objective.constant, "", !wrote);
        }
        out.push_str("\nSubject To\n");
        for row in &self.rows {
            let _ = write!(out, " {}:", lp_name(&row.tag));
            if row.coeffs.is_empty() {
                out.push_str(" 0");
            }
            for (i, &(v, a)) in row.coeffs.iter().enumerate() {
                write_term(&mut out, a, &lp_name(&self.vars[v.0].name), i == 0);
            }
            let op = match row.sense {
                Sense::Le => "<=",
                Sense::Ge => ">=",
                Sense::Eq => "=",
            };
            let _ = writeln!(out, " {op} {}", fmt_num(row.rhs));
        }
        out.push_str("Bounds\n");
        for v in &self.vars {
            let name = lp_name(&v.name);
            match (v.lower.is_finite(), v.upper.is_finite()) {
                (false, false) => {
                    let _ = writeln!(out, " {name} free");
                }
                (true, true) => {
                    let _ = writeln!(out, " {} <= {name} <= {}", fmt_num(v.lower), fmt_num(v.upper));
                }
                (true, false) => {
                    let _ = writeln!(out, " {name} >= {}", fmt_num(v.lower));
                }
                (false, true) => {
                    let _ = writeln!(out, " -inf <= {name} <= {}", fmt_num(v.upper));
                }
            }
        }
        let binaries: Vec<_> = self.vars.iter().filter(|v| v.kind == VarKind::Binary).collect();
        if !binaries.is_empty() {
            out.push_str("Binaries\n");
            for v in binaries {
                let _ = writeln!(out, " {}", lp_name(&v.name));
            }
        }
        out.push_str("End\n");
        out
    }
}

fn fmt_num(x: f64) -> String {
    format!("{x:?}")
}

fn write_term(out: &mut String, coeff: f64, name: &str, first: bool) {
    let sign = if coeff < 0.0 { "-" } else if first { "" } else { "+" };
    let magnitude = fmt_num(coeff.abs());
    if sign.is_empty() {
        let _ = write!(out, " {magnitude} {name}");
    } else {
        let _ = write!(out, " {sign} {magnitude} {name}");
    }
}

fn lp_name(raw: &str) -> String {
    raw.chars()
        .map(|c| if c.is_ascii_alphanumeric() || "_.[]".contains(c) { c } else { '_' })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn binary_gets_unit_bounds() {
        let mut m = ModelHandle::new("t");
        let u = m.add_binary("u").unwrap();
        assert_eq!(m.variable(u).lower, 0.0);
        assert_eq!(m.variable(u).upper, 1.0);
        assert!(m.add_variable("w", VarKind::Binary, 0.0, 2.0).is_err());
    }

    #[test]
    fn nan_coefficient_rejected() {
        let mut m = ModelHandle::new("t");
        let x = m.add_free("x").unwrap();
        let err = m.add_constraint("c", vec![(x, f64::NAN)], Sense::Le, 1.0).unwrap_err();
        assert!(matches!(err, MilpError::NonFinite(_)));
        assert!(m.add_constraint("c", vec![(x, 1.0)], Sense::Le, f64::INFINITY).is_err());
    }

    #[test]
    fn duplicate_ids_rejected() {
        let mut m = ModelHandle::new("t");
        let x = m.add_free("x").unwrap();
        assert!(matches!(m.add_free("x"), Err(MilpError::DuplicateVariable(_))));
        m.add_constraint("eq12g", vec![(x, 1.0)], Sense::Eq, 0.0).unwrap();
        assert_eq!(m.row_by_tag("eq12g"), Some(RowId(0)));
        assert!(matches!(
            m.add_constraint("eq12g", vec![(x, 1.0)], Sense::Eq, 0.0),
            Err(MilpError::DuplicateTag(_))
        ));
    }

    #[test]
    fn one_dimensional_lp() {
        let mut m = ModelHandle::new("t");
        let x = m.add_free("x").unwrap();
        m.add_constraint("lb", vec![(x, 1.0)], Sense::Ge, 3.0).unwrap();
        m.set_objective(ObjSense::Minimize, vec![(x, 1.0)], 0.0).unwrap();
        let r = m.solve().unwrap();
        assert_eq!(r.status, SolveStatus::Optimal);
        assert!((r.value(x) - 3.0).abs() < 1e-9);
        assert!((r.duals.unwrap()[0] - 1.0).abs() < 1e-9);
    }

    #[test]
    fn infeasible_and_unbounded() {
        let mut m = ModelHandle::new("t");
        let x = m.add_free("x").unwrap();
        m.add_constraint("a", vec![(x, 1.0)], Sense::Le, 0.0).unwrap();
        m.add_constraint("b", vec![(x, 1.0)], Sense::Ge, 1.0).unwrap();
        m.set_objective(ObjSense::Minimize, vec![(x, -1.0)], 0.0).unwrap();
        assert_eq!(m.solve().unwrap().status, SolveStatus::Infeasible);

        let mut m = ModelHandle::new("t");
        let x = m.add_free("x").unwrap();
        m.set_objective(ObjSense::Minimize, vec![(x, 1.0)], 0.0).unwrap();
        assert_eq!(m.solve().unwrap().status, SolveStatus::Unbounded);
    }

    #[test]
    fn knapsack_relaxation_duals_complementary() {
        // max 5a + 4b + 3c, 2a + 3b + c <= 5, 4a + b + 2c <= 11, 3a + 4b + 2c <= 8; one binary fixed
        let mut m = ModelHandle::new("knap");
        let a = m.add_continuous("a", 0.0, f64::INFINITY).unwrap();
        let b = m.add_continuous("b", 0.0, f64::INFINITY).unwrap();
        let c = m.add_continuous("c", 0.0, f64::INFINITY).unwrap();
        let s = m.add_binary("s").unwrap();
        m.add_constraint("r1", vec![(a, 2.0), (b, 3.0), (c, 1.0), (s, 1.0)], Sense::Le, 5.0).unwrap();
        m.add_constraint("r2", vec![(a, 4.0), (b, 1.0), (c, 2.0)], Sense::Le, 11.0).unwrap();
        m.add_constraint("r3", vec![(a, 3.0), (b, 4.0), (c, 2.0)], Sense::Le, 8.0).unwrap();
        m.set_objective(ObjSense::Maximize, vec![(a, 5.0), (b, 4.0), (c, 3.0), (s, 1.0)], 0.0).unwrap();
        let d = m.fix_and_dualize(&[(s, 1.0)]).unwrap();
        let x = &d.result.primal;
        let y = d.result.duals.as_ref().unwrap();
        for (row, &yi) in m.constraints().iter().zip(y) {
            let slack = row.rhs - row.activity(x);
            assert!((slack * yi).abs() < 1e-7, "{} slack {slack} dual {yi}", row.tag);
        }
        assert!((d.primal_objective - d.dual_objective).abs() < 1e-7);
    }

    #[test]
    fn equality_only_system() {
        let mut m = ModelHandle::new("eq");
        let x = m.add_free("x").unwrap();
        let y = m.add_free("y").unwrap();
        m.add_constraint("e1", vec![(x, 1.0), (y, 1.0)], Sense::Eq, 4.0).unwrap();
        m.add_constraint("e2", vec![(x, 1.0), (y, -1.0)], Sense::Eq, 2.0).unwrap();
        m.set_objective(ObjSense::Minimize, vec![(x, 2.0), (y, 1.0)], 0.0).unwrap();
        let d = m.fix_and_dualize(&[]).unwrap();
        // stationarity: c + E'mu = 0 -> mu1 + mu2 = -2, mu1 - mu2 = -1
        let mu = &d.multipliers;
        assert!((mu[0] + 1.5).abs() < 1e-9 && (mu[1] + 0.5).abs() < 1e-9, "{mu:?}");
        assert!((d.primal_objective - 7.0).abs() < 1e-9);
    }

    #[test]
    fn multipliers_follow_stacked_convention() {
        // min x + 2y, x + y >= 2 (read as -x - y <= -2), x <= 1.5, y free-ish
        let mut m = ModelHandle::new("conv");
        let x = m.add_free("x").unwrap();
        let y = m.add_free("y").unwrap();
        m.add_constraint("cover", vec![(x, 1.0), (y, 1.0)], Sense::Ge, 2.0).unwrap();
        m.add_constraint("xcap", vec![(x, 1.0)], Sense::Le, 1.5).unwrap();
        m.add_constraint("ylb", vec![(y, -1.0)], Sense::Le, 0.0).unwrap();
        m.set_objective(ObjSense::Minimize, vec![(x, 1.0), (y, 2.0)], 0.0).unwrap();
        let d = m.fix_and_dualize(&[]).unwrap();
        let lam = &d.multipliers;
        assert!(lam.iter().all(|&l| l >= -1e-12), "{lam:?}");
        // c + P'lambda = 0 with P rows: (-1,-1), (1,0), (0,-1)
        let gx = 1.0 - lam[0] + lam[1];
        let gy = 2.0 - lam[0] - lam[2];
        assert!(gx.abs() < 1e-9 && gy.abs() < 1e-9, "{lam:?}");
    }

    #[test]
    fn fix_and_dualize_requires_all_binaries() {
        let mut m = ModelHandle::new("t");
        let _ = m.add_binary("u").unwrap();
        assert!(matches!(m.fix_and_dualize(&[]), Err(MilpError::UnfixedInteger(_))));
    }

    #[test]
    fn lp_dump_is_deterministic_and_tagged() {
        let build = || {
            let mut m = ModelHandle::new("dump");
            let x = m.add_continuous("P_g[1]", 0.0, 10.0).unwrap();
            let u = m.add_binary("u_k7").unwrap();
            m.add_constraint("eq12f_line7", vec![(x, 1.0), (u, -2.5)], Sense::Le, 4.0).unwrap();
            m.set_objective(ObjSense::Minimize, vec![(x, 3.0)], 0.0).unwrap();
            m.to_lp_string()
        };
        let a = build();
        assert_eq!(a, build());
        assert!(a.contains("eq12f_line7: 1.0 P_g[1] - 2.5 u_k7 <= 4.0"));
        assert!(a.contains("Binaries\n u_k7"));
    }

    #[test]
    fn small_milp() {
        let mut m = ModelHandle::new("milp");
        let x = m.add_continuous("x", 0.0, f64::INFINITY).unwrap();
        let u = m.add_binary("u").unwrap();
        m.add_constraint("c", vec![(x, 1.0), (u, 1.0)], Sense::Ge, 3.0).unwrap();
        m.add_constraint("cap", vec![(x, 1.0), (u, 10.0)], Sense::Le, 10.0).unwrap();
        m.set_objective(ObjSense::Minimize, vec![(x, 1.0), (u, 1.5)], 0.0).unwrap();
        let r = m.solve().unwrap();
        assert_eq!(r.status, SolveStatus::Optimal);
        assert!((r.objective - 3.0).abs() < 1e-9);
        assert!(r.duals.is_none());
    }
}
