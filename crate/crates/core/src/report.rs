//! Planning report: placements, annual energies, costs and run metadata in a
//! fixed-width table, JSON and plot-ready CSV.

use std::fmt::Write as _;

use serde::Serialize;

use crate::bilevel::{BruteForceOutcome, CcgOutcome, CcgStatus, CompactForm, ScenarioResponse};
use crate::market::Role;
use crate::network::{btheta_flows, NetworkCase};
use crate::scenarios::OperatingPoint;

#[derive(Clone, Debug, Serialize)]
pub struct Placement {
    pub kind: &'static str,
    pub branch_id: usize,
    /// Annualized investment, $/yr.
    pub annual_cost: f64,
}

/// Per-scenario operating quantities under the chosen plan, MW.
#[derive(Clone, Debug, Serialize)]
pub struct ScenarioRow {
    pub id: usize,
    pub hours: f64,
    pub load_mw: f64,
    pub wind_available_mw: Vec<f64>,
    pub wind_used_mw: Vec<f64>,
    pub spill_mw: Vec<f64>,
    pub shed_mw: f64,
    /// g'y, $/h.
    pub upper_cost: f64,
}

/// A line left out of the reduced model whose limit the planned dispatch
/// violates.
#[derive(Clone, Debug, Serialize)]
pub struct LineViolation {
    pub scenario: usize,
    pub branch_id: usize,
    pub flow_mw: f64,
    pub limit_mw: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct RunMeta {
    pub status: String,
    pub iterations: usize,
    pub lb: f64,
    pub ub: f64,
    pub gap: f64,
    pub mp_seconds: f64,
    pub sp_seconds: f64,
    pub wall_seconds: f64,
    pub seed: Option<u64>,
    pub warnings: Vec<String>,
}

impl RunMeta {
    pub fn from_ccg(o: &CcgOutcome, seed: Option<u64>) -> Self {
        let status = match o.status {
            CcgStatus::Converged => "converged",
            CcgStatus::GapNotClosed => "gap not closed",
        };
        Self {
            status: status.into(),
            iterations: o.iterations(),
            lb: o.state.lb,
            ub: o.state.ub,
            gap: o.gap(),
            mp_seconds: o.mp_seconds,
            sp_seconds: o.sp_seconds,
            wall_seconds: o.wall_seconds,
            seed,
            warnings: o.warnings.clone(),
        }
    }

    pub fn from_brute_force(o: &BruteForceOutcome, seed: Option<u64>, wall_seconds: f64) -> Self {
        Self {
            status: format!("enumerated {} plans", o.evaluated.len()),
            iterations: 0,
            lb: o.objective,
            ub: o.objective,
            gap: 0.0,
            mp_seconds: 0.0,
            sp_seconds: wall_seconds,
            wall_seconds,
            seed,
            warnings: Vec::new(),
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct PlanReport {
    pub budget_vsr: usize,
    pub budget_pst: usize,
    pub x: Vec<u8>,
    pub placements: Vec<Placement>,
    pub investment_vsr: f64,
    pub investment_pst: f64,
    /// (farm id, MWh/yr).
    pub curtailment_mwh: Vec<(usize, f64)>,
    pub shedding_mwh: f64,
    pub spill_cost: f64,
    pub shed_cost: f64,
    /// f'x + Σ_t N_t g_t'y_t, $/yr.
    pub objective: f64,
    /// Annual dispatched wind over annual load energy.
    pub penetration: f64,
    pub scenarios: Vec<ScenarioRow>,
    pub unmonitored_violations: Vec<LineViolation>,
    pub meta: RunMeta,
}

fn pick(compact: &CompactForm, t: usize, r: &ScenarioResponse, role: Role) -> Option<f64> {
    compact.blocks[t].lower.var(role).map(|j| r.y[j])
}

// solver round-off around zero
fn clean(v: f64) -> f64 {
    if v.abs() < 1e-9 {
        0.0
    } else {
        v
    }
}

impl PlanReport {
    pub fn build(
        case: &NetworkCase,
        ops: &[OperatingPoint],
        compact: &CompactForm,
        x: &[f64],
        responses: &[ScenarioResponse],
        spill_cost: f64,
        shed_cost: f64,
        meta: RunMeta,
    ) -> Self {
        let mut placements = Vec::new();
        let (mut investment_vsr, mut investment_pst) = (0.0, 0.0);
        for (j, &v) in x.iter().enumerate() {
            if v < 0.5 {
                continue;
            }
            if j < compact.n_vsr {
                let c = &compact.catalog.vsr[j];
                investment_vsr += c.annual_cost;
                placements.push(Placement { kind: "VSR", branch_id: c.branch_id, annual_cost: c.annual_cost });
            } else {
                let c = &compact.catalog.pst[j - compact.n_vsr];
                investment_pst += c.annual_cost;
                placements.push(Placement { kind: "PST", branch_id: c.branch_id, annual_cost: c.annual_cost });
            }
        }

        let nw = case.wind_farms.len();
        let scenarios: Vec<ScenarioRow> = ops
            .iter()
            .zip(responses)
            .enumerate()
            .map(|(t, (op, r))| {
                let used: Vec<f64> = (0..nw).map(|w| pick(compact, t, r, Role::WindUsed(w)).unwrap_or(0.0)).collect();
                let spill = (0..nw)
                    .map(|w| pick(compact, t, r, Role::Spill(w)).map_or(op.wind_mw[w] - used[w], clean).max(0.0))
                    .collect();
                let shed = clean((0..case.loads.len()).filter_map(|m| pick(compact, t, r, Role::Shed(m))).sum());
                ScenarioRow {
                    id: op.id,
                    hours: op.hours,
                    load_mw: op.total_load(),
                    wind_available_mw: op.wind_mw.clone(),
                    wind_used_mw: used,
                    spill_mw: spill,
                    shed_mw: shed,
                    upper_cost: r.upper_cost,
                }
            })
            .collect();

        let curtailment_mwh = case
            .wind_farms
            .iter()
            .enumerate()
            .map(|(w, f)| (f.id, scenarios.iter().map(|s| s.hours * s.spill_mw[w]).sum()))
            .collect();
        let shedding_mwh = scenarios.iter().map(|s| s.hours * s.shed_mw).sum();
        let wind_energy: f64 = scenarios.iter().map(|s| s.hours * s.wind_used_mw.iter().sum::<f64>()).sum();
        let load_energy: f64 = scenarios.iter().map(|s| s.hours * s.load_mw).sum();
        let penetration = if load_energy > 0.0 { wind_energy / load_energy } else { 0.0 };

        Self {
            budget_vsr: compact.vsr_budget,
            budget_pst: compact.pst_budget,
            x: x.iter().map(|&v| u8::from(v > 0.5)).collect(),
            placements,
            investment_vsr,
            investment_pst,
            curtailment_mwh,
            shedding_mwh,
            spill_cost,
            shed_cost,
            objective: crate::bilevel::plan_objective(compact, x, responses),
            penetration,
            unmonitored_violations: unmonitored_violations(case, ops, compact, responses),
            scenarios,
            meta,
        }
    }

    pub fn investment(&self) -> f64 {
        self.investment_vsr + self.investment_pst
    }

    pub fn total_curtailment_mwh(&self) -> f64 {
        self.curtailment_mwh.iter().map(|c| c.1).sum()
    }

    /// investment + α·curtailment + β·shedding, from the printed quantities.
    pub fn components_total(&self) -> f64 {
        self.investment() + self.spill_cost * self.total_curtailment_mwh() + self.shed_cost * self.shedding_mwh
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    /// Fixed-width table, one row per plan, amounts in M$.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "# status: {}", self.meta.status);
        match self.meta.seed {
            Some(seed) => {
                let _ = writeln!(s, "# clustering seed: {seed}");
            }
            None => {
                let _ = writeln!(s, "# clustering seed: none (scenario table supplied)");
            }
        }
        let _ = writeln!(
            s,
            "# iterations: {}  LB: {:.2}  UB: {:.2}  gap: {:.3e}",
            self.meta.iterations, self.meta.lb, self.meta.ub, self.meta.gap
        );
        let _ = writeln!(
            s,
            "# time (s): master {:.2}  subproblems {:.2}  wall {:.2}",
            self.meta.mp_seconds, self.meta.sp_seconds, self.meta.wall_seconds
        );
        let vsr: Vec<String> = self.placements.iter().filter(|p| p.kind == "VSR").map(|p| p.branch_id.to_string()).collect();
        let pst: Vec<String> = self.placements.iter().filter(|p| p.kind == "PST").map(|p| p.branch_id.to_string()).collect();
        let show = |v: &[String]| if v.is_empty() { "-".to_string() } else { v.join(",") };
        let mut head = format!("{:>3} {:>3}  {:<14} {:<14} {:>12} {:>12}", "NV", "NP", "VSR lines", "PST lines", "VSR (M$)", "PST (M$)");
        for (id, _) in &self.curtailment_mwh {
            head.push_str(&format!(" {:>14}", format!("curt w{id} (MWh)")));
        }
        head.push_str(&format!(" {:>13} {:>14} {:>11}", "shed (MWh)", "objective (M$)", "penetration"));
        let _ = writeln!(s, "{head}");
        let mut row = format!(
            "{:>3} {:>3}  {:<14} {:<14} {:>12.4} {:>12.4}",
            self.budget_vsr,
            self.budget_pst,
            show(&vsr),
            show(&pst),
            self.investment_vsr / 1e6,
            self.investment_pst / 1e6
        );
        for (_, mwh) in &self.curtailment_mwh {
            row.push_str(&format!(" {mwh:>14.1}"));
        }
        row.push_str(&format!(" {:>13.1} {:>14.4} {:>11.4}", self.shedding_mwh, self.objective / 1e6, self.penetration));
        let _ = writeln!(s, "{row}");
        if !self.unmonitored_violations.is_empty() {
            let _ = writeln!(s, "# unmonitored lines over their limit under the planned dispatch:");
            for v in &self.unmonitored_violations {
                let _ = writeln!(s, "#   scenario {} line {}: {:.2} MW > {:.2} MW", v.scenario, v.branch_id, v.flow_mw.abs(), v.limit_mw);
            }
        }
        for w in &self.meta.warnings {
            let _ = writeln!(s, "# warning: {w}");
        }
        s
    }

    /// Per-scenario curtailment and shedding, one row per scenario.
    pub fn curtailment_csv(&self, case: &NetworkCase) -> String {
        let mut s = String::from("scenario,hours");
        for f in &case.wind_farms {
            let _ = write!(s, ",avail_w{0}_mw,used_w{0}_mw,spill_w{0}_mw,spill_w{0}_mwh", f.id);
        }
        s.push_str(",shed_mw,shed_mwh,cost_per_hour\n");
        for r in &self.scenarios {
            let _ = write!(s, "{},{}", r.id, r.hours);
            for w in 0..case.wind_farms.len() {
                let _ = write!(
                    s,
                    ",{:.6},{:.6},{:.6},{:.6}",
                    r.wind_available_mw[w],
                    r.wind_used_mw[w],
                    r.spill_mw[w],
                    r.hours * r.spill_mw[w]
                );
            }
            let _ = writeln!(s, ",{:.6},{:.6},{:.6}", r.shed_mw, r.hours * r.shed_mw, r.upper_cost);
        }
        s
    }
}

/// Re-simulate every scenario's planned dispatch on the full network and
/// list lines outside the reduced model that exceed their limit.
pub fn unmonitored_violations(
    case: &NetworkCase,
    ops: &[OperatingPoint],
    compact: &CompactForm,
    responses: &[ScenarioResponse],
) -> Vec<LineViolation> {
    let mut out = Vec::new();
    for ((block, r), op) in compact.blocks.iter().zip(responses).zip(ops) {
        let ll = &block.lower;
        if ll.flow_lines.len() == case.n_branches() {
            continue;
        }
        let val = |role| ll.var(role).map_or(0.0, |j| r.y[j]);
        let mut inj = vec![0.0; case.n_buses()];
        for (n, g) in case.generators.iter().enumerate() {
            inj[case.bus_idx(g.bus)] += val(Role::Gen(n));
        }
        for (w, f) in case.wind_farms.iter().enumerate() {
            inj[case.bus_idx(f.bus)] += val(Role::WindUsed(w));
        }
        for (m, l) in case.loads.iter().enumerate() {
            inj[case.bus_idx(l.bus)] += val(Role::Shed(m)) - op.load_mw[m];
        }
        let mut device_line = vec![0.0; case.n_branches()];
        for (c, cand) in compact.catalog.vsr.iter().enumerate() {
            let psi = val(Role::PsiVsr(c));
            let (fr, to) = case.ends(cand.branch);
            inj[fr] -= psi;
            inj[to] += psi;
            device_line[cand.branch] += psi;
        }
        for (c, cand) in compact.catalog.pst.iter().enumerate() {
            let psi = val(Role::PsiPst(c));
            let (fr, to) = case.ends(cand.branch);
            inj[fr] -= psi;
            inj[to] += psi;
            device_line[cand.branch] += psi;
        }
        let Ok(flows) = btheta_flows(case, &inj) else { continue };
        for (k, br) in case.branches.iter().enumerate() {
            if ll.flow_lines.binary_search(&k).is_ok() {
                continue;
            }
            let p = flows[k] + device_line[k];
            if p.abs() > br.s_max * (1.0 + 1e-6) + 1e-6 {
                out.push(LineViolation { scenario: ll.scenario_id, branch_id: br.id, flow_mw: p, limit_mw: br.s_max });
            }
        }
    }
    out
}
