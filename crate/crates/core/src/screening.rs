//! Candidate ranking by reactance sensitivity, VSR flow-direction fixing and
//! monitored-line selection.

use std::fmt::Write as _;

use rayon::prelude::*;
use serde::Serialize;

use crate::devices::DeviceCatalog;
use crate::market::{build_lower_level_rows, solve_market, Formulation, LowerLevelOptions, MarketError, MarketModel};
use crate::network::NetworkCase;
use crate::scenarios::OperatingPoint;

#[derive(Clone, Debug)]
pub struct ScreeningOptions {
    pub top_n: usize,
    /// Loading fraction at or above which a non-candidate line stays monitored.
    pub threshold: f64,
    /// Flows within `dead_band * s_max` of zero never fix a direction.
    pub dead_band: f64,
    /// Relative reactance perturbation for the finite differences.
    pub step: f64,
    pub shedding_cost: f64,
    pub spill_cost: f64,
}

impl Default for ScreeningOptions {
    fn default() -> Self {
        Self { top_n: 10, threshold: 0.6, dead_band: 1e-3, step: 0.01, shedding_cost: 5000.0, spill_cost: 50.0 }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Direction {
    FixedPositive,
    FixedNegative,
    Free,
}

impl Direction {
    /// `Some(true)` for a positive fixing, as the lower-level builder expects.
    pub fn as_fixing(self) -> Option<bool> {
        match self {
            Self::FixedPositive => Some(true),
            Self::FixedNegative => Some(false),
            Self::Free => None,
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            Self::FixedPositive => "fixed-positive",
            Self::FixedNegative => "fixed-negative",
            Self::Free => "free",
        }
    }
}

/// Central-difference reactance sensitivity of one scenario, $/h per p.u.
#[derive(Clone, Debug, Serialize)]
pub struct Sensitivity {
    pub scenario_id: usize,
    /// One value per branch at step h.
    pub eta: Vec<f64>,
    /// Same at h/2, kept as a consistency check.
    pub eta_half: Vec<f64>,
}

fn dispatch_cost(case: &NetworkCase, op: &OperatingPoint, opts: &ScreeningOptions) -> Result<f64, MarketError> {
    let ll_opts = LowerLevelOptions {
        formulation: Formulation::BTheta,
        shedding_cost: Some(opts.shedding_cost),
        spill_cost: opts.spill_cost,
        explicit_spill: true,
        fixed_directions: Vec::new(),
    };
    let catalog = DeviceCatalog::default();
    let lower = build_lower_level_rows(case, op, None, &catalog, &ll_opts)?;
    Ok(solve_market(case, &catalog, &MarketModel { lower, decisions: Vec::new() })?.objective)
}

fn central_difference(case: &NetworkCase, op: &OperatingPoint, k: usize, h: f64, opts: &ScreeningOptions) -> Result<f64, MarketError> {
    let mut up = case.clone();
    up.branches[k].x += h;
    let mut down = case.clone();
    down.branches[k].x -= h;
    Ok((dispatch_cost(&up, op, opts)? - dispatch_cost(&down, op, opts)?) / (2.0 * h))
}

pub fn reactance_sensitivity(case: &NetworkCase, op: &OperatingPoint, opts: &ScreeningOptions) -> Result<Sensitivity, MarketError> {
    let per_branch: Vec<(f64, f64)> = (0..case.n_branches())
        .into_par_iter()
        .map(|k| {
            let h = opts.step * case.branches[k].x;
            Ok((central_difference(case, op, k, h, opts)?, central_difference(case, op, k, h / 2.0, opts)?))
        })
        .collect::<Result<_, MarketError>>()?;
    let (eta, eta_half) = per_branch.into_iter().unzip();
    Ok(Sensitivity { scenario_id: op.id, eta, eta_half })
}

/// η̄_k = Σ_t N_t |η_kt x_k|, sorted descending with ties broken by branch id.
/// Returns every branch; callers truncate to the candidate count.
pub fn weighted_rank(eta: &[Vec<f64>], weights: &[f64], case: &NetworkCase) -> Vec<(usize, f64)> {
    let mut ranked: Vec<(usize, f64)> = case
        .branches
        .iter()
        .enumerate()
        .map(|(k, br)| (br.id, eta.iter().zip(weights).map(|(e, n)| n * (e[k] * br.x).abs()).sum()))
        .collect();
    ranked.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    ranked
}

/// Devices-off Bθ flows per scenario, in branch order.
pub fn devices_off_flows(case: &NetworkCase, ops: &[OperatingPoint], opts: &ScreeningOptions) -> Result<Vec<Vec<f64>>, MarketError> {
    let ll_opts = LowerLevelOptions {
        formulation: Formulation::BTheta,
        shedding_cost: Some(opts.shedding_cost),
        spill_cost: opts.spill_cost,
        explicit_spill: true,
        fixed_directions: Vec::new(),
    };
    let catalog = DeviceCatalog::default();
    ops.par_iter()
        .map(|op| {
            let lower = build_lower_level_rows(case, op, None, &catalog, &ll_opts)?;
            let out = solve_market(case, &catalog, &MarketModel { lower, decisions: Vec::new() })?;
            Ok(out.flows.iter().map(|f| f.1).collect())
        })
        .collect()
}

/// Verdict per branch index in `candidates`.
pub fn fix_flow_directions(case: &NetworkCase, flows: &[Vec<f64>], candidates: &[usize], dead_band: f64) -> Vec<Direction> {
    candidates
        .iter()
        .map(|&k| {
            let band = dead_band * case.branches[k].s_max;
            if flows.is_empty() {
                Direction::Free
            } else if flows.iter().all(|f| f[k] > band) {
                Direction::FixedPositive
            } else if flows.iter().all(|f| f[k] < -band) {
                Direction::FixedNegative
            } else {
                Direction::Free
            }
        })
        .collect()
}

/// Max loading fraction per branch over all scenarios.
pub fn max_loading(case: &NetworkCase, flows: &[Vec<f64>]) -> Vec<f64> {
    (0..case.n_branches())
        .map(|k| flows.iter().map(|f| f[k].abs() / case.branches[k].s_max).fold(0.0, f64::max))
        .collect()
}

/// Candidate branches plus every branch whose loading reaches `threshold`
/// (with a 1e-6 allowance so a line sitting exactly at its limit counts).
/// Returns sorted branch indices.
pub fn select_monitored_lines(case: &NetworkCase, loading: &[f64], candidates: &[usize], threshold: f64) -> Vec<usize> {
    (0..case.n_branches()).filter(|&k| candidates.contains(&k) || loading[k] >= threshold - 1e-6).collect()
}

#[derive(Clone, Debug, Serialize)]
pub struct MonitoredLine {
    pub branch_id: usize,
    pub max_loading: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct ScreeningReport {
    pub sensitivities: Vec<Sensitivity>,
    pub weighted: Vec<(usize, f64)>,
    pub vsr_candidates: Vec<usize>,
    pub pst_candidates: Vec<usize>,
    pub directions: Vec<(usize, Direction)>,
    pub monitored: Vec<MonitoredLine>,
    pub n_branches: usize,
}

impl ScreeningReport {
    pub fn monitored_indices(&self, case: &NetworkCase) -> Vec<usize> {
        let mut v: Vec<usize> = self.monitored.iter().filter_map(|m| case.branch_idx(m.branch_id)).collect();
        v.sort_unstable();
        v
    }

    pub fn direction_of(&self, branch_id: usize) -> Direction {
        self.directions.iter().find(|d| d.0 == branch_id).map_or(Direction::Free, |d| d.1)
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "# weighted reactance sensitivity");
        let _ = writeln!(s, "{:>6}  {:>16}", "branch", "eta_bar");
        for (id, v) in &self.weighted {
            let _ = writeln!(s, "{id:>6}  {v:>16.4}");
        }
        let _ = writeln!(s, "\n# candidates");
        let _ = writeln!(s, "vsr: {:?}", self.vsr_candidates);
        let _ = writeln!(s, "pst: {:?}", self.pst_candidates);
        let _ = writeln!(s, "\n# vsr flow directions");
        for (id, d) in &self.directions {
            let _ = writeln!(s, "{id:>6}  {}", d.label());
        }
        let _ = writeln!(s, "\n# monitored lines ({} of {})", self.monitored.len(), self.n_branches);
        for m in &self.monitored {
            let _ = writeln!(s, "{:>6}  {:>8.4}", m.branch_id, m.max_loading);
        }
        s
    }
}

/// Which candidate lists to derive and which to take as given (branch ids).
#[derive(Clone, Debug, Default)]
pub struct CandidateRequest {
    pub vsr: Option<Vec<usize>>,
    pub pst: Option<Vec<usize>>,
}

/// Full screening pass. Sensitivities are only computed when a list is requested
/// as "auto".
pub fn screen(
    case: &NetworkCase,
    ops: &[OperatingPoint],
    request: &CandidateRequest,
    opts: &ScreeningOptions,
    fix_directions: bool,
    monitor: bool,
) -> Result<ScreeningReport, MarketError> {
    let need_rank = request.vsr.is_none() || request.pst.is_none();
    let sensitivities = if need_rank {
        ops.iter().map(|op| reactance_sensitivity(case, op, opts)).collect::<Result<Vec<_>, _>>()?
    } else {
        Vec::new()
    };
    let weighted = if need_rank {
        let eta: Vec<Vec<f64>> = sensitivities.iter().map(|s| s.eta.clone()).collect();
        let weights: Vec<f64> = ops.iter().map(|o| o.hours).collect();
        weighted_rank(&eta, &weights, case)
    } else {
        Vec::new()
    };
    let top: Vec<usize> = weighted.iter().take(opts.top_n).map(|w| w.0).collect();
    let vsr_candidates = request.vsr.clone().unwrap_or_else(|| top.clone());
    let pst_candidates = request.pst.clone().unwrap_or(top);

    let flows = devices_off_flows(case, ops, opts)?;
    let vsr_idx: Vec<usize> = vsr_candidates.iter().filter_map(|&id| case.branch_idx(id)).collect();
    let directions = if fix_directions {
        fix_flow_directions(case, &flows, &vsr_idx, opts.dead_band)
    } else {
        vec![Direction::Free; vsr_idx.len()]
    };
    let all_cands: Vec<usize> = vsr_candidates.iter().chain(&pst_candidates).filter_map(|&id| case.branch_idx(id)).collect();
    let loading = max_loading(case, &flows);
    let threshold = if monitor { opts.threshold } else { 0.0 };
    let monitored = select_monitored_lines(case, &loading, &all_cands, threshold)
        .into_iter()
        .map(|k| MonitoredLine { branch_id: case.branches[k].id, max_loading: loading[k] })
        .collect();
    Ok(ScreeningReport {
        sensitivities,
        weighted,
        vsr_candidates: vsr_candidates.clone(),
        pst_candidates,
        directions: vsr_candidates.iter().copied().zip(directions).collect(),
        monitored,
        n_branches: case.n_branches(),
    })
}
