//! One PASS/FAIL line per acceptance criterion. Runs without the libtest
//! harness so the lines always reach the output.

mod common;

use std::process::ExitCode;
use std::time::Instant;

use facts_core::bilevel::{brute_force_plan, run_ccg, CcgOutcome, CcgStatus};
use facts_core::devices::{
    annuity_factor, big_m_values, delta_b_bounds, pst_cost, tcsc_unit_cost, vsr_block, DeviceCatalog, DeviceParams, InjectionBlock, Term,
};
use facts_core::market::{build_dcopf, build_lower_level_rows, solve_market, Formulation, LowerLevelOptions};
use facts_core::milp::{ModelHandle, ObjSense, Sense};
use facts_core::network::compute_ptdf;
use facts_core::pipeline::{self, Method};
use facts_core::scenarios::ScenarioSet;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use common::{desk_config, peak_op, random_case, DESK};

type Check = Result<String, String>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1.0)
}

fn formulation_equivalence() -> Check {
    let start = Instant::now();
    let mut worst_obj: f64 = 0.0;
    let mut worst_flow: f64 = 0.0;
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for i in 0..20u64 {
        let nb = rng.random_range(10..=30);
        let case = random_case(100 + i, nb, 2);
        let wind: Vec<f64> = case.wind_farms.iter().map(|f| f.capacity * rng.random_range(0.0..1.0)).collect();
        let op = peak_op(&case, rng.random_range(0.6..1.2), wind);
        let h = compute_ptdf(&case, None).map_err(|e| e.to_string())?;
        let cat = DeviceCatalog::default();
        let bt = build_dcopf(&case, &op, Formulation::BTheta, None, Some(5000.0)).map_err(|e| e.to_string())?;
        let sf = build_dcopf(&case, &op, Formulation::ShiftFactor, Some(&h), Some(5000.0)).map_err(|e| e.to_string())?;
        let a = solve_market(&case, &cat, &bt).map_err(|e| e.to_string())?;
        let b = solve_market(&case, &cat, &sf).map_err(|e| e.to_string())?;
        let d = rel(a.objective, b.objective);
        worst_obj = worst_obj.max(d);
        ensure(d <= 1e-6, || format!("case {i} ({nb} buses): objectives {} vs {}", a.objective, b.objective))?;
        for (fa, fb) in a.flows.iter().zip(&b.flows) {
            ensure(fa.0 == fb.0, || format!("case {i}: flow order differs"))?;
            let dp = (fa.1 - fb.1).abs() / case.base_mva;
            worst_flow = worst_flow.max(dp);
            ensure(dp <= 1e-8, || format!("case {i} line {}: {} vs {} MW", fa.0, fa.1, fb.1))?;
        }
    }
    let secs = start.elapsed().as_secs_f64();
    ensure(secs < 30.0, || format!("took {secs:.1} s"))?;
    Ok(format!("20 cases, max objective rel diff {worst_obj:.1e}, max flow diff {worst_flow:.1e} p.u., {secs:.1} s"))
}

/// Range of `target` over the block at fixed (δ, P) for one value of u.
fn block_range(block: &InjectionBlock, delta: f64, flow: f64, u: f64, target: Term) -> Option<(f64, f64)> {
    let mut out = [0.0; 2];
    for (s, sense) in [ObjSense::Minimize, ObjSense::Maximize].into_iter().enumerate() {
        let mut m = ModelHandle::new("vsr");
        let psi = m.add_free("psi").unwrap();
        let v = m.add_free("v").unwrap();
        for (i, row) in block.rows.iter().enumerate() {
            let mut coeffs = Vec::new();
            let mut rhs = row.rhs;
            for &(t, a) in &row.terms {
                match t {
                    Term::Psi => coeffs.push((psi, a)),
                    Term::V => coeffs.push((v, a)),
                    Term::U => rhs -= a * u,
                    Term::Flow => rhs -= a * flow,
                    Term::Decision => rhs -= a * delta,
                }
            }
            m.add_constraint(format!("r{i}"), coeffs, Sense::Le, rhs).unwrap();
        }
        let obj = if target == Term::Psi { psi } else { v };
        m.set_objective(sense, vec![(obj, 1.0)], 0.0).unwrap();
        let r = m.solve().unwrap();
        if !r.is_optimal() {
            return None;
        }
        out[s] = r.value(obj);
    }
    Some((out[0], out[1]))
}

fn vsr_linearization() -> Check {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut worst: f64 = 0.0;
    for i in 0..50 {
        let x_k = rng.random_range(0.02..0.3);
        let s_max: f64 = rng.random_range(50.0..300.0);
        let lo_frac = rng.random_range(-0.8..-0.1);
        let hi_frac = rng.random_range(0.0..0.5);
        let p = rng.random_range(-s_max..s_max);
        let db = delta_b_bounds(x_k, lo_frac, hi_frac).map_err(|e| e.to_string())?;
        let (m1, m2) = big_m_values(db, s_max);
        let block = vsr_block(i, db, m1, m2);

        // exact range of ψ, union over u
        let ranges: Vec<(f64, f64)> = [0.0, 1.0].iter().filter_map(|&u| block_range(&block, 1.0, p, u, Term::Psi)).collect();
        ensure(ranges.len() == 1, || format!("triple {i}: {} feasible direction settings at P = {p}", ranges.len()))?;
        let (lo, hi) = ranges[0];
        let (want_lo, want_hi) = ((db.0 * p).min(db.1 * p), (db.0 * p).max(db.1 * p));
        worst = worst.max((lo - want_lo).abs()).max((hi - want_hi).abs());
        ensure((lo - want_lo).abs() <= 1e-6 && (hi - want_hi).abs() <= 1e-6, || {
            format!("triple {i}: ψ range [{lo}, {hi}] vs Δb·P range [{want_lo}, {want_hi}]")
        })?;
        // every grid point Δb·P is attained with v = P and u from the sign of P
        let u = if p >= 0.0 { 0.0 } else { 1.0 };
        for g in 0..1000 {
            let d = db.0 + (db.1 - db.0) * g as f64 / 999.0;
            let psi = d * p;
            let val = |t: Term| match t {
                Term::Psi => psi,
                Term::V | Term::Flow => p,
                Term::U => u,
                Term::Decision => 1.0,
            };
            ensure(block.is_feasible(val, 1e-6), || format!("triple {i}: Δb = {d} (ψ = {psi}) infeasible"))?;
        }
        // δ = 0 pins ψ and v to zero
        for u in [0.0, 1.0] {
            for t in [Term::Psi, Term::V] {
                let r = block_range(&block, 0.0, p, u, t).ok_or_else(|| format!("triple {i}: δ = 0 infeasible at u = {u}"))?;
                ensure(r.0.abs() <= 1e-12 && r.1.abs() <= 1e-12, || format!("triple {i}: δ = 0 leaves {t:?} in [{}, {}]", r.0, r.1))?;
            }
        }
    }
    let secs = start.elapsed().as_secs_f64();
    ensure(secs < 60.0, || format!("took {secs:.1} s"))?;
    Ok(format!("50 triples x 1000 grid points, max range error {worst:.1e} MW, {secs:.1} s"))
}

struct Runs {
    outcomes: Vec<(String, CcgOutcome, usize, f64)>,
}

impl Runs {
    fn record(&mut self, label: String, o: CcgOutcome, n_scenarios: usize, epsilon: f64) {
        self.outcomes.push((label, o, n_scenarios, epsilon));
    }
}

fn oracle(runs: &mut Runs) -> Check {
    let start = Instant::now();
    let mut notes = Vec::new();
    for name in DESK {
        let cfg = desk_config(name, &[]);
        let prepared = pipeline::prepare(&cfg).map_err(|e| e.to_string())?;
        let c = &prepared.compact;
        ensure(c.n_vsr <= 2 && c.n_pst <= 2 && c.blocks.len() <= 4, || format!("{name}: instance too large"))?;
        let nb = prepared.instance.case.n_buses();
        ensure((5..=8).contains(&nb), || format!("{name}: {nb} buses"))?;
        let bf = brute_force_plan(c, &cfg.solver_options(), true).map_err(|e| e.to_string())?;
        let o = run_ccg(c, &cfg.ccg_options()).map_err(|e| e.to_string())?;
        ensure(o.x == bf.x, || format!("{name}: CCG plan {:?} vs enumeration {:?}", o.x, bf.x))?;
        let d = rel(o.objective, bf.objective);
        ensure(d <= 1e-3, || format!("{name}: objective {} vs {}", o.objective, bf.objective))?;
        notes.push(format!("{name} {} it", o.iterations()));
        runs.record(format!("{name} oracle"), o, c.blocks.len(), cfg.algorithm.epsilon);
    }
    let secs = start.elapsed().as_secs_f64();
    ensure(secs < 300.0, || format!("took {secs:.1} s"))?;
    Ok(format!("{} instances match enumeration ({}), {secs:.1} s", DESK.len(), notes.join(", ")))
}

fn budget_monotonicity(runs: &mut Runs) -> Check {
    let name = "case11";
    let mut surface = [[0.0f64; 3]; 3];
    let mut eps = 0.0;
    for nv in 0..3 {
        for np in 0..3 {
            let cfg = desk_config(name, &[&format!("budget.vsr={nv}"), &format!("budget.pst={np}")]);
            eps = cfg.algorithm.epsilon;
            let prepared = pipeline::prepare(&cfg).map_err(|e| e.to_string())?;
            let o = run_ccg(&prepared.compact, &cfg.ccg_options()).map_err(|e| e.to_string())?;
            surface[nv][np] = o.objective;
            runs.record(format!("{name} budget ({nv},{np})"), o, prepared.compact.blocks.len(), eps);
        }
    }
    for nv in 0..3 {
        for np in 0..3 {
            let here = surface[nv][np];
            if nv < 2 {
                ensure(surface[nv + 1][np] <= here * (1.0 + eps), || format!("({},{np}) {} > ({nv},{np}) {here}", nv + 1, surface[nv + 1][np]))?;
            }
            if np < 2 {
                ensure(surface[nv][np + 1] <= here * (1.0 + eps), || format!("({nv},{}) {} > ({nv},{np}) {here}", np + 1, surface[nv][np + 1]))?;
            }
            ensure(here <= surface[0][0] * (1.0 + eps), || format!("({nv},{np}) exceeds the no-device value"))?;
        }
    }
    Ok(format!("{name}: {:.4} M$ at (0,0) down to {:.4} M$ at (2,2)", surface[0][0] / 1e6, surface[2][2] / 1e6))
}

fn trajectory(runs: &Runs) -> Check {
    for (label, o, n_t, eps) in &runs.outcomes {
        let log = &o.state.log;
        ensure(!log.is_empty(), || format!("{label}: empty log"))?;
        for (i, r) in log.iter().enumerate() {
            ensure(r.lb <= r.ub + r.ub.abs() * 1e-9, || format!("{label}: LB {} > UB {} at q = {}", r.lb, r.ub, r.q))?;
            if i > 0 {
                ensure(r.lb >= log[i - 1].lb, || format!("{label}: LB decreased at q = {}", r.q))?;
                ensure(r.ub <= log[i - 1].ub, || format!("{label}: UB increased at q = {}", r.q))?;
            }
            let last = i + 1 == log.len();
            let want = if last { 0 } else { *n_t };
            ensure(r.cuts_added == want, || format!("{label}: {} cut blocks at q = {}, expected {want}", r.cuts_added, r.q))?;
        }
        ensure(o.status == CcgStatus::Converged && o.gap() <= *eps, || format!("{label}: terminal gap {:.3e}", o.gap()))?;
        ensure(o.state.pool.len() == (log.len() - 1) * n_t, || format!("{label}: pool size {}", o.state.pool.len()))?;
    }
    Ok(format!("{} runs", runs.outcomes.len()))
}

fn big_m_clean(runs: &Runs) -> Check {
    let dirty: Vec<String> = runs.outcomes.iter().filter(|r| !r.1.warnings.is_empty()).map(|r| format!("{}: {}", r.0, r.1.warnings.join("; "))).collect();
    ensure(dirty.is_empty(), || dirty.join(" | "))?;
    Ok(format!("{} runs, no warnings", runs.outcomes.len()))
}

fn cost_anchors() -> Check {
    let f = annuity_factor(0.05, 5.0);
    ensure((f - 0.2309748).abs() <= 1e-7, || format!("annuity factor {f}"))?;
    let i = tcsc_unit_cost(100.0);
    ensure((i - 97.45).abs() <= 1e-9, || format!("TCSC unit cost {i}"))?;
    let c = pst_cost(100.0);
    ensure((c - 1e7).abs() <= 1e-6, || format!("PST cost {c}"))?;
    Ok(format!("factor {f:.7}, {i:.2} $/kVar, ${c:.0}"))
}

fn delta_b_anchor() -> Check {
    for x in [0.01, 0.1, 0.37] {
        let (lo, hi) = delta_b_bounds(x, -0.7, 0.2).map_err(|e| e.to_string())?;
        ensure((lo + 1.0 / 6.0).abs() <= 1e-12 && (hi - 7.0 / 3.0).abs() <= 1e-12, || format!("x = {x}: [{lo}, {hi}]"))?;
    }
    let (m1, m2) = big_m_values((-1.0 / 6.0, 7.0 / 3.0), 100.0);
    ensure((m1 - 466.667).abs() <= 5e-4 && (m2 - 350.0).abs() <= 1e-9, || format!("M1 = {m1}, M2 = {m2}"))?;
    Ok(format!("[-1/6, 7/3], M1 = {m1:.3}, M2 = {m2:.0}"))
}

fn scenario_accounting() -> Check {
    let set = ScenarioSet::read_csv(common::data_dir().join("annual_scenarios.csv")).map_err(|e| e.to_string())?;
    ensure(set.len() == 20, || format!("{} scenarios", set.len()))?;
    let hours = set.total_hours();
    ensure(hours == 8760.0, || format!("{hours} hours"))?;
    let (load, wind) = set.extremes().ok_or("no extremes")?;
    ensure(load.load_level == 1.0 && load.wind == vec![0.1840], || format!("load extreme {load:?}"))?;
    ensure(wind.load_level == 0.4915 && wind.wind == vec![0.8670], || format!("wind extreme {wind:?}"))?;
    Ok("20 scenarios, 8760 h, extremes (1.0000, 0.1840) and (0.4915, 0.8670)".into())
}

fn model_size() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for i in 0..10u64 {
        let case = random_case(300 + i, rng.random_range(4..=25), 0);
        let op = peak_op(&case, 0.8, vec![]);
        let (nb, nl, ng) = (case.n_buses(), case.n_branches(), case.generators.len());
        let h = compute_ptdf(&case, None).map_err(|e| e.to_string())?;
        let bt = build_dcopf(&case, &op, Formulation::BTheta, None, None).map_err(|e| e.to_string())?.size();
        let sf = build_dcopf(&case, &op, Formulation::ShiftFactor, Some(&h), None).map_err(|e| e.to_string())?.size();
        ensure((bt.continuous, bt.equalities, bt.inequalities) == (nb + nl + ng, nl + nb + 1, 2 * nl + 2 * ng), || {
            format!("angle model ({nb},{nl},{ng}): {bt:?}")
        })?;
        ensure((sf.continuous, sf.equalities, sf.inequalities) == (ng + nl, nl + 1, 2 * nl + 2 * ng), || {
            format!("shift-factor model ({nb},{nl},{ng}): {sf:?}")
        })?;
    }
    // 43 monitored lines out of a larger case, with two VSR and two PST candidates
    let case = random_case(9, 60, 1);
    let nl = case.n_branches();
    ensure(nl > 43, || format!("only {nl} branches"))?;
    let ids: Vec<usize> = case.branches.iter().map(|b| b.id).collect();
    let cat = DeviceCatalog::build(&case, &ids[..2], &ids[2..4], &DeviceParams::default()).map_err(|e| e.to_string())?;
    let monitored: Vec<usize> = (0..43).collect();
    let full_h = compute_ptdf(&case, None).map_err(|e| e.to_string())?;
    let red_h = compute_ptdf(&case, Some(&monitored)).map_err(|e| e.to_string())?;
    let op = peak_op(&case, 0.8, vec![case.wind_farms[0].capacity * 0.5]);
    let opts = LowerLevelOptions::default();
    let full = build_lower_level_rows(&case, &op, Some(&full_h), &cat, &opts).map_err(|e| e.to_string())?;
    let red = build_lower_level_rows(&case, &op, Some(&red_h), &cat, &opts).map_err(|e| e.to_string())?;
    ensure(red.rows.len() < full.rows.len(), || format!("reduced {} rows vs full {}", red.rows.len(), full.rows.len()))?;
    Ok(format!("10 random cases match; 43 of {nl} lines: {} rows vs {}", red.rows.len(), full.rows.len()))
}

/// Devices-off objective of a user-supplied large case, compared with the
/// reference value. Never fails the suite.
fn stretch() -> Option<Check> {
    let path = std::env::var("FACTS_STRETCH_CONFIG").ok()?;
    let run = || -> Check {
        let o = vec!["budget.vsr=0".to_string(), "budget.pst=0".to_string()];
        let cfg = pipeline::load_config(&path, &o).map_err(|e| e.to_string())?;
        let r = pipeline::run_plan(&cfg, Method::Ccg).map_err(|e| e.to_string())?;
        let obj = r.report.objective / 1e6;
        let d = (obj - 278.137).abs() / 278.137;
        ensure(d <= 0.05, || format!("devices-off objective {obj:.4} M$ is {:.1}% from the 278.137 M$ reference (different input data)", d * 100.0))?;
        Ok(format!("devices-off objective {obj:.4} M$ ({:.2}% from 278.137 M$)", d * 100.0))
    };
    Some(run())
}

fn main() -> ExitCode {
    let mut runs = Runs { outcomes: Vec::new() };
    let mut results: Vec<(&str, Check)> = vec![
        ("formulation equivalence", formulation_equivalence()),
        ("VSR linearization exactness", vsr_linearization()),
        ("bilevel optimality vs oracle", oracle(&mut runs)),
        ("budget monotonicity", budget_monotonicity(&mut runs)),
    ];
    results.push(("CCG trajectory invariants", trajectory(&runs)));
    results.push(("cost-model anchors", cost_anchors()));
    results.push(("susceptance-range and big-M anchors", delta_b_anchor()));
    results.push(("scenario accounting", scenario_accounting()));
    results.push(("model-size accounting", model_size()));
    results.push(("big-M audit clean", big_m_clean(&runs)));

    let mut failed = 0;
    for (name, r) in &results {
        match r {
            Ok(detail) => println!("PASS  {name}: {detail}"),
            Err(why) => {
                failed += 1;
                println!("FAIL  {name}: {why}");
            }
        }
    }
    match stretch() {
        None => println!("SKIP  large-case stretch: set FACTS_STRETCH_CONFIG to a plan config"),
        Some(Ok(detail)) => println!("PASS  large-case stretch: {detail}"),
        Some(Err(why)) => println!("FAIL  large-case stretch (not counted): {why}"),
    }
    println!("{} of {} criteria passed", results.len() - failed, results.len());
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
