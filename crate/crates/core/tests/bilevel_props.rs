mod common;

use facts_core::bilevel::{
    assemble_compact, dual_value, evaluate_plan, lower_duals, plan_objective, run_ccg, solve_sp1, Budgets, CcgOptions, CcgStatus,
};
use facts_core::devices::{DeviceCatalog, DeviceParams};
use facts_core::market::LowerLevelOptions;
use facts_core::milp::{SolveStatus, VarId};
use facts_core::network::compute_ptdf;
use facts_core::pipeline::{self, Method};
use facts_core::scenarios::OperatingPoint;

use common::{desk_config, random_case};

fn all_binary(n: usize) -> Vec<Vec<f64>> {
    (0..1usize << n).map(|m| (0..n).map(|i| ((m >> i) & 1) as f64).collect()).collect()
}

fn close(a: f64, b: f64, rel: f64) -> bool {
    (a - b).abs() <= rel * a.abs().max(b.abs()).max(1.0)
}

#[test]
fn cuts_underestimate_everywhere_and_are_tight_at_their_point() {
    let mut checked = 0;
    for name in ["case11", "case16", "case23"] {
        let cfg = desk_config(name, &[]);
        let run = pipeline::run_plan(&cfg, Method::Ccg).unwrap();
        let compact = &run.prepared.compact;
        let o = run.outcome.as_ref().unwrap();
        for (t, r) in o.responses.iter().enumerate() {
            let block = &compact.blocks[t];
            let at = lower_duals(compact, t, &o.x, &r.z).unwrap();
            let dv = dual_value(block, &at.multipliers, &o.x, &r.z);
            assert!(close(dv, at.value, 1e-6), "{name} t{t}: dual {dv} vs primal {}", at.value);
            assert!(close(at.value, r.phi, 1e-6), "{name} t{t}: {} vs {}", at.value, r.phi);
            for x in all_binary(compact.n_x()) {
                // the multipliers stay dual feasible when x moves, so they bound
                // the LP with the same binaries from below
                let Ok(other) = lower_duals(compact, t, &x, &r.z) else { continue };
                let bound = dual_value(block, &at.multipliers, &x, &r.z);
                assert!(bound <= other.value + 1e-6 * other.value.abs().max(1.0), "{name} t{t} x {x:?}: {bound} > {}", other.value);
                checked += 1;
            }
        }
    }
    assert!(checked >= 50, "{checked}");
}

#[test]
fn sp1_equals_the_best_binary_restriction() {
    for name in ["case11", "case12", "case19"] {
        let cfg = desk_config(name, &[]);
        let compact = pipeline::prepare(&cfg).unwrap().compact;
        for x in all_binary(compact.n_x()).into_iter().filter(|x| compact.is_admissible(x)) {
            for (t, block) in compact.blocks.iter().enumerate() {
                let ll = &block.lower;
                let phi = solve_sp1(&compact, t, &x, &Default::default()).unwrap();
                let mut best = f64::INFINITY;
                for u in all_binary(ll.n_z()) {
                    let mut h = ll.handle(&x, &ll.w, "restricted").unwrap();
                    for (j, &v) in u.iter().enumerate() {
                        h.set_bounds(VarId(ll.n_y() + j), v, v).unwrap();
                    }
                    let r = h.solve().unwrap();
                    if r.status == SolveStatus::Optimal {
                        best = best.min(r.objective);
                    }
                }
                assert!(close(phi, best, 1e-7), "{name} t{t} x {x:?}: {phi} vs {best}");
            }
        }
    }
}

#[test]
fn reports_add_up_and_match_the_upper_bound() {
    for name in ["case11", "case39"] {
        let cfg = desk_config(name, &[]);
        let run = pipeline::run_plan(&cfg, Method::Ccg).unwrap();
        let o = run.outcome.as_ref().unwrap();
        let compact = &run.prepared.compact;
        let direct = plan_objective(compact, &o.x, &o.responses);
        assert!(close(o.state.ub, direct, 1e-6), "{name}: UB {} vs {direct}", o.state.ub);
        assert!(close(run.report.objective, direct, 1e-9));
        let parts = run.report.components_total();
        assert!(close(parts, run.report.objective, 1e-4), "{name}: parts {parts} vs {}", run.report.objective);
        assert!(run.report.meta.lb <= run.report.meta.ub + 1e-6 * run.report.meta.ub.abs());
    }
}

#[test]
fn empty_budgets_converge_to_the_device_free_cost() {
    let cfg = desk_config("case11", &["budget.vsr=0", "budget.pst=0"]);
    let run = pipeline::run_plan(&cfg, Method::Ccg).unwrap();
    let o = run.outcome.as_ref().unwrap();
    assert_eq!(o.status, CcgStatus::Converged);
    // the first master has no cuts, so its bound cannot see the recourse cost
    assert!(o.iterations() <= 2, "{}", o.iterations());
    assert!(o.x.iter().all(|&v| v == 0.0));
    let compact = &run.prepared.compact;
    let zero = vec![0.0; compact.n_x()];
    let rs = evaluate_plan(compact, &zero, &Default::default(), false).unwrap();
    let expect = plan_objective(compact, &zero, &rs);
    assert!(close(o.objective, expect, 1e-6), "{} vs {expect}", o.objective);
    assert_eq!(o.state.log.last().unwrap().cuts_added, 0);
}

#[test]
fn one_iteration_cap_leaves_the_gap_open() {
    let cfg = desk_config("case11", &["algorithm.max_iter=1"]);
    let run = pipeline::run_plan(&cfg, Method::Ccg).unwrap();
    assert!(!run.converged);
    assert_eq!(run.outcome.unwrap().status, CcgStatus::GapNotClosed);
    assert_eq!(run.report.meta.status, "gap not closed");
}

#[test]
fn fixed_directions_do_not_move_the_plan() {
    for name in ["case11", "case12", "case16"] {
        let free = pipeline::run_plan(&desk_config(name, &[]), Method::Ccg).unwrap();
        let fixed = pipeline::run_plan(&desk_config(name, &["screening.fix_directions=true"]), Method::Ccg).unwrap();
        let eps = 1e-3;
        assert!(
            close(free.report.objective, fixed.report.objective, eps),
            "{name}: {} vs {}",
            free.report.objective,
            fixed.report.objective
        );
        assert_eq!(free.report.x, fixed.report.x, "{name}");
    }
}

#[test]
fn plans_respect_budgets_and_exclusivity() {
    let case = random_case(14, 14, 1);
    let h = compute_ptdf(&case, None).unwrap();
    let ids: Vec<usize> = case.branches.iter().map(|b| b.id).collect();
    let catalog = DeviceCatalog::build(&case, &[ids[0], ids[5]], &[ids[5], ids[9]], &DeviceParams::default()).unwrap();
    let ops: Vec<OperatingPoint> = [(2000.0, 0.7, 0.9), (3000.0, 1.0, 0.3), (500.0, 1.2, 0.05)]
        .iter()
        .enumerate()
        .map(|(t, &(hours, load, wind))| OperatingPoint {
            id: t + 1,
            hours,
            load_mw: case.loads.iter().map(|l| l.peak * load).collect(),
            wind_mw: case.wind_farms.iter().map(|f| f.capacity * wind).collect(),
        })
        .collect();
    let opts = LowerLevelOptions { shedding_cost: Some(5000.0), spill_cost: 50.0, explicit_spill: true, ..Default::default() };
    for (bv, bp) in [(1, 1), (2, 1), (2, 2)] {
        let compact = assemble_compact(&case, &ops, &catalog, Some(&h), &opts, Budgets { vsr: bv, pst: bp }).unwrap();
        let o = run_ccg(&compact, &CcgOptions { parallel: false, ..Default::default() }).unwrap();
        assert_eq!(o.status, CcgStatus::Converged);
        assert!(compact.is_admissible(&o.x), "{:?}", o.x);
        let vsr: f64 = o.x[..compact.n_vsr].iter().sum();
        let pst: f64 = o.x[compact.n_vsr..].iter().sum();
        assert!(vsr <= bv as f64 && pst <= bp as f64);
        for &(v, p) in &compact.exclusive {
            assert!(o.x[v] + o.x[p] <= 1.0);
        }
    }
}
