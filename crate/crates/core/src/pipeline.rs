//! End-to-end runs driven by a [`RunConfig`]: load, screen, assemble, solve,
//! report. Every error carries the stage it came from.

use std::path::{Path, PathBuf};
use std::time::Instant;

use log::{info, warn};
use thiserror::Error;

use crate::bilevel::{
    assemble_compact, brute_force_plan, build_master, run_ccg, BilevelError, Budgets, CcgOutcome, CcgStatus, CompactForm,
};
use crate::config::{ConfigError, RunConfig};
use crate::devices::{DeviceCatalog, DeviceError};
use crate::market::{build_dcopf, solve_market, Formulation, LowerLevelOptions, MarketError, MarketModel, MarketOutcome};
use crate::network::{compute_ptdf, parse_case, NetworkCase, NetworkError, PtdfMatrix};
use crate::report::{PlanReport, RunMeta};
use crate::scenarios::{ingest_profiles, reduce_profile, OperatingPoint, ScenarioError, ScenarioSet};
use crate::screening::{screen, CandidateRequest, ScreeningReport};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ErrorClass {
    /// Bad configuration or input data.
    Config,
    /// A solver failed or returned an unusable status.
    Solver,
    /// Output could not be written.
    Io,
}

#[derive(Debug, Error)]
#[error("{stage}: {message}")]
pub struct PipelineError {
    pub stage: &'static str,
    pub class: ErrorClass,
    pub message: String,
}

impl PipelineError {
    fn new(stage: &'static str, class: ErrorClass, message: impl ToString) -> Self {
        Self { stage, class, message: message.to_string() }
    }

    pub fn exit_code(&self) -> i32 {
        match self.class {
            ErrorClass::Config => 2,
            ErrorClass::Solver => 3,
            ErrorClass::Io => 1,
        }
    }
}

pub type Result<T> = std::result::Result<T, PipelineError>;

fn config_err(stage: &'static str) -> impl Fn(ConfigError) -> PipelineError {
    move |e| PipelineError::new(stage, ErrorClass::Config, e)
}

fn network_err(stage: &'static str) -> impl Fn(NetworkError) -> PipelineError {
    move |e| PipelineError::new(stage, ErrorClass::Config, e)
}

fn scenario_err(e: ScenarioError) -> PipelineError {
    PipelineError::new("scenarios", ErrorClass::Config, e)
}

fn device_err(e: DeviceError) -> PipelineError {
    PipelineError::new("devices", ErrorClass::Config, e)
}

fn market_err(stage: &'static str) -> impl Fn(MarketError) -> PipelineError {
    move |e| {
        let class = match e {
            MarketError::Solve { .. } | MarketError::Milp(_) => ErrorClass::Solver,
            _ => ErrorClass::Config,
        };
        PipelineError::new(stage, class, e)
    }
}

fn bilevel_err(stage: &'static str) -> impl Fn(BilevelError) -> PipelineError {
    move |e| {
        let class = match &e {
            BilevelError::Solver { .. } | BilevelError::Milp(_) => ErrorClass::Solver,
            BilevelError::Market(MarketError::Solve { .. } | MarketError::Milp(_)) => ErrorClass::Solver,
            _ => ErrorClass::Config,
        };
        PipelineError::new(stage, class, e)
    }
}

fn io_err(path: &Path) -> impl Fn(std::io::Error) -> PipelineError + '_ {
    move |e| PipelineError::new("output", ErrorClass::Io, format!("{}: {e}", path.display()))
}

pub fn load_config(path: impl AsRef<Path>, overrides: &[String]) -> Result<RunConfig> {
    RunConfig::load(path, overrides).map_err(config_err("config"))
}

/// Case plus materialized scenarios.
#[derive(Clone, Debug)]
pub struct Instance {
    pub case: NetworkCase,
    pub scenarios: ScenarioSet,
    pub ops: Vec<OperatingPoint>,
}

pub fn load_instance(cfg: &RunConfig) -> Result<Instance> {
    let case_path = cfg.paths.case.as_ref().ok_or_else(|| PipelineError::new("case", ErrorClass::Config, "paths.case is not set"))?;
    let case = parse_case(case_path).map_err(network_err("case"))?;
    let scenarios = match (&cfg.paths.scenarios, &cfg.paths.load_profile, &cfg.paths.wind_profile) {
        (Some(table), _, _) => ScenarioSet::read_csv(table).map_err(scenario_err)?,
        (None, Some(load), Some(wind)) => {
            let profile = ingest_profiles(load, wind).map_err(scenario_err)?;
            reduce_profile(&profile, cfg.scenarios.clusters, cfg.scenarios.seed).map_err(scenario_err)?
        }
        _ => {
            return Err(PipelineError::new(
                "scenarios",
                ErrorClass::Config,
                "set paths.scenarios, or both paths.load_profile and paths.wind_profile",
            ))
        }
    };
    if let Some(f) = &cfg.scenarios.farm_scaling {
        if f.len() != case.wind_farms.len() {
            return Err(PipelineError::new(
                "scenarios",
                ErrorClass::Config,
                format!("scenarios.farm_scaling has {} entries for {} wind farms", f.len(), case.wind_farms.len()),
            ));
        }
    }
    let ops = scenarios.materialize(&case, cfg.scenarios.farm_scaling.as_deref());
    Ok(Instance { case, scenarios, ops })
}

pub fn run_screen_on(cfg: &RunConfig, inst: &Instance) -> Result<ScreeningReport> {
    let request = CandidateRequest { vsr: cfg.vsr.candidates.ids(), pst: cfg.pst.candidates.ids() };
    for id in request.vsr.iter().chain(&request.pst).flatten() {
        if inst.case.branch_idx(*id).is_none() {
            return Err(PipelineError::new("screening", ErrorClass::Config, format!("candidate branch {id} is not in the case")));
        }
    }
    screen(
        &inst.case,
        &inst.ops,
        &request,
        &cfg.screening_options(),
        cfg.screening.fix_directions,
        cfg.screening.monitor,
    )
    .map_err(market_err("screening"))
}

pub fn run_screen(cfg: &RunConfig) -> Result<(Instance, ScreeningReport)> {
    let inst = load_instance(cfg)?;
    let report = run_screen_on(cfg, &inst)?;
    Ok((inst, report))
}

/// Everything needed to solve: instance, screening outcome and compact form.
#[derive(Clone, Debug)]
pub struct Prepared {
    pub instance: Instance,
    pub screening: ScreeningReport,
    pub ptdf: Option<PtdfMatrix>,
    pub compact: CompactForm,
}

pub fn lower_level_options(cfg: &RunConfig, catalog: &DeviceCatalog, screening: &ScreeningReport) -> LowerLevelOptions {
    LowerLevelOptions {
        formulation: cfg.algorithm.formulation,
        shedding_cost: Some(cfg.economics.shed_cost),
        spill_cost: cfg.economics.spill_cost,
        explicit_spill: true,
        fixed_directions: catalog.vsr.iter().map(|c| screening.direction_of(c.branch_id).as_fixing()).collect(),
    }
}

pub fn prepare(cfg: &RunConfig) -> Result<Prepared> {
    let instance = load_instance(cfg)?;
    let screening = run_screen_on(cfg, &instance)?;
    let case = &instance.case;
    let catalog = DeviceCatalog::build(case, &screening.vsr_candidates, &screening.pst_candidates, &cfg.device_params()).map_err(device_err)?;
    let ptdf = match cfg.algorithm.formulation {
        Formulation::ShiftFactor => {
            Some(compute_ptdf(case, Some(&screening.monitored_indices(case))).map_err(network_err("assembly"))?)
        }
        Formulation::BTheta => {
            if screening.monitored.len() < case.n_branches() {
                warn!("the angle formulation enforces every line limit; the monitored-line reduction is not applied");
            }
            None
        }
    };
    let opts = lower_level_options(cfg, &catalog, &screening);
    let budgets = Budgets { vsr: cfg.budget.vsr, pst: cfg.budget.pst };
    let compact =
        assemble_compact(case, &instance.ops, &catalog, ptdf.as_ref(), &opts, budgets).map_err(bilevel_err("assembly"))?;
    info!(
        "assembled {} scenarios, {} VSR + {} PST candidates, {} monitored lines",
        compact.blocks.len(),
        compact.n_vsr,
        compact.n_pst,
        screening.monitored.len()
    );
    Ok(Prepared { instance, screening, ptdf, compact })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Method {
    Ccg,
    /// Exhaustive enumeration; small candidate sets only.
    BruteForce,
}

#[derive(Clone, Debug)]
pub struct PlanRun {
    pub prepared: Prepared,
    pub report: PlanReport,
    pub outcome: Option<CcgOutcome>,
    pub converged: bool,
}

pub fn plan_prepared(cfg: &RunConfig, prepared: Prepared, method: Method) -> Result<PlanRun> {
    let inst = &prepared.instance;
    let seed = inst.scenarios.seed;
    let (x, responses, meta, outcome) = match method {
        Method::Ccg => {
            let o = run_ccg(&prepared.compact, &cfg.ccg_options()).map_err(bilevel_err("planning"))?;
            (o.x.clone(), o.responses.clone(), RunMeta::from_ccg(&o, seed), Some(o))
        }
        Method::BruteForce => {
            let start = Instant::now();
            let o = brute_force_plan(&prepared.compact, &cfg.solver_options(), cfg.solver.threads != Some(1))
                .map_err(bilevel_err("planning"))?;
            let meta = RunMeta::from_brute_force(&o, seed, start.elapsed().as_secs_f64());
            (o.x, o.responses, meta, None)
        }
    };
    let converged = outcome.as_ref().is_none_or(|o| o.status == CcgStatus::Converged);
    let report = PlanReport::build(
        &inst.case,
        &inst.ops,
        &prepared.compact,
        &x,
        &responses,
        cfg.economics.spill_cost,
        cfg.economics.shed_cost,
        meta,
    );
    for v in &report.unmonitored_violations {
        warn!("scenario {}: unmonitored line {} carries {:.2} MW over a {:.2} MW limit", v.scenario, v.branch_id, v.flow_mw.abs(), v.limit_mw);
    }
    Ok(PlanRun { prepared, report, outcome, converged })
}

pub fn run_plan(cfg: &RunConfig, method: Method) -> Result<PlanRun> {
    let prepared = prepare(cfg)?;
    plan_prepared(cfg, prepared, method)
}

fn write(dir: &Path, name: &str, text: &str, written: &mut Vec<PathBuf>) -> Result<()> {
    let path = dir.join(name);
    std::fs::write(&path, text).map_err(io_err(&path))?;
    written.push(path);
    Ok(())
}

/// Write report, iteration log, screening report and scenario table, plus LP
/// dumps when asked. Returns the files written.
pub fn write_plan_outputs(cfg: &RunConfig, run: &PlanRun, dir: &Path, dump_lp: bool) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir).map_err(io_err(dir))?;
    let mut written = Vec::new();
    let inst = &run.prepared.instance;
    write(dir, "report.txt", &run.report.to_text(), &mut written)?;
    write(dir, "report.json", &run.report.to_json(), &mut written)?;
    write(dir, "curtailment.csv", &run.report.curtailment_csv(&inst.case), &mut written)?;
    write(dir, "screening.txt", &run.prepared.screening.to_text(), &mut written)?;
    write(dir, "scenarios.csv", &inst.scenarios.to_csv(), &mut written)?;
    if let Some(o) = &run.outcome {
        write(dir, "iterations.csv", &o.state.log_csv(), &mut written)?;
    }
    if dump_lp {
        let compact = &run.prepared.compact;
        if let Some(o) = &run.outcome {
            let master = build_master(compact, &o.state.pool, cfg.bigm.m_lambda).map_err(bilevel_err("output"))?;
            write(dir, "master.lp", &master.to_lp_string(), &mut written)?;
        }
        let x: Vec<f64> = run.report.x.iter().map(|&b| f64::from(b)).collect();
        for block in &compact.blocks {
            let ll = &block.lower;
            let name = format!("lower_t{}", ll.scenario_id);
            let h = ll.handle(&x, &ll.w, &name).map_err(market_err("output"))?;
            write(dir, &format!("{name}.lp"), &h.to_lp_string(), &mut written)?;
        }
    }
    Ok(written)
}

/// Devices-off DCOPF of one scenario with every line limit enforced.
pub fn run_dcopf(cfg: &RunConfig, scenario_id: usize, formulation: Formulation) -> Result<(Instance, MarketModel, MarketOutcome)> {
    let inst = load_instance(cfg)?;
    let Some(op) = inst.ops.iter().find(|o| o.id == scenario_id) else {
        return Err(PipelineError::new("dcopf", ErrorClass::Config, ScenarioError::UnknownScenario(scenario_id)));
    };
    let ptdf = match formulation {
        Formulation::ShiftFactor => Some(compute_ptdf(&inst.case, None).map_err(network_err("dcopf"))?),
        Formulation::BTheta => None,
    };
    let model = build_dcopf(&inst.case, op, formulation, ptdf.as_ref(), Some(cfg.economics.shed_cost)).map_err(market_err("dcopf"))?;
    let outcome = solve_market(&inst.case, &DeviceCatalog::default(), &model).map_err(market_err("dcopf"))?;
    Ok((inst, model, outcome))
}
