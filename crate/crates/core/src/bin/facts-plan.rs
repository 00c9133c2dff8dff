use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use facts_core::config::RunConfig;
use facts_core::market::Formulation;
use facts_core::matpower::{import_matpower, ImportOptions};
use facts_core::network::WindFarm;
use facts_core::pipeline::{self, Method, PipelineError};

const EXIT_CONFIG: u8 = 2;
const EXIT_GAP: u8 = 4;

#[derive(Parser)]
#[command(name = "facts-plan", version, about = "Place series FACTS devices under wind uncertainty")]
struct Cli {
    /// More log output (-v info, -vv debug).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Run configuration (TOML).
    config: PathBuf,
    /// Override a configuration key, e.g. `--set budget.vsr=1`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    /// Output directory; defaults to paths.output_dir.
    #[arg(short, long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Screen candidates, solve the placement problem, write reports.
    Plan {
        #[command(flatten)]
        common: Common,
        /// Enumerate every admissible plan instead of decomposing.
        #[arg(long)]
        brute_force: bool,
        /// Also write the final master and per-scenario lower-level LPs.
        #[arg(long)]
        dump_lp: bool,
    },
    /// Solve one scenario's devices-off DCOPF.
    Dcopf {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        scenario: usize,
        /// shift-factor or btheta; defaults to algorithm.formulation.
        #[arg(long)]
        formulation: Option<Formulation>,
        #[arg(long)]
        dump_lp: bool,
    },
    /// Rank candidate lines, fix flow directions, choose monitored lines.
    Screen {
        #[command(flatten)]
        common: Common,
    },
    /// Convert a MATPOWER case file to the native case format.
    ImportCase {
        input: PathBuf,
        #[arg(short, long)]
        output: PathBuf,
        #[arg(long, default_value_t = 1.0)]
        peak_scale: f64,
        #[arg(long, default_value_t = 1.0)]
        limit_scale: f64,
        /// Rating for branches with RATE_A = 0.
        #[arg(long, default_value_t = 9900.0)]
        default_rating: f64,
        /// Cost for generators without a gencost row, $/MWh.
        #[arg(long, default_value_t = 0.0)]
        default_cost: f64,
        /// Wind farm as `bus:capacity[:intensity_scale]`; repeatable.
        #[arg(long = "wind", value_parser = parse_wind)]
        wind: Vec<(usize, f64, f64)>,
    },
}

fn parse_wind(s: &str) -> Result<(usize, f64, f64), String> {
    let parts: Vec<&str> = s.split(':').collect();
    if !(2..=3).contains(&parts.len()) {
        return Err(format!("expected bus:capacity[:scale], got `{s}`"));
    }
    let bus = parts[0].parse().map_err(|_| format!("bad bus `{}`", parts[0]))?;
    let cap = parts[1].parse().map_err(|_| format!("bad capacity `{}`", parts[1]))?;
    let scale = parts.get(2).map_or(Ok(1.0), |p| p.parse().map_err(|_| format!("bad scale `{p}`")))?;
    Ok((bus, cap, scale))
}

fn fail(e: PipelineError) -> ExitCode {
    eprintln!("error: {e}");
    ExitCode::from(e.exit_code() as u8)
}

fn load(common: &Common) -> Result<RunConfig, PipelineError> {
    let cfg = pipeline::load_config(&common.config, &common.overrides)?;
    if let Some(n) = cfg.solver.threads {
        // a second call only fails if a pool already exists, which is harmless
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    Ok(cfg)
}

fn out_dir(common: &Common, cfg: &RunConfig) -> PathBuf {
    common.out.clone().unwrap_or_else(|| cfg.paths.output_dir.clone())
}

fn write_file(path: &Path, text: &str) -> Result<(), ExitCode> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        if let Err(e) = std::fs::create_dir_all(dir) {
            eprintln!("error: {}: {e}", dir.display());
            return Err(ExitCode::FAILURE);
        }
    }
    std::fs::write(path, text).map_err(|e| {
        eprintln!("error: {}: {e}", path.display());
        ExitCode::FAILURE
    })
}

fn run(cli: Cli) -> ExitCode {
    match cli.command {
        Command::Plan { common, brute_force, dump_lp } => {
            let cfg = match load(&common) {
                Ok(c) => c,
                Err(e) => return fail(e),
            };
            let method = if brute_force { Method::BruteForce } else { Method::Ccg };
            let run = match pipeline::run_plan(&cfg, method) {
                Ok(r) => r,
                Err(e) => return fail(e),
            };
            let dir = out_dir(&common, &cfg);
            match pipeline::write_plan_outputs(&cfg, &run, &dir, dump_lp) {
                Ok(files) => {
                    print!("{}", run.report.to_text());
                    for f in files {
                        println!("wrote {}", f.display());
                    }
                }
                Err(e) => return fail(e),
            }
            if run.converged {
                ExitCode::SUCCESS
            } else {
                eprintln!("gap not closed: {:.3e} after {} iterations", run.report.meta.gap, run.report.meta.iterations);
                ExitCode::from(EXIT_GAP)
            }
        }
        Command::Dcopf { common, scenario, formulation, dump_lp } => {
            let cfg = match load(&common) {
                Ok(c) => c,
                Err(e) => return fail(e),
            };
            let formulation = formulation.unwrap_or(cfg.algorithm.formulation);
            let (_, model, outcome) = match pipeline::run_dcopf(&cfg, scenario, formulation) {
                Ok(r) => r,
                Err(e) => return fail(e),
            };
            let dir = out_dir(&common, &cfg);
            let json = serde_json::to_string_pretty(&outcome).expect("outcome serializes");
            let path = dir.join(format!("dcopf_t{scenario}.json"));
            if let Err(code) = write_file(&path, &json) {
                return code;
            }
            if dump_lp {
                let lp = match model.to_lp_string() {
                    Ok(s) => s,
                    Err(e) => return fail(PipelineError { stage: "dcopf", class: pipeline::ErrorClass::Config, message: e.to_string() }),
                };
                let lp_path = dir.join(format!("dcopf_t{scenario}.lp"));
                if let Err(code) = write_file(&lp_path, &lp) {
                    return code;
                }
                println!("wrote {}", lp_path.display());
            }
            println!(
                "scenario {scenario}: objective {:.4} $/h, spill {:.4} MW, shed {:.4} MW",
                outcome.objective,
                outcome.total_spill(),
                outcome.total_shed()
            );
            println!("wrote {}", path.display());
            ExitCode::SUCCESS
        }
        Command::Screen { common } => {
            let cfg = match load(&common) {
                Ok(c) => c,
                Err(e) => return fail(e),
            };
            let (_, report) = match pipeline::run_screen(&cfg) {
                Ok(r) => r,
                Err(e) => return fail(e),
            };
            let dir = out_dir(&common, &cfg);
            let text = report.to_text();
            let json = serde_json::to_string_pretty(&report).expect("report serializes");
            for (name, body) in [("screening.txt", &text), ("screening.json", &json)] {
                if let Err(code) = write_file(&dir.join(name), body) {
                    return code;
                }
            }
            print!("{text}");
            ExitCode::SUCCESS
        }
        Command::ImportCase { input, output, peak_scale, limit_scale, default_rating, default_cost, wind } => {
            let text = match std::fs::read_to_string(&input) {
                Ok(t) => t,
                Err(e) => {
                    eprintln!("error: {}: {e}", input.display());
                    return ExitCode::from(EXIT_CONFIG);
                }
            };
            let wind_farms = wind
                .iter()
                .enumerate()
                .map(|(i, &(bus, capacity, intensity_scale))| WindFarm { id: i + 1, bus, capacity, intensity_scale })
                .collect();
            let opts = ImportOptions { peak_scale, limit_scale, default_rating, default_cost, wind_farms };
            let case = match import_matpower(&text, &opts) {
                Ok(c) => c,
                Err(e) => {
                    eprintln!("error: import: {e}");
                    return ExitCode::from(EXIT_CONFIG);
                }
            };
            if let Err(code) = write_file(&output, &case.to_toml()) {
                return code;
            }
            println!(
                "wrote {} ({} buses, {} branches, {} generators, {} loads, {} wind farms)",
                output.display(),
                case.n_buses(),
                case.n_branches(),
                case.generators.len(),
                case.loads.len(),
                case.wind_farms.len()
            );
            ExitCode::SUCCESS
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    run(cli)
}
