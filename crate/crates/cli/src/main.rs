//! `qsd-entropy`: run protocols, emit stationary densities, check the
//! fluctuation theorem and run the invariant suite.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use log::info;
use serde_json::{json, Value};

use qsd_entropy::analysis::{self, Check, DftReport, EntropyHistogram, Summary};
use qsd_entropy::config::RunConfig;
use qsd_entropy::error::ErrorClass;
use qsd_entropy::fokker_planck::{self, DensitySampler};
use qsd_entropy::{entropy, output, protocol, purity, validate, Error};

const STATIONARY_GAMMAS: [f64; 4] = [1.0, 1.2, 1.5, 2.0];
const STATIONARY_POINTS: usize = 1000;

#[derive(Parser, Debug)]
#[command(name = "qsd-entropy", version, about = "Stochastic entropy production of a continuously measured qubit")]
struct Cli {
    /// TOML configuration; defaults apply when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Override protocol.master_seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads (results do not depend on it).
    #[arg(long, global = true)]
    workers: Option<usize>,
    /// Override output.dir.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Stationary densities and moments for γ ∈ {1, 1.2, 1.5, 2}.
    Stationary,
    /// Run the configured protocol and write all result files.
    Run,
    /// Fluctuation-theorem check from a forward and a reverse run directory.
    Dft {
        forward: PathBuf,
        reverse: PathBuf,
        /// Use the uncorrected per-trajectory totals.
        #[arg(long)]
        raw: bool,
        /// Bin width; Freedman–Diaconis of the pooled samples by default.
        #[arg(long)]
        bin_width: Option<f64>,
        #[arg(long, default_value_t = analysis::DEFAULT_MIN_COUNT)]
        min_count: u64,
    },
    /// Invariant suite at reduced sample sizes.
    Validate,
}

/// Failure of a command, mapped onto the exit-code contract.
enum Failure {
    Error(Error),
    Checks(Vec<Check>),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Error(e)
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match execute(&cli) {
        Ok(report) => {
            println!("{}", serde_json::to_string_pretty(&report).expect("serializable report"));
            ExitCode::SUCCESS
        }
        Err(Failure::Checks(checks)) => {
            let failed: Vec<_> = checks.iter().filter(|c| !c.passed).map(check_json).collect();
            eprintln!("{}", json!({ "error": "acceptance_failure", "failed": failed }));
            ExitCode::from(4)
        }
        Err(Failure::Error(e)) => {
            let mut report = json!({ "error": e.kind(), "message": e.to_string() });
            if let Error::Config(v) = &e {
                report["violations"] = json!(v);
            }
            eprintln!("{report}");
            ExitCode::from(match e.class() {
                ErrorClass::Config | ErrorClass::Io => 2,
                ErrorClass::Numerical => 3,
            })
        }
    }
}

fn execute(cli: &Cli) -> Result<Value, Failure> {
    if let Some(n) = cli.workers {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Error::Config(vec![format!("--workers: {e}")]))?;
    }
    let config = load_config(cli)?;
    match &cli.command {
        Command::Stationary => cmd_stationary(&config),
        Command::Run => cmd_run(&config),
        Command::Dft { forward, reverse, raw, bin_width, min_count } => {
            cmd_dft(&config.output.dir, forward, reverse, !raw, *bin_width, *min_count)
        }
        Command::Validate => cmd_validate(&config),
    }
}

fn load_config(cli: &Cli) -> Result<RunConfig, Error> {
    let mut c = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(s) = cli.seed {
        c.protocol.master_seed = s;
    }
    if let Some(o) = &cli.out {
        c.output.dir = o.clone();
    }
    c.meta = None;
    c.validate()?;
    Ok(c)
}

fn cmd_stationary(config: &RunConfig) -> Result<Value, Failure> {
    let dir = &config.output.dir;
    output::prepare_dir(dir)?;
    let params = config.model_params()?;
    let pdfs = output::write_stationary(dir, &params, &STATIONARY_GAMMAS, STATIONARY_POINTS)?;
    let mut w = output::CsvOut::create(&dir.join("boundary_rate.csv"), &[], &["gamma", "rate", "small_beta_eps_form"])?;
    let mut rows = Vec::new();
    for (g, pdf) in STATIONARY_GAMMAS.iter().zip(&pdfs) {
        let p = params.with_gamma(*g)?;
        let b = entropy::boundary_correction_rate(&p)?;
        let series = entropy::boundary_rate_series(&p);
        w.floats(&[*g, b.rate, series])?;
        rows.push(json!({
            "gamma": g,
            "normalization": pdf.normalization(),
            "mean_rz": pdf.mean(),
            "gibbs_entropy": pdf.gibbs_entropy(),
            "boundary_rate": b.rate,
        }));
    }
    w.finish()?;
    output::write_manifest(dir, config, "stationary")?;
    Ok(json!({ "command": "stationary", "output": dir, "stationary": rows }))
}

fn cmd_run(config: &RunConfig) -> Result<Value, Failure> {
    let dir = &config.output.dir;
    output::prepare_dir(dir)?;
    output::write_manifest(dir, config, "run")?;
    let run = config.protocol_run()?;
    info!(
        "protocol {}: {} trajectories, t_max = {}, dt = {}, seed = {}",
        run.kind.label(),
        run.n_traj,
        run.t_max,
        run.dt,
        run.master_seed
    );
    let results = protocol::run(&run)?;
    output::write_results(dir, &results)?;
    let first_ok = results.ensemble.trajectories.iter().find(|t| t.fault.is_none()).map(|t| t.index);
    if let Some(i) = first_ok {
        output::write_single_trajectory(&dir.join("single_trajectory.csv"), &results.trajectory_report(i)?)?;
    }
    let n_dump = config.output.dump_trajectories.min(run.n_traj);
    if n_dump > 0 {
        let reports = (0..n_dump).map(|i| results.trajectory_report(i)).collect::<Result<Vec<_>, _>>()?;
        output::write_trajectories(&dir.join("trajectories.csv"), &reports, run.numerics.record_stride)?;
    }
    let mut report = summary_json(&analysis::summarize(&results)?);
    if config.output.purity_3d {
        let sampler = DensitySampler::new(&results.prepared.initial_grid)?;
        let pr = purity::purity_drift(
            &run.initial_params()?,
            &sampler,
            run.n_traj,
            run.t_max,
            run.dt,
            run.master_seed,
            run.numerics.record_stride,
        )?;
        output::write_purity(&dir.join("purity.csv"), &pr)?;
        report["purity_final_mean_abs_r2_minus_1"] = json!(pr.final_mean());
    }
    std::fs::write(dir.join("summary.json"), serde_json::to_string_pretty(&report).expect("serializable")).map_err(Error::from)?;
    results.ensemble.check_faults()?;
    Ok(report)
}

fn summary_json(s: &Summary) -> Value {
    json!({
        "command": "run",
        "protocol": s.protocol,
        "gamma_init": s.gamma_init,
        "gamma_dyn": s.gamma_dyn,
        "n_traj": s.n_traj,
        "completed": s.completed,
        "faulted": s.faulted,
        "t_max": s.t_max,
        "final_mean_ds_tot": s.final_mean_raw,
        "final_mean_ds_tot_corrected": s.final_mean_corrected,
        "final_sem": s.final_sem,
        "final_mean_rz": s.final_mean_rz,
        "boundary_rate": s.boundary_rate,
        "kl_oracle": s.kl_oracle,
        "relaxation_l1": s.relaxation_l1,
        "reflections": s.reflections,
        "floor_events": s.floor_events,
        "outside_node_events": s.outside_node_events,
        "checks": s.checks.iter().map(check_json).collect::<Vec<_>>(),
    })
}

fn check_json(c: &Check) -> Value {
    json!({ "name": c.name, "verdict": c.verdict(), "detail": c.detail })
}

fn dft_json(r: &DftReport, width: f64) -> Value {
    json!({
        "command": "dft",
        "bin_width": width,
        "min_count": r.min_count,
        "bins_included": r.n_included,
        "slope": r.slope,
        "slope_ci95": r.slope_ci(),
        "intercept": r.intercept,
        "intercept_ci95": r.intercept_ci(),
        "chi2_per_dof": r.chi2_per_dof,
        "excluded_bin_centres": r.excluded(),
    })
}

fn cmd_dft(
    out: &Path,
    forward: &Path,
    reverse: &Path,
    corrected: bool,
    bin_width: Option<f64>,
    min_count: u64,
) -> Result<Value, Failure> {
    let f = output::read_final_totals(forward, corrected)?;
    let r = output::read_final_totals(reverse, corrected)?;
    let width = match bin_width {
        Some(w) => w,
        None => analysis::freedman_diaconis_width(&[f.as_slice(), r.as_slice()].concat())?,
    };
    let report = analysis::dft_check(&EntropyHistogram::aligned(&f, width)?, &EntropyHistogram::aligned(&r, width)?, min_count)?;
    output::prepare_dir(out)?;
    output::write_dft(&out.join("dft.csv"), &report)?;
    Ok(dft_json(&report, width))
}

fn cmd_validate(config: &RunConfig) -> Result<Value, Failure> {
    let params = config.model_params()?;
    let size = validate::SuiteSize { seed: config.protocol.master_seed, ..Default::default() };
    // building one grid up front surfaces configuration problems as errors
    fokker_planck::stationary_grid(&params, config.numerics.grid_cells)?;
    let checks = validate::run_suite(&params, &size);
    for c in &checks {
        info!("{c}");
    }
    if checks.iter().all(|c| c.passed) {
        Ok(json!({ "command": "validate", "checks": checks.iter().map(check_json).collect::<Vec<_>>() }))
    } else {
        Err(Failure::Checks(checks))
    }
}
