use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use runstab_core::harness::{calibrate_all, run_ablation, run_calibration, run_condition, with_jobs};
use runstab_core::report::{emit_calibrations, emit_runs, emit_summary, regenerate, write_json, RunManifest, MANIFEST_FILE};
use runstab_core::{Config, ConditionSummary, Error, ExperimentPlan, Result};

#[derive(Debug, Parser)]
#[command(name = "runstab", version, about = "Drift detection and recovery experiments")]
struct Cli {
    /// JSON configuration file; built-in defaults when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Master seed, overriding the configuration.
    #[arg(long, global = true, env = "RUNSTAB_SEED")]
    seed: Option<u64>,

    /// Output directory.
    #[arg(long, global = true, env = "RUNSTAB_OUT", default_value = "runs")]
    out: PathBuf,

    /// Condition name for `run`.
    #[arg(long, global = true)]
    condition: Option<String>,

    /// Worker threads; 0 uses all cores.
    #[arg(long, global = true, default_value_t = 0)]
    jobs: usize,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Fit scale and thresholds for every variant in the configuration.
    Calibrate,
    /// Run a single condition end to end.
    Run,
    /// Run every configured condition on paired seeds.
    Ablate,
    /// Rebuild summaries from the traces in the output directory.
    Report,
}

fn load_config(cli: &Cli) -> Result<Config> {
    let mut cfg = match &cli.config {
        Some(path) => Config::from_path(path)?,
        None => Config::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.experiment.master_seed = seed;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn print_table(summaries: &[ConditionSummary]) {
    let cell = |x: Option<f64>| x.map_or_else(|| "--".to_string(), |v| format!("{v:.2}"));
    println!(
        "{:<20} {:>6} {:>6} {:>14} {:>8}",
        "condition", "det", "rec", "mttr", "latency"
    );
    for s in summaries {
        let mttr = s
            .mttr
            .map_or_else(|| "--".to_string(), |m| format!("{:.2}±{:.2}", m.mean, m.std));
        println!(
            "{:<20} {:>6.2} {:>6} {:>14} {:>8}",
            s.name,
            s.detection_rate,
            cell(s.recovery_rate),
            mttr,
            cell(s.latency_mean)
        );
    }
}

fn calibrate(cli: &Cli, out: &Path) -> Result<()> {
    let cfg = load_config(cli)?;
    let plan = ExperimentPlan::from_config(&cfg)?;
    let cals = with_jobs(cli.jobs, || calibrate_all(&plan))??;
    std::fs::create_dir_all(out).map_err(|e| Error::Io { path: out.to_path_buf(), source: e })?;
    let file = emit_calibrations(out, &cals)?;
    write_json(&out.join(MANIFEST_FILE), &RunManifest::new("calibrate", &cfg, vec![file])?)?;
    for (key, c) in &cals {
        println!(
            "{key}: S={:.6e} tau={:.6} tau_d={:.6} kappa={}",
            c.scale.scale, c.thresholds.tau, c.thresholds.tau_d, c.thresholds.kappa
        );
    }
    Ok(())
}

fn run(cli: &Cli, out: &Path) -> Result<()> {
    let cfg = load_config(cli)?;
    let name = cli
        .condition
        .as_deref()
        .ok_or_else(|| Error::Validation {
            field: "condition".into(),
            reason: "`run` needs --condition <name>".into(),
        })?;
    cfg.condition(name)?;
    let plan = ExperimentPlan::from_config(&cfg)?;
    let condition = plan.condition(name)?.clone();
    let (cal, run) = with_jobs(cli.jobs, || -> Result<_> {
        let cal = run_calibration(&plan, condition.variant)?;
        let run = run_condition(&plan, &condition, &cal)?;
        Ok((cal, run))
    })??;
    let cals = BTreeMap::from([(condition.variant.calibration_key().to_string(), cal)]);
    emit_runs(out, "run", &cfg, &cals, std::slice::from_ref(&run))?;
    print_table(&[run.summary]);
    Ok(())
}

fn ablate(cli: &Cli, out: &Path) -> Result<()> {
    let cfg = load_config(cli)?;
    let plan = ExperimentPlan::from_config(&cfg)?;
    let (cals, runs) = with_jobs(cli.jobs, || -> Result<_> {
        let cals = calibrate_all(&plan)?;
        let runs = run_ablation(&plan, &cals)?;
        Ok((cals, runs))
    })??;
    emit_runs(out, "ablate", &cfg, &cals, &runs)?;
    let summaries: Vec<ConditionSummary> = runs.into_iter().map(|r| r.summary).collect();
    print_table(&summaries);
    Ok(())
}

fn report(out: &Path) -> Result<()> {
    let summaries = regenerate(out)?;
    emit_summary(out, &summaries)?;
    print_table(&summaries);
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let out = cli.out.clone();
    let result = match cli.command {
        Command::Calibrate => calibrate(&cli, &out),
        Command::Run => run(&cli, &out),
        Command::Ablate => ablate(&cli, &out),
        Command::Report => report(&out),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
