//! Thin command-line front end over the library.
//!
//! Errors are reported as a machine-readable JSON object on stderr with a
//! nonzero exit code.

use std::path::PathBuf;
use std::str::FromStr;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};

use jomap::arrival_profile::load_profiles;
use jomap::domain::{load_trajectories, save_trajectories, validate_signal_plan, SignalPlan};
use jomap::estimators::{load_estimates, save_estimates, Method};
use jomap::metrics::compute_metrics;
use jomap::pipeline::{
    preprocess_trajectories, run_method, EstimationConfig, HistoricalContext,
};
use jomap::prior::PriorSpec;
use jomap::sim::{load_ground_truth, save_ground_truth, simulate, ScenarioConfig};
use jomap::sweep::{emit_report, run_sweep, SweepConfig};

#[derive(Parser)]
#[command(
    name = "jomap",
    about = "Joint cycle-by-cycle traffic demand estimation from connected-vehicle trajectories"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate a scenario: writes trajectories, ground truth and the plan.
    Simulate(SimulateArgs),
    /// Estimate demands from trajectories, a plan and a prior.
    Estimate(EstimateArgs),
    /// Score estimates against ground truth.
    Evaluate(EvaluateArgs),
    /// Run the full penetration-sweep experiment.
    Sweep(SweepArgs),
}

#[derive(Args)]
struct SimulateArgs {
    #[arg(long)]
    scenario: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct EstimateArgs {
    #[arg(long)]
    plan: PathBuf,
    #[arg(long)]
    trajectories: PathBuf,
    #[arg(long)]
    prior: PathBuf,
    /// Optional arrival-profile cache; self-built from the input when absent.
    #[arg(long)]
    profile: Option<PathBuf>,
    /// Comma-separated subset of WMLE, JO-MLE, JO-MAP.
    #[arg(long, value_delimiter = ',', default_values_t = vec![
        "WMLE".to_string(), "JO-MLE".to_string(), "JO-MAP".to_string()
    ])]
    methods: Vec<String>,
    /// Regroup a single-phase input into N pseudo-phases by interleaving
    /// cycles round-robin, enabling joint estimation across cycle groups.
    #[arg(long)]
    regroup: Option<u32>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct EvaluateArgs {
    #[arg(long)]
    estimates: PathBuf,
    #[arg(long)]
    truth: PathBuf,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct SweepArgs {
    #[arg(long)]
    scenario: PathBuf,
    #[arg(long, value_delimiter = ',', default_values_t = vec![
        "WMLE".to_string(), "JO-MLE".to_string(), "JO-MAP".to_string()
    ])]
    methods: Vec<String>,
    /// Penetration rates in percent.
    #[arg(long, value_delimiter = ',', default_values_t = vec![2.0, 5.0, 10.0, 20.0, 30.0])]
    penetrations: Vec<f64>,
    /// Evaluation sampling seeds.
    #[arg(long, value_delimiter = ',', default_values_t = (1..=10).collect::<Vec<u64>>())]
    seeds: Vec<u64>,
    #[arg(long, default_value_t = 10)]
    historical_samples: usize,
    #[arg(long)]
    out: PathBuf,
}

fn parse_methods(names: &[String]) -> Result<Vec<Method>> {
    names
        .iter()
        .map(|n| Method::from_str(n).map_err(Into::into))
        .collect()
}

fn run() -> Result<()> {
    match Cli::parse().command {
        Command::Simulate(args) => {
            let scenario = ScenarioConfig::load(&args.scenario)
                .with_context(|| format!("loading scenario {}", args.scenario.display()))?;
            let out = simulate(&scenario)?;
            std::fs::create_dir_all(&args.out)?;
            out.plan.save(&args.out.join("plan.json"))?;
            save_trajectories(&args.out.join("trajectories.csv"), &out.trajectories)?;
            save_ground_truth(&args.out.join("ground_truth.csv"), &out.ground_truth)?;
            eprintln!(
                "simulated {} vehicles over {} cycles x {} phases",
                out.trajectories.len(),
                scenario.total_cycles(),
                scenario.phases.len()
            );
        }
        Command::Estimate(args) => {
            let plan = validate_signal_plan(SignalPlan::load(&args.plan)?)?;
            let mut trajectories = load_trajectories(&args.trajectories)?;
            let prior = PriorSpec::load(&args.prior)?;
            let profiles = args.profile.as_deref().map(load_profiles).transpose()?;
            let methods = parse_methods(&args.methods)?;
            let cfg = EstimationConfig::default();

            let plan = if let Some(groups) = args.regroup {
                let regrouped = regroup::regroup_plan(&plan, groups)?;
                regroup::regroup_trajectories(&plan, &mut trajectories, groups)?;
                regrouped
            } else {
                plan
            };

            let ctx = HistoricalContext::from_parts(&plan, prior, profiles, &trajectories, &cfg)?;
            let pre = preprocess_trajectories(&plan, &trajectories, &cfg);
            let mut estimates = Vec::new();
            for method in methods {
                estimates.extend(run_method(&plan, &pre, &ctx, method, &cfg)?.estimates);
            }
            if let Some(parent) = args.out.parent() {
                std::fs::create_dir_all(parent)?;
            }
            save_estimates(&args.out, &estimates)?;
            eprintln!("wrote {} estimates to {}", estimates.len(), args.out.display());
        }
        Command::Evaluate(args) => {
            let estimates = load_estimates(&args.estimates)?;
            let truth = load_ground_truth(&args.truth)?;
            let mut by_method: std::collections::BTreeMap<Method, Vec<_>> = Default::default();
            for e in estimates {
                by_method.entry(e.method).or_default().push(e);
            }
            let mut out: std::collections::BTreeMap<String, jomap::metrics::Metrics> =
                Default::default();
            for (method, list) in &by_method {
                out.insert(method.as_str().to_string(), compute_metrics(list, &truth));
            }
            let json = serde_json::to_string_pretty(&out)?;
            match &args.out {
                Some(path) => std::fs::write(path, json + "\n")?,
                None => println!("{json}"),
            }
        }
        Command::Sweep(args) => {
            let scenario = ScenarioConfig::load(&args.scenario)?;
            let sweep = SweepConfig {
                penetrations: args.penetrations.iter().map(|p| p / 100.0).collect(),
                seeds: args.seeds.clone(),
                methods: parse_methods(&args.methods)?,
                historical_samples: args.historical_samples,
            };
            let result = run_sweep(&scenario, &sweep, &EstimationConfig::default())?;
            emit_report(&result, &args.out)?;
            eprintln!(
                "wrote {} cells and {} estimate rows to {}",
                result.cells.len(),
                result.records.len(),
                args.out.display()
            );
        }
    }
    Ok(())
}

/// Round-robin regrouping of a single-phase input into pseudo-phases, for
/// joint estimation over cycle groups when only one movement was observed.
mod regroup {
    use anyhow::{bail, Result};
    use jomap::domain::{
        validate_signal_plan, PhasePlan, SignalPlan, Trajectory, ValidatedPlan,
    };

    pub fn regroup_plan(plan: &ValidatedPlan, groups: u32) -> Result<ValidatedPlan> {
        if plan.phases().len() != 1 {
            bail!("--regroup requires a single-phase input");
        }
        if groups < 2 {
            bail!("--regroup needs at least 2 groups");
        }
        let base = &plan.phases()[0];
        let mut phases = Vec::new();
        for g in 0..groups {
            let cycles: Vec<_> = base
                .cycles
                .iter()
                .enumerate()
                .filter(|(i, _)| *i as u32 % groups == g)
                .map(|(_, c)| *c)
                .collect();
            if cycles.is_empty() {
                bail!("not enough cycles to form {groups} groups");
            }
            // Renumber group cycles and stretch each to cover the gap to its
            // successor so the per-group plan stays contiguous.
            let mut renumbered = Vec::new();
            for (j, mut c) in cycles.iter().copied().enumerate() {
                c.cycle_index = j as u32 + 1;
                let next_start = cycles
                    .get(j + 1)
                    .map(|n| n.red_start_s)
                    .unwrap_or(c.red_start_s + c.cycle_length_s * f64::from(groups));
                c.cycle_length_s = next_start - c.red_start_s;
                renumbered.push(c);
            }
            phases.push(PhasePlan {
                phase_id: format!("{}-g{}", base.phase_id, g + 1),
                lane_count: base.lane_count,
                jam_spacing_m: base.jam_spacing_m,
                free_flow_speed_mps: base.free_flow_speed_mps,
                cycles: renumbered,
            });
        }
        Ok(validate_signal_plan(SignalPlan { phases })?)
    }

    pub fn regroup_trajectories(
        plan: &ValidatedPlan,
        trajectories: &mut [Trajectory],
        groups: u32,
    ) -> Result<()> {
        let base = &plan.phases()[0];
        let cycles = &base.cycles;
        for t in trajectories.iter_mut() {
            let anchor = t.points[0].timestamp_s;
            let idx = cycles
                .partition_point(|c| c.red_start_s <= anchor)
                .saturating_sub(1);
            let group = idx as u32 % groups;
            t.phase_id = format!("{}-g{}", base.phase_id, group + 1);
        }
        Ok(())
    }
}

fn main() {
    if let Err(err) = run() {
        let payload = serde_json::json!({
            "error": err.to_string(),
            "chain": err.chain().skip(1).map(|c| c.to_string()).collect::<Vec<_>>(),
        });
        eprintln!("{payload}");
        std::process::exit(1);
    }
}
