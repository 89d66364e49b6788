//! Penetration-sweep experiment runner.
//!
//! One evaluation population is simulated per scenario; CVs are re-sampled
//! from it per (penetration, seed) cell. Profiles and priors come from
//! held-out historical populations simulated and sampled with seeds derived
//! independently of the evaluation seeds, so no evaluation CV leaks into the
//! prior.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::domain::validate_signal_plan;
use crate::error::Result;
use crate::estimators::{DemandEstimate, Method};
use crate::metrics::{compute_metrics, Metrics};
use crate::pipeline::{preprocess_trajectories, run_method, EstimationConfig, HistoricalContext};
use crate::sim::{derive_seed, sample_cvs, simulate, GroundTruthRecord, ScenarioConfig};

/// Sweep axes: which methods to run at which penetrations, with how many
/// evaluation sampling seeds.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SweepConfig {
    pub penetrations: Vec<f64>,
    pub seeds: Vec<u64>,
    pub methods: Vec<Method>,
    /// Number of historical sampling runs feeding the profile and prior.
    pub historical_samples: usize,
}

impl Default for SweepConfig {
    fn default() -> Self {
        SweepConfig {
            penetrations: vec![0.02, 0.05, 0.10, 0.20, 0.30],
            seeds: (1..=10).collect(),
            methods: Method::ALL.to_vec(),
            historical_samples: 10,
        }
    }
}

/// Metrics of one (method, penetration, seed) cell.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SweepCell {
    pub method: Method,
    pub penetration: f64,
    pub seed: u64,
    pub metrics: Metrics,
}

/// One per-estimate record with its sweep coordinates.
#[derive(Debug, Clone)]
pub struct EstimateRecord {
    pub penetration: f64,
    pub seed: u64,
    pub estimate: DemandEstimate,
}

#[derive(Debug, Clone)]
pub struct SweepResult {
    pub cells: Vec<SweepCell>,
    pub records: Vec<EstimateRecord>,
    pub ground_truth: Vec<GroundTruthRecord>,
}

/// Runs the full experiment grid over one scenario.
pub fn run_sweep(
    scenario: &ScenarioConfig,
    sweep: &SweepConfig,
    cfg: &EstimationConfig,
) -> Result<SweepResult> {
    scenario.validate()?;
    let eval = simulate(scenario)?;
    let full_plan = validate_signal_plan(eval.plan.clone())?;
    let eval_plan = full_plan.truncated(scenario.cycle_count);
    let truth: Vec<GroundTruthRecord> = eval
        .ground_truth
        .iter()
        .filter(|r| r.cycle_index <= scenario.cycle_count)
        .cloned()
        .collect();

    // Held-out populations for the historical context.
    let historical_populations: Vec<_> = (0..sweep.historical_samples)
        .map(|i| {
            let mut hist_scenario = scenario.clone();
            hist_scenario.seed = derive_seed(scenario.seed, 0x3000 + i as u64);
            simulate(&hist_scenario)
        })
        .collect::<Result<Vec<_>>>()?;

    let mut cells = Vec::new();
    let mut records = Vec::new();
    for &penetration in &sweep.penetrations {
        let hist_sets: Vec<_> = historical_populations
            .iter()
            .enumerate()
            .map(|(i, population)| {
                sample_cvs(
                    &population.trajectories,
                    penetration,
                    derive_seed(scenario.seed, 0x4000 + i as u64),
                )
            })
            .collect();
        let ctx = HistoricalContext::build(&full_plan, &hist_sets, cfg)?;

        for &seed in &sweep.seeds {
            let cvs = sample_cvs(&eval.trajectories, penetration, seed);
            let pre = preprocess_trajectories(&eval_plan, &cvs, cfg);
            for &method in &sweep.methods {
                let output = run_method(&eval_plan, &pre, &ctx, method, cfg)?;
                let metrics = compute_metrics(&output.estimates, &truth);
                cells.push(SweepCell {
                    method,
                    penetration,
                    seed,
                    metrics,
                });
                records.extend(output.estimates.into_iter().map(|estimate| EstimateRecord {
                    penetration,
                    seed,
                    estimate,
                }));
            }
        }
    }

    Ok(SweepResult {
        cells,
        records,
        ground_truth: truth,
    })
}

/// Aggregated row of the plot-ready summary: mean and standard deviation of
/// each metric over seeds, per (method, penetration).
#[derive(Debug, Clone, Serialize)]
pub struct SummaryRow {
    pub method: Method,
    pub penetration: f64,
    pub mae_mean: Option<f64>,
    pub mae_std: Option<f64>,
    pub mape_mean: Option<f64>,
    pub mape_std: Option<f64>,
    pub sr_mean: f64,
    pub sr_std: f64,
    pub seeds: usize,
}

fn mean_std(values: &[f64]) -> (Option<f64>, Option<f64>) {
    if values.is_empty() {
        return (None, None);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    (Some(mean), Some(var.sqrt()))
}

/// Collapses cells over seeds into per-(method, penetration) summary rows,
/// sorted by penetration then method.
pub fn summarize(result: &SweepResult) -> Vec<SummaryRow> {
    let mut grouped: BTreeMap<(u64, Method), Vec<&SweepCell>> = BTreeMap::new();
    for cell in &result.cells {
        grouped
            .entry(((cell.penetration * 1e9) as u64, cell.method))
            .or_default()
            .push(cell);
    }
    grouped
        .into_iter()
        .map(|(_, cells)| {
            let maes: Vec<f64> = cells.iter().filter_map(|c| c.metrics.mae_veh).collect();
            let mapes: Vec<f64> = cells.iter().filter_map(|c| c.metrics.mape_frac).collect();
            let srs: Vec<f64> = cells.iter().map(|c| c.metrics.success_rate).collect();
            let (mae_mean, mae_std) = mean_std(&maes);
            let (mape_mean, mape_std) = mean_std(&mapes);
            let (sr_mean, sr_std) = mean_std(&srs);
            SummaryRow {
                method: cells[0].method,
                penetration: cells[0].penetration,
                mae_mean,
                mae_std,
                mape_mean,
                mape_std,
                sr_mean: sr_mean.unwrap_or(0.0),
                sr_std: sr_std.unwrap_or(0.0),
                seeds: cells.len(),
            }
        })
        .collect()
}

/// Writes the sweep outputs: per-estimate CSV, per-cell metrics JSON, the
/// plot-ready summary CSV and the ground-truth table.
pub fn emit_report(result: &SweepResult, out_dir: &Path) -> Result<()> {
    std::fs::create_dir_all(out_dir)?;

    // estimates.csv with sweep coordinates prepended
    let mut writer = csv::Writer::from_path(out_dir.join("estimates.csv"))?;
    writer.write_record([
        "penetration",
        "seed",
        "method",
        "phase_id",
        "cycle_index",
        "demand_veh",
        "lane_rate_vps",
        "lambda0",
        "alpha",
        "status",
        "iterations",
    ])?;
    let fmt = |v: Option<f64>| v.map(|x| format!("{x:.6}")).unwrap_or_default();
    for r in &result.records {
        let e = &r.estimate;
        writer.write_record([
            format!("{:.4}", r.penetration),
            r.seed.to_string(),
            e.method.as_str().to_string(),
            e.phase_id.clone(),
            e.cycle_index.to_string(),
            fmt(e.demand_veh),
            fmt(e.lane_rate_vps),
            fmt(e.lambda0),
            fmt(e.alpha),
            if e.is_ok() { "ok" } else { "failed" }.to_string(),
            e.iterations.to_string(),
        ])?;
    }
    writer.flush()?;

    // metrics.json, one entry per cell
    #[derive(Serialize)]
    struct CellOut<'a> {
        method: &'a str,
        penetration: f64,
        seed: u64,
        mae: Option<f64>,
        mape: Option<f64>,
        sr: f64,
        total: usize,
        successes: usize,
    }
    let cells: Vec<CellOut> = result
        .cells
        .iter()
        .map(|c| CellOut {
            method: c.method.as_str(),
            penetration: c.penetration,
            seed: c.seed,
            mae: c.metrics.mae_veh,
            mape: c.metrics.mape_frac,
            sr: c.metrics.success_rate,
            total: c.metrics.total,
            successes: c.metrics.successes,
        })
        .collect();
    let mut metrics_file = std::fs::File::create(out_dir.join("metrics.json"))?;
    serde_json::to_writer_pretty(&mut metrics_file, &cells)?;
    metrics_file.write_all(b"\n")?;

    // summary.csv sorted by penetration
    let mut writer = csv::Writer::from_path(out_dir.join("summary.csv"))?;
    writer.write_record([
        "method",
        "penetration",
        "mae_mean",
        "mae_std",
        "mape_mean",
        "mape_std",
        "sr_mean",
        "sr_std",
        "seeds",
    ])?;
    for row in summarize(result) {
        writer.write_record([
            row.method.as_str().to_string(),
            format!("{:.4}", row.penetration),
            fmt(row.mae_mean),
            fmt(row.mae_std),
            fmt(row.mape_mean),
            fmt(row.mape_std),
            format!("{:.6}", row.sr_mean),
            format!("{:.6}", row.sr_std),
            row.seeds.to_string(),
        ])?;
    }
    writer.flush()?;

    crate::sim::save_ground_truth(&out_dir.join("ground_truth.csv"), &result.ground_truth)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::{ArrivalPattern, DemandSpec, ScenarioPhase};

    fn tiny_scenario() -> ScenarioConfig {
        ScenarioConfig {
            cycle_length_s: 100.0,
            cycle_count: 10,
            trailing_cycles: 2,
            sat_headway_s: 2.0,
            detection_range_m: 400.0,
            report_interval_s: 3.0,
            position_noise_std_m: 0.0,
            penetration: 1.0,
            seed: 5,
            phases: vec![
                ScenarioPhase {
                    phase_id: "p1".into(),
                    lane_count: 2,
                    jam_spacing_m: 6.0,
                    free_flow_speed_mps: 12.0,
                    red_offset_s: 0.0,
                    green_duration_s: 45.0,
                    demand: DemandSpec::Sinusoid {
                        mean_veh: 30.0,
                        amplitude_frac: 0.2,
                        period_cycles: 8.0,
                        phase_frac: 0.0,
                    },
                    pattern: ArrivalPattern::Platoon {
                        window_start_frac: 0.1,
                        window_len_frac: 0.3,
                        inside_mass: 0.8,
                    },
                },
                ScenarioPhase {
                    phase_id: "p2".into(),
                    lane_count: 2,
                    jam_spacing_m: 6.0,
                    free_flow_speed_mps: 12.0,
                    red_offset_s: 45.0,
                    green_duration_s: 45.0,
                    demand: DemandSpec::Sinusoid {
                        mean_veh: 24.0,
                        amplitude_frac: 0.2,
                        period_cycles: 9.0,
                        phase_frac: 0.5,
                    },
                    pattern: ArrivalPattern::Random,
                },
            ],
        }
    }

    #[test]
    fn sweep_cardinality() {
        let sweep = SweepConfig {
            penetrations: vec![0.05, 0.2],
            seeds: vec![1, 2, 3],
            methods: Method::ALL.to_vec(),
            historical_samples: 3,
        };
        let result = run_sweep(&tiny_scenario(), &sweep, &EstimationConfig::default()).unwrap();
        assert_eq!(result.cells.len(), 2 * 3 * 3);
        // per-estimate records: methods x penetrations x seeds x phases x cycles
        assert_eq!(result.records.len(), 2 * 3 * 3 * 2 * 10);
    }

    #[test]
    fn sweep_deterministic_files() {
        let sweep = SweepConfig {
            penetrations: vec![0.1],
            seeds: vec![1, 2],
            methods: vec![Method::JoMap, Method::Wmle],
            historical_samples: 2,
        };
        let cfg = EstimationConfig::default();
        let scenario = tiny_scenario();
        let a = run_sweep(&scenario, &sweep, &cfg).unwrap();
        let b = run_sweep(&scenario, &sweep, &cfg).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let (dir_a, dir_b) = (dir.path().join("a"), dir.path().join("b"));
        emit_report(&a, &dir_a).unwrap();
        emit_report(&b, &dir_b).unwrap();
        for name in ["estimates.csv", "metrics.json", "summary.csv", "ground_truth.csv"] {
            let bytes_a = std::fs::read(dir_a.join(name)).unwrap();
            let bytes_b = std::fs::read(dir_b.join(name)).unwrap();
            assert_eq!(bytes_a, bytes_b, "{name} differs");
        }
    }

    #[test]
    fn summary_sorted_by_penetration() {
        let sweep = SweepConfig {
            penetrations: vec![0.2, 0.05],
            seeds: vec![1],
            methods: vec![Method::JoMap],
            historical_samples: 2,
        };
        let result = run_sweep(&tiny_scenario(), &sweep, &EstimationConfig::default()).unwrap();
        let rows = summarize(&result);
        let penetrations: Vec<f64> = rows.iter().map(|r| r.penetration).collect();
        let mut sorted = penetrations.clone();
        sorted.sort_by(f64::total_cmp);
        assert_eq!(penetrations, sorted);
    }
}
