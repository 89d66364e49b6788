//! Accuracy and applicability metrics: MAE and MAPE over successful
//! estimates, success rate over all (phase, cycle) targets.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::estimators::DemandEstimate;
use crate::sim::GroundTruthRecord;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    /// Mean absolute error over successful estimates, veh/phase/cycle.
    pub mae_veh: Option<f64>,
    /// Mean absolute percentage error over successful estimates with positive
    /// true demand, as a fraction.
    pub mape_frac: Option<f64>,
    /// Fraction of (phase, cycle) targets with a successful estimate.
    pub success_rate: f64,
    /// Total number of targets.
    pub total: usize,
    /// Number of successful estimates.
    pub successes: usize,
    /// Zero-demand targets excluded from the MAPE mean.
    pub zero_demand_excluded: usize,
}

/// Scores estimates against ground truth, aligned by (phase, cycle).
///
/// Targets are all ground-truth records present in `ground_truth`; estimates
/// without a matching record are ignored. MAE and MAPE average only over
/// successful estimates, and cycles with zero true demand are excluded from
/// the MAPE (counted separately).
pub fn compute_metrics(estimates: &[DemandEstimate], ground_truth: &[GroundTruthRecord]) -> Metrics {
    let mut truth: BTreeMap<(&str, u32), f64> = BTreeMap::new();
    for r in ground_truth {
        truth.insert((r.phase_id.as_str(), r.cycle_index), f64::from(r.demand));
    }
    let mut abs_err_sum = 0.0;
    let mut abs_err_count = 0usize;
    let mut ape_sum = 0.0;
    let mut ape_count = 0usize;
    let mut successes = 0usize;
    let mut matched = 0usize;
    let mut zero_excluded = 0usize;

    for e in estimates {
        let Some(&true_demand) = truth.get(&(e.phase_id.as_str(), e.cycle_index)) else {
            continue;
        };
        matched += 1;
        let Some(estimate) = e.demand_veh.filter(|_| e.is_ok()) else {
            continue;
        };
        successes += 1;
        let err = (true_demand - estimate).abs();
        abs_err_sum += err;
        abs_err_count += 1;
        if true_demand > 0.0 {
            ape_sum += err / true_demand;
            ape_count += 1;
        } else {
            zero_excluded += 1;
        }
    }

    Metrics {
        mae_veh: (abs_err_count > 0).then(|| abs_err_sum / abs_err_count as f64),
        mape_frac: (ape_count > 0).then(|| ape_sum / ape_count as f64),
        success_rate: if matched > 0 {
            successes as f64 / matched as f64
        } else {
            0.0
        },
        total: matched,
        successes,
        zero_demand_excluded: zero_excluded,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::estimators::{EstimateStatus, Method};
    use approx::assert_relative_eq;

    fn truth(phase: &str, k: u32, demand: u32) -> GroundTruthRecord {
        GroundTruthRecord {
            phase_id: phase.into(),
            cycle_index: k,
            demand,
            volume: demand,
            initial_queue: 0,
        }
    }

    fn estimate(phase: &str, k: u32, demand: Option<f64>) -> DemandEstimate {
        DemandEstimate {
            method: Method::Wmle,
            phase_id: phase.into(),
            cycle_index: k,
            status: if demand.is_some() {
                EstimateStatus::Ok
            } else {
                EstimateStatus::Failed
            },
            demand_veh: demand,
            lane_rate_vps: None,
            lambda0: None,
            alpha: None,
            iterations: 0,
        }
    }

    #[test]
    fn perfect_estimates() {
        let gt = vec![truth("p1", 1, 10), truth("p1", 2, 20)];
        let est = vec![estimate("p1", 1, Some(10.0)), estimate("p1", 2, Some(20.0))];
        let m = compute_metrics(&est, &gt);
        assert_relative_eq!(m.mae_veh.unwrap(), 0.0);
        assert_relative_eq!(m.mape_frac.unwrap(), 0.0);
        assert_relative_eq!(m.success_rate, 1.0);
    }

    #[test]
    fn mae_and_mape_arithmetic() {
        let gt = vec![truth("p1", 1, 10), truth("p1", 2, 20)];
        let est = vec![estimate("p1", 1, Some(12.0)), estimate("p1", 2, Some(18.0))];
        let m = compute_metrics(&est, &gt);
        assert_relative_eq!(m.mae_veh.unwrap(), 2.0, epsilon = 1e-12);
        assert_relative_eq!(m.mape_frac.unwrap(), 0.15, epsilon = 1e-12);
    }

    #[test]
    fn success_rate_accounting() {
        // 8 phases x 10 cycles with 4 failures -> SR = 76/80
        let mut gt = Vec::new();
        let mut est = Vec::new();
        for p in 0..8 {
            for k in 1..=10 {
                let phase = format!("p{p}");
                gt.push(truth(&phase, k, 10));
                let failed = p == 0 && k <= 4;
                est.push(estimate(&phase, k, (!failed).then_some(10.0)));
            }
        }
        let m = compute_metrics(&est, &gt);
        assert_relative_eq!(m.success_rate, 0.95, epsilon = 1e-12);
        assert_eq!((m.total, m.successes), (80, 76));
    }

    #[test]
    fn zero_demand_excluded_from_mape() {
        let gt = vec![truth("p1", 1, 0), truth("p1", 2, 20)];
        let est = vec![estimate("p1", 1, Some(1.0)), estimate("p1", 2, Some(22.0))];
        let m = compute_metrics(&est, &gt);
        assert_eq!(m.zero_demand_excluded, 1);
        assert_relative_eq!(m.mape_frac.unwrap(), 0.1, epsilon = 1e-12);
        // MAE still includes the zero-demand cell
        assert_relative_eq!(m.mae_veh.unwrap(), 1.5, epsilon = 1e-12);
    }

    #[test]
    fn no_successes_yields_absent_errors() {
        let gt = vec![truth("p1", 1, 10)];
        let est = vec![estimate("p1", 1, None)];
        let m = compute_metrics(&est, &gt);
        assert!(m.mae_veh.is_none());
        assert!(m.mape_frac.is_none());
        assert_relative_eq!(m.success_rate, 0.0);
    }
}
