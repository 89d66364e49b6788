//! Joint prior construction: Gaussian priors on the phase shares fitted from
//! historical CV counts, plus the uniform support for the total arrival rate.

use std::io::Read;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::domain::{PhaseConfig, PhaseId};
use crate::error::{Error, Result};

/// Floor on the share prior's standard deviation; keeps a constant historical
/// share from collapsing the posterior onto the prior mean.
pub const SIGMA_MIN: f64 = 0.02;
/// Historical count bin width (5 minutes).
pub const COUNT_BIN_SECONDS: f64 = 300.0;
/// Minimum usable bins for a Gaussian fit; below this the flat fallback is used.
pub const MIN_USABLE_BINS: usize = 6;
/// Share standard deviation of the flat fallback prior.
pub const FALLBACK_SIGMA: f64 = 0.25;

/// Gaussian prior on one phase's share of the total arrival rate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlphaPrior {
    pub phase_id: PhaseId,
    pub mu: f64,
    pub sigma2: f64,
}

/// The joint prior: per-phase share Gaussians and the uniform support of the
/// total arrival rate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PriorSpec {
    pub phases: Vec<AlphaPrior>,
    /// Upper end of the total-rate support (total lanes / saturation headway).
    pub lambda0_upper: f64,
    /// Number of usable historical bins behind the share fit.
    pub sample_count: usize,
    /// Set when too little history forced the flat fallback prior.
    pub fallback: bool,
}

impl PriorSpec {
    pub fn phase(&self, phase_id: &str) -> Result<&AlphaPrior> {
        self.phases
            .iter()
            .find(|p| p.phase_id == phase_id)
            .ok_or_else(|| Error::UnknownPhase(phase_id.to_string()))
    }

    pub fn from_json_reader<R: Read>(reader: R) -> Result<Self> {
        Ok(serde_json::from_reader(reader)?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json_reader(std::fs::File::open(path)?)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        serde_json::to_writer_pretty(std::fs::File::create(path)?, self)?;
        Ok(())
    }
}

/// Historical CV counts of one phase per 5-minute bin.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhaseCountSeries {
    pub phase_id: PhaseId,
    pub counts: Vec<u64>,
}

/// Mean and floored sample variance of share samples.
pub fn share_statistics(samples: &[f64], sigma_min: f64) -> (f64, f64) {
    let n = samples.len() as f64;
    let mean = samples.iter().sum::<f64>() / n;
    let variance = if samples.len() > 1 {
        samples.iter().map(|s| (s - mean).powi(2)).sum::<f64>() / (n - 1.0)
    } else {
        0.0
    };
    (mean, variance.max(sigma_min * sigma_min))
}

/// Fits the per-phase share priors from historical counts.
///
/// Each bin with a positive total contributes one share sample per phase;
/// empty bins are dropped. With fewer than [`MIN_USABLE_BINS`] usable bins the
/// Gaussian fit is meaningless and the flat fallback (mu = 1/Z, sigma = 0.25)
/// is returned instead.
pub fn build_alpha_prior(series: &[PhaseCountSeries], sigma_min: f64) -> Result<Vec<AlphaPrior>> {
    if series.is_empty() {
        return Err(Error::InvalidConfig("no phase count series".into()));
    }
    let bins = series[0].counts.len();
    if series.iter().any(|s| s.counts.len() != bins) {
        return Err(Error::InvalidConfig(
            "phase count series have unequal bin counts".into(),
        ));
    }
    let phase_count = series.len();
    let mut samples: Vec<Vec<f64>> = vec![Vec::new(); phase_count];
    for bin in 0..bins {
        let total: u64 = series.iter().map(|s| s.counts[bin]).sum();
        if total == 0 {
            continue;
        }
        for (z, s) in series.iter().enumerate() {
            samples[z].push(s.counts[bin] as f64 / total as f64);
        }
    }
    let usable = samples[0].len();
    if usable < MIN_USABLE_BINS {
        return Ok(series
            .iter()
            .map(|s| AlphaPrior {
                phase_id: s.phase_id.clone(),
                mu: 1.0 / phase_count as f64,
                sigma2: FALLBACK_SIGMA * FALLBACK_SIGMA,
            })
            .collect());
    }
    Ok(series
        .iter()
        .zip(&samples)
        .map(|(s, phase_samples)| {
            let (mu, sigma2) = share_statistics(phase_samples, sigma_min);
            AlphaPrior {
                phase_id: s.phase_id.clone(),
                mu,
                sigma2,
            }
        })
        .collect())
}

/// Upper end of the uniform support for the total arrival rate: each lane's
/// rate cannot exceed one vehicle per saturation headway.
pub fn lambda0_support(phase_configs: &[PhaseConfig], sat_headway_s: f64) -> Result<f64> {
    if !(sat_headway_s > 0.0) {
        return Err(Error::InvalidConfig(
            "saturation headway must be positive".into(),
        ));
    }
    let total_lanes: u32 = phase_configs.iter().map(|c| c.lane_count).sum();
    Ok(f64::from(total_lanes) / sat_headway_s)
}

/// Assembles the full prior from count history, lane configuration and the
/// time-of-day saturation headway.
pub fn build_prior(
    series: &[PhaseCountSeries],
    phase_configs: &[PhaseConfig],
    sat_headway_s: f64,
    sigma_min: f64,
) -> Result<PriorSpec> {
    let phases = build_alpha_prior(series, sigma_min)?;
    let usable = usable_bins(series);
    let fallback = usable < MIN_USABLE_BINS;
    Ok(PriorSpec {
        phases,
        lambda0_upper: lambda0_support(phase_configs, sat_headway_s)?,
        sample_count: usable,
        fallback,
    })
}

fn usable_bins(series: &[PhaseCountSeries]) -> usize {
    if series.is_empty() {
        return 0;
    }
    (0..series[0].counts.len())
        .filter(|&bin| series.iter().map(|s| s.counts[bin]).sum::<u64>() > 0)
        .count()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn series(phase_id: &str, counts: Vec<u64>) -> PhaseCountSeries {
        PhaseCountSeries {
            phase_id: phase_id.into(),
            counts,
        }
    }

    #[test]
    fn share_statistics_hand_example() {
        let (mu, sigma2) = share_statistics(&[0.2, 0.3, 0.4], SIGMA_MIN);
        assert_relative_eq!(mu, 0.3, epsilon = 1e-12);
        assert_relative_eq!(sigma2, 0.01, epsilon = 1e-12);
    }

    #[test]
    fn equal_counts_give_symmetric_prior_with_floored_variance() {
        let s = vec![
            series("p1", vec![5; 8]),
            series("p2", vec![5; 8]),
        ];
        let prior = build_alpha_prior(&s, SIGMA_MIN).unwrap();
        for p in &prior {
            assert_relative_eq!(p.mu, 0.5, epsilon = 1e-12);
            assert_relative_eq!(p.sigma2, SIGMA_MIN * SIGMA_MIN, epsilon = 1e-15);
        }
    }

    #[test]
    fn zero_total_bins_are_dropped() {
        let s = vec![
            series("p1", vec![2, 0, 2, 2, 2, 2, 2]),
            series("p2", vec![2, 0, 2, 2, 2, 2, 2]),
        ];
        let prior = build_alpha_prior(&s, SIGMA_MIN).unwrap();
        // 6 usable bins, all shares exactly 0.5
        assert_relative_eq!(prior[0].mu, 0.5, epsilon = 1e-12);
    }

    #[test]
    fn too_few_bins_fall_back_flat() {
        let s = vec![
            series("p1", vec![3, 1, 2]),
            series("p2", vec![1, 3, 2]),
            series("p3", vec![2, 2, 2]),
        ];
        let prior = build_alpha_prior(&s, SIGMA_MIN).unwrap();
        for p in &prior {
            assert_relative_eq!(p.mu, 1.0 / 3.0, epsilon = 1e-12);
            assert_relative_eq!(p.sigma2, 0.0625, epsilon = 1e-12);
        }
    }

    #[test]
    fn all_bins_empty_fall_back_flat() {
        let s = vec![series("p1", vec![0; 10]), series("p2", vec![0; 10])];
        let prior = build_prior(
            &s,
            &[
                PhaseConfig {
                    phase_id: "p1".into(),
                    lane_count: 1,
                    jam_spacing_m: 6.0,
                    free_flow_speed_mps: 12.0,
                },
                PhaseConfig {
                    phase_id: "p2".into(),
                    lane_count: 1,
                    jam_spacing_m: 6.0,
                    free_flow_speed_mps: 12.0,
                },
            ],
            2.0,
            SIGMA_MIN,
        )
        .unwrap();
        assert!(prior.fallback);
        assert_eq!(prior.sample_count, 0);
    }

    #[test]
    fn shares_sum_to_one() {
        let s = vec![
            series("p1", vec![4, 6, 2, 9, 5, 3, 8, 1]),
            series("p2", vec![3, 2, 7, 1, 4, 6, 2, 5]),
            series("p3", vec![1, 1, 3, 2, 2, 4, 1, 2]),
        ];
        let prior = build_alpha_prior(&s, SIGMA_MIN).unwrap();
        let total_mu: f64 = prior.iter().map(|p| p.mu).sum();
        assert_relative_eq!(total_mu, 1.0, epsilon = 1e-9);
    }

    #[test]
    fn shares_invariant_under_count_scaling() {
        let base = vec![
            series("p1", vec![4, 6, 2, 9, 5, 3, 8, 1]),
            series("p2", vec![3, 2, 7, 1, 4, 6, 2, 5]),
        ];
        let scaled: Vec<PhaseCountSeries> = base
            .iter()
            .map(|s| series(&s.phase_id, s.counts.iter().map(|c| c * 7).collect()))
            .collect();
        let a = build_alpha_prior(&base, SIGMA_MIN).unwrap();
        let b = build_alpha_prior(&scaled, SIGMA_MIN).unwrap();
        for (x, y) in a.iter().zip(&b) {
            assert_relative_eq!(x.mu, y.mu, epsilon = 1e-12);
            assert_relative_eq!(x.sigma2, y.sigma2, epsilon = 1e-12);
        }
    }

    #[test]
    fn lambda0_support_examples() {
        let cfg = |id: &str, lanes: u32| PhaseConfig {
            phase_id: id.into(),
            lane_count: lanes,
            jam_spacing_m: 6.0,
            free_flow_speed_mps: 12.0,
        };
        let eight: Vec<PhaseConfig> = (0..8).map(|i| cfg(&format!("p{i}"), 2)).collect();
        assert_relative_eq!(lambda0_support(&eight, 2.0).unwrap(), 8.0);
        let one = vec![cfg("p1", 1)];
        assert_relative_eq!(lambda0_support(&one, 2.0).unwrap(), 0.5);
        assert!(lambda0_support(&one, 0.0).is_err());
    }

    #[test]
    fn prior_json_round_trip() {
        let prior = PriorSpec {
            phases: vec![AlphaPrior {
                phase_id: "p1".into(),
                mu: 0.5,
                sigma2: 0.01,
            }],
            lambda0_upper: 4.0,
            sample_count: 12,
            fallback: false,
        };
        let mut buf = Vec::new();
        serde_json::to_writer(&mut buf, &prior).unwrap();
        let back = PriorSpec::from_json_reader(buf.as_slice()).unwrap();
        assert_eq!(back, prior);
    }
}
