//! Within-cycle arrival scaling profile.
//!
//! `eta(t)` rescales the average arrival rate across the cycle so that
//! `lambda * eta(t)` is the instantaneous rate of the non-homogeneous Poisson
//! arrival process. The profile lives on normalized cycle position so phases
//! with varying cycle lengths share one profile per time-of-day period; its
//! bin values have mean one, hence the cumulative over a full cycle equals
//! the cycle length.

use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::domain::PhaseId;
use crate::error::{Error, Result};
use crate::trajectory::ArrivalObservation;

/// Default number of histogram bins over the cycle.
pub const DEFAULT_BIN_COUNT: usize = 20;
/// Default floor applied to bin values so no observation gets zero weight.
pub const DEFAULT_FLOOR_EPSILON: f64 = 0.05;

/// Per-phase arrival scaling profile over normalized cycle position.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArrivalProfile {
    pub phase_id: PhaseId,
    /// Mean-one bin values of `eta` over `[0, 1)`.
    pub bin_values: Vec<f64>,
}

/// Builds the profile as a floored, mean-one histogram of historical arrival
/// offsets mapped to normalized cycle position. An empty history yields the
/// uniform profile.
pub fn build_profile(
    phase_id: &str,
    historical_offsets: &[(f64, f64)],
    bin_count: usize,
    floor_epsilon: f64,
) -> Result<ArrivalProfile> {
    if bin_count < 1 {
        return Err(Error::InvalidConfig("bin_count must be >= 1".into()));
    }
    if historical_offsets.is_empty() {
        return Ok(ArrivalProfile {
            phase_id: phase_id.to_string(),
            bin_values: vec![1.0; bin_count],
        });
    }
    let mut counts = vec![0u64; bin_count];
    let mut total = 0u64;
    for &(offset_s, cycle_len_s) in historical_offsets {
        if !(cycle_len_s > 0.0) {
            continue;
        }
        let tau = (offset_s / cycle_len_s).clamp(0.0, 1.0);
        let bin = ((tau * bin_count as f64) as usize).min(bin_count - 1);
        counts[bin] += 1;
        total += 1;
    }
    if total == 0 {
        return Ok(ArrivalProfile {
            phase_id: phase_id.to_string(),
            bin_values: vec![1.0; bin_count],
        });
    }
    // Mean-one histogram, floored, renormalized back to mean one.
    let mut values: Vec<f64> = counts
        .iter()
        .map(|&c| (c as f64) * bin_count as f64 / total as f64)
        .collect();
    for v in &mut values {
        *v = v.max(floor_epsilon);
    }
    let mean = values.iter().sum::<f64>() / bin_count as f64;
    for v in &mut values {
        *v /= mean;
    }
    Ok(ArrivalProfile {
        phase_id: phase_id.to_string(),
        bin_values: values,
    })
}

impl ArrivalProfile {
    pub fn uniform(phase_id: &str, bin_count: usize) -> Self {
        ArrivalProfile {
            phase_id: phase_id.to_string(),
            bin_values: vec![1.0; bin_count],
        }
    }

    /// Piecewise-linear cumulative of the bin values at normalized position
    /// `tau`, with `H(0) = 0` and `H(1) = 1`.
    fn cumulative_fraction(&self, tau: f64) -> f64 {
        let bins = self.bin_values.len() as f64;
        let x = tau * bins;
        let full = x.floor().min(bins - 1.0);
        let idx = full as usize;
        let partial = x - full;
        let mut acc = 0.0;
        for v in &self.bin_values[..idx] {
            acc += v;
        }
        acc += self.bin_values[idx] * partial;
        acc / bins
    }
}

/// Cumulative arrival exposure `Lambda(t) = C * H(t / C)`, the integral of
/// `eta` over `[0, t]` within a cycle of length `cycle_length_s`.
pub fn cumulative_arrivals(
    profile: &ArrivalProfile,
    t_s: f64,
    cycle_length_s: f64,
) -> Result<f64> {
    if !(t_s >= 0.0 && t_s <= cycle_length_s) {
        return Err(Error::InvalidConfig(format!(
            "cumulative_arrivals: t={t_s} outside [0, {cycle_length_s}]"
        )));
    }
    if t_s == cycle_length_s {
        return Ok(cycle_length_s); // normalization forces full mass
    }
    Ok(cycle_length_s * profile.cumulative_fraction(t_s / cycle_length_s))
}

/// Fills in the raw and normalized weights of one phase/cycle's observations:
/// the raw weight is the cumulative exposure at the expected arrival time and
/// the normalized weights sum to the observation count.
pub fn observation_weights(
    observations: &mut [ArrivalObservation],
    profile: &ArrivalProfile,
    cycle_length_s: f64,
) -> Result<()> {
    if observations.is_empty() {
        return Ok(());
    }
    let mut sum = 0.0;
    for obs in observations.iter_mut() {
        let w = cumulative_arrivals(profile, obs.arrival_offset_s.min(cycle_length_s), cycle_length_s)?;
        obs.raw_weight = w;
        sum += w;
    }
    if !(sum > 0.0) {
        return Err(Error::InvalidConfig(
            "all observation weights are zero".into(),
        ));
    }
    let count = observations.len() as f64;
    for obs in observations.iter_mut() {
        obs.norm_weight = obs.raw_weight * count / sum;
    }
    Ok(())
}

// --- profile cache file ------------------------------------------------------

pub fn read_profiles<R: Read>(reader: R) -> Result<Vec<ArrivalProfile>> {
    Ok(serde_json::from_reader(reader)?)
}

pub fn load_profiles(path: &Path) -> Result<Vec<ArrivalProfile>> {
    read_profiles(std::fs::File::open(path)?)
}

pub fn write_profiles<W: Write>(writer: W, profiles: &[ArrivalProfile]) -> Result<()> {
    serde_json::to_writer_pretty(writer, profiles)?;
    Ok(())
}

pub fn save_profiles(path: &Path, profiles: &[ArrivalProfile]) -> Result<()> {
    write_profiles(std::fs::File::create(path)?, profiles)
}
