//! Shared domain vocabulary: trajectories, phases, signal plans and cycles.
//!
//! Conventions used throughout the crate:
//! - times are scenario-relative seconds (f64);
//! - distances to the stopline are signed, positive upstream, `<= 0` once the
//!   stopline has been crossed;
//! - a cycle spans the half-open interval `[red_start, next red_start)` and
//!   cycle indices are 1-based.

use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Phase identifiers are opaque labels taken from the input files.
pub type PhaseId = String;

/// Contiguity slack between consecutive cycles, in seconds.
pub const PLAN_CONTIGUITY_TOL_S: f64 = 1e-9;

/// One timestamped report of a vehicle approaching a stopline.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryPoint {
    pub timestamp_s: f64,
    pub distance_to_stopline_m: f64,
    pub speed_mps: f64,
}

/// Time-ordered reports of one vehicle on one phase approach.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub vehicle_id: String,
    pub phase_id: PhaseId,
    pub points: Vec<TrajectoryPoint>,
}

impl Trajectory {
    pub fn validate(&self) -> Result<()> {
        let fail = |reason: &str| {
            Err(Error::InvalidTrajectory {
                vehicle_id: self.vehicle_id.clone(),
                reason: reason.to_string(),
            })
        };
        if self.points.len() < 2 {
            return fail("fewer than 2 points");
        }
        for pair in self.points.windows(2) {
            if !(pair[1].timestamp_s > pair[0].timestamp_s) {
                return fail("timestamps not strictly increasing");
            }
        }
        for p in &self.points {
            if !p.timestamp_s.is_finite() || !p.distance_to_stopline_m.is_finite() {
                return fail("non-finite sample");
            }
            if !(p.speed_mps >= 0.0) {
                return fail("negative speed");
            }
        }
        Ok(())
    }

    /// Time at which the trajectory first reaches the stopline (distance <= 0),
    /// linearly interpolated between the bracketing samples.
    pub fn crossing_time_s(&self) -> Option<f64> {
        let first = self.points.first()?;
        if first.distance_to_stopline_m <= 0.0 {
            return Some(first.timestamp_s);
        }
        for pair in self.points.windows(2) {
            let (a, b) = (pair[0], pair[1]);
            if b.distance_to_stopline_m <= 0.0 {
                let span = a.distance_to_stopline_m - b.distance_to_stopline_m;
                if span <= 0.0 {
                    return Some(b.timestamp_s);
                }
                let frac = a.distance_to_stopline_m / span;
                return Some(a.timestamp_s + frac * (b.timestamp_s - a.timestamp_s));
            }
        }
        None
    }

    /// Reported speed at the first sample past the stopline.
    pub fn crossing_speed_mps(&self) -> Option<f64> {
        self.points
            .iter()
            .find(|p| p.distance_to_stopline_m <= 0.0)
            .map(|p| p.speed_mps)
    }
}

/// Static description of one phase's lane group.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhaseConfig {
    pub phase_id: PhaseId,
    pub lane_count: u32,
    pub jam_spacing_m: f64,
    pub free_flow_speed_mps: f64,
}

impl PhaseConfig {
    pub fn validate(&self) -> Result<()> {
        if self.lane_count < 1 {
            return Err(Error::InvalidConfig(format!(
                "phase {}: lane_count must be >= 1",
                self.phase_id
            )));
        }
        if !(self.jam_spacing_m > 0.0) {
            return Err(Error::InvalidConfig(format!(
                "phase {}: jam_spacing_m must be positive",
                self.phase_id
            )));
        }
        if !(self.free_flow_speed_mps > 0.0) {
            return Err(Error::InvalidConfig(format!(
                "phase {}: free_flow_speed_mps must be positive",
                self.phase_id
            )));
        }
        Ok(())
    }
}

/// One signal cycle of a phase, delimited by red-start times.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CycleTiming {
    /// 1-based cycle index `k`.
    pub cycle_index: u32,
    pub red_start_s: f64,
    pub green_start_s: f64,
    pub green_duration_s: f64,
    pub cycle_length_s: f64,
}

impl CycleTiming {
    pub fn cycle_end_s(&self) -> f64 {
        self.red_start_s + self.cycle_length_s
    }

    pub fn green_end_s(&self) -> f64 {
        self.green_start_s + self.green_duration_s
    }

    pub fn contains(&self, time_s: f64) -> bool {
        time_s >= self.red_start_s && time_s < self.cycle_end_s()
    }
}

/// Per-phase signal timing plus the lane-group configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhasePlan {
    pub phase_id: PhaseId,
    pub lane_count: u32,
    pub jam_spacing_m: f64,
    pub free_flow_speed_mps: f64,
    pub cycles: Vec<CycleTiming>,
}

impl PhasePlan {
    pub fn config(&self) -> PhaseConfig {
        PhaseConfig {
            phase_id: self.phase_id.clone(),
            lane_count: self.lane_count,
            jam_spacing_m: self.jam_spacing_m,
            free_flow_speed_mps: self.free_flow_speed_mps,
        }
    }
}

/// Signal timing for every phase of the intersection, as parsed from file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SignalPlan {
    pub phases: Vec<PhasePlan>,
}

impl SignalPlan {
    pub fn from_json_reader<R: Read>(reader: R) -> Result<Self> {
        Ok(serde_json::from_reader(reader)?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json_reader(std::fs::File::open(path)?)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path)?;
        serde_json::to_writer_pretty(file, self)?;
        Ok(())
    }
}

/// A signal plan whose per-phase cycles have been checked for contiguity.
///
/// All lookups go through this type; construction is the only place the
/// contiguity, green-within-cycle and non-empty invariants are enforced.
#[derive(Debug, Clone)]
pub struct ValidatedPlan {
    phases: Vec<PhasePlan>,
    index: BTreeMap<PhaseId, usize>,
}

/// Validates cycle contiguity and green windows for every phase.
pub fn validate_signal_plan(plan: SignalPlan) -> Result<ValidatedPlan> {
    if plan.phases.is_empty() {
        return Err(Error::InvalidPlan("plan has no phases".into()));
    }
    let mut index = BTreeMap::new();
    for (i, phase) in plan.phases.iter().enumerate() {
        phase.config().validate()?;
        if phase.cycles.is_empty() {
            return Err(Error::InvalidPlan(format!(
                "phase {} has no cycles",
                phase.phase_id
            )));
        }
        if index.insert(phase.phase_id.clone(), i).is_some() {
            return Err(Error::InvalidPlan(format!(
                "duplicate phase id {}",
                phase.phase_id
            )));
        }
        for c in &phase.cycles {
            if !(c.green_duration_s > 0.0) || c.green_duration_s >= c.cycle_length_s {
                return Err(Error::InvalidPlan(format!(
                    "phase {} cycle {}: green ({} s) must satisfy 0 < green < cycle ({} s)",
                    phase.phase_id, c.cycle_index, c.green_duration_s, c.cycle_length_s
                )));
            }
            if c.green_start_s < c.red_start_s
                || c.green_end_s() > c.cycle_end_s() + PLAN_CONTIGUITY_TOL_S
            {
                return Err(Error::InvalidPlan(format!(
                    "phase {} cycle {}: green window outside cycle",
                    phase.phase_id, c.cycle_index
                )));
            }
        }
        for pair in phase.cycles.windows(2) {
            let gap = pair[1].red_start_s - pair[0].cycle_end_s();
            if gap.abs() > PLAN_CONTIGUITY_TOL_S {
                let kind = if gap > 0.0 { "gap" } else { "overlap" };
                return Err(Error::InvalidPlan(format!(
                    "phase {}: {} of {:.3} s between cycles {} and {}",
                    phase.phase_id,
                    kind,
                    gap.abs(),
                    pair[0].cycle_index,
                    pair[1].cycle_index
                )));
            }
        }
    }
    Ok(ValidatedPlan {
        phases: plan.phases,
        index,
    })
}

impl ValidatedPlan {
    pub fn phases(&self) -> &[PhasePlan] {
        &self.phases
    }

    pub fn phase(&self, phase_id: &str) -> Result<&PhasePlan> {
        self.index
            .get(phase_id)
            .map(|&i| &self.phases[i])
            .ok_or_else(|| Error::UnknownPhase(phase_id.to_string()))
    }

    pub fn phase_configs(&self) -> Vec<PhaseConfig> {
        self.phases.iter().map(|p| p.config()).collect()
    }

    /// Horizon of one phase as `[first red start, last red start + C)`.
    pub fn horizon(&self, phase_id: &str) -> Result<(f64, f64)> {
        let phase = self.phase(phase_id)?;
        let first = phase.cycles.first().unwrap();
        let last = phase.cycles.last().unwrap();
        Ok((first.red_start_s, last.cycle_end_s()))
    }

    /// Returns the cycle of `phase_id` containing `time_s` under the half-open
    /// `[red_start, next red_start)` convention.
    pub fn locate_cycle(&self, phase_id: &str, time_s: f64) -> Result<&CycleTiming> {
        let phase = self.phase(phase_id)?;
        let (start, end) = self.horizon(phase_id)?;
        if !(time_s >= start && time_s < end) {
            return Err(Error::OutOfHorizon {
                phase_id: phase_id.to_string(),
                time_s,
                start_s: start,
                end_s: end,
            });
        }
        // Last cycle whose red start is <= time.
        let idx = phase
            .cycles
            .partition_point(|c| c.red_start_s <= time_s)
            .saturating_sub(1);
        Ok(&phase.cycles[idx])
    }

    pub fn into_plan(self) -> SignalPlan {
        SignalPlan {
            phases: self.phases,
        }
    }

    /// Copy of the plan keeping only the first `cycles` cycles of each phase.
    pub fn truncated(&self, cycles: u32) -> ValidatedPlan {
        let mut plan = self.clone();
        for phase in &mut plan.phases {
            phase.cycles.truncate(cycles as usize);
        }
        plan
    }
}

/// Standalone form of [`ValidatedPlan::locate_cycle`].
pub fn locate_cycle<'a>(
    plan: &'a ValidatedPlan,
    phase_id: &str,
    time_s: f64,
) -> Result<&'a CycleTiming> {
    plan.locate_cycle(phase_id, time_s)
}

// --- trajectory CSV ---------------------------------------------------------

#[derive(Debug, Serialize, Deserialize)]
struct TrajectoryRow {
    vehicle_id: String,
    phase_id: String,
    timestamp_s: f64,
    distance_to_stopline_m: f64,
    speed_mps: f64,
}

/// Reads the trajectory CSV format (`vehicle_id,phase_id,timestamp_s,
/// distance_to_stopline_m,speed_mps`, rows grouped by vehicle).
pub fn read_trajectories<R: Read>(reader: R) -> Result<Vec<Trajectory>> {
    let mut csv_reader = csv::Reader::from_reader(reader);
    let mut out: Vec<Trajectory> = Vec::new();
    for row in csv_reader.deserialize::<TrajectoryRow>() {
        let row = row?;
        let point = TrajectoryPoint {
            timestamp_s: row.timestamp_s,
            distance_to_stopline_m: row.distance_to_stopline_m,
            speed_mps: row.speed_mps,
        };
        match out.last_mut() {
            Some(t) if t.vehicle_id == row.vehicle_id && t.phase_id == row.phase_id => {
                t.points.push(point)
            }
            _ => out.push(Trajectory {
                vehicle_id: row.vehicle_id,
                phase_id: row.phase_id,
                points: vec![point],
            }),
        }
    }
    for t in &out {
        t.validate()?;
    }
    Ok(out)
}

pub fn load_trajectories(path: &Path) -> Result<Vec<Trajectory>> {
    read_trajectories(std::fs::File::open(path)?)
}

pub fn write_trajectories<W: Write>(writer: W, trajectories: &[Trajectory]) -> Result<()> {
    let mut csv_writer = csv::Writer::from_writer(writer);
    for t in trajectories {
        for p in &t.points {
            csv_writer.serialize(TrajectoryRow {
                vehicle_id: t.vehicle_id.clone(),
                phase_id: t.phase_id.clone(),
                timestamp_s: round6(p.timestamp_s),
                distance_to_stopline_m: round6(p.distance_to_stopline_m),
                speed_mps: round6(p.speed_mps),
            })?;
        }
    }
    csv_writer.flush()?;
    Ok(())
}

pub fn save_trajectories(path: &Path, trajectories: &[Trajectory]) -> Result<()> {
    write_trajectories(std::fs::File::create(path)?, trajectories)
}

fn round6(x: f64) -> f64 {
    (x * 1e6).round() / 1e6
}

#[cfg(test)]
mod tests {
    use super::*;

    fn two_cycle_plan() -> SignalPlan {
        SignalPlan {
            phases: vec![PhasePlan {
                phase_id: "p1".into(),
                lane_count: 2,
                jam_spacing_m: 6.0,
                free_flow_speed_mps: 12.0,
                cycles: vec![
                    CycleTiming {
                        cycle_index: 1,
                        red_start_s: 0.0,
                        green_start_s: 60.0,
                        green_duration_s: 40.0,
                        cycle_length_s: 100.0,
                    },
                    CycleTiming {
                        cycle_index: 2,
                        red_start_s: 100.0,
                        green_start_s: 160.0,
                        green_duration_s: 40.0,
                        cycle_length_s: 100.0,
                    },
                ],
            }],
        }
    }

    #[test]
    fn contiguous_plan_accepted() {
        assert!(validate_signal_plan(two_cycle_plan()).is_ok());
    }

    #[test]
    fn gap_between_cycles_rejected() {
        let mut plan = two_cycle_plan();
        plan.phases[0].cycles[1].red_start_s = 110.0;
        plan.phases[0].cycles[1].green_start_s = 170.0;
        let err = validate_signal_plan(plan).unwrap_err();
        assert!(err.to_string().contains("gap"));
    }

    #[test]
    fn green_not_less_than_cycle_rejected() {
        let mut plan = two_cycle_plan();
        plan.phases[0].cycles[0].green_duration_s = 100.0;
        plan.phases[0].cycles[0].green_start_s = 0.0;
        let err = validate_signal_plan(plan).unwrap_err();
        assert!(err.to_string().contains("green"));
    }

    #[test]
    fn empty_phase_rejected() {
        let mut plan = two_cycle_plan();
        plan.phases[0].cycles.clear();
        assert!(validate_signal_plan(plan).is_err());
    }

    #[test]
    fn locate_cycle_interior_point() {
        let plan = validate_signal_plan(two_cycle_plan()).unwrap();
        assert_eq!(plan.locate_cycle("p1", 150.0).unwrap().cycle_index, 2);
    }

    #[test]
    fn locate_cycle_half_open_boundary() {
        let plan = validate_signal_plan(two_cycle_plan()).unwrap();
        assert_eq!(plan.locate_cycle("p1", 100.0).unwrap().cycle_index, 2);
        assert_eq!(plan.locate_cycle("p1", 0.0).unwrap().cycle_index, 1);
    }

    #[test]
    fn locate_cycle_outside_horizon() {
        let plan = validate_signal_plan(two_cycle_plan()).unwrap();
        assert!(plan.locate_cycle("p1", 250.0).is_err());
        assert!(plan.locate_cycle("p1", -1.0).is_err());
    }

    #[test]
    fn locate_cycle_total_and_piecewise_constant() {
        let plan = validate_signal_plan(two_cycle_plan()).unwrap();
        let mut t = 0.0;
        while t < 200.0 {
            let k = plan.locate_cycle("p1", t).unwrap().cycle_index;
            let expected = if t < 100.0 { 1 } else { 2 };
            assert_eq!(k, expected, "t={t}");
            t += 0.37;
        }
    }

    #[test]
    fn trajectory_csv_round_trip() {
        let trajectories = vec![Trajectory {
            vehicle_id: "v1".into(),
            phase_id: "p1".into(),
            points: vec![
                TrajectoryPoint {
                    timestamp_s: 0.0,
                    distance_to_stopline_m: 120.0,
                    speed_mps: 12.0,
                },
                TrajectoryPoint {
                    timestamp_s: 3.0,
                    distance_to_stopline_m: 84.0,
                    speed_mps: 12.0,
                },
            ],
        }];
        let mut buf = Vec::new();
        write_trajectories(&mut buf, &trajectories).unwrap();
        let back = read_trajectories(buf.as_slice()).unwrap();
        assert_eq!(back, trajectories);
    }

    #[test]
    fn trajectory_validation_rejects_bad_input() {
        let mut t = Trajectory {
            vehicle_id: "v".into(),
            phase_id: "p".into(),
            points: vec![TrajectoryPoint {
                timestamp_s: 0.0,
                distance_to_stopline_m: 10.0,
                speed_mps: 1.0,
            }],
        };
        assert!(t.validate().is_err());
        t.points.push(TrajectoryPoint {
            timestamp_s: 0.0,
            distance_to_stopline_m: 9.0,
            speed_mps: 1.0,
        });
        assert!(t.validate().is_err()); // equal timestamps
    }

    #[test]
    fn crossing_time_interpolates() {
        let t = Trajectory {
            vehicle_id: "v".into(),
            phase_id: "p".into(),
            points: vec![
                TrajectoryPoint {
                    timestamp_s: 0.0,
                    distance_to_stopline_m: 6.0,
                    speed_mps: 12.0,
                },
                TrajectoryPoint {
                    timestamp_s: 1.0,
                    distance_to_stopline_m: -6.0,
                    speed_mps: 12.0,
                },
            ],
        };
        assert!((t.crossing_time_s().unwrap() - 0.5).abs() < 1e-12);
    }
}
