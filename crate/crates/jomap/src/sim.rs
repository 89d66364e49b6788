//! Seeded synthetic intersection simulator.
//!
//! A point-queue model with spatial jam-spacing positions: queued vehicle i
//! of a lane waits at distance `i * l0`; at green start a release wave moves
//! upstream at `w` and released vehicles drive to the stopline at the
//! discharge speed `v`, which reproduces a saturation headway of
//! `l0 * (w + v) / (w * v)` per lane exactly. Vehicles not served re-queue at
//! compacted positions, producing the multi-stop patterns of oversaturation.
//! Arriving vehicles pick the shortest lane queue, deliberately breaking FIFO
//! across the lane group.

use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Poisson};
use serde::{Deserialize, Serialize};

use crate::domain::{
    CycleTiming, PhaseConfig, PhaseId, PhasePlan, SignalPlan, Trajectory, TrajectoryPoint,
};
use crate::error::{Error, Result};

/// Distance past the stopline to which samples are emitted, m.
const EXIT_DISTANCE_M: f64 = 40.0;

/// How vehicles arrive within a cycle.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ArrivalPattern {
    /// Uniform over the cycle (homogeneous Poisson arrivals).
    Random,
    /// A fraction `inside_mass` of each cycle's arrivals lands uniformly in
    /// the window, the remainder uniformly over the whole cycle.
    Platoon {
        window_start_frac: f64,
        window_len_frac: f64,
        inside_mass: f64,
    },
}

/// Mean demand per cycle, either listed explicitly or as a sinusoid around a
/// mean to mimic cycle-to-cycle fluctuation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DemandSpec {
    PerCycle { means: Vec<f64> },
    Sinusoid {
        mean_veh: f64,
        amplitude_frac: f64,
        period_cycles: f64,
        phase_frac: f64,
    },
}

impl DemandSpec {
    pub fn mean_for_cycle(&self, cycle_index: u32) -> f64 {
        match self {
            DemandSpec::PerCycle { means } => {
                means.get(cycle_index as usize - 1).copied().unwrap_or(0.0)
            }
            DemandSpec::Sinusoid {
                mean_veh,
                amplitude_frac,
                period_cycles,
                phase_frac,
            } => {
                let angle = std::f64::consts::TAU
                    * (f64::from(cycle_index) / period_cycles + phase_frac);
                (mean_veh * (1.0 + amplitude_frac * angle.sin())).max(0.0)
            }
        }
    }
}

/// One phase of the scenario: lane-group configuration, signal position,
/// demand profile and arrival pattern.
///
/// Each phase's cycles are delimited by its own red starts, with the
/// effective green occupying the cycle tail; phases are staggered against
/// each other by `red_offset_s` the way ring positions stagger movements.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioPhase {
    pub phase_id: PhaseId,
    pub lane_count: u32,
    pub jam_spacing_m: f64,
    pub free_flow_speed_mps: f64,
    /// Shift of this phase's red start against scenario time zero, s.
    #[serde(default)]
    pub red_offset_s: f64,
    pub green_duration_s: f64,
    pub demand: DemandSpec,
    pub pattern: ArrivalPattern,
}

impl ScenarioPhase {
    pub fn config(&self) -> PhaseConfig {
        PhaseConfig {
            phase_id: self.phase_id.clone(),
            lane_count: self.lane_count,
            jam_spacing_m: self.jam_spacing_m,
            free_flow_speed_mps: self.free_flow_speed_mps,
        }
    }
}

fn default_report_interval() -> f64 {
    3.0
}

/// Full scenario description; mirrors the scenario JSON file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioConfig {
    pub cycle_length_s: f64,
    /// Cycles with demand (the evaluated horizon).
    pub cycle_count: u32,
    /// Demand-free cycles appended so every vehicle can discharge.
    #[serde(default)]
    pub trailing_cycles: u32,
    pub sat_headway_s: f64,
    pub detection_range_m: f64,
    #[serde(default = "default_report_interval")]
    pub report_interval_s: f64,
    #[serde(default)]
    pub position_noise_std_m: f64,
    pub penetration: f64,
    pub seed: u64,
    pub phases: Vec<ScenarioPhase>,
}

impl ScenarioConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.cycle_length_s > 0.0) || self.cycle_count == 0 {
            return Err(Error::InvalidConfig("cycle structure must be non-empty".into()));
        }
        if !(self.sat_headway_s > 0.0) {
            return Err(Error::InvalidConfig("sat_headway_s must be positive".into()));
        }
        if !(self.report_interval_s > 0.0) {
            return Err(Error::InvalidConfig("report_interval_s must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.penetration) {
            return Err(Error::InvalidConfig("penetration must be in [0, 1]".into()));
        }
        if self.phases.is_empty() {
            return Err(Error::InvalidConfig("scenario has no phases".into()));
        }
        for p in &self.phases {
            p.config().validate()?;
            if p.red_offset_s < 0.0
                || p.red_offset_s >= self.cycle_length_s
                || !(p.green_duration_s > 0.0)
                || p.green_duration_s >= self.cycle_length_s
            {
                return Err(Error::InvalidConfig(format!(
                    "phase {}: signal window outside cycle",
                    p.phase_id
                )));
            }
            if let ArrivalPattern::Platoon {
                window_start_frac,
                window_len_frac,
                inside_mass,
            } = p.pattern
            {
                if !(0.0..1.0).contains(&window_start_frac)
                    || !(window_len_frac > 0.0)
                    || window_start_frac + window_len_frac > 1.0
                    || !(inside_mass > 0.0 && inside_mass <= 1.0)
                {
                    return Err(Error::InvalidConfig(format!(
                        "phase {}: invalid platoon window",
                        p.phase_id
                    )));
                }
            }
            // The discharge speed equals the free-flow speed; the wave speed
            // derived from the saturation headway must come out positive.
            let l0 = p.jam_spacing_m;
            let v = p.free_flow_speed_mps;
            if self.sat_headway_s * v <= l0 {
                return Err(Error::InvalidConfig(format!(
                    "phase {}: sat_headway * speed must exceed jam spacing",
                    p.phase_id
                )));
            }
        }
        Ok(())
    }

    pub fn total_cycles(&self) -> u32 {
        self.cycle_count + self.trailing_cycles
    }

    /// Signal plan implied by the scenario. Each phase's cycle k spans
    /// `[offset + (k-1)C, offset + kC)` with green over the last G seconds.
    pub fn plan(&self) -> SignalPlan {
        let c = self.cycle_length_s;
        SignalPlan {
            phases: self
                .phases
                .iter()
                .map(|p| PhasePlan {
                    phase_id: p.phase_id.clone(),
                    lane_count: p.lane_count,
                    jam_spacing_m: p.jam_spacing_m,
                    free_flow_speed_mps: p.free_flow_speed_mps,
                    cycles: (1..=self.total_cycles())
                        .map(|k| {
                            let red = p.red_offset_s + c * f64::from(k - 1);
                            CycleTiming {
                                cycle_index: k,
                                red_start_s: red,
                                green_start_s: red + c - p.green_duration_s,
                                green_duration_s: p.green_duration_s,
                                cycle_length_s: c,
                            }
                        })
                        .collect(),
                })
                .collect(),
        }
    }

    /// The eight-phase reference intersection used by the evaluation harness:
    /// two rings of four movements, platoon arrivals on one street and random
    /// arrivals on the other, mean demands between 20 and 50 veh/phase/cycle
    /// with sinusoidal fluctuation pushing the busiest phases into transient
    /// oversaturation.
    pub fn reference(seed: u64) -> Self {
        let cycle = 120.0;
        let left = 25.0;
        let through = 35.0;
        let platoon = ArrivalPattern::Platoon {
            window_start_frac: 0.10,
            window_len_frac: 0.40,
            inside_mass: 0.80,
        };
        let sinusoid = |mean: f64, phase_frac: f64| DemandSpec::Sinusoid {
            mean_veh: mean,
            amplitude_frac: 0.25,
            period_cycles: 25.0,
            phase_frac,
        };
        let phase = |id: &str,
                     lanes: u32,
                     offset: f64,
                     green: f64,
                     demand: DemandSpec,
                     pattern: ArrivalPattern| ScenarioPhase {
            phase_id: id.to_string(),
            lane_count: lanes,
            jam_spacing_m: 6.0,
            free_flow_speed_mps: 12.0,
            red_offset_s: offset,
            green_duration_s: green,
            demand,
            pattern,
        };
        ScenarioConfig {
            cycle_length_s: cycle,
            cycle_count: 75,
            trailing_cycles: 4,
            sat_headway_s: 2.0,
            detection_range_m: 450.0,
            report_interval_s: 3.0,
            position_noise_std_m: 2.0,
            penetration: 1.0,
            seed,
            phases: vec![
                phase("ph1", 2, 0.0, left, sinusoid(22.0, 0.00), platoon),
                phase("ph2", 3, 25.0, through, sinusoid(48.0, 0.15), platoon),
                phase("ph3", 2, 60.0, left, sinusoid(20.0, 0.35), ArrivalPattern::Random),
                phase("ph4", 3, 85.0, through, sinusoid(42.0, 0.50), ArrivalPattern::Random),
                phase("ph5", 2, 10.0, left, sinusoid(23.0, 0.60), platoon),
                phase("ph6", 3, 35.0, through, sinusoid(50.0, 0.75), platoon),
                phase("ph7", 2, 70.0, left, sinusoid(20.0, 0.85), ArrivalPattern::Random),
                phase("ph8", 3, 95.0, through, sinusoid(38.0, 0.95), ArrivalPattern::Random),
            ],
        }
    }

    pub fn from_json_reader<R: Read>(reader: R) -> Result<Self> {
        let scenario: ScenarioConfig = serde_json::from_reader(reader)?;
        scenario.validate()?;
        Ok(scenario)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json_reader(std::fs::File::open(path)?)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        serde_json::to_writer_pretty(std::fs::File::create(path)?, self)?;
        Ok(())
    }
}

/// Per phase/cycle ground truth: demand (by expected arrival), volume
/// (stopline crossings) and the initial queue (oversaturation residue at the
/// red start).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GroundTruthRecord {
    pub phase_id: PhaseId,
    pub cycle_index: u32,
    pub demand: u32,
    pub volume: u32,
    pub initial_queue: u32,
}

#[derive(Debug, Clone)]
pub struct SimOutput {
    pub plan: SignalPlan,
    pub trajectories: Vec<Trajectory>,
    pub ground_truth: Vec<GroundTruthRecord>,
}

pub(crate) fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub(crate) fn derive_seed(base: u64, salt: u64) -> u64 {
    splitmix64(base ^ salt.wrapping_mul(0x9E37_79B9_7F4A_7C15))
}

/// Draws the expected (free-flow) stopline arrival times per phase.
///
/// Per cycle, the count is Poisson with the configured mean and the times
/// follow the phase's arrival pattern; deterministic for a given seed.
pub fn generate_arrivals(scenario: &ScenarioConfig) -> Result<BTreeMap<PhaseId, Vec<f64>>> {
    scenario.validate()?;
    let c = scenario.cycle_length_s;
    let mut out = BTreeMap::new();
    for (i, phase) in scenario.phases.iter().enumerate() {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(scenario.seed, 0x1000 + i as u64));
        let mut times = Vec::new();
        for k in 1..=scenario.cycle_count {
            let mean = phase.demand.mean_for_cycle(k);
            if mean <= 0.0 {
                continue;
            }
            let count = Poisson::new(mean)
                .map_err(|_| Error::InvalidConfig("invalid demand mean".into()))?
                .sample(&mut rng) as u64;
            let red = phase.red_offset_s + c * f64::from(k - 1);
            for _ in 0..count {
                let offset = match phase.pattern {
                    ArrivalPattern::Random => rng.gen_range(0.0..c),
                    ArrivalPattern::Platoon {
                        window_start_frac,
                        window_len_frac,
                        inside_mass,
                    } => {
                        if rng.gen_bool(inside_mass) {
                            c * (window_start_frac + rng.gen_range(0.0..window_len_frac))
                        } else {
                            rng.gen_range(0.0..c)
                        }
                    }
                };
                times.push(red + offset);
            }
        }
        times.sort_by(f64::total_cmp);
        out.insert(phase.phase_id.clone(), times);
    }
    Ok(out)
}

/// Bernoulli subsample of the vehicle population; deterministic given a seed.
pub fn sample_cvs(trajectories: &[Trajectory], penetration: f64, seed: u64) -> Vec<Trajectory> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    trajectories
        .iter()
        .filter(|_| rng.gen_bool(penetration.clamp(0.0, 1.0)))
        .cloned()
        .collect()
}

// --- lane model --------------------------------------------------------------

#[derive(Debug, Default)]
struct LaneState {
    /// Service cycle currently being filled.
    cycle: u32,
    /// Service-list length of that cycle (carryover plus joiners).
    len: u32,
    /// Stopline crossing times, non-decreasing.
    cross_times: Vec<f64>,
    assigned: u32,
}

impl LaneState {
    fn roll_to(&mut self, cycle: u32, cap: u32) {
        while self.cycle < cycle {
            self.len = self.len.saturating_sub(cap);
            self.cycle += 1;
        }
    }

    fn in_system(&self, time_s: f64) -> u32 {
        let crossed = self.cross_times.partition_point(|&t| t <= time_s) as u32;
        self.assigned - crossed
    }

    /// Service-list members not yet discharged at `time_s` of the current
    /// cycle (members cross at green start + rank * headway).
    fn remainder(&self, time_s: f64, timing: &CycleTiming, sat_headway: f64, cap: u32) -> u32 {
        let slots = if time_s >= timing.green_start_s {
            ((time_s - timing.green_start_s) / sat_headway + 1e-9).floor() as u32
        } else {
            0
        };
        self.len - self.len.min(cap).min(slots)
    }
}

struct PhaseKinematics {
    free_flow: f64,
    discharge_speed: f64,
    wave_speed: f64,
    jam_spacing: f64,
    sat_headway: f64,
    capacity_per_green: u32,
}

#[derive(Debug)]
struct VehicleRecord {
    expected_arrival: f64,
    cross_time: Option<f64>,
    /// Piecewise-linear (time, distance) profile breakpoints.
    breakpoints: Vec<(f64, f64)>,
}

/// Runs the point-queue model for every phase.
pub fn simulate_intersection(
    scenario: &ScenarioConfig,
    arrivals: &BTreeMap<PhaseId, Vec<f64>>,
) -> Result<SimOutput> {
    scenario.validate()?;
    let plan = scenario.plan();
    let c = scenario.cycle_length_s;
    let total_cycles = scenario.total_cycles();
    let mut trajectories = Vec::new();
    let mut ground_truth = Vec::new();

    for (phase_index, phase) in scenario.phases.iter().enumerate() {
        let l0 = phase.jam_spacing_m;
        let v = phase.free_flow_speed_mps;
        // Saturation headway h = l0 (w + v) / (w v)  =>  wave from h.
        let wave = l0 * v / (scenario.sat_headway_s * v - l0);
        let kin = PhaseKinematics {
            free_flow: v,
            discharge_speed: v,
            wave_speed: wave,
            jam_spacing: l0,
            sat_headway: scenario.sat_headway_s,
            capacity_per_green: ((phase.green_duration_s / scenario.sat_headway_s) - 1e-9)
                .floor()
                .max(0.0) as u32,
        };
        let timings: Vec<CycleTiming> = plan.phases[phase_index].cycles.clone();
        let offset = phase.red_offset_s;
        let horizon_end = offset + c * f64::from(total_cycles);
        let empty = Vec::new();
        let phase_arrivals = arrivals.get(&phase.phase_id).unwrap_or(&empty);

        let mut lanes: Vec<LaneState> = (0..phase.lane_count)
            .map(|_| LaneState::default())
            .collect();
        for lane in &mut lanes {
            lane.cycle = 1;
        }

        let mut records: Vec<VehicleRecord> = Vec::with_capacity(phase_arrivals.len());
        for &tau in phase_arrivals {
            let k = cycle_of(tau, offset, c, total_cycles);
            for lane in &mut lanes {
                lane.roll_to(k, kin.capacity_per_green);
            }
            let lane_idx = (0..lanes.len())
                .min_by_key(|&i| lanes[i].in_system(tau))
                .unwrap();
            let record = place_vehicle(
                tau,
                k,
                &mut lanes[lane_idx],
                &timings,
                &kin,
                scenario.detection_range_m,
                total_cycles,
                horizon_end,
            );
            records.push(record);
        }

        // Ground truth accounting: demand by expected-arrival cycle, volume by
        // crossing cycle, initial queue = arrived earlier but uncrossed.
        let n = total_cycles as usize;
        let mut demand = vec![0u32; n + 1];
        let mut volume = vec![0u32; n + 1];
        let mut queue = vec![0u32; n + 1];
        for r in &records {
            let ck = cycle_of(r.expected_arrival, offset, c, total_cycles);
            demand[ck as usize] += 1;
            let cross_cycle = match r.cross_time {
                Some(t) => {
                    let xk = cycle_of(t, offset, c, total_cycles);
                    volume[xk as usize] += 1;
                    xk
                }
                None => total_cycles + 1, // stranded: queued through the horizon
            };
            // Waiting at every red start after its arrival cycle until it crosses.
            let upper = cross_cycle.min(total_cycles) as usize;
            for j in (ck as usize + 1)..=upper {
                queue[j] += 1;
            }
        }
        for k in 1..=total_cycles {
            ground_truth.push(GroundTruthRecord {
                phase_id: phase.phase_id.clone(),
                cycle_index: k,
                demand: demand[k as usize],
                volume: volume[k as usize],
                initial_queue: queue[k as usize],
            });
        }

        // Emit piecewise-linear samples with optional position noise.
        let mut noise_rng =
            ChaCha8Rng::seed_from_u64(derive_seed(scenario.seed, 0x2000 + phase_index as u64));
        let normal = Normal::new(0.0, scenario.position_noise_std_m.max(0.0))
            .map_err(|_| Error::InvalidConfig("invalid noise std".into()))?;
        for (seq, r) in records.iter().enumerate() {
            let points = emit_samples(
                &r.breakpoints,
                scenario.report_interval_s,
                scenario.position_noise_std_m > 0.0,
                &normal,
                &mut noise_rng,
            );
            if points.len() < 2 {
                continue;
            }
            trajectories.push(Trajectory {
                vehicle_id: format!("{}-{:05}", phase.phase_id, seq),
                phase_id: phase.phase_id.clone(),
                points,
            });
        }
    }

    Ok(SimOutput {
        plan,
        trajectories,
        ground_truth,
    })
}

/// Convenience wrapper: generate arrivals, then simulate.
pub fn simulate(scenario: &ScenarioConfig) -> Result<SimOutput> {
    let arrivals = generate_arrivals(scenario)?;
    simulate_intersection(scenario, &arrivals)
}

fn cycle_of(time_s: f64, red_offset_s: f64, cycle_length_s: f64, total_cycles: u32) -> u32 {
    let k = ((time_s - red_offset_s) / cycle_length_s).floor().max(0.0) as u32 + 1;
    k.min(total_cycles)
}

#[allow(clippy::too_many_arguments)]
fn place_vehicle(
    tau: f64,
    k: u32,
    lane: &mut LaneState,
    timings: &[CycleTiming],
    kin: &PhaseKinematics,
    detection_range_m: f64,
    total_cycles: u32,
    horizon_end: f64,
) -> VehicleRecord {
    lane.assigned += 1;
    let timing = &timings[(k - 1) as usize];
    let in_green = tau >= timing.green_start_s && tau < timing.green_end_s();
    let remainder = lane.remainder(tau, timing, kin.sat_headway, kin.capacity_per_green);

    if in_green && remainder == 0 {
        // The service list has fully discharged; the vehicle passes at free
        // flow (the saturation headway constrains queue discharge only).
        lane.cross_times.push(tau);
        return free_pass_record(tau, tau, kin, detection_range_m);
    }

    lane.len += 1;
    queued_record(
        tau,
        k,
        lane.len,
        lane,
        timings,
        kin,
        detection_range_m,
        total_cycles,
        horizon_end,
    )
}

fn free_pass_record(
    tau: f64,
    cross: f64,
    kin: &PhaseKinematics,
    detection_range_m: f64,
) -> VehicleRecord {
    let appear = tau - detection_range_m / kin.free_flow;
    let exit = cross + EXIT_DISTANCE_M / kin.free_flow;
    VehicleRecord {
        expected_arrival: tau,
        cross_time: Some(cross),
        breakpoints: vec![
            (appear, detection_range_m),
            (cross, 0.0),
            (exit, -EXIT_DISTANCE_M),
        ],
    }
}

/// Resolves the full multi-cycle itinerary of a queued vehicle: one stop per
/// unserved green, compacting forward by the served count each cycle.
#[allow(clippy::too_many_arguments)]
fn queued_record(
    tau: f64,
    first_cycle: u32,
    first_rank: u32,
    lane: &mut LaneState,
    timings: &[CycleTiming],
    kin: &PhaseKinematics,
    detection_range_m: f64,
    total_cycles: u32,
    horizon_end: f64,
) -> VehicleRecord {
    let l0 = kin.jam_spacing;
    let appear = tau - detection_range_m / kin.free_flow;
    let mut breakpoints = vec![(appear, detection_range_m)];
    let mut cycle = first_cycle;
    let mut rank = first_rank;
    let mut cross_time = None;

    let clamp_pos = |r: u32| (f64::from(r) * l0).min(detection_range_m - 1.0);

    // First stop: decelerate from free flow at the back of the queue.
    let mut position = clamp_pos(first_rank);
    let mut join_time = tau - position / kin.free_flow;

    loop {
        if cycle > total_cycles {
            // Stranded at the end of the horizon.
            push_breakpoint(&mut breakpoints, (join_time, position));
            push_breakpoint(&mut breakpoints, (horizon_end, position));
            break;
        }
        let timing = &timings[(cycle - 1) as usize];
        let green = timing.green_start_s;
        let move_time = green + position / kin.wave_speed;
        let served = rank <= kin.capacity_per_green;
        if join_time < move_time {
            push_breakpoint(&mut breakpoints, (join_time, position));
            push_breakpoint(&mut breakpoints, (move_time, position));
        }
        if served {
            let cross = green + f64::from(rank) * kin.sat_headway;
            push_breakpoint(&mut breakpoints, (cross, 0.0));
            push_breakpoint(
                &mut breakpoints,
                (cross + EXIT_DISTANCE_M / kin.discharge_speed, -EXIT_DISTANCE_M),
            );
            lane.cross_times.push(cross);
            cross_time = Some(cross);
            break;
        }
        // Advance by the served count and stop again at the compacted rank.
        rank -= kin.capacity_per_green;
        cycle += 1;
        let next_position = clamp_pos(rank);
        join_time = move_time + (position - next_position).max(0.0) / kin.discharge_speed;
        position = next_position;
    }

    VehicleRecord {
        expected_arrival: tau,
        cross_time,
        breakpoints,
    }
}

fn push_breakpoint(breakpoints: &mut Vec<(f64, f64)>, mut point: (f64, f64)) {
    if let Some(&(last_t, _)) = breakpoints.last() {
        if point.0 <= last_t {
            point.0 = last_t + 1e-6;
        }
    }
    breakpoints.push(point);
}

fn emit_samples(
    breakpoints: &[(f64, f64)],
    interval_s: f64,
    with_noise: bool,
    normal: &Normal<f64>,
    rng: &mut ChaCha8Rng,
) -> Vec<TrajectoryPoint> {
    let (start, end) = (breakpoints[0].0, breakpoints.last().unwrap().0);
    let mut points = Vec::new();
    let mut t = start;
    let mut seg = 0usize;
    while t <= end + 1e-9 {
        while seg + 1 < breakpoints.len() - 1 && breakpoints[seg + 1].0 <= t {
            seg += 1;
        }
        let (t0, d0) = breakpoints[seg];
        let (t1, d1) = breakpoints[seg + 1];
        let span = t1 - t0;
        let (distance, speed) = if span > 0.0 {
            let frac = ((t - t0) / span).clamp(0.0, 1.0);
            (d0 + frac * (d1 - d0), ((d1 - d0) / span).abs())
        } else {
            (d1, 0.0)
        };
        let noise = if with_noise { normal.sample(rng) } else { 0.0 };
        points.push(TrajectoryPoint {
            timestamp_s: t,
            distance_to_stopline_m: distance + noise,
            speed_mps: speed,
        });
        t += interval_s;
    }
    points
}

// --- ground-truth CSV --------------------------------------------------------

pub fn write_ground_truth<W: Write>(writer: W, records: &[GroundTruthRecord]) -> Result<()> {
    let mut out = csv::Writer::from_writer(writer);
    out.write_record(["phase_id", "cycle_index", "demand", "volume", "initial_queue"])?;
    for r in records {
        out.write_record([
            r.phase_id.clone(),
            r.cycle_index.to_string(),
            r.demand.to_string(),
            r.volume.to_string(),
            r.initial_queue.to_string(),
        ])?;
    }
    out.flush()?;
    Ok(())
}

pub fn save_ground_truth(path: &Path, records: &[GroundTruthRecord]) -> Result<()> {
    write_ground_truth(std::fs::File::create(path)?, records)
}

pub fn load_ground_truth(path: &Path) -> Result<Vec<GroundTruthRecord>> {
    let mut reader = csv::Reader::from_path(path)?;
    let mut out = Vec::new();
    for record in reader.deserialize::<GroundTruthRecord>() {
        out.push(record?);
    }
    Ok(out)
}
