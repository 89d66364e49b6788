//! Turns raw trajectories into the quantities the estimators consume: queue
//! events, arrival observations, stop-pattern labels and a fitted saturation
//! rate from the departure wave.

use serde::{Deserialize, Serialize};

use crate::domain::{PhaseConfig, PhaseId, Trajectory, ValidatedPlan};
use crate::error::{Error, Result};

/// Queue-join speed threshold (5 km/h).
pub const QUEUE_SPEED_THRESHOLD_MPS: f64 = 5.0 / 3.6;

/// One stop episode of a vehicle: joins the queue, waits, starts moving again.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QueueEvent {
    pub join_time_s: f64,
    pub join_distance_m: f64,
    pub leave_time_s: f64,
    pub leave_distance_m: f64,
    /// 1-based stop count for the vehicle.
    pub episode_index: u32,
}

/// One queued CV rewritten as an arrival-count observation: `vehicles_ahead`
/// arrivals were seen in `[0, arrival_offset_s]` of cycle `cycle_index`.
#[derive(Debug, Clone, PartialEq)]
pub struct ArrivalObservation {
    pub phase_id: PhaseId,
    pub cycle_index: u32,
    pub vehicles_ahead: u32,
    pub arrival_offset_s: f64,
    /// Unnormalized weight (cumulative arrival exposure); filled in by the
    /// weighting step.
    pub raw_weight: f64,
    /// Weight normalized so the per-phase sum equals the observation count.
    pub norm_weight: f64,
    /// Set when the initial-queue adjustment clamped `vehicles_ahead` at zero.
    pub floored: bool,
}

/// Stop-pattern label of a CV that crossed the stopline.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum CvType {
    /// Stopped exactly once before passing.
    Type1,
    /// Stopped more than once; carries the second stop's queuing position.
    Type2 { secondary_position: u32 },
    /// Passed without stopping.
    Type3,
}

/// Where a saturation estimate came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SaturationSource {
    PerCycle,
    TodAggregate,
}

/// Saturation discharge parameters recovered from queue-leaving points.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SaturationEstimate {
    /// Saturation departure rate per lane, veh/s.
    pub sat_rate_vps: f64,
    /// Saturation headway, s (inverse of the rate).
    pub sat_headway_s: f64,
    /// Departure wave speed, m/s.
    pub departure_wave_mps: f64,
    /// Mean stopline-crossing speed of the queued vehicles, m/s.
    pub stopline_speed_mps: f64,
    pub source: SaturationSource,
}

/// A queue-leaving point used for the departure-wave fit.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QueuedDeparture {
    pub leave_time_s: f64,
    pub leave_distance_m: f64,
    pub stopline_speed_mps: f64,
}

/// Splits a trajectory into stop episodes.
///
/// An episode opens at the first sample slower than `speed_threshold_mps` and
/// closes once the speed has recovered AND the vehicle has advanced more than
/// half a jam spacing past its join position; the hysteresis keeps one
/// physical stop from splitting under noisy sampling. The leave point is the
/// last below-threshold sample of the episode.
pub fn detect_queue_events(
    traj: &Trajectory,
    speed_threshold_mps: f64,
    jam_spacing_m: f64,
) -> Vec<QueueEvent> {
    let mut events = Vec::new();
    let mut open: Option<(usize, usize)> = None; // (join idx, last stopped idx)
    for (i, p) in traj.points.iter().enumerate() {
        match open {
            None => {
                if p.speed_mps < speed_threshold_mps {
                    open = Some((i, i));
                }
            }
            Some((join, last_stop)) => {
                if p.speed_mps < speed_threshold_mps {
                    open = Some((join, i));
                } else {
                    let advance =
                        traj.points[join].distance_to_stopline_m - p.distance_to_stopline_m;
                    if advance > 0.5 * jam_spacing_m {
                        events.push(make_event(traj, join, last_stop, events.len() as u32 + 1));
                        open = None;
                    }
                }
            }
        }
    }
    if let Some((join, last_stop)) = open {
        // Data ended mid-episode; close it at the last stopped sample.
        events.push(make_event(traj, join, last_stop, events.len() as u32 + 1));
    }
    events
}

fn make_event(traj: &Trajectory, join: usize, last_stop: usize, index: u32) -> QueueEvent {
    QueueEvent {
        join_time_s: traj.points[join].timestamp_s,
        join_distance_m: traj.points[join].distance_to_stopline_m,
        leave_time_s: traj.points[last_stop].timestamp_s,
        leave_distance_m: traj.points[last_stop].distance_to_stopline_m,
        episode_index: index,
    }
}

/// Queuing position from a join distance: nearest rank, floored at 1.
pub fn queuing_position(join_distance_m: f64, jam_spacing_m: f64) -> u32 {
    let n = (join_distance_m / jam_spacing_m).round();
    (n.max(1.0)) as u32
}

/// Derives the (n, t) arrival observation for a vehicle's first stop episode.
///
/// The approach speed is the mean of the pre-join samples at or above the
/// queue threshold, falling back to the configured free-flow speed when the
/// vehicle was first seen already queued.
pub fn derive_observation(
    event: &QueueEvent,
    traj: &Trajectory,
    plan: &ValidatedPlan,
    cfg: &PhaseConfig,
    speed_threshold_mps: f64,
) -> Result<ArrivalObservation> {
    let n = queuing_position(event.join_distance_m, cfg.jam_spacing_m);
    let mut speed_sum = 0.0;
    let mut speed_count = 0usize;
    for p in &traj.points {
        if p.timestamp_s >= event.join_time_s {
            break;
        }
        if p.speed_mps >= speed_threshold_mps {
            speed_sum += p.speed_mps;
            speed_count += 1;
        }
    }
    let approach_speed = if speed_count > 0 {
        speed_sum / speed_count as f64
    } else {
        cfg.free_flow_speed_mps
    };
    let expected_arrival = event.join_time_s + event.join_distance_m.max(0.0) / approach_speed;
    let cycle = plan.locate_cycle(&traj.phase_id, expected_arrival)?;
    let offset = (expected_arrival - cycle.red_start_s).max(f64::MIN_POSITIVE);
    Ok(ArrivalObservation {
        phase_id: traj.phase_id.clone(),
        cycle_index: cycle.cycle_index,
        vehicles_ahead: n,
        arrival_offset_s: offset,
        raw_weight: 0.0,
        norm_weight: 0.0,
        floored: false,
    })
}

/// Labels a CV by its stop pattern. Errors if the trajectory never crossed
/// the stopline (such vehicles carry no bound evidence).
pub fn classify_cv(
    traj: &Trajectory,
    events: &[QueueEvent],
    jam_spacing_m: f64,
) -> Result<CvType> {
    if traj.crossing_time_s().is_none() {
        return Err(Error::InvalidTrajectory {
            vehicle_id: traj.vehicle_id.clone(),
            reason: "never crossed the stopline; cannot classify".into(),
        });
    }
    match events.len() {
        0 => Ok(CvType::Type3),
        1 => Ok(CvType::Type1),
        _ => Ok(CvType::Type2 {
            secondary_position: queuing_position(events[1].join_distance_m, jam_spacing_m),
        }),
    }
}

/// Fits the saturation rate of one cycle from queue-leaving points.
///
/// The departure wave speed is the slope of the least-squares line through
/// (leave time, leave distance) — the wave front moves upstream, so distance
/// grows with time. When the cycle has fewer than two points the pooled TOD
/// departures (mapped to a common cycle) are used instead.
pub fn fit_saturation_rate(
    queued_departures: &[QueuedDeparture],
    d0_m: f64,
    fallback_pool: &[QueuedDeparture],
) -> Result<SaturationEstimate> {
    let (points, source) = if queued_departures.len() >= 2 {
        (queued_departures, SaturationSource::PerCycle)
    } else if fallback_pool.len() >= 2 {
        (fallback_pool, SaturationSource::TodAggregate)
    } else {
        return Err(Error::InsufficientDepartures);
    };

    let n = points.len() as f64;
    let mean_t: f64 = points.iter().map(|p| p.leave_time_s).sum::<f64>() / n;
    let mean_d: f64 = points.iter().map(|p| p.leave_distance_m).sum::<f64>() / n;
    let mut cov = 0.0;
    let mut var = 0.0;
    for p in points {
        cov += (p.leave_time_s - mean_t) * (p.leave_distance_m - mean_d);
        var += (p.leave_time_s - mean_t).powi(2);
    }
    if var <= 0.0 {
        return Err(Error::DegenerateWave);
    }
    let wave = cov / var;
    if !(wave > 0.0) {
        return Err(Error::DegenerateWave);
    }
    let stopline_speed =
        points.iter().map(|p| p.stopline_speed_mps).sum::<f64>() / n;
    if !(stopline_speed > 0.0) {
        return Err(Error::DegenerateWave);
    }
    let sat_rate = (wave * stopline_speed) / ((wave + stopline_speed) * d0_m);
    Ok(SaturationEstimate {
        sat_rate_vps: sat_rate,
        sat_headway_s: 1.0 / sat_rate,
        departure_wave_mps: wave,
        stopline_speed_mps: stopline_speed,
        source,
    })
}
