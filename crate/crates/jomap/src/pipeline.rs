//! End-to-end estimation pipeline: trajectory preprocessing, the per-phase
//! initial-queue recursion, observation weighting and the per-cycle estimator
//! calls, in real-time cycle order (cycle k is estimated using nothing later
//! than the end of cycle k).

use std::collections::BTreeMap;

use crate::arrival_profile::{
    build_profile, observation_weights, ArrivalProfile, DEFAULT_BIN_COUNT, DEFAULT_FLOOR_EPSILON,
};
use crate::domain::{PhaseId, Trajectory, ValidatedPlan};
use crate::error::{Error, Result};
use crate::estimators::{
    jomap, jomle, sufficient_stats, wmle, CyclePhaseInput, DemandEstimate, Method, SolverConfig,
    ThetaEstimate,
};
use crate::initial_queue::{
    adjust_observations, conservation_estimate, cv_bounds, finalize_initial_queue,
    InitialQueueState, QueueBounds,
};
use crate::prior::{build_prior, PhaseCountSeries, PriorSpec, COUNT_BIN_SECONDS, SIGMA_MIN};
use crate::trajectory::{
    classify_cv, derive_observation, detect_queue_events, fit_saturation_rate,
    ArrivalObservation, CvType, QueuedDeparture, SaturationEstimate, QUEUE_SPEED_THRESHOLD_MPS,
};

/// Tunables of the estimation pipeline.
#[derive(Debug, Clone)]
pub struct EstimationConfig {
    pub speed_threshold_mps: f64,
    pub profile_bin_count: usize,
    pub profile_floor_epsilon: f64,
    pub sigma_min: f64,
    /// Maximum crossing delay (observed crossing minus free-flow arrival)
    /// for a zero-stop CV to count as non-stopping evidence. A short stop can
    /// fall between two reports and leave no slow sample; the accumulated
    /// delay still gives it away.
    pub type3_max_delay_s: f64,
    pub solver: SolverConfig,
}

impl Default for EstimationConfig {
    fn default() -> Self {
        EstimationConfig {
            speed_threshold_mps: QUEUE_SPEED_THRESHOLD_MPS,
            profile_bin_count: DEFAULT_BIN_COUNT,
            profile_floor_epsilon: DEFAULT_FLOOR_EPSILON,
            sigma_min: SIGMA_MIN,
            type3_max_delay_s: 6.0,
            solver: SolverConfig::default(),
        }
    }
}

#[derive(Debug, Default, Clone)]
struct PhaseData {
    /// Raw (unadjusted, unweighted) observations by cycle index.
    observations: Vec<Vec<ArrivalObservation>>,
    /// Stop-pattern evidence by attributed cycle, available causally.
    evidence: Vec<Vec<CvType>>,
    /// Raw queuing positions of single-stop CVs by attributed cycle.
    type1_positions: Vec<Vec<u32>>,
    /// Queue-leaving points by crossing cycle, leave times green-relative.
    departures: Vec<Vec<QueuedDeparture>>,
    /// (arrival offset, cycle length) pairs of every CV, for profiles.
    offsets: Vec<(f64, f64)>,
    /// Expected arrival times of every CV, for the historical count bins.
    expected_arrivals: Vec<f64>,
}

/// Per-phase, per-cycle indexes extracted from a set of CV trajectories.
#[derive(Debug, Clone)]
pub struct Preprocessed {
    phases: BTreeMap<PhaseId, PhaseData>,
    pub cycle_count: u32,
}

/// Expected (free-flow) arrival time of a CV: from the first stop for queued
/// vehicles, projected from the approach speed otherwise.
fn expected_arrival(
    traj: &Trajectory,
    events: &[crate::trajectory::QueueEvent],
    plan: &ValidatedPlan,
    cfg: &EstimationConfig,
) -> Option<f64> {
    if let Some(event) = events.first() {
        let phase = plan.phase(&traj.phase_id).ok()?;
        let obs = derive_observation(event, traj, plan, &phase.config(), cfg.speed_threshold_mps)
            .ok()?;
        let timing = phase.cycles.get(obs.cycle_index as usize - 1)?;
        Some(timing.red_start_s + obs.arrival_offset_s)
    } else {
        let first = traj.points.first()?;
        if first.distance_to_stopline_m <= 0.0 {
            return traj.crossing_time_s();
        }
        let mut sum = 0.0;
        let mut count = 0usize;
        for p in &traj.points {
            if p.distance_to_stopline_m > 0.0 && p.speed_mps >= cfg.speed_threshold_mps {
                sum += p.speed_mps;
                count += 1;
            }
        }
        if count == 0 {
            return traj.crossing_time_s();
        }
        Some(first.timestamp_s + first.distance_to_stopline_m / (sum / count as f64))
    }
}

/// Runs queue-event detection, observation extraction and classification over
/// every trajectory, bucketing the results by phase and cycle.
pub fn preprocess_trajectories(
    plan: &ValidatedPlan,
    trajectories: &[Trajectory],
    cfg: &EstimationConfig,
) -> Preprocessed {
    let cycle_count = plan
        .phases()
        .iter()
        .map(|p| p.cycles.len() as u32)
        .min()
        .unwrap_or(0);
    let slots = cycle_count as usize + 1;
    let mut phases: BTreeMap<PhaseId, PhaseData> = BTreeMap::new();
    for p in plan.phases() {
        phases.insert(
            p.phase_id.clone(),
            PhaseData {
                observations: vec![Vec::new(); slots],
                evidence: vec![Vec::new(); slots],
                type1_positions: vec![Vec::new(); slots],
                departures: vec![Vec::new(); slots],
                ..PhaseData::default()
            },
        );
    }

    for traj in trajectories {
        let Ok(phase) = plan.phase(&traj.phase_id) else {
            continue;
        };
        let phase_cfg = phase.config();
        let events = detect_queue_events(traj, cfg.speed_threshold_mps, phase_cfg.jam_spacing_m);
        let data = phases.get_mut(&traj.phase_id).unwrap();

        let Some(arrival) = expected_arrival(traj, &events, plan, cfg) else {
            continue;
        };
        let Ok(timing) = plan.locate_cycle(&traj.phase_id, arrival) else {
            continue;
        };
        let cycle = timing.cycle_index;
        data.offsets
            .push((arrival - timing.red_start_s, timing.cycle_length_s));
        data.expected_arrivals.push(arrival);

        if let Some(event) = events.first() {
            if let Ok(obs) =
                derive_observation(event, traj, plan, &phase_cfg, cfg.speed_threshold_mps)
            {
                if obs.cycle_index <= cycle_count {
                    data.observations[obs.cycle_index as usize].push(obs);
                }
            }
        }

        let crossing = traj.crossing_time_s();
        if let (Some(cross), Ok(cv_type)) = (
            crossing,
            classify_cv(traj, &events, phase_cfg.jam_spacing_m),
        ) {
            // Causality: single-stop evidence is consumed at the end of its own
            // cycle, multi-stop/non-stop evidence at the end of the next one.
            let cycle_end = timing.cycle_end_s();
            if cycle <= cycle_count {
                match cv_type {
                    CvType::Type1 => {
                        if cross < cycle_end {
                            data.type1_positions[cycle as usize].push(
                                crate::trajectory::queuing_position(
                                    events[0].join_distance_m,
                                    phase_cfg.jam_spacing_m,
                                ),
                            );
                            data.evidence[cycle as usize].push(cv_type);
                        }
                    }
                    CvType::Type2 { .. } => {
                        if cross < cycle_end + timing.cycle_length_s {
                            data.evidence[cycle as usize].push(cv_type);
                        }
                    }
                    CvType::Type3 => {
                        // A materially delayed zero-stop CV was impeded even
                        // if no slow sample was reported; it must not assert
                        // an undersaturated cycle.
                        if cross < cycle_end + timing.cycle_length_s
                            && cross - arrival <= cfg.type3_max_delay_s
                        {
                            data.evidence[cycle as usize].push(cv_type);
                        }
                    }
                }
            }

            // Queue-leaving point of the final stop, for the departure wave.
            // Crossings outside the plan horizon are dropped.
            if let Some(last_event) = events.last() {
                if let (Ok(cross_timing), Some(speed)) = (
                    plan.locate_cycle(&traj.phase_id, cross),
                    traj.crossing_speed_mps(),
                ) {
                    let k = cross_timing.cycle_index as usize;
                    if k < data.departures.len() {
                        data.departures[k].push(QueuedDeparture {
                            leave_time_s: last_event.leave_time_s - cross_timing.green_start_s,
                            leave_distance_m: last_event.leave_distance_m,
                            stopline_speed_mps: speed,
                        });
                    }
                }
            }
        }
    }

    Preprocessed {
        phases,
        cycle_count,
    }
}

/// Everything derived from held-out historical CV data: arrival profiles, the
/// joint prior and the time-of-day saturation estimate with its departure
/// pool.
#[derive(Debug, Clone)]
pub struct HistoricalContext {
    pub profiles: BTreeMap<PhaseId, ArrivalProfile>,
    pub prior: PriorSpec,
    pub saturation: SaturationEstimate,
    pub departure_pools: BTreeMap<PhaseId, Vec<QueuedDeparture>>,
}

impl HistoricalContext {
    /// Builds profiles, prior and saturation from historical CV trajectory
    /// sets (one per historical sampling run; bins are concatenated across
    /// sets).
    pub fn build(
        plan: &ValidatedPlan,
        historical_sets: &[Vec<Trajectory>],
        cfg: &EstimationConfig,
    ) -> Result<Self> {
        let mut offsets: BTreeMap<PhaseId, Vec<(f64, f64)>> = BTreeMap::new();
        let mut pools: BTreeMap<PhaseId, Vec<QueuedDeparture>> = BTreeMap::new();
        let mut series: BTreeMap<PhaseId, Vec<u64>> = BTreeMap::new();
        for p in plan.phases() {
            offsets.insert(p.phase_id.clone(), Vec::new());
            pools.insert(p.phase_id.clone(), Vec::new());
            series.insert(p.phase_id.clone(), Vec::new());
        }

        for set in historical_sets {
            let pre = preprocess_trajectories(plan, set, cfg);
            for (phase_id, data) in &pre.phases {
                offsets.get_mut(phase_id).unwrap().extend(&data.offsets);
                for cycle_departures in &data.departures {
                    pools.get_mut(phase_id).unwrap().extend(cycle_departures);
                }
                // 5-minute count bins over this set's horizon.
                let (start, end) = plan.horizon(phase_id)?;
                let bins = ((end - start) / COUNT_BIN_SECONDS).ceil() as usize;
                let mut counts = vec![0u64; bins];
                for &t in &data.expected_arrivals {
                    let bin = (((t - start) / COUNT_BIN_SECONDS) as usize).min(bins - 1);
                    counts[bin] += 1;
                }
                series.get_mut(phase_id).unwrap().extend(counts);
            }
        }

        let mut profiles = BTreeMap::new();
        for (phase_id, phase_offsets) in &offsets {
            profiles.insert(
                phase_id.clone(),
                build_profile(
                    phase_id,
                    phase_offsets,
                    cfg.profile_bin_count,
                    cfg.profile_floor_epsilon,
                )?,
            );
        }

        // Per-phase wave fits pooled into one intersection saturation
        // estimate, weighted by point count.
        let mut weighted_headway = 0.0;
        let mut weight = 0.0;
        let mut last_fit: Option<SaturationEstimate> = None;
        for p in plan.phases() {
            let pool = &pools[&p.phase_id];
            if let Ok(fit) = fit_saturation_rate(&[], p.jam_spacing_m, pool) {
                weighted_headway += fit.sat_headway_s * pool.len() as f64;
                weight += pool.len() as f64;
                last_fit = Some(fit);
            }
        }
        let saturation = match (weight > 0.0, last_fit) {
            (true, Some(fit)) => SaturationEstimate {
                sat_headway_s: weighted_headway / weight,
                sat_rate_vps: weight / weighted_headway,
                ..fit
            },
            _ => return Err(Error::InsufficientDepartures),
        };

        let count_series: Vec<PhaseCountSeries> = plan
            .phases()
            .iter()
            .map(|p| PhaseCountSeries {
                phase_id: p.phase_id.clone(),
                counts: series[&p.phase_id].clone(),
            })
            .collect();
        let prior = build_prior(
            &count_series,
            &plan.phase_configs(),
            saturation.sat_headway_s,
            cfg.sigma_min,
        )?;

        Ok(HistoricalContext {
            profiles,
            prior,
            saturation,
            departure_pools: pools,
        })
    }

    /// Assembles a context from a prior file plus the evaluation data itself
    /// (profiles and the departure pool are self-built when not supplied).
    pub fn from_parts(
        plan: &ValidatedPlan,
        prior: PriorSpec,
        profiles: Option<Vec<ArrivalProfile>>,
        data: &[Trajectory],
        cfg: &EstimationConfig,
    ) -> Result<Self> {
        let pre = preprocess_trajectories(plan, data, cfg);
        let mut pools: BTreeMap<PhaseId, Vec<QueuedDeparture>> = BTreeMap::new();
        let mut profile_map: BTreeMap<PhaseId, ArrivalProfile> = BTreeMap::new();
        for (phase_id, phase_data) in &pre.phases {
            pools.insert(
                phase_id.clone(),
                phase_data.departures.iter().flatten().copied().collect(),
            );
            match &profiles {
                Some(list) => {
                    let profile = list
                        .iter()
                        .find(|p| &p.phase_id == phase_id)
                        .cloned()
                        .ok_or_else(|| Error::UnknownPhase(phase_id.clone()))?;
                    profile_map.insert(phase_id.clone(), profile);
                }
                None => {
                    profile_map.insert(
                        phase_id.clone(),
                        build_profile(
                            phase_id,
                            &phase_data.offsets,
                            cfg.profile_bin_count,
                            cfg.profile_floor_epsilon,
                        )?,
                    );
                }
            }
        }
        let mut weighted_headway = 0.0;
        let mut weight = 0.0;
        let mut last_fit = None;
        for p in plan.phases() {
            let pool = &pools[&p.phase_id];
            if let Ok(fit) = fit_saturation_rate(&[], p.jam_spacing_m, pool) {
                weighted_headway += fit.sat_headway_s * pool.len() as f64;
                weight += pool.len() as f64;
                last_fit = Some(fit);
            }
        }
        let saturation = match (weight > 0.0, last_fit) {
            (true, Some(fit)) => SaturationEstimate {
                sat_headway_s: weighted_headway / weight,
                sat_rate_vps: weight / weighted_headway,
                ..fit
            },
            _ => return Err(Error::InsufficientDepartures),
        };
        Ok(HistoricalContext {
            profiles: profile_map,
            prior,
            saturation,
            departure_pools: pools,
        })
    }
}

/// Output of one method's run over a trajectory set.
#[derive(Debug, Clone)]
pub struct PipelineOutput {
    pub estimates: Vec<DemandEstimate>,
    pub initial_queue_states: Vec<InitialQueueState>,
    /// Per-cycle solver diagnostics (JO-MAP only).
    pub thetas: Vec<(u32, ThetaEstimate)>,
}

/// Runs one estimator cycle-by-cycle over preprocessed CV data.
pub fn run_method(
    plan: &ValidatedPlan,
    pre: &Preprocessed,
    ctx: &HistoricalContext,
    method: Method,
    cfg: &EstimationConfig,
) -> Result<PipelineOutput> {
    let phases = plan.phases();
    let cycle_count = pre.cycle_count;
    let lambda0_upper = ctx.prior.lambda0_upper;

    // Per-phase recursion state.
    let mut prev_queue: BTreeMap<&str, f64> = BTreeMap::new();
    let mut prev_rate: BTreeMap<&str, Option<f64>> = BTreeMap::new();
    for p in phases {
        prev_queue.insert(&p.phase_id, 0.0);
        prev_rate.insert(&p.phase_id, None);
    }

    let mut estimates = Vec::new();
    let mut queue_states = Vec::new();
    let mut thetas = Vec::new();

    for k in 1..=cycle_count {
        let mut inputs = Vec::with_capacity(phases.len());
        let mut weighted_obs: Vec<Vec<ArrivalObservation>> = Vec::with_capacity(phases.len());
        for phase in phases {
            let data = &pre.phases[&phase.phase_id];
            let timing = phase.cycles[k as usize - 1];
            let prior = ctx.prior.phase(&phase.phase_id)?.clone();

            // Initial queue for this cycle.
            let (q_hat, bounds, q_tilde) = if k == 1 {
                let bounds = QueueBounds {
                    lower: 0.0,
                    upper: f64::INFINITY,
                    widened: false,
                };
                (0.0, bounds, 0.0)
            } else {
                let prev_timing = phase.cycles[k as usize - 2];
                let saturation = fit_saturation_rate(
                    &data.departures[k as usize - 1],
                    phase.jam_spacing_m,
                    &ctx.departure_pools[&phase.phase_id],
                )
                .unwrap_or(ctx.saturation);
                let fallback_rate =
                    prior.mu * lambda0_upper / 2.0 / f64::from(phase.lane_count);
                let lambda_prev = prev_rate[phase.phase_id.as_str()].unwrap_or(fallback_rate);
                let q_tilde = conservation_estimate(
                    prev_queue[phase.phase_id.as_str()],
                    lambda_prev,
                    prev_timing.cycle_length_s,
                    saturation.sat_rate_vps,
                    prev_timing.green_duration_s,
                );
                let bounds = cv_bounds(
                    &data.evidence[k as usize - 1],
                    &data.type1_positions[k as usize],
                );
                (finalize_initial_queue(q_tilde, bounds), bounds, q_tilde)
            };
            queue_states.push(InitialQueueState {
                phase_id: phase.phase_id.clone(),
                cycle_index: k,
                conservation_estimate: q_tilde,
                bounds,
                final_estimate: q_hat,
            });
            prev_queue.insert(&phase.phase_id, q_hat);

            // Adjust and weight this cycle's observations.
            let mut observations = data.observations[k as usize].clone();
            adjust_observations(&mut observations, q_hat);
            observation_weights(
                &mut observations,
                &ctx.profiles[&phase.phase_id],
                timing.cycle_length_s,
            )?;
            let stats = sufficient_stats(&observations, phase.lane_count);
            inputs.push(CyclePhaseInput {
                phase_id: phase.phase_id.clone(),
                lane_count: phase.lane_count,
                stats,
                prior,
            });
            weighted_obs.push(observations);
        }

        let cycle_length = phases[0].cycles[k as usize - 1].cycle_length_s;
        let cycle_estimates: Vec<DemandEstimate> = match method {
            Method::Wmle => phases
                .iter()
                .zip(&weighted_obs)
                .map(|(phase, observations)| {
                    wmle(
                        observations,
                        &phase.phase_id,
                        phase.lane_count,
                        k,
                        phase.cycles[k as usize - 1].cycle_length_s,
                    )
                })
                .collect(),
            Method::JoMle => jomle(&inputs, lambda0_upper, k, cycle_length),
            Method::JoMap => {
                let (theta, estimates) =
                    jomap(&inputs, lambda0_upper, k, cycle_length, &cfg.solver);
                if let Some(theta) = theta {
                    thetas.push((k, theta));
                }
                estimates
            }
        };

        for (phase, estimate) in phases.iter().zip(&cycle_estimates) {
            let rate = estimate.lane_rate_vps.filter(|_| estimate.is_ok());
            prev_rate.insert(&phase.phase_id, rate);
        }
        estimates.extend(cycle_estimates);
    }

    Ok(PipelineOutput {
        estimates,
        initial_queue_states: queue_states,
        thetas,
    })
}

/// Runs several methods over the same preprocessed data.
pub fn run_methods(
    plan: &ValidatedPlan,
    trajectories: &[Trajectory],
    ctx: &HistoricalContext,
    methods: &[Method],
    cfg: &EstimationConfig,
) -> Result<BTreeMap<Method, PipelineOutput>> {
    let pre = preprocess_trajectories(plan, trajectories, cfg);
    let mut out = BTreeMap::new();
    for &method in methods {
        out.insert(method, run_method(plan, &pre, ctx, method, cfg)?);
    }
    Ok(out)
}
