//! Recursive per-phase initial-queue estimation: a flow-conservation estimate
//! bounded by the stop-pattern evidence of the observed CVs, plus the
//! observation adjustment that removes the initial queue from raw queuing
//! positions.
//!
//! All queue quantities here are per lane (they live in the same units as the
//! queuing positions derived from join distances).

use crate::domain::PhaseId;
use crate::trajectory::{ArrivalObservation, CvType};

/// Lower/upper bound on the initial queue from CV-type evidence.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QueueBounds {
    pub lower: f64,
    /// May be `f64::INFINITY` when no bounding CV was observed.
    pub upper: f64,
    /// Set when the raw evidence was contradictory (lower > upper) and the
    /// interval was widened to `[0, upper]`.
    pub widened: bool,
}

/// Full record of one phase/cycle initial-queue estimate.
#[derive(Debug, Clone, PartialEq)]
pub struct InitialQueueState {
    pub phase_id: PhaseId,
    pub cycle_index: u32,
    pub conservation_estimate: f64,
    pub bounds: QueueBounds,
    pub final_estimate: f64,
}

/// Flow-conservation carryover from the previous cycle: vehicles accumulated
/// minus vehicles dissipated during the effective green, floored at zero.
pub fn conservation_estimate(
    prev_queue_veh: f64,
    prev_lambda_vps: f64,
    prev_cycle_s: f64,
    sat_rate_vps: f64,
    prev_green_s: f64,
) -> f64 {
    (prev_queue_veh + prev_lambda_vps * prev_cycle_s - sat_rate_vps * prev_green_s).max(0.0)
}

/// Bounds from stop-pattern evidence.
///
/// - Any multi-stop CV in the previous cycle pushes the lower bound to its
///   maximum second-stop position (those vehicles are part of the residue).
/// - Any non-stopping CV in the previous cycle proves it was undersaturated,
///   forcing the upper bound to zero.
/// - Single-stop CVs of the current cycle cap the queue at their minimum
///   queuing position.
pub fn cv_bounds(types_prev_cycle: &[CvType], type1_positions_this_cycle: &[u32]) -> QueueBounds {
    let lower = types_prev_cycle
        .iter()
        .filter_map(|t| match t {
            CvType::Type2 { secondary_position } => Some(*secondary_position),
            _ => None,
        })
        .max()
        .map_or(0.0, f64::from);
    let upper_type3 = if types_prev_cycle.iter().any(|t| matches!(t, CvType::Type3)) {
        0.0
    } else {
        f64::INFINITY
    };
    let upper_type1 = type1_positions_this_cycle
        .iter()
        .min()
        .map_or(f64::INFINITY, |&n| f64::from(n));
    let upper = upper_type3.min(upper_type1);
    if lower > upper {
        QueueBounds {
            lower: 0.0,
            upper,
            widened: true,
        }
    } else {
        QueueBounds {
            lower,
            upper,
            widened: false,
        }
    }
}

/// Clamps the conservation estimate into the evidence bounds.
pub fn finalize_initial_queue(conservation: f64, bounds: QueueBounds) -> f64 {
    conservation.clamp(bounds.lower, bounds.upper)
}

/// Removes the initial queue from raw queuing positions; counts that would go
/// negative are clamped to zero and flagged.
pub fn adjust_observations(
    observations: &mut [ArrivalObservation],
    initial_queue_estimate: f64,
) -> usize {
    let q = initial_queue_estimate.round().max(0.0) as u32;
    let mut floored = 0;
    for obs in observations.iter_mut() {
        if obs.vehicles_ahead >= q {
            obs.vehicles_ahead -= q;
        } else {
            obs.vehicles_ahead = 0;
            obs.floored = true;
            floored += 1;
        }
    }
    floored
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn conservation_undersaturated_floors_at_zero() {
        // accumulated 10 <= dissipated 15
        assert_relative_eq!(conservation_estimate(0.0, 0.1, 100.0, 0.5, 30.0), 0.0);
    }

    #[test]
    fn conservation_oversaturated_residue() {
        // 5 + 20 - 20 = 5
        assert_relative_eq!(conservation_estimate(5.0, 0.2, 100.0, 0.5, 40.0), 5.0);
    }

    #[test]
    fn conservation_zero_input() {
        assert_relative_eq!(conservation_estimate(0.0, 0.0, 100.0, 0.5, 40.0), 0.0);
    }

    #[test]
    fn bounds_type3_forces_zero_upper() {
        let b = cv_bounds(&[CvType::Type3], &[]);
        assert_eq!((b.lower, b.upper), (0.0, 0.0));
    }

    #[test]
    fn bounds_from_type2_and_type1() {
        let b = cv_bounds(
            &[
                CvType::Type2 {
                    secondary_position: 4,
                },
                CvType::Type1,
            ],
            &[9, 7],
        );
        assert_eq!((b.lower, b.upper), (4.0, 7.0));
        assert!(!b.widened);
    }

    #[test]
    fn bounds_no_evidence() {
        let b = cv_bounds(&[], &[]);
        assert_eq!(b.lower, 0.0);
        assert!(b.upper.is_infinite());
    }

    #[test]
    fn inconsistent_bounds_widen() {
        let b = cv_bounds(
            &[
                CvType::Type2 {
                    secondary_position: 5,
                },
                CvType::Type3,
            ],
            &[],
        );
        assert!(b.widened);
        assert_eq!((b.lower, b.upper), (0.0, 0.0));
    }

    #[test]
    fn finalize_clamps_into_bounds() {
        let b = QueueBounds {
            lower: 4.0,
            upper: 7.0,
            widened: false,
        };
        assert_relative_eq!(finalize_initial_queue(2.0, b), 4.0);
        assert_relative_eq!(finalize_initial_queue(5.0, b), 5.0);
        assert_relative_eq!(finalize_initial_queue(9.0, b), 7.0);
    }

    fn obs(n: u32) -> ArrivalObservation {
        ArrivalObservation {
            phase_id: "p".into(),
            cycle_index: 1,
            vehicles_ahead: n,
            arrival_offset_s: 10.0,
            raw_weight: 0.0,
            norm_weight: 0.0,
            floored: false,
        }
    }

    #[test]
    fn adjust_subtracts_initial_queue() {
        let mut observations = vec![obs(6)];
        let floored = adjust_observations(&mut observations, 4.0);
        assert_eq!(observations[0].vehicles_ahead, 2);
        assert_eq!(floored, 0);
    }

    #[test]
    fn adjust_zero_queue_is_identity() {
        let mut observations = vec![obs(3)];
        adjust_observations(&mut observations, 0.0);
        assert_eq!(observations[0].vehicles_ahead, 3);
        assert!(!observations[0].floored);
    }

    #[test]
    fn adjust_clamps_negative_to_zero_and_flags() {
        let mut observations = vec![obs(3)];
        let floored = adjust_observations(&mut observations, 4.0);
        assert_eq!(observations[0].vehicles_ahead, 0);
        assert!(observations[0].floored);
        assert_eq!(floored, 1);
    }

    proptest::proptest! {
        #[test]
        fn finalize_always_inside_bounds(
            q in 0.0f64..40.0,
            lo in 0.0f64..10.0,
            span in 0.0f64..20.0,
        ) {
            let b = QueueBounds { lower: lo, upper: lo + span, widened: false };
            let out = finalize_initial_queue(q, b);
            proptest::prop_assert!(out >= b.lower && out <= b.upper);
            if q >= b.lower && q <= b.upper {
                proptest::prop_assert_eq!(out, q);
            }
        }
    }
}
