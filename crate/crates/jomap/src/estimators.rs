//! The three demand estimators.
//!
//! - WMLE: per-phase weighted maximum likelihood, closed form.
//! - JO-MLE: joint maximum likelihood with the phase shares fixed at their
//!   historical means; closed form for the total rate.
//! - JO-MAP: joint maximum a posteriori over the total rate and all shares.
//!
//! The MAP stationarity system has Z+2 equations (total rate, Z shares, the
//! share-sum constraint). Substituting the nonnegative root of the per-phase
//! quadratic eliminates the shares, leaving a 2-unknown system in the total
//! rate and the Lagrange multiplier that a damped Newton iteration solves.

use std::io::Write;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::domain::PhaseId;
use crate::error::{Error, Result};
use crate::prior::AlphaPrior;
use crate::trajectory::ArrivalObservation;

/// Relative floor of the open lower end of the total-rate support.
const LAMBDA0_FLOOR_FRAC: f64 = 1e-12;

/// Weighted per-phase summaries of one cycle's observations.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct SufficientStats {
    /// Weighted queued-vehicle count: sum of norm_weight * vehicles_ahead.
    pub weighted_count: f64,
    /// Weighted arrival exposure per lane: sum of norm_weight * raw_weight,
    /// divided by the lane count.
    pub weighted_exposure: f64,
    /// Number of queued CV observations.
    pub observation_count: usize,
}

/// Builds the sufficient statistics of one phase from weighted observations.
pub fn sufficient_stats(observations: &[ArrivalObservation], lane_count: u32) -> SufficientStats {
    let mut n = 0.0;
    let mut w = 0.0;
    for obs in observations {
        n += obs.norm_weight * f64::from(obs.vehicles_ahead);
        w += obs.norm_weight * obs.raw_weight;
    }
    SufficientStats {
        weighted_count: n,
        weighted_exposure: w / f64::from(lane_count),
        observation_count: observations.len(),
    }
}

/// Everything the joint estimators need to know about one phase in one cycle.
#[derive(Debug, Clone, PartialEq)]
pub struct CyclePhaseInput {
    pub phase_id: PhaseId,
    pub lane_count: u32,
    pub stats: SufficientStats,
    pub prior: AlphaPrior,
}

/// Solved parameter bundle of one JO-MAP cycle.
#[derive(Debug, Clone, PartialEq)]
pub struct ThetaEstimate {
    pub lambda0: f64,
    pub shares: Vec<f64>,
    pub multiplier: f64,
    pub converged: bool,
    pub iterations: u32,
    pub residual_norm: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Method {
    Wmle,
    JoMle,
    JoMap,
}

impl Method {
    pub const ALL: [Method; 3] = [Method::Wmle, Method::JoMle, Method::JoMap];

    pub fn as_str(&self) -> &'static str {
        match self {
            Method::Wmle => "WMLE",
            Method::JoMle => "JO-MLE",
            Method::JoMap => "JO-MAP",
        }
    }
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_uppercase().as_str() {
            "WMLE" => Ok(Method::Wmle),
            "JO-MLE" | "JOMLE" => Ok(Method::JoMle),
            "JO-MAP" | "JOMAP" => Ok(Method::JoMap),
            other => Err(Error::InvalidConfig(format!("unknown method {other}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum EstimateStatus {
    Ok,
    Failed,
}

/// One per-phase, per-cycle demand estimate.
#[derive(Debug, Clone, PartialEq)]
pub struct DemandEstimate {
    pub method: Method,
    pub phase_id: PhaseId,
    pub cycle_index: u32,
    pub status: EstimateStatus,
    pub demand_veh: Option<f64>,
    pub lane_rate_vps: Option<f64>,
    pub lambda0: Option<f64>,
    pub alpha: Option<f64>,
    pub iterations: u32,
}

impl DemandEstimate {
    pub fn failed(method: Method, phase_id: &str, cycle_index: u32) -> Self {
        DemandEstimate {
            method,
            phase_id: phase_id.to_string(),
            cycle_index,
            status: EstimateStatus::Failed,
            demand_veh: None,
            lane_rate_vps: None,
            lambda0: None,
            alpha: None,
            iterations: 0,
        }
    }

    pub fn is_ok(&self) -> bool {
        self.status == EstimateStatus::Ok
    }
}

/// Solver knobs for the JO-MAP Newton iteration.
#[derive(Debug, Clone, Copy)]
pub struct SolverConfig {
    pub residual_tol: f64,
    pub max_iterations: u32,
    pub max_halvings: u32,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            residual_tol: 1e-8,
            max_iterations: 200,
            max_halvings: 30,
        }
    }
}

// --- posterior ---------------------------------------------------------------

/// Log posterior of the joint model, up to additive constants independent of
/// the parameters (the factorial and uniform-prior terms are dropped).
/// Returns negative infinity outside the feasible region.
pub fn log_posterior(
    lambda0: f64,
    alphas: &[f64],
    inputs: &[CyclePhaseInput],
    lambda0_upper: f64,
) -> f64 {
    debug_assert_eq!(alphas.len(), inputs.len());
    if !(lambda0 > 0.0) || lambda0 > lambda0_upper * (1.0 + 1e-12) {
        return f64::NEG_INFINITY;
    }
    let mut total = 0.0;
    for (input, &alpha) in inputs.iter().zip(alphas) {
        if alpha < 0.0 {
            return f64::NEG_INFINITY;
        }
        let d = alpha - input.prior.mu;
        total -= d * d / (2.0 * input.prior.sigma2);
        let n = input.stats.weighted_count;
        if n > 0.0 {
            if alpha <= 0.0 {
                return f64::NEG_INFINITY;
            }
            total += n * (alpha.ln() + lambda0.ln());
        }
        total -= alpha * lambda0 * input.stats.weighted_exposure;
    }
    total
}

/// Analytic gradient of [`log_posterior`] with respect to the total rate and
/// each share, treating the shares as free coordinates (the share-sum
/// constraint enters only through the solver's multiplier).
pub fn log_posterior_gradient(
    lambda0: f64,
    alphas: &[f64],
    inputs: &[CyclePhaseInput],
) -> (f64, Vec<f64>) {
    let mut d_lambda0 = 0.0;
    let mut d_alpha = Vec::with_capacity(inputs.len());
    for (input, &alpha) in inputs.iter().zip(alphas) {
        let n = input.stats.weighted_count;
        let w = input.stats.weighted_exposure;
        d_lambda0 += if n > 0.0 { n / lambda0 } else { 0.0 };
        d_lambda0 -= w * alpha;
        let mut g = -(alpha - input.prior.mu) / input.prior.sigma2 - lambda0 * w;
        if n > 0.0 {
            g += n / alpha;
        }
        d_alpha.push(g);
    }
    (d_lambda0, d_alpha)
}

// --- closed-form estimators --------------------------------------------------

/// Per-phase weighted MLE: the stationary point of the weighted likelihood in
/// closed form. Observations must already carry their weights.
pub fn wmle(
    observations: &[ArrivalObservation],
    phase_id: &str,
    lane_count: u32,
    cycle_index: u32,
    cycle_length_s: f64,
) -> DemandEstimate {
    if observations.is_empty() {
        return DemandEstimate::failed(Method::Wmle, phase_id, cycle_index);
    }
    let mut num = 0.0;
    let mut den = 0.0;
    for obs in observations {
        num += obs.norm_weight * f64::from(obs.vehicles_ahead);
        den += obs.norm_weight * obs.raw_weight;
    }
    let lane_rate = num / den;
    if !lane_rate.is_finite() {
        return DemandEstimate::failed(Method::Wmle, phase_id, cycle_index);
    }
    let demand = f64::from(lane_count) * lane_rate * cycle_length_s;
    DemandEstimate {
        method: Method::Wmle,
        phase_id: phase_id.to_string(),
        cycle_index,
        status: EstimateStatus::Ok,
        demand_veh: Some(demand),
        lane_rate_vps: Some(lane_rate),
        lambda0: None,
        alpha: None,
        iterations: 0,
    }
}

/// Joint MLE with the shares fixed at the prior means. Fails only when no
/// phase observed a queued CV; a cycle whose adjusted counts are all zero
/// yields a near-zero rate at the support floor.
pub fn jomle(
    inputs: &[CyclePhaseInput],
    lambda0_upper: f64,
    cycle_index: u32,
    cycle_length_s: f64,
) -> Vec<DemandEstimate> {
    if inputs.iter().all(|p| p.stats.observation_count == 0) {
        return inputs
            .iter()
            .map(|p| DemandEstimate::failed(Method::JoMle, &p.phase_id, cycle_index))
            .collect();
    }
    let total_count: f64 = inputs.iter().map(|p| p.stats.weighted_count).sum();
    let exposure: f64 = inputs
        .iter()
        .map(|p| p.stats.weighted_exposure * p.prior.mu)
        .sum();
    let floor = lambda0_upper * LAMBDA0_FLOOR_FRAC;
    let lambda0 = if exposure > 0.0 {
        (total_count / exposure).clamp(floor, lambda0_upper)
    } else {
        lambda0_upper
    };
    inputs
        .iter()
        .map(|p| {
            let lane_rate = lambda0 * p.prior.mu / f64::from(p.lane_count);
            DemandEstimate {
                method: Method::JoMle,
                phase_id: p.phase_id.clone(),
                cycle_index,
                status: EstimateStatus::Ok,
                demand_veh: Some(lambda0 * p.prior.mu * cycle_length_s),
                lane_rate_vps: Some(lane_rate),
                lambda0: Some(lambda0),
                alpha: Some(p.prior.mu),
                iterations: 0,
            }
        })
        .collect()
}

// --- JO-MAP ------------------------------------------------------------------

/// Nonnegative root of the per-phase share quadratic at fixed total rate and
/// multiplier. Written in a cancellation-free form for large negative linear
/// coefficients.
pub fn alpha_positive_root(
    lambda0: f64,
    delta: f64,
    prior: &AlphaPrior,
    stats: &SufficientStats,
) -> f64 {
    let sigma2 = prior.sigma2;
    let a = prior.mu / sigma2 - lambda0 * stats.weighted_exposure - delta;
    let n = stats.weighted_count;
    if n <= 0.0 {
        return (sigma2 * a).max(0.0);
    }
    let s = (a * a + 4.0 * n / sigma2).sqrt();
    if a >= 0.0 {
        sigma2 * (a + s) / 2.0
    } else {
        // a + s = (s^2 - a^2) / (s - a) = (4n/sigma2) / (s - a)
        2.0 * n / (s - a)
    }
}

/// Derivative of the positive root with respect to its linear coefficient.
fn alpha_root_da(lambda0: f64, delta: f64, prior: &AlphaPrior, stats: &SufficientStats) -> f64 {
    let sigma2 = prior.sigma2;
    let a = prior.mu / sigma2 - lambda0 * stats.weighted_exposure - delta;
    let n = stats.weighted_count;
    if n <= 0.0 {
        return if a > 0.0 {
            sigma2
        } else if a < 0.0 {
            0.0
        } else {
            sigma2 / 2.0
        };
    }
    let s = (a * a + 4.0 * n / sigma2).sqrt();
    sigma2 * (1.0 + a / s) / 2.0
}

struct ReducedSystem<'a> {
    inputs: &'a [CyclePhaseInput],
    total_count: f64,
}

impl ReducedSystem<'_> {
    fn alphas(&self, lambda0: f64, delta: f64) -> Vec<f64> {
        self.inputs
            .iter()
            .map(|p| alpha_positive_root(lambda0, delta, &p.prior, &p.stats))
            .collect()
    }

    /// Residual of the reduced system: the total-rate stationarity equation
    /// (multiplied through by the rate) and the share-sum constraint.
    fn residual(&self, lambda0: f64, delta: f64) -> [f64; 2] {
        let mut exposure = 0.0;
        let mut share_sum = 0.0;
        for p in self.inputs {
            let alpha = alpha_positive_root(lambda0, delta, &p.prior, &p.stats);
            exposure += p.stats.weighted_exposure * alpha;
            share_sum += alpha;
        }
        [self.total_count - lambda0 * exposure, share_sum - 1.0]
    }

    fn jacobian(&self, lambda0: f64, delta: f64) -> [[f64; 2]; 2] {
        let mut exposure = 0.0;
        let mut d_exp_dl = 0.0;
        let mut d_exp_dd = 0.0;
        let mut d_sum_dl = 0.0;
        let mut d_sum_dd = 0.0;
        for p in self.inputs {
            let alpha = alpha_positive_root(lambda0, delta, &p.prior, &p.stats);
            let da = alpha_root_da(lambda0, delta, &p.prior, &p.stats);
            let w = p.stats.weighted_exposure;
            let dal = -w * da; // d(alpha)/d(lambda0)
            let dad = -da; // d(alpha)/d(delta)
            exposure += w * alpha;
            d_exp_dl += w * dal;
            d_exp_dd += w * dad;
            d_sum_dl += dal;
            d_sum_dd += dad;
        }
        [
            [-exposure - lambda0 * d_exp_dl, -lambda0 * d_exp_dd],
            [d_sum_dl, d_sum_dd],
        ]
    }

    /// Solves the share-sum constraint for the multiplier at fixed total rate
    /// by bracketed bisection (the share sum is monotone in the multiplier).
    fn solve_delta(&self, lambda0: f64, delta_init: f64) -> f64 {
        let g = |d: f64| self.residual(lambda0, d)[1];
        let mut lo = delta_init;
        let mut hi = delta_init;
        let mut step = delta_init.abs().max(1.0);
        for _ in 0..200 {
            if g(lo) > 0.0 {
                break;
            }
            lo -= step;
            step *= 2.0;
        }
        step = delta_init.abs().max(1.0);
        for _ in 0..200 {
            if g(hi) < 0.0 {
                break;
            }
            hi += step;
            step *= 2.0;
        }
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            let v = g(mid);
            if v.abs() < 1e-15 {
                return mid;
            }
            if v > 0.0 {
                lo = mid;
            } else {
                hi = mid;
            }
            if (hi - lo).abs() <= f64::EPSILON * mid.abs().max(1.0) {
                break;
            }
        }
        0.5 * (lo + hi)
    }
}

fn norm2(r: &[f64; 2]) -> f64 {
    (r[0] * r[0] + r[1] * r[1]).sqrt()
}

fn norm_inf(r: &[f64; 2]) -> f64 {
    r[0].abs().max(r[1].abs())
}

/// Joint MAP estimation of one cycle.
///
/// Fails only when no phase observed a queued CV. Initialization uses the
/// prior means (shares at mu, total rate at the middle of its support); the
/// reduced 2-unknown system is then solved by damped Newton. A total rate
/// leaving its support is clamped to the boundary with the multiplier
/// re-solved, which is the exact boundary optimum; on non-convergence the
/// JO-MLE solution is returned with `converged = false`.
pub fn jomap(
    inputs: &[CyclePhaseInput],
    lambda0_upper: f64,
    cycle_index: u32,
    cycle_length_s: f64,
    cfg: &SolverConfig,
) -> (Option<ThetaEstimate>, Vec<DemandEstimate>) {
    if inputs.iter().all(|p| p.stats.observation_count == 0) {
        let failed = inputs
            .iter()
            .map(|p| DemandEstimate::failed(Method::JoMap, &p.phase_id, cycle_index))
            .collect();
        return (None, failed);
    }

    let total_count: f64 = inputs.iter().map(|p| p.stats.weighted_count).sum();
    let system = ReducedSystem {
        inputs,
        total_count,
    };
    let floor = lambda0_upper * LAMBDA0_FLOOR_FRAC;

    let theta = if total_count <= 0.0 {
        // Queued CVs were seen but every adjusted count is zero: the posterior
        // decreases in the total rate, so the optimum sits at the support floor.
        let delta = system.solve_delta(floor, 0.0);
        let residual = system.residual(floor, delta);
        ThetaEstimate {
            lambda0: floor,
            shares: system.alphas(floor, delta),
            multiplier: delta,
            converged: true,
            iterations: 0,
            residual_norm: norm_inf(&residual),
        }
    } else {
        solve_map(&system, lambda0_upper, cfg)
    };

    let theta = match theta {
        t if t.converged => t,
        t => {
            // Fall back to JO-MLE values, flagged as non-converged.
            let exposure: f64 = inputs
                .iter()
                .map(|p| p.stats.weighted_exposure * p.prior.mu)
                .sum();
            let lambda0 = if exposure > 0.0 {
                (total_count / exposure).clamp(floor, lambda0_upper)
            } else {
                lambda0_upper
            };
            let mu_sum: f64 = inputs.iter().map(|p| p.prior.mu).sum();
            ThetaEstimate {
                lambda0,
                shares: inputs.iter().map(|p| p.prior.mu / mu_sum).collect(),
                multiplier: 0.0,
                converged: false,
                iterations: t.iterations,
                residual_norm: t.residual_norm,
            }
        }
    };

    let estimates = inputs
        .iter()
        .zip(&theta.shares)
        .map(|(p, &alpha)| {
            let lane_rate = theta.lambda0 * alpha / f64::from(p.lane_count);
            DemandEstimate {
                method: Method::JoMap,
                phase_id: p.phase_id.clone(),
                cycle_index,
                status: EstimateStatus::Ok,
                demand_veh: Some(theta.lambda0 * alpha * cycle_length_s),
                lane_rate_vps: Some(lane_rate),
                lambda0: Some(theta.lambda0),
                alpha: Some(alpha),
                iterations: theta.iterations,
            }
        })
        .collect();
    (Some(theta), estimates)
}

fn solve_map(system: &ReducedSystem, lambda0_upper: f64, cfg: &SolverConfig) -> ThetaEstimate {
    let floor = lambda0_upper * LAMBDA0_FLOOR_FRAC;
    let mut lambda0 = lambda0_upper / 2.0;
    let observed: Vec<&CyclePhaseInput> = system
        .inputs
        .iter()
        .filter(|p| p.stats.observation_count > 0)
        .collect();
    let mut delta = observed
        .iter()
        .map(|p| {
            p.stats.weighted_count / p.prior.mu.max(1e-9)
                - lambda0 * p.stats.weighted_exposure
        })
        .sum::<f64>()
        / observed.len() as f64;

    let mut residual = system.residual(lambda0, delta);
    let mut iterations = 0u32;
    let mut converged = norm_inf(&residual) < cfg.residual_tol;

    while !converged && iterations < cfg.max_iterations {
        iterations += 1;
        let j = system.jacobian(lambda0, delta);
        let det = j[0][0] * j[1][1] - j[0][1] * j[1][0];
        if det.abs() < 1e-300 || !det.is_finite() {
            break;
        }
        // Newton step solving J * step = -residual.
        let step_l = (j[0][1] * residual[1] - j[1][1] * residual[0]) / det;
        let step_d = (j[1][0] * residual[0] - j[0][0] * residual[1]) / det;

        let base_norm = norm2(&residual);
        let mut scale = 1.0;
        let mut accepted = false;
        for _ in 0..=cfg.max_halvings {
            let candidate = [lambda0 + scale * step_l, delta + scale * step_d];
            let r = system.residual(candidate[0], candidate[1]);
            if norm2(&r) < base_norm {
                lambda0 = candidate[0];
                delta = candidate[1];
                residual = r;
                accepted = true;
                break;
            }
            scale *= 0.5;
        }
        if !accepted {
            break;
        }
        converged = norm_inf(&residual) < cfg.residual_tol;
    }

    if converged && lambda0 >= floor && lambda0 <= lambda0_upper {
        // Interior solution; polish the multiplier so the share sum holds to
        // machine precision.
        delta = system.solve_delta(lambda0, delta);
        let residual = system.residual(lambda0, delta);
        return ThetaEstimate {
            lambda0,
            shares: system.alphas(lambda0, delta),
            multiplier: delta,
            converged: true,
            iterations,
            residual_norm: norm_inf(&residual),
        };
    }

    if converged {
        // Converged outside the support: clamp to the boundary and re-solve
        // the constraint for the multiplier.
        let clamped = lambda0.clamp(floor, lambda0_upper);
        let delta = system.solve_delta(clamped, delta);
        let residual = system.residual(clamped, delta);
        return ThetaEstimate {
            lambda0: clamped,
            shares: system.alphas(clamped, delta),
            multiplier: delta,
            converged: true,
            iterations,
            residual_norm: residual[1].abs(),
        };
    }

    ThetaEstimate {
        lambda0,
        shares: system.alphas(lambda0, delta),
        multiplier: delta,
        converged: false,
        iterations,
        residual_norm: norm_inf(&residual),
    }
}

// --- estimates CSV -----------------------------------------------------------

/// Writes the per-cycle estimate records as CSV.
pub fn write_estimates<W: Write>(writer: W, estimates: &[DemandEstimate]) -> Result<()> {
    let mut out = csv::Writer::from_writer(writer);
    out.write_record([
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
    for e in estimates {
        out.write_record([
            e.method.as_str().to_string(),
            e.phase_id.clone(),
            e.cycle_index.to_string(),
            fmt(e.demand_veh),
            fmt(e.lane_rate_vps),
            fmt(e.lambda0),
            fmt(e.alpha),
            match e.status {
                EstimateStatus::Ok => "ok".to_string(),
                EstimateStatus::Failed => "failed".to_string(),
            },
            e.iterations.to_string(),
        ])?;
    }
    out.flush()?;
    Ok(())
}

pub fn save_estimates(path: &Path, estimates: &[DemandEstimate]) -> Result<()> {
    write_estimates(std::fs::File::create(path)?, estimates)
}

/// Reads estimates back from the CSV written by [`write_estimates`].
pub fn load_estimates(path: &Path) -> Result<Vec<DemandEstimate>> {
    let mut reader = csv::Reader::from_path(path)?;
    let mut out = Vec::new();
    for record in reader.records() {
        let record = record?;
        let parse_opt = |s: &str| -> Option<f64> {
            if s.is_empty() {
                None
            } else {
                s.parse().ok()
            }
        };
        let status = match &record[7] {
            "ok" => EstimateStatus::Ok,
            _ => EstimateStatus::Failed,
        };
        out.push(DemandEstimate {
            method: record[0].parse()?,
            phase_id: record[1].to_string(),
            cycle_index: record[2]
                .parse()
                .map_err(|_| Error::InvalidConfig("bad cycle_index".into()))?,
            status,
            demand_veh: parse_opt(&record[3]),
            lane_rate_vps: parse_opt(&record[4]),
            lambda0: parse_opt(&record[5]),
            alpha: parse_opt(&record[6]),
            iterations: record[8].parse().unwrap_or(0),
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn obs(n: u32, raw_weight: f64, norm_weight: f64) -> ArrivalObservation {
        ArrivalObservation {
            phase_id: "p".into(),
            cycle_index: 1,
            vehicles_ahead: n,
            arrival_offset_s: raw_weight,
            raw_weight,
            norm_weight,
            floored: false,
        }
    }

    fn input(
        phase_id: &str,
        lane_count: u32,
        n: f64,
        w: f64,
        x: usize,
        mu: f64,
        sigma2: f64,
    ) -> CyclePhaseInput {
        CyclePhaseInput {
            phase_id: phase_id.into(),
            lane_count,
            stats: SufficientStats {
                weighted_count: n,
                weighted_exposure: w,
                observation_count: x,
            },
            prior: AlphaPrior {
                phase_id: phase_id.into(),
                mu,
                sigma2,
            },
        }
    }

    #[test]
    fn sufficient_stats_arithmetic_and_zero_case() {
        let s = sufficient_stats(&[obs(2, 40.0, 1.0)], 2);
        assert_relative_eq!(s.weighted_count, 2.0);
        assert_relative_eq!(s.weighted_exposure, 20.0);
        assert_eq!(s.observation_count, 1);

        let empty = sufficient_stats(&[], 2);
        assert_relative_eq!(empty.weighted_count, 0.0);
        assert_relative_eq!(empty.weighted_exposure, 0.0);
    }

    #[test]
    fn sufficient_stats_additive() {
        let a = [obs(2, 40.0, 0.8), obs(1, 10.0, 1.2)];
        let b = [obs(5, 70.0, 1.0)];
        let all: Vec<_> = a.iter().chain(b.iter()).cloned().collect();
        let sa = sufficient_stats(&a, 3);
        let sb = sufficient_stats(&b, 3);
        let sall = sufficient_stats(&all, 3);
        assert_relative_eq!(sa.weighted_count + sb.weighted_count, sall.weighted_count);
        assert_relative_eq!(
            sa.weighted_exposure + sb.weighted_exposure,
            sall.weighted_exposure
        );
    }

    #[test]
    fn wmle_sensitivity_example() {
        // single observation n=1 at t=2 s under a uniform profile
        let e = wmle(&[obs(1, 2.0, 1.0)], "p", 1, 1, 100.0);
        assert_relative_eq!(e.lane_rate_vps.unwrap(), 0.5, epsilon = 1e-9);
        let e = wmle(&[obs(1, 1.0, 1.0)], "p", 1, 1, 100.0);
        assert_relative_eq!(e.lane_rate_vps.unwrap(), 1.0, epsilon = 1e-9);
        let e = wmle(&[obs(1, 3.0, 1.0)], "p", 1, 1, 100.0);
        assert_relative_eq!(e.lane_rate_vps.unwrap(), 1.0 / 3.0, epsilon = 1e-9);
    }

    #[test]
    fn wmle_closed_form_two_observations() {
        // raw weights equal the exposures: (n=2, 20), (n=4, 40) -> lane rate 0.1
        let observations = vec![obs(2, 20.0, 2.0 / 3.0), obs(4, 40.0, 4.0 / 3.0)];
        let e = wmle(&observations, "p", 1, 1, 100.0);
        assert_relative_eq!(e.lane_rate_vps.unwrap(), 0.1, epsilon = 1e-12);
    }

    #[test]
    fn wmle_no_observations_fails() {
        let e = wmle(&[], "p", 2, 3, 100.0);
        assert_eq!(e.status, EstimateStatus::Failed);
    }

    #[test]
    fn wmle_matches_numeric_maximizer() {
        // golden-section maximization of the weighted log-likelihood
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..50 {
            let count = rng.gen_range(1..6);
            let mut observations = Vec::new();
            let mut wsum = 0.0;
            for _ in 0..count {
                let n = rng.gen_range(0..10);
                let lam = rng.gen_range(1.0..99.0);
                observations.push(obs(n, lam, 0.0));
                wsum += lam;
            }
            let x = observations.len() as f64;
            for o in observations.iter_mut() {
                o.norm_weight = o.raw_weight * x / wsum;
            }
            if observations.iter().all(|o| o.vehicles_ahead == 0) {
                continue;
            }
            let closed = wmle(&observations, "p", 1, 1, 100.0)
                .lane_rate_vps
                .unwrap();

            let loglik = |lam: f64| -> f64 {
                observations
                    .iter()
                    .map(|o| {
                        o.norm_weight
                            * (f64::from(o.vehicles_ahead) * (lam * o.raw_weight).ln()
                                - lam * o.raw_weight)
                    })
                    .sum()
            };
            // Numeric maximizer: bisection on the sign of the Richardson-
            // extrapolated central difference (a plain value-comparison
            // search stalls at the sqrt(eps) noise floor of the flat peak).
            let fd_slope = |lam: f64| -> f64 {
                let h = 1e-5 * lam;
                let d1 = (loglik(lam + h) - loglik(lam - h)) / (2.0 * h);
                let d2 = (loglik(lam + h / 2.0) - loglik(lam - h / 2.0)) / h;
                (4.0 * d2 - d1) / 3.0
            };
            let (mut lo, mut hi) = (closed / 64.0, closed * 64.0);
            for _ in 0..200 {
                let mid = 0.5 * (lo + hi);
                if fd_slope(mid) > 0.0 {
                    lo = mid;
                } else {
                    hi = mid;
                }
            }
            let numeric = 0.5 * (lo + hi);
            assert_relative_eq!(closed, numeric, max_relative = 1e-9);
        }
    }

    #[test]
    fn jomle_closed_form() {
        let inputs = vec![
            input("p1", 1, 3.0, 30.0, 2, 0.5, 0.01),
            input("p2", 1, 3.0, 30.0, 2, 0.5, 0.01),
        ];
        let estimates = jomle(&inputs, 10.0, 1, 100.0);
        assert_relative_eq!(estimates[0].lambda0.unwrap(), 0.2, epsilon = 1e-12);
        assert_relative_eq!(
            estimates[0].demand_veh.unwrap(),
            estimates[1].demand_veh.unwrap()
        );
    }

    #[test]
    fn jomle_all_unobserved_fails() {
        let inputs = vec![
            input("p1", 1, 0.0, 0.0, 0, 0.5, 0.01),
            input("p2", 1, 0.0, 0.0, 0, 0.5, 0.01),
        ];
        let estimates = jomle(&inputs, 10.0, 1, 100.0);
        assert!(estimates.iter().all(|e| e.status == EstimateStatus::Failed));
    }

    #[test]
    fn alpha_root_zero_stats_reduces_to_prior_branch() {
        let prior = AlphaPrior {
            phase_id: "p".into(),
            mu: 0.4,
            sigma2: 0.01,
        };
        let stats = SufficientStats::default();
        // alpha = max(0, mu - sigma2 * delta)
        assert_relative_eq!(
            alpha_positive_root(1.0, 5.0, &prior, &stats),
            0.4 - 0.01 * 5.0,
            epsilon = 1e-12
        );
        assert_relative_eq!(alpha_positive_root(1.0, 100.0, &prior, &stats), 0.0);
    }

    #[test]
    fn alpha_root_satisfies_quadratic() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..200 {
            let prior = AlphaPrior {
                phase_id: "p".into(),
                mu: rng.gen_range(0.05..0.9),
                sigma2: rng.gen_range(4e-4..0.09),
            };
            let stats = SufficientStats {
                weighted_count: rng.gen_range(0.1..30.0),
                weighted_exposure: rng.gen_range(0.0..80.0),
                observation_count: 1,
            };
            let lambda0 = rng.gen_range(0.01..4.0);
            let delta = rng.gen_range(-50.0..50.0);
            let alpha = alpha_positive_root(lambda0, delta, &prior, &stats);
            assert!(alpha > 0.0);
            let a = prior.mu / prior.sigma2 - lambda0 * stats.weighted_exposure - delta;
            let residual =
                -alpha * alpha / prior.sigma2 + a * alpha + stats.weighted_count;
            assert!(
                residual.abs() < 1e-9 * (1.0 + stats.weighted_count),
                "plug-back residual {residual}"
            );
        }
    }

    #[test]
    fn jomap_symmetric_instance() {
        let inputs = vec![
            input("p1", 2, 4.0, 25.0, 2, 0.5, 0.01),
            input("p2", 2, 4.0, 25.0, 2, 0.5, 0.01),
        ];
        let (theta, estimates) = jomap(&inputs, 4.0, 1, 100.0, &SolverConfig::default());
        let theta = theta.unwrap();
        assert!(theta.converged);
        assert_relative_eq!(theta.shares[0], 0.5, epsilon = 1e-9);
        assert_relative_eq!(theta.shares[1], 0.5, epsilon = 1e-9);
        assert_relative_eq!(
            estimates[0].demand_veh.unwrap(),
            estimates[1].demand_veh.unwrap(),
            epsilon = 1e-9
        );
    }

    #[test]
    fn jomap_demand_identity() {
        let inputs = vec![
            input("p1", 2, 6.0, 30.0, 3, 0.5, 0.01),
            input("p2", 2, 2.0, 20.0, 1, 0.5, 0.01),
        ];
        let (theta, estimates) = jomap(&inputs, 4.0, 1, 100.0, &SolverConfig::default());
        let theta = theta.unwrap();
        let total: f64 = estimates.iter().map(|e| e.demand_veh.unwrap()).sum();
        assert_relative_eq!(total, theta.lambda0 * 100.0, epsilon = 1e-6);
        for (e, share) in estimates.iter().zip(&theta.shares) {
            assert_relative_eq!(
                e.demand_veh.unwrap(),
                theta.lambda0 * share * 100.0,
                epsilon = 1e-9
            );
        }
    }

    #[test]
    fn jomap_all_unobserved_fails() {
        let inputs = vec![
            input("p1", 1, 0.0, 0.0, 0, 0.5, 0.01),
            input("p2", 1, 0.0, 0.0, 0, 0.5, 0.01),
        ];
        let (theta, estimates) = jomap(&inputs, 4.0, 1, 100.0, &SolverConfig::default());
        assert!(theta.is_none());
        assert!(estimates.iter().all(|e| e.status == EstimateStatus::Failed));
    }

    #[test]
    fn jomap_unobserved_phase_gets_prior_driven_share() {
        // tight priors, other phases' stats consistent with them
        let lambda0 = 0.6;
        let sigma2 = 4e-4;
        let w1 = 40.0;
        let w2 = 35.0;
        let inputs = vec![
            input("p1", 2, lambda0 * 0.5 * w1, w1, 3, 0.5, sigma2),
            input("p2", 2, lambda0 * 0.3 * w2, w2, 2, 0.3, sigma2),
            input("p3", 1, 0.0, 0.0, 0, 0.2, sigma2),
        ];
        let (theta, _) = jomap(&inputs, 4.0, 1, 100.0, &SolverConfig::default());
        let theta = theta.unwrap();
        assert!(theta.converged);
        assert!(
            (theta.shares[2] - 0.2).abs() < 1e-3,
            "share {} vs prior mean 0.2",
            theta.shares[2]
        );
    }

    #[test]
    fn jomap_zero_counts_with_observations_goes_to_floor() {
        let inputs = vec![
            input("p1", 1, 0.0, 12.0, 1, 0.5, 0.01),
            input("p2", 1, 0.0, 0.0, 0, 0.5, 0.01),
        ];
        let (theta, estimates) = jomap(&inputs, 4.0, 1, 100.0, &SolverConfig::default());
        let theta = theta.unwrap();
        assert!(theta.converged);
        assert!(theta.lambda0 > 0.0 && theta.lambda0 < 1e-6);
        assert!(estimates.iter().all(|e| e.is_ok()));
        assert!((theta.shares.iter().sum::<f64>() - 1.0).abs() <= 1e-9);
    }

    fn random_instance(rng: &mut ChaCha8Rng, z: usize) -> (Vec<CyclePhaseInput>, f64) {
        let mut mus: Vec<f64> = (0..z).map(|_| rng.gen_range(0.05f64..1.0)).collect();
        let mu_sum: f64 = mus.iter().sum();
        for m in &mut mus {
            *m /= mu_sum;
        }
        let mut total_lanes = 0u32;
        let mut inputs = Vec::new();
        let mut any = false;
        for (i, &mu) in mus.iter().enumerate() {
            let lanes = rng.gen_range(1..=3u32);
            total_lanes += lanes;
            let x = rng.gen_range(0..=6usize);
            let (mut n, mut w) = (0.0, 0.0);
            if x > 0 {
                any = true;
                for _ in 0..x {
                    n += rng.gen_range(0..=12) as f64;
                    w += rng.gen_range(1.0..99.0);
                }
                w /= f64::from(lanes);
            }
            inputs.push(input(
                &format!("p{i}"),
                lanes,
                n,
                w,
                x,
                mu,
                rng.gen_range(4e-4..0.0625),
            ));
        }
        if !any {
            // force at least one observed phase
            inputs[0].stats.observation_count = 1;
            inputs[0].stats.weighted_count = rng.gen_range(1.0..8.0);
            inputs[0].stats.weighted_exposure = rng.gen_range(5.0..60.0);
        }
        let upper = f64::from(total_lanes) / 2.0;
        (inputs, upper)
    }

    #[test]
    fn jomap_beats_grid_on_small_instances() {
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        for trial in 0..10 {
            let (inputs, upper) = random_instance(&mut rng, 2);
            let (theta, _) = jomap(&inputs, upper, 1, 100.0, &SolverConfig::default());
            let theta = theta.unwrap();
            let solver_lp = log_posterior(theta.lambda0, &theta.shares, &inputs, upper);

            let grid = 400;
            let mut best = f64::NEG_INFINITY;
            for i in 1..=grid {
                let lambda0 = upper * i as f64 / grid as f64;
                for j in 0..=grid {
                    let a1 = j as f64 / grid as f64;
                    let lp = log_posterior(lambda0, &[a1, 1.0 - a1], &inputs, upper);
                    if lp > best {
                        best = lp;
                    }
                }
            }
            assert!(
                solver_lp >= best - 1e-6 * best.abs().max(1.0),
                "trial {trial}: solver {solver_lp} < grid {best}"
            );
        }
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(101);
        for _ in 0..50 {
            let (inputs, upper) = random_instance(&mut rng, 3);
            let lambda0 = rng.gen_range(0.1..0.9) * upper;
            let alphas: Vec<f64> = (0..3).map(|_| rng.gen_range(0.05..0.8)).collect();
            let (d_l, d_a) = log_posterior_gradient(lambda0, &alphas, &inputs);
            let h = 1e-6;
            let fd_l = (log_posterior(lambda0 + h, &alphas, &inputs, upper)
                - log_posterior(lambda0 - h, &alphas, &inputs, upper))
                / (2.0 * h);
            assert_relative_eq!(d_l, fd_l, max_relative = 1e-5, epsilon = 1e-7);
            for i in 0..alphas.len() {
                let mut up = alphas.clone();
                let mut dn = alphas.clone();
                up[i] += h;
                dn[i] -= h;
                let fd = (log_posterior(lambda0, &up, &inputs, upper)
                    - log_posterior(lambda0, &dn, &inputs, upper))
                    / (2.0 * h);
                assert_relative_eq!(d_a[i], fd, max_relative = 1e-5, epsilon = 1e-7);
            }
        }
    }

    #[test]
    fn estimates_csv_round_trip() {
        let estimates = vec![
            DemandEstimate {
                method: Method::JoMap,
                phase_id: "p1".into(),
                cycle_index: 3,
                status: EstimateStatus::Ok,
                demand_veh: Some(24.5),
                lane_rate_vps: Some(0.1225),
                lambda0: Some(0.49),
                alpha: Some(0.5),
                iterations: 6,
            },
            DemandEstimate::failed(Method::Wmle, "p2", 3),
        ];
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("estimates.csv");
        save_estimates(&path, &estimates).unwrap();
        let back = load_estimates(&path).unwrap();
        assert_eq!(back.len(), 2);
        assert_eq!(back[0].method, Method::JoMap);
        assert_eq!(back[1].status, EstimateStatus::Failed);
        assert!(back[1].demand_veh.is_none());
        assert_relative_eq!(back[0].demand_veh.unwrap(), 24.5, epsilon = 1e-9);
    }
}
