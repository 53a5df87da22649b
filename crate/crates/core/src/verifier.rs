//! Numerical certification that the perturbed map's periodic measure is the
//! unique Lyapunov minimizer, over a sampled neighborhood of maps.
//!
//! For a map `S` near `S0` the verifier works with the normalized observable
//!
//! ```text
//! F~_S(x) = F_S(x) - A_Γ,   A_Γ = (1/τ) Σ_{z∈Γ_S} F_S(z),
//! F_S(x)  = f(S(x)) - f(x) + log DS(x),
//! ```
//!
//! with `f` the sub-action of the base map. Since coboundaries vanish on
//! invariant measures, `∫ F~_S dμ > 0` for every invariant `μ ≠ δ_{Γ_S}` is
//! exactly strict minimality of `δ_{Γ_S}`. Four falsifiable checks stand in
//! for the measure-theoretic statement at desk scale: a positive minimum of
//! `F~_S` on the far region, positive escape partial sums started next to
//! the orbit, a strictly positive margin over every periodic orbit up to a
//! period bound, and positive long Birkhoff averages from random starts.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::circle_map::{ExpandingMap, MapError};
use crate::conjugacy::{continue_orbit, ConjugacyError, ContinuedOrbit};
use crate::orbits::{enumerate_periodic_orbits, OrbitError, PeriodicOrbit};
use crate::perturbation::PerturbationPlan;
use crate::subaction::{coboundary_f, GridFunction};
use crate::tol::Tolerances;

#[derive(Debug, Error)]
pub enum VerifyError {
    #[error("continued orbit not found in the catalog up to period {max_period}")]
    OrbitNotFound { max_period: usize },
    #[error(transparent)]
    Map(#[from] MapError),
    #[error(transparent)]
    Orbit(#[from] OrbitError),
    #[error(transparent)]
    Conjugacy(#[from] ConjugacyError),
}

/// Orbit average `A_Γ = ∫ F_S dδ_Γ`.
pub fn orbit_average_f(s: &ExpandingMap, f: &GridFunction, gamma: &PeriodicOrbit) -> f64 {
    gamma
        .points
        .iter()
        .map(|&p| coboundary_f(s, f, p))
        .sum::<f64>()
        / gamma.period as f64
}

/// `F~_S` at one point.
pub fn f_tilde(s: &ExpandingMap, f: &GridFunction, a_gamma: f64, x: f64) -> f64 {
    coboundary_f(s, f, x) - a_gamma
}

/// Result of the far-region scan.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FarRegionCheck {
    /// `min F~_S` over grid points with `d(x, Γ_T) > ρG*`.
    pub margin: f64,
    /// The worst-case lower bound `Δ - K·d* - 2ε̃₀·K` it is compared against.
    pub worst_case_bound: f64,
    /// The orbit average `A_{Γ_S}` that was subtracted.
    pub a_gamma: f64,
    pub grid_n: usize,
}

/// Minimum of `F~_S` over the grid points of the far region
/// `{x : d(x, Γ_T) > ρ·G*}`.
pub fn check_far_region(
    s: &ExpandingMap,
    plan: &PerturbationPlan,
    gamma_s: &PeriodicOrbit,
    grid_n: usize,
) -> FarRegionCheck {
    let f = &plan.subaction.f;
    let a_gamma = orbit_average_f(s, f, gamma_s);
    let radius = plan.ledger.half_width();
    let margin = (0..grid_n)
        .into_par_iter()
        .filter_map(|j| {
            let x = j as f64 / grid_n as f64;
            if plan.orbit.distance_to(x) > radius {
                Some(f_tilde(s, f, a_gamma, x))
            } else {
                None
            }
        })
        .reduce(|| f64::INFINITY, f64::min);
    let lg = &plan.ledger;
    let worst_case_bound = lg.delta() - lg.k * lg.d_star - 2.0 * lg.eps0_tilde * lg.k;
    FarRegionCheck {
        margin,
        worst_case_bound,
        a_gamma,
        grid_n,
    }
}

/// One escape sample for the partial-sum positivity check.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SumSample {
    pub x0: f64,
    /// First exit time past `ρG* + ε̃₀`.
    pub m: usize,
    /// Further steps until exit past `(ρG* + ε̃₀)·K^L`.
    pub l: usize,
    /// `N = m + l`.
    pub n: usize,
    /// `Σ_{i<N} F~_S(S^i x0)`.
    pub partial_sum: f64,
    /// Escape not observed within the horizon (indicates `x0` numerically
    /// on the orbit).
    pub horizon_exceeded: bool,
}

/// Draw points in the bump annulus around the orbit and check that the
/// Birkhoff sum of `F~_S` over the escape segment is positive.
pub fn check_sum_positivity(
    s: &ExpandingMap,
    plan: &PerturbationPlan,
    gamma_s: &PeriodicOrbit,
    samples: usize,
    seed: u64,
) -> Vec<SumSample> {
    let f = &plan.subaction.f;
    let a_gamma = orbit_average_f(s, f, gamma_s);
    let lg = &plan.ledger;
    let w = lg.half_width();
    let r1 = w + lg.eps0_tilde;
    let r2 = r1 * lg.k.powf(lg.l);
    let horizon = 1_000_000usize;

    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    let starts: Vec<f64> = (0..samples)
        .map(|_| {
            let i = rng.gen_range(0..plan.orbit.points.len());
            let sign = if rng.gen::<bool>() { 1.0 } else { -1.0 };
            let mut u = 0.0;
            while u == 0.0 {
                u = rng.gen_range(0.0..w);
            }
            crate::circle_map::wrap_unit(plan.orbit.points[i] + sign * u)
        })
        .collect();

    starts
        .into_par_iter()
        .map(|x0| {
            let mut z = x0;
            let mut sum = 0.0;
            let mut m = 0usize;
            let mut i = 0usize;
            loop {
                if i > horizon {
                    return SumSample {
                        x0,
                        m,
                        l: 0,
                        n: i,
                        partial_sum: sum,
                        horizon_exceeded: true,
                    };
                }
                let d = gamma_s.distance_to(z);
                if m == 0 {
                    if i >= 1 && d > r1 {
                        m = i;
                    }
                } else if d > r2 {
                    // i = N: the sum stops before this term.
                    return SumSample {
                        x0,
                        m,
                        l: i - m,
                        n: i,
                        partial_sum: sum,
                        horizon_exceeded: false,
                    };
                }
                sum += f_tilde(s, f, a_gamma, z);
                z = s.image(z);
                i += 1;
            }
        })
        .collect()
}

/// One random-start Birkhoff average of `F~_S`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BirkhoffSample {
    pub x0: f64,
    pub average: f64,
    /// Fraction of the orbit spent beyond the outer escape radius.
    pub far_visit_freq: f64,
}

/// Outcome of the exhaustive orbit comparison.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MinimalityCheck {
    /// `min_{Γ ≠ Γ_S} lyap(Γ) - lyap(Γ_S)`.
    pub margin: f64,
    pub gamma_lyap: f64,
    pub second_best_lyap: f64,
    pub second_best_code: String,
    pub orbit_count: usize,
    pub birkhoff: Vec<BirkhoffSample>,
    pub birkhoff_min: f64,
}

/// Enumerate every periodic orbit of `s` up to `max_period` and measure the
/// Lyapunov margin of `gamma_s`; spot-check ergodicity with seeded long
/// Birkhoff averages of `F~_S`.
#[allow(clippy::too_many_arguments)]
pub fn certify_unique_minimizer(
    s: &ExpandingMap,
    f: &GridFunction,
    a_gamma: f64,
    gamma_s: &PeriodicOrbit,
    max_period: usize,
    r2: f64,
    birkhoff_count: usize,
    birkhoff_steps: usize,
    seed: u64,
    tols: &Tolerances,
) -> Result<MinimalityCheck, VerifyError> {
    let catalog = enumerate_periodic_orbits(s, max_period, tols)?;
    let mut gamma_lyap = None;
    let mut second: Option<(f64, String)> = None;
    for e in &catalog.orbits {
        if e.orbit.same_points(gamma_s, 1e-6) {
            gamma_lyap = Some(e.lyap_avg);
        } else if second.as_ref().is_none_or(|(l, _)| e.lyap_avg < *l) {
            second = Some((e.lyap_avg, e.orbit.code_string()));
        }
    }
    let gamma_lyap = gamma_lyap.ok_or(VerifyError::OrbitNotFound { max_period })?;
    let (second_best_lyap, second_best_code) =
        second.unwrap_or((f64::INFINITY, String::new()));

    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    let starts: Vec<f64> = (0..birkhoff_count).map(|_| rng.gen::<f64>()).collect();
    let birkhoff: Vec<BirkhoffSample> = starts
        .into_par_iter()
        .map(|x0| {
            let mut z = x0;
            let mut sum = 0.0;
            let mut far = 0usize;
            for _ in 0..birkhoff_steps {
                sum += f_tilde(s, f, a_gamma, z);
                if gamma_s.distance_to(z) > r2 {
                    far += 1;
                }
                z = s.image(z);
            }
            BirkhoffSample {
                x0,
                average: sum / birkhoff_steps as f64,
                far_visit_freq: far as f64 / birkhoff_steps as f64,
            }
        })
        .collect();
    let birkhoff_min = birkhoff
        .iter()
        .map(|b| b.average)
        .fold(f64::INFINITY, f64::min);

    Ok(MinimalityCheck {
        margin: second_best_lyap - gamma_lyap,
        gamma_lyap,
        second_best_lyap,
        second_best_code,
        orbit_count: catalog.orbits.len(),
        birkhoff,
        birkhoff_min,
    })
}

/// Sample maps in the `C^{1,1}` ball of radius `eps_tilde` around `s0`.
///
/// Perturbations are sine polynomials of degree at most 8, scaled by the
/// analytic bound `Σ|a_k|(1 + 2πk + (2πk)²)` so that
/// `sup|g| + sup|Dg| + Lip(Dg) < eps_tilde` holds by construction. Sine-only
/// perturbations also keep `S(0)` fixed, so branch anchors (and with them
/// symbolic codes) are stable across the ball.
pub fn sample_perturbation_ball(
    s0: &ExpandingMap,
    eps_tilde: f64,
    count: usize,
    seed: u64,
) -> Vec<ExpandingMap> {
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    let max_order = 8usize;
    (0..count)
        .map(|_| {
            let raw: Vec<f64> = (0..max_order).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let bound: f64 = raw
                .iter()
                .enumerate()
                .map(|(i, a)| {
                    let w = std::f64::consts::TAU * (i + 1) as f64;
                    a.abs() * (1.0 + w + w * w)
                })
                .sum();
            if eps_tilde <= 0.0 || bound == 0.0 {
                return s0.clone();
            }
            let scale = 0.99 * eps_tilde / bound;
            let mut base = s0.base.clone();
            if base.sin_coeffs.len() < max_order {
                base.sin_coeffs.resize(max_order, 0.0);
            }
            for (i, a) in raw.iter().enumerate() {
                base.sin_coeffs[i] += scale * a;
            }
            ExpandingMap {
                base,
                layers: s0.layers.clone(),
            }
        })
        .collect()
}

/// Grid maximum of `|F_S - F_R|` for two maps sharing the sub-action `f`.
pub fn max_f_difference(
    s: &ExpandingMap,
    r: &ExpandingMap,
    f: &GridFunction,
    grid_n: usize,
) -> f64 {
    (0..grid_n)
        .into_par_iter()
        .map(|j| {
            let x = j as f64 / grid_n as f64;
            (coboundary_f(s, f, x) - coboundary_f(r, f, x)).abs()
        })
        .reduce(|| 0.0, f64::max)
}

/// Verification settings.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct VerifyConfig {
    pub sum_samples: usize,
    pub max_period: usize,
    pub far_grid_n: usize,
    pub birkhoff_count: usize,
    pub birkhoff_steps: usize,
    /// Ergodic averages must exceed `-birkhoff_tol`.
    pub birkhoff_tol: f64,
    pub seed: u64,
}

impl Default for VerifyConfig {
    fn default() -> Self {
        VerifyConfig {
            sum_samples: 100,
            max_period: 12,
            far_grid_n: 1 << 14,
            birkhoff_count: 32,
            birkhoff_steps: 100_000,
            birkhoff_tol: 1e-12,
            seed: 1,
        }
    }
}

/// Certification report for one map `S` against a plan.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct VerificationReport {
    pub map_id: String,
    pub plan_id: String,
    pub seed: u64,
    pub far_region_margin: f64,
    pub far_region_worst_case: f64,
    pub a_gamma: f64,
    /// Distance of the continued orbit to the source orbit.
    pub continuation_drift: f64,
    pub sum_positivity: Vec<SumSample>,
    pub minimality_margin: f64,
    pub gamma_lyap: f64,
    pub second_best_lyap: f64,
    pub second_best_code: String,
    pub ergodic_samples: Vec<BirkhoffSample>,
    pub ergodic_min: f64,
    pub pass: bool,
}

/// Run every check of the theorem surrogate for one map `S`.
pub fn verify_map(
    s: &ExpandingMap,
    plan: &PerturbationPlan,
    cfg: &VerifyConfig,
    tols: &Tolerances,
) -> Result<VerificationReport, VerifyError> {
    let ContinuedOrbit {
        orbit: gamma_s,
        max_drift,
    } = continue_orbit(&plan.orbit, &plan.perturbed_map, s, tols)?;
    let f = &plan.subaction.f;
    let a_gamma = orbit_average_f(s, f, &gamma_s);
    let lg = &plan.ledger;
    let r2 = (lg.half_width() + lg.eps0_tilde) * lg.k.powf(lg.l);

    let far = check_far_region(s, plan, &gamma_s, cfg.far_grid_n);
    let sums = check_sum_positivity(s, plan, &gamma_s, cfg.sum_samples, cfg.seed);
    let minimality = certify_unique_minimizer(
        s,
        f,
        a_gamma,
        &gamma_s,
        cfg.max_period,
        r2,
        cfg.birkhoff_count,
        cfg.birkhoff_steps,
        cfg.seed,
        tols,
    )?;

    let sums_ok = sums
        .iter()
        .all(|s| !s.horizon_exceeded && s.partial_sum > 0.0);
    let pass = far.margin > 0.0
        && sums_ok
        && minimality.margin > 0.0
        && minimality.birkhoff_min > -cfg.birkhoff_tol;

    Ok(VerificationReport {
        map_id: s.map_id(),
        plan_id: plan.record().plan_id,
        seed: cfg.seed,
        far_region_margin: far.margin,
        far_region_worst_case: far.worst_case_bound,
        a_gamma,
        continuation_drift: max_drift,
        sum_positivity: sums,
        minimality_margin: minimality.margin,
        gamma_lyap: minimality.gamma_lyap,
        second_best_lyap: minimality.second_best_lyap,
        second_best_code: minimality.second_best_code,
        ergodic_samples: minimality.birkhoff,
        ergodic_min: minimality.birkhoff_min,
        pass,
    })
}

/// Neighborhood-level report: `S0` itself plus sampled maps in the
/// `ε̃`-ball, each fully certified.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct NeighborhoodReport {
    pub plan_id: String,
    pub eps_tilde: f64,
    pub sample_count: usize,
    pub seed: u64,
    pub reports: Vec<VerificationReport>,
    pub all_pass: bool,
}

/// Verify `S0` and `sample_count` seeded samples of its `ε̃`-ball.
pub fn verify_neighborhood(
    plan: &PerturbationPlan,
    sample_count: usize,
    cfg: &VerifyConfig,
    tols: &Tolerances,
) -> Result<NeighborhoodReport, VerifyError> {
    let samples =
        sample_perturbation_ball(&plan.perturbed_map, plan.ledger.eps_tilde, sample_count, cfg.seed);
    let mut maps = Vec::with_capacity(sample_count + 1);
    maps.push(plan.perturbed_map.clone());
    maps.extend(samples);

    let reports: Result<Vec<VerificationReport>, VerifyError> = maps
        .par_iter()
        .enumerate()
        .map(|(i, s)| {
            // Every sampled map must itself be expanding.
            s.expansion_profile(4096)?;
            let sub_cfg = VerifyConfig {
                seed: cfg.seed.wrapping_add(i as u64),
                ..cfg.clone()
            };
            verify_map(s, plan, &sub_cfg, tols)
        })
        .collect();
    let reports = reports?;
    let all_pass = reports.iter().all(|r| r.pass);
    Ok(NeighborhoodReport {
        plan_id: plan.record().plan_id,
        eps_tilde: plan.ledger.eps_tilde,
        sample_count,
        seed: cfg.seed,
        reports,
        all_pass,
    })
}
