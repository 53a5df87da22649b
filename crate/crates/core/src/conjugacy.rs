//! Structural stability made computable: itineraries, pointwise conjugacies,
//! and continuation of periodic orbits between nearby expanding maps.
//!
//! For `S` close to `S0` there is a homeomorphism `π` near the identity with
//! `π∘S0 = S∘π`. Pointwise, `π(x)` is the limit of pulling the `S0`-itinerary
//! of `x` back through the matching inverse branches of `S`; truncating at
//! depth `n` leaves an error of order `min DS^{-n}`. Orbit continuation skips
//! the coding altogether: it reads the integer lift offsets of the source
//! orbit and relocates the cycle under the new lift by backward iteration,
//! which is again a contraction.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::circle_map::{circle_distance, wrap_unit, ExpandingMap, MapError};
use crate::orbits::PeriodicOrbit;
use crate::tol::Tolerances;

#[derive(Debug, Error)]
pub enum ConjugacyError {
    #[error("iterate {step} lies within {tol} of an itinerary arc boundary")]
    BoundaryAmbiguity { step: usize, tol: f64 },
    #[error("itinerary depth {0} exceeds 64")]
    DepthExceeded(usize),
    #[error("continuation failed: {0}")]
    ConvergenceFailure(String),
    #[error("maps have different degrees: {0} vs {1}")]
    DegreeMismatch(u32, u32),
    #[error(transparent)]
    Map(#[from] MapError),
}

/// Symbolic itinerary of a point over the arcs cut by the preimages of 0.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Itinerary {
    pub word: Vec<u8>,
    /// Arc cut points `c_0 < .. < c_{d-1}` (the preimages of 0).
    pub base_partition: Vec<f64>,
}

/// Arc cut points of a map: the sorted preimages of 0.
pub fn arc_cuts(map: &ExpandingMap, tols: &Tolerances) -> Result<Vec<f64>, ConjugacyError> {
    Ok(map.preimages(0.0, tols)?)
}

fn arc_index(cuts: &[f64], x: f64, tol: f64, step: usize) -> Result<u8, ConjugacyError> {
    for &c in cuts {
        let d = circle_distance(x, c);
        // Exact hits are resolved by the half-open convention [c_j, c_{j+1});
        // only near-misses are ambiguous.
        if d != 0.0 && d < tol {
            return Err(ConjugacyError::BoundaryAmbiguity { step, tol });
        }
    }
    // Half-open arcs [c_j, c_{j+1}); everything below c_0 or above c_{d-1}
    // belongs to the wrap arc.
    let mut idx = cuts.len() - 1;
    for (j, window) in cuts.windows(2).enumerate() {
        if x >= window[0] && x < window[1] {
            idx = j;
            break;
        }
    }
    Ok(idx as u8)
}

/// Itinerary of `x` under `map` to the given depth.
pub fn itinerary(
    map: &ExpandingMap,
    x: f64,
    depth: usize,
    tols: &Tolerances,
) -> Result<Itinerary, ConjugacyError> {
    if depth > 64 {
        return Err(ConjugacyError::DepthExceeded(depth));
    }
    let cuts = arc_cuts(map, tols)?;
    let mut word = Vec::with_capacity(depth);
    let mut z = wrap_unit(x);
    for step in 0..depth {
        word.push(arc_index(&cuts, z, tols.boundary_ambiguity, step)?);
        z = map.image(z);
    }
    Ok(Itinerary {
        word,
        base_partition: cuts,
    })
}

/// `π(x)` for the conjugacy `π∘S0 = S∘π`: pull the `S0`-itinerary of `x`
/// back through the matching inverse branches of `S` from an arbitrary seed.
pub fn conjugacy_point(
    s0: &ExpandingMap,
    s: &ExpandingMap,
    x: f64,
    depth: usize,
    tols: &Tolerances,
) -> Result<f64, ConjugacyError> {
    if s0.degree() != s.degree() {
        return Err(ConjugacyError::DegreeMismatch(s0.degree(), s.degree()));
    }
    let itin = itinerary(s0, x, depth, tols)?;
    let anchor = s.branch_anchor();
    let mut z = 0.5;
    for &sym in itin.word.iter().rev() {
        let offset = (anchor + i64::from(sym)) as f64;
        z = wrap_unit(s.lift_inverse(z + offset, tols)?);
    }
    Ok(z)
}

/// Sampled conjugacy with its defect statistics.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ConjugacyMap {
    pub grid: Vec<f64>,
    pub images: Vec<f64>,
    /// `sup d(π(S0 x), S(π x))` over the samples.
    pub residual: f64,
    /// `sup d(π(x), x)` over the samples.
    pub id_distance: f64,
    /// Sample images are cyclically ordered (homeomorphism at sample scale).
    pub monotone: bool,
    pub depth: usize,
}

/// Evaluate `π` on a uniform sample grid and measure its defects.
pub fn conjugacy_report(
    s0: &ExpandingMap,
    s: &ExpandingMap,
    samples: usize,
    depth: usize,
    tols: &Tolerances,
) -> Result<ConjugacyMap, ConjugacyError> {
    let grid: Vec<f64> = (0..samples).map(|i| i as f64 / samples as f64).collect();
    let rows: Result<Vec<(f64, f64)>, ConjugacyError> = grid
        .par_iter()
        .map(|&x| {
            let pi_x = conjugacy_point(s0, s, x, depth, tols)?;
            let pi_s0x = conjugacy_point(s0, s, s0.image(x), depth, tols)?;
            let defect = circle_distance(pi_s0x, s.image(pi_x));
            Ok((pi_x, defect))
        })
        .collect();
    let rows = rows?;
    let images: Vec<f64> = rows.iter().map(|r| r.0).collect();
    let residual = rows.iter().map(|r| r.1).fold(0.0, f64::max);
    let id_distance = grid
        .iter()
        .zip(&images)
        .map(|(&x, &y)| circle_distance(x, y))
        .fold(0.0, f64::max);
    let descents = (0..samples)
        .filter(|&i| images[(i + 1) % samples] < images[i])
        .count();
    Ok(ConjugacyMap {
        grid,
        images,
        residual,
        id_distance,
        monotone: descents <= 1,
        depth,
    })
}

/// A continued orbit with its distance to the source orbit.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ContinuedOrbit {
    pub orbit: PeriodicOrbit,
    /// `max_i d(continued_i, source_i)`.
    pub max_drift: f64,
}

/// Continue a periodic orbit of `s0` to the nearby map `s`.
///
/// The integer lift offsets `k_i = S0~(p_i) - p_{i+1}` are read off the
/// source orbit; the continued cycle solves `S~(z_i) = z_{i+1} + k_i` by
/// backward contraction seeded at the source points, so the symbolic code
/// carries over verbatim.
pub fn continue_orbit(
    orbit: &PeriodicOrbit,
    s0: &ExpandingMap,
    s: &ExpandingMap,
    tols: &Tolerances,
) -> Result<ContinuedOrbit, ConjugacyError> {
    if s0.degree() != s.degree() {
        return Err(ConjugacyError::DegreeMismatch(s0.degree(), s.degree()));
    }
    let tau = orbit.period;
    let mut offsets = Vec::with_capacity(tau);
    for i in 0..tau {
        let p = orbit.points[i];
        let q = orbit.points[(i + 1) % tau];
        let k = (s0.lift(p) - q).round();
        if (s0.lift(p) - q - k).abs() > 1e-6 {
            return Err(ConjugacyError::ConvergenceFailure(format!(
                "source orbit does not close under the source lift at point {i}"
            )));
        }
        offsets.push(k);
    }
    let sweep = |z0: f64| -> Result<f64, MapError> {
        let mut z = z0;
        for &k in offsets.iter().rev() {
            z = s.lift_inverse(z + k, tols)?;
        }
        Ok(z)
    };
    let mut z = orbit.points[0];
    let mut converged = false;
    for _ in 0..2000 {
        let next =
            sweep(z).map_err(|e| ConjugacyError::ConvergenceFailure(e.to_string()))?;
        let step = (next - z).abs();
        z = next;
        if step < tols.contraction_step {
            converged = true;
            break;
        }
    }
    if !converged {
        return Err(ConjugacyError::ConvergenceFailure(
            "backward sweeps did not settle".into(),
        ));
    }
    let mut vals = vec![0.0; tau];
    let mut t = z;
    for i in (0..tau).rev() {
        t = s
            .lift_inverse(t + offsets[i], tols)
            .map_err(|e| ConjugacyError::ConvergenceFailure(e.to_string()))?;
        vals[i] = t;
    }
    let points: Vec<f64> = vals.iter().map(|&v| wrap_unit(v)).collect();
    let mut max_drift = 0.0f64;
    for i in 0..tau {
        let res = circle_distance(s.image(points[i]), points[(i + 1) % tau]);
        if res > tols.orbit_residual {
            return Err(ConjugacyError::ConvergenceFailure(format!(
                "continued orbit residual {res} above {}",
                tols.orbit_residual
            )));
        }
        max_drift = max_drift.max(circle_distance(points[i], orbit.points[i]));
    }
    Ok(ContinuedOrbit {
        orbit: PeriodicOrbit {
            points,
            period: tau,
            code: orbit.code.clone(),
        },
        max_drift,
    })
}
