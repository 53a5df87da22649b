//! Sub-actions for `log DT` via min-plus value iteration.
//!
//! A sub-action is a Lipschitz `f` with
//!
//! ```text
//! F(x) = f(T(x)) - f(x) + log DT(x) >= α(T)   everywhere,
//! ```
//!
//! with equality on the minimizing set. `α(T)` is anchored by periodic
//! orbits (orbit averages bound it from above and are exact), and `f` is the
//! fixed point of the one-step operator
//!
//! ```text
//! (Lu)(x) = min_{y ∈ T⁻¹(x)} [ u(y) + log DT(y) - α ],
//! ```
//!
//! iterated with min-normalization `u ← Lu - min Lu` until the sup-change
//! stalls below tolerance. `u` lives on a uniform grid with piecewise-linear
//! interpolation at preimages; preimages of grid points are precomputed once.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::circle_map::{wrap_unit, ExpandingMap, MapError};
use crate::orbits::{enumerate_periodic_orbits, OrbitError};
use crate::tol::Tolerances;

#[derive(Debug, Error)]
pub enum SubactionError {
    #[error("value iteration stalled at sup-change {sup_change} after {iterations} iterations")]
    NonConvergence {
        sub: Box<SubAction>,
        sup_change: f64,
        iterations: usize,
    },
    #[error("minimizing set is empty at slack {slack}; solver defect is {defect}")]
    EmptySet { slack: f64, defect: f64 },
    #[error("bad solver parameters: {0}")]
    BadParams(String),
    #[error(transparent)]
    Map(#[from] MapError),
    #[error(transparent)]
    Orbit(#[from] OrbitError),
}

/// Grid function on `[0,1)` with piecewise-linear circle interpolation.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GridFunction {
    pub n: usize,
    pub values: Vec<f64>,
}

impl GridFunction {
    pub fn zeros(n: usize) -> Self {
        GridFunction {
            n,
            values: vec![0.0; n],
        }
    }

    pub fn constant(n: usize, c: f64) -> Self {
        GridFunction {
            n,
            values: vec![c; n],
        }
    }

    pub fn grid_point(&self, j: usize) -> f64 {
        j as f64 / self.n as f64
    }

    /// Linear interpolation at a circle point.
    pub fn eval(&self, x: f64) -> f64 {
        let t = wrap_unit(x) * self.n as f64;
        let j = t.floor() as usize;
        let frac = t - j as f64;
        let j0 = j % self.n;
        let j1 = (j0 + 1) % self.n;
        (1.0 - frac) * self.values[j0] + frac * self.values[j1]
    }

    /// Lipschitz estimate `max |u_{j+1} - u_j| · n`.
    pub fn lip(&self) -> f64 {
        let n = self.n;
        (0..n)
            .map(|j| (self.values[(j + 1) % n] - self.values[j]).abs())
            .fold(0.0, f64::max)
            * n as f64
    }

    pub fn min(&self) -> f64 {
        self.values.iter().cloned().fold(f64::INFINITY, f64::min)
    }

    pub fn max(&self) -> f64 {
        self.values.iter().cloned().fold(f64::NEG_INFINITY, f64::max)
    }
}

/// Precomputed branch data for one sweep target grid: for each grid point,
/// the `degree` preimages (ascending) and `log DT` there.
struct BranchTable {
    entries: Vec<(f64, f64)>,
    degree: usize,
    n: usize,
}

impl BranchTable {
    fn build(map: &ExpandingMap, n: usize, tols: &Tolerances) -> Result<Self, MapError> {
        let degree = map.degree() as usize;
        let rows: Result<Vec<Vec<(f64, f64)>>, MapError> = (0..n)
            .into_par_iter()
            .map(|j| {
                let x = j as f64 / n as f64;
                let ys = map.preimages(x, tols)?;
                Ok(ys.into_iter().map(|y| (y, map.log_deriv(y))).collect())
            })
            .collect();
        let mut entries = Vec::with_capacity(n * degree);
        for row in rows? {
            entries.extend(row);
        }
        Ok(BranchTable { entries, degree, n })
    }

    /// One operator application onto a fresh grid function.
    fn apply(&self, u: &GridFunction, alpha: f64) -> GridFunction {
        let values: Vec<f64> = (0..self.n)
            .into_par_iter()
            .map(|j| {
                let mut best = f64::INFINITY;
                for b in 0..self.degree {
                    let (y, logd) = self.entries[j * self.degree + b];
                    let cand = u.eval(y) + logd - alpha;
                    // Ties keep the smallest preimage (ascending order).
                    if cand < best {
                        best = cand;
                    }
                }
                best
            })
            .collect();
        GridFunction {
            n: self.n,
            values,
        }
    }
}

/// One Lax–Oleinik sweep: `(Lu)(x_j) = min_y [u(y) + log DT(y) - α]` over
/// the preimages `y` of `x_j`, `u` interpolated linearly.
pub fn lax_oleinik_step(
    map: &ExpandingMap,
    u: &GridFunction,
    alpha: f64,
    tols: &Tolerances,
) -> Result<GridFunction, MapError> {
    let table = BranchTable::build(map, u.n, tols)?;
    Ok(table.apply(u, alpha))
}

/// Sub-action certificate: `f`, the level `alpha`, and the measured defect
/// `max (alpha - F)₊` over the solver grid.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SubAction {
    pub f: GridFunction,
    pub alpha: f64,
    pub defect: f64,
    pub lip_f: f64,
    /// Orbit-anchored estimate (min Lyapunov average over the anchor catalog).
    pub alpha_orbit: f64,
    /// Cesàro estimate `min (L^k 0)/k` with `alpha = 0`, as a cross-check.
    pub alpha_iterative: f64,
    /// Iterations spent in the value iteration.
    pub iterations: usize,
    /// Final sup-change of the iteration.
    pub sup_change: f64,
}

/// Parameters of `solve_subaction`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SolveParams {
    pub grid_n: usize,
    /// Stop when the normalized sweep changes by less than this, sup-norm.
    pub tol: f64,
    pub max_iter: usize,
    /// Period bound of the orbit catalog anchoring `alpha`.
    pub anchor_max_period: usize,
    /// Sweeps of the Cesàro cross-check.
    pub cesaro_iters: usize,
}

impl Default for SolveParams {
    fn default() -> Self {
        SolveParams {
            grid_n: 1 << 14,
            tol: 1e-10,
            max_iter: 20_000,
            anchor_max_period: 14,
            cesaro_iters: 64,
        }
    }
}

/// Coboundary-normalized observable `F(x) = f(T(x)) - f(x) + log DT(x)`.
pub fn coboundary_f(map: &ExpandingMap, f: &GridFunction, x: f64) -> f64 {
    f.eval(map.image(x)) - f.eval(x) + map.log_deriv(x)
}

fn coboundary_on_grid(map: &ExpandingMap, f: &GridFunction, n: usize) -> Vec<f64> {
    (0..n)
        .into_par_iter()
        .map(|j| coboundary_f(map, f, j as f64 / n as f64))
        .collect()
}

/// Solve for a sub-action on an `n`-point grid.
///
/// `alpha` is anchored at the minimum orbit average over the period bound in
/// `params` (orbit averages are exact; the grid iteration only supplies `f`).
/// Returns `NonConvergence` carrying the achieved certificate when the
/// iteration stalls above `tol`.
pub fn solve_subaction(
    map: &ExpandingMap,
    params: &SolveParams,
    tols: &Tolerances,
) -> Result<SubAction, SubactionError> {
    if params.grid_n < (1 << 12) {
        return Err(SubactionError::BadParams(format!(
            "grid_n must be >= 4096, got {}",
            params.grid_n
        )));
    }
    if params.tol < 1e-10 {
        return Err(SubactionError::BadParams(format!(
            "tol must be >= 1e-10, got {}",
            params.tol
        )));
    }
    let n = params.grid_n;
    let table = BranchTable::build(map, n, tols).map_err(SubactionError::Map)?;

    let anchor = enumerate_periodic_orbits(map, params.anchor_max_period, tols)?;
    let alpha_orbit = anchor.min_lyapunov();

    // Cesàro cross-check: min of the k-step Birkhoff minimum over backward
    // trees, divided by k.
    let mut u = GridFunction::zeros(n);
    for _ in 0..params.cesaro_iters {
        u = table.apply(&u, 0.0);
    }
    let alpha_iterative = u.min() / params.cesaro_iters.max(1) as f64;

    // Value iteration at the anchored alpha with min-normalization.
    let mut u = GridFunction::zeros(n);
    let mut sup_change = f64::INFINITY;
    let mut iterations = 0;
    for it in 1..=params.max_iter {
        let mut v = table.apply(&u, alpha_orbit);
        let m = v.min();
        for val in &mut v.values {
            *val -= m;
        }
        sup_change = v
            .values
            .iter()
            .zip(&u.values)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        u = v;
        iterations = it;
        if sup_change < params.tol {
            break;
        }
    }

    // The fixed point satisfies u(T(x)) <= u(x) + log DT(x) - alpha, i.e.
    // u - u∘T + log DT >= alpha; the sub-action orientation
    // f∘T - f + log DT >= alpha needs f = -u.
    for val in &mut u.values {
        *val = -*val;
    }

    let coboundary = coboundary_on_grid(map, &u, n);
    let defect = coboundary
        .iter()
        .map(|&f| (alpha_orbit - f).max(0.0))
        .fold(0.0, f64::max);
    let lip_f = u.lip();
    let sub = SubAction {
        f: u,
        alpha: alpha_orbit,
        defect,
        lip_f,
        alpha_orbit,
        alpha_iterative,
        iterations,
        sup_change,
    };
    if sup_change >= params.tol {
        return Err(SubactionError::NonConvergence {
            sub: Box::new(sub),
            sup_change,
            iterations,
        });
    }
    Ok(sub)
}

/// Grid points where `F <= alpha + slack`: the numerical minimizing set,
/// used as the target set `E` for the large-gap orbit search.
pub fn minimizing_set(
    map: &ExpandingMap,
    sub: &SubAction,
    slack: f64,
) -> Result<Vec<f64>, SubactionError> {
    let n = sub.f.n;
    let coboundary = coboundary_on_grid(map, &sub.f, n);
    let set: Vec<f64> = coboundary
        .iter()
        .enumerate()
        .filter(|(_, &f)| f <= sub.alpha + slack)
        .map(|(j, _)| j as f64 / n as f64)
        .collect();
    if set.is_empty() {
        return Err(SubactionError::EmptySet {
            slack,
            defect: sub.defect,
        });
    }
    Ok(set)
}

/// Certificate of `F >= alpha - defect - lip_correction` on a fine grid.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MinCertificate {
    pub grid_n: usize,
    pub grid_min_f: f64,
    /// `Lip(F)/(2 grid_n)` with `Lip(F) <= Lip(f)(max DT + 1) + Lip(DT)`.
    pub lip_correction: f64,
    /// `(alpha - grid_min_f + lip_correction)₊`.
    pub certified_defect: f64,
}

/// Scan `F` on a fine grid and combine with the Lipschitz bound.
pub fn certify_min(
    map: &ExpandingMap,
    sub: &SubAction,
    grid_n: usize,
) -> Result<MinCertificate, SubactionError> {
    let profile = map.expansion_profile(4096)?;
    let grid_min_f = coboundary_on_grid(map, &sub.f, grid_n)
        .into_iter()
        .fold(f64::INFINITY, f64::min);
    let lip_f_bound = sub.lip_f * (profile.max_deriv + 1.0) + profile.lip_deriv;
    let lip_correction = lip_f_bound / (2.0 * grid_n as f64);
    Ok(MinCertificate {
        grid_n,
        grid_min_f,
        lip_correction,
        certified_defect: (sub.alpha - grid_min_f + lip_correction).max(0.0),
    })
}

/// CSV export: `x,f,F` per grid point.
pub fn subaction_csv(map: &ExpandingMap, sub: &SubAction) -> String {
    let n = sub.f.n;
    let mut out = String::from("x,f,F\n");
    for j in 0..n {
        let x = j as f64 / n as f64;
        out.push_str(&format!(
            "{},{},{}\n",
            x,
            sub.f.values[j],
            coboundary_f(map, &sub.f, x)
        ));
    }
    out
}
