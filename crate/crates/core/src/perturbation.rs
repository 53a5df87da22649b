//! The explicit bump perturbation `S0 = T + h` and its constants ledger.
//!
//! Given an expanding map `T`, a sub-action `f`, and a budget `ε`, the
//! pipeline picks a periodic orbit `Γ` with a large gap relative to its
//! distance to the minimizing set, then lowers `log DT` on `Γ` by exactly
//! `Δ = ε·ρ·G*/K⁴` per point, using one cubic bump per orbit point:
//!
//! ```text
//! h(x) = -ε/(2K·ρG*) · (x-p_i)(p_i+ρG*-x)² · γ_i   on (p_i, p_i+ρG*),
//! ```
//!
//! mirrored on the left and zero elsewhere. The weight `γ_i` is the closed
//! form making `∫_{DT(p_i)-γ_i·c}^{DT(p_i)} dz/z = Δ` with `c = ε·ρ·G*/(2K)`,
//! so the derivative drop at each orbit point translates into the same
//! additive drop of `log DT`. A moving average over `[-δ, δ]` upgrades the
//! Lipschitz-derivative bump to a `C²` one without changing the estimates.
//!
//! Two constant regimes are supported. `Paper` instantiates every inequality
//! verbatim; its `L` and `ρ` overflow doubles for realistic `K` unless `ε`
//! is huge, which is detected and reported. `Practical` keeps all structural
//! formulas but scales `L`, `ρ`, `C` to desk-feasible magnitudes; the
//! verifier then checks conclusions directly, and the ledger records which
//! worst-case inequalities were relaxed.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::circle_map::{
    circle_distance, BumpLayer, ExpandingMap, ExpansionProfile, MapError,
};
use crate::orbits::{
    enumerate_periodic_orbits, select_large_gap_orbit, LargeGapSelection, OrbitError,
    PeriodicOrbit,
};
use crate::subaction::{
    coboundary_f, minimizing_set, solve_subaction, SolveParams, SubAction, SubactionError,
};
use crate::tol::Tolerances;

#[derive(Debug, Error)]
pub enum PerturbError {
    #[error("constants overflow the floating range: {0}")]
    Overflow(String),
    #[error("no admissible eps0: {0}")]
    Infeasible(String),
    #[error("gamma out of (0, 1]: {gamma}")]
    GammaOutOfRange { gamma: f64 },
    #[error("bump supports overlap")]
    SupportOverlap,
    #[error("perturbation identity failed with residual {residual}")]
    PlanInvalid { residual: f64 },
    #[error("mollification radius {delta} not in (0, {max_delta})")]
    InvalidMollifyDelta { delta: f64, max_delta: f64 },
    #[error("bad options: {0}")]
    BadOptions(String),
    #[error(transparent)]
    Map(#[from] MapError),
    #[error(transparent)]
    Orbit(#[from] OrbitError),
    #[error(transparent)]
    Subaction(#[from] SubactionError),
}

/// Constant-selection regime.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Regime {
    /// Every inequality of the construction enforced verbatim.
    Paper,
    /// Structural formulas verbatim; `L`, `ρ`, `C` at desk scale.
    Practical,
}

impl std::fmt::Display for Regime {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Regime::Paper => write!(f, "paper"),
            Regime::Practical => write!(f, "practical"),
        }
    }
}

impl std::str::FromStr for Regime {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "paper" => Ok(Regime::Paper),
            "practical" => Ok(Regime::Practical),
            other => Err(format!("unknown regime '{other}' (paper|practical)")),
        }
    }
}

/// One recorded inequality of the ledger. `name` states the relation; `holds`
/// is its literal truth value; `enforced` says whether this regime requires it.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct InequalityCheck {
    pub name: String,
    pub lhs: f64,
    pub rhs: f64,
    pub holds: bool,
    pub enforced: bool,
}

/// Every constant of the construction, with its audited inequalities.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ConstantsLedger {
    pub regime: Regime,
    /// Perturbation budget in `C^{1,1}` distance units.
    pub epsilon: f64,
    pub k: f64,
    pub l: f64,
    pub rho: f64,
    pub c_big: f64,
    /// Gap `G(Γ)` of the selected orbit.
    pub g_star: f64,
    /// `Σ_{x∈Γ} d(x, E)` against the minimizing set sample.
    pub d_star: f64,
    pub eps0_tilde: f64,
    pub eps_tilde: f64,
    pub gammas: Vec<f64>,
    pub tau: usize,
    pub checks: Vec<InequalityCheck>,
}

impl ConstantsLedger {
    /// Bump support half-width `w = ρ·G*`.
    pub fn half_width(&self) -> f64 {
        self.rho * self.g_star
    }

    /// Amplitude scale `ε/(2K·w)` of the cubic bump.
    pub fn amplitude_scale(&self) -> f64 {
        self.epsilon / (2.0 * self.k * self.half_width())
    }

    /// Derivative half-interval `c = ε·ρ·G*/(2K)`.
    pub fn c_max(&self) -> f64 {
        self.epsilon * self.rho * self.g_star / (2.0 * self.k)
    }

    /// The exact drop `Δ = ε·ρ·G*/K⁴` of `log DT` at each orbit point.
    pub fn delta(&self) -> f64 {
        self.epsilon * self.rho * self.g_star / self.k.powi(4)
    }

    /// Names of recorded inequalities that fail (possible only for the
    /// non-enforced subset in the practical regime).
    pub fn relaxed(&self) -> Vec<String> {
        self.checks
            .iter()
            .filter(|c| !c.holds)
            .map(|c| c.name.clone())
            .collect()
    }
}

/// Constants that precede orbit selection.
#[derive(Debug, Clone)]
pub struct PartialConstants {
    pub k: f64,
    /// `None` in the practical regime until the orbit gap is known.
    pub l: Option<f64>,
    pub rho: f64,
    pub c_big: f64,
}

/// The stiffness constant `K`: `1.01` times the largest of its lower bounds.
pub fn choose_k(profile: &ExpansionProfile, lip_f: f64) -> f64 {
    let lam = profile.min_deriv;
    let bounds = [
        2.0 * profile.max_deriv,
        10.0,
        lip_f * (profile.max_deriv + 1.0) + profile.lip_deriv,
        lam / (lam - 1.0),
    ];
    1.01 * bounds.iter().cloned().fold(f64::NEG_INFINITY, f64::max)
}

/// `K`, `L`, `ρ`, `C` before orbit selection.
///
/// Paper regime: `L = ceil(4K⁶/ε)+1`, `ρ = K^{-L}/(4K)`, `C = 1.01·6K⁵/(ε·ρ)`.
/// These overflow doubles whenever `L·ln K` exceeds the exponent range, which
/// is reported as `Overflow` (a desk-scale run must use the practical regime).
pub fn choose_constants(
    profile: &ExpansionProfile,
    sub: &SubAction,
    epsilon: f64,
    regime: Regime,
    opts: &PlanOptions,
) -> Result<PartialConstants, PerturbError> {
    if epsilon.is_nan() || epsilon <= 0.0 || !epsilon.is_finite() {
        return Err(PerturbError::BadOptions(format!(
            "epsilon must be positive, got {epsilon}"
        )));
    }
    let k = choose_k(profile, sub.lip_f);
    match regime {
        Regime::Paper => {
            let l = (4.0 * k.powi(6) / epsilon).ceil() + 1.0;
            let log_k_pow_l = l * k.ln();
            if log_k_pow_l > 700.0 {
                return Err(PerturbError::Overflow(format!(
                    "K^L with K={k}, L={l} exceeds the f64 range; \
                     use the practical regime"
                )));
            }
            let rho = k.powf(-l) / (4.0 * k);
            let c_big = 1.01 * 6.0 * k.powi(5) / (epsilon * rho);
            if !rho.is_normal() || !c_big.is_finite() {
                return Err(PerturbError::Overflow(format!(
                    "rho={rho}, C={c_big} not representable"
                )));
            }
            Ok(PartialConstants {
                k,
                l: Some(l),
                rho,
                c_big,
            })
        }
        Regime::Practical => {
            if opts.rho.is_nan() || opts.rho <= 0.0 || opts.rho >= 0.45 {
                return Err(PerturbError::BadOptions(format!(
                    "practical rho must lie in (0, 0.45), got {}",
                    opts.rho
                )));
            }
            if opts.c_select.is_nan() || opts.c_select <= 0.0 {
                return Err(PerturbError::BadOptions(
                    "practical C must be positive".into(),
                ));
            }
            Ok(PartialConstants {
                k,
                l: opts.l_override,
                rho: opts.rho,
                c_big: opts.c_select,
            })
        }
    }
}

/// Largest `L >= 1` keeping the escape radius `(ρG*+ε̃₀)K^L` inside
/// `(G*-2ε̃₀)/(2K)`, with headroom `ε̃₀ <= ρG*`.
fn practical_l(k: f64, rho: f64) -> f64 {
    let bound = (1.0 - 2.0 * rho) / (4.0 * rho * k);
    if bound <= k {
        1.0
    } else {
        (bound.ln() / k.ln()).floor().max(1.0)
    }
}

/// Practical-regime `ρ`, finalized once the orbit gap is known.
///
/// The drop `Δ = ε·ρ·G*/K⁴` must dominate the sub-action defect, or the
/// far-region minimum of `F~` cannot be positive; `ρ` is raised to keep
/// `Δ >= 3·defect`, and capped so the escape-radius geometry at `L = 1`
/// stays admissible.
fn practical_rho(user_rho: f64, defect: f64, epsilon: f64, k: f64, g_star: f64) -> f64 {
    let needed = 3.2 * defect * k.powi(4) / (epsilon * g_star);
    let cap = 1.0 / (2.2 * k * k);
    user_rho.max(needed).min(cap.max(user_rho))
}

/// The three eps0 inequalities at a candidate value.
#[allow(clippy::too_many_arguments)]
fn eps0_conditions(
    epsilon: f64,
    k: f64,
    l: f64,
    rho: f64,
    g_star: f64,
    d_star: f64,
    tau: usize,
    e0: f64,
) -> (bool, bool, bool) {
    let k_pow_l = k.powf(l);
    let i1 = (rho * g_star + e0) * k_pow_l < (g_star - 2.0 * e0) / (2.0 * k);
    let delta = epsilon * rho * g_star / k.powi(4);
    let core = delta - k * d_star - 2.0 * e0 * k;
    let i2 = l * core
        > (rho * g_star + e0) * k * k + tau as f64 * (4.0 * e0 * k + 2.0 * k * d_star / tau as f64);
    let i3 = core > 0.0;
    (i1, i2, i3)
}

/// Largest `ε̃₀ = (ε/4)·2^{-j}` satisfying the admissibility inequalities.
///
/// The escape-radius and positivity conditions are enforced in both regimes;
/// the worst-case sum-positivity chain is enforced only in the paper regime
/// (the practical verifier checks the partial sums directly).
#[allow(clippy::too_many_arguments)]
pub fn choose_eps0(
    regime: Regime,
    epsilon: f64,
    k: f64,
    l: f64,
    rho: f64,
    g_star: f64,
    d_star: f64,
    tau: usize,
) -> Result<f64, PerturbError> {
    if g_star.is_nan() || g_star <= 0.0 {
        return Err(PerturbError::Infeasible("orbit gap must be positive".into()));
    }
    for j in 0..=200u32 {
        let e0 = epsilon / 4.0 * 0.5f64.powi(j as i32);
        let (i1, i2, i3) = eps0_conditions(epsilon, k, l, rho, g_star, d_star, tau, e0);
        let chain_ok = match regime {
            Regime::Paper => i2,
            Regime::Practical => true,
        };
        if i1 && i3 && chain_ok {
            return Ok(e0);
        }
    }
    Err(PerturbError::Infeasible(format!(
        "no dyadic eps0 <= eps/4 admissible (K={k}, L={l}, rho={rho}, \
         G*={g_star}, d*={d_star}); the gap-to-distance ratio of the \
         selected orbit is too small"
    )))
}

/// Closed-form bump weight: `γ = a(1 - e^{-t})/c` with `t = ε·ρ·G*/K⁴` and
/// `c = ε·ρ·G*/(2K)`, the unique solution of `∫_{a-γc}^{a} dz/z = t`.
pub fn solve_gamma(a: f64, epsilon: f64, k: f64, rho: f64, g_star: f64) -> Result<f64, PerturbError> {
    let t = epsilon * rho * g_star / k.powi(4);
    let c_max = epsilon * rho * g_star / (2.0 * k);
    let gamma = a * (-(-t).exp_m1()) / c_max;
    if !(gamma > 0.0 && gamma <= 1.0) {
        return Err(PerturbError::GammaOutOfRange { gamma });
    }
    Ok(gamma)
}

/// The explicit cubic bump layer for an orbit under a ledger.
pub fn build_bump(
    orbit: &PeriodicOrbit,
    epsilon: f64,
    k: f64,
    rho: f64,
    g_star: f64,
    map: &ExpandingMap,
) -> Result<BumpLayer, PerturbError> {
    let half_width = rho * g_star;
    let gammas: Result<Vec<f64>, PerturbError> = orbit
        .points
        .iter()
        .map(|&p| solve_gamma(map.deriv(p), epsilon, k, rho, g_star))
        .collect();
    let amplitude_scale = epsilon / (2.0 * k * half_width);
    BumpLayer::new(orbit.points.clone(), half_width, gammas?, amplitude_scale)
        .map_err(|_| PerturbError::SupportOverlap)
}

/// Moving average `h_δ(x) = (1/2δ)∫_{-δ}^{δ} h(x+s) ds` of a raw bump,
/// evaluated by exact piecewise-polynomial integration. Its second
/// derivative is `(Dh(x+δ) - Dh(x-δ))/(2δ)` identically.
pub fn mollify_bump(bump: &BumpLayer, delta: f64) -> Result<BumpLayer, PerturbError> {
    let max_delta = bump.half_width / 4.0;
    if !(delta > 0.0 && delta < max_delta) {
        return Err(PerturbError::InvalidMollifyDelta { delta, max_delta });
    }
    let mut m = bump.clone();
    m.kind = crate::circle_map::BumpKind::Mollified;
    m.mollify_delta = delta;
    Ok(m)
}

/// Options of `assemble_plan`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PlanOptions {
    pub regime: Regime,
    /// Sub-action grid size.
    pub grid_n: usize,
    /// Period bound of the selection catalog.
    pub max_period: usize,
    /// Period bound anchoring `alpha`.
    pub anchor_max_period: usize,
    /// Slack of the minimizing-set cut.
    pub slack: f64,
    /// Practical-regime `ρ`.
    pub rho: f64,
    /// Practical-regime selection constant `C`.
    pub c_select: f64,
    /// Practical-regime `L`; computed adaptively when `None`.
    pub l_override: Option<f64>,
    /// Mollification radius as a fraction of its upper bound `w/4`;
    /// `None` skips the C² variant.
    pub mollify_fraction: Option<f64>,
    /// Exact orbit points of catalog orbits attaining `alpha` are added to
    /// the minimizing-set sample (they carry minimizing measures).
    pub extend_e_with_anchor_orbits: bool,
    pub subaction_tol: f64,
    pub subaction_max_iter: usize,
}

impl Default for PlanOptions {
    fn default() -> Self {
        PlanOptions {
            regime: Regime::Practical,
            grid_n: 1 << 14,
            max_period: 12,
            anchor_max_period: 14,
            slack: 1e-3,
            rho: 1e-3,
            c_select: 10.0,
            l_override: None,
            mollify_fraction: Some(0.5),
            extend_e_with_anchor_orbits: true,
            subaction_tol: 1e-10,
            subaction_max_iter: 20_000,
        }
    }
}

/// Residuals of the exact identities the construction promises.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PlanResiduals {
    /// `sup_p d(S0(p), T(p))` over the orbit.
    pub orbit_fixed: f64,
    /// `sup_p |DS0(p) - (DT(p) - γ_p·c)|`.
    pub deriv_drop: f64,
    /// `sup_p |F_{S0}(p) - F_T(p) + Δ|`.
    pub coboundary_drop: f64,
    /// Analytic `sup|h| + sup|Dh| + Lip(Dh)` (must be `< ε/2`).
    pub c11_distance: f64,
    /// Forward-invariance defect of the minimizing-set sample.
    pub e_invariance_defect: f64,
}

/// The assembled perturbation: base map, selected orbit, ledger, bump,
/// perturbed map, and the sub-action of the base map.
#[derive(Debug, Clone)]
pub struct PerturbationPlan {
    pub base_map: ExpandingMap,
    pub perturbed_map: ExpandingMap,
    pub orbit: PeriodicOrbit,
    pub ledger: ConstantsLedger,
    pub bump: BumpLayer,
    pub mollified_bump: Option<BumpLayer>,
    pub subaction: SubAction,
    pub base_profile: ExpansionProfile,
    pub perturbed_profile: ExpansionProfile,
    pub selection: LargeGapSelection,
    pub residuals: PlanResiduals,
}

impl PerturbationPlan {
    /// The `C²` perturbed map `T + h_δ`, when mollification was requested.
    pub fn mollified_map(&self) -> Option<ExpandingMap> {
        self.mollified_bump
            .as_ref()
            .map(|layer| self.base_map.with_layer(layer.clone()))
    }

    /// Serializable summary (everything except grid-sized data).
    pub fn record(&self) -> PlanRecord {
        let mut record = PlanRecord {
            plan_id: String::new(),
            map_id: self.base_map.map_id(),
            perturbed_map_id: self.perturbed_map.map_id(),
            regime: self.ledger.regime,
            ledger: self.ledger.clone(),
            orbit: self.orbit.clone(),
            bump: self.bump.clone(),
            mollified_bump: self.mollified_bump.clone(),
            residuals: self.residuals.clone(),
            subaction_summary: SubactionSummary {
                alpha: self.subaction.alpha,
                defect: self.subaction.defect,
                lip_f: self.subaction.lip_f,
                n: self.subaction.f.n,
            },
        };
        let body = serde_json::to_string(&record).expect("plan record serializes");
        let digest = Sha256::digest(body.as_bytes());
        let mut id = String::with_capacity(64);
        for b in digest {
            id.push_str(&format!("{b:02x}"));
        }
        record.plan_id = id;
        record
    }
}

/// Scalar header of the sub-action, embedded in exported plans.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SubactionSummary {
    pub alpha: f64,
    pub defect: f64,
    pub lip_f: f64,
    pub n: usize,
}

/// JSON form of a plan.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PlanRecord {
    pub plan_id: String,
    pub map_id: String,
    pub perturbed_map_id: String,
    pub regime: Regime,
    pub ledger: ConstantsLedger,
    pub orbit: PeriodicOrbit,
    pub bump: BumpLayer,
    pub mollified_bump: Option<BumpLayer>,
    pub residuals: PlanResiduals,
    pub subaction_summary: SubactionSummary,
}

fn cmp_check(name: &str, lhs: f64, rhs: f64, greater: bool, enforced: bool) -> InequalityCheck {
    InequalityCheck {
        name: name.to_string(),
        lhs,
        rhs,
        holds: if greater { lhs > rhs } else { lhs < rhs },
        enforced,
    }
}

#[allow(clippy::too_many_arguments)]
fn build_checks(
    regime: Regime,
    epsilon: f64,
    k: f64,
    l: f64,
    rho: f64,
    c_big: f64,
    g_star: f64,
    d_star: f64,
    e0: f64,
    tau: usize,
    profile: &ExpansionProfile,
    lip_f: f64,
    max_gamma: f64,
    subaction_defect: f64,
) -> Vec<InequalityCheck> {
    let paper = regime == Regime::Paper;
    let k_pow_l = k.powf(l);
    let delta = epsilon * rho * g_star / k.powi(4);
    let lam = profile.min_deriv;
    vec![
        cmp_check("K > 2*max|DT|", k, 2.0 * profile.max_deriv, true, true),
        cmp_check("K > 10", k, 10.0, true, true),
        cmp_check(
            "K > Lip(f)*(max|DT|+1) + Lip(DT)",
            k,
            lip_f * (profile.max_deriv + 1.0) + profile.lip_deriv,
            true,
            true,
        ),
        cmp_check("K > minDT/(minDT-1)", k, lam / (lam - 1.0), true, true),
        cmp_check("L*eps > 4*K^6", l * epsilon, 4.0 * k.powi(6), true, paper),
        cmp_check("rho*K^L < 1/(2K)", rho * k_pow_l, 1.0 / (2.0 * k), false, paper),
        cmp_check(
            "eps*rho*C > 6*K^5",
            epsilon * rho * c_big,
            6.0 * k.powi(5),
            true,
            paper,
        ),
        cmp_check(
            "L*eps*rho*C/K^4 > 3K + rho*C*K^2",
            l * epsilon * rho * c_big / k.powi(4),
            3.0 * k + rho * c_big * k * k,
            true,
            paper,
        ),
        cmp_check("G* > C*d*", g_star, c_big * d_star, true, true),
        cmp_check(
            "(rho*G*+eps0)*K^L < (G*-2*eps0)/(2K)",
            (rho * g_star + e0) * k_pow_l,
            (g_star - 2.0 * e0) / (2.0 * k),
            false,
            true,
        ),
        cmp_check(
            "L*(eps*rho*G*/K^4 - K*d* - 2*eps0*K) > (rho*G*+eps0)*K^2 + tau*(4*eps0*K + 2*K*d*/tau)",
            l * (delta - k * d_star - 2.0 * e0 * k),
            (rho * g_star + e0) * k * k
                + tau as f64 * (4.0 * e0 * k + 2.0 * k * d_star / tau as f64),
            true,
            paper,
        ),
        cmp_check(
            "eps*rho*G*/K^4 - K*d* - 2*eps0*K > 0",
            delta - k * d_star - 2.0 * e0 * k,
            0.0,
            true,
            true,
        ),
        cmp_check("eps0 < eps/2", e0, epsilon / 2.0, false, true),
        cmp_check("max gamma <= 1", max_gamma, 1.0 + 1e-15, false, true),
        // Certificate soundness: the drop must dominate the solver defect.
        cmp_check(
            "eps*rho*G*/K^4 > 3*subaction_defect",
            delta,
            3.0 * subaction_defect,
            true,
            false,
        ),
    ]
}

/// Run the whole construction for one map and budget.
pub fn assemble_plan(
    map: &ExpandingMap,
    epsilon: f64,
    opts: &PlanOptions,
    tols: &Tolerances,
) -> Result<PerturbationPlan, PerturbError> {
    let base_profile = map.expansion_profile(4096)?;

    let solve_params = SolveParams {
        grid_n: opts.grid_n,
        tol: opts.subaction_tol,
        max_iter: opts.subaction_max_iter,
        anchor_max_period: opts.anchor_max_period,
        ..SolveParams::default()
    };
    let sub = solve_subaction(map, &solve_params, tols)?;

    let mut e_set = minimizing_set(map, &sub, opts.slack)?;
    let catalog = enumerate_periodic_orbits(map, opts.max_period, tols)?;
    if opts.extend_e_with_anchor_orbits {
        for entry in &catalog.orbits {
            if (entry.lyap_avg - sub.alpha).abs() < 1e-9 {
                e_set.extend_from_slice(&entry.orbit.points);
            }
        }
        e_set.sort_by(f64::total_cmp);
    }

    let partial = choose_constants(&base_profile, &sub, epsilon, opts.regime, opts)?;
    let selection = select_large_gap_orbit(map, &catalog, &e_set, partial.c_big, tols)?;
    let orbit = selection.orbit.clone();
    let g_star = selection.gap;
    let d_star = selection.dist_sum;
    let tau = orbit.period;

    let (k, c_big) = (partial.k, partial.c_big);
    let rho = match opts.regime {
        Regime::Paper => partial.rho,
        Regime::Practical => practical_rho(partial.rho, sub.defect, epsilon, k, g_star),
    };
    let l = match partial.l {
        Some(l) => l,
        None => practical_l(k, rho),
    };

    let e0 = choose_eps0(opts.regime, epsilon, k, l, rho, g_star, d_star, tau)?;
    let eps_tilde = e0 / 2.0;

    let bump = build_bump(&orbit, epsilon, k, rho, g_star, map)?;
    let mollified_bump = match opts.mollify_fraction {
        Some(fr) => {
            if !(fr > 0.0 && fr < 1.0) {
                return Err(PerturbError::BadOptions(format!(
                    "mollify fraction must lie in (0,1), got {fr}"
                )));
            }
            Some(mollify_bump(&bump, fr * bump.half_width / 4.0)?)
        }
        None => None,
    };

    let perturbed_map = map.with_layer(bump.clone());
    let perturbed_profile = perturbed_map.expansion_profile(4096)?;

    // Exact identities at the orbit points.
    let delta = epsilon * rho * g_star / k.powi(4);
    let c_max = epsilon * rho * g_star / (2.0 * k);
    let mut orbit_fixed = 0.0f64;
    let mut deriv_drop = 0.0f64;
    let mut coboundary_drop = 0.0f64;
    for (i, &p) in orbit.points.iter().enumerate() {
        orbit_fixed = orbit_fixed.max(circle_distance(perturbed_map.image(p), map.image(p)));
        let expected = map.deriv(p) - bump.gammas[i] * c_max;
        deriv_drop = deriv_drop.max((perturbed_map.deriv(p) - expected).abs());
        let f_t = coboundary_f(map, &sub.f, p);
        let f_s0 = coboundary_f(&perturbed_map, &sub.f, p);
        coboundary_drop = coboundary_drop.max((f_s0 - (f_t - delta)).abs());
    }
    if coboundary_drop > 1e-10 || orbit_fixed > 1e-12 {
        return Err(PerturbError::PlanInvalid {
            residual: coboundary_drop.max(orbit_fixed),
        });
    }
    let c11_distance =
        bump.sup_value_bound() + bump.sup_deriv_bound() + bump.lip_deriv_bound();

    let checks = build_checks(
        opts.regime,
        epsilon,
        k,
        l,
        rho,
        c_big,
        g_star,
        d_star,
        e0,
        tau,
        &base_profile,
        sub.lip_f,
        bump.gammas.iter().cloned().fold(0.0, f64::max),
        sub.defect,
    );
    if let Some(failed) = checks.iter().find(|c| c.enforced && !c.holds) {
        return Err(PerturbError::Infeasible(format!(
            "enforced inequality '{}' fails: lhs={}, rhs={}",
            failed.name, failed.lhs, failed.rhs
        )));
    }

    let ledger = ConstantsLedger {
        regime: opts.regime,
        epsilon,
        k,
        l,
        rho,
        c_big,
        g_star,
        d_star,
        eps0_tilde: e0,
        eps_tilde,
        gammas: bump.gammas.clone(),
        tau,
        checks,
    };

    let e_invariance_defect = selection.e_invariance_defect;
    Ok(PerturbationPlan {
        base_map: map.clone(),
        perturbed_map,
        orbit,
        ledger,
        bump,
        mollified_bump,
        subaction: sub,
        base_profile,
        perturbed_profile,
        selection,
        residuals: PlanResiduals {
            orbit_fixed,
            deriv_drop,
            coboundary_drop,
            c11_distance,
            e_invariance_defect,
        },
    })
}
