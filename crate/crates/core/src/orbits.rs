//! Periodic orbits of expanding circle maps.
//!
//! Periodic points are located as fixed points of compositions of inverse
//! branches of the lift, one composition per Lyndon word over the alphabet
//! `{0, .., degree-1}`. Each inverse branch contracts the real line by at
//! least `1/min DT`, so the composition has a unique fixed point and the
//! backward iteration converges unconditionally; rotations of a word name
//! the same orbit and are never generated twice.
//!
//! The only symbolic collision on the circle is the all-zeros /
//! all-(degree-1) pair of fixed-point codes, which both name the fixed point
//! of the first branch; the all-(degree-1) word of length 1 is skipped.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::circle_map::{
    circle_distance, distance_to_set, wrap_unit, ExpandingMap, ExpansionProfile, MapError,
};
use crate::tol::Tolerances;

/// Word-count budget for symbolic enumeration: `degree^max_period` words.
pub const WORD_BUDGET: u128 = 1 << 24;

#[derive(Debug, Error)]
pub enum OrbitError {
    #[error("word budget exceeded: degree^{max_period} > {budget}")]
    BudgetExceeded { max_period: usize, budget: u128 },
    #[error("orbit location failed for code {code:?}: {reason}")]
    ConvergenceFailure { code: Vec<u8>, reason: String },
    #[error("no orbit with gap > C·Σ d(x,E) up to period {max_period}")]
    NotFoundWithinBudget { max_period: usize },
    #[error("target set E is empty")]
    EmptyTargetSet,
    #[error(transparent)]
    Map(#[from] MapError),
}

/// A periodic orbit, ordered by the dynamics: `points[i+1] = T(points[i])`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PeriodicOrbit {
    pub points: Vec<f64>,
    pub period: usize,
    /// Canonical (rotation-minimal, primitive) symbolic code.
    pub code: Vec<u8>,
}

impl PeriodicOrbit {
    /// Code as a compact string, digits for alphabets up to 10 symbols.
    pub fn code_string(&self) -> String {
        if self.code.iter().all(|&s| s < 10) {
            self.code.iter().map(|s| (b'0' + s) as char).collect()
        } else {
            self.code
                .iter()
                .map(u8::to_string)
                .collect::<Vec<_>>()
                .join("-")
        }
    }

    /// Minimal circle distance from `x` to the orbit.
    pub fn distance_to(&self, x: f64) -> f64 {
        distance_to_set(x, &self.points)
    }

    /// Minimal pairwise distance between distinct orbit points.
    pub fn min_pairwise_distance(&self) -> f64 {
        let mut best = f64::INFINITY;
        for i in 0..self.points.len() {
            for j in (i + 1)..self.points.len() {
                best = best.min(circle_distance(self.points[i], self.points[j]));
            }
        }
        best
    }

    /// Whether the two orbits contain the same points up to `tol`.
    pub fn same_points(&self, other: &PeriodicOrbit, tol: f64) -> bool {
        self.period == other.period
            && self
                .points
                .iter()
                .all(|&p| other.distance_to(p) < tol)
    }
}

/// Catalog entry: an orbit together with its scalar statistics.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CatalogEntry {
    pub orbit: PeriodicOrbit,
    pub gap: f64,
    pub lyap_avg: f64,
}

/// All periodic orbits of a map up to a period bound, sorted by
/// `(lyap_avg, period, first point)`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct OrbitCatalog {
    pub map_id: String,
    pub max_period: usize,
    pub orbits: Vec<CatalogEntry>,
}

impl OrbitCatalog {
    /// Number of fixed points of `T^n` covered by the catalog: every orbit
    /// of period dividing `n` contributes its full point count.
    pub fn period_point_count(&self, n: usize) -> u64 {
        self.orbits
            .iter()
            .filter(|e| n.is_multiple_of(e.orbit.period))
            .map(|e| e.orbit.period as u64)
            .sum()
    }

    /// Smallest Lyapunov average in the catalog.
    pub fn min_lyapunov(&self) -> f64 {
        self.orbits
            .iter()
            .map(|e| e.lyap_avg)
            .fold(f64::INFINITY, f64::min)
    }

    /// CSV export: `period,code,points,gap,lyap_avg`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("period,code,points,gap,lyap_avg\n");
        for e in &self.orbits {
            let pts = e
                .orbit
                .points
                .iter()
                .map(|p| p.to_string())
                .collect::<Vec<_>>()
                .join(";");
            out.push_str(&format!(
                "{},{},{},{},{}\n",
                e.orbit.period,
                e.orbit.code_string(),
                pts,
                e.gap,
                e.lyap_avg
            ));
        }
        out
    }
}

/// Lyndon words (strictly minimal among rotations, hence primitive) over
/// `{0, .., alphabet-1}` of length `<= max_len`, in lexicographic order.
/// Duval's algorithm.
pub fn lyndon_words(alphabet: u8, max_len: usize) -> Vec<Vec<u8>> {
    let mut out = Vec::new();
    let mut w = vec![0u8];
    loop {
        if w.len() <= max_len {
            out.push(w.clone());
        }
        let m = w.len();
        let mut t: Vec<u8> = (0..max_len).map(|i| w[i % m]).collect();
        while t.last() == Some(&(alphabet - 1)) {
            t.pop();
        }
        match t.last_mut() {
            Some(last) => *last += 1,
            None => return out,
        }
        w = t;
    }
}

/// Locate the orbit coded by a word: backward iteration of the composed
/// inverse lift branches, contraction factor `min DT^{-n}` per sweep.
fn locate_orbit(
    map: &ExpandingMap,
    word: &[u8],
    tols: &Tolerances,
) -> Result<PeriodicOrbit, OrbitError> {
    let anchor = map.branch_anchor();
    let offsets: Vec<f64> = word
        .iter()
        .map(|&s| (anchor + i64::from(s)) as f64)
        .collect();
    let n = word.len();
    let sweep = |z0: f64| -> Result<f64, MapError> {
        let mut z = z0;
        for &o in offsets.iter().rev() {
            z = map.lift_inverse(z + o, tols)?;
        }
        Ok(z)
    };
    let mut z = 0.5;
    let mut converged = false;
    for _ in 0..2000 {
        let next = sweep(z).map_err(|e| OrbitError::ConvergenceFailure {
            code: word.to_vec(),
            reason: e.to_string(),
        })?;
        let step = (next - z).abs();
        z = next;
        if step < tols.contraction_step {
            converged = true;
            break;
        }
    }
    if !converged {
        return Err(OrbitError::ConvergenceFailure {
            code: word.to_vec(),
            reason: "contraction sweeps did not settle".into(),
        });
    }
    // Final sweep, keeping the intermediate branch values: these are the
    // orbit points in dynamical order.
    let mut vals = vec![0.0; n];
    let mut t = z;
    for i in (0..n).rev() {
        t = map
            .lift_inverse(t + offsets[i], tols)
            .map_err(|e| OrbitError::ConvergenceFailure {
                code: word.to_vec(),
                reason: e.to_string(),
            })?;
        vals[i] = t;
    }
    let mut points: Vec<f64> = vals.iter().map(|&v| wrap_unit(v)).collect();
    // Terminal Newton polish on the composed lift equation
    // T~^n(x) = x + M_j, seeded within ~1e-15 of the root; this tightens the
    // contraction tail to the last ulp (and lands exactly on representable
    // roots such as dyadic fixed points).
    let degree = f64::from(map.degree());
    for (j, p) in points.iter_mut().enumerate() {
        let mut m_j = 0.0f64;
        for i in 0..n {
            m_j = m_j * degree + offsets[(j + i) % n];
        }
        let composed = |x: f64| -> (f64, f64) {
            let mut z = x;
            let mut dz = 1.0;
            for _ in 0..n {
                dz *= map.deriv(z);
                z = map.lift(z);
            }
            (z, dz)
        };
        let mut x = *p;
        let mut best = x;
        let (mut val, mut dval) = composed(x);
        let mut best_phi = (val - x - m_j).abs();
        for _ in 0..3 {
            let phi = val - x - m_j;
            let next = x - phi / (dval - 1.0);
            if (next - x).abs() > 1e-10 {
                break;
            }
            x = next;
            let (v, d) = composed(x);
            val = v;
            dval = d;
            let p_new = (val - x - m_j).abs();
            if p_new < best_phi {
                best_phi = p_new;
                best = x;
            } else {
                break;
            }
        }
        *p = wrap_unit(best);
    }
    for i in 0..n {
        let img = map.image(points[i]);
        let next = points[(i + 1) % n];
        let res = circle_distance(img, next);
        if res > tols.orbit_residual {
            return Err(OrbitError::ConvergenceFailure {
                code: word.to_vec(),
                reason: format!("orbit residual {res} above {}", tols.orbit_residual),
            });
        }
    }
    Ok(PeriodicOrbit {
        points,
        period: n,
        code: word.to_vec(),
    })
}

/// Enumerate all periodic orbits of least period `<= max_period`.
pub fn enumerate_periodic_orbits(
    map: &ExpandingMap,
    max_period: usize,
    tols: &Tolerances,
) -> Result<OrbitCatalog, OrbitError> {
    let degree = map.degree();
    if max_period == 0 || degree > 128 {
        return Err(OrbitError::BudgetExceeded {
            max_period,
            budget: WORD_BUDGET,
        });
    }
    let words_at_max = (degree as u128).checked_pow(max_period as u32);
    match words_at_max {
        Some(w) if w <= WORD_BUDGET => {}
        _ => {
            return Err(OrbitError::BudgetExceeded {
                max_period,
                budget: WORD_BUDGET,
            })
        }
    }
    let mut words = lyndon_words(degree as u8, max_period);
    // The length-1 all-(degree-1) word codes the same circle point as the
    // all-zeros word.
    words.retain(|w| !(w.len() == 1 && w[0] == degree as u8 - 1));

    let located: Result<Vec<PeriodicOrbit>, OrbitError> = words
        .par_iter()
        .map(|w| locate_orbit(map, w, tols))
        .collect();
    let located = located?;

    let mut entries: Vec<CatalogEntry> = located
        .into_iter()
        .map(|orbit| {
            let lyap_avg = lyapunov_average(map, &orbit);
            CatalogEntry {
                orbit,
                gap: 0.0, // filled below once the profile is known
                lyap_avg,
            }
        })
        .collect();
    let profile = map.expansion_profile(4096)?;
    for e in &mut entries {
        e.gap = orbit_gap(&profile, &e.orbit);
    }
    entries.sort_by(|a, b| {
        a.lyap_avg
            .total_cmp(&b.lyap_avg)
            .then(a.orbit.period.cmp(&b.orbit.period))
            .then(a.orbit.points[0].total_cmp(&b.orbit.points[0]))
    });
    Ok(OrbitCatalog {
        map_id: map.map_id(),
        max_period,
        orbits: entries,
    })
}

/// Gap `G(Γ)`: minimal inner distance, with the fixed-point convention
/// `G = 1/(20 max DT)`.
pub fn orbit_gap(profile: &ExpansionProfile, orbit: &PeriodicOrbit) -> f64 {
    if orbit.period == 1 {
        1.0 / (20.0 * profile.max_deriv)
    } else {
        orbit.min_pairwise_distance()
    }
}

/// Orbit average of `log DT`, i.e. the Lyapunov exponent of `δ_Γ`.
pub fn lyapunov_average(map: &ExpandingMap, orbit: &PeriodicOrbit) -> f64 {
    let s: f64 = orbit.points.iter().map(|&p| map.log_deriv(p)).sum();
    s / orbit.period as f64
}

/// First time `i <= horizon` with `d(T^i z, Γ) >= G(Γ) / (2 max DT)`, or
/// `None` if the orbit of `z` stays below the threshold for the whole
/// horizon (numerically indistinguishable from `z ∈ Γ`).
pub fn escape_time(
    map: &ExpandingMap,
    profile: &ExpansionProfile,
    orbit: &PeriodicOrbit,
    z: f64,
    horizon: usize,
) -> Option<usize> {
    let threshold = orbit_gap(profile, orbit) / (2.0 * profile.max_deriv);
    let mut x = wrap_unit(z);
    for i in 0..=horizon {
        if orbit.distance_to(x) >= threshold {
            return Some(i);
        }
        x = map.image(x);
    }
    None
}

/// Result of the large-gap orbit search.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LargeGapSelection {
    pub orbit: PeriodicOrbit,
    pub gap: f64,
    /// `Σ_{x∈Γ} d(x, E)`.
    pub dist_sum: f64,
    /// `gap / dist_sum` (infinite when the orbit lies inside `E`).
    pub ratio: f64,
    /// Worst defect of `E` under one forward step; a warning above
    /// `Tolerances::e_invariance`, not an error.
    pub e_invariance_defect: f64,
}

/// Search the catalog for the smallest-period orbit with
/// `G(Γ) > C · Σ_{x∈Γ} d(x, E)`; ties broken by the largest ratio.
pub fn select_large_gap_orbit(
    map: &ExpandingMap,
    catalog: &OrbitCatalog,
    e_set: &[f64],
    c: f64,
    tols: &Tolerances,
) -> Result<LargeGapSelection, OrbitError> {
    if e_set.is_empty() {
        return Err(OrbitError::EmptyTargetSet);
    }
    let e_invariance_defect = e_set
        .iter()
        .map(|&e| distance_to_set(map.image(e), e_set))
        .fold(0.0, f64::max);
    let _ = tols; // defect is reported, not enforced

    let mut best: Option<LargeGapSelection> = None;
    for period in 1..=catalog.max_period {
        for entry in catalog.orbits.iter().filter(|e| e.orbit.period == period) {
            let dist_sum: f64 = entry
                .orbit
                .points
                .iter()
                .map(|&p| distance_to_set(p, e_set))
                .sum();
            if entry.gap > c * dist_sum {
                let ratio = if dist_sum == 0.0 {
                    f64::INFINITY
                } else {
                    entry.gap / dist_sum
                };
                let better = match &best {
                    None => true,
                    Some(b) => {
                        ratio > b.ratio
                            || (ratio == b.ratio
                                && entry.orbit.points[0] < b.orbit.points[0])
                    }
                };
                if better {
                    best = Some(LargeGapSelection {
                        orbit: entry.orbit.clone(),
                        gap: entry.gap,
                        dist_sum,
                        ratio,
                        e_invariance_defect,
                    });
                }
            }
        }
        if let Some(found) = best {
            return Ok(found);
        }
    }
    Err(OrbitError::NotFoundWithinBudget {
        max_period: catalog.max_period,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::circle_map::TrigLift;

    fn tols() -> Tolerances {
        Tolerances::default()
    }

    fn doubling() -> ExpandingMap {
        ExpandingMap::new(TrigLift::linear(2))
    }

    fn sine_map() -> ExpandingMap {
        ExpandingMap::from_coeffs(2, vec![0.1], vec![]).unwrap()
    }

    #[test]
    fn lyndon_words_degree_two() {
        let words = lyndon_words(2, 3);
        assert_eq!(
            words,
            vec![
                vec![0],
                vec![0, 0, 1],
                vec![0, 1],
                vec![0, 1, 1],
                vec![1]
            ]
        );
    }

    #[test]
    fn doubling_orbits_up_to_period_three() {
        let cat = enumerate_periodic_orbits(&doubling(), 3, &tols()).unwrap();
        assert_eq!(cat.orbits.len(), 4);
        let find = |code: &[u8]| {
            cat.orbits
                .iter()
                .find(|e| e.orbit.code == code)
                .unwrap_or_else(|| panic!("missing code {code:?}"))
        };
        let fixed = find(&[0]);
        assert!(fixed.orbit.points[0].abs() < 1e-12);
        let two = find(&[0, 1]);
        assert!((two.orbit.points[0] - 1.0 / 3.0).abs() < 1e-12);
        assert!((two.orbit.points[1] - 2.0 / 3.0).abs() < 1e-12);
        let three_a = find(&[0, 0, 1]);
        for (p, expect) in three_a.orbit.points.iter().zip([1.0 / 7.0, 2.0 / 7.0, 4.0 / 7.0]) {
            assert!((p - expect).abs() < 1e-12);
        }
        let three_b = find(&[0, 1, 1]);
        for (p, expect) in three_b.orbit.points.iter().zip([3.0 / 7.0, 6.0 / 7.0, 5.0 / 7.0]) {
            assert!((p - expect).abs() < 1e-12);
        }
    }

    #[test]
    fn doubling_period_point_counts() {
        let cat = enumerate_periodic_orbits(&doubling(), 3, &tols()).unwrap();
        for n in 1..=3usize {
            assert_eq!(cat.period_point_count(n), (1u64 << n) - 1);
        }
    }

    #[test]
    fn sine_map_counts_match_doubling() {
        let cat_d = enumerate_periodic_orbits(&doubling(), 8, &tols()).unwrap();
        let cat_s = enumerate_periodic_orbits(&sine_map(), 8, &tols()).unwrap();
        assert_eq!(cat_d.orbits.len(), cat_s.orbits.len());
        for n in 1..=8usize {
            assert_eq!(cat_d.period_point_count(n), cat_s.period_point_count(n));
        }
    }

    #[test]
    fn budget_is_enforced() {
        let err = enumerate_periodic_orbits(&doubling(), 25, &tols()).unwrap_err();
        assert!(matches!(err, OrbitError::BudgetExceeded { .. }));
    }

    #[test]
    fn gap_examples() {
        let map = doubling();
        let profile = map.expansion_profile(1024).unwrap();
        let cat = enumerate_periodic_orbits(&map, 3, &tols()).unwrap();
        let by_code = |code: &[u8]| {
            cat.orbits
                .iter()
                .find(|e| e.orbit.code == code)
                .unwrap()
        };
        assert!((orbit_gap(&profile, &by_code(&[0]).orbit) - 0.025).abs() < 1e-15);
        assert!((orbit_gap(&profile, &by_code(&[0, 1]).orbit) - 1.0 / 3.0).abs() < 1e-12);
        assert!((orbit_gap(&profile, &by_code(&[0, 0, 1]).orbit) - 1.0 / 7.0).abs() < 1e-12);
    }

    #[test]
    fn lyapunov_examples() {
        let map = doubling();
        let cat = enumerate_periodic_orbits(&map, 5, &tols()).unwrap();
        for e in &cat.orbits {
            assert!((e.lyap_avg - 2.0f64.ln()).abs() < 1e-12);
        }
        // Fixed point of the sine map at 0: DT(0) = 2 + 0.2π.
        let m = sine_map();
        let cat = enumerate_periodic_orbits(&m, 1, &tols()).unwrap();
        let fixed = &cat.orbits[0];
        assert!(fixed.orbit.points[0].abs() < 1e-12);
        let expected = (2.0 + 0.2 * std::f64::consts::PI).ln();
        assert!((fixed.lyap_avg - expected).abs() < 1e-12);
        // Every orbit average is bounded by the derivative range.
        let profile = m.expansion_profile(4096).unwrap();
        let cat = enumerate_periodic_orbits(&m, 8, &tols()).unwrap();
        for e in &cat.orbits {
            assert!(e.lyap_avg >= profile.min_deriv.ln() - 1e-12);
            assert!(e.lyap_avg <= profile.max_deriv.ln() + 1e-12);
        }
    }

    #[test]
    fn escape_time_examples() {
        let map = doubling();
        let profile = map.expansion_profile(1024).unwrap();
        let cat = enumerate_periodic_orbits(&map, 2, &tols()).unwrap();
        let fixed = cat
            .orbits
            .iter()
            .find(|e| e.orbit.period == 1)
            .unwrap()
            .orbit
            .clone();
        // Threshold 0.025/4 = 0.00625; orbit of 0.001 doubles each step.
        assert_eq!(escape_time(&map, &profile, &fixed, 0.001, 100), Some(3));
        // Direct-iteration oracle.
        let mut x = 0.001;
        let mut oracle = None;
        for i in 0..=100usize {
            if fixed.distance_to(x) >= 0.00625 {
                oracle = Some(i);
                break;
            }
            x = map.image(x);
        }
        assert_eq!(oracle, Some(3));
        // A point of the orbit itself never escapes.
        assert_eq!(escape_time(&map, &profile, &fixed, 0.0, 1000), None);

        let two = cat
            .orbits
            .iter()
            .find(|e| e.orbit.period == 2)
            .unwrap()
            .orbit
            .clone();
        let t = escape_time(&map, &profile, &two, 1.0 / 3.0 + 1e-9, 40);
        assert!(t.is_some());
        assert!(t.unwrap() >= 1);
    }

    #[test]
    fn large_gap_selection_examples() {
        let map = doubling();
        let cat = enumerate_periodic_orbits(&map, 3, &tols()).unwrap();
        let sel = select_large_gap_orbit(&map, &cat, &[0.0], 100.0, &tols()).unwrap();
        assert_eq!(sel.orbit.period, 1);
        assert!(sel.dist_sum < 1e-12);
        assert!((sel.gap - 0.025).abs() < 1e-15);

        let e = [1.0 / 3.0, 2.0 / 3.0];
        let sel = select_large_gap_orbit(&map, &cat, &e, 10.0, &tols()).unwrap();
        // The fixed point {0} has dist_sum 1/3 and gap 0.025 < 10/3, so the
        // period-2 orbit inside E wins.
        assert_eq!(sel.orbit.period, 2);
        assert!(sel.dist_sum < 1e-12);
        assert!((sel.gap - 1.0 / 3.0).abs() < 1e-12);

        let err = select_large_gap_orbit(&map, &cat, &[], 1.0, &tols()).unwrap_err();
        assert!(matches!(err, OrbitError::EmptyTargetSet));
    }

    #[test]
    fn selection_from_birkhoff_segment() {
        // E = 2000-point orbit segment of the best Birkhoff-minimizing start
        // among 1024 grid points.
        let map = sine_map();
        let horizon = 2000usize;
        let mut best_start = 0.0;
        let mut best_sum = f64::INFINITY;
        for j in 0..1024 {
            let mut x = j as f64 / 1024.0;
            let mut sum = 0.0;
            for _ in 0..horizon {
                sum += map.log_deriv(x);
                x = map.image(x);
            }
            if sum < best_sum {
                best_sum = sum;
                best_start = j as f64 / 1024.0;
            }
        }
        let mut e = Vec::with_capacity(horizon);
        let mut x = best_start;
        for _ in 0..horizon {
            e.push(x);
            x = map.image(x);
        }
        e.sort_by(f64::total_cmp);

        let cat = enumerate_periodic_orbits(&map, 10, &tols()).unwrap();
        let sel = select_large_gap_orbit(&map, &cat, &e, 10.0, &tols()).unwrap();
        assert!(sel.orbit.period <= 10);
        assert!(sel.ratio > 10.0, "ratio {}", sel.ratio);
        assert!(sel.e_invariance_defect < 1e-3);
    }

    #[test]
    fn csv_has_expected_columns() {
        let map = doubling();
        let cat = enumerate_periodic_orbits(&map, 2, &tols()).unwrap();
        let csv = cat.to_csv();
        let mut lines = csv.lines();
        assert_eq!(lines.next().unwrap(), "period,code,points,gap,lyap_avg");
        assert_eq!(lines.count(), cat.orbits.len());
    }
}
