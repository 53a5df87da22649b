//! Expanding self-maps of the circle `T = R/Z`.
//!
//! A map is a trigonometric lift plus a stack of compactly supported bump
//! layers:
//!
//! ```text
//! T~(x) = degree·x + Σ_k (a_k sin(2πkx) + b_k cos(2πkx)) + Σ_layers h(x)
//! ```
//!
//! Both families have closed-form first and second derivatives, so every
//! operation downstream (orbit location, sub-action solving, perturbation
//! bounds) works with exact derivative data instead of finite differences.
//! The lift is strictly increasing (`DT > 1` for accepted maps), which makes
//! every inverse branch a Newton solve on a monotone function.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::tol::Tolerances;

/// Errors from map construction and evaluation.
#[derive(Debug, Error)]
pub enum MapError {
    /// The map fails `min DT > 1` and is outside scope.
    #[error("map is not expanding: min DT = {min_deriv}")]
    NotExpanding { min_deriv: f64 },
    /// A branch solve exceeded its iteration cap.
    #[error("inverse-branch Newton failed to converge: {0}")]
    ConvergenceFailure(String),
    /// Structurally invalid map description.
    #[error("invalid map: {0}")]
    InvalidMap(String),
}

/// Wrap a real number into `[0, 1)`.
pub fn wrap_unit(x: f64) -> f64 {
    let y = x - x.floor();
    if y >= 1.0 {
        0.0
    } else {
        y
    }
}

/// Representative of `x - y` in `(-1/2, 1/2]`.
pub fn signed_circle_diff(x: f64, y: f64) -> f64 {
    let mut d = (x - y) % 1.0;
    if d > 0.5 {
        d -= 1.0;
    } else if d <= -0.5 {
        d += 1.0;
    }
    d
}

/// Circle metric `d(x, y) = min(|x-y|, 1-|x-y|)`, valued in `[0, 1/2]`.
pub fn circle_distance(x: f64, y: f64) -> f64 {
    signed_circle_diff(x, y).abs()
}

/// Distance from `x` to a finite point set.
pub fn distance_to_set(x: f64, set: &[f64]) -> f64 {
    set.iter()
        .map(|&p| circle_distance(x, p))
        .fold(f64::INFINITY, f64::min)
}

const TWO_PI: f64 = std::f64::consts::TAU;

/// Lift of a degree-`d` circle map by a trigonometric polynomial:
/// `T~(x) = d·x + Σ_k (a_k sin(2πkx) + b_k cos(2πkx))`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrigLift {
    pub degree: u32,
    #[serde(rename = "sin")]
    pub sin_coeffs: Vec<f64>,
    #[serde(rename = "cos")]
    pub cos_coeffs: Vec<f64>,
}

impl TrigLift {
    pub fn new(degree: u32, sin_coeffs: Vec<f64>, cos_coeffs: Vec<f64>) -> Result<Self, MapError> {
        if degree < 2 {
            return Err(MapError::InvalidMap(format!(
                "degree must be >= 2, got {degree}"
            )));
        }
        if sin_coeffs.iter().chain(&cos_coeffs).any(|c| !c.is_finite()) {
            return Err(MapError::InvalidMap("non-finite coefficient".into()));
        }
        Ok(TrigLift {
            degree,
            sin_coeffs,
            cos_coeffs,
        })
    }

    /// The degree-`d` linear map with no trigonometric part (`x ↦ d·x`).
    pub fn linear(degree: u32) -> Self {
        TrigLift {
            degree,
            sin_coeffs: Vec::new(),
            cos_coeffs: Vec::new(),
        }
    }

    pub fn lift(&self, x: f64) -> f64 {
        let mut v = f64::from(self.degree) * x;
        for (i, &a) in self.sin_coeffs.iter().enumerate() {
            v += a * (TWO_PI * (i + 1) as f64 * x).sin();
        }
        for (i, &b) in self.cos_coeffs.iter().enumerate() {
            v += b * (TWO_PI * (i + 1) as f64 * x).cos();
        }
        v
    }

    pub fn deriv(&self, x: f64) -> f64 {
        let mut v = f64::from(self.degree);
        for (i, &a) in self.sin_coeffs.iter().enumerate() {
            let w = TWO_PI * (i + 1) as f64;
            v += a * w * (w * x).cos();
        }
        for (i, &b) in self.cos_coeffs.iter().enumerate() {
            let w = TWO_PI * (i + 1) as f64;
            v -= b * w * (w * x).sin();
        }
        v
    }

    pub fn second_deriv(&self, x: f64) -> f64 {
        let mut v = 0.0;
        for (i, &a) in self.sin_coeffs.iter().enumerate() {
            let w = TWO_PI * (i + 1) as f64;
            v -= a * w * w * (w * x).sin();
        }
        for (i, &b) in self.cos_coeffs.iter().enumerate() {
            let w = TWO_PI * (i + 1) as f64;
            v -= b * w * w * (w * x).cos();
        }
        v
    }

    /// Upper bound for the periodic part `|T~(x) - d·x|`.
    fn periodic_sup_bound(&self) -> f64 {
        self.sin_coeffs
            .iter()
            .chain(&self.cos_coeffs)
            .map(|c| c.abs())
            .sum()
    }
}

/// Shape of a bump layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BumpKind {
    /// The raw piecewise-cubic bump (`C^1`, Lipschitz derivative).
    PiecewiseCubic,
    /// Moving average of the raw bump over `[-δ, δ]` (`C^2`).
    Mollified,
}

/// One stacked bump layer: identical cubic bumps of half-width `w` centered
/// at the points of a periodic orbit, each scaled by its own `γ_i`:
///
/// ```text
/// h(x) = -s·γ_i·(x-p_i)(p_i+w-x)²   on (p_i, p_i+w),
/// h(x) = -s·γ_i·(x-p_i)(x-p_i+w)²   on (p_i-w, p_i),
/// h    = 0                          elsewhere,
/// ```
///
/// with amplitude scale `s`. Value and first derivative vanish at the
/// support endpoints; the derivative at the center is `-s·γ_i·w²`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BumpLayer {
    pub kind: BumpKind,
    pub centers: Vec<f64>,
    pub half_width: f64,
    pub gammas: Vec<f64>,
    pub amplitude_scale: f64,
    /// Mollification radius δ; 0 for the raw bump.
    pub mollify_delta: f64,
}

/// Raw cubic data of one bump at local coordinate `u = x - p_i`.
struct RawBump {
    value: f64,
    deriv: f64,
    /// One-sided second derivative; at a knot, the Lipschitz bound of `Dh`.
    second: f64,
}

impl BumpLayer {
    pub fn new(
        centers: Vec<f64>,
        half_width: f64,
        gammas: Vec<f64>,
        amplitude_scale: f64,
    ) -> Result<Self, MapError> {
        if centers.len() != gammas.len() {
            return Err(MapError::InvalidMap(
                "bump layer needs one gamma per center".into(),
            ));
        }
        if half_width.is_nan() || half_width <= 0.0 || half_width >= 0.25 {
            return Err(MapError::InvalidMap(format!(
                "bump half-width must lie in (0, 0.25), got {half_width}"
            )));
        }
        let layer = BumpLayer {
            kind: BumpKind::PiecewiseCubic,
            centers,
            half_width,
            gammas,
            amplitude_scale,
            mollify_delta: 0.0,
        };
        if !layer.supports_disjoint() {
            return Err(MapError::InvalidMap(
                "bump supports overlap on the circle".into(),
            ));
        }
        Ok(layer)
    }

    /// Supports `[p_i - w, p_i + w]` are pairwise disjoint on the circle.
    pub fn supports_disjoint(&self) -> bool {
        let mut cs: Vec<f64> = self.centers.iter().map(|&c| wrap_unit(c)).collect();
        cs.sort_by(f64::total_cmp);
        let n = cs.len();
        if n <= 1 {
            return true;
        }
        for i in 0..n {
            let next = cs[(i + 1) % n];
            let gap = if i + 1 == n {
                next + 1.0 - cs[i]
            } else {
                next - cs[i]
            };
            if gap <= 2.0 * self.half_width {
                return false;
            }
        }
        true
    }

    fn raw_at(&self, u: f64, gamma: f64) -> RawBump {
        let w = self.half_width;
        let c = self.amplitude_scale * gamma;
        if u == 0.0 {
            // Knot at the center: Dh is continuous, D²h jumps by 8cw.
            return RawBump {
                value: 0.0,
                deriv: -c * w * w,
                second: 4.0 * c * w,
            };
        }
        if u >= w || u <= -w {
            let second = if u == w || u == -w { 2.0 * c * w } else { 0.0 };
            return RawBump {
                value: 0.0,
                deriv: 0.0,
                second,
            };
        }
        if u > 0.0 {
            let r = w - u;
            RawBump {
                value: -c * u * r * r,
                deriv: -c * (r * r - 2.0 * u * r),
                second: -c * (6.0 * u - 4.0 * w),
            }
        } else {
            let r = u + w;
            RawBump {
                value: -c * u * r * r,
                deriv: -c * (r * r + 2.0 * u * r),
                second: -c * (6.0 * u + 4.0 * w),
            }
        }
    }

    /// Raw piecewise-cubic data at circle point `x` (ignores mollification).
    fn raw(&self, x: f64) -> RawBump {
        for (i, &p) in self.centers.iter().enumerate() {
            let u = signed_circle_diff(x, p);
            if u.abs() <= self.half_width {
                return self.raw_at(u, self.gammas[i]);
            }
        }
        RawBump {
            value: 0.0,
            deriv: 0.0,
            second: 0.0,
        }
    }

    /// `∫_a^b h_raw(t) dt` for a short interval (`b - a < 1/2`), in closed form.
    pub fn integral_over(&self, a: f64, b: f64) -> f64 {
        debug_assert!(b >= a && b - a < 0.5);
        let w = self.half_width;
        let mid = 0.5 * (a + b);
        let mut total = 0.0;
        for (i, &p) in self.centers.iter().enumerate() {
            // Representative of the center nearest the interval midpoint.
            let off = mid - signed_circle_diff(mid, p);
            let lo = (a - off).max(-w);
            let hi = (b - off).min(w);
            if lo >= hi {
                continue;
            }
            let c = self.amplitude_scale * self.gammas[i];
            // Antiderivatives of the two cubic pieces.
            let right = |u: f64| -c * (u.powi(4) / 4.0 - 2.0 * w * u.powi(3) / 3.0 + w * w * u * u / 2.0);
            let left = |u: f64| -c * (u.powi(4) / 4.0 + 2.0 * w * u.powi(3) / 3.0 + w * w * u * u / 2.0);
            if lo < 0.0 {
                let t = hi.min(0.0);
                total += left(t) - left(lo);
            }
            if hi > 0.0 {
                let s = lo.max(0.0);
                total += right(hi) - right(s);
            }
        }
        total
    }

    /// Layer value at a circle point.
    pub fn value(&self, x: f64) -> f64 {
        match self.kind {
            BumpKind::PiecewiseCubic => self.raw(x).value,
            BumpKind::Mollified => {
                let d = self.mollify_delta;
                self.integral_over(x - d, x + d) / (2.0 * d)
            }
        }
    }

    /// Layer derivative at a circle point.
    pub fn deriv(&self, x: f64) -> f64 {
        match self.kind {
            BumpKind::PiecewiseCubic => self.raw(x).deriv,
            BumpKind::Mollified => {
                let d = self.mollify_delta;
                (self.raw(wrap_unit(x + d)).value - self.raw(wrap_unit(x - d)).value) / (2.0 * d)
            }
        }
    }

    /// One-sided second derivative (Lipschitz bound of `Dh` at knots).
    pub fn second_deriv(&self, x: f64) -> f64 {
        match self.kind {
            BumpKind::PiecewiseCubic => self.raw(x).second,
            BumpKind::Mollified => {
                let d = self.mollify_delta;
                (self.raw(wrap_unit(x + d)).deriv - self.raw(wrap_unit(x - d)).deriv) / (2.0 * d)
            }
        }
    }

    fn max_gamma(&self) -> f64 {
        self.gammas.iter().cloned().fold(0.0, f64::max)
    }

    /// Analytic `sup |h|`: the cubic peaks at `u = w/3` with `|h| = 4cw³/27`.
    pub fn sup_value_bound(&self) -> f64 {
        let w = self.half_width;
        self.amplitude_scale * self.max_gamma() * 4.0 * w.powi(3) / 27.0
    }

    /// Analytic `sup |Dh| = c·w²` (attained at the centers).
    pub fn sup_deriv_bound(&self) -> f64 {
        let w = self.half_width;
        self.amplitude_scale * self.max_gamma() * w * w
    }

    /// Analytic `Lip(Dh) = sup |D²h| = 4cw` (attained at the centers).
    pub fn lip_deriv_bound(&self) -> f64 {
        4.0 * self.amplitude_scale * self.max_gamma() * self.half_width
    }
}

/// Exact evaluation data of a map at one point.
#[derive(Debug, Clone, Copy)]
pub struct MapEval {
    /// `T(x)` on the circle.
    pub image: f64,
    /// Lift value `T~(x)` before reduction mod 1.
    pub lift_value: f64,
    /// `DT(x)`.
    pub deriv: f64,
    /// `D²T(x)`; one-sided at bump knots, Lipschitz bound exactly at knots.
    pub second_deriv: f64,
}

/// Derivative statistics over a grid, polished at the extrema.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExpansionProfile {
    pub min_deriv: f64,
    pub max_deriv: f64,
    /// Lipschitz constant estimate for `DT`.
    pub lip_deriv: f64,
    pub grid_n: usize,
}

/// Expanding circle map: trigonometric base lift plus bump layers.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExpandingMap {
    #[serde(flatten)]
    pub base: TrigLift,
    #[serde(default)]
    pub layers: Vec<BumpLayer>,
}

impl ExpandingMap {
    pub fn new(base: TrigLift) -> Self {
        ExpandingMap {
            base,
            layers: Vec::new(),
        }
    }

    /// The doubling-family map `x ↦ d·x + Σ a_k sin(2πkx) mod 1`.
    pub fn from_coeffs(degree: u32, sin: Vec<f64>, cos: Vec<f64>) -> Result<Self, MapError> {
        Ok(ExpandingMap::new(TrigLift::new(degree, sin, cos)?))
    }

    pub fn degree(&self) -> u32 {
        self.base.degree
    }

    /// Copy of the map with one more bump layer stacked on top.
    pub fn with_layer(&self, layer: BumpLayer) -> Self {
        let mut m = self.clone();
        m.layers.push(layer);
        m
    }

    /// Lift value at any real `x` (periodic part evaluated mod 1).
    pub fn lift(&self, x: f64) -> f64 {
        let mut v = self.base.lift(x);
        if !self.layers.is_empty() {
            let xw = wrap_unit(x);
            // base.lift already contains degree·x; layers are periodic.
            for layer in &self.layers {
                v += layer.value(xw);
            }
        }
        v
    }

    pub fn deriv(&self, x: f64) -> f64 {
        let xw = wrap_unit(x);
        let mut v = self.base.deriv(xw);
        for layer in &self.layers {
            v += layer.deriv(xw);
        }
        v
    }

    pub fn second_deriv(&self, x: f64) -> f64 {
        let xw = wrap_unit(x);
        let mut v = self.base.second_deriv(xw);
        for layer in &self.layers {
            v += layer.second_deriv(xw);
        }
        v
    }

    pub fn log_deriv(&self, x: f64) -> f64 {
        self.deriv(x).ln()
    }

    /// Image on the circle.
    pub fn image(&self, x: f64) -> f64 {
        wrap_unit(self.lift(x))
    }

    /// Full evaluation: image, lift value, `DT`, `D²T`-or-bound.
    pub fn evaluate(&self, x: f64) -> MapEval {
        let x = wrap_unit(x);
        let lift_value = self.lift(x);
        MapEval {
            image: wrap_unit(lift_value),
            lift_value,
            deriv: self.deriv(x),
            second_deriv: self.second_deriv(x),
        }
    }

    fn periodic_sup_bound(&self) -> f64 {
        self.base.periodic_sup_bound()
            + self
                .layers
                .iter()
                .map(BumpLayer::sup_value_bound)
                .sum::<f64>()
    }

    /// Solve `lift(x) = target` for the unique real root.
    ///
    /// The lift is strictly increasing, so a Newton iteration inside the
    /// bracket `[(t-B)/d, (t+B)/d]` (B bounds the periodic part) always
    /// converges; after `newton_bisect_after` steps it falls back to
    /// bisection.
    pub fn lift_inverse(&self, target: f64, tols: &Tolerances) -> Result<f64, MapError> {
        let d = f64::from(self.degree());
        let b = self.periodic_sup_bound() + 1e-9;
        let mut lo = (target - b) / d;
        let mut hi = (target + b) / d;
        let mut x = 0.5 * (lo + hi);
        for it in 0..tols.newton_max_iter {
            let g = self.lift(x) - target;
            if g.abs() < tols.preimage_residual {
                // One more Newton step: quadratic convergence puts the root
                // at ulp level, so downstream contractions see no wobble.
                return Ok(x - g / self.deriv(x));
            }
            if g > 0.0 {
                hi = x;
            } else {
                lo = x;
            }
            let step = g / self.deriv(x);
            let newton = x - step;
            x = if it < tols.newton_bisect_after && newton > lo && newton < hi {
                newton
            } else {
                0.5 * (lo + hi)
            };
        }
        Err(MapError::ConvergenceFailure(format!(
            "lift_inverse(target={target}) exceeded {} iterations",
            tols.newton_max_iter
        )))
    }

    /// Integer anchor of the branch labeling: the lift value at the smallest
    /// preimage of 0 in `[0, 1)`. Near-integer `lift(0)` snaps exactly.
    pub fn branch_anchor(&self) -> i64 {
        let z = self.lift(0.0);
        if (z - z.round()).abs() < 1e-12 {
            z.round() as i64
        } else {
            z.ceil() as i64
        }
    }

    /// Inverse branch `j ∈ {0, .., degree-1}` of a circle point `y`:
    /// the preimage in the arc cut at the sorted preimages of 0.
    pub fn branch_preimage(&self, j: u32, y: f64, tols: &Tolerances) -> Result<f64, MapError> {
        let target = y + (self.branch_anchor() + i64::from(j)) as f64;
        self.lift_inverse(target, tols)
    }

    /// All `degree` preimages of `y`, sorted ascending in `[0, 1)`.
    pub fn preimages(&self, y: f64, tols: &Tolerances) -> Result<Vec<f64>, MapError> {
        let y = wrap_unit(y);
        let l0 = self.lift(0.0);
        let z = l0 - y;
        let m_min = if (z - z.round()).abs() < 1e-12 {
            z.round()
        } else {
            z.ceil()
        };
        let mut out = Vec::with_capacity(self.degree() as usize);
        for i in 0..self.degree() {
            let target = y + m_min + f64::from(i);
            let mut x = self.lift_inverse(target, tols)?;
            if x < 0.0 {
                // Residual-level undershoot of the x = 0 root.
                x = 0.0;
            }
            out.push(x);
        }
        Ok(out)
    }

    /// Scan `DT` on a grid, polish the extrema by one parabolic step, and
    /// bound `Lip(DT)`. Rejects maps with `min DT <= 1`.
    pub fn expansion_profile(&self, grid_n: usize) -> Result<ExpansionProfile, MapError> {
        if grid_n < 1024 {
            return Err(MapError::InvalidMap(format!(
                "expansion profile needs grid_n >= 1024, got {grid_n}"
            )));
        }
        let n = grid_n;
        let mut derivs = vec![0.0; n];
        let mut max_abs_second = 0.0f64;
        for (j, dv) in derivs.iter_mut().enumerate() {
            let x = j as f64 / n as f64;
            *dv = self.deriv(x);
            max_abs_second = max_abs_second.max(self.second_deriv(x).abs());
        }
        let (mut arg_min, mut arg_max) = (0usize, 0usize);
        for j in 1..n {
            if derivs[j] < derivs[arg_min] {
                arg_min = j;
            }
            if derivs[j] > derivs[arg_max] {
                arg_max = j;
            }
        }
        let polish = |j: usize| -> f64 {
            let h = 1.0 / n as f64;
            let x = j as f64 * h;
            let dm = derivs[(j + n - 1) % n];
            let d0 = derivs[j];
            let dp = derivs[(j + 1) % n];
            let denom = dm - 2.0 * d0 + dp;
            if denom.abs() < 1e-300 {
                return d0;
            }
            let xv = x + 0.5 * h * (dm - dp) / denom;
            self.deriv(xv)
        };
        let min_deriv = derivs[arg_min].min(polish(arg_min));
        let max_deriv = derivs[arg_max].max(polish(arg_max));
        // Knot bounds of the bump layers may fall between grid points.
        for layer in &self.layers {
            for &p in &layer.centers {
                let cand = self.base.second_deriv(p).abs() + layer.lip_deriv_bound();
                max_abs_second = max_abs_second.max(cand);
            }
        }
        if min_deriv <= 1.0 {
            return Err(MapError::NotExpanding { min_deriv });
        }
        Ok(ExpansionProfile {
            min_deriv,
            max_deriv,
            lip_deriv: max_abs_second,
            grid_n: n,
        })
    }

    /// Content hash of the serialized map description.
    pub fn map_id(&self) -> String {
        let json = serde_json::to_string(self).expect("map serialization is infallible");
        let digest = Sha256::digest(json.as_bytes());
        let mut s = String::with_capacity(64);
        for b in digest {
            s.push_str(&format!("{b:02x}"));
        }
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn tols() -> Tolerances {
        Tolerances::default()
    }

    fn doubling() -> ExpandingMap {
        ExpandingMap::new(TrigLift::linear(2))
    }

    fn sine_map(a: f64) -> ExpandingMap {
        ExpandingMap::from_coeffs(2, vec![a], vec![]).unwrap()
    }

    #[test]
    fn doubling_evaluation() {
        let m = doubling();
        let e = m.evaluate(0.3);
        assert!((e.image - 0.6).abs() < 1e-15);
        assert!((e.deriv - 2.0).abs() < 1e-15);
        // Wrap-around case: 1.5 mod 1.
        let e = m.evaluate(0.75);
        assert!((e.image - 0.5).abs() < 1e-15);
    }

    #[test]
    fn sine_map_evaluation() {
        // T(x) = 2x + 0.1 sin(2πx) at x = 1/4: image 0.6, DT = 2 + 0.2π cos(π/2) = 2.
        let m = sine_map(0.1);
        let e = m.evaluate(0.25);
        assert!((e.image - 0.6).abs() < 1e-14);
        assert!((e.deriv - 2.0).abs() < 1e-14);
    }

    #[test]
    fn lift_periodicity() {
        let m = sine_map(0.1);
        for j in 0..97 {
            let x = j as f64 / 97.0;
            let diff = m.lift(x + 1.0) - m.lift(x) - f64::from(m.degree());
            assert!(diff.abs() < 1e-12, "periodicity defect {diff} at {x}");
        }
    }

    #[test]
    fn profile_examples() {
        let p = doubling().expansion_profile(1024).unwrap();
        assert!((p.min_deriv - 2.0).abs() < 1e-15);
        assert!((p.max_deriv - 2.0).abs() < 1e-15);
        assert_eq!(p.lip_deriv, 0.0);

        let p = sine_map(0.1).expansion_profile(4096).unwrap();
        assert!((p.min_deriv - (2.0 - 0.2 * std::f64::consts::PI)).abs() < 1e-12);
        assert!((p.max_deriv - (2.0 + 0.2 * std::f64::consts::PI)).abs() < 1e-12);

        // 2 - 0.4π ≈ 0.743 < 1: rejected.
        let err = sine_map(0.2).expansion_profile(4096).unwrap_err();
        match err {
            MapError::NotExpanding { min_deriv } => {
                assert!((min_deriv - (2.0 - 0.4 * std::f64::consts::PI)).abs() < 1e-12);
                assert!(min_deriv < 1.0);
            }
            other => panic!("expected NotExpanding, got {other:?}"),
        }
    }

    #[test]
    fn preimage_examples() {
        let m = doubling();
        let ps = m.preimages(0.5, &tols()).unwrap();
        assert_eq!(ps.len(), 2);
        assert!((ps[0] - 0.25).abs() < 1e-13 && (ps[1] - 0.75).abs() < 1e-13);
        let ps = m.preimages(0.0, &tols()).unwrap();
        assert!((ps[0] - 0.0).abs() < 1e-13 && (ps[1] - 0.5).abs() < 1e-13);

        let m = sine_map(0.1);
        let ps = m.preimages(0.6, &tols()).unwrap();
        assert_eq!(ps.len(), 2);
        assert!(ps.iter().any(|&x| (x - 0.25).abs() < 1e-12));
        for &x in &ps {
            assert!(circle_distance(m.image(x), 0.6) < 1e-12);
        }
    }

    #[test]
    fn preimage_grid_residuals() {
        let m = sine_map(0.1);
        for j in 0..10_000 {
            let y = j as f64 / 10_000.0;
            let ps = m.preimages(y, &tols()).unwrap();
            assert_eq!(ps.len(), 2);
            for &x in &ps {
                assert!(circle_distance(m.image(x), y) < 1e-12);
                assert!((0.0..1.0).contains(&x));
            }
        }
    }

    #[test]
    fn branch_anchor_of_test_family() {
        assert_eq!(doubling().branch_anchor(), 0);
        assert_eq!(sine_map(0.1).branch_anchor(), 0);
        let cos_map = ExpandingMap::from_coeffs(2, vec![], vec![0.05]).unwrap();
        assert_eq!(cos_map.branch_anchor(), 1);
    }

    #[test]
    fn circle_distance_examples() {
        assert!((circle_distance(0.1, 0.9) - 0.2).abs() < 1e-15);
        assert_eq!(circle_distance(0.25, 0.25), 0.0);
        assert!((circle_distance(0.0, 0.5) - 0.5).abs() < 1e-15);
    }

    fn test_bump() -> BumpLayer {
        BumpLayer::new(vec![0.25, 0.75], 0.01, vec![0.5, 1.0], 3.0).unwrap()
    }

    #[test]
    fn bump_vanishes_at_knots_and_outside() {
        let b = test_bump();
        for &p in &b.centers {
            assert_eq!(b.value(p), 0.0);
            assert_eq!(b.value(wrap_unit(p + b.half_width)), 0.0);
            assert_eq!(b.value(wrap_unit(p - b.half_width)), 0.0);
            assert_eq!(b.deriv(wrap_unit(p + b.half_width)), 0.0);
        }
        assert_eq!(b.value(0.5), 0.0);
        assert_eq!(b.deriv(0.5), 0.0);
    }

    #[test]
    fn bump_center_derivative() {
        let b = test_bump();
        let w = b.half_width;
        let expected = -b.amplitude_scale * b.gammas[0] * w * w;
        assert!((b.deriv(0.25) - expected).abs() < 1e-16);
        // One-sided continuity of Dh across the center knot.
        let eps = 1e-10;
        assert!((b.deriv(0.25 + eps) - expected).abs() < 1e-7 * expected.abs().max(1.0));
        assert!((b.deriv(0.25 - eps) - expected).abs() < 1e-7 * expected.abs().max(1.0));
    }

    #[test]
    fn bump_integral_matches_quadrature() {
        let b = test_bump();
        // Composite Simpson over 256 panels as an independent oracle.
        let quad = |a: f64, bb: f64| {
            let n = 256;
            let h = (bb - a) / n as f64;
            let mut s = b.raw(wrap_unit(a)).value + b.raw(wrap_unit(bb)).value;
            for i in 1..n {
                let x = a + i as f64 * h;
                s += b.raw(wrap_unit(x)).value * if i % 2 == 1 { 4.0 } else { 2.0 };
            }
            s * h / 3.0
        };
        for (a, bb) in [(0.24, 0.26), (0.249, 0.2501), (0.74, 0.7605), (0.1, 0.2)] {
            let exact = b.integral_over(a, bb);
            assert!(
                (exact - quad(a, bb)).abs() < 1e-12,
                "integral mismatch on [{a}, {bb}]"
            );
        }
    }

    #[test]
    fn map_with_layer_profile() {
        let m = doubling().with_layer(test_bump());
        let p = m.expansion_profile(4096).unwrap();
        assert!(p.min_deriv > 1.0 && p.min_deriv < 2.0);
        assert!(p.max_deriv > 2.0);
        assert!(p.lip_deriv > 0.0);
    }

    #[test]
    fn json_roundtrip() {
        let m = sine_map(0.1).with_layer(test_bump());
        let json = serde_json::to_string(&m).unwrap();
        assert!(json.contains("\"degree\":2"));
        assert!(json.contains("piecewise-cubic"));
        let back: ExpandingMap = serde_json::from_str(&json).unwrap();
        for j in 0..100 {
            let x = j as f64 / 100.0;
            assert_eq!(m.lift(x), back.lift(x));
        }
        assert_eq!(m.map_id(), back.map_id());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(1000))]

        #[test]
        fn distance_is_a_metric(x in 0.0f64..1.0, y in 0.0f64..1.0, z in 0.0f64..1.0) {
            let dxy = circle_distance(x, y);
            let dyx = circle_distance(y, x);
            prop_assert!((dxy - dyx).abs() < 1e-15);
            prop_assert!(dxy <= 0.5 + 1e-15);
            let dxz = circle_distance(x, z);
            let dzy = circle_distance(z, y);
            prop_assert!(dxy <= dxz + dzy + 1e-12);
        }

        #[test]
        fn deriv_matches_finite_differences(x in 0.0f64..1.0) {
            let m = sine_map(0.1).with_layer(test_bump());
            // Skip the bump knots where DT is only one-sided.
            for layer in &m.layers {
                for &p in &layer.centers {
                    for knot in [p, p + layer.half_width, p - layer.half_width] {
                        prop_assume!(circle_distance(x, wrap_unit(knot)) > 1e-4);
                    }
                }
            }
            let h = 1e-6;
            let fd = (m.lift(x + h) - m.lift(x - h)) / (2.0 * h);
            let an = m.deriv(x);
            prop_assert!((fd - an).abs() <= 1e-5 * an.abs().max(1.0));
        }

        #[test]
        fn preimages_hit_target(y in 0.0f64..1.0) {
            let m = sine_map(0.08);
            let ps = m.preimages(y, &Tolerances::default()).unwrap();
            prop_assert_eq!(ps.len(), 2);
            prop_assert!(ps[0] < ps[1]);
            for &x in &ps {
                prop_assert!(circle_distance(m.image(x), y) < 1e-12);
            }
        }
    }
}
