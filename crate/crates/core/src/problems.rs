//! Manufactured problems: the corner singularity `r^{π/ω} sin(θπ/ω)` on a
//! circle sector, optional smooth additions, and weighted Sobolev norms of
//! radial power functions.

use std::f64::consts::PI;

use nalgebra::Complex;
use serde::Serialize;

use crate::geometry::{gauss_legendre, PolygonDomain};
use crate::{Error, Result, Vec2};

/// Polar frame at a corner; `θ` is measured counterclockwise from
/// `edge_direction`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CornerFrame {
    pub vertex: Vec2,
    pub edge_direction: Vec2,
}

impl Default for CornerFrame {
    fn default() -> Self {
        CornerFrame {
            vertex: Vec2::zeros(),
            edge_direction: Vec2::new(1.0, 0.0),
        }
    }
}

impl CornerFrame {
    pub fn new(vertex: Vec2, edge_direction: Vec2) -> Result<Self> {
        let n = edge_direction.norm();
        if !(n > 0.0 && n.is_finite()) {
            return Err(Error::param("edge_direction", "must be a nonzero vector"));
        }
        Ok(CornerFrame {
            vertex,
            edge_direction: edge_direction / n,
        })
    }

    /// `(r, θ)` with `θ ∈ [0, 2π)`.
    pub fn polar(&self, x: Vec2) -> (f64, f64) {
        let d = x - self.vertex;
        let e = self.edge_direction;
        let local = Vec2::new(e.x * d.x + e.y * d.y, -e.y * d.x + e.x * d.y);
        let mut theta = local.y.atan2(local.x);
        if theta < 0.0 {
            theta += 2.0 * PI;
        }
        (local.norm(), theta)
    }

    /// `(r, θ)` with `θ` unwrapped toward the sector `[0, ω]`: angles in the
    /// exterior wedge closer to the first edge come out negative.
    pub fn sector_polar(&self, x: Vec2, omega: f64) -> (f64, f64) {
        let (r, theta) = self.polar(x);
        if theta > omega + 0.5 * (2.0 * PI - omega) {
            (r, theta - 2.0 * PI)
        } else {
            (r, theta)
        }
    }

    /// Rotates a vector given in frame coordinates into global coordinates.
    pub fn to_global(&self, v: Vec2) -> Vec2 {
        let e = self.edge_direction;
        Vec2::new(e.x * v.x - e.y * v.y, e.y * v.x + e.x * v.y)
    }
}

/// Value and first derivatives of the singular solution.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SingularValue {
    pub value: f64,
    pub dr: f64,
    pub dtheta: f64,
    /// Cartesian gradient in frame coordinates.
    pub dx: f64,
    pub dy: f64,
}

/// `r^{π/ω} sin(θπ/ω)` and its derivatives.
pub fn singular_solution(omega: f64, r: f64, theta: f64) -> Result<SingularValue> {
    check_omega(omega)?;
    if !(r >= 0.0) {
        return Err(Error::param("r", "must be nonnegative"));
    }
    if !(-1e-12..=omega + 1e-12).contains(&theta) {
        return Err(Error::OutsideSector { theta, omega });
    }
    let theta = theta.clamp(0.0, omega);
    let l = PI / omega;
    let (s, c) = (l * theta).sin_cos();
    let value = r.powf(l) * s;
    if r == 0.0 {
        return Ok(SingularValue {
            value,
            dr: 0.0,
            dtheta: 0.0,
            dx: 0.0,
            dy: 0.0,
        });
    }
    let dr = l * r.powf(l - 1.0) * s;
    let dtheta = l * r.powf(l) * c;
    let (st, ct) = theta.sin_cos();
    Ok(SingularValue {
        value,
        dr,
        dtheta,
        dx: ct * dr - st * dtheta / r,
        dy: st * dr + ct * dtheta / r,
    })
}

fn check_omega(omega: f64) -> Result<()> {
    if !(omega > PI && omega < 2.0 * PI) {
        return Err(Error::param("omega", format!("must lie in (pi, 2 pi), got {omega}")));
    }
    Ok(())
}

/// Exact solution with first derivatives in physical coordinates.
pub trait ExactSolution: Send + Sync {
    fn value(&self, x: Vec2) -> f64;
    fn gradient(&self, x: Vec2) -> Vec2;
}

/// Poisson problem `-Δu = f`, `u = g` on the boundary.
pub trait Problem: Send + Sync {
    fn source(&self, x: Vec2) -> f64;
    fn dirichlet(&self, x: Vec2) -> f64;
    fn exact(&self) -> Option<&dyn ExactSolution> {
        None
    }
}

/// Singular solution on the unit circle sector with opening angle `omega`,
/// optionally plus the smooth term `x²y` (source `-2y`).
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SectorProblem {
    pub omega: f64,
    pub frame: CornerFrame,
    pub smooth: bool,
}

impl SectorProblem {
    pub fn new(omega: f64) -> Result<Self> {
        check_omega(omega)?;
        Ok(SectorProblem {
            omega,
            frame: CornerFrame::default(),
            smooth: false,
        })
    }

    pub fn with_smooth(mut self, smooth: bool) -> Self {
        self.smooth = smooth;
        self
    }

    fn clamped_polar(&self, x: Vec2) -> (f64, f64) {
        let (r, theta) = self.frame.sector_polar(x, self.omega);
        if !(-1e-9..=self.omega + 1e-9).contains(&theta) && r > 1e-12 {
            log::debug!("point {x:?} lies outside the sector (theta = {theta})");
        }
        (r, theta.clamp(0.0, self.omega))
    }

    /// `∂x^a ∂y^b u_s` in global coordinates (singular part only).
    pub fn singular_derivative(&self, x: Vec2, a: usize, b: usize) -> f64 {
        // u_s = Im(w^λ), w = e^{-iφ}(z - c); ∂x = d/dz, ∂y = i d/dz
        let (r, theta) = self.clamped_polar(x);
        let k = a + b;
        let l = PI / self.omega;
        if r == 0.0 {
            return 0.0;
        }
        let mut coef = 1.0;
        for m in 0..k {
            coef *= l - m as f64;
        }
        let e = self.frame.edge_direction;
        let phi = e.y.atan2(e.x);
        let wpow = Complex::from_polar(r.powf(l - k as f64), (l - k as f64) * theta);
        let rot = Complex::from_polar(1.0, -(k as f64) * phi);
        let ib = Complex::new(0.0, 1.0).powu(b as u32);
        (wpow * rot * ib * coef).im
    }
}

impl ExactSolution for SectorProblem {
    fn value(&self, x: Vec2) -> f64 {
        let (r, theta) = self.clamped_polar(x);
        let l = PI / self.omega;
        let mut v = r.powf(l) * (l * theta).sin();
        if self.smooth {
            v += x.x * x.x * x.y;
        }
        v
    }

    fn gradient(&self, x: Vec2) -> Vec2 {
        let mut g = Vec2::new(self.singular_derivative(x, 1, 0), self.singular_derivative(x, 0, 1));
        if self.smooth {
            g += Vec2::new(2.0 * x.x * x.y, x.x * x.x);
        }
        g
    }
}

impl Problem for SectorProblem {
    fn source(&self, x: Vec2) -> f64 {
        if self.smooth {
            -2.0 * x.y
        } else {
            0.0
        }
    }

    fn dirichlet(&self, x: Vec2) -> f64 {
        self.value(x)
    }

    fn exact(&self) -> Option<&dyn ExactSolution> {
        Some(self)
    }
}

type ScalarFn = Box<dyn Fn(Vec2) -> f64 + Send + Sync>;
type VectorFn = Box<dyn Fn(Vec2) -> Vec2 + Send + Sync>;

/// Problem given by closures: exact solution, gradient and source.
pub struct FnProblem {
    u: ScalarFn,
    grad: VectorFn,
    f: ScalarFn,
}

impl FnProblem {
    pub fn new(
        u: impl Fn(Vec2) -> f64 + Send + Sync + 'static,
        grad: impl Fn(Vec2) -> Vec2 + Send + Sync + 'static,
        f: impl Fn(Vec2) -> f64 + Send + Sync + 'static,
    ) -> Self {
        FnProblem {
            u: Box::new(u),
            grad: Box::new(grad),
            f: Box::new(f),
        }
    }

    /// `u = x²y`, `f = -2y`.
    pub fn x2y() -> Self {
        FnProblem::new(
            |x| x.x * x.x * x.y,
            |x| Vec2::new(2.0 * x.x * x.y, x.x * x.x),
            |x| -2.0 * x.y,
        )
    }
}

impl ExactSolution for FnProblem {
    fn value(&self, x: Vec2) -> f64 {
        (self.u)(x)
    }

    fn gradient(&self, x: Vec2) -> Vec2 {
        (self.grad)(x)
    }
}

impl Problem for FnProblem {
    fn source(&self, x: Vec2) -> f64 {
        (self.f)(x)
    }

    fn dirichlet(&self, x: Vec2) -> f64 {
        (self.u)(x)
    }

    fn exact(&self) -> Option<&dyn ExactSolution> {
        Some(self)
    }
}

/// Unit circle sector with opening angle `omega`, arc polygonized with
/// `n_arc` segments, corner at the origin and first edge along `+x`.
///
/// The grading map fixes the unit circle and all angles, so this polygon is
/// both the physical and the reference domain.
pub fn sector_polygon(omega: f64, n_arc: usize) -> Result<PolygonDomain> {
    check_omega(omega)?;
    if n_arc < 64 {
        return Err(Error::param("n_arc", format!("need at least 64 segments, got {n_arc}")));
    }
    let mut v = Vec::with_capacity(n_arc + 2);
    v.push(Vec2::zeros());
    for k in 0..=n_arc {
        let t = omega * k as f64 / n_arc as f64;
        v.push(Vec2::new(t.cos(), t.sin()));
    }
    PolygonDomain::new(v, 0)
}

/// Default arc resolution.
pub const SECTOR_ARC_SEGMENTS: usize = 4096;

/// `v = r^μ sin(λθ)` in a corner frame.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PowerSine {
    pub mu: f64,
    pub lambda: f64,
}

impl PowerSine {
    /// The singular solution for opening angle `omega`.
    pub fn singular(omega: f64) -> Self {
        PowerSine {
            mu: PI / omega,
            lambda: PI / omega,
        }
    }

    /// The singular solution pulled back through `F_γ`: `r̂^{γπ/ω} sin(θπ/ω)`.
    pub fn pulled_back(omega: f64, gamma: f64) -> Self {
        PowerSine {
            mu: gamma * PI / omega,
            lambda: PI / omega,
        }
    }

    /// `∂_r^m ∂_θ^n v`.
    pub fn polar_derivative(&self, r: f64, theta: f64, m: usize, n: usize) -> f64 {
        let mut c = 1.0;
        for i in 0..m {
            c *= self.mu - i as f64;
        }
        let phase = self.lambda * theta + n as f64 * 0.5 * PI;
        c * r.powf(self.mu - m as f64) * self.lambda.powi(n as i32) * phase.sin()
    }

    /// `|D^k v|² = (∂_r^k v)² + Σ_{m+n≤k, n≥1} (r^{m-k} ∂_r^m ∂_θ^n v)²`.
    pub fn derivative_magnitude_sq(&self, r: f64, theta: f64, k: usize) -> f64 {
        let mut s = self.polar_derivative(r, theta, k, 0).powi(2);
        for n in 1..=k {
            for m in 0..=k - n {
                s += (r.powi(m as i32 - k as i32) * self.polar_derivative(r, theta, m, n)).powi(2);
            }
        }
        s
    }
}

/// Outcome of a weighted-norm computation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum WeightedNorm {
    Finite { value: f64 },
    Divergent,
}

impl WeightedNorm {
    pub fn is_finite(&self) -> bool {
        matches!(self, WeightedNorm::Finite { .. })
    }
}

/// `Σ_j ‖r^{α_j} D^j v‖²` over the unit sector of angle `omega`, truncated to
/// `layers` geometric radial layers `[2^{-l-1}, 2^{-l}]`.
pub fn weighted_norm_sq_truncated(
    v: &PowerSine,
    terms: &[(usize, f64)],
    omega: f64,
    layers: usize,
) -> f64 {
    let (rn, rw) = gauss_legendre(8);
    let (tn, tw) = gauss_legendre(24);
    let mut total = 0.0;
    for l in 0..layers {
        let (r1, r0) = (0.5f64.powi(l as i32), 0.5f64.powi(l as i32 + 1));
        let mut layer = 0.0;
        for (a, wa) in rn.iter().zip(&rw) {
            let r = r0 + (r1 - r0) * a;
            for (b, wb) in tn.iter().zip(&tw) {
                let theta = omega * b;
                let f: f64 = terms
                    .iter()
                    .map(|&(j, alpha)| r.powf(2.0 * alpha) * v.derivative_magnitude_sq(r, theta, j))
                    .sum();
                layer += wa * wb * f * r;
            }
        }
        total += layer * (r1 - r0) * omega;
    }
    total
}

/// Weighted norm with divergence detection: the truncated integral is
/// computed with 40, 80 and 160 radial layers; it is finite when the second
/// increment is at most half the first.
pub fn weighted_norm(v: &PowerSine, terms: &[(usize, f64)], omega: f64) -> WeightedNorm {
    let s: Vec<f64> = [40, 80, 160]
        .iter()
        .map(|&l| weighted_norm_sq_truncated(v, terms, omega, l))
        .collect();
    let (d1, d2) = (s[1] - s[0], s[2] - s[1]);
    if s[2].is_finite() && d2 <= 0.5 * d1.abs() + 1e-300 {
        WeightedNorm::Finite { value: s[2].sqrt() }
    } else {
        WeightedNorm::Divergent
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn singular_examples() {
        let w = 1.5 * PI;
        assert!((singular_solution(w, 1.0, w / 2.0).unwrap().value - 1.0).abs() < 1e-15);
        assert_eq!(singular_solution(w, 0.7, 0.0).unwrap().value, 0.0);
        assert!(singular_solution(w, 0.7, w).unwrap().value.abs() < 1e-15);
        assert!(matches!(singular_solution(w, 0.5, w + 0.1), Err(Error::OutsideSector { .. })));
        assert!(singular_solution(PI, 0.5, 0.1).is_err());
    }

    #[test]
    fn harmonic_by_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for omega in [1.2 * PI, 1.5 * PI, 1.9 * PI] {
            let p = SectorProblem::new(omega).unwrap();
            let l = PI / omega;
            for _ in 0..100 {
                let r: f64 = rng.random_range(0.05..0.95);
                let t: f64 = rng.random_range(0.05..omega - 0.05);
                let x = Vec2::new(r * t.cos(), r * t.sin());
                let e = 1e-3 * r;
                let lap = (p.value(x + Vec2::new(e, 0.0))
                    + p.value(x - Vec2::new(e, 0.0))
                    + p.value(x + Vec2::new(0.0, e))
                    + p.value(x - Vec2::new(0.0, e))
                    - 4.0 * p.value(x))
                    / (e * e);
                assert!(lap.abs() <= 1e-6 * r.powf(l - 2.0) + 1e-5, "lap={lap}");
            }
        }
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let omega = 1.75 * PI;
        let mut p = SectorProblem::new(omega).unwrap().with_smooth(true);
        p.frame = CornerFrame::new(Vec2::new(0.2, -0.1), Vec2::new(0.6, 0.8)).unwrap();
        for _ in 0..200 {
            let r: f64 = rng.random_range(0.01..1.0);
            let t: f64 = rng.random_range(0.01..omega - 0.01);
            let x = p.frame.vertex + p.frame.to_global(Vec2::new(r * t.cos(), r * t.sin()));
            let e = 1e-6 * r;
            let fd = Vec2::new(
                (p.value(x + Vec2::new(e, 0.0)) - p.value(x - Vec2::new(e, 0.0))) / (2.0 * e),
                (p.value(x + Vec2::new(0.0, e)) - p.value(x - Vec2::new(0.0, e))) / (2.0 * e),
            );
            let g = p.gradient(x);
            assert!((fd - g).norm() <= 1e-6 * g.norm().max(1.0), "{fd:?} {g:?}");
            // first derivatives from the polar formula
            let s = singular_solution(omega, r, t).unwrap();
            let gs = p.frame.to_global(Vec2::new(s.dx, s.dy));
            let smooth = Vec2::new(2.0 * x.x * x.y, x.x * x.x);
            assert!((gs + smooth - g).norm() <= 1e-10 * g.norm().max(1.0));
        }
    }

    #[test]
    fn second_derivatives_match_polar_magnitude() {
        // for a harmonic function the polar and Cartesian Hessian norms agree
        let omega = 1.5 * PI;
        let p = SectorProblem::new(omega).unwrap();
        let v = PowerSine::singular(omega);
        let (r, t) = (0.3f64, 2.0f64);
        let x = Vec2::new(r * t.cos(), r * t.sin());
        let (uxx, uxy, uyy) = (
            p.singular_derivative(x, 2, 0),
            p.singular_derivative(x, 1, 1),
            p.singular_derivative(x, 0, 2),
        );
        assert!((uxx + uyy).abs() < 1e-12);
        let cart = uxx * uxx + 2.0 * uxy * uxy + uyy * uyy;
        // polar magnitude carries an extra (r^{-1} ∂_θ)² first-order term
        let d1 = v.polar_derivative(r, t, 0, 1) / r;
        let h_rt = v.polar_derivative(r, t, 1, 1) / r - v.polar_derivative(r, t, 0, 1) / (r * r);
        let h_tt = v.polar_derivative(r, t, 0, 2) / (r * r) + v.polar_derivative(r, t, 1, 0) / r;
        let h_rr = v.polar_derivative(r, t, 2, 0);
        assert!((h_rr * h_rr + 2.0 * h_rt * h_rt + h_tt * h_tt - cart).abs() < 1e-10 * cart);
        assert!(v.derivative_magnitude_sq(r, t, 2) >= d1 * d1);
    }

    #[test]
    fn sector_polygon_area() {
        let p = sector_polygon(1.5 * PI, SECTOR_ARC_SEGMENTS).unwrap();
        assert!((p.area() - 0.75 * PI).abs() < 1e-6);
        assert_eq!(p.corner_index(), Some(0));
        let slit = sector_polygon(2.0 * PI - 1e-3, 256).unwrap();
        let v = slit.vertices();
        assert!((v[1] - v[v.len() - 1]).norm() < 1.1e-3);
        assert!(sector_polygon(1.5 * PI, 10).is_err());
        assert!(sector_polygon(0.5 * PI, 100).is_err());
    }

    #[test]
    fn weighted_norm_regularity() {
        let omega = 1.5 * PI;
        let v = PowerSine::singular(omega);
        assert!(weighted_norm(&v, &[(1, 0.0)], omega).is_finite());
        assert!(!weighted_norm(&v, &[(2, 0.0)], omega).is_finite());
        let bound = 1.0 - PI / omega;
        assert!(weighted_norm(&v, &[(2, bound + 0.1)], omega).is_finite());
        assert!(!weighted_norm(&v, &[(2, bound - 0.1)], omega).is_finite());
    }

    #[test]
    fn h1_norm_closed_form() {
        // ‖∇u_s‖² = ∫∫ λ² r^{2λ-2} r dr dθ = λ ω / 2 over the unit sector
        let omega = 1.5 * PI;
        let v = PowerSine::singular(omega);
        let l = PI / omega;
        match weighted_norm(&v, &[(1, 0.0)], omega) {
            WeightedNorm::Finite { value } => {
                assert!((value * value - l * omega / 2.0).abs() < 1e-10);
            }
            WeightedNorm::Divergent => panic!("H1 norm must be finite"),
        }
    }

    #[test]
    fn pulled_back_singularity_is_h2() {
        let omega = 1.9 * PI;
        assert!(weighted_norm(&PowerSine::pulled_back(omega, 4.0), &[(2, 0.0)], omega).is_finite());
        assert!(!weighted_norm(&PowerSine::pulled_back(omega, 1.0), &[(2, 0.0)], omega).is_finite());
    }
}
