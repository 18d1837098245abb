//! The radial grading map `F_γ(q) = |q|^{γ-1} q`, optional smooth post-maps,
//! and the quantities needed to pull the Laplacian back to the reference
//! domain.
//!
//! With `J` the Jacobian of the full map `F = F_* ∘ F_γ`, the reference
//! diffusion matrix is `B = det J · J⁻¹ J⁻ᵀ` and the area weight is `det J`.
//! For `F_* = id` this reduces to `B = Sᵀ diag(1/γ, γ) S` with `S` the rotation
//! by the polar angle, and `det J = γ r̂^{2(γ-1)}`.

use std::f64::consts::PI;
use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::{Error, Mat2, Result, Vec2};

/// Smooth bijective planar map applied after the grading map.
pub trait PostMap: Send + Sync {
    fn apply(&self, q: Vec2) -> Vec2;
    fn inverse(&self, x: Vec2) -> Vec2;
    fn jacobian(&self, q: Vec2) -> Mat2;
}

/// `x = center + scale · R(rotation) · q`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Similarity {
    pub center: [f64; 2],
    /// Counterclockwise rotation in radians.
    pub rotation: f64,
    pub scale: f64,
}

impl Similarity {
    pub fn new(center: Vec2, rotation: f64, scale: f64) -> Result<Self> {
        if !(scale > 0.0 && scale.is_finite()) {
            return Err(Error::param("scale", format!("must be positive, got {scale}")));
        }
        Ok(Similarity {
            center: [center.x, center.y],
            rotation,
            scale,
        })
    }

    fn rot(&self) -> Mat2 {
        let (s, c) = self.rotation.sin_cos();
        Mat2::new(c, -s, s, c)
    }
}

impl PostMap for Similarity {
    fn apply(&self, q: Vec2) -> Vec2 {
        Vec2::from(self.center) + self.scale * (self.rot() * q)
    }

    fn inverse(&self, x: Vec2) -> Vec2 {
        self.rot().transpose() * (x - Vec2::from(self.center)) / self.scale
    }

    fn jacobian(&self, _q: Vec2) -> Mat2 {
        self.scale * self.rot()
    }
}

/// `F = F_* ∘ F_γ`.
#[derive(Clone)]
pub struct GradedMap {
    gamma: f64,
    post: Option<Arc<dyn PostMap>>,
    /// Length scale used by [`GradedMap::mesh_function`].
    post_scale: f64,
}

impl fmt::Debug for GradedMap {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("GradedMap")
            .field("gamma", &self.gamma)
            .field("post_map", &self.post.is_some())
            .finish()
    }
}

impl GradedMap {
    pub fn new(gamma: f64) -> Result<Self> {
        if !(gamma > 0.0 && gamma.is_finite()) {
            return Err(Error::param("gamma", format!("must be positive, got {gamma}")));
        }
        Ok(GradedMap {
            gamma,
            post: None,
            post_scale: 1.0,
        })
    }

    /// Attaches a post-map. Its Jacobian is sampled on a 21×21 grid over
    /// `[-1,1]²` and must be nonsingular there.
    pub fn with_post_map(mut self, post: Arc<dyn PostMap>) -> Result<Self> {
        let mut dets = Vec::with_capacity(441);
        for i in 0..21 {
            for j in 0..21 {
                let q = Vec2::new(-1.0 + 0.1 * i as f64, -1.0 + 0.1 * j as f64);
                dets.push(post.jacobian(q).determinant());
            }
        }
        let sign = dets[0].signum();
        if dets.iter().any(|d| !(d * sign > 0.0)) {
            return Err(Error::param("post_map", "Jacobian is singular on [-1,1]^2"));
        }
        self.post_scale = dets.iter().map(|d| d.abs()).sum::<f64>().sqrt() / (dets.len() as f64).sqrt();
        self.post = Some(post);
        Ok(self)
    }

    pub fn with_similarity(self, s: Similarity) -> Result<Self> {
        let scale = s.scale;
        let mut m = self.with_post_map(Arc::new(s))?;
        m.post_scale = scale;
        Ok(m)
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn has_post_map(&self) -> bool {
        self.post.is_some()
    }

    /// `F_γ` alone.
    pub fn grade(&self, q: Vec2) -> Vec2 {
        grade(self.gamma, q)
    }

    /// `F_γ⁻¹` alone.
    pub fn ungrade(&self, x: Vec2) -> Vec2 {
        grade(1.0 / self.gamma, x)
    }

    pub fn forward(&self, q: Vec2) -> Vec2 {
        let y = self.grade(q);
        match &self.post {
            Some(p) => p.apply(y),
            None => y,
        }
    }

    pub fn inverse(&self, x: Vec2) -> Vec2 {
        let y = match &self.post {
            Some(p) => p.inverse(x),
            None => x,
        };
        self.ungrade(y)
    }

    /// Jacobian of the full map at reference point `q`.
    pub fn jacobian(&self, q: Vec2) -> Mat2 {
        let jg = grading_jacobian(self.gamma, q);
        match &self.post {
            Some(p) => p.jacobian(self.grade(q)) * jg,
            None => jg,
        }
    }

    /// Reference diffusion matrix `det J · J⁻¹ J⁻ᵀ`.
    pub fn b_matrix(&self, q: Vec2) -> Mat2 {
        let base = b_matrix(self.gamma, q);
        match &self.post {
            None => base,
            Some(p) => {
                // B = γ K M K with K = I - a q̂q̂ᵀ and M the post-map's own B
                let js = p.jacobian(self.grade(q));
                let det = js.determinant();
                let inv = js.try_inverse().expect("post-map Jacobian checked nonsingular");
                let m = det.abs() * inv * inv.transpose();
                let k = radial_factor(self.gamma, q);
                self.gamma * k * m * k
            }
        }
    }

    /// `det J`, the factor converting reference area to physical area.
    pub fn load_weight(&self, q: Vec2) -> f64 {
        let w = load_weight(self.gamma, q);
        match &self.post {
            Some(p) => w * p.jacobian(self.grade(q)).determinant().abs(),
            None => w,
        }
    }

    /// Physical mesh size `h_Ω = h r̂^{γ-1}`, times the post-map scale.
    pub fn mesh_function(&self, h: f64, q: Vec2) -> f64 {
        mesh_function(self.gamma, h, q) * self.post_scale
    }

    /// Physical gradient from a reference gradient: `∇u = J⁻ᵀ ∇̂û`.
    pub fn physical_gradient(&self, q: Vec2, ref_grad: Vec2) -> Vec2 {
        match self.jacobian(q).try_inverse() {
            Some(inv) => inv.transpose() * ref_grad,
            None => Vec2::zeros(),
        }
    }

    /// Reference gradient from a physical gradient: `∇̂û = Jᵀ ∇u`.
    pub fn reference_gradient(&self, q: Vec2, phys_grad: Vec2) -> Vec2 {
        self.jacobian(q).transpose() * phys_grad
    }
}

fn grade(gamma: f64, q: Vec2) -> Vec2 {
    let r = q.norm();
    if r == 0.0 {
        return Vec2::zeros();
    }
    q * r.powf(gamma - 1.0)
}

/// `I - a q̂q̂ᵀ` with `a = (γ-1)/γ`.
fn radial_factor(gamma: f64, q: Vec2) -> Mat2 {
    let r = q.norm();
    let u = if r > 0.0 { q / r } else { Vec2::new(1.0, 0.0) };
    Mat2::identity() - ((gamma - 1.0) / gamma) * u * u.transpose()
}

/// Jacobian of `F_γ`: `r̂^{γ-1} (I + (γ-1) q̂q̂ᵀ)`.
pub fn grading_jacobian(gamma: f64, q: Vec2) -> Mat2 {
    let r = q.norm();
    if r == 0.0 {
        return if gamma == 1.0 { Mat2::identity() } else { Mat2::zeros() };
    }
    let u = q / r;
    r.powf(gamma - 1.0) * (Mat2::identity() + (gamma - 1.0) * u * u.transpose())
}

/// `B = Sᵀ diag(1/γ, γ) S` at reference point `q`. At the origin the `θ̂ = 0`
/// value is returned.
pub fn b_matrix(gamma: f64, q: Vec2) -> Mat2 {
    if q.x == 0.0 && q.y == 0.0 && gamma != 1.0 {
        log::warn!("diffusion matrix requested at the origin; using the theta = 0 value");
    }
    gamma * {
        let k = radial_factor(gamma, q);
        k * k
    }
}

/// `γ r̂^{2(γ-1)}`.
pub fn load_weight(gamma: f64, q: Vec2) -> f64 {
    gamma * q.norm_squared().powf(gamma - 1.0)
}

/// `h r̂^{γ-1}`.
pub fn mesh_function(gamma: f64, h: f64, q: Vec2) -> f64 {
    h * q.norm().powf(gamma - 1.0)
}

/// Strict lower bound `p ω / π` on γ for optimal convergence.
pub fn min_gamma(p: usize, omega: f64) -> Result<f64> {
    if p == 0 {
        return Err(Error::param("p", "degree must be at least 1"));
    }
    if !(omega > PI && omega < 2.0 * PI) {
        return Err(Error::param("omega", format!("must lie in (pi, 2 pi), got {omega}")));
    }
    Ok(p as f64 * omega / PI)
}

/// Weighted-norm powers `α_1, …, α_{p+1}` induced by the grading map.
pub fn alpha_powers(p: usize, gamma: f64) -> Result<Vec<f64>> {
    if !(gamma > 0.0) {
        return Err(Error::param("gamma", "must be positive"));
    }
    let top = p as f64 * (gamma - 1.0) / gamma;
    Ok((1..=p + 1).map(|j| top - (p + 1 - j) as f64).collect())
}

/// Lower bound on `α_j` for `r^{α_j} D^j u_s` to be square integrable.
pub fn power_bound(j: usize, omega: f64) -> f64 {
    (j as f64 - 1.0) - PI / omega
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn close(a: Vec2, b: Vec2, tol: f64) -> bool {
        (a - b).norm() <= tol
    }

    #[test]
    fn forward_examples() {
        let m = GradedMap::new(1.0).unwrap();
        assert_eq!(m.forward(Vec2::new(0.3, -0.7)), Vec2::new(0.3, -0.7));
        let m = GradedMap::new(4.0).unwrap();
        assert_eq!(m.forward(Vec2::new(1.0, 0.0)), Vec2::new(1.0, 0.0));
        assert!(close(m.forward(Vec2::new(0.5, 0.0)), Vec2::new(0.0625, 0.0), 1e-16));
    }

    #[test]
    fn inverse_examples() {
        let m = GradedMap::new(4.0).unwrap();
        assert!(close(m.inverse(Vec2::new(0.0625, 0.0)), Vec2::new(0.5, 0.0), 1e-15));
        let m = GradedMap::new(2.0).unwrap();
        assert_eq!(m.inverse(Vec2::zeros()), Vec2::zeros());
        let m = GradedMap::new(3.0).unwrap();
        assert!(close(m.inverse(Vec2::new(0.0, 8.0)), Vec2::new(0.0, 2.0), 1e-14));
    }

    #[test]
    fn b_matrix_examples() {
        assert!((b_matrix(1.0, Vec2::new(0.3, 0.4)) - Mat2::identity()).norm() < 1e-15);
        let b = b_matrix(4.0, Vec2::new(1.0, 0.0));
        assert!((b - Mat2::new(0.25, 0.0, 0.0, 4.0)).norm() < 1e-15);
        let b = b_matrix(4.0, Vec2::new(0.0, 1.0));
        assert!((b - Mat2::new(4.0, 0.0, 0.0, 0.25)).norm() < 1e-15);
        // origin convention
        let b = b_matrix(4.0, Vec2::zeros());
        assert!((b - Mat2::new(0.25, 0.0, 0.0, 4.0)).norm() < 1e-15);
    }

    #[test]
    fn scalar_examples() {
        assert_eq!(load_weight(1.0, Vec2::new(0.2, 0.9)), 1.0);
        assert_eq!(load_weight(4.0, Vec2::new(1.0, 0.0)), 4.0);
        assert!((load_weight(2.0, Vec2::new(0.5, 0.5)) - 1.0).abs() < 1e-15);
        assert_eq!(mesh_function(1.0, 0.3, Vec2::new(0.1, 0.2)), 0.3);
        assert!((mesh_function(4.0, 0.1, Vec2::new(1.0, 0.0)) - 0.1).abs() < 1e-16);
        assert!((mesh_function(4.0, 0.1, Vec2::new(0.5, 0.0)) - 0.0125).abs() < 1e-16);
    }

    #[test]
    fn gamma_bounds_and_powers() {
        assert!((min_gamma(2, 1.5 * PI).unwrap() - 3.0).abs() < 1e-15);
        assert!((min_gamma(1, 2.0 * PI - 1e-9).unwrap() - 2.0).abs() < 1e-8);
        assert!((min_gamma(3, 1.2 * PI).unwrap() - 3.6).abs() < 1e-14);
        assert!(min_gamma(2, PI).is_err());
        assert!(min_gamma(2, 2.0 * PI).is_err());

        let a = alpha_powers(2, 1.0).unwrap();
        assert_eq!(a, vec![-2.0, -1.0, 0.0]);
        let a = alpha_powers(2, 4.0).unwrap();
        assert_eq!(a, vec![-0.5, 0.5, 1.5]);
        assert!(a[2] > power_bound(3, 1.5 * PI));
        assert!((power_bound(3, 1.5 * PI) - 4.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn jacobian_matches_finite_differences() {
        let m = GradedMap::new(3.0)
            .unwrap()
            .with_similarity(Similarity::new(Vec2::new(0.2, -0.1), 0.7, 1.6).unwrap())
            .unwrap();
        let q = Vec2::new(0.4, -0.3);
        let e = 1e-6;
        let dx = (m.forward(q + Vec2::new(e, 0.0)) - m.forward(q - Vec2::new(e, 0.0))) / (2.0 * e);
        let dy = (m.forward(q + Vec2::new(0.0, e)) - m.forward(q - Vec2::new(0.0, e))) / (2.0 * e);
        let fd = Mat2::from_columns(&[dx, dy]);
        assert!((fd - m.jacobian(q)).norm() < 1e-8);
    }

    #[test]
    fn b_matrix_is_det_j_jinv_jinvt() {
        let m = GradedMap::new(2.5)
            .unwrap()
            .with_similarity(Similarity::new(Vec2::new(1.0, 0.0), -1.1, 0.8).unwrap())
            .unwrap();
        let q = Vec2::new(-0.3, 0.55);
        let j = m.jacobian(q);
        let inv = j.try_inverse().unwrap();
        let expect = j.determinant() * inv * inv.transpose();
        assert!((m.b_matrix(q) - expect).norm() < 1e-12);
        assert!((m.load_weight(q) - j.determinant()).abs() < 1e-12);
        assert!((m.mesh_function(0.1, q) - 0.8 * mesh_function(2.5, 0.1, q)).abs() < 1e-15);
    }

    #[test]
    fn rejects_singular_post_map() {
        struct Fold;
        impl PostMap for Fold {
            fn apply(&self, q: Vec2) -> Vec2 {
                Vec2::new(q.x * q.x, q.y)
            }
            fn inverse(&self, x: Vec2) -> Vec2 {
                Vec2::new(x.x.sqrt(), x.y)
            }
            fn jacobian(&self, q: Vec2) -> Mat2 {
                Mat2::new(2.0 * q.x, 0.0, 0.0, 1.0)
            }
        }
        assert!(GradedMap::new(2.0).unwrap().with_post_map(Arc::new(Fold)).is_err());
        assert!(GradedMap::new(0.0).is_err());
    }

    fn point() -> impl Strategy<Value = Vec2> {
        (-1.0f64..1.0, -1.0f64..1.0)
            .prop_filter("away from origin", |(x, y)| x * x + y * y > 1e-6)
            .prop_map(|(x, y)| Vec2::new(x, y))
    }

    proptest! {
        #[test]
        fn b_symmetric_unit_det(gamma in 0.2f64..8.0, q in point()) {
            let b = b_matrix(gamma, q);
            // entries are as large as max(γ, 1/γ); allow a few ulps of that
            prop_assert!((b[(0, 1)] - b[(1, 0)]).abs() <= 4.0 * f64::EPSILON * gamma.max(1.0 / gamma));
            prop_assert!((b.determinant() - 1.0).abs() < 1e-12 * gamma.max(1.0 / gamma));
            prop_assert!((b.trace() - (gamma + 1.0 / gamma)).abs() < 1e-12 * gamma.max(1.0 / gamma));
        }

        #[test]
        fn b_bounds(gamma in 0.2f64..8.0, q in point(),
                    xi in (-1.0f64..1.0, -1.0f64..1.0), eta in (-1.0f64..1.0, -1.0f64..1.0)) {
            let b = b_matrix(gamma, q);
            let xi = Vec2::new(xi.0, xi.1);
            let eta = Vec2::new(eta.0, eta.1);
            let lo = gamma.min(1.0 / gamma);
            let hi = gamma.max(1.0 / gamma);
            prop_assert!(xi.dot(&(b * xi)) >= lo * xi.norm_squared() * (1.0 - 1e-12));
            prop_assert!(xi.dot(&(b * eta)).abs() <= hi * xi.norm() * eta.norm() * (1.0 + 1e-12));
        }

        #[test]
        fn forward_inverse_roundtrip(gamma in 0.5f64..6.0, q in point()) {
            let m = GradedMap::new(gamma).unwrap();
            let x = m.forward(q);
            prop_assume!(x.norm() >= 1e-8);
            prop_assert!((m.inverse(x) - q).norm() <= 1e-12 * q.norm().max(1.0));
            prop_assert!((m.forward(m.inverse(x)) - x).norm() <= 1e-12 * x.norm().max(1e-8));
        }
    }
}
