use super::cut::Trapezoid;
use super::ActiveMesh;
use crate::{Error, Result, Vec2};

/// Gauss–Legendre nodes and weights on `[0, 1]`.
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    assert!(n >= 1, "at least one Gauss point");
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    for i in 0..n.div_ceil(2) {
        // Chebyshev initial guess, then Newton on P_n
        let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 1.0;
        for _ in 0..100 {
            let (mut p0, mut p1) = (1.0, x);
            for k in 2..=n {
                let p2 = ((2 * k - 1) as f64 * x * p1 - (k - 1) as f64 * p0) / k as f64;
                p0 = p1;
                p1 = p2;
            }
            let p = if n == 1 { x } else { p1 };
            let pm1 = if n == 1 { 1.0 } else { p0 };
            dp = n as f64 * (x * p - pm1) / (x * x - 1.0);
            let dx = p / dp;
            x -= dx;
            if dx.abs() < 1e-16 {
                break;
            }
        }
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        nodes[i] = 0.5 * (1.0 - x);
        nodes[n - 1 - i] = 0.5 * (1.0 + x);
        weights[i] = 0.5 * w;
        weights[n - 1 - i] = 0.5 * w;
    }
    if n == 1 {
        return (vec![0.5], vec![1.0]);
    }
    (nodes, weights)
}

/// Area quadrature over `cell ∩ domain`.
#[derive(Debug, Clone, Default)]
pub struct QuadratureCell {
    pub parent_cell: usize,
    pub points: Vec<Vec2>,
    pub weights: Vec<f64>,
    /// Piece id of every point.
    pub pieces: Vec<usize>,
}

impl QuadratureCell {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn total_weight(&self) -> f64 {
        self.weights.iter().sum()
    }
}

/// Line quadrature along the part of the domain boundary inside one cell.
#[derive(Debug, Clone, Default)]
pub struct BoundaryQuadrature {
    pub parent_cell: usize,
    pub points: Vec<Vec2>,
    pub weights: Vec<f64>,
    /// Outward unit normals.
    pub normals: Vec<Vec2>,
    pub pieces: Vec<usize>,
}

impl BoundaryQuadrature {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn total_weight(&self) -> f64 {
        self.weights.iter().sum()
    }
}

fn push_tensor_rule(
    out: &mut QuadratureCell,
    trap: &Trapezoid,
    piece: usize,
    rule: &(Vec<f64>, Vec<f64>),
    xi_range: (f64, f64),
    eta_range: (f64, f64),
) {
    let (nodes, weights) = rule;
    let (dxi, deta) = (xi_range.1 - xi_range.0, eta_range.1 - eta_range.0);
    for (a, wa) in nodes.iter().zip(weights) {
        let xi = xi_range.0 + dxi * a;
        for (b, wb) in nodes.iter().zip(weights) {
            let eta = eta_range.0 + deta * b;
            let (p, jac) = trap.map(xi, eta);
            let w = wa * wb * dxi * deta * jac;
            if w > 0.0 {
                out.points.push(p);
                out.weights.push(w);
                out.pieces.push(piece);
            }
        }
    }
}

/// Parameter-space rectangles graded geometrically toward `(sx, sy)`, where
/// `None` in a direction means no grading in that direction.
fn graded_boxes(target: (Option<f64>, Option<f64>), levels: usize) -> Vec<((f64, f64), (f64, f64))> {
    let mut boxes = Vec::new();
    let split = |lo: f64, hi: f64, toward: Option<f64>| -> [(f64, f64); 2] {
        let mid = 0.5 * (lo + hi);
        match toward {
            Some(t) if t < mid => [(lo, mid), (mid, hi)],
            Some(_) => [(mid, hi), (lo, mid)],
            None => [(lo, hi), (lo, hi)],
        }
    };
    let mut cur = ((0.0, 1.0), (0.0, 1.0));
    for _ in 0..levels {
        let [xn, xf] = split(cur.0 .0, cur.0 .1, target.0);
        let [yn, yf] = split(cur.1 .0, cur.1 .1, target.1);
        match (target.0, target.1) {
            (Some(_), Some(_)) => {
                boxes.push((xf, yn));
                boxes.push((xn, yf));
                boxes.push((xf, yf));
                cur = (xn, yn);
            }
            (Some(_), None) => {
                boxes.push((xf, yn));
                cur = (xn, yn);
            }
            (None, Some(_)) => {
                boxes.push((xn, yf));
                cur = (xn, yn);
            }
            (None, None) => break,
        }
    }
    boxes.push(cur);
    boxes
}

/// Which parameter corners of `trap` map onto `point`.
fn singular_target(trap: &Trapezoid, point: Vec2, tol: f64) -> Option<(Option<f64>, Option<f64>)> {
    let hit = |xi: f64, eta: f64| (trap.map(xi, eta).0 - point).norm() <= tol;
    let c = [hit(0.0, 0.0), hit(0.0, 1.0), hit(1.0, 0.0), hit(1.0, 1.0)];
    match c {
        [true, true, _, _] => Some((Some(0.0), None)),
        [_, _, true, true] => Some((Some(1.0), None)),
        [true, false, false, false] => Some((Some(0.0), Some(0.0))),
        [false, true, false, false] => Some((Some(0.0), Some(1.0))),
        [false, false, true, false] => Some((Some(1.0), Some(0.0))),
        [false, false, false, true] => Some((Some(1.0), Some(1.0))),
        _ => None,
    }
}

impl ActiveMesh {
    /// Quadrature over `cell ∩ domain` with `order` Gauss points per
    /// direction on every trapezoid.
    pub fn clip_element(&self, cell: usize, order: usize) -> Result<QuadratureCell> {
        self.graded_clip(cell, order, None)
    }

    /// Like [`clip_element`](Self::clip_element) but trapezoids with a corner
    /// at `singular` are subdivided geometrically toward it over `levels`
    /// levels.
    pub fn graded_clip(
        &self,
        cell: usize,
        order: usize,
        singular: Option<(Vec2, usize)>,
    ) -> Result<QuadratureCell> {
        if !self.is_active(cell) {
            return Err(Error::InactiveCell { cell });
        }
        if self.is_sliver(cell) {
            return Err(Error::EmptyClip { cell });
        }
        let rule = gauss_legendre(order);
        let mut out = QuadratureCell {
            parent_cell: cell,
            ..Default::default()
        };
        let tol = 1e-12 * self.h();
        for k in self.cell_pieces(cell) {
            for trap in &self.piece(k).trapezoids {
                let target = singular.and_then(|(p, levels)| {
                    singular_target(trap, p, tol).map(|t| (t, levels))
                });
                match target {
                    Some((t, levels)) => {
                        for (bx, by) in graded_boxes(t, levels) {
                            push_tensor_rule(&mut out, trap, k, &rule, bx, by);
                        }
                    }
                    None => push_tensor_rule(&mut out, trap, k, &rule, (0.0, 1.0), (0.0, 1.0)),
                }
            }
        }
        if out.is_empty() {
            return Err(Error::EmptyClip { cell });
        }
        Ok(out)
    }

    /// Gauss rule with `order` points on every boundary segment in `cell`.
    pub fn boundary_quadrature(&self, cell: usize, order: usize) -> Result<BoundaryQuadrature> {
        let segs = self.cell_boundary_segments(cell);
        if segs.is_empty() {
            return Err(Error::NoBoundary { cell });
        }
        let (nodes, weights) = gauss_legendre(order);
        let mut out = BoundaryQuadrature {
            parent_cell: cell,
            ..Default::default()
        };
        for s in segs {
            let d = s.b - s.a;
            let len = d.norm();
            for (t, w) in nodes.iter().zip(&weights) {
                out.points.push(s.a + d * *t);
                out.weights.push(w * len);
                out.normals.push(s.normal);
                out.pieces.push(s.piece);
            }
        }
        Ok(out)
    }
}
