use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::{Error, Result, Vec2};

/// Role of a polygon edge.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EdgeKind {
    /// Part of the Dirichlet boundary.
    Boundary,
    /// Shared with another patch; coupled weakly, no boundary terms.
    Interface,
}

/// Simple counterclockwise polygon in reference coordinates, usually with a
/// marked singular corner at the origin.
///
/// Edge `i` runs from `vertices[i]` to `vertices[(i + 1) % n]`.
#[derive(Debug, Clone)]
pub struct PolygonDomain {
    vertices: Vec<Vec2>,
    corner_index: Option<usize>,
    edge_kinds: Vec<EdgeKind>,
}

#[derive(Serialize, Deserialize)]
struct PolygonJson {
    vertices: Vec<[f64; 2]>,
    #[serde(default)]
    corner_index: Option<usize>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    interface_edges: Vec<usize>,
}

impl PolygonDomain {
    pub fn new(vertices: Vec<Vec2>, corner_index: usize) -> Result<Self> {
        let n = vertices.len();
        Self::with_edge_kinds(vertices, Some(corner_index), vec![EdgeKind::Boundary; n])
    }

    /// Polygon without a singular corner; only usable with an ungraded map.
    pub fn without_corner(vertices: Vec<Vec2>) -> Result<Self> {
        let n = vertices.len();
        Self::with_edge_kinds(vertices, None, vec![EdgeKind::Boundary; n])
    }

    pub fn with_edge_kinds(
        vertices: Vec<Vec2>,
        corner_index: Option<usize>,
        edge_kinds: Vec<EdgeKind>,
    ) -> Result<Self> {
        let poly = PolygonDomain {
            vertices,
            corner_index,
            edge_kinds,
        };
        poly.validate()?;
        Ok(poly)
    }

    fn validate(&self) -> Result<()> {
        let n = self.vertices.len();
        if n < 3 {
            return Err(Error::Geometry(format!("polygon needs at least 3 vertices, got {n}")));
        }
        if self.edge_kinds.len() != n {
            return Err(Error::Geometry("one edge kind per edge is required".into()));
        }
        if let Some(k) = self.corner_index {
            if k >= n {
                return Err(Error::Geometry(format!(
                    "corner_index {k} out of range for {n} vertices"
                )));
            }
            if self.vertices[k] != Vec2::zeros() {
                return Err(Error::Geometry("the corner vertex must be exactly (0, 0)".into()));
            }
        }
        for v in &self.vertices {
            if !v.x.is_finite() || !v.y.is_finite() || v.x.abs() > 1.0 || v.y.abs() > 1.0 {
                return Err(Error::Geometry(format!(
                    "vertex ({}, {}) lies outside [-1,1]^2",
                    v.x, v.y
                )));
            }
        }
        for i in 0..n {
            let (a, b) = self.edge(i);
            if (b - a).norm() == 0.0 {
                return Err(Error::Geometry(format!("edge {i} has zero length")));
            }
        }
        if self.signed_area() <= 0.0 {
            return Err(Error::Geometry("polygon must be counterclockwise".into()));
        }
        if let Some((i, j)) = self.find_self_intersection() {
            return Err(Error::Geometry(format!("edges {i} and {j} intersect")));
        }
        Ok(())
    }

    /// Sweep over edges sorted by their leftmost x; only x-overlapping pairs
    /// are tested.
    fn find_self_intersection(&self) -> Option<(usize, usize)> {
        let n = self.vertices.len();
        let mut order: Vec<usize> = (0..n).collect();
        let xmin = |i: usize| {
            let (a, b) = self.edge(i);
            a.x.min(b.x)
        };
        order.sort_by(|&a, &b| xmin(a).total_cmp(&xmin(b)));
        for (k, &i) in order.iter().enumerate() {
            let (a, b) = self.edge(i);
            let xmax = a.x.max(b.x);
            for &j in &order[k + 1..] {
                if xmin(j) > xmax {
                    break;
                }
                let adjacent = j == (i + 1) % n || i == (j + 1) % n;
                let (c, d) = self.edge(j);
                if adjacent {
                    // adjacent edges may only share their common vertex
                    if collinear_overlap(a, b, c, d) {
                        return Some((i.min(j), i.max(j)));
                    }
                    continue;
                }
                if segments_intersect(a, b, c, d) {
                    return Some((i.min(j), i.max(j)));
                }
            }
        }
        None
    }

    pub fn from_json_str(s: &str) -> Result<Self> {
        let raw: PolygonJson = serde_json::from_str(s)?;
        let n = raw.vertices.len();
        let mut kinds = vec![EdgeKind::Boundary; n];
        for &e in &raw.interface_edges {
            if e >= n {
                return Err(Error::Geometry(format!("interface edge {e} out of range")));
            }
            kinds[e] = EdgeKind::Interface;
        }
        let vertices = raw.vertices.iter().map(|v| Vec2::new(v[0], v[1])).collect();
        Self::with_edge_kinds(vertices, raw.corner_index, kinds)
    }

    pub fn from_json_file(path: &Path) -> Result<Self> {
        Self::from_json_str(&std::fs::read_to_string(path)?)
    }

    pub fn to_json_string(&self) -> String {
        let raw = PolygonJson {
            vertices: self.vertices.iter().map(|v| [v.x, v.y]).collect(),
            corner_index: self.corner_index,
            interface_edges: (0..self.len())
                .filter(|&i| self.edge_kinds[i] == EdgeKind::Interface)
                .collect(),
        };
        serde_json::to_string(&raw).expect("polygon serialises")
    }

    pub fn vertices(&self) -> &[Vec2] {
        &self.vertices
    }

    pub fn corner_index(&self) -> Option<usize> {
        self.corner_index
    }

    pub fn len(&self) -> usize {
        self.vertices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vertices.is_empty()
    }

    pub fn edge(&self, i: usize) -> (Vec2, Vec2) {
        let n = self.vertices.len();
        (self.vertices[i], self.vertices[(i + 1) % n])
    }

    pub fn edge_kind(&self, i: usize) -> EdgeKind {
        self.edge_kinds[i]
    }

    /// Outward unit normal of edge `i` (edge direction rotated by −90°).
    pub fn edge_normal(&self, i: usize) -> Vec2 {
        let (a, b) = self.edge(i);
        let d = (b - a).normalize();
        Vec2::new(d.y, -d.x)
    }

    pub fn signed_area(&self) -> f64 {
        let n = self.vertices.len();
        let mut s = 0.0;
        for i in 0..n {
            let a = self.vertices[i];
            let b = self.vertices[(i + 1) % n];
            s += a.x * b.y - b.x * a.y;
        }
        0.5 * s
    }

    pub fn area(&self) -> f64 {
        self.signed_area().abs()
    }

    pub fn perimeter(&self) -> f64 {
        (0..self.len())
            .map(|i| {
                let (a, b) = self.edge(i);
                (b - a).norm()
            })
            .sum()
    }

    /// Even-odd point membership; points exactly on the boundary may go
    /// either way.
    pub fn contains(&self, p: Vec2) -> bool {
        let mut inside = false;
        for i in 0..self.len() {
            let (a, b) = self.edge(i);
            if (a.y > p.y) != (b.y > p.y) {
                let x = a.x + (p.y - a.y) / (b.y - a.y) * (b.x - a.x);
                if p.x < x {
                    inside = !inside;
                }
            }
        }
        inside
    }

    /// Same polygon with the vertex list rotated to start at `start`.
    pub fn relabeled(&self, start: usize) -> Result<Self> {
        let n = self.len();
        let start = start % n;
        let mut vertices = self.vertices.clone();
        let mut kinds = self.edge_kinds.clone();
        vertices.rotate_left(start);
        kinds.rotate_left(start);
        Self::with_edge_kinds(vertices, self.corner_index.map(|k| (k + n - start) % n), kinds)
    }
}

fn cross(a: Vec2, b: Vec2) -> f64 {
    a.x * b.y - a.y * b.x
}

fn on_segment(a: Vec2, b: Vec2, p: Vec2) -> bool {
    p.x >= a.x.min(b.x) && p.x <= a.x.max(b.x) && p.y >= a.y.min(b.y) && p.y <= a.y.max(b.y)
}

/// Closed segment intersection test.
pub(crate) fn segments_intersect(a: Vec2, b: Vec2, c: Vec2, d: Vec2) -> bool {
    let d1 = cross(b - a, c - a);
    let d2 = cross(b - a, d - a);
    let d3 = cross(d - c, a - c);
    let d4 = cross(d - c, b - c);
    if ((d1 > 0.0 && d2 < 0.0) || (d1 < 0.0 && d2 > 0.0))
        && ((d3 > 0.0 && d4 < 0.0) || (d3 < 0.0 && d4 > 0.0))
    {
        return true;
    }
    (d1 == 0.0 && on_segment(a, b, c))
        || (d2 == 0.0 && on_segment(a, b, d))
        || (d3 == 0.0 && on_segment(c, d, a))
        || (d4 == 0.0 && on_segment(c, d, b))
}

fn collinear_overlap(a: Vec2, b: Vec2, c: Vec2, d: Vec2) -> bool {
    if cross(b - a, c - a) != 0.0 || cross(b - a, d - a) != 0.0 {
        return false;
    }
    // Shared endpoint plus the other endpoint folding back onto the segment.
    let dir = b - a;
    let t = |p: Vec2| (p - a).dot(&dir) / dir.norm_squared();
    let (tc, td) = (t(c), t(d));
    let (lo, hi) = (tc.min(td), tc.max(td));
    lo.max(0.0) < hi.min(1.0) - 1e-14
}

#[cfg(test)]
mod tests {
    use super::*;

    fn square() -> Vec<Vec2> {
        vec![
            Vec2::new(0.0, 0.0),
            Vec2::new(1.0, 0.0),
            Vec2::new(1.0, 1.0),
            Vec2::new(0.0, 1.0),
        ]
    }

    #[test]
    fn accepts_unit_square() {
        let p = PolygonDomain::new(square(), 0).unwrap();
        assert_eq!(p.area(), 1.0);
        assert_eq!(p.perimeter(), 4.0);
        assert!(p.contains(Vec2::new(0.5, 0.5)));
        assert!(!p.contains(Vec2::new(1.5, 0.5)));
        assert_eq!(p.edge_normal(0), Vec2::new(0.0, -1.0));
    }

    #[test]
    fn rejects_clockwise() {
        let mut v = square();
        v.reverse();
        assert!(matches!(PolygonDomain::new(v, 0), Err(Error::Geometry(_))));
    }

    #[test]
    fn rejects_corner_off_origin() {
        assert!(PolygonDomain::new(square(), 1).is_err());
    }

    #[test]
    fn rejects_self_intersection() {
        let v = vec![
            Vec2::new(0.0, 0.0),
            Vec2::new(1.0, 0.0),
            Vec2::new(0.0, 1.0),
            Vec2::new(1.0, 1.0),
            Vec2::new(-0.5, 0.5),
        ];
        assert!(PolygonDomain::new(v, 0).is_err());
    }

    #[test]
    fn rejects_vertex_outside_box() {
        let v = vec![Vec2::new(0.0, 0.0), Vec2::new(1.5, 0.0), Vec2::new(0.0, 1.0)];
        assert!(PolygonDomain::new(v, 0).is_err());
    }

    #[test]
    fn json_round_trip() {
        let s = r#"{"vertices": [[0,0],[1,0],[1,1],[0,1]], "corner_index": 0, "interface_edges": [1]}"#;
        let p = PolygonDomain::from_json_str(s).unwrap();
        assert_eq!(p.edge_kind(1), EdgeKind::Interface);
        let q = PolygonDomain::from_json_str(&p.to_json_string()).unwrap();
        assert_eq!(q.vertices(), p.vertices());
        assert_eq!(q.edge_kind(1), EdgeKind::Interface);
        assert_eq!(q.edge_kind(0), EdgeKind::Boundary);
    }

    #[test]
    fn relabel_keeps_corner() {
        let p = PolygonDomain::new(square(), 0).unwrap();
        let q = p.relabeled(2).unwrap();
        assert_eq!(q.vertices()[q.corner_index().unwrap()], Vec2::zeros());
        assert_eq!(q.area(), 1.0);
    }
}
