use std::f64::consts::PI;

use gradedfem::geometry::{classify_elements, PolygonDomain, ReferenceMesh};
use gradedfem::problems::{sector_polygon, SECTOR_ARC_SEGMENTS};
use gradedfem::Vec2;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Star-shaped polygon with its corner at the origin: vertices at increasing
/// angles inside `(0, omega)`.
fn star_polygon() -> impl Strategy<Value = PolygonDomain> {
    (0.4f64..1.9, prop::collection::vec((0.0f64..1.0, 0.3f64..0.95), 3..9)).prop_map(|(w, pts)| {
        let omega = w * PI;
        let n = pts.len();
        let mut verts = vec![Vec2::zeros()];
        for (k, (jitter, r)) in pts.iter().enumerate() {
            let theta = omega * (k as f64 + 0.3 + 0.4 * jitter) / n as f64;
            verts.push(Vec2::new(r * theta.cos(), r * theta.sin()) * 0.99);
        }
        PolygonDomain::new(verts, 0).unwrap()
    })
}

fn mesh() -> impl Strategy<Value = ReferenceMesh> {
    (0.06f64..0.3, 0.0f64..1.0, 0.0f64..1.0)
        .prop_map(|(h, sx, sy)| ReferenceMesh::new(h, Vec2::new(sx * h, sy * h)).unwrap())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn quadrature_weights_sum_to_area(dom in star_polygon(), m in mesh()) {
        let am = classify_elements(&m, &dom).unwrap();
        let mut total = 0.0;
        for &c in am.active_cells() {
            if am.is_sliver(c) {
                continue;
            }
            total += am.clip_element(c, 2).unwrap().total_weight();
        }
        prop_assert!((total - dom.area()).abs() <= 1e-10 * dom.area());
    }

    #[test]
    fn classification_ignores_start_vertex(dom in star_polygon(), m in mesh(), start in 0usize..10) {
        let a = classify_elements(&m, &dom).unwrap();
        let b = classify_elements(&m, &dom.relabeled(start).unwrap()).unwrap();
        for c in 0..m.n_cells() {
            prop_assert_eq!(a.kind(c), b.kind(c));
            prop_assert!((a.cell_area(c) - b.cell_area(c)).abs() <= 1e-14);
        }
    }

    #[test]
    fn ghost_faces_once_between_neighbours(dom in star_polygon(), m in mesh()) {
        let am = classify_elements(&m, &dom).unwrap();
        let mut seen = std::collections::BTreeSet::new();
        for f in am.ghost_faces() {
            let [a, b] = f.cells;
            prop_assert!(seen.insert((a.min(b), a.max(b))));
            let ((ia, ja), (ib, jb)) = (m.cell_ij(a), m.cell_ij(b));
            prop_assert_eq!(ia.abs_diff(ib) + ja.abs_diff(jb), 1);
            prop_assert!((f.length() - m.h()).abs() < 1e-12);
        }
    }

    #[test]
    fn boundary_normals_point_out(dom in star_polygon(), m in mesh()) {
        let am = classify_elements(&m, &dom).unwrap();
        let eps = 1e-7;
        for c in am.boundary_cells() {
            let q = am.boundary_quadrature(c, 3).unwrap();
            for (x, n) in q.points.iter().zip(&q.normals) {
                let near_vertex = dom.vertices().iter().any(|v| (v - x).norm() < 1e-5);
                if near_vertex {
                    continue;
                }
                prop_assert!(!dom.contains(x + n * eps));
                prop_assert!(dom.contains(x - n * eps));
            }
        }
    }
}

#[test]
fn area_matches_monte_carlo() {
    let omega = 1.5 * PI;
    let dom = sector_polygon(omega, SECTOR_ARC_SEGMENTS).unwrap();
    let am = classify_elements(&ReferenceMesh::centered(0.1).unwrap(), &dom).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let n = 400_000;
    let hits = (0..n)
        .filter(|_| dom.contains(Vec2::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0))))
        .count();
    let estimate = 4.0 * hits as f64 / n as f64;
    // binomial standard error is about 2.5e-3 here
    assert!((am.total_area() - estimate).abs() < 1e-2, "{} vs {estimate}", am.total_area());
    assert!((dom.area() - 0.5 * omega).abs() < 1e-4);
}

#[test]
fn boundary_length_is_perimeter() {
    let dom = sector_polygon(1.5 * PI, SECTOR_ARC_SEGMENTS).unwrap();
    let am = classify_elements(&ReferenceMesh::centered(0.05).unwrap(), &dom).unwrap();
    let total: f64 = am.boundary_segments().iter().map(|s| (s.b - s.a).norm()).sum();
    assert!((total - dom.perimeter()).abs() < 1e-6);
    // polygonized arc against 2 + ω
    assert!((dom.perimeter() - (2.0 + 1.5 * PI)).abs() < 1e-4);
}

#[test]
fn grid_aligned_edges_keep_their_boundary_segments() {
    // with zero shift the two straight sector edges run along grid lines
    let dom = sector_polygon(1.5 * PI, SECTOR_ARC_SEGMENTS).unwrap();
    let am = classify_elements(&ReferenceMesh::new(0.1, Vec2::zeros()).unwrap(), &dom).unwrap();
    for edge in [0, dom.len() - 1] {
        let (a, b) = dom.edge(edge);
        let len: f64 = am
            .boundary_segments()
            .iter()
            .filter(|s| s.edge == edge)
            .map(|s| (s.b - s.a).norm())
            .sum();
        assert!((len - (b - a).norm()).abs() < 1e-12, "edge {edge}: {len}");
    }
}
