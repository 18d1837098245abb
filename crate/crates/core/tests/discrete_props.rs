use std::collections::BTreeMap;
use std::f64::consts::PI;

use gradedfem::analysis::{compute_errors, run_sector, SectorSetup, ShiftSpec};
use gradedfem::assembly::{assemble, DofSplit, Discretization, NitscheParams};
use gradedfem::geometry::{PolygonDomain, ReferenceMesh};
use gradedfem::mapping::GradedMap;
use gradedfem::par::Execution;
use gradedfem::problems::FnProblem;
use gradedfem::solver::{conjugate_gradient, reverse_cuthill_mckee, solve, SolveMethod};
use gradedfem::Vec2;
use proptest::prelude::*;

const EXEC: Execution = Execution::Parallel;

fn slit(h: f64) -> Discretization {
    let mut setup = SectorSetup::new(0.97 * 2.0 * PI, 2);
    setup.split = DofSplit::On;
    setup.discretize(h, ShiftSpec::Center.resolve(h)).unwrap()
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn crosses(a: Vec2, b: Vec2, c: Vec2, d: Vec2) -> bool {
    let o = |p: Vec2, q: Vec2, r: Vec2| (q - p).perp(&(r - p));
    let (d1, d2) = (o(c, d, a), o(c, d, b));
    let (d3, d4) = (o(a, b, c), o(a, b, d));
    d1 * d2 <= 0.0 && d3 * d4 <= 0.0
}

/// Components of `supp φ_t ∩ Ω` by flood fill over a `n × n` sampling of
/// the support box; neighbouring samples connect when the segment between
/// them stays clear of the boundary.
fn flood_fill(dom: &PolygonDomain, lo: Vec2, hi: Vec2, n: usize) -> Vec<Option<usize>> {
    let pt = |i: usize, j: usize| {
        Vec2::new(
            lo.x + (hi.x - lo.x) * (i as f64 + 0.5) / n as f64,
            lo.y + (hi.y - lo.y) * (j as f64 + 0.5) / n as f64,
        )
    };
    let inside: Vec<bool> = (0..n * n).map(|k| dom.contains(pt(k % n, k / n))).collect();
    let clear = |a: Vec2, b: Vec2| (0..dom.len()).all(|e| {
        let (c, d) = dom.edge(e);
        !crosses(a, b, c, d)
    });
    let mut label = vec![None; n * n];
    let mut next = 0;
    for start in 0..n * n {
        if !inside[start] || label[start].is_some() {
            continue;
        }
        label[start] = Some(next);
        let mut stack = vec![start];
        while let Some(k) = stack.pop() {
            let (i, j) = (k % n, k / n);
            let mut nbs = Vec::new();
            if i > 0 { nbs.push(k - 1); }
            if i + 1 < n { nbs.push(k + 1); }
            if j > 0 { nbs.push(k - n); }
            if j + 1 < n { nbs.push(k + n); }
            for nb in nbs {
                if inside[nb] && label[nb].is_none() && clear(pt(i, j), pt(nb % n, nb / n)) {
                    label[nb] = Some(next);
                    stack.push(nb);
                }
            }
        }
        next += 1;
    }
    label
}

#[test]
fn split_components_match_flood_fill() {
    let n = 64;
    for h in [0.2, 0.1] {
        let disc = slit(h);
        let (dom, am, space) = (disc.domain(), disc.active(), disc.space());
        let mesh = am.mesh();
        let (kx, ky) = (space.knots_x(), space.knots_y());
        let nbx = kx.n_basis();
        let mut checked = 0;
        for t in 0..space.n_tensor() {
            if space.dof_map().components(t) == 0 {
                continue;
            }
            let (cx, cy) = (kx.support_cells(t % nbx), ky.support_cells(t / nbx));
            let lo = mesh.cell_bounds(mesh.cell_index(*cx.start(), *cy.start())).0;
            let hi = mesh.cell_bounds(mesh.cell_index(*cx.end(), *cy.end())).1;
            let labels = flood_fill(dom, lo, hi, n);
            // flood label → DOF must be a function, and injective
            let mut dof_of: BTreeMap<usize, usize> = BTreeMap::new();
            for (k, l) in labels.iter().enumerate() {
                let Some(l) = *l else { continue };
                let x = Vec2::new(
                    lo.x + (hi.x - lo.x) * ((k % n) as f64 + 0.5) / n as f64,
                    lo.y + (hi.y - lo.y) * ((k / n) as f64 + 0.5) / n as f64,
                );
                let Some((cell, piece)) = am.locate_piece(x) else { continue };
                let slot = space.cell_tensor_indices(cell).iter().position(|&s| s == t).unwrap();
                let dof = space.dof_map().piece_dofs(piece)[slot];
                assert_eq!(*dof_of.entry(l).or_insert(dof), dof, "h={h} t={t}: one region, two DOFs");
            }
            let mut dofs: Vec<usize> = dof_of.values().copied().collect();
            dofs.sort();
            dofs.dedup();
            assert_eq!(dofs.len(), dof_of.len(), "h={h} t={t}: two regions share a DOF");
            checked += (dof_of.len() > 1) as usize;
        }
        assert!(checked > 0, "h={h}: no split function was exercised");
    }
}

#[test]
fn splitting_idempotent_and_monotone() {
    for (omega, h) in [(1.5 * PI, 0.2), (1.5 * PI, 0.1), (0.97 * 2.0 * PI, 0.2), (0.97 * 2.0 * PI, 0.1)] {
        let mut setup = SectorSetup::new(omega, 2);
        setup.split = DofSplit::Off;
        let plain = setup.discretize(h, ShiftSpec::Center.resolve(h)).unwrap();
        let split = plain.space().split_disjoint_supports(plain.active());
        let twice = plain.space().clone().split(plain.active()).split_disjoint_supports(plain.active());
        assert_eq!(split.entries(), twice.entries());
        assert!(split.n_dofs() >= plain.n_dofs());
        if omega <= 1.5 * PI {
            assert_eq!(split.n_dofs(), plain.n_dofs(), "no slit, h={h}");
        } else {
            assert!(split.n_dofs() > plain.n_dofs(), "slit, h={h}");
        }
    }
}

fn star_polygon() -> impl Strategy<Value = PolygonDomain> {
    (0.4f64..1.9, prop::collection::vec((0.0f64..1.0, 0.3f64..0.95), 3..8)).prop_map(|(w, pts)| {
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

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn assembled_systems_symmetric_and_solvable(
        dom in star_polygon(),
        gamma in prop::sample::select(vec![1.0, 2.0, 4.0, 6.0]),
        p in 1usize..=3,
        h in 0.1f64..0.3,
        sx in 0.0f64..1.0,
        sy in 0.0f64..1.0,
    ) {
        let mesh = ReferenceMesh::new(h, Vec2::new(sx * h, sy * h)).unwrap();
        let disc = Discretization::new(dom, GradedMap::new(gamma).unwrap(), &mesh, p, p - 1, DofSplit::Auto).unwrap();
        // on arbitrary cuts the Nitsche penalty has to dominate the largest
        // eigenvalue of B; β = 100 alone goes indefinite for γ = 6 on spiky
        // polygons
        let params = NitscheParams::new(100.0 * gamma.max(1.0 / gamma), 0.1).unwrap();
        let sys = assemble(&disc, &FnProblem::x2y(), params, EXEC);
        prop_assert!(sys.matrix.symmetry_error() <= 1e-12 * sys.matrix.max_abs());
        let r = solve(&sys.matrix, &sys.rhs, 1e-10, SolveMethod::Direct).unwrap();
        // discrete Galerkin consistency
        prop_assert!(r.residual_norm <= 1e-10, "residual {}", r.residual_norm);
    }
}

#[test]
fn direct_and_iterative_agree() {
    let mut configs = Vec::new();
    for gamma in [1.0, 4.0] {
        let mut s = SectorSetup::new(1.5 * PI, 2);
        s.gamma = gamma;
        configs.push((s, 0.1));
    }
    configs.push((SectorSetup::new(0.97 * 2.0 * PI, 2), 0.2));
    for (setup, h) in configs {
        let disc = setup.discretize(h, ShiftSpec::Center.resolve(h)).unwrap();
        let sys = assemble(&disc, &setup.problem().unwrap(), setup.params, EXEC);
        let direct = solve(&sys.matrix, &sys.rhs, 1e-12, SolveMethod::Direct).unwrap().solution;
        let cg = conjugate_gradient(&sys.matrix, &sys.rhs, 1e-14, 50 * sys.n_dofs()).unwrap().solution;
        let diff: Vec<f64> = direct.iter().zip(&cg).map(|(a, b)| a - b).collect();
        let rel = norm(&diff) / norm(&direct);
        assert!(rel <= 1e-8, "gamma={} h={h}: {rel:e}", setup.gamma);
    }
}

#[test]
fn permuted_ordering_gives_same_solution() {
    let setup = SectorSetup::new(1.5 * PI, 2);
    let disc = setup.discretize(0.1, ShiftSpec::Center.resolve(0.1)).unwrap();
    let sys = assemble(&disc, &setup.problem().unwrap(), setup.params, EXEC);
    let u = solve(&sys.matrix, &sys.rhs, 1e-12, SolveMethod::Direct).unwrap().solution;
    let n = sys.n_dofs();
    let mut perms = vec![reverse_cuthill_mckee(&sys.matrix), (0..n).rev().collect::<Vec<_>>()];
    perms.push((0..n).map(|i| (i * 7919) % n).collect());
    for perm in perms {
        let mut sorted = perm.clone();
        sorted.sort();
        if sorted != (0..n).collect::<Vec<_>>() {
            continue;
        }
        let pa = sys.matrix.permuted(&perm);
        let pb: Vec<f64> = perm.iter().map(|&i| sys.rhs[i]).collect();
        let pu = solve(&pa, &pb, 1e-12, SolveMethod::Direct).unwrap().solution;
        let mut back = vec![0.0; n];
        for (new, &old) in perm.iter().enumerate() {
            back[old] = pu[new];
        }
        let diff: Vec<f64> = back.iter().zip(&u).map(|(a, b)| a - b).collect();
        assert!(norm(&diff) <= 1e-10 * norm(&u));
    }
}

#[test]
fn refinement_decreases_errors_and_energy_bounds_h1() {
    for (omega, gamma) in [(1.5 * PI, 4.0), (0.97 * 2.0 * PI, 8.0)] {
        let mut setup = SectorSetup::new(omega, 2);
        setup.gamma = gamma;
        let mut prev: Option<(f64, f64)> = None;
        for h in [0.2, 0.1, 0.05] {
            let r = run_sector(&setup, h, ShiftSpec::Center.resolve(h), EXEC).unwrap().report;
            let bound = gamma.min(1.0 / gamma).sqrt() * r.h1_semi;
            assert!(r.energy >= bound, "energy {} < {bound}", r.energy);
            if let Some((l2, h1)) = prev {
                assert!(r.l2 < l2 && r.h1_semi < h1, "omega={omega} h={h}");
            }
            prev = Some((r.l2, r.h1_semi));
        }
    }
}

#[test]
fn polynomial_solution_reproduced_on_grid_aligned_mesh() {
    // zero shift puts both straight edges on grid lines; x²y lies in the
    // quadratic space, so the discrete solution is exact
    let setup = SectorSetup::new(1.5 * PI, 2);
    let mut ungraded = setup.clone();
    ungraded.gamma = 1.0;
    for shift in [Vec2::zeros(), ShiftSpec::Center.resolve(0.1)] {
        let disc = ungraded.discretize(0.1, shift).unwrap();
        let problem = FnProblem::x2y();
        let sys = assemble(&disc, &problem, setup.params, EXEC);
        let u = solve(&sys.matrix, &sys.rhs, 1e-13, SolveMethod::Direct).unwrap().solution;
        let err = compute_errors(&disc, &u, &problem, setup.params, None, EXEC);
        assert!(err.l2 < 1e-9 && err.h1_semi < 1e-8, "shift {shift:?}: {err:?}");
    }
}
