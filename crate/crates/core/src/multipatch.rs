//! Several patches, each with its own reference mesh and map, coupled weakly
//! by symmetric Nitsche terms across straight interfaces:
//!
//! ```text
//! -(⟨n·∇v⟩, [w])_Γ - ([v], ⟨n·∇w⟩)_Γ + β (⟨h_Ω⁻¹⟩ [v], [w])_Γ
//! ```
//!
//! with `⟨a⟩ = (a₁ + a₂)/2`, `[v] = v₁ - v₂`, side 1 the lower patch index and
//! `n` pointing out of side 1. Interface terms live in physical coordinates;
//! everything inside a patch is assembled in its reference domain.

use serde::{Deserialize, Serialize};

use crate::analysis::{compute_errors, ShiftSpec};
use crate::assembly::{assemble, Discretization, DofSplit, NitscheParams};
use crate::geometry::{gauss_legendre, EdgeKind, PolygonDomain, ReferenceMesh};
use crate::mapping::{GradedMap, Similarity};
use crate::par::{self, Execution};
use crate::problems::{ExactSolution, Problem};
use crate::solver::{solve, SolveMethod};
use crate::sparse::{CsrMatrix, Triplets};
use crate::{Error, Result, Vec2};

/// Segments per physical edge when a graded patch bends it in the reference
/// domain.
const CURVED_EDGE_SEGMENTS: usize = 1024;
/// Gauss points per interface sub-interval, on top of the degree.
const INTERFACE_EXTRA_POINTS: usize = 3;

/// One patch in physical coordinates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PatchSpec {
    /// Counterclockwise physical vertices.
    pub vertices: Vec<[f64; 2]>,
    /// Vertex at the singular corner; required when `gamma != 1`.
    #[serde(default)]
    pub corner_index: Option<usize>,
    #[serde(default = "one")]
    pub gamma: f64,
    /// Edges shared with other patches; all others carry Dirichlet data.
    #[serde(default)]
    pub interface_edges: Vec<usize>,
}

fn one() -> f64 {
    1.0
}

/// Straight interface between two patches.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InterfaceSpec {
    pub patches: [usize; 2],
    pub a: [f64; 2],
    pub b: [f64; 2],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PatchSetSpec {
    pub patches: Vec<PatchSpec>,
    #[serde(default)]
    pub interfaces: Vec<InterfaceSpec>,
}

impl PatchSetSpec {
    /// Inverted T: the bar `[-1,2]×[-1,0]` below the stem `[0,1]×[0,1]`,
    /// with reentrant corners at `(0,0)` and `(1,0)`. Two L-shaped patches
    /// each hold one corner and a square on top holds the rest of the stem.
    pub fn inverted_t(gamma: f64) -> Self {
        let v = |pts: &[(f64, f64)]| pts.iter().map(|&(x, y)| [x, y]).collect::<Vec<_>>();
        PatchSetSpec {
            patches: vec![
                PatchSpec {
                    vertices: v(&[(-1.0, -1.0), (0.5, -1.0), (0.5, 0.5), (0.0, 0.5), (0.0, 0.0), (-1.0, 0.0)]),
                    corner_index: Some(4),
                    gamma,
                    interface_edges: vec![1, 2],
                },
                PatchSpec {
                    vertices: v(&[(0.5, -1.0), (2.0, -1.0), (2.0, 0.0), (1.0, 0.0), (1.0, 0.5), (0.5, 0.5)]),
                    corner_index: Some(3),
                    gamma,
                    interface_edges: vec![4, 5],
                },
                PatchSpec {
                    vertices: v(&[(0.0, 0.5), (1.0, 0.5), (1.0, 1.0), (0.0, 1.0)]),
                    corner_index: None,
                    gamma: 1.0,
                    interface_edges: vec![0],
                },
            ],
            interfaces: vec![
                InterfaceSpec { patches: [0, 1], a: [0.5, -1.0], b: [0.5, 0.5] },
                InterfaceSpec { patches: [0, 2], a: [0.0, 0.5], b: [0.5, 0.5] },
                InterfaceSpec { patches: [1, 2], a: [0.5, 0.5], b: [1.0, 0.5] },
            ],
        }
    }

    /// Unit square as a single ungraded patch.
    pub fn unit_square() -> Self {
        PatchSetSpec {
            patches: vec![PatchSpec {
                vertices: vec![[0.0, 0.0], [1.0, 0.0], [1.0, 1.0], [0.0, 1.0]],
                corner_index: None,
                gamma: 1.0,
                interface_edges: vec![],
            }],
            interfaces: vec![],
        }
    }

    /// Unit square split at `x = 1/2` into two ungraded patches.
    pub fn split_unit_square() -> Self {
        PatchSetSpec {
            patches: vec![
                PatchSpec {
                    vertices: vec![[0.0, 0.0], [0.5, 0.0], [0.5, 1.0], [0.0, 1.0]],
                    corner_index: None,
                    gamma: 1.0,
                    interface_edges: vec![1],
                },
                PatchSpec {
                    vertices: vec![[0.5, 0.0], [1.0, 0.0], [1.0, 1.0], [0.5, 1.0]],
                    corner_index: None,
                    gamma: 1.0,
                    interface_edges: vec![3],
                },
            ],
            interfaces: vec![InterfaceSpec { patches: [0, 1], a: [0.5, 0.0], b: [0.5, 1.0] }],
        }
    }
}

/// Boundary data for [`PatchSetSpec::inverted_t`]: `g = x(1-x)` on the top
/// edge `y = 1`, zero elsewhere, no source.
#[derive(Debug, Clone, Copy, Default)]
pub struct TopEdgeProblem;

impl Problem for TopEdgeProblem {
    fn source(&self, _x: Vec2) -> f64 {
        0.0
    }

    fn dirichlet(&self, x: Vec2) -> f64 {
        if x.y >= 1.0 - 1e-9 {
            x.x * (1.0 - x.x)
        } else {
            0.0
        }
    }
}

/// A discretized patch.
#[derive(Debug, Clone)]
pub struct Patch {
    physical: Vec<Vec2>,
    kinds: Vec<EdgeKind>,
    disc: Discretization,
    offset: usize,
}

impl Patch {
    pub fn discretization(&self) -> &Discretization {
        &self.disc
    }

    /// First global DOF of this patch.
    pub fn offset(&self) -> usize {
        self.offset
    }

    pub fn physical_vertices(&self) -> &[Vec2] {
        &self.physical
    }

    fn dof_range(&self) -> std::ops::Range<usize> {
        self.offset..self.offset + self.disc.n_dofs()
    }

    fn edge(&self, i: usize) -> (Vec2, Vec2) {
        (self.physical[i], self.physical[(i + 1) % self.physical.len()])
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Interface {
    /// `patches[0] < patches[1]`.
    pub patches: [usize; 2],
    pub a: Vec2,
    pub b: Vec2,
    /// Unit normal pointing out of `patches[0]`.
    pub normal: Vec2,
}

/// Patches and interfaces on a common reference mesh size.
#[derive(Debug, Clone)]
pub struct PatchSet {
    patches: Vec<Patch>,
    interfaces: Vec<Interface>,
    n_dofs: usize,
}

fn distance_to_segment(p: Vec2, a: Vec2, b: Vec2) -> f64 {
    let d = b - a;
    let t = ((p - a).dot(&d) / d.norm_squared()).clamp(0.0, 1.0);
    (a + d * t - p).norm()
}

fn patch_map(spec: &PatchSpec, vertices: &[Vec2]) -> Result<GradedMap> {
    let map = GradedMap::new(spec.gamma)?;
    match spec.corner_index {
        Some(k) => {
            let c = vertices[k];
            let r = vertices.iter().map(|v| (v - c).norm()).fold(0.0, f64::max);
            map.with_similarity(Similarity::new(c, 0.0, 1.05 * r)?)
        }
        None => {
            let (mut lo, mut hi) = (vertices[0], vertices[0]);
            for v in vertices {
                lo = lo.inf(v);
                hi = hi.sup(v);
            }
            let half = 0.5 * (hi - lo).max();
            map.with_similarity(Similarity::new(0.5 * (lo + hi), 0.0, half / 0.95)?)
        }
    }
}

/// Reference polygon of a patch: the inverse image of its edges, sampled
/// densely where the grading bends them.
fn reference_polygon(spec: &PatchSpec, vertices: &[Vec2], map: &GradedMap) -> Result<PolygonDomain> {
    let n = vertices.len();
    let corner = spec.corner_index.map(|k| vertices[k]);
    let mut out = Vec::new();
    let mut kinds = Vec::new();
    let mut corner_index = None;
    for i in 0..n {
        let (a, b) = (vertices[i], vertices[(i + 1) % n]);
        let kind = if spec.interface_edges.contains(&i) {
            EdgeKind::Interface
        } else {
            EdgeKind::Boundary
        };
        let radial = match corner {
            Some(c) if spec.gamma != 1.0 => {
                let (u, w) = (a - c, b - c);
                (u.x * w.y - u.y * w.x).abs() <= 1e-14 * (u.norm() + w.norm()).powi(2)
            }
            _ => true,
        };
        let segments = if radial { 1 } else { CURVED_EDGE_SEGMENTS };
        for s in 0..segments {
            if s == 0 && Some(i) == spec.corner_index {
                corner_index = Some(out.len());
                out.push(Vec2::zeros());
            } else {
                out.push(map.inverse(a + (b - a) * (s as f64 / segments as f64)));
            }
            kinds.push(kind);
        }
    }
    PolygonDomain::with_edge_kinds(out, corner_index, kinds)
}

impl PatchSet {
    /// Discretizes every patch with reference mesh size `h` and checks that
    /// the interfaces match the patch edges.
    pub fn new(spec: &PatchSetSpec, h: f64, p: usize, regularity: usize, split: DofSplit) -> Result<Self> {
        if spec.patches.is_empty() {
            return Err(Error::param("patches", "at least one patch is required"));
        }
        let mut patches = Vec::with_capacity(spec.patches.len());
        let mut offset = 0;
        for (k, ps) in spec.patches.iter().enumerate() {
            let physical: Vec<Vec2> = ps.vertices.iter().map(|&v| Vec2::from(v)).collect();
            if physical.len() < 3 {
                return Err(Error::Geometry(format!("patch {k} needs at least 3 vertices")));
            }
            if let Some(&e) = ps.interface_edges.iter().find(|&&e| e >= physical.len()) {
                return Err(Error::Geometry(format!("patch {k}: interface edge {e} out of range")));
            }
            match ps.corner_index {
                Some(c) if c >= physical.len() => {
                    return Err(Error::Geometry(format!("patch {k}: corner_index {c} out of range")))
                }
                None if ps.gamma != 1.0 => {
                    return Err(Error::Geometry(format!("patch {k}: a graded patch needs corner_index")))
                }
                _ => {}
            }
            let map = patch_map(ps, &physical)?;
            let domain = reference_polygon(ps, &physical, &map)?;
            let mesh = ReferenceMesh::new(h, ShiftSpec::Center.resolve(h))?;
            let disc = Discretization::new(domain, map, &mesh, p, regularity, split)?;
            let kinds = (0..physical.len())
                .map(|i| {
                    if ps.interface_edges.contains(&i) {
                        EdgeKind::Interface
                    } else {
                        EdgeKind::Boundary
                    }
                })
                .collect();
            let n = disc.n_dofs();
            patches.push(Patch {
                physical,
                kinds,
                disc,
                offset,
            });
            offset += n;
        }
        let interfaces = spec
            .interfaces
            .iter()
            .map(|i| check_interface(&patches, i))
            .collect::<Result<Vec<_>>>()?;
        for (k, patch) in patches.iter().enumerate() {
            for e in 0..patch.physical.len() {
                if patch.kinds[e] != EdgeKind::Interface {
                    continue;
                }
                let (a, b) = patch.edge(e);
                let mid = 0.5 * (a + b);
                let tol = 1e-9 * (1.0 + (b - a).norm());
                if !interfaces
                    .iter()
                    .any(|i| i.patches.contains(&k) && distance_to_segment(mid, i.a, i.b) <= tol)
                {
                    return Err(Error::InterfaceMismatch(format!(
                        "interface edge {e} of patch {k} is not covered by any interface"
                    )));
                }
            }
        }
        Ok(PatchSet {
            patches,
            interfaces,
            n_dofs: offset,
        })
    }

    pub fn patches(&self) -> &[Patch] {
        &self.patches
    }

    pub fn interfaces(&self) -> &[Interface] {
        &self.interfaces
    }

    pub fn n_dofs(&self) -> usize {
        self.n_dofs
    }

    /// Coefficients of patch `k` within a global vector.
    pub fn patch_coefficients<'a>(&self, k: usize, u: &'a [f64]) -> &'a [f64] {
        &u[self.patches[k].dof_range()]
    }
}

/// The interface must lie on an interface edge of both patches, with
/// opposite outward normals.
fn check_interface(patches: &[Patch], spec: &InterfaceSpec) -> Result<Interface> {
    let [i, j] = spec.patches;
    if i == j || i.max(j) >= patches.len() {
        return Err(Error::InterfaceMismatch(format!("invalid patch pair ({i}, {j})")));
    }
    let (i, j) = (i.min(j), i.max(j));
    let (a, b) = (Vec2::from(spec.a), Vec2::from(spec.b));
    if (b - a).norm() == 0.0 {
        return Err(Error::InterfaceMismatch("interface has zero length".into()));
    }
    let tol = 1e-9 * (1.0 + (b - a).norm());
    let outward = |k: usize| -> Result<Vec2> {
        let patch = &patches[k];
        for e in 0..patch.physical.len() {
            if patch.kinds[e] != EdgeKind::Interface {
                continue;
            }
            let (p, q) = patch.edge(e);
            let on_edge = (0..=4).all(|s| distance_to_segment(a + (b - a) * (s as f64 / 4.0), p, q) <= tol);
            if on_edge {
                let d = (q - p).normalize();
                return Ok(Vec2::new(d.y, -d.x));
            }
        }
        Err(Error::InterfaceMismatch(format!(
            "segment ({}, {})-({}, {}) does not lie on an interface edge of patch {k}",
            a.x, a.y, b.x, b.y
        )))
    };
    let n0 = outward(i)?;
    let n1 = outward(j)?;
    if (n0 + n1).norm() > 1e-9 {
        return Err(Error::InterfaceMismatch(format!(
            "patches {i} and {j} lie on the same side of their interface"
        )));
    }
    Ok(Interface {
        patches: [i, j],
        a,
        b,
        normal: n0,
    })
}

/// Trace of one side at a physical interface point.
struct SideEval {
    dofs: Vec<usize>,
    values: Vec<f64>,
    /// `n·∇v` in physical coordinates.
    flux: Vec<f64>,
    /// Physical mesh size `h_Ω` at the point.
    h_phys: f64,
}

fn side_eval(patch: &Patch, x: Vec2, normal: Vec2) -> Result<SideEval> {
    let disc = &patch.disc;
    let q = disc.map().inverse(x);
    let (cell, piece) = disc
        .active()
        .nearest_piece(q, 1e-3 * disc.h())
        .ok_or_else(|| Error::InterfaceMismatch(format!("interface point ({}, {}) is outside a patch mesh", x.x, x.y)))?;
    let e = disc.space().eval_in_piece(cell, piece, q, 1);
    let n = e.local_dofs.len();
    let flux = (0..n)
        .map(|l| normal.dot(&disc.map().physical_gradient(q, e.grad(l))))
        .collect();
    Ok(SideEval {
        dofs: e.local_dofs.iter().map(|d| d + patch.offset).collect(),
        values: e.values().to_vec(),
        flux,
        h_phys: disc.map().mesh_function(disc.h(), q),
    })
}

fn cell_at(patch: &Patch, x: Vec2) -> (usize, usize) {
    let q = patch.disc.map().inverse(x);
    let m = patch.disc.active().mesh();
    (m.column_of(q.x), m.row_of(q.y))
}

/// Physical quadrature `(point, weight)` on an interface, split where either
/// side crosses a reference grid line.
fn interface_quadrature(set: &PatchSet, iface: &Interface) -> Vec<(Vec2, f64)> {
    let at = |t: f64| iface.a + (iface.b - iface.a) * t;
    let sides = [&set.patches[iface.patches[0]], &set.patches[iface.patches[1]]];
    let mut samples = 16usize;
    for patch in sides {
        let mut len = 0.0;
        let mut prev = patch.disc.map().inverse(at(0.0));
        for k in 1..=256 {
            let q = patch.disc.map().inverse(at(k as f64 / 256.0));
            len += (q - prev).norm();
            prev = q;
        }
        samples = samples.max((16.0 * len / patch.disc.h()).ceil() as usize);
    }
    let mut breaks = vec![0.0, 1.0];
    for patch in sides {
        let mut t0 = 0.0;
        let mut c0 = cell_at(patch, at(0.0));
        for k in 1..=samples {
            let t1 = k as f64 / samples as f64;
            let c1 = cell_at(patch, at(t1));
            if c1 != c0 {
                let (mut lo, mut hi) = (t0, t1);
                for _ in 0..60 {
                    let mid = 0.5 * (lo + hi);
                    if cell_at(patch, at(mid)) == c0 {
                        lo = mid;
                    } else {
                        hi = mid;
                    }
                }
                breaks.push(0.5 * (lo + hi));
            }
            t0 = t1;
            c0 = c1;
        }
    }
    breaks.sort_by(f64::total_cmp);
    breaks.dedup_by(|a, b| (*a - *b).abs() < 1e-13);
    let p = set.patches.iter().map(|p| p.disc.degree()).max().unwrap_or(1);
    let (gx, gw) = gauss_legendre(p + INTERFACE_EXTRA_POINTS);
    let len = (iface.b - iface.a).norm();
    let mut out = Vec::new();
    for w in breaks.windows(2) {
        let (t0, t1) = (w[0], w[1]);
        for (x, wt) in gx.iter().zip(&gw) {
            out.push((at(t0 + (t1 - t0) * x), wt * (t1 - t0) * len));
        }
    }
    out
}

fn interface_terms(set: &PatchSet, params: NitscheParams, t: &mut Triplets) -> Result<()> {
    for iface in &set.interfaces {
        let [i, j] = iface.patches;
        for (x, w) in interface_quadrature(set, iface) {
            let s1 = side_eval(&set.patches[i], x, iface.normal)?;
            let s2 = side_eval(&set.patches[j], x, iface.normal)?;
            let pen = params.beta * 0.5 * (1.0 / s1.h_phys + 1.0 / s2.h_phys);
            let dofs: Vec<usize> = s1.dofs.iter().chain(&s2.dofs).copied().collect();
            let jump: Vec<f64> = s1.values.iter().copied().chain(s2.values.iter().map(|v| -v)).collect();
            let avg: Vec<f64> = s1.flux.iter().chain(&s2.flux).map(|f| 0.5 * f).collect();
            for (l, &gl) in dofs.iter().enumerate() {
                for (m, &gm) in dofs.iter().enumerate() {
                    let v = -avg[l] * jump[m] - jump[l] * avg[m] + pen * jump[l] * jump[m];
                    if v != 0.0 {
                        t.push(gl, gm, w * v);
                    }
                }
            }
        }
    }
    Ok(())
}

/// Block system over all patches.
#[derive(Debug, Clone)]
pub struct MultipatchSystem {
    pub matrix: CsrMatrix,
    pub rhs: Vec<f64>,
}

/// Per-patch systems on the diagonal blocks plus the interface coupling.
pub fn assemble_multipatch(
    set: &PatchSet,
    problem: &dyn Problem,
    params: NitscheParams,
    exec: Execution,
) -> Result<MultipatchSystem> {
    let systems = par::map_collect(exec, &set.patches, |p| assemble(&p.disc, problem, params, exec));
    let mut t = Triplets::new(set.n_dofs);
    let mut rhs = vec![0.0; set.n_dofs];
    for (patch, sys) in set.patches.iter().zip(&systems) {
        for r in 0..sys.matrix.dim() {
            let (cols, vals) = sys.matrix.row(r);
            for (&c, &v) in cols.iter().zip(vals) {
                t.push(r + patch.offset, c + patch.offset, v);
            }
            rhs[r + patch.offset] = sys.rhs[r];
        }
    }
    interface_terms(set, params, &mut t)?;
    Ok(MultipatchSystem {
        matrix: t.to_csr(),
        rhs,
    })
}

/// `‖u₁ - u₂‖_{L²(Γ)}` over all interfaces.
pub fn interface_jump_norm(set: &PatchSet, u: &[f64]) -> Result<f64> {
    let mut sum = 0.0;
    for iface in &set.interfaces {
        let [i, j] = iface.patches;
        for (x, w) in interface_quadrature(set, iface) {
            let s1 = side_eval(&set.patches[i], x, iface.normal)?;
            let s2 = side_eval(&set.patches[j], x, iface.normal)?;
            let v1: f64 = s1.dofs.iter().zip(&s1.values).map(|(&d, v)| v * u[d]).sum();
            let v2: f64 = s2.dofs.iter().zip(&s2.values).map(|(&d, v)| v * u[d]).sum();
            sum += w * (v1 - v2).powi(2);
        }
    }
    Ok(sum.sqrt())
}

/// Result of one multipatch solve.
#[derive(Debug, Clone, Serialize)]
pub struct MultipatchRun {
    pub h: f64,
    pub n_dofs: usize,
    pub interface_jump: f64,
    /// Errors summed over patches, when the exact solution is known.
    pub l2: Option<f64>,
    pub h1_semi: Option<f64>,
    pub residual: f64,
    #[serde(skip)]
    pub solution: Vec<f64>,
}

pub fn run_multipatch(
    set: &PatchSet,
    problem: &dyn Problem,
    params: NitscheParams,
    method: SolveMethod,
    tol: f64,
    exec: Execution,
) -> Result<MultipatchRun> {
    let sys = assemble_multipatch(set, problem, params, exec)?;
    let sol = solve(&sys.matrix, &sys.rhs, tol, method)?;
    let errors = problem.exact().map(|exact: &dyn ExactSolution| {
        let (mut l2, mut h1) = (0.0, 0.0);
        for (k, patch) in set.patches.iter().enumerate() {
            let r = compute_errors(&patch.disc, set.patch_coefficients(k, &sol.solution), exact, params, None, exec);
            l2 += r.l2 * r.l2;
            h1 += r.h1_semi * r.h1_semi;
        }
        (l2.sqrt(), h1.sqrt())
    });
    Ok(MultipatchRun {
        h: set.patches[0].disc.h(),
        n_dofs: set.n_dofs,
        interface_jump: interface_jump_norm(set, &sol.solution)?,
        l2: errors.map(|e| e.0),
        h1_semi: errors.map(|e| e.1),
        residual: sol.residual_norm,
        solution: sol.solution,
    })
}
