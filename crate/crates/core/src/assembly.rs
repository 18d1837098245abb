//! Assembly of the reference-domain Nitsche system
//!
//! ```text
//! a(v,w) = (∇v, B∇w) - (n·B∇v, w) - (v, n·B∇w) + β/h (v, w)
//! s(v,w) = Σ_{j=1..p} τ h^{2j-1} ([D^j v], [D^j w])_faces
//! l(v)   = (det J · f∘F, v) + (g∘F, β/h v - n·B∇v)
//! ```
//!
//! with `h` the uniform reference mesh size. Element contributions are
//! computed independently (in parallel when enabled) and inserted in a fixed
//! order, so the assembled matrix does not depend on the thread count.

use serde::{Deserialize, Serialize};

use crate::geometry::{
    classify_elements, ActiveMesh, Face, PolygonDomain, QuadratureCell, ReferenceMesh,
};
use crate::mapping::GradedMap;
use crate::par::{self, Execution};
use crate::problems::Problem;
use crate::sparse::{CsrMatrix, Triplets};
use crate::spaces::{multi_index, DofMap, SplineSpace};
use crate::{Error, Result, Vec2};

/// Subdivision levels toward the corner in assembly quadrature.
const ASSEMBLY_CORNER_LEVELS: usize = 12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NitscheParams {
    pub beta: f64,
    pub tau: f64,
}

impl Default for NitscheParams {
    fn default() -> Self {
        NitscheParams { beta: 100.0, tau: 0.1 }
    }
}

impl NitscheParams {
    pub fn new(beta: f64, tau: f64) -> Result<Self> {
        if !(beta > 0.0 && beta.is_finite()) {
            return Err(Error::param("beta", format!("must be positive, got {beta}")));
        }
        if !(tau >= 0.0 && tau.is_finite()) {
            return Err(Error::param("tau", format!("must be nonnegative, got {tau}")));
        }
        Ok(NitscheParams { beta, tau })
    }
}

/// Whether basis functions with disconnected support get one unknown per
/// component.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DofSplit {
    Off,
    On,
    /// On when some active cell contains more than one piece of the domain.
    #[default]
    Auto,
}

impl std::str::FromStr for DofSplit {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "off" => Ok(DofSplit::Off),
            "on" => Ok(DofSplit::On),
            "auto" => Ok(DofSplit::Auto),
            _ => Err(Error::param("fix", format!("expected on, off or auto, got `{s}`"))),
        }
    }
}

/// Domain, map, active mesh and spline space of one patch.
#[derive(Debug, Clone)]
pub struct Discretization {
    domain: PolygonDomain,
    map: GradedMap,
    active: ActiveMesh,
    space: SplineSpace,
    order: usize,
}

impl Discretization {
    pub fn new(
        domain: PolygonDomain,
        map: GradedMap,
        mesh: &ReferenceMesh,
        p: usize,
        r: usize,
        split: DofSplit,
    ) -> Result<Self> {
        if map.gamma() != 1.0 && domain.corner_index().is_none() {
            return Err(Error::Geometry(
                "a graded map needs a domain with its corner at the origin".into(),
            ));
        }
        let active = classify_elements(mesh, &domain)?;
        let mut space = SplineSpace::new(&active, p, r)?;
        let do_split = match split {
            DofSplit::Off => false,
            DofSplit::On => true,
            DofSplit::Auto => active
                .active_cells()
                .iter()
                .any(|&c| active.cell_pieces(c).len() > 1),
        };
        if do_split {
            space = space.split(&active);
        }
        Ok(Discretization {
            domain,
            map,
            active,
            space,
            order: p + 2,
        })
    }

    /// Gauss points per direction for volume and boundary integrals.
    pub fn with_order(mut self, order: usize) -> Self {
        self.order = order.max(1);
        self
    }

    pub fn domain(&self) -> &PolygonDomain {
        &self.domain
    }

    pub fn map(&self) -> &GradedMap {
        &self.map
    }

    pub fn active(&self) -> &ActiveMesh {
        &self.active
    }

    pub fn space(&self) -> &SplineSpace {
        &self.space
    }

    pub fn dof_map(&self) -> &DofMap {
        self.space.dof_map()
    }

    pub fn n_dofs(&self) -> usize {
        self.space.n_dofs()
    }

    pub fn degree(&self) -> usize {
        self.space.degree()
    }

    pub fn h(&self) -> f64 {
        self.active.h()
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn is_split(&self) -> bool {
        self.space.dof_map().is_split()
    }

    fn corner(&self) -> Option<Vec2> {
        self.domain.corner_index().map(|k| self.domain.vertices()[k])
    }

    /// Volume quadrature of `cell` with `order` points per direction,
    /// subdivided `levels` times toward the corner.
    pub fn volume_quadrature(&self, cell: usize, order: usize, levels: usize) -> Result<QuadratureCell> {
        let singular = self.corner().filter(|_| levels > 0).map(|c| (c, levels));
        self.active.graded_clip(cell, order, singular)
    }

    /// Active cells carrying volume quadrature (slivers excluded).
    pub fn quadrature_cells(&self) -> Vec<usize> {
        self.active
            .active_cells()
            .iter()
            .copied()
            .filter(|&c| !self.active.is_sliver(c))
            .collect()
    }

    /// Face/piece pairs stabilized by the ghost penalty. Without DOF
    /// splitting every ghost face contributes once; with splitting only the
    /// piece pairs connected through the face do.
    pub fn ghost_pairs(&self) -> Vec<(&Face, usize, usize)> {
        let mut out = Vec::new();
        for f in self.active.ghost_faces() {
            if self.is_split() {
                for &(a, b) in &f.links {
                    out.push((f, a, b));
                }
            } else {
                let a = self.active.cell_pieces(f.cells[0]).start;
                let b = self.active.cell_pieces(f.cells[1]).start;
                out.push((f, a, b));
            }
        }
        out
    }
}

/// Dense local contribution on a list of global DOFs.
#[derive(Debug, Clone)]
pub struct LocalBlock {
    pub dofs: Vec<usize>,
    /// Row-major `dofs.len()²`.
    pub matrix: Vec<f64>,
    pub rhs: Vec<f64>,
}

impl LocalBlock {
    fn new(dofs: Vec<usize>) -> Self {
        let n = dofs.len();
        LocalBlock {
            dofs,
            matrix: vec![0.0; n * n],
            rhs: vec![0.0; n],
        }
    }

    fn add_sym(&mut self, l: usize, m: usize, v: f64) {
        let n = self.dofs.len();
        self.matrix[l * n + m] += v;
        if l != m {
            self.matrix[m * n + l] += v;
        }
    }
}

fn insert(blocks: impl IntoIterator<Item = LocalBlock>, t: &mut Triplets, rhs: &mut [f64]) {
    for b in blocks {
        let n = b.dofs.len();
        for (l, &i) in b.dofs.iter().enumerate() {
            for (m, &j) in b.dofs.iter().enumerate() {
                let v = b.matrix[l * n + m];
                if v != 0.0 {
                    t.push(i, j, v);
                }
            }
            rhs[i] += b.rhs[l];
        }
    }
}

/// Assembled system `A u = b` of one discretization.
#[derive(Debug, Clone)]
pub struct AssembledSystem {
    pub matrix: CsrMatrix,
    pub rhs: Vec<f64>,
    pub dof_map: DofMap,
    pub params: NitscheParams,
}

impl AssembledSystem {
    pub fn n_dofs(&self) -> usize {
        self.rhs.len()
    }
}

fn volume_blocks(disc: &Discretization, cell: usize) -> Vec<LocalBlock> {
    let q = disc
        .volume_quadrature(cell, disc.order, ASSEMBLY_CORNER_LEVELS)
        .expect("quadrature cells are active and not slivers");
    let space = disc.space();
    let mut blocks: Vec<(usize, LocalBlock)> = Vec::new();
    for ((x, w), &piece) in q.points.iter().zip(&q.weights).zip(&q.pieces) {
        let k = match blocks.iter().position(|(p, _)| *p == piece) {
            Some(k) => k,
            None => {
                blocks.push((piece, LocalBlock::new(space.dof_map().piece_dofs(piece).to_vec())));
                blocks.len() - 1
            }
        };
        let block = &mut blocks[k].1;
        let d = space.eval_local(cell, *x, 1);
        let b = disc.map().b_matrix(*x);
        let n = d[0].len();
        for l in 0..n {
            let gl = Vec2::new(d[1][l], d[2][l]);
            let bgl = b * gl;
            for m in l..n {
                let gm = Vec2::new(d[1][m], d[2][m]);
                block.add_sym(l, m, w * bgl.dot(&gm));
            }
        }
    }
    blocks.into_iter().map(|(_, b)| b).collect()
}

/// Stiffness `(∇v, B∇w)` over the domain.
pub fn assemble_volume(disc: &Discretization, exec: Execution) -> Triplets {
    let cells = disc.quadrature_cells();
    let blocks = par::map_collect(exec, &cells, |&c| volume_blocks(disc, c));
    let mut t = Triplets::new(disc.n_dofs());
    let mut scratch = vec![0.0; disc.n_dofs()];
    insert(blocks.into_iter().flatten(), &mut t, &mut scratch);
    t
}

fn boundary_blocks(
    disc: &Discretization,
    params: NitscheParams,
    g: &(dyn Fn(Vec2) -> f64 + Sync),
    cell: usize,
) -> Vec<LocalBlock> {
    let q = match disc.active().boundary_quadrature(cell, disc.order) {
        Ok(q) => q,
        Err(_) => return Vec::new(),
    };
    let space = disc.space();
    let pen = params.beta / disc.h();
    let mut blocks: Vec<(usize, LocalBlock)> = Vec::new();
    for i in 0..q.len() {
        let (x, w, nrm, piece) = (q.points[i], q.weights[i], q.normals[i], q.pieces[i]);
        let k = match blocks.iter().position(|(p, _)| *p == piece) {
            Some(k) => k,
            None => {
                blocks.push((piece, LocalBlock::new(space.dof_map().piece_dofs(piece).to_vec())));
                blocks.len() - 1
            }
        };
        let block = &mut blocks[k].1;
        let d = space.eval_local(cell, x, 1);
        let bn = disc.map().b_matrix(x) * nrm;
        let gv = g(disc.map().forward(x));
        let n = d[0].len();
        let flux: Vec<f64> = (0..n).map(|l| bn.x * d[1][l] + bn.y * d[2][l]).collect();
        for l in 0..n {
            for m in l..n {
                let v = -flux[l] * d[0][m] - d[0][l] * flux[m] + pen * d[0][l] * d[0][m];
                block.add_sym(l, m, w * v);
            }
            block.rhs[l] += w * gv * (pen * d[0][l] - flux[l]);
        }
    }
    blocks.into_iter().map(|(_, b)| b).collect()
}

/// Nitsche boundary terms and their right-hand side for Dirichlet data `g`
/// given in physical coordinates.
pub fn assemble_nitsche_boundary(
    disc: &Discretization,
    params: NitscheParams,
    g: &(dyn Fn(Vec2) -> f64 + Sync),
    exec: Execution,
) -> (Triplets, Vec<f64>) {
    let cells = disc.active().boundary_cells();
    let blocks = par::map_collect(exec, &cells, |&c| boundary_blocks(disc, params, g, c));
    let mut t = Triplets::new(disc.n_dofs());
    let mut rhs = vec![0.0; disc.n_dofs()];
    insert(blocks.into_iter().flatten(), &mut t, &mut rhs);
    (t, rhs)
}

fn binomial(n: usize, k: usize) -> f64 {
    (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64)
}

fn ghost_block(disc: &Discretization, params: NitscheParams, face: &Face, pa: usize, pb: usize) -> LocalBlock {
    let space = disc.space();
    let p = space.degree();
    let h = disc.h();
    let mut dofs = space.dof_map().piece_dofs(pa).to_vec();
    dofs.extend_from_slice(space.dof_map().piece_dofs(pb));
    let nl = space.n_local();
    let mut block = LocalBlock::new(dofs);
    let (gn, gw) = crate::geometry::gauss_legendre(p + 1);
    let len = face.length();
    let mut jump = vec![0.0; 2 * nl];
    for (t, wt) in gn.iter().zip(&gw) {
        let x = face.a + (face.b - face.a) * *t;
        let da = space.eval_local(face.cells[0], x, p);
        let db = space.eval_local(face.cells[1], x, p);
        for j in 1..=p {
            let scale = params.tau * h.powi(2 * j as i32 - 1) * wt * len;
            for b in 0..=j {
                let a = j - b;
                let mi = multi_index(a, b);
                for l in 0..nl {
                    jump[l] = da[mi][l];
                    jump[nl + l] = -db[mi][l];
                }
                let c = scale * binomial(j, a);
                for l in 0..2 * nl {
                    if jump[l] == 0.0 {
                        continue;
                    }
                    for m in l..2 * nl {
                        block.add_sym(l, m, c * jump[l] * jump[m]);
                    }
                }
            }
        }
    }
    block
}

/// Ghost penalty on the faces next to cut cells.
pub fn assemble_ghost_penalty(disc: &Discretization, params: NitscheParams, exec: Execution) -> Triplets {
    let pairs = disc.ghost_pairs();
    let blocks = par::map_collect(exec, &pairs, |&(f, a, b)| ghost_block(disc, params, f, a, b));
    let mut t = Triplets::new(disc.n_dofs());
    let mut scratch = vec![0.0; disc.n_dofs()];
    insert(blocks, &mut t, &mut scratch);
    t
}

fn load_blocks(disc: &Discretization, f: &(dyn Fn(Vec2) -> f64 + Sync), cell: usize) -> Vec<(usize, f64)> {
    let q = disc
        .volume_quadrature(cell, disc.order, ASSEMBLY_CORNER_LEVELS)
        .expect("quadrature cells are active and not slivers");
    let space = disc.space();
    let mut out: Vec<(usize, f64)> = Vec::new();
    let mut acc: Vec<(usize, Vec<f64>)> = Vec::new();
    for ((x, w), &piece) in q.points.iter().zip(&q.weights).zip(&q.pieces) {
        let fx = f(disc.map().forward(*x));
        if fx == 0.0 {
            continue;
        }
        let k = match acc.iter().position(|(p, _)| *p == piece) {
            Some(k) => k,
            None => {
                acc.push((piece, vec![0.0; space.n_local()]));
                acc.len() - 1
            }
        };
        let d = space.eval_local(cell, *x, 0);
        let s = w * disc.map().load_weight(*x) * fx;
        for (l, v) in d[0].iter().enumerate() {
            acc[k].1[l] += s * v;
        }
    }
    for (piece, vals) in acc {
        for (l, v) in vals.into_iter().enumerate() {
            out.push((space.dof_map().piece_dofs(piece)[l], v));
        }
    }
    out
}

/// Load `(det J · f∘F, v)` for a source `f` in physical coordinates.
pub fn assemble_load(disc: &Discretization, f: &(dyn Fn(Vec2) -> f64 + Sync), exec: Execution) -> Vec<f64> {
    let cells = disc.quadrature_cells();
    let parts = par::map_collect(exec, &cells, |&c| load_blocks(disc, f, c));
    let mut rhs = vec![0.0; disc.n_dofs()];
    for (i, v) in parts.into_iter().flatten() {
        rhs[i] += v;
    }
    rhs
}

/// Full system for `problem` on `disc`.
pub fn assemble(
    disc: &Discretization,
    problem: &dyn Problem,
    params: NitscheParams,
    exec: Execution,
) -> AssembledSystem {
    let mut t = assemble_volume(disc, exec);
    let g = |x: Vec2| problem.dirichlet(x);
    let (tb, mut rhs) = assemble_nitsche_boundary(disc, params, &g, exec);
    t.extend(tb);
    t.extend(assemble_ghost_penalty(disc, params, exec));
    let f = |x: Vec2| problem.source(x);
    for (r, v) in rhs.iter_mut().zip(assemble_load(disc, &f, exec)) {
        *r += v;
    }
    AssembledSystem {
        matrix: t.to_csr(),
        rhs,
        dof_map: disc.dof_map().clone(),
        params,
    }
}

/// `s_h(u, u)` for a coefficient vector `u`, summed from squared jumps of
/// `u` (not from the matrix) so that it stays accurate near zero.
pub fn ghost_penalty_energy(disc: &Discretization, params: NitscheParams, u: &[f64]) -> f64 {
    let space = disc.space();
    let p = space.degree();
    let h = disc.h();
    let (gn, gw) = crate::geometry::gauss_legendre(p + 1);
    let mut total = 0.0;
    for (face, pa, pb) in disc.ghost_pairs() {
        let (dofs_a, dofs_b) = (space.dof_map().piece_dofs(pa), space.dof_map().piece_dofs(pb));
        let len = face.length();
        for (t, wt) in gn.iter().zip(&gw) {
            let x = face.a + (face.b - face.a) * *t;
            let da = space.eval_local(face.cells[0], x, p);
            let db = space.eval_local(face.cells[1], x, p);
            for j in 1..=p {
                let scale = params.tau * h.powi(2 * j as i32 - 1) * wt * len;
                for b in 0..=j {
                    let mi = multi_index(j - b, b);
                    let va: f64 = da[mi].iter().zip(dofs_a).map(|(v, &d)| v * u[d]).sum();
                    let vb: f64 = db[mi].iter().zip(dofs_b).map(|(v, &d)| v * u[d]).sum();
                    total += scale * binomial(j, j - b) * (va - vb).powi(2);
                }
            }
        }
    }
    total
}
