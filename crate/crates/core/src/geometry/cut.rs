use std::ops::Range;

use serde::Serialize;

use super::{EdgeKind, PolygonDomain, ReferenceMesh};
use crate::{Error, Result, Vec2};

/// Cells whose exterior part is at most this fraction of `h²` count as inside.
pub(crate) const CUT_AREA_FRACTION: f64 = 1e-12;
/// Cells whose interior part is below this fraction of `h²` are treated as
/// not intersecting the domain at all (zero-measure contact).
const CONTACT_AREA_FRACTION: f64 = 1e-14;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum CellKind {
    Outside,
    Inside,
    Cut,
}

/// Region `xa ≤ x ≤ xb`, `lo(x) ≤ y ≤ hi(x)` with `lo`, `hi` linear in `x`.
///
/// Every cell ∩ domain is an exact union of such trapezoids; each one is the
/// image of the unit square under a bilinear map with positive Jacobian.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Trapezoid {
    pub xa: f64,
    pub xb: f64,
    /// `lo(xa)`, `lo(xb)`.
    pub lo: [f64; 2],
    /// `hi(xa)`, `hi(xb)`.
    pub hi: [f64; 2],
}

impl Trapezoid {
    pub fn area(&self) -> f64 {
        0.5 * (self.xb - self.xa) * ((self.hi[0] - self.lo[0]) + (self.hi[1] - self.lo[1]))
    }

    fn lo_at(&self, t: f64) -> f64 {
        self.lo[0] + (self.lo[1] - self.lo[0]) * t
    }

    fn hi_at(&self, t: f64) -> f64 {
        self.hi[0] + (self.hi[1] - self.hi[0]) * t
    }

    /// Image of `(ξ, η) ∈ [0,1]²` and the Jacobian determinant.
    pub fn map(&self, xi: f64, eta: f64) -> (Vec2, f64) {
        let lo = self.lo_at(xi);
        let hi = self.hi_at(xi);
        let x = self.xa + (self.xb - self.xa) * xi;
        let y = lo + (hi - lo) * eta;
        (Vec2::new(x, y), (self.xb - self.xa) * (hi - lo))
    }

    pub fn contains(&self, p: Vec2, tol: f64) -> bool {
        if p.x < self.xa - tol || p.x > self.xb + tol {
            return false;
        }
        let t = if self.xb > self.xa {
            ((p.x - self.xa) / (self.xb - self.xa)).clamp(0.0, 1.0)
        } else {
            0.5
        };
        p.y >= self.lo_at(t) - tol && p.y <= self.hi_at(t) + tol
    }

    fn distance_hint(&self, p: Vec2) -> f64 {
        let t = if self.xb > self.xa {
            ((p.x - self.xa) / (self.xb - self.xa)).clamp(0.0, 1.0)
        } else {
            0.5
        };
        let x = self.xa + (self.xb - self.xa) * t;
        let y = p.y.clamp(self.lo_at(t), self.hi_at(t));
        (Vec2::new(x, y) - p).norm()
    }
}

/// Side of a cell.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Side {
    Left = 0,
    Right = 1,
    Bottom = 2,
    Top = 3,
}

/// One connected component of `cell ∩ domain`.
#[derive(Debug, Clone)]
pub struct Piece {
    pub cell: usize,
    pub trapezoids: Vec<Trapezoid>,
    pub area: f64,
    /// Parameter intervals (y for left/right, x for bottom/top) where the
    /// piece touches each side of its cell with positive length.
    contacts: [Vec<(f64, f64)>; 4],
}

impl Piece {
    pub fn contacts(&self, side: Side) -> &[(f64, f64)] {
        &self.contacts[side as usize]
    }

    pub fn contains(&self, p: Vec2, tol: f64) -> bool {
        self.trapezoids.iter().any(|t| t.contains(p, tol))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FaceAxis {
    /// Face on a line `x = const`, between a left and a right cell.
    Vertical,
    /// Face on a line `y = const`, between a bottom and a top cell.
    Horizontal,
}

/// Interior face between two active cells. `cells[0]` is the left/bottom
/// cell; the face normal points from `cells[0]` to `cells[1]`.
#[derive(Debug, Clone)]
pub struct Face {
    pub cells: [usize; 2],
    pub axis: FaceAxis,
    pub a: Vec2,
    pub b: Vec2,
    /// Piece pairs `(piece in cells[0], piece in cells[1])` that are
    /// connected through the part of the face lying inside the domain.
    pub links: Vec<(usize, usize)>,
}

impl Face {
    pub fn normal(&self) -> Vec2 {
        match self.axis {
            FaceAxis::Vertical => Vec2::new(1.0, 0.0),
            FaceAxis::Horizontal => Vec2::new(0.0, 1.0),
        }
    }

    pub fn length(&self) -> f64 {
        (self.b - self.a).norm()
    }
}

/// Part of a boundary edge inside one cell.
#[derive(Debug, Clone)]
pub struct BoundarySegment {
    pub edge: usize,
    pub a: Vec2,
    pub b: Vec2,
    /// Outward unit normal.
    pub normal: Vec2,
    pub cell: usize,
    pub piece: usize,
}

/// Active part of a background mesh together with the exact decomposition of
/// every active cell into domain pieces.
#[derive(Debug, Clone)]
pub struct ActiveMesh {
    mesh: ReferenceMesh,
    kinds: Vec<CellKind>,
    cell_area: Vec<f64>,
    cell_pieces: Vec<Range<usize>>,
    pieces: Vec<Piece>,
    active_cells: Vec<usize>,
    cut_cells: Vec<usize>,
    interior_faces: Vec<Face>,
    ghost_faces: Vec<usize>,
    boundary_segments: Vec<BoundarySegment>,
    cell_boundary: Vec<Range<usize>>,
}

/// Classifies every cell of `mesh` against `domain` and decomposes the cut
/// cells into trapezoids.
pub fn classify_elements(mesh: &ReferenceMesh, domain: &PolygonDomain) -> Result<ActiveMesh> {
    let h = mesh.h();
    let n_cells = mesh.n_cells();
    let n_edges = domain.len();

    // Edges overlapping each column in x, and edges touching each closed cell.
    let mut column_edges: Vec<Vec<usize>> = vec![Vec::new(); mesh.nx()];
    let mut touching: Vec<Vec<usize>> = vec![Vec::new(); n_cells];
    for e in 0..n_edges {
        let (a, b) = domain.edge(e);
        let (xmin, xmax) = (a.x.min(b.x), a.x.max(b.x));
        let (ymin, ymax) = (a.y.min(b.y), a.y.max(b.y));
        let i0 = mesh.column_of(xmin).saturating_sub(1);
        let i1 = (mesh.column_of(xmax) + 1).min(mesh.nx() - 1);
        let j0 = mesh.row_of(ymin).saturating_sub(1);
        let j1 = (mesh.row_of(ymax) + 1).min(mesh.ny() - 1);
        for i in i0..=i1 {
            if xmax > mesh.x_line(i) && xmin < mesh.x_line(i + 1) {
                column_edges[i].push(e);
            }
            for j in j0..=j1 {
                let c = mesh.cell_index(i, j);
                let (lo, hi) = mesh.cell_bounds(c);
                if segment_touches_box(a, b, lo, hi) {
                    touching[c].push(e);
                }
            }
        }
    }

    let mut kinds = vec![CellKind::Outside; n_cells];
    let mut cell_area = vec![0.0; n_cells];
    let mut cell_pieces = vec![0..0; n_cells];
    let mut pieces: Vec<Piece> = Vec::new();

    for c in 0..n_cells {
        let (lo, hi) = mesh.cell_bounds(c);
        let (i, _) = mesh.cell_ij(c);
        let cols = &column_edges[i];
        let decomposed = if touching[c].is_empty() {
            let centre = 0.5 * (lo + hi);
            if inside_by_column(domain, cols, centre) {
                Some(vec![full_cell(lo, hi)])
            } else {
                None
            }
        } else {
            let slabs = decompose_cell(domain, &touching[c], cols, lo, hi, h);
            let area: f64 = slabs.iter().flatten().map(Trapezoid::area).sum();
            if area <= CONTACT_AREA_FRACTION * h * h {
                None
            } else if h * h - area <= CUT_AREA_FRACTION * h * h {
                Some(vec![full_cell(lo, hi)])
            } else {
                kinds[c] = CellKind::Cut;
                cell_area[c] = area;
                let start = pieces.len();
                pieces.extend(build_pieces(c, slabs, lo, hi, h));
                cell_pieces[c] = start..pieces.len();
                continue;
            }
        };
        if let Some(traps) = decomposed {
            kinds[c] = CellKind::Inside;
            cell_area[c] = h * h;
            let start = pieces.len();
            pieces.extend(build_pieces(c, vec![traps], lo, hi, h));
            cell_pieces[c] = start..pieces.len();
        }
    }

    let active_cells: Vec<usize> = (0..n_cells).filter(|&c| kinds[c] != CellKind::Outside).collect();
    if active_cells.is_empty() {
        return Err(Error::Geometry("the domain does not intersect the mesh".into()));
    }
    let cut_cells: Vec<usize> = (0..n_cells).filter(|&c| kinds[c] == CellKind::Cut).collect();

    let tol = 1e-12 * h;
    let mut interior_faces = Vec::new();
    for &c in &active_cells {
        let (i, j) = mesh.cell_ij(c);
        if i + 1 < mesh.nx() {
            let r = mesh.cell_index(i + 1, j);
            if kinds[r] != CellKind::Outside {
                let x = mesh.x_line(i + 1);
                interior_faces.push(Face {
                    cells: [c, r],
                    axis: FaceAxis::Vertical,
                    a: Vec2::new(x, mesh.y_line(j)),
                    b: Vec2::new(x, mesh.y_line(j + 1)),
                    links: link_pieces(&pieces, cell_pieces[c].clone(), cell_pieces[r].clone(), Side::Right, Side::Left, tol),
                });
            }
        }
        if j + 1 < mesh.ny() {
            let t = mesh.cell_index(i, j + 1);
            if kinds[t] != CellKind::Outside {
                let y = mesh.y_line(j + 1);
                interior_faces.push(Face {
                    cells: [c, t],
                    axis: FaceAxis::Horizontal,
                    a: Vec2::new(mesh.x_line(i), y),
                    b: Vec2::new(mesh.x_line(i + 1), y),
                    links: link_pieces(&pieces, cell_pieces[c].clone(), cell_pieces[t].clone(), Side::Top, Side::Bottom, tol),
                });
            }
        }
    }
    let ghost_faces = (0..interior_faces.len())
        .filter(|&f| {
            let [a, b] = interior_faces[f].cells;
            kinds[a] == CellKind::Cut || kinds[b] == CellKind::Cut
        })
        .collect();

    let mut boundary_segments = boundary_segments(mesh, domain, &kinds, &cell_pieces, &pieces);
    boundary_segments.sort_by_key(|s| s.cell);
    let mut cell_boundary = vec![0..0; n_cells];
    let mut k = 0;
    while k < boundary_segments.len() {
        let c = boundary_segments[k].cell;
        let start = k;
        while k < boundary_segments.len() && boundary_segments[k].cell == c {
            k += 1;
        }
        cell_boundary[c] = start..k;
    }

    Ok(ActiveMesh {
        mesh: mesh.clone(),
        kinds,
        cell_area,
        cell_pieces,
        pieces,
        active_cells,
        cut_cells,
        interior_faces,
        ghost_faces,
        boundary_segments,
        cell_boundary,
    })
}

impl ActiveMesh {
    pub fn mesh(&self) -> &ReferenceMesh {
        &self.mesh
    }

    pub fn h(&self) -> f64 {
        self.mesh.h()
    }

    pub fn kind(&self, cell: usize) -> CellKind {
        self.kinds[cell]
    }

    pub fn is_active(&self, cell: usize) -> bool {
        self.kinds[cell] != CellKind::Outside
    }

    /// Area of `cell ∩ domain`.
    pub fn cell_area(&self, cell: usize) -> f64 {
        self.cell_area[cell]
    }

    /// Active cut cell whose domain part is too small to integrate over.
    pub fn is_sliver(&self, cell: usize) -> bool {
        self.kinds[cell] == CellKind::Cut && self.cell_area[cell] < CUT_AREA_FRACTION * self.h() * self.h()
    }

    pub fn active_cells(&self) -> &[usize] {
        &self.active_cells
    }

    pub fn cut_cells(&self) -> &[usize] {
        &self.cut_cells
    }

    pub fn pieces(&self) -> &[Piece] {
        &self.pieces
    }

    pub fn piece(&self, id: usize) -> &Piece {
        &self.pieces[id]
    }

    /// Global ids of the pieces of `cell`.
    pub fn cell_pieces(&self, cell: usize) -> Range<usize> {
        self.cell_pieces[cell].clone()
    }

    /// All faces shared by two active cells.
    pub fn interior_faces(&self) -> &[Face] {
        &self.interior_faces
    }

    /// Interior faces adjacent to at least one cut cell.
    pub fn ghost_faces(&self) -> impl Iterator<Item = &Face> + '_ {
        self.ghost_faces.iter().map(move |&f| &self.interior_faces[f])
    }

    pub fn n_ghost_faces(&self) -> usize {
        self.ghost_faces.len()
    }

    pub fn boundary_segments(&self) -> &[BoundarySegment] {
        &self.boundary_segments
    }

    /// Boundary segments assigned to `cell`.
    pub fn cell_boundary_segments(&self, cell: usize) -> &[BoundarySegment] {
        &self.boundary_segments[self.cell_boundary[cell].clone()]
    }

    /// Cells owning at least one boundary segment, in increasing order. This
    /// includes uncut cells whose side lies on a straight boundary edge.
    pub fn boundary_cells(&self) -> Vec<usize> {
        (0..self.cell_boundary.len())
            .filter(|&c| !self.cell_boundary[c].is_empty())
            .collect()
    }

    /// Cell and piece containing `p`, if `p` lies in the domain.
    pub fn locate_piece(&self, p: Vec2) -> Option<(usize, usize)> {
        let cell = self.mesh.locate(p)?;
        let tol = 1e-12 * self.h();
        self.cell_pieces(cell)
            .find(|&k| self.pieces[k].contains(p, tol))
            .map(|k| (cell, k))
    }

    /// Like [`ActiveMesh::locate_piece`], but also accepts points within
    /// `radius` of a piece in the cell containing `p` or one of its neighbours.
    /// Used for points on curved patch boundaries that the polygon only
    /// approximates.
    pub fn nearest_piece(&self, p: Vec2, radius: f64) -> Option<(usize, usize)> {
        if let Some(found) = self.locate_piece(p) {
            return Some(found);
        }
        let h = self.h();
        let i = self.mesh.column_of(p.x) as i64;
        let j = self.mesh.row_of(p.y) as i64;
        let mut best: Option<(f64, usize, usize)> = None;
        for di in -1..=1 {
            for dj in -1..=1 {
                let (ci, cj) = (i + di, j + dj);
                if ci < 0 || cj < 0 || ci >= self.mesh.nx() as i64 || cj >= self.mesh.ny() as i64 {
                    continue;
                }
                let cell = self.mesh.cell_index(ci as usize, cj as usize);
                for k in self.cell_pieces(cell) {
                    let d = self.pieces[k]
                        .trapezoids
                        .iter()
                        .map(|t| t.distance_hint(p))
                        .fold(f64::INFINITY, f64::min);
                    if d <= radius && best.is_none_or(|b| d < b.0 - 1e-14 * h) {
                        best = Some((d, cell, k));
                    }
                }
            }
        }
        best.map(|(_, c, k)| (c, k))
    }

    /// Total domain area covered by active cells.
    pub fn total_area(&self) -> f64 {
        self.pieces.iter().map(|p| p.area).sum()
    }
}

fn full_cell(lo: Vec2, hi: Vec2) -> Trapezoid {
    Trapezoid {
        xa: lo.x,
        xb: hi.x,
        lo: [lo.y, lo.y],
        hi: [hi.y, hi.y],
    }
}

/// Closed segment vs closed axis-aligned box (Liang–Barsky).
fn segment_touches_box(a: Vec2, b: Vec2, lo: Vec2, hi: Vec2) -> bool {
    let d = b - a;
    let mut t0: f64 = 0.0;
    let mut t1: f64 = 1.0;
    for (p, q) in [
        (-d.x, a.x - lo.x),
        (d.x, hi.x - a.x),
        (-d.y, a.y - lo.y),
        (d.y, hi.y - a.y),
    ] {
        if p == 0.0 {
            if q < 0.0 {
                return false;
            }
        } else {
            let r = q / p;
            if p < 0.0 {
                t0 = t0.max(r);
            } else {
                t1 = t1.min(r);
            }
            if t0 > t1 {
                return false;
            }
        }
    }
    true
}

fn edge_y(a: Vec2, b: Vec2, x: f64) -> f64 {
    a.y + (x - a.x) * (b.y - a.y) / (b.x - a.x)
}

/// Counts crossings of a downward ray from `p` with the column's edges.
fn inside_by_column(domain: &PolygonDomain, cols: &[usize], p: Vec2) -> bool {
    let mut inside = false;
    for &e in cols {
        let (a, b) = domain.edge(e);
        if (a.x <= p.x) != (b.x <= p.x) && edge_y(a, b, p.x) < p.y {
            inside = !inside;
        }
    }
    inside
}

#[derive(Clone, Copy)]
enum Bound {
    Box(f64),
    Edge(f64, f64),
}

/// Exact decomposition of `[lo,hi] ∩ domain` into vertical slabs of
/// trapezoids.
fn decompose_cell(
    domain: &PolygonDomain,
    touching: &[usize],
    cols: &[usize],
    lo: Vec2,
    hi: Vec2,
    h: f64,
) -> Vec<Vec<Trapezoid>> {
    let (x0, x1, y0, y1) = (lo.x, hi.x, lo.y, hi.y);
    let mut xs = vec![x0, x1];
    for &e in touching {
        let (a, b) = domain.edge(e);
        for v in [a, b] {
            if v.x > x0 && v.x < x1 {
                xs.push(v.x);
            }
        }
        if a.x != b.x {
            for yl in [y0, y1] {
                if (a.y - yl) * (b.y - yl) < 0.0 {
                    let x = a.x + (yl - a.y) / (b.y - a.y) * (b.x - a.x);
                    if x > x0 && x < x1 {
                        xs.push(x);
                    }
                }
            }
        }
    }
    xs.sort_by(f64::total_cmp);
    let merge = 1e-13 * h;
    let mut breaks: Vec<f64> = Vec::with_capacity(xs.len());
    for x in xs {
        match breaks.last() {
            Some(&l) if x - l <= merge => {}
            _ => breaks.push(x),
        }
    }
    // keep the exact cell edge as the last breakpoint
    if let Some(l) = breaks.last_mut() {
        *l = x1;
    }

    let degenerate = 1e-14 * h;
    let mut slabs = Vec::with_capacity(breaks.len());
    let mut crossings: Vec<(f64, f64, f64)> = Vec::new();
    for w in breaks.windows(2) {
        let (xa, xb) = (w[0], w[1]);
        let xm = 0.5 * (xa + xb);
        let mut below = 0usize;
        crossings.clear();
        for &e in cols {
            let (a, b) = domain.edge(e);
            if (a.x <= xm) != (b.x <= xm) {
                let ym = edge_y(a, b, xm);
                if ym < y0 {
                    below += 1;
                } else if ym <= y1 {
                    crossings.push((ym, edge_y(a, b, xa).clamp(y0, y1), edge_y(a, b, xb).clamp(y0, y1)));
                }
            }
        }
        crossings.sort_by(|p, q| p.0.total_cmp(&q.0));
        let mut inside = below % 2 == 1;
        let mut lower = Bound::Box(y0);
        let mut traps = Vec::new();
        let mut emit = |lower: Bound, upper: Bound| {
            let (la, lb) = match lower {
                Bound::Box(y) => (y, y),
                Bound::Edge(p, q) => (p, q),
            };
            let (ua, ub) = match upper {
                Bound::Box(y) => (y, y),
                Bound::Edge(p, q) => (p, q),
            };
            let (ua, ub) = (ua.max(la), ub.max(lb));
            if ua - la > degenerate || ub - lb > degenerate {
                traps.push(Trapezoid {
                    xa,
                    xb,
                    lo: [la, lb],
                    hi: [ua, ub],
                });
            }
        };
        for &(_, ya, yb) in &crossings {
            let edge = Bound::Edge(ya, yb);
            if inside {
                emit(lower, edge);
            }
            inside = !inside;
            lower = edge;
        }
        if inside {
            emit(lower, Bound::Box(y1));
        }
        slabs.push(traps);
    }
    slabs
}

fn find(parent: &mut [usize], mut i: usize) -> usize {
    while parent[i] != i {
        parent[i] = parent[parent[i]];
        i = parent[i];
    }
    i
}

fn union(parent: &mut [usize], a: usize, b: usize) {
    let (ra, rb) = (find(parent, a), find(parent, b));
    if ra != rb {
        parent[ra.max(rb)] = ra.min(rb);
    }
}

fn overlap(a: (f64, f64), b: (f64, f64)) -> f64 {
    a.1.min(b.1) - a.0.max(b.0)
}

/// Groups the trapezoids of one cell into connected pieces and records where
/// each piece touches the cell sides.
fn build_pieces(cell: usize, slabs: Vec<Vec<Trapezoid>>, lo: Vec2, hi: Vec2, h: f64) -> Vec<Piece> {
    let tol = 1e-12 * h;
    let mut flat = Vec::new();
    let mut slab_range = Vec::with_capacity(slabs.len());
    for s in slabs {
        let start = flat.len();
        flat.extend(s);
        slab_range.push(start..flat.len());
    }
    let mut parent: Vec<usize> = (0..flat.len()).collect();
    for w in slab_range.windows(2) {
        for i in w[0].clone() {
            for j in w[1].clone() {
                let (ti, tj) = (&flat[i], &flat[j]);
                if overlap((ti.lo[1], ti.hi[1]), (tj.lo[0], tj.hi[0])) > tol {
                    union(&mut parent, i, j);
                }
            }
        }
    }
    let mut roots: Vec<usize> = Vec::new();
    let mut out: Vec<Piece> = Vec::new();
    for (k, t) in flat.iter().enumerate() {
        let r = find(&mut parent, k);
        let idx = match roots.iter().position(|&x| x == r) {
            Some(p) => p,
            None => {
                roots.push(r);
                out.push(Piece {
                    cell,
                    trapezoids: Vec::new(),
                    area: 0.0,
                    contacts: Default::default(),
                });
                out.len() - 1
            }
        };
        let piece = &mut out[idx];
        piece.trapezoids.push(*t);
        piece.area += t.area();
        if t.xa == lo.x && t.hi[0] - t.lo[0] > tol {
            piece.contacts[Side::Left as usize].push((t.lo[0], t.hi[0]));
        }
        if t.xb == hi.x && t.hi[1] - t.lo[1] > tol {
            piece.contacts[Side::Right as usize].push((t.lo[1], t.hi[1]));
        }
        if t.lo == [lo.y, lo.y] {
            piece.contacts[Side::Bottom as usize].push((t.xa, t.xb));
        }
        if t.hi == [hi.y, hi.y] {
            piece.contacts[Side::Top as usize].push((t.xa, t.xb));
        }
    }
    for piece in &mut out {
        for side in &mut piece.contacts {
            merge_intervals(side);
        }
    }
    out
}

fn merge_intervals(v: &mut Vec<(f64, f64)>) {
    v.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut merged: Vec<(f64, f64)> = Vec::with_capacity(v.len());
    for &(a, b) in v.iter() {
        match merged.last_mut() {
            Some(last) if a <= last.1 => last.1 = last.1.max(b),
            _ => merged.push((a, b)),
        }
    }
    *v = merged;
}

fn link_pieces(
    pieces: &[Piece],
    first: Range<usize>,
    second: Range<usize>,
    first_side: Side,
    second_side: Side,
    tol: f64,
) -> Vec<(usize, usize)> {
    let mut links = Vec::new();
    for pa in first {
        for pb in second.clone() {
            let connected = pieces[pa].contacts(first_side).iter().any(|&ia| {
                pieces[pb]
                    .contacts(second_side)
                    .iter()
                    .any(|&ib| overlap(ia, ib) > tol)
            });
            if connected {
                links.push((pa, pb));
            }
        }
    }
    links
}

fn boundary_segments(
    mesh: &ReferenceMesh,
    domain: &PolygonDomain,
    kinds: &[CellKind],
    cell_pieces: &[Range<usize>],
    pieces: &[Piece],
) -> Vec<BoundarySegment> {
    let h = mesh.h();
    let mut out = Vec::new();
    for e in 0..domain.len() {
        if domain.edge_kind(e) != EdgeKind::Boundary {
            continue;
        }
        let (a, b) = domain.edge(e);
        let normal = domain.edge_normal(e);
        let d = b - a;
        let mut ts = vec![0.0, 1.0];
        if d.x != 0.0 {
            for i in 0..=mesh.nx() {
                let t = (mesh.x_line(i) - a.x) / d.x;
                if t > 0.0 && t < 1.0 {
                    ts.push(t);
                }
            }
        }
        if d.y != 0.0 {
            for j in 0..=mesh.ny() {
                let t = (mesh.y_line(j) - a.y) / d.y;
                if t > 0.0 && t < 1.0 {
                    ts.push(t);
                }
            }
        }
        ts.sort_by(f64::total_cmp);
        ts.dedup();
        for w in ts.windows(2) {
            let (pa, pb) = (a + d * w[0], a + d * w[1]);
            if (pb - pa).norm() <= 1e-15 * h {
                continue;
            }
            let probe = 0.5 * (pa + pb) - 1e-7 * h * normal;
            let Some(cell) = mesh.locate(probe) else {
                continue;
            };
            if kinds[cell] == CellKind::Outside {
                // only tips of zero-area contacts end up here
                if (pb - pa).norm() > 1e-6 * h {
                    log::warn!("boundary segment on edge {e} falls in an inactive cell {cell}; skipped");
                }
                continue;
            }
            let range = cell_pieces[cell].clone();
            let piece = range
                .clone()
                .find(|&k| pieces[k].contains(probe, 1e-12 * h))
                .unwrap_or_else(|| {
                    range
                        .min_by(|&p, &q| {
                            let dp = piece_distance(&pieces[p], probe);
                            let dq = piece_distance(&pieces[q], probe);
                            dp.total_cmp(&dq)
                        })
                        .expect("active cell has a piece")
                });
            out.push(BoundarySegment {
                edge: e,
                a: pa,
                b: pb,
                normal,
                cell,
                piece,
            });
        }
    }
    out
}

fn piece_distance(piece: &Piece, p: Vec2) -> f64 {
    piece
        .trapezoids
        .iter()
        .map(|t| t.distance_hint(p))
        .fold(f64::INFINITY, f64::min)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn poly(v: &[(f64, f64)], corner: usize) -> PolygonDomain {
        PolygonDomain::new(v.iter().map(|&(x, y)| Vec2::new(x, y)).collect(), corner).unwrap()
    }

    fn full_square() -> PolygonDomain {
        let v = [(-1.0, -1.0), (1.0, -1.0), (1.0, 1.0), (-1.0, 1.0)];
        PolygonDomain::without_corner(v.iter().map(|&(x, y)| Vec2::new(x, y)).collect()).unwrap()
    }

    #[test]
    fn segment_box() {
        let lo = Vec2::new(0.0, 0.0);
        let hi = Vec2::new(1.0, 1.0);
        assert!(segment_touches_box(Vec2::new(-1.0, 0.5), Vec2::new(2.0, 0.5), lo, hi));
        assert!(segment_touches_box(Vec2::new(1.0, -1.0), Vec2::new(1.0, 2.0), lo, hi));
        assert!(!segment_touches_box(Vec2::new(1.1, -1.0), Vec2::new(1.1, 2.0), lo, hi));
        assert!(!segment_touches_box(Vec2::new(-1.0, 0.0), Vec2::new(0.0, -1.0), lo, hi));
    }

    #[test]
    fn full_square_has_no_cut_cells() {
        let dom = full_square();
        for h in [1.0, 0.5, 0.25] {
            let m = ReferenceMesh::new(h, Vec2::zeros()).unwrap();
            let am = classify_elements(&m, &dom).unwrap();
            assert_eq!(am.active_cells().len(), m.n_cells());
            assert!(am.cut_cells().is_empty());
            assert_eq!(am.n_ghost_faces(), 0);
            assert!((am.total_area() - 4.0).abs() < 1e-12);
        }
    }

    #[test]
    fn half_plane_left_column_active() {
        // x ≤ 0 within the square; the boundary x = 0 is a grid line at h = 1
        let dom = poly(&[(0.0, 0.0), (0.0, 1.0), (-1.0, 1.0), (-1.0, -1.0), (0.0, -1.0)], 0);
        let m = ReferenceMesh::new(1.0, Vec2::zeros()).unwrap();
        let am = classify_elements(&m, &dom).unwrap();
        assert_eq!(am.active_cells(), &[0, 2]);
        assert!(am.cut_cells().is_empty());
        // with the edge moved into the cells, both columns are active and
        // the right column is cut (with a triangular bite below the x axis)
        let dom = poly(&[(0.0, 0.0), (0.5, 0.0), (0.5, 1.0), (-1.0, 1.0), (-1.0, -1.0), (0.5, -1.0)], 0);
        let am = classify_elements(&m, &dom).unwrap();
        assert_eq!(am.active_cells(), &[0, 1, 2, 3]);
        assert_eq!(am.cut_cells(), &[1, 3]);
        assert!((am.cell_area(1) - 0.25).abs() < 1e-14);
        assert!((am.cell_area(3) - 0.5).abs() < 1e-14);
        assert_eq!(am.n_ghost_faces(), 3);
    }

    #[test]
    fn pieces_split_across_a_notch() {
        // a thin notch cutting into the middle of one cell from the right
        let dom = poly(
            &[
                (0.0, 0.0),
                (0.0, -1.0),
                (1.0, -1.0),
                (1.0, 0.49),
                (0.3, 0.49),
                (0.3, 0.51),
                (1.0, 0.51),
                (1.0, 1.0),
                (-1.0, 1.0),
                (-1.0, 0.0),
            ],
            0,
        );
        let m = ReferenceMesh::new(0.5, Vec2::zeros()).unwrap();
        let am = classify_elements(&m, &dom).unwrap();
        // cell column 3 ([0.5,1]), rows 2 and 3 meet the notch at y=0.5
        let c = m.cell_index(3, 2);
        assert_eq!(am.kind(c), CellKind::Cut);
        assert_eq!(am.cell_pieces(c).len(), 1);
        let c_up = m.cell_index(3, 3);
        assert_eq!(am.cell_pieces(c_up).len(), 1);
        // the face between them lies in the notch: no link
        let f = am
            .interior_faces()
            .iter()
            .find(|f| f.cells == [c, c_up])
            .unwrap();
        assert!(f.links.is_empty());
        // the left neighbour's face is connected
        let left = m.cell_index(2, 2);
        let f = am
            .interior_faces()
            .iter()
            .find(|f| f.cells == [left, m.cell_index(2, 3)])
            .unwrap();
        // x=0.5 column 2 spans [0, 0.5]; notch starts at x=0.3 so the face
        // [0,0.5]x{0.5} is open on [0,0.3]
        assert_eq!(f.links.len(), 1);
    }

    #[test]
    fn two_pieces_in_one_cell() {
        // horizontal slot through the whole cell [0,0.5]x[0,0.5]
        let dom = poly(
            &[
                (0.0, 0.0),
                (0.0, -1.0),
                (1.0, -1.0),
                (1.0, 0.2),
                (-0.2, 0.2),
                (-0.2, 0.3),
                (1.0, 0.3),
                (1.0, 1.0),
                (-1.0, 1.0),
                (-1.0, 0.0),
            ],
            0,
        );
        let m = ReferenceMesh::new(0.5, Vec2::zeros()).unwrap();
        let am = classify_elements(&m, &dom).unwrap();
        let c = m.cell_index(2, 2);
        assert_eq!(am.cell_pieces(c).len(), 2);
        let areas: Vec<f64> = am.cell_pieces(c).map(|k| am.piece(k).area).collect();
        assert!((areas.iter().sum::<f64>() - 0.2).abs() < 1e-14);
    }

    #[test]
    fn ghost_faces_unique_and_adjacent_to_cut() {
        let dom = poly(&[(0.0, 0.0), (0.7, 0.1), (0.2, 0.8), (-0.6, 0.3)], 0);
        let m = ReferenceMesh::new(0.25, Vec2::new(0.03, 0.07)).unwrap();
        let am = classify_elements(&m, &dom).unwrap();
        let mut seen = std::collections::BTreeSet::new();
        for f in am.ghost_faces() {
            let [a, b] = f.cells;
            assert!(am.is_active(a) && am.is_active(b));
            assert!(am.kind(a) == CellKind::Cut || am.kind(b) == CellKind::Cut);
            assert!(seen.insert((a.min(b), a.max(b))));
        }
        assert!((am.total_area() - dom.area()).abs() < 1e-14);
    }

    #[test]
    fn boundary_lengths_sum_to_perimeter() {
        let dom = poly(&[(0.0, 0.0), (0.7, 0.1), (0.2, 0.8), (-0.6, 0.3)], 0);
        let m = ReferenceMesh::new(0.2, Vec2::new(0.01, 0.13)).unwrap();
        let am = classify_elements(&m, &dom).unwrap();
        let total: f64 = am.boundary_segments().iter().map(|s| (s.b - s.a).norm()).sum();
        assert!((total - dom.perimeter()).abs() < 1e-13);
        for s in am.boundary_segments() {
            let mid = 0.5 * (s.a + s.b);
            assert!(am.piece(s.piece).contains(mid, 1e-9));
        }
    }
}
