//! Tensor-product B-spline spaces on the background grid, restricted to the
//! active mesh, with optional splitting of basis functions whose support in
//! the domain falls apart into disconnected pieces.

use std::collections::BTreeMap;

use nalgebra::DMatrix;

use crate::geometry::{ActiveMesh, ReferenceMesh};
use crate::{Error, Result, Vec2};

/// Open knot vector aligned with a grid axis. Interior knots have
/// multiplicity `p - r`.
#[derive(Debug, Clone, PartialEq)]
pub struct KnotVector {
    degree: usize,
    multiplicity: usize,
    knots: Vec<f64>,
    n_cells: usize,
}

impl KnotVector {
    pub fn new(lines: &[f64], degree: usize, regularity: usize) -> Result<Self> {
        if degree == 0 {
            return Err(Error::param("p", "degree must be at least 1"));
        }
        if regularity >= degree {
            return Err(Error::param(
                "regularity",
                format!("must be below the degree {degree}, got {regularity}"),
            ));
        }
        if lines.len() < 2 || lines.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::param("knots", "grid lines must be strictly increasing"));
        }
        let m = degree - regularity;
        let mut knots = vec![lines[0]; degree + 1];
        for &x in &lines[1..lines.len() - 1] {
            knots.extend(std::iter::repeat_n(x, m));
        }
        knots.extend(std::iter::repeat_n(lines[lines.len() - 1], degree + 1));
        Ok(KnotVector {
            degree,
            multiplicity: m,
            knots,
            n_cells: lines.len() - 1,
        })
    }

    pub fn knots(&self) -> &[f64] {
        &self.knots
    }

    pub fn degree(&self) -> usize {
        self.degree
    }

    pub fn n_basis(&self) -> usize {
        self.knots.len() - self.degree - 1
    }

    pub fn n_cells(&self) -> usize {
        self.n_cells
    }

    /// Index of the first basis function that is nonzero on `cell`.
    pub fn first_basis(&self, cell: usize) -> usize {
        cell * self.multiplicity
    }

    /// Cells on which basis function `i` is nonzero.
    pub fn support_cells(&self, i: usize) -> std::ops::RangeInclusive<usize> {
        let m = self.multiplicity;
        let lo = i.saturating_sub(self.degree).div_ceil(m);
        let hi = (i / m).min(self.n_cells - 1);
        lo..=hi
    }

    /// Values and derivatives up to order `n` of the `p + 1` basis functions
    /// that are nonzero on `cell`, evaluated at `x`. Row `k` holds the `k`-th
    /// derivatives.
    pub fn eval(&self, cell: usize, x: f64, n: usize) -> Vec<Vec<f64>> {
        let p = self.degree;
        let span = p + cell * self.multiplicity;
        let u = &self.knots;
        let mut ndu = vec![vec![0.0; p + 1]; p + 1];
        let mut left = vec![0.0; p + 1];
        let mut right = vec![0.0; p + 1];
        ndu[0][0] = 1.0;
        for j in 1..=p {
            left[j] = x - u[span + 1 - j];
            right[j] = u[span + j] - x;
            let mut saved = 0.0;
            for r in 0..j {
                ndu[j][r] = right[r + 1] + left[j - r];
                let temp = ndu[r][j - 1] / ndu[j][r];
                ndu[r][j] = saved + right[r + 1] * temp;
                saved = left[j - r] * temp;
            }
            ndu[j][j] = saved;
        }
        let mut ders = vec![vec![0.0; p + 1]; n + 1];
        for j in 0..=p {
            ders[0][j] = ndu[j][p];
        }
        let mut a = vec![vec![0.0; p + 1]; 2];
        for r in 0..=p {
            let (mut s1, mut s2) = (0usize, 1usize);
            a[0][0] = 1.0;
            for k in 1..=n.min(p) {
                let mut d = 0.0;
                let rk = r as isize - k as isize;
                let pk = p - k;
                if rk >= 0 {
                    a[s2][0] = a[s1][0] / ndu[pk + 1][rk as usize];
                    d = a[s2][0] * ndu[rk as usize][pk];
                }
                let j1 = if rk >= -1 { 1 } else { (-rk) as usize };
                let j2 = if (r as isize - 1) <= pk as isize { k - 1 } else { p - r };
                for j in j1..=j2 {
                    let idx = (rk + j as isize) as usize;
                    a[s2][j] = (a[s1][j] - a[s1][j - 1]) / ndu[pk + 1][idx];
                    d += a[s2][j] * ndu[idx][pk];
                }
                if r <= pk {
                    a[s2][k] = -a[s1][k - 1] / ndu[pk + 1][r];
                    d += a[s2][k] * ndu[r][pk];
                }
                ders[k][r] = d;
                std::mem::swap(&mut s1, &mut s2);
            }
        }
        let mut fac = p as f64;
        for k in 1..=n.min(p) {
            for v in ders[k].iter_mut() {
                *v *= fac;
            }
            fac *= (p - k) as f64;
        }
        ders
    }

    /// Greville abscissae.
    pub fn greville(&self) -> Vec<f64> {
        let p = self.degree;
        (0..self.n_basis())
            .map(|i| self.knots[i + 1..=i + p].iter().sum::<f64>() / p as f64)
            .collect()
    }

    /// Cell containing `x`, clamped to the grid.
    fn cell_of(&self, x: f64, lines: impl Fn(usize) -> f64) -> usize {
        let mut c = 0;
        while c + 1 < self.n_cells && x >= lines(c + 1) {
            c += 1;
        }
        c
    }
}

/// Index of the multi-index `(a, b)`, `a + b = k`, in a list ordered by total
/// order and then by decreasing `a`.
pub fn multi_index(a: usize, b: usize) -> usize {
    let k = a + b;
    k * (k + 1) / 2 + b
}

/// Number of multi-indices of total order ≤ `n`.
pub fn n_multi_indices(n: usize) -> usize {
    (n + 1) * (n + 2) / 2
}

/// Map from tensor basis functions (and their disconnected support
/// components) to global unknowns.
#[derive(Debug, Clone)]
pub struct DofMap {
    /// `(tensor index, component) → global DOF`.
    entries: BTreeMap<(usize, usize), usize>,
    n_dofs: usize,
    /// Global DOFs of the `(p+1)²` local functions on every piece.
    piece_dofs: Vec<Vec<usize>>,
    split: bool,
}

impl DofMap {
    pub fn n_dofs(&self) -> usize {
        self.n_dofs
    }

    pub fn is_split(&self) -> bool {
        self.split
    }

    pub fn entries(&self) -> &BTreeMap<(usize, usize), usize> {
        &self.entries
    }

    pub fn piece_dofs(&self, piece: usize) -> &[usize] {
        &self.piece_dofs[piece]
    }

    /// Number of DOFs attached to tensor function `t`.
    pub fn components(&self, t: usize) -> usize {
        self.entries.range((t, 0)..(t + 1, 0)).count()
    }

    /// Tensor index of every DOF.
    pub fn tensor_of_dofs(&self) -> Vec<usize> {
        let mut out = vec![0; self.n_dofs];
        for (&(t, _), &d) in &self.entries {
            out[d] = t;
        }
        out
    }
}

/// Tensor-product B-spline space over the active mesh.
#[derive(Debug, Clone)]
pub struct SplineSpace {
    degree: usize,
    regularity: usize,
    kx: KnotVector,
    ky: KnotVector,
    mesh: ReferenceMesh,
    dofs: DofMap,
}

/// Basis functions nonzero at one point of one piece.
#[derive(Debug, Clone)]
pub struct BasisEval {
    pub cell: usize,
    pub piece: usize,
    pub local_dofs: Vec<usize>,
    /// `derivs[multi_index(a, b)][l]` is `∂x^a ∂y^b` of local function `l`.
    pub derivs: Vec<Vec<f64>>,
}

impl BasisEval {
    pub fn values(&self) -> &[f64] {
        &self.derivs[0]
    }

    pub fn deriv(&self, a: usize, b: usize) -> &[f64] {
        &self.derivs[multi_index(a, b)]
    }

    pub fn grad(&self, l: usize) -> Vec2 {
        Vec2::new(self.derivs[1][l], self.derivs[2][l])
    }

    /// `Σ_l c[dof_l] ∂x^a ∂y^b φ_l`.
    pub fn combine(&self, coeffs: &[f64], a: usize, b: usize) -> f64 {
        self.deriv(a, b)
            .iter()
            .zip(&self.local_dofs)
            .map(|(v, &d)| v * coeffs[d])
            .sum()
    }
}

impl SplineSpace {
    /// Space of degree `p` and regularity `C^r` with one unknown per tensor
    /// function whose support meets an active cell.
    pub fn new(active: &ActiveMesh, p: usize, r: usize) -> Result<Self> {
        let mesh = active.mesh().clone();
        let xs: Vec<f64> = (0..=mesh.nx()).map(|i| mesh.x_line(i)).collect();
        let ys: Vec<f64> = (0..=mesh.ny()).map(|j| mesh.y_line(j)).collect();
        let kx = KnotVector::new(&xs, p, r)?;
        let ky = KnotVector::new(&ys, p, r)?;
        let mut space = SplineSpace {
            degree: p,
            regularity: r,
            kx,
            ky,
            mesh,
            dofs: DofMap {
                entries: BTreeMap::new(),
                n_dofs: 0,
                piece_dofs: Vec::new(),
                split: false,
            },
        };
        space.dofs = space.unsplit_dofs(active);
        Ok(space)
    }

    pub fn degree(&self) -> usize {
        self.degree
    }

    pub fn regularity(&self) -> usize {
        self.regularity
    }

    pub fn knots_x(&self) -> &KnotVector {
        &self.kx
    }

    pub fn knots_y(&self) -> &KnotVector {
        &self.ky
    }

    pub fn dof_map(&self) -> &DofMap {
        &self.dofs
    }

    pub fn n_dofs(&self) -> usize {
        self.dofs.n_dofs
    }

    pub fn n_tensor(&self) -> usize {
        self.kx.n_basis() * self.ky.n_basis()
    }

    pub fn n_local(&self) -> usize {
        (self.degree + 1) * (self.degree + 1)
    }

    /// Tensor indices of the local functions on `cell`.
    pub fn cell_tensor_indices(&self, cell: usize) -> Vec<usize> {
        let (i, j) = self.mesh.cell_ij(cell);
        let (bx, by) = (self.kx.first_basis(i), self.ky.first_basis(j));
        let nbx = self.kx.n_basis();
        let p = self.degree;
        let mut out = Vec::with_capacity(self.n_local());
        for ly in 0..=p {
            for lx in 0..=p {
                out.push((by + ly) * nbx + bx + lx);
            }
        }
        out
    }

    fn unsplit_dofs(&self, active: &ActiveMesh) -> DofMap {
        let mut used = vec![false; self.n_tensor()];
        for &c in active.active_cells() {
            for t in self.cell_tensor_indices(c) {
                used[t] = true;
            }
        }
        let mut entries = BTreeMap::new();
        let mut id = vec![usize::MAX; self.n_tensor()];
        let mut n = 0;
        for (t, _) in used.iter().enumerate().filter(|(_, u)| **u) {
            entries.insert((t, 0), n);
            id[t] = n;
            n += 1;
        }
        let piece_dofs = active
            .pieces()
            .iter()
            .map(|pc| self.cell_tensor_indices(pc.cell).into_iter().map(|t| id[t]).collect())
            .collect();
        DofMap {
            entries,
            n_dofs: n,
            piece_dofs,
            split: false,
        }
    }

    /// One unknown per connected component of `supp φ ∩ Ω`, where pieces in
    /// neighbouring cells are connected when they share a stretch of face.
    pub fn split_disjoint_supports(&self, active: &ActiveMesh) -> DofMap {
        let n_pieces = active.pieces().len();
        let mut neighbours: Vec<Vec<usize>> = vec![Vec::new(); n_pieces];
        for f in active.interior_faces() {
            for &(a, b) in &f.links {
                neighbours[a].push(b);
                neighbours[b].push(a);
            }
        }
        let nbx = self.kx.n_basis();
        let mut entries = BTreeMap::new();
        let mut n = 0;
        // component label of every piece for the tensor function being processed
        let mut label = vec![usize::MAX; n_pieces];
        let mut touched: Vec<usize> = Vec::new();
        let mut piece_map: BTreeMap<(usize, usize), usize> = BTreeMap::new();
        for t in 0..self.n_tensor() {
            let (ix, iy) = (t % nbx, t / nbx);
            let cx = self.kx.support_cells(ix);
            let cy = self.ky.support_cells(iy);
            let in_support = |cell: usize| {
                let (i, j) = self.mesh.cell_ij(cell);
                cx.contains(&i) && cy.contains(&j)
            };
            let mut n_comp = 0;
            for j in cy.clone() {
                for i in cx.clone() {
                    let cell = self.mesh.cell_index(i, j);
                    if !active.is_active(cell) {
                        continue;
                    }
                    for k in active.cell_pieces(cell) {
                        if label[k] != usize::MAX {
                            continue;
                        }
                        let mut stack = vec![k];
                        label[k] = n_comp;
                        touched.push(k);
                        while let Some(q) = stack.pop() {
                            for &nb in &neighbours[q] {
                                if label[nb] == usize::MAX && in_support(active.piece(nb).cell) {
                                    label[nb] = n_comp;
                                    touched.push(nb);
                                    stack.push(nb);
                                }
                            }
                        }
                        n_comp += 1;
                    }
                }
            }
            let first = n;
            for c in 0..n_comp {
                entries.insert((t, c), first + c);
            }
            n += n_comp;
            for k in touched.drain(..) {
                piece_map.insert((k, t), first + label[k]);
                label[k] = usize::MAX;
            }
        }
        let piece_dofs = active
            .pieces()
            .iter()
            .enumerate()
            .map(|(k, pc)| {
                self.cell_tensor_indices(pc.cell)
                    .into_iter()
                    .map(|t| piece_map[&(k, t)])
                    .collect()
            })
            .collect();
        DofMap {
            entries,
            n_dofs: n,
            piece_dofs,
            split: true,
        }
    }

    pub fn set_dof_map(&mut self, dofs: DofMap) {
        self.dofs = dofs;
    }

    /// Applies [`split_disjoint_supports`](Self::split_disjoint_supports).
    pub fn split(mut self, active: &ActiveMesh) -> Self {
        self.dofs = self.split_disjoint_supports(active);
        self
    }

    /// Derivatives up to `max_deriv` of the local tensor functions on `cell`,
    /// indexed `[multi_index][local]`.
    pub fn eval_local(&self, cell: usize, x: Vec2, max_deriv: usize) -> Vec<Vec<f64>> {
        let (i, j) = self.mesh.cell_ij(cell);
        let p = self.degree;
        let dx = self.kx.eval(i, x.x, max_deriv);
        let dy = self.ky.eval(j, x.y, max_deriv);
        let mut out = vec![vec![0.0; self.n_local()]; n_multi_indices(max_deriv)];
        for k in 0..=max_deriv {
            for b in 0..=k {
                let a = k - b;
                let row = &mut out[multi_index(a, b)];
                if a > p || b > p {
                    continue;
                }
                for ly in 0..=p {
                    for lx in 0..=p {
                        row[ly * (p + 1) + lx] = dx[a][lx] * dy[b][ly];
                    }
                }
            }
        }
        out
    }

    /// Basis functions of `piece` (in `cell`) at `x`.
    pub fn eval_in_piece(&self, cell: usize, piece: usize, x: Vec2, max_deriv: usize) -> BasisEval {
        BasisEval {
            cell,
            piece,
            local_dofs: self.dofs.piece_dofs[piece].clone(),
            derivs: self.eval_local(cell, x, max_deriv),
        }
    }

    /// Basis functions at an arbitrary point of the active mesh.
    pub fn eval_basis(&self, active: &ActiveMesh, x: Vec2, max_deriv: usize) -> Result<BasisEval> {
        let (cell, piece) = active
            .locate_piece(x)
            .ok_or(Error::OutsideActiveMesh { x: x.x, y: x.y })?;
        Ok(self.eval_in_piece(cell, piece, x, max_deriv))
    }

    /// Coefficients (per tensor function) of the spline interpolating `f` at
    /// the tensor Greville points.
    pub fn interpolate_tensor(&self, f: impl Fn(Vec2) -> f64) -> Vec<f64> {
        let gx = self.kx.greville();
        let gy = self.ky.greville();
        let colloc = |kv: &KnotVector, g: &[f64], line: &dyn Fn(usize) -> f64| {
            let n = kv.n_basis();
            let mut a = DMatrix::zeros(n, n);
            for (row, &x) in g.iter().enumerate() {
                let c = kv.cell_of(x, line);
                let v = kv.eval(c, x, 0);
                for (l, val) in v[0].iter().enumerate() {
                    a[(row, kv.first_basis(c) + l)] = *val;
                }
            }
            a.lu()
        };
        let ax = colloc(&self.kx, &gx, &|i| self.mesh.x_line(i));
        let ay = colloc(&self.ky, &gy, &|j| self.mesh.y_line(j));
        let mut vals = DMatrix::from_fn(gx.len(), gy.len(), |i, j| f(Vec2::new(gx[i], gy[j])));
        // solve Ax C Ayᵀ = F
        for mut col in vals.column_iter_mut() {
            let s = ax.solve(&col.clone_owned()).expect("collocation matrix is nonsingular");
            col.copy_from(&s);
        }
        let t = vals.transpose();
        let mut t2 = t.clone();
        for (k, col) in t.column_iter().enumerate() {
            let s = ay.solve(&col.clone_owned()).expect("collocation matrix is nonsingular");
            t2.set_column(k, &s);
        }
        // t2[(iy, ix)]
        let nbx = self.kx.n_basis();
        let mut out = vec![0.0; self.n_tensor()];
        for iy in 0..self.ky.n_basis() {
            for ix in 0..nbx {
                out[iy * nbx + ix] = t2[(iy, ix)];
            }
        }
        out
    }

    /// DOF vector from tensor coefficients; split DOFs copy their parent's
    /// coefficient.
    pub fn tensor_to_dofs(&self, tensor: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.n_dofs()];
        for (&(t, _), &d) in &self.dofs.entries {
            out[d] = tensor[t];
        }
        out
    }

    /// Spline interpolant of `f` as a DOF vector.
    pub fn interpolate(&self, f: impl Fn(Vec2) -> f64) -> Vec<f64> {
        self.tensor_to_dofs(&self.interpolate_tensor(f))
    }

    /// Evaluates a tensor-coefficient spline (and derivatives) at `x`.
    pub fn eval_tensor(&self, tensor: &[f64], x: Vec2, max_deriv: usize) -> Vec<f64> {
        let cell = self.mesh.cell_index(
            self.kx.cell_of(x.x, |i| self.mesh.x_line(i)),
            self.ky.cell_of(x.y, |j| self.mesh.y_line(j)),
        );
        let local = self.eval_local(cell, x, max_deriv);
        let idx = self.cell_tensor_indices(cell);
        local
            .iter()
            .map(|row| row.iter().zip(&idx).map(|(v, &t)| v * tensor[t]).sum())
            .collect()
    }
}
