use serde::Serialize;

use crate::{Error, Result, Vec2};

/// Uniform square grid covering `[-1,1]^2`, shifted by `shift ∈ [0,h)^2`.
///
/// Grid lines sit at `-1 - shift + i h`. Cells are indexed row-major:
/// `cell = j * nx + i` with `i` the column and `j` the row.
#[derive(Debug, Clone, Serialize)]
pub struct ReferenceMesh {
    h: f64,
    shift: Vec2,
    nx: usize,
    ny: usize,
}

impl ReferenceMesh {
    pub fn new(h: f64, shift: Vec2) -> Result<Self> {
        if !(h > 0.0 && h <= 1.0) {
            return Err(Error::param("h", format!("mesh size must lie in (0, 1], got {h}")));
        }
        for s in [shift.x, shift.y] {
            if !(s >= 0.0 && s < h) {
                return Err(Error::param("shift", format!("components must lie in [0, h), got {s}")));
            }
        }
        let count = |s: f64| ((2.0 + s) / h - 1e-10).ceil().max(1.0) as usize;
        Ok(ReferenceMesh {
            h,
            shift,
            nx: count(shift.x),
            ny: count(shift.y),
        })
    }

    /// Shift that places the origin at the centre of a cell.
    pub fn centering_shift(h: f64) -> Vec2 {
        let mut s = (0.5 * h - 1.0).rem_euclid(h);
        if s >= h * (1.0 - 1e-12) {
            s = 0.0;
        }
        Vec2::new(s, s)
    }

    /// Mesh with the origin at a cell centre.
    pub fn centered(h: f64) -> Result<Self> {
        Self::new(h, Self::centering_shift(h))
    }

    pub fn h(&self) -> f64 {
        self.h
    }

    pub fn shift(&self) -> Vec2 {
        self.shift
    }

    pub fn nx(&self) -> usize {
        self.nx
    }

    pub fn ny(&self) -> usize {
        self.ny
    }

    pub fn n_cells(&self) -> usize {
        self.nx * self.ny
    }

    pub fn x_line(&self, i: usize) -> f64 {
        -1.0 - self.shift.x + i as f64 * self.h
    }

    pub fn y_line(&self, j: usize) -> f64 {
        -1.0 - self.shift.y + j as f64 * self.h
    }

    pub fn cell_index(&self, i: usize, j: usize) -> usize {
        j * self.nx + i
    }

    pub fn cell_ij(&self, cell: usize) -> (usize, usize) {
        (cell % self.nx, cell / self.nx)
    }

    /// Lower-left and upper-right corners.
    pub fn cell_bounds(&self, cell: usize) -> (Vec2, Vec2) {
        let (i, j) = self.cell_ij(cell);
        (
            Vec2::new(self.x_line(i), self.y_line(j)),
            Vec2::new(self.x_line(i + 1), self.y_line(j + 1)),
        )
    }

    /// Column index containing `x`, clamped to the grid.
    pub fn column_of(&self, x: f64) -> usize {
        let t = ((x - self.x_line(0)) / self.h).floor();
        (t.max(0.0) as usize).min(self.nx - 1)
    }

    pub fn row_of(&self, y: f64) -> usize {
        let t = ((y - self.y_line(0)) / self.h).floor();
        (t.max(0.0) as usize).min(self.ny - 1)
    }

    /// Cell containing `p`, or `None` outside the grid.
    pub fn locate(&self, p: Vec2) -> Option<usize> {
        let x0 = self.x_line(0);
        let y0 = self.y_line(0);
        if p.x < x0 || p.y < y0 || p.x > self.x_line(self.nx) || p.y > self.y_line(self.ny) {
            return None;
        }
        Some(self.cell_index(self.column_of(p.x), self.row_of(p.y)))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unit_cells() {
        let m = ReferenceMesh::new(1.0, Vec2::zeros()).unwrap();
        assert_eq!((m.nx(), m.ny()), (2, 2));
        let m = ReferenceMesh::new(0.5, Vec2::zeros()).unwrap();
        assert_eq!((m.nx(), m.ny()), (4, 4));
    }

    /// Oracle: count cells by walking the grid until the interval is covered.
    fn covering_count(h: f64, s: f64) -> usize {
        let mut n = 0;
        while -1.0 - s + n as f64 * h < 1.0 - 1e-12 {
            n += 1;
        }
        n
    }

    #[test]
    fn shifted_counts_match_covering_oracle() {
        let m = ReferenceMesh::new(0.4, Vec2::new(0.1, 0.0)).unwrap();
        assert_eq!((m.nx(), m.ny()), (covering_count(0.4, 0.1), covering_count(0.4, 0.0)));
        assert_eq!((m.nx(), m.ny()), (6, 5));
        assert!(m.x_line(m.nx()) >= 1.0);
        assert!(m.x_line(0) <= -1.0);
    }

    #[test]
    fn rejects_bad_sizes() {
        assert!(ReferenceMesh::new(0.0, Vec2::zeros()).is_err());
        assert!(ReferenceMesh::new(1.5, Vec2::zeros()).is_err());
        assert!(ReferenceMesh::new(0.5, Vec2::new(0.5, 0.0)).is_err());
    }

    #[test]
    fn centering_puts_origin_mid_cell() {
        for h in [0.4, 0.2, 0.1, 0.05, 0.3] {
            let m = ReferenceMesh::centered(h).unwrap();
            let c = m.locate(Vec2::zeros()).unwrap();
            let (lo, hi) = m.cell_bounds(c);
            let mid = 0.5 * (lo + hi);
            assert!(mid.norm() < 1e-12, "h={h}: {mid:?}");
        }
    }
}
