//! Direct (envelope Cholesky after reverse Cuthill–McKee) and iterative
//! (Jacobi-preconditioned conjugate gradient) solvers for symmetric positive
//! definite systems.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::sparse::CsrMatrix;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SolveMethod {
    #[default]
    Direct,
    Cg,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SolveReport {
    pub solution: Vec<f64>,
    /// Zero for the direct solver.
    pub iterations: usize,
    /// `‖A u - b‖ / ‖b‖`.
    pub residual_norm: f64,
    /// Method that produced the solution (CG falls back to direct).
    pub method: SolveMethod,
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn relative_residual(a: &CsrMatrix, u: &[f64], b: &[f64]) -> f64 {
    let r: Vec<f64> = a.matvec(u).iter().zip(b).map(|(x, y)| x - y).collect();
    norm(&r) / norm(b)
}

/// Solves `A u = b` to relative residual `tol`.
pub fn solve(a: &CsrMatrix, b: &[f64], tol: f64, method: SolveMethod) -> Result<SolveReport> {
    if !(tol > 0.0) {
        return Err(Error::param("tol", "must be positive"));
    }
    if b.len() != a.dim() {
        return Err(Error::param("rhs", format!("length {} does not match {}", b.len(), a.dim())));
    }
    if norm(b) == 0.0 {
        return Ok(SolveReport {
            solution: vec![0.0; b.len()],
            iterations: 0,
            residual_norm: 0.0,
            method,
        });
    }
    match method {
        SolveMethod::Direct => direct(a, b, tol),
        SolveMethod::Cg => {
            let cap = ((10.0 * (a.dim() as f64).sqrt()).ceil() as usize).max(10);
            match conjugate_gradient(a, b, tol, cap) {
                Ok(r) => Ok(r),
                Err(e) => {
                    log::info!("{e}; falling back to the direct solver");
                    direct(a, b, tol)
                }
            }
        }
    }
}

fn direct(a: &CsrMatrix, b: &[f64], tol: f64) -> Result<SolveReport> {
    let perm = reverse_cuthill_mckee(a);
    let pa = a.permuted(&perm);
    let chol = EnvelopeCholesky::factor(&pa)?;
    let pb: Vec<f64> = perm.iter().map(|&i| b[i]).collect();
    let py = chol.solve(&pb);
    let mut u = vec![0.0; b.len()];
    for (new, &old) in perm.iter().enumerate() {
        u[old] = py[new];
    }
    let res = relative_residual(a, &u, b);
    if !(res <= tol.max(1e-8)) {
        log::warn!("direct solve relative residual {res:e} exceeds tolerance {tol:e}");
    }
    Ok(SolveReport {
        solution: u,
        iterations: 0,
        residual_norm: res,
        method: SolveMethod::Direct,
    })
}

/// Jacobi-preconditioned conjugate gradients.
pub fn conjugate_gradient(a: &CsrMatrix, b: &[f64], tol: f64, max_iter: usize) -> Result<SolveReport> {
    let n = a.dim();
    let dinv: Vec<f64> = a
        .diagonal()
        .iter()
        .map(|&d| if d > 0.0 { 1.0 / d } else { 1.0 })
        .collect();
    let bn = norm(b);
    let mut x = vec![0.0; n];
    let mut r = b.to_vec();
    let mut z: Vec<f64> = r.iter().zip(&dinv).map(|(r, d)| r * d).collect();
    let mut p = z.clone();
    let mut rz = dot(&r, &z);
    let mut ap = vec![0.0; n];
    for it in 1..=max_iter {
        a.matvec_into(&p, &mut ap);
        let pap = dot(&p, &ap);
        if !(pap > 0.0) {
            return Err(Error::NotPositiveDefinite { row: it, pivot: pap });
        }
        let alpha = rz / pap;
        for i in 0..n {
            x[i] += alpha * p[i];
            r[i] -= alpha * ap[i];
        }
        let res = norm(&r) / bn;
        if res <= tol {
            return Ok(SolveReport {
                residual_norm: relative_residual(a, &x, b),
                solution: x,
                iterations: it,
                method: SolveMethod::Cg,
            });
        }
        for i in 0..n {
            z[i] = r[i] * dinv[i];
        }
        let rz_new = dot(&r, &z);
        let beta = rz_new / rz;
        rz = rz_new;
        for i in 0..n {
            p[i] = z[i] + beta * p[i];
        }
    }
    Err(Error::NoConvergence {
        iterations: max_iter,
        residual: norm(&r) / bn,
    })
}

/// Reverse Cuthill–McKee ordering; `perm[new] = old`.
pub fn reverse_cuthill_mckee(a: &CsrMatrix) -> Vec<usize> {
    let n = a.dim();
    let degree: Vec<usize> = (0..n).map(|i| a.row(i).0.len()).collect();
    let mut visited = vec![false; n];
    let mut order = Vec::with_capacity(n);
    let mut by_degree: Vec<usize> = (0..n).collect();
    by_degree.sort_by_key(|&i| (degree[i], i));
    for &start in &by_degree {
        if visited[start] {
            continue;
        }
        visited[start] = true;
        let mut queue = VecDeque::from([start]);
        while let Some(v) = queue.pop_front() {
            order.push(v);
            let mut nb: Vec<usize> = a.row(v).0.iter().copied().filter(|&j| !visited[j]).collect();
            nb.sort_by_key(|&j| (degree[j], j));
            for j in nb {
                visited[j] = true;
                queue.push_back(j);
            }
        }
    }
    order.reverse();
    order
}

/// Cholesky factor stored row-wise over the lower envelope.
#[derive(Debug, Clone)]
pub struct EnvelopeCholesky {
    first: Vec<usize>,
    start: Vec<usize>,
    data: Vec<f64>,
}

impl EnvelopeCholesky {
    pub fn factor(a: &CsrMatrix) -> Result<Self> {
        let n = a.dim();
        let first: Vec<usize> = (0..n)
            .map(|i| a.row(i).0.iter().copied().filter(|&j| j <= i).min().unwrap_or(i))
            .collect();
        let mut start = vec![0; n + 1];
        for i in 0..n {
            start[i + 1] = start[i] + (i - first[i] + 1);
        }
        let mut data = vec![0.0; start[n]];
        let scale = a.max_abs();
        for i in 0..n {
            let (c, v) = a.row(i);
            for (&j, x) in c.iter().zip(v) {
                if j <= i {
                    data[start[i] + j - first[i]] = *x;
                }
            }
            for j in first[i]..=i {
                let lo = first[i].max(first[j]);
                let ri = start[i] - first[i];
                let rj = start[j] - first[j];
                let s: f64 = (lo..j).map(|k| data[ri + k] * data[rj + k]).sum();
                let aij = data[ri + j] - s;
                if j < i {
                    data[ri + j] = aij / data[rj + j];
                } else {
                    if !(aij > 1e-14 * scale) {
                        return Err(Error::NotPositiveDefinite { row: i, pivot: aij });
                    }
                    data[ri + i] = aij.sqrt();
                }
            }
        }
        Ok(EnvelopeCholesky { first, start, data })
    }

    fn at(&self, i: usize, j: usize) -> f64 {
        self.data[self.start[i] + j - self.first[i]]
    }

    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        let n = b.len();
        let mut y = b.to_vec();
        for i in 0..n {
            let s: f64 = (self.first[i]..i).map(|k| self.at(i, k) * y[k]).sum();
            y[i] = (y[i] - s) / self.at(i, i);
        }
        for i in (0..n).rev() {
            y[i] /= self.at(i, i);
            let yi = y[i];
            for k in self.first[i]..i {
                y[k] -= self.at(i, k) * yi;
            }
        }
        y
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sparse::Triplets;
    use nalgebra::DMatrix;

    fn laplace_2d(m: usize) -> CsrMatrix {
        let n = m * m;
        let mut t = Triplets::new(n);
        for j in 0..m {
            for i in 0..m {
                let k = j * m + i;
                t.push(k, k, 4.0);
                if i > 0 {
                    t.push(k, k - 1, -1.0);
                }
                if i + 1 < m {
                    t.push(k, k + 1, -1.0);
                }
                if j > 0 {
                    t.push(k, k - m, -1.0);
                }
                if j + 1 < m {
                    t.push(k, k + m, -1.0);
                }
            }
        }
        t.to_csr()
    }

    #[test]
    fn identity_and_two_by_two() {
        let b = vec![1.0, -2.0, 3.0];
        for m in [SolveMethod::Direct, SolveMethod::Cg] {
            let r = solve(&CsrMatrix::identity(3), &b, 1e-12, m).unwrap();
            assert_eq!(r.solution, b);
        }
        let a = CsrMatrix::from_dense(&DMatrix::from_row_slice(2, 2, &[2.0, 1.0, 1.0, 2.0]));
        for m in [SolveMethod::Direct, SolveMethod::Cg] {
            let r = solve(&a, &[3.0, 3.0], 1e-12, m).unwrap();
            assert!((r.solution[0] - 1.0).abs() < 1e-14 && (r.solution[1] - 1.0).abs() < 1e-14);
        }
    }

    #[test]
    fn zero_rhs_gives_zero() {
        let r = solve(&laplace_2d(4), &[0.0; 16], 1e-10, SolveMethod::Cg).unwrap();
        assert!(r.solution.iter().all(|&x| x == 0.0));
    }

    #[test]
    fn direct_and_cg_agree() {
        let a = laplace_2d(15);
        let b: Vec<f64> = (0..a.dim()).map(|i| ((i * 7) % 11) as f64 - 5.0).collect();
        let d = solve(&a, &b, 1e-12, SolveMethod::Direct).unwrap();
        let c = solve(&a, &b, 1e-12, SolveMethod::Cg).unwrap();
        assert_eq!(c.method, SolveMethod::Cg);
        assert!(d.residual_norm < 1e-13);
        let diff: f64 = d.solution.iter().zip(&c.solution).map(|(x, y)| (x - y).powi(2)).sum();
        assert!(diff.sqrt() < 1e-9 * norm(&d.solution));
    }

    #[test]
    fn indefinite_is_reported() {
        let a = CsrMatrix::from_dense(&DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 1.0]));
        assert!(matches!(
            solve(&a, &[1.0, 0.0], 1e-10, SolveMethod::Direct),
            Err(Error::NotPositiveDefinite { .. })
        ));
    }

    #[test]
    fn rcm_is_a_permutation() {
        let a = laplace_2d(9);
        let mut p = reverse_cuthill_mckee(&a);
        p.sort();
        assert_eq!(p, (0..81).collect::<Vec<_>>());
    }
}
