//! Compressed sparse row matrices and preconditioned conjugate gradients.

use std::sync::Arc;

use log::trace;
use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

#[derive(Debug, Clone)]
pub struct CsrMatrix {
    n_rows: usize,
    n_cols: usize,
    row_ptr: Arc<Vec<usize>>,
    col_idx: Arc<Vec<usize>>,
    values: Vec<f64>,
}

impl CsrMatrix {
    /// All-zero matrix with the given sorted, duplicate-free structure.
    pub fn with_pattern(n_cols: usize, row_ptr: Arc<Vec<usize>>, col_idx: Arc<Vec<usize>>) -> Self {
        let nnz = col_idx.len();
        CsrMatrix {
            n_rows: row_ptr.len() - 1,
            n_cols,
            row_ptr,
            col_idx,
            values: vec![0.0; nnz],
        }
    }

    pub fn identity(n: usize) -> Self {
        CsrMatrix {
            n_rows: n,
            n_cols: n,
            row_ptr: Arc::new((0..=n).collect()),
            col_idx: Arc::new((0..n).collect()),
            values: vec![1.0; n],
        }
    }

    /// Builds from `(row, col, value)` triplets; duplicates are summed in input order.
    pub fn from_triplets(n_rows: usize, n_cols: usize, triplets: &[(usize, usize, f64)]) -> Self {
        let mut rows: Vec<Vec<(usize, f64)>> = vec![Vec::new(); n_rows];
        for &(i, j, v) in triplets {
            assert!(i < n_rows && j < n_cols, "triplet ({i},{j}) out of bounds");
            rows[i].push((j, v));
        }
        let mut row_ptr = Vec::with_capacity(n_rows + 1);
        let mut col_idx = Vec::new();
        let mut values = Vec::new();
        row_ptr.push(0);
        for mut row in rows {
            row.sort_by_key(|&(j, _)| j);
            for (j, v) in row {
                if col_idx.len() > *row_ptr.last().unwrap() && *col_idx.last().unwrap() == j {
                    *values.last_mut().unwrap() += v;
                } else {
                    col_idx.push(j);
                    values.push(v);
                }
            }
            row_ptr.push(col_idx.len());
        }
        CsrMatrix {
            n_rows,
            n_cols,
            row_ptr: Arc::new(row_ptr),
            col_idx: Arc::new(col_idx),
            values,
        }
    }

    pub fn n_rows(&self) -> usize {
        self.n_rows
    }

    pub fn n_cols(&self) -> usize {
        self.n_cols
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn row_ptr(&self) -> &[usize] {
        &self.row_ptr
    }

    pub fn col_idx(&self) -> &[usize] {
        &self.col_idx
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn row(&self, i: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let r = self.row_ptr[i]..self.row_ptr[i + 1];
        self.col_idx[r.clone()].iter().copied().zip(self.values[r].iter().copied())
    }

    fn position(&self, i: usize, j: usize) -> Option<usize> {
        let start = self.row_ptr[i];
        self.col_idx[start..self.row_ptr[i + 1]]
            .binary_search(&j)
            .ok()
            .map(|k| start + k)
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.position(i, j).map_or(0.0, |k| self.values[k])
    }

    /// Adds `v` to an entry that must exist in the pattern.
    pub fn add_to(&mut self, i: usize, j: usize, v: f64) {
        let k = self
            .position(i, j)
            .unwrap_or_else(|| panic!("entry ({i},{j}) not in sparsity pattern"));
        self.values[k] += v;
    }

    pub fn same_pattern(&self, other: &CsrMatrix) -> bool {
        Arc::ptr_eq(&self.row_ptr, &other.row_ptr) && Arc::ptr_eq(&self.col_idx, &other.col_idx)
            || (self.row_ptr == other.row_ptr && self.col_idx == other.col_idx)
    }

    /// `self + scale * other` for matrices sharing a pattern.
    pub fn add_scaled(&self, scale: f64, other: &CsrMatrix) -> CsrMatrix {
        assert!(self.same_pattern(other), "patterns differ");
        let mut out = self.clone();
        for (a, b) in out.values.iter_mut().zip(&other.values) {
            *a += scale * b;
        }
        out
    }

    pub fn mul_vec(&self, x: &[f64], y: &mut [f64]) {
        debug_assert_eq!(x.len(), self.n_cols);
        for (i, yi) in y.iter_mut().enumerate().take(self.n_rows) {
            let mut s = 0.0;
            for k in self.row_ptr[i]..self.row_ptr[i + 1] {
                s += self.values[k] * x[self.col_idx[k]];
            }
            *yi = s;
        }
    }

    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; self.n_rows];
        self.mul_vec(x, &mut y);
        y
    }

    /// `y += A^T x`.
    pub fn mul_transpose_add(&self, x: &[f64], y: &mut [f64]) {
        for (i, &xi) in x.iter().enumerate().take(self.n_rows) {
            for k in self.row_ptr[i]..self.row_ptr[i + 1] {
                y[self.col_idx[k]] += self.values[k] * xi;
            }
        }
    }

    pub fn diagonal(&self) -> Vec<f64> {
        (0..self.n_rows).map(|i| self.get(i, i)).collect()
    }

    pub fn transpose(&self) -> CsrMatrix {
        let mut counts = vec![0usize; self.n_cols + 1];
        for &j in self.col_idx.iter() {
            counts[j + 1] += 1;
        }
        for j in 0..self.n_cols {
            counts[j + 1] += counts[j];
        }
        let row_ptr = counts.clone();
        let mut next = counts;
        let mut col_idx = vec![0; self.nnz()];
        let mut values = vec![0.0; self.nnz()];
        for i in 0..self.n_rows {
            for k in self.row_ptr[i]..self.row_ptr[i + 1] {
                let j = self.col_idx[k];
                col_idx[next[j]] = i;
                values[next[j]] = self.values[k];
                next[j] += 1;
            }
        }
        CsrMatrix {
            n_rows: self.n_cols,
            n_cols: self.n_rows,
            row_ptr: Arc::new(row_ptr),
            col_idx: Arc::new(col_idx),
            values,
        }
    }

    /// Sparse product `self * other`.
    pub fn matmul(&self, other: &CsrMatrix) -> CsrMatrix {
        assert_eq!(self.n_cols, other.n_rows);
        let mut acc = vec![0.0; other.n_cols];
        let mut used = vec![false; other.n_cols];
        let mut cols: Vec<usize> = Vec::new();
        let mut row_ptr = Vec::with_capacity(self.n_rows + 1);
        let mut col_idx = Vec::new();
        let mut values = Vec::new();
        row_ptr.push(0);
        for i in 0..self.n_rows {
            for (k, a) in self.row(i) {
                for (j, b) in other.row(k) {
                    if !used[j] {
                        used[j] = true;
                        cols.push(j);
                    }
                    acc[j] += a * b;
                }
            }
            cols.sort_unstable();
            for &j in &cols {
                col_idx.push(j);
                values.push(acc[j]);
                acc[j] = 0.0;
                used[j] = false;
            }
            cols.clear();
            row_ptr.push(col_idx.len());
        }
        CsrMatrix {
            n_rows: self.n_rows,
            n_cols: other.n_cols,
            row_ptr: Arc::new(row_ptr),
            col_idx: Arc::new(col_idx),
            values,
        }
    }

    /// Largest `|A_ij - A_ji|`.
    pub fn max_asymmetry(&self) -> f64 {
        let mut m: f64 = 0.0;
        for i in 0..self.n_rows {
            for (j, v) in self.row(i) {
                m = m.max((v - self.get(j, i)).abs());
            }
        }
        m
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let mut d = DMatrix::zeros(self.n_rows, self.n_cols);
        for i in 0..self.n_rows {
            for (j, v) in self.row(i) {
                d[(i, j)] += v;
            }
        }
        d
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm2(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

pub fn norm_inf(a: &[f64]) -> f64 {
    a.iter().fold(0.0, |m, x| m.max(x.abs()))
}

pub trait Preconditioner: Send + Sync {
    /// `z = B r` for a symmetric positive definite `B`.
    fn apply(&self, r: &[f64], z: &mut [f64]);
}

#[derive(Debug, Clone)]
pub struct Jacobi {
    inv_diag: Vec<f64>,
}

impl Jacobi {
    pub fn new(op: &CsrMatrix) -> Jacobi {
        Jacobi {
            inv_diag: op
                .diagonal()
                .into_iter()
                .map(|d| if d > 0.0 { 1.0 / d } else { 1.0 })
                .collect(),
        }
    }
}

impl Preconditioner for Jacobi {
    fn apply(&self, r: &[f64], z: &mut [f64]) {
        for ((zi, ri), di) in z.iter_mut().zip(r).zip(&self.inv_diag) {
            *zi = ri * di;
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CgReport {
    pub iterations: usize,
    pub relative_residual: f64,
}

/// Preconditioned conjugate gradients. Stops once the recursively updated
/// residual satisfies `||r|| <= tol * ||rhs||` (2-norms).
pub fn pcg(
    op: &CsrMatrix,
    rhs: &[f64],
    initial: Option<&[f64]>,
    precond: &dyn Preconditioner,
    tol: f64,
    max_iter: usize,
) -> Result<(Vec<f64>, CgReport)> {
    let n = rhs.len();
    assert_eq!(op.n_rows(), n);
    let bnorm = norm2(rhs);
    let mut x = initial.map_or_else(|| vec![0.0; n], |x0| x0.to_vec());
    if bnorm == 0.0 {
        return Ok((
            vec![0.0; n],
            CgReport {
                iterations: 0,
                relative_residual: 0.0,
            },
        ));
    }
    let mut r = rhs.to_vec();
    if initial.is_some() {
        let ax = op.apply(&x);
        for (ri, a) in r.iter_mut().zip(ax) {
            *ri -= a;
        }
    }
    let mut rnorm = norm2(&r);
    if rnorm <= tol * bnorm {
        return Ok((
            x,
            CgReport {
                iterations: 0,
                relative_residual: rnorm / bnorm,
            },
        ));
    }
    let mut z = vec![0.0; n];
    precond.apply(&r, &mut z);
    let mut p = z.clone();
    let mut rz = dot(&r, &z);
    let mut ap = vec![0.0; n];
    for it in 1..=max_iter {
        op.mul_vec(&p, &mut ap);
        let pap = dot(&p, &ap);
        if !(pap > 0.0) {
            return Err(Error::LinearSolveFailure {
                iterations: it,
                residual: rnorm / bnorm,
            });
        }
        let alpha = rz / pap;
        for i in 0..n {
            x[i] += alpha * p[i];
            r[i] -= alpha * ap[i];
        }
        rnorm = norm2(&r);
        if it % 200 == 0 {
            trace!("pcg iteration {it}: relative residual {:e}", rnorm / bnorm);
        }
        if rnorm <= tol * bnorm {
            trace!("pcg converged in {it} iterations");
            return Ok((
                x,
                CgReport {
                    iterations: it,
                    relative_residual: rnorm / bnorm,
                },
            ));
        }
        precond.apply(&r, &mut z);
        let rz_new = dot(&r, &z);
        let beta = rz_new / rz;
        rz = rz_new;
        for i in 0..n {
            p[i] = z[i] + beta * p[i];
        }
    }
    Err(Error::LinearSolveFailure {
        iterations: max_iter,
        residual: rnorm / bnorm,
    })
}

pub fn default_max_iter(n: usize) -> usize {
    10_000 + 2 * n
}

/// Jacobi-preconditioned CG with relative residual `tol_lin`.
pub fn solve_spd(op: &CsrMatrix, rhs: &[f64], tol_lin: f64) -> Result<Vec<f64>> {
    let jacobi = Jacobi::new(op);
    pcg(op, rhs, None, &jacobi, tol_lin, default_max_iter(rhs.len())).map(|(x, _)| x)
}

struct MgLevel {
    op: CsrMatrix,
    diag: Vec<f64>,
    /// Prolongation from the next coarser level; `None` on the coarsest.
    prolong: Option<(CsrMatrix, CsrMatrix)>,
}

/// Symmetric V(1,1)-cycle with Gauss-Seidel smoothing and Galerkin coarse
/// operators, used as a CG preconditioner on nested meshes.
pub struct Multigrid {
    levels: Vec<MgLevel>,
    coarse: Option<nalgebra::Cholesky<f64, nalgebra::Dyn>>,
}

impl Multigrid {
    /// `prolongations[k]` maps level `k+1` unknowns (coarser) to level `k`
    /// unknowns, with level 0 the operator's own level.
    pub fn new(op: &CsrMatrix, prolongations: &[CsrMatrix]) -> Multigrid {
        let mut levels = Vec::new();
        let mut current = op.clone();
        for p in prolongations {
            if p.n_cols() == 0 || current.n_rows() <= 32 {
                break;
            }
            let pt = p.transpose();
            let coarse = pt.matmul(&current.matmul(p));
            let diag = current.diagonal();
            levels.push(MgLevel {
                op: current,
                diag,
                prolong: Some((p.clone(), pt)),
            });
            current = coarse;
        }
        let dense = current.to_dense();
        let coarse = nalgebra::Cholesky::new(dense);
        let diag = current.diagonal();
        levels.push(MgLevel {
            op: current,
            diag,
            prolong: None,
        });
        Multigrid { levels, coarse }
    }

    pub fn depth(&self) -> usize {
        self.levels.len()
    }

    fn cycle(&self, l: usize, b: &[f64], x: &mut [f64]) {
        let level = &self.levels[l];
        match &level.prolong {
            None => match &self.coarse {
                Some(ch) => {
                    let sol = ch.solve(&DVector::from_column_slice(b));
                    x.copy_from_slice(sol.as_slice());
                }
                None => {
                    x.fill(0.0);
                    for _ in 0..20 {
                        gauss_seidel(&level.op, &level.diag, b, x, false);
                        gauss_seidel(&level.op, &level.diag, b, x, true);
                    }
                }
            },
            Some((p, pt)) => {
                x.fill(0.0);
                gauss_seidel(&level.op, &level.diag, b, x, false);
                let ax = level.op.apply(x);
                let r: Vec<f64> = b.iter().zip(&ax).map(|(bi, ai)| bi - ai).collect();
                let rc = pt.apply(&r);
                let mut xc = vec![0.0; rc.len()];
                self.cycle(l + 1, &rc, &mut xc);
                let corr = p.apply(&xc);
                for (xi, ci) in x.iter_mut().zip(corr) {
                    *xi += ci;
                }
                gauss_seidel(&level.op, &level.diag, b, x, true);
            }
        }
    }
}

impl Preconditioner for Multigrid {
    fn apply(&self, r: &[f64], z: &mut [f64]) {
        self.cycle(0, r, z);
    }
}

fn gauss_seidel(op: &CsrMatrix, diag: &[f64], b: &[f64], x: &mut [f64], backward: bool) {
    let n = op.n_rows();
    let mut sweep = |i: usize| {
        let mut s = b[i];
        for (j, v) in op.row(i) {
            if j != i {
                s -= v * x[j];
            }
        }
        x[i] = s / diag[i];
    };
    if backward {
        (0..n).rev().for_each(&mut sweep);
    } else {
        (0..n).for_each(&mut sweep);
    }
}
