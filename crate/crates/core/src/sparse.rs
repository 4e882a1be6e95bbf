//! Compressed-row matrices and Jacobi-preconditioned Krylov solvers.

use crate::error::{PnpError, Result};

/// Residual tolerance used when callers do not pick one.
pub const DEFAULT_LINEAR_TOL: f64 = 1e-8;

/// Compressed sparse row matrix. Column indices are strictly increasing
/// within each row.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseMatrix {
    nrows: usize,
    ncols: usize,
    row_offsets: Vec<usize>,
    col_indices: Vec<usize>,
    values: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolveReport {
    pub iterations: usize,
    pub final_residual_norm: f64,
    pub converged: bool,
}

impl SparseMatrix {
    /// Builds a matrix from `(row, col, value)` triplets, summing duplicates.
    pub fn from_triplets(
        nrows: usize,
        ncols: usize,
        triplets: impl IntoIterator<Item = (usize, usize, f64)>,
    ) -> Result<Self> {
        let mut entries: Vec<(usize, usize, f64)> = triplets.into_iter().collect();
        if let Some(&(r, c, _)) = entries.iter().find(|&&(r, c, _)| r >= nrows || c >= ncols) {
            return Err(PnpError::invalid(format!(
                "triplet ({r}, {c}) outside a {nrows}x{ncols} matrix"
            )));
        }
        entries.sort_by_key(|&(r, c, _)| (r, c));

        let mut row_offsets = vec![0usize; nrows + 1];
        let mut col_indices = Vec::with_capacity(entries.len());
        let mut values: Vec<f64> = Vec::with_capacity(entries.len());
        let mut last: Option<(usize, usize)> = None;
        for (r, c, v) in entries {
            if last == Some((r, c)) {
                *values.last_mut().unwrap() += v;
            } else {
                col_indices.push(c);
                values.push(v);
                row_offsets[r + 1] += 1;
                last = Some((r, c));
            }
        }
        for r in 0..nrows {
            row_offsets[r + 1] += row_offsets[r];
        }
        Ok(SparseMatrix {
            nrows,
            ncols,
            row_offsets,
            col_indices,
            values,
        })
    }

    pub fn identity(n: usize) -> Self {
        SparseMatrix {
            nrows: n,
            ncols: n,
            row_offsets: (0..=n).collect(),
            col_indices: (0..n).collect(),
            values: vec![1.0; n],
        }
    }

    pub fn zeros(nrows: usize, ncols: usize) -> Self {
        SparseMatrix {
            nrows,
            ncols,
            row_offsets: vec![0; nrows + 1],
            col_indices: Vec::new(),
            values: Vec::new(),
        }
    }

    /// Keeps the nonzero entries of a dense row-major matrix.
    pub fn from_dense(rows: &[Vec<f64>]) -> Result<Self> {
        let ncols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != ncols) {
            return Err(PnpError::invalid("ragged dense matrix"));
        }
        let triplets = rows.iter().enumerate().flat_map(|(i, row)| {
            row.iter()
                .enumerate()
                .filter(|(_, v)| **v != 0.0)
                .map(move |(j, &v)| (i, j, v))
        });
        SparseMatrix::from_triplets(rows.len(), ncols, triplets)
    }

    pub fn to_dense(&self) -> Vec<Vec<f64>> {
        let mut dense = vec![vec![0.0; self.ncols]; self.nrows];
        for (i, row) in dense.iter_mut().enumerate() {
            for (j, v) in self.row(i) {
                row[j] = v;
            }
        }
        dense
    }

    pub fn nrows(&self) -> usize {
        self.nrows
    }

    pub fn ncols(&self) -> usize {
        self.ncols
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn row_offsets(&self) -> &[usize] {
        &self.row_offsets
    }

    pub fn col_indices(&self) -> &[usize] {
        &self.col_indices
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Iterator over the stored `(col, value)` pairs of row `i`.
    pub fn row(&self, i: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let span = self.row_offsets[i]..self.row_offsets[i + 1];
        self.col_indices[span.clone()]
            .iter()
            .copied()
            .zip(self.values[span].iter().copied())
    }

    /// Stored value at `(i, j)`, or zero.
    pub fn get(&self, i: usize, j: usize) -> f64 {
        let span = self.row_offsets[i]..self.row_offsets[i + 1];
        match self.col_indices[span.clone()].binary_search(&j) {
            Ok(pos) => self.values[span.start + pos],
            Err(_) => 0.0,
        }
    }

    pub fn diagonal(&self) -> Vec<f64> {
        (0..self.nrows.min(self.ncols))
            .map(|i| self.get(i, i))
            .collect()
    }

    pub fn spmv(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.ncols {
            return Err(PnpError::invalid(format!(
                "vector of length {} against {} columns",
                x.len(),
                self.ncols
            )));
        }
        let mut y = vec![0.0; self.nrows];
        self.spmv_into(x, &mut y);
        Ok(y)
    }

    pub(crate) fn spmv_into(&self, x: &[f64], y: &mut [f64]) {
        for (i, yi) in y.iter_mut().enumerate() {
            let span = self.row_offsets[i]..self.row_offsets[i + 1];
            *yi = self.col_indices[span.clone()]
                .iter()
                .zip(&self.values[span])
                .map(|(&j, &v)| v * x[j])
                .sum();
        }
    }

    /// `alpha * self + beta * other`; both operands must share dimensions.
    pub fn add_scaled(&self, alpha: f64, other: &SparseMatrix, beta: f64) -> Result<Self> {
        if self.nrows != other.nrows || self.ncols != other.ncols {
            return Err(PnpError::invalid("matrix dimensions differ"));
        }
        if self.row_offsets == other.row_offsets && self.col_indices == other.col_indices {
            let values = self
                .values
                .iter()
                .zip(&other.values)
                .map(|(a, b)| alpha * a + beta * b)
                .collect();
            return Ok(SparseMatrix {
                values,
                ..self.clone()
            });
        }
        let lhs = (0..self.nrows).flat_map(|i| self.row(i).map(move |(j, v)| (i, j, alpha * v)));
        let rhs = (0..other.nrows).flat_map(|i| other.row(i).map(move |(j, v)| (i, j, beta * v)));
        SparseMatrix::from_triplets(self.nrows, self.ncols, lhs.chain(rhs))
    }

    pub fn is_symmetric(&self, tol: f64) -> bool {
        self.nrows == self.ncols
            && (0..self.nrows).all(|i| self.row(i).all(|(j, v)| (v - self.get(j, i)).abs() <= tol))
    }

    /// Visits every stored entry as `(row, col, &mut value)`.
    pub(crate) fn for_each_entry_mut(&mut self, mut f: impl FnMut(usize, usize, &mut f64)) {
        for i in 0..self.nrows {
            for pos in self.row_offsets[i]..self.row_offsets[i + 1] {
                f(i, self.col_indices[pos], &mut self.values[pos]);
            }
        }
    }

    pub(crate) fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub(crate) fn row_span(&self, i: usize) -> std::ops::Range<usize> {
        self.row_offsets[i]..self.row_offsets[i + 1]
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm2(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

fn residual(a: &SparseMatrix, x: &[f64], b: &[f64], r: &mut [f64]) {
    a.spmv_into(x, r);
    for (ri, bi) in r.iter_mut().zip(b) {
        *ri = bi - *ri;
    }
}

fn check_system(a: &SparseMatrix, b: &[f64], tol: f64, x0: Option<&[f64]>) -> Result<()> {
    if a.nrows != a.ncols {
        return Err(PnpError::invalid("solver needs a square matrix"));
    }
    if b.len() != a.nrows || x0.is_some_and(|x| x.len() != a.nrows) {
        return Err(PnpError::invalid("right-hand side length mismatch"));
    }
    if !(tol > 0.0) {
        return Err(PnpError::invalid("tolerance must be positive"));
    }
    Ok(())
}

fn inverse_diagonal(a: &SparseMatrix) -> Vec<f64> {
    a.diagonal()
        .into_iter()
        .map(|d| if d != 0.0 { 1.0 / d } else { 1.0 })
        .collect()
}

/// Default iteration cap: ten sweeps per unknown.
pub fn default_max_iter(n: usize) -> usize {
    10 * n.max(1)
}

/// Jacobi-preconditioned conjugate gradients for symmetric positive definite
/// systems. Stops once `‖b − Ax‖₂ ≤ tol`.
pub fn solve_spd(
    a: &SparseMatrix,
    b: &[f64],
    tol: f64,
    max_iter: usize,
) -> Result<(Vec<f64>, SolveReport)> {
    solve_spd_from(a, b, None, tol, max_iter)
}

/// [`solve_spd`] starting from an initial guess.
pub fn solve_spd_from(
    a: &SparseMatrix,
    b: &[f64],
    x0: Option<&[f64]>,
    tol: f64,
    max_iter: usize,
) -> Result<(Vec<f64>, SolveReport)> {
    check_system(a, b, tol, x0)?;
    let n = b.len();
    let inv_diag = inverse_diagonal(a);
    let mut x = x0.map_or_else(|| vec![0.0; n], <[f64]>::to_vec);
    let mut r = vec![0.0; n];
    residual(a, &x, b, &mut r);
    let mut rnorm = norm2(&r);
    let mut z: Vec<f64> = r.iter().zip(&inv_diag).map(|(ri, di)| ri * di).collect();
    let mut p = z.clone();
    let mut ap = vec![0.0; n];
    let mut rz = dot(&r, &z);
    let mut iterations = 0;

    while rnorm > tol && iterations < max_iter {
        a.spmv_into(&p, &mut ap);
        let pap = dot(&p, &ap);
        if !(pap > 0.0) {
            break;
        }
        let alpha = rz / pap;
        for i in 0..n {
            x[i] += alpha * p[i];
            r[i] -= alpha * ap[i];
        }
        iterations += 1;
        rnorm = norm2(&r);
        if rnorm <= tol {
            // guard against drift of the recursive residual
            residual(a, &x, b, &mut r);
            rnorm = norm2(&r);
            if rnorm <= tol {
                break;
            }
        }
        for i in 0..n {
            z[i] = r[i] * inv_diag[i];
        }
        let rz_next = dot(&r, &z);
        let beta = rz_next / rz;
        rz = rz_next;
        for i in 0..n {
            p[i] = z[i] + beta * p[i];
        }
    }

    let report = SolveReport {
        iterations,
        final_residual_norm: rnorm,
        converged: rnorm <= tol,
    };
    if report.converged {
        Ok((x, report))
    } else {
        Err(PnpError::LinearSolve {
            solver: "conjugate gradient",
            report,
        })
    }
}

/// Jacobi-preconditioned BiCGSTAB for general nonsingular systems. Stops once
/// `‖b − Ax‖₂ ≤ tol`.
pub fn solve_nonsymmetric(
    a: &SparseMatrix,
    b: &[f64],
    tol: f64,
    max_iter: usize,
) -> Result<(Vec<f64>, SolveReport)> {
    solve_nonsymmetric_from(a, b, None, tol, max_iter)
}

/// [`solve_nonsymmetric`] starting from an initial guess.
pub fn solve_nonsymmetric_from(
    a: &SparseMatrix,
    b: &[f64],
    x0: Option<&[f64]>,
    tol: f64,
    max_iter: usize,
) -> Result<(Vec<f64>, SolveReport)> {
    check_system(a, b, tol, x0)?;
    let n = b.len();
    let inv_diag = inverse_diagonal(a);
    let mut x = x0.map_or_else(|| vec![0.0; n], <[f64]>::to_vec);
    let mut r = vec![0.0; n];
    residual(a, &x, b, &mut r);
    let mut rnorm = norm2(&r);
    let r_hat = r.clone();
    let (mut rho, mut alpha, mut omega) = (1.0, 1.0, 1.0);
    let mut v = vec![0.0; n];
    let mut p = vec![0.0; n];
    let mut y = vec![0.0; n];
    let mut s = vec![0.0; n];
    let mut z = vec![0.0; n];
    let mut t = vec![0.0; n];
    let mut iterations = 0;
    let mut breakdown = false;

    while rnorm > tol && iterations < max_iter {
        let rho_next = dot(&r_hat, &r);
        if rho_next == 0.0 || omega == 0.0 {
            breakdown = true;
            break;
        }
        let beta = (rho_next / rho) * (alpha / omega);
        rho = rho_next;
        for i in 0..n {
            p[i] = r[i] + beta * (p[i] - omega * v[i]);
            y[i] = p[i] * inv_diag[i];
        }
        a.spmv_into(&y, &mut v);
        let rv = dot(&r_hat, &v);
        if rv == 0.0 {
            breakdown = true;
            break;
        }
        alpha = rho / rv;
        for i in 0..n {
            s[i] = r[i] - alpha * v[i];
        }
        iterations += 1;
        if norm2(&s) <= tol {
            for i in 0..n {
                x[i] += alpha * y[i];
            }
            residual(a, &x, b, &mut r);
            rnorm = norm2(&r);
            if rnorm <= tol {
                break;
            }
            continue;
        }
        for i in 0..n {
            z[i] = s[i] * inv_diag[i];
        }
        a.spmv_into(&z, &mut t);
        let tt = dot(&t, &t);
        omega = if tt > 0.0 { dot(&t, &s) / tt } else { 0.0 };
        for i in 0..n {
            x[i] += alpha * y[i] + omega * z[i];
            r[i] = s[i] - omega * t[i];
        }
        rnorm = norm2(&r);
        if rnorm <= tol {
            residual(a, &x, b, &mut r);
            rnorm = norm2(&r);
        }
    }

    let report = SolveReport {
        iterations,
        final_residual_norm: rnorm,
        converged: rnorm <= tol,
    };
    if report.converged {
        Ok((x, report))
    } else {
        Err(PnpError::LinearSolve {
            solver: if breakdown {
                "BiCGSTAB (breakdown)"
            } else {
                "BiCGSTAB"
            },
            report,
        })
    }
}
