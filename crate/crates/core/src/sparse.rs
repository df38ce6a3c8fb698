//! Compressed sparse row matrices and a Jacobi-preconditioned conjugate
//! gradient that can work on the zero-mean subspace of singular
//! pure-Neumann/periodic operators.
//!
//! Matrix-vector products are row-parallel (each row summed sequentially) so
//! results do not depend on the thread count. Dot products are sequential.

use rayon::prelude::*;

use crate::error::{Result, TrihomError};

#[derive(Clone, Debug, PartialEq)]
pub struct CsrMatrix {
    n: usize,
    row_ptr: Vec<usize>,
    col_idx: Vec<usize>,
    values: Vec<f64>,
}

impl CsrMatrix {
    /// Build from (row, col, value) triplets. Duplicates are summed in insertion
    /// order, so mirrored entries pushed in the same order stay bitwise symmetric.
    pub fn from_triplets(n: usize, triplets: Vec<(usize, usize, f64)>) -> Self {
        // bucket by row (stable), then a stable sort by column inside each row
        let mut start = vec![0usize; n + 1];
        for t in &triplets {
            start[t.0 + 1] += 1;
        }
        for i in 0..n {
            start[i + 1] += start[i];
        }
        let mut bucket = vec![(0usize, 0.0f64); triplets.len()];
        let mut fill = start.clone();
        for (r, c, v) in triplets {
            bucket[fill[r]] = (c, v);
            fill[r] += 1;
        }
        let mut row_ptr = vec![0usize; n + 1];
        let mut col_idx = Vec::with_capacity(bucket.len() / 4);
        let mut values: Vec<f64> = Vec::with_capacity(bucket.len() / 4);
        for r in 0..n {
            let row = &mut bucket[start[r]..start[r + 1]];
            row.sort_by_key(|e| e.0);
            let mut last = None;
            for &(c, v) in row.iter() {
                if last == Some(c) {
                    *values.last_mut().unwrap() += v;
                } else {
                    col_idx.push(c);
                    values.push(v);
                    last = Some(c);
                }
            }
            row_ptr[r + 1] = col_idx.len();
        }
        CsrMatrix { n, row_ptr, col_idx, values }
    }

    pub fn nrows(&self) -> usize {
        self.n
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn row(&self, i: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let (s, e) = (self.row_ptr[i], self.row_ptr[i + 1]);
        self.col_idx[s..e].iter().copied().zip(self.values[s..e].iter().copied())
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.row(i).find(|&(c, _)| c == j).map(|(_, v)| v).unwrap_or(0.0)
    }

    pub fn diagonal(&self) -> Vec<f64> {
        (0..self.n).map(|i| self.get(i, i)).collect()
    }

    pub fn matvec(&self, x: &[f64], y: &mut [f64]) {
        y.par_iter_mut().with_min_len(1024).enumerate().for_each(|(i, yi)| {
            let mut s = 0.0;
            for k in self.row_ptr[i]..self.row_ptr[i + 1] {
                s += self.values[k] * x[self.col_idx[k]];
            }
            *yi = s;
        });
    }

    /// `self + alpha * other` (same size, arbitrary patterns).
    pub fn add_scaled(&self, alpha: f64, other: &CsrMatrix) -> CsrMatrix {
        assert_eq!(self.n, other.n);
        let mut t = Vec::with_capacity(self.nnz() + other.nnz());
        for i in 0..self.n {
            t.extend(self.row(i).map(|(j, v)| (i, j, v)));
            t.extend(other.row(i).map(|(j, v)| (i, j, alpha * v)));
        }
        CsrMatrix::from_triplets(self.n, t)
    }

    /// Add `d[i]` to each diagonal entry.
    pub fn add_diagonal(&self, d: &[f64]) -> CsrMatrix {
        let mut t: Vec<(usize, usize, f64)> = Vec::with_capacity(self.nnz() + self.n);
        for i in 0..self.n {
            t.extend(self.row(i).map(|(j, v)| (i, j, v)));
            t.push((i, i, d[i]));
        }
        CsrMatrix::from_triplets(self.n, t)
    }

    /// Largest |A_ij - A_ji|.
    /// Same pattern with absolute values.
    pub fn abs(&self) -> CsrMatrix {
        CsrMatrix { values: self.values.iter().map(|x| x.abs()).collect(), ..self.clone() }
    }

    pub fn asymmetry(&self) -> f64 {
        let mut worst = 0.0f64;
        for i in 0..self.n {
            for (j, v) in self.row(i) {
                worst = worst.max((v - self.get(j, i)).abs());
            }
        }
        worst
    }

    /// Largest |row sum|; zero for operators that annihilate constants.
    pub fn max_row_sum(&self) -> f64 {
        (0..self.n).map(|i| self.row(i).map(|(_, v)| v).sum::<f64>().abs()).fold(0.0, f64::max)
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm2(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// Compensated (Neumaier) sum.
pub fn compensated_sum(xs: impl IntoIterator<Item = f64>) -> f64 {
    let mut s = 0.0f64;
    let mut c = 0.0f64;
    for x in xs {
        let t = s + x;
        if s.abs() >= x.abs() {
            c += (s - t) + x;
        } else {
            c += (x - t) + s;
        }
        s = t;
    }
    s + c
}

fn remove_mean(v: &mut [f64]) {
    let m = compensated_sum(v.iter().copied()) / v.len() as f64;
    v.iter_mut().for_each(|x| *x -= m);
}

#[derive(Clone, Debug)]
pub struct CgOptions {
    /// Relative residual target ‖b − Ax‖ / ‖b‖.
    pub tol: f64,
    pub max_iter: usize,
    /// Work in the orthogonal complement of constants (for operators whose
    /// kernel is spanned by the all-ones vector).
    pub project_constants: bool,
}

impl CgOptions {
    pub fn new(tol: f64, max_iter: usize) -> Self {
        CgOptions { tol, max_iter, project_constants: false }
    }

    pub fn projected(tol: f64, max_iter: usize) -> Self {
        CgOptions { tol, max_iter, project_constants: true }
    }

    /// Default iteration cap: 50·√N (at least 200).
    pub fn default_max_iter(n: usize) -> usize {
        ((50.0 * (n as f64).sqrt()) as usize).max(200)
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CgOutcome {
    pub iterations: usize,
    /// Final true relative residual.
    pub residual: f64,
}

/// Solve `A x = b` in place, starting from the contents of `x`.
pub fn pcg(a: &CsrMatrix, b: &[f64], x: &mut [f64], opts: &CgOptions) -> Result<CgOutcome> {
    let n = a.nrows();
    assert_eq!(b.len(), n);
    assert_eq!(x.len(), n);
    let mut rhs = b.to_vec();
    if opts.project_constants {
        remove_mean(&mut rhs);
        remove_mean(x);
    }
    let bnorm = norm2(&rhs);
    if bnorm == 0.0 {
        x.iter_mut().for_each(|v| *v = 0.0);
        return Ok(CgOutcome { iterations: 0, residual: 0.0 });
    }
    let inv_diag: Vec<f64> = a
        .diagonal()
        .into_iter()
        .map(|d| if d > 0.0 { 1.0 / d } else { 1.0 })
        .collect();
    let mut r = vec![0.0; n];
    let mut z = vec![0.0; n];
    let mut p = vec![0.0; n];
    let mut ap = vec![0.0; n];
    let mut iterations = 0usize;
    // a few restarts guard against drift between recursive and true residuals
    for _restart in 0..4 {
        a.matvec(x, &mut ap);
        for i in 0..n {
            r[i] = rhs[i] - ap[i];
        }
        if opts.project_constants {
            remove_mean(&mut r);
        }
        let true_res = norm2(&r) / bnorm;
        if true_res <= opts.tol {
            return Ok(CgOutcome { iterations, residual: true_res });
        }
        if iterations >= opts.max_iter {
            return Err(TrihomError::NoConvergence { iterations, residual: true_res });
        }
        for i in 0..n {
            z[i] = r[i] * inv_diag[i];
        }
        if opts.project_constants {
            remove_mean(&mut z);
        }
        p.copy_from_slice(&z);
        let mut rz = dot(&r, &z);
        let target = 0.5 * opts.tol * bnorm;
        while iterations < opts.max_iter {
            a.matvec(&p, &mut ap);
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
            if norm2(&r) <= target {
                break;
            }
            for i in 0..n {
                z[i] = r[i] * inv_diag[i];
            }
            if opts.project_constants {
                remove_mean(&mut z);
            }
            let rz_new = dot(&r, &z);
            let beta = rz_new / rz;
            rz = rz_new;
            for i in 0..n {
                p[i] = z[i] + beta * p[i];
            }
        }
        if !x.iter().all(|v| v.is_finite()) {
            return Err(TrihomError::NonFinite("cg iterate".into()));
        }
    }
    a.matvec(x, &mut ap);
    for i in 0..n {
        r[i] = rhs[i] - ap[i];
    }
    if opts.project_constants {
        remove_mean(&mut r);
    }
    let res = norm2(&r) / bnorm;
    if res <= opts.tol {
        Ok(CgOutcome { iterations, residual: res })
    } else {
        Err(TrihomError::NoConvergence { iterations, residual: res })
    }
}
