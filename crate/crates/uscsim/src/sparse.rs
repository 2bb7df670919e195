//! Minimal CSR kernels for the master-equation right-hand side.
//!
//! The propagated superoperator only ever needs two shapes of product:
//! `A·X` and `X·A†` with `A` sparse and `X` a dense column-major matrix.
//! Both parallelize over the columns of the output, which are disjoint
//! slices, so no locking is needed.

use nalgebra::DMatrix;
use num_complex::Complex64 as C64;

use crate::exec::{self, Exec};
use crate::tensor::Operator;

/// Compressed sparse rows over a square complex matrix.
#[derive(Clone, Debug)]
pub struct CsrMatrix {
    n: usize,
    row_ptr: Vec<usize>,
    col_idx: Vec<usize>,
    vals: Vec<C64>,
}

impl CsrMatrix {
    /// Build from a dense square matrix, dropping entries with magnitude at
    /// most `drop_tol · max|A|`. Basis-change roundoff sits many orders below
    /// physical matrix elements, so a relative cutoff of ~1e−14 separates
    /// them cleanly; pass 0.0 to keep every exact nonzero.
    pub fn from_dense(a: &DMatrix<C64>, drop_tol: f64) -> Self {
        assert_eq!(a.nrows(), a.ncols(), "CSR kernels assume square operators");
        let n = a.nrows();
        let scale = a.iter().fold(0.0f64, |m, z| m.max(z.norm()));
        let cutoff = drop_tol * scale;
        let mut row_ptr = Vec::with_capacity(n + 1);
        let mut col_idx = Vec::new();
        let mut vals = Vec::new();
        row_ptr.push(0);
        for i in 0..n {
            for j in 0..n {
                let z = a[(i, j)];
                if z.norm() > cutoff || (cutoff == 0.0 && z != C64::new(0.0, 0.0)) {
                    col_idx.push(j);
                    vals.push(z);
                }
            }
            row_ptr.push(col_idx.len());
        }
        Self {
            n,
            row_ptr,
            col_idx,
            vals,
        }
    }

    pub fn from_operator(op: &Operator, drop_tol: f64) -> Self {
        Self::from_dense(op.data(), drop_tol)
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn nnz(&self) -> usize {
        self.vals.len()
    }

    pub fn max_abs(&self) -> f64 {
        self.vals.iter().fold(0.0f64, |m, z| m.max(z.norm()))
    }

    pub fn to_dense(&self) -> DMatrix<C64> {
        let mut out = DMatrix::zeros(self.n, self.n);
        for i in 0..self.n {
            for idx in self.row_ptr[i]..self.row_ptr[i + 1] {
                out[(i, self.col_idx[idx])] = self.vals[idx];
            }
        }
        out
    }

    /// out = A·x.
    pub fn mul_into(&self, x: &DMatrix<C64>, out: &mut DMatrix<C64>, exec: Exec) {
        self.check_shapes(x, out);
        let xs = x.as_slice();
        let n = self.n;
        exec::for_each_column(exec, n, out.as_mut_slice(), |j, col| {
            let xcol = &xs[j * n..(j + 1) * n];
            for i in 0..n {
                let mut acc = C64::new(0.0, 0.0);
                for idx in self.row_ptr[i]..self.row_ptr[i + 1] {
                    acc += self.vals[idx] * xcol[self.col_idx[idx]];
                }
                col[i] = acc;
            }
        });
    }

    /// out += scale·(A·x).
    pub fn accum_mul(&self, x: &DMatrix<C64>, out: &mut DMatrix<C64>, scale: C64, exec: Exec) {
        self.check_shapes(x, out);
        let xs = x.as_slice();
        let n = self.n;
        exec::for_each_column(exec, n, out.as_mut_slice(), |j, col| {
            let xcol = &xs[j * n..(j + 1) * n];
            for i in 0..n {
                let mut acc = C64::new(0.0, 0.0);
                for idx in self.row_ptr[i]..self.row_ptr[i + 1] {
                    acc += self.vals[idx] * xcol[self.col_idx[idx]];
                }
                col[i] += scale * acc;
            }
        });
    }

    fn check_shapes(&self, x: &DMatrix<C64>, out: &DMatrix<C64>) {
        assert_eq!(x.nrows(), self.n, "input row count");
        assert_eq!(x.ncols(), self.n, "input column count");
        assert_eq!(out.nrows(), self.n, "output row count");
        assert_eq!(out.ncols(), self.n, "output column count");
    }
}

/// out += scale·(x·A†). Column j of the result draws on row j of `A`:
/// (x·A†)[·,j] = Σ_k conj(A[j,k]) x[·,k].
pub fn accum_mul_adj(
    x: &DMatrix<C64>,
    a: &CsrMatrix,
    out: &mut DMatrix<C64>,
    scale: C64,
    exec: Exec,
) {
    let n = a.n;
    assert_eq!(x.nrows(), n, "input row count");
    assert_eq!(x.ncols(), n, "input column count");
    assert_eq!(out.nrows(), n, "output row count");
    assert_eq!(out.ncols(), n, "output column count");
    let xs = x.as_slice();
    exec::for_each_column(exec, n, out.as_mut_slice(), |j, col| {
        for idx in a.row_ptr[j]..a.row_ptr[j + 1] {
            let w = scale * a.vals[idx].conj();
            let xcol = &xs[a.col_idx[idx] * n..(a.col_idx[idx] + 1) * n];
            for i in 0..n {
                col[i] += w * xcol[i];
            }
        }
    });
}
