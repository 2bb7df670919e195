//! Dense complex linear algebra over truncated tensor-product Hilbert spaces.
//!
//! Everything downstream shares one convention: row-major Kronecker products
//! with factor order fixed by the [`HilbertLayout`], so a composite index is
//! `i = i_0·s_0 + i_1·s_1 + …` with strides `s_k = ∏_{j>k} dims[j]`.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64 as C64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Factor dimensions (and names) of a truncated tensor-product space.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct HilbertLayout {
    dims: Vec<usize>,
    labels: Vec<String>,
}

impl HilbertLayout {
    /// Layout from `(label, dim)` pairs, in tensor order.
    pub fn new(factors: &[(&str, usize)]) -> Result<Self> {
        if factors.is_empty() {
            return Err(Error::DimensionMismatch("empty layout".into()));
        }
        for &(label, d) in factors {
            let min = if label == "qubit" { 2 } else { 1 };
            if d < min {
                return Err(Error::InvalidParameter(format!(
                    "factor '{label}' has dimension {d} (minimum {min})"
                )));
            }
        }
        Ok(Self {
            dims: factors.iter().map(|&(_, d)| d).collect(),
            labels: factors.iter().map(|&(l, _)| l.to_string()).collect(),
        })
    }

    /// Single-factor layout.
    pub fn single(label: &str, dim: usize) -> Self {
        Self::new(&[(label, dim)]).expect("valid single-factor layout")
    }

    /// Qubit ⊗ USC cavity ⊗ nonlinear resonator (the full-model layout).
    pub fn qubit_cavity_resonator(n_c: usize, n_b: usize) -> Self {
        Self::new(&[("qubit", 2), ("cavity", n_c), ("resonator", n_b)])
            .expect("valid full layout")
    }

    /// Qubit ⊗ USC cavity (the Rabi-model layout).
    pub fn qubit_cavity(n_c: usize) -> Self {
        Self::new(&[("qubit", 2), ("cavity", n_c)]).expect("valid Rabi layout")
    }

    /// Two-level USC system ⊗ nonlinear resonator (the reduced-model layout).
    pub fn two_level_resonator(n_b: usize) -> Self {
        Self::new(&[("usc", 2), ("resonator", n_b)]).expect("valid reduced layout")
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn nfactors(&self) -> usize {
        self.dims.len()
    }

    pub fn dim(&self, slot: usize) -> usize {
        self.dims[slot]
    }

    pub fn total_dim(&self) -> usize {
        self.dims.iter().product()
    }

    /// Row-major strides: `strides[k] = ∏_{j>k} dims[j]`.
    pub fn strides(&self) -> Vec<usize> {
        let mut s = vec![1usize; self.dims.len()];
        for k in (0..self.dims.len().saturating_sub(1)).rev() {
            s[k] = s[k + 1] * self.dims[k + 1];
        }
        s
    }

    /// Slot of the first factor with the given label.
    pub fn slot_of(&self, label: &str) -> Option<usize> {
        self.labels.iter().position(|l| l == label)
    }

    fn check_slot(&self, slot: usize) -> Result<()> {
        if slot >= self.dims.len() {
            Err(Error::SlotOutOfRange {
                slot,
                nfactors: self.dims.len(),
            })
        } else {
            Ok(())
        }
    }
}

/// A square operator on a laid-out Hilbert space.
#[derive(Clone, Debug, PartialEq)]
pub struct Operator {
    layout: HilbertLayout,
    data: DMatrix<C64>,
}

impl Operator {
    pub fn new(layout: HilbertLayout, data: DMatrix<C64>) -> Result<Self> {
        let n = layout.total_dim();
        if data.nrows() != n || data.ncols() != n {
            return Err(Error::DimensionMismatch(format!(
                "matrix is {}×{} but layout dimension is {n}",
                data.nrows(),
                data.ncols()
            )));
        }
        Ok(Self { layout, data })
    }

    pub fn zeros(layout: HilbertLayout) -> Self {
        let n = layout.total_dim();
        Self {
            layout,
            data: DMatrix::zeros(n, n),
        }
    }

    pub fn identity(layout: HilbertLayout) -> Self {
        let n = layout.total_dim();
        Self {
            layout,
            data: DMatrix::identity(n, n),
        }
    }

    pub fn layout(&self) -> &HilbertLayout {
        &self.layout
    }

    pub fn dim(&self) -> usize {
        self.data.nrows()
    }

    pub fn data(&self) -> &DMatrix<C64> {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut DMatrix<C64> {
        &mut self.data
    }

    pub fn into_data(self) -> DMatrix<C64> {
        self.data
    }

    /// Replace the layout without touching the data (total dimension must match).
    pub fn with_layout(mut self, layout: HilbertLayout) -> Result<Self> {
        if layout.total_dim() != self.dim() {
            return Err(Error::DimensionMismatch(format!(
                "layout dimension {} ≠ matrix side {}",
                layout.total_dim(),
                self.dim()
            )));
        }
        self.layout = layout;
        Ok(self)
    }

    pub fn adjoint(&self) -> Self {
        Self {
            layout: self.layout.clone(),
            data: self.data.adjoint(),
        }
    }

    pub fn trace(&self) -> C64 {
        self.data.diagonal().sum()
    }

    /// Largest elementwise deviation from Hermiticity.
    pub fn hermiticity_dev(&self) -> f64 {
        let n = self.dim();
        let mut dev: f64 = 0.0;
        for j in 0..n {
            for i in 0..=j {
                dev = dev.max((self.data[(i, j)] - self.data[(j, i)].conj()).norm());
            }
        }
        dev
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0f64, |m, z| m.max(z.norm()))
    }

    pub fn fro_norm(&self) -> f64 {
        self.data.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
    }

    /// Tr(self · rho).
    pub fn expect(&self, rho: &Operator) -> C64 {
        assert_eq!(self.dim(), rho.dim(), "operator/state dimension mismatch");
        let n = self.dim();
        let mut acc = C64::new(0.0, 0.0);
        for i in 0..n {
            for k in 0..n {
                acc += self.data[(i, k)] * rho.data[(k, i)];
            }
        }
        acc
    }

    /// ⟨ψ|A|ψ⟩.
    pub fn expect_vec(&self, psi: &DVector<C64>) -> C64 {
        assert_eq!(self.dim(), psi.len(), "operator/vector dimension mismatch");
        let apsi = &self.data * psi;
        psi.dotc(&apsi)
    }
}

macro_rules! op_binop {
    ($trait:ident, $method:ident, $op:tt) => {
        impl std::ops::$trait for &Operator {
            type Output = Operator;
            fn $method(self, rhs: &Operator) -> Operator {
                assert_eq!(
                    self.layout, rhs.layout,
                    "operator layout mismatch in arithmetic"
                );
                Operator {
                    layout: self.layout.clone(),
                    data: &self.data $op &rhs.data,
                }
            }
        }
    };
}
op_binop!(Add, add, +);
op_binop!(Sub, sub, -);

impl std::ops::Mul for &Operator {
    type Output = Operator;
    fn mul(self, rhs: &Operator) -> Operator {
        assert_eq!(self.layout, rhs.layout, "operator layout mismatch in product");
        Operator {
            layout: self.layout.clone(),
            data: &self.data * &rhs.data,
        }
    }
}

impl std::ops::Mul<C64> for &Operator {
    type Output = Operator;
    fn mul(self, rhs: C64) -> Operator {
        Operator {
            layout: self.layout.clone(),
            data: self.data.map(|z| z * rhs),
        }
    }
}

impl std::ops::Mul<f64> for &Operator {
    type Output = Operator;
    fn mul(self, rhs: f64) -> Operator {
        self * C64::new(rhs, 0.0)
    }
}

/// [A, B] = AB − BA.
pub fn commutator(a: &Operator, b: &Operator) -> Operator {
    &(a * b) - &(b * a)
}

/// A density matrix: Hermitian, unit trace (within `trace_tol`).
///
/// Construction checks trace and Hermiticity; positivity (min eigenvalue
/// ≥ −1e−8) is spot-checked by [`DensityMatrix::min_eigenvalue`] where the
/// cost is warranted (tests, acceptance runs) rather than on every build.
#[derive(Clone, Debug)]
pub struct DensityMatrix {
    op: Operator,
    trace_tol: f64,
}

pub const DEFAULT_TRACE_TOL: f64 = 1e-9;
const HERMITICITY_TOL: f64 = 1e-10;

impl DensityMatrix {
    pub fn new(op: Operator) -> Result<Self> {
        Self::with_trace_tol(op, DEFAULT_TRACE_TOL)
    }

    /// Looser trace tolerances are for states coming out of long evolutions,
    /// where drift up to the integrator's 1e−7 guard is legitimate.
    pub fn with_trace_tol(op: Operator, trace_tol: f64) -> Result<Self> {
        let tr = op.trace();
        let drift = (tr - C64::new(1.0, 0.0)).norm();
        if drift > trace_tol {
            return Err(Error::InvalidState(format!(
                "trace {tr} deviates from 1 by {drift:.3e} (tol {trace_tol:.1e})"
            )));
        }
        let dev = op.hermiticity_dev();
        if dev > HERMITICITY_TOL.max(trace_tol) {
            return Err(Error::NotHermitian { dev });
        }
        Ok(Self { op, trace_tol })
    }

    /// |ψ⟩⟨ψ| from a normalized vector.
    pub fn from_pure(psi: &DVector<C64>, layout: HilbertLayout) -> Result<Self> {
        if psi.len() != layout.total_dim() {
            return Err(Error::DimensionMismatch(format!(
                "vector length {} ≠ layout dimension {}",
                psi.len(),
                layout.total_dim()
            )));
        }
        let nrm = psi.norm();
        if (nrm - 1.0).abs() > 1e-10 {
            return Err(Error::InvalidState(format!(
                "pure state norm {nrm} is not 1"
            )));
        }
        let data = psi * psi.adjoint();
        Self::new(Operator::new(layout, data)?)
    }

    pub fn op(&self) -> &Operator {
        &self.op
    }

    pub fn layout(&self) -> &HilbertLayout {
        self.op.layout()
    }

    pub fn data(&self) -> &DMatrix<C64> {
        self.op.data()
    }

    pub fn dim(&self) -> usize {
        self.op.dim()
    }

    pub fn trace_tol(&self) -> f64 {
        self.trace_tol
    }

    pub fn into_op(self) -> Operator {
        self.op
    }

    /// Tr ρ² (cheap for Hermitian matrices).
    pub fn purity(&self) -> f64 {
        self.op.data().iter().map(|z| z.norm_sqr()).sum()
    }

    /// Smallest eigenvalue; the state invariant is min ≥ −1e−8.
    pub fn min_eigenvalue(&self) -> f64 {
        let (vals, _) = eig_hermitian(&self.op).expect("density matrix is Hermitian");
        vals[0]
    }

    pub fn expect(&self, observable: &Operator) -> C64 {
        observable.expect(&self.op)
    }
}

/// Annihilation operator on an `n`-level truncated Fock space.
pub fn destroy(n: usize) -> Result<Operator> {
    if n == 0 {
        return Err(Error::DimensionMismatch("destroy(0)".into()));
    }
    let mut m = DMatrix::zeros(n, n);
    for k in 1..n {
        m[(k - 1, k)] = C64::new((k as f64).sqrt(), 0.0);
    }
    Operator::new(HilbertLayout::single("mode", n), m)
}

/// Creation operator.
pub fn create(n: usize) -> Result<Operator> {
    Ok(destroy(n)?.adjoint())
}

/// Number operator a†a.
pub fn number(n: usize) -> Result<Operator> {
    let mut m = DMatrix::zeros(n, n);
    for k in 0..n {
        m[(k, k)] = C64::new(k as f64, 0.0);
    }
    Operator::new(HilbertLayout::single("mode", n), m)
}

/// Truncated coherent state, renormalized after checking the truncation
/// deficit 1 − Σ|c_k|² < `COHERENT_DEFICIT_TOL`.
pub const COHERENT_DEFICIT_TOL: f64 = 1e-8;

pub fn coherent_state(alpha: C64, n: usize) -> Result<DVector<C64>> {
    coherent_state_with_tol(alpha, n, COHERENT_DEFICIT_TOL)
}

pub fn coherent_state_with_tol(alpha: C64, n: usize, tol: f64) -> Result<DVector<C64>> {
    if n == 0 {
        return Err(Error::DimensionMismatch("coherent_state on empty space".into()));
    }
    let mut v = DVector::zeros(n);
    // c_k = e^{−|α|²/2} α^k/√k!, built by the stable ratio recurrence.
    let mut c = C64::new((-alpha.norm_sqr() / 2.0).exp(), 0.0);
    let mut norm2 = 0.0;
    for k in 0..n {
        v[k] = c;
        norm2 += c.norm_sqr();
        c *= alpha / C64::new(((k + 1) as f64).sqrt(), 0.0);
    }
    let deficit = 1.0 - norm2;
    if deficit > tol {
        return Err(Error::Truncation { deficit, tol });
    }
    Ok(v / C64::new(norm2.sqrt(), 0.0))
}

/// Displacement D(α) = exp(αa† − α*a), computed by eigendecomposition of the
/// Hermitian generator i(αa† − α*a).
pub fn displacement(alpha: C64, n: usize) -> Result<Operator> {
    let a = destroy(n)?;
    let adag = a.adjoint();
    let gen = &(&adag * alpha) - &(&a * alpha.conj());
    let herm = &gen * C64::new(0.0, 1.0);
    let (vals, vecs) = eig_hermitian(&herm)?;
    let phases = DVector::from_iterator(n, vals.iter().map(|&l| C64::new(0.0, -l).exp()));
    let mut d = DMatrix::zeros(n, n);
    for (k, ph) in phases.iter().enumerate() {
        let col = vecs.column(k);
        for i in 0..n {
            for j in 0..n {
                d[(i, j)] += col[i] * ph * col[j].conj();
            }
        }
    }
    Operator::new(HilbertLayout::single("mode", n), d)
}

/// Row-major Kronecker product: `(A⊗B)[(i_a·n_b+i_b),(j_a·m_b+j_b)] = A[i_a,j_a]·B[i_b,j_b]`.
pub fn kron(a: &DMatrix<C64>, b: &DMatrix<C64>) -> DMatrix<C64> {
    a.kronecker(b)
}

pub fn kron_vec(a: &DVector<C64>, b: &DVector<C64>) -> DVector<C64> {
    let mut out = DVector::zeros(a.len() * b.len());
    for (i, &ai) in a.iter().enumerate() {
        for (j, &bj) in b.iter().enumerate() {
            out[i * b.len() + j] = ai * bj;
        }
    }
    out
}

/// I ⊗ … ⊗ op ⊗ … ⊗ I with `op` on `slot`, in layout order.
pub fn embed(op: &Operator, layout: &HilbertLayout, slot: usize) -> Result<Operator> {
    layout.check_slot(slot)?;
    let d = layout.dim(slot);
    if op.dim() != d {
        return Err(Error::DimensionMismatch(format!(
            "operator dimension {} ≠ layout factor dimension {d} at slot {slot}",
            op.dim()
        )));
    }
    let n_pre: usize = layout.dims()[..slot].iter().product();
    let n_post: usize = layout.dims()[slot + 1..].iter().product();
    let n = layout.total_dim();
    let mut out = DMatrix::zeros(n, n);
    let src = op.data();
    for pre in 0..n_pre {
        let base = pre * d * n_post;
        for r in 0..d {
            for c in 0..d
            {
                let v = src[(r, c)];
                if v != C64::new(0.0, 0.0) {
                    for post in 0..n_post {
                        out[(base + r * n_post + post, base + c * n_post + post)] = v;
                    }
                }
            }
        }
    }
    Operator::new(layout.clone(), out)
}

/// Hermitian eigendecomposition: ascending eigenvalues, orthonormal
/// eigenvector columns, each phase-fixed so its largest-magnitude component
/// is real-positive.
pub fn eig_hermitian(op: &Operator) -> Result<(Vec<f64>, DMatrix<C64>)> {
    let dev = op.hermiticity_dev();
    let scale = op.max_abs().max(1.0);
    if dev > 1e-10 * scale {
        return Err(Error::NotHermitian { dev });
    }
    // Symmetrize to kill roundoff skew before factorizing.
    let n = op.dim();
    let mut h = op.data().clone();
    for j in 0..n {
        for i in 0..j {
            let s = 0.5 * (h[(i, j)] + h[(j, i)].conj());
            h[(i, j)] = s;
            h[(j, i)] = s.conj();
        }
        h[(j, j)] = C64::new(h[(j, j)].re, 0.0);
    }
    let eig = h.symmetric_eigen();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| {
        eig.eigenvalues[i]
            .partial_cmp(&eig.eigenvalues[j])
            .expect("finite eigenvalues")
    });
    let vals: Vec<f64> = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let mut vecs = DMatrix::zeros(n, n);
    for (k, &i) in order.iter().enumerate() {
        let col = eig.eigenvectors.column(i);
        // Phase convention: rotate the largest component onto the positive
        // real axis.
        let (imax, vmax) = col
            .iter()
            .enumerate()
            .max_by(|a, b| {
                a.1.norm()
                    .partial_cmp(&b.1.norm())
                    .expect("finite components")
            })
            .expect("nonzero dimension");
        let _ = imax;
        let phase = if vmax.norm() > 0.0 {
            vmax.conj() / C64::new(vmax.norm(), 0.0)
        } else {
            C64::new(1.0, 0.0)
        };
        for r in 0..n {
            vecs[(r, k)] = col[r] * phase;
        }
    }
    Ok((vals, vecs))
}

/// Partial trace keeping the listed factors (ascending order of `keep`).
pub fn partial_trace(rho: &DensityMatrix, keep: &[usize]) -> Result<DensityMatrix> {
    let op = partial_trace_op(rho.op(), keep)?;
    DensityMatrix::with_trace_tol(op, rho.trace_tol().max(1e-12))
}

/// Partial trace on a plain operator (used for unnormalized branch maps).
pub fn partial_trace_op(op: &Operator, keep: &[usize]) -> Result<Operator> {
    let layout = op.layout();
    if keep.is_empty() {
        return Err(Error::DimensionMismatch("empty keep set".into()));
    }
    let mut keep = keep.to_vec();
    keep.sort_unstable();
    keep.dedup();
    for &s in &keep {
        layout.check_slot(s)?;
    }
    let traced: Vec<usize> = (0..layout.nfactors()).filter(|s| !keep.contains(s)).collect();
    if traced.is_empty() {
        return Ok(op.clone());
    }

    let dims = layout.dims();
    let strides = layout.strides();
    let keep_dims: Vec<usize> = keep.iter().map(|&s| dims[s]).collect();
    let out_dim: usize = keep_dims.iter().product();
    let out_factors: Vec<(&str, usize)> = keep
        .iter()
        .map(|&s| (layout.labels()[s].as_str(), dims[s]))
        .collect();
    let out_layout = HilbertLayout::new(&out_factors)?;
    let mut out_strides = vec![1usize; keep.len()];
    for k in (0..keep.len().saturating_sub(1)).rev() {
        out_strides[k] = out_strides[k + 1] * keep_dims[k + 1];
    }

    // Enumerate kept and traced multi-indices separately; the composite index
    // is the stride-weighted sum of both parts.
    let kept_offsets = enumerate_offsets(&keep, dims, &strides);
    let traced_offsets = enumerate_offsets(&traced, dims, &strides);

    let src = op.data();
    let mut out = DMatrix::zeros(out_dim, out_dim);
    for (ri, &roff) in kept_offsets.iter().enumerate() {
        for (ci, &coff) in kept_offsets.iter().enumerate() {
            let mut acc = C64::new(0.0, 0.0);
            for &toff in &traced_offsets {
                acc += src[(roff + toff, coff + toff)];
            }
            out[(ri, ci)] = acc;
        }
    }
    let _ = out_strides;
    Operator::new(out_layout, out)
}

/// All composite-index offsets generated by the given factor subset, in
/// row-major order of that subset.
fn enumerate_offsets(slots: &[usize], dims: &[usize], strides: &[usize]) -> Vec<usize> {
    let mut offsets = vec![0usize];
    for &s in slots {
        let mut next = Vec::with_capacity(offsets.len() * dims[s]);
        for &off in &offsets {
            for k in 0..dims[s] {
                next.push(off + k * strides[s]);
            }
        }
        offsets = next;
    }
    offsets
}

/// Transpose the indices of one factor; the result is generally not a state.
pub fn partial_transpose(rho: &DensityMatrix, factor: usize) -> Result<Operator> {
    partial_transpose_op(rho.op(), factor)
}

pub fn partial_transpose_op(op: &Operator, factor: usize) -> Result<Operator> {
    let layout = op.layout();
    layout.check_slot(factor)?;
    let dims = layout.dims();
    let strides = layout.strides();
    let d = dims[factor];
    let stride = strides[factor];
    let others: Vec<usize> = (0..layout.nfactors()).filter(|&s| s != factor).collect();
    let other_offsets = enumerate_offsets(&others, dims, &strides);

    let src = op.data();
    let n = op.dim();
    let mut out = DMatrix::zeros(n, n);
    for &ro in &other_offsets {
        for &co in &other_offsets {
            for i in 0..d {
                for j in 0..d {
                    out[(ro + i * stride, co + j * stride)] =
                        src[(ro + j * stride, co + i * stride)];
                }
            }
        }
    }
    Operator::new(layout.clone(), out)
}

/// Trace norm Σ|λ| of a Hermitian operator via eigendecomposition.
pub fn trace_norm_hermitian(op: &Operator) -> Result<f64> {
    let (vals, _) = eig_hermitian(op)?;
    Ok(vals.iter().map(|l| l.abs()).sum())
}

/// ½‖ρ−σ‖_tr for Hermitian inputs.
pub fn trace_distance(a: &Operator, b: &Operator) -> Result<f64> {
    Ok(0.5 * trace_norm_hermitian(&(a - b))?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn c(re: f64, im: f64) -> C64 {
        C64::new(re, im)
    }

    /// Independent Hermitian eigensolver used as an oracle against the
    /// production path: embed H = A + iB into the real symmetric 2n×2n
    /// [[A, −B], [B, A]] (spectrum of H, doubled) and run cyclic real Jacobi.
    fn jacobi_eigvals(h: DMatrix<C64>) -> Vec<f64> {
        let n = h.nrows();
        let m = 2 * n;
        let mut s = vec![vec![0.0f64; m]; m];
        for i in 0..n {
            for j in 0..n {
                s[i][j] = h[(i, j)].re;
                s[n + i][n + j] = h[(i, j)].re;
                s[i][n + j] = -h[(i, j)].im;
                s[n + i][j] = h[(i, j)].im;
            }
        }
        for _sweep in 0..200 {
            let mut off = 0.0f64;
            for p in 0..m {
                for q in (p + 1)..m {
                    off = off.max(s[p][q].abs());
                }
            }
            if off < 1e-13 {
                break;
            }
            for p in 0..m {
                for q in (p + 1)..m {
                    let t = s[p][q];
                    if t.abs() < 1e-15 {
                        continue;
                    }
                    // R = [[c, −s],[s, c]]; RᵀMR kills the (p,q) entry when
                    // tan 2θ = 2t/(M_pp − M_qq).
                    let theta = 0.5 * (2.0 * t).atan2(s[p][p] - s[q][q]);
                    let (co, si) = (theta.cos(), theta.sin());
                    for r in 0..m {
                        let (vp, vq) = (s[r][p], s[r][q]);
                        s[r][p] = co * vp + si * vq;
                        s[r][q] = -si * vp + co * vq;
                    }
                    for col in 0..m {
                        let (vp, vq) = (s[p][col], s[q][col]);
                        s[p][col] = co * vp + si * vq;
                        s[q][col] = -si * vp + co * vq;
                    }
                }
            }
        }
        let mut vals: Vec<f64> = (0..m).map(|i| s[i][i]).collect();
        vals.sort_by(|a, b| a.partial_cmp(b).unwrap());
        // Each eigenvalue of H shows up twice in the embedding.
        vals.into_iter().step_by(2).collect()
    }

    fn deterministic_hermitian(n: usize, seed: u64) -> Operator {
        Operator::new(
            HilbertLayout::single("mode", n),
            crate::testutil::hermitian(n, seed),
        )
        .unwrap()
    }

    #[test]
    fn destroy_matrix_elements() {
        let a = destroy(2).unwrap();
        assert_eq!(a.data()[(0, 1)], c(1.0, 0.0));
        assert_eq!(a.data()[(0, 0)], c(0.0, 0.0));
        assert_eq!(a.data()[(1, 0)], c(0.0, 0.0));
        assert_eq!(a.data()[(1, 1)], c(0.0, 0.0));

        let a3 = destroy(3).unwrap();
        assert_abs_diff_eq!(a3.data()[(1, 2)].re, 2f64.sqrt(), epsilon = 1e-15);

        assert!(destroy(0).is_err());
    }

    #[test]
    fn number_operator_on_fock_state() {
        let a = destroy(5).unwrap();
        let n_op = &a.adjoint() * &a;
        let mut fock2 = DVector::zeros(5);
        fock2[2] = c(1.0, 0.0);
        assert_abs_diff_eq!(n_op.expect_vec(&fock2).re, 2.0, epsilon = 1e-14);
    }

    #[test]
    fn commutator_on_truncated_ladder() {
        // [a, a†] = I holds on all but the top level of the truncation.
        let n = 12;
        let a = destroy(n).unwrap();
        let comm = commutator(&a, &a.adjoint());
        for k in 0..n - 1 {
            assert_abs_diff_eq!(comm.data()[(k, k)].re, 1.0, epsilon = 1e-14);
        }
        assert_abs_diff_eq!(comm.data()[(n - 1, n - 1)].re, -((n - 1) as f64), epsilon = 1e-12);
    }

    #[test]
    fn coherent_vacuum_is_fock_zero() {
        let v = coherent_state(c(0.0, 0.0), 10).unwrap();
        assert_abs_diff_eq!(v[0].re, 1.0, epsilon = 1e-15);
        assert_abs_diff_eq!(v.norm(), 1.0, epsilon = 1e-15);
    }

    #[test]
    fn coherent_mean_photon_number() {
        let v = coherent_state(c(1.0, 0.0), 30).unwrap();
        let n_op = number(30).unwrap();
        assert!((n_op.expect_vec(&v).re - 1.0).abs() < 1e-6);
    }

    #[test]
    fn coherent_overlap_matches_closed_form() {
        // ⟨−α|α⟩ = e^{−2|α|²}; oracle is the closed form, numeric side is the
        // truncated inner product.
        let alpha = 0.7765;
        let plus = coherent_state(c(alpha, 0.0), 40).unwrap();
        let minus = coherent_state(c(-alpha, 0.0), 40).unwrap();
        let overlap = minus.dotc(&plus);
        let oracle = (-2.0 * alpha * alpha).exp();
        assert!((overlap.re - oracle).abs() < 1e-8);
        assert!(overlap.im.abs() < 1e-12);
    }

    #[test]
    fn coherent_truncation_error_reports_deficit() {
        match coherent_state(c(4.0, 0.0), 10) {
            Err(Error::Truncation { deficit, .. }) => assert!(deficit > 0.1),
            other => panic!("expected truncation error, got {other:?}"),
        }
    }

    #[test]
    fn displacement_generates_coherent_state() {
        let alpha = c(0.7, -0.3);
        let n = 40;
        let d = displacement(alpha, n).unwrap();
        let mut vac = DVector::zeros(n);
        vac[0] = c(1.0, 0.0);
        let displaced = d.data() * vac;
        let reference = coherent_state(alpha, n).unwrap();
        assert!((displaced - reference).norm() < 1e-9);
    }

    #[test]
    fn embed_dimension_and_identity() {
        let layout = HilbertLayout::new(&[("qubit", 2), ("cavity", 3)]).unwrap();
        let sz = Operator::new(
            HilbertLayout::single("qubit", 2),
            DMatrix::from_row_slice(2, 2, &[c(1.0, 0.0), c(0.0, 0.0), c(0.0, 0.0), c(-1.0, 0.0)]),
        )
        .unwrap();
        let e = embed(&sz, &layout, 0).unwrap();
        assert_eq!(e.dim(), 6);

        let id2 = Operator::identity(HilbertLayout::single("qubit", 2));
        let e_id = embed(&id2, &layout, 0).unwrap();
        assert_eq!(e_id, Operator::identity(layout.clone()));
    }

    #[test]
    fn embedded_disjoint_factors_commute() {
        let layout = HilbertLayout::new(&[("qubit", 2), ("qubit", 2)]).unwrap();
        let a = deterministic_hermitian(2, 7);
        let b = deterministic_hermitian(2, 13);
        let ea = embed(&a, &layout, 0).unwrap();
        let eb = embed(&b, &layout, 1).unwrap();
        assert!(commutator(&ea, &eb).max_abs() < 1e-14);
    }

    #[test]
    fn embed_matches_nested_kron() {
        // Kronecker associativity: one-shot embedding into [2,3,4] equals the
        // nested two-step product.
        let layout = HilbertLayout::new(&[("qubit", 2), ("cavity", 3), ("resonator", 4)]).unwrap();
        let op = deterministic_hermitian(3, 99);
        let e = embed(&op, &layout, 1).unwrap();
        let i2 = DMatrix::<C64>::identity(2, 2);
        let i4 = DMatrix::<C64>::identity(4, 4);
        let nested = kron(&kron(&i2, op.data()), &i4);
        assert!((e.data() - nested).iter().all(|z| z.norm() < 1e-14));
    }

    #[test]
    fn eig_sigma_z_and_number() {
        let sz = Operator::new(
            HilbertLayout::single("qubit", 2),
            DMatrix::from_row_slice(2, 2, &[c(1.0, 0.0), c(0.0, 0.0), c(0.0, 0.0), c(-1.0, 0.0)]),
        )
        .unwrap();
        let (vals, _) = eig_hermitian(&sz).unwrap();
        assert_abs_diff_eq!(vals[0], -1.0, epsilon = 1e-14);
        assert_abs_diff_eq!(vals[1], 1.0, epsilon = 1e-14);

        let a = destroy(5).unwrap();
        let (nvals, _) = eig_hermitian(&(&a.adjoint() * &a)).unwrap();
        for (k, &v) in nvals.iter().enumerate() {
            assert_abs_diff_eq!(v, k as f64, epsilon = 1e-12);
        }
    }

    #[test]
    fn eig_reconstruction_and_residual() {
        let h = deterministic_hermitian(24, 3);
        let (vals, vecs) = eig_hermitian(&h).unwrap();
        let scale = h.fro_norm();
        for k in 0..h.dim() {
            let v = vecs.column(k).clone_owned();
            let residual = h.data() * &v - &v * c(vals[k], 0.0);
            assert!(residual.norm() < 1e-9 * scale, "residual at pair {k}");
        }
        // Orthonormality.
        let gram = vecs.adjoint() * &vecs;
        assert!((gram - DMatrix::<C64>::identity(24, 24)).norm() < 1e-10);
    }

    #[test]
    fn eig_matches_independent_jacobi_solver() {
        let h = deterministic_hermitian(10, 42);
        let (vals, _) = eig_hermitian(&h).unwrap();
        let oracle = jacobi_eigvals(h.data().clone());
        let scale = h.max_abs();
        for (a, b) in vals.iter().zip(oracle.iter()) {
            assert!((a - b).abs() < 1e-9 * scale, "{a} vs oracle {b}");
        }
    }

    #[test]
    fn eig_phase_convention() {
        let h = deterministic_hermitian(8, 5);
        let (_, vecs) = eig_hermitian(&h).unwrap();
        for k in 0..8 {
            let col = vecs.column(k);
            let vmax = col.iter().max_by(|a, b| a.norm().partial_cmp(&b.norm()).unwrap()).unwrap();
            assert!(vmax.im.abs() < 1e-12 && vmax.re > 0.0);
        }
    }

    #[test]
    fn eig_rejects_non_hermitian() {
        let a = destroy(4).unwrap();
        assert!(matches!(eig_hermitian(&a), Err(Error::NotHermitian { .. })));
    }

    fn bell_state() -> DensityMatrix {
        let layout = HilbertLayout::new(&[("qubit", 2), ("qubit", 2)]).unwrap();
        let mut psi = DVector::zeros(4);
        psi[0] = c(1.0 / 2f64.sqrt(), 0.0);
        psi[3] = c(1.0 / 2f64.sqrt(), 0.0);
        DensityMatrix::from_pure(&psi, layout).unwrap()
    }

    #[test]
    fn partial_trace_product_state() {
        let layout = HilbertLayout::new(&[("qubit", 2), ("cavity", 3)]).unwrap();
        let rho_a = DMatrix::from_row_slice(
            2,
            2,
            &[c(0.7, 0.0), c(0.1, 0.2), c(0.1, -0.2), c(0.3, 0.0)],
        );
        let mut rho_b = DMatrix::zeros(3, 3);
        rho_b[(0, 0)] = c(0.5, 0.0);
        rho_b[(1, 1)] = c(0.25, 0.0);
        rho_b[(2, 2)] = c(0.25, 0.0);
        let rho = DensityMatrix::new(Operator::new(layout, kron(&rho_a, &rho_b)).unwrap()).unwrap();
        let red = partial_trace(&rho, &[0]).unwrap();
        assert!((red.data() - rho_a).norm() < 1e-12);
    }

    #[test]
    fn partial_trace_bell_is_maximally_mixed() {
        let rho = bell_state();
        for keep in [0usize, 1] {
            let red = partial_trace(&rho, &[keep]).unwrap();
            let half_id = DMatrix::<C64>::identity(2, 2).scale(0.5);
            assert!((red.data() - half_id).norm() < 1e-12);
        }
    }

    #[test]
    fn cavity_reduction_purity_matches_overlap_oracle() {
        // Reduced cavity state of (|R⟩|α⟩ − |L⟩|−α⟩)/√2: purity from the 2×2
        // coherent overlap matrix is (1+e^{−4α²})/2.
        let alpha = 0.7765f64;
        let n = 30;
        let layout = HilbertLayout::qubit_cavity(n);
        let ca = coherent_state(c(alpha, 0.0), n).unwrap();
        let cma = coherent_state(c(-alpha, 0.0), n).unwrap();
        let mut l = DVector::zeros(2);
        l[0] = c(1.0, 0.0);
        let mut r = DVector::zeros(2);
        r[1] = c(1.0, 0.0);
        let psi = (kron_vec(&r, &ca) - kron_vec(&l, &cma)).scale(1.0 / 2f64.sqrt());
        let rho = DensityMatrix::from_pure(&psi, layout).unwrap();
        let cav = partial_trace(&rho, &[1]).unwrap();
        // ⟨ψ|ψ⟩ = 1 exactly (the qubit parts are orthogonal), so
        // ρ_cav = ½(|α⟩⟨α| + |−α⟩⟨−α|) and Tr ρ² = (1 + |⟨α|−α⟩|²)/2
        // with ⟨α|−α⟩ = e^{−2α²}.
        let s = (-2.0 * alpha * alpha).exp();
        let expected = (1.0 + s * s) / 2.0;
        assert!(
            (cav.purity() - expected).abs() < 1e-9,
            "purity {} vs oracle {expected}",
            cav.purity()
        );
    }

    #[test]
    fn partial_transpose_involution_and_trace() {
        let rho = bell_state();
        let pt = partial_transpose(&rho, 0).unwrap();
        assert!((pt.trace() - c(1.0, 0.0)).norm() < 1e-14);
        let back = partial_transpose_op(&pt, 0).unwrap();
        assert_eq!(back.data(), rho.data());
    }

    #[test]
    fn partial_transpose_bell_eigenvalues() {
        // Oracle: independent Jacobi eigensolve of the 4×4 partial transpose.
        let rho = bell_state();
        let pt = partial_transpose(&rho, 0).unwrap();
        let vals = jacobi_eigvals(pt.data().clone());
        let expect = [-0.5, 0.5, 0.5, 0.5];
        for (v, e) in vals.iter().zip(expect.iter()) {
            assert_abs_diff_eq!(v, e, epsilon = 1e-10);
        }
        // Production path agrees.
        let (vals2, _) = eig_hermitian(&pt).unwrap();
        for (v, e) in vals2.iter().zip(expect.iter()) {
            assert_abs_diff_eq!(v, e, epsilon = 1e-10);
        }
    }

    #[test]
    fn partial_transpose_product_state_stays_positive() {
        let layout = HilbertLayout::new(&[("qubit", 2), ("cavity", 3)]).unwrap();
        let rho_a = DMatrix::from_row_slice(
            2,
            2,
            &[c(0.6, 0.0), c(0.2, 0.1), c(0.2, -0.1), c(0.4, 0.0)],
        );
        let mut rho_b = DMatrix::zeros(3, 3);
        rho_b[(0, 0)] = c(0.2, 0.0);
        rho_b[(1, 1)] = c(0.5, 0.0);
        rho_b[(2, 2)] = c(0.3, 0.0);
        let rho = DensityMatrix::new(Operator::new(layout, kron(&rho_a, &rho_b)).unwrap()).unwrap();
        let pt = partial_transpose(&rho, 0).unwrap();
        let (vals, _) = eig_hermitian(&pt).unwrap();
        assert!(vals[0] > -1e-12);
    }

    #[test]
    fn partial_trace_and_transpose_commute_on_disjoint_factors() {
        let layout = HilbertLayout::new(&[("qubit", 2), ("cavity", 3), ("resonator", 2)]).unwrap();
        // Correlated but valid state: normalized projector mixture.
        let h = deterministic_hermitian(12, 21);
        let m = h.data() * h.data().adjoint();
        let tr = m.diagonal().sum().re;
        let rho = DensityMatrix::new(
            Operator::new(layout, m.map(|z| z / c(tr, 0.0))).unwrap(),
        )
        .unwrap();
        // PT on factor 2, then trace out factor 0 — vs — trace first, PT after.
        let pt_first = partial_transpose(&rho, 2).unwrap();
        let a = partial_trace_op(&pt_first, &[1, 2]).unwrap();
        let traced_first = partial_trace(&rho, &[1, 2]).unwrap();
        let b = partial_transpose_op(traced_first.op(), 1).unwrap();
        assert!((a.data() - b.data()).norm() < 1e-12);
    }

    #[test]
    fn density_matrix_validation() {
        let layout = HilbertLayout::single("qubit", 2);
        let bad_trace = Operator::new(
            layout.clone(),
            DMatrix::from_row_slice(2, 2, &[c(0.9, 0.0), c(0.0, 0.0), c(0.0, 0.0), c(0.2, 0.0)]),
        )
        .unwrap();
        assert!(DensityMatrix::new(bad_trace).is_err());

        let non_herm = Operator::new(
            layout.clone(),
            DMatrix::from_row_slice(2, 2, &[c(0.5, 0.0), c(0.1, 0.0), c(0.3, 0.0), c(0.5, 0.0)]),
        )
        .unwrap();
        assert!(DensityMatrix::new(non_herm).is_err());

        let ok = Operator::new(
            layout,
            DMatrix::from_row_slice(2, 2, &[c(0.5, 0.0), c(0.1, 0.1), c(0.1, -0.1), c(0.5, 0.0)]),
        )
        .unwrap();
        assert!(DensityMatrix::new(ok).is_ok());
    }

    #[test]
    fn trace_distance_of_orthogonal_pure_states() {
        let layout = HilbertLayout::single("qubit", 2);
        let mut p0 = DVector::zeros(2);
        p0[0] = c(1.0, 0.0);
        let mut p1 = DVector::zeros(2);
        p1[1] = c(1.0, 0.0);
        let r0 = DensityMatrix::from_pure(&p0, layout.clone()).unwrap();
        let r1 = DensityMatrix::from_pure(&p1, layout).unwrap();
        let d = trace_distance(r0.op(), r1.op()).unwrap();
        assert_abs_diff_eq!(d, 1.0, epsilon = 1e-12);
    }
}
