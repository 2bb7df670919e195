//! State-characterization metrics: Husimi Q function, von Neumann entropy,
//! negativity, quantum discord, and pure-state fidelity.
//!
//! Everything here is a pure function of the state. The two grid scans
//! (Q function and the discord measurement search) fan out over grid
//! points through [`exec`]; all other quantities are cheap eigenvalue
//! post-processing.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64 as C64;
use std::f64::consts::{PI, TAU};

use crate::error::{Error, Result};
use crate::exec::{self, Exec};
use crate::tensor::{partial_trace_op, partial_transpose, DensityMatrix};

/// Eigenvalues below this are treated as exact zeros in entropies
/// (0·log 0 = 0); keeps log₂ away from the roundoff tail of rank-deficient
/// states.
pub const EIGVAL_FLOOR: f64 = 1e-12;

/// Measurement branches lighter than this are excluded with weight zero
/// from conditional entropies.
pub const BRANCH_PROB_FLOOR: f64 = 1e-12;

/// Largest coherent-vector truncation deficit tolerated at the corners of a
/// Q-function grid.
pub const Q_CORNER_DEFICIT_TOL: f64 = 1e-6;

// ---------------------------------------------------------------------------
// Shared eigenvalue plumbing
// ---------------------------------------------------------------------------

/// Eigenvalues of a Hermitian matrix, ascending. Small skew from roundoff is
/// symmetrized away; 1×1 and 2×2 use closed forms because conditional-state
/// entropies hammer this in the discord grid scan. The dense path goes
/// through faer's tridiagonal solver: partial transposes of weakly
/// entangled states have hundreds of near-zero eigenvalues, and nalgebra's
/// iterative sweep fails to converge on such clusters.
fn hermitian_eigenvalues(m: &DMatrix<C64>) -> Vec<f64> {
    let n = m.nrows();
    match n {
        0 => Vec::new(),
        1 => vec![m[(0, 0)].re],
        2 => {
            let mid = 0.5 * (m[(0, 0)].re + m[(1, 1)].re);
            let half_gap = 0.5 * (m[(0, 0)].re - m[(1, 1)].re);
            let off = 0.5 * (m[(0, 1)] + m[(1, 0)].conj());
            let d = (half_gap * half_gap + off.norm_sqr()).sqrt();
            vec![mid - d, mid + d]
        }
        _ => {
            let h = faer::Mat::<faer::c64>::from_fn(n, n, |i, j| {
                let s = 0.5 * (m[(i, j)] + m[(j, i)].conj());
                faer::c64::new(s.re, if i == j { 0.0 } else { s.im })
            });
            let mut vals = h
                .self_adjoint_eigenvalues(faer::Side::Lower)
                .expect("self-adjoint eigensolver converges");
            vals.sort_by(|a, b| a.partial_cmp(b).expect("finite eigenvalues"));
            vals
        }
    }
}

/// −Σ λ log₂ λ over an already-normalized spectrum.
fn entropy_bits(eigs: impl Iterator<Item = f64>) -> f64 {
    eigs.filter(|&l| l >= EIGVAL_FLOOR)
        .map(|l| -l * l.log2())
        .sum()
}

// ---------------------------------------------------------------------------
// Husimi Q function
// ---------------------------------------------------------------------------

/// Rectangular phase-space grid: β = re + i·im with both axes sampled
/// inclusively at the stated resolution.
#[derive(Clone, Debug, PartialEq)]
pub struct QGridSpec {
    pub re_range: (f64, f64),
    pub im_range: (f64, f64),
    pub n_re: usize,
    pub n_im: usize,
}

impl QGridSpec {
    pub fn new(re_range: (f64, f64), im_range: (f64, f64), n_re: usize, n_im: usize) -> Result<Self> {
        for &(lo, hi) in &[re_range, im_range] {
            if !lo.is_finite() || !hi.is_finite() || lo >= hi {
                return Err(Error::InvalidParameter(format!(
                    "Q grid range [{lo}, {hi}] must be finite and increasing"
                )));
            }
        }
        if n_re < 2 || n_im < 2 {
            return Err(Error::InvalidParameter(format!(
                "Q grid needs at least 2 points per axis, got {n_re}×{n_im}"
            )));
        }
        Ok(Self { re_range, im_range, n_re, n_im })
    }

    /// Square grid [−w, w]² with `n` points per axis.
    pub fn centered(half_width: f64, n: usize) -> Result<Self> {
        Self::new((-half_width, half_width), (-half_width, half_width), n, n)
    }

    fn re_at(&self, i: usize) -> f64 {
        let (lo, hi) = self.re_range;
        lo + (hi - lo) * i as f64 / (self.n_re - 1) as f64
    }

    fn im_at(&self, j: usize) -> f64 {
        let (lo, hi) = self.im_range;
        lo + (hi - lo) * j as f64 / (self.n_im - 1) as f64
    }
}

/// Sampled Q values; `values[(i, j)]` is Q at β = re_i + i·im_j.
#[derive(Clone, Debug)]
pub struct QGrid {
    spec: QGridSpec,
    values: DMatrix<f64>,
}

impl QGrid {
    pub fn spec(&self) -> &QGridSpec {
        &self.spec
    }

    pub fn values(&self) -> &DMatrix<f64> {
        &self.values
    }

    pub fn re_at(&self, i: usize) -> f64 {
        self.spec.re_at(i)
    }

    pub fn im_at(&self, j: usize) -> f64 {
        self.spec.im_at(j)
    }

    pub fn beta_at(&self, i: usize, j: usize) -> C64 {
        C64::new(self.re_at(i), self.im_at(j))
    }

    /// Riemann mass ∫Q d²β ≈ ΣQ·ΔreΔim; ≈ 1 when the grid covers the state.
    pub fn mass(&self) -> f64 {
        let dre = (self.spec.re_range.1 - self.spec.re_range.0) / (self.spec.n_re - 1) as f64;
        let dim = (self.spec.im_range.1 - self.spec.im_range.0) / (self.spec.n_im - 1) as f64;
        self.values.iter().sum::<f64>() * dre * dim
    }

    /// Grid argmax (first hit on ties) and its value.
    pub fn max_point(&self) -> (usize, usize, f64) {
        let mut best = (0, 0, f64::NEG_INFINITY);
        for j in 0..self.spec.n_im {
            for i in 0..self.spec.n_re {
                let v = self.values[(i, j)];
                if v > best.2 {
                    best = (i, j, v);
                }
            }
        }
        best
    }
}

/// Fock amplitudes of the *unnormalized* projection of |β⟩ onto the first
/// `n` levels, plus the weight 1 − ‖projection‖² lost to truncation. The
/// projection (rather than a renormalized state) is what makes ⟨β|ρ|β⟩
/// exact for a ρ supported on the truncated space.
fn coherent_projection(beta: C64, n: usize) -> (DVector<C64>, f64) {
    let mut v = DVector::zeros(n);
    let mut c = C64::new((-beta.norm_sqr() / 2.0).exp(), 0.0);
    let mut norm2 = 0.0;
    for k in 0..n {
        v[k] = c;
        norm2 += c.norm_sqr();
        c *= beta / C64::new(((k + 1) as f64).sqrt(), 0.0);
    }
    (v, (1.0 - norm2).max(0.0))
}

/// Husimi Q(β) = ⟨β|ρ|β⟩/π sampled over `spec`.
///
/// The state must be a single bosonic factor. Fails if the Fock truncation
/// cannot represent the coherent vectors at the grid corners (the largest
/// |β| on a rectangle), i.e. if the corner deficit exceeds
/// [`Q_CORNER_DEFICIT_TOL`].
pub fn q_function(rho: &DensityMatrix, spec: &QGridSpec, exec: Exec) -> Result<QGrid> {
    if rho.layout().nfactors() != 1 {
        return Err(Error::DimensionMismatch(format!(
            "q_function expects a single-factor state, got {} factors",
            rho.layout().nfactors()
        )));
    }
    let n = rho.dim();
    let corners = [
        C64::new(spec.re_range.0, spec.im_range.0),
        C64::new(spec.re_range.0, spec.im_range.1),
        C64::new(spec.re_range.1, spec.im_range.0),
        C64::new(spec.re_range.1, spec.im_range.1),
    ];
    for corner in corners {
        let (_, deficit) = coherent_projection(corner, n);
        if deficit > Q_CORNER_DEFICIT_TOL {
            return Err(Error::Truncation { deficit, tol: Q_CORNER_DEFICIT_TOL });
        }
    }

    let data = rho.data();
    let points: Vec<usize> = (0..spec.n_re * spec.n_im).collect();
    let vals = exec::map(exec, &points, |&k| {
        // Column-major flat index: k = j·n_re + i.
        let (i, j) = (k % spec.n_re, k / spec.n_re);
        let beta = C64::new(spec.re_at(i), spec.im_at(j));
        let (v, _) = coherent_projection(beta, n);
        let w = data * &v;
        // Clamp the roundoff tail of the quadratic form; Q is nonnegative.
        (v.dotc(&w).re / PI).max(0.0)
    });
    Ok(QGrid {
        spec: spec.clone(),
        values: DMatrix::from_vec(spec.n_re, spec.n_im, vals),
    })
}

// ---------------------------------------------------------------------------
// Entropy, negativity, fidelity
// ---------------------------------------------------------------------------

/// Von Neumann entropy −Tr ρ log₂ ρ in bits. Eigenvalues below
/// [`EIGVAL_FLOOR`] contribute zero.
pub fn von_neumann_entropy(rho: &DensityMatrix) -> f64 {
    entropy_bits(hermitian_eigenvalues(rho.data()).into_iter())
}

/// Negativity N(ρ) = Σ|λ⁻(ρ^{T_f})| across the bipartition, computed as the
/// sum of the negative eigenvalues of the partial transpose (equivalently
/// (‖ρ^{T_f}‖₁ − 1)/2 for a unit-trace state).
pub fn negativity(rho: &DensityMatrix, factor: usize) -> Result<f64> {
    let nf = rho.layout().nfactors();
    if nf != 2 {
        return Err(Error::DimensionMismatch(format!(
            "negativity needs a bipartite layout, got {nf} factors"
        )));
    }
    let pt = partial_transpose(rho, factor)?;
    Ok(hermitian_eigenvalues(pt.data())
        .iter()
        .map(|&l| (-l).max(0.0))
        .sum())
}

/// ⟨ψ|ρ|ψ⟩ for a normalized pure reference.
pub fn fidelity_pure(psi: &DVector<C64>, rho: &DensityMatrix) -> Result<f64> {
    if psi.len() != rho.dim() {
        return Err(Error::DimensionMismatch(format!(
            "fidelity reference has dim {}, state has dim {}",
            psi.len(),
            rho.dim()
        )));
    }
    Ok(rho.op().expect_vec(psi).re)
}

// ---------------------------------------------------------------------------
// Quantum discord
// ---------------------------------------------------------------------------

/// Search controls for the projective-measurement minimization.
#[derive(Clone, Debug)]
pub struct DiscordOptions {
    /// Coarse-grid resolution in θ ∈ [0, π] (endpoints included).
    pub grid_theta: usize,
    /// Coarse-grid resolution in φ ∈ [0, 2π) (period not duplicated).
    pub grid_phi: usize,
    /// Polish the best grid point with a local simplex search.
    pub refine: bool,
    pub exec: Exec,
}

impl Default for DiscordOptions {
    fn default() -> Self {
        Self { grid_theta: 64, grid_phi: 64, refine: true, exec: Exec::default() }
    }
}

/// Outcome of the discord minimization.
#[derive(Clone, Copy, Debug)]
pub struct DiscordResult {
    /// S(ρ_A) − S(ρ_AB) + min S(B|{M_A}), in bits.
    pub discord: f64,
    /// Optimal measurement polar angle, in [0, π].
    pub theta: f64,
    /// Optimal measurement azimuth, in [0, 2π).
    pub phi: f64,
    /// Conditional entropy at the reported optimum.
    pub conditional_entropy: f64,
    /// Best conditional entropy seen on the coarse grid alone; equals
    /// `conditional_entropy` when refinement is disabled, and bounds it from
    /// above otherwise.
    pub grid_minimum: f64,
}

/// Quantum discord of a qubit × mode state, measured on the first factor.
///
/// The measurement family is the rank-1 projective pair
/// |φ₁⟩ = cos(θ/2)|0⟩_A + e^{iφ} sin(θ/2)|1⟩_A and its orthocomplement,
/// with angles referred to the stored basis of factor A. The conditional
/// entropy is scanned on a θ×φ grid (ties resolved toward the
/// lexicographically smallest angles) and optionally polished with a
/// Nelder–Mead simplex that never leaves the grid minimum behind.
pub fn quantum_discord(rho: &DensityMatrix, opts: &DiscordOptions) -> Result<DiscordResult> {
    let layout = rho.layout();
    if layout.nfactors() != 2 {
        return Err(Error::DimensionMismatch(format!(
            "discord needs a bipartite layout, got {} factors",
            layout.nfactors()
        )));
    }
    if layout.dim(0) != 2 {
        return Err(Error::DimensionMismatch(format!(
            "discord measures the first factor, which must be two-level, got dim {}",
            layout.dim(0)
        )));
    }
    if opts.grid_theta < 2 || opts.grid_phi < 2 {
        return Err(Error::InvalidParameter(format!(
            "discord grid needs at least 2×2 points, got {}×{}",
            opts.grid_theta, opts.grid_phi
        )));
    }

    let n = layout.dim(1);
    let data = rho.data();
    // A-major blocks: ρ[(a·n + m), (a'·n + m')] = R_{aa'}[m, m'].
    let r00 = data.view((0, 0), (n, n)).into_owned();
    let r01 = data.view((0, n), (n, n)).into_owned();
    let r10 = data.view((n, 0), (n, n)).into_owned();
    let r11 = data.view((n, n), (n, n)).into_owned();

    let s_a = entropy_bits(
        hermitian_eigenvalues(partial_trace_op(rho.op(), &[0])?.data()).into_iter(),
    );
    let s_ab = von_neumann_entropy(rho);

    let cond_entropy = move |theta: f64, phi: f64| -> f64 {
        let theta = theta.clamp(0.0, PI);
        let (s, c) = (0.5 * theta).sin_cos();
        let e = C64::from_polar(1.0, phi);
        let branches = [
            (C64::new(c, 0.0), e * s),
            (C64::new(s, 0.0), -(e * c)),
        ];
        let mut total = 0.0;
        for (u, v) in branches {
            // B = ⟨φ_k|ρ|φ_k⟩_A, an unnormalized mode-space state.
            let b = &r00 * C64::new(u.norm_sqr(), 0.0)
                + &r01 * (u.conj() * v)
                + &r10 * (v.conj() * u)
                + &r11 * C64::new(v.norm_sqr(), 0.0);
            let p = b.diagonal().sum().re;
            if p < BRANCH_PROB_FLOOR {
                continue;
            }
            total += p * entropy_bits(hermitian_eigenvalues(&b).into_iter().map(|l| l / p));
        }
        total
    };

    let dtheta = PI / (opts.grid_theta - 1) as f64;
    let dphi = TAU / opts.grid_phi as f64;
    let points: Vec<usize> = (0..opts.grid_theta * opts.grid_phi).collect();
    let grid_vals = exec::map(opts.exec, &points, |&k| {
        let (i, j) = (k / opts.grid_phi, k % opts.grid_phi);
        cond_entropy(i as f64 * dtheta, j as f64 * dphi)
    });
    // θ-major ascending scan with strict `<`: exact ties keep the
    // lexicographically smallest (θ, φ).
    let mut best_k = 0;
    for (k, &v) in grid_vals.iter().enumerate() {
        if v < grid_vals[best_k] {
            best_k = k;
        }
    }
    let grid_minimum = grid_vals[best_k];
    let mut theta = (best_k / opts.grid_phi) as f64 * dtheta;
    let mut phi = (best_k % opts.grid_phi) as f64 * dphi;
    let mut s_cond = grid_minimum;

    if opts.refine {
        let step_t = if theta > 0.5 * PI { -0.5 * dtheta } else { 0.5 * dtheta };
        let ((t, p), v) =
            nelder_mead_2d(&cond_entropy, (theta, phi), (step_t, 0.5 * dphi), 200);
        debug_assert!(v <= grid_minimum);
        theta = t.clamp(0.0, PI);
        phi = p.rem_euclid(TAU);
        if phi >= TAU {
            phi = 0.0;
        }
        s_cond = v;
    }

    Ok(DiscordResult {
        discord: s_a - s_ab + s_cond,
        theta,
        phi,
        conditional_entropy: s_cond,
        grid_minimum,
    })
}

/// Minimal 2-D Nelder–Mead. The best vertex is only ever replaced by a
/// better one, so the returned value never exceeds f(start).
fn nelder_mead_2d<F>(f: &F, start: (f64, f64), steps: (f64, f64), max_iter: usize) -> ((f64, f64), f64)
where
    F: Fn(f64, f64) -> f64,
{
    let mut vs: Vec<([f64; 2], f64)> = vec![
        ([start.0, start.1], f(start.0, start.1)),
        ([start.0 + steps.0, start.1], f(start.0 + steps.0, start.1)),
        ([start.0, start.1 + steps.1], f(start.0, start.1 + steps.1)),
    ];
    let eval = |x: [f64; 2]| f(x[0], x[1]);
    for _ in 0..max_iter {
        vs.sort_by(|a, b| a.1.partial_cmp(&b.1).expect("finite objective"));
        let (best, second, worst) = (vs[0], vs[1], vs[2]);
        if (worst.1 - best.1).abs() < 1e-13 {
            break;
        }
        let c = [
            0.5 * (best.0[0] + second.0[0]),
            0.5 * (best.0[1] + second.0[1]),
        ];
        let xr = [2.0 * c[0] - worst.0[0], 2.0 * c[1] - worst.0[1]];
        let fr = eval(xr);
        if fr < best.1 {
            let xe = [3.0 * c[0] - 2.0 * worst.0[0], 3.0 * c[1] - 2.0 * worst.0[1]];
            let fe = eval(xe);
            vs[2] = if fe < fr { (xe, fe) } else { (xr, fr) };
        } else if fr < second.1 {
            vs[2] = (xr, fr);
        } else {
            let xc = if fr < worst.1 {
                [0.5 * (c[0] + xr[0]), 0.5 * (c[1] + xr[1])]
            } else {
                [0.5 * (c[0] + worst.0[0]), 0.5 * (c[1] + worst.0[1])]
            };
            let fc = eval(xc);
            if fc < worst.1.min(fr) {
                vs[2] = (xc, fc);
            } else {
                for k in 1..3 {
                    let x = [
                        0.5 * (vs[0].0[0] + vs[k].0[0]),
                        0.5 * (vs[0].0[1] + vs[k].0[1]),
                    ];
                    vs[k] = (x, eval(x));
                }
            }
        }
    }
    vs.sort_by(|a, b| a.1.partial_cmp(&b.1).expect("finite objective"));
    ((vs[0].0[0], vs[0].0[1]), vs[0].1)
}
