//! Lindblad master-equation dynamics.
//!
//! The generator is packed into CSR form once per construction; the right-hand
//! side is then evaluated as −i(Kρ − ρK†) + Σ L̃ρL̃† with K = H − (i/2)ΣL̃†L̃
//! and L̃ = √γ·L, so a full superoperator is never materialized. Integration
//! is an adaptive Dormand–Prince 5(4) pair with FSAL reuse. The trace is
//! *monitored*, never renormalized: silent drift would mask generator bugs.

use nalgebra::DMatrix;
use num_complex::Complex64 as C64;

use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::models::{DressedBasis, ResonatorParams, TwoLevelParams, UscLossParams};
use crate::sparse::{accum_mul_adj, CsrMatrix};
use crate::tensor::{
    destroy, embed, number, DensityMatrix, HilbertLayout, Operator,
};

pub const DEFAULT_RTOL: f64 = 1e-8;
pub const DEFAULT_ATOL: f64 = 1e-10;

/// Relative magnitude below which basis-change roundoff is dropped when
/// packing operators. Genuine matrix elements in this problem are ≫ 1e−14
/// of the largest entry.
const PACK_DROP_TOL: f64 = 1e-14;

// ---------------------------------------------------------------------------
// Generator
// ---------------------------------------------------------------------------

/// H plus a list of collapse operators with their rates.
pub struct LindbladGenerator {
    h: Operator,
    collapse: Vec<(Operator, f64)>,
    k_csr: CsrMatrix,
    l_csr: Vec<CsrMatrix>,
}

impl LindbladGenerator {
    /// `collapse` entries are (L, γ) pairs; γ must be ≥ 0 and zero-rate
    /// entries are dropped. H must be Hermitian.
    pub fn new(h: Operator, collapse: Vec<(Operator, f64)>) -> Result<Self> {
        let dev = h.hermiticity_dev();
        if dev > 1e-10 * h.max_abs().max(1.0) {
            return Err(Error::NotHermitian { dev });
        }
        let mut kept = Vec::new();
        for (l, g) in collapse {
            if g < 0.0 {
                return Err(Error::InvalidParameter(format!(
                    "collapse rate {g} must be ≥ 0"
                )));
            }
            if l.layout() != h.layout() {
                return Err(Error::DimensionMismatch(
                    "collapse operator layout differs from the Hamiltonian's".into(),
                ));
            }
            if g > 0.0 {
                kept.push((l, g));
            }
        }
        // K = H − (i/2) Σ γ L†L. The anti-Hermitian part carries the full
        // no-jump decay; −i(Kρ − ρK†) then reproduces the commutator and the
        // anticommutator halves of the Lindblad form.
        let mut k = h.data().clone();
        for (l, g) in &kept {
            let ltl = l.data().adjoint() * l.data();
            k += ltl * C64::new(0.0, -0.5 * g);
        }
        let k_csr = CsrMatrix::from_dense(&k, PACK_DROP_TOL);
        let l_csr = kept
            .iter()
            .map(|(l, g)| {
                CsrMatrix::from_dense(&(l.data() * C64::new(g.sqrt(), 0.0)), PACK_DROP_TOL)
            })
            .collect();
        Ok(Self {
            h,
            collapse: kept,
            k_csr,
            l_csr,
        })
    }

    pub fn hamiltonian(&self) -> &Operator {
        &self.h
    }

    pub fn collapse_ops(&self) -> &[(Operator, f64)] {
        &self.collapse
    }

    pub fn layout(&self) -> &HilbertLayout {
        self.h.layout()
    }

    pub fn dim(&self) -> usize {
        self.h.dim()
    }

    /// Largest packed matrix element; sets the fast timescale for the
    /// integrator's first step.
    pub fn stiffness_scale(&self) -> f64 {
        self.k_csr.max_abs()
    }

    /// Packed evaluation of dρ/dt into `out` (`work` is scratch of the same
    /// shape). This is the integrator's hot path; [`lindblad_rhs`] is the
    /// dense reference formula the packed route is tested against.
    pub fn apply_packed(
        &self,
        y: &DMatrix<C64>,
        out: &mut DMatrix<C64>,
        work: &mut DMatrix<C64>,
        exec: Exec,
    ) {
        out.fill(C64::new(0.0, 0.0));
        self.k_csr.accum_mul(y, out, C64::new(0.0, -1.0), exec);
        accum_mul_adj(y, &self.k_csr, out, C64::new(0.0, 1.0), exec);
        for l in &self.l_csr {
            l.mul_into(y, work, exec);
            accum_mul_adj(work, l, out, C64::new(1.0, 0.0), exec);
        }
    }
}

/// Dense reference right-hand side:
/// dρ/dt = −i[H,ρ] + Σ (γ/2)(2LρL† − L†Lρ − ρL†L).
pub fn lindblad_rhs(gen: &LindbladGenerator, rho: &Operator) -> Result<Operator> {
    if rho.layout() != gen.layout() {
        return Err(Error::DimensionMismatch(
            "state layout differs from the generator's".into(),
        ));
    }
    let h = gen.h.data();
    let r = rho.data();
    let mut out = (h * r - r * h) * C64::new(0.0, -1.0);
    for (l, g) in &gen.collapse {
        let ld = l.data();
        let lr = ld * r;
        let ltl = ld.adjoint() * ld;
        out += (&lr * ld.adjoint() * C64::new(2.0, 0.0) - &ltl * r - r * &ltl)
            * C64::new(0.5 * g, 0.0);
    }
    Operator::new(gen.layout().clone(), out)
}

// ---------------------------------------------------------------------------
// Time grid and trajectory
// ---------------------------------------------------------------------------

/// Output times and integration tolerances. Output times are honored by
/// clipping the adaptive step onto each target; there is no dense-output
/// interpolation, so recorded states are genuine step endpoints.
#[derive(Clone, Debug, PartialEq)]
pub struct TimeGrid {
    pub t_start: f64,
    pub t_end: f64,
    pub outputs: Vec<f64>,
    pub rtol: f64,
    pub atol: f64,
}

impl TimeGrid {
    pub fn new(t_start: f64, t_end: f64, outputs: Vec<f64>) -> Result<Self> {
        if !(t_end > t_start) {
            return Err(Error::InvalidParameter(format!(
                "t_end {t_end} must exceed t_start {t_start}"
            )));
        }
        if outputs.is_empty() {
            return Err(Error::InvalidParameter("no output times requested".into()));
        }
        let eps = 1e-12 * (t_end - t_start).abs().max(1.0);
        let mut prev = t_start - eps;
        for &t in &outputs {
            if t < t_start - eps || t > t_end + eps {
                return Err(Error::InvalidParameter(format!(
                    "output time {t} outside [{t_start}, {t_end}]"
                )));
            }
            if t <= prev {
                return Err(Error::InvalidParameter(
                    "output times must be strictly increasing".into(),
                ));
            }
            prev = t;
        }
        Ok(Self {
            t_start,
            t_end,
            outputs,
            rtol: DEFAULT_RTOL,
            atol: DEFAULT_ATOL,
        })
    }

    /// `n` intervals from t_start to t_end; records both endpoints.
    pub fn uniform(t_start: f64, t_end: f64, n: usize) -> Result<Self> {
        if n == 0 {
            return Err(Error::InvalidParameter("n must be ≥ 1".into()));
        }
        let dt = (t_end - t_start) / n as f64;
        let outputs = (0..=n).map(|k| t_start + dt * k as f64).collect();
        Self::new(t_start, t_end, outputs)
    }

    pub fn with_tolerances(mut self, rtol: f64, atol: f64) -> Result<Self> {
        if !(rtol > 0.0) || !(atol > 0.0) {
            return Err(Error::InvalidParameter(
                "tolerances must be positive".into(),
            ));
        }
        self.rtol = rtol;
        self.atol = atol;
        Ok(self)
    }
}

/// Guards the top `levels` indices of factor `slot`: population there means
/// the truncated factor is too small for the dynamics it is carrying.
#[derive(Clone, Copy, Debug)]
pub struct LeakageMonitor {
    pub slot: usize,
    pub levels: usize,
}

#[derive(Clone, Debug)]
pub struct EvolveOptions {
    pub exec: Exec,
    pub monitors: Vec<LeakageMonitor>,
    pub leak_tol: f64,
    pub trace_tol: f64,
    pub max_steps: usize,
}

impl Default for EvolveOptions {
    fn default() -> Self {
        Self {
            exec: Exec::default(),
            monitors: Vec::new(),
            leak_tol: 1e-6,
            trace_tol: 1e-7,
            max_steps: 20_000_000,
        }
    }
}

#[derive(Clone, Copy, Debug, Default)]
pub struct EvolveStats {
    pub steps: usize,
    pub rejected: usize,
    pub rhs_evals: usize,
    pub min_h: f64,
    pub max_trace_drift: f64,
    pub max_leakage: f64,
}

/// States recorded at the grid's output times.
pub struct Trajectory {
    pub times: Vec<f64>,
    pub states: Vec<DensityMatrix>,
    pub stats: EvolveStats,
}

impl Trajectory {
    pub fn expectation(&self, op: &Operator) -> Vec<C64> {
        self.states.iter().map(|s| s.expect(op)).collect()
    }

    pub fn last(&self) -> &DensityMatrix {
        self.states.last().expect("trajectory has ≥ 1 output")
    }
}

// ---------------------------------------------------------------------------
// Dormand–Prince 5(4)
// ---------------------------------------------------------------------------

const A21: f64 = 1.0 / 5.0;
const A31: f64 = 3.0 / 40.0;
const A32: f64 = 9.0 / 40.0;
const A41: f64 = 44.0 / 45.0;
const A42: f64 = -56.0 / 15.0;
const A43: f64 = 32.0 / 9.0;
const A51: f64 = 19372.0 / 6561.0;
const A52: f64 = -25360.0 / 2187.0;
const A53: f64 = 64448.0 / 6561.0;
const A54: f64 = -212.0 / 729.0;
const A61: f64 = 9017.0 / 3168.0;
const A62: f64 = -355.0 / 33.0;
const A63: f64 = 46732.0 / 5247.0;
const A64: f64 = 49.0 / 176.0;
const A65: f64 = -5103.0 / 18656.0;
const B1: f64 = 35.0 / 384.0;
const B3: f64 = 500.0 / 1113.0;
const B4: f64 = 125.0 / 192.0;
const B5: f64 = -2187.0 / 6784.0;
const B6: f64 = 11.0 / 84.0;
// b − b̂: difference against the embedded 4th-order weights.
const E1: f64 = 71.0 / 57600.0;
const E3: f64 = -71.0 / 16695.0;
const E4: f64 = 71.0 / 1920.0;
const E5: f64 = -17253.0 / 339200.0;
const E6: f64 = 22.0 / 525.0;
const E7: f64 = -1.0 / 40.0;

/// out = y + h·Σ c_i·k_i over flat entries.
fn stage_combo(y: &DMatrix<C64>, h: f64, terms: &[(f64, &DMatrix<C64>)], out: &mut DMatrix<C64>) {
    out.as_mut_slice().copy_from_slice(y.as_slice());
    for (c, k) in terms {
        let w = C64::new(h * c, 0.0);
        for (o, kk) in out.as_mut_slice().iter_mut().zip(k.as_slice()) {
            *o += w * kk;
        }
    }
}

/// Weighted RMS error norm with per-entry scale atol + rtol·max(|y|,|y_new|).
fn error_norm(
    err: &DMatrix<C64>,
    y: &DMatrix<C64>,
    y_new: &DMatrix<C64>,
    rtol: f64,
    atol: f64,
) -> f64 {
    let mut acc = 0.0;
    for ((e, a), b) in err.iter().zip(y.iter()).zip(y_new.iter()) {
        let sc = atol + rtol * a.norm().max(b.norm());
        let r = e.norm() / sc;
        acc += r * r;
    }
    (acc / err.len() as f64).sqrt()
}

/// In-place (y + y†)/2; the diagonal loses its imaginary roundoff.
fn hermitize(y: &mut DMatrix<C64>) {
    let n = y.nrows();
    for j in 0..n {
        y[(j, j)] = C64::new(y[(j, j)].re, 0.0);
        for i in 0..j {
            let m = 0.5 * (y[(i, j)] + y[(j, i)].conj());
            y[(i, j)] = m;
            y[(j, i)] = m.conj();
        }
    }
}

/// Composite diagonal indices whose `slot` factor index falls in the top
/// `levels` values.
fn monitor_indices(layout: &HilbertLayout, m: &LeakageMonitor) -> Result<Vec<usize>> {
    if m.slot >= layout.nfactors() {
        return Err(Error::SlotOutOfRange {
            slot: m.slot,
            nfactors: layout.nfactors(),
        });
    }
    let d = layout.dim(m.slot);
    let levels = m.levels.min(d);
    let strides = layout.strides();
    let stride = strides[m.slot];
    let cut = d - levels;
    Ok((0..layout.total_dim())
        .filter(|i| (i / stride) % d >= cut)
        .collect())
}

/// Integrate dρ/dt over the grid, recording states at each output time.
///
/// Errors out (never papers over) on trace drift beyond `opts.trace_tol`,
/// population at a monitored truncation edge beyond `opts.leak_tol`, or a
/// step size the tolerances force below the resolvable scale.
pub fn evolve(
    gen: &LindbladGenerator,
    rho0: &DensityMatrix,
    grid: &TimeGrid,
    opts: &EvolveOptions,
) -> Result<Trajectory> {
    if rho0.layout() != gen.layout() {
        return Err(Error::DimensionMismatch(
            "initial state layout differs from the generator's".into(),
        ));
    }
    let n = gen.dim();
    let monitor_idx: Vec<(LeakageMonitor, Vec<usize>)> = opts
        .monitors
        .iter()
        .map(|m| monitor_indices(gen.layout(), m).map(|ix| (*m, ix)))
        .collect::<Result<_>>()?;

    let mut y = rho0.data().clone();
    let mut k = vec![DMatrix::<C64>::zeros(n, n); 7];
    let mut ytmp = DMatrix::<C64>::zeros(n, n);
    let mut work = DMatrix::<C64>::zeros(n, n);
    let mut err = DMatrix::<C64>::zeros(n, n);

    let mut stats = EvolveStats {
        min_h: f64::INFINITY,
        ..Default::default()
    };
    let mut times = Vec::with_capacity(grid.outputs.len());
    let mut states = Vec::with_capacity(grid.outputs.len());

    let span = grid.t_end - grid.t_start;
    let teps = 1e-12 * span.abs().max(1.0);
    let mut t = grid.t_start;

    // First derivative evaluation seeds the FSAL chain.
    let (k_first, rest) = k.split_at_mut(1);
    gen.apply_packed(&y, &mut k_first[0], &mut work, opts.exec);
    let _ = rest;
    stats.rhs_evals += 1;

    let scale = gen.stiffness_scale();
    let mut h = if scale > 0.0 { 0.1 / scale } else { span };
    h = h.min(span);

    let record =
        |y: &DMatrix<C64>, t: f64, times: &mut Vec<f64>, states: &mut Vec<DensityMatrix>| -> Result<()> {
            let op = Operator::new(gen.layout().clone(), y.clone())?;
            let tol = opts.trace_tol.max(crate::tensor::DEFAULT_TRACE_TOL);
            match DensityMatrix::with_trace_tol(op, tol) {
                Ok(dm) => {
                    times.push(t);
                    states.push(dm);
                    Ok(())
                }
                Err(e) => Err(Error::InvalidState(format!(
                    "state recorded at t = {t} failed validation: {e}"
                ))),
            }
        };

    for &t_out in &grid.outputs {
        while t < t_out - teps {
            if stats.steps + stats.rejected >= opts.max_steps {
                return Err(Error::StepBudget {
                    t,
                    budget: opts.max_steps,
                });
            }
            let clipped = t + h >= t_out - teps;
            let h_try = if clipped { t_out - t } else { h };
            if h_try < 1e-14 * t.abs().max(1.0) {
                return Err(Error::StepSizeUnderflow { t, h: h_try });
            }

            stage_combo(&y, h_try, &[(A21, &k[0])], &mut ytmp);
            gen.apply_packed(&ytmp, &mut work, &mut err, opts.exec);
            std::mem::swap(&mut k[1], &mut work);
            stage_combo(&y, h_try, &[(A31, &k[0]), (A32, &k[1])], &mut ytmp);
            gen.apply_packed(&ytmp, &mut work, &mut err, opts.exec);
            std::mem::swap(&mut k[2], &mut work);
            stage_combo(
                &y,
                h_try,
                &[(A41, &k[0]), (A42, &k[1]), (A43, &k[2])],
                &mut ytmp,
            );
            gen.apply_packed(&ytmp, &mut work, &mut err, opts.exec);
            std::mem::swap(&mut k[3], &mut work);
            stage_combo(
                &y,
                h_try,
                &[(A51, &k[0]), (A52, &k[1]), (A53, &k[2]), (A54, &k[3])],
                &mut ytmp,
            );
            gen.apply_packed(&ytmp, &mut work, &mut err, opts.exec);
            std::mem::swap(&mut k[4], &mut work);
            stage_combo(
                &y,
                h_try,
                &[
                    (A61, &k[0]),
                    (A62, &k[1]),
                    (A63, &k[2]),
                    (A64, &k[3]),
                    (A65, &k[4]),
                ],
                &mut ytmp,
            );
            gen.apply_packed(&ytmp, &mut work, &mut err, opts.exec);
            std::mem::swap(&mut k[5], &mut work);
            // 5th-order solution; its derivative is stage 7 (FSAL).
            stage_combo(
                &y,
                h_try,
                &[
                    (B1, &k[0]),
                    (B3, &k[2]),
                    (B4, &k[3]),
                    (B5, &k[4]),
                    (B6, &k[5]),
                ],
                &mut ytmp,
            );
            gen.apply_packed(&ytmp, &mut work, &mut err, opts.exec);
            std::mem::swap(&mut k[6], &mut work);
            stats.rhs_evals += 6;

            err.fill(C64::new(0.0, 0.0));
            for (c, ki) in [
                (E1, &k[0]),
                (E3, &k[2]),
                (E4, &k[3]),
                (E5, &k[4]),
                (E6, &k[5]),
                (E7, &k[6]),
            ] {
                let w = C64::new(h_try * c, 0.0);
                for (e, kk) in err.as_mut_slice().iter_mut().zip(ki.as_slice()) {
                    *e += w * kk;
                }
            }
            let enorm = error_norm(&err, &y, &ytmp, grid.rtol, grid.atol);
            let factor = if enorm > 0.0 {
                (0.9 * enorm.powf(-0.2)).clamp(0.2, 5.0)
            } else {
                5.0
            };

            if enorm <= 1.0 {
                t += h_try;
                std::mem::swap(&mut y, &mut ytmp);
                // The exact flow maps Hermitian to Hermitian; the skew part
                // is integrator roundoff and random-walks over thousands of
                // steps unless pinned here. The trace is left untouched so
                // the drift check below stays meaningful.
                hermitize(&mut y);
                k.swap(0, 6);
                stats.steps += 1;
                stats.min_h = stats.min_h.min(h_try);
                // A clipped step says nothing about the error-limited step
                // size, so the controller state is only updated on free steps.
                if !clipped {
                    h = (h_try * factor).min(span);
                }

                let tr: C64 = (0..n).map(|i| y[(i, i)]).sum();
                let drift = (tr - C64::new(1.0, 0.0)).norm();
                stats.max_trace_drift = stats.max_trace_drift.max(drift);
                if drift > opts.trace_tol {
                    return Err(Error::TraceDrift {
                        t,
                        drift,
                        tol: opts.trace_tol,
                    });
                }
                for (m, idx) in &monitor_idx {
                    let leak: f64 = idx.iter().map(|&i| y[(i, i)].re).sum();
                    stats.max_leakage = stats.max_leakage.max(leak);
                    if leak > opts.leak_tol {
                        return Err(Error::Leakage {
                            t,
                            slot: m.slot,
                            leak,
                            tol: opts.leak_tol,
                        });
                    }
                }
            } else {
                stats.rejected += 1;
                h = h_try * factor;
            }
        }
        record(&y, t_out, &mut times, &mut states)?;
    }

    Ok(Trajectory {
        times,
        states,
        stats,
    })
}

// ---------------------------------------------------------------------------
// Steady state
// ---------------------------------------------------------------------------

pub struct SteadyState {
    pub state: DensityMatrix,
    /// max|dρ/dt| at the returned state.
    pub residual: f64,
    pub t: f64,
    pub converged: bool,
}

/// Evolve in blocks of `t_block` until max|dρ/dt| < `tol` or `max_blocks`
/// blocks have elapsed. Long-time evolution is the only steady-state route
/// here: a superoperator null-space solve would need the very matrix this
/// crate refuses to materialize.
pub fn steady_state(
    gen: &LindbladGenerator,
    rho0: &DensityMatrix,
    t_block: f64,
    max_blocks: usize,
    tol: f64,
    opts: &EvolveOptions,
) -> Result<SteadyState> {
    let mut state = rho0.clone();
    let mut t = 0.0;
    let mut work = DMatrix::<C64>::zeros(gen.dim(), gen.dim());
    let mut out = DMatrix::<C64>::zeros(gen.dim(), gen.dim());
    for _ in 0..max_blocks {
        let grid = TimeGrid::new(t, t + t_block, vec![t + t_block])?;
        let traj = evolve(gen, &state, &grid, opts)?;
        t += t_block;
        state = traj.states.into_iter().next_back().expect("one output");
        gen.apply_packed(state.data(), &mut out, &mut work, opts.exec);
        let residual = out.iter().fold(0.0f64, |m, z| m.max(z.norm()));
        if residual < tol {
            return Ok(SteadyState {
                state,
                residual,
                t,
                converged: true,
            });
        }
    }
    gen.apply_packed(state.data(), &mut out, &mut work, opts.exec);
    let residual = out.iter().fold(0.0f64, |m, z| m.max(z.norm()));
    Ok(SteadyState {
        state,
        residual,
        t,
        converged: false,
    })
}

// ---------------------------------------------------------------------------
// Dissipators in the dressed eigenbasis
// ---------------------------------------------------------------------------

/// One-sided noise spectra (rad/ns) evaluated at transition frequencies.
/// All three must be ≥ 0 wherever they are evaluated.
pub struct NoiseSpectra {
    kappa_q: Box<dyn Fn(f64) -> f64 + Send + Sync>,
    kappa_r: Box<dyn Fn(f64) -> f64 + Send + Sync>,
    gamma_dep: Box<dyn Fn(f64) -> f64 + Send + Sync>,
}

impl NoiseSpectra {
    pub fn new(
        kappa_q: impl Fn(f64) -> f64 + Send + Sync + 'static,
        kappa_r: impl Fn(f64) -> f64 + Send + Sync + 'static,
        gamma_dep: impl Fn(f64) -> f64 + Send + Sync + 'static,
    ) -> Self {
        Self {
            kappa_q: Box::new(kappa_q),
            kappa_r: Box::new(kappa_r),
            gamma_dep: Box::new(gamma_dep),
        }
    }

    /// Frequency-independent rates.
    pub fn flat(kappa_q: f64, kappa_r: f64, gamma_dep: f64) -> Result<Self> {
        if kappa_q < 0.0 || kappa_r < 0.0 || gamma_dep < 0.0 {
            return Err(Error::InvalidParameter("spectra must be ≥ 0".into()));
        }
        Ok(Self::new(move |_| kappa_q, move |_| kappa_r, move |_| gamma_dep))
    }
}

/// Eigenbasis dissipators for the qubit–cavity block.
pub struct UscDissipators {
    /// (|j⟩⟨k|, rate) for each downward transition k→j with nonzero rate,
    /// on a single-factor `usc` layout of the kept levels.
    pub jumps: Vec<(Operator, f64)>,
    /// Coherent dephasing operator Σ_j Φ_j|j⟩⟨j| with the rate folded into
    /// the amplitudes (pass rate 1); `None` when γ_dep vanishes.
    pub dephasing: Option<Operator>,
    /// Transition groups in which several transitions shared one spectral
    /// evaluation because their Bohr frequencies agree within the binning
    /// tolerance. With non-flat spectra, how the group frequency is chosen
    /// is convention, not physics — callers should know when it happened.
    pub ambiguous_bins: usize,
}

/// Downward jump operators |j⟩⟨k| with rates
/// κ_q(Δ)|⟨j|σ_z|k⟩|² + κ_r(Δ)|⟨j|(â+â†)|k⟩|², plus one coherent dephasing
/// operator from the diagonal of σ_x. Bohr frequencies within `bin_tol` of
/// one another share a single spectral evaluation at the group mean.
pub fn usc_dissipators(
    basis: &DressedBasis,
    spectra: &NoiseSpectra,
    bin_tol: f64,
) -> UscDissipators {
    let m = basis.n_keep();
    let en = basis.energies();
    let sz = basis.sigma_z();
    let x = basis.x_cav();
    let layout = HilbertLayout::single("usc", m);

    let mut transitions: Vec<(usize, usize, f64)> = Vec::new();
    for k in 1..m {
        for j in 0..k {
            transitions.push((j, k, en[k] - en[j]));
        }
    }
    transitions.sort_by(|a, b| a.2.total_cmp(&b.2));

    let mut jumps = Vec::new();
    let mut ambiguous_bins = 0;
    let mut i = 0;
    while i < transitions.len() {
        let mut end = i + 1;
        while end < transitions.len() && transitions[end].2 - transitions[i].2 <= bin_tol {
            end += 1;
        }
        let group = &transitions[i..end];
        let mean = group.iter().map(|g| g.2).sum::<f64>() / group.len() as f64;
        if group.len() > 1 {
            ambiguous_bins += 1;
        }
        let kq = (spectra.kappa_q)(mean);
        let kr = (spectra.kappa_r)(mean);
        for &(j, k, _) in group {
            let rate = kq * sz[(j, k)].norm_sqr() + kr * x[(j, k)].norm_sqr();
            if rate > 0.0 {
                let mut op = DMatrix::<C64>::zeros(m, m);
                op[(j, k)] = C64::new(1.0, 0.0);
                jumps.push((
                    Operator::new(layout.clone(), op).expect("square by construction"),
                    rate,
                ));
            }
        }
        i = end;
    }

    // Dephasing couples to the σ_x diagonal. A single coherent sum over the
    // projectors — not one dissipator per level — is what reduces exactly to
    // γ₂D[σ_z′] on the lowest doublet.
    let gd = (spectra.gamma_dep)(0.0);
    let dephasing = if gd > 0.0 {
        let amp = (0.5 * gd).sqrt();
        let mut op = DMatrix::<C64>::zeros(m, m);
        let mut any = false;
        for j in 0..m {
            let phi = amp * basis.sigma_x()[(j, j)].re;
            if phi != 0.0 {
                any = true;
            }
            op[(j, j)] = C64::new(phi, 0.0);
        }
        any.then(|| Operator::new(layout, op).expect("square by construction"))
    } else {
        None
    };

    UscDissipators {
        jumps,
        dephasing,
        ambiguous_bins,
    }
}

// ---------------------------------------------------------------------------
// Assembled models
// ---------------------------------------------------------------------------

/// Generator and observables for the dressed-basis composite model.
pub struct FullModelParts {
    pub gen: LindbladGenerator,
    pub layout: HilbertLayout,
    /// σ_z of the qubit–cavity block, embedded in the composite.
    pub sigma_z: Operator,
    /// σ_x of the qubit–cavity block, embedded in the composite.
    pub sigma_x: Operator,
    /// Readout-mode photon number b†b.
    pub nb: Operator,
}

/// Composite model on (usc, resonator): the kept eigenlevels of the
/// qubit–cavity block, the driven Kerr resonator, and Jσ_z·b†b, with photon
/// loss √κ·b and optional eigenbasis dissipators on the block.
///
/// Keeping a finite set of levels is a truncation, not an exact reduction —
/// σ_z couples kept to dropped levels. The evolution is trustworthy only
/// while the top kept doublet stays empty, which the integrator's leakage
/// monitor enforces; convergence in the number of kept levels is checked in
/// the tests.
pub fn full_model(
    basis: &DressedBasis,
    np: &ResonatorParams,
    n_b: usize,
    usc_noise: Option<(&NoiseSpectra, f64)>,
) -> Result<FullModelParts> {
    let m = basis.n_keep();
    let layout = HilbertLayout::new(&[("usc", m), ("resonator", n_b)])?;
    let usc_layout = HilbertLayout::single("usc", m);
    let u = 0;
    let r = 1;

    // Block energies enter relative to the ground level: a global shift is
    // dynamically invisible and keeps phases small.
    let e0 = basis.energies()[0];
    let mut eblock = DMatrix::<C64>::zeros(m, m);
    for (j, &e) in basis.energies()[..m].iter().enumerate() {
        eblock[(j, j)] = C64::new(e - e0, 0.0);
    }
    let h_block = embed(
        &Operator::new(usc_layout.clone(), eblock)?,
        &layout,
        u,
    )?;
    let h_nr = crate::models::nonlinear_resonator_hamiltonian(
        np,
        &layout,
        crate::models::Frame::Rotating,
    )?;
    let sigma_z = embed(
        &Operator::new(usc_layout.clone(), basis.sigma_z().clone())?,
        &layout,
        u,
    )?;
    let sigma_x = embed(
        &Operator::new(usc_layout.clone(), basis.sigma_x().clone())?,
        &layout,
        u,
    )?;
    let nb = embed(&number(n_b)?, &layout, r)?;
    let h = &(&h_block + &h_nr) + &(&(&sigma_z * &nb) * np.j);

    let mut collapse = vec![(embed(&destroy(n_b)?, &layout, r)?, np.kappa)];
    if let Some((spectra, bin_tol)) = usc_noise {
        let diss = usc_dissipators(basis, spectra, bin_tol);
        for (op, rate) in diss.jumps {
            collapse.push((embed(&op, &layout, u)?, rate));
        }
        if let Some(op) = diss.dephasing {
            collapse.push((embed(&op, &layout, u)?, 1.0));
        }
    }

    Ok(FullModelParts {
        gen: LindbladGenerator::new(h, collapse)?,
        layout,
        sigma_z,
        sigma_x,
        nb,
    })
}

/// Two-level model evolution with losses:
/// γ₁D[|G⟩⟨E|] + γ₂D[σ_z′] + κD[b].
pub fn two_level_loss_evolve(
    tl: &TwoLevelParams,
    np: &ResonatorParams,
    loss: &UscLossParams,
    rho0: &DensityMatrix,
    grid: &TimeGrid,
    opts: &EvolveOptions,
) -> Result<Trajectory> {
    let gen = two_level_loss_generator(tl, np, loss, rho0.layout())?;
    evolve(&gen, rho0, grid, opts)
}

/// Generator for the lossy two-level model on a (usc, resonator) layout.
pub fn two_level_loss_generator(
    tl: &TwoLevelParams,
    np: &ResonatorParams,
    loss: &UscLossParams,
    layout: &HilbertLayout,
) -> Result<LindbladGenerator> {
    let u = layout
        .slot_of("usc")
        .ok_or_else(|| Error::DimensionMismatch("layout lacks a `usc` factor".into()))?;
    if layout.dim(u) != 2 {
        return Err(Error::DimensionMismatch(
            "two-level model requires a 2-dimensional usc factor".into(),
        ));
    }
    let r = layout
        .slot_of("resonator")
        .ok_or_else(|| Error::DimensionMismatch("layout lacks a `resonator` factor".into()))?;
    let h = crate::models::two_level_hamiltonian(tl, np, layout)?;

    let usc_layout = HilbertLayout::single("usc", 2);
    // |G⟩⟨E| in the {G, E} ordering of σ_z′ = diag(−1, +1).
    let mut low = DMatrix::<C64>::zeros(2, 2);
    low[(0, 1)] = C64::new(1.0, 0.0);
    let lower = Operator::new(usc_layout, low)?;

    let collapse = vec![
        (embed(&destroy(layout.dim(r))?, layout, r)?, np.kappa),
        (embed(&lower, layout, u)?, loss.gamma1),
        (embed(&crate::models::sigma_z_prime(), layout, u)?, loss.gamma2),
    ];
    LindbladGenerator::new(h, collapse)
}
