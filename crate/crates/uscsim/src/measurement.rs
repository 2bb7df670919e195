//! Coarse-grained quadrature readout of the resonator.
//!
//! A homodyne-style measurement of x̂ = (b̂+b̂†)/2 with Gaussian blur σ,
//! binarized by the sign of the outcome, is the two-element POVM
//! (W₊, W₋) with (W_±)_{mn} = ½∫ erfc(∓x/(√2σ)) ψ_m(x)ψ_n(x) dx in the Fock
//! basis. Everything downstream — conditional system states, the
//! low-amplitude probability, the high/low photon split — is built from that
//! pair; the continuous outcome density is never materialized.

use std::collections::HashMap;
use std::sync::{Arc, Mutex};

use nalgebra::DMatrix;
use num_complex::Complex64 as C64;
use once_cell::sync::Lazy;
use statrs::function::erf::erfc;

use crate::error::{Error, Result};
use crate::tensor::{
    destroy, eig_hermitian, embed, number, partial_trace_op, DensityMatrix, HilbertLayout,
    Operator,
};

/// Measurement resolution. `Zero` and `Infinite` are the symbolic limits —
/// a sharp sign measurement and no measurement at all — handled exactly
/// rather than by pushing a finite σ to an extreme.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum CoarseGrain {
    Zero,
    Finite(f64),
    Infinite,
}

impl CoarseGrain {
    pub fn finite(sigma: f64) -> Result<Self> {
        if !(sigma > 0.0) || !sigma.is_finite() {
            return Err(Error::InvalidParameter(format!(
                "coarse-graining width {sigma} must be positive and finite"
            )));
        }
        Ok(CoarseGrain::Finite(sigma))
    }

    pub fn sigma(&self) -> Option<f64> {
        match self {
            CoarseGrain::Finite(s) => Some(*s),
            _ => None,
        }
    }
}

impl std::fmt::Display for CoarseGrain {
    fn fmt(&self, w: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CoarseGrain::Zero => write!(w, "0"),
            CoarseGrain::Finite(s) => write!(w, "{s}"),
            CoarseGrain::Infinite => write!(w, "inf"),
        }
    }
}

/// The binary POVM (W₊, W₋) on an `n`-level Fock space.
#[derive(Clone, Debug)]
pub struct EffectPair {
    pub w_plus: DMatrix<C64>,
    pub w_minus: DMatrix<C64>,
    pub cg: CoarseGrain,
    /// Gauss–Legendre node count the assembly converged at (0 for the
    /// quadrature-free σ→∞ limit).
    pub nodes_used: usize,
}

impl EffectPair {
    pub fn dim(&self) -> usize {
        self.w_plus.nrows()
    }

    /// max|W₊ + W₋ − I|: the completeness defect.
    pub fn completeness_defect(&self) -> f64 {
        let n = self.dim();
        let mut dev = 0.0f64;
        for i in 0..n {
            for j in 0..n {
                let want = if i == j { 1.0 } else { 0.0 };
                dev = dev.max((self.w_plus[(i, j)] + self.w_minus[(i, j)] - want).norm());
            }
        }
        dev
    }
}

// ---------------------------------------------------------------------------
// Quadrature machinery
// ---------------------------------------------------------------------------

/// Gauss–Legendre nodes and weights on [−1, 1]: Newton iteration on P_n from
/// Chebyshev starting guesses. Exact for polynomials of degree ≤ 2n−1.
fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    for i in 0..n.div_ceil(2) {
        let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            // P_n(x) and P'_n(x) by the three-term recurrence.
            let mut p0 = 1.0;
            let mut p1 = x;
            for k in 2..=n {
                let p2 = ((2 * k - 1) as f64 * x * p1 - (k - 1) as f64 * p0) / k as f64;
                p0 = p1;
                p1 = p2;
            }
            dp = n as f64 * (x * p1 - p0) / (x * x - 1.0);
            let dx = p1 / dp;
            x -= dx;
            if dx.abs() < 1e-15 {
                break;
            }
        }
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        nodes[i] = -x;
        weights[i] = w;
        nodes[n - 1 - i] = x;
        weights[n - 1 - i] = w;
    }
    if n % 2 == 1 {
        nodes[n / 2] = 0.0;
    }
    (nodes, weights)
}

/// Harmonic-oscillator wavefunctions ψ_0..ψ_{nmax−1} of the convention
/// x̂ = (b̂+b̂†)/2 (vacuum variance ⟨x̂²⟩ = 1/4), evaluated at `x`:
/// ψ_k(x) = 2^{1/4}·φ_k(√2·x) with φ_k the unit-variance Hermite functions.
/// The normalized three-term recurrence is upward-stable; entries stay O(1).
fn oscillator_psi(nmax: usize, x: f64) -> Vec<f64> {
    let u = std::f64::consts::SQRT_2 * x;
    let norm = 2f64.powf(0.25);
    let mut out = vec![0.0; nmax];
    let phi0 = std::f64::consts::PI.powf(-0.25) * (-0.5 * u * u).exp();
    if nmax >= 1 {
        out[0] = norm * phi0;
    }
    let mut prev = 0.0;
    let mut cur = phi0;
    for k in 0..nmax.saturating_sub(1) {
        let next = u * (2.0 / (k as f64 + 1.0)).sqrt() * cur
            - (k as f64 / (k as f64 + 1.0)).sqrt() * prev;
        prev = cur;
        cur = next;
        out[k + 1] = norm * cur;
    }
    out
}

/// Assemble (W₊, W₋) with `n_nodes` Gauss–Legendre points. For σ → 0 each
/// effect integrates over its own half-line (the erfc step is exact); for
/// finite σ both integrate the erfc profile over the full window.
fn assemble_effects(cg: CoarseGrain, n: usize, n_nodes: usize) -> (DMatrix<f64>, DMatrix<f64>) {
    let half_width = 4.0 + 2.0 * (n as f64).sqrt();
    let (gl_nodes, gl_weights) = gauss_legendre(n_nodes);
    let mut w_plus = DMatrix::<f64>::zeros(n, n);
    let mut w_minus = DMatrix::<f64>::zeros(n, n);

    let add = |w: &mut DMatrix<f64>, a: f64, b: f64, profile: &dyn Fn(f64) -> f64| {
        let mid = 0.5 * (a + b);
        let scale = 0.5 * (b - a);
        for (t, gw) in gl_nodes.iter().zip(&gl_weights) {
            let x = mid + scale * t;
            let weight = scale * gw * profile(x);
            if weight == 0.0 {
                continue;
            }
            let psi = oscillator_psi(n, x);
            for m in 0..n {
                let wm = weight * psi[m];
                for k in m..n {
                    w[(m, k)] += wm * psi[k];
                }
            }
        }
    };

    match cg {
        CoarseGrain::Zero => {
            add(&mut w_plus, 0.0, half_width, &|_| 1.0);
            add(&mut w_minus, -half_width, 0.0, &|_| 1.0);
        }
        CoarseGrain::Finite(sigma) => {
            let inv = 1.0 / (std::f64::consts::SQRT_2 * sigma);
            add(&mut w_plus, -half_width, half_width, &|x| {
                0.5 * erfc(-x * inv)
            });
            add(&mut w_minus, -half_width, half_width, &|x| {
                0.5 * erfc(x * inv)
            });
        }
        CoarseGrain::Infinite => unreachable!("σ→∞ never reaches quadrature"),
    }

    for w in [&mut w_plus, &mut w_minus] {
        for m in 0..n {
            for k in 0..m {
                w[(m, k)] = w[(k, m)];
            }
        }
    }
    (w_plus, w_minus)
}

fn max_entry_diff(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    a.iter()
        .zip(b.iter())
        .fold(0.0f64, |m, (x, y)| m.max((x - y).abs()))
}

const QUAD_CONVERGENCE_TOL: f64 = 1e-10;
const COMPLETENESS_TOL: f64 = 1e-8;
const MIN_NODES: usize = 64;
const MAX_NODES: usize = 4096;

type CacheKey = (u64, usize);

// NaN-space bit patterns: a validated σ (positive, finite) can never hash to
// either marker.
const KEY_ZERO: u64 = 0xFFF8_0000_0000_0001;
const KEY_INFINITE: u64 = 0xFFF8_0000_0000_0002;

fn cache_key(cg: CoarseGrain, n: usize) -> CacheKey {
    let tag = match cg {
        CoarseGrain::Zero => KEY_ZERO,
        CoarseGrain::Infinite => KEY_INFINITE,
        CoarseGrain::Finite(s) => s.to_bits(),
    };
    (tag, n)
}

static EFFECT_CACHE: Lazy<Mutex<HashMap<CacheKey, Arc<EffectPair>>>> =
    Lazy::new(|| Mutex::new(HashMap::new()));

/// The binary POVM for resolution `cg` on an `n`-level Fock space.
///
/// Finite-σ and σ→0 pairs are assembled by Gauss–Legendre quadrature with
/// node doubling until every entry is stable to 1e−10; σ→∞ is I/2 exactly.
/// Pairs are cached per (σ, n) — repeated trajectory conditioning hits the
/// cache, and concurrent callers share one `Arc`.
pub fn quadrature_effects(cg: CoarseGrain, n: usize) -> Result<Arc<EffectPair>> {
    if n == 0 {
        return Err(Error::DimensionMismatch("0-dimensional Fock space".into()));
    }
    if let CoarseGrain::Finite(s) = cg {
        // Re-validate: the variant is public.
        CoarseGrain::finite(s)?;
    }
    let key = cache_key(cg, n);
    if let Some(hit) = EFFECT_CACHE.lock().unwrap().get(&key) {
        return Ok(Arc::clone(hit));
    }
    let pair = Arc::new(build_effects(cg, n)?);
    Ok(Arc::clone(
        EFFECT_CACHE
            .lock()
            .unwrap()
            .entry(key)
            .or_insert(pair),
    ))
}

fn build_effects(cg: CoarseGrain, n: usize) -> Result<EffectPair> {
    if cg == CoarseGrain::Infinite {
        // No information: both outcomes occur with probability ½ regardless
        // of the state, which forces W_± = I/2 — no quadrature involved.
        let half = DMatrix::<C64>::identity(n, n) * C64::new(0.5, 0.0);
        return Ok(EffectPair {
            w_plus: half.clone(),
            w_minus: half,
            cg,
            nodes_used: 0,
        });
    }

    let mut n_nodes = MIN_NODES;
    let (mut wp, mut wm) = assemble_effects(cg, n, n_nodes);
    loop {
        let next = n_nodes * 2;
        if next > MAX_NODES {
            return Err(Error::QuadratureNonConvergence(format!(
                "effect entries still moving after {n_nodes} nodes (σ = {cg}, n = {n})"
            )));
        }
        let (wp2, wm2) = assemble_effects(cg, n, next);
        let diff = max_entry_diff(&wp, &wp2).max(max_entry_diff(&wm, &wm2));
        wp = wp2;
        wm = wm2;
        n_nodes = next;
        if diff < QUAD_CONVERGENCE_TOL {
            break;
        }
    }

    let pair = EffectPair {
        w_plus: wp.map(|v| C64::new(v, 0.0)),
        w_minus: wm.map(|v| C64::new(v, 0.0)),
        cg,
        nodes_used: n_nodes,
    };
    let defect = pair.completeness_defect();
    if defect > COMPLETENESS_TOL {
        // The quadrature window was too small for this n — a real failure,
        // not something to patch up by rescaling.
        return Err(Error::QuadratureNonConvergence(format!(
            "completeness defect {defect:.3e} after convergence (σ = {cg}, n = {n})"
        )));
    }
    Ok(pair)
}

// ---------------------------------------------------------------------------
// Conditioning
// ---------------------------------------------------------------------------

/// Unnormalized conditional states of everything but factor `slot`:
/// (Tr_slot[(I⊗W₊)ρ], Tr_slot[(I⊗W₋)ρ]). Linear in ρ by construction.
pub fn conditional_unnormalized(
    rho: &Operator,
    cg: CoarseGrain,
    slot: usize,
) -> Result<(Operator, Operator)> {
    let layout = rho.layout();
    if slot >= layout.nfactors() {
        return Err(Error::SlotOutOfRange {
            slot,
            nfactors: layout.nfactors(),
        });
    }
    let keep: Vec<usize> = (0..layout.nfactors()).filter(|&s| s != slot).collect();
    if keep.is_empty() {
        return Err(Error::DimensionMismatch(
            "conditioning away the only factor leaves no state".into(),
        ));
    }
    let effects = quadrature_effects(cg, layout.dim(slot))?;
    let mk = |w: &DMatrix<C64>| -> Result<Operator> {
        let w_op = embed(
            &Operator::new(HilbertLayout::single("measured", w.nrows()), w.clone())?,
            layout,
            slot,
        )?;
        partial_trace_op(&(&w_op * rho), &keep)
    };
    Ok((mk(&effects.w_plus)?, mk(&effects.w_minus)?))
}

/// The system states conditioned on each outcome, and the probability of
/// the x ≥ 0 branch.
pub struct ConditionalStates {
    pub rho_ge: DensityMatrix,
    pub rho_lt: DensityMatrix,
    pub p_ge: f64,
}

/// Condition the non-`slot` factors of `rho` on the binary outcome.
///
/// Fails with [`Error::DegenerateOutcome`] when either branch has
/// probability below 1e−12: conditioning on a never-occurring outcome is
/// not meaningful, and dividing by its probability would amplify noise into
/// a fake state.
pub fn conditional_states(
    rho: &DensityMatrix,
    cg: CoarseGrain,
    slot: usize,
) -> Result<ConditionalStates> {
    let (t_ge, t_lt) = conditional_unnormalized(rho.op(), cg, slot)?;
    let p_ge = t_ge.trace().re;
    let p_lt = t_lt.trace().re;
    for p in [p_ge, p_lt] {
        if p < 1e-12 {
            return Err(Error::DegenerateOutcome { p });
        }
    }
    let norm = |t: Operator, p: f64| -> Result<DensityMatrix> {
        DensityMatrix::with_trace_tol(&t * (1.0 / p), rho.trace_tol())
    };
    Ok(ConditionalStates {
        rho_ge: norm(t_ge, p_ge)?,
        rho_lt: norm(t_lt, p_lt)?,
        p_ge,
    })
}

/// Probability of the low-amplitude (x < 0) outcome at each recorded time.
pub fn low_amplitude_probability(
    traj: &crate::dynamics::Trajectory,
    cg: CoarseGrain,
    slot: usize,
) -> Result<Vec<f64>> {
    let first = traj
        .states
        .first()
        .ok_or_else(|| Error::InvalidState("empty trajectory".into()))?;
    let layout = first.layout().clone();
    if slot >= layout.nfactors() {
        return Err(Error::SlotOutOfRange {
            slot,
            nfactors: layout.nfactors(),
        });
    }
    let effects = quadrature_effects(cg, layout.dim(slot))?;
    let w_lt = embed(
        &Operator::new(
            HilbertLayout::single("measured", effects.dim()),
            effects.w_minus.clone(),
        )?,
        &layout,
        slot,
    )?;
    Ok(traj.states.iter().map(|s| s.expect(&w_lt).re).collect())
}

/// Sharp-split conditional data: composite states and photon numbers for
/// the high- (x ≥ 0) and low-amplitude (x < 0) branches.
pub struct HighLowSplit {
    pub rho_h: DensityMatrix,
    pub rho_l: DensityMatrix,
    pub nbar_h: f64,
    pub nbar_l: f64,
    pub p_h: f64,
    /// |⟨x̂⟩_H − ⟨x̂⟩_L|. Below ~1 (two vacuum standard deviations) the
    /// resonator state was not actually bimodal and the split is a formal
    /// exercise; callers decide what to do with that.
    pub separation: f64,
}

impl HighLowSplit {
    pub fn bimodal(&self) -> bool {
        self.separation >= 1.0
    }
}

/// Split `rho` by the sign of x̂ on factor `slot` (the σ→0 projective limit)
/// and keep the *composite* post-measurement states, Lüders-updated:
/// ρ_± = (I⊗√W_±)ρ(I⊗√W_±)/p_±. For the sharp pair the √ is essentially the
/// projector itself; Lüders is the minimal-disturbance update consistent
/// with the POVM and leaves the traced-out system states identical to
/// [`conditional_states`].
pub fn high_low_split(rho: &DensityMatrix, slot: usize) -> Result<HighLowSplit> {
    let layout = rho.layout().clone();
    if slot >= layout.nfactors() {
        return Err(Error::SlotOutOfRange {
            slot,
            nfactors: layout.nfactors(),
        });
    }
    let n = layout.dim(slot);
    let effects = quadrature_effects(CoarseGrain::Zero, n)?;

    let n_op = embed(&number(n)?, &layout, slot)?;
    let b = embed(&destroy(n)?, &layout, slot)?;
    let x_op = &(&b + &b.adjoint()) * 0.5;

    let branch = |w: &DMatrix<C64>| -> Result<(DensityMatrix, f64, f64, f64)> {
        let (state, p) = luders_branch(rho, w, slot)?;
        let nbar = state.expect(&n_op).re;
        let x = state.expect(&x_op).re;
        Ok((state, p, nbar, x))
    };

    let (rho_h, p_h, nbar_h, x_h) = branch(&effects.w_plus)?;
    let (rho_l, _, nbar_l, x_l) = branch(&effects.w_minus)?;
    Ok(HighLowSplit {
        rho_h,
        rho_l,
        nbar_h,
        nbar_l,
        p_h,
        separation: (x_h - x_l).abs(),
    })
}

/// Lüders update for one binary effect on factor `slot`:
/// ((I⊗√W)ρ(I⊗√W)/p, p). Fails when the outcome has probability below
/// 1e−12, where the conditioned state is numerically meaningless.
fn luders_branch(
    rho: &DensityMatrix,
    w: &DMatrix<C64>,
    slot: usize,
) -> Result<(DensityMatrix, f64)> {
    let layout = rho.layout().clone();
    let n = w.nrows();
    let measured = HilbertLayout::single("measured", n);
    let (vals, vecs) = eig_hermitian(&Operator::new(measured.clone(), w.clone())?)?;
    let mut d = DMatrix::<C64>::zeros(n, n);
    for (i, &v) in vals.iter().enumerate() {
        // Effect eigenvalues live in [0, 1] up to quadrature roundoff.
        d[(i, i)] = C64::new(v.max(0.0).sqrt(), 0.0);
    }
    let root = Operator::new(measured, &vecs * d * vecs.adjoint())?;
    let s = embed(&root, &layout, slot)?;
    let unnorm = &(&s * rho.op()) * &s;
    let p = unnorm.trace().re;
    if p < 1e-12 {
        return Err(Error::DegenerateOutcome { p });
    }
    Ok((
        DensityMatrix::with_trace_tol(&unnorm * (1.0 / p), rho.trace_tol())?,
        p,
    ))
}

/// Composite states conditioned on each outcome with the measured factor
/// retained: the Lüders update for each of the two quadrature effects.
/// Tracing factor `slot` out of `rho_ge`/`rho_lt` reproduces
/// [`conditional_states`].
pub fn conditional_composite(
    rho: &DensityMatrix,
    cg: CoarseGrain,
    slot: usize,
) -> Result<ConditionalStates> {
    let layout = rho.layout();
    if slot >= layout.nfactors() {
        return Err(Error::SlotOutOfRange {
            slot,
            nfactors: layout.nfactors(),
        });
    }
    let effects = quadrature_effects(cg, layout.dim(slot))?;
    let (rho_ge, p_ge) = luders_branch(rho, &effects.w_plus, slot)?;
    let (rho_lt, _) = luders_branch(rho, &effects.w_minus, slot)?;
    Ok(ConditionalStates {
        rho_ge,
        rho_lt,
        p_ge,
    })
}
