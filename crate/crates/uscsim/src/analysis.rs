//! Validation formulas and comparison harnesses: the positive/negative
//! frequency decomposition of system operators, the perturbative infidelity
//! series with its exact-diagonalization cross-check, σ_z leakage matrix
//! elements, and the full-vs-two-level conditional-branch comparison.

use nalgebra::DMatrix;
use num_complex::Complex64 as C64;

use crate::dynamics::Trajectory;
use crate::error::{Error, Result};
use crate::exec::{self, Exec};
use crate::measurement::high_low_split;
use crate::models::{
    perturbative_norm_correction, static_ground_expectations, DressedBasis, RabiParams,
    TwoLevelParams,
};
use crate::tensor::{eig_hermitian, Operator};

// ---------------------------------------------------------------------------
// Frequency decomposition
// ---------------------------------------------------------------------------

/// An operator split into lowering (X⁺), raising (X⁻) and energy-static
/// parts relative to a Hamiltonian's eigenbasis. The physically emitted
/// quadrature is (X⁺ + X⁻)/2; matrix elements inside degenerate shells
/// cannot be assigned a frequency sign and are quarantined in `x_static`.
#[derive(Clone, Debug)]
pub struct FrequencyDecomposition {
    pub x_plus: Operator,
    pub x_minus: Operator,
    /// Diagonal elements plus anything inside a degenerate shell.
    pub x_static: Operator,
    /// Eigenvalues of the splitting Hamiltonian, ascending.
    pub energies: Vec<f64>,
    /// Off-diagonal level pairs that fell within the degeneracy tolerance
    /// and were therefore left unassigned.
    pub degenerate_pairs: usize,
}

impl FrequencyDecomposition {
    /// The observable quadrature x̂′ = (X⁺ + X⁻)/2.
    pub fn x_prime(&self) -> Operator {
        &(&self.x_plus + &self.x_minus) * 0.5
    }
}

/// Split `op` by transition frequency: X⁺ keeps |j⟩⟨j| op |k⟩⟨k| with
/// E_j < E_k strictly (it lowers energy and annihilates the ground state),
/// X⁻ the opposite, and pairs with |E_j − E_k| below the binning tolerance
/// go to the static part. `bin_tol` defaults to 1e−9·max|E|; near-degenerate
/// doublets at small qubit splitting make the assignment ill-conditioned,
/// so the knob is exposed rather than silently misassigning.
pub fn frequency_split(
    op: &Operator,
    h: &Operator,
    bin_tol: Option<f64>,
) -> Result<FrequencyDecomposition> {
    if op.layout() != h.layout() {
        return Err(Error::DimensionMismatch(
            "frequency_split needs op and H on the same layout".into(),
        ));
    }
    let n = h.dim();
    let (vals, vecs) = eig_hermitian(h)?;
    let tol = bin_tol.unwrap_or_else(|| {
        1e-9 * vals.iter().fold(0.0f64, |m, &e| m.max(e.abs()))
    });

    let a_eig = vecs.adjoint() * op.data() * &vecs;
    let mut plus = DMatrix::<C64>::zeros(n, n);
    let mut minus = DMatrix::<C64>::zeros(n, n);
    let mut stat = DMatrix::<C64>::zeros(n, n);
    let mut degenerate_pairs = 0;
    for k in 0..n {
        for j in 0..n {
            let gap = vals[k] - vals[j];
            if gap > tol {
                plus[(j, k)] = a_eig[(j, k)];
            } else if gap < -tol {
                minus[(j, k)] = a_eig[(j, k)];
            } else {
                stat[(j, k)] = a_eig[(j, k)];
                if j < k {
                    degenerate_pairs += 1;
                }
            }
        }
    }

    let back = |m: DMatrix<C64>| -> Result<Operator> {
        Operator::new(op.layout().clone(), &vecs * m * vecs.adjoint())
    };
    Ok(FrequencyDecomposition {
        x_plus: back(plus)?,
        x_minus: back(minus)?,
        x_static: back(stat)?,
        energies: vals,
        degenerate_pairs,
    })
}

// ---------------------------------------------------------------------------
// Perturbative infidelity and leakage
// ---------------------------------------------------------------------------

/// Note attached to every [`InfidelitySeries`]: the series normalization is
/// printed in two variants differing by a factor of four in the prefactor.
pub const PREFACTOR_NOTE: &str = "prefactor ω_q²/(4ω_r²): squaring the perturbative \
amplitudes produces the quarter form, which exact diagonalization confirms; the \
variant with prefactor ω_q²/ω_r² overestimates 1−F fourfold and is kept as f_alt";

/// The closed-series infidelity of the adiabatic ground/excited pair.
#[derive(Clone, Copy, Debug)]
pub struct InfidelitySeries {
    /// f = (ω_q²/4ω_r²) e^{−4α²} Σ_{N≥1} (4α²)^N/(N²N!).
    pub f: f64,
    /// The same series under the four-times-larger prefactor; see
    /// [`PREFACTOR_NOTE`].
    pub f_alt: f64,
    /// Predicted overlap fidelity F = 1/(1 + f) ≈ 1 − f.
    pub fidelity: f64,
    pub note: &'static str,
}

/// Sum the infidelity series for the two-level reduction. Both prefactor
/// candidates are reported; `f` carries the one that matches exact
/// diagonalization.
pub fn infidelity_series(p: &RabiParams) -> InfidelitySeries {
    let f = perturbative_norm_correction(p);
    InfidelitySeries {
        f,
        f_alt: 4.0 * f,
        fidelity: 1.0 / (1.0 + f),
        note: PREFACTOR_NOTE,
    }
}

/// Squared σ_z matrix element h_j = |⟨φ_j|σ_z|G⟩|² from the exact ground
/// state to the j-th exact eigenstate — the weight escaping the two-level
/// subspace through level j. Levels 0 and 1 are the working pair, so j ≥ 2;
/// j must also stay within the retained (truncation-reliable) levels of the
/// basis.
pub fn leakage(basis: &DressedBasis, j: usize) -> Result<f64> {
    if j < 2 {
        return Err(Error::InvalidParameter(format!(
            "leakage indexes the unwanted levels (j ≥ 2); level {j} is part of the working pair"
        )));
    }
    if j >= basis.n_keep() {
        return Err(Error::InvalidParameter(format!(
            "level {j} is beyond the {} retained eigenstates",
            basis.n_keep()
        )));
    }
    Ok(basis.sigma_z()[(j, 0)].norm_sqr())
}

// ---------------------------------------------------------------------------
// Full vs two-level comparison
// ---------------------------------------------------------------------------

/// A scalar observable resolved onto the high/low readout branches at every
/// recorded time, with the branch photon numbers and weights that the
/// splitting produced.
#[derive(Clone, Debug, Default)]
pub struct BranchSeries {
    pub times: Vec<f64>,
    pub high: Vec<f64>,
    pub low: Vec<f64>,
    pub nbar_high: Vec<f64>,
    pub nbar_low: Vec<f64>,
    pub p_high: Vec<f64>,
    /// |⟨x̂⟩_H − ⟨x̂⟩_L| per time; below ~1 the split is formal, not bimodal.
    pub separation: Vec<f64>,
}

impl BranchSeries {
    /// Probability of the *brighter* outcome at each time. "High"/"low"
    /// label the sign of x̂, but which sign holds the latched bright lobe
    /// depends on the working point (the latched branch pulls its effective
    /// detuning negative, which rotates ⟨b⟩ into Re < 0 for this drive
    /// convention) — so the bright side is identified from the photon
    /// numbers, not assumed.
    pub fn p_bright(&self) -> Vec<f64> {
        self.p_high
            .iter()
            .zip(self.nbar_high.iter().zip(&self.nbar_low))
            .map(|(&p, (&nh, &nl))| if nh >= nl { p } else { 1.0 - p })
            .collect()
    }
}

/// Split every recorded state of a trajectory on the readout quadrature
/// (sharp, σ→0) and evaluate `observable` on both branches.
pub fn branch_series(
    traj: &Trajectory,
    observable: &Operator,
    slot: usize,
    exec: Exec,
) -> Result<BranchSeries> {
    let splits = exec::map(exec, &traj.states, |rho| -> Result<_> {
        let s = high_low_split(rho, slot)?;
        let h = s.rho_h.expect(observable).re;
        let l = s.rho_l.expect(observable).re;
        Ok((h, l, s.nbar_h, s.nbar_l, s.p_h, s.separation))
    });
    let mut out = BranchSeries { times: traj.times.clone(), ..Default::default() };
    for s in splits {
        let (h, l, nh, nl, p, sep) = s?;
        out.high.push(h);
        out.low.push(l);
        out.nbar_high.push(nh);
        out.nbar_low.push(nl);
        out.p_high.push(p);
        out.separation.push(sep);
    }
    Ok(out)
}

/// Side-by-side deviation report between the full model's ⟨σ_z⟩ branches and
/// the reduced model's ⟨σ_x′⟩ branches (the dressed-basis mapping pairs
/// those two observables), plus the static-ground predictions evaluated at
/// the reduced model's extracted branch photon numbers.
#[derive(Clone, Debug)]
pub struct TwoLevelComparison {
    pub times: Vec<f64>,
    pub max_dev_high: f64,
    pub max_dev_low: f64,
    /// Static ground-state ⟨σ_x′⟩ at n̄_H(t) / n̄_L(t).
    pub analytic_high: Vec<f64>,
    pub analytic_low: Vec<f64>,
    /// Worst analytic-vs-simulated deviation at times ≥ the settle time;
    /// `None` when the grid has no such times.
    pub analytic_dev_high: Option<f64>,
    pub analytic_dev_low: Option<f64>,
}

/// Compare conditional branch series from the full and reduced models on a
/// shared time grid. The mean-field ground predictions use the reduced
/// series' photon numbers; they are only meaningful once the qubit has
/// relaxed into the branch ground, hence the settle-time cut.
pub fn two_level_comparison(
    full: &BranchSeries,
    reduced: &BranchSeries,
    tl: &TwoLevelParams,
    settle_time: f64,
) -> Result<TwoLevelComparison> {
    if full.times.len() != reduced.times.len()
        || full
            .times
            .iter()
            .zip(&reduced.times)
            .any(|(a, b)| (a - b).abs() > 1e-12 * a.abs().max(1.0))
    {
        return Err(Error::DimensionMismatch(
            "two_level_comparison needs matching output grids".into(),
        ));
    }

    let max_abs_dev = |a: &[f64], b: &[f64]| {
        a.iter()
            .zip(b)
            .fold(0.0f64, |m, (x, y)| m.max((x - y).abs()))
    };
    let analytic_high: Vec<f64> = reduced
        .nbar_high
        .iter()
        .map(|&n| static_ground_expectations(tl, n).0)
        .collect();
    let analytic_low: Vec<f64> = reduced
        .nbar_low
        .iter()
        .map(|&n| static_ground_expectations(tl, n).0)
        .collect();

    let settled_dev = |analytic: &[f64], simulated: &[f64]| -> Option<f64> {
        let mut worst: Option<f64> = None;
        for (i, &t) in reduced.times.iter().enumerate() {
            if t >= settle_time {
                let d = (analytic[i] - simulated[i]).abs();
                worst = Some(worst.map_or(d, |w: f64| w.max(d)));
            }
        }
        worst
    };

    Ok(TwoLevelComparison {
        times: full.times.clone(),
        max_dev_high: max_abs_dev(&full.high, &reduced.high),
        max_dev_low: max_abs_dev(&full.low, &reduced.low),
        analytic_dev_high: settled_dev(&analytic_high, &reduced.high),
        analytic_dev_low: settled_dev(&analytic_low, &reduced.low),
        analytic_high,
        analytic_low,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::{evolve, EvolveOptions, LindbladGenerator, TimeGrid};
    use crate::models::{
        self, adiabatic_states, rabi_hamiltonian, ResonatorParams,
    };
    use crate::tensor::{destroy, embed, number, DensityMatrix, HilbertLayout};
    use crate::testutil;
    use nalgebra::DVector;
    use std::f64::consts::TAU;

    fn fig_params() -> RabiParams {
        RabiParams {
            omega_q: TAU * 0.299,
            g: TAU * 4.920,
            omega_r: TAU * 6.336,
        }
    }

    // -- frequency_split ----------------------------------------------------

    #[test]
    fn harmonic_oscillator_splits_into_ladder_operators() {
        let n = 12;
        let layout = HilbertLayout::single("cavity", n);
        let a = destroy(n).unwrap().with_layout(layout.clone()).unwrap();
        let x = &a + &a.adjoint();
        let h = &number(n).unwrap().with_layout(layout).unwrap() * (TAU * 6.336);
        let dec = frequency_split(&x, &h, None).unwrap();
        assert!((dec.x_plus.data() - a.data()).map(|z| z.norm()).max() < 1e-12);
        assert!((dec.x_minus.data() - a.adjoint().data()).map(|z| z.norm()).max() < 1e-12);
        assert!(dec.x_static.max_abs() < 1e-12);
        assert_eq!(dec.degenerate_pairs, 0);
        for w in dec.energies.windows(2) {
            assert!(w[1] > w[0]);
        }
    }

    #[test]
    fn split_parts_reassemble_and_mirror() {
        let layout = HilbertLayout::single("cavity", 9);
        let h = Operator::new(layout.clone(), testutil::hermitian(9, 5)).unwrap();
        let op = Operator::new(layout, testutil::hermitian(9, 6)).unwrap();
        let dec = frequency_split(&op, &h, None).unwrap();
        let sum = &(&dec.x_plus + &dec.x_minus) + &dec.x_static;
        assert!((sum.data() - op.data()).map(|z| z.norm()).max() < 1e-10);
        // A Hermitian operator's raising part is the adjoint of its
        // lowering part.
        assert!(
            (dec.x_minus.data() - dec.x_plus.adjoint().data())
                .map(|z| z.norm())
                .max()
                < 1e-10
        );
    }

    #[test]
    fn splitting_is_idempotent() {
        let layout = HilbertLayout::single("cavity", 8);
        let h = Operator::new(layout.clone(), testutil::hermitian(8, 15)).unwrap();
        let op = Operator::new(layout, testutil::hermitian(8, 16)).unwrap();
        let first = frequency_split(&op, &h, None).unwrap();
        let again = frequency_split(&first.x_plus, &h, None).unwrap();
        assert!(
            (again.x_plus.data() - first.x_plus.data())
                .map(|z| z.norm())
                .max()
                < 1e-10
        );
        assert!(again.x_minus.max_abs() < 1e-10);
        assert!(again.x_static.max_abs() < 1e-10);
    }

    #[test]
    fn lowering_part_connects_strictly_downward() {
        let layout = HilbertLayout::single("cavity", 10);
        let h = Operator::new(layout.clone(), testutil::hermitian(10, 25)).unwrap();
        let op = Operator::new(layout, testutil::hermitian(10, 26)).unwrap();
        let dec = frequency_split(&op, &h, None).unwrap();
        let (vals, vecs) = eig_hermitian(&h).unwrap();
        let back = vecs.adjoint() * dec.x_plus.data() * &vecs;
        for j in 0..10 {
            for k in 0..10 {
                if back[(j, k)].norm() > 1e-10 {
                    assert!(vals[j] < vals[k]);
                }
            }
        }
    }

    #[test]
    fn exact_ground_state_emits_no_photons() {
        let p = fig_params();
        let layout = HilbertLayout::qubit_cavity(40);
        let h = rabi_hamiltonian(&p, &layout).unwrap();
        let a = embed(&destroy(40).unwrap(), &layout, 1).unwrap();
        let x = &a + &a.adjoint();
        let dec = frequency_split(&x, &h, None).unwrap();
        let basis = DressedBasis::new(&p, 40, 6).unwrap();
        let g = basis.ground();
        let residual = dec.x_plus.data() * &g;
        // X⁺ annihilates the lowest eigenstate: no real photons sit in the
        // true ground state.
        assert!(residual.norm() < 1e-8, "‖X⁺|G⟩‖ = {}", residual.norm());
    }

    #[test]
    fn degenerate_shells_are_quarantined() {
        let layout = HilbertLayout::single("cavity", 4);
        let h = Operator::new(
            layout.clone(),
            DMatrix::from_diagonal(&DVector::from_vec(vec![
                C64::new(0.0, 0.0),
                C64::new(1.0, 0.0),
                C64::new(1.0, 0.0),
                C64::new(2.0, 0.0),
            ])),
        )
        .unwrap();
        let op = Operator::new(layout, testutil::hermitian(4, 33)).unwrap();
        let dec = frequency_split(&op, &h, Some(1e-9)).unwrap();
        assert_eq!(dec.degenerate_pairs, 1);
        let sum = &(&dec.x_plus + &dec.x_minus) + &dec.x_static;
        assert!((sum.data() - op.data()).map(|z| z.norm()).max() < 1e-12);
        // The 1–2 element survived, unassigned, inside the static part.
        assert!(dec.x_static.data()[(1, 2)].norm() > 1e-3);
    }

    // -- infidelity_series ---------------------------------------------------

    #[test]
    fn infidelity_vanishes_without_coupling() {
        let p = RabiParams { omega_q: TAU * 0.3, g: 0.0, omega_r: TAU * 6.336 };
        let s = infidelity_series(&p);
        assert_eq!(s.f, 0.0);
        assert_eq!(s.fidelity, 1.0);
    }

    #[test]
    fn infidelity_scales_quadratically_in_the_splitting() {
        let base = fig_params();
        let doubled = RabiParams { omega_q: 2.0 * base.omega_q, ..base };
        let (f1, f2) = (infidelity_series(&base).f, infidelity_series(&doubled).f);
        assert!((f2 / f1 - 4.0).abs() < 1e-12);
        assert!((infidelity_series(&base).f_alt / f1 - 4.0).abs() < 1e-12);
    }

    #[test]
    fn infidelity_is_monotone_in_the_splitting_and_small_in_regime() {
        let omega_r = TAU * 6.336;
        for ratio in [0.51, 0.78, 0.99] {
            let mut prev = 0.0;
            for k in 1..=10 {
                let p = RabiParams {
                    omega_q: TAU * 0.05 * k as f64,
                    g: ratio * omega_r,
                    omega_r,
                };
                let f = infidelity_series(&p).f;
                assert!(f > prev);
                prev = f;
                if p.omega_q <= TAU * 0.5 {
                    assert!(f < 0.05, "f = {f} at ratio {ratio}, ω_q = {}", p.omega_q);
                }
            }
        }
    }

    #[test]
    fn series_matches_exact_diagonalization_and_rejects_the_alt_prefactor() {
        // Small-splitting point where second-order theory should be tight.
        let p = RabiParams { omega_q: TAU * 0.3, g: 0.51 * TAU * 6.336, omega_r: TAU * 6.336 };
        let layout = HilbertLayout::qubit_cavity(40);
        let basis = DressedBasis::new(&p, 40, 4).unwrap();
        let pair = adiabatic_states(&p, 0, &layout).unwrap();
        let g = basis.ground();
        let overlap: C64 = pair.minus.dotc(&g);
        let infidelity = 1.0 - overlap.norm_sqr();
        let s = infidelity_series(&p);
        assert!(s.f < 0.02);
        assert!((infidelity - s.f).abs() < 0.3 * s.f, "1−F = {infidelity}, f = {}", s.f);
        assert!((infidelity - s.f_alt).abs() > 0.3 * s.f_alt);
        assert!((s.fidelity - (1.0 - s.f)).abs() < s.f * s.f * 2.0);
    }

    // -- leakage --------------------------------------------------------------

    #[test]
    fn sigma_z_weight_concentrates_in_the_working_pair() {
        let p = fig_params();
        let n_c = 30;
        let basis = DressedBasis::new(&p, n_c, 8).unwrap();
        // The dominant transition carries almost all of it…
        let h1 = basis.sigma_z()[(1, 0)].norm_sqr();
        assert!(h1 > 0.95, "h₁ = {h1}");
        // …and the leakage levels nearly nothing.
        for j in 2..8 {
            assert!(leakage(&basis, j).unwrap() < 0.05);
        }
    }

    #[test]
    fn sigma_z_column_is_complete() {
        let p = fig_params();
        let n_c = 24;
        let basis = DressedBasis::new(&p, n_c, 2 * n_c).unwrap();
        let mut total = basis.sigma_z()[(0, 0)].norm_sqr() + basis.sigma_z()[(1, 0)].norm_sqr();
        for j in 2..2 * n_c {
            total += leakage(&basis, j).unwrap();
        }
        // σ_z² = 1 exactly, even on the truncated cavity.
        assert!((total - 1.0).abs() < 1e-10, "Σ h_j = {total}");
    }

    #[test]
    fn leakage_stays_small_across_the_verified_window() {
        let omega_r = TAU * 6.336;
        for wq in [0.1, 0.3, 0.5] {
            let p = RabiParams { omega_q: TAU * wq, g: 0.51 * omega_r, omega_r };
            let basis = DressedBasis::new(&p, 30, 6).unwrap();
            for j in 2..=4 {
                let h = leakage(&basis, j).unwrap();
                assert!(h < 0.05, "h_{j} = {h} at ω_q = 2π·{wq}");
            }
        }
    }

    #[test]
    fn leakage_rejects_working_pair_and_unreliable_levels() {
        let basis = DressedBasis::new(&fig_params(), 20, 4).unwrap();
        assert!(leakage(&basis, 0).is_err());
        assert!(leakage(&basis, 1).is_err());
        assert!(leakage(&basis, 4).is_err());
    }

    // -- branch series and comparison -----------------------------------------

    #[test]
    fn branch_series_tracks_a_driven_two_level_readout() {
        // Small driven Kerr readout of a two-level system; enough to light
        // up the splitter without caring about the physics regime.
        let layout = HilbertLayout::two_level_resonator(12);
        let tl = TwoLevelParams { omega_eff: 0.1, j: 0.05 };
        let np = ResonatorParams {
            delta: 0.8,
            chi: 0.0,
            f: 1.2,
            omega_d: None,
            kappa: 0.3,
            j: 0.05,
        };
        let h = models::two_level_hamiltonian(&tl, &np, &layout).unwrap();
        let b = embed(&destroy(12).unwrap(), &layout, 1).unwrap();
        let gen = LindbladGenerator::new(h, vec![(b, np.kappa)]).unwrap();
        let mut g0 = DVector::zeros(24);
        g0[0] = C64::new(1.0, 0.0);
        let rho0 = DensityMatrix::from_pure(&g0, layout.clone()).unwrap();
        let grid = TimeGrid::uniform(0.0, 12.0, 6).unwrap();
        let traj = evolve(&gen, &rho0, &grid, &EvolveOptions::default()).unwrap();

        let sxp = embed(&models::sigma_x_prime(), &layout, 0).unwrap();
        let series = branch_series(&traj, &sxp, 1, Exec::Parallel).unwrap();
        assert_eq!(series.times, traj.times);
        assert!((series.p_high[0] - 0.5).abs() < 1e-9, "vacuum splits evenly");
        for i in 0..series.times.len() {
            assert!((0.0..=1.0 + 1e-12).contains(&series.p_high[i]));
            assert!(series.nbar_high[i] >= -1e-12);
            assert!(series.nbar_low[i] >= -1e-12);
            assert!(series.high[i].abs() <= 1.0 + 1e-9);
            assert!(series.low[i].abs() <= 1.0 + 1e-9);
        }

        // p_bright re-labels by photon number, point by point.
        let bright = series.p_bright();
        for i in 0..series.times.len() {
            let expect = if series.nbar_high[i] >= series.nbar_low[i] {
                series.p_high[i]
            } else {
                1.0 - series.p_high[i]
            };
            assert_eq!(bright[i], expect);
        }
    }

    #[test]
    fn comparison_report_flags_deviations_and_settling() {
        let times: Vec<f64> = (0..6).map(|i| 100.0 * i as f64).collect();
        let tl = TwoLevelParams { omega_eff: TAU * 0.08952, j: TAU * 9.498e-4 };
        // Reduced branches sitting exactly on the static ground values.
        let nbar_high = vec![20.0; 6];
        let nbar_low = vec![1.0; 6];
        let sx_h = static_ground_expectations(&tl, 20.0).0;
        let sx_l = static_ground_expectations(&tl, 1.0).0;
        let reduced = BranchSeries {
            times: times.clone(),
            high: vec![sx_h; 6],
            low: vec![sx_l; 6],
            nbar_high,
            nbar_low,
            p_high: vec![0.5; 6],
            separation: vec![5.0; 6],
        };
        let mut full = reduced.clone();
        full.high[3] += 0.07;
        let report = two_level_comparison(&full, &reduced, &tl, 100.0).unwrap();
        assert!((report.max_dev_high - 0.07).abs() < 1e-12);
        assert_eq!(report.max_dev_low, 0.0);
        assert_eq!(report.analytic_dev_high, Some(0.0));
        assert_eq!(report.analytic_dev_low, Some(0.0));
        assert_eq!(report.analytic_high[0], sx_h);

        // Settle time past the grid → no analytic verdict.
        let late = two_level_comparison(&full, &reduced, &tl, 1e6).unwrap();
        assert_eq!(late.analytic_dev_high, None);

        let mut short = reduced.clone();
        short.times.pop();
        short.high.pop();
        assert!(two_level_comparison(&short, &reduced, &tl, 0.0).is_err());
    }
}
