//! Declarative simulation runs.
//!
//! A [`Scenario`] is a complete, serializable recipe for one run: the model
//! to integrate, every physical parameter, the Hilbert-space cuts, the output
//! grid, the initial state, and which derived quantities to compute.
//! [`run_scenario`] turns it into a [`ResultBundle`]; [`run_sweep`] repeats a
//! scenario over values of one field, recording per-point failures without
//! aborting the rest. Named presets ship as TOML files under `presets/` and
//! are embedded at compile time so binaries resolve them from any working
//! directory.
//!
//! Nothing here draws random numbers, and every parallel kernel reduces in a
//! fixed order, so rerunning a scenario — in either execution mode —
//! reproduces the bundle bitwise. Every physical number in a bundle traces
//! back to a named field of the scenario that produced it.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64 as C64;
use serde::{Deserialize, Serialize};

use crate::analysis::{self, BranchSeries, TwoLevelComparison};
use crate::dynamics::{
    evolve, full_model, two_level_loss_generator, EvolveOptions, EvolveStats, LeakageMonitor,
    NoiseSpectra, TimeGrid, Trajectory, DEFAULT_ATOL, DEFAULT_RTOL,
};
use crate::error::{Error, Result};
use crate::exec::{self, Exec};
use crate::measurement::{conditional_composite, low_amplitude_probability, CoarseGrain};
use crate::metrics::{negativity, q_function, quantum_discord, DiscordOptions, QGrid, QGridSpec};
use crate::models::{
    approx_ground_excited, branch_states, effective_two_level, DressedBasis, RabiParams,
    ResonatorParams, TwoLevelParams, UscLossParams,
};
use crate::tensor::{
    destroy, embed, kron_vec, partial_trace, DensityMatrix, HilbertLayout, Operator,
};

/// Which dynamical description to integrate.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    /// Kept eigenlevels of the qubit–cavity block, coupled to the readout
    /// resonator through Jσ_z·b†b.
    Full,
    /// Reduced {G, E} block with Jσ_x′·b†b.
    TwoLevel,
    /// Reduced block at ω_eff = 0: the pointer basis is stationary.
    QndLimit,
    /// Reduced block with the readout coupling removed.
    NullJ,
}

impl ModelKind {
    fn is_reduced(self) -> bool {
        !matches!(self, ModelKind::Full)
    }
}

/// Initial state of the composite, before the drive is switched on. The
/// readout resonator starts in vacuum except for the `custom` variant.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum InitialState {
    /// Exact ground level of the block. In the reduced models this is |G⟩.
    ExactGround,
    /// Adiabatic ground approximant, projected onto the kept levels. In the
    /// reduced models it coincides with `exact_ground`.
    ApproxGround,
    /// σ_x′ eigenstate: `sign = +1` is (|G⟩+|E⟩)/√2 = |R⟩|α⟩ and
    /// `sign = -1` is (|E⟩−|G⟩)/√2 = |L⟩|−α⟩.
    SigmaXPrimeEigenstate { sign: i8 },
    /// Explicit block amplitudes (re, im pairs on the lowest two levels)
    /// with a coherent readout mode.
    Custom {
        usc: [f64; 4],
        resonator_alpha: [f64; 2],
    },
}

/// Truncation cuts: `n_c` bare cavity levels feed the block
/// diagonalization, `n_keep` of its eigenlevels are retained, and the
/// readout mode carries `n_b` levels.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HilbertCuts {
    pub n_c: usize,
    pub n_keep: usize,
    pub n_b: usize,
}

fn default_rtol() -> f64 {
    DEFAULT_RTOL
}

fn default_atol() -> f64 {
    DEFAULT_ATOL
}

/// Output grid: `outputs` uniform intervals from 0 to `t_end` (ns), with
/// integrator tolerances. `t_end = 0` requests a static, single-sample run.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TimeSpec {
    pub t_end: f64,
    pub outputs: usize,
    #[serde(default = "default_rtol")]
    pub rtol: f64,
    #[serde(default = "default_atol")]
    pub atol: f64,
}

/// Which reduced state a requested Q function resolves.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QFuncTarget {
    /// Cavity reduction of the block state, lifted back to the bare basis.
    /// Requires the full model.
    UscCavity,
    /// Readout-mode reductions of the two conditional states at the final
    /// time.
    Readout,
}

/// Husimi grid request: a centered square of half-width `half_width` with
/// `points` nodes per axis.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QFuncRequest {
    pub target: QFuncTarget,
    pub half_width: f64,
    pub points: usize,
}

/// Static ground-fidelity scan: for each coupling ratio g/ω_r, the
/// perturbative infidelity over a uniform ω_q range.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InfidelityScan {
    pub coupling_ratios: Vec<f64>,
    pub omega_q_range: [f64; 2],
    pub points: usize,
}

/// Derived quantities to compute beyond the always-on observable series.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MetricsRequest {
    /// Per-time entanglement negativity across the block/readout cut.
    pub negativity: bool,
    /// Per-time discord with measurements on the block. Reduced models only.
    pub discord: bool,
    /// Also integrate the reduced twin and report the branch-level
    /// comparison. On a reduced scenario the run is compared against itself,
    /// so only the analytic columns carry content.
    pub compare_two_level: bool,
    /// Settling time for the comparison's late-time deviation columns;
    /// defaults to half the run.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub settle_time: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub qfunc: Option<QFuncRequest>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub infidelity_scan: Option<InfidelityScan>,
}

/// Field-by-field overrides for a scale that fits on a desk: smaller cuts
/// and a Kerr working point rescaled so the latched photon numbers shrink
/// while the branch structure survives.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DeskOverrides {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub chi: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub f: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub j: Option<f64>,
    /// Quadrature amplitudes shrink with the rescale, so a blur chosen
    /// against the paper-size lobes must shrink with them.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sigma: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub omega_q: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub omega_eff: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub n_c: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub n_keep: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub n_b: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub t_end: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub outputs: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub qfunc_half_width: Option<f64>,
}

/// One complete run description. All frequencies and rates are rad/ns;
/// times are ns.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub name: String,
    /// Human-readable echo of the parameter list this scenario realizes;
    /// reproduced verbatim in emitted metadata.
    pub caption: String,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub notes: Vec<String>,
    pub model: ModelKind,
    /// Direct ω_eff for reduced-model scans; `None` derives
    /// ω_q·e^{−2α²} from the block parameters.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub omega_eff: Option<f64>,
    /// Coarse-graining width of the quadrature measurement: 0 is the sharp
    /// split, `inf` erases the outcome.
    pub sigma: f64,
    pub rabi: RabiParams,
    pub resonator: ResonatorParams,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub loss: Option<UscLossParams>,
    pub cuts: HilbertCuts,
    pub time: TimeSpec,
    pub initial: InitialState,
    #[serde(default)]
    pub metrics: MetricsRequest,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub desk: Option<DeskOverrides>,
}

impl Scenario {
    /// Reject configurations the solvers would either refuse later or,
    /// worse, silently misinterpret.
    pub fn validate(&self) -> Result<()> {
        let cfg = |m: String| Err(Error::Config(m));
        if self.name.is_empty() {
            return cfg("scenario name must be non-empty".into());
        }
        if self.caption.is_empty() {
            return cfg(format!("scenario `{}` lacks a caption", self.name));
        }
        self.rabi
            .validated()
            .and(self.resonator.validated())
            .map_err(|e| Error::Config(format!("scenario `{}`: {e}", self.name)))?;
        if let Some(l) = self.loss {
            l.validated()
                .map_err(|e| Error::Config(format!("scenario `{}`: {e}", self.name)))?;
        }
        if let Some(w) = self.omega_eff {
            if !w.is_finite() || w < 0.0 {
                return cfg(format!("omega_eff = {w} must be a nonnegative frequency"));
            }
        }
        if self.sigma.is_nan() || self.sigma < 0.0 {
            return cfg(format!(
                "sigma = {} must be 0 (sharp), positive, or inf",
                self.sigma
            ));
        }
        if self.cuts.n_b < 2 {
            return cfg("the readout mode needs at least 2 levels".into());
        }
        if self.model == ModelKind::Full {
            // DressedBasis enforces the detailed constraints; fail fast on
            // the obvious ones so the message names the scenario.
            if self.cuts.n_keep < 2 || self.cuts.n_keep % 2 != 0 {
                return cfg(format!(
                    "n_keep = {} must be a positive even number",
                    self.cuts.n_keep
                ));
            }
            if self.cuts.n_keep > 2 * self.cuts.n_c {
                return cfg(format!(
                    "n_keep = {} exceeds the 2·n_c = {} diagonalized levels",
                    self.cuts.n_keep,
                    2 * self.cuts.n_c
                ));
            }
        }
        if !(self.time.t_end >= 0.0) || !self.time.t_end.is_finite() {
            return cfg(format!("t_end = {} must be a finite time", self.time.t_end));
        }
        if self.time.t_end > 0.0 && self.time.outputs == 0 {
            return cfg("a dynamical run needs at least one output interval".into());
        }
        if !(self.time.rtol > 0.0) || !(self.time.atol > 0.0) {
            return cfg("integrator tolerances must be positive".into());
        }
        match &self.initial {
            InitialState::SigmaXPrimeEigenstate { sign } => {
                if *sign != 1 && *sign != -1 {
                    return cfg(format!("sigma_x' eigenstate sign {sign} must be ±1"));
                }
            }
            InitialState::Custom { usc, .. } => {
                let norm2: f64 = usc.iter().map(|c| c * c).sum();
                if norm2 <= 0.0 || !norm2.is_finite() {
                    return cfg("custom block amplitudes must have positive norm".into());
                }
            }
            _ => {}
        }
        if self.metrics.discord && !self.model.is_reduced() {
            return cfg(
                "the discord series measures a two-level block; use a reduced model".into(),
            );
        }
        if let Some(q) = &self.metrics.qfunc {
            if !(q.half_width > 0.0) || q.points < 2 {
                return cfg(format!(
                    "Q grid needs half_width > 0 and ≥ 2 points, got {} and {}",
                    q.half_width, q.points
                ));
            }
            if q.target == QFuncTarget::UscCavity && self.model != ModelKind::Full {
                return cfg("resolving the block cavity requires the full model".into());
            }
        }
        if let Some(scan) = &self.metrics.infidelity_scan {
            if scan.coupling_ratios.is_empty() {
                return cfg("infidelity scan needs at least one coupling ratio".into());
            }
            for &r in &scan.coupling_ratios {
                if !(r > 0.0) || !r.is_finite() {
                    return cfg(format!("coupling ratio {r} must be positive"));
                }
            }
            let [lo, hi] = scan.omega_q_range;
            if !(lo >= 0.0) || !(hi > lo) || scan.points < 2 {
                return cfg(format!(
                    "infidelity scan range [{lo}, {hi}] with {} points is not usable",
                    scan.points
                ));
            }
        }
        if let Some(w) = self.desk.as_ref().and_then(|d| d.omega_eff) {
            if !w.is_finite() || w < 0.0 {
                return cfg(format!("desk omega_eff = {w} must be nonnegative"));
            }
        }
        Ok(())
    }

    /// The coarse-graining kernel encoded by `sigma`.
    pub fn coarse_grain(&self) -> Result<CoarseGrain> {
        if self.sigma == 0.0 {
            Ok(CoarseGrain::Zero)
        } else if self.sigma == f64::INFINITY {
            Ok(CoarseGrain::Infinite)
        } else if self.sigma > 0.0 && self.sigma.is_finite() {
            CoarseGrain::finite(self.sigma)
        } else {
            Err(Error::Config(format!(
                "sigma = {} must be 0, positive, or inf",
                self.sigma
            )))
        }
    }

    /// Reduced-model parameters after the model-kind adjustments.
    pub fn two_level(&self) -> TwoLevelParams {
        let mut tl = effective_two_level(&self.rabi, self.resonator.j);
        if let Some(w) = self.omega_eff {
            tl.omega_eff = w;
        }
        match self.model {
            ModelKind::QndLimit => tl.omega_eff = 0.0,
            ModelKind::NullJ => tl.j = 0.0,
            _ => {}
        }
        tl
    }

    /// Resonator parameters after the model-kind adjustments.
    pub fn resonator_effective(&self) -> ResonatorParams {
        let mut np = self.resonator;
        if self.model == ModelKind::NullJ {
            np.j = 0.0;
        }
        np
    }

    /// Apply the desk-scale override block, if any. The returned scenario
    /// records the switch in its notes.
    pub fn desk_scaled(&self) -> Scenario {
        let mut s = self.clone();
        let Some(d) = self.desk.clone() else {
            return s;
        };
        if let Some(v) = d.chi {
            s.resonator.chi = v;
        }
        if let Some(v) = d.f {
            s.resonator.f = v;
        }
        if let Some(v) = d.j {
            s.resonator.j = v;
        }
        if let Some(v) = d.sigma {
            s.sigma = v;
        }
        if let Some(v) = d.omega_q {
            s.rabi.omega_q = v;
        }
        if let Some(v) = d.omega_eff {
            s.omega_eff = Some(v);
        }
        if let Some(v) = d.n_c {
            s.cuts.n_c = v;
        }
        if let Some(v) = d.n_keep {
            s.cuts.n_keep = v;
        }
        if let Some(v) = d.n_b {
            s.cuts.n_b = v;
        }
        if let Some(v) = d.t_end {
            s.time.t_end = v;
        }
        if let Some(v) = d.outputs {
            s.time.outputs = v;
        }
        if let (Some(hw), Some(q)) = (d.qfunc_half_width, s.metrics.qfunc.as_mut()) {
            q.half_width = hw;
        }
        s.notes.push("desk-scale overrides applied".into());
        s
    }
}

/// Parse a scenario from TOML text.
pub fn from_toml(text: &str) -> Result<Scenario> {
    let s: Scenario = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
    s.validate()?;
    Ok(s)
}

/// Serialize a scenario to TOML. Round-trips through [`from_toml`] bitwise.
pub fn to_toml(s: &Scenario) -> Result<String> {
    toml::to_string_pretty(s).map_err(|e| Error::Config(e.to_string()))
}

const PRESET_SOURCES: &[(&str, &str)] = &[
    (
        "fig1",
        include_str!(concat!(env!("CARGO_MANIFEST_DIR"), "/../../presets/fig1.toml")),
    ),
    (
        "fig2",
        include_str!(concat!(env!("CARGO_MANIFEST_DIR"), "/../../presets/fig2.toml")),
    ),
    (
        "fig3",
        include_str!(concat!(env!("CARGO_MANIFEST_DIR"), "/../../presets/fig3.toml")),
    ),
    (
        "fig4",
        include_str!(concat!(env!("CARGO_MANIFEST_DIR"), "/../../presets/fig4.toml")),
    ),
    (
        "fig5",
        include_str!(concat!(env!("CARGO_MANIFEST_DIR"), "/../../presets/fig5.toml")),
    ),
    (
        "fig6",
        include_str!(concat!(env!("CARGO_MANIFEST_DIR"), "/../../presets/fig6.toml")),
    ),
    (
        "fig7",
        include_str!(concat!(env!("CARGO_MANIFEST_DIR"), "/../../presets/fig7.toml")),
    ),
    (
        "fig8",
        include_str!(concat!(env!("CARGO_MANIFEST_DIR"), "/../../presets/fig8.toml")),
    ),
    (
        "fig9",
        include_str!(concat!(env!("CARGO_MANIFEST_DIR"), "/../../presets/fig9.toml")),
    ),
    (
        "fig10",
        include_str!(concat!(env!("CARGO_MANIFEST_DIR"), "/../../presets/fig10.toml")),
    ),
    (
        "fig11",
        include_str!(concat!(env!("CARGO_MANIFEST_DIR"), "/../../presets/fig11.toml")),
    ),
    (
        "fig12",
        include_str!(concat!(env!("CARGO_MANIFEST_DIR"), "/../../presets/fig12.toml")),
    ),
    (
        "fig13",
        include_str!(concat!(env!("CARGO_MANIFEST_DIR"), "/../../presets/fig13.toml")),
    ),
];

/// Names of the built-in presets, in figure order.
pub fn preset_names() -> Vec<&'static str> {
    PRESET_SOURCES.iter().map(|(n, _)| *n).collect()
}

/// Load a built-in preset by name.
pub fn preset(name: &str) -> Result<Scenario> {
    let Some((_, text)) = PRESET_SOURCES.iter().find(|(n, _)| *n == name) else {
        return Err(Error::Config(format!(
            "unknown preset `{name}`; available: {}",
            preset_names().join(", ")
        )));
    };
    from_toml(text)
}

/// Always-on observable series. In reduced models `sigma_z`/`sigma_x` are
/// the primed block operators; in the full model they are the bare qubit
/// operators restricted to the kept levels. `x` is the readout quadrature
/// (b+b†)/2; `x_prime` is the block-cavity quadrature and exists only for
/// the full model.
#[derive(Clone, Debug, Default)]
pub struct ObservableSeries {
    pub times: Vec<f64>,
    pub sigma_z: Vec<f64>,
    pub sigma_x: Vec<f64>,
    pub nb: Vec<f64>,
    pub x: Vec<f64>,
    pub x_prime: Option<Vec<f64>>,
}

/// Conditional composite states at the final time, one per measurement
/// outcome, with the readout mode retained (Lüders update).
#[derive(Clone, Debug)]
pub struct ConditionalReport {
    pub p_ge: f64,
    pub rho_ge: DensityMatrix,
    pub rho_lt: DensityMatrix,
}

/// Husimi grids computed for the requested target, labeled by outcome.
#[derive(Clone, Debug)]
pub struct QFuncReport {
    pub target: QFuncTarget,
    pub grids: Vec<(String, QGrid)>,
}

/// Ground-fidelity scan table: `f[r][k]` is the perturbative infidelity at
/// `coupling_ratios[r]` and `omega_q[k]`, with the rejected-prefactor
/// variant alongside.
#[derive(Clone, Debug)]
pub struct InfidelityTable {
    pub coupling_ratios: Vec<f64>,
    pub omega_q: Vec<f64>,
    pub f: Vec<Vec<f64>>,
    pub f_alt: Vec<Vec<f64>>,
    pub note: &'static str,
}

/// Everything a run produces. The scenario snapshot inside is the one that
/// actually ran (after any desk scaling), so the bundle is self-describing.
#[derive(Clone, Debug)]
pub struct ResultBundle {
    pub scenario: Scenario,
    pub series: ObservableSeries,
    pub branch: BranchSeries,
    pub p_low: Vec<f64>,
    pub conditional: Option<ConditionalReport>,
    pub negativity: Option<Vec<f64>>,
    pub discord: Option<Vec<f64>>,
    pub qfunc: Option<QFuncReport>,
    pub infidelity: Option<InfidelityTable>,
    pub comparison: Option<TwoLevelComparison>,
    pub stats: EvolveStats,
    /// Measured outcome↔block correlation at the final time, derived from
    /// the branch data of this run rather than assumed.
    pub sign_note: String,
    pub warnings: Vec<String>,
}

/// One point of a sweep: the swept value and either its bundle or the
/// error that point produced.
#[derive(Debug)]
pub struct SweepPoint {
    pub value: f64,
    pub outcome: std::result::Result<ResultBundle, String>,
}

/// A one-field sweep. `field` names a scalar scenario field; see
/// [`apply_override`] for the accepted paths.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSpec {
    pub field: String,
    pub values: Vec<f64>,
}

/// Return a copy of `s` with one scalar field replaced. Unknown paths are
/// configuration errors, not silent no-ops.
pub fn apply_override(s: &Scenario, field: &str, value: f64) -> Result<Scenario> {
    let mut out = s.clone();
    match field {
        "sigma" => out.sigma = value,
        "omega_eff" => out.omega_eff = Some(value),
        "rabi.omega_q" => out.rabi.omega_q = value,
        "rabi.g" => out.rabi.g = value,
        "resonator.delta" => out.resonator.delta = value,
        "resonator.chi" => out.resonator.chi = value,
        "resonator.f" => out.resonator.f = value,
        "resonator.kappa" => out.resonator.kappa = value,
        "resonator.j" => out.resonator.j = value,
        "loss.gamma1" => {
            out.loss
                .get_or_insert(UscLossParams {
                    gamma1: 0.0,
                    gamma2: 0.0,
                })
                .gamma1 = value
        }
        "loss.gamma2" => {
            out.loss
                .get_or_insert(UscLossParams {
                    gamma1: 0.0,
                    gamma2: 0.0,
                })
                .gamma2 = value
        }
        "time.t_end" => out.time.t_end = value,
        other => {
            return Err(Error::Config(format!(
                "unknown sweep field `{other}`; supported: sigma, omega_eff, rabi.omega_q, \
                 rabi.g, resonator.{{delta,chi,f,kappa,j}}, loss.{{gamma1,gamma2}}, time.t_end"
            )))
        }
    }
    out.validate()?;
    Ok(out)
}

/// Run one scenario per value of the swept field. Each point is independent
/// — the outcome per value does not depend on the order of `values` — and a
/// failing point is recorded as its error string while the sweep continues.
pub fn run_sweep(s: &Scenario, spec: &SweepSpec, exec: Exec) -> Result<Vec<SweepPoint>> {
    if spec.values.is_empty() {
        return Err(Error::Config("sweep has no values".into()));
    }
    if let Some(v) = spec.values.iter().find(|v| !v.is_finite()) {
        return Err(Error::Config(format!("sweep value {v} is not finite")));
    }
    Ok(spec
        .values
        .iter()
        .map(|&value| SweepPoint {
            value,
            outcome: apply_override(s, &spec.field, value)
                .and_then(|sc| run_scenario(&sc, exec))
                .map_err(|e| e.to_string()),
        })
        .collect())
}

/// Integrate (or, for `t_end = 0`, snapshot) a scenario into a bundle.
pub fn run_scenario(s: &Scenario, exec: Exec) -> Result<ResultBundle> {
    s.validate()?;
    let mut warnings = Vec::new();
    let mut bundle = match s.model {
        ModelKind::Full => run_full(s, exec, &mut warnings)?,
        _ => run_reduced(s, exec, &mut warnings)?,
    };
    if let Some(scan) = &s.metrics.infidelity_scan {
        bundle.infidelity = Some(infidelity_table(&s.rabi, scan));
    }
    bundle.warnings.extend(warnings);
    Ok(bundle)
}

fn infidelity_table(rabi: &RabiParams, scan: &InfidelityScan) -> InfidelityTable {
    let [lo, hi] = scan.omega_q_range;
    let n = scan.points;
    let omega_q: Vec<f64> = (0..n)
        .map(|k| lo + (hi - lo) * k as f64 / (n - 1) as f64)
        .collect();
    let mut f = Vec::with_capacity(scan.coupling_ratios.len());
    let mut f_alt = Vec::with_capacity(scan.coupling_ratios.len());
    let mut note = "";
    for &ratio in &scan.coupling_ratios {
        let mut row = Vec::with_capacity(n);
        let mut row_alt = Vec::with_capacity(n);
        for &wq in &omega_q {
            let p = RabiParams {
                omega_q: wq,
                g: ratio * rabi.omega_r,
                omega_r: rabi.omega_r,
            };
            let series = analysis::infidelity_series(&p);
            note = series.note;
            row.push(series.f);
            row_alt.push(series.f_alt);
        }
        f.push(row);
        f_alt.push(row_alt);
    }
    InfidelityTable {
        coupling_ratios: scan.coupling_ratios.clone(),
        omega_q,
        f,
        f_alt,
        note,
    }
}

/// Gauge the outcome↔block correlation from the run's own final branch
/// data instead of hard-coding a sign convention. The bright lobe is found
/// by photon number: which x̂ sign it latches onto depends on the working
/// point.
fn sign_note(branch: &BranchSeries, obs: &str) -> String {
    let (h, l, nh, nl) = match (
        branch.high.last(),
        branch.low.last(),
        branch.nbar_high.last(),
        branch.nbar_low.last(),
    ) {
        (Some(&h), Some(&l), Some(&nh), Some(&nl)) => (h, l, nh, nl),
        _ => return "no branch data: the conditional split was degenerate".into(),
    };
    let (bright, dim, side, nbar) = if nh >= nl {
        (h, l, "x >= 0", nh)
    } else {
        (l, h, "x < 0", nl)
    };
    if (bright - dim).abs() > 0.05 {
        format!(
            "bright branch (side {side}, nbar = {nbar:.2}) ends with <{obs}> = {bright:+.3} \
             against {dim:+.3} on the dim side: the bright outcome flags the {} side of {obs}",
            if bright > dim { "+1" } else { "-1" }
        )
    } else {
        format!(
            "branches end with <{obs}> = {bright:+.3} (bright) and {dim:+.3} (dim): \
             the outcome does not resolve {obs} in this run"
        )
    }
}

fn integrate(
    s: &Scenario,
    gen: &crate::dynamics::LindbladGenerator,
    rho0: &DensityMatrix,
    exec: Exec,
    monitors: Vec<LeakageMonitor>,
) -> Result<Trajectory> {
    if s.time.t_end == 0.0 {
        return Ok(Trajectory {
            times: vec![0.0],
            states: vec![rho0.clone()],
            stats: EvolveStats::default(),
        });
    }
    let grid = TimeGrid::uniform(0.0, s.time.t_end, s.time.outputs)?
        .with_tolerances(s.time.rtol, s.time.atol)?;
    let opts = EvolveOptions {
        exec,
        monitors,
        ..EvolveOptions::default()
    };
    evolve(gen, rho0, &grid, &opts)
}

/// Normalized block amplitudes for the reduced two-level space, plus the
/// readout-mode amplitude.
fn reduced_initial(s: &Scenario) -> (DVector<C64>, C64) {
    let inv = 1.0 / 2f64.sqrt();
    let mut usc = DVector::<C64>::zeros(2);
    let mut alpha = C64::new(0.0, 0.0);
    match &s.initial {
        InitialState::ExactGround | InitialState::ApproxGround => {
            usc[0] = C64::new(1.0, 0.0);
        }
        InitialState::SigmaXPrimeEigenstate { sign } => {
            // |R⟩|α⟩ = (|G⟩+|E⟩)/√2 carries σ_x′ = +1;
            // |L⟩|−α⟩ = (|E⟩−|G⟩)/√2 carries σ_x′ = −1.
            if *sign > 0 {
                usc[0] = C64::new(inv, 0.0);
                usc[1] = C64::new(inv, 0.0);
            } else {
                usc[0] = C64::new(-inv, 0.0);
                usc[1] = C64::new(inv, 0.0);
            }
        }
        InitialState::Custom {
            usc: amps,
            resonator_alpha,
        } => {
            usc[0] = C64::new(amps[0], amps[1]);
            usc[1] = C64::new(amps[2], amps[3]);
            let norm = usc.norm();
            usc /= C64::new(norm, 0.0);
            alpha = C64::new(resonator_alpha[0], resonator_alpha[1]);
        }
    }
    (usc, alpha)
}

fn run_reduced(s: &Scenario, exec: Exec, warnings: &mut Vec<String>) -> Result<ResultBundle> {
    let n_b = s.cuts.n_b;
    let layout = HilbertLayout::two_level_resonator(n_b);
    let tl = s.two_level();
    let np = s.resonator_effective();
    let loss = s.loss.unwrap_or(UscLossParams {
        gamma1: 0.0,
        gamma2: 0.0,
    });
    let gen = two_level_loss_generator(&tl, &np, &loss, &layout)?;

    let (usc, alpha) = reduced_initial(s);
    let res = crate::tensor::coherent_state(alpha, n_b)?;
    let rho0 = DensityMatrix::from_pure(&kron_vec(&usc, &res), layout.clone())?;

    let traj = integrate(
        s,
        &gen,
        &rho0,
        exec,
        vec![LeakageMonitor { slot: 1, levels: 2 }],
    )?;

    let szp = embed(&crate::models::sigma_z_prime(), &layout, 0)?;
    let sxp = embed(&crate::models::sigma_x_prime(), &layout, 0)?;
    let nb_op = embed(&crate::tensor::number(n_b)?, &layout, 1)?;
    let b = embed(&destroy(n_b)?, &layout, 1)?;
    let x_op = &(&b + &b.adjoint()) * 0.5;

    let mut bundle = assemble(
        s,
        traj,
        exec,
        warnings,
        ObsSet {
            sigma_z: szp,
            sigma_x: sxp.clone(),
            nb: nb_op,
            x: x_op,
            x_prime: None,
            branch_obs: sxp,
            branch_name: "sigma_x'",
        },
    )?;

    if s.metrics.compare_two_level {
        // A reduced scenario compared against itself: the deviation columns
        // vanish by construction and the analytic columns carry the content.
        let settle = s.metrics.settle_time.unwrap_or(0.5 * s.time.t_end);
        bundle.comparison = Some(analysis::two_level_comparison(
            &bundle.branch,
            &bundle.branch,
            &tl,
            settle,
        )?);
    }
    Ok(bundle)
}

/// Initial composite state for the full model: block amplitudes on the kept
/// levels ⊗ a readout-mode state.
fn full_initial(
    s: &Scenario,
    basis: &DressedBasis,
    layout: &HilbertLayout,
    warnings: &mut Vec<String>,
) -> Result<DensityMatrix> {
    let m = basis.n_keep();
    let bare = HilbertLayout::qubit_cavity(basis.n_c());
    let mut alpha = C64::new(0.0, 0.0);
    let (mut coeffs, outside) = match &s.initial {
        InitialState::ExactGround => {
            let mut c = DVector::<C64>::zeros(m);
            c[0] = C64::new(1.0, 0.0);
            (c, 0.0)
        }
        InitialState::ApproxGround => {
            let (g, _) = approx_ground_excited(&s.rabi, &bare)?;
            basis.project(&g)?
        }
        InitialState::SigmaXPrimeEigenstate { sign } => {
            let (e_branch, g_branch) = branch_states(&s.rabi, &bare)?;
            basis.project(if *sign > 0 { &e_branch } else { &g_branch })?
        }
        InitialState::Custom {
            usc,
            resonator_alpha,
        } => {
            let mut c = DVector::<C64>::zeros(m);
            c[0] = C64::new(usc[0], usc[1]);
            c[1] = C64::new(usc[2], usc[3]);
            alpha = C64::new(resonator_alpha[0], resonator_alpha[1]);
            (c, 0.0)
        }
    };
    if outside > 1e-10 {
        warnings.push(format!(
            "initial state lost weight {outside:.3e} outside the {m} kept levels; renormalized"
        ));
    }
    let norm = coeffs.norm();
    if norm <= 0.0 {
        return Err(Error::InvalidState(
            "initial block amplitudes vanish on the kept levels".into(),
        ));
    }
    coeffs /= C64::new(norm, 0.0);
    let res = crate::tensor::coherent_state(alpha, s.cuts.n_b)?;
    DensityMatrix::from_pure(&kron_vec(&coeffs, &res), layout.clone())
}

fn run_full(s: &Scenario, exec: Exec, warnings: &mut Vec<String>) -> Result<ResultBundle> {
    let basis = DressedBasis::new(&s.rabi, s.cuts.n_c, s.cuts.n_keep)?;
    let np = s.resonator_effective();
    let spectra = match s.loss {
        Some(l) => Some(NoiseSpectra::flat(l.gamma1, 0.0, 2.0 * l.gamma2)?),
        None => None,
    };
    let parts = full_model(&basis, &np, s.cuts.n_b, spectra.as_ref().map(|sp| (sp, 0.0)))?;
    let layout = parts.layout.clone();
    let rho0 = full_initial(s, &basis, &layout, warnings)?;

    let traj = integrate(
        s,
        &parts.gen,
        &rho0,
        exec,
        vec![
            LeakageMonitor { slot: 0, levels: 1 },
            LeakageMonitor { slot: 1, levels: 2 },
        ],
    )?;

    // Block-cavity quadrature x̂′ = (X⁺+X⁻)/2, split against the block
    // energies. For the non-degenerate spectrum the static part vanishes by
    // parity, so this is (â+â†)/2 restricted to the kept levels.
    let m = basis.n_keep();
    let usc_layout = HilbertLayout::single("usc", m);
    let e0 = basis.energies()[0];
    let mut h_d = DMatrix::<C64>::zeros(m, m);
    for j in 0..m {
        h_d[(j, j)] = C64::new(basis.energies()[j] - e0, 0.0);
    }
    let dec = analysis::frequency_split(
        &Operator::new(usc_layout.clone(), basis.x_cav().clone())?,
        &Operator::new(usc_layout, h_d)?,
        None,
    )?;
    let x_prime = embed(&dec.x_prime(), &layout, 0)?;

    let n_b = s.cuts.n_b;
    let b = embed(&destroy(n_b)?, &layout, 1)?;
    let x_op = &(&b + &b.adjoint()) * 0.5;

    let mut bundle = assemble(
        s,
        traj,
        exec,
        warnings,
        ObsSet {
            sigma_z: parts.sigma_z.clone(),
            sigma_x: parts.sigma_x,
            nb: parts.nb,
            x: x_op,
            x_prime: Some(x_prime),
            branch_obs: parts.sigma_z,
            branch_name: "sigma_z",
        },
    )?;

    if s.metrics.compare_two_level {
        let mut twin = s.clone();
        twin.model = ModelKind::TwoLevel;
        twin.metrics = MetricsRequest::default();
        twin.name.push_str("+two_level");
        let mut twin_warnings = Vec::new();
        let reduced = run_reduced(&twin, exec, &mut twin_warnings)?;
        warnings.extend(
            twin_warnings
                .into_iter()
                .map(|w| format!("reduced twin: {w}")),
        );
        let settle = s.metrics.settle_time.unwrap_or(0.5 * s.time.t_end);
        bundle.comparison = Some(analysis::two_level_comparison(
            &bundle.branch,
            &reduced.branch,
            &s.two_level(),
            settle,
        )?);
    }
    Ok(bundle)
}

struct ObsSet {
    sigma_z: Operator,
    sigma_x: Operator,
    nb: Operator,
    x: Operator,
    x_prime: Option<Operator>,
    branch_obs: Operator,
    branch_name: &'static str,
}

fn series_of(traj: &Trajectory, op: &Operator) -> Vec<f64> {
    traj.states.iter().map(|st| st.expect(op).re).collect()
}

fn assemble(
    s: &Scenario,
    traj: Trajectory,
    exec: Exec,
    warnings: &mut Vec<String>,
    obs: ObsSet,
) -> Result<ResultBundle> {
    let cg = s.coarse_grain()?;
    let series = ObservableSeries {
        times: traj.times.clone(),
        sigma_z: series_of(&traj, &obs.sigma_z),
        sigma_x: series_of(&traj, &obs.sigma_x),
        nb: series_of(&traj, &obs.nb),
        x: series_of(&traj, &obs.x),
        x_prime: obs.x_prime.as_ref().map(|op| series_of(&traj, op)),
    };

    let branch = match analysis::branch_series(&traj, &obs.branch_obs, 1, exec) {
        Ok(b) => b,
        Err(Error::DegenerateOutcome { p }) => {
            warnings.push(format!(
                "sharp conditional split degenerate (p = {p:.3e}); branch series omitted"
            ));
            BranchSeries::default()
        }
        Err(e) => return Err(e),
    };

    let p_low = low_amplitude_probability(&traj, cg, 1)?;

    let last = traj
        .states
        .last()
        .ok_or_else(|| Error::InvalidState("empty trajectory".into()))?;
    let conditional = match conditional_composite(last, cg, 1) {
        Ok(c) => Some(ConditionalReport {
            p_ge: c.p_ge,
            rho_ge: c.rho_ge,
            rho_lt: c.rho_lt,
        }),
        Err(Error::DegenerateOutcome { p }) => {
            warnings.push(format!(
                "conditioning at t = {:.1} ns degenerate (p = {p:.3e})",
                traj.times.last().copied().unwrap_or(0.0)
            ));
            None
        }
        Err(e) => return Err(e),
    };

    let negativity_series = if s.metrics.negativity {
        Some(
            exec::map(exec, &traj.states, |rho| negativity(rho, 0))
                .into_iter()
                .collect::<Result<Vec<f64>>>()?,
        )
    } else {
        None
    };

    let discord_series = if s.metrics.discord {
        let opts = DiscordOptions {
            exec,
            ..DiscordOptions::default()
        };
        let mut vals = Vec::with_capacity(traj.states.len());
        for rho in &traj.states {
            vals.push(quantum_discord(rho, &opts)?.discord);
        }
        Some(vals)
    } else {
        None
    };

    let qfunc = match &s.metrics.qfunc {
        Some(req) => Some(qfunc_report(s, req, last, &conditional, exec)?),
        None => None,
    };

    let sign = sign_note(&branch, obs.branch_name);
    Ok(ResultBundle {
        scenario: s.clone(),
        series,
        branch,
        p_low,
        conditional,
        negativity: negativity_series,
        discord: discord_series,
        qfunc,
        infidelity: None,
        comparison: None,
        stats: traj.stats,
        sign_note: sign,
        warnings: Vec::new(),
    })
}

fn qfunc_report(
    s: &Scenario,
    req: &QFuncRequest,
    last: &DensityMatrix,
    conditional: &Option<ConditionalReport>,
    exec: Exec,
) -> Result<QFuncReport> {
    let spec = QGridSpec::centered(req.half_width, req.points)?;
    let grids = match req.target {
        QFuncTarget::UscCavity => {
            // Lift the kept-level reduction back to the bare qubit⊗cavity
            // basis through the eigenvector isometry, then drop the qubit.
            let basis = DressedBasis::new(&s.rabi, s.cuts.n_c, s.cuts.n_keep)?;
            let rho_d = partial_trace(last, &[0])?;
            let v = basis.states();
            let lifted = v * rho_d.op().data() * v.adjoint();
            let bare = DensityMatrix::with_trace_tol(
                Operator::new(HilbertLayout::qubit_cavity(basis.n_c()), lifted)?,
                last.trace_tol(),
            )?;
            let cav = partial_trace(&bare, &[1])?;
            vec![("cavity".to_string(), q_function(&cav, &spec, exec)?)]
        }
        QFuncTarget::Readout => {
            let Some(c) = conditional else {
                return Err(Error::DegenerateOutcome { p: 0.0 });
            };
            let ge = partial_trace(&c.rho_ge, &[1])?;
            let lt = partial_trace(&c.rho_lt, &[1])?;
            vec![
                ("x_ge".to_string(), q_function(&ge, &spec, exec)?),
                ("x_lt".to_string(), q_function(&lt, &spec, exec)?),
            ]
        }
    };
    Ok(QFuncReport {
        target: req.target,
        grids,
    })
}
