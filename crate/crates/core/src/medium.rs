//! Atomic level schemes, optical drives, and magnetic-field calibration.
//!
//! Two excitation topologies are supported:
//!
//! * a single-beam Λ scheme, where the σ⁺/σ⁻ components of one linearly
//!   polarized probe couple the two ground Zeeman sublevels |1⟩, |3⟩ to a
//!   common excited state |2⟩;
//! * a wave-mixing double-Λ scheme, where a second optical field couples the
//!   same ground sublevels to a second excited state |2'⟩, so that both Λs
//!   share the ground-state Zeeman coherence ρ₁₃.
//!
//! All frequencies in this crate are ordinary frequencies (ν = ω/2π) in Hz;
//! solvers convert to angular units internally.

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Default gyromagnetic conversion in Hz of Zeeman shift per nT of field,
/// back-derived from the 500 nT ↔ 3 kHz calibration anchor. The textbook
/// ⁸⁷Rb F=2 value is ≈ 7 Hz/nT; pass a custom value to use it instead.
pub const DEFAULT_GAMMA_HZ_PER_NT: f64 = 6.0;

/// Default excited-state population decay Γ/2π in Hz (⁸⁷Rb D1 linewidth).
pub const DEFAULT_EXCITED_DECAY_HZ: f64 = 5.7e6;

/// Default intrinsic ground-state Zeeman decoherence γ₀/2π in Hz.
pub const DEFAULT_GROUND_DECOHERENCE_HZ: f64 = 10.0;

/// γ₀/Γ ratio above which a configuration is flagged as physically dubious.
pub const DECOHERENCE_WARN_RATIO: f64 = 0.01;

#[derive(Debug, Error, PartialEq)]
pub enum MediumError {
    #[error("{name} must be nonnegative, got {value}")]
    NegativeRate { name: &'static str, value: f64 },
    #[error("{name} must be finite, got {value}")]
    NonFiniteRate { name: &'static str, value: f64 },
    #[error("single_lambda scheme does not accept a wave-mixing drive")]
    WaveMixingDriveOnSingleLambda,
    #[error("wave_mixing scheme requires a wave-mixing drive")]
    MissingWaveMixingDrive,
    #[error("drive role mismatch: expected {expected:?}, got {got:?}")]
    DriveRoleMismatch { expected: DriveRole, got: DriveRole },
    #[error("reservoir_fraction must lie in [0, 1), got {0}")]
    BadReservoirFraction(f64),
    #[error("relative dipole weights must be positive and finite, got {0}")]
    BadDipoleWeight(f64),
    #[error("zeeman calibration gamma must be positive, got {0}")]
    BadCalibration(f64),
}

/// Which optical field a drive or branch belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DriveRole {
    Probe,
    WaveMixing,
}

/// Circular polarization component of a drive.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Polarization {
    SigmaPlus,
    SigmaMinus,
}

/// One optical field: Rabi frequency per circular branch plus the
/// one-photon detuning, all as ν = ω/2π in Hz.
///
/// Optical intensities from experiments are carried as metadata only; the
/// intensity → Ω conversion is never applied by the simulator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FieldDrive {
    pub role: DriveRole,
    pub rabi_plus_hz: f64,
    pub rabi_minus_hz: f64,
    pub detuning_hz: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub intensity_label_uw_per_cm2: Option<f64>,
}

impl FieldDrive {
    pub fn new(role: DriveRole, rabi_plus_hz: f64, rabi_minus_hz: f64, detuning_hz: f64) -> Self {
        Self {
            role,
            rabi_plus_hz,
            rabi_minus_hz,
            detuning_hz,
            intensity_label_uw_per_cm2: None,
        }
    }

    /// Symmetric drive with equal σ⁺/σ⁻ Rabi frequencies.
    pub fn symmetric(role: DriveRole, rabi_hz: f64, detuning_hz: f64) -> Self {
        Self::new(role, rabi_hz, rabi_hz, detuning_hz)
    }

    pub fn rabi_hz(&self, pol: Polarization) -> f64 {
        match pol {
            Polarization::SigmaPlus => self.rabi_plus_hz,
            Polarization::SigmaMinus => self.rabi_minus_hz,
        }
    }

    fn validate(&self, expected: DriveRole) -> Result<(), MediumError> {
        if self.role != expected {
            return Err(MediumError::DriveRoleMismatch {
                expected,
                got: self.role,
            });
        }
        for (name, v) in [
            ("rabi_plus_hz", self.rabi_plus_hz),
            ("rabi_minus_hz", self.rabi_minus_hz),
        ] {
            if !v.is_finite() {
                return Err(MediumError::NonFiniteRate { name, value: v });
            }
            if v < 0.0 {
                return Err(MediumError::NegativeRate { name, value: v });
            }
        }
        if !self.detuning_hz.is_finite() {
            return Err(MediumError::NonFiniteRate {
                name: "detuning_hz",
                value: self.detuning_hz,
            });
        }
        Ok(())
    }
}

/// Magnetic-field → Zeeman-shift conversion, δ_B = γ·B with γ in Hz/nT.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ZeemanCalibration {
    gamma_hz_per_nt: f64,
}

impl ZeemanCalibration {
    pub fn new(gamma_hz_per_nt: f64) -> Result<Self, MediumError> {
        if !(gamma_hz_per_nt > 0.0) || !gamma_hz_per_nt.is_finite() {
            return Err(MediumError::BadCalibration(gamma_hz_per_nt));
        }
        Ok(Self { gamma_hz_per_nt })
    }

    pub fn gamma_hz_per_nt(&self) -> f64 {
        self.gamma_hz_per_nt
    }
}

impl Default for ZeemanCalibration {
    fn default() -> Self {
        Self {
            gamma_hz_per_nt: DEFAULT_GAMMA_HZ_PER_NT,
        }
    }
}

/// δ_B = γ·B. Linear and odd in the applied field; the 500 nT ↔ 3 kHz
/// anchor holds exactly with the default calibration.
pub fn zeeman_shift(b_field_nt: f64, cal: &ZeemanCalibration) -> f64 {
    cal.gamma_hz_per_nt * b_field_nt
}

/// One coupling |lower⟩ ↔ |upper⟩ driven by a circular component of a field.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Branch {
    pub role: DriveRole,
    pub polarization: Polarization,
    pub lower: usize,
    pub upper: usize,
    pub dipole: f64,
}

/// Scheme topology selector for [`make_scheme`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SchemeKind {
    SingleLambda,
    WaveMixing,
}

/// Rates and drives required to assemble a [`LevelScheme`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SchemeParams {
    pub excited_decay_hz: f64,
    pub ground_decoherence_hz: f64,
    pub probe: FieldDrive,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub wave_mixing: Option<FieldDrive>,
    /// Fraction of the total population trapped in the non-accessed
    /// hyperfine manifold; 0 means all atoms participate.
    #[serde(default)]
    pub reservoir_fraction: f64,
    /// Coupling weights for [probe σ⁺, probe σ⁻, WM σ⁺, WM σ⁻].
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub relative_dipoles: Option<[f64; 4]>,
}

impl SchemeParams {
    pub fn new(excited_decay_hz: f64, ground_decoherence_hz: f64, probe: FieldDrive) -> Self {
        Self {
            excited_decay_hz,
            ground_decoherence_hz,
            probe,
            wave_mixing: None,
            reservoir_fraction: 0.0,
            relative_dipoles: None,
        }
    }

    pub fn with_wave_mixing(mut self, wm: FieldDrive) -> Self {
        self.wave_mixing = Some(wm);
        self
    }

    pub fn with_reservoir_fraction(mut self, f: f64) -> Self {
        self.reservoir_fraction = f;
        self
    }
}

/// States, couplings and relaxation rates of one excitation scheme.
///
/// State layout (fixed by construction):
///
/// ```text
/// index 0: ground |1⟩ (σ⁺ lower)      Zeeman energy +δ_B/2
/// index 1: excited |2⟩ (probe upper)
/// index 2: ground |3⟩ (σ⁻ lower)      Zeeman energy −δ_B/2
/// index 3: excited |2'⟩ (WM upper)    — wave-mixing scheme only
/// index 4: population reservoir       — wave-mixing scheme only
/// ```
///
/// The ±δ_B/2 assignment together with the ellipsometry sign convention in
/// `optics` makes positive applied field produce positive balanced-detector
/// voltage; that polarity is pinned by a test vector.
#[derive(Debug, Clone, PartialEq)]
pub struct LevelScheme {
    kind: SchemeKind,
    n_states: usize,
    excited_decay_hz: f64,
    ground_decoherence_hz: f64,
    branches: Vec<Branch>,
    zeeman_weights: Vec<f64>,
    equilibrium_populations: Vec<f64>,
    reservoir_fraction: f64,
    warnings: Vec<String>,
}

/// Ground sublevel indices shared by all schemes.
pub const GROUND_PLUS: usize = 0;
pub const PROBE_EXCITED: usize = 1;
pub const GROUND_MINUS: usize = 2;
pub const WM_EXCITED: usize = 3;
pub const RESERVOIR: usize = 4;

/// Builds a validated [`LevelScheme`] for the requested topology.
///
/// `single_lambda` produces the 3-state Λ with two probe branches;
/// `wave_mixing` produces the 5-state double-Λ (two excited states sharing
/// the ground pair, plus the population reservoir). A wave-mixing drive
/// supplied to `single_lambda` is rejected, as are negative rates.
pub fn make_scheme(kind: SchemeKind, params: &SchemeParams) -> Result<LevelScheme, MediumError> {
    for (name, v) in [
        ("excited_decay_hz", params.excited_decay_hz),
        ("ground_decoherence_hz", params.ground_decoherence_hz),
    ] {
        if !v.is_finite() {
            return Err(MediumError::NonFiniteRate { name, value: v });
        }
        if v < 0.0 {
            return Err(MediumError::NegativeRate { name, value: v });
        }
    }
    params.probe.validate(DriveRole::Probe)?;
    if let Some(wm) = &params.wave_mixing {
        wm.validate(DriveRole::WaveMixing)?;
    }
    if !(0.0..1.0).contains(&params.reservoir_fraction) {
        return Err(MediumError::BadReservoirFraction(params.reservoir_fraction));
    }
    let dipoles = params.relative_dipoles.unwrap_or([1.0; 4]);
    for d in dipoles {
        if !(d > 0.0) || !d.is_finite() {
            return Err(MediumError::BadDipoleWeight(d));
        }
    }

    let mut warnings = Vec::new();
    if params.excited_decay_hz > 0.0
        && params.ground_decoherence_hz > DECOHERENCE_WARN_RATIO * params.excited_decay_hz
    {
        warnings.push(format!(
            "ground_decoherence_hz = {} is not small compared to excited_decay_hz = {}; \
             the scheme is accepted but is physically unusual",
            params.ground_decoherence_hz, params.excited_decay_hz
        ));
    }

    let (n_states, branches, reservoir_fraction) = match kind {
        SchemeKind::SingleLambda => {
            if params.wave_mixing.is_some() {
                return Err(MediumError::WaveMixingDriveOnSingleLambda);
            }
            let branches = vec![
                Branch {
                    role: DriveRole::Probe,
                    polarization: Polarization::SigmaPlus,
                    lower: GROUND_PLUS,
                    upper: PROBE_EXCITED,
                    dipole: dipoles[0],
                },
                Branch {
                    role: DriveRole::Probe,
                    polarization: Polarization::SigmaMinus,
                    lower: GROUND_MINUS,
                    upper: PROBE_EXCITED,
                    dipole: dipoles[1],
                },
            ];
            (3, branches, 0.0)
        }
        SchemeKind::WaveMixing => {
            if params.wave_mixing.is_none() {
                return Err(MediumError::MissingWaveMixingDrive);
            }
            let branches = vec![
                Branch {
                    role: DriveRole::Probe,
                    polarization: Polarization::SigmaPlus,
                    lower: GROUND_PLUS,
                    upper: PROBE_EXCITED,
                    dipole: dipoles[0],
                },
                Branch {
                    role: DriveRole::Probe,
                    polarization: Polarization::SigmaMinus,
                    lower: GROUND_MINUS,
                    upper: PROBE_EXCITED,
                    dipole: dipoles[1],
                },
                Branch {
                    role: DriveRole::WaveMixing,
                    polarization: Polarization::SigmaPlus,
                    lower: GROUND_PLUS,
                    upper: WM_EXCITED,
                    dipole: dipoles[2],
                },
                Branch {
                    role: DriveRole::WaveMixing,
                    polarization: Polarization::SigmaMinus,
                    lower: GROUND_MINUS,
                    upper: WM_EXCITED,
                    dipole: dipoles[3],
                },
            ];
            (5, branches, params.reservoir_fraction)
        }
    };

    let mut zeeman_weights = vec![0.0; n_states];
    zeeman_weights[GROUND_PLUS] = 0.5;
    zeeman_weights[GROUND_MINUS] = -0.5;

    let mut equilibrium_populations = vec![0.0; n_states];
    equilibrium_populations[GROUND_PLUS] = (1.0 - reservoir_fraction) / 2.0;
    equilibrium_populations[GROUND_MINUS] = (1.0 - reservoir_fraction) / 2.0;
    if n_states > RESERVOIR {
        equilibrium_populations[RESERVOIR] = reservoir_fraction;
    }

    Ok(LevelScheme {
        kind,
        n_states,
        excited_decay_hz: params.excited_decay_hz,
        ground_decoherence_hz: params.ground_decoherence_hz,
        branches,
        zeeman_weights,
        equilibrium_populations,
        reservoir_fraction,
        warnings,
    })
}

impl LevelScheme {
    pub fn kind(&self) -> SchemeKind {
        self.kind
    }

    pub fn n_states(&self) -> usize {
        self.n_states
    }

    pub fn excited_decay_hz(&self) -> f64 {
        self.excited_decay_hz
    }

    pub fn ground_decoherence_hz(&self) -> f64 {
        self.ground_decoherence_hz
    }

    pub fn branches(&self) -> &[Branch] {
        &self.branches
    }

    /// Per-state coefficient of δ_B in the rotating-frame Hamiltonian.
    pub fn zeeman_weights(&self) -> &[f64] {
        &self.zeeman_weights
    }

    /// Diagonal of the unpolarized equilibrium mixture the ground-state
    /// repopulation term relaxes toward.
    pub fn equilibrium_populations(&self) -> &[f64] {
        &self.equilibrium_populations
    }

    pub fn reservoir_fraction(&self) -> f64 {
        self.reservoir_fraction
    }

    /// Non-fatal validation notes (e.g. γ₀ not ≪ Γ).
    pub fn warnings(&self) -> &[String] {
        &self.warnings
    }

    /// Excited-state indices, each paired with the ground states it decays to.
    pub fn decay_channels(&self) -> Vec<(usize, Vec<usize>)> {
        let mut uppers: Vec<usize> = self.branches.iter().map(|b| b.upper).collect();
        uppers.sort_unstable();
        uppers.dedup();
        uppers
            .into_iter()
            .map(|u| {
                let mut lowers: Vec<usize> = self
                    .branches
                    .iter()
                    .filter(|b| b.upper == u)
                    .map(|b| b.lower)
                    .collect();
                lowers.sort_unstable();
                lowers.dedup();
                (u, lowers)
            })
            .collect()
    }

    pub fn branches_for(&self, role: DriveRole) -> impl Iterator<Item = &Branch> {
        self.branches.iter().filter(move |b| b.role == role)
    }

    pub fn branch(&self, role: DriveRole, pol: Polarization) -> Option<&Branch> {
        self.branches
            .iter()
            .find(|b| b.role == role && b.polarization == pol)
    }

    /// Checks the structural invariants; used by property tests.
    pub fn check_invariants(&self) -> Result<(), String> {
        for b in &self.branches {
            if b.lower >= self.n_states || b.upper >= self.n_states {
                return Err(format!("branch {:?} references invalid state", b));
            }
            if b.lower == b.upper {
                return Err("branch couples a state to itself".into());
            }
        }
        for role in [DriveRole::Probe, DriveRole::WaveMixing] {
            let of_role: Vec<&Branch> = self.branches_for(role).collect();
            if of_role.is_empty() {
                continue;
            }
            if of_role.len() != 2 {
                return Err(format!("{role:?} must have exactly two branches"));
            }
            if of_role[0].upper != of_role[1].upper {
                return Err(format!("{role:?} branches must share the excited state"));
            }
            if of_role[0].lower == of_role[1].lower {
                return Err(format!("{role:?} branches must couple distinct grounds"));
            }
        }
        if self.excited_decay_hz < 0.0 || self.ground_decoherence_hz < 0.0 {
            return Err("negative relaxation rate".into());
        }
        let pop_sum: f64 = self.equilibrium_populations.iter().sum();
        if (pop_sum - 1.0).abs() > 1e-12 {
            return Err(format!("equilibrium populations sum to {pop_sum}"));
        }
        Ok(())
    }
}
