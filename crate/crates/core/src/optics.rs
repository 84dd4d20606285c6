//! Circular susceptibilities, Faraday rotation, and the balanced polarimeter.
//!
//! The medium is treated as optically thin: the susceptibilities are
//! evaluated once from the density matrix and the rotation accumulates
//! linearly over the cell, per the standard ellipsometry formulas
//!
//! ```text
//! φ  = (πL/λ)·Re(χ₋ − χ₊)/2        (rotation)
//! ε  = (πL/λ)·Im(χ₋ − χ₊)/2        (ellipticity)
//! T± = exp(−(2πL/λ)·Im χ±)          (circular transmissions)
//! V  = g·I₀·T̄·sin 2φ               (balanced detector)
//! ```
//!
//! Sign convention: with the state layout of [`crate::medium`], positive
//! applied field (positive δ_B) produces positive detector voltage. The
//! polarity is pinned by a test vector since either choice is physical.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;
use thiserror::Error;

use crate::dynamics::DensityMatrix;
use crate::medium::{DriveRole, FieldDrive, LevelScheme, Polarization};

/// Suggested probe Rabi frequency (Hz) for perturbative read-out when the
/// actual probe amplitude vanishes on a branch.
pub const PERTURBATIVE_PROBE_RABI_HZ: f64 = 1.0e3;

#[derive(Debug, Error, PartialEq)]
pub enum OpticsError {
    #[error(
        "probe Rabi frequency on the {0:?} branch is zero; susceptibilities are undefined. \
         Use a perturbative probe instead (suggested Ω/2π = {PERTURBATIVE_PROBE_RABI_HZ} Hz)"
    )]
    ZeroProbeRabi(Polarization),
    #[error("scheme has no probe branch for {0:?}")]
    MissingProbeBranch(Polarization),
    #[error("density matrix dimension {got} does not match scheme dimension {expected}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("susceptibilities must be finite")]
    NonFiniteSusceptibility,
    #[error("{name} must be positive, got {value}")]
    BadConfig { name: &'static str, value: f64 },
}

/// Optical response of the cell at the probe frequency.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OpticalResponse {
    pub chi_plus: Complex64,
    pub chi_minus: Complex64,
    pub rotation_angle_rad: f64,
    pub ellipticity_rad: f64,
    pub transmission_plus: f64,
    pub transmission_minus: f64,
}

/// Cell and balanced-detector geometry.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PolarimeterConfig {
    pub cell_length_m: f64,
    pub wavelength_m: f64,
    /// Probe intensity at the detector in arbitrary units.
    pub input_intensity: f64,
    /// Detector gain in volts per intensity unit.
    pub detector_gain: f64,
    /// Analyzer setting; π/4 is the balanced point assumed by the
    /// difference signal.
    pub analyzer_angle_rad: f64,
}

impl PolarimeterConfig {
    pub fn new(cell_length_m: f64, wavelength_m: f64) -> Result<Self, OpticsError> {
        let cfg = Self {
            cell_length_m,
            wavelength_m,
            input_intensity: 1.0,
            detector_gain: 1.0,
            analyzer_angle_rad: PI / 4.0,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), OpticsError> {
        for (name, value) in [
            ("cell_length_m", self.cell_length_m),
            ("wavelength_m", self.wavelength_m),
            ("detector_gain", self.detector_gain),
        ] {
            if !(value > 0.0) || !value.is_finite() {
                return Err(OpticsError::BadConfig { name, value });
            }
        }
        Ok(())
    }
}

impl Default for PolarimeterConfig {
    /// 5 cm cell read out at the Rb D1 wavelength.
    fn default() -> Self {
        Self {
            cell_length_m: 0.05,
            wavelength_m: 795e-9,
            input_intensity: 1.0,
            detector_gain: 1.0,
            analyzer_angle_rad: PI / 4.0,
        }
    }
}

/// χ± at the probe frequency: the coherence on each probe branch divided by
/// that branch's (half) Rabi frequency, times an overall density/dipole
/// calibration factor.
pub fn susceptibilities(
    rho: &DensityMatrix,
    scheme: &LevelScheme,
    probe: &FieldDrive,
    scale: f64,
) -> Result<(Complex64, Complex64), OpticsError> {
    if rho.dim() != scheme.n_states() {
        return Err(OpticsError::DimensionMismatch {
            expected: scheme.n_states(),
            got: rho.dim(),
        });
    }
    let chi = |pol: Polarization| -> Result<Complex64, OpticsError> {
        let branch = scheme
            .branch(DriveRole::Probe, pol)
            .ok_or(OpticsError::MissingProbeBranch(pol))?;
        let rabi = branch.dipole * probe.rabi_hz(pol);
        if rabi == 0.0 {
            return Err(OpticsError::ZeroProbeRabi(pol));
        }
        Ok(rho.entry(branch.upper, branch.lower) * Complex64::new(scale / (rabi / 2.0), 0.0))
    };
    Ok((chi(Polarization::SigmaPlus)?, chi(Polarization::SigmaMinus)?))
}

/// Rotation, ellipticity and circular transmissions through the cell.
pub fn faraday(
    chi_plus: Complex64,
    chi_minus: Complex64,
    cfg: &PolarimeterConfig,
) -> Result<OpticalResponse, OpticsError> {
    if !chi_plus.is_finite() || !chi_minus.is_finite() {
        return Err(OpticsError::NonFiniteSusceptibility);
    }
    cfg.validate()?;
    let kl = PI * cfg.cell_length_m / cfg.wavelength_m;
    let diff = chi_minus - chi_plus;
    let rotation_angle_rad = kl * diff.re / 2.0;
    let ellipticity_rad = kl * diff.im / 2.0;
    let transmission = |chi: Complex64| (-2.0 * kl * chi.im).exp().clamp(0.0, 1.0);
    Ok(OpticalResponse {
        chi_plus,
        chi_minus,
        rotation_angle_rad,
        ellipticity_rad,
        transmission_plus: transmission(chi_plus),
        transmission_minus: transmission(chi_minus),
    })
}

/// Balanced-detector voltage: V = g·I₀·T̄·sin 2φ, zero at zero rotation
/// regardless of absorption.
pub fn balanced_signal(resp: &OpticalResponse, cfg: &PolarimeterConfig) -> f64 {
    let mean_transmission = 0.5 * (resp.transmission_plus + resp.transmission_minus);
    cfg.detector_gain
        * cfg.input_intensity
        * mean_transmission
        * (2.0 * resp.rotation_angle_rad).sin()
}

/// Full read-out chain ρ → χ± → Faraday → volts, used per sample by the
/// waveform-driven pipelines.
pub fn polarimeter_voltage(
    rho: &DensityMatrix,
    scheme: &LevelScheme,
    probe: &FieldDrive,
    scale: f64,
    cfg: &PolarimeterConfig,
) -> Result<f64, OpticsError> {
    let (chi_plus, chi_minus) = susceptibilities(rho, scheme, probe, scale)?;
    let resp = faraday(chi_plus, chi_minus, cfg)?;
    Ok(balanced_signal(&resp, cfg))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::{build_liouvillian, steady_state};
    use crate::medium::{make_scheme, SchemeKind, SchemeParams};
    use approx::assert_relative_eq;

    fn cfg() -> PolarimeterConfig {
        PolarimeterConfig::default()
    }

    #[test]
    fn equal_coherences_give_equal_susceptibilities() {
        let probe = FieldDrive::symmetric(DriveRole::Probe, 1e5, -5e9);
        let params = SchemeParams::new(5.7e6, 10.0, probe.clone());
        let scheme = make_scheme(SchemeKind::SingleLambda, &params).unwrap();
        let l = build_liouvillian(&scheme, std::slice::from_ref(&probe), 0.0).unwrap();
        let rho = steady_state(&l).unwrap();
        // the symmetric zero-field steady state has ρ₂₁ = ρ₂₃
        let (cp, cm) = susceptibilities(&rho, &scheme, &probe, 1.0).unwrap();
        assert!((cp - cm).norm() < 1e-10 * cp.norm().max(1e-300));
        let resp = faraday(cp, cm, &cfg()).unwrap();
        assert!(resp.rotation_angle_rad.abs() < 1e-15);
        assert!(resp.ellipticity_rad.abs() < 1e-15);
    }

    #[test]
    fn zero_probe_rabi_is_rejected_with_perturbative_hint() {
        let probe_off = FieldDrive::symmetric(DriveRole::Probe, 0.0, -5e9);
        let params = SchemeParams::new(5.7e6, 10.0, probe_off.clone());
        let scheme = make_scheme(SchemeKind::SingleLambda, &params).unwrap();
        let l = build_liouvillian(&scheme, std::slice::from_ref(&probe_off), 0.0).unwrap();
        let rho = steady_state(&l).unwrap();
        let err = susceptibilities(&rho, &scheme, &probe_off, 1.0).unwrap_err();
        assert_eq!(err, OpticsError::ZeroProbeRabi(Polarization::SigmaPlus));
        assert!(err.to_string().contains("1000"));
    }

    #[test]
    fn faraday_equal_chis_is_null() {
        let chi = Complex64::new(3e-7, 1e-8);
        let resp = faraday(chi, chi, &cfg()).unwrap();
        assert_eq!(resp.rotation_angle_rad, 0.0);
        assert_eq!(resp.ellipticity_rad, 0.0);
        assert_eq!(resp.transmission_plus, resp.transmission_minus);
    }

    #[test]
    fn faraday_real_chis_rotate_without_loss() {
        let d = 4e-9;
        let chi_plus = Complex64::new(2e-8 + d, 0.0);
        let chi_minus = Complex64::new(2e-8, 0.0);
        let resp = faraday(chi_plus, chi_minus, &cfg()).unwrap();
        assert_eq!(resp.transmission_plus, 1.0);
        assert_eq!(resp.transmission_minus, 1.0);
        let kl = PI * cfg().cell_length_m / cfg().wavelength_m;
        assert_relative_eq!(resp.rotation_angle_rad, -kl * d / 2.0, epsilon = 1e-18);
        assert_relative_eq!(resp.rotation_angle_rad.abs(), kl * d.abs() / 2.0);
    }

    #[test]
    fn faraday_swap_negates_rotation_and_swaps_transmissions() {
        let chi_plus = Complex64::new(1e-8, 3e-9);
        let chi_minus = Complex64::new(-2e-8, 5e-9);
        let a = faraday(chi_plus, chi_minus, &cfg()).unwrap();
        let b = faraday(chi_minus, chi_plus, &cfg()).unwrap();
        assert_relative_eq!(a.rotation_angle_rad, -b.rotation_angle_rad);
        assert_relative_eq!(a.ellipticity_rad, -b.ellipticity_rad);
        assert_eq!(a.transmission_plus, b.transmission_minus);
        assert_eq!(a.transmission_minus, b.transmission_plus);
    }

    #[test]
    fn balanced_null_at_zero_rotation() {
        let resp = OpticalResponse {
            chi_plus: Complex64::new(0.0, 0.5),
            chi_minus: Complex64::new(0.0, 0.5),
            rotation_angle_rad: 0.0,
            ellipticity_rad: 0.0,
            transmission_plus: 0.3,
            transmission_minus: 0.8,
        };
        assert_eq!(balanced_signal(&resp, &cfg()), 0.0);
    }

    #[test]
    fn balanced_signal_is_odd_in_rotation() {
        let mut resp = OpticalResponse {
            chi_plus: Complex64::new(0.0, 0.0),
            chi_minus: Complex64::new(0.0, 0.0),
            rotation_angle_rad: 0.013,
            ellipticity_rad: 0.0,
            transmission_plus: 0.9,
            transmission_minus: 0.7,
        };
        let v_plus = balanced_signal(&resp, &cfg());
        resp.rotation_angle_rad = -0.013;
        let v_minus = balanced_signal(&resp, &cfg());
        assert_relative_eq!(v_plus, -v_minus);
    }

    #[test]
    fn balanced_small_angle_matches_direct_evaluation() {
        let phi = 1e-5;
        let resp = OpticalResponse {
            chi_plus: Complex64::new(0.0, 0.0),
            chi_minus: Complex64::new(0.0, 0.0),
            rotation_angle_rad: phi,
            ellipticity_rad: 0.0,
            transmission_plus: 1.0,
            transmission_minus: 1.0,
        };
        let v = balanced_signal(&resp, &cfg());
        let direct = (2.0 * phi).sin();
        assert!((v - direct).abs() <= 1e-12 * direct.abs());
        // small-angle value: 2φ to the sin-series accuracy (2φ)²/6 ≈ 6.7e−11
        assert!((v - 2.0 * phi).abs() <= 1e-9 * 2.0 * phi);
    }

    #[test]
    fn transmissions_clamped_to_unit_interval() {
        let gain_like = Complex64::new(0.0, -1.0);
        let lossy = Complex64::new(0.0, 1.0);
        let resp = faraday(gain_like, lossy, &cfg()).unwrap();
        assert_eq!(resp.transmission_plus, 1.0);
        assert_eq!(resp.transmission_minus, 0.0);
    }

    #[test]
    fn bad_polarimeter_config_rejected() {
        let mut bad = cfg();
        bad.cell_length_m = 0.0;
        assert!(matches!(
            bad.validate(),
            Err(OpticsError::BadConfig {
                name: "cell_length_m",
                ..
            })
        ));
    }
}
