//! Fully-resolved scenarios mirroring the reference measurements.
//!
//! Quoted beam intensities are carried as labels only; the Rabi frequencies
//! are model choices documented in each scenario's notes and manifest. The
//! susceptibility scales are calibration constants pinning the single-beam
//! signal levels (e.g. the 2 mV trace of the time-domain comparison).

use super::config::{
    AmplitudeSweepConfig, AnalysisConfig, DriveConfig, DynamicsConfig, InstrumentConfig,
    MediumConfig, NoiseConfig, OutputFormat, PumpedComparisonConfig, ResonanceScanConfig,
    Scenario, ScenarioError, SnrWindowsConfig,
};
use crate::dynamics::EvolveMode;
use crate::instrument::NoisePath;
use crate::medium::SchemeKind;
use crate::optics::PolarimeterConfig;
use crate::waveforms::{MagneticWaveformSpec, DEFAULT_EARTH_FIELD_NT};

/// Names accepted by [`preset`].
pub const PRESET_NAMES: [&str; 6] = ["fig2", "fig3", "fig4", "s2", "s3", "pumped"];

/// Returns the fully-resolved scenario for a named preset.
pub fn preset(name: &str) -> Result<Scenario, ScenarioError> {
    match name {
        "fig2" => Ok(fig2()),
        "fig3" => Ok(fig3()),
        "fig4" => Ok(fig4()),
        "s2" => Ok(s2()),
        "s3" => Ok(s3()),
        "pumped" => Ok(pumped()),
        other => Err(ScenarioError::UnknownPreset(other.to_string())),
    }
}

fn medium(kind: SchemeKind, gamma0_hz: f64, scale: f64) -> MediumConfig {
    MediumConfig {
        kind,
        excited_decay_hz: 5.7e6,
        ground_decoherence_hz: gamma0_hz,
        reservoir_fraction: 0.0,
        gamma_hz_per_nt: 6.0,
        susceptibility_scale: scale,
    }
}

fn quasi_static() -> DynamicsConfig {
    DynamicsConfig {
        mode: EvolveMode::QuasiStatic,
        rel_tol: 1e-8,
    }
}

/// Time-domain comparison at the 2 mV / SNR ≈ 2 single-beam calibration:
/// 25 ms square scans on the oscilloscope, 128 averages for the single-beam
/// trace, one scan with the wave-mixing field on.
fn fig2() -> Scenario {
    Scenario {
        id: "fig2".into(),
        seed: Some(20_211_025),
        preset: Some("fig2".into()),
        out_dir: None,
        out_format: OutputFormat::Csv,
        notes: vec![
            "probe Ω/2π = 500 kHz and WM Ω/2π = 1 MHz are model choices; quoted intensities \
             (284 and 80 µW/cm²) are labels only"
                .into(),
            "susceptibility_scale calibrated so the single-beam on-pulse signal is 2 mV".into(),
            "scope_noise_rms set so the 128-scan single-beam average has ~1 mV RMS noise \
             (signal/noise ≈ 2)"
                .into(),
            "effective γ₀ = 250 Hz stands in for transit/buffer-gas decoherence; the kHz-scale \
             resonance matches the observed scan range"
                .into(),
        ],
        medium: medium(SchemeKind::WaveMixing, 250.0, 3.45066e7),
        probe: DriveConfig::symmetric(5.0e5, -5.0e9).with_intensity_label(284.0),
        wave_mixing_field: Some(DriveConfig::symmetric(1.0e6, -2.0e9).with_intensity_label(80.0)),
        waveform: MagneticWaveformSpec::square(100.0, 40.0, 0.025, 100_000.0),
        polarimeter: PolarimeterConfig::default(),
        noise: NoiseConfig {
            white_psd_v2_per_hz: 1e-11,
            scope_noise_rms_volts: 1.131e-2,
        },
        instrument: InstrumentConfig {
            path: NoisePath::Scope,
            n_scans: 128,
            n_scans_wave_mixing: Some(1),
            rbw_hz: None,
            n_rms_averages: 1,
            compare_single_beam: true,
        },
        dynamics: quasi_static(),
        analysis: AnalysisConfig {
            snr: Some(SnrWindowsConfig {
                signal_window_s: (0.001, 0.0115),
                noise_window_s: (0.0135, 0.0245),
            }),
            ..AnalysisConfig::default()
        },
    }
}

/// Peak PSD versus Gaussian-pulse amplitude: 2-ms-FWHM trains at 40 Hz,
/// flat-top analyzer at 725 mHz RBW, log-log fits for both schemes.
fn fig3() -> Scenario {
    Scenario {
        id: "fig3".into(),
        seed: Some(30_040_313),
        preset: Some("fig3".into()),
        out_dir: None,
        out_format: OutputFormat::Csv,
        notes: vec![
            "probe Ω/2π = 1 MHz and WM Ω/2π = 2 MHz are model choices; quoted intensities \
             (1.5 mW/cm², 60 µW/cm²) are labels only"
                .into(),
            "effective γ₀ = 500 Hz keeps the 0.1–10 nT sweep inside the linear-response range"
                .into(),
            "the single-beam sweep bottoms out on the 1e-11 V²/Hz analyzer floor, as in the \
             reference data; the wave-mixing sweep rides far above it"
                .into(),
        ],
        medium: medium(SchemeKind::WaveMixing, 500.0, 7.467175e6),
        probe: DriveConfig::symmetric(1.0e6, -5.0e9).with_intensity_label(1500.0),
        wave_mixing_field: Some(DriveConfig::symmetric(2.0e6, -2.0e9).with_intensity_label(60.0)),
        waveform: MagneticWaveformSpec::gaussian_train(5.0, 40.0, 2e-3, 6.0, 20_000.0),
        polarimeter: PolarimeterConfig::default(),
        noise: NoiseConfig {
            white_psd_v2_per_hz: 1e-11,
            scope_noise_rms_volts: 0.0,
        },
        instrument: InstrumentConfig {
            path: NoisePath::Analyzer,
            n_scans: 1,
            n_scans_wave_mixing: None,
            rbw_hz: Some(0.725),
            n_rms_averages: 15,
            compare_single_beam: true,
        },
        dynamics: quasi_static(),
        analysis: AnalysisConfig {
            amplitude_sweep: Some(AmplitudeSweepConfig {
                amplitudes_nt: vec![0.1, 0.2, 0.5, 1.0, 2.0, 5.0, 10.0],
                peak_freq_hz: 40.0,
                peak_tol_hz: 2.0,
            }),
            ..AnalysisConfig::default()
        },
    }
}

/// Shield-less pulsed detection: square 5 nT pulses riding on the Earth
/// field, sensed on the far wing of the two-photon resonance, 64 scans.
fn fig4() -> Scenario {
    Scenario {
        id: "fig4".into(),
        seed: Some(40_144_064),
        preset: Some("fig4".into()),
        out_dir: None,
        out_format: OutputFormat::Csv,
        notes: vec![
            "square-pulse rate/duty are unspecified in the reference; 20 Hz at 50% duty is \
             assumed"
                .into(),
            "Earth offset 50 µT (δ_E = 300 kHz) is an assumed typical magnitude".into(),
            "susceptibility_scale places the quiescent far-wing rotation at 0.05 rad so the \
             5 nT wave-mixing response is ~5 µV"
                .into(),
            "the double-Λ surrogate's far-wing advantage is only ~2× (the broad background \
             dominates there), so the single-beam variant is suppressed but not invisible as \
             in the reference"
                .into(),
        ],
        medium: medium(SchemeKind::WaveMixing, 250.0, 2.035467e7),
        probe: DriveConfig::symmetric(4.62e5, -5.0e9).with_intensity_label(320.0),
        wave_mixing_field: Some(DriveConfig::symmetric(3.0e6, -2.0e9).with_intensity_label(80.0)),
        waveform: MagneticWaveformSpec::square(5.0, 20.0, 0.225, 10_000.0)
            .with_offset(DEFAULT_EARTH_FIELD_NT),
        polarimeter: PolarimeterConfig::default(),
        noise: NoiseConfig {
            white_psd_v2_per_hz: 1e-15,
            scope_noise_rms_volts: 4e-6,
        },
        instrument: InstrumentConfig {
            path: NoisePath::Scope,
            n_scans: 64,
            n_scans_wave_mixing: None,
            rbw_hz: None,
            n_rms_averages: 1,
            compare_single_beam: true,
        },
        dynamics: quasi_static(),
        analysis: AnalysisConfig {
            snr: Some(SnrWindowsConfig {
                signal_window_s: (0.002, 0.023),
                noise_window_s: (0.027, 0.048),
            }),
            ..AnalysisConfig::default()
        },
    }
}

/// CW noise comparison at constant 10 nT: flat-top analyzer spectra,
/// RMS-averaged over 15 traces, weak probe with and without the
/// wave-mixing field.
fn s2() -> Scenario {
    Scenario {
        id: "s2".into(),
        seed: Some(52_725_015),
        preset: Some("s2".into()),
        out_dir: None,
        out_format: OutputFormat::Csv,
        notes: vec![
            "probe Ω/2π = 106 kHz and WM Ω/2π = 693 kHz are model choices; quoted intensities \
             (17 and 15 µW/cm²) are labels only"
                .into(),
            "the strong-probe comparison trace of the reference corresponds to overriding \
             probe.rabi_plus_hz ≈ 1.32e6 and noise.white_psd_v2_per_hz ≈ 1e-9 (e.g. via the \
             sweep command)"
                .into(),
        ],
        medium: medium(SchemeKind::WaveMixing, 250.0, 3.7394e7),
        probe: DriveConfig::symmetric(1.06e5, -5.0e9).with_intensity_label(17.0),
        wave_mixing_field: Some(DriveConfig::symmetric(6.93e5, -2.0e9).with_intensity_label(15.0)),
        // 60 s of CW data give ~19 Welch segments per analyzer trace at
        // 725 mHz RBW, keeping the RMS-average bias on the floor below 3%
        waveform: MagneticWaveformSpec::constant(10.0, 60.0, 4_000.0),
        polarimeter: PolarimeterConfig::default(),
        noise: NoiseConfig {
            white_psd_v2_per_hz: 1e-11,
            scope_noise_rms_volts: 0.0,
        },
        instrument: InstrumentConfig {
            path: NoisePath::Analyzer,
            n_scans: 1,
            n_scans_wave_mixing: None,
            rbw_hz: Some(0.725),
            n_rms_averages: 15,
            compare_single_beam: true,
        },
        dynamics: quasi_static(),
        analysis: AnalysisConfig::default(),
    }
}

/// Magnetic-resonance line shapes of the single-beam Λ scheme at weak
/// (100 kHz) and strong (1 MHz) probe Rabi frequencies, γ₀ = 10 Hz.
fn s3() -> Scenario {
    Scenario {
        id: "s3".into(),
        seed: Some(53_100_010),
        preset: Some("s3".into()),
        out_dir: None,
        out_format: OutputFormat::Csv,
        notes: vec![
            "line-shape study only; the waveform section is an inert placeholder".into(),
        ],
        medium: medium(SchemeKind::SingleLambda, 10.0, 1.0),
        probe: DriveConfig::symmetric(1.0e5, -5.0e9),
        wave_mixing_field: None,
        waveform: MagneticWaveformSpec::constant(0.0, 0.05, 1_000.0),
        polarimeter: PolarimeterConfig::default(),
        noise: NoiseConfig::default(),
        instrument: InstrumentConfig {
            path: NoisePath::Scope,
            n_scans: 1,
            n_scans_wave_mixing: None,
            rbw_hz: None,
            n_rms_averages: 1,
            compare_single_beam: false,
        },
        dynamics: quasi_static(),
        analysis: AnalysisConfig {
            resonance_scan: Some(ResonanceScanConfig {
                halfspan_hz: 600.0,
                n_points: 1601,
                probe_rabi_sweep_hz: Some(vec![1.0e5, 1.0e6]),
            }),
            ..AnalysisConfig::default()
        },
    }
}

/// Optical-pumping thought experiment: moving the trapped hyperfine
/// population (reservoir fraction 0.5) into the active manifold doubles
/// the signal amplitude.
fn pumped() -> Scenario {
    Scenario {
        id: "pumped".into(),
        seed: Some(60_200_050),
        preset: Some("pumped".into()),
        out_dir: None,
        out_format: OutputFormat::Csv,
        notes: vec![
            "compares reservoir_fraction = 0.5 (unpumped) against 0 (pumped); the clean \
             amplitude ratio is exactly 2"
                .into(),
        ],
        medium: medium(SchemeKind::WaveMixing, 500.0, 7.467175e6),
        probe: DriveConfig::symmetric(1.0e6, -5.0e9),
        wave_mixing_field: Some(DriveConfig::symmetric(2.0e6, -2.0e9)),
        waveform: MagneticWaveformSpec::gaussian_train(5.0, 40.0, 2e-3, 0.1, 20_000.0),
        polarimeter: PolarimeterConfig::default(),
        noise: NoiseConfig::default(),
        instrument: InstrumentConfig {
            path: NoisePath::Scope,
            n_scans: 1,
            n_scans_wave_mixing: None,
            rbw_hz: None,
            n_rms_averages: 1,
            compare_single_beam: false,
        },
        dynamics: quasi_static(),
        analysis: AnalysisConfig {
            pumped_comparison: Some(PumpedComparisonConfig {
                unpumped_reservoir_fraction: 0.5,
            }),
            ..AnalysisConfig::default()
        },
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn all_presets_validate() {
        for name in PRESET_NAMES {
            let scenario = preset(name).unwrap();
            scenario
                .validate()
                .unwrap_or_else(|e| panic!("preset {name} invalid: {e}"));
            assert_eq!(scenario.preset.as_deref(), Some(name));
            assert!(scenario.seed.is_some());
        }
    }

    #[test]
    fn unknown_preset_is_rejected() {
        assert!(matches!(
            preset("bogus"),
            Err(ScenarioError::UnknownPreset(_))
        ));
    }

    #[test]
    fn s3_carries_the_line_shape_study() {
        let s = preset("s3").unwrap();
        let scan = s.analysis.resonance_scan.unwrap();
        assert_eq!(scan.probe_rabi_sweep_hz.unwrap(), vec![1.0e5, 1.0e6]);
        assert_eq!(s.medium.ground_decoherence_hz, 10.0);
    }

    #[test]
    fn fig4_is_shieldless_with_64_scans() {
        let s = preset("fig4").unwrap();
        assert_eq!(s.waveform.offset_nt, DEFAULT_EARTH_FIELD_NT);
        assert_eq!(s.instrument.n_scans, 64);
        assert_eq!(s.waveform.amplitude_nt, 5.0);
        // 64 scans of 225 ms read out as 14.4 s
        assert!((s.waveform.duration_seconds * 64.0 - 14.4).abs() < 1e-12);
    }

    #[test]
    fn fig2_acquisition_is_3p2_seconds() {
        let s = preset("fig2").unwrap();
        assert_eq!(s.instrument.n_scans, 128);
        assert!((s.waveform.duration_seconds * 128.0 - 3.2).abs() < 1e-12);
    }
}
