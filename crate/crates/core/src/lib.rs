//! Desk-scale simulator and measurement pipeline for nonlinear
//! magneto-optical rotation (NMOR) atomic magnetometry.
//!
//! The crate models both the conventional single-beam Λ magnetometer and a
//! wave-mixing-enhanced double-Λ variant, end to end:
//!
//! ```text
//! scheme → waveform → dynamics → optics → instrument → analysis
//! ```
//!
//! * [`medium`] — level schemes, optical drives, field calibration
//! * [`dynamics`] — Liouvillian assembly, steady states, time evolution
//! * [`optics`] — susceptibilities, Faraday rotation, balanced polarimetry
//! * [`waveforms`] — applied magnetic-field time series
//! * [`instrument`] — noise injection, scan averaging, flat-top PSD
//! * [`analysis`] — SNR, log-log linearity, enhancement, linewidths
//! * [`scenarios`] — config-driven runner with figure-style presets

// `!(x > 0.0)` rejects NaN along with nonpositive values
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod analysis;
pub mod dynamics;
pub mod instrument;
pub mod medium;
pub mod optics;
pub mod scenarios;
pub mod waveforms;

pub use analysis::{
    enhancement, linewidth, loglog_fit, resonance_scan, snr_time, FitResult, LineShape, SnrReport,
};
pub use dynamics::{
    build_liouvillian, evolve, evolve_with, steady_state, DensityMatrix, EvolveMode,
    EvolveOptions, EvolvePath, Liouvillian, LiouvillianFamily, Trajectory,
};
pub use instrument::{
    add_noise, average_scans, peak_power, psd, rms_average_spectra, NoisePath, NoiseSpec,
    Spectrum, Trace,
};
pub use medium::{
    make_scheme, zeeman_shift, DriveRole, FieldDrive, LevelScheme, Polarization, SchemeKind,
    SchemeParams, ZeemanCalibration,
};
pub use optics::{
    balanced_signal, faraday, polarimeter_voltage, susceptibilities, OpticalResponse,
    PolarimeterConfig,
};
pub use scenarios::{preset, run, Manifest, RunOptions, RunResult, Scenario};
pub use waveforms::{synthesize, MagneticWaveformSpec, Waveform, WaveformKind};
