//! Configuration-driven experiment runner binding the whole pipeline:
//! scheme → waveform → dynamics → optics → instrument → analysis.
//!
//! A [`Scenario`] is a TOML document (schema in the README); [`preset`]
//! returns fully resolved scenarios mirroring the reference measurements.
//! [`run`] executes a scenario into an output directory: CSV (or JSONL)
//! traces, spectra, sweeps, scans and fits, plus a `manifest.json` written
//! last that embeds the resolved scenario — rerunning a manifest reproduces
//! every CSV byte for byte.

mod config;
mod presets;
mod runner;

pub use config::{
    AmplitudeSweepConfig, AnalysisConfig, DriveConfig, DynamicsConfig, InstrumentConfig,
    MediumConfig, NoiseConfig, OutputFormat, PumpedComparisonConfig, ResonanceScanConfig,
    Scenario, ScenarioError, SnrWindowsConfig,
};
pub use presets::{preset, PRESET_NAMES};
pub use runner::{
    run, version_string, EnhancementSummary, InvariantSummary, Manifest, ResolvedInfo,
    RunOptions, RunResult, RunSummary,
};
