//! Scenario schema, parsing and validation.

use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};
use thiserror::Error;

use crate::dynamics::{DynamicsError, EvolveMode, DEFAULT_EVOLVE_REL_TOL};
use crate::instrument::{InstrumentError, NoisePath, NoiseSpec};
use crate::medium::{
    make_scheme, DriveRole, FieldDrive, LevelScheme, MediumError, SchemeKind, SchemeParams,
    ZeemanCalibration, DEFAULT_EXCITED_DECAY_HZ, DEFAULT_GAMMA_HZ_PER_NT,
    DEFAULT_GROUND_DECOHERENCE_HZ,
};
use crate::optics::{OpticsError, PolarimeterConfig};
use crate::waveforms::{MagneticWaveformSpec, WaveformError};

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("invalid config at `{path}`: {message}")]
    Invalid { path: String, message: String },
    #[error("unknown preset `{0}` (known: fig2, fig3, fig4, s2, s3, pumped)")]
    UnknownPreset(String),
    #[error("cannot parse scenario: {0}")]
    Parse(String),
    #[error("i/o failure on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Dynamics(#[from] DynamicsError),
    #[error(transparent)]
    Optics(#[from] OpticsError),
    #[error(transparent)]
    Instrument(#[from] InstrumentError),
    #[error(transparent)]
    Analysis(#[from] crate::analysis::AnalysisError),
    #[error(transparent)]
    Waveform(#[from] WaveformError),
    #[error(transparent)]
    Medium(#[from] MediumError),
}

impl ScenarioError {
    fn invalid(path: &str, message: impl Into<String>) -> Self {
        Self::Invalid {
            path: path.to_string(),
            message: message.into(),
        }
    }

    /// Stable machine-readable error kind for CLI reporting.
    pub fn kind(&self) -> &'static str {
        match self {
            Self::Invalid { .. } | Self::UnknownPreset(_) | Self::Parse(_) => "validation",
            Self::Io { .. } => "io",
            _ => "runtime",
        }
    }

    /// Key path of a validation error, when one applies.
    pub fn path(&self) -> Option<&str> {
        match self {
            Self::Invalid { path, .. } => Some(path),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OutputFormat {
    #[default]
    Csv,
    Jsonl,
}

impl OutputFormat {
    pub fn extension(&self) -> &'static str {
        match self {
            Self::Csv => "csv",
            Self::Jsonl => "jsonl",
        }
    }
}

/// One optical field as written in config files; σ⁻ defaults to σ⁺
/// (symmetric drive) and the role comes from the field's position.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DriveConfig {
    pub rabi_plus_hz: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rabi_minus_hz: Option<f64>,
    pub detuning_hz: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub intensity_label_uw_per_cm2: Option<f64>,
}

impl DriveConfig {
    pub fn symmetric(rabi_hz: f64, detuning_hz: f64) -> Self {
        Self {
            rabi_plus_hz: rabi_hz,
            rabi_minus_hz: None,
            detuning_hz,
            intensity_label_uw_per_cm2: None,
        }
    }

    pub fn with_intensity_label(mut self, uw_per_cm2: f64) -> Self {
        self.intensity_label_uw_per_cm2 = Some(uw_per_cm2);
        self
    }

    pub fn to_drive(&self, role: DriveRole) -> FieldDrive {
        FieldDrive {
            role,
            rabi_plus_hz: self.rabi_plus_hz,
            rabi_minus_hz: self.rabi_minus_hz.unwrap_or(self.rabi_plus_hz),
            detuning_hz: self.detuning_hz,
            intensity_label_uw_per_cm2: self.intensity_label_uw_per_cm2,
        }
    }
}

fn default_excited_decay() -> f64 {
    DEFAULT_EXCITED_DECAY_HZ
}
fn default_ground_decoherence() -> f64 {
    DEFAULT_GROUND_DECOHERENCE_HZ
}
fn default_gamma_nt() -> f64 {
    DEFAULT_GAMMA_HZ_PER_NT
}
fn default_scale() -> f64 {
    1.0
}
fn one_u32() -> u32 {
    1
}
fn default_true() -> bool {
    true
}
fn default_rel_tol() -> f64 {
    DEFAULT_EVOLVE_REL_TOL
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MediumConfig {
    pub kind: SchemeKind,
    #[serde(default = "default_excited_decay")]
    pub excited_decay_hz: f64,
    #[serde(default = "default_ground_decoherence")]
    pub ground_decoherence_hz: f64,
    #[serde(default)]
    pub reservoir_fraction: f64,
    #[serde(default = "default_gamma_nt")]
    pub gamma_hz_per_nt: f64,
    /// Overall atom-density × dipole² calibration applied to χ±.
    #[serde(default = "default_scale")]
    pub susceptibility_scale: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseConfig {
    #[serde(default)]
    pub white_psd_v2_per_hz: f64,
    #[serde(default)]
    pub scope_noise_rms_volts: f64,
}

impl NoiseConfig {
    pub fn to_spec(&self, seed: u64) -> NoiseSpec {
        NoiseSpec {
            white_psd_v2_per_hz: self.white_psd_v2_per_hz,
            scope_noise_rms_volts: self.scope_noise_rms_volts,
            seed,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InstrumentConfig {
    pub path: NoisePath,
    #[serde(default = "one_u32")]
    pub n_scans: u32,
    /// Scan count override for the wave-mixing variant (a single scan often
    /// suffices there).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n_scans_wave_mixing: Option<u32>,
    /// Requested analyzer resolution bandwidth; required on the analyzer
    /// path.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rbw_hz: Option<f64>,
    #[serde(default = "one_u32")]
    pub n_rms_averages: u32,
    /// Also run the same scenario with the wave-mixing field off.
    #[serde(default = "default_true")]
    pub compare_single_beam: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DynamicsConfig {
    #[serde(default)]
    pub mode: EvolveMode,
    #[serde(default = "default_rel_tol")]
    pub rel_tol: f64,
}

impl Default for DynamicsConfig {
    fn default() -> Self {
        Self {
            mode: EvolveMode::Auto,
            rel_tol: DEFAULT_EVOLVE_REL_TOL,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SnrWindowsConfig {
    pub signal_window_s: (f64, f64),
    pub noise_window_s: (f64, f64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AmplitudeSweepConfig {
    pub amplitudes_nt: Vec<f64>,
    /// Line to read the peak PSD at (usually the train repetition rate).
    pub peak_freq_hz: f64,
    pub peak_tol_hz: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ResonanceScanConfig {
    pub halfspan_hz: f64,
    pub n_points: usize,
    /// Repeat the scan at each probe Rabi frequency (power-broadening
    /// studies); defaults to the scenario's probe.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub probe_rabi_sweep_hz: Option<Vec<f64>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PumpedComparisonConfig {
    /// Reservoir fraction representing the unpumped medium; the pumped
    /// reference uses fraction 0.
    pub unpumped_reservoir_fraction: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnalysisConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub snr: Option<SnrWindowsConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub amplitude_sweep: Option<AmplitudeSweepConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub resonance_scan: Option<ResonanceScanConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pumped_comparison: Option<PumpedComparisonConfig>,
}

/// One complete experiment description.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub id: String,
    /// Root seed for every random stream in the run; mandatory.
    pub seed: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub preset: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub out_dir: Option<PathBuf>,
    #[serde(default)]
    pub out_format: OutputFormat,
    /// Free-form provenance notes copied into the manifest.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub notes: Vec<String>,
    pub medium: MediumConfig,
    pub probe: DriveConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub wave_mixing_field: Option<DriveConfig>,
    pub waveform: MagneticWaveformSpec,
    #[serde(default)]
    pub polarimeter: PolarimeterConfig,
    #[serde(default)]
    pub noise: NoiseConfig,
    pub instrument: InstrumentConfig,
    #[serde(default)]
    pub dynamics: DynamicsConfig,
    #[serde(default)]
    pub analysis: AnalysisConfig,
}

impl Scenario {
    pub fn from_toml_str(text: &str) -> Result<Self, ScenarioError> {
        toml::from_str(text).map_err(|e| ScenarioError::Parse(e.to_string()))
    }

    pub fn to_toml_string(&self) -> Result<String, ScenarioError> {
        toml::to_string_pretty(self).map_err(|e| ScenarioError::Parse(e.to_string()))
    }

    /// Loads a scenario from a `.toml` config or from the `scenario` field
    /// of a run `manifest.json`.
    pub fn load(path: &Path) -> Result<Self, ScenarioError> {
        let text = std::fs::read_to_string(path).map_err(|source| ScenarioError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        if path.extension().and_then(|e| e.to_str()) == Some("json") {
            let manifest: serde_json::Value =
                serde_json::from_str(&text).map_err(|e| ScenarioError::Parse(e.to_string()))?;
            let scenario = manifest
                .get("scenario")
                .ok_or_else(|| ScenarioError::Parse("manifest lacks a `scenario` field".into()))?;
            serde_json::from_value(scenario.clone())
                .map_err(|e| ScenarioError::Parse(e.to_string()))
        } else {
            Self::from_toml_str(&text)
        }
    }

    pub fn zeeman_calibration(&self) -> Result<ZeemanCalibration, ScenarioError> {
        ZeemanCalibration::new(self.medium.gamma_hz_per_nt).map_err(|e| {
            ScenarioError::invalid("medium.gamma_hz_per_nt", e.to_string())
        })
    }

    pub fn probe_drive(&self) -> FieldDrive {
        self.probe.to_drive(DriveRole::Probe)
    }

    pub fn wave_mixing_drive(&self) -> Option<FieldDrive> {
        self.wave_mixing_field
            .as_ref()
            .map(|d| d.to_drive(DriveRole::WaveMixing))
    }

    /// Builds the level scheme described by the medium/drive sections.
    pub fn build_scheme(&self) -> Result<LevelScheme, ScenarioError> {
        let mut params = SchemeParams::new(
            self.medium.excited_decay_hz,
            self.medium.ground_decoherence_hz,
            self.probe_drive(),
        );
        params.reservoir_fraction = self.medium.reservoir_fraction;
        if let Some(wm) = self.wave_mixing_drive() {
            params.wave_mixing = Some(wm);
        }
        make_scheme(self.medium.kind, &params)
            .map_err(|e| ScenarioError::invalid("medium", e.to_string()))
    }

    /// Full validation with key-path error reporting.
    pub fn validate(&self) -> Result<(), ScenarioError> {
        if self.id.trim().is_empty() {
            return Err(ScenarioError::invalid("id", "must not be empty"));
        }
        if self.seed.is_none() {
            return Err(ScenarioError::invalid("seed", "required (determinism)"));
        }
        if let Some(name) = &self.preset {
            if !super::presets::PRESET_NAMES.contains(&name.as_str()) {
                return Err(ScenarioError::UnknownPreset(name.clone()));
            }
        }
        match self.medium.kind {
            SchemeKind::SingleLambda => {
                if self.wave_mixing_field.is_some() {
                    return Err(ScenarioError::invalid(
                        "wave_mixing_field",
                        "not allowed for medium.kind = single_lambda",
                    ));
                }
            }
            SchemeKind::WaveMixing => {
                if self.wave_mixing_field.is_none() {
                    return Err(ScenarioError::invalid(
                        "wave_mixing_field",
                        "required for medium.kind = wave_mixing",
                    ));
                }
            }
        }
        if !(self.medium.susceptibility_scale.is_finite()) {
            return Err(ScenarioError::invalid(
                "medium.susceptibility_scale",
                "must be finite",
            ));
        }
        self.build_scheme()?;
        self.zeeman_calibration()?;
        self.waveform
            .validate()
            .map_err(|e| ScenarioError::invalid("waveform", e.to_string()))?;
        self.polarimeter
            .validate()
            .map_err(|e| ScenarioError::invalid("polarimeter", e.to_string()))?;
        if self.noise.white_psd_v2_per_hz < 0.0 {
            return Err(ScenarioError::invalid(
                "noise.white_psd_v2_per_hz",
                "must be nonnegative",
            ));
        }
        if self.noise.scope_noise_rms_volts < 0.0 {
            return Err(ScenarioError::invalid(
                "noise.scope_noise_rms_volts",
                "must be nonnegative",
            ));
        }
        if self.instrument.n_scans == 0 {
            return Err(ScenarioError::invalid(
                "instrument.n_scans",
                "must be at least 1",
            ));
        }
        if self.instrument.n_rms_averages == 0 {
            return Err(ScenarioError::invalid(
                "instrument.n_rms_averages",
                "must be at least 1",
            ));
        }
        if let Some(rbw) = self.instrument.rbw_hz {
            if !(rbw > 0.0) {
                return Err(ScenarioError::invalid(
                    "instrument.rbw_hz",
                    "must be positive",
                ));
            }
        } else if matches!(self.instrument.path, NoisePath::Analyzer) {
            return Err(ScenarioError::invalid(
                "instrument.rbw_hz",
                "required for instrument.path = analyzer",
            ));
        }
        if !(self.dynamics.rel_tol > 0.0) {
            return Err(ScenarioError::invalid(
                "dynamics.rel_tol",
                "must be positive",
            ));
        }
        if let Some(snr) = &self.analysis.snr {
            for (name, (a, b)) in [
                ("analysis.snr.signal_window_s", snr.signal_window_s),
                ("analysis.snr.noise_window_s", snr.noise_window_s),
            ] {
                if !(a < b) {
                    return Err(ScenarioError::invalid(name, "window must satisfy start < end"));
                }
            }
        }
        if let Some(sweep) = &self.analysis.amplitude_sweep {
            if sweep.amplitudes_nt.len() < 3 {
                return Err(ScenarioError::invalid(
                    "analysis.amplitude_sweep.amplitudes_nt",
                    "need at least 3 amplitudes for a fit",
                ));
            }
            if sweep.amplitudes_nt.iter().any(|&a| !(a > 0.0)) {
                return Err(ScenarioError::invalid(
                    "analysis.amplitude_sweep.amplitudes_nt",
                    "amplitudes must be positive",
                ));
            }
            if !(sweep.peak_tol_hz > 0.0) {
                return Err(ScenarioError::invalid(
                    "analysis.amplitude_sweep.peak_tol_hz",
                    "must be positive",
                ));
            }
            if self.instrument.rbw_hz.is_none() {
                return Err(ScenarioError::invalid(
                    "instrument.rbw_hz",
                    "required when analysis.amplitude_sweep is set",
                ));
            }
        }
        if let Some(scan) = &self.analysis.resonance_scan {
            if scan.n_points < 5 {
                return Err(ScenarioError::invalid(
                    "analysis.resonance_scan.n_points",
                    "need at least 5 points",
                ));
            }
            if !(scan.halfspan_hz > 0.0) {
                return Err(ScenarioError::invalid(
                    "analysis.resonance_scan.halfspan_hz",
                    "must be positive",
                ));
            }
            if let Some(rabis) = &scan.probe_rabi_sweep_hz {
                if rabis.iter().any(|&r| !(r > 0.0)) {
                    return Err(ScenarioError::invalid(
                        "analysis.resonance_scan.probe_rabi_sweep_hz",
                        "Rabi frequencies must be positive",
                    ));
                }
            }
        }
        if let Some(pumped) = &self.analysis.pumped_comparison {
            if !(0.0..1.0).contains(&pumped.unpumped_reservoir_fraction)
                || pumped.unpumped_reservoir_fraction == 0.0
            {
                return Err(ScenarioError::invalid(
                    "analysis.pumped_comparison.unpumped_reservoir_fraction",
                    "must lie in (0, 1)",
                ));
            }
            if self.medium.kind != SchemeKind::WaveMixing {
                return Err(ScenarioError::invalid(
                    "analysis.pumped_comparison",
                    "requires medium.kind = wave_mixing",
                ));
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn minimal_toml() -> String {
        r#"
            id = "unit"
            seed = 7

            [medium]
            kind = "single_lambda"

            [probe]
            rabi_plus_hz = 1e5
            detuning_hz = -5e9

            [waveform]
            kind = "constant"
            amplitude_nt = 10.0
            duration_seconds = 0.01
            sample_rate_hz = 1000.0

            [instrument]
            path = "scope"
        "#
        .to_string()
    }

    #[test]
    fn minimal_scenario_parses_and_validates() {
        let s = Scenario::from_toml_str(&minimal_toml()).unwrap();
        s.validate().unwrap();
        assert_eq!(s.medium.excited_decay_hz, DEFAULT_EXCITED_DECAY_HZ);
        assert_eq!(s.out_format, OutputFormat::Csv);
    }

    #[test]
    fn missing_seed_is_a_validation_error() {
        let toml = minimal_toml().replace("seed = 7", "");
        let s = Scenario::from_toml_str(&toml).unwrap();
        let err = s.validate().unwrap_err();
        assert_eq!(err.path(), Some("seed"));
        assert_eq!(err.kind(), "validation");
    }

    #[test]
    fn wave_mixing_kind_requires_wm_field() {
        let toml = minimal_toml().replace("single_lambda", "wave_mixing");
        let s = Scenario::from_toml_str(&toml).unwrap();
        let err = s.validate().unwrap_err();
        assert_eq!(err.path(), Some("wave_mixing_field"));
    }

    #[test]
    fn waveform_errors_carry_key_paths() {
        let toml = minimal_toml().replace("duration_seconds = 0.01", "duration_seconds = -1.0");
        let s = Scenario::from_toml_str(&toml).unwrap();
        let err = s.validate().unwrap_err();
        assert_eq!(err.path(), Some("waveform"));
        assert!(err.to_string().contains("duration_seconds"));
    }

    #[test]
    fn analyzer_path_requires_rbw() {
        let toml = minimal_toml().replace("path = \"scope\"", "path = \"analyzer\"");
        let s = Scenario::from_toml_str(&toml).unwrap();
        let err = s.validate().unwrap_err();
        assert_eq!(err.path(), Some("instrument.rbw_hz"));
    }

    #[test]
    fn toml_round_trip_preserves_scenario() {
        let s = Scenario::from_toml_str(&minimal_toml()).unwrap();
        let text = s.to_toml_string().unwrap();
        let back = Scenario::from_toml_str(&text).unwrap();
        assert_eq!(s, back);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let toml = minimal_toml() + "\nbogus_key = 3\n";
        assert!(matches!(
            Scenario::from_toml_str(&toml),
            Err(ScenarioError::Parse(_))
        ));
    }
}
