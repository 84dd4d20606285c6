//! Applied magnetic-field time series.
//!
//! Supported shapes: constant, sine, 50%-duty square trains, and Gaussian
//! pulse trains (the 2-ms-FWHM trains used for nerve-impulse-style testing).
//! A static offset rides on every shape; shield-less operation sets it to
//! the Earth-field magnitude so transients are sensed on the far wing of
//! the two-photon resonance.

use serde::{Deserialize, Serialize};
use std::io::Write;
use thiserror::Error;

/// Sample-rate margin over the fastest feature rate (Nyquist ×10).
pub const SAMPLE_RATE_MARGIN: f64 = 20.0;

/// Default Earth-field offset for shield-less presets, in nT. Typical
/// geomagnetic magnitude; configurable and swept in tests.
pub const DEFAULT_EARTH_FIELD_NT: f64 = 50_000.0;

#[derive(Debug, Error, PartialEq)]
pub enum WaveformError {
    #[error("waveform.duration_seconds must be positive, got {0}")]
    NonPositiveDuration(f64),
    #[error("waveform.sample_rate_hz must be positive, got {0}")]
    NonPositiveSampleRate(f64),
    #[error("waveform.frequency_or_rate_hz must be positive for {kind:?}, got {value}")]
    NonPositiveRate { kind: WaveformKind, value: f64 },
    #[error("waveform.fwhm_seconds must be positive for gaussian_train, got {0:?}")]
    BadFwhm(Option<f64>),
    #[error(
        "waveform.sample_rate_hz violates `sample_rate >= {SAMPLE_RATE_MARGIN} × frequency_or_rate_hz`: \
         {sample_rate} < {required}"
    )]
    SampleRateVsRate { sample_rate: f64, required: f64 },
    #[error(
        "waveform.sample_rate_hz violates `sample_rate >= {SAMPLE_RATE_MARGIN} / fwhm_seconds`: \
         {sample_rate} < {required}"
    )]
    SampleRateVsFwhm { sample_rate: f64, required: f64 },
    #[error("waveform.amplitude_nt must be finite, got {0}")]
    NonFiniteAmplitude(f64),
    #[error("waveform.offset_nt must be finite, got {0}")]
    NonFiniteOffset(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WaveformKind {
    Constant,
    Sine,
    Square,
    GaussianTrain,
}

/// Applied field B(t) specification; amplitudes in nT, times in seconds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MagneticWaveformSpec {
    pub kind: WaveformKind,
    pub amplitude_nt: f64,
    /// Sine frequency or train repetition rate, in Hz. Ignored for
    /// `constant`.
    #[serde(default)]
    pub frequency_or_rate_hz: f64,
    /// Gaussian pulse FWHM; `gaussian_train` only.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fwhm_seconds: Option<f64>,
    /// Static offset added to every sample (Earth field in shield-less mode).
    #[serde(default)]
    pub offset_nt: f64,
    pub duration_seconds: f64,
    pub sample_rate_hz: f64,
}

impl MagneticWaveformSpec {
    pub fn constant(amplitude_nt: f64, duration_seconds: f64, sample_rate_hz: f64) -> Self {
        Self {
            kind: WaveformKind::Constant,
            amplitude_nt,
            frequency_or_rate_hz: 0.0,
            fwhm_seconds: None,
            offset_nt: 0.0,
            duration_seconds,
            sample_rate_hz,
        }
    }

    pub fn sine(amplitude_nt: f64, frequency_hz: f64, duration_seconds: f64, sample_rate_hz: f64) -> Self {
        Self {
            kind: WaveformKind::Sine,
            amplitude_nt,
            frequency_or_rate_hz: frequency_hz,
            fwhm_seconds: None,
            offset_nt: 0.0,
            duration_seconds,
            sample_rate_hz,
        }
    }

    pub fn square(amplitude_nt: f64, rate_hz: f64, duration_seconds: f64, sample_rate_hz: f64) -> Self {
        Self {
            kind: WaveformKind::Square,
            amplitude_nt,
            frequency_or_rate_hz: rate_hz,
            fwhm_seconds: None,
            offset_nt: 0.0,
            duration_seconds,
            sample_rate_hz,
        }
    }

    pub fn gaussian_train(
        amplitude_nt: f64,
        rate_hz: f64,
        fwhm_seconds: f64,
        duration_seconds: f64,
        sample_rate_hz: f64,
    ) -> Self {
        Self {
            kind: WaveformKind::GaussianTrain,
            amplitude_nt,
            frequency_or_rate_hz: rate_hz,
            fwhm_seconds: Some(fwhm_seconds),
            offset_nt: 0.0,
            duration_seconds,
            sample_rate_hz,
        }
    }

    pub fn with_offset(mut self, offset_nt: f64) -> Self {
        self.offset_nt = offset_nt;
        self
    }

    pub fn n_samples(&self) -> usize {
        (self.duration_seconds * self.sample_rate_hz).round() as usize
    }

    /// Shortest feature duration, used by the quasi-static admission rule.
    pub fn shortest_timescale_s(&self) -> f64 {
        match self.kind {
            WaveformKind::Constant => f64::INFINITY,
            WaveformKind::Sine => 1.0 / self.frequency_or_rate_hz,
            // a square edge is instantaneous; the plateau sets the scale
            WaveformKind::Square => 0.5 / self.frequency_or_rate_hz,
            WaveformKind::GaussianTrain => self.fwhm_seconds.unwrap_or(f64::INFINITY),
        }
    }

    pub fn validate(&self) -> Result<(), WaveformError> {
        if !self.amplitude_nt.is_finite() {
            return Err(WaveformError::NonFiniteAmplitude(self.amplitude_nt));
        }
        if !self.offset_nt.is_finite() {
            return Err(WaveformError::NonFiniteOffset(self.offset_nt));
        }
        if !(self.duration_seconds > 0.0) {
            return Err(WaveformError::NonPositiveDuration(self.duration_seconds));
        }
        if !(self.sample_rate_hz > 0.0) {
            return Err(WaveformError::NonPositiveSampleRate(self.sample_rate_hz));
        }
        let needs_rate = !matches!(self.kind, WaveformKind::Constant);
        if needs_rate {
            if !(self.frequency_or_rate_hz > 0.0) {
                return Err(WaveformError::NonPositiveRate {
                    kind: self.kind,
                    value: self.frequency_or_rate_hz,
                });
            }
            let required = SAMPLE_RATE_MARGIN * self.frequency_or_rate_hz;
            if self.sample_rate_hz < required {
                return Err(WaveformError::SampleRateVsRate {
                    sample_rate: self.sample_rate_hz,
                    required,
                });
            }
        }
        if matches!(self.kind, WaveformKind::GaussianTrain) {
            let fwhm = match self.fwhm_seconds {
                Some(f) if f > 0.0 => f,
                other => return Err(WaveformError::BadFwhm(other)),
            };
            let required = SAMPLE_RATE_MARGIN / fwhm;
            if self.sample_rate_hz < required {
                return Err(WaveformError::SampleRateVsFwhm {
                    sample_rate: self.sample_rate_hz,
                    required,
                });
            }
        }
        Ok(())
    }
}

/// Sampled applied field.
#[derive(Debug, Clone, PartialEq)]
pub struct Waveform {
    pub spec: MagneticWaveformSpec,
    pub samples_nt: Vec<f64>,
}

impl Waveform {
    pub fn sample_rate_hz(&self) -> f64 {
        self.spec.sample_rate_hz
    }

    pub fn time_at(&self, index: usize) -> f64 {
        index as f64 / self.spec.sample_rate_hz
    }

    pub fn times(&self) -> Vec<f64> {
        (0..self.samples_nt.len()).map(|k| self.time_at(k)).collect()
    }

    /// CSV columns: `t_seconds,b_nT`.
    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "t_seconds,b_nT")?;
        for (k, b) in self.samples_nt.iter().enumerate() {
            writeln!(w, "{},{}", self.time_at(k), b)?;
        }
        Ok(())
    }
}

/// Samples the specified field. Pulse trains put their first pulse center
/// at half a repetition period so no pulse is truncated by the record edge.
pub fn synthesize(spec: &MagneticWaveformSpec) -> Result<Waveform, WaveformError> {
    spec.validate()?;
    let n = spec.n_samples();
    let fs = spec.sample_rate_hz;
    let amp = spec.amplitude_nt;
    let base: Vec<f64> = match spec.kind {
        WaveformKind::Constant => vec![amp; n],
        WaveformKind::Sine => {
            let f = spec.frequency_or_rate_hz;
            (0..n)
                .map(|k| amp * (std::f64::consts::TAU * f * (k as f64 / fs)).sin())
                .collect()
        }
        WaveformKind::Square => {
            let rate = spec.frequency_or_rate_hz;
            (0..n)
                .map(|k| {
                    let phase = (k as f64 / fs) * rate;
                    if phase.fract() < 0.5 {
                        amp
                    } else {
                        0.0
                    }
                })
                .collect()
        }
        WaveformKind::GaussianTrain => {
            let rate = spec.frequency_or_rate_hz;
            let fwhm = spec.fwhm_seconds.expect("validated above");
            let sigma = fwhm / (2.0 * (2.0 * 2.0_f64.ln()).sqrt());
            let period = 1.0 / rate;
            // pulses contribute negligibly beyond 8σ of their center
            let reach = (8.0 * sigma / period).ceil() as i64 + 1;
            (0..n)
                .map(|k| {
                    let t = k as f64 / fs;
                    let nearest = ((t - period / 2.0) / period).round() as i64;
                    let mut v = 0.0;
                    for j in (nearest - reach)..=(nearest + reach) {
                        let tc = (j as f64 + 0.5) * period;
                        let x = (t - tc) / sigma;
                        v += (-0.5 * x * x).exp();
                    }
                    amp * v
                })
                .collect()
        }
    };
    let samples_nt = base.into_iter().map(|b| b + spec.offset_nt).collect();
    Ok(Waveform {
        spec: spec.clone(),
        samples_nt,
    })
}
