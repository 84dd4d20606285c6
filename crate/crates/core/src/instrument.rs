//! Measurement electronics: noise injection, oscilloscope scan averaging,
//! and a spectrum analyzer with flat-top windowing and RMS trace averaging.
//!
//! Noise model: a white floor (detector/photon surrogate) present on both
//! read-out paths, plus oscilloscope electronic noise added only on the
//! scope path. All randomness is ChaCha-seeded and bit-reproducible.
//!
//! The analyzer estimates one-sided PSDs with the standard 5-term flat-top
//! window (amplitude-accurate for tones), Welch-averaged over 50%-overlapped
//! segments whose length realizes the requested resolution bandwidth.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rustfft::{num_complex::Complex64, FftPlanner};
use serde::{Deserialize, Serialize};
use std::io::Write;
use thiserror::Error;

/// 5-term flat-top window coefficients (SFT5F), applied as
/// `w[n] = c₀ − c₁·cos x + c₂·cos 2x − c₃·cos 3x + c₄·cos 4x` with
/// `x = 2πn/(N−1)`. Worst-case tone-power scalloping ≤ 0.06%, well inside
/// the 0.1% amplitude-accuracy budget.
pub const FLATTOP_COEFFS: [f64; 5] = [0.1881, 0.36923, 0.28702, 0.13077, 0.02488];

/// Asymptotic equivalent-noise bandwidth of [`FLATTOP_COEFFS`] in bins.
pub const FLATTOP_ENBW_BINS: f64 = 4.3412;

/// Window identifier recorded in [`Spectrum::window`].
pub const FLATTOP_WINDOW_NAME: &str = "flattop_sft5f";

#[derive(Debug, Error, PartialEq)]
pub enum InstrumentError {
    #[error("trace samples must be finite (sample {0} is not)")]
    NonFiniteSample(usize),
    #[error("trace sample_rate_hz must be positive, got {0}")]
    BadSampleRate(f64),
    #[error("no traces to average")]
    NoTraces,
    #[error("trace {index} length {got} does not match {expected}")]
    MismatchedLengths {
        index: usize,
        expected: usize,
        got: usize,
    },
    #[error("trace {index} sample rate {got} does not match {expected}")]
    MismatchedRates { index: usize, expected: f64, got: f64 },
    #[error("resolution bandwidth must be positive, got {0}")]
    BadRbw(f64),
    #[error(
        "trace too short for rbw = {rbw_hz} Hz: need at least {needed} samples, have {have}"
    )]
    TraceTooShortForRbw { rbw_hz: f64, needed: usize, have: usize },
    #[error("no spectra to average")]
    NoSpectra,
    #[error("spectrum {0} has different bins/rbw/window than the first")]
    MismatchedSpectra(usize),
    #[error("no PSD bins within {tol_hz} Hz of {f0_hz} Hz")]
    EmptyPeakWindow { f0_hz: f64, tol_hz: f64 },
    #[error("white noise PSD and scope RMS must be nonnegative")]
    NegativeNoiseLevel,
}

/// Detector voltage time series plus acquisition bookkeeping.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trace {
    pub sample_rate_hz: f64,
    pub samples: Vec<f64>,
    pub meta: TraceMeta,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct TraceMeta {
    pub scenario_id: String,
    pub seed: u64,
    pub averaging_count: u32,
    /// Wall-equivalent acquisition time: scans × scan duration.
    pub acquisition_seconds: f64,
}

impl Trace {
    pub fn new(sample_rate_hz: f64, samples: Vec<f64>) -> Result<Self, InstrumentError> {
        if !(sample_rate_hz > 0.0) || !sample_rate_hz.is_finite() {
            return Err(InstrumentError::BadSampleRate(sample_rate_hz));
        }
        if let Some(bad) = samples.iter().position(|v| !v.is_finite()) {
            return Err(InstrumentError::NonFiniteSample(bad));
        }
        Ok(Self {
            sample_rate_hz,
            samples,
            meta: TraceMeta {
                averaging_count: 1,
                ..TraceMeta::default()
            },
        })
    }

    pub fn duration_seconds(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate_hz
    }

    pub fn time_at(&self, index: usize) -> f64 {
        index as f64 / self.sample_rate_hz
    }

    /// CSV columns: `t_seconds,volts`.
    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "t_seconds,volts")?;
        for (k, v) in self.samples.iter().enumerate() {
            writeln!(w, "{},{}", self.time_at(k), v)?;
        }
        Ok(())
    }
}

/// Which electronics chain reads the detector out.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoisePath {
    /// Oscilloscope: white floor plus scope electronic noise.
    Scope,
    /// Spectrum analyzer: white floor only.
    Analyzer,
}

/// Two-knob noise model; `seed` makes every injection reproducible.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseSpec {
    pub white_psd_v2_per_hz: f64,
    pub scope_noise_rms_volts: f64,
    pub seed: u64,
}

impl NoiseSpec {
    pub fn quiet(seed: u64) -> Self {
        Self {
            white_psd_v2_per_hz: 0.0,
            scope_noise_rms_volts: 0.0,
            seed,
        }
    }
}

const WHITE_STREAM_TAG: u64 = 0x9d8e_21a4_77f3_0b51;
const SCOPE_STREAM_TAG: u64 = 0x4cf1_ee02_5ab9_c6d7;

/// SplitMix64 finalizer; decorrelates derived stream seeds.
pub fn mix_seed(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    let mut z = x;
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Derives an independent stream seed for (root, stage, index); used to key
/// per-scan and per-sweep-point noise without shared state.
pub fn stream_seed(root: u64, stage: u64, index: u64) -> u64 {
    mix_seed(root ^ stage.wrapping_mul(0xa076_1d64_78bd_642f) ^ index.wrapping_mul(0xe703_7ed1_a0b4_28db))
}

/// Adds white Gaussian noise of the given one-sided PSD (variance
/// `psd·fs/2`), plus independent scope noise on the scope path.
/// Deterministic per seed; identical seeds give bit-identical traces.
pub fn add_noise(trace: &Trace, spec: &NoiseSpec, path: NoisePath) -> Result<Trace, InstrumentError> {
    if spec.white_psd_v2_per_hz < 0.0 || spec.scope_noise_rms_volts < 0.0 {
        return Err(InstrumentError::NegativeNoiseLevel);
    }
    let mut out = trace.clone();
    out.meta.seed = spec.seed;

    let white_sigma = (spec.white_psd_v2_per_hz * trace.sample_rate_hz / 2.0).sqrt();
    if white_sigma > 0.0 {
        let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(spec.seed ^ WHITE_STREAM_TAG));
        for v in out.samples.iter_mut() {
            let g: f64 = rng.sample(StandardNormal);
            *v += white_sigma * g;
        }
    }
    if matches!(path, NoisePath::Scope) && spec.scope_noise_rms_volts > 0.0 {
        let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(spec.seed ^ SCOPE_STREAM_TAG));
        for v in out.samples.iter_mut() {
            let g: f64 = rng.sample(StandardNormal);
            *v += spec.scope_noise_rms_volts * g;
        }
    }
    Ok(out)
}

/// Pointwise mean of equal-length, equal-rate scans. The reported
/// acquisition time is scans × scan duration (e.g. 64 scans of 225 ms
/// read out as 14.4 s).
pub fn average_scans(traces: &[Trace]) -> Result<Trace, InstrumentError> {
    let first = traces.first().ok_or(InstrumentError::NoTraces)?;
    let len = first.samples.len();
    for (index, t) in traces.iter().enumerate().skip(1) {
        if t.samples.len() != len {
            return Err(InstrumentError::MismatchedLengths {
                index,
                expected: len,
                got: t.samples.len(),
            });
        }
        if t.sample_rate_hz != first.sample_rate_hz {
            return Err(InstrumentError::MismatchedRates {
                index,
                expected: first.sample_rate_hz,
                got: t.sample_rate_hz,
            });
        }
    }
    let n = traces.len() as f64;
    let mut samples = vec![0.0; len];
    for t in traces {
        for (acc, v) in samples.iter_mut().zip(t.samples.iter()) {
            *acc += v;
        }
    }
    for v in samples.iter_mut() {
        *v /= n;
    }
    let mut out = Trace::new(first.sample_rate_hz, samples)?;
    out.meta = TraceMeta {
        scenario_id: first.meta.scenario_id.clone(),
        seed: first.meta.seed,
        averaging_count: traces.len() as u32,
        acquisition_seconds: traces.len() as f64 * first.duration_seconds(),
    };
    Ok(out)
}

/// One-sided power spectral density with window/RBW metadata.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Spectrum {
    pub freq_bins_hz: Vec<f64>,
    pub psd_v2_per_hz: Vec<f64>,
    /// Achieved resolution bandwidth (window ENBW in Hz).
    pub rbw_hz: f64,
    pub window: String,
    pub n_rms_averages: u32,
}

impl Spectrum {
    pub fn bin_width_hz(&self) -> f64 {
        if self.freq_bins_hz.len() > 1 {
            self.freq_bins_hz[1] - self.freq_bins_hz[0]
        } else {
            0.0
        }
    }

    /// CSV columns: `freq_hz,psd_v2_per_hz`.
    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "freq_hz,psd_v2_per_hz")?;
        for (f, p) in self.freq_bins_hz.iter().zip(self.psd_v2_per_hz.iter()) {
            writeln!(w, "{},{}", f, p)?;
        }
        Ok(())
    }
}

fn flattop_window(n: usize) -> Vec<f64> {
    (0..n)
        .map(|k| {
            let x = std::f64::consts::TAU * k as f64 / (n - 1) as f64;
            FLATTOP_COEFFS[0] - FLATTOP_COEFFS[1] * x.cos() + FLATTOP_COEFFS[2] * (2.0 * x).cos()
                - FLATTOP_COEFFS[3] * (3.0 * x).cos()
                + FLATTOP_COEFFS[4] * (4.0 * x).cos()
        })
        .collect()
}

/// Segment length realizing at most the requested RBW, rounded up to an
/// even 5-smooth count so the FFT stays in fast mixed-radix paths. The
/// achieved (slightly finer) bandwidth is reported in [`Spectrum::rbw_hz`].
pub fn segment_length_for_rbw(sample_rate_hz: f64, rbw_hz: f64) -> usize {
    let n = (sample_rate_hz * FLATTOP_ENBW_BINS / rbw_hz).ceil() as usize;
    next_even_five_smooth(n.max(16))
}

fn next_even_five_smooth(n: usize) -> usize {
    let mut candidate = if n.is_multiple_of(2) { n } else { n + 1 };
    loop {
        let mut m = candidate;
        for p in [2usize, 3, 5] {
            while m % p == 0 {
                m /= p;
            }
        }
        if m == 1 {
            return candidate;
        }
        candidate += 2;
    }
}

/// Flat-top-windowed Welch PSD at the requested resolution bandwidth
/// (50% segment overlap). Amplitude-accurate for tones: peak PSD × RBW
/// recovers A²/2 to within the flat-top scalloping bound.
pub fn psd(trace: &Trace, rbw_hz: f64) -> Result<Spectrum, InstrumentError> {
    if !(rbw_hz > 0.0) || !rbw_hz.is_finite() {
        return Err(InstrumentError::BadRbw(rbw_hz));
    }
    let fs = trace.sample_rate_hz;
    let n = segment_length_for_rbw(fs, rbw_hz);
    if trace.samples.len() < n {
        return Err(InstrumentError::TraceTooShortForRbw {
            rbw_hz,
            needed: n,
            have: trace.samples.len(),
        });
    }
    let window = flattop_window(n);
    let sum_w: f64 = window.iter().sum();
    let sum_w2: f64 = window.iter().map(|w| w * w).sum();
    let enbw_hz = fs * sum_w2 / (sum_w * sum_w);

    let step = n / 2;
    let n_segments = 1 + (trace.samples.len() - n) / step;

    let mut planner = FftPlanner::<f64>::new();
    let fft = planner.plan_fft_forward(n);
    let n_bins = n / 2 + 1;
    let mut acc = vec![0.0f64; n_bins];
    let mut buf: Vec<Complex64> = vec![Complex64::new(0.0, 0.0); n];

    for s in 0..n_segments {
        let start = s * step;
        for (k, (x, w)) in trace.samples[start..start + n]
            .iter()
            .zip(window.iter())
            .enumerate()
        {
            buf[k] = Complex64::new(x * w, 0.0);
        }
        fft.process(&mut buf);
        for (k, a) in acc.iter_mut().enumerate() {
            *a += buf[k].norm_sqr();
        }
    }

    let scale = 1.0 / (fs * sum_w2 * n_segments as f64);
    let mut psd_vals = Vec::with_capacity(n_bins);
    for (k, a) in acc.iter().enumerate() {
        let one_sided = if k == 0 || k == n / 2 { 1.0 } else { 2.0 };
        psd_vals.push(a * scale * one_sided);
    }
    let freq_bins_hz = (0..n_bins).map(|k| k as f64 * fs / n as f64).collect();

    Ok(Spectrum {
        freq_bins_hz,
        psd_v2_per_hz: psd_vals,
        rbw_hz: enbw_hz,
        window: FLATTOP_WINDOW_NAME.to_string(),
        n_rms_averages: 1,
    })
}

/// Per-bin root-mean-square of PSD values across traces (the analyzer's
/// RMS trace-averaging mode).
pub fn rms_average_spectra(spectra: &[Spectrum]) -> Result<Spectrum, InstrumentError> {
    let first = spectra.first().ok_or(InstrumentError::NoSpectra)?;
    for (index, s) in spectra.iter().enumerate().skip(1) {
        if s.freq_bins_hz != first.freq_bins_hz
            || s.rbw_hz != first.rbw_hz
            || s.window != first.window
        {
            return Err(InstrumentError::MismatchedSpectra(index));
        }
    }
    let n = spectra.len() as f64;
    let mut psd_vals = vec![0.0; first.psd_v2_per_hz.len()];
    for s in spectra {
        for (acc, p) in psd_vals.iter_mut().zip(s.psd_v2_per_hz.iter()) {
            *acc += p * p;
        }
    }
    for v in psd_vals.iter_mut() {
        *v = (*v / n).sqrt();
    }
    Ok(Spectrum {
        freq_bins_hz: first.freq_bins_hz.clone(),
        psd_v2_per_hz: psd_vals,
        rbw_hz: first.rbw_hz,
        window: first.window.clone(),
        n_rms_averages: spectra.len() as u32,
    })
}

/// Max PSD over the bins within `[f0 − tol, f0 + tol]`.
pub fn peak_power(spec: &Spectrum, f0_hz: f64, tol_hz: f64) -> Result<f64, InstrumentError> {
    let mut best: Option<f64> = None;
    for (f, p) in spec.freq_bins_hz.iter().zip(spec.psd_v2_per_hz.iter()) {
        if (f - f0_hz).abs() <= tol_hz {
            best = Some(best.map_or(*p, |b: f64| b.max(*p)));
        }
    }
    best.ok_or(InstrumentError::EmptyPeakWindow { f0_hz, tol_hz })
}
