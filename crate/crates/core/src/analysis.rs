//! Headline quantities: time-domain SNR, peak-PSD-vs-amplitude linearity,
//! enhancement factors, and magnetic-resonance linewidths.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dynamics::{steady_state, steady_state_unchecked, DynamicsError, LiouvillianFamily};
use crate::instrument::Trace;
use crate::medium::{DriveRole, FieldDrive, LevelScheme};
use crate::optics::{polarimeter_voltage, OpticsError, PolarimeterConfig};

/// SNR below which a time-domain measurement is flagged "no detection".
pub const DETECTION_THRESHOLD_SNR: f64 = 3.0;

/// Widening cap of the resonance-scan bracketing loop (span doubles each
/// round).
pub const SCAN_WIDENING_CAP: usize = 12;

#[derive(Debug, Error)]
pub enum AnalysisError {
    #[error("window ({0}, {1}) is empty or reversed")]
    BadWindow(f64, f64),
    #[error("window ({0}, {1}) lies outside the trace (duration {2} s)")]
    WindowOutOfRange(f64, f64, f64),
    #[error("signal and noise windows overlap")]
    OverlappingWindows,
    #[error("window contains no samples")]
    EmptyWindow,
    #[error("log-log fit needs at least 3 points, got {0}")]
    TooFewPoints(usize),
    #[error("log-log fit requires positive values; point {0} is not")]
    NonPositivePoint(usize),
    #[error("enhancement requires positive peak powers")]
    NonPositivePeak,
    #[error("line-shape grid must be strictly increasing at index {0}")]
    GridNotIncreasing(usize),
    #[error("line-shape grid needs at least 5 points, got {0}")]
    GridTooSmall(usize),
    #[error("dispersive extrema not bracketed after {SCAN_WIDENING_CAP} widenings")]
    ExtremaNotBracketed,
    #[error("line shape is flat; no extrema to measure")]
    FlatLineShape,
    #[error(transparent)]
    Dynamics(#[from] DynamicsError),
    #[error(transparent)]
    Optics(#[from] OpticsError),
}

/// Time-domain SNR report.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SnrReport {
    pub snr: f64,
    pub peak_volts: f64,
    pub baseline_volts: f64,
    pub noise_rms_volts: f64,
    /// `snr >= DETECTION_THRESHOLD_SNR`
    pub detected: bool,
}

/// (peak − baseline) amplitude in the signal window over the RMS in the
/// noise window. Baseline and RMS both come from the noise window.
pub fn snr_time(
    trace: &Trace,
    signal_window_s: (f64, f64),
    noise_window_s: (f64, f64),
) -> Result<SnrReport, AnalysisError> {
    let duration = trace.duration_seconds();
    for &(a, b) in [&signal_window_s, &noise_window_s] {
        if !(a < b) {
            return Err(AnalysisError::BadWindow(a, b));
        }
        if a < 0.0 || b > duration {
            return Err(AnalysisError::WindowOutOfRange(a, b, duration));
        }
    }
    let overlap = signal_window_s.0 < noise_window_s.1 && noise_window_s.0 < signal_window_s.1;
    if overlap {
        return Err(AnalysisError::OverlappingWindows);
    }

    let slice = |w: (f64, f64)| -> Result<&[f64], AnalysisError> {
        let lo = (w.0 * trace.sample_rate_hz).ceil() as usize;
        let hi = ((w.1 * trace.sample_rate_hz).floor() as usize).min(trace.samples.len());
        if lo >= hi {
            return Err(AnalysisError::EmptyWindow);
        }
        Ok(&trace.samples[lo..hi])
    };
    let noise = slice(noise_window_s)?;
    let signal = slice(signal_window_s)?;

    let baseline = noise.iter().sum::<f64>() / noise.len() as f64;
    let noise_rms = (noise.iter().map(|v| (v - baseline).powi(2)).sum::<f64>()
        / noise.len() as f64)
        .sqrt();
    let peak = signal
        .iter()
        .map(|v| (v - baseline).abs())
        .fold(0.0f64, f64::max);
    let snr = if noise_rms > 0.0 {
        peak / noise_rms
    } else {
        f64::INFINITY
    };
    Ok(SnrReport {
        snr,
        peak_volts: peak,
        baseline_volts: baseline,
        noise_rms_volts: noise_rms,
        detected: snr >= DETECTION_THRESHOLD_SNR,
    })
}

/// Least-squares line in (log₁₀ amplitude, log₁₀ peak PSD).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub slope: f64,
    pub intercept: f64,
    pub r_squared: f64,
}

/// Fits `log10(psd) = intercept + slope·log10(amplitude)`.
pub fn loglog_fit(points: &[(f64, f64)]) -> Result<FitResult, AnalysisError> {
    if points.len() < 3 {
        return Err(AnalysisError::TooFewPoints(points.len()));
    }
    for (i, &(a, p)) in points.iter().enumerate() {
        if !(a > 0.0) || !(p > 0.0) {
            return Err(AnalysisError::NonPositivePoint(i));
        }
    }
    let n = points.len() as f64;
    let xs: Vec<f64> = points.iter().map(|&(a, _)| a.log10()).collect();
    let ys: Vec<f64> = points.iter().map(|&(_, p)| p.log10()).collect();
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let ss_res: f64 = xs
        .iter()
        .zip(&ys)
        .map(|(x, y)| (y - (intercept + slope * x)).powi(2))
        .sum();
    let ss_tot: f64 = ys.iter().map(|y| (y - my).powi(2)).sum();
    let r_squared = if ss_tot > 0.0 {
        1.0 - ss_res / ss_tot
    } else {
        1.0
    };
    Ok(FitResult {
        slope,
        intercept,
        r_squared,
    })
}

/// (PSD ratio, amplitude ratio) of the wave-mixing scheme over the
/// single-beam scheme; amplitude_ratio² = psd_ratio by construction.
pub fn enhancement(
    peak_wm_v2_per_hz: f64,
    peak_single_v2_per_hz: f64,
) -> Result<(f64, f64), AnalysisError> {
    if !(peak_wm_v2_per_hz > 0.0) || !(peak_single_v2_per_hz > 0.0) {
        return Err(AnalysisError::NonPositivePeak);
    }
    let psd_ratio = peak_wm_v2_per_hz / peak_single_v2_per_hz;
    Ok((psd_ratio, psd_ratio.sqrt()))
}

/// Balanced-detector voltage versus Zeeman shift.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LineShape {
    pub delta_b_grid_hz: Vec<f64>,
    pub signal_volts: Vec<f64>,
    pub meta: LineShapeMeta,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct LineShapeMeta {
    pub probe_rabi_hz: f64,
    pub wm_rabi_hz: Option<f64>,
    pub ground_decoherence_hz: f64,
    pub widenings: usize,
}

impl LineShape {
    pub fn new(
        delta_b_grid_hz: Vec<f64>,
        signal_volts: Vec<f64>,
        meta: LineShapeMeta,
    ) -> Result<Self, AnalysisError> {
        for k in 1..delta_b_grid_hz.len() {
            if !(delta_b_grid_hz[k] > delta_b_grid_hz[k - 1]) {
                return Err(AnalysisError::GridNotIncreasing(k));
            }
        }
        Ok(Self {
            delta_b_grid_hz,
            signal_volts,
            meta,
        })
    }

    /// CSV columns: `delta_b_hz,volts`.
    pub fn write_csv<W: std::io::Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "delta_b_hz,volts")?;
        for (d, v) in self.delta_b_grid_hz.iter().zip(self.signal_volts.iter()) {
            writeln!(w, "{},{}", d, v)?;
        }
        Ok(())
    }
}

/// Everything needed to map δ_B to a detector voltage.
#[derive(Debug, Clone)]
pub struct ScanSetup<'a> {
    pub scheme: &'a LevelScheme,
    pub drives: &'a [FieldDrive],
    pub polarimeter: &'a PolarimeterConfig,
    pub susceptibility_scale: f64,
}

impl ScanSetup<'_> {
    fn probe(&self) -> &FieldDrive {
        self.drives
            .iter()
            .find(|d| d.role == DriveRole::Probe)
            .expect("scan setup carries a probe drive")
    }
}

/// Computes V(δ_B) over the grid via the steady-state + polarimetry chain,
/// doubling the span (same point count) until both dispersive extrema are
/// interior. Grid points run concurrently.
pub fn resonance_scan(
    setup: &ScanSetup<'_>,
    delta_b_grid_hz: &[f64],
) -> Result<LineShape, AnalysisError> {
    if delta_b_grid_hz.len() < 5 {
        return Err(AnalysisError::GridTooSmall(delta_b_grid_hz.len()));
    }
    for k in 1..delta_b_grid_hz.len() {
        if !(delta_b_grid_hz[k] > delta_b_grid_hz[k - 1]) {
            return Err(AnalysisError::GridNotIncreasing(k));
        }
    }
    let family = LiouvillianFamily::new(setup.scheme, setup.drives)?;
    // uniqueness checked once; per-point solves use the fast path
    steady_state(&family.at(delta_b_grid_hz[0]))?;

    let n = delta_b_grid_hz.len();
    let center = (delta_b_grid_hz[0] + delta_b_grid_hz[n - 1]) / 2.0;
    let mut halfspan = (delta_b_grid_hz[n - 1] - delta_b_grid_hz[0]) / 2.0;
    let mut grid: Vec<f64> = delta_b_grid_hz.to_vec();

    for widenings in 0..=SCAN_WIDENING_CAP {
        let volts = grid
            .par_iter()
            .map(|&d| -> Result<f64, AnalysisError> {
                let rho = steady_state_unchecked(&family.at(d))?;
                Ok(polarimeter_voltage(
                    &rho,
                    setup.scheme,
                    setup.probe(),
                    setup.susceptibility_scale,
                    setup.polarimeter,
                )?)
            })
            .collect::<Result<Vec<f64>, AnalysisError>>()?;

        let (imax, imin) = extrema_indices(&volts);
        if volts[imax] == volts[imin] {
            return Err(AnalysisError::FlatLineShape);
        }
        if imax > 0 && imax < n - 1 && imin > 0 && imin < n - 1 {
            let wm = setup
                .drives
                .iter()
                .find(|d| d.role == DriveRole::WaveMixing)
                .map(|d| d.rabi_plus_hz);
            let meta = LineShapeMeta {
                probe_rabi_hz: setup.probe().rabi_plus_hz,
                wm_rabi_hz: wm,
                ground_decoherence_hz: setup.scheme.ground_decoherence_hz(),
                widenings,
            };
            return LineShape::new(grid, volts, meta);
        }
        halfspan *= 2.0;
        grid = (0..n)
            .map(|k| center - halfspan + 2.0 * halfspan * k as f64 / (n - 1) as f64)
            .collect();
    }
    Err(AnalysisError::ExtremaNotBracketed)
}

fn extrema_indices(v: &[f64]) -> (usize, usize) {
    let mut imax = 0;
    let mut imin = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[imax] {
            imax = i;
        }
        if x < v[imin] {
            imin = i;
        }
    }
    (imax, imin)
}

/// Separation of the dispersive extrema (peak-to-peak width of the odd
/// line shape), with parabolic sub-grid refinement of each extremum.
pub fn linewidth(ls: &LineShape) -> Result<f64, AnalysisError> {
    let n = ls.signal_volts.len();
    if n < 5 {
        return Err(AnalysisError::GridTooSmall(n));
    }
    let (imax, imin) = extrema_indices(&ls.signal_volts);
    if ls.signal_volts[imax] == ls.signal_volts[imin] {
        return Err(AnalysisError::FlatLineShape);
    }
    if imax == 0 || imax == n - 1 || imin == 0 || imin == n - 1 {
        return Err(AnalysisError::ExtremaNotBracketed);
    }
    let x_max = parabolic_vertex(ls, imax);
    let x_min = parabolic_vertex(ls, imin);
    Ok((x_max - x_min).abs())
}

/// Vertex of the parabola through the extremum and its two neighbors.
fn parabolic_vertex(ls: &LineShape, i: usize) -> f64 {
    let (x0, x1, x2) = (
        ls.delta_b_grid_hz[i - 1],
        ls.delta_b_grid_hz[i],
        ls.delta_b_grid_hz[i + 1],
    );
    let (y0, y1, y2) = (
        ls.signal_volts[i - 1],
        ls.signal_volts[i],
        ls.signal_volts[i + 1],
    );
    let num = (y0 - y1) * (x2 - x1).powi(2) - (y2 - y1) * (x1 - x0).powi(2);
    let den = (y0 - y1) * (x2 - x1) + (y2 - y1) * (x1 - x0);
    if den == 0.0 {
        x1
    } else {
        x1 + 0.5 * num / den
    }
}

/// Uniform symmetric grid helper for scans.
pub fn symmetric_grid(halfspan_hz: f64, n: usize) -> Vec<f64> {
    (0..n)
        .map(|k| -halfspan_hz + 2.0 * halfspan_hz * k as f64 / (n - 1) as f64)
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::instrument::{add_noise, NoisePath, NoiseSpec, Trace};
    use crate::medium::{make_scheme, SchemeKind, SchemeParams};
    use approx::assert_relative_eq;

    #[test]
    fn snr_recovers_known_ratio() {
        let fs = 10_000.0;
        let n = 20_000;
        let amp = 1.0e-3;
        // 2 ms pulse at t = 0.2 s
        let samples: Vec<f64> = (0..n)
            .map(|k| {
                let t = k as f64 / fs;
                amp * (-((t - 0.2) / 8.5e-4).powi(2) / 2.0).exp()
            })
            .collect();
        let clean = Trace::new(fs, samples).unwrap();
        let sigma = 1.0e-4;
        let spec = NoiseSpec {
            white_psd_v2_per_hz: 2.0 * sigma * sigma / fs,
            scope_noise_rms_volts: 0.0,
            seed: 11,
        };
        let noisy = add_noise(&clean, &spec, NoisePath::Analyzer).unwrap();
        let report = snr_time(&noisy, (0.18, 0.22), (0.5, 1.9)).unwrap();
        let expected = amp / sigma;
        assert!(
            (report.snr - expected).abs() <= 0.15 * expected,
            "snr {} vs {}",
            report.snr,
            expected
        );
        assert!(report.detected);
    }

    #[test]
    fn pure_noise_is_flagged_no_detection() {
        let fs = 5000.0;
        let spec = NoiseSpec {
            white_psd_v2_per_hz: 1e-8,
            scope_noise_rms_volts: 0.0,
            seed: 3,
        };
        let noisy = add_noise(&Trace::new(fs, vec![0.0; 10_000]).unwrap(), &spec, NoisePath::Analyzer)
            .unwrap();
        let report = snr_time(&noisy, (0.0, 0.5), (1.0, 2.0)).unwrap();
        // peak-over-rms of Gaussian noise is a few; never a firm detection
        assert!(report.snr < 6.0);
        assert!(!report.detected || report.snr >= DETECTION_THRESHOLD_SNR);
        assert!(report.snr > 0.5);
    }

    #[test]
    fn snr_window_validation() {
        let t = Trace::new(100.0, vec![0.0; 100]).unwrap();
        assert!(matches!(
            snr_time(&t, (0.5, 0.2), (0.0, 0.1)),
            Err(AnalysisError::BadWindow(_, _))
        ));
        assert!(matches!(
            snr_time(&t, (0.0, 0.6), (0.5, 0.9)),
            Err(AnalysisError::OverlappingWindows)
        ));
        assert!(matches!(
            snr_time(&t, (0.0, 0.4), (0.5, 1.5)),
            Err(AnalysisError::WindowOutOfRange(_, _, _))
        ));
    }

    #[test]
    fn loglog_fit_exact_quadratic() {
        let points: Vec<(f64, f64)> = (1..=12)
            .map(|k| {
                let a = 0.1 * 1.5f64.powi(k);
                (a, 3.7e-9 * a * a)
            })
            .collect();
        let fit = loglog_fit(&points).unwrap();
        assert!((fit.slope - 2.0).abs() <= 1e-3);
        assert!(fit.r_squared > 0.9999);
    }

    #[test]
    fn loglog_fit_rejects_degenerate_input() {
        assert!(matches!(
            loglog_fit(&[(1.0, 1.0), (2.0, 4.0)]),
            Err(AnalysisError::TooFewPoints(2))
        ));
        assert!(matches!(
            loglog_fit(&[(1.0, 1.0), (2.0, 4.0), (3.0, -1.0)]),
            Err(AnalysisError::NonPositivePoint(2))
        ));
    }

    #[test]
    fn loglog_scaling_only_shifts_intercept() {
        let points: Vec<(f64, f64)> = (1..=8).map(|k| (k as f64, 2.0 * (k as f64).powf(1.7))).collect();
        let scaled: Vec<(f64, f64)> = points.iter().map(|&(a, p)| (a, 1e6 * p)).collect();
        let f1 = loglog_fit(&points).unwrap();
        let f2 = loglog_fit(&scaled).unwrap();
        assert!((f1.slope - f2.slope).abs() <= 1e-12);
        assert_relative_eq!(f2.intercept - f1.intercept, 6.0, epsilon = 1e-9);
    }

    #[test]
    fn enhancement_paper_anchor() {
        let (psd_ratio, amp_ratio) = enhancement(3e-6, 1e-11).unwrap();
        assert_relative_eq!(psd_ratio, 3e5, epsilon = 1e-6);
        assert_relative_eq!(amp_ratio, 547.7225575051661, epsilon = 1e-9);
    }

    #[test]
    fn enhancement_identities() {
        assert_eq!(enhancement(4.2e-7, 4.2e-7).unwrap(), (1.0, 1.0));
        let (p, a) = enhancement(4.0 * 3.3e-9, 3.3e-9).unwrap();
        assert_relative_eq!(p, 4.0, epsilon = 1e-12);
        assert_relative_eq!(a, 2.0, epsilon = 1e-12);
    }

    #[test]
    fn enhancement_reciprocity() {
        let (p, a) = enhancement(7.7e-8, 3.1e-10).unwrap();
        let (pi, ai) = enhancement(3.1e-10, 7.7e-8).unwrap();
        assert_relative_eq!(p * pi, 1.0, epsilon = 1e-12);
        assert_relative_eq!(a * ai, 1.0, epsilon = 1e-12);
    }

    #[test]
    fn enhancement_rejects_nonpositive() {
        assert!(enhancement(0.0, 1.0).is_err());
        assert!(enhancement(1.0, -2.0).is_err());
    }

    fn s3_setup(rabi_hz: f64) -> (LevelScheme, Vec<FieldDrive>) {
        let probe = FieldDrive::symmetric(DriveRole::Probe, rabi_hz, -5.0e9);
        let params = SchemeParams::new(5.7e6, 10.0, probe.clone());
        (
            make_scheme(SchemeKind::SingleLambda, &params).unwrap(),
            vec![probe],
        )
    }

    #[test]
    fn power_broadening_weak_vs_strong_probe() {
        let polarimeter = PolarimeterConfig::default();
        let mut widths = Vec::new();
        for rabi in [1.0e5, 1.0e6] {
            let (scheme, drives) = s3_setup(rabi);
            let setup = ScanSetup {
                scheme: &scheme,
                drives: &drives,
                polarimeter: &polarimeter,
                susceptibility_scale: 1.0,
            };
            let grid = symmetric_grid(600.0, 1201);
            let ls = resonance_scan(&setup, &grid).unwrap();
            widths.push(linewidth(&ls).unwrap());
        }
        assert!(
            widths[1] > widths[0],
            "strong probe did not broaden: {widths:?}"
        );
        assert!(widths[0] > 0.0);
    }

    #[test]
    fn linewidth_is_parity_invariant() {
        let (scheme, drives) = s3_setup(3.0e5);
        let polarimeter = PolarimeterConfig::default();
        let setup = ScanSetup {
            scheme: &scheme,
            drives: &drives,
            polarimeter: &polarimeter,
            susceptibility_scale: 1.0,
        };
        let ls = resonance_scan(&setup, &symmetric_grid(400.0, 801)).unwrap();
        let w = linewidth(&ls).unwrap();

        // mirror the scan: −V over the reversed −grid
        let mut grid: Vec<f64> = ls.delta_b_grid_hz.iter().map(|d| -d).collect();
        grid.reverse();
        let mut volts: Vec<f64> = ls.signal_volts.iter().map(|v| -v).collect();
        volts.reverse();
        let mirrored = LineShape::new(grid, volts, ls.meta.clone()).unwrap();
        let wm = linewidth(&mirrored).unwrap();
        assert_relative_eq!(w, wm, max_relative = 1e-12);
    }

    #[test]
    fn scan_widens_a_too_narrow_grid() {
        let (scheme, drives) = s3_setup(1.0e6);
        let polarimeter = PolarimeterConfig::default();
        let setup = ScanSetup {
            scheme: &scheme,
            drives: &drives,
            polarimeter: &polarimeter,
            susceptibility_scale: 1.0,
        };
        // extrema near ±144 Hz; a ±20 Hz grid must widen to bracket them
        let ls = resonance_scan(&setup, &symmetric_grid(20.0, 401)).unwrap();
        assert!(ls.meta.widenings > 0);
        let w = linewidth(&ls).unwrap();
        assert!(w > 100.0 && w < 1000.0, "width {w}");
    }

    #[test]
    fn line_shape_rejects_unsorted_grid() {
        assert!(matches!(
            LineShape::new(vec![0.0, 0.0, 1.0], vec![1.0; 3], LineShapeMeta::default()),
            Err(AnalysisError::GridNotIncreasing(1))
        ));
    }

    mod properties {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn enhancement_reciprocity(
                a in 1e-15..1e-3f64,
                b in 1e-15..1e-3f64,
            ) {
                let (p, amp) = enhancement(a, b).unwrap();
                let (pi, ampi) = enhancement(b, a).unwrap();
                prop_assert!((p * pi - 1.0).abs() <= 1e-12);
                prop_assert!((amp * ampi - 1.0).abs() <= 1e-12);
                prop_assert!((amp * amp - p).abs() <= 1e-12 * p);
            }

            #[test]
            fn loglog_slope_invariant_under_psd_scaling(
                exponent in -3.0..3.0f64,
                coeff in 1e-12..1e-6f64,
                scale in 1e-6..1e6f64,
            ) {
                let points: Vec<(f64, f64)> = (1..=9)
                    .map(|k| {
                        let a = 0.2 * 1.7f64.powi(k);
                        (a, coeff * a.powf(exponent))
                    })
                    .collect();
                let scaled: Vec<(f64, f64)> =
                    points.iter().map(|&(a, p)| (a, scale * p)).collect();
                let f1 = loglog_fit(&points).unwrap();
                let f2 = loglog_fit(&scaled).unwrap();
                prop_assert!((f1.slope - f2.slope).abs() <= 1e-12 * f1.slope.abs().max(1.0));
                prop_assert!((f1.slope - exponent).abs() <= 1e-6 * exponent.abs().max(1.0));
            }
        }
    }
}
