//! Scenario execution: pipeline orchestration, artifact files, manifest.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};

use super::config::{OutputFormat, Scenario, ScenarioError};
use crate::analysis::{
    enhancement, linewidth, loglog_fit, resonance_scan, snr_time, symmetric_grid, FitResult,
    LineShape, ScanSetup, SnrReport,
};
use crate::dynamics::{
    steady_state, DensityMatrix, EvolveOptions, EvolvePath, EvolveReport, LiouvillianFamily,
};
use crate::instrument::{
    add_noise, average_scans, peak_power, psd, rms_average_spectra, stream_seed, Spectrum, Trace,
};
use crate::medium::{make_scheme, DriveRole, FieldDrive, LevelScheme, SchemeKind, SchemeParams};
use crate::optics::polarimeter_voltage;
use crate::waveforms::{synthesize, Waveform};

const STAGE_SCAN: u64 = 1;
const STAGE_SPECTRUM: u64 = 2;
const STAGE_SWEEP: u64 = 3;

/// Per-invocation overrides (CLI flags).
#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    pub out_dir: Option<PathBuf>,
    pub seed: Option<u64>,
    pub format: Option<OutputFormat>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EnhancementSummary {
    pub psd_ratio: f64,
    pub amplitude_ratio: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct InvariantSummary {
    pub path: EvolvePath,
    pub max_hermiticity_violation: f64,
    pub max_trace_violation: f64,
    pub min_eigenvalue: f64,
}

impl From<&EvolveReport> for InvariantSummary {
    fn from(r: &EvolveReport) -> Self {
        Self {
            path: r.path,
            max_hermiticity_violation: r.max_hermiticity_violation,
            max_trace_violation: r.max_trace_violation,
            min_eigenvalue: r.min_eigenvalue,
        }
    }
}

/// Headline numbers extracted by the run, keyed by variant label
/// (`single`, `wm`).
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct RunSummary {
    pub snr: BTreeMap<String, SnrReport>,
    pub acquisition_seconds: BTreeMap<String, f64>,
    pub peak_psd_v2_per_hz: BTreeMap<String, f64>,
    pub fits: BTreeMap<String, FitResult>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub slopes_relative_difference: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub enhancement: Option<EnhancementSummary>,
    pub linewidths_hz: BTreeMap<String, f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub pumped_amplitude_ratio: Option<f64>,
    pub invariants: BTreeMap<String, InvariantSummary>,
}

/// Resolution record: everything the run decided beyond the raw config.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct ResolvedInfo {
    pub dynamics_path_used: BTreeMap<String, EvolvePath>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub actual_rbw_hz: Option<f64>,
    pub files: Vec<String>,
    pub notes: Vec<String>,
}

/// Sidecar manifest; embeds the resolved scenario so the run can be
/// reproduced from this file alone.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Manifest {
    pub format_version: u32,
    pub tool: String,
    pub tool_version: String,
    pub scenario: Scenario,
    pub resolved: ResolvedInfo,
    pub results: RunSummary,
}

/// Package version plus the git description of the build, when available.
pub fn version_string() -> String {
    let git = env!("NMOR_GIT_DESCRIBE");
    if git.is_empty() {
        env!("CARGO_PKG_VERSION").to_string()
    } else {
        format!("{} ({git})", env!("CARGO_PKG_VERSION"))
    }
}

#[derive(Debug, Clone)]
pub struct RunResult {
    pub out_dir: PathBuf,
    pub manifest: Manifest,
}

struct Variant {
    label: &'static str,
    scheme: LevelScheme,
    drives: Vec<FieldDrive>,
    probe: FieldDrive,
    tag: u64,
}

fn build_variants(scenario: &Scenario) -> Result<Vec<Variant>, ScenarioError> {
    let probe = scenario.probe_drive();
    let mut variants = Vec::new();
    match scenario.medium.kind {
        SchemeKind::SingleLambda => {
            variants.push(Variant {
                label: "single",
                scheme: scenario.build_scheme()?,
                drives: vec![probe.clone()],
                probe,
                tag: 0,
            });
        }
        SchemeKind::WaveMixing => {
            let wm = scenario
                .wave_mixing_drive()
                .expect("validated: wave_mixing kind carries a WM drive");
            variants.push(Variant {
                label: "wm",
                scheme: scenario.build_scheme()?,
                drives: vec![probe.clone(), wm.clone()],
                probe: probe.clone(),
                tag: 1,
            });
            if scenario.instrument.compare_single_beam {
                // identical scheme with the WM field switched off; the
                // double-Λ with zero WM Rabi reproduces the bare Λ exactly
                let mut wm_off = wm;
                wm_off.rabi_plus_hz = 0.0;
                wm_off.rabi_minus_hz = 0.0;
                let scheme = scheme_with(scenario, Some(wm_off.clone()), None)?;
                variants.push(Variant {
                    label: "single",
                    scheme,
                    drives: vec![probe.clone(), wm_off],
                    probe,
                    tag: 0,
                });
            }
        }
    }
    Ok(variants)
}

fn scheme_with(
    scenario: &Scenario,
    wm_override: Option<FieldDrive>,
    reservoir_override: Option<f64>,
) -> Result<LevelScheme, ScenarioError> {
    let mut params = SchemeParams::new(
        scenario.medium.excited_decay_hz,
        scenario.medium.ground_decoherence_hz,
        scenario.probe_drive(),
    );
    params.reservoir_fraction =
        reservoir_override.unwrap_or(scenario.medium.reservoir_fraction);
    params.wave_mixing = match wm_override {
        Some(wm) => Some(wm),
        None => scenario.wave_mixing_drive(),
    };
    Ok(make_scheme(scenario.medium.kind, &params)?)
}

/// Detector voltage trace for one variant under one waveform, via the
/// dynamics → optics chain. Returns the trace and the evolution report.
fn clean_trace(
    variant: &Variant,
    scenario: &Scenario,
    waveform: &Waveform,
) -> Result<(Trace, EvolveReport), ScenarioError> {
    let gamma = scenario.medium.gamma_hz_per_nt;
    let delta_b: Vec<f64> = waveform.samples_nt.iter().map(|b| gamma * b).collect();
    let t = waveform.times();

    let family = LiouvillianFamily::new(&variant.scheme, &variant.drives)?;
    let rho0 = steady_state(&family.at(delta_b[0]))?;
    let opts = EvolveOptions {
        mode: scenario.dynamics.mode,
        rel_tol: scenario.dynamics.rel_tol,
        field_timescale_s: Some(waveform.spec.shortest_timescale_s()),
    };

    let mut volts = vec![0.0; t.len()];
    let mut chain_err: Option<ScenarioError> = None;
    let report = crate::dynamics::evolve_with(&family, &rho0, &t, &delta_b, &opts, |k, m| {
        if chain_err.is_some() {
            return;
        }
        let rho = DensityMatrix::from_matrix_unchecked(m.clone());
        match polarimeter_voltage(
            &rho,
            &variant.scheme,
            &variant.probe,
            scenario.medium.susceptibility_scale,
            &scenario.polarimeter,
        ) {
            Ok(v) => volts[k] = v,
            Err(e) => chain_err = Some(e.into()),
        }
    })?;
    if let Some(e) = chain_err {
        return Err(e);
    }
    let mut trace = Trace::new(waveform.sample_rate_hz(), volts)?;
    trace.meta.scenario_id = scenario.id.clone();
    trace.meta.seed = scenario.seed.expect("validated");
    Ok((trace, report))
}

fn scans_for(
    variant: &Variant,
    scenario: &Scenario,
    clean: &Trace,
) -> Result<Trace, ScenarioError> {
    let n_scans = match (variant.label, scenario.instrument.n_scans_wave_mixing) {
        ("wm", Some(n)) => n,
        _ => scenario.instrument.n_scans,
    };
    let seed = scenario.seed.expect("validated");
    let scans = (0..n_scans)
        .into_par_iter()
        .map(|i| {
            let spec = scenario
                .noise
                .to_spec(stream_seed(seed, (variant.tag << 8) | STAGE_SCAN, i as u64));
            add_noise(clean, &spec, scenario.instrument.path)
        })
        .collect::<Result<Vec<Trace>, _>>()?;
    Ok(average_scans(&scans)?)
}

fn spectrum_for(
    variant: &Variant,
    scenario: &Scenario,
    clean: &Trace,
    rbw_hz: f64,
) -> Result<Spectrum, ScenarioError> {
    let seed = scenario.seed.expect("validated");
    let spectra = (0..scenario.instrument.n_rms_averages)
        .into_par_iter()
        .map(|k| -> Result<Spectrum, ScenarioError> {
            let spec = scenario.noise.to_spec(stream_seed(
                seed,
                (variant.tag << 8) | STAGE_SPECTRUM,
                k as u64,
            ));
            let noisy = add_noise(clean, &spec, scenario.instrument.path)?;
            Ok(psd(&noisy, rbw_hz)?)
        })
        .collect::<Result<Vec<Spectrum>, _>>()?;
    Ok(rms_average_spectra(&spectra)?)
}

/// Executes a scenario. Outputs land in the resolved directory; the
/// manifest is written last, so a directory without `manifest.json` is an
/// incomplete run.
pub fn run(scenario: &Scenario, opts: &RunOptions) -> Result<RunResult, ScenarioError> {
    let mut scenario = scenario.clone();
    if let Some(seed) = opts.seed {
        scenario.seed = Some(seed);
    }
    if let Some(format) = opts.format {
        scenario.out_format = format;
    }
    let out_dir = opts
        .out_dir
        .clone()
        .or_else(|| scenario.out_dir.clone())
        .unwrap_or_else(|| PathBuf::from("runs").join(&scenario.id));
    scenario.out_dir = Some(out_dir.clone());
    scenario.validate()?;

    std::fs::create_dir_all(&out_dir).map_err(|source| ScenarioError::Io {
        path: out_dir.clone(),
        source,
    })?;

    let format = scenario.out_format;
    let mut resolved = ResolvedInfo {
        notes: scenario.notes.clone(),
        ..ResolvedInfo::default()
    };
    let mut results = RunSummary::default();

    let waveform = synthesize(&scenario.waveform)?;
    write_waveform(&out_dir, &waveform, format, &mut resolved)?;

    let variants = build_variants(&scenario)?;
    let mut spectra: BTreeMap<String, Spectrum> = BTreeMap::new();

    for variant in &variants {
        let (clean, report) = clean_trace(variant, &scenario, &waveform)?;
        resolved
            .dynamics_path_used
            .insert(variant.label.into(), report.path);
        results
            .invariants
            .insert(variant.label.into(), InvariantSummary::from(&report));

        let averaged = scans_for(variant, &scenario, &clean)?;
        results
            .acquisition_seconds
            .insert(variant.label.into(), averaged.meta.acquisition_seconds);
        write_trace(&out_dir, variant.label, &averaged, format, &mut resolved)?;

        if let Some(rbw) = scenario.instrument.rbw_hz {
            let spectrum = spectrum_for(variant, &scenario, &clean, rbw)?;
            resolved.actual_rbw_hz = Some(spectrum.rbw_hz);
            write_spectrum(&out_dir, variant.label, &spectrum, format, &mut resolved)?;
            spectra.insert(variant.label.into(), spectrum);
        }

        if let Some(snr_cfg) = &scenario.analysis.snr {
            let report = snr_time(&averaged, snr_cfg.signal_window_s, snr_cfg.noise_window_s)?;
            results.snr.insert(variant.label.into(), report);
        }
    }

    // peak line power and wave-mixing enhancement from the main spectra;
    // modulated fields read the line at the repetition rate, constant
    // fields read the DC bin
    let (f0, tol) = scenario
        .analysis
        .amplitude_sweep
        .as_ref()
        .map(|s| (s.peak_freq_hz, s.peak_tol_hz))
        .unwrap_or_else(|| {
            if scenario.waveform.frequency_or_rate_hz > 0.0 {
                (scenario.waveform.frequency_or_rate_hz, 2.0)
            } else {
                (0.0, 1.0)
            }
        });
    for (label, spectrum) in &spectra {
        let peak = peak_power(spectrum, f0, tol)?;
        results.peak_psd_v2_per_hz.insert(label.clone(), peak);
    }
    if let (Some(&wm), Some(&single)) = (
        results.peak_psd_v2_per_hz.get("wm"),
        results.peak_psd_v2_per_hz.get("single"),
    ) {
        let (psd_ratio, amplitude_ratio) = enhancement(wm, single)?;
        results.enhancement = Some(EnhancementSummary {
            psd_ratio,
            amplitude_ratio,
        });
    }

    if let Some(sweep) = scenario.analysis.amplitude_sweep.clone() {
        run_amplitude_sweep(&scenario, &variants, &sweep, &out_dir, format, &mut resolved, &mut results)?;
    }

    if let Some(scan_cfg) = scenario.analysis.resonance_scan.clone() {
        run_resonance_scans(&scenario, &variants, &scan_cfg, &out_dir, format, &mut resolved, &mut results)?;
    }

    if let Some(pumped) = &scenario.analysis.pumped_comparison {
        results.pumped_amplitude_ratio = Some(pumped_ratio(
            &scenario,
            &waveform,
            pumped.unpumped_reservoir_fraction,
        )?);
    }

    let manifest = Manifest {
        format_version: 1,
        tool: "nmor".into(),
        tool_version: version_string(),
        scenario: scenario.clone(),
        resolved,
        results,
    };
    let manifest_path = out_dir.join("manifest.json");
    let json = serde_json::to_string_pretty(&manifest)
        .map_err(|e| ScenarioError::Parse(e.to_string()))?;
    std::fs::write(&manifest_path, json + "\n").map_err(|source| ScenarioError::Io {
        path: manifest_path,
        source,
    })?;

    Ok(RunResult { out_dir, manifest })
}

#[allow(clippy::too_many_arguments)]
fn run_amplitude_sweep(
    scenario: &Scenario,
    variants: &[Variant],
    sweep: &super::config::AmplitudeSweepConfig,
    out_dir: &Path,
    format: OutputFormat,
    resolved: &mut ResolvedInfo,
    results: &mut RunSummary,
) -> Result<(), ScenarioError> {
    let rbw = scenario
        .instrument
        .rbw_hz
        .expect("validated: sweep requires rbw");
    let seed = scenario.seed.expect("validated");

    for variant in variants {
        let points = sweep
            .amplitudes_nt
            .par_iter()
            .enumerate()
            .map(|(idx, &amp)| -> Result<(f64, f64), ScenarioError> {
                let mut spec = scenario.waveform.clone();
                spec.amplitude_nt = amp;
                let waveform = synthesize(&spec)?;
                let (clean, _) = clean_trace(variant, scenario, &waveform)?;
                let noise = scenario.noise.to_spec(stream_seed(
                    seed,
                    (variant.tag << 8) | STAGE_SWEEP,
                    idx as u64,
                ));
                let noisy = add_noise(&clean, &noise, scenario.instrument.path)?;
                let spectrum = psd(&noisy, rbw)?;
                let peak = peak_power(&spectrum, sweep.peak_freq_hz, sweep.peak_tol_hz)?;
                Ok((amp, peak))
            })
            .collect::<Result<Vec<_>, _>>()?;

        let name = format!("sweep_{}.{}", variant.label, format.extension());
        write_rows(
            &out_dir.join(&name),
            format,
            &["amplitude_nt", "peak_psd_v2_per_hz"],
            points.iter().map(|&(a, p)| vec![a, p]),
        )?;
        resolved.files.push(name);

        let fit = loglog_fit(&points)?;
        results.fits.insert(variant.label.into(), fit);
    }

    if let (Some(wm), Some(single)) = (results.fits.get("wm"), results.fits.get("single")) {
        results.slopes_relative_difference =
            Some((wm.slope - single.slope).abs() / single.slope.abs());
    }

    let name = format!("fits.{}", format.extension());
    let path = out_dir.join(&name);
    match format {
        OutputFormat::Csv => {
            let mut w = file_writer(&path)?;
            writeln_io(&mut w, "label,slope,intercept,r_squared", &path)?;
            for (label, fit) in &results.fits {
                writeln_io(
                    &mut w,
                    &format!("{},{},{},{}", label, fit.slope, fit.intercept, fit.r_squared),
                    &path,
                )?;
            }
        }
        OutputFormat::Jsonl => {
            let mut w = file_writer(&path)?;
            for (label, fit) in &results.fits {
                writeln_io(
                    &mut w,
                    &format!(
                        "{{\"label\":\"{}\",\"slope\":{},\"intercept\":{},\"r_squared\":{}}}",
                        label, fit.slope, fit.intercept, fit.r_squared
                    ),
                    &path,
                )?;
            }
        }
    }
    resolved.files.push(name);
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn run_resonance_scans(
    scenario: &Scenario,
    variants: &[Variant],
    cfg: &super::config::ResonanceScanConfig,
    out_dir: &Path,
    format: OutputFormat,
    resolved: &mut ResolvedInfo,
    results: &mut RunSummary,
) -> Result<(), ScenarioError> {
    let rabis = cfg
        .probe_rabi_sweep_hz
        .clone()
        .unwrap_or_else(|| vec![scenario.probe.rabi_plus_hz]);
    for variant in variants {
        for (k, &rabi) in rabis.iter().enumerate() {
            let mut probe = variant.probe.clone();
            probe.rabi_plus_hz = rabi;
            probe.rabi_minus_hz = rabi;
            let mut drives = variant.drives.clone();
            for d in drives.iter_mut() {
                if d.role == DriveRole::Probe {
                    *d = probe.clone();
                }
            }
            let setup = ScanSetup {
                scheme: &variant.scheme,
                drives: &drives,
                polarimeter: &scenario.polarimeter,
                susceptibility_scale: scenario.medium.susceptibility_scale,
            };
            let grid = symmetric_grid(cfg.halfspan_hz, cfg.n_points);
            let line = resonance_scan(&setup, &grid)?;
            let width = linewidth(&line)?;
            let key = format!("{}:omega{}={}", variant.label, k, rabi);
            results.linewidths_hz.insert(key, width);

            let name = format!("scan_{}_omega{}.{}", variant.label, k, format.extension());
            write_line_shape(&out_dir.join(&name), format, &line)?;
            resolved.files.push(name);
        }
    }

    let name = format!("linewidths.{}", format.extension());
    let path = out_dir.join(&name);
    let mut w = file_writer(&path)?;
    match format {
        OutputFormat::Csv => {
            writeln_io(&mut w, "key,linewidth_hz", &path)?;
            for (key, width) in &results.linewidths_hz {
                writeln_io(&mut w, &format!("{},{}", key, width), &path)?;
            }
        }
        OutputFormat::Jsonl => {
            for (key, width) in &results.linewidths_hz {
                writeln_io(
                    &mut w,
                    &format!("{{\"key\":\"{}\",\"linewidth_hz\":{}}}", key, width),
                    &path,
                )?;
            }
        }
    }
    resolved.files.push(name);
    Ok(())
}

/// Peak clean-signal amplitude ratio pumped (reservoir 0) over unpumped.
fn pumped_ratio(
    scenario: &Scenario,
    waveform: &Waveform,
    unpumped_fraction: f64,
) -> Result<f64, ScenarioError> {
    let peak_for = |fraction: f64| -> Result<f64, ScenarioError> {
        let scheme = scheme_with(scenario, None, Some(fraction))?;
        let wm = scenario
            .wave_mixing_drive()
            .expect("validated: pumped comparison requires wave mixing");
        let variant = Variant {
            label: "wm",
            scheme,
            drives: vec![scenario.probe_drive(), wm],
            probe: scenario.probe_drive(),
            tag: 2,
        };
        let (trace, _) = clean_trace(&variant, scenario, waveform)?;
        Ok(trace
            .samples
            .iter()
            .fold(0.0f64, |a, v| a.max(v.abs())))
    };
    let pumped = peak_for(0.0)?;
    let unpumped = peak_for(unpumped_fraction)?;
    Ok(pumped / unpumped)
}

// --- artifact writing --------------------------------------------------

fn file_writer(path: &Path) -> Result<std::io::BufWriter<std::fs::File>, ScenarioError> {
    let file = std::fs::File::create(path).map_err(|source| ScenarioError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    Ok(std::io::BufWriter::new(file))
}

fn writeln_io<W: Write>(w: &mut W, line: &str, path: &Path) -> Result<(), ScenarioError> {
    writeln!(w, "{line}").map_err(|source| ScenarioError::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn write_rows<I>(
    path: &Path,
    format: OutputFormat,
    columns: &[&str],
    rows: I,
) -> Result<(), ScenarioError>
where
    I: Iterator<Item = Vec<f64>>,
{
    let mut w = file_writer(path)?;
    match format {
        OutputFormat::Csv => {
            writeln_io(&mut w, &columns.join(","), path)?;
            for row in rows {
                let line = row
                    .iter()
                    .map(|v| v.to_string())
                    .collect::<Vec<_>>()
                    .join(",");
                writeln_io(&mut w, &line, path)?;
            }
        }
        OutputFormat::Jsonl => {
            for row in rows {
                let line = columns
                    .iter()
                    .zip(row.iter())
                    .map(|(c, v)| format!("\"{c}\":{v}"))
                    .collect::<Vec<_>>()
                    .join(",");
                writeln_io(&mut w, &format!("{{{line}}}"), path)?;
            }
        }
    }
    Ok(())
}

fn write_waveform(
    out_dir: &Path,
    waveform: &Waveform,
    format: OutputFormat,
    resolved: &mut ResolvedInfo,
) -> Result<(), ScenarioError> {
    let name = format!("waveform.{}", format.extension());
    let fs = waveform.sample_rate_hz();
    write_rows(
        &out_dir.join(&name),
        format,
        &["t_seconds", "b_nT"],
        waveform
            .samples_nt
            .iter()
            .enumerate()
            .map(|(k, b)| vec![k as f64 / fs, *b]),
    )?;
    resolved.files.push(name);
    Ok(())
}

fn write_trace(
    out_dir: &Path,
    label: &str,
    trace: &Trace,
    format: OutputFormat,
    resolved: &mut ResolvedInfo,
) -> Result<(), ScenarioError> {
    let name = format!("trace_{}.{}", label, format.extension());
    write_rows(
        &out_dir.join(&name),
        format,
        &["t_seconds", "volts"],
        trace
            .samples
            .iter()
            .enumerate()
            .map(|(k, v)| vec![trace.time_at(k), *v]),
    )?;
    resolved.files.push(name);
    Ok(())
}

fn write_spectrum(
    out_dir: &Path,
    label: &str,
    spectrum: &Spectrum,
    format: OutputFormat,
    resolved: &mut ResolvedInfo,
) -> Result<(), ScenarioError> {
    let name = format!("spectrum_{}.{}", label, format.extension());
    write_rows(
        &out_dir.join(&name),
        format,
        &["freq_hz", "psd_v2_per_hz"],
        spectrum
            .freq_bins_hz
            .iter()
            .zip(spectrum.psd_v2_per_hz.iter())
            .map(|(f, p)| vec![*f, *p]),
    )?;
    resolved.files.push(name);
    Ok(())
}

fn write_line_shape(
    path: &Path,
    format: OutputFormat,
    line: &LineShape,
) -> Result<(), ScenarioError> {
    write_rows(
        path,
        format,
        &["delta_b_hz", "volts"],
        line.delta_b_grid_hz
            .iter()
            .zip(line.signal_volts.iter())
            .map(|(d, v)| vec![*d, *v]),
    )
}
