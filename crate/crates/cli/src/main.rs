//! `nmor` — run NMOR magnetometry scenarios from the command line.
//!
//! ```text
//! nmor run <config.toml|manifest.json> [--seed N] [--out-dir DIR] [--format csv|jsonl]
//! nmor preset <name> [--emit-config] [--seed N] [--out-dir DIR] [--format csv|jsonl]
//! nmor sweep <config> --param <dotted.path> --values v1,v2,... [--seed N] [--out-dir DIR]
//! ```
//!
//! Exit codes: 0 success, 2 validation failure, 1 runtime/I-O failure.
//! Failures print a single machine-readable JSON object to stderr.

use clap::{Parser, Subcommand};
use std::path::PathBuf;
use std::process::ExitCode;

use nmor_core::scenarios::{preset, run, OutputFormat, RunOptions, Scenario, ScenarioError};

#[derive(Parser)]
#[command(
    name = "nmor",
    version,
    about = "Simulator and measurement pipeline for wave-mixing-enhanced NMOR magnetometry"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, clap::ValueEnum)]
enum FormatArg {
    Csv,
    Jsonl,
}

impl From<FormatArg> for OutputFormat {
    fn from(f: FormatArg) -> Self {
        match f {
            FormatArg::Csv => OutputFormat::Csv,
            FormatArg::Jsonl => OutputFormat::Jsonl,
        }
    }
}

#[derive(clap::Args, Clone)]
struct CommonOpts {
    /// Override the scenario seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory (default: scenario's out_dir, else runs/<id>).
    #[arg(long)]
    out_dir: Option<PathBuf>,
    /// Artifact format.
    #[arg(long, value_enum)]
    format: Option<FormatArg>,
}

impl CommonOpts {
    fn to_run_options(&self) -> RunOptions {
        RunOptions {
            out_dir: self.out_dir.clone(),
            seed: self.seed,
            format: self.format.map(Into::into),
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Execute a scenario config (TOML) or rerun a manifest (JSON).
    Run {
        config: PathBuf,
        #[command(flatten)]
        opts: CommonOpts,
    },
    /// Execute a named preset (fig2, fig3, fig4, s2, s3, pumped).
    Preset {
        name: String,
        /// Print the resolved scenario TOML to stdout instead of running.
        #[arg(long)]
        emit_config: bool,
        #[command(flatten)]
        opts: CommonOpts,
    },
    /// Rerun a scenario once per value of a single overridden parameter.
    Sweep {
        config: PathBuf,
        /// Dotted key path, e.g. waveform.amplitude_nt or probe.rabi_plus_hz.
        #[arg(long)]
        param: String,
        /// Comma-separated values substituted at the key path.
        #[arg(long, value_delimiter = ',')]
        values: Vec<String>,
        #[command(flatten)]
        opts: CommonOpts,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            let payload = serde_json::json!({
                "error": {
                    "kind": err.kind(),
                    "path": err.path(),
                    "message": err.to_string(),
                }
            });
            eprintln!("{payload}");
            if err.kind() == "validation" {
                ExitCode::from(2)
            } else {
                ExitCode::FAILURE
            }
        }
    }
}

fn dispatch(cli: Cli) -> Result<(), ScenarioError> {
    match cli.command {
        Command::Run { config, opts } => {
            let scenario = Scenario::load(&config)?;
            let result = run(&scenario, &opts.to_run_options())?;
            print_outcome(&result);
            Ok(())
        }
        Command::Preset {
            name,
            emit_config,
            opts,
        } => {
            let mut scenario = preset(&name)?;
            if emit_config {
                if let Some(seed) = opts.seed {
                    scenario.seed = Some(seed);
                }
                if let Some(format) = opts.format {
                    scenario.out_format = format.into();
                }
                print!("{}", scenario.to_toml_string()?);
                return Ok(());
            }
            let result = run(&scenario, &opts.to_run_options())?;
            print_outcome(&result);
            Ok(())
        }
        Command::Sweep {
            config,
            param,
            values,
            opts,
        } => {
            let scenario = Scenario::load(&config)?;
            sweep(&scenario, &param, &values, &opts)
        }
    }
}

fn print_outcome(result: &nmor_core::scenarios::RunResult) {
    println!(
        "wrote {} artifacts to {}",
        result.manifest.resolved.files.len() + 1,
        result.out_dir.display()
    );
    for file in &result.manifest.resolved.files {
        println!("  {file}");
    }
    println!("  manifest.json");
}

fn sweep(
    scenario: &Scenario,
    param: &str,
    values: &[String],
    opts: &CommonOpts,
) -> Result<(), ScenarioError> {
    if values.is_empty() {
        return Err(ScenarioError::Invalid {
            path: "--values".into(),
            message: "at least one value required".into(),
        });
    }
    let base_dir = opts
        .out_dir
        .clone()
        .or_else(|| scenario.out_dir.clone())
        .unwrap_or_else(|| PathBuf::from("runs").join(format!("{}_sweep", scenario.id)));

    let mut summary = Vec::new();
    for (idx, raw) in values.iter().enumerate() {
        let patched = patch_scenario(scenario, param, raw)?;
        let sub_dir = base_dir.join(format!("point_{idx:03}"));
        let run_opts = RunOptions {
            out_dir: Some(sub_dir.clone()),
            seed: opts.seed,
            format: opts.format.map(Into::into),
        };
        let result = run(&patched, &run_opts)?;
        println!("{param} = {raw} -> {}", sub_dir.display());
        summary.push((raw.clone(), sub_dir));
        drop(result);
    }

    let index_path = base_dir.join("sweep_index.csv");
    let mut text = String::from("value,out_dir\n");
    for (value, dir) in &summary {
        text.push_str(&format!("{},{}\n", value, dir.display()));
    }
    std::fs::write(&index_path, text).map_err(|source| ScenarioError::Io {
        path: index_path,
        source,
    })?;
    Ok(())
}

/// Applies `--param path --values v` by editing the scenario's JSON image;
/// the result is re-validated like any other config.
fn patch_scenario(
    scenario: &Scenario,
    param: &str,
    raw_value: &str,
) -> Result<Scenario, ScenarioError> {
    let mut doc =
        serde_json::to_value(scenario).map_err(|e| ScenarioError::Parse(e.to_string()))?;

    let mut cursor = &mut doc;
    for key in param.split('.') {
        cursor = cursor
            .as_object_mut()
            .and_then(|map| map.get_mut(key))
            .ok_or_else(|| ScenarioError::Invalid {
                path: param.to_string(),
                message: format!("no such config key (failed at `{key}`)"),
            })?;
    }
    *cursor = parse_value(raw_value);

    serde_json::from_value(doc).map_err(|e| ScenarioError::Invalid {
        path: param.to_string(),
        message: e.to_string(),
    })
}

fn parse_value(raw: &str) -> serde_json::Value {
    if let Ok(b) = raw.parse::<bool>() {
        return serde_json::Value::Bool(b);
    }
    if let Ok(i) = raw.parse::<i64>() {
        return serde_json::Value::Number(i.into());
    }
    if let Ok(f) = raw.parse::<f64>() {
        if let Some(n) = serde_json::Number::from_f64(f) {
            return serde_json::Value::Number(n);
        }
    }
    serde_json::Value::String(raw.to_string())
}
