//! `lf`: run the pipeline over a dataset, render synthetic datasets, and
//! score results against ground truth.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};
use lf_core::config::PipelineConfig;
use lf_core::eval::evaluate_dataset;
use lf_core::pipeline::run_pipeline;
use lf_core::synth::{write_dataset, SceneSpec};

#[derive(Parser)]
#[command(
    name = "lf",
    version,
    about = "Disparity and occlusion-free refocusing for linear camera arrays"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Process every frame of a dataset.
    ///
    /// Any config key can be overridden with `--key value` (or `--key=value`);
    /// a key given without a value is set to `true`. The worker count comes
    /// from the config file, then LF_WORKERS, then `--workers`.
    Run {
        #[arg(long)]
        config: PathBuf,
        #[arg(
            trailing_var_arg = true,
            allow_hyphen_values = true,
            value_name = "--KEY VALUE"
        )]
        overrides: Vec<String>,
    },
    /// Render a synthetic dataset with ground truth from a scene file.
    Synth {
        #[arg(long)]
        spec: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Score a run's output against a synthetic dataset.
    Eval {
        #[arg(long)]
        gt: PathBuf,
        #[arg(long)]
        result: PathBuf,
    },
}

/// Pairs up `--key value`, `--key=value` and bare `--flag` arguments.
fn parse_overrides(args: &[String]) -> Result<Vec<(String, String)>> {
    let mut out = Vec::new();
    let mut i = 0;
    while i < args.len() {
        let Some(key) = args[i].strip_prefix("--") else {
            bail!("expected --key, found {:?}", args[i]);
        };
        if key.is_empty() {
            bail!("empty option name");
        }
        if let Some((k, v)) = key.split_once('=') {
            out.push((k.to_string(), v.to_string()));
            i += 1;
        } else if i + 1 < args.len() && !args[i + 1].starts_with("--") {
            out.push((key.to_string(), args[i + 1].clone()));
            i += 2;
        } else {
            out.push((key.to_string(), "true".to_string()));
            i += 1;
        }
    }
    Ok(out)
}

fn run(config_path: &Path, raw_overrides: &[String]) -> Result<bool> {
    let overrides = parse_overrides(raw_overrides)?;
    let mut config = PipelineConfig::load(config_path, &overrides)
        .with_context(|| format!("invalid configuration {}", config_path.display()))?;
    if !overrides.iter().any(|(k, _)| k == "workers") {
        config.apply_env().context("invalid environment")?;
    }
    let workers = config
        .workers
        .map_or_else(|| "all cores".to_string(), |n| n.to_string());
    println!(
        "dataset {} -> {} ({workers} workers)",
        config.dataset.display(),
        config.output.display()
    );
    let report = run_pipeline(&config, |frame| match &frame.outcome {
        Ok(timings) => println!("frame {}: {timings}", frame.name),
        Err(e) => eprintln!("frame {} failed at {e}", frame.name),
    })?;
    let failed: Vec<String> = report
        .failures()
        .map(|(name, e)| format!("{name} ({})", e.stage.name()))
        .collect();
    println!(
        "{} of {} frames processed",
        report.succeeded(),
        report.frames.len()
    );
    if !failed.is_empty() {
        eprintln!("failed frames: {}", failed.join(", "));
    }
    Ok(failed.is_empty())
}

fn synth(spec_path: &Path, out: &Path, seed: u64) -> Result<()> {
    let text = std::fs::read_to_string(spec_path)
        .with_context(|| format!("cannot read {}", spec_path.display()))?;
    let spec = SceneSpec::parse(&text)
        .with_context(|| format!("invalid scene {}", spec_path.display()))?;
    write_dataset(&spec, seed, out)?;
    println!(
        "wrote {} frame(s) of {}x{}, {} views to {}",
        spec.frames,
        spec.rig.width,
        spec.rig.height,
        spec.rig.centers.len(),
        out.display()
    );
    Ok(())
}

fn eval(gt: &Path, result: &Path) -> Result<()> {
    let frames = evaluate_dataset(gt, result)?;
    for f in &frames {
        println!("{f}");
    }
    let n = frames.len() as f64;
    let bad = frames.iter().map(|f| f.bad_pixel_rate).sum::<f64>() / n;
    let gaps = frames.iter().map(|f| f.gap_fraction).sum::<f64>() / n;
    println!(
        "mean over {} frame(s): bad pixels {:.2}% | gaps {:.2}%",
        frames.len(),
        100.0 * bad,
        100.0 * gaps
    );
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome = match &cli.command {
        Command::Run { config, overrides } => run(config, overrides),
        Command::Synth { spec, out, seed } => synth(spec, out, *seed).map(|_| true),
        Command::Eval { gt, result } => eval(gt, result).map(|_| true),
    };
    match outcome {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
