use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use flowlab_core::pipeline::{Run, RunConfig, Stage, StageManifest};
use flowlab_core::synth::{write_capture, SynthConfig};
use flowlab_core::Error;

/// Top-level config keys that may be set as plain flags, e.g. `--seed 3`.
const TOP_LEVEL: [&str; 5] = ["seed", "input", "output_dir", "allow_temporal_cv", "evaluate_on"];

#[derive(Parser, Debug)]
#[command(name = "flowlab", version, about = "Flow metering and traffic classification pipeline")]
#[command(after_help = "Any config leaf can be overridden with a dotted flag, e.g. --meter.idle_timeout 15.\n\
The config file defaults to $FLOWLAB_CONFIG when --config is absent.")]
struct Cli {
    /// JSON run config.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Write into this directory instead of <output_dir>/run-<hash>.
    #[arg(long, global = true)]
    run_dir: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Meter the input capture into flow records.
    Meter,
    /// Data-quality report on the metered flows.
    Diagnose,
    /// Label, clean and engineer features.
    Prepare,
    /// Partition the prepared dataset.
    Split,
    /// Fit the transform chain on the training partition.
    Transform,
    /// Fit the model, with grid search when configured.
    Train,
    /// Score the model on the evaluation partition.
    Evaluate,
    /// Importance tables and partial dependence on validation rows.
    Explain,
    /// Every stage in order.
    Pipeline,
    /// Write the synthetic demo capture.
    Synth {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = SynthConfig::default().flows)]
        flows: usize,
        #[arg(long, default_value_t = SynthConfig::default().seed)]
        seed: u64,
    },
}

/// Pull `--a.b value` / `--a.b=value` pairs (and the top-level keys) out of
/// argv before clap sees it.
fn split_overrides(args: Vec<String>) -> Result<(Vec<String>, Vec<(String, String)>), String> {
    let mut rest = Vec::new();
    let mut overrides = Vec::new();
    let mut it = args.into_iter();
    while let Some(a) = it.next() {
        let Some(flag) = a.strip_prefix("--") else {
            rest.push(a);
            continue;
        };
        let (key, inline) = match flag.split_once('=') {
            Some((k, v)) => (k.to_string(), Some(v.to_string())),
            None => (flag.to_string(), None),
        };
        if !(key.contains('.') || TOP_LEVEL.contains(&key.as_str())) {
            rest.push(a);
            continue;
        }
        let value = match inline {
            Some(v) => v,
            None => it.next().ok_or_else(|| format!("--{key} needs a value"))?,
        };
        overrides.push((key, value));
    }
    Ok((rest, overrides))
}

fn summary(m: &StageManifest, run: &Run) {
    let outputs: Vec<&str> = m.outputs.keys().map(String::as_str).collect();
    println!("{}: {} -> {}", m.stage.as_str(), outputs.join(", "), run.dir.display());
}

fn execute(cli: Cli, overrides: &[(String, String)]) -> Result<(), Error> {
    if let Command::Synth { out, flows, seed } = &cli.command {
        let n = write_capture(out, &SynthConfig { flows: *flows, seed: *seed, ..Default::default() })?;
        println!("synth: {n} packets -> {}", out.display());
        return Ok(());
    }
    let cfg = RunConfig::load(cli.config.as_deref(), overrides)?;
    let mut run = Run::new(cfg)?;
    if let Some(d) = cli.run_dir {
        run = run.with_dir(d);
    }
    let stage = match cli.command {
        Command::Meter => Stage::Meter,
        Command::Diagnose => Stage::Diagnose,
        Command::Prepare => Stage::Prepare,
        Command::Split => Stage::Split,
        Command::Transform => Stage::Transform,
        Command::Train => Stage::Train,
        Command::Evaluate => Stage::Evaluate,
        Command::Explain => Stage::Explain,
        Command::Pipeline => {
            for m in run.run_all()? {
                summary(&m, &run);
            }
            return Ok(());
        }
        Command::Synth { .. } => unreachable!(),
    };
    let m = run.run_stage(stage)?;
    summary(&m, &run);
    if stage == Stage::Evaluate {
        println!("{}", serde_json::to_string(&m.details).unwrap_or_default());
    }
    Ok(())
}

fn main() -> ExitCode {
    let (args, overrides) = match split_overrides(std::env::args().collect()) {
        Ok(v) => v,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(1);
        }
    };
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match execute(cli, &overrides) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_validation() { 1 } else { 2 })
        }
    }
}
