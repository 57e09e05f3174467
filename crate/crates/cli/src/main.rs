use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use sensoraudit_cli::{
    cmd_audit, cmd_eval, cmd_experiment, cmd_split, cmd_synth, cmd_train, CliError, CliResult, RunConfig, CHECKPOINT_FILE,
    MANIFEST_FILE,
};

#[derive(Parser)]
#[command(name = "sensoraudit", version, about = "Sensor-attention gait classifier and dataset auditor")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// JSON run config; defaults apply when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    /// Master seed, overriding the config.
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, global = true)]
    manifest: Option<PathBuf>,
    #[arg(long, global = true)]
    checkpoint: Option<PathBuf>,
    /// Split file from `split`; recomputed from the config when omitted.
    #[arg(long, global = true)]
    splits: Option<PathBuf>,
    /// Which split to score: train, val, test or all.
    #[arg(long, global = true, default_value = "test")]
    split: String,
}

#[derive(Subcommand, Clone, Copy)]
enum Command {
    /// Generate a synthetic cohort with a planted laterality anomaly.
    Synth,
    /// Patient-level train/val/test split of a manifest.
    Split,
    /// Train a model with early stopping.
    Train,
    /// Score a split and compute metrics with bootstrap CIs.
    Eval,
    /// Sensor Importance Map, laterality flags and SVG chart.
    Audit,
    /// Run the planted-confound experiment end to end.
    Experiment,
}

fn need<'a>(path: &'a Option<PathBuf>, flag: &str) -> CliResult<&'a Path> {
    path.as_deref()
        .ok_or_else(|| CliError::Usage(format!("this command requires --{flag}")))
}

fn run(cli: &Cli) -> CliResult<()> {
    let mut cfg = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg = cfg.with_seed(seed);
    }
    let out = cli.out.as_path();
    let splits = cli.splits.as_deref();
    match cli.command {
        Command::Synth => {
            let m = cmd_synth(&cfg, out)?;
            println!("wrote {} trials to {}", m.trials.len(), out.join(MANIFEST_FILE).display());
        }
        Command::Split => {
            let s = cmd_split(&cfg, need(&cli.manifest, "manifest")?, out)?;
            println!("train {} / val {} / test {} patients", s.train.len(), s.val.len(), s.test.len());
        }
        Command::Train => {
            let (_, h) = cmd_train(&cfg, need(&cli.manifest, "manifest")?, splits, out)?;
            println!(
                "best epoch {} of {} (val loss {:.4}); checkpoint {}",
                h.best_epoch + 1,
                h.val_loss.len(),
                h.best_val_loss,
                out.join(CHECKPOINT_FILE).display()
            );
        }
        Command::Eval => {
            let r = cmd_eval(
                &cfg,
                need(&cli.checkpoint, "checkpoint")?,
                need(&cli.manifest, "manifest")?,
                splits,
                &cli.split,
                out,
            )?;
            println!(
                "{} trials: ROC-AUC {:.3} ({:.3}-{:.3}), PR-AUC {:.3}",
                r.n, r.roc_auc.point, r.roc_auc.ci_low, r.roc_auc.ci_high, r.pr_auc.point
            );
        }
        Command::Audit => {
            let a = cmd_audit(
                &cfg,
                need(&cli.checkpoint, "checkpoint")?,
                need(&cli.manifest, "manifest")?,
                splits,
                &cli.split,
                out,
            )?;
            for s in &a.map.sensors {
                println!("{:>3} {:.3} ({:.3}-{:.3})", s.sensor, s.mean, s.ci_low, s.ci_high);
            }
            for f in &a.flags {
                println!("{}: {}", f.severity.as_str(), f.rationale);
            }
            println!("report {}", a.paths.json.display());
        }
        Command::Experiment => {
            let s = cmd_experiment(&cfg, out)?;
            print!("{}", sensoraudit_cli::summary_table(&s));
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
