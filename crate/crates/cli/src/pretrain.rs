use std::fs;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::Serialize;
use voco::eval::render_loss_curve;
use voco::train::{
    checkpoint_path, run as train, RunOutcome, TrainConfig, DIAGNOSTICS_CSV, FINAL_CHECKPOINT, LOSS_CSV,
};

use crate::failure::Failure;

/// Everything needed to repeat a run; written before training and never rewritten.
#[derive(Serialize)]
struct RunManifest<'a> {
    version: &'a str,
    seed: u64,
    started_unix_ms: u128,
    resumed_from: Option<&'a Path>,
    config: &'a TrainConfig,
    outputs: Outputs,
}

#[derive(Serialize)]
struct Outputs {
    config_snapshot: PathBuf,
    loss_csv: PathBuf,
    diagnostics_csv: PathBuf,
    loss_plot: PathBuf,
    checkpoints: PathBuf,
    final_checkpoint: PathBuf,
}

pub const LOSS_PLOT: &str = "loss.svg";

fn manifest_path(out: &Path) -> PathBuf {
    let first = out.join("run.json");
    if !first.exists() {
        return first;
    }
    (1..)
        .map(|k| out.join(format!("run-resume-{k}.json")))
        .find(|p| !p.exists())
        .expect("unbounded search")
}

pub fn run(config_path: &Path, out: &Path, resume: Option<&Path>, deterministic: bool) -> Result<(), Failure> {
    let mut config = TrainConfig::from_file(config_path)?;
    config.deterministic |= deterministic;
    fs::create_dir_all(out).map_err(|e| Failure::io(out, e))?;

    let snapshot = out.join("config.toml");
    let started_unix_ms = SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map_or(0, |d| d.as_millis());
    let manifest = RunManifest {
        version: crate::VERSION,
        seed: config.seed,
        started_unix_ms,
        resumed_from: resume,
        config: &config,
        outputs: Outputs {
            config_snapshot: snapshot.clone(),
            loss_csv: out.join(LOSS_CSV),
            diagnostics_csv: out.join(DIAGNOSTICS_CSV),
            loss_plot: out.join(LOSS_PLOT),
            checkpoints: checkpoint_path(out, 0).parent().expect("has parent").to_path_buf(),
            final_checkpoint: out.join(FINAL_CHECKPOINT),
        },
    };
    let path = manifest_path(out);
    fs::write(&path, serde_json::to_string_pretty(&manifest).expect("manifest serializes"))
        .map_err(|e| Failure::io(&path, e))?;
    if resume.is_none() {
        fs::write(&snapshot, config.to_toml_string()).map_err(|e| Failure::io(&snapshot, e))?;
    }

    let total = config.steps;
    let every = (total / 20).max(1);
    let outcome = train(&config, out, resume, |r| {
        if r.step % every == 0 || r.step + 1 == total {
            eprintln!(
                "step {:>6}/{total} lr {:.3e} L_total {:.5} L_pred {:.5} L_reg {:.5} mean|s| {:.4}",
                r.step, r.lr, r.l_total, r.l_pred, r.l_reg, r.mean_abs_s
            );
        }
    })?;
    match outcome {
        RunOutcome::AlreadyComplete(state) => {
            eprintln!("run already complete at step {}; nothing to do", state.step);
        }
        RunOutcome::Completed(state) => {
            render_loss_curve(&out.join(LOSS_PLOT), &state.history).map_err(Failure::runtime)?;
            eprintln!("finished {} steps", state.step);
        }
    }
    println!("{}", out.join(FINAL_CHECKPOINT).display());
    Ok(())
}
