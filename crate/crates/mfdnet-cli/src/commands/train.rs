//! `train`: run (or resume) the optimizer and leave three artifacts in the
//! output directory: `last.ckpt`, `best.ckpt` (highest mean PSNR over the
//! epoch's pairs), and an append-only `history.txt` loss log.

use super::AssetArgs;
use crate::config::{AppConfig, Overrides};
use crate::{io_error, pngio, CliError, CliResult};
use mfdnet_core::data::PairSampler;
use mfdnet_core::model::{Checkpoint, Mfdnet};
use mfdnet_core::train::{history_to_text, train};
use std::path::{Path, PathBuf};

#[derive(clap::Args, Debug)]
pub struct TrainArgs {
    #[command(flatten)]
    pub assets: AssetArgs,

    /// Output directory for checkpoints and the loss history.
    #[arg(long, value_name = "DIR")]
    pub out: PathBuf,

    /// Continue from this checkpoint (its model config and optimizer state
    /// replace the configured model; training runs up to train.steps total).
    #[arg(long, value_name = "CKPT")]
    pub resume: Option<PathBuf>,

    #[command(flatten)]
    pub overrides: Overrides,
}

pub fn run(args: &TrainArgs) -> CliResult<()> {
    let cfg = AppConfig::layered(args.overrides.config.as_deref(), &args.overrides)?;
    cfg.validate()?;
    let set = args.assets.resolve(cfg.data.patch, cfg.train.seed)?;
    let sampler = PairSampler::new(set.bases, set.flares, cfg.data.clone(), cfg.train.seed)?;

    let (mut model, trainer_blob) = match &args.resume {
        Some(path) => {
            let ckpt = read_checkpoint(path)?;
            let blob = ckpt.trainer.clone().ok_or_else(|| {
                CliError::Usage(format!(
                    "{}: checkpoint has no optimizer state to resume from",
                    path.display()
                ))
            })?;
            (ckpt.build_model()?, Some(blob))
        }
        None => (Mfdnet::<f64>::new(&cfg.model, cfg.train.seed)?, None),
    };

    let outcome = train(&mut model, &sampler, &cfg.train, trainer_blob.as_deref())?;

    std::fs::create_dir_all(&args.out).map_err(|e| io_error(&args.out, e))?;
    pngio::write_atomic(&args.out.join("last.ckpt"), &outcome.last.to_bytes())?;
    pngio::write_atomic(&args.out.join("best.ckpt"), &outcome.best.to_bytes())?;
    append_history(&args.out.join("history.txt"), &history_to_text(&outcome.history))?;

    match (outcome.history.first(), outcome.history.last()) {
        (Some(f), Some(l)) => println!(
            "trained to step {} (this run: {} steps, loss {:.6} -> {:.6}); best mean PSNR {:.2} dB",
            cfg.train.steps,
            outcome.history.len(),
            f.total,
            l.total,
            outcome.best_psnr
        ),
        _ => println!(
            "no steps taken (already at step {}); best mean PSNR {:.2} dB",
            cfg.train.steps, outcome.best_psnr
        ),
    }
    println!("wrote last.ckpt, best.ckpt, history.txt to {}", args.out.display());
    Ok(())
}

pub fn read_checkpoint(path: &Path) -> CliResult<Checkpoint<f64>> {
    let bytes = std::fs::read(path).map_err(|e| io_error(path, e))?;
    Checkpoint::from_bytes(&bytes)
        .map_err(|e| CliError::Runtime(format!("{}: {e}", path.display())))
}

/// Keep the history log append-only across resumed runs: new records are
/// concatenated after any existing ones (single header line kept first).
fn append_history(path: &Path, new_text: &str) -> CliResult<()> {
    let combined = match std::fs::read_to_string(path) {
        Ok(existing) => {
            let body = new_text
                .split_once('\n')
                .map(|(_, rest)| rest)
                .unwrap_or("");
            format!("{existing}{body}")
        }
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => new_text.to_string(),
        Err(e) => return Err(io_error(path, e)),
    };
    pngio::write_atomic(path, combined.as_bytes())
}
