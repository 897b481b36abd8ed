//! `eval`: score `NAME_corrupted.png` / `NAME_gt.png` pairs with a
//! checkpoint. Each corrupted image is padded reflectively to the model's
//! extent divisor, restored, cropped back, and blended with its own
//! saturated highlights before scoring against the ground truth.

use crate::config::Overrides;
use crate::{pngio, CliResult};
use mfdnet_core::metrics::{score_pair, MetricsReport};
use mfdnet_core::model::{blend_light_source, DEFAULT_SATURATION_THRESHOLD};
use std::fmt::Write as _;
use std::path::PathBuf;

#[derive(clap::Args, Debug)]
pub struct EvalArgs {
    /// Checkpoint to evaluate.
    #[arg(long, value_name = "CKPT")]
    pub ckpt: PathBuf,

    /// Directory of *_corrupted.png / *_gt.png pairs.
    #[arg(long, value_name = "DIR")]
    pub dir: PathBuf,

    /// Report file (also printed to stdout).
    #[arg(long, value_name = "FILE")]
    pub out: Option<PathBuf>,

    /// Highlight-preservation threshold in (0, 1].
    #[arg(long, value_name = "T", default_value_t = DEFAULT_SATURATION_THRESHOLD)]
    pub sat_threshold: f64,

    #[command(flatten)]
    pub overrides: Overrides,
}

pub fn run(args: &EvalArgs) -> CliResult<()> {
    // The model comes from the checkpoint, but config files are still
    // parsed so bad keys fail loudly here too.
    crate::config::AppConfig::layered(args.overrides.config.as_deref(), &args.overrides)?;
    if !(args.sat_threshold > 0.0 && args.sat_threshold <= 1.0) {
        return Err(crate::CliError::Usage(format!(
            "--sat-threshold must be in (0, 1], got {}",
            args.sat_threshold
        )));
    }
    let ckpt = super::train::read_checkpoint(&args.ckpt)?;
    let model = ckpt.build_model()?;
    let divisor = model.cfg.divisor();
    let pairs = crate::assets::load_eval_pairs(&args.dir)?;

    let mut names = Vec::with_capacity(pairs.len());
    let mut scores = Vec::with_capacity(pairs.len());
    for pair in &pairs {
        let (padded, h, w) = pngio::pad_to_multiple_reflect(&pair.corrupted, divisor)?;
        let deflared = pngio::crop(&model.deflare(&padded)?, h, w);
        let blended = blend_light_source(&pair.corrupted, &deflared, args.sat_threshold)?;
        names.push(pair.name.clone());
        scores.push(score_pair(&blended, &pair.gt)?);
    }
    let report = MetricsReport::from_scores(scores);
    let text = render_report(&names, &report);
    print!("{text}");
    if let Some(out) = &args.out {
        pngio::write_atomic(out, text.as_bytes())?;
    }
    Ok(())
}

pub fn render_report(names: &[String], report: &MetricsReport) -> String {
    let mut text = String::from("# pair  psnr_db  ssim\n");
    for (name, s) in names.iter().zip(&report.per_image) {
        writeln!(text, "{name}  {:.4}  {:.6}", s.psnr, s.ssim).unwrap();
    }
    writeln!(text, "mean  {:.4}  {:.6}", report.mean_psnr, report.mean_ssim).unwrap();
    text
}
