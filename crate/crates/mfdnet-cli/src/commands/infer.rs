//! `infer`: restore one image. The input is padded reflectively to the
//! model's extent divisor, restored, cropped back to its original size, and
//! its saturated highlights (interior of the thresholded mask) are copied
//! through verbatim.

use crate::config::Overrides;
use crate::{pngio, CliError, CliResult};
use mfdnet_core::model::{blend_light_source, DEFAULT_SATURATION_THRESHOLD};
use std::path::PathBuf;

#[derive(clap::Args, Debug)]
pub struct InferArgs {
    /// Checkpoint to run.
    #[arg(long, value_name = "CKPT")]
    pub ckpt: PathBuf,

    /// Input PNG (any size).
    #[arg(long, value_name = "PNG")]
    pub input: PathBuf,

    /// Output PNG (same size as the input).
    #[arg(long, value_name = "PNG")]
    pub output: PathBuf,

    /// Highlight-preservation threshold in (0, 1]; 1.0 disables blending.
    #[arg(long, value_name = "T", default_value_t = DEFAULT_SATURATION_THRESHOLD)]
    pub sat_threshold: f64,

    /// Also write an input-vs-output comparison strip here.
    #[arg(long, value_name = "PNG")]
    pub compare: Option<PathBuf>,

    #[command(flatten)]
    pub overrides: Overrides,
}

pub fn run(args: &InferArgs) -> CliResult<()> {
    crate::config::AppConfig::layered(args.overrides.config.as_deref(), &args.overrides)?;
    if !(args.sat_threshold > 0.0 && args.sat_threshold <= 1.0) {
        return Err(CliError::Usage(format!(
            "--sat-threshold must be in (0, 1], got {}",
            args.sat_threshold
        )));
    }
    let ckpt = super::train::read_checkpoint(&args.ckpt)?;
    let model = ckpt.build_model()?;
    let input = pngio::load_png(&args.input)?;
    let (padded, h, w) = pngio::pad_to_multiple_reflect(&input, model.cfg.divisor())?;
    let deflared = pngio::crop(&model.deflare(&padded)?, h, w);
    let blended = blend_light_source(&input, &deflared, args.sat_threshold)?;
    pngio::save_png(&args.output, &blended)?;
    if let Some(path) = &args.compare {
        pngio::save_png(path, &pngio::side_by_side(&[&input, &blended])?)?;
    }
    println!(
        "restored {} ({w}x{h}) -> {}",
        args.input.display(),
        args.output.display()
    );
    Ok(())
}
