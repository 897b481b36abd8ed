//! `synth`: write (corrupted, ground-truth) PNG pairs plus a manifest.
//!
//! Output names follow the evaluation convention (`pair_0000_corrupted.png`
//! / `pair_0000_gt.png`), so a synthesized directory feeds `eval` directly.
//! The manifest records the seed and each pair's draw so a run can be
//! audited and reproduced.

use super::AssetArgs;
use crate::config::{AppConfig, Overrides};
use crate::{io_error, pngio, CliError, CliResult};
use mfdnet_core::data::PairSampler;
use std::fmt::Write as _;
use std::path::PathBuf;

#[derive(clap::Args, Debug)]
pub struct SynthArgs {
    #[command(flatten)]
    pub assets: AssetArgs,

    /// Output directory (created if missing).
    #[arg(long, value_name = "DIR")]
    pub out: PathBuf,

    /// Number of pairs to write.
    #[arg(long, value_name = "N", default_value_t = 4)]
    pub count: usize,

    /// Seed for asset generation, pair draws, and augmentation.
    #[arg(long, value_name = "S", default_value_t = 0)]
    pub seed: u64,

    #[command(flatten)]
    pub overrides: Overrides,
}

pub fn run(args: &SynthArgs) -> CliResult<()> {
    let cfg = AppConfig::layered(args.overrides.config.as_deref(), &args.overrides)?;
    cfg.data.validate().map_err(CliError::from)?;
    if args.count == 0 {
        return Err(CliError::Usage("--count must be at least 1".into()));
    }
    let set = args.assets.resolve(cfg.data.patch, args.seed)?;
    let mut data_cfg = cfg.data.clone();
    data_cfg.epoch_len = args.count;
    let sampler = PairSampler::new(set.bases, set.flares, data_cfg, args.seed)?;

    std::fs::create_dir_all(&args.out).map_err(|e| io_error(&args.out, e))?;
    let mut manifest = String::new();
    writeln!(manifest, "# synthesized flare pairs").unwrap();
    writeln!(manifest, "seed = {}", args.seed).unwrap();
    writeln!(manifest, "patch = {}", cfg.data.patch).unwrap();
    writeln!(manifest, "count = {}", args.count).unwrap();
    writeln!(manifest, "augment = {}", cfg.data.augment).unwrap();
    writeln!(manifest, "# pair  base_index  flare_index  gamma").unwrap();
    for i in 0..args.count {
        let sample = sampler.pair(i)?;
        let name = format!("pair_{i:04}");
        pngio::save_png(&args.out.join(format!("{name}_corrupted.png")), &sample.corrupted)?;
        pngio::save_png(&args.out.join(format!("{name}_gt.png")), &sample.gt)?;
        writeln!(
            manifest,
            "{name}  {}  {}  {}",
            sample.base_index, sample.flare_index, sample.gamma
        )
        .unwrap();
    }
    pngio::write_atomic(&args.out.join("manifest.txt"), manifest.as_bytes())?;
    println!(
        "wrote {} pairs and manifest.txt to {}",
        args.count,
        args.out.display()
    );
    Ok(())
}
