pub mod bench;
pub mod eval;
pub mod infer;
pub mod synth;
pub mod train;

use crate::assets;
use crate::{CliError, CliResult};
use mfdnet_core::data::{generate_base, generate_flare, FlareAsset, FlareKind};
use mfdnet_core::rng::Rng;
use mfdnet_core::tensor::Tensor;
use std::path::PathBuf;

/// Asset sources shared by `synth` and `train`: read PNGs from a directory
/// or generate a procedural set (for self-contained runs without bundled
/// images). Exactly one source per asset class must be chosen.
#[derive(clap::Args, Debug, Clone)]
pub struct AssetArgs {
    /// Directory of base (flare-free) PNG images.
    #[arg(long, value_name = "DIR", conflicts_with = "gen_bases")]
    pub bases: Option<PathBuf>,

    /// Generate this many procedural base images instead of reading a
    /// directory.
    #[arg(long, value_name = "N")]
    pub gen_bases: Option<usize>,

    /// Directory with flare PNGs under scattering/ and reflective/.
    #[arg(long, value_name = "DIR", conflicts_with = "gen_flares")]
    pub flares: Option<PathBuf>,

    /// Generate this many procedural flare images (alternating kinds)
    /// instead of reading a directory.
    #[arg(long, value_name = "N")]
    pub gen_flares: Option<usize>,
}

impl AssetArgs {
    /// Load or generate the assets at extent `side` x `side` (generation
    /// only; files keep their own extents). The generated sets depend only
    /// on `seed`.
    pub fn resolve(&self, side: usize, seed: u64) -> CliResult<AssetSet> {
        let bases = match (&self.bases, self.gen_bases) {
            (Some(dir), None) => assets::load_bases(dir)?,
            (None, Some(n)) if n > 0 => (0..n)
                .map(|j| generate_base(side, side, asset_seed(seed, "base", j)))
                .collect(),
            (None, Some(_)) => {
                return Err(CliError::Usage("--gen-bases must be at least 1".into()));
            }
            (None, None) => {
                return Err(CliError::Usage(
                    "base images required: pass --bases DIR or --gen-bases N".into(),
                ));
            }
            (Some(_), Some(_)) => unreachable!("clap conflicts_with"),
        };
        let flares = match (&self.flares, self.gen_flares) {
            (Some(dir), None) => assets::load_flares(dir)?,
            (None, Some(n)) if n > 0 => (0..n)
                .map(|j| {
                    let kind = if j % 2 == 0 {
                        FlareKind::Scattering
                    } else {
                        FlareKind::Reflective
                    };
                    generate_flare(kind, side, side, asset_seed(seed, "flare", j))
                })
                .collect(),
            (None, Some(_)) => {
                return Err(CliError::Usage("--gen-flares must be at least 1".into()));
            }
            (None, None) => {
                return Err(CliError::Usage(
                    "flare images required: pass --flares DIR or --gen-flares N".into(),
                ));
            }
            (Some(_), Some(_)) => unreachable!("clap conflicts_with"),
        };
        Ok(AssetSet { bases, flares })
    }
}

pub struct AssetSet {
    pub bases: Vec<Tensor<f64>>,
    pub flares: Vec<FlareAsset<f64>>,
}

fn asset_seed(seed: u64, class: &str, index: usize) -> u64 {
    Rng::from_label(seed, &format!("cli.asset.{class}.{index}")).next_u64()
}
