//! Directory conventions for image assets.
//!
//! - Base images: a flat directory of PNGs.
//! - Flare images: `scattering/` and `reflective/` subdirectories of PNGs
//!   (either may be absent; at least one image is required overall).
//! - Evaluation pairs: `NAME_corrupted.png` next to `NAME_gt.png`.

use crate::{io_error, pngio, CliError, CliResult};
use mfdnet_core::data::{FlareAsset, FlareKind};
use mfdnet_core::tensor::Tensor;
use std::path::{Path, PathBuf};

/// All PNG files directly inside `dir`, sorted by file name so every run
/// sees the same order.
pub fn list_pngs(dir: &Path) -> CliResult<Vec<PathBuf>> {
    let mut out = Vec::new();
    let entries = std::fs::read_dir(dir).map_err(|e| io_error(dir, e))?;
    for entry in entries {
        let entry = entry.map_err(|e| io_error(dir, e))?;
        let path = entry.path();
        if path.extension().is_some_and(|e| e.eq_ignore_ascii_case("png")) && path.is_file() {
            out.push(path);
        }
    }
    out.sort();
    Ok(out)
}

/// Load every base PNG in `dir`. An empty directory is a usage error.
pub fn load_bases(dir: &Path) -> CliResult<Vec<Tensor<f64>>> {
    let paths = list_pngs(dir)?;
    if paths.is_empty() {
        return Err(CliError::Usage(format!(
            "{}: no base images (*.png) found",
            dir.display()
        )));
    }
    paths.iter().map(|p| pngio::load_png(p)).collect()
}

/// Load flare PNGs from the `scattering/` and `reflective/` subdirectories
/// of `dir`, tagging each with its kind. No flares at all is a usage error.
pub fn load_flares(dir: &Path) -> CliResult<Vec<FlareAsset<f64>>> {
    let mut out = Vec::new();
    for (sub, kind) in [
        ("scattering", FlareKind::Scattering),
        ("reflective", FlareKind::Reflective),
    ] {
        let sub_dir = dir.join(sub);
        if !sub_dir.is_dir() {
            continue;
        }
        for path in list_pngs(&sub_dir)? {
            let image = pngio::load_png(&path)?;
            out.push(
                FlareAsset::new(image, kind)
                    .map_err(|e| CliError::Runtime(format!("{}: {e}", path.display())))?,
            );
        }
    }
    if out.is_empty() {
        return Err(CliError::Usage(format!(
            "{}: no flare images found under scattering/ or reflective/",
            dir.display()
        )));
    }
    Ok(out)
}

/// One evaluation pair, named for reporting.
#[derive(Debug)]
pub struct EvalPair {
    pub name: String,
    pub corrupted: Tensor<f64>,
    pub gt: Tensor<f64>,
}

/// Collect `NAME_corrupted.png` / `NAME_gt.png` pairs from `dir`. Any file
/// following one convention without its partner is an error naming the
/// offender; an empty directory is a usage error.
pub fn load_eval_pairs(dir: &Path) -> CliResult<Vec<EvalPair>> {
    let mut corrupted = std::collections::BTreeMap::new();
    let mut gt = std::collections::BTreeMap::new();
    for path in list_pngs(dir)? {
        let stem = path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_default();
        if let Some(name) = stem.strip_suffix("_corrupted") {
            corrupted.insert(name.to_string(), path);
        } else if let Some(name) = stem.strip_suffix("_gt") {
            gt.insert(name.to_string(), path);
        }
    }
    for (name, path) in &corrupted {
        if !gt.contains_key(name) {
            return Err(CliError::Runtime(format!(
                "{}: no matching {name}_gt.png",
                path.display()
            )));
        }
    }
    for (name, path) in &gt {
        if !corrupted.contains_key(name) {
            return Err(CliError::Runtime(format!(
                "{}: no matching {name}_corrupted.png",
                path.display()
            )));
        }
    }
    if corrupted.is_empty() {
        return Err(CliError::Usage(format!(
            "{}: no *_corrupted.png / *_gt.png pairs found",
            dir.display()
        )));
    }
    corrupted
        .into_iter()
        .map(|(name, cpath)| {
            let cor = pngio::load_png(&cpath)?;
            let gt_img = pngio::load_png(&gt[&name])?;
            let (cn, cc, ch, cw) = cor.shape();
            if gt_img.shape() != (cn, cc, ch, cw) {
                return Err(CliError::Runtime(format!(
                    "pair {name:?}: corrupted and gt extents differ"
                )));
            }
            Ok(EvalPair {
                name,
                corrupted: cor,
                gt: gt_img,
            })
        })
        .collect()
}
