//! PNG <-> tensor conversion, reflective extent padding, and atomic writes.
//!
//! Images load as `1x3xHxW` tensors with each 8-bit sample mapped to
//! `k / 255`, and save by clamping to `[0, 1]` and rounding back to 8 bits.
//! Saves go through a temp-file-and-rename so readers never observe a
//! half-written file.

use crate::{io_error, CliError, CliResult};
use mfdnet_core::tensor::Tensor;
use std::path::Path;

/// Decode a PNG (any color type; converted to RGB8) into a unit-range
/// `1x3xHxW` tensor.
pub fn load_png(path: &Path) -> CliResult<Tensor<f64>> {
    let img = image::open(path)
        .map_err(|e| CliError::Runtime(format!("{}: {e}", path.display())))?
        .into_rgb8();
    let (w, h) = (img.width() as usize, img.height() as usize);
    if w == 0 || h == 0 {
        return Err(CliError::Runtime(format!(
            "{}: image has a zero extent",
            path.display()
        )));
    }
    let mut t = Tensor::zeros(1, 3, h, w);
    for (y, row) in img.rows().enumerate() {
        for (x, px) in row.enumerate() {
            for c in 0..3 {
                *t.at_mut(0, c, y, x) = f64::from(px.0[c]) / 255.0;
            }
        }
    }
    Ok(t)
}

/// Quantize a unit-range tensor back to RGB8 bytes (clamp, scale, round).
pub fn to_rgb8(t: &Tensor<f64>) -> CliResult<image::RgbImage> {
    let (n, c, h, w) = t.shape();
    if n != 1 || c != 3 {
        return Err(CliError::Runtime(format!(
            "expected a 1x3xHxW image tensor, got {n}x{c}x{h}x{w}"
        )));
    }
    let mut img = image::RgbImage::new(w as u32, h as u32);
    for y in 0..h {
        for x in 0..w {
            let mut px = [0u8; 3];
            for (ch, slot) in px.iter_mut().enumerate() {
                let v = t.at(0, ch, y, x).clamp(0.0, 1.0);
                *slot = (v * 255.0).round() as u8;
            }
            img.put_pixel(x as u32, y as u32, image::Rgb(px));
        }
    }
    Ok(img)
}

/// Encode to PNG bytes in memory (the encoder is deterministic for a given
/// pixel buffer, so identical tensors produce identical files).
pub fn encode_png(t: &Tensor<f64>) -> CliResult<Vec<u8>> {
    let img = to_rgb8(t)?;
    let mut bytes = Vec::new();
    img.write_to(
        &mut std::io::Cursor::new(&mut bytes),
        image::ImageFormat::Png,
    )
    .map_err(|e| CliError::Runtime(format!("png encode: {e}")))?;
    Ok(bytes)
}

/// Save a tensor as PNG via an atomic write.
pub fn save_png(path: &Path, t: &Tensor<f64>) -> CliResult<()> {
    write_atomic(path, &encode_png(t)?)
}

/// Write bytes to a temp file in the destination directory, then rename it
/// into place.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> CliResult<()> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty());
    let file_name = path
        .file_name()
        .ok_or_else(|| CliError::Usage(format!("{}: not a file path", path.display())))?;
    let mut tmp = dir.map(Path::to_path_buf).unwrap_or_default();
    tmp.push(format!(".{}.tmp-{}", file_name.to_string_lossy(), std::process::id()));
    std::fs::write(&tmp, bytes).map_err(|e| io_error(&tmp, e))?;
    std::fs::rename(&tmp, path).map_err(|e| io_error(path, e))?;
    Ok(())
}

/// Index map for reflective (edge-mirroring, no repeated edge) extension:
/// positions beyond `n - 1` fold back as `n - 2, n - 3, ...`. Extension is
/// periodic with period `2(n - 1)`; a single-sample axis just repeats.
fn reflect_index(i: usize, n: usize) -> usize {
    if n == 1 {
        return 0;
    }
    let period = 2 * (n - 1);
    let j = i % period;
    if j < n {
        j
    } else {
        period - j
    }
}

/// Pad the bottom/right of an image so both extents are multiples of
/// `divisor`, mirroring interior rows/columns into the margin. Returns the
/// padded tensor with the original extents (for cropping back).
pub fn pad_to_multiple_reflect(
    t: &Tensor<f64>,
    divisor: usize,
) -> CliResult<(Tensor<f64>, usize, usize)> {
    let (n, c, h, w) = t.shape();
    let ph = h.div_ceil(divisor) * divisor;
    let pw = w.div_ceil(divisor) * divisor;
    let mut out = Tensor::zeros(n, c, ph, pw);
    for b in 0..n {
        for ch in 0..c {
            for y in 0..ph {
                let sy = reflect_index(y, h);
                for x in 0..pw {
                    *out.at_mut(b, ch, y, x) = t.at(b, ch, sy, reflect_index(x, w));
                }
            }
        }
    }
    Ok((out, h, w))
}

/// Take the top-left `h x w` window (inverse of the extent padding).
pub fn crop(t: &Tensor<f64>, h: usize, w: usize) -> Tensor<f64> {
    let (n, c, th, tw) = t.shape();
    assert!(h <= th && w <= tw, "crop window exceeds the tensor");
    let mut out = Tensor::zeros(n, c, h, w);
    for b in 0..n {
        for ch in 0..c {
            for y in 0..h {
                out.row_mut(b, ch, y).copy_from_slice(&t.row(b, ch, y)[..w]);
            }
        }
    }
    out
}

/// Place `images` side by side with a 2-pixel white gutter (for visual
/// comparison output). All images must share extents.
pub fn side_by_side(images: &[&Tensor<f64>]) -> CliResult<Tensor<f64>> {
    let Some(first) = images.first() else {
        return Err(CliError::Runtime("no images to compose".into()));
    };
    let (_, _, h, w) = first.shape();
    let gutter = 2usize;
    let total_w = w * images.len() + gutter * (images.len() - 1);
    let mut out = Tensor::filled(1, 3, h, total_w, 1.0);
    for (i, img) in images.iter().enumerate() {
        let (n, c, ih, iw) = img.shape();
        if (n, c, ih, iw) != (1, 3, h, w) {
            return Err(CliError::Runtime(
                "comparison images have mismatched extents".into(),
            ));
        }
        let x0 = i * (w + gutter);
        for ch in 0..3 {
            for y in 0..h {
                out.row_mut(0, ch, y)[x0..x0 + w].copy_from_slice(img.row(0, ch, y));
            }
        }
    }
    Ok(out)
}
