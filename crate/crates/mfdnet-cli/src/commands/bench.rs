//! `bench`: parameter count, analytic multiply-accumulate totals, and timed
//! single-threaded inference per resolution, plus a micro-benchmark that
//! compares the network's axial attention against a dense global-attention
//! reference to demonstrate sub-quadratic scaling in pixel count.
//!
//! The report is printed as a text table and, with `--out`, written both as
//! that table and as a machine-readable `<out>.kv` key-value file.

use crate::config::{AppConfig, Overrides};
use crate::{pngio, CliError, CliResult};
use mfdnet_core::blocks::TransformerBlock;
use mfdnet_core::data::generate_base;
use mfdnet_core::macs::{count_macs, count_params, MacBreakdown};
use mfdnet_core::model::{blend_light_source, Mfdnet, DEFAULT_SATURATION_THRESHOLD};
use mfdnet_core::rng::Rng;
use mfdnet_core::tensor::Tensor;
use std::fmt::Write as _;
use std::path::PathBuf;
use std::time::Instant;

#[derive(clap::Args, Debug)]
pub struct BenchArgs {
    /// Comma-separated resolutions: `256` (square) or `1920x1080` (WxH).
    #[arg(long, value_name = "LIST", default_value = "128,256")]
    pub resolutions: String,

    /// Timed runs per resolution after one warm-up (at least 3).
    #[arg(long, value_name = "N", default_value_t = 5)]
    pub repeats: usize,

    /// Time this checkpoint instead of a freshly initialized model.
    #[arg(long, value_name = "CKPT")]
    pub ckpt: Option<PathBuf>,

    /// Report file; the key-value twin lands next to it as `<FILE>.kv`.
    #[arg(long, value_name = "FILE")]
    pub out: Option<PathBuf>,

    /// Skip the axial-vs-dense attention micro-benchmark.
    #[arg(long)]
    pub no_attention_ref: bool,

    #[command(flatten)]
    pub overrides: Overrides,
}

struct ResolutionRow {
    label: String,
    width: usize,
    height: usize,
    macs: MacBreakdown,
    median_ms: f64,
    peak_rss_kb: Option<u64>,
}

pub fn run(args: &BenchArgs) -> CliResult<()> {
    if args.repeats < 3 {
        return Err(CliError::Usage(format!(
            "--repeats must be at least 3, got {}",
            args.repeats
        )));
    }
    let cfg = AppConfig::layered(args.overrides.config.as_deref(), &args.overrides)?;
    let mut model = match &args.ckpt {
        Some(path) => super::train::read_checkpoint(path)?.build_model()?,
        None => Mfdnet::<f64>::new(&cfg.model, 0)?,
    };
    let model_cfg = model.cfg.clone();
    let params = count_params(&mut model);
    let divisor = model_cfg.divisor();

    let mut rows = Vec::new();
    for spec in args.resolutions.split(',') {
        let (w, h) = parse_resolution(spec)?;
        let macs = count_macs(&model_cfg, h, w)?;
        let image = generate_base::<f64>(h, w, 7);
        let median_ms = time_median_ms(args.repeats, || {
            let (padded, ih, iw) = pngio::pad_to_multiple_reflect(&image, divisor).unwrap();
            let deflared = pngio::crop(&model.deflare(&padded).unwrap(), ih, iw);
            let _ = blend_light_source(&image, &deflared, DEFAULT_SATURATION_THRESHOLD).unwrap();
        });
        rows.push(ResolutionRow {
            label: format!("{w}x{h}"),
            width: w,
            height: h,
            macs,
            median_ms,
            peak_rss_kb: peak_rss_kb(),
        });
    }

    let attention_ref = if args.no_attention_ref {
        None
    } else {
        Some(attention_reference(args.repeats))
    };

    let table = render_table(params, &rows, attention_ref.as_ref());
    print!("{table}");
    if let Some(out) = &args.out {
        pngio::write_atomic(out, table.as_bytes())?;
        let kv = render_kv(params, &rows, attention_ref.as_ref());
        let mut kv_path = out.as_os_str().to_owned();
        kv_path.push(".kv");
        pngio::write_atomic(std::path::Path::new(&kv_path), kv.as_bytes())?;
    }
    Ok(())
}

fn parse_resolution(spec: &str) -> CliResult<(usize, usize)> {
    let spec = spec.trim();
    let bad = || CliError::Usage(format!("bad resolution {spec:?}: expected N or WxH"));
    let (w, h) = match spec.split_once('x') {
        Some((w, h)) => (w.parse().map_err(|_| bad())?, h.parse().map_err(|_| bad())?),
        None => {
            let n: usize = spec.parse().map_err(|_| bad())?;
            (n, n)
        }
    };
    if w == 0 || h == 0 {
        return Err(bad());
    }
    Ok((w, h))
}

/// Median wall-clock milliseconds over `repeats` runs after one warm-up.
fn time_median_ms(repeats: usize, mut f: impl FnMut()) -> f64 {
    f();
    let samples: Vec<f64> = (0..repeats)
        .map(|_| {
            let t0 = Instant::now();
            f();
            t0.elapsed().as_secs_f64() * 1e3
        })
        .collect();
    median(samples)
}

fn median(mut samples: Vec<f64>) -> f64 {
    assert!(!samples.is_empty(), "median of no samples");
    samples.sort_by(f64::total_cmp);
    let n = samples.len();
    if n % 2 == 1 {
        samples[n / 2]
    } else {
        0.5 * (samples[n / 2 - 1] + samples[n / 2])
    }
}

/// Process peak resident set, if the platform exposes it. Cumulative over
/// the process lifetime, so rows report the high-water mark up to that
/// point.
fn peak_rss_kb() -> Option<u64> {
    let status = std::fs::read_to_string("/proc/self/status").ok()?;
    let line = status.lines().find(|l| l.starts_with("VmHWM:"))?;
    line.split_whitespace().nth(1)?.parse().ok()
}

pub struct AttentionReference {
    pub small: usize,
    pub large: usize,
    pub axial_ms: [f64; 2],
    pub dense_ms: [f64; 2],
}

impl AttentionReference {
    /// Wall-clock growth when pixels quadruple; sub-quadratic means the
    /// axial ratio stays below the dense one (dense grows ~16x).
    pub fn axial_ratio(&self) -> f64 {
        self.axial_ms[1] / self.axial_ms[0]
    }

    pub fn dense_ratio(&self) -> f64 {
        self.dense_ms[1] / self.dense_ms[0]
    }
}

/// Time the network's transformer block (axial attention) against dense
/// global attention over the same token grids, 24x24 and 48x48 at 16
/// channels.
fn attention_reference(repeats: usize) -> AttentionReference {
    const C: usize = 16;
    let (small, large) = (24usize, 48usize);
    let block = TransformerBlock::<f64>::new("bench.attn", C, 2, 2, 11);
    let mut axial_ms = [0.0; 2];
    let mut dense_ms = [0.0; 2];
    for (slot, side) in [small, large].into_iter().enumerate() {
        let mut rng = Rng::from_label(13, "bench.attn.input");
        let mut x = Tensor::<f64>::zeros(1, C, side, side);
        for v in x.data_mut() {
            *v = rng.uniform(0.0, 1.0);
        }
        axial_ms[slot] = time_median_ms(repeats, || {
            let _ = block.forward(&x);
        });
        let tokens: Vec<f64> = x.data().to_vec();
        dense_ms[slot] = time_median_ms(repeats, || {
            dense_global_attention(&tokens, side * side, C);
        });
    }
    AttentionReference {
        small,
        large,
        axial_ms,
        dense_ms,
    }
}

/// Reference cost model: softmax(X Xᵀ / √c) X over all N tokens — the
/// quadratic-in-pixels baseline the axial design avoids.
fn dense_global_attention(x: &[f64], n: usize, c: usize) -> f64 {
    // x is channel-major (c planes of n values); gather per-token rows.
    let token = |i: usize, k: usize| x[k * n + i];
    let scale = 1.0 / (c as f64).sqrt();
    let mut out_sum = 0.0;
    let mut scores = vec![0.0f64; n];
    for i in 0..n {
        let mut max = f64::NEG_INFINITY;
        for (j, slot) in scores.iter_mut().enumerate() {
            let mut dot = 0.0;
            for k in 0..c {
                dot += token(i, k) * token(j, k);
            }
            *slot = dot * scale;
            max = max.max(*slot);
        }
        let mut denom = 0.0;
        for slot in scores.iter_mut() {
            *slot = (*slot - max).exp();
            denom += *slot;
        }
        for k in 0..c {
            let mut acc = 0.0;
            for (j, p) in scores.iter().enumerate() {
                acc += p * token(j, k);
            }
            out_sum += acc / denom;
        }
    }
    out_sum
}

fn render_table(
    params: usize,
    rows: &[ResolutionRow],
    attn: Option<&AttentionReference>,
) -> String {
    let mut t = String::new();
    writeln!(t, "params = {params}").unwrap();
    writeln!(
        t,
        "{:<12} {:>14} {:>14} {:>12} {:>12}",
        "# resolution", "macs", "macs_attn", "median_ms", "peak_rss_kb"
    )
    .unwrap();
    for r in rows {
        writeln!(
            t,
            "{:<12} {:>14} {:>14} {:>12.3} {:>12}",
            r.label,
            r.macs.headline(),
            r.macs.attention_matmul,
            r.median_ms,
            r.peak_rss_kb.map_or_else(|| "n/a".into(), |v| v.to_string()),
        )
        .unwrap();
    }
    if let Some(a) = attn {
        writeln!(
            t,
            "attention reference ({0}x{0} -> {1}x{1}, 4x pixels): axial {2:.2}x, dense {3:.2}x",
            a.small,
            a.large,
            a.axial_ratio(),
            a.dense_ratio()
        )
        .unwrap();
    }
    t
}

fn render_kv(params: usize, rows: &[ResolutionRow], attn: Option<&AttentionReference>) -> String {
    let mut t = String::new();
    writeln!(t, "params = {params}").unwrap();
    for r in rows {
        let k = &r.label;
        writeln!(t, "res.{k}.width = {}", r.width).unwrap();
        writeln!(t, "res.{k}.height = {}", r.height).unwrap();
        writeln!(t, "res.{k}.macs_headline = {}", r.macs.headline()).unwrap();
        writeln!(t, "res.{k}.macs_attention_matmul = {}", r.macs.attention_matmul).unwrap();
        writeln!(t, "res.{k}.macs_with_attention = {}", r.macs.with_attention()).unwrap();
        writeln!(t, "res.{k}.median_ms = {}", r.median_ms).unwrap();
        if let Some(kb) = r.peak_rss_kb {
            writeln!(t, "res.{k}.peak_rss_kb = {kb}").unwrap();
        }
    }
    if let Some(a) = attn {
        writeln!(t, "attention_ref.small_side = {}", a.small).unwrap();
        writeln!(t, "attention_ref.large_side = {}", a.large).unwrap();
        writeln!(t, "attention_ref.axial_ratio = {}", a.axial_ratio()).unwrap();
        writeln!(t, "attention_ref.dense_ratio = {}", a.dense_ratio()).unwrap();
    }
    t
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn resolution_specs_parse_both_forms() {
        assert_eq!(parse_resolution("256").unwrap(), (256, 256));
        assert_eq!(parse_resolution("1920x1080").unwrap(), (1920, 1080));
        assert_eq!(parse_resolution(" 64x32 ").unwrap(), (64, 32));
        for bad in ["", "0", "12x0", "axb", "12x", "-3"] {
            assert_eq!(parse_resolution(bad).unwrap_err().exit_code(), 2, "{bad}");
        }
    }

    #[test]
    fn median_is_the_middle_sample() {
        assert_eq!(median(vec![5.0, 1.0, 3.0]), 3.0);
        assert_eq!(median(vec![4.0, 1.0, 3.0, 2.0]), 2.5);
        assert_eq!(median(vec![7.0]), 7.0);
    }
}
