//! Raster heatmaps of scalar fields.

use std::fs::File;
use std::io::BufWriter;
use std::path::Path;

use anyhow::Context;

/// Blue-white-red map of `v` in `[-1, 1]`.
fn diverging(v: f64) -> [u8; 3] {
    let v = v.clamp(-1.0, 1.0);
    let fade = |x: f64| (255.0 * (1.0 - x)).round() as u8;
    if v >= 0.0 {
        [255, fade(v), fade(v)]
    } else {
        [fade(-v), fade(-v), 255]
    }
}

/// Writes a `w * scale` by `h * scale` RGB image of the row-major field
/// `values` (`h` rows, `y` increasing upwards). Values map symmetrically
/// around `center` with `span` at full saturation.
pub fn write_heatmap(
    path: &Path,
    values: &[f64],
    (h, w): (usize, usize),
    center: f64,
    span: f64,
    scale: usize,
) -> anyhow::Result<()> {
    anyhow::ensure!(values.len() == h * w, "{} values for a {h}x{w} field", values.len());
    anyhow::ensure!(scale > 0, "scale must be at least 1");
    let (pw, ph) = (w * scale, h * scale);
    let mut pixels = Vec::with_capacity(pw * ph * 3);
    for row in 0..ph {
        let j = h - 1 - row / scale;
        for col in 0..pw {
            let v = values[j * w + col / scale];
            let x = if span > 0.0 { (v - center) / span } else { 0.0 };
            pixels.extend_from_slice(&diverging(x));
        }
    }
    let file = File::create(path).with_context(|| format!("creating {}", path.display()))?;
    let mut enc = png::Encoder::new(BufWriter::new(file), pw as u32, ph as u32);
    enc.set_color(png::ColorType::Rgb);
    enc.set_depth(png::BitDepth::Eight);
    enc.write_header()?.write_image_data(&pixels)?;
    Ok(())
}

/// Heatmap scaled to the largest magnitude of the field.
pub fn write_symmetric(path: &Path, values: &[f64], hw: (usize, usize), scale: usize) -> anyhow::Result<()> {
    let span = values.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    write_heatmap(path, values, hw, 0.0, span, scale)
}

/// Heatmap spanning the range of the field.
pub fn write_range(path: &Path, values: &[f64], hw: (usize, usize), scale: usize) -> anyhow::Result<()> {
    let (lo, hi) = values
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
    write_heatmap(path, values, hw, 0.5 * (lo + hi), 0.5 * (hi - lo), scale)
}
