//! PNG and CSV writers.

use std::fs::File;
use std::io::BufWriter;
use std::path::Path;

use guided_spde::heatmap::render_rgb;
use guided_spde::{Error, Result};

/// Writes a row-major `rows x cols` matrix as an 8-bit RGB PNG heatmap.
pub fn write_heatmap(path: &Path, values: &[f64], rows: usize, cols: usize, upscale: usize) -> Result<()> {
    let (w, h, bytes) = render_rgb(values, rows, cols, upscale);
    let file = BufWriter::new(File::create(path)?);
    let mut enc = png::Encoder::new(file, w as u32, h as u32);
    enc.set_color(png::ColorType::Rgb);
    enc.set_depth(png::BitDepth::Eight);
    let mut writer = enc.write_header().map_err(png_err)?;
    writer.write_image_data(&bytes).map_err(png_err)?;
    writer.finish().map_err(png_err)?;
    Ok(())
}

fn png_err(e: png::EncodingError) -> Error {
    Error::Io(std::io::Error::other(e))
}

/// CSV text from a header and rows of floats (shortest round-trip formatting).
pub fn csv(header: &[String], rows: impl IntoIterator<Item = Vec<f64>>) -> String {
    let mut out = header.join(",");
    out.push('\n');
    for row in rows {
        let cells: Vec<String> = row.iter().map(|v| format!("{v:?}")).collect();
        out.push_str(&cells.join(","));
        out.push('\n');
    }
    out
}
