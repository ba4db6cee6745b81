//! Diverging colormap and raster rendering of space-time fields.
//!
//! Values are normalised by the largest absolute entry, so zero always maps
//! to the centre colour and a constant matrix renders as a single colour.

/// Anchor colours at normalised positions `-1, -0.5, 0, 0.5, 1`.
pub const ANCHORS: [[u8; 3]; 5] = [
    [5, 48, 97],
    [67, 147, 195],
    [247, 247, 247],
    [214, 96, 77],
    [103, 0, 31],
];

/// Colour for a value in `[-1, 1]` (clamped), by linear interpolation between anchors.
pub fn colormap(v: f64) -> [u8; 3] {
    let v = if v.is_nan() { 0.0 } else { v.clamp(-1.0, 1.0) };
    let pos = (v + 1.0) * 2.0;
    let i = (pos.floor() as usize).min(3);
    let f = pos - i as f64;
    let (a, b) = (ANCHORS[i], ANCHORS[i + 1]);
    let mut out = [0u8; 3];
    for c in 0..3 {
        out[c] = (a[c] as f64 + f * (b[c] as f64 - a[c] as f64)).round() as u8;
    }
    out
}

/// RGB raster of a row-major `rows x cols` matrix, each cell drawn as an
/// `upscale x upscale` block. Returns `(width, height, bytes)`.
pub fn render_rgb(values: &[f64], rows: usize, cols: usize, upscale: usize) -> (usize, usize, Vec<u8>) {
    assert_eq!(values.len(), rows * cols, "matrix shape");
    let upscale = upscale.max(1);
    let scale = values.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let (w, h) = (cols * upscale, rows * upscale);
    let mut out = Vec::with_capacity(w * h * 3);
    for r in 0..rows {
        let line: Vec<u8> = (0..cols)
            .flat_map(|c| {
                let v = values[r * cols + c];
                let px = colormap(if scale > 0.0 { v / scale } else { 0.0 });
                std::iter::repeat_n(px, upscale).flatten()
            })
            .collect();
        for _ in 0..upscale {
            out.extend_from_slice(&line);
        }
    }
    (w, h, out)
}

/// RGBA variant of [`render_rgb`] with opaque alpha.
pub fn render_rgba(values: &[f64], rows: usize, cols: usize, upscale: usize) -> (usize, usize, Vec<u8>) {
    let (w, h, rgb) = render_rgb(values, rows, cols, upscale);
    let mut out = Vec::with_capacity(w * h * 4);
    for px in rgb.chunks_exact(3) {
        out.extend_from_slice(px);
        out.push(255);
    }
    (w, h, out)
}
