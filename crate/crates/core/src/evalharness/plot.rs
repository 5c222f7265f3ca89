//! Minimal line charts rasterized straight to PNG.

use std::fs::File;
use std::io::BufWriter;
use std::path::Path;

use super::EvalError;

const W: usize = 640;
const H: usize = 400;
const MARGIN: usize = 40;

#[derive(Debug, Clone, PartialEq)]
pub struct PlotSeries {
    pub color: [u8; 3],
    /// `(x, y)` with `y` in `[0, 1]`.
    pub points: Vec<(f64, f64)>,
}

struct Canvas {
    px: Vec<u8>,
}

impl Canvas {
    fn new() -> Self {
        Self { px: vec![255; W * H * 3] }
    }

    fn set(&mut self, x: i64, y: i64, c: [u8; 3]) {
        if (0..W as i64).contains(&x) && (0..H as i64).contains(&y) {
            let i = (y as usize * W + x as usize) * 3;
            self.px[i..i + 3].copy_from_slice(&c);
        }
    }

    fn line(&mut self, (x0, y0): (i64, i64), (x1, y1): (i64, i64), c: [u8; 3], thick: bool) {
        let (dx, dy) = ((x1 - x0).abs(), -(y1 - y0).abs());
        let (sx, sy) = (if x0 < x1 { 1 } else { -1 }, if y0 < y1 { 1 } else { -1 });
        let (mut x, mut y, mut err) = (x0, y0, dx + dy);
        loop {
            self.set(x, y, c);
            if thick {
                self.set(x, y + 1, c);
                self.set(x + 1, y, c);
            }
            if x == x1 && y == y1 {
                break;
            }
            let e2 = 2 * err;
            if e2 >= dy {
                err += dy;
                x += sx;
            }
            if e2 <= dx {
                err += dx;
                y += sy;
            }
        }
    }
}

/// Draws each series over a unit-height frame with gridlines every 0.1.
pub fn render_curves_png(path: &Path, series: &[PlotSeries]) -> Result<(), EvalError> {
    let mut cv = Canvas::new();
    let (left, right) = (MARGIN as i64, (W - MARGIN / 2) as i64);
    let (top, bottom) = ((MARGIN / 2) as i64, (H - MARGIN) as i64);
    for g in 0..=10 {
        let y = bottom - (bottom - top) * g / 10;
        cv.line((left, y), (right, y), [225, 225, 225], false);
    }
    cv.line((left, top), (left, bottom), [0, 0, 0], false);
    cv.line((left, bottom), (right, bottom), [0, 0, 0], false);

    let (xmin, xmax) = series
        .iter()
        .flat_map(|s| s.points.iter().map(|p| p.0))
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), x| (a.min(x), b.max(x)));
    let span = if xmax > xmin { xmax - xmin } else { 1.0 };
    let to_px = |(x, y): (f64, f64)| {
        let fx = (x - xmin) / span;
        let fy = y.clamp(0.0, 1.0);
        (
            left + (fx * (right - left) as f64).round() as i64,
            bottom - (fy * (bottom - top) as f64).round() as i64,
        )
    };
    for s in series {
        let pts: Vec<(i64, i64)> = s.points.iter().copied().filter(|p| p.1.is_finite()).map(to_px).collect();
        for w in pts.windows(2) {
            cv.line(w[0], w[1], s.color, true);
        }
        if let [only] = pts.as_slice() {
            cv.line(*only, *only, s.color, true);
        }
    }

    let io = |source| EvalError::Io {
        path: path.to_path_buf(),
        source,
    };
    let file = File::create(path).map_err(io)?;
    let mut enc = png::Encoder::new(BufWriter::new(file), W as u32, H as u32);
    enc.set_color(png::ColorType::Rgb);
    enc.set_depth(png::BitDepth::Eight);
    let mut writer = enc
        .write_header()
        .map_err(|e| EvalError::Io { path: path.to_path_buf(), source: std::io::Error::other(e) })?;
    writer
        .write_image_data(&cv.px)
        .map_err(|e| EvalError::Io { path: path.to_path_buf(), source: std::io::Error::other(e) })?;
    Ok(())
}
