//! Attention overlays in binary PPM.

use std::io::{self, Write};

use tnet_core::geometry::Rect;
use tnet_core::traversal::Prediction;
use tnet_core::{Real, Tensor};

/// Outline colors by attention level, starting at level 2.
const LEVEL_COLORS: [[u8; 3]; 4] = [[230, 40, 40], [40, 200, 60], [60, 110, 240], [240, 200, 30]];

/// Overlays are upscaled to at least this many pixels per side.
const MIN_SIDE: usize = 256;

pub struct Overlay {
    pub width: usize,
    pub height: usize,
    pub pixels: Vec<[u8; 3]>,
    pub comments: Vec<String>,
}

impl Overlay {
    pub fn write_ppm(&self, out: &mut impl Write) -> io::Result<()> {
        writeln!(out, "P6")?;
        for c in &self.comments {
            writeln!(out, "# {c}")?;
        }
        writeln!(out, "{} {}", self.width, self.height)?;
        writeln!(out, "255")?;
        for p in &self.pixels {
            out.write_all(p)?;
        }
        Ok(())
    }

    fn outline(&mut self, r: Rect, scale: usize, color: [u8; 3]) {
        let (x0, y0) = (r.x * scale, r.y * scale);
        let (x1, y1) = ((r.right() * scale).min(self.width) - 1, (r.bottom() * scale).min(self.height) - 1);
        for x in x0..=x1 {
            self.pixels[y0 * self.width + x] = color;
            self.pixels[y1 * self.width + x] = color;
        }
        for y in y0..=y1 {
            self.pixels[y * self.width + x0] = color;
            self.pixels[y * self.width + x1] = color;
        }
    }
}

/// Gray image in `[0, 1]` with each attended region outlined.
pub fn render(image: &Tensor, pred: &Prediction, label: usize, weights: Option<&[Real]>) -> Overlay {
    let (h, w) = (image.shape()[0], image.shape()[1]);
    let scale = MIN_SIDE.div_ceil(w.max(h)).max(1);
    let (width, height) = (w * scale, h * scale);
    let mut pixels = Vec::with_capacity(width * height);
    for y in 0..height {
        for x in 0..width {
            let v = image.at3(y / scale, x / scale, 0).clamp(0.0, 1.0);
            let g = (v * 255.0).round() as u8;
            pixels.push([g, g, g]);
        }
    }
    let mut comments = vec![format!("label {label} predicted {}", pred.class)];
    for (i, ((r, level), cell)) in pred.attended.iter().zip(&pred.levels).zip(&pred.cells).enumerate() {
        comments.push(format!("rect {i} level {level} cell {cell} x {} y {} w {} h {}", r.x, r.y, r.w, r.h));
    }
    if let Some(ws) = weights {
        let s: Vec<String> = ws.iter().map(|w| format!("{w:.2}")).collect();
        comments.push(format!("weights {}", s.join(" ")));
    }
    let mut overlay = Overlay { width, height, pixels, comments };
    for (r, &level) in pred.attended.iter().zip(&pred.levels) {
        overlay.outline(*r, scale, LEVEL_COLORS[(level - 2) % LEVEL_COLORS.len()]);
    }
    overlay
}
