use super::Rect;
use crate::error::{Error, Result};
use crate::tensor::{Real, Tensor};

/// Bilinear resize of an `[H, W, C]` image with half-pixel-aligned sampling.
pub fn resize_bilinear(image: &Tensor, out_h: usize, out_w: usize) -> Result<Tensor> {
    let s = image.shape();
    if s.len() != 3 {
        return Err(Error::Shape(format!("resize expects [H, W, C], got {s:?}")));
    }
    crop_resize_rect(image, Rect::new(0, 0, s[1], s[0]), out_h, out_w)
}

/// Crops `rect` out of `image` and resizes it to `target × target`.
pub fn crop_resize(image: &Tensor, rect: Rect, target: usize) -> Result<Tensor> {
    crop_resize_rect(image, rect, target, target)
}

fn crop_resize_rect(image: &Tensor, rect: Rect, out_h: usize, out_w: usize) -> Result<Tensor> {
    let s = image.shape();
    if s.len() != 3 {
        return Err(Error::Shape(format!("crop expects [H, W, C], got {s:?}")));
    }
    let (h, w, c) = (s[0], s[1], s[2]);
    if rect.w == 0 || rect.h == 0 || rect.right() > w || rect.bottom() > h {
        return Err(Error::Geometry(format!(
            "rectangle {rect:?} outside {w}x{h} image"
        )));
    }
    if out_h == 0 || out_w == 0 {
        return Err(Error::Geometry("target extent must be positive".into()));
    }
    let data = image.data();
    let mut out = vec![0.0; out_h * out_w * c];
    let sy = rect.h as Real / out_h as Real;
    let sx = rect.w as Real / out_w as Real;
    let sample_axis = |o: usize, scale: Real, len: usize| -> (usize, usize, Real) {
        let pos = ((o as Real + 0.5) * scale - 0.5).clamp(0.0, (len - 1) as Real);
        let lo = pos.floor() as usize;
        let hi = (lo + 1).min(len - 1);
        (lo, hi, pos - lo as Real)
    };
    for oy in 0..out_h {
        let (y0, y1, fy) = sample_axis(oy, sy, rect.h);
        for ox in 0..out_w {
            let (x0, x1, fx) = sample_axis(ox, sx, rect.w);
            let px = |yy: usize, xx: usize, ch: usize| {
                data[((rect.y + yy) * w + rect.x + xx) * c + ch]
            };
            for ch in 0..c {
                let top = px(y0, x0, ch) * (1.0 - fx) + px(y0, x1, ch) * fx;
                let bottom = px(y1, x0, ch) * (1.0 - fx) + px(y1, x1, ch) * fx;
                out[(oy * out_w + ox) * c + ch] = top * (1.0 - fy) + bottom * fy;
            }
        }
    }
    Tensor::new([out_h, out_w, c], out)
}
