//! Box overlays: red on RGB frames, white on IR frames.

use rgbir_core::{Detection, Image, Modality};

pub const RGB_COLOR: [u8; 3] = [255, 0, 0];
pub const IR_COLOR: u8 = 255;

/// Pixel rectangle `(x0, y0, x1, y1)`, inclusive, of a normalized box.
pub fn pixel_rect(d: &Detection, width: usize, height: usize) -> (usize, usize, usize, usize) {
    let (x0, y0, x1, y1) = d.bbox.to_pixels(width, height);
    let clamp = |v: f64, n: usize| (v.max(0.0) as usize).min(n - 1);
    (
        clamp(x0.round(), width),
        clamp(y0.round(), height),
        clamp(x1.round() - 1.0, width),
        clamp(y1.round() - 1.0, height),
    )
}

/// Copy of `image` with a one-pixel outline around every detection.
pub fn draw_detections(image: &Image, detections: &[Detection], modality: Modality) -> Image {
    let mut out = image.clone();
    let (w, h) = image.size();
    if w == 0 || h == 0 {
        return out;
    }
    let mut paint = |x: usize, y: usize| match modality {
        Modality::Rgb => {
            for (c, v) in RGB_COLOR.iter().enumerate() {
                out.set(x, y, c, *v);
            }
        }
        Modality::Ir => out.set(x, y, 0, IR_COLOR),
    };
    for d in detections {
        let (x0, y0, x1, y1) = pixel_rect(d, w, h);
        for x in x0..=x1 {
            paint(x, y0);
            paint(x, y1);
        }
        for y in y0..=y1 {
            paint(x0, y);
            paint(x1, y);
        }
    }
    out
}
