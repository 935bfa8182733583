//! 8-bit grayscale PNG encoding of volume slices.

use image::codecs::png::PngEncoder;
use image::{ExtendedColorType, ImageEncoder};

/// Display window: intensities in `[level - width/2, level + width/2]` map
/// linearly onto 0..=255.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Window {
    pub level: f64,
    pub width: f64,
}

impl Window {
    /// Window spanning the min-max of `values`.
    pub fn auto(values: impl IntoIterator<Item = f64>) -> Window {
        let (lo, hi) = values.into_iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(v), b.max(v)));
        if !lo.is_finite() {
            return Window { level: 0.0, width: 1.0 };
        }
        Window { level: 0.5 * (lo + hi), width: (hi - lo).max(f64::EPSILON) }
    }

    pub fn map(&self, v: f64) -> u8 {
        let lo = self.level - 0.5 * self.width;
        ((v - lo) / self.width * 255.0).round().clamp(0.0, 255.0) as u8
    }
}

pub fn encode_gray(width: usize, height: usize, pixels: &[u8]) -> Vec<u8> {
    let mut out = Vec::new();
    PngEncoder::new(&mut out)
        .write_image(pixels, width as u32, height as u32, ExtendedColorType::L8)
        .expect("in-memory PNG encoding");
    out
}

/// Windows `values` (row-major, `width × height`) and encodes them as PNG.
pub fn slice_png(width: usize, height: usize, values: &[f64], window: Option<Window>) -> Vec<u8> {
    let w = window.unwrap_or_else(|| Window::auto(values.iter().copied()));
    let px: Vec<u8> = values.iter().map(|&v| w.map(v)).collect();
    encode_gray(width, height, &px)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn window_mapping() {
        let w = Window { level: 100.0, width: 200.0 };
        assert_eq!(w.map(0.0), 0);
        assert_eq!(w.map(200.0), 255);
        assert_eq!(w.map(100.0), 128);
        assert_eq!(w.map(-50.0), 0);
        assert_eq!(w.map(1e9), 255);
    }

    #[test]
    fn png_decodes_to_input() {
        let values: Vec<f64> = (0..12).map(|i| i as f64).collect();
        let bytes = slice_png(4, 3, &values, None);
        let img = image::load_from_memory(&bytes).unwrap().to_luma8();
        assert_eq!(img.dimensions(), (4, 3));
        assert_eq!(img.get_pixel(0, 0).0[0], 0);
        assert_eq!(img.get_pixel(3, 2).0[0], 255);
    }
}
