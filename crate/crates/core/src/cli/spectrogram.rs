//! Log-magnitude spectrogram images.

use std::path::Path;

use image::{GrayImage, Luma};
use rustfft::num_complex::Complex;
use rustfft::FftPlanner;

const FRAME: usize = 256;
const HOP: usize = 64;
const RANGE_DB: f64 = 80.0;

/// Magnitudes in dB, one row per frame, `FRAME / 2 + 1` bins per row.
pub fn log_magnitude(x: &[f64]) -> Vec<Vec<f64>> {
    let fft = FftPlanner::new().plan_fft_forward(FRAME);
    let window: Vec<f64> = (0..FRAME)
        .map(|n| 0.5 - 0.5 * (std::f64::consts::TAU * n as f64 / FRAME as f64).cos())
        .collect();
    let frames = if x.len() <= FRAME { 1 } else { 1 + (x.len() - FRAME).div_ceil(HOP) };
    (0..frames)
        .map(|f| {
            let mut buf: Vec<Complex<f64>> = (0..FRAME)
                .map(|n| Complex::new(x.get(f * HOP + n).copied().unwrap_or(0.0) * window[n], 0.0))
                .collect();
            fft.process(&mut buf);
            buf[..=FRAME / 2]
                .iter()
                .map(|c| 10.0 * (c.norm_sqr() + 1e-12).log10())
                .collect()
        })
        .collect()
}

/// Time runs left to right, frequency bottom to top; the loudest bin is
/// white and anything 80 dB below it black.
pub fn render(x: &[f64]) -> GrayImage {
    let spec = log_magnitude(x);
    let bins = FRAME / 2 + 1;
    let top = spec.iter().flatten().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut img = GrayImage::new(spec.len() as u32, bins as u32);
    for (t, row) in spec.iter().enumerate() {
        for (k, &db) in row.iter().enumerate() {
            let level = ((db - (top - RANGE_DB)) / RANGE_DB).clamp(0.0, 1.0);
            img.put_pixel(t as u32, (bins - 1 - k) as u32, Luma([(level * 255.0).round() as u8]));
        }
    }
    img
}

pub fn write_png(path: &Path, x: &[f64]) -> image::ImageResult<()> {
    render(x).save(path)
}
