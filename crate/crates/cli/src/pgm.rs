//! Binary 8-bit PGM (P5) output.

use std::fs;
use std::path::Path;

/// Encodes values in [0, 1] as a P5 image (`value * 255`, rounded).
pub fn encode(height: usize, width: usize, values: &[f64]) -> Vec<u8> {
    debug_assert_eq!(values.len(), height * width);
    let mut out = format!("P5 {width} {height} 255\n").into_bytes();
    out.extend(values.iter().map(|&v| (v.clamp(0.0, 1.0) * 255.0).round() as u8));
    out
}

pub fn write(path: &Path, height: usize, width: usize, values: &[f64]) -> std::io::Result<()> {
    fs::write(path, encode(height, width, values))
}

/// Rescales arbitrary values to [0, 1] by their own min and max; a constant
/// image maps to mid-grey.
pub fn normalize(values: &[f64]) -> Vec<f64> {
    let (lo, hi) = values
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), &v| (l.min(v), h.max(v)));
    if hi <= lo {
        return vec![0.5; values.len()];
    }
    values.iter().map(|v| (v - lo) / (hi - lo)).collect()
}
