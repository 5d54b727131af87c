use std::path::Path;

use cropseg::metrics::{AGREE, DISAGREE};
use cropseg::Error;

use crate::Failure;

const OTHER: [u8; 3] = [0, 0, 0];
const CORN: [u8; 3] = [255, 211, 0];
const SOYBEAN: [u8; 3] = [38, 115, 0];
const MASKED: [u8; 3] = [128, 128, 128];

/// Binary PPM (P6).
pub fn write_ppm(path: &Path, height: usize, width: usize, pixel: impl Fn(usize) -> [u8; 3]) -> Result<(), Failure> {
    let mut bytes = format!("P6\n{width} {height}\n255\n").into_bytes();
    for p in 0..height * width {
        bytes.extend_from_slice(&pixel(p));
    }
    std::fs::write(path, bytes).map_err(|e| Failure::Run(Error::io(path, e)))
}

/// Soybean green, corn yellow, other black; masked pixels grey.
pub fn class_color(class: u8, valid: bool) -> [u8; 3] {
    if !valid {
        return MASKED;
    }
    match class {
        1 => CORN,
        2 => SOYBEAN,
        _ => OTHER,
    }
}

/// Agreement light grey, disagreement red, invalid black.
pub fn difference_color(code: u8) -> [u8; 3] {
    match code {
        AGREE => [230, 230, 230],
        DISAGREE => [220, 30, 40],
        _ => [0, 0, 0],
    }
}
