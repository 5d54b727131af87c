//! Preprocessing for multi-temporal reflectance stacks: validity filtering,
//! gap filling onto a fixed weekly grid, per-band normalization, tiling, and
//! a synthetic scene generator for desk-scale experiments.

mod interp;
pub mod io;
mod norm;
mod synth;
mod tiling;
mod validity;

use crate::error::{Error, Result};
use crate::ndtensor::Tensor;

pub use interp::{interpolate_series, interpolate_to_grid};
pub use norm::{apply_norm, compute_norm_stats, invert_norm, NormStats};
pub use synth::{
    class_signature, raw_dates, synthesize_dataset, synthesize_raw, SynthSpec, SyntheticRaw,
    SyntheticScene, CLOUD_REFLECTANCE,
};
pub use tiling::{stitch, tile, untile, Example, Provenance, TileGrid};
pub use validity::{pixel_validity, MIN_VALID_OBSERVATIONS, SEASON_CUTOFF_DOY};

/// Band order of the reflectance stack.
pub const BAND_NAMES: [&str; 6] = ["red", "green", "blue", "swir1", "swir2", "nir"];

/// First grid day (Apr 22, non-leap day-of-year).
pub const GRID_START_DOY: u16 = 112;
pub const GRID_STEP_DAYS: u16 = 7;
pub const GRID_STEPS: usize = 23;

/// Day-of-year of every step of the regular grid: 112, 119, …, 266 (Sep 23).
pub fn season_grid() -> Vec<u16> {
    (0..GRID_STEPS as u16)
        .map(|k| GRID_START_DOY + k * GRID_STEP_DAYS)
        .collect()
}

pub fn band_names(bands: usize) -> Vec<String> {
    (0..bands)
        .map(|b| match BAND_NAMES.get(b) {
            Some(name) if bands == BAND_NAMES.len() => name.to_string(),
            _ => format!("band{b}"),
        })
        .collect()
}

/// A single-plane `height × width` raster.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Raster<T> {
    pub height: usize,
    pub width: usize,
    pub data: Vec<T>,
}

impl<T: Copy> Raster<T> {
    pub fn new(height: usize, width: usize, data: Vec<T>) -> Result<Self> {
        if data.len() != height * width {
            return Err(Error::dim(
                "raster",
                format!("{} values for a {height}x{width} raster", data.len()),
            ));
        }
        Ok(Raster { height, width, data })
    }

    pub fn filled(height: usize, width: usize, value: T) -> Self {
        Raster {
            height,
            width,
            data: vec![value; height * width],
        }
    }

    pub fn get(&self, row: usize, col: usize) -> T {
        self.data[row * self.width + col]
    }
}

/// Class indices `{0: other, 1: corn, 2: soybean}`.
pub type LabelRaster = Raster<u8>;
/// `true` where a pixel takes part in training, loss and metrics.
pub type ValidityMask = Raster<bool>;

pub const CLASS_NAMES: [&str; 3] = ["other", "corn", "soybean"];

impl ValidityMask {
    pub fn count_valid(&self) -> usize {
        self.data.iter().filter(|&&v| v).count()
    }
}

/// Raw observations on irregular acquisition dates.
#[derive(Debug, Clone, PartialEq)]
pub struct SceneStack {
    /// `(band, observation, row, col)` reflectance.
    pub observations: Tensor<f32>,
    /// Day-of-year of each observation, strictly increasing.
    pub dates: Vec<u16>,
    /// `(observation, row, col)` flags; `true` marks a usable sample.
    pub qa: Vec<bool>,
}

impl SceneStack {
    pub fn new(observations: Tensor<f32>, dates: Vec<u16>, qa: Vec<bool>) -> Result<Self> {
        let [_, k, h, w] = observations.dims::<4>("observations")?;
        if dates.len() != k {
            return Err(Error::dim(
                "observation",
                format!("{} dates for {k} observations", dates.len()),
            ));
        }
        if dates.windows(2).any(|d| d[0] >= d[1]) {
            return Err(Error::Data("observation dates must be strictly increasing".into()));
        }
        if qa.len() != k * h * w {
            return Err(Error::dim("qa", format!("{} flags for {k}x{h}x{w}", qa.len())));
        }
        Ok(SceneStack {
            observations,
            dates,
            qa,
        })
    }

    pub fn dims(&self) -> [usize; 4] {
        let s = self.observations.shape();
        [s[0], s[1], s[2], s[3]]
    }
}

/// Gap-filled reflectance on a regular time grid.
#[derive(Debug, Clone, PartialEq)]
pub struct RegularCube {
    /// `(band, time, row, col)`; zero at invalid pixels.
    pub data: Tensor<f32>,
    pub pixel_valid: ValidityMask,
}

impl RegularCube {
    pub fn new(data: Tensor<f32>, pixel_valid: ValidityMask) -> Result<Self> {
        let [_, _, h, w] = data.dims::<4>("cube")?;
        if pixel_valid.height != h || pixel_valid.width != w {
            return Err(Error::dim(
                "raster",
                format!(
                    "mask is {}x{}, cube is {h}x{w}",
                    pixel_valid.height, pixel_valid.width
                ),
            ));
        }
        Ok(RegularCube { data, pixel_valid })
    }

    pub fn bands(&self) -> usize {
        self.data.shape()[0]
    }

    pub fn time_steps(&self) -> usize {
        self.data.shape()[1]
    }

    pub fn height(&self) -> usize {
        self.data.shape()[2]
    }

    pub fn width(&self) -> usize {
        self.data.shape()[3]
    }
}
