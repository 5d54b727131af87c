//! Browser bindings: generate a cloudy synthetic scene, inspect a pixel's
//! raw and gap-filled time series, and compare the soft IoU and
//! cross-entropy losses on a hand-built prediction.

use cropseg::datapipe::{
    interpolate_to_grid, pixel_validity, season_grid, synthesize_raw, RegularCube, SynthSpec, SyntheticRaw,
    ValidityMask,
};
use cropseg::loss::{cross_entropy_loss, iou_loss, GroundMask};
use cropseg::Tensor;
use wasm_bindgen::prelude::*;

const CLASS_COLORS: [[u8; 3]; 3] = [[0, 0, 0], [255, 211, 0], [38, 115, 0]];
const EXCLUDED: [u8; 3] = [128, 128, 128];

// nir, swir1, red
const COMPOSITE_BANDS: [usize; 3] = [5, 3, 0];

#[wasm_bindgen]
pub struct Scene {
    raw: SyntheticRaw,
    valid: ValidityMask,
    cube: RegularCube,
}

#[wasm_bindgen]
impl Scene {
    /// Synthesizes raw observations and runs validity filtering and gap
    /// filling on them.
    #[wasm_bindgen(constructor)]
    pub fn new(seed: u32, size: usize, noise: f64, invalid_fraction: f64, fields: usize) -> Result<Scene, String> {
        let spec = SynthSpec {
            height: size,
            width: size,
            noise,
            invalid_fraction,
            fields,
            ..SynthSpec::default()
        };
        let raw = synthesize_raw(&spec, u64::from(seed)).map_err(|e| e.to_string())?;
        let valid = pixel_validity(&raw.stack).map_err(|e| e.to_string())?;
        let cube = interpolate_to_grid(&raw.stack, &valid).map_err(|e| e.to_string())?;
        Ok(Scene { raw, valid, cube })
    }

    pub fn size(&self) -> usize {
        self.valid.width
    }

    pub fn excluded(&self) -> usize {
        self.valid.data.len() - self.valid.count_valid()
    }

    pub fn label_at(&self, row: usize, col: usize) -> u8 {
        self.raw.labels.get(row, col)
    }

    pub fn is_valid(&self, row: usize, col: usize) -> bool {
        self.valid.get(row, col)
    }

    /// Reference classes as RGBA; excluded pixels grey.
    pub fn labels_rgba(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(self.valid.data.len() * 4);
        for (&class, &ok) in self.raw.labels.data.iter().zip(&self.valid.data) {
            let rgb = if ok { CLASS_COLORS[class as usize % 3] } else { EXCLUDED };
            out.extend_from_slice(&[rgb[0], rgb[1], rgb[2], 255]);
        }
        out
    }

    /// False-colour composite of the gap-filled cube at grid step `step`,
    /// linearly stretched over the whole season.
    pub fn composite_rgba(&self, step: usize) -> Vec<u8> {
        let (steps, plane) = (self.cube.time_steps(), self.cube.height() * self.cube.width());
        let t = step.min(steps - 1);
        let data = self.cube.data.data();
        let mut out = vec![255u8; plane * 4];
        for (channel, &band) in COMPOSITE_BANDS.iter().enumerate() {
            let season = &data[band * steps * plane..(band + 1) * steps * plane];
            let (lo, hi) = season
                .iter()
                .zip(self.valid.data.iter().cycle())
                .filter(|(_, &ok)| ok)
                .fold((f32::MAX, f32::MIN), |(lo, hi), (&v, _)| (lo.min(v), hi.max(v)));
            let span = (hi - lo).max(1e-6);
            for p in 0..plane {
                let v = if self.valid.data[p] {
                    ((season[t * plane + p] - lo) / span * 255.0).clamp(0.0, 255.0) as u8
                } else {
                    EXCLUDED[channel]
                };
                out[p * 4 + channel] = v;
            }
        }
        out
    }

    pub fn raw_days(&self) -> Vec<u16> {
        self.raw.stack.dates.clone()
    }

    /// Raw reflectance of one band at `(row, col)` on every acquisition date.
    pub fn raw_series(&self, row: usize, col: usize, band: usize) -> Vec<f32> {
        let [_, k, h, w] = self.raw.stack.dims();
        let p = row * w + col;
        let obs = self.raw.stack.observations.data();
        (0..k).map(|i| obs[(band * k + i) * h * w + p]).collect()
    }

    /// 1 where the acquisition at `(row, col)` is clear.
    pub fn raw_clear(&self, row: usize, col: usize) -> Vec<u8> {
        let [_, k, h, w] = self.raw.stack.dims();
        let p = row * w + col;
        (0..k).map(|i| u8::from(self.raw.stack.qa[i * h * w + p])).collect()
    }

    /// Gap-filled series on the weekly grid; zeros at excluded pixels.
    pub fn grid_series(&self, row: usize, col: usize, band: usize) -> Vec<f32> {
        let (steps, plane) = (self.cube.time_steps(), self.cube.height() * self.cube.width());
        let p = row * self.cube.width() + col;
        let data = self.cube.data.data();
        (0..steps).map(|t| data[(band * steps + t) * plane + p]).collect()
    }
}

#[wasm_bindgen]
pub fn grid_days() -> Vec<u16> {
    season_grid()
}

/// Evaluates both losses on one example. `probs` is `(classes, pixels)`
/// row-major, `labels` has one class per pixel. Returns the IoU loss, the
/// cross-entropy loss, then the per-class IoU.
#[wasm_bindgen]
pub fn loss_values(probs: &[f64], labels: &[u8], classes: usize) -> Result<Vec<f64>, String> {
    let pixels = labels.len();
    let pred = Tensor::new(vec![1, classes, 1, pixels], probs.to_vec()).map_err(|e| e.to_string())?;
    let truth = GroundMask::from_labels(labels, &vec![true; pixels], [1, 1, pixels], classes).map_err(|e| e.to_string())?;
    let iou = iou_loss(&pred, &truth).map_err(|e| e.to_string())?;
    let ce = cross_entropy_loss(&pred, &truth).map_err(|e| e.to_string())?;
    let mut out = vec![iou.value, ce.value];
    out.extend(iou.per_class_iou);
    Ok(out)
}
