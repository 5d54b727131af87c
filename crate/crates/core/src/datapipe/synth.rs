use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::{season_grid, LabelRaster, Raster, RegularCube, SceneStack, ValidityMask, GRID_START_DOY};
use crate::error::{Error, Result};
use crate::manifest::{f32_le_bytes, fnv1a};
use crate::ndtensor::Tensor;

/// Parameters of a synthetic scene.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthSpec {
    pub height: usize,
    pub width: usize,
    pub bands: usize,
    pub time_steps: usize,
    pub classes: usize,
    /// Standard deviation of the per-pixel reflectance noise.
    pub noise: f64,
    /// Probability that a pixel is marked invalid.
    pub invalid_fraction: f64,
    /// Number of Voronoi fields painted with a single class each.
    pub fields: usize,
}

impl Default for SynthSpec {
    fn default() -> Self {
        SynthSpec {
            height: 64,
            width: 64,
            bands: 6,
            time_steps: 23,
            classes: 3,
            noise: 0.02,
            invalid_fraction: 0.05,
            fields: 24,
        }
    }
}

impl SynthSpec {
    fn validate(&self) -> Result<()> {
        if self.height == 0 || self.width == 0 || self.bands == 0 || self.time_steps == 0 {
            return Err(Error::Config("synthetic scene dimensions must be positive".into()));
        }
        if self.classes == 0 || self.classes > u8::MAX as usize {
            return Err(Error::Config(format!("unsupported class count {}", self.classes)));
        }
        if self.fields == 0 {
            return Err(Error::Config("synthetic scene needs at least one field".into()));
        }
        if !(self.noise >= 0.0 && self.noise.is_finite()) {
            return Err(Error::Config(format!("noise must be finite and >= 0, got {}", self.noise)));
        }
        if !(0.0..=1.0).contains(&self.invalid_fraction) {
            return Err(Error::Config(format!(
                "invalid fraction must lie in [0, 1], got {}",
                self.invalid_fraction
            )));
        }
        Ok(())
    }
}

/// A gap-filled synthetic cube with its reference labels.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticScene {
    pub cube: RegularCube,
    pub labels: LabelRaster,
}

impl SyntheticScene {
    pub fn mask(&self) -> &ValidityMask {
        &self.cube.pixel_valid
    }

    /// FNV-1a over cube values, labels and mask.
    pub fn checksum(&self) -> u64 {
        let mut bytes = f32_le_bytes(self.cube.data.data().iter().copied());
        bytes.extend_from_slice(&self.labels.data);
        bytes.extend(self.cube.pixel_valid.data.iter().map(|&v| v as u8));
        fnv1a(&bytes)
    }
}

/// Raw irregular observations with cloud flags, ready for preprocessing.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticRaw {
    pub stack: SceneStack,
    pub labels: LabelRaster,
}

const BASE: [f64; 6] = [0.18, 0.14, 0.12, 0.30, 0.24, 0.22];
// Per-class response of each band to green-up. Visible and SWIR drop and NIR
// rises; the crops differ in spectral shape as well as in timing.
const RESPONSE: [[f64; 6]; 3] = [
    [-0.05, -0.01, -0.03, -0.03, -0.06, 0.10],
    [-0.05, -0.01, -0.03, -0.03, -0.06, 0.10],
    [-0.03, 0.02, -0.02, -0.06, -0.03, 0.12],
];

/// (peak position, width, amplitude) of the green-up bump, on a season
/// coordinate running from 0 at the first grid day to 1 at the last.
fn phenology(class: usize, classes: usize) -> (f64, f64, f64) {
    const KNOWN: [(f64, f64, f64); 3] = [(0.30, 0.35, 1.0), (0.68, 0.14, 3.0), (0.50, 0.12, 2.6)];
    if classes <= KNOWN.len() {
        return KNOWN[class];
    }
    let frac = class as f64 / (classes - 1) as f64;
    (0.25 + 0.5 * frac, 0.12 + 0.1 * frac, 1.0 + 2.0 * frac)
}

fn response(class: usize, band: usize) -> f64 {
    let row = if class < RESPONSE.len() { class } else { 1 + class % 2 };
    RESPONSE[row][band % 6]
}

fn season_coordinate(day: f64) -> f64 {
    let grid = season_grid();
    let first = f64::from(grid[0]);
    let last = f64::from(*grid.last().unwrap());
    (day - first) / (last - first)
}

fn signature_at(class: usize, classes: usize, band: usize, day: f64, amp_scale: f64) -> f64 {
    let (peak, width, amp) = phenology(class, classes);
    let s = season_coordinate(day);
    let bump = (-((s - peak) / width).powi(2)).exp();
    BASE[band % BASE.len()] + response(class, band) * amp * amp_scale * bump
}

fn grid_days(time_steps: usize) -> Vec<f64> {
    let grid = season_grid();
    let span = f64::from(*grid.last().unwrap() - grid[0]);
    if time_steps == 1 {
        return vec![f64::from(GRID_START_DOY)];
    }
    (0..time_steps)
        .map(|t| f64::from(GRID_START_DOY) + span * t as f64 / (time_steps - 1) as f64)
        .collect()
}

/// Noise-free `(band, time)` series of `class`, row-major by band. With 23
/// steps the series is sampled exactly on the weekly grid.
pub fn class_signature(class: usize, spec: &SynthSpec) -> Vec<f32> {
    let days = grid_days(spec.time_steps);
    (0..spec.bands)
        .flat_map(|b| {
            days.iter()
                .map(move |&d| signature_at(class, spec.classes, b, d, 1.0) as f32)
                .collect::<Vec<_>>()
        })
        .collect()
}

struct Layout {
    labels: Vec<u8>,
    field_of: Vec<usize>,
    amp_scale: Vec<f64>,
}

/// Voronoi fields with classes cycled over fields, shuffled, so every class
/// appears when there are at least as many fields as classes.
fn paint_fields(spec: &SynthSpec, rng: &mut ChaCha8Rng) -> Result<Layout> {
    let (h, w) = (spec.height, spec.width);
    let centres: Vec<(f64, f64)> = (0..spec.fields)
        .map(|_| (rng.random::<f64>() * h as f64, rng.random::<f64>() * w as f64))
        .collect();
    let mut classes: Vec<u8> = (0..spec.fields).map(|i| (i % spec.classes) as u8).collect();
    for i in (1..classes.len()).rev() {
        let j = rng.random_range(0..=i);
        classes.swap(i, j);
    }
    let jitter = gaussian(2.0 * spec.noise)?;
    let amp_scale: Vec<f64> = (0..spec.fields)
        .map(|_| jitter.as_ref().map_or(1.0, |n| 1.0 + n.sample(rng)))
        .collect();
    let mut field_of = vec![0usize; h * w];
    for r in 0..h {
        for c in 0..w {
            let (y, x) = (r as f64 + 0.5, c as f64 + 0.5);
            let nearest = centres
                .iter()
                .enumerate()
                .map(|(i, &(cy, cx))| (i, (cy - y).powi(2) + (cx - x).powi(2)))
                .min_by(|a, b| a.1.total_cmp(&b.1))
                .map(|(i, _)| i)
                .unwrap_or(0);
            field_of[r * w + c] = nearest;
        }
    }
    let labels = field_of.iter().map(|&f| classes[f]).collect();
    Ok(Layout {
        labels,
        field_of,
        amp_scale,
    })
}

fn gaussian(std: f64) -> Result<Option<Normal<f64>>> {
    if std == 0.0 {
        return Ok(None);
    }
    Normal::new(0.0, std)
        .map(Some)
        .map_err(|e| Error::Config(format!("noise level {std}: {e}")))
}

/// Generates a gap-filled scene: class signatures painted over Voronoi
/// fields, per-field amplitude jitter, per-pixel Gaussian noise and a
/// random set of invalid (zeroed) pixels. Deterministic per seed.
pub fn synthesize_dataset(spec: &SynthSpec, seed: u64) -> Result<SyntheticScene> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let layout = paint_fields(spec, &mut rng)?;
    let noise = gaussian(spec.noise)?;
    let (h, w, bands, steps) = (spec.height, spec.width, spec.bands, spec.time_steps);
    let plane = h * w;
    let days = grid_days(steps);

    let valid: Vec<bool> = (0..plane)
        .map(|_| rng.random::<f64>() >= spec.invalid_fraction)
        .collect();
    let mut data = vec![0.0f32; bands * steps * plane];
    for p in 0..plane {
        if !valid[p] {
            continue;
        }
        let class = layout.labels[p] as usize;
        let scale = layout.amp_scale[layout.field_of[p]];
        for b in 0..bands {
            for (t, &day) in days.iter().enumerate() {
                let mut v = signature_at(class, spec.classes, b, day, scale);
                if let Some(n) = &noise {
                    v += n.sample(&mut rng);
                }
                data[(b * steps + t) * plane + p] = v as f32;
            }
        }
    }
    let cube = RegularCube::new(
        Tensor::new(vec![bands, steps, h, w], data)?,
        Raster::new(h, w, valid)?,
    )?;
    Ok(SyntheticScene {
        cube,
        labels: Raster::new(h, w, layout.labels)?,
    })
}

/// Day-of-year of the synthetic raw acquisitions: every 8 days from 96 to 280.
pub fn raw_dates() -> Vec<u16> {
    (96..=280).step_by(8).collect()
}

/// Reflectance reported for a cloudy observation in every band.
pub const CLOUD_REFLECTANCE: f32 = 0.8;

/// Generates raw acquisitions on irregular dates with cloud flags. Pixels
/// chosen invalid keep fewer than seven clear observations after the
/// season cutoff so the validity filter excludes them.
pub fn synthesize_raw(spec: &SynthSpec, seed: u64) -> Result<SyntheticRaw> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let layout = paint_fields(spec, &mut rng)?;
    let noise = gaussian(spec.noise)?;
    let dates = raw_dates();
    let (h, w, bands, k) = (spec.height, spec.width, spec.bands, dates.len());
    let plane = h * w;
    let late: Vec<usize> = (0..k)
        .filter(|&i| dates[i] > super::SEASON_CUTOFF_DOY)
        .collect();

    let mut obs = vec![0.0f32; bands * k * plane];
    let mut qa = vec![true; k * plane];
    for p in 0..plane {
        for i in 0..k {
            qa[i * plane + p] = rng.random::<f64>() >= 0.15;
        }
        if rng.random::<f64>() < spec.invalid_fraction {
            let keep = rng.random_range(0..super::MIN_VALID_OBSERVATIONS);
            let mut clear = 0;
            for &i in &late {
                if qa[i * plane + p] {
                    clear += 1;
                    if clear > keep {
                        qa[i * plane + p] = false;
                    }
                }
            }
        }
        let class = layout.labels[p] as usize;
        let scale = layout.amp_scale[layout.field_of[p]];
        for b in 0..bands {
            for i in 0..k {
                let v = if qa[i * plane + p] {
                    let mut v = signature_at(class, spec.classes, b, f64::from(dates[i]), scale);
                    if let Some(n) = &noise {
                        v += n.sample(&mut rng);
                    }
                    v as f32
                } else {
                    CLOUD_REFLECTANCE
                };
                obs[(b * k + i) * plane + p] = v;
            }
        }
    }
    Ok(SyntheticRaw {
        stack: SceneStack::new(Tensor::new(vec![bands, k, h, w], obs)?, dates, qa)?,
        labels: Raster::new(h, w, layout.labels)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datapipe::{interpolate_to_grid, pixel_validity};
    use crate::metrics::ConfusionMatrix;

    fn clean() -> SynthSpec {
        SynthSpec {
            noise: 0.0,
            ..SynthSpec::default()
        }
    }

    #[test]
    fn noise_free_pixels_equal_their_signature() {
        let spec = clean();
        let scene = synthesize_dataset(&spec, 3).unwrap();
        let sigs: Vec<_> = (0..3).map(|k| class_signature(k, &spec)).collect();
        let plane = spec.height * spec.width;
        let (bands, steps) = (spec.bands, spec.time_steps);
        for p in 0..plane {
            if !scene.cube.pixel_valid.data[p] {
                assert!((0..bands * steps).all(|bt| scene.cube.data.data()[bt * plane + p] == 0.0));
                continue;
            }
            let sig = &sigs[scene.labels.data[p] as usize];
            for bt in 0..bands * steps {
                assert_eq!(scene.cube.data.data()[bt * plane + p], sig[bt]);
            }
        }
    }

    #[test]
    fn same_seed_same_checksum() {
        let spec = SynthSpec::default();
        let a = synthesize_dataset(&spec, 11).unwrap();
        let b = synthesize_dataset(&spec, 11).unwrap();
        let c = synthesize_dataset(&spec, 12).unwrap();
        assert_eq!(a.checksum(), b.checksum());
        assert_ne!(a.checksum(), c.checksum());
    }

    #[test]
    fn invalid_fraction_is_roughly_respected() {
        let scene = synthesize_dataset(&SynthSpec::default(), 5).unwrap();
        let invalid = scene.mask().data.iter().filter(|&&v| !v).count() as f64;
        let frac = invalid / (64.0 * 64.0);
        assert!((0.03..0.07).contains(&frac), "{frac}");
    }

    #[test]
    fn every_class_is_painted() {
        let scene = synthesize_dataset(&SynthSpec::default(), 9).unwrap();
        for k in 0..3u8 {
            assert!(scene.labels.data.contains(&k));
        }
    }

    #[test]
    fn nearest_signature_oracle_is_near_perfect_without_noise() {
        let spec = clean();
        let scene = synthesize_dataset(&spec, 21).unwrap();
        let sigs: Vec<_> = (0..3).map(|k| class_signature(k, &spec)).collect();
        let plane = spec.height * spec.width;
        let pred: Vec<u8> = (0..plane)
            .map(|p| {
                let dist = |sig: &Vec<f32>| -> f64 {
                    sig.iter()
                        .enumerate()
                        .map(|(bt, &s)| (scene.cube.data.data()[bt * plane + p] as f64 - s as f64).powi(2))
                        .sum()
                };
                (0..3).min_by(|&a, &b| dist(&sigs[a]).total_cmp(&dist(&sigs[b]))).unwrap() as u8
            })
            .collect();
        let mut cm = ConfusionMatrix::new(3);
        cm.accumulate(&pred, &scene.labels.data, &scene.mask().data).unwrap();
        let kappa = cm.kappa().unwrap();
        assert!(kappa >= 0.99, "{kappa}");
    }

    #[test]
    fn raw_scene_survives_preprocessing() {
        let spec = SynthSpec {
            height: 16,
            width: 16,
            invalid_fraction: 0.2,
            ..SynthSpec::default()
        };
        let raw = synthesize_raw(&spec, 4).unwrap();
        let mask = pixel_validity(&raw.stack).unwrap();
        let valid = mask.count_valid();
        assert!(valid > 150 && valid < 240, "{valid}");
        let cube = interpolate_to_grid(&raw.stack, &mask).unwrap();
        assert_eq!(cube.time_steps(), 23);
        assert!(cube.data.all_finite());
    }
}
