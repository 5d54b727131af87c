use super::{band_names, RegularCube};
use crate::error::{Error, Result};

/// Per-band mean and (population) standard deviation, pooled over valid
/// pixels, time steps and cubes.
#[derive(Debug, Clone, PartialEq)]
pub struct NormStats {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

pub fn compute_norm_stats(cubes: &[&RegularCube]) -> Result<NormStats> {
    let bands = cubes
        .first()
        .ok_or_else(|| Error::Config("no training cubes for normalization statistics".into()))?
        .bands();
    if cubes.iter().any(|c| c.bands() != bands) {
        return Err(Error::dim("band", "training cubes disagree on band count"));
    }
    let names = band_names(bands);
    let mut mean = vec![0.0f64; bands];
    let mut std = vec![0.0f64; bands];
    for b in 0..bands {
        let mut count = 0usize;
        let mut sum = 0.0f64;
        for_each_valid(cubes, b, |x| {
            count += 1;
            sum += x;
        });
        if count == 0 {
            return Err(Error::Config("no valid pixels for normalization statistics".into()));
        }
        let mu = sum / count as f64;
        let mut sq = 0.0f64;
        for_each_valid(cubes, b, |x| sq += (x - mu) * (x - mu));
        let sigma = (sq / count as f64).sqrt();
        if !(sigma > 0.0) {
            return Err(Error::Config(format!("band `{}` has zero variance", names[b])));
        }
        mean[b] = mu;
        std[b] = sigma;
    }
    Ok(NormStats { mean, std })
}

fn for_each_valid(cubes: &[&RegularCube], band: usize, mut f: impl FnMut(f64)) {
    for cube in cubes {
        let (steps, plane) = (cube.time_steps(), cube.height() * cube.width());
        let data = cube.data.data();
        for t in 0..steps {
            let slab = &data[(band * steps + t) * plane..][..plane];
            for (&x, &ok) in slab.iter().zip(&cube.pixel_valid.data) {
                if ok {
                    f(x as f64);
                }
            }
        }
    }
}

fn transform(cube: &mut RegularCube, stats: &NormStats, f: impl Fn(f64, f64, f64) -> f64) -> Result<()> {
    let bands = cube.bands();
    if stats.mean.len() != bands || stats.std.len() != bands {
        return Err(Error::dim(
            "band",
            format!("statistics for {} bands, cube has {bands}", stats.mean.len()),
        ));
    }
    let (steps, plane) = (cube.time_steps(), cube.height() * cube.width());
    let valid = cube.pixel_valid.data.clone();
    let data = cube.data.data_mut();
    for b in 0..bands {
        for t in 0..steps {
            let slab = &mut data[(b * steps + t) * plane..][..plane];
            for (x, &ok) in slab.iter_mut().zip(&valid) {
                if ok {
                    *x = f(*x as f64, stats.mean[b], stats.std[b]) as f32;
                }
            }
        }
    }
    Ok(())
}

/// `x ← (x − mean_b) / std_b` at valid pixels; invalid pixels stay zero.
pub fn apply_norm(cube: &mut RegularCube, stats: &NormStats) -> Result<()> {
    transform(cube, stats, |x, m, s| (x - m) / s)
}

/// Inverse of [`apply_norm`].
pub fn invert_norm(cube: &mut RegularCube, stats: &NormStats) -> Result<()> {
    transform(cube, stats, |x, m, s| x * s + m)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datapipe::Raster;
    use crate::ndtensor::Tensor;

    #[test]
    fn three_pixel_hand_values() {
        // one band, one step, pixels 1, 2, 6 and an invalid 100
        let data = Tensor::new(vec![1, 1, 1, 4], vec![1.0, 2.0, 6.0, 100.0]).unwrap();
        let mask = Raster::new(1, 4, vec![true, true, true, false]).unwrap();
        let cube = RegularCube::new(data, mask).unwrap();
        let stats = compute_norm_stats(&[&cube]).unwrap();
        assert_eq!(stats.mean, vec![3.0]);
        // ((1-3)² + (2-3)² + (6-3)²) / 3 = 14/3
        assert_eq!(stats.std, vec![(14.0f64 / 3.0).sqrt()]);
    }

    #[test]
    fn centre_maps_to_zero() {
        let data = Tensor::new(vec![1, 1, 1, 1], vec![10.0]).unwrap();
        let mut cube = RegularCube::new(data, Raster::filled(1, 1, true)).unwrap();
        apply_norm(&mut cube, &NormStats { mean: vec![10.0], std: vec![2.0] }).unwrap();
        assert_eq!(cube.data.data(), &[0.0]);
    }

    #[test]
    fn constant_band_is_rejected_by_name() {
        let data = Tensor::filled(&[6, 2, 2, 2], 0.5);
        let cube = RegularCube::new(data, Raster::filled(2, 2, true)).unwrap();
        match compute_norm_stats(&[&cube]) {
            Err(Error::Config(msg)) => assert!(msg.contains("`red`")),
            other => panic!("unexpected {other:?}"),
        }
    }
}
