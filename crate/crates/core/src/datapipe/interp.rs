use super::{season_grid, RegularCube, SceneStack, ValidityMask};
use crate::error::{Error, Result};
use crate::ndtensor::Tensor;

/// Piecewise-linear interpolation of `(day, value)` knots at `targets`,
/// holding the first/last knot value outside the knot range. Knots must be
/// nonempty and strictly increasing in day; targets ascending.
pub fn interpolate_series(days: &[f64], values: &[f64], targets: &[f64]) -> Vec<f64> {
    debug_assert!(!days.is_empty() && days.len() == values.len());
    let last = days.len() - 1;
    let mut seg = 0;
    targets
        .iter()
        .map(|&x| {
            if x <= days[0] {
                return values[0];
            }
            if x >= days[last] {
                return values[last];
            }
            while days[seg + 1] < x {
                seg += 1;
            }
            if days[seg + 1] == x {
                return values[seg + 1];
            }
            let frac = (x - days[seg]) / (days[seg + 1] - days[seg]);
            values[seg] + (values[seg + 1] - values[seg]) * frac
        })
        .collect()
}

/// Resamples every retained pixel's valid observations onto the 23-step
/// weekly grid. Excluded pixels are filled with zeros.
pub fn interpolate_to_grid(stack: &SceneStack, mask: &ValidityMask) -> Result<RegularCube> {
    let [bands, k, h, w] = stack.dims();
    if mask.height != h || mask.width != w {
        return Err(Error::dim("raster", "validity mask does not match the stack"));
    }
    let grid: Vec<f64> = season_grid().into_iter().map(f64::from).collect();
    let steps = grid.len();
    let plane = h * w;
    let obs = stack.observations.data();
    let mut out = Tensor::<f32>::zeros(&[bands, steps, h, w]);

    let mut days = Vec::with_capacity(k);
    let mut values = Vec::with_capacity(k);
    for p in 0..plane {
        if !mask.data[p] {
            continue;
        }
        let usable: Vec<usize> = (0..k).filter(|&i| stack.qa[i * plane + p]).collect();
        if usable.is_empty() {
            return Err(Error::Internal(format!(
                "retained pixel ({}, {}) has no valid observation",
                p / w,
                p % w
            )));
        }
        days.clear();
        days.extend(usable.iter().map(|&i| f64::from(stack.dates[i])));
        for b in 0..bands {
            values.clear();
            values.extend(usable.iter().map(|&i| obs[(b * k + i) * plane + p] as f64));
            let series = interpolate_series(&days, &values, &grid);
            let dst = out.data_mut();
            for (t, v) in series.into_iter().enumerate() {
                dst[(b * steps + t) * plane + p] = v as f32;
            }
        }
    }
    RegularCube::new(out, mask.clone())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datapipe::Raster;

    fn on_grid(step: usize) -> f64 {
        112.0 + 7.0 * step as f64
    }

    #[test]
    fn fills_gap_linearly() {
        let grid: Vec<f64> = (0..23).map(on_grid).collect();
        let out = interpolate_series(&[on_grid(2), on_grid(6)], &[0.2, 0.6], &grid);
        for (step, want) in [(3, 0.3), (4, 0.4), (5, 0.5)] {
            assert!((out[step] - want).abs() < 1e-12);
        }
        assert_eq!(out[0], 0.2);
        assert_eq!(out[22], 0.6);
    }

    #[test]
    fn single_observation_holds_constant() {
        let grid: Vec<f64> = (0..23).map(on_grid).collect();
        let out = interpolate_series(&[180.0], &[0.37], &grid);
        assert!(out.iter().all(|&v| v == 0.37));
    }

    #[test]
    fn ignores_flagged_observations() {
        let dates = vec![112, 119, 126];
        let obs = Tensor::new(vec![1, 3, 1, 1], vec![0.1, 9.0, 0.3]).unwrap();
        let stack = SceneStack::new(obs, dates, vec![true, false, true]).unwrap();
        let cube = interpolate_to_grid(&stack, &Raster::filled(1, 1, true)).unwrap();
        assert!((cube.data.data()[1] - 0.2).abs() < 1e-6);
    }

    #[test]
    fn retained_pixel_without_observations_is_internal_error() {
        let obs = Tensor::zeros(&[1, 2, 1, 1]);
        let stack = SceneStack::new(obs, vec![150, 160], vec![false, false]).unwrap();
        let err = interpolate_to_grid(&stack, &Raster::filled(1, 1, true)).unwrap_err();
        assert!(matches!(err, Error::Internal(_)));
        let cube = interpolate_to_grid(&stack, &Raster::filled(1, 1, false)).unwrap();
        assert_eq!(cube.data.max_abs(), 0.0);
    }
}
