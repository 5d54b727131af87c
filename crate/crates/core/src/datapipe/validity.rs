use super::{Raster, SceneStack, ValidityMask};
use crate::error::{Error, Result};

/// Day-of-year of May 15 (non-leap); only observations after it count.
pub const SEASON_CUTOFF_DOY: u16 = 135;
/// Pixels with fewer valid observations after the cutoff are excluded.
pub const MIN_VALID_OBSERVATIONS: usize = 7;

/// Marks a pixel valid iff it has at least seven valid observations strictly
/// after May 15.
pub fn pixel_validity(stack: &SceneStack) -> Result<ValidityMask> {
    let [_, k, h, w] = stack.dims();
    let late: Vec<usize> = (0..k)
        .filter(|&i| stack.dates[i] > SEASON_CUTOFF_DOY)
        .collect();
    if late.is_empty() {
        return Err(Error::Config(format!(
            "no observations after day-of-year {SEASON_CUTOFF_DOY}"
        )));
    }
    let plane = h * w;
    let data = (0..plane)
        .map(|p| {
            let count = late.iter().filter(|&&i| stack.qa[i * plane + p]).count();
            count >= MIN_VALID_OBSERVATIONS
        })
        .collect();
    Raster::new(h, w, data)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ndtensor::Tensor;

    fn single_pixel(dates: Vec<u16>, qa: Vec<bool>) -> SceneStack {
        let obs = Tensor::zeros(&[1, dates.len(), 1, 1]);
        SceneStack::new(obs, dates, qa).unwrap()
    }

    #[test]
    fn boundary_at_seven() {
        let dates: Vec<u16> = (0..10).map(|i| 140 + 8 * i).collect();
        let mut qa = vec![false; 10];
        qa[..6].iter_mut().for_each(|q| *q = true);
        assert!(!pixel_validity(&single_pixel(dates.clone(), qa.clone())).unwrap().data[0]);
        qa[6] = true;
        assert!(pixel_validity(&single_pixel(dates.clone(), qa)).unwrap().data[0]);
        assert!(pixel_validity(&single_pixel(dates, vec![true; 10])).unwrap().data[0]);
    }

    #[test]
    fn may15_itself_does_not_count() {
        let dates = vec![100, 135, 150, 160, 170, 180, 190, 200];
        // seven valid, but only six strictly after the cutoff
        let qa = vec![false, true, true, true, true, true, true, true];
        assert!(!pixel_validity(&single_pixel(dates, qa)).unwrap().data[0]);
    }

    #[test]
    fn no_late_dates_is_config_error() {
        let stack = single_pixel(vec![100, 120, 135], vec![true; 3]);
        assert!(matches!(pixel_validity(&stack), Err(Error::Config(_))));
    }
}
