//! Confusion-matrix accounting, Cohen's kappa, macro-averaged producer's
//! and user's accuracy, and agreement (difference) maps.

use crate::error::{Error, Result};

/// Code for a pixel where prediction and reference agree.
pub const AGREE: u8 = 0;
pub const DISAGREE: u8 = 1;
/// Code for a pixel excluded by the validity mask.
pub const INVALID: u8 = 255;

/// `C × C` counts, rows = reference class, columns = predicted class.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfusionMatrix {
    classes: usize,
    counts: Vec<u64>,
}

/// A macro-average together with the classes left out of it.
#[derive(Debug, Clone, PartialEq)]
pub struct MacroAverage {
    pub value: f64,
    /// `None` where the class had a zero denominator.
    pub per_class: Vec<Option<f64>>,
    pub excluded: Vec<usize>,
}

impl ConfusionMatrix {
    pub fn new(classes: usize) -> Self {
        ConfusionMatrix {
            classes,
            counts: vec![0; classes * classes],
        }
    }

    /// Row-major counts, reference on rows.
    pub fn from_counts(classes: usize, counts: Vec<u64>) -> Result<Self> {
        if counts.len() != classes * classes {
            return Err(Error::dim(
                "counts",
                format!("{} counts for {classes} classes", counts.len()),
            ));
        }
        Ok(ConfusionMatrix { classes, counts })
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn get(&self, reference: usize, predicted: usize) -> u64 {
        self.counts[reference * self.classes + predicted]
    }

    pub fn counts(&self) -> &[u64] {
        &self.counts
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn trace(&self) -> u64 {
        (0..self.classes).map(|k| self.get(k, k)).sum()
    }

    pub fn row_sum(&self, k: usize) -> u64 {
        (0..self.classes).map(|j| self.get(k, j)).sum()
    }

    pub fn col_sum(&self, k: usize) -> u64 {
        (0..self.classes).map(|i| self.get(i, k)).sum()
    }

    /// Counts every valid pixel; invalid pixels are ignored.
    pub fn accumulate(&mut self, predicted: &[u8], reference: &[u8], valid: &[bool]) -> Result<()> {
        if predicted.len() != reference.len() || predicted.len() != valid.len() {
            return Err(Error::dim(
                "pixels",
                format!(
                    "prediction {}, reference {}, mask {} pixels",
                    predicted.len(),
                    reference.len(),
                    valid.len()
                ),
            ));
        }
        for ((&p, &r), &ok) in predicted.iter().zip(reference).zip(valid) {
            if !ok {
                continue;
            }
            let (p, r) = (p as usize, r as usize);
            if p >= self.classes || r >= self.classes {
                return Err(Error::Data(format!(
                    "class index {} >= {}",
                    p.max(r),
                    self.classes
                )));
            }
            self.counts[r * self.classes + p] += 1;
        }
        Ok(())
    }

    /// Elementwise sum of two matrices over disjoint pixel sets.
    pub fn merge(&mut self, other: &ConfusionMatrix) -> Result<()> {
        if other.classes != self.classes {
            return Err(Error::dim("classes", "cannot merge matrices of different size"));
        }
        for (a, b) in self.counts.iter_mut().zip(&other.counts) {
            *a += b;
        }
        Ok(())
    }

    /// Cohen's kappa `(p_o − p_e) / (1 − p_e)`. When `p_e == 1` kappa is
    /// defined as 1 if `p_o == 1` and 0 otherwise.
    pub fn kappa(&self) -> Result<f64> {
        let total = self.total();
        if total == 0 {
            return Err(Error::Metric("kappa of an empty confusion matrix".into()));
        }
        let n = total as f64;
        let p_o = self.trace() as f64 / n;
        let p_e = (0..self.classes)
            .map(|k| self.row_sum(k) as f64 * self.col_sum(k) as f64)
            .sum::<f64>()
            / (n * n);
        if p_e >= 1.0 {
            return Ok(if p_o >= 1.0 { 1.0 } else { 0.0 });
        }
        Ok((p_o - p_e) / (1.0 - p_e))
    }

    fn macro_average(&self, denom: impl Fn(usize) -> u64, what: &str) -> Result<MacroAverage> {
        if self.total() == 0 {
            return Err(Error::Metric(format!("{what} of an empty confusion matrix")));
        }
        let per_class: Vec<Option<f64>> = (0..self.classes)
            .map(|k| {
                let d = denom(k);
                (d > 0).then(|| self.get(k, k) as f64 / d as f64)
            })
            .collect();
        let present: Vec<f64> = per_class.iter().flatten().copied().collect();
        if present.is_empty() {
            return Err(Error::Metric(format!("{what}: every class has a zero denominator")));
        }
        let excluded = (0..self.classes).filter(|&k| per_class[k].is_none()).collect();
        Ok(MacroAverage {
            value: present.iter().sum::<f64>() / present.len() as f64,
            per_class,
            excluded,
        })
    }

    /// Mean over classes of diagonal / row sum (per-class recall).
    pub fn macro_producers_accuracy(&self) -> Result<MacroAverage> {
        self.macro_average(|k| self.row_sum(k), "producer's accuracy")
    }

    /// Mean over classes of diagonal / column sum (per-class precision).
    pub fn macro_users_accuracy(&self) -> Result<MacroAverage> {
        self.macro_average(|k| self.col_sum(k), "user's accuracy")
    }
}

/// Per-pixel agreement codes: [`AGREE`], [`DISAGREE`] or [`INVALID`].
pub fn difference_map(predicted: &[u8], reference: &[u8], valid: &[bool]) -> Result<Vec<u8>> {
    if predicted.len() != reference.len() || predicted.len() != valid.len() {
        return Err(Error::dim("pixels", "prediction, reference and mask lengths differ"));
    }
    Ok(predicted
        .iter()
        .zip(reference)
        .zip(valid)
        .map(|((&p, &r), &ok)| match (ok, p == r) {
            (false, _) => INVALID,
            (true, true) => AGREE,
            (true, false) => DISAGREE,
        })
        .collect())
}

/// Index of the largest probability per pixel of a `(C, H·W)` plane stack;
/// ties go to the lowest class.
pub fn argmax_classes<T: PartialOrd + Copy>(probs: &[T], classes: usize) -> Vec<u8> {
    let plane = probs.len() / classes.max(1);
    (0..plane)
        .map(|q| {
            let mut best = 0;
            for k in 1..classes {
                if probs[k * plane + q] > probs[best * plane + q] {
                    best = k;
                }
            }
            best as u8
        })
        .collect()
}
