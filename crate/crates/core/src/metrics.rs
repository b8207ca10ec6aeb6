//! Accuracy metrics against a ground-truth sensitivity matrix.

use nalgebra::DMatrix;

use crate::model::SensitivityMatrix;
use crate::scalar::{to_f64, Scalar};

/// Per-bus relative error RE_j = ‖ĥ_j − h_j‖ / ‖h_j‖.
///
/// `None` for buses whose true column is zero (the slack under the DC model),
/// where the ratio is undefined.
pub fn relative_errors<T: Scalar>(
    estimate: &SensitivityMatrix<T>,
    truth: &SensitivityMatrix<T>,
) -> Vec<Option<f64>> {
    relative_errors_raw(estimate.as_matrix(), truth.as_matrix())
}

pub(crate) fn relative_errors_raw<T: Scalar>(est: &DMatrix<T>, truth: &DMatrix<T>) -> Vec<Option<f64>> {
    (0..truth.ncols())
        .map(|j| {
            let t = truth.column(j);
            let denom = to_f64(t.norm());
            if denom == 0.0 {
                None
            } else {
                Some(to_f64((est.column(j) - t).norm()) / denom)
            }
        })
        .collect()
}

/// The defined entries of [`relative_errors`].
pub fn defined(res: &[Option<f64>]) -> Vec<f64> {
    res.iter().flatten().copied().collect()
}

/// Median of a sample; NaN for an empty slice.
pub fn median(values: &[f64]) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    let mut v = values.to_vec();
    v.sort_by(|a, b| a.total_cmp(b));
    let mid = v.len() / 2;
    if v.len().is_multiple_of(2) {
        0.5 * (v[mid - 1] + v[mid])
    } else {
        v[mid]
    }
}

/// Median RE over buses with a nonzero true column.
pub fn median_relative_error<T: Scalar>(
    estimate: &SensitivityMatrix<T>,
    truth: &SensitivityMatrix<T>,
) -> f64 {
    median(&defined(&relative_errors(estimate, truth)))
}

/// Confusion counts for a recovered support against the true one.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct SupportCounts {
    pub true_positives: usize,
    pub false_positives: usize,
    pub false_negatives: usize,
}

impl SupportCounts {
    pub fn precision(&self) -> f64 {
        let d = self.true_positives + self.false_positives;
        if d == 0 {
            1.0
        } else {
            self.true_positives as f64 / d as f64
        }
    }

    pub fn recall(&self) -> f64 {
        let d = self.true_positives + self.false_negatives;
        if d == 0 {
            1.0
        } else {
            self.true_positives as f64 / d as f64
        }
    }
}

impl std::ops::AddAssign for SupportCounts {
    fn add_assign(&mut self, rhs: Self) {
        self.true_positives += rhs.true_positives;
        self.false_positives += rhs.false_positives;
        self.false_negatives += rhs.false_negatives;
    }
}

/// Compares the support of `estimate` (entries above `rel_threshold`·max|estimate|)
/// with the nonzero pattern of `truth`.
pub fn support_counts<T: Scalar>(estimate: &DMatrix<T>, truth: &DMatrix<T>, rel_threshold: f64) -> SupportCounts {
    let cut = rel_threshold * to_f64(estimate.amax());
    let mut c = SupportCounts::default();
    for (e, t) in estimate.iter().zip(truth.iter()) {
        let detected = cut > 0.0 && to_f64(e.abs()) > cut;
        let actual = *t != T::zero();
        match (detected, actual) {
            (true, true) => c.true_positives += 1,
            (true, false) => c.false_positives += 1,
            (false, true) => c.false_negatives += 1,
            (false, false) => {}
        }
    }
    c
}
