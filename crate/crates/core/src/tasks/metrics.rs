//! Reconstruction metrics.

use crate::real::Real;

/// Reported for a perfect reconstruction.
pub const PSNR_CEILING: f64 = 99.0;

pub fn mse<T: Real>(pred: &[T], target: &[T]) -> f64 {
    assert_eq!(pred.len(), target.len(), "mse of unequal lengths");
    if pred.is_empty() {
        return 0.0;
    }
    let s: f64 = pred
        .iter()
        .zip(target)
        .map(|(&p, &t)| {
            let d = p.as_f64() - t.as_f64();
            d * d
        })
        .sum();
    s / pred.len() as f64
}

/// Peak signal-to-noise ratio for values in `[0, 1]`, capped at `ceiling`.
pub fn psnr_with_ceiling<T: Real>(pred: &[T], target: &[T], ceiling: f64) -> f64 {
    let m = mse(pred, target);
    if m <= 0.0 {
        return ceiling;
    }
    (-10.0 * m.log10()).min(ceiling)
}

pub fn psnr<T: Real>(pred: &[T], target: &[T]) -> f64 {
    psnr_with_ceiling(pred, target, PSNR_CEILING)
}

/// Intersection over union of the positive-sign sets; 1 when both are empty.
pub fn giou<T: Real>(pred: &[T], truth: &[T]) -> f64 {
    assert_eq!(pred.len(), truth.len(), "giou of unequal lengths");
    let (mut inter, mut union) = (0usize, 0usize);
    for (&p, &t) in pred.iter().zip(truth) {
        let (a, b) = (p > T::zero(), t > T::zero());
        inter += (a && b) as usize;
        union += (a || b) as usize;
    }
    if union == 0 {
        1.0
    } else {
        inter as f64 / union as f64
    }
}
