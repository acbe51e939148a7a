//! Parameter initialization: DCT patterns for basis grids, uniform noise for
//! everything else.

use rand::Rng;

use crate::engine::param::ParamTensor;
use crate::real::Real;

/// The first `count` DCT frequency vectors in `dims` dimensions, ordered by
/// increasing L1 norm with lexicographic tie-breaking.
pub fn dct_frequencies(dims: usize, count: usize) -> Vec<Vec<usize>> {
    fn push_with_sum(prefix: &mut Vec<usize>, left: usize, remaining: usize, out: &mut Vec<Vec<usize>>, cap: usize) {
        if out.len() >= cap {
            return;
        }
        if left == 1 {
            prefix.push(remaining);
            out.push(prefix.clone());
            prefix.pop();
            return;
        }
        for first in 0..=remaining {
            prefix.push(first);
            push_with_sum(prefix, left - 1, remaining - first, out, cap);
            prefix.pop();
            if out.len() >= cap {
                return;
            }
        }
    }

    let mut out = Vec::with_capacity(count);
    if dims == 0 {
        return out;
    }
    let mut norm = 0;
    while out.len() < count {
        push_with_sum(&mut Vec::with_capacity(dims), dims, norm, &mut out, count);
        norm += 1;
    }
    out
}

/// DCT-II basis value along one axis of extent `m`.
pub fn dct_value(freq: usize, index: usize, m: usize) -> f64 {
    (std::f64::consts::PI * freq as f64 * (2 * index + 1) as f64 / (2 * m) as f64).cos()
}

/// Fills a channel-last grid of shape `[M_1, .., M_D, C]` with separable
/// DCT-II patterns, one frequency vector per channel.
pub fn dct_init<T: Real>(grid: &mut ParamTensor<T>) {
    let (&channels, extents) = grid.shape.split_last().expect("grid has a channel axis");
    let dims = extents.len();
    let freqs = dct_frequencies(dims, channels);
    let cells: usize = extents.iter().product();
    // per-axis cosine tables
    let tables: Vec<Vec<Vec<f64>>> = (0..dims)
        .map(|d| {
            freqs
                .iter()
                .map(|kappa| (0..extents[d]).map(|i| dct_value(kappa[d], i, extents[d])).collect())
                .collect()
        })
        .collect();
    let mut coord = vec![0usize; dims];
    for cell in 0..cells {
        // row-major decomposition, last spatial axis fastest
        let mut rest = cell;
        for d in (0..dims).rev() {
            coord[d] = rest % extents[d];
            rest /= extents[d];
        }
        for k in 0..channels {
            let mut v = 1.0;
            for d in 0..dims {
                v *= tables[d][k][coord[d]];
            }
            grid.values[cell * channels + k] = T::of(v);
        }
    }
}

pub fn uniform_init<T: Real, R: Rng + ?Sized>(tensor: &mut ParamTensor<T>, scale: f64, rng: &mut R) {
    for v in &mut tensor.values {
        *v = T::of(rng.random_range(-scale..=scale));
    }
}
