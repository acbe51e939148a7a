use rand::Rng;

use crate::error::{Error, Result};
use crate::real::Real;

/// Binary channel mask applied to the combined factor features.
#[derive(Debug, Clone, PartialEq)]
pub struct DropoutMask {
    pub mu: f64,
    pub mask: Vec<u8>,
}

impl DropoutMask {
    pub fn k(&self) -> usize {
        self.mask.len()
    }

    pub fn zeros(&self) -> usize {
        self.mask.iter().filter(|&&m| m == 0).count()
    }

    /// Per-channel multipliers `m_k / (1 - mu)`. Surviving channels are
    /// rescaled so the expected features match evaluation, where no mask is
    /// applied.
    pub fn scales<T: Real>(&self) -> Vec<T> {
        let keep = T::of(1.0 / (1.0 - self.mu));
        self.mask
            .iter()
            .map(|&m| if m == 1 { keep } else { T::zero() })
            .collect()
    }
}

/// Draws a mask with each of the `k` entries dropped with probability `mu`.
pub fn sample_dropout_mask<R: Rng + ?Sized>(k: usize, mu: f64, rng: &mut R) -> Result<DropoutMask> {
    if !(0.0..1.0).contains(&mu) {
        return Err(Error::InvalidArgument(format!(
            "dropout probability must lie in [0, 1), got {mu}"
        )));
    }
    let mask = if mu == 0.0 {
        vec![1; k]
    } else {
        (0..k).map(|_| if rng.random::<f64>() < mu { 0 } else { 1 }).collect()
    };
    Ok(DropoutMask { mu, mask })
}
