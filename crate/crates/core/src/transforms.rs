//! Coordinate transforms, the multi-scale pyramid and space contraction.

use crate::error::{Error, Result};
use crate::real::Real;

/// Frequencies used when a periodic transform does not list its own.
pub const DEFAULT_FREQUENCIES: [f64; 6] = [2.0, 3.2, 4.4, 5.6, 6.8, 8.0];

/// Spatial hash primes, one per axis.
pub const HASH_PRIMES: [u64; 3] = [1, 2_654_435_761, 805_459_861];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TransformKind {
    Identity,
    Sawtooth,
    Triangular,
    /// `(sin(2 pi x) + 1) / 2`, usable as a grid coordinate.
    Sinusoidal,
    /// Raw `(sin(x f), cos(x f))` pairs for MLP inputs.
    SinCos,
    Hashing,
    Orthogonal1D,
    Orthogonal2D,
}

impl TransformKind {
    pub const ALL: [TransformKind; 8] = [
        TransformKind::Identity,
        TransformKind::Sawtooth,
        TransformKind::Triangular,
        TransformKind::Sinusoidal,
        TransformKind::SinCos,
        TransformKind::Hashing,
        TransformKind::Orthogonal1D,
        TransformKind::Orthogonal2D,
    ];

    pub fn name(self) -> &'static str {
        match self {
            TransformKind::Identity => "identity",
            TransformKind::Sawtooth => "sawtooth",
            TransformKind::Triangular => "triangular",
            TransformKind::Sinusoidal => "sinusoidal",
            TransformKind::SinCos => "sincos",
            TransformKind::Hashing => "hashing",
            TransformKind::Orthogonal1D => "orthogonal1d",
            TransformKind::Orthogonal2D => "orthogonal2d",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|k| k.name() == s)
    }

    /// Periodic transforms whose output indexes a grid in `[0, 1]`.
    pub fn is_periodic(self) -> bool {
        matches!(
            self,
            TransformKind::Sawtooth | TransformKind::Triangular | TransformKind::Sinusoidal
        )
    }

    pub fn is_orthogonal(self) -> bool {
        matches!(self, TransformKind::Orthogonal1D | TransformKind::Orthogonal2D)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TransformSpec {
    pub kind: TransformKind,
    /// Empty means one level at `f = 1`.
    pub frequencies: Vec<f64>,
    pub hash_table_log2_size: u32,
}

impl TransformSpec {
    pub fn new(kind: TransformKind, frequencies: Vec<f64>) -> Self {
        Self {
            kind,
            frequencies,
            hash_table_log2_size: 19,
        }
    }

    pub fn identity() -> Self {
        Self::new(TransformKind::Identity, Vec::new())
    }

    pub fn levels(&self) -> usize {
        self.frequencies.len().max(1)
    }

    pub fn frequency(&self, level: usize) -> f64 {
        self.frequencies.get(level).copied().unwrap_or(1.0)
    }

    pub fn validate(&self) -> Result<()> {
        if self.frequencies.iter().any(|f| !f.is_finite() || *f <= 0.0) {
            return Err(Error::InvalidModel("frequencies must be positive and finite".into()));
        }
        if self.frequencies.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::InvalidModel("frequencies must be strictly increasing".into()));
        }
        if self.kind == TransformKind::Hashing && !(1..=30).contains(&self.hash_table_log2_size) {
            return Err(Error::InvalidModel("hash table log2 size must be in 1..=30".into()));
        }
        Ok(())
    }

    /// Number of sub-coordinates each query splits into.
    pub fn components(&self) -> usize {
        if self.kind.is_orthogonal() {
            3
        } else {
            1
        }
    }

    /// Width of one component at one level for `dims`-dimensional input.
    pub fn component_dim(&self, dims: usize) -> usize {
        match self.kind {
            TransformKind::Orthogonal1D => 1,
            TransformKind::Orthogonal2D => 2,
            TransformKind::SinCos => 2 * dims,
            _ => dims,
        }
    }

    /// Total output arity over all components and levels.
    pub fn output_dim(&self, dims: usize) -> usize {
        self.components() * self.levels() * self.component_dim(dims)
    }
}

/// Fractional part with the result in `[0, 1)` for every finite input.
#[inline]
pub fn sawtooth<T: Real>(x: T) -> T {
    let r = x - x.floor();
    if r >= T::one() {
        T::zero()
    } else {
        r
    }
}

#[inline]
pub fn triangular<T: Real>(x: T) -> T {
    T::one() - T::of(2.0) * (sawtooth(x) - T::of(0.5)).abs()
}

#[inline]
pub fn sinusoidal<T: Real>(x: T) -> T {
    ((T::of(std::f64::consts::TAU) * x).sin() + T::one()) * T::of(0.5)
}

#[inline]
pub fn sin_cos_pair<T: Real>(x: T, f: T) -> (T, T) {
    ((x * f).sin(), (x * f).cos())
}

/// Applies a scalar transform. Orthogonal and hashing kinds act as identity
/// here; their structure lives in [`pyramid`] and the hashed factor.
#[inline]
pub fn apply_scalar<T: Real>(kind: TransformKind, x: T) -> T {
    match kind {
        TransformKind::Sawtooth => sawtooth(x),
        TransformKind::Triangular => triangular(x),
        TransformKind::Sinusoidal => sinusoidal(x),
        _ => x,
    }
}

/// Splits a 3-vector into axis or plane sub-coordinates.
///
/// Component `k` of the 1-D split pairs with component `k` of the 2-D split:
/// planes `(xy, xz, yz)` against axes `(z, y, x)`.
pub fn orthogonal_project<T: Real>(x: &[T], kind: TransformKind) -> Result<Vec<Vec<T>>> {
    if x.len() != 3 {
        return Err(Error::InvalidArgument(format!(
            "orthogonal projection needs 3 coordinates, got {}",
            x.len()
        )));
    }
    match kind {
        TransformKind::Orthogonal1D => Ok(vec![vec![x[2]], vec![x[1]], vec![x[0]]]),
        TransformKind::Orthogonal2D => Ok(vec![vec![x[0], x[1]], vec![x[0], x[2]], vec![x[1], x[2]]]),
        _ => Err(Error::InvalidArgument(format!(
            "{} is not an orthogonal transform",
            kind.name()
        ))),
    }
}

/// Axis indices picked by each orthogonal component.
pub fn orthogonal_axes(kind: TransformKind) -> &'static [&'static [usize]] {
    match kind {
        TransformKind::Orthogonal1D => &[&[2], &[1], &[0]],
        TransformKind::Orthogonal2D => &[&[0, 1], &[0, 2], &[1, 2]],
        _ => &[],
    }
}

/// One routed block of transformed coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct Routed<T> {
    pub component: usize,
    pub level: usize,
    pub dim: usize,
    /// `rows x dim`, row-major.
    pub values: Vec<T>,
}

/// Evaluates the transform at every level for a batch of `dims`-wide rows,
/// returning blocks ordered component-major, then by level.
pub fn pyramid<T: Real>(spec: &TransformSpec, xs: &[T], dims: usize) -> Result<Vec<Routed<T>>> {
    if dims == 0 || xs.len() % dims != 0 {
        return Err(Error::Shape("coordinate batch is not a multiple of dims".into()));
    }
    if spec.kind.is_orthogonal() && dims != 3 {
        return Err(Error::InvalidArgument("orthogonal transforms need 3-D input".into()));
    }
    let rows = xs.len() / dims;
    let mut out = Vec::with_capacity(spec.components() * spec.levels());
    let axes: Vec<Vec<usize>> = if spec.kind.is_orthogonal() {
        orthogonal_axes(spec.kind).iter().map(|a| a.to_vec()).collect()
    } else {
        vec![(0..dims).collect()]
    };
    for (component, picked) in axes.iter().enumerate() {
        for level in 0..spec.levels() {
            let f = T::of(spec.frequency(level));
            let dim = spec.component_dim(dims);
            let mut values = Vec::with_capacity(rows * dim);
            for row in xs.chunks(dims) {
                if spec.kind == TransformKind::SinCos {
                    for &a in picked {
                        values.push((row[a] * f).sin());
                    }
                    for &a in picked {
                        values.push((row[a] * f).cos());
                    }
                } else {
                    for &a in picked {
                        values.push(apply_scalar(spec.kind, row[a] * f));
                    }
                }
            }
            out.push(Routed {
                component,
                level,
                dim,
                values,
            });
        }
    }
    Ok(out)
}

/// Corners and multilinear weights on a lattice of `res` nodes per axis,
/// nodes at `i / (res - 1)`, queries clamped to `[0, 1]`.
///
/// Returns per-corner per-axis lattice coordinates (`2^D x D`) and weights.
pub fn lattice_corners<T: Real>(x: &[T], res: usize) -> (Vec<usize>, Vec<T>) {
    let d = x.len();
    let mut base = vec![0usize; d];
    let mut frac = vec![T::zero(); d];
    let top = res.max(2) - 1;
    for a in 0..d {
        let p = x[a].max(T::zero()).min(T::one()) * T::of(top as f64);
        let i = p.floor().to_usize().unwrap_or(0).min(top - 1);
        base[a] = i;
        frac[a] = p - T::of(i as f64);
    }
    let n = 1usize << d;
    let mut coords = Vec::with_capacity(n * d);
    let mut weights = Vec::with_capacity(n);
    for c in 0..n {
        let mut w = T::one();
        for a in 0..d {
            // bit (d - 1 - a) so corner order matches row-major node order
            let hi = (c >> (d - 1 - a)) & 1 == 1;
            coords.push(base[a] + hi as usize);
            w *= if hi { frac[a] } else { T::one() - frac[a] };
        }
        weights.push(w);
    }
    (coords, weights)
}

/// Row-major node index with axis 0 slowest.
#[inline]
pub fn dense_index(coords: &[usize], res: usize) -> usize {
    coords.iter().fold(0, |acc, &c| acc * res + c)
}

#[inline]
pub fn spatial_hash(coords: &[usize], table_size: usize) -> usize {
    let mut h = 0u64;
    for (a, &c) in coords.iter().enumerate() {
        h ^= (c as u64).wrapping_mul(HASH_PRIMES[a % HASH_PRIMES.len()]);
    }
    (h % table_size as u64) as usize
}

/// Table slots and weights for the `2^D` corners around `x`.
///
/// When the whole lattice fits in the table, slots are the dense row-major
/// node indices, so lookups never collide.
pub fn hash_index<T: Real>(x: &[T], level_resolution: usize, table_size: usize) -> (Vec<usize>, Vec<T>) {
    let d = x.len();
    let (coords, weights) = lattice_corners(x, level_resolution);
    let dense = lattice_size(level_resolution, d).is_some_and(|n| n <= table_size);
    let slots = coords
        .chunks(d)
        .map(|c| {
            if dense {
                dense_index(c, level_resolution)
            } else {
                spatial_hash(c, table_size)
            }
        })
        .collect();
    (slots, weights)
}

/// `res^dims`, or `None` on overflow.
pub fn lattice_size(res: usize, dims: usize) -> Option<usize> {
    (0..dims).try_fold(1usize, |acc, _| acc.checked_mul(res))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ContractionMode {
    BoundedLinear,
    UnboundedBall,
}

impl ContractionMode {
    pub fn name(self) -> &'static str {
        match self {
            ContractionMode::BoundedLinear => "bounded",
            ContractionMode::UnboundedBall => "unbounded",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "bounded" => Some(ContractionMode::BoundedLinear),
            "unbounded" => Some(ContractionMode::UnboundedBall),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ContractionSpec {
    pub mode: ContractionMode,
    pub min: Vec<f64>,
    pub max: Vec<f64>,
}

impl ContractionSpec {
    pub fn unit(dims: usize) -> Self {
        Self {
            mode: ContractionMode::BoundedLinear,
            min: vec![0.0; dims],
            max: vec![1.0; dims],
        }
    }

    pub fn bounded(min: Vec<f64>, max: Vec<f64>) -> Self {
        Self {
            mode: ContractionMode::BoundedLinear,
            min,
            max,
        }
    }

    pub fn dims(&self) -> usize {
        self.min.len()
    }

    pub fn validate(&self) -> Result<()> {
        if self.min.len() != self.max.len() || self.min.is_empty() {
            return Err(Error::InvalidModel(
                "bbox min/max must have equal, nonzero length".into(),
            ));
        }
        if self.min.iter().zip(&self.max).any(|(u, v)| !(v > u)) {
            return Err(Error::InvalidModel("bbox max must exceed min on every axis".into()));
        }
        Ok(())
    }

    /// Smallest bbox side length.
    pub fn min_extent(&self) -> f64 {
        self.min
            .iter()
            .zip(&self.max)
            .map(|(u, v)| v - u)
            .fold(f64::INFINITY, f64::min)
    }
}

/// Two-branch ball contraction: identity inside the unit ball, otherwise
/// `(2 - 1/|x|) x/|x|`. Output norm is below 2.
pub fn contract_ball<T: Real>(x: &[T]) -> Vec<T> {
    let n = x.iter().map(|&v| v * v).sum::<T>().sqrt();
    if n <= T::one() {
        x.to_vec()
    } else {
        let s = (T::of(2.0) - T::one() / n) / n;
        x.iter().map(|&v| v * s).collect()
    }
}

/// Maps a raw coordinate into the normalized domain.
///
/// Unbounded mode first normalizes the bbox to `[-1, 1]`, contracts, then
/// rescales the radius-2 result into the radius-0.5 ball around 0.5 so grid
/// lookups stay inside `[0, 1]`.
pub fn contract<T: Real>(spec: &ContractionSpec, x: &[T]) -> Vec<T> {
    let scaled = x
        .iter()
        .zip(spec.min.iter().zip(&spec.max))
        .map(|(&v, (&u, &w))| (v - T::of(u)) / T::of(w - u));
    match spec.mode {
        ContractionMode::BoundedLinear => scaled.collect(),
        ContractionMode::UnboundedBall => {
            let centered: Vec<T> = scaled.map(|s| T::of(2.0) * s - T::one()).collect();
            contract_ball(&centered)
                .into_iter()
                .map(|c| T::of(0.5) + c * T::of(0.25))
                .collect()
        }
    }
}

pub fn contract_batch<T: Real>(spec: &ContractionSpec, xs: &[T]) -> Vec<T> {
    let d = spec.dims();
    let mut out = Vec::with_capacity(xs.len());
    for row in xs.chunks(d) {
        out.extend(contract(spec, row));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn sawtooth_examples() {
        assert_eq!(sawtooth(1.25f64), 0.25);
        assert_eq!(sawtooth(0.0f64), 0.0);
        assert_eq!(sawtooth(-0.25f64), 0.75);
        assert!(sawtooth(-1e-20f64) < 1.0);
    }

    #[test]
    fn triangular_examples() {
        assert_eq!(triangular(0.5f64), 1.0);
        assert_eq!(triangular(0.0f64), 0.0);
        assert_eq!(triangular(1.0f64), 0.0);
        assert_eq!(triangular(0.25f64), 0.5);
    }

    #[test]
    fn sinusoidal_examples() {
        assert!((sinusoidal(0.25f64) - 1.0).abs() < 1e-15);
        assert!((sinusoidal(0.0f64) - 0.5).abs() < 1e-15);
        assert_eq!(sin_cos_pair(0.0f64, 1.0), (0.0, 1.0));
    }

    #[test]
    fn pyramid_examples() {
        let s = TransformSpec::new(TransformKind::Sawtooth, vec![2.0, 4.0]);
        let out = pyramid(&s, &[0.3f64], 1).unwrap();
        assert!((out[0].values[0] - 0.6).abs() < 1e-12);
        assert!((out[1].values[0] - 0.2).abs() < 1e-12);
        assert_eq!((out[1].level, out[1].component), (1, 0));

        let id = TransformSpec::new(TransformKind::Identity, vec![1.5, 3.0]);
        let out = pyramid(&id, &[0.4f64, 0.2], 2).unwrap();
        assert_eq!(out[0].values, vec![0.4 * 1.5, 0.2 * 1.5]);
        assert_eq!(out[1].values, vec![0.4 * 3.0, 0.2 * 3.0]);

        let one = TransformSpec::new(TransformKind::Sawtooth, vec![]);
        assert_eq!(pyramid(&one, &[0.37f64], 1).unwrap()[0].values, vec![0.37]);
    }

    #[test]
    fn orthogonal_examples() {
        let x = [0.1f64, 0.2, 0.3];
        assert_eq!(
            orthogonal_project(&x, TransformKind::Orthogonal1D).unwrap(),
            vec![vec![0.3], vec![0.2], vec![0.1]]
        );
        assert_eq!(
            orthogonal_project(&x, TransformKind::Orthogonal2D).unwrap(),
            vec![vec![0.1, 0.2], vec![0.1, 0.3], vec![0.2, 0.3]]
        );
        assert!(orthogonal_project(&[0.1f64, 0.2], TransformKind::Orthogonal1D).is_err());
        // each vector axis is missing from its paired plane
        for (axis, plane) in orthogonal_axes(TransformKind::Orthogonal1D)
            .iter()
            .zip(orthogonal_axes(TransformKind::Orthogonal2D))
        {
            assert!(!plane.contains(&axis[0]));
        }
    }

    #[test]
    fn orthogonal_relabeling_permutes_components() {
        let x = [0.1f64, 0.2, 0.3];
        let swapped = [0.3f64, 0.2, 0.1];
        let a = orthogonal_project(&x, TransformKind::Orthogonal1D).unwrap();
        let b = orthogonal_project(&swapped, TransformKind::Orthogonal1D).unwrap();
        assert_eq!(a[0], b[2]);
        assert_eq!(a[2], b[0]);
    }

    #[test]
    fn orthogonal_pyramid_matches_projection() {
        let s = TransformSpec::new(TransformKind::Orthogonal2D, vec![]);
        let out = pyramid(&s, &[0.1f64, 0.2, 0.3], 3).unwrap();
        assert_eq!(out.len(), 3);
        assert_eq!(out[1].values, vec![0.1, 0.3]);
        assert_eq!(s.output_dim(3), 6);
    }

    #[test]
    fn output_dims() {
        let saw = TransformSpec::new(TransformKind::Sawtooth, DEFAULT_FREQUENCIES.to_vec());
        assert_eq!(saw.output_dim(2), 12);
        let sc = TransformSpec::new(TransformKind::SinCos, vec![1.0, 2.0]);
        assert_eq!(sc.output_dim(3), 12);
        assert_eq!(TransformSpec::new(TransformKind::Orthogonal1D, vec![]).output_dim(3), 3);
    }

    #[test]
    fn validate_rejects_bad_frequencies() {
        assert!(TransformSpec::new(TransformKind::Sawtooth, vec![2.0, 2.0])
            .validate()
            .is_err());
        assert!(TransformSpec::new(TransformKind::Sawtooth, vec![-1.0])
            .validate()
            .is_err());
        assert!(TransformSpec::new(TransformKind::Sawtooth, vec![1.0, 2.0])
            .validate()
            .is_ok());
    }

    #[test]
    fn hash_examples() {
        let (slots, w) = hash_index(&[0.5f64, 0.5], 2, 1 << 10);
        assert_eq!(slots.len(), 4);
        assert!(w.iter().all(|&v| v == 0.25));

        let (_, w) = hash_index(&[0.25f64, 0.75], 5, 1 << 10);
        assert_eq!(w.iter().filter(|&&v| v == 1.0).count(), 1);
        assert_eq!(w.iter().filter(|&&v| v == 0.0).count(), 3);

        // collisions are possible once the lattice outgrows the table
        let (slots, _) = hash_index(&[0.3f64, 0.6, 0.9], 64, 1 << 8);
        assert!(slots.iter().all(|&s| s < 1 << 8));
    }

    #[test]
    fn contraction_examples() {
        let s = ContractionSpec::bounded(vec![0.0, 0.0], vec![2.0, 4.0]);
        assert_eq!(contract(&s, &[1.0f64, 1.0]), vec![0.5, 0.25]);

        assert_eq!(contract_ball(&[0.3f64, 0.4, 0.0]), vec![0.3, 0.4, 0.0]);
        assert_eq!(contract_ball(&[2.0f64, 0.0, 0.0]), vec![1.5, 0.0, 0.0]);

        let u = ContractionSpec {
            mode: ContractionMode::UnboundedBall,
            min: vec![-1.0; 3],
            max: vec![1.0; 3],
        };
        assert_eq!(contract(&u, &[0.0f64, 0.0, 0.0]), vec![0.5, 0.5, 0.5]);
        let far = contract(&u, &[1e9f64, 0.0, 0.0]);
        assert!(far[0] <= 1.0 && far[0] > 0.99);
    }

    #[test]
    fn contraction_validation() {
        assert!(ContractionSpec::bounded(vec![0.0], vec![0.0]).validate().is_err());
        assert!(ContractionSpec::bounded(vec![0.0], vec![1.0, 2.0]).validate().is_err());
        assert!(ContractionSpec::unit(3).validate().is_ok());
    }

    proptest! {
        #[test]
        fn periodic_and_in_range(x in -1e6f64..1e6) {
            for kind in [TransformKind::Sawtooth, TransformKind::Triangular, TransformKind::Sinusoidal] {
                let a = apply_scalar(kind, x);
                prop_assert!((0.0..=1.0).contains(&a));
                let b = apply_scalar(kind, x + 1.0);
                // x + 1 rounds at magnitude 1e6, so compare at that precision
                prop_assert!((a - b).abs() < 1e-9 || (a - b).abs() > 1.0 - 1e-9, "{kind:?} {x}: {a} vs {b}");
            }
            prop_assert!(sawtooth(x) < 1.0);
        }

        #[test]
        fn pyramid_level_equals_single_level(x in -4.0f64..4.0, k in 0usize..6) {
            let spec = TransformSpec::new(TransformKind::Triangular, DEFAULT_FREQUENCIES.to_vec());
            let out = pyramid(&spec, &[x], 1).unwrap();
            prop_assert_eq!(out[k].values[0], triangular(x * DEFAULT_FREQUENCIES[k]));
        }

        #[test]
        fn hash_weights_partition_unity(x in prop::collection::vec(0.0f64..1.0, 3), res in 2usize..40) {
            let (_, w) = hash_index(&x, res, 1 << 12);
            prop_assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-6);
            prop_assert!(w.iter().all(|&v| v >= 0.0));
        }

        #[test]
        fn ball_contraction_monotone(a in 0.0f64..50.0, b in 0.0f64..50.0) {
            let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
            let dir = [0.6f64, 0.0, 0.8];
            let n = |r: f64| {
                let c = contract_ball(&dir.map(|d| d * r));
                c.iter().map(|v| v * v).sum::<f64>().sqrt()
            };
            prop_assert!(n(lo) <= n(hi) + 1e-12);
            prop_assert!(n(hi) <= 2.0);
        }

        #[test]
        fn unbounded_output_in_half_ball(x in prop::collection::vec(-1e4f64..1e4, 3)) {
            let u = ContractionSpec {
                mode: ContractionMode::UnboundedBall,
                min: vec![-1.0; 3],
                max: vec![1.0; 3],
            };
            let c = contract(&u, &x);
            let r = c.iter().map(|v| (v - 0.5) * (v - 0.5)).sum::<f64>().sqrt();
            prop_assert!(r <= 0.5 + 1e-12);
        }
    }
}
