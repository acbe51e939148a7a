//! Signals for direct supervision: images and signed distance samples.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, UnitSphere};

use crate::error::{Error, Result};
use crate::real::Real;

/// Pixel values in `[0, 1]`, row-major with interleaved channels.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageSignal {
    pub width: usize,
    pub height: usize,
    pub channels: usize,
    pub values: Vec<f32>,
}

impl ImageSignal {
    pub fn new(width: usize, height: usize, channels: usize, values: Vec<f32>) -> Result<Self> {
        if !matches!(channels, 1 | 3 | 4) {
            return Err(Error::InvalidArgument(format!(
                "images need 1, 3 or 4 channels, got {channels}"
            )));
        }
        if width * height * channels != values.len() {
            return Err(Error::Shape(format!(
                "{width}x{height}x{channels} image with {} values",
                values.len()
            )));
        }
        let values = values.into_iter().map(|v| v.clamp(0.0, 1.0)).collect();
        Ok(Self {
            width,
            height,
            channels,
            values,
        })
    }

    pub fn pixels(&self) -> usize {
        self.width * self.height
    }

    /// Pixel-centre coordinates `((i + 0.5) / W, (j + 0.5) / H)`, row-major.
    pub fn coords<T: Real>(&self) -> Vec<T> {
        pixel_coords(self.width, self.height)
    }

    pub fn to_direct<T: Real>(&self) -> DirectData<T> {
        DirectData {
            in_dims: 2,
            out_dims: self.channels,
            xs: self.coords(),
            ys: self.values.iter().map(|&v| T::of(v as f64)).collect(),
        }
    }

    /// Keeps only the pixels where `keep` is true.
    pub fn masked_direct<T: Real>(&self, keep: &[bool]) -> DirectData<T> {
        let xs = self.coords::<T>();
        let c = self.channels;
        let mut d = DirectData {
            in_dims: 2,
            out_dims: c,
            xs: Vec::new(),
            ys: Vec::new(),
        };
        for (p, &k) in keep.iter().enumerate() {
            if k {
                d.xs.extend_from_slice(&xs[p * 2..p * 2 + 2]);
                d.ys.extend(self.values[p * c..(p + 1) * c].iter().map(|&v| T::of(v as f64)));
            }
        }
        d
    }
}

pub fn pixel_coords<T: Real>(width: usize, height: usize) -> Vec<T> {
    let mut out = Vec::with_capacity(width * height * 2);
    for j in 0..height {
        for i in 0..width {
            out.push(T::of((i as f64 + 0.5) / width as f64));
            out.push(T::of((j as f64 + 0.5) / height as f64));
        }
    }
    out
}

/// Supervised `(x, s(x))` pairs.
#[derive(Debug, Clone, PartialEq)]
pub struct DirectData<T> {
    pub in_dims: usize,
    pub out_dims: usize,
    pub xs: Vec<T>,
    pub ys: Vec<T>,
}

impl<T: Real> DirectData<T> {
    pub fn len(&self) -> usize {
        self.xs.len() / self.in_dims.max(1)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Smooth random image: a sum of low-frequency cosines per channel,
/// rescaled to `[0.05, 0.95]`.
pub fn synthetic_image(width: usize, height: usize, seed: u64) -> ImageSignal {
    band_limited(width, height, 3, 12, 32, seed)
}

fn band_limited(width: usize, height: usize, channels: usize, max_freq: i32, terms: usize, seed: u64) -> ImageSignal {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut values = vec![0.0f64; width * height * channels];
    for c in 0..channels {
        let waves: Vec<(f64, f64, f64, f64)> = (0..terms)
            .map(|_| {
                let kx = rng.random_range(-max_freq..=max_freq) as f64;
                let ky = rng.random_range(-max_freq..=max_freq) as f64;
                let amp = 1.0 / (1.0 + (kx * kx + ky * ky).sqrt());
                (kx, ky, amp, rng.random_range(0.0..std::f64::consts::TAU))
            })
            .collect();
        fill_channel(&mut values, width, height, channels, c, |x, y| {
            waves
                .iter()
                .map(|&(kx, ky, a, p)| a * (std::f64::consts::TAU * (kx * x + ky * y) + p).cos())
                .sum()
        });
    }
    normalize_channels(&mut values, channels);
    ImageSignal {
        width,
        height,
        channels,
        values: values.into_iter().map(|v| v as f32).collect(),
    }
}

fn fill_channel(values: &mut [f64], w: usize, h: usize, channels: usize, c: usize, f: impl Fn(f64, f64) -> f64) {
    for j in 0..h {
        for i in 0..w {
            let (x, y) = ((i as f64 + 0.5) / w as f64, (j as f64 + 0.5) / h as f64);
            values[(j * w + i) * channels + c] = f(x, y);
        }
    }
}

fn normalize_channels(values: &mut [f64], channels: usize) {
    for c in 0..channels {
        let (lo, hi) = values
            .iter()
            .skip(c)
            .step_by(channels)
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
        let span = (hi - lo).max(1e-12);
        for v in values.iter_mut().skip(c).step_by(channels) {
            *v = 0.05 + 0.9 * (*v - lo) / span;
        }
    }
}

/// A texture made of a smooth per-texture colour field times a periodic
/// pattern that every texture with the same `pattern_seed` shares.
pub fn patterned_texture(size: usize, seed: u64, pattern_seed: u64) -> ImageSignal {
    let mut prng = ChaCha8Rng::seed_from_u64(pattern_seed);
    let tiles = prng.random_range(6..=9) as f64;
    let motif: Vec<(f64, f64, f64)> = (0..4)
        .map(|_| {
            (
                prng.random_range(1..=3) as f64,
                prng.random_range(1..=3) as f64,
                prng.random_range(0.0..std::f64::consts::TAU),
            )
        })
        .collect();
    let pattern = |x: f64, y: f64| {
        let (u, v) = (x * tiles, y * tiles);
        let s: f64 = motif
            .iter()
            .map(|&(a, b, p)| (std::f64::consts::TAU * (a * u + b * v) + p).sin())
            .sum();
        0.5 + 0.5 * (s / motif.len() as f64 * 1.6).tanh()
    };
    let color = band_limited(size, size, 3, 2, 6, seed ^ 0x5eed);
    let mut values = vec![0.0f64; size * size * 3];
    for j in 0..size {
        for i in 0..size {
            let (x, y) = ((i as f64 + 0.5) / size as f64, (j as f64 + 0.5) / size as f64);
            let p = pattern(x, y);
            for c in 0..3 {
                let k = (j * size + i) * 3 + c;
                values[k] = color.values[k] as f64 * (0.25 + 0.75 * p);
            }
        }
    }
    ImageSignal {
        width: size,
        height: size,
        channels: 3,
        values: values.into_iter().map(|v| v.clamp(0.0, 1.0) as f32).collect(),
    }
}

/// A boolean keep-mask hiding random axis-aligned squares until at least
/// `fraction` of the pixels are hidden.
pub fn square_mask(width: usize, height: usize, fraction: f64, seed: u64) -> Vec<bool> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut keep = vec![true; width * height];
    let target = (fraction * (width * height) as f64).round() as usize;
    let side = (width.min(height) / 6).max(1);
    let mut hidden = 0;
    while hidden < target {
        let x0 = rng.random_range(0..=width - side.min(width));
        let y0 = rng.random_range(0..=height - side.min(height));
        for j in y0..(y0 + side).min(height) {
            for i in x0..(x0 + side).min(width) {
                if keep[j * width + i] && hidden < target {
                    keep[j * width + i] = false;
                    hidden += 1;
                }
            }
        }
    }
    keep
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Shape {
    Sphere {
        radius: f64,
    },
    /// Ring in the `xz` plane.
    Torus {
        major: f64,
        minor: f64,
    },
}

impl Shape {
    pub fn name(self) -> &'static str {
        match self {
            Shape::Sphere { .. } => "sphere",
            Shape::Torus { .. } => "torus",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "sphere" => Some(Shape::Sphere { radius: 1.0 }),
            "torus" => Some(Shape::Torus {
                major: 1.0,
                minor: 0.35,
            }),
            _ => None,
        }
    }

    /// Signed distance, negative inside.
    pub fn sdf(self, p: [f64; 3]) -> f64 {
        match self {
            Shape::Sphere { radius } => (p[0] * p[0] + p[1] * p[1] + p[2] * p[2]).sqrt() - radius,
            Shape::Torus { major, minor } => {
                let q = (p[0] * p[0] + p[2] * p[2]).sqrt() - major;
                (q * q + p[1] * p[1]).sqrt() - minor
            }
        }
    }

    fn surface_point<R: Rng + ?Sized>(self, rng: &mut R) -> ([f64; 3], [f64; 3]) {
        match self {
            Shape::Sphere { radius } => {
                let n: [f64; 3] = UnitSphere.sample(rng);
                ([n[0] * radius, n[1] * radius, n[2] * radius], n)
            }
            Shape::Torus { major, minor } => {
                let u = rng.random_range(0.0..std::f64::consts::TAU);
                let v = rng.random_range(0.0..std::f64::consts::TAU);
                let n = [v.cos() * u.cos(), v.sin(), v.cos() * u.sin()];
                let c = [major * u.cos(), 0.0, major * u.sin()];
                ([c[0] + minor * n[0], c[1] + minor * n[1], c[2] + minor * n[2]], n)
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SampleTag {
    NearSurface,
    Uniform,
    /// Read from a file, which does not record the split.
    Unknown,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SdfSampleSet {
    /// `n x 3`.
    pub points: Vec<f32>,
    pub sdf: Vec<f32>,
    pub tags: Vec<SampleTag>,
}

impl SdfSampleSet {
    pub fn len(&self) -> usize {
        self.sdf.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sdf.is_empty()
    }

    pub fn near_fraction(&self) -> f64 {
        if self.is_empty() {
            return 0.0;
        }
        self.tags.iter().filter(|&&t| t == SampleTag::NearSurface).count() as f64 / self.len() as f64
    }

    pub fn to_direct<T: Real>(&self) -> DirectData<T> {
        DirectData {
            in_dims: 3,
            out_dims: 1,
            xs: self.points.iter().map(|&v| T::of(v as f64)).collect(),
            ys: self.sdf.iter().map(|&v| T::of(v as f64)).collect(),
        }
    }
}

/// Bounding box used for the analytic shapes.
pub const SDF_BBOX: ([f64; 3], [f64; 3]) = ([-1.5; 3], [1.5; 3]);

/// Draws `count` points, `near_fraction` of them offset from the surface
/// along the normal by `N(0, (0.01 * diagonal)^2)`, the rest uniform in the
/// box. SDF values are exact at the stored (single-precision) points.
pub fn sample_sdf(
    shape: Shape,
    count: usize,
    near_fraction: f64,
    bbox: ([f64; 3], [f64; 3]),
    seed: u64,
) -> SdfSampleSet {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (lo, hi) = bbox;
    let diag = (0..3).map(|a| (hi[a] - lo[a]).powi(2)).sum::<f64>().sqrt();
    let offset = Normal::new(0.0, 0.01 * diag).expect("positive deviation");
    let near = (count as f64 * near_fraction).round() as usize;
    let mut set = SdfSampleSet {
        points: Vec::with_capacity(count * 3),
        sdf: Vec::with_capacity(count),
        tags: Vec::with_capacity(count),
    };
    for i in 0..count {
        let (p, tag) = if i < near {
            let (s, n) = shape.surface_point(&mut rng);
            let t = offset.sample(&mut rng);
            let p = [s[0] + t * n[0], s[1] + t * n[1], s[2] + t * n[2]];
            (p, SampleTag::NearSurface)
        } else {
            let p = [
                rng.random_range(lo[0]..hi[0]),
                rng.random_range(lo[1]..hi[1]),
                rng.random_range(lo[2]..hi[2]),
            ];
            (p, SampleTag::Uniform)
        };
        let q = [0, 1, 2].map(|a| p[a].clamp(lo[a], hi[a]) as f32);
        set.points.extend_from_slice(&q);
        set.sdf.push(shape.sdf(q.map(|v| v as f64)) as f32);
        set.tags.push(tag);
    }
    set
}
