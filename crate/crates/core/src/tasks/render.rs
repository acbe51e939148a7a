//! Pinhole cameras, ray sampling and alpha compositing against any field
//! that reports density and colour.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::engine::dropout::DropoutMask;
use crate::engine::param::Params;
use crate::engine::tape::{composite_ray, NodeId, Tape};
use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::model::{Model, ProjectionKind};
use crate::real::Real;
use crate::tasks::train::Objective;

/// Pinhole camera. `pose` is world-from-camera with columns
/// `(right, up, back, position)`; the camera looks down its local `-z`.
#[derive(Debug, Clone, PartialEq)]
pub struct Camera {
    pub width: usize,
    pub height: usize,
    pub focal: f64,
    pub pose: [[f64; 4]; 3],
}

fn sub(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

fn cross(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

fn normalize(a: [f64; 3]) -> [f64; 3] {
    let n = (a[0] * a[0] + a[1] * a[1] + a[2] * a[2]).sqrt();
    [a[0] / n, a[1] / n, a[2] / n]
}

impl Camera {
    /// Camera at `eye` looking at `target`, with vertical field of view
    /// `fov_y` in radians.
    pub fn look_at(eye: [f64; 3], target: [f64; 3], up: [f64; 3], width: usize, height: usize, fov_y: f64) -> Self {
        let back = normalize(sub(eye, target));
        let mut right = cross(up, back);
        if right.iter().map(|v| v * v).sum::<f64>() < 1e-12 {
            right = cross([1.0, 0.0, 0.0], back);
        }
        let right = normalize(right);
        let true_up = cross(back, right);
        let mut pose = [[0.0; 4]; 3];
        for r in 0..3 {
            pose[r] = [right[r], true_up[r], back[r], eye[r]];
        }
        Self {
            width,
            height,
            focal: 0.5 * height as f64 / (0.5 * fov_y).tan(),
            pose,
        }
    }

    pub fn position(&self) -> [f64; 3] {
        [self.pose[0][3], self.pose[1][3], self.pose[2][3]]
    }

    /// One ray per pixel centre, row-major; bounds are left at `[0, inf)`.
    pub fn rays(&self) -> RayBatch {
        let n = self.width * self.height;
        let mut rays = RayBatch::with_capacity(n);
        let o = self.position();
        for j in 0..self.height {
            for i in 0..self.width {
                let x = (i as f64 + 0.5 - 0.5 * self.width as f64) / self.focal;
                let y = -(j as f64 + 0.5 - 0.5 * self.height as f64) / self.focal;
                let local = [x, y, -1.0];
                let mut d = [0.0; 3];
                for (r, dr) in d.iter_mut().enumerate() {
                    *dr = self.pose[r][0] * local[0] + self.pose[r][1] * local[1] + self.pose[r][2] * local[2];
                }
                rays.push(o, normalize(d));
            }
        }
        rays
    }
}

/// Rays with optional target colours.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct RayBatch {
    pub origins: Vec<f64>,
    pub dirs: Vec<f64>,
    pub near: Vec<f64>,
    pub far: Vec<f64>,
    /// `n x 3`, or empty when unknown.
    pub targets: Vec<f64>,
}

impl RayBatch {
    pub fn with_capacity(n: usize) -> Self {
        Self {
            origins: Vec::with_capacity(3 * n),
            dirs: Vec::with_capacity(3 * n),
            near: Vec::with_capacity(n),
            far: Vec::with_capacity(n),
            targets: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.near.len()
    }

    pub fn is_empty(&self) -> bool {
        self.near.is_empty()
    }

    pub fn push(&mut self, origin: [f64; 3], dir: [f64; 3]) {
        self.origins.extend_from_slice(&origin);
        self.dirs.extend_from_slice(&dir);
        self.near.push(0.0);
        self.far.push(f64::INFINITY);
    }

    pub fn extend(&mut self, other: &RayBatch) {
        self.origins.extend_from_slice(&other.origins);
        self.dirs.extend_from_slice(&other.dirs);
        self.near.extend_from_slice(&other.near);
        self.far.extend_from_slice(&other.far);
        self.targets.extend_from_slice(&other.targets);
    }

    /// Clips every ray to the box; rays that miss get `near = far`.
    pub fn clip_to_box(&mut self, lo: [f64; 3], hi: [f64; 3]) {
        for r in 0..self.len() {
            let o = [self.origins[3 * r], self.origins[3 * r + 1], self.origins[3 * r + 2]];
            let d = [self.dirs[3 * r], self.dirs[3 * r + 1], self.dirs[3 * r + 2]];
            match ray_aabb(o, d, lo, hi) {
                Some((a, b)) => {
                    self.near[r] = a.max(self.near[r]);
                    self.far[r] = b.min(self.far[r]).max(self.near[r]);
                }
                None => {
                    self.near[r] = 0.0;
                    self.far[r] = 0.0;
                }
            }
        }
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.len();
        if self.origins.len() != 3 * n || self.dirs.len() != 3 * n || self.far.len() != n {
            return Err(Error::Shape("ray batch arrays disagree in length".into()));
        }
        if !self.targets.is_empty() && self.targets.len() != 3 * n {
            return Err(Error::Shape("ray targets must be n x 3".into()));
        }
        for d in self.dirs.chunks(3) {
            let norm = (d[0] * d[0] + d[1] * d[1] + d[2] * d[2]).sqrt();
            if (norm - 1.0).abs() > 1e-6 {
                return Err(Error::InvalidArgument(format!("ray direction has norm {norm}")));
            }
        }
        if self
            .near
            .iter()
            .zip(&self.far)
            .any(|(a, b)| !(a <= b) || !b.is_finite())
        {
            return Err(Error::InvalidArgument(
                "ray bounds must be finite with near <= far".into(),
            ));
        }
        Ok(())
    }
}

/// Slab intersection; `None` when the ray misses or the box is behind it.
pub fn ray_aabb(o: [f64; 3], d: [f64; 3], lo: [f64; 3], hi: [f64; 3]) -> Option<(f64, f64)> {
    let (mut t0, mut t1) = (0.0f64, f64::INFINITY);
    for a in 0..3 {
        let inv = 1.0 / d[a];
        let (mut ta, mut tb) = ((lo[a] - o[a]) * inv, (hi[a] - o[a]) * inv);
        if ta > tb {
            std::mem::swap(&mut ta, &mut tb);
        }
        if ta.is_nan() || tb.is_nan() {
            // parallel to the slab: inside it or not
            if o[a] < lo[a] || o[a] > hi[a] {
                return None;
            }
            continue;
        }
        t0 = t0.max(ta);
        t1 = t1.min(tb);
    }
    (t1 > t0).then_some((t0, t1))
}

/// `n` points spread evenly over a sphere of `radius`.
pub fn fibonacci_sphere(n: usize, radius: f64) -> Vec<[f64; 3]> {
    let golden = std::f64::consts::PI * (3.0 - 5f64.sqrt());
    (0..n)
        .map(|i| {
            let y = 1.0 - 2.0 * (i as f64 + 0.5) / n as f64;
            let r = (1.0 - y * y).sqrt();
            let phi = golden * i as f64;
            [radius * r * phi.cos(), radius * y, radius * r * phi.sin()]
        })
        .collect()
}

/// Sample distances along `[near, far]`: midpoints of `n` equal strata, or a
/// uniform draw inside each stratum when `jitter` is given. Returns the
/// distances and the spacing to the next sample (the last sample extends to
/// `far`).
pub fn stratified<R: Rng + ?Sized>(near: f64, far: f64, n: usize, jitter: Option<&mut R>) -> (Vec<f64>, Vec<f64>) {
    let step = (far - near) / n as f64;
    let ts: Vec<f64> = match jitter {
        Some(rng) => (0..n).map(|i| near + (i as f64 + rng.random::<f64>()) * step).collect(),
        None => (0..n).map(|i| near + (i as f64 + 0.5) * step).collect(),
    };
    let mut deltas: Vec<f64> = ts.windows(2).map(|w| w[1] - w[0]).collect();
    if let Some(&last) = ts.last() {
        deltas.push(far - last);
    }
    (ts, deltas)
}

/// Anything that reports `(sigma, r, g, b)` at points seen from directions.
pub trait RadianceSource {
    fn query(&self, points: &[f64], dirs: &[f64]) -> Result<Vec<f64>>;
}

/// Sum of isotropic Gaussian density blobs with a smooth colour field.
#[derive(Debug, Clone, PartialEq)]
pub struct BlobScene {
    /// `(center, radius, peak density)`.
    pub blobs: Vec<([f64; 3], f64, f64)>,
}

impl BlobScene {
    pub fn random(count: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let blobs = (0..count)
            .map(|_| {
                let c = [0; 3].map(|_| rng.random_range(-0.6..0.6));
                (c, rng.random_range(0.25..0.45), rng.random_range(6.0..14.0))
            })
            .collect();
        Self { blobs }
    }

    pub fn density(&self, p: [f64; 3]) -> f64 {
        self.blobs
            .iter()
            .map(|&(c, r, a)| {
                let d2 = (0..3).map(|k| (p[k] - c[k]).powi(2)).sum::<f64>();
                a * (-d2 / (2.0 * r * r)).exp()
            })
            .sum()
    }

    pub fn color(&self, p: [f64; 3]) -> [f64; 3] {
        [
            0.5 + 0.4 * (1.7 * p[0] + 0.3).sin(),
            0.5 + 0.4 * (1.3 * p[1] - 0.8).sin(),
            0.5 + 0.4 * (1.1 * p[2] + 1.9 * p[0]).cos(),
        ]
    }
}

impl RadianceSource for BlobScene {
    fn query(&self, points: &[f64], _dirs: &[f64]) -> Result<Vec<f64>> {
        let mut out = Vec::with_capacity(points.len() / 3 * 4);
        for p in points.chunks(3) {
            let p = [p[0], p[1], p[2]];
            out.push(self.density(p));
            out.extend_from_slice(&self.color(p));
        }
        Ok(out)
    }
}

/// A trained model viewed as a radiance source.
pub struct FittedField<'a, T> {
    pub model: &'a Model,
    pub params: Params<'a, T>,
    pub exec: Exec,
    pub chunk: usize,
}

impl<T: Real> RadianceSource for FittedField<'_, T> {
    fn query(&self, points: &[f64], dirs: &[f64]) -> Result<Vec<f64>> {
        if self.model.config.projection.kind != ProjectionKind::VolumeRender {
            return Err(Error::InvalidModel("rendering needs a volume projection".into()));
        }
        let xs: Vec<T> = points.iter().map(|&v| T::of(v)).collect();
        let vs: Vec<T> = dirs.iter().map(|&v| T::of(v)).collect();
        let out = self.model.predict(self.params, self.exec, &xs, Some(&vs), self.chunk)?;
        Ok(out.into_iter().map(|v| v.as_f64()).collect())
    }
}

/// Renders `n_samples` stratified samples per ray (midpoints, or jittered
/// when `jitter` is given), composited over `background`.
pub fn render_rays<S: RadianceSource + ?Sized>(
    source: &S,
    rays: &RayBatch,
    n_samples: usize,
    background: [f64; 3],
    mut jitter: Option<&mut ChaCha8Rng>,
) -> Result<Vec<f64>> {
    if n_samples == 0 {
        return Err(Error::InvalidArgument("need at least one sample per ray".into()));
    }
    let n = rays.len();
    let mut out = Vec::with_capacity(n * 3);
    let chunk = (65536 / n_samples).max(1);
    let mut start = 0;
    while start < n {
        let end = (start + chunk).min(n);
        let m = end - start;
        let mut pts = Vec::with_capacity(m * n_samples * 3);
        let mut dirs = Vec::with_capacity(m * n_samples * 3);
        let mut deltas = Vec::with_capacity(m * n_samples);
        for r in start..end {
            let (ts, ds) = stratified(rays.near[r], rays.far[r], n_samples, jitter.as_deref_mut());
            let o = &rays.origins[3 * r..3 * r + 3];
            let d = &rays.dirs[3 * r..3 * r + 3];
            for &t in &ts {
                pts.extend((0..3).map(|k| o[k] + t * d[k]));
                dirs.extend_from_slice(d);
            }
            deltas.extend(ds);
        }
        let q = source.query(&pts, &dirs)?;
        for r in 0..m {
            let s0 = r * n_samples;
            let rgb = composite_ray(
                &q[s0 * 4..(s0 + n_samples) * 4],
                &deltas[s0..s0 + n_samples],
                background,
                None,
            );
            out.extend_from_slice(&rgb);
        }
        start = end;
    }
    Ok(out)
}

/// Posed views with known colours, for inverse rendering.
#[derive(Debug, Clone, PartialEq)]
pub struct RadianceData<T> {
    pub rays: RayBatch,
    pub n_samples: usize,
    marker: std::marker::PhantomData<T>,
}

impl<T: Real> RadianceData<T> {
    pub fn new(rays: RayBatch, n_samples: usize) -> Result<Self> {
        rays.validate()?;
        if rays.targets.len() != 3 * rays.len() {
            return Err(Error::InvalidArgument("training rays need target colours".into()));
        }
        if n_samples == 0 {
            return Err(Error::InvalidArgument("need at least one sample per ray".into()));
        }
        Ok(Self {
            rays,
            n_samples,
            marker: std::marker::PhantomData,
        })
    }
}

impl<T: Real> Objective<T> for RadianceData<T> {
    fn samples(&self) -> usize {
        self.rays.len()
    }

    fn record_loss(
        &self,
        model: &Model,
        params: Params<'_, T>,
        tape: &mut Tape<T>,
        batch: &[usize],
        mask: Option<&DropoutMask>,
        rng: &mut ChaCha8Rng,
    ) -> Result<NodeId> {
        let proj = &model.config.projection;
        if proj.kind != ProjectionKind::VolumeRender {
            return Err(Error::InvalidModel(
                "radiance training needs a volume projection".into(),
            ));
        }
        let ns = self.n_samples;
        let rays = &self.rays;
        let mut pts = Vec::with_capacity(batch.len() * ns * 3);
        let mut dirs = Vec::with_capacity(batch.len() * ns * 3);
        let mut deltas = Vec::with_capacity(batch.len() * ns);
        let mut target = Vec::with_capacity(batch.len() * 3);
        for &r in batch {
            let (ts, ds) = stratified(rays.near[r], rays.far[r], ns, Some(&mut *rng));
            let o = &rays.origins[3 * r..3 * r + 3];
            let d = &rays.dirs[3 * r..3 * r + 3];
            for &t in &ts {
                pts.extend((0..3).map(|k| T::of(o[k] + t * d[k])));
                dirs.extend(d.iter().map(|&v| T::of(v)));
            }
            deltas.extend(ds.into_iter().map(T::of));
            target.extend(rays.targets[3 * r..3 * r + 3].iter().map(|&v| T::of(v)));
        }
        let out = model.forward(params, tape, &pts, Some(&dirs), mask)?;
        let bg = proj.background.map(T::of);
        let rgb = tape.composite(out, deltas, ns, bg)?;
        tape.mse(rgb, target)
    }
}

/// Ground-truth views of `scene` from cameras on a Fibonacci sphere; the
/// first `train` cameras are for training, the rest are held out.
pub fn synthetic_views(
    scene: &dyn RadianceSource,
    cameras: &[Camera],
    bbox: ([f64; 3], [f64; 3]),
    n_samples: usize,
    background: [f64; 3],
) -> Result<Vec<RayBatch>> {
    cameras
        .iter()
        .map(|cam| {
            let mut rays = cam.rays();
            rays.clip_to_box(bbox.0, bbox.1);
            rays.targets = render_rays(scene, &rays, n_samples, background, None)?;
            Ok(rays)
        })
        .collect()
}

pub fn orbit_cameras(count: usize, radius: f64, size: usize, fov_y: f64) -> Vec<Camera> {
    fibonacci_sphere(count, radius)
        .into_iter()
        .map(|eye| Camera::look_at(eye, [0.0; 3], [0.0, 1.0, 0.0], size, size, fov_y))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    struct Constant(f64, [f64; 3]);

    impl RadianceSource for Constant {
        fn query(&self, points: &[f64], _dirs: &[f64]) -> Result<Vec<f64>> {
            Ok(points
                .chunks(3)
                .flat_map(|_| [self.0, self.1[0], self.1[1], self.1[2]])
                .collect())
        }
    }

    fn one_ray() -> RayBatch {
        let mut r = RayBatch::default();
        r.push([0.0, 0.0, -3.0], [0.0, 0.0, 1.0]);
        r.clip_to_box([-1.0; 3], [1.0; 3]);
        r
    }

    #[test]
    fn slab_bounds() {
        let (a, b) = ray_aabb([0.0, 0.0, -3.0], [0.0, 0.0, 1.0], [-1.0; 3], [1.0; 3]).unwrap();
        assert_eq!((a, b), (2.0, 4.0));
        assert!(ray_aabb([0.0, 5.0, -3.0], [0.0, 0.0, 1.0], [-1.0; 3], [1.0; 3]).is_none());
        let (a, b) = ray_aabb([0.0; 3], [1.0, 0.0, 0.0], [-1.0; 3], [1.0; 3]).unwrap();
        assert_eq!((a, b), (0.0, 1.0));
    }

    #[test]
    fn empty_space_renders_background() {
        let c = render_rays(&Constant(0.0, [1.0, 0.0, 0.0]), &one_ray(), 32, [0.2, 0.3, 0.4], None).unwrap();
        assert_eq!(c, vec![0.2, 0.3, 0.4]);
    }

    #[test]
    fn opaque_renders_colour() {
        let c = render_rays(&Constant(1e6, [0.1, 0.7, 0.3]), &one_ray(), 8, [1.0; 3], None).unwrap();
        for (a, b) in c.iter().zip([0.1, 0.7, 0.3]) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn missed_ray_is_background() {
        let mut r = RayBatch::default();
        r.push([0.0, 5.0, -3.0], [0.0, 0.0, 1.0]);
        r.clip_to_box([-1.0; 3], [1.0; 3]);
        let c = render_rays(&Constant(50.0, [0.0; 3]), &r, 4, [1.0; 3], None).unwrap();
        assert_eq!(c, vec![1.0; 3]);
    }

    #[test]
    fn camera_rays_unit_and_centered() {
        let cam = Camera::look_at([0.0, 0.0, 4.0], [0.0; 3], [0.0, 1.0, 0.0], 3, 3, 0.8);
        let rays = cam.rays();
        rays.validate().unwrap_err(); // unbounded far before clipping
        let mid = &rays.dirs[4 * 3..4 * 3 + 3];
        assert!((mid[2] + 1.0).abs() < 1e-12);
        let mut clipped = rays.clone();
        clipped.clip_to_box([-1.5; 3], [1.5; 3]);
        clipped.validate().unwrap();
    }

    #[test]
    fn stratified_spacing() {
        let (ts, ds) = stratified::<ChaCha8Rng>(1.0, 3.0, 4, None);
        assert_eq!(ts, vec![1.25, 1.75, 2.25, 2.75]);
        assert_eq!(ds, vec![0.5, 0.5, 0.5, 0.25]);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let (ts, _) = stratified(0.0, 1.0, 10, Some(&mut rng));
        for (i, t) in ts.iter().enumerate() {
            assert!(*t >= i as f64 / 10.0 && *t < (i + 1) as f64 / 10.0);
        }
    }

    #[test]
    fn fibonacci_points_on_sphere() {
        for p in fibonacci_sphere(50, 4.0) {
            let r = (p[0] * p[0] + p[1] * p[1] + p[2] * p[2]).sqrt();
            assert!((r - 4.0).abs() < 1e-12);
        }
    }
}
