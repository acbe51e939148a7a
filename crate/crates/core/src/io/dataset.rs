//! Ray datasets.
//!
//! Layout: `"FFRD"`, `u32` version, `u32` view width and height (zero when
//! rays are not grouped into images), six `f64` scene bounds (min then max),
//! `u64` ray count, `u8` target flag, then per ray the `f64` values origin
//! (3), direction (3), near, far and, when the flag is 1, target RGB (3).
//! Grouped rays form consecutive row-major views.

use std::path::Path;

use super::{read_file, write_file, Reader};
use crate::error::{Error, Result};
use crate::tasks::render::RayBatch;

const MAGIC: &[u8; 4] = b"FFRD";
const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct RayDataset {
    pub view_width: usize,
    pub view_height: usize,
    pub bbox: ([f64; 3], [f64; 3]),
    pub rays: RayBatch,
}

impl RayDataset {
    pub fn validate(&self) -> Result<()> {
        self.rays.validate()?;
        let per_view = self.view_width * self.view_height;
        if per_view > 0 && self.rays.len() % per_view != 0 {
            return Err(Error::Shape(format!(
                "{} rays do not split into {}x{} views",
                self.rays.len(),
                self.view_width,
                self.view_height
            )));
        }
        if (0..3).any(|a| !(self.bbox.1[a] > self.bbox.0[a])) {
            return Err(Error::InvalidArgument("scene bounds must have max > min".into()));
        }
        Ok(())
    }

    pub fn views(&self) -> usize {
        let per_view = self.view_width * self.view_height;
        if per_view == 0 {
            0
        } else {
            self.rays.len() / per_view
        }
    }

    /// Rays of view `v`.
    pub fn view(&self, v: usize) -> RayBatch {
        let n = self.view_width * self.view_height;
        let r = &self.rays;
        RayBatch {
            origins: r.origins[3 * v * n..3 * (v + 1) * n].to_vec(),
            dirs: r.dirs[3 * v * n..3 * (v + 1) * n].to_vec(),
            near: r.near[v * n..(v + 1) * n].to_vec(),
            far: r.far[v * n..(v + 1) * n].to_vec(),
            targets: if r.targets.is_empty() {
                Vec::new()
            } else {
                r.targets[3 * v * n..3 * (v + 1) * n].to_vec()
            },
        }
    }
}

pub fn encode_rays(data: &RayDataset) -> Result<Vec<u8>> {
    data.validate()?;
    let rays = &data.rays;
    let n = rays.len();
    let has_targets = !rays.targets.is_empty();
    let width = if has_targets { 11 } else { 8 };
    let mut out = Vec::with_capacity(73 + n * width * 8);
    out.extend_from_slice(MAGIC);
    out.extend(VERSION.to_le_bytes());
    out.extend((data.view_width as u32).to_le_bytes());
    out.extend((data.view_height as u32).to_le_bytes());
    for v in data.bbox.0.iter().chain(&data.bbox.1) {
        out.extend(v.to_le_bytes());
    }
    out.extend((n as u64).to_le_bytes());
    out.push(has_targets as u8);
    for i in 0..n {
        let targets: &[f64] = if has_targets {
            &rays.targets[3 * i..3 * i + 3]
        } else {
            &[]
        };
        let vals = rays.origins[3 * i..3 * i + 3]
            .iter()
            .chain(&rays.dirs[3 * i..3 * i + 3])
            .chain([&rays.near[i], &rays.far[i]])
            .chain(targets);
        for v in vals {
            out.extend(v.to_le_bytes());
        }
    }
    Ok(out)
}

pub fn decode_rays(bytes: &[u8]) -> Result<RayDataset> {
    let mut r = Reader::new("ray dataset", bytes);
    r.magic(MAGIC)?;
    let at = r.pos();
    let version = r.u32("version")?;
    if version != VERSION {
        return Err(r.error(at, format!("unsupported version {version}")));
    }
    let view_width = r.u32("view width")? as usize;
    let view_height = r.u32("view height")? as usize;
    let mut b = [0.0; 6];
    for v in &mut b {
        *v = r.f64("scene bounds")?;
    }
    let count_at = r.pos();
    let count = r.u64("ray count")?;
    let at = r.pos();
    let has_targets = match r.u8("target flag")? {
        0 => false,
        1 => true,
        f => return Err(r.error(at, format!("target flag must be 0 or 1, got {f}"))),
    };
    let record = if has_targets { 11 * 8 } else { 8 * 8 };
    let body = r.remaining();
    if body % record != 0 || (body / record) as u64 != count {
        return Err(r.error(
            count_at,
            format!("header declares {count} rays, payload is {body} bytes"),
        ));
    }
    let n = count as usize;
    let mut rays = RayBatch::with_capacity(n);
    let mut v = [0.0; 11];
    for _ in 0..n {
        for x in &mut v[..record / 8] {
            *x = r.f64("ray")?;
        }
        rays.origins.extend(&v[0..3]);
        rays.dirs.extend(&v[3..6]);
        rays.near.push(v[6]);
        rays.far.push(v[7]);
        if has_targets {
            rays.targets.extend(&v[8..11]);
        }
    }
    r.finish()?;
    let data = RayDataset {
        view_width,
        view_height,
        bbox: ([b[0], b[1], b[2]], [b[3], b[4], b[5]]),
        rays,
    };
    data.validate()?;
    Ok(data)
}

pub fn save_rays(path: impl AsRef<Path>, data: &RayDataset) -> Result<()> {
    write_file(path.as_ref(), &encode_rays(data)?)
}

pub fn load_rays(path: impl AsRef<Path>) -> Result<RayDataset> {
    decode_rays(&read_file(path.as_ref())?)
}
